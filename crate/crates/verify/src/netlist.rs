// SPDX-License-Identifier: Apache-2.0

//! Bit-level gate netlists and a hashing, constant-folding builder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetId(pub u32);

impl NetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GateOp {
    Const0,
    Const1,
    Not,
    And,
    Or,
    Xor,
    /// `inputs = [sel, when0, when1]`
    Mux,
}

impl GateOp {
    pub fn arity(self) -> usize {
        match self {
            GateOp::Const0 | GateOp::Const1 => 0,
            GateOp::Not => 1,
            GateOp::And | GateOp::Or | GateOp::Xor => 2,
            GateOp::Mux => 3,
        }
    }

    pub fn eval(self, v: &[bool]) -> bool {
        match self {
            GateOp::Const0 => false,
            GateOp::Const1 => true,
            GateOp::Not => !v[0],
            GateOp::And => v[0] && v[1],
            GateOp::Or => v[0] || v[1],
            GateOp::Xor => v[0] ^ v[1],
            GateOp::Mux => {
                if v[0] {
                    v[2]
                } else {
                    v[1]
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub op: GateOp,
    pub inputs: Vec<NetId>,
    pub output: NetId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PortKind {
    /// A declared port of the top module.
    #[default]
    Primary,
    /// A net that nothing drives; modelled as an unconstrained input.
    Undriven,
}

/// A named bit vector, least significant bit first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub bits: Vec<NetId>,
    #[serde(default)]
    pub kind: PortKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flop {
    pub d: NetId,
    pub q: NetId,
    pub clock: String,
    pub init: bool,
}

/// Gates are stored in topological order: every gate input is an input
/// bit, a flop output or the output of an earlier gate.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Netlist {
    pub num_nets: u32,
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub gates: Vec<Gate>,
    pub flops: Vec<Flop>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NetlistError {
    #[error("net {0} has more than one driver")]
    MultipleDrivers(u32),
    #[error("net {0} is read but never driven")]
    Undriven(u32),
    #[error("gate {0} reads a net defined later (combinational cycle or bad order)")]
    OutOfOrder(usize),
    #[error("gate {0} has the wrong number of inputs")]
    Arity(usize),
    #[error("net {0} is out of range")]
    OutOfRange(u32),
}

impl Netlist {
    pub fn input(&self, name: &str) -> Option<&Port> {
        self.inputs.iter().find(|p| p.name == name)
    }

    pub fn output(&self, name: &str) -> Option<&Port> {
        self.outputs.iter().find(|p| p.name == name)
    }

    pub fn input_bits(&self) -> usize {
        self.inputs.iter().map(|p| p.bits.len()).sum()
    }

    pub fn is_combinational(&self) -> bool {
        self.flops.is_empty()
    }

    /// Checks single drivers, gate ordering and that outputs are driven.
    pub fn validate(&self) -> Result<(), NetlistError> {
        let n = self.num_nets as usize;
        let mut driven = vec![false; n];
        let drive = |id: NetId, driven: &mut Vec<bool>| -> Result<(), NetlistError> {
            let slot = driven.get_mut(id.index()).ok_or(NetlistError::OutOfRange(id.0))?;
            if *slot {
                return Err(NetlistError::MultipleDrivers(id.0));
            }
            *slot = true;
            Ok(())
        };
        for p in &self.inputs {
            for &b in &p.bits {
                drive(b, &mut driven)?;
            }
        }
        for f in &self.flops {
            drive(f.q, &mut driven)?;
        }
        for (i, g) in self.gates.iter().enumerate() {
            if g.inputs.len() != g.op.arity() {
                return Err(NetlistError::Arity(i));
            }
            for &x in &g.inputs {
                if !*driven.get(x.index()).ok_or(NetlistError::OutOfRange(x.0))? {
                    return Err(NetlistError::OutOfOrder(i));
                }
            }
            drive(g.output, &mut driven)?;
        }
        for f in &self.flops {
            if !*driven.get(f.d.index()).ok_or(NetlistError::OutOfRange(f.d.0))? {
                return Err(NetlistError::Undriven(f.d.0));
            }
        }
        for p in &self.outputs {
            for &b in &p.bits {
                if !*driven.get(b.index()).ok_or(NetlistError::OutOfRange(b.0))? {
                    return Err(NetlistError::Undriven(b.0));
                }
            }
        }
        Ok(())
    }

    /// Drops gates and flops that cannot reach an output. Inputs stay.
    pub fn sweep(&mut self) {
        let mut live = vec![false; self.num_nets as usize];
        for b in self.outputs.iter().flat_map(|p| &p.bits) {
            live[b.index()] = true;
        }
        let mut live_flops = vec![false; self.flops.len()];
        loop {
            for g in self.gates.iter().rev() {
                if live[g.output.index()] {
                    for x in &g.inputs {
                        live[x.index()] = true;
                    }
                }
            }
            let mut grew = false;
            for (i, f) in self.flops.iter().enumerate() {
                if live[f.q.index()] && !live_flops[i] {
                    live_flops[i] = true;
                    if !live[f.d.index()] {
                        live[f.d.index()] = true;
                        grew = true;
                    }
                }
            }
            if !grew {
                break;
            }
        }
        self.gates.retain(|g| live[g.output.index()]);
        let mut i = 0;
        self.flops.retain(|_| {
            i += 1;
            live_flops[i - 1]
        });
    }

    /// Evaluates all nets given input values (per port, LSB first) and
    /// current flop state (per flop).
    pub fn eval(&self, inputs: &[Vec<bool>], state: &[bool]) -> Vec<bool> {
        let mut v = vec![false; self.num_nets as usize];
        for (p, vals) in self.inputs.iter().zip(inputs) {
            for (b, &x) in p.bits.iter().zip(vals) {
                v[b.index()] = x;
            }
        }
        for (f, &s) in self.flops.iter().zip(state) {
            v[f.q.index()] = s;
        }
        let mut buf = [false; 3];
        for g in &self.gates {
            for (slot, x) in buf.iter_mut().zip(&g.inputs) {
                *slot = v[x.index()];
            }
            v[g.output.index()] = g.op.eval(&buf[..g.inputs.len()]);
        }
        v
    }

    pub fn initial_state(&self) -> Vec<bool> {
        self.flops.iter().map(|f| f.init).collect()
    }

    /// Runs the design from its initial state; one output sample per step,
    /// taken before the clock edge that ends the step.
    pub fn simulate(&self, steps: &[Vec<Vec<bool>>]) -> Vec<Vec<Vec<bool>>> {
        let mut state = self.initial_state();
        let mut out = Vec::with_capacity(steps.len());
        for inputs in steps {
            let v = self.eval(inputs, &state);
            out.push(self.outputs.iter().map(|p| p.bits.iter().map(|b| v[b.index()]).collect()).collect());
            state = self.flops.iter().map(|f| v[f.d.index()]).collect();
        }
        out
    }
}

/// Incremental netlist construction with structural hashing and local
/// constant folding. Gates are only created once their inputs exist, so
/// the gate list stays in topological order.
#[derive(Debug, Default, Clone)]
pub struct Builder {
    num_nets: u32,
    gates: Vec<Gate>,
    /// Gate index driving each gate-output net.
    driver: HashMap<NetId, usize>,
    strash: HashMap<(GateOp, [NetId; 3]), NetId>,
    consts: [Option<NetId>; 2],
    pub inputs: Vec<Port>,
    pub outputs: Vec<Port>,
    pub flops: Vec<Flop>,
}

impl Builder {
    pub fn new() -> Self {
        Builder::default()
    }

    /// A net with no driver yet; callers attach it to an input or flop.
    pub fn fresh(&mut self) -> NetId {
        let id = NetId(self.num_nets);
        self.num_nets += 1;
        id
    }

    pub fn add_input(&mut self, name: &str, width: usize, kind: PortKind) -> Vec<NetId> {
        let bits: Vec<NetId> = (0..width).map(|_| self.fresh()).collect();
        self.inputs.push(Port { name: name.to_string(), bits: bits.clone(), kind });
        bits
    }

    pub fn num_nets(&self) -> u32 {
        self.num_nets
    }

    pub fn constant(&mut self, value: bool) -> NetId {
        if let Some(id) = self.consts[usize::from(value)] {
            return id;
        }
        let op = if value { GateOp::Const1 } else { GateOp::Const0 };
        let id = self.push(op, vec![]);
        self.consts[usize::from(value)] = Some(id);
        id
    }

    pub fn const_value(&self, id: NetId) -> Option<bool> {
        if Some(id) == self.consts[0] {
            Some(false)
        } else if Some(id) == self.consts[1] {
            Some(true)
        } else {
            None
        }
    }

    fn push(&mut self, op: GateOp, inputs: Vec<NetId>) -> NetId {
        let output = self.fresh();
        self.driver.insert(output, self.gates.len());
        self.gates.push(Gate { op, inputs, output });
        output
    }

    fn hashed(&mut self, op: GateOp, inputs: [NetId; 3]) -> NetId {
        if let Some(&id) = self.strash.get(&(op, inputs)) {
            return id;
        }
        let id = self.push(op, inputs[..op.arity()].to_vec());
        self.strash.insert((op, inputs), id);
        id
    }

    fn not_of(&self, id: NetId) -> Option<NetId> {
        let g = &self.gates[*self.driver.get(&id)?];
        (g.op == GateOp::Not).then(|| g.inputs[0])
    }

    pub fn not(&mut self, a: NetId) -> NetId {
        if let Some(c) = self.const_value(a) {
            return self.constant(!c);
        }
        if let Some(inner) = self.not_of(a) {
            return inner;
        }
        self.hashed(GateOp::Not, [a, a, a])
    }

    fn complementary(&self, a: NetId, b: NetId) -> bool {
        self.not_of(a) == Some(b) || self.not_of(b) == Some(a)
    }

    pub fn and(&mut self, a: NetId, b: NetId) -> NetId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(false), _) | (_, Some(false)) => return self.constant(false),
            (Some(true), _) => return b,
            (_, Some(true)) => return a,
            _ => {}
        }
        if a == b {
            return a;
        }
        if self.complementary(a, b) {
            return self.constant(false);
        }
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        self.hashed(GateOp::And, [x, y, y])
    }

    pub fn or(&mut self, a: NetId, b: NetId) -> NetId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(true), _) | (_, Some(true)) => return self.constant(true),
            (Some(false), _) => return b,
            (_, Some(false)) => return a,
            _ => {}
        }
        if a == b {
            return a;
        }
        if self.complementary(a, b) {
            return self.constant(true);
        }
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        self.hashed(GateOp::Or, [x, y, y])
    }

    pub fn xor(&mut self, a: NetId, b: NetId) -> NetId {
        match (self.const_value(a), self.const_value(b)) {
            (Some(x), Some(y)) => return self.constant(x ^ y),
            (Some(false), _) => return b,
            (_, Some(false)) => return a,
            (Some(true), _) => return self.not(b),
            (_, Some(true)) => return self.not(a),
            _ => {}
        }
        if a == b {
            return self.constant(false);
        }
        if self.complementary(a, b) {
            return self.constant(true);
        }
        let (x, y) = if a < b { (a, b) } else { (b, a) };
        self.hashed(GateOp::Xor, [x, y, y])
    }

    pub fn xnor(&mut self, a: NetId, b: NetId) -> NetId {
        let x = self.xor(a, b);
        self.not(x)
    }

    /// `sel ? when1 : when0`
    pub fn mux(&mut self, sel: NetId, when0: NetId, when1: NetId) -> NetId {
        if let Some(s) = self.const_value(sel) {
            return if s { when1 } else { when0 };
        }
        if when0 == when1 {
            return when0;
        }
        match (self.const_value(when0), self.const_value(when1)) {
            (Some(false), Some(true)) => return sel,
            (Some(true), Some(false)) => return self.not(sel),
            (Some(false), _) => return self.and(sel, when1),
            (_, Some(true)) => return self.or(sel, when0),
            _ => {}
        }
        self.hashed(GateOp::Mux, [sel, when0, when1])
    }

    pub fn and_all(&mut self, bits: &[NetId]) -> NetId {
        let mut acc = self.constant(true);
        for &b in bits {
            acc = self.and(acc, b);
        }
        acc
    }

    pub fn or_all(&mut self, bits: &[NetId]) -> NetId {
        let mut acc = self.constant(false);
        for &b in bits {
            acc = self.or(acc, b);
        }
        acc
    }

    pub fn xor_all(&mut self, bits: &[NetId]) -> NetId {
        let mut acc = self.constant(false);
        for &b in bits {
            acc = self.xor(acc, b);
        }
        acc
    }

    pub fn finish(self) -> Netlist {
        Netlist { num_nets: self.num_nets, inputs: self.inputs, outputs: self.outputs, gates: self.gates, flops: self.flops }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folding_and_hashing() {
        let mut b = Builder::new();
        let x = b.add_input("x", 2, PortKind::Primary);
        let one = b.constant(true);
        assert_eq!(b.and(x[0], one), x[0]);
        let a1 = b.and(x[0], x[1]);
        let a2 = b.and(x[1], x[0]);
        assert_eq!(a1, a2);
        let n = b.not(x[0]);
        assert_eq!(b.not(n), x[0]);
        let contradiction = b.and(x[0], n);
        assert_eq!(b.const_value(contradiction), Some(false));
        let z = b.xor(x[1], x[1]);
        assert_eq!(b.const_value(z), Some(false));
        assert_eq!(b.mux(one, x[0], x[1]), x[1]);
        b.outputs.push(Port { name: "y".into(), bits: vec![a1], kind: PortKind::Primary });
        let nl = b.finish();
        nl.validate().unwrap();
        assert_eq!(nl.gates.iter().filter(|g| g.op == GateOp::And).count(), 1);
    }

    #[test]
    fn validation_errors() {
        let nl = Netlist {
            num_nets: 2,
            inputs: vec![Port { name: "a".into(), bits: vec![NetId(0)], kind: PortKind::Primary }],
            outputs: vec![Port { name: "y".into(), bits: vec![NetId(1)], kind: PortKind::Primary }],
            gates: vec![],
            flops: vec![],
        };
        assert_eq!(nl.validate(), Err(NetlistError::Undriven(1)));
        let mut twice = nl.clone();
        twice.gates = vec![
            Gate { op: GateOp::Not, inputs: vec![NetId(0)], output: NetId(1) },
            Gate { op: GateOp::Not, inputs: vec![NetId(0)], output: NetId(1) },
        ];
        assert_eq!(twice.validate(), Err(NetlistError::MultipleDrivers(1)));
        let mut cyc = nl;
        cyc.gates = vec![Gate { op: GateOp::Not, inputs: vec![NetId(1)], output: NetId(1) }];
        assert_eq!(cyc.validate(), Err(NetlistError::OutOfOrder(0)));
    }

    #[test]
    fn simulation_of_a_toggle_flop() {
        let mut b = Builder::new();
        b.add_input("clk", 1, PortKind::Primary);
        let q = b.fresh();
        let d = b.not(q);
        b.flops.push(Flop { d, q, clock: "clk".into(), init: false });
        b.outputs.push(Port { name: "q".into(), bits: vec![q], kind: PortKind::Primary });
        let nl = b.finish();
        nl.validate().unwrap();
        let out = nl.simulate(&vec![vec![vec![false]]; 4]);
        let seq: Vec<bool> = out.iter().map(|o| o[0][0]).collect();
        assert_eq!(seq, [false, true, false, true]);
    }
}
