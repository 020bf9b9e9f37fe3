// SPDX-License-Identifier: Apache-2.0

//! Miter construction and bounded unrolling.
//!
//! Both copies are embedded gate for gate: no hashing or folding happens
//! across them, so even a self-miter is left for the solver to refute.

use std::collections::{BTreeMap, HashMap};

use crate::netlist::{Flop, Gate, GateOp, NetId, Netlist, Port, PortKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MiterError {
    #[error("interface mismatch: {0}")]
    InterfaceMismatch(String),
}

/// Two designs over shared inputs with a single `trigger` output that is 1
/// iff some output bit pair differs.
#[derive(Debug, Clone)]
pub struct Miter {
    /// Inputs are the shared inputs; the only output is `trigger`.
    pub netlist: Netlist,
    pub trigger: NetId,
    pub outputs_a: Vec<Port>,
    pub outputs_b: Vec<Port>,
}

pub const TRIGGER: &str = "trigger";
pub const TRIGGER_ANY: &str = "trigger_any";

#[derive(Default)]
struct Raw {
    num_nets: u32,
    gates: Vec<Gate>,
}

impl Raw {
    fn fresh(&mut self) -> NetId {
        self.num_nets += 1;
        NetId(self.num_nets - 1)
    }

    fn gate(&mut self, op: GateOp, inputs: Vec<NetId>) -> NetId {
        let output = self.fresh();
        self.gates.push(Gate { op, inputs, output });
        output
    }

    fn or_all(&mut self, bits: &[NetId]) -> NetId {
        match bits.split_first() {
            None => self.gate(GateOp::Const0, vec![]),
            Some((&first, rest)) => rest.iter().fold(first, |acc, &b| self.gate(GateOp::Or, vec![acc, b])),
        }
    }

    /// Copies `n`'s gates with inputs and flop outputs already mapped in
    /// `map`; fills in gate outputs.
    fn copy_gates(&mut self, n: &Netlist, map: &mut [Option<NetId>]) {
        for g in &n.gates {
            let inputs = g.inputs.iter().map(|i| map[i.index()].expect("topological order")).collect();
            map[g.output.index()] = Some(self.gate(g.op, inputs));
        }
    }
}

fn port_shape(ports: &[Port], kind: PortKind) -> BTreeMap<&str, usize> {
    ports.iter().filter(|p| p.kind == kind).map(|p| (p.name.as_str(), p.bits.len())).collect()
}

fn compare_shapes(what: &str, a: &BTreeMap<&str, usize>, b: &BTreeMap<&str, usize>) -> Result<(), MiterError> {
    for (name, wa) in a {
        match b.get(name) {
            None => return Err(MiterError::InterfaceMismatch(format!("{what} {name} missing from the candidate"))),
            Some(wb) if wb != wa => {
                return Err(MiterError::InterfaceMismatch(format!("{what} {name} is {wa} bits vs {wb} bits")))
            }
            _ => {}
        }
    }
    if let Some(extra) = b.keys().find(|k| !a.contains_key(*k)) {
        return Err(MiterError::InterfaceMismatch(format!("{what} {extra} missing from the reference")));
    }
    Ok(())
}

pub fn build_miter(a: &Netlist, b: &Netlist) -> Result<Miter, MiterError> {
    compare_shapes("input", &port_shape(&a.inputs, PortKind::Primary), &port_shape(&b.inputs, PortKind::Primary))?;
    let outs_a: BTreeMap<&str, usize> = a.outputs.iter().map(|p| (p.name.as_str(), p.bits.len())).collect();
    let outs_b: BTreeMap<&str, usize> = b.outputs.iter().map(|p| (p.name.as_str(), p.bits.len())).collect();
    compare_shapes("output", &outs_a, &outs_b)?;

    let mut raw = Raw::default();
    let mut inputs: Vec<Port> = Vec::new();
    let mut by_name: HashMap<(String, PortKind, usize), Vec<NetId>> = HashMap::new();
    let mut flops = Vec::new();
    let mut copy = |n: &Netlist, raw: &mut Raw, inputs: &mut Vec<Port>, flops: &mut Vec<Flop>| {
        let mut map = vec![None; n.num_nets as usize];
        for p in &n.inputs {
            let key = (p.name.clone(), p.kind, p.bits.len());
            let bits = by_name
                .entry(key)
                .or_insert_with(|| {
                    let bits: Vec<NetId> = p.bits.iter().map(|_| raw.fresh()).collect();
                    // same-named undriven nets of different widths stay distinct
                    let name = match inputs.iter().any(|q| q.name == p.name) {
                        true => format!("{}#{}", p.name, inputs.len()),
                        false => p.name.clone(),
                    };
                    inputs.push(Port { name, bits: bits.clone(), kind: p.kind });
                    bits
                })
                .clone();
            for (src, dst) in p.bits.iter().zip(bits) {
                map[src.index()] = Some(dst);
            }
        }
        let qs: Vec<NetId> = n.flops.iter().map(|f| {
            let q = raw.fresh();
            map[f.q.index()] = Some(q);
            q
        }).collect();
        raw.copy_gates(n, &mut map);
        for (f, q) in n.flops.iter().zip(qs) {
            flops.push(Flop { d: map[f.d.index()].expect("flop inputs are driven"), q, clock: f.clock.clone(), init: f.init });
        }
        let outputs: Vec<Port> = n
            .outputs
            .iter()
            .map(|p| Port { name: p.name.clone(), bits: p.bits.iter().map(|b| map[b.index()].expect("outputs are driven")).collect(), kind: p.kind })
            .collect();
        outputs
    };
    let outputs_a = copy(a, &mut raw, &mut inputs, &mut flops);
    let outputs_b = copy(b, &mut raw, &mut inputs, &mut flops);
    let mut diffs = Vec::new();
    for pa in &outputs_a {
        let pb = outputs_b.iter().find(|p| p.name == pa.name).expect("interfaces compared");
        for (&x, &y) in pa.bits.iter().zip(&pb.bits) {
            diffs.push(raw.gate(GateOp::Xor, vec![x, y]));
        }
    }
    let trigger = raw.or_all(&diffs);
    let netlist = Netlist {
        num_nets: raw.num_nets,
        inputs,
        outputs: vec![Port { name: TRIGGER.into(), bits: vec![trigger], kind: PortKind::Primary }],
        gates: raw.gates,
        flops,
    };
    Ok(Miter { netlist, trigger, outputs_a, outputs_b })
}

/// Name of the unrolled copy of input `name` at 1-based step `t`.
pub fn step_input_name(name: &str, t: usize) -> String {
    format!("{name}@{t}")
}

/// Splits an unrolled input name into the original name and its step.
pub fn parse_step_input_name(name: &str) -> Option<(&str, usize)> {
    let (base, t) = name.rsplit_once('@')?;
    Some((base, t.parse().ok()?))
}

/// Replaces flops by `k` time frames: frame 1 starts from the flop init
/// values and frame t+1 reads the next-state nets of frame t. The single
/// output `trigger_any` is the OR of the frame triggers. A flop-free miter
/// unrolls to one frame whatever `k` is.
pub fn unroll(m: &Miter, k: usize) -> Netlist {
    assert!(k >= 1, "unroll depth must be at least 1");
    let n = &m.netlist;
    let k = if n.flops.is_empty() { 1 } else { k };
    let mut raw = Raw::default();
    let mut inputs = Vec::new();
    let mut state: Vec<NetId> = Vec::new();
    if !n.flops.is_empty() {
        let zero = raw.gate(GateOp::Const0, vec![]);
        let one = raw.gate(GateOp::Const1, vec![]);
        state = n.flops.iter().map(|f| if f.init { one } else { zero }).collect();
    }
    let mut triggers = Vec::with_capacity(k);
    for t in 1..=k {
        let mut map = vec![None; n.num_nets as usize];
        for p in &n.inputs {
            let bits: Vec<NetId> = p.bits.iter().map(|_| raw.fresh()).collect();
            for (src, &dst) in p.bits.iter().zip(&bits) {
                map[src.index()] = Some(dst);
            }
            inputs.push(Port { name: step_input_name(&p.name, t), bits, kind: p.kind });
        }
        for (f, &s) in n.flops.iter().zip(&state) {
            map[f.q.index()] = Some(s);
        }
        raw.copy_gates(n, &mut map);
        triggers.push(map[m.trigger.index()].expect("trigger is driven"));
        state = n.flops.iter().map(|f| map[f.d.index()].expect("flop inputs are driven")).collect();
    }
    let any = raw.or_all(&triggers);
    Netlist {
        num_nets: raw.num_nets,
        inputs,
        outputs: vec![Port { name: TRIGGER_ANY.into(), bits: vec![any], kind: PortKind::Primary }],
        gates: raw.gates,
        flops: vec![],
    }
}
