// SPDX-License-Identifier: Apache-2.0

//! Elaboration of the MiniHDL subset into a bit-level netlist.
//!
//! Semantics are two-valued and unsigned with Verilog's expression sizing
//! rules. Signals are evaluated on demand starting from the top module's
//! outputs: each signal bit has at most one driver (a continuous
//! assignment, an always block, an instance output or an input port), and
//! that driver is evaluated the first time the bit is read. Bits with no
//! driver become unconstrained inputs of kind [`PortKind::Undriven`].
//! Instances are inlined. Edge-triggered blocks become flops on a single
//! clock that must come from a top-level input.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rulemask_core::grammar::ParseTree;
use rulemask_core::Span;

use crate::ast::{
    self, AlwaysKind, BinaryOp, Direction, Edge, Expr, Item, LValue, ModuleDecl, Select, Stmt, UnaryOp, Unsupported,
    VarKind,
};
use crate::netlist::{Builder, Flop, NetId, Netlist, Port, PortKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ElabError {
    #[error("module {0:?} not found")]
    UnknownModule(String),
    #[error(transparent)]
    Unsupported(#[from] Unsupported),
    #[error("{signal} has more than one driver (at {span})")]
    MultipleDrivers { signal: String, span: Span },
    #[error("combinational loop through {signal}")]
    CombinationalLoop { signal: String },
    #[error("width mismatch: {what} (at {span})")]
    WidthMismatch { what: String, span: Span },
    #[error("undeclared identifier {name:?} (at {span})")]
    Undeclared { name: String, span: Span },
    #[error("{what} is not a constant (at {span})")]
    NotConstant { what: String, span: Span },
}

type EResult<T> = Result<T, ElabError>;
type Bits = Vec<NetId>;

const MAX_INSTANCE_DEPTH: usize = 64;
const MAX_DYNAMIC_SELECT: i64 = 1 << 12;

fn unsupported(what: impl Into<String>, span: Span) -> ElabError {
    ElabError::Unsupported(Unsupported { what: what.into(), span })
}

/// Elaborates `top` from a parsed compilation unit. `params` overrides top
/// parameters by name.
pub fn elaborate(tree: &ParseTree, top: &str, params: &BTreeMap<String, u64>) -> EResult<Netlist> {
    let design = ast::lower(tree)?;
    elaborate_design(&design, top, params)
}

pub fn elaborate_design(design: &ast::Design, top: &str, params: &BTreeMap<String, u64>) -> EResult<Netlist> {
    let module = design.modules.get(top).ok_or_else(|| ElabError::UnknownModule(top.to_string()))?;
    let mut el = Elaborator {
        design,
        b: Builder::new(),
        scopes: Vec::new(),
        packages: HashMap::new(),
        undriven: HashMap::new(),
        pending: VecDeque::new(),
        in_progress: HashSet::new(),
        clock: None,
    };
    let overrides: Vec<(Option<String>, ParamValue)> = params
        .iter()
        .map(|(k, v)| (Some(k.clone()), ParamValue::Value(Expr::number(*v, 64))))
        .collect();
    for (name, _) in &overrides {
        let name = name.as_deref().unwrap_or_default();
        if !module.params.iter().any(|p| p.name == name && !p.local) {
            return Err(ElabError::Undeclared { name: name.to_string(), span: module.span });
        }
    }
    let top_scope = el.new_scope(module, String::new(), None, overrides, 0)?;
    // inputs are allocated first, in declaration order
    for port in &module.ports {
        if port.dir == Direction::Input {
            let width = el.scopes[top_scope].signals[&port.name].width;
            let bits = el.b.add_input(&port.name, width, PortKind::Primary);
            el.scopes[top_scope].values.insert(port.name.clone(), bits.into_iter().map(Some).collect());
        }
    }
    let mut outputs = Vec::new();
    for port in &module.ports {
        if port.dir == Direction::Output {
            let bits = el.signal(top_scope, &port.name, port.span)?;
            outputs.push(Port { name: port.name.clone(), bits, kind: PortKind::Primary });
        }
    }
    while let Some(job) = el.pending.pop_front() {
        el.finish_sequential(job)?;
    }
    let mut b = el.b;
    b.outputs = outputs;
    let mut netlist = b.finish();
    netlist.sweep();
    debug_assert_eq!(netlist.validate(), Ok(()));
    Ok(netlist)
}

#[derive(Debug, Clone)]
struct SigInfo {
    width: usize,
    msb: i64,
    lsb: i64,
    dir: Option<Direction>,
    init: Option<Expr>,
    span: Span,
}

impl SigInfo {
    /// Bit position of declared index `i`, if in range.
    fn pos(&self, i: i64) -> Option<usize> {
        let p = if self.msb >= self.lsb { i - self.lsb } else { self.lsb - i };
        (0..self.width as i64).contains(&p).then_some(p as usize)
    }

    fn ascending(&self) -> bool {
        self.msb < self.lsb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Driver {
    TopInput,
    ParentPort,
    Item(usize),
    /// Output connection `port` of instance item `item`.
    InstanceOutput { item: usize, port: usize },
}

enum ParamValue {
    /// Evaluated in the parent scope.
    Parent(Expr, usize),
    Value(Expr),
}

struct Scope<'d> {
    module: &'d ModuleDecl,
    path: String,
    parent: Option<(usize, usize)>,
    depth: usize,
    params: HashMap<String, Bits>,
    signals: HashMap<String, SigInfo>,
    drivers: HashMap<String, Vec<Option<Driver>>>,
    values: HashMap<String, Vec<Option<NetId>>>,
    children: HashMap<usize, usize>,
    /// Synthetic continuous assignments from net declarations.
    net_inits: Vec<Item>,
}

struct SeqJob {
    scope: usize,
    item: usize,
    q: HashMap<String, Vec<Option<NetId>>>,
}

#[derive(Clone, Copy)]
enum Ctx<'a> {
    Module(usize),
    Package(&'a str),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum BitVal {
    Unassigned,
    Net(NetId),
    /// Assigned on some paths only.
    Partial,
}

#[derive(Clone)]
struct ProcEnv {
    seq: bool,
    /// Bits this block drives; other bits of the same signal are read globally.
    owned: HashMap<String, Vec<bool>>,
    cur: HashMap<String, Vec<BitVal>>,
    /// Non-blocking targets of an edge-triggered block.
    next: HashMap<String, Vec<BitVal>>,
}

enum PkgState {
    /// Parameters evaluated so far, in declaration order.
    Evaluating(HashMap<String, Bits>),
    Done(HashMap<String, Bits>),
}

struct Elaborator<'d> {
    design: &'d ast::Design,
    b: Builder,
    scopes: Vec<Scope<'d>>,
    packages: HashMap<String, PkgState>,
    undriven: HashMap<String, Bits>,
    pending: VecDeque<SeqJob>,
    in_progress: HashSet<(usize, usize)>,
    clock: Option<(String, Edge)>,
}

impl<'d> Elaborator<'d> {
    fn item<'s>(&'s self, scope: usize, idx: usize) -> &'s Item
    where
        'd: 's,
    {
        let s = &self.scopes[scope];
        let n = s.module.items.len();
        if idx < n {
            &s.module.items[idx]
        } else {
            &s.net_inits[idx - n]
        }
    }

    // ---- scope construction ------------------------------------------------

    fn new_scope(
        &mut self,
        module: &'d ModuleDecl,
        path: String,
        parent: Option<(usize, usize)>,
        overrides: Vec<(Option<String>, ParamValue)>,
        depth: usize,
    ) -> EResult<usize> {
        if depth > MAX_INSTANCE_DEPTH {
            return Err(unsupported("instantiation nested too deeply (recursive hierarchy)", module.span));
        }
        let id = self.scopes.len();
        self.scopes.push(Scope {
            module,
            path,
            parent,
            depth,
            params: HashMap::new(),
            signals: HashMap::new(),
            drivers: HashMap::new(),
            values: HashMap::new(),
            children: HashMap::new(),
            net_inits: Vec::new(),
        });
        let overridable: Vec<&ast::ParamDecl> = module.params.iter().filter(|p| !p.local).collect();
        let mut by_name: HashMap<String, ParamValue> = HashMap::new();
        for (i, (name, value)) in overrides.into_iter().enumerate() {
            let name = match name {
                Some(n) => n,
                None => match overridable.get(i) {
                    Some(p) => p.name.clone(),
                    None => return Err(unsupported("too many positional parameter overrides", module.span)),
                },
            };
            if !overridable.iter().any(|p| p.name == name) {
                return Err(ElabError::Undeclared { name, span: module.span });
            }
            by_name.insert(name, value);
        }
        for p in &module.params {
            let width = match &p.range {
                Some(r) => Some(self.range_width(Ctx::Module(id), r, p.span)?.0),
                None => None,
            };
            let bits = match by_name.remove(&p.name).filter(|_| !p.local) {
                Some(ParamValue::Parent(e, parent_scope)) => {
                    let w = match width {
                        Some(w) => w,
                        None => self.self_width(Ctx::Module(parent_scope), &e)?,
                    };
                    self.eval(Ctx::Module(parent_scope), None, &e, w)?
                }
                Some(ParamValue::Value(e)) => {
                    let w = width.unwrap_or(64);
                    self.eval(Ctx::Module(id), None, &e, w)?
                }
                None => {
                    let w = match width {
                        Some(w) => w,
                        None => self.self_width(Ctx::Module(id), &p.value)?,
                    };
                    self.eval(Ctx::Module(id), None, &p.value, w)?
                }
            };
            self.require_const(&bits, &format!("parameter {}", p.name), p.span)?;
            self.scopes[id].params.insert(p.name.clone(), bits);
        }
        for port in &module.ports {
            let info = self.sig_info(id, port.range.as_ref(), Some(port.dir), None, port.span)?;
            self.declare(id, &port.name, info)?;
        }
        for sig in &module.signals {
            let init = if sig.kind == VarKind::Variable { sig.init.clone() } else { None };
            let info = self.sig_info(id, sig.range.as_ref(), None, init, sig.span)?;
            self.declare(id, &sig.name, info)?;
            if sig.kind == VarKind::Net {
                if let Some(e) = &sig.init {
                    let lhs = LValue::Name { name: sig.name.clone(), span: sig.span };
                    self.scopes[id].net_inits.push(Item::Assign { lhs, rhs: e.clone(), span: sig.span });
                }
            }
        }
        self.build_drivers(id)?;
        Ok(id)
    }

    fn declare(&mut self, scope: usize, name: &str, info: SigInfo) -> EResult<()> {
        let s = &mut self.scopes[scope];
        if s.signals.contains_key(name) || s.params.contains_key(name) {
            // `output reg q; reg q;` style redeclaration is not part of ANSI style
            return Err(unsupported(format!("redeclaration of {name}"), info.span));
        }
        s.drivers.insert(name.to_string(), vec![None; info.width]);
        s.values.insert(name.to_string(), vec![None; info.width]);
        s.signals.insert(name.to_string(), info);
        Ok(())
    }

    fn sig_info(
        &mut self,
        scope: usize,
        range: Option<&ast::Range>,
        dir: Option<Direction>,
        init: Option<Expr>,
        span: Span,
    ) -> EResult<SigInfo> {
        let (width, msb, lsb) = match range {
            Some(r) => self.range_width(Ctx::Module(scope), r, span)?,
            None => (1, 0, 0),
        };
        Ok(SigInfo { width, msb, lsb, dir, init, span })
    }

    fn range_width(&mut self, ctx: Ctx<'_>, r: &ast::Range, span: Span) -> EResult<(usize, i64, i64)> {
        let msb = self.const_int(ctx, &r.msb, span)?;
        let lsb = self.const_int(ctx, &r.lsb, span)?;
        let width = (msb - lsb).unsigned_abs() as usize + 1;
        if width > 1 << 16 {
            return Err(unsupported("vector wider than 65536 bits", span));
        }
        Ok((width, msb, lsb))
    }

    fn build_drivers(&mut self, scope: usize) -> EResult<()> {
        let module = self.scopes[scope].module;
        let is_top = self.scopes[scope].parent.is_none();
        for port in &module.ports {
            if port.dir == Direction::Input {
                let d = if is_top { Driver::TopInput } else { Driver::ParentPort };
                let w = self.scopes[scope].signals[&port.name].width;
                self.claim(scope, &port.name, &(0..w).collect::<Vec<_>>(), d, port.span)?;
            }
        }
        let n_items = module.items.len() + self.scopes[scope].net_inits.len();
        for idx in 0..n_items {
            let item = self.item(scope, idx).clone();
            match &item {
                Item::Assign { lhs, span, .. } => {
                    for (name, bits) in self.lvalue_targets(scope, lhs, false)? {
                        self.claim(scope, &name, &bits, Driver::Item(idx), *span)?;
                    }
                }
                Item::Always { body, span, .. } => {
                    let mut targets = BTreeMap::<String, Vec<usize>>::new();
                    self.stmt_targets(scope, body, &mut targets)?;
                    for (name, mut bits) in targets {
                        bits.sort_unstable();
                        bits.dedup();
                        self.claim(scope, &name, &bits, Driver::Item(idx), *span)?;
                    }
                }
                Item::Instance(inst) => {
                    let child = self
                        .design
                        .modules
                        .get(&inst.module)
                        .ok_or_else(|| ElabError::UnknownModule(inst.module.clone()))?;
                    for (pi, conn) in inst.ports.iter().enumerate() {
                        let port = match &conn.name {
                            Some(n) => child.ports.iter().find(|p| &p.name == n).ok_or_else(|| ElabError::Undeclared {
                                name: format!("{}.{n}", inst.module),
                                span: inst.span,
                            })?,
                            None => child.ports.get(pi).ok_or_else(|| {
                                unsupported(format!("too many positional ports for {}", inst.module), inst.span)
                            })?,
                        };
                        if port.dir != Direction::Output {
                            continue;
                        }
                        let Some(e) = &conn.expr else { continue };
                        let lv = expr_to_lvalue(e).ok_or_else(|| {
                            unsupported(format!("output port {} connected to a non-assignable expression", port.name), inst.span)
                        })?;
                        for (name, bits) in self.lvalue_targets(scope, &lv, false)? {
                            self.claim(scope, &name, &bits, Driver::InstanceOutput { item: idx, port: pi }, inst.span)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn claim(&mut self, scope: usize, name: &str, bits: &[usize], d: Driver, span: Span) -> EResult<()> {
        let s = &mut self.scopes[scope];
        let slots = s.drivers.get_mut(name).expect("targets are declared");
        for &b in bits {
            match slots[b] {
                Some(existing) if existing != d => {
                    return Err(ElabError::MultipleDrivers { signal: format!("{}{name}[{b}]", s.path), span })
                }
                _ => slots[b] = Some(d),
            }
        }
        Ok(())
    }

    /// Bits written by an lvalue. Non-constant selects claim the whole
    /// signal when `exact` is false.
    fn lvalue_targets(&mut self, scope: usize, lv: &LValue, exact: bool) -> EResult<Vec<(String, Vec<usize>)>> {
        match lv {
            LValue::Name { name, span } => {
                let info = self.lookup_signal(scope, name, *span)?;
                Ok(vec![(name.clone(), (0..info.width).collect())])
            }
            LValue::Select { name, sel, span } => {
                let info = self.lookup_signal(scope, name, *span)?;
                match self.const_select(Ctx::Module(scope), &info, sel, *span)? {
                    Some((lo, w)) => Ok(vec![(name.clone(), (lo..lo + w).filter(|&p| p < info.width).collect())]),
                    None if exact => Err(unsupported("non-constant select", *span)),
                    None => Ok(vec![(name.clone(), (0..info.width).collect())]),
                }
            }
            LValue::Concat(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    out.extend(self.lvalue_targets(scope, p, exact)?);
                }
                Ok(out)
            }
        }
    }

    fn stmt_targets(&mut self, scope: usize, s: &Stmt, out: &mut BTreeMap<String, Vec<usize>>) -> EResult<()> {
        match s {
            Stmt::Null => {}
            Stmt::Block(v) => {
                for s in v {
                    self.stmt_targets(scope, s, out)?;
                }
            }
            Stmt::Assign { lhs, .. } => {
                for (name, bits) in self.lvalue_targets(scope, lhs, false)? {
                    out.entry(name).or_default().extend(bits);
                }
            }
            Stmt::If { then, els, .. } => {
                self.stmt_targets(scope, then, out)?;
                if let Some(e) = els {
                    self.stmt_targets(scope, e, out)?;
                }
            }
            Stmt::Case { items, default, .. } => {
                for it in items {
                    self.stmt_targets(scope, &it.body, out)?;
                }
                if let Some(d) = default {
                    self.stmt_targets(scope, d, out)?;
                }
            }
        }
        Ok(())
    }

    fn lookup_signal(&self, scope: usize, name: &str, span: Span) -> EResult<SigInfo> {
        self.scopes[scope]
            .signals
            .get(name)
            .cloned()
            .ok_or_else(|| ElabError::Undeclared { name: name.to_string(), span })
    }

    // ---- lazy signal evaluation ---------------------------------------------

    fn signal(&mut self, scope: usize, name: &str, span: Span) -> EResult<Bits> {
        let w = self.lookup_signal(scope, name, span)?.width;
        (0..w).map(|i| self.bit(scope, name, i)).collect()
    }

    fn bit(&mut self, scope: usize, name: &str, i: usize) -> EResult<NetId> {
        if let Some(n) = self.scopes[scope].values[name][i] {
            return Ok(n);
        }
        match self.scopes[scope].drivers[name][i] {
            None | Some(Driver::TopInput) => {
                let key = format!("{}{name}", self.scopes[scope].path);
                let width = self.scopes[scope].signals[name].width;
                let bits = match self.undriven.get(&key) {
                    Some(b) => b.clone(),
                    None => {
                        let b = self.b.add_input(&key, width, PortKind::Undriven);
                        self.undriven.insert(key, b.clone());
                        b
                    }
                };
                self.scopes[scope].values.get_mut(name).expect("declared")[i] = Some(bits[i]);
                Ok(bits[i])
            }
            Some(Driver::ParentPort) => {
                self.drive_input_port(scope, name)?;
                Ok(self.scopes[scope].values[name][i].expect("input port evaluated"))
            }
            Some(d @ (Driver::Item(idx) | Driver::InstanceOutput { item: idx, .. })) => {
                let key = (scope, idx);
                if !self.in_progress.insert(key) {
                    return Err(ElabError::CombinationalLoop { signal: format!("{}{name}", self.scopes[scope].path) });
                }
                let r = match d {
                    Driver::InstanceOutput { port, .. } => self.drive_instance_output(scope, idx, port),
                    _ => self.drive_item(scope, idx),
                };
                self.in_progress.remove(&key);
                r?;
                self.scopes[scope].values[name][i].ok_or_else(|| {
                    ElabError::CombinationalLoop { signal: format!("{}{name}", self.scopes[scope].path) }
                })
            }
        }
    }

    fn set_bits(&mut self, scope: usize, name: &str, positions: &[usize], bits: &[NetId]) {
        let slot = self.scopes[scope].values.get_mut(name).expect("declared");
        for (&p, &b) in positions.iter().zip(bits) {
            slot[p] = Some(b);
        }
    }

    fn drive_input_port(&mut self, scope: usize, port: &str) -> EResult<()> {
        let (parent, item) = self.scopes[scope].parent.expect("non-top scope");
        let Item::Instance(inst) = self.item(parent, item).clone() else { unreachable!() };
        let module = self.scopes[scope].module;
        let width = self.scopes[scope].signals[port].width;
        let conn = inst.ports.iter().enumerate().find(|(i, c)| match &c.name {
            Some(n) => n == port,
            None => module.ports.get(*i).is_some_and(|p| p.name == port),
        });
        let bits = match conn.and_then(|(_, c)| c.expr.as_ref()) {
            Some(e) => {
                let w = width.max(self.self_width(Ctx::Module(parent), e)?);
                let mut v = self.eval(Ctx::Module(parent), None, e, w)?;
                v.truncate(width);
                v
            }
            None => {
                let key = format!("{}{port}", self.scopes[scope].path);
                let b = self.b.add_input(&key, width, PortKind::Undriven);
                self.undriven.insert(key, b.clone());
                b
            }
        };
        self.set_bits(scope, port, &(0..width).collect::<Vec<_>>(), &bits);
        Ok(())
    }

    fn child_scope(&mut self, scope: usize, item: usize) -> EResult<usize> {
        if let Some(&c) = self.scopes[scope].children.get(&item) {
            return Ok(c);
        }
        let Item::Instance(inst) = self.item(scope, item).clone() else { unreachable!() };
        let module = self.design.modules.get(&inst.module).ok_or_else(|| ElabError::UnknownModule(inst.module.clone()))?;
        let overrides = inst
            .params
            .iter()
            .filter_map(|c| c.expr.clone().map(|e| (c.name.clone(), ParamValue::Parent(e, scope))))
            .collect();
        let path = format!("{}{}.", self.scopes[scope].path, inst.name);
        let depth = self.scopes[scope].depth + 1;
        let child = self.new_scope(module, path, Some((scope, item)), overrides, depth)?;
        self.scopes[scope].children.insert(item, child);
        Ok(child)
    }

    fn drive_instance_output(&mut self, scope: usize, item: usize, port_idx: usize) -> EResult<()> {
        let child = self.child_scope(scope, item)?;
        let Item::Instance(inst) = self.item(scope, item).clone() else { unreachable!() };
        let conn = &inst.ports[port_idx];
        let module = self.scopes[child].module;
        let port = match &conn.name {
            Some(n) => n.clone(),
            None => module.ports[port_idx].name.clone(),
        };
        let value = self.signal(child, &port, inst.span)?;
        let lv = expr_to_lvalue(conn.expr.as_ref().expect("claimed connections have expressions")).expect("checked");
        let targets = self.lvalue_targets(scope, &lv, true)?;
        let mut offset = 0;
        // concatenation targets are listed MSB part first
        for (name, positions) in targets.iter().rev() {
            let mut chunk = Vec::new();
            for _ in positions {
                chunk.push(match value.get(offset) {
                    Some(&b) => b,
                    None => self.b.constant(false),
                });
                offset += 1;
            }
            self.set_bits(scope, name, positions, &chunk);
        }
        Ok(())
    }

    fn drive_item(&mut self, scope: usize, idx: usize) -> EResult<()> {
        match self.item(scope, idx).clone() {
            Item::Assign { lhs, rhs, .. } => {
                let targets = self.lvalue_targets(scope, &lhs, true)?;
                let lw: usize = targets.iter().map(|(_, p)| p.len()).sum();
                let w = lw.max(self.self_width(Ctx::Module(scope), &rhs)?);
                let v = self.eval(Ctx::Module(scope), None, &rhs, w)?;
                let mut offset = 0;
                for (name, positions) in targets.iter().rev() {
                    self.set_bits(scope, name, positions, &v[offset..offset + positions.len()]);
                    offset += positions.len();
                }
                Ok(())
            }
            Item::Always { kind: AlwaysKind::Comb, body, span } => self.drive_comb(scope, idx, &body, span),
            Item::Always { kind: AlwaysKind::Edge(events), body, span } => {
                self.start_sequential(scope, idx, &events, &body, span)
            }
            Item::Instance(_) => unreachable!("instances drive through their outputs"),
        }
    }

    fn driven_by(&self, scope: usize, idx: usize) -> HashMap<String, Vec<bool>> {
        let s = &self.scopes[scope];
        s.drivers
            .iter()
            .filter(|(_, v)| v.contains(&Some(Driver::Item(idx))))
            .map(|(k, v)| (k.clone(), v.iter().map(|d| *d == Some(Driver::Item(idx))).collect()))
            .collect()
    }

    fn drive_comb(&mut self, scope: usize, idx: usize, body: &Stmt, span: Span) -> EResult<()> {
        let driven = self.driven_by(scope, idx);
        let mut env = ProcEnv {
            seq: false,
            owned: driven.clone(),
            cur: driven.iter().map(|(k, v)| (k.clone(), vec![BitVal::Unassigned; v.len()])).collect(),
            next: HashMap::new(),
        };
        self.exec(scope, &mut env, body)?;
        for (name, mask) in &driven {
            let vals = &env.cur[name];
            for (p, &own) in mask.iter().enumerate() {
                if !own {
                    continue;
                }
                match vals[p] {
                    BitVal::Net(n) => self.scopes[scope].values.get_mut(name).expect("declared")[p] = Some(n),
                    _ => {
                        return Err(unsupported(
                            format!("latch inferred for {}{name}[{p}]", self.scopes[scope].path),
                            span,
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// Allocates flop outputs for everything the block drives; the
    /// next-state logic is built later so feedback through the flops is
    /// well defined.
    fn start_sequential(&mut self, scope: usize, idx: usize, events: &[ast::EventExpr], body: &Stmt, span: Span) -> EResult<()> {
        let clock_event = if events.len() == 1 {
            &events[0]
        } else {
            // with asynchronous controls, the clock is the event not tested in the body
            let mut read = HashSet::new();
            stmt_reads(body, &mut read);
            let untested: Vec<_> = events
                .iter()
                .filter(|e| !matches!(&e.expr, Expr::Ident { name, .. } if read.contains(name.as_str())))
                .collect();
            match untested.as_slice() {
                [one] => one,
                _ => &events[0],
            }
        };
        let Expr::Ident { name: clk, package: None, span: cspan } = &clock_event.expr else {
            return Err(unsupported("clock must be a plain signal", span));
        };
        let root = self.resolve_clock(scope, clk, *cspan)?;
        let edge = clock_event.edge.expect("edge events");
        match &self.clock {
            None => self.clock = Some((root, edge)),
            Some((c, e)) if *c == root && *e == edge => {}
            Some(_) => return Err(unsupported("more than one clock or clock edge", span)),
        }
        let driven = self.driven_by(scope, idx);
        let mut q = HashMap::new();
        for (name, mask) in driven {
            let bits: Vec<Option<NetId>> = mask.iter().map(|&own| own.then(|| self.b.fresh())).collect();
            for (p, b) in bits.iter().enumerate() {
                if let Some(b) = b {
                    self.scopes[scope].values.get_mut(&name).expect("declared")[p] = Some(*b);
                }
            }
            q.insert(name, bits);
        }
        self.pending.push_back(SeqJob { scope, item: idx, q });
        Ok(())
    }

    fn resolve_clock(&mut self, scope: usize, name: &str, span: Span) -> EResult<String> {
        let info = self.lookup_signal(scope, name, span)?;
        if info.dir != Some(Direction::Input) || info.width != 1 {
            return Err(unsupported(format!("clock {name} is not a 1-bit input"), span));
        }
        match self.scopes[scope].parent {
            None => Ok(name.to_string()),
            Some((parent, item)) => {
                let Item::Instance(inst) = self.item(parent, item).clone() else { unreachable!() };
                let module = self.scopes[scope].module;
                let conn = inst.ports.iter().enumerate().find(|(i, c)| match &c.name {
                    Some(n) => n == name,
                    None => module.ports.get(*i).is_some_and(|p| p.name == name),
                });
                match conn.and_then(|(_, c)| c.expr.as_ref()) {
                    Some(Expr::Ident { name: pn, package: None, span }) => self.resolve_clock(parent, pn, *span),
                    _ => Err(unsupported(format!("clock {name} is not driven by a top-level input"), inst.span)),
                }
            }
        }
    }

    fn finish_sequential(&mut self, job: SeqJob) -> EResult<()> {
        let Item::Always { body, span, .. } = self.item(job.scope, job.item).clone() else { unreachable!() };
        let as_vals = |v: &Vec<Option<NetId>>| -> Vec<BitVal> {
            v.iter().map(|b| b.map_or(BitVal::Unassigned, BitVal::Net)).collect()
        };
        let cur: HashMap<String, Vec<BitVal>> = job.q.iter().map(|(k, v)| (k.clone(), as_vals(v))).collect();
        let owned = job.q.iter().map(|(k, v)| (k.clone(), v.iter().map(Option::is_some).collect())).collect();
        let mut env = ProcEnv { seq: true, owned, next: cur.clone(), cur };
        let (mut ba, mut nba) = (HashSet::new(), HashSet::new());
        assign_kinds(&body, &mut ba, &mut nba);
        if let Some(both) = ba.intersection(&nba).next() {
            return Err(unsupported(format!("{both} is assigned with both = and <="), span));
        }
        self.exec(job.scope, &mut env, &body)?;
        let (clock, _) = self.clock.clone().expect("set by start_sequential");
        let mut names: Vec<&String> = job.q.keys().collect();
        names.sort();
        for name in names {
            let info = self.scopes[job.scope].signals[name].clone();
            let init = match &info.init {
                Some(e) => {
                    let w = info.width.max(self.self_width(Ctx::Module(job.scope), e)?);
                    let v = self.eval(Ctx::Module(job.scope), None, e, w)?;
                    self.require_const(&v, &format!("initial value of {name}"), info.span)?;
                    v.iter().map(|&n| self.b.const_value(n) == Some(true)).collect()
                }
                None => vec![false; info.width],
            };
            let src = if nba.contains(name.as_str()) { &env.next[name] } else { &env.cur[name] };
            for (p, q) in job.q[name].iter().enumerate() {
                let Some(q) = *q else { continue };
                let d = match src[p] {
                    BitVal::Net(n) => n,
                    _ => q,
                };
                self.b.flops.push(Flop { d, q, clock: clock.clone(), init: init[p] });
            }
        }
        Ok(())
    }

    // ---- procedural execution -------------------------------------------------

    fn exec(&mut self, scope: usize, env: &mut ProcEnv, s: &Stmt) -> EResult<()> {
        match s {
            Stmt::Null => Ok(()),
            Stmt::Block(v) => {
                for s in v {
                    self.exec(scope, env, s)?;
                }
                Ok(())
            }
            Stmt::Assign { blocking, lhs, rhs, span } => {
                let to_next = env.seq && !blocking;
                self.proc_assign(scope, env, lhs, rhs, to_next, *span)
            }
            Stmt::If { cond, then, els } => {
                let c = self.condition(Ctx::Module(scope), Some(env), cond)?;
                self.branch(scope, env, c, then, els.as_deref())
            }
            Stmt::Case { subject, items, default, .. } => {
                let ctx = Ctx::Module(scope);
                let mut w = self.self_width(ctx, subject)?;
                for it in items {
                    for l in &it.labels {
                        w = w.max(self.self_width(ctx, l)?);
                    }
                }
                let subj = self.eval(ctx, Some(env), subject, w)?;
                let mut conds = Vec::new();
                for it in items {
                    let mut any = self.b.constant(false);
                    for l in &it.labels {
                        let lv = self.eval(ctx, Some(env), l, w)?;
                        let eq = eq_bits(&mut self.b, &subj, &lv);
                        any = self.b.or(any, eq);
                    }
                    conds.push(any);
                }
                self.case_chain(scope, env, &conds, items, default.as_deref())
            }
        }
    }

    fn case_chain(
        &mut self,
        scope: usize,
        env: &mut ProcEnv,
        conds: &[NetId],
        items: &[ast::CaseItem],
        default: Option<&Stmt>,
    ) -> EResult<()> {
        match (conds.split_first(), items.split_first()) {
            (Some((&c, rest_c)), Some((item, rest_i))) => {
                let mut then_env = env.clone();
                if self.b.const_value(c) != Some(false) {
                    self.exec(scope, &mut then_env, &item.body)?;
                }
                let mut else_env = env.clone();
                if self.b.const_value(c) != Some(true) {
                    self.case_chain(scope, &mut else_env, rest_c, rest_i, default)?;
                }
                *env = self.merge(c, then_env, else_env);
                Ok(())
            }
            _ => match default {
                Some(d) => self.exec(scope, env, d),
                None => Ok(()),
            },
        }
    }

    fn branch(&mut self, scope: usize, env: &mut ProcEnv, c: NetId, then: &Stmt, els: Option<&Stmt>) -> EResult<()> {
        match self.b.const_value(c) {
            Some(true) => return self.exec(scope, env, then),
            Some(false) => return els.map_or(Ok(()), |e| self.exec(scope, env, e)),
            None => {}
        }
        let mut t = env.clone();
        self.exec(scope, &mut t, then)?;
        let mut e = env.clone();
        if let Some(s) = els {
            self.exec(scope, &mut e, s)?;
        }
        *env = self.merge(c, t, e);
        Ok(())
    }

    fn merge(&mut self, c: NetId, t: ProcEnv, e: ProcEnv) -> ProcEnv {
        let mut merge_map = |a: HashMap<String, Vec<BitVal>>, mut b: HashMap<String, Vec<BitVal>>| {
            a.into_iter()
                .map(|(k, av)| {
                    let bv = b.remove(&k).expect("same keys");
                    let merged = av
                        .into_iter()
                        .zip(bv)
                        .map(|(x, y)| match (x, y) {
                            (BitVal::Net(p), BitVal::Net(q)) => BitVal::Net(self.b.mux(c, q, p)),
                            (BitVal::Unassigned, BitVal::Unassigned) => BitVal::Unassigned,
                            _ => BitVal::Partial,
                        })
                        .collect();
                    (k, merged)
                })
                .collect()
        };
        let cur = merge_map(t.cur, e.cur);
        let next = merge_map(t.next, e.next);
        ProcEnv { seq: t.seq, owned: t.owned, cur, next }
    }

    fn proc_assign(&mut self, scope: usize, env: &mut ProcEnv, lhs: &LValue, rhs: &Expr, to_next: bool, span: Span) -> EResult<()> {
        let ctx = Ctx::Module(scope);
        let lw = self.lvalue_width(scope, lhs)?;
        let w = lw.max(self.self_width(ctx, rhs)?);
        let v = self.eval(ctx, Some(env), rhs, w)?;
        let mut parts = Vec::new();
        flatten_lvalue(lhs, &mut parts);
        let mut offset = 0;
        for part in parts.iter().rev() {
            let (name, sel, pspan) = match part {
                LValue::Name { name, span } => (name, None, *span),
                LValue::Select { name, sel, span } => (name, Some(sel.as_ref()), *span),
                LValue::Concat(_) => unreachable!("flattened"),
            };
            let info = self.lookup_signal(scope, name, pspan)?;
            let width = match sel {
                None => info.width,
                Some(sel) => self.select_width(ctx, &info, sel, pspan)?,
            };
            let chunk = &v[offset..offset + width];
            offset += width;
            let map = if to_next { &mut env.next } else { &mut env.cur };
            let Some(target) = map.get_mut(name) else {
                return Err(ElabError::MultipleDrivers { signal: name.clone(), span });
            };
            match sel.map(|s| self.const_select(ctx, &info, s, pspan)).transpose()? {
                None => {
                    for (t, &c) in target.iter_mut().zip(chunk) {
                        *t = BitVal::Net(c);
                    }
                }
                Some(Some((lo, _))) => {
                    for (j, &c) in chunk.iter().enumerate() {
                        if let Some(t) = target.get_mut(lo + j) {
                            *t = BitVal::Net(c);
                        }
                    }
                }
                Some(None) => {
                    // dynamic index: each bit keeps its old value unless selected
                    let sel = sel.expect("select present");
                    let positions = self.dynamic_positions(ctx, Some(&*env), &info, sel, pspan)?;
                    let map = if to_next { &mut env.next } else { &mut env.cur };
                    let target = map.get_mut(name).expect("checked above");
                    for (hit, p, j) in positions {
                        let old = target[p];
                        target[p] = match old {
                            BitVal::Net(o) => BitVal::Net(self.b.mux(hit, o, chunk[j])),
                            _ => BitVal::Partial,
                        };
                    }
                }
            }
        }
        Ok(())
    }

    fn lvalue_width(&mut self, scope: usize, lv: &LValue) -> EResult<usize> {
        match lv {
            LValue::Name { name, span } => Ok(self.lookup_signal(scope, name, *span)?.width),
            LValue::Select { name, sel, span } => {
                let info = self.lookup_signal(scope, name, *span)?;
                self.select_width(Ctx::Module(scope), &info, sel, *span)
            }
            LValue::Concat(parts) => parts.iter().map(|p| self.lvalue_width(scope, p)).sum(),
        }
    }

    // ---- selects --------------------------------------------------------------

    fn select_width(&mut self, ctx: Ctx<'_>, info: &SigInfo, sel: &Select, span: Span) -> EResult<usize> {
        Ok(match sel {
            Select::Bit(_) => 1,
            Select::Range(a, b) => {
                let (a, b) = (self.const_int(ctx, a, span)?, self.const_int(ctx, b, span)?);
                let w = (a - b).unsigned_abs() as usize + 1;
                if (a >= b) == info.ascending() && a != b {
                    return Err(ElabError::WidthMismatch { what: "part select direction is reversed".into(), span });
                }
                w
            }
            Select::Up(_, w) | Select::Down(_, w) => {
                let w = self.const_int(ctx, w, span)?;
                if w <= 0 {
                    return Err(ElabError::WidthMismatch { what: "indexed part select width must be positive".into(), span });
                }
                w as usize
            }
        })
    }

    /// `(lowest position, width)` for constant selects; positions may lie
    /// outside the vector.
    fn const_select(&mut self, ctx: Ctx<'_>, info: &SigInfo, sel: &Select, span: Span) -> EResult<Option<(usize, usize)>> {
        let w = self.select_width(ctx, info, sel, span)?;
        let lsb_index = match sel {
            Select::Bit(i) => match self.try_const_int(ctx, i)? {
                Some(i) => i,
                None => return Ok(None),
            },
            Select::Range(a, b) => {
                let (a, b) = (self.const_int(ctx, a, span)?, self.const_int(ctx, b, span)?);
                if info.ascending() {
                    a.max(b)
                } else {
                    a.min(b)
                }
            }
            Select::Up(base, _) => match self.try_const_int(ctx, base)? {
                Some(b) if info.ascending() => b + w as i64 - 1,
                Some(b) => b,
                None => return Ok(None),
            },
            Select::Down(base, _) => match self.try_const_int(ctx, base)? {
                Some(b) if info.ascending() => b,
                Some(b) => b - w as i64 + 1,
                None => return Ok(None),
            },
        };
        let p = if info.msb >= info.lsb { lsb_index - info.lsb } else { info.lsb - lsb_index };
        if p < 0 || p >= info.width as i64 {
            // entirely or partly outside the vector: report a position past the end
            if p < 0 && p + (w as i64) > 0 {
                return Err(unsupported("part select straddles the low end of the vector", span));
            }
            return Ok(Some((if p < 0 { usize::MAX / 2 } else { p as usize }, w)));
        }
        Ok(Some((p as usize, w)))
    }

    /// For a non-constant select: `(hit, position, offset in selected value)`
    /// triples, one per candidate index.
    fn dynamic_positions(
        &mut self,
        ctx: Ctx<'_>,
        env: Option<&ProcEnv>,
        info: &SigInfo,
        sel: &Select,
        span: Span,
    ) -> EResult<Vec<(NetId, usize, usize)>> {
        let (index_expr, w) = match sel {
            Select::Bit(i) => (i, 1usize),
            Select::Up(b, _) | Select::Down(b, _) => (b, self.select_width(ctx, info, sel, span)?),
            Select::Range(..) => unreachable!("range selects are constant"),
        };
        let iw = self.self_width(ctx, index_expr)?;
        let idx = self.eval(ctx, env, index_expr, iw)?;
        let mut out = Vec::new();
        let max_index = if iw >= 13 { MAX_DYNAMIC_SELECT } else { 1i64 << iw };
        if iw >= 13 && info.msb.max(info.lsb) >= MAX_DYNAMIC_SELECT {
            return Err(unsupported("dynamic select over a very wide vector", span));
        }
        for k in 0..max_index {
            let kbits = const_bits(&mut self.b, k as u128, iw);
            let hit = eq_bits(&mut self.b, &idx, &kbits);
            for j in 0..w {
                let index = match sel {
                    Select::Bit(_) => k,
                    Select::Up(..) if info.ascending() => k + (w - 1 - j) as i64,
                    Select::Up(..) => k + j as i64,
                    Select::Down(..) if info.ascending() => k - j as i64,
                    Select::Down(..) => k - (w - 1 - j) as i64,
                    Select::Range(..) => unreachable!(),
                };
                if let Some(p) = info.pos(index) {
                    out.push((hit, p, j));
                }
            }
        }
        Ok(out)
    }

    /// Reads a select of `name`. Constant selects only touch the selected
    /// bits, so a vector may be assembled bit by bit from its own bits.
    fn read_select(&mut self, ctx: Ctx<'_>, env: Option<&ProcEnv>, name: &str, info: &SigInfo, sel: &Select, span: Span) -> EResult<Bits> {
        let w = self.select_width(ctx, info, sel, span)?;
        match self.const_select(ctx, info, sel, span)? {
            Some((lo, w)) => {
                let mut out = Vec::with_capacity(w);
                for p in lo..lo.saturating_add(w) {
                    out.push(match (ctx, p < info.width) {
                        (_, false) => self.b.constant(false),
                        (Ctx::Module(scope), true) if self.scopes[scope].signals.contains_key(name) => {
                            self.signal_bit(scope, env, name, p, span)?
                        }
                        (_, true) => self.ident_value(ctx, env, None, name, span)?.0[p],
                    });
                }
                Ok(out)
            }
            None => {
                let (base, _) = self.ident_value(ctx, env, None, name, span)?;
                let zero = self.b.constant(false);
                let mut out = vec![zero; w];
                for (hit, p, j) in self.dynamic_positions(ctx, env, info, sel, span)? {
                    out[j] = self.b.mux(hit, out[j], base[p]);
                }
                Ok(out)
            }
        }
    }

    // ---- expressions ----------------------------------------------------------

    fn package_params(&mut self, name: &str, span: Span) -> EResult<&HashMap<String, Bits>> {
        match self.packages.get(name) {
            Some(PkgState::Done(_)) => {}
            Some(PkgState::Evaluating(_)) => return Err(unsupported(format!("package {name} depends on itself"), span)),
            None => {
                let pkg = self
                    .design
                    .packages
                    .get(name)
                    .ok_or_else(|| ElabError::Undeclared { name: name.to_string(), span })?;
                self.packages.insert(name.to_string(), PkgState::Evaluating(HashMap::new()));
                for p in &pkg.params {
                    let ctx = Ctx::Package(name);
                    let w = match &p.range {
                        Some(r) => self.range_width(ctx, r, p.span)?.0,
                        None => self.self_width(ctx, &p.value)?,
                    };
                    let v = self.eval(ctx, None, &p.value, w)?;
                    self.require_const(&v, &format!("parameter {}::{}", name, p.name), p.span)?;
                    if let Some(PkgState::Evaluating(m)) = self.packages.get_mut(name) {
                        m.insert(p.name.clone(), v);
                    }
                }
                if let Some(PkgState::Evaluating(m)) = self.packages.remove(name) {
                    self.packages.insert(name.to_string(), PkgState::Done(m));
                }
            }
        }
        match &self.packages[name] {
            PkgState::Done(m) => Ok(m),
            PkgState::Evaluating(_) => unreachable!("finished above"),
        }
    }

    fn resolve_package_ident(&mut self, imports: &[ast::Import], name: &str, span: Span) -> EResult<Option<Bits>> {
        if let Some(imp) = imports.iter().find(|i| i.item.as_deref() == Some(name)) {
            let params = self.package_params(&imp.package, span)?;
            return params.get(name).cloned().map(Some).ok_or_else(|| ElabError::Undeclared {
                name: format!("{}::{name}", imp.package),
                span,
            });
        }
        for imp in imports.iter().filter(|i| i.item.is_none()) {
            if let Some(v) = self.package_params(&imp.package, span)?.get(name) {
                return Ok(Some(v.clone()));
            }
        }
        Ok(None)
    }

    /// Value of an identifier at its self-determined width.
    fn ident_value(&mut self, ctx: Ctx<'_>, env: Option<&ProcEnv>, package: Option<&str>, name: &str, span: Span) -> EResult<(Bits, Option<SigInfo>)> {
        if let Some(p) = package {
            let v = self
                .package_params(p, span)?
                .get(name)
                .cloned()
                .ok_or_else(|| ElabError::Undeclared { name: format!("{p}::{name}"), span })?;
            return Ok((v, None));
        }
        match ctx {
            Ctx::Module(scope) => {
                if let Some(info) = self.scopes[scope].signals.get(name).cloned() {
                    if env.is_some_and(|e| e.cur.contains_key(name)) {
                        let out = (0..info.width).map(|i| self.signal_bit(scope, env, name, i, span)).collect::<EResult<_>>()?;
                        return Ok((out, Some(info)));
                    }
                    return Ok((self.signal(scope, name, span)?, Some(info)));
                }
                if let Some(v) = self.scopes[scope].params.get(name) {
                    return Ok((v.clone(), None));
                }
                let imports = &self.scopes[scope].module.imports;
                if let Some(v) = self.resolve_package_ident(imports, name, span)? {
                    return Ok((v, None));
                }
                Err(ElabError::Undeclared { name: name.to_string(), span })
            }
            Ctx::Package(pkg) => {
                if let Some(PkgState::Evaluating(m) | PkgState::Done(m)) = self.packages.get(pkg) {
                    if let Some(v) = m.get(name) {
                        return Ok((v.clone(), None));
                    }
                }
                let imports = &self.design.packages[pkg].imports;
                if let Some(v) = self.resolve_package_ident(imports, name, span)? {
                    return Ok((v, None));
                }
                Err(ElabError::Undeclared { name: name.to_string(), span })
            }
        }
    }

    /// One bit of a module signal, as seen from inside a procedural block
    /// when `env` is given.
    fn signal_bit(&mut self, scope: usize, env: Option<&ProcEnv>, name: &str, i: usize, span: Span) -> EResult<NetId> {
        let Some(env) = env.filter(|e| e.cur.contains_key(name)) else {
            return self.bit(scope, name, i);
        };
        match env.cur[name][i] {
            BitVal::Net(n) => Ok(n),
            _ if !env.owned[name][i] => self.bit(scope, name, i),
            BitVal::Unassigned => Err(ElabError::CombinationalLoop {
                signal: format!("{}{name} (read before assignment)", self.scopes[scope].path),
            }),
            BitVal::Partial => Err(unsupported(format!("latch inferred for {name}"), span)),
        }
    }

    fn self_width(&mut self, ctx: Ctx<'_>, e: &Expr) -> EResult<usize> {
        Ok(match e {
            Expr::Literal(l) => l.width as usize,
            Expr::Ident { package, name, span } => self.ident_width(ctx, package.as_deref(), name, *span)?,
            Expr::Select { package, name, sel, span } => {
                if package.is_some() {
                    return Err(unsupported("select on a package parameter", *span));
                }
                let info = self.select_base(ctx, name, *span)?;
                self.select_width(ctx, &info, sel, *span)?
            }
            Expr::Unary(op, x) => match op {
                UnaryOp::BitNot | UnaryOp::Neg | UnaryOp::Plus => self.self_width(ctx, x)?,
                _ => 1,
            },
            Expr::Binary(op, l, r) => match op {
                BinaryOp::Add
                | BinaryOp::Sub
                | BinaryOp::Mul
                | BinaryOp::Div
                | BinaryOp::Mod
                | BinaryOp::BitAnd
                | BinaryOp::BitOr
                | BinaryOp::BitXor
                | BinaryOp::BitXnor => self.self_width(ctx, l)?.max(self.self_width(ctx, r)?),
                BinaryOp::Shl | BinaryOp::Shr | BinaryOp::AShl | BinaryOp::AShr | BinaryOp::Pow => self.self_width(ctx, l)?,
                _ => 1,
            },
            Expr::Cond(_, t, f) => self.self_width(ctx, t)?.max(self.self_width(ctx, f)?),
            Expr::Concat(parts) => parts.iter().map(|p| self.self_width(ctx, p)).sum::<EResult<usize>>()?,
            Expr::Repeat(n, parts) => {
                let n = self.const_int(ctx, n, Span::default())?;
                if !(0..=1 << 16).contains(&n) {
                    return Err(unsupported("replication count", Span::default()));
                }
                n as usize * parts.iter().map(|p| self.self_width(ctx, p)).sum::<EResult<usize>>()?
            }
            Expr::Call { .. } => 32,
        })
    }

    fn ident_width(&mut self, ctx: Ctx<'_>, package: Option<&str>, name: &str, span: Span) -> EResult<usize> {
        if let (Ctx::Module(scope), None) = (ctx, package) {
            if let Some(info) = self.scopes[scope].signals.get(name) {
                return Ok(info.width);
            }
        }
        // parameters are constants, so evaluating them has no side effects
        Ok(self.ident_value(ctx, None, package, name, span)?.0.len())
    }

    fn select_base(&mut self, ctx: Ctx<'_>, name: &str, span: Span) -> EResult<SigInfo> {
        match ctx {
            Ctx::Module(scope) => {
                if let Some(info) = self.scopes[scope].signals.get(name) {
                    return Ok(info.clone());
                }
                let (v, _) = self.ident_value(ctx, None, None, name, span)?;
                Ok(SigInfo { width: v.len(), msb: v.len() as i64 - 1, lsb: 0, dir: None, init: None, span })
            }
            Ctx::Package(_) => {
                let (v, _) = self.ident_value(ctx, None, None, name, span)?;
                Ok(SigInfo { width: v.len(), msb: v.len() as i64 - 1, lsb: 0, dir: None, init: None, span })
            }
        }
    }

    fn condition(&mut self, ctx: Ctx<'_>, env: Option<&ProcEnv>, e: &Expr) -> EResult<NetId> {
        let w = self.self_width(ctx, e)?;
        let v = self.eval(ctx, env, e, w)?;
        Ok(self.b.or_all(&v))
    }

    /// Evaluates `e` in a context of `width` bits (`width` is at least the
    /// self-determined width for context-determined operators).
    fn eval(&mut self, ctx: Ctx<'_>, env: Option<&ProcEnv>, e: &Expr, width: usize) -> EResult<Bits> {
        let v = match e {
            Expr::Literal(l) => match l.fill {
                Some(f) => vec![self.b.constant(f); width],
                None => l.bits.iter().map(|&b| self.b.constant(b)).collect(),
            },
            Expr::Ident { package, name, span } => self.ident_value(ctx, env, package.as_deref(), name, *span)?.0,
            Expr::Select { name, sel, span, .. } => {
                let info = self.select_base(ctx, name, *span)?;
                self.read_select(ctx, env, name, &info, sel, *span)?
            }
            Expr::Unary(op, x) => match op {
                UnaryOp::BitNot => {
                    let v = self.eval(ctx, env, x, width)?;
                    v.into_iter().map(|b| self.b.not(b)).collect()
                }
                UnaryOp::Plus => self.eval(ctx, env, x, width)?,
                UnaryOp::Neg => {
                    let v = self.eval(ctx, env, x, width)?;
                    let zero = vec![self.b.constant(false); width];
                    sub_bits(&mut self.b, &zero, &v)
                }
                _ => {
                    let w = self.self_width(ctx, x)?;
                    let v = self.eval(ctx, env, x, w)?;
                    let r = match op {
                        UnaryOp::LogNot => {
                            let any = self.b.or_all(&v);
                            self.b.not(any)
                        }
                        UnaryOp::RedAnd => self.b.and_all(&v),
                        UnaryOp::RedOr => self.b.or_all(&v),
                        UnaryOp::RedXor => self.b.xor_all(&v),
                        UnaryOp::RedNand => {
                            let a = self.b.and_all(&v);
                            self.b.not(a)
                        }
                        UnaryOp::RedNor => {
                            let a = self.b.or_all(&v);
                            self.b.not(a)
                        }
                        _ => {
                            let a = self.b.xor_all(&v);
                            self.b.not(a)
                        }
                    };
                    vec![r]
                }
            },
            Expr::Binary(op, l, r) => self.binary(ctx, env, *op, l, r, width)?,
            Expr::Cond(c, t, f) => {
                let c = self.condition(ctx, env, c)?;
                match self.b.const_value(c) {
                    Some(true) => self.eval(ctx, env, t, width)?,
                    Some(false) => self.eval(ctx, env, f, width)?,
                    None => {
                        let tv = self.eval(ctx, env, t, width)?;
                        let fv = self.eval(ctx, env, f, width)?;
                        tv.into_iter().zip(fv).map(|(a, b)| self.b.mux(c, b, a)).collect()
                    }
                }
            }
            Expr::Concat(parts) => {
                let mut out = Vec::new();
                for p in parts.iter().rev() {
                    let w = self.self_width(ctx, p)?;
                    out.extend(self.eval(ctx, env, p, w)?);
                }
                out
            }
            Expr::Repeat(n, parts) => {
                let n = self.const_int(ctx, n, Span::default())?;
                let inner = Expr::Concat(parts.clone());
                let w = self.self_width(ctx, &inner)?;
                let one = self.eval(ctx, env, &inner, w)?;
                let mut out = Vec::new();
                for _ in 0..n {
                    out.extend(one.iter().copied());
                }
                out
            }
            Expr::Call { name, args, span } => match (name.as_str(), args.as_slice()) {
                ("$clog2", [x]) => {
                    let v = self.const_value(ctx, x, *span)?;
                    let r = if v <= 1 { 0 } else { 128 - (v - 1).leading_zeros() };
                    const_bits(&mut self.b, u128::from(r), 32)
                }
                ("$bits", [x]) => {
                    let w = self.self_width(ctx, x)?;
                    const_bits(&mut self.b, w as u128, 32)
                }
                _ => return Err(unsupported(format!("system function {name}"), *span)),
            },
        };
        Ok(self.fit(v, width))
    }

    fn fit(&mut self, mut v: Bits, width: usize) -> Bits {
        if v.len() < width {
            let zero = self.b.constant(false);
            v.resize(width, zero);
        } else {
            v.truncate(width);
        }
        v
    }

    fn binary(&mut self, ctx: Ctx<'_>, env: Option<&ProcEnv>, op: BinaryOp, l: &Expr, r: &Expr, width: usize) -> EResult<Bits> {
        use BinaryOp::*;
        Ok(match op {
            Add | Sub | Mul | BitAnd | BitOr | BitXor | BitXnor => {
                let a = self.eval(ctx, env, l, width)?;
                let b = self.eval(ctx, env, r, width)?;
                match op {
                    Add => add_bits(&mut self.b, &a, &b, false),
                    Sub => sub_bits(&mut self.b, &a, &b),
                    Mul => mul_bits(&mut self.b, &a, &b),
                    BitAnd => a.iter().zip(&b).map(|(&x, &y)| self.b.and(x, y)).collect(),
                    BitOr => a.iter().zip(&b).map(|(&x, &y)| self.b.or(x, y)).collect(),
                    BitXor => a.iter().zip(&b).map(|(&x, &y)| self.b.xor(x, y)).collect(),
                    _ => a.iter().zip(&b).map(|(&x, &y)| self.b.xnor(x, y)).collect(),
                }
            }
            Div | Mod => {
                let a = self.eval(ctx, env, l, width)?;
                let b = self.eval(ctx, env, r, width)?;
                let (Some(x), Some(y)) = (self.bits_value(&a), self.bits_value(&b)) else {
                    return Err(unsupported("division or modulus of non-constant operands", Span::default()));
                };
                // division by zero yields X in four-valued semantics; zero here
                let q = if y == 0 { 0 } else if op == Div { x / y } else { x % y };
                const_bits(&mut self.b, q, width)
            }
            Pow => {
                let a = self.eval(ctx, env, l, width)?;
                let bw = self.self_width(ctx, r)?;
                let b = self.eval(ctx, env, r, bw)?;
                let (Some(x), Some(y)) = (self.bits_value(&a), self.bits_value(&b)) else {
                    return Err(unsupported("power of non-constant operands", Span::default()));
                };
                let mut acc: u128 = 1;
                for _ in 0..y.min(256) {
                    acc = acc.wrapping_mul(x);
                }
                const_bits(&mut self.b, acc, width)
            }
            Shl | Shr | AShl | AShr => {
                let a = self.eval(ctx, env, l, width)?;
                let bw = self.self_width(ctx, r)?;
                let b = self.eval(ctx, env, r, bw)?;
                // unsigned operands make the arithmetic shifts logical
                shift_bits(&mut self.b, &a, &b, matches!(op, Shl | AShl))
            }
            Lt | Le | Gt | Ge | Eq | Ne | CaseEq | CaseNe => {
                let w = self.self_width(ctx, l)?.max(self.self_width(ctx, r)?);
                let a = self.eval(ctx, env, l, w)?;
                let b = self.eval(ctx, env, r, w)?;
                let bit = match op {
                    Lt => lt_bits(&mut self.b, &a, &b),
                    Gt => lt_bits(&mut self.b, &b, &a),
                    Le => {
                        let g = lt_bits(&mut self.b, &b, &a);
                        self.b.not(g)
                    }
                    Ge => {
                        let g = lt_bits(&mut self.b, &a, &b);
                        self.b.not(g)
                    }
                    Eq | CaseEq => eq_bits(&mut self.b, &a, &b),
                    _ => {
                        let e = eq_bits(&mut self.b, &a, &b);
                        self.b.not(e)
                    }
                };
                vec![bit]
            }
            LogAnd | LogOr => {
                let a = self.condition(ctx, env, l)?;
                let b = self.condition(ctx, env, r)?;
                vec![if op == LogAnd { self.b.and(a, b) } else { self.b.or(a, b) }]
            }
        })
    }

    // ---- constants ------------------------------------------------------------

    fn bits_value(&self, bits: &[NetId]) -> Option<u128> {
        let mut v: u128 = 0;
        for (i, &b) in bits.iter().enumerate() {
            let bit = self.b.const_value(b)?;
            if bit {
                if i >= 128 {
                    return None;
                }
                v |= 1 << i;
            }
        }
        Some(v)
    }

    fn require_const(&self, bits: &[NetId], what: &str, span: Span) -> EResult<()> {
        if bits.iter().all(|&b| self.b.const_value(b).is_some()) {
            Ok(())
        } else {
            Err(ElabError::NotConstant { what: what.to_string(), span })
        }
    }

    fn const_value(&mut self, ctx: Ctx<'_>, e: &Expr, span: Span) -> EResult<u128> {
        let w = self.self_width(ctx, e)?;
        let v = self.eval(ctx, None, e, w)?;
        self.bits_value(&v).ok_or_else(|| ElabError::NotConstant { what: "expression".into(), span })
    }

    fn const_int(&mut self, ctx: Ctx<'_>, e: &Expr, span: Span) -> EResult<i64> {
        self.try_const_int(ctx, e)?.ok_or_else(|| ElabError::NotConstant { what: "index or width".into(), span })
    }

    /// Constant value of `e` if it does not depend on any signal.
    fn try_const_int(&mut self, ctx: Ctx<'_>, e: &Expr) -> EResult<Option<i64>> {
        if reads_signals(ctx, e, self) {
            return Ok(None);
        }
        let w = self.self_width(ctx, e)?;
        let v = self.eval(ctx, None, e, w)?;
        Ok(self.bits_value(&v).and_then(|x| i64::try_from(x).ok()))
    }
}

/// Whether `e` mentions a signal of the current module (as opposed to only
/// parameters and literals).
fn reads_signals(ctx: Ctx<'_>, e: &Expr, el: &Elaborator<'_>) -> bool {
    let Ctx::Module(scope) = ctx else { return false };
    let signals = &el.scopes[scope].signals;
    let mut found = false;
    visit_idents(e, &mut |pkg, name| {
        if pkg.is_none() && signals.contains_key(name) {
            found = true;
        }
    });
    found
}

fn visit_idents(e: &Expr, f: &mut dyn FnMut(Option<&str>, &str)) {
    match e {
        Expr::Literal(_) => {}
        Expr::Ident { package, name, .. } => f(package.as_deref(), name),
        Expr::Select { package, name, sel, .. } => {
            f(package.as_deref(), name);
            match sel.as_ref() {
                Select::Bit(a) => visit_idents(a, f),
                Select::Range(a, b) | Select::Up(a, b) | Select::Down(a, b) => {
                    visit_idents(a, f);
                    visit_idents(b, f);
                }
            }
        }
        Expr::Unary(_, x) => visit_idents(x, f),
        Expr::Binary(_, a, b) => {
            visit_idents(a, f);
            visit_idents(b, f);
        }
        Expr::Cond(a, b, c) => {
            visit_idents(a, f);
            visit_idents(b, f);
            visit_idents(c, f);
        }
        Expr::Concat(v) => v.iter().for_each(|x| visit_idents(x, f)),
        Expr::Repeat(n, v) => {
            visit_idents(n, f);
            v.iter().for_each(|x| visit_idents(x, f));
        }
        Expr::Call { args, .. } => args.iter().for_each(|x| visit_idents(x, f)),
    }
}

fn stmt_reads<'a>(s: &'a Stmt, out: &mut HashSet<&'a str>) {
    let add = |e: &'a Expr, out: &mut HashSet<&'a str>| {
        let mut names = Vec::new();
        collect_names(e, &mut names);
        out.extend(names);
    };
    match s {
        Stmt::Null => {}
        Stmt::Block(v) => v.iter().for_each(|s| stmt_reads(s, out)),
        Stmt::Assign { rhs, .. } => add(rhs, out),
        Stmt::If { cond, then, els } => {
            add(cond, out);
            stmt_reads(then, out);
            if let Some(e) = els {
                stmt_reads(e, out);
            }
        }
        Stmt::Case { subject, items, default, .. } => {
            add(subject, out);
            for it in items {
                it.labels.iter().for_each(|l| add(l, out));
                stmt_reads(&it.body, out);
            }
            if let Some(d) = default {
                stmt_reads(d, out);
            }
        }
    }
}

fn collect_names<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
    match e {
        Expr::Ident { name, .. } => out.push(name),
        Expr::Select { name, sel, .. } => {
            out.push(name);
            match sel.as_ref() {
                Select::Bit(a) => collect_names(a, out),
                Select::Range(a, b) | Select::Up(a, b) | Select::Down(a, b) => {
                    collect_names(a, out);
                    collect_names(b, out);
                }
            }
        }
        Expr::Literal(_) => {}
        Expr::Unary(_, x) => collect_names(x, out),
        Expr::Binary(_, a, b) => {
            collect_names(a, out);
            collect_names(b, out);
        }
        Expr::Cond(a, b, c) => {
            collect_names(a, out);
            collect_names(b, out);
            collect_names(c, out);
        }
        Expr::Concat(v) | Expr::Call { args: v, .. } => v.iter().for_each(|x| collect_names(x, out)),
        Expr::Repeat(n, v) => {
            collect_names(n, out);
            v.iter().for_each(|x| collect_names(x, out));
        }
    }
}

fn assign_kinds<'a>(s: &'a Stmt, ba: &mut HashSet<&'a str>, nba: &mut HashSet<&'a str>) {
    match s {
        Stmt::Null => {}
        Stmt::Block(v) => v.iter().for_each(|s| assign_kinds(s, ba, nba)),
        Stmt::Assign { blocking, lhs, .. } => {
            let mut parts = Vec::new();
            flatten_lvalue(lhs, &mut parts);
            for p in parts {
                let name = match p {
                    LValue::Name { name, .. } | LValue::Select { name, .. } => name.as_str(),
                    LValue::Concat(_) => continue,
                };
                if *blocking {
                    ba.insert(name);
                } else {
                    nba.insert(name);
                }
            }
        }
        Stmt::If { then, els, .. } => {
            assign_kinds(then, ba, nba);
            if let Some(e) = els {
                assign_kinds(e, ba, nba);
            }
        }
        Stmt::Case { items, default, .. } => {
            items.iter().for_each(|it| assign_kinds(&it.body, ba, nba));
            if let Some(d) = default {
                assign_kinds(d, ba, nba);
            }
        }
    }
}

fn flatten_lvalue<'a>(lv: &'a LValue, out: &mut Vec<&'a LValue>) {
    match lv {
        LValue::Concat(parts) => parts.iter().for_each(|p| flatten_lvalue(p, out)),
        other => out.push(other),
    }
}

fn expr_to_lvalue(e: &Expr) -> Option<LValue> {
    match e {
        Expr::Ident { package: None, name, span } => Some(LValue::Name { name: name.clone(), span: *span }),
        Expr::Select { package: None, name, sel, span } => {
            Some(LValue::Select { name: name.clone(), sel: sel.clone(), span: *span })
        }
        Expr::Concat(parts) => parts.iter().map(expr_to_lvalue).collect::<Option<Vec<_>>>().map(LValue::Concat),
        _ => None,
    }
}

// ---- bit-vector arithmetic ------------------------------------------------------

pub(crate) fn const_bits(b: &mut Builder, v: u128, width: usize) -> Bits {
    (0..width).map(|i| b.constant(i < 128 && (v >> i) & 1 == 1)).collect()
}

fn add_bits(b: &mut Builder, x: &[NetId], y: &[NetId], carry_in: bool) -> Bits {
    let mut carry = b.constant(carry_in);
    let mut out = Vec::with_capacity(x.len());
    for (&p, &q) in x.iter().zip(y) {
        let t = b.xor(p, q);
        out.push(b.xor(t, carry));
        let g = b.and(p, q);
        let pr = b.and(t, carry);
        carry = b.or(g, pr);
    }
    out
}

fn sub_bits(b: &mut Builder, x: &[NetId], y: &[NetId]) -> Bits {
    let ny: Bits = y.iter().map(|&q| b.not(q)).collect();
    add_bits(b, x, &ny, true)
}

fn mul_bits(b: &mut Builder, x: &[NetId], y: &[NetId]) -> Bits {
    let w = x.len();
    let mut acc = vec![b.constant(false); w];
    for (i, &yi) in y.iter().enumerate().take(w) {
        let zero = b.constant(false);
        let partial: Bits = (0..w).map(|j| if j < i { zero } else { b.and(x[j - i], yi) }).collect();
        acc = add_bits(b, &acc, &partial, false);
    }
    acc
}

fn shift_bits(b: &mut Builder, x: &[NetId], amount: &[NetId], left: bool) -> Bits {
    let w = x.len();
    let zero = b.constant(false);
    let mut cur = x.to_vec();
    for (k, &s) in amount.iter().enumerate() {
        let dist = 1usize.checked_shl(k as u32).filter(|&d| d < w);
        let shifted: Bits = match dist {
            Some(d) => (0..w)
                .map(|i| {
                    if left {
                        if i >= d { cur[i - d] } else { zero }
                    } else if i + d < w {
                        cur[i + d]
                    } else {
                        zero
                    }
                })
                .collect(),
            None => vec![zero; w],
        };
        cur = cur.iter().zip(&shifted).map(|(&c, &s2)| b.mux(s, c, s2)).collect();
    }
    cur
}

fn lt_bits(b: &mut Builder, x: &[NetId], y: &[NetId]) -> NetId {
    // x < y iff x - y borrows, i.e. the carry out of x + ~y + 1 is clear
    let mut carry = b.constant(true);
    for (&p, &q) in x.iter().zip(y) {
        let nq = b.not(q);
        let t = b.xor(p, nq);
        let g = b.and(p, nq);
        let pr = b.and(t, carry);
        carry = b.or(g, pr);
    }
    b.not(carry)
}

pub(crate) fn eq_bits(b: &mut Builder, x: &[NetId], y: &[NetId]) -> NetId {
    let mut acc = b.constant(true);
    for (&p, &q) in x.iter().zip(y) {
        let e = b.xnor(p, q);
        acc = b.and(acc, e);
    }
    acc
}
