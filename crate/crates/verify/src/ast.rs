// SPDX-License-Identifier: Apache-2.0

//! Typed view of a MiniHDL parse tree, restricted to what elaboration
//! supports. Anything outside that subset is reported as unsupported with
//! its location instead of being approximated.

use std::collections::BTreeMap;

use rulemask_core::grammar::{NodeId, ParseTree};
use rulemask_core::Span;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unsupported construct {what} at {span}")]
pub struct Unsupported {
    pub what: String,
    pub span: Span,
}

type LResult<T> = Result<T, Unsupported>;

#[derive(Debug, Clone, Default)]
pub struct Design {
    pub modules: BTreeMap<String, ModuleDecl>,
    pub packages: BTreeMap<String, PackageDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Import {
    pub package: String,
    /// `None` for a wildcard import.
    pub item: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PackageDecl {
    pub name: String,
    pub span: Span,
    pub imports: Vec<Import>,
    pub params: Vec<ParamDecl>,
}

#[derive(Debug, Clone)]
pub struct ParamDecl {
    pub name: String,
    pub value: Expr,
    /// Not overridable from an instantiation.
    pub local: bool,
    pub range: Option<Range>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct Range {
    pub msb: Expr,
    pub lsb: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Input,
    Output,
    Inout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Net,
    Variable,
}

#[derive(Debug, Clone)]
pub struct PortDecl {
    pub name: String,
    pub dir: Direction,
    pub kind: VarKind,
    pub range: Option<Range>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct SignalDecl {
    pub name: String,
    pub kind: VarKind,
    pub range: Option<Range>,
    /// Net declaration assignment for nets, initial value for variables.
    pub init: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct ModuleDecl {
    pub name: String,
    pub span: Span,
    pub imports: Vec<Import>,
    /// Header and body parameters in declaration order.
    pub params: Vec<ParamDecl>,
    pub ports: Vec<PortDecl>,
    pub signals: Vec<SignalDecl>,
    pub items: Vec<Item>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Pos,
    Neg,
}

#[derive(Debug, Clone)]
pub struct EventExpr {
    pub edge: Option<Edge>,
    pub expr: Expr,
}

#[derive(Debug, Clone)]
pub enum AlwaysKind {
    Comb,
    Edge(Vec<EventExpr>),
}

#[derive(Debug, Clone)]
pub enum Item {
    Assign { lhs: LValue, rhs: Expr, span: Span },
    Always { kind: AlwaysKind, body: Stmt, span: Span },
    Instance(Instance),
}

impl Item {
    pub fn span(&self) -> Span {
        match self {
            Item::Assign { span, .. } | Item::Always { span, .. } => *span,
            Item::Instance(i) => i.span,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Connection {
    /// `None` for positional connections.
    pub name: Option<String>,
    /// `None` for an explicitly empty connection.
    pub expr: Option<Expr>,
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub module: String,
    pub name: String,
    pub params: Vec<Connection>,
    pub ports: Vec<Connection>,
    pub span: Span,
}

#[derive(Debug, Clone)]
pub struct CaseItem {
    pub labels: Vec<Expr>,
    pub body: Stmt,
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Null,
    Block(Vec<Stmt>),
    Assign { blocking: bool, lhs: LValue, rhs: Expr, span: Span },
    If { cond: Expr, then: Box<Stmt>, els: Option<Box<Stmt>> },
    Case { subject: Expr, items: Vec<CaseItem>, default: Option<Box<Stmt>>, span: Span },
}

#[derive(Debug, Clone)]
pub enum Select {
    Bit(Expr),
    Range(Expr, Expr),
    /// `[base +: width]`
    Up(Expr, Expr),
    /// `[base -: width]`
    Down(Expr, Expr),
}

#[derive(Debug, Clone)]
pub enum LValue {
    Name { name: String, span: Span },
    Select { name: String, sel: Box<Select>, span: Span },
    Concat(Vec<LValue>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    BitNot,
    LogNot,
    Neg,
    Plus,
    RedAnd,
    RedOr,
    RedXor,
    RedNand,
    RedNor,
    RedXnor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Pow,
    Shl,
    Shr,
    AShl,
    AShr,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    CaseEq,
    CaseNe,
    BitAnd,
    BitOr,
    BitXor,
    BitXnor,
    LogAnd,
    LogOr,
}

/// A two-valued literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    /// Self-determined width.
    pub width: u32,
    /// Least significant bit first, exactly `width` long.
    pub bits: Vec<bool>,
    /// `'0` / `'1`: fills whatever width the context requires.
    pub fill: Option<bool>,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Literal(Literal),
    Ident { package: Option<String>, name: String, span: Span },
    Select { package: Option<String>, name: String, sel: Box<Select>, span: Span },
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
    Concat(Vec<Expr>),
    Repeat(Box<Expr>, Vec<Expr>),
    Call { name: String, args: Vec<Expr>, span: Span },
}

impl Expr {
    pub fn number(value: u64, width: u32) -> Expr {
        Expr::Literal(Literal { width, bits: (0..width).map(|i| i < 64 && (value >> i) & 1 == 1).collect(), fill: None })
    }
}

/// Parses a number token into a two-valued literal.
pub fn parse_literal(text: &str, span: Span) -> LResult<Literal> {
    let unsupported = |what: &str| Unsupported { what: format!("{what} in literal {text:?}"), span };
    let clean: String = text.chars().filter(|&c| c != '_').collect();
    let Some(tick) = clean.find('\'') else {
        let bits = decimal_bits(&clean).ok_or_else(|| unsupported("malformed decimal"))?;
        let width = bits.len().max(32) as u32;
        return Ok(Literal { width, bits: resize(bits, width as usize), fill: None });
    };
    let size = &clean[..tick];
    let mut rest = &clean[tick + 1..];
    if rest == "0" || rest == "1" {
        if !size.is_empty() {
            return Err(unsupported("size on unbased fill"));
        }
        let v = rest == "1";
        return Ok(Literal { width: 1, bits: vec![v], fill: Some(v) });
    }
    if rest.starts_with(['s', 'S']) {
        return Err(unsupported("signed base"));
    }
    let base = rest.chars().next().ok_or_else(|| unsupported("missing base"))?.to_ascii_lowercase();
    rest = &rest[1..];
    if rest.is_empty() {
        return Err(unsupported("missing digits"));
    }
    let bits = match base {
        'd' => decimal_bits(rest).ok_or_else(|| unsupported("malformed or four-valued decimal digits"))?,
        'h' | 'o' | 'b' => {
            let per = match base {
                'h' => 4,
                'o' => 3,
                _ => 1,
            };
            let mut bits = Vec::new();
            for c in rest.chars().rev() {
                let d = c.to_digit(1 << per).ok_or_else(|| {
                    if matches!(c, 'x' | 'X' | 'z' | 'Z' | '?') {
                        unsupported("four-valued digit")
                    } else {
                        unsupported("digit out of range")
                    }
                })?;
                bits.extend((0..per).map(|i| (d >> i) & 1 == 1));
            }
            bits
        }
        _ => return Err(unsupported("unknown base")),
    };
    let width = if size.is_empty() {
        bits.len().max(32) as u32
    } else {
        let w: u32 = size.parse().map_err(|_| unsupported("malformed size"))?;
        if w == 0 || w > 1 << 16 {
            return Err(unsupported("literal size"));
        }
        w
    };
    Ok(Literal { width, bits: resize(bits, width as usize), fill: None })
}

fn resize(mut bits: Vec<bool>, width: usize) -> Vec<bool> {
    bits.resize(width, false);
    bits
}

fn decimal_bits(digits: &str) -> Option<Vec<bool>> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: u128 = digits.parse().ok()?;
    let n = (128 - v.leading_zeros()) as usize;
    Some((0..n).map(|i| (v >> i) & 1 == 1).collect())
}

struct Lower<'t> {
    tree: &'t ParseTree,
}

impl<'t> Lower<'t> {
    fn kind(&self, id: NodeId) -> &'t str {
        self.tree.kind(id)
    }

    fn text(&self, id: NodeId) -> &'t str {
        self.tree.text(id)
    }

    fn kids(&self, id: NodeId) -> &'t [NodeId] {
        self.tree.children(id)
    }

    fn unsupported(&self, id: NodeId, what: &str) -> Unsupported {
        Unsupported { what: what.to_string(), span: self.tree.span(id) }
    }

    fn ident(&self, id: NodeId) -> LResult<String> {
        match self.kind(id) {
            "simple_identifier" => Ok(self.text(id).to_string()),
            _ => Err(self.unsupported(id, "expected an identifier")),
        }
    }

    fn first_ident(&self, id: NodeId) -> LResult<String> {
        let n = self.tree.first_child_of_kind(id, "simple_identifier").ok_or_else(|| self.unsupported(id, "missing name"))?;
        self.ident(n)
    }

    fn is_term(&self, id: NodeId, text: &str) -> bool {
        self.tree.node(id).terminal && self.text(id) == text
    }

    fn design(&self) -> LResult<Design> {
        let mut d = Design::default();
        for &item in self.kids(self.tree.root()) {
            match self.kind(item) {
                "module_declaration" => {
                    let m = self.module(item)?;
                    if d.modules.contains_key(&m.name) {
                        return Err(self.unsupported(item, &format!("duplicate module {}", m.name)));
                    }
                    d.modules.insert(m.name.clone(), m);
                }
                "package_declaration" => {
                    let p = self.package(item)?;
                    d.packages.insert(p.name.clone(), p);
                }
                other => return Err(self.unsupported(item, other)),
            }
        }
        Ok(d)
    }

    fn package(&self, id: NodeId) -> LResult<PackageDecl> {
        let mut p = PackageDecl { name: self.first_ident(id)?, span: self.tree.span(id), imports: vec![], params: vec![] };
        for &k in self.kids(id) {
            match self.kind(k) {
                "parameter_declaration" | "local_parameter_declaration" => self.params(k, &mut p.params)?,
                "package_import_declaration" => self.imports(k, &mut p.imports)?,
                _ => {}
            }
        }
        Ok(p)
    }

    fn imports(&self, id: NodeId, out: &mut Vec<Import>) -> LResult<()> {
        for item in self.tree.children_of_kind(id, "package_import_item") {
            let kids = self.kids(item);
            let package = self.ident(kids[0])?;
            let item = if self.is_term(kids[2], "*") { None } else { Some(self.ident(kids[2])?) };
            out.push(Import { package, item });
        }
        Ok(())
    }

    fn params(&self, id: NodeId, out: &mut Vec<ParamDecl>) -> LResult<()> {
        let local = self.kind(id) == "local_parameter_declaration";
        let mut range = None;
        if let Some(dt) = self.tree.first_child_of_kind(id, "data_type") {
            range = self.data_type(dt, true)?.1;
        }
        for pa in self.tree.children_of_kind(id, "param_assignment") {
            out.push(self.param_assignment(pa, local, range.clone())?);
        }
        Ok(())
    }

    fn param_assignment(&self, id: NodeId, local: bool, range: Option<Range>) -> LResult<ParamDecl> {
        let kids = self.kids(id);
        Ok(ParamDecl { name: self.ident(kids[0])?, value: self.expr(kids[2])?, local, range, span: self.tree.span(id) })
    }

    /// Returns whether a variable keyword was present and the packed range.
    fn data_type(&self, id: NodeId, allow_int: bool) -> LResult<(bool, Option<Range>)> {
        let mut var = false;
        let mut range = None;
        for &k in self.kids(id) {
            match self.kind(k) {
                "packed_dimension" => {
                    if range.is_some() {
                        return Err(self.unsupported(k, "multiple packed dimensions"));
                    }
                    let d = self.kids(k);
                    range = Some(Range { msb: self.expr(d[1])?, lsb: self.expr(d[3])? });
                }
                _ => match self.text(k) {
                    "reg" | "logic" => var = true,
                    "integer" | "int" if allow_int => {}
                    "unsigned" => {}
                    other => return Err(self.unsupported(k, &format!("type keyword {other}"))),
                },
            }
        }
        Ok((var, range))
    }

    fn module(&self, id: NodeId) -> LResult<ModuleDecl> {
        let mut m = ModuleDecl {
            name: self.first_ident(id)?,
            span: self.tree.span(id),
            imports: vec![],
            params: vec![],
            ports: vec![],
            signals: vec![],
            items: vec![],
        };
        for &k in self.kids(id) {
            match self.kind(k) {
                "package_import_declaration" => self.imports(k, &mut m.imports)?,
                "parameter_port_list" => {
                    for &p in self.kids(k) {
                        match self.kind(p) {
                            "parameter_declaration" | "local_parameter_declaration" => self.params(p, &mut m.params)?,
                            "param_assignment" => m.params.push(self.param_assignment(p, false, None)?),
                            _ => {}
                        }
                    }
                }
                "list_of_port_declarations" => self.ports(k, &mut m.ports)?,
                "parameter_declaration" | "local_parameter_declaration" => self.params(k, &mut m.params)?,
                "net_declaration" | "data_declaration" => self.declaration(k, &mut m)?,
                "continuous_assignment" => {
                    for va in self.tree.children_of_kind(k, "variable_assignment") {
                        let kids = self.kids(va);
                        m.items.push(Item::Assign {
                            lhs: self.lvalue(kids[0])?,
                            rhs: self.expr(kids[2])?,
                            span: self.tree.span(k),
                        });
                    }
                }
                "always_construct" => m.items.push(self.always(k)?),
                "module_program_interface_instantiation" => self.instances(k, &mut m.items)?,
                _ => {}
            }
        }
        Ok(m)
    }

    fn ports(&self, id: NodeId, out: &mut Vec<PortDecl>) -> LResult<()> {
        let mut prev: Option<(Direction, VarKind, Option<Range>)> = None;
        for p in self.tree.children_of_kind(id, "ansi_port_declaration") {
            let mut dir = None;
            let mut kind = VarKind::Net;
            let mut range = None;
            let mut typed = false;
            for &k in self.kids(p) {
                match (self.kind(k), self.text(k)) {
                    ("kw", "input") => dir = Some(Direction::Input),
                    ("kw", "output") => dir = Some(Direction::Output),
                    ("kw", "inout") => dir = Some(Direction::Inout),
                    ("kw", "wire") => typed = true,
                    ("data_type", _) => {
                        let (var, r) = self.data_type(k, false)?;
                        if var {
                            kind = VarKind::Variable;
                        }
                        range = r;
                        typed = true;
                    }
                    _ => {}
                }
            }
            // a bare name inherits the previous port's direction and type
            let (dir, kind, range) = match (dir, &prev) {
                (None, Some((d, k, r))) if !typed => (*d, *k, r.clone()),
                (None, Some((d, _, _))) => (*d, kind, range),
                (None, None) => return Err(self.unsupported(p, "port without direction")),
                (Some(d), _) => (d, kind, range),
            };
            if dir == Direction::Inout {
                return Err(self.unsupported(p, "inout port"));
            }
            prev = Some((dir, kind, range.clone()));
            out.push(PortDecl { name: self.first_ident(p)?, dir, kind, range, span: self.tree.span(p) });
        }
        Ok(())
    }

    fn declaration(&self, id: NodeId, m: &mut ModuleDecl) -> LResult<()> {
        let net = self.kind(id) == "net_declaration";
        let range = match self.tree.first_child_of_kind(id, "data_type") {
            Some(dt) => self.data_type(dt, false)?.1,
            None => None,
        };
        let item_kind = if net { "net_decl_assignment" } else { "variable_decl_assignment" };
        for a in self.tree.children_of_kind(id, item_kind) {
            let kids = self.kids(a);
            let init = if kids.len() == 3 { Some(self.expr(kids[2])?) } else { None };
            m.signals.push(SignalDecl {
                name: self.ident(kids[0])?,
                kind: if net { VarKind::Net } else { VarKind::Variable },
                range: range.clone(),
                init,
                span: self.tree.span(a),
            });
        }
        Ok(())
    }

    fn always(&self, id: NodeId) -> LResult<Item> {
        let kids = self.kids(id);
        let span = self.tree.span(id);
        let kw = self.text(kids[0]);
        let body = self.stmt(*kids.last().expect("always has a body"))?;
        let kind = match kw {
            "always_comb" => AlwaysKind::Comb,
            "always_latch" => return Err(self.unsupported(kids[0], "latch")),
            _ => {
                let ec = kids[1];
                if self.kids(ec).iter().any(|&k| self.is_term(k, "*")) {
                    AlwaysKind::Comb
                } else {
                    let mut events = Vec::new();
                    for ev in self.tree.children_of_kind(ec, "event_expression") {
                        let ek = self.kids(ev);
                        let (edge, e) = match self.text(ek[0]) {
                            "posedge" if ek.len() == 2 => (Some(Edge::Pos), ek[1]),
                            "negedge" if ek.len() == 2 => (Some(Edge::Neg), ek[1]),
                            _ => (None, ek[0]),
                        };
                        events.push(EventExpr { edge, expr: self.expr(e)? });
                    }
                    if events.iter().all(|e| e.edge.is_none()) {
                        AlwaysKind::Comb
                    } else if events.iter().any(|e| e.edge.is_none()) {
                        return Err(self.unsupported(ec, "mixed edge and level sensitivity"));
                    } else {
                        AlwaysKind::Edge(events)
                    }
                }
            }
        };
        Ok(Item::Always { kind, body, span })
    }

    fn connection(&self, id: NodeId) -> LResult<Connection> {
        let kids = self.kids(id);
        match self.kind(id) {
            "ordered_port_connection" | "ordered_parameter_assignment" => {
                Ok(Connection { name: None, expr: Some(self.expr(kids[0])?) })
            }
            _ => {
                let name = self.ident(kids[1])?;
                let expr = match kids.iter().find(|&&k| self.kind(k) == "expression") {
                    Some(&e) => Some(self.expr(e)?),
                    // `.name` without parentheses connects the same-named signal
                    None if kids.len() == 2 => Some(Expr::Ident { package: None, name: name.clone(), span: self.tree.span(id) }),
                    None => None,
                };
                Ok(Connection { name: Some(name), expr })
            }
        }
    }

    fn instances(&self, id: NodeId, out: &mut Vec<Item>) -> LResult<()> {
        let module = self.first_ident(id)?;
        let mut params = Vec::new();
        if let Some(pv) = self.tree.first_child_of_kind(id, "parameter_value_assignment") {
            for &k in self.kids(pv) {
                if matches!(self.kind(k), "named_parameter_assignment" | "ordered_parameter_assignment") {
                    params.push(self.connection(k)?);
                }
            }
        }
        for hi in self.tree.children_of_kind(id, "hierarchical_instance") {
            let name_node = self.tree.first_child_of_kind(hi, "name_of_instance").expect("instance has a name");
            let mut ports = Vec::new();
            for &k in self.kids(hi) {
                if matches!(self.kind(k), "named_port_connection" | "ordered_port_connection") {
                    ports.push(self.connection(k)?);
                }
            }
            out.push(Item::Instance(Instance {
                module: module.clone(),
                name: self.first_ident(name_node)?,
                params: params.clone(),
                ports,
                span: self.tree.span(id),
            }));
        }
        Ok(())
    }

    fn stmt(&self, id: NodeId) -> LResult<Stmt> {
        let kids = self.kids(id);
        let first = kids[0];
        match self.kind(first) {
            "punct" => Ok(Stmt::Null),
            "seq_block" => {
                let mut body = Vec::new();
                for s in self.tree.children_of_kind(first, "statement") {
                    body.push(self.stmt(s)?);
                }
                Ok(Stmt::Block(body))
            }
            "conditional_statement" => {
                let c = self.kids(first);
                let cond = self.expr(c[2])?;
                let then = Box::new(self.stmt(c[4])?);
                let els = if c.len() == 7 { Some(Box::new(self.stmt(c[6])?)) } else { None };
                Ok(Stmt::If { cond, then, els })
            }
            "case_statement" => {
                let c = self.kids(first);
                if self.text(c[0]) != "case" {
                    return Err(self.unsupported(c[0], self.text(c[0])));
                }
                let subject = self.expr(c[2])?;
                let mut items = Vec::new();
                let mut default = None;
                for ci in self.tree.children_of_kind(first, "case_item") {
                    let ck = self.kids(ci);
                    let body = self.stmt(*ck.last().expect("case item has a body"))?;
                    if self.is_term(ck[0], "default") {
                        if default.is_some() {
                            return Err(self.unsupported(ci, "second default item"));
                        }
                        default = Some(Box::new(body));
                    } else {
                        let mut labels = Vec::new();
                        for &l in ck {
                            if self.kind(l) == "expression" {
                                labels.push(self.expr(l)?);
                            }
                        }
                        items.push(CaseItem { labels, body });
                    }
                }
                Ok(Stmt::Case { subject, items, default, span: self.tree.span(first) })
            }
            "blocking_assignment" | "nonblocking_assignment" => {
                let a = self.kids(first);
                Ok(Stmt::Assign {
                    blocking: self.kind(first) == "blocking_assignment",
                    lhs: self.lvalue(a[0])?,
                    rhs: self.expr(a[2])?,
                    span: self.tree.span(first),
                })
            }
            other => Err(self.unsupported(first, other)),
        }
    }

    fn select(&self, id: NodeId) -> LResult<Select> {
        let k = self.kids(id);
        if self.kind(id) == "bit_select" {
            return Ok(Select::Bit(self.expr(k[1])?));
        }
        let (a, b) = (self.expr(k[1])?, self.expr(k[3])?);
        Ok(match self.text(k[2]) {
            ":" => Select::Range(a, b),
            "+:" => Select::Up(a, b),
            _ => Select::Down(a, b),
        })
    }

    fn lvalue(&self, id: NodeId) -> LResult<LValue> {
        let span = self.tree.span(id);
        if self.kind(id) == "simple_identifier" {
            return Ok(LValue::Name { name: self.ident(id)?, span });
        }
        let kids = self.kids(id);
        if self.is_term(kids[0], "{") {
            let mut parts = Vec::new();
            for &k in kids {
                if matches!(self.kind(k), "variable_lvalue" | "simple_identifier") {
                    parts.push(self.lvalue(k)?);
                }
            }
            return Ok(LValue::Concat(parts));
        }
        let name = self.ident(kids[0])?;
        if kids.len() != 2 {
            return Err(self.unsupported(id, "multiple selects"));
        }
        Ok(LValue::Select { name, sel: Box::new(self.select(kids[1])?), span })
    }

    fn expr(&self, id: NodeId) -> LResult<Expr> {
        let kids = self.kids(id);
        match self.kind(id) {
            "primary" => return self.primary(id),
            "expression" => {}
            other => return Err(self.unsupported(id, other)),
        }
        match kids.len() {
            1 => self.expr(kids[0]),
            2 => {
                let op = match self.text(kids[0]) {
                    "~" => UnaryOp::BitNot,
                    "!" => UnaryOp::LogNot,
                    "-" => UnaryOp::Neg,
                    "+" => UnaryOp::Plus,
                    "&" => UnaryOp::RedAnd,
                    "|" => UnaryOp::RedOr,
                    "^" => UnaryOp::RedXor,
                    "~&" => UnaryOp::RedNand,
                    "~|" => UnaryOp::RedNor,
                    _ => UnaryOp::RedXnor,
                };
                Ok(Expr::Unary(op, Box::new(self.expr(kids[1])?)))
            }
            3 => {
                let op = match self.text(kids[1]) {
                    "+" => BinaryOp::Add,
                    "-" => BinaryOp::Sub,
                    "*" => BinaryOp::Mul,
                    "/" => BinaryOp::Div,
                    "%" => BinaryOp::Mod,
                    "**" => BinaryOp::Pow,
                    "<<" => BinaryOp::Shl,
                    ">>" => BinaryOp::Shr,
                    "<<<" => BinaryOp::AShl,
                    ">>>" => BinaryOp::AShr,
                    "<" => BinaryOp::Lt,
                    "<=" => BinaryOp::Le,
                    ">" => BinaryOp::Gt,
                    ">=" => BinaryOp::Ge,
                    "==" => BinaryOp::Eq,
                    "!=" => BinaryOp::Ne,
                    "===" => BinaryOp::CaseEq,
                    "!==" => BinaryOp::CaseNe,
                    "&" => BinaryOp::BitAnd,
                    "|" => BinaryOp::BitOr,
                    "^" => BinaryOp::BitXor,
                    "~^" | "^~" => BinaryOp::BitXnor,
                    "&&" => BinaryOp::LogAnd,
                    "||" => BinaryOp::LogOr,
                    other => return Err(self.unsupported(kids[1], other)),
                };
                Ok(Expr::Binary(op, Box::new(self.expr(kids[0])?), Box::new(self.expr(kids[2])?)))
            }
            5 => Ok(Expr::Cond(
                Box::new(self.expr(kids[0])?),
                Box::new(self.expr(kids[2])?),
                Box::new(self.expr(kids[4])?),
            )),
            _ => Err(self.unsupported(id, "expression shape")),
        }
    }

    fn primary(&self, id: NodeId) -> LResult<Expr> {
        let kids = self.kids(id);
        let first = kids[0];
        let span = self.tree.span(id);
        match self.kind(first) {
            "number" => Ok(Expr::Literal(parse_literal(self.text(first), self.tree.span(first))?)),
            "string" => Err(self.unsupported(first, "string literal")),
            "punct" => self.expr(kids[1]),
            "concatenation" => {
                let mut parts = Vec::new();
                for e in self.tree.children_of_kind(first, "expression") {
                    parts.push(self.expr(e)?);
                }
                Ok(Expr::Concat(parts))
            }
            "multiple_concatenation" => {
                let mk = self.kids(first);
                let count = self.expr(mk[1])?;
                let Expr::Concat(parts) = self.primary_concat(mk[2])? else { unreachable!() };
                Ok(Expr::Repeat(Box::new(count), parts))
            }
            "system_tf_call" => {
                let ck = self.kids(first);
                let mut args = Vec::new();
                for e in self.tree.children_of_kind(first, "expression") {
                    args.push(self.expr(e)?);
                }
                Ok(Expr::Call { name: self.text(ck[0]).to_string(), args, span })
            }
            _ => {
                let mut package = None;
                let mut i = 0;
                if self.kind(kids[0]) == "package_scope" {
                    package = Some(self.first_ident(kids[0])?);
                    i = 1;
                }
                let name = self.ident(kids[i])?;
                match &kids[i + 1..] {
                    [] => Ok(Expr::Ident { package, name, span }),
                    [sel] => Ok(Expr::Select { package, name, sel: Box::new(self.select(*sel)?), span }),
                    _ => Err(self.unsupported(id, "multiple selects")),
                }
            }
        }
    }

    fn primary_concat(&self, id: NodeId) -> LResult<Expr> {
        match self.kind(id) {
            "concatenation" => {
                let mut parts = Vec::new();
                for e in self.tree.children_of_kind(id, "expression") {
                    parts.push(self.expr(e)?);
                }
                Ok(Expr::Concat(parts))
            }
            _ => Err(self.unsupported(id, "nested replication")),
        }
    }
}

/// Lowers a parsed compilation unit.
pub fn lower(tree: &ParseTree) -> Result<Design, Unsupported> {
    Lower { tree }.design()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rulemask_core::grammar::parse_source;

    #[test]
    fn literals() {
        let s = Span::new(0, 1);
        assert_eq!(parse_literal("8'hA5", s).unwrap().bits, [true, false, true, false, false, true, false, true]);
        let d = parse_literal("5", s).unwrap();
        assert_eq!((d.width, &d.bits[..3]), (32, &[true, false, true][..]));
        assert_eq!(parse_literal("3'd9", s).unwrap().bits, [true, false, false]);
        assert_eq!(parse_literal("'1", s).unwrap().fill, Some(true));
        assert_eq!(parse_literal("'hF", s).unwrap().width, 32);
        assert_eq!(parse_literal("4'b1_0_1_0", s).unwrap().bits, [false, true, false, true]);
        assert!(parse_literal("4'bx01z", s).is_err());
        assert!(parse_literal("4'sd3", s).is_err());
    }

    #[test]
    fn lowers_a_small_module() {
        let src = "module m #(parameter W = 4) (input clk, input [W-1:0] a, b, output reg [W-1:0] q);\n\
                   wire [W-1:0] s = a + b;\n\
                   always @(posedge clk) if (a[0]) q <= s; else q <= {a[1:0], 2'b01};\n\
                   sub #(.N(2)) u (.x(a), .y());\n\
                   endmodule";
        let d = lower(&parse_source(src).unwrap()).unwrap();
        let m = &d.modules["m"];
        assert_eq!(m.params.len(), 1);
        assert_eq!(m.ports.iter().map(|p| (p.name.as_str(), p.dir)).collect::<Vec<_>>(), [
            ("clk", Direction::Input),
            ("a", Direction::Input),
            ("b", Direction::Input),
            ("q", Direction::Output)
        ]);
        assert!(m.ports[2].range.is_some());
        assert_eq!(m.ports[3].kind, VarKind::Variable);
        assert!(m.signals[0].init.is_some());
        assert_eq!(m.items.len(), 2);
        let Item::Instance(inst) = &m.items[1] else { panic!() };
        assert_eq!((inst.module.as_str(), inst.name.as_str(), inst.ports.len()), ("sub", "u", 2));
        assert!(inst.ports[1].expr.is_none());
    }

    #[test]
    fn rejects_out_of_subset_constructs() {
        let latch = "module m(input a, output reg y); always_latch y = a; endmodule";
        assert!(lower(&parse_source(latch).unwrap()).is_err());
        let signed = "module m(input signed [3:0] a, output y); assign y = a[0]; endmodule";
        assert!(lower(&parse_source(signed).unwrap()).unwrap_err().what.contains("signed"));
    }
}
