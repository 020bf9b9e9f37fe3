// SPDX-License-Identifier: Apache-2.0

//! Recursive-descent parser for the MiniHDL subset.
//!
//! Node kinds follow SystemVerilog grammar naming so rule selections carry
//! over between languages. Expressions use precedence climbing; every
//! expression position in the grammar produces an `expression` node, and
//! binary operands are themselves expressions.

use std::sync::Arc;

use super::lexer::{tokenize, LexError, Lexed, Token, TokenKind};
use super::tree::{NodeId, ParseTree, TreeBuilder};

pub const RULE_NAMES: &[&str] = &[
    "always_construct",
    "ansi_port_declaration",
    "bit_select",
    "blocking_assignment",
    "case_item",
    "case_statement",
    "compilation_unit",
    "concatenation",
    "conditional_statement",
    "continuous_assignment",
    "data_declaration",
    "data_type",
    "event_control",
    "event_expression",
    "expression",
    "hierarchical_instance",
    "list_of_port_declarations",
    "local_parameter_declaration",
    "module_declaration",
    "module_program_interface_instantiation",
    "multiple_concatenation",
    "name_of_instance",
    "named_parameter_assignment",
    "named_port_connection",
    "net_decl_assignment",
    "net_declaration",
    "nonblocking_assignment",
    "ordered_parameter_assignment",
    "ordered_port_connection",
    "package_declaration",
    "package_import_declaration",
    "package_import_item",
    "package_scope",
    "packed_dimension",
    "param_assignment",
    "parameter_declaration",
    "parameter_port_list",
    "parameter_value_assignment",
    "part_select",
    "primary",
    "seq_block",
    "simple_identifier",
    "statement",
    "system_tf_call",
    "variable_assignment",
    "variable_decl_assignment",
    "variable_lvalue",
];

const MAX_NESTING: usize = 200;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {offset}: expected {}, found {found}", expected.join(" | "))]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SyntaxError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl SyntaxError {
    pub fn offset(&self) -> usize {
        match self {
            SyntaxError::Lex(e) => e.offset(),
            SyntaxError::Parse(e) => e.offset,
        }
    }
}

/// Parses a tokenized compilation unit. The source is rebuilt from the
/// tokens and their trivia.
pub fn parse(lexed: &Lexed) -> Result<ParseTree, ParseError> {
    let source: Arc<str> = Arc::from(lexed.reconstruct());
    run(&lexed.tokens, source, "compilation_unit")
}

pub fn parse_source(source: &str) -> Result<ParseTree, SyntaxError> {
    let lexed = tokenize(source)?;
    Ok(run(&lexed.tokens, Arc::from(source), "compilation_unit")?)
}

/// Parses `source` using `rule` as the start symbol. The whole input must
/// be consumed.
pub fn parse_rule(source: &str, rule: &str) -> Result<ParseTree, SyntaxError> {
    let lexed = tokenize(source)?;
    Ok(run(&lexed.tokens, Arc::from(source), rule)?)
}

fn run(tokens: &[Token], source: Arc<str>, start: &str) -> Result<ParseTree, ParseError> {
    let mut p = Parser { tokens, pos: 0, b: TreeBuilder::default(), depth: 0, eof: source.len() };
    let root = match start {
        "compilation_unit" => p.compilation_unit()?,
        "module_declaration" => p.module_declaration()?,
        "package_declaration" => p.package_declaration()?,
        "ansi_port_declaration" => p.ansi_port_declaration()?,
        "parameter_declaration" => p.parameter_declaration(true)?,
        "local_parameter_declaration" => p.parameter_declaration(true)?,
        "module_program_interface_instantiation" => p.instantiation()?,
        "continuous_assignment" => p.continuous_assignment()?,
        "always_construct" => p.always_construct()?,
        "statement" => p.statement()?,
        "seq_block" => p.seq_block()?,
        "conditional_statement" => p.conditional_statement()?,
        "case_statement" => p.case_statement()?,
        "blocking_assignment" | "nonblocking_assignment" => {
            let lv = p.variable_lvalue()?;
            p.procedural_assignment(lv)?
        }
        "variable_assignment" => p.variable_assignment()?,
        "expression" => p.expression()?,
        "simple_identifier" => p.simple_identifier()?,
        other => {
            return Err(ParseError {
                offset: 0,
                expected: vec!["a supported start rule".into()],
                found: other.to_string(),
            })
        }
    };
    if p.b.kind(root) != start && start != "statement" {
        return Err(p.error_at(0, &[start]));
    }
    if p.pos < tokens.len() {
        return Err(p.error(&["end of input"]));
    }
    Ok(p.b.finish(root, source))
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    b: TreeBuilder,
    depth: usize,
    eof: usize,
}

type PResult = Result<NodeId, ParseError>;

fn binary_power(tok: &Token) -> Option<(u8, u8)> {
    if tok.kind != TokenKind::Op {
        return None;
    }
    let lbp = match tok.text.as_str() {
        "?" => return Some((2, 1)),
        "||" => 3,
        "&&" => 4,
        "|" => 5,
        "^" | "~^" | "^~" => 6,
        "&" => 7,
        "==" | "!=" | "===" | "!==" => 8,
        "<" | "<=" | ">" | ">=" => 9,
        "<<" | ">>" | "<<<" | ">>>" => 10,
        "+" | "-" => 11,
        "*" | "/" | "%" => 12,
        "**" => 13,
        _ => return None,
    };
    Some((lbp, lbp + 1))
}

fn is_unary(tok: &Token) -> bool {
    tok.kind == TokenKind::Op && matches!(tok.text.as_str(), "!" | "~" | "-" | "+" | "&" | "|" | "^" | "~&" | "~|" | "~^" | "^~")
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, n: usize) -> Option<&'t Token> {
        self.tokens.get(self.pos + n)
    }

    fn at(&self, text: &str) -> bool {
        self.peek().is_some_and(|t| t.text == text && t.kind != TokenKind::Ident && t.kind != TokenKind::Str)
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.eof, |t| t.span.start)
    }

    fn error(&self, expected: &[&str]) -> ParseError {
        ParseError {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().map_or_else(|| "end of input".to_string(), |t| format!("{:?}", t.text)),
        }
    }

    fn error_at(&self, offset: usize, expected: &[&str]) -> ParseError {
        ParseError { offset, ..self.error(expected) }
    }

    fn bump(&mut self) -> NodeId {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        self.b.terminal(t.kind.name(), t.span)
    }

    fn expect(&mut self, text: &str) -> PResult {
        if self.at(text) {
            Ok(self.bump())
        } else {
            Err(self.error(&[text]))
        }
    }

    fn eat(&mut self, text: &str, into: &mut Vec<NodeId>) -> bool {
        if self.at(text) {
            into.push(self.bump());
            true
        } else {
            false
        }
    }

    fn rule(&mut self, kind: &'static str, children: Vec<NodeId>) -> NodeId {
        let at = self.offset();
        self.b.rule(kind, children, at)
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(ParseError {
                offset: self.offset(),
                expected: vec!["shallower nesting".into()],
                found: format!("nesting deeper than {MAX_NESTING}"),
            });
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn compilation_unit(&mut self) -> PResult {
        let mut kids = Vec::new();
        while let Some(t) = self.peek() {
            let item = match (t.kind, t.text.as_str()) {
                (TokenKind::Keyword, "module") => self.module_declaration()?,
                (TokenKind::Keyword, "package") => self.package_declaration()?,
                _ => return Err(self.error(&["module", "package"])),
            };
            kids.push(item);
        }
        Ok(self.b.rule("compilation_unit", kids, 0))
    }

    fn simple_identifier(&mut self) -> PResult {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident && !t.text.starts_with('$') => {
                let leaf = self.bump();
                Ok(self.rule("simple_identifier", vec![leaf]))
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn end_label(&mut self, kids: &mut Vec<NodeId>) -> Result<(), ParseError> {
        if self.eat(":", kids) {
            kids.push(self.simple_identifier()?);
        }
        Ok(())
    }

    fn module_declaration(&mut self) -> PResult {
        let mut kids = vec![self.expect("module")?];
        kids.push(self.simple_identifier()?);
        while self.at("import") {
            kids.push(self.package_import_declaration()?);
        }
        if self.at("#") {
            kids.push(self.parameter_port_list()?);
        }
        if self.at("(") {
            kids.push(self.list_of_port_declarations()?);
        }
        kids.push(self.expect(";")?);
        loop {
            match self.peek() {
                None => return Err(self.error(&["endmodule"])),
                Some(t) if t.is(TokenKind::Keyword, "endmodule") => break,
                Some(_) => self.module_item(&mut kids)?,
            }
        }
        kids.push(self.bump());
        self.end_label(&mut kids)?;
        Ok(self.rule("module_declaration", kids))
    }

    fn module_item(&mut self, kids: &mut Vec<NodeId>) -> Result<(), ParseError> {
        let t = self.peek().expect("caller checked");
        match (t.kind, t.text.as_str()) {
            (TokenKind::Keyword, "parameter" | "localparam") => {
                kids.push(self.parameter_declaration(false)?);
                kids.push(self.expect(";")?);
            }
            (TokenKind::Keyword, "wire") => kids.push(self.net_declaration()?),
            (TokenKind::Keyword, "reg" | "logic" | "integer" | "int") => kids.push(self.data_declaration()?),
            (TokenKind::Keyword, "assign") => kids.push(self.continuous_assignment()?),
            (TokenKind::Keyword, "always" | "always_ff" | "always_comb" | "always_latch") => {
                kids.push(self.always_construct()?)
            }
            (TokenKind::Keyword, "import") => kids.push(self.package_import_declaration()?),
            (TokenKind::Ident, _) if !t.text.starts_with('$') => kids.push(self.instantiation()?),
            _ => {
                return Err(self.error(&[
                    "parameter",
                    "localparam",
                    "wire",
                    "reg",
                    "logic",
                    "assign",
                    "always",
                    "import",
                    "module instantiation",
                    "endmodule",
                ]))
            }
        }
        Ok(())
    }

    fn package_declaration(&mut self) -> PResult {
        let mut kids = vec![self.expect("package")?];
        kids.push(self.simple_identifier()?);
        kids.push(self.expect(";")?);
        loop {
            match self.peek() {
                None => return Err(self.error(&["endpackage"])),
                Some(t) if t.is(TokenKind::Keyword, "endpackage") => break,
                Some(t) if t.is(TokenKind::Keyword, "parameter") || t.is(TokenKind::Keyword, "localparam") => {
                    kids.push(self.parameter_declaration(false)?);
                    kids.push(self.expect(";")?);
                }
                Some(t) if t.is(TokenKind::Keyword, "import") => kids.push(self.package_import_declaration()?),
                Some(_) => return Err(self.error(&["parameter", "localparam", "import", "endpackage"])),
            }
        }
        kids.push(self.bump());
        self.end_label(&mut kids)?;
        Ok(self.rule("package_declaration", kids))
    }

    fn package_import_declaration(&mut self) -> PResult {
        let mut kids = vec![self.expect("import")?];
        loop {
            let mut item = vec![self.simple_identifier()?];
            item.push(self.expect("::")?);
            if self.at("*") {
                item.push(self.bump());
            } else {
                item.push(self.simple_identifier()?);
            }
            kids.push(self.rule("package_import_item", item));
            if !self.eat(",", &mut kids) {
                break;
            }
        }
        kids.push(self.expect(";")?);
        Ok(self.rule("package_import_declaration", kids))
    }

    fn parameter_port_list(&mut self) -> PResult {
        let mut kids = vec![self.expect("#")?];
        kids.push(self.expect("(")?);
        if !self.at(")") {
            loop {
                if self.at("parameter") || self.at("localparam") {
                    kids.push(self.parameter_declaration(true)?);
                } else {
                    kids.push(self.param_assignment()?);
                }
                if !self.eat(",", &mut kids) {
                    break;
                }
            }
        }
        kids.push(self.expect(")")?);
        Ok(self.rule("parameter_port_list", kids))
    }

    /// `parameter [type] a = e {, b = e}`; the terminating `;` belongs to
    /// the enclosing item. Inside a port list the assignment list stops at
    /// a comma that is not followed by `identifier =`.
    fn parameter_declaration(&mut self, in_port_list: bool) -> PResult {
        let kind = if self.at("localparam") { "local_parameter_declaration" } else { "parameter_declaration" };
        let mut kids = vec![if self.at("localparam") { self.bump() } else { self.expect("parameter")? }];
        if let Some(dt) = self.data_type(true)? {
            kids.push(dt);
        }
        kids.push(self.param_assignment()?);
        loop {
            let continues = self.at(",")
                && (!in_port_list
                    || (self.peek_at(1).is_some_and(|t| t.kind == TokenKind::Ident)
                        && self.peek_at(2).is_some_and(|t| t.text == "=")));
            if !continues {
                break;
            }
            kids.push(self.bump());
            kids.push(self.param_assignment()?);
        }
        Ok(self.rule(kind, kids))
    }

    fn param_assignment(&mut self) -> PResult {
        let mut kids = vec![self.simple_identifier()?];
        kids.push(self.expect("=")?);
        kids.push(self.expression()?);
        Ok(self.rule("param_assignment", kids))
    }

    /// Optional `[reg|logic|integer|int] [signed|unsigned] {packed_dimension}`.
    fn data_type(&mut self, allow_var_kw: bool) -> Result<Option<NodeId>, ParseError> {
        let mut kids = Vec::new();
        if allow_var_kw && (self.at("reg") || self.at("logic") || self.at("integer") || self.at("int")) {
            kids.push(self.bump());
        }
        if self.at("signed") || self.at("unsigned") {
            kids.push(self.bump());
        }
        while self.at("[") {
            kids.push(self.packed_dimension()?);
        }
        Ok(if kids.is_empty() { None } else { Some(self.rule("data_type", kids)) })
    }

    fn packed_dimension(&mut self) -> PResult {
        let mut kids = vec![self.expect("[")?];
        kids.push(self.expression()?);
        kids.push(self.expect(":")?);
        kids.push(self.expression()?);
        kids.push(self.expect("]")?);
        Ok(self.rule("packed_dimension", kids))
    }

    fn list_of_port_declarations(&mut self) -> PResult {
        let mut kids = vec![self.expect("(")?];
        if !self.at(")") {
            loop {
                kids.push(self.ansi_port_declaration()?);
                if !self.eat(",", &mut kids) {
                    break;
                }
            }
        }
        kids.push(self.expect(")")?);
        Ok(self.rule("list_of_port_declarations", kids))
    }

    fn ansi_port_declaration(&mut self) -> PResult {
        let mut kids = Vec::new();
        if self.at("input") || self.at("output") || self.at("inout") {
            kids.push(self.bump());
        }
        if self.at("wire") {
            kids.push(self.bump());
        }
        if let Some(dt) = self.data_type(true)? {
            kids.push(dt);
        }
        kids.push(self.simple_identifier()?);
        Ok(self.rule("ansi_port_declaration", kids))
    }

    fn net_declaration(&mut self) -> PResult {
        let mut kids = vec![self.expect("wire")?];
        if let Some(dt) = self.data_type(false)? {
            kids.push(dt);
        }
        loop {
            let mut a = vec![self.simple_identifier()?];
            if self.eat("=", &mut a) {
                a.push(self.expression()?);
            }
            kids.push(self.rule("net_decl_assignment", a));
            if !self.eat(",", &mut kids) {
                break;
            }
        }
        kids.push(self.expect(";")?);
        Ok(self.rule("net_declaration", kids))
    }

    fn data_declaration(&mut self) -> PResult {
        let mut kids = Vec::new();
        kids.push(self.data_type(true)?.expect("caller saw a type keyword"));
        loop {
            let mut a = vec![self.simple_identifier()?];
            if self.eat("=", &mut a) {
                a.push(self.expression()?);
            }
            kids.push(self.rule("variable_decl_assignment", a));
            if !self.eat(",", &mut kids) {
                break;
            }
        }
        kids.push(self.expect(";")?);
        Ok(self.rule("data_declaration", kids))
    }

    fn continuous_assignment(&mut self) -> PResult {
        let mut kids = vec![self.expect("assign")?];
        loop {
            kids.push(self.variable_assignment()?);
            if !self.eat(",", &mut kids) {
                break;
            }
        }
        kids.push(self.expect(";")?);
        Ok(self.rule("continuous_assignment", kids))
    }

    fn variable_assignment(&mut self) -> PResult {
        let mut kids = vec![self.variable_lvalue()?];
        kids.push(self.expect("=")?);
        kids.push(self.expression()?);
        Ok(self.rule("variable_assignment", kids))
    }

    /// A bare identifier is returned as `simple_identifier`; selects and
    /// concatenations are wrapped in `variable_lvalue`.
    fn variable_lvalue(&mut self) -> PResult {
        self.enter()?;
        let result = if self.at("{") {
            let mut kids = vec![self.bump()];
            loop {
                kids.push(self.variable_lvalue()?);
                if !self.eat(",", &mut kids) {
                    break;
                }
            }
            kids.push(self.expect("}")?);
            Ok(self.rule("variable_lvalue", kids))
        } else {
            let id = self.simple_identifier()?;
            if self.at("[") {
                let mut kids = vec![id];
                while self.at("[") {
                    kids.push(self.select()?);
                }
                Ok(self.rule("variable_lvalue", kids))
            } else {
                Ok(id)
            }
        };
        self.leave();
        result
    }

    fn select(&mut self) -> PResult {
        let mut kids = vec![self.expect("[")?];
        kids.push(self.expression()?);
        let kind = if self.at(":") || self.at("+:") || self.at("-:") {
            kids.push(self.bump());
            kids.push(self.expression()?);
            "part_select"
        } else {
            "bit_select"
        };
        kids.push(self.expect("]")?);
        Ok(self.rule(kind, kids))
    }

    fn always_construct(&mut self) -> PResult {
        let mut kids = Vec::new();
        let kw = self.peek().map(|t| t.text.clone()).unwrap_or_default();
        match kw.as_str() {
            "always" | "always_ff" => {
                kids.push(self.bump());
                kids.push(self.event_control()?);
            }
            "always_comb" | "always_latch" => kids.push(self.bump()),
            _ => return Err(self.error(&["always", "always_ff", "always_comb"])),
        }
        kids.push(self.statement()?);
        Ok(self.rule("always_construct", kids))
    }

    fn event_control(&mut self) -> PResult {
        let mut kids = vec![self.expect("@")?];
        if self.eat("*", &mut kids) {
            return Ok(self.rule("event_control", kids));
        }
        kids.push(self.expect("(")?);
        if !self.eat("*", &mut kids) {
            loop {
                let mut ev = Vec::new();
                if self.at("posedge") || self.at("negedge") {
                    ev.push(self.bump());
                }
                ev.push(self.expression()?);
                kids.push(self.rule("event_expression", ev));
                if !(self.eat("or", &mut kids) || self.eat(",", &mut kids)) {
                    break;
                }
            }
        }
        kids.push(self.expect(")")?);
        Ok(self.rule("event_control", kids))
    }

    fn statement(&mut self) -> PResult {
        self.enter()?;
        let kids = match self.peek() {
            None => return Err(self.error(&["statement"])),
            Some(t) => match (t.kind, t.text.as_str()) {
                (TokenKind::Keyword, "begin") => vec![self.seq_block()?],
                (TokenKind::Keyword, "if") => vec![self.conditional_statement()?],
                (TokenKind::Keyword, "case") => vec![self.case_statement()?],
                (TokenKind::Punct, ";") => vec![self.bump()],
                (TokenKind::Ident, _) | (TokenKind::Punct, "{") => {
                    let lv = self.variable_lvalue()?;
                    let assign = self.procedural_assignment(lv)?;
                    vec![assign, self.expect(";")?]
                }
                _ => return Err(self.error(&["begin", "if", "case", ";", "assignment"])),
            },
        };
        self.leave();
        Ok(self.rule("statement", kids))
    }

    fn procedural_assignment(&mut self, lvalue: NodeId) -> PResult {
        let kind = if self.at("=") {
            "blocking_assignment"
        } else if self.at("<=") {
            "nonblocking_assignment"
        } else {
            return Err(self.error(&["=", "<="]));
        };
        let op = self.bump();
        let rhs = self.expression()?;
        Ok(self.rule(kind, vec![lvalue, op, rhs]))
    }

    fn seq_block(&mut self) -> PResult {
        let mut kids = vec![self.expect("begin")?];
        self.end_label(&mut kids)?;
        while !self.at("end") {
            if self.peek().is_none() {
                return Err(self.error(&["end"]));
            }
            kids.push(self.statement()?);
        }
        kids.push(self.bump());
        self.end_label(&mut kids)?;
        Ok(self.rule("seq_block", kids))
    }

    fn conditional_statement(&mut self) -> PResult {
        let mut kids = vec![self.expect("if")?];
        kids.push(self.expect("(")?);
        kids.push(self.expression()?);
        kids.push(self.expect(")")?);
        kids.push(self.statement()?);
        if self.eat("else", &mut kids) {
            kids.push(self.statement()?);
        }
        Ok(self.rule("conditional_statement", kids))
    }

    fn case_statement(&mut self) -> PResult {
        let mut kids = vec![self.expect("case")?];
        kids.push(self.expect("(")?);
        kids.push(self.expression()?);
        kids.push(self.expect(")")?);
        loop {
            if self.at("endcase") {
                break;
            }
            if self.peek().is_none() {
                return Err(self.error(&["endcase"]));
            }
            let mut item = Vec::new();
            if self.eat("default", &mut item) {
                self.eat(":", &mut item);
            } else {
                loop {
                    item.push(self.expression()?);
                    if !self.eat(",", &mut item) {
                        break;
                    }
                }
                item.push(self.expect(":")?);
            }
            item.push(self.statement()?);
            kids.push(self.rule("case_item", item));
        }
        if kids.len() == 4 {
            return Err(self.error(&["case item"]));
        }
        kids.push(self.bump());
        Ok(self.rule("case_statement", kids))
    }

    fn instantiation(&mut self) -> PResult {
        let mut kids = vec![self.simple_identifier()?];
        if self.at("#") {
            let mut pv = vec![self.bump()];
            pv.push(self.expect("(")?);
            if !self.at(")") {
                loop {
                    if self.at(".") {
                        let mut named = vec![self.bump()];
                        named.push(self.simple_identifier()?);
                        named.push(self.expect("(")?);
                        if !self.at(")") {
                            named.push(self.expression()?);
                        }
                        named.push(self.expect(")")?);
                        pv.push(self.rule("named_parameter_assignment", named));
                    } else {
                        let e = self.expression()?;
                        pv.push(self.rule("ordered_parameter_assignment", vec![e]));
                    }
                    if !self.eat(",", &mut pv) {
                        break;
                    }
                }
            }
            pv.push(self.expect(")")?);
            kids.push(self.rule("parameter_value_assignment", pv));
        }
        loop {
            let name = self.simple_identifier()?;
            let mut inst = vec![self.rule("name_of_instance", vec![name])];
            inst.push(self.expect("(")?);
            if !self.at(")") {
                loop {
                    if self.at(".") {
                        let mut named = vec![self.bump()];
                        named.push(self.simple_identifier()?);
                        if self.eat("(", &mut named) {
                            if !self.at(")") {
                                named.push(self.expression()?);
                            }
                            named.push(self.expect(")")?);
                        }
                        inst.push(self.rule("named_port_connection", named));
                    } else {
                        let e = self.expression()?;
                        inst.push(self.rule("ordered_port_connection", vec![e]));
                    }
                    if !self.eat(",", &mut inst) {
                        break;
                    }
                }
            }
            inst.push(self.expect(")")?);
            kids.push(self.rule("hierarchical_instance", inst));
            if !self.eat(",", &mut kids) {
                break;
            }
        }
        kids.push(self.expect(";")?);
        Ok(self.rule("module_program_interface_instantiation", kids))
    }

    fn expression(&mut self) -> PResult {
        self.expr_bp(0)
    }

    fn expr_bp(&mut self, min_bp: u8) -> PResult {
        self.enter()?;
        let mut lhs = self.unary()?;
        while let Some(tok) = self.peek() {
            let Some((lbp, rbp)) = binary_power(tok) else { break };
            if lbp < min_bp {
                break;
            }
            let op = self.bump();
            if self.b.kind(op) == "op" && tok.text == "?" {
                let then = self.expression()?;
                let colon = self.expect(":")?;
                let els = self.expr_bp(rbp)?;
                lhs = self.rule("expression", vec![lhs, op, then, colon, els]);
            } else {
                let rhs = self.expr_bp(rbp)?;
                lhs = self.rule("expression", vec![lhs, op, rhs]);
            }
        }
        self.leave();
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult {
        match self.peek() {
            Some(t) if is_unary(t) => {
                let op = self.bump();
                let operand = if self.peek().is_some_and(is_unary) {
                    self.enter()?;
                    let inner = self.unary()?;
                    self.leave();
                    inner
                } else {
                    self.primary()?
                };
                Ok(self.rule("expression", vec![op, operand]))
            }
            _ => {
                let p = self.primary()?;
                Ok(self.rule("expression", vec![p]))
            }
        }
    }

    fn primary(&mut self) -> PResult {
        let Some(t) = self.peek() else {
            return Err(self.error(&["expression"]));
        };
        let kids = match t.kind {
            TokenKind::Number | TokenKind::Str => vec![self.bump()],
            TokenKind::Ident if t.text.starts_with('$') => {
                let mut call = vec![self.bump()];
                if self.eat("(", &mut call) {
                    loop {
                        call.push(self.expression()?);
                        if !self.eat(",", &mut call) {
                            break;
                        }
                    }
                    call.push(self.expect(")")?);
                }
                vec![self.rule("system_tf_call", call)]
            }
            TokenKind::Ident => {
                let mut kids = Vec::new();
                if self.peek_at(1).is_some_and(|n| n.text == "::") {
                    let pkg = self.simple_identifier()?;
                    let sep = self.bump();
                    kids.push(self.rule("package_scope", vec![pkg, sep]));
                }
                kids.push(self.simple_identifier()?);
                while self.at("[") {
                    kids.push(self.select()?);
                }
                kids
            }
            TokenKind::Punct if t.text == "(" => {
                let open = self.bump();
                let inner = self.expression()?;
                vec![open, inner, self.expect(")")?]
            }
            TokenKind::Punct if t.text == "{" => vec![self.concatenation()?],
            _ => return Err(self.error(&["identifier", "number", "(", "{"])),
        };
        Ok(self.rule("primary", kids))
    }

    fn concatenation(&mut self) -> PResult {
        self.enter()?;
        let open = self.expect("{")?;
        let first = self.expression()?;
        let node = if self.at("{") {
            let inner = self.concatenation()?;
            let close = self.expect("}")?;
            self.rule("multiple_concatenation", vec![open, first, inner, close])
        } else {
            let mut kids = vec![open, first];
            while self.eat(",", &mut kids) {
                kids.push(self.expression()?);
            }
            kids.push(self.expect("}")?);
            self.rule("concatenation", kids)
        };
        self.leave();
        Ok(node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{find_rule_occurrences, Grammar};
    use std::collections::BTreeSet;

    fn sexpr(tree: &ParseTree, id: NodeId) -> String {
        let n = tree.node(id);
        if n.terminal {
            return format!("[{}]", tree.text(id));
        }
        let kids: Vec<String> = n.children.iter().map(|c| sexpr(tree, *c)).collect();
        format!("{}({})", n.kind, kids.join(" "))
    }

    fn find(tree: &ParseTree, kind: &str) -> Vec<NodeId> {
        tree.preorder().filter(|id| tree.kind(*id) == kind).collect()
    }

    #[test]
    fn continuous_assign_shape() {
        let src = "module m; assign y = !a; endmodule";
        let tree = parse_source(src).unwrap();
        let ca = find(&tree, "continuous_assignment")[0];
        assert_eq!(
            sexpr(&tree, ca),
            "continuous_assignment([assign] variable_assignment(simple_identifier([y]) [=] \
             expression([!] primary(simple_identifier([a])))) [;])"
        );
        assert_eq!(tree.reconstruct(), src);
        tree.validate().unwrap();
    }

    #[test]
    fn minimal_module() {
        let tree = parse_source("module m; endmodule").unwrap();
        assert_eq!(tree.kind(tree.root()), "compilation_unit");
        let mods = find(&tree, "module_declaration");
        assert_eq!(mods.len(), 1);
        let kinds: Vec<&str> = tree.children(mods[0]).iter().map(|c| tree.kind(*c)).collect();
        assert_eq!(kinds, ["kw", "simple_identifier", "punct", "kw"]);
    }

    #[test]
    fn missing_identifier_reports_equals() {
        let src = "module m; assign = a; endmodule";
        let err = parse_source(src).unwrap_err();
        assert_eq!(err.offset(), src.find('=').unwrap());
        let SyntaxError::Parse(p) = err else { panic!() };
        assert_eq!(p.expected, ["identifier"]);
    }

    #[test]
    fn expression_occurrence_is_the_whole_rhs() {
        let tree = parse_source("module m; assign y = !a; endmodule").unwrap();
        let g = Grammar::minihdl();
        let occ = find_rule_occurrences(&tree, &g, &BTreeSet::from(["expression".to_string()])).unwrap();
        assert_eq!(occ.len(), 1);
        assert_eq!(occ[0].span.slice(tree.source()), "!a");
    }

    #[test]
    fn precedence_and_ternary() {
        let tree = parse_rule("a | b & c == d ? x : y + 1", "expression").unwrap();
        let top = tree.root();
        let kids: Vec<&str> = tree.children(top).iter().map(|c| tree.text(*c)).collect();
        assert_eq!(kids, ["a | b & c == d", "?", "x", ":", "y + 1"]);
        let cond = tree.children(top)[0];
        let ck: Vec<&str> = tree.children(cond).iter().map(|c| tree.text(*c)).collect();
        assert_eq!(ck, ["a", "|", "b & c == d"]);
    }

    #[test]
    fn full_module_round_trips() {
        let src = "// header\nmodule top #(parameter W = 4, parameter D = 2, E = 1) (\n  input wire clk,\n  input [W-1:0] a, b,\n  output reg [W-1:0] q,\n  output logic y\n);\n  import pkg::*;\n  localparam Z = {2{1'b0}};\n  wire [3:0] t = a ^ b, u;\n  reg [1:0] s;\n  assign y = &t[3:2] | pkg::K;\n  always @(posedge clk) begin : seq\n    if (a[0]) q <= q + 1'b1;\n    else if (b[1 +: 2] == 2'd3) q <= {a[1:0], b[3:2]};\n    else q <= q;\n  end\n  always @* begin\n    case (s)\n      2'b00, 2'b01: u2 = 1;\n      default: ;\n    endcase\n  end\n  sub #(.N(W)) u_sub (.x(a), .y(), .z);\n  sub2 u2 (a, b);\nendmodule : top\npackage pkg; parameter K = 1'b1; endpackage\n";
        let tree = parse_source(src).unwrap();
        tree.validate().unwrap();
        assert_eq!(tree.reconstruct(), src);
        assert_eq!(find(&tree, "ansi_port_declaration").len(), 5);
        assert_eq!(find(&tree, "parameter_declaration").len(), 3);
        assert_eq!(find(&tree, "module_program_interface_instantiation").len(), 2);
        assert_eq!(find(&tree, "nonblocking_assignment").len(), 3);
        assert_eq!(find(&tree, "conditional_statement").len(), 2);
        assert_eq!(find(&tree, "case_statement").len(), 1);
        assert_eq!(find(&tree, "always_construct").len(), 2);
    }

    #[test]
    fn fragment_start_rules() {
        for (src, rule) in [
            ("input wire [3:0] a", "ansi_port_declaration"),
            ("parameter W = 8, D = W", "parameter_declaration"),
            ("sub u (.a(b));", "module_program_interface_instantiation"),
            ("assign y = a;", "continuous_assignment"),
            ("q <= d", "nonblocking_assignment"),
            ("q = d", "blocking_assignment"),
            ("if (a) q = 1; else q = 0;", "conditional_statement"),
            ("case (s) 0: q = 1; endcase", "case_statement"),
            ("always @(posedge clk) q <= d;", "always_construct"),
        ] {
            let t = parse_rule(src, rule).unwrap_or_else(|e| panic!("{rule}: {e}"));
            assert_eq!(t.kind(t.root()), rule);
            assert_eq!(t.span(t.root()).slice(src), src);
        }
        assert!(parse_rule("q <= d", "blocking_assignment").is_err());
    }

    #[test]
    fn nesting_limit_is_an_error_not_a_crash() {
        let src = format!("module m; assign y = {}a{}; endmodule", "(".repeat(5000), ")".repeat(5000));
        assert!(parse_source(&src).is_err());
    }

    #[test]
    fn rule_names_sorted_and_unique() {
        assert!(RULE_NAMES.windows(2).all(|w| w[0] < w[1]));
    }
}
