// SPDX-License-Identifier: Apache-2.0

//! Tseitin encoding and DIMACS text I/O.

use serde::{Deserialize, Serialize};

use crate::netlist::{GateOp, NetId, Netlist};

/// A CNF formula with DIMACS-style literals: variable `v` is `v` or `-v`,
/// numbered from 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    pub num_vars: u32,
    pub clauses: Vec<Vec<i32>>,
    /// Literals asserted on top of the clauses.
    pub assumptions: Vec<i32>,
}

impl CnfFormula {
    pub fn is_satisfied_by(&self, model: &[bool]) -> bool {
        let holds = |l: i32| model.get(l.unsigned_abs() as usize - 1).is_some_and(|&v| v == (l > 0));
        self.clauses.iter().all(|c| c.iter().any(|&l| holds(l))) && self.assumptions.iter().all(|&l| holds(l))
    }

    pub fn validate(&self) -> Result<(), DimacsError> {
        for c in &self.clauses {
            if c.is_empty() {
                return Err(DimacsError::EmptyClause);
            }
        }
        for &l in self.clauses.iter().flatten().chain(&self.assumptions) {
            if l == 0 || l.unsigned_abs() > self.num_vars {
                return Err(DimacsError::VarOutOfRange { literal: l as i64, num_vars: self.num_vars });
            }
        }
        Ok(())
    }
}

/// A Tseitin encoding and the variable of each net.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub cnf: CnfFormula,
    /// Indexed by net; 0 for nets that nothing drives.
    pub var_of: Vec<u32>,
}

impl Encoding {
    pub fn var(&self, net: NetId) -> u32 {
        self.var_of[net.index()]
    }
}

/// Encodes a flop-free netlist, one variable per net. Input bits get the
/// lowest variables, in port order. Every output bit is asserted through
/// `assumptions`.
pub fn tseitin(n: &Netlist) -> Encoding {
    assert!(n.is_combinational(), "unroll sequential netlists before encoding");
    let mut var_of = vec![0u32; n.num_nets as usize];
    let mut next = 0u32;
    let mut number = |net: NetId, var_of: &mut Vec<u32>| {
        if var_of[net.index()] == 0 {
            next += 1;
            var_of[net.index()] = next;
        }
    };
    for p in &n.inputs {
        for &b in &p.bits {
            number(b, &mut var_of);
        }
    }
    for g in &n.gates {
        number(g.output, &mut var_of);
    }
    let mut clauses = Vec::new();
    for g in &n.gates {
        let o = var_of[g.output.index()] as i32;
        let i: Vec<i32> = g.inputs.iter().map(|x| var_of[x.index()] as i32).collect();
        match g.op {
            GateOp::Const0 => clauses.push(vec![-o]),
            GateOp::Const1 => clauses.push(vec![o]),
            GateOp::Not => {
                clauses.push(vec![-i[0], -o]);
                clauses.push(vec![i[0], o]);
            }
            GateOp::And => {
                clauses.push(vec![-o, i[0]]);
                clauses.push(vec![-o, i[1]]);
                clauses.push(vec![o, -i[0], -i[1]]);
            }
            GateOp::Or => {
                clauses.push(vec![o, -i[0]]);
                clauses.push(vec![o, -i[1]]);
                clauses.push(vec![-o, i[0], i[1]]);
            }
            GateOp::Xor => {
                clauses.push(vec![-o, i[0], i[1]]);
                clauses.push(vec![-o, -i[0], -i[1]]);
                clauses.push(vec![o, -i[0], i[1]]);
                clauses.push(vec![o, i[0], -i[1]]);
            }
            GateOp::Mux => {
                let (s, a, b) = (i[0], i[1], i[2]);
                clauses.push(vec![s, -a, o]);
                clauses.push(vec![s, a, -o]);
                clauses.push(vec![-s, -b, o]);
                clauses.push(vec![-s, b, -o]);
            }
        }
    }
    let assumptions = n.outputs.iter().flat_map(|p| p.bits.iter().map(|b| var_of[b.index()] as i32)).collect();
    Encoding { cnf: CnfFormula { num_vars: next, clauses, assumptions }, var_of }
}

/// DIMACS text; assumptions are written as trailing unit clauses.
pub fn export_dimacs(f: &CnfFormula) -> String {
    let mut out = format!("p cnf {} {}\n", f.num_vars, f.clauses.len() + f.assumptions.len());
    for c in f.clauses.iter().map(Vec::as_slice).chain(f.assumptions.iter().map(std::slice::from_ref)) {
        for l in c {
            out.push_str(&l.to_string());
            out.push(' ');
        }
        out.push_str("0\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DimacsError {
    #[error("missing `p cnf` header")]
    MissingHeader,
    #[error("malformed header on line {line}")]
    BadHeader { line: usize },
    #[error("bad literal {text:?} on line {line}")]
    BadLiteral { line: usize, text: String },
    #[error("literal {literal} exceeds the declared {num_vars} variables")]
    VarOutOfRange { literal: i64, num_vars: u32 },
    #[error("header declares {declared} clauses but {found} were read")]
    ClauseCountMismatch { declared: usize, found: usize },
    #[error("last clause is not terminated by 0")]
    UnterminatedClause,
    #[error("empty clause")]
    EmptyClause,
}

pub fn import_dimacs(text: &str) -> Result<CnfFormula, DimacsError> {
    let mut header: Option<(u32, usize)> = None;
    let mut clauses = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('c') {
            continue;
        }
        if trimmed.starts_with('p') {
            let f: Vec<&str> = trimmed.split_whitespace().collect();
            if header.is_some() || f.len() != 4 || f[0] != "p" || f[1] != "cnf" {
                return Err(DimacsError::BadHeader { line: line_no });
            }
            let v = f[2].parse().map_err(|_| DimacsError::BadHeader { line: line_no })?;
            let c = f[3].parse().map_err(|_| DimacsError::BadHeader { line: line_no })?;
            header = Some((v, c));
            continue;
        }
        let (num_vars, _) = header.ok_or(DimacsError::MissingHeader)?;
        for tok in trimmed.split_whitespace() {
            let l: i64 = tok.parse().map_err(|_| DimacsError::BadLiteral { line: line_no, text: tok.to_string() })?;
            if l == 0 {
                if current.is_empty() {
                    return Err(DimacsError::EmptyClause);
                }
                clauses.push(std::mem::take(&mut current));
            } else if l.unsigned_abs() > u64::from(num_vars) {
                return Err(DimacsError::VarOutOfRange { literal: l, num_vars });
            } else {
                current.push(l as i32);
            }
        }
    }
    let (num_vars, declared) = header.ok_or(DimacsError::MissingHeader)?;
    if !current.is_empty() {
        return Err(DimacsError::UnterminatedClause);
    }
    if declared != clauses.len() {
        return Err(DimacsError::ClauseCountMismatch { declared, found: clauses.len() });
    }
    Ok(CnfFormula { num_vars, clauses, assumptions: vec![] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{Builder, PortKind};

    #[test]
    fn dimacs_examples() {
        let f = CnfFormula { num_vars: 2, clauses: vec![vec![1, -2]], assumptions: vec![] };
        assert_eq!(export_dimacs(&f), "p cnf 2 1\n1 -2 0\n");
        assert_eq!(export_dimacs(&CnfFormula::default()), "p cnf 0 0\n");
        let g = CnfFormula { num_vars: 2, clauses: vec![vec![1, -2]], assumptions: vec![2] };
        assert_eq!(export_dimacs(&g), "p cnf 2 2\n1 -2 0\n2 0\n");
    }

    #[test]
    fn import_handles_comments_and_wrapping() {
        let f = import_dimacs("c hi\np cnf 3 2\n1 -2\n 3 0 -1\n0\n").unwrap();
        assert_eq!(f.clauses, vec![vec![1, -2, 3], vec![-1]]);
        assert_eq!(import_dimacs("1 0\n"), Err(DimacsError::MissingHeader));
        assert!(matches!(import_dimacs("p cnf 1 1\n2 0\n"), Err(DimacsError::VarOutOfRange { .. })));
        assert_eq!(import_dimacs("p cnf 1 1\n1\n"), Err(DimacsError::UnterminatedClause));
        assert!(matches!(import_dimacs("p cnf 1 2\n1 0\n"), Err(DimacsError::ClauseCountMismatch { .. })));
        assert!(matches!(import_dimacs("p cnf 1 1\nx 0\n"), Err(DimacsError::BadLiteral { .. })));
    }

    #[test]
    fn gate_clause_counts() {
        let mut b = Builder::new();
        let a = b.add_input("a", 1, PortKind::Primary)[0];
        let y = b.not(a);
        b.outputs.push(crate::netlist::Port { name: "y".into(), bits: vec![y], kind: PortKind::Primary });
        let e = tseitin(&b.finish());
        assert_eq!(e.cnf.clauses, vec![vec![-1, -2], vec![1, 2]]);
        assert_eq!(e.cnf.assumptions, vec![2]);

        let mut b = Builder::new();
        let x = b.add_input("x", 2, PortKind::Primary);
        let y = b.and(x[0], x[1]);
        b.outputs.push(crate::netlist::Port { name: "y".into(), bits: vec![y], kind: PortKind::Primary });
        assert_eq!(tseitin(&b.finish()).cnf.clauses.len(), 3);
    }
}
