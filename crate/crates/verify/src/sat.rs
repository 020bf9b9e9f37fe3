// SPDX-License-Identifier: Apache-2.0

//! A conflict-driven clause-learning SAT solver.
//!
//! Two-watched-literal propagation, first-UIP learning and
//! non-chronological backjumping. The default branching order is ascending
//! variable index with the negative phase first, so results are
//! reproducible; an activity-based order with restarts is available for
//! harder instances.

use std::time::{Duration, Instant};

use crate::cnf::CnfFormula;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    /// One value per variable, variable 1 first.
    Sat(Vec<bool>),
    Unsat,
    Timeout,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Branching {
    /// Lowest unassigned variable, false first.
    #[default]
    Ascending,
    /// Highest activity with phase saving and restarts.
    Activity,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolverOptions {
    pub timeout: Option<Duration>,
    pub branching: Branching,
}

pub fn sat_solve(f: &CnfFormula, timeout: Option<Duration>) -> SatResult {
    solve_with(f, SolverOptions { timeout, ..SolverOptions::default() })
}

pub fn solve_with(f: &CnfFormula, opts: SolverOptions) -> SatResult {
    let mut s = Solver::new(f.num_vars as usize, opts);
    for c in f.clauses.iter().map(Vec::as_slice).chain(f.assumptions.iter().map(std::slice::from_ref)) {
        if !s.add_clause(c) {
            return SatResult::Unsat;
        }
    }
    s.run()
}

/// Literal encoding: `2 * var + negated`, variables from 0.
type Lit = u32;

fn lit_of(dimacs: i32) -> Lit {
    (dimacs.unsigned_abs() - 1) * 2 + u32::from(dimacs < 0)
}

fn neg(l: Lit) -> Lit {
    l ^ 1
}

fn var(l: Lit) -> usize {
    (l >> 1) as usize
}

const UNASSIGNED: i8 = -1;

struct Solver {
    opts: SolverOptions,
    clauses: Vec<Vec<Lit>>,
    /// Clauses watching each literal, visited when it becomes false.
    watches: Vec<Vec<usize>>,
    value: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<Option<usize>>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    bump: f64,
    phase: Vec<bool>,
    seen: Vec<bool>,
    /// Lowest variable that may still be unassigned, for ascending branching.
    cursor: usize,
}

impl Solver {
    fn new(n: usize, opts: SolverOptions) -> Self {
        Solver {
            opts,
            clauses: Vec::new(),
            watches: vec![Vec::new(); 2 * n],
            value: vec![UNASSIGNED; n],
            level: vec![0; n],
            reason: vec![None; n],
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: vec![0.0; n],
            bump: 1.0,
            phase: vec![false; n],
            seen: vec![false; n],
            cursor: 0,
        }
    }

    fn lit_value(&self, l: Lit) -> i8 {
        match self.value[var(l)] {
            UNASSIGNED => UNASSIGNED,
            v => v ^ (l & 1) as i8,
        }
    }

    fn decision_level(&self) -> u32 {
        self.trail_lim.len() as u32
    }

    fn enqueue(&mut self, l: Lit, reason: Option<usize>) {
        let v = var(l);
        self.value[v] = i8::from(l & 1 == 0);
        self.level[v] = self.decision_level();
        self.reason[v] = reason;
        self.trail.push(l);
    }

    /// Adds an input clause at level 0; false when the formula became
    /// trivially unsatisfiable.
    fn add_clause(&mut self, c: &[i32]) -> bool {
        let mut lits: Vec<Lit> = c.iter().map(|&l| lit_of(l)).collect();
        lits.sort_unstable();
        lits.dedup();
        if lits.windows(2).any(|w| w[0] == neg(w[1])) {
            return true;
        }
        lits.retain(|&l| self.lit_value(l) != 0);
        if lits.iter().any(|&l| self.lit_value(l) == 1) {
            return true;
        }
        match lits.len() {
            0 => false,
            1 => {
                self.enqueue(lits[0], None);
                self.propagate().is_none()
            }
            _ => {
                self.attach(lits);
                true
            }
        }
    }

    fn attach(&mut self, lits: Vec<Lit>) -> usize {
        let idx = self.clauses.len();
        self.watches[lits[0] as usize].push(idx);
        self.watches[lits[1] as usize].push(idx);
        self.clauses.push(lits);
        idx
    }

    /// Unit propagation; returns a conflicting clause.
    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let false_lit = neg(self.trail[self.qhead]);
            self.qhead += 1;
            let watching = std::mem::take(&mut self.watches[false_lit as usize]);
            let mut keep = Vec::with_capacity(watching.len());
            let mut conflict = None;
            let mut iter = watching.into_iter();
            while let Some(ci) = iter.next() {
                let c = &mut self.clauses[ci];
                if c[0] == false_lit {
                    c.swap(0, 1);
                }
                let first = c[0];
                if self.value[var(first)] != UNASSIGNED && (self.value[var(first)] ^ (first & 1) as i8) == 1 {
                    keep.push(ci);
                    continue;
                }
                let mut moved = false;
                for k in 2..c.len() {
                    let l = c[k];
                    let v = self.value[var(l)];
                    if v == UNASSIGNED || (v ^ (l & 1) as i8) == 1 {
                        c.swap(1, k);
                        self.watches[c[1] as usize].push(ci);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                keep.push(ci);
                if self.lit_value(first) == 0 {
                    conflict = Some(ci);
                    keep.extend(iter.by_ref());
                    break;
                }
                self.enqueue(first, Some(ci));
            }
            self.watches[false_lit as usize].extend(keep);
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    /// First-UIP conflict analysis: the learnt clause (asserting literal
    /// first) and the level to backjump to.
    fn analyze(&mut self, mut confl: usize) -> (Vec<Lit>, u32) {
        let mut learnt = vec![0];
        let mut pending = 0usize;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let current = self.decision_level();
        loop {
            for i in 0..self.clauses[confl].len() {
                let q = self.clauses[confl][i];
                if Some(q) == p {
                    continue;
                }
                let v = var(q);
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump_var(v);
                    if self.level[v] == current {
                        pending += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[var(self.trail[idx])] {
                    break;
                }
            }
            let lit = self.trail[idx];
            self.seen[var(lit)] = false;
            pending -= 1;
            p = Some(lit);
            if pending == 0 {
                break;
            }
            confl = self.reason[var(lit)].expect("non-decision literal at the conflict level");
        }
        learnt[0] = neg(p.expect("conflict has a current-level literal"));
        for &l in &learnt[1..] {
            self.seen[var(l)] = false;
        }
        let mut back = 0;
        if learnt.len() > 1 {
            let (mut best, mut best_level) = (1, self.level[var(learnt[1])]);
            for (i, &l) in learnt.iter().enumerate().skip(2) {
                if self.level[var(l)] > best_level {
                    best = i;
                    best_level = self.level[var(l)];
                }
            }
            learnt.swap(1, best);
            back = best_level;
        }
        self.decay();
        (learnt, back)
    }

    fn bump_var(&mut self, v: usize) {
        self.activity[v] += self.bump;
        if self.activity[v] > 1e100 {
            self.activity.iter_mut().for_each(|a| *a *= 1e-100);
            self.bump *= 1e-100;
        }
    }

    fn decay(&mut self) {
        self.bump /= 0.95;
    }

    fn backtrack(&mut self, level: u32) {
        if self.decision_level() <= level {
            return;
        }
        let lim = self.trail_lim[level as usize];
        for &l in &self.trail[lim..] {
            let v = var(l);
            self.phase[v] = l & 1 == 0;
            self.value[v] = UNASSIGNED;
            self.reason[v] = None;
            self.cursor = self.cursor.min(v);
        }
        self.trail.truncate(lim);
        self.trail_lim.truncate(level as usize);
        self.qhead = lim;
    }

    fn pick(&mut self) -> Option<Lit> {
        match self.opts.branching {
            Branching::Ascending => {
                while self.cursor < self.value.len() && self.value[self.cursor] != UNASSIGNED {
                    self.cursor += 1;
                }
                (self.cursor < self.value.len()).then(|| 2 * self.cursor as Lit + 1)
            }
            Branching::Activity => {
                let mut best: Option<usize> = None;
                for v in 0..self.value.len() {
                    if self.value[v] == UNASSIGNED && best.is_none_or(|b| self.activity[v] > self.activity[b]) {
                        best = Some(v);
                    }
                }
                best.map(|v| 2 * v as Lit + u32::from(!self.phase[v]))
            }
        }
    }

    fn run(&mut self) -> SatResult {
        let start = Instant::now();
        let mut conflicts: u64 = 0;
        let mut restart_at = luby(1) * 100;
        let mut restarts = 1;
        let mut ticks: u32 = 0;
        loop {
            if let Some(confl) = self.propagate() {
                conflicts += 1;
                if self.decision_level() == 0 {
                    return SatResult::Unsat;
                }
                let (learnt, back) = self.analyze(confl);
                self.backtrack(back);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let first = learnt[0];
                    let ci = self.attach(learnt);
                    self.enqueue(first, Some(ci));
                }
                if self.opts.branching == Branching::Activity && conflicts >= restart_at {
                    restarts += 1;
                    restart_at = conflicts + luby(restarts) * 100;
                    self.backtrack(0);
                }
            } else {
                match self.pick() {
                    None => return SatResult::Sat(self.value.iter().map(|&v| v == 1).collect()),
                    Some(l) => {
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(l, None);
                    }
                }
            }
            ticks = ticks.wrapping_add(1);
            if ticks & 1023 == 0 {
                if let Some(t) = self.opts.timeout {
                    if start.elapsed() >= t {
                        return SatResult::Timeout;
                    }
                }
            }
        }
    }
}

/// The Luby restart sequence 1, 1, 2, 1, 1, 2, 4, ...
fn luby(mut i: u64) -> u64 {
    loop {
        let mut k = 1;
        while (1u64 << k) - 1 < i {
            k += 1;
        }
        if i == (1u64 << k) - 1 {
            return 1 << (k - 1);
        }
        i -= (1u64 << (k - 1)) - 1;
    }
}
