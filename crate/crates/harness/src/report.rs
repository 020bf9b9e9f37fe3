// SPDX-License-Identifier: Apache-2.0

//! Score aggregation: per-system summaries, the system × rule EQV matrix
//! and per-rule task statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use rulemask_core::grammar::RuleCatalog;
use rulemask_core::sampler::TaskRecord;
use rulemask_verify::check::Eqv;

use crate::evaluate::ResultRow;

/// Counts for one (system, rule) pair. `eqv_pass <= stx_pass <= n_tasks`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub n_tasks: usize,
    pub stx_pass: usize,
    pub eqv_pass: usize,
    pub unverifiable: usize,
    pub timeouts: usize,
    pub latency_ms: u64,
    /// Rows that carry a latency.
    pub timed: usize,
}

impl Cell {
    fn add(&mut self, row: &ResultRow) {
        self.n_tasks += 1;
        self.stx_pass += usize::from(row.stx_pass());
        self.eqv_pass += usize::from(row.eqv_pass());
        self.unverifiable += usize::from(row.unverifiable());
        self.timeouts += usize::from(matches!(&row.eqv, Eqv::Unverifiable { reason } if reason == "timeout"));
        if let Some(ms) = row.latency_ms {
            self.latency_ms += ms;
            self.timed += 1;
        }
    }

    fn merge(&mut self, other: &Cell) {
        self.n_tasks += other.n_tasks;
        self.stx_pass += other.stx_pass;
        self.eqv_pass += other.eqv_pass;
        self.unverifiable += other.unverifiable;
        self.timeouts += other.timeouts;
        self.latency_ms += other.latency_ms;
        self.timed += other.timed;
    }

    pub fn stx_pct(&self) -> f64 {
        pct(self.stx_pass, self.n_tasks)
    }

    pub fn eqv_pct(&self) -> f64 {
        pct(self.eqv_pass, self.n_tasks)
    }

    pub fn mean_latency_ms(&self) -> Option<f64> {
        (self.timed > 0).then(|| self.latency_ms as f64 / self.timed as f64)
    }
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// A model evaluated in one prompt mode, e.g. `codellama (fim)`.
pub fn system_label(row: &ResultRow) -> String {
    format!("{} ({})", row.model, row.mode)
}

/// Table acronym of a rule, or its grammar name when it has none.
pub fn rule_label(rule: &str) -> String {
    RuleCatalog::acronym(rule).map_or_else(|| rule.to_string(), str::to_string)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalReport {
    /// Keyed by (system, rule label).
    pub cells: BTreeMap<(String, String), Cell>,
    /// Model name of each system.
    pub models: BTreeMap<String, String>,
}

pub fn build_report(rows: &[ResultRow]) -> EvalReport {
    let mut report = EvalReport::default();
    for row in rows {
        let system = system_label(row);
        report.models.insert(system.clone(), row.model.clone());
        report.cells.entry((system, rule_label(&row.rule))).or_default().add(row);
    }
    report
}

impl EvalReport {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn systems(&self) -> Vec<&str> {
        self.cells.keys().map(|(s, _)| s.as_str()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn cell(&self, system: &str, rule: &str) -> Option<&Cell> {
        self.cells.get(&(system.to_string(), rule.to_string()))
    }

    /// All rules of one system pooled together.
    pub fn system_total(&self, system: &str) -> Cell {
        let mut total = Cell::default();
        self.cells.iter().filter(|((s, _), _)| s == system).for_each(|(_, c)| total.merge(c));
        total
    }

    /// Mean EQV percentage of a rule over the systems that have tasks for it.
    pub fn rule_average_eqv(&self, rule: &str) -> f64 {
        let cells: Vec<&Cell> = self.cells.iter().filter(|((_, r), _)| r == rule).map(|(_, c)| c).collect();
        if cells.is_empty() {
            return 0.0;
        }
        cells.iter().map(|c| c.eqv_pct()).sum::<f64>() / cells.len() as f64
    }

    /// Rules by ascending average EQV; ties by label.
    pub fn rules_by_difficulty(&self) -> Vec<String> {
        let rules: BTreeSet<&str> = self.cells.keys().map(|(_, r)| r.as_str()).collect();
        let mut rules: Vec<(f64, &str)> = rules.into_iter().map(|r| (self.rule_average_eqv(r), r)).collect();
        rules.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
        rules.into_iter().map(|(_, r)| r.to_string()).collect()
    }

    /// Per-system STX/EQV summary over all tasks.
    pub fn summary_table(&self) -> String {
        let mut out = format!(
            "{:<32} {:>6} {:>7} {:>7} {:>13} {:>9} {:>12}\n",
            "system", "tasks", "STX %", "EQV %", "unverifiable", "timeouts", "latency ms"
        );
        for system in self.systems() {
            let c = self.system_total(system);
            let latency = c.mean_latency_ms().map_or_else(|| "-".to_string(), |ms| format!("{ms:.0}"));
            out.push_str(&format!(
                "{:<32} {:>6} {:>7.1} {:>7.1} {:>13} {:>9} {:>12}\n",
                system,
                c.n_tasks,
                c.stx_pct(),
                c.eqv_pct(),
                c.unverifiable,
                c.timeouts,
                latency
            ));
        }
        out
    }

    /// For models run in several modes, the best mode by STX and by EQV.
    pub fn best_configurations(&self) -> Vec<String> {
        let mut by_model: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (system, model) in &self.models {
            by_model.entry(model).or_default().push(system);
        }
        let mut lines = Vec::new();
        for (model, systems) in by_model.into_iter().filter(|(_, s)| s.len() > 1) {
            let best = |key: fn(&Cell) -> f64| {
                systems
                    .iter()
                    .map(|s| (key(&self.system_total(s)), *s))
                    .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(a.1)))
                    .expect("non-empty")
            };
            let (stx, by_stx) = best(Cell::stx_pct);
            let (eqv, by_eqv) = best(Cell::eqv_pct);
            lines.push(format!("{model}: best by STX {by_stx} ({stx:.1}%), best by EQV {by_eqv} ({eqv:.1}%)"));
        }
        lines
    }

    /// System × rule EQV percentages, rules ordered by ascending average
    /// EQV, closed by a row of column averages.
    pub fn matrix_csv(&self) -> String {
        let rules = self.rules_by_difficulty();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("system").chain(rules.iter().map(String::as_str)).collect();
        w.write_record(&header).expect("in-memory write");
        let fmt = |v: f64| format!("{v:.1}");
        for system in self.systems() {
            let mut rec = vec![system.to_string()];
            rec.extend(rules.iter().map(|r| self.cell(system, r).map_or_else(String::new, |c| fmt(c.eqv_pct()))));
            w.write_record(&rec).expect("in-memory write");
        }
        if !rules.is_empty() {
            let mut rec = vec!["average".to_string()];
            rec.extend(rules.iter().map(|r| fmt(self.rule_average_eqv(r))));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
    }

    /// Same matrix with the STX score beside each EQV score, as text.
    pub fn matrix_table(&self) -> String {
        let rules = self.rules_by_difficulty();
        let mut out = format!("{:<32}", "system (STX/EQV %)");
        for r in &rules {
            out.push_str(&format!(" {r:>11}"));
        }
        out.push('\n');
        for system in self.systems() {
            out.push_str(&format!("{system:<32}"));
            for r in &rules {
                let cell = self.cell(system, r).map_or_else(|| "-".to_string(), |c| format!("{:.0}/{:.0}", c.stx_pct(), c.eqv_pct()));
                out.push_str(&format!(" {cell:>11}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleTaskStats {
    pub rule: String,
    pub tasks: usize,
    /// Size means, available when the task file is given.
    pub avg_loc: Option<f64>,
    pub avg_tokens: Option<f64>,
}

/// Distinct tasks per rule in the results, with mean ground-truth sizes
/// taken from `tasks` when available.
pub fn rule_task_stats(rows: &[ResultRow], tasks: Option<&[TaskRecord]>) -> Vec<RuleTaskStats> {
    let mut ids: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for row in rows {
        ids.entry(rule_label(&row.rule)).or_default().insert(&row.task_id);
    }
    let by_id: BTreeMap<&str, &TaskRecord> = tasks.unwrap_or(&[]).iter().map(|t| (t.task_id.as_str(), t)).collect();
    ids.into_iter()
        .map(|(rule, ids)| {
            let known: Vec<&TaskRecord> = ids.iter().filter_map(|id| by_id.get(id).copied()).collect();
            let mean = |f: fn(&TaskRecord) -> usize| {
                (!known.is_empty()).then(|| known.iter().map(|t| f(t)).sum::<usize>() as f64 / known.len() as f64)
            };
            RuleTaskStats { rule, tasks: ids.len(), avg_loc: mean(|t| t.loc), avg_tokens: mean(|t| t.tokens) }
        })
        .collect()
}

pub fn format_rule_task_stats(stats: &[RuleTaskStats]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    let mut out = format!("{:<40} {:>6} {:>8} {:>10}\n", "rule", "tasks", "avg_loc", "avg_tokens");
    for s in stats {
        out.push_str(&format!("{:<40} {:>6} {:>8} {:>10}\n", s.rule, s.tasks, opt(s.avg_loc), opt(s.avg_tokens)));
    }
    out
}
