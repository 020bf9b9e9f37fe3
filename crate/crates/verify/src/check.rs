// SPDX-License-Identifier: Apache-2.0

//! Scoring a completion: reinsertion, syntax check and bounded equivalence.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use rulemask_core::grammar::parse_source;
use rulemask_core::sampler::{EquivalenceOracle, OracleVerdict, TaskRecord};

use crate::cnf::tseitin;
use crate::elab::elaborate;
use crate::miter::{build_miter, parse_step_input_name, unroll, MiterError};
use crate::netlist::Netlist;
use crate::sat::{sat_solve, SatResult};

pub const DEFAULT_UNROLL: usize = 3;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Elaboration recurses along signal dependencies; deep designs need more
/// than the default thread stack.
const CHECK_STACK_BYTES: usize = 256 << 20;

/// Builtin checker or an external command template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheckMode {
    #[default]
    Builtin,
    /// Placeholders: `{file}` for syntax; `{reference}`, `{candidate}`,
    /// `{top}` and `{k}` for equivalence.
    External { command: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Stx {
    Pass,
    Fail { diagnostic: String },
}

impl Stx {
    pub fn passed(&self) -> bool {
        matches!(self, Stx::Pass)
    }
}

/// Input values per step, 1-based steps in order; values are binary
/// strings with the most significant bit first.
pub type Trace = Vec<BTreeMap<String, String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Eqv {
    Equivalent,
    Inequivalent {
        trace: Trace,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    Unverifiable { reason: String },
    Skipped,
}

impl Eqv {
    pub fn passed(&self) -> bool {
        matches!(self, Eqv::Equivalent)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub stx: Stx,
    pub eqv: Eqv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquivOptions {
    pub k: usize,
    #[serde(with = "secs")]
    pub timeout: Duration,
    pub mode: CheckMode,
}

impl Default for EquivOptions {
    fn default() -> Self {
        EquivOptions { k: DEFAULT_UNROLL, timeout: DEFAULT_TIMEOUT, mode: CheckMode::Builtin }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// The candidate design: the completion spliced over the placeholder.
pub fn reinsert(task: &TaskRecord, completion: &str) -> String {
    task.splice(completion)
}

pub fn check_syntax(candidate: &str, mode: &CheckMode) -> Stx {
    match mode {
        CheckMode::Builtin => match parse_source(candidate) {
            Ok(_) => Stx::Pass,
            Err(e) => Stx::Fail { diagnostic: e.to_string() },
        },
        CheckMode::External { command } => {
            let dir = match tempfile::tempdir() {
                Ok(d) => d,
                Err(e) => return Stx::Fail { diagnostic: format!("cannot create a scratch directory: {e}") },
            };
            let file = dir.path().join("candidate.sv");
            if let Err(e) = std::fs::write(&file, candidate) {
                return Stx::Fail { diagnostic: format!("cannot write the candidate: {e}") };
            }
            let vars = HashMap::from([("file", file.display().to_string())]);
            match run_template(command, &vars, None) {
                Ok(out) if out.status == Some(0) => Stx::Pass,
                Ok(out) => Stx::Fail { diagnostic: out.describe() },
                Err(e) => Stx::Fail { diagnostic: e },
            }
        }
    }
}

pub fn check_equivalence(reference: &str, candidate: &str, top: &str, opts: &EquivOptions) -> Eqv {
    match &opts.mode {
        CheckMode::Builtin => {
            let (reference, candidate, top, opts) = (reference.to_string(), candidate.to_string(), top.to_string(), opts.clone());
            let worker = std::thread::Builder::new()
                .name("equivalence".into())
                .stack_size(CHECK_STACK_BYTES)
                .spawn(move || builtin_equivalence(&reference, &candidate, &top, opts.k, opts.timeout));
            match worker.map(|h| h.join()) {
                Ok(Ok(eqv)) => eqv,
                Ok(Err(_)) => Eqv::Unverifiable { reason: "checker panicked".into() },
                Err(e) => Eqv::Unverifiable { reason: format!("cannot start checker thread: {e}") },
            }
        }
        CheckMode::External { command } => external_equivalence(command, reference, candidate, top, opts),
    }
}

/// Elaborates both sides of a comparison.
pub fn elaborate_pair(reference: &str, candidate: &str, top: &str) -> Result<(Netlist, Netlist), String> {
    let params = BTreeMap::new();
    let elab = |which: &str, src: &str| {
        let tree = parse_source(src).map_err(|e| format!("{which} does not parse: {e}"))?;
        elaborate(&tree, top, &params).map_err(|e| format!("{which}: {e}"))
    };
    Ok((elab("reference", reference)?, elab("candidate", candidate)?))
}

fn builtin_equivalence(reference: &str, candidate: &str, top: &str, k: usize, timeout: Duration) -> Eqv {
    let (a, b) = match elaborate_pair(reference, candidate, top) {
        Ok(pair) => pair,
        Err(reason) => return Eqv::Unverifiable { reason },
    };
    equivalence_of(&a, &b, k, timeout)
}

/// Bounded equivalence of two elaborated designs over `k` steps.
pub fn equivalence_of(a: &Netlist, b: &Netlist, k: usize, timeout: Duration) -> Eqv {
    let miter = match build_miter(a, b) {
        Ok(m) => m,
        Err(MiterError::InterfaceMismatch(reason)) => return Eqv::Inequivalent { trace: vec![], reason: Some(reason) },
    };
    let unrolled = unroll(&miter, k.max(1));
    let enc = tseitin(&unrolled);
    match sat_solve(&enc.cnf, Some(timeout)) {
        SatResult::Unsat => Eqv::Equivalent,
        SatResult::Timeout => Eqv::Unverifiable { reason: "timeout".into() },
        SatResult::Sat(model) => {
            let steps = unrolled.inputs.iter().filter_map(|p| parse_step_input_name(&p.name)).map(|(_, t)| t).max().unwrap_or(1);
            let mut trace = vec![BTreeMap::new(); steps];
            for p in &unrolled.inputs {
                let Some((name, t)) = parse_step_input_name(&p.name) else { continue };
                let bits: String =
                    p.bits.iter().rev().map(|&n| if model[enc.var(n) as usize - 1] { '1' } else { '0' }).collect();
                trace[t - 1].insert(name.to_string(), bits);
            }
            Eqv::Inequivalent { trace, reason: None }
        }
    }
}

/// Converts a trace back to per-step simulation inputs for `n`; inputs
/// missing from the trace are 0.
pub fn trace_inputs(n: &Netlist, trace: &Trace) -> Vec<Vec<Vec<bool>>> {
    trace
        .iter()
        .map(|step| {
            n.inputs
                .iter()
                .map(|p| {
                    let text = step.get(&p.name).map(String::as_str).unwrap_or("");
                    let lsb_first: Vec<bool> = text.chars().rev().map(|c| c == '1').collect();
                    (0..p.bits.len()).map(|i| lsb_first.get(i).copied().unwrap_or(false)).collect()
                })
                .collect()
        })
        .collect()
}

/// Whether simulating both designs on `trace` shows differing outputs at
/// some step.
pub fn trace_distinguishes(a: &Netlist, b: &Netlist, trace: &Trace) -> bool {
    let oa = a.simulate(&trace_inputs(a, trace));
    let ob = b.simulate(&trace_inputs(b, trace));
    oa.iter().zip(&ob).any(|(sa, sb)| {
        a.outputs.iter().zip(sa).any(|(p, va)| {
            let j = b.outputs.iter().position(|q| q.name == p.name).expect("miter interfaces match");
            *va != sb[j]
        })
    })
}

fn external_equivalence(command: &str, reference: &str, candidate: &str, top: &str, opts: &EquivOptions) -> Eqv {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => return Eqv::Unverifiable { reason: format!("cannot create a scratch directory: {e}") },
    };
    let write = |name: &str, text: &str| -> std::io::Result<String> {
        let path = dir.path().join(name);
        std::fs::write(&path, text)?;
        Ok(path.display().to_string())
    };
    let (rp, cp) = match (write("reference.sv", reference), write("candidate.sv", candidate)) {
        (Ok(r), Ok(c)) => (r, c),
        (Err(e), _) | (_, Err(e)) => return Eqv::Unverifiable { reason: format!("cannot write sources: {e}") },
    };
    let vars = HashMap::from([("reference", rp), ("candidate", cp), ("top", top.to_string()), ("k", opts.k.to_string())]);
    match run_template(command, &vars, Some(opts.timeout)) {
        Ok(out) => match out.status {
            Some(0) => Eqv::Equivalent,
            Some(1) => Eqv::Inequivalent { trace: vec![], reason: Some(out.describe()) },
            _ if out.timed_out => Eqv::Unverifiable { reason: "timeout".into() },
            _ => Eqv::Unverifiable { reason: out.describe() },
        },
        Err(e) => Eqv::Unverifiable { reason: e },
    }
}

struct CommandOutput {
    status: Option<i32>,
    stderr: String,
    timed_out: bool,
}

impl CommandOutput {
    fn describe(&self) -> String {
        let status = match (self.timed_out, self.status) {
            (true, _) => "timed out".to_string(),
            (false, Some(c)) => format!("exit status {c}"),
            (false, None) => "killed by a signal".to_string(),
        };
        match self.stderr.trim() {
            "" => status,
            err => format!("{status}: {err}"),
        }
    }
}

/// Splits `template` shell-style and substitutes `{name}` placeholders in
/// each word.
fn expand_template(template: &str, vars: &HashMap<&str, String>) -> Result<Vec<String>, String> {
    let words = shlex::split(template).ok_or_else(|| format!("cannot split command template {template:?}"))?;
    if words.is_empty() {
        return Err("empty command template".into());
    }
    Ok(words
        .into_iter()
        .map(|w| vars.iter().fold(w, |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v)))
        .collect())
}

fn run_template(template: &str, vars: &HashMap<&str, String>, timeout: Option<Duration>) -> Result<CommandOutput, String> {
    let argv = expand_template(template, vars)?;
    let mut child = Command::new(&argv[0])
        .args(&argv[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot run {}: {e}", argv[0]))?;
    let mut stderr_pipe = child.stderr.take().expect("piped");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr_pipe.read_to_string(&mut s);
        s
    });
    let start = Instant::now();
    let mut timed_out = false;
    let status = loop {
        match child.try_wait().map_err(|e| e.to_string())? {
            Some(status) => break status,
            None if timeout.is_some_and(|t| start.elapsed() >= t) => {
                let _ = child.kill();
                timed_out = true;
                break child.wait().map_err(|e| e.to_string())?;
            }
            None => std::thread::sleep(Duration::from_millis(5)),
        }
    };
    let stderr = reader.join().unwrap_or_default();
    Ok(CommandOutput { status: if timed_out { None } else { status.code() }, stderr, timed_out })
}

/// Full scoring of one completion. EQV runs only when STX passes.
pub fn verify(task: &TaskRecord, completion: &str, top: &str, syntax: &CheckMode, equiv: &EquivOptions) -> Verdict {
    let candidate = reinsert(task, completion);
    let stx = check_syntax(&candidate, syntax);
    let eqv = if stx.passed() { check_equivalence(&task.reference, &candidate, top, equiv) } else { Eqv::Skipped };
    Verdict { stx, eqv }
}

/// The builtin checker as the liveness filter's oracle.
#[derive(Debug, Clone, Default)]
pub struct BuiltinOracle {
    pub options: EquivOptions,
}

impl EquivalenceOracle for BuiltinOracle {
    fn check(&self, reference: &str, candidate: &str, top: &str) -> OracleVerdict {
        if let Stx::Fail { diagnostic } = check_syntax(candidate, &CheckMode::Builtin) {
            return OracleVerdict::Unverifiable(format!("neutralized design does not parse: {diagnostic}"));
        }
        match check_equivalence(reference, candidate, top, &self.options) {
            Eqv::Equivalent => OracleVerdict::Equivalent,
            Eqv::Inequivalent { .. } => OracleVerdict::Inequivalent,
            Eqv::Unverifiable { reason } => OracleVerdict::Unverifiable(reason),
            Eqv::Skipped => OracleVerdict::Unverifiable("skipped".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rulemask_core::grammar::RuleOccurrence;
    use rulemask_core::sampler::mask;
    use rulemask_core::Span;

    fn wrap(body: &str) -> String {
        format!("module m(input a, input b, output y);\n{body}\nendmodule\n")
    }

    fn eqv(a: &str, b: &str) -> Eqv {
        check_equivalence(&wrap(a), &wrap(b), "m", &EquivOptions::default())
    }

    #[test]
    fn reinsertion() {
        let occ = RuleOccurrence { rule_name: "expression".into(), span: Span::new(11, 13), node_path: vec![] };
        let t = mask("assign y = !a;", &occ, "<<<M>>>").unwrap();
        assert_eq!(reinsert(&t, "~a"), "assign y = ~a;");
        assert_eq!(reinsert(&t, &t.ground_truth), t.reference);
        assert_eq!(reinsert(&t, ""), "assign y = ;");
    }

    #[test]
    fn syntax_verdicts() {
        assert_eq!(check_syntax(&wrap("assign y = ~a;"), &CheckMode::Builtin), Stx::Pass);
        assert!(!check_syntax(&wrap("assign = !a = !a;"), &CheckMode::Builtin).passed());
        let fails = CheckMode::External { command: "sh -c 'echo lint says no >&2; exit 1'".into() };
        assert_eq!(check_syntax("x", &fails), Stx::Fail { diagnostic: "exit status 1: lint says no".into() });
        let reads = CheckMode::External { command: "grep -q endmodule {file}".into() };
        assert!(check_syntax(&wrap(""), &reads).passed());
    }

    #[test]
    fn equivalence_examples() {
        assert_eq!(eqv("assign y = !a;", "assign y = ~a;"), Eqv::Equivalent);
        let Eqv::Inequivalent { trace, reason: None } = eqv("assign y = a & b;", "assign y = a | b;") else { panic!() };
        let (a, b) = (&trace[0]["a"], &trace[0]["b"]);
        assert!(a != b, "witness must set exactly one input: a={a} b={b}");
        assert_eq!(eqv("assign y = a ^ b;", "assign y = a ^ b;"), Eqv::Equivalent);
        assert!(matches!(eqv("assign y = a;", "assign y = a; assign y = b;"), Eqv::Unverifiable { .. }));
    }

    #[test]
    fn external_protocol() {
        let opts = |cmd: &str| EquivOptions { mode: CheckMode::External { command: cmd.into() }, ..Default::default() };
        let run = |cmd: &str| check_equivalence("a", "b", "m", &opts(cmd));
        assert_eq!(run("true"), Eqv::Equivalent);
        assert!(matches!(run("false"), Eqv::Inequivalent { .. }));
        assert!(matches!(run("sh -c 'exit 3'"), Eqv::Unverifiable { .. }));
        assert_eq!(run("sh -c 'test {top} = m && test {k} = 3 && cmp -s {reference} {reference}'"), Eqv::Equivalent);
        let mut slow = opts("sleep 5");
        slow.timeout = Duration::from_millis(50);
        assert_eq!(check_equivalence("a", "b", "m", &slow), Eqv::Unverifiable { reason: "timeout".into() });
    }

    #[test]
    fn verdict_serialization() {
        let v = Verdict { stx: Stx::Pass, eqv: Eqv::Unverifiable { reason: "timeout".into() } };
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"{"stx":{"status":"pass"},"eqv":{"status":"unverifiable","reason":"timeout"}}"#);
        assert_eq!(serde_json::from_str::<Verdict>(&s).unwrap(), v);
    }
}
