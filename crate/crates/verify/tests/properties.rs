// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rulemask_core::grammar::parse_source;
use rulemask_verify::check::{check_equivalence, equivalence_of, trace_distinguishes, EquivOptions, Eqv};
use rulemask_verify::cnf::{export_dimacs, import_dimacs, tseitin, CnfFormula};
use rulemask_verify::elab::elaborate;
use rulemask_verify::miter::{build_miter, unroll};
use rulemask_verify::netlist::{Gate, GateOp, NetId, Netlist, Port, PortKind};
use rulemask_verify::sat::{solve_with, Branching, SatResult, SolverOptions};

fn elab(src: &str, top: &str) -> Netlist {
    elaborate(&parse_source(src).unwrap(), top, &BTreeMap::new()).unwrap()
}

fn to_bits(v: u64, w: usize) -> Vec<bool> {
    (0..w).map(|i| (v >> i) & 1 == 1).collect()
}

fn from_bits(b: &[bool]) -> u64 {
    b.iter().enumerate().map(|(i, &x)| u64::from(x) << i).sum()
}

/// Gate counts of a W-bit ripple-carry adder with carry-in 0 and no
/// carry-out: a half adder, W-2 full adders and a final sum-only stage.
fn ripple_gate_counts(w: usize) -> BTreeMap<&'static str, usize> {
    let full = w.saturating_sub(2);
    BTreeMap::from([("xor", 1 + 2 * full + 2), ("and", 1 + 2 * full), ("or", full)])
}

#[test]
fn adder_matches_ripple_carry_oracle() {
    for w in [2usize, 3] {
        let src = format!("module add(input [{m}:0] a, b, output [{m}:0] s); assign s = a + b; endmodule", m = w - 1);
        let nl = elab(&src, "add");
        let count = |op| nl.gates.iter().filter(|g| g.op == op).count();
        let got = BTreeMap::from([("xor", count(GateOp::Xor)), ("and", count(GateOp::And)), ("or", count(GateOp::Or))]);
        assert_eq!(got, ripple_gate_counts(w), "width {w}");
        for a in 0..1u64 << w {
            for b in 0..1u64 << w {
                let out = nl.simulate(&[vec![to_bits(a, w), to_bits(b, w)]]);
                assert_eq!(from_bits(&out[0][0]), (a + b) % (1 << w), "{a}+{b}");
            }
        }
    }
    assert_eq!(ripple_gate_counts(2), BTreeMap::from([("xor", 3), ("and", 1), ("or", 0)]));
}

/// A random flop-free netlist over `inputs` single-bit inputs with one
/// output `y` driven by the last gate.
fn random_netlist(rng: &mut ChaCha8Rng, inputs: usize, gates: usize) -> Netlist {
    let mut nets: Vec<NetId> = (0..inputs as u32).map(NetId).collect();
    let ports = (0..inputs).map(|i| Port { name: format!("i{i}"), bits: vec![nets[i]], kind: PortKind::Primary }).collect();
    let mut gate_list = Vec::new();
    for g in 0..gates {
        let op = match rng.random_range(0..12) {
            0 => GateOp::Not,
            1..=3 => GateOp::And,
            4..=6 => GateOp::Or,
            7..=9 => GateOp::Xor,
            10 => GateOp::Mux,
            _ => {
                if rng.random() {
                    GateOp::Const1
                } else {
                    GateOp::Const0
                }
            }
        };
        let ins = (0..op.arity()).map(|_| nets[rng.random_range(0..nets.len())]).collect();
        let output = NetId((inputs + g) as u32);
        gate_list.push(Gate { op, inputs: ins, output });
        nets.push(output);
    }
    let y = *nets.last().unwrap();
    Netlist {
        num_nets: (inputs + gates) as u32,
        inputs: ports,
        outputs: vec![Port { name: "y".into(), bits: vec![y], kind: PortKind::Primary }],
        gates: gate_list,
        flops: vec![],
    }
}

fn eval_row(n: &Netlist, row: u64) -> bool {
    let ins: Vec<Vec<bool>> = (0..n.inputs.len()).map(|i| vec![(row >> i) & 1 == 1]).collect();
    let v = n.eval(&ins, &[]);
    v[n.outputs[0].bits[0].index()]
}

#[test]
fn tseitin_models_are_exactly_the_firing_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..25 {
        let inputs = rng.random_range(1..=10);
        let n = random_netlist(&mut rng, inputs, 20);
        assert_eq!(n.validate(), Ok(()));
        let enc = tseitin(&n);
        assert_eq!(enc.cnf.validate(), Ok(()));
        for row in 0..1u64 << inputs {
            let mut f = enc.cnf.clone();
            // inputs own the lowest variables, in port order
            f.clauses.extend((0..inputs).map(|i| vec![if (row >> i) & 1 == 1 { i as i32 + 1 } else { -(i as i32 + 1) }]));
            let sat = matches!(solve_with(&f, SolverOptions::default()), SatResult::Sat(_));
            assert_eq!(sat, eval_row(&n, row), "row {row:b}");
        }
    }
}

#[test]
fn netlist_pair_equivalence_matches_exhaustive_comparison() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut eq, mut neq) = (0, 0);
    for _ in 0..40 {
        let inputs = rng.random_range(1..=6);
        let a = random_netlist(&mut rng, inputs, 12);
        let b = random_netlist(&mut rng, inputs, 12);
        let same = (0..1u64 << inputs).all(|r| eval_row(&a, r) == eval_row(&b, r));
        let verdict = equivalence_of(&a, &b, 1, Duration::from_secs(10));
        let reverse = equivalence_of(&b, &a, 1, Duration::from_secs(10));
        assert_eq!(matches!(verdict, Eqv::Equivalent), same);
        assert_eq!(matches!(reverse, Eqv::Equivalent), same, "symmetry");
        match verdict {
            Eqv::Equivalent => eq += 1,
            Eqv::Inequivalent { trace, .. } => {
                neq += 1;
                assert!(trace_distinguishes(&a, &b, &trace));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(equivalence_of(&a, &a, 1, Duration::from_secs(10)), Eqv::Equivalent);
    }
    assert!(eq > 0 && neq > 0, "both outcomes exercised ({eq} / {neq})");
}

#[test]
fn sequential_base_case() {
    let counter = |init: &str| {
        format!(
            "module cnt(input clk, input en, output [1:0] q);\n  reg [1:0] c = {init};\n  assign q = c;\n  \
             always @(posedge clk) if (en) c <= c + 2'd1;\nendmodule\n"
        )
    };
    let opts = |k| EquivOptions { k, ..Default::default() };
    let same = check_equivalence(&counter("2'd0"), &counter("2'd0"), "cnt", &opts(3));
    assert_eq!(same, Eqv::Equivalent);
    let Eqv::Inequivalent { trace, .. } = check_equivalence(&counter("2'd0"), &counter("2'd1"), "cnt", &opts(1)) else {
        panic!("different initial values must be told apart at the first step")
    };
    assert_eq!(trace.len(), 1);

    // a one-bit toggle and a design that only differs from the third step on
    let toggle = "module t(input clk, output q); reg r; assign q = r; always @(posedge clk) r <= !r; endmodule";
    let late = "module t(input clk, output q); reg r; reg [1:0] n; assign q = (n == 2'd2) ? 1'b1 : r;\n\
                always @(posedge clk) begin r <= !r; if (n != 2'd3) n <= n + 2'd1; end endmodule";
    assert_eq!(check_equivalence(toggle, late, "t", &opts(2)), Eqv::Equivalent);
    let Eqv::Inequivalent { trace, .. } = check_equivalence(toggle, late, "t", &opts(3)) else { panic!() };
    assert!(trace_distinguishes(&elab(toggle, "t"), &elab(late, "t"), &trace));
}

#[test]
fn unrolled_miter_of_identical_counters_is_unsat() {
    let c = elab("module c(input clk, input en, output reg q); always @(posedge clk) if (en) q <= !q; endmodule", "c");
    let u = unroll(&build_miter(&c, &c).unwrap(), 3);
    assert_eq!(solve_with(&tseitin(&u).cnf, SolverOptions::default()), SatResult::Unsat);
}

fn brute_force(f: &CnfFormula) -> bool {
    (0..1u64 << f.num_vars).any(|m| {
        let model: Vec<bool> = (0..f.num_vars).map(|i| (m >> i) & 1 == 1).collect();
        f.is_satisfied_by(&model)
    })
}

fn cnf_strategy(max_vars: u32) -> impl Strategy<Value = CnfFormula> {
    (1..=max_vars).prop_flat_map(|n| {
        let lit = (1..=n as i32, any::<bool>()).prop_map(|(v, s)| if s { v } else { -v });
        prop::collection::vec(prop::collection::vec(lit, 1..=3), 0..(5 * n as usize)).prop_map(move |clauses| CnfFormula {
            num_vars: n,
            clauses,
            assumptions: vec![],
        })
    })
}

proptest! {
    #[test]
    fn solver_agrees_with_enumeration(f in cnf_strategy(10)) {
        let expected = brute_force(&f);
        for branching in [Branching::Ascending, Branching::Activity] {
            match solve_with(&f, SolverOptions { branching, timeout: None }) {
                SatResult::Sat(model) => {
                    prop_assert!(expected);
                    prop_assert!(f.is_satisfied_by(&model));
                }
                SatResult::Unsat => prop_assert!(!expected),
                SatResult::Timeout => prop_assert!(false, "no timeout was set"),
            }
        }
    }

    #[test]
    fn solver_is_deterministic(f in cnf_strategy(12)) {
        prop_assert_eq!(solve_with(&f, SolverOptions::default()), solve_with(&f, SolverOptions::default()));
    }

    #[test]
    fn dimacs_round_trip(f in cnf_strategy(20)) {
        let back = import_dimacs(&export_dimacs(&f)).unwrap();
        prop_assert_eq!(back.num_vars, f.num_vars);
        let mut a = back.clauses.clone();
        let mut b = f.clauses.clone();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}
