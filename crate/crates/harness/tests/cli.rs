// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rulemask::evaluate::ResultRow;
use rulemask::read_jsonl;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn rulemask(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rulemask")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Answers every request with the same chat completion.
fn serve_constant(reply: &'static str) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let head = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                reply.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    format!("http://{addr}/v1")
}

fn small_design(dir: &Path) -> PathBuf {
    std::fs::write(
        dir.join("inv.v"),
        "module inv(input a, input b, output y, output z);\n  assign y = !a;\n  assign z = a & b;\nendmodule\n",
    )
    .unwrap();
    let config = dir.join("small.toml");
    std::fs::write(&config, "sources = [\"inv.v\"]\nrules = [\"CONT\"]\n").unwrap();
    config
}

#[test]
fn generate_evaluate_report_with_mocks() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("tasks.jsonl");
    let rejected = dir.path().join("rejected.jsonl");
    let config = fixtures().join("pipeline.toml");
    let o = rulemask(&["generate", "--config", path(&config), "--out", path(&tasks), "--rejections", path(&rejected)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("tasks written"));
    assert!(rejected.exists());

    let results = dir.path().join("oracle.jsonl");
    let o = rulemask(&["evaluate", "--tasks", path(&tasks), "--model", "mock:oracle", "--out", path(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("oracle.responses.jsonl").exists());
    let rows: Vec<ResultRow> = read_jsonl(&results).unwrap();
    assert!(rows.iter().all(|r| r.stx_pass()));

    let csv = dir.path().join("matrix.csv");
    let o = rulemask(&["report", path(&results), "--csv", path(&csv), "--tasks", path(&tasks)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let matrix = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = matrix.lines().collect();
    assert!(lines[0].starts_with("system,"), "{matrix}");
    assert!(lines[1].starts_with("mock:oracle (chat),"), "{matrix}");
    assert!(lines.last().unwrap().starts_with("average,"), "{matrix}");
}

#[test]
fn recorded_run_replays_identically() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_design(dir.path());
    let tasks = dir.path().join("tasks.jsonl");
    assert!(rulemask(&["generate", "--config", path(&config), "--out", path(&tasks)]).status.success());

    let endpoint = serve_constant(r#"{"choices":[{"message":{"role":"assistant","content":"```verilog\nassign y = !a;\n```"}}]}"#);
    let profile = dir.path().join("local.toml");
    std::fs::write(&profile, format!("name = \"local\"\nendpoint = \"{endpoint}\"\nmodel = \"m\"\n")).unwrap();

    let recording = dir.path().join("exchanges.jsonl");
    let live = dir.path().join("live.jsonl");
    let replayed = dir.path().join("replayed.jsonl");
    let o = rulemask(&[
        "evaluate", "--tasks", path(&tasks), "--model", path(&profile), "--out", path(&live), "--record", path(&recording),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = rulemask(&[
        "evaluate", "--tasks", path(&tasks), "--model", path(&profile), "--out", path(&replayed), "--replay", path(&recording),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let strip = |p: &Path| -> Vec<ResultRow> {
        read_jsonl::<ResultRow>(p).unwrap().into_iter().map(|r| ResultRow { latency_ms: None, ..r }).collect()
    };
    let (a, b) = (strip(&live), strip(&replayed));
    assert!(!a.is_empty());
    assert!(a.iter().any(|r| r.eqv_pass()), "{a:?}");
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("live.responses.jsonl")).unwrap(),
        std::fs::read_to_string(dir.path().join("replayed.responses.jsonl")).unwrap()
    );
}

#[test]
fn malformed_result_row_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_design(dir.path());
    let tasks = dir.path().join("tasks.jsonl");
    assert!(rulemask(&["generate", "--config", path(&config), "--out", path(&tasks)]).status.success());
    let results = dir.path().join("results.jsonl");
    assert!(rulemask(&["evaluate", "--tasks", path(&tasks), "--model", "mock:constant", "--out", path(&results)]).status.success());

    let mut text = std::fs::read_to_string(&results).unwrap();
    text.push_str("{\"task_id\":\"x\",\"model\":\"m\"}\n");
    std::fs::write(&results, &text).unwrap();
    let o = rulemask(&["report", path(&results)]);
    assert!(!o.status.success());
    let line = text.lines().count();
    assert!(stderr(&o).contains(&format!(":{line}: schema error")), "{}", stderr(&o));
}

#[test]
fn empty_results_warn_and_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("empty.jsonl");
    std::fs::write(&results, "").unwrap();
    let o = rulemask(&["report", path(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no result rows"));
}

#[test]
fn stats_lists_every_selected_rule() {
    let o = rulemask(&["stats", "--config", path(&fixtures().join("pipeline.toml"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 9, "{out}");
    for acronym in ["PORT", "PARAM", "INST", "CONT", "ALWS", "BLK", "NBLK", "COND", "CASE"] {
        assert!(rows.iter().any(|r| r.starts_with(acronym)), "{acronym} missing from\n{out}");
    }
}

#[test]
fn unknown_rule_is_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "sources = [\"does/not/exist\"]\nrules = [\"CONT\", \"LOOP\"]\n").unwrap();
    let out = dir.path().join("tasks.jsonl");
    let o = rulemask(&["generate", "--config", path(&config), "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown rule \"LOOP\""), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn example_profiles_load() {
    let dir = tempfile::tempdir().unwrap();
    let tasks = dir.path().join("none.jsonl");
    std::fs::write(&tasks, "").unwrap();
    for name in ["local-chat.toml", "local-fim.toml", "hosted.toml"] {
        let profile = fixtures().join("profiles").join(name);
        let out = dir.path().join("out.jsonl");
        let o = rulemask(&["evaluate", "--tasks", path(&tasks), "--model", path(&profile), "--out", path(&out)]);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
    }
}
