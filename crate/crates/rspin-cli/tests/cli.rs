//! End-to-end tests of the `rspin` binary: golden values through the real
//! argument parser, output contracts (JSON schema, CSV header, canonical Lax
//! text), exit codes, and config-file precedence.

use std::io::Write;
use std::process::{Command, Output};

use serde_json::Value;

fn rspin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rspin"))
        .args(args)
        .output()
        .expect("spawn rspin")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_str(&stdout(out)).expect("json stdout")
}

#[test]
fn base_extended_correlator_is_one() {
    let out = rspin(&["correlator", "--r", "3", "--sector", "ext", "--ins", "1:0,1:0"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["num"], "1");
    assert_eq!(doc["den"], "1");
    assert_eq!(doc["provenance"], "both");
    assert!(doc.get("lambda_exp").is_none());
}

#[test]
fn x_series_correlator_r3() {
    let out = rspin(&["correlator", "--r", "3", "--sector", "ext", "--ins", "1:0,2:0,2:0"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["num"], "-1");
    assert_eq!(doc["den"], "3");
    assert_eq!(doc["provenance"], "both");
}

#[test]
fn minus_descendent_uses_recursion_only() {
    let out = rspin(&[
        "correlator",
        "--r",
        "2",
        "--sector",
        "ext",
        "--ins",
        "1:0,1:0,1:0,1:0,1:0",
        "--minus-desc",
        "1",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["provenance"], "recursion");
    assert_ne!(doc["den"], "0");
}

#[test]
fn out_of_range_twist_is_a_parse_error() {
    let out = rspin(&["correlator", "--r", "3", "--sector", "ext", "--ins", "9:0"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("twist"), "stderr: {}", stderr(&out));
}

#[test]
fn closed_sector_rejects_boundary() {
    let out = rspin(&[
        "correlator", "--r", "3", "--sector", "closed", "--ins", "1:0,1:0,1:0", "--boundary", "1",
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn open_boundary_only_correlator() {
    let out = rspin(&["correlator", "--r", "2", "--sector", "open", "--boundary", "3"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["num"], "-2");
    assert_eq!(doc["den"], "1");
    assert_eq!(doc["provenance"], "both");
}

#[test]
fn lax_initial_slice_golden_r2() {
    let out = rspin(&["lax", "--r", "2", "--slice", "initial"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "z^2 + 2*T1\n");
}

#[test]
fn lax_dispersive_initial_slice_golden_r3() {
    let out = rspin(&["lax", "--r", "3", "--dispersive", "--slice", "initial", "--deg", "2"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert_eq!(stdout(&out), "Dx^3 + 3*e^-3*T1\n");
}

#[test]
fn lax_full_jet_shows_higher_couplings() {
    let out = rspin(&["lax", "--r", "3", "--deg", "2"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("z^3"), "got: {text}");
    assert!(text.contains("T2"), "full jet should carry the T2 coupling: {text}");
}

#[test]
fn extended_table_r2_contains_known_entry() {
    let out = rspin(&["table", "--r", "2", "--sector", "ext", "--max-n", "4", "--max-d", "1"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["r"], 2);
    assert_eq!(doc["sector"], "ext");
    let entries = doc["entries"].as_array().expect("entries array");
    assert!(!entries.is_empty());
    // Every extended row leads with the implicit twist -1 insertion.
    for e in entries {
        let ins = e["insertions"].as_array().expect("insertions");
        assert_eq!(ins[0]["twist"], -1);
        assert_eq!(ins[0]["desc"], 0);
    }
    // The three-point tower <tau_0^{-1} (tau_0^1)^3> = -1/2 must be present.
    let hit = entries.iter().any(|e| {
        let ins = e["insertions"].as_array().unwrap();
        ins.len() == 4
            && ins[1..]
                .iter()
                .all(|i| i["twist"] == 1 && i["desc"] == 0)
            && e["value"]["num"] == "-1"
            && e["value"]["den"] == "2"
    });
    assert!(hit, "missing <tau^{{-1}} (tau^1)^3> = -1/2 in {doc}");
}

#[test]
fn closed_table_r2_contains_three_point_one() {
    let out = rspin(&["table", "--r", "2", "--sector", "closed", "--max-n", "4", "--max-d", "1"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["sector"], "closed");
    let entries = doc["entries"].as_array().expect("entries array");
    let hit = entries.iter().any(|e| {
        let ins = e["insertions"].as_array().unwrap();
        ins.len() == 3
            && ins.iter().all(|i| i["twist"] == 0 && i["desc"] == 0)
            && e["value"]["num"] == "1"
            && e["value"]["den"] == "1"
    });
    assert!(hit, "missing <(tau_0^0)^3> = 1 in {doc}");
}

#[test]
fn table_below_any_gate_is_empty_but_valid() {
    let out = rspin(&["table", "--r", "5", "--sector", "closed", "--max-n", "2", "--max-d", "0"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["entries"].as_array().expect("entries").len(), 0);
}

#[test]
fn table_output_is_byte_stable() {
    let args = ["table", "--r", "3", "--sector", "ext", "--max-n", "4", "--max-d", "1"];
    let a = rspin(&args);
    let b = rspin(&args);
    assert_eq!(exit_code(&a), 0);
    assert_eq!(a.stdout, b.stdout, "table output must be deterministic");
}

#[test]
fn table_csv_and_text_renderings() {
    let csv = rspin(&[
        "table", "--r", "2", "--sector", "closed", "--max-n", "3", "--max-d", "0", "--format",
        "csv",
    ]);
    assert_eq!(exit_code(&csv), 0);
    let text = stdout(&csv);
    assert!(text.starts_with("# schema_version 1\n"), "got: {text}");
    assert!(
        text.lines().nth(1).unwrap().starts_with("r,sector,insertions,"),
        "got: {text}"
    );

    let txt = rspin(&[
        "table", "--r", "2", "--sector", "closed", "--max-n", "3", "--max-d", "0", "--format",
        "text",
    ]);
    assert_eq!(exit_code(&txt), 0);
    let body = stdout(&txt);
    assert!(body.starts_with("# r = 2, sector = closed\n"), "got: {body}");
    assert!(body.contains(" = 1 "), "got: {body}");
}

#[test]
fn output_flag_writes_file_and_keeps_stdout_quiet() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("out.json");
    let out = rspin(&[
        "correlator",
        "--r",
        "3",
        "--sector",
        "ext",
        "--ins",
        "1:0,1:0",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    assert!(stdout(&out).is_empty());
    let body = std::fs::read_to_string(&path).expect("read output file");
    let doc: Value = serde_json::from_str(&body).expect("json file");
    assert_eq!(doc["num"], "1");
}

#[test]
fn verify_strings_suite_passes() {
    let out = rspin(&["verify", "--r", "2", "--suite", "strings"]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["schema_version"], 1);
    let suites = doc["suites"].as_array().expect("suites");
    assert_eq!(suites.len(), 1);
    assert_eq!(suites[0]["name"], "strings");
    assert_eq!(suites[0]["pass"], true);
    assert!(suites[0]["checked"].as_u64().unwrap() > 0);
}

#[test]
fn verify_theorem_suite_small_caps() {
    let out = rspin(&[
        "verify", "--r", "2", "--suite", "theorem", "--max-n", "4", "--max-d", "1",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["suites"][0]["pass"], true);
}

#[test]
fn injected_fault_fails_naming_the_flow() {
    let out = rspin(&[
        "verify", "--r", "3", "--suite", "flows", "--max-n", "3", "--max-d", "1",
        "--inject-fault",
    ]);
    assert_eq!(exit_code(&out), 1, "stdout: {}", stdout(&out));
    let doc = json(&out);
    assert_eq!(doc["suites"][0]["pass"], false);
    let msg = doc["suites"][0]["first_failure"].as_str().expect("failure text");
    assert!(msg.contains("T_2 flow"), "failure must name the violated flow: {msg}");
}

#[test]
fn unknown_suite_is_a_parse_error() {
    let out = rspin(&["verify", "--r", "3", "--suite", "bogus"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr(&out).contains("bogus"), "stderr: {}", stderr(&out));
}

#[test]
fn explicit_deg_too_small_is_a_cap_error() {
    let out = rspin(&[
        "correlator", "--r", "3", "--sector", "ext", "--ins", "1:1,1:1,1:1", "--deg", "2",
    ]);
    assert_eq!(exit_code(&out), 3, "stderr: {}", stderr(&out));
    assert!(stderr(&out).contains("cap"), "stderr: {}", stderr(&out));
}

#[test]
fn config_file_applies_and_flags_win() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("run.cfg");
    let mut f = std::fs::File::create(&path).expect("create cfg");
    writeln!(f, "# defaults for a small run").unwrap();
    writeln!(f, "r = 2").unwrap();
    writeln!(f, "format = text").unwrap();
    drop(f);
    let cfg = path.to_str().unwrap();

    // File alone: r = 2 makes <tau^{-1} tau_0^0 tau_0^1> = 1, rendered as text.
    let out = rspin(&[
        "correlator", "--config", cfg, "--sector", "ext", "--ins", "0:0,1:0",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let body = stdout(&out);
    assert!(body.contains("= 1 [both]"), "got: {body}");

    // Flags beat the file: at r = 3 the same key fails the selection rule.
    let out = rspin(&[
        "correlator", "--config", cfg, "--r", "3", "--format", "json", "--sector", "ext",
        "--ins", "0:0,1:0",
    ]);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let doc = json(&out);
    assert_eq!(doc["num"], "0");
}

#[test]
fn malformed_config_line_is_a_parse_error() {
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "r == 2\n").expect("write cfg");
    let out = rspin(&[
        "correlator", "--config", path.to_str().unwrap(), "--sector", "ext", "--ins", "1:0,1:0",
    ]);
    assert_eq!(exit_code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = rspin(&[
        "correlator", "--config", "/nonexistent/rspin.cfg", "--sector", "ext", "--ins", "1:0",
    ]);
    assert_eq!(exit_code(&out), 4, "stderr: {}", stderr(&out));
}

#[test]
fn help_exits_zero_and_bad_flag_exits_two() {
    let ok = rspin(&["--help"]);
    assert_eq!(exit_code(&ok), 0);
    assert!(stdout(&ok).contains("correlator"));
    let bad = rspin(&["correlator", "--no-such-flag"]);
    assert_eq!(exit_code(&bad), 2);
}
