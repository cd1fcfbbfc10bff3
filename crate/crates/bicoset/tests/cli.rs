//! End-to-end tests of the binary: exit codes, report shapes, schema
//! conformance, determinism, and the env override.

use std::collections::BTreeSet;
use std::process::{Command, Output};

use serde_json::Value;

fn bicoset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicoset"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn bicoset_env(args: &[&str], key: &str, val: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bicoset"))
        .args(args)
        .env(key, val)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

// ---------------------------------------------------------------------------
// Minimal JSON-schema walker for the subset the published schema uses:
// type (string or list), properties, required, items, enum,
// additionalProperties (bool or schema).
// ---------------------------------------------------------------------------

fn type_matches(t: &str, v: &Value) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        _ => false,
    }
}

fn validate(schema: &Value, inst: &Value, path: &str, errors: &mut Vec<String>) {
    if let Some(ty) = schema.get("type") {
        let ok = match ty {
            Value::String(t) => type_matches(t, inst),
            Value::Array(ts) => ts
                .iter()
                .any(|t| t.as_str().is_some_and(|t| type_matches(t, inst))),
            _ => true,
        };
        if !ok {
            errors.push(format!("{path}: type mismatch (wanted {ty}, got {inst})"));
            return;
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(inst) {
            errors.push(format!("{path}: {inst} not in enum {allowed:?}"));
        }
    }
    if let Some(obj) = inst.as_object() {
        if let Some(req) = schema.get("required").and_then(Value::as_array) {
            for key in req.iter().filter_map(Value::as_str) {
                if !obj.contains_key(key) {
                    errors.push(format!("{path}: missing required key {key}"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        let extra = schema.get("additionalProperties");
        for (key, val) in obj {
            let sub = format!("{path}.{key}");
            match props.and_then(|p| p.get(key)) {
                Some(subschema) => validate(subschema, val, &sub, errors),
                None => match extra {
                    Some(Value::Bool(false)) => {
                        errors.push(format!("{path}: unexpected key {key}"))
                    }
                    Some(Value::Bool(true)) | None => {}
                    Some(subschema) => validate(subschema, val, &sub, errors),
                },
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), inst.as_array()) {
        for (i, val) in arr.iter().enumerate() {
            validate(items, val, &format!("{path}[{i}]"), errors);
        }
    }
}

fn assert_valid_against_schema(report: &Value) {
    let schema_text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../schema/verify_report.schema.json"
    ))
    .expect("schema ships in the repo");
    let schema: Value = serde_json::from_str(&schema_text).unwrap();
    let mut errors = Vec::new();
    validate(&schema, report, "$", &mut errors);
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

// ---------------------------------------------------------------------------
// Exit codes.
// ---------------------------------------------------------------------------

#[test]
fn search_succeeds_and_reports_certificate() {
    let out = bicoset(&["search", "--p", "29", "--d", "3", "--mode", "sieve"]);
    let json = stdout_json(&out);
    assert_eq!(json["p"], 29);
    assert_eq!(json["d"], 3);
    assert!(json["x"].as_u64().unwrap() >= 1);
    assert_eq!(json["l1"], 2);
    assert_eq!(json["l2"], 0);
    assert!(json["sieve"]["slack"].is_number());
    assert!(json["sieve"]["bad_count"].as_u64().unwrap() < 29);
    assert_eq!(json["certificate"]["intersection_trivial"], true);
    assert_eq!(json["certificate"]["word_check"]["mode"], "sieved");
    assert_eq!(json["census"]["candidates_tried"], 1);
}

#[test]
fn divisibility_failure_exits_3() {
    // 3 does not divide (7+1)/2.
    let out = bicoset(&["search", "--p", "7", "--d", "3"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divide"));
}

#[test]
fn exhaustion_exits_2_with_census() {
    // An impossible loop depth rejects all four candidates at p = 5.
    let out = bicoset(&["search", "--p", "5", "--d", "3", "--mode", "scan", "--l1", "9"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rejected_loop"), "census on stderr: {stderr}");
    assert!(stderr.contains("4"));
}

#[test]
fn rejected_pair_exits_3() {
    // x = 0 conjugates H to itself, so the intersection is everything.
    let out = bicoset(&["verify", "--p", "5", "--d", "3", "--x", "0"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_64_and_help_exits_0() {
    let out = bicoset(&["search", "--p", "29"]); // missing --d
    assert_eq!(out.status.code(), Some(64));
    let out = bicoset(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(64));
    let out = bicoset(&["search", "--p", "29", "--d", "3", "--mode", "psychic"]);
    assert_eq!(out.status.code(), Some(64));
    let out = bicoset(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let out = bicoset(&["--version"]);
    assert_eq!(out.status.code(), Some(0));
}

// ---------------------------------------------------------------------------
// Verify report: schema, determinism, env override.
// ---------------------------------------------------------------------------

#[test]
fn verify_report_validates_against_published_schema() {
    let out = bicoset(&["verify", "--p", "11", "--d", "3", "--mode", "scan", "--steps", "20"]);
    let json = stdout_json(&out);
    assert_valid_against_schema(&json);
    assert_eq!(json["girth"], 10);
    assert_eq!(json["connected"], true);
    assert_eq!(json["coset2cayley_ok"], true);
    assert_eq!(json["convexity_ok"], true);
}

#[test]
fn verify_partial_report_validates_too() {
    // A tiny enumeration cap skips girth, spectral, and walk phases but the
    // report still validates and the pair facts survive.
    let out = bicoset(&[
        "verify", "--p", "11", "--d", "3", "--mode", "scan", "--bfs-cap", "50",
    ]);
    let json = stdout_json(&out);
    assert_valid_against_schema(&json);
    assert_eq!(json["girth"], Value::Null);
    assert_eq!(json["spectral"], Value::Null);
    assert_eq!(json["walk"], Value::Null);
    assert_eq!(json["intersection_trivial"], true);
    let phases: BTreeSet<&str> = json["skipped"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["phase"].as_str().unwrap())
        .collect();
    assert!(phases.contains("girth") && phases.contains("spectral") && phases.contains("walk"));
}

fn strip_timings(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timings_ms");
    v
}

#[test]
fn verify_is_deterministic_across_runs_and_threads() {
    let a = stdout_json(&bicoset(&[
        "verify", "--p", "11", "--d", "3", "--steps", "20", "--threads", "1",
    ]));
    let b = stdout_json(&bicoset(&[
        "verify", "--p", "11", "--d", "3", "--steps", "20", "--threads", "2",
    ]));
    assert_eq!(strip_timings(a), strip_timings(b));
}

#[test]
fn search_output_is_byte_deterministic() {
    let a = bicoset(&["search", "--p", "29", "--d", "3", "--mode", "random", "--seed", "5"]);
    let b = bicoset(&["search", "--p", "29", "--d", "3", "--mode", "random", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
    assert!(a.status.success());
}

#[test]
fn dense_cap_env_var_switches_method() {
    let args = ["verify", "--p", "5", "--d", "3", "--steps", "5"];
    let dense = stdout_json(&bicoset(&args));
    assert_eq!(dense["spectral"]["method"], "dense");
    let power = stdout_json(&bicoset_env(&args, "BICOSET_DENSE_CAP", "10"));
    assert_eq!(power["spectral"]["method"], "power");
    // The explicit flag beats the env var.
    let flag = stdout_json(&bicoset_env(
        &["verify", "--p", "5", "--d", "3", "--steps", "5", "--dense-cap", "4000"],
        "BICOSET_DENSE_CAP",
        "10",
    ));
    assert_eq!(flag["spectral"]["method"], "dense");
}

// ---------------------------------------------------------------------------
// CSV and edge-list surfaces.
// ---------------------------------------------------------------------------

#[test]
fn scan_csv_has_expected_rows() {
    let out = bicoset(&["scan", "--d", "3", "--p-min", "5", "--p-max", "12"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "p,group_order,x,girth,girth_bound,norm_bipartite_a0,norm_cayley_s_a0,norm_cayley_s0_a0"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("5,60,"));
    assert!(lines[2].starts_with("11,660,"));
    let norm: f64 = lines[2].split(',').nth(5).unwrap().parse().unwrap();
    assert!(norm > 0.0 && norm < 1.0);
}

#[test]
fn scan_empty_range_is_header_only() {
    let out = bicoset(&["scan", "--d", "3", "--p-min", "6", "--p-max", "10"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1);
}

#[test]
fn export_writes_edge_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p5.edges");
    let out = bicoset(&[
        "export", "--p", "5", "--d", "3", "--x", "1", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# bipartite p=5 d=3 x=1 left=20 right=20");
    assert_eq!(lines.len(), 61);
    assert!(lines[1..].iter().all(|l| {
        let mut parts = l.split(' ');
        let a = parts.next().unwrap_or("");
        let b = parts.next().unwrap_or("");
        a.starts_with('L') && b.starts_with('R') && parts.next().is_none()
    }));
}

#[test]
fn verify_walk_csv_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("flat.csv");
    let out = bicoset(&[
        "verify", "--p", "11", "--d", "3", "--steps", "12", "--walk-csv",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "l,l2_norm,uniform_ratio");
    assert_eq!(lines.len(), 13);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn out_flag_writes_report_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = bicoset(&[
        "verify", "--p", "5", "--d", "3", "--steps", "5", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_valid_against_schema(&json);
}

#[test]
fn forced_x_equals_search_then_verify() {
    // Composition invariant: verifying the x the search picks gives the same
    // report as letting verify search for itself.
    let searched = stdout_json(&bicoset(&[
        "verify", "--p", "11", "--d", "3", "--mode", "scan", "--steps", "10",
    ]));
    let x = searched["x"].as_u64().unwrap().to_string();
    let forced = stdout_json(&bicoset(&[
        "verify", "--p", "11", "--d", "3", "--x", &x, "--steps", "10",
    ]));
    assert_eq!(strip_timings(searched), strip_timings(forced));
}
