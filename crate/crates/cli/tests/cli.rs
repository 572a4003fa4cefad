use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

/// Runs the binary in `cwd` so no stray config file is picked up.
fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covslice"))
        .args(args)
        .current_dir(cwd)
        .env_remove("COVSLICE_API_KEY")
        .output()
        .expect("binary runs")
}

fn run(args: &[&str]) -> (Output, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    (run_in(dir.path(), args), dir)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(name);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&v).unwrap()
}

fn assert_valid(schema_name: &str, json: &str) -> Value {
    let v: Value = serde_json::from_str(json).unwrap_or_else(|e| panic!("not JSON ({e}): {json}"));
    let errors: Vec<String> = schema(schema_name)
        .iter_errors(&v)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:#?}");
    v
}

/// The error object is the last stderr line.
fn error_object(o: &Output) -> Value {
    let err = stderr(o);
    let last = err.lines().last().expect("stderr has an error line");
    assert_valid("error.schema.json", last)
}

const TOY: &str = "corpus/toy_sub";

fn refine_args(out: &str) -> Vec<String> {
    [
        "refine",
        "--design",
        &fx(TOY),
        "--top",
        "toy_top",
        "--report",
        &fx("refine/scenario.cov"),
        "--llm",
        &format!("a=mock:{}", fx("refine/model_a.json")),
        "--llm",
        &format!("b=mock:{}", fx("refine/model_b.json")),
        "--llm",
        &format!("c=mock:{}", fx("refine/model_c.json")),
        "-o",
        out,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn trace_emits_slice_json() {
    let (o, _d) = run(&[
        "trace",
        "--design",
        &fx(TOY),
        "--top",
        "toy_top",
        "--seed",
        "done",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("trace.schema.json", &stdout(&o));
    assert!(v["statements_by_module"]["fsm"]
        .as_array()
        .is_some_and(|a| !a.is_empty()));
    let ports: Vec<&str> = v["entry_ports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p.as_str().unwrap())
        .collect();
    assert_eq!(ports, ["clk", "rst_n", "start"]);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let (o, _d) = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage:"));
}

#[test]
fn refine_without_sim_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json").display().to_string();
    let o = run_in(dir.path(), &strs(&refine_args(&out)));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("Usage: covslice refine"), "{err}");
    assert!(err.contains("--sim"), "{err}");
    assert!(!Path::new(&out).exists());
}

#[test]
fn bad_top_is_a_domain_error_with_json() {
    let (o, _d) = run(&[
        "dump-model",
        "--design",
        &fx(TOY),
        "--top",
        "nope",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_object(&o);
    assert_eq!(e["error"], "top-module-not-found");
    assert!(e["message"].as_str().unwrap().contains("nope"));
    assert!(stdout(&o).is_empty());
}

#[test]
fn dump_model_json_validates() {
    let (o, _d) = run(&[
        "dump-model",
        "--design",
        &fx(TOY),
        "--top",
        "toy_top",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v = assert_valid("dump-model.schema.json", &stdout(&o));
    assert_eq!(v["top_module"], "toy_top");
    for (name, top) in [
        ("pwrctrl", "pwrctrl"),
        ("feedback", "feedback_top"),
        ("arbiter", "arb_top"),
        ("uart_lite", "uart_top"),
    ] {
        let (o, _d) = run(&[
            "dump-model",
            "--design",
            &fx(&format!("corpus/{name}")),
            "--top",
            top,
            "--json",
        ]);
        assert_eq!(o.status.code(), Some(0), "{name}");
        assert_valid("dump-model.schema.json", &stdout(&o));
    }
}

#[test]
fn pipeline_outputs_validate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let slice = d.join("slice.json").display().to_string();
    let o = run_in(
        d,
        &[
            "trace",
            "--design",
            &fx(TOY),
            "--top",
            "toy_top",
            "--seed",
            "done,hs.busy",
            "--json",
            "-o",
            &slice,
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&slice).unwrap(), stdout(&o));

    let fdut = d.join("fdut").display().to_string();
    let o = run_in(
        d,
        &[
            "patch",
            "--design",
            &fx(TOY),
            "--top",
            "toy_top",
            "--slice",
            &slice,
            "-o",
            &fdut,
            "--json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("patch.schema.json", &stdout(&o));
    assert_eq!(v["dropped_statements"].as_array().unwrap().len(), 0);
    for f in v["files"].as_array().unwrap() {
        assert!(Path::new(&fdut).join(f["path"].as_str().unwrap()).is_file());
    }
    assert!(Path::new(&fdut).join("provenance.json").is_file());

    let o = run_in(
        d,
        &[
            "analyze",
            "--report",
            &fx("refine/scenario.cov"),
            "--design",
            &fx(TOY),
            "--top",
            "toy_top",
            "--json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("analyze.schema.json", &stdout(&o));
    assert_eq!(v["open_items"], 5);
    assert_eq!(v["seeds"]["18"], serde_json::json!(["fsm.done"]));

    let o = run_in(
        d,
        &[
            "analyze",
            "--report",
            &fx("coverage/toy_sub.html"),
            "--json",
            "--budget",
            "1",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("analyze.schema.json", &stdout(&o));
    assert_eq!(v["score"], 72.5);

    let report = d.join("report.json").display().to_string();
    let mut args = refine_args(&report);
    args.extend([
        "--sim".into(),
        format!("mock:{}", fx("refine/sim_script.json")),
        "--target".into(),
        "100".into(),
        "--json".into(),
    ]);
    let o = run_in(d, &strs(&args));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("verification-report.schema.json", &stdout(&o));
    assert_eq!(v["stop_reason"], "target_reached");
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout(&o));

    let o = run_in(d, &["report", &report, "--json"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), std::fs::read_to_string(&report).unwrap());
    let o = run_in(d, &["report", &report]);
    assert!(stdout(&o).contains("final score 100.00"));
}

#[test]
fn ir_validate_reports_findings() {
    let (o, _d) = run(&[
        "ir",
        "validate",
        &fx("ir/pwrctrl.ir"),
        "--design",
        &fx("corpus/pwrctrl"),
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("ir-validate.schema.json", &stdout(&o));
    assert_eq!(v["errors"], 0);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ir");
    let text = std::fs::read_to_string(fx("ir/pwrctrl.ir")).unwrap();
    std::fs::write(&bad, text.replace("signal psel in 1", "signal psel in 2")).unwrap();
    let o = run_in(
        dir.path(),
        &[
            "ir",
            "validate",
            bad.to_str().unwrap(),
            "--design",
            &fx("corpus/pwrctrl"),
            "--json",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let v = assert_valid("ir-validate.schema.json", &stdout(&o));
    assert_eq!(v["errors"], 1);
    assert_eq!(v["findings"][0]["code"], "port-width");
    assert_eq!(error_object(&o)["error"], "ir-invalid");
}

#[test]
fn specialize_writes_components() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("uvm");
    let transcript = format!("mock:{}", fx("llm/pwrctrl_specialize.json"));
    let o = run_in(
        dir.path(),
        &[
            "specialize",
            "--ir",
            &fx("ir/pwrctrl.ir"),
            "--llm",
            &transcript,
            "-o",
            out.to_str().unwrap(),
            "--env",
            "--json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = assert_valid("specialize.schema.json", &stdout(&o));
    let files: Vec<&str> = v["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["file"].as_str().unwrap())
        .collect();
    assert_eq!(files.len(), 5);
    for f in files {
        assert!(Path::new(f).is_file());
    }
    assert!(std::fs::read_to_string(out.join("apb0_driver.sv"))
        .unwrap()
        .contains("vif.drv_cb.pready"));
}

#[test]
fn specialize_rejects_tampered_frozen_text() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("evil.json");
    std::fs::write(&t, r#"{"responses": {"*": "class evil; endclass\n"}}"#).unwrap();
    let o = run_in(
        dir.path(),
        &[
            "specialize",
            "--ir",
            &fx("ir/pwrctrl.ir"),
            "--llm",
            &format!("mock:{}", t.display()),
            "-o",
            "out",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    let e = error_object(&o);
    assert_eq!(e["error"], "frozen-region-violation");
    assert!(e["message"].as_str().unwrap().contains("3 attempts"));
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("covslice.toml"),
        format!(
            "[refine]\nmax_iters = 1\ntarget_score = 100\n\n[sim]\nbackend = \"mock:{}\"\n",
            fx("refine/sim_script.json")
        ),
    )
    .unwrap();
    let report = d.join("r.json").display().to_string();
    let mut args = refine_args(&report);
    args.push("--json".into());
    // Sim backend and the iteration cap come from the file.
    let o = run_in(d, &strs(&args));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["stop_reason"], "max_iterations");
    assert_eq!(v["iterations"], 1);
    // A flag overrides the file.
    args.extend(["--max-iters".into(), "5".into()]);
    let o = run_in(d, &strs(&args));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["stop_reason"], "target_reached");
    assert_eq!(v["iterations"], 2);
    // An explicit --config wins over the working-directory file.
    let other = d.join("other.toml");
    std::fs::write(&other, "[refine]\nwaiver_quorum = 9\n").unwrap();
    let mut bad = args.clone();
    bad.extend(["--config".into(), other.display().to_string()]);
    let o = run_in(d, &strs(&bad));
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_object(&o)["error"], "invalid-config");
}

#[test]
fn log_level_controls_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json").display().to_string();
    let mut args = refine_args(&report);
    args.extend([
        "--sim".into(),
        format!("mock:{}", fx("refine/sim_script.json")),
        "--target".into(),
        "100".into(),
    ]);
    let o = run_in(dir.path(), &strs(&args));
    assert!(stderr(&o).contains("WARN"), "{}", stderr(&o));
    let mut quiet = args.clone();
    quiet.extend(["--log-level".into(), "off".into()]);
    let o = run_in(dir.path(), &strs(&quiet));
    assert_eq!(o.status.code(), Some(0));
    assert!(stderr(&o).is_empty(), "{}", stderr(&o));
}

const SUBCOMMANDS: &[&[&str]] = &[
    &[],
    &["dump-model"],
    &["trace"],
    &["patch"],
    &["analyze"],
    &["ir"],
    &["ir", "validate"],
    &["specialize"],
    &["refine"],
    &["report"],
];

fn golden_name(path: &[&str]) -> String {
    if path.is_empty() {
        "covslice.txt".into()
    } else {
        format!("{}.txt", path.join("_"))
    }
}

#[test]
fn help_matches_golden() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/help");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for path in SUBCOMMANDS {
        let mut args = path.to_vec();
        args.push("--help");
        let (o, _d) = run(&args);
        assert_eq!(o.status.code(), Some(0));
        let text = stdout(&o);
        let file = golden.join(golden_name(path));
        if update {
            std::fs::create_dir_all(&golden).unwrap();
            std::fs::write(&file, &text).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&file)
            .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", file.display()));
        assert_eq!(text, want, "{}", file.display());
    }
}

#[test]
fn every_leaf_command_takes_json() {
    for path in SUBCOMMANDS
        .iter()
        .filter(|p| !p.is_empty() && **p != ["ir"])
    {
        let mut args = path.to_vec();
        args.push("--help");
        let (o, _d) = run(&args);
        assert!(stdout(&o).contains("--json"), "{path:?}");
    }
}
