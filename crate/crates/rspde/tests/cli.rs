use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn rspde(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rspde"));
    cmd.args(args).env_remove("RSPDE_WORKERS");
    if let Some(w) = workers {
        cmd.env("RSPDE_WORKERS", w);
    }
    cmd.output().expect("binary runs")
}

fn run(config_name: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = config(config_name);
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    rspde(&args, None)
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn contract_violation_is_rejected_before_anything_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("contract_violation.json", &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("contract property"), "{err}");
    assert!(!out.exists());
}

#[test]
fn terminal_outside_the_domain_is_an_assumption_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("terminal_outside.json", &out, &["--experiment", "baseline"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("leaves domain"));
    assert!(!out.exists());
}

#[test]
fn malformed_configs_and_flags_exit_with_the_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("heat_baseline.json")).unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, text.replacen("\"paths\"", "\"pathz\"", 1)).unwrap();
    let out = tmp.path().join("out");
    let o = rspde(&["run", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pathz"));
    assert!(!out.exists());

    let o = run("heat_baseline.json", &out, &["--grid", "32"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run("heat_baseline.json", &out, &["--ns", "8,4"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = config("heat_baseline.json");
    let o = rspde(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn baseline_reports_zero_reflection_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run("heat_baseline.json", &out, &["--ns", "4,64"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("reflection measure mass: 0"), "{summary}");
    let table = fs::read_to_string(out.join("baseline.csv")).unwrap();
    let mut rows = table.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(rows.next(), Some("n,seed,tv_nu,max_distance,cauchy_to_first"));
    for row in rows {
        assert_eq!(row.split(',').nth(2), Some("0"), "{row}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], true);
    assert_eq!(manifest["seeds"], serde_json::json!([1]));
    assert_eq!(manifest["config"]["ns"], serde_json::json!([4.0, 64.0]));
}

#[test]
fn outputs_do_not_depend_on_the_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config("outward_forcing.json");
    let mut dirs = Vec::new();
    for (i, workers) in ["1", "3", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("run{i}"));
        let o = rspde(
            &[
                "run",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--grid",
                "32x128",
                "--ns",
                "4,8,16",
                "--quiet",
            ],
            Some(workers),
        );
        // Three levels cannot fit a rate, so the sweep exits 0 or 5 but
        // never with an error.
        assert!(matches!(o.status.code(), Some(0 | 5)), "{}", String::from_utf8_lossy(&o.stderr));
        dirs.push(out);
    }
    let first = csvs(&dirs[0]);
    assert_eq!(first.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(), ["slopes.csv", "sweep.csv"]);
    for dir in &dirs[1..] {
        assert_eq!(csvs(dir), first);
    }
    let sweep = String::from_utf8(first[1].1.clone()).unwrap();
    assert!(sweep.contains("#grid=d=1 L=4 M=32 N=128 T=1\n"), "{sweep}");
}

#[test]
fn shipped_configs_parse_and_build() {
    let registry = rspde::registry::Registry::builtin();
    for name in ["heat_baseline.json", "outward_forcing.json", "contract_violation.json", "terminal_outside.json"] {
        let run = rspde::config::RunConfig::load(&config(name)).unwrap();
        run.problem.build(&registry).unwrap();
    }
    let schema: serde_json::Value = serde_json::from_str(&fs::read_to_string(config("schema.json")).unwrap()).unwrap();
    assert_eq!(schema["additionalProperties"], false);
}
