use std::fs;
use std::path::Path;
use std::process::Command;

use jumpreg_cli::config::ExperimentConfig;
use jumpreg_cli::run_with_workers;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jumpreg"))
}

fn write_config(dir: &Path, json: &str) -> std::path::PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, json).unwrap();
    p
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_json(
        r#"{
            "experiment": "all",
            "grid": {"dx": 0.1},
            "ensemble": {"paths": 2000, "steps": 20, "bins": 10},
            "kulik": {"configs": 2, "paths": 2000},
            "identities": {"tuples": 20, "points": 10},
            "consistency": {"seeds": 3, "steps": 10},
            "regularity": {"pairs": 100, "triples": 100}
        }"#,
    )
    .unwrap();
    c.output_dir = out.to_path_buf();
    c
}

fn read_all(dir: &Path) -> Vec<(String, String)> {
    let mut v: Vec<(String, String)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for body in [
        "{ \"seed\": 1,\n  \"grid\": {\"dx\": \"wide\"} }",
        r#"{"model": "no_such_model"}"#,
        r#"{"grid": {"cfl_fraction": 3.0}}"#,
        r#"{"bogus": true}"#,
    ] {
        let cfg = write_config(tmp.path(), body);
        let o = bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists());
    }
    let cfg = write_config(tmp.path(), "{ \"seed\": 1,\n  \"grid\": {\"dx\": \"wide\"} }");
    let o = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
    let missing = bin().args(["run", "--config", "/nonexistent/c.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn unwritable_output_directory_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = write_config(tmp.path(), r#"{"experiment": "timechange-identities", "identities": {"tuples": 5}}"#);
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn counterexample_summary_lists_the_four_times() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"experiment": "counterexample", "ensemble": {"paths": 20000}}"#);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    for t in ["0", "0.25", "0.5", "0.75"] {
        let line = summary
            .lines()
            .find(|l| l.contains(&format!("hjb_V(t={t},0)")))
            .unwrap_or_else(|| panic!("t = {t} missing:\n{summary}"));
        assert!(line.ends_with(",PASS"), "{line}");
    }
    let all_pass = summary.lines().skip(2).all(|l| l.ends_with(",PASS"));
    assert_eq!(o.status.code(), Some(if all_pass { 0 } else { 1 }));
    assert!(summary.starts_with("# jumpreg "));
}

#[test]
fn kulik_without_time_change_has_unit_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::from_json(
        r#"{"experiment": "kulik-verify", "kulik": {"configs": 3, "paths": 5000, "t0": 0.3, "t1": 0.3}}"#,
    )
    .unwrap();
    cfg.output_dir = tmp.path().to_path_buf();
    let report = run_with_workers(&cfg, Some(2)).unwrap();
    assert_eq!(report.exit_code, 0);
    assert!(report.checks.iter().all(|c| c.pass));
    let text = fs::read_to_string(tmp.path().join("kulik.csv")).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(2).map(|l| l.split(',').collect()).collect();
    for pair in ["transformed", "rho_weighted"] {
        for r in rows.iter().filter(|r| r[6].ends_with(&format!(":{pair}"))) {
            let name = r[6].rsplit_once(':').unwrap().0;
            let other = if pair == "transformed" { "g_weighted_transformed" } else { "untransformed" };
            let twin = rows
                .iter()
                .find(|q| q[0] == r[0] && q[6] == format!("{name}:{other}"))
                .unwrap();
            assert_eq!(r[7], twin[7], "{name}");
        }
    }
    assert!(rows.iter().filter(|r| r[11] == "true").all(|r| r[10] == "true"));
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let a = small_config(&tmp.path().join("a"));
    let b = small_config(&tmp.path().join("b"));
    let ra = run_with_workers(&a, Some(1)).unwrap();
    let rb = run_with_workers(&b, Some(3)).unwrap();
    assert_eq!(ra.exit_code, rb.exit_code);
    let (fa, fb) = (read_all(&a.output_dir), read_all(&b.output_dir));
    assert_eq!(fa.len(), 13);
    assert_eq!(fa, fb);

    let mut c = small_config(&tmp.path().join("c"));
    c.seed += 1;
    run_with_workers(&c, Some(2)).unwrap();
    let fc = read_all(&c.output_dir);
    let header = |s: &str| s.lines().nth(1).unwrap().to_string();
    let mut differs = false;
    for ((na, ta), (nc, tc)) in fa.iter().zip(&fc) {
        assert_eq!(na, nc);
        assert_eq!(header(ta), header(tc), "{na}");
        differs |= ta.lines().skip(1).ne(tc.lines().skip(1));
    }
    assert!(differs);
}

#[test]
fn output_directory_only_changes_the_location() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = ExperimentConfig::from_json(r#"{"experiment": "sde-consistency", "consistency": {"seeds": 2}}"#).unwrap();
    a.output_dir = tmp.path().join("x");
    let mut b = a.clone();
    b.output_dir = tmp.path().join("y");
    run_with_workers(&a, None).unwrap();
    run_with_workers(&b, None).unwrap();
    assert_eq!(read_all(&a.output_dir), read_all(&b.output_dir));
}

#[test]
fn print_defaults_round_trips() {
    let o = bin().args(["config", "--print-defaults"]).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn list_models_names_the_registry() {
    let o = bin().arg("list-models").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for name in jumpreg::model::model_names() {
        assert!(text.contains(&format!("{name}:")), "{name}");
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{"experiment": "timechange-identities", "identities": {"tuples": 5}}"#);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["run", "--seed", "77", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let first = fs::read_to_string(out.join("identities.csv")).unwrap();
    assert!(first.lines().next().unwrap().ends_with("seed=77"));
}
