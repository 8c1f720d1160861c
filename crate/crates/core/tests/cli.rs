use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hybrid_fts::export::{read_envelopes_csv, read_numeric_csv, read_trajectory_csv, Manifest};
use hybrid_fts::registry;
use hybrid_fts::sysfile::SystemFile;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-fts"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn simulate_writes_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let res = run(&["simulate", "--example", "paper", "--x0", "1,1", "--t-end", "3", "--out", path_str(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = manifest(&out);
    assert_eq!(m.x0, vec![1.0, 1.0]);
    assert_eq!(m.files.len(), 5);
    for f in &m.files {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = read_trajectory_csv(fs::File::open(out.join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(rows.first().unwrap().x, vec![1.0, 1.0]);
    assert_eq!(rows.iter().filter(|r| r.jump_index.is_some()).count(), m.jumps);
    for name in ["switching_signal.csv", "states.csv", "norm_log10.csv", "lyapunov.csv"] {
        let (head, data) = read_numeric_csv(fs::File::open(out.join(name)).unwrap()).unwrap();
        assert!(!data.is_empty() && data.iter().all(|r| r.len() == head.len()), "{name}");
    }
}

#[test]
fn simulate_from_origin_converges_at_start() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&["simulate", "--example", "paper", "--x0", "0,0", "--out", path_str(tmp.path())]);
    assert_eq!(code(&res), 0);
    let m = manifest(tmp.path());
    assert_eq!(m.reason, hybrid_fts::model::TruncationReason::Converged);
    assert_eq!(m.t_final, 0.0);
    assert_eq!(m.settling_time, Some(0.0));
}

#[test]
fn non_equilibrium_system_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("bad.json");
    fs::write(
        &file,
        r#"{"dim": 2, "flows": [["x2 + 1", "-x1"]],
            "policy": {"mode_schedule": {"kind": "then_hold", "hold": 1}, "t_d": 0.1, "fts_mode": 1}}"#,
    )
    .unwrap();
    let res = run(&["simulate", "--system", path_str(&file), "--x0", "1,0", "--out", path_str(tmp.path())]);
    assert_eq!(code(&res), 1);
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("equilibrium") && err.contains("f1"), "{err}");
}

#[test]
fn configuration_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = path_str(tmp.path());
    assert_eq!(code(&run(&["simulate", "--example", "paper", "--x0", "1", "--out", out])), 1);
    assert_eq!(code(&run(&["simulate", "--example", "nope", "--x0", "1,1", "--out", out])), 1);
    assert_eq!(code(&run(&["simulate", "--example", "paper", "--x0", "1,1", "--dt", "-1", "--out", out])), 1);
    assert_eq!(code(&run(&["simulate", "--x0", "1,1"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    let single = run(&["certify", "--example", "paper", "--radii", "1", "--out", out]);
    assert_eq!(code(&single), 1);
    assert!(String::from_utf8_lossy(&single.stderr).contains("radii"));
}

#[test]
fn non_finite_state_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("blowup.json");
    // x' = x^3 from 2 escapes to infinity at t = 1/8; max_norm is disabled
    fs::write(
        &file,
        r#"{"dim": 1, "flows": [["x1^3"]],
            "policy": {"mode_schedule": {"kind": "then_hold", "hold": 1}, "t_d": 0.1, "fts_mode": 1},
            "integration": {"max_norm": 1e300, "t_end": 1.0, "dt": 0.01}}"#,
    )
    .unwrap();
    let res = run(&["simulate", "--system", path_str(&file), "--x0", "2", "--out", path_str(tmp.path())]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn certify_verdict_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scalar");
    let res = run(&["certify", "--example", "scalar", "--out", path_str(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["verdict"], "FTS-evidence");
    assert!(!read_envelopes_csv(fs::File::open(out.join("envelopes.csv")).unwrap()).unwrap().is_empty());
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().contains("FTS-evidence"));

    let out = tmp.path().join("unstable");
    let res = run(&[
        "certify", "--example", "unstable", "--radii", "0.25,0.5,1", "--angles", "4", "--t-end", "3", "--out",
        path_str(&out),
    ]);
    assert!([3, 4].contains(&code(&res)));
}

#[test]
fn sweep_tabulates_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&[
        "sweep", "--example", "paper-mode5", "--radii", "0.5", "--angles", "3", "--out", path_str(tmp.path()),
    ]);
    assert_eq!(code(&res), 0);
    let text = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.contains("converged")));
}

#[test]
fn lemma1_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let res = run(&["lemma1", "--count", "1000", "--seed", "42", "--out", path_str(tmp.path())]);
    assert_eq!(code(&res), 0);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("lemma1.json")).unwrap()).unwrap();
    assert_eq!(summary["failures"], 0);
    assert!(summary["min_slack"].as_f64().unwrap() >= -1e-12);

    let vacuous = run(&["lemma1", "--count", "0"]);
    assert_eq!(code(&vacuous), 0);
    assert!(String::from_utf8_lossy(&vacuous.stdout).contains("vacuous"));
    assert_eq!(code(&run(&["lemma1", "--adversarial"])), 0);
}

#[test]
fn list_examples_names_every_entry() {
    let res = run(&["list-examples"]);
    assert_eq!(code(&res), 0);
    let text = String::from_utf8_lossy(&res.stdout);
    for (name, _) in registry::list() {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}

#[test]
fn outputs_are_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let res = run(&["simulate", "--example", "paper", "--x0", "0.3,-0.8", "--t-end", "2", "--out", path_str(d)]);
        assert_eq!(code(&res), 0);
    }
    let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for name in names {
        assert_eq!(fs::read(dirs[0].join(&name)).unwrap(), fs::read(dirs[1].join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn exported_entry_runs_like_the_builtin() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("paper.json");
    fs::write(&file, SystemFile::from_entry(&registry::paper_example()).to_json()).unwrap();
    let from_file = tmp.path().join("file");
    let builtin = tmp.path().join("builtin");
    let args = ["--x0", "1,-1", "--t-end", "1"];
    let a = run(&[&["simulate", "--system", path_str(&file), "--out", path_str(&from_file)][..], &args].concat());
    let b = run(&[&["simulate", "--example", "paper", "--out", path_str(&builtin)][..], &args].concat());
    assert_eq!((code(&a), code(&b)), (0, 0));
    assert_eq!(
        fs::read(from_file.join("trajectory.csv")).unwrap(),
        fs::read(builtin.join("trajectory.csv")).unwrap()
    );
}
