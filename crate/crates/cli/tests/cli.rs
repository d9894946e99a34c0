use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hybrid-aoi"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

#[test]
fn solve_default_config() {
    let out = run(&["solve"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("j_star=1.43963\n"), "{text}");
    assert!(text.contains("actions_used=0,7,8,9,10\n"), "{text}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    fs::write(&cfg, "# low SNR\nsnr_db = 8\nm_trunc = 30\n").unwrap();
    let from_file = stdout(&run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--kind",
        "oma-only-optimal",
    ]));
    let overridden = stdout(&run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--snr-db",
        "30",
        "--kind",
        "oma-only-optimal",
    ]));
    let j = |s: &str| -> f64 {
        s.lines()
            .find_map(|l| l.strip_prefix("j_star="))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(j(&from_file) > 5.0);
    assert!(j(&overridden) < 1.6);
    let via_set = stdout(&run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "snr_db=30",
        "--kind",
        "oma-only-optimal",
    ]));
    assert_eq!(via_set, overridden);
}

#[test]
fn simulate_requires_seed_and_is_deterministic() {
    let out = run(&["simulate"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--seed"));

    let args = [
        "simulate",
        "--seed",
        "12",
        "--sim-horizon",
        "50000",
        "--kind",
        "suboptimal",
        "--m-trunc",
        "40",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).starts_with("horizon=50000\nseed=12\n"));
}

#[test]
fn simulate_policy_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let out = run(&["solve", "--m-trunc", "30", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let out = run(&[
        "simulate",
        "--seed",
        "1",
        "--sim-horizon",
        "1000",
        "--m-trunc",
        "30",
        "--policy-file",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = run(&[
        "simulate",
        "--seed",
        "1",
        "--sim-horizon",
        "1000",
        "--policy-file",
        csv.to_str().unwrap(),
    ]);
    assert!(stderr(&out).starts_with("error: invalid-config:"));
}

#[test]
fn errors_are_one_classified_line() {
    let out = run(&["solve", "--d1", "9"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: invalid-config: "), "{err}");
    assert_eq!(err.lines().count(), 1);

    let out = run(&["solve", "--set", "colour=blue"]);
    assert!(stderr(&out).starts_with("error: parse: "));

    let out = run(&["solve", "--config", "/nonexistent/exp.conf"]);
    assert!(stderr(&out).starts_with("error: io: "));
}

#[test]
fn map_and_sweep_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = run(&[
        "map",
        "--output-dir",
        d,
        "--m-trunc",
        "30",
        "--policies",
        "optimal-adaptive,oma-only-optimal",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for name in [
        "policy_optimal-adaptive.csv",
        "policy_oma-only-optimal.meta",
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let csv = fs::read_to_string(dir.path().join("policy_optimal-adaptive.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("delta1,delta2,action"));
    assert_eq!(csv.lines().count(), 901);

    let out = run(&[
        "sweep",
        "--output-dir",
        d,
        "--m-trunc",
        "30",
        "--snr-grid-db",
        "10:14:2",
        "--sim-horizon",
        "1000",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("10,optimal-adaptive,"));
}

#[test]
fn verify_reports_clean_structure() {
    let out = run(&["verify", "--m-trunc", "50"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("switching_violations=0\n"));
    assert!(text.contains("tail_subadditive_violations=0\n"));
}
