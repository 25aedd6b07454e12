use std::path::Path;
use std::process::{Command, Output};

use robustboost::{load_csv, Generator};

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustboost"))
        .args(args)
        .current_dir(dir)
        .env_remove("ROBUSTBOOST_WORKERS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn generate_writes_a_loadable_csv() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bin(
        dir.path(),
        &["generate", "--problem", "mease_wyner", "--n", "2000", "--q", "0.1", "--seed", "7", "--out", "d.csv"],
    ));
    let ds = load_csv(dir.path().join("d.csv")).unwrap();
    assert_eq!(ds.len(), 2000);
    assert_eq!(ds.dim(), 20);
    assert_eq!(ds.meta.generator, Generator::MeaseWyner);
    assert_eq!(ds.meta.seed, 7);
    assert!(ds.rows().flatten().all(|v| (0.0..=1.0).contains(v)));
    let flips = ds.flipped().len() as f64 / 2000.0;
    assert!((flips - 0.1).abs() < 0.03, "flip rate {flips}");
}

#[test]
fn experiment_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |report: &str, workers: &str| {
        ok(&bin(
            dir.path(),
            &[
                "experiment",
                "--preset",
                "long_servedio",
                "--repetitions",
                "3",
                "--iterations",
                "60",
                "--workers",
                workers,
                "--report",
                report,
            ],
        ))
    };
    let t1 = args("a.json", "1");
    let t2 = args("b.json", "1");
    let t3 = args("c.json", "3");
    assert_eq!(t1, t2);
    assert_eq!(t1, t3);
    for header in ["Ada", "Logit", "Robust θ=0", "Robust θ=0.2"] {
        assert!(t1.lines().next().unwrap().contains(header), "{t1}");
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(a, std::fs::read(dir.path().join("c.json")).unwrap());
    assert_eq!(std::fs::read(dir.path().join("a.csv")).unwrap(), std::fs::read(dir.path().join("c.csv")).unwrap());

    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    for key in ["config", "per_repetition", "aggregate", "orderings"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["config"]["repetitions"], 3);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = robustboost::harness::ExperimentConfig::mease_wyner(0.2, robustboost::LearnerKind::Stump);
    std::fs::write(dir.path().join("mw.json"), serde_json::to_string(&cfg).unwrap()).unwrap();
    let table = ok(&bin(
        dir.path(),
        &[
            "experiment",
            "--config",
            "mw.json",
            "--repetitions",
            "1",
            "--n_train",
            "300",
            "--n-test=300",
            "--set",
            "iterations=20",
        ],
    ));
    assert!(table.contains("test error"), "{table}");
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["n_train"], 300);
    assert_eq!(json["config"]["n_test"], 300);
    assert_eq!(json["config"]["algorithms"][2]["epsilon"], 0.25);
    assert_eq!(json["per_repetition"][0]["results"][0]["iterations"], 20);
    assert!(dir.path().join("report.csv").exists());
}

#[test]
fn train_evaluate_and_export() {
    let dir = tempfile::tempdir().unwrap();
    ok(&bin(
        dir.path(),
        &["generate", "--problem", "long_servedio", "--n", "400", "--q", "0", "--seed", "1", "--out", "d.csv"],
    ));
    ok(&bin(
        dir.path(),
        &[
            "train",
            "--data",
            "d.csv",
            "--algorithm",
            "robustboost",
            "--learner",
            "coordinate",
            "--epsilon",
            "0.3",
            "--iterations",
            "400",
            "--snapshots",
            "0,5",
            "--out",
            "m.json",
        ],
    ));
    let eval = ok(&bin(dir.path(), &["evaluate", "--model", "m.json", "--data", "d.csv", "--json"]));
    let rates: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert!(rates["noisy_error"].as_f64().unwrap() <= 0.3 + 1e-12);

    ok(&bin(
        dir.path(),
        &["export-scores", "--model", "m.json", "--data", "d.csv", "--iteration", "0", "--out", "s.csv"],
    ));
    let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    let examples: Vec<&str> = text.lines().filter(|l| l.starts_with("example,")).collect();
    assert_eq!(examples.len(), 400);
    assert!(examples.iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() == 0.0));

    let missing = bin(
        dir.path(),
        &["export-scores", "--model", "m.json", "--data", "d.csv", "--iteration", "3", "--out", "x.csv"],
    );
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn epsilon_search_prints_minimal_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let out =
        ok(&bin(dir.path(), &["epsilon-search", "--preset", "long_servedio", "--grid", "0.9,0.5", "--budget", "100"]));
    assert!(out.contains("minimal feasible ε: 0.5"), "{out}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bogus"][..],
        &["generate", "--problem", "nope", "--n", "3", "--out", "x.csv"],
        &["experiment", "--preset", "long_servedio", "--no-such-key", "1"],
        &["experiment", "--preset", "long_servedio", "--repetitions", "0"],
        &["train", "--data", "d.csv", "--algorithm", "robustboost", "--out", "m.json"],
    ] {
        assert_eq!(bin(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
    let missing = bin(dir.path(), &["evaluate", "--model", "none.json", "--data", "none.csv"]);
    assert_eq!(missing.status.code(), Some(1));
}
