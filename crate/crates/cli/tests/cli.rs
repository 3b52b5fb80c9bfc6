use std::path::Path;
use std::process::{Command, Output};

fn phaseid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phaseid")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"
[data]
n_customers = 30
n_timesteps = 24
phase_mix = "A:0.5, B:0.3, C:0.2"

[selection]
m = 6

[training]
epochs = 4
hidden_width = 8
stat_hidden_width = 8

[baselines]
correlation = true
kmeans = true

[experiment]
trials = 2
seed = 11
arms = "inverse_schur:0.1, random:0"
"#;

fn write_config(dir: &Path) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, CONFIG).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&phaseid(&[])), 1);
    assert_eq!(code(&phaseid(&["frobnicate"])), 1);
    assert_eq!(code(&phaseid(&["select", "--data", "x.csv", "--method", "magic", "--m", "3"])), 1);
    assert_eq!(code(&phaseid(&["--help"])), 0);
}

#[test]
fn missing_input_is_a_data_error() {
    let o = phaseid(&["select", "--data", "/nonexistent/v.csv", "--method", "random", "--m", "3"]);
    assert_eq!(code(&o), 2);
    let o = phaseid(&["run", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn step_by_step_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(d);
    let data_dir = d.join("data");
    assert_eq!(code(&phaseid(&["--quiet", "synth", "--config", &cfg, "--out", s(&data_dir)])), 0);
    let v = data_dir.join("voltages.csv");
    let l = data_dir.join("labels.csv");
    assert!(v.exists() && l.exists());

    let sel = d.join("sel.txt");
    let o = phaseid(&["--quiet", "select", "--data", s(&v), "--method", "inverse_schur", "--m", "6", "--out", s(&sel)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let record = std::fs::read_to_string(&sel).unwrap();
    assert!(record.starts_with("method inverse_schur\nm 6\n"));

    let model = d.join("model.txt");
    let o = phaseid(&[
        "--quiet", "--seed", "3", "train", "--data", s(&v), "--labels", s(&l), "--beta", "0.1", "--selection", s(&sel),
        "--model-out", s(&model), "--epochs", "5", "--hidden-width", "8", "--stat-hidden-width", "8",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let preds = d.join("pred.csv");
    let o = phaseid(&["--quiet", "eval", "--data", s(&v), "--labels", s(&l), "--model", s(&model), "--selection", s(&sel), "--predictions-out", s(&preds)]);
    assert_eq!(code(&o), 0);
    let acc: f64 = stdout(&o).trim().strip_prefix("accuracy ").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(std::fs::read_to_string(&preds).unwrap().lines().count(), 31);

    for method in ["knn", "correlation", "kmeans"] {
        let o = phaseid(&["--quiet", "baseline", "--data", s(&v), "--labels", s(&l), "--method", method, "--selection", s(&sel)]);
        assert_eq!(code(&o), 0, "{method}");
        assert!(stdout(&o).starts_with("accuracy "));
    }

    // training needs labels
    let o = phaseid(&["--quiet", "train", "--data", s(&v), "--beta", "0", "--selection", s(&sel), "--model-out", s(&model)]);
    assert_eq!(code(&o), 2);
    // an absurd step size blows the parameters up
    let o = phaseid(&[
        "--quiet", "train", "--data", s(&v), "--labels", s(&l), "--beta", "0.1", "--selection", s(&sel), "--model-out",
        s(&model), "--learning-rate", "1e300", "--epochs", "20", "--hidden-width", "4", "--stat-hidden-width", "4",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn entropy_command() {
    let o = phaseid(&["entropy", "--n", "5000"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let bits = |key: &str| -> f64 {
        text.lines().find_map(|l| l.strip_prefix(&format!("{key} = "))).unwrap().parse().unwrap()
    };
    assert!((bits("lower_bits") + 10.85).abs() < 0.01);
    assert!((bits("upper_bits") + 3.62).abs() < 0.01);

    let dir = tempfile::tempdir().unwrap();
    let cov = dir.path().join("cov.csv");
    std::fs::write(&cov, "1,0.5\n0.5,2\n").unwrap();
    let o = phaseid(&["entropy", "--n", "2", "--from-covariance", s(&cov)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("gaussian_entropy_nats"));
    std::fs::write(&cov, "1,x\n0.5,2\n").unwrap();
    assert_eq!(code(&phaseid(&["entropy", "--n", "2", "--from-covariance", s(&cov)])), 2);
    std::fs::write(&cov, "1,2\n2,1\n").unwrap();
    assert_eq!(code(&phaseid(&["entropy", "--n", "2", "--from-covariance", s(&cov)])), 3);
}

#[test]
fn run_is_deterministic_and_reproducible_from_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(code(&phaseid(&["--quiet", "run", "--config", &cfg, "--out", s(&a)])), 0);
    assert_eq!(code(&phaseid(&["--quiet", "run", "--config", &cfg, "--out", s(&b)])), 0);
    for f in ["accuracy.csv", "embedding.csv", "entropy.txt", "provenance.txt", "embedding.svg"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let acc = std::fs::read_to_string(a.join("accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 5);
    assert_eq!(code(&phaseid(&["--quiet", "report", "--provenance", s(&a.join("provenance.txt")), "--out", s(&c)])), 0);
    assert_eq!(std::fs::read(a.join("accuracy.csv")).unwrap(), std::fs::read(c.join("accuracy.csv")).unwrap());
}
