//! End-to-end runs of the `invaert` binary on tiny configs.

use std::path::Path;
use std::process::{Command, Output};

const TINY_LINEAR: &str = r#"
experiment = "linear"
seed = 5

[data]
n_sims = 300

[emulator.train]
epochs = 4

[flow]
width = 4
hidden_layers = 1

[flow.train]
epochs = 4

[vae.train]
epochs = 4

[sampling]
n = 12
"#;

fn invaert(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invaert"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env_remove("INVAERT_SEED")
        .env_remove("INVAERT_OUT")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = invaert(dir, args);
    assert!(
        out.status.success(),
        "invaert {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("tiny.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_LINEAR);
    let run = tmp.path().join("run");
    ok(&run, &["--config", &cfg, "generate-data"]);
    ok(&run, &["train", "emulator"]);
    ok(&run, &["train", "flow"]);
    ok(&run, &["train", "vae"]);
    ok(&run, &["sample-outputs", "--n", "20"]);
    ok(
        &run,
        &[
            "invert",
            "--ystar",
            "14.65,14.65",
            "--strategy",
            "pc",
            "--R",
            "2",
        ],
    );
    let verify = ok(&run, &["verify", "--oracle", "exact"]);
    assert!(verify.contains("12 rows verified"), "{verify}");
    ok(&run, &["eval-emulator", "--rollouts", "0"]);
    ok(&run, &["report"]);
    for f in [
        "dataset.csv",
        "dataset.json",
        "config.toml",
        "config.json",
        "model.invaert",
        "outputs.csv",
        "inversion.csv",
        "latents.csv",
        "verification.csv",
        "verification.json",
        "emulator_eval.json",
        "report/summary.json",
        "report/losses.csv",
        "report/zeta_histogram.csv",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let outputs = std::fs::read_to_string(run.join("outputs.csv")).unwrap();
    assert_eq!(outputs.lines().count(), 21);
    let inversion = std::fs::read_to_string(run.join("inversion.csv")).unwrap();
    assert!(inversion.starts_with("# y_star=14.65;14.65\n# strategy=pc\n"));
}

#[test]
fn generate_data_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_LINEAR);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&a, &["--config", &cfg, "--seed", "9", "generate-data"]);
    ok(&b, &["--config", &cfg, "--seed", "9", "generate-data"]);
    for f in ["dataset.csv", "dataset.json", "config.toml"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
    let c = tmp.path().join("c");
    ok(&c, &["--config", &cfg, "--seed", "10", "generate-data"]);
    assert_ne!(
        std::fs::read(a.join("dataset.csv")).unwrap(),
        std::fs::read(c.join("dataset.csv")).unwrap()
    );
}

#[test]
fn corrector_with_zero_iterations_equals_prior_sampling() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_LINEAR);
    let run = tmp.path().join("run");
    ok(&run, &["--config", &cfg, "generate-data"]);
    ok(&run, &["train", "all"]);
    let body = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    };
    ok(&run, &["invert", "--strategy", "prior"]);
    let prior = body(&run.join("inversion.csv"));
    ok(&run, &["invert", "--strategy", "pc", "--R", "0"]);
    let pc0 = body(&run.join("inversion.csv"));
    assert_eq!(prior, pc0);
    assert_eq!(prior.len(), 13);
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write_config(tmp.path(), "experiment = \"linear\"\nnot_a_key = 1\n");
    let out = invaert(&tmp.path().join("x"), &["--config", &bad, "generate-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = write_config(tmp.path(), TINY_LINEAR);
    let out = invaert(&tmp.path().join("y"), &["--config", &cfg, "train", "all"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = invaert(&tmp.path().join("z"), &["report"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stale_model_for_another_experiment_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TINY_LINEAR);
    let run = tmp.path().join("run");
    ok(&run, &["--config", &cfg, "generate-data"]);
    ok(&run, &["train", "all"]);
    let sine = tmp.path().join("sine.toml");
    std::fs::write(&sine, "experiment = \"sine\"\n").unwrap();
    let out = invaert(&run, &["--config", sine.to_str().unwrap(), "invert"]);
    assert!(!out.status.success());
}
