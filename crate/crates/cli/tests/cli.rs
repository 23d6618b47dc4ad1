use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"
mode = "sabr_t"
[data]
n_classes = 6
n_seen = 4
per_class = 40
test_per_class = 10
d_feat = 12
d_attr = 5
[latent]
epochs = 5
[seen_gan]
epochs = 4
checkpoint_every = 2
generator_hidden = 16
critic_hidden = 16
critic_steps = 2
[unseen_gan]
epochs = 3
generator_hidden = 16
critic_hidden = 16
critic_steps = 2
[protocol]
n_per_class = 30
[protocol.classifier]
epochs = 5
[early_stop]
n_folds = 2
[omega_sweep]
n_folds = 2
grid = [0.0, 0.5]
"#;

fn sabr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sabr"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn quick_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("quick.toml"), QUICK).unwrap();
    dir
}

#[test]
fn stage_commands_compose_to_a_full_run() {
    let dir = quick_dir();
    let d = dir.path();
    let full = sabr(d, &["--config", "quick.toml", "--out", "full", "run"]);
    assert_eq!(code(&full), 0, "{}", String::from_utf8_lossy(&full.stderr));
    assert!(String::from_utf8_lossy(&full.stdout).contains("gzsl"));
    for verb in [
        "train-latent",
        "train-seen-gan",
        "train-unseen-gan",
        "synthesize",
        "evaluate",
    ] {
        let out = sabr(d, &["--config", "quick.toml", "--out", "staged", verb]);
        assert_eq!(
            code(&out),
            0,
            "{verb}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    assert_eq!(
        fs::read(d.join("full/report.json")).unwrap(),
        fs::read(d.join("staged/report.json")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("full/manifest.json")).unwrap(),
        fs::read(d.join("staged/manifest.json")).unwrap()
    );

    let resumed = sabr(
        d,
        &[
            "--config",
            "quick.toml",
            "--out",
            "full",
            "--from-stage",
            "synthesize",
            "run",
        ],
    );
    assert_eq!(code(&resumed), 0);
    // a different seed must not reuse those artifacts
    let mixed = sabr(
        d,
        &[
            "--config",
            "quick.toml",
            "--seed",
            "9",
            "--out",
            "full",
            "evaluate",
        ],
    );
    assert_eq!(code(&mixed), 2);
}

#[test]
fn missing_upstream_artifacts_exit_with_a_config_error() {
    let dir = quick_dir();
    let out = sabr(
        dir.path(),
        &["--config", "quick.toml", "--out", "r", "synthesize"],
    );
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("synthesize") && err.contains("unseen-gan"),
        "{err}"
    );
    assert!(dir.path().join("r/manifest.json").is_file());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = quick_dir();
    let d = dir.path();
    fs::write(d.join("bad.toml"), "[data]\nper_class = 0\n").unwrap();
    fs::write(d.join("typo.toml"), "[latent]\nepochz = 3\n").unwrap();
    for args in [
        vec!["--config", "bad.toml", "run"],
        vec!["--config", "typo.toml", "run"],
        vec!["--config", "missing.toml", "run"],
        vec!["--config", "quick.toml", "--from-stage", "nowhere", "run"],
        vec![
            "--config",
            "quick.toml",
            "--from-stage",
            "latent",
            "evaluate",
        ],
        vec![
            "--config",
            "quick.toml",
            "ablate-unlabeled",
            "--fractions",
            "0,1",
            "--trials",
            "1",
        ],
        vec!["--bogus-flag", "run"],
    ] {
        assert_eq!(code(&sabr(d, &args)), 2, "{args:?}");
    }
    let inductive = d.join("inductive.toml");
    fs::write(&inductive, QUICK.replace("sabr_t", "sabr_i")).unwrap();
    let out = sabr(
        d,
        &["--config", "inductive.toml", "--out", "i", "sweep-omega"],
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn malformed_data_files_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("features.csv"), "a,1.0,oops\n").unwrap();
    fs::write(d.join("attributes.csv"), "cat,1,0\ndog,0,1\n").unwrap();
    fs::write(
        d.join("split.csv"),
        "instance_id,label,role\na,cat,seen_train\n",
    )
    .unwrap();
    fs::write(
        d.join("files.toml"),
        "[data]\nsource = \"files\"\nfeatures = \"features.csv\"\nattributes = \"attributes.csv\"\nsplit = \"split.csv\"\n",
    )
    .unwrap();
    let out = sabr(d, &["--config", "files.toml", "run"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_thread_cap_is_a_config_error() {
    let dir = quick_dir();
    let out = Command::new(env!("CARGO_BIN_EXE_sabr"))
        .current_dir(dir.path())
        .env("SABR_THREADS", "none")
        .args(["--config", "quick.toml", "run"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}
