//! End-to-end tests of the `aquaspec` binary: exit codes, file outputs,
//! and byte-level reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn aquaspec(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aquaspec"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()))
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = aquaspec(&["synth"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn unknown_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = aquaspec(&["--seed", "1", "--models", "bogus", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 7\n[data]\nn_samples = 100\n");
    for out_dir in ["a", "b"] {
        let out = aquaspec(
            &["--config", &config, "--out", out_dir, "synth"],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(read(&a.join("spectra.csv")), read(&b.join("spectra.csv")));
    for name in [
        "reference_chlorophyll_a.csv",
        "reference_green_algae.csv",
        "reference_diatoms.csv",
        "reference_cdom.csv",
        "reference_turbidity.csv",
    ] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)));
    }
}

#[test]
fn run_writes_reports_and_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "seed = 42\n[data]\nn_samples = 120\nnoise_sd = 0.02\n",
    );
    for out_dir in ["one", "two"] {
        let out = aquaspec(
            &[
                "--config", &config,
                "--out", out_dir,
                "--models", "knn",
                "run",
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let one = dir.path().join("one");
    let two = dir.path().join("two");

    let report = read(&one.join("report.csv"));
    assert_eq!(report, read(&two.join("report.csv")));

    let text = String::from_utf8(report).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "parameter,model,arm,r2_percent,rmse,unit,hyperparams,pca_cumvar,seconds"
    );
    // 5 parameters x 1 model x 2 arms.
    assert_eq!(lines.count(), 10);

    assert!(one.join("manifest.txt").exists());
    for parameter in ["chlorophyll_a", "green_algae", "diatoms", "cdom", "turbidity"] {
        assert!(one.join(format!("r2_{parameter}.svg")).exists());
    }
    // SVGs are part of the deterministic output too.
    assert_eq!(
        read(&one.join("r2_cdom.svg")),
        read(&two.join("r2_cdom.svg"))
    );
}

#[test]
fn run_with_single_model_and_arm_emits_five_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "seed = 5\n[data]\nn_samples = 100\n[models]\nlist = [\"knn\"]\narms = [\"pca\"]\n",
    );
    let out = aquaspec(&["--config", &config, "--out", "o", "run"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(read(&dir.path().join("o/report.csv"))).unwrap();
    assert_eq!(text.lines().count(), 6); // header + 5 parameter rows
    for line in text.lines().skip(1) {
        assert!(line.contains(",knn,pca,"));
        // The pca_cumvar column is populated in the PCA arm.
        let cumvar = line.split(',').nth(7).unwrap();
        assert!(!cumvar.is_empty());
    }
}

#[test]
fn histogram_works_with_empty_model_list() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "seed = 3\n[data]\nn_samples = 90\n[models]\nlist = []\n",
    );
    let out = aquaspec(&["--config", &config, "--out", "h", "histogram"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text =
        String::from_utf8(read(&dir.path().join("h/hist_turbidity.csv"))).unwrap();
    assert_eq!(text.lines().next().unwrap(), "bin_low,bin_high,train_count,test_count");
    let mut train = 0usize;
    let mut test = 0usize;
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        train += cells[2].parse::<usize>().unwrap();
        test += cells[3].parse::<usize>().unwrap();
    }
    assert_eq!(train + test, 90);

    // But `run` with no models is a config error.
    let out = aquaspec(&["--config", &config, "--out", "r", "run"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_pca_prints_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 4\n[data]\nn_samples = 80\n");
    let out = aquaspec(
        &["--config", &config, "inspect-pca", "--parameter", "cdom"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("component,variance_ratio,cumulative"));
    assert!(stdout.contains("99.9%"));
}

#[test]
fn thread_cap_env_var_is_validated_and_respected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 6\n[data]\nn_samples = 80\n");

    let out = Command::new(env!("CARGO_BIN_EXE_aquaspec"))
        .args(["--config", &config, "--out", "t", "--models", "knn", "run"])
        .env("AQUASPEC_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = Command::new(env!("CARGO_BIN_EXE_aquaspec"))
        .args(["--config", &config, "synth"])
        .env("AQUASPEC_THREADS", "zero")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
