//! End-to-end runs of the `ave` binary: subcommand grammar, exit codes, and
//! artifact layout.

use std::path::Path;
use std::process::{Command, Output};
use tempfile::TempDir;

fn ave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ave"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn synth_small(dir: &Path) -> String {
    let out = path_str(&dir.join("data.avef"));
    let result = ave(&[
        "synth",
        "--out",
        &out,
        "--classes",
        "3",
        "--per-class",
        "4",
        "--n",
        "4",
        "--seed",
        "7",
        "--background-rate",
        "0.25",
        "--sigma",
        "0.05",
    ]);
    assert_eq!(result.status.code(), Some(0));
    out
}

#[test]
fn synth_reports_counts_and_is_checksum_stable() {
    let dir = TempDir::new().unwrap();
    let out = synth_small(dir.path());
    let first = std::fs::read(&out).unwrap();

    let again = ave(&[
        "synth",
        "--out",
        &out,
        "--classes",
        "3",
        "--per-class",
        "4",
        "--n",
        "4",
        "--seed",
        "7",
        "--background-rate",
        "0.25",
        "--sigma",
        "0.05",
    ]);
    assert_eq!(again.status.code(), Some(0));
    let second = std::fs::read(&out).unwrap();
    assert_eq!(first, second);

    let stdout = String::from_utf8(again.stdout).unwrap();
    assert!(stdout.contains("12 sequences (48 segments)"));
    assert!(stdout.contains("class 0: 4 sequences"));
    assert!(stdout.contains("background fraction"));
}

#[test]
fn train_eval_attend_pipeline_works_end_to_end() {
    let dir = TempDir::new().unwrap();
    let data = synth_small(dir.path());
    let checkpoint = path_str(&dir.path().join("model.avec"));
    let log = path_str(&dir.path().join("log.csv"));

    let train = ave(&[
        "train",
        "--train",
        &data,
        "--checkpoint",
        &checkpoint,
        "--log",
        &log,
        "--n",
        "4",
        "--d-a",
        "16",
        "--d-v",
        "16",
        "--k",
        "4",
        "--depth",
        "1",
        "--class-count",
        "4",
        "--epochs",
        "2",
        "--batch-size",
        "4",
        "--seed",
        "3",
        "--learning-rate",
        "0.002",
    ]);
    assert_eq!(
        train.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&train.stderr)
    );
    assert!(dir.path().join("log.csv.config.json").exists());
    assert!(dir.path().join("model.avec.config.json").exists());

    let confusion = path_str(&dir.path().join("confusion.csv"));
    let eval = ave(&[
        "eval",
        "--checkpoint",
        &checkpoint,
        "--data",
        &data,
        "--out",
        &confusion,
    ]);
    assert_eq!(
        eval.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let stdout = String::from_utf8(eval.stdout).unwrap();
    assert!(stdout.contains("segment accuracy:"), "stdout: {stdout}");
    assert!(Path::new(&confusion).exists());

    let heat_dir = path_str(&dir.path().join("attention"));
    let attend = ave(&[
        "attend",
        "--checkpoint",
        &checkpoint,
        "--data",
        &data,
        "--sequence",
        "1",
        "--out-dir",
        &heat_dir,
    ]);
    assert_eq!(
        attend.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&attend.stderr)
    );
    for t in 0..4 {
        assert!(Path::new(&heat_dir)
            .join(format!("seg_{t:03}.csv"))
            .exists());
        assert!(Path::new(&heat_dir)
            .join(format!("seg_{t:03}.pgm"))
            .exists());
    }
    assert!(Path::new(&heat_dir).join("config.json").exists());

    // Out-of-range sequence index: usage error.
    let attend_bad = ave(&[
        "attend",
        "--checkpoint",
        &checkpoint,
        "--data",
        &data,
        "--sequence",
        "99",
        "--out-dir",
        &heat_dir,
    ]);
    assert_eq!(attend_bad.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = TempDir::new().unwrap();

    // Usage error from clap: unknown subcommand.
    assert_eq!(ave(&["frobnicate"]).status.code(), Some(2));

    // Config error: oversized gradcheck dims.
    assert_eq!(ave(&["gradcheck", "--n", "10"]).status.code(), Some(2));

    // Config error: strategy width mismatch.
    assert_eq!(
        ave(&[
            "params",
            "--fusion-strategy",
            "addition",
            "--d-a",
            "8",
            "--d-v",
            "16"
        ])
        .status
        .code(),
        Some(2)
    );

    // I/O-parse error: missing feature file.
    let missing = path_str(&dir.path().join("missing.avef"));
    let ckpt = path_str(&dir.path().join("missing.avec"));
    let out = path_str(&dir.path().join("c.csv"));
    assert_eq!(
        ave(&[
            "eval",
            "--checkpoint",
            &ckpt,
            "--data",
            &missing,
            "--out",
            &out
        ])
        .status
        .code(),
        Some(3)
    );

    // Parse error: corrupted magic.
    let data = synth_small(dir.path());
    let mut bytes = std::fs::read(&data).unwrap();
    bytes[0] = b'Q';
    std::fs::write(&data, &bytes).unwrap();
    let log = path_str(&dir.path().join("log.csv"));
    let train = ave(&[
        "train",
        "--train",
        &data,
        "--checkpoint",
        &ckpt,
        "--log",
        &log,
        "--n",
        "4",
        "--class-count",
        "4",
    ]);
    assert_eq!(train.status.code(), Some(3));
    let stderr = String::from_utf8(train.stderr).unwrap();
    assert!(stderr.contains("bad magic"), "stderr: {stderr}");
}

#[test]
fn params_prints_modules_sweep_and_strategies() {
    let output = ave(&[
        "params",
        "--n",
        "10",
        "--d-a",
        "128",
        "--d-v",
        "128",
        "--k",
        "10",
        "--depth",
        "2",
        "--class-count",
        "6",
        "--sweep",
        "--strategies",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8(output.stdout).unwrap();
    for module in [
        "early_fusion",
        "audio_encoder",
        "visual_encoder",
        "jca_stack",
        "head",
        "total",
    ] {
        assert!(stdout.contains(module), "missing {module}: {stdout}");
    }

    // Depth sweep increments are constant.
    let sweep_lines: Vec<&str> = stdout
        .lines()
        .skip_while(|l| !l.trim_start().starts_with("depth"))
        .skip(2)
        .take(4)
        .collect();
    let increments: Vec<u64> = sweep_lines
        .iter()
        .map(|l| l.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(increments.len(), 4);
    assert!(increments.windows(2).all(|w| w[0] == w[1]));

    // Strategy totals reproduce the ordering.
    let total_for = |name: &str| -> u64 {
        stdout
            .lines()
            .find(|l| l.starts_with(name))
            .unwrap_or_else(|| panic!("missing {name}"))
            .split_whitespace()
            .last()
            .unwrap()
            .parse()
            .unwrap()
    };
    let add = total_for("addition ");
    let mul = total_for("multiplication ");
    let cat = total_for("concatenation ");
    let add_fc = total_for("addition_fc");
    let mul_fc = total_for("multiplication_fc");
    let cat_fc = total_for("concatenation_fc");
    assert_eq!(add, mul);
    assert!(add < cat);
    assert!(cat < add_fc);
    assert_eq!(add_fc, mul_fc);
    assert!(mul_fc < cat_fc);
}

#[test]
fn gradcheck_depth_zero_and_custom_depth_pass() {
    // Depth 0 must verify (degenerate stack) quickly with a small sample cap.
    let output = ave(&["gradcheck", "--depth", "0", "--samples", "4"]);
    assert_eq!(
        output.status.code(),
        Some(0),
        "stdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
}

#[test]
fn ave_seed_environment_variable_is_the_fallback() {
    let dir = TempDir::new().unwrap();
    let out_a = path_str(&dir.path().join("a.avef"));
    let out_b = path_str(&dir.path().join("b.avef"));
    let out_c = path_str(&dir.path().join("c.avef"));

    let run = |out: &str, env: Option<&str>, seed_flag: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_ave"));
        cmd.args([
            "synth",
            "--out",
            out,
            "--classes",
            "2",
            "--per-class",
            "2",
            "--n",
            "3",
        ]);
        if let Some(seed) = seed_flag {
            cmd.args(["--seed", seed]);
        }
        if let Some(value) = env {
            cmd.env("AVE_SEED", value);
        }
        assert_eq!(cmd.output().unwrap().status.code(), Some(0));
    };

    run(&out_a, Some("41"), None);
    run(&out_b, None, Some("41"));
    run(&out_c, Some("99"), Some("41")); // flag beats the environment
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    let c = std::fs::read(&out_c).unwrap();
    assert_eq!(a, b);
    assert_eq!(b, c);
}
