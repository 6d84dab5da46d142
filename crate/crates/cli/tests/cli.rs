use std::path::Path;
use std::process::{Command, Output};

#[rustfmt::skip]
const SMALL: &[&str] = &[
    "--set", "plan.samples=240",
    "--set", "plan.classes=3",
    "--set", "plan.features=6",
    "--set", "plan.class_prior=0.3",
    "--set", "train.epochs=3",
    "--set", "train.batch_size=32",
    "--set", "train.warmup_steps=5",
    "--set", "train.hidden=8",
    "--set", "train.handler_warmup_epochs=1",
    "--set", "plan.rates=0.3",
    "--set", "plan.seeds=0,1",
];

fn nar(args: &[&str], out: &Path) -> Output {
    // synthetic-data keys conflict with plan.data_dir
    let on_files = args.iter().any(|a| a.starts_with("plan.data_dir="));
    let small = SMALL
        .chunks(2)
        .filter(|kv| !(on_files && kv[1].starts_with("plan.")))
        .flatten();
    Command::new(env!("CARGO_BIN_EXE_nar"))
        .args(args)
        .args(small)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn drivers_write_identical_bytes_on_repeat_runs() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["sweep", "uniform", "oracle", "sensitivity"] {
        let a = tmp.path().join(format!("{cmd}-a"));
        let b = tmp.path().join(format!("{cmd}-b"));
        for dir in [&a, &b] {
            let out = nar(&[cmd], dir);
            assert!(
                out.status.success(),
                "{cmd}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let (fa, fb) = (read_dir_sorted(&a), read_dir_sorted(&b));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{cmd} outputs differ");
    }
}

#[test]
fn sequential_and_parallel_cells_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let seq = tmp.path().join("seq");
    let par = tmp.path().join("par");
    assert!(nar(&["sweep", "--set", "plan.parallel=false"], &seq)
        .status
        .success());
    assert!(nar(&["sweep", "--set", "plan.parallel=true"], &par)
        .status
        .success());
    assert_eq!(read_dir_sorted(&seq), read_dir_sorted(&par));
}

#[test]
fn data_pipeline_round_trips_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let noisy = tmp.path().join("noisy");
    assert!(nar(&["inject"], &noisy).status.success());
    let data_dir = format!("plan.data_dir={}", noisy.display());
    let run = tmp.path().join("run");
    let out = nar(&["train", "--set", &data_dir], &run);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ckpt = run.join("model.ckpt");
    let eval = tmp.path().join("eval");
    let out = nar(
        &[
            "eval",
            "--set",
            &data_dir,
            "--model",
            ckpt.to_str().unwrap(),
        ],
        &eval,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(
        std::fs::read(run.join("metrics.csv")).unwrap(),
        std::fs::read(eval.join("metrics.csv")).unwrap()
    );
}

#[test]
fn config_file_and_overrides_are_applied_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\ntrain.epochs = 2\n").unwrap();
    let out = nar(
        &["train", "--config", cfg.to_str().unwrap()],
        &tmp.path().join("a"),
    );
    assert!(out.status.success());
    // SMALL sets train.epochs=3 after the file
    let log = std::fs::read_to_string(tmp.path().join("a/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4, "{log}");
}

#[test]
fn configuration_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--set", "train.nonsense=1"],
        vec!["train", "--set", "noise.rate=1.5"],
        vec!["train", "--set", "thresholds.t1_flip=0.9"],
        vec!["oracle", "--set", "noise.kind=mixed"],
        vec!["sensitivity", "--method", "bce"],
        vec!["eval", "--model", "/nonexistent/model.ckpt"],
        vec!["sweep", "--set", "plan.override.elr.lr=1e-2"],
    ] {
        let out = nar(&args, &tmp.path().join("x"));
        assert_eq!(
            out.status.code(),
            Some(1),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let bad_cfg = tmp.path().join("bad.cfg");
    std::fs::write(&bad_cfg, "train.epochs = 2\nnot an assignment\n").unwrap();
    let out = nar(
        &["train", "--config", bad_cfg.to_str().unwrap()],
        &tmp.path().join("y"),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn divergence_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nar(&["train", "--set", "train.lr=1e300"], &tmp.path().join("t"));
    assert_eq!(out.status.code(), Some(2));
    // drivers still write their CSVs and record the failed cells
    let sweep = tmp.path().join("s");
    let out = nar(
        &["sweep", "--set", "plan.override.elr.train.lr=1e300"],
        &sweep,
    );
    assert_eq!(out.status.code(), Some(2));
    let results = std::fs::read_to_string(sweep.join("sweep_results.csv")).unwrap();
    assert!(
        results
            .lines()
            .any(|l| l.starts_with("elr,") && l.contains(",nan")),
        "{results}"
    );
    assert!(results
        .lines()
        .any(|l| l.starts_with("bce,") && !l.contains("nan")));
}
