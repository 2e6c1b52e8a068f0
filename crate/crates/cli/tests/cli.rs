use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use decent::training::Checkpoint;

fn decent(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decent"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = decent(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    decent(args, dir).status.code().expect("exited")
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().into(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

/// Tiny dataset plus a short training run in `dir/d` and `dir/r`.
fn trained(dir: &Path, patients: usize) {
    let n = patients.to_string();
    ok(&["generate", "--preset", "tiny", "--set", &format!("patients={n}"), "--out", "d"], dir);
    ok(&["train", "--data", "d", "--out", "r", "--max-epochs", "2"], dir);
}

#[test]
fn generate_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    ok(&["generate", "--preset", "tiny", "--seed", "3", "--out", "a"], t.path());
    ok(&["generate", "--preset", "tiny", "--seed", "3", "--out", "b"], t.path());
    ok(&["generate", "--preset", "tiny", "--seed", "4", "--out", "c"], t.path());
    let a = dir_bytes(&t.path().join("a"));
    assert!(a.len() >= 10);
    assert_eq!(a, dir_bytes(&t.path().join("b")));
    assert_ne!(a, dir_bytes(&t.path().join("c")));
    ok(&["validate", "--data", "a"], t.path());
}

#[test]
fn usage_errors_exit_two() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    assert_eq!(code(&["generate", "--preset", "galaxy", "--out", "x"], p), 2);
    assert_eq!(code(&["generate", "--set", "no_such_key=1", "--out", "x"], p), 2);
    assert_eq!(code(&["generate", "--set", "patients", "--out", "x"], p), 2);
    assert_eq!(code(&["frobnicate"], p), 2);
    assert_eq!(code(&["evaluate", "--data", "d", "--checkpoint", "c", "--task", "sepsis"], p), 2);
}

#[test]
fn data_errors_exit_three() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    assert_eq!(code(&["validate", "--data", "missing"], p), 3);
    ok(&["generate", "--preset", "tiny", "--out", "d"], p);
    let inter = p.join("d/interactions.csv");
    let mut text = fs::read_to_string(&inter).unwrap();
    text.push_str("p0,zz9,physician,100\n");
    fs::write(&inter, text).unwrap();
    assert_eq!(code(&["validate", "--data", "d"], p), 3);
    assert_eq!(code(&["train", "--data", "d", "--out", "r"], p), 3);
}

#[test]
fn corrupted_gradients_exit_four() {
    let t = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gradcheck", "--cases", "2", "--corrupt"], t.path()), 4);
}

#[test]
fn gradcheck_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let a = ok(&["gradcheck", "--cases", "4", "--seed", "2"], t.path());
    let b = ok(&["gradcheck", "--cases", "4", "--seed", "2"], t.path());
    assert!(a.contains("max relative error: "), "{a}");
    assert_eq!(a, b);
}

#[test]
fn train_writes_outputs_and_evaluate_picks_metric() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    trained(p, 160);
    for f in ["checkpoint.bin", "loss_history.csv", "pretrain_history.csv", "embeddings_final.csv"] {
        assert!(p.join("r").join(f).is_file(), "{f}");
    }

    let small = ["--set", "folds=2", "--set", "repetitions=2"];
    let mut args = vec!["evaluate", "--data", "d", "--checkpoint", "r/checkpoint.bin", "--task", "mortality"];
    args.extend(small);
    let mut with_out = args.clone();
    with_out.extend(["--out", "cv.csv"]);
    let shown = ok(&with_out, p);
    assert!(shown.starts_with("mortality f1_macro:"), "{shown}");
    let cv = fs::read_to_string(p.join("cv.csv")).unwrap();
    assert!(cv.lines().nth(1).unwrap().starts_with("mortality,f1_macro,"), "{cv}");

    let mut cdi = vec!["evaluate", "--data", "d", "--checkpoint", "r/checkpoint.bin", "--task", "cdi"];
    cdi.extend(small);
    assert!(ok(&cdi, p).starts_with("cdi auc:"));
}

#[test]
fn infeasible_task_exits_five() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    trained(p, 40);
    let args = ["evaluate", "--data", "d", "--checkpoint", "r/checkpoint.bin", "--task", "mortality"];
    assert_eq!(code(&args, p), 5);
}

#[test]
fn training_is_deterministic_across_runs_and_threads() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["generate", "--preset", "tiny", "--out", "d"], p);
    let train = |out: &str, threads: &str| {
        ok(&["--threads", threads, "train", "--data", "d", "--out", out, "--max-epochs", "3", "--seed", "8"], p);
        dir_bytes(&p.join(out))
    };
    let a = train("a", "1");
    assert_eq!(a, train("b", "1"));
    assert_eq!(a, train("c", "4"));
}

#[test]
fn training_history_and_static_modes() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    ok(&["generate", "--preset", "tiny", "--out", "d"], p);
    ok(&["train", "--data", "d", "--out", "one", "--max-epochs", "20", "--static-mode", "onehot"], p);
    let hist = fs::read_to_string(p.join("one/loss_history.csv")).unwrap();
    let totals: Vec<f64> = hist
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(!totals.is_empty() && totals.len() <= 20);
    assert!(totals.last().unwrap() < &totals[0], "{totals:?}");

    ok(&["train", "--data", "d", "--out", "bg", "--max-epochs", "1", "--static-mode", "bourgain"], p);
    let one = Checkpoint::load(p.join("one/checkpoint.bin")).unwrap();
    let bg = Checkpoint::load(p.join("bg/checkpoint.bin")).unwrap();
    assert_ne!(one.dims.d_static, bg.dims.d_static);
}

#[test]
fn dispersion_and_embed_outputs() {
    let t = tempfile::tempdir().unwrap();
    let p = t.path();
    trained(p, 40);
    let ck = ["--data", "d", "--checkpoint", "r/checkpoint.bin"];
    let mut args = vec!["dispersion", "--day", "1", "--out", "disp.csv"];
    args.extend(ck);
    ok(&args, p);
    let rows: Vec<(String, String, f64)> = fs::read_to_string(p.join("disp.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<_> = l.split(',').collect();
            (c[0].to_string(), c[1].to_string(), c[2].parse().unwrap())
        })
        .collect();
    assert!(!rows.is_empty());
    for (i, j, v) in &rows {
        assert!(*v >= 0.0);
        let back = rows.iter().find(|(a, b, _)| a == j && b == i).unwrap();
        assert_eq!(back.2, *v);
    }

    fs::write(p.join("groups.csv"), "entity_id,group\nd0,a\nd999,b\n").unwrap();
    let mut bad = vec!["dispersion", "--day", "1", "--out", "x.csv", "--groups", "groups.csv"];
    bad.extend(ck);
    assert_eq!(code(&bad, p), 2);

    let mut embed = vec!["embed", "--out", "traj.csv"];
    embed.extend(ck);
    ok(&embed, p);
    let mut snap = vec!["embed", "--out", "snap.csv", "--at", "86400"];
    snap.extend(ck);
    ok(&snap, p);
    assert!(fs::read_to_string(p.join("traj.csv")).unwrap().lines().count() > 1);
    assert!(fs::read_to_string(p.join("snap.csv")).unwrap().lines().count() > 1);
}

#[test]
fn keys_lists_every_config_key() {
    let t = tempfile::tempdir().unwrap();
    let out = ok(&["keys"], t.path());
    for k in ["seed", "learning_rate", "static_mode", "lambda_dom_room", "cohort_epsilon", "folds"] {
        assert!(out.lines().any(|l| l.starts_with(k)), "{k}");
    }
}
