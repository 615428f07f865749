use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[data]
n_train = 60
n_test = 30

[train]
epochs = 4
"#;

fn iagcn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iagcn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = iagcn(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Body lines of a CSV, skipping the echoed config.
fn body(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    ok(&[
        "gendata",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.join("data")),
    ]);
    cfg
}

#[test]
fn pipeline_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = setup(dir);
    let data = dir.join("data");
    assert!(data.join("train.jsonl").exists() && data.join("test.jsonl").exists());

    let run = dir.join("run");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&run),
    ]);
    let loss = body(&run.join("loss.csv"));
    assert_eq!(loss[0], "epoch,lr,loss");
    assert_eq!(loss.len(), 5);

    let ev = dir.join("eval");
    let ck = run.join("checkpoint.json");
    ok(&[
        "eval",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--out",
        s(&ev),
        "--dump-z",
    ]);
    let metrics = body(&ev.join("metrics.csv"));
    assert_eq!(metrics[0], "mAP,CP,CR,CF1,OP,OR,OF1");
    assert_eq!(metrics.len(), 2);
    let vals: Vec<f64> = metrics[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(vals.len(), 7);
    assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(body(&ev.join("per_label_ap.csv")).len(), 9);
    assert_eq!(body(&ev.join("z.csv")).len(), 1 + 30 * 6);
    let header = fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(header.starts_with("# seed = 3\n"));

    let lcm = dir.join("lcm");
    ok(&[
        "inspect-lcm",
        "--checkpoint",
        s(&ck),
        "--data",
        s(&data),
        "--samples",
        "0,2",
        "--out",
        s(&lcm),
    ]);
    for name in [
        "A_S.csv",
        "A_S_condprob.csv",
        "A_S_hat.csv",
        "A_I_0.csv",
        "A_F_2.csv",
        "A_F_hat_0.csv",
    ] {
        assert_eq!(body(&lcm.join(name)).len(), 9, "{name}");
    }
}

#[test]
fn ablate_emits_four_labeled_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = setup(dir);
    let out = dir.join("ablate");
    ok(&[
        "ablate",
        "--config",
        s(&cfg),
        "--data",
        s(&dir.join("data")),
        "--out",
        s(&out),
    ]);
    let rows = body(&out.join("ablation.csv"));
    assert_eq!(rows[0], "method,mAP,CP,CR,CF1,OP,OR,OF1");
    let labels: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "Base",
            "Base+ID_LCM",
            "Base+ID_LCM+Var_Inf",
            "Base+ID_LCM+Var_Inf+Com_Sco"
        ]
    );
}

#[test]
fn same_seed_gives_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = setup(dir);
    let data = dir.join("data");
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let r = dir.join(run);
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--seed",
            "9",
            "--data",
            s(&data),
            "--out",
            s(&r),
        ]);
        ok(&[
            "eval",
            "--checkpoint",
            s(&r.join("checkpoint.json")),
            "--data",
            s(&data),
            "--out",
            s(&r),
        ]);
        files.push(fs::read(r.join("metrics.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn ablation_flag_selects_level() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = setup(dir);
    let r = dir.join("base");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--ablation",
        "base",
        "--data",
        s(&dir.join("data")),
        "--out",
        s(&r),
    ]);
    let ck = fs::read_to_string(r.join("checkpoint.json")).unwrap();
    assert!(ck.contains(r#""ablation":{"id_lcm":false,"var_inf":false,"com_sco":false}"#));

    let bad = iagcn(&["train", "--ablation", "full", "--data", "x", "--out", "y"]);
    assert!(!bad.status.success());
}

#[test]
fn missing_file_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = iagcn(&[
        "eval",
        "--checkpoint",
        s(&missing),
        "--data",
        s(tmp.path()),
        "--out",
        s(tmp.path()),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn divergent_training_names_epoch_and_step() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    setup(dir);
    let cfg = dir.join("hot.toml");
    fs::write(&cfg, format!("{SMALL}lr = 1e200\n")).unwrap();
    let out = iagcn(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&dir.join("data")),
        "--out",
        s(&dir.join("r")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("training failed at epoch 0, step 1"), "{err}");
}
