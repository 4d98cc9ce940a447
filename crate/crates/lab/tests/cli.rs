use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sgdpo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgdpo"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "d_model=16",
    "--set",
    "d_ff=32",
    "--set",
    "n_layers=1",
    "--set",
    "context=32",
    "--sft-steps",
    "10",
    "--po-steps",
    "10",
];

fn train(dir: &Path) -> Output {
    let mut args = vec![
        "train", "--method", "sgdpo", "--r1", "0.9", "--r2", "0.6", "--seed", "3",
    ];
    args.extend_from_slice(SMALL);
    sgdpo(dir, &args)
}

#[test]
fn train_writes_history_and_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        let out = train(d);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let history = fs::read_to_string(a.path().join("history.csv")).unwrap();
    assert!(history.lines().count() >= 2);
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 5, "{names:?}");
    for n in names {
        assert_eq!(
            fs::read(a.path().join(&n)).unwrap(),
            fs::read(b.path().join(&n)).unwrap(),
            "{n:?} differs"
        );
    }
}

#[test]
fn train_from_checkpoint_and_config_file() {
    let d = tempfile::tempdir().unwrap();
    assert!(train(d.path()).status.success());
    let cfg = d.path().join("run.txt");
    fs::write(
        &cfg,
        "method = dpo\npo_steps = 4 # short\nd_model = 16\nd_ff = 32\nn_layers = 1\ncontext = 32\n",
    )
    .unwrap();
    let out_dir = d.path().join("second");
    let out = sgdpo(
        &out_dir,
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--po-steps",
            "6",
            "--seed",
            "3",
            "--init",
            d.path().join("policy.ckpt").to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // flags override the file
    let h = fs::read_to_string(out_dir.join("history.csv")).unwrap();
    assert_eq!(h.lines().count(), 7);
    assert!(fs::read_to_string(out_dir.join("config.txt"))
        .unwrap()
        .contains("method = dpo"));
    assert!(!out_dir.join("sft.ckpt").exists());
}

#[test]
fn gradflow_unit_row() {
    let d = tempfile::tempdir().unwrap();
    let out = sgdpo(d.path(), &["gradflow", "--method", "dpo", "--beta", "0.1"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(d.path().join("field_dpo.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "1,1,0.05,-0.05"));
    assert!(fs::read_to_string(d.path().join("field_dpo.svg"))
        .unwrap()
        .starts_with("<svg"));

    let out = sgdpo(
        d.path(),
        &[
            "gradflow",
            "--method",
            "pilot",
            "--y",
            "0.5,1.2",
            "--resolution",
            "10",
        ],
    );
    assert!(out.status.success());
    assert_eq!(
        fs::read_to_string(d.path().join("field_pilot.csv"))
            .unwrap()
            .lines()
            .count(),
        101
    );
}

#[test]
fn landscapes() {
    let d = tempfile::tempdir().unwrap();
    for kind in ["fz", "dx1", "dx2"] {
        let out = sgdpo(
            d.path(),
            &["landscape", "--kind", kind, "--resolution", "12"],
        );
        assert!(out.status.success());
        let csv = fs::read_to_string(d.path().join(format!("landscape_{kind}.csv"))).unwrap();
        assert_eq!(csv.lines().next(), Some("a,b,value"));
        assert_eq!(csv.lines().count(), 145);
    }
}

#[test]
fn verify_passes_and_names_checks() {
    let d = tempfile::tempdir().unwrap();
    let out = sgdpo(d.path(), &["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert_eq!(
        stdout.lines().filter(|l| l.starts_with("[PASS]")).count(),
        8
    );
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        sgdpo(d.path(), &["train", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(sgdpo(d.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        sgdpo(d.path(), &["gradflow", "--method", "pilot", "--y", "1"])
            .status
            .code(),
        Some(2)
    );

    let bad = d.path().join("bad.jsonl");
    fs::write(&bad, "{\"prompt\":\"a\",\"chosen\":\"b\",\"rejected\":\"c\"}\n{\"prompt\":\"a\",\"rejected\":\"c\"}\n").unwrap();
    let out = sgdpo(d.path(), &["train", "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("chosen"), "{err}");

    let out = sgdpo(d.path(), &["train", "--r1", "1.5", "--po-steps", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn out_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sgdpo"))
        .env("SGDPO_OUT_DIR", d.path())
        .args(["landscape", "--resolution", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.path().join("landscape_fz.csv").exists());
}
