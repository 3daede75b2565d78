use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_l2t-hyena"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMOKE: &str = "\
# small synthetic run
synthetic_tokens: 50000
synthetic_vocab: 200
dim: 64
n_blocks: 2
filter_hidden: 32
epochs: 10
batch_size: 8
seq_len: 32
warmup_epochs: 0.25
student_lr: 0.003
";

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn smoke_train_eval_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMOKE);
    let mut runs = Vec::new();
    for mode in ["baseline", "l2t"] {
        let out_dir = dir.path().join(mode);
        let o = run(&[
            "train", "--config", &cfg, "--mode", mode, "--epochs", "2", "--seed", "3", "--deterministic",
            "--out-dir", out_dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert_eq!(stdout.lines().filter(|l| l.starts_with("epoch")).count(), 2, "{stdout}");
        let csv = std::fs::read_to_string(out_dir.join("metrics_epoch.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("epoch,train_loss,val_loss,val_ppl,"));
        let echo = std::fs::read_to_string(out_dir.join("config.txt")).unwrap();
        assert!(echo.contains("epochs: 2\n") && echo.contains(&format!("mode: {mode}\n")));
        runs.push(out_dir);
    }

    // evaluation in two fresh processes agrees
    let ckpt = runs[1].join("best.l2th");
    let evals: Vec<String> = (0..2)
        .map(|_| {
            let o = run(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--config", &cfg]);
            assert!(o.status.success(), "{}", stderr(&o));
            String::from_utf8_lossy(&o.stdout).into_owned()
        })
        .collect();
    assert_eq!(evals[0], evals[1]);
    let eval: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs[1].join("eval.json")).unwrap()).unwrap();
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs[1].join("metrics.json")).unwrap()).unwrap();
    let (a, b) = (eval["val_ppl"].as_f64().unwrap(), metrics["best_val_ppl"].as_f64().unwrap());
    assert!(((a - b) / b).abs() <= 1e-6, "{a} vs {b}");

    let o = run(&["compare", runs[0].to_str().unwrap(), runs[1].to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Validation perplexity"));
    assert!(runs[1].join("compare.json").exists());

    let o = run(&["compare", runs[0].to_str().unwrap(), runs[0].to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let same: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("compare.json")).unwrap()).unwrap();
    assert_eq!(same["ppl_relative_reduction"].as_f64(), Some(0.0));
    assert_eq!(same["train_loss_reduction"].as_f64(), Some(0.0));

    // a truncated checkpoint is a checkpoint error
    let bytes = std::fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.l2th");
    std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&["eval", "--checkpoint", cut.to_str().unwrap(), "--config", &cfg]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "train_path: /no/such/ptb.train.txt\nvalid_path: /no/such/ptb.valid.txt\n");
    let o = run(&["train", "--config", &cfg, "--out-dir", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/no/such/ptb.train.txt"), "{}", stderr(&o));
}

#[test]
fn configuration_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    for (text, key) in [
        ("weight_decay: -1\n", "weight_decay"),
        ("no_such_key: 3\n", "no_such_key"),
        ("epochs: many\n", "epochs"),
    ] {
        let cfg = write_config(dir.path(), text);
        let o = run(&["train", "--config", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        assert!(stderr(&o).contains(key), "{}", stderr(&o));
    }
    let o = run(&["train", "--set", "dim"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_without_metrics_is_a_report_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compare", dir.path().to_str().unwrap(), dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("metrics.json"));
}

#[test]
fn shipped_configs_are_valid() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["ptb.cfg", "smoke.cfg"] {
        let cfg = l2t_hyena::config::RunConfig::resolve(Some(&root.join(name)), &[]);
        assert!(cfg.is_ok(), "{name}: {:?}", cfg.err());
    }
}
