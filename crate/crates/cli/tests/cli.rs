use std::path::Path;
use std::process::{Command, Output};

use mpa_core::harness::evaluate::ground_truth_predictions;
use mpa_core::harness::write_predictions;
use mpa_core::scene::cache_read;

fn mpa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpa")).args(args).env_clear().output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mpa(args);
    assert!(out.status.success(), "mpa {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.mpas"), dir.path().join("b.mpas"));
    ok(&["generate", "--seed", "1", "--count", "8", "--out", s(&a)]);
    ok(&["generate", "--seed", "1", "--count", "8", "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ok(&["generate", "--seed", "2", "--count", "8", "--out", s(&b)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn ground_truth_predictions_score_perfect_map() {
    let dir = tempfile::tempdir().unwrap();
    let (data, preds, report) = (dir.path().join("s.mpas"), dir.path().join("gt.mpap"), dir.path().join("r.txt"));
    ok(&["generate", "--seed", "3", "--count", "24", "--out", s(&data)]);
    write_predictions(&preds, &ground_truth_predictions(&cache_read(&data).unwrap())).unwrap();
    let table = ok(&["eval", "--predictions", s(&preds), "--data", s(&data), "--report", s(&report)]);
    assert!(table.contains("Total"));
    let kv = std::fs::read_to_string(&report).unwrap();
    for key in ["row.total.map", "row.total.soft_map"] {
        let line = kv.lines().find(|l| l.starts_with(&format!("{key} ="))).unwrap();
        assert_eq!(line.split('=').nth(1).unwrap().trim().parse::<f64>().unwrap(), 1.0, "{line}");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    std::fs::write(&cfg, "steps = 3\nmodel.widht = 4\n").unwrap();
    let out = mpa(&["train", "--config", s(&cfg)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("widht"));
}

#[test]
fn train_then_eval_predict_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    ok(&["generate", "--seed", "4", "--count", "12", "--out", s(&p("s.mpas"))]);
    let config = format!(
        "data = {}\nout = {}\nsteps = 6\nbatch_size = 4\neval_every = 3\nval_fraction = 0.3\n\
         model.head = multi\nmodel.d_model = 8\nmodel.hidden = 8\nmodel.decoders = 2\n",
        s(&p("s.mpas")),
        s(&p("run"))
    );
    std::fs::write(p("cfg.txt"), config).unwrap();
    let trained = ok(&["train", "--config", s(&p("cfg.txt"))]);
    assert!(trained.contains("final_train_nll"));
    for f in ["checkpoint.mpac", "train_log.txt", "config.txt"] {
        assert!(p("run").join(f).exists(), "{f}");
    }
    let ck = p("run").join("checkpoint.mpac");
    let table = ok(&["eval", "--checkpoint", s(&ck), "--data", s(&p("s.mpas")), "--no-nms"]);
    assert!(table.contains("Total"));
    ok(&["predict", "--checkpoint", s(&ck), "--checkpoint", s(&ck), "--data", s(&p("s.mpas")), "--out", s(&p("p.mpap"))]);
    ok(&["plot", "--predictions", s(&p("p.mpap")), "--data", s(&p("s.mpas")), "--out", s(&p("fig"))]);
    assert_eq!(std::fs::read_dir(p("fig")).unwrap().count(), 12);
}
