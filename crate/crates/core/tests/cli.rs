use std::path::Path;
use std::process::{Command, Output};

fn synfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synfuse"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn train_translate_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_ok(&synfuse(d, &["--seed", "5", "gen-toy", "--pairs", "40", "--out", "data/train"]));
    std::fs::write(d.join("run.cfg"), "steps=12\nwarmup=10\nnum_merges=40\nmodel.layers=1\n").unwrap();
    let o = synfuse(d, &["--config", "run.cfg", "--seed", "9", "train", "--corpus", "data/train", "--checkpoint", "m.ckpt"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("seed=9"));
    let curve = std::fs::read_to_string(d.join("m.curve.csv")).unwrap();
    assert!(curve.starts_with("# seed=9\nstep,train_loss,eval_bleu\n"));
    assert_eq!(curve.lines().count(), 2 + 12);

    let a = synfuse(d, &["translate", "--checkpoint", "m.ckpt", "--in", "data/train.src.tsv"]);
    assert_ok(&a);
    assert_eq!(stdout(&a).lines().count(), 40);
    let b = synfuse(d, &["translate", "--checkpoint", "m.ckpt", "--in", "data/train.src.tsv"]);
    assert_eq!(stdout(&a), stdout(&b));

    let e = synfuse(d, &["evaluate", "--checkpoint", "m.ckpt", "--corpus", "data/train", "--out", "report.tsv"]);
    assert_ok(&e);
    assert!(stdout(&e).starts_with("bleu="));
    let report = std::fs::read_to_string(d.join("report.tsv")).unwrap();
    assert!(report.starts_with("# seed=9 config="));
    assert_eq!(report.lines().count(), 3 + 40);

    let x = synfuse(d, &["attn-export", "--checkpoint", "m.ckpt", "--in", "data/train.src.tsv", "--out", "maps/s"]);
    assert_ok(&x);
    let svg = std::fs::read_to_string(d.join("maps/s-cross.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
}

#[test]
fn bpe_learn_then_annotate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.txt"), "low low lower\nlowest newer\n").unwrap();
    assert_ok(&synfuse(d, &["bpe-learn", "--corpus", "c.txt", "--merges", "2", "--out", "m.txt"]));
    assert_eq!(std::fs::read_to_string(d.join("m.txt")).unwrap(), "l o\nlo w\n");
    std::fs::write(d.join("in.tsv"), "lower\tADJ\nNewer\n").unwrap();
    let o = synfuse(d, &["annotate", "--in", "in.tsv", "--merges", "m.txt"]);
    assert_ok(&o);
    assert_eq!(stdout(&o), "low\tADJ\t0\tB\ne\tADJ\t0\tM\nr</w>\tADJ\t0\tE\nN\tPROPN\t1\tB\ne\tPROPN\t1\tM\nw\tPROPN\t1\tM\ne\tPROPN\t1\tM\nr</w>\tPROPN\t1\tE\n\n");
}

#[test]
fn classifier_finetune_and_classify() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cls.tsv"), "pos\tthe big dog\nneg\tthe cat sleeps\tslowly\npos\ta big cat\nneg\ta dog sleeps\n").unwrap();
    std::fs::write(d.join("run.cfg"), "bert.layers=1\nbert.d_model=8\nbert.pos_dim=8\nbert.heads=2\nbert.ffn_width=16\n").unwrap();
    let o = synfuse(d, &["--config", "run.cfg", "finetune-cls", "--corpus", "cls.tsv", "--epochs", "1", "--checkpoint", "c.ckpt"]);
    assert_ok(&o);
    let c = synfuse(d, &["classify", "--checkpoint", "c.ckpt", "--in", "cls.tsv"]);
    assert_ok(&c);
    let out = stdout(&c);
    assert!(out.starts_with("# seed=1\nlabel\tneg\tpos\n"));
    assert_eq!(out.lines().count(), 2 + 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(synfuse(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(synfuse(d, &["--help"]).status.code(), Some(0));
    std::fs::write(d.join("bad.cfg"), "nope=1\n").unwrap();
    assert_eq!(synfuse(d, &["--config", "bad.cfg", "gen-toy", "--out", "x"]).status.code(), Some(1));
    assert_eq!(synfuse(d, &["train"]).status.code(), Some(1));
    assert_eq!(synfuse(d, &["translate", "--checkpoint", "missing", "--in", "x"]).status.code(), Some(2));
    std::fs::write(d.join("bad.src.tsv"), "a\tDET\n\nb\tNOUN\n").unwrap();
    std::fs::write(d.join("bad.tgt.txt"), "a\n").unwrap();
    assert_eq!(synfuse(d, &["train", "--corpus", "bad"]).status.code(), Some(2));
    assert_ok(&synfuse(d, &["gen-toy", "--pairs", "20", "--out", "t"]));
    std::fs::write(d.join("nan.cfg"), "steps=3\nwarmup=1\nlr_factor=1e200\n").unwrap();
    let o = synfuse(d, &["--config", "nan.cfg", "train", "--corpus", "t", "--checkpoint", "n.ckpt"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
