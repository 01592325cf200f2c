use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mabert_cli::run;

const MODEL: &str = r#"
[model]
variant = "ma-bert"
d_model = 8
d_ff = 16
n_layers = 1
n_heads = 2
t_max = 24
"#;

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn mabert(args: &[&str]) {
    let mut full = vec!["mabert"];
    full.extend_from_slice(args);
    if let Err(e) = run(full) {
        panic!("mabert {args:?} failed: {e:#}");
    }
}

fn p(path: &Path) -> String {
    path.display().to_string()
}

/// synth -> preprocess -> pretrain -> finetune -> evaluate into `out`.
fn pipeline(root: &Path, out: &Path) {
    let data = out.join("data");
    let synth = write_config(
        root,
        "synth.toml",
        "seed = 5\n[synth]\nairports = [\"A\"]\ndays = [1]\n",
    );
    mabert(&["synth", "--config", &p(&synth), "--out", &p(&data), "--quiet"]);
    let pre = write_config(
        root,
        "pre.toml",
        &format!(
            "out = {:?}\n[preprocess]\ninput = {:?}\nairport = \"A\"\nt_max = 24\n",
            p(&data),
            p(&data.join("A.csv"))
        ),
    );
    mabert(&["preprocess", "--config", &p(&pre)]);
    let scenes = data.join("scenes.bin");

    let pt = write_config(
        root,
        "pretrain.toml",
        &format!(
            "seed = 3\nout = {:?}\n{MODEL}\n[train]\nscenes = {:?}\nepochs = 2\n",
            p(&out.join("pretrain")),
            p(&scenes)
        ),
    );
    mabert(&["pretrain", "--config", &p(&pt), "--quiet"]);
    let ft = write_config(
        root,
        "finetune.toml",
        &format!(
            "seed = 3\nout = {:?}\n{MODEL}\n[train]\nscenes = {:?}\ncheckpoint = {:?}\nepochs = 2\nairport = \"A\"\n",
            p(&out.join("finetune")),
            p(&scenes),
            p(&out.join("pretrain/model.ckpt"))
        ),
    );
    mabert(&["finetune", "--config", &p(&ft), "--quiet"]);
    let ev = write_config(
        root,
        "evaluate.toml",
        &format!(
            "out = {:?}\n[evaluate]\nscenes = {:?}\ncheckpoints = [{:?}, {:?}]\nmethods = [\"pretrained\", \"finetuned\"]\n",
            p(&out.join("evaluate")),
            p(&scenes),
            p(&out.join("pretrain/model.ckpt")),
            p(&out.join("finetune/model.ckpt"))
        ),
    );
    mabert(&["evaluate", "--config", &p(&ev)]);
}

const ARTIFACTS: [&str; 8] = [
    "data/A.csv",
    "data/scenes.bin",
    "pretrain/model.ckpt",
    "pretrain/loss_curve.csv",
    "finetune/model.ckpt",
    "finetune/report.csv",
    "finetune/summary.json",
    "evaluate/report.csv",
];

#[test]
fn pipeline_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(tmp.path(), &a);
    pipeline(tmp.path(), &b);
    for name in ARTIFACTS {
        let x = fs::read(a.join(name)).unwrap();
        let y = fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }

    let report = fs::read_to_string(a.join("evaluate/report.csv")).unwrap();
    assert!(report.starts_with("airport,application,metric,pretrained,finetuned,best\n"));
    assert_eq!(report.lines().count(), 3, "{report}");

    let ckpt = a.join("finetune/model.ckpt");
    let text = mabert_cli::commands::inspect(&ckpt).unwrap();
    assert!(text.contains("\"command\":\"finetune\""), "{text}");
    let parent = mabert_cli::checkpoint::sha256_hex(&fs::read(a.join("pretrain/model.ckpt")).unwrap());
    assert!(text.contains(&parent), "parent hash missing from provenance");

    let log = fs::read_to_string(a.join("finetune/run.log")).unwrap();
    assert!(log.lines().last().unwrap().starts_with("event=done command=finetune"));
}

#[test]
fn loading_with_another_model_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    pipeline(tmp.path(), &out);
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        &format!(
            "seed = 3\nout = {:?}\n[model]\nd_model = 16\n[train]\nscenes = {:?}\ncheckpoint = {:?}\nepochs = 1\n",
            p(&tmp.path().join("bad")),
            p(&out.join("data/scenes.bin")),
            p(&out.join("pretrain/model.ckpt"))
        ),
    );
    let err = run(["mabert", "finetune", "--config", &p(&cfg), "--quiet"]).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("does not match"), "{msg}");
    assert!(!tmp.path().join("bad/model.ckpt").exists());
}

#[test]
fn config_errors_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = write_config(tmp.path(), "typo.toml", "seed = 1\n[train]\nepochz = 3\n");
    let msg = format!("{:#}", run(["mabert", "pretrain", "--config", &p(&typo)]).unwrap_err());
    assert!(msg.contains("epochz"), "{msg}");

    let no_seed = write_config(tmp.path(), "noseed.toml", "out = \"x\"\n[synth]\nairports = [\"A\"]\ndays = [1]\n");
    let msg = format!("{:#}", run(["mabert", "synth", "--config", &p(&no_seed)]).unwrap_err());
    assert!(msg.contains("seed"), "{msg}");

    let missing = write_config(
        tmp.path(),
        "missing.toml",
        "seed = 1\nout = \"x\"\n[train]\nscenes = \"/nonexistent/scenes.bin\"\n",
    );
    let msg = format!("{:#}", run(["mabert", "pretrain", "--config", &p(&missing)]).unwrap_err());
    assert!(msg.contains("/nonexistent/scenes.bin"), "{msg}");
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_mabert");
    let status = Command::new(exe).arg("--no-such-flag").output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[bogus]\n");
    let out = Command::new(exe)
        .args(["synth", "--config", &p(&cfg)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let help = Command::new(exe).arg("--help").output().unwrap();
    assert!(help.status.success());
}
