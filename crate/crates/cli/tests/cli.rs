use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fpsr_core::data::{load_grayscale, save_grayscale, BitDepth};
use fpsr_core::Tensor;

fn fpsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fpsr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = fpsr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    fpsr(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_CONFIG: &str = r#"
scale = 4
hr_size = 32
batch_size = 2
iterations = 2
eval_every = 2
checkpoint_every = 0
seed = 3
manifest = "data/manifest.tsv"

[generator]
num_rrdb = 1
base_channels = 4
growth_channels = 4

[discriminator]
num_conv = 4
base_channels = 4
fc_sizes = [8, 1]
"#;

#[test]
fn prepare_phantoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ds");
    ok(&["prepare", "--source", "phantom:20", "--out", s(&out), "--scale", "2", "--crop", "64", "--seed", "7"]);
    let manifest = fs::read_to_string(out.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 21);
    assert_eq!(fs::read_dir(out.join("hr")).unwrap().count(), 20);
    let lr = load_grayscale(out.join("lr/phantom_0000.png")).unwrap();
    assert_eq!(lr.shape(), &[1, 1, 32, 32]);
    let effective = fs::read_to_string(out.join("prepare.toml")).unwrap();
    assert!(effective.contains("method = \"bicubic\""));
    assert!(effective.contains("splits = [0.8, 0.1, 0.1]"));

    // same inputs, same bytes
    let again = dir.path().join("ds2");
    ok(&["prepare", "--source", "phantom:20", "--out", s(&again), "--scale", "2", "--crop", "64", "--seed", "7"]);
    assert_eq!(manifest, fs::read_to_string(again.join("manifest.tsv")).unwrap());
    assert_eq!(fs::read(out.join("lr/phantom_0011.png")).unwrap(), fs::read(again.join("lr/phantom_0011.png")).unwrap());
}

#[test]
fn train_sr_eval_diffmap_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["prepare", "--source", "phantom:10", "--out", s(&root.join("data")), "--scale", "4", "--crop", "32"]);
    let config = root.join("train.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    let run = root.join("run");
    ok(&["train", "--config", s(&config), "--out", s(&run), "--log-every", "1"]);
    for rel in ["final.fpsr", "losses.csv", "effective_config.toml", "eval/step_000002/metrics.csv"] {
        assert!(run.join(rel).exists(), "{rel}");
    }
    let effective = fs::read_to_string(run.join("effective_config.toml")).unwrap();
    assert!(effective.contains("lr_g = 0.0001"));
    assert!(effective.contains("use_wavelet_loss = true"));

    // flags override the file and resuming extends the run
    ok(&["train", "--config", s(&config), "--out", s(&run), "--resume", s(&run.join("final.fpsr")), "--iterations", "3"]);
    assert_eq!(fs::read_to_string(run.join("losses.csv")).unwrap().lines().count(), 4);
    assert!(fs::read_to_string(run.join("effective_config.toml")).unwrap().contains("iterations = 3"));

    let model = run.join("final.fpsr");
    let input = root.join("in.png");
    save_grayscale(&input, &Tensor::full(&[1, 1, 16, 16], 0.5f32), BitDepth::Sixteen).unwrap();
    let output = root.join("sr.png");
    ok(&["sr", "--model", s(&model), "--input", s(&input), "--output", s(&output)]);
    assert_eq!(load_grayscale(&output).unwrap().shape(), &[1, 1, 64, 64]);
    assert!(root.join("sr.png.run.toml").exists());

    let csv = root.join("metrics.csv");
    let manifest = root.join("data/manifest.tsv");
    ok(&["eval", "--model", s(&model), "--manifest", s(&manifest), "--csv", s(&csv), "--baselines", "--split", "train"]);
    let text = fs::read_to_string(&csv).unwrap();
    for method in ["model", "bicubic", "bilinear"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{method},mean,"))), "{method}");
    }
    let without = root.join("plain.csv");
    ok(&["eval", "--model", s(&model), "--manifest", s(&manifest), "--csv", s(&without)]);
    assert!(!fs::read_to_string(&without).unwrap().contains("bicubic"));

    let heat = root.join("heat.png");
    ok(&["diffmap", "--a", s(&output), "--b", s(&output), "--out", s(&heat)]);
    assert!(heat.exists());
    assert!(root.join("heat.png.run.toml").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["prepare", "--source", "phantom:2", "--out", s(root), "--bogus"]), 1);
    assert_eq!(code(&["prepare", "--source", "phantom:2", "--out", s(root), "--scale", "3"]), 1);
    assert_eq!(code(&["prepare", "--source", s(&root.join("nowhere")), "--out", s(&root.join("o"))]), 2);
    assert_eq!(code(&["diffmap", "--a", "missing.png", "--b", "missing.png", "--out", s(&root.join("h.png"))]), 2);
    let bad = root.join("bad.toml");
    fs::write(&bad, "scale = 4\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&["train", "--config", s(&bad), "--out", s(&root.join("r"))]), 1);

    ok(&["prepare", "--source", "phantom:4", "--out", s(&root.join("data")), "--scale", "4", "--crop", "32"]);
    let config = root.join("train.toml");
    fs::write(&config, TINY_CONFIG.replace("iterations = 2", "iterations = 1")).unwrap();
    ok(&["train", "--config", s(&config), "--out", s(&root.join("run"))]);
    let model = root.join("run/final.fpsr");
    let pgm = root.join("bad.pgm");
    fs::write(&pgm, b"P5\n2 2\n0\n\0\0\0\0").unwrap();
    assert_eq!(code(&["sr", "--model", s(&model), "--input", s(&pgm), "--output", s(&root.join("o.png"))]), 2);

    // an absurd learning rate overflows the forward pass
    let blowup = root.join("blowup.toml");
    fs::write(&blowup, TINY_CONFIG.replace("iterations = 2", "iterations = 5\nlr_g = 1e30")).unwrap();
    assert_eq!(code(&["train", "--config", s(&blowup), "--out", s(&root.join("boom"))]), 3);

    let mut ckpt = fs::read(&model).unwrap();
    ckpt.truncate(ckpt.len() / 2);
    fs::write(&model, ckpt).unwrap();
    assert_eq!(code(&["sr", "--model", s(&model), "--input", s(&pgm), "--output", s(&root.join("o.png"))]), 2);
}

#[test]
fn help_lists_flags_with_defaults() {
    let top = ok(&["--help"]);
    for sub in ["prepare", "train", "sr", "eval", "diffmap"] {
        assert!(top.contains(sub));
    }
    let prepare = ok(&["prepare", "--help"]);
    for needle in ["--scale", "[default: 4]", "--crop", "[default: 200]", "--seed", "[default: 0]", "[default: bicubic]", "[default: 0.8 0.1 0.1]"] {
        assert!(prepare.contains(needle), "prepare help lacks {needle}");
    }
    let train = ok(&["train", "--help"]);
    for needle in ["--resume", "--iterations", "[default: from config]", "--log-every", "[default: 10]"] {
        assert!(train.contains(needle), "train help lacks {needle}");
    }
    let eval = ok(&["eval", "--help"]);
    for needle in ["--baselines", "[default: test]", "[default: 4]"] {
        assert!(eval.contains(needle), "eval help lacks {needle}");
    }
    assert!(ok(&["sr", "--help"]).contains("[default: 16]"));
}
