use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use vigc::checkpoint::load_checkpoint;
use vigc::datasets::{write_synthetic_idx, Dataset};
use vigc::gradcheck::{probe_loss, standard_suite, GradCase};
use vigc::tensor::Tensor;
use vigc::training::{train_step, TrainState};
use vigc::{grad_case, Scalar};
use vigc_cli::args::{DatasetArg, GenDataArgs, InferArgs, TrainArgs};
use vigc_cli::commands::{self, LOSSES_HEADER};
use vigc_cli::RunConfig;

const TINY: &str = r#"
[train]
batch_size = 2
iterations = 6
seed = 5
learning_rate = 1e-3

[train.model]
image_size = 16
transforms = 2
latent_dim = 4
code_dim = 8
width_divisor = 16

[train.dataset]
kind = "shapes2d"
train_clips = 24
test_clips = 4

[export]
sample_every = 3
sample_clips = 2
log_every = 0
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn train_args(config: &Path, out: &Path, resume: Option<PathBuf>) -> TrainArgs {
    TrainArgs {
        config: config.to_path_buf(),
        out: Some(out.to_path_buf()),
        resume,
    }
}

fn rows(out: &Path) -> Vec<String> {
    fs::read_to_string(out.join("losses.csv")).unwrap().lines().map(str::to_string).collect()
}

fn trained(dir: &Path) -> PathBuf {
    let cfg = write_config(dir, &TINY.replace("iterations = 6", "iterations = 1"));
    let out = dir.join("trained");
    commands::train(&train_args(&cfg, &out, None), &mut Vec::new()).unwrap();
    out.join("final.ckpt")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vigc"))
}

#[test]
fn gradcheck_reports_every_op_and_passes() {
    let suite = standard_suite();
    let mut out = Vec::new();
    let t = std::time::Instant::now();
    assert!(commands::gradcheck(&suite, &mut out).unwrap());
    assert!(t.elapsed().as_secs() < 60);
    let text = String::from_utf8(out).unwrap();
    for case in &suite {
        assert!(text.lines().any(|l| l.starts_with(case.name) && l.ends_with("ok")), "{}", case.name);
    }
}

fn square(x: f64) -> f64 {
    x * x
}

fn wrong_slope(x: f64) -> f64 {
    3.0 * x
}

fn corrupted<S: Scalar>(t: &mut vigc::autodiff::Tape<S>, v: &[vigc::Var]) -> vigc::Result<vigc::Var> {
    let y = t.map(v[0], square, wrong_slope);
    probe_loss(t, y, v[1])
}

fn pair(rng: &mut rand_chacha::ChaCha8Rng) -> Vec<(Tensor<f64>, bool)> {
    vec![(Tensor::standard_normal([6], rng), true), (Tensor::standard_normal([6], rng), false)]
}

#[test]
fn gradcheck_names_a_corrupted_op() {
    let cases: Vec<GradCase> = vec![standard_suite().remove(0), grad_case!("corrupted_square", pair, corrupted)];
    let mut out = Vec::new();
    assert!(!commands::gradcheck(&cases, &mut out).unwrap());
    let text = String::from_utf8(out).unwrap();
    assert!(text.contains("corrupted_square") && text.contains("FAIL"), "{text}");
    assert!(text.contains("1 of 2 ops failed: corrupted_square"), "{text}");
}

#[test]
fn train_writes_rows_checkpoint_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    commands::train(&train_args(&cfg, &out, None), &mut Vec::new()).unwrap();
    let r = rows(&out);
    assert_eq!(r[0], LOSSES_HEADER);
    assert_eq!(r.len(), 7);
    for (k, row) in r[1..].iter().enumerate() {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f[0], (k + 1).to_string());
        assert!(f[1].parse::<f64>().unwrap().is_finite() && f[2].parse::<f64>().unwrap().is_finite());
    }
    for f in ["final.ckpt", "samples_000003.png", "samples_000006.png", "samples_final.png", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let (_, state) = load_checkpoint(out.join("final.ckpt")).unwrap();
    assert_eq!((state.iteration, state.critic_updates, state.generator_updates), (6, 30, 6));
}

#[test]
fn loss_d_column_is_the_mean_of_n_critic_losses() {
    for n_critic in [5, 2] {
        let dir = tempfile::tempdir().unwrap();
        let text = TINY.replace("learning_rate = 1e-3", &format!("learning_rate = 1e-3\nn_critic = {n_critic}"));
        let cfg_path = write_config(dir.path(), &text);
        let out = dir.path().join("out");
        commands::train(&train_args(&cfg_path, &out, None), &mut Vec::new()).unwrap();

        let cfg = RunConfig::parse(&text).unwrap().train;
        let data = Dataset::new(&cfg.dataset, &cfg.model, None, cfg.seed).unwrap();
        let mut st = TrainState::<f32>::new(&cfg).unwrap();
        for row in &rows(&out)[1..] {
            let r = train_step(&mut st, &cfg, &data).unwrap();
            assert_eq!(r.critic_losses.len(), n_critic);
            let mean = r.critic_losses.iter().sum::<f64>() / n_critic as f64;
            assert_eq!(row, &format!("{},{mean},{}", r.iteration, r.generator_loss));
        }
        let (_, saved) = load_checkpoint(out.join("final.ckpt")).unwrap();
        assert_eq!(saved.critic_updates, 6 * n_critic as u64);
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("[export]", "[export]\ncheckpoint_every = 2"));
    let full = dir.path().join("full");
    commands::train(&train_args(&cfg, &full, None), &mut Vec::new()).unwrap();

    // A fresh directory holds only the resumed rows.
    let resumed = dir.path().join("resumed");
    commands::train(&train_args(&cfg, &resumed, Some(full.join("ckpt_000004.ckpt"))), &mut Vec::new()).unwrap();
    let (f, r) = (rows(&full), rows(&resumed));
    assert_eq!(r[0], LOSSES_HEADER);
    assert_eq!(&r[1..], &f[5..]);
    assert_eq!(fs::read(resumed.join("final.ckpt")).unwrap(), fs::read(full.join("final.ckpt")).unwrap());

    // Resuming in place truncates the log back to the checkpoint first.
    commands::train(&train_args(&cfg, &full, Some(full.join("ckpt_000002.ckpt"))), &mut Vec::new()).unwrap();
    assert_eq!(rows(&full), f);

    let other = write_config(dir.path(), &TINY.replace("seed = 5", "seed = 6"));
    let e = commands::train(&train_args(&other, &resumed, Some(full.join("ckpt_000002.ckpt"))), &mut Vec::new())
        .unwrap_err();
    assert!(e.to_string().contains("different configuration"), "{e}");
}

#[test]
fn bad_config_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nbatch_size = 0\n");
    let e = commands::train(&train_args(&cfg, &dir.path().join("o"), None), &mut Vec::new()).unwrap_err();
    assert!(format!("{e:#}").contains("batch_size"), "{e:#}");
    let out = bin()
        .args(["train", "--config", "/nonexistent/run.toml", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.toml"));
    let mnist = write_config(dir.path(), "[train.model]\nchannels = 1\n[train.dataset]\nkind = \"moving-mnist\"\n");
    let e = commands::train(&train_args(&mnist, &dir.path().join("o"), None), &mut Vec::new()).unwrap_err();
    assert!(e.to_string().contains("paths.mnist_idx"), "{e}");
}

fn frame_pngs(dir: &Path, shape: [usize; 3]) -> (PathBuf, PathBuf) {
    let a = Tensor::from_fn(shape, |i| ((i * 7) % 256) as f32 / 255.0);
    let b = Tensor::from_fn(shape, |i| ((i * 13 + 5) % 256) as f32 / 255.0);
    let (pa, pb) = (dir.join("start.png"), dir.join("end.png"));
    vigc::media::save_png(&pa, &a).unwrap();
    vigc::media::save_png(&pb, &b).unwrap();
    (pa, pb)
}

fn infer_args(ckpt: &Path, start: &Path, end: &Path, samples: usize, out: &Path) -> InferArgs {
    InferArgs {
        checkpoint: ckpt.to_path_buf(),
        start: start.to_path_buf(),
        end: end.to_path_buf(),
        samples,
        out: out.to_path_buf(),
        seed: 3,
    }
}

#[test]
fn infer_writes_frames_and_gifs_with_exact_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let (start, end) = frame_pngs(dir.path(), [3, 16, 16]);
    let out = dir.path().join("infer");
    let mut log = Vec::new();
    let score = commands::infer(&infer_args(&ckpt, &start, &end, 3, &out), &mut log).unwrap();
    assert!(String::from_utf8(log).unwrap().starts_with("diversity_score "));
    assert!(score.unwrap() >= 0.0);

    let names: Vec<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".gif")).count(), 3);
    assert_eq!(names.iter().filter(|n| n.ends_with(".png")).count(), 15);
    let pixels = |p: PathBuf| image::open(p).unwrap().to_rgb8().into_raw();
    for j in 0..3 {
        assert_eq!(pixels(out.join(format!("sample{j}_f0.png"))), pixels(start.clone()));
        assert_eq!(pixels(out.join(format!("sample{j}_f4.png"))), pixels(end.clone()));
        assert!(out.join(format!("sample{j}.gif")).exists());
    }
}

#[test]
fn infer_rejects_bad_inputs_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = trained(dir.path());
    let (start, end) = frame_pngs(dir.path(), [1, 16, 16]);
    let out = dir.path().join("never");
    let e = commands::infer(&infer_args(&ckpt, &start, &end, 2, &out), &mut Vec::new()).unwrap_err();
    assert!(e.to_string().contains("[3, 16, 16]"), "{e}");
    assert!(!out.exists());

    let (start, end) = frame_pngs(dir.path(), [3, 16, 16]);
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let e = commands::infer(&infer_args(&bad, &start, &end, 2, &out), &mut Vec::new()).unwrap_err();
    assert!(e.to_string().contains("bad.ckpt"), "{e}");
    assert!(!out.exists());

    let status = bin()
        .arg("infer")
        .arg("--checkpoint")
        .arg(&bad)
        .arg("--start")
        .arg(&start)
        .arg("--end")
        .arg(&end)
        .args(["--samples", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!status.status.success());
    assert!(!out.exists());
}

fn gen_args(dataset: DatasetArg, seed: u64, count: u64, out: &Path, idx: Option<PathBuf>) -> GenDataArgs {
    GenDataArgs {
        dataset,
        seed,
        count,
        out: out.to_path_buf(),
        mnist_idx: idx,
        image_size: 64,
    }
}

#[test]
fn gen_data_shapes_contract() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let mut log = Vec::new();
    let r = commands::gen_data(&gen_args(DatasetArg::Shapes2d, 4, 10, &a, None), &mut log).unwrap();
    assert_eq!(r.written.len(), 50);
    assert_eq!(r.passed, 10);
    assert!(r.failures.is_empty());
    assert!(String::from_utf8(log).unwrap().contains("motion-axis oracle: 10/10 passed"));
    assert!(a.join("clip000009_f4.png").exists());
    commands::gen_data(&gen_args(DatasetArg::Shapes2d, 4, 10, &b, None), &mut Vec::new()).unwrap();
    for p in &r.written {
        let name = p.file_name().unwrap();
        assert_eq!(fs::read(p).unwrap(), fs::read(b.join(name)).unwrap());
    }
}

#[test]
fn gen_data_moving_mnist_needs_the_idx_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let e = commands::gen_data(&gen_args(DatasetArg::MovingMnist, 1, 2, &out, None), &mut Vec::new()).unwrap_err();
    assert!(e.to_string().contains("--mnist-idx"), "{e}");
    let o = bin().args(["gen-data", "--dataset", "moving-mnist", "--count", "2", "--out"]).arg(&out).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--mnist-idx"));
    assert!(!out.exists());

    let idx = dir.path().join("digits.idx");
    write_synthetic_idx(&idx, 200, 0).unwrap();
    let r = commands::gen_data(&gen_args(DatasetArg::MovingMnist, 1, 6, &out, Some(idx)), &mut Vec::new()).unwrap();
    assert_eq!((r.written.len(), r.passed), (30, 6));
    let img = image::open(out.join("clip000000_f0.png")).unwrap();
    assert_eq!((img.width(), img.height(), img.color()), (64, 64, image::ColorType::L8));
}
