use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use vigc::checkpoint::{load_checkpoint, save_checkpoint};
use vigc::datasets::{
    load_mnist_idx, motion_oracle, Dataset, DatasetKind, DigitBank, MovingMnist, MovingMnistConfig, Shapes2d,
    ShapesConfig, Split,
};
use vigc::gradcheck::{run_suite, standard_seeds, GradCase, TOLERANCE};
use vigc::inference::{complete_sequence, diversity_score, sample_diverse_completions, CompletionRequest};
use vigc::media::{export_clip, load_png, save_clip_grid, save_gif, save_png, GIF_FRAME_MS};
use vigc::model::VideoClip;
use vigc::training::{train_step, TrainConfig, TrainState};
use vigc::Tensor;

use crate::args::{DatasetArg, GenDataArgs, InferArgs, TrainArgs};
use crate::config::RunConfig;

pub const LOSSES_HEADER: &str = "iteration,loss_d,loss_g";

/// Prints one line per case; `Ok(false)` when any case fails.
pub fn gradcheck(cases: &[GradCase], out: &mut dyn Write) -> Result<bool> {
    let reports = run_suite(cases, &standard_seeds())?;
    let mut failed = Vec::new();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        writeln!(out, "{:<44} {:>10.3e}  {verdict}", r.name, r.max_rel_error)?;
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if failed.is_empty() {
        writeln!(out, "all {} ops below {TOLERANCE:e}", reports.len())?;
    } else {
        writeln!(out, "{} of {} ops failed: {}", failed.len(), reports.len(), failed.join(", "))?;
    }
    Ok(failed.is_empty())
}

fn digit_bank(kind: DatasetKind, path: Option<&Path>, what: &str) -> Result<Option<DigitBank>> {
    match kind {
        DatasetKind::Shapes2d => Ok(None),
        DatasetKind::MovingMnist => {
            let path = path.with_context(|| format!("moving-mnist needs MNIST digits: set {what}"))?;
            Ok(Some(load_mnist_idx(path)?))
        }
    }
}

fn same_run(a: &TrainConfig, b: &TrainConfig) -> bool {
    TrainConfig { iterations: 0, ..a.clone() } == TrainConfig { iterations: 0, ..b.clone() }
}

/// Keep the header and the rows of iterations `1..=done`, or start a new file.
fn open_losses(path: &Path, done: u64) -> Result<File> {
    let mut kept = vec![LOSSES_HEADER.to_string()];
    if done > 0 && path.exists() {
        let reader = BufReader::new(File::open(path).with_context(|| format!("cannot read {}", path.display()))?);
        for line in reader.lines().skip(1) {
            let line = line?;
            let it: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
            if it <= done {
                kept.push(line);
            }
        }
    }
    let mut f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    for line in kept {
        writeln!(f, "{line}")?;
    }
    Ok(OpenOptions::new().append(true).open(path)?)
}

/// Pairs of rows, the real test clip above its completion.
pub fn sample_clips(state: &TrainState<f32>, cfg: &TrainConfig, data: &Dataset, count: usize) -> Result<Vec<VideoClip<f32>>> {
    let len = cfg.model.clip_len;
    let mut rows = Vec::with_capacity(2 * count);
    for i in 0..count.min(data.split_len(Split::Test)) {
        let real = data.clip::<f32>(data.clip_index(Split::Test, i));
        let mut req = CompletionRequest::new(real.first(), real.last(), 1, cfg.seed);
        req.clip_len = len;
        req.per_pass_latent = cfg.per_pass_latent;
        let z = req.latents(cfg.model.latent_dim, i);
        let fake = complete_sequence(&state.params, &req.f_start, &req.f_end, len, &z)?;
        rows.push(real);
        rows.push(fake);
    }
    Ok(rows)
}

pub fn train(args: &TrainArgs, log: &mut dyn Write) -> Result<()> {
    let run = RunConfig::load(&args.config)?;
    let cfg = &run.train;
    let out = args
        .out
        .clone()
        .or_else(|| run.paths.out_dir.clone())
        .context("no output directory: pass --out or set paths.out_dir")?;
    let bank = digit_bank(cfg.dataset.kind, run.paths.mnist_idx.as_deref(), "paths.mnist_idx")?;
    let data = Dataset::new(&cfg.dataset, &cfg.model, bank, cfg.seed)?;
    let mut state = match &args.resume {
        Some(path) => {
            let (stored, state) = load_checkpoint(path)?;
            ensure!(
                same_run(&stored, cfg),
                "{} was trained with a different configuration; only train.iterations may change",
                path.display()
            );
            ensure!(
                state.iteration <= cfg.iterations,
                "{} is at iteration {}, past train.iterations = {}",
                path.display(),
                state.iteration,
                cfg.iterations
            );
            state
        }
        None => TrainState::new(cfg)?,
    };

    fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    fs::write(out.join("config.toml"), run.to_toml()?)?;
    let mut losses = open_losses(&out.join("losses.csv"), state.iteration)?;
    let every = |n: u64, it: u64| n > 0 && it % n == 0;
    let grid = |state: &TrainState<f32>, name: String| -> Result<()> {
        save_clip_grid(out.join(name), &sample_clips(state, cfg, &data, run.export.sample_clips)?)?;
        Ok(())
    };

    while state.iteration < cfg.iterations {
        let r = train_step(&mut state, cfg, &data)?;
        let (ld, lg) = (r.mean_critic_loss(), r.generator_loss);
        writeln!(losses, "{},{ld},{lg}", r.iteration)?;
        losses.flush()?;
        if every(run.export.log_every, r.iteration) {
            writeln!(log, "iteration {:>6}/{}  loss_d {ld:+.6}  loss_g {lg:+.6}", r.iteration, cfg.iterations)?;
        }
        if every(run.export.checkpoint_every, r.iteration) {
            save_checkpoint(out.join(format!("ckpt_{:06}.ckpt", r.iteration)), &state, cfg)?;
        }
        if every(run.export.sample_every, r.iteration) {
            grid(&state, format!("samples_{:06}.png", r.iteration))?;
        }
    }
    save_checkpoint(out.join("final.ckpt"), &state, cfg)?;
    if let Some(extra) = &run.paths.checkpoint {
        save_checkpoint(extra, &state, cfg)?;
    }
    grid(&state, "samples_final.png".into())?;
    writeln!(log, "wrote {}", out.join("final.ckpt").display())?;
    Ok(())
}

fn load_frame(path: &Path, expected: [usize; 3]) -> Result<Tensor> {
    let frame: Tensor = load_png(path)?;
    ensure!(
        frame.shape() == expected,
        "{}: frame is [C, H, W] = {:?}, but the checkpoint expects {expected:?}",
        path.display(),
        frame.shape()
    );
    Ok(frame)
}

/// Writes `sample{j}_f{t}.png` and `sample{j}.gif`; returns the diversity
/// score when there are at least two samples.
pub fn infer(args: &InferArgs, log: &mut dyn Write) -> Result<Option<f64>> {
    ensure!(args.samples >= 1, "--samples must be at least 1");
    let (cfg, state) = load_checkpoint(&args.checkpoint)?;
    let expected = cfg.model.frame_shape();
    let f_start = load_frame(&args.start, expected)?;
    let f_end = load_frame(&args.end, expected)?;
    let mut req = CompletionRequest::new(f_start, f_end, args.samples, args.seed);
    req.clip_len = cfg.model.clip_len;
    req.per_pass_latent = cfg.per_pass_latent;
    let clips = sample_diverse_completions(&state.params, &req)?;

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    for (j, clip) in clips.iter().enumerate() {
        for t in 0..clip.len() {
            save_png(args.out.join(format!("sample{j}_f{t}.png")), &clip.frame(t))?;
        }
        save_gif(args.out.join(format!("sample{j}.gif")), clip, GIF_FRAME_MS)?;
    }
    let score = (clips.len() >= 2).then(|| diversity_score(&clips)).transpose()?;
    match score {
        Some(s) => writeln!(log, "diversity_score {s}")?,
        None => writeln!(log, "diversity_score n/a (one sample)")?,
    }
    Ok(score)
}

/// Summary of a `gen-data` run.
#[derive(Clone, Debug, PartialEq)]
pub struct GenReport {
    pub written: Vec<PathBuf>,
    pub passed: u64,
    pub failures: Vec<String>,
}

pub fn gen_data(args: &GenDataArgs, log: &mut dyn Write) -> Result<GenReport> {
    let mut report = GenReport {
        written: Vec::new(),
        passed: 0,
        failures: Vec::new(),
    };
    let mut check = |index: u64, clip: &VideoClip<f32>, verdict: std::result::Result<(), String>, out: &Path| -> Result<()> {
        report.written.extend(export_clip(out, index, clip)?);
        match verdict {
            Ok(()) => report.passed += 1,
            Err(e) => report.failures.push(format!("clip {index}: {e}")),
        }
        Ok(())
    };
    let oracle;
    match args.dataset {
        DatasetArg::Shapes2d => {
            let cfg = ShapesConfig {
                image_size: args.image_size,
                ..ShapesConfig::default()
            };
            let src = Shapes2d::new(cfg, args.seed)?;
            fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
            for i in 0..args.count {
                let spec = src.spec(i);
                let clip = src.render(&spec);
                let verdict = motion_oracle(spec.kind, &clip, 0.5);
                check(i, &clip, verdict, &args.out)?;
            }
            oracle = "motion-axis oracle";
        }
        DatasetArg::MovingMnist => {
            let Some(path) = &args.mnist_idx else {
                bail!("--dataset moving-mnist needs --mnist-idx <PATH> pointing at MNIST training images");
            };
            let bank = load_mnist_idx(path)?;
            let cfg = MovingMnistConfig {
                image_size: args.image_size,
                ..MovingMnistConfig::default()
            };
            let src = MovingMnist::new(bank, cfg, args.seed)?;
            fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
            for i in 0..args.count {
                let clip = src.clip(i);
                let verdict = mass_oracle(&src, i);
                check(i, &clip, verdict, &args.out)?;
            }
            oracle = "in-frame mass oracle";
        }
    }
    writeln!(
        log,
        "{} clips, {} frames written to {}; {oracle}: {}/{} passed",
        args.count,
        report.written.len(),
        args.out.display(),
        report.passed,
        args.count
    )?;
    for f in &report.failures {
        writeln!(log, "  {f}")?;
    }
    Ok(report)
}

/// Every digit keeps its full mass (within 1%) in every frame.
pub fn mass_oracle(src: &MovingMnist, index: u64) -> std::result::Result<(), String> {
    for (track, layer) in src.tracks(index).iter().zip(src.layers(index)) {
        let mass: f64 = src.bank().image(track.digit).iter().map(|&v| v as f64).sum();
        for (t, frame) in layer.iter().enumerate() {
            let m: f64 = frame.iter().map(|&v| v as f64).sum();
            if (m - mass).abs() > 0.01 * mass {
                return Err(format!("digit {} has mass {m:.3} of {mass:.3} in frame {t}", track.digit));
            }
        }
    }
    Ok(())
}
