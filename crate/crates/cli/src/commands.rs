use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use tpnet::datagen::{
    derive_seed, generate_corpus, normalize_frames, read_corpus, read_trajectory, sample_subsequences, write_corpus,
    CorpusError, InitGrid, OrderingMethod, Split, Trajectory, ROLLOUT_HORIZON,
};
use tpnet::eval::{
    evaluate_with, export_rollout, scaling_probe, throughput_probe, EvalError, Predictor, RigidBaseline,
};
use tpnet::learn::{self, grad_check_with, tiny_config, GradCheckOptions, LearnError, TrainConfig};
use tpnet::model::{init_params, load_checkpoint, param_count, rollout as model_rollout, save_checkpoint, ModelConfig, ModelParams};
use tpnet::par::with_threads;
use tpnet::sim::{SimError, WorldConfig};

use crate::args::*;
use crate::failure::{self, CliResult, Failure};
use crate::manifest::{sibling, RunManifest};

fn read_json<T: DeserializeOwned>(path: &Path, flag: &str) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(format!("{flag} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{flag} {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelParams, Failure> {
    load_checkpoint(path).map_err(|e| failure::checkpoint(path, e))
}

fn load_data(dir: &Path) -> Result<Vec<Trajectory>, Failure> {
    let corpus = read_corpus(dir)?;
    if corpus.is_empty() {
        return Err(Failure::usage(format!("--data {}: no trajectory files found", dir.display())));
    }
    Ok(corpus)
}

/// Particle count shared by every trajectory of the corpus.
fn corpus_points(corpus: &[Trajectory], dir: &Path) -> Result<usize, Failure> {
    let n = corpus[0].meta.config.n;
    match corpus.iter().position(|t| t.meta.config.n != n) {
        Some(i) => Err(Failure::usage(format!(
            "--data {}: trajectory {i} has {} particles, trajectory 0 has {n}",
            dir.display(),
            corpus[i].meta.config.n
        ))),
        None => Ok(n),
    }
}

fn config_json(cfg: &ModelConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

fn mismatch(what: &str, checkpoint: &ModelConfig, other: impl std::fmt::Display) -> Failure {
    Failure::new(
        failure::CHECKPOINT,
        format!("{what}\n  checkpoint config: {}\n  data/flags:        {other}", config_json(checkpoint)),
    )
}

#[derive(Deserialize)]
struct GenConfigFile {
    #[serde(default)]
    world: WorldConfig,
    #[serde(default)]
    grid: InitGrid,
}

pub fn gen_data(a: &GenDataArgs) -> CliResult {
    let manifest = RunManifest::start("gen-data", a).seed("master", a.seed);
    let (world, mut grid) = match &a.config {
        Some(path) => {
            let f: GenConfigFile = read_json(path, "--config")?;
            (f.world, f.grid)
        }
        None => (WorldConfig::default(), InitGrid::default()),
    };
    world.validate().map_err(|e| Failure::usage(format!("--config: {e}")))?;
    grid.split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
        SplitArg::Any => Split::Any,
    };
    let corpus = with_threads(a.jobs as usize, |mode| {
        generate_corpus(&world, &grid, a.trajectories as usize, a.steps as usize, a.seed, mode)
    })
    .map_err(|e| match &e {
        CorpusError::Sim { source: SimError::Diverged { .. }, .. } => Failure::new(failure::DIVERGED, e),
        _ if a.config.is_some() => Failure::usage(format!("--config: {e}")),
        _ => Failure::usage(e),
    })?;
    let files = write_corpus(&a.out, &corpus)?;
    println!("wrote {} trajectories of {} frames to {}", files.len(), a.steps, a.out.display());
    let mut manifest = manifest;
    manifest.outputs = files;
    manifest.detail("world", &world);
    manifest.detail("grid", &grid);
    manifest.finish(&a.out.join("manifest.json"))
}

pub fn train(a: &TrainArgs) -> CliResult {
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(Failure::usage(format!("--lr must be positive and finite, got {}", a.lr)));
    }
    let mut manifest = RunManifest::start("train", a).seed("train", a.seed).seed("model", a.seed);
    let corpus = load_data(&a.data)?;
    let n = corpus_points(&corpus, &a.data)?;
    let m = a.m as usize;

    let mut model_config = match &a.model_config {
        Some(path) => read_json(path, "--model-config")?,
        None => ModelConfig::default(),
    };
    model_config.n_points = n;
    model_config.m_frames = m;
    model_config.seed = a.seed;
    model_config.validate().map_err(|e| Failure::usage(format!("--model-config: {e}")))?;

    let train_config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs as usize,
        batch_size: a.batch as usize,
        seed: a.seed,
        grad_clip: a.grad_clip,
        ortho_weight: a.ortho_weight,
        truncate_feedback: a.truncate_feedback,
        validation_fraction: a.val_fraction,
        ..TrainConfig::default()
    };
    train_config.validate().map_err(Failure::usage)?;

    let mut samples = Vec::new();
    let (mut short_col, mut short_norm) = (0, 0);
    for (i, t) in corpus.iter().enumerate() {
        let w = sample_subsequences(t, i, m, a.collision_windows, a.normal_windows, derive_seed(a.seed, i as u64));
        short_col += w.collision_shortfall;
        short_norm += w.normal_shortfall;
        samples.extend(w.samples);
    }
    let window = m + ROLLOUT_HORIZON;
    println!(
        "{} windows of {window} frames from {} trajectories ({} parameters)",
        samples.len(),
        corpus.len(),
        param_count(&model_config)
    );
    if short_col + short_norm > 0 {
        println!("shortfall: {short_col} collision, {short_norm} normal windows unavailable");
    }
    manifest.inputs = vec![a.data.clone()];
    manifest.detail("window_length", window);
    manifest.detail("samples", samples.len());
    manifest.detail("collision_shortfall", short_col);
    manifest.detail("normal_shortfall", short_norm);
    manifest.detail("model_config", &model_config);
    manifest.detail("train_config", &train_config);
    if a.dry_run {
        println!("dry run: model {}", config_json(&model_config));
        return Ok(());
    }
    if samples.is_empty() {
        return Err(Failure::usage(format!("--data {}: no trajectory is long enough for {window}-frame windows", a.data.display())));
    }

    let outcome = with_threads(a.jobs as usize, |mode| {
        learn::train(&train_config, &samples, &model_config, mode, &mut |s| {
            let val = s.val_loss.map_or("-".to_string(), |v| format!("{v:.6e}"));
            eprintln!("epoch {:>4}  train {:.6e}  val {val}  {:.1}s", s.epoch, s.train_loss, s.wall_seconds);
        })
    })
    .map_err(|e| match e {
        LearnError::NonFiniteLoss { .. } | LearnError::NonFiniteGradient { .. } => Failure::new(failure::NON_FINITE, e),
        _ => Failure::usage(e),
    })?;

    save_checkpoint(&a.out, &outcome.params).map_err(|e| Failure::io(format!("--out {}: {e}", a.out.display())))?;
    let log = a.log.clone().unwrap_or_else(|| sibling(&a.out, "log.csv"));
    learn::write_log_csv(&log, &outcome.history).map_err(|e| Failure::io(format!("{}: {e}", log.display())))?;
    println!("best epoch {} -> {}", outcome.best_epoch, a.out.display());
    manifest.detail("best_epoch", outcome.best_epoch);
    manifest.outputs = vec![a.out.clone(), log];
    manifest.finish(&sibling(&a.out, "manifest.json"))
}

fn ordering(arg: OrderingArg, seed: u64) -> OrderingMethod {
    match arg {
        OrderingArg::Identity => OrderingMethod::Identity,
        OrderingArg::AscX => OrderingMethod::AscendingX,
        OrderingArg::DescY => OrderingMethod::DescendingY,
        OrderingArg::Shuffle => OrderingMethod::RandomShuffle { seed },
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Io(_) => Failure::io(e),
        _ => Failure::usage(e),
    }
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let mut manifest = RunManifest::start("eval", a).seed("shuffle", a.seed);
    let corpus = load_data(&a.data)?;
    let n = corpus_points(&corpus, &a.data)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let m = match (&model, a.m) {
        (Some(p), Some(m)) if p.config().m_frames != m as usize => {
            return Err(mismatch(
                &format!("checkpoint expects m = {} input frames, --m is {m}", p.config().m_frames),
                p.config(),
                format!("--m {m}"),
            ));
        }
        (Some(p), _) => p.config().m_frames,
        (None, Some(m)) => m as usize,
        (None, None) => 5,
    };
    if let Some(p) = &model {
        if p.config().n_points != n {
            let world = serde_json::to_string(&corpus[0].meta.config).expect("config serializes");
            return Err(mismatch(
                &format!("checkpoint expects {} points per frame, data has {n}", p.config().n_points),
                p.config(),
                format!("world config {world}"),
            ));
        }
    }
    if a.horizons.is_empty() || a.horizons.contains(&0) {
        return Err(Failure::usage("--horizons must be positive integers"));
    }
    let orderings: Vec<OrderingMethod> = a.ordering.iter().map(|&o| ordering(o, a.seed)).collect();
    let predictor: &dyn Predictor = match &model {
        Some(p) => p,
        None => &RigidBaseline,
    };
    let report = with_threads(a.jobs as usize, |mode| evaluate_with(predictor, &corpus, m, &a.horizons, &orderings, mode))
        .map_err(eval_failure)?;
    if report.trajectories == 0 {
        return Err(Failure::usage(format!(
            "--data {}: no trajectory has the {} frames needed for --horizons {:?}",
            a.data.display(),
            m + a.horizons.iter().max().unwrap(),
            a.horizons
        )));
    }
    for o in &report.results {
        for h in &o.horizons {
            println!(
                "{:<9} h={:<4} E_p {:.6e}  E_s {:.6e}",
                o.ordering.name(),
                h.horizon,
                h.mean_position_error,
                h.mean_shape_error
            );
        }
    }
    if report.skipped > 0 {
        println!("{} trajectories too short, skipped", report.skipped);
    }
    fs::write(&a.report, report.to_json() + "\n").map_err(|e| Failure::io(format!("--report {}: {e}", a.report.display())))?;
    manifest.inputs = [Some(a.data.clone()), a.model.clone()].into_iter().flatten().collect();
    manifest.outputs = vec![a.report.clone()];
    manifest.finish(&sibling(&a.report, "manifest.json"))
}

pub fn rollout(a: &RolloutArgs) -> CliResult {
    let manifest = RunManifest::start("rollout", a);
    let params = load_model(&a.model)?;
    let traj = read_trajectory(&a.traj)?;
    let cfg = params.config();
    if traj.meta.config.n != cfg.n_points {
        return Err(mismatch(
            &format!("checkpoint expects {} points per frame, --traj has {}", cfg.n_points, traj.meta.config.n),
            cfg,
            format!("--traj {}", a.traj.display()),
        ));
    }
    let m = cfg.m_frames;
    let steps = a.steps as usize;
    let needed = a.start + m + steps;
    if traj.len() < needed {
        return Err(Failure::usage(format!(
            "--start {} --steps {steps} needs {needed} frames, --traj {} has {}",
            a.start,
            a.traj.display(),
            traj.len()
        )));
    }
    let frames = normalize_frames(&traj);
    let preds = model_rollout(&params, &frames[a.start..a.start + m], steps).map_err(Failure::usage)?;
    let summary = export_rollout(&frames[a.start + m..needed], &preds, &a.out).map_err(eval_failure)?;
    println!("wrote {} images and {}", summary.images.len(), summary.csv.display());
    let mut manifest = manifest;
    manifest.inputs = vec![a.model.clone(), a.traj.clone()];
    manifest.outputs = vec![a.out.clone()];
    manifest.finish(&a.out.join("manifest.json"))
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult {
    if !(a.tolerance >= 0.0) {
        return Err(Failure::usage(format!("--tolerance must be non-negative, got {}", a.tolerance)));
    }
    let manifest = RunManifest::start("gradcheck", a).seed("gradcheck", a.seed);
    let cfg = match &a.model_config {
        Some(path) => read_json(path, "--model-config")?,
        None => tiny_config(),
    };
    let opts = GradCheckOptions { coordinates: a.coordinates, seed: a.seed, ..GradCheckOptions::default() };
    let report = grad_check_with(&cfg, a.tolerance, &opts).map_err(Failure::usage)?;
    println!("checked {} of {} coordinates", report.checked, report.param_count);
    println!("max relative error: {:.3e}", report.max_rel_error);
    println!("mean relative error: {:.3e}", report.mean_rel_error);
    for f in report.failures.iter().take(10) {
        println!(
            "  mismatch at {} ({}): analytic {:.6e} numeric {:.6e} rel {:.3e}",
            f.index, f.block, f.analytic, f.numeric, f.rel_error
        );
    }
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Failure::io(format!("--report {}: {e}", path.display())))?;
        let mut manifest = manifest;
        manifest.outputs = vec![path.clone()];
        manifest.finish(&sibling(path, "manifest.json"))?;
    }
    if report.passed {
        println!("PASS (tolerance {:.1e})", a.tolerance);
        Ok(())
    } else {
        Err(Failure::io(format!(
            "gradient check failed: {} of {} coordinates above tolerance {:.1e}",
            report.failures.len(),
            report.checked,
            a.tolerance
        )))
    }
}

/// First `m` normalized frames of a freshly simulated trajectory with `n` particles.
fn probe_frames(n: usize, m: usize, seed: u64) -> Result<Vec<tpnet::geom::PointSet>, Failure> {
    let world = WorldConfig { n, ..WorldConfig::default() };
    let corpus = generate_corpus(&world, &InitGrid::default(), 1, m, seed, tpnet::ExecMode::Sequential)
        .map_err(|e| Failure::new(failure::DIVERGED, e))?;
    Ok(normalize_frames(&corpus[0]))
}

pub fn probe(a: &ProbeArgs) -> CliResult {
    let manifest = RunManifest::start("probe", a).seed("probe", a.seed);
    let json = if a.scaling {
        if a.ns.is_empty() || a.ns.contains(&0) {
            return Err(Failure::usage("--ns must list positive point counts"));
        }
        let base: ModelConfig = match &a.model_config {
            Some(path) => read_json(path, "--model-config")?,
            None => ModelConfig::default(),
        };
        base.validate().map_err(|e| Failure::usage(format!("--model-config: {e}")))?;
        let report = scaling_probe(&base, &a.ns, a.reps, a.warmup).map_err(eval_failure)?;
        println!("{:>6} {:>14} {:>14} {:>14}", "n", "median_s", "mean_s", "peak_bytes");
        for r in &report.rows {
            println!("{:>6} {:>14.6e} {:>14.6e} {:>14}", r.n, r.median_seconds, r.mean_seconds, r.peak_bytes_estimate);
        }
        match report.slope {
            Some(s) => println!("slope: {s:.4}"),
            None => println!("slope: n/a"),
        }
        serde_json::to_string_pretty(&report)
    } else {
        if !(a.seconds >= 0.0 && a.seconds.is_finite()) {
            return Err(Failure::usage(format!("--seconds must be a finite non-negative number, got {}", a.seconds)));
        }
        let params = match &a.model {
            Some(path) => load_model(path)?,
            None => {
                let cfg: ModelConfig = match &a.model_config {
                    Some(path) => read_json(path, "--model-config")?,
                    None => ModelConfig::default(),
                };
                init_params(&cfg).map_err(|e| Failure::usage(format!("--model-config: {e}")))?
            }
        };
        let cfg = params.config();
        let frames = probe_frames(cfg.n_points, cfg.m_frames, a.seed)?;
        let rate = throughput_probe(&params, &frames, a.seconds).map_err(eval_failure)?;
        println!("throughput: {rate:.1} predicted frames per second (n = {})", cfg.n_points);
        serde_json::to_string_pretty(&serde_json::json!({ "frames_per_second": rate, "n_points": cfg.n_points }))
    }
    .expect("report serializes");
    if let Some(path) = &a.report {
        fs::write(path, json + "\n").map_err(|e| Failure::io(format!("--report {}: {e}", path.display())))?;
        let mut manifest = manifest;
        manifest.outputs = vec![path.clone()];
        manifest.finish(&sibling(path, "manifest.json"))?;
    }
    Ok(())
}
