//! Minibatch training with AdamW, warmup plus cosine learning rate, gradient
//! clipping, periodic checkpoints and a CSV metrics log.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment_scaled, sample_subsequence, scale_values, AugStep, Dataset, NormMethod, Trajectory};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Dtype, Model, ModelConfig, OptimState, SeqInput, TrainingMeta, Variant};
use crate::seed::{rng_from, Rng};

/// What is trained: the model variant plus, for `BcFilter`, an algorithm exclusion list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainVariant {
    Ribbo,
    Bc,
    BcFilter,
    Algoid,
}

impl TrainVariant {
    pub fn model_variant(self) -> Variant {
        match self {
            TrainVariant::Ribbo => Variant::Ribbo,
            TrainVariant::Bc | TrainVariant::BcFilter => Variant::Bc,
            TrainVariant::Algoid => Variant::AlgoId,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainVariant::Ribbo => "ribbo",
            TrainVariant::Bc => "bc",
            TrainVariant::BcFilter => "bc-filter",
            TrainVariant::Algoid => "algoid",
        }
    }
}

impl fmt::Display for TrainVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TrainVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ribbo" => Ok(TrainVariant::Ribbo),
            "bc" => Ok(TrainVariant::Bc),
            "bc-filter" => Ok(TrainVariant::BcFilter),
            "algoid" => Ok(TrainVariant::Algoid),
            _ => Err(Error::invalid(format!("unknown training variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub total_steps: u64,
    pub peak_lr: f64,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    /// Prediction targets per window; windows hold `tau + 1` steps.
    pub tau: usize,
    pub seed: u64,
    /// Metric rows are written every `eval_every` steps.
    pub eval_every: u64,
    /// Intermediate checkpoints every this many steps (0 disables them).
    #[serde(default)]
    pub checkpoint_every: u64,
    pub variant: TrainVariant,
    pub grad_clip: f64,
    #[serde(default)]
    pub norm_method: NormMethod,
    /// Algorithms left out of the training data (`bc-filter`).
    #[serde(default)]
    pub excluded_algos: Vec<String>,
}

impl TrainerConfig {
    pub fn desk(variant: TrainVariant, total_steps: u64, seed: u64) -> Self {
        TrainerConfig {
            batch_size: 16,
            total_steps,
            peak_lr: 1e-3,
            warmup_fraction: 0.05,
            weight_decay: 0.01,
            tau: 30,
            seed,
            eval_every: 100,
            checkpoint_every: 1000,
            variant,
            grad_clip: 1.0,
            norm_method: NormMethod::Random,
            excluded_algos: Vec::new(),
        }
    }

    pub fn paper(variant: TrainVariant, seed: u64) -> Self {
        TrainerConfig {
            batch_size: 64,
            total_steps: 500_000,
            peak_lr: 2e-4,
            tau: 50,
            checkpoint_every: 10_000,
            eval_every: 1000,
            ..Self::desk(variant, 500_000, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if self.tau == 0 || self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 {
            return bad("tau, batch_size, total_steps and eval_every must be positive");
        }
        if !(self.peak_lr > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip > 0.0) {
            return bad("learning rate and clip norm must be positive, weight decay nonnegative");
        }
        Ok(())
    }

    fn warmup_steps(&self) -> u64 {
        ((self.warmup_fraction * self.total_steps as f64).round() as u64).max(1)
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to 0 at `total_steps`.
pub fn lr_schedule(step: u64, cfg: &TrainerConfig) -> f64 {
    let warm = cfg.warmup_steps().min(cfg.total_steps);
    let step = step.min(cfg.total_steps);
    if step < warm {
        return cfg.peak_lr * step as f64 / warm as f64;
    }
    let span = (cfg.total_steps - warm).max(1) as f64;
    let progress = (step - warm) as f64 / span;
    cfg.peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    decay: Vec<bool>,
    state: OptimState,
}

impl AdamW {
    pub fn new(model: &Model, weight_decay: f64) -> Self {
        let n = model.num_params();
        Self::with_state(
            model,
            weight_decay,
            OptimState {
                step: 0,
                m: vec![0.0; n],
                v: vec![0.0; n],
            },
        )
    }

    pub fn with_state(model: &Model, weight_decay: f64, state: OptimState) -> Self {
        let mut decay = vec![false; model.num_params()];
        for t in model.tensors().iter().filter(|t| t.decays()) {
            decay[t.offset..t.offset + t.len()].fill(true);
        }
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            decay,
            state,
        }
    }

    pub fn state(&self) -> &OptimState {
        &self.state
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let s = &mut self.state;
        s.step += 1;
        let c1 = 1.0 - self.beta1.powi(s.step as i32);
        let c2 = 1.0 - self.beta2.powi(s.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            s.m[i] = self.beta1 * s.m[i] + (1.0 - self.beta1) * g;
            s.v[i] = self.beta2 * s.v[i] + (1.0 - self.beta2) * g * g;
            if self.decay[i] {
                params[i] -= lr * self.weight_decay * params[i];
            }
            params[i] -= lr * (s.m[i] / c1) / ((s.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Training windows drawn for one step.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Index into the sampler's trajectory list, per window.
    pub trajectories: Vec<usize>,
    pub windows: Vec<Vec<AugStep>>,
    pub algos: Vec<Option<usize>>,
}

impl Batch {
    pub fn inputs(&self) -> Vec<SeqInput<'_>> {
        self.windows
            .iter()
            .zip(&self.algos)
            .map(|(w, &algo)| SeqInput { steps: w, algo })
            .collect()
    }
}

/// Draws scaled, regret-to-go-augmented windows uniformly over trajectories.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    trajs: Vec<Trajectory>,
    ranges: Vec<(f64, f64)>,
    method: NormMethod,
    window: usize,
}

impl BatchSampler {
    /// Keeps trajectories whose algorithm is not excluded and whose task has a
    /// nondegenerate value range.
    pub fn new(ds: &Dataset, tau: usize, method: NormMethod, excluded: &[String]) -> Result<Self> {
        let stats = ds.stats();
        let mut trajs = Vec::new();
        let mut ranges = Vec::new();
        let mut skipped = 0usize;
        for t in &ds.trajectories {
            if excluded.contains(&t.algo) {
                continue;
            }
            let s = stats.get(&t.task).ok_or_else(|| {
                Error::config(format!("task {} missing from the manifest", t.task))
            })?;
            if !(s.y_max > s.y_min) {
                skipped += 1;
                continue;
            }
            trajs.push(t.clone());
            ranges.push((s.y_min, s.y_max));
        }
        if skipped > 0 {
            warn!("skipped {skipped} trajectories on tasks with a degenerate value range");
        }
        if trajs.is_empty() {
            return Err(Error::config("no usable training trajectories"));
        }
        let dim = trajs[0].dim();
        if trajs.iter().any(|t| t.dim() != dim) {
            return Err(Error::config("training trajectories mix dimensions"));
        }
        Ok(BatchSampler {
            trajs,
            ranges,
            method,
            window: tau + 1,
        })
    }

    pub fn len(&self) -> usize {
        self.trajs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.trajs[0].dim()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajs
    }

    pub fn draw_index(&self, rng: &mut Rng) -> usize {
        rng.random_range(0..self.trajs.len())
    }

    pub fn draw(&self, batch_size: usize, rng: &mut Rng) -> Result<Batch> {
        let mut batch = Batch {
            trajectories: Vec::with_capacity(batch_size),
            windows: Vec::with_capacity(batch_size),
            algos: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let i = self.draw_index(rng);
            let t = &self.trajs[i];
            let (lo, hi) = self.ranges[i];
            let scaled = scale_values(self.method, t, lo, hi, rng)?;
            let aug = augment_scaled(t, &scaled);
            let w = sample_subsequence(&aug, self.window.min(aug.steps.len()), rng)?;
            batch.trajectories.push(i);
            batch.windows.push(w.steps);
            batch.algos.push(t.algo_id().map(|a| a.index()));
        }
        Ok(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

/// One AdamW update on `batch`. Dropout draws come from `rng`.
pub fn train_step(
    model: &mut Model,
    opt: &mut AdamW,
    batch: &Batch,
    lr: f64,
    grad_clip: f64,
    rng: &mut Rng,
) -> Result<StepStats> {
    let (loss, mut grads) = model.loss_and_grad(&batch.inputs(), Some(rng))?;
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !loss.is_finite() || !norm.is_finite() {
        return Err(Error::Diverged {
            step: opt.state().step,
            message: format!(
                "loss {loss}, gradient norm {norm}, trajectories {:?}",
                batch.trajectories
            ),
        });
    }
    if norm > grad_clip {
        let s = grad_clip / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    opt.update(model.params_mut(), &grads, lr);
    Ok(StepStats {
        loss,
        grad_norm: norm,
        lr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

/// Paths written by [`run_training`] next to the checkpoint `out`.
pub fn metrics_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".metrics.csv");
    PathBuf::from(s)
}

fn excluded_for(cfg: &TrainerConfig) -> Vec<String> {
    if cfg.variant == TrainVariant::BcFilter {
        cfg.excluded_algos.clone()
    } else {
        Vec::new()
    }
}

/// Trains from scratch (or from `resume`) up to `cfg.total_steps`, writing the
/// checkpoint to `out` and metrics to [`metrics_path`].
pub fn run_training(
    ds: &Dataset,
    model_cfg: ModelConfig,
    cfg: &TrainerConfig,
    out: &Path,
    resume: Option<Checkpoint>,
) -> Result<Checkpoint> {
    run_training_until(ds, model_cfg, cfg, out, resume, cfg.total_steps)
}

/// Like [`run_training`] but stops after step `stop` (the schedule still spans `total_steps`).
pub fn run_training_until(
    ds: &Dataset,
    model_cfg: ModelConfig,
    cfg: &TrainerConfig,
    out: &Path,
    resume: Option<Checkpoint>,
    stop: u64,
) -> Result<Checkpoint> {
    cfg.validate()?;
    let stop = stop.min(cfg.total_steps);
    if model_cfg.variant != cfg.variant.model_variant() {
        return Err(Error::config("model variant does not match the training variant"));
    }
    if cfg.variant == TrainVariant::BcFilter && cfg.excluded_algos.is_empty() {
        return Err(Error::config("bc-filter needs a non-empty exclusion list"));
    }
    let excluded = excluded_for(cfg);
    let sampler = BatchSampler::new(ds, cfg.tau, cfg.norm_method, &excluded)?;
    if sampler.dim() != model_cfg.x_dim {
        return Err(Error::config(format!(
            "dataset dimension {} does not match model dimension {}",
            sampler.dim(),
            model_cfg.x_dim
        )));
    }
    if model_cfg.max_len < cfg.tau + 1 {
        return Err(Error::config("model max_len must be at least tau + 1"));
    }
    if model_cfg.variant == Variant::AlgoId
        && sampler.trajectories().iter().any(|t| t.algo_id().is_none())
    {
        return Err(Error::config("algo-id training needs known algorithm names"));
    }
    let normalization = ds.normalization()?;

    let (mut model, mut opt, start) = match resume {
        Some(c) => {
            if c.model.config() != &model_cfg {
                return Err(Error::config("resume checkpoint has a different model configuration"));
            }
            let state = c
                .optimizer
                .ok_or_else(|| Error::config("resume checkpoint has no optimizer state"))?;
            let step = c.meta.step;
            let opt = AdamW::with_state(&c.model, cfg.weight_decay, state);
            (c.model, opt, step)
        }
        None => {
            let m = Model::new(model_cfg, cfg.seed)?;
            let opt = AdamW::new(&m, cfg.weight_decay);
            (m, opt, 0)
        }
    };

    let metrics = metrics_path(out);
    if let Some(dir) = metrics.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = if start == 0 || !metrics.exists() {
        std::fs::File::create(&metrics)?
    } else {
        OpenOptions::new().append(true).open(&metrics)?
    };
    let mut writer = csv::WriterBuilder::new()
        .has_headers(start == 0)
        .from_writer(file);

    let meta = |step: u64| TrainingMeta {
        step,
        seed: cfg.seed,
        label: cfg.variant.name().to_string(),
        excluded_algos: excluded.clone(),
        trainer: serde_json::to_value(cfg).ok(),
        distributions: ds.manifest.distributions.clone(),
    };
    let snapshot = |model: &Model, opt: &AdamW, step: u64| Checkpoint {
        model: model.clone(),
        normalization: Some(normalization.clone()),
        meta: meta(step),
        optimizer: Some(opt.state().clone()),
    };

    info!(
        "training {} ({} parameters) on {} trajectories, steps {}..{}",
        cfg.variant,
        model.num_params(),
        sampler.len(),
        start,
        stop
    );
    let mut acc = (0.0, 0.0, 0usize);
    for step in start..stop {
        let mut rng = rng_from(&[cfg.seed, step, 0x7ea1]);
        let batch = sampler.draw(cfg.batch_size, &mut rng)?;
        let lr = lr_schedule(step, cfg);
        let stats = train_step(&mut model, &mut opt, &batch, lr, cfg.grad_clip, &mut rng)
            .map_err(|e| match e {
                Error::Diverged { message, .. } => Error::Diverged { step, message },
                other => other,
            })?;
        acc = (acc.0 + stats.loss, acc.1 + stats.grad_norm, acc.2 + 1);
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.total_steps {
            let row = MetricRow {
                step: done,
                loss: acc.0 / acc.2 as f64,
                lr,
                grad_norm: acc.1 / acc.2 as f64,
            };
            info!("step {} loss {:.4} lr {:.2e}", row.step, row.loss, row.lr);
            writer.serialize(&row)?;
            writer.flush()?;
            acc = (0.0, 0.0, 0);
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < stop {
            snapshot(&model, &opt, done).save(out, Dtype::F64)?;
        }
    }
    writer.flush()?;
    let ckpt = snapshot(&model, &opt, stop.max(start));
    ckpt.save(out, Dtype::F64)?;
    Ok(ckpt)
}

/// Reads the metrics log written by [`run_training`].
pub fn read_metrics(out: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(metrics_path(out))?;
    let rows: std::result::Result<Vec<MetricRow>, csv::Error> = r.deserialize().collect();
    Ok(rows?)
}

/// Selection counts per trajectory over `draws` draws (diagnostic for sampling uniformity).
pub fn selection_counts(sampler: &BatchSampler, draws: usize, seed: u64) -> BTreeMap<usize, usize> {
    let mut rng = rng_from(&[seed]);
    let mut counts = BTreeMap::new();
    for _ in 0..draws {
        *counts.entry(sampler.draw_index(&mut rng)).or_insert(0) += 1;
    }
    counts
}
