//! Causal transformer policy over (x, y, regret-to-go) triplets with a
//! diagonal Gaussian head for the next query point.

mod checkpoint;
mod layers;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::behaviors::AlgoId;
use crate::dataset::AugStep;
use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};
use layers::*;

pub use checkpoint::{Checkpoint, Dtype, OptimState, TrainingMeta, CHECKPOINT_VERSION};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Conditioned on regret-to-go.
    Ribbo,
    /// Behavior cloning: the regret-to-go channel is zeroed.
    Bc,
    /// Behavior cloning with a learned per-algorithm start token.
    AlgoId,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ribbo => "ribbo",
            Variant::Bc => "bc",
            Variant::AlgoId => "algoid",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ribbo" => Ok(Variant::Ribbo),
            "bc" => Ok(Variant::Bc),
            "algoid" | "algo_id" => Ok(Variant::AlgoId),
            _ => Err(Error::invalid(format!("unknown model variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::invalid(format!("unknown model preset `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub x_dim: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    /// Longest token sequence, padding step included.
    pub max_len: usize,
    pub variant: Variant,
    pub min_std: f64,
    pub max_std: f64,
    /// Rows of the start-token table (algo-id variant only).
    pub n_algos: usize,
}

impl ModelConfig {
    pub fn preset(preset: Preset, x_dim: usize, variant: Variant, max_len: usize) -> Self {
        let (embed_dim, n_layers, n_heads, ff_dim) = match preset {
            Preset::Desk => (64, 4, 4, 256),
            Preset::Paper => (256, 12, 8, 1024),
        };
        ModelConfig {
            x_dim,
            embed_dim,
            n_layers,
            n_heads,
            ff_dim,
            dropout: 0.1,
            max_len,
            variant,
            min_std: 1e-4,
            max_std: 1.0,
            n_algos: if variant == Variant::AlgoId {
                AlgoId::ALL.len()
            } else {
                0
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.x_dim == 0 || self.embed_dim == 0 || self.n_heads == 0 || self.ff_dim == 0 {
            return bad("model dimensions must be positive");
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad("embed_dim must be divisible by n_heads");
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.min_std > 0.0 && self.max_std > self.min_std) {
            return bad("need 0 < min_std < max_std");
        }
        if self.variant == Variant::AlgoId && self.n_algos == 0 {
            return bad("algo-id variant needs n_algos > 0");
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.x_dim + 3
    }
}

/// Per-position diagonal Gaussian over the next (unit-cube) query point.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianPrediction {
    /// `-log N(target | mean, diag(std^2))`.
    pub fn nll(&self, target: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.std)
            .zip(target)
            .map(|((m, s), x)| HALF_LN_2PI + s.ln() + (x - m) * (x - m) / (2.0 * s * s))
            .sum()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(&m, &s)| {
                let z: f64 = rand_distr::StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }
}

/// Mean NLL over positions whose mask is set.
pub fn nll_loss(preds: &[GaussianPrediction], targets: &[Vec<f64>], mask: &[bool]) -> Result<f64> {
    if preds.len() != targets.len() || preds.len() != mask.len() {
        return Err(Error::invalid("prediction, target and mask lengths differ"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for ((p, t), &m) in preds.iter().zip(targets).zip(mask) {
        if m {
            total += p.nll(t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::MissingData("no valid loss positions".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Element offset in the flat parameter vector.
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear-layer weight matrices receive weight decay; embeddings, norms and biases do not.
    pub fn decays(&self) -> bool {
        self.name.ends_with(".w")
    }
}

#[derive(Debug, Clone)]
struct LayerIds {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    proj_w: usize,
    proj_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

#[derive(Debug, Clone)]
struct Ids {
    emb1_w: usize,
    emb1_b: usize,
    emb2_w: usize,
    emb2_b: usize,
    pos: usize,
    algo: Option<usize>,
    layers: Vec<LayerIds>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

fn build_layout(cfg: &ModelConfig) -> (Vec<TensorInfo>, Ids, usize) {
    let mut tensors = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, shape: Vec<usize>| {
        let info = TensorInfo {
            name,
            shape,
            offset,
        };
        offset += info.len();
        tensors.push(info);
        tensors.len() - 1
    };
    let (e, f, d) = (cfg.embed_dim, cfg.ff_dim, cfg.x_dim);
    let emb1_w = add("embed.fc1.w".into(), vec![cfg.input_dim(), e]);
    let emb1_b = add("embed.fc1.b".into(), vec![e]);
    let emb2_w = add("embed.fc2.w".into(), vec![e, e]);
    let emb2_b = add("embed.fc2.b".into(), vec![e]);
    let pos = add("embed.pos".into(), vec![cfg.max_len, e]);
    let algo = (cfg.variant == Variant::AlgoId).then(|| add("embed.algo".into(), vec![cfg.n_algos, e]));
    let layers = (0..cfg.n_layers)
        .map(|l| {
            let mut a = |n: &str, shape: Vec<usize>| add(format!("block{l}.{n}"), shape);
            LayerIds {
                ln1_g: a("ln1.g", vec![e]),
                ln1_b: a("ln1.b", vec![e]),
                qkv_w: a("attn.qkv.w", vec![e, 3 * e]),
                qkv_b: a("attn.qkv.b", vec![3 * e]),
                proj_w: a("attn.proj.w", vec![e, e]),
                proj_b: a("attn.proj.b", vec![e]),
                ln2_g: a("ln2.g", vec![e]),
                ln2_b: a("ln2.b", vec![e]),
                ff1_w: a("mlp.fc1.w", vec![e, f]),
                ff1_b: a("mlp.fc1.b", vec![f]),
                ff2_w: a("mlp.fc2.w", vec![f, e]),
                ff2_b: a("mlp.fc2.b", vec![e]),
            }
        })
        .collect();
    let lnf_g = add("ln_f.g".into(), vec![e]);
    let lnf_b = add("ln_f.b".into(), vec![e]);
    let head_w = add("head.w".into(), vec![e, 2 * d]);
    let head_b = add("head.b".into(), vec![2 * d]);
    let ids = Ids {
        emb1_w,
        emb1_b,
        emb2_w,
        emb2_b,
        pos,
        algo,
        layers,
        lnf_g,
        lnf_b,
        head_w,
        head_b,
    };
    (tensors, ids, offset)
}

/// One token sequence: augmented steps starting at any window offset.
#[derive(Debug, Clone, Copy)]
pub struct SeqInput<'a> {
    pub steps: &'a [AugStep],
    /// Algorithm index feeding the start-token table (algo-id variant).
    pub algo: Option<usize>,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2: LnCache,
    c: Array2<f64>,
    f_pre: Array2<f64>,
    f_act: Array2<f64>,
    drop2: Option<Array2<f64>>,
}

struct Cache {
    seqs: Vec<(usize, usize)>,
    positions: Vec<usize>,
    inp: Array2<f64>,
    h_pre: Array2<f64>,
    h: Array2<f64>,
    /// Rows replaced by a start-token embedding: (row, algo index).
    substituted: Vec<(usize, usize)>,
    drop0: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Array2<f64>,
    head: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    tensors: Vec<TensorInfo>,
    ids: Ids,
    params: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.params == other.params
    }
}

fn dropout_mask(shape: (usize, usize), p: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (tensors, ids, total) = build_layout(&cfg);
        let mut model = Model {
            cfg,
            tensors,
            ids,
            params: vec![0.0; total],
        };
        model.init(seed);
        Ok(model)
    }

    /// Builds a model around an existing parameter vector.
    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let (tensors, ids, total) = build_layout(&cfg);
        if params.len() != total {
            return Err(Error::invalid(format!(
                "expected {total} parameters, got {}",
                params.len()
            )));
        }
        Ok(Model {
            cfg,
            tensors,
            ids,
            params,
        })
    }

    fn init(&mut self, seed: u64) {
        let mut rng = rng_from(&[seed, 0x1417]);
        let resid = 1.0 / (2.0 * self.cfg.n_layers.max(1) as f64).sqrt();
        let (ln_lo, ln_hi) = (self.cfg.min_std.ln(), self.cfg.max_std.ln());
        // Initial std of about 0.3 (clamped into the admissible range).
        let frac = ((0.3f64.ln() - ln_lo) / (ln_hi - ln_lo)).clamp(0.05, 0.95);
        let std_bias = (frac / (1.0 - frac)).ln();
        let d = self.cfg.x_dim;
        for t in self.tensors.clone() {
            let p = &mut self.params[t.offset..t.offset + t.len()];
            let name = t.name.as_str();
            let normal = |sd: f64, rng: &mut Rng, p: &mut [f64]| {
                let n = Normal::new(0.0, sd).unwrap();
                p.iter_mut().for_each(|v| *v = n.sample(rng));
            };
            if name.ends_with(".g") {
                p.fill(1.0);
            } else if name == "head.b" {
                p[..d].fill(0.5);
                p[d..].fill(std_bias);
            } else if name == "head.w" {
                normal(0.1 / (t.shape[0] as f64).sqrt(), &mut rng, p);
            } else if name.ends_with(".w") {
                let mut sd = 1.0 / (t.shape[0] as f64).sqrt();
                if name.ends_with("proj.w") || name.ends_with("mlp.fc2.w") {
                    sd *= resid;
                }
                normal(sd, &mut rng, p);
            } else if name == "embed.pos" {
                normal(0.1, &mut rng, p);
            } else if name == "embed.algo" {
                normal(1.0, &mut rng, p);
            } else {
                p.fill(0.0);
            }
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn v1(&self, id: usize) -> ArrayView1<'_, f64> {
        let t = &self.tensors[id];
        ArrayView1::from(&self.params[t.offset..t.offset + t.len()])
    }

    fn v2(&self, id: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[id];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &self.params[t.offset..t.offset + t.len()])
            .unwrap()
    }

    fn g1<'g>(&self, grads: &'g mut [f64], id: usize) -> ArrayViewMut1<'g, f64> {
        let t = &self.tensors[id];
        ArrayViewMut1::from(&mut grads[t.offset..t.offset + t.len()])
    }

    fn g2<'g>(&self, grads: &'g mut [f64], id: usize) -> ArrayViewMut2<'g, f64> {
        let t = &self.tensors[id];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut grads[t.offset..t.offset + t.len()])
            .unwrap()
    }

    fn acc(&self, grads: &mut [f64], id: usize, v: &Array1<f64>) {
        let mut g = self.g1(grads, id);
        g += v;
    }

    fn input_row(&self, x: &[f64], y: f64, rtg: f64, pad: bool) -> Result<Vec<f64>> {
        if x.len() != self.cfg.x_dim {
            return Err(Error::invalid(format!(
                "point has dimension {}, model expects {}",
                x.len(),
                self.cfg.x_dim
            )));
        }
        if !(y.is_finite() && rtg.is_finite() && x.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("non-finite model input"));
        }
        let mut row = x.to_vec();
        row.push(y);
        row.push(if self.cfg.variant == Variant::Ribbo { rtg } else { 0.0 });
        row.push(if pad { 1.0 } else { 0.0 });
        Ok(row)
    }

    /// Two-layer MLP embedding of one `(x, y, rtg, is_pad)` triplet.
    pub fn embed_triplet(&self, x: &[f64], y: f64, rtg: f64, pad: bool) -> Result<Vec<f64>> {
        let row = self.input_row(x, y, rtg, pad)?;
        let inp = Array2::from_shape_vec((1, row.len()), row).unwrap();
        let i = &self.ids;
        let h = linear(&inp, self.v2(i.emb1_w), self.v1(i.emb1_b)).mapv(gelu);
        Ok(linear(&h, self.v2(i.emb2_w), self.v1(i.emb2_b)).row(0).to_vec())
    }

    /// Learned start token of algorithm `algo` (algo-id variant only).
    pub fn algo_id_prefix(&self, algo: usize) -> Result<Vec<f64>> {
        let id = self
            .ids
            .algo
            .ok_or_else(|| Error::invalid("start tokens exist only in the algo-id variant"))?;
        if algo >= self.cfg.n_algos {
            return Err(Error::invalid(format!("algorithm index {algo} out of range")));
        }
        Ok(self.v2(id).row(algo).to_vec())
    }

    fn forward_cache(&self, batch: &[SeqInput<'_>], mut rng: Option<&mut Rng>) -> Result<Cache> {
        let cfg = &self.cfg;
        let (e, heads) = (cfg.embed_dim, cfg.n_heads);
        let mut seqs = Vec::with_capacity(batch.len());
        let mut rows = Vec::new();
        let mut positions = Vec::new();
        let mut substituted = Vec::new();
        for seq in batch {
            let l = seq.steps.len();
            if l == 0 || l > cfg.max_len {
                return Err(Error::invalid(format!(
                    "sequence length {l} outside 1..={}",
                    cfg.max_len
                )));
            }
            let o = positions.len();
            seqs.push((o, l));
            for (t, s) in seq.steps.iter().enumerate() {
                rows.extend(self.input_row(&s.x, s.y, s.rtg, s.pad)?);
                positions.push(t);
                if s.pad && cfg.variant == Variant::AlgoId {
                    let a = seq
                        .algo
                        .ok_or_else(|| Error::invalid("algo-id variant needs an algorithm index"))?;
                    if a >= cfg.n_algos {
                        return Err(Error::invalid(format!("algorithm index {a} out of range")));
                    }
                    substituted.push((o + t, a));
                }
            }
        }
        let n = positions.len();
        if n == 0 {
            return Err(Error::invalid("empty batch"));
        }
        let train = cfg.dropout > 0.0 && rng.is_some();
        let ids = &self.ids;
        let inp = Array2::from_shape_vec((n, cfg.input_dim()), rows).unwrap();
        let h_pre = linear(&inp, self.v2(ids.emb1_w), self.v1(ids.emb1_b));
        let h = h_pre.mapv(gelu);
        let mut x = linear(&h, self.v2(ids.emb2_w), self.v1(ids.emb2_b));
        if let Some(a) = ids.algo {
            let table = self.v2(a);
            for &(r, k) in &substituted {
                x.row_mut(r).assign(&table.row(k));
            }
        }
        let pos = self.v2(ids.pos);
        for (r, &t) in positions.iter().enumerate() {
            let mut row = x.row_mut(r);
            row += &pos.row(t);
        }
        let drop = |x: &mut Array2<f64>, rng: &mut Option<&mut Rng>| {
            if train {
                let m = dropout_mask(x.dim(), cfg.dropout, rng.as_deref_mut().unwrap());
                *x *= &m;
                Some(m)
            } else {
                None
            }
        };
        let drop0 = drop(&mut x, &mut rng);
        let mut layer_caches = Vec::with_capacity(cfg.n_layers);
        for li in &ids.layers {
            let (a, ln1) = layer_norm(&x, self.v1(li.ln1_g), self.v1(li.ln1_b));
            let qkv = linear(&a, self.v2(li.qkv_w), self.v1(li.qkv_b));
            let (ctx, probs) = attention(&qkv, &seqs, e, heads);
            let mut att = linear(&ctx, self.v2(li.proj_w), self.v1(li.proj_b));
            let drop1 = drop(&mut att, &mut rng);
            let mid = &x + &att;
            let (c, ln2) = layer_norm(&mid, self.v1(li.ln2_g), self.v1(li.ln2_b));
            let f_pre = linear(&c, self.v2(li.ff1_w), self.v1(li.ff1_b));
            let f_act = f_pre.mapv(gelu);
            let mut ff = linear(&f_act, self.v2(li.ff2_w), self.v1(li.ff2_b));
            let drop2 = drop(&mut ff, &mut rng);
            let out = &mid + &ff;
            x = out;
            layer_caches.push(LayerCache {
                ln1,
                a,
                qkv,
                probs,
                ctx,
                drop1,
                ln2,
                c,
                f_pre,
                f_act,
                drop2,
            });
        }
        let (z, lnf) = layer_norm(&x, self.v1(ids.lnf_g), self.v1(ids.lnf_b));
        let head = linear(&z, self.v2(ids.head_w), self.v1(ids.head_b));
        Ok(Cache {
            seqs,
            positions,
            inp,
            h_pre,
            h,
            substituted,
            drop0,
            layers: layer_caches,
            lnf,
            z,
            head,
        })
    }

    fn std_bounds(&self) -> (f64, f64) {
        (self.cfg.min_std.ln(), self.cfg.max_std.ln())
    }

    fn predictions(&self, cache: &Cache) -> Vec<Vec<GaussianPrediction>> {
        let d = self.cfg.x_dim;
        let (lo, hi) = self.std_bounds();
        cache
            .seqs
            .iter()
            .map(|&(o, l)| {
                (o..o + l)
                    .map(|r| {
                        let row = cache.head.row(r);
                        GaussianPrediction {
                            mean: row.slice(s![..d]).to_vec(),
                            std: row
                                .slice(s![d..])
                                .iter()
                                .map(|&p| (lo + (hi - lo) * sigmoid(p)).exp().max(self.cfg.min_std))
                                .collect(),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Predictions for every position of every sequence. Dropout is active only when `rng` is given.
    pub fn forward_batch(
        &self,
        batch: &[SeqInput<'_>],
        rng: Option<&mut Rng>,
    ) -> Result<Vec<Vec<GaussianPrediction>>> {
        let cache = self.forward_cache(batch, rng)?;
        Ok(self.predictions(&cache))
    }

    /// Deterministic forward pass of one sequence.
    pub fn forward(&self, steps: &[AugStep], algo: Option<usize>) -> Result<Vec<GaussianPrediction>> {
        Ok(self
            .forward_batch(&[SeqInput { steps, algo }], None)?
            .pop()
            .unwrap())
    }

    /// Next-step NLL over a batch and its gradient. Position `t` is scored against
    /// the point of step `t + 1`; padding steps are never targets.
    pub fn loss_and_grad(
        &self,
        batch: &[SeqInput<'_>],
        rng: Option<&mut Rng>,
    ) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward_cache(batch, rng)?;
        let d = self.cfg.x_dim;
        let (lo, hi) = self.std_bounds();
        let mut dhead = Array2::zeros(cache.head.dim());
        let mut total = 0.0;
        let mut count = 0usize;
        for (seq, &(o, l)) in batch.iter().zip(&cache.seqs) {
            for t in 0..l.saturating_sub(1) {
                let target = &seq.steps[t + 1];
                if target.pad {
                    continue;
                }
                count += 1;
                let r = o + t;
                for j in 0..d {
                    let mu = cache.head[[r, j]];
                    let sg = sigmoid(cache.head[[r, d + j]]);
                    let ln_s = lo + (hi - lo) * sg;
                    let inv_var = (-2.0 * ln_s).exp();
                    let diff = target.x[j] - mu;
                    total += HALF_LN_2PI + ln_s + 0.5 * diff * diff * inv_var;
                    dhead[[r, j]] = -diff * inv_var;
                    dhead[[r, d + j]] = (1.0 - diff * diff * inv_var) * (hi - lo) * sg * (1.0 - sg);
                }
            }
        }
        if count == 0 {
            return Err(Error::MissingData("batch has no prediction targets".into()));
        }
        let scale = 1.0 / count as f64;
        dhead *= scale;
        let grads = self.backward(&cache, &dhead);
        Ok((total * scale, grads))
    }

    fn backward(&self, cache: &Cache, dhead: &Array2<f64>) -> Vec<f64> {
        let cfg = &self.cfg;
        let ids = &self.ids;
        let mut g = vec![0.0; self.params.len()];

        let (dz, gb) = linear_backward(&cache.z, self.v2(ids.head_w), dhead, self.g2(&mut g, ids.head_w));
        self.acc(&mut g, ids.head_b, &gb);
        let (mut dx, gb) = layer_norm_backward(&dz, &cache.lnf, self.v1(ids.lnf_g), self.g1(&mut g, ids.lnf_g));
        self.acc(&mut g, ids.lnf_b, &gb);

        for (li, lc) in ids.layers.iter().zip(&cache.layers).rev() {
            // out = mid + drop2 * ff(ln2(mid))
            let mut dff = dx.clone();
            if let Some(m) = &lc.drop2 {
                dff *= m;
            }
            let (dact, gb) = linear_backward(&lc.f_act, self.v2(li.ff2_w), &dff, self.g2(&mut g, li.ff2_w));
            self.acc(&mut g, li.ff2_b, &gb);
            let mut dpre = dact;
            dpre.zip_mut_with(&lc.f_pre, |d, &p| *d *= gelu_grad(p));
            let (dc, gb) = linear_backward(&lc.c, self.v2(li.ff1_w), &dpre, self.g2(&mut g, li.ff1_w));
            self.acc(&mut g, li.ff1_b, &gb);
            let (dmid, gb) = layer_norm_backward(&dc, &lc.ln2, self.v1(li.ln2_g), self.g1(&mut g, li.ln2_g));
            self.acc(&mut g, li.ln2_b, &gb);
            dx += &dmid;

            // mid = input + drop1 * proj(attn(ln1(input)))
            let mut datt = dx.clone();
            if let Some(m) = &lc.drop1 {
                datt *= m;
            }
            let (dctx, gb) = linear_backward(&lc.ctx, self.v2(li.proj_w), &datt, self.g2(&mut g, li.proj_w));
            self.acc(&mut g, li.proj_b, &gb);
            let dqkv = attention_backward(&dctx, &lc.qkv, &lc.probs, &cache.seqs, cfg.embed_dim, cfg.n_heads);
            let (da, gb) = linear_backward(&lc.a, self.v2(li.qkv_w), &dqkv, self.g2(&mut g, li.qkv_w));
            self.acc(&mut g, li.qkv_b, &gb);
            let (dinp, gb) = layer_norm_backward(&da, &lc.ln1, self.v1(li.ln1_g), self.g1(&mut g, li.ln1_g));
            self.acc(&mut g, li.ln1_b, &gb);
            dx += &dinp;
        }

        if let Some(m) = &cache.drop0 {
            dx *= m;
        }
        {
            let mut gpos = self.g2(&mut g, ids.pos);
            for (r, &t) in cache.positions.iter().enumerate() {
                let mut row = gpos.row_mut(t);
                row += &dx.row(r);
            }
        }
        if let Some(a) = ids.algo {
            let mut gt = self.g2(&mut g, a);
            for &(r, k) in &cache.substituted {
                let mut row = gt.row_mut(k);
                row += &dx.row(r);
                dx.row_mut(r).fill(0.0);
            }
        }
        let (dh, gb) = linear_backward(&cache.h, self.v2(ids.emb2_w), &dx, self.g2(&mut g, ids.emb2_w));
        self.acc(&mut g, ids.emb2_b, &gb);
        let mut dh_pre = dh;
        dh_pre.zip_mut_with(&cache.h_pre, |d, &p| *d *= gelu_grad(p));
        let (_, gb) = linear_backward(&cache.inp, self.v2(ids.emb1_w), &dh_pre, self.g2(&mut g, ids.emb1_w));
        self.acc(&mut g, ids.emb1_b, &gb);
        g
    }
}
