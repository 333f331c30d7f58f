//! Exactly-computable in-context learner used as the oracle substrate.
//!
//! Logits are a zero-shot linear term plus a kernel-weighted vote of the
//! support labels:
//!
//! `logit_y = w_y . x + b_y + beta * sum_i rho^(n-1-i) * exp(-|x - x_i|^2 / (2 sigma^2)) * [y_i = y]`
//!
//! followed by a log-softmax over the answers. `sigma = inf` turns the kernel
//! into a constant, so the context term becomes a pure agreement bonus.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, squared_distance};
use crate::model::{AnswerSet, ConditionalModel, IndexedScorer, Instance, SupportContext, TaskDataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModelParams {
    /// `K x d` zero-shot weights.
    pub zero_shot_weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Kernel bandwidth; `+inf` (serialized as `null`) gives a constant kernel.
    #[serde(with = "inf_as_null")]
    pub kernel_bandwidth: f64,
    pub context_strength: f64,
    pub recency_decay: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SyntheticModelParams {
    pub fn num_answers(&self) -> usize {
        self.bias.len()
    }

    pub fn dim(&self) -> usize {
        self.zero_shot_weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.bias.len();
        if k < 2 {
            return Err(Error::InvalidParams("need at least 2 answers".into()));
        }
        if self.zero_shot_weights.len() != k {
            return Err(Error::InvalidParams(format!(
                "{} weight rows for {} answers",
                self.zero_shot_weights.len(),
                k
            )));
        }
        let d = self.dim();
        if d == 0 || self.zero_shot_weights.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidParams("weight rows must share a positive dimension".into()));
        }
        let finite = self.zero_shot_weights.iter().flatten().chain(&self.bias).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("weights and bias must be finite".into()));
        }
        if !(self.kernel_bandwidth > 0.0) || self.kernel_bandwidth.is_nan() {
            return Err(Error::InvalidParams("kernel bandwidth must be > 0".into()));
        }
        if !(self.context_strength >= 0.0 && self.context_strength.is_finite()) {
            return Err(Error::InvalidParams("context strength must be finite and >= 0".into()));
        }
        if !(self.recency_decay > 0.0 && self.recency_decay <= 1.0) {
            return Err(Error::InvalidParams("recency decay must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn kernel_from_sq_dist(&self, sq: f64) -> f64 {
        if self.kernel_bandwidth.is_infinite() {
            1.0
        } else {
            (-sq / (2.0 * self.kernel_bandwidth * self.kernel_bandwidth)).exp()
        }
    }

    fn zero_shot_logits(&self, x: &[f64], out: &mut [f64]) {
        for (o, (w, b)) in out.iter_mut().zip(self.zero_shot_weights.iter().zip(&self.bias)) {
            *o = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub params: SyntheticModelParams,
    pub context_budget: usize,
}

pub const DEFAULT_CONTEXT_BUDGET: usize = 64;

impl SyntheticModel {
    pub fn new(params: SyntheticModelParams) -> Result<Self> {
        params.validate()?;
        Ok(SyntheticModel { params, context_budget: DEFAULT_CONTEXT_BUDGET })
    }

    pub fn with_context_budget(mut self, budget: usize) -> Self {
        self.context_budget = budget;
        self
    }

    fn features<'x>(&self, x: &'x Instance) -> Result<&'x [f64]> {
        let f = x.features().ok_or_else(|| Error::MissingFeatures { id: x.id.clone() })?;
        if f.len() != self.params.dim() {
            return Err(Error::DimensionMismatch { id: x.id.clone(), got: f.len(), expected: self.params.dim() });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { id: x.id.clone() });
        }
        Ok(f)
    }

    /// Builds the cached scorer for a dataset. Kernel values between dataset
    /// instances are precomputed when the dataset is small enough.
    pub fn scorer<'a>(&'a self, instances: &'a [Instance]) -> Result<SyntheticScorer<'a>> {
        SyntheticScorer::new(self, instances)
    }
}

impl ConditionalModel for SyntheticModel {
    fn num_answers(&self) -> usize {
        self.params.num_answers()
    }

    fn context_budget(&self) -> usize {
        self.context_budget
    }

    fn answer_log_probs(&self, x: &Instance, ctx: &SupportContext<'_>) -> Result<Vec<f64>> {
        self.check_context(ctx)?;
        let xf = self.features(x)?;
        let mut logits = vec![0.0; self.num_answers()];
        self.params.zero_shot_logits(xf, &mut logits);
        let n = ctx.len();
        if self.params.context_strength != 0.0 {
            for (i, ex) in ctx.iter().enumerate() {
                let xi = self.features(ex.instance)?;
                let decay = self.params.recency_decay.powi((n - 1 - i) as i32);
                let k = self.params.kernel_from_sq_dist(squared_distance(xf, xi));
                logits[ex.answer] += self.params.context_strength * decay * k;
            }
        }
        math::log_softmax_in_place(&mut logits);
        Ok(logits)
    }
}

/// Largest dataset for which the full kernel matrix is precomputed.
const KERNEL_CACHE_MAX: usize = 2048;

/// Cached [`IndexedScorer`] for the synthetic model: zero-shot logits per
/// instance and (for small datasets) the pairwise kernel matrix.
pub struct SyntheticScorer<'a> {
    model: &'a SyntheticModel,
    instances: &'a [Instance],
    zero_shot: Vec<f64>,
    kernel: Option<Vec<f64>>,
}

impl<'a> SyntheticScorer<'a> {
    fn new(model: &'a SyntheticModel, instances: &'a [Instance]) -> Result<Self> {
        let k = model.num_answers();
        let m = instances.len();
        let feats: Vec<&[f64]> = instances.iter().map(|x| model.features(x)).collect::<Result<_>>()?;
        let mut zero_shot = vec![0.0; m * k];
        for (row, f) in zero_shot.chunks_mut(k).zip(&feats) {
            model.params.zero_shot_logits(f, row);
        }
        let kernel = (m <= KERNEL_CACHE_MAX).then(|| {
            let mut kern = vec![0.0; m * m];
            for i in 0..m {
                for j in 0..m {
                    kern[i * m + j] = model.params.kernel_from_sq_dist(squared_distance(feats[i], feats[j]));
                }
            }
            kern
        });
        Ok(SyntheticScorer { model, instances, zero_shot, kernel })
    }

    fn kernel_at(&self, i: usize, j: usize) -> f64 {
        match &self.kernel {
            Some(k) => k[i * self.instances.len() + j],
            None => {
                let a = self.instances[i].features().unwrap_or_default();
                let b = self.instances[j].features().unwrap_or_default();
                self.model.params.kernel_from_sq_dist(squared_distance(a, b))
            }
        }
    }
}

impl IndexedScorer for SyntheticScorer<'_> {
    fn num_answers(&self) -> usize {
        self.model.num_answers()
    }

    fn num_instances(&self) -> usize {
        self.instances.len()
    }

    fn answer_log_probs(&self, query: usize, ctx: &[(usize, usize)], out: &mut [f64]) -> Result<()> {
        let k = self.num_answers();
        if ctx.len() > self.model.context_budget {
            return Err(Error::ContextBudgetExceeded { len: ctx.len(), budget: self.model.context_budget });
        }
        out.copy_from_slice(&self.zero_shot[query * k..(query + 1) * k]);
        let p = &self.model.params;
        if p.context_strength != 0.0 {
            let n = ctx.len();
            for (i, &(idx, y)) in ctx.iter().enumerate() {
                if y >= k {
                    return Err(Error::AnswerOutOfRange { index: y, num_answers: k });
                }
                let decay = p.recency_decay.powi((n - 1 - i) as i32);
                out[y] += p.context_strength * decay * self.kernel_at(query, idx);
            }
        }
        math::log_softmax_in_place(out);
        Ok(())
    }
}

/// Knobs for [`generate_synthetic_task`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTaskConfig {
    pub seed: u64,
    pub num_instances: usize,
    pub num_answers: usize,
    pub dim: usize,
    /// Perturbation of the zero-shot class centroids, in units of `separation`.
    pub zero_shot_noise: f64,
    #[serde(with = "inf_as_null")]
    pub kernel_bandwidth: f64,
    pub context_strength: f64,
    pub recency_decay: f64,
    /// Distance between neighbouring cluster centers.
    pub separation: f64,
    /// Isotropic standard deviation of instances around their center.
    pub cluster_spread: f64,
    /// Multiplier on the zero-shot logits (inverse temperature).
    pub logit_scale: f64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig {
            seed: 0,
            num_instances: 64,
            num_answers: 2,
            dim: 2,
            zero_shot_noise: 0.0,
            kernel_bandwidth: 1.0,
            context_strength: 0.0,
            recency_decay: 1.0,
            separation: 4.0,
            cluster_spread: 1.0,
            logit_scale: 1.0,
        }
    }
}

/// Draws a clustered task and a synthetic model whose zero-shot term is a
/// nearest-centroid classifier built from noise-perturbed centers.
///
/// Centers sit evenly on a circle in the first two coordinates (on a line
/// when `dim == 1`) with neighbouring centers `separation` apart. Gold labels
/// are balanced (`m mod K`, then shuffled).
pub fn generate_synthetic_task(cfg: &SyntheticTaskConfig) -> Result<(TaskDataset, SyntheticModel)> {
    let (m, k, d) = (cfg.num_instances, cfg.num_answers, cfg.dim);
    if k < 2 {
        return Err(Error::InvalidParams("need at least 2 answers".into()));
    }
    if m < k {
        return Err(Error::InvalidParams(format!("need M >= K, got M={m}, K={k}")));
    }
    if d == 0 {
        return Err(Error::InvalidParams("dimension must be >= 1".into()));
    }
    let positive = [cfg.separation, cfg.cluster_spread, cfg.logit_scale];
    if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidParams("separation, spread and logit scale must be finite and > 0".into()));
    }
    if !(cfg.zero_shot_noise.is_finite() && cfg.zero_shot_noise >= 0.0) {
        return Err(Error::InvalidParams("zero-shot noise must be finite and >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut v = vec![0.0; d];
            if d == 1 {
                v[0] = cfg.separation * (c as f64 - (k - 1) as f64 / 2.0);
            } else {
                let radius = cfg.separation / (2.0 * (std::f64::consts::PI / k as f64).sin());
                let angle = phase + std::f64::consts::TAU * c as f64 / k as f64;
                v[0] = radius * angle.cos();
                v[1] = radius * angle.sin();
            }
            v
        })
        .collect();

    let mut gold: Vec<usize> = (0..m).map(|i| i % k).collect();
    gold.shuffle(&mut rng);
    let instances: Vec<Instance> = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let f = centers[g]
                .iter()
                .map(|c| c + cfg.cluster_spread * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Instance::with_features(format!("x{i:05}"), f)
        })
        .collect();

    let mut weights = Vec::with_capacity(k);
    let mut bias = Vec::with_capacity(k);
    for c in &centers {
        let noisy: Vec<f64> = c
            .iter()
            .map(|v| v + cfg.zero_shot_noise * cfg.separation * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let sq: f64 = noisy.iter().map(|v| v * v).sum();
        bias.push(-0.5 * cfg.logit_scale * sq);
        weights.push(noisy.into_iter().map(|v| cfg.logit_scale * v).collect());
    }

    let params = SyntheticModelParams {
        zero_shot_weights: weights,
        bias,
        kernel_bandwidth: cfg.kernel_bandwidth,
        context_strength: cfg.context_strength,
        recency_decay: cfg.recency_decay,
    };
    let model = SyntheticModel::new(params)?;
    let labels: Vec<String> = (0..k).map(|c| format!("class_{c}")).collect();
    let dataset = TaskDataset::new(instances, AnswerSet::from_labels(&labels)?, Some(gold))?;
    Ok((dataset, model))
}
