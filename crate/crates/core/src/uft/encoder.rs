use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::model::{ConditionalModel, IndexedScorer, Instance, SupportContext};
use crate::objective::renormalized_scores;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// One row of `K` logit offsets per dataset instance.
    Tabular,
    /// `K x d` weights plus `K` biases applied to instance features.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderLayout {
    Tabular { num_instances: usize, num_answers: usize },
    Linear { num_answers: usize, dim: usize },
}

/// Parameters of the task encoder: additive offsets on top of the frozen
/// zero-shot logits. `values` is laid out row-major (`M x K` for tabular,
/// `K x d` weights followed by `K` biases for linear).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEncoderParams {
    pub layout: EncoderLayout,
    pub values: Vec<f64>,
}

impl TaskEncoderParams {
    pub fn zeros(layout: EncoderLayout) -> Self {
        let len = match layout {
            EncoderLayout::Tabular { num_instances, num_answers } => num_instances * num_answers,
            EncoderLayout::Linear { num_answers, dim } => num_answers * dim + num_answers,
        };
        TaskEncoderParams { layout, values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn num_answers(&self) -> usize {
        match self.layout {
            EncoderLayout::Tabular { num_answers, .. } | EncoderLayout::Linear { num_answers, .. } => num_answers,
        }
    }

    fn offsets_from_features(&self, features: &[f64], out: &mut [f64]) {
        if let EncoderLayout::Linear { num_answers, dim } = self.layout {
            let (w, b) = self.values.split_at(num_answers * dim);
            for (k, o) in out.iter_mut().enumerate() {
                *o = w[k * dim..(k + 1) * dim].iter().zip(features).map(|(a, x)| a * x).sum::<f64>() + b[k];
            }
        }
    }
}

/// Frozen per-instance data the encoder needs: the renormalized zero-shot
/// log-probabilities and, for the linear layout, the features.
#[derive(Clone, Debug)]
pub struct TaskEncoder {
    num_instances: usize,
    num_answers: usize,
    zero_shot: Vec<f64>,
    features: Vec<Option<Vec<f64>>>,
}

impl TaskEncoder {
    pub fn new<S: IndexedScorer + ?Sized>(scorer: &S, instances: &[Instance]) -> Result<Self> {
        let m = scorer.num_instances();
        let k = scorer.num_answers();
        if m == 0 {
            return Err(Error::InvalidDataset("dataset has no instances".into()));
        }
        if instances.len() != m {
            return Err(Error::InvalidDataset(format!("{} instances for a scorer over {m}", instances.len())));
        }
        let mut zero_shot = vec![0.0; m * k];
        for (i, row) in zero_shot.chunks_mut(k).enumerate() {
            renormalized_scores(scorer, i, &[], row)?;
        }
        let features = instances.iter().map(|x| x.features().map(<[f64]>::to_vec)).collect();
        Ok(TaskEncoder { num_instances: m, num_answers: k, zero_shot, features })
    }

    pub fn num_instances(&self) -> usize {
        self.num_instances
    }

    pub fn num_answers(&self) -> usize {
        self.num_answers
    }

    /// Zero offsets, so the encoder starts at the zero-shot distribution.
    pub fn init_params(&self, kind: EncoderKind) -> Result<TaskEncoderParams> {
        let layout = match kind {
            EncoderKind::Tabular => {
                EncoderLayout::Tabular { num_instances: self.num_instances, num_answers: self.num_answers }
            }
            EncoderKind::Linear => {
                let dim = self.features[0]
                    .as_ref()
                    .map(Vec::len)
                    .ok_or_else(|| Error::NonConformalParams("linear encoder needs feature vectors".into()))?;
                if self.features.iter().any(|f| f.as_ref().map(Vec::len) != Some(dim)) {
                    return Err(Error::NonConformalParams("instances disagree on feature dimension".into()));
                }
                EncoderLayout::Linear { num_answers: self.num_answers, dim }
            }
        };
        Ok(TaskEncoderParams::zeros(layout))
    }

    pub fn check(&self, params: &TaskEncoderParams) -> Result<()> {
        let ok = match params.layout {
            EncoderLayout::Tabular { num_instances, num_answers } => {
                num_instances == self.num_instances && num_answers == self.num_answers
            }
            EncoderLayout::Linear { num_answers, dim } => {
                num_answers == self.num_answers
                    && self.features.iter().all(|f| f.as_ref().map(Vec::len) == Some(dim))
            }
        };
        if ok && params.values.len() == TaskEncoderParams::zeros(params.layout).len() {
            Ok(())
        } else {
            Err(Error::NonConformalParams(format!(
                "{:?} does not fit {} instances x {} answers",
                params.layout, self.num_instances, self.num_answers
            )))
        }
    }

    /// Renormalized zero-shot log-probabilities of instance `m`.
    pub fn zero_shot(&self, m: usize) -> &[f64] {
        &self.zero_shot[m * self.num_answers..(m + 1) * self.num_answers]
    }

    fn offsets(&self, params: &TaskEncoderParams, m: usize, out: &mut [f64]) {
        match params.layout {
            EncoderLayout::Tabular { num_answers, .. } => {
                out.copy_from_slice(&params.values[m * num_answers..(m + 1) * num_answers])
            }
            EncoderLayout::Linear { .. } => {
                params.offsets_from_features(self.features[m].as_deref().unwrap_or_default(), out)
            }
        }
    }

    /// `tau(. | x_m)`: softmax of zero-shot log-probabilities plus offsets.
    pub fn tau(&self, params: &TaskEncoderParams, m: usize) -> Vec<f64> {
        let mut logits = vec![0.0; self.num_answers];
        self.offsets(params, m, &mut logits);
        for (l, z) in logits.iter_mut().zip(self.zero_shot(m)) {
            *l += z;
        }
        math::softmax(&logits)
    }

    pub fn predict(&self, params: &TaskEncoderParams, m: usize) -> usize {
        math::argmax(&self.tau(params, m))
    }

    pub fn predictions(&self, params: &TaskEncoderParams) -> Vec<usize> {
        (0..self.num_instances).map(|m| self.predict(params, m)).collect()
    }

    /// Adds `scale * d/dtheta` of a quantity whose gradient with respect to the
    /// offsets of instance `m` is `offset_grad`.
    pub fn accumulate(&self, params: &TaskEncoderParams, m: usize, offset_grad: &[f64], scale: f64, grad: &mut [f64]) {
        match params.layout {
            EncoderLayout::Tabular { num_answers, .. } => {
                for (g, d) in grad[m * num_answers..(m + 1) * num_answers].iter_mut().zip(offset_grad) {
                    *g += scale * d;
                }
            }
            EncoderLayout::Linear { num_answers, dim } => {
                let x = self.features[m].as_deref().unwrap_or_default();
                let (gw, gb) = grad.split_at_mut(num_answers * dim);
                for k in 0..num_answers {
                    let s = scale * offset_grad[k];
                    for (g, xi) in gw[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                        *g += s * xi;
                    }
                    gb[k] += s;
                }
            }
        }
    }

    /// Mean of `tau` over `batch` (instance indices, repeats allowed).
    pub fn prior(&self, params: &TaskEncoderParams, batch: &[usize]) -> Vec<f64> {
        let mut prior = vec![0.0; self.num_answers];
        for &m in batch {
            for (p, t) in prior.iter_mut().zip(self.tau(params, m)) {
                *p += t;
            }
        }
        prior.iter_mut().for_each(|p| *p /= batch.len() as f64);
        prior
    }

    /// Entropy of the batch-mean answer distribution, in `[0, ln K]`.
    pub fn prior_entropy(&self, params: &TaskEncoderParams, batch: &[usize]) -> f64 {
        math::entropy(&self.prior(params, batch))
    }

    /// Adds `scale * grad_theta R` for the batch prior entropy `R`.
    ///
    /// With `p` the batch prior and `tau_i` the encoder output at batch member
    /// `i`, `dR/da_{i,j} = tau_{i,j} (sum_k tau_{i,k} ln p_k - ln p_j) / |batch|`.
    pub fn accumulate_prior_entropy_grad(&self, params: &TaskEncoderParams, batch: &[usize], scale: f64, grad: &mut [f64]) {
        let prior = self.prior(params, batch);
        let log_prior: Vec<f64> = prior.iter().map(|p| p.max(f64::MIN_POSITIVE).ln()).collect();
        let inv = 1.0 / batch.len() as f64;
        let mut offset_grad = vec![0.0; self.num_answers];
        for &m in batch {
            let tau = self.tau(params, m);
            let mix: f64 = tau.iter().zip(&log_prior).map(|(t, l)| t * l).sum();
            for (g, (t, l)) in offset_grad.iter_mut().zip(tau.iter().zip(&log_prior)) {
                *g = inv * t * (mix - l);
            }
            self.accumulate(params, m, &offset_grad, scale, grad);
        }
    }
}

/// `tau(. | x)` for an arbitrary instance under a linear encoder, scoring the
/// zero-shot term with the model directly.
pub fn tau_for_instance<M: ConditionalModel + ?Sized>(
    params: &TaskEncoderParams,
    model: &M,
    x: &Instance,
) -> Result<Vec<f64>> {
    let EncoderLayout::Linear { num_answers, dim } = params.layout else {
        return Err(Error::NonConformalParams("tabular parameters only cover their own dataset".into()));
    };
    let features = x.features().ok_or_else(|| Error::MissingFeatures { id: x.id.clone() })?;
    if features.len() != dim || num_answers != model.num_answers() {
        return Err(Error::NonConformalParams(format!("linear encoder expects dim {dim}, K {num_answers}")));
    }
    let mut logits = model.answer_log_probs(x, &SupportContext::empty())?;
    math::log_softmax_in_place(&mut logits);
    let mut off = vec![0.0; num_answers];
    params.offsets_from_features(features, &mut off);
    for (l, o) in logits.iter_mut().zip(off) {
        *l += o;
    }
    Ok(math::softmax(&logits))
}
