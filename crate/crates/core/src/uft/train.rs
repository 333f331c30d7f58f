use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::encoder::{EncoderKind, TaskEncoder, TaskEncoderParams};
use super::estimator::{estimate, EstimatorKind, GradientEstimate};
use crate::error::{Error, Result};
use crate::model::IndexedScorer;
use crate::{par, rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub context_size: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub estimator: EstimatorKind,
    pub optimizer: OptimizerKind,
    pub encoder: EncoderKind,
    pub seed: u64,
    /// Abort once any parameter exceeds this magnitude.
    pub max_param_abs: f64,
}

/// Learning rate used for the large-model setting; the toy encoders default
/// to [`TrainConfig::default`]'s `1e-2`.
pub const REMOTE_SCALE_LEARNING_RATE: f64 = 1e-5;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            context_size: 16,
            batch_size: 64,
            iterations: 200,
            learning_rate: 1e-2,
            gamma: 10.0,
            estimator: EstimatorKind::LowVariance,
            optimizer: OptimizerKind::adam(),
            encoder: EncoderKind::Tabular,
            seed: 0,
            max_param_abs: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_instances: usize) -> Result<()> {
        if self.context_size == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParams("context size and batch size must be >= 1".into()));
        }
        if self.context_size > num_instances {
            return Err(Error::ContextTooLarge { n: self.context_size, m: num_instances });
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParams("gamma must be finite and >= 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParams("learning rate must be finite and > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Batch mean of `sum_n J^N_n` plus `gamma * R` on the minibatch prior.
    pub objective: f64,
    /// `gamma * R` on the minibatch prior.
    pub regularizer: f64,
    /// Prior entropy over the whole dataset.
    pub entropy: f64,
    pub accuracy: Option<f64>,
    /// Model evaluations with a non-empty support context in this iteration.
    pub context_terms: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TrainRecord>,
}

impl TrainTrace {
    pub const CSV_HEADER: &'static str = "iteration,objective,regularizer,entropy,accuracy";

    /// Writes `iteration,objective,regularizer,entropy,accuracy`; accuracy is
    /// left empty without gold labels.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.iteration, r.objective, r.regularizer, r.entropy, acc)?;
        }
        Ok(())
    }

    pub fn total_context_terms(&self) -> usize {
        self.records.iter().map(|r| r.context_terms).sum()
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        Optimizer { kind, lr, first: vec![0.0; len], second: vec![0.0; len], step: 0 }
    }

    /// Gradient ascent step.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.step += 1;
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for i in 0..params.len() {
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * grad[i];
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = self.first[i] / c1;
                    let vhat = self.second[i] / c2;
                    params[i] += self.lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// One minibatch gradient of the regularized objective at `params`, without
/// taking a step. Tuple `b` of iteration `t` draws from stream `(seed, t, b)`.
pub struct BatchGradient {
    pub grad: Vec<f64>,
    pub objective: f64,
    pub regularizer: f64,
    pub context_terms: usize,
}

pub fn batch_gradient<S: IndexedScorer + ?Sized>(
    scorer: &S,
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<BatchGradient> {
    let m = scorer.num_instances();
    let n = cfg.context_size;
    let per_tuple = par::try_map_indexed(cfg.batch_size, |b| {
        let mut r = rng::stream(cfg.seed, &[iteration as u64, b as u64]);
        let tuple = rand::seq::index::sample(&mut r, m, n).into_vec();
        estimate(cfg.estimator, scorer, encoder, params, &tuple, &mut r).map(|e| (tuple, e))
    })?;

    let inv_b = 1.0 / cfg.batch_size as f64;
    let mut grad = vec![0.0; params.len()];
    let mut objective = 0.0;
    let mut context_terms = 0;
    let mut batch_members = Vec::with_capacity(cfg.batch_size * n);
    for (tuple, GradientEstimate { grad: g, objective_sample, context_terms: c, .. }) in &per_tuple {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += inv_b * v;
        }
        objective += inv_b * objective_sample;
        context_terms += c;
        batch_members.extend_from_slice(tuple);
    }
    let regularizer = cfg.gamma * encoder.prior_entropy(params, &batch_members);
    if cfg.gamma > 0.0 {
        encoder.accumulate_prior_entropy_grad(params, &batch_members, cfg.gamma, &mut grad);
    }
    Ok(BatchGradient { grad, objective: objective + regularizer, regularizer, context_terms })
}

/// Amortized training loop. `on_iteration` sees the parameters after each
/// update (checkpointing, diagnostics).
pub fn train_uft_with<S, F>(
    scorer: &S,
    encoder: &TaskEncoder,
    gold: Option<&[usize]>,
    cfg: &TrainConfig,
    mut on_iteration: F,
) -> Result<(TaskEncoderParams, TrainTrace)>
where
    S: IndexedScorer + ?Sized,
    F: FnMut(usize, &TaskEncoderParams),
{
    cfg.validate(scorer.num_instances())?;
    let mut params = encoder.init_params(cfg.encoder)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.len());
    let all: Vec<usize> = (0..encoder.num_instances()).collect();
    let mut trace = TrainTrace::default();

    for t in 0..cfg.iterations {
        let step = batch_gradient(scorer, encoder, &params, cfg, t)?;
        if !step.objective.is_finite() || step.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: t, reason: "non-finite objective or gradient".into() });
        }
        opt.ascend(&mut params.values, &step.grad);
        if params.max_abs() > cfg.max_param_abs {
            return Err(Error::Diverged {
                iteration: t,
                reason: format!("|theta|_inf = {:.3e} exceeds {:.1e}", params.max_abs(), cfg.max_param_abs),
            });
        }
        let accuracy = gold.map(|g| {
            let preds = encoder.predictions(&params);
            preds.iter().zip(g).filter(|(p, g)| p == g).count() as f64 / g.len() as f64
        });
        trace.records.push(TrainRecord {
            iteration: t,
            objective: step.objective,
            regularizer: step.regularizer,
            entropy: encoder.prior_entropy(&params, &all),
            accuracy,
            context_terms: step.context_terms,
        });
        on_iteration(t, &params);
    }
    Ok((params, trace))
}

pub fn train_uft<S: IndexedScorer + ?Sized>(
    scorer: &S,
    encoder: &TaskEncoder,
    gold: Option<&[usize]>,
    cfg: &TrainConfig,
) -> Result<(TaskEncoderParams, TrainTrace)> {
    train_uft_with(scorer, encoder, gold, cfg, |_, _| {})
}

/// Per-coordinate sample variance of an estimator, summed over coordinates,
/// from `draws` independent tuples at fixed `params`.
pub fn summed_gradient_variance<S: IndexedScorer + ?Sized>(
    scorer: &S,
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    kind: EstimatorKind,
    context_size: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let m = scorer.num_instances();
    if context_size > m {
        return Err(Error::ContextTooLarge { n: context_size, m });
    }
    if draws < 2 {
        return Err(Error::InvalidParams("variance needs at least 2 draws".into()));
    }
    let grads = par::try_map_indexed(draws, |d| {
        let mut r = rng::stream(seed, &[d as u64]);
        let tuple = rand::seq::index::sample(&mut r, m, context_size).into_vec();
        estimate(kind, scorer, encoder, params, &tuple, &mut r).map(|e| e.grad)
    })?;
    let len = params.len();
    let mut mean = vec![0.0; len];
    for g in &grads {
        for (a, v) in mean.iter_mut().zip(g) {
            *a += v / draws as f64;
        }
    }
    let mut total = 0.0;
    for g in &grads {
        for (v, mu) in g.iter().zip(&mean) {
            total += (v - mu) * (v - mu);
        }
    }
    Ok(total / (draws - 1) as f64)
}

/// Argmax predictions and their accuracy against gold.
pub fn predict_all(encoder: &TaskEncoder, params: &TaskEncoderParams, gold: Option<&[usize]>) -> (Vec<usize>, Option<f64>) {
    let preds = encoder.predictions(params);
    let acc = gold.map(|g| preds.iter().zip(g).filter(|(p, g)| p == g).count() as f64 / g.len() as f64);
    (preds, acc)
}

/// Full-dataset prior entropy as a fraction of `ln K`.
pub fn normalized_prior_entropy(encoder: &TaskEncoder, params: &TaskEncoderParams) -> f64 {
    let all: Vec<usize> = (0..encoder.num_instances()).collect();
    encoder.prior_entropy(params, &all) / (encoder.num_answers() as f64).ln()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_synthetic_task, SyntheticTaskConfig};

    fn task() -> (crate::model::TaskDataset, crate::synthetic::SyntheticModel) {
        generate_synthetic_task(&SyntheticTaskConfig {
            seed: 12,
            num_instances: 10,
            zero_shot_noise: 0.3,
            context_strength: 2.0,
            kernel_bandwidth: 2.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn csv_layout() {
        let trace = TrainTrace {
            records: vec![TrainRecord {
                iteration: 0,
                objective: -0.5,
                regularizer: 6.0,
                entropy: 0.6,
                accuracy: None,
                context_terms: 0,
            }],
        };
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "iteration,objective,regularizer,entropy,accuracy\n0,-0.5,6,0.6,\n");
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, model) = task();
        let scorer = model.scorer(&ds.instances).unwrap();
        let enc = TaskEncoder::new(&scorer, &ds.instances).unwrap();
        let cfg = TrainConfig { context_size: 3, batch_size: 8, iterations: 20, seed: 5, ..Default::default() };
        let a = train_uft(&scorer, &enc, ds.gold.as_deref(), &cfg).unwrap();
        let b = train_uft(&scorer, &enc, ds.gold.as_deref(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.records.len(), 20);
    }

    #[test]
    fn n1_training_never_uses_context() {
        let (ds, model) = task();
        let scorer = model.scorer(&ds.instances).unwrap();
        let enc = TaskEncoder::new(&scorer, &ds.instances).unwrap();
        for estimator in [EstimatorKind::Naive, EstimatorKind::LowVariance] {
            let cfg = TrainConfig { context_size: 1, batch_size: 4, iterations: 10, estimator, ..Default::default() };
            let (_, trace) = train_uft(&scorer, &enc, None, &cfg).unwrap();
            assert_eq!(trace.total_context_terms(), 0);
            assert!(trace.records.iter().all(|r| r.accuracy.is_none()));
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let (ds, model) = task();
        let scorer = model.scorer(&ds.instances).unwrap();
        let enc = TaskEncoder::new(&scorer, &ds.instances).unwrap();
        let cfg = TrainConfig {
            context_size: 2,
            batch_size: 2,
            iterations: 50,
            learning_rate: 1e9,
            optimizer: OptimizerKind::Sgd,
            max_param_abs: 1e6,
            ..Default::default()
        };
        assert!(matches!(train_uft(&scorer, &enc, None, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig { context_size: 11, ..Default::default() };
        assert!(cfg.validate(10).is_err());
        assert!(TrainConfig { gamma: -1.0, ..Default::default() }.validate(100).is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate(100).is_err());
    }
}
