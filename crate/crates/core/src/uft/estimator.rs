//! Score-function gradient estimators for `E_{y ~ tau} sum_n J^N_n(y_1..y_n)`
//! on one ordered tuple, where `J^N_n = (1/N) log p(y_n | x_n, prefix)` with
//! the log-probability renormalized over the answer set.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{TaskEncoder, TaskEncoderParams};
use crate::error::Result;
use crate::math;
use crate::model::{sample_from_probs, IndexedScorer};
use crate::objective::renormalized_scores;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Naive,
    LowVariance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// `sum_n J^N_n` at the sampled answers.
    pub objective_sample: f64,
    /// `sum_n B_n`, the greedy-label control variate (zero for the naive estimator).
    pub baseline_value: f64,
    /// Number of model evaluations that saw a non-empty support context.
    pub context_terms: usize,
}

struct Sampled {
    taus: Vec<Vec<f64>>,
    answers: Vec<usize>,
}

fn sample_answers<R: Rng + ?Sized>(
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    tuple: &[usize],
    rng: &mut R,
) -> Sampled {
    let taus: Vec<Vec<f64>> = tuple.iter().map(|&m| encoder.tau(params, m)).collect();
    let answers = taus.iter().map(|t| sample_from_probs(t, rng)).collect();
    Sampled { taus, answers }
}

/// `e_y - tau`, the gradient of `log tau(y)` with respect to the offsets.
fn score_offsets(tau: &[f64], y: usize, out: &mut [f64]) {
    for (k, (o, t)) in out.iter_mut().zip(tau).enumerate() {
        *o = if k == y { 1.0 - t } else { -t };
    }
}

/// Plain REINFORCE: `sum_n J_n * sum_{j<=n} grad log tau(y_j | x_j)`.
pub fn grad_naive_reinforce<S, R>(
    scorer: &S,
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    tuple: &[usize],
    rng: &mut R,
) -> Result<GradientEstimate>
where
    S: IndexedScorer + ?Sized,
    R: Rng + ?Sized,
{
    let n = tuple.len();
    let k = scorer.num_answers();
    let Sampled { taus, answers } = sample_answers(encoder, params, tuple, rng);

    let mut buf = vec![0.0; k];
    let mut ctx = Vec::with_capacity(n);
    let mut terms = Vec::with_capacity(n);
    for (&m, &y) in tuple.iter().zip(&answers) {
        renormalized_scores(scorer, m, &ctx, &mut buf)?;
        terms.push(buf[y] / n as f64);
        ctx.push((m, y));
    }

    // sum over n >= j of J_n multiplies the score of position j
    let mut grad = vec![0.0; params.len()];
    let mut suffix = 0.0;
    let mut offset_grad = vec![0.0; k];
    for j in (0..n).rev() {
        suffix += terms[j];
        score_offsets(&taus[j], answers[j], &mut offset_grad);
        encoder.accumulate(params, tuple[j], &offset_grad, suffix, &mut grad);
    }

    Ok(GradientEstimate {
        grad,
        objective_sample: terms.iter().sum(),
        baseline_value: 0.0,
        context_terms: n.saturating_sub(1),
    })
}

/// Low-variance estimator. For each position the final answer is
/// marginalized exactly (`J~_n = sum_y J_n(y_<n, y) tau(y | x_n)`), the
/// preceding answers enter through a score-function term with the greedy
/// baseline `B_n = J~_n` evaluated at `y*_j = argmax tau(. | x_j)`, and the
/// explicit `tau(y | x_n)` factor is differentiated pathwise.
pub fn grad_low_variance<S, R>(
    scorer: &S,
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    tuple: &[usize],
    rng: &mut R,
) -> Result<GradientEstimate>
where
    S: IndexedScorer + ?Sized,
    R: Rng + ?Sized,
{
    let n = tuple.len();
    let k = scorer.num_answers();
    let inv_n = 1.0 / n as f64;
    let Sampled { taus, answers } = sample_answers(encoder, params, tuple, rng);
    let greedy: Vec<usize> = taus.iter().map(|t| math::argmax(t)).collect();

    let mut grad = vec![0.0; params.len()];
    let mut sampled_ctx = Vec::with_capacity(n);
    let mut greedy_ctx = Vec::with_capacity(n);
    let mut lp = vec![0.0; k];
    let mut lp_greedy = vec![0.0; k];
    let mut offset_grad = vec![0.0; k];
    // advantage[n] = J~_n - B_n; position j's score is weighted by sum_{n>j} advantage[n]
    let mut advantage = vec![0.0; n];
    let mut objective_sample = 0.0;
    let mut baseline_value = 0.0;
    let mut context_terms = 0;

    for pos in 0..n {
        let m = tuple[pos];
        let tau = &taus[pos];
        renormalized_scores(scorer, m, &sampled_ctx, &mut lp)?;
        let marginal: f64 = lp.iter().zip(tau).map(|(l, t)| l * t).sum::<f64>() * inv_n;
        objective_sample += lp[answers[pos]] * inv_n;

        // pathwise: d/da_k sum_y J(y) tau(y) = tau_k (J(k) - J~)
        for (g, (l, t)) in offset_grad.iter_mut().zip(lp.iter().zip(tau)) {
            *g = t * (l * inv_n - marginal);
        }
        encoder.accumulate(params, m, &offset_grad, 1.0, &mut grad);

        if pos > 0 {
            context_terms += 2;
            renormalized_scores(scorer, m, &greedy_ctx, &mut lp_greedy)?;
            let baseline: f64 = lp_greedy.iter().zip(tau).map(|(l, t)| l * t).sum::<f64>() * inv_n;
            advantage[pos] = marginal - baseline;
            baseline_value += baseline;
        } else {
            baseline_value += marginal;
        }
        sampled_ctx.push((m, answers[pos]));
        greedy_ctx.push((m, greedy[pos]));
    }

    let mut suffix = 0.0;
    for j in (0..n.saturating_sub(1)).rev() {
        suffix += advantage[j + 1];
        score_offsets(&taus[j], answers[j], &mut offset_grad);
        encoder.accumulate(params, tuple[j], &offset_grad, suffix, &mut grad);
    }

    Ok(GradientEstimate { grad, objective_sample, baseline_value, context_terms })
}

pub fn estimate<S, R>(
    kind: EstimatorKind,
    scorer: &S,
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    tuple: &[usize],
    rng: &mut R,
) -> Result<GradientEstimate>
where
    S: IndexedScorer + ?Sized,
    R: Rng + ?Sized,
{
    match kind {
        EstimatorKind::Naive => grad_naive_reinforce(scorer, encoder, params, tuple, rng),
        EstimatorKind::LowVariance => grad_low_variance(scorer, encoder, params, tuple, rng),
    }
}

/// Exact `E_{tuples} E_{y ~ tau} sum_n J^N_n`, i.e. `E_tau J^N`, by
/// enumerating ordered tuples and answer prefixes. Cost grows as
/// `sum_n P(M, n) K^(n-1)`; intended for oracle-scale tasks.
pub fn exact_expected_objective<S: IndexedScorer + ?Sized>(
    scorer: &S,
    encoder: &TaskEncoder,
    params: &TaskEncoderParams,
    n: usize,
) -> Result<f64> {
    let m = scorer.num_instances();
    let taus: Vec<Vec<f64>> = (0..m).map(|i| encoder.tau(params, i)).collect();
    let partials = crate::par::try_map_indexed(m, |first| {
        let mut sums = vec![0.0; n];
        let mut used = vec![false; m];
        let mut ctx = Vec::with_capacity(n);
        expected_walk(scorer, &taus, n, first, 1.0, &mut used, &mut ctx, &mut sums)?;
        Ok::<_, crate::error::Error>(sums)
    })?;
    let mut depth = vec![0.0; n];
    for p in &partials {
        for (d, v) in depth.iter_mut().zip(p) {
            *d += v;
        }
    }
    Ok(depth
        .iter()
        .enumerate()
        .map(|(d, s)| s / math::permutations(m, d + 1) as f64)
        .sum::<f64>()
        / n as f64)
}

#[allow(clippy::too_many_arguments)]
fn expected_walk<S: IndexedScorer + ?Sized>(
    scorer: &S,
    taus: &[Vec<f64>],
    n: usize,
    t: usize,
    weight: f64,
    used: &mut Vec<bool>,
    ctx: &mut Vec<(usize, usize)>,
    sums: &mut [f64],
) -> Result<()> {
    let depth = ctx.len();
    let mut lp = vec![0.0; scorer.num_answers()];
    renormalized_scores(scorer, t, ctx, &mut lp)?;
    sums[depth] += weight * lp.iter().zip(&taus[t]).map(|(l, p)| l * p).sum::<f64>();
    if depth + 1 == n {
        return Ok(());
    }
    used[t] = true;
    for (y, &py) in taus[t].iter().enumerate() {
        if py == 0.0 {
            continue;
        }
        ctx.push((t, y));
        for next in 0..taus.len() {
            if !used[next] {
                expected_walk(scorer, taus, n, next, weight * py, used, ctx, sums)?;
            }
        }
        ctx.pop();
    }
    used[t] = false;
    Ok(())
}
