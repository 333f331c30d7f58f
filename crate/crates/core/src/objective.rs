//! The joint objective `J^N`: the expected per-position average of
//! renormalized log-conditionals over ordered `N`-tuples drawn without
//! replacement from the dataset, each position conditioned on the tuple
//! members (and labels) before it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, permutations};
use crate::model::{ConditionalModel, IndexedScorer, Instance, SupportContext};
use crate::{par, rng};

/// Default cap on the number of ordered tuples enumerated by
/// [`exact_joint_objective`].
pub const DEFAULT_EXACT_CAP: u128 = 200_000;

/// One answer index per dataset instance.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Labeling(pub Vec<usize>);

impl Labeling {
    pub fn new(answers: Vec<usize>) -> Self {
        Labeling(answers)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn validate(&self, num_instances: usize, num_answers: usize) -> Result<()> {
        if self.0.len() != num_instances {
            return Err(Error::LabelingLength { got: self.0.len(), expected: num_instances });
        }
        if let Some(&bad) = self.0.iter().find(|&&y| y >= num_answers) {
            return Err(Error::AnswerOutOfRange { index: bad, num_answers });
        }
        Ok(())
    }
}

impl From<Vec<usize>> for Labeling {
    fn from(v: Vec<usize>) -> Self {
        Labeling(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveEstimate {
    pub value: f64,
    /// Zero exactly when the value was computed by enumeration.
    pub std_error: f64,
    pub num_sequences: u128,
    pub context_size: usize,
}

impl ObjectiveEstimate {
    pub fn is_exact(&self) -> bool {
        self.std_error == 0.0
    }
}

/// Log-probability of `y` after renormalizing the model's answer scores over
/// the answer set. A no-op (up to rounding) for models already normalized
/// over the answers.
pub fn renormalized_log_conditional<M: ConditionalModel + ?Sized>(
    model: &M,
    y: usize,
    x: &Instance,
    ctx: &SupportContext<'_>,
) -> Result<f64> {
    if y >= model.num_answers() {
        return Err(Error::AnswerOutOfRange { index: y, num_answers: model.num_answers() });
    }
    let mut lp = model.answer_log_probs(x, ctx)?;
    math::log_softmax_in_place(&mut lp);
    Ok(lp[y])
}

/// Renormalized log-probabilities of every answer for an indexed query.
pub(crate) fn renormalized_scores<S: IndexedScorer + ?Sized>(
    scorer: &S,
    query: usize,
    ctx: &[(usize, usize)],
    out: &mut [f64],
) -> Result<()> {
    scorer.answer_log_probs(query, ctx, out)?;
    math::log_softmax_in_place(out);
    Ok(())
}

fn check_args<S: IndexedScorer + ?Sized>(scorer: &S, labeling: &Labeling, n: usize) -> Result<()> {
    let m = scorer.num_instances();
    if m == 0 {
        return Err(Error::InvalidDataset("dataset has no instances".into()));
    }
    labeling.validate(m, scorer.num_answers())?;
    if n == 0 {
        return Err(Error::InvalidParams("context size N must be >= 1".into()));
    }
    if n > m {
        return Err(Error::ContextTooLarge { n, m });
    }
    Ok(())
}

/// `(1/N) sum_n log p(y_{t_n} | x_{t_n}, prefix)` for one ordered tuple.
pub fn sequence_value<S: IndexedScorer + ?Sized>(scorer: &S, labels: &[usize], tuple: &[usize]) -> Result<f64> {
    let mut buf = vec![0.0; scorer.num_answers()];
    let mut ctx = Vec::with_capacity(tuple.len());
    let mut total = 0.0;
    for &t in tuple {
        renormalized_scores(scorer, t, &ctx, &mut buf)?;
        total += buf[labels[t]];
        ctx.push((t, labels[t]));
    }
    Ok(total / tuple.len() as f64)
}

/// Monte Carlo estimate of `J^N` from `num_sequences` uniformly drawn ordered
/// tuples. Each sequence draws from its own counter-derived stream, so the
/// estimate is independent of thread scheduling.
pub fn mc_joint_objective<S, R>(
    scorer: &S,
    labeling: &Labeling,
    n: usize,
    num_sequences: usize,
    rng: &mut R,
) -> Result<ObjectiveEstimate>
where
    S: IndexedScorer + ?Sized,
    R: Rng + ?Sized,
{
    check_args(scorer, labeling, n)?;
    if num_sequences == 0 {
        return Err(Error::InvalidParams("num_sequences must be >= 1".into()));
    }
    let base: u64 = rng.random();
    let m = scorer.num_instances();
    let labels = labeling.as_slice();
    let values = par::try_map_indexed(num_sequences, |s| {
        let mut r = rng::stream(base, &[s as u64]);
        let tuple = rand::seq::index::sample(&mut r, m, n).into_vec();
        sequence_value(scorer, labels, &tuple)
    })?;
    let (value, std_error) = math::mean_and_std_error(&values);
    Ok(ObjectiveEstimate { value, std_error, num_sequences: num_sequences as u128, context_size: n })
}

/// Exact `J^N` by enumerating every ordered `N`-tuple without replacement.
///
/// Enumeration is depth-first so each prefix is scored once: position `n`
/// of a tuple only depends on its first `n` members, and under the uniform
/// tuple distribution those form a uniform ordered `n`-tuple. Partial sums
/// are reduced in first-element order.
pub fn exact_joint_objective<S: IndexedScorer + ?Sized>(
    scorer: &S,
    labeling: &Labeling,
    n: usize,
    cap: u128,
) -> Result<ObjectiveEstimate> {
    check_args(scorer, labeling, n)?;
    let m = scorer.num_instances();
    let count = permutations(m, n);
    if count > cap {
        return Err(Error::EnumerationCapExceeded { count, cap });
    }
    let partials = par::try_map_indexed(m, |first| prefix_sums_from(scorer, labeling.as_slice(), n, first))?;
    Ok(ObjectiveEstimate {
        value: combine_prefix_sums(&partials, m, n),
        std_error: 0.0,
        num_sequences: count,
        context_size: n,
    })
}

/// Sequential exact value without cap checks; callers validate first. Produces
/// the same bits as [`exact_joint_objective`].
pub(crate) fn exact_value_sequential<S: IndexedScorer + ?Sized>(scorer: &S, labels: &[usize], n: usize) -> Result<f64> {
    let m = scorer.num_instances();
    let partials = (0..m).map(|first| prefix_sums_from(scorer, labels, n, first)).collect::<Result<Vec<_>>>()?;
    Ok(combine_prefix_sums(&partials, m, n))
}

fn combine_prefix_sums(partials: &[Vec<f64>], m: usize, n: usize) -> f64 {
    let mut depth_sums = vec![0.0; n];
    for p in partials {
        for (acc, v) in depth_sums.iter_mut().zip(p) {
            *acc += v;
        }
    }
    depth_sums
        .iter()
        .enumerate()
        .map(|(d, s)| s / permutations(m, d + 1) as f64)
        .sum::<f64>()
        / n as f64
}

/// Sums of position terms per depth over all prefixes starting with `first`.
fn prefix_sums_from<S: IndexedScorer + ?Sized>(scorer: &S, labels: &[usize], n: usize, first: usize) -> Result<Vec<f64>> {
    struct Walk<'s, S: ?Sized> {
        scorer: &'s S,
        labels: &'s [usize],
        n: usize,
        used: Vec<bool>,
        ctx: Vec<(usize, usize)>,
        buf: Vec<f64>,
        sums: Vec<f64>,
    }

    impl<S: IndexedScorer + ?Sized> Walk<'_, S> {
        fn visit(&mut self, t: usize) -> Result<()> {
            let depth = self.ctx.len();
            renormalized_scores(self.scorer, t, &self.ctx, &mut self.buf)?;
            self.sums[depth] += self.buf[self.labels[t]];
            if depth + 1 < self.n {
                self.used[t] = true;
                self.ctx.push((t, self.labels[t]));
                for next in 0..self.labels.len() {
                    if !self.used[next] {
                        self.visit(next)?;
                    }
                }
                self.ctx.pop();
                self.used[t] = false;
            }
            Ok(())
        }
    }

    let mut walk = Walk {
        scorer,
        labels,
        n,
        used: vec![false; labels.len()],
        ctx: Vec::with_capacity(n),
        buf: vec![0.0; scorer.num_answers()],
        sums: vec![0.0; n],
    };
    walk.visit(first)?;
    Ok(walk.sums)
}

/// Mean zero-shot renormalized log-probability of the labeling over all
/// instances, which is what `J^1` reduces to.
pub fn zero_shot_objective<S: IndexedScorer + ?Sized>(scorer: &S, labeling: &Labeling) -> Result<f64> {
    labeling.validate(scorer.num_instances(), scorer.num_answers())?;
    let mut buf = vec![0.0; scorer.num_answers()];
    let mut total = 0.0;
    for (i, &y) in labeling.as_slice().iter().enumerate() {
        renormalized_scores(scorer, i, &[], &mut buf)?;
        total += buf[y];
    }
    Ok(total / labeling.len() as f64)
}
