//! The frozen conditional model abstraction and the task data it operates on.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// One plausible answer. `tokens` is only consulted by the multi-token scorers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
}

impl Answer {
    pub fn new(label: impl Into<String>) -> Self {
        Answer { label: label.into(), tokens: None }
    }
}

/// The ordered set of `K >= 2` distinct answers. Order is fixed for the
/// lifetime of a task: every tie-break in the crate resolves to the lowest index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Answer>", into = "Vec<Answer>")]
pub struct AnswerSet {
    answers: Vec<Answer>,
}

impl AnswerSet {
    pub fn new(answers: Vec<Answer>) -> Result<Self> {
        if answers.len() < 2 {
            return Err(Error::InvalidAnswerSet(format!(
                "need at least 2 answers, got {}",
                answers.len()
            )));
        }
        for (i, a) in answers.iter().enumerate() {
            if answers[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::InvalidAnswerSet(format!("duplicate answer `{}`", a.label)));
            }
        }
        Ok(AnswerSet { answers })
    }

    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        Self::new(labels.iter().map(|s| Answer::new(s.as_ref())).collect())
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Answer> {
        self.answers.get(index)
    }

    pub fn label(&self, index: usize) -> &str {
        &self.answers[index].label
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.answers.iter().map(|a| a.label.as_str())
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.answers.iter().position(|a| a.label == label)
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }

    pub fn check_index(&self, index: usize) -> Result<()> {
        if index < self.len() {
            Ok(())
        } else {
            Err(Error::AnswerOutOfRange { index, num_answers: self.len() })
        }
    }
}

impl TryFrom<Vec<Answer>> for AnswerSet {
    type Error = Error;
    fn try_from(v: Vec<Answer>) -> Result<Self> {
        AnswerSet::new(v)
    }
}

impl From<AnswerSet> for Vec<Answer> {
    fn from(s: AnswerSet) -> Self {
        s.answers
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Features(Vec<f64>),
    Text(String),
}

/// A task instance: a feature vector on the synthetic path or a text on the
/// remote path, never both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    #[serde(flatten)]
    pub payload: Payload,
}

impl Instance {
    pub fn with_features(id: impl Into<String>, features: Vec<f64>) -> Self {
        Instance { id: id.into(), payload: Payload::Features(features) }
    }

    pub fn with_text(id: impl Into<String>, text: impl Into<String>) -> Self {
        Instance { id: id.into(), payload: Payload::Text(text.into()) }
    }

    pub fn features(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Features(f) => Some(f),
            Payload::Text(_) => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match &self.payload {
            Payload::Text(t) => Some(t),
            Payload::Features(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Payload::Features(f) = &self.payload {
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFeature { id: self.id.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SupportExample<'a> {
    pub instance: &'a Instance,
    pub answer: usize,
}

/// Ordered support examples, rendered/consumed left to right.
#[derive(Clone, Debug, Default)]
pub struct SupportContext<'a> {
    examples: Vec<SupportExample<'a>>,
}

impl<'a> SupportContext<'a> {
    pub fn empty() -> Self {
        SupportContext { examples: Vec::new() }
    }

    pub fn with_capacity(n: usize) -> Self {
        SupportContext { examples: Vec::with_capacity(n) }
    }

    pub fn push(&mut self, instance: &'a Instance, answer: usize) {
        self.examples.push(SupportExample { instance, answer });
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[SupportExample<'a>] {
        &self.examples
    }

    pub fn iter(&self) -> impl Iterator<Item = &SupportExample<'a>> {
        self.examples.iter()
    }
}

impl<'a> FromIterator<(&'a Instance, usize)> for SupportContext<'a> {
    fn from_iter<I: IntoIterator<Item = (&'a Instance, usize)>>(iter: I) -> Self {
        SupportContext {
            examples: iter.into_iter().map(|(instance, answer)| SupportExample { instance, answer }).collect(),
        }
    }
}

/// Instances to label, the answer set, and gold labels that are only ever
/// used for evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub instances: Vec<Instance>,
    pub answer_set: AnswerSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<Vec<usize>>,
}

impl TaskDataset {
    pub fn new(instances: Vec<Instance>, answer_set: AnswerSet, gold: Option<Vec<usize>>) -> Result<Self> {
        let ds = TaskDataset { instances, answer_set, gold };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() {
            return Err(Error::InvalidDataset("dataset has no instances".into()));
        }
        let mut ids: Vec<&str> = self.instances.iter().map(|x| x.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidDataset(format!("duplicate instance id `{}`", w[0])));
        }
        for x in &self.instances {
            x.validate()?;
        }
        if let Some(gold) = &self.gold {
            if gold.len() != self.instances.len() {
                return Err(Error::InvalidDataset(format!(
                    "gold has {} entries for {} instances",
                    gold.len(),
                    self.instances.len()
                )));
            }
            for &g in gold {
                self.answer_set.check_index(g)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn num_answers(&self) -> usize {
        self.answer_set.len()
    }

    /// Fraction of `labels` matching gold, or `None` without gold.
    pub fn accuracy(&self, labels: &[usize]) -> Option<f64> {
        let gold = self.gold.as_ref()?;
        let hits = gold.iter().zip(labels).filter(|(g, y)| g == y).count();
        Some(hits as f64 / gold.len() as f64)
    }
}

/// A frozen conditional model `p(y | x, support context)` over a fixed answer set.
pub trait ConditionalModel: Send + Sync {
    fn num_answers(&self) -> usize;

    /// Maximum number of support examples accepted.
    fn context_budget(&self) -> usize {
        usize::MAX
    }

    /// Log-probabilities of every answer, in answer order. They need not sum
    /// to one over the answer set (a token-level model leaks mass to other
    /// tokens); callers that need a distribution over the answers renormalize.
    fn answer_log_probs(&self, x: &Instance, ctx: &SupportContext<'_>) -> Result<Vec<f64>>;

    fn log_conditional(&self, y: usize, x: &Instance, ctx: &SupportContext<'_>) -> Result<f64> {
        if y >= self.num_answers() {
            return Err(Error::AnswerOutOfRange { index: y, num_answers: self.num_answers() });
        }
        Ok(self.answer_log_probs(x, ctx)?[y])
    }

    /// Categorical draw restricted to the answer set.
    fn sample_answer<R: Rng + ?Sized>(&self, x: &Instance, ctx: &SupportContext<'_>, rng: &mut R) -> Result<usize>
    where
        Self: Sized,
    {
        let lp = self.answer_log_probs(x, ctx)?;
        Ok(sample_from_log_probs(&lp, rng))
    }

    /// Checks the shared preconditions: context budget and answer ranges.
    fn check_context(&self, ctx: &SupportContext<'_>) -> Result<()> {
        if ctx.len() > self.context_budget() {
            return Err(Error::ContextBudgetExceeded { len: ctx.len(), budget: self.context_budget() });
        }
        for ex in ctx.iter() {
            if ex.answer >= self.num_answers() {
                return Err(Error::AnswerOutOfRange { index: ex.answer, num_answers: self.num_answers() });
            }
        }
        Ok(())
    }
}

/// Inverse-CDF draw from (possibly unnormalized) log-probabilities using one
/// uniform variate.
pub fn sample_from_log_probs<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let p = math::softmax(log_probs);
    sample_from_probs(&p, rng)
}

pub fn sample_from_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Scores dataset instances by index. Objective, solver and trainer code runs
/// against this trait so model-specific caches can sit behind it.
pub trait IndexedScorer: Sync {
    fn num_answers(&self) -> usize;
    fn num_instances(&self) -> usize;
    /// Writes `log p(y | instance[query], ctx)` for every answer into `out`.
    /// `ctx` holds `(instance index, answer index)` pairs in order.
    fn answer_log_probs(&self, query: usize, ctx: &[(usize, usize)], out: &mut [f64]) -> Result<()>;
}

/// Uncached scorer over any [`ConditionalModel`].
pub struct ModelScorer<'a, M: ?Sized> {
    model: &'a M,
    instances: &'a [Instance],
}

impl<'a, M: ConditionalModel + ?Sized> ModelScorer<'a, M> {
    pub fn new(model: &'a M, instances: &'a [Instance]) -> Self {
        ModelScorer { model, instances }
    }
}

impl<M: ConditionalModel + ?Sized> IndexedScorer for ModelScorer<'_, M> {
    fn num_answers(&self) -> usize {
        self.model.num_answers()
    }

    fn num_instances(&self) -> usize {
        self.instances.len()
    }

    fn answer_log_probs(&self, query: usize, ctx: &[(usize, usize)], out: &mut [f64]) -> Result<()> {
        let support: SupportContext<'_> = ctx.iter().map(|&(i, y)| (&self.instances[i], y)).collect();
        let lp = self.model.answer_log_probs(&self.instances[query], &support)?;
        out.copy_from_slice(&lp);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn answer_set_rejects_small_and_duplicates() {
        assert!(AnswerSet::from_labels(&["only"]).is_err());
        assert!(AnswerSet::from_labels(&["a", "b", "a"]).is_err());
        let s = AnswerSet::from_labels(&["yes", "no"]).unwrap();
        assert_eq!(s.index_of("no"), Some(1));
        assert!(s.check_index(2).is_err());
    }

    #[test]
    fn dataset_validation() {
        let ys = AnswerSet::from_labels(&["a", "b"]).unwrap();
        let xs = vec![Instance::with_features("0", vec![0.0]), Instance::with_features("1", vec![1.0])];
        assert!(TaskDataset::new(xs.clone(), ys.clone(), Some(vec![0, 1])).is_ok());
        assert!(TaskDataset::new(xs.clone(), ys.clone(), Some(vec![0])).is_err());
        assert!(TaskDataset::new(xs.clone(), ys.clone(), Some(vec![0, 2])).is_err());
        assert!(TaskDataset::new(vec![], ys.clone(), None).is_err());
        let dup = vec![xs[0].clone(), xs[0].clone()];
        assert!(TaskDataset::new(dup, ys.clone(), None).is_err());
        let bad = vec![Instance::with_features("z", vec![f64::NAN])];
        assert!(matches!(TaskDataset::new(bad, ys, None), Err(Error::NonFiniteFeature { .. })));
    }

    #[test]
    fn degenerate_distribution_always_sampled() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_from_log_probs(&[f64::NEG_INFINITY, 0.0], &mut rng), 1);
        }
    }

    #[test]
    fn instance_payload_roundtrip_json() {
        let x = Instance::with_text("q1", "hello");
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, r#"{"id":"q1","text":"hello"}"#);
        let back: Instance = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
    }
}
