//! Multi-turn unsupervised in-context learning.
//!
//! Turn 0 labels every instance with an independent zero-shot sample. Each
//! later turn relabels every instance from the previous turn's labels only:
//! `N_r` support sets of size `N` are drawn from the other instances, one
//! answer is sampled per support set, and the majority wins.

use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::answer_parse::AnswerParser;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{sample_from_log_probs, AnswerSet, ConditionalModel, IndexedScorer, Instance, SupportContext, TaskDataset};
use crate::objective::{mc_joint_objective, Labeling, ObjectiveEstimate};
use crate::{par, rng};

/// One answer drawn by a sampler.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SampledAnswer {
    Answer { index: usize, raw: Option<String> },
    /// The response could not be mapped onto the answer set.
    Rejected { raw: String },
}

/// Anything that can draw an answer for an instance given a support context.
/// `draw` is a deterministic tag for the draw; local samplers seed from it,
/// remote ones fold it into their cache key.
pub trait AnswerSampler: Sync {
    fn answer_set(&self) -> &AnswerSet;
    fn sample(&self, x: &Instance, ctx: &SupportContext<'_>, draw: u64) -> Result<SampledAnswer>;
}

/// Samples from a local [`ConditionalModel`], at temperature 1 or greedily.
pub struct ModelSampler<'a, M: ?Sized> {
    model: &'a M,
    answers: &'a AnswerSet,
    greedy: bool,
}

impl<'a, M: ConditionalModel + ?Sized> ModelSampler<'a, M> {
    pub fn new(model: &'a M, answers: &'a AnswerSet) -> Self {
        ModelSampler { model, answers, greedy: false }
    }

    pub fn greedy(mut self, greedy: bool) -> Self {
        self.greedy = greedy;
        self
    }
}

impl<M: ConditionalModel + ?Sized> AnswerSampler for ModelSampler<'_, M> {
    fn answer_set(&self) -> &AnswerSet {
        self.answers
    }

    fn sample(&self, x: &Instance, ctx: &SupportContext<'_>, draw: u64) -> Result<SampledAnswer> {
        let lp = self.model.answer_log_probs(x, ctx)?;
        let index = if self.greedy {
            math::argmax(&lp)
        } else {
            sample_from_log_probs(&lp, &mut ChaCha8Rng::seed_from_u64(draw))
        };
        Ok(SampledAnswer::Answer { index, raw: None })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UiclConfig {
    pub context_size: usize,
    pub turns: usize,
    pub repeats: usize,
    pub balance: bool,
    pub filter_unformatted: bool,
    pub seed: u64,
    /// Sequences per Monte Carlo objective estimate in the per-turn trace.
    pub objective_sequences: usize,
}

impl Default for UiclConfig {
    fn default() -> Self {
        UiclConfig {
            context_size: 8,
            turns: 5,
            repeats: 5,
            balance: true,
            filter_unformatted: true,
            seed: 0,
            objective_sequences: 2000,
        }
    }
}

impl UiclConfig {
    pub fn validate(&self, num_instances: usize) -> Result<()> {
        if num_instances == 0 {
            return Err(Error::InvalidDataset("dataset has no instances".into()));
        }
        if self.context_size == 0 || self.turns == 0 || self.repeats == 0 {
            return Err(Error::InvalidParams("N, T and N_r must all be >= 1".into()));
        }
        if self.context_size >= num_instances {
            return Err(Error::ContextTooLarge { n: self.context_size, m: num_instances - 1 });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabel {
    pub id: String,
    pub answer: usize,
    /// Whether this label came from a parseable response. Unformatted labels
    /// keep the previous turn's answer and are left out of support pools.
    pub formatted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    /// Votes per answer index, followed by the count of rejected responses.
    pub tally: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnState {
    pub turn: usize,
    pub labels: Vec<TurnLabel>,
}

impl TurnState {
    pub fn answers(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.answer).collect()
    }

    /// Builds a pool from fixed labels (e.g. gold labels for supervised ICL).
    pub fn from_answers(dataset: &TaskDataset, answers: &[usize]) -> Self {
        let k = dataset.num_answers();
        TurnState {
            turn: 0,
            labels: dataset
                .instances
                .iter()
                .zip(answers)
                .map(|(x, &a)| {
                    let mut tally = vec![0; k + 1];
                    tally[a] = 1;
                    TurnLabel { id: x.id.clone(), answer: a, formatted: true, raw: None, tally }
                })
                .collect(),
        }
    }
}

/// Modal candidate; ties go to the smallest (lowest index or lexicographically
/// smallest string).
pub fn majority_vote<T: Ord + Clone>(candidates: &[T]) -> Option<T> {
    let mut sorted: Vec<&T> = candidates.iter().collect();
    sorted.sort();
    let mut best: Option<(&T, usize)> = None;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|c| **c == sorted[i]).count();
        if best.is_none_or(|(_, n)| j > n) {
            best = Some((sorted[i], j));
        }
        i += j;
    }
    best.map(|(c, _)| c.clone())
}

/// Applies the parser to a raw response; `None` means rejected.
pub fn filter_unformatted(raw: &str, answers: &AnswerSet, parser: &AnswerParser) -> Option<usize> {
    parser.parse(raw.trim(), answers)
}

/// Draws `n` support examples (instance index, label) from `pool` without
/// replacement, never including `exclude`.
///
/// With `balance`, each answer gets a quota of `n / K`; the remainder goes to
/// the answers with the most eligible pool members (lowest index on ties).
/// Quotas a class cannot fill are topped up uniformly from the rest of the
/// pool. The final order is shuffled.
pub fn sample_support<R: rand::Rng + ?Sized>(
    pool: &TurnState,
    n: usize,
    exclude: usize,
    num_answers: usize,
    balance: bool,
    require_formatted: bool,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let eligible: Vec<usize> = (0..pool.labels.len())
        .filter(|&i| i != exclude && (!require_formatted || pool.labels[i].formatted))
        .collect();
    if eligible.len() < n {
        return Err(Error::InsufficientPool { available: eligible.len(), needed: n });
    }
    let mut chosen: Vec<usize> = if balance {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_answers];
        for &i in &eligible {
            by_class[pool.labels[i].answer].push(i);
        }
        let mut quota = vec![n / num_answers; num_answers];
        let mut order: Vec<usize> = (0..num_answers).collect();
        order.sort_by(|&a, &b| by_class[b].len().cmp(&by_class[a].len()).then(a.cmp(&b)));
        for &c in order.iter().take(n % num_answers) {
            quota[c] += 1;
        }
        let mut picked = Vec::with_capacity(n);
        let mut leftovers = Vec::new();
        for (c, members) in by_class.iter_mut().enumerate() {
            members.shuffle(rng);
            let take = quota[c].min(members.len());
            picked.extend_from_slice(&members[..take]);
            leftovers.extend_from_slice(&members[take..]);
        }
        let deficit = n - picked.len();
        if deficit > 0 {
            leftovers.sort_unstable();
            let (fill, _) = leftovers.partial_shuffle(rng, deficit);
            picked.extend_from_slice(fill);
        }
        picked
    } else {
        rand::seq::index::sample(rng, eligible.len(), n).into_iter().map(|i| eligible[i]).collect()
    };
    chosen.shuffle(rng);
    Ok(chosen.into_iter().map(|i| (i, pool.labels[i].answer)).collect())
}

fn zero_shot_turn<S: AnswerSampler + ?Sized>(sampler: &S, dataset: &TaskDataset, cfg: &UiclConfig) -> Result<TurnState> {
    let k = dataset.num_answers();
    let labels = par::try_map_indexed(dataset.len(), |i| {
        let x = &dataset.instances[i];
        let mut tally = vec![0; k + 1];
        // a rejected zero-shot response is redrawn, up to N_r attempts
        let mut last_raw = None;
        for attempt in 0..cfg.repeats {
            let draw = rng::derive_seed(cfg.seed, &[0, i as u64, attempt as u64]);
            match sampler.sample(x, &SupportContext::empty(), draw)? {
                SampledAnswer::Answer { index, raw } => {
                    tally[index] += 1;
                    return Ok(TurnLabel { id: x.id.clone(), answer: index, formatted: true, raw, tally });
                }
                SampledAnswer::Rejected { raw } => {
                    tally[k] += 1;
                    last_raw = Some(raw);
                }
            }
        }
        Ok(TurnLabel { id: x.id.clone(), answer: 0, formatted: false, raw: last_raw, tally })
    })?;
    Ok(TurnState { turn: 0, labels })
}

/// One synchronous relabeling turn computed from `pool` only.
pub fn relabel_turn<S: AnswerSampler + ?Sized>(
    sampler: &S,
    dataset: &TaskDataset,
    pool: &TurnState,
    cfg: &UiclConfig,
    turn: usize,
) -> Result<TurnState> {
    let k = dataset.num_answers();
    let labels = par::try_map_indexed(dataset.len(), |i| {
        let x = &dataset.instances[i];
        let mut votes = Vec::with_capacity(cfg.repeats);
        let mut tally = vec![0; k + 1];
        let mut raw_for_winner: Vec<Option<String>> = vec![None; k];
        for r in 0..cfg.repeats {
            let coords = [turn as u64, i as u64, r as u64];
            let mut support_rng = rng::stream(cfg.seed, &coords);
            let support = sample_support(pool, cfg.context_size, i, k, cfg.balance, cfg.filter_unformatted, &mut support_rng)?;
            let ctx: SupportContext = support.iter().map(|&(j, y)| (&dataset.instances[j], y)).collect();
            let draw = rng::derive_seed(cfg.seed, &[turn as u64, i as u64, r as u64, 1]);
            match sampler.sample(x, &ctx, draw)? {
                SampledAnswer::Answer { index, raw } => {
                    tally[index] += 1;
                    votes.push(index);
                    if raw_for_winner[index].is_none() {
                        raw_for_winner[index] = raw;
                    }
                }
                SampledAnswer::Rejected { .. } => tally[k] += 1,
            }
        }
        let prev = &pool.labels[i];
        Ok(match majority_vote(&votes) {
            Some(answer) => TurnLabel {
                id: x.id.clone(),
                answer,
                formatted: true,
                raw: raw_for_winner[answer].take(),
                tally,
            },
            None => TurnLabel { id: x.id.clone(), answer: prev.answer, formatted: prev.formatted, raw: prev.raw.clone(), tally },
        })
    })?;
    Ok(TurnState { turn, labels })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnSummary {
    pub turn: usize,
    pub objective: Option<ObjectiveEstimate>,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UiclResult {
    pub final_labels: Vec<usize>,
    pub turns: Vec<TurnState>,
    pub summaries: Vec<TurnSummary>,
}

impl UiclResult {
    pub const CSV_HEADER: &'static str = "turn,objective,std_error,accuracy";

    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for s in &self.summaries {
            let (v, se) = s.objective.map(|o| (o.value.to_string(), o.std_error.to_string())).unwrap_or_default();
            let acc = s.accuracy.map(|a| a.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", s.turn, v, se, acc)?;
        }
        Ok(())
    }
}

/// Objective and accuracy of one turn's labels. The objective is scored on
/// the same tuples for every turn of a run.
pub fn summarize_turn(
    state: &TurnState,
    dataset: &TaskDataset,
    scorer: Option<&dyn IndexedScorer>,
    cfg: &UiclConfig,
) -> Result<TurnSummary> {
    let answers = state.answers();
    let objective = match scorer {
        Some(s) => {
            let mut r = rng::stream(cfg.seed, &[u64::MAX]);
            Some(mc_joint_objective(s, &Labeling(answers.clone()), cfg.context_size, cfg.objective_sequences, &mut r)?)
        }
        None => None,
    };
    Ok(TurnSummary { turn: state.turn, objective, accuracy: dataset.accuracy(&answers) })
}

/// Runs all turns. `scorer`, when given, produces the per-turn objective
/// trace; `resume` restarts from a checkpointed turn; `on_turn` sees every
/// completed turn (including a resumed one) and may checkpoint it.
pub fn run_uicl_with<S, F>(
    sampler: &S,
    dataset: &TaskDataset,
    cfg: &UiclConfig,
    scorer: Option<&dyn IndexedScorer>,
    resume: Option<TurnState>,
    mut on_turn: F,
) -> Result<UiclResult>
where
    S: AnswerSampler + ?Sized,
    F: FnMut(&TurnState) -> Result<()>,
{
    cfg.validate(dataset.len())?;
    if sampler.answer_set().len() != dataset.num_answers() {
        return Err(Error::InvalidParams("sampler and dataset disagree on the answer set".into()));
    }
    let mut state = match resume {
        Some(s) => {
            if s.labels.len() != dataset.len() || s.labels.iter().zip(&dataset.instances).any(|(l, x)| l.id != x.id) {
                return Err(Error::InvalidParams("checkpoint does not match the dataset".into()));
            }
            s
        }
        None => zero_shot_turn(sampler, dataset, cfg)?,
    };
    on_turn(&state)?;
    let mut turns = vec![state.clone()];
    let mut summaries = vec![summarize_turn(&state, dataset, scorer, cfg)?];
    for t in (state.turn + 1)..=cfg.turns {
        state = relabel_turn(sampler, dataset, &state, cfg, t)?;
        on_turn(&state)?;
        summaries.push(summarize_turn(&state, dataset, scorer, cfg)?);
        turns.push(state.clone());
    }
    Ok(UiclResult { final_labels: state.answers(), turns, summaries })
}

pub fn run_uicl<S: AnswerSampler + ?Sized>(
    sampler: &S,
    dataset: &TaskDataset,
    cfg: &UiclConfig,
    scorer: Option<&dyn IndexedScorer>,
) -> Result<UiclResult> {
    run_uicl_with(sampler, dataset, cfg, scorer, None, |_| Ok(()))
}

/// Supervised ICL baseline: one relabeling turn whose pool carries the gold
/// labels.
pub fn supervised_icl<S: AnswerSampler + ?Sized>(
    sampler: &S,
    dataset: &TaskDataset,
    cfg: &UiclConfig,
) -> Result<Vec<usize>> {
    let gold = dataset.gold.as_ref().ok_or_else(|| Error::InvalidDataset("supervised ICL needs gold labels".into()))?;
    cfg.validate(dataset.len())?;
    let pool = TurnState::from_answers(dataset, gold);
    Ok(relabel_turn(sampler, dataset, &pool, cfg, 1)?.answers())
}

/// Greedy zero-shot predictions.
pub fn zero_shot_predictions<M: ConditionalModel + ?Sized>(model: &M, dataset: &TaskDataset) -> Result<Vec<usize>> {
    par::try_map_indexed(dataset.len(), |i| {
        Ok(math::argmax(&model.answer_log_probs(&dataset.instances[i], &SupportContext::empty())?))
    })
}
