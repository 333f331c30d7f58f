use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use jointinf_core::uicl::*;
use jointinf_core::*;
use proptest::prelude::*;

/// Wraps a sampler and checks every call it sees.
struct Checked<'a, S> {
    inner: S,
    ids: &'a [Instance],
    calls: AtomicUsize,
    max_ctx: Mutex<usize>,
}

impl<S: AnswerSampler> AnswerSampler for Checked<'_, S> {
    fn answer_set(&self) -> &AnswerSet {
        self.inner.answer_set()
    }

    fn sample(&self, x: &Instance, ctx: &SupportContext<'_>, draw: u64) -> Result<SampledAnswer> {
        assert!(ctx.iter().all(|e| e.instance.id != x.id), "query appeared in its own context");
        let mut ids: Vec<&str> = ctx.iter().map(|e| e.instance.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), ctx.len(), "support drawn with replacement");
        assert!(ctx.iter().all(|e| self.ids.iter().any(|i| i.id == e.instance.id)));
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut m = self.max_ctx.lock().unwrap();
        *m = (*m).max(ctx.len());
        self.inner.sample(x, ctx, draw)
    }
}

#[test]
fn run_respects_exclusion_and_conserves_votes() {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let cfg = UiclConfig { context_size: 8, turns: 3, repeats: 5, seed: 4, objective_sequences: 50, ..Default::default() };
    let sampler = Checked {
        inner: ModelSampler::new(&model, &ds.answer_set),
        ids: &ds.instances,
        calls: AtomicUsize::new(0),
        max_ctx: Mutex::new(0),
    };
    let result = run_uicl(&sampler, &ds, &cfg, None).unwrap();
    assert_eq!(result.turns.len(), 4);
    assert_eq!(*sampler.max_ctx.lock().unwrap(), 8);
    assert_eq!(sampler.calls.load(Ordering::Relaxed), 64 + 3 * 64 * 5);
    for state in &result.turns[1..] {
        assert_eq!(state.labels.len(), ds.len());
        for l in &state.labels {
            assert_eq!(l.tally.iter().sum::<usize>(), 5);
            assert_eq!(l.tally[2], 0);
            let best = *l.tally[..2].iter().max().unwrap();
            assert_eq!(l.tally[l.answer], best);
        }
    }
    assert!(result.summaries.iter().all(|s| s.objective.is_none() && s.accuracy.is_some()));
}

#[test]
fn runs_are_deterministic_and_resumable() {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let scorer = model.scorer(&ds.instances).unwrap();
    let sampler = ModelSampler::new(&model, &ds.answer_set);
    let cfg = UiclConfig { turns: 4, seed: 11, objective_sequences: 200, ..Default::default() };
    let a = run_uicl(&sampler, &ds, &cfg, Some(&scorer)).unwrap();
    let b = run_uicl(&sampler, &ds, &cfg, Some(&scorer)).unwrap();
    assert_eq!(a, b);

    let checkpoint = a.turns[2].clone();
    let resumed = run_uicl_with(&sampler, &ds, &cfg, Some(&scorer), Some(checkpoint), |_| Ok(())).unwrap();
    assert_eq!(resumed.final_labels, a.final_labels);
    assert_eq!(resumed.turns[..], a.turns[2..]);
    assert_eq!(resumed.summaries[..], a.summaries[2..]);

    let mut csv = Vec::new();
    a.write_trace_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("turn,objective,std_error,accuracy\n"));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn relabeling_reads_only_the_previous_turn() {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let sampler = ModelSampler::new(&model, &ds.answer_set);
    let cfg = UiclConfig::default();
    let pool = TurnState::from_answers(&ds, &vec![0; ds.len()].iter().enumerate().map(|(i, _)| i % 2).collect::<Vec<_>>());
    let first = relabel_turn(&sampler, &ds, &pool, &cfg, 1).unwrap();
    let again = relabel_turn(&sampler, &ds, &pool, &cfg, 1).unwrap();
    assert_eq!(first, again);
}

/// Rejects every response for the listed instances.
struct Picky<'a> {
    inner: ModelSampler<'a, SyntheticModel>,
    reject: Vec<String>,
}

impl AnswerSampler for Picky<'_> {
    fn answer_set(&self) -> &AnswerSet {
        self.inner.answer_set()
    }
    fn sample(&self, x: &Instance, ctx: &SupportContext<'_>, draw: u64) -> Result<SampledAnswer> {
        assert!(ctx.iter().all(|e| !self.reject.contains(&e.instance.id)), "unformatted label used as support");
        if self.reject.contains(&x.id) {
            return Ok(SampledAnswer::Rejected { raw: "I am not sure".into() });
        }
        self.inner.sample(x, ctx, draw)
    }
}

#[test]
fn rejected_responses_keep_previous_labels_and_leave_the_pool() {
    let (ds, model) = Fixture::Reference.load().unwrap();
    let reject = vec![ds.instances[3].id.clone(), ds.instances[10].id.clone()];
    let sampler = Picky { inner: ModelSampler::new(&model, &ds.answer_set), reject };
    let cfg = UiclConfig { turns: 2, repeats: 3, ..Default::default() };
    let result = run_uicl(&sampler, &ds, &cfg, None).unwrap();
    for state in &result.turns {
        for i in [3, 10] {
            let l = &state.labels[i];
            assert!(!l.formatted);
            assert_eq!(l.answer, 0);
            assert_eq!(l.tally, vec![0, 0, 3]);
            assert_eq!(l.raw.as_deref(), Some("I am not sure"));
        }
    }
}

#[test]
fn too_small_pool_is_an_error() {
    let (ds, model) = Fixture::OracleM8.load().unwrap();
    let sampler = ModelSampler::new(&model, &ds.answer_set);
    let cfg = UiclConfig { context_size: 8, ..Default::default() };
    assert!(matches!(run_uicl(&sampler, &ds, &cfg, None), Err(Error::ContextTooLarge { .. })));
}

#[test]
fn supervised_icl_needs_gold() {
    let (mut ds, model) = Fixture::OracleM8.load().unwrap();
    ds.gold = None;
    let sampler = ModelSampler::new(&model, &ds.answer_set);
    let cfg = UiclConfig { context_size: 4, ..Default::default() };
    assert!(supervised_icl(&sampler, &ds, &cfg).is_err());
}

proptest! {
    #[test]
    fn majority_vote_returns_the_smallest_mode(votes in prop::collection::vec(0usize..4, 1..12)) {
        let winner = majority_vote(&votes).unwrap();
        let count = |c: usize| votes.iter().filter(|&&v| v == c).count();
        let top = (0..4).map(count).max().unwrap();
        prop_assert_eq!(count(winner), top);
        prop_assert!((0..winner).all(|c| count(c) < top));
    }

    #[test]
    fn balanced_support_never_includes_the_query(
        labels in prop::collection::vec(0usize..3, 10..30),
        n in 1usize..9,
        seed in any::<u64>(),
    ) {
        let exclude = seed as usize % labels.len();
        let ds_labels: Vec<TurnLabel> = labels
            .iter()
            .enumerate()
            .map(|(i, &a)| TurnLabel { id: i.to_string(), answer: a, formatted: true, raw: None, tally: vec![] })
            .collect();
        let pool = TurnState { turn: 0, labels: ds_labels };
        let mut r = rng::stream(seed, &[]);
        let s = sample_support(&pool, n, exclude, 3, true, true, &mut r).unwrap();
        prop_assert_eq!(s.len(), n);
        prop_assert!(s.iter().all(|(i, y)| *i != exclude && labels[*i] == *y));
        // every class gets min(quota, available) before any top-up
        for c in 0..3 {
            let available = labels.iter().enumerate().filter(|(i, &a)| *i != exclude && a == c).count();
            let got = s.iter().filter(|(_, y)| *y == c).count();
            prop_assert!(got >= (n / 3).min(available));
        }
    }
}
