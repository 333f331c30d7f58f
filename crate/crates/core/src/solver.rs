//! Brute-force argmax of `J^N` over every labeling in `Y^M`. This is the
//! desk-scale oracle the unsupervised methods are checked against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::permutations;
use crate::model::IndexedScorer;
use crate::objective::{exact_value_sequential, Labeling, DEFAULT_EXACT_CAP};
use crate::par;

pub const DEFAULT_LABELING_CAP: u128 = 1_000_000;
pub const DEFAULT_TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub best_labeling: Labeling,
    pub best_value: f64,
    pub num_evaluated: u128,
    /// Labelings (the best one included) within the tie tolerance of the best value.
    pub ties: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    pub context_size: usize,
    pub tie_tol: f64,
    pub labeling_cap: u128,
    pub tuple_cap: u128,
}

impl SolverConfig {
    pub fn new(context_size: usize) -> Self {
        SolverConfig {
            context_size,
            tie_tol: DEFAULT_TIE_TOL,
            labeling_cap: DEFAULT_LABELING_CAP,
            tuple_cap: DEFAULT_EXACT_CAP,
        }
    }
}

/// Decodes the `index`-th labeling in lexicographic order (instance 0 is the
/// most significant digit).
pub fn labeling_at(index: u64, num_instances: usize, num_answers: usize) -> Vec<usize> {
    let k = num_answers as u64;
    let mut out = vec![0; num_instances];
    let mut rest = index;
    for slot in out.iter_mut().rev() {
        *slot = (rest % k) as usize;
        rest /= k;
    }
    out
}

/// Evaluates exact `J^N` for every labeling in lexicographic order and
/// returns the first maximizer.
pub fn brute_force_argmax<S: IndexedScorer + ?Sized>(scorer: &S, cfg: &SolverConfig) -> Result<SolverResult> {
    let m = scorer.num_instances();
    let k = scorer.num_answers();
    let n = cfg.context_size;
    if m == 0 {
        return Err(Error::InvalidDataset("dataset has no instances".into()));
    }
    if n == 0 {
        return Err(Error::InvalidParams("context size N must be >= 1".into()));
    }
    if n > m {
        return Err(Error::ContextTooLarge { n, m });
    }
    let total = (k as u128).checked_pow(m as u32).unwrap_or(u128::MAX);
    if total > cfg.labeling_cap {
        return Err(Error::EnumerationCapExceeded { count: total, cap: cfg.labeling_cap });
    }
    let tuples = permutations(m, n);
    if tuples > cfg.tuple_cap {
        return Err(Error::EnumerationCapExceeded { count: tuples, cap: cfg.tuple_cap });
    }

    let values = par::try_map_indexed(total as usize, |i| {
        exact_value_sequential(scorer, &labeling_at(i as u64, m, k), n)
    })?;

    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    let best_value = values[best];
    let ties = values.iter().filter(|&&v| (v - best_value).abs() <= cfg.tie_tol).count();
    Ok(SolverResult {
        best_labeling: Labeling(labeling_at(best as u64, m, k)),
        best_value,
        num_evaluated: total,
        ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelScorer;
    use crate::objective::exact_joint_objective;
    use crate::synthetic::{generate_synthetic_task, SyntheticTaskConfig};
    use rand::{Rng, SeedableRng};

    /// Two instances whose log-probabilities are read from a table. Each
    /// instance alone is indifferent; with context, agreeing with the context
    /// label gets probability 0.9.
    struct AgreementTable;

    impl IndexedScorer for AgreementTable {
        fn num_answers(&self) -> usize {
            2
        }
        fn num_instances(&self) -> usize {
            2
        }
        fn answer_log_probs(&self, _q: usize, ctx: &[(usize, usize)], out: &mut [f64]) -> Result<()> {
            match ctx.last() {
                None => out.copy_from_slice(&[0.5f64.ln(), 0.5f64.ln()]),
                Some(&(_, y)) => {
                    out[y] = 0.9f64.ln();
                    out[1 - y] = 0.1f64.ln();
                }
            }
            Ok(())
        }
    }

    #[test]
    fn agreement_table_by_hand() {
        // N=2: J = 1/2 [ln 0.5 + ln 0.9] for agreeing labelings, 1/2 [ln 0.5 + ln 0.1] otherwise.
        let res = brute_force_argmax(&AgreementTable, &SolverConfig::new(2)).unwrap();
        let agree = 0.5 * (0.5f64.ln() + 0.9f64.ln());
        assert_eq!(res.best_labeling, Labeling(vec![0, 0]));
        assert!((res.best_value - agree).abs() < 1e-12);
        assert_eq!(res.ties, 2);
        assert_eq!(res.num_evaluated, 4);
    }

    #[test]
    fn lexicographic_decoding() {
        assert_eq!(labeling_at(0, 3, 2), vec![0, 0, 0]);
        assert_eq!(labeling_at(1, 3, 2), vec![0, 0, 1]);
        assert_eq!(labeling_at(5, 3, 2), vec![1, 0, 1]);
        assert_eq!(labeling_at(8, 2, 3), vec![2, 2]);
    }

    #[test]
    fn context_free_preferences_recover_gold() {
        struct Prefers(Vec<usize>);
        impl crate::model::ConditionalModel for Prefers {
            fn num_answers(&self) -> usize {
                3
            }
            fn answer_log_probs(
                &self,
                x: &crate::model::Instance,
                _c: &crate::model::SupportContext<'_>,
            ) -> Result<Vec<f64>> {
                let i: usize = x.id.parse().unwrap();
                Ok((0..3).map(|y| if y == self.0[i] { 0.8f64.ln() } else { 0.1f64.ln() }).collect())
            }
        }
        let gold = vec![2, 0, 1, 1, 0];
        let model = Prefers(gold.clone());
        let xs: Vec<_> = (0..5).map(|i| crate::model::Instance::with_text(i.to_string(), "")).collect();
        let res = brute_force_argmax(&ModelScorer::new(&model, &xs), &SolverConfig::new(2)).unwrap();
        assert_eq!(res.best_labeling.0, gold);
        assert_eq!(res.ties, 1);
    }

    #[test]
    fn caps_are_enforced() {
        let cfg = SolverConfig { labeling_cap: 3, ..SolverConfig::new(1) };
        assert!(matches!(brute_force_argmax(&AgreementTable, &cfg), Err(Error::EnumerationCapExceeded { .. })));
        assert!(matches!(brute_force_argmax(&AgreementTable, &SolverConfig::new(3)), Err(Error::ContextTooLarge { .. })));
    }

    #[test]
    fn dominates_random_labelings_and_is_deterministic() {
        let (ds, model) = generate_synthetic_task(&SyntheticTaskConfig {
            seed: 4,
            num_instances: 7,
            zero_shot_noise: 0.5,
            context_strength: 2.5,
            kernel_bandwidth: 2.0,
            ..Default::default()
        })
        .unwrap();
        let scorer = model.scorer(&ds.instances).unwrap();
        let res = brute_force_argmax(&scorer, &SolverConfig::new(3)).unwrap();
        let again = brute_force_argmax(&scorer, &SolverConfig::new(3)).unwrap();
        assert_eq!(res, again);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let lab = Labeling((0..7).map(|_| rng.random_range(0..2)).collect());
            let v = exact_joint_objective(&scorer, &lab, 3, DEFAULT_EXACT_CAP).unwrap().value;
            assert!(res.best_value >= v - 1e-12);
        }
        let gold = exact_joint_objective(&scorer, &Labeling(ds.gold.clone().unwrap()), 3, DEFAULT_EXACT_CAP).unwrap();
        assert!(res.best_value >= gold.value);
    }

    #[test]
    fn cache_on_equals_cache_off() {
        let (ds, model) = generate_synthetic_task(&SyntheticTaskConfig {
            seed: 8,
            num_instances: 6,
            zero_shot_noise: 0.4,
            context_strength: 1.5,
            recency_decay: 0.9,
            ..Default::default()
        })
        .unwrap();
        let cached = brute_force_argmax(&model.scorer(&ds.instances).unwrap(), &SolverConfig::new(3)).unwrap();
        let plain = brute_force_argmax(&ModelScorer::new(&model, &ds.instances), &SolverConfig::new(3)).unwrap();
        assert_eq!(cached.best_labeling, plain.best_labeling);
        assert!((cached.best_value - plain.best_value).abs() < 1e-10);
    }
}
