use jointinf_core::uft::*;
use jointinf_core::{rng, Fixture, IndexedScorer};
use rand::Rng;

/// Central differences of the exact expected objective.
fn finite_difference_gradient<S: IndexedScorer>(
    scorer: &S,
    enc: &TaskEncoder,
    params: &TaskEncoderParams,
    n: usize,
    h: f64,
) -> Vec<f64> {
    (0..params.len())
        .map(|i| {
            let mut up = params.clone();
            let mut down = params.clone();
            up.values[i] += h;
            down.values[i] -= h;
            (exact_expected_objective(scorer, enc, &up, n).unwrap() - exact_expected_objective(scorer, enc, &down, n).unwrap())
                / (2.0 * h)
        })
        .collect()
}

fn mean_and_se(kind: EstimatorKind, draws: usize, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ds, model) = Fixture::Micro.load().unwrap();
    let scorer = model.scorer(&ds.instances).unwrap();
    let enc = TaskEncoder::new(&scorer, &ds.instances).unwrap();
    let mut params = enc.init_params(EncoderKind::Tabular).unwrap();
    let mut r = rng::stream(seed, &[0]);
    for v in params.values.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    let exact = finite_difference_gradient(&scorer, &enc, &params, n, 1e-4);

    let d = params.len();
    let mut sum = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for i in 0..draws {
        let mut r = rng::stream(seed, &[1, i as u64]);
        let tuple = rand::seq::index::sample(&mut r, ds.len(), n).into_vec();
        let g = estimate(kind, &scorer, &enc, &params, &tuple, &mut r).unwrap().grad;
        for j in 0..d {
            sum[j] += g[j];
            sq[j] += g[j] * g[j];
        }
    }
    let nf = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let se = (0..d).map(|j| ((sq[j] / nf - mean[j] * mean[j]).max(0.0) / (nf - 1.0)).sqrt()).collect();
    (mean, se, exact)
}

#[test]
fn both_estimators_are_unbiased_on_the_micro_instance() {
    for kind in [EstimatorKind::Naive, EstimatorKind::LowVariance] {
        let (mean, se, exact) = mean_and_se(kind, 100_000, 2, 5);
        for j in 0..mean.len() {
            let tol = (3.0 * se[j]).max(1e-3);
            assert!(
                (mean[j] - exact[j]).abs() <= tol,
                "{kind:?} coord {j}: mean {} exact {} tol {tol}",
                mean[j],
                exact[j]
            );
        }
    }
}

#[test]
fn unbiased_at_longer_context() {
    let (mean, se, exact) = mean_and_se(EstimatorKind::LowVariance, 40_000, 3, 9);
    for j in 0..mean.len() {
        assert!((mean[j] - exact[j]).abs() <= (3.5 * se[j]).max(1e-3), "coord {j}");
    }
}

#[test]
fn low_variance_estimator_dominates_on_the_small_task() {
    let (ds, model) = Fixture::Small.load().unwrap();
    let scorer = model.scorer(&ds.instances).unwrap();
    let enc = TaskEncoder::new(&scorer, &ds.instances).unwrap();
    let init = enc.init_params(EncoderKind::Tabular).unwrap();
    let cfg = TrainConfig { context_size: 4, iterations: 50, learning_rate: 0.05, ..Default::default() };
    let (mid, _) = train_uft(&scorer, &enc, None, &cfg).unwrap();
    for params in [&init, &mid] {
        let naive = summed_gradient_variance(&scorer, &enc, params, EstimatorKind::Naive, 4, 10_000, 3).unwrap();
        let low = summed_gradient_variance(&scorer, &enc, params, EstimatorKind::LowVariance, 4, 10_000, 3).unwrap();
        assert!(low < naive, "low-variance {low} vs naive {naive}");
    }
}
