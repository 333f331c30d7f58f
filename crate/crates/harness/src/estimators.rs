//! Paired training runs with the naive and low-variance gradient estimators.
//!
//! Both runs of a pair share the seed, so they start from the same
//! parameters and draw the same first minibatch. The final objective of a run
//! is the exact `E_tau J^N + gamma * R` at its final parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use jointinf_core::uft::{exact_expected_objective, summed_gradient_variance, train_uft, train_uft_with, EstimatorKind, TaskEncoder, TrainConfig};
use jointinf_core::{Fixture, IndexedScorer};

use crate::error::{IoContext, Result};
use crate::experiment::write_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Task for the paired training runs; must be small enough to enumerate.
    pub fixture: Fixture,
    /// Task for the variance measurements.
    pub variance_fixture: Fixture,
    pub seeds: Vec<u64>,
    /// Training settings shared by both estimators (`estimator` and `seed`
    /// are overridden per run).
    pub train: TrainConfig,
    /// Tuples drawn per variance measurement.
    pub variance_draws: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            fixture: Fixture::OracleM10a,
            variance_fixture: Fixture::Reference,
            seeds: (0..5).collect(),
            train: TrainConfig { context_size: 4, batch_size: 16, iterations: 100, learning_rate: 0.05, ..Default::default() },
            variance_draws: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedFinal {
    pub seed: u64,
    pub naive: f64,
    pub low_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    /// `init` or `mid` (halfway through a low-variance run).
    pub checkpoint: String,
    pub naive: f64,
    pub low_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub fixture: Fixture,
    pub context_size: usize,
    pub iterations: usize,
    /// Per-iteration minibatch objective, averaged over seeds.
    pub naive_curve: Vec<f64>,
    pub low_variance_curve: Vec<f64>,
    pub finals: Vec<PairedFinal>,
    /// Seeds on which the low-variance run ends at least as high.
    pub low_variance_wins: usize,
    pub variance: Vec<VariancePoint>,
}

impl EstimatorReport {
    pub fn mean_final(&self, kind: EstimatorKind) -> f64 {
        let pick = |f: &PairedFinal| if kind == EstimatorKind::Naive { f.naive } else { f.low_variance };
        self.finals.iter().map(pick).sum::<f64>() / self.finals.len() as f64
    }

    /// Writes `report.json`, `curves.csv` (`iteration,naive,low_variance`),
    /// `finals.csv` (`seed,naive,low_variance`) and `variance.csv`
    /// (`checkpoint,naive,low_variance`).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        write_json(&dir.join("report.json"), self)?;
        let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
        w.write_record(["iteration", "naive", "low_variance"])?;
        for (t, (a, b)) in self.naive_curve.iter().zip(&self.low_variance_curve).enumerate() {
            w.write_record([t.to_string(), a.to_string(), b.to_string()])?;
        }
        w.flush().at(dir)?;
        let mut w = csv::Writer::from_path(dir.join("finals.csv"))?;
        for f in &self.finals {
            w.serialize(f)?;
        }
        w.flush().at(dir)?;
        let mut w = csv::Writer::from_path(dir.join("variance.csv"))?;
        for v in &self.variance {
            w.serialize(v)?;
        }
        w.flush().at(dir)
    }
}

fn final_objective<S: IndexedScorer + ?Sized>(
    scorer: &S,
    encoder: &TaskEncoder,
    params: &jointinf_core::uft::TaskEncoderParams,
    cfg: &TrainConfig,
) -> Result<f64> {
    let all: Vec<usize> = (0..encoder.num_instances()).collect();
    Ok(exact_expected_objective(scorer, encoder, params, cfg.context_size)? + cfg.gamma * encoder.prior_entropy(params, &all))
}

pub fn compare_estimators(cfg: &CompareConfig) -> Result<EstimatorReport> {
    let (ds, model) = cfg.fixture.load()?;
    let scorer = model.scorer(&ds.instances)?;
    let encoder = TaskEncoder::new(&scorer, &ds.instances)?;

    let iterations = cfg.train.iterations;
    let mut curves = [vec![0.0; iterations], vec![0.0; iterations]];
    let mut finals = Vec::new();
    for &seed in &cfg.seeds {
        let mut pair = [0.0; 2];
        for (slot, kind) in [EstimatorKind::Naive, EstimatorKind::LowVariance].into_iter().enumerate() {
            let tc = TrainConfig { estimator: kind, seed, ..cfg.train.clone() };
            let (params, trace) = train_uft(&scorer, &encoder, ds.gold.as_deref(), &tc)?;
            for (acc, r) in curves[slot].iter_mut().zip(&trace.records) {
                *acc += r.objective / cfg.seeds.len() as f64;
            }
            pair[slot] = final_objective(&scorer, &encoder, &params, &tc)?;
        }
        log::info!("seed {seed}: naive {:.4}, low-variance {:.4}", pair[0], pair[1]);
        finals.push(PairedFinal { seed, naive: pair[0], low_variance: pair[1] });
    }
    let low_variance_wins = finals.iter().filter(|f| f.low_variance >= f.naive).count();
    let [naive_curve, low_variance_curve] = curves;

    Ok(EstimatorReport {
        fixture: cfg.fixture,
        context_size: cfg.train.context_size,
        iterations,
        naive_curve,
        low_variance_curve,
        finals,
        low_variance_wins,
        variance: variance_points(cfg)?,
    })
}

/// Summed per-coordinate gradient variance of both estimators at the initial
/// parameters and halfway through a low-variance training run.
pub fn variance_points(cfg: &CompareConfig) -> Result<Vec<VariancePoint>> {
    let (ds, model) = cfg.variance_fixture.load()?;
    let scorer = model.scorer(&ds.instances)?;
    let encoder = TaskEncoder::new(&scorer, &ds.instances)?;
    let tc = TrainConfig { estimator: EstimatorKind::LowVariance, ..cfg.train.clone() };
    let init = encoder.init_params(tc.encoder)?;
    let half = tc.iterations / 2;
    let mut mid = init.clone();
    train_uft_with(&scorer, &encoder, None, &TrainConfig { iterations: half.max(1), ..tc.clone() }, |_, p| mid = p.clone())?;

    let mut out = Vec::new();
    for (name, params) in [("init", &init), ("mid", &mid)] {
        let measure = |kind| summed_gradient_variance(&scorer, &encoder, params, kind, tc.context_size, cfg.variance_draws, tc.seed);
        out.push(VariancePoint {
            checkpoint: name.into(),
            naive: measure(EstimatorKind::Naive)?,
            low_variance: measure(EstimatorKind::LowVariance)?,
        });
    }
    Ok(out)
}
