//! Frozen synthetic tasks used by the test suites and the harness.
//!
//! Each fixture is a generator config with a fixed task seed; algorithm seeds
//! vary independently. The parameters were measured once against the exact
//! model and are pinned by the fixture tests in `tests/fixtures.rs`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TaskDataset;
use crate::synthetic::{generate_synthetic_task, SyntheticModel, SyntheticTaskConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    /// M=64, K=2, d=2; zero-shot accuracy ~0.70 and strong in-context learning.
    Reference,
    /// The reference instances and zero-shot boundary with the context term
    /// switched off and a sharper zero-shot head, so that majority votes over
    /// temperature-1 samples track the zero-shot argmax.
    IclFree,
    /// The reference task with a constant kernel: context is pure agreement pressure.
    CollapseProne,
    /// Tight clusters and an exact zero-shot head: zero-shot is already perfect.
    Noiseless,
    /// A 16-instance task with the reference model parameters.
    Small,
    /// M=4 task for exact gradient checks.
    Micro,
    /// Tiny tasks (K^M <= 4096) for brute-force comparisons.
    OracleM8,
    OracleM10a,
    OracleM10b,
    OracleM12,
}

impl Fixture {
    pub const ALL: [Fixture; 10] = [
        Fixture::Reference,
        Fixture::IclFree,
        Fixture::CollapseProne,
        Fixture::Noiseless,
        Fixture::Small,
        Fixture::Micro,
        Fixture::OracleM8,
        Fixture::OracleM10a,
        Fixture::OracleM10b,
        Fixture::OracleM12,
    ];

    pub const ORACLE: [Fixture; 4] = [Fixture::OracleM8, Fixture::OracleM10a, Fixture::OracleM10b, Fixture::OracleM12];

    pub fn id(self) -> &'static str {
        match self {
            Fixture::Reference => "reference",
            Fixture::IclFree => "icl_free",
            Fixture::CollapseProne => "collapse_prone",
            Fixture::Noiseless => "noiseless",
            Fixture::Small => "small",
            Fixture::Micro => "micro",
            Fixture::OracleM8 => "oracle_m8",
            Fixture::OracleM10a => "oracle_m10a",
            Fixture::OracleM10b => "oracle_m10b",
            Fixture::OracleM12 => "oracle_m12",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.id() == id)
            .ok_or_else(|| Error::InvalidParams(format!("unknown fixture `{id}`")))
    }

    pub fn config(self) -> SyntheticTaskConfig {
        let reference = SyntheticTaskConfig {
            seed: 12,
            num_instances: 64,
            num_answers: 2,
            dim: 2,
            zero_shot_noise: 0.45,
            kernel_bandwidth: 2.5,
            context_strength: 8.0,
            recency_decay: 1.0,
            separation: 4.0,
            cluster_spread: 1.0,
            logit_scale: 0.5,
        };
        let oracle = |seed, m| SyntheticTaskConfig { seed, num_instances: m, ..reference.clone() };
        match self {
            Fixture::Reference => reference,
            Fixture::IclFree => SyntheticTaskConfig { context_strength: 0.0, logit_scale: 2.0, ..reference },
            Fixture::CollapseProne => SyntheticTaskConfig { kernel_bandwidth: f64::INFINITY, ..reference },
            Fixture::Noiseless => SyntheticTaskConfig { zero_shot_noise: 0.0, cluster_spread: 0.5, ..reference },
            Fixture::Small => SyntheticTaskConfig { num_instances: 16, ..reference },
            Fixture::Micro => SyntheticTaskConfig { seed: 3, num_instances: 4, ..reference },
            Fixture::OracleM8 => oracle(0, 8),
            Fixture::OracleM10a => oracle(0, 10),
            Fixture::OracleM10b => oracle(3, 10),
            Fixture::OracleM12 => oracle(2, 12),
        }
    }

    pub fn load(self) -> Result<(TaskDataset, SyntheticModel)> {
        generate_synthetic_task(&self.config())
    }
}
