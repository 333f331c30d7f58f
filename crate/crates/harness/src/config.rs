//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! name = "n_scaling"
//! method = "UFT"            # ZERO_SHOT | UICL | UFT | BRUTE_FORCE | SUPERVISED_ICL
//! seeds = [0, 1, 2, 3, 4]
//! master_seed = 0
//!
//! [task]
//! source = "fixture"        # fixture | synthetic | jsonl | task_file
//! fixture = "reference"
//!
//! [sweep]
//! context_size = [1, 2, 4, 8, 16]
//!
//! [uft]
//! iterations = 300
//! learning_rate = 0.05
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use jointinf_core::synthetic::{SyntheticModelParams, SyntheticTaskConfig};
use jointinf_core::uft::TrainConfig;
use jointinf_core::uicl::UiclConfig;
use jointinf_core::objective::DEFAULT_EXACT_CAP;
use jointinf_core::Fixture;
use jointinf_remote::BackendConfig;

use crate::error::{HarnessError, IoContext, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Method {
    ZeroShot,
    Uicl,
    Uft,
    BruteForce,
    SupervisedIcl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ZeroShot => "ZERO_SHOT",
            Method::Uicl => "UICL",
            Method::Uft => "UFT",
            Method::BruteForce => "BRUTE_FORCE",
            Method::SupervisedIcl => "SUPERVISED_ICL",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSource {
    Fixture { fixture: Fixture },
    Synthetic { synthetic: SyntheticTaskConfig },
    /// JSONL dataset; `model` scores feature payloads locally, otherwise the
    /// `[backend]` section samples answers remotely.
    Jsonl {
        path: PathBuf,
        #[serde(default = "default_template")]
        template: String,
        #[serde(default)]
        model: Option<SyntheticModelParams>,
    },
    /// A task file written by `gen-task`.
    TaskFile { path: PathBuf },
}

fn default_template() -> String {
    "features".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    /// Values of N. Empty means the method config's own N.
    pub context_size: Vec<usize>,
    /// Values of the prior-entropy weight (UFT only).
    pub gamma: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BruteForceSettings {
    pub context_size: usize,
    pub tie_tol: f64,
    pub labeling_cap: u128,
    pub tuple_cap: u128,
}

impl Default for BruteForceSettings {
    fn default() -> Self {
        let d = jointinf_core::SolverConfig::new(4);
        BruteForceSettings {
            context_size: d.context_size,
            tie_tol: d.tie_tol,
            labeling_cap: d.labeling_cap,
            tuple_cap: d.tuple_cap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Sequences for Monte Carlo estimates of the final labeling's objective.
    pub objective_sequences: usize,
    /// Ordered tuples up to which the objective is computed exactly instead.
    pub exact_cap: u128,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { objective_sequences: 2000, exact_cap: DEFAULT_EXACT_CAP }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub method: Method,
    pub task: TaskSource,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub uft: TrainConfig,
    #[serde(default)]
    pub uicl: UiclConfig,
    #[serde(default)]
    pub brute_force: BruteForceSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    /// Directory of the config file, set by [`ExperimentConfig::load`].
    #[serde(skip)]
    pub config_dir: Option<PathBuf>,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        cfg.resolve_paths(&std::path::absolute(&dir).unwrap_or(dir));
        Ok((cfg, text))
    }

    /// Makes task and cache paths relative to `base`, normally the config
    /// file's directory.
    pub fn resolve_paths(&mut self, base: &Path) {
        match &mut self.task {
            TaskSource::Jsonl { path, .. } | TaskSource::TaskFile { path } if path.is_relative() => {
                *path = base.join(&*path);
            }
            _ => {}
        }
        if let Some(dir) = self.backend.as_mut().and_then(|b| b.cache_dir.as_mut()) {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        self.config_dir = Some(base.to_path_buf());
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.sweep.context_size.contains(&0) {
            return bad("sweep.context_size values must be >= 1".into());
        }
        if self.sweep.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("sweep.gamma values must be finite and >= 0".into());
        }
        if !self.sweep.gamma.is_empty() && self.method != Method::Uft {
            return bad("a gamma sweep only applies to UFT".into());
        }
        if self.eval.objective_sequences == 0 {
            return bad("eval.objective_sequences must be >= 1".into());
        }
        if let Some(b) = &self.backend {
            b.validate()?;
        }
        Ok(())
    }

    pub fn context_sizes(&self) -> Vec<usize> {
        if !self.sweep.context_size.is_empty() {
            return self.sweep.context_size.clone();
        }
        vec![match self.method {
            Method::Uft => self.uft.context_size,
            Method::BruteForce => self.brute_force.context_size,
            Method::ZeroShot => 1,
            Method::Uicl | Method::SupervisedIcl => self.uicl.context_size,
        }]
    }

    pub fn gammas(&self) -> Vec<f64> {
        if self.sweep.gamma.is_empty() {
            vec![self.uft.gamma]
        } else {
            self.sweep.gamma.clone()
        }
    }
}

/// Parses `--seeds` values: `0,1,2` or a half-open range `0..5`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || HarnessError::Config(format!("cannot parse seeds `{spec}`"));
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            name = "scaling"
            method = "UFT"
            seeds = [0, 1, 2]
            [task]
            source = "fixture"
            fixture = "reference"
            [sweep]
            context_size = [1, 4]
            gamma = [0.0, 10.0]
            [uft]
            iterations = 50
            learning_rate = 0.05
            "#,
        )
        .unwrap();
        assert_eq!(cfg.method, Method::Uft);
        assert_eq!(cfg.task, TaskSource::Fixture { fixture: Fixture::Reference });
        assert_eq!(cfg.uft.iterations, 50);
        assert_eq!(cfg.uft.context_size, TrainConfig::default().context_size);
        assert_eq!(cfg.context_sizes(), vec![1, 4]);
        assert_eq!(cfg.gammas(), vec![0.0, 10.0]);
    }

    #[test]
    fn synthetic_and_jsonl_sources() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            method = "ZERO_SHOT"
            [task]
            source = "synthetic"
            [task.synthetic]
            seed = 3
            num_instances = 20
            num_answers = 3
            dim = 2
            zero_shot_noise = 0.0
            kernel_bandwidth = 1.0
            context_strength = 2.0
            recency_decay = 1.0
            separation = 4.0
            cluster_spread = 1.0
            logit_scale = 1.0
            "#,
        )
        .unwrap();
        assert!(matches!(cfg.task, TaskSource::Synthetic { ref synthetic } if synthetic.num_answers == 3));
        let mut cfg = ExperimentConfig::from_toml(
            "method = \"UICL\"\n[task]\nsource = \"jsonl\"\npath = \"data/sst2.jsonl\"\ntemplate = \"sst2\"\n",
        )
        .unwrap();
        cfg.resolve_paths(Path::new("/cfg"));
        assert!(matches!(&cfg.task, TaskSource::Jsonl { path, .. } if path == Path::new("/cfg/data/sst2.jsonl")));
    }

    #[test]
    fn rejects_bad_configs() {
        let base = "method = \"UFT\"\n[task]\nsource = \"fixture\"\nfixture = \"reference\"\n";
        assert!(ExperimentConfig::from_toml(&format!("seeds = [1, 1]\n{base}")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("seeds = []\n{base}")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}[sweep]\ncontext_size = [0]\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}[uft]\nbogus = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml("method = \"MAGIC\"\n[task]\nsource = \"fixture\"\nfixture = \"reference\"\n").is_err());
        assert!(ExperimentConfig::from_toml("method = \"UFT\"\n[task]\nsource = \"fixture\"\nfixture = \"nope\"\n").is_err());
    }

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(parse_seeds("5, 7,9").unwrap(), vec![5, 7, 9]);
        assert!(parse_seeds("3..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
