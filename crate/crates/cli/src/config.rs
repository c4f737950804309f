use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use obshte::expanalysis::Interpolation;
use obshte::rng::derive_seed;
use obshte::{DgpSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Every file the pipeline reads or writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Artifact {
    Panel,
    Covariates,
    Experiment,
    Truth,
    Effects,
    Skips,
    Labels,
    Model,
    TrainingLog,
    Scores,
    Strata,
    Figure,
    Analysis,
    Targets,
    RankReport,
}

impl Artifact {
    pub const ALL: [Artifact; 15] = [
        Artifact::Panel,
        Artifact::Covariates,
        Artifact::Experiment,
        Artifact::Truth,
        Artifact::Effects,
        Artifact::Skips,
        Artifact::Labels,
        Artifact::Model,
        Artifact::TrainingLog,
        Artifact::Scores,
        Artifact::Strata,
        Artifact::Figure,
        Artifact::Analysis,
        Artifact::Targets,
        Artifact::RankReport,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Panel => "panel.csv",
            Artifact::Covariates => "covariates.csv",
            Artifact::Experiment => "experiment.csv",
            Artifact::Truth => "truth.csv",
            Artifact::Effects => "effects.csv",
            Artifact::Skips => "skips.csv",
            Artifact::Labels => "labels.csv",
            Artifact::Model => "model.json",
            Artifact::TrainingLog => "training_log.json",
            Artifact::Scores => "scores.csv",
            Artifact::Strata => "strata.csv",
            Artifact::Figure => "figure3.csv",
            Artifact::Analysis => "analysis.json",
            Artifact::Targets => "targets.csv",
            Artifact::RankReport => "rank_report.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Per-artifact locations; anything absent lives in `out_dir`.
    pub overrides: BTreeMap<Artifact, PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            out_dir: PathBuf::from("out"),
            overrides: BTreeMap::new(),
        }
    }
}

impl Paths {
    pub fn get(&self, a: Artifact) -> PathBuf {
        self.overrides
            .get(&a)
            .cloned()
            .unwrap_or_else(|| self.out_dir.join(a.file_name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_strata: usize,
    pub min_obs: usize,
    pub budget_k: usize,
    pub treated_fraction: f64,
    pub interpolation: Interpolation,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            n_strata: 10,
            min_obs: obshte::panel::DEFAULT_MIN_OBS,
            budget_k: 100,
            treated_fraction: 0.05,
            interpolation: Interpolation::Step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Worker cap; absent means one per core.
    pub threads: Option<usize>,
    pub paths: Paths,
    pub dgp: DgpSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
}

/// Values given on the command line or through the environment; each one
/// replaces the corresponding config entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub quantile: Option<f64>,
    pub strata: Option<usize>,
    pub min_obs: Option<usize>,
    pub budget: Option<usize>,
    pub out: Option<PathBuf>,
}

/// The configuration a run actually used, minus where it wrote and how many
/// threads it had, so identical runs echo identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub tool_version: String,
    pub seed: u64,
    pub dgp: DgpSpec,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub pair_sampling_seed: u64,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.threads {
            self.threads = Some(v);
        }
        if let Some(v) = o.quantile {
            self.train.quantile = v;
        }
        if let Some(v) = o.strata {
            self.analysis.n_strata = v;
        }
        if let Some(v) = o.min_obs {
            self.analysis.min_obs = v;
        }
        if let Some(v) = o.budget {
            self.analysis.budget_k = v;
        }
        if let Some(v) = &o.out {
            self.paths.out_dir = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        self.train.validate()?;
        let a = &self.analysis;
        if a.n_strata < 2 {
            bail!("invalid analysis.n_strata: must be at least 2");
        }
        if a.min_obs < 3 {
            bail!("invalid analysis.min_obs: must be at least 3");
        }
        if !(a.treated_fraction > 0.0 && a.treated_fraction < 1.0) {
            bail!("invalid analysis.treated_fraction: must lie in (0, 1)");
        }
        if self.threads == Some(0) {
            bail!("invalid threads: must be at least 1");
        }
        Ok(())
    }

    /// Generator spec seeded from the master seed.
    pub fn dgp_spec(&self) -> DgpSpec {
        DgpSpec {
            seed: derive_seed(self.seed, "dgp", 0),
            ..self.dgp.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train", 0),
            ..self.train.clone()
        }
    }

    pub fn pair_sampling_seed(&self) -> u64 {
        derive_seed(self.seed, "pairs", 0)
    }

    pub fn echo(&self) -> RunEcho {
        RunEcho {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            dgp: self.dgp_spec(),
            train: self.train_config(),
            analysis: self.analysis.clone(),
            pair_sampling_seed: self.pair_sampling_seed(),
        }
    }

    pub fn path(&self, a: Artifact) -> PathBuf {
        self.paths.get(a)
    }
}
