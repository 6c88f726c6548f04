use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cvgan::argen::{DEFAULT_FPT_STEP, DEFAULT_LENGTH};
use cvgan::dataset::{HiMode, SyntheticSpec, DEFAULT_K, DEFAULT_N_FEATURE};
use cvgan::losses::{compose_config, LossConfig, LossTerm, DEFAULT_CONFIG};
use cvgan::metrics::PCA_DIMS;
use cvgan::nets::{NetConfig, Variant};
use cvgan::rulpred::{PredictorKind, PredictorPlan};
use cvgan::trainer::{TrainPlan, DEFAULT_SEEDS};
use cvgan::{Error, Result};
use serde::{Deserialize, Serialize};

/// One run configuration. Every command reads the whole document so that
/// downstream commands can locate upstream run directories.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub train: TrainPlan,
    pub generate: GenerateSection,
    pub evaluate: EvaluateSection,
    pub rul: RulSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// A prepared dataset container; overrides every other source.
    pub container: Option<PathBuf>,
    /// Root holding one directory per bearing.
    pub path: Option<PathBuf>,
    pub bearings: Vec<String>,
    /// FPT snapshot index per bearing, for bearings without a known schedule.
    pub fpt: BTreeMap<String, usize>,
    pub synthetic: Vec<SyntheticSpec>,
    pub k: usize,
    pub n_feature: usize,
    pub hi_mode: HiMode,
    /// Min-max scale every recording jointly before pooling.
    pub normalize: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            container: None,
            path: None,
            bearings: Vec::new(),
            fpt: BTreeMap::new(),
            synthetic: Vec::new(),
            k: DEFAULT_K,
            n_feature: DEFAULT_N_FEATURE,
            hi_mode: HiMode::Piecewise,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub channel_scale: Option<f64>,
    pub latent_dim: Option<usize>,
    /// Checkpoint to continue from instead of a fresh initialisation.
    pub resume: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { variant: Variant::Cvgan, channel_scale: None, latent_dim: None, resume: None }
    }
}

impl ModelSection {
    pub fn net_config(&self, k: usize, n_feature: usize) -> NetConfig {
        let mut cfg = NetConfig::new(self.variant, k, n_feature);
        if let Some(s) = self.channel_scale {
            cfg.channel_scale = s;
        }
        if let Some(d) = self.latent_dim {
            cfg.latent_dim = d;
        }
        cfg
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    /// A named configuration (`conf1` to `conf14`).
    pub config: Option<String>,
    /// Name for a custom term list.
    pub name: Option<String>,
    pub vae: Vec<LossTerm>,
    pub disc: Vec<LossTerm>,
}

impl LossSection {
    pub fn resolve(&self) -> Result<LossConfig> {
        let custom = !self.vae.is_empty() || !self.disc.is_empty();
        match (&self.config, custom) {
            (Some(_), true) => Err(Error::Config("loss: give either `config` or term lists, not both".into())),
            (None, true) => LossConfig::custom(self.name.as_deref().unwrap_or("custom"), &self.vae, &self.disc),
            (c, false) => compose_config(c.as_deref().unwrap_or(DEFAULT_CONFIG)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub length: usize,
    pub fpt_step: usize,
    pub seeds: Vec<u64>,
    /// Lifecycles per seed, one noise stream each.
    pub lifecycles: usize,
    pub checkpoint: Option<PathBuf>,
    pub initial: Option<PathBuf>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            length: DEFAULT_LENGTH,
            fpt_step: DEFAULT_FPT_STEP,
            seeds: vec![DEFAULT_SEEDS[0]],
            lifecycles: 1,
            checkpoint: None,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mmd,
    Fid,
    Mad,
    Psnr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Nar,
    Ar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub metrics: Vec<Metric>,
    pub modes: Vec<EvalMode>,
    pub pca_dims: usize,
    pub bandwidth: f64,
    pub extractor_epochs: usize,
    pub extractor_batch: usize,
    pub extractor_lr: f64,
    /// Compare this dataset container against the real data instead of a model.
    pub generated: Option<PathBuf>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            metrics: vec![Metric::Mmd, Metric::Fid, Metric::Mad, Metric::Psnr],
            modes: vec![EvalMode::Nar, EvalMode::Ar],
            pca_dims: PCA_DIMS,
            bandwidth: 1.0,
            extractor_epochs: 10,
            extractor_batch: 256,
            extractor_lr: 1e-3,
            generated: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RulSection {
    /// Held-out bearing; the first dataset bearing by default.
    pub test: Option<String>,
    /// Training bearings; every other bearing by default.
    pub train: Vec<String>,
    /// `none`, `checkpoint` (the generate run of this config) or a dataset container path.
    pub augmentation: String,
    pub kind: PredictorKind,
    pub seeds: Vec<u64>,
    pub predictor: PredictorPlan,
}

impl Default for RulSection {
    fn default() -> Self {
        Self {
            test: None,
            train: Vec::new(),
            augmentation: "none".into(),
            kind: PredictorKind::Scnn,
            seeds: DEFAULT_SEEDS.to_vec(),
            predictor: PredictorPlan::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok((cfg, text))
    }

    /// Apply a global `--seed` to every seeded section.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.train.seed = s;
            self.generate.seeds = vec![s];
            self.rul.seeds = vec![s];
        }
        self
    }
}
