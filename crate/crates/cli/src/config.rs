//! Experiment configuration: one flat TOML file, overridable from flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pixadv_core::attacks::{LocSearchConfig, RandAdvConfig, ScoreOrder};
use pixadv_core::nn::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn display_name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "MNIST",
            DatasetKind::Cifar10 => "CIFAR10",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    /// The network stored at `model`.
    Model,
    /// A stub that always predicts label 1 with certainty.
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AttackChoice {
    Randadv,
    Locsearch,
    Fgsm,
}

impl AttackChoice {
    pub fn technique(self) -> &'static str {
        match self {
            AttackChoice::Randadv => "RandAdv",
            AttackChoice::Locsearch => "LocSearchAdv",
            AttackChoice::Fgsm => "FGSM",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    SmallConv,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Order {
    Ascending,
    Descending,
}

impl From<Order> for ScoreOrder {
    fn from(o: Order) -> Self {
        match o {
            Order::Ascending => ScoreOrder::Ascending,
            Order::Descending => ScoreOrder::Descending,
        }
    }
}

/// Everything that determines an experiment. Unset keys take the defaults
/// below; see `configs/example.toml` for a documented file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub model: PathBuf,
    /// Normalization file; defaults to the model path with extension `norm`.
    pub norm: Option<PathBuf>,
    pub oracle: OracleKind,
    /// Network name for reports; defaults to the model file stem.
    pub network: Option<String>,
    pub attack: AttackChoice,
    pub k: usize,
    /// Number of good test images to attack.
    pub images: usize,
    /// Only the first `test_limit` test images are eligible (0 = all).
    pub test_limit: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Original/adversarial PNG pairs written for the first successes.
    pub png_pairs: usize,
    /// Worker threads (0 = one per core).
    pub workers: usize,
    /// Per-image saliency overlap of perturbed pixels (model oracle only).
    pub saliency: bool,
    pub saliency_top_fraction: f64,

    pub p0: f32,
    pub r: f32,
    pub t: usize,
    pub d: usize,
    pub rounds: usize,
    pub init_fraction: f64,
    pub exclusion_window: usize,
    pub p_low: f64,
    pub p_high: f64,
    pub p_step: f32,
    pub p_min: f32,
    pub p_max: f32,
    pub order: Order,

    pub p: f32,
    /// RandAdv trial budget (0 = half the pixel count).
    pub budget: usize,
    pub set_size: usize,

    pub eps: f32,

    pub arch: Arch,
    /// Training images used by `train` (0 = all).
    pub train_limit: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ls = LocSearchConfig::default();
        let tr = TrainConfig::default();
        Self {
            dataset: DatasetKind::Mnist,
            data_dir: PathBuf::from("data/mnist"),
            model: PathBuf::from("runs/model.pxnn"),
            norm: None,
            oracle: OracleKind::Model,
            network: None,
            attack: AttackChoice::Locsearch,
            k: 1,
            images: 100,
            test_limit: 0,
            seed: 0,
            out_dir: PathBuf::from("runs/attack"),
            png_pairs: 10,
            workers: 0,
            saliency: false,
            saliency_top_fraction: 0.1,
            p0: ls.p0,
            r: ls.r,
            t: ls.t,
            d: ls.d,
            rounds: ls.rounds,
            init_fraction: ls.init_fraction,
            exclusion_window: ls.exclusion_window,
            p_low: ls.p_low,
            p_high: ls.p_high,
            p_step: ls.p_step,
            p_min: ls.p_min,
            p_max: ls.p_max,
            order: match ls.order {
                ScoreOrder::Ascending => Order::Ascending,
                ScoreOrder::Descending => Order::Descending,
            },
            p: 100.0,
            budget: 0,
            set_size: 1,
            eps: 0.2,
            arch: Arch::SmallConv,
            train_limit: 10_000,
            epochs: tr.epochs,
            learning_rate: tr.learning_rate,
            batch_size: tr.batch_size,
            momentum: tr.momentum,
        }
    }
}

/// Command-line overrides; each flag replaces the file value of the same key.
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct Overrides {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norm: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<String>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackChoice>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[arg(long, short = 'n')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, short = 'o')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub png_pairs: Option<usize>,
    #[arg(long, short = 'j')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saliency: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saliency_top_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p0: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exclusion_window: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_low: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_high: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_step: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_min: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f32>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<Order>,
    #[arg(long, short = 'p')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub set_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f32>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
}

impl ExperimentConfig {
    /// Defaults, then `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let flags = toml::Table::try_from(overrides).context("encoding command-line overrides")?;
        table.extend(flags);
        let cfg: ExperimentConfig = table.try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images == 0 {
            bail!("images must be at least 1");
        }
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.attack != AttackChoice::Locsearch && self.k != 1 {
            bail!("{} measures 1-misclassification; k must be 1", self.attack.technique());
        }
        if self.attack == AttackChoice::Fgsm && self.oracle != OracleKind::Model {
            bail!("FGSM needs gradients and therefore the model oracle");
        }
        if self.saliency && self.oracle != OracleKind::Model {
            bail!("saliency overlap needs the model oracle");
        }
        Ok(())
    }

    pub fn norm_path(&self) -> PathBuf {
        self.norm.clone().unwrap_or_else(|| self.model.with_extension("norm"))
    }

    pub fn network_name(&self) -> String {
        match (&self.network, self.oracle) {
            (Some(n), _) => n.clone(),
            (None, OracleKind::Constant) => "constant".into(),
            (None, OracleKind::Model) => self
                .model
                .file_stem()
                .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Local-search parameters for the image drawn at position `draw`.
    pub fn loc_search(&self, draw: usize) -> LocSearchConfig {
        LocSearchConfig {
            p0: self.p0,
            r: self.r,
            t: self.t,
            d: self.d,
            k: self.k,
            rounds: self.rounds,
            init_fraction: self.init_fraction,
            exclusion_window: self.exclusion_window,
            p_low: self.p_low,
            p_high: self.p_high,
            p_step: self.p_step,
            p_min: self.p_min,
            p_max: self.p_max,
            order: self.order.into(),
            seed: image_seed(self.seed, draw),
        }
    }

    pub fn rand_adv(&self, draw: usize, pixels: usize) -> RandAdvConfig {
        RandAdvConfig {
            p: self.p,
            budget: if self.budget == 0 { pixels.div_ceil(2) } else { self.budget },
            set_size: self.set_size,
            seed: image_seed(self.seed, draw),
        }
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }
}

fn image_seed(seed: u64, draw: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(draw as u64)
}
