//! The `train` command.

use std::path::PathBuf;

use anyhow::{Context, Result};
use log::info;
use pixadv_core::dataset::{self, Normalization, Split};
use pixadv_core::nn::{arch, io as model_io, train_toy, Model, TrainReport};

use crate::config::{Arch, ExperimentConfig};
use crate::experiment::load_split;

pub struct Trained {
    pub model: Model,
    pub report: TrainReport,
    pub model_path: PathBuf,
    pub norm_path: PathBuf,
}

/// Trains the configured architecture on the first `train_limit` training
/// images and evaluates on the first `test_limit` test images. Writes the
/// model and its normalization statistics next to each other.
pub fn train(cfg: &ExperimentConfig) -> Result<Trained> {
    let mut raw = load_split(cfg.dataset, &cfg.data_dir, Split::Train)?;
    if cfg.train_limit > 0 {
        raw = raw.truncated(cfg.train_limit);
    }
    let (train, stats) = dataset::normalize(&raw, Normalization::Fit)?;
    let mut test_raw = load_split(cfg.dataset, &cfg.data_dir, Split::Test)?;
    if cfg.test_limit > 0 {
        test_raw = test_raw.truncated(cfg.test_limit);
    }
    let (test, _) = dataset::normalize(&test_raw, Normalization::Given(stats.clone()))?;

    let model = match cfg.arch {
        Arch::SmallConv => arch::small_conv(raw.shape(), raw.num_classes(), cfg.seed)?,
        Arch::Linear => arch::linear(raw.shape(), raw.num_classes(), cfg.seed)?,
    };
    info!("training {} parameters on {} images", model.param_count(), train.len());
    let (model, report) = train_toy(model, &train, Some(&test), &cfg.training())?;

    if let Some(dir) = cfg.model.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    model_io::save(&model, &cfg.model)?;
    let norm_path = cfg.norm_path();
    stats.save(&norm_path)?;
    Ok(Trained {
        model,
        report,
        model_path: cfg.model.clone(),
        norm_path,
    })
}
