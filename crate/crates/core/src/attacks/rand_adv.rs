use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{locations_from_indices, AttackOutcome};
use crate::error::{Error, Result};
use crate::image::{LabeledImage, PixelLoc};
use crate::oracle::{is_k_misclassified, OracleSession};
use crate::perturb::pert_set;

const BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandAdvConfig {
    pub p: f32,
    /// Trial budget `U`.
    pub budget: usize,
    /// Distinct pixels perturbed per trial.
    pub set_size: usize,
    pub seed: u64,
}

impl Default for RandAdvConfig {
    fn default() -> Self {
        Self {
            p: 100.0,
            budget: 392,
            set_size: 1,
            seed: 0,
        }
    }
}

/// One random trial: the locations perturbed and whether the result was
/// 1-misclassified.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub locations: Vec<PixelLoc>,
    pub critical: bool,
}

/// Runs `budget` independent trials, each perturbing `set_size` distinct
/// random pixels of the original image to `p · sign(value)`.
///
/// Every trial is evaluated. The first critical image (possibly outside the
/// bounds, see [`AttackOutcome::valid`]) is returned as the adversarial one.
pub fn rand_adv(
    session: &mut OracleSession<'_>,
    item: &LabeledImage,
    cfg: &RandAdvConfig,
) -> Result<AttackOutcome> {
    let start = Instant::now();
    let shape = item.image.shape();
    if cfg.budget == 0 {
        return Err(Error::Parameter("trial budget must be at least 1".into()));
    }
    if cfg.set_size == 0 || cfg.set_size > shape.pixels() {
        return Err(Error::Parameter(format!(
            "set size {} outside 1..={}",
            cfg.set_size,
            shape.pixels()
        )));
    }
    if !cfg.p.is_finite() {
        return Err(Error::Parameter(format!("p must be finite, got {}", cfg.p)));
    }
    if item.label.index() >= session.num_classes() {
        return Err(Error::Parameter(format!("label {} out of range", item.label)));
    }

    let queries_before = session.query_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let trial_sets: Vec<Vec<PixelLoc>> = (0..cfg.budget)
        .map(|_| {
            let mut locs =
                locations_from_indices(index::sample(&mut rng, shape.pixels(), cfg.set_size), shape.width);
            locs.sort_unstable();
            locs
        })
        .collect();

    let mut trials = Vec::with_capacity(cfg.budget);
    let mut first_hit = None;
    for chunk in trial_sets.chunks(BATCH) {
        let images = chunk
            .iter()
            .map(|locs| pert_set(&item.image, cfg.p, locs))
            .collect::<Result<Vec<_>>>()?;
        let probs = session.query_batch(&images)?;
        for ((locs, image), probs) in chunk.iter().zip(images).zip(probs) {
            let critical = is_k_misclassified(&probs, item.label, 1)?;
            if critical && first_hit.is_none() {
                first_hit = Some((image, probs, locs.clone()));
            }
            trials.push(TrialRecord {
                locations: locs.clone(),
                critical,
            });
        }
    }

    let hits = trials.iter().filter(|t| t.critical).count();
    let (adversarial, adversarial_probs, perturbed_pixels) = match first_hit {
        Some((img, probs, locs)) => (Some(img), Some(probs), locs.into_iter().collect()),
        None => (None, None, BTreeSet::new()),
    };
    Ok(AttackOutcome {
        success: hits > 0,
        valid: adversarial.as_ref().is_some_and(|img| img.is_valid()),
        adversarial,
        adversarial_probs,
        rounds_used: cfg.budget,
        queries_used: session.query_count() - queries_before,
        perturbed_pixels,
        critical_fraction: Some(hits as f64 / cfg.budget as f64),
        wall_time: start.elapsed().as_secs_f64(),
        rounds: Vec::new(),
        trials,
    })
}
