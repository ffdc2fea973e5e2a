//! Black-box attacks: random critical-pixel search and greedy local search.

mod loc_search;
mod rand_adv;
pub mod transcript;

use std::collections::BTreeSet;

use crate::image::{Image, PixelLoc};
use crate::oracle::ProbVector;

pub use loc_search::{loc_search_adv, neighborhood, LocSearchConfig, RoundRecord, ScoreOrder};
pub use rand_adv::{rand_adv, RandAdvConfig, TrialRecord};

/// What an attack produced on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub success: bool,
    /// The misclassified image; absent on failure.
    pub adversarial: Option<Image>,
    /// Oracle output for `adversarial`.
    pub adversarial_probs: Option<ProbVector>,
    /// Whether `adversarial` lies inside the image bounds.
    pub valid: bool,
    /// Rounds (local search) or trials (random search) executed.
    pub rounds_used: usize,
    pub queries_used: u64,
    pub perturbed_pixels: BTreeSet<PixelLoc>,
    /// Random search only: critical trials / trials.
    pub critical_fraction: Option<f64>,
    /// Seconds.
    pub wall_time: f64,
    pub rounds: Vec<RoundRecord>,
    pub trials: Vec<TrialRecord>,
}

fn locations_from_indices(indices: impl IntoIterator<Item = usize>, width: usize) -> Vec<PixelLoc> {
    indices
        .into_iter()
        .map(|i| PixelLoc::from_plane_index(i, width))
        .collect()
}
