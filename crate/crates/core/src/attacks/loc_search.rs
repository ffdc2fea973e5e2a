use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{locations_from_indices, AttackOutcome};
use crate::error::{Error, Result};
use crate::image::{Image, ImageShape, Label, LabeledImage, PixelLoc};
use crate::oracle::{top_k, OracleSession};
use crate::perturb::{cyclic_pixels, pert};

/// Order in which candidate scores (true-class probabilities) are ranked
/// before the top `t` are taken.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreOrder {
    /// Lowest true-class probability first, i.e. the probes that decrease
    /// the objective the most.
    #[default]
    Ascending,
    /// Highest true-class probability first.
    Descending,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocSearchConfig {
    /// Initial probe magnitude `p`.
    pub p0: f32,
    /// Cyclic scale, in `[0, 2]`.
    pub r: f32,
    /// Pixels perturbed per round.
    pub t: usize,
    /// Neighborhood half side.
    pub d: usize,
    pub k: usize,
    /// Round cap `R`.
    pub rounds: usize,
    /// Fraction of pixels in the initial random candidate set.
    pub init_fraction: f64,
    /// Rounds during which a selected pixel may not be selected again.
    pub exclusion_window: usize,
    pub p_low: f64,
    pub p_high: f64,
    pub p_step: f32,
    pub p_min: f32,
    pub p_max: f32,
    pub order: ScoreOrder,
    pub seed: u64,
}

impl Default for LocSearchConfig {
    fn default() -> Self {
        Self {
            p0: 0.1,
            r: 1.5,
            t: 5,
            d: 5,
            k: 1,
            rounds: 150,
            init_fraction: 0.10,
            exclusion_window: 30,
            p_low: 0.3,
            p_high: 0.9,
            p_step: 2.0,
            p_min: 0.1,
            p_max: 1000.0,
            order: ScoreOrder::Ascending,
            seed: 0,
        }
    }
}

impl LocSearchConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Parameter(msg));
        if !(0.0..=2.0).contains(&self.r) {
            return bad(format!("r must lie in [0, 2], got {}", self.r));
        }
        if self.t == 0 || self.rounds == 0 {
            return bad("t and the round cap must be positive".into());
        }
        if self.k == 0 || self.k > num_classes {
            return bad(format!("k = {} outside 1..={num_classes}", self.k));
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return bad(format!("init_fraction {} outside (0, 1]", self.init_fraction));
        }
        if !(self.p_step > 0.0 && self.p_min > 0.0 && self.p_min <= self.p_max && self.p_max.is_finite()) {
            return bad("p_step, p_min and p_max must be positive with p_min <= p_max".into());
        }
        if !self.p0.is_finite() {
            return bad(format!("p0 must be finite, got {}", self.p0));
        }
        if self.p_low > self.p_high {
            return bad(format!("p_low {} exceeds p_high {}", self.p_low, self.p_high));
        }
        Ok(())
    }
}

/// Audit record of one local-search round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Probe magnitude used for scoring in this round.
    pub p: f32,
    /// Neighborhood size before exclusion.
    pub neighborhood: usize,
    /// Locations actually scored.
    pub candidates: usize,
    /// Oracle queries issued in this round.
    pub queries: u64,
    /// Candidate set was empty after exclusion and was redrawn at random.
    pub reseeded: bool,
    pub selected: Vec<PixelLoc>,
    /// Mean true-class probability over the selected probes.
    pub o_bar: f64,
    /// True-class probability of the image after this round.
    pub true_prob: f64,
    pub top_k: Vec<Label>,
}

/// Union of the closed `(2d+1)`-squares around `prev`, clipped to the image.
pub fn neighborhood(prev: &BTreeSet<PixelLoc>, d: usize, width: usize, height: usize) -> BTreeSet<PixelLoc> {
    let mut out = BTreeSet::new();
    for loc in prev {
        let (a, b) = (loc.x as usize, loc.y as usize);
        for y in b.saturating_sub(d).max(1)..=(b + d).min(height) {
            for x in a.saturating_sub(d).max(1)..=(a + d).min(width) {
                out.insert(PixelLoc::new(x as u32, y as u32));
            }
        }
    }
    out
}

fn random_locations(rng: &mut ChaCha8Rng, pool: &[PixelLoc], count: usize) -> BTreeSet<PixelLoc> {
    index::sample(rng, pool.len(), count.min(pool.len()))
        .into_iter()
        .map(|i| pool[i])
        .collect()
}

/// Greedy local search for a k-misclassified image.
///
/// Each round probes every eligible candidate location with [`pert`], ranks
/// the probes by true-class probability (see [`ScoreOrder`]), applies
/// [`cyclic_pixels`] to the first `t`, and stops as soon as the true label
/// leaves the top `k`. The next round's candidates are the neighborhood of
/// the pixels just selected.
pub fn loc_search_adv(
    session: &mut OracleSession<'_>,
    item: &LabeledImage,
    cfg: &LocSearchConfig,
) -> Result<AttackOutcome> {
    let start = Instant::now();
    cfg.validate(session.num_classes())?;
    if !item.image.is_valid() {
        return Err(Error::Precondition("input image is outside its bounds".into()));
    }
    if item.label.index() >= session.num_classes() {
        return Err(Error::Parameter(format!("label {} out of range", item.label)));
    }
    let shape: ImageShape = item.image.shape();
    let (w, h) = (shape.width, shape.height);
    let c = item.label;
    let queries_before = session.query_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let init_count = ((cfg.init_fraction * shape.pixels() as f64).ceil() as usize).clamp(1, shape.pixels());
    let mut candidates: BTreeSet<PixelLoc> =
        locations_from_indices(index::sample(&mut rng, shape.pixels(), init_count), w)
            .into_iter()
            .collect();

    let mut current: Image = item.image.clone();
    let mut p = cfg.p0;
    let mut last_selected: BTreeMap<PixelLoc, usize> = BTreeMap::new();
    let mut perturbed = BTreeSet::new();
    let mut rounds = Vec::new();
    let mut success = None;

    for round in 1..=cfg.rounds {
        let round_start = session.query_count();
        let excluded = |loc: &PixelLoc| {
            last_selected
                .get(loc)
                .is_some_and(|&j| round - j <= cfg.exclusion_window)
        };
        let neighborhood_size = candidates.len();
        let mut eligible: Vec<PixelLoc> = candidates.iter().copied().filter(|l| !excluded(l)).collect();
        let reseeded = eligible.is_empty();
        if reseeded {
            let pool: Vec<PixelLoc> = shape.locations().filter(|l| !excluded(l)).collect();
            if pool.is_empty() {
                break;
            }
            eligible = random_locations(&mut rng, &pool, init_count).into_iter().collect();
        }

        let probes = eligible
            .iter()
            .map(|&loc| pert(&current, p, loc))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<f64> = session
            .query_batch(&probes)?
            .iter()
            .map(|probs| probs.prob(c))
            .collect();
        drop(probes);

        let mut ranked: Vec<usize> = (0..eligible.len()).collect();
        match cfg.order {
            ScoreOrder::Descending => ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a])),
            ScoreOrder::Ascending => ranked.sort_by(|&a, &b| scores[a].total_cmp(&scores[b])),
        }
        ranked.truncate(cfg.t);
        let selected: BTreeSet<PixelLoc> = ranked.iter().map(|&i| eligible[i]).collect();
        let o_bar = ranked.iter().map(|&i| scores[i]).sum::<f64>() / ranked.len() as f64;

        current = cyclic_pixels(&current, cfg.r, &selected)?;
        debug_assert!(current.is_valid());
        let probs = session.query(&current)?;
        let top = top_k(&probs, cfg.k)?;

        for &loc in &selected {
            last_selected.insert(loc, round);
            perturbed.insert(loc);
        }
        rounds.push(RoundRecord {
            round,
            p,
            neighborhood: neighborhood_size,
            candidates: eligible.len(),
            queries: session.query_count() - round_start,
            reseeded,
            selected: ranked.iter().map(|&i| eligible[i]).collect(),
            o_bar,
            true_prob: probs.prob(c),
            top_k: top.clone(),
        });

        if !top.contains(&c) {
            success = Some(probs);
            break;
        }
        if o_bar > cfg.p_high {
            p *= cfg.p_step;
        } else if o_bar < cfg.p_low {
            p /= cfg.p_step;
        }
        p = p.clamp(cfg.p_min, cfg.p_max);
        candidates = neighborhood(&selected, cfg.d, w, h);
    }

    let valid = current.is_valid();
    let is_success = success.is_some();
    Ok(AttackOutcome {
        success: is_success,
        adversarial: is_success.then_some(current),
        adversarial_probs: success,
        valid,
        rounds_used: rounds.len(),
        queries_used: session.query_count() - queries_before,
        perturbed_pixels: perturbed,
        critical_fraction: None,
        wall_time: start.elapsed().as_secs_f64(),
        rounds,
        trials: Vec::new(),
    })
}
