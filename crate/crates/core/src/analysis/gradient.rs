use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::image::{Gradient, Image, Label, PixelLoc};
use crate::oracle::OracleSession;

pub const DEFAULT_FD_STEP: f32 = 1e-4;

const BATCH: usize = 256;

/// Central-difference estimate of `∂ o_label / ∂ input` from oracle queries
/// only. Costs `2·ℓ·w·h` queries.
///
/// The divisor is the step actually realized in `f32`, not the nominal one.
pub fn fd_gradient(session: &mut OracleSession<'_>, img: &Image, label: Label, step: f32) -> Result<Gradient> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Parameter(format!("step must be positive, got {step}")));
    }
    if !img.is_valid() {
        return Err(Error::Precondition("image is outside its bounds".into()));
    }
    if label.index() >= session.num_classes() {
        return Err(Error::Parameter(format!("label {label} out of range")));
    }
    let n = img.data().len();
    let mut values = Vec::with_capacity(n);
    let offsets: Vec<usize> = (0..n).collect();
    for chunk in offsets.chunks(BATCH) {
        let mut probes = Vec::with_capacity(2 * chunk.len());
        let mut spans = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let v = img.data()[i];
            let (hi, lo) = (v + step, v - step);
            probes.push(img.with_coordinate(i, hi)?);
            probes.push(img.with_coordinate(i, lo)?);
            spans.push(hi as f64 - lo as f64);
        }
        let probs = session.query_batch(&probes)?;
        for (pair, span) in probs.chunks_exact(2).zip(spans) {
            values.push((pair[0].prob(label) - pair[1].prob(label)) / span);
        }
    }
    Gradient::new(img.shape(), values)
}

/// Per-pixel maximum over channels of the absolute gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major scores.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, loc: PixelLoc) -> f64 {
        self.values[loc.plane_index(self.width)]
    }

    /// The `⌈fraction·w·h⌉` highest-scoring pixels; ties go to the earlier
    /// pixel in row-major order.
    pub fn top(&self, fraction: f64) -> Result<BTreeSet<PixelLoc>> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::Parameter(format!("top fraction {fraction} outside (0, 1)")));
        }
        let count = (fraction * self.values.len() as f64).ceil() as usize;
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]));
        Ok(order
            .into_iter()
            .take(count)
            .map(|i| PixelLoc::from_plane_index(i, self.width))
            .collect())
    }
}

pub fn saliency_map(grad: &Gradient) -> SaliencyMap {
    let shape = grad.shape();
    let plane = shape.pixels();
    let values = (0..plane)
        .map(|i| {
            (0..shape.channels)
                .map(|c| grad.values()[c * plane + i].abs())
                .fold(0.0, f64::max)
        })
        .collect();
    SaliencyMap {
        width: shape.width,
        height: shape.height,
        values,
    }
}

/// One-sample proportion test statistic `(observed − expected) / √(expected·(1−expected)/n)`.
pub fn proportion_z(observed: f64, expected: f64, n: usize) -> Result<f64> {
    if n == 0 || !(expected > 0.0 && expected < 1.0) {
        return Err(Error::Parameter(format!(
            "proportion test needs n > 0 and 0 < p0 < 1, got n = {n}, p0 = {expected}"
        )));
    }
    Ok((observed - expected) / (expected * (1.0 - expected) / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Overlap {
    /// Fraction of perturbed pixels inside the top saliency set.
    pub overlap: f64,
    pub z: f64,
    pub top_size: usize,
}

/// How many of `perturbed` fall into the top `top_fraction` of `map`,
/// with the Z statistic against the random-placement rate `top_fraction`.
pub fn overlap_stat(perturbed: &BTreeSet<PixelLoc>, map: &SaliencyMap, top_fraction: f64) -> Result<Overlap> {
    if perturbed.is_empty() {
        return Err(Error::Parameter("overlap needs at least one perturbed pixel".into()));
    }
    let top = map.top(top_fraction)?;
    let hits = perturbed.intersection(&top).count();
    let overlap = hits as f64 / perturbed.len() as f64;
    Ok(Overlap {
        overlap,
        z: proportion_z(overlap, top_fraction, perturbed.len())?,
        top_size: top.len(),
    })
}
