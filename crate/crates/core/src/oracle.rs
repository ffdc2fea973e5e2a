//! Black-box classifier access.
//!
//! An attack sees a classifier only through an [`OracleSession`]: it submits
//! images and receives probability vectors, and every submission is counted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, ImageShape, Label, LabeledImage};

/// Allowed deviation of `Σ oⱼ` from 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

/// Output of one classifier query: `(o₁, …, o_C)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Rejects vectors with entries outside `[0, 1]` or a sum further than
    /// [`PROB_SUM_TOLERANCE`] from 1. No renormalization is attempted.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Protocol("empty probability vector".into()));
        }
        if let Some((j, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p >= 0.0 && **p <= 1.0))
        {
            return Err(Error::Protocol(format!("probability o_{} = {p} outside [0, 1]", j + 1)));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::Protocol(format!("probabilities sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// `o_label`.
    pub fn prob(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    /// Most likely label (lowest index on ties).
    pub fn argmax(&self) -> Label {
        self.ranking()[0]
    }

    /// Probability of the most likely label.
    pub fn confidence(&self) -> f64 {
        self.prob(self.argmax())
    }

    /// All labels by decreasing probability, ties by increasing label.
    fn ranking(&self) -> Vec<Label> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx.into_iter().map(Label::from_index).collect()
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.0.len() {
            return Err(Error::Parameter(format!(
                "k = {k} outside 1..={}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

/// The `k` most likely labels in decreasing probability order, ties broken
/// towards the lower label.
pub fn top_k(probs: &ProbVector, k: usize) -> Result<Vec<Label>> {
    probs.check_k(k)?;
    let mut ranking = probs.ranking();
    ranking.truncate(k);
    Ok(ranking)
}

/// True iff `true_label` is not among the top `k` labels.
pub fn is_k_misclassified(probs: &ProbVector, true_label: Label, k: usize) -> Result<bool> {
    if true_label.index() >= probs.num_classes() {
        return Err(Error::Parameter(format!(
            "label {true_label} outside 1..={}",
            probs.num_classes()
        )));
    }
    Ok(!top_k(probs, k)?.contains(&true_label))
}

/// Anything that maps an image to class probabilities.
///
/// LocSearchAdv only reads the true-class score and the top-k ranking, but the
/// contract hands over the full vector.
pub trait Classifier: Send + Sync {
    fn input_shape(&self) -> ImageShape;

    fn num_classes(&self) -> usize;

    /// Raw class probabilities for a correctly-shaped image.
    fn predict(&self, image: &Image) -> Result<Vec<f64>>;
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn input_shape(&self) -> ImageShape {
        (**self).input_shape()
    }

    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn predict(&self, image: &Image) -> Result<Vec<f64>> {
        (**self).predict(image)
    }
}

/// A classifier that returns the same vector for every input.
#[derive(Clone, Debug)]
pub struct ConstantOracle {
    shape: ImageShape,
    probs: Vec<f64>,
}

impl ConstantOracle {
    pub fn new(shape: ImageShape, probs: Vec<f64>) -> Result<Self> {
        ProbVector::new(probs.clone())?;
        Ok(Self { shape, probs })
    }

    /// All mass on `label`.
    pub fn certain(shape: ImageShape, num_classes: usize, label: Label) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[label.index()] = 1.0;
        Self { shape, probs }
    }
}

impl Classifier for ConstantOracle {
    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.probs.len()
    }

    fn predict(&self, _image: &Image) -> Result<Vec<f64>> {
        Ok(self.probs.clone())
    }
}

/// Counted query access to a classifier.
pub struct OracleSession<'a> {
    classifier: &'a dyn Classifier,
    queries: u64,
    parallel: bool,
}

impl<'a> OracleSession<'a> {
    pub fn new(classifier: &'a dyn Classifier) -> Self {
        Self {
            classifier,
            queries: 0,
            parallel: true,
        }
    }

    /// Evaluate batches sequentially instead of on the rayon pool.
    pub fn sequential(mut self) -> Self {
        self.parallel = false;
        self
    }

    pub fn query_count(&self) -> u64 {
        self.queries
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn input_shape(&self) -> ImageShape {
        self.classifier.input_shape()
    }

    pub fn query(&mut self, image: &Image) -> Result<ProbVector> {
        self.check_shape(image)?;
        self.queries += 1;
        self.checked_predict(image)
    }

    /// Queries every image; counts `images.len()` queries and returns the
    /// results in input order.
    pub fn query_batch(&mut self, images: &[Image]) -> Result<Vec<ProbVector>> {
        for image in images {
            self.check_shape(image)?;
        }
        self.queries += images.len() as u64;
        if self.parallel && images.len() > 1 {
            images.par_iter().map(|img| self.checked_predict(img)).collect()
        } else {
            images.iter().map(|img| self.checked_predict(img)).collect()
        }
    }

    fn check_shape(&self, image: &Image) -> Result<()> {
        let expected = self.classifier.input_shape();
        if image.shape() != expected {
            return Err(Error::shape(expected, image.shape()));
        }
        Ok(())
    }

    fn checked_predict(&self, image: &Image) -> Result<ProbVector> {
        let probs = self.classifier.predict(image)?;
        let expected = self.classifier.num_classes();
        if probs.len() != expected {
            return Err(Error::Protocol(format!(
                "expected {expected} probabilities, got {}",
                probs.len()
            )));
        }
        ProbVector::new(probs)
    }
}

/// True iff the classifier ranks the true label first. Costs one query.
pub fn is_good(session: &mut OracleSession<'_>, item: &LabeledImage) -> Result<bool> {
    let probs = session.query(&item.image)?;
    Ok(!is_k_misclassified(&probs, item.label, 1)?)
}
