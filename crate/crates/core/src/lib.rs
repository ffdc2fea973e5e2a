//! Black-box pixel-level adversarial attacks on image classifiers.
//!
//! The attacks only ever see an [`oracle::Classifier`] through a counted
//! [`oracle::OracleSession`]. The [`nn`] engine supplies a trainable
//! default classifier plus exact gradients for the [`analysis`] tooling.

pub mod analysis;
pub mod attacks;
pub mod dataset;
pub mod error;
pub mod image;
pub mod nn;
pub mod oracle;
pub mod perturb;

pub use attacks::{loc_search_adv, rand_adv, AttackOutcome, LocSearchConfig, RandAdvConfig, ScoreOrder};
pub use error::{Error, Result};
pub use image::{Bounds, Gradient, Image, ImageShape, Label, LabeledImage, PixelLoc};
pub use oracle::{is_good, is_k_misclassified, top_k, Classifier, ConstantOracle, OracleSession, ProbVector};
