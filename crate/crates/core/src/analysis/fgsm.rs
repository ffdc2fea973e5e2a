use crate::error::{Error, Result};
use crate::image::{Image, Label, LabeledImage};
use crate::nn::Model;
use crate::oracle::{is_k_misclassified, ProbVector};

pub const DEFAULT_EPS: f32 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct FgsmOutcome {
    /// Candidate of the lowest label that 1-misclassifies, if any.
    pub adversarial: Option<Image>,
    pub adversarial_probs: Option<ProbVector>,
    /// Label `a` whose loss gradient produced `adversarial`.
    pub label_used: Option<Label>,
    pub tried_labels: usize,
    /// Whether the candidate for label `a` (index `a − 1`) 1-misclassifies.
    pub per_label_success: Vec<bool>,
}

fn sign0(v: f64) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Fast gradient sign baseline, swept over every label `a`:
/// `clamp(img + eps · sign(∇ CE(NN(img), a)))`.
pub fn fgsm(model: &Model, item: &LabeledImage, eps: f32) -> Result<FgsmOutcome> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("eps must be non-negative, got {eps}")));
    }
    if !item.image.is_valid() {
        return Err(Error::Precondition("image is outside its bounds".into()));
    }
    let bounds = item.image.bounds();
    let mut out = FgsmOutcome {
        adversarial: None,
        adversarial_probs: None,
        label_used: None,
        tried_labels: model.num_classes(),
        per_label_success: Vec::with_capacity(model.num_classes()),
    };
    for a in (0..model.num_classes()).map(Label::from_index) {
        let (_, grad) = model.loss_gradient(&item.image, a)?;
        let data = item
            .image
            .data()
            .iter()
            .zip(grad.values())
            .map(|(&v, &g)| bounds.clamp(v + eps * sign0(g)))
            .collect();
        let candidate = Image::new(item.image.shape(), data, bounds)?;
        let probs = model.forward(&candidate)?;
        let fooled = is_k_misclassified(&probs, item.label, 1)?;
        out.per_label_success.push(fooled);
        if fooled && out.adversarial.is_none() {
            out.adversarial = Some(candidate);
            out.adversarial_probs = Some(probs);
            out.label_used = Some(a);
        }
    }
    Ok(out)
}
