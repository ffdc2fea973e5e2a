use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{BatchNorm, Conv2d, Dense, Layer, MaxPool, Padding, ParamGrads, TensorShape};
use crate::error::{Error, Result};
use crate::image::{Gradient, Image, ImageShape, Label};
use crate::oracle::{Classifier, ProbVector};

/// A feed-forward classifier ending in a single softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    input: ImageShape,
    num_classes: usize,
    layers: Vec<Layer>,
    /// `shapes[i]` is the input of layer `i`; the last entry is the output.
    shapes: Vec<TensorShape>,
}

/// Activations recorded during a forward pass; `values[0]` is the input and
/// the last entry the probabilities.
pub(crate) struct Trace {
    pub values: Vec<Vec<f64>>,
}

impl Trace {
    pub fn probs(&self) -> &[f64] {
        self.values.last().expect("trace is never empty")
    }
}

impl Model {
    pub fn new(input: ImageShape, num_classes: usize, layers: Vec<Layer>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Parameter("model needs at least one class".into()));
        }
        match layers.iter().position(|l| matches!(l, Layer::Softmax)) {
            Some(i) if i + 1 == layers.len() => {}
            _ => {
                return Err(Error::Format(
                    "softmax must appear exactly once, as the final layer".into(),
                ))
            }
        }
        let mut shapes = vec![TensorShape::new(input.channels, input.height, input.width)];
        for layer in &layers {
            layer.check_params()?;
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        let out = shapes.last().unwrap().len();
        if out != num_classes {
            return Err(Error::shape(format!("{num_classes} outputs"), format!("{out} outputs")));
        }
        Ok(Self {
            input,
            num_classes,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> ImageShape {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Activation shapes, starting with the input.
    pub fn shapes(&self) -> &[TensorShape] {
        &self.shapes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    fn check_input(&self, img: &Image) -> Result<()> {
        if img.shape() != self.input {
            return Err(Error::shape(self.input, img.shape()));
        }
        Ok(())
    }

    pub(crate) fn trace(&self, img: &Image) -> Result<Trace> {
        self.check_input(img)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(img.data().iter().map(|&v| v as f64).collect::<Vec<f64>>());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; self.shapes[i + 1].len()];
            layer.forward(&values[i], self.shapes[i], &mut out)?;
            if matches!(layer, Layer::Softmax) && out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("softmax input".into()));
            }
            values.push(out);
        }
        let logits = &values[values.len() - 2];
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("logits".into()));
        }
        Ok(Trace { values })
    }

    /// Class probabilities for `img`.
    pub fn forward(&self, img: &Image) -> Result<ProbVector> {
        ProbVector::new(self.trace(img)?.values.pop().unwrap())
    }

    /// Backpropagates a gradient given at the logits (the softmax input).
    /// Returns the input gradient and, if `want_params`, per-layer parameter
    /// gradients (`None` for layers without trainable parameters).
    pub(crate) fn backward_from_logits(
        &self,
        trace: &Trace,
        grad_logits: Vec<f64>,
        want_params: bool,
    ) -> Result<(Vec<f64>, Vec<Option<ParamGrads>>)> {
        let n = self.layers.len();
        let mut params: Vec<Option<ParamGrads>> = if want_params {
            self.layers.iter().map(Layer::zero_grads).collect()
        } else {
            vec![None; n]
        };
        let mut grad = grad_logits;
        for i in (0..n - 1).rev() {
            let mut grad_in = vec![0.0; self.shapes[i].len()];
            self.layers[i].backward(
                &trace.values[i],
                &trace.values[i + 1],
                self.shapes[i],
                &grad,
                &mut grad_in,
                params[i].as_mut(),
            )?;
            grad = grad_in;
        }
        Ok((grad, params))
    }

    /// `∂ o_label / ∂ input` by backpropagation.
    pub fn analytic_gradient(&self, img: &Image, label: Label) -> Result<Gradient> {
        let trace = self.trace(img)?;
        let p = trace.probs();
        let c = self.check_label(label)?;
        let grad_logits = (0..p.len())
            .map(|j| p[c] * (if j == c { 1.0 } else { 0.0 } - p[j]))
            .collect();
        let (g, _) = self.backward_from_logits(&trace, grad_logits, false)?;
        Gradient::new(img.shape(), g)
    }

    /// Cross-entropy `−ln o_label` and its gradient with respect to the input.
    pub fn loss_gradient(&self, img: &Image, label: Label) -> Result<(f64, Gradient)> {
        let trace = self.trace(img)?;
        let c = self.check_label(label)?;
        let (loss, grad_logits) = cross_entropy_logit_grad(trace.probs(), c);
        let (g, _) = self.backward_from_logits(&trace, grad_logits, false)?;
        Ok((loss, Gradient::new(img.shape(), g)?))
    }

    fn check_label(&self, label: Label) -> Result<usize> {
        if label.index() >= self.num_classes {
            return Err(Error::Parameter(format!(
                "label {label} outside 1..={}",
                self.num_classes
            )));
        }
        Ok(label.index())
    }

    /// Equivalent model with every batch-norm layer folded into the
    /// convolution or dense layer right before it. Batch-norm layers in any
    /// other position are kept.
    pub fn fold_batch_norm(&self) -> Result<Model> {
        let mut layers: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if let Layer::BatchNorm(bn) = layer {
                let affine = bn.affine();
                match layers.last_mut() {
                    Some(Layer::Conv2d(conv)) => {
                        let per_out = conv.in_channels * conv.kernel * conv.kernel;
                        fold_into(&mut conv.weights, &mut conv.bias, per_out, &affine);
                        continue;
                    }
                    Some(Layer::Dense(dense)) if dense.outputs == bn.channels => {
                        let per_out = dense.inputs;
                        fold_into(&mut dense.weights, &mut dense.bias, per_out, &affine);
                        continue;
                    }
                    _ => {}
                }
            }
            layers.push(layer.clone());
        }
        Model::new(self.input, self.num_classes, layers)
    }

    /// Human-readable summary of the architecture.
    pub fn describe(&self) -> String {
        let mut out = format!(
            "input {} -> {} classes, {} parameters\n",
            self.input,
            self.num_classes,
            self.param_count()
        );
        for (i, layer) in self.layers.iter().enumerate() {
            let detail = match layer {
                Layer::Conv2d(c) => format!(
                    " {}->{} kernel {} stride {} {:?}",
                    c.in_channels, c.out_channels, c.kernel, c.stride, c.padding
                ),
                Layer::Dense(d) => format!(" {}->{}", d.inputs, d.outputs),
                Layer::MaxPool(p) => format!(" size {} stride {}", p.size, p.stride),
                Layer::BatchNorm(b) => format!(" {} channels eps {}", b.channels, b.eps),
                Layer::Relu | Layer::Softmax => String::new(),
            };
            out.push_str(&format!(
                "  [{i}] {}{detail}: {} -> {}\n",
                layer.kind(),
                self.shapes[i],
                self.shapes[i + 1]
            ));
        }
        out
    }
}

fn fold_into(weights: &mut [f32], bias: &mut [f32], per_out: usize, affine: &[(f64, f64)]) {
    for (o, &(scale, shift)) in affine.iter().enumerate() {
        for w in &mut weights[o * per_out..(o + 1) * per_out] {
            *w = (*w as f64 * scale) as f32;
        }
        bias[o] = (bias[o] as f64 * scale + shift) as f32;
    }
}

/// Loss `−ln p_c` and `∂loss/∂logits = p − e_c`.
pub(crate) fn cross_entropy_logit_grad(probs: &[f64], c: usize) -> (f64, Vec<f64>) {
    let loss = -probs[c].max(f64::MIN_POSITIVE).ln();
    let grad = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j == c { p - 1.0 } else { p })
        .collect();
    (loss, grad)
}

impl Classifier for Model {
    fn input_shape(&self) -> ImageShape {
        self.input
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.trace(image)?.values.pop().unwrap())
    }
}

/// Incremental construction of a [`Model`] with seeded uniform
/// `[−1/√fan_in, 1/√fan_in]` weights and zero biases.
pub struct ModelBuilder {
    input: ImageShape,
    current: TensorShape,
    layers: Vec<Layer>,
    rng: ChaCha8Rng,
    error: Option<Error>,
}

impl ModelBuilder {
    pub fn new(input: ImageShape, seed: u64) -> Self {
        Self {
            input,
            current: TensorShape::new(input.channels, input.height, input.width),
            layers: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            error: None,
        }
    }

    fn push(mut self, layer: Layer) -> Self {
        if self.error.is_some() {
            return self;
        }
        match layer.output_shape(self.current) {
            Ok(next) => {
                self.current = next;
                self.layers.push(layer);
            }
            Err(e) => self.error = Some(e),
        }
        self
    }

    fn uniform(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let s = 1.0 / (fan_in as f64).sqrt();
        (0..n).map(|_| self.rng.random_range(-s..=s) as f32).collect()
    }

    pub fn conv(mut self, out_channels: usize, kernel: usize, stride: usize, padding: Padding) -> Self {
        let in_channels = self.current.channels;
        let fan_in = in_channels * kernel * kernel;
        let weights = self.uniform(out_channels * fan_in, fan_in);
        self.push(Layer::Conv2d(Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
            bias: vec![0.0; out_channels],
        }))
    }

    pub fn dense(mut self, outputs: usize) -> Self {
        let inputs = self.current.len();
        let weights = self.uniform(outputs * inputs, inputs);
        self.push(Layer::Dense(Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }))
    }

    pub fn relu(self) -> Self {
        self.push(Layer::Relu)
    }

    pub fn max_pool(self, size: usize, stride: usize) -> Self {
        self.push(Layer::MaxPool(MaxPool { size, stride }))
    }

    /// Batch norm with identity statistics; callers set real statistics on
    /// the built model.
    pub fn batch_norm(self) -> Self {
        let channels = self.current.channels;
        self.push(Layer::BatchNorm(BatchNorm {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            eps: 1e-5,
        }))
    }

    /// Appends the final softmax and validates the whole model.
    pub fn softmax(self) -> Result<Model> {
        let this = self.push(Layer::Softmax);
        if let Some(e) = this.error {
            return Err(e);
        }
        let classes = this.current.len();
        Model::new(this.input, classes, this.layers)
    }
}

/// Reference architectures used by the CLI and tests.
pub mod arch {
    use super::*;

    /// Two 3×3 valid convolutions (8 and 16 maps) with ReLU and 2×2 pooling,
    /// then a dense layer. About 5.4k parameters on 28×28 inputs.
    pub fn small_conv(input: ImageShape, num_classes: usize, seed: u64) -> Result<Model> {
        ModelBuilder::new(input, seed)
            .conv(8, 3, 1, Padding::Valid)
            .relu()
            .max_pool(2, 2)
            .conv(16, 3, 1, Padding::Valid)
            .relu()
            .max_pool(2, 2)
            .dense(num_classes)
            .softmax()
    }

    /// Multinomial logistic regression.
    pub fn linear(input: ImageShape, num_classes: usize, seed: u64) -> Result<Model> {
        ModelBuilder::new(input, seed).dense(num_classes).softmax()
    }

    /// Random initialization with a small uniform bias, so that ReLUs are not
    /// all active at zero input. Used for gradient checks.
    pub fn randomized_biases(mut model: Model, seed: u64, scale: f32) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in model.layers_mut() {
            let bias = match layer {
                Layer::Conv2d(c) => &mut c.bias,
                Layer::Dense(d) => &mut d.bias,
                _ => continue,
            };
            for b in bias.iter_mut() {
                *b = rng.random_range(-scale..=scale);
            }
        }
        model
    }
}
