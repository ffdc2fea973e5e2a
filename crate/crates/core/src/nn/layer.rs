use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation tensor dimensions, stored channel-major then row-major (CHW).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    Valid,
    Same,
}

/// 2-D convolution, weights laid out `[out][in][ky][kx]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Fully connected layer over the flattened input, weights `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool {
    pub size: usize,
    pub stride: usize,
}

/// Inference-mode batch normalization with frozen statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
    pub eps: f32,
}

impl BatchNorm {
    /// Per-channel `(scale, shift)` so that `y = scale·x + shift`.
    pub fn affine(&self) -> Vec<(f64, f64)> {
        (0..self.channels)
            .map(|c| {
                let scale = self.gamma[c] as f64 / (self.var[c] as f64 + self.eps as f64).sqrt();
                (scale, self.beta[c] as f64 - self.mean[c] as f64 * scale)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Dense(Dense),
    Relu,
    MaxPool(MaxPool),
    BatchNorm(BatchNorm),
    Softmax,
}

/// Parameter gradients of a trainable layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub(crate) fn zeros(weights: usize, bias: usize) -> Self {
        Self {
            weights: vec![0.0; weights],
            bias: vec![0.0; bias],
        }
    }

    pub(crate) fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Output indices `o` in `0..out_len` for which `o·stride + offset` lands in
/// `0..in_len`.
fn valid_span(out_len: usize, stride: usize, offset: isize, in_len: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { last / s + 1 };
    let hi = hi.min(out_len as isize);
    (lo as usize, hi.max(lo) as usize)
}

impl Conv2d {
    /// Output shape plus top/left padding.
    pub fn geometry(&self, input: TensorShape) -> Result<(TensorShape, usize, usize)> {
        if input.channels != self.in_channels {
            return Err(Error::shape(
                format!("{} input channels", self.in_channels),
                input,
            ));
        }
        let dim = |len: usize| -> Result<(usize, usize)> {
            match self.padding {
                Padding::Valid => {
                    if len < self.kernel {
                        return Err(Error::shape(
                            format!("spatial size >= kernel {}", self.kernel),
                            input,
                        ));
                    }
                    Ok(((len - self.kernel) / self.stride + 1, 0))
                }
                Padding::Same => {
                    let out = len.div_ceil(self.stride);
                    let total = ((out - 1) * self.stride + self.kernel).saturating_sub(len);
                    Ok((out, total / 2))
                }
            }
        };
        let (oh, pad_top) = dim(input.height)?;
        let (ow, pad_left) = dim(input.width)?;
        Ok((TensorShape::new(self.out_channels, oh, ow), pad_top, pad_left))
    }

    fn weight(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    fn forward(&self, x: &[f64], input: TensorShape, out: &mut [f64]) -> Result<()> {
        let (os, pad_top, pad_left) = self.geometry(input)?;
        let s = self.stride;
        for oc in 0..self.out_channels {
            let plane = &mut out[oc * os.plane()..(oc + 1) * os.plane()];
            plane.fill(self.bias[oc] as f64);
            for ic in 0..self.in_channels {
                let xin = &x[ic * input.plane()..(ic + 1) * input.plane()];
                for ky in 0..self.kernel {
                    let (y0, y1) = valid_span(os.height, s, ky as isize - pad_top as isize, input.height);
                    for kx in 0..self.kernel {
                        let w = self.weights[self.weight(oc, ic, ky, kx)] as f64;
                        let off = kx as isize - pad_left as isize;
                        let (x0, x1) = valid_span(os.width, s, off, input.width);
                        for oy in y0..y1 {
                            let iy = (oy * s) as isize + ky as isize - pad_top as isize;
                            let row_in = &xin[iy as usize * input.width..(iy as usize + 1) * input.width];
                            let row_out = &mut plane[oy * os.width..(oy + 1) * os.width];
                            if s == 1 {
                                let start = (x0 as isize + off) as usize;
                                for (o, &v) in row_out[x0..x1].iter_mut().zip(&row_in[start..]) {
                                    *o += w * v;
                                }
                            } else {
                                for ox in x0..x1 {
                                    row_out[ox] += w * row_in[((ox * s) as isize + off) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn backward(
        &self,
        x: &[f64],
        input: TensorShape,
        grad_out: &[f64],
        grad_in: &mut [f64],
        mut params: Option<&mut ParamGrads>,
    ) -> Result<()> {
        let (os, pad_top, pad_left) = self.geometry(input)?;
        let s = self.stride;
        for oc in 0..self.out_channels {
            let g_plane = &grad_out[oc * os.plane()..(oc + 1) * os.plane()];
            if let Some(p) = params.as_deref_mut() {
                p.bias[oc] += g_plane.iter().sum::<f64>();
            }
            for ic in 0..self.in_channels {
                let xin = &x[ic * input.plane()..(ic + 1) * input.plane()];
                let gin = &mut grad_in[ic * input.plane()..(ic + 1) * input.plane()];
                for ky in 0..self.kernel {
                    let (y0, y1) = valid_span(os.height, s, ky as isize - pad_top as isize, input.height);
                    for kx in 0..self.kernel {
                        let wi = self.weight(oc, ic, ky, kx);
                        let w = self.weights[wi] as f64;
                        let off = kx as isize - pad_left as isize;
                        let (x0, x1) = valid_span(os.width, s, off, input.width);
                        let mut gw = 0.0;
                        for oy in y0..y1 {
                            let iy = (oy * s) as isize + ky as isize - pad_top as isize;
                            let base = iy as usize * input.width;
                            for ox in x0..x1 {
                                let ix = base + ((ox * s) as isize + off) as usize;
                                let g = g_plane[oy * os.width + ox];
                                gin[ix] += w * g;
                                gw += g * xin[ix];
                            }
                        }
                        if let Some(p) = params.as_deref_mut() {
                            p.weights[wi] += gw;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl Dense {
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *slot = self.bias[o] as f64
                + row.iter().zip(x).map(|(&w, &v)| w as f64 * v).sum::<f64>();
        }
    }

    fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        grad_in: &mut [f64],
        params: Option<&mut ParamGrads>,
    ) {
        for (o, &g) in grad_out.iter().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (gi, &w) in grad_in.iter_mut().zip(row) {
                *gi += w as f64 * g;
            }
        }
        if let Some(p) = params {
            for (o, &g) in grad_out.iter().enumerate() {
                p.bias[o] += g;
                let row = &mut p.weights[o * self.inputs..(o + 1) * self.inputs];
                for (gw, &v) in row.iter_mut().zip(x) {
                    *gw += g * v;
                }
            }
        }
    }
}

impl MaxPool {
    fn output_shape(&self, input: TensorShape) -> Result<TensorShape> {
        if input.height < self.size || input.width < self.size {
            return Err(Error::shape(format!("spatial size >= pool {}", self.size), input));
        }
        Ok(TensorShape::new(
            input.channels,
            (input.height - self.size) / self.stride + 1,
            (input.width - self.size) / self.stride + 1,
        ))
    }

    /// Input offset of the (first) maximum for output `(c, oy, ox)`.
    fn argmax(&self, x: &[f64], input: TensorShape, c: usize, oy: usize, ox: usize) -> usize {
        let mut best = usize::MAX;
        let mut best_v = f64::NEG_INFINITY;
        for dy in 0..self.size {
            for dx in 0..self.size {
                let i = c * input.plane()
                    + (oy * self.stride + dy) * input.width
                    + ox * self.stride
                    + dx;
                if best == usize::MAX || x[i] > best_v {
                    best = i;
                    best_v = x[i];
                }
            }
        }
        best
    }

    fn forward(&self, x: &[f64], input: TensorShape, out: &mut [f64]) -> Result<()> {
        let os = self.output_shape(input)?;
        for c in 0..os.channels {
            for oy in 0..os.height {
                for ox in 0..os.width {
                    out[c * os.plane() + oy * os.width + ox] = x[self.argmax(x, input, c, oy, ox)];
                }
            }
        }
        Ok(())
    }

    fn backward(&self, x: &[f64], input: TensorShape, grad_out: &[f64], grad_in: &mut [f64]) -> Result<()> {
        let os = self.output_shape(input)?;
        for c in 0..os.channels {
            for oy in 0..os.height {
                for ox in 0..os.width {
                    grad_in[self.argmax(x, input, c, oy, ox)] += grad_out[c * os.plane() + oy * os.width + ox];
                }
            }
        }
        Ok(())
    }
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::MaxPool(_) => "max_pool",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Softmax => "softmax",
        }
    }

    /// Checks internal parameter lengths.
    pub(crate) fn check_params(&self) -> Result<()> {
        let expect = |what: &str, got: usize, want: usize| -> Result<()> {
            if got == want {
                Ok(())
            } else {
                Err(Error::Format(format!(
                    "{} {what}: expected {want} values, got {got}",
                    self.kind()
                )))
            }
        };
        match self {
            Layer::Conv2d(c) => {
                if c.kernel == 0 || c.stride == 0 || c.in_channels == 0 || c.out_channels == 0 {
                    return Err(Error::Parameter("conv2d dimensions must be positive".into()));
                }
                expect(
                    "weights",
                    c.weights.len(),
                    c.out_channels * c.in_channels * c.kernel * c.kernel,
                )?;
                expect("bias", c.bias.len(), c.out_channels)
            }
            Layer::Dense(d) => {
                if d.inputs == 0 || d.outputs == 0 {
                    return Err(Error::Parameter("dense dimensions must be positive".into()));
                }
                expect("weights", d.weights.len(), d.inputs * d.outputs)?;
                expect("bias", d.bias.len(), d.outputs)
            }
            Layer::MaxPool(p) => {
                if p.size == 0 || p.stride == 0 {
                    return Err(Error::Parameter("max_pool dimensions must be positive".into()));
                }
                Ok(())
            }
            Layer::BatchNorm(b) => {
                for (name, v) in [("gamma", &b.gamma), ("beta", &b.beta), ("mean", &b.mean), ("var", &b.var)] {
                    expect(name, v.len(), b.channels)?;
                }
                if b.var.iter().any(|&v| v as f64 + b.eps as f64 <= 0.0) {
                    return Err(Error::Parameter("batch_norm variance + eps must be positive".into()));
                }
                Ok(())
            }
            Layer::Relu | Layer::Softmax => Ok(()),
        }
    }

    pub fn output_shape(&self, input: TensorShape) -> Result<TensorShape> {
        match self {
            Layer::Conv2d(c) => Ok(c.geometry(input)?.0),
            Layer::Dense(d) => {
                if input.len() != d.inputs {
                    return Err(Error::shape(format!("{} inputs", d.inputs), input));
                }
                Ok(TensorShape::flat(d.outputs))
            }
            Layer::MaxPool(p) => p.output_shape(input),
            Layer::BatchNorm(b) => {
                if input.channels != b.channels {
                    return Err(Error::shape(format!("{} channels", b.channels), input));
                }
                Ok(input)
            }
            Layer::Relu | Layer::Softmax => Ok(input),
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::Dense(_))
    }

    pub(crate) fn zero_grads(&self) -> Option<ParamGrads> {
        match self {
            Layer::Conv2d(c) => Some(ParamGrads::zeros(c.weights.len(), c.bias.len())),
            Layer::Dense(d) => Some(ParamGrads::zeros(d.weights.len(), d.bias.len())),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.weights.len() + c.bias.len(),
            Layer::Dense(d) => d.weights.len() + d.bias.len(),
            Layer::BatchNorm(b) => 4 * b.channels,
            _ => 0,
        }
    }

    /// `out` must have the length of [`Layer::output_shape`].
    pub(crate) fn forward(&self, x: &[f64], input: TensorShape, out: &mut [f64]) -> Result<()> {
        match self {
            Layer::Conv2d(c) => c.forward(x, input, out)?,
            Layer::Dense(d) => d.forward(x, out),
            Layer::Relu => {
                for (o, &v) in out.iter_mut().zip(x) {
                    *o = v.max(0.0);
                }
            }
            Layer::MaxPool(p) => p.forward(x, input, out)?,
            Layer::BatchNorm(b) => {
                let plane = input.plane();
                for (c, (scale, shift)) in b.affine().into_iter().enumerate() {
                    for (o, &v) in out[c * plane..(c + 1) * plane].iter_mut().zip(&x[c * plane..]) {
                        *o = scale * v + shift;
                    }
                }
            }
            Layer::Softmax => softmax(x, out),
        }
        Ok(())
    }

    /// Accumulates the input gradient into `grad_in` (which must start at
    /// zero) and, if requested, parameter gradients into `params`.
    ///
    /// Softmax is differentiated as a general vector function here; the
    /// model uses the fused logit gradient instead.
    pub(crate) fn backward(
        &self,
        x: &[f64],
        y: &[f64],
        input: TensorShape,
        grad_out: &[f64],
        grad_in: &mut [f64],
        params: Option<&mut ParamGrads>,
    ) -> Result<()> {
        match self {
            Layer::Conv2d(c) => c.backward(x, input, grad_out, grad_in, params)?,
            Layer::Dense(d) => d.backward(x, grad_out, grad_in, params),
            Layer::Relu => {
                for ((gi, &g), &v) in grad_in.iter_mut().zip(grad_out).zip(x) {
                    if v > 0.0 {
                        *gi += g;
                    }
                }
            }
            Layer::MaxPool(p) => p.backward(x, input, grad_out, grad_in)?,
            Layer::BatchNorm(b) => {
                let plane = input.plane();
                for (c, (scale, _)) in b.affine().into_iter().enumerate() {
                    for (gi, &g) in grad_in[c * plane..(c + 1) * plane].iter_mut().zip(&grad_out[c * plane..]) {
                        *gi += scale * g;
                    }
                }
            }
            Layer::Softmax => {
                let dot: f64 = grad_out.iter().zip(y).map(|(g, p)| g * p).sum();
                for ((gi, &g), &p) in grad_in.iter_mut().zip(grad_out).zip(y) {
                    *gi += p * (g - dot);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}
