//! Images, pixel coordinates and the distance primitives the attacks and
//! metrics are built on.
//!
//! Pixel coordinates are 1-indexed: `x` runs over columns `1..=width` and `y`
//! over rows `1..=height`. Storage is channel-major with rows inside each
//! channel plane (CHW), so the value of channel `b` at `(x, y)` lives at
//! `(b - 1) * w * h + (y - 1) * w + (x - 1)`.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed coordinate range `[lb, ub]` of normalized images.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lb: f32,
    ub: f32,
}

impl Bounds {
    /// Requires finite `lb < ub` with `lb <= 0 <= ub`.
    pub fn new(lb: f32, ub: f32) -> Result<Self> {
        if !lb.is_finite() || !ub.is_finite() {
            return Err(Error::Bounds(format!("non-finite bounds [{lb}, {ub}]")));
        }
        if lb >= ub {
            return Err(Error::Bounds(format!("lb must be below ub, got [{lb}, {ub}]")));
        }
        if lb > 0.0 || ub < 0.0 {
            return Err(Error::Bounds(format!("range [{lb}, {ub}] does not contain 0")));
        }
        Ok(Self { lb, ub })
    }

    pub fn lb(&self) -> f32 {
        self.lb
    }

    pub fn ub(&self) -> f32 {
        self.ub
    }

    /// `ub - lb`, computed in double precision.
    pub fn span(&self) -> f64 {
        self.ub as f64 - self.lb as f64
    }

    pub fn contains(&self, value: f32) -> bool {
        value >= self.lb && value <= self.ub
    }

    pub fn clamp(&self, value: f32) -> f32 {
        value.clamp(self.lb, self.ub)
    }
}

/// A pixel location, 1-indexed. Ordered row-major: by row `y`, then column `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelLoc {
    pub x: u32,
    pub y: u32,
}

impl PixelLoc {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Row-major 0-based index within a `width`-wide plane.
    pub fn plane_index(&self, width: usize) -> usize {
        (self.y as usize - 1) * width + (self.x as usize - 1)
    }

    /// Inverse of [`PixelLoc::plane_index`].
    pub fn from_plane_index(index: usize, width: usize) -> Self {
        Self {
            x: (index % width) as u32 + 1,
            y: (index / width) as u32 + 1,
        }
    }
}

impl Ord for PixelLoc {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for PixelLoc {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PixelLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// A class label in `1..=C`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(u32);

impl Label {
    /// Panics on 0; labels are 1-based.
    pub fn new(label: u32) -> Self {
        assert!(label >= 1, "labels are 1-based");
        Self(label)
    }

    /// Label for a 0-based class index.
    pub fn from_index(index: usize) -> Self {
        Self(index as u32 + 1)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// 0-based class index.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Dimensions `(channels, width, height)` of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
}

impl ImageShape {
    pub const fn new(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn len(&self) -> usize {
        self.channels * self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, loc: PixelLoc) -> bool {
        loc.x >= 1 && loc.y >= 1 && loc.x as usize <= self.width && loc.y as usize <= self.height
    }

    /// All locations in row-major order.
    pub fn locations(&self) -> impl Iterator<Item = PixelLoc> + '_ {
        let width = self.width;
        (0..self.pixels()).map(move |i| PixelLoc::from_plane_index(i, width))
    }

    pub(crate) fn check_loc(&self, loc: PixelLoc) -> Result<()> {
        if self.contains(loc) {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "pixel {loc} outside {}x{} image",
                self.width, self.height
            )))
        }
    }
}

impl fmt::Display for ImageShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.width, self.height)
    }
}

/// An `ℓ × w × h` image of normalized coordinates together with the bounds
/// that define validity.
///
/// Images are values: every transformation returns a new image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    shape: ImageShape,
    data: Vec<f32>,
    bounds: Bounds,
}

impl Image {
    /// Builds an image from CHW data. Values must be finite but need not lie
    /// inside `bounds`; use [`Image::is_valid`] to check.
    pub fn new(shape: ImageShape, data: Vec<f32>, bounds: Bounds) -> Result<Self> {
        if shape.channels == 0 || shape.width == 0 || shape.height == 0 {
            return Err(Error::Parameter(format!("degenerate image shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("image coordinate {i}")));
        }
        Ok(Self {
            shape,
            data,
            bounds,
        })
    }

    pub fn filled(shape: ImageShape, value: f32, bounds: Bounds) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()], bounds)
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Raw CHW data.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value of channel `channel` (1-based) at `loc`.
    pub fn value(&self, channel: usize, loc: PixelLoc) -> f32 {
        self.data[self.offset(channel, loc)]
    }

    pub(crate) fn offset(&self, channel: usize, loc: PixelLoc) -> usize {
        debug_assert!(channel >= 1 && channel <= self.shape.channels);
        debug_assert!(self.shape.contains(loc));
        (channel - 1) * self.shape.pixels() + loc.plane_index(self.shape.width)
    }

    /// Offsets of all channels of the pixel at `loc`.
    pub(crate) fn pixel_offsets(&self, loc: PixelLoc) -> impl Iterator<Item = usize> {
        let plane = self.shape.pixels();
        let base = loc.plane_index(self.shape.width);
        (0..self.shape.channels).map(move |b| b * plane + base)
    }

    /// Returns a copy with each coordinate replaced by `f(offset, value)`
    /// for every channel of the pixels in `locs`.
    pub(crate) fn map_pixels<'a>(
        &self,
        locs: impl IntoIterator<Item = &'a PixelLoc>,
        mut f: impl FnMut(f32) -> f32,
    ) -> Result<Image> {
        let mut out = self.clone();
        for loc in locs {
            self.shape.check_loc(*loc)?;
            for off in self.pixel_offsets(*loc) {
                out.data[off] = f(self.data[off]);
            }
        }
        if let Some(i) = out.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("perturbed coordinate {i}")));
        }
        Ok(out)
    }

    /// Copy with coordinate `offset` (CHW) set to `value`.
    pub fn with_coordinate(&self, offset: usize, value: f32) -> Result<Image> {
        if offset >= self.data.len() {
            return Err(Error::Parameter(format!(
                "coordinate {offset} outside image of {} values",
                self.data.len()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Numeric(format!("coordinate {offset}")));
        }
        let mut out = self.clone();
        out.data[offset] = value;
        Ok(out)
    }

    /// True iff every coordinate lies in `[lb, ub]`.
    pub fn is_valid(&self) -> bool {
        self.data.iter().all(|&v| self.bounds.contains(v))
    }

    fn check_same_shape(&self, other: &Image) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::shape(self.shape, other.shape))
        }
    }
}

/// An image with its true class label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub label: Label,
}

impl LabeledImage {
    pub fn new(image: Image, label: Label) -> Self {
        Self { image, label }
    }
}

/// Dense `ℓ × w × h` tensor of derivatives with respect to image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    shape: ImageShape,
    values: Vec<f64>,
}

impl Gradient {
    pub fn new(shape: ImageShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Self {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, channel: usize, loc: PixelLoc) -> f64 {
        self.values[(channel - 1) * self.shape.pixels() + loc.plane_index(self.shape.width)]
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − reference‖₂ / ‖reference‖₂`; falls back to the absolute
    /// error when the reference is identically zero.
    pub fn relative_error(&self, reference: &Gradient) -> Result<f64> {
        if self.shape != reference.shape {
            return Err(Error::shape(reference.shape, self.shape));
        }
        let diff = self
            .values
            .iter()
            .zip(&reference.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = reference.norm();
        Ok(if scale == 0.0 { diff } else { diff / scale })
    }
}

/// Mean absolute difference per coordinate, `Σ|a − b| / (ℓ·w·h)`.
pub fn l1_per_coordinate(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let total: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    Ok(total / a.data.len() as f64)
}

/// Locations where any channel differs (bitwise), in row-major order.
pub fn diff_pixels(a: &Image, b: &Image) -> Result<BTreeSet<PixelLoc>> {
    a.check_same_shape(b)?;
    let shape = a.shape;
    let plane = shape.pixels();
    let mut out = BTreeSet::new();
    for i in 0..plane {
        let differs = (0..shape.channels).any(|c| {
            let off = c * plane + i;
            a.data[off].to_bits() != b.data[off].to_bits()
        });
        if differs {
            out.insert(PixelLoc::from_plane_index(i, shape.width));
        }
    }
    Ok(out)
}

/// True iff every coordinate of `img` lies in its closed bounds.
pub fn validate(img: &Image) -> bool {
    img.is_valid()
}
