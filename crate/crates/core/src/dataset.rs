//! Dataset ingestion (IDX, CIFAR-10 binary), mean/std normalization and PNG
//! export.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Bounds, Image, ImageShape, Label, LabeledImage};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

/// Undecoded 8-bit images with 1-based labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    shape: ImageShape,
    pixels: Vec<u8>,
    labels: Vec<Label>,
    num_classes: usize,
    split: Split,
}

impl RawDataset {
    /// `pixels` holds `labels.len()` images of `shape`, each in CHW order.
    pub fn new(
        shape: ImageShape,
        pixels: Vec<u8>,
        labels: Vec<Label>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if pixels.len() != shape.len() * labels.len() {
            return Err(Error::Format(format!(
                "{} pixel bytes for {} images of {shape}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.index() >= num_classes) {
            return Err(Error::Format(format!("label {l} exceeds {num_classes} classes")));
        }
        Ok(Self {
            shape,
            pixels,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        let n = self.shape.len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` items (all of them if `n` exceeds the length).
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.pixels.truncate(n * self.shape.len());
        self
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Length(format!(
                "{} has {} bytes, needed {} more at offset {}",
                self.what,
                self.bytes.len(),
                n,
                self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} has {} unexpected trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Parses an IDX image tensor (`0x00000803`, dims `n × rows × cols`).
/// Returns the count, `rows`, `cols` and raw pixel bytes.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what: "IDX image stream",
    };
    let magic = c.u32_be()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = c.u32_be()? as usize;
    let rows = c.u32_be()? as usize;
    let cols = c.u32_be()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("degenerate IDX image size {rows}x{cols}")));
    }
    let total = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format(format!("IDX dimensions {n}x{rows}x{cols} overflow")))?;
    let data = c.take(total)?;
    c.finish()?;
    Ok((n, rows, cols, data))
}

/// Parses an IDX label vector (`0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        what: "IDX label stream",
    };
    let magic = c.u32_be()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n = c.u32_be()? as usize;
    let data = c.take(n)?;
    c.finish()?;
    Ok(data)
}

/// Loads an IDX image/label pair. Source labels are 0-based digits and are
/// shifted to 1-based; the class count is `max label + 1` (at least 10).
pub fn load_idx(image_bytes: &[u8], label_bytes: &[u8], split: Split) -> Result<RawDataset> {
    let (n, rows, cols, pixels) = parse_idx_images(image_bytes)?;
    let raw_labels = parse_idx_labels(label_bytes)?;
    if raw_labels.len() != n {
        return Err(Error::Format(format!(
            "{n} images but {} labels",
            raw_labels.len()
        )));
    }
    let num_classes = raw_labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0).max(10);
    let labels = raw_labels.iter().map(|&l| Label::from_index(l as usize)).collect();
    RawDataset::new(
        ImageShape::new(1, cols, rows),
        pixels.to_vec(),
        labels,
        num_classes,
        split,
    )
}

/// Reads an IDX pair from disk.
pub fn load_idx_files(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<RawDataset> {
    load_idx(&fs::read(images)?, &fs::read(labels)?, split)
}

/// CIFAR-10 binary batch: records of one label byte and 3×32×32 CHW pixels.
pub fn load_cifar10(bytes: &[u8], split: Split) -> Result<RawDataset> {
    const RECORD: usize = 1 + 3 * 32 * 32;
    if bytes.is_empty() {
        return Err(Error::Length("empty CIFAR-10 stream".into()));
    }
    if !bytes.len().is_multiple_of(RECORD) {
        return Err(Error::Length(format!(
            "CIFAR-10 stream of {} bytes is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    let mut labels = Vec::with_capacity(bytes.len() / RECORD);
    let mut pixels = Vec::with_capacity(bytes.len());
    for rec in bytes.chunks_exact(RECORD) {
        if rec[0] > 9 {
            return Err(Error::Format(format!("CIFAR-10 label {}", rec[0])));
        }
        labels.push(Label::from_index(rec[0] as usize));
        pixels.extend_from_slice(&rec[1..]);
    }
    RawDataset::new(ImageShape::new(3, 32, 32), pixels, labels, 10, split)
}

/// Per-channel normalization `x ↦ (byte/255 − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    mean: Vec<f32>,
    std: Vec<f32>,
    bounds: Bounds,
}

impl NormStats {
    pub fn new(mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::Parameter(format!(
                "{} means for {} standard deviations",
                mean.len(),
                std.len()
            )));
        }
        if let Some(c) = std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::DegenerateStats(format!(
                "channel {} has std {}",
                c + 1,
                std[c]
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::DegenerateStats("non-finite mean".into()));
        }
        let lb = (0..mean.len())
            .map(|c| normalize_value(0, mean[c], std[c]))
            .fold(f32::INFINITY, f32::min);
        let ub = (0..mean.len())
            .map(|c| normalize_value(255, mean[c], std[c]))
            .fold(f32::NEG_INFINITY, f32::max);
        let bounds = Bounds::new(lb.min(0.0), ub.max(0.0))?;
        Ok(Self { mean, std, bounds })
    }

    /// Channel means and (population) standard deviations of `raw`.
    pub fn fit(raw: &RawDataset) -> Result<Self> {
        let shape = raw.shape();
        let plane = shape.pixels();
        let count = (raw.len() * plane) as f64;
        if count == 0.0 {
            return Err(Error::DegenerateStats("no pixels to fit".into()));
        }
        let mut mean = Vec::with_capacity(shape.channels);
        let mut std = Vec::with_capacity(shape.channels);
        for c in 0..shape.channels {
            let (mut sum, mut sq) = (0u128, 0u128);
            for i in 0..raw.len() {
                for &b in &raw.image_bytes(i)[c * plane..(c + 1) * plane] {
                    sum += b as u128;
                    sq += (b as u128) * (b as u128);
                }
            }
            let n = count as u128;
            // n² · variance in byte units, exact
            let spread = n * sq - sum * sum;
            mean.push((sum as f64 / count / 255.0) as f32);
            std.push(((spread as f64).sqrt() / count / 255.0) as f32);
        }
        Self::new(mean, std)
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Normalizes one raw CHW image.
    pub fn normalize_bytes(&self, shape: ImageShape, bytes: &[u8]) -> Result<Image> {
        if shape.channels != self.channels() {
            return Err(Error::shape(
                format!("{} channels", self.channels()),
                format!("{} channels", shape.channels),
            ));
        }
        let plane = shape.pixels();
        let data = bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let c = i / plane;
                normalize_value(b, self.mean[c], self.std[c])
            })
            .collect();
        Image::new(shape, data, self.bounds)
    }

    /// Maps a normalized coordinate of channel `c` (0-based) back to a byte,
    /// clamping to `[0, 255]`. The flag reports whether clamping happened.
    pub fn denormalize_value(&self, c: usize, value: f32) -> (u8, bool) {
        let raw = ((value as f64 * self.std[c] as f64 + self.mean[c] as f64) * 255.0).round();
        if raw < 0.0 {
            (0, true)
        } else if raw > 255.0 {
            (255, true)
        } else {
            (raw as u8, false)
        }
    }

    /// Plain-text form: `key = value` lines.
    pub fn to_text(&self) -> String {
        let join = |v: &[f32]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut out = String::from("# per-channel normalization: (byte/255 - mean) / std\n");
        let _ = writeln!(out, "channels = {}", self.channels());
        let _ = writeln!(out, "mean = {}", join(&self.mean));
        let _ = writeln!(out, "std = {}", join(&self.std));
        let _ = writeln!(out, "lb = {}", self.bounds.lb());
        let _ = writeln!(out, "ub = {}", self.bounds.ub());
        out
    }

    /// Parses [`NormStats::to_text`] output. Bounds are re-derived and must
    /// agree with the stored ones.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut mean = None;
        let mut std = None;
        let mut lb = None;
        let mut ub = None;
        let parse_list = |v: &str| -> Result<Vec<f32>> {
            v.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f32>()
                        .map_err(|e| Error::Format(format!("bad number {x:?}: {e}")))
                })
                .collect()
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected key = value, got {line:?}")))?;
            match key.trim() {
                "channels" => {}
                "mean" => mean = Some(parse_list(value)?),
                "std" => std = Some(parse_list(value)?),
                "lb" => lb = Some(parse_list(value)?[0]),
                "ub" => ub = Some(parse_list(value)?[0]),
                other => return Err(Error::Format(format!("unknown key {other:?}"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("normalization file lacks {k}"));
        let stats = Self::new(mean.ok_or_else(|| missing("mean"))?, std.ok_or_else(|| missing("std"))?)?;
        if let (Some(lb), Some(ub)) = (lb, ub) {
            if lb != stats.bounds.lb() || ub != stats.bounds.ub() {
                return Err(Error::Format(format!(
                    "stored bounds [{lb}, {ub}] disagree with derived {:?}",
                    stats.bounds
                )));
            }
        }
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn normalize_value(byte: u8, mean: f32, std: f32) -> f32 {
    ((byte as f64 / 255.0 - mean as f64) / std as f64) as f32
}

/// How statistics are chosen in [`normalize`].
#[derive(Clone, Debug)]
pub enum Normalization {
    Fit,
    Given(NormStats),
}

/// Normalizes every image of `raw`; returns the images and the statistics
/// that were used.
pub fn normalize(raw: &RawDataset, stats: Normalization) -> Result<(Vec<LabeledImage>, NormStats)> {
    let stats = match stats {
        Normalization::Fit => NormStats::fit(raw)?,
        Normalization::Given(s) => s,
    };
    let images = (0..raw.len())
        .map(|i| {
            stats
                .normalize_bytes(raw.shape(), raw.image_bytes(i))
                .map(|img| LabeledImage::new(img, raw.labels()[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((images, stats))
}

/// Result of a PNG export.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportReport {
    pub path: PathBuf,
    /// Coordinates that fell outside `[0, 255]` after denormalization.
    pub clamped: usize,
    /// Side-car note written next to the PNG when `clamped > 0`.
    pub note: Option<PathBuf>,
}

/// Denormalized CHW bytes of `img` plus the number of clamped coordinates.
pub fn denormalize(img: &Image, stats: &NormStats) -> Result<(Vec<u8>, usize)> {
    if img.channels() != stats.channels() {
        return Err(Error::shape(
            format!("{} channels", stats.channels()),
            format!("{} channels", img.channels()),
        ));
    }
    let plane = img.shape().pixels();
    let mut clamped = 0;
    let bytes = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (b, c) = stats.denormalize_value(i / plane, v);
            clamped += c as usize;
            b
        })
        .collect();
    Ok((bytes, clamped))
}

/// Writes `img` as an 8-bit grayscale (1 channel) or RGB (3 channels) PNG.
pub fn export_png(img: &Image, stats: &NormStats, path: impl AsRef<Path>) -> Result<ExportReport> {
    let path = path.as_ref();
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::Format(format!("cannot export {c}-channel image as PNG"))),
    };
    let (chw, clamped) = denormalize(img, stats)?;
    let plane = img.shape().pixels();
    let mut interleaved = Vec::with_capacity(chw.len());
    for p in 0..plane {
        for c in 0..img.channels() {
            interleaved.push(chw[c * plane + p]);
        }
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer
        .write_image_data(&interleaved)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    writer.finish().map_err(|e| Error::Io(std::io::Error::other(e)))?;

    let note = if clamped > 0 {
        let mut note_path = path.as_os_str().to_owned();
        note_path.push(".clamped.txt");
        let note_path = PathBuf::from(note_path);
        fs::write(
            &note_path,
            format!(
                "{clamped} of {} coordinates were outside the displayable range and were clamped to [0, 255]\n",
                img.data().len()
            ),
        )?;
        Some(note_path)
    } else {
        None
    };
    Ok(ExportReport {
        path: path.to_path_buf(),
        clamped,
        note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    pub(crate) fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IDX_LABELS_MAGIC, labels.len() as u32] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn idx_hand_built_blob() {
        let pixels: Vec<u8> = (0..18).map(|i| (i * 14) as u8).collect();
        let images = idx_images(2, 3, 3, &pixels);
        assert_eq!(&images[..8], &[0, 0, 8, 3, 0, 0, 0, 2]);
        let labels = idx_labels(&[7, 0]);
        let raw = load_idx(&images, &labels, Split::Test).unwrap();
        assert_eq!(raw.len(), 2);
        assert_eq!(raw.shape(), ImageShape::new(1, 3, 3));
        assert_eq!(raw.image_bytes(0), &pixels[..9]);
        assert_eq!(raw.image_bytes(1), &pixels[9..]);
        assert_eq!(raw.labels(), &[Label::new(8), Label::new(1)]);
        assert_eq!(raw.num_classes(), 10);
        assert_eq!(raw.split(), Split::Test);
    }

    #[test]
    fn idx_error_paths() {
        let images = idx_images(1, 2, 2, &[1, 2, 3, 4]);
        let labels = idx_labels(&[3]);
        assert!(matches!(load_idx(&images, &images, Split::Train), Err(Error::Format(_))));
        assert!(matches!(load_idx(&labels, &labels, Split::Train), Err(Error::Format(_))));
        assert!(matches!(load_idx(&[], &labels, Split::Train), Err(Error::Length(_))));
        assert!(matches!(load_idx(&images[..18], &labels, Split::Train), Err(Error::Length(_))));
        assert!(matches!(
            load_idx(&images, &idx_labels(&[1, 2]), Split::Train),
            Err(Error::Format(_))
        ));
        let huge = idx_images(u32::MAX, u32::MAX, u32::MAX, &[]);
        assert!(load_idx(&huge, &labels, Split::Train).is_err());
    }

    #[test]
    fn normalize_arithmetic() {
        let raw = RawDataset::new(
            ImageShape::new(1, 2, 1),
            vec![0, 255],
            vec![Label::new(1)],
            2,
            Split::Train,
        )
        .unwrap();
        let stats = NormStats::new(vec![0.5], vec![0.5]).unwrap();
        assert_eq!(stats.bounds().lb(), -1.0);
        assert_eq!(stats.bounds().ub(), 1.0);
        let (imgs, _) = normalize(&raw, Normalization::Given(stats)).unwrap();
        assert_eq!(imgs[0].image.data(), &[-1.0, 1.0]);
        assert!(imgs[0].image.is_valid());

        let zeros = RawDataset::new(ImageShape::new(1, 2, 2), vec![0; 4], vec![Label::new(1)], 2, Split::Train)
            .unwrap();
        let (imgs, stats) = normalize(&zeros, Normalization::Given(NormStats::new(vec![0.0], vec![1.0]).unwrap())).unwrap();
        assert!(imgs[0].image.data().iter().all(|&v| v == 0.0));
        assert!(stats.bounds().lb() <= 0.0 && stats.bounds().ub() >= 0.0);
    }

    #[test]
    fn degenerate_statistics() {
        assert!(matches!(NormStats::new(vec![0.5], vec![0.0]), Err(Error::DegenerateStats(_))));
        let constant = RawDataset::new(ImageShape::new(1, 2, 2), vec![9; 8], vec![Label::new(1); 2], 2, Split::Train)
            .unwrap();
        assert!(matches!(NormStats::fit(&constant), Err(Error::DegenerateStats(_))));
    }

    #[test]
    fn fitted_bounds_cover_all_channels() {
        let shape = ImageShape::new(3, 2, 2);
        let pixels: Vec<u8> = (0..24).map(|i| (i * 10) as u8).collect();
        let raw = RawDataset::new(shape, pixels, vec![Label::new(1), Label::new(2)], 2, Split::Train).unwrap();
        let (imgs, stats) = normalize(&raw, Normalization::Fit).unwrap();
        assert!(imgs.iter().all(|i| i.image.is_valid()));
        let lb = (0..3).map(|c| -stats.mean()[c] / stats.std()[c]).fold(f32::INFINITY, f32::min);
        assert!((stats.bounds().lb() - lb).abs() < 1e-6);
    }

    #[test]
    fn norm_stats_text_round_trip() {
        let stats = NormStats::new(vec![0.130_660_4, 0.2], vec![0.308_108, 0.25]).unwrap();
        let back = NormStats::from_text(&stats.to_text()).unwrap();
        assert_eq!(back, stats);
        assert!(NormStats::from_text("mean = 0.1\n").is_err());
        assert!(NormStats::from_text("mean = 0.1\nstd = 0.2\nlb = -3\nub = 4\n").is_err());
    }

    #[test]
    fn png_export_round_trip_and_clamping() {
        let dir = tempfile::tempdir().unwrap();
        let shape = ImageShape::new(1, 4, 3);
        let bytes: Vec<u8> = vec![0, 1, 2, 127, 128, 200, 254, 255, 17, 33, 99, 250];
        let raw = RawDataset::new(shape, bytes.clone(), vec![Label::new(1)], 2, Split::Test).unwrap();
        let stats = NormStats::new(vec![0.1307], vec![0.3081]).unwrap();
        let (imgs, _) = normalize(&raw, Normalization::Given(stats.clone())).unwrap();
        let path = dir.path().join("x.png");
        let report = export_png(&imgs[0].image, &stats, &path).unwrap();
        assert_eq!(report.clamped, 0);
        assert!(report.note.is_none());
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!(info.color_type, png::ColorType::Grayscale);
        assert_eq!((info.width, info.height), (4, 3));
        assert_eq!(&buf[..info.buffer_size()], &bytes[..]);

        let wild = Image::new(shape, vec![100.0; 12], stats.bounds()).unwrap();
        let report = export_png(&wild, &stats, dir.path().join("w.png")).unwrap();
        assert_eq!(report.clamped, 12);
        assert!(report.note.unwrap().exists());
        let two = Image::filled(ImageShape::new(2, 2, 2), 0.0, stats.bounds()).unwrap();
        assert!(matches!(export_png(&two, &stats, dir.path().join("t.png")), Err(Error::Format(_)) | Err(Error::Shape { .. })));
    }

    #[test]
    fn cifar_records() {
        let mut bytes = vec![3u8];
        bytes.extend((0..3072).map(|i| (i % 256) as u8));
        let raw = load_cifar10(&bytes, Split::Train).unwrap();
        assert_eq!(raw.shape(), ImageShape::new(3, 32, 32));
        assert_eq!(raw.labels(), &[Label::new(4)]);
        assert!(matches!(load_cifar10(&bytes[..100], Split::Train), Err(Error::Length(_))));
    }

    proptest! {
        #[test]
        fn idx_loader_never_panics(images in prop::collection::vec(any::<u8>(), 0..64),
                                   labels in prop::collection::vec(any::<u8>(), 0..24),
                                   patch_magic in any::<bool>()) {
            let mut images = images;
            let mut labels = labels;
            if patch_magic {
                if images.len() >= 4 { images[..4].copy_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes()); }
                if labels.len() >= 4 { labels[..4].copy_from_slice(&IDX_LABELS_MAGIC.to_be_bytes()); }
            }
            let _ = load_idx(&images, &labels, Split::Train);
        }

        #[test]
        fn bytes_survive_normalize_and_denormalize(bytes in prop::collection::vec(any::<u8>(), 1..64),
                                                   mean in 0.0f32..1.0, std in 0.05f32..2.0) {
            let stats = NormStats::new(vec![mean], vec![std]).unwrap();
            let shape = ImageShape::new(1, bytes.len(), 1);
            let img = stats.normalize_bytes(shape, &bytes).unwrap();
            prop_assert!(img.is_valid());
            let (back, clamped) = denormalize(&img, &stats).unwrap();
            prop_assert_eq!(clamped, 0);
            prop_assert_eq!(back, bytes);
        }
    }
}
