//! The experiment harness behind `attack` and `sweep`.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use pixadv_core::analysis::{self, AttackRecord, ExperimentMetrics, MetricsRow};
use pixadv_core::attacks::{loc_search_adv, rand_adv, transcript, AttackOutcome};
use pixadv_core::dataset::{self, NormStats, Normalization, RawDataset, Split};
use pixadv_core::image::{diff_pixels, l1_per_coordinate, Label, LabeledImage};
use pixadv_core::nn::{io as model_io, Model};
use pixadv_core::oracle::{is_k_misclassified, Classifier, ConstantOracle, OracleSession, ProbVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{AttackChoice, DatasetKind, ExperimentConfig, OracleKind};

const GOODNESS_BATCH: usize = 64;

/// Loads one split of the configured dataset.
pub fn load_split(kind: DatasetKind, dir: &Path, split: Split) -> Result<RawDataset> {
    let raw = match kind {
        DatasetKind::Mnist => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
            let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
            if !images.exists() {
                bail!(
                    "{} not found; run scripts/fetch_mnist.sh to download MNIST",
                    images.display()
                );
            }
            dataset::load_idx_files(&images, &labels, split)?
        }
        DatasetKind::Cifar10 => {
            let files: Vec<PathBuf> = match split {
                Split::Train => (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect(),
                Split::Test => vec![dir.join("test_batch.bin")],
            };
            let mut bytes = Vec::new();
            for f in &files {
                bytes.extend(fs::read(f).with_context(|| format!("reading {}", f.display()))?);
            }
            dataset::load_cifar10(&bytes, split)?
        }
    };
    Ok(raw)
}

pub enum Oracle {
    Model(Model),
    Constant(ConstantOracle),
}

impl Oracle {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            Oracle::Model(m) => m,
            Oracle::Constant(c) => c,
        }
    }

    pub fn model(&self) -> Option<&Model> {
        match self {
            Oracle::Model(m) => Some(m),
            Oracle::Constant(_) => None,
        }
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One attacked (or skipped) test image.
pub struct ImageResult {
    /// Position in the seeded draw order.
    pub draw: usize,
    pub test_index: usize,
    pub record: AttackRecord,
    pub overlap: Option<analysis::Overlap>,
}

pub struct ExperimentReport {
    pub metrics: ExperimentMetrics,
    pub row: MetricsRow,
    pub images: Vec<ImageResult>,
    pub out_dir: PathBuf,
}

struct Setup {
    oracle: Oracle,
    stats: NormStats,
    model_hash: Option<String>,
    test: Vec<LabeledImage>,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let mut raw = load_split(cfg.dataset, &cfg.data_dir, Split::Test)?;
    if cfg.test_limit > 0 {
        raw = raw.truncated(cfg.test_limit);
    }
    let norm_path = cfg.norm_path();
    let (oracle, model_hash, stats) = match cfg.oracle {
        OracleKind::Model => {
            let model = model_io::load(&cfg.model).with_context(|| format!("loading model {}", cfg.model.display()))?;
            let stats = NormStats::load(&norm_path)
                .with_context(|| format!("loading normalization {}", norm_path.display()))?;
            (Oracle::Model(model), Some(sha256_file(&cfg.model)?), stats)
        }
        OracleKind::Constant => {
            let stats = if norm_path.exists() {
                NormStats::load(&norm_path)?
            } else {
                NormStats::fit(&raw)?
            };
            let oracle = ConstantOracle::certain(raw.shape(), raw.num_classes(), Label::new(1));
            (Oracle::Constant(oracle), None, stats)
        }
    };
    let classifier = oracle.classifier();
    if classifier.input_shape() != raw.shape() {
        bail!(
            "model expects {} images but the dataset has {}",
            classifier.input_shape(),
            raw.shape()
        );
    }
    let (test, _) = dataset::normalize(&raw, Normalization::Given(stats.clone()))?;
    Ok(Setup {
        oracle,
        stats,
        model_hash,
        test,
    })
}

/// Walks a seeded permutation of the test set until `n` good images are
/// found. Returns `(draw order test index, base prediction)` for every image
/// drawn, good or not.
fn draw_images(
    classifier: &dyn Classifier,
    test: &[LabeledImage],
    n: usize,
    seed: u64,
) -> Result<Vec<(usize, ProbVector)>> {
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut drawn = Vec::new();
    let mut good = 0;
    let mut session = OracleSession::new(classifier);
    'outer: for chunk in order.chunks(GOODNESS_BATCH) {
        let images: Vec<_> = chunk.iter().map(|&i| test[i].image.clone()).collect();
        for (&i, probs) in chunk.iter().zip(session.query_batch(&images)?) {
            let is_good = !is_k_misclassified(&probs, test[i].label, 1)?;
            drawn.push((i, probs));
            good += is_good as usize;
            if good == n {
                break 'outer;
            }
        }
    }
    if good < n {
        warn!("only {good} good images in the test set, {n} requested");
    }
    Ok(drawn)
}

fn fgsm_outcome(model: &Model, item: &LabeledImage, eps: f32) -> Result<AttackOutcome> {
    let start = Instant::now();
    let out = analysis::fgsm(model, item, eps)?;
    let perturbed_pixels = match &out.adversarial {
        Some(adv) => diff_pixels(&item.image, adv)?,
        None => Default::default(),
    };
    Ok(AttackOutcome {
        success: out.adversarial.is_some(),
        valid: out.adversarial.as_ref().is_some_and(|a| a.is_valid()),
        adversarial: out.adversarial,
        adversarial_probs: out.adversarial_probs,
        rounds_used: out.tried_labels,
        queries_used: out.tried_labels as u64,
        perturbed_pixels,
        critical_fraction: None,
        wall_time: start.elapsed().as_secs_f64(),
        rounds: Vec::new(),
        trials: Vec::new(),
    })
}

fn attack_one(cfg: &ExperimentConfig, oracle: &Oracle, item: &LabeledImage, draw: usize) -> Result<AttackOutcome> {
    let mut session = OracleSession::new(oracle.classifier());
    let outcome = match cfg.attack {
        AttackChoice::Locsearch => loc_search_adv(&mut session, item, &cfg.loc_search(draw))?,
        AttackChoice::Randadv => rand_adv(&mut session, item, &cfg.rand_adv(draw, item.image.shape().pixels()))?,
        AttackChoice::Fgsm => fgsm_outcome(oracle.model().expect("validated"), item, cfg.eps)?,
    };
    Ok(outcome)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Runs the configured experiment and writes every report file into
/// `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let setup = setup(cfg)?;
    let classifier = setup.oracle.classifier();
    let pool = thread_pool(cfg.workers)?;

    let drawn = pool.install(|| draw_images(classifier, &setup.test, cfg.images, cfg.seed))?;
    info!("drew {} test images for {} good ones", drawn.len(), cfg.images);

    let results: Vec<Result<ImageResult>> = pool.install(|| {
        drawn
            .into_par_iter()
            .enumerate()
            .map(|(draw, (test_index, base))| {
                let item = &setup.test[test_index];
                let good = !is_k_misclassified(&base, item.label, 1)?;
                let outcome = if good {
                    Some(attack_one(cfg, &setup.oracle, item, draw)?)
                } else {
                    None
                };
                let overlap = match (&outcome, setup.oracle.model()) {
                    (Some(o), Some(model)) if cfg.saliency && o.success && !o.perturbed_pixels.is_empty() => {
                        let grad = model.analytic_gradient(&item.image, item.label)?;
                        let map = analysis::saliency_map(&grad);
                        Some(analysis::overlap_stat(&o.perturbed_pixels, &map, cfg.saliency_top_fraction)?)
                    }
                    _ => None,
                };
                Ok(ImageResult {
                    draw,
                    test_index,
                    record: AttackRecord {
                        original: item.image.clone(),
                        label: item.label,
                        base,
                        outcome,
                    },
                    overlap,
                })
            })
            .collect()
    });
    let images = results.into_iter().collect::<Result<Vec<_>>>()?;
    let records: Vec<AttackRecord> = images.iter().map(|r| r.record.clone()).collect();
    let metrics = analysis::summarize(&records, cfg.k)?;
    let row = MetricsRow {
        dataset: cfg.dataset.display_name().into(),
        technique: cfg.attack.technique().into(),
        network: cfg.network_name(),
        metrics: metrics.clone(),
    };

    let report = ExperimentReport {
        metrics,
        row,
        images,
        out_dir: cfg.out_dir.clone(),
    };
    write_outputs(cfg, &setup, &report)?;
    Ok(report)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_outputs(cfg: &ExperimentConfig, setup: &Setup, report: &ExperimentReport) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    analysis::write_csv(create(&dir.join("metrics.csv"))?, std::slice::from_ref(&report.row))?;
    analysis::write_table(create(&dir.join("metrics.txt"))?, std::slice::from_ref(&report.row))?;

    let mut per_image = csv::Writer::from_writer(create(&dir.join("images.csv"))?);
    per_image.write_record([
        "draw",
        "test_index",
        "label",
        "predicted",
        "good",
        "success",
        "valid",
        "rounds",
        "queries",
        "perturbed_pixels",
        "adversarial_label",
        "adversarial_conf",
        "ptb",
        "ptbpixels",
        "critical_fraction",
    ])?;
    let mut log = create(&dir.join("transcript.jsonl"))?;
    for img in &report.images {
        let rec = &img.record;
        let o = rec.outcome.as_ref();
        let adv = o.and_then(|o| o.adversarial.as_ref().zip(o.adversarial_probs.as_ref()));
        let (adv_label, adv_conf, ptb, ptbpixels) = match adv {
            Some((a, probs)) => (
                probs.argmax().to_string(),
                format!("{:.6}", probs.confidence()),
                format!("{:.6}", l1_per_coordinate(&rec.original, a)?),
                format!(
                    "{:.4}",
                    diff_pixels(&rec.original, a)?.len() as f64 / a.shape().pixels() as f64 * 100.0
                ),
            ),
            None => Default::default(),
        };
        let opt = |v: Option<String>| v.unwrap_or_default();
        per_image.write_record([
            img.draw.to_string(),
            img.test_index.to_string(),
            rec.label.to_string(),
            rec.base.argmax().to_string(),
            o.is_some().to_string(),
            opt(o.map(|o| o.success.to_string())),
            opt(o.map(|o| o.valid.to_string())),
            opt(o.map(|o| o.rounds_used.to_string())),
            opt(o.map(|o| o.queries_used.to_string())),
            opt(o.map(|o| o.perturbed_pixels.len().to_string())),
            adv_label,
            adv_conf,
            ptb,
            ptbpixels,
            opt(o.and_then(|o| o.critical_fraction).map(|f| format!("{f:.6}"))),
        ])?;
        if let Some(o) = o {
            transcript::write(&mut log, img.draw, rec.label, o)?;
        }
    }
    per_image.flush()?;
    log.flush()?;

    if cfg.png_pairs > 0 {
        let pairs = dir.join("pairs");
        fs::create_dir_all(&pairs)?;
        let successes = report
            .images
            .iter()
            .filter_map(|img| {
                let adv = img.record.outcome.as_ref()?.adversarial.as_ref()?;
                Some((img, adv))
            })
            .take(cfg.png_pairs);
        for (img, adv) in successes {
            let stem = format!("{:04}_{}", img.draw, img.test_index);
            dataset::export_png(&img.record.original, &setup.stats, pairs.join(format!("{stem}_original.png")))?;
            dataset::export_png(adv, &setup.stats, pairs.join(format!("{stem}_adversarial.png")))?;
        }
    }

    if cfg.saliency {
        let mut w = csv::Writer::from_writer(create(&dir.join("saliency.csv"))?);
        w.write_record(["draw", "perturbed_pixels", "overlap", "z"])?;
        let mut overlaps = Vec::new();
        for img in &report.images {
            if let (Some(ov), Some(o)) = (&img.overlap, &img.record.outcome) {
                overlaps.push(ov.overlap);
                w.write_record([
                    img.draw.to_string(),
                    o.perturbed_pixels.len().to_string(),
                    format!("{:.6}", ov.overlap),
                    format!("{:.4}", ov.z),
                ])?;
            }
        }
        w.flush()?;
        if !overlaps.is_empty() {
            info!(
                "mean saliency overlap {:.4} over {} images (random placement: {})",
                overlaps.iter().sum::<f64>() / overlaps.len() as f64,
                overlaps.len(),
                cfg.saliency_top_fraction
            );
        }
    }

    fs::write(dir.join("manifest.txt"), manifest(cfg, setup, report))?;
    Ok(())
}

fn manifest(cfg: &ExperimentConfig, setup: &Setup, report: &ExperimentReport) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "pixadv {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "command = attack");
    match &setup.model_hash {
        Some(h) => {
            let _ = writeln!(m, "model = {}", cfg.model.display());
            let _ = writeln!(m, "model_sha256 = {h}");
        }
        None => {
            let _ = writeln!(m, "oracle = constant stub");
        }
    }
    let _ = writeln!(m, "selection_seed = {}", cfg.seed);
    let _ = writeln!(m, "image_seed = seed * 0x9E3779B97F4A7C15 + draw (wrapping)");
    let _ = writeln!(m, "drawn_images = {}", report.images.len());
    let _ = writeln!(m, "attacked_images = {}", report.metrics.n_attacked);
    let _ = writeln!(m, "\n[normalization]\n{}", setup.stats.to_text().trim_end());
    let _ = writeln!(m, "\n[config]\n{}", cfg.to_toml().trim_end());
    m
}

/// Parameter swept by `sweep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    /// `p` for RandAdv, `p0` for LocSearchAdv.
    P,
    K,
}

/// Runs one experiment per value in `out_dir/<param>=<value>/` and writes a
/// combined `sweep.csv`.
pub fn run_sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<(f64, ExperimentReport)>> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = base.clone();
        let name = match param {
            SweepParam::P => {
                match cfg.attack {
                    AttackChoice::Randadv => cfg.p = v as f32,
                    AttackChoice::Locsearch => cfg.p0 = v as f32,
                    AttackChoice::Fgsm => bail!("FGSM has no p parameter"),
                }
                format!("p={v}")
            }
            SweepParam::K => {
                if v < 1.0 || v.fract() != 0.0 {
                    bail!("k values must be positive integers, got {v}");
                }
                cfg.k = v as usize;
                format!("k={v}")
            }
        };
        cfg.out_dir = base.out_dir.join(&name);
        info!("sweep {name}");
        out.push((v, run_experiment(&cfg)?));
    }

    fs::create_dir_all(&base.out_dir)?;
    let mut w = csv::Writer::from_writer(create(&base.out_dir.join("sweep.csv"))?);
    w.write_record([
        "param",
        "value",
        "k",
        "images",
        "attacked",
        "success",
        "success_rate",
        "err_base",
        "err_adv",
        "conf",
        "ptb",
        "ptbpixels",
        "critical_fraction",
        "mean_queries",
    ])?;
    let na = |v: Option<f64>| v.map_or_else(|| analysis::NA.to_string(), |v| format!("{v:.4}"));
    for (v, r) in &out {
        let m = &r.metrics;
        w.write_record([
            format!("{param:?}").to_lowercase(),
            v.to_string(),
            m.k.to_string(),
            m.n_images.to_string(),
            m.n_attacked.to_string(),
            m.n_success.to_string(),
            na(m.success_rate()),
            format!("{:.2}", m.err_top_k_base),
            format!("{:.2}", m.err_top_k_adv),
            na(m.conf),
            na(m.ptb),
            na(m.ptbpixels),
            na(m.critical_fraction),
            na(m.mean_queries),
        ])?;
    }
    w.flush()?;
    Ok(out)
}
