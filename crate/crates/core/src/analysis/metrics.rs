use std::io::Write;

use serde::Serialize;

use crate::attacks::AttackOutcome;
use crate::error::{Error, Result};
use crate::image::{diff_pixels, l1_per_coordinate, Image, Label};
use crate::oracle::{is_k_misclassified, ProbVector};

/// Placeholder written for absent means.
pub const NA: &str = "NA";

/// One drawn test image. `outcome` is `None` for images that were not
/// attacked because the network already misclassified them.
#[derive(Clone, Debug)]
pub struct AttackRecord {
    pub original: Image,
    pub label: Label,
    pub base: ProbVector,
    pub outcome: Option<AttackOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentMetrics {
    pub k: usize,
    pub n_images: usize,
    pub n_attacked: usize,
    pub n_success: usize,
    /// Percentage of drawn images that are k-misclassified as given.
    pub err_top_k_base: f64,
    /// Percentage k-misclassified after attacking.
    pub err_top_k_adv: f64,
    /// The remaining means are over successful attacks only.
    pub conf: Option<f64>,
    pub ptb: Option<f64>,
    pub ptbpixels: Option<f64>,
    pub time: Option<f64>,
    pub mean_queries: Option<f64>,
    /// Mean over attacked images, random search only.
    pub critical_fraction: Option<f64>,
}

impl ExperimentMetrics {
    pub fn success_rate(&self) -> Option<f64> {
        (self.n_attacked > 0).then(|| self.n_success as f64 / self.n_attacked as f64)
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

pub fn summarize(records: &[AttackRecord], k: usize) -> Result<ExperimentMetrics> {
    if records.is_empty() {
        return Err(Error::Parameter("no results to summarize".into()));
    }
    let mut base_errors = 0;
    let mut adv_errors = 0;
    let mut n_attacked = 0;
    let (mut conf, mut ptb, mut ptbpixels, mut time, mut queries, mut critical) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    for rec in records {
        let base_err = is_k_misclassified(&rec.base, rec.label, k)?;
        base_errors += base_err as usize;
        let Some(outcome) = &rec.outcome else {
            adv_errors += base_err as usize;
            continue;
        };
        n_attacked += 1;
        if let Some(f) = outcome.critical_fraction {
            critical.push(f);
        }
        let adversarial = match (&outcome.adversarial, &outcome.adversarial_probs) {
            (Some(img), Some(probs)) if outcome.success => Some((img, probs)),
            _ => None,
        };
        let Some((adv, probs)) = adversarial else {
            adv_errors += base_err as usize;
            continue;
        };
        adv_errors += 1;
        conf.push(probs.confidence());
        ptb.push(l1_per_coordinate(&rec.original, adv)?);
        let pixels = adv.shape().pixels() as f64;
        ptbpixels.push(diff_pixels(&rec.original, adv)?.len() as f64 / pixels * 100.0);
        time.push(outcome.wall_time);
        queries.push(outcome.queries_used as f64);
    }
    let n = records.len() as f64;
    Ok(ExperimentMetrics {
        k,
        n_images: records.len(),
        n_attacked,
        n_success: conf.len(),
        err_top_k_base: base_errors as f64 / n * 100.0,
        err_top_k_adv: adv_errors as f64 / n * 100.0,
        conf: mean(&conf),
        ptb: mean(&ptb),
        ptbpixels: mean(&ptbpixels),
        time: mean(&time),
        mean_queries: mean(&queries),
        critical_fraction: mean(&critical),
    })
}

/// A metrics line labelled with what produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub technique: String,
    pub network: String,
    pub metrics: ExperimentMetrics,
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| NA.to_string(), |v| format!("{v:.decimals$}"))
}

fn header(k: usize) -> [String; 9] {
    [
        "Dataset".into(),
        format!("ErrTop-{k}"),
        format!("ErrTop-{k}(Adv)"),
        "conf".into(),
        "ptb".into(),
        "ptbpixels".into(),
        "time".into(),
        "Technique".into(),
        "Network".into(),
    ]
}

fn cells(row: &MetricsRow) -> [String; 9] {
    let m = &row.metrics;
    [
        row.dataset.clone(),
        format!("{:.2}", m.err_top_k_base),
        format!("{:.2}", m.err_top_k_adv),
        fmt_opt(m.conf, 4),
        fmt_opt(m.ptb, 4),
        fmt_opt(m.ptbpixels, 2),
        fmt_opt(m.time, 3),
        row.technique.clone(),
        row.network.clone(),
    ]
}

fn common_k(rows: &[MetricsRow]) -> Result<usize> {
    let k = rows.first().map_or(1, |r| r.metrics.k);
    if rows.iter().any(|r| r.metrics.k != k) {
        return Err(Error::Parameter("rows in one table must share k".into()));
    }
    Ok(k)
}

/// CSV with columns `Dataset, ErrTop-k, ErrTop-k(Adv), conf, ptb, ptbpixels,
/// time, Technique, Network`; absent means are written as `NA`.
pub fn write_csv(out: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let k = common_k(rows)?;
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header(k)).map_err(csv_err)?;
    for row in rows {
        w.write_record(cells(row)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// The same columns as [`write_csv`], space-aligned for terminals.
pub fn write_table(mut out: impl Write, rows: &[MetricsRow]) -> Result<()> {
    let k = common_k(rows)?;
    let mut lines = vec![header(k)];
    lines.extend(rows.iter().map(cells));
    let widths: Vec<usize> = (0..9)
        .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
        .collect();
    for line in &lines {
        let text: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| if c == 0 || c >= 7 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        writeln!(out, "{}", text.join("  ").trim_end())?;
    }
    Ok(())
}
