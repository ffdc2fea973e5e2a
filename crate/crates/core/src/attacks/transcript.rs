//! Line-delimited JSON attack transcripts.
//!
//! Every line is one object with an `event` tag: `round` for each
//! local-search round, `trial` for each random-search trial, and one closing
//! `outcome`. Wall-clock time is deliberately not recorded, so transcripts
//! of seeded runs are byte-identical.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AttackOutcome;
use crate::error::{Error, Result};
use crate::image::{Label, PixelLoc};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Record {
    Round {
        image: usize,
        round: usize,
        p: f32,
        neighborhood: usize,
        candidates: usize,
        queries: u64,
        reseeded: bool,
        selected: Vec<[u32; 2]>,
        o_bar: f64,
        true_prob: f64,
        top_k: Vec<Label>,
    },
    Trial {
        image: usize,
        trial: usize,
        locations: Vec<[u32; 2]>,
        critical: bool,
    },
    Outcome {
        image: usize,
        label: Label,
        success: bool,
        valid: bool,
        rounds_used: usize,
        queries_used: u64,
        perturbed_pixels: usize,
        critical_fraction: Option<f64>,
        adversarial_label: Option<Label>,
    },
}

fn xy(locs: &[PixelLoc]) -> Vec<[u32; 2]> {
    locs.iter().map(|l| [l.x, l.y]).collect()
}

/// Transcript records for one attacked image.
pub fn records(image: usize, label: Label, outcome: &AttackOutcome) -> Vec<Record> {
    let rounds = outcome.rounds.iter().map(|r| Record::Round {
        image,
        round: r.round,
        p: r.p,
        neighborhood: r.neighborhood,
        candidates: r.candidates,
        queries: r.queries,
        reseeded: r.reseeded,
        selected: xy(&r.selected),
        o_bar: r.o_bar,
        true_prob: r.true_prob,
        top_k: r.top_k.clone(),
    });
    let trials = outcome.trials.iter().enumerate().map(|(i, t)| Record::Trial {
        image,
        trial: i + 1,
        locations: xy(&t.locations),
        critical: t.critical,
    });
    rounds
        .chain(trials)
        .chain(std::iter::once(Record::Outcome {
            image,
            label,
            success: outcome.success,
            valid: outcome.valid,
            rounds_used: outcome.rounds_used,
            queries_used: outcome.queries_used,
            perturbed_pixels: outcome.perturbed_pixels.len(),
            critical_fraction: outcome.critical_fraction,
            adversarial_label: outcome.adversarial_probs.as_ref().map(|p| p.argmax()),
        }))
        .collect()
}

/// Appends the records of one image, one JSON object per line.
pub fn write(out: &mut impl Write, image: usize, label: Label, outcome: &AttackOutcome) -> Result<()> {
    for record in records(image, label, outcome) {
        serde_json::to_writer(&mut *out, &record).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a transcript back into records.
pub fn read(text: &str) -> Result<Vec<Record>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Format(format!("transcript line {}: {e}", i + 1)))
        })
        .collect()
}
