use std::io::stdout;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use pixadv_cli::config::{ExperimentConfig, Overrides};
use pixadv_cli::experiment::{run_experiment, run_sweep, SweepParam};
use pixadv_cli::train::train;
use pixadv_core::analysis::{self, ExperimentMetrics, MetricsRow};

#[derive(Parser)]
#[command(name = "pixadv", version, about = "Black-box pixel attacks on image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a toy network and save it with its normalization statistics.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Attack N correctly classified test images and write the reports.
    Attack {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Repeat `attack` over several values of p or k.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values, e.g. `1,5,10,100`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print metrics.csv files as one aligned table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn read_rows(path: &PathBuf) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = reader.headers()?.clone();
    let k: usize = header
        .get(1)
        .and_then(|h| h.strip_prefix("ErrTop-"))
        .and_then(|k| k.parse().ok())
        .with_context(|| format!("{} is not a metrics file", path.display()))?;
    let opt = |s: &str| -> Result<Option<f64>> {
        if s == analysis::NA {
            Ok(None)
        } else {
            Ok(Some(s.parse()?))
        }
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() != 9 {
            bail!("{}: expected 9 columns, found {}", path.display(), rec.len());
        }
        rows.push(MetricsRow {
            dataset: rec[0].to_string(),
            technique: rec[7].to_string(),
            network: rec[8].to_string(),
            metrics: ExperimentMetrics {
                k,
                n_images: 0,
                n_attacked: 0,
                n_success: 0,
                err_top_k_base: rec[1].parse()?,
                err_top_k_adv: rec[2].parse()?,
                conf: opt(&rec[3])?,
                ptb: opt(&rec[4])?,
                ptbpixels: opt(&rec[5])?,
                time: opt(&rec[6])?,
                mean_queries: None,
                critical_fraction: None,
            },
        });
    }
    Ok(rows)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => {
            let cfg = ExperimentConfig::load(config.as_deref(), &overrides)?;
            let t = train(&cfg)?;
            println!(
                "trained {} ({} parameters): train accuracy {:.4}, test accuracy {}",
                t.model_path.display(),
                t.model.param_count(),
                t.report.train_accuracy,
                t.report.test_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
            println!("normalization written to {}", t.norm_path.display());
        }
        Command::Attack { config, overrides } => {
            let cfg = ExperimentConfig::load(config.as_deref(), &overrides)?;
            let report = run_experiment(&cfg)?;
            analysis::write_table(stdout(), &[report.row])?;
            println!("reports written to {}", report.out_dir.display());
        }
        Command::Sweep {
            config,
            param,
            values,
            overrides,
        } => {
            let cfg = ExperimentConfig::load(config.as_deref(), &overrides)?;
            let results = run_sweep(&cfg, param, &values)?;
            for (v, r) in &results {
                println!("{param:?} = {v}", param = param);
                analysis::write_table(stdout(), std::slice::from_ref(&r.row))?;
            }
            println!("summary written to {}", cfg.out_dir.join("sweep.csv").display());
        }
        Command::Report { files } => {
            let mut rows = Vec::new();
            for f in &files {
                rows.extend(read_rows(f)?);
            }
            let mut by_k: Vec<usize> = rows.iter().map(|r| r.metrics.k).collect();
            by_k.sort_unstable();
            by_k.dedup();
            for k in by_k {
                let group: Vec<MetricsRow> = rows.iter().filter(|r| r.metrics.k == k).cloned().collect();
                analysis::write_table(stdout(), &group)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
