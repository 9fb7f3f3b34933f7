use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use super::mean_stdev;
use super::train::{Summary, Sweep};
use crate::artifacts::{read_json, Mode, SUMMARY, SWEEP};
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run or sweep directories written by `train`
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Also write the table as CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    pub mode: String,
    pub optimizer: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub stage1_accuracy: f64,
    pub wall_clock_seconds: f64,
}

impl ReportRow {
    fn new(dir: &Path, s: &Summary) -> Self {
        Self {
            run: dir.display().to_string(),
            mode: match s.mode {
                Mode::Flat => "flat",
                Mode::Hierarchical => "hierarchical",
            }
            .to_string(),
            optimizer: s.config.optimizer.kind.name().to_string(),
            seed: s.seed,
            epochs: s.config.epochs,
            train_accuracy: s.train_accuracy,
            test_accuracy: s.test_accuracy,
            stage1_accuracy: s.stage1_accuracy,
            wall_clock_seconds: s.wall_clock_seconds,
        }
    }
}

/// Summaries of the given runs; sweep directories expand to their members.
pub fn collect(runs: &[PathBuf]) -> Result<Vec<ReportRow>, CliError> {
    let mut rows = Vec::new();
    for dir in runs {
        if dir.join(SWEEP).is_file() {
            let sweep: Sweep = read_json(&dir.join(SWEEP))?;
            for run in &sweep.runs {
                let sub = dir.join(run);
                rows.push(ReportRow::new(&sub, &read_json(&sub.join(SUMMARY))?));
            }
        } else {
            rows.push(ReportRow::new(dir, &read_json(&dir.join(SUMMARY))?));
        }
    }
    Ok(rows)
}

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    let rows = collect(&args.runs)?;
    println!(
        "{:<40} {:<12} {:<9} {:>5} {:>6} {:>8} {:>8} {:>8} {:>9}",
        "run", "mode", "optimizer", "seed", "epochs", "train", "test", "stage1", "seconds"
    );
    for r in &rows {
        println!(
            "{:<40} {:<12} {:<9} {:>5} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>9.1}",
            r.run,
            r.mode,
            r.optimizer,
            r.seed,
            r.epochs,
            r.train_accuracy,
            r.test_accuracy,
            r.stage1_accuracy,
            r.wall_clock_seconds
        );
    }
    if rows.len() > 1 {
        let test: Vec<f64> = rows.iter().map(|r| r.test_accuracy).collect();
        let (mean, stdev) = mean_stdev(&test);
        println!("test accuracy over {} runs: {mean:.4} ± {stdev:.4}", rows.len());
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}
