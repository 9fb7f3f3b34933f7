pub mod eval;
pub mod infer;
pub mod preprocess;
pub mod report;
pub mod synth;
pub mod train;

use grainform::dataset::{load_directory, synth_dataset_with, LabeledDataset};
use grainform::imageprep::Preprocessor;

use crate::config::{DataSource, ExperimentConfig};
use crate::error::CliError;

/// Builds the full dataset named by the config, preprocessed.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<LabeledDataset, CliError> {
    let prep = Preprocessor::new(cfg.preprocess)?;
    match &cfg.source {
        DataSource::Directory { path } => {
            let (ds, report) = load_directory(path, &prep)?;
            if !report.skipped.is_empty() {
                log::warn!(
                    "{} of {} images skipped",
                    report.skipped.len(),
                    report.loaded + report.skipped.len()
                );
            }
            Ok(ds)
        }
        DataSource::Synth { per_class, seed, .. } => {
            let classes = cfg.source.synth_classes().expect("synth source")?;
            let geometry = cfg.geometry().expect("synth source");
            Ok(synth_dataset_with(&classes, *per_class, *seed, &prep, geometry)?)
        }
    }
}

pub fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
