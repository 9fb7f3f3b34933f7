use std::path::PathBuf;

use clap::Args;
use grainform::dataset::{load_directory, split_with, LabeledDataset};
use grainform::imageprep::Preprocessor;
use grainform::metrics::{hierarchical_accuracy, HierarchicalAccuracy};

use super::build_dataset;
use crate::artifacts::{
    create_dir, load_model, write_json, write_text, Manifest, CONFUSION_CSV, STAGE1_CONFUSION_CSV,
};
use crate::error::CliError;

pub const METRICS: &str = "metrics.json";

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluate every image of this class-per-directory tree instead of the
    /// run's own test split
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Where metrics.json and confusion.csv go; defaults to MODEL/eval
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The test split the run was trained against, rebuilt from its config.
pub fn own_test_split(manifest: &Manifest) -> Result<LabeledDataset, CliError> {
    let cfg = &manifest.config;
    let ds = build_dataset(cfg)?;
    let (_, test) = split_with(&ds, cfg.split, cfg.seed, cfg.stratify)?;
    Ok(test)
}

pub fn evaluate(args: &EvalArgs) -> Result<HierarchicalAccuracy, CliError> {
    let (manifest, model) = load_model(&args.model)?;
    let ds = match &args.data {
        Some(path) => {
            if !path.is_dir() {
                return Err(CliError::missing(path));
            }
            let prep = Preprocessor::new(manifest.preprocess)?;
            let (ds, report) = load_directory(path, &prep)?;
            if !report.skipped.is_empty() {
                log::warn!("{} images skipped", report.skipped.len());
            }
            if ds.class_names() != manifest.base_classes.as_slice() {
                return Err(CliError::validation(format!(
                    "dataset classes {:?} do not match the model's {:?}",
                    ds.class_names(),
                    manifest.base_classes
                )));
            }
            ds
        }
        None => own_test_split(&manifest)?,
    };
    Ok(hierarchical_accuracy(&model, &ds)?)
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let acc = evaluate(args)?;
    let out = args.out.clone().unwrap_or_else(|| args.model.join("eval"));
    create_dir(&out)?;
    write_json(&out.join(METRICS), &acc)?;
    write_text(&out.join(CONFUSION_CSV), &acc.confusion.to_csv())?;
    if !acc.stage2.is_empty() {
        write_text(&out.join(STAGE1_CONFUSION_CSV), &acc.stage1_confusion.to_csv())?;
    }
    println!("overall accuracy {:.4} on {} samples", acc.overall, acc.confusion.total());
    if !acc.stage2.is_empty() {
        println!("stage 1 accuracy {:.4}", acc.stage1);
        for g in &acc.stage2 {
            match g.accuracy {
                Some(a) => println!("stage 2 {} accuracy {a:.4} ({} samples)", g.group, g.samples),
                None => println!("stage 2 {}: no samples", g.group),
            }
        }
    }
    Ok(())
}
