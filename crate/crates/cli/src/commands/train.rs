use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use grainform::dataset::{list_class_images, split_with, LabeledDataset};
use grainform::hierarchy::{train_hierarchy, HierarchyReport, HierarchySpec};
use grainform::metrics::{hierarchical_accuracy, ConfusionMatrix, GroupAccuracy};
use serde::{Deserialize, Serialize};

use super::{build_dataset, mean_stdev};
use crate::artifacts::{
    create_dir, save_model, stage2_report_name, write_json, write_text, Mode, CONFUSION_CSV,
    REPORT_CSV, STAGE1_CONFUSION_CSV, SUMMARY, SWEEP,
};
use crate::config::{parse_merge, ConfigBuilder, DataSource, ExperimentConfig};
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file of `key = value` lines; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Class-per-directory image tree
    #[arg(long)]
    pub data: Option<String>,
    /// Synthetic preset used when no data directory is given
    #[arg(long, value_name = "PRESET")]
    pub synth: Option<String>,
    #[arg(long)]
    pub per_class: Option<String>,
    #[arg(long)]
    pub synth_seed: Option<String>,
    #[arg(long)]
    pub canvas_px: Option<String>,
    #[arg(long)]
    pub px_per_mm: Option<String>,
    /// Disable orientation normalization
    #[arg(long)]
    pub no_flip: bool,
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long)]
    pub out_side: Option<String>,
    #[arg(long)]
    pub pad_fraction: Option<String>,
    /// `fit` or `window:SIDE`
    #[arg(long)]
    pub crop: Option<String>,
    /// `gray` or `rgb`
    #[arg(long)]
    pub channels: Option<String>,
    /// Hidden layer widths, comma separated
    #[arg(long)]
    pub widths: Option<String>,
    /// sgd, adam, rmsprop, adadelta or nadam
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long = "lr")]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub beta1: Option<String>,
    #[arg(long)]
    pub beta2: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Training fraction
    #[arg(long)]
    pub split: Option<String>,
    /// Shuffle the split globally instead of per class
    #[arg(long)]
    pub no_stratify: bool,
    #[arg(long)]
    pub seed: Option<String>,
    /// Repeat over this many consecutive seeds and report mean and stdev
    #[arg(long)]
    pub seeds: Option<String>,
    /// Merge group, `GROUP: member, member`; repeatable
    #[arg(long)]
    pub merge: Vec<String>,
    #[arg(long)]
    pub out: Option<String>,
}

impl TrainArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut b = ConfigBuilder::default();
        if let Some(path) = &self.config {
            b.load_file(path)?;
        }
        let pairs = [
            ("data", &self.data),
            ("synth", &self.synth),
            ("per_class", &self.per_class),
            ("synth_seed", &self.synth_seed),
            ("canvas_px", &self.canvas_px),
            ("px_per_mm", &self.px_per_mm),
            ("threshold", &self.threshold),
            ("out_side", &self.out_side),
            ("pad_fraction", &self.pad_fraction),
            ("crop", &self.crop),
            ("channels", &self.channels),
            ("widths", &self.widths),
            ("optimizer", &self.optimizer),
            ("learning_rate", &self.learning_rate),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("rho", &self.rho),
            ("epsilon", &self.epsilon),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("split", &self.split),
            ("seed", &self.seed),
            ("seeds", &self.seeds),
            ("out", &self.out),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                b.set(key, v)?;
            }
        }
        if self.no_flip {
            b.set("fixed_flipping", "false")?;
        }
        if self.no_stratify {
            b.set("stratify", "false")?;
        }
        if !self.merge.is_empty() {
            b.set_merges(self.merge.iter().map(|m| parse_merge(m)).collect::<Result<_, _>>()?);
        }
        b.build()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub classes: Vec<String>,
    pub stage1_classes: Vec<String>,
    pub train_samples: usize,
    pub test_samples: usize,
    /// End-to-end accuracy on the test split.
    pub test_accuracy: f64,
    /// Final-epoch running accuracy of the stage-1 (or flat) model.
    pub train_accuracy: f64,
    pub stage1_accuracy: f64,
    pub stage2: Vec<GroupAccuracy>,
    pub confusion: ConfusionMatrix,
    pub stage1_confusion: ConfusionMatrix,
    pub reports: HierarchyReport,
    pub wall_clock_seconds: f64,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStat {
    pub mean: f64,
    pub stdev: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub seeds: Vec<u64>,
    pub runs: Vec<String>,
    pub test_accuracy: SeedStat,
    pub stage1_accuracy: SeedStat,
    pub config: ExperimentConfig,
}

pub fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Trains on the split for `cfg.seed` and writes the run directory `cfg.out`.
pub fn train_run(cfg: &ExperimentConfig, ds: &LabeledDataset) -> Result<Summary, CliError> {
    let started = Instant::now();
    let out = &cfg.out;
    create_dir(out)?;
    let (train_set, test_set) = split_with(ds, cfg.split, cfg.seed, cfg.stratify)?;
    let spec = HierarchySpec::new(ds.class_names().to_vec(), cfg.merges.clone())?;
    let template = cfg.network_template()?;
    let (model, reports) = train_hierarchy(
        &train_set,
        &spec,
        &template,
        &cfg.train_config(cfg.seed),
        Some(&test_set),
    )?;
    let acc = hierarchical_accuracy(&model, &test_set)?;
    let manifest = save_model(out, &model, cfg)?;

    write_text(&out.join(REPORT_CSV), &reports.stage1.to_csv())?;
    for (g, (_, report)) in reports.stage2.iter().enumerate() {
        write_text(&out.join(stage2_report_name(g)), &report.to_csv())?;
    }
    write_text(&out.join(CONFUSION_CSV), &acc.confusion.to_csv())?;
    if manifest.mode == Mode::Hierarchical {
        write_text(&out.join(STAGE1_CONFUSION_CSV), &acc.stage1_confusion.to_csv())?;
    }
    let summary = Summary {
        mode: manifest.mode,
        seed: cfg.seed,
        classes: manifest.base_classes,
        stage1_classes: manifest.stage1_classes,
        train_samples: train_set.len(),
        test_samples: test_set.len(),
        test_accuracy: acc.overall,
        train_accuracy: reports.stage1.last().map_or(0.0, |r| r.train_accuracy),
        stage1_accuracy: acc.stage1,
        stage2: acc.stage2,
        confusion: acc.confusion,
        stage1_confusion: acc.stage1_confusion,
        reports,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write_json(&out.join(SUMMARY), &summary)?;
    Ok(summary)
}

fn print_summary(dir: &Path, s: &Summary) {
    println!(
        "{}: {} model, seed {}, test accuracy {:.4}",
        dir.display(),
        match s.mode {
            Mode::Flat => "flat",
            Mode::Hierarchical => "hierarchical",
        },
        s.seed,
        s.test_accuracy
    );
    if s.mode == Mode::Hierarchical {
        println!("  stage 1 accuracy {:.4}", s.stage1_accuracy);
        for g in &s.stage2 {
            match g.accuracy {
                Some(a) => println!("  stage 2 {} accuracy {a:.4} ({} samples)", g.group, g.samples),
                None => println!("  stage 2 {}: no test samples", g.group),
            }
        }
    }
}

/// Class names of the configured source, read without loading any images.
fn source_classes(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    match &cfg.source {
        DataSource::Directory { path } => Ok(list_class_images(path)?
            .into_iter()
            .map(|(name, _)| name)
            .collect()),
        DataSource::Synth { .. } => Ok(cfg
            .source
            .synth_classes()
            .expect("synth source")?
            .into_iter()
            .map(|p| p.name)
            .collect()),
    }
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    HierarchySpec::new(source_classes(&cfg)?, cfg.merges.clone())?;
    let ds = build_dataset(&cfg)?;
    if cfg.seeds == 1 {
        let summary = train_run(&cfg, &ds)?;
        print_summary(&cfg.out, &summary);
        return Ok(());
    }
    create_dir(&cfg.out)?;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|k| cfg.seed + k).collect();
    let (mut test, mut stage1, mut runs) = (vec![], vec![], vec![]);
    for &seed in &seeds {
        let run_cfg = ExperimentConfig {
            seed,
            seeds: 1,
            out: cfg.out.join(seed_dir(seed)),
            ..cfg.clone()
        };
        let summary = train_run(&run_cfg, &ds)?;
        print_summary(&run_cfg.out, &summary);
        test.push(summary.test_accuracy);
        stage1.push(summary.stage1_accuracy);
        runs.push(seed_dir(seed));
    }
    let stat = |values: Vec<f64>| {
        let (mean, stdev) = mean_stdev(&values);
        SeedStat {
            mean,
            stdev,
            values,
        }
    };
    let sweep = Sweep {
        seeds,
        runs,
        test_accuracy: stat(test),
        stage1_accuracy: stat(stage1),
        config: cfg.clone(),
    };
    write_json(&cfg.out.join(SWEEP), &sweep)?;
    println!(
        "test accuracy over {} seeds: {:.4} ± {:.4}",
        cfg.seeds, sweep.test_accuracy.mean, sweep.test_accuracy.stdev
    );
    Ok(())
}
