//! Experiment configuration: a flat `key = value` file, one
//! `merge = GROUP: member, member` line per merge group, then flag overrides.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use grainform::dataset::{preset, GrainClassParams, SynthGeometry};
use grainform::hierarchy::MergeGroup;
use grainform::imageprep::{Channels, CropMode, PreprocessConfig};
use grainform::nn::{NetworkSpec, DEFAULT_WIDTHS};
use grainform::optim::{OptimizerConfig, OptimizerKind};
use grainform::train::{TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_SPLIT: f64 = 0.75;
pub const DEFAULT_PER_CLASS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Directory {
        path: PathBuf,
    },
    Synth {
        preset: String,
        per_class: usize,
        seed: u64,
        canvas_px: usize,
        px_per_mm: f64,
    },
}

impl DataSource {
    pub fn synth_classes(&self) -> Option<Result<Vec<GrainClassParams>, CliError>> {
        match self {
            DataSource::Synth { preset: name, .. } => Some(preset(name).map_err(CliError::from)),
            DataSource::Directory { .. } => None,
        }
    }
}

/// Fully resolved configuration, echoed into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub preprocess: PreprocessConfig,
    pub widths: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub split: f64,
    pub stratify: bool,
    pub seed: u64,
    pub seeds: usize,
    pub merges: Vec<MergeGroup>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            optimizer: self.optimizer,
        }
    }

    pub fn network_template(&self) -> Result<NetworkSpec, CliError> {
        // output width is replaced by the class count at training time
        Ok(NetworkSpec::new(self.preprocess.feature_dim(), self.widths.clone(), 2)?)
    }

    pub fn geometry(&self) -> Option<SynthGeometry> {
        match self.source {
            DataSource::Synth {
                canvas_px,
                px_per_mm,
                ..
            } => Some(SynthGeometry {
                canvas_px,
                px_per_mm,
            }),
            DataSource::Directory { .. } => None,
        }
    }
}

/// Unresolved settings; later `set` calls win.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    data: Option<PathBuf>,
    synth: Option<String>,
    per_class: Option<usize>,
    synth_seed: Option<u64>,
    canvas_px: Option<usize>,
    px_per_mm: Option<f64>,
    fixed_flipping: Option<bool>,
    threshold: Option<f64>,
    out_side: Option<usize>,
    pad_fraction: Option<f64>,
    crop: Option<CropMode>,
    channels: Option<Channels>,
    widths: Option<Vec<usize>>,
    optimizer: Option<OptimizerKind>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    rho: Option<f64>,
    epsilon: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    split: Option<f64>,
    stratify: Option<bool>,
    seed: Option<u64>,
    seeds: Option<usize>,
    merges: Option<Vec<MergeGroup>>,
    out: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::validation(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::validation(format!("invalid value {value:?} for {key}"))),
    }
}

pub fn parse_crop(value: &str) -> Result<CropMode, CliError> {
    if value.eq_ignore_ascii_case("fit") {
        return Ok(CropMode::Fit);
    }
    let side = value
        .strip_prefix("window:")
        .or_else(|| value.strip_prefix("window="))
        .ok_or_else(|| {
            CliError::validation(format!("crop must be \"fit\" or \"window:SIDE\", got {value:?}"))
        })?;
    Ok(CropMode::Window {
        side: parse("crop", side)?,
    })
}

fn parse_widths(value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse("widths", s))
        .collect()
}

/// Parses `GROUP: member, member`.
pub fn parse_merge(value: &str) -> Result<MergeGroup, CliError> {
    let (name, members) = value.split_once(':').ok_or_else(|| {
        CliError::validation(format!("merge must look like \"GROUP: a, b\", got {value:?}"))
    })?;
    let members: Vec<&str> = members.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    let name = name.trim();
    if name.is_empty() {
        return Err(CliError::validation(format!("merge group without a name: {value:?}")));
    }
    Ok(MergeGroup::new(name, &members))
}

impl ConfigBuilder {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "synth" => self.synth = Some(value.to_string()),
            "per_class" => self.per_class = Some(parse(key, value)?),
            "synth_seed" => self.synth_seed = Some(parse(key, value)?),
            "canvas_px" => self.canvas_px = Some(parse(key, value)?),
            "px_per_mm" => self.px_per_mm = Some(parse(key, value)?),
            "fixed_flipping" => self.fixed_flipping = Some(parse_bool(key, value)?),
            "threshold" => self.threshold = Some(parse(key, value)?),
            "out_side" => self.out_side = Some(parse(key, value)?),
            "pad_fraction" => self.pad_fraction = Some(parse(key, value)?),
            "crop" => self.crop = Some(parse_crop(value)?),
            "channels" => self.channels = Some(value.parse()?),
            "widths" => self.widths = Some(parse_widths(value)?),
            "optimizer" => self.optimizer = Some(value.parse()?),
            "learning_rate" => self.learning_rate = Some(parse(key, value)?),
            "beta1" => self.beta1 = Some(parse(key, value)?),
            "beta2" => self.beta2 = Some(parse(key, value)?),
            "rho" => self.rho = Some(parse(key, value)?),
            "epsilon" => self.epsilon = Some(parse(key, value)?),
            "epochs" => self.epochs = Some(parse(key, value)?),
            "batch_size" => self.batch_size = Some(parse(key, value)?),
            "split" => self.split = Some(parse(key, value)?),
            "stratify" => self.stratify = Some(parse_bool(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "seeds" => self.seeds = Some(parse(key, value)?),
            "merge" => self.merges.get_or_insert_with(Vec::new).push(parse_merge(value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            other => return Err(CliError::validation(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Reads a config file; blank lines and `#` comments are ignored.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.load_str(&text)
            .map_err(|e| e.context(format!("{}", path.display())))
    }

    pub fn load_str(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::validation(format!("line {}: expected key = value", n + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| e.context(format!("line {}", n + 1)))?;
        }
        Ok(())
    }

    /// Replaces merges wholesale, so flags override rather than extend a file.
    pub fn set_merges(&mut self, merges: Vec<MergeGroup>) {
        self.merges = Some(merges);
    }

    pub fn build(self) -> Result<ExperimentConfig, CliError> {
        let source = match (self.data, self.synth) {
            (Some(_), Some(_)) => {
                return Err(CliError::validation("set either data or synth, not both"))
            }
            (Some(path), None) => {
                if !path.is_dir() {
                    return Err(CliError::missing(&path));
                }
                DataSource::Directory { path }
            }
            (None, synth) => {
                let geometry = SynthGeometry::default();
                let name = synth.unwrap_or_else(|| "global5".to_string());
                preset(&name)?;
                DataSource::Synth {
                    preset: name,
                    per_class: self.per_class.unwrap_or(DEFAULT_PER_CLASS),
                    seed: self.synth_seed.unwrap_or(0),
                    canvas_px: self.canvas_px.unwrap_or(geometry.canvas_px),
                    px_per_mm: self.px_per_mm.unwrap_or(geometry.px_per_mm),
                }
            }
        };
        let defaults = PreprocessConfig::default();
        let preprocess = PreprocessConfig {
            fixed_flipping: self.fixed_flipping.unwrap_or(defaults.fixed_flipping),
            threshold: self.threshold.unwrap_or(defaults.threshold),
            out_side: self.out_side.unwrap_or(defaults.out_side),
            pad_fraction: self.pad_fraction.unwrap_or(defaults.pad_fraction),
            crop: self.crop.unwrap_or(defaults.crop),
            channels: self.channels.unwrap_or(defaults.channels),
        };
        preprocess.validate()?;

        let mut optimizer = OptimizerConfig::new(self.optimizer.unwrap_or(OptimizerKind::Sgd));
        optimizer.learning_rate = self.learning_rate.unwrap_or(optimizer.learning_rate);
        optimizer.beta1 = self.beta1.unwrap_or(optimizer.beta1);
        optimizer.beta2 = self.beta2.unwrap_or(optimizer.beta2);
        optimizer.rho = self.rho.unwrap_or(optimizer.rho);
        optimizer.epsilon = self.epsilon.unwrap_or(optimizer.epsilon);

        let cfg = ExperimentConfig {
            source,
            preprocess,
            widths: self.widths.unwrap_or_else(|| DEFAULT_WIDTHS.to_vec()),
            optimizer,
            epochs: self.epochs.unwrap_or(DEFAULT_EPOCHS),
            batch_size: self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            split: self.split.unwrap_or(DEFAULT_SPLIT),
            stratify: self.stratify.unwrap_or(true),
            seed: self.seed.unwrap_or(0),
            seeds: self.seeds.unwrap_or(1),
            merges: self.merges.unwrap_or_default(),
            out: self
                .out
                .ok_or_else(|| CliError::validation("an output directory (out) is required"))?,
        };
        cfg.train_config(cfg.seed).validate()?;
        cfg.network_template()?;
        if !(cfg.split > 0.0 && cfg.split < 1.0) {
            return Err(CliError::validation("split must be in (0, 1)"));
        }
        if cfg.seeds == 0 {
            return Err(CliError::validation("seeds must be at least 1"));
        }
        Ok(cfg)
    }
}
