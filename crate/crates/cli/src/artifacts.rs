//! Run directories: model files, the manifest describing them, and the
//! JSON/CSV reports.

use std::fs;
use std::path::Path;

use grainform::hierarchy::{HierarchicalModel, HierarchySpec, MergeGroup};
use grainform::imageprep::PreprocessConfig;
use grainform::nn::{load_network, save_network};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";
pub const SWEEP: &str = "sweep.json";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const STAGE1_CONFUSION_CSV: &str = "stage1-confusion.csv";
pub const FLAT_MODEL: &str = "model.gfn";
pub const STAGE1_MODEL: &str = "stage1.gfn";

pub fn stage2_model_name(group: usize) -> String {
    format!("stage2-{group}.gfn")
}

pub fn stage2_report_name(group: usize) -> String {
    format!("report-stage2-{group}.csv")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Flat,
    Hierarchical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestGroup {
    pub name: String,
    pub members: Vec<String>,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    pub base_classes: Vec<String>,
    pub stage1_classes: Vec<String>,
    pub stage1_model: String,
    pub merges: Vec<ManifestGroup>,
    pub preprocess: PreprocessConfig,
    pub config: ExperimentConfig,
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Writes the model files and manifest of `model` into `dir`.
pub fn save_model(
    dir: &Path,
    model: &HierarchicalModel,
    config: &ExperimentConfig,
) -> Result<Manifest, CliError> {
    let spec = model.spec();
    let flat = spec.merges().is_empty();
    let stage1_model = if flat { FLAT_MODEL } else { STAGE1_MODEL }.to_string();
    save_network(model.stage1(), dir.join(&stage1_model))?;
    let mut merges = Vec::new();
    for (g, (group, net)) in spec.merges().iter().zip(model.stage2_networks()).enumerate() {
        let name = stage2_model_name(g);
        save_network(net, dir.join(&name))?;
        merges.push(ManifestGroup {
            name: group.name.clone(),
            members: group.members.clone(),
            model: name,
        });
    }
    let manifest = Manifest {
        mode: if flat { Mode::Flat } else { Mode::Hierarchical },
        base_classes: spec.base_classes().to_vec(),
        stage1_classes: spec.stage1_classes().to_vec(),
        stage1_model,
        merges,
        preprocess: config.preprocess,
        config: config.clone(),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Loads a run directory written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<(Manifest, HierarchicalModel), CliError> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(CliError::io(&path, "no manifest; is this a trained run directory?"));
    }
    let manifest: Manifest = read_json(&path)?;
    let merges: Vec<MergeGroup> = manifest
        .merges
        .iter()
        .map(|g| MergeGroup {
            name: g.name.clone(),
            members: g.members.clone(),
        })
        .collect();
    let spec = HierarchySpec::new(manifest.base_classes.clone(), merges)?;
    if spec.stage1_classes() != manifest.stage1_classes.as_slice() {
        return Err(CliError::io(&path, "stage-1 classes do not match the merge structure"));
    }
    let stage1 = load_network(dir.join(&manifest.stage1_model))?;
    let stage2 = manifest
        .merges
        .iter()
        .map(|g| load_network(dir.join(&g.model)))
        .collect::<Result<Vec<_>, _>>()?;
    let model = HierarchicalModel::new(spec, stage1, stage2)?;
    if model.input_dim() != manifest.preprocess.feature_dim() {
        return Err(CliError::io(
            &path,
            format!(
                "models expect {} features but the preprocessing yields {}",
                model.input_dim(),
                manifest.preprocess.feature_dim()
            ),
        ));
    }
    Ok((manifest, model))
}
