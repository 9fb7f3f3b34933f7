use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use grainform::hierarchy::Routed;
use grainform::imageprep::{read_raster, Preprocessor};

use crate::artifacts::{load_model, Manifest};
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Run directory written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Image with a single grain
    pub image: PathBuf,
}

fn distribution(names: &[String], probs: &[f64]) -> String {
    let mut line = String::new();
    for (name, p) in names.iter().zip(probs) {
        let _ = write!(line, " {name}={p:.9}");
    }
    line
}

/// The report printed for one routed prediction.
pub fn render(manifest: &Manifest, routed: &Routed) -> String {
    let mut out = format!("class: {}\n", manifest.base_classes[routed.class]);
    out += &format!(
        "stage 1:{}\n",
        distribution(&manifest.stage1_classes, &routed.stage1_probs)
    );
    match &routed.stage2 {
        Some((g, probs)) => {
            let group = &manifest.merges[*g];
            out += &format!("stage 2 ({}):{}\n", group.name, distribution(&group.members, probs));
        }
        None => out += "stage 2: not invoked\n",
    }
    out
}

pub fn run(args: &InferArgs) -> Result<(), CliError> {
    let (manifest, model) = load_model(&args.model)?;
    let prep = Preprocessor::new(manifest.preprocess)?;
    let raster = read_raster(&args.image, manifest.preprocess.channels)?;
    let features = prep.features(&raster)?;
    let routed = model.infer_traced(&features)?;
    print!("{}", render(&manifest, &routed));
    Ok(())
}
