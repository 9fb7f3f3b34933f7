use std::path::PathBuf;

use clap::Args;
use grainform::dataset::{preset, synth_sample, SynthGeometry};
use grainform::imageprep::write_png;
use rayon::prelude::*;

use crate::artifacts::create_dir;
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// global5, domestic6 or ak-overlap
    #[arg(long, default_value = "global5")]
    pub preset: String,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = SynthGeometry::default().canvas_px)]
    pub canvas_px: usize,
    #[arg(long, default_value_t = SynthGeometry::default().px_per_mm)]
    pub px_per_mm: f64,
    /// Output root; one subdirectory per class
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes `<out>/<class>/<class>_<index>.png`; returns per-class counts.
pub fn write_dataset(args: &SynthArgs) -> Result<Vec<(String, usize)>, CliError> {
    if args.per_class == 0 {
        return Err(CliError::validation("per_class must be at least 1"));
    }
    let classes = preset(&args.preset)?;
    let geometry = SynthGeometry {
        canvas_px: args.canvas_px,
        px_per_mm: args.px_per_mm,
    };
    let mut counts = Vec::with_capacity(classes.len());
    for (c, params) in classes.iter().enumerate() {
        let dir = args.out.join(&params.name);
        create_dir(&dir)?;
        (0..args.per_class).into_par_iter().try_for_each(|i| -> Result<(), CliError> {
            let img = synth_sample(&classes, c, i, args.seed, geometry)?;
            write_png(&img, dir.join(format!("{}_{i:05}.png", params.name)))?;
            Ok(())
        })?;
        counts.push((params.name.clone(), args.per_class));
    }
    Ok(counts)
}

pub fn run(args: &SynthArgs) -> Result<(), CliError> {
    let counts = write_dataset(args)?;
    for (name, n) in &counts {
        println!("{name}: {n}");
    }
    println!(
        "{} images written to {}",
        counts.iter().map(|(_, n)| n).sum::<usize>(),
        args.out.display()
    );
    Ok(())
}
