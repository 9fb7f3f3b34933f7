use std::path::{Path, PathBuf};

use clap::Args;
use grainform::dataset::IMAGE_EXTENSIONS;
use grainform::imageprep::{
    normalize_orientation_with, read_gray, segment, tight_bbox, write_png, AlignedBox,
    DEFAULT_THRESHOLD,
};
use rayon::prelude::*;
use serde::Serialize;
use walkdir::WalkDir;

use crate::artifacts::create_dir;
use crate::error::CliError;

pub const PREPROCESS_CSV: &str = "preprocess.csv";

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Image file or directory, searched recursively
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Report the tight box without rotating
    #[arg(long)]
    pub no_flip: bool,
    /// Draw the tight box into the written images
    #[arg(long)]
    pub draw_box: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxRow {
    pub path: String,
    pub angle_deg: f64,
    pub box_left: usize,
    pub box_top: usize,
    pub box_right: usize,
    pub box_bottom: usize,
    pub box_w_px: usize,
    pub box_h_px: usize,
}

impl BoxRow {
    fn new(path: &Path, b: &AlignedBox) -> Self {
        Self {
            path: path.display().to_string(),
            angle_deg: b.rotation_applied,
            box_left: b.left,
            box_top: b.top,
            box_right: b.right,
            box_bottom: b.bottom,
            box_w_px: b.width(),
            box_h_px: b.height(),
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Input images in sorted order, with their output paths relative to `out`.
fn collect_inputs(input: &Path) -> Result<Vec<(PathBuf, PathBuf)>, CliError> {
    if input.is_file() {
        let name = input.file_name().map(PathBuf::from).unwrap_or_default();
        return Ok(vec![(input.to_path_buf(), name.with_extension("png"))]);
    }
    if !input.is_dir() {
        return Err(CliError::io(input, "no such file or directory"));
    }
    let mut found = Vec::new();
    for entry in WalkDir::new(input).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::io(input, e))?;
        let path = entry.path();
        if entry.file_type().is_file() && is_image(path) {
            let rel = path.strip_prefix(input).unwrap_or(path).with_extension("png");
            found.push((path.to_path_buf(), rel));
        }
    }
    Ok(found)
}

fn process_one(
    src: &Path,
    dst: &Path,
    args: &PreprocessArgs,
) -> Result<BoxRow, CliError> {
    let img = read_gray(src)?;
    let (out, bbox) = if args.no_flip {
        let bbox = tight_bbox(&segment(&img, args.threshold)?)?;
        (img, bbox)
    } else {
        normalize_orientation_with(&img, args.threshold)?
    };
    let out = if args.draw_box { out.with_box_drawn(&bbox) } else { out };
    if let Some(parent) = dst.parent() {
        create_dir(parent)?;
    }
    write_png(&out, dst)?;
    Ok(BoxRow::new(src, &bbox))
}

/// Processes every image; failures are logged and skipped. Errors only when
/// nothing could be processed.
pub fn preprocess(args: &PreprocessArgs) -> Result<Vec<BoxRow>, CliError> {
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(CliError::validation("threshold must be in (0, 1)"));
    }
    let inputs = collect_inputs(&args.input)?;
    if inputs.is_empty() {
        return Err(CliError::validation(format!(
            "no images found under {}",
            args.input.display()
        )));
    }
    create_dir(&args.out)?;
    let results: Vec<Result<BoxRow, CliError>> = inputs
        .par_iter()
        .map(|(src, rel)| process_one(src, &args.out.join(rel), args))
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut first_error = None;
    for ((src, _), result) in inputs.iter().zip(results) {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("skipping {}: {e}", src.display());
                first_error.get_or_insert(e);
            }
        }
    }
    if rows.is_empty() {
        let e = first_error.expect("at least one input");
        return Err(e.context("every image failed"));
    }
    let csv_path = args.out.join(PREPROCESS_CSV);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    Ok(rows)
}

pub fn run(args: &PreprocessArgs) -> Result<(), CliError> {
    let rows = preprocess(args)?;
    println!(
        "{} images normalized into {}",
        rows.len(),
        args.out.display()
    );
    Ok(())
}
