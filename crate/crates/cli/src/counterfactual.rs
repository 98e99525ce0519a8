//! Batch counterfactual generation over a directory of PNG images. Masks are
//! looked up by file name in a parallel mask directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use oodg_core::counterfactual::{
    inject_square, mean_rgb, recolor_mean_shift, scale_region_intensity, write_annotations,
    AnnotationRecord, ChannelStats, ImageBuffer, MaskBuffer, Smoothing, COLOUR_CHART_THRESHOLD,
    DEFAULT_SMOOTHING, DEFAULT_SQUARE_AREA, HEART_INTENSITY_FACTOR, ISIC_LESION_RGB,
};
use serde::{Deserialize, Serialize};

use crate::common::{fmt_f64, parse_rgb, replay, require_out, write_config_echo, Staging};

#[derive(Args, Debug, Clone)]
pub struct CounterfactualArgs {
    #[command(subcommand)]
    pub op: CfOp,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum CfOp {
    /// Shift the in-mask mean colour to a target RGB
    Recolor(RecolorArgs),
    /// Paint a seeded square patch at a random position
    Square(SquareArgs),
    /// Scale intensities inside a smoothed mask
    Scale(ScaleArgs),
    /// Categorise masked regions by RGB distance to a reference colour
    Annotate(AnnotateArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct Io {
    /// Directory of input PNG images
    #[arg(long)]
    pub images: Option<PathBuf>,

    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Replay the arguments echoed in a previous run's config.json
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RecolorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: Io,
    /// Directory of masks named like the images
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Target mean colour, R,G,B
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SquareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: Io,
    /// Fraction of the image covered by the square
    #[arg(long, default_value_t = DEFAULT_SQUARE_AREA)]
    pub area: f64,
    /// Fill intensity in dataset standard deviations from the mean
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub sigma: f64,
    /// Dataset per-channel mean, R,G,B
    #[arg(long)]
    pub mean: Option<String>,
    /// Dataset per-channel standard deviation, R,G,B
    #[arg(long)]
    pub std: Option<String>,
    /// Base seed; the i-th image (sorted by name) uses seed + i
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ScaleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: Io,
    /// Directory of masks named like the images
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Intensity factor inside the mask
    #[arg(long, default_value_t = HEART_INTENSITY_FACTOR)]
    pub factor: f64,
    /// Odd Gaussian kernel size for mask smoothing
    #[arg(long, default_value_t = DEFAULT_SMOOTHING.kernel)]
    pub kernel: usize,
    /// Gaussian standard deviation for mask smoothing
    #[arg(long, default_value_t = DEFAULT_SMOOTHING.sigma)]
    pub smooth_sigma: f64,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub io: Io,
    /// Directory of artefact masks named like the images
    #[arg(long)]
    pub masks: Option<PathBuf>,
    /// Reference colour, R,G,B (default: mean ISIC lesion colour)
    #[arg(long)]
    pub roi: Option<String>,
    /// Distance below which an artefact counts as similar
    #[arg(long, default_value_t = COLOUR_CHART_THRESHOLD)]
    pub threshold: f64,
    /// Artefact type recorded in the colour_tag column
    #[arg(long, default_value = "artefact")]
    pub tag: String,
}

impl CfOp {
    fn name(&self) -> &'static str {
        match self {
            CfOp::Recolor(_) => "counterfactual recolor",
            CfOp::Square(_) => "counterfactual square",
            CfOp::Scale(_) => "counterfactual scale",
            CfOp::Annotate(_) => "counterfactual annotate",
        }
    }

    fn io_mut(&mut self) -> &mut Io {
        match self {
            CfOp::Recolor(a) => &mut a.io,
            CfOp::Square(a) => &mut a.io,
            CfOp::Scale(a) => &mut a.io,
            CfOp::Annotate(a) => &mut a.io,
        }
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_pair(image: &Path, masks: &Path) -> Result<(ImageBuffer, MaskBuffer)> {
    let img =
        ImageBuffer::load_png(image).with_context(|| format!("loading {}", image.display()))?;
    let mask_path = masks.join(file_name(image));
    let mask = MaskBuffer::load_png(&mask_path)
        .with_context(|| format!("loading {}", mask_path.display()))?;
    Ok((img, mask))
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| anyhow::anyhow!("{flag} is required"))
}

pub fn run(args: CounterfactualArgs) -> Result<()> {
    let mut op = args.op;
    if let Some(cfg) = op.io_mut().config.take() {
        let out = op.io_mut().out.take();
        let name = op.name();
        op = replay(name, &cfg)?;
        if out.is_some() {
            op.io_mut().out = out;
        }
    }
    let io = op.io_mut().clone();
    let images = list_pngs(required(&io.images, "--images")?)?;
    if images.is_empty() {
        bail!("no PNG images found");
    }
    let staging = Staging::new(require_out(&io.out)?)?;
    write_config_echo(&staging, op.name(), &op)?;

    match &op {
        CfOp::Recolor(a) => {
            let masks = required(&a.masks, "--masks")?;
            let target = parse_rgb(required(&a.target, "--target")?)?;
            let mut w = csv::Writer::from_path(staging.path("clamping.csv"))?;
            w.write_record(["image", "clamped_fraction"])?;
            for path in &images {
                let (img, mask) = load_pair(path, masks)?;
                let (out, clamped) = recolor_mean_shift(&img, &mask, target)
                    .with_context(|| format!("recolouring {}", path.display()))?;
                out.save_png(staging.path(&file_name(path)))?;
                w.write_record([file_name(path), fmt_f64(clamped)])?;
            }
            w.flush()?;
        }
        CfOp::Square(a) => {
            let stats = ChannelStats {
                mean: parse_rgb(required(&a.mean, "--mean")?)?,
                std: parse_rgb(required(&a.std, "--std")?)?,
            };
            fs::create_dir_all(staging.path("masks"))?;
            for (i, path) in images.iter().enumerate() {
                let img = ImageBuffer::load_png(path)
                    .with_context(|| format!("loading {}", path.display()))?;
                let (out, mask) = inject_square(&img, a.area, a.sigma, &stats, a.seed + i as u64)?;
                out.save_png(staging.path(&file_name(path)))?;
                mask.save_png(staging.path("masks").join(file_name(path)))?;
            }
        }
        CfOp::Scale(a) => {
            let masks = required(&a.masks, "--masks")?;
            let smooth = Smoothing {
                kernel: a.kernel,
                sigma: a.smooth_sigma,
            };
            for path in &images {
                let (img, mask) = load_pair(path, masks)?;
                scale_region_intensity(&img, &mask, a.factor, smooth)?
                    .save_png(staging.path(&file_name(path)))?;
            }
        }
        CfOp::Annotate(a) => {
            let masks = required(&a.masks, "--masks")?;
            let roi = match &a.roi {
                Some(s) => parse_rgb(s)?,
                None => ISIC_LESION_RGB,
            };
            let mut records = Vec::new();
            for path in &images {
                let (img, mask) = load_pair(path, masks)?;
                let stats = mean_rgb(&img, &mask)
                    .with_context(|| format!("measuring {}", path.display()))?;
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                records.push(AnnotationRecord::new(
                    &id,
                    &a.tag,
                    stats.mean,
                    roi,
                    a.threshold,
                ));
            }
            write_annotations(staging.path("annotations.csv"), &records)?;
        }
    }
    staging.commit()
}
