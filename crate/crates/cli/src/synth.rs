use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use oodg_core::data::save_feature_dump;
use oodg_core::synthbench::{
    gen_anisotropic_id, gen_id_holdout, gen_shifted_ood, geometric_spectrum, SYNTH_LAYER,
};
use oodg_core::{FeatureSet64, Manifest, SynthConfig};
use serde::{Deserialize, Serialize};

use crate::common::{replay, require_out, write_config_echo, Staging, TEST_SPLIT, TRAIN_SPLIT};

/// Group of OOD samples shifted along the lowest-variance axis.
pub const LOW_AXIS_GROUP: &str = "similar";
/// Group of OOD samples shifted along the highest-variance axis.
pub const HIGH_AXIS_GROUP: &str = "dissimilar";

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Seeds to generate, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seed: Vec<u64>,

    /// Feature dimension
    #[arg(long, default_value_t = 16)]
    pub dim: usize,

    /// Largest principal variance
    #[arg(long, default_value_t = 100.0)]
    pub lambda_max: f64,

    /// Smallest principal variance
    #[arg(long, default_value_t = 0.01)]
    pub lambda_min: f64,

    /// Training ID samples per seed
    #[arg(long, default_value_t = 2000)]
    pub n_id: usize,

    /// Held-out ID samples and OOD samples per group
    #[arg(long, default_value_t = 500)]
    pub n_ood: usize,

    /// Shift length (default: square root of the largest variance)
    #[arg(long)]
    pub magnitude: Option<f64>,

    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Replay the arguments echoed in a previous run's config.json
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

impl SynthArgs {
    fn configs(&self, seed: u64) -> (SynthConfig, SynthConfig) {
        let eigenspectrum = geometric_spectrum(self.dim, self.lambda_max, self.lambda_min);
        let high = SynthConfig {
            n_id: self.n_id,
            n_ood: self.n_ood,
            dim: self.dim,
            shift_axis: 0,
            shift_magnitude: self.magnitude.unwrap_or(self.lambda_max.sqrt()),
            eigenspectrum,
            rng_seed: seed,
        };
        let low = SynthConfig {
            shift_axis: self.dim.saturating_sub(1),
            ..high.clone()
        };
        (high, low)
    }
}

fn register(manifest: &mut Manifest, split: &str, fs: &FeatureSet64, ood: Option<&str>) {
    let ids = manifest.splits.entry(split.to_string()).or_default();
    for id in fs.sample_ids() {
        ids.push(id.clone());
        match ood {
            None => {
                manifest.labels.insert(id.clone(), 0);
                manifest.ood_flag.insert(id.clone(), false);
            }
            Some(group) => {
                manifest.ood_flag.insert(id.clone(), true);
                manifest.colour_tag.insert(id.clone(), group.to_string());
            }
        }
    }
}

pub fn run(mut args: SynthArgs) -> Result<()> {
    if let Some(cfg) = args.config.take() {
        let out = args.out.take();
        args = replay("synth", &cfg)?;
        args.out = out.or(args.out);
    }
    let staging = Staging::new(require_out(&args.out)?)?;
    write_config_echo(&staging, "synth", &args)?;
    for &seed in &args.seed {
        let (high, low) = args.configs(seed);
        let (train, frame) = gen_anisotropic_id::<f64>(&high)?;
        let holdout = gen_id_holdout(&high, &frame, args.n_ood)?;
        let ood_low = gen_shifted_ood(&low, &frame)?;
        let ood_high = gen_shifted_ood(&high, &frame)?;
        let test = holdout.concat(&ood_low)?.concat(&ood_high)?;

        let mut manifest = Manifest {
            dataset_name: format!("synthetic-c{}", args.dim),
            splits: BTreeMap::new(),
            seed,
            ..Manifest::default()
        };
        register(&mut manifest, TRAIN_SPLIT, &train, None);
        register(&mut manifest, TEST_SPLIT, &holdout, None);
        register(&mut manifest, TEST_SPLIT, &ood_low, Some(LOW_AXIS_GROUP));
        register(&mut manifest, TEST_SPLIT, &ood_high, Some(HIGH_AXIS_GROUP));

        let dir = staging.path(&format!("seed-{seed}"));
        std::fs::create_dir_all(&dir)?;
        save_feature_dump(
            &train,
            None,
            dir.join(format!("{TRAIN_SPLIT}.{SYNTH_LAYER}.oodg")),
        )?;
        save_feature_dump(
            &test,
            None,
            dir.join(format!("{TEST_SPLIT}.{SYNTH_LAYER}.oodg")),
        )?;
        manifest.save(dir.join("manifest.json"))?;
        log::info!(
            "seed {seed}: {} train, {} test samples",
            train.n_samples(),
            test.n_samples()
        );
    }
    staging.commit()
}
