use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use oodg_core::data::{load_any_dump, save_feature_dump};
use oodg_core::subspace::{
    component_discriminability, load_subspace, pca_fit, project_about_mean, save_subspace,
    select_nuisance, variance_alignment, VarianceAlignment,
};
use oodg_core::{ScorerConfig, SubspaceModel64};
use serde::{Deserialize, Serialize};

use crate::common::{fmt_f64, replay, require_out, write_config_echo, DataArgs, RunData, Staging};
use crate::eval::{configs_for, evaluate, resolve_methods};

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SubspaceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,

    /// Similar and dissimilar groups whose contrast defines the nuisance
    /// subspace, in that order (`id` selects the ID test rows)
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    #[serde(default)]
    pub group: Vec<String>,

    /// Number of nuisance components to remove
    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Scorers for the before/after comparison, comma separated
    #[arg(long, value_delimiter = ',', default_value = "mahalanobis")]
    pub method: Vec<String>,

    /// Evaluate the projection on another manifest instead of the fitting one
    #[arg(long)]
    pub apply_to: Option<String>,

    /// Dumps for --apply-to, `SPLIT=PATH` (repeatable)
    #[arg(long = "apply-dump", value_name = "SPLIT=PATH")]
    #[serde(default)]
    pub apply_dumps: Vec<String>,

    /// TPR at which the false-positive rate is reported
    #[arg(long, default_value_t = 0.8)]
    pub tpr: f64,

    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Replay the arguments echoed in a previous run's config.json
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Before/after AUROC of one scorer on one group.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub method: String,
    pub config: String,
    pub group: String,
    pub auroc_before: f64,
    pub auroc_after: f64,
}

fn project_run(data: &RunData, model: &SubspaceModel64) -> Result<RunData> {
    Ok(RunData {
        seed: data.seed,
        manifest: data.manifest.clone(),
        train: project_about_mean(&data.train, model)?,
        test: project_about_mean(&data.test, model)?,
        head: data.head.clone(),
    })
}

pub fn before_after(
    data: &RunData,
    model: &SubspaceModel64,
    configs: &[ScorerConfig],
    tpr: f64,
) -> Result<Vec<ProjectionRow>> {
    let groups = crate::common::order_groups(data.ood_groups());
    let projected = project_run(data, model)?;
    let mut rows = Vec::new();
    for cfg in configs {
        let before = evaluate(data, cfg, &groups, tpr)?;
        let after = evaluate(&projected, cfg, &groups, tpr)?;
        for (b, a) in before.into_iter().zip(after) {
            rows.push(ProjectionRow {
                method: b.method,
                config: b.config,
                group: b.group,
                auroc_before: b.auroc,
                auroc_after: a.auroc,
            });
        }
    }
    Ok(rows)
}

fn write_components(path: &Path, model: &SubspaceModel64) -> Result<()> {
    let scores = model.discriminability().unwrap_or_default();
    let nuisance = model.nuisance_indices().unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "component",
        "eigenvalue",
        "log_eigenvalue",
        "discriminability",
        "nuisance",
    ])?;
    for (i, &l) in model.eigenvalues().iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_f64(l),
            fmt_f64(l.ln()),
            scores.get(i).map_or_else(String::new, |v| fmt_f64(*v)),
            nuisance.contains(&i).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_projection(path: &Path, rows: &[ProjectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "config", "group", "auroc_before", "auroc_after"])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.config.clone(),
            r.group.clone(),
            fmt_f64(r.auroc_before),
            fmt_f64(r.auroc_after),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn report_markdown(
    args: &SubspaceArgs,
    model: &SubspaceModel64,
    align: &VarianceAlignment,
    rows: &[ProjectionRow],
) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Nuisance subspace\n");
    let _ = writeln!(
        md,
        "Layer `{}`, C = {}. Contrast: `{}` vs `{}`. Removed k = {}: {:?}.\n",
        model.layer_name(),
        model.dim(),
        args.group[0],
        args.group[1],
        args.k,
        model.nuisance_indices().unwrap_or_default()
    );
    let _ = writeln!(
        md,
        "Spearman ρ between log-eigenvalue and discriminability: {:.4} over {} components.\n",
        align.rho,
        align.components.len()
    );
    md.push_str("| component | log λ | I |\n|---:|---:|---:|\n");
    for c in &align.components {
        let _ = writeln!(
            md,
            "| {} | {:.4} | {:.4} |",
            c.component, c.log_eigenvalue, c.discriminability
        );
    }
    md.push_str("\n## Detection before and after projection\n\n");
    md.push_str("| method | config | group | AUROC before | AUROC after | change |\n|---|---|---|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.2} | {:.2} | {:+.2} |",
            r.method,
            r.config,
            r.group,
            100.0 * r.auroc_before,
            100.0 * r.auroc_after,
            100.0 * (r.auroc_after - r.auroc_before)
        );
    }
    md
}

pub fn run(mut args: SubspaceArgs) -> Result<()> {
    if let Some(cfg) = args.config.take() {
        let out = args.out.take();
        args = replay("subspace", &cfg)?;
        args.out = out.or(args.out);
    }
    if args.group.len() != 2 {
        bail!("--group takes exactly two groups: similar, dissimilar");
    }
    let (methods, _) = resolve_methods(&args.method)?;
    let configs = configs_for(&methods, false);
    let staging = Staging::new(require_out(&args.out)?)?;
    write_config_echo(&staging, "subspace", &args)?;

    let seed = args.data.seeds()[0];
    let data = args.data.load(seed)?;
    let sim = data.test.select(&data.rows_of(&args.group[0]));
    let diss = data.test.select(&data.rows_of(&args.group[1]));
    for (name, fs) in [(&args.group[0], &sim), (&args.group[1], &diss)] {
        if fs.is_empty() {
            bail!("group '{name}' has no test samples");
        }
    }
    let pca = pca_fit(&data.train).context("fitting PCA on the training split")?;
    let scores = component_discriminability(&pca, &sim, &diss)?;
    let model = select_nuisance(&pca.with_discriminability(scores)?, args.k)?;
    let align = variance_alignment(&model)?;
    save_subspace(&model, staging.path("subspace.oodg"))?;
    write_components(&staging.path("components.csv"), &model)?;

    let target = match &args.apply_to {
        Some(manifest) => DataArgs {
            manifest: Some(manifest.clone()),
            dumps: args.apply_dumps.clone(),
            seed: vec![seed],
            zscore: args.data.zscore,
        }
        .load(seed)?,
        None => data,
    };
    let rows = before_after(&target, &model, &configs, args.tpr)?;
    write_projection(&staging.path("projection.csv"), &rows)?;
    fs::write(
        staging.path("report.md"),
        report_markdown(&args, &model, &align, &rows),
    )?;
    staging.commit()
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ProjectArgs {
    /// Subspace file written by `subspace`
    #[arg(long)]
    pub subspace: Option<PathBuf>,

    /// Dump to project
    #[arg(long)]
    pub dump: Option<PathBuf>,

    /// Re-select this many nuisance components instead of the stored ones
    #[arg(long)]
    pub k: Option<usize>,

    /// Output dump; the layer name is taken from its file name
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes the dump with its nuisance components removed. Head weights are
/// carried over unchanged.
pub fn run_project(args: ProjectArgs) -> Result<()> {
    let subspace = args
        .subspace
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--subspace is required"))?;
    let dump = args
        .dump
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--dump is required"))?;
    let out = require_out(&args.out)?;
    let mut model = load_subspace::<f64>(subspace)
        .with_context(|| format!("loading {}", subspace.display()))?;
    if let Some(k) = args.k {
        model = select_nuisance(&model, k)?;
    }
    let (fs, head) =
        load_any_dump::<f64>(dump).with_context(|| format!("loading {}", dump.display()))?;
    let projected = project_about_mean(&fs, &model)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let partial = crate::common::partial_path(out);
    save_feature_dump(&projected, head.as_ref(), &partial)
        .with_context(|| format!("writing {}", partial.display()))?;
    fs::rename(&partial, out).with_context(|| format!("finalising {}", out.display()))?;
    Ok(())
}
