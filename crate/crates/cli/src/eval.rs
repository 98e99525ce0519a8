use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use oodg_core::metrics::SeedMetrics;
use oodg_core::scorers::{fit_scorer, hyperparameter_grid, score_samples};
use oodg_core::{Method, ScorerConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::common::{
    order_groups, replay, require_out, write_config_echo, DataArgs, RunData, Staging, ID_GROUP,
};
use crate::report::{sort_rows, write_reports, write_results, ResultRow};

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,

    /// Scorers to evaluate, comma separated (default: every scorer the dumps support)
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub method: Vec<String>,

    /// Sweep each method's hyperparameter grid instead of its default configuration
    #[arg(long)]
    #[serde(default)]
    pub grid: bool,

    /// OOD groups to evaluate, comma separated (default: every group in the test split)
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub group: Vec<String>,

    /// TPR at which the false-positive rate is reported
    #[arg(long, default_value_t = 0.8)]
    pub tpr: f64,

    /// Also draw an SVG bar chart
    #[arg(long)]
    #[serde(default)]
    pub svg: bool,

    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Replay the arguments echoed in a previous run's config.json
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Methods requested on the command line, or all methods when none were.
/// The second value tells whether the list was explicit.
pub fn resolve_methods(names: &[String]) -> Result<(Vec<Method>, bool)> {
    if names.is_empty() {
        return Ok((Method::ALL.to_vec(), false));
    }
    let mut out = Vec::new();
    for n in names {
        let m: Method = n.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok((out, true))
}

pub fn configs_for(methods: &[Method], grid: bool) -> Vec<ScorerConfig> {
    methods
        .iter()
        .flat_map(|&m| {
            if grid {
                hyperparameter_grid(m)
            } else {
                vec![ScorerConfig::default_for(m)]
            }
        })
        .collect()
}

/// Scores the test split with one configuration and reports every group.
pub fn evaluate(
    data: &RunData,
    cfg: &ScorerConfig,
    groups: &[String],
    tpr: f64,
) -> Result<Vec<ResultRow>> {
    let model = fit_scorer(cfg, &data.train, data.head.as_ref())
        .with_context(|| format!("fitting {cfg}"))?;
    let scores =
        score_samples(&model, &data.test).with_context(|| format!("scoring with {cfg}"))?;
    let id = scores.select(&data.rows_of(ID_GROUP));
    groups
        .iter()
        .map(|g| {
            let ood = scores.select(&data.rows_of(g));
            let m = SeedMetrics::compute(&id, &ood, tpr)
                .with_context(|| format!("{cfg} on group '{g}' (seed {})", data.seed))?;
            Ok(ResultRow {
                method: cfg.method.name().to_string(),
                config: cfg.label(),
                group: g.clone(),
                seed: data.seed,
                auroc: m.auroc,
                aurc: m.aurc,
                fpr_at_tpr: m.fpr_at_tpr,
            })
        })
        .collect()
}

pub fn run(mut args: EvalArgs) -> Result<()> {
    if let Some(cfg) = args.config.take() {
        let out = args.out.take();
        args = replay("eval", &cfg)?;
        args.out = out.or(args.out);
    }
    let (methods, explicit) = resolve_methods(&args.method)?;
    let staging = Staging::new(require_out(&args.out)?)?;
    write_config_echo(&staging, "eval", &args)?;

    let runs: Vec<RunData> = args
        .data
        .seeds()
        .into_iter()
        .map(|s| args.data.load(s))
        .collect::<Result<_>>()?;

    let mut configs = configs_for(&methods, args.grid);
    if runs.iter().any(|r| r.head.is_none()) {
        if let Some(m) = methods.iter().find(|m| m.needs_head()).filter(|_| explicit) {
            bail!("{m} needs head weights but a dump has none");
        }
        configs.retain(|c| {
            let keep = !c.method.needs_head();
            if !keep {
                log::info!("skipping {c}: no head weights in the dumps");
            }
            keep
        });
    }

    if args.grid {
        let dim = runs.iter().map(|r| r.train.dim()).min().unwrap_or(0);
        configs.retain(|c| {
            let fits = c.param("D").map_or(true, |d| d as usize <= dim);
            if !fits {
                log::info!("skipping {c}: exceeds the feature dimension {dim}");
            }
            fits
        });
    }

    let groups = if args.group.is_empty() {
        let mut all: Vec<String> = runs.iter().flat_map(|r| r.ood_groups()).collect();
        all.sort();
        all.dedup();
        order_groups(all)
    } else {
        args.group.clone()
    };
    if groups.is_empty() {
        bail!("the test split has no OOD samples");
    }

    let jobs: Vec<(&RunData, &ScorerConfig)> = runs
        .iter()
        .flat_map(|r| configs.iter().map(move |c| (r, c)))
        .collect();
    log::info!(
        "{} jobs over {} seeds and {} groups",
        jobs.len(),
        runs.len(),
        groups.len()
    );
    let mut rows: Vec<ResultRow> = jobs
        .par_iter()
        .map(|(r, c)| evaluate(r, c, &groups, args.tpr))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    sort_rows(&mut rows);

    write_results(&staging.path("results.csv"), &rows)?;
    write_reports(&staging.dir, &rows, args.svg)?;
    staging.commit()
}
