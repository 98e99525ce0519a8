//! Result tables: per-seed rows, best-configuration summaries, Markdown and SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use oodg_core::metrics::{EvalResult, SeedMetrics};
use oodg_core::{Method, ScorerConfig};
use serde::{Deserialize, Serialize};

use crate::common::{fmt_f64, order_groups, replay, require_out, write_config_echo, Staging};

/// One scorer configuration evaluated on one OOD group for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub config: String,
    pub group: String,
    pub seed: u64,
    pub auroc: f64,
    pub aurc: f64,
    pub fpr_at_tpr: f64,
}

impl ResultRow {
    fn sort_key(&self) -> (&str, &str, &str, u64) {
        (&self.method, &self.config, &self.group, self.seed)
    }
}

pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "config",
        "group",
        "seed",
        "auroc",
        "aurc",
        "fpr_at_tpr",
    ])?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            r.config.clone(),
            r.group.clone(),
            r.seed.to_string(),
            fmt_f64(r.auroc),
            fmt_f64(r.aurc),
            fmt_f64(r.fpr_at_tpr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?);
    }
    Ok(rows)
}

/// Seed-aggregated results of every configuration, ordered like the rows.
pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<EvalResult>> {
    let mut cells: BTreeMap<(String, String, String), Vec<(u64, SeedMetrics)>> = BTreeMap::new();
    for r in rows {
        cells
            .entry((r.method.clone(), r.config.clone(), r.group.clone()))
            .or_default()
            .push((
                r.seed,
                SeedMetrics {
                    auroc: r.auroc,
                    aurc: r.aurc,
                    fpr_at_tpr: r.fpr_at_tpr,
                },
            ));
    }
    cells
        .into_iter()
        .map(|((method, config, group), mut seeds)| {
            seeds.sort_by_key(|(s, _)| *s);
            let method: Method = method.parse()?;
            let cfg = ScorerConfig::from_label(method, &config)?;
            let metrics: Vec<SeedMetrics> = seeds.into_iter().map(|(_, m)| m).collect();
            Ok(EvalResult::aggregate(&cfg, &group, &metrics)?)
        })
        .collect()
}

/// Per (method, group), the configuration with the highest mean AUROC.
/// Ties keep the configuration that sorts first.
pub fn best_configs(results: &[EvalResult]) -> Vec<EvalResult> {
    let mut best: BTreeMap<(String, String), EvalResult> = BTreeMap::new();
    for r in results {
        let key = (r.method.clone(), r.group.clone());
        match best.get(&key) {
            Some(b) if b.auroc >= r.auroc => {}
            _ => {
                best.insert(key, r.clone());
            }
        }
    }
    best.into_values().collect()
}

pub fn write_summary_csv(path: &Path, best: &[EvalResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "config",
        "group",
        "n_seeds",
        "auroc",
        "auroc_ci_lo",
        "auroc_ci_hi",
        "aurc",
        "fpr_at_tpr",
    ])?;
    for r in best {
        w.write_record([
            r.method.clone(),
            r.config.label(),
            r.group.clone(),
            r.per_seed_values.len().to_string(),
            fmt_f64(r.auroc),
            fmt_f64(r.ci95.0),
            fmt_f64(r.ci95.1),
            fmt_f64(r.aurc),
            fmt_f64(r.fpr_at_tpr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn groups_of(best: &[EvalResult]) -> Vec<String> {
    order_groups(best.iter().map(|r| r.group.clone()).collect())
}

fn methods_of(best: &[EvalResult]) -> Vec<String> {
    let mut m: Vec<String> = best.iter().map(|r| r.method.clone()).collect();
    m.dedup();
    m
}

/// Markdown table of best-configuration AUROCs (×100) per method and group.
pub fn summary_markdown(best: &[EvalResult]) -> String {
    let groups = groups_of(best);
    let lookup: BTreeMap<(&str, &str), &EvalResult> = best
        .iter()
        .map(|r| ((r.method.as_str(), r.group.as_str()), r))
        .collect();
    let mut md = String::new();
    md.push_str("# Detection summary\n\n");
    md.push_str(
        "Best configuration per method and group, selected by mean test AUROC. \
         This oracle selection uses OOD labels and is optimistic.\n\n",
    );
    let mut header = String::from("| method |");
    let mut rule = String::from("|---|");
    for g in &groups {
        let _ = write!(header, " {g} AUROC | {g} config |");
        rule.push_str("---:|---|");
    }
    if groups.len() >= 2 {
        let _ = write!(header, " Δ({} − {}) |", groups[0], groups[1]);
        rule.push_str("---:|");
    }
    md.push_str(&header);
    md.push('\n');
    md.push_str(&rule);
    md.push('\n');
    let mut below_chance = Vec::new();
    for m in methods_of(best) {
        let mut line = format!("| {m} |");
        for g in &groups {
            match lookup.get(&(m.as_str(), g.as_str())) {
                Some(r) => {
                    let _ = write!(line, " {:.2} | {} |", 100.0 * r.auroc, r.config.label());
                    if r.auroc < 0.5 {
                        below_chance.push(format!("{m} on {g}"));
                    }
                }
                None => line.push_str(" - | - |"),
            }
        }
        if groups.len() >= 2 {
            match (
                lookup.get(&(m.as_str(), groups[0].as_str())),
                lookup.get(&(m.as_str(), groups[1].as_str())),
            ) {
                (Some(a), Some(b)) => {
                    let _ = write!(line, " {:+.2} |", 100.0 * (a.auroc - b.auroc));
                }
                _ => line.push_str(" - |"),
            }
        }
        md.push_str(&line);
        md.push('\n');
    }
    if !below_chance.is_empty() {
        md.push_str("\nBelow chance (AUROC < 50, score polarity may be inverted): ");
        md.push_str(&below_chance.join(", "));
        md.push('\n');
    }
    md
}

const BAR_W: f64 = 18.0;
const PLOT_H: f64 = 240.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860",
];

/// Grouped bar chart of best-configuration AUROC with 95% interval whiskers.
pub fn summary_svg(best: &[EvalResult]) -> String {
    let groups = groups_of(best);
    let methods = methods_of(best);
    let slot = BAR_W * groups.len() as f64 + 16.0;
    let width = 2.0 * MARGIN + slot * methods.len() as f64 + 120.0;
    let height = PLOT_H + 2.0 * MARGIN + 40.0;
    let y = |v: f64| MARGIN + PLOT_H * (1.0 - v.clamp(0.0, 1.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    for tick in 0..=10 {
        let v = tick as f64 / 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
            width - 120.0 - MARGIN / 2.0,
            y(v),
            y(v),
            MARGIN - 4.0,
            y(v) + 4.0
        );
    }
    for (mi, m) in methods.iter().enumerate() {
        let x0 = MARGIN + 8.0 + slot * mi as f64;
        for (gi, g) in groups.iter().enumerate() {
            let Some(r) = best.iter().find(|r| &r.method == m && &r.group == g) else {
                continue;
            };
            let x = x0 + BAR_W * gi as f64;
            let colour = PALETTE[gi % PALETTE.len()];
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{colour}"><title>{m} {g}: {:.4}</title></rect>"#,
                y(r.auroc),
                BAR_W - 2.0,
                y(0.0) - y(r.auroc),
                r.auroc
            );
            let cx = x + (BAR_W - 2.0) / 2.0;
            let (lo, hi) = r.ci95;
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.1} {:.1}V{:.1}M{:.1} {:.1}H{:.1}M{:.1} {:.1}H{:.1}" stroke="black"/>"#,
                y(lo),
                y(hi),
                cx - 4.0,
                y(lo),
                cx + 4.0,
                cx - 4.0,
                y(hi),
                cx + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{m}</text>"#,
            x0 + BAR_W * groups.len() as f64 / 2.0,
            y(0.0) + 16.0
        );
    }
    let lx = width - 120.0;
    for (gi, g) in groups.iter().enumerate() {
        let ly = MARGIN + 16.0 * gi as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{g}</text>"#,
            PALETTE[gi % PALETTE.len()],
            lx + 14.0,
            ly + 9.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" transform="rotate(-90 {:.1} {:.1})" text-anchor="middle">AUROC</text>"#,
        14.0,
        MARGIN + PLOT_H / 2.0,
        14.0,
        MARGIN + PLOT_H / 2.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes `summary.csv`, `summary.md` and optionally `summary.svg` into `dir`.
pub fn write_reports(dir: &Path, rows: &[ResultRow], svg: bool) -> Result<()> {
    let best = best_configs(&aggregate(rows)?);
    write_summary_csv(&dir.join("summary.csv"), &best)?;
    fs::write(dir.join("summary.md"), summary_markdown(&best))?;
    if svg {
        fs::write(dir.join("summary.svg"), summary_svg(&best))?;
    }
    Ok(())
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReportArgs {
    /// results.csv written by `eval`
    #[arg(long)]
    pub results: Option<PathBuf>,

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

pub fn run(mut args: ReportArgs) -> Result<()> {
    if let Some(cfg) = args.config.take() {
        let out = args.out.take();
        args = replay("report", &cfg)?;
        args.out = out.or(args.out);
    }
    let results = args
        .results
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--results is required"))?;
    let staging = Staging::new(require_out(&args.out)?)?;
    write_config_echo(&staging, "report", &args)?;
    let rows = read_results(&results)?;
    write_reports(&staging.dir, &rows, args.svg)?;
    staging.commit()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, config: &str, group: &str, seed: u64, auroc: f64) -> ResultRow {
        ResultRow {
            method: method.into(),
            config: config.into(),
            group: group.into(),
            seed,
            auroc,
            aurc: 0.1,
            fpr_at_tpr: 0.2,
        }
    }

    #[test]
    fn best_config_by_mean_auroc() {
        let rows = vec![
            row("knn", "k=1", "g", 0, 0.6),
            row("knn", "k=1", "g", 1, 0.8),
            row("knn", "k=5", "g", 0, 0.71),
            row("knn", "k=5", "g", 1, 0.71),
        ];
        let best = best_configs(&aggregate(&rows).unwrap());
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].config.label(), "k=5");
        assert!((best[0].auroc - 0.71).abs() < 1e-12);
    }

    #[test]
    fn one_summary_row_per_group_for_single_seed() {
        let rows = vec![
            row("mahalanobis", "-", "similar", 0, 0.77),
            row("mahalanobis", "-", "dissimilar", 0, 0.64),
        ];
        let best = best_configs(&aggregate(&rows).unwrap());
        assert_eq!(best.len(), 2);
        assert!(best.iter().all(|b| b.ci95 == (b.auroc, b.auroc)));
        let md = summary_markdown(&best);
        assert!(md.contains("Δ(similar − dissimilar)"), "{md}");
        assert!(md.contains("+13.00"), "{md}");
    }

    #[test]
    fn below_chance_is_flagged() {
        let best = best_configs(&aggregate(&[row("featurenorm", "-", "g", 0, 0.3)]).unwrap());
        assert!(summary_markdown(&best).contains("featurenorm on g"));
        assert!(summary_svg(&best).starts_with("<svg"));
    }
}
