use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use oodg_core::data::load_any_dump;
use oodg_core::{FeatureSet64, HeadWeights64, Manifest};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const TRAIN_SPLIT: &str = "train";
pub const TEST_SPLIT: &str = "test";
/// Pseudo-group selecting the ID rows of the test split.
pub const ID_GROUP: &str = "id";
/// Group of OOD samples that carry no colour tag.
pub const UNTAGGED_GROUP: &str = "ood";

/// Where to find a run's manifest and dumps. `{seed}` in any path is
/// replaced by the seed being processed.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataArgs {
    /// Manifest JSON (may contain `{seed}`)
    #[arg(long)]
    pub manifest: Option<String>,

    /// Dump for a split, `SPLIT=PATH` (repeatable; default `<manifest dir>/<split>.oodg`
    /// or the single `<split>.*.oodg` there)
    #[arg(long = "dump", value_name = "SPLIT=PATH")]
    #[serde(default)]
    pub dumps: Vec<String>,

    /// Seeds to run, comma separated
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub seed: Vec<u64>,

    /// Standardise features with the training mean and standard deviation
    #[arg(long)]
    #[serde(default)]
    pub zscore: bool,
}

impl DataArgs {
    pub fn seeds(&self) -> Vec<u64> {
        if self.seed.is_empty() {
            vec![0]
        } else {
            self.seed.clone()
        }
    }

    fn manifest_template(&self) -> Result<&str> {
        self.manifest
            .as_deref()
            .ok_or_else(|| anyhow!("--manifest is required"))
    }

    pub fn manifest_path(&self, seed: u64) -> Result<PathBuf> {
        Ok(PathBuf::from(expand_seed(self.manifest_template()?, seed)))
    }

    fn dump_overrides(&self) -> Result<BTreeMap<String, String>> {
        self.dumps
            .iter()
            .map(|spec| {
                spec.split_once('=')
                    .map(|(s, p)| (s.to_string(), p.to_string()))
                    .ok_or_else(|| anyhow!("--dump expects SPLIT=PATH, got '{spec}'"))
            })
            .collect()
    }

    pub fn dump_path(&self, split: &str, seed: u64) -> Result<PathBuf> {
        if let Some(p) = self.dump_overrides()?.get(split) {
            return Ok(PathBuf::from(expand_seed(p, seed)));
        }
        let manifest = self.manifest_path(seed)?;
        let dir = manifest.parent().unwrap_or(Path::new("."));
        default_dump(dir, split)
    }

    pub fn load(&self, seed: u64) -> Result<RunData> {
        let manifest_path = self.manifest_path(seed)?;
        let manifest = Manifest::load(&manifest_path)
            .with_context(|| format!("loading manifest {}", manifest_path.display()))?;
        let (train, head) = self.load_split(&manifest, TRAIN_SPLIT, seed)?;
        let (test, test_head) = self.load_split(&manifest, TEST_SPLIT, seed)?;
        let head = head.or(test_head);
        let (train, test) = if self.zscore {
            zscore(train, test)?
        } else {
            (train, test)
        };
        Ok(RunData {
            seed,
            manifest,
            train,
            test,
            head,
        })
    }

    fn load_split(
        &self,
        manifest: &Manifest,
        split: &str,
        seed: u64,
    ) -> Result<(FeatureSet64, Option<HeadWeights64>)> {
        let path = self.dump_path(split, seed)?;
        let (fs, head) = load_any_dump::<f64>(&path)
            .with_context(|| format!("loading dump {}", path.display()))?;
        let fs = manifest
            .attach(split, fs)
            .with_context(|| format!("matching {} against the manifest", path.display()))?;
        Ok((fs, head))
    }
}

pub fn expand_seed(template: &str, seed: u64) -> String {
    template.replace("{seed}", &seed.to_string())
}

fn default_dump(dir: &Path, split: &str) -> Result<PathBuf> {
    let plain = dir.join(format!("{split}.oodg"));
    if plain.exists() {
        return Ok(plain);
    }
    let prefix = format!("{split}.");
    let mut found = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(&prefix) && name.ends_with(".oodg") {
                found.push(entry.path());
            }
        }
    }
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => bail!(
            "no dump for split '{split}' in {}; pass --dump {split}=PATH",
            dir.display()
        ),
        _ => bail!(
            "several dumps for split '{split}' in {}; pass --dump {split}=PATH",
            dir.display()
        ),
    }
}

fn zscore(train: FeatureSet64, test: FeatureSet64) -> Result<(FeatureSet64, FeatureSet64)> {
    let x = train.matrix();
    let n = x.nrows().max(1) as f64;
    let mean = x.sum_axis(ndarray::Axis(0)) / n;
    let var = x
        .rows()
        .into_iter()
        .fold(ndarray::Array1::<f64>::zeros(x.ncols()), |acc, r| {
            acc + (&r - &mean).mapv(|d| d * d)
        })
        / n;
    let sd = var.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let apply = |fs: &FeatureSet64| fs.with_matrix((fs.matrix() - &mean) / &sd);
    Ok((apply(&train)?, apply(&test)?))
}

/// Features and manifest of one seed.
pub struct RunData {
    pub seed: u64,
    pub manifest: Manifest,
    pub train: FeatureSet64,
    pub test: FeatureSet64,
    pub head: Option<HeadWeights64>,
}

impl RunData {
    /// Group of each test row: `None` for ID rows.
    pub fn test_groups(&self) -> Vec<Option<String>> {
        self.test
            .sample_ids()
            .iter()
            .map(|id| {
                self.manifest.is_ood(id).then(|| {
                    self.manifest
                        .colour_tag
                        .get(id)
                        .cloned()
                        .unwrap_or_else(|| UNTAGGED_GROUP.to_string())
                })
            })
            .collect()
    }

    /// Test rows belonging to `group`; [`ID_GROUP`] selects the ID rows.
    pub fn rows_of(&self, group: &str) -> Vec<usize> {
        self.test_groups()
            .iter()
            .enumerate()
            .filter(|(_, g)| match g {
                None => group == ID_GROUP,
                Some(g) => g == group,
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn ood_groups(&self) -> Vec<String> {
        let mut groups: Vec<String> = self.test_groups().into_iter().flatten().collect();
        groups.sort();
        groups.dedup();
        groups
    }
}

/// Puts "similar" ahead of "dissimilar" so differences read sim − diss.
pub fn order_groups(mut groups: Vec<String>) -> Vec<String> {
    let rank = |g: &str| match g {
        "similar" => 0,
        "dissimilar" => 1,
        _ => 2,
    };
    groups.sort_by(|a, b| rank(a).cmp(&rank(b)).then(a.cmp(b)));
    groups.dedup();
    groups
}

/// Output directory written under `<out>.partial` and renamed on success.
/// A failed run leaves the `.partial` directory behind for inspection.
pub struct Staging {
    pub dir: PathBuf,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        let dir = partial_path(target);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn commit(self) -> Result<()> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target)
                .with_context(|| format!("replacing {}", self.target.display()))?;
        }
        fs::rename(&self.dir, &self.target)
            .with_context(|| format!("finalising {}", self.target.display()))?;
        log::info!("wrote {}", self.target.display());
        Ok(())
    }
}

pub fn partial_path(target: &Path) -> PathBuf {
    let mut name = target
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".partial");
    target.with_file_name(name)
}

#[derive(Serialize, Deserialize)]
struct ConfigEcho<A> {
    command: String,
    version: String,
    args: A,
}

/// Writes `config.json` describing the resolved arguments of a run.
pub fn write_config_echo<A: Serialize>(staging: &Staging, command: &str, args: &A) -> Result<()> {
    let echo = ConfigEcho {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        args,
    };
    let mut text = serde_json::to_string_pretty(&echo)?;
    text.push('\n');
    fs::write(staging.path("config.json"), text)?;
    Ok(())
}

/// Replaces `args` with the ones echoed in a previous run's `config.json`.
/// `--out` given on the command line still takes precedence.
pub fn replay<A: DeserializeOwned>(command: &str, path: &Path) -> Result<A> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let echo: ConfigEcho<A> = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    if echo.command != command {
        bail!(
            "{} was written by '{}' and cannot configure '{command}'",
            path.display(),
            echo.command
        );
    }
    Ok(echo.args)
}

pub fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| anyhow!("--out is required"))
}

/// Formats a metric for CSV output with full round-trip precision.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn parse_rgb(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("expected R,G,B, got '{s}'"))?;
    match parts[..] {
        [r, g, b] => Ok([r, g, b]),
        _ => bail!("expected three channels, got '{s}'"),
    }
}
