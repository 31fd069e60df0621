//! Resolved settings: command-line flags over a `key=value` file over defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use mvdi::alpha_pca::DimSelectConfig;
use mvdi::pipeline::{DimChoice, PipelineConfig, Thresholds};

use crate::error::CliError;

/// Settings shared by every subcommand, as given on the command line.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct CommonArgs {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for inner parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Plain-text `key=value` settings; flags win over file values.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Mean weight of the alpha-PCA moment matrices (alpha >= -1).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Number of row factors.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Number of column factors.
    #[arg(long, global = true)]
    pub r: Option<usize>,
    /// Pick the factor counts by the eigenvalue-ratio rule.
    #[arg(long, global = true)]
    pub estimate_dims: bool,
    /// Row screening threshold in [0, 1).
    #[arg(long, global = true)]
    pub row_threshold: Option<f64>,
    /// Column screening threshold in [0, 1).
    #[arg(long, global = true)]
    pub col_threshold: Option<f64>,
    /// Forecast horizon h >= 1.
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
}

pub const DEFAULT_SEED: u64 = 42;

/// Fully resolved settings; `None` fields were never given.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub alpha: f64,
    pub k: Option<usize>,
    pub r: Option<usize>,
    pub estimate_dims: bool,
    pub row_threshold: Option<f64>,
    pub col_threshold: Option<f64>,
    pub horizon: usize,
}

const KEYS: [&str; 9] = [
    "seed",
    "threads",
    "alpha",
    "k",
    "r",
    "estimate_dims",
    "row_threshold",
    "col_threshold",
    "horizon",
];

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
            line: n + 1,
            message: format!("expected key=value, found `{line}`"),
        })?;
        let key = key.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config {
                line: n + 1,
                message: format!("unknown key `{key}`"),
            });
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

fn file_value<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, CliError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| CliError::Config {
            line: 0,
            message: format!("cannot parse `{v}` for `{key}`"),
        }),
    }
}

impl Resolved {
    pub fn from_args(args: &CommonArgs) -> Result<Self, CliError> {
        let map = match &args.config {
            Some(path) => load(path)?,
            None => BTreeMap::new(),
        };
        let estimate_dims = args.estimate_dims || file_value::<bool>(&map, "estimate_dims")?.unwrap_or(false);
        let out = Self {
            seed: args.seed.or(file_value(&map, "seed")?),
            threads: args.threads.or(file_value(&map, "threads")?),
            alpha: args.alpha.or(file_value(&map, "alpha")?).unwrap_or(0.0),
            k: args.k.or(file_value(&map, "k")?),
            r: args.r.or(file_value(&map, "r")?),
            estimate_dims,
            row_threshold: args.row_threshold.or(file_value(&map, "row_threshold")?),
            col_threshold: args.col_threshold.or(file_value(&map, "col_threshold")?),
            horizon: args.horizon.or(file_value(&map, "horizon")?).unwrap_or(1),
        };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.estimate_dims && (self.k.is_some() || self.r.is_some()) {
            return Err(CliError::Usage("--estimate-dims conflicts with a fixed --k/--r".into()));
        }
        if self.k.is_some() != self.r.is_some() {
            return Err(CliError::Usage("--k and --r must be given together".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn dims(&self) -> DimChoice {
        match (self.k, self.r) {
            (Some(k), Some(r)) => DimChoice::Fixed { k, r },
            _ => DimChoice::Estimate(None::<DimSelectConfig>),
        }
    }

    pub fn thresholds(&self) -> Option<Thresholds> {
        if self.row_threshold.is_none() && self.col_threshold.is_none() {
            return None;
        }
        Some(Thresholds {
            row: self.row_threshold.unwrap_or(0.0),
            col: self.col_threshold.unwrap_or(0.0),
        })
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            alpha_weight: self.alpha,
            dims: self.dims(),
            screening: self.thresholds(),
            horizon: self.horizon,
            ..PipelineConfig::default()
        }
    }
}

fn load(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Core(e.into()))?;
    parse_config(&text)
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl fmt::Display for Resolved {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} threads={} alpha={} k={} r={} estimate_dims={} row_threshold={} col_threshold={} horizon={}",
            opt(&self.seed),
            opt(&self.threads),
            self.alpha,
            opt(&self.k),
            opt(&self.r),
            self.estimate_dims || self.k.is_none(),
            opt(&self.row_threshold),
            opt(&self.col_threshold),
            self.horizon
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_yield_to_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# run\nalpha = 1\nk=2\nr=3\nhorizon=4\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            alpha: Some(-0.5),
            ..CommonArgs::default()
        };
        let res = Resolved::from_args(&args).unwrap();
        assert_eq!(res.alpha, -0.5);
        assert_eq!((res.k, res.r, res.horizon), (Some(2), Some(3), 4));
    }

    #[test]
    fn conflicts_across_sources() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "k=2\nr=2\n").unwrap();
        let args = CommonArgs {
            config: Some(path),
            estimate_dims: true,
            ..CommonArgs::default()
        };
        assert_eq!(Resolved::from_args(&args).unwrap_err().kind(), "usage");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config("alpha=1\nbogus=2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
