//! Solver settings shared by the fitting subcommands, with three-level
//! precedence: command-line flags beat the `--config` file, which beats the
//! built-in defaults. The config file is plain `key = value` lines; `#`
//! starts a comment.

use crate::CliError;
use clap::Args;
use homp::loss::LossFunction;
use homp::solver::{SolverConfig, Strategy};
use homp::spectral::PowerIterConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Args)]
pub struct SolverFlags {
    /// Weight-update strategy: homp-ls | hormp-ls | hoomp-ls | homp-g
    #[arg(long)]
    strategy: Option<String>,
    /// Rank budget: maximum number of rank-one terms
    #[arg(long)]
    k: Option<usize>,
    /// Stop once the objective falls to this value (0 disables)
    #[arg(long)]
    tol: Option<f64>,
    /// Loss: ls | huber:d | ghuber:d,p | l1l2 | fair:s | cauchy:s
    #[arg(long)]
    loss: Option<String>,
    /// Block-coordinate refinement sweeps per selected atom
    #[arg(long)]
    bcu_sweeps: Option<usize>,
    /// Seed for atom-selection restarts
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` file supplying defaults for the flags above
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Fully resolved solver settings.
pub struct Resolved {
    pub config: SolverConfig,
    pub loss: LossFunction,
}

impl Resolved {
    /// Metadata comment lines for trace CSVs.
    pub fn comments(&self) -> Vec<(String, String)> {
        vec![
            ("strategy".into(), self.config.strategy.to_string()),
            ("k".into(), self.config.max_terms.to_string()),
            ("tol".into(), self.config.stop_tol.to_string()),
            ("loss".into(), self.loss.spec_string()),
            ("bcu_sweeps".into(), self.config.bcu_sweeps.to_string()),
            ("seed".into(), self.config.power.seed.to_string()),
        ]
    }
}

const KNOWN_KEYS: &[&str] = &["strategy", "k", "tol", "loss", "bcu-sweeps", "seed"];

/// `key = value` lines keyed for lookup; remembers line numbers for errors.
struct ConfigFile {
    values: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{lineno}: expected `key = value`, got `{line}`",
                    path.display()
                ))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{}:{lineno}: unknown config key `{key}` (known: {})",
                    path.display(),
                    KNOWN_KEYS.join(", ")
                )));
            }
            values.insert(key, (lineno, value.trim().to_string()));
        }
        Ok(ConfigFile { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }
}

fn parse_with<T: FromStr>(raw: &str, what: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

impl SolverFlags {
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let file = match &self.config {
            Some(p) => Some(ConfigFile::load(p)?),
            None => None,
        };
        let from_file = |key: &str| file.as_ref().and_then(|f| f.get(key));

        let defaults = SolverConfig::default();
        let strategy = match self.strategy.as_deref().or_else(|| from_file("strategy")) {
            Some(raw) => parse_with::<Strategy>(raw, "strategy")?,
            None => defaults.strategy,
        };
        let max_terms = match self.k {
            Some(k) => k,
            None => match from_file("k") {
                Some(raw) => parse_with(raw, "k")?,
                None => defaults.max_terms,
            },
        };
        let stop_tol = match self.tol {
            Some(t) => t,
            None => match from_file("tol") {
                Some(raw) => parse_with(raw, "tol")?,
                None => defaults.stop_tol,
            },
        };
        let bcu_sweeps = match self.bcu_sweeps {
            Some(b) => b,
            None => match from_file("bcu-sweeps") {
                Some(raw) => parse_with(raw, "bcu-sweeps")?,
                None => defaults.bcu_sweeps,
            },
        };
        let seed = match self.seed {
            Some(s) => s,
            None => match from_file("seed") {
                Some(raw) => parse_with(raw, "seed")?,
                None => PowerIterConfig::default().seed,
            },
        };
        let loss = match self.loss.as_deref().or_else(|| from_file("loss")) {
            Some(raw) => LossFunction::parse(raw)
                .map_err(|e| CliError::Usage(format!("loss: {e}")))?,
            None => LossFunction::LeastSquares,
        };
        Ok(Resolved {
            config: SolverConfig {
                strategy,
                max_terms,
                stop_tol,
                power: PowerIterConfig {
                    seed,
                    ..PowerIterConfig::default()
                },
                bcu_sweeps,
                ..defaults
            },
            loss,
        })
    }
}
