//! The JSON experiment document. Every field is optional; flags override the
//! file, and the file overrides the built-in defaults.

use std::path::{Path, PathBuf};

use rrnar::error::{Error, Result};
use rrnar::estimator::FitConfig;
use rrnar::experiments::{BenchConfig, RatesKind, Topology};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Simulate,
    Fit,
    Rank,
    Forecast,
    McRank,
    McRatesN,
    McRatesD,
    McRatesT,
    Bench,
}

/// Grid coordinates. Single-model commands read the first value of each
/// list; `mc-rank` takes the Cartesian product; `mc-rates` sweeps the list of
/// its varied dimension and reads the first value of the others.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    pub d: Vec<usize>,
    pub r: Vec<usize>,
    pub t: Vec<usize>,
    pub k: Vec<usize>,
}

/// Data-generating settings beyond the grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// One rank per lag; overrides `grid.r` when set.
    pub ranks: Option<Vec<usize>>,
    pub burn_in: usize,
    pub noise_sd: f64,
    /// Zero innovations with a Gaussian initial state.
    pub noiseless: bool,
    pub exact_stationarity: bool,
    pub singular_low: f64,
    pub singular_high: f64,
    pub fixed_betas: Option<Vec<(f64, f64)>>,
    pub fixed_singular: Option<Vec<Vec<f64>>>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            ranks: None,
            burn_in: 100,
            noise_sd: 1.0,
            noiseless: false,
            exact_stationarity: false,
            singular_low: 0.5,
            singular_high: 1.5,
            fixed_betas: None,
            fixed_singular: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub fixed_betas: Option<(f64, f64)>,
    pub fixed_singular: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must name the subcommand being run.
    pub kind: Option<Kind>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub reps: Option<usize>,
    pub topology: Option<Topology>,
    pub grid: Grid,
    pub simulate: SimSection,
    pub fit: FitConfig,
    pub rates: RatesSection,
    /// Forecast settings shared by `forecast` and `bench`; its `fit` field
    /// is ignored in favour of the top-level `fit`.
    pub bench: BenchConfig,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => rrnar::io::read_json(p),
        }
    }

    pub fn check_kind(&self, allowed: &[Kind]) -> Result<()> {
        match self.kind {
            Some(k) if !allowed.contains(&k) => {
                Err(Error::InvalidInput(format!("config has kind {k:?}, which does not match this command")))
            }
            _ => Ok(()),
        }
    }
}

pub fn rates_kind(kind: Kind) -> Option<RatesKind> {
    match kind {
        Kind::McRatesN => Some(RatesKind::VaryN),
        Kind::McRatesD => Some(RatesKind::VaryD),
        Kind::McRatesT => Some(RatesKind::VaryT),
        _ => None,
    }
}

/// First entry of a grid list, or `default` when empty. Lists longer than
/// one are rejected for single-model commands.
pub fn single(values: &[usize], name: &str, default: usize) -> Result<usize> {
    match values {
        [] => Ok(default),
        [v] => Ok(*v),
        _ => Err(Error::InvalidInput(format!("grid.{name} must hold a single value for this command"))),
    }
}

/// Seed precedence: flag, then file, then `RRNAR_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var("RRNAR_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Error::InvalidInput(format!("RRNAR_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(0),
    }
}

/// Worker count: flag, then file, then the machine's parallelism; always
/// capped by `RRNAR_THREADS` when that is set.
pub fn resolve_parallelism(flag: Option<usize>, file: Option<usize>) -> Result<usize> {
    let requested = flag.or(file).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = match std::env::var("RRNAR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| Error::InvalidInput(format!("RRNAR_THREADS must be a positive integer, got {v:?}")))?,
        Err(_) => usize::MAX,
    };
    if requested == 0 {
        return Err(Error::InvalidInput("parallelism must be at least 1".into()));
    }
    Ok(requested.min(cap))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_named() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"fit": {"etaa": 0.1}}"#).unwrap_err();
        assert!(err.to_string().contains("etaa"), "{err}");
        let ok: ExperimentConfig = serde_json::from_str(r#"{"kind": "mc_rates_n", "topology": {"sparse_k": 3}, "fit": {"ranks": "auto"}}"#).unwrap();
        assert_eq!(ok.kind, Some(Kind::McRatesN));
        assert_eq!(ok.topology, Some(Topology::SparseK(3)));
    }

    #[test]
    fn single_values() {
        assert_eq!(single(&[], "n", 4).unwrap(), 4);
        assert_eq!(single(&[7], "n", 4).unwrap(), 7);
        assert!(single(&[1, 2], "n", 4).is_err());
    }
}
