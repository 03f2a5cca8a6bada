//! Run configuration: a single JSON file, every field defaulted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use frobkit_core::checks::{Battery, Suite};
use frobkit_core::manifold::ModelParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub m: usize,
    pub n: usize,
    pub s: usize,
    pub tail_depth: usize,
    pub n_samples: usize,
    pub grid_size: usize,
    pub seed: u64,
    pub max_level: usize,
    /// Random points (and loops) per check.
    pub points: usize,
    /// Overrides keyed by `"<suite>.<check>"`, e.g. `"princon3.theta0"`.
    pub tolerances: BTreeMap<String, f64>,
    /// Empty means every suite.
    pub suites: Vec<Suite>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            m: 2,
            n: 1,
            s: 1,
            tail_depth: 8,
            n_samples: 256,
            grid_size: 64,
            seed: 0,
            max_level: 2,
            points: 20,
            tolerances: BTreeMap::new(),
            suites: Vec::new(),
            out_dir: PathBuf::from("frobkit-out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn params(&self) -> ModelParams {
        let mut p = ModelParams::new(self.m, self.n, self.s).with_tail_depth(self.tail_depth).with_samples(self.n_samples);
        p.tolerances = self.tolerances.clone();
        p
    }

    pub fn check(&self) -> Result<()> {
        self.params().check().context("model parameters")?;
        if self.grid_size < 8 || !self.grid_size.is_power_of_two() {
            bail!("grid_size {} must be a power of two ≥ 8", self.grid_size);
        }
        if self.points == 0 {
            bail!("points must be positive");
        }
        if self.max_level == 0 {
            bail!("max_level must be at least 1");
        }
        for (k, v) in &self.tolerances {
            if !(v.is_finite() && *v >= 0.0) {
                bail!("tolerance {k} = {v} must be a finite non-negative number");
            }
        }
        Ok(())
    }

    pub fn suites(&self) -> Vec<Suite> {
        if self.suites.is_empty() {
            Suite::ALL.to_vec()
        } else {
            let mut v = self.suites.clone();
            v.sort();
            v.dedup();
            v
        }
    }

    pub fn battery(&self) -> Battery {
        Battery {
            configs: vec![self.params()],
            points: self.points,
            seed: self.seed,
            grid: self.grid_size,
            max_level: self.max_level,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"m": 1, "suites": ["flat"]}"#).unwrap();
        assert_eq!((cfg.m, cfg.n, cfg.s, cfg.n_samples), (1, 1, 1, 256));
        assert_eq!(cfg.suites(), vec![Suite::Flat]);
        cfg.check().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let err = serde_json::from_str::<RunConfig>("{\n  \"m\": 2,\n  \"bogus\": 1\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_ranges() {
        let bad = RunConfig { n_samples: 100, ..RunConfig::default() };
        assert!(bad.check().is_err());
        let bad = RunConfig { grid_size: 48, ..RunConfig::default() };
        assert!(bad.check().is_err());
        assert!(RunConfig::default().check().is_ok());
    }
}
