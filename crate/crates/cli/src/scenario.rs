//! Scenario files. Every dimensional key carries its unit in the name
//! (`*_hz` for frequency/2pi, `*_s`, `*_rad`), so angular and ordinary
//! frequencies cannot be confused.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use lrbounds::bounds::BoundKind;
use lrbounds::constants::hz_to_angular;
use lrbounds::crystal::{CrystalConfig, KappaConvention};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub preset: String,
    /// Bound kinds by name (`eq4`, `eq9`, `eq10`, `eq11_main`, `eq11_supp`,
    /// `bosonic`, `impulsive_exact`).
    #[serde(default)]
    pub kinds: Vec<String>,
    /// Source site; the central site when absent.
    pub source: Option<usize>,
    pub probe: Option<usize>,
    pub time: TimeGrid,
    #[serde(default)]
    pub drive: Drive,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    #[serde(default)]
    pub t_min_s: f64,
    pub t_max_s: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drive {
    #[serde(default)]
    pub g_hz: f64,
    pub detuning_hz: Option<f64>,
    #[serde(default = "unit_area")]
    pub theta_rad: f64,
    #[serde(default)]
    pub kappa: KappaConvention,
}

fn unit_area() -> f64 {
    1.0
}

impl Default for Drive {
    fn default() -> Self {
        Drive {
            g_hz: 0.0,
            detuning_hz: None,
            theta_rad: 1.0,
            kappa: KappaConvention::KappaSupp,
        }
    }
}

impl TimeGrid {
    /// `steps + 1` evenly spaced points from t_min_s to t_max_s.
    pub fn points(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|k| self.t_min_s + (self.t_max_s - self.t_min_s) * k as f64 / self.steps as f64)
            .collect()
    }
}

impl Drive {
    pub fn g(&self) -> f64 {
        hz_to_angular(self.g_hz)
    }

    pub fn detuning(&self) -> Option<f64> {
        self.detuning_hz.map(hz_to_angular)
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let s: Scenario = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        CrystalConfig::preset(&self.preset)?;
        for k in &self.kinds {
            BoundKind::parse(k)?;
        }
        let t = &self.time;
        if t.steps == 0 || !(t.t_max_s > t.t_min_s) || !(t.t_min_s >= 0.0) {
            bail!("time grid must be strictly increasing from a nonnegative start");
        }
        if !self.drive.theta_rad.is_finite() || !self.drive.g_hz.is_finite() {
            bail!("drive parameters must be finite");
        }
        Ok(())
    }

    pub fn bound_kinds(&self) -> Result<Vec<BoundKind>> {
        Ok(self.kinds.iter().map(|k| BoundKind::parse(k)).collect::<lrbounds::Result<_>>()?)
    }
}
