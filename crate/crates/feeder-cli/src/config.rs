//! Layered configuration: command-line flags override the config file,
//! which overrides the library defaults.

use anyhow::{bail, Context, Result};
use feeder_core::dynamics::SimulationParams;
use feeder_core::powerflow::{LoadedTermRule, SweepOptions};
use feeder_core::reduction::ReductionParams;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct FileConfig {
    /// Head voltage for sweeps, pu.
    pub head_v: Option<f64>,
    /// Sweep convergence tolerance, pu.
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    /// `mean` (default) or `sum` handling of loaded-section impedances.
    pub loaded_term_rule: Option<LoadedTermRule>,
    pub reduction: Option<ReductionParams>,
    pub simulation: Option<SimulationParams>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text)
                .with_context(|| format!("parsing TOML config {}", path.display()))?,
            Some("json") => serde_json::from_str(&text)
                .with_context(|| format!("parsing JSON config {}", path.display()))?,
            other => bail!(
                "config file {} must end in .toml or .json (got {:?})",
                path.display(),
                other
            ),
        };
        Ok(cfg)
    }

    pub fn sweep_options(&self) -> SweepOptions {
        let mut options = SweepOptions::default();
        if let Some(t) = self.tolerance {
            options.tolerance_pu = t;
        }
        if let Some(m) = self.max_iterations {
            options.max_iterations = m;
        }
        if let Some(rule) = self.loaded_term_rule {
            options.loaded_term_rule = rule;
        }
        options
    }

    pub fn reduction_params(&self) -> ReductionParams {
        let mut params = self.reduction.unwrap_or_default();
        if let Some(rule) = self.loaded_term_rule {
            params.loaded_term_rule = rule;
        }
        params
    }

    pub fn simulation_params(&self) -> SimulationParams {
        self.simulation.clone().unwrap_or_default()
    }
}
