//! JSON run reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodConfig;
use crate::model::QPolicy;
use crate::sampler::{ChainConfig, ProposalSpec, ACCEPTANCE_BAND};
use crate::spaces::{SideRun, Source};

/// Diagnostics of one sampled side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideReport {
    pub source: Source,
    pub chains: ChainConfig,
    pub acceptance_rates: Vec<f64>,
    pub pooled_acceptance: f64,
    /// Chains whose acceptance rate lies outside the recommended band.
    pub chains_outside_band: Vec<usize>,
    pub mean_projection_distance: f64,
    pub start_separation_warning: bool,
}

impl From<&SideRun> for SideReport {
    fn from(side: &SideRun) -> Self {
        SideReport {
            source: side.source,
            chains: side.chains.clone(),
            acceptance_rates: side.result.acceptance_rate.clone(),
            pooled_acceptance: side.result.pooled_acceptance(),
            chains_outside_band: side.result.chains_outside_band(ACCEPTANCE_BAND),
            mean_projection_distance: side.result.mean_projection_distance,
            start_separation_warning: side.result.start_separation_warning,
        }
    }
}

/// Everything needed to reproduce and judge a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub arguments: Vec<String>,
    pub likelihood: Option<LikelihoodConfig>,
    pub chains: Option<ChainConfig>,
    pub proposal: Option<ProposalSpec>,
    pub q_policy: Option<QPolicy>,
    pub seeds: BTreeMap<String, u64>,
    /// Generator and pipeline settings not covered above.
    pub settings: BTreeMap<String, serde_json::Value>,
    pub sides: Vec<SideReport>,
    pub epsilon_estimate: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// Only filled on request; a timed report is not reproducible byte for byte.
    pub wall_clock_seconds: Option<f64>,
}

impl RunReport {
    pub fn new(command: impl Into<String>, arguments: Vec<String>) -> Self {
        RunReport {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            arguments,
            ..RunReport::default()
        }
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.settings.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn save_report(path: impl AsRef<Path>, report: &RunReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
