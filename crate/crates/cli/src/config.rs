//! Run configuration: a TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use cme_core::dgp::{CustomParams, DgpSpec};
use cme_core::{ColumnRoles, EstimationRequest, MissingPolicy, Result};
use serde::{Deserialize, Serialize};

use crate::cli_error;

/// Every setting of a run. Keys mirror the command-line flags (with `_`
/// for `-`); a resolved copy is written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Subcommand that produced this config (informational).
    pub command: Option<String>,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub outcome: String,
    pub treatment: String,
    pub moderator: String,
    pub covariates: Vec<String>,
    pub missing: MissingPolicy,
    pub dgp: String,
    pub dgp_params: CustomParams,
    /// Sample size for `simulate` and `benchmark`.
    pub n: usize,
    pub replications: usize,
    /// Worker threads; 0 defers to `CME_THREADS`, then to the number of
    /// cores.
    pub threads: usize,
    pub log_level: String,
    #[serde(flatten)]
    pub request: EstimationRequest,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            input: None,
            output: PathBuf::from("cme-output"),
            outcome: "Y".into(),
            treatment: "D".into(),
            moderator: "X".into(),
            covariates: Vec::new(),
            missing: MissingPolicy::Reject,
            dgp: "key_a1".into(),
            dgp_params: CustomParams::default(),
            n: 5000,
            replications: 200,
            threads: 0,
            log_level: "warn".into(),
            request: EstimationRequest::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cli_error(format!("config file: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cli_error(format!("cannot serialize config: {e}")))
    }

    pub fn roles(&self) -> ColumnRoles {
        ColumnRoles::new(&self.outcome, &self.treatment, &self.moderator).with_covariates(&self.covariates)
    }

    pub fn dgp_spec(&self) -> Result<DgpSpec> {
        match self.dgp.parse::<DgpSpec>()? {
            DgpSpec::Custom(_) => {
                self.dgp_params.validate()?;
                Ok(DgpSpec::Custom(self.dgp_params))
            }
            spec => Ok(spec),
        }
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| cli_error("an input dataset is required (--input)"))
    }
}
