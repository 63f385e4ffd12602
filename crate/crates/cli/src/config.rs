use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spdz_gwas::dispense::BlindMode;
use spdz_gwas::fixpt::FixedPointParams;
use spdz_gwas::gwas::{AcceptRule, PipelineConfig};
use spdz_gwas::modmath::{gen_group, GroupParams, DEFAULT_GROUP_SEED};

use crate::CliError;

/// The run-config JSON. Every field is optional; flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Bit length of the group used for `λ`. 256 selects the shipped group.
    pub bits: u64,
    /// A group document written by `groupgen`; wins over `bits`.
    pub group_file: Option<PathBuf>,
    /// `{k, f, kappa, p}`.
    pub fixed_point: serde_json::Value,
    pub tau: f64,
    pub lambda_max: f64,
    pub accept_rule: AcceptRule,
    pub blind_mode: BlindMode,
    pub parties: u16,
    pub seed: u64,
    pub parallel_controls: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        RunConfig {
            bits: 256,
            group_file: None,
            fixed_point: p.fixed_point.to_json_value(),
            tau: p.tau,
            lambda_max: p.lambda_max,
            accept_rule: p.accept_rule,
            blind_mode: p.blind_mode,
            parties: p.parties,
            seed: p.seed,
            parallel_controls: p.parallel_controls,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn group(&self) -> Result<GroupParams, CliError> {
        if let Some(path) = &self.group_file {
            return GroupParams::load(path).map_err(|e| CliError::Usage(format!("group file {}: {e}", path.display())));
        }
        if self.bits == 256 {
            return Ok(GroupParams::default_256());
        }
        gen_group(self.bits, DEFAULT_GROUP_SEED).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn pipeline(&self, record_transcript: bool) -> Result<PipelineConfig, CliError> {
        let fixed_point = FixedPointParams::from_json_value(self.fixed_point.clone())
            .map_err(|e| CliError::Usage(format!("fixed_point: {e}")))?;
        let cfg = PipelineConfig {
            tau: self.tau,
            lambda_max: self.lambda_max,
            fixed_point,
            parties: self.parties,
            accept_rule: self.accept_rule,
            blind_mode: self.blind_mode,
            parallel_controls: self.parallel_controls,
            seed: self.seed,
            record_transcript,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.tau, 0.3);
        assert_eq!(c.lambda_max, 0.05);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"tau": 0.25}"#).unwrap();
        assert_eq!(partial.tau, 0.25);
        assert_eq!(partial.parties, 3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"tua": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let c = RunConfig {
            tau: -1.0,
            ..RunConfig::default()
        };
        assert!(matches!(c.pipeline(false), Err(CliError::Usage(_))));
        let c = RunConfig {
            fixed_point: serde_json::json!({"k": 32, "f": 16, "kappa": 40, "p": "97"}),
            ..RunConfig::default()
        };
        assert!(matches!(c.pipeline(false), Err(CliError::Usage(_))));
    }
}
