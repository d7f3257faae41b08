//! Experiment configuration files: versioned, human-editable TOML with
//! fail-closed parsing (unknown fields are rejected).

use pipespec::metrics::SweepAxis;
use pipespec::types::{
    Mode, PipelineConfig, StageSpec, TokenId, DEFAULT_MAX_TOKENS, DEFAULT_VOCAB_SIZE,
};
use serde::Deserialize;

/// Schema version this binary reads.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Which execution modes a run covers. `all` runs the autoregressive
/// baseline plus both speculative modes under one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Autoregressive,
    SpeculativeSync,
    PipespecAsync,
    All,
}

impl RunMode {
    pub fn modes(self) -> Vec<Mode> {
        match self {
            RunMode::Autoregressive => vec![Mode::Autoregressive],
            RunMode::SpeculativeSync => vec![Mode::SpeculativeSync],
            RunMode::PipespecAsync => vec![Mode::PipespecAsync],
            RunMode::All => vec![
                Mode::Autoregressive,
                Mode::SpeculativeSync,
                Mode::PipespecAsync,
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub latency_per_token: f64,
    #[serde(default)]
    pub acceptance_rate: f64,
    #[serde(default)]
    pub window: Option<u32>,
    #[serde(default)]
    pub lookahead: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub path: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub weights: Vec<f64>,
}

/// The on-disk experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root of all randomness; runs have no other entropy source.
    pub seed: u64,
    pub mode: RunMode,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: u32,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub end_token: Option<u32>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub trace: Option<TraceConfig>,
    #[serde(default)]
    pub energy: Option<EnergyConfig>,
}

fn default_vocab_size() -> u32 {
    DEFAULT_VOCAB_SIZE
}

fn default_max_tokens() -> usize {
    DEFAULT_MAX_TOKENS
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig, String> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "config schema_version {} is not supported (this binary supports {})",
                cfg.schema_version, CONFIG_SCHEMA_VERSION
            ));
        }
        Ok(cfg)
    }

    /// Lower to an engine config in one concrete mode, applying an optional
    /// seed override.
    pub fn pipeline(
        &self,
        mode: Mode,
        seed_override: Option<u64>,
    ) -> Result<PipelineConfig, String> {
        let stages = self
            .stages
            .iter()
            .map(|s| StageSpec {
                latency_per_token: s.latency_per_token,
                acceptance_rate: s.acceptance_rate,
                window: s.window,
                lookahead: s.lookahead,
            })
            .collect();
        let cfg = PipelineConfig {
            stages,
            vocab_size: self.vocab_size,
            max_tokens: self.max_tokens,
            seed: seed_override.unwrap_or(self.seed),
            mode,
            end_token: self.end_token.map(TokenId),
        };
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn sweep_axis(&self) -> Result<Option<SweepAxis>, String> {
        match &self.sweep {
            None => Ok(None),
            Some(s) => s
                .axis
                .parse()
                .map(Some)
                .map_err(|e: pipespec::types::ConfigError| e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
schema_version = 1
seed = 42
mode = "all"
max_tokens = 256

[[stages]]
latency_per_token = 1.0

[[stages]]
latency_per_token = 10.0
acceptance_rate = 0.8
window = 8
lookahead = 8
"#;

    #[test]
    fn parses_a_valid_config() {
        let cfg = ExperimentConfig::parse(GOOD).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.mode, RunMode::All);
        assert_eq!(cfg.stages.len(), 2);
        let pipeline = cfg.pipeline(Mode::PipespecAsync, None).unwrap();
        assert_eq!(pipeline.max_tokens, 256);
        assert_eq!(pipeline.vocab_size, DEFAULT_VOCAB_SIZE);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = GOOD.replace("max_tokens = 256", "max_tokens = 256\nunknown_knob = 3");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(
            err.contains("unknown_knob") || err.contains("unknown field"),
            "{err}"
        );
    }

    #[test]
    fn unknown_stage_fields_are_rejected() {
        let bad = GOOD.replace("lookahead = 8", "lookahead = 8\ntemperature = 0.7");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn schema_version_is_enforced() {
        let bad = GOOD.replace("schema_version = 1", "schema_version = 2");
        let err = ExperimentConfig::parse(&bad).unwrap_err();
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let bad = GOOD.replace("seed = 42\n", "");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn seed_override_applies() {
        let cfg = ExperimentConfig::parse(GOOD).unwrap();
        let pipeline = cfg.pipeline(Mode::Autoregressive, Some(7)).unwrap();
        assert_eq!(pipeline.seed, 7);
    }

    #[test]
    fn invalid_stage_values_fail_validation() {
        let bad = GOOD.replace("acceptance_rate = 0.8", "acceptance_rate = 1.5");
        let cfg = ExperimentConfig::parse(&bad).unwrap();
        let err = cfg.pipeline(Mode::PipespecAsync, None).unwrap_err();
        assert!(err.contains("[0, 1]"), "{err}");
    }
}
