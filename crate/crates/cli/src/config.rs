use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use curvreg::cases::Scenario;
use curvreg::eval::EvalThresholds;
use curvreg::{DetectorConfig, OptimizerConfig, PolarConfig};

/// Single configuration schema for every subcommand. Missing fields take
/// their defaults; the effective config written next to the artifacts has
/// every field materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Case seed. Required whenever a phantom is drawn from a scenario.
    pub seed: Option<u64>,
    pub scenario: Scenario,
    /// Explicit case description (JSON) used instead of drawing one from
    /// the scenario.
    pub case_spec: Option<PathBuf>,
    pub out: PathBuf,
    /// Cases run concurrently by `sweep`.
    pub jobs: usize,
    pub polar: PolarConfig,
    pub detector: DetectorConfig,
    pub optimizer: OptimizerConfig,
    pub eval: EvalThresholds,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            scenario: Scenario::WarpRecovery,
            case_spec: None,
            out: PathBuf::from("run"),
            jobs: 1,
            polar: PolarConfig::default(),
            detector: DetectorConfig::default(),
            optimizer: OptimizerConfig::default(),
            eval: EvalThresholds::default(),
        }
    }
}

impl RunConfig {
    /// Every problem with the config, so they can be reported together
    /// before any stage runs.
    pub fn problems(&self, needs_case: bool) -> Vec<String> {
        let mut out = Vec::new();
        if self.jobs == 0 {
            out.push("jobs must be at least 1".to_string());
        }
        if let Err(e) = self.polar.validate() {
            out.push(format!("polar: {e}"));
        }
        if let Err(e) = self.detector.validate() {
            out.push(format!("detector: {e}"));
        }
        if let Err(e) = self.optimizer.validate() {
            out.push(format!("optimizer: {e}"));
        }
        let th = &self.eval;
        if th.distance_mm.is_nan()
            || th.distance_mm <= 0.0
            || !(0.0..=1.0).contains(&th.min_f1)
            || !(-1.0..=1.0).contains(&th.min_cosine)
        {
            out.push("eval: thresholds out of range".to_string());
        }
        match &self.case_spec {
            Some(p) if !p.is_file() => out.push(format!("case_spec: {} does not exist", p.display())),
            None if needs_case && self.seed.is_none() => {
                out.push("seed: required to draw a case from the scenario".to_string())
            }
            _ => {}
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_config_round_trips() {
        let cfg = RunConfig { seed: Some(7), jobs: 3, ..Default::default() };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        // Partial files fill in defaults.
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 7, "jobs": 3}"#).unwrap();
        assert_eq!(partial, cfg);
    }

    #[test]
    fn problems_are_collected_together() {
        let mut cfg = RunConfig { jobs: 0, case_spec: Some("/no/such/file.json".into()), ..Default::default() };
        cfg.optimizer.learning_rate = -1.0;
        let p = cfg.problems(true);
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(RunConfig::default().problems(true).iter().any(|m| m.starts_with("seed")));
        assert!(RunConfig::default().problems(false).is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 1}"#).is_err());
    }
}
