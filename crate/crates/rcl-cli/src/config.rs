//! Experiment configuration: a single JSON document whose fields mirror the
//! CLI flags; every field can be overridden by the matching flag.

use rcl_core::binarize::BinarizationMethod;
use rcl_core::datagen::{default_topology, ConflictModelSpec};
use rcl_core::eval::{default_top_k, tune_baselines, TunedBaselines};
use rcl_core::twotower::Hyperparams;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Either the built-in default model or an inline spec.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpecSource {
    Named(String),
    Inline(Box<ConflictModelSpec>),
}

impl Default for SpecSource {
    fn default() -> Self {
        SpecSource::Named("default".into())
    }
}

impl SpecSource {
    pub fn resolve(&self) -> Result<ConflictModelSpec, String> {
        match self {
            SpecSource::Named(name) if name == "default" => Ok(default_topology()),
            SpecSource::Named(other) => Err(format!(
                "unknown spec name {other:?}; expected \"default\" or an inline object"
            )),
            SpecSource::Inline(spec) => Ok((**spec).clone()),
        }
    }
}

/// Metric targets for the epochs-to-target summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Targets {
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
}

impl Default for Targets {
    fn default() -> Self {
        Self {
            f1: 1.0,
            accuracy: 0.8,
            auc: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub spec: SpecSource,
    pub hp: Hyperparams,
    /// Binarizer strings: `sparsemax`, `threshold:<t>`, `topk:<k>`,
    /// `quantile:<q>`, plus `threshold:tuned`, `quantile:tuned`, and
    /// `topk:auto` resolved against the model before the sweep.
    pub binarizers: Vec<String>,
    pub n_runs: u64,
    pub length: usize,
    pub output_dir: PathBuf,
    pub targets: Targets,
    /// Epoch budget of the held-out tuning run for `:tuned` baselines.
    pub tune_epochs: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            spec: SpecSource::default(),
            hp: Hyperparams::default(),
            binarizers: vec![
                "sparsemax".into(),
                "threshold:tuned".into(),
                "topk:auto".into(),
                "quantile:tuned".into(),
            ],
            n_runs: 20,
            length: 10_000,
            output_dir: PathBuf::from("out"),
            targets: Targets::default(),
            tune_epochs: 200,
        }
    }
}

impl ExperimentConfig {
    /// Resolves binarizer strings, fitting `:tuned` baselines on the
    /// held-out run (index `n_runs`, the first one the sweep never uses).
    pub fn resolve_binarizers(
        &self,
        spec: &ConflictModelSpec,
    ) -> Result<Vec<BinarizationMethod>, String> {
        let needs_tuning = self.binarizers.iter().any(|b| b.ends_with(":tuned"));
        let tuned: Option<TunedBaselines> = if needs_tuning {
            Some(
                tune_baselines(spec, &self.hp, self.length, self.tune_epochs, self.n_runs)
                    .map_err(|e| format!("baseline tuning failed: {e}"))?,
            )
        } else {
            None
        };
        let truth = spec.truth_learned();
        let mut out = Vec::with_capacity(self.binarizers.len());
        for b in &self.binarizers {
            let method = match b.as_str() {
                "threshold:tuned" => {
                    BinarizationMethod::StaticThreshold(tuned.expect("tuned above").threshold)
                }
                "quantile:tuned" => {
                    BinarizationMethod::Quantile(tuned.expect("tuned above").quantile)
                }
                "topk:auto" => BinarizationMethod::TopK(default_top_k(&truth)),
                other => other.parse().map_err(|e| format!("{e}"))?,
            };
            out.push(method);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips() {
        let cfg = ExperimentConfig::default();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n_runs, 20);
        assert_eq!(back.binarizers.len(), 4);
        assert!(matches!(back.spec, SpecSource::Named(ref n) if n == "default"));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"n_runs": 3}"#).unwrap();
        assert_eq!(cfg.n_runs, 3);
        assert_eq!(cfg.length, 10_000);
        assert_eq!(cfg.targets.accuracy, 0.8);
    }

    #[test]
    fn inline_spec_resolves() {
        let spec = default_topology();
        let json = format!(r#"{{"spec": {}}}"#, serde_json::to_string(&spec).unwrap());
        let cfg: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg.spec.resolve().unwrap(), spec);
    }

    #[test]
    fn unknown_spec_name_rejected() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"spec": "exotic"}"#).unwrap();
        assert!(cfg.spec.resolve().is_err());
    }
}
