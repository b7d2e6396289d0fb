//! Aggregated evaluation results, serializable as JSON or as a flat CSV
//! with one metric per row.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// One named scalar result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub name: String,
    pub value: f64,
}

/// Everything an evaluation run produced, tagged with the configuration
/// hash and seed that generated it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub seed: u64,
    pub metrics: Vec<MetricEntry>,
}

impl EvalReport {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            config_hash: config_hash.into(),
            seed,
            metrics: Vec::new(),
        }
    }

    /// Appends a metric, rejecting duplicate names and non-finite values.
    pub fn push(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(CoreError::InvalidInput {
                context: "report",
                msg: format!("metric {name} has non-finite value {value}"),
            });
        }
        if self.metrics.iter().any(|m| m.name == name) {
            return Err(CoreError::InvalidInput {
                context: "report",
                msg: format!("duplicate metric name {name}"),
            });
        }
        self.metrics.push(MetricEntry { name, value });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| CoreError::InvalidInput {
            context: "report",
            msg: format!("json encoding failed: {e}"),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::InvalidInput {
            context: "report",
            msg: format!("json decoding failed: {e}"),
        })
    }

    /// One metric per row: `name,value,config_hash,seed`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,value,config_hash,seed\n");
        for m in &self.metrics {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.name, m.value, self.config_hash, self.seed
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EvalReport {
        let mut r = EvalReport::new("abc123", 7);
        r.push("psnr", 24.5).unwrap();
        r.push("ssim", 0.91).unwrap();
        r.push("dci_disentanglement", 62.0).unwrap();
        r
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let r = sample();
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn csv_has_one_row_per_metric_with_hash_and_seed() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines[0], "name,value,config_hash,seed");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "psnr,24.5,abc123,7");
        assert!(lines.iter().skip(1).all(|l| l.ends_with(",abc123,7")));
    }

    #[test]
    fn duplicate_and_non_finite_metrics_are_rejected() {
        let mut r = sample();
        assert!(r.push("psnr", 1.0).is_err());
        assert!(r.push("bad", f64::NAN).is_err());
        assert!(r.push("worse", f64::INFINITY).is_err());
        assert_eq!(r.metrics.len(), 3);
    }

    #[test]
    fn lookup_by_name() {
        let r = sample();
        assert_eq!(r.get("ssim"), Some(0.91));
        assert_eq!(r.get("missing"), None);
    }
}
