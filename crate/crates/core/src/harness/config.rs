use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;

use crate::adversary::{CorruptedSet, ScenarioPair};
use crate::cost::{affine_coefficients, CoefficientMatrix, Cost, CostJson};
use crate::error::{Error, Result};
use crate::graph::{Topology, TopologyJson};
use crate::optimizer::DgdConfig;

/// Which coefficients Phase I masks before optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masking {
    /// Only the affine coefficient.
    #[default]
    Affine,
    /// Every polynomial degree `1..=d`, each with independent noise.
    AllDegrees,
}

fn default_trials() -> usize {
    100_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    topology: TopologyJson,
    costs: Vec<CostJson>,
    sigma: f64,
    #[serde(default)]
    corrupted: Vec<usize>,
    #[serde(default)]
    scenario_b: Option<Vec<Vec<f64>>>,
    dgd: DgdConfig,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    max_corrupted: Option<usize>,
    #[serde(default)]
    privacy_degree: Option<usize>,
    #[serde(default)]
    masking: Masking,
    #[serde(default)]
    histogram_bins: Option<usize>,
    #[serde(default)]
    out: Option<PathBuf>,
}

/// A validated experiment. Agent ids are 0-based here and 1-based in the
/// JSON document.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology: Topology,
    pub costs: Vec<Cost>,
    pub sigma: f64,
    pub corrupted: CorruptedSet,
    /// Second scenario's coefficients, one vector per agent.
    pub scenario_b: Option<CoefficientMatrix>,
    pub dgd: DgdConfig,
    pub trials: usize,
    pub seed: Option<u64>,
    /// Largest coalition size for the worst-case table.
    pub max_corrupted: usize,
    /// Audit the degree-`ell` polynomial coefficients instead of the affine
    /// ones.
    pub privacy_degree: Option<usize>,
    pub masking: Masking,
    pub histogram_bins: Option<usize>,
    pub out: Option<PathBuf>,
}

/// A semantic problem with one top-level field.
struct Issue {
    field: &'static str,
    msg: String,
}

fn bad(field: &'static str, msg: impl Into<String>) -> Issue {
    Issue { field, msg: msg.into() }
}

/// Line and column of the first occurrence of `"field":` in `text`.
fn locate(text: &str, field: &str) -> Option<(usize, usize)> {
    let key = format!("\"{field}\"");
    let at = text.match_indices(&key).map(|(i, _)| i).find(|&i| text[i + key.len()..].trim_start().starts_with(':'))?;
    let before = &text[..at];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(at, |nl| at - nl - 1) + 1;
    Some((line, column))
}

fn parse(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    ExperimentConfig::try_from(raw).map_err(|issue| {
        Error::Config(match locate(text, issue.field) {
            Some((line, column)) => format!("{} at line {line} column {column}", issue.msg),
            None => format!("{} (field `{}` absent, default used)", issue.msg, issue.field),
        })
    })
}

fn config_message(e: Error) -> String {
    match e {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl TryFrom<RawConfig> for ExperimentConfig {
    type Error = Issue;

    fn try_from(raw: RawConfig) -> std::result::Result<Self, Issue> {
        let topology = Topology::try_from(raw.topology).map_err(|e| bad("topology", config_message(e)))?;
        let n = topology.n();
        if !topology.is_connected() {
            return Err(bad("topology", "topology is disconnected"));
        }
        if !(raw.sigma > 0.0 && raw.sigma.is_finite()) {
            return Err(bad("sigma", format!("sigma must be positive, got {}", raw.sigma)));
        }
        if raw.trials == 0 {
            return Err(bad("trials", "trials must be at least 1"));
        }
        if raw.costs.len() != n {
            return Err(bad("costs", format!("{} costs for {n} agents", raw.costs.len())));
        }
        let costs = raw
            .costs
            .into_iter()
            .enumerate()
            .map(|(i, c)| Cost::try_from(c).map_err(|e| bad("costs", format!("cost of agent {}: {}", i + 1, config_message(e)))))
            .collect::<std::result::Result<Vec<_>, Issue>>()?;
        let m = costs[0].dim();
        if let Some(i) = costs.iter().position(|c| c.dim() != m) {
            return Err(bad("costs", format!("cost of agent {} has dimension {}, expected {m}", i + 1, costs[i].dim())));
        }
        if raw.dgd.feasible.dim() != m {
            return Err(bad("dgd", format!("dgd box has dimension {}, costs have {m}", raw.dgd.feasible.dim())));
        }
        raw.dgd.validate().map_err(|e| bad("dgd", format!("dgd: {e}")))?;
        for &id in &raw.corrupted {
            if id == 0 || id > n {
                return Err(bad("corrupted", format!("corrupted agent {id} outside 1..={n}")));
            }
        }
        let corrupted =
            CorruptedSet::new(n, raw.corrupted.iter().map(|id| id - 1)).map_err(|e| bad("corrupted", config_message(e)))?;

        let polynomial_max_degree = |field: &'static str| -> std::result::Result<usize, Issue> {
            costs
                .iter()
                .map(|c| c.as_polynomial().map(|p| p.degree()))
                .collect::<Option<Vec<_>>>()
                .and_then(|d| d.into_iter().max())
                .ok_or_else(|| bad(field, "polynomial coefficients need univariate costs"))
        };
        if let Some(ell) = raw.privacy_degree {
            let d = polynomial_max_degree("privacy_degree")?;
            if ell == 0 || ell > d {
                return Err(bad("privacy_degree", format!("privacy_degree {ell} outside 1..={d}")));
            }
        }
        if raw.masking == Masking::AllDegrees {
            polynomial_max_degree("masking")?;
        }
        let audited_dim = if raw.privacy_degree.is_some() { 1 } else { m };
        let scenario_b = match raw.scenario_b {
            None => None,
            Some(rows) => {
                if rows.len() != n {
                    return Err(bad("scenario_b", format!("scenario_b has {} entries for {n} agents", rows.len())));
                }
                if let Some(i) = rows.iter().position(|r| r.len() != audited_dim) {
                    return Err(bad("scenario_b", format!(
                        "scenario_b entry for agent {} has length {}, expected {audited_dim}",
                        i + 1,
                        rows[i].len()
                    )));
                }
                let columns: Vec<_> = rows.into_iter().map(DVector::from_vec).collect();
                Some(CoefficientMatrix::from_columns(&columns).map_err(|e| bad("scenario_b", e.to_string()))?)
            }
        };
        if raw.histogram_bins == Some(0) {
            return Err(bad("histogram_bins", "histogram_bins must be positive"));
        }
        let max_corrupted = raw.max_corrupted.unwrap_or(corrupted.corrupted().len().max(1));
        Ok(Self {
            topology,
            costs,
            sigma: raw.sigma,
            corrupted,
            scenario_b,
            dgd: raw.dgd,
            trials: raw.trials,
            seed: raw.seed,
            max_corrupted,
            privacy_degree: raw.privacy_degree,
            masking: raw.masking,
            histogram_bins: raw.histogram_bins,
            out: raw.out,
        })
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        parse(text)
    }

    /// Reads and validates a config file. Messages carry the line and column
    /// of the offending value.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| cfg(format!("{}: not UTF-8: {e}", path.display())))?;
        let config = parse(text).map_err(|e| Error::Config(format!("{}: {}", path.display(), config_message(e))))?;
        Ok((config, bytes))
    }

    /// Coefficients of the first scenario: the costs' affine coefficients, or
    /// their degree-`ell` coefficients when a privacy degree is set.
    pub fn scenario_a(&self) -> Result<CoefficientMatrix> {
        match self.privacy_degree {
            None => affine_coefficients(&self.costs),
            Some(ell) => {
                let coeffs: Vec<f64> =
                    self.costs.iter().map(|c| c.as_polynomial().map_or(0.0, |p| p.coeff(ell))).collect();
                Ok(CoefficientMatrix::from_scalars(&coeffs))
            }
        }
    }

    pub fn scenario(&self) -> Result<ScenarioPair> {
        let b = self.scenario_b.clone().ok_or_else(|| cfg("privacy audit needs scenario_b"))?;
        Ok(ScenarioPair { a: self.scenario_a()?, b, c: self.corrupted.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const GOLDEN: &str = r#"{
  "topology": {"n": 3, "edges": [[1, 2], [1, 3], [2, 3]]},
  "costs": [
    {"kind": "quadratic", "Q": [[2]], "alpha": [1]},
    {"kind": "quadratic", "Q": [[2]], "alpha": [2]},
    {"kind": "quadratic", "Q": [[2]], "alpha": [3]}
  ],
  "sigma": 1.0,
  "corrupted": [3],
  "scenario_b": [[2], [1], [3]],
  "dgd": {"box": {"lo": [-100], "hi": [100]}},
  "seed": 7
}"#;

    #[test]
    fn golden_config_loads() {
        let c = ExperimentConfig::from_json(GOLDEN).unwrap();
        assert_eq!(c.topology, Topology::complete(3));
        assert_eq!(c.corrupted.corrupted(), &[2]);
        assert_eq!(c.trials, 100_000);
        assert_eq!(c.max_corrupted, 1);
        let s = c.scenario().unwrap();
        assert_eq!(s.a, CoefficientMatrix::from_scalars(&[1.0, 2.0, 3.0]));
        assert_eq!(s.distance_squared(), 2.0);
    }

    fn with(field: &str, value: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
        v[field] = serde_json::from_str(value).unwrap();
        serde_json::to_string_pretty(&v).unwrap()
    }

    #[test]
    fn invalid_configs_name_the_problem_and_position() {
        let cases = [
            ("sigma", "0", "sigma must be positive"),
            ("corrupted", "[4]", "corrupted agent 4 outside 1..=3"),
            ("corrupted", "[1, 2, 3]", "at least one agent must be honest"),
            ("scenario_b", "[[1], [2]]", "scenario_b has 2 entries"),
            ("trials", "0", "trials must be at least 1"),
            ("topology", r#"{"n": 3, "edges": [[1, 2]]}"#, "topology is disconnected"),
            ("privacy_degree", "3", "privacy_degree 3 outside 1..=2"),
        ];
        for (field, value, expected) in cases {
            let err = ExperimentConfig::from_json(&with(field, value)).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains(expected), "{msg}");
            assert!(msg.contains("line"), "{msg}");
            assert_eq!(err.exit_code(), 2);
        }
        let err = ExperimentConfig::from_json("{\n  \"sigma\": \"x\"\n}").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(ExperimentConfig::from_json(&with("unknown", "1")).is_err());
    }

    #[test]
    fn degree_scenario_uses_polynomial_coefficients() {
        let mut v: serde_json::Value = serde_json::from_str(GOLDEN).unwrap();
        v["costs"] = serde_json::from_str(
            r#"[{"kind": "polynomial", "coeffs": [0, 1, 2, 0.1]},
                {"kind": "polynomial", "coeffs": [0, 1, 3, 0.1]},
                {"kind": "polynomial", "coeffs": [0, 1, 4, 0.1]}]"#,
        )
        .unwrap();
        v["privacy_degree"] = 2.into();
        v["scenario_b"] = serde_json::from_str("[[3], [2], [4]]").unwrap();
        let c = ExperimentConfig::from_json(&v.to_string()).unwrap();
        assert_eq!(c.scenario_a().unwrap(), CoefficientMatrix::from_scalars(&[2.0, 3.0, 4.0]));
    }
}
