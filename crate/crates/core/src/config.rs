//! TOML experiment configuration.
//!
//! ```toml
//! [scenario]
//! kind = "ieee14"          # toy-scalar | custom-network | ieee14
//!
//! [sim]
//! dt = 1e-3
//! horizon = 10.0
//! norm = "two"             # two | inf
//!
//! [filter]
//! mode = "dynamic"         # none | static | dynamic
//! epsilon = 0.1
//! estimator = { kind = "dirty", tau_d = 0.01 }
//!
//! [analysis]
//! enabled = true
//! seed = 7
//!
//! [sweep]
//! eps_min = 0.01
//! eps_max = 1.0
//! count = 12
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{AnalysisSettings, MIN_CONTRACTION_SAMPLES, MIN_LIPSCHITZ_PAIRS};
use crate::error::{Error, Result};
use crate::estimation::EstimatorKind;
use crate::grid::log_spaced;
use crate::model::Vector;
use crate::norms::Norm;
use crate::scenario::{Scenario, ScenarioConfig};
use crate::sim::SimConfig;

/// Deserializes any config fragment from TOML.
pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub norm: Norm,
    /// Overrides the scenario's initial state.
    pub x0: Option<Vec<f64>>,
    pub z0: Option<Vec<f64>>,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 10.0,
            norm: Norm::Two,
            x0: None,
            z0: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    None,
    Static,
    #[default]
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub mode: FilterMode,
    pub epsilon: f64,
    pub estimator: EstimatorKind,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            mode: FilterMode::Dynamic,
            epsilon: 0.1,
            estimator: EstimatorKind::Exact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub enabled: bool,
    pub norms: Vec<Norm>,
    pub samples: usize,
    pub pairs: usize,
    pub seed: Option<u64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            enabled: false,
            norms: vec![Norm::Two],
            samples: 1_000,
            pairs: MIN_LIPSCHITZ_PAIRS,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub eps_min: f64,
    pub eps_max: f64,
    pub count: usize,
    /// Violation window written to the heatmap; defaults to the whole run.
    #[serde(default)]
    pub window: Option<[f64; 2]>,
}

impl SweepSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        log_spaced(self.eps_min, self.eps_max, self.count)
            .map_err(|e| Error::Config(format!("sweep: {e}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub output: OutputSection,
}

const PRESETS: &[(&str, &str)] = &[
    ("ieee14", include_str!("../presets/ieee14.toml")),
    (
        "ieee14-nominal",
        include_str!("../presets/ieee14-nominal.toml"),
    ),
    (
        "ieee14-static",
        include_str!("../presets/ieee14-static.toml"),
    ),
    ("toy-scalar", include_str!("../presets/toy-scalar.toml")),
];

/// Names of the shipped presets.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| *src)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown preset `{name}`; available: {}",
                preset_names().join(", ")
            ))
        })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml_str(preset_source(name)?)
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<()> {
        let sim = &self.sim;
        if !(sim.dt > 0.0 && sim.dt.is_finite())
            || !(sim.horizon >= sim.dt && sim.horizon.is_finite())
        {
            return Err(Error::Config(format!(
                "sim: need 0 < dt <= horizon, got dt = {}, horizon = {}",
                sim.dt, sim.horizon
            )));
        }
        if !(self.filter.epsilon > 0.0 && self.filter.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "filter: epsilon must be positive, got {}",
                self.filter.epsilon
            )));
        }
        self.filter
            .estimator
            .validate()
            .map_err(|e| Error::Config(format!("filter.estimator: {e}")))?;
        let a = &self.analysis;
        if a.enabled {
            if a.seed.is_none() {
                return Err(Error::Config(
                    "analysis: `seed` is required when analysis is enabled".into(),
                ));
            }
            if a.norms.is_empty() {
                return Err(Error::Config("analysis: `norms` must not be empty".into()));
            }
            if a.samples < MIN_CONTRACTION_SAMPLES {
                return Err(Error::Config(format!(
                    "analysis: samples must be at least {MIN_CONTRACTION_SAMPLES}"
                )));
            }
            if a.pairs < MIN_LIPSCHITZ_PAIRS {
                return Err(Error::Config(format!(
                    "analysis: pairs must be at least {MIN_LIPSCHITZ_PAIRS}"
                )));
            }
        }
        if let Some(sweep) = &self.sweep {
            sweep.grid()?;
            if let Some([from, to]) = sweep.window {
                if !(from <= to) {
                    return Err(Error::Config(
                        "sweep.window must be [from, to] with from <= to".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Builds the scenario and checks the configured initial states against it.
    pub fn build_scenario(&self) -> Result<Scenario> {
        let sc = self.scenario.build().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("scenario: {msg}")),
            other => Error::Config(format!("scenario: {other}")),
        })?;
        if let Some(x0) = &self.sim.x0 {
            if x0.len() != sc.model.state_dim() {
                return Err(Error::Config(format!(
                    "sim.x0 needs {} entries, got {}",
                    sc.model.state_dim(),
                    x0.len()
                )));
            }
        }
        if let Some(z0) = &self.sim.z0 {
            if z0.len() != sc.model.input_dim() {
                return Err(Error::Config(format!(
                    "sim.z0 needs {} entries, got {}",
                    sc.model.input_dim(),
                    z0.len()
                )));
            }
        }
        Ok(sc)
    }

    pub fn sim_config(&self, scenario: &Scenario, norm: Norm) -> SimConfig {
        let x0 = self
            .sim
            .x0
            .as_ref()
            .map_or_else(|| scenario.x0.clone(), |v| Vector::from_vec(v.clone()));
        let mut cfg = SimConfig::new(x0, self.sim.dt, self.sim.horizon)
            .with_epsilon(self.filter.epsilon)
            .with_estimator(self.filter.estimator.clone())
            .with_norm(norm);
        cfg.z0 = self.sim.z0.as_ref().map(|v| Vector::from_vec(v.clone()));
        cfg
    }

    pub fn analysis_settings(&self) -> Result<AnalysisSettings> {
        let seed = self
            .analysis
            .seed
            .ok_or_else(|| Error::Config("analysis: `seed` is required".into()))?;
        let mut s = AnalysisSettings::new(seed);
        s.samples = self.analysis.samples;
        s.pairs = self.analysis.pairs;
        Ok(s)
    }

    /// Canonical JSON form; hashed into the run manifest.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            cfg.build_scenario().unwrap();
        }
    }

    #[test]
    fn ieee14_preset_carries_protocol_values() {
        let cfg = ExperimentConfig::preset("ieee14").unwrap();
        assert_eq!(cfg.sim.dt, 1e-3);
        assert_eq!(cfg.sim.horizon, 10.0);
        assert_eq!(cfg.filter.estimator, EstimatorKind::Dirty { tau_d: 0.01 });
        let sweep = cfg.sweep.as_ref().unwrap();
        assert_eq!((sweep.eps_min, sweep.eps_max, sweep.count), (0.01, 1.0, 12));
        let sc = cfg.build_scenario().unwrap();
        let grid = sc.grid.unwrap();
        assert_eq!(grid.cbf_gain, 10.0);
        assert_eq!(grid.nadir_hz, 59.5);
        assert_eq!(grid.load_step.magnitude_pu, 3.0);
        assert_eq!(grid.load_step.bus, 1);
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let err = ExperimentConfig::from_toml_str(
            "[scenario]\nkind = \"toy-scalar\"\n[sim]\ndtt = 0.1\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dtt"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn seed_required_for_analysis() {
        let cfg = ExperimentConfig::from_toml_str(
            "[scenario]\nkind = \"toy-scalar\"\n[analysis]\nenabled = true\n",
        )
        .unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml_str(
            "[scenario]\nkind = \"toy-scalar\"\n[analysis]\nenabled = true\nseed = 3\n",
        )
        .unwrap();
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_rejected() {
        for text in [
            "[scenario]\nkind = \"toy-scalar\"\n[sim]\ndt = -1.0\n",
            "[scenario]\nkind = \"toy-scalar\"\n[filter]\nepsilon = 0.0\n",
            "[scenario]\nkind = \"toy-scalar\"\n[filter]\nestimator = { kind = \"dirty\", tau_d = 0.0 }\n",
            "[scenario]\nkind = \"toy-scalar\"\n[sweep]\neps_min = 1.0\neps_max = 0.1\ncount = 3\n",
        ] {
            let cfg = ExperimentConfig::from_toml_str(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        let cfg = ExperimentConfig::from_toml_str(
            "[scenario]\nkind = \"toy-scalar\"\n[sim]\nx0 = [1.0, 2.0]\n",
        )
        .unwrap();
        assert!(cfg.build_scenario().is_err());
    }

    #[test]
    fn unknown_preset() {
        assert!(ExperimentConfig::preset("nope").is_err());
    }
}
