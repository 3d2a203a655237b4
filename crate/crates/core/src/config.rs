//! TOML run configuration.
//!
//! ```toml
//! methods = ["gme-gnn", "gnn-only", "mundlak"]
//!
//! [scenario]
//! heterogeneity = "low"
//! dependence = "weak"
//! groups = 20
//! ng_min = 100
//! ng_max = 200
//! replications = 50
//! base_seed = 7
//!
//! [gnn]
//! hidden = 16
//! lr = 0.005
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;

use crate::drestimator::{EstimatorConfig, TrainingScope};
use crate::error::{Error, Result};
use crate::gnn::GcnConfig;
use crate::simlab::{Dependence, DgpParams, Heterogeneity, Method, Scenario, SimulationPlan};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GnnSection {
    pub hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub scope: Option<TrainingScope>,
    pub init_scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub eta: Option<f64>,
    pub normalize: Option<bool>,
    pub normalize_propensities: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub heterogeneity: Heterogeneity,
    pub dependence: Dependence,
    pub groups: usize,
    pub ng_min: usize,
    pub ng_max: usize,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub oracle_redraws: Option<usize>,
}

/// Overrides of the regime defaults for the data-generating process.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSection {
    pub alpha_sd: Option<f64>,
    pub mu_x_sd: Option<f64>,
    pub gamma: Option<[f64; 4]>,
    pub beta: Option<f64>,
    pub delta: Option<f64>,
    pub eps_sd: Option<f64>,
    pub tau_mean: Option<f64>,
    pub tau_sd: Option<f64>,
    pub ws_k: Option<usize>,
    pub ws_p: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub gnn: GnnSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub dgp: DgpSection,
}

fn default_methods() -> Vec<String> {
    vec!["gme-gnn".into(), "gnn-only".into(), "mundlak".into()]
}

/// Optional file for `estimate`: only the model blocks.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default)]
    pub gnn: GnnSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

impl GnnSection {
    pub fn apply(&self, base: &GcnConfig) -> GcnConfig {
        let mut c = base.clone();
        if let Some(v) = self.hidden {
            c.hidden_channels = v;
        }
        if let Some(v) = self.dropout {
            c.dropout_rate = v;
        }
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.init_scale {
            c.weight_init_scale = v;
        }
        c
    }
}

impl EstimatorSection {
    pub fn apply(&self, cfg: &mut EstimatorConfig) {
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.normalize {
            cfg.normalize = v;
        }
        if let Some(v) = self.normalize_propensities {
            cfg.normalize_propensities = v;
        }
    }
}

impl DgpSection {
    pub fn apply(&self, p: &mut DgpParams) {
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { p.$f = v; })*};
        }
        set!(alpha_sd, mu_x_sd, gamma, beta, delta, eps_sd, tau_mean, tau_sd, ws_k, ws_p);
    }
}

impl SimulateConfig {
    pub fn from_str(text: &str, origin: &str) -> Result<Self> {
        parse(text, origin)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_str(&read(path)?, &path.display().to_string())
    }

    pub fn plan(&self) -> Result<SimulationPlan> {
        let s = &self.scenario;
        let scenario = Scenario {
            heterogeneity: s.heterogeneity,
            dependence: s.dependence,
            groups: s.groups,
            ng_min: s.ng_min,
            ng_max: s.ng_max,
            replications: s.replications,
            base_seed: s.base_seed,
        };
        scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
        let mut params = DgpParams::for_scenario(&scenario);
        self.dgp.apply(&mut params);
        params.validate().map_err(|e| Error::Config(e.to_string()))?;

        let mut est = EstimatorConfig {
            gnn: self.gnn.apply(&GcnConfig::default()),
            ..EstimatorConfig::default()
        };
        if let Some(scope) = self.gnn.scope {
            est.scope = scope;
        }
        self.estimator.apply(&mut est);
        est.validate().map_err(|e| Error::Config(e.to_string()))?;

        let methods = self
            .methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<Vec<_>>>()?;
        if methods.is_empty() {
            return Err(Error::Config("methods list is empty".into()));
        }
        Ok(SimulationPlan {
            scenario,
            params,
            estimator: est,
            methods,
            oracle_redraws: s.oracle_redraws.unwrap_or(200),
        })
    }
}

impl EstimateConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse(&read(path)?, &path.display().to_string())
    }
}
