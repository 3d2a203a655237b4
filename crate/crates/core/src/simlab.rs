//! Simulation laboratory: the 2x2 heterogeneity × dependence designs,
//! oracle ground truth, replication campaigns and error metrics.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{GroupData, GroupedPopulation};
use crate::baselines::{gnn_only_estimate, mundlak_ols};
use crate::drestimator::{assign_exposures, estimate_with_nuisances, gme_gnn_estimate, EstimatorConfig, NuisanceEstimates};
use crate::error::{Error, Result};
use crate::exposure::ExposureMapping;
use crate::gnn::sigmoid;
use crate::netgraph::{ws_generate, Graph};
use crate::seed::{rng_from, SeedKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heterogeneity {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependence {
    Weak,
    Strong,
}

impl FromStr for Heterogeneity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Heterogeneity::Low),
            "high" => Ok(Heterogeneity::High),
            _ => Err(Error::Config(format!("heterogeneity must be low or high, got {s:?}"))),
        }
    }
}

impl FromStr for Dependence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Dependence::Weak),
            "strong" => Ok(Dependence::Strong),
            _ => Err(Error::Config(format!("dependence must be weak or strong, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub heterogeneity: Heterogeneity,
    pub dependence: Dependence,
    /// Number of groups `M`.
    pub groups: usize,
    pub ng_min: usize,
    pub ng_max: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl Scenario {
    /// Desk-scale design: 20 groups of 100–200 units, 50 replications.
    pub fn desk(heterogeneity: Heterogeneity, dependence: Dependence, base_seed: u64) -> Self {
        Scenario {
            heterogeneity,
            dependence,
            groups: 20,
            ng_min: 100,
            ng_max: 200,
            replications: 50,
            base_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups < 1 || self.replications < 1 {
            return Err(Error::Parameter("need at least one group and one replication".into()));
        }
        if self.ng_min < 2 || self.ng_min > self.ng_max {
            return Err(Error::Parameter(format!(
                "group size range [{}, {}] invalid",
                self.ng_min, self.ng_max
            )));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        let h = match self.heterogeneity {
            Heterogeneity::Low => "low",
            Heterogeneity::High => "high",
        };
        let d = match self.dependence {
            Dependence::Weak => "weak",
            Dependence::Strong => "strong",
        };
        format!("{h}-{d}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub alpha_sd: f64,
    pub mu_x_sd: f64,
    /// `(γ1, γ2, γ3, γ4)` on own X, neighbor-mean X, degree, group mean of X.
    pub gamma: [f64; 4],
    pub beta: f64,
    pub delta: f64,
    pub eps_sd: f64,
    pub tau_mean: f64,
    pub tau_sd: f64,
    pub ws_k: usize,
    pub ws_p: f64,
}

impl DgpParams {
    pub fn for_scenario(s: &Scenario) -> Self {
        let (alpha_sd, mu_x_sd, tau_sd) = match s.heterogeneity {
            Heterogeneity::Low => (1.5, 1.0, 0.0),
            Heterogeneity::High => (3.0, 2.0, 0.15),
        };
        let (gamma, delta, ws_k, ws_p) = match s.dependence {
            Dependence::Weak => ([0.5, 0.5, 0.2, 0.5], 0.8, 4, 0.1),
            Dependence::Strong => ([1.5, 1.5, 0.8, 1.5], 3.0, 8, 0.5),
        };
        DgpParams {
            alpha_sd,
            mu_x_sd,
            gamma,
            beta: 1.5,
            delta,
            eps_sd: 0.5,
            tau_mean: 0.5,
            tau_sd,
            ws_k,
            ws_p,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sds = [self.alpha_sd, self.mu_x_sd, self.eps_sd, self.tau_sd];
        if sds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("standard deviations must be finite and >= 0".into()));
        }
        if !(self.delta.is_finite() && self.beta.is_finite() && self.tau_mean.is_finite()) {
            return Err(Error::Parameter("delta, beta and tau_mean must be finite".into()));
        }
        if self.gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::Parameter("gamma must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.ws_p) {
            return Err(Error::Parameter(format!("ws_p {} outside [0, 1]", self.ws_p)));
        }
        Ok(())
    }
}

/// Everything the data-generating process drew for one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationTruth {
    pub params: DgpParams,
    pub gamma0: f64,
    pub alpha: Vec<f64>,
    pub mu_x: Vec<f64>,
    pub tau_g: Vec<f64>,
    /// `sum_j A_ij W_j / deg_i`, 0 for isolated units.
    pub frac: Vec<Vec<f64>>,
    /// `P(W_i = 1)` under the calibrated assignment model.
    pub p_w: Vec<Vec<f64>>,
}

/// γ0 such that the mean of `sigmoid(γ0 + l_i)` is 0.5, by bisection.
pub fn calibrate_gamma0(linear: &[f64]) -> Result<f64> {
    if linear.is_empty() {
        return Err(Error::Calibration("no units".into()));
    }
    let mean_p = |g0: f64| linear.iter().map(|l| sigmoid(g0 + l)).sum::<f64>() / linear.len() as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut widen = 0;
    while mean_p(lo) > 0.5 || mean_p(hi) < 0.5 {
        lo *= 2.0;
        hi *= 2.0;
        widen += 1;
        if widen > 60 {
            return Err(Error::Calibration("could not bracket the intercept".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let m = mean_p(mid);
        if m == 0.5 || hi - lo < 1e-13 {
            lo = mid;
            hi = mid;
            break;
        }
        if m < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g0 = 0.5 * (lo + hi);
    let achieved = mean_p(g0);
    if (achieved - 0.5).abs() > 0.005 {
        return Err(Error::Calibration(format!("mean propensity {achieved} after bisection")));
    }
    Ok(g0)
}

fn neighbor_mean(g: &Graph, v: &[f64], i: usize) -> f64 {
    let nb = g.neighbors(i);
    if nb.is_empty() {
        0.0
    } else {
        nb.iter().map(|&j| v[j]).sum::<f64>() / nb.len() as f64
    }
}

/// Linear treatment index without the intercept, per group and unit.
pub fn linear_predictors(params: &DgpParams, graphs: &[Graph], x: &[Vec<f64>], mu_x: &[f64]) -> Vec<Vec<f64>> {
    let [g1, g2, g3, g4] = params.gamma;
    graphs
        .iter()
        .zip(x)
        .zip(mu_x)
        .map(|((g, xs), &mu)| {
            (0..g.n_nodes())
                .map(|i| g1 * xs[i] + g2 * neighbor_mean(g, xs, i) + g3 * g.degree(i) as f64 + g4 * mu)
                .collect()
        })
        .collect()
}

fn stream(base: u64, rep: usize, label: &str) -> SeedKey {
    SeedKey::new(base).with_str("rep").with(rep as u64).with_str(label)
}

pub fn generate_replication(scenario: &Scenario, rep: usize) -> Result<(GroupedPopulation, ReplicationTruth)> {
    generate_replication_with(scenario, &DgpParams::for_scenario(scenario), rep)
}

/// Draws one replication. Fully determined by `(base_seed, rep)`.
pub fn generate_replication_with(
    scenario: &Scenario,
    params: &DgpParams,
    rep: usize,
) -> Result<(GroupedPopulation, ReplicationTruth)> {
    scenario.validate()?;
    params.validate()?;
    if scenario.ng_min <= params.ws_k {
        return Err(Error::Parameter(format!(
            "groups of {} units cannot hold a lattice with k = {}",
            scenario.ng_min, params.ws_k
        )));
    }
    let m = scenario.groups;
    let base = scenario.base_seed;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut rng = rng_from(stream(base, rep, "groups").finish());
    let mut sizes = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut mu_x = Vec::with_capacity(m);
    let mut tau_g = Vec::with_capacity(m);
    for _ in 0..m {
        sizes.push(rng.random_range(scenario.ng_min..=scenario.ng_max));
        alpha.push(params.alpha_sd * std_normal.sample(&mut rng));
        mu_x.push(params.mu_x_sd * std_normal.sample(&mut rng));
        let z: f64 = std_normal.sample(&mut rng);
        tau_g.push(if params.tau_sd == 0.0 { params.tau_mean } else { params.tau_mean + params.tau_sd * z });
    }

    let graphs = (0..m)
        .map(|g| {
            let seed = stream(base, rep, "graph").with(g as u64).finish();
            ws_generate(sizes[g], params.ws_k, params.ws_p, seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let x: Vec<Vec<f64>> = (0..m)
        .map(|g| {
            let mut r = rng_from(stream(base, rep, "covariates").with(g as u64).finish());
            (0..sizes[g]).map(|_| mu_x[g] + std_normal.sample(&mut r)).collect()
        })
        .collect();

    let linear = linear_predictors(params, &graphs, &x, &mu_x);
    let flat: Vec<f64> = linear.iter().flatten().copied().collect();
    let gamma0 = calibrate_gamma0(&flat)?;
    let p_w: Vec<Vec<f64>> = linear.iter().map(|l| l.iter().map(|v| sigmoid(gamma0 + v)).collect()).collect();

    let mut groups = Vec::with_capacity(m);
    let mut frac_all = Vec::with_capacity(m);
    for g in 0..m {
        let n = sizes[g];
        let mut r = rng_from(stream(base, rep, "assignment").with(g as u64).finish());
        let w: Vec<u8> = p_w[g].iter().map(|&p| u8::from(r.random::<f64>() < p)).collect();
        let wf: Vec<f64> = w.iter().map(|&v| f64::from(v)).collect();
        let frac: Vec<f64> = (0..n).map(|i| neighbor_mean(&graphs[g], &wf, i)).collect();
        let mut r = rng_from(stream(base, rep, "noise").with(g as u64).finish());
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let t = if frac[i] > 0.0 { 1.0 } else { 0.0 };
                alpha[g]
                    + params.beta * x[g][i]
                    + tau_g[g] * t
                    + params.delta * frac[i]
                    + params.eps_sd * std_normal.sample(&mut r)
            })
            .collect();
        let xs = x[g].iter().map(|&v| vec![v]).collect();
        groups.push(GroupData::new(g.to_string(), graphs[g].clone(), w, xs, y)?);
        frac_all.push(frac);
    }

    let truth = ReplicationTruth {
        params: params.clone(),
        gamma0,
        alpha,
        mu_x,
        tau_g,
        frac: frac_all,
        p_w,
    };
    Ok((GroupedPopulation::new(groups)?, truth))
}

/// Per-unit effects of the any-treated-neighbor contrast. `None` marks
/// units excluded from the truth (never exposed).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleTruth {
    pub unit_effects: Vec<Vec<Option<f64>>>,
    pub excluded: usize,
}

impl OracleTruth {
    /// Group-weighted average over units, matching the estimator's
    /// weighting: each group has total weight `1/M`, spread over its `N_g`
    /// units; trimmed units (and excluded ones) drop out of numerator and
    /// denominator alike.
    pub fn tau_star(&self, overlap: Option<&[Vec<bool>]>) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (g, effects) in self.unit_effects.iter().enumerate() {
            let wgt = 1.0 / effects.len() as f64;
            for (i, e) in effects.iter().enumerate() {
                let inside = overlap.is_none_or(|o| o[g][i]);
                if let (Some(v), true) = (e, inside) {
                    num += wgt * v;
                    den += wgt;
                }
            }
        }
        if den == 0.0 {
            f64::NAN
        } else {
            num / den
        }
    }
}

/// Monte Carlo oracle: per unit, `τ_g + δ E[frac_i | T_i = 1, X, A]` with
/// the conditional mean estimated over `n_redraws` fresh assignment draws.
pub fn oracle_truth(pop: &GroupedPopulation, truth: &ReplicationTruth, n_redraws: usize, seed: u64) -> OracleTruth {
    let delta = truth.params.delta;
    let mut excluded = 0;
    let unit_effects = pop
        .groups()
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            let n = grp.n_units();
            if delta == 0.0 {
                return vec![Some(truth.tau_g[g]); n];
            }
            let mut rng = rng_from(SeedKey::new(seed).with_str("oracle").with(g as u64).finish());
            let mut sum = vec![0.0; n];
            let mut hits = vec![0usize; n];
            let mut w = vec![0.0; n];
            for _ in 0..n_redraws {
                for (wi, &p) in w.iter_mut().zip(&truth.p_w[g]) {
                    *wi = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                }
                for i in 0..n {
                    let f = neighbor_mean(&grp.graph, &w, i);
                    if f > 0.0 {
                        sum[i] += f;
                        hits[i] += 1;
                    }
                }
            }
            (0..n)
                .map(|i| {
                    if hits[i] == 0 {
                        None
                    } else {
                        Some(truth.tau_g[g] + delta * sum[i] / hits[i] as f64)
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    for e in unit_effects.iter().flatten() {
        if e.is_none() {
            excluded += 1;
        }
    }
    OracleTruth { unit_effects, excluded }
}

/// Exact conditional moments of the any-treated-neighbor exposure under
/// independent assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactExposure {
    /// `P(T_i = 1) = 1 - prod_j (1 - p_j)` over neighbors.
    pub p_exposed: Vec<Vec<f64>>,
    /// `E[frac_i | T_i = 1] = E[frac_i] / P(T_i = 1)`; `None` when `P(T_i = 1) = 0`.
    pub frac_given_exposed: Vec<Vec<Option<f64>>>,
}

pub fn exact_exposure(pop: &GroupedPopulation, truth: &ReplicationTruth) -> ExactExposure {
    let mut p_exposed = Vec::new();
    let mut frac_given_exposed = Vec::new();
    for (g, grp) in pop.groups().iter().enumerate() {
        let p = &truth.p_w[g];
        let mut pe = Vec::with_capacity(grp.n_units());
        let mut fe = Vec::with_capacity(grp.n_units());
        for i in 0..grp.n_units() {
            let nb = grp.graph.neighbors(i);
            let none = nb.iter().map(|&j| 1.0 - p[j]).product::<f64>();
            let exposed = 1.0 - none;
            let mean_frac = neighbor_mean(&grp.graph, p, i);
            pe.push(exposed);
            fe.push(if exposed > 0.0 { Some(mean_frac / exposed) } else { None });
        }
        p_exposed.push(pe);
        frac_given_exposed.push(fe);
    }
    ExactExposure {
        p_exposed,
        frac_given_exposed,
    }
}

/// Oracle truth from the exact conditional moments.
pub fn exact_truth(pop: &GroupedPopulation, truth: &ReplicationTruth) -> OracleTruth {
    let ex = exact_exposure(pop, truth);
    let unit_effects: Vec<Vec<Option<f64>>> = ex
        .frac_given_exposed
        .iter()
        .enumerate()
        .map(|(g, f)| f.iter().map(|v| v.map(|v| truth.tau_g[g] + truth.params.delta * v)).collect())
        .collect();
    let excluded = unit_effects.iter().flatten().filter(|v| v.is_none()).count();
    OracleTruth { unit_effects, excluded }
}

/// True generalized propensities and outcome means for the
/// any-treated-neighbor contrast, per group: `(p_1, μ_1, μ_0)`.
pub fn true_nuisance_components(
    pop: &GroupedPopulation,
    truth: &ReplicationTruth,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ex = exact_exposure(pop, truth);
    let prm = &truth.params;
    let mut mu1 = Vec::new();
    let mut mu0 = Vec::new();
    for (g, grp) in pop.groups().iter().enumerate() {
        let base: Vec<f64> = grp.x.iter().map(|x| truth.alpha[g] + prm.beta * x[0]).collect();
        mu0.push(base.clone());
        mu1.push(
            base.iter()
                .zip(&ex.frac_given_exposed[g])
                .map(|(b, f)| b + truth.tau_g[g] + prm.delta * f.unwrap_or(0.0))
                .collect(),
        );
    }
    (ex.p_exposed, mu1, mu0)
}

/// True nuisances packaged for the estimator (levels 1 and 0).
pub fn oracle_nuisances(pop: &GroupedPopulation, truth: &ReplicationTruth) -> NuisanceEstimates {
    let (p1, mu1, mu0) = true_nuisance_components(pop, truth);
    let mut n = NuisanceEstimates::with_groups(pop.n_groups());
    for g in 0..pop.n_groups() {
        let p0 = p1[g].iter().map(|p| 1.0 - p).collect();
        n.set(g, 1, p1[g].clone(), mu1[g].clone());
        n.set(g, 0, p0, mu0[g].clone());
    }
    n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    GmeGnn,
    GnnOnly,
    Mundlak,
    /// Doubly robust estimator with the true nuisances plugged in.
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GmeGnn => "gme-gnn",
            Method::GnnOnly => "gnn-only",
            Method::Mundlak => "mundlak",
            Method::Oracle => "oracle",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gme-gnn" => Ok(Method::GmeGnn),
            "gnn-only" => Ok(Method::GnnOnly),
            "mundlak" => Ok(Method::Mundlak),
            "oracle" => Ok(Method::Oracle),
            _ => Err(Error::Config(format!(
                "unknown method {s:?} (gme-gnn, gnn-only, mundlak, oracle)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub scenario: Scenario,
    pub params: DgpParams,
    /// Mapping and contrast are fixed to any-treated-neighbor `(1, 0)`;
    /// the GNN seed is combined with the replication index.
    pub estimator: EstimatorConfig,
    pub methods: Vec<Method>,
    pub oracle_redraws: usize,
}

impl SimulationPlan {
    pub fn new(scenario: Scenario, estimator: EstimatorConfig, methods: Vec<Method>) -> Self {
        SimulationPlan {
            params: DgpParams::for_scenario(&scenario),
            scenario,
            estimator,
            methods,
            oracle_redraws: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RawRow {
    pub rep_index: usize,
    pub method: Method,
    pub tau_hat: Option<f64>,
    pub tau_star: f64,
    pub se: Option<f64>,
    pub b_bar: Option<f64>,
    pub error: Option<String>,
}

impl RawRow {
    pub fn covered(&self) -> Option<bool> {
        let (t, se) = (self.tau_hat?, self.se?);
        Some((t - 1.96 * se..=t + 1.96 * se).contains(&self.tau_star))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    pub mean_bias: f64,
    /// Share of 95% intervals covering the truth, for methods with an SE.
    pub coverage: Option<f64>,
}

impl MetricsSummary {
    pub fn from_rows(method: Method, rows: &[RawRow]) -> Self {
        let mine: Vec<&RawRow> = rows.iter().filter(|r| r.method == method).collect();
        let ok: Vec<(f64, &RawRow)> = mine.iter().filter_map(|r| r.tau_hat.map(|t| (t - r.tau_star, *r))).collect();
        let n = ok.len();
        let nf = n.max(1) as f64;
        let mae = ok.iter().map(|(e, _)| e.abs()).sum::<f64>() / nf;
        let mse = ok.iter().map(|(e, _)| e * e).sum::<f64>() / nf;
        let mean_bias = ok.iter().map(|(e, _)| e).sum::<f64>() / nf;
        let covered: Vec<bool> = ok.iter().filter_map(|(_, r)| r.covered()).collect();
        let coverage = if covered.is_empty() {
            None
        } else {
            Some(covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64)
        };
        let nan_if_empty = |v: f64| if n == 0 { f64::NAN } else { v };
        MetricsSummary {
            method,
            n_ok: n,
            n_failed: mine.len() - n,
            mae: nan_if_empty(mae),
            mse: nan_if_empty(mse),
            rmse: nan_if_empty(mse.sqrt()),
            mean_bias: nan_if_empty(mean_bias),
            coverage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub summaries: Vec<MetricsSummary>,
    pub rows: Vec<RawRow>,
}

/// Runs one method on one replication; the truth is restricted to the
/// estimator's overlap set where it trims.
pub fn run_method(
    method: Method,
    pop: &GroupedPopulation,
    truth: &ReplicationTruth,
    oracle: &OracleTruth,
    cfg: &EstimatorConfig,
) -> Result<(f64, f64, Option<f64>, Option<f64>)> {
    match method {
        Method::Mundlak => {
            let (tau, fit) = mundlak_ols(pop)?;
            let se = fit
                .column_names
                .iter()
                .position(|c| c == "W")
                .map(|k| fit.std_errors[k]);
            Ok((tau, oracle.tau_star(None), se, None))
        }
        Method::GmeGnn | Method::GnnOnly => {
            let est = if method == Method::GmeGnn {
                gme_gnn_estimate(pop, cfg)?
            } else {
                gnn_only_estimate(pop, cfg)?
            };
            Ok((est.tau_hat, oracle.tau_star(Some(&est.overlap)), Some(est.std_error), Some(est.b_bar)))
        }
        Method::Oracle => {
            let assignments = assign_exposures(pop, &cfg.mapping);
            let nuis = oracle_nuisances(pop, truth);
            let est = estimate_with_nuisances(pop, &assignments, &nuis, cfg, "oracle", Vec::new())?;
            Ok((est.tau_hat, oracle.tau_star(Some(&est.overlap)), Some(est.std_error), Some(est.b_bar)))
        }
    }
}

/// Replications run in parallel; rows come back ordered by replication
/// and then by method, independent of scheduling.
pub fn run_scenario(plan: &SimulationPlan) -> Result<ScenarioReport> {
    plan.scenario.validate()?;
    plan.params.validate()?;
    if plan.methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    let mut base_cfg = plan.estimator.clone();
    base_cfg.mapping = ExposureMapping::AnyTreatedNeighbor;
    base_cfg.contrast = (1, 0);
    base_cfg.validate()?;

    let per_rep = (0..plan.scenario.replications)
        .into_par_iter()
        .map(|rep| -> Result<Vec<RawRow>> {
            let (pop, truth) = generate_replication_with(&plan.scenario, &plan.params, rep)?;
            let oracle = oracle_truth(&pop, &truth, plan.oracle_redraws, stream(plan.scenario.base_seed, rep, "truth").finish());
            let cfg = EstimatorConfig {
                gnn: base_cfg
                    .gnn
                    .with_seed(stream(plan.scenario.base_seed, rep, "gnn").with(base_cfg.gnn.seed).finish()),
                ..base_cfg.clone()
            };
            Ok(plan
                .methods
                .iter()
                .map(|&method| match run_method(method, &pop, &truth, &oracle, &cfg) {
                    Ok((tau_hat, tau_star, se, b_bar)) => RawRow {
                        rep_index: rep,
                        method,
                        tau_hat: Some(tau_hat),
                        tau_star,
                        se,
                        b_bar,
                        error: None,
                    },
                    Err(e) => RawRow {
                        rep_index: rep,
                        method,
                        tau_hat: None,
                        tau_star: oracle.tau_star(None),
                        se: None,
                        b_bar: None,
                        error: Some(e.to_string()),
                    },
                })
                .collect())
        })
        .collect::<Vec<_>>();

    let mut rows = Vec::new();
    for r in per_rep {
        rows.extend(r?);
    }
    let summaries = plan.methods.iter().map(|&m| MetricsSummary::from_rows(m, &rows)).collect();
    Ok(ScenarioReport {
        scenario: plan.scenario.clone(),
        summaries,
        rows,
    })
}
