//! Doubly robust exposure-contrast estimation with GCN nuisances.
//!
//! Pipeline: balancing statistics → node features → per-level propensity
//! and outcome fits → overlap trimming → unit AIPW scores → group means →
//! overall estimate → network HAC inference.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::{standardize_columns, GroupedPopulation};
use crate::error::{Error, Result};
use crate::exposure::{ExposureAssignment, ExposureMapping};
use crate::gnn::{fit_outcome_on, fit_propensity_on, GcnConfig, GcnModel, NormalizedAdjacency};
use crate::hacinfer::{hac_variance, standard_error, BandwidthPlan, HacResult};
use crate::matrix::Matrix;
use crate::seed::SeedKey;

/// Which units a nuisance model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingScope {
    /// One model per group, level and role.
    PerGroup,
    /// One model per level and role, trained on the disjoint union of all
    /// group graphs.
    Pooled,
}

impl std::str::FromStr for TrainingScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-group" => Ok(TrainingScope::PerGroup),
            "pooled" => Ok(TrainingScope::Pooled),
            _ => Err(Error::Config(format!("unknown training scope {s:?} (per-group or pooled)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mapping: ExposureMapping,
    /// `(t, t')`: the estimate targets `E[Y(t)] - E[Y(t')]`.
    pub contrast: (usize, usize),
    pub gnn: GcnConfig,
    /// Overlap threshold: units need `eta <= p <= 1 - eta` for both arms.
    pub eta: f64,
    /// Divide the literal group-averaged estimate by the overlap share.
    pub normalize: bool,
    /// Append the balancing statistic to node features.
    pub include_balance: bool,
    pub scope: TrainingScope,
    /// Rescale one-vs-rest propensities to sum to one per unit.
    pub normalize_propensities: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mapping: ExposureMapping::AnyTreatedNeighbor,
            contrast: (1, 0),
            gnn: GcnConfig::default(),
            eta: 0.01,
            normalize: true,
            include_balance: true,
            scope: TrainingScope::Pooled,
            normalize_propensities: false,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.mapping.validate()?;
        self.gnn.validate()?;
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::Parameter(format!("eta {} outside (0, 0.5)", self.eta)));
        }
        let k = self.mapping.n_levels();
        let (t, tp) = self.contrast;
        if t >= k || tp >= k {
            return Err(Error::Parameter(format!(
                "contrast ({t}, {tp}) out of range for {k} exposure levels"
            )));
        }
        Ok(())
    }
}

/// Per-group fitted nuisances. A `None` entry means the level could not be
/// fitted in that group (it never occurs there).
#[derive(Debug, Clone, Default)]
pub struct NuisanceEstimates {
    pub p_hat: Vec<BTreeMap<usize, Option<Vec<f64>>>>,
    pub mu_hat: Vec<BTreeMap<usize, Option<Vec<f64>>>>,
}

impl NuisanceEstimates {
    pub fn with_groups(m: usize) -> Self {
        NuisanceEstimates {
            p_hat: vec![BTreeMap::new(); m],
            mu_hat: vec![BTreeMap::new(); m],
        }
    }

    pub fn set(&mut self, group: usize, level: usize, p: Vec<f64>, mu: Vec<f64>) {
        self.p_hat[group].insert(level, Some(p));
        self.mu_hat[group].insert(level, Some(mu));
    }

    fn get(&self, group: usize, level: usize) -> Option<(&[f64], &[f64])> {
        let p = self.p_hat.get(group)?.get(&level)?.as_deref()?;
        let mu = self.mu_hat.get(group)?.get(&level)?.as_deref()?;
        Some((p, mu))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSet {
    pub flags: Vec<Vec<bool>>,
    pub eta: f64,
    /// `M^{-1} sum_g N_g^{-1} sum_i B_i`.
    pub b_bar: f64,
}

impl OverlapSet {
    pub fn from_flags(flags: Vec<Vec<bool>>, eta: f64) -> Self {
        let m = flags.len().max(1) as f64;
        let b_bar = flags
            .iter()
            .map(|f| f.iter().filter(|&&b| b).count() as f64 / f.len().max(1) as f64)
            .sum::<f64>()
            / m;
        OverlapSet { flags, eta, b_bar }
    }

    pub fn group_share(&self, g: usize) -> f64 {
        let f = &self.flags[g];
        f.iter().filter(|&&b| b).count() as f64 / f.len().max(1) as f64
    }
}

/// `B_i = 1` iff both arms' propensities lie in `[eta, 1 - eta]`. Groups
/// where an arm could not be fitted contribute no overlap.
pub fn overlap_flags(
    nuisances: &NuisanceEstimates,
    group_sizes: &[usize],
    contrast: (usize, usize),
    eta: f64,
) -> Result<OverlapSet> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::Parameter(format!("eta {eta} outside (0, 0.5)")));
    }
    let inside = |p: f64| p >= eta && p <= 1.0 - eta;
    let flags: Vec<Vec<bool>> = group_sizes
        .iter()
        .enumerate()
        .map(|(g, &n)| match (nuisances.get(g, contrast.0), nuisances.get(g, contrast.1)) {
            (Some((pt, _)), Some((ptp, _))) => (0..n).map(|i| inside(pt[i]) && inside(ptp[i])).collect(),
            _ => vec![false; n],
        })
        .collect();
    if !flags.iter().flatten().any(|&b| b) {
        return Err(Error::EmptyOverlap(contrast.0, contrast.1));
    }
    Ok(OverlapSet::from_flags(flags, eta))
}

/// AIPW score for one unit. Each arm is evaluated separately and then
/// differenced, so `(t, t)` gives exactly zero and swapping arms negates
/// the score exactly.
#[allow(clippy::too_many_arguments)]
pub fn unit_dr(y: f64, level: usize, contrast: (usize, usize), p_t: f64, p_tp: f64, mu_t: f64, mu_tp: f64) -> f64 {
    arm(y, level == contrast.0, p_t, mu_t) - arm(y, level == contrast.1, p_tp, mu_tp)
}

#[inline]
fn arm(y: f64, observed: bool, p: f64, mu: f64) -> f64 {
    if observed {
        (y - mu) / p + mu
    } else {
        mu
    }
}

/// `N_g^{-1} sum_i B_i τ_i`.
pub fn group_aggregate(unit_effects: &[f64], flags: &[bool]) -> Result<f64> {
    if unit_effects.len() != flags.len() {
        return Err(Error::Dimension(format!(
            "{} effects but {} flags",
            unit_effects.len(),
            flags.len()
        )));
    }
    if unit_effects.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = unit_effects.iter().zip(flags).filter(|(_, &b)| b).map(|(v, _)| v).sum();
    Ok(s / unit_effects.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupDiagnostics {
    pub group_id: String,
    pub n_units: usize,
    pub level_counts: Vec<usize>,
    pub overlap_share: f64,
    pub tau_g: f64,
    pub bandwidth: usize,
    pub branch: crate::hacinfer::BandwidthBranch,
    pub group_hac_contribution: f64,
    pub negative_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateDiagnostics {
    /// Literal estimate: zeros for trimmed units, averaged over `N_g` and `M`.
    pub tau_unnormalized: f64,
    /// Literal estimate divided by `B̄`.
    pub tau_normalized: f64,
    pub normalize: bool,
    pub eta: f64,
    pub n_groups: usize,
    pub n_total: usize,
    pub sigma2_raw: f64,
    pub variance_floored: bool,
    pub groups: Vec<GroupDiagnostics>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub method: String,
    pub contrast: (usize, usize),
    pub tau_hat: f64,
    pub sigma2_hat: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub b_bar: f64,
    pub per_group_tau: Vec<f64>,
    pub diagnostics: EstimateDiagnostics,
    #[serde(skip)]
    pub overlap: Vec<Vec<bool>>,
    #[serde(skip)]
    pub unit_effects: Vec<Vec<f64>>,
}

impl EffectEstimate {
    pub fn covers(&self, truth: f64) -> bool {
        self.ci95.0 <= truth && truth <= self.ci95.1
    }
}

pub fn assign_exposures(pop: &GroupedPopulation, mapping: &ExposureMapping) -> Vec<ExposureAssignment> {
    pop.groups().iter().map(|g| mapping.assign(g)).collect()
}

/// Levels that need nuisance fits, ascending.
fn fitted_levels(cfg: &EstimatorConfig) -> Vec<usize> {
    if cfg.normalize_propensities {
        (0..cfg.mapping.n_levels()).collect()
    } else {
        let mut v = vec![cfg.contrast.0, cfg.contrast.1];
        v.sort_unstable();
        v.dedup();
        v
    }
}

fn check_levels_present(assignments: &[ExposureAssignment], cfg: &EstimatorConfig) -> Result<()> {
    for level in [cfg.contrast.0, cfg.contrast.1] {
        if assignments.iter().all(|a| a.count(level) == 0) {
            return Err(Error::MissingLevel { level, group: None });
        }
    }
    Ok(())
}

/// Per-group node features, z-scored per column over all groups.
pub fn population_features(pop: &GroupedPopulation, include_balance: bool) -> Vec<Matrix> {
    let mut blocks: Vec<Matrix> = pop.groups().iter().map(|g| g.node_features(include_balance)).collect();
    standardize_columns(&mut blocks);
    blocks
}

/// Trained nuisance models, keyed by `(scope label, level)`.
#[derive(Debug, Clone, Default)]
pub struct FittedModels {
    pub propensity: Vec<(String, usize, GcnModel)>,
    pub outcome: Vec<(String, usize, GcnModel)>,
}

fn model_seed(base: u64, scope_label: &str, level: usize, role: &str) -> u64 {
    SeedKey::new(base).with_str(scope_label).with(level as u64).with_str(role).finish()
}

/// Fits `p̂_t` and `μ̂_t` for every needed level.
pub fn fit_nuisances(
    pop: &GroupedPopulation,
    assignments: &[ExposureAssignment],
    cfg: &EstimatorConfig,
    warnings: &mut Vec<String>,
) -> Result<(NuisanceEstimates, FittedModels)> {
    let levels = fitted_levels(cfg);
    let features = population_features(pop, cfg.include_balance);
    let m = pop.n_groups();
    let mut nuis = NuisanceEstimates::with_groups(m);
    let mut models = FittedModels::default();

    match cfg.scope {
        TrainingScope::Pooled => {
            let adj = NormalizedAdjacency::block_diagonal(
                &pop.groups().iter().map(|g| NormalizedAdjacency::from_graph(&g.graph)).collect::<Vec<_>>(),
            );
            let x = Matrix::vstack(&features);
            let all_levels: Vec<usize> = assignments.iter().flat_map(|a| a.levels.iter().copied()).collect();
            let y: Vec<f64> = pop.groups().iter().flat_map(|g| g.y.iter().copied()).collect();
            let offsets: Vec<usize> = pop
                .groups()
                .iter()
                .scan(0, |acc, g| {
                    let start = *acc;
                    *acc += g.n_units();
                    Some(start)
                })
                .collect();

            let jobs: Vec<(usize, bool)> = levels.iter().flat_map(|&t| [(t, true), (t, false)]).collect();
            let fits = jobs
                .par_iter()
                .map(|&(t, is_prop)| {
                    if is_prop {
                        let cfg_p = cfg.gnn.with_seed(model_seed(cfg.gnn.seed, "pooled", t, "propensity"));
                        fit_propensity_on(&adj, &x, &all_levels, t, &cfg_p).map(|f| (f.probs, f.model, f.degenerate))
                    } else if all_levels.contains(&t) {
                        let cfg_o = cfg.gnn.with_seed(model_seed(cfg.gnn.seed, "pooled", t, "outcome"));
                        fit_outcome_on(&adj, &x, &all_levels, &y, t, &cfg_o).map(|f| (f.mean, f.model, false))
                    } else {
                        Err(Error::MissingLevel { level: t, group: None })
                    }
                })
                .collect::<Vec<_>>();

            let mut by_level: BTreeMap<usize, (Option<Vec<f64>>, Option<Vec<f64>>)> = BTreeMap::new();
            for (&(t, is_prop), fit) in jobs.iter().zip(fits) {
                let entry = by_level.entry(t).or_default();
                match fit {
                    Ok((pred, model, degenerate)) => {
                        if degenerate {
                            warnings.push(format!("level {t} absent from training data; propensity fit is degenerate"));
                        }
                        if is_prop {
                            models.propensity.push(("pooled".into(), t, model));
                            entry.0 = Some(pred);
                        } else {
                            models.outcome.push(("pooled".into(), t, model));
                            entry.1 = Some(pred);
                        }
                    }
                    Err(Error::MissingLevel { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            for (gi, g) in pop.groups().iter().enumerate() {
                let (s, e) = (offsets[gi], offsets[gi] + g.n_units());
                for (&t, (p, mu)) in &by_level {
                    nuis.p_hat[gi].insert(t, p.as_ref().map(|v| v[s..e].to_vec()));
                    nuis.mu_hat[gi].insert(t, mu.as_ref().map(|v| v[s..e].to_vec()));
                }
            }
        }
        TrainingScope::PerGroup => {
            let per_group = pop
                .groups()
                .par_iter()
                .zip(features.par_iter())
                .zip(assignments.par_iter())
                .map(|((g, x), a)| {
                    let adj = NormalizedAdjacency::from_graph(&g.graph);
                    let mut out = Vec::new();
                    for &t in &levels {
                        if a.count(t) == 0 {
                            out.push((t, None));
                            continue;
                        }
                        let cfg_p = cfg.gnn.with_seed(model_seed(cfg.gnn.seed, &g.group_id, t, "propensity"));
                        let cfg_o = cfg.gnn.with_seed(model_seed(cfg.gnn.seed, &g.group_id, t, "outcome"));
                        let p = fit_propensity_on(&adj, x, &a.levels, t, &cfg_p).map_err(|e| Error::in_group(&g.group_id, e))?;
                        let o = fit_outcome_on(&adj, x, &a.levels, &g.y, t, &cfg_o).map_err(|e| Error::in_group(&g.group_id, e))?;
                        out.push((t, Some((p, o))));
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            for (gi, fits) in per_group.into_iter().enumerate() {
                let gid = &pop.groups()[gi].group_id;
                for (t, fit) in fits {
                    match fit {
                        Some((p, o)) => {
                            nuis.p_hat[gi].insert(t, Some(p.probs));
                            nuis.mu_hat[gi].insert(t, Some(o.mean));
                            models.propensity.push((gid.clone(), t, p.model));
                            models.outcome.push((gid.clone(), t, o.model));
                        }
                        None => {
                            warnings.push(format!("group {gid}: level {t} absent; group excluded from overlap"));
                            nuis.p_hat[gi].insert(t, None);
                            nuis.mu_hat[gi].insert(t, None);
                        }
                    }
                }
            }
        }
    }

    if cfg.normalize_propensities {
        for gi in 0..m {
            let n = pop.groups()[gi].n_units();
            let fitted: Vec<&Vec<f64>> = nuis.p_hat[gi].values().flatten().collect();
            if fitted.is_empty() {
                continue;
            }
            let sums: Vec<f64> = (0..n).map(|i| fitted.iter().map(|p| p[i]).sum()).collect();
            for p in nuis.p_hat[gi].values_mut().flatten() {
                for (v, s) in p.iter_mut().zip(&sums) {
                    *v /= s;
                }
            }
        }
    }
    Ok((nuis, models))
}

/// Scores, aggregates and attaches HAC inference given nuisances.
pub fn estimate_with_nuisances(
    pop: &GroupedPopulation,
    assignments: &[ExposureAssignment],
    nuisances: &NuisanceEstimates,
    cfg: &EstimatorConfig,
    method: &str,
    mut warnings: Vec<String>,
) -> Result<EffectEstimate> {
    let sizes: Vec<usize> = pop.groups().iter().map(|g| g.n_units()).collect();
    let overlap = overlap_flags(nuisances, &sizes, cfg.contrast, cfg.eta)?;
    let (lo, hi) = (cfg.eta / 2.0, 1.0 - cfg.eta / 2.0);
    let (t, tp) = cfg.contrast;

    let mut unit_effects = Vec::with_capacity(pop.n_groups());
    let mut per_group_tau = Vec::with_capacity(pop.n_groups());
    for (gi, g) in pop.groups().iter().enumerate() {
        let n = g.n_units();
        let effects: Vec<f64> = match (nuisances.get(gi, t), nuisances.get(gi, tp)) {
            (Some((pt, mt)), Some((ptp, mtp))) => (0..n)
                .map(|i| {
                    unit_dr(
                        g.y[i],
                        assignments[gi].levels[i],
                        cfg.contrast,
                        pt[i].clamp(lo, hi),
                        ptp[i].clamp(lo, hi),
                        mt[i],
                        mtp[i],
                    )
                })
                .collect(),
            _ => vec![0.0; n],
        };
        per_group_tau.push(group_aggregate(&effects, &overlap.flags[gi])?);
        unit_effects.push(effects);
    }
    let m = pop.n_groups() as f64;
    let tau_unnormalized = per_group_tau.iter().sum::<f64>() / m;
    let tau_normalized = tau_unnormalized / overlap.b_bar;
    let tau_hat = if cfg.normalize { tau_normalized } else { tau_unnormalized };

    let plan = BandwidthPlan::for_population(pop);
    let hac: HacResult = hac_variance(pop, &unit_effects, tau_hat, &overlap, &plan)?;
    if hac.floored {
        warnings.push(format!("HAC variance {} was negative; floored at 0", hac.raw_sigma2));
    }
    let n_total = pop.n_total();
    let se = standard_error(hac.sigma2, n_total, overlap.b_bar, cfg.normalize);

    let groups = pop
        .groups()
        .iter()
        .enumerate()
        .map(|(gi, g)| GroupDiagnostics {
            group_id: g.group_id.clone(),
            n_units: g.n_units(),
            level_counts: (0..assignments[gi].n_levels).map(|l| assignments[gi].count(l)).collect(),
            overlap_share: overlap.group_share(gi),
            tau_g: per_group_tau[gi],
            bandwidth: hac.groups[gi].bandwidth,
            branch: hac.groups[gi].branch,
            group_hac_contribution: hac.groups[gi].contribution,
            negative_flag: hac.groups[gi].negative,
        })
        .collect();

    Ok(EffectEstimate {
        method: method.to_string(),
        contrast: cfg.contrast,
        tau_hat,
        sigma2_hat: hac.sigma2,
        std_error: se,
        ci95: (tau_hat - 1.96 * se, tau_hat + 1.96 * se),
        b_bar: overlap.b_bar,
        per_group_tau,
        diagnostics: EstimateDiagnostics {
            tau_unnormalized,
            tau_normalized,
            normalize: cfg.normalize,
            eta: cfg.eta,
            n_groups: pop.n_groups(),
            n_total,
            sigma2_raw: hac.raw_sigma2,
            variance_floored: hac.floored,
            groups,
            warnings,
        },
        overlap: overlap.flags,
        unit_effects,
    })
}

/// Full estimator; returns the estimate and the trained nuisance models.
pub fn estimate_full(pop: &GroupedPopulation, cfg: &EstimatorConfig) -> Result<(EffectEstimate, FittedModels)> {
    cfg.validate()?;
    let assignments = assign_exposures(pop, &cfg.mapping);
    check_levels_present(&assignments, cfg)?;
    let mut warnings = Vec::new();
    let (nuis, models) = fit_nuisances(pop, &assignments, cfg, &mut warnings)?;
    let method = if cfg.include_balance { "gme-gnn" } else { "gnn-only" };
    let est = estimate_with_nuisances(pop, &assignments, &nuis, cfg, method, warnings)?;
    Ok((est, models))
}

/// GME-GNN: GCN nuisances conditioned on the balancing statistic.
pub fn gme_gnn_estimate(pop: &GroupedPopulation, cfg: &EstimatorConfig) -> Result<EffectEstimate> {
    let cfg = EstimatorConfig {
        include_balance: true,
        ..cfg.clone()
    };
    estimate_full(pop, &cfg).map(|(e, _)| e)
}
