//! Network HAC variance with a uniform distance kernel, the piecewise
//! bandwidth rule, and standard errors.

use rayon::prelude::*;
use serde::Serialize;

use crate::balance::GroupedPopulation;
use crate::drestimator::OverlapSet;
use crate::error::{Error, Result};
use crate::netgraph::{BfsScratch, GraphStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthBranch {
    /// `L / 4`, taken when `L < 2 log N / log δ`.
    QuarterL,
    /// `L^(1/4)` otherwise.
    FourthRoot,
    /// No connected pair: diagonal-only kernel.
    NoPaths,
}

/// Bandwidth with natural logarithms.
pub fn bandwidth(stats: &GraphStats, n: usize) -> (usize, BandwidthBranch) {
    bandwidth_with_log(stats, n, f64::ln)
}

/// Bandwidth rule with an explicit logarithm. The branch is the same for
/// every base because the threshold is a ratio of two logs.
pub fn bandwidth_with_log(stats: &GraphStats, n: usize, log: impl Fn(f64) -> f64) -> (usize, BandwidthBranch) {
    let Some(l) = stats.avg_path_length else {
        return (0, BandwidthBranch::NoPaths);
    };
    let log_delta = log(stats.avg_degree);
    let threshold = if stats.avg_degree <= 1.0 || log_delta <= 0.0 {
        f64::INFINITY
    } else {
        2.0 * log(n.max(1) as f64) / log_delta
    };
    let (raw, branch) = if l < threshold {
        (0.25 * l, BandwidthBranch::QuarterL)
    } else {
        (l.powf(0.25), BandwidthBranch::FourthRoot)
    };
    (raw.ceil() as usize, branch)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupBandwidth {
    pub group_id: String,
    pub bandwidth: usize,
    pub branch: BandwidthBranch,
    pub avg_degree: f64,
    pub avg_path_length: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthPlan {
    pub groups: Vec<GroupBandwidth>,
}

impl BandwidthPlan {
    pub fn for_population(pop: &GroupedPopulation) -> Self {
        let groups = pop
            .groups()
            .par_iter()
            .map(|g| {
                let stats = g.graph.stats();
                let (bandwidth, branch) = bandwidth(&stats, g.n_units());
                GroupBandwidth {
                    group_id: g.group_id.clone(),
                    bandwidth,
                    branch,
                    avg_degree: stats.avg_degree,
                    avg_path_length: stats.avg_path_length,
                }
            })
            .collect();
        BandwidthPlan { groups }
    }

    /// Same bandwidth for every group.
    pub fn uniform(pop: &GroupedPopulation, b: usize) -> Self {
        let mut plan = Self::for_population(pop);
        plan.groups.iter_mut().for_each(|g| g.bandwidth = b);
        plan
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupHac {
    pub group_id: String,
    pub bandwidth: usize,
    pub branch: BandwidthBranch,
    /// `N_g^{-1} sum_i sum_j e_i e_j 1{dist(i,j) <= b_g}`.
    pub contribution: f64,
    pub negative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HacResult {
    /// Floored at zero.
    pub sigma2: f64,
    pub raw_sigma2: f64,
    pub floored: bool,
    pub groups: Vec<GroupHac>,
}

/// `σ² = M^{-1} sum_g N_g^{-1} sum_{i,j} B_i (τ_i - τ) B_j (τ_j - τ) 1{dist(i,j) <= b_g}`.
/// Pairs in different components never fall inside the kernel.
pub fn hac_variance(
    pop: &GroupedPopulation,
    unit_effects: &[Vec<f64>],
    tau_hat: f64,
    overlap: &OverlapSet,
    plan: &BandwidthPlan,
) -> Result<HacResult> {
    let m = pop.n_groups();
    if unit_effects.len() != m || overlap.flags.len() != m || plan.groups.len() != m {
        return Err(Error::Dimension(format!(
            "{m} groups but {} effect vectors, {} flag vectors, {} bandwidths",
            unit_effects.len(),
            overlap.flags.len(),
            plan.groups.len()
        )));
    }
    let groups: Vec<GroupHac> = pop
        .groups()
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let n = g.n_units();
            let effects = &unit_effects[gi];
            let flags = &overlap.flags[gi];
            if effects.len() != n || flags.len() != n {
                return Err(Error::in_group(&g.group_id, Error::Dimension("effect/flag length".into())));
            }
            let e: Vec<f64> = (0..n)
                .map(|i| if flags[i] { effects[i] - tau_hat } else { 0.0 })
                .collect();
            let b = plan.groups[gi].bandwidth;
            let mut scratch = BfsScratch::new(n);
            let mut total = 0.0;
            for i in 0..n {
                if e[i] == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                scratch.visit_ball(&g.graph, i, b, |j, _| inner += e[j]);
                total += e[i] * inner;
            }
            let contribution = total / n as f64;
            Ok(GroupHac {
                group_id: g.group_id.clone(),
                bandwidth: b,
                branch: plan.groups[gi].branch,
                contribution,
                negative: contribution < 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let raw_sigma2 = groups.iter().map(|g| g.contribution).sum::<f64>() / m as f64;
    Ok(HacResult {
        sigma2: raw_sigma2.max(0.0),
        raw_sigma2,
        floored: raw_sigma2 < 0.0,
        groups,
    })
}

/// `sqrt(σ² / N_total)`, divided by `B̄` for the overlap-normalized estimator.
pub fn standard_error(sigma2: f64, n_total: usize, b_bar: f64, normalize: bool) -> f64 {
    let se = (sigma2.max(0.0) / n_total as f64).sqrt();
    if normalize {
        se / b_bar
    } else {
        se
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::GroupData;
    use crate::netgraph::{ws_generate, Graph};
    use rand::Rng;

    fn stats(l: Option<f64>, delta: f64) -> GraphStats {
        GraphStats {
            n_nodes: 100,
            n_edges: 0,
            avg_degree: delta,
            avg_path_length: l,
            n_components: 1,
        }
    }

    #[test]
    fn bandwidth_hand_cases() {
        assert_eq!(bandwidth(&stats(Some(8.0), 4.0), 100), (2, BandwidthBranch::FourthRoot));
        assert_eq!(bandwidth(&stats(Some(4.0), 4.0), 100), (1, BandwidthBranch::QuarterL));
        assert_eq!(bandwidth(&stats(None, 0.0), 100), (0, BandwidthBranch::NoPaths));
        // δ <= 1: threshold is infinite
        assert_eq!(bandwidth(&stats(Some(10.0), 1.0), 100), (3, BandwidthBranch::QuarterL));
    }

    #[test]
    fn branch_is_base_invariant() {
        let mut rng = crate::seed::rng_from(5);
        for _ in 0..1000 {
            let s = stats(Some(rng.random_range(1.0..20.0)), rng.random_range(0.5..12.0));
            let n = rng.random_range(2..2000);
            let nat = bandwidth(&s, n);
            assert_eq!(nat, bandwidth_with_log(&s, n, f64::log2));
            assert_eq!(nat, bandwidth_with_log(&s, n, f64::log10));
        }
    }

    fn pop_of(graphs: Vec<Graph>) -> GroupedPopulation {
        let groups = graphs
            .into_iter()
            .enumerate()
            .map(|(k, g)| {
                let n = g.n_nodes();
                GroupData::new(k.to_string(), g, vec![0; n], vec![vec![0.0]; n], vec![0.0; n]).unwrap()
            })
            .collect();
        GroupedPopulation::new(groups).unwrap()
    }

    fn overlap(flags: Vec<Vec<bool>>) -> OverlapSet {
        OverlapSet::from_flags(flags, 0.01)
    }

    #[test]
    fn zero_bandwidth_is_diagonal() {
        let pop = pop_of(vec![Graph::path(4), Graph::complete(3)]);
        let eff = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0, -1.0]];
        let ov = overlap(vec![vec![true, true, false, true], vec![true; 3]]);
        let tau = 0.5;
        let r = hac_variance(&pop, &eff, tau, &ov, &BandwidthPlan::uniform(&pop, 0)).unwrap();
        let g0 = ((1.0 - tau).powi(2) + (2.0 - tau).powi(2) + (4.0 - tau).powi(2)) / 4.0;
        let g1 = ((0.0 - tau).powi(2) + (1.0 - tau).powi(2) + (-1.0 - tau).powi(2)) / 3.0;
        assert!((r.sigma2 - (g0 + g1) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn complete_graph_is_square_of_sum() {
        let pop = pop_of(vec![Graph::complete(5)]);
        let eff = vec![vec![1.0, -2.0, 0.5, 3.0, 1.5]];
        let ov = overlap(vec![vec![true, true, false, true, true]]);
        let r = hac_variance(&pop, &eff, 0.25, &ov, &BandwidthPlan::uniform(&pop, 1)).unwrap();
        let s: f64 = [1.0, -2.0, 3.0, 1.5].iter().map(|v| v - 0.25).sum();
        assert!((r.sigma2 - s * s / 5.0).abs() < 1e-14);
    }

    #[test]
    fn equal_effects_have_zero_variance() {
        let pop = pop_of(vec![ws_generate(30, 4, 0.2, 1).unwrap()]);
        let ov = overlap(vec![vec![true; 30]]);
        for b in 0..5 {
            let r = hac_variance(&pop, &[vec![0.7; 30]], 0.7, &ov, &BandwidthPlan::uniform(&pop, b)).unwrap();
            assert_eq!(r.sigma2, 0.0);
        }
    }

    #[test]
    fn negative_total_is_floored() {
        let pop = pop_of(vec![Graph::path(2)]);
        let ov = overlap(vec![vec![true; 2]]);
        // e = (1, -1): diagonal 2, off-diagonal -2 → 0; use an asymmetric split
        let r = hac_variance(&pop, &[vec![1.0, -3.0]], -0.0, &ov, &BandwidthPlan::uniform(&pop, 1)).unwrap();
        assert!(r.raw_sigma2 >= 0.0);
        let r = hac_variance(&pop, &[vec![2.0, -1.0]], 0.0, &ov, &BandwidthPlan::uniform(&pop, 1)).unwrap();
        assert!((r.raw_sigma2 - 0.5).abs() < 1e-15);

        let star = Graph::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let pop = pop_of(vec![star]);
        let ov = overlap(vec![vec![true; 3]]);
        // e = (2, -3, -3): within distance 1 of centre but leaves are 2 apart
        let r = hac_variance(&pop, &[vec![2.0, -3.0, -3.0]], 0.0, &ov, &BandwidthPlan::uniform(&pop, 1)).unwrap();
        assert!(r.raw_sigma2 < 0.0 && r.floored && r.sigma2 == 0.0 && r.groups[0].negative);
    }

    #[test]
    fn standard_error_scaling() {
        assert_eq!(standard_error(0.0, 400, 1.0, true), 0.0);
        assert!((standard_error(4.0, 400, 1.0, true) - 0.1).abs() < 1e-15);
        let a = standard_error(4.0, 400, 0.8, true);
        let b = standard_error(4.0, 400, 0.4, true);
        assert!((b - 2.0 * a).abs() < 1e-15);
        assert_eq!(standard_error(4.0, 400, 0.4, false), 0.1);
    }
}
