//! Grouped data and the per-group balancing statistic.
//!
//! Each unit contributes a local vector `(w_i, x_i, sum_j A_ij w_j,
//! sum_j A_ij x_j)`; the group statistic is the mean of those vectors over
//! the group's units. Conditioning on it replaces group fixed effects.

use std::collections::HashSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::netgraph::Graph;

/// One group's network, treatments, covariates and outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    pub group_id: String,
    pub graph: Graph,
    /// Binary treatments.
    pub w: Vec<u8>,
    /// Covariate rows, `N_g x d`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl GroupData {
    pub fn new(group_id: impl Into<String>, graph: Graph, w: Vec<u8>, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        let group_id = group_id.into();
        let n = graph.n_nodes();
        if n < 2 {
            return Err(Error::in_group(&group_id, Error::Parameter(format!("group needs at least 2 units, got {n}"))));
        }
        if w.len() != n || x.len() != n || y.len() != n {
            return Err(Error::in_group(
                &group_id,
                Error::Dimension(format!(
                    "graph has {n} nodes but W/X/Y have lengths {}/{}/{}",
                    w.len(),
                    x.len(),
                    y.len()
                )),
            ));
        }
        if let Some(i) = w.iter().position(|&v| v > 1) {
            return Err(Error::in_group(&group_id, Error::Parameter(format!("W[{i}] = {} is not binary", w[i]))));
        }
        let d = x[0].len();
        if let Some(i) = x.iter().position(|r| r.len() != d) {
            return Err(Error::in_group(
                &group_id,
                Error::Dimension(format!("covariate row {i} has {} columns, expected {d}", x[i].len())),
            ));
        }
        Ok(GroupData {
            group_id,
            graph,
            w,
            x,
            y,
        })
    }

    pub fn n_units(&self) -> usize {
        self.w.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Local statistic `(w_i, x_i, sum_j A_ij w_j, sum_j A_ij x_j)`, length `2 + 2d`.
    pub fn local_statistic(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.n_units() {
            return Err(Error::Index {
                index: i,
                len: self.n_units(),
            });
        }
        let d = self.n_covariates();
        let mut out = Vec::with_capacity(2 + 2 * d);
        out.push(f64::from(self.w[i]));
        out.extend_from_slice(&self.x[i]);
        let nbrs = self.graph.neighbors(i);
        out.push(nbrs.iter().map(|&j| f64::from(self.w[j])).sum());
        for c in 0..d {
            out.push(nbrs.iter().map(|&j| self.x[j][c]).sum());
        }
        Ok(out)
    }

    pub fn balancing_statistic(&self) -> BalancingStatistic {
        let n = self.n_units();
        let d = self.n_covariates();
        let mut acc = vec![0.0; 2 + 2 * d];
        for i in 0..n {
            let phi = self.local_statistic(i).expect("index in range");
            for (a, v) in acc.iter_mut().zip(phi) {
                *a += v;
            }
        }
        let nf = n as f64;
        acc.iter_mut().for_each(|a| *a /= nf);
        BalancingStatistic {
            w_bar: acc[0],
            x_bar: acc[1..1 + d].to_vec(),
            aw_bar: acc[1 + d],
            ax_bar: acc[2 + d..].to_vec(),
        }
    }

    /// GNN input rows: `X_i`, optionally followed by the group's balancing
    /// statistic repeated on every row.
    pub fn node_features(&self, include_balance: bool) -> Matrix {
        let n = self.n_units();
        let d = self.n_covariates();
        let block = include_balance.then(|| self.balancing_statistic().to_vec());
        let width = d + block.as_ref().map_or(0, Vec::len);
        let mut m = Matrix::zeros(n, width);
        for i in 0..n {
            let row = m.row_mut(i);
            row[..d].copy_from_slice(&self.x[i]);
            if let Some(b) = &block {
                row[d..].copy_from_slice(b);
            }
        }
        m
    }
}

/// `(W̄, X̄, mean(A W), mean(A X))` for one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalancingStatistic {
    pub w_bar: f64,
    pub x_bar: Vec<f64>,
    pub aw_bar: f64,
    pub ax_bar: Vec<f64>,
}

impl BalancingStatistic {
    pub fn dim(&self) -> usize {
        2 + self.x_bar.len() + self.ax_bar.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.w_bar);
        v.extend_from_slice(&self.x_bar);
        v.push(self.aw_bar);
        v.extend_from_slice(&self.ax_bar);
        v
    }
}

/// Independent groups; group ids are distinct and all groups share `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPopulation {
    groups: Vec<GroupData>,
}

impl GroupedPopulation {
    pub fn new(groups: Vec<GroupData>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Parameter("population has no groups".into()));
        }
        let mut seen = HashSet::new();
        let d = groups[0].n_covariates();
        for g in &groups {
            if !seen.insert(g.group_id.as_str()) {
                return Err(Error::Parameter(format!("duplicate group id {}", g.group_id)));
            }
            if g.n_covariates() != d {
                return Err(Error::in_group(
                    &g.group_id,
                    Error::Dimension(format!("{} covariates, expected {d}", g.n_covariates())),
                ));
            }
        }
        Ok(GroupedPopulation { groups })
    }

    pub fn groups(&self) -> &[GroupData] {
        &self.groups
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.groups[0].n_covariates()
    }

    pub fn n_total(&self) -> usize {
        self.groups.iter().map(GroupData::n_units).sum()
    }

    pub fn into_groups(self) -> Vec<GroupData> {
        self.groups
    }
}

/// Pooled per-column z-scoring across all groups. Constant columns are
/// centered only.
pub fn standardize_columns(blocks: &mut [Matrix]) {
    let Some(cols) = blocks.first().map(Matrix::cols) else {
        return;
    };
    let n: usize = blocks.iter().map(Matrix::rows).sum();
    if n == 0 {
        return;
    }
    for c in 0..cols {
        let mean = blocks.iter().flat_map(|m| (0..m.rows()).map(move |r| m.get(r, c))).sum::<f64>() / n as f64;
        let var = blocks
            .iter()
            .flat_map(|m| (0..m.rows()).map(move |r| (m.get(r, c) - mean).powi(2)))
            .sum::<f64>()
            / n as f64;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * (1.0 + mean.abs()) { 1.0 / sd } else { 0.0 };
        for m in blocks.iter_mut() {
            for r in 0..m.rows() {
                let v = m.get(r, c);
                m.set(r, c, (v - mean) * scale);
            }
        }
    }
}
