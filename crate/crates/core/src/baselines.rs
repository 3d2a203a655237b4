//! Comparator estimators: pooled Mundlak OLS and the GNN-only estimator.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::balance::GroupedPopulation;
use crate::drestimator::{estimate_full, EffectEstimate, EstimatorConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub column_names: Vec<String>,
    /// `RSS / (n - p)`; zero when there are no residual degrees of freedom.
    pub residual_variance: f64,
    /// Classical (homoskedastic) standard errors.
    pub std_errors: Vec<f64>,
    pub warnings: Vec<String>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.column_names.iter().position(|c| c == name).map(|k| self.coefficients[k])
    }
}

/// Relative size of `|R_kk|` under which a column counts as collinear with
/// the ones before it.
const RANK_TOL: f64 = 1e-10;

/// Least squares via Householder QR. `droppable[k]` marks columns that may
/// be removed (with a warning) when they are collinear with earlier ones;
/// a collinear column that is not droppable is an error.
pub fn ols_qr(design: &[Vec<f64>], y: &[f64], names: &[String], droppable: &[bool]) -> Result<OlsFit> {
    let n = design.len();
    if n != y.len() {
        return Err(Error::Dimension(format!("{n} design rows but {} responses", y.len())));
    }
    let p_all = names.len();
    if droppable.len() != p_all || design.iter().any(|r| r.len() != p_all) {
        return Err(Error::Dimension("design width does not match column names".into()));
    }
    if n < p_all {
        return Err(Error::Parameter(format!("{n} rows for {p_all} columns")));
    }

    let mut keep: Vec<usize> = (0..p_all).collect();
    let mut warnings = Vec::new();
    loop {
        let x = DMatrix::from_fn(n, keep.len(), |i, k| design[i][keep[k]]);
        let qr = x.clone().qr();
        let r = qr.r();
        let bad = (0..keep.len()).find(|&k| {
            let norm = x.column(k).norm();
            norm == 0.0 || r[(k, k)].abs() <= RANK_TOL * norm.max(1.0)
        });
        if let Some(k) = bad {
            let col = keep[k];
            if !droppable[col] {
                return Err(Error::RankDeficient(format!(
                    "column {} is collinear with earlier columns",
                    names[col]
                )));
            }
            warnings.push(format!("dropped collinear column {}", names[col]));
            keep.remove(k);
            continue;
        }

        let p = keep.len();
        let mut qty = DVector::from_column_slice(y);
        qr.q_tr_mul(&mut qty);
        let rhs = qty.rows(0, p).into_owned();
        let beta = r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
        let resid = DVector::from_column_slice(y) - &x * &beta;
        let rss = resid.norm_squared();
        let residual_variance = if n > p { rss / (n - p) as f64 } else { 0.0 };
        let r_inv = r
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
        let std_errors = (0..p)
            .map(|k| (residual_variance * r_inv.row(k).norm_squared()).sqrt())
            .collect();
        return Ok(OlsFit {
            coefficients: beta.iter().copied().collect(),
            column_names: keep.iter().map(|&c| names[c].clone()).collect(),
            residual_variance,
            std_errors,
            warnings,
        });
    }
}

/// Regresses `Y` on `[1, W, X, W̄_g, X̄_g]` over all units; returns the
/// coefficient on `W`.
pub fn mundlak_ols(pop: &GroupedPopulation) -> Result<(f64, OlsFit)> {
    let d = pop.n_covariates();
    let mut names = vec!["intercept".to_string(), "W".to_string()];
    names.extend((1..=d).map(|k| format!("X{k}")));
    names.push("W_bar".into());
    names.extend((1..=d).map(|k| format!("X{k}_bar")));
    let droppable: Vec<bool> = (0..names.len()).map(|k| k >= 2 + d).collect();

    let mut design = Vec::with_capacity(pop.n_total());
    let mut y = Vec::with_capacity(pop.n_total());
    for g in pop.groups() {
        let s = g.balancing_statistic();
        for i in 0..g.n_units() {
            let mut row = Vec::with_capacity(names.len());
            row.push(1.0);
            row.push(f64::from(g.w[i]));
            row.extend_from_slice(&g.x[i]);
            row.push(s.w_bar);
            row.extend_from_slice(&s.x_bar);
            design.push(row);
            y.push(g.y[i]);
        }
    }
    let fit = ols_qr(&design, &y, &names, &droppable)?;
    let tau = fit.coefficient("W").expect("W column is never dropped");
    Ok((tau, fit))
}

/// Same pipeline as GME-GNN with the balancing statistic left out of the
/// node features.
pub fn gnn_only_estimate(pop: &GroupedPopulation, cfg: &EstimatorConfig) -> Result<EffectEstimate> {
    let cfg = EstimatorConfig {
        include_balance: false,
        ..cfg.clone()
    };
    estimate_full(pop, &cfg).map(|(e, _)| e)
}
