//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use gmegnn_core::netgraph::Graph;
use rand::Rng;

pub fn random_graph<R: Rng>(rng: &mut R, n: usize, p_edge: f64) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p_edge {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn dense(g: &Graph) -> Vec<Vec<f64>> {
    let n = g.n_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for (i, j) in g.edges() {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    a
}

/// Mean over units of `(w_i, x_i, sum_j A_ij w_j, sum_j A_ij x_j)` by
/// explicit double loops over a dense adjacency matrix.
pub fn brute_balance(g: &Graph, w: &[u8], x: &[Vec<f64>]) -> Vec<f64> {
    let n = g.n_nodes();
    let d = x[0].len();
    let a = dense(g);
    let mut out = vec![0.0; 2 + 2 * d];
    for i in 0..n {
        out[0] += f64::from(w[i]);
        for k in 0..d {
            out[1 + k] += x[i][k];
        }
        for j in 0..n {
            out[1 + d] += a[i][j] * f64::from(w[j]);
            for k in 0..d {
                out[2 + d + k] += a[i][j] * x[j][k];
            }
        }
    }
    out.iter().map(|v| v / n as f64).collect()
}

/// All-pairs shortest paths by Floyd–Warshall.
pub fn floyd(g: &Graph) -> Vec<Vec<Option<usize>>> {
    let n = g.n_nodes();
    let mut d = vec![vec![None; n]; n];
    for i in 0..n {
        d[i][i] = Some(0);
    }
    for (i, j) in g.edges() {
        d[i][j] = Some(1);
        d[j][i] = Some(1);
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (d[i][m], d[m][j]) {
                    if d[i][j].is_none_or(|c| a + b < c) {
                        d[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    d
}

/// One group's HAC term `N^{-1} sum_{i,j} B_i e_i B_j e_j 1{dist <= b}`
/// from a full distance matrix.
pub fn brute_group_hac(g: &Graph, effects: &[f64], flags: &[bool], tau: f64, b: usize) -> f64 {
    let d = floyd(g);
    let n = g.n_nodes();
    let e: Vec<f64> = (0..n).map(|i| if flags[i] { effects[i] - tau } else { 0.0 }).collect();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if d[i][j].is_some_and(|v| v <= b) {
                s += e[i] * e[j];
            }
        }
    }
    s / n as f64
}

/// Least squares through the normal equations, solved by Gaussian
/// elimination with partial pivoting.
pub fn brute_ols(design: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = design[0].len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in design.iter().zip(y) {
        for r in 0..p {
            for c in 0..p {
                a[r][c] += row[r] * row[c];
            }
            a[r][p] += row[r] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..p {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=p {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..p).map(|r| a[r][p] / a[r][r]).collect()
}
