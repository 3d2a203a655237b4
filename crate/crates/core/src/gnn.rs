//! Two-layer graph convolutional network with hand-written backprop and
//! full-batch Adam.
//!
//! ```text
//! H1  = ReLU(Â X W1 + b1)          (inverted dropout on H1 while training)
//! z   = Â H1 w2 + b2
//! out = z            regression
//!       sigmoid(z)   binary
//! ```
//!
//! `Â = D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
//! Losses are averaged over masked-in units: `½ (z - y)²` for regression and
//! the logistic loss `softplus(z) - y z` on logits for binary targets.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::netgraph::Graph;
use crate::seed::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnConfig {
    pub hidden_channels: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub task: Task,
    pub seed: u64,
    /// Multiplier on the Glorot-uniform bound.
    pub weight_init_scale: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden_channels: 16,
            dropout_rate: 0.1,
            learning_rate: 0.001,
            epochs: 300,
            task: Task::Regression,
            seed: 0,
            weight_init_scale: 1.0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_channels == 0 {
            return Err(Error::Parameter("hidden_channels must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if !(self.weight_init_scale >= 0.0 && self.weight_init_scale.is_finite()) {
            return Err(Error::Parameter("weight_init_scale must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn with_task(&self, task: Task) -> Self {
        GcnConfig { task, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        GcnConfig { seed, ..self.clone() }
    }
}

/// Symmetric normalized adjacency with self-loops, stored in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph) -> Self {
        let n = g.n_nodes();
        let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::with_capacity(n + 2 * g.n_edges());
        let mut vals = Vec::with_capacity(n + 2 * g.n_edges());
        row_ptr.push(0);
        for i in 0..n {
            let nbrs = g.neighbors(i);
            let split = nbrs.partition_point(|&j| j < i);
            let cols = nbrs[..split].iter().copied().chain(std::iter::once(i)).chain(nbrs[split..].iter().copied());
            for j in cols {
                col_idx.push(j);
                vals.push(inv_sqrt[i] * inv_sqrt[j]);
            }
            row_ptr.push(col_idx.len());
        }
        NormalizedAdjacency { row_ptr, col_idx, vals }
    }

    /// Disjoint union of several graphs' operators, in order.
    pub fn block_diagonal(blocks: &[NormalizedAdjacency]) -> Self {
        let mut row_ptr = vec![0];
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        let mut offset = 0;
        for b in blocks {
            for r in 0..b.n() {
                for k in b.row_ptr[r]..b.row_ptr[r + 1] {
                    col_idx.push(b.col_idx[k] + offset);
                    vals.push(b.vals[k]);
                }
                row_ptr.push(col_idx.len());
            }
            offset += b.n();
        }
        NormalizedAdjacency { row_ptr, col_idx, vals }
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m.set(i, self.col_idx[k], self.vals[k]);
            }
        }
        m
    }

    /// `Â * m`.
    pub fn apply(&self, m: &Matrix) -> Matrix {
        assert_eq!(m.rows(), self.n(), "adjacency/feature rows");
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for i in 0..self.n() {
            let orow = out.row_mut(i);
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let a = self.vals[k];
                for (o, &v) in orow.iter_mut().zip(m.row(self.col_idx[k])) {
                    *o += a * v;
                }
            }
        }
        out
    }

    /// `Â * v`.
    pub fn apply_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|k| self.vals[k] * v[self.col_idx[k]])
                    .sum()
            })
            .collect()
    }
}

/// GCN parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModel {
    /// `f x h`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `h x 1`.
    pub w2: Vec<f64>,
    pub b2: f64,
    pub task: Task,
}

impl GcnModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(in_features: usize, config: &GcnConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = config.hidden_channels;
        let s1 = config.weight_init_scale * (6.0 / (in_features + h) as f64).sqrt();
        let s2 = config.weight_init_scale * (6.0 / (h + 1) as f64).sqrt();
        let mut draw = |s: f64| if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
        let w1 = Matrix::from_vec(in_features, h, (0..in_features * h).map(|_| draw(s1)).collect());
        let w2 = (0..h).map(|_| draw(s2)).collect();
        GcnModel {
            w1,
            b1: vec![0.0; h],
            w2,
            b2: 0.0,
            task: config.task,
        }
    }

    pub fn zeros(in_features: usize, hidden: usize, task: Task) -> Self {
        GcnModel {
            w1: Matrix::zeros(in_features, hidden),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
            task,
        }
    }

    pub fn in_features(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.cols()
    }

    pub fn n_params(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.len() + 1
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(&self.w2);
        v.push(self.b2);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter length");
        let nw1 = self.w1.as_slice().len();
        let h = self.b1.len();
        self.w1.as_mut_slice().copy_from_slice(&flat[..nw1]);
        self.b1.copy_from_slice(&flat[nw1..nw1 + h]);
        self.w2.copy_from_slice(&flat[nw1 + h..nw1 + 2 * h]);
        self.b2 = flat[nw1 + 2 * h];
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    /// Plain-text dump: a header line, then one `name rows cols` line per
    /// array followed by its values row by row.
    pub fn to_text(&self) -> String {
        let task = match self.task {
            Task::Regression => "regression",
            Task::Binary => "binary",
        };
        let mut s = format!("gcn task={task} in={} hidden={}\n", self.in_features(), self.hidden());
        let mut block = |name: &str, rows: usize, cols: usize, vals: &[f64]| {
            let _ = writeln!(s, "{name} {rows} {cols}");
            for r in 0..rows {
                let line: Vec<String> = vals[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        };
        block("w1", self.in_features(), self.hidden(), self.w1.as_slice());
        block("b1", 1, self.hidden(), &self.b1);
        block("w2", self.hidden(), 1, &self.w2);
        block("b2", 1, 1, &[self.b2]);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::schema("model dump", m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let mut task = None;
        for tok in header.split_whitespace().skip(1) {
            if let Some(t) = tok.strip_prefix("task=") {
                task = Some(match t {
                    "regression" => Task::Regression,
                    "binary" => Task::Binary,
                    _ => return Err(bad("unknown task")),
                });
            }
        }
        let task = task.ok_or_else(|| bad("missing task"))?;
        let mut arrays = Vec::new();
        while let Some(head) = lines.next() {
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(bad("malformed array header"));
            }
            let rows: usize = parts[1].parse().map_err(|_| bad("bad row count"))?;
            let cols: usize = parts[2].parse().map_err(|_| bad("bad column count"))?;
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines.next().ok_or_else(|| bad("truncated array"))?;
                for v in line.split_whitespace() {
                    vals.push(v.parse::<f64>().map_err(|_| bad("bad number"))?);
                }
            }
            if vals.len() != rows * cols {
                return Err(bad("array size does not match its header"));
            }
            arrays.push((parts[0].to_string(), rows, cols, vals));
        }
        let [w1, b1, w2, b2]: [_; 4] = arrays.try_into().map_err(|_| bad("expected four arrays"))?;
        if w1.0 != "w1" || b1.0 != "b1" || w2.0 != "w2" || b2.0 != "b2" {
            return Err(bad("arrays out of order"));
        }
        if b1.3.len() != w1.2 || w2.3.len() != w1.2 || b2.3.len() != 1 {
            return Err(bad("inconsistent shapes"));
        }
        Ok(GcnModel {
            w1: Matrix::from_vec(w1.1, w1.2, w1.3),
            b1: b1.3,
            w2: w2.3,
            b2: b2.3[0],
            task,
        })
    }
}

/// Dropout mode for a forward pass.
pub enum Dropout<'a> {
    Off,
    On { rate: f64, rng: &'a mut ChaCha8Rng },
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn check_shapes(model: &GcnModel, adj: &NormalizedAdjacency, features: &Matrix) -> Result<()> {
    if features.cols() != model.in_features() {
        return Err(Error::Dimension(format!(
            "features have {} columns, model expects {}",
            features.cols(),
            model.in_features()
        )));
    }
    if features.rows() != adj.n() {
        return Err(Error::Dimension(format!(
            "features have {} rows, adjacency has {} nodes",
            features.rows(),
            adj.n()
        )));
    }
    Ok(())
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect(),
    )
}

/// Cached pieces of a forward pass.
struct Pass {
    /// Pre-activation of the hidden layer.
    pre: Matrix,
    /// Hidden activations after ReLU and dropout.
    hidden: Matrix,
    logits: Vec<f64>,
}

fn pass(model: &GcnModel, adj: &NormalizedAdjacency, ax: &Matrix, mask: Option<&Matrix>) -> Pass {
    let mut pre = ax.matmul(&model.w1);
    for r in 0..pre.rows() {
        for (v, b) in pre.row_mut(r).iter_mut().zip(&model.b1) {
            *v += b;
        }
    }
    let mut hidden = pre.clone();
    for (i, v) in hidden.as_mut_slice().iter_mut().enumerate() {
        *v = v.max(0.0);
        if let Some(m) = mask {
            *v *= m.as_slice()[i];
        }
    }
    let u: Vec<f64> = (0..hidden.rows())
        .map(|r| hidden.row(r).iter().zip(&model.w2).map(|(a, b)| a * b).sum())
        .collect();
    let logits = adj.apply_vec(&u).into_iter().map(|z| z + model.b2).collect();
    Pass { pre, hidden, logits }
}

/// Raw network output `z` (pre-sigmoid for binary models).
pub fn logits(model: &GcnModel, adj: &NormalizedAdjacency, features: &Matrix, dropout: Dropout<'_>) -> Result<Vec<f64>> {
    check_shapes(model, adj, features)?;
    let ax = adj.apply(features);
    let mask = match dropout {
        Dropout::Off => None,
        Dropout::On { rate, rng } => Some(dropout_mask(ax.rows(), model.hidden(), rate, rng)),
    };
    Ok(pass(model, adj, &ax, mask.as_ref()).logits)
}

/// Model output: identity for regression, sigmoid for binary.
pub fn forward(model: &GcnModel, adj: &NormalizedAdjacency, features: &Matrix, dropout: Dropout<'_>) -> Result<Vec<f64>> {
    let z = logits(model, adj, features, dropout)?;
    Ok(match model.task {
        Task::Regression => z,
        Task::Binary => z.into_iter().map(sigmoid).collect(),
    })
}

fn loss_grad_cached(
    model: &GcnModel,
    adj: &NormalizedAdjacency,
    ax: &Matrix,
    targets: &[f64],
    mask: &[bool],
    drop: Option<&Matrix>,
) -> (f64, Vec<f64>) {
    let p = pass(model, adj, ax, drop);
    let m = mask.iter().filter(|&&b| b).count() as f64;
    let mut loss = 0.0;
    let mut gz = vec![0.0; targets.len()];
    for i in 0..targets.len() {
        if !mask[i] {
            continue;
        }
        let (z, y) = (p.logits[i], targets[i]);
        match model.task {
            Task::Regression => {
                loss += 0.5 * (z - y).powi(2);
                gz[i] = (z - y) / m;
            }
            Task::Binary => {
                loss += softplus(z) - y * z;
                gz[i] = (sigmoid(z) - y) / m;
            }
        }
    }
    loss /= m;

    let h = model.hidden();
    let db2: f64 = gz.iter().sum();
    // Â is symmetric, so Â^T g = Â g
    let gu = adj.apply_vec(&gz);
    let mut dw2 = vec![0.0; h];
    let mut gpre = Matrix::zeros(p.hidden.rows(), h);
    for r in 0..p.hidden.rows() {
        let g = gu[r];
        if g == 0.0 {
            continue;
        }
        let hid = p.hidden.row(r);
        let pre = p.pre.row(r);
        let out = gpre.row_mut(r);
        for c in 0..h {
            dw2[c] += hid[c] * g;
            if pre[c] > 0.0 {
                let scale = drop.map_or(1.0, |d| d.get(r, c));
                out[c] = g * model.w2[c] * scale;
            }
        }
    }
    let mut db1 = vec![0.0; h];
    for r in 0..gpre.rows() {
        for (a, v) in db1.iter_mut().zip(gpre.row(r)) {
            *a += v;
        }
    }
    let dw1 = ax.t_matmul(&gpre);

    let mut grad = Vec::with_capacity(model.n_params());
    grad.extend_from_slice(dw1.as_slice());
    grad.extend_from_slice(&db1);
    grad.extend_from_slice(&dw2);
    grad.push(db2);
    (loss, grad)
}

fn check_targets(task: Task, n: usize, targets: &[f64], mask: &[bool]) -> Result<()> {
    if targets.len() != n || mask.len() != n {
        return Err(Error::Dimension(format!(
            "{n} nodes but {} targets and {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&b| b) {
        return Err(Error::Training("every unit is masked out".into()));
    }
    if task == Task::Binary && targets.iter().zip(mask).any(|(&y, &m)| m && y != 0.0 && y != 1.0) {
        return Err(Error::Training("binary targets must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean masked loss and its gradient with respect to the flat parameters
/// (layout of [`GcnModel::to_flat`]). `dropout_mask`, when given, holds the
/// inverted-dropout multipliers applied to the hidden layer.
pub fn loss_and_grad(
    model: &GcnModel,
    adj: &NormalizedAdjacency,
    features: &Matrix,
    targets: &[f64],
    mask: &[bool],
    dropout_mask: Option<&Matrix>,
) -> Result<(f64, Vec<f64>)> {
    check_shapes(model, adj, features)?;
    check_targets(model.task, adj.n(), targets, mask)?;
    let ax = adj.apply(features);
    Ok(loss_grad_cached(model, adj, &ax, targets, mask, dropout_mask))
}

/// Full-batch Adam (β1 = 0.9, β2 = 0.999, ε = 1e-8); returns the model after
/// the final epoch.
pub fn train(
    config: &GcnConfig,
    adj: &NormalizedAdjacency,
    features: &Matrix,
    targets: &[f64],
    mask: &[bool],
) -> Result<GcnModel> {
    config.validate()?;
    if features.rows() != adj.n() {
        return Err(Error::Dimension(format!(
            "features have {} rows, adjacency has {} nodes",
            features.rows(),
            adj.n()
        )));
    }
    check_targets(config.task, adj.n(), targets, mask)?;

    let mut rng = rng_from(config.seed);
    let mut model = GcnModel::init(features.cols(), config, &mut rng);
    let ax = adj.apply(features);

    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut params = model.to_flat();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let (mut b1t, mut b2t) = (1.0, 1.0);

    for epoch in 0..config.epochs {
        let drop = (config.dropout_rate > 0.0)
            .then(|| dropout_mask(ax.rows(), config.hidden_channels, config.dropout_rate, &mut rng));
        let (loss, grad) = loss_grad_cached(&model, adj, &ax, targets, mask, drop.as_ref());
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        b1t *= BETA1;
        b2t *= BETA2;
        for k in 0..params.len() {
            m1[k] = BETA1 * m1[k] + (1.0 - BETA1) * grad[k];
            m2[k] = BETA2 * m2[k] + (1.0 - BETA2) * grad[k] * grad[k];
            let mhat = m1[k] / (1.0 - b1t);
            let vhat = m2[k] / (1.0 - b2t);
            params[k] -= config.learning_rate * mhat / (vhat.sqrt() + EPS);
        }
        model.set_flat(&params);
    }
    if !model.is_finite() {
        return Err(Error::Divergence { epoch: config.epochs });
    }
    Ok(model)
}

/// Fitted generalized propensity for one level.
#[derive(Debug, Clone)]
pub struct PropensityFit {
    pub probs: Vec<f64>,
    pub model: GcnModel,
    /// Level absent from the training units; the fit is degenerate.
    pub degenerate: bool,
}

/// Fitted outcome regression for one level, predicted for every unit.
#[derive(Debug, Clone)]
pub struct OutcomeFit {
    pub mean: Vec<f64>,
    pub model: GcnModel,
}

/// One-vs-rest logistic fit of `1{T_i = level}` on every unit.
pub fn fit_propensity_on(
    adj: &NormalizedAdjacency,
    features: &Matrix,
    levels: &[usize],
    level: usize,
    config: &GcnConfig,
) -> Result<PropensityFit> {
    let targets: Vec<f64> = levels.iter().map(|&l| if l == level { 1.0 } else { 0.0 }).collect();
    let degenerate = !targets.contains(&1.0);
    let mask = vec![true; levels.len()];
    let cfg = config.with_task(Task::Binary);
    let model = train(&cfg, adj, features, &targets, &mask)?;
    let probs = forward(&model, adj, features, Dropout::Off)?;
    Ok(PropensityFit {
        probs,
        model,
        degenerate,
    })
}

/// Squared-error fit on units with `T_i = level`, predictions for all units.
/// Targets are standardized over the training units and predictions mapped
/// back to the outcome scale.
pub fn fit_outcome_on(
    adj: &NormalizedAdjacency,
    features: &Matrix,
    levels: &[usize],
    y: &[f64],
    level: usize,
    config: &GcnConfig,
) -> Result<OutcomeFit> {
    if y.len() != levels.len() {
        return Err(Error::Dimension("outcomes and levels differ in length".into()));
    }
    let mask: Vec<bool> = levels.iter().map(|&l| l == level).collect();
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::MissingLevel { level, group: None });
    }
    let mean = y.iter().zip(&mask).filter(|(_, &b)| b).map(|(v, _)| v).sum::<f64>() / m as f64;
    let var = y.iter().zip(&mask).filter(|(_, &b)| b).map(|(v, _)| (v - mean).powi(2)).sum::<f64>() / m as f64;
    let cfg = config.with_task(Task::Regression);
    if var <= 1e-24 {
        // constant outcome: the zero model predicts the mean exactly
        cfg.validate()?;
        return Ok(OutcomeFit {
            mean: vec![mean; y.len()],
            model: GcnModel::zeros(features.cols(), cfg.hidden_channels, Task::Regression),
        });
    }
    let sd = var.sqrt();
    let targets: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();
    let model = train(&cfg, adj, features, &targets, &mask)?;
    let pred = forward(&model, adj, features, Dropout::Off)?;
    Ok(OutcomeFit {
        mean: pred.into_iter().map(|z| mean + sd * z).collect(),
        model,
    })
}

pub fn fit_propensity(
    group: &crate::balance::GroupData,
    features: &Matrix,
    assignment: &crate::exposure::ExposureAssignment,
    level: usize,
    config: &GcnConfig,
) -> Result<PropensityFit> {
    let adj = NormalizedAdjacency::from_graph(&group.graph);
    fit_propensity_on(&adj, features, &assignment.levels, level, config)
}

pub fn fit_outcome(
    group: &crate::balance::GroupData,
    features: &Matrix,
    assignment: &crate::exposure::ExposureAssignment,
    level: usize,
    config: &GcnConfig,
) -> Result<OutcomeFit> {
    let adj = NormalizedAdjacency::from_graph(&group.graph);
    fit_outcome_on(&adj, features, &assignment.levels, &group.y, level, config)
        .map_err(|e| Error::in_group(&group.group_id, e))
}

/// Largest elementwise relative error between the analytic gradient and
/// central finite differences with step `h`. Errors are measured as
/// `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    model: &GcnModel,
    adj: &NormalizedAdjacency,
    features: &Matrix,
    targets: &[f64],
    mask: &[bool],
    h: f64,
    floor: f64,
) -> Result<f64> {
    let (_, analytic) = loss_and_grad(model, adj, features, targets, mask, None)?;
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_flat(&p);
        let (lp, _) = loss_and_grad(&probe, adj, features, targets, mask, None)?;
        p[k] = base[k] - h;
        probe.set_flat(&p);
        let (lm, _) = loss_and_grad(&probe, adj, features, targets, mask, None)?;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[k].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[k] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// A random small problem for gradient checks: graph, features, targets,
/// mask and a model with perturbed (nonzero) biases.
pub fn random_instance(seed: u64, task: Task) -> (Graph, Matrix, Vec<f64>, Vec<bool>, GcnModel) {
    let mut rng = rng_from(seed);
    let n = rng.random_range(3..=12usize);
    let f = rng.random_range(1..=4usize);
    let h = rng.random_range(1..=8usize);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < 0.3 {
                edges.push((i, j));
            }
        }
    }
    let g = Graph::from_edges(n, &edges).expect("simple graph");
    let x = Matrix::from_vec(n, f, (0..n * f).map(|_| rng.random_range(-2.0..2.0)).collect());
    let targets = (0..n)
        .map(|_| match task {
            Task::Regression => rng.random_range(-3.0..3.0),
            Task::Binary => f64::from(u8::from(rng.random::<bool>())),
        })
        .collect();
    let mut mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.8).collect();
    mask[0] = true;
    let cfg = GcnConfig {
        hidden_channels: h,
        task,
        ..GcnConfig::default()
    };
    let mut model = GcnModel::init(f, &cfg, &mut rng);
    for b in &mut model.b1 {
        *b = rng.random_range(-0.5..0.5);
    }
    model.b2 = rng.random_range(-0.5..0.5);
    (g, x, targets, mask, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_cases() {
        let one = NormalizedAdjacency::from_graph(&Graph::empty(1));
        assert_eq!(one.to_dense().as_slice(), &[1.0]);

        let two = NormalizedAdjacency::from_graph(&Graph::path(2));
        for v in two.to_dense().as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }

        let e = NormalizedAdjacency::from_graph(&Graph::empty(4)).to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(e.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn normalized_adjacency_properties() {
        let g = crate::netgraph::ws_generate(30, 4, 0.3, 5).unwrap();
        let a = NormalizedAdjacency::from_graph(&g);
        for i in 0..30 {
            assert!(a.get(i, i) > 0.0);
            for j in 0..30 {
                assert_eq!(a.get(i, j), a.get(j, i));
                assert!(a.get(i, j) >= 0.0);
                let expect = if i == j || g.has_edge(i, j) {
                    1.0 / (((g.degree(i) + 1) * (g.degree(j) + 1)) as f64).sqrt()
                } else {
                    0.0
                };
                assert!((a.get(i, j) - expect).abs() < 1e-15);
            }
        }
        let bd = NormalizedAdjacency::block_diagonal(&[a.clone(), NormalizedAdjacency::from_graph(&Graph::path(2))]);
        assert_eq!(bd.n(), 32);
        assert!((bd.get(30, 31) - 0.5).abs() < 1e-15);
        assert_eq!(bd.get(3, 4), a.get(3, 4));
        assert_eq!(bd.get(0, 31), 0.0);
    }

    #[test]
    fn zero_weight_outputs() {
        let g = Graph::path(4);
        let adj = NormalizedAdjacency::from_graph(&g);
        let x = Matrix::from_vec(4, 2, vec![1.0, -1.0, 0.5, 2.0, 3.0, 0.0, -2.0, 1.0]);
        let bin = GcnModel::zeros(2, 3, Task::Binary);
        assert!(forward(&bin, &adj, &x, Dropout::Off).unwrap().iter().all(|&p| p == 0.5));
        let mut reg = GcnModel::zeros(2, 3, Task::Regression);
        reg.b2 = 1.25;
        assert!(forward(&reg, &adj, &x, Dropout::Off).unwrap().iter().all(|&p| p == 1.25));
        assert!(matches!(
            forward(&GcnModel::zeros(3, 3, Task::Binary), &adj, &x, Dropout::Off),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn permutation_equivariance() {
        let (g, x, _, _, model) = random_instance(11, Task::Regression);
        let n = g.n_nodes();
        let perm: Vec<usize> = (0..n).map(|i| (i * 5 + 3) % n).collect();
        // (i*5+3) mod n is a bijection only when gcd(5, n) = 1
        let mut seen = vec![false; n];
        perm.iter().for_each(|&p| seen[p] = true);
        let perm: Vec<usize> = if seen.iter().all(|&s| s) { perm } else { (0..n).rev().collect() };
        let gp = g.relabel(&perm).unwrap();
        let mut xp = Matrix::zeros(n, x.cols());
        for i in 0..n {
            xp.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let out = forward(&model, &NormalizedAdjacency::from_graph(&g), &x, Dropout::Off).unwrap();
        let outp = forward(&model, &NormalizedAdjacency::from_graph(&gp), &xp, Dropout::Off).unwrap();
        for i in 0..n {
            assert!((out[i] - outp[perm[i]]).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_off_is_bit_identical() {
        let (g, x, _, _, model) = random_instance(3, Task::Binary);
        let adj = NormalizedAdjacency::from_graph(&g);
        let a = forward(&model, &adj, &x, Dropout::Off).unwrap();
        let b = forward(&model, &adj, &x, Dropout::Off).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
        let mut rng = rng_from(1);
        let c = forward(&model, &adj, &x, Dropout::On { rate: 0.5, rng: &mut rng }).unwrap();
        assert!(c.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            for task in [Task::Regression, Task::Binary] {
                let (g, x, y, mask, model) = random_instance(seed, task);
                let adj = NormalizedAdjacency::from_graph(&g);
                let err = gradient_check(&model, &adj, &x, &y, &mask, 1e-5, 1e-6).unwrap();
                assert!(err < 1e-4, "seed {seed} {task:?}: {err}");
            }
        }
    }

    #[test]
    fn dropout_mask_gradient() {
        // with a fixed mask the loss is a smooth function again
        let (g, x, y, mask, model) = random_instance(4, Task::Regression);
        let adj = NormalizedAdjacency::from_graph(&g);
        let drop = dropout_mask(g.n_nodes(), model.hidden(), 0.3, &mut rng_from(9));
        let (_, grad) = loss_and_grad(&model, &adj, &x, &y, &mask, Some(&drop)).unwrap();
        let base = model.to_flat();
        let mut probe = model.clone();
        for k in 0..base.len() {
            let mut p = base.clone();
            p[k] += 1e-5;
            probe.set_flat(&p);
            let lp = loss_and_grad(&probe, &adj, &x, &y, &mask, Some(&drop)).unwrap().0;
            p[k] -= 2e-5;
            probe.set_flat(&p);
            let lm = loss_and_grad(&probe, &adj, &x, &y, &mask, Some(&drop)).unwrap().0;
            let num = (lp - lm) / 2e-5;
            assert!((num - grad[k]).abs() <= 1e-4 * num.abs().max(grad[k].abs()).max(1e-6));
        }
    }

    #[test]
    fn constant_regression_target() {
        let g = crate::netgraph::ws_generate(20, 4, 0.2, 1).unwrap();
        let adj = NormalizedAdjacency::from_graph(&g);
        let x = Matrix::from_vec(20, 1, (0..20).map(|i| (i as f64 / 10.0).sin()).collect());
        let cfg = GcnConfig {
            learning_rate: 0.01,
            epochs: 8000,
            dropout_rate: 0.0,
            ..GcnConfig::default()
        };
        let model = train(&cfg, &adj, &x, &[2.5; 20], &[true; 20]).unwrap();
        let out = forward(&model, &adj, &x, Dropout::Off).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-3), "{out:?}");
    }

    #[test]
    fn all_positive_binary_target() {
        let g = crate::netgraph::ws_generate(20, 4, 0.2, 1).unwrap();
        let adj = NormalizedAdjacency::from_graph(&g);
        let x = Matrix::from_vec(20, 1, (0..20).map(|i| i as f64 / 20.0).collect());
        let cfg = GcnConfig {
            learning_rate: 0.01,
            task: Task::Binary,
            ..GcnConfig::default()
        };
        let model = train(&cfg, &adj, &x, &[1.0; 20], &[true; 20]).unwrap();
        assert!(forward(&model, &adj, &x, Dropout::Off).unwrap().iter().all(|&p| p >= 0.9));
    }

    #[test]
    fn training_is_deterministic_and_validates() {
        let (g, x, y, mask, _) = random_instance(8, Task::Regression);
        let adj = NormalizedAdjacency::from_graph(&g);
        let cfg = GcnConfig {
            epochs: 50,
            seed: 17,
            ..GcnConfig::default()
        };
        let a = train(&cfg, &adj, &x, &y, &mask).unwrap();
        let b = train(&cfg, &adj, &x, &y, &mask).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            train(&cfg, &adj, &x, &y, &vec![false; y.len()]),
            Err(Error::Training(_))
        ));
        let huge = GcnConfig {
            learning_rate: 1e300,
            ..cfg.clone()
        };
        let big_y: Vec<f64> = y.iter().map(|v| v * 1e300).collect();
        assert!(matches!(train(&huge, &adj, &x, &big_y, &mask), Err(Error::Divergence { .. })));
    }

    #[test]
    fn propensity_and_outcome_fits() {
        let g = crate::netgraph::ws_generate(24, 4, 0.1, 2).unwrap();
        let adj = NormalizedAdjacency::from_graph(&g);
        let x = Matrix::from_vec(24, 1, (0..24).map(|i| (i % 5) as f64 - 2.0).collect());
        let cfg = GcnConfig {
            learning_rate: 0.01,
            ..GcnConfig::default()
        };

        let all_one = vec![1usize; 24];
        let p = fit_propensity_on(&adj, &x, &all_one, 1, &cfg).unwrap();
        assert!(!p.degenerate);
        assert!(p.probs.iter().all(|&v| v >= 0.9 && v < 1.0));

        let levels: Vec<usize> = (0..24).map(|i| i % 3).collect();
        let fits: Vec<Vec<f64>> = (0..3).map(|t| fit_propensity_on(&adj, &x, &levels, t, &cfg).unwrap().probs).collect();
        assert!(fits.iter().flatten().all(|&v| v > 0.0 && v < 1.0));
        let off_by = (0..24).map(|i| (fits[0][i] + fits[1][i] + fits[2][i] - 1.0).abs()).fold(0.0, f64::max);
        assert!(off_by > 1e-6, "one-vs-rest fits are not renormalized");

        let absent = fit_propensity_on(&adj, &x, &vec![0; 24], 1, &cfg).unwrap();
        assert!(absent.degenerate);

        let o = fit_outcome_on(&adj, &x, &all_one, &[4.0; 24], 1, &cfg).unwrap();
        assert!(o.mean.iter().all(|v| (v - 4.0).abs() < 1e-9));

        let mut single = vec![0usize; 24];
        single[5] = 1;
        let y: Vec<f64> = (0..24).map(|i| i as f64).collect();
        let s = fit_outcome_on(&adj, &x, &single, &y, 1, &cfg).unwrap();
        assert!(s.mean.iter().all(|v| v.is_finite()));

        assert!(matches!(
            fit_outcome_on(&adj, &x, &vec![0; 24], &y, 1, &cfg),
            Err(Error::MissingLevel { .. })
        ));
    }

    #[test]
    fn outcome_fit_beats_variance_on_linear_data() {
        let mut rng = rng_from(21);
        let n = 200;
        let g = crate::netgraph::ws_generate(n, 8, 0.1, 4).unwrap();
        let adj = NormalizedAdjacency::from_graph(&g);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = xs.iter().map(|x| 1.5 * x + 0.3 * rng.random_range(-1.0..1.0)).collect();
        let x = Matrix::from_vec(n, 1, xs);
        let levels: Vec<usize> = (0..n).map(|i| usize::from(i % 4 != 0)).collect();
        let cfg = GcnConfig {
            learning_rate: 0.005,
            epochs: 500,
            ..GcnConfig::default()
        };
        let fit = fit_outcome_on(&adj, &x, &levels, &y, 1, &cfg).unwrap();
        let held: Vec<usize> = (0..n).filter(|&i| levels[i] == 0).collect();
        let mse = held.iter().map(|&i| (fit.mean[i] - y[i]).powi(2)).sum::<f64>() / held.len() as f64;
        let mean = held.iter().map(|&i| y[i]).sum::<f64>() / held.len() as f64;
        let var = held.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>() / held.len() as f64;
        assert!(mse < var, "held-out mse {mse} vs variance {var}");
    }

    #[test]
    fn model_text_round_trip() {
        let (_, _, _, _, model) = random_instance(2, Task::Binary);
        let back = GcnModel::from_text(&model.to_text()).unwrap();
        assert_eq!(back, model);
        assert!(GcnModel::from_text("gcn task=binary\nw1 1 1\n").is_err());
    }
}
