//! Generalized Mundlak estimation with graph-neural-network nuisances.
//!
//! Units live in groups; each group carries its own undirected network.
//! Between-group confounding is absorbed by a low-dimensional balancing
//! statistic per group, within-group dependence is handled by graph
//! convolutional nuisance models, and inference uses a network HAC
//! variance with a distance bandwidth.
//!
//! Module map:
//!
//! - [`netgraph`]: graphs, Watts–Strogatz generation, BFS, summaries.
//! - [`balance`]: grouped data and the per-group balancing statistic.
//! - [`exposure`]: exposure mappings from assignments to levels.
//! - [`gnn`]: two-layer GCN with manual backprop and Adam.
//! - [`drestimator`]: overlap trimming and the doubly robust estimator.
//! - [`hacinfer`]: bandwidth rule, HAC variance, standard errors.
//! - [`baselines`]: Mundlak OLS and the GNN-only comparator.
//! - [`simlab`]: simulation scenarios, oracle truth, replication campaigns.
//! - [`io`], [`config`], [`cli`]: file formats and the command line.

pub mod balance;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod drestimator;
pub mod error;
pub mod exposure;
pub mod gnn;
pub mod hacinfer;
pub mod io;
pub mod matrix;
pub mod netgraph;
pub mod seed;
pub mod simlab;

pub use error::{Error, Result};
