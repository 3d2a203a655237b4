//! Command line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::baselines::mundlak_ols;
use crate::config::{EstimateConfig, SimulateConfig};
use crate::drestimator::{estimate_full, EstimatorConfig, TrainingScope};
use crate::error::{Error, Result};
use crate::exposure::ExposureMapping;
use crate::gnn::{gradient_check, random_instance, GcnConfig, NormalizedAdjacency, Task};
use crate::io::{edges_csv, raw_csv, read_population, summary_csv, write_atomic};
use crate::netgraph::ws_generate;
use crate::simlab::{run_scenario, ScenarioReport};

#[derive(Debug, Parser)]
#[command(name = "gmegnn", version, about = "Generalized Mundlak estimation with GNN nuisances")]
pub struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "GMEGNN_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation campaign from a scenario file.
    Simulate(SimulateArgs),
    /// Estimate an exposure contrast from node and edge CSV files.
    Estimate(EstimateArgs),
    /// Write a Watts–Strogatz edge list.
    GenNetwork(GenNetworkArgs),
    /// Check GCN gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides `scenario.base_seed`.
    #[arg(long, env = "GMEGNN_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, default_value = "any-neighbor")]
    pub exposure: String,
    /// Level pair `t,t'`.
    #[arg(long, default_value = "1,0")]
    pub contrast: String,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, env = "GMEGNN_SEED")]
    pub seed: Option<u64>,
    /// gme-gnn, gnn-only or mundlak.
    #[arg(long, default_value = "gme-gnn")]
    pub method: String,
    /// Optional TOML file with `[gnn]` and `[estimator]` blocks.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "effect.json")]
    pub out: PathBuf,
    /// Directory for text dumps of the trained nuisance models.
    #[arg(long)]
    pub dump_models: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenNetworkArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub p: f64,
    #[arg(long, env = "GMEGNN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "edges.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "0")]
    pub group_id: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, env = "GMEGNN_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command; returns what it would print.
pub fn execute(cli: Cli) -> Result<String> {
    let workers = cli.workers.unwrap_or(1);
    if workers == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::GenNetwork(a) => cmd_gen_network(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    })
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let cfg = SimulateConfig::load(&a.scenario)?;
    let mut plan = cfg.plan()?;
    if let Some(s) = a.seed {
        plan.scenario.base_seed = s;
    }
    if let Some(r) = a.replications {
        plan.scenario.replications = r;
        plan.scenario.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    if !a.out_dir.is_dir() {
        return Err(Error::Config(format!("output directory {} does not exist", a.out_dir.display())));
    }
    let report = run_scenario(&plan)?;
    let summary = summary_csv(&report.summaries)?;
    let raw = raw_csv(&report.rows)?;
    write_atomic(&a.out_dir.join("raw.csv"), &raw)?;
    write_atomic(&a.out_dir.join("summary.csv"), &summary)?;
    Ok(format_table(&report))
}

pub fn format_table(report: &ScenarioReport) -> String {
    let s = &report.scenario;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} (M = {}, N_g in [{}, {}], {} replications, seed {})",
        s.label(),
        s.groups,
        s.ng_min,
        s.ng_max,
        s.replications,
        s.base_seed
    );
    let _ = writeln!(out, "{:<10} {:>9} {:>9} {:>9} {:>9} {:>9}", "method", "MAE", "MSE", "RMSE", "bias", "coverage");
    for m in &report.summaries {
        let cov = m.coverage.map(|c| format!("{c:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}",
            m.method.to_string(),
            m.mae,
            m.mse,
            m.rmse,
            m.mean_bias,
            cov
        );
    }
    let failed: Vec<String> = report
        .summaries
        .iter()
        .filter(|m| m.n_failed > 0)
        .map(|m| format!("{} {}", m.method, m.n_failed))
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(out, "failed replications: {}", failed.join(", "));
    }
    out
}

fn parse_contrast(s: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(Error::Config(format!("contrast {s:?} is not two levels"))),
        },
        _ => Err(Error::Config(format!("contrast {s:?} should look like 1,0"))),
    }
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<String> {
    let file = match &a.config {
        Some(p) => EstimateConfig::load(p)?,
        None => EstimateConfig::default(),
    };
    let mapping: ExposureMapping = a.exposure.parse()?;
    let contrast = parse_contrast(&a.contrast)?;
    let mut gnn = file.gnn.apply(&GcnConfig::default());
    if let Some(s) = a.seed {
        gnn.seed = s;
    }
    let mut cfg = EstimatorConfig {
        mapping,
        contrast,
        gnn,
        scope: file.gnn.scope.unwrap_or(TrainingScope::Pooled),
        ..EstimatorConfig::default()
    };
    file.estimator.apply(&mut cfg);
    if let Some(eta) = a.eta {
        cfg.eta = eta;
    }
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;

    let pop = read_population(&a.nodes, &a.edges)?;

    let json = match a.method.as_str() {
        "gme-gnn" | "gnn-only" => {
            cfg.include_balance = a.method == "gme-gnn";
            let (est, models) = estimate_full(&pop, &cfg)?;
            if let Some(dir) = &a.dump_models {
                std::fs::create_dir_all(dir)?;
                for (role, list) in [("propensity", &models.propensity), ("outcome", &models.outcome)] {
                    for (scope, level, model) in list {
                        let path = dir.join(format!("{role}_{scope}_level{level}.txt"));
                        write_atomic(&path, model.to_text().as_bytes())?;
                    }
                }
            }
            serde_json::to_string_pretty(&est)?
        }
        "mundlak" => {
            let (tau, fit) = mundlak_ols(&pop)?;
            serde_json::to_string_pretty(&serde_json::json!({
                "method": "mundlak",
                "tau_hat": tau,
                "fit": fit,
            }))?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown method {other:?} (gme-gnn, gnn-only or mundlak)"
            )))
        }
    };
    write_atomic(&a.out, format!("{json}\n").as_bytes())?;
    Ok(format!("wrote {}\n", a.out.display()))
}

pub fn cmd_gen_network(a: &GenNetworkArgs) -> Result<String> {
    let g = ws_generate(a.n, a.k, a.p, a.seed)?;
    let bytes = edges_csv([(a.group_id.as_str(), &g)])?;
    write_atomic(&a.out, &bytes)?;
    let s = g.stats();
    let apl = s
        .avg_path_length
        .map(|l| format!("{l:.4}"))
        .unwrap_or_else(|| "undefined".into());
    Ok(format!(
        "nodes {} edges {} avg_degree {:.2} avg_path_length {} components {}\n",
        s.n_nodes, s.n_edges, s.avg_degree, apl, s.n_components
    ))
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<String> {
    let mut out = String::new();
    let mut worst: f64 = 0.0;
    for task in [Task::Regression, Task::Binary] {
        let mut task_worst: f64 = 0.0;
        for k in 0..a.instances {
            let (g, x, y, mask, model) = random_instance(a.seed.wrapping_add(k as u64), task);
            let adj = NormalizedAdjacency::from_graph(&g);
            let err = gradient_check(&model, &adj, &x, &y, &mask, a.step, 1e-6)?;
            task_worst = task_worst.max(err);
        }
        let _ = writeln!(out, "{task:?}: max relative error {task_worst:.3e} over {} instances", a.instances);
        worst = worst.max(task_worst);
    }
    if worst >= 1e-4 {
        return Err(Error::Training(format!("gradient check failed: {worst:.3e} >= 1e-4\n{out}")));
    }
    Ok(out)
}
