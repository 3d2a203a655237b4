use std::path::Path;
use std::process::{Command, Output};

use gmegnn_core::drestimator::{gme_gnn_estimate, EstimatorConfig};
use gmegnn_core::io::{read_population, write_population};
use gmegnn_core::simlab::{generate_replication, Dependence, Heterogeneity, Scenario};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gmegnn"));
    c.env_remove("GMEGNN_SEED").env_remove("GMEGNN_WORKERS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY: &str = r#"
methods = ["gme-gnn", "gnn-only", "mundlak"]

[scenario]
heterogeneity = "low"
dependence = "weak"
groups = 3
ng_min = 20
ng_max = 30
replications = 2
base_seed = 1

[gnn]
epochs = 20
lr = 0.01
"#;

#[test]
fn gen_network_reports_structure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("e.csv");
    let o = run(&["gen-network", "--n", "50", "--k", "4", "--p", "0.1", "--seed", "3", "--out", p(&out)]);
    assert!(o.status.success());
    let line = String::from_utf8(o.stdout).unwrap();
    assert!(line.contains("edges 100") && line.contains("avg_degree 4.00"), "{line}");
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().next().unwrap(), "group_id,i,j");
}

#[test]
fn gen_network_ring_ignores_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    run(&["gen-network", "--n", "20", "--k", "4", "--p", "0", "--seed", "1", "--out", p(&a)]);
    run(&["gen-network", "--n", "20", "--k", "4", "--p", "0", "--seed", "99", "--out", p(&b)]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn gen_network_bad_parameters_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["gen-network", "--n", "4", "--k", "4", "--p", "0.1", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("x.csv").exists());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, TINY.replace("epochs = 20", "epochs = 20\nlayers = 3")).unwrap();
    let o = run(&["simulate", "--scenario", p(&cfg), "--out-dir", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("layers"));
    assert!(!dir.path().join("summary.csv").exists());
}

#[test]
fn simulate_writes_summary_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let o = run(&["simulate", "--scenario", p(&cfg), "--seed", "7", "--out-dir", p(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    for m in ["gme-gnn", "gnn-only", "mundlak"] {
        assert!(summary.lines().any(|l| l.starts_with(m)), "{summary}");
    }
    let raw = std::fs::read_to_string(dir.path().join("raw.csv")).unwrap();
    assert!(raw.starts_with("rep_index,method,tau_hat,tau_star,se,b_bar"));
    assert_eq!(raw.lines().count(), 1 + 2 * 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("RMSE"));
}

fn write_dataset(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let s = Scenario {
        heterogeneity: Heterogeneity::Low,
        dependence: Dependence::Weak,
        groups: 3,
        ng_min: 25,
        ng_max: 35,
        replications: 1,
        base_seed: 5,
    };
    let (pop, _) = generate_replication(&s, 0).unwrap();
    let nodes = dir.join("nodes.csv");
    let edges = dir.join("edges.csv");
    write_population(&pop, &nodes, &edges).unwrap();
    (nodes, edges)
}

#[test]
fn csv_round_trip_matches_in_memory_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = write_dataset(dir.path());
    let s = Scenario {
        heterogeneity: Heterogeneity::Low,
        dependence: Dependence::Weak,
        groups: 3,
        ng_min: 25,
        ng_max: 35,
        replications: 1,
        base_seed: 5,
    };
    let (pop, _) = generate_replication(&s, 0).unwrap();
    assert_eq!(read_population(&nodes, &edges).unwrap(), pop);

    let out = dir.path().join("effect.json");
    let o = run(&[
        "estimate", "--nodes", p(&nodes), "--edges", p(&edges), "--seed", "7", "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();

    let mut cfg = EstimatorConfig::default();
    cfg.gnn.seed = 7;
    let est = gme_gnn_estimate(&pop, &cfg).unwrap();
    assert_eq!(json["tau_hat"].as_f64().unwrap(), est.tau_hat);
    assert_eq!(json["std_error"].as_f64().unwrap(), est.std_error);
    assert_eq!(json["diagnostics"]["groups"].as_array().unwrap().len(), 3);
    assert!(json["diagnostics"]["groups"][0]["bandwidth"].is_u64());
}

#[test]
fn non_binary_treatment_names_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = write_dataset(dir.path());
    let text = std::fs::read_to_string(&nodes).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[4].split(',').map(String::from).collect();
    fields[2] = "2".into();
    lines[4] = fields.join(",");
    std::fs::write(&nodes, lines.join("\n") + "\n").unwrap();
    let out = dir.path().join("effect.json");
    let o = run(&["estimate", "--nodes", p(&nodes), "--edges", p(&edges), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 5") && err.contains("not binary"), "{err}");
    assert!(!out.exists());
}

#[test]
fn unknown_group_in_edges_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = write_dataset(dir.path());
    let mut text = std::fs::read_to_string(&edges).unwrap();
    text.push_str("ghost,0,1\n");
    std::fs::write(&edges, text).unwrap();
    let o = run(&["estimate", "--nodes", p(&nodes), "--edges", p(&edges), "--out", p(&dir.path().join("e.json"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ghost"));
}

#[test]
fn missing_level_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = write_dataset(dir.path());
    // force every unit treated: joint level 2 (treated, no treated neighbor) cannot occur
    let text = std::fs::read_to_string(&nodes).unwrap();
    let rewritten: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(k, l)| {
            if k == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f[2] = "1";
            f.join(",")
        })
        .collect();
    std::fs::write(&nodes, rewritten.join("\n") + "\n").unwrap();
    let o = run(&[
        "estimate", "--nodes", p(&nodes), "--edges", p(&edges), "--exposure", "joint4", "--contrast", "2,0",
        "--out", p(&dir.path().join("e.json")),
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("level 2"));
}

#[test]
fn mundlak_method_writes_fit() {
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = write_dataset(dir.path());
    let out = dir.path().join("m.json");
    let o = run(&["estimate", "--nodes", p(&nodes), "--edges", p(&edges), "--method", "mundlak", "--out", p(&out)]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(json["method"], "mundlak");
    assert!(json["fit"]["coefficients"].as_array().unwrap().len() == 5);
}

#[test]
fn model_dump_and_gradcheck() {
    let dir = tempfile::tempdir().unwrap();
    let (nodes, edges) = write_dataset(dir.path());
    let models = dir.path().join("models");
    let o = run(&[
        "estimate", "--nodes", p(&nodes), "--edges", p(&edges), "--dump-models", p(&models),
        "--out", p(&dir.path().join("e.json")),
    ]);
    assert!(o.status.success());
    let dumps: Vec<_> = std::fs::read_dir(&models).unwrap().collect();
    assert_eq!(dumps.len(), 4);

    let o = run(&["gradcheck", "--instances", "5"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("Binary"));
}
