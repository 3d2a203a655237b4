//! CSV formats for grouped network data and simulation output, plus
//! atomic file writes.
//!
//! Edge file: header `group_id,i,j`, one row per undirected edge.
//! Node file: header `group_id,node_id,W,Y,X1,...,Xd`; node ids within a
//! group are `0..N_g` in any order.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::balance::{GroupData, GroupedPopulation};
use crate::error::{Error, Result};
use crate::netgraph::Graph;
use crate::simlab::{MetricsSummary, RawRow};

/// 17 significant digits; parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// Writes to a temporary sibling and renames it into place, so a failed
/// run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn location(path: &Path, rec: &csv::StringRecord) -> String {
    let line = rec.position().map(|p| p.line()).unwrap_or(0);
    format!("{} line {line}", path.display())
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::schema(path.display().to_string(), format!("missing column {name}")))
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, path: &Path) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse()
        .map_err(|_| Error::schema(location(path, rec), format!("{name} = {raw:?} is not valid")))
}

/// Edge lists keyed by group id.
pub fn read_edges(path: &Path) -> Result<BTreeMap<String, Vec<(usize, usize)>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let (cg, ci, cj) = (
        column(&headers, "group_id", path)?,
        column(&headers, "i", path)?,
        column(&headers, "j", path)?,
    );
    let mut out: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    let mut seen: HashMap<(String, usize, usize), u64> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let g = rec.get(cg).unwrap_or("").trim().to_string();
        let i: usize = parse_field(&rec, ci, "i", path)?;
        let j: usize = parse_field(&rec, cj, "j", path)?;
        if i == j {
            return Err(Error::schema(location(path, &rec), format!("self-loop on node {i}")));
        }
        let key = (g.clone(), i.min(j), i.max(j));
        if let Some(first) = seen.get(&key) {
            return Err(Error::schema(
                location(path, &rec),
                format!("edge ({i}, {j}) in group {g} duplicates line {first}"),
            ));
        }
        seen.insert(key, rec.position().map(|p| p.line()).unwrap_or(0));
        out.entry(g).or_default().push((i, j));
    }
    Ok(out)
}

/// Node rows of one group, in file order.
#[derive(Debug, Clone, Default)]
pub struct NodeTable {
    pub node_id: Vec<usize>,
    pub w: Vec<u8>,
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub lines: Vec<u64>,
}

/// Node tables in order of first appearance.
pub fn read_nodes(path: &Path) -> Result<Vec<(String, NodeTable)>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cg = column(&headers, "group_id", path)?;
    let cn = column(&headers, "node_id", path)?;
    let cw = column(&headers, "W", path)?;
    let cy = column(&headers, "Y", path)?;
    let mut cx = Vec::new();
    while let Ok(c) = column(&headers, &format!("X{}", cx.len() + 1), path) {
        cx.push(c);
    }
    if cx.is_empty() {
        return Err(Error::schema(path.display().to_string(), "missing column X1"));
    }

    let mut order: Vec<(String, NodeTable)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let g = rec.get(cg).unwrap_or("").trim().to_string();
        if g.is_empty() {
            return Err(Error::schema(location(path, &rec), "empty group_id"));
        }
        let node: usize = parse_field(&rec, cn, "node_id", path)?;
        let w: u8 = match rec.get(cw).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::schema(
                    location(path, &rec),
                    format!("W = {:?} is not binary", other.unwrap_or("")),
                ))
            }
        };
        let y: f64 = parse_field(&rec, cy, "Y", path)?;
        let x = cx
            .iter()
            .enumerate()
            .map(|(k, &c)| parse_field::<f64>(&rec, c, &format!("X{}", k + 1), path))
            .collect::<Result<Vec<_>>>()?;
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema(location(path, &rec), "non-finite value"));
        }
        let slot = *index.entry(g.clone()).or_insert_with(|| {
            order.push((g.clone(), NodeTable::default()));
            order.len() - 1
        });
        let t = &mut order[slot].1;
        t.node_id.push(node);
        t.w.push(w);
        t.y.push(y);
        t.x.push(x);
        t.lines.push(rec.position().map(|p| p.line()).unwrap_or(0));
    }
    if order.is_empty() {
        return Err(Error::schema(path.display().to_string(), "no node rows"));
    }
    Ok(order)
}

/// Joins node and edge files into a population. Groups keep their node
/// file order; units are placed at their `node_id`.
pub fn read_population(nodes: &Path, edges: &Path) -> Result<GroupedPopulation> {
    let tables = read_nodes(nodes)?;
    let mut edge_map = read_edges(edges)?;
    let known: std::collections::HashSet<&str> = tables.iter().map(|(g, _)| g.as_str()).collect();
    if let Some(g) = edge_map.keys().find(|g| !known.contains(g.as_str())) {
        return Err(Error::schema(
            edges.display().to_string(),
            format!("group {g} appears in edges but not in nodes"),
        ));
    }
    let mut groups = Vec::with_capacity(tables.len());
    for (gid, t) in tables {
        let n = t.node_id.len();
        let mut pos = vec![usize::MAX; n];
        for (row, &id) in t.node_id.iter().enumerate() {
            let loc = format!("{} line {}", nodes.display(), t.lines[row]);
            if id >= n {
                return Err(Error::schema(loc, format!("node_id {id} out of range for group {gid} with {n} nodes")));
            }
            if pos[id] != usize::MAX {
                return Err(Error::schema(loc, format!("node_id {id} repeated in group {gid}")));
            }
            pos[id] = row;
        }
        let e = edge_map.remove(&gid).ok_or_else(|| {
            Error::schema(edges.display().to_string(), format!("group {gid} has no rows in the edge file"))
        })?;
        if let Some(&(i, j)) = e.iter().find(|&&(i, j)| i >= n || j >= n) {
            return Err(Error::schema(
                edges.display().to_string(),
                format!("edge ({i}, {j}) in group {gid} references a node outside 0..{n}"),
            ));
        }
        let graph = Graph::from_edges(n, &e).map_err(|err| Error::in_group(&gid, err))?;
        let w = pos.iter().map(|&r| t.w[r]).collect();
        let x = pos.iter().map(|&r| t.x[r].clone()).collect();
        let y = pos.iter().map(|&r| t.y[r]).collect();
        let g = GroupData::new(gid.clone(), graph, w, x, y)
            .map_err(|err| Error::schema(nodes.display().to_string(), err.to_string()))?;
        groups.push(g);
    }
    GroupedPopulation::new(groups).map_err(|err| Error::schema(nodes.display().to_string(), err.to_string()))
}

pub fn nodes_csv(pop: &GroupedPopulation) -> Result<Vec<u8>> {
    let d = pop.n_covariates();
    let mut header: Vec<String> = ["group_id", "node_id", "W", "Y"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=d).map(|k| format!("X{k}")));
    let rows = pop.groups().iter().flat_map(|g| {
        (0..g.n_units()).map(move |i| {
            let mut r = vec![g.group_id.clone(), i.to_string(), g.w[i].to_string(), fmt_num(g.y[i])];
            r.extend(g.x[i].iter().map(|&v| fmt_num(v)));
            r
        })
    });
    csv_bytes(&header, rows)
}

pub fn edges_csv<'a>(graphs: impl IntoIterator<Item = (&'a str, &'a Graph)>) -> Result<Vec<u8>> {
    let header: Vec<String> = ["group_id", "i", "j"].iter().map(|s| s.to_string()).collect();
    let rows = graphs.into_iter().flat_map(|(gid, g)| {
        g.edges()
            .into_iter()
            .map(move |(i, j)| vec![gid.to_string(), i.to_string(), j.to_string()])
    });
    csv_bytes(&header, rows)
}

pub fn write_population(pop: &GroupedPopulation, nodes: &Path, edges: &Path) -> Result<()> {
    let n = nodes_csv(pop)?;
    let e = edges_csv(pop.groups().iter().map(|g| (g.group_id.as_str(), &g.graph)))?;
    write_atomic(nodes, &n)?;
    write_atomic(edges, &e)
}

pub fn raw_csv(rows: &[RawRow]) -> Result<Vec<u8>> {
    let header: Vec<String> = ["rep_index", "method", "tau_hat", "tau_star", "se", "b_bar", "error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    csv_bytes(
        &header,
        rows.iter().map(|r| {
            vec![
                r.rep_index.to_string(),
                r.method.to_string(),
                fmt_opt(r.tau_hat),
                fmt_num(r.tau_star),
                fmt_opt(r.se),
                fmt_opt(r.b_bar),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn summary_csv(summaries: &[MetricsSummary]) -> Result<Vec<u8>> {
    let header: Vec<String> = ["method", "mae", "mse", "rmse", "mean_bias", "coverage", "n_ok", "n_failed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    csv_bytes(
        &header,
        summaries.iter().map(|s| {
            vec![
                s.method.to_string(),
                fmt_num(s.mae),
                fmt_num(s.mse),
                fmt_num(s.rmse),
                fmt_num(s.mean_bias),
                fmt_opt(s.coverage),
                s.n_ok.to_string(),
                s.n_failed.to_string(),
            ]
        }),
    )
}
