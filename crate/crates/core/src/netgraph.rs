//! Group networks: construction, Watts–Strogatz generation, BFS distances
//! and the summaries used by the HAC bandwidth rule.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::seed::rng_from;

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
    n_edges: usize,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph {
            neighbors: vec![Vec::new(); n],
            n_edges: 0,
        }
    }

    /// Builds a graph from unordered pairs. Self-loops, out-of-range
    /// endpoints and repeated pairs (in either orientation) are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut sets = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i >= n {
                return Err(Error::Index { index: i, len: n });
            }
            if j >= n {
                return Err(Error::Index { index: j, len: n });
            }
            if i == j {
                return Err(Error::Parameter(format!("self-loop on node {i}")));
            }
            if !sets[i].insert(j) {
                return Err(Error::Parameter(format!("duplicate edge ({i}, {j})")));
            }
            sets[j].insert(i);
        }
        Ok(Self::from_sets(sets))
    }

    fn from_sets(sets: Vec<BTreeSet<usize>>) -> Self {
        let neighbors: Vec<Vec<usize>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let n_edges = neighbors.iter().map(Vec::len).sum::<usize>() / 2;
        Graph { neighbors, n_edges }
    }

    pub fn complete(n: usize) -> Self {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n, &edges).expect("complete graph is simple")
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("path graph is simple")
    }

    pub fn n_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    /// Sorted neighbor list of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Adjacency entry `A_ij`.
    pub fn a(&self, i: usize, j: usize) -> u8 {
        u8::from(self.neighbors[i].binary_search(&j).is_ok())
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.a(i, j) == 1
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges);
        for (i, nb) in self.neighbors.iter().enumerate() {
            out.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes() {
            return Err(Error::Dimension(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.n_nodes()
            )));
        }
        let edges: Vec<_> = self.edges().into_iter().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.n_nodes(), &edges)
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n_nodes() {
            return Err(Error::Index {
                index: i,
                len: self.n_nodes(),
            });
        }
        Ok(())
    }

    /// Shortest-path distances from `source`; `None` marks nodes that are
    /// unreachable or farther than `cap`.
    pub fn bfs_distances(&self, source: usize, cap: Option<usize>) -> Result<Vec<Option<usize>>> {
        self.check_node(source)?;
        let mut dist = vec![None; self.n_nodes()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].expect("queued nodes have a distance");
            if cap.is_some_and(|c| du >= c) {
                continue;
            }
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }

    /// `{j : dist(i, j) <= radius}`, sorted; always contains `i`.
    pub fn neighborhood(&self, i: usize, radius: usize) -> Result<Vec<usize>> {
        self.check_node(i)?;
        let mut scratch = BfsScratch::new(self.n_nodes());
        let mut out = Vec::new();
        scratch.visit_ball(self, i, radius, |j, _| out.push(j));
        out.sort_unstable();
        Ok(out)
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }
}

/// Reusable BFS buffers; one per worker.
#[derive(Debug, Clone)]
pub struct BfsScratch {
    dist: Vec<usize>,
    queue: Vec<usize>,
}

impl BfsScratch {
    pub fn new(n: usize) -> Self {
        BfsScratch {
            dist: vec![usize::MAX; n],
            queue: Vec::with_capacity(n),
        }
    }

    /// Calls `visit(j, dist)` for every node within `radius` of `source`
    /// (including `source` itself) in BFS order.
    pub fn visit_ball<F: FnMut(usize, usize)>(&mut self, g: &Graph, source: usize, radius: usize, mut visit: F) {
        if self.dist.len() < g.n_nodes() {
            self.dist.resize(g.n_nodes(), usize::MAX);
        }
        self.queue.clear();
        self.queue.push(source);
        self.dist[source] = 0;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            let du = self.dist[u];
            visit(u, du);
            if du >= radius {
                continue;
            }
            for &v in g.neighbors(u) {
                if self.dist[v] == usize::MAX {
                    self.dist[v] = du + 1;
                    self.queue.push(v);
                }
            }
        }
        for &u in &self.queue {
            self.dist[u] = usize::MAX;
        }
    }
}

/// Summary statistics consumed by the bandwidth rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    /// `sum_ij A_ij / n`.
    pub avg_degree: f64,
    /// Mean shortest-path length over connected ordered pairs `i != j`;
    /// `None` when no such pair exists.
    pub avg_path_length: Option<f64>,
    pub n_components: usize,
}

pub fn graph_stats(g: &Graph) -> GraphStats {
    let n = g.n_nodes();
    let avg_degree = if n == 0 { 0.0 } else { 2.0 * g.n_edges() as f64 / n as f64 };

    let mut scratch = BfsScratch::new(n);
    let mut total: u64 = 0;
    let mut pairs: u64 = 0;
    for i in 0..n {
        scratch.visit_ball(g, i, usize::MAX, |_, d| {
            if d > 0 {
                total += d as u64;
                pairs += 1;
            }
        });
    }
    let avg_path_length = (pairs > 0).then(|| total as f64 / pairs as f64);

    let mut seen = vec![false; n];
    let mut n_components = 0;
    for i in 0..n {
        if seen[i] {
            continue;
        }
        n_components += 1;
        scratch.visit_ball(g, i, usize::MAX, |j, _| seen[j] = true);
    }

    GraphStats {
        n_nodes: n,
        n_edges: g.n_edges(),
        avg_degree,
        avg_path_length,
        n_components,
    }
}

/// Watts–Strogatz small-world graph: ring lattice where each node links to
/// its `k/2` clockwise neighbors, then every lattice edge `(u, u+j)` is
/// rewired with probability `p` to `(u, w)` with `w` drawn uniformly among
/// nodes that are neither `u` nor already adjacent to `u`.
pub fn ws_generate(n: usize, k: usize, p: f64, seed: u64) -> Result<Graph> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::Parameter(format!("k must be even and >= 2, got {k}")));
    }
    if n <= k {
        return Err(Error::Parameter(format!("need n > k, got n={n}, k={k}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("rewiring probability {p} outside [0, 1]")));
    }

    let mut sets = vec![BTreeSet::new(); n];
    for u in 0..n {
        for j in 1..=k / 2 {
            let v = (u + j) % n;
            sets[u].insert(v);
            sets[v].insert(u);
        }
    }
    if p > 0.0 {
        let mut rng = rng_from(seed);
        for j in 1..=k / 2 {
            for u in 0..n {
                if rng.random::<f64>() >= p {
                    continue;
                }
                if sets[u].len() >= n - 1 {
                    continue;
                }
                let v = (u + j) % n;
                let w = loop {
                    let w = rng.random_range(0..n);
                    if w != u && !sets[u].contains(&w) {
                        break w;
                    }
                };
                sets[u].remove(&v);
                sets[v].remove(&u);
                sets[u].insert(w);
                sets[w].insert(u);
            }
        }
    }
    Ok(Graph::from_sets(sets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ring(n: usize) -> Graph {
        ws_generate(n, 2, 0.0, 0).unwrap()
    }

    /// Floyd–Warshall all-pairs distances.
    fn all_pairs(g: &Graph) -> Vec<Vec<Option<usize>>> {
        let n = g.n_nodes();
        let mut d = vec![vec![None; n]; n];
        for i in 0..n {
            d[i][i] = Some(0);
            for &j in g.neighbors(i) {
                d[i][j] = Some(1);
            }
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

    #[test]
    fn figure_one_network_size() {
        for seed in 0..5 {
            let g = ws_generate(50, 4, 0.1, seed).unwrap();
            assert_eq!(g.n_edges(), 100);
            assert!((g.stats().avg_degree - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rewiring_is_ring_lattice() {
        let g = ring(10);
        for i in 0..10 {
            let mut expect = vec![(i + 1) % 10, (i + 9) % 10];
            expect.sort_unstable();
            assert_eq!(g.neighbors(i), expect.as_slice());
        }
    }

    #[test]
    fn full_rewiring_keeps_edge_count() {
        for seed in 0..20 {
            assert_eq!(ws_generate(10, 4, 1.0, seed).unwrap().n_edges(), 20);
        }
    }

    #[test]
    fn ws_rejects_bad_parameters() {
        assert!(ws_generate(4, 4, 0.1, 0).is_err());
        assert!(ws_generate(10, 3, 0.1, 0).is_err());
        assert!(ws_generate(10, 0, 0.1, 0).is_err());
        assert!(ws_generate(10, 2, 1.5, 0).is_err());
    }

    #[test]
    fn bfs_on_path_and_edgeless() {
        let g = Graph::path(5);
        let d = g.bfs_distances(0, None).unwrap();
        assert_eq!(d, vec![Some(0), Some(1), Some(2), Some(3), Some(4)]);
        let capped = g.bfs_distances(0, Some(2)).unwrap();
        assert_eq!(capped, vec![Some(0), Some(1), Some(2), None, None]);

        let e = Graph::empty(4);
        assert_eq!(e.bfs_distances(0, None).unwrap(), vec![Some(0), None, None, None]);
        assert!(matches!(e.bfs_distances(4, None), Err(Error::Index { .. })));
    }

    #[test]
    fn bfs_on_ring() {
        let d = ring(10).bfs_distances(0, None).unwrap();
        assert_eq!(d[5], Some(5));
    }

    #[test]
    fn neighborhoods() {
        let g = Graph::path(5);
        assert_eq!(g.neighborhood(2, 0).unwrap(), vec![2]);
        assert_eq!(g.neighborhood(2, 1).unwrap(), vec![1, 2, 3]);
        assert_eq!(Graph::complete(4).neighborhood(0, 1).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn stats_small_cases() {
        let s = Graph::path(3).stats();
        assert!((s.avg_degree - 4.0 / 3.0).abs() < 1e-15);
        assert!((s.avg_path_length.unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.n_components, 1);

        let e = Graph::empty(3).stats();
        assert_eq!(e.avg_degree, 0.0);
        assert_eq!(e.avg_path_length, None);
        assert_eq!(e.n_components, 3);
    }

    #[test]
    fn from_edges_rejects_duplicates_and_loops() {
        assert!(Graph::from_edges(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_edges(3, &[(1, 1)]).is_err());
        assert!(Graph::from_edges(3, &[(0, 3)]).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..30).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..(2 * n)).prop_map(move |pairs| {
                let mut set = BTreeSet::new();
                for (a, b) in pairs {
                    if a != b {
                        set.insert((a.min(b), a.max(b)));
                    }
                }
                let edges: Vec<_> = set.into_iter().collect();
                Graph::from_edges(n, &edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn ws_structure(n in 5usize..80, half_k in 1usize..3, p in 0.0f64..=1.0, seed in any::<u64>()) {
            let k = 2 * half_k;
            prop_assume!(n > k);
            let g = ws_generate(n, k, p, seed).unwrap();
            prop_assert_eq!(g.n_edges(), n * k / 2);
            let mut sum = 0usize;
            for i in 0..n {
                prop_assert_eq!(g.a(i, i), 0);
                for j in 0..n {
                    prop_assert_eq!(g.a(i, j), g.a(j, i));
                    sum += g.a(i, j) as usize;
                }
            }
            prop_assert_eq!(sum, 2 * g.n_edges());
            prop_assert_eq!(g, ws_generate(n, k, p, seed).unwrap());
        }

        #[test]
        fn bfs_matches_floyd_warshall(g in arb_graph()) {
            let ap = all_pairs(&g);
            let n = g.n_nodes();
            for i in 0..n {
                prop_assert_eq!(&g.bfs_distances(i, None).unwrap(), &ap[i]);
                for s in 0..4 {
                    let brute: Vec<usize> = (0..n).filter(|&j| ap[i][j].is_some_and(|d| d <= s)).collect();
                    prop_assert_eq!(g.neighborhood(i, s).unwrap(), brute);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if let (Some(ij), Some(jk), Some(ik)) = (ap[i][j], ap[j][k], ap[i][k]) {
                            prop_assert!(ik <= ij + jk);
                        }
                    }
                }
            }
        }

        #[test]
        fn stats_match_brute_force(g in arb_graph()) {
            let ap = all_pairs(&g);
            let n = g.n_nodes();
            let mut adj_sum = 0usize;
            let (mut tot, mut cnt) = (0usize, 0usize);
            for i in 0..n {
                for j in 0..n {
                    adj_sum += g.a(i, j) as usize;
                    if i != j {
                        if let Some(d) = ap[i][j] {
                            tot += d;
                            cnt += 1;
                        }
                    }
                }
            }
            let s = g.stats();
            prop_assert!((s.avg_degree - adj_sum as f64 / n as f64).abs() < 1e-12);
            match s.avg_path_length {
                None => prop_assert_eq!(cnt, 0),
                Some(l) => {
                    prop_assert!((l - tot as f64 / cnt as f64).abs() < 1e-12);
                    prop_assert!(l >= 1.0);
                }
            }
        }
    }
}
