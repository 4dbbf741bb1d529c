//! Undirected communication topology and the combinatorial checks the
//! privacy guarantee depends on: neighborhoods, induced subgraphs,
//! connectivity and vertex cuts.
//!
//! Agents are indexed `0..n` in memory. All external formats (JSON, CSV,
//! reports, error messages) use 1-based ids.

use std::collections::{BTreeSet, VecDeque};

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph over `n` agents.
///
/// Edges are stored as `(i, j)` with `i < j`, sorted lexicographically. That
/// order is the oriented edge list: it fixes the incidence-matrix column
/// order and the directed-noise layout used everywhere else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Builds a topology from 0-based edges in either orientation.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("topology needs at least one agent"));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::domain(format!(
                    "edge {{{}, {}}} has an endpoint outside 1..={n}",
                    a + 1,
                    b + 1
                )));
            }
            if a == b {
                return Err(Error::domain(format!("self-loop at agent {}", a + 1)));
            }
            let e = (a.min(b), a.max(b));
            if !set.insert(e) {
                return Err(Error::domain(format!("duplicate edge {{{}, {}}}", e.0 + 1, e.1 + 1)));
            }
        }
        let edges: Vec<_> = set.into_iter().collect();
        let mut adjacency = vec![Vec::new(); n];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { n, edges, adjacency })
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).tuple_combinations();
        Self::new(n, edges).expect("complete graph is valid")
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path graph is valid")
    }

    pub fn cycle(n: usize) -> Self {
        assert!(n >= 3, "cycle needs at least 3 agents");
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("cycle graph is valid")
    }

    /// Erdős–Rényi G(n, p), resampled until connected.
    pub fn random_connected<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Self {
        assert!(n >= 1 && p > 0.0);
        loop {
            let edges: Vec<_> = (0..n).tuple_combinations().filter(|_| rng.random::<f64>() < p).collect();
            let g = Self::new(n, edges).expect("sampled edges are valid");
            if g.is_connected() {
                return g;
            }
        }
    }

    /// Erdős–Rényi G(n, p) without any connectivity requirement.
    pub fn random<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Self {
        let edges: Vec<_> = (0..n).tuple_combinations().filter(|_| rng.random::<f64>() < p).collect();
        Self::new(n, edges).expect("sampled edges are valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// The oriented edge list: `(i, j)` with `i < j`, lexicographic.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Position of `{i, j}` in the oriented edge list.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let e = (i.min(j), i.max(j));
        self.edges.binary_search(&e).ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n - 1) / 2
    }

    fn check_agent(&self, i: usize) -> Result<()> {
        if i >= self.n {
            Err(Error::domain(format!("agent {} outside 1..={}", i + 1, self.n)))
        } else {
            Ok(())
        }
    }

    /// Neighbors of agent `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.check_agent(i)?;
        Ok(&self.adjacency[i])
    }

    /// Subgraph induced by `keep`. Kept agents are renumbered in ascending
    /// order; the returned map sends new index to old index.
    pub fn induced_subgraph(&self, keep: &[usize]) -> Result<(Topology, Vec<usize>)> {
        if keep.is_empty() {
            return Err(Error::domain("induced subgraph needs a nonempty vertex set"));
        }
        let mut map: Vec<usize> = keep.to_vec();
        map.sort_unstable();
        map.dedup();
        for &v in &map {
            self.check_agent(v)?;
        }
        let mut new_index = vec![usize::MAX; self.n];
        for (new, &old) in map.iter().enumerate() {
            new_index[old] = new;
        }
        let edges = self
            .edges
            .iter()
            .filter(|&&(i, j)| new_index[i] != usize::MAX && new_index[j] != usize::MAX)
            .map(|&(i, j)| (new_index[i], new_index[j]));
        Ok((Topology::new(map.len(), edges)?, map))
    }

    pub fn is_connected(&self) -> bool {
        self.connected_without(&vec![false; self.n])
    }

    /// Breadth-first reachability over agents not in `removed`. Fewer than
    /// two surviving agents count as connected.
    fn connected_without(&self, removed: &[bool]) -> bool {
        let Some(start) = (0..self.n).find(|&v| !removed[v]) else {
            return true;
        };
        let alive = removed.iter().filter(|&&r| !r).count();
        let mut seen = vec![false; self.n];
        seen[start] = true;
        let mut reached = 1;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &w in &self.adjacency[v] {
                if !removed[w] && !seen[w] {
                    seen[w] = true;
                    reached += 1;
                    queue.push_back(w);
                }
            }
        }
        reached == alive
    }

    /// Whether removing `c` (with incident edges) disconnects the remaining
    /// agents. Leaving a single agent is not a cut.
    pub fn is_vertex_cut(&self, c: &[usize]) -> Result<bool> {
        let mut removed = vec![false; self.n];
        for &v in c {
            self.check_agent(v)?;
            removed[v] = true;
        }
        if removed.iter().all(|&r| r) {
            return Err(Error::domain("a vertex cut must leave at least one agent"));
        }
        Ok(!self.connected_without(&removed))
    }

    /// Size of the smallest vertex cut, found by enumerating candidate sets in
    /// increasing size. Complete graphs report `n - 1`; disconnected graphs
    /// report 0.
    pub fn vertex_connectivity(&self) -> usize {
        if self.n < 2 || !self.is_connected() {
            return 0;
        }
        if self.is_complete() {
            return self.n - 1;
        }
        let mut removed = vec![false; self.n];
        for k in 1..self.n - 1 {
            for cut in (0..self.n).combinations(k) {
                for &v in &cut {
                    removed[v] = true;
                }
                let disconnects = !self.connected_without(&removed);
                for &v in &cut {
                    removed[v] = false;
                }
                if disconnects {
                    return k;
                }
            }
        }
        // Only complete graphs lack a cut of size <= n - 2.
        self.n - 1
    }

    /// Honest complement of `c`, ascending.
    pub fn complement(&self, c: &[usize]) -> Vec<usize> {
        (0..self.n).filter(|v| !c.contains(v)).collect()
    }
}

/// JSON form: `{ "n": 3, "edges": [[1, 2], [1, 3], [2, 3]] }`, 1-based with
/// `i < j` in every pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyJson {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<TopologyJson> for Topology {
    type Error = Error;

    fn try_from(raw: TopologyJson) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw.edges.len());
        for [i, j] in raw.edges {
            if i == 0 || j == 0 {
                return Err(Error::Config(format!("edge [{i}, {j}]: agent ids are 1-based")));
            }
            if i >= j {
                return Err(Error::Config(format!("edge [{i}, {j}]: expected i < j")));
            }
            edges.push((i - 1, j - 1));
        }
        Topology::new(raw.n, edges).map_err(|e| Error::Config(e.to_string()))
    }
}

impl From<&Topology> for TopologyJson {
    fn from(t: &Topology) -> Self {
        TopologyJson { n: t.n, edges: t.edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Topology {
        Topology::path(3)
    }

    #[test]
    fn neighbors_examples() {
        assert_eq!(Topology::complete(3).neighbors(0).unwrap(), &[1, 2]);
        assert_eq!(path3().neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(path3().neighbors(0).unwrap(), &[1]);
        assert!(path3().neighbors(3).is_err());
    }

    #[test]
    fn induced_subgraph_examples() {
        let k3 = Topology::complete(3);
        let (g, map) = k3.induced_subgraph(&[0, 1]).unwrap();
        assert_eq!(g.n(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(map, vec![0, 1]);

        let (g, map) = k3.induced_subgraph(&[0, 1, 2]).unwrap();
        assert_eq!(g, k3);
        assert_eq!(map, vec![0, 1, 2]);

        let (g, map) = path3().induced_subgraph(&[0, 2]).unwrap();
        assert_eq!(g.n(), 2);
        assert!(g.edges().is_empty());
        assert_eq!(map, vec![0, 2]);

        assert!(k3.induced_subgraph(&[]).is_err());
    }

    #[test]
    fn connectivity_examples() {
        assert!(Topology::complete(3).is_connected());
        assert!(!Topology::new(2, []).unwrap().is_connected());
        assert!(path3().is_connected());
    }

    #[test]
    fn vertex_cut_examples() {
        let k3 = Topology::complete(3);
        assert!(!k3.is_vertex_cut(&[2]).unwrap());
        assert!(path3().is_vertex_cut(&[1]).unwrap());
        assert!(!k3.is_vertex_cut(&[]).unwrap());
        assert!(k3.is_vertex_cut(&[0, 1, 2]).is_err());
        // leaving one agent is never a cut
        assert!(!path3().is_vertex_cut(&[0, 1]).unwrap());
    }

    #[test]
    fn vertex_connectivity_examples() {
        assert_eq!(Topology::complete(3).vertex_connectivity(), 2);
        assert_eq!(path3().vertex_connectivity(), 1);
        // 4-cycle: no single vertex disconnects it, {1,3} does.
        assert_eq!(Topology::cycle(4).vertex_connectivity(), 2);
        assert_eq!(Topology::new(3, [(0, 1)]).unwrap().vertex_connectivity(), 0);
        assert_eq!(Topology::complete(5).vertex_connectivity(), 4);
    }

    #[test]
    fn rejects_invalid_edges() {
        assert!(Topology::new(3, [(0, 0)]).is_err());
        assert!(Topology::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(Topology::new(3, [(0, 3)]).is_err());
        assert!(Topology::new(0, []).is_err());
    }

    #[test]
    fn edge_order_is_lexicographic() {
        let g = Topology::new(4, [(3, 2), (1, 0), (2, 0), (1, 3)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert_eq!(g.edge_index(3, 1), Some(2));
        assert_eq!(g.edge_index(0, 3), None);
    }

    #[test]
    fn json_round_trip_and_orientation() {
        let raw: TopologyJson = serde_json::from_str(r#"{"n":3,"edges":[[1,2],[1,3],[2,3]]}"#).unwrap();
        let g = Topology::try_from(raw.clone()).unwrap();
        assert_eq!(g, Topology::complete(3));
        assert_eq!(TopologyJson::from(&g), raw);

        let bad: TopologyJson = serde_json::from_str(r#"{"n":3,"edges":[[2,1]]}"#).unwrap();
        assert!(Topology::try_from(bad).is_err());
        let zero: TopologyJson = serde_json::from_str(r#"{"n":3,"edges":[[0,1]]}"#).unwrap();
        assert!(Topology::try_from(zero).is_err());
    }
}
