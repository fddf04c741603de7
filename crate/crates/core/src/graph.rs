//! Merge-constraint graph and smallest-last greedy colouring.
//!
//! An edge between two labels forbids merging them. Labels may share a
//! merged label only when their pooled supports are more than `delta_d` mm
//! apart and their mean volumes differ by a factor below `delta_v`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pairwise::{DistanceMatrix, RatioMatrix};

/// Thresholds and label roles shared by graph construction and planning.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeParams {
    /// Minimum distance (mm) that must be strictly exceeded.
    pub delta_d: f64,
    /// Volume ratio that must not be reached.
    pub delta_v: f64,
    /// Labels kept unmerged: adjacent to every other vertex.
    pub pins: Vec<u32>,
    /// Label excluded from the graph and mapped to merged 0.
    pub background: u32,
}

impl Default for MergeParams {
    fn default() -> Self {
        Self {
            delta_d: 10.0,
            delta_v: 3.5,
            pins: Vec::new(),
            background: 0,
        }
    }
}

impl MergeParams {
    pub fn validate(&self) -> Result<()> {
        if self.delta_d.is_nan() || self.delta_d < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "distance threshold must be >= 0, got {}",
                self.delta_d
            )));
        }
        if self.delta_v.is_nan() || self.delta_v < 1.0 {
            return Err(Error::InvalidArgument(format!(
                "volume ratio threshold must be >= 1, got {}",
                self.delta_v
            )));
        }
        Ok(())
    }

    /// True when two labels at distance `d` with volume ratio `v` may merge.
    #[inline]
    pub fn mergeable(&self, d: f64, v: f64) -> bool {
        d > self.delta_d && v < self.delta_v
    }
}

/// Undirected simple graph over original labels, stored as a dense
/// adjacency matrix indexed by position in the sorted vertex list.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintGraph {
    vertices: Vec<u32>,
    adjacency: Vec<bool>,
}

impl ConstraintGraph {
    /// Graph from an explicit edge list. Vertices are sorted and deduplicated.
    pub fn from_edges(vertices: &[u32], edges: &[(u32, u32)]) -> Result<Self> {
        let mut vs = vertices.to_vec();
        vs.sort_unstable();
        vs.dedup();
        let mut g = Self {
            adjacency: vec![false; vs.len() * vs.len()],
            vertices: vs,
        };
        for &(a, b) in edges {
            let i = g.position(a).ok_or(Error::UnknownLabel(a))?;
            let j = g.position(b).ok_or(Error::UnknownLabel(b))?;
            if i != j {
                g.connect(i, j);
            }
        }
        Ok(g)
    }

    pub fn vertices(&self) -> &[u32] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn position(&self, label: u32) -> Option<usize> {
        self.vertices.binary_search(&label).ok()
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.vertices.len() + j]
    }

    pub fn adjacent_labels(&self, a: u32, b: u32) -> bool {
        match (self.position(a), self.position(b)) {
            (Some(i), Some(j)) => self.adjacent(i, j),
            _ => false,
        }
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.len()).filter(|&j| self.adjacent(i, j)).count()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.len()).map(|i| self.degree(i)).sum::<usize>() / 2
    }

    fn connect(&mut self, i: usize, j: usize) {
        let n = self.vertices.len();
        self.adjacency[i * n + j] = true;
        self.adjacency[j * n + i] = true;
    }
}

/// Threshold the matrices into a constraint graph.
///
/// The background label never becomes a vertex. Pinned labels are connected
/// to every other vertex.
pub fn build_graph(d: &DistanceMatrix, v: &RatioMatrix, params: &MergeParams) -> Result<ConstraintGraph> {
    params.validate()?;
    if d.labels() != v.labels() {
        return Err(Error::InvalidArgument(
            "distance and ratio matrices have different label tables".into(),
        ));
    }
    for &p in &params.pins {
        if p == params.background || d.position(p).is_none() {
            return Err(Error::UnknownLabel(p));
        }
    }
    let keep: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] != params.background).collect();
    let vertices: Vec<u32> = keep.iter().map(|&i| d.labels()[i]).collect();
    let pinned: Vec<bool> = vertices.iter().map(|l| params.pins.contains(l)).collect();
    let mut g = ConstraintGraph {
        adjacency: vec![false; vertices.len() * vertices.len()],
        vertices,
    };
    for a in 0..keep.len() {
        for b in a + 1..keep.len() {
            let (i, j) = (keep[a], keep[b]);
            if pinned[a] || pinned[b] || !params.mergeable(d.get(i, j), v.get(i, j)) {
                g.connect(a, b);
            }
        }
    }
    Ok(g)
}

/// Result of smallest-last ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallestLast {
    /// Colouring order: the reverse of the removal sequence.
    pub order: Vec<u32>,
    /// Removal sequence with each vertex's degree at the moment of removal.
    pub removals: Vec<(u32, usize)>,
}

impl SmallestLast {
    /// Maximum degree at removal over the sequence.
    pub fn degeneracy(&self) -> usize {
        self.removals.iter().map(|&(_, d)| d).max().unwrap_or(0)
    }
}

/// Repeatedly remove a vertex of minimum remaining degree (ties: smallest
/// label); the colouring order is the reverse of the removals.
pub fn smallest_last_order(g: &ConstraintGraph) -> SmallestLast {
    let n = g.len();
    let mut degree: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let mut removed = vec![false; n];
    let mut removals = Vec::with_capacity(n);
    for _ in 0..n {
        // vertices are sorted, so the first minimum is the smallest label
        let next = (0..n)
            .filter(|&i| !removed[i])
            .min_by_key(|&i| degree[i])
            .expect("a vertex remains");
        removed[next] = true;
        removals.push((g.vertices()[next], degree[next]));
        for j in 0..n {
            if !removed[j] && g.adjacent(next, j) {
                degree[j] -= 1;
            }
        }
    }
    let order = removals.iter().rev().map(|&(l, _)| l).collect();
    SmallestLast { order, removals }
}

/// Give each vertex, in order, the smallest colour not used by an
/// already-coloured neighbour.
pub fn greedy_color(g: &ConstraintGraph, order: &[u32]) -> Result<BTreeMap<u32, usize>> {
    let mut seen = vec![false; g.len()];
    let mut positions = Vec::with_capacity(order.len());
    for &l in order {
        let i = g.position(l).ok_or(Error::UnknownLabel(l))?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("label {l} appears twice in the order")));
        }
        positions.push(i);
    }
    if positions.len() != g.len() {
        return Err(Error::InvalidArgument(
            "order is not a permutation of the vertices".into(),
        ));
    }
    let mut colour: Vec<Option<usize>> = vec![None; g.len()];
    let mut taken = Vec::new();
    for &i in &positions {
        taken.clear();
        taken.resize(g.len() + 1, false);
        for (j, c) in colour.iter().enumerate() {
            if let Some(c) = *c {
                if g.adjacent(i, j) {
                    taken[c] = true;
                }
            }
        }
        colour[i] = Some(taken.iter().position(|&t| !t).expect("n+1 slots, at most n taken"));
    }
    Ok(g.vertices()
        .iter()
        .zip(colour)
        .map(|(&l, c)| (l, c.expect("every vertex coloured")))
        .collect())
}

/// Number of distinct colours used.
pub fn colour_count(colouring: &BTreeMap<u32, usize>) -> usize {
    colouring.values().max().map_or(0, |&m| m + 1)
}
