//! Domain types shared by gain synthesis and simulation: formations, sensing
//! graphs, structured per-edge gain blocks, and the aggregate gain matrix.
//!
//! Indices are 0-based everywhere in memory; the 1-based convention of the
//! file formats is applied only at I/O boundaries.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{CoreError, Result};

/// Undirected sensing topology: which agents measure each other's relative
/// position. Edges are stored with the smaller index first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensingGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SensingGraph {
    /// Builds a graph over `n` nodes from unordered node pairs (0-based).
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (i, j) in pairs {
            if i == j {
                return Err(CoreError::InvalidGraph(format!("self-loop at node {i}")));
            }
            if i >= n || j >= n {
                return Err(CoreError::InvalidGraph(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            let key = (i.min(j), i.max(j));
            if !edges.insert(key) {
                return Err(CoreError::InvalidGraph(format!(
                    "duplicate edge ({}, {})",
                    key.0, key.1
                )));
            }
        }
        Ok(Self { n, edges })
    }

    /// Complete graph on `n` nodes.
    pub fn complete(n: usize) -> Self {
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.insert((i, j));
            }
        }
        Self { n, edges }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges, smaller index first, in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i != j && self.edges.contains(&(i.min(j), i.max(j)))
    }

    /// Neighbors of node `i` in increasing order.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Canonical directed-edge order: for each undirected edge (i, j) with
    /// i < j, first (i, j), then (j, i). This order fixes the gain-variable
    /// layout and the gains file layout.
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(2 * self.edges.len());
        for &(i, j) in &self.edges {
            out.push((i, j));
            out.push((j, i));
        }
        out
    }
}

/// Desired formation: one target point per agent plus the sensing graph.
#[derive(Debug, Clone)]
pub struct FormationSpec {
    coords: Vec<Vector3<f64>>,
    graph: SensingGraph,
}

impl FormationSpec {
    pub fn new(coords: Vec<Vector3<f64>>, graph: SensingGraph) -> Result<Self> {
        let n = coords.len();
        if n < 2 {
            return Err(CoreError::InvalidFormation(format!(
                "need at least 2 agents, got {n}"
            )));
        }
        if graph.node_count() != n {
            return Err(CoreError::InvalidFormation(format!(
                "graph has {} nodes but formation has {} agents",
                graph.node_count(),
                n
            )));
        }
        if coords.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(CoreError::InvalidFormation(
                "non-finite coordinate".to_string(),
            ));
        }
        let first = coords[0];
        if coords.iter().all(|p| (p - first).norm() == 0.0) {
            return Err(CoreError::InvalidFormation(
                "all agents coincident".to_string(),
            ));
        }
        Ok(Self { coords, graph })
    }

    pub fn agent_count(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Vector3<f64>] {
        &self.coords
    }

    pub fn graph(&self) -> &SensingGraph {
        &self.graph
    }

    /// Stacked target coordinates as a single vector in R^{3n}.
    pub fn aggregate(&self) -> DVector<f64> {
        let mut q = DVector::zeros(3 * self.coords.len());
        for (i, p) in self.coords.iter().enumerate() {
            q.fixed_rows_mut::<3>(3 * i).copy_from(p);
        }
        q
    }
}

/// Structured 3x3 gain block: a rotation/scaling in the horizontal plane plus
/// an independent scaling along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBlock {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl GainBlock {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }

    /// The 3x3 matrix [[a, -b, 0], [b, a, 0], [0, 0, c]].
    pub fn materialize(&self) -> Matrix3<f64> {
        materialize_block(self)
    }
}

/// Materializes a gain block as [[a, -b, 0], [b, a, 0], [0, 0, c]].
pub fn materialize_block(g: &GainBlock) -> Matrix3<f64> {
    Matrix3::new(g.a, -g.b, 0.0, g.b, g.a, 0.0, 0.0, 0.0, g.c)
}

/// One gain block per direction of each sensing edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    blocks: BTreeMap<(usize, usize), GainBlock>,
}

impl GainSet {
    /// Builds a gain set, checking that the block domain is exactly the set of
    /// directed edges of `graph` and that all entries are finite.
    pub fn new(graph: &SensingGraph, blocks: BTreeMap<(usize, usize), GainBlock>) -> Result<Self> {
        for (&(i, j), block) in &blocks {
            if !graph.contains(i, j) {
                return Err(CoreError::GainDomainMismatch(format!(
                    "block ({i}, {j}) has no matching sensing edge"
                )));
            }
            if !block.is_finite() {
                return Err(CoreError::GainDomainMismatch(format!(
                    "block ({i}, {j}) has non-finite entries"
                )));
            }
        }
        if blocks.len() != 2 * graph.edge_count() {
            return Err(CoreError::GainDomainMismatch(format!(
                "expected {} directed blocks, got {}",
                2 * graph.edge_count(),
                blocks.len()
            )));
        }
        Ok(Self { blocks })
    }

    /// Same block for both directions of every edge.
    pub fn uniform(graph: &SensingGraph, block: GainBlock) -> Self {
        let blocks = graph
            .directed_edges()
            .into_iter()
            .map(|e| (e, block))
            .collect();
        Self { blocks }
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&GainBlock> {
        self.blocks.get(&(i, j))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &GainBlock)> {
        self.blocks.iter()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// The 3n x 3n gain matrix collecting all edge blocks, with each diagonal
/// block set to minus the sum of its row's off-diagonal blocks. The closed
/// loop in a common frame is then q' = A q, and the three axis translations
/// are in the kernel by construction.
#[derive(Debug, Clone)]
pub struct AggregateGain {
    n: usize,
    matrix: DMatrix<f64>,
}

impl AggregateGain {
    pub fn agent_count(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }
}

/// Assembles the aggregate gain matrix from per-edge blocks.
pub fn assemble_aggregate(spec: &FormationSpec, gains: &GainSet) -> Result<AggregateGain> {
    let graph = spec.graph();
    let n = spec.agent_count();
    for &(i, j) in &graph.directed_edges() {
        if gains.block(i, j).is_none() {
            return Err(CoreError::GainDomainMismatch(format!(
                "missing block for directed edge ({i}, {j})"
            )));
        }
    }
    if gains.len() != 2 * graph.edge_count() {
        return Err(CoreError::GainDomainMismatch(format!(
            "expected {} directed blocks, got {}",
            2 * graph.edge_count(),
            gains.len()
        )));
    }

    let mut matrix = DMatrix::zeros(3 * n, 3 * n);
    for (&(i, j), block) in gains.iter() {
        let m = block.materialize();
        matrix.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&m);
        let mut diag = matrix.fixed_view_mut::<3, 3>(3 * i, 3 * i);
        diag -= m;
    }
    Ok(AggregateGain { n, matrix })
}
