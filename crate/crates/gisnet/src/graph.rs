//! Scene graphs, symmetric adjacency normalization, block-diagonal batching
//! and the two-layer graph-convolution forward path.

use std::collections::BTreeSet;

use crate::autodiff::{ops, Tape, Tensor};
use crate::error::{Error, Result};

/// Undirected scene graph over the vehicles of one scene. Vertex 0..n are
/// vehicles; `target` is the vehicle being predicted. Self-loops are never
/// stored explicitly (they enter during normalization).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    n: usize,
    target: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SceneGraph {
    /// Build a graph from an explicit edge list; pairs are stored unordered.
    pub fn new(n: usize, target: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 || target >= n {
            return Err(Error::argument(
                "scene_graph",
                format!("target {target} out of range for {n} vertices"),
            ));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::argument(
                    "scene_graph",
                    format!("edge ({a}, {b}) out of range for {n} vertices"),
                ));
            }
            if a == b {
                return Err(Error::argument(
                    "scene_graph",
                    format!("self-loop at vertex {a}"),
                ));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(SceneGraph {
            n,
            target,
            edges: set,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Star connectivity: the target vehicle is connected with every other
/// vehicle and neighbors do not interconnect. A single vehicle yields an
/// empty edge set.
pub fn build_star_adjacency(n: usize, target: usize) -> Result<SceneGraph> {
    let edges: Vec<(usize, usize)> = (0..n).filter(|&j| j != target).map(|j| (target, j)).collect();
    SceneGraph::new(n, target, edges)
}

/// The symmetric propagation matrix `S = D^(-1/2) (A + I) D^(-1/2)`, where
/// `D` holds the self-loop-inclusive vertex degrees.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    n: usize,
    target: usize,
    matrix: Tensor,
}

/// Normalize a scene graph: `A + I` as a zero-one matrix, degrees from its
/// row sums, then the symmetric scaling. Degrees are always at least one, so
/// this cannot fail.
pub fn normalize_adjacency(g: &SceneGraph) -> NormalizedAdjacency {
    let n = g.vertex_count();
    let mut degree = vec![1.0f64; n]; // self-loop
    for (a, b) in g.edges() {
        degree[a] += 1.0;
        degree[b] += 1.0;
    }
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0 / degree[i];
    }
    for (a, b) in g.edges() {
        let v = 1.0 / (degree[a] * degree[b]).sqrt();
        m[a * n + b] = v;
        m[b * n + a] = v;
    }
    NormalizedAdjacency {
        n,
        target: g.target_index(),
        matrix: Tensor::from_vec(vec![n, n], m).expect("square matrix"),
    }
}

impl NormalizedAdjacency {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.matrix.at2(i, j)
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

/// Several normalized scene graphs fused into one block-diagonal matrix so a
/// whole mini-batch propagates through a single matrix product. Off-block
/// entries are exactly zero.
#[derive(Debug, Clone)]
pub struct BatchedGraph {
    members: Vec<NormalizedAdjacency>,
    offsets: Vec<usize>,
    fused: Tensor,
}

pub fn block_diagonal_batch(graphs: &[NormalizedAdjacency]) -> Result<BatchedGraph> {
    if graphs.is_empty() {
        return Err(Error::argument("block_diagonal_batch", "empty graph list"));
    }
    let total: usize = graphs.iter().map(|g| g.dim()).sum();
    let mut offsets = Vec::with_capacity(graphs.len());
    let mut fused = vec![0.0; total * total];
    let mut offset = 0;
    for g in graphs {
        offsets.push(offset);
        let n = g.dim();
        for i in 0..n {
            for j in 0..n {
                fused[(offset + i) * total + (offset + j)] = g.entry(i, j);
            }
        }
        offset += n;
    }
    Ok(BatchedGraph {
        members: graphs.to_vec(),
        offsets,
        fused: Tensor::from_vec(vec![total, total], fused).expect("square matrix"),
    })
}

impl BatchedGraph {
    pub fn dim(&self) -> usize {
        self.fused.shape()[0]
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[NormalizedAdjacency] {
        &self.members
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn fused_matrix(&self) -> &Tensor {
        &self.fused
    }
}

/// Anything gcn_forward can propagate over: a single normalized scene graph
/// or a block-diagonal batch of them.
pub trait Propagation {
    fn dim(&self) -> usize;
    fn matrix(&self) -> &Tensor;
}

impl Propagation for NormalizedAdjacency {
    fn dim(&self) -> usize {
        self.n
    }
    fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

impl Propagation for BatchedGraph {
    fn dim(&self) -> usize {
        BatchedGraph::dim(self)
    }
    fn matrix(&self) -> &Tensor {
        &self.fused
    }
}

/// Two-layer graph convolution: `S . ReLU(S . X . W0) . W1`, with no
/// activation after the second layer. Differentiable in `X`, `W0`, `W1`.
pub fn gcn_forward<S: Propagation + ?Sized>(
    mut tape: Option<&mut Tape>,
    x: &Tensor,
    s: &S,
    w0: &Tensor,
    w1: &Tensor,
) -> Result<Tensor> {
    if x.rank() != 2 || x.shape()[0] != s.dim() {
        return Err(Error::shape(
            "gcn_forward",
            format!(
                "feature rows {:?} do not match graph dimension {}",
                x.shape(),
                s.dim()
            ),
        ));
    }
    let m = s.matrix();
    let xw = ops::matmul(tape.as_deref_mut(), x, w0)?;
    let sxw = ops::matmul(tape.as_deref_mut(), m, &xw)?;
    let hidden = ops::relu(tape.as_deref_mut(), &sxw)?;
    let hw = ops::matmul(tape.as_deref_mut(), &hidden, w1)?;
    ops::matmul(tape, m, &hw)
}

/// Pull each member graph's target row out of a batched GCN output: row
/// `offset_k + target_k` per member, stacked in member order. This is the
/// per-sample shared-information feature.
pub fn extract_target_feature(
    tape: Option<&mut Tape>,
    h: &Tensor,
    batched: &BatchedGraph,
    targets: &[usize],
) -> Result<Tensor> {
    if targets.len() != batched.member_count() {
        return Err(Error::argument(
            "extract_target_feature",
            format!(
                "{} target indices for {} member graphs",
                targets.len(),
                batched.member_count()
            ),
        ));
    }
    if h.rank() != 2 || h.shape()[0] != batched.dim() {
        return Err(Error::shape(
            "extract_target_feature",
            format!(
                "features {:?} do not match batch dimension {}",
                h.shape(),
                batched.dim()
            ),
        ));
    }
    let mut rows = Vec::with_capacity(targets.len());
    for (k, (&t, g)) in targets.iter().zip(batched.members()).enumerate() {
        if t >= g.dim() {
            return Err(Error::argument(
                "extract_target_feature",
                format!("target {t} out of range for member {k} of size {}", g.dim()),
            ));
        }
        rows.push(batched.offsets()[k] + t);
    }
    ops::select_rows(tape, h, &rows)
}
