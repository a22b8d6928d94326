//! Undirected agent networks, time-varying schedules and their composition.
//!
//! Composition follows the adjacency-product definition with unit self-loops
//! on every node, so a composed graph is a *directed* support graph and is
//! checked for strong connectivity with forward and backward reachability.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph not connected")]
    NotConnected,
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("node count mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("graph must have at least one node")]
    Empty,
    #[error("schedule must contain at least one graph")]
    EmptySchedule,
}

/// Undirected simple graph on nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph; edges are unordered and duplicates collapse.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if node_count == 0 {
            return Err(GraphError::Empty);
        }
        let mut set = BTreeSet::new();
        for &(a, b) in edges {
            if a >= node_count || b >= node_count {
                return Err(GraphError::NodeOutOfRange(a, b, node_count));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let mut neighbors = vec![Vec::new(); node_count];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in neighbors.iter_mut() {
            n.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges: set,
            neighbors,
        })
    }

    pub fn empty(node_count: usize) -> Result<Self, GraphError> {
        Self::new(node_count, &[])
    }

    pub fn path(node_count: usize) -> Result<Self, GraphError> {
        let e: Vec<_> = (1..node_count).map(|i| (i - 1, i)).collect();
        Self::new(node_count, &e)
    }

    pub fn cycle(node_count: usize) -> Result<Self, GraphError> {
        let mut e: Vec<_> = (1..node_count).map(|i| (i - 1, i)).collect();
        if node_count > 2 {
            e.push((node_count - 1, 0));
        }
        Self::new(node_count, &e)
    }

    pub fn star(node_count: usize) -> Result<Self, GraphError> {
        let e: Vec<_> = (1..node_count).map(|i| (0, i)).collect();
        Self::new(node_count, &e)
    }

    pub fn complete(node_count: usize) -> Result<Self, GraphError> {
        let mut e = Vec::new();
        for i in 0..node_count {
            for j in i + 1..node_count {
                e.push((i, j));
            }
        }
        Self::new(node_count, &e)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Edges as `(low, high)` pairs in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Sorted neighbor list of `node` (never includes `node` itself).
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.node_count;
        let mut a = DMatrix::zeros(n, n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.node_count,
            (0..self.node_count).map(|i| self.degree(i) as f64),
        ))
    }

    /// Graph Laplacian `deg - adj`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        self.degree_matrix() - self.adjacency()
    }

    fn bfs(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.node_count];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.bfs(0).iter().all(Option::is_some)
    }

    /// Connected components, each sorted, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.node_count];
        let mut out = Vec::new();
        for s in 0..self.node_count {
            if seen[s] {
                continue;
            }
            let comp: Vec<usize> = self
                .bfs(s)
                .iter()
                .enumerate()
                .filter_map(|(i, d)| d.map(|_| i))
                .collect();
            for &c in &comp {
                seen[c] = true;
            }
            out.push(comp);
        }
        out
    }

    /// Longest shortest-path length over all node pairs.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        let mut best = 0;
        for s in 0..self.node_count {
            for d in self.bfs(s) {
                best = best.max(d.ok_or(GraphError::NotConnected)?);
            }
        }
        Ok(best)
    }

    /// Adjacency with unit self-loops, the matrix used in composition.
    pub fn adjacency_with_self_loops(&self) -> DMatrix<f64> {
        self.adjacency() + DMatrix::identity(self.node_count, self.node_count)
    }

    /// The directed support graph of this graph with self-loops.
    pub fn support(&self) -> SupportGraph {
        SupportGraph::from_matrix(&self.adjacency_with_self_loops())
    }
}

/// Directed graph given by the nonzero pattern of a nonnegative matrix:
/// `i -> j` iff entry `(i, j)` is nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportGraph {
    node_count: usize,
    succ: Vec<Vec<usize>>,
}

impl SupportGraph {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let succ = (0..n).map(|i| (0..n).filter(|&j| m[(i, j)] != 0.0).collect()).collect();
        Self { node_count: n, succ }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn has_arc(&self, from: usize, to: usize) -> bool {
        self.succ[from].binary_search(&to).is_ok()
    }

    /// All arcs `(from, to)` in row-major order, self-loops included.
    pub fn arcs(&self) -> Vec<(usize, usize)> {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().map(move |&j| (i, j)))
            .collect()
    }

    fn bfs_from(&self, source: usize, reverse: bool) -> Vec<Option<usize>> {
        let n = self.node_count;
        let mut dist = vec![None; n];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            let next: Vec<usize> = if reverse {
                (0..n).filter(|&v| self.has_arc(v, u)).collect()
            } else {
                self.succ[u].clone()
            };
            for v in next {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.bfs_from(0, false).iter().all(Option::is_some) && self.bfs_from(0, true).iter().all(Option::is_some)
    }

    /// Directed diameter, `None` when not strongly connected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.node_count {
            for d in self.bfs_from(s, false) {
                best = best.max(d?);
            }
        }
        Some(best)
    }
}

/// Definition-style composition `g1 ∘ g2`: support of `(adj1 + I)(adj2 + I)`.
pub fn compose(g1: &Graph, g2: &Graph) -> Result<SupportGraph, GraphError> {
    if g1.node_count() != g2.node_count() {
        return Err(GraphError::SizeMismatch(g1.node_count(), g2.node_count()));
    }
    Ok(SupportGraph::from_matrix(
        &(g1.adjacency_with_self_loops() * g2.adjacency_with_self_loops()),
    ))
}

/// Composition of a whole interval of graphs, in order.
pub fn compose_all<'a, I>(graphs: I) -> Result<SupportGraph, GraphError>
where
    I: IntoIterator<Item = &'a Graph>,
{
    let mut iter = graphs.into_iter();
    let first = iter.next().ok_or(GraphError::EmptySchedule)?;
    let n = first.node_count();
    let mut acc = first.adjacency_with_self_loops();
    for g in iter {
        if g.node_count() != n {
            return Err(GraphError::SizeMismatch(n, g.node_count()));
        }
        acc *= g.adjacency_with_self_loops();
        // keep entries as a 0/1 pattern so long products cannot overflow
        acc.apply(|v| *v = if *v != 0.0 { 1.0 } else { 0.0 });
    }
    Ok(SupportGraph::from_matrix(&acc))
}

/// A communication graph per synchronous round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphSchedule {
    Static(Graph),
    /// Round `k` uses `graphs[k % graphs.len()]`.
    Periodic(Vec<Graph>),
}

impl GraphSchedule {
    pub fn periodic(graphs: Vec<Graph>) -> Result<Self, GraphError> {
        let first = graphs.first().ok_or(GraphError::EmptySchedule)?;
        let n = first.node_count();
        if let Some(g) = graphs.iter().find(|g| g.node_count() != n) {
            return Err(GraphError::SizeMismatch(n, g.node_count()));
        }
        Ok(Self::Periodic(graphs))
    }

    pub fn node_count(&self) -> usize {
        match self {
            Self::Static(g) => g.node_count(),
            Self::Periodic(gs) => gs[0].node_count(),
        }
    }

    pub fn period(&self) -> usize {
        match self {
            Self::Static(_) => 1,
            Self::Periodic(gs) => gs.len(),
        }
    }

    pub fn graph_at(&self, round: usize) -> &Graph {
        match self {
            Self::Static(g) => g,
            Self::Periodic(gs) => &gs[round % gs.len()],
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Self::Static(_))
    }

    /// Compositions of every distinct window-aligned interval
    /// `[w*k, w*(k+1))`; the pattern repeats after `lcm(period, w) / w` windows.
    pub fn window_compositions(&self, window: usize) -> Vec<SupportGraph> {
        let window = window.max(1);
        let windows = lcm(self.period(), window) / window;
        (0..windows)
            .map(|k| {
                compose_all((k * window..(k + 1) * window).map(|r| self.graph_at(r)))
                    .expect("schedule graphs share node count")
            })
            .collect()
    }

    /// Every window-aligned composition is strongly connected.
    pub fn is_repeatedly_jointly_strongly_connected(&self, window: usize) -> bool {
        self.window_compositions(window)
            .iter()
            .all(SupportGraph::is_strongly_connected)
    }

    /// Rounds after which max-consensus is guaranteed to have spread the
    /// global maximum to everyone, or `None` if not jointly connected.
    ///
    /// Static graphs need `diameter` rounds. For schedules, each window acts
    /// as one hop on its composition; when all windows compose to the same
    /// support the bound is `window * diam`, otherwise `window * (N - 1)`.
    pub fn consensus_round_bound(&self, window: usize) -> Option<usize> {
        match self {
            Self::Static(g) => g.diameter().ok(),
            Self::Periodic(_) => {
                let window = window.max(1);
                let comps = self.window_compositions(window);
                if !comps.iter().all(SupportGraph::is_strongly_connected) {
                    return None;
                }
                if comps.windows(2).all(|w| w[0] == w[1]) {
                    comps[0].diameter().map(|d| d * window)
                } else {
                    Some(window * (self.node_count() - 1))
                }
            }
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
