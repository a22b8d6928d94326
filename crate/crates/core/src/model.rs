//! Agent dynamics, local information sets and the stacked closed-loop system.
//!
//! Agent `i` evolves as `x_i' = A_i x_i + B_i u_i + B1_i w_i` under the
//! neighborhood feedback `u_i = K_ii x_i + Σ_j K_ij (x_i - x_j)`. Expanding
//! that law gives block row `i` of the stacked matrix directly:
//! diagonal `A_i + B_i K_ii + B_i Σ_j K_ij`, off-diagonal `-B_i K_ij`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::Graph;
use crate::linalg::{self, LinalgError, Matrix};
use crate::polytope::{self, PolytopeError, PolytopePair, VPolytope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("agent {agent}: {what} has shape {got:?}, expected {expected:?}")]
    Shape {
        agent: usize,
        what: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("agent {agent}: missing gain K_{agent}{neighbor} for graph neighbor {neighbor}")]
    MissingGain { agent: usize, neighbor: usize },
    #[error("agent {agent}: gain given for {other}, which is not a neighbor")]
    UnexpectedGain { agent: usize, other: usize },
    #[error("agents {0} and {1} are coupled but have different state dimensions")]
    NeighborDim(usize, usize),
    #[error("graph has {graph} nodes but {agents} agents were given")]
    AgentCount { graph: usize, agents: usize },
    #[error("agent {agent}: {source}")]
    Set {
        agent: usize,
        #[source]
        source: PolytopeError,
    },
    #[error("stacked set: {0}")]
    Stacked(#[from] PolytopeError),
    #[error("agent {agent}: {source}")]
    Linalg {
        agent: usize,
        #[source]
        source: LinalgError,
    },
}

/// Local dynamics, gains and sets of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub a: Matrix,
    pub b: Matrix,
    pub b1: Matrix,
    pub k_self: Matrix,
    pub k_neighbor: BTreeMap<usize, Matrix>,
    pub x0: PolytopePair,
    pub w: VPolytope,
    pub rho: Option<f64>,
}

impl AgentModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.b1.ncols()
    }

    /// Checks mutual matrix and set dimensions (not graph consistency).
    pub fn validate(&self, agent: usize) -> Result<(), ModelError> {
        let nx = self.a.nrows();
        let nu = self.b.ncols();
        let nw = self.b1.ncols();
        let shape = |what: &str, m: &Matrix, expected: (usize, usize)| {
            if m.shape() != expected {
                Err(ModelError::Shape {
                    agent,
                    what: what.to_string(),
                    expected,
                    got: m.shape(),
                })
            } else {
                Ok(())
            }
        };
        shape("A", &self.a, (nx, nx))?;
        shape("B", &self.b, (nx, nu))?;
        shape("B1", &self.b1, (nx, nw))?;
        shape("K_self", &self.k_self, (nu, nx))?;
        for (j, k) in &self.k_neighbor {
            shape(&format!("K_neighbor[{j}]"), k, (nu, nx))?;
        }
        for m in [&self.a, &self.b, &self.b1, &self.k_self]
            .into_iter()
            .chain(self.k_neighbor.values())
        {
            linalg::check_finite(m).map_err(|source| ModelError::Linalg { agent, source })?;
        }
        if self.x0.dim() != nx {
            return Err(ModelError::Set {
                agent,
                source: PolytopeError::DimensionMismatch {
                    expected: nx,
                    got: self.x0.dim(),
                },
            });
        }
        if self.w.dim() != nw {
            return Err(ModelError::Set {
                agent,
                source: PolytopeError::DimensionMismatch {
                    expected: nw,
                    got: self.w.dim(),
                },
            });
        }
        Ok(())
    }
}

/// Everything agent `i` knows: its own model and its neighbor ids.
///
/// Built from one agent's model only, so no other agent's `(A_j, B_j)`
/// can leak in.
#[derive(Debug, Clone, PartialEq)]
pub struct InformationSet {
    pub agent_id: usize,
    pub model: AgentModel,
    pub neighbors: Vec<usize>,
    /// Ids of the stacked disturbance vertices this agent is responsible for.
    pub vertex_share: Vec<usize>,
}

impl InformationSet {
    pub fn new(agent_id: usize, model: AgentModel, graph: &Graph) -> Result<Self, ModelError> {
        model.validate(agent_id)?;
        let neighbors = graph.neighbors(agent_id).to_vec();
        for &j in &neighbors {
            if !model.k_neighbor.contains_key(&j) {
                return Err(ModelError::MissingGain {
                    agent: agent_id,
                    neighbor: j,
                });
            }
        }
        if let Some(&other) = model.k_neighbor.keys().find(|k| !neighbors.contains(k)) {
            return Err(ModelError::UnexpectedGain { agent: agent_id, other });
        }
        Ok(Self {
            agent_id,
            model,
            neighbors,
            vertex_share: Vec::new(),
        })
    }
}

/// Agent `i`'s block row of the stacked closed-loop matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub agent: usize,
    pub diagonal: Matrix,
    /// `(j, -B_i K_ij)` for each neighbor `j`, ascending.
    pub off_diagonal: Vec<(usize, Matrix)>,
}

impl BlockRow {
    pub fn block(&self, j: usize) -> Option<&Matrix> {
        if j == self.agent {
            return Some(&self.diagonal);
        }
        self.off_diagonal.iter().find(|(k, _)| *k == j).map(|(_, m)| m)
    }
}

pub fn closed_loop_block_row(info: &InformationSet, graph: &Graph) -> Result<BlockRow, ModelError> {
    let m = &info.model;
    let agent = info.agent_id;
    let mut gain_sum = m.k_self.clone();
    let mut off_diagonal = Vec::new();
    for &j in graph.neighbors(agent) {
        let k = m
            .k_neighbor
            .get(&j)
            .ok_or(ModelError::MissingGain { agent, neighbor: j })?;
        gain_sum += k;
        off_diagonal.push((j, -(&m.b * k)));
    }
    Ok(BlockRow {
        agent,
        diagonal: &m.a + &m.b * gain_sum,
        off_diagonal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssembleOptions {
    pub vertex_cap: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            vertex_cap: polytope::DEFAULT_VERTEX_CAP,
        }
    }
}

/// The centralized view: `ξ' = AA ξ + BB W`, `ξ(t0) ∈ Ξ0`, `W ∈ WW`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    pub aa: Matrix,
    pub bb: Matrix,
    pub xi0: PolytopePair,
    pub ww: VPolytope,
    /// Per-agent disturbance sets, the factors of `ww`.
    pub w_factors: Vec<VPolytope>,
    pub block_dims: Vec<usize>,
    pub w_dims: Vec<usize>,
    /// Owning agent of each stacked face.
    pub face_owner: Vec<usize>,
}

impl StackedSystem {
    pub fn agent_count(&self) -> usize {
        self.block_dims.len()
    }

    pub fn state_dim(&self) -> usize {
        self.aa.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.bb.ncols()
    }

    pub fn state_offset(&self, agent: usize) -> usize {
        self.block_dims[..agent].iter().sum()
    }

    pub fn w_offset(&self, agent: usize) -> usize {
        self.w_dims[..agent].iter().sum()
    }
}

pub fn assemble_stacked(
    agents: &[InformationSet],
    graph: &Graph,
    opts: AssembleOptions,
) -> Result<StackedSystem, ModelError> {
    if graph.node_count() != agents.len() {
        return Err(ModelError::AgentCount {
            graph: graph.node_count(),
            agents: agents.len(),
        });
    }
    let block_dims: Vec<usize> = agents.iter().map(|a| a.model.state_dim()).collect();
    let w_dims: Vec<usize> = agents.iter().map(|a| a.model.disturbance_dim()).collect();
    for (a, b) in graph.edges() {
        if block_dims[a] != block_dims[b] {
            return Err(ModelError::NeighborDim(a, b));
        }
    }
    let n: usize = block_dims.iter().sum();
    let m: usize = w_dims.iter().sum();
    let offsets: Vec<usize> = block_dims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();

    let mut aa = Matrix::zeros(n, n);
    let mut bb = Matrix::zeros(n, m);
    let mut w_off = 0;
    for info in agents {
        let i = info.agent_id;
        let row = closed_loop_block_row(info, graph)?;
        let d = block_dims[i];
        aa.view_mut((offsets[i], offsets[i]), (d, d)).copy_from(&row.diagonal);
        for (j, blk) in &row.off_diagonal {
            aa.view_mut((offsets[i], offsets[*j]), (d, block_dims[*j]))
                .copy_from(blk);
        }
        bb.view_mut((offsets[i], w_off), (d, w_dims[i]))
            .copy_from(&info.model.b1);
        w_off += w_dims[i];
    }

    let x0_h: Vec<_> = agents.iter().map(|a| a.model.x0.h.clone()).collect();
    let x0_v: Vec<_> = agents.iter().map(|a| a.model.x0.v.clone()).collect();
    let w_factors: Vec<_> = agents.iter().map(|a| a.model.w.clone()).collect();
    let face_owner = agents
        .iter()
        .flat_map(|a| std::iter::repeat_n(a.agent_id, a.model.x0.h.len()))
        .collect();
    let xi0 = PolytopePair::new(polytope::product_h(&x0_h)?, polytope::product(&x0_v, opts.vertex_cap)?)?;
    let ww = polytope::product(&w_factors, opts.vertex_cap)?;
    Ok(StackedSystem {
        aa,
        bb,
        xi0,
        ww,
        w_factors,
        block_dims,
        w_dims,
        face_owner,
    })
}

/// Round-robin partition of vertex ids `0..vertex_count` over agents.
pub fn assign_vertex_shares(agent_count: usize, vertex_count: usize) -> Vec<Vec<usize>> {
    let mut shares = vec![Vec::new(); agent_count];
    for v in 0..vertex_count {
        shares[v % agent_count].push(v);
    }
    shares
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{ball_vpolytope, box_polytope};
    use nalgebra::{dmatrix, dvector, DMatrix};

    pub(crate) fn scalar_agent(k_self: f64, neighbors: &[(usize, f64)]) -> AgentModel {
        AgentModel {
            a: dmatrix![0.0],
            b: dmatrix![1.0],
            b1: dmatrix![1.0],
            k_self: dmatrix![k_self],
            k_neighbor: neighbors.iter().map(|(j, k)| (*j, dmatrix![*k])).collect(),
            x0: box_polytope(&dvector![0.0], &dvector![1.0]).unwrap(),
            w: ball_vpolytope(1.0, 1, 0).unwrap(),
            rho: Some(1.0),
        }
    }

    #[test]
    fn block_row_without_neighbors() {
        let g = Graph::empty(1).unwrap();
        let mut m = scalar_agent(-0.5, &[]);
        m.a = dmatrix![2.0];
        let info = InformationSet::new(0, m, &g).unwrap();
        let row = closed_loop_block_row(&info, &g).unwrap();
        assert_eq!(row.diagonal, dmatrix![1.5]);
        assert!(row.off_diagonal.is_empty());
    }

    #[test]
    fn zero_gains_give_block_diagonal_a() {
        let g = Graph::path(2).unwrap();
        let mut a0 = scalar_agent(0.0, &[(1, 0.0)]);
        a0.a = dmatrix![3.0];
        let mut a1 = scalar_agent(0.0, &[(0, 0.0)]);
        a1.a = dmatrix![-4.0];
        let infos = vec![
            InformationSet::new(0, a0, &g).unwrap(),
            InformationSet::new(1, a1, &g).unwrap(),
        ];
        let sys = assemble_stacked(&infos, &g, AssembleOptions::default()).unwrap();
        assert_eq!(sys.aa, dmatrix![3.0, 0.0; 0.0, -4.0]);
    }

    #[test]
    fn coupled_integrators_hand_expansion() {
        let g = Graph::path(2).unwrap();
        let infos = vec![
            InformationSet::new(0, scalar_agent(-1.0, &[(1, -1.0)]), &g).unwrap(),
            InformationSet::new(1, scalar_agent(-1.0, &[(0, -1.0)]), &g).unwrap(),
        ];
        let sys = assemble_stacked(&infos, &g, AssembleOptions::default()).unwrap();
        assert_eq!(sys.aa, dmatrix![-2.0, 1.0; 1.0, -2.0]);
        assert_eq!(sys.bb, DMatrix::identity(2, 2));
        assert_eq!(
            sys.ww.vertices(),
            &[
                dvector![-1.0, -1.0],
                dvector![-1.0, 1.0],
                dvector![1.0, -1.0],
                dvector![1.0, 1.0]
            ]
        );
        assert_eq!(sys.face_owner, vec![0, 0, 1, 1]);
    }

    #[test]
    fn single_agent_is_unchanged() {
        let g = Graph::empty(1).unwrap();
        let m = AgentModel {
            a: dmatrix![0.0, 1.0; -1.0, 0.0],
            b: dmatrix![0.0; 1.0],
            b1: dmatrix![1.0; 0.0],
            k_self: dmatrix![-1.0, -2.0],
            k_neighbor: BTreeMap::new(),
            x0: box_polytope(&dvector![0.0, 0.0], &dvector![1.0, 1.0]).unwrap(),
            w: ball_vpolytope(1.0, 1, 0).unwrap(),
            rho: None,
        };
        let info = InformationSet::new(0, m.clone(), &g).unwrap();
        let sys = assemble_stacked(&[info], &g, AssembleOptions::default()).unwrap();
        assert_eq!(sys.aa, &m.a + &m.b * &m.k_self);
        assert_eq!(sys.bb, m.b1);
        assert_eq!(sys.xi0, m.x0);
        assert_eq!(sys.ww, m.w);
    }

    #[test]
    fn three_scalar_agents_give_unit_cube() {
        let g = Graph::path(3).unwrap();
        let infos: Vec<_> = (0..3)
            .map(|i| {
                let nb: Vec<_> = g.neighbors(i).iter().map(|&j| (j, 0.0)).collect();
                InformationSet::new(i, scalar_agent(0.0, &nb), &g).unwrap()
            })
            .collect();
        let sys = assemble_stacked(&infos, &g, AssembleOptions::default()).unwrap();
        assert_eq!(sys.xi0.h.len(), 6);
        assert_eq!(sys.xi0.v.len(), 8);
        for v in sys.xi0.v.vertices() {
            assert!(v.iter().all(|x| *x == 0.0 || *x == 1.0));
        }
    }

    #[test]
    fn diffusion_reduces_to_kronecker_laplacian() {
        let g = Graph::cycle(4).unwrap();
        let kappa = 0.7;
        let nx = 2;
        let infos: Vec<_> = (0..4)
            .map(|i| {
                let m = AgentModel {
                    a: DMatrix::zeros(nx, nx),
                    b: DMatrix::identity(nx, nx),
                    b1: DMatrix::identity(nx, nx),
                    k_self: DMatrix::zeros(nx, nx),
                    k_neighbor: g
                        .neighbors(i)
                        .iter()
                        .map(|&j| (j, DMatrix::identity(nx, nx) * -kappa))
                        .collect(),
                    x0: box_polytope(&dvector![0.0, 0.0], &dvector![1.0, 1.0]).unwrap(),
                    w: ball_vpolytope(1.0, 2, 4).unwrap(),
                    rho: Some(1.0),
                };
                InformationSet::new(i, m, &g).unwrap()
            })
            .collect();
        let sys = assemble_stacked(&infos, &g, AssembleOptions::default()).unwrap();
        let expect = g.laplacian().kronecker(&DMatrix::identity(nx, nx)) * -kappa;
        assert!((sys.aa - expect).amax() < 1e-15);
    }

    #[test]
    fn bb_is_block_diagonal_b1() {
        let g = Graph::path(2).unwrap();
        let mut a0 = scalar_agent(0.0, &[(1, 0.0)]);
        a0.b1 = dmatrix![2.0, 3.0];
        a0.w = ball_vpolytope(1.0, 2, 4).unwrap();
        let a1 = scalar_agent(0.0, &[(0, 0.0)]);
        let infos = vec![
            InformationSet::new(0, a0, &g).unwrap(),
            InformationSet::new(1, a1, &g).unwrap(),
        ];
        let sys = assemble_stacked(&infos, &g, AssembleOptions::default()).unwrap();
        assert_eq!(sys.bb, dmatrix![2.0, 3.0, 0.0; 0.0, 0.0, 1.0]);
        assert_eq!(sys.w_dims, vec![2, 1]);
    }

    #[test]
    fn gain_validation() {
        let g = Graph::path(2).unwrap();
        assert_eq!(
            InformationSet::new(0, scalar_agent(0.0, &[]), &g),
            Err(ModelError::MissingGain { agent: 0, neighbor: 1 })
        );
        let g1 = Graph::empty(2).unwrap();
        assert_eq!(
            InformationSet::new(0, scalar_agent(0.0, &[(1, 1.0)]), &g1),
            Err(ModelError::UnexpectedGain { agent: 0, other: 1 })
        );
        let mut bad = scalar_agent(0.0, &[]);
        bad.k_self = dmatrix![1.0, 2.0];
        assert!(matches!(
            InformationSet::new(0, bad, &Graph::empty(1).unwrap()),
            Err(ModelError::Shape { .. })
        ));
    }

    #[test]
    fn vertex_cap_is_enforced() {
        let g = Graph::empty(3).unwrap();
        let infos: Vec<_> = (0..3)
            .map(|i| InformationSet::new(i, scalar_agent(0.0, &[]), &g).unwrap())
            .collect();
        let err = assemble_stacked(&infos, &g, AssembleOptions { vertex_cap: 4 }).unwrap_err();
        assert!(matches!(err, ModelError::Stacked(PolytopeError::VertexCap { .. })));
    }

    #[test]
    fn vertex_share_examples() {
        assert_eq!(assign_vertex_shares(2, 4), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(assign_vertex_shares(1, 3), vec![vec![0, 1, 2]]);
        assert_eq!(assign_vertex_shares(3, 3), vec![vec![0], vec![1], vec![2]]);
    }
}
