#![allow(dead_code)]

use distreach::graph::Graph;
use distreach::linalg::{Matrix, Vector};
use proptest::prelude::*;

/// A connected graph: a random spanning tree plus a few extra edges.
pub fn connected_graph(n: usize) -> impl Strategy<Value = Graph> {
    (
        proptest::collection::vec(any::<prop::sample::Index>(), n.saturating_sub(1)),
        proptest::collection::vec((0..n, 0..n), 0..n),
    )
        .prop_map(move |(parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents
                .iter()
                .enumerate()
                .map(|(i, p)| (p.index(i + 1), i + 1))
                .collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            let mut uniq: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
            uniq.sort();
            uniq.dedup();
            Graph::new(n, &uniq).unwrap()
        })
}

pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-1.0..1.0f64, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

pub fn vector(n: usize) -> impl Strategy<Value = Vector> {
    proptest::collection::vec(-1.0..1.0f64, n).prop_map(Vector::from_vec)
}

/// A consistent system `A x = b` with `A` of full column rank, rows split
/// over `agents` with every agent owning at least one row.
#[derive(Debug, Clone)]
pub struct SplitSystem {
    pub a: Matrix,
    pub b: Vector,
    pub x: Vector,
    pub owner: Vec<usize>,
    pub agents: usize,
}

pub fn split_system(max_agents: usize, max_dim: usize) -> impl Strategy<Value = SplitSystem> {
    (2usize..=max_agents, 1usize..=max_dim)
        .prop_flat_map(|(agents, n)| {
            let m = n.max(agents) + 1;
            (
                Just(agents),
                matrix(m, n),
                vector(n),
                proptest::collection::vec(0..agents, m - agents),
            )
        })
        .prop_map(|(agents, a, x, extra)| {
            // Strengthen the diagonal so A has full column rank and moderate conditioning.
            let mut a = a;
            for k in 0..a.ncols() {
                a[(k, k)] += 3.0;
            }
            let b = &a * &x;
            let mut owner: Vec<usize> = (0..agents).collect();
            owner.extend(extra);
            owner.sort();
            SplitSystem { a, b, x, owner, agents }
        })
}

use distreach::model::{AgentModel, InformationSet};
use distreach::polytope::{box_polytope, VPolytope};
use std::collections::BTreeMap;

/// A small networked system: connected coupling, equal state dimensions,
/// box initial sets and box disturbances.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: Graph,
    pub agents: Vec<InformationSet>,
}

fn agent(
    i: usize,
    g: &Graph,
    d: usize,
    (a, b, b1, k_self, k_nb, lo, width, w_half): (Matrix, Matrix, Matrix, Matrix, Vec<Matrix>, Vector, Vector, Vector),
) -> InformationSet {
    let k_neighbor: BTreeMap<usize, Matrix> = g.neighbors(i).iter().zip(k_nb).map(|(&j, k)| (j, k)).collect();
    let hi = &lo + width;
    let model = AgentModel {
        a,
        b,
        b1,
        k_self,
        k_neighbor,
        x0: box_polytope(&lo, &hi).unwrap(),
        w: box_polytope(&(-&w_half), &w_half).unwrap().v,
        rho: None,
    };
    assert_eq!(model.state_dim(), d);
    InformationSet::new(i, model, g).unwrap()
}

pub fn network(max_agents: usize) -> impl Strategy<Value = Network> {
    (1usize..=max_agents, 1usize..=2, 1usize..=2, 1usize..=2)
        .prop_flat_map(|(n, d, nu, nw)| (Just((n, d, nu, nw)), connected_graph(n)))
        .prop_flat_map(|((n, d, nu, nw), g)| {
            let per_agent: Vec<_> = (0..n)
                .map(|i| {
                    (
                        matrix(d, d),
                        matrix(d, nu),
                        matrix(d, nw),
                        matrix(nu, d),
                        proptest::collection::vec(matrix(nu, d), g.degree(i)),
                        vector(d),
                        proptest::collection::vec(0.1..1.0f64, d).prop_map(Vector::from_vec),
                        proptest::collection::vec(0.05..0.5f64, nw).prop_map(Vector::from_vec),
                    )
                })
                .collect();
            (Just(g), Just(d), per_agent)
        })
        .prop_map(|(g, d, parts)| {
            let agents = parts.into_iter().enumerate().map(|(i, p)| agent(i, &g, d, p)).collect();
            Network { graph: g, agents }
        })
}

/// `w` with its vertex set replaced.
pub fn with_disturbance(net: &Network, f: impl Fn(&VPolytope) -> VPolytope) -> Network {
    let mut out = net.clone();
    for a in &mut out.agents {
        a.model.w = f(&a.model.w);
    }
    out
}
