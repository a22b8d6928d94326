//! Distributed propagation: every agent keeps its own full copy of each
//! trace and only talks to the neighbors of the current communication graph.
//!
//! Per step and trace, agent `i` owns block row `i` of the two implicit
//! systems. The co-state rows need block column `i` of `AA`, i.e. the
//! products `-B_j K_ji` of its coupling neighbors, which are exchanged once
//! before the run.

use log::{debug, warn};

use super::{
    check_supporting, DisturbanceMode, HyperplaneTrace, ReachConfig, ReachError, ReachResult, ReachView, RunStats,
    TraceStep, DEGENERATE_COSTATE,
};
use crate::consensus::{max_consensus_from, Candidate};
use crate::dle::{dle_iterate, DleRows, DleSolution};
use crate::graph::{Graph, GraphSchedule};
use crate::linalg::{Matrix, Vector};
use crate::model::{assign_vertex_shares, closed_loop_block_row, InformationSet};
use crate::polytope::{self, VPolytope};

struct LocalAgent {
    offset: usize,
    dim: usize,
    b1: Matrix,
    w: VPolytope,
    w_offset: usize,
    /// `(vertex id, vertex, BB vertex)` for this agent's share.
    share: Vec<(usize, Vector, Vector)>,
}

/// Per-trace state, one entry per agent.
struct TraceState {
    lambda: Vec<Vector>,
    contact: Vec<Vector>,
    warm_costate: Option<Vec<Vector>>,
    warm_state: Option<Vec<Vector>>,
}

struct Network<'a> {
    schedule: &'a GraphSchedule,
    round: usize,
    window: usize,
    stats: RunStats,
}

impl Network<'_> {
    /// Solves every trace's system from the same round; the network then
    /// advances by the slowest solve.
    fn solve_all(
        &mut self,
        rows: &DleRows,
        rhs: Vec<Vec<Vector>>,
        warm: Vec<Option<&[Vector]>>,
        cfg: &ReachConfig,
        step: usize,
        phase: &'static str,
    ) -> Result<Vec<DleSolution>, ReachError> {
        let mut out = Vec::with_capacity(rhs.len());
        let mut slowest = 0;
        for (trace, (b, prev)) in rhs.iter().zip(warm).enumerate() {
            let err = |source| ReachError::Dle {
                step,
                trace,
                phase,
                source,
            };
            let state = rows.state(b, prev).map_err(err)?;
            let sol = dle_iterate(state, self.schedule, self.round, cfg.dle_tol, cfg.dle_max_iter).map_err(err)?;
            let it = sol.report.iterations;
            self.stats.dle_solves += 1;
            self.stats.dle_iterations += it;
            self.stats.max_dle_iterations = self.stats.max_dle_iterations.max(it);
            slowest = slowest.max(it);
            out.push(sol);
        }
        self.round += slowest;
        self.stats.network_rounds = self.round;
        Ok(out)
    }

    /// Rounds until window-aligned, then the schedule's max-consensus bound.
    fn consensus_rounds(&self, cfg: &ReachConfig) -> Result<(usize, usize), ReachError> {
        let pad = if self.schedule.is_static() {
            0
        } else {
            (self.window - self.round % self.window) % self.window
        };
        let rounds = match cfg.consensus_rounds {
            Some(r) => r,
            None => self
                .schedule
                .consensus_round_bound(self.window)
                .ok_or(ReachError::NotJointlyConnected { window: self.window })?,
        };
        Ok((pad, rounds))
    }
}

fn block(v: &Vector, offset: usize, dim: usize) -> Vector {
    v.rows(offset, dim).into_owned()
}

/// Runs the distributed engine. `coupling` defines the dynamics; messages
/// travel over `schedule`.
///
/// Returns one view per agent, built only from that agent's copies.
pub fn reach_distributed(
    agents: &[InformationSet],
    coupling: &Graph,
    schedule: &GraphSchedule,
    cfg: &ReachConfig,
) -> Result<ReachResult, ReachError> {
    cfg.validate()?;
    let n_agents = agents.len();
    if coupling.node_count() != n_agents || schedule.node_count() != n_agents {
        return Err(ReachError::Config(format!(
            "{n_agents} agents, coupling graph has {}, schedule has {} nodes",
            coupling.node_count(),
            schedule.node_count()
        )));
    }
    for (i, a) in agents.iter().enumerate() {
        if a.agent_id != i {
            return Err(ReachError::Config(format!(
                "agent at position {i} has id {}",
                a.agent_id
            )));
        }
    }
    let window = cfg.window.unwrap_or(schedule.period());
    if !schedule.is_repeatedly_jointly_strongly_connected(window) {
        warn!("communication schedule is not jointly connected over window {window}");
    }

    // offline data: block sizes and the disturbance vertex shares
    let dims: Vec<usize> = agents.iter().map(|a| a.model.state_dim()).collect();
    let w_dims: Vec<usize> = agents.iter().map(|a| a.model.disturbance_dim()).collect();
    let n: usize = dims.iter().sum();
    let offsets: Vec<usize> = prefix(&dims);
    let w_offsets: Vec<usize> = prefix(&w_dims);
    let m: usize = w_dims.iter().sum();
    let mut local = Vec::with_capacity(n_agents);
    let shares = match cfg.disturbance {
        DisturbanceMode::Stacked => {
            let factors: Vec<VPolytope> = agents.iter().map(|a| a.model.w.clone()).collect();
            let ww = polytope::product(&factors, cfg.vertex_cap)?;
            let ids = if agents.iter().all(|a| a.vertex_share.is_empty()) {
                assign_vertex_shares(n_agents, ww.len())
            } else {
                agents.iter().map(|a| a.vertex_share.clone()).collect()
            };
            let mut covered = vec![false; ww.len()];
            for &id in ids.iter().flatten() {
                if id >= ww.len() {
                    return Err(ReachError::Config(format!("vertex share id {id} out of range")));
                }
                covered[id] = true;
            }
            if let Some(missing) = covered.iter().position(|c| !c) {
                return Err(ReachError::Config(format!("vertex {missing} is in no agent's share")));
            }
            let bb_of = |v: &Vector| {
                let mut out = Vector::zeros(n);
                for (j, a) in agents.iter().enumerate() {
                    let bv = &a.model.b1 * v.rows(w_offsets[j], w_dims[j]);
                    out.rows_mut(offsets[j], dims[j]).copy_from(&bv);
                }
                out
            };
            ids.into_iter()
                .map(|s| {
                    s.into_iter()
                        .map(|id| {
                            let v = ww.vertices()[id].clone();
                            let bv = bb_of(&v);
                            (id, v, bv)
                        })
                        .collect()
                })
                .collect()
        }
        DisturbanceMode::Product => vec![Vec::new(); n_agents],
    };
    for ((i, a), share) in agents.iter().enumerate().zip(shares) {
        local.push(LocalAgent {
            offset: offsets[i],
            dim: dims[i],
            b1: a.model.b1.clone(),
            w: a.model.w.clone(),
            w_offset: w_offsets[i],
            share,
        });
    }

    // setup exchange: each agent learns -B_j K_ji from its coupling neighbors
    let block_rows = agents
        .iter()
        .map(|a| closed_loop_block_row(a, coupling))
        .collect::<Result<Vec<_>, _>>()?;
    let h = cfg.scheme.solve_step(cfg.dt);
    let mut costate_rows = Vec::with_capacity(n_agents);
    let mut state_rows = Vec::with_capacity(n_agents);
    let mut init_rows = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let d = dims[i];
        let eye = Matrix::identity(d, d);
        let mut c = Matrix::zeros(d, n);
        let mut s = Matrix::zeros(d, n);
        c.view_mut((0, offsets[i]), (d, d)).copy_from(&eye);
        s.view_mut((0, offsets[i]), (d, d)).copy_from(&eye);
        for j in std::iter::once(i).chain(coupling.neighbors(i).iter().copied()) {
            let a_ji = block_rows[j].block(i).expect("coupling is symmetric");
            let a_ij = block_rows[i].block(j).expect("own row covers neighbors");
            let mut cv = c.view_mut((0, offsets[j]), (d, dims[j]));
            cv += a_ji.transpose() * h;
            let mut sv = s.view_mut((0, offsets[j]), (d, dims[j]));
            sv -= a_ij * h;
        }
        costate_rows.push(c);
        state_rows.push(s);
        let mut r = Matrix::zeros(2 * d, 2 * n);
        r.view_mut((0, offsets[i]), (d, d)).copy_from(&eye);
        r.view_mut((d, n + offsets[i]), (d, d)).copy_from(&eye);
        init_rows.push(r);
    }
    let costate_rows = DleRows::new(costate_rows, n)?;
    let state_rows = DleRows::new(state_rows, n)?;
    let init_rows = DleRows::new(init_rows, 2 * n)?;

    let mut net = Network {
        schedule,
        round: 0,
        window,
        stats: RunStats::default(),
    };

    // initial co-states and contacts: each agent contributes its own blocks
    let mut faces = Vec::new();
    for (i, a) in agents.iter().enumerate() {
        for f in a.model.x0.h.halfspaces() {
            faces.push((i, f.clone()));
        }
    }
    let mut init_rhs = Vec::with_capacity(faces.len());
    for (j, (owner, face)) in faces.iter().enumerate() {
        let mut rhs = Vec::with_capacity(n_agents);
        for (i, a) in agents.iter().enumerate() {
            let dir = if i == *owner {
                face.normal.clone()
            } else {
                Vector::zeros(dims[i])
            };
            let (v, support, _) = a.model.x0.v.support_vertex(&dir)?;
            if i == *owner {
                check_supporting(j, face.offset, support)?;
            }
            let mut b = Vector::zeros(2 * dims[i]);
            b.rows_mut(0, dims[i]).copy_from(&dir);
            b.rows_mut(dims[i], dims[i]).copy_from(v);
            rhs.push(b);
        }
        init_rhs.push(rhs);
    }
    let warm = vec![None; faces.len()];
    let init = net.solve_all(&init_rows, init_rhs, warm, cfg, 0, "initial")?;
    let mut states: Vec<TraceState> = init
        .into_iter()
        .map(|sol| TraceState {
            lambda: sol.estimates.iter().map(|e| block(e, 0, n)).collect(),
            contact: sol.estimates.iter().map(|e| block(e, n, n)).collect(),
            warm_costate: None,
            warm_state: None,
        })
        .collect();
    let mut views: Vec<ReachView> = (0..n_agents)
        .map(|i| ReachView {
            agent: Some(i),
            traces: faces
                .iter()
                .enumerate()
                .map(|(j, (owner, _))| HyperplaneTrace {
                    face: j,
                    owner: *owner,
                    steps: vec![TraceStep::new(
                        states[j].lambda[i].clone(),
                        states[j].contact[i].clone(),
                    )],
                })
                .collect(),
        })
        .collect();

    for k in 0..cfg.n_steps() {
        // co-state: (I + h AAᵀ) μ = λ
        let rhs = states
            .iter()
            .map(|t| {
                local
                    .iter()
                    .enumerate()
                    .map(|(i, l)| block(&t.lambda[i], l.offset, l.dim))
                    .collect()
            })
            .collect();
        let warm = states
            .iter()
            .map(|t| Some(t.warm_costate.as_deref().unwrap_or(&t.lambda)))
            .collect();
        let mu: Vec<Vec<Vector>> = net
            .solve_all(&costate_rows, rhs, warm, cfg, k, "co-state")?
            .into_iter()
            .map(|s| s.estimates)
            .collect();

        // extremal disturbance; `known[t][i]` is agent i's view of W*
        let mut known: Vec<Vec<(Vector, Option<usize>)>> = Vec::with_capacity(states.len());
        match cfg.disturbance {
            DisturbanceMode::Stacked => {
                let (pad, rounds) = net.consensus_rounds(cfg)?;
                let start = net.round + pad;
                for mu_t in &mu {
                    let cands: Vec<Candidate> = local
                        .iter()
                        .enumerate()
                        .map(|(i, l)| {
                            let mut best = Candidate::sentinel(m);
                            for (id, v, bv) in &l.share {
                                let c = Candidate {
                                    value: mu_t[i].dot(bv),
                                    payload: v.clone(),
                                    id: *id,
                                };
                                if c.beats(&best) {
                                    best = c;
                                }
                            }
                            best
                        })
                        .collect();
                    let agreed = max_consensus_from(&cands, schedule, start, rounds)
                        .map_err(|source| ReachError::Consensus { step: k, source })?;
                    known.push(agreed.into_iter().map(|c| (c.payload, Some(c.id))).collect());
                }
                net.round = start + rounds;
                net.stats.consensus_rounds += pad + rounds;
                net.stats.network_rounds = net.round;
            }
            DisturbanceMode::Product => {
                for mu_t in &mu {
                    let mut row = Vec::with_capacity(n_agents);
                    for (i, l) in local.iter().enumerate() {
                        let g = l.b1.transpose() * block(&mu_t[i], l.offset, l.dim);
                        let (v, _, _) = l.w.support_vertex(&g)?;
                        let mut w = Vector::from_element(m, f64::NAN);
                        w.rows_mut(l.w_offset, v.len()).copy_from(v);
                        row.push((w, None));
                    }
                    known.push(row);
                }
            }
        }

        // contact: (I - h AA) ν = ξ + h BB W
        let rhs = states
            .iter()
            .zip(&known)
            .map(|(t, kn)| {
                local
                    .iter()
                    .enumerate()
                    .map(|(i, l)| {
                        let w_i = kn[i].0.rows(l.w_offset, l.b1.ncols()).into_owned();
                        block(&t.contact[i], l.offset, l.dim) + &l.b1 * w_i * h
                    })
                    .collect()
            })
            .collect();
        let warm = states
            .iter()
            .map(|t| Some(t.warm_state.as_deref().unwrap_or(&t.contact)))
            .collect();
        let nu: Vec<Vec<Vector>> = net
            .solve_all(&state_rows, rhs, warm, cfg, k, "state")?
            .into_iter()
            .map(|s| s.estimates)
            .collect();

        for (j, t) in states.iter_mut().enumerate() {
            for i in 0..n_agents {
                let lambda = cfg.scheme.extrapolate(&mu[j][i], &t.lambda[i]);
                if lambda.norm() < DEGENERATE_COSTATE {
                    return Err(ReachError::DegenerateCostate { trace: j, step: k + 1 });
                }
                let contact = cfg.scheme.extrapolate(&nu[j][i], &t.contact[i]);
                let steps = &mut views[i].traces[j].steps;
                let last = steps.last_mut().expect("traces start with one step");
                last.w_star = Some(known[j][i].0.clone());
                last.w_id = known[j][i].1;
                steps.push(TraceStep::new(lambda.clone(), contact.clone()));
                t.lambda[i] = lambda;
                t.contact[i] = contact;
            }
            t.warm_costate = Some(mu[j].clone());
            t.warm_state = Some(nu[j].clone());
        }
        debug!("step {} done at network round {}", k + 1, net.round);
    }

    Ok(ReachResult {
        times: cfg.times(),
        views,
        stats: net.stats,
    })
}

fn prefix(dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect()
}
