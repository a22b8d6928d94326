//! Distributed linear-equation solver by projection consensus.
//!
//! Agent `i` holds rows `(A_i, b_i)` of `A x = b` and an estimate `x̂_i` of
//! the full solution. Each synchronous round it moves toward the mean of its
//! neighbors' estimates, but only inside `Ker(A_i)`:
//!
//! `x̂_i ← x̂_i - P_i (x̂_i - mean_{j ∈ N_i} x̂_j)`
//!
//! so `A_i x̂_i = b_i` holds after initialization and is never lost. The
//! neighbor mean excludes the agent itself. Estimates start at the
//! minimum-norm local solution, which keeps the component of every estimate
//! in `∩ Ker(A_i)` at zero and rules out the period-two oscillation that
//! self-excluding averaging would otherwise show on bipartite graphs.

use log::warn;
use thiserror::Error;

use crate::graph::{Graph, GraphSchedule};
use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::simnet::{Envelope, Outgoing, Protocol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DleError {
    #[error("agent {agent}: rows have {got} columns, expected {expected}")]
    Columns { agent: usize, expected: usize, got: usize },
    #[error("agent {agent}: {rows} rows but {rhs} right-hand-side entries")]
    RhsLength { agent: usize, rows: usize, rhs: usize },
    #[error("agent {agent}: local rows are inconsistent ({source})")]
    AgentInconsistent {
        agent: usize,
        #[source]
        source: LinalgError,
    },
    #[error("schedule has {schedule} nodes, problem has {agents} agents")]
    AgentCount { schedule: usize, agents: usize },
    #[error("no consensus after {iterations} iterations (disagreement {disagreement:.3e}, tolerance {tol:.1e})")]
    NotConverged {
        iterations: usize,
        disagreement: f64,
        tol: f64,
    },
    #[error("warm start has {got} estimates for {expected} agents")]
    WarmStart { expected: usize, got: usize },
}

/// `A x = b` with rows partitioned across agents.
#[derive(Debug, Clone, PartialEq)]
pub struct DleProblem {
    rows: Vec<Matrix>,
    rhs: Vec<Vector>,
    dim: usize,
}

impl DleProblem {
    pub fn new(rows: Vec<Matrix>, rhs: Vec<Vector>, dim: usize) -> Result<Self, DleError> {
        for (agent, (a, b)) in rows.iter().zip(&rhs).enumerate() {
            if a.ncols() != dim {
                return Err(DleError::Columns {
                    agent,
                    expected: dim,
                    got: a.ncols(),
                });
            }
            if a.nrows() != b.len() {
                return Err(DleError::RhsLength {
                    agent,
                    rows: a.nrows(),
                    rhs: b.len(),
                });
            }
        }
        if rows.len() != rhs.len() {
            return Err(DleError::RhsLength {
                agent: rows.len().min(rhs.len()),
                rows: rows.len(),
                rhs: rhs.len(),
            });
        }
        Ok(Self { rows, rhs, dim })
    }

    /// Splits the rows of a global system by `owner[r]`.
    pub fn split(a: &Matrix, b: &Vector, owner: &[usize], agents: usize) -> Result<Self, DleError> {
        let dim = a.ncols();
        let mut rows = Vec::with_capacity(agents);
        let mut rhs = Vec::with_capacity(agents);
        for i in 0..agents {
            let idx: Vec<usize> = (0..a.nrows()).filter(|&r| owner[r] == i).collect();
            rows.push(Matrix::from_fn(idx.len(), dim, |r, c| a[(idx[r], c)]));
            rhs.push(Vector::from_iterator(idx.len(), idx.iter().map(|&r| b[r])));
        }
        Self::new(rows, rhs, dim)
    }

    pub fn agent_count(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self, agent: usize) -> &Matrix {
        &self.rows[agent]
    }

    pub fn rhs(&self, agent: usize) -> &Vector {
        &self.rhs[agent]
    }

    /// Whether every agent's estimate satisfies its own rows.
    pub fn local_residual(&self, agent: usize, x: &Vector) -> f64 {
        if self.rows[agent].nrows() == 0 {
            return 0.0;
        }
        (&self.rows[agent] * x - &self.rhs[agent]).amax()
    }
}

/// Iteration state: per-agent estimates plus cached local projections.
#[derive(Debug, Clone, PartialEq)]
pub struct DleState {
    pub iteration: usize,
    pub estimates: Vec<Vector>,
    projectors: Vec<Matrix>,
    particular: Vec<Vector>,
}

impl DleState {
    pub fn projector(&self, agent: usize) -> &Matrix {
        &self.projectors[agent]
    }

    pub fn agent_count(&self) -> usize {
        self.estimates.len()
    }
}

pub fn dle_init(p: &DleProblem) -> Result<DleState, DleError> {
    let mut projectors = Vec::with_capacity(p.agent_count());
    let mut particular = Vec::with_capacity(p.agent_count());
    for i in 0..p.agent_count() {
        let a = p.rows(i);
        let x = if a.nrows() == 0 {
            Vector::zeros(p.dim())
        } else {
            linalg::min_norm_solution(a, p.rhs(i)).map_err(|source| DleError::AgentInconsistent { agent: i, source })?
        };
        projectors.push(linalg::kernel_projector(a));
        particular.push(x);
    }
    Ok(DleState {
        iteration: 0,
        estimates: particular.clone(),
        projectors,
        particular,
    })
}

/// Initializes from previous estimates re-projected onto each agent's rows.
pub fn dle_warm_start(p: &DleProblem, previous: &[Vector]) -> Result<DleState, DleError> {
    let mut s = dle_init(p)?;
    if previous.len() != s.agent_count() {
        return Err(DleError::WarmStart {
            expected: s.agent_count(),
            got: previous.len(),
        });
    }
    for (i, prev) in previous.iter().enumerate() {
        s.estimates[i] = &s.projectors[i] * prev + &s.particular[i];
    }
    Ok(s)
}

/// Cached per-agent factorizations of a fixed row partition, for repeated
/// solves where only the right-hand sides change.
#[derive(Debug, Clone, PartialEq)]
pub struct DleRows {
    rows: Vec<Matrix>,
    pinv: Vec<Matrix>,
    projectors: Vec<Matrix>,
    dim: usize,
}

impl DleRows {
    pub fn new(rows: Vec<Matrix>, dim: usize) -> Result<Self, DleError> {
        for (agent, a) in rows.iter().enumerate() {
            if a.ncols() != dim {
                return Err(DleError::Columns {
                    agent,
                    expected: dim,
                    got: a.ncols(),
                });
            }
        }
        let pinv = rows.iter().map(linalg::pseudo_inverse).collect();
        let projectors = rows.iter().map(linalg::kernel_projector).collect();
        Ok(Self {
            rows,
            pinv,
            projectors,
            dim,
        })
    }

    pub fn agent_count(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self, agent: usize) -> &Matrix {
        &self.rows[agent]
    }

    /// Initial state for right-hand sides `rhs`, optionally warm-started
    /// from `previous` estimates.
    pub fn state(&self, rhs: &[Vector], previous: Option<&[Vector]>) -> Result<DleState, DleError> {
        if rhs.len() != self.agent_count() {
            return Err(DleError::RhsLength {
                agent: rhs.len().min(self.agent_count()),
                rows: self.agent_count(),
                rhs: rhs.len(),
            });
        }
        if let Some(prev) = previous {
            if prev.len() != self.agent_count() {
                return Err(DleError::WarmStart {
                    expected: self.agent_count(),
                    got: prev.len(),
                });
            }
        }
        let mut particular = Vec::with_capacity(rhs.len());
        for (agent, b) in rhs.iter().enumerate() {
            let a = &self.rows[agent];
            if a.nrows() != b.len() {
                return Err(DleError::RhsLength {
                    agent,
                    rows: a.nrows(),
                    rhs: b.len(),
                });
            }
            let x = &self.pinv[agent] * b;
            let residual = (a * &x - b).norm();
            if residual > linalg::CONSISTENCY_TOL * b.norm().max(1.0) {
                return Err(DleError::AgentInconsistent {
                    agent,
                    source: LinalgError::Inconsistent { residual },
                });
            }
            particular.push(x);
        }
        let estimates = match previous {
            Some(prev) => prev
                .iter()
                .zip(&self.projectors)
                .zip(&particular)
                .map(|((x, p), q)| p * x + q)
                .collect(),
            None => particular.clone(),
        };
        Ok(DleState {
            iteration: 0,
            estimates,
            projectors: self.projectors.clone(),
            particular,
        })
    }
}

/// One synchronous round over `g`; reads only round-start estimates.
pub fn dle_step(s: &DleState, g: &Graph) -> DleState {
    let estimates = (0..s.agent_count())
        .map(|i| local_update(&s.estimates[i], &s.projectors[i], g.neighbors(i), &s.estimates))
        .collect();
    DleState {
        iteration: s.iteration + 1,
        estimates,
        projectors: s.projectors.clone(),
        particular: s.particular.clone(),
    }
}

/// The per-agent update, shared with the message-passing protocol.
pub(crate) fn local_update(own: &Vector, projector: &Matrix, neighbors: &[usize], estimates: &[Vector]) -> Vector {
    local_update_from(own, projector, neighbors.iter().map(|&j| &estimates[j]))
}

pub(crate) fn local_update_from<'a, I>(own: &Vector, projector: &Matrix, neighbor_values: I) -> Vector
where
    I: Iterator<Item = &'a Vector>,
{
    let mut sum = Vector::zeros(own.len());
    let mut count = 0usize;
    for v in neighbor_values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        return own.clone();
    }
    let mean = sum / count as f64;
    own - projector * (own - mean)
}

/// Max pairwise ∞-norm disagreement; harness-side diagnostic only.
pub fn disagreement(estimates: &[Vector]) -> f64 {
    let Some(first) = estimates.first() else {
        return 0.0;
    };
    (0..first.len())
        .map(|c| {
            let (lo, hi) = estimates
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                    (lo.min(e[c]), hi.max(e[c]))
                });
            hi - lo
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DleReport {
    pub iterations: usize,
    /// Disagreement before the first round and after every round.
    pub disagreement_history: Vec<f64>,
    pub jointly_connected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DleSolution {
    pub estimates: Vec<Vector>,
    pub report: DleReport,
}

/// Iterates from `state` with `schedule.graph_at(start_round + k)` until
/// the disagreement drops below `tol`.
pub fn dle_iterate(
    mut state: DleState,
    schedule: &GraphSchedule,
    start_round: usize,
    tol: f64,
    max_iter: usize,
) -> Result<DleSolution, DleError> {
    if schedule.node_count() != state.agent_count() {
        return Err(DleError::AgentCount {
            schedule: schedule.node_count(),
            agents: state.agent_count(),
        });
    }
    let mut history = vec![disagreement(&state.estimates)];
    let mut k = 0;
    while *history.last().unwrap() >= tol {
        if k == max_iter {
            return Err(DleError::NotConverged {
                iterations: k,
                disagreement: *history.last().unwrap(),
                tol,
            });
        }
        state = dle_step(&state, schedule.graph_at(start_round + k));
        k += 1;
        history.push(disagreement(&state.estimates));
    }
    Ok(DleSolution {
        estimates: state.estimates,
        report: DleReport {
            iterations: k,
            disagreement_history: history,
            jointly_connected: true,
        },
    })
}

pub fn dle_solve(p: &DleProblem, schedule: &GraphSchedule, tol: f64, max_iter: usize) -> Result<DleSolution, DleError> {
    let connected = schedule.is_repeatedly_jointly_strongly_connected(schedule.period());
    if !connected {
        warn!("d-LE schedule is not repeatedly jointly connected; convergence not guaranteed");
    }
    let state = dle_init(p)?;
    let mut sol = dle_iterate(state, schedule, 0, tol, max_iter)?;
    sol.report.jointly_connected = connected;
    Ok(sol)
}

/// d-LE as a message-passing protocol: each agent holds its estimate and
/// broadcasts it every round.
pub struct DleProtocol {
    init: DleState,
}

impl DleProtocol {
    pub fn new(state: DleState) -> Self {
        Self { init: state }
    }
}

impl Protocol for DleProtocol {
    type State = Vector;
    type Message = Vector;

    fn agent_count(&self) -> usize {
        self.init.agent_count()
    }

    fn init(&self, agent: usize) -> (Vector, Vec<Outgoing<Vector>>) {
        let x = self.init.estimates[agent].clone();
        (x.clone(), vec![Outgoing::Broadcast(x)])
    }

    fn step(&self, agent: usize, own: &Vector, inbox: &[Envelope<Vector>]) -> (Vector, Vec<Outgoing<Vector>>) {
        let x = local_update_from(own, &self.init.projectors[agent], inbox.iter().map(|e| &e.payload));
        (x.clone(), vec![Outgoing::Broadcast(x)])
    }
}
