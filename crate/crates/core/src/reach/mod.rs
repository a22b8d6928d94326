//! Reachable-set bounds by propagating supporting hyperplanes.
//!
//! Each face of the initial set is traced as a co-state `λ`, a contact point
//! `ξ` and an offset `γ = ⟨λ, ξ⟩`. At every step the traced halfspaces
//! `⟨λ_j, x⟩ ≤ γ_j` form the outer bound and the contact points span the
//! inner bound.
//!
//! With [`Flow::Exponential`] the disturbance of each step maximizes the
//! co-state integrated over that step, which makes `γ` the exact support
//! value over disturbances held constant on the grid. The implicit flows
//! solve `(I + h AAᵀ) μ = λ` and `(I - h AA) ν = ξ + h BB W` per step; the
//! distributed engine solves exactly these systems with d-LE.

mod distributed;
pub mod verify;
mod views;

use serde::Serialize;
use thiserror::Error;

use crate::consensus::ConsensusError;
use crate::dle::DleError;
use crate::graph::GraphError;
use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::model::{ModelError, StackedSystem};
use crate::polytope::{self, HPolytope, Halfspace, PolytopeError, VPolytope};

pub use distributed::reach_distributed;
pub use verify::{sandwich_margin, support_identity_error, verify_containment, ContainmentReport};
pub use views::{agent_box, per_agent_views, AgentBox};

/// Below this norm a co-state counts as vanished.
pub const DEGENERATE_COSTATE: f64 = 1e-14;

/// Relative tolerance for an initial face to count as supporting.
pub const SUPPORT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("face {face} does not support the initial set (offset {offset}, support value {support})")]
    FaceNotSupporting { face: usize, offset: f64, support: f64 },
    #[error("trace {trace}: co-state vanished at step {step}")]
    DegenerateCostate { trace: usize, step: usize },
    #[error("step {step}, trace {trace}, {phase} solve: {source}")]
    Dle {
        step: usize,
        trace: usize,
        phase: &'static str,
        #[source]
        source: DleError,
    },
    #[error("step {step}: {source}")]
    Consensus {
        step: usize,
        #[source]
        source: ConsensusError,
    },
    #[error("communication schedule is not jointly connected over window {window}")]
    NotJointlyConnected { window: usize },
    #[error("d-LE setup: {0}")]
    DleSetup(#[from] DleError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Discretization of the implicit flows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `(I + dt AAᵀ) λ' = λ`, `(I - dt AA) ξ' = ξ + dt BB W`.
    ImplicitEuler,
    /// The same solves with `h = dt/2`, followed by `λ' = 2μ - λ` and
    /// `ξ' = 2ν - ξ`. The two maps are exact adjoints of each other.
    Midpoint,
}

impl Scheme {
    pub(crate) fn solve_step(self, dt: f64) -> f64 {
        match self {
            Scheme::ImplicitEuler => dt,
            Scheme::Midpoint => dt / 2.0,
        }
    }

    pub(crate) fn extrapolate(self, solved: &Vector, previous: &Vector) -> Vector {
        match self {
            Scheme::ImplicitEuler => solved.clone(),
            Scheme::Midpoint => solved * 2.0 - previous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flow {
    Exponential,
    Implicit(Scheme),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceMode {
    /// Argmax over the stacked vertex set. Distributed runs hold the
    /// vertices in per-agent shares and agree through max-consensus.
    Stacked,
    /// Per-agent argmax over each factor; no communication needed.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachConfig {
    pub t0: f64,
    pub tau: f64,
    pub dt: f64,
    /// Centralized propagation.
    pub flow: Flow,
    /// Distributed propagation.
    pub scheme: Scheme,
    pub disturbance: DisturbanceMode,
    pub dle_tol: f64,
    pub dle_max_iter: usize,
    /// Max-consensus rounds; derived from the schedule when `None`.
    pub consensus_rounds: Option<usize>,
    /// Joint-connectivity window; the schedule period when `None`.
    pub window: Option<usize>,
    pub vertex_cap: usize,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            tau: 1.0,
            dt: 0.01,
            flow: Flow::Exponential,
            scheme: Scheme::Midpoint,
            disturbance: DisturbanceMode::Stacked,
            dle_tol: 1e-10,
            dle_max_iter: 10_000,
            consensus_rounds: None,
            window: None,
            vertex_cap: polytope::DEFAULT_VERTEX_CAP,
        }
    }
}

impl ReachConfig {
    pub fn validate(&self) -> Result<(), ReachError> {
        let bad = |m: String| Err(ReachError::Config(m));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t0.is_finite() && self.tau.is_finite()) || self.tau < self.t0 {
            return bad(format!("need t0 <= tau, got t0 = {}, tau = {}", self.t0, self.tau));
        }
        let span = self.tau - self.t0;
        let n = (span / self.dt).round();
        if (n * self.dt - span).abs() > 1e-9 * span.max(1.0) {
            return bad(format!("tau - t0 = {span} is not a multiple of dt = {}", self.dt));
        }
        if !(self.dle_tol.is_finite() && self.dle_tol > 0.0) {
            return bad(format!("dle_tol must be positive, got {}", self.dle_tol));
        }
        if self.window == Some(0) {
            return bad("window must be at least 1".into());
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.tau - self.t0) / self.dt).round() as usize
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| self.t0 + k as f64 * self.dt).collect()
    }
}

/// State of one trace at one grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub lambda: Vector,
    pub contact: Vector,
    pub gamma: f64,
    /// Disturbance applied on `[t_k, t_{k+1})`; `None` at the last step.
    /// Entries unknown to a distributed agent are NaN.
    pub w_star: Option<Vector>,
    /// Stacked vertex id of `w_star` when known.
    pub w_id: Option<usize>,
}

impl TraceStep {
    pub(crate) fn new(lambda: Vector, contact: Vector) -> Self {
        let gamma = lambda.dot(&contact);
        Self {
            lambda,
            contact,
            gamma,
            w_star: None,
            w_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperplaneTrace {
    /// Stacked face index this trace started from.
    pub face: usize,
    pub owner: usize,
    pub steps: Vec<TraceStep>,
}

impl HyperplaneTrace {
    pub fn step(&self, k: usize) -> &TraceStep {
        &self.steps[k]
    }
}

/// All traces as held by one party: the centralized oracle or one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachView {
    /// `None` for the centralized view.
    pub agent: Option<usize>,
    pub traces: Vec<HyperplaneTrace>,
}

impl ReachView {
    pub fn label(&self) -> String {
        match self.agent {
            None => "central".into(),
            Some(i) => format!("agent{i}"),
        }
    }

    pub fn outer(&self, k: usize) -> Result<HPolytope, ReachError> {
        let faces = self
            .traces
            .iter()
            .map(|t| Halfspace::new(t.steps[k].lambda.clone(), t.steps[k].gamma))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HPolytope::new(faces)?)
    }

    pub fn inner(&self, k: usize) -> Result<VPolytope, ReachError> {
        Ok(VPolytope::dedup(
            self.traces.iter().map(|t| t.steps[k].contact.clone()).collect(),
        )?)
    }

    pub fn gammas(&self, k: usize) -> Vec<f64> {
        self.traces.iter().map(|t| t.steps[k].gamma).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub dle_solves: usize,
    /// Sum over all solves.
    pub dle_iterations: usize,
    pub max_dle_iterations: usize,
    pub consensus_rounds: usize,
    /// Communication rounds elapsed, with traces solved side by side.
    pub network_rounds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReachResult {
    pub times: Vec<f64>,
    pub views: Vec<ReachView>,
    pub stats: RunStats,
}

impl ReachResult {
    pub fn step_count(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn central(&self) -> Option<&ReachView> {
        self.views.iter().find(|v| v.agent.is_none())
    }

    pub fn agent_view(&self, agent: usize) -> Option<&ReachView> {
        self.views.iter().find(|v| v.agent == Some(agent))
    }
}

/// One trace per stacked face of the initial set, touching it at the
/// lowest-id support vertex.
pub fn init_traces(sys: &StackedSystem) -> Result<Vec<HyperplaneTrace>, ReachError> {
    let mut traces = Vec::with_capacity(sys.xi0.h.len());
    for (j, face) in sys.xi0.h.halfspaces().iter().enumerate() {
        let (v, support, _) = sys.xi0.v.support_vertex(&face.normal)?;
        check_supporting(j, face.offset, support)?;
        traces.push(HyperplaneTrace {
            face: j,
            owner: sys.face_owner[j],
            steps: vec![TraceStep::new(face.normal.clone(), v.clone())],
        });
    }
    Ok(traces)
}

pub(crate) fn check_supporting(face: usize, offset: f64, support: f64) -> Result<(), ReachError> {
    if (support - offset).abs() > SUPPORT_TOL * offset.abs().max(1.0) {
        return Err(ReachError::FaceNotSupporting { face, offset, support });
    }
    Ok(())
}

/// `Φ(-AAᵀ, dt) λ`.
pub fn costate_step_centralized(lambda: &Vector, sys: &StackedSystem, dt: f64) -> Result<Vector, ReachError> {
    let neg_t = -sys.aa.transpose();
    Ok(linalg::state_transition(&neg_t, dt)? * lambda)
}

/// `Ad ξ + Bd BB w` with `w` held over the step.
pub fn contact_step_centralized(
    contact: &Vector,
    w_star: &Vector,
    sys: &StackedSystem,
    dt: f64,
) -> Result<Vector, ReachError> {
    let (ad, bd) = linalg::zoh_pair(&sys.aa, dt)?;
    Ok(ad * contact + bd * (&sys.bb * w_star))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceChoice {
    /// Index into the stacked vertex set.
    pub id: usize,
    pub w: Vector,
}

/// Disturbance vertex maximizing `⟨direction, BB w⟩`.
pub fn optimal_disturbance(
    direction: &Vector,
    sys: &StackedSystem,
    mode: DisturbanceMode,
) -> Result<DisturbanceChoice, ReachError> {
    let g = sys.bb.transpose() * direction;
    match mode {
        DisturbanceMode::Stacked => {
            let (v, _, id) = sys.ww.support_vertex(&g)?;
            Ok(DisturbanceChoice { id, w: v.clone() })
        }
        DisturbanceMode::Product => {
            let mut w = Vector::zeros(g.len());
            let mut picks = Vec::with_capacity(sys.w_factors.len());
            let mut off = 0;
            for f in &sys.w_factors {
                let d = f.dim();
                let (v, _, idx) = f.support_vertex(&g.rows(off, d).into_owned())?;
                w.rows_mut(off, d).copy_from(v);
                picks.push(idx);
                off += d;
            }
            let sizes: Vec<usize> = sys.w_factors.iter().map(VPolytope::len).collect();
            Ok(DisturbanceChoice {
                id: polytope::product_index(&picks, &sizes),
                w,
            })
        }
    }
}

/// Precomputed per-step maps of the centralized engine.
enum Stepper {
    Exponential {
        costate: Matrix,
        costate_integral: Matrix,
        ad: Matrix,
        bd_bb: Matrix,
    },
    Implicit {
        costate_inv: Matrix,
        state_inv: Matrix,
        h_bb: Matrix,
        scheme: Scheme,
    },
}

impl Stepper {
    fn new(sys: &StackedSystem, flow: Flow, dt: f64) -> Result<Self, ReachError> {
        let n = sys.state_dim();
        let at = sys.aa.transpose();
        match flow {
            Flow::Exponential => {
                let (costate, costate_integral) = linalg::zoh_pair(&(-&at), dt)?;
                let (ad, bd) = linalg::zoh_pair(&sys.aa, dt)?;
                Ok(Stepper::Exponential {
                    costate,
                    costate_integral,
                    ad,
                    bd_bb: bd * &sys.bb,
                })
            }
            Flow::Implicit(scheme) => {
                let h = scheme.solve_step(dt);
                let eye = Matrix::identity(n, n);
                let invert = |m: Matrix| m.try_inverse().ok_or(LinalgError::Singular);
                Ok(Stepper::Implicit {
                    costate_inv: invert(&eye + &at * h)?,
                    state_inv: invert(&eye - &sys.aa * h)?,
                    h_bb: &sys.bb * h,
                    scheme,
                })
            }
        }
    }

    /// Next co-state and the direction the step's disturbance maximizes.
    fn costate(&self, lambda: &Vector) -> (Vector, Vector) {
        match self {
            Stepper::Exponential {
                costate,
                costate_integral,
                ..
            } => (costate * lambda, costate_integral * lambda),
            Stepper::Implicit {
                costate_inv, scheme, ..
            } => {
                let mu = costate_inv * lambda;
                (scheme.extrapolate(&mu, lambda), mu)
            }
        }
    }

    fn contact(&self, xi: &Vector, w: &Vector) -> Vector {
        match self {
            Stepper::Exponential { ad, bd_bb, .. } => ad * xi + bd_bb * w,
            Stepper::Implicit {
                state_inv,
                h_bb,
                scheme,
                ..
            } => {
                let nu = state_inv * (xi + h_bb * w);
                scheme.extrapolate(&nu, xi)
            }
        }
    }
}

pub fn reach_centralized(sys: &StackedSystem, cfg: &ReachConfig) -> Result<ReachResult, ReachError> {
    cfg.validate()?;
    let stepper = Stepper::new(sys, cfg.flow, cfg.dt)?;
    let mut traces = init_traces(sys)?;
    for (j, trace) in traces.iter_mut().enumerate() {
        for k in 0..cfg.n_steps() {
            let cur = trace.steps.last_mut().expect("traces start with one step");
            let (lambda, direction) = stepper.costate(&cur.lambda);
            if lambda.norm() < DEGENERATE_COSTATE {
                return Err(ReachError::DegenerateCostate { trace: j, step: k + 1 });
            }
            let choice = optimal_disturbance(&direction, sys, cfg.disturbance)?;
            let contact = stepper.contact(&cur.contact, &choice.w);
            cur.w_star = Some(choice.w);
            cur.w_id = Some(choice.id);
            trace.steps.push(TraceStep::new(lambda, contact));
        }
    }
    Ok(ReachResult {
        times: cfg.times(),
        views: vec![ReachView { agent: None, traces }],
        stats: RunStats::default(),
    })
}
