//! Scenario files.
//!
//! A scenario is a TOML document; see the README for the grammar. Matrices
//! are row-major nested arrays and agent indices are 0-based.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use log::warn;
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::graph::{Graph, GraphSchedule};
use crate::linalg::{Matrix, Vector};
use crate::model::{
    assemble_stacked, assign_vertex_shares, AgentModel, AssembleOptions, InformationSet, StackedSystem,
};
use crate::polytope::{self, HPolytope, Halfspace, PolytopePair, VPolytope};
use crate::reach::{DisturbanceMode, Flow, ReachConfig, Scheme};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("{0}")]
    Semantic(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    config: RawConfig,
    graph: Spanned<RawGraph>,
    #[serde(default)]
    schedule: Option<Spanned<RawSchedule>>,
    #[serde(rename = "agent")]
    agents: Vec<Spanned<RawAgent>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    t0: Option<f64>,
    tau: Option<f64>,
    dt: Option<f64>,
    dle_tol: Option<f64>,
    dle_max_iter: Option<usize>,
    consensus_rounds: Option<usize>,
    disturbance: Option<RawDisturbance>,
    scheme: Option<RawScheme>,
    seed: Option<u64>,
    vertex_cap: Option<usize>,
    window: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawDisturbance {
    Stacked,
    Product,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawScheme {
    ImplicitEuler,
    Midpoint,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: usize,
    #[serde(default)]
    edges: Vec<[usize; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    #[serde(default)]
    mode: RawScheduleMode,
    /// One edge list per round of the period.
    graphs: Vec<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawScheduleMode {
    #[default]
    Periodic,
    Static,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "B1")]
    b1: Vec<Vec<f64>>,
    #[serde(rename = "K_self")]
    k_self: Vec<Vec<f64>>,
    #[serde(rename = "K_neighbors", default)]
    k_neighbors: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(rename = "X0")]
    x0: RawInitialSet,
    #[serde(rename = "W", default)]
    w: Option<RawDisturbanceSet>,
    /// Shorthand for `W = { ball = { rho = .. } }`.
    #[serde(default)]
    rho: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHpoly {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVpoly {
    vertices: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBall {
    rho: f64,
    resolution: Option<usize>,
}

/// A box, or an `hpoly` together with a `vpoly` of the same set.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitialSet {
    #[serde(rename = "box")]
    boxed: Option<RawBox>,
    hpoly: Option<RawHpoly>,
    vpoly: Option<RawVpoly>,
}

/// Exactly one of the three.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbanceSet {
    #[serde(rename = "box")]
    boxed: Option<RawBox>,
    ball: Option<RawBall>,
    vpoly: Option<RawVpoly>,
}

/// A validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub agents: Vec<InformationSet>,
    /// Defines the coupled dynamics.
    pub coupling: Graph,
    /// Communication; the static coupling graph unless given.
    pub schedule: GraphSchedule,
    pub config: ReachConfig,
    pub seed: u64,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(format!("{what}: rows have different lengths"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn initial_set(raw: &RawInitialSet) -> Result<PolytopePair, String> {
    match raw {
        RawInitialSet {
            boxed: Some(RawBox { lo, hi }),
            hpoly: None,
            vpoly: None,
        } => {
            if lo.len() != hi.len() {
                return Err("X0 box: lo and hi differ in length".into());
            }
            polytope::box_polytope(&vector(lo), &vector(hi)).map_err(|e| format!("X0: {e}"))
        }
        RawInitialSet {
            boxed: None,
            hpoly: Some(RawHpoly { normals, offsets }),
            vpoly: Some(RawVpoly { vertices }),
        } => {
            if normals.len() != offsets.len() {
                return Err("X0 hpoly: normals and offsets differ in count".into());
            }
            let faces = normals
                .iter()
                .zip(offsets)
                .map(|(n, o)| Halfspace::new(vector(n), *o))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| format!("X0: {e}"))?;
            let h = HPolytope::new(faces).map_err(|e| format!("X0: {e}"))?;
            let v = VPolytope::new(vertices.iter().map(|v| vector(v)).collect()).map_err(|e| format!("X0: {e}"))?;
            for (i, p) in v.vertices().iter().enumerate() {
                if !h.contains(p, 1e-9).map_err(|e| format!("X0: {e}"))? {
                    return Err(format!("X0: vpoly vertex {i} violates the hpoly halfspaces"));
                }
            }
            PolytopePair::new(h, v).map_err(|e| format!("X0: {e}"))
        }
        _ => Err("X0 must be either a box or an hpoly together with a vpoly".into()),
    }
}

/// Vertex set of `W` in dimension `nw`, plus its radius for balls.
fn disturbance_set(raw: &RawDisturbanceSet, nw: usize) -> Result<(VPolytope, Option<f64>), String> {
    let err = |e: polytope::PolytopeError| format!("W: {e}");
    match raw {
        RawDisturbanceSet {
            boxed: Some(RawBox { lo, hi }),
            ball: None,
            vpoly: None,
        } => {
            if lo.len() != hi.len() {
                return Err("W box: lo and hi differ in length".into());
            }
            Ok((polytope::box_polytope(&vector(lo), &vector(hi)).map_err(err)?.v, None))
        }
        RawDisturbanceSet {
            boxed: None,
            ball: Some(RawBall { rho, resolution }),
            vpoly: None,
        } => Ok((
            polytope::ball_vpolytope(*rho, nw, resolution.unwrap_or(8)).map_err(err)?,
            Some(*rho),
        )),
        RawDisturbanceSet {
            boxed: None,
            ball: None,
            vpoly: Some(RawVpoly { vertices }),
        } => Ok((
            VPolytope::dedup(vertices.iter().map(|v| vector(v)).collect()).map_err(err)?,
            None,
        )),
        _ => Err("W must be exactly one of box, ball or vpoly".into()),
    }
}

fn edges(list: &[[usize; 2]]) -> Vec<(usize, usize)> {
    list.iter().map(|[a, b]| (*a, *b)).collect()
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let stem = path
            .file_stem()
            .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
        Self::parse(&text, &stem)
    }

    /// Parses and fully validates `text`; `default_name` is used when the
    /// file has no `name`.
    pub fn parse(text: &str, default_name: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        let at = |span: Range<usize>, msg: String| ScenarioError::Invalid {
            line: line_of(text, span),
            msg,
        };

        let graph_span = raw.graph.span();
        let g = raw.graph.into_inner();
        let coupling =
            Graph::new(g.nodes, &edges(&g.edges)).map_err(|e| at(graph_span.clone(), format!("graph: {e}")))?;
        if raw.agents.len() != coupling.node_count() {
            return Err(at(
                graph_span,
                format!(
                    "graph has {} nodes but {} agents are defined",
                    coupling.node_count(),
                    raw.agents.len()
                ),
            ));
        }

        let schedule = match raw.schedule {
            None => GraphSchedule::Static(coupling.clone()),
            Some(s) => {
                let span = s.span();
                let s = s.into_inner();
                let graphs = s
                    .graphs
                    .iter()
                    .enumerate()
                    .map(|(r, e)| {
                        Graph::new(coupling.node_count(), &edges(e))
                            .map_err(|err| at(span.clone(), format!("schedule graph {r}: {err}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                match s.mode {
                    RawScheduleMode::Static if graphs.len() == 1 => {
                        GraphSchedule::Static(graphs.into_iter().next().expect("one graph"))
                    }
                    RawScheduleMode::Static => {
                        return Err(at(span, "static schedule needs exactly one graph".into()));
                    }
                    RawScheduleMode::Periodic => {
                        GraphSchedule::periodic(graphs).map_err(|e| at(span, format!("schedule: {e}")))?
                    }
                }
            }
        };

        let mut agents = Vec::with_capacity(raw.agents.len());
        for (i, spanned) in raw.agents.into_iter().enumerate() {
            let span = spanned.span();
            let a = spanned.into_inner();
            let model = (|| -> Result<AgentModel, String> {
                let am = matrix(&a.a, "A")?;
                let mut k_neighbor = BTreeMap::new();
                for (key, k) in &a.k_neighbors {
                    let j: usize = key
                        .parse()
                        .map_err(|_| format!("K_neighbors key {key:?} is not an agent index"))?;
                    k_neighbor.insert(j, matrix(k, &format!("K_neighbors[{j}]"))?);
                }
                let b1 = matrix(&a.b1, "B1")?;
                let (w, rho) = match (&a.w, a.rho) {
                    (Some(w), None) => disturbance_set(w, b1.ncols())?,
                    (None, Some(rho)) => disturbance_set(
                        &RawDisturbanceSet {
                            ball: Some(RawBall { rho, resolution: None }),
                            ..Default::default()
                        },
                        b1.ncols(),
                    )?,
                    _ => return Err("give exactly one of W and rho".into()),
                };
                Ok(AgentModel {
                    a: am,
                    b: matrix(&a.b, "B")?,
                    b1,
                    k_self: matrix(&a.k_self, "K_self")?,
                    k_neighbor,
                    x0: initial_set(&a.x0)?,
                    w,
                    rho,
                })
            })()
            .map_err(|msg| at(span.clone(), format!("agent {i}: {msg}")))?;
            let info = InformationSet::new(i, model, &coupling).map_err(|e| at(span.clone(), e.to_string()))?;
            agents.push(info);
        }
        for (a, b) in coupling.edges() {
            if agents[a].model.state_dim() != agents[b].model.state_dim() {
                return Err(ScenarioError::Semantic(format!(
                    "coupled agents {a} and {b} have different state dimensions"
                )));
            }
        }

        let c = raw.config;
        let defaults = ReachConfig::default();
        let scheme = match c.scheme {
            Some(RawScheme::ImplicitEuler) => Scheme::ImplicitEuler,
            Some(RawScheme::Midpoint) | None => Scheme::Midpoint,
        };
        let config = ReachConfig {
            t0: c.t0.unwrap_or(defaults.t0),
            tau: c.tau.unwrap_or(defaults.tau),
            dt: c.dt.unwrap_or(defaults.dt),
            flow: Flow::Exponential,
            scheme,
            disturbance: match c.disturbance {
                Some(RawDisturbance::Product) => DisturbanceMode::Product,
                Some(RawDisturbance::Stacked) | None => DisturbanceMode::Stacked,
            },
            dle_tol: c.dle_tol.unwrap_or(defaults.dle_tol),
            dle_max_iter: c.dle_max_iter.unwrap_or(defaults.dle_max_iter),
            consensus_rounds: c.consensus_rounds,
            window: c.window,
            vertex_cap: c.vertex_cap.unwrap_or(defaults.vertex_cap),
        };
        config.validate().map_err(|e| ScenarioError::Semantic(e.to_string()))?;

        let mut sizes = (1usize, 1usize);
        for a in &agents {
            sizes.0 = sizes.0.saturating_mul(a.model.x0.v.len());
            sizes.1 = sizes.1.saturating_mul(a.model.w.len());
        }
        if sizes.0 > config.vertex_cap || sizes.1 > config.vertex_cap {
            return Err(ScenarioError::Semantic(format!(
                "stacked vertex sets have {} and {} vertices, above the cap of {}",
                sizes.0, sizes.1, config.vertex_cap
            )));
        }
        let shares = assign_vertex_shares(agents.len(), sizes.1);
        for (a, s) in agents.iter_mut().zip(shares) {
            a.vertex_share = s;
        }

        let window = config.window.unwrap_or(schedule.period());
        if !schedule.is_repeatedly_jointly_strongly_connected(window) {
            warn!("communication schedule is not jointly connected over window {window}");
        }

        Ok(Scenario {
            name: raw.name.unwrap_or_else(|| default_name.to_string()),
            agents,
            coupling,
            schedule,
            config,
            seed: c.seed.unwrap_or(0),
        })
    }

    pub fn stacked(&self) -> Result<StackedSystem, crate::model::ModelError> {
        assemble_stacked(
            &self.agents,
            &self.coupling,
            AssembleOptions {
                vertex_cap: self.config.vertex_cap,
            },
        )
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.model.state_dim()).collect()
    }
}
