//! Command-line front end: `run`, `verify` and `graphcheck`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::dle::DleError;
use crate::export::{self, ExportError, TraceFormat, TraceRecord};
use crate::graph::GraphSchedule;
use crate::reach::{
    self, reach_centralized, reach_distributed, DisturbanceMode, Flow, ReachError, ReachResult, RunStats, Scheme,
};
use crate::scenario::{Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;

/// Tolerance of the stored-γ identity check.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Parser)]
#[command(
    name = "distreach",
    version,
    about = "Distributed reachability for networked linear systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Overrides {
    /// Final time.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Time step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// d-LE iteration cap.
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Max-consensus rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Joint-connectivity window.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, value_enum)]
    pub scheme: Option<Scheme>,
    #[arg(long, value_enum)]
    pub disturbance: Option<DisturbanceMode>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute reachable-set bounds and write them to a directory.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// d-LE tolerance.
        #[arg(long)]
        tol: Option<f64>,
        /// Run the centralized exponential oracle instead.
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TraceFormat::Csv)]
        format: TraceFormat,
    },
    /// Check a run: inner points inside outer bounds, sampled trajectories
    /// inside the oracle bounds, and distributed against centralized values.
    Verify {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// d-LE tolerance.
        #[arg(long = "dle-tol")]
        dle_tol: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Allowed gap between distributed and centralized γ.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Check a stored trace file instead of a fresh distributed run.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report connectivity of a scenario's communication schedule.
    Graphcheck {
        scenario: PathBuf,
        #[arg(long)]
        window: Option<usize>,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub msg: String,
}

impl Failure {
    fn invalid(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            msg: msg.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<ReachError> for Failure {
    fn from(e: ReachError) -> Self {
        let code = match &e {
            ReachError::Dle {
                source: DleError::NotConverged { .. },
                ..
            }
            | ReachError::Consensus { .. }
            | ReachError::NotJointlyConnected { .. }
            | ReachError::DegenerateCostate { .. } => EXIT_NO_CONVERGENCE,
            _ => EXIT_INVALID,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<ExportError> for Failure {
    fn from(e: ExportError) -> Self {
        match e {
            ExportError::Reach(r) => r.into(),
            other => Self::invalid(other.to_string()),
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Run {
            scenario,
            overrides,
            tol,
            oracle,
            out,
            format,
        } => cmd_run(&scenario, &overrides, tol, oracle, &out, format),
        Command::Verify {
            scenario,
            overrides,
            dle_tol,
            samples,
            tol,
            traces,
            out,
        } => cmd_verify(
            &scenario,
            &overrides,
            dle_tol,
            samples,
            tol,
            traces.as_deref(),
            out.as_deref(),
        ),
        Command::Graphcheck { scenario, window } => cmd_graphcheck(&scenario, window),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            f.code
        }
    }
}

fn load(path: &Path, o: &Overrides, dle_tol: Option<f64>) -> Result<Scenario, Failure> {
    let mut s = Scenario::load(path)?;
    let c = &mut s.config;
    if let Some(v) = dle_tol {
        c.dle_tol = v;
    }
    if let Some(v) = o.tau {
        c.tau = v;
    }
    if let Some(v) = o.dt {
        c.dt = v;
    }
    if let Some(v) = o.max_iters {
        c.dle_max_iter = v;
    }
    if o.rounds.is_some() {
        c.consensus_rounds = o.rounds;
    }
    if o.window.is_some() {
        c.window = o.window;
    }
    if let Some(v) = o.scheme {
        c.scheme = v;
    }
    if let Some(v) = o.disturbance {
        c.disturbance = v;
    }
    if let Some(v) = o.seed {
        s.seed = v;
    }
    s.config.validate()?;
    Ok(s)
}

/// Static communication graphs must be connected; reports the components.
fn require_connected(s: &Scenario) -> Result<(), Failure> {
    if let GraphSchedule::Static(g) = &s.schedule {
        if !g.is_connected() {
            return Err(Failure {
                code: EXIT_NO_CONVERGENCE,
                msg: format!("communication graph is not connected; components {:?}", g.components()),
            });
        }
    }
    Ok(())
}

fn distributed(s: &Scenario) -> Result<ReachResult, Failure> {
    require_connected(s)?;
    Ok(reach_distributed(&s.agents, &s.coupling, &s.schedule, &s.config)?)
}

fn oracle(s: &Scenario) -> Result<ReachResult, Failure> {
    let sys = s.stacked().map_err(ReachError::from)?;
    let cfg = reach::ReachConfig {
        flow: Flow::Exponential,
        ..s.config.clone()
    };
    Ok(reach_centralized(&sys, &cfg)?)
}

fn implicit(s: &Scenario) -> Result<ReachResult, Failure> {
    let sys = s.stacked().map_err(ReachError::from)?;
    let cfg = reach::ReachConfig {
        flow: Flow::Implicit(s.config.scheme),
        ..s.config.clone()
    };
    Ok(reach_centralized(&sys, &cfg)?)
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: &'static str,
    pub agents: usize,
    pub state_dim: usize,
    pub traces: usize,
    pub steps: usize,
    pub config: reach::ReachConfig,
    pub seed: u64,
    pub stats: RunStats,
    /// Largest `|γ - ⟨λ, ξ⟩|` over all views.
    pub support_identity_error: f64,
    /// Smallest normalized inner-point margin over all views and steps.
    pub sandwich_margin: f64,
    /// Largest gap between agents' γ for the same trace and step.
    pub agent_disagreement: f64,
}

fn run_report(s: &Scenario, r: &ReachResult, mode: &'static str) -> RunReport {
    let mut disagreement: f64 = 0.0;
    if let Some(first) = r.views.first() {
        for v in &r.views[1..] {
            for (a, b) in first.traces.iter().zip(&v.traces) {
                for (x, y) in a.steps.iter().zip(&b.steps) {
                    disagreement = disagreement.max((x.gamma - y.gamma).abs());
                }
            }
        }
    }
    RunReport {
        scenario: s.name.clone(),
        mode,
        agents: s.agents.len(),
        state_dim: s.block_dims().iter().sum(),
        traces: r.views.first().map_or(0, |v| v.traces.len()),
        steps: r.step_count(),
        config: s.config.clone(),
        seed: s.seed,
        stats: r.stats.clone(),
        support_identity_error: r.views.iter().map(reach::support_identity_error).fold(0.0, f64::max),
        sandwich_margin: r
            .views
            .iter()
            .flat_map(|v| (0..=r.step_count()).map(move |k| reach::sandwich_margin(v, k)))
            .fold(f64::INFINITY, f64::min),
        agent_disagreement: disagreement,
    }
}

fn fmt_bound(b: Option<f64>) -> String {
    b.map_or("?".into(), |x| format!("{x:.6}"))
}

fn cmd_run(
    path: &Path,
    o: &Overrides,
    dle_tol: Option<f64>,
    use_oracle: bool,
    out: &Path,
    format: TraceFormat,
) -> Result<i32, Failure> {
    let s = load(path, o, dle_tol)?;
    let start = Instant::now();
    let (result, mode) = if use_oracle {
        (oracle(&s)?, "oracle")
    } else {
        (distributed(&s)?, "distributed")
    };
    info!("{} computed in {:.3?}", mode, start.elapsed());
    let report = run_report(&s, &result, mode);
    let dims = s.block_dims();
    let written = export::write_all(out, &result, &dims, format, &report)?;

    println!("scenario {} ({mode})", s.name);
    println!(
        "  agents {}, state dim {}, traces {}, steps {} (dt {})",
        report.agents, report.state_dim, report.traces, report.steps, s.config.dt
    );
    if !use_oracle {
        let st = &report.stats;
        println!(
            "  d-LE solves {}, iterations {} (max {}), consensus rounds {}, network rounds {}",
            st.dle_solves, st.dle_iterations, st.max_dle_iterations, st.consensus_rounds, st.network_rounds
        );
        println!("  agent disagreement {:.3e}", report.agent_disagreement);
    }
    println!(
        "  support identity error {:.3e}, sandwich margin {:.3e}",
        report.support_identity_error, report.sandwich_margin
    );
    let last = export::agent_boxes(&result, &dims)?.pop().unwrap_or_default();
    for b in &last {
        let coords: Vec<String> =
            b.lo.iter()
                .zip(&b.hi)
                .map(|(l, h)| format!("[{}, {}]", fmt_bound(*l), fmt_bound(*h)))
                .collect();
        println!("  agent {} at t = {}: {}", b.agent, s.config.tau, coords.join(" x "));
    }
    println!("  wrote {} files to {}", written.len(), out.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub tol: f64,
    pub location: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub source: String,
    pub samples: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub containment: Option<reach::ContainmentReport>,
    pub passed: bool,
}

fn at(r: &TraceRecord) -> String {
    format!("view {}, trace {}, step {}", r.view, r.trace, r.step)
}

/// Stored γ against `⟨λ, ξ⟩` for every record.
fn identity_check(records: &[TraceRecord]) -> Check {
    let mut worst = (0.0, None);
    for r in records {
        let dot: f64 = r.lambda.iter().zip(&r.contact).map(|(a, b)| a * b).sum();
        let scale = 1.0 + dot.abs();
        let err = (r.gamma - dot).abs() / scale;
        if !(err <= worst.0) {
            worst = (err, Some(at(r)));
        }
    }
    Check {
        name: "support-identity".into(),
        passed: worst.0 <= IDENTITY_TOL,
        worst: worst.0,
        tol: IDENTITY_TOL,
        location: worst.1,
    }
}

type Grouped<'a> = BTreeMap<(&'a str, usize), Vec<&'a TraceRecord>>;

fn group(records: &[TraceRecord]) -> Grouped<'_> {
    let mut g: Grouped = BTreeMap::new();
    for r in records {
        g.entry((r.view.as_str(), r.step)).or_default().push(r);
    }
    g
}

/// Every contact point of a view inside every traced halfspace of it.
fn inner_check(groups: &Grouped) -> Check {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut worst = (f64::INFINITY, None);
    for recs in groups.values() {
        for p in recs {
            for h in recs {
                let dot: f64 = h.lambda.iter().zip(&p.contact).map(|(a, b)| a * b).sum();
                let m = (h.gamma - dot) / norm(&h.lambda);
                if !(m >= worst.0) {
                    worst = (m, Some(format!("{} (halfspace of trace {})", at(p), h.trace)));
                }
            }
        }
    }
    let worst = if worst.0.is_infinite() { (0.0, None) } else { worst };
    Check {
        name: "inner-in-outer".into(),
        passed: worst.0 >= -reach::verify::INNER_TOL,
        worst: worst.0,
        tol: reach::verify::INNER_TOL,
        location: worst.1,
    }
}

/// Stored γ against a recomputation: the oracle for the central view and
/// the same-scheme centralized run for agent views.
fn agreement_check(
    records: &[TraceRecord],
    oracle: &ReachResult,
    implicit: &ReachResult,
    tol: f64,
) -> Result<Check, Failure> {
    let mut worst = (0.0, None);
    for r in records {
        let reference = if r.view == "central" { oracle } else { implicit };
        let view = reference.central().expect("centralized result");
        let step = view
            .traces
            .get(r.trace)
            .and_then(|t| t.steps.get(r.step))
            .ok_or_else(|| Failure::invalid(format!("{}: no such trace or step in the scenario", at(r))))?;
        if r.lambda.len() != step.lambda.len() {
            return Err(Failure::invalid(format!(
                "{}: dimension {} differs from the scenario",
                at(r),
                r.lambda.len()
            )));
        }
        let err = (r.gamma - step.gamma).abs();
        if !(err <= worst.0) {
            worst = (err, Some(at(r)));
        }
    }
    Ok(Check {
        name: "matches-centralized".into(),
        passed: worst.0 <= tol,
        worst: worst.0,
        tol,
        location: worst.1,
    })
}

fn cmd_verify(
    path: &Path,
    o: &Overrides,
    dle_tol: Option<f64>,
    samples: usize,
    tol: f64,
    traces: Option<&Path>,
    out: Option<&Path>,
) -> Result<i32, Failure> {
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(Failure::invalid(format!("tol must be non-negative, got {tol}")));
    }
    let s = load(path, o, dle_tol)?;
    let sys = s.stacked().map_err(ReachError::from)?;
    let orc = oracle(&s)?;
    let imp = implicit(&s)?;
    let (records, source) = match traces {
        Some(p) => (export::read_traces(p)?, p.display().to_string()),
        None => {
            let mut recs = export::trace_records(&orc);
            recs.extend(export::trace_records(&distributed(&s)?));
            (recs, "fresh distributed run".to_string())
        }
    };
    let groups = group(&records);
    let mut checks = vec![identity_check(&records), inner_check(&groups)];
    checks.push(agreement_check(&records, &orc, &imp, tol)?);
    let oracle_cfg = reach::ReachConfig {
        flow: Flow::Exponential,
        ..s.config.clone()
    };
    let containment =
        reach::verify_containment(orc.central().expect("oracle view"), &sys, &oracle_cfg, samples, s.seed)?;
    checks.push(Check {
        name: "sampled-containment".into(),
        passed: containment
            .worst_sample
            .as_ref()
            .is_none_or(|v| v.margin >= -reach::verify::SAMPLE_TOL),
        worst: containment.worst_sample.as_ref().map_or(0.0, |v| v.margin),
        tol: reach::verify::SAMPLE_TOL,
        location: containment
            .worst_sample
            .as_ref()
            .map(|v| format!("sample {}, step {}, halfspace {}", v.index, v.step, v.halfspace)),
    });
    let passed = checks.iter().all(|c| c.passed);
    let report = VerifyReport {
        scenario: s.name.clone(),
        source,
        samples,
        seed: s.seed,
        checks,
        containment: Some(containment),
        passed,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(p) = out {
        export::write_report(p, &report)?;
    }
    for c in report.checks.iter().filter(|c| !c.passed) {
        eprintln!(
            "FAILED {}: {:.3e} (tol {:.1e}) at {}",
            c.name,
            c.worst,
            c.tol,
            c.location.as_deref().unwrap_or("?")
        );
    }
    Ok(if passed { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

fn cmd_graphcheck(path: &Path, window: Option<usize>) -> Result<i32, Failure> {
    let s = Scenario::load(path)?;
    let c = &s.coupling;
    match c.diameter() {
        Ok(d) if c.is_connected() => println!(
            "coupling graph: {} nodes, {} edges, connected, diam {d}",
            c.node_count(),
            c.edge_count()
        ),
        _ => println!(
            "coupling graph: {} nodes, {} edges, components {:?}",
            c.node_count(),
            c.edge_count(),
            c.components()
        ),
    }
    let connected = match &s.schedule {
        GraphSchedule::Static(g) => {
            if g.is_connected() {
                println!(
                    "communication: static, connected, diam {}",
                    g.diameter().map_err(ReachError::from)?
                );
                true
            } else {
                println!("communication: static, NOT connected, components {:?}", g.components());
                false
            }
        }
        GraphSchedule::Periodic(gs) => {
            let w = window.or(s.config.window).unwrap_or(gs.len()).max(1);
            println!("communication: periodic, period {}", gs.len());
            for (k, comp) in s.schedule.window_compositions(w).iter().enumerate() {
                let diam = comp.diameter().map_or("inf".to_string(), |d| d.to_string());
                println!(
                    "  window {k} (rounds {}..{}): arcs {:?}, strongly connected {}, diam {diam}",
                    k * w,
                    (k + 1) * w,
                    comp.arcs().iter().filter(|(a, b)| a != b).collect::<Vec<_>>(),
                    comp.is_strongly_connected()
                );
            }
            let ok = s.schedule.is_repeatedly_jointly_strongly_connected(w);
            if ok {
                println!("jointly connected, window {w}");
                if let Some(b) = s.schedule.consensus_round_bound(w) {
                    println!("max-consensus round bound {b}");
                }
            } else {
                println!("NOT jointly connected, window {w}");
            }
            ok
        }
    };
    Ok(if connected { EXIT_OK } else { EXIT_NO_CONVERGENCE })
}
