//! Per-agent projections of a stacked result.

use super::{ReachError, ReachView};
use crate::linalg::{self, LinalgError, LpProblem, Sense, Vector};

/// Coordinate bounding box of the outer polytope over one agent's block,
/// plus that block of every contact point.
///
/// A bound is `None` when its LP fails; `issues` says why.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBox {
    pub agent: usize,
    pub lo: Vec<Option<f64>>,
    pub hi: Vec<Option<f64>>,
    pub cloud: Vec<Vector>,
    pub issues: Vec<String>,
}

pub fn agent_box(view: &ReachView, block_dims: &[usize], agent: usize, step: usize) -> Result<AgentBox, ReachError> {
    if agent >= block_dims.len() {
        return Err(ReachError::Config(format!("agent {agent} out of range")));
    }
    let offset: usize = block_dims[..agent].iter().sum();
    let n: usize = block_dims.iter().sum();
    let outer = view.outer(step)?;
    if outer.dim() != n {
        return Err(ReachError::Config(format!(
            "view has dimension {}, blocks sum to {n}",
            outer.dim()
        )));
    }
    let (a, b) = outer.to_matrices();
    let mut out = AgentBox {
        agent,
        lo: Vec::with_capacity(block_dims[agent]),
        hi: Vec::with_capacity(block_dims[agent]),
        cloud: Vec::new(),
        issues: Vec::new(),
    };
    for c in offset..offset + block_dims[agent] {
        let mut bound = |sense: Sense| -> Option<f64> {
            let mut e = Vector::zeros(n);
            e[c] = 1.0;
            let lp = LpProblem::new(e, a.clone(), b.clone(), sense);
            match lp.and_then(|p| linalg::solve_lp(&p)) {
                Ok((v, _)) => Some(v),
                Err(e) => {
                    let what = match e {
                        LinalgError::Infeasible => "infeasible".to_string(),
                        LinalgError::Unbounded => "unbounded".to_string(),
                        other => other.to_string(),
                    };
                    out.issues.push(format!("coordinate {} {sense:?}: {what}", c - offset));
                    None
                }
            }
        };
        let lo = bound(Sense::Min);
        let hi = bound(Sense::Max);
        out.lo.push(lo);
        out.hi.push(hi);
    }
    out.cloud = view
        .traces
        .iter()
        .map(|t| t.steps[step].contact.rows(offset, block_dims[agent]).into_owned())
        .collect();
    Ok(out)
}

/// Boxes and clouds for every agent from one view.
pub fn per_agent_views(view: &ReachView, block_dims: &[usize], step: usize) -> Result<Vec<AgentBox>, ReachError> {
    (0..block_dims.len())
        .map(|i| agent_box(view, block_dims, i, step))
        .collect()
}
