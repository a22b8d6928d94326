//! Empirical checks of a computed result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ReachConfig, ReachError, ReachView};
use crate::linalg::{self, Matrix, Vector};
use crate::model::StackedSystem;

pub const SAMPLE_TOL: f64 = 1e-6;
pub const INNER_TOL: f64 = 1e-8;

/// Largest `|γ - ⟨λ, ξ⟩|` over all traces and steps.
pub fn support_identity_error(view: &ReachView) -> f64 {
    view.traces
        .iter()
        .flat_map(|t| &t.steps)
        .map(|s| (s.gamma - s.lambda.dot(&s.contact)).abs())
        .fold(0.0, f64::max)
}

/// Margin `(γ_i - ⟨λ_i, x⟩) / |λ_i|`, minimized over halfspaces.
fn normalized_margin(view: &ReachView, step: usize, x: &Vector) -> (f64, usize) {
    let mut worst = (f64::INFINITY, 0);
    for (i, t) in view.traces.iter().enumerate() {
        let s = &t.steps[step];
        let m = (s.gamma - s.lambda.dot(x)) / s.lambda.norm();
        if m < worst.0 {
            worst = (m, i);
        }
    }
    worst
}

/// Smallest normalized margin of any contact point against any traced
/// halfspace at `step`; non-negative up to rounding when the result is
/// sandwiched.
pub fn sandwich_margin(view: &ReachView, step: usize) -> f64 {
    view.traces
        .iter()
        .map(|t| normalized_margin(view, step, &t.steps[step].contact).0)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub margin: f64,
    pub step: usize,
    /// Sample index, or contact trace for inner-point checks.
    pub index: usize,
    pub halfspace: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub samples: usize,
    pub seed: u64,
    pub steps: usize,
    /// Worst sampled-state margin; `None` without samples.
    pub worst_sample: Option<Violation>,
    pub worst_inner: Option<Violation>,
    pub sample_tol: f64,
    pub inner_tol: f64,
    pub passed: bool,
}

/// Samples `n_samples` trajectories from random convex combinations of the
/// initial vertices under vertex-valued disturbances held over each step,
/// and checks them and all contact points against the outer bound.
pub fn verify_containment(
    view: &ReachView,
    sys: &StackedSystem,
    cfg: &ReachConfig,
    n_samples: usize,
    seed: u64,
) -> Result<ContainmentReport, ReachError> {
    cfg.validate()?;
    let steps = view.traces.first().map_or(0, |t| t.steps.len().saturating_sub(1));
    if steps != cfg.n_steps() {
        return Err(ReachError::Config(format!(
            "result has {steps} steps, configuration {}",
            cfg.n_steps()
        )));
    }
    let mut worst_inner: Option<Violation> = None;
    for k in 0..=steps {
        for (j, t) in view.traces.iter().enumerate() {
            let (margin, h) = normalized_margin(view, k, &t.steps[k].contact);
            if worst_inner.as_ref().is_none_or(|w| margin < w.margin) {
                worst_inner = Some(Violation {
                    margin,
                    step: k,
                    index: j,
                    halfspace: h,
                });
            }
        }
    }

    let (ad, bd) = linalg::zoh_pair(&sys.aa, cfg.dt)?;
    let bd_bb = bd * &sys.bb;
    // Unit normals and scaled offsets per step.
    let n = sys.state_dim();
    let faces: Vec<(Matrix, Vector)> = (0..=steps)
        .map(|k| {
            let t = view.traces.len();
            let mut normals = Matrix::zeros(t, n);
            let mut offsets = Vector::zeros(t);
            for (i, tr) in view.traces.iter().enumerate() {
                let s = &tr.steps[k];
                let norm = s.lambda.norm();
                normals.row_mut(i).copy_from(&(s.lambda.transpose() / norm));
                offsets[i] = s.gamma / norm;
            }
            (normals, offsets)
        })
        .collect();
    let mut slack = Vector::zeros(view.traces.len());
    let mut next = Vector::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = sys.xi0.v.vertices();
    let mut worst_sample: Option<Violation> = None;
    for s in 0..n_samples {
        let weights: Vec<f64> = verts.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let total: f64 = weights.iter().sum();
        let mut x = Vector::zeros(sys.state_dim());
        for (v, w) in verts.iter().zip(&weights) {
            x += v * (w / total);
        }
        for k in 0..=steps {
            let (normals, offsets) = &faces[k];
            slack.copy_from(offsets);
            slack.gemv(-1.0, normals, &x, 1.0);
            let (h, &margin) = slack
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .expect("at least one trace");
            if worst_sample.as_ref().is_none_or(|w| margin < w.margin) {
                worst_sample = Some(Violation {
                    margin,
                    step: k,
                    index: s,
                    halfspace: h,
                });
            }
            if k < steps {
                let mut w = Vector::zeros(sys.disturbance_dim());
                let mut off = 0;
                for f in &sys.w_factors {
                    let v = &f.vertices()[rng.gen_range(0..f.len())];
                    w.rows_mut(off, v.len()).copy_from(v);
                    off += v.len();
                }
                next.gemv(1.0, &ad, &x, 0.0);
                next.gemv(1.0, &bd_bb, &w, 1.0);
                std::mem::swap(&mut x, &mut next);
            }
        }
    }
    let passed = worst_inner.as_ref().is_none_or(|v| v.margin >= -INNER_TOL)
        && worst_sample.as_ref().is_none_or(|v| v.margin >= -SAMPLE_TOL);
    Ok(ContainmentReport {
        samples: n_samples,
        seed,
        steps,
        worst_sample,
        worst_inner,
        sample_tol: SAMPLE_TOL,
        inner_tol: INNER_TOL,
        passed,
    })
}
