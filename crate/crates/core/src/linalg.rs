//! Dense linear-algebra kernels used throughout the crate.
//!
//! Everything here works on small `nalgebra` dynamic matrices: the matrix
//! exponential and zero-order-hold pair, pseudoinverse-based kernel
//! projectors and minimum-norm solutions, and a dense two-phase simplex for
//! the handful of LPs the reachability reports need.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value cutoff for rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

/// Residual tolerance (relative to `max(1, |b|)`) for declaring a row block consistent.
pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Pivot / reduced-cost tolerance of the simplex.
pub const LP_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inconsistent linear system (residual {residual:.3e})")]
    Inconsistent { residual: f64 },
    #[error("singular matrix")]
    Singular,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex exceeded {0} pivots")]
    PivotLimit(usize),
}

pub fn check_finite(m: &Matrix) -> Result<(), LinalgError> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(LinalgError::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

fn ensure_square(m: &Matrix) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

fn norm1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(m)` by scaling and squaring around a truncated Taylor core.
///
/// The argument is halved until its 1-norm is at most 0.5, where the series
/// converges to machine precision in fewer than 20 terms.
pub fn expm(m: &Matrix) -> Result<Matrix, LinalgError> {
    let n = ensure_square(m)?;
    let norm = norm1(m);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings);

    let mut result = Matrix::identity(n, n);
    let mut term = Matrix::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / k as f64;
        result += &term;
        if norm1(&term) <= f64::EPSILON * norm1(&result) * 1e-2 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// State-transition matrix `exp(m * dt)` of the time-invariant system `z' = m z`.
pub fn state_transition(m: &Matrix, dt: f64) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    expm(&(m * dt))
}

/// Zero-order-hold pair `(exp(m dt), ∫_0^dt exp(m s) ds)`.
///
/// Both blocks come out of a single exponential of the augmented matrix
/// `[[m dt, I dt], [0, 0]]`.
pub fn zoh_pair(m: &Matrix, dt: f64) -> Result<(Matrix, Matrix), LinalgError> {
    let n = ensure_square(m)?;
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(m * dt));
    aug.view_mut((0, n), (n, n)).copy_from(&(Matrix::identity(n, n) * dt));
    let e = expm(&aug)?;
    let ad = e.view((0, 0), (n, n)).into_owned();
    let integ = e.view((0, n), (n, n)).into_owned();
    Ok((ad, integ))
}

/// Right singular vectors spanning the row space of `rows`, using the
/// relative rank cutoff `rtol`.
fn row_space_basis(rows: &Matrix, rtol: f64) -> Vec<Vector> {
    if rows.nrows() == 0 || rows.ncols() == 0 {
        return Vec::new();
    }
    let svd = rows.clone().svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Vec::new();
    }
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > rtol * smax)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect()
}

/// Orthogonal projector onto `Ker(rows)`, i.e. `I - A⁺A`.
pub fn kernel_projector(rows: &Matrix) -> Matrix {
    kernel_projector_with_tol(rows, RANK_RTOL)
}

pub fn kernel_projector_with_tol(rows: &Matrix, rtol: f64) -> Matrix {
    let n = rows.ncols();
    let mut p = Matrix::identity(n, n);
    for v in row_space_basis(rows, rtol) {
        p -= &v * v.transpose();
    }
    // symmetrize away rounding
    (&p + p.transpose()) * 0.5
}

/// Moore-Penrose pseudoinverse with the relative rank cutoff [`RANK_RTOL`].
pub fn pseudo_inverse(a: &Matrix) -> Matrix {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Matrix::zeros(n, m);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = Matrix::zeros(n, m);
    if smax == 0.0 {
        return out;
    }
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > RANK_RTOL * smax {
            out += v_t.row(i).transpose() * u.column(i).transpose() / *s;
        }
    }
    out
}

/// Minimum-norm solution `A⁺ b` of a consistent system.
pub fn min_norm_solution(rows: &Matrix, b: &Vector) -> Result<Vector, LinalgError> {
    if rows.nrows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: rows.nrows(),
            got: b.len(),
        });
    }
    let x = pseudo_inverse(rows) * b;
    let residual = (rows * &x - b).norm();
    if residual > CONSISTENCY_TOL * b.norm().max(1.0) {
        return Err(LinalgError::Inconsistent { residual });
    }
    Ok(x)
}

/// Solves a square system by LU with partial pivoting.
pub fn solve_dense(a: &Matrix, b: &Vector) -> Result<Vector, LinalgError> {
    ensure_square(a)?;
    if a.nrows() != b.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: a.nrows(),
            got: b.len(),
        });
    }
    a.clone().lu().solve(b).ok_or(LinalgError::Singular)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

/// `optimize <objective, x>` subject to `constraints * x <= offsets`, `x` free.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: Vector,
    pub constraints: Matrix,
    pub offsets: Vector,
    pub sense: Sense,
}

impl LpProblem {
    pub fn new(objective: Vector, constraints: Matrix, offsets: Vector, sense: Sense) -> Result<Self, LinalgError> {
        if constraints.ncols() != objective.len() {
            return Err(LinalgError::DimensionMismatch {
                expected: objective.len(),
                got: constraints.ncols(),
            });
        }
        if constraints.nrows() != offsets.len() {
            return Err(LinalgError::DimensionMismatch {
                expected: constraints.nrows(),
                got: offsets.len(),
            });
        }
        Ok(Self {
            objective,
            constraints,
            offsets,
            sense,
        })
    }
}

struct Tableau {
    // m constraint rows, each `cols` coefficients followed by the rhs
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `cost · y` over the current basis with Bland's rule.
    fn maximize(&mut self, cost: &[f64], allowed: &[bool]) -> Result<(), LinalgError> {
        const MAX_PIVOTS: usize = 50_000;
        for _ in 0..MAX_PIVOTS {
            let entering = (0..self.cols).find(|&j| {
                allowed[j] && {
                    let zj: f64 = self
                        .rows
                        .iter()
                        .zip(&self.basis)
                        .map(|(row, &b)| cost[b] * row[j])
                        .sum();
                    cost[j] - zj > LP_EPS
                }
            });
            let Some(j) = entering else {
                return Ok(());
            };
            let rhs = self.cols;
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[j] > LP_EPS {
                    let ratio = row[rhs] / row[j];
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-12 || (ratio <= lr + 1e-12 && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(LinalgError::Unbounded);
            };
            self.pivot(r, j);
        }
        Err(LinalgError::PivotLimit(MAX_PIVOTS))
    }
}

/// Dense two-phase simplex with Bland's anti-cycling rule.
///
/// Free variables are split as `x = x⁺ - x⁻`. Returns the optimal value and
/// an optimal basic point.
pub fn solve_lp(p: &LpProblem) -> Result<(f64, Vector), LinalgError> {
    let n = p.objective.len();
    let m = p.constraints.nrows();
    let n_art = p.offsets.iter().filter(|b| **b < 0.0).count();
    let cols = 2 * n + m + n_art;
    let art_start = 2 * n + m;

    let mut rows = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut next_art = art_start;
    for i in 0..m {
        let mut row = vec![0.0; cols + 1];
        let sign = if p.offsets[i] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            row[k] = sign * p.constraints[(i, k)];
            row[n + k] = -sign * p.constraints[(i, k)];
        }
        row[2 * n + i] = sign;
        row[cols] = sign * p.offsets[i];
        if sign < 0.0 {
            row[next_art] = 1.0;
            basis.push(next_art);
            next_art += 1;
        } else {
            basis.push(2 * n + i);
        }
        rows.push(row);
    }
    let mut tab = Tableau { rows, basis, cols };

    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        for c in cost.iter_mut().skip(art_start) {
            *c = -1.0;
        }
        let allowed = vec![true; cols];
        tab.maximize(&cost, &allowed)?;
        let infeas: f64 = tab
            .rows
            .iter()
            .zip(&tab.basis)
            .filter(|(_, &b)| b >= art_start)
            .map(|(row, _)| row[cols])
            .sum();
        if infeas > 1e-7 {
            return Err(LinalgError::Infeasible);
        }
        // drive zero-valued artificials out of the basis where possible
        for r in 0..m {
            if tab.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| tab.rows[r][c].abs() > LP_EPS) {
                    tab.pivot(r, c);
                }
            }
        }
    }

    let dir = match p.sense {
        Sense::Max => 1.0,
        Sense::Min => -1.0,
    };
    let mut cost = vec![0.0; cols];
    for k in 0..n {
        cost[k] = dir * p.objective[k];
        cost[n + k] = -dir * p.objective[k];
    }
    let allowed: Vec<bool> = (0..cols).map(|c| c < art_start).collect();
    tab.maximize(&cost, &allowed)?;

    let mut x = Vector::zeros(n);
    for (row, &b) in tab.rows.iter().zip(&tab.basis) {
        if b < n {
            x[b] += row[cols];
        } else if b < 2 * n {
            x[b - n] -= row[cols];
        }
    }
    let value = p.objective.dot(&x);
    Ok((value, x))
}
