//! Halfspace and vertex representations of convex polytopes.
//!
//! Sets are carried in whichever representation an operation needs; boxes
//! and ball approximations generate both. There is no general H↔V
//! conversion.

use nalgebra::DVector;
use thiserror::Error;

use crate::linalg::{self, LinalgError, LpProblem, Matrix, Sense, Vector};

/// Default cap on the number of vertices a Cartesian product may produce.
pub const DEFAULT_VERTEX_CAP: usize = 4096;

/// Vertices closer than this (max-norm) are treated as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("halfspace normal is zero")]
    ZeroNormal,
    #[error("non-finite value in polytope data")]
    NonFinite,
    #[error("polytope must have at least one {0}")]
    Empty(&'static str),
    #[error("duplicate vertices {0} and {1}")]
    DuplicateVertex(usize, usize),
    #[error("box lower bound exceeds upper bound in coordinate {0}")]
    InvertedBox(usize),
    #[error("ball radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("a 2-D ball needs resolution >= 3, got {0}")]
    Resolution(usize),
    #[error("product would have {count} vertices, cap is {cap}")]
    VertexCap { count: usize, cap: usize },
    #[error("agent index {index} out of range for {count} blocks")]
    AgentOutOfRange { index: usize, count: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// `<normal, x> <= offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Halfspace {
    pub normal: Vector,
    pub offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vector, offset: f64) -> Result<Self, PolytopeError> {
        if normal.iter().any(|v| !v.is_finite()) || !offset.is_finite() {
            return Err(PolytopeError::NonFinite);
        }
        if normal.iter().all(|v| *v == 0.0) {
            return Err(PolytopeError::ZeroNormal);
        }
        Ok(Self { normal, offset })
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// `offset - <normal, x>`; negative means violated.
    pub fn margin(&self, x: &Vector) -> f64 {
        self.offset - self.normal.dot(x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HPolytope {
    halfspaces: Vec<Halfspace>,
    dim: usize,
}

impl HPolytope {
    pub fn new(halfspaces: Vec<Halfspace>) -> Result<Self, PolytopeError> {
        let dim = halfspaces.first().ok_or(PolytopeError::Empty("halfspace"))?.dim();
        if let Some(h) = halfspaces.iter().find(|h| h.dim() != dim) {
            return Err(PolytopeError::DimensionMismatch {
                expected: dim,
                got: h.dim(),
            });
        }
        Ok(Self { halfspaces, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn len(&self) -> usize {
        self.halfspaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.halfspaces.is_empty()
    }

    fn check_dim(&self, x: &Vector) -> Result<(), PolytopeError> {
        if x.len() != self.dim {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Whether `<c_j, x> <= γ_j + tol` for every face.
    pub fn contains(&self, x: &Vector, tol: f64) -> Result<bool, PolytopeError> {
        Ok(self.min_margin(x)? >= -tol)
    }

    /// Smallest face margin at `x` (negative when outside).
    pub fn min_margin(&self, x: &Vector) -> Result<f64, PolytopeError> {
        self.check_dim(x)?;
        Ok(self
            .halfspaces
            .iter()
            .map(|h| h.margin(x))
            .fold(f64::INFINITY, f64::min))
    }

    pub fn to_matrices(&self) -> (Matrix, Vector) {
        let a = Matrix::from_fn(self.len(), self.dim, |i, j| self.halfspaces[i].normal[j]);
        let b = Vector::from_iterator(self.len(), self.halfspaces.iter().map(|h| h.offset));
        (a, b)
    }

    /// Optimizes a linear objective over the polytope.
    pub fn optimize(&self, objective: &Vector, sense: Sense) -> Result<(f64, Vector), PolytopeError> {
        self.check_dim(objective)?;
        let (a, b) = self.to_matrices();
        Ok(linalg::solve_lp(&LpProblem::new(objective.clone(), a, b, sense)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VPolytope {
    vertices: Vec<Vector>,
    dim: usize,
}

impl VPolytope {
    /// Rejects empty input, mixed dimensions and duplicates.
    pub fn new(vertices: Vec<Vector>) -> Result<Self, PolytopeError> {
        let dim = vertices.first().ok_or(PolytopeError::Empty("vertex"))?.len();
        for v in &vertices {
            if v.len() != dim {
                return Err(PolytopeError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(PolytopeError::NonFinite);
            }
        }
        for i in 0..vertices.len() {
            for j in i + 1..vertices.len() {
                if (&vertices[i] - &vertices[j]).amax() <= DUPLICATE_TOL {
                    return Err(PolytopeError::DuplicateVertex(i, j));
                }
            }
        }
        Ok(Self { vertices, dim })
    }

    /// Like [`VPolytope::new`] but silently drops later duplicates.
    pub fn dedup(points: Vec<Vector>) -> Result<Self, PolytopeError> {
        let mut kept: Vec<Vector> = Vec::with_capacity(points.len());
        for p in points {
            if !kept.iter().any(|k| (k - &p).amax() <= DUPLICATE_TOL) {
                kept.push(p);
            }
        }
        Self::new(kept)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertices(&self) -> &[Vector] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Maximizer of `<direction, v>` over the vertices; ties go to the
    /// lowest index.
    pub fn support_vertex(&self, direction: &Vector) -> Result<(&Vector, f64, usize), PolytopeError> {
        if direction.len() != self.dim {
            return Err(PolytopeError::DimensionMismatch {
                expected: self.dim,
                got: direction.len(),
            });
        }
        Ok(argmax_lowest_index(&self.vertices, direction)
            .map(|(i, val)| (&self.vertices[i], val, i))
            .expect("non-empty by construction"))
    }
}

/// Index and value of the first maximizer of `<direction, v>`.
pub fn argmax_lowest_index(points: &[Vector], direction: &Vector) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in points.iter().enumerate() {
        let val = direction.dot(v);
        if best.is_none_or(|(_, b)| val > b) {
            best = Some((i, val));
        }
    }
    best
}

/// A set available in both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct PolytopePair {
    pub h: HPolytope,
    pub v: VPolytope,
}

impl PolytopePair {
    pub fn new(h: HPolytope, v: VPolytope) -> Result<Self, PolytopeError> {
        if h.dim() != v.dim() {
            return Err(PolytopeError::DimensionMismatch {
                expected: h.dim(),
                got: v.dim(),
            });
        }
        Ok(Self { h, v })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

/// Axis-aligned box `lo <= x <= hi` in both representations.
///
/// Faces come per coordinate as `-x_i <= -lo_i` then `x_i <= hi_i`.
/// Vertices enumerate the coordinate intervals with coordinate 0 varying
/// slowest; degenerate coordinates contribute a single value.
pub fn box_polytope(lo: &Vector, hi: &Vector) -> Result<PolytopePair, PolytopeError> {
    if lo.len() != hi.len() {
        return Err(PolytopeError::DimensionMismatch {
            expected: lo.len(),
            got: hi.len(),
        });
    }
    if lo.is_empty() {
        return Err(PolytopeError::Empty("coordinate"));
    }
    let dim = lo.len();
    let mut faces = Vec::with_capacity(2 * dim);
    let mut intervals = Vec::with_capacity(dim);
    for i in 0..dim {
        if !lo[i].is_finite() || !hi[i].is_finite() {
            return Err(PolytopeError::NonFinite);
        }
        if lo[i] > hi[i] {
            return Err(PolytopeError::InvertedBox(i));
        }
        let mut e = Vector::zeros(dim);
        e[i] = -1.0;
        faces.push(Halfspace::new(e.clone(), -lo[i])?);
        e[i] = 1.0;
        faces.push(Halfspace::new(e, hi[i])?);
        let iv = if lo[i] == hi[i] {
            vec![DVector::from_element(1, lo[i])]
        } else {
            vec![DVector::from_element(1, lo[i]), DVector::from_element(1, hi[i])]
        };
        intervals.push(VPolytope::new(iv)?);
    }
    let v = product(&intervals, usize::MAX)?;
    PolytopePair::new(HPolytope::new(faces)?, v)
}

/// Inscribed polytope of the Euclidean ball of radius `rho`.
///
/// Dimension 1 gives `{-ρ, ρ}`, dimension 2 a regular `resolution`-gon
/// starting on the positive x-axis, higher dimensions the cross-polytope
/// `{+ρe_0, -ρe_0, +ρe_1, ...}`.
pub fn ball_vpolytope(rho: f64, dim: usize, resolution: usize) -> Result<VPolytope, PolytopeError> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(PolytopeError::NonPositiveRadius(rho));
    }
    match dim {
        0 => Err(PolytopeError::Empty("coordinate")),
        1 => VPolytope::new(vec![DVector::from_element(1, -rho), DVector::from_element(1, rho)]),
        2 => {
            if resolution < 3 {
                return Err(PolytopeError::Resolution(resolution));
            }
            let snap = |x: f64| if x.abs() < 1e-14 * rho { 0.0 } else { x };
            let verts = (0..resolution)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / resolution as f64;
                    DVector::from_vec(vec![snap(rho * t.cos()), snap(rho * t.sin())])
                })
                .collect();
            VPolytope::new(verts)
        }
        _ => {
            let mut verts = Vec::with_capacity(2 * dim);
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut v = Vector::zeros(dim);
                    v[i] = s * rho;
                    verts.push(v);
                }
            }
            VPolytope::new(verts)
        }
    }
}

/// Mixed-radix position of a product vertex given per-factor indices
/// (factor 0 most significant).
pub fn product_index(factor_indices: &[usize], factor_sizes: &[usize]) -> usize {
    factor_indices
        .iter()
        .zip(factor_sizes)
        .fold(0, |acc, (i, n)| acc * n + i)
}

/// Cartesian product of vertex sets, factor 0 varying slowest.
pub fn product(ps: &[VPolytope], cap: usize) -> Result<VPolytope, PolytopeError> {
    if ps.is_empty() {
        return Err(PolytopeError::Empty("factor"));
    }
    let count = ps
        .iter()
        .try_fold(1usize, |acc, p| acc.checked_mul(p.len()))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(PolytopeError::VertexCap { count, cap });
    }
    let dim: usize = ps.iter().map(VPolytope::dim).sum();
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(dim)];
    for p in ps {
        let mut next = Vec::with_capacity(out.len() * p.len());
        for prefix in &out {
            for v in p.vertices() {
                let mut row = prefix.clone();
                row.extend(v.iter());
                next.push(row);
            }
        }
        out = next;
    }
    Ok(VPolytope {
        vertices: out.into_iter().map(DVector::from_vec).collect(),
        dim,
    })
}

/// Zero-pads `face` into stacked coordinates at the block of `agent_index`.
pub fn lift_face(face: &Halfspace, agent_index: usize, block_dims: &[usize]) -> Result<Halfspace, PolytopeError> {
    if agent_index >= block_dims.len() {
        return Err(PolytopeError::AgentOutOfRange {
            index: agent_index,
            count: block_dims.len(),
        });
    }
    if face.dim() != block_dims[agent_index] {
        return Err(PolytopeError::DimensionMismatch {
            expected: block_dims[agent_index],
            got: face.dim(),
        });
    }
    let offset: usize = block_dims[..agent_index].iter().sum();
    let total: usize = block_dims.iter().sum();
    let mut normal = Vector::zeros(total);
    normal.rows_mut(offset, face.dim()).copy_from(&face.normal);
    Ok(Halfspace {
        normal,
        offset: face.offset,
    })
}

/// Product of H-polytopes by lifting every factor's faces, in factor order.
pub fn product_h(ps: &[HPolytope]) -> Result<HPolytope, PolytopeError> {
    if ps.is_empty() {
        return Err(PolytopeError::Empty("factor"));
    }
    let dims: Vec<usize> = ps.iter().map(HPolytope::dim).collect();
    let mut faces = Vec::new();
    for (i, p) in ps.iter().enumerate() {
        for h in p.halfspaces() {
            faces.push(lift_face(h, i, &dims)?);
        }
    }
    HPolytope::new(faces)
}
