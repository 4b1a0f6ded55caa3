//! Polyhedral cells `{x : E·x ≥ f}`, partitions built from them, and the
//! joint-space cells obtained by substituting `x₁ = x̃ + P·x₂`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

/// Componentwise slack used for every membership test.
pub const MEMBERSHIP_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("a polyhedron needs at least one constraint row")]
    NoConstraints,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("state {0:?} lies in no partition cell")]
    NoCell(Vec<f64>),
    #[error("polyhedron is unbounded")]
    Unbounded,
    #[error("polyhedron is empty")]
    Empty,
    #[error("expected a 2-D polyhedron, got dimension {0}")]
    NotTwoD(usize),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, PolytopeError>;

/// Whether every boundary of a cell passes through the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Conic,
    Affine,
}

/// `{x ∈ ℝⁿ : E·x ≥ f}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    e: Matrix,
    f: Vec<f64>,
}

impl Polyhedron {
    pub fn new(e: Matrix, f: Vec<f64>) -> Result<Self> {
        if e.rows() == 0 {
            return Err(PolytopeError::NoConstraints);
        }
        if e.rows() != f.len() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "E has {} rows but f has {} entries",
                e.rows(),
                f.len()
            )));
        }
        if !e.is_finite() || f.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite("polyhedron").into());
        }
        Ok(Self { e, f })
    }

    /// The whole space `ℝⁿ`, written as the vacuous row `0·x ≥ 0`.
    pub fn universe(dim: usize) -> Self {
        Self {
            e: Matrix::zeros(1, dim),
            f: vec![0.0],
        }
    }

    pub fn e(&self) -> &Matrix {
        &self.e
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.e.cols()
    }

    pub fn kind(&self) -> CellKind {
        classify_cell(self)
    }

    /// Smallest entry of `E·x − f`; non-negative inside the cell.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        let ex = self.e.mul_vec(x)?;
        Ok(ex
            .iter()
            .zip(&self.f)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min))
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.margin(x).map(|m| m >= -slack).unwrap_or(false)
    }

    /// Stacks the constraints of `self` on top of `other`.
    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron> {
        let e = Matrix::vstack(&[&self.e, &other.e])?;
        let mut f = self.f.clone();
        f.extend_from_slice(&other.f);
        Polyhedron::new(e, f)
    }
}

/// Conic iff the offset vector is exactly zero.
pub fn classify_cell(p: &Polyhedron) -> CellKind {
    if p.f.iter().all(|v| *v == 0.0) {
        CellKind::Conic
    } else {
        CellKind::Affine
    }
}

/// `Ē = [E −f]` for affine cells, `E` for conic ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CellBounding {
    pub ebar: Matrix,
    pub kind: CellKind,
}

impl CellBounding {
    pub fn from_polyhedron(p: &Polyhedron) -> Self {
        match p.kind() {
            CellKind::Conic => Self {
                ebar: p.e.clone(),
                kind: CellKind::Conic,
            },
            CellKind::Affine => {
                let neg_f = Matrix::column(&p.f).scale(-1.0);
                Self {
                    ebar: Matrix::hstack(&[&p.e, &neg_f]).expect("row counts agree"),
                    kind: CellKind::Affine,
                }
            }
        }
    }

    /// Bounding in homogeneous coordinates regardless of kind, `[E −f]`.
    pub fn homogeneous(p: &Polyhedron) -> Matrix {
        let neg_f = Matrix::column(&p.f).scale(-1.0);
        Matrix::hstack(&[&p.e, &neg_f]).expect("row counts agree")
    }
}

/// `J̄ = [J h]` (affine) or `J` (conic).
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityMatrix {
    pub jbar: Matrix,
    pub kind: CellKind,
}

impl ContinuityMatrix {
    /// Global identity: `[I 0; 0 1]` for affine cells, `I` for conic ones.
    pub fn identity(dim: usize, kind: CellKind) -> Self {
        let size = match kind {
            CellKind::Conic => dim,
            CellKind::Affine => dim + 1,
        };
        Self {
            jbar: Matrix::identity(size),
            kind,
        }
    }

    /// `J̄·[x; 1]` for affine cells, `J·x` for conic cells.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            CellKind::Conic => Ok(self.jbar.mul_vec(x)?),
            CellKind::Affine => {
                let mut xb = x.to_vec();
                xb.push(1.0);
                Ok(self.jbar.mul_vec(&xb)?)
            }
        }
    }
}

/// Largest mismatch `‖J̄₁[v;1] − J̄₂[v;1]‖_∞` over the points that lie in
/// both cells.
pub fn continuity_mismatch(
    cell_a: &Polyhedron,
    j_a: &ContinuityMatrix,
    cell_b: &Polyhedron,
    j_b: &ContinuityMatrix,
    points: &[Vec<f64>],
) -> Result<f64> {
    let mut worst = 0.0f64;
    for v in points {
        if cell_a.contains(v, MEMBERSHIP_SLACK) && cell_b.contains(v, MEMBERSHIP_SLACK) {
            let a = j_a.apply(v)?;
            let b = j_b.apply(v)?;
            if a.len() != b.len() {
                return Err(PolytopeError::DimensionMismatch(
                    "continuity matrices differ in row count".into(),
                ));
            }
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(worst)
}

/// Ordered list of cells over a common state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    cells: Vec<Polyhedron>,
}

impl Partition {
    pub fn new(cells: Vec<Polyhedron>) -> Result<Self> {
        let dim = cells
            .first()
            .map(Polyhedron::dim)
            .ok_or(PolytopeError::NoConstraints)?;
        if let Some((i, c)) = cells.iter().enumerate().find(|(_, c)| c.dim() != dim) {
            return Err(PolytopeError::DimensionMismatch(format!(
                "cell {i} has dimension {}, expected {dim}",
                c.dim()
            )));
        }
        Ok(Self { cells })
    }

    pub fn cells(&self) -> &[Polyhedron] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.cells[0].dim()
    }

    pub fn kinds(&self) -> Vec<CellKind> {
        self.cells.iter().map(Polyhedron::kind).collect()
    }

    /// Index of a cell containing `x`; `previous` wins whenever it still
    /// qualifies, otherwise the lowest qualifying index.
    pub fn locate_mode(&self, x: &[f64], previous: Option<usize>) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "state of length {} for a partition of dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if let Some(p) = previous {
            if self
                .cells
                .get(p)
                .is_some_and(|c| c.contains(x, MEMBERSHIP_SLACK))
            {
                return Ok(p);
            }
        }
        self.cells
            .iter()
            .position(|c| c.contains(x, MEMBERSHIP_SLACK))
            .ok_or_else(|| PolytopeError::NoCell(x.to_vec()))
    }

    /// All cells containing `x`, in index order.
    pub fn containing(&self, x: &[f64]) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.contains(x, MEMBERSHIP_SLACK))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Joint cell `{ω = (x̃, x₂) : [E  E·P]·ω ≥ f}` for a concrete cell and its map `P`.
pub fn joint_cell(cell: &Polyhedron, p: &Matrix) -> Result<Polyhedron> {
    if p.rows() != cell.dim() {
        return Err(PolytopeError::DimensionMismatch(format!(
            "P has {} rows but the cell lives in dimension {}",
            p.rows(),
            cell.dim()
        )));
    }
    let ep = cell.e.matmul(p)?;
    Polyhedron::new(Matrix::hstack(&[&cell.e, &ep])?, cell.f.clone())
}

/// Joint partition for a linear abstraction: one cell per concrete mode.
pub fn joint_partition_linear(part: &Partition, ps: &[Matrix]) -> Result<Partition> {
    if ps.len() != part.len() {
        return Err(PolytopeError::DimensionMismatch(format!(
            "{} relation maps for {} cells",
            ps.len(),
            part.len()
        )));
    }
    let m = ps.first().map(Matrix::cols).unwrap_or(0);
    if ps.iter().any(|p| p.cols() != m) {
        return Err(PolytopeError::DimensionMismatch(
            "relation maps disagree on the abstraction dimension".into(),
        ));
    }
    Partition::new(
        part.cells
            .iter()
            .zip(ps)
            .map(|(c, p)| joint_cell(c, p))
            .collect::<Result<_>>()?,
    )
}

/// Joint partition for a PWA abstraction, one cell per `(i, j)` pair:
/// rows `[Eᵢ EᵢPᵢ; E_cj E_cjPᵢ]` with offsets `[fᵢ; f_cj]`.
pub fn joint_partition_pwa(
    concrete: &Partition,
    concrete_space_cells: &[Polyhedron],
    ps: &[Matrix],
    pairs: &[(usize, usize)],
) -> Result<Partition> {
    if ps.len() != concrete.len() {
        return Err(PolytopeError::DimensionMismatch(format!(
            "{} relation maps for {} cells",
            ps.len(),
            concrete.len()
        )));
    }
    let mut cells = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        let ci = concrete.cells.get(i).ok_or_else(|| {
            PolytopeError::DimensionMismatch(format!("pair refers to missing cell {i}"))
        })?;
        let cj = concrete_space_cells.get(j).ok_or_else(|| {
            PolytopeError::DimensionMismatch(format!("pair refers to missing abstraction cell {j}"))
        })?;
        if cj.dim() != ci.dim() {
            return Err(PolytopeError::DimensionMismatch(format!(
                "abstraction cell {j} has {} columns, expected {}",
                cj.dim(),
                ci.dim()
            )));
        }
        cells.push(joint_cell(&ci.intersect(cj)?, &ps[i])?);
    }
    Partition::new(cells)
}

/// Online estimate of the abstraction cell `{x₂ : E_cj·P·x₂ ≥ f_cj − E_cj·x̃}`.
pub fn abstraction_cell_estimate(
    concrete_space_cell: &Polyhedron,
    p: &Matrix,
    x_tilde: &[f64],
) -> Result<Polyhedron> {
    let ec = &concrete_space_cell.e;
    if p.rows() != ec.cols() || x_tilde.len() != ec.cols() {
        return Err(PolytopeError::DimensionMismatch(format!(
            "cell of dimension {} with P {}x{} and x̃ of length {}",
            ec.cols(),
            p.rows(),
            p.cols(),
            x_tilde.len()
        )));
    }
    let ea = ec.matmul(p)?;
    let ecx = ec.mul_vec(x_tilde)?;
    let fa = concrete_space_cell
        .f
        .iter()
        .zip(&ecx)
        .map(|(f, e)| f - e)
        .collect();
    Polyhedron::new(ea, fa)
}

/// Counter-clockwise vertices of a bounded 2-D polyhedron.
pub fn vertices_2d(p: &Polyhedron) -> Result<Vec<[f64; 2]>> {
    if p.dim() != 2 {
        return Err(PolytopeError::NotTwoD(p.dim()));
    }
    if has_recession_direction(p) {
        return Err(PolytopeError::Unbounded);
    }
    let rows = p.e.rows();
    let mut verts: Vec<[f64; 2]> = Vec::new();
    for r in 0..rows {
        let (a1, b1) = (p.e[(r, 0)], p.e[(r, 1)]);
        for s in (r + 1)..rows {
            let (a2, b2) = (p.e[(s, 0)], p.e[(s, 1)]);
            let det = a1 * b2 - a2 * b1;
            let scale = a1.hypot(b1) * a2.hypot(b2);
            if scale == 0.0 || det.abs() <= 1e-14 * scale {
                continue;
            }
            let (f1, f2) = (p.f[r], p.f[s]);
            let v = [(f1 * b2 - f2 * b1) / det, (a1 * f2 - a2 * f1) / det];
            if p.contains(&v, MEMBERSHIP_SLACK)
                && !verts
                    .iter()
                    .any(|w| (w[0] - v[0]).abs() <= 1e-9 && (w[1] - v[1]).abs() <= 1e-9)
            {
                verts.push(v);
            }
        }
    }
    if verts.is_empty() {
        return Err(PolytopeError::Empty);
    }
    let n = verts.len() as f64;
    let cx = verts.iter().map(|v| v[0]).sum::<f64>() / n;
    let cy = verts.iter().map(|v| v[1]).sum::<f64>() / n;
    verts.sort_by(|a, b| {
        let ta = (a[1] - cy).atan2(a[0] - cx);
        let tb = (b[1] - cy).atan2(b[0] - cx);
        ta.total_cmp(&tb)
    });
    Ok(verts)
}

/// A nonzero `d` with `E·d ≥ 0` exists iff the (nonempty) cell is unbounded.
/// In the plane the extreme rays of that cone are perpendicular to some
/// constraint normal, or the cone is everything.
fn has_recession_direction(p: &Polyhedron) -> bool {
    let mut candidates = vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
    for r in 0..p.e.rows() {
        let (a, b) = (p.e[(r, 0)], p.e[(r, 1)]);
        let nrm = a.hypot(b);
        if nrm > 0.0 {
            candidates.push([-b / nrm, a / nrm]);
            candidates.push([b / nrm, -a / nrm]);
        }
    }
    candidates.iter().any(|d| {
        (0..p.e.rows()).all(|r| {
            let row = p.e.row(r);
            let nrm = row[0].hypot(row[1]);
            row[0] * d[0] + row[1] * d[1] >= -1e-12 * nrm
        })
    })
}

/// Whether `P·Z + ŷ ⊆ X` for a bounded 2-D polytope `Z`.
///
/// For bounded `Z` this is equivalent to the multiplier condition
/// `Λₖ D_z = D Qₖ, Σ Λₖ E_z ≥ E − D ŷ, Σ Qₖ = P` with `Λₖ ≥ 0`; checking the
/// mapped vertices avoids the LP.
pub fn contains_mapped(z: &Polyhedron, p: &Matrix, yhat: &[f64], x: &Polyhedron) -> Result<bool> {
    if p.cols() != 2 || p.rows() != yhat.len() || x.dim() != yhat.len() {
        return Err(PolytopeError::DimensionMismatch(format!(
            "P {}x{}, ŷ of length {}, X of dimension {}",
            p.rows(),
            p.cols(),
            yhat.len(),
            x.dim()
        )));
    }
    for v in vertices_2d(z)? {
        let mut y = p.mul_vec(&v)?;
        for (yi, oi) in y.iter_mut().zip(yhat) {
            *yi += oi;
        }
        if !x.contains(&y, MEMBERSHIP_SLACK) {
            return Ok(false);
        }
    }
    Ok(true)
}
