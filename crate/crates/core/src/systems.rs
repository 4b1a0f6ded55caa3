//! Concrete PWA plant, linear and PWA abstractions, and disturbance signals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::polytope::{ContinuityMatrix, Partition, Polyhedron, PolytopeError};

/// Required distance of every eigenvalue real part from the imaginary axis.
pub const HURWITZ_MARGIN: f64 = 1e-8;
/// Time step of the `exp(M·h)` spectral-radius test.
pub const HURWITZ_PROBE_STEP: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not Hurwitz (largest real part estimate {max_real:e})")]
    NotHurwitz { max_real: f64 },
    #[error("invalid disturbance: {0}")]
    InvalidDisturbance(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

pub type Result<T> = std::result::Result<T, SystemsError>;

fn mismatch(msg: String) -> SystemsError {
    SystemsError::DimensionMismatch(msg)
}

/// Accepts `M` as Hurwitz when either the symmetric part is negative
/// definite or `ρ(exp(M·h)) < 1 − 1e-8` with `h = 0.01`.
pub fn check_hurwitz(m: &Matrix) -> Result<()> {
    m.require_square()?;
    let sym = linalg::sym_eigen(&m.symmetric_part()?)?;
    if sym.max() < -HURWITZ_MARGIN {
        return Ok(());
    }
    let e = linalg::expm_taylor(m, HURWITZ_PROBE_STEP)?;
    let log_rho = linalg::log_spectral_radius(&e)?;
    if log_rho.exp() < 1.0 - HURWITZ_MARGIN {
        Ok(())
    } else {
        Err(SystemsError::NotHurwitz {
            max_real: log_rho / HURWITZ_PROBE_STEP,
        })
    }
}

/// One mode `ẋ₁ = A x₁ + B u₁ + c`, `y₁ = C x₁` with `‖c‖_∞ ≤ c_bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwaMode {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub c_bound: f64,
}

impl PwaMode {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, c_bound: f64) -> Result<Self> {
        let n = a.rows();
        if !a.is_square() {
            return Err(mismatch(format!("A is {}x{}", a.rows(), a.cols())));
        }
        if b.rows() != n {
            return Err(mismatch(format!("B has {} rows, expected {n}", b.rows())));
        }
        if c.cols() != n {
            return Err(mismatch(format!("C has {} columns, expected {n}", c.cols())));
        }
        if !(c_bound >= 0.0 && c_bound.is_finite()) {
            return Err(SystemsError::InvalidDisturbance(format!(
                "disturbance bound {c_bound} must be finite and non-negative"
            )));
        }
        Ok(Self { a, b, c, c_bound })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn p(&self) -> usize {
        self.b.cols()
    }

    pub fn k(&self) -> usize {
        self.c.rows()
    }
}

/// The concrete plant: one mode per partition cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PwaSystem {
    modes: Vec<PwaMode>,
    partition: Partition,
    continuity: Option<Vec<ContinuityMatrix>>,
}

impl PwaSystem {
    pub fn new(
        modes: Vec<PwaMode>,
        partition: Partition,
        continuity: Option<Vec<ContinuityMatrix>>,
    ) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| mismatch("a PWA system needs at least one mode".into()))?;
        let (n, p, k) = (first.n(), first.p(), first.k());
        for (i, m) in modes.iter().enumerate() {
            if (m.n(), m.p(), m.k()) != (n, p, k) {
                return Err(mismatch(format!(
                    "mode {} has (n, p, k) = ({}, {}, {}), expected ({n}, {p}, {k})",
                    i + 1,
                    m.n(),
                    m.p(),
                    m.k()
                )));
            }
        }
        if partition.len() != modes.len() {
            return Err(mismatch(format!(
                "{} modes but {} partition cells",
                modes.len(),
                partition.len()
            )));
        }
        if partition.dim() != n {
            return Err(mismatch(format!(
                "partition lives in dimension {}, state dimension is {n}",
                partition.dim()
            )));
        }
        if let Some(j) = &continuity {
            if j.len() != modes.len() {
                return Err(mismatch(format!(
                    "{} continuity matrices for {} modes",
                    j.len(),
                    modes.len()
                )));
            }
        }
        Ok(Self {
            modes,
            partition,
            continuity,
        })
    }

    pub fn modes(&self) -> &[PwaMode] {
        &self.modes
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn continuity(&self) -> Option<&[ContinuityMatrix]> {
        self.continuity.as_deref()
    }

    pub fn n(&self) -> usize {
        self.modes[0].n()
    }

    pub fn p(&self) -> usize {
        self.modes[0].p()
    }

    pub fn k(&self) -> usize {
        self.modes[0].k()
    }

    pub fn s(&self) -> usize {
        self.modes.len()
    }
}

/// `ẋ₂ = F x₂ + G u₂`, `y₂ = H x₂` with input transformation `u₂ = L x₂ + ū₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAbstraction {
    pub f: Matrix,
    pub g: Matrix,
    pub h: Matrix,
    pub l: Matrix,
}

impl LinearAbstraction {
    /// Validates dimensions and that `F + G L` is Hurwitz.
    pub fn new(f: Matrix, g: Matrix, h: Matrix, l: Matrix) -> Result<Self> {
        let m = f.rows();
        if h.cols() != m {
            return Err(mismatch(format!("H has {} columns, expected {m}", h.cols())));
        }
        transformed_abstraction_matrix(&f, &g, &l)?;
        Ok(Self { f, g, h, l })
    }

    pub fn m(&self) -> usize {
        self.f.rows()
    }

    pub fn q(&self) -> usize {
        self.g.cols()
    }

    /// `F + G L`.
    pub fn closed_loop(&self) -> Matrix {
        &self.f + &(&self.g * &self.l)
    }
}

/// Simpler PWA abstraction; mode `j` is active while `E_cj·x₁ ≥ f_cj`.
#[derive(Debug, Clone, PartialEq)]
pub struct PwaAbstraction {
    modes: Vec<LinearAbstraction>,
    concrete_space_cells: Vec<Polyhedron>,
}

impl PwaAbstraction {
    pub fn new(modes: Vec<LinearAbstraction>, concrete_space_cells: Vec<Polyhedron>) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| mismatch("a PWA abstraction needs at least one mode".into()))?;
        let (m, q, k) = (first.m(), first.q(), first.h.rows());
        if modes.iter().any(|md| (md.m(), md.q(), md.h.rows()) != (m, q, k)) {
            return Err(mismatch("abstraction modes disagree on (m, q, k)".into()));
        }
        if concrete_space_cells.len() != modes.len() {
            return Err(mismatch(format!(
                "{} abstraction modes but {} concrete-space cells",
                modes.len(),
                concrete_space_cells.len()
            )));
        }
        Ok(Self {
            modes,
            concrete_space_cells,
        })
    }

    pub fn modes(&self) -> &[LinearAbstraction] {
        &self.modes
    }

    pub fn concrete_space_cells(&self) -> &[Polyhedron] {
        &self.concrete_space_cells
    }

    pub fn r(&self) -> usize {
        self.modes.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Abstraction {
    Linear(LinearAbstraction),
    Pwa(PwaAbstraction),
}

impl Abstraction {
    pub fn modes(&self) -> &[LinearAbstraction] {
        match self {
            Abstraction::Linear(a) => std::slice::from_ref(a),
            Abstraction::Pwa(p) => p.modes(),
        }
    }

    pub fn m(&self) -> usize {
        self.modes()[0].m()
    }

    pub fn q(&self) -> usize {
        self.modes()[0].q()
    }

    pub fn is_pwa(&self) -> bool {
        matches!(self, Abstraction::Pwa(_))
    }
}

/// `F + G L`, rejected unless Hurwitz.
pub fn transformed_abstraction_matrix(f: &Matrix, g: &Matrix, l: &Matrix) -> Result<Matrix> {
    let m = f.rows();
    if !f.is_square() {
        return Err(mismatch(format!("F is {}x{}", f.rows(), f.cols())));
    }
    if g.rows() != m || l.rows() != g.cols() || l.cols() != m {
        return Err(mismatch(format!(
            "F {m}x{m}, G {}x{}, L {}x{}",
            g.rows(),
            g.cols(),
            l.rows(),
            l.cols()
        )));
    }
    let fgl = f + &(g * l);
    check_hurwitz(&fgl)?;
    Ok(fgl)
}

/// Exogenous disturbance `c(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisturbanceSignal {
    Zero {
        dim: usize,
    },
    Constant {
        value: Vec<f64>,
    },
    /// `(offset + amplitude·sin t)·mask`, with `mask` defaulting to all ones.
    Sinusoid {
        dim: usize,
        offset: f64,
        amplitude: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<Vec<f64>>,
    },
}

impl DisturbanceSignal {
    pub fn validate(&self) -> Result<()> {
        match self {
            DisturbanceSignal::Zero { .. } => Ok(()),
            DisturbanceSignal::Constant { value } => {
                if value.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(SystemsError::InvalidDisturbance("non-finite constant".into()))
                }
            }
            DisturbanceSignal::Sinusoid {
                dim,
                offset,
                amplitude,
                mask,
            } => {
                if !offset.is_finite() || !amplitude.is_finite() {
                    return Err(SystemsError::InvalidDisturbance(
                        "non-finite sinusoid parameters".into(),
                    ));
                }
                match mask {
                    Some(mk) if mk.len() != *dim => Err(SystemsError::InvalidDisturbance(format!(
                        "mask has {} entries for dimension {dim}",
                        mk.len()
                    ))),
                    Some(mk) if mk.iter().any(|v| !v.is_finite()) => Err(
                        SystemsError::InvalidDisturbance("non-finite mask entry".into()),
                    ),
                    _ => Ok(()),
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DisturbanceSignal::Zero { dim } | DisturbanceSignal::Sinusoid { dim, .. } => *dim,
            DisturbanceSignal::Constant { value } => value.len(),
        }
    }

    pub fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.value_into(t, &mut out);
        out
    }

    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match self {
            DisturbanceSignal::Zero { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            DisturbanceSignal::Constant { value } => out.copy_from_slice(value),
            DisturbanceSignal::Sinusoid {
                offset,
                amplitude,
                mask,
                ..
            } => {
                let s = offset + amplitude * t.sin();
                match mask {
                    Some(mk) => out.iter_mut().zip(mk).for_each(|(o, w)| *o = s * w),
                    None => out.iter_mut().for_each(|o| *o = s),
                }
            }
        }
    }

    /// `sup_t ‖c(t)‖_∞`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            DisturbanceSignal::Zero { .. } => 0.0,
            DisturbanceSignal::Constant { value } => linalg::norm_inf(value),
            DisturbanceSignal::Sinusoid {
                offset,
                amplitude,
                mask,
                ..
            } => {
                let w = mask.as_deref().map_or(1.0, linalg::norm_inf);
                (offset.abs() + amplitude.abs()) * w
            }
        }
    }

    /// Same signal with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            DisturbanceSignal::Zero { dim } => DisturbanceSignal::Zero { dim: *dim },
            DisturbanceSignal::Constant { value } => DisturbanceSignal::Constant {
                value: value.iter().map(|v| v * factor).collect(),
            },
            DisturbanceSignal::Sinusoid {
                dim,
                offset,
                amplitude,
                mask,
            } => DisturbanceSignal::Sinusoid {
                dim: *dim,
                offset: offset * factor,
                amplitude: amplitude * factor,
                mask: mask.clone(),
            },
        }
    }

    /// Rescales the signal so that its sup-norm equals `target`.
    pub fn with_sup_norm(&self, target: f64) -> Self {
        let sup = self.sup_norm();
        if sup == 0.0 {
            self.clone()
        } else {
            self.scaled(target / sup)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoid() -> DisturbanceSignal {
        DisturbanceSignal::Sinusoid {
            dim: 6,
            offset: -0.1,
            amplitude: 0.05,
            mask: None,
        }
    }

    #[test]
    fn disturbance_values() {
        assert_eq!(sinusoid().value(0.0), vec![-0.1; 6]);
        assert_eq!(DisturbanceSignal::Zero { dim: 3 }.value(12.3), vec![0.0; 3]);
        assert!((sinusoid().sup_norm() - 0.15).abs() < 1e-15);
        assert_eq!(
            DisturbanceSignal::Constant { value: vec![0.2; 4] }.sup_norm(),
            0.2
        );
        assert_eq!(DisturbanceSignal::Zero { dim: 2 }.sup_norm(), 0.0);
        let half = sinusoid().with_sup_norm(0.075);
        assert!((half.sup_norm() - 0.075).abs() < 1e-15);
    }

    #[test]
    fn disturbance_never_exceeds_sup() {
        let d = sinusoid();
        let sup = d.sup_norm();
        for k in 0..10_000 {
            let t = k as f64 * 0.00731;
            assert!(linalg::norm_inf(&d.value(t)) <= sup + 1e-15);
        }
    }

    #[test]
    fn mask_length_checked() {
        let d = DisturbanceSignal::Sinusoid {
            dim: 3,
            offset: 0.0,
            amplitude: 1.0,
            mask: Some(vec![1.0]),
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn transformed_matrix_examples() {
        let i2 = Matrix::identity(2);
        let case1 = transformed_abstraction_matrix(&Matrix::zeros(2, 2), &i2, &i2.scale(-1.0)).unwrap();
        assert_eq!(case1, i2.scale(-1.0));
        let case2 = transformed_abstraction_matrix(&i2, &i2, &i2.scale(-3.0)).unwrap();
        assert_eq!(case2, i2.scale(-2.0));
        let trivial = transformed_abstraction_matrix(&i2.scale(-1.0), &i2, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(trivial, i2.scale(-1.0));
        assert!(matches!(
            transformed_abstraction_matrix(&i2, &i2, &Matrix::zeros(2, 2)),
            Err(SystemsError::NotHurwitz { .. })
        ));
        assert!(matches!(
            transformed_abstraction_matrix(&i2, &i2, &Matrix::zeros(3, 2)),
            Err(SystemsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn hurwitz_non_normal() {
        // stable but with an indefinite symmetric part
        let m = Matrix::from_rows(&[[1.0, 1.0], [-50.0, -9.0]]).unwrap();
        assert!(check_hurwitz(&m).is_ok());
        let unstable = Matrix::from_rows(&[[0.1, 5.0], [0.0, -3.0]]).unwrap();
        assert!(check_hurwitz(&unstable).is_err());
        // marginal
        let rot = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]).unwrap();
        assert!(check_hurwitz(&rot).is_err());
    }
}
