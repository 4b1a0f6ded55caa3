//! Simulation functions, LMI verification, certificate synthesis and the
//! resulting error bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{self, LinalgError, Matrix};
use crate::polytope::CellKind;
use crate::relation::{JointMode, JointSystem};

/// Lower tolerance for `M̄ − C̄ᵀC̄ ⪰ 0`.
pub const OUTPUT_MARGIN_TOL: f64 = -1e-9;
/// Required strict margin for `M̄ − ĒᵀUĒ ≻ 0`.
pub const CELL_MARGIN_TOL: f64 = 1e-9;
/// Upper tolerance for the decay condition.
pub const DECAY_MARGIN_TOL: f64 = 1e-9;
/// Right-hand side `−εI` of the synthesis Lyapunov equation.
pub const LYAPUNOV_EPSILON: f64 = 1e-6;
/// Relative inflation applied after output scaling.
pub const SCALE_INFLATION: f64 = 1e-6;
/// Tolerance on `M̄ = J̄ᵀTJ̄`.
pub const FACTORIZATION_TOL: f64 = 1e-8;
/// Smallest `V` at which the derivative is evaluated.
pub const DERIVATIVE_GUARD: f64 = 1e-12;
/// Smallest value of the quadratic form treated as rounding noise.
pub const QUAD_FORM_FLOOR: f64 = -1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("quadratic form is negative ({0:e})")]
    NegativeQuadForm(f64),
    #[error("certificate synthesis failed: {0}")]
    SynthesisFailed(String),
    #[error("certificate for joint mode {mode} is infeasible")]
    InfeasibleCertificate { mode: usize },
    #[error("simulation function too small for a derivative ({0:e})")]
    DegenerateState(f64),
    #[error("invalid certificate parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, CertificateError>;

/// `M̄ = blockdiag(M, m_scalar)` plus S-procedure multipliers for one joint mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCertificate {
    pub m: Matrix,
    pub m_scalar: f64,
    pub u: Matrix,
    pub w: Matrix,
    pub kind: CellKind,
}

impl ModeCertificate {
    /// Quadratic-form matrix in the coordinates matching the cell kind:
    /// `M` over `ω` for conic cells, `M̄` over `ω̄` for affine cells.
    pub fn quad_matrix(&self) -> Matrix {
        match self.kind {
            CellKind::Conic => self.m.clone(),
            CellKind::Affine => self.m_bar(),
        }
    }

    pub fn m_bar(&self) -> Matrix {
        Matrix::block_diag(&[&self.m, &Matrix::from_diag(&[self.m_scalar])])
    }

    /// `ω = (x̃, x₂)` or `ω̄ = (x̃, x₂, 1)`.
    pub fn coords(&self, x_tilde: &[f64], x2: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(x_tilde.len() + x2.len() + 1);
        w.extend_from_slice(x_tilde);
        w.extend_from_slice(x2);
        if self.kind == CellKind::Affine {
            w.push(1.0);
        }
        w
    }

    /// `√m_scalar` for affine cells, zero for conic ones.
    pub fn sqrt_offset(&self) -> f64 {
        match self.kind {
            CellKind::Conic => 0.0,
            CellKind::Affine => self.m_scalar.max(0.0).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.m.is_square() {
            return Err(CertificateError::DimensionMismatch(format!(
                "M is {}x{}",
                self.m.rows(),
                self.m.cols()
            )));
        }
        if self.m.relative_asymmetry() > linalg::SYMMETRY_TOLERANCE {
            return Err(CertificateError::InvalidParameter("M is not symmetric".into()));
        }
        if self.kind == CellKind::Affine && !(self.m_scalar > 0.0) {
            return Err(CertificateError::InvalidParameter(format!(
                "m_scalar must be positive for affine cells, got {}",
                self.m_scalar
            )));
        }
        for (name, mat) in [("U", &self.u), ("W", &self.w)] {
            if !mat.is_square() || mat.relative_asymmetry() > linalg::SYMMETRY_TOLERANCE {
                return Err(CertificateError::InvalidParameter(format!(
                    "{name} must be square and symmetric"
                )));
            }
            if mat.as_slice().iter().any(|v| *v < 0.0) {
                return Err(CertificateError::InvalidParameter(format!(
                    "{name} must be entrywise non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Certificate for every joint mode with a common `κ` and `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub kappa: f64,
    pub lambda: f64,
    pub modes: Vec<ModeCertificate>,
}

impl Certificate {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(CertificateError::InvalidParameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(CertificateError::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        self.modes.iter().try_for_each(ModeCertificate::validate)
    }

    pub fn with_kappa(&self, kappa: f64) -> Self {
        Self {
            kappa,
            ..self.clone()
        }
    }
}

/// `(1/κ)√(ωᵀMω)` for whichever coordinate vector matches `quad`.
pub fn sim_fn_value(quad: &Matrix, kappa: f64, omega: &[f64]) -> Result<f64> {
    let q = quad
        .quad_form(omega)
        .map_err(|e| CertificateError::DimensionMismatch(e.to_string()))?;
    if q < QUAD_FORM_FLOOR * (1.0 + quad.max_abs() * linalg::dot(omega, omega)) {
        return Err(CertificateError::NegativeQuadForm(q));
    }
    Ok(q.max(0.0).sqrt() / kappa)
}

/// Eigenvalue margins of the three matrix inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmiReport {
    /// `λ_min(M̄ − C̄ᵀC̄)`.
    pub output_margin: f64,
    /// `λ_min(M̄ − ĒᵀUĒ)`.
    pub cell_margin: f64,
    /// `λ_max(ĀᵀM̄ + M̄Ā + ĒᵀWĒ + λ̄M̄)`.
    pub decay_margin: f64,
    pub feasible: bool,
}

/// Raw check on explicit matrices; `lambda_bar` is `λI` or `blockdiag(λI, 0)`.
pub fn verify_lmi_raw(
    m_bar: &Matrix,
    a_bar: &Matrix,
    c_bar: &Matrix,
    e_bar: &Matrix,
    u: &Matrix,
    w: &Matrix,
    lambda_bar: &Matrix,
) -> Result<LmiReport> {
    let d = m_bar.rows();
    let ok = m_bar.is_square()
        && a_bar.shape() == (d, d)
        && c_bar.cols() == d
        && e_bar.cols() == d
        && u.shape() == (e_bar.rows(), e_bar.rows())
        && w.shape() == (e_bar.rows(), e_bar.rows())
        && lambda_bar.shape() == (d, d);
    if !ok {
        return Err(CertificateError::DimensionMismatch(format!(
            "M̄ {}x{}, Ā {}x{}, C̄ {}x{}, Ē {}x{}, U {}x{}, W {}x{}",
            m_bar.rows(),
            m_bar.cols(),
            a_bar.rows(),
            a_bar.cols(),
            c_bar.rows(),
            c_bar.cols(),
            e_bar.rows(),
            e_bar.cols(),
            u.rows(),
            u.cols(),
            w.rows(),
            w.cols()
        )));
    }
    let ct_c = &c_bar.transpose() * c_bar;
    let output = linalg::sym_eigen(&(m_bar - &ct_c).symmetric_part()?)?.min();
    let et = e_bar.transpose();
    let cell = linalg::sym_eigen(&(m_bar - &(&(&et * u) * e_bar)).symmetric_part()?)?.min();
    let at_m = &a_bar.transpose() * m_bar;
    let decay_mat = (&(&(&at_m + &(m_bar * a_bar)) + &(&(&et * w) * e_bar)) + &(lambda_bar * m_bar))
        .symmetric_part()?;
    let decay = linalg::sym_eigen(&trim_zero_border(&decay_mat))?.max();
    Ok(LmiReport {
        output_margin: output,
        cell_margin: cell,
        decay_margin: decay,
        feasible: output >= OUTPUT_MARGIN_TOL && cell >= CELL_MARGIN_TOL && decay <= DECAY_MARGIN_TOL,
    })
}

/// Drops a trailing row and column that are identically zero (the
/// homogeneous coordinate), which would otherwise pin `λ_max` at zero.
fn trim_zero_border(s: &Matrix) -> Matrix {
    let d = s.rows();
    if d > 1 && (0..d).all(|k| s[(d - 1, k)] == 0.0 && s[(k, d - 1)] == 0.0) {
        s.block(0, 0, d - 1, d - 1)
    } else {
        s.clone()
    }
}

/// Matrices `(Ā, C̄, Ē, λ̄)` in the coordinates of the mode's cell kind.
fn lmi_operands(cert: &ModeCertificate, lambda: f64, joint: &JointMode) -> Result<(Matrix, Matrix, Matrix, Matrix)> {
    let d = joint.a_prime.rows();
    match cert.kind {
        CellKind::Conic => Ok((
            joint.a_prime.clone(),
            joint.c_prime.clone(),
            joint.cell.e().clone(),
            Matrix::identity(d).scale(lambda),
        )),
        CellKind::Affine => {
            let f = Matrix::column(joint.cell.f()).scale(-1.0);
            let e_bar = Matrix::hstack(&[joint.cell.e(), &f])?;
            let mut lam = Matrix::zeros(d + 1, d + 1);
            lam.set_block(0, 0, &Matrix::identity(d).scale(lambda));
            Ok((joint.a_bar.clone(), joint.c_bar.clone(), e_bar, lam))
        }
    }
}

pub fn verify_lmi(cert: &ModeCertificate, lambda: f64, joint: &JointMode) -> Result<LmiReport> {
    if cert.m.rows() != joint.a_prime.rows() {
        return Err(CertificateError::DimensionMismatch(format!(
            "M is {}x{} but the joint state has dimension {}",
            cert.m.rows(),
            cert.m.cols(),
            joint.a_prime.rows()
        )));
    }
    let (a, c, e, lam) = lmi_operands(cert, lambda, joint)?;
    verify_lmi_raw(&cert.quad_matrix(), &a, &c, &e, &cert.u, &cert.w, &lam)
}

/// Verifies every mode of a certificate against a joint system.
pub fn verify_certificate(cert: &Certificate, joint: &JointSystem, exec: Execution) -> Result<Vec<LmiReport>> {
    if cert.modes.len() != joint.modes().len() {
        return Err(CertificateError::DimensionMismatch(format!(
            "{} certificate modes for {} joint modes",
            cert.modes.len(),
            joint.modes().len()
        )));
    }
    exec.map_range(cert.modes.len(), |k| verify_lmi(&cert.modes[k], cert.lambda, &joint.modes()[k]))
        .into_iter()
        .collect()
}

/// Checks `M̄ = J̄ᵀTJ̄` entrywise within [`FACTORIZATION_TOL`].
pub fn check_factorization(m_bar: &Matrix, jbar: &Matrix, t: &Matrix) -> Result<bool> {
    let prod = jbar
        .transpose()
        .matmul(t)
        .and_then(|jt| jt.matmul(jbar))?;
    if prod.shape() != m_bar.shape() {
        return Err(CertificateError::DimensionMismatch(format!(
            "J̄ᵀTJ̄ is {}x{}, M̄ is {}x{}",
            prod.rows(),
            prod.cols(),
            m_bar.rows(),
            m_bar.cols()
        )));
    }
    Ok((&prod - m_bar).max_abs() <= FACTORIZATION_TOL)
}

/// Tunables of [`synthesize_certificate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOptions {
    /// Explicit λ values (tried in the given order); overrides the log grid.
    pub lambda_grid: Option<Vec<f64>>,
    pub grid_points: usize,
    pub lambda_floor: f64,
    pub epsilon: f64,
    pub m_scalar: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            lambda_grid: None,
            grid_points: 16,
            lambda_floor: 1e-3,
            epsilon: LYAPUNOV_EPSILON,
            m_scalar: 1.0,
        }
    }
}

/// Descending log-spaced grid on `[floor, ceiling]`.
pub fn log_grid(floor: f64, ceiling: f64, points: usize) -> Vec<f64> {
    if points <= 1 || ceiling <= floor {
        return vec![ceiling.max(floor)];
    }
    let (lo, hi) = (floor.ln(), ceiling.ln());
    (0..points)
        .map(|k| (hi - (hi - lo) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

/// Solves `ÂᵀM + MÂ = −εI` for symmetric `M`.
pub fn solve_lyapunov(a_hat: &Matrix, epsilon: f64) -> Result<Matrix> {
    let d = a_hat.rows();
    let at = a_hat.transpose();
    let id = Matrix::identity(d);
    let coeff = &id.kron(&at) + &at.kron(&id);
    let rhs = Matrix::identity(d).scale(-epsilon).vec();
    let (x, _) = linalg::kron_solve_least_squares(&coeff, &rhs)?;
    Ok(Matrix::from_col_major(d, d, &x)?.symmetric_part()?)
}

/// One mode at a fixed λ: Lyapunov solve, output scaling, verification.
fn synthesize_mode(
    joint: &JointMode,
    lambda: f64,
    opts: &SynthesisOptions,
) -> Result<(ModeCertificate, LmiReport)> {
    let d = joint.a_prime.rows();
    let a_hat = &joint.a_prime + &Matrix::identity(d).scale(lambda / 2.0);
    let m0 = solve_lyapunov(&a_hat, opts.epsilon)?;
    let eig = linalg::sym_eigen(&m0)?;
    if eig.min() <= 0.0 {
        return Err(CertificateError::SynthesisFailed(format!(
            "Lyapunov solution not positive definite at λ = {lambda:e}"
        )));
    }
    let inv_sqrt = eig.recompose_with(|v| 1.0 / v.sqrt());
    let ctc = &joint.c_prime.transpose() * &joint.c_prime;
    let metric = (&(&inv_sqrt * &ctc) * &inv_sqrt).symmetric_part()?;
    let mut scale = linalg::sym_eigen(&metric)?.max().max(1.0) * (1.0 + SCALE_INFLATION);
    let floor = 2.0 * CELL_MARGIN_TOL / eig.min();
    scale = scale.max(floor);
    let rows = joint.cell.e().rows();
    let cert = ModeCertificate {
        m: m0.scale(scale),
        m_scalar: opts.m_scalar,
        u: Matrix::zeros(rows, rows),
        w: Matrix::zeros(rows, rows),
        kind: joint.kind,
    };
    let report = verify_lmi(&cert, lambda, joint)?;
    Ok((cert, report))
}

/// Upper end of the default λ grid: twice the slowest decay rate over all
/// joint closed loops.
pub fn lambda_ceiling(joint: &JointSystem) -> Result<f64> {
    let mut alpha = f64::INFINITY;
    for md in joint.modes() {
        let re = linalg::max_real_part_estimate(&md.a_prime, crate::systems::HURWITZ_PROBE_STEP)?;
        alpha = alpha.min(-re);
    }
    if !(alpha > 0.0) {
        return Err(CertificateError::SynthesisFailed(format!(
            "joint closed loop is not Hurwitz (largest real part {:e})",
            -alpha
        )));
    }
    Ok(2.0 * alpha)
}

/// Heuristic synthesis: the first λ of a descending grid at which every
/// joint mode admits a verified certificate.
pub fn synthesize_certificate(
    joint: &JointSystem,
    kappa: f64,
    opts: &SynthesisOptions,
    exec: Execution,
) -> Result<(Certificate, Vec<LmiReport>)> {
    if !(kappa > 0.0) {
        return Err(CertificateError::InvalidParameter(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let grid = match &opts.lambda_grid {
        Some(g) => g.clone(),
        None => {
            let ceiling = lambda_ceiling(joint)?;
            log_grid(opts.lambda_floor.min(ceiling), ceiling, opts.grid_points)
        }
    };
    for &lambda in &grid {
        let results = exec.map_range(joint.modes().len(), |k| synthesize_mode(&joint.modes()[k], lambda, opts));
        let mut modes = Vec::with_capacity(results.len());
        let mut reports = Vec::with_capacity(results.len());
        let mut all_ok = true;
        for r in results {
            match r {
                Ok((c, rep)) if rep.feasible => {
                    modes.push(c);
                    reports.push(rep);
                }
                Ok(_) | Err(CertificateError::SynthesisFailed(_)) => {
                    all_ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if all_ok {
            log::debug!("certificate synthesized at λ = {lambda:e}");
            return Ok((
                Certificate {
                    kappa,
                    lambda,
                    modes,
                },
                reports,
            ));
        }
        log::debug!("no certificate at λ = {lambda:e}");
    }
    Err(CertificateError::SynthesisFailed(format!(
        "no λ among {} grid points gives a feasible certificate for all modes",
        grid.len()
    )))
}

/// Linear class-K slopes and the ultimate bounds they induce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub sqrt_m: f64,
    pub b0: f64,
    pub b1: f64,
}

impl Gains {
    /// Recomputes `b₀, b₁` for new sup-norms of `ū₂`, `c` and `x₂`.
    pub fn with_sups(&self, u2bar_sup: f64, c_sup: f64, x2_sup: f64) -> Self {
        let b0 = self.gamma1 * u2bar_sup + self.gamma2 * c_sup + self.gamma3 * x2_sup;
        Self {
            b0,
            b1: b0 + self.sqrt_m,
            ..*self
        }
    }

    /// `b₀` for conic cells, `b₁` for affine ones.
    pub fn bound(&self, kind: CellKind) -> f64 {
        match kind {
            CellKind::Conic => self.b0,
            CellKind::Affine => self.b1,
        }
    }
}

/// Slopes `γ₁ = 2‖√M̄B̄₂‖/λ`, `γ₂ = 2‖√M̄‖/λ`, `γ₃ = 2‖√M̄B̄₁‖/λ`.
pub fn compute_gains(
    cert: &ModeCertificate,
    lambda: f64,
    joint: &JointMode,
    u2bar_sup: f64,
    c_sup: f64,
    x2_sup: f64,
) -> Result<Gains> {
    let report = verify_lmi(cert, lambda, joint)?;
    if !report.feasible {
        return Err(CertificateError::InfeasibleCertificate { mode: joint.i + 1 });
    }
    let (b1, b2) = match cert.kind {
        CellKind::Conic => (&joint.b1_prime, &joint.b2_prime),
        CellKind::Affine => (&joint.b1_bar, &joint.b2_bar),
    };
    let root = linalg::matrix_sqrt_psd(&cert.quad_matrix())?;
    let g = Gains {
        gamma1: 2.0 * linalg::spectral_norm(&(&root * b2))? / lambda,
        gamma2: 2.0 * linalg::spectral_norm(&root)? / lambda,
        gamma3: 2.0 * linalg::spectral_norm(&(&root * b1))? / lambda,
        sqrt_m: cert.sqrt_offset(),
        b0: 0.0,
        b1: 0.0,
    };
    Ok(g.with_sups(u2bar_sup, c_sup, x2_sup))
}

/// `δ = κ·max(V, b)` with `b = b₀` (conic) or `b₁` (affine).
pub fn error_bound(kappa: f64, gains: &Gains, v: f64, kind: CellKind) -> f64 {
    kappa * v.max(gains.bound(kind))
}

/// Directional derivative `ω̄ᵀM̄(Āω̄ + B̄₁x₂ + B̄₂ū₂ + c̄) / (κ√(ω̄ᵀM̄ω̄))`.
///
/// `c` is the concrete disturbance; it is padded with zeros to the joint
/// dimension.
pub fn sim_fn_derivative(
    cert: &ModeCertificate,
    kappa: f64,
    joint: &JointMode,
    omega: &[f64],
    x2: &[f64],
    u2bar: &[f64],
    c: &[f64],
) -> Result<f64> {
    let quad = cert.quad_matrix();
    let v = sim_fn_value(&quad, kappa, omega)?;
    if v <= DERIVATIVE_GUARD {
        return Err(CertificateError::DegenerateState(v));
    }
    let drift = joint_drift(cert.kind, joint, omega, x2, u2bar, c)?;
    let mw = quad.mul_vec(omega)?;
    Ok(linalg::dot(&mw, &drift) / (kappa * kappa * v))
}

/// Joint vector field in the coordinates of `kind`.
pub fn joint_drift(
    kind: CellKind,
    joint: &JointMode,
    omega: &[f64],
    x2: &[f64],
    u2bar: &[f64],
    c: &[f64],
) -> Result<Vec<f64>> {
    let (a, b1, b2) = match kind {
        CellKind::Conic => (&joint.a_prime, &joint.b1_prime, &joint.b2_prime),
        CellKind::Affine => (&joint.a_bar, &joint.b1_bar, &joint.b2_bar),
    };
    if omega.len() != a.rows() || c.len() > a.rows() {
        return Err(CertificateError::DimensionMismatch(format!(
            "state of length {} for joint dimension {}",
            omega.len(),
            a.rows()
        )));
    }
    let mut d = a.mul_vec(omega)?;
    let t1 = b1.mul_vec(x2)?;
    let t2 = b2.mul_vec(u2bar)?;
    for k in 0..d.len() {
        d[k] += t1[k] + t2[k];
    }
    for (dk, ck) in d.iter_mut().zip(c) {
        *dk += ck;
    }
    Ok(d)
}
