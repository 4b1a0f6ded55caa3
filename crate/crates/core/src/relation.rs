//! Relation maps `P, Q`, interfaces, and the closed-loop joint system.

use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::{self, LinalgError, Matrix};
use crate::polytope::{self, CellKind, Partition, Polyhedron, PolytopeError};
use crate::systems::{self, Abstraction, LinearAbstraction, PwaMode, PwaSystem, SystemsError};

/// Relative factor of the certification tolerance `1e-8·(1 + ‖H‖ + ‖A‖)`.
pub const RELATION_TOLERANCE: f64 = 1e-8;
/// Smallest admissible singular value of `P`.
pub const INJECTIVITY_TOLERANCE: f64 = 1e-8;
/// Smallest admissible eigenvalue of `BᵀB` in [`default_r`].
pub const GRAM_TOLERANCE: f64 = 1e-10;
/// Relative gap under which two candidate solution norms count as equal.
pub const NORM_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelationError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("no abstraction mode admits a certified relation for concrete mode {0}")]
    NoFeasiblePairing(usize),
    #[error("BᵀB is singular (smallest eigenvalue {0:e})")]
    SingularBBt(f64),
    #[error("relation for mode {mode} is not certified (residual {residual:e} > {tolerance:e})")]
    UncertifiedRelation {
        mode: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("relation map P for mode {mode} is not injective (σ_min = {sigma_min:e})")]
    NotInjective { mode: usize, sigma_min: f64 },
    #[error("closed loop A + BK of mode {mode} is not Hurwitz: {source}")]
    ClosedLoopNotHurwitz { mode: usize, source: SystemsError },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Systems(#[from] SystemsError),
}

pub type Result<T> = std::result::Result<T, RelationError>;

/// Solution `(P, Q)` of `H = C P`, `P F = A P + B Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMap {
    pub p: Matrix,
    pub q: Matrix,
    pub residual: f64,
    pub tolerance: f64,
}

impl RelationMap {
    pub fn is_certified(&self) -> bool {
        self.residual <= self.tolerance
    }

    /// Smallest singular value of `P`.
    pub fn sigma_min(&self) -> Result<f64> {
        let gram = (&self.p.transpose() * &self.p).symmetric_part()?;
        Ok(linalg::sym_eigen(&gram)?.min().max(0.0).sqrt())
    }

    pub fn is_injective(&self) -> Result<bool> {
        Ok(self.sigma_min()? >= INJECTIVITY_TOLERANCE)
    }

    /// `‖P‖²_F + ‖Q‖²_F`.
    pub fn squared_norm(&self) -> f64 {
        self.p.frobenius_norm().powi(2) + self.q.frobenius_norm().powi(2)
    }

    /// `(‖H − C P‖_F, ‖P F − A P − B Q‖_F)`.
    pub fn equation_errors(&self, mode: &PwaMode, abs: &LinearAbstraction) -> (f64, f64) {
        let out = (&abs.h - &(&mode.c * &self.p)).frobenius_norm();
        let lhs = &self.p * &abs.f;
        let rhs = &(&mode.a * &self.p) + &(&mode.b * &self.q);
        (out, (&lhs - &rhs).frobenius_norm())
    }
}

pub fn relation_tolerance(a: &Matrix, h: &Matrix) -> f64 {
    RELATION_TOLERANCE * (1.0 + h.frobenius_norm() + a.frobenius_norm())
}

/// Minimum-norm least-squares solution of the stacked system
/// `(I⊗C) vec P = vec H`, `(Fᵀ⊗I − I⊗A) vec P − (I⊗B) vec Q = 0`.
pub fn solve_relation(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    f: &Matrix,
    h: &Matrix,
) -> Result<RelationMap> {
    let n = a.rows();
    let m = f.rows();
    let p = b.cols();
    let k = c.rows();
    if !a.is_square() || !f.is_square() {
        return Err(RelationError::DimensionMismatch(
            "A and F must be square".into(),
        ));
    }
    if b.rows() != n || c.cols() != n || h.rows() != k || h.cols() != m {
        return Err(RelationError::DimensionMismatch(format!(
            "A {n}x{n}, B {}x{}, C {}x{}, F {m}x{m}, H {}x{}",
            b.rows(),
            b.cols(),
            c.rows(),
            c.cols(),
            h.rows(),
            h.cols()
        )));
    }
    let im = Matrix::identity(m);
    let out_rows = im.kron(c);
    let syl = &f.transpose().kron(&Matrix::identity(n)) - &im.kron(a);
    let inp = im.kron(b).scale(-1.0);

    let mut coeff = Matrix::zeros(k * m + n * m, n * m + p * m);
    coeff.set_block(0, 0, &out_rows);
    coeff.set_block(k * m, 0, &syl);
    coeff.set_block(k * m, n * m, &inp);
    let mut rhs = h.vec();
    rhs.resize(k * m + n * m, 0.0);

    let (z, residual) = linalg::kron_solve_least_squares(&coeff, &rhs)?;
    let pm = Matrix::from_col_major(n, m, &z[..n * m])?;
    let qm = Matrix::from_col_major(p, m, &z[n * m..])?;
    Ok(RelationMap {
        p: pm,
        q: qm,
        residual,
        tolerance: relation_tolerance(a, h),
    })
}

/// A concrete mode's relation together with the abstraction mode it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedRelation {
    pub j: usize,
    pub map: RelationMap,
}

/// For each concrete mode, the abstraction mode whose relation is certified,
/// has injective `P`, and the smallest `‖P‖²_F + ‖Q‖²_F`; ties go to the
/// smallest `j`.
pub fn solve_relation_pairing(
    modes: &[PwaMode],
    abstraction: &[LinearAbstraction],
    exec: Execution,
) -> Result<Vec<PairedRelation>> {
    if abstraction.is_empty() {
        return Err(RelationError::DimensionMismatch(
            "at least one abstraction mode is required".into(),
        ));
    }
    exec.map_range(modes.len(), |i| {
        let mode = &modes[i];
        let mut best: Option<PairedRelation> = None;
        for (j, abs) in abstraction.iter().enumerate() {
            let map = solve_relation(&mode.a, &mode.b, &mode.c, &abs.f, &abs.h)?;
            if !map.is_certified() || !map.is_injective()? {
                log::debug!(
                    "pair ({}, {}) rejected: residual {:e}",
                    i + 1,
                    j + 1,
                    map.residual
                );
                continue;
            }
            let better = match &best {
                None => true,
                Some(cur) => {
                    let (a, b) = (map.squared_norm(), cur.map.squared_norm());
                    a < b - NORM_TIE_TOLERANCE * (1.0 + b)
                }
            };
            if better {
                best = Some(PairedRelation { j, map });
            }
        }
        best.ok_or(RelationError::NoFeasiblePairing(i + 1))
    })
    .into_iter()
    .collect()
}

/// Pseudo-inverse feedthrough `R = B⁺ P G` with `B⁺ = (BᵀB)⁻¹Bᵀ`.
pub fn default_r(b: &Matrix, p: &Matrix, g: &Matrix) -> Result<Matrix> {
    if p.rows() != b.rows() || g.rows() != p.cols() {
        return Err(RelationError::DimensionMismatch(format!(
            "B {}x{}, P {}x{}, G {}x{}",
            b.rows(),
            b.cols(),
            p.rows(),
            p.cols(),
            g.rows(),
            g.cols()
        )));
    }
    let bt = b.transpose();
    let gram = (&bt * b).symmetric_part()?;
    let eig = linalg::sym_eigen(&gram)?;
    if eig.min() < GRAM_TOLERANCE {
        return Err(RelationError::SingularBBt(eig.min()));
    }
    let inv = eig.recompose_with(|v| 1.0 / v);
    Ok(&(&(&inv * &bt) * p) * g)
}

/// Interface parameters of one mode or pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub r: Matrix,
    pub q: Matrix,
    pub l: Matrix,
    pub k: Matrix,
}

impl Interface {
    pub fn new(r: Matrix, q: Matrix, l: Matrix, k: Matrix) -> Result<Self> {
        let p = k.rows();
        let n = k.cols();
        let mdim = q.cols();
        let qdim = r.cols();
        if r.rows() != p || q.rows() != p || l.rows() != qdim || l.cols() != mdim {
            return Err(RelationError::DimensionMismatch(format!(
                "interface blocks R {}x{}, Q {}x{}, L {}x{}, K {p}x{n}",
                r.rows(),
                r.cols(),
                q.rows(),
                q.cols(),
                l.rows(),
                l.cols()
            )));
        }
        Ok(Self { r, q, l, k })
    }

    /// `u₁ = R ū₂ + (Q + R L) x₂ + K x̃`.
    pub fn apply(&self, x_tilde: &[f64], x2: &[f64], u2bar: &[f64]) -> Result<Vec<f64>> {
        interface_linear(x_tilde, x2, u2bar, &self.r, &self.q, &self.l, &self.k)
    }
}

pub fn interface_linear(
    x_tilde: &[f64],
    x2: &[f64],
    u2bar: &[f64],
    r: &Matrix,
    q: &Matrix,
    l: &Matrix,
    k: &Matrix,
) -> Result<Vec<f64>> {
    let ru = r.mul_vec(u2bar)?;
    let lx = l.mul_vec(x2)?;
    let qx = q.mul_vec(x2)?;
    let rlx = r.mul_vec(&lx)?;
    let kx = k.mul_vec(x_tilde)?;
    if ru.len() != qx.len() || ru.len() != kx.len() {
        return Err(RelationError::DimensionMismatch(
            "interface terms have different lengths".into(),
        ));
    }
    Ok((0..ru.len())
        .map(|i| ru[i] + qx[i] + rlx[i] + kx[i])
        .collect())
}

/// Pair-indexed interface `u₁ = R_ij ū₂ + (Q_i + R_ij L_j) x₂ + K_i x̃`.
pub fn interface_pwa(
    x_tilde: &[f64],
    x2: &[f64],
    u2bar: &[f64],
    r_ij: &Matrix,
    q_i: &Matrix,
    l_j: &Matrix,
    k_i: &Matrix,
) -> Result<Vec<f64>> {
    interface_linear(x_tilde, x2, u2bar, r_ij, q_i, l_j, k_i)
}

/// Rejects gains whose closed loop `A + B K` is not Hurwitz.
pub fn check_closed_loop(mode: usize, a: &Matrix, b: &Matrix, k: &Matrix) -> Result<Matrix> {
    if k.rows() != b.cols() || k.cols() != a.rows() {
        return Err(RelationError::DimensionMismatch(format!(
            "K of mode {mode} is {}x{}, expected {}x{}",
            k.rows(),
            k.cols(),
            b.cols(),
            a.rows()
        )));
    }
    let cl = a + &(b * k);
    systems::check_hurwitz(&cl)
        .map_err(|source| RelationError::ClosedLoopNotHurwitz { mode, source })?;
    Ok(cl)
}

/// Closed loop of one concrete mode `i` paired with abstraction mode `j`.
///
/// Reduced coordinates are `ω = (x̃, x₂)`, homogeneous ones `ω̄ = (x̃, x₂, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMode {
    pub i: usize,
    pub j: usize,
    pub p: Matrix,
    pub interface: Interface,
    pub a_prime: Matrix,
    pub b1_prime: Matrix,
    pub b2_prime: Matrix,
    pub c_prime: Matrix,
    pub a_bar: Matrix,
    pub b1_bar: Matrix,
    pub b2_bar: Matrix,
    pub c_bar: Matrix,
    /// Joint cell over `ω`.
    pub cell: Polyhedron,
    pub kind: CellKind,
}

impl JointMode {
    pub fn n(&self) -> usize {
        self.p.rows()
    }

    pub fn m(&self) -> usize {
        self.p.cols()
    }

    /// Drift in `ω̄` coordinates, `Āω̄ + B̄₁x₂ + B̄₂ū₂ + c̄`.
    pub fn drift_bar(&self, omega_bar: &[f64], x2: &[f64], u2bar: &[f64], c: &[f64]) -> Result<Vec<f64>> {
        let mut d = self.a_bar.mul_vec(omega_bar)?;
        let b1 = self.b1_bar.mul_vec(x2)?;
        let b2 = self.b2_bar.mul_vec(u2bar)?;
        for (k, v) in d.iter_mut().enumerate() {
            *v += b1[k] + b2[k];
        }
        for (v, ck) in d.iter_mut().zip(c) {
            *v += ck;
        }
        Ok(d)
    }
}

/// Joint system over all certified modes or pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSystem {
    modes: Vec<JointMode>,
    partition: Partition,
    pwa: bool,
}

impl JointSystem {
    pub fn modes(&self) -> &[JointMode] {
        &self.modes
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn is_pwa(&self) -> bool {
        self.pwa
    }

    /// Index of the joint mode for concrete mode `i` and abstraction mode `j`.
    pub fn index_of(&self, i: usize, j: usize) -> Option<usize> {
        self.modes.iter().position(|md| md.i == i && md.j == j)
    }

    pub fn n(&self) -> usize {
        self.modes[0].n()
    }

    pub fn m(&self) -> usize {
        self.modes[0].m()
    }
}

/// Per-mode gain inputs: `K` always, `R` optionally overriding [`default_r`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainSpec {
    pub k: Matrix,
    pub r: Option<Matrix>,
}

fn assemble_mode(
    i: usize,
    j: usize,
    mode: &PwaMode,
    abs: &LinearAbstraction,
    rel: &RelationMap,
    gains: &GainSpec,
    cell: Polyhedron,
) -> Result<JointMode> {
    if !rel.is_certified() {
        return Err(RelationError::UncertifiedRelation {
            mode: i + 1,
            residual: rel.residual,
            tolerance: rel.tolerance,
        });
    }
    let n = mode.n();
    let m = abs.m();
    let k_out = mode.k();
    let cl = check_closed_loop(i + 1, &mode.a, &mode.b, &gains.k)?;
    let fgl = systems::transformed_abstraction_matrix(&abs.f, &abs.g, &abs.l)?;
    let r = match &gains.r {
        Some(r) => r.clone(),
        None => default_r(&mode.b, &rel.p, &abs.g)?,
    };
    let interface = Interface::new(r, rel.q.clone(), abs.l.clone(), gains.k.clone())?;

    // BR − PG
    let brpg = &(&mode.b * &interface.r) - &(&rel.p * &abs.g);
    let a_prime = Matrix::block_diag(&[&cl, &fgl]);
    let b1_prime = Matrix::vstack(&[&(&brpg * &abs.l), &Matrix::zeros(m, m)])?;
    let b2_prime = Matrix::vstack(&[&brpg, &abs.g])?;
    let c_prime = Matrix::hstack(&[&mode.c, &Matrix::zeros(k_out, m)])?;

    let a_bar = Matrix::block_diag(&[&a_prime, &Matrix::zeros(1, 1)]);
    let b1_bar = Matrix::vstack(&[&b1_prime, &Matrix::zeros(1, m)])?;
    let b2_bar = Matrix::vstack(&[&b2_prime, &Matrix::zeros(1, abs.q())])?;
    let c_bar = Matrix::hstack(&[&c_prime, &Matrix::zeros(k_out, 1)])?;
    debug_assert_eq!(a_bar.rows(), n + m + 1);

    let kind = cell.kind();
    Ok(JointMode {
        i,
        j,
        p: rel.p.clone(),
        interface,
        a_prime,
        b1_prime,
        b2_prime,
        c_prime,
        a_bar,
        b1_bar,
        b2_bar,
        c_bar,
        cell,
        kind,
    })
}

/// Joint system for a single linear abstraction.
pub fn assemble_joint_linear(
    system: &PwaSystem,
    abstraction: &LinearAbstraction,
    relations: &[RelationMap],
    gains: &[GainSpec],
) -> Result<JointSystem> {
    let s = system.s();
    if relations.len() != s || gains.len() != s {
        return Err(RelationError::DimensionMismatch(format!(
            "{s} modes, {} relations, {} gain sets",
            relations.len(),
            gains.len()
        )));
    }
    let ps: Vec<Matrix> = relations.iter().map(|r| r.p.clone()).collect();
    let partition = polytope::joint_partition_linear(system.partition(), &ps)?;
    let modes = (0..s)
        .map(|i| {
            assemble_mode(
                i,
                0,
                &system.modes()[i],
                abstraction,
                &relations[i],
                &gains[i],
                partition.cells()[i].clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointSystem {
        modes,
        partition,
        pwa: false,
    })
}

/// Joint system for a PWA abstraction, one joint mode per pair `(i, j(i))`.
pub fn assemble_joint_pwa(
    system: &PwaSystem,
    abstraction: &systems::PwaAbstraction,
    pairing: &[PairedRelation],
    gains: &[GainSpec],
) -> Result<JointSystem> {
    let s = system.s();
    if pairing.len() != s || gains.len() != s {
        return Err(RelationError::DimensionMismatch(format!(
            "{s} modes, {} paired relations, {} gain sets",
            pairing.len(),
            gains.len()
        )));
    }
    if let Some(bad) = pairing.iter().find(|pr| pr.j >= abstraction.r()) {
        return Err(RelationError::DimensionMismatch(format!(
            "pairing refers to abstraction mode {} of {}",
            bad.j + 1,
            abstraction.r()
        )));
    }
    let ps: Vec<Matrix> = pairing.iter().map(|pr| pr.map.p.clone()).collect();
    let pairs: Vec<(usize, usize)> = pairing.iter().enumerate().map(|(i, pr)| (i, pr.j)).collect();
    let partition = polytope::joint_partition_pwa(
        system.partition(),
        abstraction.concrete_space_cells(),
        &ps,
        &pairs,
    )?;
    let modes = pairs
        .iter()
        .enumerate()
        .map(|(idx, &(i, j))| {
            assemble_mode(
                i,
                j,
                &system.modes()[i],
                &abstraction.modes()[j],
                &pairing[i].map,
                &gains[i],
                partition.cells()[idx].clone(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JointSystem {
        modes,
        partition,
        pwa: true,
    })
}

/// Solves the relations and assembles the joint system for either kind of
/// abstraction.
pub fn build_joint(
    system: &PwaSystem,
    abstraction: &Abstraction,
    gains: &[GainSpec],
    exec: Execution,
) -> Result<(Vec<PairedRelation>, JointSystem)> {
    let pairing = solve_relation_pairing(system.modes(), abstraction.modes(), exec)?;
    let joint = match abstraction {
        Abstraction::Linear(lin) => {
            let rels: Vec<RelationMap> = pairing.iter().map(|p| p.map.clone()).collect();
            assemble_joint_linear(system, lin, &rels, gains)?
        }
        Abstraction::Pwa(pwa) => assemble_joint_pwa(system, pwa, &pairing, gains)?,
    };
    Ok((pairing, joint))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple_integrator() -> (Matrix, Matrix, Matrix) {
        let mut a = Matrix::zeros(6, 6);
        a.set_block(0, 2, &Matrix::identity(2));
        a.set_block(2, 4, &Matrix::identity(2));
        let mut b = Matrix::zeros(6, 2);
        b.set_block(4, 0, &Matrix::identity(2));
        let mut c = Matrix::zeros(2, 6);
        c.set_block(0, 0, &Matrix::identity(2));
        (a, b, c)
    }

    #[test]
    fn case1_relation() {
        let (a, b, c) = triple_integrator();
        let rel = solve_relation(&a, &b, &c, &Matrix::zeros(2, 2), &Matrix::identity(2)).unwrap();
        assert!(rel.residual <= 1e-10);
        let mut expected = Matrix::zeros(6, 2);
        expected.set_block(0, 0, &Matrix::identity(2));
        assert!((&rel.p - &expected).max_abs() < 1e-10);
        assert!(rel.q.max_abs() < 1e-10);
        let r = default_r(&b, &rel.p, &Matrix::identity(2)).unwrap();
        assert!(r.max_abs() < 1e-12);
    }

    #[test]
    fn identity_relation() {
        let a = Matrix::from_rows(&[[-1.0, 2.0], [0.0, -3.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let i = Matrix::identity(2);
        let rel = solve_relation(&a, &b, &i, &a, &i).unwrap();
        assert!(rel.residual < 1e-12);
        assert!((&rel.p - &i).max_abs() < 1e-10);
    }

    #[test]
    fn default_r_examples() {
        let i = Matrix::identity(2);
        assert!((&default_r(&i, &i, &i).unwrap() - &i).max_abs() < 1e-14);
        let b = Matrix::vstack(&[&Matrix::zeros(2, 2), &i]).unwrap();
        let p = Matrix::vstack(&[&i, &Matrix::zeros(2, 2)]).unwrap();
        assert!(default_r(&b, &p, &i).unwrap().max_abs() < 1e-14);
        assert!(matches!(
            default_r(&Matrix::zeros(4, 2), &p, &i),
            Err(RelationError::SingularBBt(_))
        ));
    }

    #[test]
    fn interface_examples() {
        let (_, _, _) = triple_integrator();
        let k = Matrix::hstack(&[
            &Matrix::identity(2).scale(-52.0),
            &Matrix::identity(2).scale(-52.3),
            &Matrix::identity(2).scale(-13.0),
        ])
        .unwrap();
        let z2 = Matrix::zeros(2, 2);
        let mut e1 = vec![0.0; 6];
        e1[0] = 1.0;
        let u = interface_linear(&e1, &[0.0; 2], &[0.0; 2], &z2, &z2, &z2.scale(-1.0), &k).unwrap();
        assert_eq!(u, vec![-52.0, 0.0]);
        let r = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let u = interface_linear(&[0.0; 6], &[0.0; 2], &[1.0, 1.0], &r, &z2, &z2, &k).unwrap();
        assert_eq!(u, vec![3.0, 7.0]);
        let l = Matrix::from_rows(&[[5.0, 1.0], [2.0, 9.0]]).unwrap();
        let u = interface_pwa(&[0.0; 6], &[3.0, -1.0], &[0.0; 2], &z2, &z2, &l, &k).unwrap();
        assert_eq!(u, vec![0.0, 0.0]);
    }
}
