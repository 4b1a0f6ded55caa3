mod common;

use common::{random_matrix, random_vec};
use proptest::prelude::*;
use pwa_hier_core::linalg::{self, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let a = random_matrix(rng, n, n);
    a.try_add(&a.transpose()).unwrap().scale(0.5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eigen_decomposition_reconstructs(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_symmetric(&mut rng, n);
        let eig = linalg::sym_eigen(&s).unwrap();
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        let back = eig.recompose_with(|v| v);
        prop_assert!(back.try_sub(&s).unwrap().max_abs() < 1e-12);
        let qtq = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
        prop_assert!(qtq.try_sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn psd_square_root_squares_back(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, n);
        let s = a.transpose().matmul(&a).unwrap();
        let r = linalg::matrix_sqrt_psd(&s).unwrap();
        prop_assert!(r.matmul(&r).unwrap().try_sub(&s).unwrap().max_abs() < 1e-10);
        prop_assert!(r.relative_asymmetry() < 1e-12);
    }

    #[test]
    fn spectral_norm_bounds_every_direction(seed in any::<u64>(), r in 1usize..6, c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, r, c);
        let nrm = linalg::spectral_norm(&a).unwrap();
        prop_assert!(nrm <= a.frobenius_norm() + 1e-12);
        prop_assert!(nrm >= a.frobenius_norm() / (r.min(c) as f64).sqrt() - 1e-12);
        for _ in 0..10 {
            let x = random_vec(&mut rng, c, 1.0);
            let ax = a.mul_vec(&x).unwrap();
            prop_assert!(linalg::norm2(&ax) <= nrm * linalg::norm2(&x) + 1e-12);
        }
    }

    /// `(A ⊗ B) vec X = vec(B X Aᵀ)` with column-major `vec`.
    #[test]
    fn kron_vec_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, 3, 2);
        let b = random_matrix(&mut rng, 2, 4);
        let x = random_matrix(&mut rng, 4, 2);
        let lhs = a.kron(&b).mul_vec(&x.vec()).unwrap();
        let rhs = b.matmul(&x).unwrap().matmul(&a.transpose()).unwrap().vec();
        prop_assert!(lhs.iter().zip(&rhs).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    /// Least squares: the residual is orthogonal to the range, and the
    /// solution lies in the row space (minimum norm).
    #[test]
    fn least_squares_is_minimum_norm(seed in any::<u64>(), r in 1usize..8, c in 1usize..8, rank in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rank = rank.min(r).min(c);
        let a = random_matrix(&mut rng, r, rank).matmul(&random_matrix(&mut rng, rank, c)).unwrap();
        let b = random_vec(&mut rng, r, 1.0);
        let (x, res) = linalg::kron_solve_least_squares(&a, &b).unwrap();
        let ax = a.mul_vec(&x).unwrap();
        let resid: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        prop_assert!((linalg::norm2(&resid) - res).abs() < 1e-12);
        let at_r = a.transpose().mul_vec(&resid).unwrap();
        prop_assert!(linalg::norm_inf(&at_r) < 1e-9, "Aᵀr {:?} a {:?} b {:?} x {:?}", at_r, a, b, x);
        // Orthogonal to the null space of A.
        let gram = a.transpose().matmul(&a).unwrap().symmetric_part().unwrap();
        let eig = linalg::sym_eigen(&gram).unwrap();
        for (k, lam) in eig.values.iter().enumerate() {
            if *lam <= 1e-9 * eig.max() {
                let v: Vec<f64> = (0..c).map(|i| eig.vectors[(i, k)]).collect();
                prop_assert!(linalg::dot(&v, &x).abs() < 1e-8 * (1.0 + linalg::norm2(&x)));
            }
        }
    }

    #[test]
    fn matrix_exponential_inverts_and_matches_diagonal(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, n);
        let e = linalg::expm_taylor(&a, 0.7).unwrap();
        let e_inv = linalg::expm_taylor(&a, -0.7).unwrap();
        prop_assert!(e.matmul(&e_inv).unwrap().try_sub(&Matrix::identity(n)).unwrap().max_abs() < 1e-12);
        let d = random_vec(&mut rng, n, 2.0);
        let ed = linalg::expm_taylor(&Matrix::from_diag(&d), 1.3).unwrap();
        for (k, dk) in d.iter().enumerate() {
            prop_assert!((ed[(k, k)] - (1.3 * dk).exp()).abs() < 1e-12 * (1.3 * dk).exp().max(1.0));
        }
    }
}

#[test]
fn shape_errors_are_reported() {
    let a = Matrix::zeros(2, 3);
    assert!(a.matmul(&Matrix::zeros(2, 2)).is_err());
    assert!(a.mul_vec(&[1.0, 2.0]).is_err());
    assert!(linalg::sym_eigen(&a).is_err());
    assert!(linalg::kron_solve_least_squares(&a, &[1.0]).is_err());
    assert!(Matrix::new(2, 2, vec![1.0]).is_err());
}

#[test]
fn non_symmetric_input_is_rejected() {
    let a = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
    assert!(linalg::sym_eigen(&a).is_err());
}
