#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pwa_hier_core::linalg::{self, Matrix};
use pwa_hier_core::model::Model;
use pwa_hier_core::pipeline::{self, Prepared};
use pwa_hier_core::Execution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn model_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name)
}

pub fn prepared(name: &str) -> Prepared {
    let model = Model::load(&model_path(name)).expect("model loads");
    pipeline::prepare(model, Execution::Parallel).expect("model prepares")
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// `(XᵀX)⁻¹Xᵀ` for a matrix with independent columns.
pub fn pseudo_inverse(x: &Matrix) -> Matrix {
    let xt = x.transpose();
    let gram = xt.matmul(x).unwrap();
    let inv = linalg::sym_eigen(&gram).unwrap().recompose_with(|v| 1.0 / v);
    inv.matmul(&xt).unwrap()
}

/// `‖H − CP‖_F` and `‖PF − AP − BQ‖_F`.
pub fn relation_errors(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    f: &Matrix,
    h: &Matrix,
    p: &Matrix,
    q: &Matrix,
) -> (f64, f64) {
    let out = h.try_sub(&c.matmul(p).unwrap()).unwrap().frobenius_norm();
    let lhs = p.matmul(f).unwrap();
    let rhs = a.matmul(p).unwrap().try_add(&b.matmul(q).unwrap()).unwrap();
    (out, lhs.try_sub(&rhs).unwrap().frobenius_norm())
}
