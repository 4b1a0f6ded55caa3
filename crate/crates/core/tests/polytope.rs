mod common;

use common::{random_matrix, random_vec};
use proptest::prelude::*;
use pwa_hier_core::linalg::Matrix;
use pwa_hier_core::polytope::{self, CellKind, Partition, Polyhedron, PolytopeError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn poly(rows: &[[f64; 2]], f: &[f64]) -> Polyhedron {
    Polyhedron::new(Matrix::from_rows(rows).unwrap(), f.to_vec()).unwrap()
}

/// Polygon `{x : nₖ·(x − c) ≤ rₖ}` with inward rows `−nₖ`.
fn random_polygon(rng: &mut ChaCha8Rng) -> Polyhedron {
    let k = rng.gen_range(4..8);
    let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let mut rows = Vec::new();
    let mut f = Vec::new();
    for i in 0..k {
        let a = std::f64::consts::TAU * (i as f64 + rng.gen_range(-0.3..0.3)) / k as f64;
        let (s, co) = a.sin_cos();
        let r = rng.gen_range(0.5..1.5);
        rows.push([-co, -s]);
        f.push(-(co * c[0] + s * c[1] + r));
    }
    poly(&rows, &f)
}

#[test]
fn case_one_cones_tile_upper_half_plane() {
    let cells = vec![
        poly(&[[-1.0, 1.0], [-1.0, -1.0]], &[0.0, 0.0]),
        poly(&[[-1.0, 1.0], [1.0, 1.0]], &[0.0, 0.0]),
        poly(&[[1.0, -1.0], [1.0, 1.0]], &[0.0, 0.0]),
    ];
    let part = Partition::new(cells).unwrap();
    assert_eq!(part.locate_mode(&[-2.0, 1.0], None).unwrap(), 0);
    assert_eq!(part.locate_mode(&[0.0, 2.0], None).unwrap(), 1);
    assert_eq!(part.locate_mode(&[2.0, 1.0], None).unwrap(), 2);
    assert_eq!(part.containing(&[1.0, 1.0]), vec![1, 2]);
    assert_eq!(part.locate_mode(&[1.0, 1.0], Some(2)).unwrap(), 2);
    assert!(matches!(part.locate_mode(&[0.0, -1.0], None), Err(PolytopeError::NoCell(_))));
    assert!(part.kinds().iter().all(|k| *k == CellKind::Conic));
}

#[test]
fn unbounded_and_empty_cells_have_no_vertex_list() {
    let cone = poly(&[[-1.0, 1.0], [1.0, 1.0]], &[0.0, 0.0]);
    assert_eq!(polytope::vertices_2d(&cone), Err(PolytopeError::Unbounded));
    let square = poly(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]], &[0.0, 0.0, -1.0, -1.0]);
    assert_eq!(polytope::vertices_2d(&square).unwrap().len(), 4);
}

#[test]
fn scaling_about_centroid_decides_containment() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let z = random_polygon(&mut rng);
        assert!(polytope::contains_mapped(&z, &Matrix::identity(2), &[0.0, 0.0], &z).unwrap());
        // z ↦ c + 1.5(z − c) about the vertex centroid c.
        let verts = polytope::vertices_2d(&z).unwrap();
        let n = verts.len() as f64;
        let c = [verts.iter().map(|v| v[0]).sum::<f64>() / n, verts.iter().map(|v| v[1]).sum::<f64>() / n];
        let grown = polytope::contains_mapped(&z, &Matrix::identity(2).scale(1.5), &[-0.5 * c[0], -0.5 * c[1]], &z);
        assert!(!grown.unwrap());
        let shrunk = polytope::contains_mapped(&z, &Matrix::identity(2).scale(0.5), &[0.5 * c[0], 0.5 * c[1]], &z);
        assert!(shrunk.unwrap());
        assert!(!polytope::contains_mapped(&z, &Matrix::identity(2), &[10.0, 0.0], &z).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// `ω ∈ joint_cell(X, P)` iff `x̃ + P x₂ ∈ X`.
    #[test]
    fn joint_cell_membership_matches_concrete(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (4, 2);
        let e = random_matrix(&mut rng, 3, n);
        let f = random_vec(&mut rng, 3, 1.0);
        let cell = Polyhedron::new(e, f).unwrap();
        let p = random_matrix(&mut rng, n, m);
        let joint = polytope::joint_cell(&cell, &p).unwrap();
        for _ in 0..20 {
            let xt = random_vec(&mut rng, n, 2.0);
            let x2 = random_vec(&mut rng, m, 2.0);
            let x1: Vec<f64> = xt.iter().zip(p.mul_vec(&x2).unwrap()).map(|(a, b)| a + b).collect();
            let mut omega = xt.clone();
            omega.extend_from_slice(&x2);
            let direct = cell.margin(&x1).unwrap();
            let lifted = joint.margin(&omega).unwrap();
            prop_assert!((direct - lifted).abs() < 1e-12);
        }
    }

    /// Every vertex lies on two facets, and the vertex centroid is inside.
    #[test]
    fn vertices_are_active_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_polygon(&mut rng);
        let verts = polytope::vertices_2d(&z).unwrap();
        prop_assert!(verts.len() >= 3);
        for v in &verts {
            let ev = z.e().mul_vec(v).unwrap();
            let active = ev.iter().zip(z.f()).filter(|(a, b)| (*a - *b).abs() < 1e-9).count();
            prop_assert!(active >= 2);
            prop_assert!(z.contains(v, 1e-9));
        }
        let c = [
            verts.iter().map(|v| v[0]).sum::<f64>() / verts.len() as f64,
            verts.iter().map(|v| v[1]).sum::<f64>() / verts.len() as f64,
        ];
        prop_assert!(z.margin(&c).unwrap() > 0.0);
    }

    /// Mapped containment agrees with checking every sampled convex
    /// combination when the answer is positive.
    #[test]
    fn contained_image_keeps_interior_points(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = random_polygon(&mut rng);
        let x = random_polygon(&mut rng);
        let p = random_matrix(&mut rng, 2, 2).scale(0.3);
        let yhat = random_vec(&mut rng, 2, 0.5);
        if polytope::contains_mapped(&z, &p, &yhat, &x).unwrap() {
            let verts = polytope::vertices_2d(&z).unwrap();
            for _ in 0..50 {
                let w: Vec<f64> = verts.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
                let s: f64 = w.iter().sum();
                let pt = [
                    verts.iter().zip(&w).map(|(v, w)| v[0] * w).sum::<f64>() / s,
                    verts.iter().zip(&w).map(|(v, w)| v[1] * w).sum::<f64>() / s,
                ];
                let y = p.mul_vec(&pt).unwrap();
                prop_assert!(x.contains(&[y[0] + yhat[0], y[1] + yhat[1]], 1e-9));
            }
        }
    }
}
