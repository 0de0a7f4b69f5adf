//! Property-based suite over the algebraic core: so(3) identities, the
//! weighted-trace potential, incidence-matrix structure on random trees, and
//! controller/operator equivalences.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use attsync::controllers;
use attsync::potential::{self, PotentialParams};
use attsync::so3::{self, Rotation};
use attsync::topology::OrientedTree;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-10.0f64..10.0).prop_map(Vector3::from)
}

fn mat3() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform9(-10.0f64..10.0).prop_map(|v| Matrix3::from_row_slice(&v))
}

/// Haar-random rotation from a seed, so shrinking stays deterministic.
fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    any::<u64>().prop_map(|seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        so3::random_rotation::<f64, _>(&mut rng).into_matrix()
    })
}

/// Random labeled tree on `n` vertices: each vertex i >= 2 attaches to an
/// earlier one, with a coin flip for edge orientation.
fn tree(max_agents: usize) -> impl Strategy<Value = OrientedTree> {
    (2..=max_agents)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((any::<prop::sample::Index>(), any::<bool>()), n - 1),
            )
        })
        .prop_map(|(n, picks)| {
            let edges: Vec<(usize, usize)> = picks
                .iter()
                .enumerate()
                .map(|(j, (idx, flip))| {
                    let child = j + 2;
                    let parent = idx.index(child - 1) + 1;
                    if *flip {
                        (child, parent)
                    } else {
                        (parent, child)
                    }
                })
                .collect();
            OrientedTree::build(n, &edges).expect("construction yields a tree")
        })
}

fn params() -> PotentialParams<f64> {
    potential::reference_params()
}

proptest! {
    #[test]
    fn vex_hat_roundtrip(v in vec3()) {
        let back = so3::vex(&so3::hat(v));
        prop_assert!((back - v).norm() <= 1e-12);
    }

    #[test]
    fn hat_is_cross_product(v in vec3(), w in vec3()) {
        let lhs = so3::hat(v).into_matrix() * w;
        prop_assert!((lhs - v.cross(&w)).norm() <= 1e-9 * (1.0 + v.norm() * w.norm()));
    }

    #[test]
    fn psi_antisymmetry(m in mat3()) {
        let scale = 1.0 + m.norm();
        prop_assert!((so3::psi(&m) + so3::psi(&m.transpose())).norm() <= 1e-12 * scale);
        let sym = m + m.transpose();
        prop_assert!(so3::psi(&sym).norm() <= 1e-12 * scale);
    }

    #[test]
    fn psi_equivariance(m in mat3(), q in rotation()) {
        let lhs = q * so3::psi(&m);
        let rhs = so3::psi(&(q * m * q.transpose()));
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + m.norm()));
    }

    #[test]
    fn exp_log_distance(v in vec3()) {
        // dist_id_sq of exp(theta n) equals sin^2(theta/2).
        let r = so3::exp_so3(v);
        let expected = (v.norm() / 2.0).sin().powi(2);
        prop_assert!((r.dist_id_sq() - expected).abs() <= 1e-9);
    }

    #[test]
    fn projection_recovers_rotations(q in rotation(), noise in mat3()) {
        let perturbed = q + noise * 1e-9;
        let projected = so3::project_to_rotation(&perturbed).unwrap().into_matrix();
        prop_assert!((projected - q).norm() <= 1e-7);
    }

    #[test]
    fn potential_nonnegative_zero_only_at_target(r in rotation(), xi in -PI..PI) {
        let p = params();
        let u = potential::u_value(&r, xi, &p);
        prop_assert!(u >= -1e-12);
        // Zero value forces the rotation-composition to the identity.
        if u <= 1e-12 {
            prop_assert!(xi.abs() <= 1e-6);
            prop_assert!((r - Matrix3::identity()).norm() <= 1e-5);
        }
    }

    #[test]
    fn gradient_vanishes_only_with_zero_directional_derivative(r in rotation(), xi in -PI..PI) {
        // Central differences along three axes match 2 eta' g for the body
        // gradient, the defining property used by every controller.
        let p = params();
        let g = potential::grad_r_body(&r, xi, &p);
        let h = 1e-6;
        for axis in 0..3 {
            let mut eta = Vector3::zeros();
            eta[axis] = 1.0;
            let fwd = potential::u_value(&(r * so3::exp_so3(eta * h).into_matrix()), xi, &p);
            let bwd = potential::u_value(&(r * so3::exp_so3(-eta * h).into_matrix()), xi, &p);
            let fd = (fwd - bwd) / (2.0 * h);
            prop_assert!((fd - 2.0 * g[axis]).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn xi_star_minimizes_over_switch_set(r in rotation()) {
        let p = params();
        let (best, value) = potential::xi_star(&r, &p);
        prop_assert!(p.xi_set().contains(&best));
        for &xi in p.xi_set() {
            prop_assert!(value <= potential::u_value(&r, xi, &p) + 1e-12);
        }
    }

    #[test]
    fn incidence_columns_sum_to_zero_and_tree_rank(t in tree(10)) {
        let n = t.n_agents();
        let h: DMatrix<f64> = t.incidence();
        let ones = DMatrix::from_element(1, n, 1.0);
        prop_assert!((ones * &h).norm() <= 1e-13);
        prop_assert_eq!(h.rank(1e-10), n - 1);
        // Laplacian = H H'.
        let lap: DMatrix<f64> = t.laplacian();
        prop_assert!((&h * h.transpose() - lap).norm() <= 1e-12);
    }

    #[test]
    fn weighted_incidence_full_column_rank(t in tree(10), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rots: Vec<Matrix3<f64>> = (0..t.n_edges())
            .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
            .collect();
        let hbar = t.hbar_dense(&rots);
        prop_assert_eq!(hbar.rank(1e-10), 3 * t.n_edges());
    }

    #[test]
    fn hbar_apply_matches_dense_and_adjoint(t in tree(8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t.n_agents();
        let m = t.n_edges();
        let rots: Vec<Matrix3<f64>> = (0..m)
            .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
            .collect();
        let w: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::from_fn(|_, _| rand::Rng::gen::<f64>(&mut rng) - 0.5))
            .collect();
        let v: Vec<Vector3<f64>> = (0..m)
            .map(|_| Vector3::from_fn(|_, _| rand::Rng::gen::<f64>(&mut rng) - 0.5))
            .collect();

        let hbar = t.hbar_dense(&rots);
        let wbar = t.hbar_apply(&rots, &w).unwrap();
        let stacked_w = DMatrix::from_fn(3 * n, 1, |r, _| w[r / 3][r % 3]);
        let dense_wbar = hbar.transpose() * &stacked_w;
        for k in 0..m {
            for c in 0..3 {
                prop_assert!((wbar[k][c] - dense_wbar[(3 * k + c, 0)]).abs() <= 1e-12);
            }
        }

        let hv = t.hbar_premultiply(&rots, &v).unwrap();
        let stacked_v = DMatrix::from_fn(3 * m, 1, |r, _| v[r / 3][r % 3]);
        let dense_hv = hbar * &stacked_v;
        for i in 0..n {
            for c in 0..3 {
                prop_assert!((hv[i][c] - dense_hv[(3 * i + c, 0)]).abs() <= 1e-12);
            }
        }

        // Adjoint identity: <Hbar' w, v> = <w, Hbar v>.
        let lhs: f64 = wbar.iter().zip(&v).map(|(a, b)| a.dot(b)).sum();
        let rhs: f64 = w.iter().zip(&hv).map(|(a, b)| a.dot(b)).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10);
    }

    #[test]
    fn hybrid_equals_continuous_at_zero_switch(t in tree(7), seed in any::<u64>()) {
        let p = params();
        let gains = attsync::Gains::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<Matrix3<f64>> = (0..t.n_agents())
            .map(|_| so3::random_rotation::<f64, _>(&mut rng).into_matrix())
            .collect();
        let omega: Vec<Vector3<f64>> = (0..t.n_agents())
            .map(|_| Vector3::from_fn(|_, _| rand::Rng::gen::<f64>(&mut rng) - 0.5))
            .collect();
        let rbar = attsync::plant::edge_relatives(&r, &t);
        let xi = vec![0.0; t.n_edges()];
        let hybrid = controllers::hybrid_torques(&rbar, &xi, &omega, &t, &gains, &p);
        let continuous = controllers::continuous_torques(&r, &omega, &t, &gains, &p);
        for (a, b) in hybrid.iter().zip(&continuous) {
            prop_assert!((a - b).norm() <= 1e-10 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn jump_never_increases_potential(r in rotation(), xi in -PI..PI) {
        let p = params();
        let after = potential::u_value(&r, controllers::xi_jump(&r, &p), &p);
        let before = potential::u_value(&r, xi, &p);
        // The jump target minimizes over the switch set; if the pre-jump
        // value was in the set, the jump cannot increase U.
        if p.xi_set().iter().any(|&s| (s - xi).abs() < 1e-12) {
            prop_assert!(after <= before + 1e-12);
        }
        // And whenever the gap exceeds delta, the drop is at least delta.
        if potential::gap(&r, xi, &p) >= p.delta() {
            prop_assert!(before - after >= p.delta() - 1e-12);
        }
    }

    #[test]
    fn rotation_row_major_roundtrip(q in rotation()) {
        let rot = Rotation::new(q).unwrap();
        let back = Rotation::from_row_major(rot.to_row_major()).unwrap();
        prop_assert!((back.matrix() - q).norm() <= 1e-12);
    }
}

/// Edge angular velocity equals the weighted-incidence transpose applied to
/// the stacked agent velocities at every step of an actual hybrid run.
#[test]
fn edge_velocity_identity_along_trajectory() {
    let cfg = attsync::harness::load_config("seven_sat_hybrid").unwrap();
    let spec = cfg.to_run_spec().unwrap();
    let mut state = spec.initial.clone();
    let mut worst = 0.0f64;
    for n in 0..500 {
        state = attsync::engine::step(&state, &spec, n as f64 * spec.h).unwrap();
        let wbar = spec.tree.hbar_apply(&state.rbar, &state.omega).unwrap();
        let hbar = spec.tree.hbar_dense(&state.rbar);
        let stacked = DMatrix::from_fn(3 * state.omega.len(), 1, |r, _| state.omega[r / 3][r % 3]);
        let dense = hbar.transpose() * stacked;
        for (k, w) in wbar.iter().enumerate() {
            for c in 0..3 {
                worst = worst.max((w[c] - dense[(3 * k + c, 0)]).abs());
            }
        }
    }
    assert!(worst <= 1e-9, "worst residual {worst}");
}
