use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use specmm::distances::{hausdorff_coords, wasserstein2};
use specmm::embed::{embed_i_full, embed_phi};
use specmm::heat::{heat_flow, heat_kernel, semigroup_defect};
use specmm::mmspace::{make_cycle, make_product, rescale, validate, FiniteMMS};
use specmm::spectral::{
    cluster_multiplicities, random_spectral_data, spectral_data, EXACT_CLUSTER_TOL,
};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn torus(r1: f64, n1: usize, r2: f64, n2: usize) -> FiniteMMS {
    make_product(&make_cycle(r1, n1).unwrap(), &make_cycle(r2, n2).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn cycles_validate_and_match_closed_form(r in 0.2f64..5.0, n in 3usize..48) {
        let x = make_cycle(r, n).unwrap();
        prop_assert!(validate(&x).is_valid());
        let sd = spectral_data(&x).unwrap();
        let h = 2.0 * std::f64::consts::PI * r / n as f64;
        let mut closed: Vec<f64> = (0..n)
            .map(|k| 4.0 / (h * h) * (std::f64::consts::PI * k as f64 / n as f64).sin().powi(2))
            .collect();
        closed.sort_by(f64::total_cmp);
        for (l, c) in sd.lambdas().iter().zip(&closed) {
            prop_assert!((l - c).abs() <= 1e-9 * c.abs().max(1.0 / (h * h) * 1e-6));
        }
    }

    #[test]
    fn products_validate_and_associate(
        n1 in 3usize..5, n2 in 3usize..5, n3 in 3usize..5,
        r1 in 0.5f64..2.0, r2 in 0.5f64..2.0, r3 in 0.5f64..2.0,
    ) {
        let (a, b, c) = (make_cycle(r1, n1).unwrap(), make_cycle(r2, n2).unwrap(), make_cycle(r3, n3).unwrap());
        let left = make_product(&make_product(&a, &b).unwrap(), &c).unwrap();
        let right = make_product(&a, &make_product(&b, &c).unwrap()).unwrap();
        prop_assert!(validate(&left).is_valid());
        // Both products enumerate points in the same lexicographic order.
        prop_assert!(max_rel(left.dist(), right.dist()) < 1e-12);
        let (ml, mr) = (left.measure(), right.measure());
        prop_assert!(ml.iter().zip(mr.iter()).all(|(p, q)| (p - q).abs() <= 1e-12 * p.abs()));
    }

    #[test]
    fn rescale_roundtrips(r in 0.2f64..5.0, n in 3usize..30, alpha in 0.1f64..10.0, beta in 0.1f64..10.0) {
        let x = make_cycle(r, n).unwrap();
        let y = rescale(&rescale(&x, alpha, beta).unwrap(), 1.0 / alpha, 1.0 / beta).unwrap();
        prop_assert!(validate(&y).is_valid());
        prop_assert!(max_rel(x.dist(), y.dist()) < 1e-12);
        let (mx, my) = (DMatrix::from_column_slice(n, 1, x.measure().as_slice()), DMatrix::from_column_slice(n, 1, y.measure().as_slice()));
        prop_assert!(max_rel(&mx, &my) < 1e-12);
    }

    #[test]
    fn spectrum_scales_under_rescale(n in 3usize..30, alpha in 0.1f64..10.0, beta in 0.1f64..10.0) {
        let x = make_cycle(1.0, n).unwrap();
        let a = spectral_data(&x).unwrap();
        let b = spectral_data(&rescale(&x, alpha, beta).unwrap()).unwrap();
        let top = a.lambdas().max();
        for (la, lb) in a.lambdas().iter().zip(b.lambdas().iter()) {
            let want = la / (alpha * alpha);
            prop_assert!((lb - want).abs() <= 1e-10 * want.abs().max(1e-6 * top / (alpha * alpha)));
        }
    }

    #[test]
    fn eigenbasis_is_complete(n1 in 3usize..7, n2 in 3usize..7, r in 0.5f64..2.0) {
        let x = torus(1.0, n1, r, n2);
        let sd = spectral_data(&x).unwrap();
        let m = sd.measure();
        let n = sd.n();
        let weighted = DMatrix::from_fn(n, n, |y, i| sd.phis()[(y, i)] * m[y]);
        let id = sd.phis() * weighted.transpose();
        prop_assert!((id - DMatrix::<f64>::identity(n, n)).amax() < 1e-8);
    }

    #[test]
    fn heat_kernel_is_basis_independent(seed in any::<u64>(), t in 0.05f64..3.0) {
        let x = torus(1.0, 6, 1.0, 6);
        let sd = spectral_data(&x).unwrap();
        let table = cluster_multiplicities(&sd, EXACT_CLUSTER_TOL);
        let other = random_spectral_data(&sd, &table, seed);
        prop_assert_eq!(other.lambdas(), sd.lambdas());
        prop_assert!(other.orthonormality_defect() < 1e-10);
        let (p, q) = (heat_kernel(&sd, t).unwrap(), heat_kernel(&other, t).unwrap());
        prop_assert!((p - q).amax() < 1e-9);
    }

    #[test]
    fn heat_kernel_inverts_measure_scale(beta in 0.1f64..10.0, t in 0.05f64..3.0, n in 3usize..30) {
        let x = make_cycle(1.0, n).unwrap();
        let p = heat_kernel(&spectral_data(&x).unwrap(), t).unwrap();
        let q = heat_kernel(&spectral_data(&rescale(&x, 1.0, beta).unwrap()).unwrap(), t).unwrap();
        let scaled = p / beta;
        prop_assert!((&scaled - &q).amax() <= 1e-12 * scaled.amax());
    }

    #[test]
    fn heat_semigroup(s in 0.01f64..2.0, t in 0.01f64..2.0, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let x = make_cycle(1.0, 40).unwrap();
        let sd = spectral_data(&x).unwrap();
        prop_assert!(semigroup_defect(&sd, s, t).unwrap() < 1e-9);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let f = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
            let two = heat_flow(&sd, &heat_flow(&sd, &f, s).unwrap(), t).unwrap();
            let one = heat_flow(&sd, &f, s + t).unwrap();
            prop_assert!((two - one).amax() < 1e-9);
        }
    }

    #[test]
    fn hausdorff_triangle_inequality(
        a in prop::collection::vec(-3.0f64..3.0, 3..30),
        b in prop::collection::vec(-3.0f64..3.0, 3..30),
        c in prop::collection::vec(-3.0f64..3.0, 3..30),
    ) {
        let cloud = |v: &[f64]| DMatrix::from_column_slice(3, v.len() / 3, &v[..v.len() / 3 * 3]);
        let (a, b, c) = (cloud(&a), cloud(&b), cloud(&c));
        let h = |p: &DMatrix<f64>, q: &DMatrix<f64>| hausdorff_coords(p, q).value;
        prop_assert!(h(&a, &c) <= h(&a, &b) + h(&b, &c));
        prop_assert_eq!(h(&a, &b), h(&b, &a));
        prop_assert_eq!(h(&a, &a), 0.0);
    }

    #[test]
    fn wasserstein_is_a_symmetric_semimetric(
        w in prop::collection::vec(0.01f64..1.0, 2..8),
        v in prop::collection::vec(0.01f64..1.0, 2..8),
    ) {
        let n = w.len().min(v.len());
        let x = make_cycle(1.0, n.max(3)).unwrap();
        let k = x.n();
        let norm = |u: &[f64]| {
            let mut u: Vec<f64> = (0..k).map(|i| u[i % u.len()]).collect();
            let s: f64 = u.iter().sum();
            u.iter_mut().for_each(|p| *p /= s);
            let s: f64 = u[..k - 1].iter().sum();
            u[k - 1] = 1.0 - s;
            u
        };
        let (mu, nu) = (norm(&w), norm(&v));
        let d = x.dist();
        let ab = wasserstein2(&mu, &nu, d).unwrap();
        let ba = wasserstein2(&nu, &mu, d).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert_eq!(wasserstein2(&mu, &mu, d).unwrap(), 0.0);
        prop_assert!(ab <= x.diameter() + 1e-12);
    }

    #[test]
    fn embedding_is_basis_equivariant(seed in any::<u64>(), t in 0.1f64..2.0) {
        let x = torus(1.0, 8, 1.0, 8);
        let sd = spectral_data(&x).unwrap();
        let table = cluster_multiplicities(&sd, EXACT_CLUSTER_TOL);
        let other = random_spectral_data(&sd, &table, seed);
        let (a, b) = (embed_i_full(&sd, t).unwrap(), embed_i_full(&other, t).unwrap());
        prop_assert!((a.pairwise() - b.pairwise()).amax() < 1e-9);
    }

    #[test]
    fn phi_distances_are_kernel_row_distances(t in 0.05f64..2.0, n in 3usize..40) {
        let x = make_cycle(0.8, n).unwrap();
        let sd = spectral_data(&x).unwrap();
        let cloud = embed_phi(&sd, t).unwrap();
        let p = heat_kernel(&sd, t).unwrap();
        let m = x.measure();
        for i in 0..n {
            for j in 0..n {
                let l2 = (0..n).map(|z| (p[(i, z)] - p[(j, z)]).powi(2) * m[z]).sum::<f64>().sqrt();
                let e = (cloud.coords.column(i) - cloud.coords.column(j)).norm();
                prop_assert!((l2 - e).abs() < 1e-10 * (1.0 + l2));
            }
        }
    }

    #[test]
    fn joint_rescaling_identity(t in 0.1f64..3.0, s in 0.1f64..3.0, c in 0.2f64..5.0) {
        let x = make_cycle(1.0, 24).unwrap();
        let sd = spectral_data(&x).unwrap();
        let alpha = (s / t).sqrt();
        // Data c·φ is orthonormal for the measure c⁻²·m.
        let moved = sd.transported(alpha, 1.0 / (c * c));
        let oracle = spectral_data(&rescale(&x, alpha, 1.0 / (c * c)).unwrap()).unwrap();
        for (a, b) in moved.lambdas().iter().zip(oracle.lambdas().iter()) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1e-6));
        }
        let (a, b) = (embed_i_full(&sd, t).unwrap(), embed_i_full(&moved, s).unwrap());
        prop_assert!((a.coords - b.coords).amax() < 1e-12);
    }
}

#[test]
fn torus_data_stay_orthonormal_over_many_seeds() {
    let x = torus(1.0, 16, 1.0, 16);
    let sd = spectral_data(&x).unwrap();
    let table = cluster_multiplicities(&sd, EXACT_CLUSTER_TOL);
    for seed in 0..100 {
        let other = random_spectral_data(&sd, &table, seed);
        assert!(other.orthonormality_defect() < 1e-10, "seed {seed}");
    }
}
