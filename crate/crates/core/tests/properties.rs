//! Invariants checked over random inputs.

use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use helix_core::coeff::{CoefficientField, Mat2, Vec2, WeightProfile};
use helix_core::elliptic::grid::fmt17;
use helix_core::elliptic::{Grid, Operator, ScalarField};
use helix_core::equilibria::{Case, HelicalFamily};
use helix_core::kmd::{kmd_diagnostics, kmd_rhs, FilamentEnsemble, KmdOptions, Spectral};
use helix_core::reduced::{energy_expansion, h_n_eval, ExpansionInputs, ReducedEnergyContext};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 32, ..ProptestConfig::default() }
}

fn wavy(n: usize, m: usize, amp: &[f64]) -> FilamentEnsemble {
    let period = 2.0 * PI;
    let x = (0..n)
        .map(|j| {
            (0..m)
                .map(|k| {
                    let s = period * k as f64 / m as f64;
                    let r = 1.0 + 0.3 * j as f64 + amp[j] * (2.0 * s).cos();
                    Complex64::from_polar(r, 2.0 * PI * j as f64 / n as f64 + s)
                })
                .collect()
        })
        .collect();
    FilamentEnsemble::new((0..n).map(|j| 1.0 + 0.5 * j as f64).collect(), period, x).unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn helical_matrix_is_spd_with_unit_eigenvalue(x in -0.9..0.9f64, y in -0.9..0.9f64, h in 0.3..3.0f64) {
        let f = CoefficientField::helical(h, 1.0);
        let z = Vec2::new(x, y);
        let k = f.k(z);
        prop_assert!((k[(0, 1)] - k[(1, 0)]).abs() < 1e-15);
        let e = k.symmetric_eigenvalues();
        let (lo, hi) = (e.min(), e.max());
        prop_assert!(lo > 0.0);
        prop_assert!((hi - 1.0).abs() < 1e-12);
        prop_assert!((k.determinant() - h * h / (h * h + x * x + y * y)).abs() < 1e-12);
    }

    #[test]
    fn weight_profile_is_quadratic(a in -2.0..2.0f64, b in 0.1..3.0f64, x in -0.9..0.9f64, y in -0.9..0.9f64) {
        let w = WeightProfile::new(a, b);
        prop_assert!((w.q(Vec2::new(x, y)) - (0.5 * a * (x * x + y * y) + b)).abs() < 1e-14);
    }

    #[test]
    fn operator_is_symmetric_and_positive(
        k11 in 0.2..2.0f64, k22 in 0.2..2.0f64, c in -0.9..0.9f64, seed in any::<u64>(),
    ) {
        let k12 = c * (k11 * k22).sqrt();
        let k = Mat2::new(k11, k12, k12, k22);
        let grid = Grid::new(1.0, 17).unwrap();
        let op = Operator::constant(grid, k);
        prop_assert!(op.symmetry_defect() < 1e-12);
        let mut s = seed;
        let u: Vec<f64> = (0..grid.len())
            .map(|idx| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let (i, j) = (idx % grid.n, idx / grid.n);
                if grid.is_boundary(i, j) { 0.0 } else { (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5 }
            })
            .collect();
        prop_assert!(op.energy(&u) > 0.0);
    }

    #[test]
    fn interpolation_reproduces_nodes(i in 0usize..33, j in 0usize..33, r in 0.5..2.0f64) {
        let grid = Grid::new(r, 33).unwrap();
        let f = ScalarField::from_fn(grid, "f", |x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let v = f.interpolate(grid.point(i, j)).unwrap();
        prop_assert!((v - f.at(i, j)).abs() < 1e-12);
    }

    #[test]
    fn seventeen_digits_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt17(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn polygon_equilibria_are_exact(n in 2usize..9, kappa in 0.1..5.0f64, r in 0.2..3.0f64, h in 0.2..3.0f64) {
        let f = HelicalFamily::new(Case::Polygon { n, kappa, r }, h);
        prop_assert!(f.equilibrium_residual().unwrap() <= 1e-12 * kappa.max(1.0) / r.min(1.0));
    }

    #[test]
    fn kmd_rhs_is_rotation_equivariant(phi in 0.0..(2.0 * PI), a0 in -0.1..0.1f64, a1 in -0.1..0.1f64) {
        let e = wavy(2, 16, &[a0, a1]);
        let sp = Spectral::new(16, e.period);
        let opts = KmdOptions::default();
        let rot = Complex64::from_polar(1.0, phi);
        let mut er = e.clone();
        er.x.iter_mut().flatten().for_each(|c| *c *= rot);
        let (f0, f1) = (kmd_rhs(&e, &sp, &opts).unwrap(), kmd_rhs(&er, &sp, &opts).unwrap());
        for (a, b) in f0.iter().flatten().zip(f1.iter().flatten()) {
            prop_assert!((a * rot - b).norm() < 1e-12);
        }
        let (d0, d1) = (kmd_diagnostics(&e, &opts).unwrap(), kmd_diagnostics(&er, &opts).unwrap());
        prop_assert!((d0.hamiltonian - d1.hamiltonian).abs() < 1e-12 * d0.hamiltonian.abs().max(1.0));
        prop_assert!((d0.second_moment - d1.second_moment).abs() < 1e-12 * d0.second_moment);
    }

    #[test]
    fn reduced_energy_is_rotation_invariant(
        phi in 0.0..(2.0 * PI), x in prop::collection::vec(-0.6..0.6f64, 6), alpha in -1.0..1.0f64,
    ) {
        let f = CoefficientField::helical(1.0, 1.0);
        let ctx = ReducedEnergyContext::from_field(&f, &WeightProfile::new(alpha, 1.0)).unwrap();
        let z: Vec<Vec2> = x.chunks(2).map(|c| Vec2::new(c[0], c[1])).collect();
        prop_assume!(z.iter().enumerate().all(|(i, a)| z[..i].iter().all(|b| (a - b).norm() > 0.05)));
        let (c, s) = (phi.cos(), phi.sin());
        let zr: Vec<Vec2> = z.iter().map(|v| Vec2::new(c * v[0] - s * v[1], s * v[0] + c * v[1])).collect();
        let (v0, g) = h_n_eval(&ctx, &z).unwrap();
        let (v1, _) = h_n_eval(&ctx, &zr).unwrap();
        prop_assert!((v0 - v1).abs() < 1e-10 * v0.abs().max(1.0));
        // gradient against central differences
        for i in 0..z.len() {
            for k in 0..2 {
                let d = 1e-6;
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[i][k] += d;
                zm[i][k] -= d;
                let fd = (h_n_eval(&ctx, &zp).unwrap().0 - h_n_eval(&ctx, &zm).unwrap().0) / (2.0 * d);
                prop_assert!((fd - g[i][k]).abs() < 1e-5 * g[i][k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn expansion_leading_term_scales_with_q_squared(
        q in 0.2..3.0f64, eps in 0.001..0.1f64, robin in -0.1..0.1f64, g in 0.0..0.5f64,
    ) {
        let base = ExpansionInputs {
            epsilon: eps, q: vec![q, q], sqrt_det: vec![1.0, 0.9], robin: vec![robin; 2],
            green: vec![0.0, g, g, 0.0], p: 1.5,
        };
        let mut doubled = base.clone();
        doubled.q = vec![2.0 * q, 2.0 * q];
        let (a, b) = (energy_expansion(&base).unwrap(), energy_expansion(&doubled).unwrap());
        prop_assert!((b.leading - 4.0 * a.leading).abs() < 1e-12 * b.leading);
        prop_assert!((b.total - 4.0 * a.total).abs() < 1e-12 * b.total.abs().max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn pohozaev_identities_hold(p in 1.1..4.0f64) {
        let t = helix_core::elliptic::profile::solve_profile(p).unwrap();
        let (a, b) = t.pohozaev_defects();
        prop_assert!(a < 1e-6 && b < 1e-6, "p={p}: {a} {b}");
    }
}

#[test]
fn binary_grid_dump_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new(1.5, 33).unwrap();
    let f = ScalarField::from_fn(grid, "f", |x| (x[0] * 7.0).exp() - x[1]);
    let path = dir.path().join("f.bin");
    f.write_binary(&path).unwrap();
    let g = ScalarField::read_binary(&path, "f").unwrap();
    assert_eq!(g.grid, f.grid);
    assert!(g.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
}
