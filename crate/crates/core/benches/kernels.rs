//! Hot kernels. Run once with the default `parallel` feature and once with
//! `--no-default-features`; group names carry the mode so criterion keeps the
//! two baselines apart.

use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use helix_core::coeff::CoefficientField;
use helix_core::elliptic::solver::Discretization;
use helix_core::elliptic::Grid;
use helix_core::kmd::{kmd_rhs, FilamentEnsemble, KmdOptions, Spectral};
use helix_core::par;

fn mode() -> String {
    if cfg!(feature = "parallel") {
        format!("parallel-{}", par::threads())
    } else {
        "sequential".into()
    }
}

fn operator(c: &mut Criterion) {
    let mut g = c.benchmark_group(format!("operator_apply/{}", mode()));
    let field = CoefficientField::helical(1.0, 1.0);
    for n in [257, 513, 1025] {
        let disc = Discretization::new(Grid::new(1.0, n).unwrap(), &field);
        let u: Vec<f64> = (0..n * n).map(|k| ((k % 97) as f64).sin()).collect();
        let mut out = vec![0.0; n * n];
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| disc.op.apply(black_box(&u), &mut out))
        });
    }
    g.finish();
}

fn poisson(c: &mut Criterion) {
    let mut g = c.benchmark_group(format!("mg_pcg_solve/{}", mode()));
    g.sample_size(10);
    let field = CoefficientField::helical(1.0, 1.0);
    for n in [129, 257, 513] {
        let grid = Grid::new(1.0, n).unwrap();
        let disc = Discretization::new(grid, &field);
        let h2 = grid.spacing().powi(2);
        let b: Vec<f64> = (0..n * n).map(|k| h2 * (1.0 + ((k % 13) as f64) * 0.1)).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| {
                let mut x = vec![0.0; n * n];
                disc.solve(black_box(&b), &mut x).unwrap();
                x
            })
        });
    }
    g.finish();
}

fn filaments(c: &mut Criterion) {
    let mut g = c.benchmark_group(format!("kmd_rhs/{}", mode()));
    let opts = KmdOptions::default();
    for m in [64, 256, 1024] {
        let period = 2.0 * PI;
        let x = (0..5)
            .map(|j| {
                (0..m)
                    .map(|k| {
                        let s = period * k as f64 / m as f64;
                        Complex64::from_polar(1.0 + 0.2 * j as f64 + 0.05 * (3.0 * s).cos(), 1.3 * j as f64 + s)
                    })
                    .collect()
            })
            .collect();
        let e = FilamentEnsemble::new(vec![1.0; 5], period, x).unwrap();
        let sp = Spectral::new(m, period);
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| kmd_rhs(black_box(&e), &sp, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, operator, poisson, filaments);
criterion_main!(benches);
