mod common;

use helix_core::coeff::{CoefficientField, Vec2};
use helix_core::elliptic::green::{gamma, green_function};
use helix_core::elliptic::Grid;

#[test]
fn series_oracle_is_symmetric_and_vanishes_on_boundary() {
    let a = common::square_green(1.0, [0.3, -0.2], [-0.1, 0.4]);
    let b = common::square_green(1.0, [-0.1, 0.4], [0.3, -0.2]);
    assert!((a - b).abs() < 1e-14);
    assert!(common::square_green(1.0, [1.0, 0.3], [0.2, -0.1]).abs() < 1e-14);
}

#[test]
fn identity_green_matches_series() {
    let g = Grid::new(1.0, 129).unwrap();
    let id = CoefficientField::identity(1.0);
    let y = Vec2::new(0.25, -0.125);
    let r = green_function(g, &id, y).unwrap();
    for x in [[-0.5, 0.5], [0.25, 0.375], [0.75, -0.75]] {
        let v = r.value_at(&id, Vec2::new(x[0], x[1])).unwrap();
        let exact = common::square_green(1.0, x, [y[0], y[1]]);
        assert!((v - exact).abs() < 1e-4, "{v} {exact}");
    }
}

#[test]
fn identity_robin_matches_series_limit() {
    let g = Grid::new(1.0, 129).unwrap();
    let id = CoefficientField::identity(1.0);
    let y = [0.125, 0.0];
    let r = green_function(g, &id, Vec2::new(y[0], y[1])).unwrap();
    // regular part is harmonic: symmetric vertical averages, Richardson in δ
    let avg = |d: f64| {
        let s = |sgn: f64| {
            let x = [y[0], y[1] + sgn * d];
            common::square_green(1.0, x, y) - gamma(Vec2::new(0.0, d))
        };
        0.5 * (s(1.0) + s(-1.0))
    };
    let exact = (4.0 * avg(0.05) - avg(0.1)) / 3.0;
    assert!((r.robin - exact).abs() < 1e-4, "{} {exact}", r.robin);
}
