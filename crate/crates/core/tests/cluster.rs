use std::f64::consts::PI;

use helix_core::cluster::*;
use helix_core::coeff::Vec2;
use helix_core::elliptic::ScalarField;

fn pair(eps: f64, n: usize) -> Scenario {
    Scenario {
        kind: ScenarioKind::Polygon { n: 2, kappa: 2.0 * PI, r_star: 1.0 },
        h: 1.0,
        p: 1.5,
        epsilon: eps,
        grid: GridSpec { half_width: 1.0, n },
        rho0: None,
    }
}

fn single(beta: f64, eps: f64) -> Scenario {
    Scenario {
        kind: ScenarioKind::Generic { centers: vec![[0.0, 0.0]], alpha: 0.0, beta },
        h: 1.0,
        p: 1.5,
        epsilon: eps,
        grid: GridSpec { half_width: 1.0, n: 257 },
        rho0: None,
    }
}

#[test]
fn zero_field_has_zero_energy() {
    let st = setup(&single(1.0, 0.04)).unwrap();
    let u = ScalarField::zeros(st.resolved.grid, "zero");
    assert_eq!(energy_discrete(&st.resolved, &st.disc, &u), 0.0);
}

#[test]
fn doubling_q_quadruples_the_energy() {
    let e1 = energy_of_ansatz(&setup(&single(1.0, 0.02)).unwrap()).unwrap().total;
    let e2 = energy_of_ansatz(&setup(&single(2.0, 0.02)).unwrap()).unwrap().total;
    assert!((e2 / e1 / 4.0 - 1.0).abs() < 0.05, "{}", e2 / e1);
}

#[test]
fn ansatz_energy_matches_closed_form() {
    let st = setup(&pair(0.04, 513)).unwrap();
    let e = energy_of_ansatz(&st).unwrap();
    assert!((e.total - e.closed_form).abs() < 0.05 * 0.04 * 0.04, "{} {}", e.total, e.closed_form);
    // the core identity and the grid quadratic form agree
    assert!((e.dirichlet - e.dirichlet_discrete).abs() < 2e-3 * e.dirichlet);
}

#[test]
fn single_bubble_circulation_matches_closed_form() {
    let eps = 0.02;
    let st = setup(&single(1.0, eps)).unwrap();
    let b = &st.ansatz.bubbles[0];
    let shift = (1.0 - b.qhat) * -eps.ln();
    let u = ScalarField::from_fn(st.resolved.grid, "v", |x| b.value(&st.table, x) + shift);
    let rep = cluster_diagnostics(&u, &st.resolved).unwrap();
    assert_eq!(rep.components.len(), 1);
    let c = rep.components[0].circulation;
    assert!((c / b.circulation() - 1.0).abs() < 0.01, "{c} {}", b.circulation());
}

#[test]
fn empty_support_gives_empty_report() {
    let st = setup(&single(1.0, 0.04)).unwrap();
    let u = ScalarField::zeros(st.resolved.grid, "zero");
    let rep = cluster_diagnostics(&u, &st.resolved).unwrap();
    assert!(rep.components.is_empty());
}

#[test]
fn lifted_vorticity_is_helical() {
    let st = setup(&pair(0.04, 257)).unwrap();
    let u = st.ansatz.u_total();
    let r = &st.resolved;
    let alpha = scenario_alpha(r);
    let rep = cluster_diagnostics(&u, r).unwrap();
    let c = rep.components[0].centroid;
    let h = r.scenario.h;
    let w = lift_vorticity_3d(&u, r, alpha, &[[c[0], c[1], 0.0], [c[0], c[1], 2.0 * PI * h]], 0.0).unwrap();
    for k in 0..3 {
        assert!((w[0][k] - w[1][k]).abs() <= 1e-9 * w[0][2].abs());
    }
    assert!(w[0][2] > 0.0);
    let dir = [c[1], -c[0], h];
    let cross = [
        w[0][1] * dir[2] - w[0][2] * dir[1],
        w[0][2] * dir[0] - w[0][0] * dir[2],
        w[0][0] * dir[1] - w[0][1] * dir[0],
    ];
    assert!(cross.iter().all(|v| v.abs() < 1e-12 * w[0][2]));
    assert!(lift_vorticity_3d(&u, r, alpha, &[[2.0, 0.0, 0.0]], 0.0).is_err());
}

#[test]
fn lifted_vorticity_is_divergence_free() {
    let st = setup(&pair(0.04, 257)).unwrap();
    let u = st.ansatz.u_total();
    let r = &st.resolved;
    let alpha = scenario_alpha(r);
    let z = r.centers[0];
    let x = [z[0] + 0.3 * st.ansatz.bubbles[0].s, z[1] + 0.2 * st.ansatz.bubbles[0].s, 0.1];
    let div = |d: f64| {
        let mut acc = 0.0;
        for k in 0..3 {
            let (mut p, mut m) = (x, x);
            p[k] += d;
            m[k] -= d;
            let w = lift_vorticity_3d(&u, r, alpha, &[p, m], 0.3).unwrap();
            acc += (w[0][k] - w[1][k]) / (2.0 * d);
        }
        acc
    };
    let w = lift_vorticity_3d(&u, r, alpha, &[x], 0.3).unwrap()[0][2];
    let scale = w / st.ansatz.bubbles[0].s;
    let (a, b) = (div(2e-3).abs(), div(5e-4).abs());
    assert!(b < a && b < 0.05 * scale, "{a} {b} {scale}");
}

#[test]
fn solved_pair_is_symmetric_and_converged() {
    let s = pair(0.04, 257);
    let (u, rep) = solve_clustered(&s, &ClusterOptions::default()).unwrap();
    assert_eq!(rep.components.len(), 2);
    assert!(rep.residual <= 1e-7, "{}", rep.residual);
    let h = u.grid.spacing();
    let (d0, d1) = (rep.components[0].diameter, rep.components[1].diameter);
    assert!((d0 - d1).abs() <= 2.0 * h, "{d0} {d1}");
    // support lies within |ln ε|^{-1} of the detected centroids
    let rad = 1.0 / -s.epsilon.ln();
    let r = s.resolve().unwrap();
    for j in 0..u.grid.n {
        for i in 0..u.grid.n {
            let x = u.grid.point(i, j);
            if r.source(u.at(i, j), x) > 0.0 {
                let near = rep.components.iter().any(|c| (x - Vec2::new(c.centroid[0], c.centroid[1])).norm() < rad);
                assert!(near, "support point {x:?} far from every centroid");
            }
        }
    }
    assert!(rep.ansatz_deviation.is_some() && rep.energy.is_some());
}

#[test]
fn report_serializes() {
    let st = setup(&single(1.0, 0.04)).unwrap();
    let rep = cluster_diagnostics(&st.ansatz.u_total(), &st.resolved).unwrap();
    let js = serde_json::to_value(&rep).unwrap();
    assert_eq!(js["expected_components"], 1);
    assert!(js["components"].is_array());
}

#[test]
fn scenario_round_trips_through_json() {
    let s = pair(0.02, 513);
    let txt = serde_json::to_string(&s).unwrap();
    assert!(txt.contains("\"polygon\""));
    let back: Scenario = serde_json::from_str(&txt).unwrap();
    assert_eq!(back, s);
    assert!(serde_json::from_str::<Scenario>(&txt.replace("\"h\"", "\"pitch\"")).is_err());
}
