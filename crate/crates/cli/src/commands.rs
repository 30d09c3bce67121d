use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use helix_core::cluster::{energy_of_ansatz, expansion_inputs, lift_vorticity_3d, setup, solve_clustered, EnergyReport};
use helix_core::coeff::{CoefficientField, Vec2};
use helix_core::elliptic::green::{green_function_with, ring_gradient_max, GreenMethod};
use helix_core::elliptic::solver::Discretization;
use helix_core::elliptic::Grid;
use helix_core::equilibria::{solve_missing_parameter, Case, HelicalFamily};
use helix_core::kmd::{kmd_diagnostics, kmd_integrate, FilamentEnsemble, KmdOptions};
use helix_core::reduced::{energy_expansion, find_critical, find_critical_multistart, CriticalPoint, ExpansionTerms};
use helix_core::reduced::{Landscape, NewtonOptions};
use helix_core::{Error, Result};

use crate::config::{Command, FamilyEntry, FieldChoice, Format, RunConfig};
use crate::output::Sink;

/// What a command produced; `ok` is false when a check on the numbers failed.
pub struct Outcome {
    pub ok: bool,
    pub summary: String,
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

/// Fills in the parameter left for the compatibility condition.
fn resolve_family(e: &FamilyEntry) -> Result<(HelicalFamily, Option<f64>)> {
    let mut f = e.family();
    let Some(m) = e.solve else { return Ok((f, None)) };
    let v = solve_missing_parameter(&f, m.unknown(), e.guess)?;
    match &mut f.case {
        Case::Asym2 { kappa2, .. } => *kappa2 = v,
        Case::TwoByTwo { lambda2, .. } | Case::TwoByTwoPlusCenter { lambda2, .. } => *lambda2 = v,
        _ => unreachable!("checked during validation"),
    }
    Ok((f, Some(v)))
}

pub fn run(cmd: Command, cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    match cmd {
        Command::Equilibria => equilibria(cfg, sink),
        Command::Simulate => simulate(cfg, sink),
        Command::Landscape => landscape(cfg, sink),
        Command::Green => green(cfg, sink),
        Command::Solve => solve(cfg, sink),
        Command::Energy => energy(cfg, sink),
    }
}

#[derive(Serialize)]
struct EquilibriumRecord {
    case: &'static str,
    number: usize,
    family: HelicalFamily,
    solved_parameter: Option<f64>,
    alpha: f64,
    compat_residual: f64,
    residual: f64,
    positions: Vec<[f64; 2]>,
    kappa: Vec<f64>,
}

#[derive(Serialize)]
struct EquilibriaReport {
    tolerance: f64,
    all_within_tolerance: bool,
    cases: Vec<EquilibriumRecord>,
}

fn equilibria(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let tol = cfg.equilibria.tolerance;
    let mut cases = Vec::new();
    for e in &cfg.equilibria.families {
        let (f, solved) = resolve_family(e)?;
        let c = f.build_configuration()?;
        cases.push(EquilibriumRecord {
            case: f.case.name(),
            number: f.case.number(),
            family: f,
            solved_parameter: solved,
            alpha: c.alpha,
            compat_residual: f.compat_residual(),
            residual: f.equilibrium_residual()?,
            positions: c.positions.iter().map(|z| [z.re, z.im]).collect(),
            kappa: c.kappa,
        });
    }
    let ok = cases.iter().all(|c| c.residual <= tol);
    let worst = cases.iter().map(|c| c.residual).fold(0.0, f64::max);
    let report = EquilibriaReport { tolerance: tol, all_within_tolerance: ok, cases };
    sink.json("equilibria.json", &report).map_err(io)?;
    if cfg.output.formats.contains(&Format::Csv) {
        let rows = report.cases.iter().enumerate().flat_map(|(k, c)| {
            c.positions.iter().zip(&c.kappa).enumerate().map(move |(j, (p, kap))| vec![k as f64, j as f64, p[0], p[1], *kap])
        });
        sink.csv("equilibria.csv", &["family", "vortex", "x1", "x2", "kappa"], rows).map_err(io)?;
    }
    Ok(Outcome { ok, summary: format!("{} families, max residual {worst:.3e}", report.cases.len()) })
}

#[derive(Serialize)]
struct Drift {
    mean: f64,
    second_moment: f64,
    hamiltonian: f64,
}

#[derive(Serialize)]
struct SimulateReport {
    family: HelicalFamily,
    modes: usize,
    dt: f64,
    t_end: f64,
    saved_states: usize,
    collision: Option<String>,
    alpha: f64,
    /// sup over filaments of |X(T) - e^{-iαT} X(0)|, meaningful for unperturbed equilibria
    rotation_error: f64,
    drift: Drift,
    drift_tolerance: f64,
}

fn simulate(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let s = &cfg.simulate;
    let (f, _) = resolve_family(&s.family)?;
    let mut e = f.sample_filaments(s.modes)?;
    if s.perturbation != 0.0 {
        let m = s.modes;
        for x in e.x.iter_mut() {
            for (k, z) in x.iter_mut().enumerate() {
                *z *= 1.0 + s.perturbation * (4.0 * PI * k as f64 / m as f64).cos();
            }
        }
        e = FilamentEnsemble::new(e.kappa.clone(), e.period, e.x.clone())?;
    }
    let opts = KmdOptions { collision_floor: s.collision_floor, save_stride: s.save_stride };
    let traj = kmd_integrate(&e, s.dt, s.t_end, &opts)?;
    let diags = traj.states.iter().map(|st| kmd_diagnostics(st, &opts)).collect::<Result<Vec<_>>>()?;
    let (d0, d1) = (&diags[0], diags.last().unwrap());
    let mass: f64 = e.kappa.iter().map(|k| k.abs()).sum::<f64>() * e.period;
    let drift = Drift {
        mean: (d1.mean - d0.mean).norm() / mass,
        second_moment: (d1.second_moment - d0.second_moment).abs() / d0.second_moment.abs().max(f64::MIN_POSITIVE),
        hamiltonian: (d1.hamiltonian - d0.hamiltonian).abs() / d0.hamiltonian.abs().max(f64::MIN_POSITIVE),
    };
    let t_last = *traj.times.last().unwrap();
    let rot = Complex64::from_polar(1.0, -f.alpha() * t_last);
    let last = traj.states.last().unwrap();
    let rotation_error = last
        .x
        .iter()
        .flatten()
        .zip(e.x.iter().flatten())
        .map(|(a, b)| (a - b * rot).norm())
        .fold(0.0, f64::max);
    let worst = drift.mean.max(drift.second_moment).max(drift.hamiltonian);
    let report = SimulateReport {
        family: f,
        modes: s.modes,
        dt: s.dt,
        t_end: s.t_end,
        saved_states: traj.states.len(),
        collision: traj.collision.as_ref().map(|c| c.to_string()),
        alpha: f.alpha(),
        rotation_error,
        drift,
        drift_tolerance: s.drift_tolerance,
    };
    sink.json("simulate.json", &report).map_err(io)?;
    if cfg.output.formats.contains(&Format::Csv) {
        let rows = traj.times.iter().zip(&traj.states).flat_map(|(t, st)| {
            st.x.iter().enumerate().flat_map(move |(j, x)| {
                x.iter().enumerate().map(move |(m, z)| vec![*t, j as f64, m as f64, z.re, z.im])
            })
        });
        sink.csv("trajectory.csv", &["t", "filament", "node", "x1", "x2"], rows).map_err(io)?;
        let rows = traj.times.iter().zip(&diags).map(|(t, d)| {
            vec![*t, d.mean.re, d.mean.im, d.second_moment, d.hamiltonian, d.min_separation]
        });
        sink.csv("diagnostics.csv", &["t", "mean_x1", "mean_x2", "second_moment", "hamiltonian", "min_separation"], rows)
            .map_err(io)?;
    }
    Ok(Outcome {
        ok: worst <= s.drift_tolerance && traj.collision.is_none(),
        summary: format!("{} saved states, max relative drift {worst:.3e}", traj.states.len()),
    })
}

#[derive(Serialize)]
struct LandscapeReport {
    landscape: Landscape,
    value_at_predicted: f64,
    gradient_at_predicted: Vec<f64>,
    from_predicted: Option<CriticalPoint>,
    multistart: Vec<CriticalPoint>,
    starts: usize,
    max_distance_to_predicted: f64,
}

fn landscape(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let b = &cfg.landscape;
    let (f, _) = resolve_family(&b.family)?;
    let l = Landscape::from_family(&f)?;
    let x0 = l.predicted.clone();
    let (v0, g0) = l.eval(&x0)?;
    let opts = NewtonOptions { tol: b.tol, max_iter: b.max_iter, trust_radius: Some(Landscape::trust_radius(&x0)) };
    let mode = b.mode.mode();
    let from_predicted = find_critical(&l, &x0, mode, &opts).ok();
    let multistart = find_critical_multistart(&l, &x0, mode, &opts, b.starts, b.spread, b.seed);
    let dist = multistart
        .iter()
        .flat_map(|c| c.point.iter().zip(&x0).map(|(a, z)| (a - z).abs()))
        .fold(0.0, f64::max);
    let ok = !multistart.is_empty();
    let report = LandscapeReport {
        landscape: l,
        value_at_predicted: v0,
        gradient_at_predicted: g0,
        from_predicted,
        starts: b.starts,
        max_distance_to_predicted: dist,
        multistart,
    };
    sink.json("landscape.json", &report).map_err(io)?;
    Ok(Outcome {
        ok,
        summary: format!("{}/{} starts converged, max distance to prediction {dist:.3e}", report.multistart.len(), b.starts),
    })
}

#[derive(Serialize)]
struct PoleReport {
    pole: [f64; 2],
    robin: f64,
    cg_iterations: usize,
    probes: Vec<([f64; 2], f64)>,
    /// (radius, max |∇S| on the ring, max |∇(S + F1 + F2)| on the ring)
    rings: Vec<(f64, f64, f64)>,
}

fn green(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let g = &cfg.green;
    let r = cfg.grid.half_width;
    let field = match g.field {
        FieldChoice::Helical => CoefficientField::helical(g.h, r),
        FieldChoice::Identity => CoefficientField::identity(r),
    };
    let grid = Grid::new(r, cfg.grid.n)?;
    let disc = Discretization::new(grid, &field);
    let mut poles = Vec::new();
    for (k, p) in g.poles.iter().enumerate() {
        let y = Vec2::new(p[0], p[1]);
        let res = green_function_with(&disc, &field, y, GreenMethod::SingularSubtraction)?;
        let probes = g
            .probes
            .iter()
            .map(|q| Ok((*q, res.value_at(&field, Vec2::new(q[0], q[1]))?)))
            .collect::<Result<Vec<_>>>()?;
        let rings = g
            .rings
            .iter()
            .map(|rad| Ok((*rad, ring_gradient_max(&res.s, y, *rad, 64)?, ring_gradient_max(&res.smooth, y, *rad, 64)?)))
            .collect::<Result<Vec<_>>>()?;
        if cfg.output.formats.contains(&Format::Binary) {
            res.s.write_binary(&sink.path(&format!("regular_{k}.bin")))?;
        }
        if cfg.output.formats.contains(&Format::Csv) {
            res.s.write_csv(&sink.path(&format!("regular_{k}.csv")))?;
        }
        poles.push(PoleReport { pole: *p, robin: res.robin, cg_iterations: res.stats.iterations, probes, rings });
    }
    sink.json("green.json", &poles).map_err(io)?;
    let robins: Vec<String> = poles.iter().map(|p| format!("{:.6e}", p.robin)).collect();
    Ok(Outcome { ok: true, summary: format!("Robin values {}", robins.join(", ")) })
}

fn solve(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let s = cfg.scenario();
    let (u, report) = solve_clustered(&s, &cfg.solver)?;
    sink.json("report.json", &report).map_err(io)?;
    if cfg.output.formats.contains(&Format::Binary) {
        u.write_binary(&sink.path("u.bin"))?;
    }
    if cfg.output.formats.contains(&Format::Csv) {
        u.write_csv(&sink.path("u.csv"))?;
    }
    if !cfg.lift.samples.is_empty() {
        let r = s.resolve()?;
        let w = lift_vorticity_3d(&u, &r, report.alpha, &cfg.lift.samples, cfg.lift.t)?;
        let rows = cfg.lift.samples.iter().zip(&w).map(|(x, v)| vec![x[0], x[1], x[2], v[0], v[1], v[2]]);
        sink.csv("vorticity.csv", &["x1", "x2", "x3", "w1", "w2", "w3"], rows).map_err(io)?;
    }
    let ok = report.components.len() == report.expected_components;
    Ok(Outcome {
        ok,
        summary: format!(
            "{} of {} components, {} iterations, residual {:.3e}",
            report.components.len(),
            report.expected_components,
            report.iterations,
            report.residual
        ),
    })
}

#[derive(Serialize)]
struct EnergyComparison {
    epsilon: f64,
    centers: Vec<[f64; 2]>,
    qhat: Vec<f64>,
    core_radii: Vec<f64>,
    ansatz: EnergyReport,
    expansion: ExpansionTerms,
    /// (ansatz - expansion) / ε²
    gap_over_eps2: f64,
}

fn energy(cfg: &RunConfig, sink: &mut Sink) -> Result<Outcome> {
    let st = setup(&cfg.scenario())?;
    let ansatz = energy_of_ansatz(&st)?;
    let expansion = energy_expansion(&expansion_inputs(&st))?;
    let eps = cfg.scenario.epsilon;
    let p = &st.ansatz.params;
    let report = EnergyComparison {
        epsilon: eps,
        centers: p.centers.iter().map(|z| [z[0], z[1]]).collect(),
        qhat: p.qhat.clone(),
        core_radii: p.core_radii.clone(),
        gap_over_eps2: (ansatz.total - expansion.total) / (eps * eps),
        ansatz,
        expansion,
    };
    sink.json("energy.json", &report).map_err(io)?;
    Ok(Outcome {
        ok: true,
        summary: format!(
            "ansatz {:.6e}, expansion {:.6e}, gap/eps^2 {:.4}",
            report.ansatz.total, report.expansion.total, report.gap_over_eps2
        ),
    })
}
