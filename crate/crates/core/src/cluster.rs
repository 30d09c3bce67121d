//! The clustered semilinear problem -ε² div(K∇u) = Σ_s (u - q_s|ln ε|)₊^p 1_s
//! on the square, solved from the approximate solution, plus the diagnostics
//! of its vortex support.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, Vec2, WeightProfile};
use crate::elliptic::ansatz::{build_ansatz, solve_qhat, Ansatz, AnsatzParameters, GreenData, QhatOptions};
use crate::elliptic::grid::{Grid, ScalarField};
use crate::elliptic::profile::{solve_profile, ProfileTable};
use crate::elliptic::solver::{gmres_shifted, Discretization};
use crate::equilibria::{Case, HelicalFamily};
use crate::error::{Error, Result};
use crate::par;
use crate::reduced::ExpansionInputs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioKind {
    /// Single species, explicit centers, disks of radius ρ0 around them.
    Generic { centers: Vec<[f64; 2]>, alpha: f64, beta: f64 },
    Polygon { n: usize, kappa: f64, r_star: f64 },
    PolygonPlusCenter { n: usize, kappa: f64, mu: f64, r_star: f64 },
    Asym2 { kappa1: f64, kappa2: f64, lambda1: f64, lambda2: f64 },
    TwoByTwo { kappa: f64, mu: f64, lambda1: f64, lambda2: f64 },
    TwoByTwoPlusCenter { kappa0: f64, kappa: f64, mu: f64, lambda1: f64, lambda2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub half_width: f64,
    pub n: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { half_width: 1.0, n: 513 }
    }
}

fn default_h() -> f64 {
    1.0
}

fn default_p() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub grid: GridSpec,
    /// Mask radius in scaled units; defaults to 0.3 times the scaled separation.
    #[serde(default)]
    pub rho0: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub enum Mask {
    Annulus { inner: f64, outer: f64 },
    Disks(Vec<(Vec2, f64)>),
}

impl Mask {
    pub fn contains(&self, x: Vec2) -> bool {
        match self {
            Mask::Annulus { inner, outer } => {
                let r = x.norm();
                r > *inner && r < *outer
            }
            Mask::Disks(d) => d.iter().any(|(c, r)| (x - c).norm() < *r),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Species {
    pub weight: WeightProfile,
    pub mask: Mask,
    /// Target circulation κ of each filament of this species.
    pub kappa: f64,
}

/// Everything the solvers need, derived from a scenario.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub scenario: Scenario,
    pub field: CoefficientField,
    pub grid: Grid,
    pub species: Vec<Species>,
    /// Predicted centers z̃_j / √|ln ε|.
    pub centers: Vec<Vec2>,
    pub center_species: Vec<usize>,
    /// Reflection x2 → -x2 maps the problem to itself.
    pub reflection_symmetric: bool,
}

fn min_separation(z: &[Vec2]) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            m = m.min((z[i] - z[j]).norm());
        }
    }
    m
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Validation(format!("epsilon must lie in (0, 0.5), got {}", self.epsilon)));
        }
        if !(self.p > 1.0 && self.p <= 6.0) {
            return Err(Error::Validation(format!("p must lie in (1, 6], got {}", self.p)));
        }
        if !(self.h > 0.0) {
            return Err(Error::Validation(format!("pitch h must be positive, got {}", self.h)));
        }
        if self.grid.n < 17 || !(self.grid.half_width > 0.0) {
            return Err(Error::Validation("grid needs n >= 17 and a positive half width".into()));
        }
        if let Some(r) = self.rho0 {
            if !(r > 0.0) {
                return Err(Error::Validation(format!("rho0 must be positive, got {r}")));
            }
        }
        Ok(())
    }

    fn family(&self) -> Option<HelicalFamily> {
        let case = match self.kind {
            ScenarioKind::Generic { .. } => return None,
            ScenarioKind::Polygon { n, kappa, r_star } => Case::Polygon { n, kappa, r: r_star },
            ScenarioKind::PolygonPlusCenter { n, kappa, mu, r_star } => Case::PolygonPlusCenter { n, kappa, mu, r: r_star },
            ScenarioKind::Asym2 { kappa1, kappa2, lambda1, lambda2 } => Case::Asym2 { kappa1, kappa2, lambda1, lambda2 },
            ScenarioKind::TwoByTwo { kappa, mu, lambda1, lambda2 } => Case::TwoByTwo { kappa, mu, lambda1, lambda2 },
            ScenarioKind::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 } => {
                Case::TwoByTwoPlusCenter { kappa0, kappa, mu, lambda1, lambda2 }
            }
        };
        Some(HelicalFamily::new(case, self.h))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.validate()?;
        let field = CoefficientField::helical(self.h, self.grid.half_width);
        let grid = Grid::new(self.grid.half_width, self.grid.n)?;
        let sl = (-self.epsilon.ln()).sqrt();
        let disks = |zs: &[Vec2], r: f64| Mask::Disks(zs.iter().map(|z| (*z, r)).collect());
        let (species, centers, center_species, symmetric) = match &self.kind {
            ScenarioKind::Generic { centers, alpha, beta } => {
                if centers.is_empty() {
                    return Err(Error::Validation("generic scenario needs at least one center".into()));
                }
                let z: Vec<Vec2> = centers.iter().map(|c| Vec2::new(c[0], c[1])).collect();
                let rho = self.rho0.unwrap_or(if z.len() > 1 { 0.3 * min_separation(&z) } else { 0.3 });
                let sp = Species { weight: WeightProfile::new(*alpha, *beta), mask: disks(&z, rho), kappa: 2.0 * PI * beta };
                let n = z.len();
                (vec![sp], z, vec![0; n], false)
            }
            _ => {
                let fam = self.family().unwrap();
                let cfg = fam.build_configuration().map_err(|e| match e {
                    Error::Compatibility { .. } => e,
                    other => Error::Validation(other.to_string()),
                })?;
                let scaled: Vec<Vec2> = cfg.positions.iter().map(|z| Vec2::new(z.re, z.im)).collect();
                let rho = self.rho0.unwrap_or(0.3 * min_separation(&scaled)) / sl;
                let z: Vec<Vec2> = scaled.iter().map(|v| v / sl).collect();
                let alpha = cfg.alpha;
                let sp = |kappa: f64, mask: Mask| Species { weight: WeightProfile::new(alpha, kappa / (2.0 * PI)), mask, kappa };
                let ring = |r: f64| Mask::Annulus { inner: r / sl - rho, outer: r / sl + rho };
                match self.kind {
                    ScenarioKind::Polygon { n, kappa, r_star } => (vec![sp(kappa, ring(r_star))], z, vec![0; n], true),
                    ScenarioKind::PolygonPlusCenter { n, kappa, mu, r_star } => {
                        let mut cs = vec![0; n];
                        cs.push(1);
                        (vec![sp(kappa, ring(r_star)), sp(mu, disks(&[Vec2::zeros()], rho))], z, cs, true)
                    }
                    ScenarioKind::Asym2 { kappa1, kappa2, .. } => {
                        (vec![sp(kappa1, disks(&z[..1], rho)), sp(kappa2, disks(&z[1..], rho))], z, vec![0, 1], true)
                    }
                    ScenarioKind::TwoByTwo { kappa, mu, .. } => (
                        vec![sp(kappa, disks(&[z[0], z[2]], rho)), sp(mu, disks(&[z[1], z[3]], rho))],
                        z,
                        vec![0, 1, 0, 1],
                        true,
                    ),
                    ScenarioKind::TwoByTwoPlusCenter { kappa0, kappa, mu, .. } => (
                        vec![
                            sp(kappa, disks(&[z[0], z[2]], rho)),
                            sp(mu, disks(&[z[1], z[3]], rho)),
                            sp(kappa0, disks(&[z[4]], rho)),
                        ],
                        z,
                        vec![0, 1, 0, 1, 2],
                        true,
                    ),
                    ScenarioKind::Generic { .. } => unreachable!(),
                }
            }
        };
        for z in &centers {
            if !grid.contains(*z * 1.05) {
                return Err(Error::Placement(format!("predicted center ({}, {}) outside the grid", z[0], z[1])));
            }
        }
        Ok(Resolved { scenario: self.clone(), field, grid, species, centers, center_species, reflection_symmetric: symmetric })
    }
}

impl Resolved {
    pub fn epsilon(&self) -> f64 {
        self.scenario.epsilon
    }

    pub fn weights(&self) -> Vec<WeightProfile> {
        self.center_species.iter().map(|s| self.species[*s].weight).collect()
    }

    /// Σ_s (u - q_s|ln ε|)₊^p 1_s at a point.
    pub fn source(&self, u: f64, x: Vec2) -> f64 {
        let le = -self.epsilon().ln();
        let p = self.scenario.p;
        self.species
            .iter()
            .filter(|s| s.mask.contains(x))
            .map(|s| (u - s.weight.q(x) * le).max(0.0).powf(p))
            .sum()
    }
}

/// Node-wise active sets: (node, species, threshold q_s(x)|ln ε|).
struct Forcing {
    nodes: Vec<(usize, usize, f64)>,
    p: f64,
    scale: f64,
}

impl Forcing {
    fn new(r: &Resolved) -> Self {
        let g = r.grid;
        let le = -r.epsilon().ln();
        let mut nodes = Vec::new();
        for j in 1..g.n - 1 {
            for i in 1..g.n - 1 {
                let x = g.point(i, j);
                for (si, s) in r.species.iter().enumerate() {
                    if s.mask.contains(x) {
                        nodes.push((g.idx(i, j), si, s.weight.q(x) * le));
                    }
                }
            }
        }
        let h = g.spacing();
        Self { nodes, p: r.scenario.p, scale: h * h / (r.epsilon() * r.epsilon()) }
    }

    /// h² ε^{-2} N(u), the stiffness-scaled load.
    fn load(&self, u: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; u.len()];
        for (k, _, c) in &self.nodes {
            let e = u[*k] - c;
            if e > 0.0 {
                b[*k] += self.scale * e.powf(self.p);
            }
        }
        b
    }

    fn shift(&self, u: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; u.len()];
        for (k, _, c) in &self.nodes {
            let e = u[*k] - c;
            if e > 0.0 {
                s[*k] += self.scale * self.p * e.powf(self.p - 1.0);
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Damped Newton with GMRES inner solves, with the weak translation
    /// modes pinned and the centers located by an outer secant search.
    Newton,
    /// u ← θ A⁻¹[ε⁻² N(u)] + (1 - θ) u.
    Picard,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterOptions {
    pub method: Method,
    /// Picard relaxation θ.
    pub damping: f64,
    /// Stop when ‖Δu‖/‖u‖ falls below this.
    pub tol: f64,
    /// Cap on nonlinear iterations, summed over all inner solves.
    pub max_iter: usize,
    pub linear_rtol: f64,
    /// Outer search stops once the pinning force is below this fraction of ‖A u‖.
    pub pin_tol: f64,
    pub max_outer: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self { method: Method::Newton, damping: 0.6, tol: 1e-8, max_iter: 300, linear_rtol: 1e-9, pin_tol: 1e-7, max_outer: 12 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Component {
    pub species: usize,
    pub cells: usize,
    pub centroid: [f64; 2],
    pub diameter: f64,
    pub circulation: f64,
    /// Circulation target κ of the species.
    pub target: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusterReport {
    pub components: Vec<Component>,
    pub expected_components: usize,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub relative_update: f64,
    pub residual: f64,
    /// Centers of the ansatz the solution was pinned to.
    pub pinned_centers: Vec<[f64; 2]>,
    /// Rotation rate α of the solution, after any finite-ε correction.
    pub alpha: f64,
    pub energy: Option<f64>,
    /// sup |u - (ΣV + ΣH)| against the ansatz at the predicted centers.
    pub ansatz_deviation: Option<f64>,
}

/// Profile, q̂ and ansatz at the predicted centers.
pub struct Setup {
    pub resolved: Resolved,
    pub table: ProfileTable,
    pub disc: Discretization,
    pub green: GreenData,
    pub ansatz: Ansatz,
}

pub fn setup(s: &Scenario) -> Result<Setup> {
    setup_at(s, None)
}

/// As [`setup`], with the centers overridden.
pub fn setup_at(s: &Scenario, centers: Option<&[Vec2]>) -> Result<Setup> {
    let mut resolved = s.resolve()?;
    if let Some(c) = centers {
        if c.len() != resolved.centers.len() {
            return Err(Error::Validation("center override has the wrong length".into()));
        }
        resolved.centers = c.to_vec();
    }
    let table = solve_profile(s.p)?;
    let disc = Discretization::new(resolved.grid, &resolved.field);
    let (green, ansatz) = ansatz_at(&resolved, &table, &disc, &resolved.centers)?;
    Ok(Setup { resolved, table, disc, green, ansatz })
}

fn ansatz_at(r: &Resolved, table: &ProfileTable, disc: &Discretization, centers: &[Vec2]) -> Result<(GreenData, Ansatz)> {
    let green = GreenData::compute(disc, &r.field, centers)?;
    let weights = r.weights();
    let q = solve_qhat(&r.field, &weights, table, centers, r.epsilon(), &green, &QhatOptions::default())?;
    let params = AnsatzParameters { epsilon: r.epsilon(), centers: centers.to_vec(), qhat: q.qhat, core_radii: q.core_radii };
    let ansatz = build_ansatz(&r.field, &weights, table, &params, disc, Some(&green))?;
    Ok((green, ansatz))
}

pub fn solve_clustered(s: &Scenario, opts: &ClusterOptions) -> Result<(ScalarField, ClusterReport)> {
    let st = setup(s)?;
    let u0 = st.ansatz.u_total();
    let (u, mut report, r) = match opts.method {
        Method::Picard => {
            let (u, rep) = solve_from(&st.resolved, &st.disc, u0.clone(), opts)?;
            (u, rep, st.resolved.clone())
        }
        Method::Newton => solve_located(&st, opts)?,
    };
    report.ansatz_deviation = Some(u.values.iter().zip(&u0.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    report.energy = Some(energy_discrete(&r, &st.disc, &u));
    Ok((u, report))
}

fn mirror(g: &Grid, v: &mut [f64]) {
    let n = g.n;
    for j in 0..n / 2 {
        for i in 0..n {
            let (a, b) = (j * n + i, (n - 1 - j) * n + i);
            let m = 0.5 * (v[a] + v[b]);
            v[a] = m;
            v[b] = m;
        }
    }
}

fn zero_boundary(g: &Grid, v: &mut [f64]) {
    for j in 0..g.n {
        for i in 0..g.n {
            if g.is_boundary(i, j) {
                v[g.idx(i, j)] = 0.0;
            }
        }
    }
}

/// A u - h²ε⁻² N(u) - Σ λ_k m_k, and ‖A u‖.
fn residual(disc: &Discretization, f: &Forcing, u: &[f64], pins: &[Vec<f64>], lambda: &[f64]) -> (Vec<f64>, f64) {
    let mut au = vec![0.0; u.len()];
    disc.op.apply(u, &mut au);
    let b = f.load(u);
    let mut r: Vec<f64> = au.iter().zip(&b).map(|(a, c)| a - c).collect();
    for (m, l) in pins.iter().zip(lambda) {
        par::axpy(-l, m, &mut r);
    }
    (r, par::norm(&au).max(f64::MIN_POSITIVE))
}

struct Inner {
    lambda: Vec<f64>,
    update: f64,
    residual: f64,
}

/// Damped Newton for A u = h²ε⁻² N(u) + Σ λ_k m_k subject to ⟨m_k, u⟩ = t_k,
/// by bordering. With no pins this is plain Newton.
fn pinned_newton(
    r: &Resolved,
    disc: &Discretization,
    f: &Forcing,
    u: &mut Vec<f64>,
    pins: &[Vec<f64>],
    targets: &[f64],
    opts: &ClusterOptions,
    budget: &mut usize,
) -> Result<Inner> {
    let g = r.grid;
    let k = pins.len();
    let mut lambda = vec![0.0; k];
    let (mut res, scale) = residual(disc, f, u, pins, &lambda);
    let mut rel = par::norm(&res) / scale;
    loop {
        if *budget == 0 {
            return Err(Error::Convergence { iterations: opts.max_iter, residual: rel });
        }
        *budget -= 1;
        let shift = f.shift(u);
        let solve = |rhs: &[f64]| -> Vec<f64> {
            let mut x = vec![0.0; rhs.len()];
            // an inexact solve still gives a usable step, so a stall is not fatal
            let _ = gmres_shifted(&disc.op, &shift, &disc.mg, rhs, &mut x, opts.linear_rtol, 60, 600);
            if r.reflection_symmetric {
                mirror(&g, &mut x);
            }
            x
        };
        let neg: Vec<f64> = res.iter().map(|v| -v).collect();
        let mut du = solve(&neg);
        let mut dl = vec![0.0; k];
        if k > 0 {
            let bs: Vec<Vec<f64>> = pins.iter().map(|m| solve(m)).collect();
            let mut mat = nalgebra::DMatrix::zeros(k, k);
            let mut rhs = nalgebra::DVector::zeros(k);
            for a in 0..k {
                for b in 0..k {
                    mat[(a, b)] = par::dot(&pins[a], &bs[b]);
                }
                rhs[a] = targets[a] - par::dot(&pins[a], u) - par::dot(&pins[a], &du);
            }
            let sol = mat
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Solver("singular bordered system".into()))?;
            for b in 0..k {
                dl[b] = sol[b];
                par::axpy(sol[b], &bs[b], &mut du);
            }
        }
        let mut step = 1.0;
        let (next, next_l, next_res, next_rel) = loop {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + step * d).collect();
            let tl: Vec<f64> = lambda.iter().zip(&dl).map(|(a, d)| a + step * d).collect();
            let (tr, ts) = residual(disc, f, &trial, pins, &tl);
            let trel = par::norm(&tr) / ts;
            if trel < rel || step < 1.0 / 64.0 {
                break (trial, tl, tr, trel);
            }
            step *= 0.5;
        };
        let nn = par::norm(&next);
        let update = step * par::norm(&du) / nn.max(f64::MIN_POSITIVE);
        if !update.is_finite() {
            return Err(Error::Convergence { iterations: opts.max_iter - *budget, residual: rel });
        }
        *u = next;
        lambda = next_l;
        res = next_res;
        rel = next_rel;
        if update <= opts.tol {
            return Ok(Inner { lambda, update, residual: rel });
        }
    }
}

/// Orthonormal center displacements compatible with the reflection symmetry.
fn displacement_basis(r: &Resolved) -> Vec<Vec<f64>> {
    let z = &r.centers;
    let n = z.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        for e in 0..2 {
            let mut d = vec![0.0; 2 * n];
            d[2 * i + e] += 1.0;
            if r.reflection_symmetric {
                let target = Vec2::new(z[i][0], -z[i][1]);
                let j = (0..n)
                    .min_by(|a, b| (z[*a] - target).norm().total_cmp(&(z[*b] - target).norm()))
                    .unwrap();
                d[2 * j + e] += if e == 0 { 1.0 } else { -1.0 };
            }
            for b in &basis {
                let c: f64 = d.iter().zip(b).map(|(x, y)| x * y).sum();
                d.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let nrm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-8 {
                basis.push(d.iter().map(|x| x / nrm).collect());
            }
        }
    }
    basis
}

/// Translation modes Σ_i D_i·∇u_a restricted to ρ_i < 2 s_i, unit norm.
fn translation_modes(r: &Resolved, a: &Ansatz, basis: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let g = r.grid;
    let n = g.n;
    let h = g.spacing();
    let u = a.u_total().values;
    basis
        .iter()
        .map(|d| {
            let mut m = vec![0.0; g.len()];
            for j in 1..n - 1 {
                for i in 1..n - 1 {
                    let x = g.point(i, j);
                    let k = g.idx(i, j);
                    let grad = Vec2::new(u[k + 1] - u[k - 1], u[k + n] - u[k - n]) / (2.0 * h);
                    for (c, b) in a.bubbles.iter().enumerate() {
                        if b.rho(x) < 2.0 * b.s {
                            m[k] += d[2 * c] * grad[0] + d[2 * c + 1] * grad[1];
                        }
                    }
                }
            }
            if r.reflection_symmetric {
                mirror(&g, &mut m);
            }
            let nrm = par::norm(&m).max(f64::MIN_POSITIVE);
            m.iter_mut().for_each(|v| *v /= nrm);
            m
        })
        .collect()
}

/// Copy of the scenario with α shifted in every species.
fn with_alpha_shift(r: &Resolved, shift: f64) -> Resolved {
    let mut out = r.clone();
    for s in &mut out.species {
        s.weight = WeightProfile::new(s.weight.alpha + shift, s.weight.beta);
    }
    out
}

/// Newton with the free parameters found by a quasi-Newton search on the
/// pinning force. For trial parameters the translation modes of the ansatz
/// are held fixed and the multipliers λ measure the residual force, which
/// vanishes at a true solution. The collective dilation of the centers is
/// traded for a shift of α: at moderate ε the asymptotic α leaves a finite
/// radial force at every radius, while a corrected rotation rate balances
/// it at the predicted centers. A final unpinned Newton pass polishes.
fn solve_located(st: &Setup, opts: &ClusterOptions) -> Result<(ScalarField, ClusterReport, Resolved)> {
    let base = &st.resolved;
    let g = base.grid;
    let raw = displacement_basis(base);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let dil: Vec<f64> = base.centers.iter().flat_map(|z| [z[0], z[1]]).collect();
    let mut proj = vec![0.0; dil.len()];
    for b in &raw {
        let c = dot(&dil, b);
        proj.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
    }
    let pn = dot(&proj, &proj).sqrt();
    let use_alpha = pn > 1e-8;
    let basis: Vec<Vec<f64>> = if use_alpha {
        let first: Vec<f64> = proj.iter().map(|x| x / pn).collect();
        let mut kept: Vec<Vec<f64>> = vec![first];
        for b in &raw {
            let mut d = b.clone();
            for e in &kept {
                let c = dot(&d, e);
                d.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
            }
            let nrm = dot(&d, &d).sqrt();
            if nrm > 1e-8 {
                kept.push(d.iter().map(|x| x / nrm).collect());
            }
        }
        kept.remove(0);
        kept
    } else {
        raw.clone()
    };
    let k = raw.len();
    let off = usize::from(use_alpha);
    let smin = st.ansatz.bubbles.iter().map(|b| b.s).fold(f64::INFINITY, f64::min);
    let mut budget = opts.max_iter;
    let centers_of = |x: &[f64]| -> Vec<Vec2> {
        base.centers
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let mut c = *z;
                for (b, dk) in basis.iter().zip(&x[off..]) {
                    c += Vec2::new(b[2 * i], b[2 * i + 1]) * *dk;
                }
                c
            })
            .collect()
    };
    let shifted = |x: &[f64]| -> Resolved {
        let mut r = with_alpha_shift(base, if use_alpha { x[0] } else { 0.0 });
        r.centers = centers_of(x);
        r
    };
    let eval = |x: &[f64], u: &mut Vec<f64>, budget: &mut usize| -> Result<(Vec<f64>, f64)> {
        let r = shifted(x);
        let f = Forcing::new(&r);
        let (_, a) = ansatz_at(&r, &st.table, &st.disc, &r.centers)?;
        let pins = translation_modes(&r, &a, &raw);
        let ua = a.u_total().values;
        let targets: Vec<f64> = pins.iter().map(|m| par::dot(m, &ua)).collect();
        *u = ua;
        zero_boundary(&g, u);
        let inner = pinned_newton(&r, &st.disc, &f, u, &pins, &targets, opts, budget)?;
        let mut au = vec![0.0; u.len()];
        st.disc.op.apply(u, &mut au);
        let force = inner.lambda.iter().map(|l| l * l).sum::<f64>().sqrt() / par::norm(&au);
        Ok((inner.lambda, force))
    };
    let mut x = vec![0.0; k];
    let mut outer = 0;
    let mut u = st.ansatz.u_total().values;
    zero_boundary(&g, &mut u);
    if k > 0 {
        let (mut lam, mut force) = eval(&x, &mut u, &mut budget)?;
        let mut jac: Option<nalgebra::DMatrix<f64>> = None;
        while force > opts.pin_tol && outer < opts.max_outer {
            outer += 1;
            let jm = match jac.take() {
                Some(j) => j,
                None => {
                    let mut j = nalgebra::DMatrix::zeros(k, k);
                    for c in 0..k {
                        let delta = if c < off { 0.05 } else { 0.25 * smin };
                        let mut xc = x.clone();
                        xc[c] += delta;
                        let mut uc = Vec::new();
                        let (lc, _) = eval(&xc, &mut uc, &mut budget)?;
                        for row in 0..k {
                            j[(row, c)] = (lc[row] - lam[row]) / delta;
                        }
                    }
                    j
                }
            };
            let rhs = nalgebra::DVector::from_iterator(k, lam.iter().map(|v| -v));
            let mut step = jm
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Solver("singular parameter Jacobian".into()))?;
            let len = step.rows(off, k - off).norm();
            if len > 4.0 * smin {
                step.rows_mut(off, k - off).scale_mut(4.0 * smin / len);
            }
            if use_alpha && step[0].abs() > 1.0 {
                step[0] = step[0].signum();
            }
            let next: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let (nl, nf) = eval(&next, &mut u, &mut budget)?;
            // Broyden update for the next step
            let dl = nalgebra::DVector::from_iterator(k, nl.iter().zip(&lam).map(|(a, b)| a - b));
            let corr = (dl - &jm * &step) * step.transpose() / step.norm_squared();
            jac = Some(jm + corr);
            x = next;
            lam = nl;
            force = nf;
        }
    }
    let r = shifted(&x);
    let f = Forcing::new(&r);
    let inner = pinned_newton(&r, &st.disc, &f, &mut u, &[], &[], opts, &mut budget)?;
    let used = opts.max_iter - budget;
    let field = ScalarField { grid: g, values: u, label: "u".into() };
    let mut report = cluster_diagnostics(&field, &r)?;
    report.iterations = used;
    report.outer_iterations = outer;
    report.relative_update = inner.update;
    report.residual = inner.residual;
    report.pinned_centers = r.centers.iter().map(|c| [c[0], c[1]]).collect();
    report.alpha = scenario_alpha(&r);
    if report.components.len() != report.expected_components {
        return Err(Error::Convergence { iterations: used, residual: inner.residual });
    }
    Ok((field, report, r))
}

/// Unpinned iteration from `u0` (boundary values are reset to zero).
pub fn solve_from(r: &Resolved, disc: &Discretization, u0: ScalarField, opts: &ClusterOptions) -> Result<(ScalarField, ClusterReport)> {
    let g = r.grid;
    let f = Forcing::new(r);
    let mut u = u0.values;
    zero_boundary(&g, &mut u);
    if r.reflection_symmetric {
        mirror(&g, &mut u);
    }
    let (it, update, rel) = match opts.method {
        Method::Newton => {
            let mut budget = opts.max_iter;
            let inner = pinned_newton(r, disc, &f, &mut u, &[], &[], opts, &mut budget)?;
            (opts.max_iter - budget, inner.update, inner.residual)
        }
        Method::Picard => {
            let (_, scale) = residual(disc, &f, &u, &[], &[]);
            let mut rel = par::norm(&residual(disc, &f, &u, &[], &[]).0) / scale;
            let mut theta = opts.damping;
            let mut update = f64::INFINITY;
            let mut it = 0;
            while it < opts.max_iter && update > opts.tol {
                it += 1;
                let b = f.load(&u);
                let mut w = vec![0.0; u.len()];
                disc.solve(&b, &mut w)?;
                let mut next: Vec<f64> = u.iter().zip(&w).map(|(a, b)| theta * b + (1.0 - theta) * a).collect();
                if r.reflection_symmetric {
                    mirror(&g, &mut next);
                }
                let diff: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
                let nn = par::norm(&next);
                update = if nn > 0.0 { par::norm(&diff) / nn } else { par::norm(&diff) };
                if !update.is_finite() {
                    return Err(Error::Convergence { iterations: it, residual: rel });
                }
                let (nr, ns) = residual(disc, &f, &next, &[], &[]);
                let nrel = par::norm(&nr) / ns;
                if nrel > rel {
                    theta = (0.5 * theta).max(1e-3);
                }
                u = next;
                rel = nrel;
            }
            if update > opts.tol {
                return Err(Error::Convergence { iterations: it, residual: rel });
            }
            (it, update, rel)
        }
    };
    let field = ScalarField { grid: g, values: u, label: "u".into() };
    let mut report = cluster_diagnostics(&field, r)?;
    report.iterations = it;
    report.relative_update = update;
    report.residual = rel;
    if report.components.len() != report.expected_components {
        return Err(Error::Convergence { iterations: it, residual: rel });
    }
    Ok((field, report))
}

/// Components of {u > q_s|ln ε|} within each species mask, by 4-neighbour
/// flood fill.
pub fn cluster_diagnostics(u: &ScalarField, r: &Resolved) -> Result<ClusterReport> {
    let g = u.grid;
    if g != r.grid {
        return Err(Error::Validation("field grid differs from the scenario grid".into()));
    }
    let n = g.n;
    let le = -r.epsilon().ln();
    let p = r.scenario.p;
    let h = g.spacing();
    let eps2 = r.epsilon() * r.epsilon();
    let mut components = Vec::new();
    for (si, s) in r.species.iter().enumerate() {
        let excess = |k: usize| {
            let x = g.point(k % n, k / n);
            if s.mask.contains(x) {
                u.values[k] - s.weight.q(x) * le
            } else {
                0.0
            }
        };
        let mut seen = vec![false; g.len()];
        for start in 0..g.len() {
            if seen[start] || excess(start) <= 0.0 {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut cells = Vec::new();
            while let Some(k) = stack.pop() {
                cells.push(k);
                let (i, j) = (k % n, k / n);
                let mut nb = Vec::with_capacity(4);
                if i > 0 {
                    nb.push(k - 1);
                }
                if i + 1 < n {
                    nb.push(k + 1);
                }
                if j > 0 {
                    nb.push(k - n);
                }
                if j + 1 < n {
                    nb.push(k + n);
                }
                for m in nb {
                    if !seen[m] && excess(m) > 0.0 {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
            let mut mass = 0.0;
            let mut c = Vec2::zeros();
            for k in &cells {
                let w = excess(*k).powf(p);
                mass += w;
                c += g.point(k % n, k / n) * w;
            }
            let centroid = if mass > 0.0 { c / mass } else { g.point(start % n, start / n) };
            let mut diameter: f64 = 0.0;
            for (a, ka) in cells.iter().enumerate() {
                let xa = g.point(ka % n, ka / n);
                for kb in &cells[a + 1..] {
                    diameter = diameter.max((xa - g.point(kb % n, kb / n)).norm());
                }
            }
            components.push(Component {
                species: si,
                cells: cells.len(),
                centroid: [centroid[0], centroid[1]],
                diameter,
                circulation: mass * h * h / eps2,
                target: s.kappa,
            });
        }
    }
    Ok(ClusterReport {
        components,
        expected_components: r.centers.len(),
        iterations: 0,
        outer_iterations: 0,
        relative_update: 0.0,
        residual: 0.0,
        pinned_centers: r.centers.iter().map(|c| [c[0], c[1]]).collect(),
        alpha: scenario_alpha(r),
        energy: None,
        ansatz_deviation: None,
    })
}

/// I_ε(u) = (ε²/2) uᵀA u - (1/(p+1)) Σ h² (u - q_s|ln ε|)₊^{p+1} 1_s on the grid.
pub fn energy_discrete(r: &Resolved, disc: &Discretization, u: &ScalarField) -> f64 {
    let f = Forcing::new(r);
    let eps2 = r.epsilon() * r.epsilon();
    let h = r.grid.spacing();
    let mut nl = 0.0;
    for (k, _, c) in &f.nodes {
        let e = u.values[*k] - c;
        if e > 0.0 {
            nl += e.powf(f.p + 1.0);
        }
    }
    0.5 * eps2 * disc.op.energy(&u.values) - h * h * nl / (f.p + 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    /// ∫ K∇u·∇u via ∫ K∇u·∇u = ε⁻² Σ_j ∫ u (V_j - q̂_j|ln ε|)₊^p
    pub dirichlet: f64,
    /// uᵀA u on the grid, for comparison
    pub dirichlet_discrete: f64,
    pub nonlinear: f64,
    pub total: f64,
    /// The same energy in closed form from q̂_j, s_j, the Robin values and
    /// G_K(z_i, z_j), before q̂ and ln s are expanded in ε.
    pub closed_form: f64,
}

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss(m: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out
}

/// ∫ f over the T-ellipse of radius `rad` about a bubble center, by polar
/// Gauss quadrature in panels.
fn core_integral(b: &crate::elliptic::ansatz::Bubble, rad: f64, panels: usize, f: &dyn Fn(Vec2) -> f64) -> f64 {
    let gl = gauss(8);
    let angles = 96;
    let t_inv = b.t.try_inverse().unwrap();
    let mut sum = 0.0;
    for pnl in 0..panels {
        let (r0, r1) = (rad * pnl as f64 / panels as f64, rad * (pnl + 1) as f64 / panels as f64);
        for (x, w) in &gl {
            let rho = r0 + (r1 - r0) * x;
            let mut ring = 0.0;
            for a in 0..angles {
                let th = 2.0 * PI * (a as f64 + 0.5) / angles as f64;
                let wv = Vec2::new(rho * th.cos(), rho * th.sin());
                ring += f(b.center + t_inv * wv);
            }
            sum += w * (r1 - r0) * rho * ring * 2.0 * PI / angles as f64;
        }
    }
    sum * b.sqrt_det
}

/// I_ε(ΣV + ΣH) with the Dirichlet part from the core identity and the
/// nonlinear part by polar quadrature around each core.
pub fn energy_of_ansatz(st: &Setup) -> Result<EnergyReport> {
    let r = &st.resolved;
    let a = &st.ansatz;
    let t = &st.table;
    let eps = r.epsilon();
    let p = t.p;
    let u_at = |x: Vec2| a.eval(t, x).unwrap_or(0.0);
    let mut dirichlet = 0.0;
    let mut nonlinear = 0.0;
    for b in &a.bubbles {
        dirichlet += core_integral(b, b.s, 48, &|x| u_at(x) * b.source(t, x)) / (eps * eps);
        let reach = 1.5 * b.s;
        nonlinear += core_integral(b, reach, 96, &|x| {
            // attribute each point to its nearest core so overlaps are not double counted
            let own = a.bubbles.iter().map(|c| c.rho(x) / c.s).fold(f64::INFINITY, f64::min);
            if own < b.rho(x) / b.s {
                return 0.0;
            }
            r.source(u_at(x), x).powf((p + 1.0) / p)
        });
    }
    let u = a.u_total();
    let dirichlet_discrete = st.disc.op.energy(&u.values);
    let total = 0.5 * eps * eps * dirichlet - nonlinear / (p + 1.0);
    Ok(EnergyReport { dirichlet, dirichlet_discrete, nonlinear, total, closed_form: closed_form_energy(st) })
}

fn closed_form_energy(st: &Setup) -> f64 {
    let b = &st.ansatz.bubbles;
    let n = b.len();
    let eps = st.resolved.epsilon();
    let l2 = eps.ln().powi(2);
    let p = st.table.p;
    let mut e = 0.0;
    for j in 0..n {
        let ls = -b[j].s.ln();
        let w = PI * l2 * b[j].qhat.powi(2) * b[j].sqrt_det;
        e += w / ls + (p - 1.0) * w / (4.0 * ls * ls);
        e += 2.0 * PI * PI * st.green.robin[j] * l2 * (b[j].qhat * b[j].sqrt_det / ls).powi(2);
        for i in (0..n).filter(|i| *i != j) {
            let li = -b[i].s.ln();
            e += 2.0 * PI * PI * st.green.green[i * n + j] * l2 * b[i].qhat * b[j].qhat * b[i].sqrt_det * b[j].sqrt_det
                / (li * ls);
        }
    }
    e * eps * eps
}

/// Inputs of the reduced energy expansion at the setup's centers.
pub fn expansion_inputs(st: &Setup) -> ExpansionInputs {
    let r = &st.resolved;
    let q = r
        .centers
        .iter()
        .zip(&r.center_species)
        .map(|(z, s)| r.species[*s].weight.q(*z))
        .collect();
    ExpansionInputs {
        epsilon: r.epsilon(),
        q,
        sqrt_det: r.centers.iter().map(|z| r.field.sqrt_det(*z)).collect(),
        robin: st.green.robin.clone(),
        green: st.green.green.clone(),
        p: r.scenario.p,
    }
}

/// Helical vorticity vector (w/h)(x2, -x1, h) with
/// w = ε⁻² Σ_s (u(R̄_θ x) - q_s|ln ε|)₊^p 1_s, θ = -x3/h - α|ln ε| t and R̄ the
/// clockwise rotation. The x3 sign makes w constant along (x2, -x1, h), so the
/// lifted field is divergence free.
pub fn lift_vorticity_3d(u: &ScalarField, r: &Resolved, alpha: f64, samples: &[[f64; 3]], t: f64) -> Result<Vec<[f64; 3]>> {
    let h = r.scenario.h;
    let eps = r.epsilon();
    let le = -eps.ln();
    samples
        .iter()
        .map(|s| {
            let th = -s[2] / h - alpha * le * t;
            let (c, sn) = (th.cos(), th.sin());
            let y = Vec2::new(c * s[0] + sn * s[1], -sn * s[0] + c * s[1]);
            if !u.grid.contains(y) {
                return Err(Error::Domain(format!("sample ({}, {}) projects outside the grid", s[0], s[1])));
            }
            let w = r.source(u.interpolate(y)?, y) / (eps * eps);
            Ok([w / h * s[1], -w / h * s[0], w])
        })
        .collect()
}

/// Rotation rate α of the first species.
pub fn scenario_alpha(r: &Resolved) -> f64 {
    r.species[0].weight.alpha
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn pair_weights_and_masks() {
        let r = pair(0.02, 129).resolve().unwrap();
        let w = r.species[0].weight;
        assert!(w.alpha.abs() < 1e-15);
        assert!((w.beta - 1.0).abs() < 1e-15);
        let a = 1.0 / (-(0.02f64).ln()).sqrt();
        assert!((r.centers[0] - Vec2::new(a, 0.0)).norm() < 1e-14);
        assert!(r.species[0].mask.contains(Vec2::new(0.0, a)));
        assert!(!r.species[0].mask.contains(Vec2::zeros()));
    }

    #[test]
    fn gauss_rule_exact_for_polynomials() {
        let g = gauss(8);
        let s: f64 = g.iter().map(|(x, w)| w * x.powi(15)).sum();
        assert!((s - 1.0 / 16.0).abs() < 1e-14, "{s}");
    }

    #[test]
    fn zero_forcing_has_zero_fixed_point() {
        let s = pair(0.02, 65);
        let r = s.resolve().unwrap();
        let disc = Discretization::new(r.grid, &r.field);
        let u0 = ScalarField::from_fn(r.grid, "u0", |x| 0.1 * (1.0 - x.norm_squared()).max(0.0));
        let opts = ClusterOptions { method: Method::Picard, ..Default::default() };
        let r0 = solve_from(&r, &disc, u0, &opts);
        // no components: reported as a convergence failure with zero components expected 2
        assert!(matches!(r0, Err(Error::Convergence { .. })));
        let mut r1 = r.clone();
        r1.centers.clear();
        let (u, rep) = solve_from(&r1, &disc, ScalarField::zeros(r.grid, "z"), &opts).unwrap();
        assert!(u.values.iter().all(|v| *v == 0.0));
        assert!(rep.components.is_empty());
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = pair(0.7, 65);
        assert!(matches!(s.resolve(), Err(Error::Validation(_))));
        s.epsilon = 0.02;
        s.kind = ScenarioKind::Polygon { n: 2, kappa: -1.0, r_star: 1.0 };
        assert!(s.resolve().unwrap_err().is_validation());
    }
}
