//! Dilute expansion of the effective viscosity for unit spheres:
//! first-order passive and active coefficients per unit number density λ1,
//! the closed-form pusher/puller shear value, the α(E) decomposition and the
//! viscosity-reduction check.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::correctors::{analytic_sphere_corrector, solve_single_particle};
use crate::effective::basis_convention;
use crate::error::{invalid, Error, Result};
use crate::forcing::{bump, bump_mass, shear_orientation, Orientation, SwimForceModel};
use crate::stokes::grid::Grid;
use crate::stokes::rigid::SolverOptions;
use crate::tensor::{dot, norm, strain_basis, strain_dim, Mat, StrainRate, Vec3};
use crate::util::{gauss_legendre, ksum, least_squares, unit_ball_volume};

/// Widths of the regularized point force used for the w → 0 limit.
pub const WIDTHS: [f64; 3] = [0.3, 0.15, 0.075];

/// Quadrature resolution. Directions use a uniform rule in the azimuth and
/// Gauss–Legendre in the polar cosine (3D).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiluteQuadrature {
    pub radial: usize,
    pub angular: usize,
    /// Nodes per dimension for orientation averages.
    pub orientation: usize,
}

impl Default for DiluteQuadrature {
    fn default() -> Self {
        DiluteQuadrature { radial: 24, angular: 64, orientation: 64 }
    }
}

impl DiluteQuadrature {
    fn validate(&self) -> Result<()> {
        if self.radial < 4 || self.angular < 8 || self.orientation < 8 {
            return Err(invalid("quadrature", "need radial >= 4, angular >= 8, orientation >= 8"));
        }
        Ok(())
    }

    fn refined(&self) -> Self {
        DiluteQuadrature { radial: self.radial + 8, angular: self.angular + 16, orientation: self.orientation }
    }
}

/// Unit directions with weights summing to |S^{d−1}|.
fn sphere_rule(d: usize, n: usize) -> Vec<(Vec3, f64)> {
    if d == 2 {
        return (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                ([t.cos(), t.sin(), 0.0], 2.0 * PI / n as f64)
            })
            .collect();
    }
    let (mu, wmu) = gauss_legendre(n.div_ceil(2), -1.0, 1.0);
    let mut out = Vec::with_capacity(mu.len() * n);
    for (m, wm) in mu.iter().zip(&wmu) {
        let s = (1.0 - m * m).sqrt();
        for k in 0..n {
            let p = 2.0 * PI * k as f64 / n as f64;
            out.push(([s * p.cos(), s * p.sin(), *m], wm * 2.0 * PI / n as f64));
        }
    }
    out
}

/// Nodes on the ball of radius `radius` around `center`.
fn ball_rule(d: usize, center: &Vec3, radius: f64, q: &DiluteQuadrature) -> Vec<(Vec3, f64)> {
    let (rho, wr) = gauss_legendre(q.radial, 0.0, 1.0);
    let dirs = sphere_rule(d, q.angular);
    let mut out = Vec::with_capacity(rho.len() * dirs.len());
    for (r, w) in rho.iter().zip(&wr) {
        let jac = radius.powi(d as i32) * r.powi(d as i32 - 1) * w;
        for (u, wu) in &dirs {
            let mut x = *center;
            for a in 0..d {
                x[a] += radius * r * u[a];
            }
            out.push((x, jac * wu));
        }
    }
    out
}

/// Nodes on the shell 1 < |x| < 2.
fn shell_rule(d: usize, q: &DiluteQuadrature) -> Vec<(Vec3, f64)> {
    let (rs, wr) = gauss_legendre(q.radial, 1.0, 2.0);
    let dirs = sphere_rule(d, q.angular);
    let mut out = Vec::with_capacity(rs.len() * dirs.len());
    for (r, w) in rs.iter().zip(&wr) {
        for (u, wu) in &dirs {
            out.push(([r * u[0], r * u[1], r * u[2]], r.powi(d as i32 - 1) * w * wu));
        }
    }
    out
}

/// K_{E'}(x) with E':2B^(1) = ∫ K_{E'} · f over the shell (kernel form).
pub fn kernel_form(e: &StrainRate, x: &Vec3) -> Vec3 {
    let d = e.dim();
    let ex = e.mat().apply(x);
    let r = norm(d, x);
    let rd2 = r.powi(d as i32 + 2);
    let radial = 0.5 * (d as f64 + 2.0) * (1.0 - 1.0 / (r * r)) * dot(d, x, &ex) / rd2;
    let mut out = [0.0; 3];
    for a in 0..d {
        out[a] = -(1.0 - 1.0 / rd2) * ex[a] + radial * x[a];
    }
    out
}

/// −(ψ°_{E'} + E'x): the same weight through the sphere corrector.
pub fn pairing_form(e: &StrainRate, x: &Vec3) -> Vec3 {
    let d = e.dim();
    let psi = analytic_sphere_corrector(e, x);
    let ex = e.mat().apply(x);
    let mut out = [0.0; 3];
    for a in 0..d {
        out[a] = -(psi[a] + ex[a]);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    Kernel,
    Pairing,
}

/// Regularized point force: `force` spread as (1 − ρ²)³ over the ball of radius `width` at `center`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointBump {
    pub center: Vec3,
    pub force: Vec3,
    pub width: f64,
}

/// Mean exterior force density E[f°(E)] on the shell. The interior part
/// pairs with a rigid motion of zero and never enters.
#[derive(Clone)]
pub enum ShellDensity {
    Bumps { dim: usize, bumps: Vec<PointBump> },
    Smooth { dim: usize, density: Arc<dyn Fn(&Vec3) -> Vec3 + Send + Sync> },
}

impl std::fmt::Debug for ShellDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShellDensity::Bumps { dim, bumps } => f.debug_struct("Bumps").field("dim", dim).field("bumps", bumps).finish(),
            ShellDensity::Smooth { dim, .. } => f.debug_struct("Smooth").field("dim", dim).finish_non_exhaustive(),
        }
    }
}

impl ShellDensity {
    pub fn dim(&self) -> usize {
        match self {
            ShellDensity::Bumps { dim, .. } | ShellDensity::Smooth { dim, .. } => *dim,
        }
    }

    fn check_support(&self) -> Result<()> {
        let d = self.dim();
        match self {
            ShellDensity::Bumps { bumps, .. } => {
                for b in bumps {
                    let r = norm(d, &b.center);
                    if !(b.width > 0.0) || r - b.width < 1.0 - 1e-12 || r + b.width > 2.0 + 1e-12 {
                        return Err(Error::Support(format!("bump of width {} at radius {r} leaves the shell 1 < |x| < 2", b.width)));
                    }
                }
            }
            ShellDensity::Smooth { density, .. } => {
                let inside = shell_rule(d, &DiluteQuadrature { radial: 8, angular: 16, orientation: 8 });
                let scale = inside.iter().map(|(x, _)| norm(d, &density(x))).fold(0.0, f64::max);
                for r in [0.0, 0.3, 0.6, 0.9, 0.999, 2.001, 2.2, 2.6, 3.5] {
                    for (u, _) in sphere_rule(d, 16) {
                        let x = [r * u[0], r * u[1], r * u[2]];
                        let v = norm(d, &density(&x));
                        if v > 1e-12 * scale.max(f64::MIN_POSITIVE) && v > 0.0 {
                            return Err(Error::Support(format!("density is {v:.3e} at |x| = {r}, outside the shell 1 < |x| < 2")));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// ∫ w(x) · f(x) for a weight field w.
    fn pair(&self, weight: impl Fn(&Vec3) -> Vec3, q: &DiluteQuadrature) -> f64 {
        let d = self.dim();
        match self {
            ShellDensity::Bumps { bumps, .. } => {
                let mass = bump_mass(d);
                let mut terms = Vec::new();
                for b in bumps {
                    let peak = 1.0 / (mass * b.width.powi(d as i32));
                    for (x, w) in ball_rule(d, &b.center, b.width, q) {
                        let rho = norm(d, &sub(&x, &b.center)) / b.width;
                        terms.push(w * peak * bump(rho) * dot(d, &b.force, &weight(&x)));
                    }
                }
                ksum(terms)
            }
            ShellDensity::Smooth { density, .. } => {
                ksum(shell_rule(d, q).into_iter().map(|(x, w)| w * dot(d, &density(&x), &weight(&x))))
            }
        }
    }
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// B_act^(1) per unit λ1 as a trace-free symmetric matrix: E_j : B = ½∫K_{E_j}·f.
pub fn bact1_from_density(density: &ShellDensity, route: Route, q: &DiluteQuadrature) -> Result<Mat> {
    q.validate()?;
    density.check_support()?;
    let d = density.dim();
    let q = if route == Route::Pairing { q.refined() } else { *q };
    let mut out = Mat::zeros(d);
    for ej in strain_basis(d) {
        let c = match route {
            Route::Kernel => density.pair(|x| kernel_form(&ej, x), &q),
            Route::Pairing => density.pair(|x| pairing_form(&ej, x), &q),
        };
        out = out.add(&ej.mat().scale(0.5 * c));
    }
    Ok(out)
}

/// Orientation nodes (direction, probability) for the model under strain E.
pub fn orientation_nodes(model: &SwimForceModel, e: &StrainRate, n: usize) -> Vec<(Vec3, f64)> {
    let d = e.dim();
    match &model.orientation {
        Orientation::FrenkelShear => vec![(shear_orientation(e, 1.0).0, 1.0)],
        Orientation::Fixed(_) => vec![(model.orientation_of(e, 0, 0).0, 1.0)],
        Orientation::Random(kappa) => {
            let (base, _) = shear_orientation(e, 1.0);
            let frame = frame_about(d, &base);
            // von Mises (2D) / von Mises–Fisher (3D) weights about the base direction
            let nodes: Vec<(Vec3, f64)> = sphere_rule(d, n)
                .into_iter()
                .map(|(u, w)| {
                    let c = u[d - 1];
                    let mut v = [0.0; 3];
                    for (k, f) in frame.iter().enumerate().take(d) {
                        for a in 0..d {
                            v[a] += u[k] * f[a];
                        }
                    }
                    (v, w * (kappa * (c - 1.0)).exp())
                })
                .collect();
            let total = ksum(nodes.iter().map(|n| n.1));
            nodes.into_iter().map(|(v, w)| (v, w / total)).collect()
        }
    }
}

/// Orthonormal frame whose last vector is `base`.
fn frame_about(d: usize, base: &Vec3) -> Vec<Vec3> {
    if d == 2 {
        return vec![[base[1], -base[0], 0.0], *base];
    }
    let helper = if base[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let bh = dot(3, base, &helper);
    let mut t1 = [0.0; 3];
    for a in 0..3 {
        t1[a] = helper[a] - bh * base[a];
    }
    let n1 = norm(3, &t1);
    t1.iter_mut().for_each(|x| *x /= n1);
    let t2 = [base[1] * t1[2] - base[2] * t1[1], base[2] * t1[0] - base[0] * t1[2], base[0] * t1[1] - base[1] * t1[0]];
    vec![t1, t2, *base]
}

/// Mean exterior density of the swim-force model at width w.
pub fn model_density(model: &SwimForceModel, e: &StrainRate, width: f64, q: &DiluteQuadrature) -> Result<ShellDensity> {
    let m = SwimForceModel { width, ..model.clone() };
    m.validate()?;
    let d = e.dim();
    let bumps = orientation_nodes(&m, e, q.orientation)
        .into_iter()
        .map(|(dir, p)| {
            let a = m.amplitude(e, &dir);
            let mut center = [0.0; 3];
            let mut force = [0.0; 3];
            for k in 0..d {
                center[k] = m.gamma * m.offset * dir[k];
                force[k] = -a * p * dir[k];
            }
            PointBump { center, force, width }
        })
        .collect();
    Ok(ShellDensity::Bumps { dim: d, bumps })
}

/// Widths actually used: the standard ladder, scaled down when the bump
/// would leave the shell at the model's offset.
pub fn width_ladder(offset: f64) -> Result<[f64; 3]> {
    let room = (offset - 1.0).min(2.0 - offset);
    if !(room > 0.0) {
        return Err(invalid("offset", format!("{offset} must lie strictly between 1 and 2")));
    }
    let s = (room / WIDTHS[0]).min(1.0);
    Ok([WIDTHS[0] * s, WIDTHS[1] * s, WIDTHS[2] * s])
}

#[derive(Clone, Debug, Serialize)]
pub struct WidthLimit {
    pub widths: Vec<f64>,
    /// B_act^(1)(E) coordinates per width (kernel route).
    pub values: Vec<Vec<f64>>,
    /// Two-level Richardson limit w → 0 (errors even in w).
    pub limit: Vec<f64>,
    /// |limit − one-level estimate|: size of the neglected term.
    pub error: f64,
    /// Largest kernel-vs-pairing difference over the widths.
    pub route_gap: f64,
}

/// B_act^(1)(E) as w → 0 from the bump ladder.
pub fn dilute_bact1_limit(model: &SwimForceModel, e: &StrainRate, q: &DiluteQuadrature) -> Result<WidthLimit> {
    let widths = width_ladder(model.offset)?;
    let mut values = Vec::new();
    let mut route_gap: f64 = 0.0;
    for &w in &widths {
        let dens = model_density(model, e, w, q)?;
        let k = bact1_from_density(&dens, Route::Kernel, q)?;
        let p = bact1_from_density(&dens, Route::Pairing, q)?;
        route_gap = route_gap.max(k.sub(&p).norm());
        values.push(StrainRate::project(&k).coords());
    }
    let m = values[0].len();
    let limit: Vec<f64> = (0..m).map(|j| (64.0 * values[2][j] - 20.0 * values[1][j] + values[0][j]) / 45.0).collect();
    let one: Vec<f64> = (0..m).map(|j| (4.0 * values[2][j] - values[1][j]) / 3.0).collect();
    let error = limit.iter().zip(&one).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(WidthLimit { widths: widths.to_vec(), values, limit, error, route_gap })
}

/// B_act^(1)(E) at the model's own width (kernel route).
pub fn dilute_bact1(model: &SwimForceModel, e: &StrainRate, q: &DiluteQuadrature) -> Result<Mat> {
    bact1_from_density(&model_density(model, e, model.width, q)?, Route::Kernel, q)
}

/// B_pas^(1) per unit λ1 on the strain basis: (d+2)|B|/2 · Id.
pub fn dilute_bpas1(d: usize) -> Vec<Vec<f64>> {
    let m = strain_dim(d);
    let c = 0.5 * (d as f64 + 2.0) * unit_ball_volume(d);
    (0..m).map(|i| (0..m).map(|j| if i == j { c } else { 0.0 }).collect()).collect()
}

/// B_pas^(1) from the boundary functional of single-particle cell solves:
/// 2B^(1)E = dev ∫_{∂I} σ(ψ_E + Ex)ν ⊗_s x (per unit number density).
pub fn single_particle_bpas1(d: usize, side: f64, n: usize, opts: &SolverOptions) -> Result<Vec<Vec<f64>>> {
    let grid = Grid::new(d, n, side)?;
    let basis = strain_basis(d);
    let mut cols = Vec::with_capacity(basis.len());
    for e in &basis {
        let sol = solve_single_particle(e, side, grid, opts)?;
        let t = sol.flow.reactions.iter().fold(Mat::zeros(d), |acc, r| acc.add(&r.traction_moment()));
        cols.push(t.deviatoric());
    }
    Ok((0..basis.len()).map(|i| (0..basis.len()).map(|j| 0.5 * basis[i].mat().ddot(&cols[j])).collect()).collect())
}

/// E:B_act^(1)(E) convention of the closed form, for a point dipole at
/// distance r under the shear s/2(e1⊗e2 + e2⊗e1):
/// γ(s/2) r fmag (1 − (d+2)/2 r^{−d} + d/2 r^{−(d+2)}).
/// This is the full pairing −∫(ψ°_E + Ex)·f°, i.e. E:2B^(1)(E) in the matrix normalization.
pub fn pusher_puller_shear(gamma: f64, r: f64, fmag: f64, s: f64, d: usize) -> Result<f64> {
    if d != 2 && d != 3 {
        return Err(invalid("d", "must be 2 or 3"));
    }
    if !(r > 1.0) || !r.is_finite() {
        return Err(invalid("r", format!("{r} must exceed the particle radius 1")));
    }
    let di = d as i32;
    let df = d as f64;
    Ok(gamma * (s / 2.0) * r * fmag * (1.0 - (df + 2.0) / 2.0 * r.powi(-di) + df / 2.0 * r.powi(-di - 2)))
}

/// Least-squares fit B ≈ α/2 (f̂⊗f̂ − Id/d). Returns (α, residual relative to |B|).
pub fn alpha_decomposition(b: &Mat, fdir: &Vec3) -> Result<(f64, f64)> {
    let d = b.dim;
    let n = norm(d, fdir);
    if !(n > 0.0) {
        return Err(invalid("fdir", "direction must be nonzero"));
    }
    let f: Vec3 = [fdir[0] / n, fdir[1] / n, fdir[2] / n];
    let p = Mat::outer(d, &f, &f).sub(&Mat::identity(d).scale(1.0 / d as f64));
    let alpha = 2.0 * b.ddot(&p) / p.ddot(&p);
    let bn = b.norm();
    let res = if bn > 0.0 { b.sub(&p.scale(0.5 * alpha)).norm() / bn } else { 0.0 };
    Ok((alpha, res))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeFit {
    /// y − y0 = aλ
    Linear,
    /// y − y0 = aλ + bλ²
    Quadratic,
}

#[derive(Clone, Debug, Serialize)]
pub struct EinsteinComparison {
    pub slope: Vec<f64>,
    pub curvature: Vec<f64>,
    pub dilute: Vec<f64>,
    /// |slope − dilute| / |dilute|
    pub relative_deviation: f64,
    /// slope · dilute > 0
    pub sign_match: bool,
}

/// Fits the λ-dependence of cell values against the dilute slope, entrywise.
pub fn einstein_compare(lambdas: &[f64], values: &[Vec<f64>], baseline: &[f64], dilute: &[f64], fit: SlopeFit) -> Result<EinsteinComparison> {
    let need = if fit == SlopeFit::Linear { 1 } else { 2 };
    if lambdas.len() != values.len() || lambdas.len() < need {
        return Err(invalid("lambdas", format!("need at least {need} (λ, value) pairs of matching length")));
    }
    if values.iter().any(|v| v.len() != baseline.len()) || dilute.len() != baseline.len() {
        return Err(Error::ShapeMismatch("values, baseline and dilute slope must have equal length".into()));
    }
    let design: Vec<Vec<f64>> =
        lambdas.iter().map(|l| if fit == SlopeFit::Linear { vec![*l] } else { vec![*l, l * l] }).collect();
    let mut slope = Vec::new();
    let mut curvature = Vec::new();
    for k in 0..baseline.len() {
        let y: Vec<f64> = values.iter().map(|v| v[k] - baseline[k]).collect();
        let c = least_squares(&design, &y);
        slope.push(c[0]);
        curvature.push(if fit == SlopeFit::Quadratic { c[1] } else { 0.0 });
    }
    let dn = dilute.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dev = slope.iter().zip(dilute).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let relative_deviation = if dn > 0.0 { dev / dn } else { dev };
    let sign_match = slope.iter().zip(dilute).map(|(a, b)| a * b).sum::<f64>() > 0.0;
    Ok(EinsteinComparison { slope, curvature, dilute: dilute.to_vec(), relative_deviation, sign_match })
}

/// Well-posedness smallness κ ℓ^{η−d} ≤ threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Smallness {
    pub eta: f64,
    pub threshold: f64,
}

impl Default for Smallness {
    fn default() -> Self {
        Smallness { eta: 0.25, threshold: 1.0 }
    }
}

impl Smallness {
    pub fn indicator(&self, kappa: f64, ell: f64, d: usize) -> f64 {
        kappa.abs() * ell.powf(self.eta - d as f64)
    }

    /// Largest κ meeting the condition.
    pub fn kappa_max(&self, ell: f64, d: usize) -> f64 {
        self.threshold * ell.powf(d as f64 - self.eta)
    }

    pub fn holds(&self, kappa: f64, ell: f64, d: usize) -> bool {
        self.indicator(kappa, ell, d) <= self.threshold
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReductionCheck {
    /// E:B_tot(E) < |E|²
    pub reduced: bool,
    /// |E|² − E:B_tot(E)
    pub margin: f64,
    pub passive: f64,
    pub active: f64,
    pub smallness: f64,
    pub kappa_max: f64,
    pub feasible: bool,
}

/// First-order check of E:B_tot(E) < |E|² with
/// B_tot(E) = (1 + (d+2)|B|λ1/2)E + κλ1 B_act^(1)(E).
pub fn viscosity_reduction_check(kappa: f64, lambda1: f64, bact1: &Mat, e: &StrainRate, ell: f64, small: &Smallness) -> ReductionCheck {
    let d = e.dim();
    let e2 = e.mat().ddot(e.mat());
    let passive = 0.5 * (d as f64 + 2.0) * unit_ball_volume(d) * lambda1 * e2;
    let active = kappa * lambda1 * e.mat().ddot(bact1);
    let margin = -passive - active;
    ReductionCheck {
        reduced: margin > 0.0,
        margin,
        passive,
        active,
        smallness: small.indicator(kappa, ell, d),
        kappa_max: small.kappa_max(ell, d),
        feasible: small.holds(kappa, ell, d),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiluteSettings {
    pub model: SwimForceModel,
    pub strain: StrainRate,
    pub lambda1: f64,
    pub kappa: f64,
    /// Hardcore length entering the smallness condition.
    pub ell: f64,
    #[serde(default)]
    pub smallness: Smallness,
    #[serde(default)]
    pub quadrature: DiluteQuadrature,
}

#[derive(Clone, Debug, Serialize)]
pub struct DiluteReport {
    pub dim: usize,
    pub basis: String,
    pub strain: Vec<f64>,
    pub lambda1: f64,
    pub kappa: f64,
    /// Per unit λ1, on the strain basis.
    pub bpas1: Vec<Vec<f64>>,
    /// B_act^(1)(E) at the model width, per unit λ1.
    pub bact1: Vec<f64>,
    pub width_limit: WidthLimit,
    /// −∫(ψ°_E + Ex)·E[f°(E)] = E:2B_act^(1)(E), at the model width and in the limit.
    pub shear_scalar: f64,
    pub shear_scalar_limit: f64,
    /// Closed-form point-dipole value when E is a positive shear in the (1,2) plane
    /// and the orientation follows the shear.
    pub closed_form: Option<f64>,
    pub alpha: f64,
    pub alpha_residual: f64,
    /// First-order B_tot(E) coordinates.
    pub btot: Vec<f64>,
    pub reduction: ReductionCheck,
}

fn positive_shear(e: &StrainRate) -> Option<f64> {
    let s = 2.0 * e.mat().get(0, 1);
    let pure = StrainRate::shear(e.dim(), 0, 1, s);
    (s > 0.0 && pure.sub(e).norm() <= 1e-12 * s).then_some(s)
}

pub fn dilute_report(s: &DiluteSettings) -> Result<DiluteReport> {
    s.model.validate()?;
    if !(s.lambda1 >= 0.0) || !(s.ell > 0.0) {
        return Err(invalid("lambda1", "λ1 must be nonnegative and ℓ positive"));
    }
    let e = &s.strain;
    let d = e.dim();
    let q = &s.quadrature;
    let b = dilute_bact1(&s.model, e, q)?;
    let limit = dilute_bact1_limit(&s.model, e, q)?;
    let blim = StrainRate::from_coords(d, &limit.limit);
    let (dir, _) = shear_orientation(e, 1.0);
    let fdir = match &s.model.orientation {
        Orientation::Fixed(_) => s.model.orientation_of(e, 0, 0).0,
        _ => dir,
    };
    let (alpha, alpha_residual) = alpha_decomposition(&b, &fdir)?;
    let closed_form = match (&s.model.orientation, positive_shear(e)) {
        (Orientation::FrenkelShear, Some(sh)) => {
            Some(pusher_puller_shear(s.model.gamma, s.model.offset, s.model.amplitude(e, &dir), sh, d)?)
        }
        _ => None,
    };
    let pas = 1.0 + 0.5 * (d as f64 + 2.0) * unit_ball_volume(d) * s.lambda1;
    let btot = e.mat().scale(pas).add(&b.scale(s.kappa * s.lambda1));
    Ok(DiluteReport {
        dim: d,
        basis: basis_convention(d),
        strain: e.coords(),
        lambda1: s.lambda1,
        kappa: s.kappa,
        bpas1: dilute_bpas1(d),
        bact1: StrainRate::project(&b).coords(),
        shear_scalar: 2.0 * e.mat().ddot(&b),
        shear_scalar_limit: 2.0 * e.mat().ddot(blim.mat()),
        width_limit: limit,
        closed_form,
        alpha,
        alpha_residual,
        btot: StrainRate::project(&btot).coords(),
        reduction: viscosity_reduction_check(s.kappa, s.lambda1, &b, e, s.ell, &s.smallness),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcing::ForceKind;
    use crate::tensor::rotation;

    fn q() -> DiluteQuadrature {
        DiluteQuadrature::default()
    }

    /// f(x) = sin²(π(|x|−1)) M x on the shell: odd and torque-free.
    fn smooth(d: usize, m: Mat) -> ShellDensity {
        ShellDensity::Smooth {
            dim: d,
            density: Arc::new(move |x: &Vec3| {
                let r = norm(d, x);
                if r <= 1.0 || r >= 2.0 {
                    return [0.0; 3];
                }
                let g = (PI * (r - 1.0)).sin().powi(2);
                let v = m.apply(x);
                [g * v[0], g * v[1], g * v[2]]
            }),
        }
    }

    /// E':2B = (E':M)|S^{d−1}|/d ∫₁² sin²(π(r−1)) (r − r^{d+1}) dr, by angular averages.
    fn smooth_oracle(d: usize, m: &Mat, ep: &StrainRate) -> f64 {
        let sphere = d as f64 * unit_ball_volume(d);
        let (r, w) = gauss_legendre(60, 1.0, 2.0);
        let radial: f64 = r.iter().zip(&w).map(|(r, w)| w * (PI * (r - 1.0)).sin().powi(2) * (r - r.powi(d as i32 + 1))).sum();
        ep.mat().ddot(m) * sphere / d as f64 * radial
    }

    #[test]
    fn bpas1_closed_form_coefficients() {
        // Einstein 5/2 per volume fraction in 3D, 2 in 2D
        let b3 = dilute_bpas1(3);
        assert!((b3[0][0] / unit_ball_volume(3) - 2.5).abs() < 1e-14 && b3[0][1] == 0.0);
        let b2 = dilute_bpas1(2);
        assert!((b2[1][1] / PI - 2.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_and_pairing_forms_coincide_pointwise() {
        let e = StrainRate::from_coords(3, &[0.3, -0.2, 0.5, 0.1, -0.7]);
        for x in [[1.2, 0.3, -0.4], [0.0, 1.9, 0.1], [-1.1, -0.5, 0.8]] {
            let a = kernel_form(&e, &x);
            let b = pairing_form(&e, &x);
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn smooth_density_matches_radial_oracle_both_routes() {
        for d in [2, 3] {
            let m = StrainRate::from_coords(d, &[0.4, -0.3, 0.2, 0.9, 0.1][..strain_dim(d)]).mat().clone();
            let dens = smooth(d, m.clone());
            let k = bact1_from_density(&dens, Route::Kernel, &q()).unwrap();
            let p = bact1_from_density(&dens, Route::Pairing, &q()).unwrap();
            assert!(k.sub(&p).norm() < 1e-8 * k.norm(), "d={d} routes differ by {}", k.sub(&p).norm());
            for ej in strain_basis(d) {
                let want = smooth_oracle(d, &m, &ej);
                assert!((2.0 * ej.mat().ddot(&k) - want).abs() < 1e-9, "d={d}");
            }
            assert!(k.trace().abs() < 1e-14 && k.skew().norm() < 1e-14);
        }
    }

    #[test]
    fn zero_density_gives_zero() {
        let dens = ShellDensity::Smooth { dim: 2, density: Arc::new(|_: &Vec3| [0.0; 3]) };
        assert_eq!(bact1_from_density(&dens, Route::Kernel, &q()).unwrap().norm(), 0.0);
        let m = SwimForceModel::dipole(0.0, 1.5, -1.0, 0.2).unwrap();
        assert_eq!(dilute_bact1(&m, &StrainRate::shear(2, 0, 1, 1.0), &q()).unwrap().norm(), 0.0);
    }

    #[test]
    fn support_violation_rejected() {
        let dens = ShellDensity::Smooth { dim: 2, density: Arc::new(|x: &Vec3| if norm(2, x) < 2.5 { [1.0, 0.0, 0.0] } else { [0.0; 3] }) };
        assert!(matches!(bact1_from_density(&dens, Route::Kernel, &q()), Err(Error::Support(_))));
        let b = ShellDensity::Bumps { dim: 2, bumps: vec![PointBump { center: [1.1, 0.0, 0.0], force: [1.0, 0.0, 0.0], width: 0.2 }] };
        assert!(matches!(bact1_from_density(&b, Route::Pairing, &q()), Err(Error::Support(_))));
    }

    #[test]
    fn closed_form_values() {
        assert!((pusher_puller_shear(1.0, 2.0, 1.0, 1.0, 3).unwrap() - 0.734375).abs() < 1e-12);
        for d in [2, 3] {
            assert!(pusher_puller_shear(1.0, 1.0 + 1e-9, 1.0, 1.0, d).unwrap().abs() < 1e-7);
            for r in [1.01, 1.3, 2.0, 5.0, 40.0] {
                let push = pusher_puller_shear(-1.0, r, 1.0, 0.7, d).unwrap();
                let pull = pusher_puller_shear(1.0, r, 1.0, 0.7, d).unwrap();
                assert!(push < 0.0 && pull > 0.0);
                assert_eq!(push, -pull);
            }
        }
        assert!(pusher_puller_shear(1.0, 1.0, 1.0, 1.0, 3).is_err());
        assert!(pusher_puller_shear(1.0, 0.5, 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn closed_form_equals_point_kernel() {
        // point dipole: −fmag e at γ r e, paired with the kernel directly
        for d in [2, 3] {
            let s = 1.3;
            let e = StrainRate::shear(d, 0, 1, s);
            let dir = shear_orientation(&e, 1.0).0;
            for (g, r) in [(1.0, 1.4), (-1.0, 1.7)] {
                let x = [g * r * dir[0], g * r * dir[1], g * r * dir[2]];
                let k = kernel_form(&e, &x);
                let v = -0.8 * dot(d, &k, &dir);
                assert!((v - pusher_puller_shear(g, r, 0.8, s, d).unwrap()).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn width_limit_matches_closed_form() {
        for d in [2, 3] {
            let e = StrainRate::shear(d, 0, 1, 1.0);
            for g in [1.0, -1.0] {
                let m = SwimForceModel::dipole(1.0, 1.5, g, 0.15).unwrap();
                let lim = dilute_bact1_limit(&m, &e, &q()).unwrap();
                let got = 2.0 * e.mat().ddot(StrainRate::from_coords(d, &lim.limit).mat());
                let want = pusher_puller_shear(g, 1.5, 1.0, 1.0, d).unwrap();
                assert!((got - want).abs() < 0.01 * want.abs(), "d={d} γ={g}: {got} vs {want}");
                assert!(lim.route_gap < 1e-8 * want.abs());
            }
        }
    }

    #[test]
    fn dipole_is_axisymmetric() {
        for d in [2, 3] {
            let e = StrainRate::from_coords(d, &[0.2, 0.5, -0.3, 0.4, 0.1][..strain_dim(d)]);
            let m = SwimForceModel::dipole(1.0, 1.6, -1.0, 0.2).unwrap();
            let b = dilute_bact1(&m, &e, &q()).unwrap();
            let (alpha, res) = alpha_decomposition(&b, &shear_orientation(&e, 1.0).0).unwrap();
            assert!(res <= 1e-6, "d={d} residual {res}");
            assert!(alpha.abs() > 0.0);
        }
        assert_eq!(alpha_decomposition(&Mat::zeros(3), &[0.0, 0.0, 1.0]).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn alpha_fit_is_equivariant() {
        let p = |f: &Vec3| Mat::outer(3, f, f).sub(&Mat::identity(3).scale(1.0 / 3.0));
        let f = [0.0, 0.6, 0.8];
        let b = p(&f).scale(0.35);
        let r = rotation(3, 0.7, &[1.0, 2.0, -0.5]);
        let fr = r.apply(&f);
        let (a0, _) = alpha_decomposition(&b, &f).unwrap();
        let (a1, res) = alpha_decomposition(&b.rotate(&r), &fr).unwrap();
        assert!((a0 - 0.7).abs() < 1e-14 && (a1 - a0).abs() < 1e-13 && res < 1e-13);
    }

    #[test]
    fn random_orientation_average_shrinks_toward_isotropy() {
        let e = StrainRate::shear(2, 0, 1, 1.0);
        let m = SwimForceModel::dipole(1.0, 1.5, -1.0, 0.2).unwrap();
        let aligned = dilute_bact1(&m, &e, &q()).unwrap();
        // 2D von Mises: ⟨cos 2θ⟩ = I₂(κ)/I₀(κ); the dipole tensor is quadratic in the direction
        for kappa in [0.0, 2.0] {
            let avg = dilute_bact1(&m.clone().with_orientation(Orientation::Random(kappa)), &e, &DiluteQuadrature { orientation: 256, ..q() }).unwrap();
            let ratio = avg.norm() / aligned.norm();
            let (i0, i2) = bessel_i0_i2(kappa);
            assert!((ratio - i2 / i0).abs() < 1e-8, "κ={kappa}: {ratio} vs {}", i2 / i0);
        }
    }

    /// Series for I₀ and I₂.
    fn bessel_i0_i2(x: f64) -> (f64, f64) {
        let (mut i0, mut i2) = (0.0, 0.0);
        let mut fact = 1.0f64;
        for k in 0..40 {
            if k > 0 {
                fact *= k as f64;
            }
            let t = (x / 2.0).powi(2 * k as i32) / (fact * fact);
            i0 += t;
            i2 += (x / 2.0).powi(2 * k as i32 + 2) / (fact * (1..=k + 2).map(|v| v as f64).product::<f64>());
        }
        (i0, i2)
    }

    #[test]
    fn saturating_amplitude_enters_linearly() {
        let e = StrainRate::shear(3, 0, 1, 0.8);
        let base = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.2).unwrap();
        let sat = base.clone().with_kind(ForceKind::Saturating);
        let dir = shear_orientation(&e, 1.0).0;
        let a = sat.amplitude(&e, &dir);
        let b0 = dilute_bact1(&base, &e, &q()).unwrap();
        let b1 = dilute_bact1(&sat, &e, &q()).unwrap();
        assert!(b1.sub(&b0.scale(a)).norm() < 1e-14);
    }

    #[test]
    fn einstein_fit_recovers_synthetic_slope() {
        let s = [0.7, -0.2, 1.1];
        let base = [1.0, 0.0, 1.0];
        let lams = [0.01, 0.02, 0.05];
        let vals: Vec<Vec<f64>> = lams.iter().map(|l| base.iter().zip(&s).map(|(b, v)| b + l * v).collect()).collect();
        for fit in [SlopeFit::Linear, SlopeFit::Quadratic] {
            let c = einstein_compare(&lams, &vals, &base, &s, fit).unwrap();
            assert!(c.relative_deviation < 1e-10 && c.sign_match);
        }
        assert!(einstein_compare(&lams[..1], &vals[..1], &base, &s, SlopeFit::Quadratic).is_err());
    }

    #[test]
    fn reduction_margins() {
        let e = StrainRate::shear(3, 0, 1, 1.0);
        let lam = 0.01;
        let small = Smallness::default();
        let none = viscosity_reduction_check(0.0, lam, &Mat::zeros(3), &e, 3.0, &small);
        let e2 = 0.5;
        assert!(!none.reduced);
        assert!((none.margin + 2.5 * unit_ball_volume(3) * lam * e2).abs() < 1e-15);
        let q = q();
        let push = dilute_bact1(&SwimForceModel::dipole(1.0, 1.5, -1.0, 0.2).unwrap(), &e, &q).unwrap();
        let pull = dilute_bact1(&SwimForceModel::dipole(1.0, 1.5, 1.0, 0.2).unwrap(), &e, &q).unwrap();
        let kmax = small.kappa_max(3.0, 3);
        let at = viscosity_reduction_check(kmax, lam, &push, &e, 3.0, &small);
        assert!(at.feasible && (at.smallness - small.threshold).abs() < 1e-12);
        assert!(!viscosity_reduction_check(1.01 * kmax, lam, &push, &e, 3.0, &small).feasible);
        for k in [0.0, 1.0, 10.0, 1e3] {
            assert!(!viscosity_reduction_check(k, lam, &pull, &e, 3.0, &small).reduced);
        }
        // pusher: reduced once κ exceeds passive/|active per unit κ|
        let unit = -(e.mat().ddot(&push)) * lam;
        assert!(unit > 0.0);
        let kstar = none.passive / unit;
        assert!(viscosity_reduction_check(1.1 * kstar, lam, &push, &e, 3.0, &small).reduced);
        assert!(!viscosity_reduction_check(0.9 * kstar, lam, &push, &e, 3.0, &small).reduced);
    }

    #[test]
    fn report_ties_the_pieces_together() {
        let s = DiluteSettings {
            model: SwimForceModel::dipole(1.0, 1.5, -1.0, 0.15).unwrap(),
            strain: StrainRate::shear(2, 0, 1, 1.0),
            lambda1: 0.005,
            kappa: 10.0,
            ell: 4.0,
            smallness: Smallness::default(),
            quadrature: q(),
        };
        let r = dilute_report(&s).unwrap();
        let cf = r.closed_form.unwrap();
        assert!(cf < 0.0 && r.shear_scalar < 0.0 && r.alpha < 0.0);
        assert!((r.shear_scalar_limit - cf).abs() < 0.01 * cf.abs());
        assert!(r.alpha_residual < 1e-6);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"shear_scalar\""));
    }

    #[test]
    fn single_particle_boundary_functional_near_closed_form() {
        // coarse and small: trend only; the sharp comparison lives in the acceptance suite
        let b = single_particle_bpas1(2, 16.0, 128, &SolverOptions::default()).unwrap();
        let want = dilute_bpas1(2)[0][0];
        for i in 0..2 {
            assert!((b[i][i] - want).abs() < 0.1 * want, "{} vs {want}", b[i][i]);
        }
        assert!(b[0][1].abs() < 0.02 * want);
    }
}
