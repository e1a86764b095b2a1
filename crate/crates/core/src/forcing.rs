//! Swimming-force models: neutral force densities on the shell around each
//! particle plus their interior affine extension.
//!
//! The dipole model puts a uniform propulsion f̄ = a·e on the particle and a
//! regularized point force −a·e at γ·offset·e (γ = +1 puller: the point sits
//! ahead; γ = −1 pusher). Discrete neutrality is restored by a compensating
//! affine density on the shell 1 < |y| < 2.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::stokes::geometry::{for_cells_within, indicator_profile};
use crate::stokes::grid::{Grid, PeriodicField, Rank};
use crate::stokes::rigid::rot_field;
use crate::tensor::{dot, norm, Mat, StrainRate, Vec3};
use crate::util::{child_seed, ksum, unit_ball_volume};

/// Minimum number of cells across the regularized point force (2w ≥ 4h).
pub const BUMP_CELLS: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceKind {
    /// Constant amplitude |f̄|.
    Dipole,
    /// Amplitude |f̄|·(e·Ee): linear in E for a fixed orientation.
    Linear,
    /// Amplitude |f̄|·tanh(e·Ee): smooth and bounded.
    Saturating,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Orientation {
    /// Top eigenvector of E.
    FrenkelShear,
    Fixed(Vec3),
    /// Top eigenvector of E perturbed by iid per-particle noise of the given
    /// concentration (von Mises in 2D, von Mises–Fisher in 3D).
    Random(f64),
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orientation::FrenkelShear => write!(f, "frenkel-shear"),
            Orientation::Fixed(v) => write!(f, "fixed:{},{},{}", v[0], v[1], v[2]),
            Orientation::Random(k) => write!(f, "random:{k}"),
        }
    }
}

impl FromStr for Orientation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "frenkel-shear" {
            return Ok(Orientation::FrenkelShear);
        }
        if let Some(rest) = s.strip_prefix("fixed:") {
            let parts: Vec<f64> = rest
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid("orientation", format!("bad vector `{rest}`: {e}")))?;
            if parts.is_empty() || parts.len() > 3 {
                return Err(invalid("orientation", "fixed vector needs 2 or 3 components"));
            }
            let mut v = [0.0; 3];
            v[..parts.len()].copy_from_slice(&parts);
            if !(norm(3, &v) > 0.0) {
                return Err(invalid("orientation", "fixed vector must be nonzero"));
            }
            return Ok(Orientation::Fixed(v));
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let k: f64 = rest.trim().parse().map_err(|e| invalid("orientation", format!("bad concentration `{rest}`: {e}")))?;
            if !(k >= 0.0 && k.is_finite()) {
                return Err(invalid("orientation", "concentration must be finite and >= 0"));
            }
            return Ok(Orientation::Random(k));
        }
        Err(invalid("orientation", format!("`{s}` is not frenkel-shear | fixed:<v> | random:<k>")))
    }
}

impl Serialize for Orientation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Orientation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwimForceModel {
    pub kind: ForceKind,
    /// |f̄|: propulsion magnitude (sign allowed; flips the dipole).
    pub fbar: f64,
    /// Distance of the point force from the center, in radii.
    pub offset: f64,
    /// +1 puller, −1 pusher.
    pub gamma: f64,
    /// Radius of the bump regularizing the point force, in radii.
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_orientation")]
    pub orientation: Orientation,
}

fn default_width() -> f64 {
    0.15
}

fn default_orientation() -> Orientation {
    Orientation::FrenkelShear
}

/// (1 − ρ²)³ on the unit ball: C² at the rim.
pub(crate) fn bump(rho: f64) -> f64 {
    let t = 1.0 - rho * rho;
    if t > 0.0 {
        t * t * t
    } else {
        0.0
    }
}

/// ∫_{B₁} (1 − |y|²)³ dy.
pub(crate) fn bump_mass(d: usize) -> f64 {
    if d == 2 {
        PI / 4.0
    } else {
        64.0 * PI / 315.0
    }
}

/// Smooth weight on the shell 1 < |y|/R < 2 carrying the neutrality correction.
fn shell_weight(r: f64) -> f64 {
    if r > 1.0 && r < 2.0 {
        (PI * (r - 1.0)).sin().powi(2)
    } else {
        0.0
    }
}

/// ±(top eigenvector of E). Returns the vector and whether the top
/// eigenvalue was degenerate. Eigenvector signs are fixed so that the first
/// nonzero component is positive; degenerate top eigenspaces resolve to the
/// first coordinate axis with a nonzero projection onto them.
pub fn shear_orientation(e: &StrainRate, sign: f64) -> (Vec3, bool) {
    let d = e.dim();
    let m = e.mat();
    let a = nalgebra::DMatrix::from_fn(d, d, |i, j| m.get(i, j));
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let top = eig.eigenvalues[order[0]];
    let tol = 1e-10 * e.norm().max(f64::MIN_POSITIVE);
    let span: Vec<usize> = order.iter().copied().filter(|&i| top - eig.eigenvalues[i] <= tol).collect();
    let degenerate = span.len() > 1 || e.norm() == 0.0;
    let mut v = [0.0; 3];
    if span.len() == 1 && e.norm() > 0.0 {
        for (a, x) in v.iter_mut().enumerate().take(d) {
            *x = eig.eigenvectors[(a, span[0])];
        }
    } else {
        // project coordinate axes onto the top eigenspace, take the first that survives
        for axis in 0..d {
            let mut p = [0.0; 3];
            for &c in &span {
                let col = eig.eigenvectors.column(c);
                let w = col[axis];
                for a in 0..d {
                    p[a] += w * col[a];
                }
            }
            if norm(d, &p) > 1e-8 {
                v = p;
                break;
            }
        }
    }
    let nv = norm(d, &v);
    v.iter_mut().for_each(|x| *x /= nv);
    if let Some(first) = v[..d].iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let s = if sign < 0.0 { -1.0 } else { 1.0 };
    v.iter_mut().for_each(|x| *x *= s);
    (v, degenerate)
}

/// Sample of the angular deviation for von Mises noise (Best–Fisher).
fn von_mises_angle(kappa: f64, rng: &mut ChaCha8Rng) -> f64 {
    if kappa < 1e-8 {
        return rng.gen_range(-PI..PI);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.gen();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.gen();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.gen();
            let th = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { th } else { -th };
        }
    }
}

/// Rotates `base` by per-particle noise of concentration `kappa`.
fn perturb(d: usize, base: &Vec3, kappa: f64, seed: u64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if d == 2 {
        let th = von_mises_angle(kappa, &mut rng);
        let (s, c) = th.sin_cos();
        return [c * base[0] - s * base[1], s * base[0] + c * base[1], 0.0];
    }
    // von Mises–Fisher about the pole by inversion of the cosine law
    let u: f64 = rng.gen();
    let w = if kappa < 1e-8 { 2.0 * u - 1.0 } else { 1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa };
    let w = w.clamp(-1.0, 1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - w * w).sqrt();
    let local = [s * phi.cos(), s * phi.sin(), w];
    // orthonormal frame (t1, t2, base)
    let helper = if base[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut t1 = [0.0; 3];
    let bh = dot(3, base, &helper);
    for a in 0..3 {
        t1[a] = helper[a] - bh * base[a];
    }
    let n1 = norm(3, &t1);
    t1.iter_mut().for_each(|x| *x /= n1);
    let t2 = [base[1] * t1[2] - base[2] * t1[1], base[2] * t1[0] - base[0] * t1[2], base[0] * t1[1] - base[1] * t1[0]];
    let mut out = [0.0; 3];
    for a in 0..3 {
        out[a] = local[0] * t1[a] + local[1] * t2[a] + local[2] * base[a];
    }
    out
}

/// Rasterized density of one particle.
#[derive(Clone, Debug)]
pub struct ParticleForce {
    pub particle: usize,
    pub center: Vec3,
    pub cells: Vec<u32>,
    /// Displacement of each cell from the particle center.
    pub disp: Vec<Vec3>,
    pub values: Vec<Vec3>,
    pub orientation: Vec3,
    /// f̄: force carried by the interior extension.
    pub fbar: Vec3,
    /// f̃: skew part of the interior moment ∫_{I} f ⊗ (x − x_n).
    pub ftilde: Mat,
    /// Net force and torque left after the neutrality projection.
    pub net_force: f64,
    pub net_torque: f64,
}

impl ParticleForce {
    /// ∫ f ⊗ (x − x_n) over the whole support.
    pub fn moment(&self, d: usize, cell_volume: f64) -> Mat {
        Mat::from_fn(d, |a, b| ksum(self.values.iter().zip(&self.disp).map(|(f, y)| f[a] * y[b])) * cell_volume)
    }
}

#[derive(Clone, Debug)]
pub struct ForceField {
    pub field: PeriodicField,
    pub particles: Vec<ParticleForce>,
    /// Largest per-particle net force or torque after projection.
    pub neutrality: f64,
    /// The orientation rule hit a repeated top eigenvalue.
    pub degenerate: bool,
}

impl SwimForceModel {
    pub fn dipole(fbar: f64, offset: f64, gamma: f64, width: f64) -> Result<Self> {
        let m = SwimForceModel { kind: ForceKind::Dipole, fbar, offset, gamma, width, orientation: Orientation::FrenkelShear };
        m.validate()?;
        Ok(m)
    }

    pub fn with_orientation(mut self, o: Orientation) -> Self {
        self.orientation = o;
        self
    }

    pub fn with_kind(mut self, k: ForceKind) -> Self {
        self.kind = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.offset > 1.0 && self.offset < 2.0) {
            return Err(invalid("offset", format!("{} must lie strictly between 1 and 2", self.offset)));
        }
        if !(self.width > 0.0) || self.offset - self.width < 1.0 || self.offset + self.width > 2.0 {
            return Err(invalid("width", format!("bump of width {} at offset {} leaves the shell 1 < |y| < 2", self.width, self.offset)));
        }
        if self.gamma != 1.0 && self.gamma != -1.0 {
            return Err(invalid("gamma", "must be +1 (puller) or -1 (pusher)"));
        }
        if !self.fbar.is_finite() {
            return Err(invalid("fbar", "must be finite"));
        }
        if let Orientation::Fixed(v) = &self.orientation {
            if !(norm(3, v) > 0.0) {
                return Err(invalid("orientation", "fixed vector must be nonzero"));
            }
        }
        Ok(())
    }

    /// Signed amplitude a(E) for orientation e.
    pub fn amplitude(&self, e: &StrainRate, dir: &Vec3) -> f64 {
        match self.kind {
            ForceKind::Dipole => self.fbar,
            ForceKind::Linear => self.fbar * e.mat().quad(dir),
            ForceKind::Saturating => self.fbar * e.mat().quad(dir).tanh(),
        }
    }

    /// Orientation of particle `n` under strain E; `seed` drives the noise.
    pub fn orientation_of(&self, e: &StrainRate, n: usize, seed: u64) -> (Vec3, bool) {
        let d = e.dim();
        match &self.orientation {
            Orientation::FrenkelShear => shear_orientation(e, 1.0),
            Orientation::Fixed(v) => {
                let nv = norm(d, v);
                let mut out = [0.0; 3];
                for a in 0..d {
                    out[a] = v[a] / nv;
                }
                (out, false)
            }
            Orientation::Random(k) => {
                let (base, deg) = shear_orientation(e, 1.0);
                (perturb(d, &base, *k, child_seed(seed, n as u64)), deg)
            }
        }
    }

    /// Constant C with ‖f_n(E)‖_∞ ≤ C⟨E⟩ for unit particles on resolving grids.
    pub fn activity_bound(&self, d: usize) -> f64 {
        let peak = 1.0 / (bump_mass(d) * self.width.powi(d as i32));
        // 1.5 absorbs discrete normalization and the shell correction
        1.5 * self.fbar.abs() * (peak + 1.0 / unit_ball_volume(d))
    }

    /// Rasterizes particle `n`'s density for a given orientation.
    pub fn particle_density(
        &self,
        ensemble: &ParticleEnsemble,
        n: usize,
        grid: &Grid,
        e: &StrainRate,
        dir: &Vec3,
        indicator_width: f64,
    ) -> Result<ParticleForce> {
        let d = grid.dim;
        let h = grid.spacing();
        let hv = grid.cell_volume();
        let p = &ensemble.particles[n];
        let rad = p.radius;
        let w = self.width * rad;
        if 2.0 * w < BUMP_CELLS * h {
            return Err(Error::UnderResolved { what: "swim-force bump", required: 2.0 * w / BUMP_CELLS, actual: h });
        }
        let a = self.amplitude(e, dir);
        let hw = 0.5 * indicator_width * h;
        let mut point = [0.0; 3];
        for k in 0..d {
            point[k] = self.gamma * self.offset * rad * dir[k];
        }
        let mut cells = Vec::new();
        let mut disp = Vec::new();
        let mut ext = Vec::new();
        let mut int = Vec::new();
        let mut shell = Vec::new();
        for_cells_within(grid, &p.center, 2.0 * rad + h, |idx, y| {
            let r = norm(d, &y);
            let mut q = [0.0; 3];
            for k in 0..d {
                q[k] = y[k] - point[k];
            }
            cells.push(idx as u32);
            disp.push(y);
            ext.push(bump(norm(d, &q) / w));
            // the interior extension lives on fully covered cells so that the
            // rigid particle carries all of it; the correction avoids the band
            let chi = indicator_profile(r, rad, hw);
            int.push(indicator_profile(r, rad - 2.0 * hw, hw));
            shell.push(shell_weight(r / rad) * (1.0 - chi));
        });
        let se = ksum(ext.iter().copied());
        let mut values: Vec<Vec3> = vec![[0.0; 3]; cells.len()];
        let mut fbar = [0.0; 3];
        let mut ftilde = Mat::zeros(d);
        if a != 0.0 {
            for t in 0..cells.len() {
                for k in 0..d {
                    values[t][k] = -a * dir[k] * ext[t] / (se * hv);
                }
            }
            let (ib, it) = interior_extension(d, hv, &disp, &int, &mut values)?;
            fbar = ib;
            ftilde = it;
            project_neutral(d, &disp, &shell, &mut values)?;
        }
        let (nf, nt) = net_resultants(d, hv, &disp, &values);
        Ok(ParticleForce {
            particle: n,
            center: p.center,
            cells,
            disp,
            values,
            orientation: *dir,
            fbar,
            ftilde,
            net_force: nf,
            net_torque: nt,
        })
    }

    /// Superposition of all particle densities under strain E.
    pub fn evaluate(&self, ensemble: &ParticleEnsemble, e: &StrainRate, grid: &Grid, indicator_width: f64) -> Result<ForceField> {
        evaluate_force(self, ensemble, e, grid, indicator_width)
    }
}

/// Adds the interior field c(y)(α + M y) carrying the opposite of the
/// exterior force and skew moment with vanishing symmetric moment, exactly in
/// the discrete sums. Returns (f̄, f̃).
fn interior_extension(d: usize, hv: f64, disp: &[Vec3], c: &[f64], values: &mut [Vec3]) -> Result<(Vec3, Mat)> {
    let fext: Vec<f64> = (0..d).map(|k| ksum(values.iter().map(|v| v[k])) * hv).collect();
    let mext = Mat::from_fn(d, |i, j| ksum(values.iter().zip(disp).map(|(v, y)| v[i] * y[j])) * hv);
    let target = mext.skew().scale(-1.0);
    let m0 = ksum(c.iter().copied()) * hv;
    if !(m0 > 0.0) {
        return Err(Error::Support("particle core has no grid cells".into()));
    }
    let m1: Vec<f64> = (0..d).map(|k| ksum(c.iter().zip(disp).map(|(w, y)| w * y[k])) * hv).collect();
    let m2 = nalgebra::DMatrix::from_fn(d, d, |i, j| ksum(c.iter().zip(disp).map(|(w, y)| w * y[i] * y[j])) * hv);
    // M K = T + F⊗m1/m0 with K = m2 − m1⊗m1/m0, then α = (−F − M m1)/m0
    let k = nalgebra::DMatrix::from_fn(d, d, |i, j| m2[(i, j)] - m1[i] * m1[j] / m0);
    let rhs = nalgebra::DMatrix::from_fn(d, d, |i, j| target.get(i, j) + fext[i] * m1[j] / m0);
    let kinv = k.try_inverse().ok_or_else(|| Error::Support("degenerate particle core".into()))?;
    let mm = rhs * kinv;
    let alpha: Vec<f64> = (0..d).map(|i| (-fext[i] - (0..d).map(|j| mm[(i, j)] * m1[j]).sum::<f64>()) / m0).collect();
    let mut fbar = [0.0; 3];
    for k in 0..d {
        fbar[k] = -fext[k];
    }
    for (t, v) in values.iter_mut().enumerate() {
        if c[t] == 0.0 {
            continue;
        }
        for i in 0..d {
            v[i] += c[t] * (alpha[i] + (0..d).map(|j| mm[(i, j)] * disp[t][j]).sum::<f64>());
        }
    }
    Ok((fbar, target))
}

/// Largest |net force| and |net torque| component of a rasterized density.
fn net_resultants(d: usize, hv: f64, disp: &[Vec3], values: &[Vec3]) -> (f64, f64) {
    let nrot = if d == 2 { 1 } else { 3 };
    let mut nf: f64 = 0.0;
    for k in 0..d {
        nf = nf.max((ksum(values.iter().map(|v| v[k])) * hv).abs());
    }
    let mut nt: f64 = 0.0;
    for k in 0..nrot {
        let s = ksum(values.iter().zip(disp).map(|(v, y)| dot(d, &rot_field(d, k, y), v)));
        nt = nt.max((s * hv).abs());
    }
    (nf, nt)
}

/// Adds s(y)(α + Θy) (Θ skew) so that net force and torque vanish.
fn project_neutral(d: usize, disp: &[Vec3], shell: &[f64], values: &mut [Vec3]) -> Result<()> {
    let nrot = if d == 2 { 1 } else { 3 };
    let m = d + nrot;
    // basis densities: s·e_k (k < d), s·rot_k(y)
    let basis = |j: usize, t: usize| -> Vec3 {
        if j < d {
            let mut v = [0.0; 3];
            v[j] = shell[t];
            v
        } else {
            let r = rot_field(d, j - d, &disp[t]);
            [shell[t] * r[0], shell[t] * r[1], shell[t] * r[2]]
        }
    };
    let functional = |i: usize, t: usize, v: &Vec3| -> f64 {
        if i < d {
            v[i]
        } else {
            dot(d, &rot_field(d, i - d, &disp[t]), v)
        }
    };
    for _pass in 0..2 {
        let mut a = nalgebra::DMatrix::zeros(m, m);
        let mut b = nalgebra::DVector::zeros(m);
        for i in 0..m {
            b[i] = -ksum((0..values.len()).map(|t| functional(i, t, &values[t])));
            for j in 0..m {
                a[(i, j)] = ksum((0..values.len()).map(|t| functional(i, t, &basis(j, t))));
            }
        }
        let coef = a.lu().solve(&b).ok_or_else(|| Error::Support("shell too coarse to carry the neutrality correction".into()))?;
        for (t, v) in values.iter_mut().enumerate() {
            for j in 0..m {
                let bj = basis(j, t);
                for k in 0..d {
                    v[k] += coef[j] * bj[k];
                }
            }
        }
    }
    Ok(())
}

/// Force field of all particles under strain E: exterior densities plus
/// interior extensions, each projected to exact discrete neutrality.
pub fn evaluate_force(model: &SwimForceModel, ensemble: &ParticleEnsemble, e: &StrainRate, grid: &Grid, indicator_width: f64) -> Result<ForceField> {
    evaluate_each(model, ensemble, &vec![*e; ensemble.len()], grid, indicator_width)
}

/// As [`evaluate_force`] with one strain per particle (the strain each
/// swimmer senses in a nonuniform flow).
pub fn evaluate_each(
    model: &SwimForceModel,
    ensemble: &ParticleEnsemble,
    strains: &[StrainRate],
    grid: &Grid,
    indicator_width: f64,
) -> Result<ForceField> {
    model.validate()?;
    if ensemble.dim != grid.dim || strains.iter().any(|e| e.dim() != grid.dim) {
        return Err(Error::ShapeMismatch("strain, ensemble and grid dimensions differ".into()));
    }
    if strains.len() != ensemble.len() {
        return Err(Error::ShapeMismatch(format!("{} strains for {} particles", strains.len(), ensemble.len())));
    }
    let mut field = PeriodicField::zeros(*grid, Rank::Vector);
    let mut particles = Vec::with_capacity(ensemble.len());
    let mut degenerate = false;
    let mut neutrality: f64 = 0.0;
    for n in 0..ensemble.len() {
        let e = &strains[n];
        let (dir, deg) = model.orientation_of(e, n, ensemble.seed);
        degenerate |= deg;
        let pf = model.particle_density(ensemble, n, grid, e, &dir, indicator_width)?;
        for (t, &idx) in pf.cells.iter().enumerate() {
            for k in 0..grid.dim {
                field.comps[k][idx as usize] += pf.values[t][k];
            }
        }
        neutrality = neutrality.max(pf.net_force).max(pf.net_torque);
        particles.push(pf);
    }
    Ok(ForceField { field, particles, neutrality, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::Particle;
    use crate::tensor::rotation;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn one(d: usize, l: f64, c: Vec3) -> ParticleEnsemble {
        ParticleEnsemble::new(d, l, 0.5, 7, vec![Particle { center: c, radius: 1.0 }]).unwrap()
    }

    fn shear(d: usize) -> StrainRate {
        StrainRate::shear(d, 0, 1, 1.0)
    }

    #[test]
    fn shear_orientation_of_simple_shear() {
        for d in [2, 3] {
            let (v, deg) = shear_orientation(&shear(d), 1.0);
            assert!(!deg);
            assert!((v[0] - FRAC_1_SQRT_2).abs() < 1e-12 && (v[1] - FRAC_1_SQRT_2).abs() < 1e-12 && v[2].abs() < 1e-12);
            let (w, _) = shear_orientation(&shear(d), -1.0);
            assert!((w[0] + FRAC_1_SQRT_2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_strain_is_degenerate_and_deterministic() {
        let (v, deg) = shear_orientation(&StrainRate::zero(3), 1.0);
        assert!(deg);
        assert_eq!(v, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn orientation_is_rotation_equivariant_up_to_sign() {
        let e = shear(3);
        let (v, _) = shear_orientation(&e, 1.0);
        for (th, axis) in [(0.3, [0.0, 0.0, 1.0]), (1.1, [1.0, 2.0, -0.5]), (2.5, [0.2, -1.0, 0.3])] {
            let r = rotation(3, th, &axis);
            let er = StrainRate::project(&e.mat().rotate(&r));
            let (vr, _) = shear_orientation(&er, 1.0);
            let rv = r.apply(&v);
            // direct check: vr is a unit top eigenvector of RERᵀ
            let lam = er.mat().quad(&vr);
            assert!((lam - 0.5).abs() < 1e-12);
            assert!((dot(3, &vr, &rv).abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_outside_shell_rejected() {
        assert!(SwimForceModel::dipole(1.0, 1.0, 1.0, 0.1).is_err());
        assert!(SwimForceModel::dipole(1.0, 2.0, 1.0, 0.1).is_err());
        assert!(SwimForceModel::dipole(1.0, 1.5, 1.0, 0.6).is_err());
        assert!(SwimForceModel::dipole(1.0, 1.5, 0.5, 0.1).is_err());
    }

    #[test]
    fn zero_amplitude_gives_zero_field() {
        let m = SwimForceModel::dipole(0.0, 1.5, 1.0, 0.3).unwrap();
        let g = Grid::new(2, 64, 8.0).unwrap();
        let f = evaluate_force(&m, &one(2, 8.0, [4.0, 4.0, 0.0]), &shear(2), &g, 2.0).unwrap();
        assert_eq!(f.field.max_abs(), 0.0);
    }

    #[test]
    fn empty_ensemble_gives_zero_field() {
        let m = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.3).unwrap();
        let g = Grid::new(2, 64, 8.0).unwrap();
        let f = evaluate_force(&m, &ParticleEnsemble::empty(2, 8.0, 0.5).unwrap(), &shear(2), &g, 2.0).unwrap();
        assert_eq!(f.field.max_abs(), 0.0);
    }

    #[test]
    fn discrete_density_is_neutral() {
        for d in [2, 3] {
            let (n, l) = if d == 2 { (64, 8.0) } else { (48, 6.0) };
            let g = Grid::new(d, n, l).unwrap();
            // off-grid center so that nothing cancels by symmetry
            let ens = one(d, l, [3.03, 2.91, 3.07]);
            let m = SwimForceModel::dipole(1.3, 1.5, -1.0, 0.3).unwrap().with_orientation(Orientation::Fixed([0.3, -0.8, 0.5]));
            let f = evaluate_force(&m, &ens, &StrainRate::zero(d), &g, 2.0).unwrap();
            // independent check on the superposed field
            let hv = g.cell_volume();
            for k in 0..d {
                assert!((ksum(f.field.comps[k].iter().copied()) * hv).abs() < 1e-12);
            }
            let pf = &f.particles[0];
            let nrot = if d == 2 { 1 } else { 3 };
            for k in 0..nrot {
                let t = ksum(pf.cells.iter().zip(&pf.disp).map(|(&i, y)| {
                    let v = rot_field(d, k, y);
                    (0..d).map(|a| v[a] * f.field.comps[a][i as usize]).sum::<f64>()
                }));
                assert!((t * hv).abs() < 1e-12, "torque {k}: {}", t * hv);
            }
            // the interior carries the propulsion
            let dir = pf.orientation;
            for k in 0..d {
                assert!((pf.fbar[k] - 1.3 * dir[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exterior_support_stays_in_shell() {
        let g = Grid::new(2, 128, 8.0).unwrap();
        let ens = one(2, 8.0, [4.0, 4.0, 0.0]);
        let m = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.15).unwrap();
        let f = evaluate_force(&m, &ens, &shear(2), &g, 2.0).unwrap();
        let hw = g.spacing();
        for (t, y) in f.particles[0].disp.iter().enumerate() {
            let r = norm(2, y);
            let v = f.particles[0].values[t];
            if norm(2, &v) > 0.0 {
                assert!(r < 2.0 + 1e-12);
            }
            if r < 1.0 - 3.0 * hw {
                // uniform interior f̄/|B'| on the core B' of radius 1 − 2·(indicator half-width)
                let core = PI * (1.0 - 2.0 * hw).powi(2);
                assert!((norm(2, &v) - 1.0 / core).abs() < 1e-2 / core, "{r} {v:?}");
            }
        }
    }

    #[test]
    fn under_resolved_bump_rejected() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let m = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.15).unwrap();
        assert!(matches!(evaluate_force(&m, &one(2, 8.0, [4.0, 4.0, 0.0]), &shear(2), &g, 2.0), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn pusher_and_puller_differ_by_reflecting_the_point_force() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let ens = one(2, 8.0, [4.0, 4.0, 0.0]);
        let push = SwimForceModel::dipole(1.0, 1.5, -1.0, 0.3).unwrap().with_orientation(Orientation::Fixed([1.0, 0.0, 0.0]));
        let pull = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.3).unwrap().with_orientation(Orientation::Fixed([1.0, 0.0, 0.0]));
        let a = evaluate_force(&push, &ens, &StrainRate::zero(2), &g, 2.0).unwrap().field;
        let b = evaluate_force(&pull, &ens, &StrainRate::zero(2), &g, 2.0).unwrap().field;
        // center sits on a grid node and e = e1: reflect x1 about the center
        let n = g.n;
        let ic = 32;
        for i in 0..n {
            for j in 0..n {
                let ir = (2 * ic + n - i) % n;
                let x = a.comps[0][g.flat(&[i, j, 0])];
                let y = b.comps[0][g.flat(&[ir, j, 0])];
                // the interior is symmetric; the bump moves to the mirrored point
                assert!((x - y).abs() < 1e-10, "({i},{j}) {x} vs {y}");
            }
        }
    }

    #[test]
    fn density_obeys_activity_bound() {
        let g = Grid::new(2, 128, 8.0).unwrap();
        let ens = one(2, 8.0, [4.1, 3.9, 0.0]);
        for kind in [ForceKind::Dipole, ForceKind::Linear, ForceKind::Saturating] {
            let m = SwimForceModel::dipole(2.0, 1.5, 1.0, 0.15).unwrap().with_kind(kind);
            let c = m.activity_bound(2);
            for s in [0.0, 1.0, 10.0] {
                let e = shear(2).scale(s / shear(2).norm().max(1e-300));
                let f = evaluate_force(&m, &ens, &e, &g, 2.0).unwrap();
                assert!(f.field.max_abs() <= c * e.bracket(), "{kind:?} |E|={s}: {} > {}", f.field.max_abs(), c * e.bracket());
            }
        }
    }

    #[test]
    fn random_orientation_is_reproducible_and_spread() {
        let m = SwimForceModel::dipole(1.0, 1.5, 1.0, 0.3).unwrap().with_orientation(Orientation::Random(2.0));
        let e = shear(3);
        let (base, _) = shear_orientation(&e, 1.0);
        let mut cosines = Vec::new();
        for n in 0..400 {
            let (v, _) = m.orientation_of(&e, n, 11);
            assert_eq!(v, m.orientation_of(&e, n, 11).0);
            assert!((norm(3, &v) - 1.0).abs() < 1e-12);
            cosines.push(dot(3, &v, &base));
        }
        // vMF mean cosine: coth κ − 1/κ
        let k: f64 = 2.0;
        let expect = 1.0 / k.tanh() - 1.0 / k;
        let (mean, se) = crate::util::mean_se(&cosines);
        assert!((mean - expect).abs() < 4.0 * se, "{mean} vs {expect} ± {se}");
    }

    #[test]
    fn orientation_strings_round_trip() {
        for s in ["frenkel-shear", "fixed:1,0,0", "random:2.5"] {
            let o: Orientation = s.parse().unwrap();
            assert_eq!(o.to_string().parse::<Orientation>().unwrap(), o);
        }
        assert!("spinning".parse::<Orientation>().is_err());
        assert!("fixed:0,0".parse::<Orientation>().is_err());
    }
}
