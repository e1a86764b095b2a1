//! Stokes flow with rigid inclusions on the torus.
//!
//! Minimizes ∫ μ|e|² − ∫ f·u over periodic divergence-free u subject to
//! e = D(u) + E, with μ = 1/(1−χ) (μ = ∞ inside particles). The constraint is
//! handled by an augmented Lagrangian on a strain multiplier Λ (ADMM):
//!
//!   u-step  (r/2)(−Δu) + ∇q = f + div(Λ − r e)       (spectral, exact)
//!   e-step  e = (Λ + r z)/(2μ + r),  z = D(u) + E     (pointwise)
//!   Λ-step  Λ += r (z − e)
//!
//! At the fixed point Λ = 2μ z is the deviatoric stress, which vanishes
//! nowhere inside particles and equals 2z in the fluid. The ADMM map is
//! accelerated with Anderson mixing and safeguarded by keeping the best iterate.
//!
//! Velocity and force live at cell centers; strain, stress and pressure live
//! at cell corners and use the compact-stencil derivative of [`Staggered`].
//! With the band-limited spectral derivative the pointwise rigidity
//! constraint is nearly infeasible (its multiplier grows without bound and
//! the iteration stalls); the compact stencil makes it locally satisfiable.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::anderson::Anderson;
use super::fft::{Spectral, Staggered};
use super::geometry::Geometry;
use super::grid::{Grid, PeriodicField, Rank};
use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::tensor::{sym_pairs, sym_weight, Mat, StrainRate, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Relative fixed-point residual at which the solve stops.
    pub tol: f64,
    pub max_iters: usize,
    pub anderson_depth: usize,
    /// Augmented-Lagrangian penalty r.
    pub penalty: f64,
    /// Indicator transition width in grid cells.
    pub indicator_width: f64,
    /// Iterations without a 1% improvement before declaring stagnation.
    pub stagnation_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-8, max_iters: 3000, anderson_depth: 8, penalty: 2.0, indicator_width: 2.0, stagnation_window: 50 }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "must be positive"));
        }
        if !(self.penalty > 0.0) {
            return Err(invalid("penalty", "must be positive"));
        }
        if self.max_iters == 0 || self.stagnation_window == 0 {
            return Err(invalid("max_iters", "iteration caps must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub residual: f64,
    pub div_res: f64,
    pub rigid_res: f64,
    pub accepted: bool,
}

/// Boundary resultants of one particle, from cutoff-weighted volume integrals.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Reaction {
    /// ∫_{∂I} σν (fluid traction on the particle).
    pub force: Vec3,
    /// ∫_{∂I} (x − x_n) × σν; 2D stores the scalar in slot 0.
    pub torque: Vec3,
    /// ∫_{I} f (force applied inside the particle).
    pub interior_force: Vec3,
    pub interior_torque: Vec3,
    /// ∫ ζ (Λ − 2z): deviatoric stress carried by the particle.
    pub stresslet: Mat,
    /// ∫_{I} P.
    pub pressure_moment: f64,
    /// ∫_{I} f ⊗ (x − x_n).
    pub interior_moment: Mat,
}

impl Reaction {
    /// ∫_{∂I} σν ⊗ (x − x_n), symmetrized.
    pub fn traction_moment(&self) -> Mat {
        let d = self.stresslet.dim;
        self.stresslet.sub(&Mat::identity(d).scale(self.pressure_moment)).sub(&self.interior_moment.sym())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Residuals {
    /// ‖div u‖ / ‖∇u‖.
    pub div: f64,
    /// rms of D(u)+E over particle cores, relative to the strain scale.
    pub rigid: f64,
    pub fixed_point: f64,
}

#[derive(Clone, Debug)]
pub struct FlowSolution {
    pub velocity: PeriodicField,
    pub pressure: PeriodicField,
    /// Deviatoric stress Λ (2z in the fluid, constraint stress in particles).
    pub stress: PeriodicField,
    /// z = D(u) + E.
    pub strain: PeriodicField,
    pub body_strain: StrainRate,
    pub reactions: Vec<Reaction>,
    pub residuals: Residuals,
    pub log: Vec<IterRecord>,
    pub iterations: usize,
    pub discarded_mean_force: Vec3,
    pub scale: f64,
    /// Particle geometry at cell centers (force side).
    pub geometry: Option<Arc<Geometry>>,
    /// Particle geometry at cell corners (stress side).
    pub corner_geometry: Option<Arc<Geometry>>,
    /// Raw multiplier state, reusable as a warm start.
    pub state: Vec<f64>,
}

impl FlowSolution {
    pub fn grid(&self) -> Grid {
        self.velocity.grid
    }

    /// ⟨Λ : z⟩ = ⟨2μ|D(u)+E|²⟩ by grid quadrature.
    pub fn energy_density(&self) -> f64 {
        let pairs = sym_pairs(self.grid().dim);
        let mut s = 0.0;
        for (q, p) in pairs.iter().enumerate() {
            let w = sym_weight(*p);
            s += w * crate::util::ksum(self.stress.comps[q].iter().zip(&self.strain.comps[q]).map(|(a, b)| a * b));
        }
        s / self.grid().len() as f64
    }

    /// ⟨Λ : z⟩ by Parseval over Fourier coefficients.
    pub fn energy_density_parseval(&self, spectral: &Spectral) -> f64 {
        let pairs = sym_pairs(self.grid().dim);
        let n = self.grid().len() as f64;
        let mut s = 0.0;
        for (q, p) in pairs.iter().enumerate() {
            let (a, b) = spectral.forward_pair(&self.stress.comps[q], &self.strain.comps[q]);
            s += sym_weight(*p) * crate::util::ksum(a.iter().zip(&b).map(|(x, y)| (x * y.conj()).re));
        }
        s / (n * n)
    }

    /// Mean of the stress field ⟨Λ⟩.
    pub fn mean_stress(&self) -> Mat {
        let d = self.grid().dim;
        let c: Vec<f64> = (0..self.stress.comps.len()).map(|q| self.stress.mean(q)).collect();
        Mat::from_sym_components(d, &c)
    }

    /// ⟨D(u)⟩ = ⟨z⟩ − E: zero for periodic u.
    pub fn mean_strain_perturbation(&self) -> Mat {
        let d = self.grid().dim;
        let c: Vec<f64> = (0..self.strain.comps.len()).map(|q| self.strain.mean(q)).collect();
        Mat::from_sym_components(d, &c).sub(self.body_strain.mat())
    }

    /// ∫ f·u for a force field on the same grid.
    pub fn work(&self, force: &PeriodicField) -> f64 {
        let h = self.grid().cell_volume();
        let mut s = 0.0;
        for (a, b) in self.velocity.comps.iter().zip(&force.comps) {
            s += crate::util::ksum(a.iter().zip(b).map(|(x, y)| x * y));
        }
        s * h
    }

    /// ∫ ⟨Λ:D(u)⟩ over the cell = 2∫μ|D(u)|² when E = 0.
    pub fn dissipation(&self) -> f64 {
        self.energy_density() * self.grid().volume()
    }

    /// Squared H¹ seminorm ∫|∇u|² (spectral).
    pub fn grad_norm_sq(&self, spectral: &Spectral) -> f64 {
        grad_norm_sq(spectral, &self.velocity)
    }
}

/// ∫|∇u|² with the corner derivative used by the solver.
pub fn grad_norm_sq(spectral: &Spectral, u: &PeriodicField) -> f64 {
    let g = u.grid;
    let n = g.len() as f64;
    let st = Staggered::new(&g);
    let mut s = 0.0;
    for comp in &u.comps {
        let f = spectral.forward(comp);
        for k in 0..g.len() {
            s += st.k2[k] * f[k].norm_sqr();
        }
    }
    s / (n * n) * g.volume()
}

/// Reusable solver for one particle configuration and grid.
pub struct RigidProblem {
    pub spectral: Arc<Spectral>,
    pub geometry: Arc<Geometry>,
    pub corner_geometry: Arc<Geometry>,
    pub opts: SolverOptions,
    fac: Vec<f64>,
    stag: Staggered,
    sym_index: [[usize; 3]; 3],
}

struct Eval {
    g: Vec<f64>,
    z: Vec<Vec<f64>>,
    uhat: Vec<Vec<C64>>,
}

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

impl RigidProblem {
    pub fn new(ensemble: &ParticleEnsemble, grid: Grid, opts: SolverOptions) -> Result<Self> {
        let spectral = Arc::new(Spectral::new(grid));
        Self::with_spectral(ensemble, spectral, opts)
    }

    pub fn with_spectral(ensemble: &ParticleEnsemble, spectral: Arc<Spectral>, opts: SolverOptions) -> Result<Self> {
        opts.validate()?;
        let grid = spectral.grid;
        let geometry = Arc::new(Geometry::new(ensemble, grid, opts.indicator_width)?);
        let corner_geometry = Arc::new(Geometry::corners(ensemble, grid, opts.indicator_width)?);
        let r = opts.penalty;
        // 1/(2μ + r) with μ = 1/(1−χ)
        let fac = corner_geometry.chi.iter().map(|c| (1.0 - c) / (2.0 + r * (1.0 - c))).collect();
        let stag = Staggered::new(&grid);
        let mut sym_index = [[0usize; 3]; 3];
        for (q, &(i, j)) in sym_pairs(grid.dim).iter().enumerate() {
            sym_index[i][j] = q;
            sym_index[j][i] = q;
        }
        Ok(RigidProblem { spectral, geometry, corner_geometry, opts, fac, stag, sym_index })
    }

    pub fn grid(&self) -> Grid {
        self.spectral.grid
    }

    #[inline]
    fn kvec(&self, k: usize) -> Vec3 {
        let mut kk = [0.0; 3];
        for (a, v) in kk.iter_mut().zip(&self.stag.k) {
            *a = v[k];
        }
        kk
    }

    fn ncomp(&self) -> usize {
        sym_pairs(self.grid().dim).len()
    }

    /// One ADMM sweep.
    fn apply(&self, x: &[f64], fhat: &[Vec<C64>], ebody: &[f64]) -> Eval {
        let grid = self.grid();
        let (n, d, c, r) = (grid.len(), grid.dim, self.ncomp(), self.opts.penalty);
        let s: Vec<Vec<f64>> = (0..c).map(|q| (0..n).map(|i| x[q * n + i] - r * x[(c + q) * n + i]).collect()).collect();
        let refs: Vec<&[f64]> = s.iter().map(|v| v.as_slice()).collect();
        let shat = self.spectral.forward_many(&refs);
        let mut uhat = vec![vec![ZERO; n]; d];
        let mut dhat = vec![vec![ZERO; n]; c];
        let pairs = sym_pairs(d);
        for k in 0..n {
            let k2 = self.stag.k2[k];
            if k2 == 0.0 {
                continue;
            }
            let kk = self.kvec(k);
            let back = C64::new(0.0, 1.0) * self.stag.phase[k].conj();
            let mut g = [ZERO; 3];
            for i in 0..d {
                let mut acc = fhat[i][k];
                for j in 0..d {
                    acc += back * kk[j] * shat[self.sym_index[i][j]][k];
                }
                g[i] = acc;
            }
            let kg: C64 = (0..d).map(|i| g[i] * kk[i]).sum();
            let coef = 2.0 / (r * k2);
            let mut u = [ZERO; 3];
            for i in 0..d {
                u[i] = (g[i] - kg * (kk[i] / k2)) * coef;
                uhat[i][k] = u[i];
            }
            for (q, &(a, b)) in pairs.iter().enumerate() {
                dhat[q][k] = self.stag.strain(k, &u, a, b);
            }
        }
        let mut z = self.spectral.inverse_many(&dhat);
        let mut g = vec![0.0; 2 * c * n];
        for q in 0..c {
            let zq = &mut z[q];
            for i in 0..n {
                zq[i] += ebody[q];
                let lam = x[q * n + i];
                let e = (lam + r * zq[i]) * self.fac[i];
                g[q * n + i] = lam + r * (zq[i] - e);
                g[(c + q) * n + i] = e;
            }
        }
        Eval { g, z, uhat }
    }

    fn residual(&self, x: &[f64], g: &[f64], scale: f64) -> f64 {
        let (n, c, r) = (self.grid().len(), self.ncomp(), self.opts.penalty);
        let pairs = sym_pairs(self.grid().dim);
        let mut s = 0.0;
        for q in 0..c {
            let w = sym_weight(pairs[q]);
            for i in 0..n {
                let dl = (g[q * n + i] - x[q * n + i]) / r;
                let de = g[(c + q) * n + i] - x[(c + q) * n + i];
                s += w * (dl * dl + de * de);
            }
        }
        (s / n as f64).sqrt() / scale
    }

    fn core_strain_rms(&self, z: &[Vec<f64>], scale: f64) -> f64 {
        let pairs = sym_pairs(self.grid().dim);
        let mut s = 0.0;
        let mut cnt = 0usize;
        for (i, chi) in self.corner_geometry.chi.iter().enumerate() {
            if *chi >= 1.0 {
                cnt += 1;
                for (q, p) in pairs.iter().enumerate() {
                    s += sym_weight(*p) * z[q][i] * z[q][i];
                }
            }
        }
        if cnt == 0 {
            0.0
        } else {
            (s / cnt as f64).sqrt() / scale
        }
    }

    /// Solves with body strain E and optional body force (force per volume,
    /// acting on fluid and particles alike). `init` is a warm-start state.
    pub fn solve(&self, body_strain: &StrainRate, force: Option<&PeriodicField>, init: Option<&[f64]>) -> Result<FlowSolution> {
        let grid = self.grid();
        let (n, d, c) = (grid.len(), grid.dim, self.ncomp());
        if body_strain.dim() != d {
            return Err(Error::ShapeMismatch("strain dimension differs from grid".into()));
        }
        if let Some(f) = force {
            if f.grid != grid || f.rank != Rank::Vector {
                return Err(Error::ShapeMismatch("force must be a vector field on the solver grid".into()));
            }
        }
        let ebody = body_strain.mat().sym_components();
        let mut discarded = [0.0; 3];
        let fhat: Vec<Vec<C64>> = match force {
            Some(f) => {
                let refs: Vec<&[f64]> = f.comps.iter().map(|v| v.as_slice()).collect();
                let mut fh = self.spectral.forward_many(&refs);
                for (a, comp) in fh.iter_mut().enumerate() {
                    discarded[a] = comp[0].re / n as f64;
                    for (k, v) in comp.iter_mut().enumerate() {
                        if self.stag.k2[k] == 0.0 {
                            *v = ZERO;
                        }
                    }
                }
                fh
            }
            None => vec![vec![ZERO; n]; d],
        };
        // strain scale from the particle-free response
        let free_dhat = self.free_strain_hat(&fhat);
        let free_ms: f64 = free_dhat
            .iter()
            .zip(sym_pairs(d))
            .map(|(v, p)| sym_weight(*p) * v.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / (n as f64 * n as f64);
        let scale = body_strain.norm() + free_ms.sqrt();
        if scale == 0.0 {
            let x = vec![0.0; 2 * c * n];
            let ev = self.apply(&x, &fhat, &ebody);
            return Ok(self.finish(ev, &fhat, body_strain, force, Vec::new(), 0, discarded, 1.0, 0.0));
        }
        let mut x: Vec<f64> = match init {
            Some(s) if s.len() == 2 * c * n => s.to_vec(),
            Some(_) => return Err(Error::ShapeMismatch("warm-start state has the wrong length".into())),
            None => {
                let mut z0 = self.spectral.inverse_many(&free_dhat);
                let mut x = vec![0.0; 2 * c * n];
                for q in 0..c {
                    for i in 0..n {
                        z0[q][i] += ebody[q];
                        x[q * n + i] = 2.0 * z0[q][i];
                        x[(c + q) * n + i] = z0[q][i] * (1.0 - self.corner_geometry.chi[i]);
                    }
                }
                x
            }
        };
        let mut aa = Anderson::new(self.opts.anderson_depth);
        let mut log = Vec::new();
        let mut best = f64::INFINITY;
        let mut best_x = x.clone();
        let mut reference = f64::INFINITY;
        let mut last_improve = 0;
        let mut iters = 0;
        loop {
            iters += 1;
            let ev = self.apply(&x, &fhat, &ebody);
            let res = self.residual(&x, &ev.g, scale);
            let accepted = res < best;
            if accepted {
                best = res;
                best_x.copy_from_slice(&x);
            }
            if best < 0.99 * reference {
                reference = best;
                last_improve = iters;
            }
            let rigid = self.core_strain_rms(&ev.z, scale);
            log.push(IterRecord { iter: iters, residual: res, div_res: self.div_residual(&ev.uhat), rigid_res: rigid, accepted });
            if res <= self.opts.tol {
                break;
            }
            if iters - last_improve >= self.opts.stagnation_window || iters >= self.opts.max_iters {
                return Err(Error::Stagnation {
                    residual: best,
                    tol: self.opts.tol,
                    iterations: iters,
                    history: log.iter().map(|r| r.residual).collect(),
                });
            }
            if res > 1e4 * best {
                aa.reset();
                x.copy_from_slice(&best_x);
                continue;
            }
            x = aa.next(&x, &ev.g);
        }
        let ev = self.apply(&best_x, &fhat, &ebody);
        Ok(self.finish(ev, &fhat, body_strain, force, log, iters, discarded, scale, best))
    }

    fn free_strain_hat(&self, fhat: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let grid = self.grid();
        let (n, d) = (grid.len(), grid.dim);
        let pairs = sym_pairs(d);
        let mut out = vec![vec![ZERO; n]; pairs.len()];
        for k in 0..n {
            let k2 = self.stag.k2[k];
            if k2 == 0.0 {
                continue;
            }
            let kk = self.kvec(k);
            let kf: C64 = (0..d).map(|i| fhat[i][k] * kk[i]).sum();
            let mut u = [ZERO; 3];
            for i in 0..d {
                u[i] = (fhat[i][k] - kf * (kk[i] / k2)) / k2;
            }
            for (q, &(a, b)) in pairs.iter().enumerate() {
                out[q][k] = self.stag.strain(k, &u, a, b);
            }
        }
        out
    }

    fn div_residual(&self, uhat: &[Vec<C64>]) -> f64 {
        let d = self.grid().dim;
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..self.grid().len() {
            let mut dv = ZERO;
            for a in 0..d {
                dv += uhat[a][k] * self.stag.k[a][k];
                den += self.stag.k2[k] * uhat[a][k].norm_sqr();
            }
            num += dv.norm_sqr();
        }
        if den == 0.0 {
            0.0
        } else {
            (num / den).sqrt()
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        ev: Eval,
        fhat: &[Vec<C64>],
        body_strain: &StrainRate,
        force: Option<&PeriodicField>,
        log: Vec<IterRecord>,
        iterations: usize,
        discarded: Vec3,
        scale: f64,
        best: f64,
    ) -> FlowSolution {
        let grid = self.grid();
        let (n, d, c) = (grid.len(), grid.dim, self.ncomp());
        let lam: Vec<Vec<f64>> = (0..c).map(|q| ev.g[q * n..(q + 1) * n].to_vec()).collect();
        let refs: Vec<&[f64]> = lam.iter().map(|v| v.as_slice()).collect();
        let lhat = self.spectral.forward_many(&refs);
        let mut phat = vec![ZERO; n];
        for (k, ph) in phat.iter_mut().enumerate() {
            let k2 = self.stag.k2[k];
            if k2 == 0.0 {
                continue;
            }
            let kk = self.kvec(k);
            let fwd = C64::new(0.0, -1.0) * self.stag.phase[k];
            let mut acc = ZERO;
            for i in 0..d {
                acc += fwd * kk[i] * fhat[i][k];
                for j in 0..d {
                    acc += lhat[self.sym_index[i][j]][k] * (kk[i] * kk[j]);
                }
            }
            *ph = acc / k2;
        }
        let p = self.spectral.inverse(&phat);
        let u = self.spectral.inverse_many(&ev.uhat);
        let div = self.div_residual(&ev.uhat);
        let rigid = self.core_strain_rms(&ev.z, scale);
        let velocity = PeriodicField { grid, rank: Rank::Vector, comps: u };
        let pressure = PeriodicField { grid, rank: Rank::Scalar, comps: vec![p] };
        let stress = PeriodicField { grid, rank: Rank::SymTensor, comps: lam };
        let strain = PeriodicField { grid, rank: Rank::SymTensor, comps: ev.z };
        let reactions = self.reactions(&stress, &strain, &pressure, force);
        FlowSolution {
            velocity,
            pressure,
            stress,
            strain,
            body_strain: *body_strain,
            reactions,
            residuals: Residuals { div, rigid, fixed_point: best },
            log,
            iterations,
            discarded_mean_force: discarded,
            scale,
            geometry: Some(self.geometry.clone()),
            corner_geometry: Some(self.corner_geometry.clone()),
            state: ev.g,
        }
    }

    fn reactions(&self, stress: &PeriodicField, strain: &PeriodicField, pressure: &PeriodicField, force: Option<&PeriodicField>) -> Vec<Reaction> {
        let grid = self.grid();
        let d = grid.dim;
        let hv = grid.cell_volume();
        let pairs = sym_pairs(d);
        let chi = &self.geometry.chi;
        let p = &pressure.comps[0];
        let nrot = if d == 2 { 1 } else { 3 };
        self.geometry
            .stencils
            .iter()
            .zip(&self.corner_geometry.stencils)
            .map(|(st, sc)| {
                let mut r = Reaction {
                    stresslet: Mat::zeros(d),
                    interior_moment: Mat::zeros(d),
                    ..Default::default()
                };
                // body-force terms at centers
                if let Some(ff) = force {
                    for t in 0..st.cells.len() {
                        let idx = st.cells[t] as usize;
                        let y = st.disp[t];
                        let (z, cn) = (st.zeta[t], st.chi[t]);
                        let mut f = [0.0; 3];
                        for a in 0..d {
                            f[a] = ff.comps[a][idx];
                        }
                        for a in 0..d {
                            r.force[a] += (1.0 - chi[idx]) * z * f[a];
                            r.interior_force[a] += cn * f[a];
                        }
                        for k in 0..nrot {
                            let v = rot_field(d, k, &y);
                            let vf: f64 = (0..d).map(|a| v[a] * f[a]).sum();
                            r.torque[k] += (1.0 - chi[idx]) * z * vf;
                            r.interior_torque[k] += cn * vf;
                        }
                        if cn > 0.0 {
                            for a in 0..d {
                                for b in 0..d {
                                    r.interior_moment.m[a][b] += cn * f[a] * y[b];
                                }
                            }
                        }
                    }
                }
                // stress terms at corners; the cutoff gradient is the discrete
                // adjoint of the divergence so that force balance is exact
                let corners = 1usize << d;
                let hinv = 1.0 / (grid.spacing() * (corners / 2) as f64);
                for t in 0..sc.cells.len() {
                    let idx = sc.cells[t] as usize;
                    let y = sc.disp[t];
                    let (z, cn) = (sc.zeta[t], sc.chi[t]);
                    let mut sig = Mat::zeros(d);
                    for (q, &(a, b)) in pairs.iter().enumerate() {
                        sig.m[a][b] = stress.comps[q][idx];
                        sig.m[b][a] = stress.comps[q][idx];
                    }
                    for a in 0..d {
                        sig.m[a][a] -= p[idx];
                    }
                    // −Σ σ : ∇_h(ζ w) over w = e_a and the rotations
                    let mut gz = [0.0; 3];
                    let mut grot = [Mat::zeros(d), Mat::zeros(d), Mat::zeros(d)];
                    let mut any = false;
                    for s in 0..corners {
                        let mut yc = [0.0; 3];
                        for a in 0..d {
                            let sa = ((s >> a) & 1) as f64;
                            yc[a] = y[a] + (sa - 0.5) * grid.spacing();
                        }
                        let zc = st.cutoff(crate::tensor::norm(d, &yc));
                        if zc == 0.0 {
                            continue;
                        }
                        any = true;
                        for b in 0..d {
                            let sign = if (s >> b) & 1 == 1 { hinv } else { -hinv };
                            gz[b] += sign * zc;
                            for (k, gr) in grot.iter_mut().enumerate().take(nrot) {
                                let v = rot_field(d, k, &yc);
                                for a in 0..d {
                                    gr.m[a][b] += sign * zc * v[a];
                                }
                            }
                        }
                    }
                    if any {
                        let sdz = sig.apply(&gz);
                        for a in 0..d {
                            r.force[a] -= sdz[a];
                        }
                        for k in 0..nrot {
                            r.torque[k] -= sig.ddot(&grot[k]);
                        }
                    }
                    if z > 0.0 {
                        for &(a, b) in pairs {
                            let q = self.sym_index[a][b];
                            let v = z * (stress.comps[q][idx] - 2.0 * strain.comps[q][idx]);
                            r.stresslet.m[a][b] += v;
                            if a != b {
                                r.stresslet.m[b][a] += v;
                            }
                        }
                    }
                    r.pressure_moment += cn * p[idx];
                }
                for a in 0..3 {
                    r.force[a] *= hv;
                    r.interior_force[a] *= hv;
                    r.torque[a] *= hv;
                    r.interior_torque[a] *= hv;
                }
                r.stresslet = r.stresslet.scale(hv);
                r.pressure_moment *= hv;
                r.interior_moment = r.interior_moment.scale(hv);
                r
            })
            .collect()
    }
}

/// Rigid rotation generator k applied at displacement y: 2D (−y₂, y₁); 3D e_k × y.
pub fn rot_field(d: usize, k: usize, y: &Vec3) -> Vec3 {
    if d == 2 {
        return [-y[1], y[0], 0.0];
    }
    match k {
        0 => [0.0, -y[2], y[1]],
        1 => [y[2], 0.0, -y[0]],
        _ => [-y[1], y[0], 0.0],
    }
}
