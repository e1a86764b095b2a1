//! Effective tensors from cell problems: passive viscosity B_pas, its
//! pressure companion b̄, the active viscosity B_act(E) (paired against
//! passive correctors only), F̄(E), and optionally C̄(E), c̄(E) from active
//! corrector solves. Monte Carlo over realizations, common random numbers
//! across strain directions and queries.

use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{sample_hardcore, ParticleEnsemble};
use crate::error::{invalid, Error, Result};
use crate::forcing::SwimForceModel;
use crate::stokes::geometry::for_cells_within;
use crate::stokes::grid::Grid;
use crate::stokes::rigid::{RigidProblem, SolverOptions};
use crate::tensor::{dot, strain_basis, strain_dim, sym_pairs, sym_weight, Mat, StrainRate, Vec3};
use crate::util::{child_seed, ksum, least_squares, mean_se, unit_ball_volume};

/// Passive corrector velocity ψ_j + E_j(x − x_n) sampled on the cells around one particle.
#[derive(Clone, Debug)]
pub struct ParticleKernel {
    pub center: Vec3,
    pub cells: Vec<u32>,
    /// values[j][t]: basis direction j at cell t.
    pub values: Vec<Vec<Vec3>>,
}

/// Everything the assembly needs from the passive solves of one realization.
#[derive(Clone, Debug)]
pub struct PassiveRealization {
    pub seed: u64,
    pub side: f64,
    pub n: usize,
    pub dim: usize,
    pub volume_fraction: f64,
    /// cross[i][j] = ⟨Λ_i : z_j⟩.
    pub cross: Vec<Vec<f64>>,
    /// Σ_n ∫_{∂I_n} σ(ψ_j + E_j x)ν ⊗_s (x − x_n), per unit cell volume.
    pub traction: Vec<Mat>,
    pub kernels: Vec<ParticleKernel>,
    pub iterations: usize,
    pub max_residual: f64,
}

/// Cells carrying swim forces: all within 2R + h of the center.
fn force_reach(radius: f64, grid: &Grid) -> f64 {
    2.0 * radius + grid.spacing()
}

/// Solves ψ_j for every basis direction on one ensemble.
pub fn solve_passive_realization(ens: &ParticleEnsemble, grid: Grid, opts: &SolverOptions) -> Result<PassiveRealization> {
    let d = grid.dim;
    let problem = RigidProblem::new(ens, grid, opts.clone())?;
    let basis = strain_basis(d);
    let pairs = sym_pairs(d);
    let vol = grid.volume();
    let mut sols = Vec::with_capacity(basis.len());
    for e in &basis {
        sols.push(problem.solve(e, None, None)?);
    }
    let ntot = grid.len() as f64;
    let cross: Vec<Vec<f64>> = sols
        .iter()
        .map(|si| {
            sols.iter()
                .map(|sj| {
                    let mut s = 0.0;
                    for (q, p) in pairs.iter().enumerate() {
                        s += sym_weight(*p) * ksum(si.stress.comps[q].iter().zip(&sj.strain.comps[q]).map(|(a, b)| a * b));
                    }
                    s / ntot
                })
                .collect()
        })
        .collect();
    let traction: Vec<Mat> = sols
        .iter()
        .map(|s| s.reactions.iter().fold(Mat::zeros(d), |acc, r| acc.add(&r.traction_moment())).scale(1.0 / vol))
        .collect();
    let kernels = ens
        .particles
        .iter()
        .map(|p| {
            let mut cells = Vec::new();
            let mut disp = Vec::new();
            for_cells_within(&grid, &p.center, force_reach(p.radius, &grid), |idx, y| {
                cells.push(idx as u32);
                disp.push(y);
            });
            let values = sols
                .iter()
                .zip(&basis)
                .map(|(s, e)| {
                    cells
                        .iter()
                        .zip(&disp)
                        .map(|(&i, y)| {
                            let ey = e.mat().apply(y);
                            let mut v = [0.0; 3];
                            for a in 0..d {
                                v[a] = s.velocity.comps[a][i as usize] + ey[a];
                            }
                            v
                        })
                        .collect()
                })
                .collect();
            ParticleKernel { center: p.center, cells, values }
        })
        .collect();
    Ok(PassiveRealization {
        seed: ens.seed,
        side: grid.side,
        n: grid.n,
        dim: d,
        volume_fraction: ens.volume_fraction(),
        cross,
        traction,
        kernels,
        iterations: sols.iter().map(|s| s.iterations).sum(),
        max_residual: sols.iter().map(|s| s.residuals.fixed_point).fold(0.0, f64::max),
    })
}

fn check_consistent(prs: &[PassiveRealization]) -> Result<()> {
    let first = prs.first().ok_or_else(|| invalid("realizations", "need at least one"))?;
    for p in prs {
        if p.dim != first.dim || p.n != first.n || (p.side - first.side).abs() > 1e-12 * first.side {
            return Err(Error::Inconsistent(format!(
                "realizations mix cells (d={}, L={}, N={}) and (d={}, L={}, N={})",
                first.dim, first.side, first.n, p.dim, p.side, p.n
            )));
        }
    }
    Ok(())
}

/// Entrywise mean and standard error over realizations.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Estimate {
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
}

impl Estimate {
    pub fn from_samples(samples: &[Vec<f64>]) -> Self {
        let m = samples.first().map_or(0, |s| s.len());
        let (mean, se) = (0..m)
            .map(|k| {
                let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
                mean_se(&col)
            })
            .unzip();
        Estimate { mean, se }
    }
}

/// One realization's B_pas, row-major m×m, normalized so that E:B_pas E = ½⟨Λ_E : z_E⟩.
pub fn bpas_sample(pr: &PassiveRealization) -> Vec<f64> {
    pr.cross.iter().flat_map(|row| row.iter().map(|v| 0.5 * v)).collect()
}

/// B_pas (row-major, unsymmetrized estimator) with standard errors.
pub fn assemble_bpas(prs: &[PassiveRealization]) -> Result<Estimate> {
    check_consistent(prs)?;
    let s: Vec<Vec<f64>> = prs.iter().map(bpas_sample).collect();
    Ok(Estimate::from_samples(&s))
}

/// B_pas by polarization of diagonal energies:
/// E_i:B E_j = (e(E_i + E_j) − e(E_i − E_j))/4 with e(E) = ½⟨Λ_E : z_E⟩, using linearity in E.
pub fn assemble_bpas_polarized(prs: &[PassiveRealization]) -> Result<Estimate> {
    check_consistent(prs)?;
    let s: Vec<Vec<f64>> = prs
        .iter()
        .map(|pr| {
            let c = &pr.cross;
            let m = c.len();
            let mut out = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    let plus = c[i][i] + c[i][j] + c[j][i] + c[j][j];
                    let minus = c[i][i] - c[i][j] - c[j][i] + c[j][j];
                    out.push(0.5 * (plus - minus) / 4.0);
                }
            }
            out
        })
        .collect();
    Ok(Estimate::from_samples(&s))
}

/// B_pas from boundary stresses: 2(B_pas − Id)E = dev of the traction moment density.
pub fn assemble_bpas_traction(prs: &[PassiveRealization]) -> Result<Estimate> {
    check_consistent(prs)?;
    let d = prs[0].dim;
    let basis = strain_basis(d);
    let s: Vec<Vec<f64>> = prs
        .iter()
        .map(|pr| {
            let m = basis.len();
            let mut out = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    let id = if i == j { 1.0 } else { 0.0 };
                    out.push(id + 0.5 * basis[i].mat().ddot(&pr.traction[j].deviatoric()));
                }
            }
            out
        })
        .collect();
    Ok(Estimate::from_samples(&s))
}

/// b̄ in basis coordinates: b̄:E_j = tr(traction moment density)/d.
pub fn assemble_bbar(prs: &[PassiveRealization]) -> Result<Estimate> {
    check_consistent(prs)?;
    let s: Vec<Vec<f64>> = prs.iter().map(|pr| pr.traction.iter().map(|t| t.trace() / pr.dim as f64).collect()).collect();
    Ok(Estimate::from_samples(&s))
}

/// One realization's (B_act(E), F̄(E)) in basis coordinates.
pub fn bact_sample(
    pr: &PassiveRealization,
    ens: &ParticleEnsemble,
    model: &SwimForceModel,
    e: &StrainRate,
    indicator_width: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if ens.seed != pr.seed || ens.len() != pr.kernels.len() {
        return Err(Error::Inconsistent(format!(
            "force ensemble (seed {}, {} particles) does not match the passive realization (seed {}, {} particles)",
            ens.seed,
            ens.len(),
            pr.seed,
            pr.kernels.len()
        )));
    }
    let grid = Grid::new(pr.dim, pr.n, pr.side)?;
    let d = pr.dim;
    let basis = strain_basis(d);
    let m = basis.len();
    let hv = grid.cell_volume();
    let vol = grid.volume();
    let mut pair = vec![Vec::with_capacity(ens.len()); m];
    let mut moment = vec![Vec::with_capacity(ens.len()); m];
    for (n, k) in pr.kernels.iter().enumerate() {
        let (dir, _) = model.orientation_of(e, n, ens.seed);
        let pf = model.particle_density(ens, n, &grid, e, &dir, indicator_width)?;
        if pf.cells != k.cells {
            return Err(Error::Inconsistent("force stencil differs from the stored corrector stencil".into()));
        }
        for j in 0..m {
            pair[j].push(ksum(pf.values.iter().zip(&k.values[j]).map(|(f, w)| dot(d, f, w))));
            let ej = basis[j].mat();
            moment[j].push(ksum(pf.values.iter().zip(&pf.disp).map(|(f, y)| dot(d, f, &ej.apply(y)))));
        }
    }
    // E_j : 2B_act = −(1/V) Σ_n ∫ (ψ_j + E_j y)·f_n ;  E_j : F̄ = −(1/V) Σ_n ∫ E_j y·f_n
    let bact = pair.iter().map(|v| -0.5 * ksum(v.iter().copied()) * hv / vol).collect();
    let fbar = moment.iter().map(|v| -ksum(v.iter().copied()) * hv / vol).collect();
    Ok((bact, fbar))
}

/// B_act(E) and F̄(E) over realizations; ensembles pair one-to-one with the
/// passive realizations.
pub fn assemble_bact(
    prs: &[PassiveRealization],
    ensembles: &[ParticleEnsemble],
    model: &SwimForceModel,
    e: &StrainRate,
    indicator_width: f64,
) -> Result<(Estimate, Estimate)> {
    check_consistent(prs)?;
    if prs.len() != ensembles.len() {
        return Err(Error::Inconsistent(format!("{} passive realizations vs {} force ensembles", prs.len(), ensembles.len())));
    }
    let samples: Vec<(Vec<f64>, Vec<f64>)> =
        prs.iter().zip(ensembles).map(|(p, ens)| bact_sample(p, ens, model, e, indicator_width)).collect::<Result<_>>()?;
    let (b, f): (Vec<_>, Vec<_>) = samples.into_iter().unzip();
    Ok((Estimate::from_samples(&b), Estimate::from_samples(&f)))
}

/// Active-corrector side of one realization: 2C̄(E) + c̄(E) Id as a matrix.
pub fn active_traction_sample(
    ens: &ParticleEnsemble,
    model: &SwimForceModel,
    e: &StrainRate,
    grid: Grid,
    opts: &SolverOptions,
) -> Result<Mat> {
    let sol = crate::correctors::solve_active_corrector(ens, model, e, grid, opts)?;
    let d = grid.dim;
    Ok(sol.flow.reactions.iter().fold(Mat::zeros(d), |acc, r| acc.add(&r.traction_moment())).scale(1.0 / grid.volume()))
}

/// C̄(E) coordinates and c̄(E) from a traction moment density.
pub fn split_cbar(t: &Mat) -> (Vec<f64>, f64) {
    let d = t.dim;
    let c = strain_basis(d).iter().map(|b| 0.5 * b.mat().ddot(&t.deviatoric())).collect();
    (c, t.trace() / d as f64)
}

/// B_tot(E) = B_pas E + κ B_act(E) in basis coordinates.
pub fn total_viscosity(bpas: &[f64], bact: &[f64], kappa: f64, e: &StrainRate) -> Vec<f64> {
    let c = e.coords();
    let m = c.len();
    (0..m).map(|i| (0..m).map(|j| bpas[i * m + j] * c[j]).sum::<f64>() + kappa * bact[i]).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ActiveDiagnostics {
    pub cbar: Estimate,
    pub cscalar: Estimate,
    /// max_i |B_act − (C̄ + F̄/2)|_i / combined standard error.
    pub consistency_sigma: f64,
    /// max_i |B_act − (C̄ + F̄/2)|_i.
    pub consistency_abs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryTensors {
    pub strain: Vec<f64>,
    pub bact: Estimate,
    pub fbar: Estimate,
    /// B_act − F̄/2.
    pub cbar_from_bact: Vec<f64>,
    pub active: Option<ActiveDiagnostics>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EffectiveTensors {
    pub dim: usize,
    pub basis: String,
    /// Row-major m×m.
    pub bpas: Estimate,
    pub bpas_polarized: Estimate,
    pub bpas_traction: Estimate,
    /// max_{i<j} |B_ij − B_ji| / (SE_ij + SE_ji); 0 when both vanish.
    pub bpas_symmetry_sigma: f64,
    pub bbar: Estimate,
    pub queries: Vec<QueryTensors>,
    pub side: f64,
    pub n: usize,
    pub realizations: usize,
    pub seeds: Vec<u64>,
    pub volume_fraction: (f64, f64),
    pub solver_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct EffectiveSettings {
    pub dim: usize,
    pub side: f64,
    pub n: usize,
    /// Target particle volume fraction of the hardcore sampler.
    pub volume_fraction: f64,
    pub hardcore: f64,
    pub realizations: usize,
    pub seed: u64,
    pub opts: SolverOptions,
    pub model: Option<SwimForceModel>,
    pub queries: Vec<StrainRate>,
    /// Also solve the active correctors (C̄, c̄ and the consistency check).
    pub active_solves: bool,
}

/// Ensemble of realization `r` (seeds derived from the master seed).
pub fn realization_ensemble(s: &EffectiveSettings, r: usize) -> Result<ParticleEnsemble> {
    let seed = child_seed(s.seed, r as u64);
    sample_hardcore(s.dim, s.side, s.volume_fraction / unit_ball_volume(s.dim), s.hardcore, seed)
}

struct RealizationOut {
    passive: PassiveRealization,
    ensemble: ParticleEnsemble,
    query: Vec<(Vec<f64>, Vec<f64>, Option<Mat>)>,
}

/// Full assembly over realizations. Realizations run concurrently on the
/// current rayon pool; results are reduced in realization order.
pub fn compute_effective(s: &EffectiveSettings) -> Result<EffectiveTensors> {
    if s.realizations == 0 {
        return Err(invalid("realizations", "need at least one"));
    }
    for q in &s.queries {
        if q.dim() != s.dim {
            return Err(Error::ShapeMismatch("query strain dimension differs from the cell".into()));
        }
    }
    let grid = Grid::new(s.dim, s.n, s.side)?;
    let outs: Vec<RealizationOut> = (0..s.realizations)
        .into_par_iter()
        .map(|r| -> Result<RealizationOut> {
            let ens = realization_ensemble(s, r)?;
            let passive = solve_passive_realization(&ens, grid, &s.opts)?;
            let mut query = Vec::new();
            if let Some(model) = &s.model {
                for e in &s.queries {
                    let (b, f) = bact_sample(&passive, &ens, model, e, s.opts.indicator_width)?;
                    let act = if s.active_solves { Some(active_traction_sample(&ens, model, e, grid, &s.opts)?) } else { None };
                    query.push((b, f, act));
                }
            }
            Ok(RealizationOut { passive, ensemble: ens, query })
        })
        .collect::<Result<_>>()?;
    let prs: Vec<PassiveRealization> = outs.iter().map(|o| o.passive.clone()).collect();
    let bpas = assemble_bpas(&prs)?;
    let m = strain_dim(s.dim);
    let mut sym: f64 = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            let diff = (bpas.mean[i * m + j] - bpas.mean[j * m + i]).abs();
            let se = bpas.se[i * m + j] + bpas.se[j * m + i];
            if diff > 0.0 {
                sym = sym.max(if se > 0.0 { diff / se } else { f64::INFINITY });
            }
        }
    }
    let mut queries = Vec::new();
    if s.model.is_some() {
        for (qi, e) in s.queries.iter().enumerate() {
            let b: Vec<Vec<f64>> = outs.iter().map(|o| o.query[qi].0.clone()).collect();
            let f: Vec<Vec<f64>> = outs.iter().map(|o| o.query[qi].1.clone()).collect();
            let bact = Estimate::from_samples(&b);
            let fbar = Estimate::from_samples(&f);
            let cbar_from_bact = bact.mean.iter().zip(&fbar.mean).map(|(b, f)| b - 0.5 * f).collect();
            let active = if s.active_solves {
                let mut cs = Vec::new();
                let mut cc = Vec::new();
                // per-realization residual B_act − C̄ − F̄/2 (paired, so noise cancels)
                let mut resid = Vec::new();
                for o in &outs {
                    let (c, c0) = split_cbar(o.query[qi].2.as_ref().expect("active sample"));
                    resid.push(o.query[qi].0.iter().zip(&c).zip(&o.query[qi].1).map(|((b, c), f)| b - c - 0.5 * f).collect::<Vec<f64>>());
                    cs.push(c);
                    cc.push(vec![c0]);
                }
                let r = Estimate::from_samples(&resid);
                let mut sigma: f64 = 0.0;
                let mut abs: f64 = 0.0;
                for (mn, se) in r.mean.iter().zip(&r.se) {
                    abs = abs.max(mn.abs());
                    if mn.abs() > 0.0 {
                        sigma = sigma.max(if *se > 0.0 { mn.abs() / se } else { f64::INFINITY });
                    }
                }
                Some(ActiveDiagnostics {
                    cbar: Estimate::from_samples(&cs),
                    cscalar: Estimate::from_samples(&cc),
                    consistency_sigma: sigma,
                    consistency_abs: abs,
                })
            } else {
                None
            };
            queries.push(QueryTensors { strain: e.coords(), bact, fbar, cbar_from_bact, active });
        }
    }
    let vf: Vec<f64> = outs.iter().map(|o| o.ensemble.volume_fraction()).collect();
    Ok(EffectiveTensors {
        dim: s.dim,
        basis: basis_convention(s.dim),
        bpas_polarized: assemble_bpas_polarized(&prs)?,
        bpas_traction: assemble_bpas_traction(&prs)?,
        bpas,
        bpas_symmetry_sigma: sym,
        bbar: assemble_bbar(&prs)?,
        queries,
        side: s.side,
        n: s.n,
        realizations: s.realizations,
        seeds: prs.iter().map(|p| p.seed).collect(),
        volume_fraction: mean_se(&vf),
        solver_iterations: prs.iter().map(|p| p.iterations).sum(),
    })
}

pub fn basis_convention(d: usize) -> String {
    if d == 2 {
        "orthonormal: (e1e1 - e2e2)/sqrt2, (e1e2 + e2e1)/sqrt2".into()
    } else {
        "orthonormal: (e1e1 - e2e2)/sqrt2, (e1e1 + e2e2 - 2e3e3)/sqrt6, (e1e2 + e2e1)/sqrt2, (e1e3 + e3e1)/sqrt2, (e2e3 + e3e2)/sqrt2".into()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Linearization {
    pub steps: Vec<f64>,
    /// Central-difference derivative estimates per step (basis coordinates).
    pub estimates: Vec<Vec<f64>>,
    /// Richardson combination (4 D_{h/2} − D_h)/3.
    pub richardson: Vec<f64>,
    /// log2(|D_h − D_{h/2}| / |D_{h/2} − D_{h/4}|).
    pub order: f64,
    /// Differences at roundoff level: the order cannot be read off.
    pub inconclusive: bool,
}

/// Directional derivative of E ↦ B_act(E) along F by central differences
/// with steps h, h/2, h/4 on common realizations.
pub fn linearize_bact(
    prs: &[PassiveRealization],
    ensembles: &[ParticleEnsemble],
    model: &SwimForceModel,
    e: &StrainRate,
    f: &StrainRate,
    h: f64,
    indicator_width: f64,
) -> Result<Linearization> {
    if !(h > 0.0) {
        return Err(invalid("h", "step must be positive"));
    }
    let steps = vec![h, h / 2.0, h / 4.0];
    let mut estimates = Vec::new();
    let mut scale: f64 = 0.0;
    for &s in &steps {
        let (bp, _) = assemble_bact(prs, ensembles, model, &e.add(&f.scale(s)), indicator_width)?;
        let (bm, _) = assemble_bact(prs, ensembles, model, &e.sub(&f.scale(s)), indicator_width)?;
        scale = scale.max(bp.mean.iter().chain(&bm.mean).fold(0.0, |a: f64, v| a.max(v.abs())));
        estimates.push(bp.mean.iter().zip(&bm.mean).map(|(a, b)| (a - b) / (2.0 * s)).collect::<Vec<f64>>());
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let d1 = dist(&estimates[0], &estimates[1]);
    let d2 = dist(&estimates[1], &estimates[2]);
    // central differences cancel ~1e-16·scale/h of roundoff
    let noise = 1e3 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) / (h / 4.0);
    let inconclusive = d2 <= noise || d1 <= noise;
    let order = if inconclusive { f64::NAN } else { (d1 / d2).log2() };
    let richardson = estimates[1].iter().zip(&estimates[0]).map(|(b, a)| (4.0 * b - a) / 3.0).collect();
    Ok(Linearization { steps, estimates, richardson, order, inconclusive })
}

/// Least-squares fit value(L) ≈ a + b L^{-d}; returns (a, b).
pub fn extrapolate_in_l(sides: &[f64], values: &[f64], d: usize) -> Result<(f64, f64)> {
    if sides.len() != values.len() || sides.len() < 2 {
        return Err(invalid("sides", "need at least two (L, value) pairs"));
    }
    let design: Vec<Vec<f64>> = sides.iter().map(|l| vec![1.0, l.powi(-(d as i32))]).collect();
    let c = least_squares(&design, values);
    Ok((c[0], c[1]))
}
