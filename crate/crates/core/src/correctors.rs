//! Passive and active cell problems on periodized cells, single-particle
//! problems and the closed-form whole-space sphere corrector.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::forcing::{ForceField, SwimForceModel};
use crate::stokes::grid::Grid;
use crate::stokes::rigid::{FlowSolution, RigidProblem, SolverOptions};
use crate::tensor::{dot, norm, Mat, StrainRate, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrectorKind {
    /// ψ_E: rigid particles in the background strain E.
    Passive,
    /// φ_E: rigid particles driven by the swim forces f(E), no background strain.
    Active,
    /// ψ_E around one centered particle.
    SingleParticle,
}

#[derive(Clone, Debug)]
pub struct CorrectorSolution {
    pub kind: CorrectorKind,
    pub strain: StrainRate,
    pub flow: FlowSolution,
    /// ⟨Λ : (D(u) + E)⟩: the cell average of 2μ|D(u) + E|².
    pub energy_density: f64,
    pub forcing: Option<ForceField>,
    pub side: f64,
    pub n: usize,
    pub seed: u64,
}

impl CorrectorSolution {
    fn new(kind: CorrectorKind, strain: StrainRate, flow: FlowSolution, forcing: Option<ForceField>, ens: &ParticleEnsemble) -> Self {
        let g = flow.grid();
        CorrectorSolution { kind, strain, energy_density: flow.energy_density(), flow, forcing, side: g.side, n: g.n, seed: ens.seed }
    }

    /// Mean of D(u): zero for a periodic velocity.
    pub fn mean_gradient(&self) -> Mat {
        self.flow.mean_strain_perturbation()
    }

    /// Both sides of the active energy identity: (∫ Λ : D(φ), ∫ f · φ).
    pub fn energy_identity(&self) -> Option<(f64, f64)> {
        let f = self.forcing.as_ref()?;
        Some((self.flow.dissipation(), self.flow.work(&f.field)))
    }

    /// Text manifest written next to field snapshots.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            CorrectorKind::Passive => "passive",
            CorrectorKind::Active => "active",
            CorrectorKind::SingleParticle => "single-particle",
        };
        let _ = writeln!(s, "kind {kind}");
        let c: Vec<String> = self.strain.coords().iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "strain {}", c.join(" "));
        let _ = writeln!(s, "side {}", self.side);
        let _ = writeln!(s, "n {}", self.n);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "iterations {}", self.flow.iterations);
        let r = &self.flow.residuals;
        let _ = writeln!(s, "residual_fixed_point {:e}", r.fixed_point);
        let _ = writeln!(s, "residual_div {:e}", r.div);
        let _ = writeln!(s, "residual_rigid {:e}", r.rigid);
        let _ = writeln!(s, "energy_density {:e}", self.energy_density);
        s
    }

    /// Writes `<stem>.vel`, `<stem>.pre` and `<stem>.manifest`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.flow.velocity.write_snapshot(&dir.join(format!("{stem}.vel")))?;
        self.flow.pressure.write_snapshot(&dir.join(format!("{stem}.pre")))?;
        std::fs::write(dir.join(format!("{stem}.manifest")), self.manifest())?;
        Ok(())
    }
}

/// ψ_E on a prepared problem (reuse the problem across strain directions).
pub fn passive_on(problem: &RigidProblem, ens: &ParticleEnsemble, e: &StrainRate) -> Result<CorrectorSolution> {
    let flow = problem.solve(e, None, None)?;
    Ok(CorrectorSolution::new(CorrectorKind::Passive, *e, flow, None, ens))
}

pub fn solve_passive_corrector(ens: &ParticleEnsemble, e: &StrainRate, grid: Grid, opts: &SolverOptions) -> Result<CorrectorSolution> {
    let problem = RigidProblem::new(ens, grid, opts.clone())?;
    passive_on(&problem, ens, e)
}

/// φ_E on a prepared problem.
pub fn active_on(problem: &RigidProblem, ens: &ParticleEnsemble, model: &SwimForceModel, e: &StrainRate) -> Result<CorrectorSolution> {
    let grid = problem.grid();
    let forcing = model.evaluate(ens, e, &grid, problem.opts.indicator_width)?;
    if forcing.neutrality > 1e-12 {
        return Err(Error::Inconsistent(format!("swim force not neutral: residual {:e}", forcing.neutrality)));
    }
    let flow = problem.solve(&StrainRate::zero(grid.dim), Some(&forcing.field), None)?;
    Ok(CorrectorSolution::new(CorrectorKind::Active, *e, flow, Some(forcing), ens))
}

pub fn solve_active_corrector(
    ens: &ParticleEnsemble,
    model: &SwimForceModel,
    e: &StrainRate,
    grid: Grid,
    opts: &SolverOptions,
) -> Result<CorrectorSolution> {
    let problem = RigidProblem::new(ens, grid, opts.clone())?;
    active_on(&problem, ens, model, e)
}

/// ψ_E around a single unit particle centered in a cell of side L.
pub fn solve_single_particle(e: &StrainRate, side: f64, grid: Grid, opts: &SolverOptions) -> Result<CorrectorSolution> {
    let ens = ParticleEnsemble::single_centered(e.dim(), side)?;
    let mut sol = solve_passive_corrector(&ens, e, grid, opts)?;
    sol.kind = CorrectorKind::SingleParticle;
    Ok(sol)
}

/// Whole-space corrector of a unit ball in the strain E (the periodic part;
/// the full velocity is ψ + Ex, which is rigid inside the ball).
pub fn analytic_sphere_corrector(e: &StrainRate, x: &Vec3) -> Vec3 {
    let d = e.dim();
    let ex = e.mat().apply(x);
    let r = norm(d, x);
    let mut out = [0.0; 3];
    if r <= 1.0 {
        for a in 0..d {
            out[a] = -ex[a];
        }
        return out;
    }
    let rd2 = r.powi(d as i32 + 2);
    let radial = -(d as f64 + 2.0) / 2.0 * dot(d, x, &ex) / rd2 * (1.0 - 1.0 / (r * r));
    for a in 0..d {
        out[a] = radial * x[a] - ex[a] / rd2;
    }
    out
}

/// Relative L² discrepancy of a solved velocity against the sphere oracle
/// over the annulus r_in < |x − c| < r_out.
pub fn annulus_error(flow: &FlowSolution, e: &StrainRate, center: &Vec3, r_in: f64, r_out: f64) -> f64 {
    let g = flow.grid();
    let d = g.dim;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.len() {
        let y = g.min_image(&g.coords(i), center);
        let r = norm(d, &y);
        if r > r_in && r < r_out {
            let o = analytic_sphere_corrector(e, &y);
            for a in 0..d {
                num += (flow.velocity.comps[a][i] - o[a]).powi(2);
                den += o[a] * o[a];
            }
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
