//! Periodic spectral Stokes solvers with rigid inclusions.

pub mod anderson;
pub mod fft;
pub mod free;
pub mod geometry;
pub mod grid;
pub mod mollifier;
pub mod rigid;

pub use fft::Spectral;
pub use free::solve_stokes_periodic;
pub use geometry::Geometry;
pub use grid::{Grid, PeriodicField, Rank};
pub use mollifier::{mollify, particle_average_strain, Mollifier, StrainAverager};
pub use rigid::{FlowSolution, IterRecord, Reaction, RigidProblem, SolverOptions};

use crate::ensemble::ParticleEnsemble;
use crate::error::Result;
use crate::tensor::StrainRate;

/// One-shot constrained solve: builds the problem and solves it.
pub fn solve_rigid_stokes(
    ensemble: &ParticleEnsemble,
    grid: Grid,
    body_strain: &StrainRate,
    force: Option<&PeriodicField>,
    opts: &SolverOptions,
) -> Result<FlowSolution> {
    RigidProblem::new(ensemble, grid, opts.clone())?.solve(body_strain, force, None)
}

/// Residual log as CSV `iter,div_res,rigid_res`.
pub fn residual_csv(log: &[IterRecord]) -> String {
    let mut s = String::from("iter,div_res,rigid_res\n");
    for r in log {
        s.push_str(&format!("{},{:e},{:e}\n", r.iter, r.div_res, r.rigid_res));
    }
    s
}
