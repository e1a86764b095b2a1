use num_complex::Complex64 as C64;

use super::fft::Spectral;
use super::grid::{PeriodicField, Rank};
use super::rigid::{FlowSolution, Residuals};
use crate::error::{Error, Result};
use crate::tensor::{sym_pairs, StrainRate};

/// Particle-free periodic Stokes: −Δu + ∇P = f, div u = 0, ∫u = ∫P = 0,
/// with the exact spectral derivative (all fields at cell centers).
/// The mean of f is projected out and reported.
pub fn solve_stokes_periodic(spectral: &Spectral, f: &PeriodicField) -> Result<FlowSolution> {
    let grid = spectral.grid;
    if f.grid != grid || f.rank != Rank::Vector {
        return Err(Error::ShapeMismatch("force must be a vector field on the spectral grid".into()));
    }
    let (n, d) = (grid.len(), grid.dim);
    let kv = spectral.wavevectors();
    let refs: Vec<&[f64]> = f.comps.iter().map(|v| v.as_slice()).collect();
    let fh = spectral.forward_many(&refs);
    let mut discarded = [0.0; 3];
    for a in 0..d {
        discarded[a] = fh[a][0].re / n as f64;
    }
    let zero = C64::new(0.0, 0.0);
    let pairs = sym_pairs(d);
    let mut uh = vec![vec![zero; n]; d];
    let mut ph = vec![zero; n];
    let mut dh = vec![vec![zero; n]; pairs.len()];
    for k in 0..n {
        let k2: f64 = (0..d).map(|a| kv[a][k] * kv[a][k]).sum();
        if k2 == 0.0 || !spectral.kept(k) {
            continue;
        }
        let kf: C64 = (0..d).map(|a| fh[a][k] * kv[a][k]).sum();
        ph[k] = C64::new(0.0, -1.0) * kf / k2;
        for a in 0..d {
            uh[a][k] = (fh[a][k] - kf * (kv[a][k] / k2)) / k2;
        }
        for (q, &(a, b)) in pairs.iter().enumerate() {
            dh[q][k] = C64::new(0.0, 0.5) * (uh[b][k] * kv[a][k] + uh[a][k] * kv[b][k]);
        }
    }
    let u = spectral.inverse_many(&uh);
    let p = spectral.inverse(&ph);
    let strain = spectral.inverse_many(&dh);
    let stress: Vec<Vec<f64>> = strain.iter().map(|c| c.iter().map(|v| 2.0 * v).collect()).collect();
    Ok(FlowSolution {
        velocity: PeriodicField { grid, rank: Rank::Vector, comps: u },
        pressure: PeriodicField { grid, rank: Rank::Scalar, comps: vec![p] },
        stress: PeriodicField { grid, rank: Rank::SymTensor, comps: stress },
        strain: PeriodicField { grid, rank: Rank::SymTensor, comps: strain },
        body_strain: StrainRate::zero(d),
        reactions: Vec::new(),
        residuals: Residuals { div: 0.0, rigid: 0.0, fixed_point: 0.0 },
        log: Vec::new(),
        iterations: 1,
        discarded_mean_force: discarded,
        scale: 0.0,
        geometry: None,
        corner_geometry: None,
        state: Vec::new(),
    })
}
