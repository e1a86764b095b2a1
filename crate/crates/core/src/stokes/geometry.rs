//! Rasterized particle geometry: smoothed indicators, per-particle local
//! stencils and the cutoff functions used for boundary functionals.

use super::grid::Grid;
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::tensor::{norm, Vec3};
use crate::util::{smoothstep, smoothstep_deriv};

/// Minimum cells per particle radius accepted by the solver.
pub const CELLS_PER_RADIUS: f64 = 8.0;

/// Grid cells around one particle with displacements relative to its center.
#[derive(Clone, Debug)]
pub struct ParticleStencil {
    pub particle: usize,
    pub center: Vec3,
    pub radius: f64,
    pub cells: Vec<u32>,
    pub disp: Vec<Vec3>,
    /// Smoothed indicator of this particle.
    pub chi: Vec<f64>,
    /// Cutoff equal to 1 on the particle and its indicator band, 0 before the neighbours.
    pub zeta: Vec<f64>,
    pub dzeta: Vec<Vec3>,
    pub zeta_inner: f64,
    pub zeta_outer: f64,
}

impl ParticleStencil {
    /// Cutoff value at distance r from the center.
    pub fn cutoff(&self, r: f64) -> f64 {
        1.0 - smoothstep((r - self.zeta_inner) / (self.zeta_outer - self.zeta_inner))
    }
}

#[derive(Clone, Debug)]
pub struct Geometry {
    pub grid: Grid,
    /// Union indicator, clipped to [0, 1].
    pub chi: Vec<f64>,
    pub stencils: Vec<ParticleStencil>,
    /// Half the indicator transition width (length units).
    pub halfwidth: f64,
    /// True when some cutoff had to be squeezed below two cells of transition.
    pub cutoff_squeezed: bool,
    /// Node offset in cells along every axis (0 = centers, 0.5 = corners).
    pub offset: f64,
}

/// Smoothed indicator of a ball of radius `radius` at distance r from its center.
pub fn indicator_profile(r: f64, radius: f64, halfwidth: f64) -> f64 {
    smoothstep((radius + halfwidth - r) / (2.0 * halfwidth))
}

impl Geometry {
    pub fn new(ensemble: &ParticleEnsemble, grid: Grid, width_cells: f64) -> Result<Self> {
        Self::with_offset(ensemble, grid, width_cells, 0.0)
    }

    /// Geometry sampled on the corner grid, where strain and stress live.
    pub fn corners(ensemble: &ParticleEnsemble, grid: Grid, width_cells: f64) -> Result<Self> {
        Self::with_offset(ensemble, grid, width_cells, 0.5)
    }

    pub fn with_offset(ensemble: &ParticleEnsemble, grid: Grid, width_cells: f64, offset: f64) -> Result<Self> {
        if ensemble.dim != grid.dim || (ensemble.side - grid.side).abs() > 1e-12 * grid.side {
            return Err(Error::ShapeMismatch(format!(
                "ensemble (d={}, L={}) vs grid (d={}, L={})",
                ensemble.dim, ensemble.side, grid.dim, grid.side
            )));
        }
        let h = grid.spacing();
        if let Some(rmin) = ensemble.particles.iter().map(|p| p.radius).reduce(f64::min) {
            if rmin / h < CELLS_PER_RADIUS {
                return Err(Error::UnderResolved {
                    what: "particle radius",
                    required: rmin / CELLS_PER_RADIUS,
                    actual: h,
                });
            }
        }
        if !(width_cells > 0.0) {
            return Err(crate::error::invalid("indicator_width", "must be positive"));
        }
        let hw = 0.5 * width_cells * h;
        let mut chi = vec![0.0; grid.len()];
        let mut stencils = Vec::with_capacity(ensemble.len());
        let mut squeezed = false;
        for (i, p) in ensemble.particles.iter().enumerate() {
            let inner = p.radius + hw + h;
            let mut outer = (2.0 * p.radius).min(p.radius + ensemble.half_gap(i));
            if outer < inner + 2.0 * h {
                outer = inner + 2.0 * h;
                squeezed = true;
            }
            let reach = (2.0 * p.radius).max(outer) + 2.0 * h;
            let mut st = ParticleStencil {
                particle: i,
                center: p.center,
                radius: p.radius,
                cells: Vec::new(),
                disp: Vec::new(),
                chi: Vec::new(),
                zeta: Vec::new(),
                dzeta: Vec::new(),
                zeta_inner: inner,
                zeta_outer: outer,
            };
            for_nodes_within(&grid, &p.center, reach, offset, |idx, y| {
                let r = norm(grid.dim, &y);
                let c = indicator_profile(r, p.radius, hw);
                let t = (r - inner) / (outer - inner);
                let z = 1.0 - smoothstep(t);
                let dz = if r > 0.0 { -smoothstep_deriv(t) / (outer - inner) / r } else { 0.0 };
                st.cells.push(idx as u32);
                st.disp.push(y);
                st.chi.push(c);
                st.zeta.push(z);
                st.dzeta.push([dz * y[0], dz * y[1], dz * y[2]]);
                chi[idx] += c;
            });
            stencils.push(st);
        }
        chi.iter_mut().for_each(|c| *c = c.min(1.0));
        Ok(Geometry { grid, chi, stencils, halfwidth: hw, cutoff_squeezed: squeezed, offset })
    }
}

/// Visits every node within `reach` of `center` (periodic), passing the flat
/// index and the unwrapped displacement node − center.
pub fn for_cells_within(grid: &Grid, center: &Vec3, reach: f64, f: impl FnMut(usize, Vec3)) {
    for_nodes_within(grid, center, reach, 0.0, f)
}

/// As [`for_cells_within`] on nodes shifted by `offset` cells along every axis.
pub fn for_nodes_within(grid: &Grid, center: &Vec3, reach: f64, offset: f64, mut f: impl FnMut(usize, Vec3)) {
    let h = grid.spacing();
    let n = grid.n as i64;
    let d = grid.dim;
    let mut lo = [0i64; 3];
    let mut cnt = [1i64; 3];
    for a in 0..d {
        lo[a] = ((center[a] - reach) / h - offset).floor() as i64;
        cnt[a] = ((center[a] + reach) / h - offset).ceil() as i64 - lo[a] + 1;
    }
    let total: i64 = cnt[..d].iter().product();
    for t in 0..total {
        let mut r = t;
        let mut m = [0usize; 3];
        let mut y = [0.0; 3];
        for a in (0..d).rev() {
            let ia = lo[a] + r % cnt[a];
            r /= cnt[a];
            y[a] = (ia as f64 + offset) * h - center[a];
            m[a] = ia.rem_euclid(n) as usize;
        }
        if norm(d, &y) <= reach {
            f(grid.flat(&m), y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::unit_ball_volume;

    #[test]
    fn indicator_mass_close_to_ball_volume() {
        let e = ParticleEnsemble::single_centered(2, 8.0).unwrap();
        let g = Grid::new(2, 128, 8.0).unwrap();
        let geo = Geometry::new(&e, g, 2.0).unwrap();
        let mass: f64 = geo.chi.iter().sum::<f64>() * g.cell_volume();
        // the symmetric transition adds 2π·hw²·∫t(χ − 1_{t<0})dt = 2π·hw²/10 in 2D
        let hw = geo.halfwidth;
        let expect = unit_ball_volume(2) + 2.0 * std::f64::consts::PI * hw * hw / 10.0;
        assert!((mass - expect).abs() < 1.5e-3, "{mass} vs {expect}");
        let st = &geo.stencils[0];
        for (z, c) in st.zeta.iter().zip(&st.chi) {
            if *c > 0.0 {
                assert_eq!(*z, 1.0);
            }
        }
    }

    #[test]
    fn under_resolved_grid_rejected() {
        let e = ParticleEnsemble::single_centered(2, 16.0).unwrap();
        let g = Grid::new(2, 64, 16.0).unwrap();
        assert!(matches!(Geometry::new(&e, g, 2.0), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn stencil_wraps_across_the_seam() {
        let g = Grid::new(2, 64, 8.0).unwrap();
        let mut count = 0;
        for_cells_within(&g, &[0.0, 0.0, 0.0], 0.3, |idx, y| {
            count += 1;
            let x = g.coords(idx);
            for a in 0..2 {
                assert!(((x[a] - y[a]).rem_euclid(8.0)).min(8.0 - (x[a] - y[a]).rem_euclid(8.0)) < 1e-12);
            }
        });
        assert_eq!(count, 21);
    }
}
