use num_complex::Complex64 as C64;

use super::fft::{Spectral, Staggered};
use super::geometry::{for_cells_within, Geometry};
use super::grid::{PeriodicField, Rank};
use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::tensor::{sym_pairs, Mat, StrainRate};

/// Compactly supported kernel (1 − |x|²/δ²)³₊ with unit discrete mass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    pub delta: f64,
}

impl Mollifier {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(invalid("delta", "must be positive"));
        }
        Ok(Mollifier { delta })
    }

    pub fn profile(&self, r: f64) -> f64 {
        let t = 1.0 - (r / self.delta).powi(2);
        if t > 0.0 {
            t * t * t
        } else {
            0.0
        }
    }

    /// Grid weights (flat index → weight), summing to one.
    pub fn weights(&self, spectral: &Spectral) -> Result<Vec<f64>> {
        let g = spectral.grid;
        if self.delta < 2.0 * g.spacing() {
            return Err(Error::UnderResolved { what: "mollifier scale", required: self.delta / 2.0, actual: g.spacing() });
        }
        if self.delta >= g.side / 2.0 {
            return Err(invalid("delta", format!("support {} exceeds half the torus", self.delta)));
        }
        let mut w = vec![0.0; g.len()];
        for_cells_within(&g, &[0.0; 3], self.delta, |idx, y| {
            w[idx] += self.profile(crate::tensor::norm(g.dim, &y));
        });
        let s = crate::util::ksum(w.iter().copied());
        w.iter_mut().for_each(|v| *v /= s);
        Ok(w)
    }

    /// Fourier multiplier of the discrete convolution; zero mode pinned to 1.
    pub fn multiplier(&self, spectral: &Spectral) -> Result<Vec<C64>> {
        let mut m = spectral.forward(&self.weights(spectral)?);
        m[0] = C64::new(1.0, 0.0);
        Ok(m)
    }
}

/// Discrete periodic convolution with the kernel.
pub fn mollify(field: &PeriodicField, mollifier: &Mollifier, spectral: &Spectral) -> Result<PeriodicField> {
    if field.grid != spectral.grid {
        return Err(Error::ShapeMismatch("field grid differs from spectral grid".into()));
    }
    let m = mollifier.multiplier(spectral)?;
    let refs: Vec<&[f64]> = field.comps.iter().map(|v| v.as_slice()).collect();
    let mut hats = spectral.forward_many(&refs);
    for h in &mut hats {
        h.iter_mut().zip(&m).for_each(|(a, b)| *a *= b);
    }
    let mut out = field.clone();
    out.comps = spectral.inverse_many(&hats);
    // the mean is carried by the zero mode exactly; restore it to the last bit
    for (c, comp) in out.comps.iter_mut().enumerate() {
        let shift = field.mean(c) - crate::util::ksum(comp.iter().copied()) / comp.len() as f64;
        comp.iter_mut().for_each(|v| *v += shift);
    }
    Ok(out)
}

/// Per-particle averages ⨍_{I_n} χ_δ ∗ D(u), reusable across velocity fields.
pub struct StrainAverager<'a> {
    spectral: &'a Spectral,
    geometry: &'a Geometry,
    multiplier: Option<Vec<C64>>,
}

impl<'a> StrainAverager<'a> {
    /// `geometry` must be sampled on corners, where strain lives.
    pub fn new(spectral: &'a Spectral, geometry: &'a Geometry, mollifier: Option<&Mollifier>) -> Result<Self> {
        if geometry.offset != 0.5 || geometry.grid != spectral.grid {
            return Err(Error::ShapeMismatch("strain averages need the corner geometry of the same grid".into()));
        }
        let multiplier = mollifier.map(|m| m.multiplier(spectral)).transpose()?;
        Ok(StrainAverager { spectral, geometry, multiplier })
    }

    /// Mollified strain field χ_δ ∗ D(u) (periodic part only).
    pub fn strain_field(&self, u: &PeriodicField) -> Result<Vec<Vec<f64>>> {
        let g = self.spectral.grid;
        if u.grid != g || u.rank != Rank::Vector {
            return Err(Error::ShapeMismatch("velocity must be a vector field on the averaging grid".into()));
        }
        let refs: Vec<&[f64]> = u.comps.iter().map(|v| v.as_slice()).collect();
        let uh = self.spectral.forward_many(&refs);
        let st = Staggered::new(&g);
        let pairs = sym_pairs(g.dim);
        let zero = C64::new(0.0, 0.0);
        let mut dh = vec![vec![zero; g.len()]; pairs.len()];
        for k in 0..g.len() {
            if st.k2[k] == 0.0 {
                continue;
            }
            let m = self.multiplier.as_ref().map_or(C64::new(1.0, 0.0), |m| m[k]);
            let mut u = [zero; 3];
            for (a, ua) in u.iter_mut().enumerate().take(g.dim) {
                *ua = uh[a][k];
            }
            for (q, &(a, b)) in pairs.iter().enumerate() {
                dh[q][k] = st.strain(k, &u, a, b) * m;
            }
        }
        Ok(self.spectral.inverse_many(&dh))
    }

    pub fn average(&self, u: &PeriodicField, background: &StrainRate) -> Result<Vec<StrainRate>> {
        let d = self.spectral.grid.dim;
        let field = self.strain_field(u)?;
        Ok(self.average_field(&field, background, d))
    }

    pub fn average_field(&self, field: &[Vec<f64>], background: &StrainRate, d: usize) -> Vec<StrainRate> {
        let pairs = sym_pairs(d);
        self.geometry
            .stencils
            .iter()
            .map(|st| {
                let mut acc = vec![0.0; pairs.len()];
                let mut w = 0.0;
                for (t, &idx) in st.cells.iter().enumerate() {
                    let c = st.chi[t];
                    if c > 0.0 {
                        w += c;
                        for q in 0..pairs.len() {
                            acc[q] += c * field[q][idx as usize];
                        }
                    }
                }
                acc.iter_mut().for_each(|v| *v /= w);
                StrainRate::project(&Mat::from_sym_components(d, &acc).add(background.mat()))
            })
            .collect()
    }
}

/// E_n = ⨍_{I_n} χ_δ ∗ D(u) for u = periodic part + background affine strain.
pub fn particle_average_strain(
    u: &PeriodicField,
    background: &StrainRate,
    ensemble: &ParticleEnsemble,
    mollifier: Option<&Mollifier>,
    indicator_width: f64,
) -> Result<Vec<StrainRate>> {
    let spectral = Spectral::new(u.grid);
    let geometry = Geometry::corners(ensemble, u.grid, indicator_width)?;
    StrainAverager::new(&spectral, &geometry, mollifier)?.average(u, background)
}
