//! Stationary hardcore particle configurations on the torus and their
//! one-, two- and three-point intensity estimates.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::stokes::grid::min_image;
use crate::tensor::{norm, Vec3};
use crate::util::{mean_se, unit_ball_volume};

/// Margin between the torus and the cube holding particle centers.
pub const RETRACTION: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub center: Vec3,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub side: f64,
    pub hardcore: f64,
    pub seed: u64,
    pub particles: Vec<Particle>,
}

impl ParticleEnsemble {
    /// Validated constructor: checks radii, the hardcore gap and the retracted cube.
    pub fn new(dim: usize, side: f64, hardcore: f64, seed: u64, particles: Vec<Particle>) -> Result<Self> {
        let e = ParticleEnsemble { dim, side, hardcore, seed, particles };
        e.validate()?;
        Ok(e)
    }

    pub fn empty(dim: usize, side: f64, hardcore: f64) -> Result<Self> {
        Self::new(dim, side, hardcore, 0, Vec::new())
    }

    /// One unit particle at the center of the cell.
    pub fn single_centered(dim: usize, side: f64) -> Result<Self> {
        let c = [side / 2.0, side / 2.0, if dim == 3 { side / 2.0 } else { 0.0 }];
        Self::new(dim, side, 0.0, 0, vec![Particle { center: c, radius: 1.0 }])
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(invalid("dim", format!("must be 2 or 3, got {}", self.dim)));
        }
        if !(self.side > RETRACTION) {
            return Err(invalid("side", format!("must exceed {RETRACTION}, got {}", self.side)));
        }
        if !(self.hardcore >= 0.0) {
            return Err(invalid("hardcore", "must be nonnegative"));
        }
        let (lo, hi) = (RETRACTION / 2.0, self.side - RETRACTION / 2.0);
        for (i, p) in self.particles.iter().enumerate() {
            if !(p.radius > 0.0) {
                return Err(invalid("radius", format!("particle {i} has radius {}", p.radius)));
            }
            if (0..self.dim).any(|a| !(p.center[a] >= lo && p.center[a] < hi)) {
                return Err(invalid("center", format!("particle {i} lies outside the retracted cube [{lo}, {hi})")));
            }
        }
        self.audit_hardcore()
    }

    /// Exhaustive O(N²) check of the periodic surface gap ≥ 2ℓ.
    pub fn audit_hardcore(&self) -> Result<()> {
        match self.min_surface_distance() {
            Some((d, i, j)) if d < 2.0 * self.hardcore * (1.0 - 1e-12) => Err(invalid(
                "hardcore",
                format!("particles {i} and {j} have surface distance {d} < 2l = {}", 2.0 * self.hardcore),
            )),
            _ => Ok(()),
        }
    }

    /// Smallest periodic surface distance and the pair realizing it.
    pub fn min_surface_distance(&self) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.len() {
            for j in i + 1..self.len() {
                let d = self.surface_distance(i, j);
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, i, j));
                }
            }
        }
        best
    }

    pub fn surface_distance(&self, i: usize, j: usize) -> f64 {
        let (p, q) = (&self.particles[i], &self.particles[j]);
        norm(self.dim, &min_image(self.dim, self.side, &p.center, &q.center)) - p.radius - q.radius
    }

    /// Half the surface gap to the nearest neighbour (infinite when alone).
    pub fn half_gap(&self, i: usize) -> f64 {
        (0..self.len()).filter(|&j| j != i).map(|j| 0.5 * self.surface_distance(i, j)).fold(f64::INFINITY, f64::min)
    }

    pub fn volume_fraction(&self) -> f64 {
        volume_fraction(self)
    }

    /// Number density N / L^d.
    pub fn intensity(&self) -> f64 {
        self.len() as f64 / self.volume()
    }

    /// Periodic tiling: k copies per axis on a torus of side k·L.
    pub fn tile(&self, k: usize) -> Result<Self> {
        let mut ps = Vec::with_capacity(self.len() * k.pow(self.dim as u32));
        let count = k.pow(self.dim as u32);
        for t in 0..count {
            let mut off = [0.0; 3];
            let mut r = t;
            for o in off.iter_mut().take(self.dim) {
                *o = (r % k) as f64 * self.side;
                r /= k;
            }
            for p in &self.particles {
                let mut c = p.center;
                for a in 0..self.dim {
                    c[a] += off[a];
                }
                ps.push(Particle { center: c, radius: p.radius });
            }
        }
        Self::new(self.dim, self.side * k as f64, self.hardcore, self.seed, ps)
    }

    /// All centers shifted by `shift` modulo the torus. The result is not
    /// required to respect the retracted cube, so it bypasses validation;
    /// meant for stationarity probes of the estimators.
    pub fn translated(&self, shift: &Vec3) -> Self {
        let mut out = self.clone();
        for p in &mut out.particles {
            for a in 0..self.dim {
                p.center[a] = (p.center[a] + shift[a]).rem_euclid(self.side);
            }
        }
        out
    }

    /// Header `d L l seed`, then `n cx cy [cz] r` per particle. Floats use the
    /// shortest representation that parses back to the same bits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {} {}", self.dim, self.side, self.hardcore, self.seed).unwrap();
        for (i, p) in self.particles.iter().enumerate() {
            write!(s, "{i}").unwrap();
            for a in 0..self.dim {
                write!(s, " {}", p.center[a]).unwrap();
            }
            writeln!(s, " {}", p.radius).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, reason: "missing header".into() })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(Error::Parse { line: 1, reason: "header must be `d L l seed`".into() });
        }
        let perr = |line: usize, what: &str| Error::Parse { line, reason: format!("bad {what}") };
        let dim: usize = h[0].parse().map_err(|_| perr(1, "dimension"))?;
        let side: f64 = h[1].parse().map_err(|_| perr(1, "side"))?;
        let hardcore: f64 = h[2].parse().map_err(|_| perr(1, "hardcore"))?;
        let seed: u64 = h[3].parse().map_err(|_| perr(1, "seed"))?;
        let mut particles = Vec::new();
        for (ln, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != dim + 2 {
                return Err(Error::Parse { line: ln + 1, reason: format!("expected {} fields", dim + 2) });
            }
            let idx: usize = f[0].parse().map_err(|_| perr(ln + 1, "index"))?;
            if idx != particles.len() {
                return Err(Error::Parse { line: ln + 1, reason: format!("index {idx} out of sequence") });
            }
            let mut c = [0.0; 3];
            for a in 0..dim {
                c[a] = f[1 + a].parse().map_err(|_| perr(ln + 1, "coordinate"))?;
            }
            let radius = f[dim + 1].parse().map_err(|_| perr(ln + 1, "radius"))?;
            particles.push(Particle { center: c, radius });
        }
        Self::new(dim, side, hardcore, seed, particles)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Σ|I_n| / L^d.
pub fn volume_fraction(e: &ParticleEnsemble) -> f64 {
    let vb = unit_ball_volume(e.dim);
    e.particles.iter().map(|p| vb * p.radius.powi(e.dim as i32)).sum::<f64>() / e.volume()
}

/// Proposal intensity above which retention is saturated (ρV = 10).
const SATURATION: f64 = 10.0;

/// Matérn-II sample of unit spheres with surface gap ≥ 2ℓ, centers in the
/// retracted cube, periodic distances throughout.
pub fn sample_hardcore(dim: usize, side: f64, target: f64, hardcore: f64, seed: u64) -> Result<ParticleEnsemble> {
    if !(dim == 2 || dim == 3) {
        return Err(invalid("dim", format!("must be 2 or 3, got {dim}")));
    }
    if !(side > RETRACTION) {
        return Err(invalid("side", format!("must exceed {RETRACTION} so that the retracted cube is nonempty")));
    }
    if !(target >= 0.0 && target.is_finite()) {
        return Err(invalid("intensity", "must be finite and nonnegative"));
    }
    if !(hardcore >= 0.0) {
        return Err(invalid("hardcore", "must be nonnegative"));
    }
    if target == 0.0 {
        return ParticleEnsemble::new(dim, side, hardcore, seed, Vec::new());
    }
    let excl = 2.0 * (1.0 + hardcore);
    // an exclusion ball wider than the torus excludes the whole cell
    let vexcl = (unit_ball_volume(dim) * excl.powi(dim as i32)).min(side.powi(dim as i32));
    // retained intensity of Matérn-II is (1 − e^{−ρV})/V
    let x = target * vexcl;
    let rho = if x < 1.0 - (-SATURATION).exp() { -(1.0 - x).ln() / vexcl } else { SATURATION / vexcl };
    let achieved = (1.0 - (-rho * vexcl).exp()) / vexcl;
    if achieved < 0.5 * target {
        return Err(Error::DensityInfeasible { target, achieved });
    }
    let win = side - RETRACTION;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = rho * win.powi(dim as i32);
    let count = Poisson::new(mean).map_err(|e| invalid("intensity", e.to_string()))?.sample(&mut rng) as usize;
    let mut pts = Vec::with_capacity(count);
    let mut marks = Vec::with_capacity(count);
    for _ in 0..count {
        let mut c = [0.0; 3];
        for ca in c.iter_mut().take(dim) {
            *ca = RETRACTION / 2.0 + win * rng.gen::<f64>();
        }
        pts.push(c);
        marks.push(rng.gen::<f64>());
    }
    let keep = thin(dim, side, excl, &pts, &marks);
    let particles = pts
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(c, _)| Particle { center: *c, radius: 1.0 })
        .collect();
    ParticleEnsemble::new(dim, side, hardcore, seed, particles)
}

/// Keeps a proposal iff no other proposal closer than `excl` has a smaller mark.
fn thin(dim: usize, side: f64, excl: f64, pts: &[Vec3], marks: &[f64]) -> Vec<bool> {
    let nc = (side / excl).floor() as usize;
    let mut keep = vec![true; pts.len()];
    let conflict = |i: usize, j: usize| norm(dim, &min_image(dim, side, &pts[i], &pts[j])) < excl;
    if nc < 3 {
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                if i != j && marks[j] < marks[i] && conflict(i, j) {
                    keep[i] = false;
                    break;
                }
            }
        }
        return keep;
    }
    let cell_of = |p: &Vec3| -> [usize; 3] {
        let mut c = [0usize; 3];
        for a in 0..dim {
            c[a] = ((p[a] / side * nc as f64).floor() as usize).min(nc - 1);
        }
        c
    };
    let flat = |c: &[usize; 3]| (0..dim).fold(0, |acc, a| acc * nc + c[a]);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); nc.pow(dim as u32)];
    for (i, p) in pts.iter().enumerate() {
        cells[flat(&cell_of(p))].push(i);
    }
    let offsets: Vec<[i64; 3]> = (0..3usize.pow(dim as u32))
        .map(|t| {
            let mut o = [0i64; 3];
            let mut r = t;
            for oa in o.iter_mut().take(dim) {
                *oa = (r % 3) as i64 - 1;
                r /= 3;
            }
            o
        })
        .collect();
    for i in 0..pts.len() {
        let ci = cell_of(&pts[i]);
        'outer: for o in &offsets {
            let mut cj = [0usize; 3];
            for a in 0..dim {
                cj[a] = ((ci[a] as i64 + o[a]).rem_euclid(nc as i64)) as usize;
            }
            for &j in &cells[flat(&cj)] {
                if j != i && marks[j] < marks[i] && conflict(i, j) {
                    keep[i] = false;
                    break 'outer;
                }
            }
        }
    }
    keep
}

/// Lag sets for the multi-point estimators and the g2 histogram layout.
#[derive(Clone, Debug)]
pub struct LagSet {
    pub pair: Vec<Vec3>,
    pub triple: Vec<(Vec3, Vec3)>,
    pub g2_rmax: f64,
    pub g2_bins: usize,
}

impl LagSet {
    /// Regular pair-lag grid with spacing window/2 up to `reach`, plus
    /// `n_triple` random triple lags drawn from the same range.
    pub fn regular(dim: usize, window: f64, reach: f64, n_triple: usize, g2_rmax: f64, g2_bins: usize, seed: u64) -> Self {
        let step = window / 2.0;
        let m = (reach / step).floor() as i64;
        let per = (2 * m + 1) as usize;
        let mut pair = Vec::new();
        for t in 0..per.pow(dim as u32) {
            let mut x = [0.0; 3];
            let mut r = t;
            for xa in x.iter_mut().take(dim) {
                *xa = ((r % per) as i64 - m) as f64 * step;
                r /= per;
            }
            pair.push(x);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| {
            let mut x = [0.0; 3];
            for xa in x.iter_mut().take(dim) {
                *xa = (rng.gen::<f64>() * 2.0 - 1.0) * reach;
            }
            x
        };
        let triple = (0..n_triple).map(|_| (draw(&mut rng), draw(&mut rng))).collect();
        LagSet { pair, triple, g2_rmax, g2_bins }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct G2Bin {
    pub r_lo: f64,
    pub r_hi: f64,
    pub g2: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct IntensityReport {
    pub lambda1: f64,
    pub lambda1_se: f64,
    pub volume_fraction: f64,
    pub volume_fraction_se: f64,
    pub lambda2: f64,
    pub lambda2_se: f64,
    pub lambda2_lag: Vec3,
    pub lambda3: f64,
    pub g2: Vec<G2Bin>,
    /// g2 − λ1² per bin.
    pub h2: Vec<f64>,
    pub window: f64,
    pub ensembles: usize,
}

/// Window-averaged pair density at lag x, averaged over torus translations of the window.
pub fn pair_density(e: &ParticleEnsemble, window: f64, lag: &Vec3) -> f64 {
    let d = e.dim;
    let mut s = 0.0;
    for (i, p) in e.particles.iter().enumerate() {
        for (j, q) in e.particles.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut rel = [0.0; 3];
            for a in 0..d {
                rel[a] = q.center[a] - p.center[a] - lag[a];
            }
            let t = min_image(d, e.side, &rel, &[0.0; 3]);
            let mut w = 1.0;
            for ta in t.iter().take(d) {
                w *= (window - ta.abs()).max(0.0);
            }
            s += w;
        }
    }
    s / (window.powi(2 * d as i32) * e.volume())
}

/// Window-averaged triple density at lags (x1, x2).
pub fn triple_density(e: &ParticleEnsemble, window: f64, lag1: &Vec3, lag2: &Vec3) -> f64 {
    let d = e.dim;
    let offset = |i: usize, j: usize, lag: &Vec3| {
        let mut rel = [0.0; 3];
        for a in 0..d {
            rel[a] = e.particles[j].center[a] - e.particles[i].center[a] - lag[a];
        }
        min_image(d, e.side, &rel, &[0.0; 3])
    };
    let close = |t: &Vec3| (0..d).all(|a| t[a].abs() < window);
    let mut s = 0.0;
    for i in 0..e.len() {
        for j in 0..e.len() {
            if j == i {
                continue;
            }
            let t1 = offset(i, j, lag1);
            if !close(&t1) {
                continue;
            }
            for k in 0..e.len() {
                if k == i || k == j {
                    continue;
                }
                let t2 = offset(i, k, lag2);
                if !close(&t2) {
                    continue;
                }
                let mut w = 1.0;
                for a in 0..d {
                    let hi = 0f64.max(t1[a]).max(t2[a]);
                    let lo = 0f64.min(t1[a]).min(t2[a]);
                    w *= (window - (hi - lo)).max(0.0);
                }
                s += w;
            }
        }
    }
    s / (window.powi(3 * d as i32) * e.volume())
}

/// Volume of W ∩ (W + Δ) for the retracted cube W on the torus.
fn window_overlap(d: usize, side: f64, delta: &Vec3) -> f64 {
    let w = side - RETRACTION;
    (0..d)
        .map(|a| {
            let t = delta[a].abs();
            (w - t).max(0.0) + (t - RETRACTION).max(0.0)
        })
        .product()
}

fn shell_volume(d: usize, r0: f64, r1: f64) -> f64 {
    unit_ball_volume(d) * (r1.powi(d as i32) - r0.powi(d as i32))
}

pub fn estimate_intensities(ensembles: &[ParticleEnsemble], window: f64, lags: &LagSet) -> Result<IntensityReport> {
    let first = ensembles.first().ok_or_else(|| invalid("ensembles", "need at least one ensemble"))?;
    let (d, side) = (first.dim, first.side);
    if ensembles.iter().any(|e| e.dim != d || e.side != side) {
        return Err(Error::Inconsistent("ensembles differ in dimension or side".into()));
    }
    if !(window > 0.0 && window <= side / 4.0) {
        return Err(invalid("window", format!("must lie in (0, L/4 = {}]", side / 4.0)));
    }
    let wraps = |x: &Vec3| (0..d).any(|a| x[a].abs() > side / 2.0);
    if lags.pair.iter().any(wraps) || lags.triple.iter().any(|(a, b)| wraps(a) || wraps(b)) {
        return Err(invalid("lags", "lag grid wraps more than half the torus"));
    }
    if lags.g2_rmax > side / 2.0 {
        return Err(invalid("lags", "g2 range exceeds half the torus"));
    }
    let l1: Vec<f64> = ensembles.iter().map(|e| e.intensity()).collect();
    let vf: Vec<f64> = ensembles.iter().map(volume_fraction).collect();
    let (lambda1, lambda1_se) = mean_se(&l1);
    let (volume_fraction, volume_fraction_se) = mean_se(&vf);

    let mut lambda2 = 0.0;
    let mut lambda2_se = 0.0;
    let mut lambda2_lag = [0.0; 3];
    for lag in &lags.pair {
        let per: Vec<f64> = ensembles.iter().map(|e| pair_density(e, window, lag)).collect();
        let (m, se) = mean_se(&per);
        if m > lambda2 {
            lambda2 = m;
            lambda2_se = se;
            lambda2_lag = *lag;
        }
    }
    let mut lambda3 = 0.0f64;
    for (a, b) in &lags.triple {
        let per: Vec<f64> = ensembles.iter().map(|e| triple_density(e, window, a, b)).collect();
        lambda3 = lambda3.max(mean_se(&per).0);
    }

    let nb = lags.g2_bins.max(1);
    let dr = lags.g2_rmax / nb as f64;
    let wvol = (side - RETRACTION).powi(d as i32);
    let scale = (wvol / first.volume()).powi(2);
    let mut per_bin: Vec<Vec<f64>> = vec![Vec::with_capacity(ensembles.len()); nb];
    for e in ensembles {
        let mut acc = vec![0.0; nb];
        for i in 0..e.len() {
            for j in 0..e.len() {
                if i == j {
                    continue;
                }
                let delta = min_image(d, side, &e.particles[j].center, &e.particles[i].center);
                let r = norm(d, &delta);
                if r >= lags.g2_rmax {
                    continue;
                }
                let ov = window_overlap(d, side, &delta);
                if ov > 0.0 {
                    acc[((r / dr) as usize).min(nb - 1)] += 1.0 / ov;
                }
            }
        }
        for (b, v) in acc.iter().enumerate() {
            per_bin[b].push(scale * v / shell_volume(d, b as f64 * dr, (b + 1) as f64 * dr));
        }
    }
    let g2: Vec<G2Bin> = per_bin
        .iter()
        .enumerate()
        .map(|(b, v)| {
            let (m, se) = mean_se(v);
            G2Bin { r_lo: b as f64 * dr, r_hi: (b + 1) as f64 * dr, g2: m, se }
        })
        .collect();
    let h2 = g2.iter().map(|b| b.g2 - lambda1 * lambda1).collect();
    Ok(IntensityReport {
        lambda1,
        lambda1_se,
        volume_fraction,
        volume_fraction_se,
        lambda2,
        lambda2_se,
        lambda2_lag,
        lambda3,
        g2,
        h2,
        window,
        ensembles: ensembles.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_target_gives_empty() {
        assert!(sample_hardcore(2, 16.0, 0.0, 0.5, 1).unwrap().is_empty());
    }

    #[test]
    fn huge_hardcore_leaves_at_most_one() {
        for seed in 0..20 {
            let e = sample_hardcore(2, 12.0, 0.004, 6.0, seed).unwrap();
            assert!(e.len() <= 1);
        }
    }

    #[test]
    fn audit_example_configuration() {
        let e = sample_hardcore(2, 32.0, 0.01, 1.0, 7).unwrap();
        assert!(e.len() > 3);
        for i in 0..e.len() {
            for j in i + 1..e.len() {
                let dx = min_image(2, 32.0, &e.particles[i].center, &e.particles[j].center);
                let gap = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt() - 2.0;
                assert!(gap >= 2.0, "pair {i},{j} gap {gap}");
            }
        }
    }

    #[test]
    fn infeasible_density_is_reported() {
        let r = sample_hardcore(2, 32.0, 0.5, 1.0, 1);
        assert!(matches!(r, Err(Error::DensityInfeasible { .. })));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = sample_hardcore(3, 14.0, 0.01, 0.3, 11).unwrap();
        let b = sample_hardcore(3, 14.0, 0.01, 0.3, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let e = sample_hardcore(3, 13.7, 0.02, 0.25, 3).unwrap();
        let back = ParticleEnsemble::from_text(&e.to_text()).unwrap();
        assert_eq!(back.len(), e.len());
        for (p, q) in e.particles.iter().zip(&back.particles) {
            for a in 0..3 {
                assert_eq!(p.center[a].to_bits(), q.center[a].to_bits());
            }
        }
        assert_eq!(back.side.to_bits(), e.side.to_bits());
        assert_eq!(back, e);
    }

    #[test]
    fn volume_fraction_examples() {
        let one = ParticleEnsemble::new(2, 10.0, 0.0, 0, vec![Particle { center: [5.0, 5.0, 0.0], radius: 1.0 }]).unwrap();
        assert_abs_diff_eq!(volume_fraction(&one), std::f64::consts::PI / 100.0, epsilon = 1e-15);
        let e = sample_hardcore(3, 12.0, 0.01, 0.2, 5).unwrap();
        assert_abs_diff_eq!(volume_fraction(&e), e.len() as f64 * 4.0 * std::f64::consts::PI / 3.0 / 1728.0, epsilon = 1e-14);
    }

    #[test]
    fn single_particle_intensity() {
        let e = ParticleEnsemble::single_centered(2, 10.0).unwrap();
        let lags = LagSet::regular(2, 2.0, 2.0, 2, 4.0, 4, 1);
        let r = estimate_intensities(&[e], 2.0, &lags).unwrap();
        assert_abs_diff_eq!(r.lambda1, 0.01, epsilon = 1e-15);
        assert_eq!(r.lambda2, 0.0);
    }

    #[test]
    fn wrapping_lags_rejected() {
        let e = ParticleEnsemble::single_centered(2, 10.0).unwrap();
        let lags = LagSet { pair: vec![[6.0, 0.0, 0.0]], triple: vec![], g2_rmax: 2.0, g2_bins: 2 };
        assert!(estimate_intensities(&[e.clone()], 2.0, &lags).is_err());
        let ok = LagSet { pair: vec![[1.0, 0.0, 0.0]], triple: vec![], g2_rmax: 2.0, g2_bins: 2 };
        assert!(estimate_intensities(&[e.clone()], 3.0, &ok).is_err(), "window above L/4");
    }

    #[test]
    fn tiling_preserves_fraction_and_hardcore() {
        let e = sample_hardcore(2, 12.0, 0.02, 0.5, 9).unwrap();
        let t = e.tile(3).unwrap();
        assert_eq!(t.len(), 9 * e.len());
        assert_abs_diff_eq!(t.volume_fraction(), e.volume_fraction(), epsilon = 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sampled_ensembles_satisfy_invariants(seed in 0u64..10_000, l in 0.0f64..1.5, t in 0.0f64..0.03) {
            let e = match sample_hardcore(2, 20.0, t, l, seed) {
                Ok(e) => e,
                Err(Error::DensityInfeasible { target, achieved }) => {
                    // Matérn-II retains at most 1/V per unit volume
                    let cap = 1.0 / (std::f64::consts::PI * (2.0 + 2.0 * l).powi(2));
                    prop_assert!(achieved <= cap && achieved < 0.5 * target && target > 2.0 * cap * (1.0 - 1e-4));
                    return Ok(());
                }
                Err(e) => panic!("{e}"),
            };
            prop_assert!(e.validate().is_ok());
            if let Some((gap, _, _)) = e.min_surface_distance() {
                prop_assert!(gap >= 2.0 * l);
            }
        }

        #[test]
        fn translation_leaves_pair_density_invariant(seed in 0u64..1000, sx in 0.0f64..20.0, sy in 0.0f64..20.0) {
            let e = sample_hardcore(2, 20.0, 0.02, 0.3, seed).unwrap();
            let s = e.translated(&[sx, sy, 0.0]);
            for lag in [[0.0, 0.0, 0.0], [3.0, 1.0, 0.0], [-2.5, 4.0, 0.0]] {
                let (a, b) = (pair_density(&e, 4.0, &lag), pair_density(&s, 4.0, &lag));
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
            }
            prop_assert_eq!(e.intensity(), s.intensity());
        }
    }
}
