use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::tensor::{sym_pairs, sym_weight, Vec3};

/// Uniform node grid on the torus [0, side)^dim with `n` nodes per side.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub side: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, side: f64) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(invalid("dim", format!("must be 2 or 3, got {dim}")));
        }
        if n < 4 || n % 2 != 0 {
            return Err(invalid("grid", format!("need an even node count >= 4, got {n}")));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(invalid("side", format!("must be positive, got {side}")));
        }
        Ok(Grid { dim, n, side })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Per-axis indices of a flat index (last axis fastest).
    pub fn multi(&self, mut idx: usize) -> [usize; 3] {
        let mut m = [0; 3];
        for a in (0..self.dim).rev() {
            m[a] = idx % self.n;
            idx /= self.n;
        }
        m
    }

    pub fn flat(&self, m: &[usize; 3]) -> usize {
        (0..self.dim).fold(0, |acc, a| acc * self.n + m[a])
    }

    pub fn coords(&self, idx: usize) -> Vec3 {
        let m = self.multi(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = m[a] as f64 * h;
        }
        x
    }

    /// Signed integer frequency of index i along an axis.
    pub fn freq(&self, i: usize) -> i64 {
        if i <= self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    /// Minimum-image displacement x − c on the torus.
    pub fn min_image(&self, x: &Vec3, c: &Vec3) -> Vec3 {
        min_image(self.dim, self.side, x, c)
    }
}

pub fn min_image(dim: usize, side: f64, x: &Vec3, c: &Vec3) -> Vec3 {
    let mut y = [0.0; 3];
    for a in 0..dim {
        let mut d = x[a] - c[a];
        d -= side * (d / side).round();
        y[a] = d;
    }
    y
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rank {
    Scalar,
    Vector,
    /// Symmetric matrix stored by `sym_pairs`.
    SymTensor,
}

impl Rank {
    pub fn ncomp(&self, dim: usize) -> usize {
        match self {
            Rank::Scalar => 1,
            Rank::Vector => dim,
            Rank::SymTensor => dim * (dim + 1) / 2,
        }
    }

    fn code(&self) -> f64 {
        match self {
            Rank::Scalar => 0.0,
            Rank::Vector => 1.0,
            Rank::SymTensor => 2.0,
        }
    }
}

/// Real grid data of a given rank; one Vec per component.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicField {
    pub grid: Grid,
    pub rank: Rank,
    pub comps: Vec<Vec<f64>>,
}

impl PeriodicField {
    pub fn zeros(grid: Grid, rank: Rank) -> Self {
        let comps = vec![vec![0.0; grid.len()]; rank.ncomp(grid.dim)];
        PeriodicField { grid, rank, comps }
    }

    pub fn from_fn(grid: Grid, rank: Rank, f: impl Fn(&Vec3) -> Vec<f64>) -> Self {
        let mut out = Self::zeros(grid, rank);
        for idx in 0..grid.len() {
            let v = f(&grid.coords(idx));
            for (c, comp) in out.comps.iter_mut().enumerate() {
                comp[idx] = v[c];
            }
        }
        out
    }

    fn weight(&self, c: usize) -> f64 {
        match self.rank {
            Rank::SymTensor => sym_weight(sym_pairs(self.grid.dim)[c]),
            _ => 1.0,
        }
    }

    /// Spatial mean of component c (equals the zero Fourier mode / N^d).
    pub fn mean(&self, c: usize) -> f64 {
        crate::util::ksum(self.comps[c].iter().copied()) / self.grid.len() as f64
    }

    /// (∫ |v|²)^{1/2} with the Frobenius norm for tensors.
    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        for (c, comp) in self.comps.iter().enumerate() {
            s += self.weight(c) * comp.iter().map(|v| v * v).sum::<f64>();
        }
        (s * self.grid.cell_volume()).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut o = self.clone();
        o.comps.iter_mut().flatten().for_each(|v| *v *= s);
        o
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.check_same(o)?;
        let mut r = self.clone();
        for (a, b) in r.comps.iter_mut().zip(&o.comps) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
        }
        Ok(r)
    }

    pub fn add_assign(&mut self, o: &Self) -> Result<()> {
        self.check_same(o)?;
        for (a, b) in self.comps.iter_mut().zip(&o.comps) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    fn check_same(&self, o: &Self) -> Result<()> {
        if self.grid != o.grid || self.rank != o.rank {
            return Err(Error::ShapeMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.grid, self.rank, o.grid, o.rank
            )));
        }
        Ok(())
    }

    /// Little-endian f64 stream: header (d, L, N, rank, count) then components.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * (5 + self.comps.len() * self.grid.len()));
        let header = [
            self.grid.dim as f64,
            self.grid.side,
            self.grid.n as f64,
            self.rank.code(),
            self.comps.len() as f64,
        ];
        for v in header.iter().chain(self.comps.iter().flatten()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn read_snapshot(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() % 8 != 0 || bytes.len() < 40 {
            return Err(Error::Parse { line: 0, reason: "truncated snapshot".into() });
        }
        let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let grid = Grid::new(vals[0] as usize, vals[2] as usize, vals[1])?;
        let rank = match vals[3] as i64 {
            0 => Rank::Scalar,
            1 => Rank::Vector,
            2 => Rank::SymTensor,
            r => return Err(Error::Parse { line: 0, reason: format!("unknown rank code {r}") }),
        };
        let count = vals[4] as usize;
        if count != rank.ncomp(grid.dim) || vals.len() != 5 + count * grid.len() {
            return Err(Error::Parse { line: 0, reason: "component count does not match header".into() });
        }
        let comps = vals[5..].chunks_exact(grid.len()).map(|c| c.to_vec()).collect();
        Ok(PeriodicField { grid, rank, comps })
    }
}
