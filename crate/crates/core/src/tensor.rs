//! Small dense d×d matrices (d ∈ {2,3}) and the trace-free symmetric strain type.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = [f64; 3];

pub fn dot(d: usize, a: &Vec3, b: &Vec3) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

pub fn norm(d: usize, a: &Vec3) -> f64 {
    dot(d, a, a).sqrt()
}

/// Component pairs (i, j), i <= j, used to store symmetric tensor fields.
pub fn sym_pairs(d: usize) -> &'static [(usize, usize)] {
    match d {
        2 => &[(0, 0), (0, 1), (1, 1)],
        _ => &[(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)],
    }
}

/// Frobenius weight of a stored symmetric component (off-diagonals count twice).
pub fn sym_weight(p: (usize, usize)) -> f64 {
    if p.0 == p.1 {
        1.0
    } else {
        2.0
    }
}

/// Dimension of trace-free symmetric d×d matrices.
pub fn strain_dim(d: usize) -> usize {
    d * (d + 1) / 2 - 1
}

/// Dense d×d matrix with d ≤ 3, padded with zeros.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Mat {
    pub dim: usize,
    pub m: [[f64; 3]; 3],
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(a: Mat) -> Self {
        (0..a.dim).map(|i| a.m[i][..a.dim].to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = String;
    fn try_from(rows: Vec<Vec<f64>>) -> std::result::Result<Self, String> {
        let d = rows.len();
        if !(d == 2 || d == 3) || rows.iter().any(|r| r.len() != d) {
            return Err(format!("expected a square 2x2 or 3x3 matrix, got {d} rows"));
        }
        let mut m = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                m.m[i][j] = rows[i][j];
            }
        }
        Ok(m)
    }
}

impl Default for Mat {
    fn default() -> Self {
        Mat::zeros(2)
    }
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat { dim, m: [[0.0; 3]; 3] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            a.m[i][i] = 1.0;
        }
        a
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut a = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                a.m[i][j] = f(i, j);
            }
        }
        a
    }

    pub fn outer(dim: usize, u: &Vec3, v: &Vec3) -> Self {
        Self::from_fn(dim, |i, j| u[i] * v[j])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn add(&self, o: &Mat) -> Mat {
        Mat::from_fn(self.dim, |i, j| self.m[i][j] + o.m[i][j])
    }

    pub fn sub(&self, o: &Mat) -> Mat {
        Mat::from_fn(self.dim, |i, j| self.m[i][j] - o.m[i][j])
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat::from_fn(self.dim, |i, j| s * self.m[i][j])
    }

    pub fn mul(&self, o: &Mat) -> Mat {
        Mat::from_fn(self.dim, |i, j| (0..self.dim).map(|k| self.m[i][k] * o.m[k][j]).sum())
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.dim, |i, j| self.m[j][i])
    }

    pub fn sym(&self) -> Mat {
        Mat::from_fn(self.dim, |i, j| 0.5 * (self.m[i][j] + self.m[j][i]))
    }

    pub fn skew(&self) -> Mat {
        Mat::from_fn(self.dim, |i, j| 0.5 * (self.m[i][j] - self.m[j][i]))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.m[i][i]).sum()
    }

    /// Symmetric part with the trace removed.
    pub fn deviatoric(&self) -> Mat {
        let s = self.sym();
        let t = s.trace() / self.dim as f64;
        s.sub(&Mat::identity(self.dim).scale(t))
    }

    /// Frobenius product A:B.
    pub fn ddot(&self, o: &Mat) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.m[i][j] * o.m[i][j];
            }
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        let mut r = [0.0; 3];
        for (i, ri) in r.iter_mut().enumerate().take(self.dim) {
            *ri = (0..self.dim).map(|j| self.m[i][j] * v[j]).sum();
        }
        r
    }

    /// x·A x
    pub fn quad(&self, x: &Vec3) -> f64 {
        dot(self.dim, x, &self.apply(x))
    }

    /// Symmetric components in `sym_pairs` order.
    pub fn sym_components(&self) -> Vec<f64> {
        sym_pairs(self.dim).iter().map(|&(i, j)| 0.5 * (self.m[i][j] + self.m[j][i])).collect()
    }

    pub fn from_sym_components(dim: usize, c: &[f64]) -> Mat {
        let mut a = Mat::zeros(dim);
        for (k, &(i, j)) in sym_pairs(dim).iter().enumerate() {
            a.m[i][j] = c[k];
            a.m[j][i] = c[k];
        }
        a
    }

    /// R A Rᵀ
    pub fn rotate(&self, r: &Mat) -> Mat {
        r.mul(self).mul(&r.transpose())
    }
}

/// Rotation by `theta` in the (e1, e2) plane (2D) or about the given axis (3D).
pub fn rotation(dim: usize, theta: f64, axis: &Vec3) -> Mat {
    let (s, c) = theta.sin_cos();
    if dim == 2 {
        return Mat::from_fn(2, |i, j| [[c, -s], [s, c]][i][j]);
    }
    let n = norm(3, axis);
    let k = [axis[0] / n, axis[1] / n, axis[2] / n];
    let kx = Mat::from_fn(3, |i, j| {
        [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]][i][j]
    });
    Mat::identity(3).add(&kx.scale(s)).add(&kx.mul(&kx).scale(1.0 - c))
}

/// Trace-free symmetric matrix: the macroscopic deformation direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat", into = "Mat")]
pub struct StrainRate(Mat);

impl From<StrainRate> for Mat {
    fn from(e: StrainRate) -> Mat {
        e.0
    }
}

impl TryFrom<Mat> for StrainRate {
    type Error = String;
    fn try_from(m: Mat) -> std::result::Result<Self, String> {
        StrainRate::new(m).map_err(|e| e.to_string())
    }
}

impl StrainRate {
    const TOL: f64 = 1e-12;

    /// Accepts a matrix that is symmetric and trace-free up to roundoff.
    pub fn new(m: Mat) -> Result<Self> {
        let scale = m.norm().max(1.0);
        if m.skew().norm() > Self::TOL * scale {
            return Err(invalid("strain", "matrix is not symmetric"));
        }
        if m.trace().abs() > Self::TOL * scale {
            return Err(invalid("strain", format!("trace {} is not zero", m.trace())));
        }
        Ok(StrainRate(m.deviatoric()))
    }

    /// Deviatoric projection of an arbitrary matrix.
    pub fn project(m: &Mat) -> Self {
        StrainRate(m.deviatoric())
    }

    pub fn zero(dim: usize) -> Self {
        StrainRate(Mat::zeros(dim))
    }

    /// Pure shear s/2 (e_a⊗e_b + e_b⊗e_a).
    pub fn shear(dim: usize, a: usize, b: usize, s: f64) -> Self {
        let mut m = Mat::zeros(dim);
        m.m[a][b] = 0.5 * s;
        m.m[b][a] = 0.5 * s;
        StrainRate(m)
    }

    pub fn mat(&self) -> &Mat {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// ⟨E⟩ = sqrt(1 + |E|²)
    pub fn bracket(&self) -> f64 {
        (1.0 + self.0.ddot(&self.0)).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        StrainRate(self.0.scale(s))
    }

    pub fn add(&self, o: &StrainRate) -> Self {
        StrainRate(self.0.add(&o.0))
    }

    pub fn sub(&self, o: &StrainRate) -> Self {
        StrainRate(self.0.sub(&o.0))
    }

    /// Coordinates in the orthonormal basis of `strain_basis`.
    pub fn coords(&self) -> Vec<f64> {
        strain_basis(self.dim()).iter().map(|b| b.0.ddot(&self.0)).collect()
    }

    pub fn from_coords(dim: usize, c: &[f64]) -> Self {
        let mut m = Mat::zeros(dim);
        for (b, &ci) in strain_basis(dim).iter().zip(c) {
            m = m.add(&b.0.scale(ci));
        }
        StrainRate(m.deviatoric())
    }
}

/// Orthonormal (Frobenius) basis of trace-free symmetric matrices.
/// Order: normal-stress differences first, then shears (0,1), (0,2), (1,2).
pub fn strain_basis(dim: usize) -> Vec<StrainRate> {
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::new();
    let mut d1 = Mat::zeros(dim);
    d1.m[0][0] = r2;
    d1.m[1][1] = -r2;
    out.push(StrainRate(d1));
    if dim == 3 {
        let r6 = 1.0 / 6f64.sqrt();
        let mut d2 = Mat::zeros(3);
        d2.m[0][0] = r6;
        d2.m[1][1] = r6;
        d2.m[2][2] = -2.0 * r6;
        out.push(StrainRate(d2));
    }
    let shears: &[(usize, usize)] = if dim == 2 { &[(0, 1)] } else { &[(0, 1), (0, 2), (1, 2)] };
    for &(a, b) in shears {
        out.push(StrainRate::shear(dim, a, b, 2.0 * r2));
    }
    out
}

/// Linear map on trace-free symmetric matrices given by its matrix in `strain_basis`.
pub fn apply_strain_map(b: &[Vec<f64>], e: &StrainRate) -> Mat {
    let c = e.coords();
    let out: Vec<f64> = b.iter().map(|row| row.iter().zip(&c).map(|(x, y)| x * y).sum()).collect();
    StrainRate::from_coords(e.dim(), &out).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basis_is_orthonormal_and_trace_free() {
        for d in [2, 3] {
            let b = strain_basis(d);
            assert_eq!(b.len(), strain_dim(d));
            for (i, bi) in b.iter().enumerate() {
                assert_abs_diff_eq!(bi.mat().trace(), 0.0, epsilon = 1e-15);
                for (j, bj) in b.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(bi.mat().ddot(bj.mat()), want, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn coords_round_trip() {
        let e = StrainRate::new(Mat::from_fn(3, |i, j| [[1.0, 0.2, -0.3], [0.2, -0.4, 0.5], [-0.3, 0.5, -0.6]][i][j])).unwrap();
        let back = StrainRate::from_coords(3, &e.coords());
        assert_abs_diff_eq!(back.sub(&e).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_symmetric_and_traced() {
        assert!(StrainRate::new(Mat::from_fn(2, |i, j| (i + 2 * j) as f64 - 1.5)).is_err());
        assert!(StrainRate::new(Mat::identity(2)).is_err());
    }

    #[test]
    fn rotation_3d_is_orthogonal() {
        let r = rotation(3, 0.7, &[1.0, 2.0, -0.5]);
        let rtr = r.transpose().mul(&r);
        assert_abs_diff_eq!(rtr.sub(&Mat::identity(3)).norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn serde_as_rows() {
        let e = StrainRate::shear(2, 0, 1, 1.0);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, "[[0.0,0.5],[0.5,0.0]]");
        let back: StrainRate = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
        assert!(serde_json::from_str::<StrainRate>("[[1.0,0.0],[0.0,1.0]]").is_err());
    }
}
