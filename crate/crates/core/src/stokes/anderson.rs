//! Type-II Anderson acceleration of a fixed-point map x ↦ G(x).

use std::collections::VecDeque;

pub struct Anderson {
    depth: usize,
    df: VecDeque<Vec<f64>>,
    dg: VecDeque<Vec<f64>>,
    /// Gram matrix of the stored residual differences, updated incrementally.
    gram: VecDeque<Vec<f64>>,
    last: Option<(Vec<f64>, Vec<f64>)>,
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Anderson {
    pub fn new(depth: usize) -> Self {
        Anderson { depth, df: VecDeque::new(), dg: VecDeque::new(), gram: VecDeque::new(), last: None }
    }

    pub fn reset(&mut self) {
        self.df.clear();
        self.dg.clear();
        self.gram.clear();
        self.last = None;
    }

    /// Given x_k and g_k = G(x_k), returns the next iterate.
    pub fn next(&mut self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let f: Vec<f64> = g.iter().zip(x).map(|(a, b)| a - b).collect();
        if self.depth == 0 {
            return g.to_vec();
        }
        if let Some((fp, gp)) = self.last.take() {
            let dfk: Vec<f64> = f.iter().zip(&fp).map(|(a, b)| a - b).collect();
            let dgk: Vec<f64> = g.iter().zip(&gp).map(|(a, b)| a - b).collect();
            if self.df.len() == self.depth {
                self.df.pop_front();
                self.dg.pop_front();
                self.gram.pop_front();
                for row in self.gram.iter_mut() {
                    row.remove(0);
                }
            }
            let row: Vec<f64> = self.df.iter().map(|v| dotv(v, &dfk)).collect();
            let diag = dotv(&dfk, &dfk);
            for (r, v) in self.gram.iter_mut().zip(&row) {
                r.push(*v);
            }
            let mut new_row = row;
            new_row.push(diag);
            self.gram.push_back(new_row);
            self.df.push_back(dfk);
            self.dg.push_back(dgk);
        }
        self.last = Some((f.clone(), g.to_vec()));
        let m = self.df.len();
        if m == 0 {
            return g.to_vec();
        }
        // equilibrate columns: history differences span many orders of magnitude
        let dscale: Vec<f64> = (0..m).map(|i| self.gram[i][i].sqrt()).collect();
        if dscale.iter().any(|&v| v == 0.0) {
            self.reset();
            return g.to_vec();
        }
        let a = nalgebra::DMatrix::from_fn(m, m, |i, j| self.gram[i][j] / (dscale[i] * dscale[j]) + if i == j { 1e-13 } else { 0.0 });
        let b = nalgebra::DVector::from_iterator(m, self.df.iter().zip(&dscale).map(|(v, s)| dotv(v, &f) / s));
        let gamma = match a.svd(true, true).solve(&b, 1e-12) {
            Ok(s) => s.iter().zip(&dscale).map(|(x, s)| x / s).collect::<Vec<f64>>(),
            Err(_) => return g.to_vec(),
        };
        let mut out = g.to_vec();
        for (gi, dg) in gamma.iter().zip(&self.dg) {
            out.iter_mut().zip(dg).for_each(|(o, d)| *o -= gi * d);
        }
        out
    }
}
