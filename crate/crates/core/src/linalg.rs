//! Small direct solvers. Absorbing-chain systems I - Q are diagonally
//! dominant M-matrices, so banded elimination runs without pivoting.

use crate::error::{LabError, Result};

/// Square matrix stored by diagonals within a symmetric half-bandwidth.
#[derive(Debug, Clone)]
pub struct BandedMatrix {
    n: usize,
    band: usize,
    // row i holds columns i-band ..= i+band
    data: Vec<f64>,
    factored: bool,
}

impl BandedMatrix {
    pub fn zeros(n: usize, band: usize) -> Self {
        Self {
            n,
            band,
            data: vec![0.0; n * (2 * band + 1)],
            factored: false,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i.abs_diff(j) <= self.band);
        i * (2 * self.band + 1) + (j + self.band - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.band {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// In-place LU without pivoting (Doolittle, unit lower factor).
    pub fn factor(&mut self) -> Result<()> {
        let (n, b) = (self.n, self.band);
        for k in 0..n {
            let pivot = self.data[self.slot(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(LabError::Singular(format!("zero pivot at row {k}")));
            }
            let last = (k + b).min(n - 1);
            for i in k + 1..=last {
                let s_ik = self.slot(i, k);
                let l = self.data[s_ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[s_ik] = l;
                for j in k + 1..=last {
                    let s_kj = self.slot(k, j);
                    let s_ij = self.slot(i, j);
                    self.data[s_ij] -= l * self.data[s_kj];
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    pub fn solve(&self, rhs: &mut [f64]) {
        assert!(self.factored, "factor() first");
        let (n, b) = (self.n, self.band);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut s = rhs[i];
            for (j, r) in rhs.iter().enumerate().take(i).skip(lo) {
                s -= self.data[self.slot(i, j)] * r;
            }
            rhs[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut s = rhs[i];
            for j in i + 1..=hi {
                s -= self.data[self.slot(i, j)] * rhs[j];
            }
            rhs[i] = s / self.data[self.slot(i, i)];
        }
    }
}

/// Dense LU with partial pivoting; returns the solution of A x = b.
pub fn dense_solve(mut a: Vec<f64>, n: usize, mut b: Vec<f64>) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    for k in 0..n {
        let (p, max) = (k..n)
            .map(|i| (i, a[i * n + k].abs()))
            .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if max < 1e-300 {
            return Err(LabError::Singular(format!("dense pivot {k}")));
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = a[k * n + k];
        for i in k + 1..n {
            let l = a[i * n + k] / pivot;
            if l == 0.0 {
                continue;
            }
            for j in k..n {
                a[i * n + j] -= l * a[k * n + j];
            }
            b[i] -= l * b[k];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i * n + j] * b[j];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn banded_matches_dense() {
        let n = 30;
        let band = 3;
        let mut m = BandedMatrix::zeros(n, band);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in i.saturating_sub(band)..=(i + band).min(n - 1) {
                let v = if i == j {
                    10.0
                } else {
                    -(((i * 7 + j * 3) % 5) as f64) / 5.0
                };
                m.add(i, j, v);
                dense[i * n + j] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let want = dense_solve(dense, n, rhs.clone()).unwrap();
        m.factor().unwrap();
        let mut got = rhs;
        m.solve(&mut got);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_detected() {
        let mut m = BandedMatrix::zeros(2, 1);
        m.add(0, 0, 1.0);
        m.add(0, 1, 1.0);
        m.add(1, 0, 1.0);
        m.add(1, 1, 1.0);
        assert!(m.factor().is_err());
        assert!(dense_solve(vec![1.0, 1.0, 1.0, 1.0], 2, vec![1.0, 2.0]).is_err());
    }
}
