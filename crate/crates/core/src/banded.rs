//! Banded LU factorization with partial pivoting.
//!
//! Row-major band storage: row `i` holds columns `i - kl ..= i + ku + kl`,
//! the extra `kl` columns absorbing fill-in from row interchanges.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    /// Whether `(i, j)` lies inside the declared band.
    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku + self.kl {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` at `(i, j)`; the position must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    /// Zeroes row `i` inside the band.
    pub fn clear_row(&mut self, i: usize) {
        let start = i * self.width;
        self.data[start..start + self.width].fill(0.0);
    }

    /// Zeroes column `j` inside the band.
    pub fn clear_col(&mut self, j: usize) {
        let lo = j.saturating_sub(self.ku);
        let hi = (j + self.kl).min(self.n - 1);
        for i in lo..=hi {
            let k = self.idx(i, j);
            self.data[k] = 0.0;
        }
    }

    /// `y = A x` for the unfactored matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// Factorizes in place.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let kl = self.kl;
        let reach = self.ku + self.kl;
        let mut pivots = vec![0usize; n];
        for j in 0..n {
            let last_row = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = self.data[self.idx(j, j)].abs();
            for r in j + 1..=last_row {
                let v = self.data[self.idx(r, j)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Convergence(format!("singular banded matrix at column {j}")));
            }
            pivots[j] = p;
            let last_col = (j + reach).min(n - 1);
            if p != j {
                for c in j..=last_col {
                    let a = self.idx(j, c);
                    let b = self.idx(p, c);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(j, j)];
            let len = last_col - j;
            for r in j + 1..=last_row {
                let rj = self.idx(r, j);
                let l = self.data[rj] / pivot;
                self.data[rj] = l;
                if l == 0.0 {
                    continue;
                }
                let src = self.idx(j, j + 1);
                let dst = self.idx(r, j + 1);
                let (head, tail) = self.data.split_at_mut(dst);
                let pivot_row = &head[src..src + len];
                for (d, s) in tail[..len].iter_mut().zip(pivot_row) {
                    *d -= l * s;
                }
            }
        }
        Ok(BandLu { a: self, pivots })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    a: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        let a = &self.a;
        let n = a.n;
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                b.swap(j, p);
            }
            let bj = b[j];
            if bj != 0.0 {
                for r in j + 1..=(j + a.kl).min(n - 1) {
                    b[r] -= a.data[a.idx(r, j)] * bj;
                }
            }
        }
        let reach = a.ku + a.kl;
        for j in (0..n).rev() {
            let mut s = b[j];
            for c in j + 1..=(j + reach).min(n - 1) {
                s -= a.data[a.idx(j, c)] * b[c];
            }
            b[j] = s / a.data[a.idx(j, j)];
        }
    }
}
