//! Banded matrices with an LU factorization using partial pivoting.

use crate::error::{Error, Result};

/// Square matrix with `kl` sub- and `ku` super-diagonals. Storage leaves room
/// for the `kl` extra super-diagonals created by row interchanges.
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
        let kl = kl.min(n.saturating_sub(1));
        let ku = ku.min(n.saturating_sub(1));
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.kl + self.ku {
            None
        } else {
            Some(i * self.width + (j + self.kl - i))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    /// Add to entry `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j).expect("in band");
        self.data[s] += v;
    }

    /// Principal submatrix on the sorted index list `keep`. The bandwidth
    /// carries over because `|a - b| <= |keep[a] - keep[b]|`.
    pub fn principal(&self, keep: &[usize]) -> BandMatrix {
        let mut out = BandMatrix::zeros(keep.len(), self.kl, self.ku);
        for (a, &i) in keep.iter().enumerate() {
            let lo = a.saturating_sub(out.kl);
            let hi = (a + out.ku + 1).min(keep.len());
            for (b, &j) in keep.iter().enumerate().take(hi).skip(lo) {
                let v = self.get(i, j);
                if v != 0.0 {
                    out.add(a, b, v);
                }
            }
        }
        out
    }

    #[cfg(test)]
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku + 1).min(self.n);
                (lo..hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// Solve `A x = b` in place of a factorization copy.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut lu = self.clone();
        let piv = lu.factor()?;
        Ok(lu.substitute(&piv, b))
    }

    #[allow(clippy::needless_range_loop)]
    fn factor(&mut self) -> Result<Vec<usize>> {
        let n = self.n;
        let upper = self.kl + self.ku;
        let mut piv = vec![0; n];
        for c in 0..n {
            let last = (c + self.kl + 1).min(n);
            let mut p = c;
            let mut best = self.get(c, c).abs();
            for r in c + 1..last {
                let v = self.get(r, c).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Numeric(format!("singular Newton matrix at column {c}")));
            }
            piv[c] = p;
            let cmax = (c + upper + 1).min(n);
            if p != c {
                for col in c..cmax {
                    let a = self.slot(c, col).expect("band");
                    let b = self.slot(p, col).expect("band");
                    self.data.swap(a, b);
                }
            }
            let d = self.get(c, c);
            for r in c + 1..last {
                let sr = self.slot(r, c).expect("band");
                let l = self.data[sr] / d;
                self.data[sr] = l;
                if l == 0.0 {
                    continue;
                }
                for col in c + 1..cmax {
                    let u = self.get(c, col);
                    let s = self.slot(r, col).expect("band");
                    self.data[s] -= l * u;
                }
            }
        }
        Ok(piv)
    }

    #[allow(clippy::needless_range_loop)]
    fn substitute(&self, piv: &[usize], b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let upper = self.kl + self.ku;
        let mut x = b.to_vec();
        for c in 0..n {
            x.swap(c, piv[c]);
            let last = (c + self.kl + 1).min(n);
            for r in c + 1..last {
                x[r] -= self.get(r, c) * x[c];
            }
        }
        for i in (0..n).rev() {
            let hi = (i + upper + 1).min(n);
            let mut s = x[i];
            for j in i + 1..hi {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }
}
