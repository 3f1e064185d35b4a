//! Banded complex matrices with an LU factorization without pivoting.
//!
//! The Crank–Nicolson matrices I + iK (K Hermitian up to a small diagonal
//! term) have a positive definite Hermitian part, so elimination without
//! pivoting is stable for them.

use crate::error::{Error, Result};
use crate::grid::C64;

/// Square banded matrix with equal lower and upper bandwidth `bw`.
#[derive(Clone, Debug)]
pub struct Banded {
    n: usize,
    bw: usize,
    data: Vec<C64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Banded { n, bw, data: vec![C64::new(0.0, 0.0); n * (2 * bw + 1)] }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        if i.abs_diff(j) > self.bw {
            C64::new(0.0, 0.0)
        } else {
            self.data[self.idx(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: C64) {
        debug_assert!(i.abs_diff(j) <= self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Row-wise band iteration helper: column range of row `i`.
    #[inline]
    fn cols(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.bw)..(i + self.bw + 1).min(self.n)
    }

    /// self + s * other (same shape).
    pub fn axpy(&self, s: C64, other: &Banded) -> Banded {
        assert_eq!((self.n, self.bw), (other.n, other.bw));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + s * b).collect();
        Banded { n: self.n, bw: self.bw, data }
    }

    pub fn scale(&self, s: C64) -> Banded {
        Banded { n: self.n, bw: self.bw, data: self.data.iter().map(|a| a * s).collect() }
    }

    pub fn add_identity(&mut self, s: C64) {
        for i in 0..self.n {
            self.add(i, i, s);
        }
    }

    pub fn mul(&self, x: &[C64]) -> Vec<C64> {
        (0..self.n)
            .map(|i| self.cols(i).map(|j| self.data[self.idx(i, j)] * x[j]).sum())
            .collect()
    }

    /// Conjugate-transpose product A^H x.
    pub fn mul_adjoint(&self, x: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.n];
        for i in 0..self.n {
            for j in self.cols(i) {
                out[j] += self.data[self.idx(i, j)].conj() * x[i];
            }
        }
        out
    }

    pub fn adjoint(&self) -> Banded {
        let mut out = Banded::zeros(self.n, self.bw);
        for i in 0..self.n {
            for j in self.cols(i) {
                let k = out.idx(j, i);
                out.data[k] = self.data[self.idx(i, j)].conj();
            }
        }
        out
    }

    /// LU factorization without pivoting, in band storage.
    pub fn factor(&self) -> Result<BandedLu> {
        let mut lu = self.clone();
        let n = self.n;
        let bw = self.bw;
        for k in 0..n {
            let piv = lu.data[lu.idx(k, k)];
            if piv.norm() == 0.0 || !piv.is_finite() {
                return Err(Error::numerical(format!("zero pivot at row {k}"), f64::INFINITY));
            }
            let last = (k + bw + 1).min(n);
            for i in (k + 1)..last {
                let ik = lu.idx(i, k);
                let l = lu.data[ik] / piv;
                lu.data[ik] = l;
                if l.norm_sqr() == 0.0 {
                    continue;
                }
                for j in (k + 1)..last {
                    let kj = lu.data[lu.idx(k, j)];
                    let ij = lu.idx(i, j);
                    lu.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandedLu { lu })
    }

    /// Solves A x = b to relative residual `tol` with iterative refinement.
    pub fn solve(&self, b: &[C64], tol: f64) -> Result<Vec<C64>> {
        let lu = self.factor()?;
        lu.solve_refined(self, b, tol, false)
    }
}

#[derive(Clone, Debug)]
pub struct BandedLu {
    lu: Banded,
}

impl BandedLu {
    /// Plain solve A x = b.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let a = &self.lu;
        let n = a.n;
        let mut x = b.to_vec();
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(a.bw)..i {
                s -= a.data[a.idx(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..(i + a.bw + 1).min(n) {
                s -= a.data[a.idx(i, j)] * x[j];
            }
            x[i] = s / a.data[a.idx(i, i)];
        }
        x
    }

    /// Solve A^H x = b using the same factors (A^H = U^H L^H).
    pub fn solve_adjoint(&self, b: &[C64]) -> Vec<C64> {
        let a = &self.lu;
        let n = a.n;
        let mut x = b.to_vec();
        // U^H z = b: forward substitution, U^H lower triangular.
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(a.bw)..i {
                s -= a.data[a.idx(j, i)].conj() * x[j];
            }
            x[i] = s / a.data[a.idx(i, i)].conj();
        }
        // L^H x = z: backward substitution with unit diagonal.
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..(i + a.bw + 1).min(n) {
                s -= a.data[a.idx(j, i)].conj() * x[j];
            }
            x[i] = s;
        }
        x
    }

    /// Solve with residual checks against the unfactored matrix.
    pub fn solve_refined(&self, a: &Banded, b: &[C64], tol: f64, adjoint: bool) -> Result<Vec<C64>> {
        let bnorm = norm(b);
        let mut x = if adjoint { self.solve_adjoint(b) } else { self.solve(b) };
        if bnorm == 0.0 {
            return Ok(x);
        }
        let mut res = f64::INFINITY;
        for _ in 0..4 {
            let ax = if adjoint { a.mul_adjoint(&x) } else { a.mul(&x) };
            let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            res = norm(&r) / bnorm;
            if res <= tol {
                return Ok(x);
            }
            let dx = if adjoint { self.solve_adjoint(&r) } else { self.solve(&r) };
            for (xi, di) in x.iter_mut().zip(dx) {
                *xi += di;
            }
        }
        Err(Error::numerical("banded solve stagnated", res))
    }
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, bw: usize) -> Banded {
        let mut a = Banded::zeros(n, bw);
        for i in 0..n {
            for j in i.saturating_sub(bw)..(i + bw + 1).min(n) {
                let v = C64::new(((i * 3 + j * 7) % 5) as f64 * 0.1, ((i + 2 * j) % 3) as f64 * 0.2);
                a.add(i, j, v);
            }
            a.add(i, i, C64::new(3.0, 1.0));
        }
        a
    }

    #[test]
    fn solves_and_adjoint_solves() {
        let a = sample(23, 4);
        let b: Vec<C64> = (0..23).map(|i| C64::new(i as f64, 1.0 - i as f64 * 0.3)).collect();
        let lu = a.factor().unwrap();
        let x = lu.solve_refined(&a, &b, 1e-13, false).unwrap();
        assert!(norm(&a.mul(&x).iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>()) < 1e-12 * norm(&b));
        let y = lu.solve_refined(&a, &b, 1e-13, true).unwrap();
        let ay = a.adjoint().mul(&y);
        assert!(norm(&ay.iter().zip(&b).map(|(p, q)| p - q).collect::<Vec<_>>()) < 1e-12 * norm(&b));
    }

    #[test]
    fn adjoint_product_is_consistent() {
        let a = sample(17, 3);
        let x: Vec<C64> = (0..17).map(|i| C64::new(1.0, i as f64)).collect();
        let y: Vec<C64> = (0..17).map(|i| C64::new((i as f64).sin(), 0.5)).collect();
        let lhs: C64 = y.iter().zip(a.mul(&x)).map(|(p, q)| p.conj() * q).sum();
        let rhs: C64 = a.mul_adjoint(&y).iter().zip(&x).map(|(p, q)| p.conj() * q).sum();
        assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
    }
}
