//! Complex dense helpers shared by the evaluators and the block solvers.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn zeros(n: usize) -> CVec {
    CVec::from_element(n, c(0.0, 0.0))
}

/// `‖v‖²` of a complex vector.
pub fn norm_sq(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `a^H b`.
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Adds `s · x x^H` to `acc`.
pub fn add_outer(acc: &mut CMat, x: &CVec, s: f64) {
    let n = x.len();
    for i in 0..n {
        for j in 0..n {
            acc[(i, j)] += x[i] * x[j].conj() * s;
        }
    }
}

/// Solves `A x = b` for Hermitian positive definite `A`.
pub fn hpd_solve(a: &CMat, b: &CVec) -> Result<CVec> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("matrix is not Hermitian positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Dominant right singular vector of `h` (unit norm), by power iteration on `h^H h`.
pub fn dominant_right_singular(h: &CMat) -> CVec {
    let gram = h.adjoint() * h;
    let n = gram.ncols();
    let mut v = CVec::from_fn(n, |i, _| c(1.0 + 0.1 * i as f64, 0.0));
    v /= c(v.norm(), 0.0);
    for _ in 0..200 {
        let next = &gram * &v;
        let nrm = next.norm();
        if nrm <= f64::MIN_POSITIVE {
            break;
        }
        let next = next / c(nrm, 0.0);
        let delta = (&next - &v).norm();
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    v
}

/// Determinant of a square complex matrix.
pub fn det(a: &CMat) -> C64 {
    a.clone().lu().determinant()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hpd_solve_matches_direct_product() {
        let a = CMat::from_row_slice(2, 2, &[c(4.0, 0.0), c(1.0, 1.0), c(1.0, -1.0), c(3.0, 0.0)]);
        let x = CVec::from_vec(vec![c(1.0, 2.0), c(-0.5, 0.25)]);
        let b = &a * &x;
        let got = hpd_solve(&a, &b).unwrap();
        assert!((got - x).norm() < 1e-12);
    }

    #[test]
    fn dominant_singular_vector_of_rank_one() {
        let u = CVec::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, 0.0)]);
        let w = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let h = &u * w.adjoint();
        let v = dominant_right_singular(&h);
        assert!((inner(&w, &v).norm() - 1.0).abs() < 1e-9);
    }
}
