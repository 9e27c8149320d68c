use crate::error::{Error, Result};

use super::mat::Mat;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Lower-triangular Cholesky factor of `a + jitter·I`.
#[derive(Clone, Debug)]
pub struct SpdFactor {
    pub lower: Mat,
    pub jitter: f64,
}

/// Plain Cholesky factorization. Only the lower triangle of `a` is read.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    cholesky_shifted(a, 0.0)
}

fn cholesky_shifted(a: &Mat, shift: f64) -> Result<Mat> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            op: "cholesky",
            lhs: a.shape(),
            rhs: a.shape(),
        });
    }
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j) + shift;
        for k in 0..j {
            let v = l.get(j, k);
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(shift));
        }
        let d = libm::sqrt(d);
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` given the lower factor.
pub fn cholesky_solve(lower: &Mat, b: &Mat) -> Result<Mat> {
    let n = lower.rows();
    if b.rows() != n {
        return Err(Error::Shape {
            op: "cholesky_solve",
            lhs: lower.shape(),
            rhs: b.shape(),
        });
    }
    let m = b.cols();
    let mut x = b.clone();
    // forward: L y = b
    for i in 0..n {
        for k in 0..i {
            let l = lower.get(i, k);
            if l != 0.0 {
                for c in 0..m {
                    let v = x.get(i, c) - l * x.get(k, c);
                    x.set(i, c, v);
                }
            }
        }
        let d = lower.get(i, i);
        for c in 0..m {
            x.set(i, c, x.get(i, c) / d);
        }
    }
    // backward: Lᵀ x = y
    for i in (0..n).rev() {
        for k in i + 1..n {
            let l = lower.get(k, i);
            if l != 0.0 {
                for c in 0..m {
                    let v = x.get(i, c) - l * x.get(k, c);
                    x.set(i, c, v);
                }
            }
        }
        let d = lower.get(i, i);
        for c in 0..m {
            x.set(i, c, x.get(i, c) / d);
        }
    }
    Ok(x)
}

/// Factors a symmetric positive-definite matrix, escalating diagonal jitter
/// from 1e-10 by factors of 10 up to 1e-4 when the plain factorization fails.
pub fn spd_factor(a: &Mat) -> Result<SpdFactor> {
    if !a.is_finite() {
        return Err(Error::NonFinite("spd_solve"));
    }
    if let Ok(lower) = cholesky_shifted(a, 0.0) {
        return Ok(SpdFactor { lower, jitter: 0.0 });
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        if let Ok(lower) = cholesky_shifted(a, jitter) {
            return Ok(SpdFactor { lower, jitter });
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(JITTER_MAX))
}

/// `A⁻¹ B` for symmetric positive-definite `A`, via Cholesky.
pub fn spd_solve(a: &Mat, b: &Mat) -> Result<(Mat, SpdFactor)> {
    let f = spd_factor(a)?;
    let x = cholesky_solve(&f.lower, b)?;
    Ok((x, f))
}
