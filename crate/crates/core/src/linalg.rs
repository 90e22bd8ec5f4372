//! Small dense linear-algebra helpers on 3×3 matrices.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen};

pub type Mat = Matrix3<f64>;

/// Matrix exponential by scaling and squaring with a diagonal (6,6) Padé approximant.
pub fn expm(a: &Mat) -> Mat {
    let norm = (0..3)
        .map(|i| (0..3).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut s = 0u32;
    if norm > 0.5 {
        s = (norm / 0.5).log2().ceil() as u32;
    }
    let x = a / 2f64.powi(s as i32);
    const Q: usize = 6;
    let mut c = [0.0; Q + 1];
    c[0] = 1.0;
    for k in 1..=Q {
        c[k] = c[k - 1] * ((Q + 1 - k) as f64) / ((k * (2 * Q + 1 - k)) as f64);
    }
    let mut n = Mat::identity();
    let mut d = Mat::identity();
    let mut p = Mat::identity();
    for (k, ck) in c.iter().enumerate().skip(1) {
        p *= x;
        n += p * *ck;
        if k % 2 == 0 {
            d += p * *ck;
        } else {
            d -= p * *ck;
        }
    }
    let mut e = d.try_inverse().expect("Padé denominator is invertible for small norms") * n;
    for _ in 0..s {
        e = e * e;
    }
    e
}

/// Symmetric square root of a positive semidefinite matrix, negative eigenvalues clipped to 0.
pub fn psd_sqrt(m: &Mat) -> Mat {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut out = Mat::zeros();
    for i in 0..3 {
        let l = eig.eigenvalues[i].max(0.0).sqrt();
        let v = eig.eigenvectors.column(i);
        out += v * v.transpose() * l;
    }
    out
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Projection onto the positive semidefinite cone after clipping eigenvalues below zero.
pub fn psd_clip(m: &Mat) -> Mat {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut out = Mat::zeros();
    for i in 0..3 {
        let l = eig.eigenvalues[i].max(0.0);
        let v = eig.eigenvectors.column(i);
        out += v * v.transpose() * l;
    }
    out
}

/// Nodes and weights of the n-point Gauss rule for the standard normal density.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    golub_welsch(j)
}

/// Nodes and weights of the n-point Gauss rule for the density e^{-y} on (0, ∞).
pub fn gauss_laguerre(n: usize) -> Vec<(f64, f64)> {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        j[(k, k)] = (2 * k + 1) as f64;
        if k + 1 < n {
            j[(k, k + 1)] = (k + 1) as f64;
            j[(k + 1, k)] = (k + 1) as f64;
        }
    }
    golub_welsch(j)
}

fn golub_welsch(j: DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = j.nrows();
    let eig = SymmetricEigen::new(j);
    let mut out: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taylor_expm(a: &Mat) -> Mat {
        let mut out = Mat::identity();
        let mut term = Mat::identity();
        for k in 1..60 {
            term = term * a / k as f64;
            out += term;
        }
        out
    }

    #[test]
    fn pade_matches_taylor() {
        let a = Mat::new(0.3, -1.2, 0.5, 0.9, 0.1, -0.7, -0.2, 0.4, 0.05);
        assert!((expm(&a) - taylor_expm(&a)).abs().max() < 1e-13);
        let big = a * 3.0;
        let rel = (expm(&big) - taylor_expm(&big)).abs().max() / taylor_expm(&big).abs().max();
        assert!(rel < 1e-12);
    }

    #[test]
    fn hermite_moments() {
        let rule = gauss_hermite(8);
        let m = |p: i32| rule.iter().map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(6) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn laguerre_moments() {
        let rule = gauss_laguerre(6);
        let m = |p: i32| rule.iter().map(|(x, w)| w * x.powi(p)).sum::<f64>();
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!((m(1) - 1.0).abs() < 1e-12);
        assert!((m(3) - 6.0).abs() < 1e-10);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = Mat::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 0.5);
        let r = psd_sqrt(&m);
        assert!((r * r - m).abs().max() < 1e-12);
    }
}
