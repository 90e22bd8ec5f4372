//! Matrix Lie groups: exponential and logarithm, adjoint action, bases of the
//! Lie algebra and compactly supported coordinate functions.
//!
//! Every supported group is realized inside 3×3 real matrices. Groups with a
//! smaller defining representation are padded with an identity block, and Lie
//! algebra vectors always carry three slots with the unused ones set to zero.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix3, Vector3, SVD};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

pub type Mat = Matrix3<f64>;

/// Coefficients of a Lie algebra element in the basis `ξ_1, …, ξ_d`.
pub type LieAlgebraVector = Vector3<f64>;

/// Number of multiplications between re-projections onto the group.
pub const RENORMALIZE_EVERY: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupElement(pub Mat);

impl GroupElement {
    pub fn identity() -> Self {
        GroupElement(Mat::identity())
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0 == Mat::identity()
    }
}

impl std::ops::Mul for GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: GroupElement) -> GroupElement {
        GroupElement(self.0 * rhs.0)
    }
}

impl std::ops::Mul<&GroupElement> for &GroupElement {
    type Output = GroupElement;
    fn mul(self, rhs: &GroupElement) -> GroupElement {
        GroupElement(self.0 * rhs.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GroupKind {
    So3,
    Se2,
    /// Translations of R^d for d in {1, 2}.
    Rd(usize),
    /// The circle group SO(2).
    Circle,
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::So3 => write!(f, "SO3"),
            GroupKind::Se2 => write!(f, "SE2"),
            GroupKind::Rd(d) => write!(f, "RD{d}"),
            GroupKind::Circle => write!(f, "circle"),
        }
    }
}

impl std::str::FromStr for GroupKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "SO3" | "so3" => Ok(GroupKind::So3),
            "SE2" | "se2" => Ok(GroupKind::Se2),
            "RD1" | "rd1" => Ok(GroupKind::Rd(1)),
            "RD2" | "rd2" => Ok(GroupKind::Rd(2)),
            "circle" | "circle-K" | "SO2" => Ok(GroupKind::Circle),
            other => Err(Error::Config(format!(
                "unknown group `{other}` (expected SO3, SE2, RD1, RD2 or circle)"
            ))),
        }
    }
}

/// A matrix Lie group together with its basis and coordinate-function radii.
#[derive(Clone, Debug)]
pub struct GroupDescriptor {
    kind: GroupKind,
    dim: usize,
    size: usize,
    basis: [Mat; 3],
    dual: [Mat; 3],
    sym: [[Mat; 3]; 3],
    r_in: f64,
    r_out: f64,
    r_cut: f64,
}

pub fn hat_so3(v: &Vector3<f64>) -> Mat {
    Mat::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub fn vee_so3(m: &Mat) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

fn unit(i: usize, j: usize) -> Mat {
    let mut m = Mat::zeros();
    m[(i, j)] = 1.0;
    m
}

/// `e^{-1/x}` for `x > 0`, zero otherwise.
fn flat(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff: 1 on `[0, r_in]`, 0 on `[r_out, ∞)`, C^∞ in between.
pub fn smooth_cutoff(t: f64, r_in: f64, r_out: f64) -> f64 {
    if t <= r_in {
        1.0
    } else if t >= r_out {
        0.0
    } else {
        let s = (t - r_in) / (r_out - r_in);
        let a = flat(1.0 - s);
        let b = flat(s);
        a / (a + b)
    }
}

impl GroupDescriptor {
    fn build(kind: GroupKind, dim: usize, size: usize, basis_list: &[Mat], radii: (f64, f64, f64)) -> Self {
        let mut basis = [Mat::zeros(); 3];
        basis[..dim].copy_from_slice(&basis_list[..dim]);
        let mut gram = Mat::identity();
        for i in 0..dim {
            for j in 0..dim {
                gram[(i, j)] = basis[i].dot(&basis[j]);
            }
        }
        let ginv = gram.try_inverse().expect("basis matrices are linearly independent");
        let mut dual = [Mat::zeros(); 3];
        for (j, dj) in dual.iter_mut().enumerate().take(dim) {
            for i in 0..dim {
                *dj += basis[i] * ginv[(j, i)];
            }
        }
        let mut sym = [[Mat::zeros(); 3]; 3];
        for j in 0..dim {
            for k in 0..dim {
                sym[j][k] = (basis[j] * basis[k] + basis[k] * basis[j]) * 0.5;
            }
        }
        GroupDescriptor {
            kind,
            dim,
            size,
            basis,
            dual,
            sym,
            r_in: radii.0,
            r_out: radii.1,
            r_cut: radii.2,
        }
    }

    pub fn so3() -> Self {
        let e = |i| hat_so3(&Vector3::ith(i, 1.0));
        Self::build(GroupKind::So3, 3, 3, &[e(0), e(1), e(2)], (0.8, 2.8, 3.1))
    }

    pub fn se2() -> Self {
        let rot = unit(1, 0) - unit(0, 1);
        Self::build(GroupKind::Se2, 3, 3, &[unit(0, 2), unit(1, 2), rot], (0.8, 2.8, 3.1))
    }

    pub fn rd(d: usize) -> Result<Self> {
        if !(1..=2).contains(&d) {
            return Err(Error::InvalidArgument(format!(
                "RD(d) is supported for d in {{1, 2}}, got {d}"
            )));
        }
        let basis: Vec<Mat> = (0..d).map(|i| unit(i, d)).collect();
        Ok(Self::build(GroupKind::Rd(d), d, d + 1, &basis, (1.0, 2.0, f64::INFINITY)))
    }

    pub fn circle() -> Self {
        let rot = unit(1, 0) - unit(0, 1);
        Self::build(GroupKind::Circle, 1, 2, &[rot], (0.8, 2.8, 3.1))
    }

    pub fn from_kind(kind: GroupKind) -> Result<Self> {
        match kind {
            GroupKind::So3 => Ok(Self::so3()),
            GroupKind::Se2 => Ok(Self::se2()),
            GroupKind::Rd(d) => Self::rd(d),
            GroupKind::Circle => Ok(Self::circle()),
        }
    }

    /// Replaces the cutoff radii `0 < r_in < r_out ≤ r_cut`.
    pub fn with_radii(mut self, r_in: f64, r_out: f64, r_cut: f64) -> Result<Self> {
        let max_cut = match self.kind {
            GroupKind::Rd(_) => f64::INFINITY,
            _ => PI,
        };
        if !(r_in > 0.0 && r_in < r_out && r_out <= r_cut && r_cut <= max_cut) {
            return Err(Error::InvalidArgument(format!(
                "radii must satisfy 0 < r_in < r_out <= r_cut <= {max_cut}, got ({r_in}, {r_out}, {r_cut})"
            )));
        }
        self.r_in = r_in;
        self.r_out = r_out;
        self.r_cut = r_cut;
        Ok(self)
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn name(&self) -> String {
        self.kind.to_string()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Size n of the defining n×n representation (the rest of the 3×3 storage is identity).
    pub fn matrix_size(&self) -> usize {
        self.size
    }

    pub fn basis(&self) -> &[Mat] {
        &self.basis[..self.dim]
    }

    pub fn basis_padded(&self) -> &[Mat; 3] {
        &self.basis
    }

    /// Symmetrized products `(ξ_jξ_k + ξ_kξ_j)/2`.
    pub fn sym_products(&self) -> &[[Mat; 3]; 3] {
        &self.sym
    }

    pub fn r_in(&self) -> f64 {
        self.r_in
    }

    pub fn r_out(&self) -> f64 {
        self.r_out
    }

    pub fn r_cut(&self) -> f64 {
        self.r_cut
    }

    pub fn is_abelian(&self) -> bool {
        matches!(self.kind, GroupKind::Rd(_) | GroupKind::Circle)
    }

    /// Checks the vector has finite entries and zero padding.
    pub fn check_vector(&self, v: &LieAlgebraVector) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite algebra vector {v:?}")));
        }
        if v.iter().skip(self.dim).any(|x| *x != 0.0) {
            return Err(Error::InvalidArgument(format!(
                "algebra vector {:?} has nonzero entries beyond dimension {}",
                v.as_slice(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn hat(&self, v: &LieAlgebraVector) -> Mat {
        let mut m = Mat::zeros();
        for j in 0..self.dim {
            m += self.basis[j] * v[j];
        }
        m
    }

    /// Coefficients of a Lie algebra matrix in the basis.
    pub fn vee(&self, m: &Mat) -> LieAlgebraVector {
        let mut v = LieAlgebraVector::zeros();
        for j in 0..self.dim {
            v[j] = self.dual[j].dot(m);
        }
        v
    }

    pub fn exp(&self, v: &LieAlgebraVector) -> GroupElement {
        match self.kind {
            GroupKind::So3 => {
                let w = Vector3::new(v[0], v[1], v[2]);
                let th2 = w.norm_squared();
                let th = th2.sqrt();
                let (a, b) = if th < 1e-4 {
                    (1.0 - th2 / 6.0 + th2 * th2 / 120.0, 0.5 - th2 / 24.0 + th2 * th2 / 720.0)
                } else {
                    (th.sin() / th, (1.0 - th.cos()) / th2)
                };
                let k = hat_so3(&w);
                GroupElement(Mat::identity() + k * a + k * k * b)
            }
            GroupKind::Se2 => {
                let th = v[2];
                let (a, b) = se2_v_coeffs(th);
                let (s, c) = th.sin_cos();
                let tx = a * v[0] - b * v[1];
                let ty = b * v[0] + a * v[1];
                GroupElement(Mat::new(c, -s, tx, s, c, ty, 0.0, 0.0, 1.0))
            }
            GroupKind::Rd(d) => {
                let mut m = Mat::identity();
                for i in 0..d {
                    m[(i, d)] = v[i];
                }
                GroupElement(m)
            }
            GroupKind::Circle => {
                let (s, c) = v[0].sin_cos();
                GroupElement(Mat::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
            }
        }
    }

    /// Rotation angle of the element (0 for translation groups).
    pub fn rotation_angle(&self, g: &GroupElement) -> f64 {
        let m = &g.0;
        match self.kind {
            GroupKind::So3 => {
                let c = 0.5 * (m.trace() - 1.0);
                let s = 0.5 * vee_so3(&(m - m.transpose())).norm();
                s.atan2(c)
            }
            GroupKind::Se2 | GroupKind::Circle => m[(1, 0)].atan2(m[(0, 0)]).abs(),
            GroupKind::Rd(_) => 0.0,
        }
    }

    /// Exponential coordinates of `g`; errors when `g` is outside the chart.
    pub fn log(&self, g: &GroupElement) -> Result<LieAlgebraVector> {
        let m = &g.0;
        match self.kind {
            GroupKind::So3 => {
                let c = 0.5 * (m.trace() - 1.0);
                let w = 0.5 * vee_so3(&(m - m.transpose()));
                let s = w.norm();
                let th = s.atan2(c);
                if th >= self.r_cut {
                    return Err(Error::OutOfChart { angle: th, cutoff: self.r_cut });
                }
                let factor = if th < 1e-4 {
                    1.0 + th * th / 6.0 + 7.0 * th.powi(4) / 360.0
                } else {
                    th / s
                };
                Ok(w * factor)
            }
            GroupKind::Se2 => {
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                if th.abs() >= self.r_cut {
                    return Err(Error::OutOfChart { angle: th.abs(), cutoff: self.r_cut });
                }
                let (a, b) = se2_v_coeffs(th);
                let det = a * a + b * b;
                let (tx, ty) = (m[(0, 2)], m[(1, 2)]);
                Ok(LieAlgebraVector::new((a * tx + b * ty) / det, (-b * tx + a * ty) / det, th))
            }
            GroupKind::Rd(d) => {
                let mut v = LieAlgebraVector::zeros();
                for i in 0..d {
                    v[i] = m[(i, d)];
                }
                Ok(v)
            }
            GroupKind::Circle => {
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                if th.abs() >= self.r_cut {
                    return Err(Error::OutOfChart { angle: th.abs(), cutoff: self.r_cut });
                }
                Ok(LieAlgebraVector::new(th, 0.0, 0.0))
            }
        }
    }

    pub fn inverse(&self, g: &GroupElement) -> GroupElement {
        let m = &g.0;
        match self.kind {
            GroupKind::So3 | GroupKind::Circle => GroupElement(m.transpose()),
            GroupKind::Se2 => {
                let r = m.fixed_view::<2, 2>(0, 0).transpose();
                let t = nalgebra::Vector2::new(m[(0, 2)], m[(1, 2)]);
                let ti = -(r * t);
                GroupElement(Mat::new(r[(0, 0)], r[(0, 1)], ti[0], r[(1, 0)], r[(1, 1)], ti[1], 0.0, 0.0, 1.0))
            }
            GroupKind::Rd(d) => {
                let mut out = Mat::identity();
                for i in 0..d {
                    out[(i, d)] = -m[(i, d)];
                }
                GroupElement(out)
            }
        }
    }

    /// `g x g^{-1}`.
    pub fn conjugate(&self, g: &GroupElement, x: &GroupElement) -> GroupElement {
        GroupElement(g.0 * x.0 * self.inverse(g).0)
    }

    /// Cutoff value χ(t).
    pub fn cutoff(&self, t: f64) -> f64 {
        smooth_cutoff(t, self.r_in, self.r_out)
    }

    /// All coordinate functions `φ_·(g) = χ(‖log g‖) log g`, zero outside the chart.
    pub fn coordinates(&self, g: &GroupElement) -> LieAlgebraVector {
        match self.log(g) {
            Ok(v) => {
                let r = v.norm();
                if r >= self.r_out {
                    LieAlgebraVector::zeros()
                } else {
                    v * self.cutoff(r)
                }
            }
            Err(_) => LieAlgebraVector::zeros(),
        }
    }

    pub fn coordinate_fn(&self, g: &GroupElement, j: usize) -> f64 {
        self.coordinates(g)[j]
    }

    /// Radius of `g` in the chart, `∞` when out of chart.
    pub fn chart_radius(&self, g: &GroupElement) -> f64 {
        self.log(g).map(|v| v.norm()).unwrap_or(f64::INFINITY)
    }

    /// Matrix of `Ad(g)` in the basis; unused trailing diagonal entries are 1.
    pub fn adjoint(&self, g: &GroupElement) -> Mat {
        match self.kind {
            GroupKind::So3 => g.0,
            GroupKind::Rd(_) | GroupKind::Circle => Mat::identity(),
            GroupKind::Se2 => self.adjoint_by_conjugation(g),
        }
    }

    /// `Ad(g)` computed by conjugating each basis matrix and re-expressing it.
    pub fn adjoint_by_conjugation(&self, g: &GroupElement) -> Mat {
        let gi = self.inverse(g);
        let mut out = Mat::identity();
        for k in 0..self.dim {
            let c = self.vee(&(g.0 * self.basis[k] * gi.0));
            for j in 0..self.dim {
                out[(j, k)] = c[j];
            }
        }
        out
    }

    /// `φ`-truncated mean `exp(Σ_j μ(φ_j) ξ_j)` of a probability measure.
    pub fn mean_of_measure(&self, mu: &DiscreteMeasure) -> GroupElement {
        self.exp(&self.measure_coordinates(mu))
    }

    /// The vector `μ(φ_·)`.
    pub fn measure_coordinates(&self, mu: &DiscreteMeasure) -> LieAlgebraVector {
        mu.atoms().iter().fold(LieAlgebraVector::zeros(), |acc, (g, w)| acc + self.coordinates(g) * *w)
    }

    /// Whether `φ_j(mean) = μ(φ_j)` for all j.
    pub fn is_small(&self, mu: &DiscreteMeasure) -> bool {
        let m = self.measure_coordinates(mu);
        let back = self.coordinates(&self.exp(&m));
        (back - m).amax() <= 1e-8
    }

    /// Left-invariant distance surrogate.
    pub fn distance(&self, g: &GroupElement, h: &GroupElement) -> f64 {
        let rel = self.inverse(g) * *h;
        if let Ok(v) = self.log(&rel) {
            return v.norm();
        }
        match self.kind {
            GroupKind::So3 | GroupKind::Circle => self.rotation_angle(&rel),
            GroupKind::Se2 => {
                let m = rel.0;
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                (th * th + m[(0, 2)].powi(2) + m[(1, 2)].powi(2)).sqrt()
            }
            GroupKind::Rd(_) => unreachable!("translation groups have a global chart"),
        }
    }

    /// Projects a nearly-valid matrix back onto the group.
    pub fn renormalize(&self, g: &GroupElement) -> GroupElement {
        let m = &g.0;
        match self.kind {
            GroupKind::So3 => {
                let svd = SVD::new(*m, true, true);
                let u = svd.u.expect("u requested");
                let vt = svd.v_t.expect("v requested");
                let mut r = u * vt;
                if r.determinant() < 0.0 {
                    let mut uf = u;
                    let mut col = uf.column_mut(2);
                    col *= -1.0;
                    r = uf * vt;
                }
                GroupElement(r)
            }
            GroupKind::Se2 | GroupKind::Circle => {
                let th = m[(1, 0)].atan2(m[(0, 0)]);
                let (s, c) = th.sin_cos();
                let (tx, ty) = if self.kind == GroupKind::Se2 { (m[(0, 2)], m[(1, 2)]) } else { (0.0, 0.0) };
                GroupElement(Mat::new(c, -s, tx, s, c, ty, 0.0, 0.0, 1.0))
            }
            GroupKind::Rd(d) => {
                let mut out = Mat::identity();
                for i in 0..d {
                    out[(i, d)] = m[(i, d)];
                }
                GroupElement(out)
            }
        }
    }

    /// Distance of a matrix from the group's defining constraints.
    pub fn membership_residual(&self, g: &GroupElement) -> f64 {
        let m = &g.0;
        match self.kind {
            GroupKind::So3 => (m.transpose() * m - Mat::identity()).norm() + (m.determinant() - 1.0).abs(),
            GroupKind::Se2 | GroupKind::Circle => {
                let r = m.fixed_view::<2, 2>(0, 0).into_owned();
                let mut res = (r.transpose() * r - nalgebra::Matrix2::identity()).norm() + (r.determinant() - 1.0).abs();
                res += m[(2, 0)].abs() + m[(2, 1)].abs() + (m[(2, 2)] - 1.0).abs();
                if self.kind == GroupKind::Circle {
                    res += m[(0, 2)].abs() + m[(1, 2)].abs();
                }
                res
            }
            GroupKind::Rd(d) => {
                let mut e = *m - Mat::identity();
                for i in 0..d {
                    e[(i, d)] = 0.0;
                }
                e.norm()
            }
        }
    }

    pub fn is_member(&self, g: &GroupElement, tol: f64) -> bool {
        g.0.iter().all(|x| x.is_finite()) && self.membership_residual(g) <= tol
    }

    /// `exp(v)` with `v` Gaussian of per-coordinate standard deviation `scale`.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> GroupElement {
        let mut v = LieAlgebraVector::zeros();
        for j in 0..self.dim {
            let z: f64 = StandardNormal.sample(rng);
            v[j] = scale * z;
        }
        self.exp(&v)
    }

    /// Sample grid used to check injectivity of the exponential on the chart.
    pub fn chart_is_injective(&self) -> bool {
        let r = if self.r_cut.is_finite() { self.r_cut * 0.999 } else { 10.0 };
        let mut ok = true;
        let n = 7;
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    let mut v = LieAlgebraVector::new(
                        -1.0 + 2.0 * a as f64 / (n - 1) as f64,
                        -1.0 + 2.0 * b as f64 / (n - 1) as f64,
                        -1.0 + 2.0 * c as f64 / (n - 1) as f64,
                    );
                    for j in self.dim..3 {
                        v[j] = 0.0;
                    }
                    let norm = v.norm();
                    if norm > 1.0 {
                        v /= norm;
                    }
                    v *= r;
                    ok &= match self.log(&self.exp(&v)) {
                        Ok(w) => (w - v).amax() <= 1e-8,
                        Err(_) => false,
                    };
                }
            }
        }
        ok
    }
}

/// Coefficients `(sin θ/θ, (1 − cos θ)/θ)` of the SE(2) left Jacobian.
fn se2_v_coeffs(th: f64) -> (f64, f64) {
    if th.abs() < 1e-4 {
        let t2 = th * th;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, th / 2.0 - th * t2 / 24.0)
    } else {
        (th.sin() / th, (1.0 - th.cos()) / th)
    }
}

/// Running product with periodic re-projection onto the group.
#[derive(Clone, Debug)]
pub struct RenormalizingProduct<'a> {
    desc: &'a GroupDescriptor,
    value: GroupElement,
    count: usize,
}

impl<'a> RenormalizingProduct<'a> {
    pub fn new(desc: &'a GroupDescriptor, start: GroupElement) -> Self {
        RenormalizingProduct { desc, value: start, count: 0 }
    }

    pub fn push(&mut self, g: &GroupElement) -> GroupElement {
        self.value = self.value * *g;
        self.count += 1;
        if self.count.is_multiple_of(RENORMALIZE_EVERY) {
            self.value = self.desc.renormalize(&self.value);
        }
        self.value
    }

    pub fn value(&self) -> GroupElement {
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::expm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all() -> Vec<GroupDescriptor> {
        vec![
            GroupDescriptor::so3(),
            GroupDescriptor::se2(),
            GroupDescriptor::rd(1).unwrap(),
            GroupDescriptor::rd(2).unwrap(),
            GroupDescriptor::circle(),
        ]
    }

    #[test]
    fn exp_of_zero_is_identity() {
        for g in all() {
            assert_eq!(g.exp(&LieAlgebraVector::zeros()), GroupElement::identity());
        }
    }

    #[test]
    fn so3_quarter_turn_about_z() {
        let g = GroupDescriptor::so3().exp(&LieAlgebraVector::new(0.0, 0.0, PI / 2.0));
        // Rodrigues with axis z: [[cos, -sin, 0], [sin, cos, 0], [0, 0, 1]]
        assert!(g.0[(0, 0)].abs() < 1e-15);
        assert!((g.0[(0, 1)] + 1.0).abs() < 1e-15);
        assert!((g.0[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((g.0[(2, 2)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rd_exp_stores_translation() {
        let g = GroupDescriptor::rd(2).unwrap().exp(&LieAlgebraVector::new(1.5, -2.0, 0.0));
        assert_eq!(g.0[(0, 2)], 1.5);
        assert_eq!(g.0[(1, 2)], -2.0);
        assert_eq!(g.0[(0, 0)], 1.0);
    }

    #[test]
    fn closed_form_exp_matches_pade() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for g in all() {
            for _ in 0..50 {
                let mut v = LieAlgebraVector::zeros();
                for j in 0..g.dim() {
                    v[j] = rng.random_range(-2.5..2.5);
                }
                let a = g.exp(&v).0;
                let b = expm(&g.hat(&v));
                assert!((a - b).abs().max() < 1e-12, "{} {:?}", g.name(), v);
            }
        }
    }

    #[test]
    fn log_round_trip_small() {
        for g in all() {
            let mut v = LieAlgebraVector::new(0.1, -0.2, 0.2);
            for j in g.dim()..3 {
                v[j] = 0.0;
            }
            v *= 0.3 / v.norm();
            let back = g.log(&g.exp(&v)).unwrap();
            assert!((back - v).amax() < 1e-10);
        }
    }

    #[test]
    fn so3_half_turn_is_out_of_chart() {
        let g = GroupDescriptor::so3();
        let r = g.exp(&LieAlgebraVector::new(0.0, 0.0, PI));
        // eigenvalue -1 appears exactly at the half turn
        let eig = nalgebra::SymmetricEigen::new((r.0 + r.0.transpose()) * 0.5).eigenvalues;
        assert!(eig.iter().any(|l| (l + 1.0).abs() < 1e-12));
        assert!(matches!(g.log(&r), Err(Error::OutOfChart { .. })));
    }

    #[test]
    fn coordinate_derivatives_at_identity() {
        for g in all() {
            let h = 1e-5;
            for i in 0..g.dim() {
                let mut v = LieAlgebraVector::zeros();
                v[i] = h;
                let plus = g.coordinates(&g.exp(&v));
                let minus = g.coordinates(&g.exp(&-v));
                let d = (plus - minus) / (2.0 * h);
                for j in 0..g.dim() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((d[j] - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn coordinates_vanish_far_out() {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(2.9, 0.0, 0.0));
        assert_eq!(g.coordinates(&x), LieAlgebraVector::zeros());
        assert_eq!(g.coordinates(&GroupElement::identity()), LieAlgebraVector::zeros());
        let r = GroupDescriptor::rd(1).unwrap();
        assert_eq!(r.coordinates(&r.exp(&LieAlgebraVector::new(2.5, 0.0, 0.0))), LieAlgebraVector::zeros());
    }

    #[test]
    fn cutoff_is_monotone_and_smooth_at_edges() {
        let (a, b) = (0.8, 2.8);
        let mut prev = 1.0;
        for i in 0..=400 {
            let t = a + (b - a) * i as f64 / 400.0;
            let c = smooth_cutoff(t, a, b);
            assert!(c <= prev + 1e-15 && (0.0..=1.0).contains(&c));
            prev = c;
        }
        // flat to high order on both sides of each edge
        let h = 1e-3;
        assert!((1.0 - smooth_cutoff(a + h, a, b)) < 1e-100);
        assert!(smooth_cutoff(b - h, a, b) < 1e-100);
    }

    #[test]
    fn adjoint_closed_form_matches_conjugation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for g in all() {
            for _ in 0..20 {
                let x = g.random_element(&mut rng, 0.9);
                let a = g.adjoint(&x);
                let b = g.adjoint_by_conjugation(&x);
                assert!((a - b).abs().max() < 1e-12, "{}", g.name());
                let prod = a * g.adjoint(&g.inverse(&x));
                assert!((prod - Mat::identity()).abs().max() < 1e-10);
            }
            assert_eq!(g.adjoint(&GroupElement::identity()), Mat::identity());
        }
    }

    #[test]
    fn means_of_simple_measures() {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(0.3, -0.2, 0.4));
        assert_eq!(g.mean_of_measure(&DiscreteMeasure::dirac(GroupElement::identity())), GroupElement::identity());
        assert!((g.mean_of_measure(&DiscreteMeasure::dirac(x)).0 - x.0).abs().max() < 1e-10);
        let sym = DiscreteMeasure::new(vec![(x, 0.5), (g.inverse(&x), 0.5)]);
        assert!((g.mean_of_measure(&sym).0 - Mat::identity()).abs().max() < 1e-10);
        assert!(g.is_small(&DiscreteMeasure::dirac(GroupElement::identity())));
        assert!(g.is_small(&DiscreteMeasure::dirac(x)));
        // half the mass beyond r_out keeps μ(φ) inside the r_in ball, so this one is small
        let far = g.exp(&LieAlgebraVector::new(0.0, 2.9, 0.0));
        let near = g.exp(&LieAlgebraVector::new(0.0, 0.7, 0.0));
        assert!(g.is_small(&DiscreteMeasure::new(vec![(far, 0.5), (near, 0.5)])));
        // mean coordinates inside the cutoff ring get truncated again
        let ring = g.exp(&LieAlgebraVector::new(0.0, 1.0, 0.0));
        assert!(!g.is_small(&DiscreteMeasure::dirac(ring)));
        let ring2 = g.exp(&LieAlgebraVector::new(0.0, 1.2, 0.0));
        assert!(!g.is_small(&DiscreteMeasure::new(vec![(far, 0.2), (ring2, 0.8)])));
    }

    #[test]
    fn distance_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for g in all() {
            for _ in 0..20 {
                let a = g.random_element(&mut rng, 1.5);
                let x = g.random_element(&mut rng, 1.5);
                let y = g.random_element(&mut rng, 1.5);
                assert_eq!(g.distance(&x, &x), 0.0);
                let d1 = g.distance(&(a * x), &(a * y));
                assert!((d1 - g.distance(&x, &y)).abs() < 1e-10);
                assert!((g.distance(&x, &y) - g.distance(&y, &x)).abs() < 1e-10);
            }
            let mut v = LieAlgebraVector::new(0.4, 0.3, -0.2);
            for j in g.dim()..3 {
                v[j] = 0.0;
            }
            assert!((g.distance(&GroupElement::identity(), &g.exp(&v)) - v.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn long_products_stay_on_the_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for g in [GroupDescriptor::so3(), GroupDescriptor::se2()] {
            let steps: Vec<GroupElement> = (0..1000).map(|_| g.random_element(&mut rng, 0.7)).collect();
            let mut p = RenormalizingProduct::new(&g, GroupElement::identity());
            for i in 0..1_000_000 {
                p.push(&steps[(i * 7919) % 1000]);
            }
            let v = g.renormalize(&p.value());
            assert!(g.membership_residual(&p.value()) <= 1e-8);
            assert!(g.membership_residual(&v) <= 1e-12);
        }
    }

    #[test]
    fn charts_are_injective() {
        for g in all() {
            assert!(g.chart_is_injective(), "{}", g.name());
        }
    }

    #[test]
    fn radii_validation() {
        assert!(GroupDescriptor::so3().with_radii(0.5, 2.0, 3.0).is_ok());
        assert!(GroupDescriptor::so3().with_radii(1.0, 0.5, 3.0).is_err());
        assert!(GroupDescriptor::so3().with_radii(0.5, 2.0, 3.5).is_err());
        assert!(GroupDescriptor::rd(3).is_err());
    }
}
