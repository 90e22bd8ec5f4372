//! Smooth test functions with closed-form first and second derivatives along
//! the left-invariant vector fields.
//!
//! Functions are profiles of the squared Frobenius distance to a center in the
//! ambient matrix space. The derivative `∂/∂t_j f(P exp(Σ t ξ) Q)` only needs
//! the images `P ξ_j Q` and `P sym(ξ_j ξ_k) Q`, collected in a [`Frame`].

use crate::group::{GroupDescriptor, GroupElement, LieAlgebraVector, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFnKind {
    CoordinateBump,
    ShiftedBump,
    Product,
}

impl TestFnKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestFnKind::CoordinateBump => "coordinate-bump",
            TestFnKind::ShiftedBump => "shifted-bump",
            TestFnKind::Product => "product",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// `exp(1 − 1/(1−u))` on `u < 1`, compactly supported.
    Bump,
    /// `exp(−u)`, used on compact spaces where analyticity helps quadrature.
    Gaussian,
}

/// Value and derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: LieAlgebraVector,
    /// Symmetric matrix of `ξ_jξ_k f`.
    pub hess: Mat,
}

/// Ambient point `Y = P Q` with tangent images along the basis.
#[derive(Clone, Debug)]
pub struct Frame {
    pub y: Mat,
    pub d1: [Mat; 3],
    pub d2: [[Mat; 3]; 3],
    pub dim: usize,
}

impl Frame {
    /// Frame at a group element `x`: `Y = x`, `Y_j = x ξ_j`.
    pub fn group(desc: &GroupDescriptor, x: &GroupElement) -> Self {
        let d = desc.dim();
        let b = desc.basis_padded();
        let s = desc.sym_products();
        let mut d1 = [Mat::zeros(); 3];
        let mut d2 = [[Mat::zeros(); 3]; 3];
        for j in 0..d {
            d1[j] = x.0 * b[j];
            for k in j..d {
                d2[j][k] = x.0 * s[j][k];
                d2[k][j] = d2[j][k];
            }
        }
        Frame { y: x.0, d1, d2, dim: d }
    }

    /// Frame at `P exp(Σtξ) Q` with the given outer factors.
    pub fn sandwich(desc: &GroupDescriptor, p: &Mat, q: &Mat, dim: usize) -> Self {
        let b = desc.basis_padded();
        let s = desc.sym_products();
        let mut d1 = [Mat::zeros(); 3];
        let mut d2 = [[Mat::zeros(); 3]; 3];
        for j in 0..dim {
            d1[j] = p * b[j] * q;
            for k in j..dim {
                d2[j][k] = p * s[j][k] * q;
                d2[k][j] = d2[j][k];
            }
        }
        Frame { y: p * q, d1, d2, dim }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    pub id: String,
    pub kind: TestFnKind,
    pub profile: Profile,
    pub center: Mat,
    pub scale: f64,
    /// Linear factor `L` of a product function; `‖L‖·scale ≤ 1` keeps `|f| ≤ 1`.
    pub linear: Option<Mat>,
}

fn profile_derivs(p: Profile, u: f64) -> (f64, f64, f64) {
    match p {
        Profile::Bump => {
            if u >= 1.0 {
                return (0.0, 0.0, 0.0);
            }
            let a = 1.0 / (1.0 - u);
            let b = (1.0 - a).exp();
            (b, -b * a * a, b * (a.powi(4) - 2.0 * a.powi(3)))
        }
        Profile::Gaussian => {
            let b = (-u).exp();
            (b, -b, b)
        }
    }
}

/// Suprema of `|β'|` and `|β''|` over the profile's domain.
fn profile_sup(p: Profile) -> (f64, f64) {
    match p {
        Profile::Gaussian => (1.0, 1.0),
        Profile::Bump => {
            let n = 200_000;
            let mut s1: f64 = 0.0;
            let mut s2: f64 = 0.0;
            for i in 0..n {
                let u = i as f64 / n as f64;
                let (_, d1, d2) = profile_derivs(p, u);
                s1 = s1.max(d1.abs());
                s2 = s2.max(d2.abs());
            }
            // grid maxima of smooth functions; small safety factor
            (s1 * 1.01, s2 * 1.01)
        }
    }
}

impl TestFunction {
    pub fn bump(id: impl Into<String>, kind: TestFnKind, center: Mat, scale: f64) -> Self {
        TestFunction { id: id.into(), kind, profile: Profile::Bump, center, scale, linear: None }
    }

    pub fn with_profile(mut self, profile: Profile) -> Self {
        self.profile = profile;
        self
    }

    /// Product of a bump with the linear function `⟨L, Y − C⟩`, `L` rescaled so `‖L‖ scale = 1`.
    pub fn product(id: impl Into<String>, center: Mat, scale: f64, direction: Mat) -> Self {
        let l = direction / (direction.norm() * scale);
        TestFunction { id: id.into(), kind: TestFnKind::Product, profile: Profile::Bump, center, scale, linear: Some(l) }
    }

    pub fn value(&self, y: &Mat) -> f64 {
        let d = y - self.center;
        let u = d.norm_squared() / (self.scale * self.scale);
        let (b, _, _) = profile_derivs(self.profile, u);
        match &self.linear {
            None => b,
            Some(l) => b * l.dot(&d),
        }
    }

    pub fn jet(&self, fr: &Frame) -> Jet {
        let s2 = self.scale * self.scale;
        let d = fr.y - self.center;
        let u = d.norm_squared() / s2;
        let (b0, b1, b2) = profile_derivs(self.profile, u);
        let n = fr.dim;
        if b0 == 0.0 && b1 == 0.0 && b2 == 0.0 {
            return Jet { value: 0.0, grad: LieAlgebraVector::zeros(), hess: Mat::zeros() };
        }
        let mut uj = [0.0; 3];
        for j in 0..n {
            uj[j] = 2.0 * d.dot(&fr.d1[j]) / s2;
        }
        let mut gb = LieAlgebraVector::zeros();
        let mut hb = Mat::zeros();
        for j in 0..n {
            gb[j] = b1 * uj[j];
            for k in j..n {
                let ujk = 2.0 * (fr.d1[j].dot(&fr.d1[k]) + d.dot(&fr.d2[j][k])) / s2;
                let h = b2 * uj[j] * uj[k] + b1 * ujk;
                hb[(j, k)] = h;
                hb[(k, j)] = h;
            }
        }
        match &self.linear {
            None => Jet { value: b0, grad: gb, hess: hb },
            Some(l) => {
                let lv = l.dot(&d);
                let mut lj = [0.0; 3];
                for j in 0..n {
                    lj[j] = l.dot(&fr.d1[j]);
                }
                let mut grad = LieAlgebraVector::zeros();
                let mut hess = Mat::zeros();
                for j in 0..n {
                    grad[j] = gb[j] * lv + b0 * lj[j];
                    for k in j..n {
                        let ljk = l.dot(&fr.d2[j][k]);
                        let h = hb[(j, k)] * lv + gb[j] * lj[k] + gb[k] * lj[j] + b0 * ljk;
                        hess[(j, k)] = h;
                        hess[(k, j)] = h;
                    }
                }
                Jet { value: b0 * lv, grad, hess }
            }
        }
    }

    /// Bounds on `sup|f|`, `sup|ξ_j f|` and `sup|ξ_jξ_k f|`.
    ///
    /// `p_norm` bounds the operator norm of the left factor `P`, `q_norm` the
    /// right factor, and `d_max` bounds `‖Y − C‖` where `f` is nonzero
    /// (the scale itself for the bump profile).
    pub fn sup_bounds(&self, desc: &GroupDescriptor, p_norm: f64, q_norm: f64, d_max: f64) -> [f64; 3] {
        let m1 = desc.basis().iter().map(|b| b.norm()).fold(0.0, f64::max);
        let mut m2: f64 = 0.0;
        for j in 0..desc.dim() {
            for k in 0..desc.dim() {
                m2 = m2.max(desc.sym_products()[j][k].norm());
            }
        }
        let s = self.scale;
        let dm = match self.profile {
            Profile::Bump => s,
            Profile::Gaussian => d_max,
        };
        let y1 = p_norm * m1 * q_norm;
        let y2 = p_norm * m2 * q_norm;
        let (s1, s2) = profile_sup(self.profile);
        let u1 = 2.0 * dm * y1 / (s * s);
        let u2 = 2.0 * (y1 * y1 + dm * y2) / (s * s);
        let f1 = s1 * u1;
        let f2 = s2 * u1 * u1 + s1 * u2;
        match &self.linear {
            None => [1.0, f1, f2],
            Some(l) => {
                let ln = l.norm();
                let lv = ln * dm;
                let l1 = ln * y1;
                let l2 = ln * y2;
                [lv, f1 * lv + l1, f2 * lv + 2.0 * f1 * l1 + l2]
            }
        }
    }
}

/// Eight-function bank: bumps at `e` with two scales, shifted bumps at
/// `exp(±0.5 ξ_j)`, and two bump-times-linear products.
pub fn default_bank(desc: &GroupDescriptor) -> Vec<TestFunction> {
    let d = desc.dim();
    let e = Mat::identity();
    let shifted = |j: usize, sign: f64| {
        let mut v = LieAlgebraVector::zeros();
        v[j % d] = 0.5 * sign;
        desc.exp(&v).0
    };
    let b = desc.basis();
    let last = d - 1;
    vec![
        TestFunction::bump("bump_e_wide", TestFnKind::CoordinateBump, e, 1.2),
        TestFunction::bump("bump_e_narrow", TestFnKind::CoordinateBump, e, 0.7),
        TestFunction::bump("shift_plus_1", TestFnKind::ShiftedBump, shifted(0, 1.0), 0.9),
        TestFunction::bump("shift_minus_1", TestFnKind::ShiftedBump, shifted(0, -1.0), 0.9),
        TestFunction::bump("shift_plus_2", TestFnKind::ShiftedBump, shifted(1, 1.0), 0.9),
        TestFunction::bump("shift_minus_last", TestFnKind::ShiftedBump, shifted(last, -1.0), 0.9),
        TestFunction::product("product_1", e, 1.2, b[0]),
        TestFunction::product("product_last", e, 1.2, b[last]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_jet_h(f: &TestFunction, desc: &GroupDescriptor, x: &GroupElement, h: f64) -> (LieAlgebraVector, Mat) {
        let d = desc.dim();
        let eval = |v: LieAlgebraVector| f.value(&(x.0 * desc.exp(&v).0));
        let mut g = LieAlgebraVector::zeros();
        let mut hs = Mat::zeros();
        for j in 0..d {
            let ej = LieAlgebraVector::ith(j, h);
            g[j] = (eval(ej) - eval(-ej)) / (2.0 * h);
            for k in 0..d {
                let ek = LieAlgebraVector::ith(k, h);
                hs[(j, k)] = (eval(ej + ek) - eval(ej - ek) - eval(ek - ej) + eval(-ej - ek)) / (4.0 * h * h);
            }
        }
        (g, hs)
    }

    // Richardson-extrapolated central differences
    fn fd_jet(f: &TestFunction, desc: &GroupDescriptor, x: &GroupElement) -> (LieAlgebraVector, Mat) {
        let h = 2e-4;
        let (g1, h1) = fd_jet_h(f, desc, x, h);
        let (g2, h2) = fd_jet_h(f, desc, x, h / 2.0);
        ((4.0 * g2 - g1) / 3.0, (4.0 * h2 - h1) / 3.0)
    }

    #[test]
    fn jets_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for desc in [GroupDescriptor::so3(), GroupDescriptor::se2(), GroupDescriptor::rd(2).unwrap()] {
            let bank = default_bank(&desc);
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let x = desc.random_element(&mut rng, 0.5);
                let fr = Frame::group(&desc, &x);
                for f in &bank {
                    let jet = f.jet(&fr);
                    assert!((jet.value - f.value(&x.0)).abs() < 1e-14);
                    let (g, h) = fd_jet(f, &desc, &x);
                    worst = worst.max((jet.grad - g).amax()).max((jet.hess - h).amax());
                }
            }
            assert!(worst <= 1e-5, "{} worst {worst}", desc.name());
        }
    }

    #[test]
    fn bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let desc = GroupDescriptor::so3();
        let bank = default_bank(&desc);
        for _ in 0..2000 {
            let x = desc.random_element(&mut rng, 0.8);
            for f in &bank {
                assert!(f.value(&x.0).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn sup_bounds_dominate_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let desc = GroupDescriptor::so3();
        for f in default_bank(&desc) {
            let b = f.sup_bounds(&desc, 1.0, 1.0, 0.0);
            for _ in 0..500 {
                let x = desc.random_element(&mut rng, 0.6);
                let j = f.jet(&Frame::group(&desc, &x));
                assert!(j.value.abs() <= b[0] + 1e-12);
                assert!(j.grad.amax() <= b[1]);
                assert!(j.hess.amax() <= b[2]);
            }
        }
    }
}
