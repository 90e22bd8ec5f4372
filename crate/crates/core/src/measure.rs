//! Finite discrete measures on a group and the spatial jump laws used by the
//! continuous part of a Lévy measure function.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, GroupKind, LieAlgebraVector};
use crate::linalg::{gauss_hermite, gauss_laguerre};

/// Weighted atoms `Σ w_i δ_{g_i}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiscreteMeasure {
    atoms: Vec<(GroupElement, f64)>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(GroupElement, f64)>) -> Self {
        DiscreteMeasure { atoms }
    }

    pub fn zero() -> Self {
        DiscreteMeasure { atoms: Vec::new() }
    }

    pub fn dirac(g: GroupElement) -> Self {
        DiscreteMeasure { atoms: vec![(g, 1.0)] }
    }

    pub fn atoms(&self) -> &[(GroupElement, f64)] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn integrate<F: FnMut(&GroupElement) -> f64>(&self, mut f: F) -> f64 {
        self.atoms.iter().map(|(g, w)| w * f(g)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().map(|(g, w)| (*g, w * c)).collect() }
    }

    pub fn push_forward<F: FnMut(&GroupElement) -> GroupElement>(&self, mut f: F) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().map(|(g, w)| (f(g), *w)).collect() }
    }

    /// Restriction to the complement of the identity (exact comparison).
    pub fn without_identity(&self) -> Self {
        DiscreteMeasure { atoms: self.atoms.iter().filter(|(g, _)| !g.is_identity()).cloned().collect() }
    }

    /// Mass carried by atoms that are exactly the identity.
    pub fn identity_mass(&self) -> f64 {
        self.atoms.iter().filter(|(g, _)| g.is_identity()).map(|(_, w)| w).sum()
    }

    pub fn concat(&self, other: &DiscreteMeasure) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend_from_slice(&other.atoms);
        DiscreteMeasure { atoms }
    }

    /// Draws an atom with probability proportional to its weight.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupElement {
        let total = self.total_mass();
        let mut u = rng.random::<f64>() * total;
        for (g, w) in &self.atoms {
            if u < *w {
                return *g;
            }
            u -= w;
        }
        self.atoms.last().expect("sampling from an empty measure").0
    }
}

/// Probability law of a single Poisson jump.
#[derive(Clone, Debug, PartialEq)]
pub enum LawKind {
    Discrete,
    /// `exp(v)` with `v ~ N(0, σ² I_3)` on SO(3) log coordinates.
    WrappedGaussianSo3 { sigma: f64 },
    /// Translation by `N(0, σ² I_d)` on RD(d).
    GaussianRd { sigma: f64 },
    /// Translation with independent Laplace(scale) coordinates on RD(d).
    LaplaceRd { scale: f64 },
}

/// A jump law together with a quadrature rule used for integrals against it.
///
/// For the discrete kind the quadrature rule is the law itself.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialLaw {
    kind: LawKind,
    dim: usize,
    quadrature: DiscreteMeasure,
}

const HERMITE_NODES_1D: usize = 12;
const HERMITE_NODES_3D: usize = 7;
const LAGUERRE_NODES: usize = 8;

impl SpatialLaw {
    pub fn discrete(desc: &GroupDescriptor, law: DiscreteMeasure) -> Result<Self> {
        if law.is_empty() {
            return Err(Error::InvalidTriple("jump law has no atoms".into()));
        }
        if law.atoms().iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidTriple("jump law has a negative or non-finite weight".into()));
        }
        let total = law.total_mass();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidTriple(format!("jump law has total mass {total}, expected 1")));
        }
        if law.atoms().iter().any(|(g, w)| *w > 0.0 && desc.distance(&GroupElement::identity(), g) < 1e-12) {
            return Err(Error::InvalidTriple("jump law charges the identity".into()));
        }
        Ok(SpatialLaw { kind: LawKind::Discrete, dim: desc.dim(), quadrature: law })
    }

    pub fn wrapped_gaussian_so3(desc: &GroupDescriptor, sigma: f64) -> Result<Self> {
        if desc.kind() != GroupKind::So3 {
            return Err(Error::InvalidTriple("wrapped Gaussian law requires SO3".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidTriple(format!("wrapped Gaussian sigma must be positive, got {sigma}")));
        }
        let rule = gauss_hermite(HERMITE_NODES_3D);
        let mut atoms = Vec::with_capacity(rule.len().pow(3));
        for (x, wx) in &rule {
            for (y, wy) in &rule {
                for (z, wz) in &rule {
                    let v = LieAlgebraVector::new(*x, *y, *z) * sigma;
                    atoms.push((desc.exp(&v), wx * wy * wz));
                }
            }
        }
        Ok(SpatialLaw {
            kind: LawKind::WrappedGaussianSo3 { sigma },
            dim: 3,
            quadrature: DiscreteMeasure::new(atoms),
        })
    }

    pub fn gaussian_rd(desc: &GroupDescriptor, sigma: f64) -> Result<Self> {
        if !matches!(desc.kind(), GroupKind::Rd(_)) {
            return Err(Error::InvalidTriple("Gaussian translation law requires RD".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidTriple(format!("Gaussian sigma must be positive, got {sigma}")));
        }
        let rule: Vec<(f64, f64)> = gauss_hermite(HERMITE_NODES_1D).into_iter().map(|(x, w)| (x * sigma, w)).collect();
        Ok(SpatialLaw {
            kind: LawKind::GaussianRd { sigma },
            dim: desc.dim(),
            quadrature: tensor_rule(desc, &rule),
        })
    }

    pub fn laplace_rd(desc: &GroupDescriptor, scale: f64) -> Result<Self> {
        if !matches!(desc.kind(), GroupKind::Rd(_)) {
            return Err(Error::InvalidTriple("Laplace translation law requires RD".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidTriple(format!("Laplace scale must be positive, got {scale}")));
        }
        let mut rule = Vec::new();
        for (y, w) in gauss_laguerre(LAGUERRE_NODES) {
            rule.push((-y * scale, 0.5 * w));
            rule.push((y * scale, 0.5 * w));
        }
        Ok(SpatialLaw {
            kind: LawKind::LaplaceRd { scale },
            dim: desc.dim(),
            quadrature: tensor_rule(desc, &rule),
        })
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    /// Discrete measure used for integrals against the law.
    pub fn quadrature(&self) -> &DiscreteMeasure {
        &self.quadrature
    }

    pub fn integrate<F: FnMut(&GroupElement) -> f64>(&self, f: F) -> f64 {
        self.quadrature.integrate(f)
    }

    pub fn sample<R: Rng + ?Sized>(&self, desc: &GroupDescriptor, rng: &mut R) -> GroupElement {
        match self.kind {
            LawKind::Discrete => self.quadrature.sample(rng),
            LawKind::WrappedGaussianSo3 { sigma } => {
                let mut v = LieAlgebraVector::zeros();
                for j in 0..3 {
                    let z: f64 = StandardNormal.sample(rng);
                    v[j] = sigma * z;
                }
                desc.exp(&v)
            }
            LawKind::GaussianRd { sigma } => {
                let mut v = LieAlgebraVector::zeros();
                for j in 0..self.dim {
                    let z: f64 = StandardNormal.sample(rng);
                    v[j] = sigma * z;
                }
                desc.exp(&v)
            }
            LawKind::LaplaceRd { scale } => {
                let mut v = LieAlgebraVector::zeros();
                for j in 0..self.dim {
                    let e: f64 = Exp1.sample(rng);
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    v[j] = sign * scale * e;
                }
                desc.exp(&v)
            }
        }
    }
}

fn tensor_rule(desc: &GroupDescriptor, rule: &[(f64, f64)]) -> DiscreteMeasure {
    let mut atoms = Vec::new();
    match desc.dim() {
        1 => {
            for (x, w) in rule {
                atoms.push((desc.exp(&LieAlgebraVector::new(*x, 0.0, 0.0)), *w));
            }
        }
        _ => {
            for (x, wx) in rule {
                for (y, wy) in rule {
                    atoms.push((desc.exp(&LieAlgebraVector::new(*x, *y, 0.0)), wx * wy));
                }
            }
        }
    }
    DiscreteMeasure::new(atoms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discrete_law_rejects_identity_and_bad_mass() {
        let g = GroupDescriptor::so3();
        let x = g.exp(&LieAlgebraVector::new(1.0, 0.0, 0.0));
        assert!(SpatialLaw::discrete(&g, DiscreteMeasure::dirac(x)).is_ok());
        assert!(SpatialLaw::discrete(&g, DiscreteMeasure::dirac(GroupElement::identity())).is_err());
        assert!(SpatialLaw::discrete(&g, DiscreteMeasure::new(vec![(x, 0.5)])).is_err());
    }

    #[test]
    fn quadrature_matches_sample_moments() {
        let r = GroupDescriptor::rd(1).unwrap();
        let lap = SpatialLaw::laplace_rd(&r, 0.5).unwrap();
        // E x² = 2 b² for Laplace(b)
        let m2 = lap.integrate(|g| g.0[(0, 1)].powi(2));
        assert!((m2 - 0.5).abs() < 1e-10);
        let gau = SpatialLaw::gaussian_rd(&r, 0.7).unwrap();
        let m4 = gau.integrate(|g| g.0[(0, 1)].powi(4));
        assert!((m4 - 3.0 * 0.7f64.powi(4)).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let s: f64 = (0..n).map(|_| lap.sample(&r, &mut rng).0[(0, 1)].powi(2)).sum::<f64>() / n as f64;
        assert!((s - 0.5).abs() < 0.02);
    }

    #[test]
    fn wrapped_gaussian_quadrature_total_mass() {
        let g = GroupDescriptor::so3();
        let law = SpatialLaw::wrapped_gaussian_so3(&g, 0.4).unwrap();
        assert!((law.quadrature().total_mass() - 1.0).abs() < 1e-12);
        // E tr(R) = 1 + 2 E cos|v|; compare against Monte Carlo
        let q = law.integrate(|x| x.0.trace());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let s: f64 = (0..n).map(|_| law.sample(&g, &mut rng).0.trace()).sum::<f64>() / n as f64;
        assert!((q - s).abs() < 0.01);
    }
}
