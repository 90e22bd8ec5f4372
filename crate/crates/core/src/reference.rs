//! Reference triples used by the acceptance suite, the CLI defaults and the tests.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::group::{GroupDescriptor, GroupElement, LieAlgebraVector, Mat};
use crate::homogeneous::{orbit_mixture, Sphere, XAtom, XLevyPiece, XTriple};
use crate::measure::{DiscreteMeasure, SpatialLaw};
use crate::triple::{ExtendedLevyTriple, FixedJump, LevyMeasureC, LevyPiece, PiecewiseLinear};

pub const SO3_HORIZON: f64 = 1.5;
pub const SO3_ATOM: f64 = 1.0;

fn so3_exp(v: [f64; 3]) -> GroupElement {
    GroupDescriptor::so3().exp(&Vector3::from(v))
}

/// `ν_1` of the SO(3) reference triple.
pub fn so3_atom_law() -> DiscreteMeasure {
    DiscreteMeasure::new(vec![(so3_exp([0.0, 0.0, 0.9]), 0.6), (so3_exp([0.7, -0.5, 0.0]), 0.4)])
}

/// A law with the wrong support, for negative controls.
pub fn so3_wrong_atom_law() -> DiscreteMeasure {
    DiscreteMeasure::new(vec![(so3_exp([0.0, 0.0, -0.9]), 0.6), (so3_exp([0.7, -0.5, 0.0]), 0.4)])
}

/// SO(3): piecewise-linear drift, `A(t) = 0.2t·diag(1, 1, 0.5)`, compound Poisson jumps
/// at rate 1.5 with a two-point law, and a fixed jump at `t = 1`.
pub fn so3_reference() -> ExtendedLevyTriple {
    let g = GroupDescriptor::so3();
    let drift = PiecewiseLinear::new(
        vec![0.0, 0.75, SO3_HORIZON],
        vec![LieAlgebraVector::zeros(), Vector3::new(0.15, -0.1, 0.05), Vector3::new(0.2, 0.05, 0.1)],
    )
    .expect("increasing grid");
    let cov = PiecewiseLinear::new(
        vec![0.0, SO3_HORIZON],
        vec![Mat::zeros(), Mat::from_diagonal(&Vector3::new(1.0, 1.0, 0.5)) * (0.2 * SO3_HORIZON)],
    )
    .expect("increasing grid");
    let law = DiscreteMeasure::new(vec![(so3_exp([1.0, 0.0, 0.0]), 0.5), (so3_exp([0.0, 0.6, 0.9]), 0.5)]);
    let piece = LevyPiece {
        start: 0.0,
        end: SO3_HORIZON,
        rate: 1.5,
        law: Arc::new(SpatialLaw::discrete(&g, law).expect("valid law")),
    };
    ExtendedLevyTriple::with_consistent_drift(
        g,
        drift,
        cov,
        LevyMeasureC { pieces: vec![piece] },
        vec![FixedJump { time: SO3_ATOM, law: so3_atom_law() }],
    )
}

fn rd2_shift(x: f64, y: f64) -> GroupElement {
    GroupDescriptor::rd(2).expect("RD2").exp(&Vector3::new(x, y, 0.0))
}

/// RD(2): `A = tI`, rate-1 compound Poisson with a two-point law and one fixed jump at 0.5.
pub fn rd2_reference() -> ExtendedLevyTriple {
    let g = GroupDescriptor::rd(2).expect("RD2");
    let drift =
        PiecewiseLinear::new(vec![0.0, 1.0], vec![LieAlgebraVector::zeros(), Vector3::new(0.2, -0.1, 0.0)]).unwrap();
    let cov = PiecewiseLinear::new(vec![0.0, 1.0], vec![Mat::zeros(), Mat::from_diagonal(&Vector3::new(1.0, 1.0, 0.0))])
        .unwrap();
    let law = DiscreteMeasure::new(vec![(rd2_shift(0.5, 0.0), 0.5), (rd2_shift(-0.3, 0.6), 0.5)]);
    let piece = LevyPiece { start: 0.0, end: 1.0, rate: 1.0, law: Arc::new(SpatialLaw::discrete(&g, law).unwrap()) };
    let nu = DiscreteMeasure::new(vec![(GroupElement::identity(), 0.6), (rd2_shift(0.8, -0.4), 0.4)]);
    ExtendedLevyTriple::with_consistent_drift(
        g,
        drift,
        cov,
        LevyMeasureC { pieces: vec![piece] },
        vec![FixedJump { time: 0.5, law: nu }],
    )
}

/// Brownian motion on the sphere with `A(t) = t I`.
pub fn sphere_brownian() -> XTriple {
    XTriple::irreducible(PiecewiseLinear::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap(), Vec::new(), Vec::new())
        .expect("valid triple")
}

/// `a(t) = 0.3t`, orbit jumps at rate 1 and a fixed jump at 0.5 that stays put with probability ½.
pub fn sphere_mixed() -> XTriple {
    let a = PiecewiseLinear::new(vec![0.0, 1.0], vec![0.0, 0.3]).unwrap();
    let piece = XLevyPiece { start: 0.0, end: 1.0, rate: 1.0, law: Arc::new(orbit_mixture(&[(0.7, 0.6), (1.4, 0.4)])) };
    let mut nu = vec![(Sphere::o(), 0.5)];
    nu.extend(orbit_mixture(&[(1.0, 0.5)]));
    XTriple::irreducible(a, vec![piece], vec![XAtom { time: 0.5, law: nu }]).expect("valid triple")
}
