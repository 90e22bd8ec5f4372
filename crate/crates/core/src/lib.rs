//! Inhomogeneous Lévy processes on matrix Lie groups and on the sphere
//! `S² = SO(3)/SO(2)`: simulation from extended Lévy triples, recovery of the
//! triple from path ensembles, and Monte-Carlo checks of the representing
//! martingale property.

pub mod error;
pub mod estimate;
pub mod experiment;
pub mod group;
pub mod homogeneous;
pub mod io;
pub mod linalg;
pub mod measure;
pub mod reference;
pub mod simulate;
pub mod stats;
pub mod testfn;
pub mod triple;
pub mod verify;

pub use error::{Error, Result};
pub use group::{GroupDescriptor, GroupElement, GroupKind, LieAlgebraVector, Mat};
pub use measure::{DiscreteMeasure, SpatialLaw};
pub use triple::{ExtendedLevyTriple, FixedJump, LevyMeasureC, LevyPiece, PiecewiseLinear};
