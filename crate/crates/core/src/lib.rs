//! Quasi-static brittle crack growth in anti-plane shear.

pub mod config;
pub mod conformance;
pub mod domain;
pub mod energy;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod mesh;
pub mod oracle;
pub mod sif;
pub mod solver;

pub use domain::{BoundaryKind, DomainSpec};
pub use error::{Error, Result};
pub use geometry::{CrackSet, Point2, Polyline, Segment, Tip, TipEnd};
