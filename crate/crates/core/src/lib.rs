//! Random exponential dynamics `F_ω(z) = η(ω) e^z` on the cylinder `Q = C / 2πiZ`.
//!
//! Transfer operators, particle approximations of random conformal measures,
//! expected pressure and its root, radial-set statistics and escape scans.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod config;
pub mod driver;
pub mod dynamics;
pub mod error;
pub mod geom;
pub mod lattice;
pub mod measure;
pub mod par;
pub mod pressure;
pub mod radial;
pub mod transfer;

pub use driver::{DriverConfig, DriverKind, ParamSequence};
pub use dynamics::{MapParam, OrbitRecord};
pub use error::{Error, Result};
pub use geom::{CylPoint, PlanePoint, RegionKind, RegionSpec};
pub use measure::{Atom, FiberMeasure};
pub use transfer::{ConstantsTable, Convention, TransferParams};
