//! Coupled incompressible-flow / charge-transport / electrostatics
//! solver on staggered box grids, with the retarded-mollifier block
//! scheme, a Picard fixed-point driver for the charge subsystem, and
//! parabolic-cylinder regularity diagnostics for the computed
//! trajectories.

pub mod coupled;
pub mod elliptic;
pub mod error;
pub mod field;
pub mod fixed_point;
pub mod grid;
pub mod history;
pub mod mollifier;
pub mod momentum;
pub mod nernst_planck;
pub mod norms;
pub mod ops;
pub mod regularity;
pub mod snapshot;

pub use error::{Error, Result};
pub use field::{ScalarField, VectorField};
pub use grid::{BcKind, GridSpec};
pub use history::{FieldHistory, FieldSelector, State};
pub use norms::{ParabolicCylinder, Region};
