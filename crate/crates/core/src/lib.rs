pub mod analysis;
pub mod error;
pub mod goldstone;
pub mod io;
pub mod lattice;
pub mod meanfield;
pub mod stability;
pub mod twa;

pub use error::{Error, Result};
pub use lattice::{enumerate_bonds, apply_laplacian, apply_nonrecip_hop, column_average, Axis, Boundary, ComplexField, LatticeGeom, ModelParams};
pub use meanfield::{MeanFieldTrajectory, Phase, PhaseLabel, Thresholds};
pub use num_complex::Complex64;
pub use twa::{EnsembleState, Observables, TwaStepper};
