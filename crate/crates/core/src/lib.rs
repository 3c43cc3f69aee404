//! Simulation and stability analysis for a parabolic–parabolic chemotaxis
//! system with a space/time-heterogeneous logistic source and nonlocal
//! competition on rectangles with Neumann boundaries.

pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod stability;
pub mod stepper;

pub use coefficients::{CoefficientSet, CoefficientSpec, SpatialProfile, TimeProfile};
pub use error::{Error, Result};
pub use grid::{Field, Grid};
pub use model::{ModelParams, ModelState};
pub use stepper::{StepperConfig, Trajectory};
