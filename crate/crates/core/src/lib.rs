//! Steady-state thermodynamics of an underdamped Brownian oscillator under
//! time-delayed linear feedback: closed-form and spectral theory, a stochastic
//! simulator, and the trace estimators used to compare the two.

pub mod analytic;
pub mod analyze;
pub mod error;
pub mod model;
pub mod quad;
pub mod simulate;
pub mod spectral;
pub mod stats;

pub use analytic::{MomentSource, SteadyStateMoments, ThermoRates};
pub use analyze::FitResult;
pub use error::{Error, Result};
pub use model::{PhysicalParams, ReducedParams};
pub use simulate::{EnsembleStats, SimConfig, Trajectory};
pub use spectral::SpectrumGrid;
