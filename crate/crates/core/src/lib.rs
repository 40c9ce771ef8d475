//! Two-speed transport with switching: steady states, discretized generators,
//! spectra, resolvent gaps and relative-entropy decay.

pub mod error;
pub mod evolution;
pub mod fields;
pub mod generator;
pub mod io;
pub mod linalg;
pub mod space;
pub mod spectral;
pub mod stationary_phase;
pub mod steady_state;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use evolution::{DecayEstimate, EvolveOptions, Scheme, TimeSeries};
pub use fields::{FieldSpec, ReciprocalDifference, ScalarField, ValidationReport, Validator};
pub use generator::{GeneratorMatrix, Grid};
pub use space::{StateVector, WeightedSpace};
pub use spectral::{PsiEstimate, PsiOptions, SemigroupReport, SpectrumReport};
pub use stationary_phase::PhaseSweep;
pub use steady_state::{Matrix2, SteadyState};
