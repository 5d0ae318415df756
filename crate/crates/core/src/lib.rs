//! Measurement-induced entanglement dynamics of the transverse-field Ising
//! chain, simulated on pure fermionic Gaussian states.

pub mod analysis;
pub mod entanglement;
pub mod error;
pub mod gaussian;
pub mod ising;
pub mod linalg;
pub mod oracle;
pub mod trajectories;

pub use error::{Error, Result};
pub use gaussian::{CorrelationMatrices, GaussianState};
pub use ising::{BdgMatrix, EffectiveBdgMatrix, IsingParams};
pub use trajectories::{EntropyTimeSeries, NoiseStream, TrajectoryConfig, Unraveling};
