//! Simulation of the noisy one-dimensional tight-binding model.
//!
//! A particle hops on a chain while each site feels an independent
//! white-noise potential of strength `gamma`. The ensemble obeys the
//! Lindblad equation `ρ̇ = -i[H, ρ] + γ(diag[ρ] - ρ)`, which this crate
//! integrates directly ([`lindblad`]) and unravels into three kinds of
//! stochastic wave-function trajectories ([`unravelling`]): the white-noise
//! potential itself, quantum state diffusion and quantum jumps.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod hamiltonian;
pub mod lattice;
pub mod lindblad;
pub mod noise;
pub mod observables;
pub mod presets;
pub mod results;
pub mod unravelling;

pub use error::{Error, Result};
pub use lattice::{Boundary, DensityMatrix, InitialState, ModelParams, WaveFunction};
pub use noise::{NoiseKind, NoiseStream};
pub use unravelling::{NoiseVariant, UnravellingKind};

/// Crate version, echoed into every result file.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
