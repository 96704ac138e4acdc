//! High-energy homogenization data for periodic operators
//! `𝒜 = D*ǧ(x)D + V(x)` on `ℝ^d`: band structure, threshold clusters,
//! effective tensors and symbols, and fiberwise verification of the
//! operator error estimates.

pub mod cell_operator;
pub mod effective;
pub mod error;
pub mod grid;
pub mod harness;
pub mod lattice;
pub mod linalg;
pub mod propagator;
pub mod scalar;
pub mod spectral;
pub mod threshold;

pub use error::{Error, Result};
pub use scalar::{Real, C};

pub type Lattice64 = lattice::Lattice<f64>;
pub type PlaneWaveBasis64 = lattice::PlaneWaveBasis<f64>;
pub type PeriodicCoefficients64 = cell_operator::PeriodicCoefficients<f64>;
pub type FiberOperator64 = cell_operator::FiberOperator<f64>;
pub type ThresholdPoint64 = spectral::ThresholdPoint<f64>;
pub type EffectiveTensors64 = effective::EffectiveTensors<f64>;
pub type ConstantsLedger64 = threshold::ConstantsLedger<f64>;
pub type WavePacket64 = propagator::WavePacket<f64>;
pub type Pipeline64 = harness::Pipeline<f64>;

pub type Lattice32 = lattice::Lattice<f32>;
pub type FiberOperator32 = cell_operator::FiberOperator<f32>;
pub type ThresholdPoint32 = spectral::ThresholdPoint<f32>;
pub type EffectiveTensors32 = effective::EffectiveTensors<f32>;
