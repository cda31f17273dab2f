//! Numerical laboratory for the effective constants of the KPZ equation on a
//! unit torus.
//!
//! Two independent engines live here:
//!
//! * [`constants`] evaluates Brownian-bridge expectations for the free-energy
//!   drift `γ(β)`, the free-energy variance `Σ²(β)` and the polymer endpoint
//!   diffusivity `σ²(β)` by nested Monte Carlo.
//! * [`lattice`] and [`cylinder`] simulate the periodic stochastic heat
//!   equation / directed polymer on a space-time lattice, lifted to the
//!   cylinder so windings are tracked.
//!
//! [`diagnostics`] holds the statistical checks that tie the two together and
//! [`harness`] the configuration, execution and output layer used by the CLI.
//!
//! The numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below are the instantiations the experiments use.

pub mod bridge;
pub mod constants;
pub mod cylinder;
pub mod diagnostics;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod lattice;
pub mod mc;
pub mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

pub use error::{Error, Result};
pub use estimate::{merge, Accumulator, Estimate};
pub use rng::RngStream;

/// Floating-point scalar the numerical kernels are written against.
pub trait Real:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal; exact for `f64`, rounded for `f32`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type BridgePath64 = bridge::BridgePath<f64>;
pub type BridgePath32 = bridge::BridgePath<f32>;
pub type XiProfile64 = constants::XiProfile<f64>;
pub type StepKernel64 = lattice::StepKernel<f64>;
pub type LatticeDisorder64 = lattice::LatticeDisorder<f64>;
pub type PropagatorMatrix64 = lattice::PropagatorMatrix<f64>;
pub type Density64 = lattice::Density<f64>;
pub type Density32 = lattice::Density<f32>;
pub type HeightField64 = lattice::HeightField<f64>;
pub type WindingDensity64 = cylinder::WindingDensity<f64>;
pub type WindingKernel64 = cylinder::WindingKernel<f64>;
pub type MomentField64 = cylinder::MomentField<f64>;
