//! Learning bimanual coordination from demonstrations.
//!
//! Demonstrations of both arms are encoded as task-parameterized Gaussian
//! mixture models (TP-GMMs). Besides the usual static observation frames
//! (start pose, end pose, objects) each arm is also observed from a dynamic
//! frame attached to the partner arm, so the learned mixture carries the
//! inter-arm relationship. New motions are produced by fusing the frame
//! experts with a product of Gaussians, regressing a per-timestep reference
//! over time, and tracking it with a batch linear quadratic tracker, which can
//! itself couple the two arms through a coordination term.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, which is what the file formats
//! and the CLI use.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod em;
pub mod error;
pub mod frames;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod lqt;
pub mod pipeline;
pub mod setup;
pub mod synth;
pub mod tpgmm;

use nalgebra as na;
use num_traits as nt;

pub use em::{em_fit, EmConfig, EmFit, KmeansInit};
pub use error::{Error, Result};
pub use frames::{build_relative_frames, transform_from_frame, transform_to_frame, Frame, RelativeFrameTrack, TaskFrame};
pub use gaussian::{gaussian_log_density, gmr_condition, product_of_gaussians, Gaussian, Gmm};
pub use lqt::{
    build_transfer_matrices, extract_arm_commands, solve_coordinated_lqt, solve_lqt,
    CoordinatedLqtProblem, CoordinationMatrix, LinearSystem, LqtProblem,
};
pub use pipeline::{
    generate_follower, generate_independent, generate_synergistic, CoordinationSite,
    GenerationConfig, TaskInstance,
};
pub use setup::{fit_arms, FrameDef, MeetingScenario, ModelSpec, TaskSpec};
pub use tpgmm::{fit_tpgmm, reconstruct_gmm, DemoSet, Demonstration, Tpgmm};

/// Floating point scalars usable by the numerical core.
pub trait Real:
    na::RealField + Copy + nt::FloatConst + nt::FromPrimitive + nt::ToPrimitive
{
}

impl<T> Real for T where
    T: na::RealField + Copy + nt::FloatConst + nt::FromPrimitive + nt::ToPrimitive
{
}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

pub type Gaussian64 = Gaussian<f64>;
pub type Gmm64 = Gmm<f64>;
pub type Frame64 = Frame<f64>;
pub type Tpgmm64 = Tpgmm<f64>;
pub type DemoSet64 = DemoSet<f64>;
pub type LinearSystem64 = LinearSystem<f64>;

pub type Gaussian32 = Gaussian<f32>;
pub type Gmm32 = Gmm<f32>;
pub type Tpgmm32 = Tpgmm<f32>;
