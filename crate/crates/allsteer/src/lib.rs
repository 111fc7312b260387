//! Trajectory planning for vehicles whose wheels all steer, subject to
//! per-wheel steering-angle limits.
//!
//! The pipeline has three stages:
//!
//! 1. [`search`]: a lattice search over sampled instantaneous centers of
//!    motion produces a coarse, collision-free initial trajectory.
//! 2. [`optimizer`]: direct transcription with an augmented-Lagrangian
//!    solver smooths the trajectory while honoring steering limits,
//!    steering-rate limits, wheel speed/acceleration caps and stop-and-turn
//!    keyframes.
//! 3. [`evaluate`]: a rate-limited wheel follower replays the result and
//!    measures tracking error, slip and smoothness.
//!
//! The geometric core ([`kinematics`], the optimizer residuals) is generic
//! over the scalar type via [`scalar::Real`]; the concrete aliases below fix
//! `f64` for the planning pipeline.

pub mod cli;
pub mod evaluate;
pub mod kinematics;
pub mod optimizer;
pub mod scalar;
pub mod search;
pub mod trajectory;
pub mod world;

/// Body state with the default planning scalar.
pub type BodyState = kinematics::BodyState<f64>;
/// Body acceleration with the default planning scalar.
pub type BodyControl = kinematics::BodyControl<f64>;
/// Wheel motion with the default planning scalar.
pub type WheelMotion = kinematics::WheelMotion<f64>;
/// ICM radius vector with the default planning scalar.
pub type IcmRadius = kinematics::IcmRadius<f64>;

/// Single-precision body state, for callers integrating with f32 pipelines.
pub type BodyState32 = kinematics::BodyState<f32>;

pub use kinematics::WheelLayout;
pub use trajectory::TrajectoryKnot;
pub use world::{Footprint, OccupancyGrid, Scenario};
