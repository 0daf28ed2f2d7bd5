//! Trajectory geometry of language-model activations during in-context learning.
//!
//! The crate generates grid-world, latent-grid, few-shot and riddle task
//! suites, reads per-layer activation bundles, measures the geometry of token
//! trajectories (curvature, straightening, Menger curvature, participation
//! ratio, elongation), scores behavior from tracked logits or generated
//! answers, and runs the two-sample, ANOVA and correlation tests used to
//! relate the two.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the 64-bit instantiation used by the pipeline.

pub mod behavior;
pub mod fewshot;
pub mod geometry;
pub mod gridworld;
pub mod numeric;
pub mod scalar;
pub mod seed;
pub mod stats;
pub mod store;

pub use scalar::Scalar;

pub type CurvatureProfile = geometry::CurvatureProfile<f64>;
pub type CurvatureProfileF32 = geometry::CurvatureProfile<f32>;
pub type TrajectoryView = geometry::TrajectoryView<f64>;
pub type MengerTriangle = geometry::MengerTriangle<f64>;
pub type NodeMap = geometry::NodeMap<f64>;
pub type StatResult = stats::StatResult<f64>;
pub type StatResultF32 = stats::StatResult<f32>;
pub type NeighborEval = behavior::NeighborEval<f64>;
pub type LogitScatter = behavior::LogitScatter<f64>;
