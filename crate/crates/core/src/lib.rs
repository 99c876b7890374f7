//! Feature-guided registration of a CT coronary centerline to an
//! intravascular ultrasound pullback.
//!
//! The moving image is a 3D volume with a framed centerline. It is resampled
//! into a cylindrical `(r, θ, z)` representation along a warped copy of that
//! centerline and compared with a fixed pullback image through two terms:
//! a Dice/cross-entropy loss between landmark probability maps
//! (bifurcations and calcifications) and a normalized mutual information
//! computed outside the guidewire shadow. The warp has two global
//! parameters (longitudinal scale and offset) and three per-frame parameters
//! (in-plane rotation and two in-plane translations).
//!
//! Modules:
//! - [`geometry`]: volumes, framed centerlines, trilinear sampling and the
//!   polar transform.
//! - [`phantom`]: synthetic vessel volumes and simulated pullbacks with exact
//!   ground truth.
//! - [`features`]: `(θ, z)` landmark probability maps from an oracle or a
//!   differentiable intensity heuristic.
//! - [`losses`]: Dice/cross-entropy, masked NMI, smoothness regularizer.
//! - [`registration`]: the warp model, the grid-search pre-alignment and the
//!   Adam refinement.
//! - [`eval`]: centerline overlap, plane orientation, batch summaries.
//! - [`cases`]: seeded scenario generators shared by tests and the CLI.
//! - [`io`]: on-disk formats.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod phantom;
pub mod registration;

pub use error::{Error, Result};
pub use eval::{FailureCategory, RegistrationReport};
pub use features::{DetectorConfig, FeatureClass, FeatureMap, Modality};
pub use geometry::{Centerline, Frame, PolarConfig, PolarImage, Vec3, Volume3};
pub use phantom::{GroundTruth, PhantomSpec, PullbackConfig};
pub use registration::{OptimizerConfig, TransformParams, WarpedGeometry};
