//! Warp model, objective, pre-alignment and local refinement.
//!
//! A pullback frame `p` at nominal depth `z = p·frame_spacing` is placed at
//! arc length `|s_z|·z + t_z` along the centerline (measured from the far
//! end when `s_z < 0`), then rotated in-plane by `θ_p` and shifted by
//! `(t_u,p, t_v,p)` along the rotated axes.

mod objective;
mod optimize;
mod prealign;
mod warp;

pub use objective::{
    evaluate, loss_components, total_loss, Components, Evaluation, LossBreakdown, MovingFeatures, Problem,
};
pub use optimize::{optimize_local, LocalResult, TraceRow};
pub use prealign::{count_landmark_runs, longitudinal_profile, prealign, Prealignment};
pub use warp::{
    sample_warped, sample_warped_with_jacobian, transport_labels, warp_geometry, warp_geometry_clamped, WarpedGeometry,
    WarpedSampling,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::FailureCategory;
use crate::losses::NmiConfig;

/// The optimization variable.
///
/// Flat layout (see [`TransformParams::to_vec`]):
/// `[s_z, t_z, θ_0 … θ_{N−1}, t_u,0 … t_u,N−1, t_v,0 … t_v,N−1]`.
/// `flip_v` selects the handedness of the in-plane axes (the clockwise or
/// anti-clockwise reading of the pullback) and is chosen by pre-alignment,
/// not by gradient descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub s_z: f64,
    pub t_z: f64,
    #[serde(default)]
    pub flip_v: bool,
    pub theta: Vec<f64>,
    pub t_u: Vec<f64>,
    pub t_v: Vec<f64>,
}

impl TransformParams {
    pub const THETA_OFFSET: usize = 2;

    pub fn identity(n_frames: usize) -> Self {
        Self {
            s_z: 1.0,
            t_z: 0.0,
            flip_v: false,
            theta: vec![0.0; n_frames],
            t_u: vec![0.0; n_frames],
            t_v: vec![0.0; n_frames],
        }
    }

    pub fn n_frames(&self) -> usize {
        self.theta.len()
    }

    /// Number of optimized scalars.
    pub fn len(&self) -> usize {
        2 + 3 * self.n_frames()
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.s_z);
        out.push(self.t_z);
        out.extend_from_slice(&self.theta);
        out.extend_from_slice(&self.t_u);
        out.extend_from_slice(&self.t_v);
        out
    }

    pub fn set_from_slice(&mut self, x: &[f64]) -> Result<()> {
        let n = self.n_frames();
        if x.len() != self.len() {
            return Err(Error::Shape(format!("{} values for {} parameters", x.len(), self.len())));
        }
        self.s_z = x[0];
        self.t_z = x[1];
        self.theta.copy_from_slice(&x[2..2 + n]);
        self.t_u.copy_from_slice(&x[2 + n..2 + 2 * n]);
        self.t_v.copy_from_slice(&x[2 + 2 * n..2 + 3 * n]);
        Ok(())
    }

    /// Index of `θ_p` in the flat layout.
    pub fn theta_index(&self, p: usize) -> usize {
        Self::THETA_OFFSET + p
    }

    pub fn t_u_index(&self, p: usize) -> usize {
        Self::THETA_OFFSET + self.n_frames() + p
    }

    pub fn t_v_index(&self, p: usize) -> usize {
        Self::THETA_OFFSET + 2 * self.n_frames() + p
    }

    pub fn validate(&self, scale_bounds: [f64; 2]) -> Result<()> {
        let n = self.n_frames();
        if self.t_u.len() != n || self.t_v.len() != n {
            return Err(Error::Shape("per-frame parameter arrays differ in length".into()));
        }
        if n == 0 {
            return Err(Error::invalid("transform has no frames"));
        }
        if self.to_vec().iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("transform parameters must be finite"));
        }
        let s = self.s_z.abs();
        if s < scale_bounds[0] - 1e-12 || s > scale_bounds[1] + 1e-12 {
            return Err(Error::invalid(format!("|s_z| = {s} outside [{}, {}]", scale_bounds[0], scale_bounds[1])));
        }
        Ok(())
    }
}

/// How `|s_z|` is initialized before the offset search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleInit {
    /// `|s_z| = 1`: one millimetre of pullback per millimetre of centerline.
    Unit,
    /// `|s_z| = centerline length / pullback length`.
    LengthRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Weight of the smoothness regularizer.
    pub alpha: f64,
    /// Relative change of the NMI term regarded as converged...
    pub rtol: f64,
    /// ...for this many consecutive iterations.
    pub patience: usize,
    pub max_iters: usize,
    /// Offset grid step (mm); `None` uses the polar slice spacing.
    pub tz_step: Option<f64>,
    /// Rotation grid step in angular bins.
    pub theta_step_bins: usize,
    pub scale_init: ScaleInit,
    pub scale_bounds: [f64; 2],
    /// Minimum fraction of frames that must land on the centerline for an
    /// offset to enter the grid search.
    pub min_overlap: f64,
    /// Weight (1/mm²) of the quadratic penalty on arc positions beyond the
    /// centerline ends.
    pub extent_penalty: f64,
    /// Landmark runs in the fixed image below this count flag the case.
    pub min_landmarks: usize,
    pub landmark_threshold: f64,
    pub guidewire_threshold: f64,
    pub nmi: NmiConfig,
    /// Run gradient refinement after pre-alignment.
    pub refine: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            alpha: 1000.0,
            rtol: 1e-4,
            patience: 3,
            max_iters: 2000,
            tz_step: None,
            theta_step_bins: 1,
            scale_init: ScaleInit::Unit,
            scale_bounds: [0.5, 2.0],
            min_overlap: 0.5,
            extent_penalty: 1.0,
            min_landmarks: 1,
            landmark_threshold: 0.5,
            guidewire_threshold: 0.5,
            nmi: NmiConfig::default(),
            refine: true,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.weight_decay >= 0.0
            && self.alpha >= 0.0
            && self.rtol > 0.0
            && self.patience >= 1
            && self.max_iters >= 1
            && self.tz_step.is_none_or(|s| s > 0.0)
            && self.theta_step_bins >= 1
            && self.scale_bounds[0] > 0.0
            && self.scale_bounds[0] <= 1.0
            && self.scale_bounds[1] >= 1.0
            && (0.0..=1.0).contains(&self.min_overlap)
            && self.min_overlap > 0.0
            && self.extent_penalty >= 0.0;
        if !ok {
            return Err(Error::invalid("invalid optimizer configuration"));
        }
        Ok(())
    }
}

/// Result of [`register`].
#[derive(Debug, Clone)]
pub struct RegistrationOutcome {
    pub params: TransformParams,
    pub geometry: WarpedGeometry,
    pub prealignment: Prealignment,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
    pub runtime_s: f64,
    pub failure: Option<FailureCategory>,
}

/// Pre-alignment followed by gradient refinement.
///
/// Failure conditions are reported in `failure` rather than as errors, with
/// priority centerline failure > insufficient landmarks > nonconvergence. A
/// centerline that cannot hold every pullback frame after pre-alignment
/// skips refinement.
pub fn register(problem: &Problem, cfg: &OptimizerConfig) -> Result<RegistrationOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let pre = prealign(problem, cfg)?;
    let centerline_failure = !pre.out_of_extent.is_empty();
    let (params, trace, iterations, converged) = if cfg.refine && !centerline_failure {
        let local = optimize_local(problem, &pre.params, cfg)?;
        (local.params, local.trace, local.iterations, local.converged)
    } else {
        (pre.params.clone(), Vec::new(), 0, true)
    };
    let geometry = warp_geometry_clamped(&params, problem.centerline, problem.n_frames(), problem.frame_spacing);
    let failure = if centerline_failure {
        Some(FailureCategory::CenterlineFailure)
    } else if pre.low_confidence {
        Some(FailureCategory::InsufficientLandmarks)
    } else if !converged {
        Some(FailureCategory::Nonconvergence)
    } else {
        None
    };
    if let Some(f) = failure {
        log::warn!("registration flagged: {f:?}");
    }
    Ok(RegistrationOutcome {
        params,
        geometry,
        prealignment: pre,
        trace,
        iterations,
        converged,
        runtime_s: start.elapsed().as_secs_f64(),
        failure,
    })
}
