use serde::{Deserialize, Serialize};

use super::warp::{sample_warped_with_jacobian, transport_labels, WarpedSampling};
use super::{OptimizerConfig, TransformParams};
use crate::error::{Error, Result};
use crate::features::{
    binarize_guidewire, detect_heuristic, detect_oracle, heuristic_backward, DetectorConfig, DetectorKind, FeatureMap,
    GuidewireMask, LabelMap, Modality, LANDMARKS,
};
use crate::geometry::{Centerline, PolarConfig, PolarImage, Volume3};
use crate::losses::{dice_ce, masked_nmi, reg_loss, LossValue, NmiConfig};

/// Source of the moving-side landmark maps.
#[derive(Debug, Clone, Copy)]
pub enum MovingFeatures<'a> {
    /// Heuristic detector on the warped moving image (differentiable).
    Heuristic,
    /// Ground-truth node labels of the centerline carried through the warp
    /// (piecewise constant, so they contribute no gradient).
    Oracle(&'a LabelMap),
}

/// Everything the objective needs about one case.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub fixed_polar: &'a PolarImage,
    /// Fixed-side bifurcation and calcification maps.
    pub fixed_landmarks: FeatureMap,
    /// Fixed-side guidewire bins excluded from the NMI.
    pub mask: GuidewireMask,
    pub volume: &'a Volume3,
    pub centerline: &'a Centerline,
    pub moving: MovingFeatures<'a>,
    pub frame_spacing: f64,
    pub detector: DetectorConfig,
    pub nmi: NmiConfig,
}

impl<'a> Problem<'a> {
    /// Builds a problem from the fixed image and its full feature map (with
    /// a guidewire channel, or none for no masking).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fixed_polar: &'a PolarImage,
        fixed_features: &FeatureMap,
        volume: &'a Volume3,
        centerline: &'a Centerline,
        moving: MovingFeatures<'a>,
        frame_spacing: f64,
        detector: &DetectorConfig,
        opt: &OptimizerConfig,
    ) -> Result<Self> {
        let (nt, nz) = (fixed_polar.config.n_theta, fixed_polar.n_z);
        if fixed_features.n_theta != nt || fixed_features.n_z != nz {
            return Err(Error::Shape("fixed feature map does not match the fixed image".into()));
        }
        let mask = match fixed_features.class_index(crate::features::FeatureClass::Guidewire) {
            Some(_) => binarize_guidewire(fixed_features, opt.guidewire_threshold)?,
            None => GuidewireMask::none(nt, nz),
        };
        if let MovingFeatures::Oracle(labels) = moving {
            if labels.n_theta != nt || labels.n_z != centerline.len() {
                return Err(Error::Shape("oracle labels do not match the centerline and angular grid".into()));
            }
        }
        if !(frame_spacing > 0.0) {
            return Err(Error::invalid("frame spacing must be positive"));
        }
        detector.validate()?;
        Ok(Self {
            fixed_polar,
            fixed_landmarks: fixed_features.select(&LANDMARKS)?,
            mask,
            volume,
            centerline,
            moving,
            frame_spacing,
            detector: detector.clone(),
            nmi: opt.nmi,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.fixed_polar.n_z
    }

    pub fn polar(&self) -> &PolarConfig {
        &self.fixed_polar.config
    }

    /// Moving polar image (with sampler Jacobian) at `params`.
    pub fn sample(&self, params: &TransformParams) -> Result<WarpedSampling> {
        sample_warped_with_jacobian(self.volume, params, self.centerline, self.frame_spacing, self.polar())
    }

    /// Moving landmark maps for an already sampled image.
    pub fn moving_landmarks(&self, image: &PolarImage, params: &TransformParams) -> Result<FeatureMap> {
        match self.moving {
            MovingFeatures::Heuristic => detect_heuristic(image, Modality::Mpr, &self.detector),
            MovingFeatures::Oracle(labels) => {
                let moved = transport_labels(labels, self.centerline, params, self.frame_spacing)?;
                let cfg = DetectorConfig { kind: DetectorKind::Oracle, ..self.detector.clone() };
                detect_oracle(&moved, &cfg)?.select(&LANDMARKS)
            }
        }
    }
}

/// Components of the objective at one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub dice_ce: f64,
    /// Negative NMI.
    pub nmi: f64,
    pub reg: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    /// Gradient in the flat parameter layout.
    pub gradient: Option<Vec<f64>>,
}

/// `DiceCE(moving, fixed) − NMI(fixed, moving) + α·reg + w·extent penalty`.
///
/// The gradient pulls the DiceCE gradient back through the detector and
/// adds the NMI gradient in image space, then maps the sum to the
/// parameters through the sampler Jacobian.
pub fn evaluate(
    problem: &Problem,
    params: &TransformParams,
    alpha: f64,
    extent_weight: f64,
    want_grad: bool,
) -> Result<Evaluation> {
    let sampling = problem.sample(params)?;
    let moving_fm = problem.moving_landmarks(&sampling.image, params)?;
    let dice = dice_ce(&moving_fm, &problem.fixed_landmarks, want_grad)?;
    let nmi = masked_nmi(problem.fixed_polar, &sampling.image, &problem.mask, &problem.nmi, want_grad)?;
    let reg = reg_loss(params);
    let (pen, pen_ds, pen_dt) = sampling.extent_penalty();

    for (name, v) in [("dice_ce", dice.value), ("nmi", nmi.value), ("reg", reg.value), ("penalty", pen)] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss { component: name, iteration: 0 });
        }
    }
    let loss = LossBreakdown {
        total: dice.value + nmi.value + alpha * reg.value + extent_weight * pen,
        dice_ce: dice.value,
        nmi: nmi.value,
        reg: reg.value,
        penalty: pen,
    };
    if !want_grad {
        return Ok(Evaluation { loss, gradient: None });
    }

    let mut upstream = nmi.gradient.expect("requested");
    if matches!(problem.moving, MovingFeatures::Heuristic) {
        let d_fm = dice.gradient.expect("requested");
        let d_img = heuristic_backward(&sampling.image, Modality::Mpr, &problem.detector, &d_fm)?;
        upstream.iter_mut().zip(&d_img).for_each(|(a, b)| *a += b);
    }
    let mut grad = sampling.vjp(params, &upstream)?;
    let reg_grad = reg.gradient.expect("always present");
    grad.iter_mut().zip(&reg_grad).for_each(|(g, r)| *g += alpha * r);
    grad[0] += extent_weight * pen_ds;
    grad[1] += extent_weight * pen_dt;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { component: "gradient", iteration: 0 });
    }
    Ok(Evaluation { loss, gradient: Some(grad) })
}

/// Each objective term with its own gradient in the flat parameter layout.
#[derive(Debug, Clone)]
pub struct Components {
    pub dice_ce: LossValue,
    /// Negative NMI.
    pub nmi: LossValue,
    pub reg: LossValue,
}

/// Evaluates the DiceCE, NMI and regularizer terms separately, each pulled
/// back to the parameters.
pub fn loss_components(problem: &Problem, params: &TransformParams) -> Result<Components> {
    let sampling = problem.sample(params)?;
    let moving_fm = problem.moving_landmarks(&sampling.image, params)?;
    let dice = dice_ce(&moving_fm, &problem.fixed_landmarks, true)?;
    let nmi = masked_nmi(problem.fixed_polar, &sampling.image, &problem.mask, &problem.nmi, true)?;
    let dice_grad = match problem.moving {
        MovingFeatures::Heuristic => {
            let d_img = heuristic_backward(
                &sampling.image,
                Modality::Mpr,
                &problem.detector,
                &dice.gradient.expect("requested"),
            )?;
            sampling.vjp(params, &d_img)?
        }
        MovingFeatures::Oracle(_) => vec![0.0; params.len()],
    };
    let nmi_grad = sampling.vjp(params, &nmi.gradient.expect("requested"))?;
    Ok(Components {
        dice_ce: LossValue { value: dice.value, gradient: Some(dice_grad) },
        nmi: LossValue { value: nmi.value, gradient: Some(nmi_grad) },
        reg: reg_loss(params),
    })
}

/// Total objective with its gradient in the flat parameter layout.
pub fn total_loss(problem: &Problem, params: &TransformParams, alpha: f64) -> Result<LossValue> {
    let e = evaluate(problem, params, alpha, 0.0, true)?;
    Ok(LossValue { value: e.loss.total, gradient: e.gradient })
}
