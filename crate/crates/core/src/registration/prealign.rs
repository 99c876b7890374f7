use serde::{Deserialize, Serialize};

use super::objective::{MovingFeatures, Problem};
use super::warp::arc_position;
use super::{OptimizerConfig, ScaleInit, TransformParams};
use crate::error::{Error, Result};
use crate::features::{detect_heuristic, detect_oracle, DetectorConfig, DetectorKind, FeatureMap, Modality, LANDMARKS};
use crate::geometry::{sample_polar, wrap_angle, FrameAxes};
use crate::losses::dice_ce;

/// Losses at or below the incumbent plus this margin count as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prealignment {
    pub params: TransformParams,
    /// DiceCE between longitudinal profiles at the chosen offset.
    pub longitudinal_loss: f64,
    /// DiceCE between full maps at the chosen rotation.
    pub angular_loss: f64,
    /// Landmark runs found in the fixed longitudinal profile.
    pub landmark_runs: usize,
    pub low_confidence: bool,
    /// Frames that fall outside the centerline at the chosen offset.
    pub out_of_extent: Vec<usize>,
}

/// Per-class maximum over θ: a map with a single angular bin.
pub fn longitudinal_profile(fm: &FeatureMap) -> FeatureMap {
    let (nt, nz) = (fm.n_theta, fm.n_z);
    let mut probs = Vec::with_capacity(fm.classes.len() * nz);
    for c in 0..fm.classes.len() {
        for p in 0..nz {
            let row = &fm.probs[nt * (p + nz * c)..nt * (p + nz * c) + nt];
            probs.push(row.iter().cloned().fold(0.0, f64::max));
        }
    }
    FeatureMap { classes: fm.classes.clone(), n_theta: 1, n_z: nz, probs }
}

/// Number of maximal runs of consecutive slices at or above `threshold`,
/// summed over the classes of a longitudinal profile.
pub fn count_landmark_runs(profile: &FeatureMap, threshold: f64) -> usize {
    let nz = profile.n_z;
    let mut runs = 0;
    for c in 0..profile.classes.len() {
        let mut inside = false;
        for p in 0..nz {
            let on = profile.probs[c * nz * profile.n_theta + p * profile.n_theta] >= threshold;
            if on && !inside {
                runs += 1;
            }
            inside = on;
        }
    }
    runs
}

/// Longitudinal landmark profile of the moving side at every centerline node.
fn node_profile(problem: &Problem) -> Result<FeatureMap> {
    let fm = match problem.moving {
        MovingFeatures::Heuristic => {
            let c = problem.centerline;
            let axes: Vec<FrameAxes> =
                c.points().iter().zip(c.frames()).map(|(p, f)| FrameAxes { origin: *p, u: f.u, v: f.v }).collect();
            let img = sample_polar(problem.volume, &axes, c.arc_length().to_vec(), problem.polar())?;
            detect_heuristic(&img, Modality::Mpr, &problem.detector)?
        }
        MovingFeatures::Oracle(labels) => {
            let cfg = DetectorConfig { kind: DetectorKind::Oracle, ..problem.detector.clone() };
            detect_oracle(labels, &cfg)?.select(&LANDMARKS)?
        }
    };
    Ok(longitudinal_profile(&fm))
}

/// Grid-search initialization driven by the landmark maps only.
///
/// 1. `|s_z|` from `cfg.scale_init`; for each sign and each offset
///    `t_z = k·step` keeping at least `cfg.min_overlap` of the frames on the
///    centerline, the longitudinal profiles are compared by DiceCE (frames
///    off the centerline read as background).
/// 2. At the chosen offset, a uniform rotation `θ₀` on the angular grid and
///    both in-plane handedness choices are compared by DiceCE over the full
///    `(θ, z)` maps. Rotations by whole bins are exact index permutations of
///    the map sampled at `θ₀ = 0`.
///
/// Ties go to the smallest `|t_z|`, then positive `s_z`, then the smallest
/// `|θ₀|`, then the unflipped axes.
pub fn prealign(problem: &Problem, cfg: &OptimizerConfig) -> Result<Prealignment> {
    cfg.validate()?;
    let n = problem.n_frames();
    let c = problem.centerline;
    let length = c.length();
    let fs = problem.frame_spacing;
    let z_max = (n - 1) as f64 * fs;
    let scale = match cfg.scale_init {
        ScaleInit::Unit => 1.0,
        ScaleInit::LengthRatio => (length / z_max).clamp(cfg.scale_bounds[0], cfg.scale_bounds[1]),
    };
    let fixed_profile = longitudinal_profile(&problem.fixed_landmarks);
    let landmark_runs = count_landmark_runs(&fixed_profile, cfg.landmark_threshold);
    let nodes = node_profile(problem)?;

    let step = cfg.tz_step.unwrap_or(problem.polar().dz);
    let k_max = ((length + scale * z_max) / step).ceil() as i64 + 1;
    let arcs = c.arc_length();
    let mut best: Option<(f64, f64, f64)> = None; // (loss, s_z, t_z)
    let mut moving = FeatureMap::zeros(fixed_profile.classes.clone(), 1, n);
    for m in 0..=k_max {
        for sign in [1.0, -1.0] {
            for k in if m == 0 { vec![0] } else { vec![m, -m] } {
                let t_z = k as f64 * step;
                let probe = TransformParams { s_z: sign * scale, t_z, ..TransformParams::identity(1) };
                let mut inside = 0;
                for p in 0..n {
                    let (a, _, _) = arc_position(&probe, p as f64 * fs, length);
                    let on = (-1e-9..=length + 1e-9).contains(&a);
                    for ci in 0..nodes.classes.len() {
                        moving.probs[ci * n + p] = if on {
                            let (j, w) = c.locate(a);
                            let row = &nodes.probs[ci * arcs.len()..(ci + 1) * arcs.len()];
                            row[j] * (1.0 - w) + row[j + 1] * w
                        } else {
                            0.0
                        };
                    }
                    inside += on as usize;
                }
                if (inside as f64) < cfg.min_overlap * n as f64 {
                    continue;
                }
                let loss = dice_ce(&moving, &fixed_profile, false)?.value;
                if best.is_none_or(|(b, _, _)| loss < b - TIE_TOL) {
                    best = Some((loss, sign * scale, t_z));
                }
            }
        }
    }
    let (longitudinal_loss, s_z, t_z) = best.ok_or(Error::EmptySearchRange)?;

    let mut params = TransformParams { s_z, t_z, ..TransformParams::identity(n) };
    let base = {
        let sampling = problem.sample(&params)?;
        problem.moving_landmarks(&sampling.image, &params)?
    };
    let nt = base.n_theta as i64;
    let mut best_rot: Option<(f64, i64, bool)> = None;
    let mut m = 0;
    while m <= nt / 2 {
        let ks = if m == 0 || 2 * m == nt { vec![m] } else { vec![m, -m] };
        for k in ks {
            for flip in [false, true] {
                let candidate = base.remap_theta(|i| {
                    let i = i as i64;
                    let src = if flip { -i - k } else { i + k };
                    src.rem_euclid(nt) as usize
                });
                let loss = dice_ce(&candidate, &problem.fixed_landmarks, false)?.value;
                if best_rot.is_none_or(|(b, _, _)| loss < b - TIE_TOL) {
                    best_rot = Some((loss, k, flip));
                }
            }
        }
        m += cfg.theta_step_bins as i64;
    }
    let (angular_loss, k, flip) = best_rot.expect("at least one rotation evaluated");
    let theta0 = wrap_angle(k as f64 * problem.polar().angle_step());
    params.flip_v = flip;
    params.theta.iter_mut().for_each(|t| *t = theta0);

    let out_of_extent: Vec<usize> = (0..n)
        .filter(|&p| {
            let (a, _, _) = arc_position(&params, p as f64 * fs, length);
            !(-1e-9..=length + 1e-9).contains(&a)
        })
        .collect();
    let low_confidence = landmark_runs < cfg.min_landmarks;
    log::debug!(
        "prealign: s_z={s_z} t_z={t_z:.3} theta0={theta0:.4} flip={flip} losses=({longitudinal_loss:.4}, {angular_loss:.4}) runs={landmark_runs}"
    );
    Ok(Prealignment { params, longitudinal_loss, angular_loss, landmark_runs, low_confidence, out_of_extent })
}
