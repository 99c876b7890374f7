//! Seeded registration scenarios: a random phantom, a ground-truth warp and
//! the pullback simulated through it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, PolarConfig};
use crate::phantom::{
    generate_phantom, simulate_pullback, BranchSpec, CalcificationSpec, CenterlineShape, GuidewireConfig, IntensityMap,
    LumenRadius, Phantom, PhantomSpec, Pullback, PullbackConfig,
};
use crate::registration::TransformParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Identity warp, plain modality, no noise.
    SelfRegistration,
    /// Random offset, rotation bias and lateral jitter with speckle,
    /// guidewire and volume noise.
    WarpRecovery,
    /// Random offset and uniform rotation, noise-free.
    Prealignment,
    /// Near-identity warp, noise-free, guidewire on.
    DetectorQuality,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SelfRegistration => "self_registration",
            Scenario::WarpRecovery => "warp_recovery",
            Scenario::Prealignment => "prealignment",
            Scenario::DetectorQuality => "detector_quality",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "self_registration" => Ok(Scenario::SelfRegistration),
            "warp_recovery" => Ok(Scenario::WarpRecovery),
            "prealignment" => Ok(Scenario::Prealignment),
            "detector_quality" => Ok(Scenario::DetectorQuality),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Everything needed to build a case deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub scenario: Scenario,
    pub seed: u64,
    pub polar: PolarConfig,
    pub phantom: PhantomSpec,
    pub pullback: PullbackConfig,
    pub gt: TransformParams,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub spec: CaseSpec,
    pub phantom: Phantom,
    pub pullback: Pullback,
}

impl Case {
    pub fn name(&self) -> String {
        format!("{}_{:03}", self.spec.scenario.as_str(), self.spec.seed)
    }
}

/// Pullback length in frames for every scenario.
pub const N_FRAMES: usize = 100;
/// Nominal vessel length (mm) along z before the spline wiggles.
const VESSEL_MM: f64 = 45.0;
/// Half-width of the random longitudinal offset (mm).
const TZ_RANGE: f64 = 5.0;
/// Largest uniform rotation bias (rad).
const THETA_BIAS: f64 = PI / 6.0;
/// Largest lateral jitter (mm).
const JITTER_MM: f64 = 0.5;

fn random_shape(rng: &mut ChaCha8Rng) -> CenterlineShape {
    let n = 6;
    let control_points = (0..n)
        .map(|i| {
            let z = VESSEL_MM * i as f64 / (n - 1) as f64;
            [rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5), z]
        })
        .collect();
    CenterlineShape::Spline { control_points }
}

/// Landmarks placed in the arc window every pullback of the scenario sees,
/// at least `gap` mm apart along the centerline.
fn random_landmarks(
    rng: &mut ChaCha8Rng,
    window: (f64, f64),
    radius: f64,
    dz: f64,
) -> (Vec<BranchSpec>, Vec<CalcificationSpec>) {
    let gap = 3.0;
    let n_branch = 2;
    let n_calc = rng.random_range(2..=3);
    let total = n_branch + n_calc;
    // Stratified slots keep structures apart and spread over the window.
    let slot = (window.1 - window.0) / total as f64;
    let mut order: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut branches = Vec::new();
    let mut calcs = Vec::new();
    for (k, &which) in order.iter().enumerate() {
        let lo = window.0 + k as f64 * slot;
        let jitter = (slot - gap).max(0.0);
        let center = lo + 0.5 * gap.min(slot) + rng.random_range(0.0..=jitter);
        if which < n_branch {
            branches.push(BranchSpec {
                arc_mm: center,
                angle: rng.random_range(0.0..TAU),
                radius_mm: radius * rng.random_range(0.7..0.85),
                length_mm: 8.0,
                tilt: rng.random_range(1.3..1.85),
            });
        } else {
            // Ends half-way between nodes so labels do not hinge on rounding.
            let len = rng.random_range(1.0..2.2);
            let start = ((center - 0.5 * len) / dz).floor() * dz + 0.5 * dz;
            let end = start + (len / dz).round().max(2.0) * dz;
            calcs.push(CalcificationSpec {
                arc_start_mm: start,
                arc_end_mm: end,
                angle: rng.random_range(0.0..TAU),
                width: rng.random_range(PI / 8.0..PI / 3.0),
                boost: 1.65,
            });
        }
    }
    (branches, calcs)
}

/// Guidewire angle, on the angular grid, farthest from every landmark as
/// seen in the pullback frames.
fn guidewire_angle(spec: &PhantomSpec, theta_bias: f64, polar: &PolarConfig) -> f64 {
    let seen: Vec<f64> = spec
        .branches
        .iter()
        .map(|b| b.angle)
        .chain(spec.calcifications.iter().map(|c| c.angle))
        .map(|a| a - theta_bias)
        .collect();
    (0..polar.n_theta)
        .map(|i| polar.angle(i))
        .max_by(|a, b| {
            let da = seen.iter().map(|s| angular_distance(*a, *s)).fold(f64::MAX, f64::min);
            let db = seen.iter().map(|s| angular_distance(*b, *s)).fold(f64::MAX, f64::min);
            da.total_cmp(&db)
        })
        .unwrap_or(0.0)
}

/// Draws the case parameters for `scenario` from `seed`.
pub fn case_spec(scenario: Scenario, seed: u64) -> CaseSpec {
    let polar = PolarConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (scenario as u64) << 32);
    let shape = random_shape(&mut rng);
    let r0 = rng.random_range(1.3..1.6);
    let lumen_radius = LumenRadius { start_mm: r0, end_mm: r0 * rng.random_range(0.8..0.95) };
    let span = (N_FRAMES - 1) as f64 * polar.dz;
    // Arc length of the spline is a little over its z extent, so centering
    // on the z extent keeps every offset inside the centerline.
    let base = (0.5 * (VESSEL_MM - span) / polar.dz).round() * polar.dz;
    let (tz, theta, jitter) = match scenario {
        Scenario::SelfRegistration => (0.0, 0.0, 0.0),
        Scenario::DetectorQuality => (base, 0.0, 0.0),
        Scenario::Prealignment => {
            (base + rng.random_range(-TZ_RANGE..=TZ_RANGE), rng.random_range(-THETA_BIAS..=THETA_BIAS), 0.0)
        }
        Scenario::WarpRecovery => {
            (base + rng.random_range(-TZ_RANGE..=TZ_RANGE), rng.random_range(-THETA_BIAS..=THETA_BIAS), JITTER_MM)
        }
    };
    let window = match scenario {
        Scenario::SelfRegistration => (3.0, span - 2.0),
        _ => (base + TZ_RANGE + 1.5, base - TZ_RANGE + span - 1.5),
    };
    let (branches, calcifications) = random_landmarks(&mut rng, window, r0, polar.dz);
    let noisy = scenario == Scenario::WarpRecovery;
    let phantom = PhantomSpec {
        shape,
        lumen_radius,
        wall_thickness_mm: 0.7,
        branches,
        calcifications,
        voxel_spacing_mm: 0.25,
        noise_sigma: if noisy { 0.03 } else { 0.0 },
        seed: seed.wrapping_add(1),
        ..Default::default()
    };

    let mut gt = TransformParams { t_z: tz, ..TransformParams::identity(N_FRAMES) };
    gt.theta.iter_mut().for_each(|t| *t = theta);
    if jitter > 0.0 {
        for p in 0..N_FRAMES {
            let r = jitter * rng.random_range(0.0f64..=1.0).sqrt();
            let a = rng.random_range(0.0..TAU);
            gt.t_u[p] = r * a.cos();
            gt.t_v[p] = r * a.sin();
        }
    }
    let pullback = match scenario {
        Scenario::SelfRegistration | Scenario::Prealignment => PullbackConfig::plain(N_FRAMES, polar.dz),
        Scenario::DetectorQuality | Scenario::WarpRecovery => PullbackConfig {
            n_frames: N_FRAMES,
            frame_spacing: polar.dz,
            guidewire: Some(GuidewireConfig { angle: guidewire_angle(&phantom, theta, &polar), ..Default::default() }),
            speckle_sigma: if noisy { 0.15 } else { 0.0 },
            intensity_map: IntensityMap::default(),
            seed: seed.wrapping_add(2),
        },
    };
    CaseSpec { scenario, seed, polar, phantom, pullback, gt }
}

pub fn build_case(spec: CaseSpec) -> Result<Case> {
    let phantom = generate_phantom(&spec.phantom, &spec.polar)?;
    let pullback = simulate_pullback(
        &phantom.volume,
        &phantom.centerline,
        &phantom.labels,
        &spec.gt,
        &spec.pullback,
        &spec.polar,
    )?;
    Ok(Case { spec, phantom, pullback })
}

pub fn scenario_case(scenario: Scenario, seed: u64) -> Result<Case> {
    build_case(case_spec(scenario, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureClass;

    #[test]
    fn case_specs_are_deterministic_and_seed_dependent() {
        let a = case_spec(Scenario::WarpRecovery, 3);
        assert_eq!(a, case_spec(Scenario::WarpRecovery, 3));
        assert_ne!(a, case_spec(Scenario::WarpRecovery, 4));
        let th = a.gt.theta[0];
        assert!(th.abs() <= THETA_BIAS && a.gt.theta.iter().all(|&t| t == th));
        for p in 0..N_FRAMES {
            assert!(a.gt.t_u[p].hypot(a.gt.t_v[p]) <= JITTER_MM);
        }
    }

    #[test]
    fn every_landmark_is_visible_in_the_pullback() {
        for scenario in [Scenario::SelfRegistration, Scenario::Prealignment, Scenario::WarpRecovery] {
            for seed in 0..3 {
                let case = scenario_case(scenario, seed).unwrap();
                let labels = &case.pullback.truth.labels;
                let n_landmarks = case.spec.phantom.branches.len() + case.spec.phantom.calcifications.len();
                assert!(n_landmarks >= 4);
                assert!(labels.count(FeatureClass::Bifurcation) > 0);
                assert!(labels.count(FeatureClass::Calcification) > 0);
                // Each calcification appears in some frame.
                let arcs = &case.pullback.truth.reference.arc_positions;
                for c in &case.spec.phantom.calcifications {
                    assert!(arcs.iter().any(|&a| a >= c.arc_start_mm && a <= c.arc_end_mm), "{scenario:?} {seed}");
                }
            }
        }
    }
}
