//! Registration quality against ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FrameAxes, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    InsufficientLandmarks,
    CenterlineFailure,
    Nonconvergence,
}

impl FailureCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureCategory::InsufficientLandmarks => "insufficient_landmarks",
            FailureCategory::CenterlineFailure => "centerline_failure",
            FailureCategory::Nonconvergence => "nonconvergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalThresholds {
    /// Matching distance (mm) for centerline overlap.
    pub distance_mm: f64,
    pub min_f1: f64,
    pub min_cosine: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self { distance_mm: 2.0, min_f1: 0.8, min_cosine: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn within(p: &Vec3, set: &[Vec3], threshold: f64) -> bool {
    let t2 = threshold * threshold;
    let mut best = f64::INFINITY;
    for q in set {
        let d = (p - q).norm_squared();
        if d < best {
            best = d;
        }
    }
    best <= t2
}

/// Overlap of two ordered point sets. A warped point is a true positive when
/// its nearest reference point is within `threshold`, a false positive
/// otherwise; a reference point farther than `threshold` from every warped
/// point is a false negative. Matching is many-to-one. Empty denominators
/// yield 0.
pub fn centerline_overlap(warped: &[Vec3], reference: &[Vec3], threshold: f64) -> Result<Overlap> {
    if warped.is_empty() || reference.is_empty() {
        return Err(Error::invalid("centerline overlap needs non-empty point sets"));
    }
    let tp = warped.iter().filter(|p| within(p, reference, threshold)).count();
    let fp = warped.len() - tp;
    let fneg = reference.iter().filter(|q| !within(q, warped, threshold)).count();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    Ok(Overlap { precision, recall, f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneCosine {
    pub cos_u: f64,
    pub cos_v: f64,
    pub per_frame_u: Vec<f64>,
    pub per_frame_v: Vec<f64>,
}

/// Per-frame `u′·u_ref` and `v′·v_ref` with their medians.
pub fn plane_cosine(warped: &[FrameAxes], reference: &[FrameAxes]) -> Result<PlaneCosine> {
    if warped.len() != reference.len() || warped.is_empty() {
        return Err(Error::Shape(format!("{} warped frames vs {} reference frames", warped.len(), reference.len())));
    }
    let per_frame_u: Vec<f64> = warped.iter().zip(reference).map(|(a, b)| a.u.dot(&b.u)).collect();
    let per_frame_v: Vec<f64> = warped.iter().zip(reference).map(|(a, b)| a.v.dot(&b.v)).collect();
    Ok(PlaneCosine { cos_u: median(&per_frame_u), cos_v: median(&per_frame_v), per_frame_u, per_frame_v })
}

/// Linear-interpolation quantile (`q ∈ [0, 1]`) of a non-empty sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Per-case evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub cos_u: f64,
    pub cos_v: f64,
    pub per_frame_cos_u: Vec<f64>,
    pub per_frame_cos_v: Vec<f64>,
    pub success: bool,
    pub failure_category: Option<FailureCategory>,
    pub runtime_s: f64,
}

impl RegistrationReport {
    /// Success as recomputed from the stored metrics.
    pub fn meets(&self, th: &EvalThresholds) -> bool {
        self.f1 >= th.min_f1 && self.cos_u >= th.min_cosine && self.cos_v >= th.min_cosine
    }
}

/// Scores warped frames against the ground-truth frames.
pub fn evaluate_registration(
    warped: &[FrameAxes],
    reference: &[FrameAxes],
    thresholds: &EvalThresholds,
    failure_category: Option<FailureCategory>,
    runtime_s: f64,
) -> Result<RegistrationReport> {
    let wo: Vec<Vec3> = warped.iter().map(|a| a.origin).collect();
    let ro: Vec<Vec3> = reference.iter().map(|a| a.origin).collect();
    let ov = centerline_overlap(&wo, &ro, thresholds.distance_mm)?;
    let pc = plane_cosine(warped, reference)?;
    let mut report = RegistrationReport {
        f1: ov.f1,
        precision: ov.precision,
        recall: ov.recall,
        cos_u: pc.cos_u,
        cos_v: pc.cos_v,
        per_frame_cos_u: pc.per_frame_u,
        per_frame_cos_v: pc.per_frame_v,
        success: false,
        failure_category,
        runtime_s,
    };
    report.success = report.meets(thresholds);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        Self { median: quantile(values, 0.5), q25: quantile(values, 0.25), q75: quantile(values, 0.75) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub cases: usize,
    pub f1: Spread,
    pub cos_u: Spread,
    pub cos_v: Spread,
    pub runtime_s: Spread,
    pub successes: usize,
    pub success_rate: f64,
    /// Count per failure category, categories in a fixed order.
    pub failures: Vec<(FailureCategory, usize)>,
}

/// Median and interquartile range (linear-interpolation quantiles at 0.25
/// and 0.75) per metric, success rate, and failure counts.
pub fn batch_report(reports: &[RegistrationReport]) -> Result<BatchSummary> {
    if reports.is_empty() {
        return Err(Error::invalid("batch report needs at least one case"));
    }
    let col = |f: fn(&RegistrationReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let successes = reports.iter().filter(|r| r.success).count();
    let failures =
        [FailureCategory::InsufficientLandmarks, FailureCategory::CenterlineFailure, FailureCategory::Nonconvergence]
            .into_iter()
            .map(|c| (c, reports.iter().filter(|r| r.failure_category == Some(c)).count()))
            .collect();
    Ok(BatchSummary {
        cases: reports.len(),
        f1: Spread::of(&col(|r| r.f1)),
        cos_u: Spread::of(&col(|r| r.cos_u)),
        cos_v: Spread::of(&col(|r| r.cos_v)),
        runtime_s: Spread::of(&col(|r| r.runtime_s)),
        successes,
        success_rate: successes as f64 / reports.len() as f64,
        failures,
    })
}

/// CSV header matching [`report_csv_row`].
pub const REPORT_CSV_HEADER: &str = "case,f1,precision,recall,cos_u,cos_v,success,failure_category,runtime_s";

pub fn report_csv_row(case: &str, r: &RegistrationReport) -> String {
    format!(
        "{case},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.3}",
        r.f1,
        r.precision,
        r.recall,
        r.cos_u,
        r.cos_v,
        r.success,
        r.failure_category.map(|f| f.as_str()).unwrap_or("none"),
        r.runtime_s
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight(n: usize, offset: Vec3) -> Vec<Vec3> {
        (0..n).map(|i| Vec3::new(0.0, 0.0, i as f64 * 0.3) + offset).collect()
    }

    fn axes(u: Vec3, v: Vec3, n: usize) -> Vec<FrameAxes> {
        (0..n).map(|_| FrameAxes { origin: Vec3::zeros(), u, v }).collect()
    }

    #[test]
    fn identical_sets_score_one() {
        let a = straight(50, Vec3::zeros());
        let o = centerline_overlap(&a, &a, 2.0).unwrap();
        assert_eq!((o.precision, o.recall, o.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn lateral_offset_beyond_threshold_scores_zero() {
        let a = straight(50, Vec3::zeros());
        let b = straight(50, Vec3::new(3.0, 0.0, 0.0));
        assert_eq!(centerline_overlap(&b, &a, 2.0).unwrap().f1, 0.0);
    }

    #[test]
    fn overlap_is_not_symmetric_for_unequal_coverage() {
        // Warped covers only the first half of the reference.
        let reference = straight(40, Vec3::zeros());
        let warped = straight(20, Vec3::zeros());
        let ab = centerline_overlap(&warped, &reference, 2.0).unwrap();
        let ba = centerline_overlap(&reference, &warped, 2.0).unwrap();
        assert_eq!(ab.precision, 1.0);
        assert!(ab.recall < 1.0);
        assert_ne!(ab.precision, ba.precision);
        // Equal cardinality and coverage: symmetric.
        let shifted = straight(40, Vec3::new(0.5, 0.0, 0.0));
        let x = centerline_overlap(&shifted, &reference, 2.0).unwrap();
        let y = centerline_overlap(&reference, &shifted, 2.0).unwrap();
        assert_eq!(x, Overlap { precision: y.recall, recall: y.precision, f1: y.f1 });
    }

    #[test]
    fn plane_cosine_examples() {
        let (u, v) = (Vec3::x(), Vec3::y());
        let same = plane_cosine(&axes(u, v, 5), &axes(u, v, 5)).unwrap();
        assert_eq!((same.cos_u, same.cos_v), (1.0, 1.0));
        let flipped = plane_cosine(&axes(u, -v, 5), &axes(u, v, 5)).unwrap();
        assert_eq!(flipped.cos_v, -1.0);
        let a = std::f64::consts::FRAC_PI_3;
        let rot = plane_cosine(&axes(u * a.cos() + v * a.sin(), v * a.cos() - u * a.sin(), 5), &axes(u, v, 5)).unwrap();
        assert!((rot.cos_u - 0.5).abs() < 1e-15 && (rot.cos_v - 0.5).abs() < 1e-15);
        assert!(plane_cosine(&axes(u, v, 4), &axes(u, v, 5)).is_err());
    }

    #[test]
    fn batch_examples() {
        let mk = |f1: f64, success: bool| RegistrationReport {
            f1,
            precision: f1,
            recall: f1,
            cos_u: 1.0,
            cos_v: 1.0,
            per_frame_cos_u: vec![],
            per_frame_cos_v: vec![],
            success,
            failure_category: None,
            runtime_s: 1.0,
        };
        let one = batch_report(&[mk(0.9, true)]).unwrap();
        assert_eq!((one.f1.median, one.f1.q25, one.f1.q75), (0.9, 0.9, 0.9));
        let four = batch_report(&[mk(1.0, true), mk(0.0, false), mk(1.0, true), mk(1.0, true)]).unwrap();
        assert_eq!(four.success_rate, 0.75);
        assert!(batch_report(&[]).is_err());
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
    }

    /// All-pairs oracle of [`centerline_overlap`].
    pub(crate) fn overlap_oracle(w: &[Vec3], r: &[Vec3], th: f64) -> Overlap {
        let close = |a: &Vec3, set: &[Vec3]| set.iter().any(|b| (a - b).norm() <= th);
        let tp = w.iter().filter(|a| close(a, r)).count();
        let fp = w.len() - tp;
        let fneg = r.iter().filter(|b| !close(b, w)).count();
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rc = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f1 = if p + rc == 0.0 { 0.0 } else { 2.0 * p * rc / (p + rc) };
        Overlap { precision: p, recall: rc, f1 }
    }

    #[test]
    fn half_within_threshold_matches_oracle() {
        let reference = straight(30, Vec3::zeros());
        let mut warped = straight(30, Vec3::new(1.0, 0.0, 0.0));
        for p in warped.iter_mut().skip(15) {
            p.x += 5.0;
        }
        let got = centerline_overlap(&warped, &reference, 2.0).unwrap();
        assert_eq!(got, overlap_oracle(&warped, &reference, 2.0));
        assert_eq!(got.precision, 0.5);
    }

    proptest! {
        #[test]
        fn overlap_is_permutation_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pts = |n: usize| -> Vec<Vec3> {
                (0..n).map(|_| Vec3::new(rng.random_range(0.0..6.0), rng.random_range(0.0..6.0), rng.random_range(0.0..6.0))).collect()
            };
            let a = pts(25);
            let b = pts(30);
            let base = centerline_overlap(&a, &b, 2.0).unwrap();
            let mut ar = a.clone();
            ar.reverse();
            let mut br = b.clone();
            br.rotate_left(7);
            prop_assert_eq!(centerline_overlap(&ar, &br, 2.0).unwrap(), base);
            let pr = base.precision + base.recall;
            let harmonic = if pr > 0.0 { 2.0 * base.precision * base.recall / pr } else { 0.0 };
            prop_assert!((base.f1 - harmonic).abs() < 1e-12);
        }

        #[test]
        fn cosine_invariant_under_common_rotation(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rand_rot = |rng: &mut ChaCha8Rng| {
                let axis = nalgebra::Unit::new_normalize(Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..1.0)));
                nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-3.0..3.0))
            };
            let mut w = Vec::new();
            let mut r = Vec::new();
            for _ in 0..9 {
                let a = rand_rot(&mut rng);
                let b = rand_rot(&mut rng);
                w.push(FrameAxes { origin: Vec3::zeros(), u: a * Vec3::x(), v: a * Vec3::y() });
                r.push(FrameAxes { origin: Vec3::zeros(), u: b * Vec3::x(), v: b * Vec3::y() });
            }
            let g = rand_rot(&mut rng);
            let rot = |s: &[FrameAxes]| s.iter().map(|f| FrameAxes { origin: f.origin, u: g * f.u, v: g * f.v }).collect::<Vec<_>>();
            let a = plane_cosine(&w, &r).unwrap();
            let b = plane_cosine(&rot(&w), &rot(&r)).unwrap();
            prop_assert!((a.cos_u - b.cos_u).abs() < 1e-12 && (a.cos_v - b.cos_v).abs() < 1e-12);
        }
    }
}
