//! Volumes, framed centerlines and cylindrical resampling.

mod centerline;
mod polar;
mod volume;

pub use centerline::{
    resample_centerline, rotation_minimizing_frames, rotation_minimizing_frames_with_reference, Centerline,
    CenterlineSample,
};
pub use polar::{polar_transform, sample_polar, FrameAxes, PolarConfig, PolarImage};
pub use volume::{trilinear_sample, Volume3};

use serde::{Deserialize, Serialize};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Orthonormal right-handed triad attached to a centerline point.
///
/// `u` and `v` span the cross-sectional plane, `t` is the local tangent and
/// `u × v = t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub u: Vec3,
    pub v: Vec3,
    pub t: Vec3,
}

impl Frame {
    pub fn new(u: Vec3, v: Vec3, t: Vec3) -> Self {
        Self { u, v, t }
    }

    /// True when the triad is orthonormal and right-handed within `tol`.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let unit = |x: &Vec3| (x.norm() - 1.0).abs() <= tol;
        unit(&self.u)
            && unit(&self.v)
            && unit(&self.t)
            && self.u.dot(&self.v).abs() <= tol
            && self.u.dot(&self.t).abs() <= tol
            && self.v.dot(&self.t).abs() <= tol
            && (self.u.cross(&self.v).dot(&self.t) - 1.0).abs() <= tol
    }

    /// Rotates the in-plane axes by `angle` about the tangent:
    /// `u' = cos·u + sin·v`, `v' = −sin·u + cos·v`.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { u: self.u * c + self.v * s, v: self.v * c - self.u * s, t: self.t }
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Smallest absolute angular distance between two angles.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}
