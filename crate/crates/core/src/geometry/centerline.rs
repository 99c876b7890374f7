use super::{Frame, Vec3};
use crate::error::{Error, Result};

const FRAME_TOL: f64 = 1e-9;
/// Interpolation weights this close to a node snap onto the node, so that
/// evaluating the centerline at its own arc positions is exact.
const NODE_SNAP: f64 = 1e-9;

/// Ordered 3D points with per-point orthonormal frames and cumulative arc
/// length (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct Centerline {
    points: Vec<Vec3>,
    frames: Vec<Frame>,
    arc_length: Vec<f64>,
}

/// Position and frame at a continuous arc length, with derivatives of each
/// with respect to arc length.
#[derive(Debug, Clone, Copy)]
pub struct CenterlineSample {
    pub point: Vec3,
    pub frame: Frame,
    pub d_point: Vec3,
    pub d_u: Vec3,
    pub d_v: Vec3,
}

impl Centerline {
    /// Builds a centerline with chord-length arc parametrization.
    pub fn new(points: Vec<Vec3>, frames: Vec<Frame>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateCenterline(format!("need at least 2 points, got {}", points.len())));
        }
        let mut arc = Vec::with_capacity(points.len());
        arc.push(0.0);
        for w in points.windows(2) {
            let d = (w[1] - w[0]).norm();
            arc.push(arc.last().unwrap() + d);
        }
        Self::with_arc_length(points, frames, arc)
    }

    /// Builds a centerline with an explicit arc parametrization (used when
    /// points were placed along a finer path).
    pub fn with_arc_length(points: Vec<Vec3>, frames: Vec<Frame>, arc_length: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegenerateCenterline(format!("need at least 2 points, got {}", points.len())));
        }
        if frames.len() != points.len() || arc_length.len() != points.len() {
            return Err(Error::Shape(format!(
                "{} points, {} frames, {} arc entries",
                points.len(),
                frames.len(),
                arc_length.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|x| x.is_finite())) {
            return Err(Error::invalid("centerline points must be finite"));
        }
        for (i, w) in points.windows(2).enumerate() {
            if (w[1] - w[0]).norm() <= 1e-12 {
                return Err(Error::DegenerateCenterline(format!("points {i} and {} coincide", i + 1)));
            }
        }
        if arc_length[0].abs() > 1e-12 || arc_length.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::DegenerateCenterline("arc length must start at 0 and increase strictly".into()));
        }
        if let Some(i) = frames.iter().position(|f| !f.is_orthonormal(FRAME_TOL)) {
            return Err(Error::invalid(format!("frame {i} is not orthonormal and right-handed")));
        }
        Ok(Self { points, frames, arc_length })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn arc_length(&self) -> &[f64] {
        &self.arc_length
    }

    /// Total arc length (mm).
    pub fn length(&self) -> f64 {
        *self.arc_length.last().unwrap()
    }

    /// Mean spacing between consecutive points.
    pub fn mean_spacing(&self) -> f64 {
        self.length() / (self.len() - 1) as f64
    }

    /// Same curve traversed end to start. Frames map `(u, v, t) → (u, −v, −t)`,
    /// which keeps them right-handed.
    pub fn reversed(&self) -> Self {
        let total = self.length();
        let points = self.points.iter().rev().copied().collect();
        let frames = self.frames.iter().rev().map(|f| Frame::new(f.u, -f.v, -f.t)).collect();
        let mut arc: Vec<f64> = self.arc_length.iter().rev().map(|s| total - s).collect();
        arc[0] = 0.0;
        Self { points, frames, arc_length: arc }
    }

    /// Rotates every frame about its tangent by the same angle.
    pub fn with_rotated_frames(&self, angle: f64) -> Self {
        Self {
            points: self.points.clone(),
            frames: self.frames.iter().map(|f| f.rotated(angle)).collect(),
            arc_length: self.arc_length.clone(),
        }
    }

    /// Segment index `k` and weight `w` such that `a` lies between nodes
    /// `k` and `k + 1`. `a` is clamped to the centerline extent.
    pub fn locate(&self, a: f64) -> (usize, f64) {
        let n = self.len();
        let a = a.clamp(0.0, self.length());
        let k = self.arc_length.partition_point(|&s| s <= a).saturating_sub(1).min(n - 2);
        let span = self.arc_length[k + 1] - self.arc_length[k];
        (k, ((a - self.arc_length[k]) / span).clamp(0.0, 1.0))
    }

    /// Index of the node nearest to arc length `a`.
    pub fn nearest_node(&self, a: f64) -> usize {
        let (k, w) = self.locate(a);
        if w < 0.5 {
            k
        } else {
            k + 1
        }
    }

    /// Point and frame at arc length `a` (clamped to the extent).
    ///
    /// Points interpolate linearly. Frames interpolate component-wise and are
    /// re-orthonormalized: the tangent is normalized, then the in-plane axis
    /// is built from `ũ + ṽ × t` projected onto the normal plane. Using both
    /// in-plane axes makes the result commute with a constant rotation of all
    /// input frames about their tangents.
    pub fn sample(&self, a: f64) -> CenterlineSample {
        let (k, w) = self.locate(a);
        let span = self.arc_length[k + 1] - self.arc_length[k];
        let (p0, p1) = (self.points[k], self.points[k + 1]);
        let (f0, f1) = (&self.frames[k], &self.frames[k + 1]);
        let d_point = (p1 - p0) / span;

        let tt = f0.t * (1.0 - w) + f1.t * w;
        let tt_norm = tt.norm();
        let t = tt / tt_norm;
        let ut = f0.u * (1.0 - w) + f1.u * w;
        let vt = f0.v * (1.0 - w) + f1.v * w;
        let q = ut + vt.cross(&t);
        let qp = q - t * q.dot(&t);
        let qp_norm = qp.norm();
        let u = qp / qp_norm;

        // Derivatives with respect to w, then scaled to arc length.
        let dtt = f1.t - f0.t;
        let dt = (dtt - t * t.dot(&dtt)) / tt_norm;
        let dq = (f1.u - f0.u) + (f1.v - f0.v).cross(&t) + vt.cross(&dt);
        let dqp = dq - t * (dq.dot(&t) + q.dot(&dt)) - dt * q.dot(&t);
        let du = (dqp - u * u.dot(&dqp)) / qp_norm;
        let dv = dt.cross(&u) + t.cross(&du);

        let (point, frame) = if w <= NODE_SNAP {
            (p0, *f0)
        } else if w >= 1.0 - NODE_SNAP {
            (p1, *f1)
        } else {
            (p0 * (1.0 - w) + p1 * w, Frame::new(u, t.cross(&u), t))
        };
        CenterlineSample { point, frame, d_point, d_u: du / span, d_v: dv / span }
    }
}

/// Resamples `c` at uniform arc-length `spacing`. New points lie on the
/// piecewise-linear path of `c`; both endpoints are kept, so only the final
/// gap may be shorter than `spacing`.
pub fn resample_centerline(c: &Centerline, spacing: f64) -> Result<Centerline> {
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(Error::invalid(format!("resampling spacing must be positive, got {spacing}")));
    }
    let total = c.length();
    if total < spacing {
        return Err(Error::DegenerateCenterline(format!(
            "length {total:.4} mm is shorter than the spacing {spacing} mm"
        )));
    }
    let mut arcs = Vec::new();
    let mut k = 0usize;
    loop {
        let s = k as f64 * spacing;
        if s >= total - 1e-9 {
            break;
        }
        arcs.push(s);
        k += 1;
    }
    arcs.push(total);
    let mut points = Vec::with_capacity(arcs.len());
    let mut frames = Vec::with_capacity(arcs.len());
    for &s in &arcs {
        let smp = c.sample(s);
        points.push(smp.point);
        frames.push(smp.frame);
    }
    Centerline::with_arc_length(points, frames, arcs)
}

/// Frames along `points` by double reflection (rotation-minimizing), starting
/// from the projection of a global axis onto the first normal plane. The x
/// axis is used unless it is nearly parallel to the first tangent, then y.
pub fn rotation_minimizing_frames(points: &[Vec3]) -> Result<Centerline> {
    rotation_minimizing_frames_with_reference(points, None)
}

/// As [`rotation_minimizing_frames`] with an explicit reference axis for the
/// first `u`.
pub fn rotation_minimizing_frames_with_reference(points: &[Vec3], reference: Option<Vec3>) -> Result<Centerline> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateCenterline(format!("need at least 2 points, got {n}")));
    }
    for (i, w) in points.windows(2).enumerate() {
        if (w[1] - w[0]).norm() <= 1e-12 {
            return Err(Error::DegenerateCenterline(format!("points {i} and {} coincide", i + 1)));
        }
    }
    let tangents: Vec<Vec3> = (0..n)
        .map(|i| {
            let d = if i == 0 {
                points[1] - points[0]
            } else if i == n - 1 {
                points[n - 1] - points[n - 2]
            } else {
                let d = points[i + 1] - points[i - 1];
                if d.norm() > 1e-12 {
                    d
                } else {
                    points[i + 1] - points[i]
                }
            };
            d.normalize()
        })
        .collect();

    let t0 = tangents[0];
    let axis = match reference {
        Some(r) if r.cross(&t0).norm() > 1e-6 => r.normalize(),
        Some(_) => return Err(Error::invalid("reference axis is parallel to the first tangent")),
        None => {
            if t0.x.abs() < 0.9 {
                Vec3::x()
            } else {
                Vec3::y()
            }
        }
    };
    let mut u = (axis - t0 * axis.dot(&t0)).normalize();
    let mut frames = Vec::with_capacity(n);
    frames.push(orthonormal_frame(u, t0));
    for i in 0..n - 1 {
        let v1 = points[i + 1] - points[i];
        let c1 = v1.dot(&v1);
        let r_l = u - v1 * (2.0 / c1 * v1.dot(&u));
        let t_l = tangents[i] - v1 * (2.0 / c1 * v1.dot(&tangents[i]));
        let v2 = tangents[i + 1] - t_l;
        let c2 = v2.dot(&v2);
        let r_next = if c2 > 1e-24 { r_l - v2 * (2.0 / c2 * v2.dot(&r_l)) } else { r_l };
        let f = orthonormal_frame(r_next, tangents[i + 1]);
        u = f.u;
        frames.push(f);
    }
    Centerline::new(points.to_vec(), frames)
}

fn orthonormal_frame(u_hint: Vec3, t: Vec3) -> Frame {
    let t = t.normalize();
    let u = (u_hint - t * u_hint.dot(&t)).normalize();
    Frame::new(u, t.cross(&u), t)
}
