use serde::{Deserialize, Serialize};

use super::TransformParams;
use crate::error::{Error, Result};
use crate::features::LabelMap;
use crate::geometry::{sample_polar, Centerline, FrameAxes, PolarConfig, PolarImage, Vec3, Volume3};

/// Arc positions this far outside `[0, L]` still count as inside.
const EXTENT_TOL: f64 = 1e-9;

/// World-space origin and in-plane axes of every warped frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpedGeometry {
    pub axes: Vec<FrameAxes>,
    /// Arc position (mm) of each frame on the centerline, after clamping.
    pub arc_positions: Vec<f64>,
    /// Nominal pullback depth (mm) of each frame.
    pub z_positions: Vec<f64>,
}

impl WarpedGeometry {
    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    pub fn origins(&self) -> Vec<Vec3> {
        self.axes.iter().map(|a| a.origin).collect()
    }
}

/// One warped frame with the derivatives needed by the sampler Jacobian.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FrameWarp {
    pub axes: FrameAxes,
    /// Unclamped arc position.
    pub arc_raw: f64,
    pub arc: f64,
    pub inside: bool,
    /// ∂arc/∂s_z and ∂arc/∂t_z.
    pub da_ds: f64,
    pub da_dt: f64,
    /// Derivatives of the centerline point and of (u', v') in arc length;
    /// zero when the arc position is clamped.
    pub d_point: Vec3,
    pub d_u: Vec3,
    pub d_v: Vec3,
}

/// Unclamped arc position of a frame at nominal depth `z`, with its
/// derivatives in `s_z` and `t_z`.
pub(crate) fn arc_position(params: &TransformParams, z: f64, length: f64) -> (f64, f64, f64) {
    let zeta = params.s_z.abs() * z + params.t_z;
    if params.s_z >= 0.0 {
        (zeta, z, 1.0)
    } else {
        // a = L − (−s_z·z + t_z) = L + s_z·z − t_z.
        (length - zeta, z, -1.0)
    }
}

pub(crate) fn frame_warp(params: &TransformParams, c: &Centerline, p: usize, frame_spacing: f64) -> FrameWarp {
    let length = c.length();
    let z = p as f64 * frame_spacing;
    let (arc_raw, da_ds, da_dt) = arc_position(params, z, length);
    let inside = arc_raw >= -EXTENT_TOL && arc_raw <= length + EXTENT_TOL;
    let arc = arc_raw.clamp(0.0, length);
    let smp = c.sample(arc);
    let sign = if params.flip_v { -1.0 } else { 1.0 };
    let (u, v) = (smp.frame.u, smp.frame.v * sign);
    let (s, co) = params.theta[p].sin_cos();
    let u_rot = u * co + v * s;
    let v_rot = v * co - u * s;
    let origin = smp.point + u_rot * params.t_u[p] + v_rot * params.t_v[p];

    let (d_point, d_u, d_v) = if inside && arc_raw > 0.0 && arc_raw < length {
        let dv = smp.d_v * sign;
        (smp.d_point, smp.d_u * co + dv * s, dv * co - smp.d_u * s)
    } else {
        (Vec3::zeros(), Vec3::zeros(), Vec3::zeros())
    };
    FrameWarp { axes: FrameAxes { origin, u: u_rot, v: v_rot }, arc_raw, arc, inside, da_ds, da_dt, d_point, d_u, d_v }
}

fn check_shapes(params: &TransformParams, n_frames: usize, frame_spacing: f64) -> Result<()> {
    if params.n_frames() != n_frames || params.t_u.len() != n_frames || params.t_v.len() != n_frames {
        return Err(Error::Shape(format!("transform has {} frames, pullback has {n_frames}", params.n_frames())));
    }
    if !(frame_spacing > 0.0) {
        return Err(Error::invalid("frame spacing must be positive"));
    }
    if params.to_vec().iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("transform parameters must be finite"));
    }
    Ok(())
}

fn assemble(warps: &[FrameWarp], frame_spacing: f64) -> WarpedGeometry {
    WarpedGeometry {
        axes: warps.iter().map(|w| w.axes).collect(),
        arc_positions: warps.iter().map(|w| w.arc).collect(),
        z_positions: (0..warps.len()).map(|p| p as f64 * frame_spacing).collect(),
    }
}

/// Warped frame geometry. Every frame must map inside the centerline's arc
/// extent, otherwise the offending frames are reported.
pub fn warp_geometry(
    params: &TransformParams,
    c: &Centerline,
    n_frames: usize,
    frame_spacing: f64,
) -> Result<WarpedGeometry> {
    check_shapes(params, n_frames, frame_spacing)?;
    let warps: Vec<FrameWarp> = (0..n_frames).map(|p| frame_warp(params, c, p, frame_spacing)).collect();
    let outside: Vec<usize> = warps.iter().enumerate().filter(|(_, w)| !w.inside).map(|(p, _)| p).collect();
    if !outside.is_empty() {
        return Err(Error::OutOfExtent { frames: outside, length: c.length() });
    }
    Ok(assemble(&warps, frame_spacing))
}

/// As [`warp_geometry`], with out-of-extent frames clamped to the nearest
/// centerline end. Shapes are assumed valid.
pub fn warp_geometry_clamped(
    params: &TransformParams,
    c: &Centerline,
    n_frames: usize,
    frame_spacing: f64,
) -> WarpedGeometry {
    let warps: Vec<FrameWarp> = (0..n_frames).map(|p| frame_warp(params, c, p, frame_spacing)).collect();
    assemble(&warps, frame_spacing)
}

/// Polar sampling of `vol` over warped frames; identical to
/// [`crate::geometry::polar_transform`] for the identity warp on a
/// centerline resampled at the frame spacing.
pub fn sample_warped(vol: &Volume3, g: &WarpedGeometry, cfg: &PolarConfig) -> Result<PolarImage> {
    sample_polar(vol, &g.axes, g.z_positions.clone(), cfg)
}

/// Warped polar image together with what is needed to pull image-space
/// gradients back to the transform parameters.
#[derive(Debug, Clone)]
pub struct WarpedSampling {
    pub image: PolarImage,
    /// Volume gradient (per mm) at every sample, image layout.
    gradients: Vec<Vec3>,
    frames: Vec<FrameWarp>,
    translations: Vec<(f64, f64)>,
    offsets: Vec<(f64, f64)>,
}

/// Samples with clamped geometry and records per-sample volume gradients.
pub fn sample_warped_with_jacobian(
    vol: &Volume3,
    params: &TransformParams,
    c: &Centerline,
    frame_spacing: f64,
    cfg: &PolarConfig,
) -> Result<WarpedSampling> {
    cfg.validate()?;
    let n_frames = params.n_frames();
    check_shapes(params, n_frames, frame_spacing)?;
    let frames: Vec<FrameWarp> = (0..n_frames).map(|p| frame_warp(params, c, p, frame_spacing)).collect();
    let offsets = cfg.offsets();
    let mut data = Vec::with_capacity(offsets.len() * n_frames);
    let mut gradients = Vec::with_capacity(offsets.len() * n_frames);
    for fw in &frames {
        let ax = &fw.axes;
        for &(a, b) in &offsets {
            let x = ax.origin + ax.u * a + ax.v * b;
            let (val, g) = vol.sample_unchecked(&x);
            data.push(val);
            gradients.push(g);
        }
    }
    let z = (0..n_frames).map(|p| p as f64 * frame_spacing).collect();
    let image = PolarImage::new(*cfg, z, data)?;
    let translations = params.t_u.iter().copied().zip(params.t_v.iter().copied()).collect();
    Ok(WarpedSampling { image, gradients, frames, translations, offsets })
}

impl WarpedSampling {
    pub fn geometry(&self) -> WarpedGeometry {
        let spacing = if self.image.n_z > 1 { self.image.z_positions[1] } else { 0.0 };
        assemble(&self.frames, spacing)
    }

    /// Frames whose unclamped arc position lies outside the centerline.
    pub fn out_of_extent(&self) -> Vec<usize> {
        self.frames.iter().enumerate().filter(|(_, f)| !f.inside).map(|(p, _)| p).collect()
    }

    /// Σ_p (a_p − clamp(a_p))² and its gradient in `s_z`, `t_z`.
    pub fn extent_penalty(&self) -> (f64, f64, f64) {
        let mut value = 0.0;
        let (mut ds, mut dt) = (0.0, 0.0);
        for f in &self.frames {
            let d = f.arc_raw - f.arc;
            if d != 0.0 {
                value += d * d;
                ds += 2.0 * d * f.da_ds;
                dt += 2.0 * d * f.da_dt;
            }
        }
        (value, ds, dt)
    }

    /// Nonzero partial derivatives of sample `index` (image layout) as
    /// `(flat parameter index, ∂value/∂param)`.
    pub fn sample_partials(&self, params: &TransformParams, index: usize) -> [(usize, f64); 5] {
        let per_frame = self.offsets.len();
        let p = index / per_frame;
        let k = index % per_frame;
        let d = self.partials(p, k);
        [(0, d[0]), (1, d[1]), (params.theta_index(p), d[2]), (params.t_u_index(p), d[3]), (params.t_v_index(p), d[4])]
    }

    /// `[∂/∂s_z, ∂/∂t_z, ∂/∂θ_p, ∂/∂t_u,p, ∂/∂t_v,p]` of sample `k` of frame `p`.
    #[inline]
    fn partials(&self, p: usize, k: usize) -> [f64; 5] {
        let f = &self.frames[p];
        let g = self.gradients[p * self.offsets.len() + k];
        let (ca, cb) = self.offsets[k];
        let (u, v) = (f.axes.u, f.axes.v);
        let gu = g.dot(&u);
        let gv = g.dot(&v);
        // Sample X = c(a) + A·u' + B·v', A = t_u + r cos φ, B = t_v + r sin φ,
        // and ∂u'/∂θ = v', ∂v'/∂θ = −u'.
        let (tu, tv) = self.translations[p];
        let (a_coef, b_coef) = (tu + ca, tv + cb);
        let d_theta = a_coef * gv - b_coef * gu;
        let dx_da = f.d_point + f.d_u * a_coef + f.d_v * b_coef;
        let d_arc = g.dot(&dx_da);
        [d_arc * f.da_ds, d_arc * f.da_dt, d_theta, gu, gv]
    }

    /// Pulls `upstream = ∂L/∂image` back to the flat parameter layout.
    pub fn vjp(&self, params: &TransformParams, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.gradients.len() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, image has {}",
                upstream.len(),
                self.gradients.len()
            )));
        }
        let mut out = vec![0.0; params.len()];
        let per_frame = self.offsets.len();
        for p in 0..self.frames.len() {
            let (mut s, mut t, mut th, mut tu, mut tv) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for k in 0..per_frame {
                let w = upstream[p * per_frame + k];
                if w == 0.0 {
                    continue;
                }
                let d = self.partials(p, k);
                s += w * d[0];
                t += w * d[1];
                th += w * d[2];
                tu += w * d[3];
                tv += w * d[4];
            }
            out[0] += s;
            out[1] += t;
            out[params.theta_index(p)] += th;
            out[params.t_u_index(p)] += tu;
            out[params.t_v_index(p)] += tv;
        }
        Ok(out)
    }
}

/// Carries per-node landmark labels of `c` (θ bins in the node frames) to
/// the warped pullback frames: frame `p` takes the labels of the node
/// nearest to its arc position, read at the angle its bin `i` points to in
/// that node's frame. Frames outside the centerline receive no labels.
pub fn transport_labels(
    node_labels: &LabelMap,
    c: &Centerline,
    params: &TransformParams,
    frame_spacing: f64,
) -> Result<LabelMap> {
    if node_labels.n_z != c.len() {
        return Err(Error::Shape(format!("labels cover {} nodes, centerline has {}", node_labels.n_z, c.len())));
    }
    let nt = node_labels.n_theta;
    let n_frames = params.n_frames();
    check_shapes(params, n_frames, frame_spacing)?;
    let mut out = LabelMap::empty(node_labels.classes.clone(), nt, n_frames);
    let step = std::f64::consts::TAU / nt as f64;
    let length = c.length();
    for p in 0..n_frames {
        let (arc, _, _) = arc_position(params, p as f64 * frame_spacing, length);
        if arc < -EXTENT_TOL || arc > length + EXTENT_TOL {
            continue;
        }
        let node = c.nearest_node(arc);
        for i in 0..nt {
            let mut psi = i as f64 * step + params.theta[p];
            if params.flip_v {
                psi = -psi;
            }
            let src = ((psi / step).round() as i64).rem_euclid(nt as i64) as usize;
            for &class in &node_labels.classes {
                if node_labels.get(class, src, node) {
                    out.set(class, i, p, true);
                }
            }
        }
    }
    Ok(out)
}
