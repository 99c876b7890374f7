//! Synthetic vessel volumes with landmark labels, and simulated pullbacks
//! taken through them along a known warp.

mod pullback;

pub use pullback::{simulate_pullback, GroundTruth, GuidewireConfig, IntensityMap, Pullback, PullbackConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::error::{Error, Result};
use crate::features::{FeatureClass, LabelMap, LANDMARKS};
use crate::geometry::{
    angular_distance, resample_centerline, rotation_minimizing_frames, Centerline, PolarConfig, Vec3, Volume3,
};

/// Spacing of the dense polyline the centerline is framed on before
/// resampling.
const DENSE_STEP: f64 = 0.05;
/// Extra space (mm) around the vessel beyond the polar field of view.
const MARGIN: f64 = 2.0;
/// Label rules accept arc positions this far past a structure's ends.
const LABEL_TOL: f64 = 1e-9;
/// Radii checked across the wall when deciding whether a branch opens it.
const WALL_PROBES: usize = 8;

/// Shape of the main vessel centerline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenterlineShape {
    Line {
        length_mm: f64,
    },
    Helix {
        radius_mm: f64,
        pitch_mm: f64,
        length_mm: f64,
    },
    /// Uniform Catmull-Rom spline through the control points (mm).
    Spline {
        control_points: Vec<[f64; 3]>,
    },
}

/// Lumen radius varying linearly with arc length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumenRadius {
    pub start_mm: f64,
    pub end_mm: f64,
}

impl LumenRadius {
    pub fn at(&self, s: f64, length: f64) -> f64 {
        let w = (s / length).clamp(0.0, 1.0);
        self.start_mm * (1.0 - w) + self.end_mm * w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TissueIntensities {
    pub lumen: f64,
    pub wall: f64,
    pub background: f64,
}

impl Default for TissueIntensities {
    fn default() -> Self {
        Self { lumen: 1.0, wall: 0.35, background: 0.1 }
    }
}

/// Side branch leaving the main vessel at arc position `arc_mm`, pointing
/// towards in-plane angle `angle` of the local frame and tilted `tilt` rad
/// away from the tangent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub arc_mm: f64,
    pub angle: f64,
    pub radius_mm: f64,
    #[serde(default = "default_branch_length")]
    pub length_mm: f64,
    #[serde(default = "default_tilt")]
    pub tilt: f64,
}

fn default_branch_length() -> f64 {
    8.0
}

fn default_tilt() -> f64 {
    FRAC_PI_2
}

/// Hyperintense plaque filling the wall over an arc interval and an angular
/// sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalcificationSpec {
    pub arc_start_mm: f64,
    pub arc_end_mm: f64,
    pub angle: f64,
    pub width: f64,
    /// Intensity added on top of the wall.
    pub boost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shape: CenterlineShape,
    pub lumen_radius: LumenRadius,
    pub wall_thickness_mm: f64,
    #[serde(default)]
    pub intensities: TissueIntensities,
    #[serde(default)]
    pub branches: Vec<BranchSpec>,
    #[serde(default)]
    pub calcifications: Vec<CalcificationSpec>,
    pub voxel_spacing_mm: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            shape: CenterlineShape::Line { length_mm: 30.0 },
            lumen_radius: LumenRadius { start_mm: 1.5, end_mm: 1.3 },
            wall_thickness_mm: 0.7,
            intensities: TissueIntensities::default(),
            branches: Vec::new(),
            calcifications: Vec::new(),
            voxel_spacing_mm: 0.25,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    fn validate_shape(&self) -> Result<()> {
        let r = self.lumen_radius;
        if !(r.start_mm > 0.0 && r.end_mm > 0.0) {
            return Err(Error::invalid("lumen radius must be positive"));
        }
        if !(self.wall_thickness_mm > 0.0) || !(self.voxel_spacing_mm > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("wall thickness and voxel spacing must be positive, noise non-negative"));
        }
        for b in &self.branches {
            if !(b.radius_mm > 0.0 && b.length_mm > 0.0) || !(b.tilt > 0.0 && b.tilt < std::f64::consts::PI) {
                return Err(Error::invalid("branch radius and length must be positive, tilt in (0, π)"));
            }
        }
        for c in &self.calcifications {
            if !(c.arc_end_mm > c.arc_start_mm) || !(c.width > 0.0 && c.width < TAU) || !c.boost.is_finite() {
                return Err(Error::invalid("calcification needs a non-empty arc interval and a width in (0, 2π)"));
            }
        }
        match &self.shape {
            CenterlineShape::Line { length_mm } if *length_mm > 0.0 => Ok(()),
            CenterlineShape::Helix { radius_mm, pitch_mm, length_mm }
                if *radius_mm >= 0.0 && *pitch_mm > 0.0 && *length_mm > 0.0 =>
            {
                Ok(())
            }
            CenterlineShape::Spline { control_points } if control_points.len() >= 2 => Ok(()),
            _ => Err(Error::invalid("centerline shape parameters out of range")),
        }
    }
}

/// A generated phantom: volume, centerline resampled at `dz`, and the
/// bifurcation/calcification labels at every centerline node (θ bins in the
/// node frames).
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: Volume3,
    pub centerline: Centerline,
    pub labels: LabelMap,
}

impl Phantom {
    /// The same phantom with its centerline traversed end to start. Node
    /// frames become `(u, −v, −t)`, so angular bin `i` maps to `−i`.
    pub fn reversed(&self) -> Self {
        let nt = self.labels.n_theta;
        let nz = self.labels.n_z;
        let mut labels = LabelMap::empty(self.labels.classes.clone(), nt, nz);
        for &class in &self.labels.classes {
            for j in 0..nz {
                for i in 0..nt {
                    labels.set(class, (nt - i) % nt, nz - 1 - j, self.labels.get(class, i, j));
                }
            }
        }
        Self { volume: self.volume.clone(), centerline: self.centerline.reversed(), labels }
    }
}

fn dense_path(shape: &CenterlineShape) -> Vec<Vec3> {
    match shape {
        CenterlineShape::Line { length_mm } => {
            let n = (length_mm / DENSE_STEP).ceil() as usize;
            (0..=n).map(|i| Vec3::new(0.0, 0.0, length_mm * i as f64 / n as f64)).collect()
        }
        CenterlineShape::Helix { radius_mm, pitch_mm, length_mm } => {
            let c = pitch_mm / TAU;
            let speed = (radius_mm * radius_mm + c * c).sqrt();
            let total = length_mm / speed;
            let n = (length_mm / DENSE_STEP).ceil() as usize;
            (0..=n)
                .map(|i| {
                    let phi = total * i as f64 / n as f64;
                    Vec3::new(radius_mm * phi.cos(), radius_mm * phi.sin(), c * phi)
                })
                .collect()
        }
        CenterlineShape::Spline { control_points } => {
            let cp: Vec<Vec3> = control_points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect();
            let m = cp.len();
            let at = |i: isize| cp[i.clamp(0, m as isize - 1) as usize];
            let mut out = vec![cp[0]];
            for seg in 0..m - 1 {
                let (p0, p1, p2, p3) =
                    (at(seg as isize - 1), at(seg as isize), at(seg as isize + 1), at(seg as isize + 2));
                let steps = ((p2 - p1).norm() / DENSE_STEP).ceil().max(1.0) as usize;
                for k in 1..=steps {
                    let t = k as f64 / steps as f64;
                    let (t2, t3) = (t * t, t * t * t);
                    let q = (p1 * 2.0
                        + (p2 - p0) * t
                        + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * t2
                        + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * t3)
                        * 0.5;
                    out.push(q);
                }
            }
            out
        }
    }
}

/// Linear ramp of width `w` centered on the boundary: 1 well inside
/// (`x > w/2`), 0 well outside. Softens voxelization of sharp edges.
fn ramp(x: f64, w: f64) -> f64 {
    (0.5 + x / w).clamp(0.0, 1.0)
}

fn segment_distance(x: &Vec3, a: &Vec3, b: &Vec3) -> (f64, f64) {
    let d = b - a;
    let t = ((x - a).dot(&d) / d.dot(&d)).clamp(0.0, 1.0);
    ((x - (a + d * t)).norm(), t)
}

struct Branch {
    start: Vec3,
    end: Vec3,
    radius: f64,
}

struct Scene<'a> {
    spec: &'a PhantomSpec,
    c: &'a Centerline,
    branches: Vec<Branch>,
    calcs: Vec<CalcificationSpec>,
    edge: f64,
    /// Beyond this distance from the centerline only branches matter.
    reach: f64,
}

impl Scene<'_> {
    fn radius(&self, s: f64) -> f64 {
        self.spec.lumen_radius.at(s, self.c.length())
    }

    fn intensity(&self, x: &Vec3, candidates: &[usize]) -> f64 {
        let it = &self.spec.intensities;
        let wall = self.spec.wall_thickness_mm;
        let pts = self.c.points();
        let arcs = self.c.arc_length();
        let mut best = (f64::INFINITY, 0.0);
        for &k in candidates {
            let (d, t) = segment_distance(x, &pts[k], &pts[k + 1]);
            if d < best.0 {
                best = (d, arcs[k] + t * (arcs[k + 1] - arcs[k]));
            }
        }
        let (mut lumen, mut outer, mut calc) = (0.0f64, 0.0f64, 0.0f64);
        if best.0 <= self.reach {
            let s = best.1;
            let smp = self.c.sample(s);
            let d = x - smp.point;
            let r = d.norm();
            let rad = self.radius(s);
            lumen = ramp(rad - r, self.edge);
            outer = ramp(rad + wall - r, self.edge);
            if r > 0.0 {
                let theta = d.dot(&smp.frame.v).atan2(d.dot(&smp.frame.u));
                for cs in &self.calcs {
                    let along = ramp(s - cs.arc_start_mm, self.edge).min(ramp(cs.arc_end_mm - s, self.edge));
                    let across = ramp(r * (0.5 * cs.width - angular_distance(theta, cs.angle)), self.edge);
                    let radial = ramp(r - rad, self.edge).min(outer);
                    calc = calc.max(along.min(across).min(radial) * cs.boost);
                }
            }
        }
        for b in &self.branches {
            let (d, _) = segment_distance(x, &b.start, &b.end);
            lumen = lumen.max(ramp(b.radius - d, self.edge));
            outer = outer.max(ramp(b.radius + wall - d, self.edge));
        }
        it.background + (it.wall - it.background) * outer + (it.lumen - it.wall) * lumen + calc * (1.0 - lumen)
    }
}

/// Builds the phantom volume and its node labels.
///
/// Labels at node `j` and angular bin `i` (angle `θ_i` in the node frame):
/// - calcification: the node's arc position lies in the plaque's arc
///   interval and `θ_i` lies within half the plaque width of its center;
/// - bifurcation: the ray in direction `θ_i` stays inside a branch lumen
///   across the whole wall thickness, i.e. the branch opens the wall there.
///
/// Fails when a structure receives no label bin, or when the structures
/// labelled at one node together cover more than the full circumference.
pub fn generate_phantom(spec: &PhantomSpec, polar: &PolarConfig) -> Result<Phantom> {
    spec.validate_shape()?;
    polar.validate()?;
    let dense = dense_path(&spec.shape);
    let framed = rotation_minimizing_frames(&dense)?;
    let raw = resample_centerline(&framed, polar.dz)?;
    let length = raw.length();
    for b in &spec.branches {
        if !(0.0..=length).contains(&b.arc_mm) {
            return Err(Error::invalid(format!(
                "branch at {} mm lies outside the centerline [0, {length:.3}]",
                b.arc_mm
            )));
        }
    }
    for c in &spec.calcifications {
        if c.arc_start_mm < 0.0 || c.arc_end_mm > length {
            return Err(Error::invalid(format!(
                "calcification [{}, {}] mm lies outside the centerline [0, {length:.3}]",
                c.arc_start_mm, c.arc_end_mm
            )));
        }
    }

    let r_max = spec.lumen_radius.start_mm.max(spec.lumen_radius.end_mm);
    let fov = r_max.max(polar.n_r as f64 * polar.dr) + spec.wall_thickness_mm + MARGIN;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut extend = |p: &Vec3, pad: f64| {
        lo = lo.inf(&(p - Vec3::repeat(pad)));
        hi = hi.sup(&(p + Vec3::repeat(pad)));
    };
    for p in raw.points() {
        extend(p, fov);
    }
    let mut branches = Vec::new();
    for b in &spec.branches {
        let smp = raw.sample(b.arc_mm);
        let f = smp.frame;
        let radial = f.u * b.angle.cos() + f.v * b.angle.sin();
        let dir = f.t * b.tilt.cos() + radial * b.tilt.sin();
        let end = smp.point + dir * b.length_mm;
        extend(&end, b.radius_mm + spec.wall_thickness_mm + MARGIN);
        branches.push(Branch { start: smp.point, end, radius: b.radius_mm });
    }
    // Snap the box to the voxel grid with the vessel shifted off the origin.
    let h = spec.voxel_spacing_mm;
    let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / h).ceil() as usize + 1);
    let origin = [lo.x, lo.y, lo.z];

    let scene = Scene {
        spec,
        c: &raw,
        branches,
        calcs: spec.calcifications.clone(),
        edge: h,
        reach: r_max + spec.wall_thickness_mm + h,
    };
    let pts = raw.points();
    let [nx, ny, nz] = dims;
    let mut data = vec![0.0f32; nx * ny * nz];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, slab)| {
        let z = origin[2] + k as f64 * h;
        let pad = scene.reach + h;
        let near_z: Vec<usize> = (0..pts.len() - 1)
            .filter(|&i| z >= pts[i].z.min(pts[i + 1].z) - pad && z <= pts[i].z.max(pts[i + 1].z) + pad)
            .collect();
        let mut near = Vec::with_capacity(near_z.len());
        for j in 0..ny {
            let y = origin[1] + j as f64 * h;
            near.clear();
            near.extend(
                near_z
                    .iter()
                    .copied()
                    .filter(|&i| y >= pts[i].y.min(pts[i + 1].y) - pad && y <= pts[i].y.max(pts[i + 1].y) + pad),
            );
            for i in 0..nx {
                let x = Vec3::new(origin[0] + i as f64 * h, y, z);
                slab[i + nx * j] = scene.intensity(&x, &near) as f32;
            }
        }
    });
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in data.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }
    let volume = Volume3::new(dims, [h; 3], origin, data)?;
    let labels = node_labels(spec, &raw, &scene.branches, polar.n_theta)?;
    Ok(Phantom { volume, centerline: raw, labels })
}

fn node_labels(spec: &PhantomSpec, c: &Centerline, branches: &[Branch], n_theta: usize) -> Result<LabelMap> {
    let mut labels = LabelMap::empty(LANDMARKS.to_vec(), n_theta, c.len());
    let step = TAU / n_theta as f64;
    let mut hits_b = vec![0usize; branches.len()];
    let mut hits_c = vec![0usize; spec.calcifications.len()];
    for (j, (&s, (p, f))) in c.arc_length().iter().zip(c.points().iter().zip(c.frames())).enumerate() {
        let r_in = spec.lumen_radius.at(s, c.length());
        let mut covered = 0;
        for i in 0..n_theta {
            let theta = i as f64 * step;
            let dir = f.u * theta.cos() + f.v * theta.sin();
            let through_wall = |b: &Branch| {
                (0..=WALL_PROBES).all(|m| {
                    let r = r_in + spec.wall_thickness_mm * m as f64 / WALL_PROBES as f64;
                    segment_distance(&(p + dir * r), &b.start, &b.end).0 < b.radius
                })
            };
            for (k, b) in branches.iter().enumerate() {
                if through_wall(b) {
                    labels.set(FeatureClass::Bifurcation, i, j, true);
                    hits_b[k] += 1;
                    covered += 1;
                }
            }
            for (k, cs) in spec.calcifications.iter().enumerate() {
                let along = s >= cs.arc_start_mm - LABEL_TOL && s <= cs.arc_end_mm + LABEL_TOL;
                if along && angular_distance(theta, cs.angle) <= 0.5 * cs.width + LABEL_TOL {
                    labels.set(FeatureClass::Calcification, i, j, true);
                    hits_c[k] += 1;
                    covered += 1;
                }
            }
        }
        if covered > n_theta {
            return Err(Error::OverlappingStructures { slice: j });
        }
    }
    if let Some(k) = hits_b.iter().position(|&h| h == 0) {
        return Err(Error::invalid(format!("branch {k} does not open through the wall at any node")));
    }
    if let Some(k) = hits_c.iter().position(|&h| h == 0) {
        return Err(Error::invalid(format!("calcification {k} covers no node and angular bin")));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polar_transform;
    use std::f64::consts::PI;

    fn plain(length: f64) -> PhantomSpec {
        PhantomSpec { shape: CenterlineShape::Line { length_mm: length }, ..Default::default() }
    }

    #[test]
    fn plain_tube_is_rotationally_symmetric() {
        let cfg = PolarConfig::default();
        let ph = generate_phantom(&plain(12.0), &cfg).unwrap();
        let img = polar_transform(&ph.volume, &ph.centerline, &cfg).unwrap();
        // Near the edges the voxel values follow a radial ramp of slope at
        // most (lumen − wall)/h; a trilinear interpolant of an L-Lipschitz
        // function is within L·h·√3/2 of it.
        let h = 0.25;
        let bound = 2.0 * (1.0 - 0.35) / h * h * 3f64.sqrt() / 2.0;
        for p in 2..img.n_z - 2 {
            for r in 0..cfg.n_r {
                let col: Vec<f64> = (0..cfg.n_theta).map(|t| img.get(r, t, p)).collect();
                let (lo, hi) = col.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
                assert!(hi - lo <= bound, "slice {p} radius {r}: spread {}", hi - lo);
            }
        }
        // Away from the lumen/wall edges the profile is flat to rounding.
        let mid = |r: f64| (r / cfg.dr - 0.5).round() as usize;
        for r in [mid(0.5), mid(4.2)] {
            let col: Vec<f64> = (0..cfg.n_theta).map(|t| img.get(r, t, 10)).collect();
            assert!(col.iter().all(|&x| (x - col[0]).abs() < 1e-6), "{col:?}");
        }
        assert_eq!(ph.labels.count(FeatureClass::Bifurcation), 0);
        assert_eq!(ph.labels.count(FeatureClass::Calcification), 0);
    }

    #[test]
    fn calcification_labels_cover_exactly_its_bins() {
        let cfg = PolarConfig::default();
        let spec = PhantomSpec {
            calcifications: vec![CalcificationSpec {
                arc_start_mm: 10.0,
                arc_end_mm: 12.0,
                angle: PI / 2.0,
                width: PI / 8.0,
                boost: 1.65,
            }],
            ..plain(20.0)
        };
        let ph = generate_phantom(&spec, &cfg).unwrap();
        let arcs = ph.centerline.arc_length();
        for j in 0..ph.centerline.len() {
            for i in 0..cfg.n_theta {
                let expect = (10.0 - 1e-9..=12.0 + 1e-9).contains(&arcs[j]) && (11..=13).contains(&i);
                assert_eq!(ph.labels.get(FeatureClass::Calcification, i, j), expect, "node {j} bin {i}");
            }
        }
        // The plaque is the brightest tissue in its bins.
        let img = polar_transform(&ph.volume, &ph.centerline, &cfg).unwrap();
        let j = (11.0 / cfg.dz).round() as usize;
        let peak = |t: usize| img.profile(t, j).iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak(12) > 1.8 && peak(0) < 1.01, "{} {}", peak(12), peak(0));
    }

    #[test]
    fn branch_opens_the_wall_where_labelled() {
        let cfg = PolarConfig::default();
        let spec = PhantomSpec {
            branches: vec![BranchSpec { arc_mm: 9.0, angle: PI, radius_mm: 1.0, length_mm: 8.0, tilt: FRAC_PI_2 }],
            ..plain(18.0)
        };
        let ph = generate_phantom(&spec, &cfg).unwrap();
        let img = polar_transform(&ph.volume, &ph.centerline, &cfg).unwrap();
        let labels = &ph.labels;
        assert!(labels.count(FeatureClass::Bifurcation) > 0);
        for j in 0..ph.centerline.len() {
            for i in 0..cfg.n_theta {
                if labels.get(FeatureClass::Bifurcation, i, j) {
                    // Labelled rays stay near the branch direction and slice.
                    let s = ph.centerline.arc_length()[j];
                    assert!((s - 9.0).abs() < 1.0 + 1e-9);
                    assert!(angular_distance(cfg.angle(i), PI) < PI / 2.0);
                }
            }
        }
        // Along the branch axis the lumen runs out to the edge of the field.
        let j = (9.0 / cfg.dz).round() as usize;
        let prof = img.profile(24, j);
        assert!(prof.iter().all(|&x| x > 0.9), "{prof:?}");
        assert!(img.profile(0, j)[cfg.n_r - 1] < 0.2);
    }

    #[test]
    fn seeds_control_the_noise() {
        let cfg = PolarConfig::default();
        let spec = PhantomSpec { noise_sigma: 0.05, seed: 3, ..plain(6.0) };
        let a = generate_phantom(&spec, &cfg).unwrap();
        let b = generate_phantom(&spec, &cfg).unwrap();
        let c = generate_phantom(&PhantomSpec { seed: 4, ..spec.clone() }, &cfg).unwrap();
        let bytes = |v: &Volume3| v.data().iter().flat_map(|x| x.to_le_bytes()).collect::<Vec<u8>>();
        assert_eq!(bytes(&a.volume), bytes(&b.volume));
        assert_ne!(bytes(&a.volume), bytes(&c.volume));
    }

    #[test]
    fn full_circumference_overlap_is_rejected() {
        let cfg = PolarConfig::default();
        let calc = CalcificationSpec { arc_start_mm: 3.0, arc_end_mm: 4.0, angle: 0.0, width: 1.2 * PI, boost: 1.0 };
        let spec = PhantomSpec { calcifications: vec![calc, CalcificationSpec { angle: PI, ..calc }], ..plain(8.0) };
        assert!(matches!(generate_phantom(&spec, &cfg), Err(Error::OverlappingStructures { .. })));
    }

    #[test]
    fn helix_and_spline_shapes_have_requested_extent() {
        let cfg = PolarConfig::default();
        let helix = PhantomSpec {
            shape: CenterlineShape::Helix { radius_mm: 3.0, pitch_mm: 30.0, length_mm: 15.0 },
            voxel_spacing_mm: 0.5,
            ..Default::default()
        };
        let ph = generate_phantom(&helix, &cfg).unwrap();
        assert!((ph.centerline.length() - 15.0).abs() < 1e-3);
        let spline = PhantomSpec {
            shape: CenterlineShape::Spline { control_points: vec![[0.0, 0.0, 0.0], [1.0, 0.5, 5.0], [0.0, 1.0, 10.0]] },
            voxel_spacing_mm: 0.5,
            ..Default::default()
        };
        let ph = generate_phantom(&spline, &cfg).unwrap();
        let pts = ph.centerline.points();
        assert!(ph.centerline.length() > 10.0);
        for p in pts {
            assert!(ph.volume.contains(p));
        }
    }
}
