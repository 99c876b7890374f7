use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use crate::error::{Error, Result};
use crate::features::{FeatureClass, LabelMap};
use crate::geometry::{angular_distance, sample_polar, Centerline, PolarConfig, PolarImage, Volume3};
use crate::registration::{transport_labels, warp_geometry, TransformParams, WarpedGeometry};

/// Radial thickness (mm) of the bright guidewire reflection.
const REFLECTION_MM: f64 = 0.15;

/// Monotone intensity remap `gain · sign(x)|x|^gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityMap {
    pub gain: f64,
    pub gamma: f64,
}

impl IntensityMap {
    pub const IDENTITY: Self = Self { gain: 1.0, gamma: 1.0 };

    pub fn apply(&self, x: f64) -> f64 {
        if self.gamma == 1.0 {
            return self.gain * x;
        }
        self.gain * x.signum() * x.abs().powf(self.gamma)
    }
}

impl Default for IntensityMap {
    fn default() -> Self {
        Self { gain: 1.0, gamma: 0.8 }
    }
}

/// Guidewire sector: centered at `angle + drift · sin(2π p / (n − 1))` in
/// frame `p`, `width` rad wide. Along each ray of the sector the image is
/// kept up to `radius_mm`, set to `brightness` over a thin reflection, and
/// zero beyond (the acoustic shadow).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidewireConfig {
    pub angle: f64,
    pub width: f64,
    #[serde(default)]
    pub drift: f64,
    pub radius_mm: f64,
    pub brightness: f64,
}

impl Default for GuidewireConfig {
    fn default() -> Self {
        Self { angle: 0.0, width: std::f64::consts::PI / 6.0, drift: 0.15, radius_mm: 0.9, brightness: 1.6 }
    }
}

impl GuidewireConfig {
    pub fn center(&self, p: usize, n_frames: usize) -> f64 {
        let phase = if n_frames > 1 { p as f64 / (n_frames - 1) as f64 } else { 0.0 };
        self.angle + self.drift * (TAU * phase).sin()
    }

    /// Whether angular bin `i` of frame `p` lies in the sector.
    pub fn covers(&self, i: usize, p: usize, n_frames: usize, polar: &PolarConfig) -> bool {
        angular_distance(polar.angle(i), self.center(p, n_frames)) <= 0.5 * self.width + 1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PullbackConfig {
    pub n_frames: usize,
    pub frame_spacing: f64,
    #[serde(default)]
    pub guidewire: Option<GuidewireConfig>,
    /// Standard deviation of the log of the multiplicative speckle.
    #[serde(default)]
    pub speckle_sigma: f64,
    #[serde(default)]
    pub intensity_map: IntensityMap,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PullbackConfig {
    fn default() -> Self {
        Self {
            n_frames: 100,
            frame_spacing: 0.3,
            guidewire: Some(GuidewireConfig::default()),
            speckle_sigma: 0.15,
            intensity_map: IntensityMap::default(),
            seed: 0,
        }
    }
}

impl PullbackConfig {
    /// Identity modality: no remap, speckle or guidewire.
    pub fn plain(n_frames: usize, frame_spacing: f64) -> Self {
        Self {
            n_frames,
            frame_spacing,
            guidewire: None,
            speckle_sigma: 0.0,
            intensity_map: IntensityMap::IDENTITY,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 16 {
            return Err(Error::invalid(format!("a pullback needs at least 16 frames, got {}", self.n_frames)));
        }
        if !(self.frame_spacing > 0.0) || !(self.speckle_sigma >= 0.0) {
            return Err(Error::invalid("frame spacing must be positive and speckle non-negative"));
        }
        let m = &self.intensity_map;
        if !(m.gain > 0.0 && m.gamma > 0.0) {
            return Err(Error::invalid("intensity map must be increasing (gain, gamma > 0)"));
        }
        if let Some(g) = &self.guidewire {
            if !(g.width > 0.0 && g.width < FRAC_PI_2) || !(g.radius_mm >= 0.0) || !g.drift.is_finite() {
                return Err(Error::invalid("guidewire width must lie in (0, π/2) and its radius be non-negative"));
            }
        }
        Ok(())
    }
}

/// Reference standard for one pullback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: TransformParams,
    /// Guidewire, bifurcation and calcification labels per `(θ, frame)`.
    pub labels: LabelMap,
    /// Origins and in-plane axes of the pullback frames in volume space.
    pub reference: WarpedGeometry,
}

#[derive(Debug, Clone)]
pub struct Pullback {
    pub image: PolarImage,
    pub truth: GroundTruth,
}

/// Simulates a pullback through `vol` along `c` warped by `gt`.
///
/// The volume is sampled on the warped frames, remapped by the intensity
/// map, multiplied by log-normal speckle with unit mean, and overwritten
/// inside the guidewire sector. Landmark labels are carried from the
/// centerline nodes to the frames; guidewire labels mark exactly the sector.
pub fn simulate_pullback(
    vol: &Volume3,
    c: &Centerline,
    node_labels: &LabelMap,
    gt: &TransformParams,
    pcfg: &PullbackConfig,
    polar: &PolarConfig,
) -> Result<Pullback> {
    pcfg.validate()?;
    polar.validate()?;
    if node_labels.n_theta != polar.n_theta {
        return Err(Error::Shape("node labels and polar grid disagree on the angular bins".into()));
    }
    let n = pcfg.n_frames;
    let geometry = warp_geometry(gt, c, n, pcfg.frame_spacing)?;

    let offsets = polar.offsets();
    let outside: Vec<usize> = geometry
        .axes
        .iter()
        .enumerate()
        .filter(|(_, ax)| offsets.iter().all(|&(a, b)| !vol.contains(&(ax.origin + ax.u * a + ax.v * b))))
        .map(|(p, _)| p)
        .collect();
    if !outside.is_empty() {
        return Err(Error::OutsideVolume(outside));
    }

    let mut image = sample_polar(vol, &geometry.axes, geometry.z_positions.clone(), polar)?;
    let map = pcfg.intensity_map;
    if map != IntensityMap::IDENTITY {
        image.data.iter_mut().for_each(|x| *x = map.apply(*x));
    }
    if pcfg.speckle_sigma > 0.0 {
        let s = pcfg.speckle_sigma;
        let mut rng = ChaCha8Rng::seed_from_u64(pcfg.seed);
        for x in image.data.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *x *= (s * g - 0.5 * s * s).exp();
        }
    }

    let mut classes = vec![FeatureClass::Guidewire];
    classes.extend(node_labels.classes.iter().copied());
    let moved = transport_labels(node_labels, c, gt, pcfg.frame_spacing)?;
    let mut labels = LabelMap::empty(classes, polar.n_theta, n);
    for p in 0..n {
        for i in 0..polar.n_theta {
            for &class in &moved.classes {
                labels.set(class, i, p, moved.get(class, i, p));
            }
        }
    }
    if let Some(gw) = &pcfg.guidewire {
        for p in 0..n {
            for i in 0..polar.n_theta {
                if !gw.covers(i, p, n, polar) {
                    continue;
                }
                labels.set(FeatureClass::Guidewire, i, p, true);
                for r in 0..polar.n_r {
                    let rad = polar.radius(r);
                    let k = image.index(r, i, p);
                    if rad >= gw.radius_mm + REFLECTION_MM {
                        image.data[k] = 0.0;
                    } else if rad >= gw.radius_mm {
                        image.data[k] = gw.brightness;
                    }
                }
            }
        }
    }
    Ok(Pullback { image, truth: GroundTruth { params: gt.clone(), labels, reference: geometry } })
}
