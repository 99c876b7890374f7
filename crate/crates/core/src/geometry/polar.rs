use serde::{Deserialize, Serialize};

use super::{Centerline, Vec3, Volume3};
use crate::error::{Error, Result};

/// Cylindrical sampling grid: `n_r` radial samples `dr` apart, `n_theta`
/// equiangular directions, slices `dz` apart along the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolarConfig {
    pub n_r: usize,
    pub dr: f64,
    pub n_theta: usize,
    pub dz: f64,
}

impl Default for PolarConfig {
    fn default() -> Self {
        Self { n_r: 64, dr: 0.07, n_theta: 48, dz: 0.3 }
    }
}

impl PolarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_r < 2 || self.n_theta < 4 || !(self.dr > 0.0) || !(self.dz > 0.0) {
            return Err(Error::invalid(format!("invalid polar config {self:?}")));
        }
        Ok(())
    }

    /// Radius of radial bin `i`: bin centers, so the axis itself is never
    /// sampled.
    #[inline]
    pub fn radius(&self, i_r: usize) -> f64 {
        (i_r as f64 + 0.5) * self.dr
    }

    #[inline]
    pub fn angle(&self, i_theta: usize) -> f64 {
        std::f64::consts::TAU * i_theta as f64 / self.n_theta as f64
    }

    pub fn angle_step(&self) -> f64 {
        std::f64::consts::TAU / self.n_theta as f64
    }

    /// `(r cos φ, r sin φ)` for every (radial, angular) pair, r fastest.
    pub(crate) fn offsets(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.n_r * self.n_theta);
        for i_t in 0..self.n_theta {
            let (s, c) = self.angle(i_t).sin_cos();
            for i_r in 0..self.n_r {
                let r = self.radius(i_r);
                out.push((r * c, r * s));
            }
        }
        out
    }
}

/// `(n_r × n_theta × n_z)` samples in cylindrical coordinates. Sample
/// `(i_r, i_θ, p)` is stored at `i_r + n_r·(i_θ + n_theta·p)`, so radial
/// profiles are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarImage {
    pub config: PolarConfig,
    pub n_z: usize,
    pub z_positions: Vec<f64>,
    pub data: Vec<f64>,
}

impl PolarImage {
    pub fn new(config: PolarConfig, z_positions: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let n_z = z_positions.len();
        if data.len() != config.n_r * config.n_theta * n_z {
            return Err(Error::Shape(format!(
                "polar data has {} values, expected {}x{}x{}",
                data.len(),
                config.n_r,
                config.n_theta,
                n_z
            )));
        }
        if z_positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("polar z positions must increase"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("polar data contains non-finite values"));
        }
        Ok(Self { config, n_z, z_positions, data })
    }

    #[inline]
    pub fn index(&self, i_r: usize, i_theta: usize, p: usize) -> usize {
        i_r + self.config.n_r * (i_theta + self.config.n_theta * p)
    }

    pub fn get(&self, i_r: usize, i_theta: usize, p: usize) -> f64 {
        self.data[self.index(i_r, i_theta, p)]
    }

    /// Radial profile at `(i_θ, p)`.
    pub fn profile(&self, i_theta: usize, p: usize) -> &[f64] {
        let start = self.index(0, i_theta, p);
        &self.data[start..start + self.config.n_r]
    }

    pub fn n_profiles(&self) -> usize {
        self.config.n_theta * self.n_z
    }
}

/// World-space origin and in-plane axes of one cross-section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAxes {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
}

/// Samples `vol` on the polar grid around each cross-section: sample
/// `(i_r, i_θ, p)` is taken at `origin_p + r cos φ · u_p + r sin φ · v_p`.
pub fn sample_polar(vol: &Volume3, axes: &[FrameAxes], z_positions: Vec<f64>, cfg: &PolarConfig) -> Result<PolarImage> {
    cfg.validate()?;
    if axes.len() != z_positions.len() {
        return Err(Error::Shape(format!("{} cross-sections, {} z positions", axes.len(), z_positions.len())));
    }
    let offsets = cfg.offsets();
    let mut data = Vec::with_capacity(offsets.len() * axes.len());
    for ax in axes {
        if !finite(&ax.origin) || !finite(&ax.u) || !finite(&ax.v) {
            return Err(Error::NonFinitePosition([ax.origin.x, ax.origin.y, ax.origin.z]));
        }
        for &(a, b) in &offsets {
            let x = ax.origin + ax.u * a + ax.v * b;
            data.push(vol.sample_unchecked(&x).0);
        }
    }
    PolarImage::new(*cfg, z_positions, data)
}

/// Polar transform of `v` along the nodes of `c`, which must already be
/// resampled at `cfg.dz`.
pub fn polar_transform(v: &Volume3, c: &Centerline, cfg: &PolarConfig) -> Result<PolarImage> {
    cfg.validate()?;
    let arcs = c.arc_length();
    let n = arcs.len();
    if n > 2 && arcs[..n - 1].windows(2).any(|w| ((w[1] - w[0]) - cfg.dz).abs() > 1e-6) {
        return Err(Error::invalid(format!(
            "centerline must be resampled at dz = {} mm before the polar transform",
            cfg.dz
        )));
    }
    let axes: Vec<FrameAxes> =
        c.points().iter().zip(c.frames()).map(|(p, f)| FrameAxes { origin: *p, u: f.u, v: f.v }).collect();
    sample_polar(v, &axes, arcs.to_vec(), cfg)
}

fn finite(x: &Vec3) -> bool {
    x.iter().all(|c| c.is_finite())
}
