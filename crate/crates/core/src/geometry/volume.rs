use super::Vec3;
use crate::error::{Error, Result};

/// Scalar intensity grid with physical spacing.
///
/// Voxel `(i, j, k)` sits at `origin + (i·sx, j·sy, k·sz)` and is stored at
/// flat index `i + nx·(j + ny·k)` (x varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("volume dims must all be >= 2, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid(format!("volume spacing must be positive, got {spacing:?}")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::invalid("volume origin must be finite"));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::Shape(format!("volume data has {} values, dims {dims:?} need {n}", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("volume data contains non-finite values"));
        }
        Ok(Self { dims, spacing, origin, data })
    }

    /// Volume whose voxel values are `f(world position)`.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        mut f: impl FnMut(Vec3) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = Vec3::new(
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    );
                    data.push(f(p) as f32);
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn voxel_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        Vec3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Upper corner of the sampled region (center of the last voxel).
    pub fn extent_max(&self) -> Vec3 {
        Vec3::new(
            self.origin[0] + (self.dims[0] - 1) as f64 * self.spacing[0],
            self.origin[1] + (self.dims[1] - 1) as f64 * self.spacing[1],
            self.origin[2] + (self.dims[2] - 1) as f64 * self.spacing[2],
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| {
            let c = (p[a] - self.origin[a]) / self.spacing[a];
            c >= 0.0 && c <= (self.dims[a] - 1) as f64
        })
    }

    /// Trilinear value and its gradient (per mm) at `p`. Points outside the
    /// voxel-center box return `(0, 0)`. The caller guarantees `p` is finite.
    #[inline]
    pub(crate) fn sample_unchecked(&self, p: &Vec3) -> (f64, Vec3) {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let c = (p[a] - self.origin[a]) / self.spacing[a];
            let hi = (self.dims[a] - 1) as f64;
            if !(c >= 0.0 && c <= hi) {
                return (0.0, Vec3::zeros());
            }
            let i0 = (c.floor() as usize).min(self.dims[a] - 2);
            base[a] = i0;
            frac[a] = c - i0 as f64;
        }
        let [fx, fy, fz] = frac;
        let nx = self.dims[0];
        let nxy = nx * self.dims[1];
        let i000 = base[0] + nx * base[1] + nxy * base[2];
        let d = &self.data;
        let c000 = d[i000] as f64;
        let c100 = d[i000 + 1] as f64;
        let c010 = d[i000 + nx] as f64;
        let c110 = d[i000 + nx + 1] as f64;
        let c001 = d[i000 + nxy] as f64;
        let c101 = d[i000 + nxy + 1] as f64;
        let c011 = d[i000 + nxy + nx] as f64;
        let c111 = d[i000 + nxy + nx + 1] as f64;

        // Interpolate along x first.
        let c00 = c000 + fx * (c100 - c000);
        let c10 = c010 + fx * (c110 - c010);
        let c01 = c001 + fx * (c101 - c001);
        let c11 = c011 + fx * (c111 - c011);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        let value = c0 + fz * (c1 - c0);

        let dx = {
            let e00 = c100 - c000;
            let e10 = c110 - c010;
            let e01 = c101 - c001;
            let e11 = c111 - c011;
            let e0 = e00 + fy * (e10 - e00);
            let e1 = e01 + fy * (e11 - e01);
            e0 + fz * (e1 - e0)
        };
        let dy = {
            let e0 = c10 - c00;
            let e1 = c11 - c01;
            e0 + fz * (e1 - e0)
        };
        let dz = c1 - c0;
        let grad = Vec3::new(dx / self.spacing[0], dy / self.spacing[1], dz / self.spacing[2]);
        (value, grad)
    }
}

/// Trilinear interpolation of `v` at world position `p` (mm) with the
/// analytic gradient of the interpolant. Outside the voxel-center box the
/// fill value is 0 with zero gradient.
pub fn trilinear_sample(v: &Volume3, p: Vec3) -> Result<(f64, Vec3)> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(Error::NonFinitePosition([p.x, p.y, p.z]));
    }
    Ok(v.sample_unchecked(&p))
}
