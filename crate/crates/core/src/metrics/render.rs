use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::ScalarVolume;

/// Grayscale image, row-major with `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[x + self.width * y]
    }
}

/// Orthographic camera in voxel index space. Rays run along `forward`; the
/// image plane is spanned by `right` and `up` and centered on the volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub forward: [f64; 3],
    pub right: [f64; 3],
    pub up: [f64; 3],
    pub width: usize,
    pub height: usize,
    pub pixel_spacing: f64,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    a.map(|v| v / n)
}

impl Camera {
    /// Looks down `+z` with one pixel per voxel column.
    pub fn axis_aligned(dims: [usize; 3]) -> Self {
        Camera {
            forward: [0.0, 0.0, 1.0],
            right: [1.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            width: dims[0],
            height: dims[1],
            pixel_spacing: 1.0,
        }
    }

    /// Camera along `direction` whose image covers the whole volume from
    /// any angle.
    pub fn looking_along(direction: [f64; 3], dims: [usize; 3], width: usize, height: usize) -> Self {
        let forward = normalized(direction);
        let helper = if forward[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let right = normalized(cross(helper, forward));
        let up = cross(forward, right);
        let diag = dims.iter().map(|&d| ((d - 1) as f64).powi(2)).sum::<f64>().sqrt();
        let span = (width.min(height).max(2) - 1) as f64;
        Camera {
            forward,
            right,
            up,
            width,
            height,
            pixel_spacing: (diag / span).max(f64::MIN_POSITIVE),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub num_views: usize,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            width: 64,
            height: 64,
            num_views: 5,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.num_views == 0 {
            return Err(Error::Config("render width, height and num_views must be positive".into()));
        }
        Ok(())
    }

    /// Viewing directions drawn uniformly on the sphere from the seeded stream.
    pub fn cameras(&self, dims: [usize; 3]) -> Vec<Camera> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.num_views)
            .map(|_| {
                let dir = loop {
                    let d: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                    if dot(d, d) > 1e-12 {
                        break d;
                    }
                };
                Camera::looking_along(dir, dims, self.width, self.height)
            })
            .collect()
    }
}

/// Maximum-intensity projection. Each ray samples the trilinear field every
/// half voxel; rays that miss the volume take the volume minimum.
pub fn render_mip(vol: &ScalarVolume, camera: &Camera) -> Image {
    let d = vol.dims();
    let (vmin, _) = vol.min_max();
    let center: [f64; 3] = std::array::from_fn(|a| (d[a] - 1) as f64 / 2.0);
    let f = camera.forward;
    let depth = dot(center, f);
    // parameter range covering every corner's projection onto the ray axis
    let (mut tlo, mut thi) = (f64::INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let c: [f64; 3] = std::array::from_fn(|a| if corner >> a & 1 == 1 { (d[a] - 1) as f64 } else { 0.0 });
        let t = dot(c, f);
        tlo = tlo.min(t);
        thi = thi.max(t);
    }
    let k0 = (tlo * 2.0).floor() as i64;
    let k1 = (thi * 2.0).ceil() as i64;
    let tol = 1e-9;
    let mut pixels = vec![vmin as f64; camera.width * camera.height];
    for j in 0..camera.height {
        let v = (j as f64 - (camera.height - 1) as f64 / 2.0) * camera.pixel_spacing;
        for i in 0..camera.width {
            let u = (i as f64 - (camera.width - 1) as f64 / 2.0) * camera.pixel_spacing;
            // ray base in the plane through the origin perpendicular to forward
            let base: [f64; 3] = std::array::from_fn(|a| {
                center[a] + u * camera.right[a] + v * camera.up[a] - depth * f[a]
            });
            let mut best = f64::NEG_INFINITY;
            for k in k0..=k1 {
                let t = k as f64 * 0.5;
                let p: [f64; 3] = std::array::from_fn(|a| base[a] + t * f[a]);
                if (0..3).all(|a| p[a] >= -tol && p[a] <= (d[a] - 1) as f64 + tol) {
                    best = best.max(vol.sample_index(p));
                }
            }
            if best.is_finite() {
                pixels[i + camera.width * j] = best;
            }
        }
    }
    Image {
        width: camera.width,
        height: camera.height,
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridSpec;

    #[test]
    fn constant_volume_renders_constant_image() {
        let vol = ScalarVolume::constant(GridSpec::unit([6, 7, 8]).unwrap(), 2.5).unwrap();
        let cfg = RenderConfig { width: 16, height: 12, ..Default::default() };
        for cam in cfg.cameras(vol.dims()) {
            let img = render_mip(&vol, &cam);
            assert!(img.pixels.iter().all(|&p| p == 2.5));
        }
    }

    #[test]
    fn hot_voxel_projects_to_one_pixel() {
        let vol = ScalarVolume::from_fn(GridSpec::unit([8, 8, 8]).unwrap(), |x, y, z| {
            if (x, y, z) == (2, 5, 3) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let img = render_mip(&vol, &Camera::axis_aligned(vol.dims()));
        for y in 0..8 {
            for x in 0..8 {
                let e = if (x, y) == (2, 5) { 1.0 } else { 0.0 };
                assert_eq!(img.get(x, y), e);
            }
        }
    }

    #[test]
    fn axis_aligned_view_gives_column_maxima() {
        let vol = ScalarVolume::from_fn(GridSpec::unit([6, 5, 4]).unwrap(), |x, y, z| {
            (x as f32) * 0.5 + ((y * 3 + z * 7) % 5) as f32
        })
        .unwrap();
        let img = render_mip(&vol, &Camera::axis_aligned(vol.dims()));
        for y in 0..5 {
            for x in 0..6 {
                let e = (0..4).map(|z| vol.get(x, y, z) as f64).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(img.get(x, y), e);
            }
        }
    }

    #[test]
    fn cameras_are_deterministic_and_orthonormal() {
        let cfg = RenderConfig::default();
        let a = cfg.cameras([8, 8, 8]);
        assert_eq!(a.len(), 5);
        assert_eq!(a, cfg.cameras([8, 8, 8]));
        for c in &a {
            assert!((dot(c.forward, c.forward) - 1.0).abs() < 1e-12);
            assert!(dot(c.forward, c.right).abs() < 1e-12);
            assert!(dot(c.forward, c.up).abs() < 1e-12);
            assert!(dot(c.right, c.up).abs() < 1e-12);
        }
    }
}
