//! Voxelization of scenes onto a regular grid.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Regular voxel grid. `dims` is `[depth, y, x]` to match the
/// time × line × trace layout of C-scans; `origin` is the `[x, y, z]`
/// corner of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub origin: [f64; 3],
    pub dims: [usize; 3],
    pub voxel: f64,
}

impl Region {
    /// The 0.4 × 0.4 × 0.26 m placement box at 2.5 mm resolution.
    pub fn placement() -> Self {
        Self {
            origin: [0.3, 0.3, 0.0],
            dims: [104, 160, 160],
            voxel: 0.0025,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) || !(self.voxel > 0.0) {
            return Err(Error::InvalidConfig("region dims and voxel size must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centre of voxel `(d, h, w)` as `[x, y, z]`.
    #[inline]
    pub fn center(&self, d: usize, h: usize, w: usize) -> [f64; 3] {
        [
            self.origin[0] + (w as f64 + 0.5) * self.voxel,
            self.origin[1] + (h as f64 + 0.5) * self.voxel,
            self.origin[2] + (d as f64 + 0.5) * self.voxel,
        ]
    }

    /// Index range of voxels whose centres may fall in `[lo, hi]` along
    /// coordinate `axis` (0 = x, 1 = y, 2 = z).
    fn span(&self, axis: usize, lo: f64, hi: f64) -> (usize, usize) {
        let extent = self.dims[2 - axis];
        let to_index = |v: f64| (v - self.origin[axis]) / self.voxel - 0.5;
        let a = libm::ceil(to_index(lo)).max(0.0);
        let b = (libm::floor(to_index(hi)) + 1.0).min(extent as f64);
        if b <= a {
            (0, 0)
        } else {
            (a as usize, b as usize)
        }
    }
}

/// Per-voxel object label: 0 for soil, `k + 1` for object `k`. Objects are
/// painted in list order, so later objects overwrite earlier ones.
pub fn label_raster(scene: &Scene, region: &Region) -> Vec<u8> {
    let [_, hh, ww] = region.dims;
    let mut labels = vec![0u8; region.len()];
    for (k, obj) in scene.objects.iter().enumerate() {
        let (lo, hi) = obj.bounding_box();
        let (x0, x1) = region.span(0, lo[0], hi[0]);
        let (y0, y1) = region.span(1, lo[1], hi[1]);
        let (z0, z1) = region.span(2, lo[2], hi[2]);
        for d in z0..z1 {
            for h in y0..y1 {
                for w in x0..x1 {
                    if obj.contains(region.center(d, h, w)) {
                        labels[(d * hh + h) * ww + w] = (k + 1) as u8;
                    }
                }
            }
        }
    }
    labels
}

/// Relative-permittivity map over `region` with `background` outside
/// objects.
pub fn rasterize_permittivity(scene: &Scene, region: &Region, background: f64) -> Result<Tensor<f64>> {
    region.validate()?;
    let labels = label_raster(scene, region);
    let eps: Vec<f64> = core::iter::once(background)
        .chain(scene.objects.iter().map(|o| o.epsilon_r))
        .collect();
    Tensor::from_vec(&region.dims, labels.iter().map(|&l| eps[l as usize]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::scene::{Shape, SubsurfaceObject};

    fn scene(objects: Vec<SubsurfaceObject>) -> Scene {
        Scene {
            objects,
            ..Scene::empty(4.0, 0)
        }
    }

    #[test]
    fn empty_scene_is_uniform() {
        let m = rasterize_permittivity(&scene(vec![]), &Region::placement(), 4.0).unwrap();
        assert!(m.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn sphere_volume_within_five_percent() {
        let r = 0.04;
        let s = scene(vec![SubsurfaceObject {
            shape: Shape::Sphere { radius: r },
            center: [0.5, 0.5, 0.13],
            epsilon_r: 12.0,
        }]);
        let region = Region::placement();
        let m = rasterize_permittivity(&s, &region, 4.0).unwrap();
        let count = m.data().iter().filter(|&&v| v == 12.0).count();
        let vol = count as f64 * region.voxel.powi(3);
        let exact = 4.0 / 3.0 * core::f64::consts::PI * r * r * r;
        assert!((vol - exact).abs() / exact < 0.05, "{vol} vs {exact}");
    }

    #[test]
    fn later_box_wins_overlap() {
        let b = |x: f64, e: f64| SubsurfaceObject {
            shape: Shape::Box { edges: [0.08, 0.08, 0.08], yaw: 0.0 },
            center: [x, 0.5, 0.1],
            epsilon_r: e,
        };
        let region = Region::placement();
        let m = rasterize_permittivity(&scene(vec![b(0.48, 9.0), b(0.52, 20.0)]), &region, 4.0).unwrap();
        // Voxel centred near (0.5, 0.5, 0.1) lies in both boxes.
        let (d, h, w) = (40usize, 80usize, 80usize);
        let c = region.center(d, h, w);
        assert!((c[0] - 0.50125).abs() < 1e-12);
        assert_eq!(m.data()[(d * 160 + h) * 160 + w], 20.0);
        assert!(m.data().iter().any(|&v| v == 9.0));
    }
}
