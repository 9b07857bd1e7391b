//! Subsurface scenes: soil plus a handful of parameterized objects.
//!
//! Coordinates are metres `[x, y, z]` with `x` along the survey lines,
//! `y` across them and `z` the depth below the ground surface (positive
//! downward).

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Finite cylinder along unit vector `axis`.
    Cylinder { radius: f64, length: f64, axis: [f64; 3] },
    Sphere { radius: f64 },
    /// Box with edge lengths `[ex, ey, ez]`, rotated by `yaw` radians about
    /// the vertical axis.
    Box { edges: [f64; 3], yaw: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsurfaceObject {
    pub shape: Shape,
    pub center: [f64; 3],
    pub epsilon_r: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl SubsurfaceObject {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let d = sub(p, self.center);
        match self.shape {
            Shape::Sphere { radius } => dot(d, d) <= radius * radius,
            Shape::Cylinder { radius, length, axis } => {
                let t = dot(d, axis);
                if libm::fabs(t) > length / 2.0 {
                    return false;
                }
                dot(d, d) - t * t <= radius * radius
            }
            Shape::Box { edges, yaw } => {
                let (s, c) = (libm::sin(yaw), libm::cos(yaw));
                let lx = c * d[0] + s * d[1];
                let ly = -s * d[0] + c * d[1];
                libm::fabs(lx) <= edges[0] / 2.0 && libm::fabs(ly) <= edges[1] / 2.0 && libm::fabs(d[2]) <= edges[2] / 2.0
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        let half = match self.shape {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Cylinder { radius, length, axis } => {
                let mut h = [0.0; 3];
                for (i, v) in h.iter_mut().enumerate() {
                    let a = axis[i];
                    *v = libm::fabs(a) * length / 2.0 + radius * libm::sqrt((1.0 - a * a).max(0.0));
                }
                h
            }
            Shape::Box { edges, yaw } => {
                let (s, c) = (libm::fabs(libm::sin(yaw)), libm::fabs(libm::cos(yaw)));
                [
                    c * edges[0] / 2.0 + s * edges[1] / 2.0,
                    s * edges[0] / 2.0 + c * edges[1] / 2.0,
                    edges[2] / 2.0,
                ]
            }
        };
        let c = self.center;
        (
            [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
            [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub soil_epsilon_r: f64,
    /// Recorded for completeness; the scattering model is lossless.
    pub soil_conductivity: f64,
    pub objects: Vec<SubsurfaceObject>,
    pub seed: u64,
}

impl Scene {
    pub fn empty(soil_epsilon_r: f64, seed: u64) -> Self {
        Self {
            soil_epsilon_r,
            soil_conductivity: 0.0,
            objects: Vec::new(),
            seed,
        }
    }
}

/// Closed interval `[lo, hi]`.
pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRanges {
    /// Inclusive bounds on objects per scene, within `0..=3`.
    pub object_count: [usize; 2],
    pub epsilon_r: Range,
    pub cylinder_radius: Range,
    pub cylinder_length: Range,
    pub sphere_radius: Range,
    pub box_edge: Range,
    /// Horizontal extent of object centres.
    pub center_x: Range,
    pub center_y: Range,
    pub center_depth: Range,
    pub soil_epsilon_r: f64,
    pub soil_conductivity: f64,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            object_count: [1, 2],
            epsilon_r: [8.0, 27.0],
            cylinder_radius: [0.02, 0.05],
            cylinder_length: [0.01, 0.33],
            sphere_radius: [0.02, 0.05],
            box_edge: [0.04, 0.1],
            center_x: [0.3, 0.7],
            center_y: [0.3, 0.7],
            center_depth: [0.04, 0.22],
            soil_epsilon_r: 4.0,
            soil_conductivity: 0.0,
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("epsilon_r", self.epsilon_r),
            ("cylinder_radius", self.cylinder_radius),
            ("cylinder_length", self.cylinder_length),
            ("sphere_radius", self.sphere_radius),
            ("box_edge", self.box_edge),
        ];
        let places = [("center_x", self.center_x), ("center_y", self.center_y), ("center_depth", self.center_depth)];
        for (name, [lo, hi]) in sizes.into_iter().chain(places) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidConfig(format!("scene.{name} must be a finite [lo, hi] with lo <= hi")));
            }
        }
        for (name, [lo, _]) in sizes {
            if lo <= 0.0 {
                return Err(Error::InvalidConfig(format!("scene.{name} must be positive")));
            }
        }
        let [lo, hi] = self.object_count;
        if lo > hi || hi > 3 {
            return Err(Error::InvalidConfig("scene.object_count must satisfy lo <= hi <= 3".into()));
        }
        if self.center_depth[0] < 0.0 {
            return Err(Error::InvalidConfig("scene.center_depth must be below the surface".into()));
        }
        if !(self.soil_epsilon_r >= 1.0) {
            return Err(Error::InvalidConfig("scene.soil_epsilon_r must be >= 1".into()));
        }
        if !(self.soil_conductivity >= 0.0) {
            return Err(Error::InvalidConfig("scene.soil_conductivity must be >= 0".into()));
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: Range) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = libm::sqrt((1.0 - z * z).max(0.0));
    [r * libm::cos(phi), r * libm::sin(phi), z]
}

pub fn sample_object<R: Rng + ?Sized>(rng: &mut R, ranges: &SceneRanges) -> SubsurfaceObject {
    let shape = match rng.random_range(0..3u8) {
        0 => Shape::Cylinder {
            radius: draw(rng, ranges.cylinder_radius),
            length: draw(rng, ranges.cylinder_length),
            axis: unit_vector(rng),
        },
        1 => Shape::Sphere {
            radius: draw(rng, ranges.sphere_radius),
        },
        _ => Shape::Box {
            edges: [draw(rng, ranges.box_edge), draw(rng, ranges.box_edge), draw(rng, ranges.box_edge)],
            yaw: rng.random_range(0.0..PI),
        },
    };
    let center = [draw(rng, ranges.center_x), draw(rng, ranges.center_y), draw(rng, ranges.center_depth)];
    SubsurfaceObject {
        shape,
        center,
        epsilon_r: draw(rng, ranges.epsilon_r),
    }
}

/// Draws a scene with `n_objects` objects (0 to 3).
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R, n_objects: usize, ranges: &SceneRanges, seed: u64) -> Result<Scene> {
    if n_objects > 3 {
        return Err(Error::InvalidConfig(format!("n_objects must be in 0..=3, got {n_objects}")));
    }
    let objects = (0..n_objects).map(|_| sample_object(rng, ranges)).collect();
    Ok(Scene {
        soil_epsilon_r: ranges.soil_epsilon_r,
        soil_conductivity: ranges.soil_conductivity,
        objects,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_and_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = SceneRanges::default();
        assert!(sample_scene(&mut rng, 0, &r, 0).unwrap().objects.is_empty());
        assert!(sample_scene(&mut rng, 4, &r, 0).is_err());
    }

    #[test]
    fn sampled_attributes_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = SceneRanges::default();
        for _ in 0..10_000 {
            let o = sample_object(&mut rng, &r);
            assert!((8.0..=27.0).contains(&o.epsilon_r));
            assert!((0.3..=0.7).contains(&o.center[0]) && (0.3..=0.7).contains(&o.center[1]));
            assert!((0.0..=0.26).contains(&o.center[2]));
            match o.shape {
                Shape::Sphere { radius } => assert!((0.02..=0.05).contains(&radius)),
                Shape::Cylinder { radius, length, axis } => {
                    assert!((0.02..=0.05).contains(&radius));
                    assert!((0.01..=0.33).contains(&length));
                    assert!((dot(axis, axis) - 1.0).abs() < 1e-12);
                }
                Shape::Box { edges, .. } => assert!(edges.iter().all(|e| (0.04..=0.1).contains(e))),
            }
        }
    }

    #[test]
    fn same_seed_same_scene() {
        let r = SceneRanges::default();
        let a = sample_scene(&mut ChaCha8Rng::seed_from_u64(9), 3, &r, 9).unwrap();
        let b = sample_scene(&mut ChaCha8Rng::seed_from_u64(9), 3, &r, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn box_membership_respects_yaw() {
        let o = SubsurfaceObject {
            shape: Shape::Box { edges: [0.2, 0.02, 0.02], yaw: PI / 2.0 },
            center: [0.5, 0.5, 0.1],
            epsilon_r: 9.0,
        };
        assert!(o.contains([0.5, 0.59, 0.1]));
        assert!(!o.contains([0.59, 0.5, 0.1]));
        let (lo, hi) = o.bounding_box();
        assert!((hi[1] - lo[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn cylinder_bounding_box_contains_surface_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = SceneRanges::default();
        for _ in 0..200 {
            let o = sample_object(&mut rng, &r);
            let (lo, hi) = o.bounding_box();
            for _ in 0..200 {
                let p = [
                    rng.random_range(lo[0] - 0.05..hi[0] + 0.05),
                    rng.random_range(lo[1] - 0.05..hi[1] + 0.05),
                    rng.random_range(lo[2] - 0.05..hi[2] + 0.05),
                ];
                if o.contains(p) {
                    assert!((0..3).all(|i| p[i] >= lo[i] - 1e-12 && p[i] <= hi[i] + 1e-12));
                }
            }
        }
    }
}
