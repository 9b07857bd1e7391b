//! Point-scatterer (Born) radar forward model.
//!
//! Every object voxel scatters the transmitted Ricker pulse once. A
//! scatterer at `p` adds `a * w(t - t0 - tau) / (R_tx + R_rx)` to the trace
//! recorded with antennas at `tx`, `rx`, where `tau = (R_tx + R_rx) / v`,
//! `v = c / sqrt(eps_soil)` and `a` is the normal-incidence reflection
//! coefficient scaled by the voxel's share of a wavelength cube.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::raster::{label_raster, Region};
use super::scene::Scene;
use crate::error::{Error, Result};
use crate::par::map_indices;
use crate::tensor::Tensor;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Ricker wavelet with peak 1 at `t = 0`.
pub fn ricker(f_c: f64, t: f64) -> f64 {
    let a = PI * PI * f_c * f_c * t * t;
    (1.0 - 2.0 * a) * libm::exp(-a)
}

/// Normal-incidence reflection coefficient from soil into an object.
pub fn reflection_coefficient(eps_soil: f64, eps_obj: f64) -> f64 {
    let (a, b) = (libm::sqrt(eps_soil), libm::sqrt(eps_obj));
    (a - b) / (a + b)
}

pub fn wave_speed(eps: f64) -> f64 {
    SPEED_OF_LIGHT / libm::sqrt(eps)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Transmitter → scatterer → receiver travel time at speed `v`.
pub fn two_way_time(tx: [f64; 3], rx: [f64; 3], p: [f64; 3], v: f64) -> f64 {
    (distance(tx, p) + distance(p, rx)) / v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurveyConfig {
    /// Soil box `[x, y, depth]` in metres.
    pub domain: [f64; 3],
    pub lines: usize,
    pub points_per_line: usize,
    /// Side of the square area covered by the survey grid, centred on the
    /// domain.
    pub aperture: f64,
    /// TX–RX separation along the trace axis.
    pub tx_rx_offset: f64,
    pub antenna_height: f64,
    pub center_frequency: f64,
    pub time_window: f64,
    pub time_samples: usize,
    /// Pulse delay; `None` means `1.5 / center_frequency`.
    pub source_delay: Option<f64>,
    /// Include the direct TX→RX coupling wave.
    pub direct_wave: bool,
    /// Include the specular air–soil reflection.
    pub ground_reflection: bool,
    pub scatterer_voxel: f64,
    pub max_scatterers_per_object: usize,
}

impl Default for SurveyConfig {
    fn default() -> Self {
        Self {
            domain: [1.0, 1.0, 0.26],
            lines: 12,
            points_per_line: 10,
            aperture: 0.4,
            tx_rx_offset: 0.10,
            antenna_height: 0.02,
            center_frequency: 1e9,
            time_window: 15e-9,
            time_samples: 256,
            source_delay: None,
            direct_wave: true,
            ground_reflection: true,
            scatterer_voxel: 0.0025,
            max_scatterers_per_object: 2000,
        }
    }
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("survey.aperture", self.aperture),
            ("survey.center_frequency", self.center_frequency),
            ("survey.time_window", self.time_window),
            ("survey.scatterer_voxel", self.scatterer_voxel),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(alloc::format!("{k} must be positive")));
            }
        }
        if self.domain.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidConfig("survey.domain must be positive".into()));
        }
        for (k, v) in [
            ("survey.lines", self.lines),
            ("survey.points_per_line", self.points_per_line),
            ("survey.time_samples", self.time_samples),
            ("survey.max_scatterers_per_object", self.max_scatterers_per_object),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(alloc::format!("{k} must be >= 1")));
            }
        }
        if !(self.tx_rx_offset >= 0.0 && self.tx_rx_offset < self.domain[0]) {
            return Err(Error::InvalidConfig("survey.tx_rx_offset must be in [0, domain width)".into()));
        }
        if !(self.antenna_height >= 0.0) {
            return Err(Error::InvalidConfig("survey.antenna_height must be >= 0".into()));
        }
        if let Some(d) = self.source_delay {
            if !(d >= 0.0) {
                return Err(Error::InvalidConfig("survey.source_delay must be >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn delay(&self) -> f64 {
        self.source_delay.unwrap_or(1.5 / self.center_frequency)
    }

    pub fn dt(&self) -> f64 {
        self.time_window / self.time_samples as f64
    }

    fn grid_coord(&self, center: f64, i: usize, n: usize) -> f64 {
        if n == 1 {
            center
        } else {
            center - self.aperture / 2.0 + self.aperture * i as f64 / (n - 1) as f64
        }
    }

    /// Midpoint `[x, y]` of trace `point` on line `line`.
    pub fn midpoint(&self, line: usize, point: usize) -> [f64; 2] {
        [
            self.grid_coord(self.domain[0] / 2.0, point, self.points_per_line),
            self.grid_coord(self.domain[1] / 2.0, line, self.lines),
        ]
    }

    /// `(tx, rx)` positions for a trace; antennas sit above ground, so `z`
    /// is negative.
    pub fn antennas(&self, line: usize, point: usize) -> ([f64; 3], [f64; 3]) {
        let [x, y] = self.midpoint(line, point);
        let h = -self.antenna_height;
        let o = self.tx_rx_offset / 2.0;
        ([x - o, y, h], [x + o, y, h])
    }

    /// Voxel grid scatterers are drawn from: the object placement box.
    pub fn scatter_region(&self) -> Region {
        let side = 0.4;
        let dims = |len: f64| libm::round(len / self.scatterer_voxel).max(1.0) as usize;
        Region {
            origin: [self.domain[0] / 2.0 - side / 2.0, self.domain[1] / 2.0 - side / 2.0, 0.0],
            dims: [dims(self.domain[2]), dims(side), dims(side)],
            voxel: self.scatterer_voxel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub amplitude: f64,
}

/// Stratified subsample of object voxels, at most
/// `max_scatterers_per_object` per object, each weighted by the number of
/// voxels it stands for.
pub fn scene_scatterers(scene: &Scene, survey: &SurveyConfig) -> Result<Vec<Scatterer>> {
    let region = survey.scatter_region();
    let labels = label_raster(scene, &region);
    let [_, hh, ww] = region.dims;
    let lambda = wave_speed(scene.soil_epsilon_r) / survey.center_frequency;
    let cell = libm::pow(region.voxel / lambda, 3.0);
    let mut out = Vec::new();
    for (k, obj) in scene.objects.iter().enumerate() {
        let label = (k + 1) as u8;
        let voxels: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == label).map(|(i, _)| i).collect();
        let n = voxels.len();
        if n == 0 {
            continue;
        }
        let keep = n.min(survey.max_scatterers_per_object);
        let weight = n as f64 / keep as f64;
        let a = reflection_coefficient(scene.soil_epsilon_r, obj.epsilon_r) * weight * cell;
        for i in 0..keep {
            let idx = voxels[((2 * i + 1) * n) / (2 * keep)];
            let (d, rem) = (idx / (hh * ww), idx % (hh * ww));
            out.push(Scatterer {
                position: region.center(d, rem / ww, rem % ww),
                amplitude: a,
            });
        }
    }
    if out.is_empty() && !scene.objects.is_empty() {
        return Err(Error::Degenerate("objects occupy no scatterer voxels".into()));
    }
    Ok(out)
}

/// Adds `amp * w(t - arrival)` into `trace`, touching only samples where
/// the wavelet window `|t| < 1.5 / f_c` is non-negligible.
fn add_wavelet(trace: &mut [f64], dt: f64, f_c: f64, arrival: f64, amp: f64) {
    let half = 1.5 / f_c;
    let first = libm::ceil((arrival - half) / dt).max(0.0) as usize;
    let last = libm::floor((arrival + half) / dt);
    if last < 0.0 {
        return;
    }
    let last = (last as usize).min(trace.len().saturating_sub(1));
    for (k, v) in trace.iter_mut().enumerate().take(last + 1).skip(first) {
        *v += amp * ricker(f_c, k as f64 * dt - arrival);
    }
}

/// Scattered field of explicit point scatterers, `time × line × point`.
pub fn forward_model_points(points: &[Scatterer], survey: &SurveyConfig, soil_epsilon_r: f64) -> Result<Tensor<f64>> {
    survey.validate()?;
    let (nl, np, nt) = (survey.lines, survey.points_per_line, survey.time_samples);
    let v = wave_speed(soil_epsilon_r);
    let (dt, f_c, t0) = (survey.dt(), survey.center_frequency, survey.delay());
    let traces = map_indices(nl * np, |i| {
        let (tx, rx) = survey.antennas(i / np, i % np);
        let mut trace = alloc::vec![0.0; nt];
        for s in points {
            let path = distance(tx, s.position) + distance(s.position, rx);
            add_wavelet(&mut trace, dt, f_c, t0 + path / v, s.amplitude / path);
        }
        trace
    });
    Ok(Tensor::from_fn(&[nt, nl, np], |idx| traces[idx % (nl * np)][idx / (nl * np)]))
}

/// Noise-free scattered field of a scene's objects.
pub fn forward_model(scene: &Scene, survey: &SurveyConfig) -> Result<Tensor<f64>> {
    let points = scene_scatterers(scene, survey)?;
    forward_model_points(&points, survey, scene.soil_epsilon_r)
}

/// Raw recording: scattered field plus the trace-invariant direct
/// coupling and ground reflection, which preprocessing removes.
pub fn acquire(scene: &Scene, survey: &SurveyConfig) -> Result<Tensor<f64>> {
    let mut cscan = forward_model(scene, survey)?;
    let nt = survey.time_samples;
    let mut common = alloc::vec![0.0; nt];
    let (dt, f_c, t0) = (survey.dt(), survey.center_frequency, survey.delay());
    let off = survey.tx_rx_offset;
    if survey.direct_wave && off > 0.0 {
        add_wavelet(&mut common, dt, f_c, t0 + off / SPEED_OF_LIGHT, 1.0 / off);
    }
    let path = 2.0 * libm::sqrt(survey.antenna_height * survey.antenna_height + off * off / 4.0);
    if survey.ground_reflection && path > 0.0 {
        let g = reflection_coefficient(1.0, scene.soil_epsilon_r);
        add_wavelet(&mut common, dt, f_c, t0 + path / SPEED_OF_LIGHT, g / path);
    }
    let per = survey.lines * survey.points_per_line;
    for (k, &c) in common.iter().enumerate() {
        cscan.data_mut()[k * per..(k + 1) * per].iter_mut().for_each(|v| *v += c);
    }
    Ok(cscan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::scene::{Shape, SubsurfaceObject};

    #[test]
    fn ricker_shape() {
        assert_eq!(ricker(1e9, 0.0), 1.0);
        let z = 1.0 / (PI * 1e9 * libm::sqrt(2.0));
        assert!((z - 0.2251e-9).abs() < 1e-13);
        assert!(ricker(1e9, z).abs() < 1e-12);
        assert!(ricker(1e9, -z).abs() < 1e-12);
        for k in 0..50 {
            let t = k as f64 * 0.037e-9;
            assert_eq!(ricker(1e9, t), ricker(1e9, -t));
        }
    }

    #[test]
    fn gamma_four_to_sixteen() {
        assert_eq!(reflection_coefficient(4.0, 16.0), -1.0 / 3.0);
        assert_eq!(reflection_coefficient(5.0, 5.0), 0.0);
    }

    #[test]
    fn closed_form_travel_times() {
        let v = wave_speed(4.0);
        let p = [0.0, 0.0, 0.2];
        let t = two_way_time([0.0; 3], [0.0; 3], p, v);
        assert!((t - 2.668e-9).abs() < 1e-12, "{t}");
        let t = two_way_time([-0.05, 0.0, 0.0], [0.05, 0.0, 0.0], p, v);
        assert!((t - 2.751e-9).abs() < 1e-12, "{t}");
    }

    #[test]
    fn zero_contrast_is_silent() {
        let scene = Scene {
            objects: alloc::vec![SubsurfaceObject {
                shape: Shape::Sphere { radius: 0.04 },
                center: [0.5, 0.5, 0.1],
                epsilon_r: 4.0,
            }],
            ..Scene::empty(4.0, 0)
        };
        let c = forward_model(&scene, &SurveyConfig::default()).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn object_outside_grid_is_degenerate() {
        let scene = Scene {
            objects: alloc::vec![SubsurfaceObject {
                shape: Shape::Sphere { radius: 0.02 },
                center: [0.05, 0.05, 0.1],
                epsilon_r: 9.0,
            }],
            ..Scene::empty(4.0, 0)
        };
        assert!(matches!(forward_model(&scene, &SurveyConfig::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn subsampling_is_capped() {
        let scene = Scene {
            objects: alloc::vec![SubsurfaceObject {
                shape: Shape::Sphere { radius: 0.05 },
                center: [0.5, 0.5, 0.1],
                epsilon_r: 9.0,
            }],
            ..Scene::empty(4.0, 0)
        };
        let s = scene_scatterers(&scene, &SurveyConfig::default()).unwrap();
        assert_eq!(s.len(), 2000);
    }
}
