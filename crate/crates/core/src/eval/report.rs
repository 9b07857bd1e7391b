//! Per-sample evaluation of the two-network pipeline and per-group means.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::group::SceneGroup;
use super::metrics::{denoise_metrics, inversion_metrics, iou, DenoiseMetrics, InversionMetrics};
use crate::error::Result;
use crate::nets::Network;
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub group: SceneGroup,
    pub denoise: DenoiseMetrics,
    pub inversion: InversionMetrics,
    /// Object-mask IoU; `None` when neither map has object voxels.
    pub iou: Option<f64>,
}

/// Threshold halfway between the background and the weakest object
/// permittivity.
pub fn iou_threshold(background: f64, min_object_epsilon_r: f64) -> f64 {
    (background + min_object_epsilon_r) / 2.0
}

/// Network outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub denoised: Tensor<f64>,
    pub permittivity: Tensor<f64>,
}

/// Runs the Denoiser (skipped when `None`) and then the Inverter on a
/// noisy C-scan.
pub fn predict<T: Real, D: Network<T>, I: Network<T>>(
    denoiser: Option<&D>,
    inverter: &I,
    noisy: &Tensor<f64>,
) -> Result<Prediction> {
    let x: Tensor<T> = noisy.cast();
    let denoised = match denoiser {
        Some(d) => d.forward_infer(&x)?,
        None => x,
    };
    let permittivity = inverter.forward_infer(&denoised)?;
    Ok(Prediction {
        denoised: denoised.cast(),
        permittivity: permittivity.cast(),
    })
}

pub fn score_sample(
    id: String,
    group: SceneGroup,
    clean: &Tensor<f64>,
    permittivity: &Tensor<f64>,
    prediction: &Prediction,
    threshold: f64,
) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        id,
        group,
        denoise: denoise_metrics(clean, &prediction.denoised)?,
        inversion: inversion_metrics(permittivity, &prediction.permittivity)?,
        iou: iou(permittivity, &prediction.permittivity, threshold)?,
    })
}

/// Means over a set of samples. NaN entries (undefined MRE) are skipped
/// for that metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub denoise_ssim: f64,
    pub psnr: f64,
    pub denoise_mae: f64,
    pub mre: f64,
    pub inversion_ssim: f64,
    pub mse: f64,
    pub inversion_mae: f64,
    pub mape: f64,
    pub iou: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values.filter(|v| !v.is_nan()) {
        s += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn summarize(samples: &[&SampleMetrics]) -> GroupSummary {
    let ious: Vec<f64> = samples.iter().filter_map(|s| s.iou).collect();
    GroupSummary {
        count: samples.len(),
        denoise_ssim: mean(samples.iter().map(|s| s.denoise.ssim)),
        psnr: mean(samples.iter().map(|s| s.denoise.psnr)),
        denoise_mae: mean(samples.iter().map(|s| s.denoise.mae)),
        mre: mean(samples.iter().map(|s| s.denoise.mre)),
        inversion_ssim: mean(samples.iter().map(|s| s.inversion.ssim)),
        mse: mean(samples.iter().map(|s| s.inversion.mse)),
        inversion_mae: mean(samples.iter().map(|s| s.inversion.mae)),
        mape: mean(samples.iter().map(|s| s.inversion.mape)),
        iou: (!ious.is_empty()).then(|| mean(ious.into_iter())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<SampleMetrics>,
    /// Keyed by group label.
    pub groups: BTreeMap<String, GroupSummary>,
    pub overall: GroupSummary,
}

/// Folds samples in order into per-group and overall means.
pub fn aggregate(samples: Vec<SampleMetrics>) -> EvalReport {
    let mut by_group: BTreeMap<SceneGroup, Vec<&SampleMetrics>> = BTreeMap::new();
    for s in &samples {
        by_group.entry(s.group).or_default().push(s);
    }
    let groups = by_group.iter().map(|(g, v)| (String::from(g.label()), summarize(v))).collect();
    let all: Vec<&SampleMetrics> = samples.iter().collect();
    let overall = summarize(&all);
    EvalReport { samples, groups, overall }
}
