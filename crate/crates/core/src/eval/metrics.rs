//! Volume-level image quality metrics. All statistics are global over the
//! volume and computed in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default floor on `|T|` in the MAPE denominator.
pub const MAPE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub dynamic_range: f64,
}

impl SsimConstants {
    pub fn new(dynamic_range: f64) -> Result<Self> {
        if !(dynamic_range > 0.0 && dynamic_range.is_finite()) {
            return Err(Error::InvalidConfig("SSIM dynamic range must be positive".into()));
        }
        Ok(Self { dynamic_range })
    }

    pub fn c1(&self) -> f64 {
        let k = 0.01 * self.dynamic_range;
        k * k
    }

    pub fn c2(&self) -> f64 {
        let k = 0.03 * self.dynamic_range;
        k * k
    }
}

fn check(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<usize> {
    t.check_same_shape(p)?;
    if t.is_empty() {
        return Err(Error::InvalidShape("metrics need non-empty volumes".into()));
    }
    Ok(t.len())
}

/// Global-statistics SSIM with population (1/N) moments.
pub fn ssim(t: &Tensor<f64>, p: &Tensor<f64>, k: SsimConstants) -> Result<f64> {
    let n = check(t, p)? as f64;
    let mt = t.data().iter().sum::<f64>() / n;
    let mp = p.data().iter().sum::<f64>() / n;
    let (mut vt, mut vp, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in t.data().iter().zip(p.data()) {
        let (da, db) = (a - mt, b - mp);
        vt += da * da;
        vp += db * db;
        cov += da * db;
    }
    let (vt, vp, cov) = (vt / n, vp / n, cov / n);
    let (c1, c2) = (k.c1(), k.c2());
    Ok(((2.0 * mp * mt + c1) * (2.0 * cov + c2)) / ((mp * mp + mt * mt + c1) * (vp + vt + c2)))
}

pub fn mse(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<f64> {
    let n = check(t, p)? as f64;
    Ok(t.data().iter().zip(p.data()).map(|(a, b)| (b - a) * (b - a)).sum::<f64>() / n)
}

pub fn mae(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<f64> {
    let n = check(t, p)? as f64;
    Ok(t.data().iter().zip(p.data()).map(|(a, b)| libm::fabs(b - a)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB for unit-peak data; `+inf` when the
/// volumes are identical.
pub fn psnr(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<f64> {
    let e = mse(t, p)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * libm::log10(e) })
}

/// Relative L2 error in percent.
pub fn mre(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<f64> {
    check(t, p)?;
    let norm: f64 = t.data().iter().map(|a| a * a).sum();
    if norm == 0.0 {
        return Err(Error::Degenerate("relative error undefined for an all-zero reference".into()));
    }
    let err: f64 = t.data().iter().zip(p.data()).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(libm::sqrt(err) / libm::sqrt(norm) * 100.0)
}

/// Mean absolute percentage error with `|T|` floored at `floor`.
pub fn mape(t: &Tensor<f64>, p: &Tensor<f64>, floor: f64) -> Result<f64> {
    let n = check(t, p)? as f64;
    let s: f64 = t
        .data()
        .iter()
        .zip(p.data())
        .map(|(a, b)| libm::fabs(b - a) / libm::fabs(*a).max(floor))
        .sum();
    Ok(s / n * 100.0)
}

/// Intersection over union of `{T > threshold}` and `{P > threshold}`;
/// `None` when both masks are empty.
pub fn iou(t: &Tensor<f64>, p: &Tensor<f64>, threshold: f64) -> Result<Option<f64>> {
    check(t, p)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in t.data().iter().zip(p.data()) {
        let (x, y) = (a > threshold, b > threshold);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok((union > 0).then(|| inter as f64 / union as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiseMetrics {
    pub ssim: f64,
    pub psnr: f64,
    pub mae: f64,
    pub mre: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionMetrics {
    pub ssim: f64,
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
}

/// Denoising metrics on `[0, 1]`-normalized C-scans (dynamic range 1).
/// MRE is NaN when the reference is all zero.
pub fn denoise_metrics(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<DenoiseMetrics> {
    Ok(DenoiseMetrics {
        ssim: ssim(t, p, SsimConstants::new(1.0)?)?,
        psnr: psnr(t, p)?,
        mae: mae(t, p)?,
        mre: match mre(t, p) {
            Ok(v) => v,
            Err(Error::Degenerate(_)) => f64::NAN,
            Err(e) => return Err(e),
        },
    })
}

/// Inversion metrics on permittivity maps; the SSIM dynamic range is the
/// reference's value span, or 1 for a uniform reference.
pub fn inversion_metrics(t: &Tensor<f64>, p: &Tensor<f64>) -> Result<InversionMetrics> {
    check(t, p)?;
    let (lo, hi) = t.min_max().unwrap_or((0.0, 1.0));
    let range = if hi > lo { hi - lo } else { 1.0 };
    Ok(InversionMetrics {
        ssim: ssim(t, p, SsimConstants::new(range)?)?,
        mse: mse(t, p)?,
        mae: mae(t, p)?,
        mape: mape(t, p, MAPE_FLOOR)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, 1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn ssim_examples() {
        let t = vol(&[0.1, 0.5, 0.9, 0.3]);
        let k = SsimConstants::new(1.0).unwrap();
        assert!((ssim(&t, &t, k).unwrap() - 1.0).abs() < 1e-15);
        let s = ssim(&vol(&[1.0; 4]), &vol(&[0.0; 4]), k).unwrap();
        assert!((s - 1e-4 / 1.0001).abs() < 1e-15);
    }

    #[test]
    fn psnr_examples() {
        assert!((psnr(&vol(&[0.0]), &vol(&[1.0])).unwrap()).abs() < 1e-12);
        assert!((psnr(&vol(&[0.0]), &vol(&[0.1])).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&vol(&[0.3]), &vol(&[0.3])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn mre_examples() {
        let t = vol(&[1.0, -2.0, 3.0]);
        assert_eq!(mre(&t, &t).unwrap(), 0.0);
        assert!((mre(&t, &vol(&[0.0; 3])).unwrap() - 100.0).abs() < 1e-12);
        assert!((mre(&t, &t.scale(2.0)).unwrap() - 100.0).abs() < 1e-12);
        assert!(mre(&vol(&[0.0; 3]), &t).is_err());
    }

    #[test]
    fn mape_examples() {
        let t = vol(&[4.0; 5]);
        assert_eq!(mape(&t, &t, MAPE_FLOOR).unwrap(), 0.0);
        assert!((mape(&t, &vol(&[5.0; 5]), MAPE_FLOOR).unwrap() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn iou_examples() {
        let t = vol(&[4.0, 9.0, 9.0, 4.0]);
        assert_eq!(iou(&t, &t, 6.0).unwrap(), Some(1.0));
        assert_eq!(iou(&t, &vol(&[4.0, 9.0, 4.0, 9.0]), 6.0).unwrap(), Some(1.0 / 3.0));
        assert_eq!(iou(&vol(&[4.0; 2]), &vol(&[4.0; 2]), 6.0).unwrap(), None);
    }
}
