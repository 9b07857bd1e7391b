//! C-scan preprocessing: time-zero alignment, mean-trace removal,
//! min-max normalization and trilinear resizing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shifts every trace earlier so the absolute peak of the mean trace lands
/// on sample 0; vacated tail samples are zero. Returns the shift applied.
pub fn time_zero_correction(c: &Tensor<f64>) -> Result<(Tensor<f64>, usize)> {
    let (t, h, w) = c.dims3()?;
    let per = h * w;
    if c.is_empty() {
        return Err(Error::InvalidShape("empty C-scan".into()));
    }
    let mut shift = 0;
    let mut best = -1.0;
    for k in 0..t {
        let m = libm::fabs(c.data()[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64);
        if m > best {
            best = m;
            shift = k;
        }
    }
    let mut out = Tensor::zeros(c.shape());
    let n = (t - shift) * per;
    out.data_mut()[..n].copy_from_slice(&c.data()[shift * per..]);
    Ok((out, shift))
}

/// Removes the cross-trace mean at every time sample.
pub fn mean_subtraction(c: &Tensor<f64>) -> Result<Tensor<f64>> {
    let (t, h, w) = c.dims3()?;
    let per = h * w;
    if per < 2 {
        return Err(Error::InvalidShape("mean subtraction needs at least two traces".into()));
    }
    let mut out = c.clone();
    for k in 0..t {
        let row = &mut out.data_mut()[k * per..(k + 1) * per];
        let mut mean = row.iter().sum::<f64>() / per as f64;
        // Correction pass so trace-identical rows come out exactly zero.
        mean += row.iter().map(|v| v - mean).sum::<f64>() / per as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

/// Affine frame mapping `[min, max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormFrame {
    pub min: f64,
    pub max: f64,
}

impl NormFrame {
    pub fn of(t: &Tensor<f64>) -> Result<Self> {
        let (min, max) = t.min_max().ok_or_else(|| Error::InvalidShape("empty volume".into()))?;
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::NonFinite("volume contains NaN or infinity".into()));
        }
        Ok(Self { min, max })
    }

    /// Maps into the frame; a degenerate frame maps everything to zero.
    pub fn apply(&self, t: &Tensor<f64>) -> Tensor<f64> {
        let span = self.max - self.min;
        if span > 0.0 {
            t.map(|v| (v - self.min) / span)
        } else {
            Tensor::zeros(t.shape())
        }
    }
}

pub fn normalize01(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(NormFrame::of(t)?.apply(t))
}

fn sample_positions(src: usize, dst: usize) -> impl Iterator<Item = (usize, usize, f64)> {
    (0..dst).map(move |i| {
        if dst == 1 || src == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let i0 = (libm::floor(x) as usize).min(src - 2);
        (i0, i0 + 1, x - i0 as f64)
    })
}

/// Trilinear interpolation with corner-aligned sampling: output corners
/// coincide with input corners.
pub fn resize_trilinear(t: &Tensor<f64>, dims: [usize; 3]) -> Result<Tensor<f64>> {
    let (d, h, w) = t.dims3()?;
    if dims.iter().any(|&e| e == 0) || t.is_empty() {
        return Err(Error::InvalidShape("resize extents must be positive".into()));
    }
    if [d, h, w] == dims {
        return Ok(t.clone());
    }
    let x = t.data();
    let at = |a: usize, b: usize, c: usize| x[(a * h + b) * w + c];
    let zs: alloc::vec::Vec<_> = sample_positions(d, dims[0]).collect();
    let ys: alloc::vec::Vec<_> = sample_positions(h, dims[1]).collect();
    let xs: alloc::vec::Vec<_> = sample_positions(w, dims[2]).collect();
    let mut out = alloc::vec::Vec::with_capacity(dims.iter().product());
    for &(z0, z1, fz) in &zs {
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
                let c00 = lerp(at(z0, y0, x0), at(z0, y0, x1), fx);
                let c01 = lerp(at(z0, y1, x0), at(z0, y1, x1), fx);
                let c10 = lerp(at(z1, y0, x0), at(z1, y0, x1), fx);
                let c11 = lerp(at(z1, y1, x0), at(z1, y1, x1), fx);
                out.push(lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fz));
            }
        }
    }
    Tensor::from_vec(&dims, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_subtraction_example() {
        // Two traces [1, 2] and [3, 4] stored time-major.
        let c = Tensor::from_vec(&[2, 1, 2], alloc::vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let m = mean_subtraction(&c).unwrap();
        assert_eq!(m.data(), &[-1.0, 1.0, -1.0, 1.0]);
        assert!(mean_subtraction(&Tensor::zeros(&[4, 1, 1])).is_err());
    }

    #[test]
    fn identical_traces_vanish() {
        let c = Tensor::from_fn(&[7, 3, 5], |i| 0.1 + (i / 15) as f64 * 0.37);
        assert!(mean_subtraction(&c).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_moves_to_zero() {
        let mut c = Tensor::zeros(&[16, 2, 3]);
        c.data_mut()[7 * 6..8 * 6].iter_mut().for_each(|v| *v = 1.0);
        let (z, s) = time_zero_correction(&c).unwrap();
        assert_eq!(s, 7);
        assert!(z.data()[..6].iter().all(|&v| v == 1.0));
        assert!(z.data()[6..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalization_examples() {
        let c = Tensor::from_vec(&[1, 1, 3], alloc::vec![-2.0, 0.0, 6.0]).unwrap();
        assert_eq!(normalize01(&c).unwrap().data(), &[0.0, 0.25, 1.0]);
        assert!(normalize01(&Tensor::full(&[2, 2, 2], 3.0)).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ramp_survives_down_and_up() {
        let ramp = |d: usize, h: usize, w: usize| {
            Tensor::from_fn(&[d, h, w], |i| {
                let (a, r) = (i / (h * w), i % (h * w));
                let (b, c) = (r / w, r % w);
                0.3 * a as f64 / (d - 1) as f64 + 1.1 * b as f64 / (h - 1) as f64 - 0.7 * c as f64 / (w - 1) as f64
            })
        };
        let big = ramp(9, 13, 17);
        let small = resize_trilinear(&big, [5, 4, 3]).unwrap();
        let back = resize_trilinear(&small, [9, 13, 17]).unwrap();
        for (a, b) in back.data().iter().zip(big.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(resize_trilinear(&big, [9, 13, 17]).unwrap(), big);
    }
}
