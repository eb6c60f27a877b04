//! Separable resampling (bilinear, Catmull-Rom bicubic), rotation and small
//! Gaussian filters.
//!
//! Downscaling widens the kernel by the scale factor so every source pixel
//! contributes (area anti-aliasing), matching the usual "bicubic downscale"
//! behavior of image libraries.

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Cubic convolution coefficient (Catmull-Rom / Keys `a = -0.5`).
pub const BICUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Filter {
    Bilinear,
    Bicubic,
}

impl Filter {
    fn support(self) -> f64 {
        match self {
            Filter::Bilinear => 1.0,
            Filter::Bicubic => 2.0,
        }
    }

    fn weight(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            Filter::Bilinear => (1.0 - x).max(0.0),
            Filter::Bicubic => {
                let a = BICUBIC_A;
                if x < 1.0 {
                    ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
                } else if x < 2.0 {
                    (((x - 5.0) * x + 8.0) * x - 4.0) * a
                } else {
                    0.0
                }
            }
        }
    }
}

/// Normalized contribution table for one axis.
struct Taps {
    start: Vec<usize>,
    weights: Vec<Vec<f64>>,
}

fn taps(in_size: usize, out_size: usize, filter: Filter) -> Taps {
    let scale = in_size as f64 / out_size as f64;
    let filter_scale = scale.max(1.0);
    let support = filter.support() * filter_scale;
    let mut start = Vec::with_capacity(out_size);
    let mut weights = Vec::with_capacity(out_size);
    for i in 0..out_size {
        let center = (i as f64 + 0.5) * scale;
        let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
        let hi = ((center + support + 0.5).floor() as usize).min(in_size);
        let mut w: Vec<f64> = (lo..hi)
            .map(|j| filter.weight((j as f64 - center + 0.5) / filter_scale))
            .collect();
        let total: f64 = w.iter().sum();
        if total != 0.0 {
            for v in &mut w {
                *v /= total;
            }
        }
        start.push(lo);
        weights.push(w);
    }
    Taps { start, weights }
}

/// Dense row-major `out_size x in_size` matrix of the 1-D resampling map.
pub fn resize_matrix(in_size: usize, out_size: usize, filter: Filter) -> Vec<f64> {
    let t = taps(in_size, out_size, filter);
    let mut m = vec![0.0; out_size * in_size];
    for (i, (s, w)) in t.start.iter().zip(&t.weights).enumerate() {
        for (k, wt) in w.iter().enumerate() {
            m[i * in_size + s + k] = *wt;
        }
    }
    m
}

/// Resizes to `out_h x out_w`. Output is not clipped; callers that need
/// `[0, 1]` (bicubic overshoots) clip explicitly.
pub fn resize(img: &ImageTensor, out_h: usize, out_w: usize, filter: Filter) -> ImageTensor {
    let (c, h, w) = img.shape();
    let tx = taps(w, out_w, filter);
    let ty = taps(h, out_h, filter);
    // horizontal pass: c x h x out_w
    let mut tmp = vec![0.0; c * h * out_w];
    for ch in 0..c {
        let plane = img.plane(ch);
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..out_w {
                let s = tx.start[x];
                tmp[(ch * h + y) * out_w + x] = tx.weights[x]
                    .iter()
                    .enumerate()
                    .map(|(k, wt)| wt * row[s + k])
                    .sum();
            }
        }
    }
    ImageTensor::from_fn(out_h, out_w, c, |ch, y, x| {
        let s = ty.start[y];
        ty.weights[y]
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * tmp[(ch * h + s + k) * out_w + x])
            .sum()
    })
}

/// Bicubic downscale by an integer factor, clipped to `[0, 1]`.
pub fn downscale_bicubic(img: &ImageTensor, factor: usize) -> Result<ImageTensor> {
    if factor == 0 || img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "{}x{} is not divisible by {factor}",
            img.height(),
            img.width()
        )));
    }
    Ok(resize(img, img.height() / factor, img.width() / factor, Filter::Bicubic).clipped())
}

/// Bicubic upscale by an integer factor, clipped to `[0, 1]`.
pub fn upscale_bicubic(img: &ImageTensor, factor: usize) -> ImageTensor {
    resize(img, img.height() * factor, img.width() * factor, Filter::Bicubic).clipped()
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear sample with replicate (clamp-to-edge) boundary handling.
pub fn sample_bilinear(img: &ImageTensor, c: usize, y: f64, x: f64) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let y0 = y.floor();
    let x0 = x.floor();
    let (fy, fx) = (y - y0, x - x0);
    let clampy = |v: isize| v.clamp(0, h - 1) as usize;
    let clampx = |v: isize| v.clamp(0, w - 1) as usize;
    let (iy, ix) = (y0 as isize, x0 as isize);
    let p00 = img.get(c, clampy(iy), clampx(ix));
    let p01 = img.get(c, clampy(iy), clampx(ix + 1));
    let p10 = img.get(c, clampy(iy + 1), clampx(ix));
    let p11 = img.get(c, clampy(iy + 1), clampx(ix + 1));
    lerp(lerp(p00, p01, fx), lerp(p10, p11, fx), fy)
}

/// Rotates counter-clockwise by `degrees` about the image center using
/// bilinear resampling and replicate padding.
pub fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    let (c, h, w) = img.shape();
    let theta = degrees.to_radians();
    let (s, co) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    ImageTensor::from_fn(h, w, c, |ch, y, x| {
        // inverse mapping: output pixel -> source coordinate
        let dy = y as f64 - cy;
        let dx = x as f64 - cx;
        let sx = co * dx - s * dy + cx;
        let sy = s * dx + co * dy + cy;
        sample_bilinear(img, ch, sy, sx)
    })
}

/// Normalized 1-D Gaussian kernel of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = k.iter().sum();
    for v in &mut k {
        *v /= total;
    }
    k
}

/// Same-size separable convolution with replicate padding.
pub fn convolve_separable_replicate(img: &ImageTensor, kernel: &[f64]) -> ImageTensor {
    let (c, h, w) = img.shape();
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, wt) in kernel.iter().enumerate() {
                    let xx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += wt * img.get(ch, y, xx);
                }
                tmp[(ch * h + y) * w + x] = acc;
            }
        }
    }
    ImageTensor::from_fn(h, w, c, |ch, y, x| {
        let mut acc = 0.0;
        for (k, wt) in kernel.iter().enumerate() {
            let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            acc += wt * tmp[(ch * h + yy) * w + x];
        }
        acc
    })
}
