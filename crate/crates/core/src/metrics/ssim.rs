use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::resample::gaussian_kernel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Weighting {
    Uniform,
    Gaussian { sigma: f64 },
}

/// Windowing and stabilizer constants for SSIM.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window: usize,
    pub weighting: Weighting,
    pub k1: f64,
    pub k2: f64,
    pub max_value: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window: 11,
            weighting: Weighting::Gaussian { sigma: 1.5 },
            k1: 0.01,
            k2: 0.03,
            max_value: 1.0,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::InvalidArgument(format!("window must be at least 2, got {}", self.window)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::InvalidArgument("k1 and k2 must be positive".into()));
        }
        if !(self.max_value > 0.0) {
            return Err(Error::InvalidArgument("max_value must be positive".into()));
        }
        if let Weighting::Gaussian { sigma } = self.weighting {
            if !(sigma > 0.0) {
                return Err(Error::InvalidArgument("gaussian sigma must be positive".into()));
            }
        }
        Ok(())
    }

    /// Normalized 1-D weights; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        match self.weighting {
            Weighting::Uniform => vec![1.0 / self.window as f64; self.window],
            Weighting::Gaussian { sigma } if self.window % 2 == 1 => gaussian_kernel(self.window, sigma),
            Weighting::Gaussian { sigma } => {
                let centre = (self.window as f64 - 1.0) / 2.0;
                let k: Vec<f64> = (0..self.window)
                    .map(|i| {
                        let d = i as f64 - centre;
                        (-d * d / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                let total: f64 = k.iter().sum();
                k.into_iter().map(|v| v / total).collect()
            }
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.max_value).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.max_value).powi(2)
    }
}

/// Weighted sums over every valid `k x k` window of a plane, separably.
fn window_sums(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..wo {
            rows[y * wo + x] = kernel.iter().zip(&src[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = kernel.iter().enumerate().map(|(i, a)| a * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Per-window SSIM values of one channel pair, in row-major window order.
pub fn ssim_map(x: &[f64], y: &[f64], h: usize, w: usize, cfg: &WindowConfig) -> Vec<f64> {
    let kernel = cfg.kernel();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = window_sums(x, h, w, &kernel);
    let my = window_sums(y, h, w, &kernel);
    let exx = window_sums(&xx, h, w, &kernel);
    let eyy = window_sums(&yy, h, w, &kernel);
    let exy = window_sums(&xy, h, w, &kernel);
    let (c1, c2) = (cfg.c1(), cfg.c2());
    (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .collect()
}

/// Mean SSIM over all valid windows and channels.
pub fn ssim(x: &ImageTensor, y: &ImageTensor, cfg: &WindowConfig) -> Result<f64> {
    cfg.validate()?;
    if !x.same_shape(y) {
        return Err(Error::shape(format!("{:?}", x.shape()), format!("{:?}", y.shape())));
    }
    let (c, h, w) = x.shape();
    if cfg.window > h || cfg.window > w {
        return Err(Error::InvalidArgument(format!(
            "SSIM window {} exceeds image {h}x{w}",
            cfg.window
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for v in ssim_map(x.plane(ch), y.plane(ch), h, w, cfg) {
            total += v;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `20 log10(MAX / sqrt(MSE))`; identical images give `+inf`.
pub fn psnr(reference: &ImageTensor, distorted: &ImageTensor, max_value: f64) -> Result<f64> {
    if !reference.same_shape(distorted) {
        return Err(Error::shape(
            format!("{:?}", reference.shape()),
            format!("{:?}", distorted.shape()),
        ));
    }
    if !(max_value > 0.0) {
        return Err(Error::InvalidArgument("max_value must be positive".into()));
    }
    let n = reference.values().len() as f64;
    let mse = reference
        .values()
        .iter()
        .zip(distorted.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(psnr_from_mse(mse, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * (max_value / mse.sqrt()).log10()
    }
}

/// PSNR on the 8-bit scale: both images are quantized and `MAX = 255`.
pub fn psnr_u8(reference: &ImageTensor, distorted: &ImageTensor) -> Result<f64> {
    let scale = |img: &ImageTensor| img.quantized().map(|v| (v * 255.0).round());
    psnr(&scale(reference), &scale(distorted), 255.0)
}
