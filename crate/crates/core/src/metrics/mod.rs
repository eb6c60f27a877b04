//! Image-quality and distribution-distance metrics.

mod fid;
mod ssim;

use serde::{Deserialize, Serialize};

pub use fid::{
    fid, fit_gaussian, frechet_distance, FeatureExtractor, FeatureTable, GaussianSummary, EIGEN_FLOOR,
    FROZEN_INPUT_SIDE, JITTER,
};
pub use ssim::{psnr, psnr_from_mse, psnr_u8, ssim, ssim_map, WindowConfig, Weighting};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::models::Translator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ssim,
    Psnr,
    Fid,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Ssim => "ssim",
            Metric::Psnr => "psnr",
            Metric::Fid => "fid",
        })
    }
}

/// Mean and sample standard deviation; the deviation is absent for one value.
pub fn mean_std(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Some((mean, std))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Mean of `metric(a_i, b_i)` over aligned image lists.
pub fn mean_pairwise(
    a: &[ImageTensor],
    b: &[ImageTensor],
    metric: impl Fn(&ImageTensor, &ImageTensor) -> Result<f64> + Sync,
) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need equal non-empty image lists, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let pairs: Vec<(&ImageTensor, &ImageTensor)> = a.iter().zip(b).collect();
    let scores = crate::par::map(crate::par::Exec::default(), &pairs, |(x, y)| metric(x, y));
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / a.len() as f64)
}

/// Applies `model` to every image, in order.
pub fn translate_all(model: &dyn Translator, inputs: &[ImageTensor]) -> Result<Vec<ImageTensor>> {
    crate::par::map(crate::par::Exec::default(), inputs, |x| model.translate(x))
        .into_iter()
        .collect()
}

/// Mean SSIM between two models' outputs on the same inputs.
pub fn proxy_ssim(a: &dyn Translator, b: &dyn Translator, inputs: &[ImageTensor]) -> Result<f64> {
    let oa = translate_all(a, inputs)?;
    let ob = translate_all(b, inputs)?;
    let cfg = WindowConfig::default();
    mean_pairwise(&oa, &ob, |x, y| ssim(x, y, &cfg))
}
