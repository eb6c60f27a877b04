#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transex_core::ImageTensor;

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(0.05..0.95))
}

pub fn random_images(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Vec<ImageTensor> {
    (0..n).map(|i| random_image(h, w, c, seed * 1000 + i as u64)).collect()
}

/// Worst relative error between `analytic` and central differences of
/// `loss` over an evenly spaced subset of at most `samples` coordinates.
pub fn max_relative_error(
    params: &[f64],
    analytic: &[f64],
    samples: usize,
    loss: impl Fn(&[f64]) -> f64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let h = 1e-5;
    let stride = (params.len() / samples.max(1)).max(1);
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in (0..params.len()).step_by(stride) {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss(&probe);
        probe[i] = orig - h;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Makes a sigmoid-headed network output the constant `p` by zeroing the
/// weights of its last convolution and setting its bias to `logit(p)`.
pub fn force_constant(net: &transex_core::nn::Network, params: &mut [f64], p: f64) {
    let head = net.last_conv().expect("network has a convolution").clone();
    let w_end = head.offset + head.weight_len();
    params[head.offset..w_end].iter_mut().for_each(|v| *v = 0.0);
    params[w_end..w_end + head.cout].iter_mut().for_each(|v| *v = logit(p));
}

/// Direct per-window evaluation of the SSIM formula with a 2-D Gaussian window.
pub fn ssim_brute_force(x: &ImageTensor, y: &ImageTensor, win: usize, sigma: f64) -> f64 {
    let (c, h, w) = x.shape();
    let r = (win as f64 - 1.0) / 2.0;
    let mut weights = vec![vec![0.0; win]; win];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
            *v = (-d2 / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.0001, 0.0009);
    let mut acc = 0.0;
    let mut n = 0;
    for ch in 0..c {
        for y0 in 0..=h - win {
            for x0 in 0..=w - win {
                let wt = |i: usize, j: usize| weights[i][j] / total;
                let (mut ux, mut uy) = (0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        ux += wt(i, j) * x.get(ch, y0 + i, x0 + j);
                        uy += wt(i, j) * y.get(ch, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..win {
                    for j in 0..win {
                        let dx = x.get(ch, y0 + i, x0 + j) - ux;
                        let dy = y.get(ch, y0 + i, x0 + j) - uy;
                        vx += wt(i, j) * dx * dx;
                        vy += wt(i, j) * dy * dy;
                        cxy += wt(i, j) * dx * dy;
                    }
                }
                acc += (2.0 * ux * uy + c1) * (2.0 * cxy + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                n += 1;
            }
        }
    }
    acc / n as f64
}
