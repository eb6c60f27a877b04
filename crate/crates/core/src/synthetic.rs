//! Synthetic style task used for hermetic end-to-end runs.
//!
//! Content images are smooth colour scenes: a two-colour linear gradient with
//! a few soft-edged discs and rectangles. The hidden style maps an image to
//! its colour inverse followed by a Gaussian blur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{ImagePair, PairedDataset, Split, UnpairedDataset};
use crate::error::Result;
use crate::image::ImageTensor;
use crate::resample::{convolve_separable_replicate, downscale_bicubic, gaussian_kernel};

pub const STYLE_BLUR_SIGMA: f64 = 1.0;
pub const STYLE_BLUR_SIZE: usize = 5;

/// Independent random streams, so each consumer sees disjoint images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    VictimContent = 1,
    VictimStyle = 2,
    Adversary = 3,
    Test = 4,
}

fn smoothstep(edge: f64, d: f64) -> f64 {
    // 1 inside, 0 outside, linear over one pixel around the edge.
    (edge - d + 0.5).clamp(0.0, 1.0)
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

pub fn scene(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor {
    let (c0, c1) = (random_colour(rng), random_colour(rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let s = size as f64;
    let mut img = ImageTensor::from_fn(size, size, 3, |c, y, x| {
        let u = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) / std::f64::consts::SQRT_2 + 0.5;
        c0[c] * (1.0 - u) + c1[c] * u
    });
    let shapes = rng.random_range(1..=3);
    for _ in 0..shapes {
        let colour = random_colour(rng);
        let cy = rng.random_range(0.0..s);
        let cx = rng.random_range(0.0..s);
        let disc = rng.random_bool(0.5);
        let r = rng.random_range(s / 8.0..s / 3.0);
        let (hh, hw) = (rng.random_range(s / 10.0..s / 3.0), rng.random_range(s / 10.0..s / 3.0));
        for y in 0..size {
            for x in 0..size {
                let (py, px) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                let alpha = if disc {
                    smoothstep(r, (py * py + px * px).sqrt())
                } else {
                    smoothstep(hh, py.abs()).min(smoothstep(hw, px.abs()))
                };
                if alpha > 0.0 {
                    for (c, col) in colour.iter().enumerate() {
                        let v = img.get(c, y, x);
                        img.set(c, y, x, v * (1.0 - alpha) + col * alpha);
                    }
                }
            }
        }
    }
    img.clipped()
}

/// The hidden style: colour inversion then Gaussian blur.
pub fn style(img: &ImageTensor) -> ImageTensor {
    let inverted = img.map(|v| 1.0 - v);
    convolve_separable_replicate(&inverted, &gaussian_kernel(STYLE_BLUR_SIZE, STYLE_BLUR_SIGMA)).clipped()
}

#[derive(Clone, Copy, Debug)]
pub struct ToyTask {
    pub seed: u64,
    pub size: usize,
}

impl ToyTask {
    pub fn new(seed: u64, size: usize) -> Self {
        Self { seed, size }
    }

    fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }

    pub fn scenes(&self, stream: Stream, n: usize) -> Vec<ImageTensor> {
        let mut rng = self.rng(stream);
        (0..n).map(|_| scene(&mut rng, self.size)).collect()
    }

    /// Unstyled scenes and styled versions of a disjoint set of scenes.
    pub fn victim_data(&self, n: usize) -> UnpairedDataset {
        UnpairedDataset {
            domain_a: self.scenes(Stream::VictimContent, n),
            domain_b: self.scenes(Stream::VictimStyle, n).iter().map(style).collect(),
            split: Split::Train,
        }
    }

    /// The adversary's own unstyled images.
    pub fn adversary_inputs(&self, n: usize) -> Vec<ImageTensor> {
        self.scenes(Stream::Adversary, n)
    }

    /// Held-out `(input, ground-truth style)` pairs.
    pub fn test_pairs(&self, n: usize) -> PairedDataset {
        let pairs = self
            .scenes(Stream::Test, n)
            .into_iter()
            .map(|x| {
                let y = style(&x);
                ImagePair::new(x, y)
            })
            .collect();
        PairedDataset::new(pairs, Split::Test)
    }

    /// Super-resolution pairs: `(bicubic /4, scene)` at `size` high-res side.
    pub fn super_resolution_pairs(&self, stream: Stream, n: usize) -> Result<PairedDataset> {
        let pairs = self
            .scenes(stream, n)
            .into_iter()
            .map(|hr| Ok(ImagePair::new(downscale_bicubic(&hr, 4)?, hr)))
            .collect::<Result<_>>()?;
        Ok(PairedDataset::new(pairs, if stream == Stream::Test { Split::Test } else { Split::Train }))
    }
}
