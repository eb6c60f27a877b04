//! Generator and discriminator descriptors, the architecture zoo, checkpoints
//! and GAN losses.

mod checkpoint;
pub mod losses;
mod zoo;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{Cache, Network, Tensor};

pub use losses::{AdversarialForm, LossConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    Unet,
    ResnetTranslator,
    Srresnet,
    /// Parameter-free pass-through, used for baselines and service tests.
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorFamily {
    Patchgan,
    SrDiscriminator,
}

/// Size preset scaling widths and depths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Tiny,
    Small,
    Full,
}

impl Preset {
    pub fn base_width(self) -> usize {
        match self {
            Preset::Tiny => 8,
            Preset::Small => 16,
            Preset::Full => 64,
        }
    }

    pub(crate) fn unet_depth(self) -> usize {
        match self {
            Preset::Tiny => 2,
            Preset::Small => 3,
            Preset::Full => 6,
        }
    }

    pub(crate) fn residual_blocks(self) -> usize {
        match self {
            Preset::Tiny => 1,
            Preset::Small => 3,
            Preset::Full => 9,
        }
    }

    pub(crate) fn translator_downsamples(self) -> usize {
        match self {
            Preset::Tiny => 1,
            _ => 2,
        }
    }

    pub(crate) fn patch_downsamples(self) -> usize {
        match self {
            Preset::Tiny => 2,
            Preset::Small => 3,
            Preset::Full => 3,
        }
    }

    /// Spatial multiple every input side must satisfy.
    pub fn spatial_multiple(self, family: GeneratorFamily) -> usize {
        match family {
            GeneratorFamily::Unet => 1 << self.unet_depth(),
            GeneratorFamily::ResnetTranslator => 1 << self.translator_downsamples(),
            GeneratorFamily::Srresnet | GeneratorFamily::Identity => 1,
        }
    }
}

impl fmt::Display for GeneratorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeneratorFamily::Unet => "unet",
            GeneratorFamily::ResnetTranslator => "resnet_translator",
            GeneratorFamily::Srresnet => "srresnet",
            GeneratorFamily::Identity => "identity",
        })
    }
}

impl fmt::Display for DiscriminatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscriminatorFamily::Patchgan => "patchgan",
            DiscriminatorFamily::SrDiscriminator => "sr_discriminator",
        })
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Tiny => "tiny",
            Preset::Small => "small",
            Preset::Full => "full",
        })
    }
}

/// Anything that maps an image to an image: victims, surrogates, baselines.
pub trait Translator: Send + Sync {
    /// `(channels, height, width)` accepted by [`Translator::translate`].
    fn input_shape(&self) -> (usize, usize, usize);

    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor>;
}

/// Architecture descriptor plus parameter store for `G`, `F_V` or `F_A`.
#[derive(Clone, PartialEq)]
pub struct GeneratorSpec {
    pub family: GeneratorFamily,
    pub preset: Preset,
    pub channels: usize,
    pub input_hw: (usize, usize),
    pub seed: u64,
    net: Network,
    pub params: Vec<f64>,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("family", &self.family)
            .field("preset", &self.preset)
            .field("input_shape", &self.input_shape())
            .field("output_shape", &self.output_shape())
            .field("params", &self.params.len())
            .finish()
    }
}

impl GeneratorSpec {
    pub fn new(
        family: GeneratorFamily,
        preset: Preset,
        channels: usize,
        input_hw: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        let net = match family {
            GeneratorFamily::Unet => zoo::unet(channels, preset),
            GeneratorFamily::ResnetTranslator => zoo::resnet_translator(channels, preset),
            GeneratorFamily::Srresnet => zoo::srresnet(channels, preset),
            GeneratorFamily::Identity => Network {
                root: crate::nn::Layer::Seq(vec![]),
                n_params: 0,
            },
        };
        let m = preset.spatial_multiple(family);
        if input_hw.0 % m != 0 || input_hw.1 % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "{family} ({preset}) needs input sides divisible by {m}, got {}x{}",
                input_hw.0, input_hw.1
            )));
        }
        let out = net.out_shape((channels, input_hw.0, input_hw.1))?;
        let spec = Self {
            family,
            preset,
            channels,
            input_hw,
            seed,
            params: net.init_params(seed),
            net,
        };
        debug_assert_eq!(out, spec.output_shape());
        Ok(spec)
    }

    pub fn identity(channels: usize, input_hw: (usize, usize)) -> Self {
        Self::new(GeneratorFamily::Identity, Preset::Tiny, channels, input_hw, 0)
            .expect("identity generator accepts any geometry")
    }

    pub fn scale_factor(&self) -> usize {
        match self.family {
            GeneratorFamily::Srresnet => 4,
            _ => 1,
        }
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.input_hw.0, self.input_hw.1)
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        let s = self.scale_factor();
        (self.channels, self.input_hw.0 * s, self.input_hw.1 * s)
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn check_input(&self, x: &ImageTensor) -> Result<()> {
        if x.shape() != self.input_shape() {
            return Err(Error::shape(
                format!("{:?}", self.input_shape()),
                format!("{:?}", x.shape()),
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: Tensor) -> (Tensor, Cache) {
        self.net.forward(&self.params, x)
    }

    /// Adds parameter gradients into `grads`, returns the input gradient.
    pub fn backward_into(&self, cache: Cache, grad_out: Tensor, grads: &mut [f64]) -> Tensor {
        self.net.backward_into(&self.params, cache, grad_out, grads)
    }

    pub fn infer(&self, x: Tensor) -> Tensor {
        self.net.infer(&self.params, x)
    }

    pub fn apply(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(x)?;
        Ok(self.infer(Tensor::from(x)).into_image()?.clipped())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_generator(self, dir.as_ref())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load_generator(dir.as_ref())
    }
}

impl Translator for GeneratorSpec {
    fn input_shape(&self) -> (usize, usize, usize) {
        GeneratorSpec::input_shape(self)
    }

    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.apply(x)
    }
}

/// Architecture descriptor plus parameter store for `D`.
///
/// A conditional discriminator scores `[condition, image]` stacked along
/// channels (Pix2Pix); an unconditional one scores the image alone.
#[derive(Clone, PartialEq)]
pub struct DiscriminatorSpec {
    pub family: DiscriminatorFamily,
    pub preset: Preset,
    pub channels: usize,
    pub conditional: bool,
    pub input_hw: (usize, usize),
    pub seed: u64,
    net: Network,
    pub params: Vec<f64>,
}

impl fmt::Debug for DiscriminatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiscriminatorSpec")
            .field("family", &self.family)
            .field("preset", &self.preset)
            .field("conditional", &self.conditional)
            .field("params", &self.params.len())
            .finish()
    }
}

impl DiscriminatorSpec {
    pub fn new(
        family: DiscriminatorFamily,
        preset: Preset,
        channels: usize,
        conditional: bool,
        input_hw: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let in_channels = if conditional { 2 * channels } else { channels };
        let net = match family {
            DiscriminatorFamily::Patchgan => zoo::patchgan(in_channels, preset),
            DiscriminatorFamily::SrDiscriminator => zoo::sr_discriminator(in_channels, preset),
        };
        net.out_shape((in_channels, input_hw.0, input_hw.1))?;
        Ok(Self {
            family,
            preset,
            channels,
            conditional,
            input_hw,
            seed,
            params: net.init_params(seed),
            net,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Shape of the per-patch score map.
    pub fn score_shape(&self) -> (usize, usize, usize) {
        let c = if self.conditional { 2 * self.channels } else { self.channels };
        self.net
            .out_shape((c, self.input_hw.0, self.input_hw.1))
            .expect("validated at construction")
    }

    /// Builds the network input from an optional condition and the image.
    pub fn input(&self, condition: Option<&Tensor>, image: Tensor) -> Result<Tensor> {
        if (image.c, image.h, image.w) != (self.channels, self.input_hw.0, self.input_hw.1) {
            return Err(Error::shape(
                format!("{:?}", (self.channels, self.input_hw.0, self.input_hw.1)),
                format!("{:?}", image.shape()),
            ));
        }
        match (self.conditional, condition) {
            (true, Some(cond)) => Tensor::concat_channels(cond, &image),
            (true, None) => Err(Error::InvalidArgument(
                "conditional discriminator needs the generator input".into(),
            )),
            (false, _) => Ok(image),
        }
    }

    /// Per-patch probabilities with the backward cache.
    pub fn forward(&self, input: Tensor) -> (Tensor, Cache) {
        self.net.forward(&self.params, input)
    }

    pub fn backward_into(&self, cache: Cache, grad_out: Tensor, grads: &mut [f64]) -> Tensor {
        self.net.backward_into(&self.params, cache, grad_out, grads)
    }

    pub fn scores(&self, input: Tensor) -> Tensor {
        self.net.infer(&self.params, input)
    }

    /// Mean patch probability that `image` is real.
    pub fn probability(&self, condition: Option<&ImageTensor>, image: &ImageTensor) -> Result<f64> {
        let cond = condition.map(Tensor::from);
        let input = self.input(cond.as_ref(), Tensor::from(image))?;
        Ok(self.scores(input).mean())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_discriminator(self, dir.as_ref())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load_discriminator(dir.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn translators_preserve_shape_and_srresnet_upscales() {
        for preset in [Preset::Tiny, Preset::Small] {
            for family in [GeneratorFamily::Unet, GeneratorFamily::ResnetTranslator] {
                let g = GeneratorSpec::new(family, preset, 3, (32, 32), 1).unwrap();
                assert_eq!(g.output_shape(), g.input_shape());
                let out = g.apply(&ImageTensor::filled(32, 32, 3, 0.5)).unwrap();
                assert_eq!(out.shape(), (3, 32, 32));
                assert!(out.is_in_unit_range());
            }
            let sr = GeneratorSpec::new(GeneratorFamily::Srresnet, preset, 3, (8, 12), 1).unwrap();
            assert_eq!(sr.scale_factor(), 4);
            let out = sr.apply(&ImageTensor::filled(8, 12, 3, 0.5)).unwrap();
            assert_eq!(out.shape(), (3, 32, 48));
        }
    }

    #[test]
    fn generator_rejects_wrong_input() {
        let g = GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (16, 16), 1).unwrap();
        assert!(matches!(
            g.apply(&ImageTensor::filled(8, 8, 3, 0.1)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (18, 16), 1).is_err());
    }

    #[test]
    fn discriminator_scores_are_probabilities() {
        let d = DiscriminatorSpec::new(DiscriminatorFamily::Patchgan, Preset::Tiny, 3, true, (32, 32), 2).unwrap();
        assert_eq!(d.score_shape(), (1, 8, 8));
        let x = ImageTensor::filled(32, 32, 3, 0.2);
        let p = d.probability(Some(&x), &x).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(d.probability(None, &x).is_err());

        let sr = DiscriminatorSpec::new(DiscriminatorFamily::SrDiscriminator, Preset::Tiny, 3, false, (32, 32), 2).unwrap();
        assert_eq!(sr.score_shape(), (1, 1, 1));
    }

    #[test]
    fn identity_generator_passes_through() {
        let g = GeneratorSpec::identity(3, (5, 7));
        let x = ImageTensor::from_fn(5, 7, 3, |c, y, x| (c + y + x) as f64 / 20.0);
        assert_eq!(g.apply(&x).unwrap(), x);
    }
}
