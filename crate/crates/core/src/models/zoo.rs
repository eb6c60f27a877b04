//! Architecture builders for every generator and discriminator family.

use crate::nn::LEAKY_SLOPE;
use crate::nn::{Layer, NetBuilder, Network};

use super::Preset;

fn lrelu() -> Layer {
    Layer::LeakyRelu(LEAKY_SLOPE)
}

/// U-Net: a stride-2 encoder and nearest-upsampling decoder with channel
/// concatenation skips at every resolution.
pub(crate) fn unet(channels: usize, preset: Preset) -> Network {
    let mut b = NetBuilder::new();
    let base = preset.base_width();
    let depth = preset.unet_depth();
    let enc0 = b.conv3(channels, base, 1);
    let body = unet_level(&mut b, base, base, 1, depth);
    let head = b.conv3(2 * base, channels, 1);
    let root = Layer::Seq(vec![enc0, lrelu(), body, head, Layer::Sigmoid]);
    b.finish(root)
}

fn unet_level(b: &mut NetBuilder, cin: usize, base: usize, level: usize, depth: usize) -> Layer {
    let cout = (base << level).min(base * 8);
    let down = b.conv3(cin, cout, 2);
    let mut inner = vec![down, lrelu()];
    let mid_channels = if level < depth {
        inner.push(unet_level(b, cout, base, level + 1, depth));
        2 * cout
    } else {
        cout
    };
    inner.push(b.conv3(mid_channels, cin, 1));
    inner.push(lrelu());
    inner.push(Layer::Upsample2x);
    Layer::SkipConcat(Box::new(Layer::Seq(inner)))
}

fn residual_block(b: &mut NetBuilder, ch: usize) -> Layer {
    let c1 = b.conv3(ch, ch, 1);
    let c2 = b.conv3(ch, ch, 1);
    Layer::Residual(Box::new(Layer::Seq(vec![c1, lrelu(), c2])))
}

/// CycleGAN-style translator: downsample, residual blocks, upsample.
pub(crate) fn resnet_translator(channels: usize, preset: Preset) -> Network {
    let mut b = NetBuilder::new();
    let base = preset.base_width();
    let downs = preset.translator_downsamples();
    let mut layers = vec![b.conv3(channels, base, 1), lrelu()];
    let mut ch = base;
    for _ in 0..downs {
        layers.push(b.conv3(ch, 2 * ch, 2));
        layers.push(lrelu());
        ch *= 2;
    }
    for _ in 0..preset.residual_blocks() {
        layers.push(residual_block(&mut b, ch));
    }
    for _ in 0..downs {
        layers.push(b.conv3(ch, ch / 2, 1));
        layers.push(lrelu());
        layers.push(Layer::Upsample2x);
        ch /= 2;
    }
    layers.push(b.conv3(ch, channels, 1));
    layers.push(Layer::Sigmoid);
    b.finish(Layer::Seq(layers))
}

/// SRResNet-style 4x upscaler: residual trunk with a global skip, then two
/// upsample+conv stages, added to a fixed bicubic upsampling of the input.
/// The head starts at zero, so an untrained model is exactly bicubic.
pub(crate) fn srresnet(channels: usize, preset: Preset) -> Network {
    let mut b = NetBuilder::new();
    let base = preset.base_width();
    let head = b.conv3(channels, base, 1);
    let mut trunk: Vec<Layer> = (0..preset.residual_blocks())
        .map(|_| residual_block(&mut b, base))
        .collect();
    trunk.push(b.conv3(base, base, 1));
    let mut layers = vec![head, lrelu(), Layer::Residual(Box::new(Layer::Seq(trunk)))];
    for _ in 0..2 {
        layers.push(Layer::Upsample2x);
        layers.push(b.conv3(base, base, 1));
        layers.push(lrelu());
    }
    layers.push(b.zero_conv3(base, channels));
    b.finish(Layer::Sum(vec![Layer::UpsampleBicubic(4), Layer::Seq(layers)]))
}

/// Fully convolutional PatchGAN emitting one probability per patch.
pub(crate) fn patchgan(in_channels: usize, preset: Preset) -> Network {
    let mut b = NetBuilder::new();
    let base = preset.base_width();
    let mut layers = Vec::new();
    let mut ch = in_channels;
    for i in 0..preset.patch_downsamples() {
        let out = (base << i).min(base * 8);
        layers.push(b.conv3(ch, out, 2));
        layers.push(lrelu());
        ch = out;
    }
    layers.push(b.conv3(ch, 1, 1));
    layers.push(Layer::Sigmoid);
    b.finish(Layer::Seq(layers))
}

/// Strided convolutions pooled to a single image-level probability.
pub(crate) fn sr_discriminator(in_channels: usize, preset: Preset) -> Network {
    let mut b = NetBuilder::new();
    let base = preset.base_width();
    let mut layers = Vec::new();
    let mut ch = in_channels;
    for i in 0..3 {
        let out = (base << i.min(1)).min(base * 8);
        layers.push(b.conv3(ch, out, 2));
        layers.push(lrelu());
        ch = out;
    }
    layers.push(Layer::GlobalAvgPool);
    layers.push(b.conv(ch, 1, 1, 1, 0));
    layers.push(Layer::Sigmoid);
    b.finish(Layer::Seq(layers))
}
