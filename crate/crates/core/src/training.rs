//! Victim trainers: CycleGAN for unpaired style tasks and a paired GAN
//! trainer shared by super-resolution victims and surrogates.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::dataset::{ImagePair, PairedDataset, UnpairedDataset};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::models::losses::{
    cyclegan_generator_loss_grads, discriminator_loss_grads, pix2pix_generator_loss_grads, CycleModels,
};
use crate::models::{DiscriminatorFamily, DiscriminatorSpec, GeneratorFamily, GeneratorSpec, Preset};
use crate::nn::{Adam, Tensor};
use crate::par::{self, Exec};
use crate::resample::{downscale_bicubic, upscale_bicubic};
use crate::seed;

/// Losses of one optimizer step, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub generator: f64,
    pub discriminator: f64,
}

/// Per-epoch means of the step records.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub generator: f64,
    pub discriminator: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    fn close_epoch(&mut self, epoch: usize) {
        let rows: Vec<_> = self.steps.iter().filter(|s| s.epoch == epoch).collect();
        let n = rows.len().max(1) as f64;
        self.epochs.push(EpochRecord {
            epoch,
            steps: rows.len(),
            generator: rows.iter().map(|s| s.generator).sum::<f64>() / n,
            discriminator: rows.iter().map(|s| s.discriminator).sum::<f64>() / n,
        });
    }

    pub fn generator_trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.generator).collect()
    }

    /// One JSON object per step.
    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for s in &self.steps {
            serde_json::to_writer(&mut out, s).expect("step serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

fn ensure_finite(values: &[f64], epoch: usize, step: usize, g: &GeneratorSpec) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            step,
            last_finite: Box::new(g.clone()),
        })
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive(seed, epoch as u64)));
    order
}

/// Mean of per-sample `(loss, grads)` results, reduced in sample order.
fn average(results: Vec<Result<(f64, Vec<f64>)>>, n_params: usize) -> Result<(f64, Vec<f64>)> {
    let n = results.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; n_params];
    for r in results {
        let (l, g) = r?;
        loss += l / n;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b / n);
    }
    Ok((loss, grads))
}

fn adam(n: usize, cfg: &TrainConfig) -> Adam {
    Adam::new(n, cfg.learning_rate, cfg.beta1, cfg.beta2)
}

/// The four networks of a CycleGAN.
#[derive(Clone, Debug)]
pub struct CycleGan {
    /// Domain A to domain B; this is the served victim.
    pub g_ab: GeneratorSpec,
    pub g_ba: GeneratorSpec,
    pub d_a: DiscriminatorSpec,
    pub d_b: DiscriminatorSpec,
}

impl CycleGan {
    pub fn new(channels: usize, hw: (usize, usize), preset: Preset, seed: u64) -> Result<Self> {
        let g = |tag| GeneratorSpec::new(GeneratorFamily::ResnetTranslator, preset, channels, hw, seed::derive(seed, tag));
        let d = |tag| {
            DiscriminatorSpec::new(DiscriminatorFamily::Patchgan, preset, channels, false, hw, seed::derive(seed, tag))
        };
        Ok(Self {
            g_ab: g(1)?,
            g_ba: g(2)?,
            d_a: d(3)?,
            d_b: d(4)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct UnpairedOutcome {
    pub models: CycleGan,
    pub log: TrainingLog,
}

impl UnpairedOutcome {
    /// The victim `A -> B` generator.
    pub fn victim(&self) -> &GeneratorSpec {
        &self.models.g_ab
    }
}

fn domain_shape(images: &[ImageTensor], name: &str) -> Result<(usize, usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::InsufficientData(format!("{name} is empty")))?;
    if let Some(bad) = images.iter().find(|x| x.shape() != first.shape()) {
        return Err(Error::shape(format!("{name} {:?}", first.shape()), format!("{:?}", bad.shape())));
    }
    Ok(first.shape())
}

/// Trains a CycleGAN on two unpaired domains. Each step first updates both
/// discriminators against the current generators' outputs, then updates the
/// generators against the updated discriminators.
pub fn train_unpaired_victim(
    data: &UnpairedDataset,
    preset: Preset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<UnpairedOutcome> {
    cfg.validate("victim")?;
    let shape_a = domain_shape(&data.domain_a, "domain_a")?;
    let shape_b = domain_shape(&data.domain_b, "domain_b")?;
    if shape_a != shape_b {
        return Err(Error::shape(format!("{shape_a:?}"), format!("{shape_b:?}")));
    }
    let (c, h, w) = shape_a;
    let mut m = CycleGan::new(c, (h, w), preset, seed)?;
    let mut opt_g_ab = adam(m.g_ab.params.len(), cfg);
    let mut opt_g_ba = adam(m.g_ba.params.len(), cfg);
    let mut opt_d_a = adam(m.d_a.params.len(), cfg);
    let mut opt_d_b = adam(m.d_b.params.len(), cfg);
    let mut log = TrainingLog::default();
    let exec = Exec::default();
    let (na, nb) = (data.domain_a.len(), data.domain_b.len());
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let order_a = epoch_order(na, seed::derive(seed, 10), epoch);
        let order_b = epoch_order(nb, seed::derive(seed, 11), epoch);
        for (k, chunk) in order_a.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&ImageTensor, &ImageTensor)> = chunk
                .iter()
                .enumerate()
                .map(|(j, &ia)| (&data.domain_a[ia], &data.domain_b[order_b[(k * cfg.batch_size + j) % nb]]))
                .collect();

            let disc = par::map(exec, &batch, |(a, b)| {
                let (at, bt) = (Tensor::from(*a), Tensor::from(*b));
                let fake_b = m.g_ab.infer(at.clone());
                let fake_a = m.g_ba.infer(bt.clone());
                let (la, ga) = discriminator_loss_grads(&m.d_a, None, &at, &fake_a)?;
                let (lb, gb) = discriminator_loss_grads(&m.d_b, None, &bt, &fake_b)?;
                Ok((la, ga, lb, gb))
            });
            let mut split_a = Vec::with_capacity(disc.len());
            let mut split_b = Vec::with_capacity(disc.len());
            for r in disc {
                let (la, ga, lb, gb): (f64, Vec<f64>, f64, Vec<f64>) = r?;
                split_a.push(Ok((la, ga)));
                split_b.push(Ok((lb, gb)));
            }
            let (la, grad_da) = average(split_a, m.d_a.params.len())?;
            let (lb, grad_db) = average(split_b, m.d_b.params.len())?;
            let d_loss = la + lb;
            ensure_finite(&[d_loss], epoch, step, &m.g_ab)?;

            opt_d_a.step(&mut m.d_a.params, &grad_da);
            opt_d_b.step(&mut m.d_b.params, &grad_db);
            let models = CycleModels {
                g_ab: &m.g_ab,
                g_ba: &m.g_ba,
                d_a: &m.d_a,
                d_b: &m.d_b,
            };
            let gen = par::map(exec, &batch, |(a, b)| cyclegan_generator_loss_grads(models, a, b, &cfg.loss));
            let n = batch.len() as f64;
            let mut g_loss = 0.0;
            let mut grad_ab = vec![0.0; m.g_ab.params.len()];
            let mut grad_ba = vec![0.0; m.g_ba.params.len()];
            for r in gen {
                let (terms, gab, gba) = r?;
                g_loss += terms.total / n;
                grad_ab.iter_mut().zip(&gab).for_each(|(x, y)| *x += y / n);
                grad_ba.iter_mut().zip(&gba).for_each(|(x, y)| *x += y / n);
            }
            ensure_finite(&[g_loss], epoch, step, &m.g_ab)?;
            opt_g_ab.step(&mut m.g_ab.params, &grad_ab);
            opt_g_ba.step(&mut m.g_ba.params, &grad_ba);
            log.steps.push(StepRecord {
                epoch,
                step,
                generator: g_loss,
                discriminator: d_loss,
            });
            step += 1;
        }
        log.close_epoch(epoch);
    }
    Ok(UnpairedOutcome { models: m, log })
}

#[derive(Clone, Debug)]
pub struct PairedOutcome {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    pub log: TrainingLog,
}

fn check_pairs(pairs: &[ImagePair], g: &GeneratorSpec) -> Result<()> {
    for p in pairs {
        g.check_input(&p.input)?;
        if p.target.shape() != g.output_shape() {
            return Err(Error::shape(
                format!("target {:?}", g.output_shape()),
                format!("{:?}", p.target.shape()),
            ));
        }
    }
    Ok(())
}

/// Adversarial training on `(input, target)` pairs. Each step updates the
/// discriminator on real targets versus current generator outputs, then the
/// generator on `adversarial + lambda_identity * L1` against the updated
/// discriminator. A conditional discriminator sees the input as well.
pub fn train_paired(
    pairs: &PairedDataset,
    mut g: GeneratorSpec,
    mut d: DiscriminatorSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PairedOutcome> {
    cfg.validate("train")?;
    check_pairs(&pairs.pairs, &g)?;
    if d.channels != g.channels || d.input_hw != (g.output_shape().1, g.output_shape().2) {
        return Err(Error::shape(
            format!("discriminator over {:?}", g.output_shape()),
            format!("{} channels at {:?}", d.channels, d.input_hw),
        ));
    }
    let mut opt_g = adam(g.params.len(), cfg);
    let mut opt_d = adam(d.params.len(), cfg);
    let mut log = TrainingLog::default();
    let exec = Exec::default();
    let mut step = 0;
    if pairs.is_empty() && cfg.epochs > 0 {
        return Err(Error::InsufficientData("no training pairs".into()));
    }
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(pairs.len(), seed, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ImagePair> = chunk.iter().map(|&i| &pairs.pairs[i]).collect();
            let disc = par::map(exec, &batch, |p| {
                let x = Tensor::from(&p.input);
                let fake = g.infer(x.clone());
                let cond = d.conditional.then_some(&x);
                discriminator_loss_grads(&d, cond, &Tensor::from(&p.target), &fake)
            });
            let (d_loss, d_grads) = average(disc, d.params.len())?;
            ensure_finite(&[d_loss], epoch, step, &g)?;
            opt_d.step(&mut d.params, &d_grads);

            let gen = par::map(exec, &batch, |p| pix2pix_generator_loss_grads(&g, &d, p, &cfg.loss));
            let (g_loss, g_grads) = average(gen, g.params.len())?;
            ensure_finite(&[g_loss], epoch, step, &g)?;
            opt_g.step(&mut g.params, &g_grads);
            log.steps.push(StepRecord {
                epoch,
                step,
                generator: g_loss,
                discriminator: d_loss,
            });
            step += 1;
        }
        log.close_epoch(epoch);
    }
    Ok(PairedOutcome {
        generator: g,
        discriminator: d,
        log,
    })
}

/// SRResNet generator with an unconditional discriminator on high-res images,
/// trained with `lambda_content` as the L1 weight.
pub fn train_sr_victim(pairs: &PairedDataset, preset: Preset, cfg: &TrainConfig, seed: u64) -> Result<PairedOutcome> {
    let first = pairs
        .pairs
        .first()
        .ok_or_else(|| Error::InsufficientData("no super-resolution pairs".into()))?;
    for p in &pairs.pairs {
        let (ci, hi, wi) = p.input.shape();
        let (ct, ht, wt) = p.target.shape();
        if ci != ct || ht != 4 * hi || wt != 4 * wi {
            return Err(Error::shape(
                format!("target 4x input {:?}", (ci, 4 * hi, 4 * wi)),
                format!("{:?}", (ct, ht, wt)),
            ));
        }
    }
    let (c, h, w) = first.input.shape();
    let g = GeneratorSpec::new(GeneratorFamily::Srresnet, preset, c, (h, w), seed::derive(seed, 1))?;
    let d = DiscriminatorSpec::new(
        DiscriminatorFamily::SrDiscriminator,
        preset,
        c,
        false,
        (4 * h, 4 * w),
        seed::derive(seed, 2),
    )?;
    let mut cfg = cfg.clone();
    cfg.loss.lambda_identity = cfg.loss.lambda_content;
    train_paired(pairs, g, d, &cfg, seed::derive(seed, 3))
}

/// Bicubic 4x downscaling, clipped to `[0, 1]`.
pub fn make_lr(hr: &ImageTensor) -> Result<ImageTensor> {
    downscale_bicubic(hr, 4)
}

/// The non-learned super-resolution baseline.
pub fn bicubic_upscale(lr: &ImageTensor) -> ImageTensor {
    upscale_bicubic(lr, 4).clipped()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::ToyTask;

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialized_generator() {
        let data = ToyTask::new(0, 16).victim_data(2);
        let out = train_unpaired_victim(&data, Preset::Tiny, &quick(0), 5).unwrap();
        let fresh = CycleGan::new(3, (16, 16), Preset::Tiny, 5).unwrap();
        assert_eq!(out.models.g_ab, fresh.g_ab);
        assert!(out.log.steps.is_empty());
    }

    #[test]
    fn paired_training_is_deterministic() {
        let pairs = ToyTask::new(1, 16).test_pairs(3);
        let g = GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (16, 16), 1).unwrap();
        let d = DiscriminatorSpec::new(DiscriminatorFamily::Patchgan, Preset::Tiny, 3, true, (16, 16), 2).unwrap();
        let a = train_paired(&pairs, g.clone(), d.clone(), &quick(2), 9).unwrap();
        let b = train_paired(&pairs, g, d, &quick(2), 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.generator, b.generator);
        assert_eq!(a.log.epochs.len(), 2);
        assert!(a.log.steps.iter().all(|s| s.generator.is_finite() && s.discriminator.is_finite()));
    }

    #[test]
    fn make_lr_quarters_the_sides() {
        let hr = ImageTensor::filled(400, 700, 3, 0.3);
        let lr = make_lr(&hr).unwrap();
        assert_eq!(lr.shape(), (3, 100, 175));
        assert!(lr.values().iter().all(|v| (v - 0.3).abs() < 1e-12));
        assert!(make_lr(&ImageTensor::filled(10, 8, 1, 0.0)).is_err());
    }
}
