//! The adversary: harvests `(x, F_V(x))` pairs through a [`QueryClient`],
//! augments them locally and trains surrogate generators.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Augmentation, TrainConfig};
use crate::dataset::{sample_file_name, save_paired, subsample, ImagePair, PairedDataset, Split};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::metrics::{
    fid, mean_pairwise, median, mean_std, psnr, ssim, translate_all, FeatureExtractor, WindowConfig,
};
use crate::models::{DiscriminatorFamily, DiscriminatorSpec, GeneratorFamily, GeneratorSpec, Preset, Translator};
use crate::par::{self, Exec};
use crate::resample::{resize, rotate, Filter};
use crate::seed;
use crate::service::QueryClient;
use crate::training::{train_paired, PairedOutcome};

pub const ROTATION_DEGREES: f64 = 5.0;
pub const CUTOUT_SIDE: f64 = 0.75;
pub const CONTRAST_GAIN: f64 = 1.2;

/// Links one harvested target to the ledger record that produced it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub index: usize,
    pub file: String,
    pub client_id: String,
    pub input_digest: String,
    pub output_digest: String,
}

#[derive(Debug)]
pub struct HarvestOutcome {
    pub dataset: PairedDataset,
    pub provenance: Vec<ProvenanceEntry>,
    /// The first error, in input order, that stopped the harvest.
    pub error: Option<Error>,
}

impl HarvestOutcome {
    /// Writes the pairs in the paired layout plus `provenance.jsonl`.
    pub fn persist(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        save_paired(&self.dataset, dir)?;
        let path = dir.join("provenance.jsonl");
        let mut out = Vec::new();
        for p in &self.provenance {
            serde_json::to_writer(&mut out, p).expect("entry serializes");
            out.push(b'\n');
        }
        fs::File::create(&path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| Error::io(&path, e))
    }
}

/// Queries every input, `parallelism` requests at a time, and keeps the
/// answered pairs in input order. Stops issuing new requests after the first
/// failure.
pub fn harvest_partial(client: &dyn QueryClient, inputs: &[ImageTensor], parallelism: usize) -> HarvestOutcome {
    let mut pairs = Vec::with_capacity(inputs.len());
    let mut provenance = Vec::with_capacity(inputs.len());
    let mut error = None;
    let width = parallelism.max(1);
    let exec = if width > 1 { Exec::Parallel } else { Exec::Sequential };
    for chunk in inputs.chunks(width) {
        let answers = par::map(exec, chunk, |x| client.query(x));
        for (x, answer) in chunk.iter().zip(answers) {
            match answer {
                Ok(y) => {
                    let index = pairs.len();
                    provenance.push(ProvenanceEntry {
                        index,
                        file: sample_file_name(index),
                        client_id: client.client_id().to_string(),
                        input_digest: hex::encode(x.digest()),
                        output_digest: hex::encode(y.digest()),
                    });
                    pairs.push(ImagePair::new(x.quantized(), y));
                }
                Err(e) => {
                    error.get_or_insert(e);
                }
            }
        }
        if error.is_some() {
            break;
        }
    }
    HarvestOutcome {
        dataset: PairedDataset::new(pairs, Split::Train),
        provenance,
        error,
    }
}

/// [`harvest_partial`] that persists to `persist_dir` (when given) and then
/// propagates any error.
pub fn harvest(
    client: &dyn QueryClient,
    inputs: &[ImageTensor],
    parallelism: usize,
    persist_dir: Option<&Path>,
) -> Result<PairedDataset> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("nothing to harvest".into()));
    }
    let outcome = harvest_partial(client, inputs, parallelism);
    if let Some(dir) = persist_dir {
        outcome.persist(dir)?;
    }
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.dataset),
    }
}

fn is_super_resolution(pair: &ImagePair) -> bool {
    pair.input.shape() != pair.target.shape()
}

fn contrast(img: &ImageTensor) -> ImageTensor {
    img.map(|v| 0.5 + CONTRAST_GAIN * (v - 0.5)).clipped()
}

/// Crops the same relative window (`CUTOUT_SIDE` of each side) from `img`
/// and resizes it back.
fn cutout(img: &ImageTensor, fy: f64, fx: f64) -> Result<ImageTensor> {
    let (_, h, w) = img.shape();
    let (ch, cw) = (
        ((h as f64 * CUTOUT_SIDE).round() as usize).max(1),
        ((w as f64 * CUTOUT_SIDE).round() as usize).max(1),
    );
    let y0 = ((h - ch) as f64 * fy).round() as usize;
    let x0 = ((w - cw) as f64 * fx).round() as usize;
    Ok(resize(&img.crop(y0, x0, ch, cw)?, h, w, Filter::Bilinear).clipped())
}

/// Applies one augmentation identically to both elements of a pair.
pub fn augment(pair: &ImagePair, op: Augmentation, rng: &mut impl Rng) -> Result<ImagePair> {
    let both = |f: &dyn Fn(&ImageTensor) -> ImageTensor| ImagePair::new(f(&pair.input), f(&pair.target));
    Ok(match op {
        Augmentation::Flip => both(&|x| x.flip_horizontal()),
        Augmentation::Contrast => both(&contrast),
        Augmentation::Rotate5 => {
            let angle = if rng.random_bool(0.5) { ROTATION_DEGREES } else { -ROTATION_DEGREES };
            both(&|x| rotate(x, angle).clipped())
        }
        Augmentation::Cutout => {
            if is_super_resolution(pair) {
                return Err(Error::InvalidArgument("cutout does not apply to super-resolution pairs".into()));
            }
            let (fy, fx) = (rng.random::<f64>(), rng.random::<f64>());
            ImagePair::new(cutout(&pair.input, fy, fx)?, cutout(&pair.target, fy, fx)?)
        }
    })
}

/// The original pairs followed by one augmented copy of every pair per
/// enabled operation, in operation order.
pub fn augment_dataset(ds: &PairedDataset, ops: &BTreeSet<Augmentation>, seed: u64) -> Result<PairedDataset> {
    let mut pairs = ds.pairs.clone();
    for &op in ops {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, op as u64));
        for p in &ds.pairs {
            pairs.push(augment(p, op, &mut rng)?);
        }
    }
    Ok(PairedDataset::new(pairs, ds.split))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateArch {
    /// U-Net generator with a conditional PatchGAN discriminator.
    #[default]
    Pix2pix,
    /// SRResNet generator with an unconditional discriminator.
    Srresnet,
}

/// Trains a surrogate `F_A` on harvested pairs.
pub fn train_surrogate(
    pairs: &PairedDataset,
    arch: SurrogateArch,
    preset: Preset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PairedOutcome> {
    let first = pairs
        .pairs
        .first()
        .ok_or_else(|| Error::InsufficientData("no harvested pairs".into()))?;
    let (c, h, w) = first.input.shape();
    let (g, d) = match arch {
        SurrogateArch::Pix2pix => (
            GeneratorSpec::new(GeneratorFamily::Unet, preset, c, (h, w), seed::derive(seed, 1))?,
            DiscriminatorSpec::new(DiscriminatorFamily::Patchgan, preset, c, true, (h, w), seed::derive(seed, 2))?,
        ),
        SurrogateArch::Srresnet => (
            GeneratorSpec::new(GeneratorFamily::Srresnet, preset, c, (h, w), seed::derive(seed, 1))?,
            DiscriminatorSpec::new(
                DiscriminatorFamily::SrDiscriminator,
                preset,
                c,
                false,
                (4 * h, 4 * w),
                seed::derive(seed, 2),
            )?,
        ),
    };
    train_paired(pairs, g, d, cfg, seed::derive(seed, 3))
}

/// Held-out evaluation data shared by every sweep cell.
pub struct EvalSet<'a> {
    pub inputs: &'a [ImageTensor],
    /// Victim outputs on `inputs` (experiment B reference).
    pub victim_outputs: &'a [ImageTensor],
    /// Ground truth for `inputs` (experiment C reference).
    pub truth: &'a [ImageTensor],
    pub extractor: &'a FeatureExtractor,
}

/// Experiment B (surrogate vs victim) and C (surrogate vs truth) metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    /// Proxy metric: mean SSIM of surrogate and victim outputs.
    #[serde(with = "crate::serde_float")]
    pub proxy_ssim: f64,
    #[serde(with = "crate::serde_float")]
    pub psnr_vs_victim: f64,
    #[serde(with = "crate::serde_float")]
    pub fid_vs_victim: f64,
    #[serde(with = "crate::serde_float")]
    pub ssim_vs_truth: f64,
    #[serde(with = "crate::serde_float")]
    pub psnr_vs_truth: f64,
    #[serde(with = "crate::serde_float")]
    pub fid_vs_truth: f64,
}

pub fn evaluate_surrogate(model: &dyn Translator, eval: &EvalSet<'_>) -> Result<CellMetrics> {
    let out = translate_all(model, eval.inputs)?;
    let w = WindowConfig::default();
    Ok(CellMetrics {
        proxy_ssim: mean_pairwise(&out, eval.victim_outputs, |a, b| ssim(a, b, &w))?,
        psnr_vs_victim: mean_pairwise(eval.victim_outputs, &out, |a, b| psnr(a, b, 1.0))?,
        fid_vs_victim: fid(&out, eval.victim_outputs, eval.extractor)?,
        ssim_vs_truth: mean_pairwise(&out, eval.truth, |a, b| ssim(a, b, &w))?,
        psnr_vs_truth: mean_pairwise(eval.truth, &out, |a, b| psnr(a, b, 1.0))?,
        fid_vs_truth: fid(&out, eval.truth, eval.extractor)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    pub augmentations: BTreeSet<Augmentation>,
    pub arch: SurrogateArch,
    pub preset: Preset,
    pub train: TrainConfig,
    pub seed: u64,
}

/// Identifies a sweep cell; the seed depends only on fraction index and
/// repetition, so augmented and plain cells share subsamples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub fraction: f64,
    pub repetition: usize,
    pub augmentations: BTreeSet<Augmentation>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub key: CellKey,
    pub train_pairs: usize,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
    pub final_generator_loss: Option<f64>,
}

impl SweepSpec {
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for (fi, &fraction) in self.fractions.iter().enumerate() {
            for repetition in 0..self.repetitions {
                out.push(CellKey {
                    fraction,
                    repetition,
                    augmentations: self.augmentations.clone(),
                    seed: seed::derive(self.seed, (fi as u64) << 32 | repetition as u64),
                });
            }
        }
        out
    }
}

/// Trains and evaluates one cell; failures are recorded, not raised.
pub fn run_cell(harvested: &PairedDataset, spec: &SweepSpec, key: &CellKey, eval: &EvalSet<'_>) -> CellResult {
    let run = || -> Result<(usize, CellMetrics, Option<f64>)> {
        let sub = subsample(harvested, key.fraction, key.seed)?;
        let train = augment_dataset(&sub, &key.augmentations, seed::derive(key.seed, 7))?;
        let outcome = train_surrogate(&train, spec.arch, spec.preset, &spec.train, key.seed)?;
        let metrics = evaluate_surrogate(&outcome.generator, eval)?;
        Ok((train.len(), metrics, outcome.log.epochs.last().map(|e| e.generator)))
    };
    match run() {
        Ok((n, metrics, loss)) => CellResult {
            key: key.clone(),
            train_pairs: n,
            metrics: Some(metrics),
            error: None,
            final_generator_loss: loss,
        },
        Err(e) => CellResult {
            key: key.clone(),
            train_pairs: 0,
            metrics: None,
            error: Some(e.to_string()),
            final_generator_loss: None,
        },
    }
}

/// Per-fraction summary of the proxy metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub n_runs: usize,
    pub mean: f64,
    pub std: Option<f64>,
    pub median: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn proxy_values(&self, fraction: f64, augmentations: &BTreeSet<Augmentation>) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.key.fraction == fraction && &c.key.augmentations == augmentations)
            .filter_map(|c| c.metrics.map(|m| m.proxy_ssim))
            .collect()
    }

    /// One point per distinct fraction (ascending) among successful cells
    /// with the given augmentation set.
    pub fn curve(&self, augmentations: &BTreeSet<Augmentation>) -> Vec<CurvePoint> {
        let mut fractions: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| &c.key.augmentations == augmentations)
            .map(|c| c.key.fraction)
            .collect();
        fractions.sort_by(f64::total_cmp);
        fractions.dedup();
        fractions
            .into_iter()
            .filter_map(|f| {
                let v = self.proxy_values(f, augmentations);
                let (mean, std) = mean_std(&v)?;
                Some(CurvePoint {
                    fraction: f,
                    n_runs: v.len(),
                    mean,
                    std,
                    median: median(&v)?,
                })
            })
            .collect()
    }
}

/// Runs every cell of `spec` (in parallel, results in cell order), skipping
/// keys listed in `done`.
pub fn budget_sweep(
    harvested: &PairedDataset,
    spec: &SweepSpec,
    eval: &EvalSet<'_>,
    done: &[CellKey],
) -> Result<SweepReport> {
    if harvested.is_empty() {
        return Err(Error::InsufficientData("no harvested pairs".into()));
    }
    if spec.repetitions == 0 || spec.fractions.is_empty() {
        return Err(Error::InvalidArgument("sweep needs at least one fraction and repetition".into()));
    }
    let todo: Vec<CellKey> = spec.cells().into_iter().filter(|k| !done.contains(k)).collect();
    let cells = par::map(Exec::default(), &todo, |key| run_cell(harvested, spec, key, eval));
    Ok(SweepReport { cells })
}

/// Whether `medians` (ordered by increasing budget) never decrease by more
/// than `tolerance` between consecutive points.
pub fn is_non_decreasing_to_plateau(medians: &[f64], tolerance: f64) -> bool {
    medians.windows(2).all(|w| w[1] >= w[0] - tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(h: usize, w: usize, scale: usize) -> ImagePair {
        let x = ImageTensor::from_fn(h, w, 3, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 / 10.0);
        let t = ImageTensor::from_fn(h * scale, w * scale, 3, |c, y, x| ((c + y + 2 * x) % 5) as f64 / 4.0);
        ImagePair::new(x, t)
    }

    #[test]
    fn flip_twice_is_identity() {
        let p = pair(6, 9, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment(&p, Augmentation::Flip, &mut rng).unwrap();
        assert_ne!(once, p);
        assert_eq!(augment(&once, Augmentation::Flip, &mut rng).unwrap(), p);
    }

    #[test]
    fn rotate_constant_stays_constant() {
        let c = ImageTensor::filled(12, 12, 3, 0.4);
        let p = ImagePair::new(c.clone(), c);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = augment(&p, Augmentation::Rotate5, &mut rng).unwrap();
        assert!(r.input.values().iter().chain(r.target.values()).all(|v| (v - 0.4).abs() < 1e-12));
    }

    #[test]
    fn contrast_fixes_mid_grey() {
        let g = ImageTensor::filled(4, 4, 3, 0.5);
        let p = ImagePair::new(g.clone(), g.clone());
        let out = augment(&p, Augmentation::Contrast, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(out.input, g);
        let hi = augment(&pair(4, 4, 1), Augmentation::Contrast, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(hi.input.is_in_unit_range());
    }

    #[test]
    fn cutout_keeps_shape_and_rejects_super_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = pair(16, 16, 1);
        let out = augment(&p, Augmentation::Cutout, &mut rng).unwrap();
        assert_eq!(out.input.shape(), p.input.shape());
        assert_eq!(out.target.shape(), p.target.shape());
        assert!(augment(&pair(4, 4, 4), Augmentation::Cutout, &mut rng).is_err());
        assert!(augment(&pair(4, 4, 4), Augmentation::Flip, &mut rng).is_ok());
    }

    #[test]
    fn augment_dataset_appends_one_copy_per_op() {
        let ds = PairedDataset::new(vec![pair(8, 8, 1), pair(8, 8, 1)], Split::Train);
        let ops: BTreeSet<_> = [Augmentation::Flip, Augmentation::Contrast].into();
        let out = augment_dataset(&ds, &ops, 4).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(&out.pairs[..2], &ds.pairs[..]);
    }

    #[test]
    fn plateau_check() {
        assert!(is_non_decreasing_to_plateau(&[0.5, 0.6, 0.6, 0.6], 0.0));
        assert!(is_non_decreasing_to_plateau(&[0.5, 0.6, 0.595], 0.01));
        assert!(!is_non_decreasing_to_plateau(&[0.5, 0.6, 0.55], 0.01));
    }

    #[test]
    fn cell_seeds_ignore_augmentations() {
        let spec = SweepSpec {
            fractions: vec![0.25, 1.0],
            repetitions: 2,
            augmentations: BTreeSet::new(),
            arch: SurrogateArch::Pix2pix,
            preset: Preset::Tiny,
            train: TrainConfig::default(),
            seed: 1,
        };
        let flipped = SweepSpec {
            augmentations: [Augmentation::Flip].into(),
            ..spec.clone()
        };
        let a: Vec<u64> = spec.cells().iter().map(|k| k.seed).collect();
        let b: Vec<u64> = flipped.cells().iter().map(|k| k.seed).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }
}
