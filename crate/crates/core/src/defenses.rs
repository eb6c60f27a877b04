//! Output-side defenses: trigger watermarking and PGD output poisoning.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PgdConfig, TriggerKind, WatermarkConfig, WatermarkMode};
use crate::dataset::{save_paired, ImagePair, PairedDataset, Split};
use crate::image::{ImageDigest, ImageTensor};
use crate::metrics::{ssim, WindowConfig};
use crate::models::losses::{mean_log, mean_log1m};
use crate::models::{DiscriminatorSpec, Translator};
use crate::nn::Tensor;
use crate::par::{self, Exec};
use crate::resample::{convolve_separable_replicate, gaussian_kernel};
use crate::service::{Defended, DefenseHook, QueryContext};
use crate::{Error, Result};

pub const BLUR_SIGMA: f64 = 2.0;
pub const BLUR_SIZE: usize = 9;
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];
pub const TEXT: &str = "WM";
/// Top-left corner `(y, x)` of the first glyph.
pub const TEXT_ORIGIN: (usize, usize) = (1, 1);
pub const TEXT_OPACITY: f64 = 0.8;
pub const KEY_COMMITMENT_FILE: &str = "key_commitment.txt";
pub const TRIGGER_INDEX_FILE: &str = "triggers.jsonl";

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 5;

fn glyph(ch: char) -> [&'static str; GLYPH_H] {
    match ch {
        'W' => ["#...#", "#...#", "#.#.#", "#.#.#", ".#.#."],
        'M' => ["#...#", "##.##", "#.#.#", "#...#", "#...#"],
        _ => ["#####", "#...#", "#...#", "#...#", "#####"],
    }
}

/// Pixel coordinates `(y, x)` inked by [`TEXT`], before clipping to the image.
pub fn text_mask() -> Vec<(usize, usize)> {
    let (oy, ox) = TEXT_ORIGIN;
    let mut mask = Vec::new();
    for (i, ch) in TEXT.chars().enumerate() {
        let gx = ox + i * (GLYPH_W + 1);
        for (row, line) in glyph(ch).iter().enumerate() {
            for (col, b) in line.bytes().enumerate() {
                if b == b'#' {
                    mask.push((oy + row, gx + col));
                }
            }
        }
    }
    mask
}

fn top64(key: &[u8], digest: &ImageDigest) -> u64 {
    let mut h = Sha256::new();
    h.update(key);
    h.update(digest);
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Keyed-hash trigger test: the top 64 bits of `sha256(key ‖ digest)` fall below `⌊rate·2^64⌋`.
pub fn watermark_select(digest: &ImageDigest, key: &[u8], rate: f64) -> bool {
    if !(rate > 0.0) {
        return false;
    }
    if rate >= 1.0 {
        return true;
    }
    // f64 -> u64 casts saturate, and rate < 1 keeps this below 2^64.
    let threshold = (rate * 2f64.powi(64)).floor() as u64;
    top64(key, digest) < threshold
}

/// Quota test for the `ordinal`-th (1-based) query of a client: after `k` queries exactly
/// `⌈rate·k⌉` have been selected.
pub fn quota_select(ordinal: u64, rate: f64) -> bool {
    if ordinal == 0 || !(rate > 0.0) {
        return false;
    }
    let ppb = (rate.min(1.0) * 1e9).round() as u128;
    let marked = |k: u64| (ppb * k as u128).div_ceil(1_000_000_000);
    marked(ordinal) > marked(ordinal - 1)
}

/// Hex SHA-256 of the secret key, published instead of the key itself.
pub fn key_commitment(key: &[u8]) -> String {
    hex::encode(Sha256::digest(key))
}

pub fn apply_trigger(image: &ImageTensor, kind: TriggerKind) -> ImageTensor {
    match kind {
        TriggerKind::Blur => {
            convolve_separable_replicate(image, &gaussian_kernel(BLUR_SIZE, BLUR_SIGMA)).clipped()
        }
        TriggerKind::Monochrome => monochrome(image),
        TriggerKind::Text => stamp_text(image),
    }
}

fn monochrome(image: &ImageTensor) -> ImageTensor {
    if image.channels() == 1 {
        return image.clone().clipped();
    }
    ImageTensor::from_fn(image.height(), image.width(), 3, |_, y, x| {
        let (r, g, b) = (image.get(0, y, x), image.get(1, y, x), image.get(2, y, x));
        if r == g && g == b {
            r
        } else {
            LUMA[0] * r + LUMA[1] * g + LUMA[2] * b
        }
    })
    .clipped()
}

/// Stamps [`TEXT`] at [`TEXT_OPACITY`], with white ink on dark pixels and black ink on light ones.
fn stamp_text(image: &ImageTensor) -> ImageTensor {
    let mut out = image.clone().clipped();
    let (c, h, w) = out.shape();
    for (y, x) in text_mask() {
        if y >= h || x >= w {
            continue;
        }
        let mean = (0..c).map(|ch| out.get(ch, y, x)).sum::<f64>() / c as f64;
        let ink = if mean < 0.5 { 1.0 } else { 0.0 };
        for ch in 0..c {
            let v = out.get(ch, y, x);
            out.set(ch, y, x, (1.0 - TEXT_OPACITY) * v + TEXT_OPACITY * ink);
        }
    }
    out
}

/// One stored trigger, as exported alongside the image pairs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriggerEntry {
    pub index: usize,
    pub client_id: String,
    pub input_digest: String,
    pub output_digest: String,
}

/// Watermarking hook: modifies a small fraction of responses and remembers them.
pub struct WatermarkHook {
    key: Vec<u8>,
    config: WatermarkConfig,
    triggers: Mutex<BTreeMap<String, Vec<ImagePair>>>,
}

impl WatermarkHook {
    pub fn new(key: impl Into<Vec<u8>>, config: WatermarkConfig) -> Result<Self> {
        let key = key.into();
        if key.is_empty() {
            return Err(Error::config("secret_key", "watermark key must not be empty"));
        }
        if !(config.rate > 0.0 && config.rate < 1.0) {
            return Err(Error::config("service.watermark.rate", "must lie in (0, 1)"));
        }
        Ok(Self {
            key,
            config,
            triggers: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &WatermarkConfig {
        &self.config
    }

    pub fn commitment(&self) -> String {
        key_commitment(&self.key)
    }

    fn selected(&self, ctx: &QueryContext<'_>) -> bool {
        match self.config.mode {
            WatermarkMode::Hash => watermark_select(ctx.input_digest, &self.key, self.config.rate),
            WatermarkMode::Quota => quota_select(ctx.ordinal, self.config.rate),
        }
    }

    /// Triggers issued to one client, in issue order.
    pub fn trigger_set(&self, client_id: &str) -> PairedDataset {
        let map = self.triggers.lock().expect("trigger store poisoned");
        PairedDataset::new(map.get(client_id).cloned().unwrap_or_default(), Split::Train)
    }

    /// All triggers, grouped by client id in lexicographic order.
    pub fn all_triggers(&self) -> Vec<(String, ImagePair)> {
        let map = self.triggers.lock().expect("trigger store poisoned");
        map.iter()
            .flat_map(|(c, v)| v.iter().map(move |p| (c.clone(), p.clone())))
            .collect()
    }

    /// Writes the trigger set in paired layout plus an index and the key commitment.
    pub fn export(&self, dir: impl AsRef<Path>) -> Result<usize> {
        let dir = dir.as_ref();
        let all = self.all_triggers();
        let ds = PairedDataset::new(all.iter().map(|(_, p)| p.clone()).collect(), Split::Train);
        save_paired(&ds, dir)?;
        let mut index = String::new();
        for (i, (client, pair)) in all.iter().enumerate() {
            let entry = TriggerEntry {
                index: i,
                client_id: client.clone(),
                input_digest: hex::encode(pair.input.digest()),
                output_digest: hex::encode(pair.target.digest()),
            };
            index.push_str(&serde_json::to_string(&entry).expect("entry serializes"));
            index.push('\n');
        }
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write(TRIGGER_INDEX_FILE, index)?;
        write(KEY_COMMITMENT_FILE, format!("{}\n", self.commitment()))?;
        Ok(all.len())
    }

    /// The victim as the defender sees it: watermark triggers reproduced on the inputs that
    /// were (or, in hash mode, would be) selected.
    pub fn watermarked(&self, inner: Arc<dyn Translator>) -> WatermarkedModel {
        let recorded = self
            .all_triggers()
            .into_iter()
            .map(|(_, p)| (p.input.quantized().digest(), p.target))
            .collect();
        WatermarkedModel {
            inner,
            key: self.key.clone(),
            config: self.config.clone(),
            recorded,
        }
    }
}

impl DefenseHook for WatermarkHook {
    fn apply(&self, ctx: QueryContext<'_>, output: ImageTensor) -> Result<(ImageTensor, Defended)> {
        if !self.selected(&ctx) {
            return Ok((output, Defended::None));
        }
        let marked = apply_trigger(&output, self.config.trigger).quantized();
        let pair = ImagePair::new(ctx.input.clone(), marked.clone());
        self.triggers
            .lock()
            .expect("trigger store poisoned")
            .entry(ctx.client_id.to_string())
            .or_default()
            .push(pair);
        Ok((marked, Defended::Watermark))
    }
}

/// A translator plus the watermark behaviour of the hook that guards it.
pub struct WatermarkedModel {
    inner: Arc<dyn Translator>,
    key: Vec<u8>,
    config: WatermarkConfig,
    recorded: HashMap<ImageDigest, ImageTensor>,
}

impl Translator for WatermarkedModel {
    fn input_shape(&self) -> (usize, usize, usize) {
        self.inner.input_shape()
    }

    fn translate(&self, x: &ImageTensor) -> Result<ImageTensor> {
        let q = x.quantized();
        let digest = q.digest();
        if let Some(out) = self.recorded.get(&digest) {
            return Ok(out.clone());
        }
        let out = self.inner.translate(&q)?.clipped().quantized();
        if self.config.mode == WatermarkMode::Hash && watermark_select(&digest, &self.key, self.config.rate) {
            return Ok(apply_trigger(&out, self.config.trigger).quantized());
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WatermarkReport {
    /// SSIM of `model(input)` against each stored trigger output.
    pub similarities: Vec<f64>,
    pub matches: usize,
    pub match_rate: f64,
    pub ssim_threshold: f64,
    pub match_threshold: f64,
    /// Theft is declared when `match_rate >= match_threshold`.
    pub theft_detected: bool,
}

pub fn verify_watermark(
    model: &dyn Translator,
    trigger_set: &PairedDataset,
    ssim_threshold: f64,
    match_threshold: f64,
) -> Result<WatermarkReport> {
    if trigger_set.is_empty() {
        return Err(Error::InsufficientData("trigger set is empty".into()));
    }
    let expected = model.input_shape();
    for p in &trigger_set.pairs {
        if p.input.shape() != expected {
            return Err(Error::shape(format!("{expected:?}"), format!("{:?}", p.input.shape())));
        }
    }
    let cfg = WindowConfig::default();
    let sims: Vec<Result<f64>> = par::map(Exec::default(), &trigger_set.pairs, |p| {
        let out = model.translate(&p.input)?;
        ssim(&out, &p.target, &cfg)
    });
    let similarities = sims.into_iter().collect::<Result<Vec<_>>>()?;
    let matches = similarities.iter().filter(|&&s| s >= ssim_threshold).count();
    let match_rate = matches as f64 / similarities.len() as f64;
    Ok(WatermarkReport {
        similarities,
        matches,
        match_rate,
        ssim_threshold,
        match_threshold,
        theft_detected: match_rate >= match_threshold,
    })
}

/// Direction of the PGD step relative to the discriminator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PgdObjective {
    /// Ascend `log(1 - D)` when D currently says real, `log D` otherwise.
    #[default]
    Flip,
    /// Ascend `log(1 - D)`.
    TowardFake,
    /// Ascend `log D`.
    TowardReal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgdParams {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub objective: PgdObjective,
}

impl PgdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

impl From<&PgdConfig> for PgdParams {
    fn from(c: &PgdConfig) -> Self {
        Self {
            epsilon: c.epsilon,
            steps: c.steps,
            step_size: c.step_size(),
            objective: PgdObjective::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PgdOutcome {
    pub image: ImageTensor,
    pub steps_taken: usize,
    /// Set when a non-finite gradient stopped the iteration early.
    pub aborted: bool,
}

/// Whether `d` calls `image` real (mean patch probability at least 0.5).
pub fn says_real(d: &DiscriminatorSpec, condition: Option<&ImageTensor>, image: &ImageTensor) -> Result<bool> {
    Ok(d.probability(condition, image)? >= 0.5)
}

fn input_gradient(
    d: &DiscriminatorSpec,
    cond: Option<&Tensor>,
    x: &ImageTensor,
    toward_real: bool,
) -> Result<Tensor> {
    let (p, cache) = d.forward(d.input(cond, Tensor::from(x))?);
    let (_, g) = if toward_real { mean_log(&p) } else { mean_log1m(&p) };
    let mut sink = vec![0.0; d.params.len()];
    let g_in = d.backward_into(cache, g, &mut sink);
    Ok(if d.conditional {
        g_in.split_channels(d.channels).1
    } else {
        g_in
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// ℓ∞-bounded signed-gradient ascent on the discriminator objective, projected onto the
/// ε-ball around `image` and onto `[0, 1]` after every step.
pub fn pgd_perturb(
    image: &ImageTensor,
    d: &DiscriminatorSpec,
    condition: Option<&ImageTensor>,
    params: &PgdParams,
) -> Result<PgdOutcome> {
    params.validate()?;
    if d.conditional != condition.is_some() {
        return Err(Error::InvalidArgument(
            "condition must be given exactly when the discriminator is conditional".into(),
        ));
    }
    let origin = image.clone().clipped();
    let cond = condition.map(Tensor::from);
    let toward_real = match params.objective {
        PgdObjective::TowardReal => true,
        PgdObjective::TowardFake => false,
        PgdObjective::Flip => !says_real(d, condition, &origin)?,
    };
    let mut x = origin.clone();
    for step in 0..params.steps {
        let g = input_gradient(d, cond.as_ref(), &x, toward_real)?;
        if g.data.iter().any(|v| !v.is_finite()) {
            return Ok(PgdOutcome {
                image: x,
                steps_taken: step,
                aborted: true,
            });
        }
        let mut next = x.clone();
        for ((v, &o), &gi) in next.values_mut().iter_mut().zip(origin.values()).zip(&g.data) {
            let moved = *v + params.step_size * sign(gi);
            *v = moved.clamp(o - params.epsilon, o + params.epsilon).clamp(0.0, 1.0);
        }
        x = next;
    }
    Ok(PgdOutcome {
        image: x,
        steps_taken: params.steps,
        aborted: false,
    })
}

/// Fraction of samples whose discriminator decision differs between `before` and `after`.
pub fn flip_rate(
    d: &DiscriminatorSpec,
    conditions: Option<&[ImageTensor]>,
    before: &[ImageTensor],
    after: &[ImageTensor],
) -> Result<f64> {
    if before.len() != after.len() || before.is_empty() {
        return Err(Error::InvalidArgument("need equal non-empty image lists".into()));
    }
    if let Some(c) = conditions {
        if c.len() != before.len() {
            return Err(Error::InvalidArgument("one condition per image is required".into()));
        }
    }
    let flips: Vec<Result<bool>> = par::map_range(Exec::default(), before.len(), |i| {
        let c = conditions.map(|c| &c[i]);
        Ok(says_real(d, c, &before[i])? != says_real(d, c, &after[i])?)
    });
    let mut n = 0usize;
    for f in flips {
        n += f? as usize;
    }
    Ok(n as f64 / before.len() as f64)
}

/// Poisoning hook: every response is PGD-perturbed against the victim's discriminator.
pub struct PoisonHook {
    discriminator: DiscriminatorSpec,
    params: PgdParams,
}

impl PoisonHook {
    pub fn new(discriminator: DiscriminatorSpec, params: PgdParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { discriminator, params })
    }
}

impl DefenseHook for PoisonHook {
    fn apply(&self, ctx: QueryContext<'_>, output: ImageTensor) -> Result<(ImageTensor, Defended)> {
        let cond = self.discriminator.conditional.then_some(ctx.input);
        let out = pgd_perturb(&output, &self.discriminator, cond, &self.params)?;
        Ok((out.image, Defended::Poison))
    }
}
