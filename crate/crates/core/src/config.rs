//! Experiment configuration, read from a single TOML file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LossConfig, Preset};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Monet,
    Anime,
    Superres,
    #[default]
    Toy,
}

impl Task {
    pub fn is_super_resolution(self) -> bool {
        self == Task::Superres
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Monet => "monet",
            Task::Anime => "anime",
            Task::Superres => "superres",
            Task::Toy => "toy",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monet" => Ok(Task::Monet),
            "anime" => Ok(Task::Anime),
            "superres" => Ok(Task::Superres),
            "toy" => Ok(Task::Toy),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Flip,
    Rotate5,
    Cutout,
    Contrast,
}

impl Augmentation {
    pub const ALL: [Augmentation; 4] = [
        Augmentation::Flip,
        Augmentation::Rotate5,
        Augmentation::Cutout,
        Augmentation::Contrast,
    ];
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Augmentation::Flip => "flip",
            Augmentation::Rotate5 => "rotate5",
            Augmentation::Cutout => "cutout",
            Augmentation::Contrast => "contrast",
        })
    }
}

impl std::str::FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Augmentation::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::config("augmentations", format!("unknown augmentation `{s}`")))
    }
}

/// Optimizer and schedule for one trainer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, section: &str) -> Result<()> {
        let field = |name: &str| format!("{section}.{name}");
        if self.batch_size == 0 {
            return Err(Error::config(field("batch_size"), "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(field("learning_rate"), "must be finite and positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field(name), "must lie in [0, 1)"));
            }
        }
        self.loss.validate().map_err(|e| match e {
            Error::Config { field: f, message } => Error::config(format!("{section}.loss.{f}"), message),
            other => other,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WatermarkMode {
    /// Keyed-hash test on the input digest.
    #[default]
    Hash,
    /// Deterministic per-client quota: exactly `ceil(rate * k)` of the first
    /// `k` queries are marked.
    Quota,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    #[default]
    Blur,
    Monochrome,
    Text,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerKind::Blur => "blur",
            TriggerKind::Monochrome => "monochrome",
            TriggerKind::Text => "text",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WatermarkConfig {
    pub rate: f64,
    pub mode: WatermarkMode,
    pub trigger: TriggerKind,
    /// Per-trigger SSIM needed to count as a match.
    pub ssim_threshold: f64,
    /// Fraction of matching triggers needed to declare theft.
    pub match_threshold: f64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            rate: 0.005,
            mode: WatermarkMode::Hash,
            trigger: TriggerKind::Blur,
            ssim_threshold: 0.9,
            match_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    /// Defaults to `epsilon / 10` when absent.
    pub step_size: Option<f64>,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.25,
            steps: 50,
            step_size: None,
        }
    }
}

impl PgdConfig {
    pub fn step_size(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 10.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    #[default]
    None,
    Watermark,
    Poison,
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DefenseKind::None => "none",
            DefenseKind::Watermark => "watermark",
            DefenseKind::Poison => "poison",
        })
    }
}

impl std::str::FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DefenseKind::None),
            "watermark" => Ok(DefenseKind::Watermark),
            "poison" => Ok(DefenseKind::Poison),
            other => Err(Error::config("service.defense", format!("unknown defense `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Per-client query cap; absent means unlimited.
    pub max_queries: Option<u64>,
    /// Price of one query in US dollars, as a decimal string.
    pub unit_price: String,
    /// Largest accepted request body in bytes.
    pub max_payload_bytes: usize,
    pub defense: DefenseKind,
    pub watermark: WatermarkConfig,
    pub pgd: PgdConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_queries: None,
            unit_price: "0.016".into(),
            max_payload_bytes: 8 << 20,
            defense: DefenseKind::None,
            watermark: WatermarkConfig::default(),
            pgd: PgdConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub fractions: Vec<f64>,
    /// Number of adversary queries harvested before subsampling.
    pub harvest_size: usize,
    /// Held-out images used for the proxy metric and experiments A and C.
    pub test_size: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.25, 0.5, 0.75, 1.0],
            harvest_size: 2000,
            test_size: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Victim training data (unpaired layout, or paired for super-resolution).
    pub victim_data: Option<PathBuf>,
    /// The adversary's own unstyled images.
    pub adversary_inputs: Option<PathBuf>,
    /// Held-out paired test data (input, ground truth).
    pub test_data: Option<PathBuf>,
    /// Reference style images used for FID in experiment C.
    pub style_reference: Option<PathBuf>,
    /// Inception-pool feature table for FID, if available.
    pub inception_features: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub budget_fraction: f64,
    pub augmentations: BTreeSet<Augmentation>,
    pub repetitions: usize,
    pub preset: Preset,
    /// Side length of square victim inputs.
    pub image_size: usize,
    /// Number of synthetic images per domain for the toy task.
    pub toy_images: usize,
    pub paths: Paths,
    pub victim: TrainConfig,
    pub surrogate: TrainConfig,
    pub service: ServiceConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Toy,
            seed: 0,
            budget_fraction: 1.0,
            augmentations: BTreeSet::new(),
            repetitions: 5,
            preset: Preset::Tiny,
            image_size: 32,
            toy_images: 200,
            paths: Paths::default(),
            victim: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            surrogate: TrainConfig::default(),
            service: ServiceConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let field = e
                .span()
                .map(|s| text[s].trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "<document>".into());
            Error::config(field, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::config("budget_fraction", "must lie in (0, 1]"));
        }
        if self.repetitions == 0 {
            return Err(Error::config("repetitions", "must be at least 1"));
        }
        let multiple = self.preset.spatial_multiple(crate::models::GeneratorFamily::Unet);
        if self.image_size == 0 || self.image_size % multiple != 0 {
            return Err(Error::config(
                "image_size",
                format!("must be a positive multiple of {multiple} for the {} preset", self.preset),
            ));
        }
        if self.task.is_super_resolution() {
            if self.augmentations.contains(&Augmentation::Cutout) {
                return Err(Error::config("augmentations", "cutout does not apply to super-resolution"));
            }
            if self.image_size % 4 != 0 {
                return Err(Error::config("image_size", "super-resolution needs a multiple of 4"));
            }
        }
        self.victim.validate("victim")?;
        self.surrogate.validate("surrogate")?;
        let wm = &self.service.watermark;
        if !(wm.rate > 0.0 && wm.rate < 1.0) {
            return Err(Error::config("service.watermark.rate", "must lie in (0, 1)"));
        }
        for (name, v) in [("ssim_threshold", wm.ssim_threshold), ("match_threshold", wm.match_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("service.watermark.{name}"), "must lie in [0, 1]"));
            }
        }
        let pgd = &self.service.pgd;
        if !(pgd.epsilon.is_finite() && pgd.epsilon > 0.0) {
            return Err(Error::config("service.pgd.epsilon", "must be finite and positive"));
        }
        if !(pgd.step_size().is_finite() && pgd.step_size() > 0.0) {
            return Err(Error::config("service.pgd.step_size", "must be finite and positive"));
        }
        crate::service::Usd::parse(&self.service.unit_price)
            .map_err(|e| Error::config("service.unit_price", e.to_string()))?;
        if self.service.max_payload_bytes == 0 {
            return Err(Error::config("service.max_payload_bytes", "must be positive"));
        }
        if self.sweep.fractions.is_empty() {
            return Err(Error::config("sweep.fractions", "must not be empty"));
        }
        if let Some(f) = self.sweep.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::config("sweep.fractions", format!("{f} is outside (0, 1]")));
        }
        if self.sweep.harvest_size == 0 {
            return Err(Error::config("sweep.harvest_size", "must be positive"));
        }
        if self.sweep.test_size < 2 {
            return Err(Error::config("sweep.test_size", "must be at least 2"));
        }
        if self.task == Task::Toy && self.toy_images == 0 {
            return Err(Error::config("toy_images", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.repetitions, 5);
        assert_eq!(cfg.victim.learning_rate, 2e-4);
    }

    #[test]
    fn documented_keys_parse() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            task = "monet"
            seed = 7
            budget_fraction = 0.5
            augmentations = ["flip", "rotate5"]
            repetitions = 3

            [paths]
            victim_data = "data/monet"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.task, Task::Monet);
        assert_eq!(cfg.augmentations.len(), 2);
        assert_eq!(cfg.paths.victim_data.as_deref(), Some(Path::new("data/monet")));
    }

    #[test]
    fn diagnostics_name_the_field() {
        let err = ExperimentConfig::from_toml_str("repetitions = 0").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "repetitions"), "{err}");
        let err = ExperimentConfig::from_toml_str("[surrogate]\nlearning_rate = -1.0").unwrap_err();
        assert!(err.to_string().contains("surrogate.learning_rate"), "{err}");
        let err = ExperimentConfig::from_toml_str("colour = 1").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let err = ExperimentConfig::from_toml_str("task = \"superres\"\naugmentations = [\"cutout\"]").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "augmentations"));
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.augmentations.insert(Augmentation::Contrast);
        cfg.service.max_queries = Some(10);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }
}
