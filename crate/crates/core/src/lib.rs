pub mod config;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod extraction;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod report;
pub mod resample;
pub mod seed;
pub mod serde_float;
pub mod service;
pub mod stats;
pub mod synthetic;
pub mod training;

pub use dataset::{ImagePair, PairedDataset, Split, UnpairedDataset};
pub use error::{Error, Result};
pub use image::ImageTensor;
