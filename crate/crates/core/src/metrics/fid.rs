use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::{Layer, NetBuilder, Network, Tensor, LEAKY_SLOPE};
use crate::par::{self, Exec};
use crate::resample::{resize, Filter};

/// Eigenvalues above this (negative) level are treated as rounding noise.
pub const EIGEN_FLOOR: f64 = -1e-6;
pub const JITTER: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian(features: &[Vec<f64>]) -> Result<GaussianSummary> {
    if features.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 feature vectors, got {}",
            features.len()
        )));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(Error::shape(format!("dimension {d}"), format!("dimension {}", bad.len())));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature vector".into()));
    }
    let n = features.len() as f64;
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n;
    let mut centred = DMatrix::zeros(features.len(), d);
    for (i, f) in features.iter().enumerate() {
        for j in 0..d {
            centred[(i, j)] = f[j] - mean[j];
        }
    }
    let mut covariance = centred.transpose() * &centred / (n - 1.0);
    symmetrize(&mut covariance);
    Ok(GaussianSummary { mean, covariance })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m = (&*m + t) * 0.5;
}

/// Symmetric PSD square root; fails if an eigenvalue is below [`EIGEN_FLOOR`].
fn sqrt_psd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| l < EIGEN_FLOOR || !l.is_finite()) {
        return None;
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `tr((A B)^{1/2})` for symmetric PSD `A`, `B`, via `A^{1/2} B A^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<f64> {
    let sa = sqrt_psd(a)?;
    let mut inner = &sa * b * &sa;
    symmetrize(&mut inner);
    let eig = SymmetricEigen::new(inner);
    if eig.eigenvalues.iter().any(|&l| l < EIGEN_FLOOR || !l.is_finite()) {
        return None;
    }
    Some(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`. When the square
/// root is numerically ill-posed, `JITTER * I` is added to both covariances.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("dimension {}", a.dim()), format!("dimension {}", b.dim())));
    }
    let finite = |g: &GaussianSummary| g.mean.iter().chain(g.covariance.iter()).all(|v| v.is_finite());
    if !finite(a) || !finite(b) {
        return Err(Error::NonFinite("gaussian summary".into()));
    }
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let tr = a.covariance.trace() + b.covariance.trace();
    let cross = match trace_sqrt_product(&a.covariance, &b.covariance) {
        Some(t) => t,
        None => {
            let eye = DMatrix::identity(a.dim(), a.dim()) * JITTER;
            trace_sqrt_product(&(&a.covariance + &eye), &(&b.covariance + &eye))
                .ok_or_else(|| Error::NonFinite("covariance is not positive semi-definite".into()))?
        }
    };
    Ok((mean_term + tr - 2.0 * cross).max(0.0))
}

/// Externally computed feature vectors keyed by image digest (hex).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: HashMap<String, Vec<f64>>,
}

impl FeatureTable {
    /// Reads `digest,f0,f1,...` rows without a header.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
        let mut table = FeatureTable::default();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Malformed(format!("{}: {e}", path.display())))?;
            let mut fields = rec.iter();
            let key = fields.next().unwrap_or_default().to_string();
            let values: Vec<f64> = fields
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), i + 1)))?;
            if table.rows.is_empty() {
                table.dim = values.len();
            } else if values.len() != table.dim {
                return Err(Error::Malformed(format!("{}:{}: ragged feature row", path.display(), i + 1)));
            }
            table.rows.insert(key, values);
        }
        Ok(table)
    }
}

/// Maps an image to a feature vector for FID.
#[derive(Clone, Debug)]
pub enum FeatureExtractor {
    /// Seeded, never-trained conv net with global average pooling.
    FrozenRandom {
        seed: u64,
        embedding_dim: usize,
        net: Network,
        params: Vec<f64>,
    },
    /// Inception-v3 pool features looked up from a precomputed table.
    InceptionPool { table: Arc<FeatureTable> },
}

pub const FROZEN_INPUT_SIDE: usize = 32;

impl FeatureExtractor {
    pub fn frozen_random(seed: u64, embedding_dim: usize) -> Self {
        let mut b = NetBuilder::new();
        let lrelu = || Layer::LeakyRelu(LEAKY_SLOPE);
        let layers = vec![
            b.conv3(3, 16, 1),
            lrelu(),
            b.conv3(16, 32, 2),
            lrelu(),
            b.conv3(32, 64, 2),
            lrelu(),
            b.conv3(64, embedding_dim, 2),
            lrelu(),
            Layer::GlobalAvgPool,
        ];
        let net = b.finish(Layer::Seq(layers));
        let params = net.init_params(seed);
        FeatureExtractor::FrozenRandom {
            seed,
            embedding_dim,
            net,
            params,
        }
    }

    pub fn inception_pool(table: FeatureTable) -> Self {
        FeatureExtractor::InceptionPool { table: Arc::new(table) }
    }

    pub fn embedding_dim(&self) -> usize {
        match self {
            FeatureExtractor::FrozenRandom { embedding_dim, .. } => *embedding_dim,
            FeatureExtractor::InceptionPool { table } => table.dim,
        }
    }

    pub fn features(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        match self {
            FeatureExtractor::FrozenRandom { net, params, .. } => {
                let side = FROZEN_INPUT_SIDE;
                let resized = if img.height() == side && img.width() == side {
                    img.clone()
                } else {
                    resize(img, side, side, Filter::Bilinear)
                };
                let rgb = if resized.channels() == 3 {
                    resized
                } else {
                    ImageTensor::from_fn(side, side, 3, |_, y, x| resized.get(0, y, x))
                };
                Ok(net.infer(params, Tensor::from(rgb)).data)
            }
            FeatureExtractor::InceptionPool { table } => {
                let key = hex::encode(img.digest());
                table
                    .rows
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no precomputed features for image {key}")))
            }
        }
    }

    pub fn features_batch(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        par::map(Exec::default(), images, |x| self.features(x)).into_iter().collect()
    }
}

pub fn fid(set_a: &[ImageTensor], set_b: &[ImageTensor], fx: &FeatureExtractor) -> Result<f64> {
    let fa = fit_gaussian(&fx.features_batch(set_a)?)?;
    let fb = fit_gaussian(&fx.features_batch(set_b)?)?;
    frechet_distance(&fa, &fb)
}
