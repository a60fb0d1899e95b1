use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tensor, TensorFile};
use crate::error::{Error, Result};

/// Covariance ridge added before taking square roots.
pub const COV_EPS: f64 = 1e-6;

/// Eigenvalues below `−NEGATIVE_WARN · λ_max` are clipped with a warning.
pub const NEGATIVE_WARN: f64 = 1e-6;

/// Mean and unbiased covariance of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

#[derive(Serialize, Deserialize)]
struct StatsMeta {
    format: String,
    count: usize,
    extractor_seed: u64,
}

const FORMAT: &str = "dit-feature-stats-v1";

/// Sample statistics of `[n, d]` features; a single row gives zero covariance.
pub fn gaussian_stats(features: &Tensor<f64>) -> Result<FeatureStats> {
    let &[n, d] = features.shape() else {
        return Err(Error::Contract(format!(
            "features must be [n, d], got {:?}",
            features.shape()
        )));
    };
    if n == 0 {
        return Err(Error::Contract("no feature rows".into()));
    }
    if n < d {
        log::warn!("{n} feature rows for {d} dimensions; covariance is rank deficient");
    }
    let x = DMatrix::from_row_slice(n, d, features.data());
    let mean = x.row_mean().transpose();
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = if n > 1 {
        centred.tr_mul(&centred) / (n - 1) as f64
    } else {
        DMatrix::zeros(d, d)
    };
    Ok(FeatureStats {
        mean,
        cov,
        count: n,
    })
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_file(&self, extractor_seed: u64) -> TensorFile {
        let d = self.dim();
        let mut file = TensorFile::new();
        let meta = StatsMeta {
            format: FORMAT.into(),
            count: self.count,
            extractor_seed,
        };
        file.metadata = serde_json::to_string(&meta).expect("metadata serialises");
        file.insert(
            "mu",
            Tensor::new([d], self.mean.as_slice().to_vec()).expect("mean shape"),
        );
        let rows: Vec<f64> = self.cov.transpose().as_slice().to_vec();
        file.insert("sigma", Tensor::new([d, d], rows).expect("cov shape"));
        file
    }

    /// Reads stats written by [`FeatureStats::to_file`], returning the
    /// extractor seed alongside.
    pub fn from_file(file: &TensorFile) -> Result<(Self, u64)> {
        let meta: StatsMeta = serde_json::from_str(&file.metadata)?;
        if meta.format != FORMAT {
            return Err(Error::Format(format!(
                "expected {FORMAT}, found {:?}",
                meta.format
            )));
        }
        let mu: Tensor<f64> = file.get("mu")?;
        let sigma: Tensor<f64> = file.get("sigma")?;
        let d = mu.numel();
        if sigma.shape() != [d, d] {
            return Err(Error::shape("feature stats", &[d, d], sigma.shape()));
        }
        let stats = FeatureStats {
            mean: DVector::from_column_slice(mu.data()),
            cov: DMatrix::from_row_slice(d, d, sigma.data()),
            count: meta.count,
        };
        Ok((stats, meta.extractor_seed))
    }

    pub fn save(&self, path: impl AsRef<Path>, extractor_seed: u64) -> Result<()> {
        self.to_file(extractor_seed).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, u64)> {
        Self::from_file(&TensorFile::load(path)?)
    }
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians,
/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^½)`, with `1e-6·I` added to both
/// covariances.
///
/// The trace of the root is taken as `tr((√Σa Σb √Σa)^½)`, which has the same
/// eigenvalues as `Σa Σb` but is symmetric.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.shape() != b.cov.shape() {
        return Err(Error::Contract(format!(
            "Fréchet distance between {}- and {}-dimensional stats",
            a.dim(),
            b.dim()
        )));
    }
    let d = a.dim();
    let ridge = DMatrix::<f64>::identity(d, d) * COV_EPS;
    let sa = &a.cov + &ridge;
    let sb = &b.cov + &ridge;
    let root_a = psd_sqrt(&sa);
    let inner = &root_a * &sb * &root_a;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let top = eig.eigenvalues.max().max(0.0);
    let low = eig.eigenvalues.min();
    if low < -NEGATIVE_WARN * top {
        log::warn!("clipping eigenvalue {low:e} of the covariance product (largest {top:e})");
    }
    let tr_root: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let diff = &a.mean - &b.mean;
    let value = diff.norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_root;
    Ok(value.max(0.0))
}
