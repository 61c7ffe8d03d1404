//! Two-class Gaussian benchmark with optional label-preserving outliers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, Label, Provenance};
use crate::error::{Error, Result};

/// Stream ids used for the three splits.
pub const TRAIN_STREAM: u64 = 0;
pub const CALIB_STREAM: u64 = 1;
pub const TEST_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianSpec {
    pub mean_safe: Vec<f64>,
    pub mean_unsafe: Vec<f64>,
    pub cov_safe: Vec<Vec<f64>>,
    pub cov_unsafe: Vec<Vec<f64>>,
    /// Probability that a draw belongs to the safe class.
    pub p_safe: f64,
    /// Probability that a point is drawn from the other class's Gaussian
    /// while keeping its label.
    pub p_outlier: f64,
    pub n_train: usize,
    pub n_calib: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for GaussianSpec {
    /// Safe class at (-1,-1), unsafe at (1,1), identity covariances, balanced.
    fn default() -> Self {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        Self {
            mean_safe: vec![-1.0, -1.0],
            mean_unsafe: vec![1.0, 1.0],
            cov_safe: eye.clone(),
            cov_unsafe: eye,
            p_safe: 0.5,
            p_outlier: 0.0,
            n_train: 3000,
            n_calib: 2064,
            n_test: 10_000,
            seed: 0,
        }
    }
}

fn cholesky(cov: &[Vec<f64>], d: usize, which: &str) -> Result<DMatrix<f64>> {
    if cov.len() != d || cov.iter().any(|r| r.len() != d) {
        return Err(Error::arg(format!("{which} covariance must be {d}x{d}")));
    }
    for i in 0..d {
        for j in 0..i {
            if (cov[i][j] - cov[j][i]).abs() > 1e-12 * (cov[i][j].abs() + cov[j][i].abs()).max(1.0) {
                return Err(Error::arg(format!("{which} covariance is not symmetric")));
            }
        }
    }
    let m = DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    m.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::arg(format!("{which} covariance is not positive definite")))
}

/// Validated sampler built from a [`GaussianSpec`].
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    spec: GaussianSpec,
    chol_safe: DMatrix<f64>,
    chol_unsafe: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(spec: &GaussianSpec) -> Result<Self> {
        let d = spec.mean_safe.len();
        if d == 0 || spec.mean_unsafe.len() != d {
            return Err(Error::arg("class means must be nonempty and of equal dimension"));
        }
        if !(0.0..=1.0).contains(&spec.p_safe) {
            return Err(Error::arg(format!("p_safe = {} outside [0, 1]", spec.p_safe)));
        }
        if !(0.0..0.5).contains(&spec.p_outlier) {
            return Err(Error::arg(format!("p_outlier = {} outside [0, 0.5)", spec.p_outlier)));
        }
        Ok(Self {
            chol_safe: cholesky(&spec.cov_safe, d, "safe")?,
            chol_unsafe: cholesky(&spec.cov_unsafe, d, "unsafe")?,
            spec: spec.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.mean_safe.len()
    }

    fn draw(&self, rng: &mut ChaCha8Rng, source: Label) -> Vec<f64> {
        let (mean, chol) = match source {
            Label::Safe => (&self.spec.mean_safe, &self.chol_safe),
            Label::Unsafe => (&self.spec.mean_unsafe, &self.chol_unsafe),
        };
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = chol * z;
        mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
    }

    /// `n` points from the stream `(spec.seed, stream)`.
    pub fn sample(&self, n: usize, stream: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(stream);
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let label = if rng.random::<f64>() < self.spec.p_safe {
                Label::Safe
            } else {
                Label::Unsafe
            };
            let source = if rng.random::<f64>() < self.spec.p_outlier {
                label.opposite()
            } else {
                label
            };
            points.push(self.draw(&mut rng, source));
            labels.push(label);
        }
        Dataset::with_dim(self.dim(), points, labels)
            .expect("sampler produces consistent dimensions")
            .with_provenance(self.provenance(stream))
    }

    fn provenance(&self, stream: u64) -> Provenance {
        let mut table = toml::Table::try_from(&self.spec).unwrap_or_default();
        table.insert("stream".into(), toml::Value::Integer(stream as i64));
        Provenance::new("gaussian", Some(self.spec.seed), table)
    }
}

/// Train, calibration and test sets drawn from independent streams.
pub fn sample_gaussian(spec: &GaussianSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let s = GaussianSampler::new(spec)?;
    Ok((
        s.sample(spec.n_train, TRAIN_STREAM),
        s.sample(spec.n_calib, CALIB_STREAM),
        s.sample(spec.n_test, TEST_STREAM),
    ))
}
