//! Experiment configuration, read from TOML.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{Hyperparameters, TrainOptions, Variant};
use crate::data::{GaussianSpec, PlatoonRanges};
use crate::error::{Error, Result};
use crate::family::PerformanceIndex;
use crate::kernels::KernelSpec;
use crate::order_scaling::{min_calibration_size, ScalingPlan};
use crate::par::Execution;

fn default_beta() -> f64 {
    0.5
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Run plans that fail the binomial check; certificates say so.
    #[serde(default)]
    pub force_uncertified: bool,
    pub variants: Vec<Variant>,
    pub eps: Vec<f64>,
    pub delta: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Calibration sizes, one per `eps`. Defaults to the sample-complexity bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_calib: Option<Vec<usize>>,
    #[serde(default)]
    pub index: PerformanceIndex,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub train: TrainOptions,
    pub family: FamilyGrid,
    pub kernel: KernelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

/// Cartesian grid of `(eta, tau)`; members are ordered eta-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyGrid {
    pub eta: Vec<f64>,
    pub tau: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelConfig {
    Linear,
    /// Without `gamma`, `1 / (d * mean feature variance)` on the standardized training set.
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma: Option<f64>,
    },
    Polynomial {
        degree: u32,
        coef0: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    /// Train and test drawn from independent streams; the calibration pool
    /// from a third.
    Gaussian {
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        params: GaussianParams,
    },
    /// `n_samples` simulated scenarios, shuffled and split into train, a
    /// calibration pool of the largest `n_c`, and test.
    Platoon {
        n_samples: usize,
        n_train: usize,
        #[serde(default)]
        ranges: PlatoonRanges,
    },
    /// Files with header `f0,...,label`; calibration sets are prefixes of `calib`.
    Csv {
        train: PathBuf,
        calib: PathBuf,
        test: PathBuf,
    },
}

/// Distribution parameters of the Gaussian benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianParams {
    pub mean_safe: Vec<f64>,
    pub mean_unsafe: Vec<f64>,
    pub cov_safe: Vec<Vec<f64>>,
    pub cov_unsafe: Vec<Vec<f64>>,
    pub p_safe: f64,
    pub p_outlier: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        let d = GaussianSpec::default();
        Self {
            mean_safe: d.mean_safe,
            mean_unsafe: d.mean_unsafe,
            cov_safe: d.cov_safe,
            cov_unsafe: d.cov_unsafe,
            p_safe: d.p_safe,
            p_outlier: d.p_outlier,
        }
    }
}

impl GaussianParams {
    pub fn spec(&self, n_train: usize, n_calib: usize, n_test: usize, seed: u64) -> GaussianSpec {
        GaussianSpec {
            mean_safe: self.mean_safe.clone(),
            mean_unsafe: self.mean_unsafe.clone(),
            cov_safe: self.cov_safe.clone(),
            cov_unsafe: self.cov_unsafe.clone(),
            p_safe: self.p_safe,
            p_outlier: self.p_outlier,
            n_train,
            n_calib,
            n_test,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Points per axis.
    pub resolution: usize,
    /// `[x1_min, x1_max, x2_min, x2_max]` in the original feature units.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 101,
            bbox: None,
        }
    }
}

impl KernelConfig {
    pub fn resolve(&self, default_gamma: impl FnOnce() -> f64) -> KernelSpec {
        match *self {
            KernelConfig::Linear => KernelSpec::Linear,
            KernelConfig::Gaussian { gamma } => KernelSpec::Gaussian {
                gamma: gamma.unwrap_or_else(default_gamma),
            },
            KernelConfig::Polynomial { degree, coef0 } => KernelSpec::Polynomial { degree, coef0 },
        }
    }
}

impl From<KernelSpec> for KernelConfig {
    fn from(k: KernelSpec) -> Self {
        match k {
            KernelSpec::Linear => KernelConfig::Linear,
            KernelSpec::Gaussian { gamma } => KernelConfig::Gaussian { gamma: Some(gamma) },
            KernelSpec::Polynomial { degree, coef0 } => KernelConfig::Polynomial { degree, coef0 },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that does not need data.
    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.variants.is_empty() {
            return cfg("variants must list at least one of svm, svdd, lr".into());
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].contains(v) {
                return cfg(format!("variant {v} listed twice"));
            }
        }
        if self.eps.is_empty() {
            return cfg("eps must list at least one value".into());
        }
        if let Some(n) = &self.n_calib {
            if n.len() != self.eps.len() {
                return cfg(format!(
                    "n_calib has {} entries but eps has {}",
                    n.len(),
                    self.eps.len()
                ));
            }
        }
        // Plans validate eps, delta, beta and the sizes.
        self.plans()?;
        if self.family.eta.is_empty() || self.family.tau.is_empty() {
            return cfg("family.eta and family.tau must be nonempty".into());
        }
        for hp in self.family_with(self.kernel.resolve(|| 1.0)) {
            hp.validate()?;
        }
        if let KernelConfig::Gaussian { gamma: Some(g) } = self.kernel {
            if !(g.is_finite() && g > 0.0) {
                return cfg(format!("kernel.gamma must be > 0, got {g}"));
            }
        }
        if !(self.train.smo_tolerance > 0.0 && self.train.lr.tolerance > 0.0) {
            return cfg("solver tolerances must be positive".into());
        }
        if self.grid.resolution == 0 {
            return cfg("grid.resolution must be >= 1".into());
        }
        if let Some([a, b, c, d]) = self.grid.bbox {
            if !(a < b && c < d) || [a, b, c, d].iter().any(|v| !v.is_finite()) {
                return cfg(format!(
                    "grid.bbox {:?} must be [x1_min, x1_max, x2_min, x2_max]",
                    [a, b, c, d]
                ));
            }
        }
        match &self.data {
            DataConfig::Gaussian { n_train, params, .. } => {
                if *n_train == 0 {
                    return cfg("data.n_train must be positive".into());
                }
                crate::data::gaussian::GaussianSampler::new(&params.spec(0, 0, 0, 0))?;
            }
            DataConfig::Platoon {
                n_samples,
                n_train,
                ranges,
            } => {
                ranges.validate()?;
                let need = n_train + self.max_calibration_size()?;
                if *n_train == 0 || need >= *n_samples {
                    return cfg(format!(
                        "data.n_samples = {n_samples} leaves no test set after {n_train} training \
                         and {} calibration samples",
                        need - n_train
                    ));
                }
            }
            DataConfig::Csv { .. } => {}
        }
        Ok(())
    }

    /// One plan per `eps`, in order.
    pub fn plans(&self) -> Result<Vec<ScalingPlan>> {
        self.eps
            .iter()
            .enumerate()
            .map(|(i, &eps)| {
                let n_c = match &self.n_calib {
                    Some(n) => n[i],
                    None => min_calibration_size(eps, self.delta, self.beta)?,
                };
                ScalingPlan::with_size(eps, self.delta, self.beta, n_c)
            })
            .collect()
    }

    pub fn max_calibration_size(&self) -> Result<usize> {
        Ok(self.plans()?.iter().map(|p| p.n_c).max().unwrap_or(0))
    }

    /// The hyperparameter family for a resolved kernel.
    pub fn family_with(&self, kernel: KernelSpec) -> Vec<Hyperparameters> {
        let mut out = Vec::with_capacity(self.family.eta.len() * self.family.tau.len());
        for &eta in &self.family.eta {
            for &tau in &self.family.tau {
                out.push(Hyperparameters { eta, tau, kernel });
            }
        }
        out
    }
}
