//! SC-SVM: `f(x, rho) = w'phi(x) - b + rho`.
//!
//! With `yh_i = -y_i` the weighted primal is a standard C-SVM with per-sample
//! box `C_i`; its dual is solved by SMO and `w = sum_i alpha_i yh_i phi(x_i)`.

use serde::{Deserialize, Serialize};

use super::smo::{self, SmoProblem};
use super::{check_training, Hyperparameters, KernelExpansion, ScalableClassifier, TrainOptions, TrainingDiagnostics};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix};
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub hyperparameters: Hyperparameters,
    /// Support expansion with coefficients `alpha_i * yh_i`.
    pub expansion: KernelExpansion,
    pub offset: f64,
    pub diagnostics: TrainingDiagnostics,
}

impl SvmModel {
    #[inline]
    pub(crate) fn prelink(&self, s: f64) -> f64 {
        s - self.offset
    }

    /// Dual variables `alpha_i = |c_i|` of the support points.
    pub fn alphas(&self) -> Vec<f64> {
        self.expansion.coefficients().iter().map(|c| c.abs()).collect()
    }
}

impl ScalableClassifier for SvmModel {
    fn boundary_radius(&self, x: &[f64]) -> f64 {
        -self.prelink(self.expansion.eval(x))
    }

    fn decision_value(&self, x: &[f64], rho: f64) -> f64 {
        self.prelink(self.expansion.eval(x)) + rho
    }
}

pub fn train_sc_svm(train: &Dataset, hp: &Hyperparameters) -> Result<SvmModel> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let k = gram(&hp.kernel, train.points(), Execution::default())?;
    train_with_gram(train, hp, &k, &TrainOptions::default())
}

pub(crate) fn train_with_gram(
    train: &Dataset,
    hp: &Hyperparameters,
    gram: &GramMatrix,
    opts: &TrainOptions,
) -> Result<SvmModel> {
    let n = check_training(train, hp, gram)?;
    if !train.has_both_labels() {
        return Err(Error::Training("SC-SVM needs both labels in the training set".into()));
    }
    let signs: Vec<f64> = train.labels().iter().map(|y| -y.sign()).collect();
    let upper: Vec<f64> = train.labels().iter().map(|&y| hp.box_limit(y)).collect();
    let linear = vec![-1.0; n];
    let problem = SmoProblem {
        gram,
        signs: &signs,
        scale: 1.0,
        linear: &linear,
        upper: &upper,
    };
    let sol = smo::solve(&problem, vec![0.0; n], opts.smo_tolerance, opts.smo_max_iter(n))?;

    let coef: Vec<f64> = sol.alpha.iter().zip(&signs).map(|(a, s)| a * s).collect();
    let expansion = KernelExpansion::from_training(hp.kernel, train, &coef, |i| sol.alpha[i] > 0.0);
    let mut flags = Vec::new();
    if !sol.rho_from_free {
        flags.push("no_free_support_vectors".to_string());
    }
    Ok(SvmModel {
        hyperparameters: *hp,
        expansion,
        offset: sol.rho,
        diagnostics: TrainingDiagnostics {
            iterations: sol.iterations,
            residual: sol.gap,
            objective: -sol.objective,
            flags,
            loss_trace: Vec::new(),
        },
    })
}

/// Dual variables over the full training set.
pub fn dual_variables(model: &SvmModel, n_train: usize) -> Vec<f64> {
    let mut a = vec![0.0; n_train];
    for (&i, c) in model.expansion.indices().iter().zip(model.expansion.coefficients()) {
        a[i] = c.abs();
    }
    a
}

/// Sign used by the dual: `yh = -y`.
pub fn dual_sign(y: Label) -> f64 {
    -y.sign()
}
