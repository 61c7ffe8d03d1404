//! SC-SVDD: `f(x, rho) = |phi(x) - w|^2 - (R^2 - rho)`.
//!
//! Dual: maximize `sum_i a_i y_i K_ii - 2 sum_ij a_i a_j y_i y_j K_ij` subject
//! to `sum_i a_i y_i = 1/2` and `0 <= a_i <= C_i`, with `w = 2 sum_i a_i y_i
//! phi(x_i)`. Solved with the SMO routine at `Q = 4 yy'K`.

use serde::{Deserialize, Serialize};

use super::smo::{self, SmoProblem};
use super::{check_training, Hyperparameters, KernelExpansion, ScalableClassifier, TrainOptions, TrainingDiagnostics};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix};
use crate::par::Execution;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvddModel {
    pub hyperparameters: Hyperparameters,
    /// Center `w` as an expansion with coefficients `2 a_i y_i`.
    pub expansion: KernelExpansion,
    pub radius2: f64,
    /// `|w|^2`.
    pub center_norm2: f64,
    pub diagnostics: TrainingDiagnostics,
}

impl SvddModel {
    #[inline]
    pub(crate) fn prelink(&self, s: f64, kxx: f64) -> f64 {
        (kxx - 2.0 * s + self.center_norm2) - self.radius2
    }

    /// `|phi(x) - w|^2`.
    pub fn distance2(&self, x: &[f64]) -> f64 {
        let kxx = self.expansion.kernel().eval(x, x);
        kxx - 2.0 * self.expansion.eval(x) + self.center_norm2
    }

    fn prelink_at(&self, x: &[f64]) -> f64 {
        let kxx = self.expansion.kernel().eval(x, x);
        self.prelink(self.expansion.eval(x), kxx)
    }

    /// Dual variables over the full training set.
    pub fn dual_variables(&self, n_train: usize) -> Vec<f64> {
        let mut a = vec![0.0; n_train];
        for (&i, c) in self.expansion.indices().iter().zip(self.expansion.coefficients()) {
            a[i] = c.abs() / 2.0;
        }
        a
    }
}

impl ScalableClassifier for SvddModel {
    fn boundary_radius(&self, x: &[f64]) -> f64 {
        -self.prelink_at(x)
    }

    fn decision_value(&self, x: &[f64], rho: f64) -> f64 {
        self.prelink_at(x) + rho
    }
}

pub fn train_sc_svdd(train: &Dataset, hp: &Hyperparameters) -> Result<SvddModel> {
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
) -> Result<SvddModel> {
    let n = check_training(train, hp, gram)?;
    let n_safe = train.count(Label::Safe);
    if n_safe == 0 {
        return Err(Error::Training("SC-SVDD needs at least one safe sample".into()));
    }
    let c_safe = hp.box_limit(Label::Safe);
    if c_safe * (n_safe as f64) < 0.5 {
        return Err(Error::Training(format!(
            "SC-SVDD dual is infeasible: {n_safe} safe points with C = {c_safe} cannot reach sum 1/2 \
             (increase eta or decrease tau)"
        )));
    }

    let signs: Vec<f64> = train.labels().iter().map(|y| y.sign()).collect();
    let upper: Vec<f64> = train.labels().iter().map(|&y| hp.box_limit(y)).collect();
    let diag = gram.diag();
    let linear: Vec<f64> = signs.iter().zip(&diag).map(|(y, k)| -y * k).collect();

    // Feasible start: fill safe variables in order until the sum reaches 1/2.
    let mut alpha = vec![0.0; n];
    let mut remaining = 0.5;
    for (i, &y) in train.labels().iter().enumerate() {
        if remaining <= 0.0 {
            break;
        }
        if y == Label::Safe {
            let a = upper[i].min(remaining);
            alpha[i] = a;
            remaining -= a;
        }
    }

    let problem = SmoProblem {
        gram,
        signs: &signs,
        scale: 4.0,
        linear: &linear,
        upper: &upper,
    };
    let sol = smo::solve(&problem, alpha, opts.smo_tolerance, opts.smo_max_iter(n))?;

    // |w|^2 = a'Qa = sum_i a_i (G_i - p_i); |phi_i - w|^2 = |w|^2 - y_i G_i.
    let center_norm2: f64 = sol
        .alpha
        .iter()
        .zip(&sol.gradient)
        .zip(&linear)
        .map(|((a, g), p)| a * (g - p))
        .sum();
    let mut radius2 = center_norm2 - sol.rho;
    let mut flags = Vec::new();
    if !sol.rho_from_free {
        flags.push("no_free_support_vectors".to_string());
    }
    if radius2 < 0.0 {
        radius2 = 0.0;
        flags.push("radius_clamped".to_string());
    }

    let coef: Vec<f64> = sol.alpha.iter().zip(&signs).map(|(a, y)| 2.0 * a * y).collect();
    let expansion = KernelExpansion::from_training(hp.kernel, train, &coef, |i| sol.alpha[i] > 0.0);
    Ok(SvddModel {
        hyperparameters: *hp,
        expansion,
        radius2,
        center_norm2,
        diagnostics: TrainingDiagnostics {
            iterations: sol.iterations,
            residual: sol.gap,
            objective: -sol.objective,
            flags,
            loss_trace: Vec::new(),
        },
    })
}
