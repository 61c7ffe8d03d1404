//! Scalable classifiers: models whose decision value `f(x, rho)` is strictly
//! increasing in a scalar `rho`, with a closed-form boundary radius.
//!
//! All three variants evaluate through a kernel expansion
//! `s(x) = sum_i c_i k(x_i, x)` followed by an affine map to a pre-link value
//! `a(x)`. The boundary radius is `-a(x)` and `f(x, rho) = link(a(x) + rho)`,
//! so `f(x, boundary_radius(x))` is exactly zero and `f(x, rho) < 0` exactly
//! when `rho < boundary_radius(x)`.

mod ipm;
pub mod lr;
mod smo;
pub mod svdd;
pub mod svm;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernels::{cross_kernel, dot, gram, GramMatrix, KernelSpec};
use crate::par::Execution;

pub use lr::{lr_loss_and_gradient, train_sc_lr, LrModel, LrOptions};
pub use svdd::{train_sc_svdd, SvddModel};
pub use svm::{train_sc_svm, SvmModel};

/// Rows of evaluation points per cross-kernel block in batch evaluation.
const BLOCK_ROWS: usize = 256;

pub trait ScalableClassifier {
    /// The unique `rho` with `f(x, rho) = 0`.
    fn boundary_radius(&self, x: &[f64]) -> f64;

    fn decision_value(&self, x: &[f64], rho: f64) -> f64;

    /// Safe iff `f(x, rho) < 0`.
    fn predict(&self, x: &[f64], rho: f64) -> Label {
        if self.decision_value(x, rho) < 0.0 {
            Label::Safe
        } else {
            Label::Unsafe
        }
    }

    fn boundary_radii(&self, points: &[Vec<f64>], exec: Execution) -> Vec<f64>
    where
        Self: Sync,
    {
        exec.map(points, |x| self.boundary_radius(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub eta: f64,
    pub tau: f64,
    pub kernel: KernelSpec,
}

impl Hyperparameters {
    pub fn new(eta: f64, tau: f64, kernel: KernelSpec) -> Result<Self> {
        let hp = Self { eta, tau, kernel };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::arg(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::arg(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        self.kernel.validate()
    }

    /// Misclassification weight `(1 - 2 tau) y + 1`.
    pub fn loss_weight(&self, y: Label) -> f64 {
        (1.0 - 2.0 * self.tau) * y.sign() + 1.0
    }

    /// Dual box limit `C_i = eta/2 * ((1 - 2 tau) y_i + 1)`.
    pub fn box_limit(&self, y: Label) -> f64 {
        match y {
            Label::Safe => self.eta * (1.0 - self.tau),
            Label::Unsafe => self.eta * self.tau,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Svm,
    Svdd,
    Lr,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Svm, Variant::Svdd, Variant::Lr];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Svm => "svm",
            Variant::Svdd => "svdd",
            Variant::Lr => "lr",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svm" => Ok(Variant::Svm),
            "svdd" => Ok(Variant::Svdd),
            "lr" => Ok(Variant::Lr),
            other => Err(Error::arg(format!("unknown classifier variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub smo_tolerance: f64,
    /// SMO budget in passes; one pass is `n` pair updates.
    pub smo_max_passes: usize,
    pub lr: LrOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            smo_tolerance: 1e-6,
            smo_max_passes: 100_000,
            lr: LrOptions::default(),
        }
    }
}

impl TrainOptions {
    pub(crate) fn smo_max_iter(&self, n: usize) -> usize {
        self.smo_max_passes.saturating_mul(n.max(1))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub iterations: usize,
    /// KKT gap for the dual solvers, gradient infinity norm for LR.
    pub residual: f64,
    /// Dual objective (SVM, SVDD) or final loss (LR).
    pub objective: f64,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss_trace: Vec<f64>,
}

/// `s(x) = sum_i c_i k(x_i, x)` over stored support points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "ExpansionRecord")]
pub struct KernelExpansion {
    kernel: KernelSpec,
    points: Vec<Vec<f64>>,
    /// Positions of the support points in the training set.
    indices: Vec<usize>,
    coefficients: Vec<f64>,
    #[serde(skip)]
    weights: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct ExpansionRecord {
    kernel: KernelSpec,
    points: Vec<Vec<f64>>,
    indices: Vec<usize>,
    coefficients: Vec<f64>,
}

impl From<ExpansionRecord> for KernelExpansion {
    fn from(r: ExpansionRecord) -> Self {
        KernelExpansion::new(r.kernel, r.points, r.indices, r.coefficients)
    }
}

impl KernelExpansion {
    fn new(kernel: KernelSpec, points: Vec<Vec<f64>>, indices: Vec<usize>, coefficients: Vec<f64>) -> Self {
        // Linear kernels collapse to an explicit weight vector.
        let weights = kernel.is_linear().then(|| {
            let d = points.first().map_or(0, |p| p.len());
            let mut w = vec![0.0; d];
            for (p, c) in points.iter().zip(&coefficients) {
                for (wj, xj) in w.iter_mut().zip(p) {
                    *wj += c * xj;
                }
            }
            w
        });
        Self {
            kernel,
            points,
            indices,
            coefficients,
            weights,
        }
    }

    /// Keep the entries of `coef` (indexed like `train`) for which `keep` holds.
    fn from_training(kernel: KernelSpec, train: &Dataset, coef: &[f64], keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..train.len()).filter(|&i| keep(i)).collect();
        let points = idx.iter().map(|&i| train.points()[i].clone()).collect();
        let c = idx.iter().map(|&i| coef[i]).collect();
        Self::new(kernel, points, idx, c)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Explicit weight vector, available for linear kernels.
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.weights {
            Some(w) if !w.is_empty() => dot(w, x),
            Some(_) => 0.0,
            None => self
                .points
                .iter()
                .zip(&self.coefficients)
                .map(|(p, c)| c * self.kernel.eval(p, x))
                .sum(),
        }
    }

    /// Same value as [`eval`](Self::eval), reading kernel values from `row`
    /// where `row[col[i]] = k(x_i, x)`.
    fn eval_row(&self, row: &[f64], col: &[usize]) -> f64 {
        self.coefficients.iter().zip(col).map(|(c, &j)| c * row[j]).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum ScalableModel {
    Svm(SvmModel),
    Svdd(SvddModel),
    Lr(LrModel),
}

impl ScalableModel {
    pub fn variant(&self) -> Variant {
        match self {
            ScalableModel::Svm(_) => Variant::Svm,
            ScalableModel::Svdd(_) => Variant::Svdd,
            ScalableModel::Lr(_) => Variant::Lr,
        }
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        match self {
            ScalableModel::Svm(m) => &m.hyperparameters,
            ScalableModel::Svdd(m) => &m.hyperparameters,
            ScalableModel::Lr(m) => &m.hyperparameters,
        }
    }

    pub fn expansion(&self) -> &KernelExpansion {
        match self {
            ScalableModel::Svm(m) => &m.expansion,
            ScalableModel::Svdd(m) => &m.expansion,
            ScalableModel::Lr(m) => &m.expansion,
        }
    }

    pub fn diagnostics(&self) -> &TrainingDiagnostics {
        match self {
            ScalableModel::Svm(m) => &m.diagnostics,
            ScalableModel::Svdd(m) => &m.diagnostics,
            ScalableModel::Lr(m) => &m.diagnostics,
        }
    }

    /// Pre-link value from the expansion value `s` and `k(x, x)`.
    fn prelink(&self, s: f64, kxx: f64) -> f64 {
        match self {
            ScalableModel::Svm(m) => m.prelink(s),
            ScalableModel::Svdd(m) => m.prelink(s, kxx),
            ScalableModel::Lr(m) => m.prelink(s),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::arg(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        Ok(file.model)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    #[serde(flatten)]
    model: ScalableModel,
}

impl ScalableClassifier for ScalableModel {
    fn boundary_radius(&self, x: &[f64]) -> f64 {
        match self {
            ScalableModel::Svm(m) => m.boundary_radius(x),
            ScalableModel::Svdd(m) => m.boundary_radius(x),
            ScalableModel::Lr(m) => m.boundary_radius(x),
        }
    }

    fn decision_value(&self, x: &[f64], rho: f64) -> f64 {
        match self {
            ScalableModel::Svm(m) => m.decision_value(x, rho),
            ScalableModel::Svdd(m) => m.decision_value(x, rho),
            ScalableModel::Lr(m) => m.decision_value(x, rho),
        }
    }
}

/// Check the common training preconditions and return `(n, gram)` ready for use.
pub(crate) fn check_training(train: &Dataset, hp: &Hyperparameters, gram: &GramMatrix) -> Result<usize> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if gram.len() != train.len() {
        return Err(Error::arg(format!(
            "gram matrix is {}x{} but the training set has {} points",
            gram.len(),
            gram.len(),
            train.len()
        )));
    }
    Ok(train.len())
}

/// Train one model with a precomputed Gram matrix of `train` under `hp.kernel`.
pub fn train_with_gram(
    variant: Variant,
    train: &Dataset,
    hp: &Hyperparameters,
    gram: &GramMatrix,
    opts: &TrainOptions,
) -> Result<ScalableModel> {
    Ok(match variant {
        Variant::Svm => ScalableModel::Svm(svm::train_with_gram(train, hp, gram, opts)?),
        Variant::Svdd => ScalableModel::Svdd(svdd::train_with_gram(train, hp, gram, opts)?),
        Variant::Lr => ScalableModel::Lr(lr::train_with_gram(train, hp, gram, &opts.lr)?),
    })
}

pub fn train(
    variant: Variant,
    train: &Dataset,
    hp: &Hyperparameters,
    opts: &TrainOptions,
    exec: Execution,
) -> Result<ScalableModel> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let k = gram(&hp.kernel, train.points(), exec)?;
    train_with_gram(variant, train, hp, &k, opts)
}

/// Boundary radii of every model at every point of `eval`.
///
/// Models whose support points are indexed into `basis` (the training points)
/// share one cross-kernel block per distinct kernel. Results are identical to
/// calling [`ScalableClassifier::boundary_radius`] point by point.
pub fn batch_boundary_radii(
    models: &[&ScalableModel],
    basis: &[Vec<f64>],
    eval: &[Vec<f64>],
    exec: Execution,
) -> Vec<Vec<f64>> {
    // Group kernel-expanded models by kernel; linear ones use explicit weights.
    let mut groups: Vec<(KernelSpec, Vec<usize>)> = Vec::new();
    let mut direct = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let e = m.expansion();
        let shared = e.weights().is_none() && e.indices.iter().zip(&e.points).all(|(&i, p)| basis.get(i) == Some(p));
        if !shared {
            direct.push(k);
            continue;
        }
        match groups.iter_mut().find(|(spec, _)| *spec == e.kernel) {
            Some((_, members)) => members.push(k),
            None => groups.push((e.kernel, vec![k])),
        }
    }

    // Union of support indices per group, and each model's column map.
    struct Group {
        spec: KernelSpec,
        members: Vec<usize>,
        cols: Vec<Vec<f64>>,
        maps: Vec<Vec<usize>>,
    }
    let groups: Vec<Group> = groups
        .into_iter()
        .map(|(spec, members)| {
            let mut pos = BTreeMap::new();
            for &k in &members {
                for &i in &models[k].expansion().indices {
                    pos.insert(i, 0usize);
                }
            }
            let cols: Vec<Vec<f64>> = pos.keys().map(|&i| basis[i].clone()).collect();
            for (c, v) in pos.values_mut().enumerate() {
                *v = c;
            }
            let maps = members
                .iter()
                .map(|&k| models[k].expansion().indices.iter().map(|i| pos[i]).collect())
                .collect();
            Group {
                spec,
                members,
                cols,
                maps,
            }
        })
        .collect();

    let n_blocks = eval.len().div_ceil(BLOCK_ROWS);
    let blocks: Vec<Vec<Vec<f64>>> = exec.map_range(n_blocks, |b| {
        let rows = &eval[b * BLOCK_ROWS..((b + 1) * BLOCK_ROWS).min(eval.len())];
        let mut out = vec![Vec::with_capacity(rows.len()); models.len()];
        for g in &groups {
            let block = cross_kernel(&g.spec, rows, &g.cols, Execution::Sequential);
            let w = g.cols.len();
            for (t, x) in rows.iter().enumerate() {
                let row = &block[t * w..(t + 1) * w];
                let kxx = g.spec.eval(x, x);
                for (&k, map) in g.members.iter().zip(&g.maps) {
                    let s = models[k].expansion().eval_row(row, map);
                    out[k].push(-models[k].prelink(s, kxx));
                }
            }
        }
        for &k in &direct {
            out[k] = rows.iter().map(|x| models[k].boundary_radius(x)).collect();
        }
        out
    });

    let mut result = vec![Vec::with_capacity(eval.len()); models.len()];
    for block in blocks {
        for (r, part) in result.iter_mut().zip(block) {
            r.extend(part);
        }
    }
    result
}

#[cfg(test)]
pub(crate) mod test_util {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::data::{Dataset, Label};

    /// Two overlapping blobs in `d` dimensions with both labels guaranteed.
    pub fn blobs(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = if i % 2 == 0 { Label::Safe } else { Label::Unsafe };
            let shift = if y == Label::Safe { -0.7 } else { 0.7 };
            points.push((0..d).map(|_| shift + rng.random_range(-1.0..1.0)).collect());
            labels.push(y);
        }
        Dataset::new(points, labels).unwrap()
    }

    pub fn random_points(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::test_util::*;
    use super::*;
    use proptest::prelude::*;

    fn kernels() -> [KernelSpec; 3] {
        [
            KernelSpec::Linear,
            KernelSpec::Gaussian { gamma: 0.5 },
            KernelSpec::Polynomial { degree: 2, coef0: 1.0 },
        ]
    }

    fn trained(variant: Variant, kernel: KernelSpec, seed: u64) -> ScalableModel {
        let data = blobs(40, 2, seed);
        let hp = Hyperparameters::new(1.0, 0.4, kernel).unwrap();
        train(variant, &data, &hp, &TrainOptions::default(), Execution::Sequential).unwrap()
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(Hyperparameters::new(1.0, 0.0, KernelSpec::Linear).is_err());
        assert!(Hyperparameters::new(1.0, 1.0, KernelSpec::Linear).is_err());
        assert!(Hyperparameters::new(0.0, 0.5, KernelSpec::Linear).is_err());
        let hp = Hyperparameters::new(2.0, 0.25, KernelSpec::Linear).unwrap();
        assert_eq!(hp.loss_weight(Label::Safe), 1.5);
        assert_eq!(hp.loss_weight(Label::Unsafe), 0.5);
        assert_eq!(hp.box_limit(Label::Safe), 1.5);
        assert_eq!(hp.box_limit(Label::Unsafe), 0.5);
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("knn".parse::<Variant>().is_err());
    }

    #[test]
    fn root_and_sign_change() {
        for variant in Variant::ALL {
            for kernel in kernels() {
                let m = trained(variant, kernel, 1);
                for x in random_points(100, 2, 2) {
                    let r = m.boundary_radius(&x);
                    assert!(m.decision_value(&x, r).abs() <= 1e-9);
                    assert!(m.decision_value(&x, r - 1e-6) < 0.0);
                    assert!(m.decision_value(&x, r + 1e-6) > 0.0);
                    assert_eq!(m.predict(&x, r), Label::Unsafe);
                }
            }
        }
    }

    #[test]
    fn batch_radii_match_pointwise() {
        let data = blobs(60, 2, 3);
        let eval = random_points(600, 2, 4);
        let mut models = Vec::new();
        for variant in Variant::ALL {
            for kernel in kernels() {
                let hp = Hyperparameters::new(0.5, 0.3, kernel).unwrap();
                models.push(train(variant, &data, &hp, &TrainOptions::default(), Execution::Parallel).unwrap());
            }
        }
        let refs: Vec<&ScalableModel> = models.iter().collect();
        let seq = batch_boundary_radii(&refs, data.points(), &eval, Execution::Sequential);
        let par = batch_boundary_radii(&refs, data.points(), &eval, Execution::Parallel);
        assert_eq!(seq, par);
        for (m, radii) in models.iter().zip(&seq) {
            let direct: Vec<f64> = eval.iter().map(|x| m.boundary_radius(x)).collect();
            assert_eq!(&direct, radii, "{}", m.variant());
        }
        // Without a matching basis, every model takes the direct path.
        let other = batch_boundary_radii(&refs, &[], &eval, Execution::Sequential);
        assert_eq!(other, seq);
    }

    #[test]
    fn json_round_trip() {
        for variant in Variant::ALL {
            for kernel in kernels() {
                let m = trained(variant, kernel, 5);
                let back = ScalableModel::from_json(&m.to_json().unwrap()).unwrap();
                assert_eq!(back, m);
                let x = [0.3, -0.2];
                assert_eq!(back.boundary_radius(&x), m.boundary_radius(&x));
            }
        }
        assert!(ScalableModel::from_json(r#"{"format_version": 99, "variant": "svm"}"#).is_err());
    }

    #[test]
    fn deterministic_training() {
        for variant in Variant::ALL {
            let a = trained(variant, KernelSpec::Gaussian { gamma: 0.5 }, 9);
            let b = trained(variant, KernelSpec::Gaussian { gamma: 0.5 }, 9);
            assert_eq!(a, b);
        }
    }

    fn models_for_props() -> &'static [ScalableModel] {
        static MODELS: std::sync::OnceLock<Vec<ScalableModel>> = std::sync::OnceLock::new();
        MODELS.get_or_init(|| {
            let mut out = Vec::new();
            for variant in Variant::ALL {
                for kernel in kernels() {
                    out.push(trained(variant, kernel, 7));
                }
            }
            out
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn scalability_and_nesting(
            x in proptest::collection::vec(-4.0f64..4.0, 2),
            r2 in -5.0f64..5.0,
            gap in 1e-6f64..5.0,
        ) {
            let r1 = r2 + gap;
            for m in models_for_props() {
                let f1 = m.decision_value(&x, r1);
                let f2 = m.decision_value(&x, r2);
                prop_assert!(f1 > f2);
                // S(r1) is contained in S(r2).
                prop_assert!(!(f1 < 0.0 && f2 >= 0.0));
                let rb = m.boundary_radius(&x);
                prop_assert_eq!(m.predict(&x, r2) == Label::Unsafe, r2 >= rb);
            }
        }
    }
}
