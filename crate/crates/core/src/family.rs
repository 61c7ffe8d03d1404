//! Calibration of a finite family of hyperparameters on one calibration set,
//! with a Bonferroni-corrected confidence and selection by a performance index.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifiers::{
    batch_boundary_radii, train_with_gram, Hyperparameters, ScalableClassifier, ScalableModel, TrainOptions, Variant,
};
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec};
use crate::order_scaling::{
    calibrate_radii, check_plan, min_calibration_size, CalibrationCertificate, Region, ScalingPlan,
};
use crate::par::Execution;

/// Criterion used to pick the best member.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceIndex {
    /// Number of safe calibration points inside the region.
    #[default]
    SafeCount,
    /// Fraction of calibration points on the correct side of the region.
    Accuracy,
    /// Negated number of unsafe calibration points inside the region.
    FalsePositives,
}

impl PerformanceIndex {
    /// Score to maximize, from the calibration radii of each class.
    pub fn score(self, region: &Region, safe_radii: &[f64], unsafe_radii: &[f64]) -> f64 {
        let safe_in = count_inside(region, safe_radii);
        let unsafe_in = count_inside(region, unsafe_radii);
        match self {
            PerformanceIndex::SafeCount => safe_in as f64,
            PerformanceIndex::Accuracy => {
                let n = safe_radii.len() + unsafe_radii.len();
                if n == 0 {
                    0.0
                } else {
                    (safe_in + unsafe_radii.len() - unsafe_in) as f64 / n as f64
                }
            }
            PerformanceIndex::FalsePositives => -(unsafe_in as f64),
        }
    }
}

pub fn count_inside(region: &Region, radii: &[f64]) -> usize {
    radii.iter().filter(|&&r| region.contains_radius(r)).count()
}

/// `J`: safe calibration points inside the region, membership by `f < 0`.
pub fn performance_j<C: ScalableClassifier + ?Sized>(model: &C, region: &Region, calib_safe: &Dataset) -> usize {
    calib_safe
        .iter()
        .filter(|(x, y)| *y == Label::Safe && region.contains(model, x))
        .count()
}

#[derive(Clone, Debug, Default)]
pub struct FamilyOptions {
    pub train: TrainOptions,
    pub index: PerformanceIndex,
    /// Accept plans that fail the binomial check.
    pub force: bool,
    pub exec: Execution,
}

/// A trained member, or the reason training failed.
pub type TrainedMember = std::result::Result<Arc<ScalableModel>, String>;

/// Train one model per hyperparameter. Members sharing a kernel share one
/// Gram matrix; failures are recorded per member.
pub fn train_family(
    train: &Dataset,
    family: &[Hyperparameters],
    variant: Variant,
    opts: &TrainOptions,
    exec: Execution,
) -> Result<Vec<TrainedMember>> {
    if family.is_empty() {
        return Err(Error::arg("hyperparameter family is empty"));
    }
    if train.is_empty() {
        return Err(Error::arg("empty training set"));
    }
    for hp in family {
        hp.validate()?;
    }
    let mut kernels: Vec<KernelSpec> = Vec::new();
    for hp in family {
        if !kernels.contains(&hp.kernel) {
            kernels.push(hp.kernel);
        }
    }
    let grams: Vec<GramMatrix> = kernels
        .iter()
        .map(|k| gram(k, train.points(), exec))
        .collect::<Result<_>>()?;
    Ok(exec.map(family, |hp| {
        let k = kernels.iter().position(|s| *s == hp.kernel).expect("kernel collected");
        train_with_gram(variant, train, hp, &grams[k], opts)
            .map(Arc::new)
            .map_err(|e| e.to_string())
    }))
}

#[derive(Clone, Debug)]
pub struct MemberFit {
    pub model: Arc<ScalableModel>,
    /// Standalone certificate with the family size filled in.
    pub certificate: CalibrationCertificate,
    /// Safe calibration points inside the region.
    pub j: usize,
    /// Value of the selection index.
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct FamilyMember {
    pub hyperparameters: Hyperparameters,
    pub fit: std::result::Result<MemberFit, String>,
}

#[derive(Clone, Debug)]
pub struct FamilyResult {
    pub variant: Variant,
    pub plan: ScalingPlan,
    pub members: Vec<FamilyMember>,
    /// `Bin(r-1; n_c, eps)`.
    pub tail: f64,
    /// `max(0, 1 - m * tail)`.
    pub confidence: f64,
    pub certified: bool,
    pub index: PerformanceIndex,
    pub selected: Option<usize>,
}

/// Calibrate already trained members on `calib`.
///
/// `basis` is the training point set the models were trained on; it lets the
/// members share kernel evaluations.
pub fn calibrate_trained(
    models: &[TrainedMember],
    family: &[Hyperparameters],
    variant: Variant,
    basis: &[Vec<f64>],
    calib: &Dataset,
    plan: &ScalingPlan,
    opts: &FamilyOptions,
) -> Result<FamilyResult> {
    if models.is_empty() || models.len() != family.len() {
        return Err(Error::arg("family and trained members differ in size"));
    }
    if calib.len() != plan.n_c {
        return Err(Error::arg(format!(
            "calibration set has {} samples but the plan expects n_c = {}",
            calib.len(),
            plan.n_c
        )));
    }
    let check = check_plan(plan);
    if !check.certified && !opts.force {
        return Err(Error::Uncertified {
            eps: plan.eps,
            delta: plan.delta,
            r: plan.r,
            n_c: plan.n_c,
            tail: check.tail,
            min_n_c: min_calibration_size(plan.eps, plan.delta, 0.5)?,
        });
    }
    let m = models.len();
    let ok: Vec<&ScalableModel> = models.iter().filter_map(|r| r.as_deref().ok()).collect();
    let radii = batch_boundary_radii(&ok, basis, calib.points(), opts.exec);

    let mut radii_iter = radii.into_iter();
    let mut members = Vec::with_capacity(m);
    for (trained, hp) in models.iter().zip(family) {
        let fit = match trained {
            Err(e) => Err(e.clone()),
            Ok(model) => {
                let r = radii_iter.next().expect("one radius vector per trained member");
                let (mut safe, mut unsafe_) = (Vec::new(), Vec::new());
                for (ri, y) in r.into_iter().zip(calib.labels()) {
                    match y {
                        Label::Safe => safe.push(ri),
                        Label::Unsafe => unsafe_.push(ri),
                    }
                }
                calibrate_radii(&unsafe_, plan, opts.force)
                    .map(|cert| {
                        let certificate = cert.for_family(m);
                        MemberFit {
                            model: Arc::clone(model),
                            j: count_inside(&certificate.region, &safe),
                            score: opts.index.score(&certificate.region, &safe, &unsafe_),
                            certificate,
                        }
                    })
                    .map_err(|e| e.to_string())
            }
        };
        members.push(FamilyMember {
            hyperparameters: *hp,
            fit,
        });
    }
    let mut result = FamilyResult {
        variant,
        plan: *plan,
        members,
        tail: check.tail,
        confidence: (1.0 - m as f64 * check.tail).clamp(0.0, 1.0),
        certified: check.certified,
        index: opts.index,
        selected: None,
    };
    result.selected = select_best(&result).ok();
    Ok(result)
}

/// Train and calibrate every member of `family` on the same calibration set.
pub fn calibrate_family(
    train: &Dataset,
    calib: &Dataset,
    family: &[Hyperparameters],
    variant: Variant,
    plan: &ScalingPlan,
    opts: &FamilyOptions,
) -> Result<FamilyResult> {
    if train.dim() != calib.dim() {
        return Err(Error::arg("training and calibration sets differ in dimension"));
    }
    let models = train_family(train, family, variant, &opts.train, opts.exec)?;
    calibrate_trained(&models, family, variant, train.points(), calib, plan, opts)
}

/// Lowest index attaining the maximal score among fitted members.
pub fn select_best(result: &FamilyResult) -> Result<usize> {
    argmax_lowest(result.members.iter().map(|m| m.fit.as_ref().ok().map(|f| f.score)))
        .ok_or_else(|| Error::Training("every family member failed".into()))
}

/// Index of the first maximum among the `Some` entries.
pub fn argmax_lowest(scores: impl IntoIterator<Item = Option<f64>>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if let Some(s) = s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    best.map(|(i, _)| i)
}

impl FamilyResult {
    pub const CSV_HEADER: [&'static str; 16] = [
        "variant",
        "eta",
        "tau",
        "kernel",
        "rho_eps",
        "region_kind",
        "J",
        "confidence",
        "selected",
        "member",
        "status",
        "score",
        "eps",
        "r",
        "n_c",
        "n_u",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (k, m) in self.members.iter().enumerate() {
            let hp = &m.hyperparameters;
            let selected = (self.selected == Some(k)).to_string();
            let common = [
                self.variant.to_string(),
                hp.eta.to_string(),
                hp.tau.to_string(),
                hp.kernel.to_string(),
            ];
            let rest: Vec<String> = match &m.fit {
                Ok(f) => vec![
                    f.certificate.region.to_string(),
                    f.certificate.region.kind().to_string(),
                    f.j.to_string(),
                    self.confidence.to_string(),
                    selected,
                    k.to_string(),
                    "ok".to_string(),
                    f.score.to_string(),
                    self.plan.eps.to_string(),
                    self.plan.r.to_string(),
                    self.plan.n_c.to_string(),
                    f.certificate.n_u.to_string(),
                ],
                Err(e) => vec![
                    String::new(),
                    "failed".to_string(),
                    String::new(),
                    self.confidence.to_string(),
                    selected,
                    k.to_string(),
                    format!("failed: {e}"),
                    String::new(),
                    self.plan.eps.to_string(),
                    self.plan.r.to_string(),
                    self.plan.n_c.to_string(),
                    String::new(),
                ],
            };
            w.write_record(common.iter().chain(&rest))?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
