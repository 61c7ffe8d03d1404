//! Report tables.
//!
//! `report.csv` has one row per (variant, member, eps) with a fixed column
//! order (see [`ReportRow`]). `joint_freq` is `#{y = -1 and x inside} / n_test`;
//! `conditional_freq` divides the same count by the number of test points
//! inside instead. `J` counts safe calibration points inside the region and
//! drives selection; `test_J` is the same count on the test set and is only a
//! diagnostic. Fields that do not apply are left empty.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{Hyperparameters, Variant};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::family::FamilyResult;
use crate::order_scaling::{CalibrationCertificate, PlanCheck, Region, ScalingPlan};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variant: Variant,
    pub member: usize,
    pub eta: f64,
    pub tau: f64,
    pub kernel: String,
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
    pub n_c: usize,
    pub r: usize,
    pub n_u: Option<usize>,
    pub rho_eps: Option<f64>,
    pub region_kind: Option<String>,
    pub tail: f64,
    pub confidence: f64,
    pub certified: bool,
    #[serde(rename = "J")]
    pub j: Option<usize>,
    pub selected: bool,
    pub status: String,
    pub n_test: usize,
    pub inside: Option<usize>,
    pub unsafe_inside: Option<usize>,
    pub joint_freq: Option<f64>,
    pub conditional_freq: Option<f64>,
    #[serde(rename = "test_J")]
    pub test_j: Option<usize>,
    pub accuracy_rho0: Option<f64>,
}

impl ReportRow {
    pub const COLUMNS: [&'static str; 26] = [
        "variant",
        "member",
        "eta",
        "tau",
        "kernel",
        "eps",
        "delta",
        "beta",
        "n_c",
        "r",
        "n_u",
        "rho_eps",
        "region_kind",
        "tail",
        "confidence",
        "certified",
        "J",
        "selected",
        "status",
        "n_test",
        "inside",
        "unsafe_inside",
        "joint_freq",
        "conditional_freq",
        "test_J",
        "accuracy_rho0",
    ];
}

/// Test-set counts for one calibrated region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestScores {
    pub inside: usize,
    pub unsafe_inside: usize,
    pub safe_inside: usize,
    /// Points classified correctly at `rho = 0`.
    pub correct_rho0: usize,
}

impl TestScores {
    /// `radii` are the boundary radii of the test points.
    pub fn new(region: &Region, radii: &[f64], labels: &[Label]) -> Self {
        let mut s = Self {
            inside: 0,
            unsafe_inside: 0,
            safe_inside: 0,
            correct_rho0: 0,
        };
        for (&rho, &y) in radii.iter().zip(labels) {
            if region.contains_radius(rho) {
                s.inside += 1;
                match y {
                    Label::Safe => s.safe_inside += 1,
                    Label::Unsafe => s.unsafe_inside += 1,
                }
            }
            let predicted = if rho > 0.0 { Label::Safe } else { Label::Unsafe };
            s.correct_rho0 += usize::from(predicted == y);
        }
        s
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// One report row. `calibration` is `None` when the member has no region.
#[allow(clippy::too_many_arguments)]
pub fn row_from_parts(
    variant: Variant,
    member: usize,
    hp: &Hyperparameters,
    plan: &ScalingPlan,
    confidence: f64,
    check: PlanCheck,
    calibration: Option<(&CalibrationCertificate, usize, bool)>,
    error: Option<&str>,
    scores: Option<&TestScores>,
    n_test: usize,
) -> ReportRow {
    let cert = calibration.map(|c| c.0);
    let status = match (calibration, error) {
        (Some(_), _) => "ok".to_string(),
        (None, Some(e)) => format!("failed: {e}"),
        (None, None) => "failed".to_string(),
    };
    ReportRow {
        variant,
        member,
        eta: hp.eta,
        tau: hp.tau,
        kernel: hp.kernel.to_string(),
        eps: plan.eps,
        delta: plan.delta,
        beta: plan.beta,
        n_c: plan.n_c,
        r: plan.r,
        n_u: cert.map(|c| c.n_u),
        rho_eps: cert.and_then(|c| c.region.rho_eps()),
        region_kind: cert.map(|c| c.region.kind().to_string()),
        tail: check.tail,
        confidence,
        certified: check.certified,
        j: calibration.map(|c| c.1),
        selected: calibration.is_some_and(|c| c.2),
        status,
        n_test,
        inside: scores.map(|s| s.inside),
        unsafe_inside: scores.map(|s| s.unsafe_inside),
        joint_freq: scores.and_then(|s| ratio(s.unsafe_inside, n_test)),
        conditional_freq: scores.and_then(|s| ratio(s.unsafe_inside, s.inside)),
        test_j: scores.map(|s| s.safe_inside),
        accuracy_rho0: scores.and_then(|s| ratio(s.correct_rho0, n_test)),
    }
}

/// Rows for one calibrated family; `scores[k]` belongs to member `k`.
pub fn member_rows(fr: &FamilyResult, scores: &[Option<TestScores>], n_test: usize) -> Vec<ReportRow> {
    let check = PlanCheck {
        certified: fr.certified,
        tail: fr.tail,
    };
    fr.members
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let fit = m.fit.as_ref().ok();
            row_from_parts(
                fr.variant,
                k,
                &m.hyperparameters,
                &fr.plan,
                fr.confidence,
                check,
                fit.map(|f| (&f.certificate, f.j, fr.selected == Some(k))),
                m.fit.as_ref().err().map(String::as_str),
                scores.get(k).and_then(Option::as_ref),
                n_test,
            )
        })
        .collect()
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = create(path)?;
    if rows.is_empty() {
        w.write_record(ReportRow::COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Per test point: `index, label`, then `1`/`0` for membership in each
/// member's region (empty when the member has none).
pub fn write_membership(
    path: &Path,
    fr: &FamilyResult,
    test_radii: &[Option<Vec<f64>>],
    labels: &[Label],
) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..fr.members.len()).map(|k| format!("member_{k}")));
    w.write_record(&header)?;
    let regions: Vec<Option<(&Region, &Vec<f64>)>> = fr
        .members
        .iter()
        .zip(test_radii)
        .map(|(m, r)| Some((&m.fit.as_ref().ok()?.certificate.region, r.as_ref()?)))
        .collect();
    let mut rec = Vec::with_capacity(header.len());
    for (i, y) in labels.iter().enumerate() {
        rec.clear();
        rec.push(i.to_string());
        rec.push(y.as_i8().to_string());
        for reg in &regions {
            rec.push(match reg {
                Some((region, radii)) => u8::from(region.contains_radius(radii[i])).to_string(),
                None => String::new(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
