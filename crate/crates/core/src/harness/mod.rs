//! Experiment pipeline behind the command-line front end.
//!
//! A run writes into its output directory:
//! `config.resolved.toml`, `standardizer.json`, `run.json` (members and
//! certificates), `report.csv`, `models/<variant>_<k>.json`, and per variant
//! and `eps` a family table `family_<variant>_eps_<eps>.csv` and a test-set
//! membership table `membership_<variant>_eps_<eps>.csv`.

pub mod config;
pub mod grid;
pub mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{batch_boundary_radii, ScalableModel, Variant};
use crate::data::gaussian::{GaussianSampler, CALIB_STREAM, TEST_STREAM, TRAIN_STREAM};
use crate::data::{self, generate_platoon_dataset, read_csv, split, standardize, Dataset, Label, Standardizer};
use crate::error::{Error, Result};
use crate::family::{calibrate_trained, train_family, FamilyOptions, FamilyResult};
use crate::kernels::default_gamma;
use crate::order_scaling::{
    check_plan, discarding_parameter, kappa, min_calibration_size, min_calibration_size_exact,
    min_calibration_size_with_kappa, CalibrationCertificate, ScalingPlan, KAPPA_HALF_ROUNDED,
};

pub use config::{DataConfig, ExperimentConfig, FamilyGrid, GaussianParams, GridConfig, KernelConfig};
pub use grid::{boundary_grid, write_grid_csv, GridPoint};
pub use report::{member_rows, write_report, ReportRow, TestScores};

pub const RUN_FORMAT_VERSION: u32 = 1;
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const STANDARDIZER_FILE: &str = "standardizer.json";
pub const MANIFEST_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.csv";

/// Raw (unstandardized) data for a run. Calibration sets are prefixes of
/// `calib_pool`.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub calib_pool: Dataset,
    pub test: Dataset,
}

/// Seed of the platoon shuffle, kept apart from the simulation streams.
fn split_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

pub fn load_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let n_pool = cfg.max_calibration_size()?;
    match &cfg.data {
        DataConfig::Gaussian {
            n_train,
            n_test,
            params,
        } => {
            let s = GaussianSampler::new(&params.spec(*n_train, n_pool, *n_test, cfg.seed))?;
            Ok(Splits {
                train: s.sample(*n_train, TRAIN_STREAM),
                calib_pool: s.sample(n_pool, CALIB_STREAM),
                test: s.sample(*n_test, TEST_STREAM),
            })
        }
        DataConfig::Platoon {
            n_samples,
            n_train,
            ranges,
        } => {
            let all = generate_platoon_dataset(*n_samples, ranges, cfg.seed, cfg.execution)?;
            let n_test = n_samples - n_train - n_pool;
            let (train, calib_pool, test) = split(&all, *n_train, n_pool, n_test, split_seed(cfg.seed))?;
            Ok(Splits {
                train,
                calib_pool,
                test,
            })
        }
        DataConfig::Csv { train, calib, test } => {
            let calib_pool = read_csv(calib)?;
            if calib_pool.len() < n_pool {
                return Err(Error::Config(format!(
                    "{} has {} rows but the largest calibration size is {n_pool}",
                    calib.display(),
                    calib_pool.len()
                )));
            }
            Ok(Splits {
                train: read_csv(train)?,
                calib_pool,
                test: read_csv(test)?,
            })
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `train.csv`, `calib.csv` and `test.csv` (with provenance sidecars)
/// into the output directory and returns their paths.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let s = load_splits(cfg)?;
    create_dir(&cfg.out_dir)?;
    let mut paths = Vec::new();
    for (name, d) in [("train", &s.train), ("calib", &s.calib_pool), ("test", &s.test)] {
        let p = cfg.out_dir.join(format!("{name}.csv"));
        data::write_csv(&p, d)?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanRow {
    pub rule: &'static str,
    pub n_c: usize,
    pub r: usize,
    /// `Bin(r-1; n_c, eps)`.
    pub tail: f64,
    pub certified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlanSummary {
    pub eps: f64,
    pub delta: f64,
    pub beta: f64,
    pub kappa: f64,
    pub rows: Vec<PlanRow>,
}

/// Calibration sizes from the closed-form bound (exact and rounded
/// constant) and from a direct binomial search.
pub fn cmd_plan(eps: f64, delta: f64, beta: f64) -> Result<PlanSummary> {
    let k = kappa(beta)?;
    let sizes = [
        ("bound", min_calibration_size(eps, delta, beta)?),
        (
            "bound_kappa_7.47",
            min_calibration_size_with_kappa(KAPPA_HALF_ROUNDED, eps, delta)?,
        ),
        ("smallest_certified", min_calibration_size_exact(eps, delta, beta)?),
    ];
    let rows = sizes
        .into_iter()
        .map(|(rule, n_c)| {
            let r = discarding_parameter(beta, eps, n_c)?;
            let check = check_plan(&ScalingPlan::new(eps, delta, r, n_c, beta)?);
            Ok(PlanRow {
                rule,
                n_c,
                r,
                tail: check.tail,
                certified: check.certified,
            })
        })
        .collect::<Result<_>>()?;
    Ok(PlanSummary {
        eps,
        delta,
        beta,
        kappa: k,
        rows,
    })
}

impl fmt::Display for PlanSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "eps = {}, delta = {}, beta = {}, kappa(beta) = {}",
            self.eps, self.delta, self.beta, self.kappa
        )?;
        writeln!(f, "{:<20} {:>8} {:>6} {:>12} certified", "rule", "n_c", "r", "tail")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<20} {:>8} {:>6} {:>12.4e} {}",
                r.rule, r.n_c, r.r, r.tail, r.certified
            )?;
        }
        Ok(())
    }
}

/// One calibration of one member, as stored in `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberCalibration {
    pub certificate: CalibrationCertificate,
    #[serde(rename = "J")]
    pub j: usize,
    pub score: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub variant: Variant,
    pub member: usize,
    pub hyperparameters: crate::classifiers::Hyperparameters,
    /// Relative to the run directory; absent when training failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub calibrations: Vec<MemberCalibration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub plans: Vec<ScalingPlan>,
    /// Bonferroni-corrected confidence, one per plan.
    pub family_confidence: Vec<f64>,
    pub members: Vec<ManifestMember>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&read_file(&run_dir.join(MANIFEST_FILE))?)?;
        if m.format_version != RUN_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "run format {} is not supported (expected {RUN_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub rows: Vec<ReportRow>,
    /// Every requested plan passed the binomial check.
    pub all_certified: bool,
    pub families: Vec<FamilyResult>,
}

fn eps_tag(eps: f64) -> String {
    format!("{eps}")
}

fn membership_name(variant: Variant, eps: f64) -> String {
    format!("membership_{variant}_eps_{}.csv", eps_tag(eps))
}

fn uncertified_error(plan: &ScalingPlan) -> Result<Error> {
    Ok(Error::Uncertified {
        eps: plan.eps,
        delta: plan.delta,
        r: plan.r,
        n_c: plan.n_c,
        tail: check_plan(plan).tail,
        min_n_c: min_calibration_size(plan.eps, plan.delta, 0.5)?,
    })
}

/// Standardize, train the family once per variant, calibrate it for every
/// `eps`, select, evaluate on the test set and write all outputs.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let plans = cfg.plans()?;
    let mut all_certified = true;
    for plan in &plans {
        if !check_plan(plan).certified {
            all_certified = false;
            if !cfg.force_uncertified {
                return Err(uncertified_error(plan)?);
            }
        }
    }

    let splits = load_splits(cfg)?;
    if splits.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let (train, rest, standardizer) = standardize(&splits.train, &[&splits.calib_pool, &splits.test])?;
    let [pool, test]: [Dataset; 2] = rest.try_into().expect("two datasets standardized");
    let kernel = cfg.kernel.resolve(|| default_gamma(train.points()));
    let family = cfg.family_with(kernel);
    let exec = cfg.execution;

    let out = &cfg.out_dir;
    create_dir(&out.join("models"))?;
    let mut resolved = cfg.clone();
    resolved.kernel = KernelConfig::from(kernel);
    resolved.n_calib = Some(plans.iter().map(|p| p.n_c).collect());
    write_file(&out.join(RESOLVED_CONFIG), &resolved.to_toml()?)?;
    write_file(
        &out.join(STANDARDIZER_FILE),
        &serde_json::to_string_pretty(&standardizer)?,
    )?;

    let fopts = FamilyOptions {
        train: cfg.train.clone(),
        index: cfg.index,
        force: cfg.force_uncertified,
        exec,
    };
    let mut rows = Vec::new();
    let mut manifest_members = Vec::new();
    let mut families = Vec::new();
    for &variant in &cfg.variants {
        let models = train_family(&train, &family, variant, &cfg.train, exec)?;
        let ok: Vec<&ScalableModel> = models.iter().filter_map(|m| m.as_deref().ok()).collect();
        let mut ok_radii = batch_boundary_radii(&ok, train.points(), test.points(), exec).into_iter();
        let test_radii: Vec<Option<Vec<f64>>> = models
            .iter()
            .map(|m| {
                m.as_ref()
                    .ok()
                    .map(|_| ok_radii.next().expect("one radius vector per model"))
            })
            .collect();

        let mut members: Vec<ManifestMember> = Vec::with_capacity(family.len());
        for (k, (m, hp)) in models.iter().zip(&family).enumerate() {
            let model_file = match m {
                Ok(model) => {
                    let name = format!("models/{variant}_{k}.json");
                    write_file(&out.join(&name), &model.to_json()?)?;
                    Some(name)
                }
                Err(_) => None,
            };
            members.push(ManifestMember {
                variant,
                member: k,
                hyperparameters: *hp,
                model_file,
                error: m.as_ref().err().cloned(),
                calibrations: Vec::new(),
            });
        }

        for plan in &plans {
            let calib = pool.slice(0..plan.n_c);
            let fr = calibrate_trained(&models, &family, variant, train.points(), &calib, plan, &fopts)?;
            let fam_path = out.join(format!("family_{variant}_eps_{}.csv", eps_tag(plan.eps)));
            let file = fs::File::create(&fam_path).map_err(|e| Error::io(&fam_path, e))?;
            fr.write_csv(std::io::BufWriter::new(file))?;

            let scores: Vec<Option<TestScores>> = fr
                .members
                .iter()
                .zip(&test_radii)
                .map(|(m, radii)| match (&m.fit, radii) {
                    (Ok(fit), Some(radii)) => Some(TestScores::new(&fit.certificate.region, radii, test.labels())),
                    _ => None,
                })
                .collect();
            report::write_membership(
                &out.join(membership_name(variant, plan.eps)),
                &fr,
                &test_radii,
                test.labels(),
            )?;
            rows.extend(member_rows(&fr, &scores, test.len()));
            for (k, m) in fr.members.iter().enumerate() {
                if let Ok(fit) = &m.fit {
                    members[k].calibrations.push(MemberCalibration {
                        certificate: fit.certificate.clone(),
                        j: fit.j,
                        score: fit.score,
                        selected: fr.selected == Some(k),
                    });
                }
            }
            families.push(fr);
        }
        manifest_members.extend(members);
    }

    let manifest = RunManifest {
        format_version: RUN_FORMAT_VERSION,
        family_confidence: families.iter().take(plans.len()).map(|f| f.confidence).collect(),
        plans,
        members: manifest_members,
    };
    write_file(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)?;
    write_report(&out.join(REPORT_FILE), &rows)?;
    Ok(RunOutcome {
        out_dir: out.clone(),
        rows,
        all_certified,
        families,
    })
}

/// A finished run loaded back from its directory.
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub standardizer: Standardizer,
    /// Indexed like `manifest.members`.
    pub models: Vec<Option<ScalableModel>>,
}

impl LoadedRun {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(run_dir)?;
        let standardizer: Standardizer = serde_json::from_str(&read_file(&run_dir.join(STANDARDIZER_FILE))?)?;
        let models = manifest
            .members
            .iter()
            .map(|m| {
                m.model_file
                    .as_ref()
                    .map(|f| ScalableModel::from_json(&read_file(&run_dir.join(f))?))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            manifest,
            standardizer,
            models,
        })
    }

    /// Member index in the manifest for `(variant, member)`.
    pub fn find(&self, variant: Variant, member: usize) -> Option<usize> {
        self.manifest
            .members
            .iter()
            .position(|m| m.variant == variant && m.member == member)
    }

    /// Selected member of `variant` for the plan with this `eps`.
    pub fn selected(&self, variant: Variant, eps: f64) -> Option<usize> {
        self.manifest.members.iter().find_map(|m| {
            (m.variant == variant && m.calibrations.iter().any(|c| c.selected && c.certificate.eps == eps))
                .then_some(m.member)
        })
    }
}

/// Re-evaluates every calibrated member of a finished run on `data` (raw
/// features, standardized with the run's fitted map) and writes a report.
pub fn cmd_evaluate(run_dir: &Path, data_path: &Path, output: &Path) -> Result<Vec<ReportRow>> {
    let run = LoadedRun::load(run_dir)?;
    let data = run.standardizer.apply(&read_csv(data_path)?)?;
    // All members were trained on one set; rebuild it from the stored support
    // points so kernel blocks are shared.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for m in run.models.iter().flatten() {
        let e = m.expansion();
        for (&i, p) in e.indices().iter().zip(e.points()) {
            if basis.len() <= i {
                basis.resize(i + 1, Vec::new());
            }
            basis[i] = p.clone();
        }
    }
    let present: Vec<&ScalableModel> = run.models.iter().flatten().collect();
    let mut radii_iter =
        batch_boundary_radii(&present, &basis, data.points(), crate::par::Execution::default()).into_iter();
    let radii: Vec<Option<Vec<f64>>> = run
        .models
        .iter()
        .map(|m| {
            m.as_ref()
                .map(|_| radii_iter.next().expect("one radius vector per model"))
        })
        .collect();

    // Same order as report.csv: variant, then eps, then member.
    let mut variants: Vec<Variant> = Vec::new();
    for m in &run.manifest.members {
        if !variants.contains(&m.variant) {
            variants.push(m.variant);
        }
    }
    let mut rows = Vec::new();
    for (variant, (idx, plan)) in variants
        .iter()
        .flat_map(|v| run.manifest.plans.iter().enumerate().map(move |p| (*v, p)))
    {
        let confidence = run.manifest.family_confidence.get(idx).copied().unwrap_or(0.0);
        for (m, r) in run
            .manifest
            .members
            .iter()
            .zip(&radii)
            .filter(|(m, _)| m.variant == variant)
        {
            let cal = m.calibrations.iter().find(|c| c.certificate.eps == plan.eps);
            let scores = match (cal, r) {
                (Some(c), Some(r)) => Some(TestScores::new(&c.certificate.region, r, data.labels())),
                _ => None,
            };
            rows.push(report::row_from_parts(
                m.variant,
                m.member,
                &m.hyperparameters,
                plan,
                confidence,
                check_plan(plan),
                cal.map(|c| (&c.certificate, c.j, c.selected)),
                m.error.as_deref(),
                scores.as_ref(),
                data.len(),
            ));
        }
    }
    write_report(output, &rows)?;
    Ok(rows)
}

/// Writes the decision value grid of one calibrated member.
pub fn cmd_boundary_grid(
    run_dir: &Path,
    variant: Variant,
    member: Option<usize>,
    eps: f64,
    bbox: [f64; 4],
    resolution: usize,
    output: &Path,
) -> Result<Vec<GridPoint>> {
    let run = LoadedRun::load(run_dir)?;
    if run.standardizer.mean.len() != 2 {
        return Err(Error::arg(format!(
            "boundary grids need 2-d data, the run has dimension {}",
            run.standardizer.mean.len()
        )));
    }
    let member = match member {
        Some(m) => m,
        None => run
            .selected(variant, eps)
            .ok_or_else(|| Error::arg(format!("no selected {variant} member for eps = {eps}")))?,
    };
    let idx = run
        .find(variant, member)
        .ok_or_else(|| Error::arg(format!("run has no {variant} member {member}")))?;
    let model = run.models[idx]
        .as_ref()
        .ok_or_else(|| Error::arg(format!("{variant} member {member} failed to train")))?;
    let cert = run.manifest.members[idx]
        .calibrations
        .iter()
        .find(|c| c.certificate.eps == eps)
        .ok_or_else(|| Error::arg(format!("{variant} member {member} has no calibration for eps = {eps}")))?;
    let points = boundary_grid(
        model,
        &cert.certificate.region,
        Some(&run.standardizer),
        bbox,
        resolution,
    )?;
    write_grid_csv(output, &points)?;
    Ok(points)
}

/// Safe and unsafe counts, handy for summaries.
pub fn label_counts(d: &Dataset) -> (usize, usize) {
    (d.count(Label::Safe), d.count(Label::Unsafe))
}
