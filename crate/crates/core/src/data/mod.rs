//! Labeled datasets, splitting, standardization and CSV persistence.

pub mod gaussian;
pub mod platoon;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gaussian::{sample_gaussian, GaussianSpec};
pub use platoon::{generate_platoon_dataset, simulate_platoon, PlatoonRanges, PlatoonSpec};

/// Binary label: `Safe` is `+1`, `Unsafe` is `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Safe,
    Unsafe,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Safe => 1.0,
            Label::Unsafe => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Safe => 1,
            Label::Unsafe => -1,
        }
    }

    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Label::Safe),
            -1 => Ok(Label::Unsafe),
            other => Err(Error::arg(format!("label must be +1 or -1, got {other}"))),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Label::Safe => Label::Unsafe,
            Label::Unsafe => Label::Safe,
        }
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub spec: toml::Table,
}

impl Provenance {
    pub fn new(generator: impl Into<String>, seed: Option<u64>, spec: toml::Table) -> Self {
        Self {
            generator: generator.into(),
            seed,
            spec,
        }
    }
}

/// Ordered list of `(features, label)` pairs of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<Label>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.len());
        Self::with_dim(dim, points, labels)
    }

    pub fn with_dim(dim: usize, points: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
            return Err(Error::arg(format!(
                "point {i} has dimension {} (expected {dim})",
                p.len()
            )));
        }
        Ok(Self {
            dim,
            points,
            labels,
            provenance: Provenance::default(),
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::new(),
            labels: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        self.points.iter().zip(&self.labels).map(|(x, &y)| (x.as_slice(), y))
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&y| y == label).count()
    }

    pub fn has_both_labels(&self) -> bool {
        self.count(Label::Safe) > 0 && self.count(Label::Unsafe) > 0
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            dim: self.dim,
            points: self.points[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
            provenance: self.provenance.clone(),
        }
    }

    /// The subset carrying `label`.
    pub fn filter_label(&self, label: Label) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        self.subset(&idx)
    }

    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if !other.is_empty() && !self.is_empty() && other.dim != self.dim {
            return Err(Error::arg(format!(
                "cannot append dimension {} to dimension {}",
                other.dim, self.dim
            )));
        }
        if self.is_empty() {
            self.dim = other.dim;
        }
        self.points.extend(other.points.iter().cloned());
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }
}

/// Seeded shuffle followed by contiguous train/calibration/test slices.
pub fn split(
    data: &Dataset,
    n_train: usize,
    n_calib: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let need = n_train + n_calib + n_test;
    if need > data.len() {
        return Err(Error::arg(format!(
            "split needs {need} samples but the dataset has {}",
            data.len()
        )));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = data.subset(&idx[..n_train]);
    let calib = data.subset(&idx[n_train..n_train + n_calib]);
    let test = data.subset(&idx[n_train + n_calib..need]);
    Ok((train, calib, test))
}

/// Per-feature affine map fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero training variance; they map to 0.
    pub constant: Vec<bool>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::arg("cannot standardize on an empty training set"));
        }
        let n = train.len() as f64;
        let d = train.dim();
        let mut mean = vec![0.0; d];
        for p in train.points() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for p in train.points() {
            for j in 0..d {
                var[j] += (p[j] - mean[j]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let constant = std.iter().map(|&s| !(s > 0.0)).collect();
        Ok(Self { mean, std, constant })
    }

    pub fn has_constant_features(&self) -> bool {
        self.constant.iter().any(|&c| c)
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.constant[j] {
                    0.0
                } else {
                    (v - self.mean[j]) / self.std[j]
                }
            })
            .collect()
    }

    pub fn invert_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, v)| {
                if self.constant[j] {
                    self.mean[j]
                } else {
                    v * self.std[j] + self.mean[j]
                }
            })
            .collect()
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if !data.is_empty() && data.dim() != self.mean.len() {
            return Err(Error::arg(format!(
                "standardizer fitted on dimension {} applied to dimension {}",
                self.mean.len(),
                data.dim()
            )));
        }
        let points = data.points().iter().map(|p| self.apply_point(p)).collect();
        Ok(
            Dataset::with_dim(self.mean.len(), points, data.labels().to_vec())?
                .with_provenance(data.provenance.clone()),
        )
    }
}

/// Fit on `train` and transform `train` and every dataset in `others`.
pub fn standardize(train: &Dataset, others: &[&Dataset]) -> Result<(Dataset, Vec<Dataset>, Standardizer)> {
    let st = Standardizer::fit(train)?;
    let t = st.apply(train)?;
    let rest = others.iter().map(|d| st.apply(d)).collect::<Result<Vec<_>>>()?;
    Ok((t, rest, st))
}

/// Path of the provenance record written next to a dataset CSV.
pub fn provenance_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("provenance.toml")
}

/// CSV with header `f0,...,f{d-1},label` plus a provenance sidecar.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(data.dim() + 1);
    for (x, y) in data.iter() {
        rec.clear();
        rec.extend(x.iter().map(|v| v.to_string()));
        rec.push(y.as_i8().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let prov = toml::to_string(&data.provenance).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(provenance_path(path), prov).map_err(|e| Error::io(provenance_path(path), e))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().last() != Some("label") {
        return Err(Error::arg(format!("{}: last column must be 'label'", path.display())));
    }
    let dim = header.len() - 1;
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::arg(format!("{} row {}: {e} ({s:?})", path.display(), line + 1)))
        };
        let x = rec.iter().take(dim).map(parse).collect::<Result<Vec<_>>>()?;
        let y = parse(&rec[dim])?;
        points.push(x);
        labels.push(Label::from_i64(y as i64)?);
    }
    let mut data = Dataset::with_dim(dim, points, labels)?;
    let pp = provenance_path(path);
    if let Ok(text) = fs::read_to_string(&pp) {
        data.provenance = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let pts = (0..n).map(|i| vec![i as f64, (i * i) as f64, 3.0]).collect();
        let labels = (0..n)
            .map(|i| if i % 3 == 0 { Label::Unsafe } else { Label::Safe })
            .collect();
        Dataset::new(pts, labels).unwrap()
    }

    #[test]
    fn split_is_disjoint_and_exact() {
        let d = toy(10);
        let (a, b, c) = split(&d, 5, 3, 2, 9).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (5, 3, 2));
        let mut firsts: Vec<i64> = a
            .points()
            .iter()
            .chain(b.points())
            .chain(c.points())
            .map(|p| p[0] as i64)
            .collect();
        firsts.sort();
        assert_eq!(firsts, (0..10).collect::<Vec<_>>());

        let again = split(&d, 5, 3, 2, 9).unwrap();
        assert_eq!((a, b, c), again);
        assert!(split(&d, 5, 5, 1, 0).is_err());
    }

    #[test]
    fn standardize_properties() {
        let d = toy(40);
        let (t, rest, st) = standardize(&d, &[&d]).unwrap();
        assert!(st.has_constant_features());
        for j in 0..2 {
            let m: f64 = t.points().iter().map(|p| p[j]).sum::<f64>() / 40.0;
            assert!(m.abs() < 1e-12);
        }
        assert!(t.points().iter().all(|p| p[2] == 0.0));
        assert_eq!(rest[0], t);
        for (orig, z) in d.points().iter().zip(t.points()) {
            let back = st.invert_point(z);
            for (a, b) in orig.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        assert!(Standardizer::fit(&Dataset::empty(2)).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut d = toy(6);
        d.provenance = Provenance::new("toy", Some(3), toml::Table::new());
        write_csv(&path, &d).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back, d);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("f0,f1,f2,label\n"));

        let empty = Dataset::empty(2);
        let p2 = dir.path().join("e.csv");
        write_csv(&p2, &empty).unwrap();
        assert_eq!(fs::read_to_string(&p2).unwrap(), "f0,f1,label\n");
        assert_eq!(read_csv(&p2).unwrap().dim(), 2);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![vec![1.0], vec![1.0, 2.0]], vec![Label::Safe; 2]).is_err());
        assert!(Dataset::new(vec![vec![1.0]], vec![]).is_err());
        assert!(Label::from_i64(0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn split_partitions_any_sizes(n in 1usize..60, a in 0usize..60, b in 0usize..60, seed in 0u64..1000) {
            let d = toy(n);
            let (a, b) = (a.min(n), b.min(n - a.min(n)));
            let c = n - a - b;
            let (x, y, z) = split(&d, a, b, c, seed).unwrap();
            proptest::prop_assert_eq!((x.len(), y.len(), z.len()), (a, b, c));
            let mut firsts: Vec<i64> = x.points().iter().chain(y.points()).chain(z.points()).map(|p| p[0] as i64).collect();
            firsts.sort();
            proptest::prop_assert_eq!(firsts, (0..n as i64).collect::<Vec<_>>());
        }
    }
}
