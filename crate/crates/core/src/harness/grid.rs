//! Decision values of a calibrated model over a uniform 2-d grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifiers::{ScalableClassifier, ScalableModel};
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::order_scaling::Region;
use crate::par::Execution;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x1: f64,
    pub x2: f64,
    /// `f(x, rho_eps)`; empty when the region is the whole space.
    pub f_value: Option<f64>,
    pub inside: bool,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Evaluates the region on `resolution x resolution` points of
/// `bbox = [x1_min, x1_max, x2_min, x2_max]`, row-major in `x2`.
///
/// Grid coordinates are in the units of `standardizer`'s input when one is
/// given; the model sees the standardized point.
pub fn boundary_grid(
    model: &ScalableModel,
    region: &Region,
    standardizer: Option<&Standardizer>,
    bbox: [f64; 4],
    resolution: usize,
) -> Result<Vec<GridPoint>> {
    let [a, b, c, d] = bbox;
    if !(a <= b && c <= d) || bbox.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg(format!(
            "bbox {bbox:?} must be [x1_min, x1_max, x2_min, x2_max]"
        )));
    }
    if resolution == 0 {
        return Err(Error::arg("grid resolution must be >= 1"));
    }
    let dim = model
        .expansion()
        .points()
        .first()
        .map(Vec::len)
        .or(standardizer.map(|s| s.mean.len()));
    if dim.is_some_and(|d| d != 2) {
        return Err(Error::arg(format!(
            "boundary grids need 2-d models, got dimension {}",
            dim.unwrap_or(0)
        )));
    }
    let xs = linspace(a, b, resolution);
    let ys = linspace(c, d, resolution);
    Ok(Execution::default().map_range(resolution * resolution, |k| {
        let (x1, x2) = (xs[k % resolution], ys[k / resolution]);
        let z = match standardizer {
            Some(s) => s.apply_point(&[x1, x2]),
            None => vec![x1, x2],
        };
        let f_value = region.rho_eps().map(|rho| model.decision_value(&z, rho));
        GridPoint {
            x1,
            x2,
            f_value,
            inside: f_value.is_none_or(|f| f < 0.0),
        }
    }))
}

pub fn write_grid_csv(path: &Path, points: &[GridPoint]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(f));
    if points.is_empty() {
        w.write_record(["x1", "x2", "f_value", "inside"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
