//! Synthetic data and CSV ingestion.

use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{validate_dataset, Dataset, Example};
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::rng::{gaussian_vector, RngStream};

fn uniform_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vector(rng, d, 1.0);
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

/// `n` examples with `x` uniform in the unit ball and a hidden `w*` uniform on the
/// sphere of radius `eta / 2`. Regression targets are `w*^T x` plus Gaussian noise,
/// clamped to `[-1, 1]`; classification labels are its sign.
pub fn generate_synthetic(
    n: usize,
    d: usize,
    noise_sd: f64,
    eta: f64,
    task: LossKind,
    rng: RngStream,
) -> Result<(Dataset, DVector<f64>)> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "need n >= 1 and d >= 1, got n = {n}, d = {d}"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::OutOfRange {
            name: "noise_sd",
            value: noise_sd,
            expected: "finite and >= 0".into(),
        });
    }
    let mut g = rng.rng();
    let w_star = uniform_direction(&mut g, d) * (eta / 2.0);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let r: f64 = g.random::<f64>().powf(1.0 / d as f64);
        let mut x = uniform_direction(&mut g, d) * r;
        if x.norm() > 1.0 {
            x /= x.norm();
        }
        let z: f64 = gaussian_vector(&mut g, 1, noise_sd)[0];
        let signal = w_star.dot(&x) + z;
        let y = match task {
            LossKind::LinearRegression => signal.clamp(-1.0, 1.0),
            LossKind::LogisticQuadratic => {
                if signal >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        examples.push(Example::new(x, y));
    }
    Ok((Dataset::new(examples)?, w_star))
}

/// Divisors applied by [`load_csv`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactors {
    pub feature: f64,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvOptions {
    pub target_column: String,
    pub scale: bool,
    pub label_threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedCsv {
    pub dataset: Dataset,
    pub scale: Option<ScaleFactors>,
    pub feature_names: Vec<String>,
}

/// Reads a numeric CSV with a header row; every column but the target is a feature.
///
/// With `scale`, features are divided by the largest row norm and the target by the
/// largest absolute target, so both bounds hold with equality on the extreme rows.
/// A label threshold replaces targets by `+1` above it and `-1` otherwise; such
/// labels are not rescaled.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<LoadedCsv> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(std::io::BufReader::new(file));
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target = header
        .iter()
        .position(|h| *h == opts.target_column)
        .ok_or_else(|| Error::InvalidInput(format!("{}: no column named `{}`", path.display(), opts.target_column)))?;
    if header.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "{}: need at least one feature column",
            path.display()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                path: path.into(),
                row,
                column: rec.len().min(header.len()) + 1,
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut x = Vec::with_capacity(header.len() - 1);
        let mut y = 0.0;
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    path: path.into(),
                    row,
                    column: j + 1,
                    message: format!("not a finite number: `{cell}`"),
                })?;
            if j == target {
                y = v;
            } else {
                x.push(v);
            }
        }
        xs.push(DVector::from_vec(x));
        ys.push(y);
    }
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(t) = opts.label_threshold {
        for y in &mut ys {
            *y = if *y > t { 1.0 } else { -1.0 };
        }
    }
    let mut factors = None;
    if opts.scale {
        let feature = xs.iter().map(|x| x.norm()).fold(0.0, f64::max);
        let target = if opts.label_threshold.is_some() {
            1.0
        } else {
            ys.iter().map(|y| y.abs()).fold(0.0, f64::max)
        };
        let feature = if feature > 0.0 { feature } else { 1.0 };
        let target = if target > 0.0 { target } else { 1.0 };
        for x in &mut xs {
            *x /= feature;
        }
        for y in &mut ys {
            *y /= target;
        }
        factors = Some(ScaleFactors { feature, target });
    }
    let dataset = Dataset::new(xs.into_iter().zip(ys).map(|(x, y)| Example::new(x, y)).collect())?;
    if let Some(v) = validate_dataset(&dataset).first() {
        return Err(Error::Precondition(format!(
            "{}: example {} violates the unit bounds ({:?}); load with scaling",
            path.display(),
            v.index,
            v.kind
        )));
    }
    let feature_names = header
        .into_iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, h)| h)
        .collect();
    Ok(LoadedCsv {
        dataset,
        scale: factors,
        feature_names,
    })
}
