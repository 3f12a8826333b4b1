//! Contributor-side randomization and the generic Gaussian release.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::calibration::{gaussian_c, NoiseCalibration};
use crate::domain::{Dataset, PrivacyBudget};
use crate::error::{Error, Result};
use crate::loss::{LossSpec, QuadraticForm};
use crate::rng::{gaussian_vector, RngStream};

/// Multiplier slack above the infimum constant in [`gaussian_release_sigma`].
pub const GAUSSIAN_RELEASE_SLACK: f64 = 1e-6;

/// What a contributor submits: `q + u`, `p - r` and the untouched constant.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedExample {
    pub q_tilde: DVector<f64>,
    pub p_tilde: DVector<f64>,
    pub s: f64,
}

impl PerturbedExample {
    pub fn dim(&self) -> usize {
        self.q_tilde.len()
    }
}

/// The two noise vectors one contributor drew.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub u: DVector<f64>,
    pub r: DVector<f64>,
}

/// Every draw behind a perturbed dataset, row `i` belonging to contributor `i`.
///
/// Holding this voids the privacy of the release; it exists for identity checks
/// and auditing of simulated runs only.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord {
    pub u: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Column sums of `r`.
    pub b: DVector<f64>,
}

impl NoiseRecord {
    pub fn from_draws(draws: &[NoiseDraw]) -> Result<Self> {
        let first = draws.first().ok_or(Error::EmptyDataset)?;
        let d = first.u.len();
        let n = draws.len();
        let mut u = DMatrix::zeros(n, d);
        let mut r = DMatrix::zeros(n, d);
        for (i, draw) in draws.iter().enumerate() {
            if draw.u.len() != d || draw.r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: draw.u.len().max(draw.r.len()),
                });
            }
            u.set_row(i, &draw.u.transpose());
            r.set_row(i, &draw.r.transpose());
        }
        let mut b = DVector::zeros(d);
        for draw in draws {
            b += &draw.r;
        }
        Ok(NoiseRecord { u, r, b })
    }

    /// All-zero record, matching a zero-variance calibration.
    pub fn zeros(n: usize, d: usize) -> Self {
        NoiseRecord {
            u: DMatrix::zeros(n, d),
            r: DMatrix::zeros(n, d),
            b: DVector::zeros(d),
        }
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }
}

fn check_dim(form: &QuadraticForm, cal: &NoiseCalibration) -> Result<()> {
    if form.dim() != cal.d {
        return Err(Error::DimensionMismatch {
            expected: cal.d,
            found: form.dim(),
        });
    }
    Ok(())
}

/// Perturbs one form and returns the noise as well.
pub fn perturb_example_recorded(
    form: &QuadraticForm,
    cal: &NoiseCalibration,
    rng: RngStream,
) -> Result<(PerturbedExample, NoiseDraw)> {
    check_dim(form, cal)?;
    let n = cal.n as f64;
    let mut g = rng.rng();
    let u = gaussian_vector(&mut g, cal.d, (cal.sigma_u2 / n).sqrt());
    let r = gaussian_vector(&mut g, cal.d, (cal.sigma_b2 / n).sqrt());
    let out = PerturbedExample {
        q_tilde: &form.q + &u,
        p_tilde: &form.p - &r,
        s: form.s,
    };
    Ok((out, NoiseDraw { u, r }))
}

pub fn perturb_example(form: &QuadraticForm, cal: &NoiseCalibration, rng: RngStream) -> Result<PerturbedExample> {
    perturb_example_recorded(form, cal, rng).map(|(e, _)| e)
}

/// Perturbs already-encoded forms; form `i` uses `rng.substream(i)`.
pub fn perturb_forms_recorded(
    forms: &[QuadraticForm],
    cal: &NoiseCalibration,
    rng: RngStream,
) -> Result<(Vec<PerturbedExample>, NoiseRecord)> {
    if forms.len() != cal.n {
        return Err(Error::Precondition(format!(
            "calibration is for n = {} but {} examples were given",
            cal.n,
            forms.len()
        )));
    }
    let pairs = forms
        .par_iter()
        .enumerate()
        .map(|(i, f)| perturb_example_recorded(f, cal, rng.substream(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (out, draws): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let record = NoiseRecord::from_draws(&draws)?;
    Ok((out, record))
}

pub fn perturb_forms(forms: &[QuadraticForm], cal: &NoiseCalibration, rng: RngStream) -> Result<Vec<PerturbedExample>> {
    if forms.len() != cal.n {
        return Err(Error::Precondition(format!(
            "calibration is for n = {} but {} examples were given",
            cal.n,
            forms.len()
        )));
    }
    forms
        .par_iter()
        .enumerate()
        .map(|(i, f)| perturb_example(f, cal, rng.substream(i as u64)))
        .collect()
}

pub fn perturb_dataset(
    dataset: &Dataset,
    spec: &LossSpec,
    cal: &NoiseCalibration,
    rng: RngStream,
) -> Result<Vec<PerturbedExample>> {
    perturb_forms(&spec.encode_dataset(dataset)?, cal, rng)
}

pub fn perturb_dataset_recorded(
    dataset: &Dataset,
    spec: &LossSpec,
    cal: &NoiseCalibration,
    rng: RngStream,
) -> Result<(Vec<PerturbedExample>, NoiseRecord)> {
    perturb_forms_recorded(&spec.encode_dataset(dataset)?, cal, rng)
}

/// Per-coordinate standard deviation of [`gaussian_release`].
pub fn gaussian_release_sigma(diameter: f64, budget: &PrivacyBudget) -> Result<f64> {
    if !(budget.epsilon < 1.0) {
        return Err(Error::OutOfRange {
            name: "epsilon",
            value: budget.epsilon,
            expected: "in (0, 1): the Gaussian mechanism guarantee does not cover epsilon >= 1".into(),
        });
    }
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(Error::OutOfRange {
            name: "diameter",
            value: diameter,
            expected: "finite and > 0".into(),
        });
    }
    Ok((1.0 + GAUSSIAN_RELEASE_SLACK) * gaussian_c(budget.delta) * diameter / budget.epsilon)
}

/// `x + Z` with isotropic Gaussian `Z`; `(epsilon, delta)`-locally private for
/// inputs whose domain has the given diameter.
pub fn gaussian_release(
    x: &DVector<f64>,
    diameter: f64,
    budget: &PrivacyBudget,
    rng: RngStream,
) -> Result<DVector<f64>> {
    let sigma = gaussian_release_sigma(diameter, budget)?;
    let mut g = rng.rng();
    Ok(x + gaussian_vector(&mut g, x.len(), sigma))
}

/// `q_0..q_{d-1},p_0..p_{d-1},s`.
pub fn perturbed_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (0..d).map(|j| format!("q_{j}")).collect();
    h.extend((0..d).map(|j| format!("p_{j}")));
    h.push("s".into());
    h
}

pub fn write_perturbed_csv<W: std::io::Write>(writer: W, rows: &[PerturbedExample]) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.dim());
    let mut w = csv::Writer::from_writer(writer);
    let ctx = |e| Error::csv("<output>", e);
    w.write_record(perturbed_header(d)).map_err(ctx)?;
    for row in rows {
        if row.dim() != d || row.p_tilde.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.dim(),
            });
        }
        // `{}` on f64 prints the shortest string that parses back to the same value.
        let rec = row
            .q_tilde
            .iter()
            .chain(row.p_tilde.iter())
            .chain(std::iter::once(&row.s))
            .map(|v| format!("{v}"));
        w.write_record(rec).map_err(ctx)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

pub fn write_perturbed_csv_path(path: &Path, rows: &[PerturbedExample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_perturbed_csv(std::io::BufWriter::new(file), rows).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_perturbed_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<PerturbedExample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let cols = header.len();
    if cols < 3 || cols % 2 == 0 {
        return Err(Error::Parse {
            path: path.into(),
            row: 1,
            column: cols,
            message: format!("expected 2d+1 columns, found {cols}"),
        });
    }
    let d = (cols - 1) / 2;
    for (j, (got, want)) in header.iter().zip(perturbed_header(d)).enumerate() {
        if got.trim() != want {
            return Err(Error::Parse {
                path: path.into(),
                row: 1,
                column: j + 1,
                message: format!("expected header `{want}`, found `{got}`"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = i + 2;
        let mut vals = Vec::with_capacity(cols);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                row,
                column: j + 1,
                message: format!("not a number: `{cell}`"),
            })?;
            vals.push(v);
        }
        if vals.len() != cols {
            return Err(Error::Parse {
                path: path.into(),
                row,
                column: vals.len() + 1,
                message: format!("expected {cols} fields, found {}", vals.len()),
            });
        }
        out.push(PerturbedExample {
            q_tilde: DVector::from_column_slice(&vals[..d]),
            p_tilde: DVector::from_column_slice(&vals[d..2 * d]),
            s: vals[2 * d],
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

pub fn read_perturbed_csv_path(path: &Path) -> Result<Vec<PerturbedExample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_perturbed_csv(std::io::BufReader::new(file), path)
}
