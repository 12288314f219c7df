//! Sample-quality metrics: maximum mean discrepancy and mode coverage.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VipsError};
use crate::gaussian::Gaussian;
use crate::mixture::MixtureModel;

/// Points used for the per-dimension median of squared differences.
pub const MEDIAN_SUBSAMPLE: usize = 2000;
/// Minimum learned weight for a component to count towards a mode.
pub const MODE_MIN_WEIGHT: f64 = 1e-3;
/// Mahalanobis radius within which a mode counts as discovered.
pub const MODE_RADIUS: f64 = 3.0;

/// Squared-exponential kernel
/// `k(x, y) = exp(−(1/α) Σ_d (x_d − y_d)² / m_d)` where `m_d` is the median
/// squared difference of dimension `d` within the ground-truth set.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdKernel {
    medians: Vec<f64>,
    inv_scales: Vec<f64>,
    alpha: f64,
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

impl MmdKernel {
    /// Builds the kernel from a ground-truth sample set (rows are samples).
    ///
    /// Medians run over all pairs `i < j`. Sets larger than
    /// [`MEDIAN_SUBSAMPLE`] are reduced per dimension to evenly spaced order
    /// statistics, which keeps the result independent of row order. Zero
    /// medians are replaced by one.
    pub fn from_ground_truth(ground_truth: &DMatrix<f64>, alpha: f64) -> Result<Self> {
        let n = ground_truth.nrows();
        if n < 2 {
            return Err(VipsError::InvalidInput(
                "kernel needs at least two ground-truth samples".into(),
            ));
        }
        if alpha.is_nan() || alpha <= 0.0 {
            return Err(VipsError::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        let medians: Vec<f64> = ground_truth
            .column_iter()
            .map(|col| {
                let mut vals: Vec<f64> = col.iter().copied().collect();
                vals.sort_by(f64::total_cmp);
                if n > MEDIAN_SUBSAMPLE {
                    vals = (0..MEDIAN_SUBSAMPLE)
                        .map(|k| vals[k * (n - 1) / (MEDIAN_SUBSAMPLE - 1)])
                        .collect();
                }
                let m = vals.len();
                let mut sq = Vec::with_capacity(m * (m - 1) / 2);
                for i in 0..m {
                    for j in i + 1..m {
                        let d = vals[i] - vals[j];
                        sq.push(d * d);
                    }
                }
                let med = median(&mut sq);
                if med > 0.0 && med.is_finite() {
                    med
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self::from_medians(medians, alpha))
    }

    pub fn from_medians(medians: Vec<f64>, alpha: f64) -> Self {
        let inv_scales = medians.iter().map(|m| 1.0 / (alpha * m)).collect();
        Self {
            medians,
            inv_scales,
            alpha,
        }
    }

    /// Per-dimension median squared differences (the kernel's diagonal).
    pub fn medians(&self) -> &[f64] {
        &self.medians
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.medians.len()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((a, b), w) in x.iter().zip(y).zip(&self.inv_scales) {
            let d = a - b;
            s += d * d * w;
        }
        (-s).exp()
    }

    fn rows(&self, m: &DMatrix<f64>) -> Result<Vec<f64>> {
        if m.ncols() != self.dim() {
            return Err(VipsError::DimensionMismatch {
                expected: self.dim(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(VipsError::EmptySampleSet);
        }
        // Row-major copy for cache-friendly pair loops.
        Ok(m.transpose().as_slice().to_vec())
    }

    fn self_term(&self, rows: &[f64]) -> f64 {
        let d = self.dim();
        let n = rows.len() / d;
        let mut acc = 0.0;
        for i in 0..n {
            let xi = &rows[i * d..(i + 1) * d];
            for j in i + 1..n {
                acc += self.eval(xi, &rows[j * d..(j + 1) * d]);
            }
        }
        (2.0 * acc + n as f64) / (n * n) as f64
    }

    fn cross_term(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.dim();
        let (m, n) = (a.len() / d, b.len() / d);
        let mut acc = 0.0;
        for i in 0..m {
            let xi = &a[i * d..(i + 1) * d];
            for j in 0..n {
                acc += self.eval(xi, &b[j * d..(j + 1) * d]);
            }
        }
        acc / (m * n) as f64
    }
}

/// Biased (V-statistic) squared MMD between two sample sets.
pub fn mmd(x: &DMatrix<f64>, y: &DMatrix<f64>, kernel: &MmdKernel) -> Result<f64> {
    let xr = kernel.rows(x)?;
    let yr = kernel.rows(y)?;
    Ok(kernel.self_term(&xr) + kernel.self_term(&yr) - 2.0 * kernel.cross_term(&xr, &yr))
}

/// A ground-truth set with its kernel and cached self-similarity term, for
/// repeated MMD evaluations against the same reference.
#[derive(Debug, Clone)]
pub struct MmdReference {
    kernel: MmdKernel,
    rows: Vec<f64>,
    self_term: f64,
}

impl MmdReference {
    pub fn new(ground_truth: &DMatrix<f64>, alpha: f64) -> Result<Self> {
        let kernel = MmdKernel::from_ground_truth(ground_truth, alpha)?;
        Self::with_kernel(ground_truth, kernel)
    }

    pub fn with_kernel(ground_truth: &DMatrix<f64>, kernel: MmdKernel) -> Result<Self> {
        let rows = kernel.rows(ground_truth)?;
        let self_term = kernel.self_term(&rows);
        Ok(Self {
            kernel,
            rows,
            self_term,
        })
    }

    pub fn kernel(&self) -> &MmdKernel {
        &self.kernel
    }

    pub fn mmd(&self, x: &DMatrix<f64>) -> Result<f64> {
        let xr = self.kernel.rows(x)?;
        Ok(self.kernel.self_term(&xr) + self.self_term - 2.0 * self.kernel.cross_term(&xr, &self.rows))
    }
}

/// Number of target components whose mean lies within Mahalanobis distance
/// 3 (under the target component's covariance) of the mean of a learned
/// component with weight at least `1e-3`.
pub fn modes_discovered(
    model: &MixtureModel,
    target_means: &[DVector<f64>],
    target_covs: &[DMatrix<f64>],
) -> Result<usize> {
    if target_means.len() != target_covs.len() {
        return Err(VipsError::DimensionMismatch {
            expected: target_means.len(),
            found: target_covs.len(),
        });
    }
    let learned: Vec<&DVector<f64>> = model
        .weights()
        .iter()
        .zip(model.components())
        .filter(|(w, _)| **w >= MODE_MIN_WEIGHT)
        .map(|(_, g)| g.mean())
        .collect();
    let mut count = 0;
    for (mean, cov) in target_means.iter().zip(target_covs) {
        let g = Gaussian::new(mean.clone(), cov.clone())?;
        if learned
            .iter()
            .any(|m| g.mahalanobis_sq(m.as_slice()) <= MODE_RADIUS * MODE_RADIUS)
        {
            count += 1;
        }
    }
    Ok(count)
}

/// Reads headerless comma-separated floats, one sample per line.
pub fn read_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| VipsError::InvalidInput(format!("line {}: {e}", lineno + 1)))?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(VipsError::InvalidInput(format!(
                    "line {}: expected {c} values, found {}",
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        data.extend(row);
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols.unwrap_or(0), &data))
}

pub fn read_csv_file(path: &Path) -> Result<DMatrix<f64>> {
    read_csv(std::fs::File::open(path)?)
}

/// Writes one sample per line with round-trip precision.
pub fn write_csv<W: Write>(mut writer: W, samples: &DMatrix<f64>) -> Result<()> {
    let mut line = String::new();
    for row in samples.row_iter() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        line.push('\n');
        writer.write_all(line.as_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, samples: &DMatrix<f64>) -> Result<()> {
    write_csv(std::io::BufWriter::new(std::fs::File::create(path)?), samples)
}
