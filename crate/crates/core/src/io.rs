//! Model and log serialization.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VipsError};
use crate::gaussian::Gaussian;
use crate::mixture::MixtureModel;
use crate::runner::IterationStats;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDocument {
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<Vec<f64>>,
}

/// On-disk form of a [`MixtureModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub version: u32,
    pub dimension: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentDocument>,
}

impl ModelDocument {
    pub fn from_model(model: &MixtureModel) -> Self {
        Self {
            version: MODEL_VERSION,
            dimension: model.dim(),
            weights: model.weights().to_vec(),
            components: model
                .components()
                .iter()
                .map(|g| ComponentDocument {
                    mean: g.mean().iter().copied().collect(),
                    covariance: g
                        .covariance()
                        .row_iter()
                        .map(|r| r.iter().copied().collect())
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<MixtureModel> {
        if self.version != MODEL_VERSION {
            return Err(VipsError::InvalidInput(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if self.weights.len() != self.components.len() {
            return Err(VipsError::DimensionMismatch {
                expected: self.components.len(),
                found: self.weights.len(),
            });
        }
        let d = self.dimension;
        let comps = self
            .components
            .iter()
            .map(|c| {
                if c.mean.len() != d {
                    return Err(VipsError::DimensionMismatch {
                        expected: d,
                        found: c.mean.len(),
                    });
                }
                if c.covariance.len() != d || c.covariance.iter().any(|r| r.len() != d) {
                    return Err(VipsError::InvalidInput(format!("covariance must be {d}x{d}")));
                }
                let flat: Vec<f64> = c.covariance.iter().flatten().copied().collect();
                Gaussian::new(
                    DVector::from_vec(c.mean.clone()),
                    DMatrix::from_row_slice(d, d, &flat),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let total: f64 = self.weights.iter().sum();
        let weights = self.weights.iter().map(|w| w / total).collect();
        MixtureModel::new(weights, comps, 1.0, 1e-10)
    }
}

pub fn save_model(path: &Path, model: &MixtureModel) -> Result<()> {
    let text = serde_json::to_string_pretty(&ModelDocument::from_model(model))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<MixtureModel> {
    let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    doc.to_model()
}

pub const LOG_HEADER: &str = "iter,fevals,elbo,num_components,seconds";

/// Writes `iter,fevals,elbo,num_components,seconds` rows.
pub fn write_log<W: Write>(mut w: W, log: &[IterationStats]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for s in log {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.iteration, s.fevals, s.elbo, s.num_components, s.seconds
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_log(path: &Path, log: &[IterationStats]) -> Result<()> {
    write_log(std::io::BufWriter::new(std::fs::File::create(path)?), log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn model_round_trip() {
        let model = MixtureModel::new(
            vec![0.25, 0.75],
            vec![
                Gaussian::new(DVector::from_vec(vec![1.0, -2.0]), dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap(),
                Gaussian::standard(2),
            ],
            1.0,
            1e-10,
        )
        .unwrap();
        let doc = ModelDocument::from_model(&model);
        assert_eq!(doc.components[0].covariance, vec![vec![2.0, 0.5], vec![0.5, 1.0]]);
        let text = serde_json::to_string(&doc).unwrap();
        let back: ModelDocument = serde_json::from_str(&text).unwrap();
        let m2 = back.to_model().unwrap();
        assert_eq!(m2.weights(), model.weights());
        assert_eq!(m2.component(0).as_ref(), model.component(0).as_ref());
    }

    #[test]
    fn malformed_models_rejected() {
        let mut doc = ModelDocument::from_model(&MixtureModel::single(Gaussian::standard(2)));
        doc.components[0].mean.push(0.0);
        assert!(doc.to_model().is_err());
        doc.components[0].mean.pop();
        doc.version = 2;
        assert!(doc.to_model().is_err());
    }
}
