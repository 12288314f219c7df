use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::LogDensity;
use crate::error::{Result, VipsError};

pub const NUM_LINKS: usize = 10;
const FIRST_JOINT_VARIANCE: f64 = 1.0;
const JOINT_VARIANCE: f64 = 4e-2;
const CARTESIAN_VARIANCE: f64 = 1e-4;

/// End-effector position of a planar arm with unit-length links.
pub fn forward_kinematics(theta: &[f64]) -> Result<(f64, f64)> {
    if theta.len() != NUM_LINKS {
        return Err(VipsError::DimensionMismatch {
            expected: NUM_LINKS,
            found: theta.len(),
        });
    }
    Ok(fk(theta.iter().copied()))
}

fn fk(theta: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut x, mut y, mut angle) = (0.0, 0.0, 0.0);
    for t in theta {
        angle += t;
        x += angle.cos();
        y += angle.sin();
    }
    (x, y)
}

/// Posterior over joint angles of a 10-link planar arm whose end-effector
/// should reach one of a set of goals.
#[derive(Debug, Clone)]
pub struct PlanarRobotTarget {
    goals: Vec<(f64, f64)>,
    prior_variances: Vec<f64>,
}

impl PlanarRobotTarget {
    /// One goal at `(7, 0)`, or four goals at distance 7 on the axes.
    pub fn new(num_goals: usize) -> Result<Self> {
        let goals = match num_goals {
            1 => vec![(7.0, 0.0)],
            4 => vec![(7.0, 0.0), (0.0, 7.0), (-7.0, 0.0), (0.0, -7.0)],
            n => {
                return Err(VipsError::InvalidInput(format!(
                    "planar robot supports 1 or 4 goals, got {n}"
                )))
            }
        };
        let mut prior_variances = vec![JOINT_VARIANCE; NUM_LINKS];
        prior_variances[0] = FIRST_JOINT_VARIANCE;
        Ok(Self {
            goals,
            prior_variances,
        })
    }

    pub fn goals(&self) -> &[(f64, f64)] {
        &self.goals
    }

    fn log_prior(&self, theta: impl Iterator<Item = f64>) -> f64 {
        theta
            .zip(&self.prior_variances)
            .map(|(t, v)| -0.5 * ((2.0 * PI * v).ln() + t * t / v))
            .sum()
    }

    fn log_likelihood(&self, (x, y): (f64, f64)) -> f64 {
        let norm = -(2.0 * PI * CARTESIAN_VARIANCE).ln();
        self.goals
            .iter()
            .map(|(gx, gy)| {
                norm - ((x - gx).powi(2) + (y - gy).powi(2)) / (2.0 * CARTESIAN_VARIANCE)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl LogDensity for PlanarRobotTarget {
    fn dim(&self) -> usize {
        NUM_LINKS
    }

    fn log_density(&self, samples: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(samples
            .row_iter()
            .map(|row| {
                self.log_prior(row.iter().copied()) + self.log_likelihood(fk(row.iter().copied()))
            })
            .collect())
    }

    fn name(&self) -> &str {
        if self.goals.len() == 1 {
            "planar1"
        } else {
            "planar4"
        }
    }
}
