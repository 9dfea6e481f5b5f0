use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coverage::{coverage_quality, uniform_samples, PointCloud};
use crate::error::{Error, Result};

/// Distance of the class prototypes from the cube center.
const PROTOTYPE_RADIUS: f64 = 0.25;

/// Points with class labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub points: PointCloud,
    pub labels: Vec<usize>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A classification problem on `[0,1]^d` whose label is the nearest of `K`
/// prototype points, plus a test set drawn uniformly over the whole cube.
///
/// Nearest-prototype labels are separated by hyperplanes, so a multinomial
/// logistic model can represent the rule exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    dimension: usize,
    classes: usize,
    prototypes: Vec<f64>,
    test: LabeledCloud,
}

fn random_direction(rng: &mut ChaCha8Rng, dimension: usize) -> Vec<f64> {
    loop {
        // Box-Muller pairs give an isotropic Gaussian direction.
        let v: Vec<f64> = (0..dimension)
            .map(|_| {
                let u1: f64 = 1.0 - rng.random::<f64>();
                let u2: f64 = rng.random();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

impl SyntheticTask {
    pub fn new(dimension: usize, classes: usize, test_size: usize, seed: u64) -> Result<Self> {
        if dimension == 0 || classes < 2 || test_size == 0 {
            return Err(Error::domain(
                "synthetic task needs dimension >= 1, at least 2 classes and a test set",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut prototypes = Vec::with_capacity(classes * dimension);
        let first = random_direction(&mut rng, dimension);
        for k in 0..classes {
            // Two classes sit antipodally so the boundary halves the cube.
            let dir = match k {
                0 => first.clone(),
                1 if classes == 2 => first.iter().map(|x| -x).collect(),
                _ => random_direction(&mut rng, dimension),
            };
            prototypes.extend(dir.iter().map(|x| 0.5 + PROTOTYPE_RADIUS * x));
        }
        let mut task = Self {
            dimension,
            classes,
            prototypes,
            test: LabeledCloud {
                points: PointCloud::empty(dimension)?,
                labels: Vec::new(),
            },
        };
        let test_points =
            PointCloud::from_flat(dimension, uniform_samples(dimension, test_size, rng.random()))?;
        task.test = task.label_cloud(test_points);
        Ok(task)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn test_set(&self) -> &LabeledCloud {
        &self.test
    }

    pub fn label(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, p) in self.prototypes.chunks_exact(self.dimension).enumerate() {
            let d2: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.1 {
                best = (k, d2);
            }
        }
        best.0
    }

    pub fn label_cloud(&self, points: PointCloud) -> LabeledCloud {
        let labels = points.points().map(|x| self.label(x)).collect();
        LabeledCloud { points, labels }
    }
}

/// Monte Carlo settings for measuring coverage quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSettings {
    pub radius_steps: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for CoverageSettings {
    fn default() -> Self {
        Self {
            radius_steps: 32,
            samples: 2000,
            seed: 0xC0FE,
        }
    }
}

/// Largest accepted gap between the target and the measured quality.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

const BISECTION_ROUNDS: usize = 40;
const MIN_SIDE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub data: LabeledCloud,
    /// Side of the sub-cube `[0, side]^d` the points were drawn from.
    pub side: f64,
    pub measured_theta: f64,
}

/// Draws `n_points` uniformly from a corner sub-cube `[0, s]^d`, with `s` found
/// by bisection so the measured coverage quality matches `target_theta`.
///
/// The base draws are fixed before the search and only rescaled by `s`, and the
/// coverage samples are shared, so the measured quality moves smoothly with `s`.
pub fn generate_client_dataset(
    task: &SyntheticTask,
    target_theta: f64,
    n_points: usize,
    seed: u64,
    coverage: &CoverageSettings,
) -> Result<ClientDataset> {
    if !(target_theta > 0.0 && target_theta <= 1.0) {
        return Err(Error::domain(format!(
            "target theta {target_theta} outside (0,1]"
        )));
    }
    if n_points == 0 {
        return Err(Error::domain("a client dataset needs at least one point"));
    }
    let d = task.dimension();
    let base = uniform_samples(d, n_points, seed);
    let cloud_at = |side: f64| PointCloud::from_flat(d, base.iter().map(|u| (u * side).min(1.0)).collect());
    let quality_at = |side: f64| -> Result<f64> {
        coverage_quality(
            &cloud_at(side)?,
            coverage.radius_steps,
            coverage.samples,
            coverage.seed,
        )
    };

    let (mut lo, mut hi) = (MIN_SIDE, 1.0);
    let (q_lo, q_hi) = (quality_at(lo)?, quality_at(hi)?);
    let mut best = if (q_hi - target_theta).abs() <= (q_lo - target_theta).abs() {
        (hi, q_hi)
    } else {
        (lo, q_lo)
    };
    if target_theta > q_hi || target_theta < q_lo {
        if (best.1 - target_theta).abs() > CALIBRATION_TOLERANCE {
            return Err(Error::Calibration {
                target: target_theta,
                best: best.1,
            });
        }
    } else {
        for _ in 0..BISECTION_ROUNDS {
            let mid = 0.5 * (lo + hi);
            let q = quality_at(mid)?;
            if (q - target_theta).abs() < (best.1 - target_theta).abs() {
                best = (mid, q);
            }
            if (q - target_theta).abs() <= CALIBRATION_TOLERANCE / 8.0 {
                break;
            }
            if q < target_theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if (best.1 - target_theta).abs() > CALIBRATION_TOLERANCE {
            return Err(Error::Calibration {
                target: target_theta,
                best: best.1,
            });
        }
    }
    let (side, measured_theta) = best;
    Ok(ClientDataset {
        data: task.label_cloud(cloud_at(side)?),
        side,
        measured_theta,
    })
}
