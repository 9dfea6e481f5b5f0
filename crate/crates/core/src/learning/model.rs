//! Multinomial logistic regression trained from scratch, and weighted averaging
//! of parameter vectors.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::task::{LabeledCloud, SyntheticTask};
use crate::error::{Error, Result};

/// Tolerance on aggregation weights summing to one.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Hidden layer widths; only the linear (empty) model is implemented.
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Architecture {
    pub fn logistic(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            classes,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.classes * (self.input_dim + 1)
    }

    fn check_supported(&self) -> Result<()> {
        if !self.hidden.is_empty() {
            return Err(Error::contract("hidden layers are not supported"));
        }
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::contract(
                "architecture needs inputs and at least two classes",
            ));
        }
        Ok(())
    }
}

/// Flat parameters laid out per class as `[w_1 .. w_d, bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector {
    pub architecture: Architecture,
    pub parameters: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 16,
        }
    }
}

impl ModelVector {
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        architecture.check_supported()?;
        let parameters = vec![0.0; architecture.parameter_count()];
        Ok(Self {
            architecture,
            parameters,
        })
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random(architecture: Architecture, scale: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(architecture)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut model.parameters {
            *p = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        Ok(model)
    }

    pub fn for_task(task: &SyntheticTask) -> Result<Self> {
        Self::zeros(Architecture::logistic(task.dimension(), task.classes()))
    }

    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let stride = self.architecture.input_dim + 1;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.parameters[k * stride..(k + 1) * stride];
            *o = row[stride - 1] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Class with the largest logit; ties go to the lower class.
    pub fn predict(&self, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.architecture.classes];
        self.logits(x, &mut z);
        let mut best = 0;
        for k in 1..z.len() {
            if z[k] > z[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &LabeledCloud) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .points
            .points()
            .zip(&data.labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / data.len() as f64
    }

    fn check_data(&self, data: &LabeledCloud) -> Result<()> {
        self.architecture.check_supported()?;
        if self.parameters.len() != self.architecture.parameter_count() {
            return Err(Error::contract("parameter count does not match the architecture"));
        }
        if data.points.dimension() != self.architecture.input_dim {
            return Err(Error::contract(format!(
                "data dimension {} but model expects {}",
                data.points.dimension(),
                self.architecture.input_dim
            )));
        }
        if let Some(&bad) = data.labels.iter().find(|&&l| l >= self.architecture.classes) {
            return Err(Error::contract(format!(
                "label {bad} outside the model's classes"
            )));
        }
        Ok(())
    }

    /// Length-prefixed little-endian dump: a `u64` count, then each parameter as `f64`.
    pub fn write_flat<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.parameters.len() as u64).to_le_bytes())?;
        for p in &self.parameters {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_flat<R: Read>(architecture: Architecture, mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let len = u64::from_le_bytes(word) as usize;
        if len != architecture.parameter_count() {
            return Err(Error::contract(format!(
                "dump holds {len} parameters, architecture needs {}",
                architecture.parameter_count()
            )));
        }
        let mut parameters = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            parameters.push(f64::from_le_bytes(word));
        }
        Ok(Self {
            architecture,
            parameters,
        })
    }
}

/// Number of local epochs for an effort level.
pub fn epochs_for_effort(effort: f64, max_epochs: usize) -> usize {
    (effort.clamp(0.0, 1.0) * max_epochs as f64).round() as usize
}

/// Mini-batch gradient descent on softmax cross-entropy for
/// `round(effort * max_epochs)` epochs, reshuffling every epoch.
pub fn local_train(
    model: &ModelVector,
    data: &LabeledCloud,
    effort: f64,
    max_epochs: usize,
    seed: u64,
    settings: &TrainSettings,
) -> Result<ModelVector> {
    if !(0.0..=1.0).contains(&effort) {
        return Err(Error::domain(format!("effort {effort} outside [0,1]")));
    }
    model.check_data(data)?;
    let epochs = epochs_for_effort(effort, max_epochs);
    let mut out = model.clone();
    if epochs == 0 || data.is_empty() {
        return Ok(out);
    }
    let batch = settings.batch_size.max(1);
    let classes = model.architecture.classes;
    let stride = model.architecture.input_dim + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; out.parameters.len()];
    let mut probs = vec![0.0; classes];

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                let x = data.points.point(i);
                out.logits(x, &mut probs);
                let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut norm = 0.0;
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    norm += *p;
                }
                for (k, p) in probs.iter().enumerate() {
                    let residual = p / norm - if k == data.labels[i] { 1.0 } else { 0.0 };
                    let row = &mut grad[k * stride..(k + 1) * stride];
                    for (g, v) in row.iter_mut().zip(x) {
                        *g += residual * v;
                    }
                    row[stride - 1] += residual;
                }
            }
            let scale = settings.learning_rate / chunk.len() as f64;
            for (w, g) in out.parameters.iter_mut().zip(&grad) {
                *w -= scale * g;
            }
        }
    }
    Ok(out)
}

/// Accuracy on the task's global uniform test set.
pub fn server_test(model: &ModelVector, task: &SyntheticTask) -> f64 {
    model.accuracy(task.test_set())
}

/// Component-wise weighted mean of parameter vectors, summed in input order.
pub fn aggregate(models: &[(&ModelVector, f64)]) -> Result<ModelVector> {
    let (first, _) = models.first().ok_or(Error::NoModels)?;
    let total: f64 = models.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(Error::WeightSum(total));
    }
    let mut parameters = vec![0.0; first.parameters.len()];
    for (m, w) in models {
        if m.architecture != first.architecture || m.parameters.len() != parameters.len() {
            return Err(Error::contract(
                "cannot aggregate models with different architectures",
            ));
        }
        for (acc, p) in parameters.iter_mut().zip(&m.parameters) {
            *acc += w * p;
        }
    }
    Ok(ModelVector {
        architecture: first.architecture.clone(),
        parameters,
    })
}
