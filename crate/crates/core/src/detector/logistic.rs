//! Logistic regression trained by full-batch gradient descent on the
//! cross-entropy loss with an L2 penalty on the non-bias weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::Label;
use crate::residuals::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            iterations: 2000,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) || self.iterations == 0 {
            return Err(Error::invalid(format!(
                "need learning_rate > 0, l2 >= 0 and iterations > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^a)` without overflow.
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn target(label: Label) -> f64 {
    if label.is_positive() {
        1.0
    } else {
        0.0
    }
}

/// `-(1/N) sum [y log p + (1 - y) log(1 - p)] + (l2 / 2) |w_{1..}|^2` with
/// `p = sigmoid(w . phi)`; slot 0 is the unpenalized bias.
pub fn loss(weights: &[f64], features: &[Vec<f64>], labels: &[Label], l2: f64) -> f64 {
    let n = features.len() as f64;
    let ce: f64 = features
        .iter()
        .zip(labels)
        .map(|(phi, &y)| {
            let z = dot(weights, phi);
            if y.is_positive() {
                softplus(-z)
            } else {
                softplus(z)
            }
        })
        .sum::<f64>()
        / n;
    ce + 0.5 * l2 * weights[1..].iter().map(|w| w * w).sum::<f64>()
}

/// Gradient of [`loss`]: `(1/N) sum (p_i - y_i) phi_i + l2 * w` (bias excluded
/// from the penalty term).
pub fn loss_gradient(
    weights: &[f64],
    features: &[Vec<f64>],
    labels: &[Label],
    l2: f64,
) -> Vec<f64> {
    let n = features.len() as f64;
    let mut g = vec![0.0; weights.len()];
    for (phi, &y) in features.iter().zip(labels) {
        let r = sigmoid(dot(weights, phi)) - target(y);
        for (gj, xj) in g.iter_mut().zip(phi) {
            *gj += r * xj;
        }
    }
    for (j, gj) in g.iter_mut().enumerate() {
        *gj /= n;
        if j > 0 {
            *gj += l2 * weights[j];
        }
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `sigmoid(w . phi)`, the predicted probability that a sample is fake.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticClassifier {
    weights: Vec<f64>,
    hyper: TrainConfig,
    loss_history: Vec<f64>,
}

impl LogisticClassifier {
    /// All-zero weights: predicts 0.5 everywhere.
    pub fn zeros(feature_len: usize) -> Self {
        Self::from_weights(vec![0.0; feature_len]).expect("zeros are finite")
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be nonempty and finite"));
        }
        Ok(Self {
            weights,
            hyper: TrainConfig::default(),
            loss_history: Vec::new(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature_len(&self) -> usize {
        self.weights.len()
    }

    pub fn hyper(&self) -> &TrainConfig {
        &self.hyper
    }

    /// Training loss after each accepted step, starting with the initial loss.
    /// Measured on standardized features, see [`train`].
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn predict(&self, phi: &FeatureVector) -> Result<f64> {
        self.predict_slice(phi.as_slice())
    }

    pub fn predict_slice(&self, phi: &[f64]) -> Result<f64> {
        crate::error::check_dim(self.weights.len(), phi.len())?;
        Ok(sigmoid(dot(&self.weights, phi)))
    }

    /// Trains on `features` with fake as the positive class.
    ///
    /// Non-bias columns are standardized to zero mean and unit variance
    /// before descent, and the learned weights are folded back so that
    /// [`predict`](Self::predict) takes raw features. A step that would raise
    /// the loss is rejected and the step size halved, so the recorded loss is
    /// non-increasing.
    pub fn train(features: &[FeatureVector], labels: &[Label], hyper: TrainConfig) -> Result<Self> {
        hyper.validate()?;
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "need matching nonempty features and labels, got {} and {}",
                features.len(),
                labels.len()
            )));
        }
        let len = features[0].len();
        if len == 0 {
            return Err(Error::invalid("feature vectors are empty"));
        }
        for f in features {
            crate::error::check_dim(len, f.len())?;
            if f.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("features contain non-finite values"));
            }
        }
        let positives = labels.iter().filter(|l| l.is_positive()).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::Calibration(
                "training data must contain both real and fake samples".into(),
            ));
        }

        let n = features.len() as f64;
        let mut shift = vec![0.0; len];
        let mut scale = vec![1.0; len];
        for j in 1..len {
            let m = features.iter().map(|f| f.0[j]).sum::<f64>() / n;
            let var = features.iter().map(|f| (f.0[j] - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            shift[j] = m;
            // columns that are constant up to rounding keep unit scale
            if sd > 0.0 && sd > 1e-12 * m.abs() {
                scale[j] = sd;
            }
        }
        let standardized: Vec<Vec<f64>> = features
            .iter()
            .map(|f| {
                let mut row = f.0.clone();
                for j in 1..len {
                    row[j] = (row[j] - shift[j]) / scale[j];
                }
                row
            })
            .collect();

        let mut v = vec![0.0; len];
        let mut lr = hyper.learning_rate;
        let mut current = loss(&v, &standardized, labels, hyper.l2);
        let mut history = vec![current];
        'descent: for _ in 0..hyper.iterations {
            let g = loss_gradient(&v, &standardized, labels, hyper.l2);
            if g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
                break;
            }
            loop {
                let cand: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi - lr * gi).collect();
                let l = loss(&cand, &standardized, labels, hyper.l2);
                if l <= current {
                    v = cand;
                    current = l;
                    history.push(l);
                    break;
                }
                lr *= 0.5;
                if lr < 1e-12 {
                    break 'descent;
                }
            }
        }

        let mut weights = vec![0.0; len];
        weights[0] = v[0];
        for j in 1..len {
            weights[j] = v[j] / scale[j];
            weights[0] -= v[j] * shift[j] / scale[j];
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Calibration("training diverged".into()));
        }
        Ok(Self {
            weights,
            hyper,
            loss_history: history,
        })
    }
}
