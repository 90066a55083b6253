//! Multinomial logistic label predictor f̂ used by the counterfactual objective.

use serde::{Deserialize, Serialize};

use crate::diffusion::SampleBatch;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticClassifier {
    pub dim: usize,
    pub classes: usize,
    /// Row-major `classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LogisticClassifier {
    pub fn new(dim: usize, classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if classes < 2 || dim == 0 {
            return Err(Error::InvalidRange(format!(
                "classifier needs >= 2 classes and dim >= 1, got {classes}, {dim}"
            )));
        }
        if weights.len() != classes * dim || bias.len() != classes {
            return Err(Error::DimMismatch {
                expected: classes * (dim + 1),
                got: weights.len() + bias.len(),
            });
        }
        Ok(Self {
            dim,
            classes,
            weights,
            bias,
        })
    }

    /// Full-batch gradient descent on the mean cross-entropy, from zero
    /// initialization. Deterministic.
    pub fn fit(
        data: &SampleBatch,
        classes: usize,
        steps: usize,
        learning_rate: f64,
    ) -> Result<Self> {
        let dim = data.dim;
        let mut clf = Self::new(dim, classes, vec![0.0; classes * dim], vec![0.0; classes])?;
        if let Some(&bad) = data.condition.iter().find(|&&c| c >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        let n = data.len() as f64;
        for _ in 0..steps {
            let mut gw = vec![0.0; classes * dim];
            let mut gb = vec![0.0; classes];
            for (x, &y) in data.rows().zip(&data.condition) {
                let lp = clf.log_probs(x);
                for c in 0..classes {
                    let r = lp[c].exp() - if c == y { 1.0 } else { 0.0 };
                    gb[c] += r / n;
                    for d in 0..dim {
                        gw[c * dim + d] += r * x[d] / n;
                    }
                }
            }
            clf.weights
                .iter_mut()
                .zip(&gw)
                .for_each(|(w, g)| *w -= learning_rate * g);
            clf.bias
                .iter_mut()
                .zip(&gb)
                .for_each(|(b, g)| *b -= learning_rate * g);
        }
        Ok(clf)
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                self.bias[c]
                    + self.weights[c * self.dim..(c + 1) * self.dim]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Numerically stable log-softmax.
    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        let z = self.logits(x);
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        z.into_iter().map(|v| v - lse).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let z = self.logits(x);
        (0..self.classes).fold(0, |best, c| if z[c] > z[best] { c } else { best })
    }

    pub fn accuracy(&self, data: &SampleBatch) -> f64 {
        let hits = data
            .rows()
            .zip(&data.condition)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        hits as f64 / data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::analytic::GaussianMixtureSpec;
    use crate::denoiser::DataSource;
    use crate::rng::StreamFactory;

    #[test]
    fn separates_two_classes() {
        let spec = GaussianMixtureSpec::one_dim_classes(&[(-2.0, 0.25), (2.0, 0.25)]);
        let (x, y) = spec.draw(2000, &mut StreamFactory::new(1).stream("d", 0));
        let data = SampleBatch::new(x, 1, y).unwrap();
        let clf = LogisticClassifier::fit(&data, 2, 300, 0.5).unwrap();
        assert!(clf.accuracy(&data) > 0.999);
        assert_eq!(clf.predict(&[-0.5]), 0);
        assert_eq!(clf.predict(&[0.5]), 1);
    }

    #[test]
    fn log_probs_normalized_and_stable() {
        let clf = LogisticClassifier::new(1, 2, vec![0.0, 1000.0], vec![0.0, 0.0]).unwrap();
        let lp = clf.log_probs(&[1.0]);
        assert_eq!(lp[1], 0.0);
        assert!(lp[0] < -900.0);
        let clf = LogisticClassifier::new(
            2,
            3,
            vec![0.1, -0.2, 0.3, 0.0, 0.5, 0.5],
            vec![0.0, 0.1, -0.1],
        )
        .unwrap();
        let s: f64 = clf.log_probs(&[0.3, -0.7]).iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(LogisticClassifier::new(1, 1, vec![0.0], vec![0.0]).is_err());
        assert!(LogisticClassifier::new(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
    }
}
