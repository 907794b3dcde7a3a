use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

/// Trainable linear map `y = W x + b` over frozen embeddings, followed by
/// L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub d_in: usize,
    pub d_out: usize,
    /// Row-major `d_out x d_in`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Result of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct Forward {
    /// Unit-norm output, or all zeros when the pre-normalization norm is below 1e-12.
    pub out: Vec<f64>,
    pub norm: f64,
}

impl Forward {
    pub fn is_zero(&self) -> bool {
        self.norm < ZERO_NORM
    }
}

pub(crate) const ZERO_NORM: f64 = 1e-12;

impl ProjectionHead {
    pub fn new(d_in: usize, d_out: usize, weights: Vec<f64>, bias: Option<Vec<f64>>) -> Result<Self, TrainError> {
        if weights.len() != d_in * d_out {
            return Err(TrainError::Dimension {
                expected: d_in * d_out,
                got: weights.len(),
            });
        }
        if let Some(b) = &bias {
            if b.len() != d_out {
                return Err(TrainError::Dimension {
                    expected: d_out,
                    got: b.len(),
                });
            }
        }
        if weights.iter().chain(bias.iter().flatten()).any(|w| !w.is_finite()) {
            return Err(TrainError::NonFinite("projection weights".into()));
        }
        Ok(ProjectionHead {
            d_in,
            d_out,
            weights,
            bias,
        })
    }

    pub fn identity(d: usize) -> Self {
        let mut weights = vec![0.0; d * d];
        for i in 0..d {
            weights[i * d + i] = 1.0;
        }
        ProjectionHead {
            d_in: d,
            d_out: d,
            weights,
            bias: None,
        }
    }

    /// Weights uniform in `[-scale, scale]`, bias zero.
    pub fn random<R: Rng>(d_in: usize, d_out: usize, scale: f64, with_bias: bool, rng: &mut R) -> Self {
        let weights = (0..d_in * d_out).map(|_| rng.random_range(-scale..=scale)).collect();
        ProjectionHead {
            d_in,
            d_out,
            weights,
            bias: with_bias.then(|| vec![0.0; d_out]),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub(crate) fn forward(&self, raw: &[f64]) -> Forward {
        let mut y = match &self.bias {
            Some(b) => b.clone(),
            None => vec![0.0; self.d_out],
        };
        for (j, &x) in raw.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += self.weights[i * self.d_in + j] * x;
            }
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < ZERO_NORM {
            y.iter_mut().for_each(|v| *v = 0.0);
        } else {
            y.iter_mut().for_each(|v| *v /= norm);
        }
        Forward { out: y, norm }
    }

    /// Projects and L2-normalizes. A zero vector means the projection
    /// vanished (norm below 1e-12) and carries no direction.
    pub fn encode(&self, raw: &[f64]) -> Result<Vec<f64>, TrainError> {
        if raw.len() != self.d_in {
            return Err(TrainError::Dimension {
                expected: self.d_in,
                got: raw.len(),
            });
        }
        Ok(self.forward(raw).out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::vector::norm;

    #[test]
    fn identity_head_keeps_unit_vectors() {
        let h = ProjectionHead::identity(3);
        let raw = [0.6, 0.0, 0.8];
        assert_eq!(h.encode(&raw).unwrap(), raw.to_vec());
    }

    #[test]
    fn outputs_are_unit_norm_and_scale_free() {
        let mut rng = substream(1, &["head"]);
        let h = ProjectionHead::random(6, 4, 0.5, false, &mut rng);
        let raw = [0.3, -1.0, 0.0, 2.0, 0.1, 0.7];
        let out = h.encode(&raw).unwrap();
        assert!((norm(&out) - 1.0).abs() < 1e-9);
        let scaled: Vec<f64> = raw.iter().map(|x| x * 3.0).collect();
        let out3 = h.encode(&scaled).unwrap();
        for (a, b) in out.iter().zip(&out3) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vanishing_projection_is_zero() {
        let h = ProjectionHead::new(2, 2, vec![0.0; 4], None).unwrap();
        assert_eq!(h.encode(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let h = ProjectionHead::identity(3);
        assert!(matches!(
            h.encode(&[1.0]),
            Err(TrainError::Dimension { expected: 3, got: 1 })
        ));
        assert!(ProjectionHead::new(2, 2, vec![0.0; 3], None).is_err());
        assert!(ProjectionHead::new(1, 1, vec![f64::NAN], None).is_err());
    }
}
