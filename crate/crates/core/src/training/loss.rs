//! InfoNCE over projected, normalized requirement embeddings.
//!
//! With `s(a, b) = a . b` and temperature `tau`:
//!
//! ```text
//! L = -log( exp(s(a,p)/tau) / (exp(s(a,p)/tau) + sum_n exp(s(a,n)/tau)) )
//! ```
//!
//! Setting `include_positive = false` drops the positive term from the
//! denominator (that form is unbounded below).

use serde::{Deserialize, Serialize};

use super::head::{Forward, ProjectionHead};
use super::TrainError;
use crate::vector::{dot, norm};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoNce {
    pub tau: f64,
    pub include_positive: bool,
}

impl InfoNce {
    pub fn new(tau: f64) -> Self {
        InfoNce {
            tau,
            include_positive: true,
        }
    }

    /// Loss and `dL/ds` for the positive similarity and each negative similarity.
    fn similarity_terms(&self, pos: f64, negs: &[f64]) -> (f64, f64, Vec<f64>) {
        let zp = pos / self.tau;
        let zn: Vec<f64> = negs.iter().map(|s| s / self.tau).collect();
        let mut max = zn.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.include_positive {
            max = max.max(zp);
        }
        let mut sum: f64 = zn.iter().map(|z| (z - max).exp()).sum();
        if self.include_positive {
            sum += (zp - max).exp();
        }
        let lse = max + sum.ln();
        let loss = lse - zp;
        let dpos = if self.include_positive {
            ((zp - lse).exp() - 1.0) / self.tau
        } else {
            -1.0 / self.tau
        };
        let dnegs = zn.iter().map(|z| (z - lse).exp() / self.tau).collect();
        (loss, dpos, dnegs)
    }

    fn check(&self) -> Result<(), TrainError> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(TrainError::Config(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Loss over already-normalized vectors.
    pub fn loss(&self, anchor: &[f64], positive: &[f64], negatives: &[&[f64]]) -> Result<f64, TrainError> {
        self.check()?;
        if negatives.is_empty() {
            return Err(TrainError::NoNegatives);
        }
        let d = anchor.len();
        for v in std::iter::once(positive).chain(negatives.iter().copied()) {
            if v.len() != d {
                return Err(TrainError::Dimension {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        for v in std::iter::once(anchor)
            .chain(std::iter::once(positive))
            .chain(negatives.iter().copied())
        {
            let n = norm(v);
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(TrainError::NotNormalized(n));
            }
        }
        let negs: Vec<f64> = negatives.iter().map(|n| dot(anchor, n)).collect();
        Ok(self.similarity_terms(dot(anchor, positive), &negs).0)
    }

    /// Loss and its gradient with respect to the head parameters, with
    /// anchor, positive and negatives all passed through `head`.
    pub fn gradient(
        &self,
        head: &ProjectionHead,
        anchor_raw: &[f64],
        positive_raw: &[f64],
        negative_raws: &[&[f64]],
    ) -> Result<(f64, HeadGradient), TrainError> {
        self.check()?;
        if negative_raws.is_empty() {
            return Err(TrainError::NoNegatives);
        }
        for v in std::iter::once(anchor_raw)
            .chain(std::iter::once(positive_raw))
            .chain(negative_raws.iter().copied())
        {
            if v.len() != head.d_in {
                return Err(TrainError::Dimension {
                    expected: head.d_in,
                    got: v.len(),
                });
            }
        }
        let mut grad = HeadGradient::zeros_like(head);
        let loss = self.accumulate(head, anchor_raw, positive_raw, negative_raws, 1.0, &mut grad);
        Ok((loss, grad))
    }

    /// Adds `scale * dL/dtheta` into `grad` and returns the loss. Inputs are
    /// assumed dimension-checked.
    pub(crate) fn accumulate(
        &self,
        head: &ProjectionHead,
        anchor_raw: &[f64],
        positive_raw: &[f64],
        negative_raws: &[&[f64]],
        scale: f64,
        grad: &mut HeadGradient,
    ) -> f64 {
        let fa = head.forward(anchor_raw);
        let fp = head.forward(positive_raw);
        let fns: Vec<Forward> = negative_raws.iter().map(|r| head.forward(r)).collect();

        let sp = dot(&fa.out, &fp.out);
        let sns: Vec<f64> = fns.iter().map(|f| dot(&fa.out, &f.out)).collect();
        let (loss, dpos, dnegs) = self.similarity_terms(sp, &sns);

        // dL/de for each role.
        let mut de_anchor: Vec<f64> = fp.out.iter().map(|x| dpos * x).collect();
        for (f, c) in fns.iter().zip(&dnegs) {
            for (g, x) in de_anchor.iter_mut().zip(&f.out) {
                *g += c * x;
            }
        }
        let de_pos: Vec<f64> = fa.out.iter().map(|x| dpos * x).collect();

        grad.backprop(head, &fa, &de_anchor, anchor_raw, scale);
        grad.backprop(head, &fp, &de_pos, positive_raw, scale);
        for ((f, c), raw) in fns.iter().zip(&dnegs).zip(negative_raws) {
            let de: Vec<f64> = fa.out.iter().map(|x| c * x).collect();
            grad.backprop(head, f, &de, raw, scale);
        }
        loss
    }
}

/// Standard-form InfoNCE (positive included in the denominator).
pub fn infonce_loss(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64, TrainError> {
    InfoNce::new(tau).loss(anchor, positive, negatives)
}

/// Standard-form InfoNCE gradient with respect to the head parameters.
pub fn infonce_grad(
    head: &ProjectionHead,
    anchor_raw: &[f64],
    positive_raw: &[f64],
    negative_raws: &[&[f64]],
    tau: f64,
) -> Result<(f64, HeadGradient), TrainError> {
    InfoNce::new(tau).gradient(head, anchor_raw, positive_raw, negative_raws)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl HeadGradient {
    pub fn zeros_like(head: &ProjectionHead) -> Self {
        HeadGradient {
            weights: vec![0.0; head.weights.len()],
            bias: head.bias.as_ref().map(|b| vec![0.0; b.len()]),
        }
    }

    /// Flattened view: weights then bias.
    pub fn flat(&self) -> Vec<f64> {
        self.weights.iter().chain(self.bias.iter().flatten()).copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter().flatten())
            .all(|g| g.is_finite())
    }

    fn backprop(&mut self, head: &ProjectionHead, f: &Forward, de: &[f64], raw: &[f64], scale: f64) {
        if f.is_zero() {
            return;
        }
        // d(y/|y|)/dy = (I - e e^T) / |y|
        let proj = dot(de, &f.out);
        let dy: Vec<f64> = de
            .iter()
            .zip(&f.out)
            .map(|(g, e)| scale * (g - proj * e) / f.norm)
            .collect();
        for (j, &x) in raw.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, d) in dy.iter().enumerate() {
                self.weights[i * head.d_in + j] += d * x;
            }
        }
        if let Some(b) = &mut self.bias {
            for (bi, d) in b.iter_mut().zip(&dy) {
                *bi += d;
            }
        }
    }
}
