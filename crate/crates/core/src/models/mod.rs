//! The two similarity architectures.
//!
//! [`RankModel`] maps a pronunciation to a fixed-size embedding and scores
//! pairs by `1 - d_cos`; it is trained on (surface, positive, negative)
//! triplets with a hinge loss. [`BinaryModel`] encodes both pronunciations
//! with one shared encoder, applies three shared per-step dense layers to the
//! concatenated step outputs, and classifies the flattened result as
//! same-word / different-word.
//!
//! ReLU follows every dense layer except, by default, the last ranking
//! layer. With `RankConfig::final_relu` set, embeddings live in the
//! non-negative orthant, similarities fall in `[0.5, 1]`, and training can
//! drive an embedding to exactly zero.

mod binary;
mod checkpoint;
mod rank;

pub use binary::{BinaryConfig, BinaryModel, PairTrace};
pub use checkpoint::{Checkpoint, Model, CHECKPOINT_VERSION};
pub use rank::{RankConfig, RankModel};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{affine_backward_raw, affine_raw, Parameter, Tensor};
use crate::phonology::Pronunciation;

/// Training unit for the ranking model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub surface: Pronunciation,
    pub positive: Pronunciation,
    pub negative: Pronunciation,
}

/// Training unit for the binary model. `label` is +1 for the same word and
/// -1 otherwise; +1 maps to softmax class 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub surface: Pronunciation,
    pub canonical: Pronunciation,
    pub label: i8,
}

impl LabeledPair {
    pub fn new(surface: Pronunciation, canonical: Pronunciation, label: i8) -> Result<Self> {
        if label != 1 && label != -1 {
            return Err(Error::invalid(format!("pair label must be -1 or +1, got {label}")));
        }
        Ok(LabeledPair { surface, canonical, label })
    }

    pub fn class(&self) -> usize {
        usize::from(self.label == 1)
    }
}

/// `max(0, margin - f_pos + f_neg)`.
#[inline]
pub fn triplet_hinge(f_pos: f64, f_neg: f64, margin: f64) -> f64 {
    (margin - f_pos + f_neg).max(0.0)
}

/// Loss and violation totals for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss_sum: f64,
    pub count: usize,
    /// Items with strictly positive loss.
    pub violations: usize,
}

impl BatchStats {
    pub fn merge(&mut self, other: BatchStats) {
        self.loss_sum += other.loss_sum;
        self.count += other.count;
        self.violations += other.violations;
    }
}

const DENSE_BIAS_INIT: f64 = 0.01;

/// Fully connected layer, `W` stored `out x in`. Biases start at a small
/// positive constant so ReLU units begin active.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let s = 1.0 / (input as f64).sqrt();
        Dense {
            w: Parameter::new(Tensor::uniform(&[output, input], s, rng)),
            b: Parameter::new(Tensor::vector(vec![DENSE_BIAS_INIT; output])),
        }
    }

    pub(crate) fn from_parameters(w: Parameter, b: Parameter, input: usize, output: usize) -> Result<Self> {
        if w.shape() != [output, input] || b.shape() != [output] {
            return Err(Error::Shape(format!(
                "dense layer {:?}/{:?} does not match {input} -> {output}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(Dense { w, b })
    }

    pub fn input_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        affine_raw(x, self.w.value.data(), self.b.value.data(), &mut out);
        out
    }

    /// Returns `dx`; accumulates weight and bias gradients.
    pub fn backward(&mut self, x: &[f64], d_out: &[f64]) -> Vec<f64> {
        let mut dx = vec![0.0; self.input_dim()];
        affine_backward_raw(
            x,
            self.w.value.data(),
            self.w.grad.data_mut(),
            self.b.grad.data_mut(),
            d_out,
            Some(&mut dx),
        );
        dx
    }

    /// Backward without the input gradient.
    pub fn backward_params(&mut self, x: &[f64], d_out: &[f64]) {
        affine_backward_raw(x, self.w.value.data(), self.w.grad.data_mut(), self.b.grad.data_mut(), d_out, None);
    }
}

#[inline]
pub(crate) fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

/// Zeroes gradient entries whose pre-activation was not positive.
#[inline]
pub(crate) fn relu_mask(pre: &[f64], d: &mut [f64]) {
    for (g, &z) in d.iter_mut().zip(pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_direct_formula() {
        assert_eq!(triplet_hinge(1.0, 0.0, 0.3), 0.0);
        assert!((triplet_hinge(0.7, 0.7, 0.3) - 0.3).abs() < 1e-12);
        assert!((triplet_hinge(0.6, 0.5, 0.3) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn pair_labels() {
        let p = Pronunciation::from_ids(&[0]);
        assert_eq!(LabeledPair::new(p.clone(), p.clone(), 1).unwrap().class(), 1);
        assert_eq!(LabeledPair::new(p.clone(), p.clone(), -1).unwrap().class(), 0);
        assert!(LabeledPair::new(p.clone(), p, 0).is_err());
    }
}
