use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{relu_in_place, relu_mask, BatchStats, Dense, LabeledPair};
use crate::encoder::{EncodedSequence, Encoder, EncoderConfig, EncoderTrace};
use crate::error::{Error, Result};
use crate::numerics::{softmax_nll, softmax_nll_backward, ParamSet, Parameter, Tensor};
use crate::phonology::Pronunciation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryConfig {
    pub encoder: EncoderConfig,
    /// Width of the three per-step dense layers.
    pub ffn_dim: usize,
    /// Number of time steps flattened into the classifier.
    pub t_max: usize,
}

impl BinaryConfig {
    pub fn new(encoder: EncoderConfig, t_max: usize) -> Self {
        BinaryConfig { encoder, ffn_dim: encoder.hidden_dim, t_max }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.ffn_dim == 0 || self.t_max == 0 {
            return Err(Error::invalid("dense width and maximum length must be positive"));
        }
        Ok(())
    }
}

/// Siamese binary classifier over pronunciation pairs.
///
/// Both inputs go through the same encoder. At each step `t` below the longer
/// input's length the two step outputs are concatenated (a sequence that has
/// already ended contributes zeros) and passed through three dense+ReLU
/// layers shared across time. Steps past that length stay zero. The
/// `t_max * ffn_dim` flattened result feeds a dense layer with two logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryModel {
    cfg: BinaryConfig,
    pub encoder: Encoder,
    pub step_layers: [Dense; 3],
    pub output: Dense,
}

/// Head caches for one pair.
#[derive(Debug, Clone)]
pub struct PairTrace {
    steps: usize,
    len_a: usize,
    len_b: usize,
    /// Per step: input, then pre-activations of the three layers.
    inputs: Vec<Vec<f64>>,
    pre: Vec<[Vec<f64>; 3]>,
    acts: Vec<[Vec<f64>; 3]>,
    flat: Vec<f64>,
    logits: Tensor,
    probs: Tensor,
}

impl PairTrace {
    /// Probability of the same-word class.
    pub fn score(&self) -> f64 {
        self.probs.data()[1]
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// Negative log likelihood of `class`.
    pub fn loss(&self, class: usize) -> Result<f64> {
        softmax_nll(&self.logits, class).map(|(l, _)| l)
    }

    /// Smallest `|z|` over the ReLU inputs of the step layers.
    pub fn relu_margin(&self) -> f64 {
        self.pre.iter().flatten().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

impl BinaryModel {
    pub fn new<R: Rng + ?Sized>(cfg: BinaryConfig, num_phones: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(cfg.encoder, num_phones, rng)?;
        let f = cfg.ffn_dim;
        let step_layers = [
            Dense::new(2 * cfg.encoder.out_dim(), f, rng),
            Dense::new(f, f, rng),
            Dense::new(f, f, rng),
        ];
        let output = Dense::new(cfg.t_max * f, 2, rng);
        Ok(BinaryModel { cfg, encoder, step_layers, output })
    }

    pub(crate) fn from_parameters(cfg: BinaryConfig, num_phones: usize, params: Vec<Parameter>) -> Result<Self> {
        cfg.validate()?;
        let mut it = params.into_iter();
        let encoder = Encoder::from_parameters(cfg.encoder, num_phones, &mut it)?;
        let mut next = || it.next().ok_or_else(|| Error::Checkpoint("missing dense parameter".into()));
        let f = cfg.ffn_dim;
        let l0 = Dense::from_parameters(next()?, next()?, 2 * cfg.encoder.out_dim(), f)?;
        let l1 = Dense::from_parameters(next()?, next()?, f, f)?;
        let l2 = Dense::from_parameters(next()?, next()?, f, f)?;
        let output = Dense::from_parameters(next()?, next()?, cfg.t_max * f, 2)?;
        Ok(BinaryModel { cfg, encoder, step_layers: [l0, l1, l2], output })
    }

    pub fn config(&self) -> &BinaryConfig {
        &self.cfg
    }

    pub fn t_max(&self) -> usize {
        self.cfg.t_max
    }

    fn check_len(&self, p: &Pronunciation) -> Result<()> {
        if p.len() > self.cfg.t_max {
            return Err(Error::SequenceTooLong { len: p.len(), max: self.cfg.t_max });
        }
        Ok(())
    }

    /// Classifier head over two already-encoded sequences.
    pub fn head_forward(&self, a: &EncodedSequence, b: &EncodedSequence) -> Result<PairTrace> {
        let (len_a, len_b) = (a.per_step.shape()[0], b.per_step.shape()[0]);
        let steps = len_a.max(len_b);
        if steps > self.cfg.t_max {
            return Err(Error::SequenceTooLong { len: steps, max: self.cfg.t_max });
        }
        let d = self.cfg.encoder.out_dim();
        let f = self.cfg.ffn_dim;
        let mut flat = vec![0.0; self.cfg.t_max * f];
        let mut inputs = Vec::with_capacity(steps);
        let mut pre = Vec::with_capacity(steps);
        let mut acts = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = vec![0.0; 2 * d];
            if t < len_a {
                x[..d].copy_from_slice(a.per_step.row(t));
            }
            if t < len_b {
                x[d..].copy_from_slice(b.per_step.row(t));
            }
            let mut z: [Vec<f64>; 3] = Default::default();
            let mut h: [Vec<f64>; 3] = Default::default();
            for (k, layer) in self.step_layers.iter().enumerate() {
                z[k] = layer.forward(if k == 0 { &x } else { &h[k - 1] });
                h[k] = z[k].clone();
                relu_in_place(&mut h[k]);
            }
            flat[t * f..(t + 1) * f].copy_from_slice(&h[2]);
            inputs.push(x);
            pre.push(z);
            acts.push(h);
        }
        let logits = Tensor::vector(self.output.forward(&flat));
        let (_, probs) = softmax_nll(&logits, 1)?;
        Ok(PairTrace { steps, len_a, len_b, inputs, pre, acts, flat, logits, probs })
    }

    /// Backward through the head for a gradient on the logits; returns the
    /// per-step gradients for the two encoder outputs.
    fn head_backward(&mut self, trace: &PairTrace, d_logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.cfg.encoder.out_dim();
        let f = self.cfg.ffn_dim;
        let d_flat = self.output.backward(&trace.flat, d_logits);
        let mut da = vec![0.0; trace.len_a * d];
        let mut db = vec![0.0; trace.len_b * d];
        for t in 0..trace.steps {
            let mut g = d_flat[t * f..(t + 1) * f].to_vec();
            for k in (0..3).rev() {
                relu_mask(&trace.pre[t][k], &mut g);
                let x = if k == 0 { &trace.inputs[t] } else { &trace.acts[t][k - 1] };
                if g.iter().all(|&v| v == 0.0) {
                    g = vec![0.0; x.len()];
                    continue;
                }
                g = self.step_layers[k].backward(x, &g);
            }
            if t < trace.len_a {
                da[t * d..(t + 1) * d].copy_from_slice(&g[..d]);
            }
            if t < trace.len_b {
                db[t * d..(t + 1) * d].copy_from_slice(&g[d..]);
            }
        }
        (da, db)
    }

    /// Probability that `p1` and `p2` are pronunciations of the same word.
    pub fn binary_score(&self, p1: &Pronunciation, p2: &Pronunciation) -> Result<f64> {
        self.check_len(p1)?;
        self.check_len(p2)?;
        let a = self.encoder.encode(p1)?;
        let b = self.encoder.encode(p2)?;
        Ok(self.head_forward(&a, &b)?.score())
    }

    /// [`PairTrace::relu_margin`] for a pair of inputs.
    pub fn relu_margin(&self, p1: &Pronunciation, p2: &Pronunciation) -> Result<f64> {
        self.check_len(p1)?;
        self.check_len(p2)?;
        Ok(self.head_forward(&self.encoder.encode(p1)?, &self.encoder.encode(p2)?)?.relu_margin())
    }

    pub fn binary_loss(&self, pair: &LabeledPair) -> Result<f64> {
        self.check_len(&pair.surface)?;
        self.check_len(&pair.canonical)?;
        let a = self.encoder.encode(&pair.surface)?;
        let b = self.encoder.encode(&pair.canonical)?;
        self.head_forward(&a, &b)?.loss(pair.class())
    }

    pub fn binary_loss_backward(&mut self, pair: &LabeledPair, scale: f64) -> Result<f64> {
        let stats = self.batch_loss_backward(std::slice::from_ref(pair), scale)?;
        Ok(stats.loss_sum)
    }

    /// Summed negative log likelihood over `pairs`, accumulating `scale`
    /// times its gradient. Distinct pronunciations are encoded once.
    pub fn batch_loss_backward(&mut self, pairs: &[LabeledPair], scale: f64) -> Result<BatchStats> {
        for p in pairs {
            self.check_len(&p.surface)?;
            self.check_len(&p.canonical)?;
        }
        let mut index: HashMap<&Pronunciation, usize> = HashMap::new();
        let mut distinct: Vec<&Pronunciation> = Vec::new();
        let mut slots = Vec::with_capacity(pairs.len());
        for p in pairs {
            let mut slot = |q| {
                *index.entry(q).or_insert_with(|| {
                    distinct.push(q);
                    distinct.len() - 1
                })
            };
            slots.push([slot(&p.surface), slot(&p.canonical)]);
        }
        let this = &*self;
        let encoded: Vec<(EncodedSequence, EncoderTrace)> =
            distinct.par_iter().map(|p| this.encoder.encode_traced(p)).collect::<Result<_>>()?;
        let heads: Vec<PairTrace> = slots
            .par_iter()
            .map(|&[a, b]| this.head_forward(&encoded[a].0, &encoded[b].0))
            .collect::<Result<_>>()?;

        let d = self.cfg.encoder.out_dim();
        let mut d_steps: Vec<Vec<f64>> = distinct.iter().map(|p| vec![0.0; p.len() * d]).collect();
        let mut stats = BatchStats::default();
        for ((pair, trace), &[a, b]) in pairs.iter().zip(&heads).zip(&slots) {
            let class = pair.class();
            let loss = trace.loss(class)?;
            stats.loss_sum += loss;
            stats.count += 1;
            if trace.probs.data()[class] < 0.5 {
                stats.violations += 1;
            }
            let mut d_logits = softmax_nll_backward(&trace.probs, class).into_data();
            d_logits.iter_mut().for_each(|g| *g *= scale);
            let (da, db) = self.head_backward(trace, &d_logits);
            for (acc, g) in d_steps[a].iter_mut().zip(&da) {
                *acc += g;
            }
            for (acc, g) in d_steps[b].iter_mut().zip(&db) {
                *acc += g;
            }
        }
        for ((_, trace), g) in encoded.iter().zip(&d_steps) {
            self.encoder.backward(trace, Some(g), None)?;
        }
        Ok(stats)
    }
}

impl ParamSet for BinaryModel {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out = self.encoder.params();
        for (k, l) in self.step_layers.iter().enumerate() {
            out.push((format!("binary.step{k}.w"), &l.w));
            out.push((format!("binary.step{k}.b"), &l.b));
        }
        out.push(("binary.out.w".into(), &self.output.w));
        out.push(("binary.out.b".into(), &self.output.b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.params_mut();
        for l in self.step_layers.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.output.w);
        out.push(&mut self.output.b);
        out
    }
}
