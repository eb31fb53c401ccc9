use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{relu_in_place, relu_mask, triplet_hinge, BatchStats, Dense, Triplet};
use crate::encoder::{Encoder, EncoderConfig, EncoderTrace};
use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity_backward, cosine_similarity_raw, ParamSet, Parameter, Tensor};
use crate::phonology::Pronunciation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankConfig {
    pub encoder: EncoderConfig,
    /// Embedding size `n`.
    pub embed_dim: usize,
    /// Width of the first dense layer.
    pub ffn_dim: usize,
    /// Apply ReLU to the embedding itself. Off by default: non-negative
    /// embeddings are pushed toward sparse, disjoint supports by the hinge
    /// loss and some inputs end up with an all-zero embedding, for which
    /// cosine similarity is undefined.
    pub final_relu: bool,
}

impl RankConfig {
    pub const DEFAULT_EMBED_DIM: usize = 120;

    pub fn new(encoder: EncoderConfig, embed_dim: usize) -> Self {
        RankConfig { encoder, embed_dim, ffn_dim: encoder.hidden_dim, final_relu: false }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.embed_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid("embedding and dense widths must be positive"));
        }
        Ok(())
    }
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig::new(EncoderConfig::default(), Self::DEFAULT_EMBED_DIM)
    }
}

/// Triplet ranking network: encoder final state, then two dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RankModel {
    cfg: RankConfig,
    pub encoder: Encoder,
    pub fc1: Dense,
    pub fc2: Dense,
}

/// Forward caches for one embedding.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    encoder: EncoderTrace,
    enc_final: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
}

impl RankModel {
    pub fn new<R: Rng + ?Sized>(cfg: RankConfig, num_phones: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(cfg.encoder, num_phones, rng)?;
        let fc1 = Dense::new(cfg.encoder.out_dim(), cfg.ffn_dim, rng);
        let fc2 = Dense::new(cfg.ffn_dim, cfg.embed_dim, rng);
        Ok(RankModel { cfg, encoder, fc1, fc2 })
    }

    pub(crate) fn from_parameters(cfg: RankConfig, num_phones: usize, params: Vec<Parameter>) -> Result<Self> {
        cfg.validate()?;
        let mut it = params.into_iter();
        let encoder = Encoder::from_parameters(cfg.encoder, num_phones, &mut it)?;
        let mut next = || it.next().ok_or_else(|| Error::Checkpoint("missing dense parameter".into()));
        let fc1 = Dense::from_parameters(next()?, next()?, cfg.encoder.out_dim(), cfg.ffn_dim)?;
        let fc2 = Dense::from_parameters(next()?, next()?, cfg.ffn_dim, cfg.embed_dim)?;
        Ok(RankModel { cfg, encoder, fc1, fc2 })
    }

    pub fn config(&self) -> &RankConfig {
        &self.cfg
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    pub fn embed_traced(&self, p: &Pronunciation) -> Result<(Vec<f64>, EmbedTrace)> {
        let (enc, encoder) = self.encoder.encode_traced(p)?;
        let enc_final = enc.final_state.into_data();
        let z1 = self.fc1.forward(&enc_final);
        let mut a1 = z1.clone();
        relu_in_place(&mut a1);
        let z2 = self.fc2.forward(&a1);
        let mut out = z2.clone();
        if self.cfg.final_relu {
            relu_in_place(&mut out);
        }
        Ok((out, EmbedTrace { encoder, enc_final, z1, a1, z2 }))
    }

    /// The pronunciation embedding `g(p)`.
    pub fn embed(&self, p: &Pronunciation) -> Result<Vec<f64>> {
        self.embed_traced(p).map(|(e, _)| e)
    }

    pub fn embed_pronunciation(&self, p: &Pronunciation) -> Result<Tensor> {
        self.embed(p).map(Tensor::vector)
    }

    /// Accumulates gradients for an upstream gradient on the embedding.
    pub fn backward_embedding(&mut self, trace: &EmbedTrace, d_emb: &[f64]) -> Result<()> {
        let mut d2 = d_emb.to_vec();
        if self.cfg.final_relu {
            relu_mask(&trace.z2, &mut d2);
        }
        let mut d1 = self.fc2.backward(&trace.a1, &d2);
        relu_mask(&trace.z1, &mut d1);
        let d_enc = self.fc1.backward(&trace.enc_final, &d1);
        self.encoder.backward(&trace.encoder, None, Some(&d_enc))
    }

    /// Smallest `|z|` over the ReLU inputs of the dense layers for `p`.
    pub fn relu_margin(&self, p: &Pronunciation) -> Result<f64> {
        let (_, t) = self.embed_traced(p)?;
        let relu_inputs = if self.cfg.final_relu { [&t.z1[..], &t.z2[..]].concat() } else { t.z1 };
        Ok(relu_inputs.iter().fold(f64::INFINITY, |m, z| m.min(z.abs())))
    }

    /// `1 - d_cos(g(p1), g(p2))`.
    pub fn similarity(&self, p1: &Pronunciation, p2: &Pronunciation) -> Result<f64> {
        cosine_similarity_raw(&self.embed(p1)?, &self.embed(p2)?)
    }

    pub fn triplet_loss(&self, t: &Triplet, margin: f64) -> Result<f64> {
        let s = self.embed(&t.surface)?;
        let f_pos = cosine_similarity_raw(&s, &self.embed(&t.positive)?)?;
        let f_neg = cosine_similarity_raw(&s, &self.embed(&t.negative)?)?;
        Ok(triplet_hinge(f_pos, f_neg, margin))
    }

    /// Loss of one triplet; accumulates `scale * d loss` into the gradients.
    pub fn triplet_loss_backward(&mut self, t: &Triplet, margin: f64, scale: f64) -> Result<f64> {
        let stats = self.batch_loss_backward(std::slice::from_ref(t), margin, scale)?;
        Ok(stats.loss_sum)
    }

    /// Summed hinge loss over `triplets`, accumulating `scale` times its
    /// gradient. Each distinct pronunciation in the batch is encoded and
    /// backpropagated once, with the gradients of all its occurrences summed.
    pub fn batch_loss_backward(&mut self, triplets: &[Triplet], margin: f64, scale: f64) -> Result<BatchStats> {
        let mut index: HashMap<&Pronunciation, usize> = HashMap::new();
        let mut distinct: Vec<&Pronunciation> = Vec::new();
        let mut slots = Vec::with_capacity(triplets.len());
        for t in triplets {
            let mut slot = |p| {
                *index.entry(p).or_insert_with(|| {
                    distinct.push(p);
                    distinct.len() - 1
                })
            };
            slots.push([slot(&t.surface), slot(&t.positive), slot(&t.negative)]);
        }

        let this = &*self;
        let forward: Vec<(Vec<f64>, EmbedTrace)> =
            distinct.par_iter().map(|p| this.embed_traced(p)).collect::<Result<_>>()?;

        let dim = self.cfg.embed_dim;
        let mut d_emb = vec![vec![0.0; dim]; distinct.len()];
        let mut stats = BatchStats::default();
        for &[s, pos, neg] in &slots {
            let (es, ep, en) = (&forward[s].0, &forward[pos].0, &forward[neg].0);
            let f_pos = cosine_similarity_raw(es, ep)?;
            let f_neg = cosine_similarity_raw(es, en)?;
            let loss = triplet_hinge(f_pos, f_neg, margin);
            stats.loss_sum += loss;
            stats.count += 1;
            if loss > 0.0 {
                stats.violations += 1;
                let (ds_p, dp) = cosine_similarity_backward(es, ep, -scale)?;
                let (ds_n, dn) = cosine_similarity_backward(es, en, scale)?;
                add_into(&mut d_emb[s], &ds_p);
                add_into(&mut d_emb[s], &ds_n);
                add_into(&mut d_emb[pos], &dp);
                add_into(&mut d_emb[neg], &dn);
            }
        }
        for ((_, trace), d) in forward.iter().zip(&d_emb) {
            if d.iter().any(|&g| g != 0.0) {
                self.backward_embedding(trace, d)?;
            }
        }
        Ok(stats)
    }

    /// Hinge losses without gradients, for violation counting.
    pub fn batch_losses(&self, triplets: &[Triplet], margin: f64) -> Result<Vec<f64>> {
        let mut cache: HashMap<&Pronunciation, Vec<f64>> = HashMap::new();
        let mut out = Vec::with_capacity(triplets.len());
        for t in triplets {
            for p in [&t.surface, &t.positive, &t.negative] {
                if !cache.contains_key(p) {
                    cache.insert(p, self.embed(p)?);
                }
            }
            let s = &cache[&t.surface];
            let f_pos = cosine_similarity_raw(s, &cache[&t.positive])?;
            let f_neg = cosine_similarity_raw(s, &cache[&t.negative])?;
            out.push(triplet_hinge(f_pos, f_neg, margin));
        }
        Ok(out)
    }
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

impl ParamSet for RankModel {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out = self.encoder.params();
        out.push(("rank.fc1.w".into(), &self.fc1.w));
        out.push(("rank.fc1.b".into(), &self.fc1.b));
        out.push(("rank.fc2.w".into(), &self.fc2.w));
        out.push(("rank.fc2.b".into(), &self.fc2.b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = self.encoder.params_mut();
        out.push(&mut self.fc1.w);
        out.push(&mut self.fc1.b);
        out.push(&mut self.fc2.w);
        out.push(&mut self.fc2.b);
        out
    }
}
