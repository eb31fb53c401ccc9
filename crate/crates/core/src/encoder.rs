//! Phone-embedding lookup and LSTM sequence encoders.
//!
//! Three stack layouts are supported: one unidirectional layer, two stacked
//! unidirectional layers, and two stacked bidirectional layers. The cell is
//! the plain LSTM (input, forget, cell and output gates over `[x ; h]`, no
//! peepholes, no projection) started from zero hidden and cell state.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{affine_backward_raw, affine_raw, ops::sigmoid, ParamSet, Parameter, Tensor};
use crate::phonology::Pronunciation;

/// The encoder variants, named after the usual table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    Lstm,
    TwoLstm,
    BiTwoLstm,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 3] = [EncoderKind::Lstm, EncoderKind::TwoLstm, EncoderKind::BiTwoLstm];

    pub fn config(self, phone_embed_dim: usize, hidden_dim: usize) -> EncoderConfig {
        let (num_layers, bidirectional) = match self {
            EncoderKind::Lstm => (1, false),
            EncoderKind::TwoLstm => (2, false),
            EncoderKind::BiTwoLstm => (2, true),
        };
        EncoderConfig { phone_embed_dim, hidden_dim, num_layers, bidirectional }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Lstm => "lstm",
            EncoderKind::TwoLstm => "2lstm",
            EncoderKind::BiTwoLstm => "bi2lstm",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(EncoderKind::Lstm),
            "2lstm" => Ok(EncoderKind::TwoLstm),
            "bi2lstm" | "bilstm" => Ok(EncoderKind::BiTwoLstm),
            other => Err(Error::invalid(format!("unknown encoder `{other}` (expected lstm, 2lstm, bi2lstm)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub phone_embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderKind::TwoLstm.config(64, 64)
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phone_embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        match (self.num_layers, self.bidirectional) {
            (1, false) | (2, false) | (2, true) => Ok(()),
            (l, b) => Err(Error::invalid(format!(
                "unsupported encoder layout: {l} layer(s), bidirectional = {b}"
            ))),
        }
    }

    pub fn kind(&self) -> Option<EncoderKind> {
        EncoderKind::ALL.into_iter().find(|k| {
            let c = k.config(self.phone_embed_dim, self.hidden_dim);
            c.num_layers == self.num_layers && c.bidirectional == self.bidirectional
        })
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    pub fn out_dim(&self) -> usize {
        self.hidden_dim * self.directions()
    }
}

/// Learned phone vectors. The last row is reserved for padding and is never
/// part of the inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct PhoneEmbeddingTable {
    pub table: Parameter,
    num_phones: usize,
}

impl PhoneEmbeddingTable {
    pub fn new<R: Rng + ?Sized>(num_phones: usize, dim: usize, rng: &mut R) -> Self {
        let mut table = Tensor::uniform(&[num_phones + 1, dim], 1.0, rng);
        table.data_mut()[num_phones * dim..].fill(0.0);
        PhoneEmbeddingTable { table: Parameter::new(table), num_phones }
    }

    pub(crate) fn from_parameter(table: Parameter, num_phones: usize) -> Result<Self> {
        if table.shape().len() != 2 || table.shape()[0] != num_phones + 1 {
            return Err(Error::Shape(format!(
                "embedding table {:?} does not fit {num_phones} phones plus padding",
                table.shape()
            )));
        }
        Ok(PhoneEmbeddingTable { table, num_phones })
    }

    pub fn num_phones(&self) -> usize {
        self.num_phones
    }

    pub fn pad_id(&self) -> usize {
        self.num_phones
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    fn check(&self, p: &Pronunciation) -> Result<()> {
        match p.phones().iter().find(|id| id.index() >= self.num_phones) {
            Some(id) => Err(Error::invalid(format!(
                "phone id {} out of range for {} phones",
                id.0, self.num_phones
            ))),
            None => Ok(()),
        }
    }

    /// Row `t` of the result is the table row of phone `t`.
    pub fn embed_phones(&self, p: &Pronunciation) -> Result<Tensor> {
        self.check(p)?;
        let d = self.dim();
        let mut out = Vec::with_capacity(p.len() * d);
        for id in p.phones() {
            out.extend_from_slice(self.table.value.row(id.index()));
        }
        Tensor::matrix(p.len(), d, out)
    }

    fn backward(&mut self, ids: &[usize], d_rows: &[f64]) {
        let d = self.dim();
        let grad = self.table.grad.data_mut();
        for (t, &id) in ids.iter().enumerate() {
            for (g, &dr) in grad[id * d..(id + 1) * d].iter_mut().zip(&d_rows[t * d..(t + 1) * d]) {
                *g += dr;
            }
        }
    }
}

/// One LSTM layer in one direction. Gate rows of `w` are stacked as
/// input, forget, cell, output; columns cover `[x ; h_prev]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w: Parameter,
    pub b: Parameter,
    input_dim: usize,
    hidden_dim: usize,
}

#[derive(Debug, Clone)]
struct StepCache {
    xh: Vec<f64>,
    /// Post-activation gates: i, f, g, o.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Caches in processing order (reversed time for a backward layer).
    steps: Vec<StepCache>,
    reverse: bool,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let s = 1.0 / (hidden_dim as f64).sqrt();
        let w = Tensor::uniform(&[4 * hidden_dim, input_dim + hidden_dim], s, rng);
        let mut b = Tensor::zeros(&[4 * hidden_dim]);
        b.data_mut()[hidden_dim..2 * hidden_dim].fill(1.0);
        LstmLayer { w: Parameter::new(w), b: Parameter::new(b), input_dim, hidden_dim }
    }

    pub(crate) fn from_parameters(w: Parameter, b: Parameter, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        if w.shape() != [4 * hidden_dim, input_dim + hidden_dim] || b.shape() != [4 * hidden_dim] {
            return Err(Error::Shape(format!(
                "LSTM layer shapes {:?}/{:?} do not match input {input_dim}, hidden {hidden_dim}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(LstmLayer { w, b, input_dim, hidden_dim })
    }

    /// Runs the layer over `xs` (`T x input_dim`, row-major). Outputs are
    /// placed at their original time index even when `reverse` is set.
    pub fn forward(&self, xs: &[f64], reverse: bool) -> (Vec<f64>, LayerTrace) {
        let (n_in, h) = (self.input_dim, self.hidden_dim);
        let t_len = xs.len() / n_in;
        let mut out = vec![0.0; t_len * h];
        let mut steps = Vec::with_capacity(t_len);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let mut z = vec![0.0; 4 * h];
        for k in 0..t_len {
            let t = if reverse { t_len - 1 - k } else { k };
            let mut xh = Vec::with_capacity(n_in + h);
            xh.extend_from_slice(&xs[t * n_in..(t + 1) * n_in]);
            xh.extend_from_slice(&h_prev);
            affine_raw(&xh, self.w.value.data(), self.b.value.data(), &mut z);
            let mut gates = vec![0.0; 4 * h];
            let mut c = vec![0.0; h];
            let mut tanh_c = vec![0.0; h];
            for j in 0..h {
                let i_g = sigmoid(z[j]);
                let f_g = sigmoid(z[h + j]);
                let g_g = z[2 * h + j].tanh();
                let o_g = sigmoid(z[3 * h + j]);
                gates[j] = i_g;
                gates[h + j] = f_g;
                gates[2 * h + j] = g_g;
                gates[3 * h + j] = o_g;
                c[j] = f_g * c_prev[j] + i_g * g_g;
                tanh_c[j] = c[j].tanh();
                h_prev[j] = o_g * tanh_c[j];
            }
            out[t * h..(t + 1) * h].copy_from_slice(&h_prev);
            steps.push(StepCache { xh, gates, c_prev: std::mem::replace(&mut c_prev, c), tanh_c });
        }
        (out, LayerTrace { steps, reverse })
    }

    /// Backpropagation through time. `d_out` is `T x hidden`; returns
    /// `d xs` (`T x input_dim`) and accumulates into `w.grad` and `b.grad`.
    pub fn backward(&mut self, trace: &LayerTrace, d_out: &[f64]) -> Vec<f64> {
        let (n_in, h) = (self.input_dim, self.hidden_dim);
        let t_len = trace.steps.len();
        let mut d_xs = vec![0.0; t_len * n_in];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let mut dxh = vec![0.0; n_in + h];
        for k in (0..t_len).rev() {
            let t = if trace.reverse { t_len - 1 - k } else { k };
            let s = &trace.steps[k];
            for j in 0..h {
                let (i_g, f_g, g_g, o_g) = (s.gates[j], s.gates[h + j], s.gates[2 * h + j], s.gates[3 * h + j]);
                let dh = d_out[t * h + j] + dh_next[j];
                let tc = s.tanh_c[j];
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * g_g * i_g * (1.0 - i_g);
                dz[h + j] = dc * s.c_prev[j] * f_g * (1.0 - f_g);
                dz[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                dz[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                dc_next[j] = dc * f_g;
            }
            dxh.fill(0.0);
            affine_backward_raw(
                &s.xh,
                self.w.value.data(),
                self.w.grad.data_mut(),
                self.b.grad.data_mut(),
                &dz,
                Some(&mut dxh),
            );
            d_xs[t * n_in..(t + 1) * n_in].copy_from_slice(&dxh[..n_in]);
            dh_next.copy_from_slice(&dxh[n_in..]);
        }
        d_xs
    }
}

/// Output of [`Encoder::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSequence {
    /// `T x out_dim`.
    pub per_step: Tensor,
    /// Last row for unidirectional stacks; `[forward at T ; backward at 1]`
    /// for bidirectional ones.
    pub final_state: Tensor,
}

/// Forward caches needed by [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    ids: Vec<usize>,
    /// Per layer, per direction.
    layers: Vec<Vec<LayerTrace>>,
}

impl EncoderTrace {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Embedding table plus LSTM stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    cfg: EncoderConfig,
    pub table: PhoneEmbeddingTable,
    /// `layers[l][d]`: layer `l`, direction `d` (0 forward, 1 backward).
    pub layers: Vec<Vec<LstmLayer>>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(cfg: EncoderConfig, num_phones: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if num_phones == 0 {
            return Err(Error::invalid("encoder needs at least one phone"));
        }
        let table = PhoneEmbeddingTable::new(num_phones, cfg.phone_embed_dim, rng);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let input = if l == 0 { cfg.phone_embed_dim } else { cfg.out_dim() };
            layers.push((0..cfg.directions()).map(|_| LstmLayer::new(input, cfg.hidden_dim, rng)).collect());
        }
        Ok(Encoder { cfg, table, layers })
    }

    /// Rebuilds from parameters in [`ParamSet::params`] order.
    pub(crate) fn from_parameters(cfg: EncoderConfig, num_phones: usize, params: &mut impl Iterator<Item = Parameter>) -> Result<Self> {
        cfg.validate()?;
        let mut next = || params.next().ok_or_else(|| Error::Checkpoint("missing encoder parameter".into()));
        let table = PhoneEmbeddingTable::from_parameter(next()?, num_phones)?;
        if table.dim() != cfg.phone_embed_dim {
            return Err(Error::Shape("embedding width does not match the config".into()));
        }
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let input = if l == 0 { cfg.phone_embed_dim } else { cfg.out_dim() };
            let mut dirs = Vec::new();
            for _ in 0..cfg.directions() {
                let w = next()?;
                let b = next()?;
                dirs.push(LstmLayer::from_parameters(w, b, input, cfg.hidden_dim)?);
            }
            layers.push(dirs);
        }
        Ok(Encoder { cfg, table, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn num_phones(&self) -> usize {
        self.table.num_phones()
    }

    pub fn encode(&self, p: &Pronunciation) -> Result<EncodedSequence> {
        self.encode_traced(p).map(|(e, _)| e)
    }

    pub fn encode_traced(&self, p: &Pronunciation) -> Result<(EncodedSequence, EncoderTrace)> {
        let x = self.table.embed_phones(p)?;
        let ids: Vec<usize> = p.phones().iter().map(|id| id.index()).collect();
        let t_len = ids.len();
        let h = self.cfg.hidden_dim;
        let mut input = x.into_data();
        let mut traces = Vec::with_capacity(self.layers.len());
        for dirs in &self.layers {
            let mut outs = Vec::with_capacity(dirs.len());
            let mut layer_traces = Vec::with_capacity(dirs.len());
            for (d, layer) in dirs.iter().enumerate() {
                let (o, tr) = layer.forward(&input, d == 1);
                outs.push(o);
                layer_traces.push(tr);
            }
            input = if outs.len() == 1 {
                outs.pop().unwrap()
            } else {
                let mut cat = Vec::with_capacity(t_len * 2 * h);
                for t in 0..t_len {
                    cat.extend_from_slice(&outs[0][t * h..(t + 1) * h]);
                    cat.extend_from_slice(&outs[1][t * h..(t + 1) * h]);
                }
                cat
            };
            traces.push(layer_traces);
        }
        let out_dim = self.cfg.out_dim();
        let final_state = if self.cfg.bidirectional {
            let mut f = input[(t_len - 1) * out_dim..(t_len - 1) * out_dim + h].to_vec();
            f.extend_from_slice(&input[h..2 * h]);
            f
        } else {
            input[(t_len - 1) * out_dim..].to_vec()
        };
        let encoded = EncodedSequence {
            per_step: Tensor::matrix(t_len, out_dim, input)?,
            final_state: Tensor::vector(final_state),
        };
        Ok((encoded, EncoderTrace { ids, layers: traces }))
    }

    /// Accumulates parameter gradients given upstream gradients on the
    /// per-step outputs (`T x out_dim`) and/or on the final state.
    pub fn backward(&mut self, trace: &EncoderTrace, d_per_step: Option<&[f64]>, d_final: Option<&[f64]>) -> Result<()> {
        let t_len = trace.len();
        let out_dim = self.cfg.out_dim();
        let h = self.cfg.hidden_dim;
        let mut d = match d_per_step {
            Some(g) if g.len() != t_len * out_dim => {
                return Err(Error::Shape(format!("per-step gradient has {}, expected {}", g.len(), t_len * out_dim)))
            }
            Some(g) => g.to_vec(),
            None => vec![0.0; t_len * out_dim],
        };
        if let Some(g) = d_final {
            if g.len() != out_dim {
                return Err(Error::Shape(format!("final gradient has {}, expected {out_dim}", g.len())));
            }
            let last = (t_len - 1) * out_dim;
            if self.cfg.bidirectional {
                for j in 0..h {
                    d[last + j] += g[j];
                    d[h + j] += g[h + j];
                }
            } else {
                for j in 0..out_dim {
                    d[last + j] += g[j];
                }
            }
        }
        for (l, dirs) in self.layers.iter_mut().enumerate().rev() {
            let traces = &trace.layers[l];
            d = if dirs.len() == 1 {
                dirs[0].backward(&traces[0], &d)
            } else {
                let mut split = [vec![0.0; t_len * h], vec![0.0; t_len * h]];
                for t in 0..t_len {
                    split[0][t * h..(t + 1) * h].copy_from_slice(&d[t * 2 * h..t * 2 * h + h]);
                    split[1][t * h..(t + 1) * h].copy_from_slice(&d[t * 2 * h + h..(t + 1) * 2 * h]);
                }
                let a = dirs[0].backward(&traces[0], &split[0]);
                let b = dirs[1].backward(&traces[1], &split[1]);
                a.iter().zip(&b).map(|(x, y)| x + y).collect()
            };
        }
        self.table.backward(&trace.ids, &d);
        Ok(())
    }

    /// Encodes each row of a padded batch using only its unmasked prefix.
    pub fn encode_batch(&self, batch: &PaddedBatch) -> Result<Vec<EncodedSequence>> {
        batch.unpadded().iter().map(|p| self.encode(p)).collect()
    }
}

impl ParamSet for Encoder {
    fn params(&self) -> Vec<(String, &Parameter)> {
        let mut out = vec![("embed.table".to_string(), &self.table.table)];
        for (l, dirs) in self.layers.iter().enumerate() {
            for (d, layer) in dirs.iter().enumerate() {
                let dir = if d == 0 { "fwd" } else { "bwd" };
                out.push((format!("lstm.l{l}.{dir}.w"), &layer.w));
                out.push((format!("lstm.l{l}.{dir}.b"), &layer.b));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.table.table];
        for dirs in self.layers.iter_mut() {
            for layer in dirs.iter_mut() {
                out.push(&mut layer.w);
                out.push(&mut layer.b);
            }
        }
        out
    }
}

/// Right-padded id matrix with a 0/1 mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<u8>>,
    pub pad_id: usize,
}

impl PaddedBatch {
    pub fn max_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Recovers the original sequences from the masked positions.
    pub fn unpadded(&self) -> Vec<Pronunciation> {
        self.ids
            .iter()
            .zip(&self.mask)
            .map(|(row, m)| {
                let phones = row
                    .iter()
                    .zip(m)
                    .filter(|(_, &k)| k == 1)
                    .map(|(&id, _)| crate::phonology::PhoneId(id as u16))
                    .collect();
                Pronunciation::new(phones).expect("padded row has no real positions")
            })
            .collect()
    }
}

pub fn pad_batch(seqs: &[Pronunciation], pad_id: usize) -> Result<PaddedBatch> {
    if seqs.is_empty() {
        return Err(Error::invalid("cannot pad an empty batch"));
    }
    let t_max = seqs.iter().map(Pronunciation::len).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(seqs.len());
    let mut mask = Vec::with_capacity(seqs.len());
    for s in seqs {
        let mut row: Vec<usize> = s.phones().iter().map(|p| p.index()).collect();
        let mut m = vec![1u8; row.len()];
        row.resize(t_max, pad_id);
        m.resize(t_max, 0);
        ids.push(row);
        mask.push(m);
    }
    Ok(PaddedBatch { ids, mask, pad_id })
}
