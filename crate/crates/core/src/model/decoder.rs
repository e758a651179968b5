//! Pre-norm decoder-only transformer with learned positions, causal
//! multi-head attention and optional per-head LoRA on the query/key/value
//! projection. Backpropagation is written out by hand.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DecoderConfig, LoraConfig};
use super::lora::{HeadLora, LoraWeights};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    /// `d_model x 3 d_model`, column blocks: query, key, value; inside each
    /// block head `h` owns columns `h d_k .. (h + 1) d_k`.
    pub w_qkv: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights {
    pub tok_embed: Array2<f64>,
    pub pos_embed: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    /// `d_model x vocab_size`
    pub w_out: Array2<f64>,
}

fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || n.sample(rng))
}

impl BaseWeights {
    pub fn init(config: &DecoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let tok_embed = normal_matrix(config.vocab_size, d, INIT_STD, &mut rng);
        let pos_embed = normal_matrix(config.max_positions, d, INIT_STD, &mut rng);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_qkv: normal_matrix(d, 3 * d, INIT_STD, &mut rng),
                w_o: normal_matrix(d, d, resid_std, &mut rng),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w_ff1: normal_matrix(d, config.d_ff, INIT_STD, &mut rng),
                b_ff1: Array1::zeros(config.d_ff),
                w_ff2: normal_matrix(config.d_ff, d, resid_std, &mut rng),
                b_ff2: Array1::zeros(d),
            })
            .collect();
        Self {
            tok_embed,
            pos_embed,
            layers,
            lnf_gain: Array1::ones(d),
            lnf_bias: Array1::zeros(d),
            w_out: normal_matrix(d, config.vocab_size, INIT_STD, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        Self {
            tok_embed: z2(&self.tok_embed),
            pos_embed: z2(&self.pos_embed),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    ln1_gain: z1(&l.ln1_gain),
                    ln1_bias: z1(&l.ln1_bias),
                    w_qkv: z2(&l.w_qkv),
                    w_o: z2(&l.w_o),
                    ln2_gain: z1(&l.ln2_gain),
                    ln2_bias: z1(&l.ln2_bias),
                    w_ff1: z2(&l.w_ff1),
                    b_ff1: z1(&l.b_ff1),
                    w_ff2: z2(&l.w_ff2),
                    b_ff2: z1(&l.b_ff2),
                })
                .collect(),
            lnf_gain: z1(&self.lnf_gain),
            lnf_bias: z1(&self.lnf_bias),
            w_out: z2(&self.w_out),
        }
    }
}

/// Named tensors as flat slices, in a fixed order shared by parameters,
/// gradients, optimizer state and checkpoints.
pub trait NamedTensors {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;
}

macro_rules! flat {
    ($t:expr) => {
        $t.as_slice().expect("standard layout")
    };
}
macro_rules! flat_mut {
    ($t:expr) => {
        $t.as_slice_mut().expect("standard layout")
    };
}

impl NamedTensors for BaseWeights {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("tok_embed".into(), self.tok_embed.shape().to_vec(), flat!(self.tok_embed)),
            ("pos_embed".into(), self.pos_embed.shape().to_vec(), flat!(self.pos_embed)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("ln1_gain"), l.ln1_gain.shape().to_vec(), flat!(l.ln1_gain)));
            out.push((p("ln1_bias"), l.ln1_bias.shape().to_vec(), flat!(l.ln1_bias)));
            out.push((p("w_qkv"), l.w_qkv.shape().to_vec(), flat!(l.w_qkv)));
            out.push((p("w_o"), l.w_o.shape().to_vec(), flat!(l.w_o)));
            out.push((p("ln2_gain"), l.ln2_gain.shape().to_vec(), flat!(l.ln2_gain)));
            out.push((p("ln2_bias"), l.ln2_bias.shape().to_vec(), flat!(l.ln2_bias)));
            out.push((p("w_ff1"), l.w_ff1.shape().to_vec(), flat!(l.w_ff1)));
            out.push((p("b_ff1"), l.b_ff1.shape().to_vec(), flat!(l.b_ff1)));
            out.push((p("w_ff2"), l.w_ff2.shape().to_vec(), flat!(l.w_ff2)));
            out.push((p("b_ff2"), l.b_ff2.shape().to_vec(), flat!(l.b_ff2)));
        }
        out.push(("lnf_gain".into(), self.lnf_gain.shape().to_vec(), flat!(self.lnf_gain)));
        out.push(("lnf_bias".into(), self.lnf_bias.shape().to_vec(), flat!(self.lnf_bias)));
        out.push(("w_out".into(), self.w_out.shape().to_vec(), flat!(self.w_out)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = vec![
            ("tok_embed".into(), flat_mut!(self.tok_embed)),
            ("pos_embed".into(), flat_mut!(self.pos_embed)),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |n: &str| format!("layers.{i}.{n}");
            out.push((p("ln1_gain"), flat_mut!(l.ln1_gain)));
            out.push((p("ln1_bias"), flat_mut!(l.ln1_bias)));
            out.push((p("w_qkv"), flat_mut!(l.w_qkv)));
            out.push((p("w_o"), flat_mut!(l.w_o)));
            out.push((p("ln2_gain"), flat_mut!(l.ln2_gain)));
            out.push((p("ln2_bias"), flat_mut!(l.ln2_bias)));
            out.push((p("w_ff1"), flat_mut!(l.w_ff1)));
            out.push((p("b_ff1"), flat_mut!(l.b_ff1)));
            out.push((p("w_ff2"), flat_mut!(l.w_ff2)));
            out.push((p("b_ff2"), flat_mut!(l.b_ff2)));
        }
        out.push(("lnf_gain".into(), flat_mut!(self.lnf_gain)));
        out.push(("lnf_bias".into(), flat_mut!(self.lnf_bias)));
        out.push(("w_out".into(), flat_mut!(self.w_out)));
        out
    }
}

fn adapter_names(head: &HeadLora) -> &'static [&'static str] {
    match head {
        HeadLora::Fused(_) => &["qkv"],
        HeadLora::Separate(_) => &["q", "k", "v"],
    }
}

impl NamedTensors for LoraWeights {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (l, heads) in self.layers.iter().enumerate() {
            for (h, head) in heads.iter().enumerate() {
                for (name, a) in adapter_names(head).iter().zip(head.adapters()) {
                    out.push((format!("lora.{l}.{h}.{name}.a"), a.a.shape().to_vec(), flat!(a.a)));
                    out.push((format!("lora.{l}.{h}.{name}.b"), a.b.shape().to_vec(), flat!(a.b)));
                }
            }
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, heads) in self.layers.iter_mut().enumerate() {
            for (h, head) in heads.iter_mut().enumerate() {
                let names = adapter_names(head);
                for (name, a) in names.iter().zip(head.adapters_mut()) {
                    out.push((format!("lora.{l}.{h}.{name}.a"), flat_mut!(a.a)));
                    out.push((format!("lora.{l}.{h}.{name}.b"), flat_mut!(a.b)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub config: DecoderConfig,
    pub base: BaseWeights,
    pub lora: Option<LoraWeights>,
}

/// Gradient buffers mirroring [`DecoderModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderGrads {
    pub base: BaseWeights,
    pub lora: Option<LoraWeights>,
}

impl DecoderGrads {
    pub fn zeros_for(model: &DecoderModel) -> Self {
        Self {
            base: model.base.zeros_like(),
            lora: model.lora.as_ref().map(LoraWeights::zeros_like),
        }
    }
}

impl NamedTensors for DecoderModel {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = self.base.tensors();
        if let Some(l) = &self.lora {
            t.extend(l.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = self.base.tensors_mut();
        if let Some(l) = &mut self.lora {
            t.extend(l.tensors_mut());
        }
        t
    }
}

impl NamedTensors for DecoderGrads {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = self.base.tensors();
        if let Some(l) = &self.lora {
            t.extend(l.tensors());
        }
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = self.base.tensors_mut();
        if let Some(l) = &mut self.lora {
            t.extend(l.tensors_mut());
        }
        t
    }
}

/// Which parameter gradients a backward pass accumulates. Activation
/// gradients always flow through the whole network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradScope {
    pub base: bool,
    pub lora: bool,
}

impl GradScope {
    pub const ALL: GradScope = GradScope { base: true, lora: true };
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct LayerCache {
    ln1: LnCache,
    a: Array2<f64>,
    /// `x A` per head and adapter
    lora_u: Vec<Vec<Array2<f64>>>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: LnCache,
    c: Array2<f64>,
    h1: Array2<f64>,
    g: Array2<f64>,
}

pub struct ForwardCache {
    positions: Vec<usize>,
    layers: Vec<LayerCache>,
    final_ln: LnCache,
    /// Final normalized hidden states, `L x d_model`.
    pub hidden: Array2<f64>,
}

fn layer_norm(x: ArrayView2<'_, f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut rstd = Array1::zeros(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        xhat.row_mut(i).zip_mut_with(&row, |o, &v| *o = (v - mean) * r);
    }
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_row(x: ArrayView1<'_, f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
    let r = 1.0 / (var + LN_EPS).sqrt();
    x.mapv(|v| (v - mean) * r) * gain + bias
}

/// Returns dx; accumulates gain/bias gradients when requested.
fn layer_norm_backward(
    dy: ArrayView2<'_, f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    grads: Option<(&mut Array1<f64>, &mut Array1<f64>)>,
) -> Array2<f64> {
    if let Some((dg, db)) = grads {
        *dg += &(&dy * &cache.xhat).sum_axis(Axis(0));
        *db += &dy.sum_axis(Axis(0));
    }
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let dxhat = &dy.row(i) * gain;
        let xhat = cache.xhat.row(i);
        let m1 = dxhat.sum() / d as f64;
        let m2 = (&dxhat * &xhat).sum() / d as f64;
        let r = cache.rstd[i];
        dx.row_mut(i)
            .iter_mut()
            .zip(dxhat.iter().zip(xhat))
            .for_each(|(o, (&g, &h))| *o = r * (g - m1 - h * m2));
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Row-wise causal softmax of `scores * scale` in place.
fn causal_softmax(scores: &mut Array2<f64>, scale: f64) {
    let n = scores.nrows();
    for i in 0..n {
        let mut row = scores.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..=i {
            row[j] *= scale;
            max = max.max(row[j]);
        }
        let mut sum = 0.0;
        for j in 0..=i {
            row[j] = (row[j] - max).exp();
            sum += row[j];
        }
        for j in 0..=i {
            row[j] /= sum;
        }
        for j in i + 1..n {
            row[j] = 0.0;
        }
    }
}

/// Column ranges in the fused `3 d_model` layout written by adapter `idx` of
/// head `h`: a fused adapter covers three `d_k` blocks, a separate one one.
fn adapter_blocks(fused: bool, idx: usize, h: usize, d_k: usize, d_model: usize) -> Vec<(usize, usize)> {
    if fused {
        (0..3).map(|j| (j * d_model + h * d_k, j * d_k)).collect()
    } else {
        vec![(idx * d_model + h * d_k, 0)]
    }
}

impl DecoderModel {
    pub fn new(config: DecoderConfig, lora: Option<LoraConfig>, seed: u64) -> Result<Self> {
        config.validate()?;
        let base = BaseWeights::init(&config, seed);
        let lora = lora.map(|lc| {
            LoraWeights::new(
                config.n_layers,
                config.n_heads,
                config.d_model,
                config.d_k,
                lc,
                seed ^ 0x10_7a,
            )
        });
        Ok(Self { config, base, lora })
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn lora_param_count(&self) -> usize {
        self.lora.as_ref().map_or(0, LoraWeights::param_count)
    }

    /// Logits `L x vocab` for an embedding sequence occupying positions
    /// `0..L`.
    pub fn forward(&self, embeddings: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let cache = self.forward_hidden(embeddings)?;
        Ok(cache.hidden.dot(&self.base.w_out))
    }

    /// Like [`forward`](Self::forward) with explicit position ids, one per
    /// row. Attention stays causal in row order.
    pub fn forward_at(&self, embeddings: ArrayView2<'_, f64>, positions: &[usize]) -> Result<Array2<f64>> {
        let cache = self.forward_hidden_at(embeddings, positions)?;
        Ok(cache.hidden.dot(&self.base.w_out))
    }

    /// Attention probabilities per layer and head, for inspection.
    pub fn attention_maps(&self, embeddings: ArrayView2<'_, f64>) -> Result<Vec<Vec<Array2<f64>>>> {
        let cache = self.forward_hidden(embeddings)?;
        Ok(cache.layers.into_iter().map(|l| l.probs).collect())
    }

    pub fn forward_hidden(&self, embeddings: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        let positions: Vec<usize> = (0..embeddings.nrows()).collect();
        self.forward_hidden_at(embeddings, &positions)
    }

    pub fn forward_hidden_at(&self, embeddings: ArrayView2<'_, f64>, positions: &[usize]) -> Result<ForwardCache> {
        let cfg = &self.config;
        let (len, width) = embeddings.dim();
        if positions.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                actual: positions.len(),
            });
        }
        if let Some(&last) = positions.iter().max().filter(|&&p| p >= cfg.max_positions) {
            return Err(Error::SequenceTooLong {
                len: last + 1,
                max: cfg.max_positions,
            });
        }
        if width != cfg.d_model {
            return Err(Error::DimensionMismatch {
                expected: cfg.d_model,
                actual: width,
            });
        }
        let (d, dk) = (cfg.d_model, cfg.d_k);
        let scale = 1.0 / (dk as f64).sqrt();
        let mut x = embeddings.to_owned();
        for (mut row, &p) in x.rows_mut().into_iter().zip(positions) {
            row += &self.base.pos_embed.row(p);
        }
        let mut layers = Vec::with_capacity(cfg.n_layers);

        for (li, lw) in self.base.layers.iter().enumerate() {
            let (a, ln1) = layer_norm(x.view(), &lw.ln1_gain, &lw.ln1_bias);
            let mut qkv = a.dot(&lw.w_qkv);
            let mut lora_u = Vec::new();
            if let Some(lora) = &self.lora {
                for (h, head) in lora.layers[li].iter().enumerate() {
                    let fused = matches!(head, HeadLora::Fused(_));
                    let mut us = Vec::with_capacity(3);
                    for (idx, ad) in head.adapters().iter().enumerate() {
                        let (u, out) = ad.apply(a.view());
                        for (col, src) in adapter_blocks(fused, idx, h, dk, d) {
                            let mut dst = qkv.slice_mut(s![.., col..col + dk]);
                            dst += &out.slice(s![.., src..src + dk]);
                        }
                        us.push(u);
                    }
                    lora_u.push(us);
                }
            }

            let mut attn = Array2::zeros((len, d));
            let mut probs = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let q = qkv.slice(s![.., h * dk..(h + 1) * dk]);
                let k = qkv.slice(s![.., d + h * dk..d + (h + 1) * dk]);
                let v = qkv.slice(s![.., 2 * d + h * dk..2 * d + (h + 1) * dk]);
                let mut p = q.dot(&k.t());
                causal_softmax(&mut p, scale);
                attn.slice_mut(s![.., h * dk..(h + 1) * dk]).assign(&p.dot(&v));
                probs.push(p);
            }
            x += &attn.dot(&lw.w_o);

            let (c, ln2) = layer_norm(x.view(), &lw.ln2_gain, &lw.ln2_bias);
            let h1 = c.dot(&lw.w_ff1) + &lw.b_ff1;
            let g = h1.mapv(gelu);
            x += &(g.dot(&lw.w_ff2) + &lw.b_ff2);

            layers.push(LayerCache {
                ln1,
                a,
                lora_u,
                qkv,
                probs,
                attn,
                ln2,
                c,
                h1,
                g,
            });
        }
        let (hidden, final_ln) = layer_norm(x.view(), &self.base.lnf_gain, &self.base.lnf_bias);
        Ok(ForwardCache {
            positions: positions.to_vec(),
            layers,
            final_ln,
            hidden,
        })
    }

    /// Backpropagates `d_hidden` (gradient w.r.t. the final normalized hidden
    /// states) and returns the gradient w.r.t. the input embeddings.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_hidden: ArrayView2<'_, f64>,
        grads: &mut DecoderGrads,
        scope: GradScope,
    ) -> Array2<f64> {
        let cfg = &self.config;
        let (d, dk) = (cfg.d_model, cfg.d_k);
        let len = d_hidden.nrows();
        let scale = 1.0 / (dk as f64).sqrt();
        let gb = &mut grads.base;
        let mut dx = layer_norm_backward(
            d_hidden,
            &cache.final_ln,
            &self.base.lnf_gain,
            scope.base.then_some((&mut gb.lnf_gain, &mut gb.lnf_bias)),
        );

        for li in (0..cfg.n_layers).rev() {
            let lw = &self.base.layers[li];
            let lc = &cache.layers[li];
            let lg = &mut grads.base.layers[li];

            // feed-forward branch
            if scope.base {
                general_mat_mul(1.0, &lc.g.t(), &dx, 1.0, &mut lg.w_ff2);
                lg.b_ff2 += &dx.sum_axis(Axis(0));
            }
            let mut dh1 = dx.dot(&lw.w_ff2.t());
            dh1.zip_mut_with(&lc.h1, |g, &h| *g *= gelu_grad(h));
            if scope.base {
                general_mat_mul(1.0, &lc.c.t(), &dh1, 1.0, &mut lg.w_ff1);
                lg.b_ff1 += &dh1.sum_axis(Axis(0));
            }
            let dc = dh1.dot(&lw.w_ff1.t());
            dx += &layer_norm_backward(
                dc.view(),
                &lc.ln2,
                &lw.ln2_gain,
                scope.base.then_some((&mut lg.ln2_gain, &mut lg.ln2_bias)),
            );

            // attention branch
            if scope.base {
                general_mat_mul(1.0, &lc.attn.t(), &dx, 1.0, &mut lg.w_o);
            }
            let d_attn = dx.dot(&lw.w_o.t());
            let mut dqkv = Array2::<f64>::zeros((len, 3 * d));
            for h in 0..cfg.n_heads {
                let q = lc.qkv.slice(s![.., h * dk..(h + 1) * dk]);
                let k = lc.qkv.slice(s![.., d + h * dk..d + (h + 1) * dk]);
                let v = lc.qkv.slice(s![.., 2 * d + h * dk..2 * d + (h + 1) * dk]);
                let p = &lc.probs[h];
                let d_o = d_attn.slice(s![.., h * dk..(h + 1) * dk]);
                let mut ds = d_o.dot(&v.t());
                for i in 0..len {
                    let mut row = ds.row_mut(i);
                    let prow = p.row(i);
                    let dot: f64 = (0..=i).map(|j| row[j] * prow[j]).sum();
                    for j in 0..=i {
                        row[j] = prow[j] * (row[j] - dot) * scale;
                    }
                    for j in i + 1..len {
                        row[j] = 0.0;
                    }
                }
                general_mat_mul(1.0, &ds, &k, 0.0, &mut dqkv.slice_mut(s![.., h * dk..(h + 1) * dk]));
                general_mat_mul(
                    1.0,
                    &ds.t(),
                    &q,
                    0.0,
                    &mut dqkv.slice_mut(s![.., d + h * dk..d + (h + 1) * dk]),
                );
                general_mat_mul(
                    1.0,
                    &p.t(),
                    &d_o,
                    0.0,
                    &mut dqkv.slice_mut(s![.., 2 * d + h * dk..2 * d + (h + 1) * dk]),
                );
            }
            if scope.base {
                general_mat_mul(1.0, &lc.a.t(), &dqkv, 1.0, &mut lg.w_qkv);
            }
            let mut da = dqkv.dot(&lw.w_qkv.t());

            if let Some(lora) = &self.lora {
                for (h, head) in lora.layers[li].iter().enumerate() {
                    let fused = matches!(head, HeadLora::Fused(_));
                    for (idx, ad) in head.adapters().iter().enumerate() {
                        let d_out = gather_blocks(&dqkv, &adapter_blocks(fused, idx, h, dk, d), dk);
                        let u = &lc.lora_u[h][idx];
                        let sc = ad.scale();
                        if scope.lora {
                            let lgr = grads.lora.as_mut().expect("lora grads allocated");
                            let gad = &mut lgr.layers[li][h].adapters_mut()[idx];
                            general_mat_mul(sc, &u.t(), &d_out, 1.0, &mut gad.b);
                            let du = d_out.dot(&ad.b.t()) * sc;
                            general_mat_mul(1.0, &lc.a.t(), &du, 1.0, &mut gad.a);
                            general_mat_mul(1.0, &du, &ad.a.t(), 1.0, &mut da);
                        } else {
                            let du = d_out.dot(&ad.b.t()) * sc;
                            general_mat_mul(1.0, &du, &ad.a.t(), 1.0, &mut da);
                        }
                    }
                }
            }
            let lg = &mut grads.base.layers[li];
            dx += &layer_norm_backward(
                da.view(),
                &lc.ln1,
                &lw.ln1_gain,
                scope.base.then_some((&mut lg.ln1_gain, &mut lg.ln1_bias)),
            );
        }

        if scope.base {
            scatter_rows(&mut grads.base.pos_embed, cache.positions.iter().copied(), dx.view());
        }
        dx
    }

    /// Merged weights for fast incremental inference.
    pub fn inference(&self) -> InferenceModel<'_> {
        let cfg = &self.config;
        let (d, dk) = (cfg.d_model, cfg.d_k);
        let qkv = self
            .base
            .layers
            .iter()
            .enumerate()
            .map(|(li, lw)| {
                let mut w = lw.w_qkv.clone();
                if let Some(lora) = &self.lora {
                    for (h, head) in lora.layers[li].iter().enumerate() {
                        let fused = matches!(head, HeadLora::Fused(_));
                        for (idx, ad) in head.adapters().iter().enumerate() {
                            let delta = ad.delta();
                            for (col, src) in adapter_blocks(fused, idx, h, dk, d) {
                                let mut dst = w.slice_mut(s![.., col..col + dk]);
                                dst += &delta.slice(s![.., src..src + dk]);
                            }
                        }
                    }
                }
                w
            })
            .collect();
        InferenceModel { model: self, qkv }
    }
}

fn gather_blocks(src: &Array2<f64>, blocks: &[(usize, usize)], dk: usize) -> Array2<f64> {
    let mut out = Array2::zeros((src.nrows(), blocks.len() * dk));
    for &(col, dst) in blocks {
        out.slice_mut(s![.., dst..dst + dk]).assign(&src.slice(s![.., col..col + dk]));
    }
    out
}

/// Decoder with LoRA folded into the query/key/value weights.
pub struct InferenceModel<'a> {
    model: &'a DecoderModel,
    qkv: Vec<Array2<f64>>,
}

/// Key/value cache for one sequence.
pub struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl InferenceModel<'_> {
    pub fn config(&self) -> &DecoderConfig {
        &self.model.config
    }

    pub fn token_embedding(&self, id: u32) -> ArrayView1<'_, f64> {
        self.model.base.tok_embed.row(id as usize)
    }

    pub fn new_state(&self) -> DecodeState {
        let n = self.model.config.n_layers;
        DecodeState {
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
        }
    }

    /// Appends one embedding row at the next position and returns its
    /// logits.
    pub fn step(&self, state: &mut DecodeState, embedding: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        self.step_at(state, embedding, state.len)
    }

    /// Appends one embedding row at position id `pos`.
    pub fn step_at(&self, state: &mut DecodeState, embedding: ArrayView1<'_, f64>, pos: usize) -> Result<Array1<f64>> {
        let cfg = &self.model.config;
        if pos >= cfg.max_positions {
            return Err(Error::SequenceTooLong {
                len: pos + 1,
                max: cfg.max_positions,
            });
        }
        let (d, dk) = (cfg.d_model, cfg.d_k);
        let scale = 1.0 / (dk as f64).sqrt();
        let base = &self.model.base;
        let mut x = &embedding + &base.pos_embed.row(pos);
        for (li, lw) in base.layers.iter().enumerate() {
            let a = layer_norm_row(x.view(), &lw.ln1_gain, &lw.ln1_bias);
            let qkv = a.dot(&self.qkv[li]);
            state.keys[li].extend(qkv.slice(s![d..2 * d]).iter());
            state.values[li].extend(qkv.slice(s![2 * d..]).iter());
            let n = state.len + 1;
            let keys = ArrayView2::from_shape((n, d), &state.keys[li]).expect("cache shape");
            let values = ArrayView2::from_shape((n, d), &state.values[li]).expect("cache shape");
            let mut attn = Array1::zeros(d);
            for h in 0..cfg.n_heads {
                let cols = h * dk..(h + 1) * dk;
                let q = qkv.slice(s![cols.clone()]);
                let mut scores = keys.slice(s![.., cols.clone()]).dot(&q) * scale;
                let max = scores.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                scores.mapv_inplace(|v| (v - max).exp());
                let sum = scores.sum();
                scores /= sum;
                attn.slice_mut(s![cols.clone()])
                    .assign(&values.slice(s![.., cols]).t().dot(&scores));
            }
            x += &attn.dot(&lw.w_o);
            let c = layer_norm_row(x.view(), &lw.ln2_gain, &lw.ln2_bias);
            let g = (c.dot(&lw.w_ff1) + &lw.b_ff1).mapv(gelu);
            x += &(g.dot(&lw.w_ff2) + &lw.b_ff2);
        }
        state.len += 1;
        let y = layer_norm_row(x.view(), &base.lnf_gain, &base.lnf_bias);
        Ok(y.dot(&base.w_out))
    }
}

/// Adds `grad` rows into the embedding table rows named by `ids`.
pub fn scatter_rows(table: &mut Array2<f64>, ids: impl IntoIterator<Item = usize>, grad: ArrayView2<'_, f64>) {
    for (id, row) in ids.into_iter().zip(grad.rows()) {
        let mut dst = table.row_mut(id);
        dst += &row;
    }
}
