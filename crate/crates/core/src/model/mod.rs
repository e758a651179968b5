//! Adapter + decoder ASR model.
//!
//! Decoder input layout: `<bos>`, one row per stacked audio frame, then the
//! prompt and transcription tokens and `<eos>`.

pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod lora;
pub mod loss;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use config::{DecoderConfig, LoraConfig};
pub use decoder::{DecoderGrads, DecoderModel, GradScope, NamedTensors};
pub use lora::{lora_param_count, trainable_fraction};

use crate::audio::{project, AdapterWeights, StackedSequence};
use crate::error::{Error, Result};
use crate::prompt::TrainExample;
use crate::text::TokenId;

/// Which weights a training run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Adapter and every decoder weight.
    Full,
    /// Adapter and LoRA only; the base decoder stays frozen.
    AdapterLora,
}

impl TrainMode {
    pub fn scope(self) -> GradScope {
        match self {
            TrainMode::Full => GradScope { base: true, lora: true },
            TrainMode::AdapterLora => GradScope { base: false, lora: true },
        }
    }

    pub fn is_trainable(self, tensor_name: &str) -> bool {
        match self {
            TrainMode::Full => true,
            TrainMode::AdapterLora => tensor_name.starts_with("adapter.") || tensor_name.starts_with("lora."),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrModel {
    pub adapter: AdapterWeights,
    pub decoder: DecoderModel,
    /// Position id of the first transcription token. When set, the prompt
    /// is right-aligned against it, so transcription positions do not move
    /// with the keyword list length. `None` numbers rows contiguously.
    pub transcript_anchor: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsrGrads {
    pub adapter: Array2<f64>,
    pub decoder: DecoderGrads,
}

impl AsrGrads {
    pub fn zeros_for(model: &AsrModel) -> Self {
        Self {
            adapter: Array2::zeros(model.adapter.w.raw_dim()),
            decoder: DecoderGrads::zeros_for(&model.decoder),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub nll: f64,
    pub z: f64,
    pub total: f64,
}

impl NamedTensors for AsrModel {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = vec![(
            "adapter.w".to_string(),
            self.adapter.w.shape().to_vec(),
            self.adapter.w.as_slice().expect("standard layout"),
        )];
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = vec![(
            "adapter.w".to_string(),
            self.adapter.w.as_slice_mut().expect("standard layout"),
        )];
        t.extend(self.decoder.tensors_mut());
        t
    }
}

impl NamedTensors for AsrGrads {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut t = vec![(
            "adapter.w".to_string(),
            self.adapter.shape().to_vec(),
            self.adapter.as_slice().expect("standard layout"),
        )];
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut t = vec![(
            "adapter.w".to_string(),
            self.adapter.as_slice_mut().expect("standard layout"),
        )];
        t.extend(self.decoder.tensors_mut());
        t
    }
}

impl AsrModel {
    pub fn new(
        decoder: DecoderConfig,
        lora: Option<LoraConfig>,
        stack: usize,
        d_audio: usize,
        seed: u64,
    ) -> Result<Self> {
        let decoder = DecoderModel::new(decoder, lora, seed)?;
        let adapter = AdapterWeights::random(stack, d_audio, decoder.config.d_model, seed ^ 0xada);
        Ok(Self {
            adapter,
            decoder,
            transcript_anchor: None,
        })
    }

    pub fn with_transcript_anchor(mut self, anchor: Option<usize>) -> Self {
        self.transcript_anchor = anchor;
        self
    }

    /// Position ids for `<bos>`, `audio_len` audio rows, then `n_ids - 1`
    /// token rows of which the first `prefix_ids - 1` are prompt tokens.
    /// Without an anchor, or when the prefix already reaches it, positions
    /// are contiguous.
    pub fn positions(&self, audio_len: usize, prefix_ids: usize, n_ids: usize) -> Vec<usize> {
        let rows = n_ids + audio_len;
        let prefix_end = audio_len + prefix_ids;
        let shift = self.transcript_anchor.map_or(0, |a| a.saturating_sub(prefix_end));
        (0..rows)
            .map(|r| if r > audio_len { r + shift } else { r })
            .collect()
    }

    /// Position id of the first transcription token.
    pub fn transcript_start(&self, audio_len: usize, prefix_ids: usize) -> usize {
        let contiguous = audio_len + prefix_ids;
        self.transcript_anchor.map_or(contiguous, |a| a.max(contiguous))
    }

    fn example_positions(&self, example: &TrainExample) -> Vec<usize> {
        let prefix = example.loss_mask.iter().position(|&m| m).unwrap_or(example.token_ids.len());
        self.positions(example.audio_embed_count, prefix, example.token_ids.len())
    }

    pub fn param_count(&self) -> usize {
        self.adapter.param_count() + self.decoder.param_count()
    }

    pub fn trainable_param_count(&self, mode: TrainMode) -> usize {
        self.tensors()
            .iter()
            .filter(|(n, _, _)| mode.is_trainable(n))
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// Input embeddings for `<bos>`, the audio span, then `ids[1..]`.
    /// `ids[0]` must be the `<bos>` id.
    pub fn embed(&self, audio: &StackedSequence, ids: &[TokenId]) -> Result<Array2<f64>> {
        let audio_rows = project(audio, &self.adapter)?;
        let a = audio_rows.nrows();
        let d = self.decoder.config.d_model;
        let tok = &self.decoder.base.tok_embed;
        let vocab = tok.nrows();
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::InvalidTokenId {
                id: bad,
                vocab_size: vocab,
            });
        }
        let n = ids.len() + a;
        let mut e = Array2::zeros((n, d));
        if let Some(&bos) = ids.first() {
            e.row_mut(0).assign(&tok.row(bos as usize));
        }
        e.slice_mut(s![1..1 + a, ..]).assign(&audio_rows);
        for (i, &id) in ids.iter().enumerate().skip(1) {
            e.row_mut(i + a).assign(&tok.row(id as usize));
        }
        Ok(e)
    }

    /// Decoder rows whose logits predict a masked token, with the targets.
    fn loss_rows(example: &TrainExample) -> (Vec<usize>, Vec<TokenId>) {
        let a = example.audio_embed_count;
        example
            .token_ids
            .iter()
            .zip(&example.loss_mask)
            .enumerate()
            .skip(1)
            .filter(|(_, (_, &m))| m)
            .map(|(p, (&id, _))| (p + a - 1, id))
            .unzip()
    }

    /// Full-sequence logits.
    pub fn logits(&self, example: &TrainExample, audio: &StackedSequence) -> Result<Array2<f64>> {
        let e = self.embed(audio, &example.token_ids)?;
        self.decoder.forward_at(e.view(), &self.example_positions(example))
    }

    /// Masked transcription loss plus `z_coef` times the z-loss over the
    /// same rows; forward only.
    pub fn loss(&self, example: &TrainExample, audio: &StackedSequence, z_coef: f64) -> Result<LossParts> {
        check_audio(example, audio)?;
        let (rows, targets) = Self::loss_rows(example);
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        let e = self.embed(audio, &example.token_ids)?;
        let cache = self.decoder.forward_hidden_at(e.view(), &self.example_positions(example))?;
        let logits = cache.hidden.select(ndarray::Axis(0), &rows).dot(&self.decoder.base.w_out);
        let nll = loss::cross_entropy(logits.view(), &targets);
        let z = loss::z_loss(logits.view());
        Ok(LossParts {
            nll,
            z,
            total: nll + z_coef * z,
        })
    }

    /// Loss and gradients, accumulated into `grads` with weight `weight`.
    /// The adapter always receives its gradient.
    pub fn accumulate_grads(
        &self,
        example: &TrainExample,
        audio: &StackedSequence,
        z_coef: f64,
        weight: f64,
        scope: GradScope,
        grads: &mut AsrGrads,
    ) -> Result<LossParts> {
        check_audio(example, audio)?;
        let (rows, targets) = Self::loss_rows(example);
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        let e = self.embed(audio, &example.token_ids)?;
        let cache = self.decoder.forward_hidden_at(e.view(), &self.example_positions(example))?;
        let w_out = &self.decoder.base.w_out;
        let hidden_sel = cache.hidden.select(ndarray::Axis(0), &rows);
        let logits = hidden_sel.dot(w_out);
        let (nll, mut dlogits) = loss::cross_entropy_grad(logits.view(), &targets);
        let mut z = 0.0;
        if z_coef != 0.0 {
            let (zv, dz) = loss::z_loss_grad(logits.view());
            z = zv;
            dlogits.scaled_add(z_coef, &dz);
        }
        dlogits *= weight;

        if scope.base {
            ndarray::linalg::general_mat_mul(1.0, &hidden_sel.t(), &dlogits, 1.0, &mut grads.decoder.base.w_out);
        }
        let dsel = dlogits.dot(&w_out.t());
        let mut dhidden = Array2::zeros(cache.hidden.raw_dim());
        for (k, &r) in rows.iter().enumerate() {
            dhidden.row_mut(r).assign(&dsel.row(k));
        }
        let de = self.decoder.backward(&cache, dhidden.view(), &mut grads.decoder, scope);

        let a = audio.len();
        ndarray::linalg::general_mat_mul(
            1.0,
            &audio.frames.t(),
            &de.slice(s![1..1 + a, ..]),
            1.0,
            &mut grads.adapter,
        );
        if scope.base {
            let tok = &mut grads.decoder.base.tok_embed;
            let mut row0 = tok.row_mut(example.token_ids[0] as usize);
            row0 += &de.row(0);
            let ids = example.token_ids[1..].iter().map(|&id| id as usize);
            decoder::scatter_rows(tok, ids, de.slice(s![1 + a.., ..]));
        }
        Ok(LossParts {
            nll,
            z,
            total: nll + z_coef * z,
        })
    }
}

fn check_audio(example: &TrainExample, audio: &StackedSequence) -> Result<()> {
    if example.audio_embed_count != audio.len() {
        return Err(Error::DimensionMismatch {
            expected: example.audio_embed_count,
            actual: audio.len(),
        });
    }
    Ok(())
}
