//! Synthetic acoustic features, frame stacking and the linear adapter that
//! maps stacked frames into the decoder embedding space.

use ndarray::{s, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lexicon::{SyntheticLexicon, SILENCE};

pub const DEFAULT_STACK: usize = 4;

/// `T x d_audio` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f64>,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::EmptyTranscription);
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn d_audio(&self) -> usize {
        self.frames.ncols()
    }
}

/// `ceil(T/k) x (k * d_audio)` matrix of stacked frames.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSequence {
    pub frames: Array2<f64>,
    pub k: usize,
}

impl StackedSequence {
    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.frames.ncols()
    }
}

/// One one-hot frame per code symbol plus a silence frame after every word,
/// with i.i.d. Gaussian noise. Deterministic given `seed`.
pub fn synth_features(
    transcription: &str,
    lexicon: &SyntheticLexicon,
    noise_sigma: f64,
    seed: u64,
) -> Result<FeatureSequence> {
    let codes = lexicon.segment(transcription)?;
    if codes.is_empty() {
        return Err(Error::EmptyTranscription);
    }
    let symbols: Vec<u8> = codes
        .iter()
        .flat_map(|c| c.iter().copied().chain(std::iter::once(SILENCE)))
        .collect();
    Ok(FeatureSequence {
        frames: one_hot_frames(&symbols, lexicon.alphabet_size, noise_sigma, seed),
    })
}

pub fn one_hot_frames(symbols: &[u8], alphabet_size: usize, noise_sigma: f64, seed: u64) -> Array2<f64> {
    let mut frames = Array2::zeros((symbols.len(), alphabet_size));
    for (t, &s) in symbols.iter().enumerate() {
        frames[[t, s as usize]] = 1.0;
    }
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        frames.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    frames
}

/// Concatenates groups of `k` consecutive frames; the last group is
/// zero-padded.
pub fn stack_frames(fs: &FeatureSequence, k: usize) -> StackedSequence {
    assert!(k >= 1, "stack factor must be positive");
    let (t, d) = fs.frames.dim();
    let n = t.div_ceil(k);
    let mut out = Array2::zeros((n, k * d));
    for (i, row) in fs.frames.rows().into_iter().enumerate() {
        let (g, j) = (i / k, i % k);
        out.slice_mut(s![g, j * d..(j + 1) * d]).assign(&row);
    }
    StackedSequence { frames: out, k }
}

/// Bias-free linear projection from stacked frames to `d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterWeights {
    /// `(k * d_audio) x d_model`
    pub w: Array2<f64>,
    pub k: usize,
}

impl AdapterWeights {
    pub fn zeros(k: usize, d_audio: usize, d_model: usize) -> Self {
        Self {
            w: Array2::zeros((k * d_audio, d_model)),
            k,
        }
    }

    pub fn random(k: usize, d_audio: usize, d_model: usize, seed: u64) -> Self {
        let fan_in = (k * d_audio) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / fan_in.sqrt()).expect("finite std");
        Self {
            w: Array2::from_shape_simple_fn((k * d_audio, d_model), || normal.sample(&mut rng)),
            k,
        }
    }

    pub fn d_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.w.len()
    }
}

/// Parameter count of the adapter: `(k * d_audio) * d_model`.
pub fn adapter_param_count(k: usize, d_audio: usize, d_model: usize) -> usize {
    k * d_audio * d_model
}

pub fn project(ss: &StackedSequence, aw: &AdapterWeights) -> Result<Array2<f64>> {
    if ss.width() != aw.d_in() {
        return Err(Error::DimensionMismatch {
            expected: aw.d_in(),
            actual: ss.width(),
        });
    }
    Ok(ss.frames.dot(&aw.w))
}

/// Gradient of a scalar loss w.r.t. the adapter weights, given the gradient
/// w.r.t. the projected rows.
pub fn project_weight_grad(ss: &StackedSequence, d_out: ArrayView2<'_, f64>) -> Array2<f64> {
    ss.frames.t().dot(&d_out)
}
