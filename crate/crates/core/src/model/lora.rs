//! Low-rank adapters on the attention projections.
//!
//! Adapters are attached per head. A fused adapter maps `d_model -> r ->
//! 3 d_k` and its output is split into the head's query, key and value
//! columns; the separate variant keeps three `d_model -> r -> d_k` adapters.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::LoraConfig;

/// Update `(alpha / r) * (x A) B` with `A: d_in x r`, `B: r x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
    pub alpha: f64,
}

impl LoraAdapter {
    /// Gaussian `A`, zero `B`: the adapter starts as an exact no-op.
    pub fn new(d_in: usize, d_out: usize, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (d_in as f64).sqrt()).expect("finite std");
        Self {
            a: Array2::from_shape_simple_fn((d_in, rank), || normal.sample(rng)),
            b: Array2::zeros((rank, d_out)),
            alpha,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            a: Array2::zeros(self.a.raw_dim()),
            b: Array2::zeros(self.b.raw_dim()),
            alpha: self.alpha,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank() as f64
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `scale * A B`, the dense weight update.
    pub fn delta(&self) -> Array2<f64> {
        self.a.dot(&self.b) * self.scale()
    }

    /// Returns `(x A, scale * (x A) B)`; the first term is kept for backprop.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let u = x.dot(&self.a);
        let out = u.dot(&self.b) * self.scale();
        (u, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HeadLora {
    Fused(LoraAdapter),
    Separate([LoraAdapter; 3]),
}

impl HeadLora {
    pub fn new(d_model: usize, d_k: usize, config: &LoraConfig, rng: &mut ChaCha8Rng) -> Self {
        if config.fused_qkv {
            HeadLora::Fused(LoraAdapter::new(d_model, 3 * d_k, config.rank, config.alpha, rng))
        } else {
            HeadLora::Separate(std::array::from_fn(|_| {
                LoraAdapter::new(d_model, d_k, config.rank, config.alpha, rng)
            }))
        }
    }

    pub fn adapters(&self) -> &[LoraAdapter] {
        match self {
            HeadLora::Fused(a) => std::slice::from_ref(a),
            HeadLora::Separate(a) => a,
        }
    }

    pub fn adapters_mut(&mut self) -> &mut [LoraAdapter] {
        match self {
            HeadLora::Fused(a) => std::slice::from_mut(a),
            HeadLora::Separate(a) => a,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            HeadLora::Fused(a) => HeadLora::Fused(a.zeros_like()),
            HeadLora::Separate(a) => HeadLora::Separate(std::array::from_fn(|i| a[i].zeros_like())),
        }
    }

    pub fn param_count(&self) -> usize {
        self.adapters().iter().map(LoraAdapter::param_count).sum()
    }
}

/// Per-layer, per-head adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraWeights {
    pub config: LoraConfig,
    pub layers: Vec<Vec<HeadLora>>,
}

impl LoraWeights {
    pub fn new(n_layers: usize, n_heads: usize, d_model: usize, d_k: usize, config: LoraConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = (0..n_layers)
            .map(|_| (0..n_heads).map(|_| HeadLora::new(d_model, d_k, &config, &mut rng)).collect())
            .collect();
        Self { config, layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().map(HeadLora::zeros_like).collect())
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().flatten().map(HeadLora::param_count).sum()
    }
}

/// LoRA weights for one attention layer. Per head, fused:
/// `3 d_k r + r d_model`; separate: `3 (d_k r + r d_model)`.
pub fn lora_param_count(d_k: usize, n_heads: usize, d_model: usize, r: usize, fused: bool) -> usize {
    let per_head = if fused {
        3 * d_k * r + r * d_model
    } else {
        3 * (d_k * r + r * d_model)
    };
    n_heads * per_head
}

/// Percentage of learnable weights, rounded to two decimals.
pub fn trainable_fraction(learnable: u64, total: u64) -> f64 {
    assert!(learnable > 0 && learnable <= total, "need 0 < learnable <= total");
    let pct = 100.0 * learnable as f64 / total as f64;
    (pct * 100.0).round() / 100.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(lora_param_count(4, 1, 8, 2, true), 40);
        assert_eq!(lora_param_count(4, 1, 8, 2, false), 72);
        assert_eq!(lora_param_count(4, 3, 8, 2, true), 120);
    }

    #[test]
    fn fused_is_smaller_whenever_d_model_covers_d_k() {
        for d_k in 1..=64 {
            for d_model in d_k..=64 {
                for r in 1..=8 {
                    assert!(lora_param_count(d_k, 1, d_model, r, true) < lora_param_count(d_k, 1, d_model, r, false));
                }
            }
        }
    }

    #[test]
    fn published_fractions() {
        assert_eq!(trainable_fraction(218_234_880, 103_098_001_920), 0.21);
        assert_eq!(trainable_fraction(72_749_056, 7_539_687_424), 0.96);
        assert_eq!(trainable_fraction(12345, 12345), 100.0);
    }

    #[test]
    fn fresh_adapter_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = LoraAdapter::new(6, 9, 2, 4.0, &mut rng);
        assert_eq!(a.scale(), 2.0);
        assert!(a.delta().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_matches_dense_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = LoraAdapter::new(5, 4, 3, 6.0, &mut rng);
        a.b = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 + 1.0) * 0.1 - j as f64 * 0.05);
        let x = Array2::from_shape_fn((2, 5), |(i, j)| (i * 5 + j) as f64 * 0.1);
        let (_, out) = a.apply(x.view());
        let dense = x.dot(&a.delta());
        assert!((&out - &dense).iter().all(|v| v.abs() < 1e-12));
    }
}
