//! Post-norm transformer encoder with hand-written forward and backward passes.
//!
//! Weights are generic over [`Real`] so the same code trains in `f32` and is
//! checked against finite differences in `f64`.

mod model;

pub use model::{
    backward_classify, backward_mlm, classify_logits, forward_classify, forward_mlm, Batch, ForwardOutput,
    Gradients, PassOptions, IGNORE_INDEX,
};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Real, Tensor};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
    pub layer_norm_epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::tokenize::DEFAULT_VOCAB_SIZE,
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            d_ff: 512,
            max_positions: crate::tokenize::DEFAULT_MAX_LEN,
            dropout_rate: 0.1,
            layer_norm_epsilon: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("model.{name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "model.d_model {} is not divisible by model.n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "model.dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.layer_norm_epsilon.is_nan() || self.layer_norm_epsilon <= 0.0 {
            return Err(Error::InvalidArgument("model.layer_norm_epsilon must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormWeights<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerNormWeights<T> {
    fn new(d: usize) -> Self {
        LayerNormWeights {
            gain: Tensor::full(&[d], T::one()),
            bias: Tensor::zeros(&[d]),
        }
    }
}

/// Projection matrices are stored `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
    pub ln1: LayerNormWeights<T>,
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    pub ln2: LayerNormWeights<T>,
}

/// Encoder parameters. The MLM output projection is `tok_emb` itself
/// (transposed), so there is no separate decoder matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T> {
    pub config: ModelConfig,
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_ln: LayerNormWeights<T>,
    pub mlm_bias: Tensor<T>,
}

/// First-token pooling followed by a linear projection to the label space.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ClassifierHead<T> {
    pub fn zeros(d_model: usize, n_labels: usize) -> Self {
        ClassifierHead {
            weight: Tensor::zeros(&[d_model, n_labels]),
            bias: Tensor::zeros(&[n_labels]),
        }
    }

    pub fn n_labels(&self) -> usize {
        self.bias.len()
    }

    pub fn init(d_model: usize, n_labels: usize, seed: u64) -> Self {
        let mut head = Self::zeros(d_model, n_labels);
        let mut r = rng::stream(seed, rng::HEAD_INIT);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        for x in head.weight.data.iter_mut() {
            *x = T::of(normal.sample(&mut r));
        }
        head
    }

    pub fn named(&self) -> Vec<(String, &Tensor<T>, bool)> {
        vec![
            ("head.weight".into(), &self.weight, true),
            ("head.bias".into(), &self.bias, false),
        ]
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        vec![
            ("head.weight".into(), &mut self.weight, true),
            ("head.bias".into(), &mut self.bias, false),
        ]
    }

    pub fn cast<U: Real>(&self) -> ClassifierHead<U> {
        ClassifierHead {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Real> EncoderWeights<T> {
    /// Zero-initialized weights with every layer-norm gain also zero; used as a
    /// gradient accumulator.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut w = Self::with_unit_norms(config);
        w.for_each_mut(|_, t, _| t.fill(T::zero()));
        w
    }

    fn with_unit_norms(config: &ModelConfig) -> Self {
        let (v, d, f, p) = (config.vocab_size, config.d_model, config.d_ff, config.max_positions);
        let layer = || LayerWeights {
            wq: Tensor::zeros(&[d, d]),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::zeros(&[d, d]),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::zeros(&[d, d]),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::zeros(&[d, d]),
            bo: Tensor::zeros(&[d]),
            ln1: LayerNormWeights::new(d),
            w1: Tensor::zeros(&[d, f]),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::zeros(&[f, d]),
            b2: Tensor::zeros(&[d]),
            ln2: LayerNormWeights::new(d),
        };
        EncoderWeights {
            config: config.clone(),
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[p, d]),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            final_ln: LayerNormWeights::new(d),
            mlm_bias: Tensor::zeros(&[v]),
        }
    }

    /// Parameters in canonical order as `(name, tensor, weight_decay)`.
    /// Biases and layer-norm parameters are exempt from weight decay.
    pub fn named(&self) -> Vec<(String, &Tensor<T>, bool)> {
        let mut out = vec![
            ("tok_emb".to_string(), &self.tok_emb, true),
            ("pos_emb".to_string(), &self.pos_emb, true),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                (p("attn.q.weight"), &l.wq, true),
                (p("attn.q.bias"), &l.bq, false),
                (p("attn.k.weight"), &l.wk, true),
                (p("attn.k.bias"), &l.bk, false),
                (p("attn.v.weight"), &l.wv, true),
                (p("attn.v.bias"), &l.bv, false),
                (p("attn.o.weight"), &l.wo, true),
                (p("attn.o.bias"), &l.bo, false),
                (p("ln1.gain"), &l.ln1.gain, false),
                (p("ln1.bias"), &l.ln1.bias, false),
                (p("ffn.w1"), &l.w1, true),
                (p("ffn.b1"), &l.b1, false),
                (p("ffn.w2"), &l.w2, true),
                (p("ffn.b2"), &l.b2, false),
                (p("ln2.gain"), &l.ln2.gain, false),
                (p("ln2.bias"), &l.ln2.bias, false),
            ]);
        }
        out.extend([
            ("final_ln.gain".to_string(), &self.final_ln.gain, false),
            ("final_ln.bias".to_string(), &self.final_ln.bias, false),
            ("mlm_bias".to_string(), &self.mlm_bias, false),
        ]);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>, bool)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb, true),
            ("pos_emb".to_string(), &mut self.pos_emb, true),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.extend([
                (p("attn.q.weight"), &mut l.wq, true),
                (p("attn.q.bias"), &mut l.bq, false),
                (p("attn.k.weight"), &mut l.wk, true),
                (p("attn.k.bias"), &mut l.bk, false),
                (p("attn.v.weight"), &mut l.wv, true),
                (p("attn.v.bias"), &mut l.bv, false),
                (p("attn.o.weight"), &mut l.wo, true),
                (p("attn.o.bias"), &mut l.bo, false),
                (p("ln1.gain"), &mut l.ln1.gain, false),
                (p("ln1.bias"), &mut l.ln1.bias, false),
                (p("ffn.w1"), &mut l.w1, true),
                (p("ffn.b1"), &mut l.b1, false),
                (p("ffn.w2"), &mut l.w2, true),
                (p("ffn.b2"), &mut l.b2, false),
                (p("ln2.gain"), &mut l.ln2.gain, false),
                (p("ln2.bias"), &mut l.ln2.bias, false),
            ]);
        }
        out.extend([
            ("final_ln.gain".to_string(), &mut self.final_ln.gain, false),
            ("final_ln.bias".to_string(), &mut self.final_ln.bias, false),
            ("mlm_bias".to_string(), &mut self.mlm_bias, false),
        ]);
        out
    }

    fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>, bool)) {
        for (name, t, decay) in self.named_mut() {
            f(&name, t, decay);
        }
    }

    /// Expected shape of every named tensor for this config.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        Self::with_unit_norms(config)
            .named()
            .into_iter()
            .map(|(n, t, _)| (n, t.shape.clone()))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t, _)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t, _)| t.all_finite())
    }

    pub fn cast<U: Real>(&self) -> EncoderWeights<U> {
        let mut out = EncoderWeights::<U>::with_unit_norms(&self.config);
        for ((_, dst, _), (_, src, _)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }
}

/// Deterministic initialization: projection and embedding entries are drawn
/// from N(0, 0.02²) on the `init` stream in canonical parameter order; biases
/// are 0 and layer-norm gains are 1.
pub fn init_weights<T: Real>(config: &ModelConfig, seed: u64) -> Result<EncoderWeights<T>> {
    config.validate()?;
    let mut w = EncoderWeights::with_unit_norms(config);
    let mut r = rng::stream(seed, rng::INIT);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    w.for_each_mut(|_, t, decay| {
        if decay {
            for x in t.data.iter_mut() {
                *x = T::of(normal.sample(&mut r));
            }
        }
    });
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 300,
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            max_positions: 12,
            dropout_rate: 0.1,
            layer_norm_epsilon: 1e-5,
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = init_weights::<f32>(&small(), 3).unwrap();
        let b = init_weights::<f32>(&small(), 3).unwrap();
        let c = init_weights::<f32>(&small(), 4).unwrap();
        let bits = |w: &EncoderWeights<f32>| -> Vec<u32> {
            w.named().iter().flat_map(|(_, t, _)| t.data.iter().map(|x| x.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn norms_and_biases_initialized_to_constants() {
        let w = init_weights::<f64>(&small(), 1).unwrap();
        for l in &w.layers {
            assert!(l.ln1.gain.data.iter().all(|&g| g == 1.0));
            assert!(l.ln2.gain.data.iter().all(|&g| g == 1.0));
            assert!(l.b1.data.iter().all(|&b| b == 0.0));
        }
        assert!(w.final_ln.gain.data.iter().all(|&g| g == 1.0));
        assert!(w.mlm_bias.data.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_sample_mean_within_three_sigma() {
        // 7813 × 128 ≈ 10⁶ entries; standard error of the mean is 0.02 / 1000
        let cfg = ModelConfig {
            vocab_size: 7813,
            d_model: 128,
            n_layers: 1,
            n_heads: 4,
            d_ff: 8,
            max_positions: 4,
            ..small()
        };
        let w = init_weights::<f64>(&cfg, 11).unwrap();
        let n = w.tok_emb.len() as f64;
        let mean = w.tok_emb.data.iter().sum::<f64>() / n;
        let sigma = INIT_STD / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3σ {}", 3.0 * sigma);
        let var = w.tok_emb.data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - INIT_STD).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = small();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn decay_excludes_biases_and_norms() {
        let w = init_weights::<f32>(&small(), 0).unwrap();
        for (name, _, decay) in w.named() {
            let exempt = name.ends_with("bias") || name.contains("ln") || name.ends_with("b1") || name.ends_with("b2");
            assert_eq!(decay, !exempt, "{name}");
        }
        assert_eq!(w.named().len(), 2 + 16 * 2 + 3);
    }
}
