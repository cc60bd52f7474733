use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use super::real::Real;

/// A dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub attn_norm_scale: Tensor<T>,
    pub attn_norm_offset: Tensor<T>,
    pub w_query: Tensor<T>,
    pub w_key: Tensor<T>,
    pub w_value: Tensor<T>,
    pub w_attn_out: Tensor<T>,
    pub ffn_norm_scale: Tensor<T>,
    pub ffn_norm_offset: Tensor<T>,
    pub w_ffn_in: Tensor<T>,
    pub b_ffn_in: Tensor<T>,
    pub w_ffn_out: Tensor<T>,
    pub b_ffn_out: Tensor<T>,
}

/// All learnable weights. Projections are stored `[in, out]` so a layer is
/// `x · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub token_embedding: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_norm_scale: Tensor<T>,
    pub final_norm_offset: Tensor<T>,
    pub w_vocab: Tensor<T>,
}

/// Whether a named parameter belongs to a normalization layer.
pub fn is_norm_param(name: &str) -> bool {
    name.contains("norm")
}

impl<T: Real> ModelParams<T> {
    /// Parameters of the right shapes, all equal to `value` except norm scales,
    /// which are one when `unit_norm_scale` is set.
    fn uniform(config: ModelConfig, value: T, unit_norm_scale: bool) -> Self {
        let d = config.d_model;
        let f = config.d_ffn;
        let scale = if unit_norm_scale { T::one() } else { value };
        let t = |shape: &[usize]| Tensor::filled(shape, value);
        let s = |shape: &[usize]| Tensor::filled(shape, scale);
        ModelParams {
            config,
            token_embedding: t(&[config.vocab_size, d]),
            blocks: (0..config.n_blocks)
                .map(|_| BlockParams {
                    attn_norm_scale: s(&[d]),
                    attn_norm_offset: t(&[d]),
                    w_query: t(&[d, d]),
                    w_key: t(&[d, d]),
                    w_value: t(&[d, d]),
                    w_attn_out: t(&[d, d]),
                    ffn_norm_scale: s(&[d]),
                    ffn_norm_offset: t(&[d]),
                    w_ffn_in: t(&[d, f]),
                    b_ffn_in: t(&[f]),
                    w_ffn_out: t(&[f, d]),
                    b_ffn_out: t(&[d]),
                })
                .collect(),
            final_norm_scale: s(&[d]),
            final_norm_offset: t(&[d]),
            w_vocab: t(&[d, config.vocab_size]),
        }
    }

    /// Every parameter (norm scales included) set to zero.
    pub fn zeros(config: ModelConfig) -> Self {
        Self::uniform(config, T::zero(), false)
    }

    /// Gaussian weights with standard deviation `1/sqrt(d_model)`, zero
    /// biases and offsets, unit norm scales.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut params = Self::uniform(config, T::zero(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (config.d_model as f64).sqrt()).unwrap();
        for (name, tensor) in params.named_mut() {
            if tensor.shape.len() == 2 {
                debug_assert!(!is_norm_param(&name));
                for x in &mut tensor.data {
                    *x = T::lit(normal.sample(&mut rng));
                }
            }
        }
        params
    }

    /// Same shapes, all zeros; used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Parameters in canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("token_embedding".to_string(), &self.token_embedding)];
        for (i, b) in self.blocks.iter().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.extend([
                (p("attn_norm.scale"), &b.attn_norm_scale),
                (p("attn_norm.offset"), &b.attn_norm_offset),
                (p("attn.query"), &b.w_query),
                (p("attn.key"), &b.w_key),
                (p("attn.value"), &b.w_value),
                (p("attn.out"), &b.w_attn_out),
                (p("ffn_norm.scale"), &b.ffn_norm_scale),
                (p("ffn_norm.offset"), &b.ffn_norm_offset),
                (p("ffn.in.weight"), &b.w_ffn_in),
                (p("ffn.in.bias"), &b.b_ffn_in),
                (p("ffn.out.weight"), &b.w_ffn_out),
                (p("ffn.out.bias"), &b.b_ffn_out),
            ]);
        }
        out.push(("final_norm.scale".into(), &self.final_norm_scale));
        out.push(("final_norm.offset".into(), &self.final_norm_offset));
        out.push(("vocab_projection".into(), &self.w_vocab));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![("token_embedding".to_string(), &mut self.token_embedding)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = |n: &str| format!("blocks.{i}.{n}");
            out.extend([
                (p("attn_norm.scale"), &mut b.attn_norm_scale),
                (p("attn_norm.offset"), &mut b.attn_norm_offset),
                (p("attn.query"), &mut b.w_query),
                (p("attn.key"), &mut b.w_key),
                (p("attn.value"), &mut b.w_value),
                (p("attn.out"), &mut b.w_attn_out),
                (p("ffn_norm.scale"), &mut b.ffn_norm_scale),
                (p("ffn_norm.offset"), &mut b.ffn_norm_offset),
                (p("ffn.in.weight"), &mut b.w_ffn_in),
                (p("ffn.in.bias"), &mut b.b_ffn_in),
                (p("ffn.out.weight"), &mut b.w_ffn_out),
                (p("ffn.out.bias"), &mut b.b_ffn_out),
            ]);
        }
        out.push(("final_norm.scale".into(), &mut self.final_norm_scale));
        out.push(("final_norm.offset".into(), &mut self.final_norm_offset));
        out.push(("vocab_projection".into(), &mut self.w_vocab));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named()
            .iter()
            .all(|(_, t)| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(self.config);
        for ((_, dst), (_, src)) in out.named_mut().into_iter().zip(self.named()) {
            *dst = src.cast();
        }
        out
    }
}
