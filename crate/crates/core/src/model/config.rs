use crate::vocab::{INPUT_LEN, TARGET_LEN, VOCAB_SIZE};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub d_ffn: usize,
    pub dropout_rate: f64,
    pub input_len: usize,
    pub output_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: VOCAB_SIZE,
            d_model: 64,
            n_heads: 2,
            n_blocks: 2,
            d_ffn: 256,
            dropout_rate: 0.2,
            input_len: INPUT_LEN,
            output_len: TARGET_LEN,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_model: 8,
            d_ffn: 16,
            n_blocks: 1,
            dropout_rate: 0.0,
            ..ModelConfig::default()
        }
    }

    pub fn seq_len(&self) -> usize {
        self.input_len + self.output_len
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.vocab_size != VOCAB_SIZE {
            return Err(format!("vocab_size must be {VOCAB_SIZE}"));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ffn == 0 || self.n_blocks == 0 {
            return Err("d_ffn and n_blocks must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(format!("dropout rate {} not in [0, 1)", self.dropout_rate));
        }
        if self.input_len == 0 || self.output_len == 0 {
            return Err("input_len and output_len must be positive".into());
        }
        Ok(())
    }
}
