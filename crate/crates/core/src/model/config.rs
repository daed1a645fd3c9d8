use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters. Defaults are the N = 128 configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Frame length `N`.
    pub input_len: usize,
    /// Number of stride-2 convolutions in the feature embedding.
    pub conv_layers: usize,
    pub embed_dim: usize,
    /// Convolution kernel width; must be even.
    pub kernel_size: usize,
    pub se_reduction: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    pub num_classes: usize,
    /// Hidden widths of the classifier head; the output layer is appended.
    pub classifier_hidden: Vec<usize>,
    pub dropout: f64,
    pub use_se: bool,
    pub use_transformer: bool,
    pub use_lstm: bool,
    pub use_talking_heads: bool,
    pub use_reglu: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 128,
            conv_layers: 2,
            embed_dim: 64,
            kernel_size: 4,
            se_reduction: 4,
            transformer_layers: 2,
            heads: 8,
            ffn_dim: 128,
            lstm_layers: 4,
            lstm_hidden: 64,
            num_classes: 11,
            classifier_hidden: vec![128, 64],
            dropout: 0.1,
            use_se: true,
            use_transformer: true,
            use_lstm: true,
            use_talking_heads: true,
            use_reglu: true,
        }
    }
}

impl ModelConfig {
    /// The N = 1024 configuration (four embedding convolutions).
    pub fn long_frames() -> Self {
        ModelConfig { input_len: 1024, conv_layers: 4, num_classes: 24, ..Self::default() }
    }

    /// Sequence length after the embedding, `⌊N / 2^K⌋`.
    pub fn seq_len(&self) -> usize {
        if self.conv_layers >= usize::BITS as usize {
            return 0;
        }
        self.input_len >> self.conv_layers
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads.max(1)
    }

    /// Padding that makes each stride-2 layer halve its input length.
    pub fn conv_padding(&self) -> usize {
        self.kernel_size / 2 - 1
    }

    /// Hidden width of the plain MLP used when ReGLU is disabled, sized to
    /// match the ReGLU parameter count.
    pub fn mlp_hidden(&self) -> usize {
        (1.5 * self.ffn_dim as f64).round() as usize
    }

    /// Width of the features reaching the classifier.
    pub fn head_input(&self) -> usize {
        if self.use_lstm {
            self.lstm_hidden
        } else {
            self.embed_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.conv_layers == 0 {
            return bad("conv_layers must be >= 1".into());
        }
        if self.seq_len() == 0 {
            return bad(format!(
                "input length {} too short for {} stride-2 layers (L = 0)",
                self.input_len, self.conv_layers
            ));
        }
        if self.kernel_size < 2 || self.kernel_size % 2 != 0 {
            return bad(format!("kernel_size {} must be even and >= 2", self.kernel_size));
        }
        if self.embed_dim == 0 || self.num_classes == 0 {
            return bad("embed_dim and num_classes must be >= 1".into());
        }
        if self.use_se && (self.se_reduction == 0 || self.embed_dim % self.se_reduction != 0) {
            return bad(format!(
                "embed_dim {} not divisible by se_reduction {}",
                self.embed_dim, self.se_reduction
            ));
        }
        if self.use_transformer {
            if self.heads == 0 || self.embed_dim % self.heads != 0 {
                return bad(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
            }
            if self.transformer_layers > 0 && self.ffn_dim == 0 {
                return bad("ffn_dim must be >= 1".into());
            }
        }
        if self.use_lstm && self.lstm_layers > 0 && self.lstm_hidden == 0 {
            return bad("lstm_hidden must be >= 1".into());
        }
        if self.use_lstm && self.lstm_layers == 0 && self.lstm_hidden != self.embed_dim {
            return bad(format!(
                "an empty LSTM stack passes width {} through but lstm_hidden is {}",
                self.embed_dim, self.lstm_hidden
            ));
        }
        if self.classifier_hidden.contains(&0) {
            return bad("classifier hidden widths must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        Ok(())
    }
}
