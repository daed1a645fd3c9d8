use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::layout;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCost {
    pub stage: String,
    pub params: usize,
    pub macs: usize,
}

/// Per-frame analytic cost, one multiply-accumulate per weight connection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub params: usize,
    pub macs: usize,
    pub stages: Vec<StageCost>,
}

const STAGES: [(&str, &str); 5] = [
    ("feature_embedding", "embed."),
    ("se_block", "se."),
    ("transformer_encoder", "encoder."),
    ("lstm_stack", "lstm."),
    ("classifier", "head."),
];

fn stage_macs(cfg: &ModelConfig, stage: &str) -> usize {
    let (d, l) = (cfg.embed_dim, cfg.seq_len());
    match stage {
        "feature_embedding" => {
            let mut len = cfg.input_len;
            let mut total = 0;
            for i in 0..cfg.conv_layers {
                len /= 2;
                let c_in = if i == 0 { 2 } else { d };
                total += len * d * c_in * cfg.kernel_size;
            }
            total
        }
        "se_block" if cfg.use_se => 2 * d * (d / cfg.se_reduction),
        "transformer_encoder" if cfg.use_transformer => {
            let h = cfg.heads;
            let projections = 4 * l * d * d;
            let scores = 2 * l * l * d;
            let mixing = if cfg.use_talking_heads { 2 * l * l * h * h } else { 0 };
            let ffn = if cfg.use_reglu {
                l * 3 * d * cfg.ffn_dim
            } else {
                l * 2 * d * cfg.mlp_hidden()
            };
            cfg.transformer_layers * (projections + scores + mixing + ffn)
        }
        "lstm_stack" if cfg.use_lstm => {
            let hd = cfg.lstm_hidden;
            (0..cfg.lstm_layers)
                .map(|i| {
                    let d_in = if i == 0 { d } else { hd };
                    l * 4 * hd * (d_in + hd)
                })
                .sum()
        }
        "classifier" => {
            let mut width = cfg.head_input();
            let mut total = 0;
            for &w in cfg.classifier_hidden.iter().chain([&cfg.num_classes]) {
                total += width * w;
                width = w;
            }
            total
        }
        _ => 0,
    }
}

pub fn complexity(cfg: &ModelConfig) -> Complexity {
    let specs = layout(cfg);
    let stages: Vec<StageCost> = STAGES
        .iter()
        .map(|&(stage, prefix)| StageCost {
            stage: stage.to_string(),
            params: specs.iter().filter(|s| s.name.starts_with(prefix)).map(|s| s.numel()).sum(),
            macs: stage_macs(cfg, stage),
        })
        .collect();
    Complexity {
        params: stages.iter().map(|s| s.params).sum(),
        macs: stages.iter().map(|s| s.macs).sum(),
        stages,
    }
}

/// Trainable scalar count.
pub fn count_params(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(|s| s.numel()).sum()
}

/// Multiply-accumulates for one frame.
pub fn count_macs(cfg: &ModelConfig) -> usize {
    STAGES.iter().map(|&(stage, _)| stage_macs(cfg, stage)).sum()
}
