use rand::Rng;

use super::config::ModelConfig;
use super::params::Bound;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const NORM_EPS: f64 = 1e-5;

/// Observations recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Trace {
    /// Output shape of every stage that ran, in order.
    pub stages: Vec<(&'static str, Vec<usize>)>,
    /// Softmax attention weights `[B, h, L, L]` of each encoder layer.
    pub attention: Vec<Var>,
}

/// One forward pass over bound parameters. Each stage method takes and
/// returns channels-last activations `[B, L, C]`.
pub struct Pass<'a, 'b, T, R: ?Sized> {
    pub g: &'a mut Graph<T>,
    params: &'a Bound<'b>,
    cfg: &'a ModelConfig,
    train: bool,
    rng: &'a mut R,
    pub trace: Trace,
}

impl<'a, 'b, T: Scalar, R: Rng + ?Sized> Pass<'a, 'b, T, R> {
    pub(crate) fn new(
        g: &'a mut Graph<T>,
        params: &'a Bound<'b>,
        cfg: &'a ModelConfig,
        train: bool,
        rng: &'a mut R,
    ) -> Self {
        Pass { g, params, cfg, train, rng, trace: Trace::default() }
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.params.get(name)
    }

    fn record(&mut self, stage: &'static str, v: Var) {
        let shape = self.g.shape(v).to_vec();
        self.trace.stages.push((stage, shape));
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        self.g.dropout(x, self.cfg.dropout, self.train, &mut *self.rng)
    }

    /// `x · W + b` over the last axis.
    fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        let y = self.g.matmul(x, w)?;
        self.g.add(y, b)
    }

    fn layer_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gain = self.p(&format!("{prefix}.gain"))?;
        let bias = self.p(&format!("{prefix}.bias"))?;
        let axis = self.g.shape(x).len() - 1;
        let n = self.g.layer_norm(x, axis, NORM_EPS)?;
        let n = self.g.mul(n, gain)?;
        self.g.add(n, bias)
    }

    fn expect_rank3(&self, x: Var, width: usize, stage: &str) -> Result<[usize; 3]> {
        match *self.g.shape(x) {
            [b, l, c] if c == width => Ok([b, l, c]),
            ref s => Err(Error::Shape(format!("{stage}: expected [B, L, {width}], got {s:?}"))),
        }
    }

    /// `[B, N, 2]` → `[B, ⌊N/2^K⌋, d]`: stride-2 convolutions, each followed by ReLU.
    pub fn feature_embedding(&mut self, x: Var) -> Result<Var> {
        let [_, n, _] = self.expect_rank3(x, 2, "feature embedding")?;
        if n >> self.cfg.conv_layers.min(63) == 0 {
            return Err(Error::Shape(format!(
                "frame length {n} too short for {} stride-2 layers",
                self.cfg.conv_layers
            )));
        }
        let pad = self.cfg.conv_padding();
        let mut h = x;
        for i in 0..self.cfg.conv_layers {
            let w = self.p(&format!("embed.conv{i}.weight"))?;
            let b = self.p(&format!("embed.conv{i}.bias"))?;
            h = self.g.conv1d(h, w, Some(b), 2, pad)?;
            h = self.g.relu(h)?;
        }
        self.record("feature_embedding", h);
        Ok(h)
    }

    /// Squeeze-and-excitation recalibration followed by dropout.
    pub fn se_block(&mut self, x: Var) -> Result<Var> {
        let [b, _, d] = self.expect_rank3(x, self.cfg.embed_dim, "se block")?;
        let z = self.g.mean(x, 1)?;
        let s = self.linear(z, "se.fc1")?;
        let s = self.g.relu(s)?;
        let s = self.linear(s, "se.fc2")?;
        let s = self.g.sigmoid(s)?;
        let s = self.g.reshape(s, &[b, 1, d])?;
        let y = self.g.mul(x, s)?;
        let y = self.dropout(y)?;
        self.record("se_block", y);
        Ok(y)
    }

    /// Mixes `[B, h, Lq, Lk]` maps across the head axis: output head `j`
    /// is `Σ_i mix[j, i] · input head i`.
    fn mix_heads(&mut self, maps: Var, mix: Var) -> Result<Var> {
        let shape = self.g.shape(maps).to_vec();
        let flat = self.g.reshape(maps, &[shape[0], shape[1], shape[2] * shape[3]])?;
        let mixed = self.g.matmul_left(mix, flat)?;
        self.g.reshape(mixed, &shape)
    }

    fn split_heads(&mut self, x: Var, b: usize, l: usize) -> Result<Var> {
        let (h, dt) = (self.cfg.heads, self.cfg.head_dim());
        let x = self.g.reshape(x, &[b, l, h, dt])?;
        self.g.transpose(x, 1, 2)
    }

    /// Multi-head self-attention with learnable head mixing before and
    /// after the softmax.
    pub fn talking_heads_attention(&mut self, x: Var, layer: usize) -> Result<Var> {
        let d = self.cfg.embed_dim;
        let [b, l, _] = self.expect_rank3(x, d, "attention")?;
        let p = format!("encoder.layer{layer}.attn");
        let q = self.linear(x, &format!("{p}.query"))?;
        let k = self.linear(x, &format!("{p}.key"))?;
        let v = self.linear(x, &format!("{p}.value"))?;
        let q = self.split_heads(q, b, l)?;
        let k = self.split_heads(k, b, l)?;
        let v = self.split_heads(v, b, l)?;
        let kt = self.g.transpose(k, 2, 3)?;
        let logits = self.g.matmul(q, kt)?;
        let mut logits = self.g.scale(logits, T::lit(1.0 / (self.cfg.head_dim() as f64).sqrt()))?;
        if self.cfg.use_talking_heads {
            let mix = self.p(&format!("{p}.mix_logits"))?;
            logits = self.mix_heads(logits, mix)?;
        }
        let weights = self.g.softmax(logits, 3)?;
        self.trace.attention.push(weights);
        let mut weights = weights;
        if self.cfg.use_talking_heads {
            let mix = self.p(&format!("{p}.mix_weights"))?;
            weights = self.mix_heads(weights, mix)?;
        }
        let weights = self.dropout(weights)?;
        let heads = self.g.matmul(weights, v)?;
        let heads = self.g.transpose(heads, 1, 2)?;
        let concat = self.g.reshape(heads, &[b, l, d])?;
        self.linear(concat, &format!("{p}.out"))
    }

    /// ReGLU feed-forward, or the width-matched ReLU MLP when disabled.
    pub fn reglu_ffn(&mut self, x: Var, layer: usize) -> Result<Var> {
        self.expect_rank3(x, self.cfg.embed_dim, "ffn")?;
        let p = format!("encoder.layer{layer}.ffn");
        if self.cfg.use_reglu {
            let gate = self.linear(x, &format!("{p}.gate"))?;
            let gate = self.g.relu(gate)?;
            let value = self.linear(x, &format!("{p}.value"))?;
            let h = self.g.mul(gate, value)?;
            self.linear(h, &format!("{p}.out"))
        } else {
            let h = self.linear(x, &format!("{p}.fc1"))?;
            let h = self.g.relu(h)?;
            self.linear(h, &format!("{p}.fc2"))
        }
    }

    /// Learnable positional encoding, then post-norm encoder layers.
    pub fn transformer_encoder(&mut self, x: Var) -> Result<Var> {
        self.expect_rank3(x, self.cfg.embed_dim, "transformer")?;
        let pos = self.p("encoder.pos")?;
        let mut h = self.g.embedding_add(x, pos)?;
        for layer in 0..self.cfg.transformer_layers {
            let a = self.talking_heads_attention(h, layer)?;
            let r = self.g.add(h, a)?;
            h = self.layer_norm(r, &format!("encoder.layer{layer}.norm1"))?;
            let f = self.reglu_ffn(h, layer)?;
            let f = self.dropout(f)?;
            let r = self.g.add(h, f)?;
            h = self.layer_norm(r, &format!("encoder.layer{layer}.norm2"))?;
        }
        self.record("transformer_encoder", h);
        Ok(h)
    }

    /// Stacked unidirectional LSTMs with zero initial state; gate order i, f, g, o.
    pub fn lstm_stack(&mut self, x: Var) -> Result<Var> {
        let [b, l, _] = self.expect_rank3(x, self.cfg.embed_dim, "lstm")?;
        let hd = self.cfg.lstm_hidden;
        let mut seq = x;
        for layer in 0..self.cfg.lstm_layers {
            let p = format!("lstm.layer{layer}");
            let w_ih = self.p(&format!("{p}.w_ih"))?;
            let w_hh = self.p(&format!("{p}.w_hh"))?;
            let b_ih = self.p(&format!("{p}.b_ih"))?;
            let b_hh = self.p(&format!("{p}.b_hh"))?;
            let proj = self.g.matmul(seq, w_ih)?;
            let proj = self.g.add(proj, b_ih)?;
            let proj = self.g.add(proj, b_hh)?;
            let mut state: Option<(Var, Var)> = None;
            let mut outputs = Vec::with_capacity(l);
            for t in 0..l {
                let z = self.g.slice(proj, 1, t, t + 1)?;
                let mut z = self.g.reshape(z, &[b, 4 * hd])?;
                if let Some((h, _)) = state {
                    let rec = self.g.matmul(h, w_hh)?;
                    z = self.g.add(z, rec)?;
                }
                let hc = self.g.lstm_cell(z, state.map(|(_, c)| c))?;
                let h = self.g.slice(hc, 1, 0, hd)?;
                let c = self.g.slice(hc, 1, hd, 2 * hd)?;
                outputs.push(self.g.reshape(h, &[b, 1, hd])?);
                state = Some((h, c));
            }
            seq = self.g.concat(&outputs, 1)?;
        }
        self.record("lstm_stack", seq);
        Ok(seq)
    }

    /// Dense layers on the last timestep; returns raw logits `[B, classes]`.
    pub fn classifier(&mut self, x: Var) -> Result<Var> {
        let width = self.cfg.head_input();
        let [b, l, _] = self.expect_rank3(x, width, "classifier")?;
        let last = self.g.slice(x, 1, l - 1, l)?;
        let mut h = self.g.reshape(last, &[b, width])?;
        let layers = self.cfg.classifier_hidden.len() + 1;
        for i in 0..layers {
            h = self.linear(h, &format!("head.fc{i}"))?;
            if i + 1 < layers {
                h = self.g.relu(h)?;
            }
        }
        self.record("classifier", h);
        Ok(h)
    }

    /// Full composition; disabled stages pass activations through.
    pub fn forward(&mut self, x: Var) -> Result<Var> {
        let mut h = self.feature_embedding(x)?;
        if self.cfg.use_se {
            h = self.se_block(h)?;
        }
        if self.cfg.use_transformer {
            h = self.transformer_encoder(h)?;
        }
        if self.cfg.use_lstm {
            h = self.lstm_stack(h)?;
        }
        self.classifier(h)
    }
}
