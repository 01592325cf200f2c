use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use super::attention::{linear_params, Attention, AttentionCache, AttentionMask};
use super::{AgentAwareAttention, ModelConfig, Mode, MultiHeadAttention, Variant};
use crate::error::{Error, Result};
use crate::nn::{dropout_backward, relu, relu_backward, DropoutMask, LayerNorm, LayerNormCache, Linear};
use crate::scene::{PositionalEncoding, SceneView};
use crate::tensor::Matrix;

/// Attention, add & norm, feed-forward, add & norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: Attention,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

pub(crate) struct BlockCache {
    attn: AttentionCache,
    drop1: DropoutMask,
    norm1: LayerNormCache,
    h1: Matrix,
    z1: Matrix,
    u: Matrix,
    drop2: DropoutMask,
    norm2: LayerNormCache,
}

pub(crate) fn new_attention<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Attention> {
    Ok(match config.variant {
        Variant::AgentAware => Attention::AgentAware(AgentAwareAttention::new(config.d_model, rng)),
        Variant::MultiHead => {
            Attention::MultiHead(MultiHeadAttention::new(config.d_model, config.n_heads, rng)?)
        }
    })
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = config.d_model;
        Ok(Self {
            attention: new_attention(config, rng)?,
            norm1: LayerNorm::new(d),
            ff1: Linear::new(d, config.d_ff, rng),
            ff2: Linear::new(config.d_ff, d, rng),
            norm2: LayerNorm::new(d),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            attention: self.attention.zeros_like(),
            norm1: LayerNorm::zeros(self.norm1.dim()),
            ff1: Linear::zeros(self.ff1.inputs(), self.ff1.outputs()),
            ff2: Linear::zeros(self.ff2.inputs(), self.ff2.outputs()),
            norm2: LayerNorm::zeros(self.norm2.dim()),
        }
    }

    /// One block with queries `xq` attending to `xkv`; the residual path
    /// follows the queries.
    pub(crate) fn forward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
        mode: &mut Mode<'_>,
    ) -> Result<(Matrix, BlockCache)> {
        let (a, attn) = self.attention.forward(xq, xkv, mask)?;
        let (mut r1, drop1) = mode.dropout(&a);
        r1.add_assign(xq)?;
        let (h1, norm1) = self.norm1.forward(&r1)?;
        let z1 = self.ff1.forward(&h1)?;
        let u = relu(&z1);
        let f = self.ff2.forward(&u)?;
        let (mut r2, drop2) = mode.dropout(&f);
        r2.add_assign(&h1)?;
        let (h2, norm2) = self.norm2.forward(&r2)?;
        Ok((
            h2,
            BlockCache {
                attn,
                drop1,
                norm1,
                h1,
                z1,
                u,
                drop2,
                norm2,
            },
        ))
    }

    /// Returns `(d xq, d xkv)`.
    pub(crate) fn backward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
        cache: &BlockCache,
        d_out: &Matrix,
        grad: &mut EncoderLayer,
    ) -> Result<(Matrix, Matrix)> {
        let dr2 = self.norm2.backward(&cache.norm2, d_out, &mut grad.norm2);
        let df = dropout_backward(&cache.drop2, &dr2);
        let du = self.ff2.backward(&cache.u, &df, &mut grad.ff2)?;
        let dz1 = relu_backward(&cache.z1, &du);
        let mut dh1 = self.ff1.backward(&cache.h1, &dz1, &mut grad.ff1)?;
        dh1.add_assign(&dr2)?;
        let dr1 = self.norm1.backward(&cache.norm1, &dh1, &mut grad.norm1);
        let da = dropout_backward(&cache.drop1, &dr1);
        let (mut dxq, dxkv) =
            self.attention
                .backward(xq, xkv, mask, &cache.attn, &da, &mut grad.attention)?;
        dxq.add_assign(&dr1)?;
        Ok((dxq, dxkv))
    }

    pub(crate) fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        for (name, m) in self.attention.named_params() {
            out.push((format!("{prefix}.attention.{name}"), m));
        }
        out.push((format!("{prefix}.norm1.gain"), &self.norm1.gain));
        out.push((format!("{prefix}.norm1.shift"), &self.norm1.shift));
        linear_params(&format!("{prefix}.ff1"), &self.ff1, out);
        linear_params(&format!("{prefix}.ff2"), &self.ff2, out);
        out.push((format!("{prefix}.norm2.gain"), &self.norm2.gain));
        out.push((format!("{prefix}.norm2.shift"), &self.norm2.shift));
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.attention.params_mut();
        out.extend([
            &mut self.norm1.gain,
            &mut self.norm1.shift,
            &mut self.ff1.weight,
            &mut self.ff1.bias,
            &mut self.ff2.weight,
            &mut self.ff2.bias,
            &mut self.norm2.gain,
            &mut self.norm2.shift,
        ]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub input: Linear,
    pub mask_embedding: Matrix,
    pub layers: Vec<EncoderLayer>,
    pub output: Linear,
}

/// Result of an encoder forward pass, with everything backward needs.
pub struct EncoderPass {
    /// Final hidden states, `NT x d`, before the output linear layer.
    pub hidden: Matrix,
    /// `NT x F` reconstruction.
    pub output: Matrix,
    pub(crate) n_agents: usize,
    pub(crate) n_steps: usize,
    pub(crate) key_valid: Vec<bool>,
    input: Matrix,
    masked: Vec<bool>,
    attn_mask: AttentionMask,
    layer_inputs: Vec<Matrix>,
    caches: Vec<BlockCache>,
}

impl EncoderPass {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (f, d) = (config.n_features, config.d_model);
        let input = Linear::new(f, d, rng);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer::new(config, rng))
            .collect::<Result<Vec<_>>>()?;
        let output = Linear::new(d, f, rng);
        Ok(Self {
            input,
            mask_embedding: Matrix::zeros(1, d),
            layers,
            output,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: Linear::zeros(self.input.inputs(), self.input.outputs()),
            mask_embedding: Matrix::zeros(1, self.mask_embedding.cols()),
            layers: self.layers.iter().map(EncoderLayer::zeros_like).collect(),
            output: Linear::zeros(self.output.inputs(), self.output.outputs()),
        }
    }

    pub fn dim(&self) -> usize {
        self.mask_embedding.cols()
    }

    pub(crate) fn forward(
        &self,
        view: &SceneView<'_>,
        masked: &[bool],
        pe: &PositionalEncoding,
        mode: &mut Mode<'_>,
    ) -> Result<EncoderPass> {
        let (n, t, f) = (view.n_agents, view.n_steps, view.n_features);
        let slots = view.n_slots();
        if view.data.len() != slots * f {
            return Err(Error::shape("encoder input", slots * f, view.data.len()));
        }
        if masked.len() != slots {
            return Err(Error::shape("masked slots", slots, masked.len()));
        }
        if t > pe.t_max {
            return Err(Error::Config(format!(
                "scene has {t} steps but the positional table holds {}",
                pe.t_max
            )));
        }
        let input = Matrix::from_vec(slots, f, view.data.to_vec())?;
        let mut x = self.input.forward(&input)?;
        for slot in 0..slots {
            let row = x.row_mut(slot);
            if masked[slot] {
                row.copy_from_slice(self.mask_embedding.row(0));
            }
            let step = (view.start_step[slot / t] + slot % t).min(pe.t_max - 1);
            for (v, p) in row.iter_mut().zip(pe.row(step)) {
                *v += p;
            }
        }
        let key_valid: Vec<bool> = (0..slots).map(|s| view.is_valid(s / t, s % t)).collect();
        let agents: Vec<usize> = (0..slots).map(|s| s / t).collect();
        let own_only = self
            .layers
            .first()
            .is_some_and(|l| l.attention.own_agent_only());
        let attn_mask =
            AttentionMask::new(&agents, &agents, &key_valid, own_only)?.mute_queries(&key_valid);

        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let (h, cache) = layer.forward(&x, &x, &attn_mask, mode)?;
            if !h.is_finite() {
                return Err(Error::NonFiniteActivation { layer: i });
            }
            layer_inputs.push(core::mem::replace(&mut x, h));
            caches.push(cache);
        }
        let output = self.output.forward(&x)?;
        Ok(EncoderPass {
            hidden: x,
            output,
            n_agents: n,
            n_steps: t,
            key_valid,
            input,
            masked: masked.to_vec(),
            attn_mask,
            layer_inputs,
            caches,
        })
    }

    pub(crate) fn backward(
        &self,
        pass: &EncoderPass,
        d_output: Option<&Matrix>,
        d_hidden: Option<&Matrix>,
        grad: &mut Encoder,
    ) -> Result<()> {
        let mut dh = match d_output {
            Some(dy) => self.output.backward(&pass.hidden, dy, &mut grad.output)?,
            None => Matrix::zeros(pass.hidden.rows(), pass.hidden.cols()),
        };
        if let Some(extra) = d_hidden {
            dh.add_assign(extra)?;
        }
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &pass.layer_inputs[i];
            let (mut dx, dkv) = layer.backward(
                x,
                x,
                &pass.attn_mask,
                &pass.caches[i],
                &dh,
                &mut grad.layers[i],
            )?;
            dx.add_assign(&dkv)?;
            dh = dx;
        }
        let emb = grad.mask_embedding.row_mut(0);
        for (slot, &m) in pass.masked.iter().enumerate() {
            if m {
                for (g, v) in emb.iter_mut().zip(dh.row(slot)) {
                    *g += v;
                }
                dh.row_mut(slot).fill(0.0);
            }
        }
        self.input.backward(&pass.input, &dh, &mut grad.input)?;
        Ok(())
    }

    pub(crate) fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        linear_params(&format!("{prefix}.input"), &self.input, out);
        out.push((format!("{prefix}.mask_embedding"), &self.mask_embedding));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&format!("{prefix}.layers.{i}"), out);
        }
        linear_params(&format!("{prefix}.output"), &self.output, out);
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        out.push(&mut self.input.weight);
        out.push(&mut self.input.bias);
        out.push(&mut self.mask_embedding);
        for layer in &mut self.layers {
            out.extend(layer.params_mut());
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }
}
