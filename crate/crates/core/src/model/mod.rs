//! Encoder, fine-tuning decoder and the parameter registry.

mod attention;
mod decoder;
mod encoder;
mod masking;

pub use attention::{
    single_head_attention, AgentAwareAttention, AgentAwareCache, Attention, AttentionCache,
    AttentionMask, MultiHeadAttention, MultiHeadCache,
};
pub use decoder::{query_matrix, DecoderHead, DecoderPass};
pub use encoder::{Encoder, EncoderLayer, EncoderPass};
pub use masking::{draw_final_span, draw_pretrain_mask, MaskSpan, MASK_SPAN};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{dropout, DropoutMask};
use crate::scene::{PositionalEncoding, SceneView, DEFAULT_T_MAX, N_FEATURES};
use crate::tensor::Matrix;

/// Attention flavour of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    /// Single-head agent-aware attention over the whole scene.
    #[cfg_attr(feature = "serde", serde(alias = "ma-bert"))]
    AgentAware,
    /// Multi-head attention applied to each trajectory on its own.
    #[cfg_attr(feature = "serde", serde(alias = "bert"))]
    MultiHead,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::AgentAware => "ma-bert",
            Variant::MultiHead => "bert",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_features: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    /// Ignored by the agent-aware variant, which is single-head.
    pub n_heads: usize,
    pub t_max: usize,
    pub dropout_pretrain: f64,
    pub dropout_finetune: f64,
}

impl ModelConfig {
    /// Size that trains on a single CPU core in minutes.
    pub fn desk(variant: Variant) -> Self {
        Self {
            variant,
            n_features: N_FEATURES,
            d_model: 32,
            d_ff: 64,
            n_layers: 2,
            n_heads: 4,
            t_max: DEFAULT_T_MAX,
            dropout_pretrain: 0.1,
            dropout_finetune: 0.0,
        }
    }

    /// Dimensions of the published configuration.
    pub fn full(variant: Variant) -> Self {
        Self {
            d_model: 512,
            d_ff: 2048,
            n_layers: 5,
            n_heads: 8,
            ..Self::desk(variant)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_features == 0 || self.d_ff == 0 || self.n_layers == 0 || self.t_max == 0 {
            return bad(format!("all model sizes must be positive: {self:?}"));
        }
        if self.d_model < 2 || self.d_model % 2 != 0 {
            return bad(format!("d_model must be even and >= 2, got {}", self.d_model));
        }
        if self.variant == Variant::MultiHead
            && (self.n_heads == 0 || self.d_model % self.n_heads != 0)
        {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        for p in [self.dropout_pretrain, self.dropout_finetune] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("dropout must be in [0, 1), got {p}"));
            }
        }
        Ok(())
    }

    /// Trainable parameters of the encoder plus, when given, a decoder with
    /// `decoder_outputs` outputs per query row.
    pub fn parameter_count(&self, decoder_outputs: Option<usize>) -> usize {
        let (f, d, ff) = (self.n_features, self.d_model, self.d_ff);
        let attn = 4 * d * d;
        let block = attn + 2 * (2 * d) + (d * ff + ff) + (ff * d + d);
        let encoder = (f * d + d) + d + self.n_layers * block + (d * f + f);
        let decoder = decoder_outputs.map_or(0, |o| (f * d + d) + block + (d * o + o));
        encoder + decoder
    }
}

/// Forward-pass mode: inference, or training with dropout probability `p`.
pub enum Mode<'r> {
    Eval,
    Train { p: f64, rng: &'r mut dyn RngCore },
}

impl Mode<'_> {
    pub(crate) fn dropout(&mut self, x: &Matrix) -> (Matrix, DropoutMask) {
        match self {
            Mode::Eval => (x.clone(), DropoutMask::identity()),
            Mode::Train { p, rng } => dropout(x, *p, true, &mut **rng),
        }
    }
}

/// Encoder plus an optional decoder head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub decoder: Option<DecoderHead>,
    pe: PositionalEncoding,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let pe = PositionalEncoding::new(config.t_max, config.d_model)?;
        let encoder = Encoder::new(&config, rng)?;
        Ok(Self {
            config,
            encoder,
            decoder: None,
            pe,
        })
    }

    /// Model of the given structure with arbitrary weights, for loading
    /// stored parameters into.
    pub fn with_shape(config: ModelConfig, decoder_outputs: Option<usize>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::with_rng(config, &mut rng)?;
        if let Some(o) = decoder_outputs {
            model.attach_decoder(o, &mut rng)?;
        }
        Ok(model)
    }

    /// Replaces any decoder with a freshly initialized one.
    pub fn attach_decoder<R: Rng + ?Sized>(&mut self, outputs: usize, rng: &mut R) -> Result<()> {
        self.decoder = Some(DecoderHead::new(&self.config, outputs, rng)?);
        Ok(())
    }

    /// Same structure with every parameter zero; used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.as_ref().map(DecoderHead::zeros_like),
            pe: self.pe.clone(),
        }
    }

    pub fn positional_encoding(&self) -> &PositionalEncoding {
        &self.pe
    }

    /// Named parameters in a fixed order shared with [`Model::params_mut`].
    pub fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.encoder.collect_params("encoder", &mut out);
        if let Some(dec) = &self.decoder {
            dec.collect_params("decoder", &mut out);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.params_mut();
        if let Some(dec) = &mut self.decoder {
            out.extend(dec.params_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|(_, m)| m.is_finite())
    }

    /// Encodes a scene; slots with `masked[n * T + t]` set are replaced by the
    /// learned mask embedding.
    pub fn encode(
        &self,
        view: &SceneView<'_>,
        masked: &[bool],
        mode: &mut Mode<'_>,
    ) -> Result<EncoderPass> {
        if view.n_features != self.config.n_features {
            return Err(Error::shape("encode", self.config.n_features, view.n_features));
        }
        self.encoder.forward(view, masked, &self.pe, mode)
    }

    /// Runs the decoder on encoder states; `queries` is `N*O x F`.
    pub fn decode(
        &self,
        enc: &EncoderPass,
        queries: &Matrix,
        mode: &mut Mode<'_>,
    ) -> Result<DecoderPass> {
        let dec = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::Config("model has no decoder head".into()))?;
        dec.forward(enc, queries, mode)
    }

    /// Accumulates parameter gradients into `grads`.
    ///
    /// `d_output` is the gradient of the loss with respect to the encoder
    /// output (`NT x F`); `decoder` pairs a decoder pass with the gradient
    /// with respect to its per-row predictions.
    pub fn backward(
        &self,
        enc: &EncoderPass,
        d_output: Option<&Matrix>,
        decoder: Option<(&DecoderPass, &[f64])>,
        grads: &mut Model,
    ) -> Result<()> {
        let d_hidden = match decoder {
            Some((pass, dy)) => {
                let dec = self
                    .decoder
                    .as_ref()
                    .ok_or_else(|| Error::Config("model has no decoder head".into()))?;
                let gdec = grads
                    .decoder
                    .as_mut()
                    .ok_or_else(|| Error::Config("gradient buffer has no decoder".into()))?;
                Some(dec.backward(enc, pass, dy, gdec)?)
            }
            None => None,
        };
        self.encoder
            .backward(enc, d_output, d_hidden.as_ref(), &mut grads.encoder)
    }
}
