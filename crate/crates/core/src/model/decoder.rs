use alloc::format;
use alloc::vec;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

use super::attention::{linear_params, AttentionMask};
use super::encoder::{BlockCache, EncoderLayer, EncoderPass};
use super::{ModelConfig, Mode};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::Matrix;

/// Binary query matrix, `N*O x F`: rows of queried agents are all ones.
pub fn query_matrix(queried: &[bool], outputs: usize, n_features: usize) -> Matrix {
    Matrix::from_fn(queried.len() * outputs, n_features, |r, _| {
        if queried[r / outputs] {
            1.0
        } else {
            0.0
        }
    })
}

/// Query embedding, one cross-attention block over the encoder states, and
/// a linear map to `O` outputs per query row.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderHead {
    pub query: Linear,
    pub block: EncoderLayer,
    pub out: Linear,
}

pub struct DecoderPass {
    /// `N*O x O`; row `n*O + o` contributes its column `o`.
    pub raw: Matrix,
    queries: Matrix,
    embedded: Matrix,
    attn_mask: AttentionMask,
    cache: BlockCache,
    hidden: Matrix,
    queried: Vec<bool>,
}

impl DecoderPass {
    /// Prediction of each query row, length `N*O`.
    pub fn predictions(&self) -> Vec<f64> {
        let o = self.raw.cols();
        (0..self.raw.rows()).map(|r| self.raw[(r, r % o)]).collect()
    }

    /// `(agent, outputs)` for every agent with a non-zero query row.
    pub fn queried_outputs(&self) -> Vec<(usize, Vec<f64>)> {
        let o = self.raw.cols();
        let preds = self.predictions();
        (0..self.queried.len() / o)
            .filter(|&n| (0..o).any(|k| self.queried[n * o + k]))
            .map(|n| (n, preds[n * o..(n + 1) * o].to_vec()))
            .collect()
    }
}

impl DecoderHead {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, outputs: usize, rng: &mut R) -> Result<Self> {
        if outputs == 0 {
            return Err(Error::Config("decoder needs at least one output".into()));
        }
        let d = config.d_model;
        Ok(Self {
            query: Linear::new(config.n_features, d, rng),
            block: EncoderLayer::new(config, rng)?,
            out: Linear::new(d, outputs, rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            query: Linear::zeros(self.query.inputs(), self.query.outputs()),
            block: self.block.zeros_like(),
            out: Linear::zeros(self.out.inputs(), self.out.outputs()),
        }
    }

    pub fn outputs(&self) -> usize {
        self.out.outputs()
    }

    pub(crate) fn forward(
        &self,
        enc: &EncoderPass,
        queries: &Matrix,
        mode: &mut Mode<'_>,
    ) -> Result<DecoderPass> {
        let o = self.outputs();
        let rows = enc.n_agents * o;
        if queries.rows() != rows || queries.cols() != self.query.inputs() {
            return Err(Error::shape(
                "decoder queries",
                format!("{rows}x{}", self.query.inputs()),
                format!("{}x{}", queries.rows(), queries.cols()),
            ));
        }
        let query_agent: Vec<usize> = (0..rows).map(|r| r / o).collect();
        let key_agent: Vec<usize> = (0..enc.key_valid.len()).map(|s| s / enc.n_steps).collect();
        let attn_mask = AttentionMask::new(
            &query_agent,
            &key_agent,
            &enc.key_valid,
            self.block.attention.own_agent_only(),
        )?;
        let embedded = self.query.forward(queries)?;
        let (hidden, cache) = self.block.forward(&embedded, &enc.hidden, &attn_mask, mode)?;
        if !hidden.is_finite() {
            return Err(Error::NonFinite("decoder block".into()));
        }
        let raw = self.out.forward(&hidden)?;
        let queried = (0..rows)
            .map(|r| queries.row(r).iter().any(|&v| v != 0.0))
            .collect();
        Ok(DecoderPass {
            raw,
            queries: queries.clone(),
            embedded,
            attn_mask,
            cache,
            hidden,
            queried,
        })
    }

    /// `dy[r]` is the loss gradient for query row `r`'s prediction. Returns
    /// the gradient with respect to the encoder hidden states.
    pub(crate) fn backward(
        &self,
        enc: &EncoderPass,
        pass: &DecoderPass,
        dy: &[f64],
        grad: &mut DecoderHead,
    ) -> Result<Matrix> {
        let o = self.outputs();
        if dy.len() != pass.raw.rows() {
            return Err(Error::shape("decoder gradient", pass.raw.rows(), dy.len()));
        }
        let mut draw = Matrix::zeros(pass.raw.rows(), o);
        for (r, &g) in dy.iter().enumerate() {
            draw[(r, r % o)] = g;
        }
        let dh = self.out.backward(&pass.hidden, &draw, &mut grad.out)?;
        let (de, denc) = self.block.backward(
            &pass.embedded,
            &enc.hidden,
            &pass.attn_mask,
            &pass.cache,
            &dh,
            &mut grad.block,
        )?;
        self.query.backward(&pass.queries, &de, &mut grad.query)?;
        Ok(denc)
    }

    pub(crate) fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>) {
        linear_params(&format!("{prefix}.query"), &self.query, out);
        self.block.collect_params(&format!("{prefix}.block"), out);
        linear_params(&format!("{prefix}.out"), &self.out, out);
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.query.weight, &mut self.query.bias];
        out.extend(self.block.params_mut());
        out.push(&mut self.out.weight);
        out.push(&mut self.out.bias);
        out
    }
}
