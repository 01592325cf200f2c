//! Agent-aware attention and the multi-head baseline.
//!
//! Both operate on a query matrix `xq` (rows = query slots) and a key/value
//! matrix `xkv` (rows = key slots). Self-attention passes the same matrix
//! twice; the decoder passes its query embeddings and the encoder states.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::scene::{SceneMask, SceneView};
use crate::tensor::{axpy, dot, Matrix};

/// Which key slots each query slot may attend to, and whether a pair belongs
/// to the same agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    same_agent: Vec<bool>,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// `query_agent[i]` / `key_agent[j]` give the agent of each slot; keys
    /// with `key_valid[j] == false` are padding. With `own_agent_only` a query
    /// may only see keys of its own agent.
    pub fn new(
        query_agent: &[usize],
        key_agent: &[usize],
        key_valid: &[bool],
        own_agent_only: bool,
    ) -> Result<Self> {
        if key_agent.len() != key_valid.len() {
            return Err(Error::shape("attention mask", key_agent.len(), key_valid.len()));
        }
        let (rows, cols) = (query_agent.len(), key_agent.len());
        let mut same_agent = Vec::with_capacity(rows * cols);
        let mut allowed = Vec::with_capacity(rows * cols);
        for &qa in query_agent {
            for (&ka, &valid) in key_agent.iter().zip(key_valid) {
                let same = qa == ka;
                same_agent.push(same);
                allowed.push(valid && (same || !own_agent_only));
            }
        }
        Ok(Self {
            rows,
            cols,
            same_agent,
            allowed,
        })
    }

    /// Clears the rows of padded queries: they attend to nothing and their
    /// (never read) outputs are zero, which skips their cost.
    pub fn mute_queries(mut self, query_valid: &[bool]) -> Self {
        for (i, &valid) in query_valid.iter().enumerate().take(self.rows) {
            if !valid {
                self.allowed[i * self.cols..(i + 1) * self.cols].fill(false);
            }
        }
        self
    }

    /// Self-attention over the slots of a scene (agent-major order); padded
    /// slots are muted as queries.
    pub fn for_scene(view: &SceneView<'_>, own_agent_only: bool) -> Self {
        let t = view.n_steps;
        let agents: Vec<usize> = (0..view.n_slots()).map(|i| i / t).collect();
        let valid: Vec<bool> = (0..view.n_slots())
            .map(|i| view.is_valid(i / t, i % t))
            .collect();
        Self::new(&agents, &agents, &valid, own_agent_only)
            .expect("consistent lengths")
            .mute_queries(&valid)
    }

    /// From an explicit agent mask `M` and padding mask.
    pub fn from_scene_mask(mask: &SceneMask, own_agent_only: bool) -> Result<Self> {
        let k = mask.n_slots();
        if mask.agent_mask.len() != k * k || mask.pad_mask.len() != k {
            return Err(Error::shape("scene mask", k * k, mask.agent_mask.len()));
        }
        let same_agent: Vec<bool> = mask.agent_mask.iter().map(|&v| v == 1).collect();
        let allowed = (0..k * k)
            .map(|ij| {
                mask.pad_mask[ij / k] == 0
                    && mask.pad_mask[ij % k] == 0
                    && (same_agent[ij] || !own_agent_only)
            })
            .collect();
        Ok(Self {
            rows: k,
            cols: k,
            same_agent,
            allowed,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn same_agent(&self, i: usize, j: usize) -> bool {
        self.same_agent[i * self.cols + j]
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    fn check(&self, xq: &Matrix, xkv: &Matrix) -> Result<()> {
        if self.rows != xq.rows() || self.cols != xkv.rows() {
            return Err(Error::shape(
                "attention mask",
                alloc::format!("{}x{}", xq.rows(), xkv.rows()),
                alloc::format!("{}x{}", self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

/// Softmax over the allowed entries of `scores` row `i`, written into `p`.
/// Rows with no allowed entry stay zero.
fn masked_softmax_row(scores: &[f64], allowed: &[bool], p: &mut [f64]) {
    let max = scores
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(s, _)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        p.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mut total = 0.0;
    for ((pv, &s), &a) in p.iter_mut().zip(scores).zip(allowed) {
        *pv = if a { (s - max).exp() } else { 0.0 };
        total += *pv;
    }
    p.iter_mut().for_each(|v| *v /= total);
}

/// In place: `dp <- p * (dp - <p, dp>)` on each row.
fn softmax_backward_in_place(p: &Matrix, dp: &mut Matrix) {
    for r in 0..p.rows() {
        let pr = p.row(r);
        let inner = dot(pr, dp.row(r));
        for (d, &pv) in dp.row_mut(r).iter_mut().zip(pr) {
            *d = pv * (*d - inner);
        }
    }
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let bound = 1.0 / (rows as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

/// Logits `M * (Q_self K_self^T) + (1 - M) * (Q_other K_other^T)`, scaled by
/// `1/sqrt(d)`, applied directly to the (unprojected) values.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentAwareAttention {
    pub wq_self: Matrix,
    pub wk_self: Matrix,
    pub wq_other: Matrix,
    pub wk_other: Matrix,
}

#[derive(Debug, Clone)]
pub struct AgentAwareCache {
    q_self: Matrix,
    k_self: Matrix,
    q_other: Matrix,
    k_other: Matrix,
    weights: Matrix,
}

impl AgentAwareCache {
    /// Post-softmax attention weights.
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

impl AgentAwareAttention {
    pub fn new<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        Self {
            wq_self: uniform_matrix(d, d, rng),
            wk_self: uniform_matrix(d, d, rng),
            wq_other: uniform_matrix(d, d, rng),
            wk_other: uniform_matrix(d, d, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self {
            wq_self: Matrix::zeros(d, d),
            wk_self: Matrix::zeros(d, d),
            wq_other: Matrix::zeros(d, d),
            wk_other: Matrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq_self.rows()
    }

    /// Pre-softmax logits `A` (unscaled, unmasked) for inspection and tests.
    pub fn logits(&self, xq: &Matrix, xkv: &Matrix, mask: &AttentionMask) -> Result<Matrix> {
        mask.check(xq, xkv)?;
        let qs = xq.matmul(&self.wq_self)?;
        let ks = xkv.matmul(&self.wk_self)?;
        let qo = xq.matmul(&self.wq_other)?;
        let ko = xkv.matmul(&self.wk_other)?;
        Ok(Matrix::from_fn(xq.rows(), xkv.rows(), |i, j| {
            if mask.same_agent(i, j) {
                dot(qs.row(i), ks.row(j))
            } else {
                dot(qo.row(i), ko.row(j))
            }
        }))
    }

    pub fn forward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
    ) -> Result<(Matrix, AgentAwareCache)> {
        mask.check(xq, xkv)?;
        let d = self.dim();
        if xq.cols() != d || xkv.cols() != d {
            return Err(Error::shape("agent-aware attention", d, xq.cols()));
        }
        let q_self = xq.matmul(&self.wq_self)?;
        let k_self = xkv.matmul(&self.wk_self)?;
        let q_other = xq.matmul(&self.wq_other)?;
        let k_other = xkv.matmul(&self.wk_other)?;
        let scale = 1.0 / (d as f64).sqrt();
        let (rows, cols) = (xq.rows(), xkv.rows());
        let mut weights = Matrix::zeros(rows, cols);
        let mut scores = vec![0.0; cols];
        for i in 0..rows {
            let allowed = &mask.allowed[i * cols..(i + 1) * cols];
            for j in 0..cols {
                if !allowed[j] {
                    continue;
                }
                scores[j] = scale
                    * if mask.same_agent(i, j) {
                        dot(q_self.row(i), k_self.row(j))
                    } else {
                        dot(q_other.row(i), k_other.row(j))
                    };
            }
            masked_softmax_row(&scores, allowed, weights.row_mut(i));
        }
        let out = weights.matmul(xkv)?;
        Ok((
            out,
            AgentAwareCache {
                q_self,
                k_self,
                q_other,
                k_other,
                weights,
            },
        ))
    }

    /// Returns `(d xq, d xkv)`; for self-attention the caller sums both.
    pub fn backward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
        cache: &AgentAwareCache,
        d_out: &Matrix,
        grad: &mut AgentAwareAttention,
    ) -> Result<(Matrix, Matrix)> {
        let p = &cache.weights;
        let (rows, cols) = p.shape();
        let d = self.dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut dxkv = p.t_matmul(d_out)?;
        let mut ds = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                if p[(i, j)] != 0.0 {
                    ds[(i, j)] = dot(d_out.row(i), xkv.row(j));
                }
            }
        }
        softmax_backward_in_place(p, &mut ds);
        let mut dqs = Matrix::zeros(rows, d);
        let mut dks = Matrix::zeros(cols, d);
        let mut dqo = Matrix::zeros(rows, d);
        let mut dko = Matrix::zeros(cols, d);
        for i in 0..rows {
            for j in 0..cols {
                let g = ds[(i, j)] * scale;
                if g == 0.0 || !mask.allowed(i, j) {
                    continue;
                }
                if mask.same_agent(i, j) {
                    axpy(g, cache.k_self.row(j), dqs.row_mut(i));
                    axpy(g, cache.q_self.row(i), dks.row_mut(j));
                } else {
                    axpy(g, cache.k_other.row(j), dqo.row_mut(i));
                    axpy(g, cache.q_other.row(i), dko.row_mut(j));
                }
            }
        }
        grad.wq_self.add_assign(&xq.t_matmul(&dqs)?)?;
        grad.wq_other.add_assign(&xq.t_matmul(&dqo)?)?;
        grad.wk_self.add_assign(&xkv.t_matmul(&dks)?)?;
        grad.wk_other.add_assign(&xkv.t_matmul(&dko)?)?;
        let mut dxq = dqs.matmul_t(&self.wq_self)?;
        dxq.add_assign(&dqo.matmul_t(&self.wq_other)?)?;
        dxkv.add_assign(&dks.matmul_t(&self.wk_self)?)?;
        dxkv.add_assign(&dko.matmul_t(&self.wk_other)?)?;
        Ok((dxq, dxkv))
    }

    pub fn params(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("wq_self", &self.wq_self),
            ("wk_self", &self.wk_self),
            ("wq_other", &self.wq_other),
            ("wk_other", &self.wk_other),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 4] {
        [
            &mut self.wq_self,
            &mut self.wk_self,
            &mut self.wq_other,
            &mut self.wk_other,
        ]
    }
}

/// `Concat(H_1..H_h) W_o` with `H_j = softmax(Q_j K_j^T / sqrt(d_h)) V_j`.
///
/// Head `j` uses columns `j*d_h..(j+1)*d_h` of `wq`, `wk` and `wv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

#[derive(Debug, Clone)]
pub struct MultiHeadCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    weights: Vec<Matrix>,
    concat: Matrix,
}

impl MultiHeadCache {
    pub fn head_weights(&self, head: usize) -> &Matrix {
        &self.weights[head]
    }
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(d: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::Config(alloc::format!(
                "model dimension {d} not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            n_heads,
            wq: uniform_matrix(d, d, rng),
            wk: uniform_matrix(d, d, rng),
            wv: uniform_matrix(d, d, rng),
            wo: uniform_matrix(d, d, rng),
        })
    }

    pub fn zeros(d: usize, n_heads: usize) -> Self {
        Self {
            n_heads,
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            wo: Matrix::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.n_heads
    }

    pub fn forward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
    ) -> Result<(Matrix, MultiHeadCache)> {
        mask.check(xq, xkv)?;
        let d = self.dim();
        if xq.cols() != d || xkv.cols() != d {
            return Err(Error::shape("multi-head attention", d, xq.cols()));
        }
        let dh = self.head_dim();
        let q = xq.matmul(&self.wq)?;
        let k = xkv.matmul(&self.wk)?;
        let v = xkv.matmul(&self.wv)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let (rows, cols) = (xq.rows(), xkv.rows());
        let mut concat = Matrix::zeros(rows, d);
        let mut weights = Vec::with_capacity(self.n_heads);
        let mut scores = vec![0.0; cols];
        for h in 0..self.n_heads {
            let span = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let allowed = &mask.allowed[i * cols..(i + 1) * cols];
                let qi = &q.row(i)[span.clone()];
                for j in 0..cols {
                    if allowed[j] {
                        scores[j] = scale * dot(qi, &k.row(j)[span.clone()]);
                    }
                }
                masked_softmax_row(&scores, allowed, p.row_mut(i));
                let out = &mut concat.row_mut(i)[span.clone()];
                for j in 0..cols {
                    let w = p[(i, j)];
                    if w != 0.0 {
                        axpy(w, &v.row(j)[span.clone()], out);
                    }
                }
            }
            weights.push(p);
        }
        let out = concat.matmul(&self.wo)?;
        Ok((
            out,
            MultiHeadCache {
                q,
                k,
                v,
                weights,
                concat,
            },
        ))
    }

    pub fn backward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
        cache: &MultiHeadCache,
        d_out: &Matrix,
        grad: &mut MultiHeadAttention,
    ) -> Result<(Matrix, Matrix)> {
        let d = self.dim();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        grad.wo.add_assign(&cache.concat.t_matmul(d_out)?)?;
        let d_concat = d_out.matmul_t(&self.wo)?;
        let (rows, cols) = (xq.rows(), xkv.rows());
        let mut dq = Matrix::zeros(rows, d);
        let mut dk = Matrix::zeros(cols, d);
        let mut dv = Matrix::zeros(cols, d);
        for h in 0..self.n_heads {
            let span = h * dh..(h + 1) * dh;
            let p = &cache.weights[h];
            let mut ds = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let dhi = &d_concat.row(i)[span.clone()];
                for j in 0..cols {
                    let w = p[(i, j)];
                    if w != 0.0 {
                        ds[(i, j)] = dot(dhi, &cache.v.row(j)[span.clone()]);
                        axpy(w, dhi, &mut dv.row_mut(j)[span.clone()]);
                    }
                }
            }
            softmax_backward_in_place(p, &mut ds);
            for i in 0..rows {
                for j in 0..cols {
                    let g = ds[(i, j)] * scale;
                    if g == 0.0 || !mask.allowed(i, j) {
                        continue;
                    }
                    axpy(g, &cache.k.row(j)[span.clone()], &mut dq.row_mut(i)[span.clone()]);
                    axpy(g, &cache.q.row(i)[span.clone()], &mut dk.row_mut(j)[span.clone()]);
                }
            }
        }
        grad.wq.add_assign(&xq.t_matmul(&dq)?)?;
        grad.wk.add_assign(&xkv.t_matmul(&dk)?)?;
        grad.wv.add_assign(&xkv.t_matmul(&dv)?)?;
        let dxq = dq.matmul_t(&self.wq)?;
        let mut dxkv = dk.matmul_t(&self.wk)?;
        dxkv.add_assign(&dv.matmul_t(&self.wv)?)?;
        Ok((dxq, dxkv))
    }

    pub fn params(&self) -> [(&'static str, &Matrix); 4] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }
}

/// Either attention flavour behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Attention {
    AgentAware(AgentAwareAttention),
    MultiHead(MultiHeadAttention),
}

#[derive(Debug, Clone)]
pub enum AttentionCache {
    AgentAware(AgentAwareCache),
    MultiHead(MultiHeadCache),
}

impl Attention {
    /// The multi-head baseline only attends within each agent's own slots.
    pub fn own_agent_only(&self) -> bool {
        matches!(self, Attention::MultiHead(_))
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Attention::AgentAware(a) => Attention::AgentAware(AgentAwareAttention::zeros(a.dim())),
            Attention::MultiHead(m) => {
                Attention::MultiHead(MultiHeadAttention::zeros(m.dim(), m.n_heads))
            }
        }
    }

    pub fn forward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
    ) -> Result<(Matrix, AttentionCache)> {
        Ok(match self {
            Attention::AgentAware(a) => {
                let (y, c) = a.forward(xq, xkv, mask)?;
                (y, AttentionCache::AgentAware(c))
            }
            Attention::MultiHead(m) => {
                let (y, c) = m.forward(xq, xkv, mask)?;
                (y, AttentionCache::MultiHead(c))
            }
        })
    }

    pub fn backward(
        &self,
        xq: &Matrix,
        xkv: &Matrix,
        mask: &AttentionMask,
        cache: &AttentionCache,
        d_out: &Matrix,
        grad: &mut Attention,
    ) -> Result<(Matrix, Matrix)> {
        match (self, cache, grad) {
            (Attention::AgentAware(a), AttentionCache::AgentAware(c), Attention::AgentAware(g)) => {
                a.backward(xq, xkv, mask, c, d_out, g)
            }
            (Attention::MultiHead(m), AttentionCache::MultiHead(c), Attention::MultiHead(g)) => {
                m.backward(xq, xkv, mask, c, d_out, g)
            }
            _ => Err(Error::Config("attention variant mismatch".into())),
        }
    }

    pub fn named_params(&self) -> Vec<(&'static str, &Matrix)> {
        match self {
            Attention::AgentAware(a) => a.params().into(),
            Attention::MultiHead(m) => m.params().into(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Attention::AgentAware(a) => a.params_mut().into(),
            Attention::MultiHead(m) => m.params_mut().into(),
        }
    }
}

/// Single-head scaled dot-product attention with explicit projections,
/// `softmax((x Wq)(x Wk)^T / sqrt(d)) x`.
pub fn single_head_attention(
    x: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    mask: &AttentionMask,
) -> Result<Matrix> {
    let q = x.matmul(wq)?;
    let k = x.matmul(wk)?;
    let scale = 1.0 / (x.cols() as f64).sqrt();
    let mut p = Matrix::zeros(x.rows(), x.rows());
    let scores = q.matmul_t(&k)?;
    for i in 0..x.rows() {
        let row: Vec<f64> = scores.row(i).iter().map(|s| s * scale).collect();
        masked_softmax_row(&row, &mask.allowed[i * x.rows()..(i + 1) * x.rows()], p.row_mut(i));
    }
    p.matmul(x)
}

pub(crate) fn linear_params<'a>(
    prefix: &str,
    layer: &'a Linear,
    out: &mut Vec<(String, &'a Matrix)>,
) {
    out.push((alloc::format!("{prefix}.weight"), &layer.weight));
    out.push((alloc::format!("{prefix}.bias"), &layer.bias));
}
