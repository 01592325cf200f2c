use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;

use crate::scene::SceneView;

/// Masked span length in steps (two minutes at a 10 s step).
pub const MASK_SPAN: usize = 12;

/// A contiguous run of masked steps of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskSpan {
    pub agent: usize,
    pub start: usize,
    pub len: usize,
}

impl MaskSpan {
    /// Per-slot flags in agent-major order.
    pub fn slots(&self, n_agents: usize, n_steps: usize) -> Vec<bool> {
        let mut out = vec![false; n_agents * n_steps];
        let base = self.agent * n_steps + self.start;
        out[base..base + self.len].fill(true);
        out
    }
}

/// Random span for masked-scene pre-training: a uniformly chosen agent whose
/// valid range fits `span`, at a uniform start. When no agent is long
/// enough the span shrinks to the longest valid length. `None` only for a
/// scene without valid steps.
pub fn draw_pretrain_mask<R: Rng + ?Sized>(
    view: &SceneView<'_>,
    span: usize,
    rng: &mut R,
) -> Option<MaskSpan> {
    let longest = view.valid_len.iter().copied().max().unwrap_or(0);
    if longest == 0 {
        return None;
    }
    let len = span.clamp(1, longest);
    let candidates: Vec<usize> = (0..view.n_agents)
        .filter(|&n| view.valid_len[n] >= len)
        .collect();
    let agent = candidates[rng.random_range(0..candidates.len())];
    let start = rng.random_range(0..=view.valid_len[agent] - len);
    Some(MaskSpan { agent, start, len })
}

/// The final `horizon` valid steps of a random agent with at least
/// `horizon + 1` valid steps, or `None` when no agent qualifies.
pub fn draw_final_span<R: Rng + ?Sized>(
    view: &SceneView<'_>,
    horizon: usize,
    rng: &mut R,
) -> Option<MaskSpan> {
    let candidates: Vec<usize> = (0..view.n_agents)
        .filter(|&n| view.valid_len[n] > horizon)
        .collect();
    if candidates.is_empty() || horizon == 0 {
        return None;
    }
    let agent = candidates[rng.random_range(0..candidates.len())];
    Some(MaskSpan {
        agent,
        start: view.valid_len[agent] - horizon,
        len: horizon,
    })
}
