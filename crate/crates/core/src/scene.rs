//! Multi-agent traffic scenes, their attention masks, positional encoding,
//! feature normalization and padded batching.
//!
//! A scene is a fixed window of `T` steps holding `N` agents with `F`
//! features each, stored row-major as `(agent, time, feature)`. Agent `n`
//! occupies slots `0..valid_len[n]` and is zero beyond; `start_step[n]` is
//! the scene-relative step of its first sample, used to index the
//! positional encoding.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geo::Trajectory;

/// Longitude, latitude, altitude.
pub const N_FEATURES: usize = 3;

/// Ten-minute windows at the default 10 s sampling.
pub const DEFAULT_T_MAX: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// Epoch seconds of step 0.
    pub window_start: i64,
    pub dt: i64,
    pub n_agents: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub data: Vec<f64>,
    pub valid_len: Vec<usize>,
    pub start_step: Vec<usize>,
    /// Seconds from each agent's last in-scene sample to its final
    /// trajectory point.
    pub time_to_arrival: Vec<f64>,
    pub agent_ids: Vec<String>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(format!("invalid scene: {what}")));
        if self.n_agents == 0 {
            return bad("no agents".into());
        }
        if self.data.len() != self.n_agents * self.n_steps * self.n_features {
            return bad(format!("payload length {}", self.data.len()));
        }
        for v in [&self.valid_len, &self.start_step] {
            if v.len() != self.n_agents {
                return bad("per-agent array length".into());
            }
        }
        if self.time_to_arrival.len() != self.n_agents || self.agent_ids.len() != self.n_agents {
            return bad("per-agent array length".into());
        }
        for n in 0..self.n_agents {
            let len = self.valid_len[n];
            if len == 0 || self.start_step[n] + len > self.n_steps {
                return bad(format!("agent {n} span"));
            }
            for t in len..self.n_steps {
                if self.point(n, t).iter().any(|&v| v != 0.0) {
                    return bad(format!("agent {n} padding not zero at step {t}"));
                }
            }
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return bad("non-finite payload".into());
        }
        Ok(())
    }

    #[inline]
    pub fn index(&self, n: usize, t: usize) -> usize {
        (n * self.n_steps + t) * self.n_features
    }

    pub fn point(&self, n: usize, t: usize) -> &[f64] {
        let i = self.index(n, t);
        &self.data[i..i + self.n_features]
    }

    pub fn point_mut(&mut self, n: usize, t: usize) -> &mut [f64] {
        let i = self.index(n, t);
        &mut self.data[i..i + self.n_features]
    }

    pub fn view(&self) -> SceneView<'_> {
        SceneView {
            n_agents: self.n_agents,
            n_steps: self.n_steps,
            n_features: self.n_features,
            data: &self.data,
            valid_len: &self.valid_len,
            start_step: &self.start_step,
        }
    }

    /// Whether agent `n` is still present at the last step of the window.
    pub fn airborne_at_end(&self, n: usize) -> bool {
        self.start_step[n] + self.valid_len[n] == self.n_steps
    }

    /// Reorders agents so that new agent `i` is old agent `perm[i]`.
    pub fn permute_agents(&self, perm: &[usize]) -> Scene {
        assert_eq!(perm.len(), self.n_agents);
        self.select_agents(perm)
    }

    /// Keeps only the listed agents, in the given order.
    pub fn select_agents(&self, keep: &[usize]) -> Scene {
        let block = self.n_steps * self.n_features;
        let mut data = Vec::with_capacity(keep.len() * block);
        for &p in keep {
            data.extend_from_slice(&self.data[p * block..(p + 1) * block]);
        }
        Scene {
            n_agents: keep.len(),
            data,
            valid_len: keep.iter().map(|&p| self.valid_len[p]).collect(),
            start_step: keep.iter().map(|&p| self.start_step[p]).collect(),
            time_to_arrival: keep.iter().map(|&p| self.time_to_arrival[p]).collect(),
            agent_ids: keep.iter().map(|&p| self.agent_ids[p].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Borrowed scene-shaped data; padded agents may have `valid_len == 0`.
#[derive(Debug, Clone, Copy)]
pub struct SceneView<'a> {
    pub n_agents: usize,
    pub n_steps: usize,
    pub n_features: usize,
    pub data: &'a [f64],
    pub valid_len: &'a [usize],
    pub start_step: &'a [usize],
}

impl SceneView<'_> {
    pub fn n_slots(&self) -> usize {
        self.n_agents * self.n_steps
    }

    #[inline]
    pub fn is_valid(&self, n: usize, t: usize) -> bool {
        t < self.valid_len[n]
    }
}

/// Splits trajectories into consecutive non-overlapping windows of `t_max`
/// steps anchored at the earliest trajectory start. Flights spanning
/// several windows appear in each with the matching segment. Agents are
/// ordered by first appearance, then by flight id; empty windows are
/// skipped.
pub fn assemble_scenes(trajectories: &[Trajectory], t_max: usize, dt: i64) -> Result<Vec<Scene>> {
    if t_max == 0 || dt < 1 {
        return Err(Error::Config(format!("t_max={t_max}, dt={dt}")));
    }
    let Some(origin) = trajectories.iter().map(|t| t.t0).min() else {
        return Ok(Vec::new());
    };
    // window -> (flight index, first local step, samples)
    let mut windows: BTreeMap<i64, Vec<(usize, usize, Vec<[f64; 3]>)>> = BTreeMap::new();
    for (fi, traj) in trajectories.iter().enumerate() {
        if traj.dt != dt {
            return Err(Error::Config(format!(
                "trajectory {} sampled at {} s, expected {dt} s",
                traj.flight_id, traj.dt
            )));
        }
        for (i, p) in traj.points.iter().enumerate() {
            let step = (traj.time_at(i) - origin).div_euclid(dt);
            let w = step.div_euclid(t_max as i64);
            let local = step.rem_euclid(t_max as i64) as usize;
            let entries = windows.entry(w).or_default();
            match entries.last_mut() {
                Some(e) if e.0 == fi => e.2.push(*p),
                _ => entries.push((fi, local, vec![*p])),
            }
        }
    }
    let mut scenes = Vec::with_capacity(windows.len());
    for (w, mut agents) in windows {
        agents.sort_by(|a, b| {
            a.1.cmp(&b.1)
                .then_with(|| trajectories[a.0].flight_id.cmp(&trajectories[b.0].flight_id))
        });
        let window_start = origin + w * t_max as i64 * dt;
        let n_agents = agents.len();
        let mut data = vec![0.0; n_agents * t_max * N_FEATURES];
        let mut valid_len = Vec::with_capacity(n_agents);
        let mut start_step = Vec::with_capacity(n_agents);
        let mut time_to_arrival = Vec::with_capacity(n_agents);
        let mut agent_ids = Vec::with_capacity(n_agents);
        for (n, (fi, local, pts)) in agents.iter().enumerate() {
            let traj = &trajectories[*fi];
            for (t, p) in pts.iter().enumerate() {
                let i = (n * t_max + t) * N_FEATURES;
                data[i..i + N_FEATURES].copy_from_slice(p);
            }
            let last_time = window_start + (*local + pts.len() - 1) as i64 * dt;
            valid_len.push(pts.len());
            start_step.push(*local);
            time_to_arrival.push((traj.end_time() - last_time) as f64);
            agent_ids.push(traj.flight_id.clone());
        }
        scenes.push(Scene {
            window_start,
            dt,
            n_agents,
            n_steps: t_max,
            n_features: N_FEATURES,
            data,
            valid_len,
            start_step,
            time_to_arrival,
            agent_ids,
        });
    }
    Ok(scenes)
}

/// Agent mask `M` (1 iff same agent) and padding mask (1 iff padded slot)
/// over slots ordered agent-major, slot `(n, t)` at index `n * T + t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneMask {
    pub n_agents: usize,
    pub n_steps: usize,
    pub agent_mask: Vec<u8>,
    pub pad_mask: Vec<u8>,
}

impl SceneMask {
    pub fn n_slots(&self) -> usize {
        self.n_agents * self.n_steps
    }

    pub fn agent(&self, i: usize, j: usize) -> u8 {
        self.agent_mask[i * self.n_slots() + j]
    }

    /// `M[(n, t), (m, s)]`.
    pub fn at(&self, n: usize, t: usize, m: usize, s: usize) -> u8 {
        self.agent(n * self.n_steps + t, m * self.n_steps + s)
    }

    /// The `N x N` block of `M` between time steps `t` and `s`.
    pub fn timestep_block(&self, t: usize, s: usize) -> Vec<u8> {
        let n = self.n_agents;
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                out.push(self.at(a, t, b, s));
            }
        }
        out
    }
}

pub fn build_masks(view: &SceneView<'_>) -> SceneMask {
    let (n, t) = (view.n_agents, view.n_steps);
    let slots = n * t;
    let mut agent_mask = vec![0u8; slots * slots];
    for i in 0..slots {
        let a = i / t;
        let row = &mut agent_mask[i * slots..(i + 1) * slots];
        row[a * t..(a + 1) * t].iter_mut().for_each(|v| *v = 1);
    }
    let pad_mask = (0..slots)
        .map(|i| u8::from(!view.is_valid(i / t, i % t)))
        .collect();
    SceneMask {
        n_agents: n,
        n_steps: t,
        agent_mask,
        pad_mask,
    }
}

/// Sinusoidal encoding table, `T_max x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub t_max: usize,
    pub d: usize,
    pub table: Vec<f64>,
}

impl PositionalEncoding {
    /// Even columns `sin(t / 10000^(i/d))`, odd columns `cos(t / 10000^((i-1)/d))`.
    pub fn new(t_max: usize, d: usize) -> Result<Self> {
        if d == 0 || d % 2 != 0 {
            return Err(Error::Config(format!("model dimension must be even, got {d}")));
        }
        let mut table = Vec::with_capacity(t_max * d);
        for t in 0..t_max {
            for i in 0..d {
                let even = i - i % 2;
                let angle = t as f64 / 10000f64.powf(even as f64 / d as f64);
                table.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
            }
        }
        Ok(Self { t_max, d, table })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.table[t * self.d..(t + 1) * self.d]
    }
}

/// Per-feature standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::shape("Normalizer", mean.len(), std.len()));
        }
        if let Some(f) = std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::ZeroStd(f));
        }
        Ok(Self { mean, std })
    }

    /// Mean and population standard deviation over valid entries.
    pub fn fit(scenes: &[Scene]) -> Result<Self> {
        let f = scenes.first().ok_or(Error::Empty("normalizer fit"))?.n_features;
        let mut count = 0usize;
        let mut sum = vec![0.0; f];
        for s in scenes {
            for n in 0..s.n_agents {
                for t in 0..s.valid_len[n] {
                    for (acc, v) in sum.iter_mut().zip(s.point(n, t)) {
                        *acc += v;
                    }
                    count += 1;
                }
            }
        }
        if count == 0 {
            return Err(Error::Empty("normalizer fit"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; f];
        for s in scenes {
            for n in 0..s.n_agents {
                for t in 0..s.valid_len[n] {
                    for ((acc, v), m) in sq.iter_mut().zip(s.point(n, t)).zip(&mean) {
                        *acc += (v - m) * (v - m);
                    }
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Self::new(mean, std)
    }

    pub fn normalize_point(&self, p: &mut [f64]) {
        for ((v, m), s) in p.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn denormalize_point(&self, p: &mut [f64]) {
        for ((v, m), s) in p.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }

    fn map_valid(&self, scene: &Scene, f: impl Fn(&Self, &mut [f64])) -> Scene {
        let mut out = scene.clone();
        for n in 0..scene.n_agents {
            for t in 0..scene.valid_len[n] {
                f(self, out.point_mut(n, t));
            }
        }
        out
    }

    /// `(x - mean) / std` on valid entries; padding stays zero.
    pub fn normalize(&self, scene: &Scene) -> Scene {
        self.map_valid(scene, Self::normalize_point)
    }

    pub fn denormalize(&self, scene: &Scene) -> Scene {
        self.map_valid(scene, Self::denormalize_point)
    }
}

/// Scenes padded to a common agent count and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub batch_size: usize,
    pub n_agents: usize,
    pub n_steps: usize,
    pub n_features: usize,
    /// `(batch, agent, time, feature)` row-major.
    pub data: Vec<f64>,
    /// `(batch, agent)`; zero for padding agents.
    pub valid_len: Vec<usize>,
    pub start_step: Vec<usize>,
    pub masks: Vec<SceneMask>,
}

impl Batch {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.batch_size, self.n_agents, self.n_steps, self.n_features)
    }

    pub fn view(&self, b: usize) -> SceneView<'_> {
        let block = self.n_agents * self.n_steps * self.n_features;
        SceneView {
            n_agents: self.n_agents,
            n_steps: self.n_steps,
            n_features: self.n_features,
            data: &self.data[b * block..(b + 1) * block],
            valid_len: &self.valid_len[b * self.n_agents..(b + 1) * self.n_agents],
            start_step: &self.start_step[b * self.n_agents..(b + 1) * self.n_agents],
        }
    }
}

pub fn batch(scenes: &[Scene]) -> Result<Batch> {
    let first = scenes.first().ok_or(Error::Empty("batch"))?;
    let f = first.n_features;
    if scenes.iter().any(|s| s.n_features != f) {
        return Err(Error::Config("scenes in a batch must share the feature count".into()));
    }
    let n_max = scenes.iter().map(|s| s.n_agents).max().unwrap_or(0);
    let t_max = scenes.iter().map(|s| s.n_steps).max().unwrap_or(0);
    let b = scenes.len();
    let mut data = vec![0.0; b * n_max * t_max * f];
    let mut valid_len = vec![0; b * n_max];
    let mut start_step = vec![0; b * n_max];
    for (bi, s) in scenes.iter().enumerate() {
        for n in 0..s.n_agents {
            valid_len[bi * n_max + n] = s.valid_len[n];
            start_step[bi * n_max + n] = s.start_step[n];
            for t in 0..s.valid_len[n] {
                let dst = ((bi * n_max + n) * t_max + t) * f;
                data[dst..dst + f].copy_from_slice(s.point(n, t));
            }
        }
    }
    let mut out = Batch {
        batch_size: b,
        n_agents: n_max,
        n_steps: t_max,
        n_features: f,
        data,
        valid_len,
        start_step,
        masks: Vec::new(),
    };
    out.masks = (0..b).map(|i| build_masks(&out.view(i))).collect();
    Ok(out)
}

#[cfg(test)]
mod tests;
