//! Binary scene container.
//!
//! All integers and floats little-endian.
//!
//! ```text
//! magic      8 bytes  "MABSCENE"
//! version    u32      1
//! count      u32      number of scenes
//! per scene:
//!   n_agents u32, n_steps u32, n_features u32, dt i64, window_start i64
//!   valid_len       n_agents x u32
//!   start_step      n_agents x u32
//!   time_to_arrival n_agents x f64   seconds
//!   agent ids       n_agents x (u16 byte length, UTF-8 bytes)
//!   payload         n_agents * n_steps * n_features x f32, row-major
//!                   (agent, time, feature)
//! ```

use anyhow::{bail, ensure, Context, Result};
use mabert_core::scene::Scene;

pub const MAGIC: &[u8; 8] = b"MABSCENE";
pub const VERSION: u32 = 1;

pub fn encode_scenes(scenes: &[Scene]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(scenes.len() as u32).to_le_bytes());
    for s in scenes {
        for v in [s.n_agents, s.n_steps, s.n_features] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&s.dt.to_le_bytes());
        out.extend_from_slice(&s.window_start.to_le_bytes());
        for &v in &s.valid_len {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in &s.start_step {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for &v in &s.time_to_arrival {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for id in &s.agent_ids {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for &v in &s.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("truncated at byte {} (need {n} more)", self.pos);
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
}

pub fn decode_scenes(bytes: &[u8]) -> Result<Vec<Scene>> {
    let mut c = Cursor { bytes, pos: 0 };
    ensure!(c.take(8)? == MAGIC, "not a scene container");
    let version = c.u32()?;
    ensure!(version == VERSION, "unsupported scene container version {version}");
    let count = c.usize()?;
    let mut scenes = Vec::with_capacity(count.min(1 << 16));
    for k in 0..count {
        let scene = (|| -> Result<Scene> {
            let (n, t, f) = (c.usize()?, c.usize()?, c.usize()?);
            let dt = c.i64()?;
            let window_start = c.i64()?;
            let valid_len = (0..n).map(|_| c.usize()).collect::<Result<Vec<_>>>()?;
            let start_step = (0..n).map(|_| c.usize()).collect::<Result<Vec<_>>>()?;
            let time_to_arrival = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
            let agent_ids = (0..n)
                .map(|_| {
                    let len = c.u16()? as usize;
                    Ok(String::from_utf8(c.take(len)?.to_vec())?)
                })
                .collect::<Result<Vec<_>>>()?;
            let size = n
                .checked_mul(t)
                .and_then(|v| v.checked_mul(f))
                .context("scene size overflows")?;
            ensure!(size * 4 <= bytes.len(), "scene payload larger than file");
            let data = (0..size)
                .map(|_| c.f32().map(f64::from))
                .collect::<Result<Vec<_>>>()?;
            let scene = Scene {
                window_start,
                dt,
                n_agents: n,
                n_steps: t,
                n_features: f,
                data,
                valid_len,
                start_step,
                time_to_arrival,
                agent_ids,
            };
            scene.validate()?;
            Ok(scene)
        })()
        .with_context(|| format!("scene {k}"))?;
        scenes.push(scene);
    }
    ensure!(c.pos == bytes.len(), "{} trailing bytes", bytes.len() - c.pos);
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Scene {
        let (n, t, f) = (2, 3, 3);
        Scene {
            window_start: 1_546_300_800,
            dt: 10,
            n_agents: n,
            n_steps: t,
            n_features: f,
            data: (0..n * t * f).map(|i| if i < 15 { i as f64 * 0.5 } else { 0.0 }).collect(),
            valid_len: vec![3, 2],
            start_step: vec![0, 1],
            time_to_arrival: vec![0.0, 120.0],
            agent_ids: vec!["A1".into(), "Bé2".into()],
        }
    }

    #[test]
    fn round_trip_exact_for_f32_values() {
        let scenes = vec![scene(), scene()];
        let bytes = encode_scenes(&scenes);
        assert_eq!(decode_scenes(&bytes).unwrap(), scenes);
        assert_eq!(encode_scenes(&decode_scenes(&bytes).unwrap()), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_scenes(&[scene()]);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), VERSION);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2);
        // payload is the last n*t*f f32 values
        let tail = &bytes[bytes.len() - 18 * 4..];
        assert_eq!(f32::from_le_bytes(tail[4..8].try_into().unwrap()), 0.5);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_scenes(&[scene()]);
        assert!(decode_scenes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode_scenes(&bad).is_err());
        assert!(decode_scenes(b"NOTSCENE").is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_scenes(&extra).is_err());
    }
}
