//! Trajectory reconstruction, resampling and geodesic error metrics.
//!
//! Raw surveillance tracks arrive at irregular instants. [`reconstruct`]
//! fills a 1 s grid by regularized least squares: for each coordinate it
//! minimizes `|C p - p_obs|^2 + l2 |D2 p|^2 + l3 |D3 p|^2`, where `C` selects
//! the observed instants and `D2`/`D3` are second and third differences. The
//! normal equations are symmetric banded (bandwidth 3) and are solved by a
//! banded Cholesky factorization in O(t). [`resample_and_cut`] then keeps
//! every `dt`-th second and drops everything before the final inbound
//! crossing of the cutoff radius.

pub mod banded;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;

use crate::error::{Error, Result};
use banded::SymBanded;

/// Mean Earth radius in nautical miles.
pub const EARTH_RADIUS_NM: f64 = 3440.065;

pub const DEFAULT_DT_S: i64 = 10;
pub const DEFAULT_CUTOFF_NM: f64 = 70.0;

const SECOND_DIFF: [f64; 3] = [1.0, -2.0, 1.0];
const THIRD_DIFF: [f64; 4] = [-1.0, 3.0, -3.0, 1.0];
const PIVOT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawSample {
    /// Seconds since the Unix epoch.
    pub t: i64,
    pub lon: f64,
    pub lat: f64,
    /// Feet.
    pub alt: f64,
}

/// One flight as recorded: irregular, possibly sparse samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrack {
    pub flight_id: String,
    pub samples: Vec<RawSample>,
}

impl RawTrack {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidTrack {
            flight_id: self.flight_id.clone(),
            reason,
        };
        if self.samples.len() < 2 {
            return Err(bad(format!("{} samples, need at least 2", self.samples.len())));
        }
        for w in self.samples.windows(2) {
            if w[1].t <= w[0].t {
                return Err(bad(format!("timestamps not increasing at t={}", w[1].t)));
            }
        }
        for s in &self.samples {
            if !(s.lon.is_finite() && s.lat.is_finite() && s.alt.is_finite()) {
                return Err(bad(format!("non-finite sample at t={}", s.t)));
            }
            if !(-180.0..=180.0).contains(&s.lon) || !(-90.0..=90.0).contains(&s.lat) {
                return Err(bad(format!("coordinate out of range at t={}", s.t)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionConfig {
    pub lambda2: f64,
    pub lambda3: f64,
}

impl ReconstructionConfig {
    pub fn new(lambda2: f64, lambda3: f64) -> Result<Self> {
        if !(lambda2 >= 0.0 && lambda3 >= 0.0) || !lambda2.is_finite() || !lambda3.is_finite() {
            return Err(Error::Config(format!(
                "smoothing weights must be finite and non-negative (got {lambda2}, {lambda3})"
            )));
        }
        Ok(Self { lambda2, lambda3 })
    }
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            lambda2: 1.0,
            lambda3: 0.1,
        }
    }
}

/// Positions on a 1 s grid starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrack {
    pub flight_id: String,
    pub t0: i64,
    /// `(lon, lat, alt)` per second.
    pub points: Vec<[f64; 3]>,
}

/// Evenly sampled, range-limited arrival.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub flight_id: String,
    pub t0: i64,
    pub dt: i64,
    pub points: Vec<[f64; 3]>,
    /// `(lon, lat)` of the airport.
    pub airport_ref: (f64, f64),
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn time_at(&self, i: usize) -> i64 {
        self.t0 + i as i64 * self.dt
    }

    pub fn end_time(&self) -> i64 {
        self.time_at(self.points.len().saturating_sub(1))
    }
}

/// Minimizes `|C p - obs|^2 + l2 |D2 p|^2 + l3 |D3 p|^2` for one coordinate.
///
/// `observed[i]` is `Some(value)` where the grid instant was recorded.
/// Returns `None` when the normal equations are singular.
pub fn smooth_coordinate(observed: &[Option<f64>], lambda2: f64, lambda3: f64) -> Option<Vec<f64>> {
    let factor = normal_matrix(observed, lambda2, lambda3)
        .cholesky(PIVOT_REL_TOL)
        .ok()?;
    let mut rhs: Vec<f64> = observed.iter().map(|o| o.unwrap_or(0.0)).collect();
    factor.solve_in_place(&mut rhs);
    Some(rhs)
}

/// `C^T C + l2 D2^T D2 + l3 D3^T D3` in banded storage.
pub fn normal_matrix(observed: &[Option<f64>], lambda2: f64, lambda3: f64) -> SymBanded {
    let n = observed.len();
    let mut a = SymBanded::zeros(n, 3);
    for (i, o) in observed.iter().enumerate() {
        if o.is_some() {
            a.add(i, i, 1.0);
        }
    }
    a.add_gram_of_stencil(&SECOND_DIFF, lambda2);
    a.add_gram_of_stencil(&THIRD_DIFF, lambda3);
    a
}

/// Reconstructs a raw track on a 1 s grid spanning its first to last sample.
pub fn reconstruct(track: &RawTrack, cfg: &ReconstructionConfig) -> Result<DenseTrack> {
    track.validate()?;
    let t0 = track.samples[0].t;
    let t_last = track.samples[track.samples.len() - 1].t;
    let n = (t_last - t0 + 1) as usize;
    let mut columns = [vec![None; n], vec![None; n], vec![None; n]];
    for s in &track.samples {
        let i = (s.t - t0) as usize;
        columns[0][i] = Some(s.lon);
        columns[1][i] = Some(s.lat);
        columns[2][i] = Some(s.alt);
    }
    let system = normal_matrix(&columns[0], cfg.lambda2, cfg.lambda3);
    let factor = system
        .cholesky(PIVOT_REL_TOL)
        .map_err(|_| Error::UnderdeterminedReconstruction(track.flight_id.clone()))?;
    let mut points = vec![[0.0; 3]; n];
    for (c, col) in columns.iter().enumerate() {
        let mut rhs: Vec<f64> = col.iter().map(|o| o.unwrap_or(0.0)).collect();
        factor.solve_in_place(&mut rhs);
        for (p, v) in points.iter_mut().zip(rhs) {
            p[c] = v;
        }
    }
    Ok(DenseTrack {
        flight_id: track.flight_id.clone(),
        t0,
        points,
    })
}

/// Keeps grid instants that are multiples of `dt` (epoch-aligned), then drops
/// every point before the final inbound crossing of `cutoff_nm` around
/// `airport_ref`. Points at exactly `cutoff_nm` are retained.
pub fn resample_and_cut(
    positions: &DenseTrack,
    dt: i64,
    airport_ref: (f64, f64),
    cutoff_nm: f64,
) -> Result<Trajectory> {
    if dt < 1 {
        return Err(Error::Config(format!("sample period must be >= 1 s, got {dt}")));
    }
    let first = (0..positions.points.len()).find(|&i| (positions.t0 + i as i64).rem_euclid(dt) == 0);
    let Some(first) = first else {
        return Err(Error::TrajectoryTooShort(positions.flight_id.clone()));
    };
    let sampled: Vec<[f64; 3]> = positions.points[first..]
        .iter()
        .step_by(dt as usize)
        .copied()
        .collect();
    let outside = sampled
        .iter()
        .rposition(|p| horizontal_error((p[0], p[1]), airport_ref) > cutoff_nm);
    let keep_from = outside.map_or(0, |i| i + 1);
    let points: Vec<[f64; 3]> = sampled[keep_from..].to_vec();
    if points.len() < 2 {
        return Err(Error::TrajectoryTooShort(positions.flight_id.clone()));
    }
    Ok(Trajectory {
        flight_id: positions.flight_id.clone(),
        t0: positions.t0 + (first + keep_from * dt as usize) as i64,
        dt,
        points,
        airport_ref,
    })
}

/// Great-circle (haversine) distance in nautical miles between `(lon, lat)`
/// pairs in degrees.
pub fn horizontal_error(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let s_lat = ((lat2 - lat1) / 2.0).sin();
    let s_lon = ((lon2 - lon1) / 2.0).sin();
    let h = s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon;
    2.0 * EARTH_RADIUS_NM * h.sqrt().min(1.0).asin()
}

/// Absolute altitude difference in feet.
pub fn vertical_error(a_alt: f64, b_alt: f64) -> f64 {
    (a_alt - b_alt).abs()
}

/// Point at `range_nm` along true bearing `bearing_deg` from `origin`
/// (spherical destination formula).
pub fn destination(origin: (f64, f64), bearing_deg: f64, range_nm: f64) -> (f64, f64) {
    let delta = range_nm / EARTH_RADIUS_NM;
    let theta = bearing_deg.to_radians();
    let (lon1, lat1) = (origin.0.to_radians(), origin.1.to_radians());
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos()).asin();
    let lon2 = lon1
        + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    (lon2.to_degrees(), lat2.to_degrees())
}

/// Initial true bearing in degrees `[0, 360)` from `a` to `b`.
pub fn bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let y = (lon2 - lon1).sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * (lon2 - lon1).cos();
    let deg = y.atan2(x).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}
