//! Seeded synthetic arrival traffic for terminal airspace.
//!
//! Flights enter at fixes on a ring just outside the 70 nm boundary, follow
//! a per-fix route template down to a final approach fix on the runway's
//! extended centerline, and are sampled at irregular 4-12 s intervals.
//! Followers on the same entry fix keep at least `separation_s` behind
//! their leader at every point of the route: the follower's time to reach
//! route progress `u` is `max(own(u), leader(u) + separation)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use chrono::{DateTime, Datelike, NaiveDate};
#[allow(unused_imports)] // inherent methods win when std is linked
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use crate::error::{Error, Result};
use crate::geo::{bearing, destination, horizontal_error, RawSample, RawTrack, DEFAULT_CUTOFF_NM};

/// 2019-01-01T00:00:00Z; day 0 of every generated dataset.
pub const EPOCH_START: i64 = 1_546_300_800;

/// Grid points along each route used for timing and separation.
const PROGRESS_STEPS: usize = 400;

/// Points along each route where a flight's speed factor is drawn.
pub const SPEED_KNOTS: usize = 5;

/// A point given by true bearing and range from the airport reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub bearing_deg: f64,
    pub range_nm: f64,
}

impl Waypoint {
    pub const fn new(bearing_deg: f64, range_nm: f64) -> Self {
        Self {
            bearing_deg,
            range_nm,
        }
    }
}

/// Standard deviations of per-flight and per-sample perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Cross-track offset of each route waypoint.
    pub lateral_nm: f64,
    /// Altitude offset of each route waypoint.
    pub vertical_ft: f64,
    /// Relative ground-speed factor, drawn per flight at
    /// [`SPEED_KNOTS`] evenly spaced points along the route and
    /// interpolated in between (speed instructions en route).
    pub speed_frac: f64,
    /// Surveillance noise on every reported position.
    pub measurement_nm: f64,
    pub measurement_ft: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            lateral_nm: 0.8,
            vertical_ft: 300.0,
            speed_frac: 0.06,
            measurement_nm: 0.02,
            measurement_ft: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirportSpec {
    pub name: String,
    pub ref_point: (f64, f64),
    pub runway_heading_deg: f64,
    pub entry_fixes: Vec<Waypoint>,
    /// Waypoints after each entry fix, ending at the final approach fix.
    pub route_templates: Vec<Vec<Waypoint>>,
    /// `(distance to go in nm, ground speed in kt)`, ascending distance.
    pub speed_profile: Vec<(f64, f64)>,
    /// `(distance to go in nm, altitude in ft)`, ascending distance.
    pub descent_profile: Vec<(f64, f64)>,
    pub arrival_rate_per_h: f64,
    pub separation_s: f64,
    /// Daily window of arrivals at the entry fixes, hours UTC.
    pub active_hours: (f64, f64),
    pub noise: NoiseSpec,
}

/// Entry fixes may sit this far outside the cutoff radius.
pub const ENTRY_MARGIN_NM: f64 = 8.0;

impl AirportSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("airport {}: {m}", self.name)));
        if !(self.arrival_rate_per_h > 0.0) {
            return bad(format!("arrival rate must be positive"));
        }
        if self.entry_fixes.is_empty() || self.entry_fixes.len() != self.route_templates.len() {
            return bad(format!("need one route template per entry fix"));
        }
        for fix in &self.entry_fixes {
            if fix.range_nm <= DEFAULT_CUTOFF_NM || fix.range_nm > DEFAULT_CUTOFF_NM + ENTRY_MARGIN_NM {
                return bad(format!("entry range {} outside the boundary ring", fix.range_nm));
            }
        }
        if self.route_templates.iter().any(|r| r.is_empty()) {
            return bad(format!("empty route template"));
        }
        for profile in [&self.speed_profile, &self.descent_profile] {
            if profile.is_empty() || profile.windows(2).any(|w| w[1].0 <= w[0].0) {
                return bad(format!("profiles need ascending distances"));
            }
        }
        if self.speed_profile.iter().any(|p| p.1 <= 0.0) {
            return bad(format!("speeds must be positive"));
        }
        let (h0, h1) = self.active_hours;
        if !(0.0 <= h0 && h0 < h1 && h1 <= 24.0) {
            return bad(format!("active hours must satisfy 0 <= start < end <= 24"));
        }
        if self.separation_s < 0.0 {
            return bad(format!("separation must be non-negative"));
        }
        Ok(())
    }

    /// Mean bearing of the entry fixes' first route waypoints.
    pub fn route_bearings(&self) -> Vec<f64> {
        self.entry_fixes.iter().map(|f| f.bearing_deg).collect()
    }
}

/// Timing of one generated flight.
#[derive(Debug, Clone, PartialEq)]
pub struct Flight {
    pub flight_id: String,
    pub fix: usize,
    /// Seconds since the day start at which the flight reaches progress
    /// `j / PROGRESS_STEPS` of its route.
    pub progress_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrafficDay {
    pub date: NaiveDate,
    /// Unix time of the day's midnight.
    pub day_start: i64,
    /// Sorted by first timestamp.
    pub tracks: Vec<RawTrack>,
    pub flights: Vec<Flight>,
}

impl TrafficDay {
    /// Pairs of consecutive same-fix flights closer than `separation_s`
    /// anywhere along the route.
    pub fn separation_violations(&self, separation_s: f64) -> usize {
        let mut last: Vec<Option<&Flight>> = Vec::new();
        let mut count = 0;
        let mut by_entry: Vec<&Flight> = self.flights.iter().collect();
        by_entry.sort_by(|a, b| a.progress_times[0].total_cmp(&b.progress_times[0]));
        for f in by_entry {
            if last.len() <= f.fix {
                last.resize(f.fix + 1, None);
            }
            if let Some(lead) = last[f.fix] {
                let close = f
                    .progress_times
                    .iter()
                    .zip(&lead.progress_times)
                    .any(|(a, b)| a - b < separation_s - 1e-6);
                count += usize::from(close);
            }
            last[f.fix] = Some(f);
        }
        count
    }
}

fn interp(profile: &[(f64, f64)], x: f64) -> f64 {
    let first = profile[0];
    if x <= first.0 {
        return first.1;
    }
    for w in profile.windows(2) {
        if x <= w[1].0 {
            let f = (x - w[0].0) / (w[1].0 - w[0].0);
            return w[0].1 + f * (w[1].1 - w[0].1);
        }
    }
    profile[profile.len() - 1].1
}

fn clipped_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    if std <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, std).expect("positive std");
    n.sample(rng).clamp(-3.0 * std, 3.0 * std)
}

/// A flight's noisy polyline with cumulative distance and altitude offsets.
struct Path {
    points: Vec<(f64, f64)>,
    cum: Vec<f64>,
    alt_offset: Vec<f64>,
}

impl Path {
    fn length(&self) -> f64 {
        self.cum[self.cum.len() - 1]
    }

    /// Position and altitude offset at along-track distance `s`.
    fn at(&self, s: f64) -> ((f64, f64), f64) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.iter().position(|&c| c >= s) {
            Some(0) | None => 1.min(self.cum.len() - 1),
            Some(i) => i,
        };
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let f = if c1 > c0 { (s - c0) / (c1 - c0) } else { 1.0 };
        let (a, b) = (self.points[i - 1], self.points[i]);
        let pos = (a.0 + f * (b.0 - a.0), a.1 + f * (b.1 - a.1));
        let off = self.alt_offset[i - 1] + f * (self.alt_offset[i] - self.alt_offset[i - 1]);
        (pos, off)
    }
}

fn build_path<R: Rng + ?Sized>(spec: &AirportSpec, fix: usize, rng: &mut R) -> Path {
    let nominal: Vec<(f64, f64)> = core::iter::once(&spec.entry_fixes[fix])
        .chain(&spec.route_templates[fix])
        .map(|w| destination(spec.ref_point, w.bearing_deg, w.range_nm))
        .collect();
    let last = nominal.len() - 1;
    let mut points = Vec::with_capacity(nominal.len());
    let mut alt_offset = Vec::with_capacity(nominal.len());
    for (i, &p) in nominal.iter().enumerate() {
        if i == last {
            points.push(p);
            alt_offset.push(0.0);
            continue;
        }
        let course = bearing(p, nominal[i + 1]);
        let off = clipped_normal(rng, spec.noise.lateral_nm);
        points.push(destination(p, course + 90.0, off));
        alt_offset.push(clipped_normal(rng, spec.noise.vertical_ft));
    }
    let mut cum = vec![0.0];
    for w in points.windows(2) {
        let prev = cum[cum.len() - 1];
        cum.push(prev + horizontal_error(w[0], w[1]));
    }
    Path {
        points,
        cum,
        alt_offset,
    }
}

fn date_of(day_start: i64) -> NaiveDate {
    DateTime::from_timestamp(day_start, 0)
        .expect("timestamp in range")
        .date_naive()
}

/// One day of traffic; `day` counts from [`EPOCH_START`].
pub fn generate_day(spec: &AirportSpec, day: u32, seed: u64) -> Result<TrafficDay> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from(day) + 1);
    let day_start = EPOCH_START + i64::from(day) * 86_400;
    let date = date_of(day_start);

    let gaps = Exp::new(spec.arrival_rate_per_h / 3600.0).expect("positive rate");
    let (start, end) = (spec.active_hours.0 * 3600.0, spec.active_hours.1 * 3600.0);
    let mut arrivals = Vec::new();
    let mut t = start;
    loop {
        t += gaps.sample(&mut rng);
        if t >= end {
            break;
        }
        arrivals.push((t, rng.random_range(0..spec.entry_fixes.len())));
    }

    let mut leaders: Vec<Option<Vec<f64>>> = vec![None; spec.entry_fixes.len()];
    let mut flights = Vec::with_capacity(arrivals.len());
    let mut tracks = Vec::with_capacity(arrivals.len());
    for (k, &(entry, fix)) in arrivals.iter().enumerate() {
        let flight_id = format!(
            "{}{:04}{:02}{:02}{:03}",
            spec.name,
            date.year(),
            date.month(),
            date.day(),
            k
        );
        let path = build_path(spec, fix, &mut rng);
        let knots: Vec<(f64, f64)> = (0..SPEED_KNOTS)
            .map(|k| {
                let u = k as f64 / (SPEED_KNOTS - 1) as f64;
                (u, 1.0 + clipped_normal(&mut rng, spec.noise.speed_frac))
            })
            .collect();
        let length = path.length();
        let ds = length / PROGRESS_STEPS as f64;
        let mut times = Vec::with_capacity(PROGRESS_STEPS + 1);
        let mut own = entry;
        times.push(own);
        for j in 0..PROGRESS_STEPS {
            let to_go = length - (j as f64 + 0.5) * ds;
            let factor = interp(&knots, (j as f64 + 0.5) / PROGRESS_STEPS as f64);
            own += ds / (interp(&spec.speed_profile, to_go) * factor) * 3600.0;
            times.push(own);
        }
        if let Some(lead) = &leaders[fix] {
            for (t, l) in times.iter_mut().zip(lead) {
                *t = t.max(l + spec.separation_s);
            }
        }
        leaders[fix] = Some(times.clone());

        let position = |t: f64| -> ((f64, f64), f64) {
            let j = times.partition_point(|&x| x <= t).clamp(1, PROGRESS_STEPS);
            let (t0, t1) = (times[j - 1], times[j]);
            let f = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 1.0 };
            let s = (j as f64 - 1.0 + f) * ds;
            let (pos, off) = path.at(s);
            (pos, interp(&spec.descent_profile, length - s) + off)
        };
        let t_end = times[PROGRESS_STEPS];
        let mut samples = Vec::new();
        let mut ts = entry.ceil();
        while ts < t_end {
            let ((lon, lat), alt) = position(ts);
            let noise_lat = clipped_normal(&mut rng, spec.noise.measurement_nm) / 60.0;
            let noise_lon = clipped_normal(&mut rng, spec.noise.measurement_nm)
                / (60.0 * lat.to_radians().cos());
            samples.push(RawSample {
                t: day_start + ts as i64,
                lon: lon + noise_lon,
                lat: lat + noise_lat,
                alt: alt + clipped_normal(&mut rng, spec.noise.measurement_ft),
            });
            ts += f64::from(rng.random_range(4u8..=12));
        }
        let final_t = day_start + t_end.ceil() as i64;
        let final_t = samples.last().map_or(final_t, |s| final_t.max(s.t + 1));
        let (lon, lat) = path.points[path.points.len() - 1];
        samples.push(RawSample {
            t: final_t,
            lon,
            lat,
            alt: interp(&spec.descent_profile, 0.0),
        });
        tracks.push(RawTrack {
            flight_id: flight_id.clone(),
            samples,
        });
        flights.push(Flight {
            flight_id,
            fix,
            progress_times: times,
        });
    }
    tracks.sort_by(|a, b| {
        a.samples[0]
            .t
            .cmp(&b.samples[0].t)
            .then_with(|| a.flight_id.cmp(&b.flight_id))
    });
    Ok(TrafficDay {
        date,
        day_start,
        tracks,
        flights,
    })
}

/// `days` consecutive days starting at [`EPOCH_START`].
pub fn generate(spec: &AirportSpec, days: u32, seed: u64) -> Result<Vec<TrafficDay>> {
    (0..days).map(|d| generate_day(spec, d, seed)).collect()
}

fn wrap(deg: f64) -> f64 {
    let r = deg % 360.0;
    if r < 0.0 {
        r + 360.0
    } else {
        r
    }
}

/// Signed smallest angle from `b` to `a`, degrees in `(-180, 180]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = wrap(a - b);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Entry fixes at `entry_range` on the given bearings, each routed over a
/// 40 nm waypoint and a base point beside the final approach course to an
/// intercept and the final approach fix 6 nm out.
pub fn terminal_routes(
    fix_bearings: &[f64],
    runway_heading_deg: f64,
    entry_range: f64,
) -> (Vec<Waypoint>, Vec<Vec<Waypoint>>) {
    let final_bearing = wrap(runway_heading_deg + 180.0);
    let fixes = fix_bearings
        .iter()
        .map(|&b| Waypoint::new(wrap(b), entry_range))
        .collect();
    let routes = fix_bearings
        .iter()
        .map(|&b| {
            let side = if angle_diff(b, final_bearing) >= 0.0 { 1.0 } else { -1.0 };
            vec![
                Waypoint::new(wrap(b), 40.0),
                Waypoint::new(wrap(final_bearing + side * 35.0), 17.0),
                Waypoint::new(final_bearing, 11.0),
                Waypoint::new(final_bearing, 6.0),
            ]
        })
        .collect();
    (fixes, routes)
}

fn default_speeds(scale: f64) -> Vec<(f64, f64)> {
    [(0.0, 150.0), (6.0, 160.0), (15.0, 190.0), (30.0, 230.0), (50.0, 260.0), (200.0, 280.0)]
        .iter()
        .map(|&(d, v)| (d, v * scale))
        .collect()
}

fn default_descent() -> Vec<(f64, f64)> {
    vec![(0.0, 2000.0), (10.0, 3500.0), (30.0, 9000.0), (60.0, 14000.0), (200.0, 16000.0)]
}

/// Three airports: `a` large, `b` operating like `a` around a different
/// reference point, `c` with entry routes between those of `a`, the
/// opposite runway direction and fewer arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct AirportFamily {
    pub a: AirportSpec,
    pub b: AirportSpec,
    pub c: AirportSpec,
}

/// Default day counts giving scene counts ordered `a > b > c`.
pub const FAMILY_DAYS: (u32, u32, u32) = (60, 20, 20);

pub fn make_airport_family(seed: u64) -> AirportFamily {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixes_a = [30.0, 120.0, 250.0];
    let runway_a = 330.0;
    let (entry_fixes, route_templates) = terminal_routes(&fixes_a, runway_a, 74.0);
    let a = AirportSpec {
        name: "A".into(),
        ref_point: (10.0, 45.0),
        runway_heading_deg: runway_a,
        entry_fixes,
        route_templates,
        speed_profile: default_speeds(1.0),
        descent_profile: default_descent(),
        arrival_rate_per_h: 24.0,
        separation_s: 180.0,
        active_hours: (6.0, 9.0),
        noise: NoiseSpec::default(),
    };

    let tilt = rng.random_range(-8.0..8.0);
    let fixes_b: Vec<f64> = fixes_a.iter().map(|b| b + tilt).collect();
    let (entry_fixes, route_templates) = terminal_routes(&fixes_b, runway_a + tilt, 73.0);
    let b = AirportSpec {
        name: "B".into(),
        ref_point: (11.3 + rng.random_range(-0.2..0.2), 45.4 + rng.random_range(-0.2..0.2)),
        runway_heading_deg: wrap(runway_a + tilt),
        entry_fixes,
        route_templates,
        speed_profile: default_speeds(0.97),
        arrival_rate_per_h: 24.0,
        ..a.clone()
    };

    // entry bearings in the widest gaps between the fixes of `a`
    let turn = rng.random_range(-3.0..3.0);
    let runway_c = wrap(runway_a + 180.0 + turn);
    let fixes_c = [185.0 + turn, 320.0 + turn];
    let (entry_fixes, route_templates) = terminal_routes(&fixes_c, runway_c, 75.0);
    let c = AirportSpec {
        name: "C".into(),
        ref_point: (14.5, 41.0),
        runway_heading_deg: runway_c,
        entry_fixes,
        route_templates,
        speed_profile: default_speeds(0.92),
        descent_profile: vec![(0.0, 1800.0), (10.0, 3000.0), (30.0, 7000.0), (60.0, 12000.0), (200.0, 14000.0)],
        arrival_rate_per_h: 18.0,
        separation_s: 240.0,
        active_hours: (14.0, 16.5),
        noise: NoiseSpec {
            speed_frac: 0.08,
            ..NoiseSpec::default()
        },
        ..a.clone()
    };
    AirportFamily { a, b, c }
}

#[cfg(test)]
mod tests;
