use super::*;
use crate::geo::{reconstruct, resample_and_cut, ReconstructionConfig, DEFAULT_DT_S};
use crate::scene::assemble_scenes;

fn family() -> AirportFamily {
    make_airport_family(7)
}

fn total_flights(days: &[TrafficDay]) -> usize {
    days.iter().map(|d| d.tracks.len()).sum()
}

#[test]
fn same_seed_same_traffic() {
    let a = family().a;
    assert_eq!(generate(&a, 3, 11).unwrap(), generate(&a, 3, 11).unwrap());
    assert_ne!(generate(&a, 1, 11).unwrap(), generate(&a, 1, 12).unwrap());
    assert_eq!(make_airport_family(3), make_airport_family(3));
}

#[test]
fn days_are_independent_of_count() {
    let a = family().a;
    let five = generate(&a, 5, 2).unwrap();
    let two = generate(&a, 2, 2).unwrap();
    assert_eq!(&five[..2], &two[..]);
    assert_eq!(five[4].date, NaiveDate::from_ymd_opt(2019, 1, 5).unwrap());
}

#[test]
fn doubling_rate_doubles_traffic() {
    let a = family().a;
    let mut double = a.clone();
    double.arrival_rate_per_h *= 2.0;
    let base = total_flights(&generate(&a, 30, 5).unwrap()) as f64;
    let more = total_flights(&generate(&double, 30, 5).unwrap()) as f64;
    let ratio = more / base;
    assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    // expected count within 10%
    let expected = 30.0 * 3.0 * a.arrival_rate_per_h;
    assert!((base - expected).abs() < 0.1 * expected, "{base} vs {expected}");
}

#[test]
fn tracks_stay_in_terminal_area_and_end_near_runway() {
    let fam = family();
    for spec in [&fam.a, &fam.b, &fam.c] {
        for day in generate(spec, 2, 1).unwrap() {
            assert!(!day.tracks.is_empty());
            for tr in &day.tracks {
                tr.validate().unwrap();
                for s in &tr.samples {
                    let r = horizontal_error((s.lon, s.lat), spec.ref_point);
                    assert!(r <= DEFAULT_CUTOFF_NM + 10.0, "{} at {r} nm", tr.flight_id);
                    assert!(s.alt > 0.0);
                }
                let last = tr.samples.last().unwrap();
                assert!(horizontal_error((last.lon, last.lat), spec.ref_point) < 8.0);
                let gaps: Vec<i64> = tr.samples.windows(2).map(|w| w[1].t - w[0].t).collect();
                assert!(gaps.iter().all(|&g| g >= 1 && g <= 12));
            }
            let firsts: Vec<i64> = day.tracks.iter().map(|t| t.samples[0].t).collect();
            assert!(firsts.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}

#[test]
fn no_separation_violations() {
    let fam = family();
    for spec in [&fam.a, &fam.b, &fam.c] {
        for day in generate(spec, 10, 3).unwrap() {
            assert_eq!(day.separation_violations(spec.separation_s), 0);
        }
    }
}

#[test]
fn separation_is_binding_for_some_flights() {
    let a = family().a;
    let mut free = a.clone();
    free.separation_s = 0.0;
    let days = generate(&free, 5, 3).unwrap();
    let violations: usize = days.iter().map(|d| d.separation_violations(a.separation_s)).sum();
    assert!(violations > 0);
}

#[test]
fn every_track_reconstructs_and_resamples() {
    let fam = family();
    let cfg = ReconstructionConfig::default();
    for spec in [&fam.a, &fam.c] {
        let day = generate_day(spec, 0, 9).unwrap();
        let mut trajs = Vec::new();
        for tr in &day.tracks {
            let dense = reconstruct(tr, &cfg).unwrap();
            let traj = resample_and_cut(&dense, DEFAULT_DT_S, spec.ref_point, DEFAULT_CUTOFF_NM).unwrap();
            assert!(traj.len() > 50, "{} has {} points", tr.flight_id, traj.len());
            trajs.push(traj);
        }
        let scenes = assemble_scenes(&trajs, 60, DEFAULT_DT_S).unwrap();
        assert!(scenes.iter().any(|s| s.n_agents > 1));
    }
}

#[test]
fn family_geometry() {
    let fam = family();
    let (a, b, c) = (&fam.a, &fam.b, &fam.c);
    for (x, y) in a.route_bearings().iter().zip(b.route_bearings()) {
        assert!(angle_diff(*x, y).abs() <= 15.0);
    }
    let mean_diff = c
        .route_bearings()
        .iter()
        .map(|x| {
            a.route_bearings()
                .iter()
                .map(|y| angle_diff(*x, *y).abs())
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
        / c.entry_fixes.len() as f64;
    assert!(mean_diff > 60.0, "{mean_diff}");
    assert!(angle_diff(a.runway_heading_deg, c.runway_heading_deg).abs() > 60.0);
    assert!(horizontal_error(a.ref_point, c.ref_point) > 150.0);
    for spec in [a, b, c] {
        spec.validate().unwrap();
    }
}

#[test]
fn family_scene_counts_are_ordered() {
    let fam = family();
    let cfg = ReconstructionConfig::default();
    let count = |spec: &AirportSpec, days: u32| {
        let mut scenes = 0;
        for day in generate(spec, days, 4).unwrap() {
            let trajs: Vec<_> = day
                .tracks
                .iter()
                .map(|t| {
                    let d = reconstruct(t, &cfg).unwrap();
                    resample_and_cut(&d, DEFAULT_DT_S, spec.ref_point, DEFAULT_CUTOFF_NM).unwrap()
                })
                .collect();
            scenes += assemble_scenes(&trajs, 60, DEFAULT_DT_S).unwrap().len();
        }
        scenes
    };
    // a tenth of the default day counts keeps this quick
    let (da, db, dc) = FAMILY_DAYS;
    let (na, nb, nc) = (count(&fam.a, da / 10), count(&fam.b, db / 10), count(&fam.c, dc / 10));
    assert!(na > nb && nb > nc, "{na} {nb} {nc}");
}

#[test]
fn invalid_specs_are_rejected() {
    let a = family().a;
    let mut s = a.clone();
    s.arrival_rate_per_h = 0.0;
    assert!(matches!(generate(&s, 1, 0), Err(Error::Config(_))));
    let mut s = a.clone();
    s.entry_fixes[0].range_nm = 50.0;
    assert!(s.validate().is_err());
    let mut s = a.clone();
    s.route_templates.pop();
    assert!(s.validate().is_err());
    let mut s = a;
    s.active_hours = (9.0, 6.0);
    assert!(s.validate().is_err());
}

#[test]
fn angle_diff_wraps() {
    assert_eq!(angle_diff(10.0, 350.0), 20.0);
    assert_eq!(angle_diff(350.0, 10.0), -20.0);
    assert_eq!(angle_diff(180.0, 0.0), 180.0);
}
