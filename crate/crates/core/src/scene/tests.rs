use super::*;
use alloc::string::ToString;

fn traj(id: &str, t0: i64, len: usize, base: f64) -> Trajectory {
    Trajectory {
        flight_id: id.to_string(),
        t0,
        dt: 10,
        points: (0..len)
            .map(|i| [base + i as f64 * 0.01, 37.0 + i as f64 * 0.001, 9000.0 - 50.0 * i as f64])
            .collect(),
        airport_ref: (126.5, 37.4),
    }
}

fn toy_scene(n: usize, t: usize, lens: &[usize]) -> Scene {
    let trajs: Vec<Trajectory> = lens
        .iter()
        .enumerate()
        .map(|(i, &l)| traj(&alloc::format!("F{i}"), 0, l, 126.0 + i as f64))
        .collect();
    let s = assemble_scenes(&trajs, t, 10).unwrap().remove(0);
    assert_eq!(s.n_agents, n);
    s
}

#[test]
fn three_flights_inside_one_window() {
    let trajs = [traj("A", 0, 20, 126.0), traj("B", 50, 30, 126.2), traj("C", 100, 10, 126.4)];
    let scenes = assemble_scenes(&trajs, 60, 10).unwrap();
    assert_eq!(scenes.len(), 1);
    let s = &scenes[0];
    assert_eq!(s.n_agents, 3);
    assert_eq!(s.valid_len, vec![20, 30, 10]);
    assert_eq!(s.start_step, vec![0, 5, 10]);
    s.validate().unwrap();
}

#[test]
fn landing_mid_window_is_zero_padded() {
    let s = toy_scene(2, 60, &[60, 25]);
    assert_eq!(s.valid_len[1], 25);
    for t in 25..60 {
        assert!(s.point(1, t).iter().all(|&v| v == 0.0));
    }
    assert_eq!(s.time_to_arrival[1], 0.0);
    assert!(!s.airborne_at_end(1));
    assert!(s.airborne_at_end(0));
}

#[test]
fn sixty_steps_at_ten_seconds_is_ten_minutes() {
    let trajs = [traj("A", 0, 200, 126.0)];
    let scenes = assemble_scenes(&trajs, DEFAULT_T_MAX, 10).unwrap();
    assert_eq!(scenes.len(), 4);
    assert_eq!(scenes[1].window_start - scenes[0].window_start, 600);
    assert_eq!(scenes[3].valid_len[0], 20);
    // segment continuity across windows
    assert_eq!(scenes[1].point(0, 0), &trajs[0].points[60][..]);
    // remaining time to the end of the trajectory
    assert_eq!(scenes[0].time_to_arrival[0], (199 - 59) as f64 * 10.0);
}

#[test]
fn empty_windows_are_skipped_and_agents_ordered() {
    let trajs = [traj("Z", 0, 5, 126.0), traj("B", 3000, 5, 126.1), traj("A", 3000, 5, 126.2)];
    let scenes = assemble_scenes(&trajs, 60, 10).unwrap();
    assert_eq!(scenes.len(), 2);
    assert_eq!(scenes[1].agent_ids, vec!["A".to_string(), "B".to_string()]);
    assert_eq!(scenes[1].window_start, 3000);
}

#[test]
fn mismatched_sampling_is_rejected() {
    let mut t = traj("A", 0, 5, 126.0);
    t.dt = 5;
    assert!(assemble_scenes(&[t], 60, 10).is_err());
}

#[test]
fn mask_matches_figure_pattern_for_three_agents() {
    let s = toy_scene(3, 4, &[4, 4, 4]);
    let m = build_masks(&s.view());
    for t in 0..4 {
        for u in 0..4 {
            assert_eq!(m.timestep_block(t, u), vec![1, 0, 0, 0, 1, 0, 0, 0, 1]);
        }
    }
    assert!(m.pad_mask.iter().all(|&v| v == 0));
}

#[test]
fn single_agent_mask_is_all_ones() {
    let s = toy_scene(1, 5, &[3]);
    let m = build_masks(&s.view());
    assert!(m.agent_mask.iter().all(|&v| v == 1));
    assert_eq!(m.pad_mask, vec![0, 0, 0, 1, 1]);
}

#[test]
fn mask_is_symmetric() {
    let s = toy_scene(3, 3, &[3, 2, 1]);
    let m = build_masks(&s.view());
    let k = m.n_slots();
    for i in 0..k {
        for j in 0..k {
            assert_eq!(m.agent(i, j), m.agent(j, i));
        }
    }
}

#[test]
fn positional_encoding_examples() {
    let pe = PositionalEncoding::new(60, 8).unwrap();
    for i in 0..8 {
        let expect = if i % 2 == 0 { 0.0 } else { 1.0 };
        assert_eq!(pe.row(0)[i], expect);
    }
    assert!((pe.row(1)[0] - 0.841471).abs() < 1e-6);
    let d = 8.0f64;
    assert!((pe.row(7)[5] - (7.0 / 10000f64.powf(4.0 / d)).cos()).abs() < 1e-15);
    assert!(pe.table.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert!(PositionalEncoding::new(10, 7).is_err());
}

#[test]
fn positional_encoding_rows_are_distinct() {
    for d in [4, 8, 32] {
        let pe = PositionalEncoding::new(120, d).unwrap();
        for a in 0..120 {
            for b in a + 1..120 {
                let diff: f64 = pe.row(a).iter().zip(pe.row(b)).map(|(x, y)| (x - y).abs()).sum();
                assert!(diff > 1e-9, "rows {a} and {b} collide at d={d}");
            }
        }
    }
}

#[test]
fn normalizer_rejects_constant_feature() {
    let trajs = [Trajectory {
        points: vec![[126.0, 37.0, 5000.0]; 5],
        ..traj("A", 0, 5, 0.0)
    }];
    let scenes = assemble_scenes(&trajs, 60, 10).unwrap();
    assert!(matches!(Normalizer::fit(&scenes), Err(Error::ZeroStd(0))));
    assert!(Normalizer::new(vec![0.0], vec![0.0]).is_err());
}

#[test]
fn normalize_round_trip_and_statistics() {
    let trajs = [traj("A", 0, 45, 126.0), traj("B", 100, 70, 126.3), traj("C", 400, 12, 127.0)];
    let scenes = assemble_scenes(&trajs, 30, 10).unwrap();
    let norm = Normalizer::fit(&scenes).unwrap();
    let normalized: Vec<Scene> = scenes.iter().map(|s| norm.normalize(s)).collect();
    for (s, ns) in scenes.iter().zip(&normalized) {
        let back = norm.denormalize(ns);
        for (a, b) in s.data.iter().zip(&back.data) {
            assert!((a - b).abs() < 1e-9);
        }
        ns.validate().unwrap();
    }
    let refit = Normalizer::fit(&normalized).unwrap();
    for f in 0..N_FEATURES {
        assert!(refit.mean[f].abs() < 1e-6);
        assert!((refit.std[f] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn batch_shapes() {
    let a = toy_scene(2, 30, &[30, 10]);
    let b = toy_scene(5, 60, &[60, 20, 5, 60, 33]);
    let single = batch(core::slice::from_ref(&a)).unwrap();
    assert_eq!(single.shape(), (1, 2, 30, 3));
    assert_eq!(single.data, a.data);
    assert_eq!(single.masks[0], build_masks(&a.view()));
    let mixed = batch(&[a.clone(), b]).unwrap();
    assert_eq!(mixed.shape(), (2, 5, 60, 3));
    let v = mixed.view(0);
    assert_eq!(v.valid_len, &[30, 10, 0, 0, 0]);
    assert_eq!(mixed.masks[0].pad_mask.iter().filter(|&&p| p == 0).count(), 40);
    let eight: Vec<Scene> = (0..8).map(|_| a.clone()).collect();
    assert_eq!(batch(&eight).unwrap().batch_size, 8);
    assert!(batch(&[]).is_err());
}
