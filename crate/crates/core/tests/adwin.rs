// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::*;
use rand::Rng;
use rcluster::adwin::{detect_boundaries, detect_events, epsilon_cut, Adwin, AdwinConfig};
use rcluster::eval::{generate_synthetic, match_boundaries, SynthSpec};

#[test]
fn epsilon_matches_log_space_oracle() {
    let mut r = rng(1);
    for _ in 0..500 {
        let k = r.random_range(1..64);
        let p = r.random_range(1..5);
        let n0 = r.random_range(1..2000);
        let n1 = r.random_range(1..2000);
        let delta = r.random_range(1e-6..0.99);
        let got = epsilon_cut(k, p, n0, n1, delta).unwrap();
        let want = epsilon_oracle(k, p, n0, n1, delta);
        assert!(
            (got - want).abs() <= 1e-12 * want.max(1.0),
            "{k} {p} {n0} {n1} {delta}"
        );
    }
}

#[test]
fn epsilon_rejects_degenerate_confidence() {
    // k * delta / (n0 + n1) >= 4 leaves the logarithm non-positive
    assert!(epsilon_cut(1000, 2, 1, 1, 0.9).is_err());
    assert!(epsilon_cut(0, 2, 5, 5, 0.1).is_err());
    assert!(epsilon_cut(1, 2, 5, 5, 1.0).is_err());
}

#[test]
fn first_detection_agrees_with_recomputed_splits() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let mut rows = gaussian_rows(&mut r, 120, 3, 0.1);
        let shift = 0.3 + 0.1 * (seed % 5) as f64;
        for row in &mut rows[60..] {
            row[0] += shift;
        }
        let cfg = AdwinConfig::default();
        let first = detect_events(&stream(&rows), &cfg)
            .unwrap()
            .first()
            .map(|d| d.position);
        assert_eq!(
            first,
            first_detection(&rows, cfg.delta, cfg.p_norm, cfg.min_subwindow),
            "seed {seed}"
        );
    }
}

#[test]
fn running_sums_track_window() {
    let mut r = rng(7);
    let rows = gaussian_rows(&mut r, 300, 4, 1.0);
    let mut adwin = Adwin::new(4, AdwinConfig::default()).unwrap();
    for (t, row) in rows.iter().enumerate() {
        let shifted: Vec<f64> = row
            .iter()
            .map(|v| if t > 150 { v + 3.0 } else { *v })
            .collect();
        adwin.update(&shifted).unwrap();
        let mut fresh = [0.0; 4];
        for s in adwin.samples() {
            fresh.iter_mut().zip(s).for_each(|(f, v)| *f += v);
        }
        for (a, b) in fresh.iter().zip(adwin.sums()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert_eq!(adwin.window_start() + adwin.len(), t + 1);
    }
}

#[test]
fn stationary_streams_rarely_alarm() {
    let cfg = AdwinConfig::default();
    let runs = 100;
    let alarms = (0..runs)
        .filter(|&seed| {
            let mut r = rng(1000 + seed);
            let rows = gaussian_rows(&mut r, 500, 4, 0.1);
            !detect_events(&stream(&rows), &cfg).unwrap().is_empty()
        })
        .count();
    assert!(
        alarms as f64 / runs as f64 <= 1.0 - 0.95,
        "{alarms} of {runs}"
    );
}

#[test]
fn ten_sigma_segments_are_recovered() {
    let cfg = AdwinConfig::default();
    let hits = (0..100)
        .filter(|&seed| {
            let spec = SynthSpec {
                num_segments: 3,
                separation: 10.0,
                sigma: 1.0,
                seed,
                ..SynthSpec::default()
            };
            let (x, gt) = generate_synthetic(&spec).unwrap();
            let pred = detect_boundaries(&x, &cfg).unwrap();
            match_boundaries(&pred, &gt, 10).unwrap().fn_ == 0
        })
        .count();
    assert!(hits >= 95, "{hits}");
}

#[test]
fn delta_changes_sensitivity_monotonically() {
    let mut r = rng(3);
    let mut rows = gaussian_rows(&mut r, 400, 2, 0.2);
    for row in &mut rows[200..] {
        row[1] += 0.15;
    }
    let x = stream(&rows);
    let first = |delta: f64| {
        let cfg = AdwinConfig {
            delta,
            ..AdwinConfig::default()
        };
        detect_events(&x, &cfg)
            .unwrap()
            .first()
            .map_or(usize::MAX, |d| d.position)
    };
    assert!(first(0.5) <= first(0.05));
    assert!(first(0.05) <= first(0.001));
}
