use super::*;
use ndarray::array;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Brute-force oracle for the time-lag recurrence: scan backward to the last
/// observation of the feature and accumulate the gaps in ascending order.
pub fn delta_oracle(timestamps: &[f64], mask: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = mask.dim();
    let mut delta = Array2::zeros((rows, cols));
    for d in 0..cols {
        for t in 1..rows {
            let mut last_obs = None;
            for back in (0..t).rev() {
                if mask[[back, d]] == 1.0 {
                    last_obs = Some(back);
                    break;
                }
            }
            let origin = last_obs.unwrap_or(0);
            let mut acc = 0.0;
            for k in origin + 1..=t {
                acc += timestamps[k] - timestamps[k - 1];
            }
            delta[[t, d]] = acc;
        }
    }
    delta
}

pub fn random_instance(seed: u64, max_t: usize, max_d: usize) -> (Vec<f64>, MaskMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = rng.random_range(2..=max_t);
    let d = rng.random_range(1..=max_d);
    let mut timestamps = Vec::with_capacity(t);
    let mut now = rng.random_range(0.0..1.0);
    for _ in 0..t {
        timestamps.push(now);
        now += rng.random_range(0.01..3.0);
    }
    let mask = Array2::from_shape_fn((t, d), |_| if rng.random_bool(0.6) { 1.0 } else { 0.0 });
    (timestamps, MaskMatrix { entries: mask })
}

#[test]
fn mask_from_presence() {
    let raw = RawSeries::new(
        vec![0.0, 1.0],
        array![[5.0, f64::NAN, 1.2], [f64::NAN, f64::NAN, f64::NAN]],
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap();
    let mask = build_mask(&raw);
    assert_eq!(mask.entries, array![[1.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);

    let full = RawSeries::new(vec![0.0], array![[1.0, 2.0]], vec!["a".into(), "b".into()]).unwrap();
    assert_eq!(build_mask(&full).entries, array![[1.0, 1.0]]);
}

#[test]
fn delta_hand_unrolled_example() {
    // S = {0, 2, 3, 7}, one feature observed at steps 1, 3, 4.
    let timestamps = vec![0.0, 2.0, 3.0, 7.0];
    let mask = MaskMatrix {
        entries: array![[1.0], [0.0], [1.0], [1.0]],
    };
    let delta = build_delta(&timestamps, &mask).unwrap();
    assert_eq!(delta.entries, array![[0.0], [2.0], [3.0], [4.0]]);
}

#[test]
fn delta_fully_observed_is_gap_sequence() {
    let timestamps = vec![0.0, 1.5, 4.0, 4.5];
    let mask = MaskMatrix {
        entries: Array2::ones((4, 2)),
    };
    let delta = build_delta(&timestamps, &mask).unwrap();
    for d in 0..2 {
        assert_eq!(delta.entries[[0, d]], 0.0);
        assert_eq!(delta.entries[[1, d]], 1.5);
        assert_eq!(delta.entries[[2, d]], 2.5);
        assert_eq!(delta.entries[[3, d]], 0.5);
    }
}

#[test]
fn delta_single_leading_observation_telescopes() {
    let timestamps = vec![1.0, 2.0, 5.0, 9.0];
    let mask = MaskMatrix {
        entries: array![[1.0], [0.0], [0.0], [0.0]],
    };
    let delta = build_delta(&timestamps, &mask).unwrap();
    assert_eq!(delta.entries, array![[0.0], [1.0], [4.0], [8.0]]);
}

#[test]
fn delta_rejects_decreasing_timestamps() {
    let mask = MaskMatrix {
        entries: Array2::ones((3, 1)),
    };
    assert!(build_delta(&[0.0, 2.0, 1.0], &mask).is_err());
}

#[test]
fn delta_matches_backward_scan_oracle() {
    for seed in 0..1000u64 {
        let (timestamps, mask) = random_instance(seed, 40, 5);
        let delta = build_delta(&timestamps, &mask).unwrap();
        let oracle = delta_oracle(&timestamps, &mask.entries);
        assert_eq!(delta.entries, oracle, "seed {seed}");
    }
}

#[test]
fn delta_reversed_matches_oracle_on_flipped_inputs() {
    for seed in 0..200u64 {
        let (timestamps, mask) = random_instance(seed, 20, 3);
        let rev = build_delta_reversed(&timestamps, &mask).unwrap();
        // Reversed timestamps with the same gap structure, flipped.
        let t = timestamps.len();
        let last = timestamps[t - 1];
        let flipped_ts: Vec<f64> = (0..t).map(|k| last - timestamps[t - 1 - k]).collect();
        let flipped_mask = mask.flipped();
        let oracle = delta_oracle(&flipped_ts, &flipped_mask.entries);
        for (a, b) in rev.entries.iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-9, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn normalization_fit_and_endpoints() {
    let raw = RawSeries::new(
        vec![0.0, 1.0, 2.0, 3.0],
        array![
            [0.0, f64::NAN, 3.0],
            [2.0, 4.0, 3.0],
            [10.0, f64::NAN, 3.0],
            [7.0, 8.0, 3.0]
        ],
        vec!["a".into(), "b".into(), "c".into()],
    )
    .unwrap();
    let stats = fit_normalization(&raw).unwrap();
    assert_eq!(stats.mins, vec![0.0, 4.0, 3.0]);
    assert_eq!(stats.maxs, vec![10.0, 8.0, 3.0]);
    assert_eq!(stats.degenerate, vec![false, false, true]);

    // Endpoint maps to 1 up to the epsilon guard.
    let hi = stats.normalize_value(0, 10.0);
    assert!((hi - 1.0).abs() < 1e-8);
    // Degenerate features map to zero and invert back to the constant.
    assert_eq!(stats.normalize_value(2, 3.0), 0.0);
    assert_eq!(stats.denormalize_value(2, 0.0), 3.0);
}

#[test]
fn normalization_errors_on_unobserved_feature() {
    let raw = RawSeries::new(
        vec![0.0, 1.0],
        array![[1.0, f64::NAN], [2.0, f64::NAN]],
        vec!["ok".into(), "empty".into()],
    )
    .unwrap();
    let err = fit_normalization(&raw).unwrap_err();
    assert!(err.to_string().contains("empty"), "error should name the feature: {err}");
}

#[test]
fn normalize_round_trips_observed_cells() {
    let raw = RawSeries::new(
        vec![0.0, 1.0, 2.0],
        array![[0.5, -3.0], [f64::NAN, 9.0], [4.5, 2.0]],
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let stats = fit_normalization(&raw).unwrap();
    let window = TimeSeriesWindow::from_raw(raw.timestamps.clone(), &raw.values).unwrap();
    let norm = normalize(&window, &stats).unwrap();
    // Observed cells land in [0, 1]; missing cells stay zero.
    for ((t, d), &v) in norm.x_bar.indexed_iter() {
        if norm.mask.is_observed(t, d) {
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        } else {
            assert_eq!(v, 0.0);
        }
    }
    let back = denormalize(&norm, &stats).unwrap();
    for ((t, d), &v) in back.x_bar.indexed_iter() {
        if back.mask.is_observed(t, d) {
            let orig = window.x_bar[[t, d]];
            assert!((v - orig).abs() <= 1e-9 * orig.abs().max(1.0));
        }
    }
}

#[test]
fn windows_cover_series_and_pad_remainder() {
    let t_total = 96;
    let values = Array2::from_shape_fn((t_total, 2), |(t, d)| (t * 2 + d) as f64);
    let raw = RawSeries::new(
        (0..t_total).map(|t| t as f64).collect(),
        values,
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let windows = make_windows(&raw, 48, 48).unwrap();
    assert_eq!(windows.len(), 2);
    assert!(windows.iter().all(|w| !w.padded));

    let short = RawSeries::new(
        (0..50).map(|t| t as f64).collect(),
        Array2::ones((50, 2)),
        vec!["a".into(), "b".into()],
    )
    .unwrap();
    let windows = make_windows(&short, 48, 48).unwrap();
    assert_eq!(windows.len(), 2);
    assert!(windows[1].padded);
    // 2 real rows, 46 padded missing rows.
    assert_eq!(windows[1].mask.observed_count(), 4);
    for w in &windows {
        assert_eq!(w.len(), 48);
        for d in 0..2 {
            assert_eq!(w.delta.entries[[0, d]], 0.0);
        }
    }

    let empty = RawSeries::new(vec![], Array2::zeros((0, 2)), vec!["a".into(), "b".into()]).unwrap();
    assert!(make_windows(&empty, 48, 48).unwrap().is_empty());
}

#[test]
fn holdout_counts_and_identity() {
    let values = Array2::from_shape_fn((10, 10), |(t, d)| (t + d) as f64);
    let window =
        TimeSeriesWindow::from_raw((0..10).map(|t| t as f64).collect(), &values).unwrap();
    assert_eq!(window.mask.observed_count(), 100);

    let (train, targets) = holdout_mask(&window, 0.2, 7).unwrap();
    assert_eq!(targets.len(), 20);
    assert_eq!(train.mask.observed_count(), 80);

    let (same, none) = holdout_mask(&window, 0.0, 7).unwrap();
    assert!(none.is_empty());
    assert_eq!(same.x_bar, window.x_bar);
    assert_eq!(same.mask, window.mask);
    assert_eq!(same.delta, window.delta);

    assert!(holdout_mask(&window, 1.0, 7).is_err());
}

#[test]
fn holdout_never_selects_missing_cells() {
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let values = Array2::from_shape_fn((6, 4), |_| {
            if rng.random_bool(0.3) {
                f64::NAN
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let window =
            TimeSeriesWindow::from_raw((0..6).map(|t| t as f64).collect(), &values).unwrap();
        let missing: Vec<(usize, usize)> = window
            .mask
            .entries
            .indexed_iter()
            .filter(|(_, &m)| m == 0.0)
            .map(|(idx, _)| idx)
            .collect();
        let (_, targets) = holdout_mask(&window, 0.5, seed).unwrap();
        for cell in &targets.cells {
            assert!(!missing.contains(&(cell.t, cell.d)), "seed {seed}");
        }
    }
}

#[test]
fn holdout_restore_is_bit_exact() {
    for seed in 0..50u64 {
        let (timestamps, mask) = random_instance(seed, 16, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let values = Array2::from_shape_fn(mask.dim(), |(t, d)| {
            if mask.entries[[t, d]] == 1.0 {
                rng.random_range(-5.0..5.0)
            } else {
                f64::NAN
            }
        });
        let window = TimeSeriesWindow::from_raw(timestamps, &values).unwrap();
        let (train, targets) = holdout_mask(&window, 0.3, seed).unwrap();
        let restored = restore_holdout(&train, &targets).unwrap();
        assert_eq!(restored.x_bar, window.x_bar, "seed {seed}");
        assert_eq!(restored.mask, window.mask, "seed {seed}");
        assert_eq!(restored.delta, window.delta, "seed {seed}");
    }
}

#[test]
fn dataset_holdout_exact_global_count() {
    let values = Array2::from_shape_fn((100, 5), |(t, d)| (t * 5 + d) as f64);
    let raw = RawSeries::new(
        (0..100).map(|t| t as f64).collect(),
        values,
        (0..5).map(|d| format!("f{d}")).collect(),
    )
    .unwrap();
    let windows = make_windows(&raw, 10, 10).unwrap();
    let (train, targets) = holdout_dataset(&windows, 0.2, 99).unwrap();
    let total: usize = targets.iter().map(|t| t.len()).sum();
    assert_eq!(total, 100); // 20% of 500
    let remaining: usize = train.iter().map(|w| w.mask.observed_count()).sum();
    assert_eq!(remaining, 400);
}

#[test]
fn window_zeroes_missing_everywhere() {
    for seed in 0..100u64 {
        let (timestamps, mask) = random_instance(seed, 12, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array2::from_shape_fn(mask.dim(), |(t, d)| {
            if mask.entries[[t, d]] == 1.0 {
                rng.random_range(-5.0..5.0)
            } else {
                f64::NAN
            }
        });
        let window = TimeSeriesWindow::from_raw(timestamps, &values).unwrap();
        for ((t, d), &v) in window.x_bar.indexed_iter() {
            if !window.mask.is_observed(t, d) {
                assert_eq!(v, 0.0);
            }
        }
    }
}

proptest! {
    #[test]
    fn prop_delta_recurrence_matches_oracle(seed in 0u64..10_000) {
        let (timestamps, mask) = random_instance(seed, 30, 4);
        let delta = build_delta(&timestamps, &mask).unwrap();
        let oracle = delta_oracle(&timestamps, &mask.entries);
        prop_assert_eq!(delta.entries, oracle);
    }

    #[test]
    fn prop_normalize_round_trip(values in proptest::collection::vec(-1e6f64..1e6, 4..40)) {
        let n = values.len();
        let arr = Array2::from_shape_vec((n, 1), values.clone()).unwrap();
        let raw = RawSeries::new((0..n).map(|t| t as f64).collect(), arr, vec!["x".into()]).unwrap();
        let stats = fit_normalization(&raw).unwrap();
        for &v in &values {
            let round = stats.denormalize_value(0, stats.normalize_value(0, v));
            prop_assert!((round - v).abs() <= 1e-9 * v.abs().max(1.0));
        }
    }
}
