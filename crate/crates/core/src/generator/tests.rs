use super::*;
use crate::seed::{rng_for, Stream};
use ndarray::array;
use rand::Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, Stream::Init, &[])
}

fn random_window(seed: u64, t_len: usize, d: usize, missing_prob: f64) -> TimeSeriesWindow {
    let mut r = rng(seed);
    let values = Array2::from_shape_fn((t_len, d), |_| {
        if r.random_bool(missing_prob) {
            f64::NAN
        } else {
            r.random_range(-1.0..1.0)
        }
    });
    let mut now = 0.0;
    let timestamps: Vec<f64> = (0..t_len)
        .map(|_| {
            let t = now;
            now += r.random_range(0.5..2.0);
            t
        })
        .collect();
    TimeSeriesWindow::from_raw(timestamps, &values).unwrap()
}

fn random_noise(seed: u64, t_len: usize, d: usize) -> Array2<f64> {
    let mut r = rng(seed ^ 0x9999);
    Array2::from_shape_fn((t_len, d), |_| r.random_range(-0.02..0.02))
}

#[test]
fn decay_rates_examples() {
    // Zero weights: γ = exp(−0) = 1 regardless of δ.
    let zero = DecayParams {
        w_gamma: Array2::zeros((2, 3)),
        b_gamma: Array2::zeros((1, 3)),
    };
    let gamma = decay_rates(&array![5.0, 7.0], &zero);
    assert_eq!(gamma, array![1.0, 1.0, 1.0]);

    // Scalar case w=1, b=0, δ=2 → exp(−2).
    let scalar = DecayParams {
        w_gamma: array![[1.0]],
        b_gamma: array![[0.0]],
    };
    let gamma = decay_rates(&array![2.0], &scalar);
    assert!((gamma[0] - 0.135335).abs() < 1e-6);

    // Negative pre-activation is rectified to zero → γ = 1.
    let biased = DecayParams {
        w_gamma: array![[1.0]],
        b_gamma: array![[-5.0]],
    };
    let gamma = decay_rates(&array![2.0], &biased);
    assert_eq!(gamma[0], 1.0);
}

#[test]
fn decay_rates_stay_in_unit_interval() {
    let mut r = rng(3);
    for _ in 0..50 {
        let params = DecayParams::init(4, 6, &mut r);
        let delta = Array1::from_shape_fn(4, |_| r.random_range(0.0..100.0));
        let gamma = decay_rates(&delta, &params);
        assert!(gamma.iter().all(|&g| g > 0.0 && g <= 1.0));
    }
}

#[test]
fn decay_monotone_in_lag_for_nonnegative_weights() {
    let mut r = rng(4);
    let params = DecayParams::init(1, 5, &mut r); // init gives |uniform| weights
    let mut prev = decay_rates(&array![0.0], &params);
    for step in 1..40 {
        let gamma = decay_rates(&array![step as f64 * 0.5], &params);
        for (g, p) in gamma.iter().zip(prev.iter()) {
            assert!(g <= p, "decay must not grow with the lag");
        }
        prev = gamma;
    }
}

#[test]
fn apply_decay_examples() {
    let h = array![2.0, 3.0];
    assert_eq!(apply_decay(&h, &array![1.0, 1.0]).unwrap(), h);
    assert_eq!(
        apply_decay(&array![0.0, 0.0], &array![0.3, 0.9]).unwrap(),
        array![0.0, 0.0]
    );
    assert_eq!(apply_decay(&h, &array![0.5, 1.0]).unwrap(), array![1.0, 3.0]);
    assert!(apply_decay(&h, &array![1.0]).is_err());
}

#[test]
fn gru_step_zero_params_halves_state() {
    let params = GruCellParams::zeros(3, 2);
    let h_prev = array![4.0, -6.0];
    let h = gru_step(&array![1.0, 2.0, 3.0], &h_prev, &params).unwrap();
    // r = u = σ(0) = 0.5, n = tanh(0) = 0 → h = 0.5 · h′
    assert_eq!(h, array![2.0, -3.0]);

    let zero_h = gru_step(&array![0.0, 0.0, 0.0], &array![0.0, 0.0], &params).unwrap();
    assert_eq!(zero_h, array![0.0, 0.0]);
}

#[test]
fn gru_step_rejects_bad_shapes() {
    let params = GruCellParams::zeros(3, 2);
    assert!(gru_step(&array![1.0], &array![0.0, 0.0], &params).is_err());
    assert!(gru_step(&array![1.0, 2.0, 3.0], &array![0.0], &params).is_err());
}

#[test]
fn gru_step_plain_matches_tape() {
    let mut r = rng(5);
    let params = GruCellParams::init(4, 3, &mut r);
    let x = Array1::from_shape_fn(4, |_| r.random_range(-1.0..1.0));
    let h_prev = Array1::from_shape_fn(3, |_| r.random_range(-1.0..1.0));
    let plain = gru_step(&x, &h_prev, &params).unwrap();

    let mut tape = Tape::new();
    let mut reg = Vec::new();
    let cell = params.bind(&mut tape, false, &mut reg);
    let xt = tape.constant(x.insert_axis(Axis(0)));
    let ht = tape.constant(h_prev.insert_axis(Axis(0)));
    let ones = tape.constant(Array2::ones((1, 3)));
    let out = gru_step_on_tape(&mut tape, xt, ht, &cell, ones);
    assert_eq!(tape.value(out).row(0).to_owned(), plain);
}

#[test]
fn generate_sequence_shapes_and_refinement() {
    let mut r = rng(6);
    for seed in 0..10u64 {
        let window = random_window(seed, 12, 4, 0.35);
        let params = GeneratorParams::init(4, 6, 4, true, &mut r);
        let noise = random_noise(seed, 12, 4);
        for direction in [Direction::Forward, Direction::Backward] {
            let out = generate_sequence(&window, &noise, &params, direction).unwrap();
            assert_eq!(out.x_hat_raw.dim(), (12, 4));
            assert_eq!(out.x_hat_refined.dim(), (12, 4));
            assert_eq!(out.hidden_main.dim(), (12, 6));
            assert_eq!(out.hidden_gen.dim(), (12, 6));
            for ((t, d), &v) in out.x_hat_refined.indexed_iter() {
                if window.mask.is_observed(t, d) {
                    assert_eq!(v, window.x_bar[[t, d]], "refined must keep observed cells");
                }
            }
        }
    }
}

#[test]
fn generate_sequence_is_deterministic() {
    let mut r = rng(7);
    let window = random_window(42, 10, 3, 0.3);
    let params = GeneratorParams::init(3, 5, 4, true, &mut r);
    let noise = random_noise(42, 10, 3);
    let a = generate_sequence(&window, &noise, &params, Direction::Forward).unwrap();
    let b = generate_sequence(&window, &noise, &params, Direction::Forward).unwrap();
    assert_eq!(a.x_hat_raw, b.x_hat_raw);
    assert_eq!(a.x_hat_refined, b.x_hat_refined);
}

#[test]
fn backward_on_palindromic_window_mirrors_forward() {
    // Palindromic gaps and mask: flipping the window reproduces it, so the
    // backward generator must emit the exact time-flip of the forward output
    // when fed the flipped noise.
    let values = array![
        [1.0, f64::NAN],
        [2.0, 0.5],
        [3.0, f64::NAN],
        [2.0, 0.5],
        [1.0, f64::NAN]
    ];
    let timestamps = vec![0.0, 1.0, 3.0, 5.0, 6.0]; // gaps 1,2,2,1
    let window = TimeSeriesWindow::from_raw(timestamps, &values).unwrap();
    let mut r = rng(8);
    let params = GeneratorParams::init(2, 4, 2, true, &mut r);
    let noise = random_noise(9, 5, 2);
    let flipped_noise = noise.slice(ndarray::s![..;-1, ..]).to_owned();

    let forward = generate_sequence(&window, &noise, &params, Direction::Forward).unwrap();
    let backward = generate_sequence(&window, &flipped_noise, &params, Direction::Backward).unwrap();
    let forward_flipped = forward.x_hat_raw.slice(ndarray::s![..;-1, ..]).to_owned();
    assert_eq!(backward.x_hat_raw, forward_flipped);
}

#[test]
fn reconstruction_loss_examples() {
    let mask = MaskMatrix {
        entries: array![[1.0, 0.0]],
    };
    // Perfect reconstruction at observed cells.
    assert_eq!(
        loss_reconstruction(&array![[1.0, 2.0]], &array![[1.0, 99.0]], &mask),
        0.0
    );
    // Single observed cell with unit error.
    assert_eq!(
        loss_reconstruction(&array![[1.0, 2.0]], &array![[0.0, 0.0]], &mask),
        1.0
    );
    // Empty mask contributes zero.
    let none = MaskMatrix {
        entries: array![[0.0, 0.0]],
    };
    assert_eq!(
        loss_reconstruction(&array![[1.0, 2.0]], &array![[0.0, 0.0]], &none),
        0.0
    );
}

#[test]
fn consistency_loss_examples() {
    assert_eq!(
        loss_consistency(&array![[1.0]], &array![[1.0]]).unwrap(),
        0.0
    );
    assert_eq!(
        loss_consistency(&array![[1.0]], &array![[3.0]]).unwrap(),
        2.0
    );
    let a = array![[0.5, -1.0], [2.0, 0.0]];
    let b = array![[1.5, 1.0], [0.0, 0.25]];
    assert_eq!(
        loss_consistency(&a, &b).unwrap(),
        loss_consistency(&b, &a).unwrap()
    );
    assert!(loss_consistency(&a, &array![[1.0]]).is_err());
}

#[test]
fn adversarial_loss_examples() {
    let mask = MaskMatrix {
        entries: array![[1.0, 0.0], [0.0, 1.0]],
    };
    // Fooled discriminator scores missing cells as real.
    let ones = array![[0.0, 1.0], [1.0, 0.0]];
    assert_eq!(loss_generator_adversarial(&ones, &mask), -1.0);
    let half = array![[0.9, 0.5], [0.5, 0.9]];
    assert_eq!(loss_generator_adversarial(&half, &mask), -0.5);
    // No missing cells: the term vanishes.
    let full = MaskMatrix {
        entries: array![[1.0, 1.0]],
    };
    assert_eq!(loss_generator_adversarial(&array![[0.7, 0.7]], &full), 0.0);
}

#[test]
fn total_loss_arithmetic() {
    assert_eq!(loss_generator_total(0.0, 0.0, 0.0, 10.0, 1.0), 0.0);
    let total = loss_generator_total(0.1, 0.2, -0.5, 10.0, 1.0);
    assert!((total - 0.7).abs() < 1e-12);
    assert_eq!(loss_generator_total(9.0, 9.0, -0.25, 0.0, 0.0), -0.25);
}

#[test]
fn rollout_losses_match_plain_losses() {
    let window = random_window(77, 8, 3, 0.4);
    let mut r = rng(9);
    let params = GeneratorParams::init(3, 4, 2, true, &mut r);
    let noise = random_noise(77, 8, 3);

    let fwd = generate_sequence(&window, &noise, &params, Direction::Forward).unwrap();
    let plain_lr = loss_reconstruction(&window.x_bar, &fwd.x_hat_raw, &window.mask);

    let mut tape = Tape::new();
    let mut reg = Vec::new();
    let nodes = params.bind(&mut tape, false, &mut reg);
    let data = DirectionData::from_window(&window, Direction::Forward);
    let z = tape.constant(noise.clone());
    let rollout = build_rollout(&mut tape, &nodes, &data, z, params.hidden());
    let lr_node =
        loss_reconstruction_on_tape(&mut tape, &window.x_bar, &window.mask.entries, rollout.x_hat_raw);
    assert!((tape.scalar(lr_node) - plain_lr).abs() < 1e-12);
}

#[test]
fn missing_values_receive_delayed_gradients() {
    // A cell missing at step t with later observations in the same feature
    // must still receive gradient through the reconstruction loss.
    let values = array![
        [0.4, 0.1],
        [f64::NAN, 0.2],
        [0.6, f64::NAN],
        [0.8, 0.3]
    ];
    let window = TimeSeriesWindow::from_raw(vec![0.0, 1.0, 2.0, 3.0], &values).unwrap();
    let mut r = rng(10);
    let params = GeneratorParams::init(2, 3, 2, true, &mut r);
    let noise = random_noise(11, 4, 2);

    let mut tape = Tape::new();
    let mut reg = Vec::new();
    let nodes = params.bind(&mut tape, false, &mut reg);
    let data = DirectionData::from_window(&window, Direction::Forward);
    let z = tape.var(noise);
    let rollout = build_rollout(&mut tape, &nodes, &data, z, params.hidden());
    let loss =
        loss_reconstruction_on_tape(&mut tape, &window.x_bar, &window.mask.entries, rollout.x_hat_raw);
    let grads = tape.backward(loss);
    let dz = grads.get(z).expect("noise is differentiable");
    assert!(
        dz[[1, 0]].abs() > 1e-12,
        "missing cell (1,0) should receive gradient via later observations, got {}",
        dz[[1, 0]]
    );
}

#[test]
fn rollout_gradients_match_finite_differences() {
    // Small instance, full parameter sweep through the unrolled generator.
    let window = random_window(123, 4, 2, 0.4);
    let noise = random_noise(123, 4, 2);
    let mut r = rng(12);
    let params = GeneratorParams::init(2, 3, 2, true, &mut r);

    let eval = |p: &GeneratorParams| -> f64 {
        let mut tape = Tape::new();
        let mut reg = Vec::new();
        let nodes = p.bind(&mut tape, false, &mut reg);
        let data = DirectionData::from_window(&window, Direction::Forward);
        let z = tape.constant(noise.clone());
        let rollout = build_rollout(&mut tape, &nodes, &data, z, p.hidden());
        let loss = loss_reconstruction_on_tape(
            &mut tape,
            &window.x_bar,
            &window.mask.entries,
            rollout.x_hat_raw,
        );
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let mut reg = Vec::new();
    let nodes = params.bind(&mut tape, true, &mut reg);
    let data = DirectionData::from_window(&window, Direction::Forward);
    let z = tape.constant(noise.clone());
    let rollout = build_rollout(&mut tape, &nodes, &data, z, params.hidden());
    let loss = loss_reconstruction_on_tape(
        &mut tape,
        &window.x_bar,
        &window.mask.entries,
        rollout.x_hat_raw,
    );
    let grads = tape.backward(loss);

    let mut named = Vec::new();
    params.named("g", &mut named);
    assert_eq!(named.len(), reg.len());

    let h = 1e-6;
    for (idx, (name, _)) in named.iter().enumerate() {
        let analytic = grads.get_or_zeros(reg[idx], tape.value(reg[idx]).dim());
        let dim = analytic.dim();
        // Probe a few entries of each parameter array.
        for (i, j) in [(0usize, 0usize), (dim.0 - 1, dim.1 - 1)] {
            let mut probe = params.clone();
            let mut named_mut = Vec::new();
            probe.named_mut("g", &mut named_mut);
            named_mut[idx].1[[i, j]] += h;
            let up = eval(&probe);
            let mut probe = params.clone();
            let mut named_mut = Vec::new();
            probe.named_mut("g", &mut named_mut);
            named_mut[idx].1[[i, j]] -= h;
            let down = eval(&probe);
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[[i, j]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            assert!(
                rel < 1e-4,
                "{name}[{i},{j}]: analytic {a} vs numeric {numeric} (rel {rel})"
            );
        }
    }
}
