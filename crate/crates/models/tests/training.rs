use std::f64::consts::FRAC_PI_2;

use handstate_core::model_state::{
    load_model, save_model, ModelKind, ModelSpec, ModelState, Normalization, Optimizer, TrainConfig,
};
use handstate_core::types::{AlignedSample, FeatureSubset, TargetPair};
use handstate_models::{train, train_dummy, train_linear, train_lstm, train_mlp, train_svr, Model, SvrParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(t: f64, f: [f64; 10], y: Option<(f64, f64)>) -> AlignedSample<f64> {
    AlignedSample {
        t,
        exo: [f[0], f[1]],
        emg: f[2..].try_into().unwrap(),
        y: y.map(|(o, c)| TargetPair::new(o, c).unwrap()),
    }
}

fn random_rows(n: usize, seed: u64) -> Vec<[f64; 10]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect()
}

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    }
}

fn mse(pred: &[TargetPair<f64>], truth: &[AlignedSample<f64>]) -> f64 {
    let mut acc = 0.0;
    for (p, s) in pred.iter().zip(truth) {
        let y = s.y.unwrap();
        acc += (p.y_o - y.y_o).powi(2) + (p.y_c - y.y_c).powi(2);
    }
    acc / (2 * pred.len()) as f64
}

#[test]
fn dummy_stores_label_means() {
    let s = [
        sample(0.0, [0.0; 10], Some((0.0, 1.0))),
        sample(0.05, [1.0; 10], Some((FRAC_PI_2, -1.0))),
    ];
    let m = train_dummy(&s, FeatureSubset::Full).unwrap();
    assert_eq!(m.params, vec![FRAC_PI_2 / 2.0, 0.0]);
    let single = train_dummy(&[sample(0.0, [0.0; 10], Some((0.3, 0.0)))], FeatureSubset::Full).unwrap();
    assert_eq!(single.params, vec![0.3, 0.0]);
    let unlabeled = [sample(0.0, [0.0; 10], None)];
    assert!(train_dummy(&unlabeled, FeatureSubset::Full).is_err());
}

#[test]
fn linear_recovers_realizable_weights() {
    let rows = random_rows(200, 1);
    let w_o: Vec<f64> = (0..10).map(|j| 0.02 * j as f64).collect();
    let w_c: Vec<f64> = (0..10).map(|j| 0.03 - 0.01 * j as f64).collect();
    let samples: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let y_o = 0.7 + r.iter().zip(&w_o).map(|(a, b)| a * b).sum::<f64>();
            let y_c = -0.1 + r.iter().zip(&w_c).map(|(a, b)| a * b).sum::<f64>();
            sample(i as f64, *r, Some((y_o, y_c)))
        })
        .collect();
    let state = train_linear(&samples, FeatureSubset::Full, &cfg(1, 0)).unwrap();
    // Map z-scored weights back to raw feature units.
    let norm = &state.norm;
    let mut max_err: f64 = 0.0;
    for (o, (w, b)) in [(&w_o, 0.7), (&w_c, -0.1)].into_iter().enumerate() {
        let mut bias = state.params[20 + o];
        for j in 0..10 {
            let raw = state.params[o * 10 + j] / norm.std[j];
            max_err = max_err.max((raw - w[j]).abs());
            bias -= raw * norm.mean[j];
        }
        max_err = max_err.max((bias - b).abs());
    }
    assert!(max_err < 1e-6, "max abs error {max_err}");
}

#[test]
fn linear_tolerates_constant_column() {
    let mut rows = random_rows(50, 2);
    for r in &mut rows {
        r[3] = 5.0;
    }
    let samples: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| sample(i as f64, *r, Some((0.5 + 0.1 * r[0], 0.2 * r[1]))))
        .collect();
    let state = train_linear(&samples, FeatureSubset::Full, &cfg(1, 0)).unwrap();
    assert!(state.params.iter().all(|p| p.is_finite()));
}

#[test]
fn gradient_descent_linear_matches_closed_form() {
    let rows = random_rows(300, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let y_o = (0.8 + 0.2 * r[0] - 0.1 * r[5] + rng.gen_range(-0.1..0.1)).clamp(0.0, FRAC_PI_2);
            let y_c = (0.3 * r[2] + 0.2 * r[9] + rng.gen_range(-0.1..0.1)).clamp(-1.0, 1.0);
            sample(i as f64, *r, Some((y_o, y_c)))
        })
        .collect();
    let closed = Model::new(train_linear(&samples, FeatureSubset::Full, &cfg(1, 0)).unwrap()).unwrap();
    let spec = ModelSpec::new(ModelKind::Mlp, FeatureSubset::Full).with_hidden(vec![]);
    let gd_cfg = TrainConfig {
        optimizer: Optimizer::Sgd { lr: 0.5 },
        epochs: 2000,
        batch: Some(samples.len()),
        seed: 0,
    };
    let gd = Model::new(train_mlp(&samples, &spec, &gd_cfg).unwrap()).unwrap();
    let a = closed.predict_sequence(&samples);
    let b = gd.predict_sequence(&samples);
    let rmse = (a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x.y_o - y.y_o).powi(2) + (x.y_c - y.y_c).powi(2))
        .sum::<f64>()
        / (2 * a.len()) as f64)
        .sqrt();
    assert!(rmse < 1e-4, "solver disagreement {rmse}");
}

#[test]
fn mlp_parameter_count_and_zero_epoch_determinism() {
    let spec = ModelSpec::new(ModelKind::Mlp, FeatureSubset::Full);
    assert_eq!(spec.param_count().unwrap(), 11_402);
    let rows = random_rows(20, 4);
    let samples: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| sample(i as f64, *r, Some((0.5, 0.0))))
        .collect();
    let zero = TrainConfig {
        epochs: 0,
        ..cfg(1, 17)
    };
    let a = train_mlp(&samples, &spec, &zero).unwrap();
    let b = train_mlp(&samples, &spec, &zero).unwrap();
    assert_eq!(a.params, handstate_models::mlp::init_params::<f64>(&spec.mlp_sizes(), 17));
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn mlp_fits_two_cluster_xor() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut samples = Vec::new();
    for i in 0..400 {
        let (a, b) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
        let mut f = [0.0; 10];
        f[0] = if a { 1.0 } else { -1.0 } + rng.gen_range(-0.1..0.1);
        f[1] = if b { 1.0 } else { -1.0 } + rng.gen_range(-0.1..0.1);
        let y = if a ^ b { (1.2, 0.8) } else { (0.2, -0.8) };
        samples.push(sample(i as f64, f, Some(y)));
    }
    let spec = ModelSpec::new(ModelKind::Mlp, FeatureSubset::Full);
    let model = Model::new(train_mlp(&samples, &spec, &cfg(200, 0)).unwrap()).unwrap();
    let err = mse(&model.predict_sequence(&samples), &samples);
    assert!(err < 1e-2, "training mse {err}");
}

#[test]
fn lstm_learns_delayed_copy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let delay = 5;
    let seqs: Vec<Vec<AlignedSample<f64>>> = (0..8)
        .map(|_| {
            let x: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1.0)).collect();
            (0..100)
                .map(|t| {
                    let mut f = [0.0; 10];
                    f[0] = x[t];
                    let y = if t >= delay { x[t - delay] } else { 0.0 };
                    sample(t as f64 * 0.05, f, Some((y, 0.0)))
                })
                .collect()
        })
        .collect();
    let views: Vec<&[AlignedSample<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
    let spec = ModelSpec::new(ModelKind::Lstm, FeatureSubset::Full);
    let c = TrainConfig {
        optimizer: Optimizer::adam(1e-2),
        ..cfg(200, 0)
    };
    let model = Model::new(train_lstm(&views, &spec, &c).unwrap()).unwrap();
    let err: f64 = seqs.iter().map(|s| mse(&model.predict_sequence(s), s)).sum::<f64>() / seqs.len() as f64;
    assert!(err < 1e-2, "copy-task mse {err}");
}

fn small_lstm() -> Model<f64> {
    let spec = ModelSpec::new(ModelKind::Lstm, FeatureSubset::Full);
    let params = handstate_models::lstm::init_params::<f64>(
        &handstate_models::lstm::LstmLayout::from_spec(&spec),
        3,
    );
    Model::new(ModelState {
        spec,
        norm: Normalization::identity(10),
        params,
        seed: 3,
    })
    .unwrap()
}

#[test]
fn lstm_state_carries_across_a_split() {
    let model = small_lstm();
    let rows = random_rows(1200, 7);
    let whole = model.predict_rows(&rows).unwrap();
    let mut st = model.new_state();
    let mut split = Vec::new();
    for r in &rows[..600] {
        split.push(model.step(&mut st, r).unwrap());
    }
    for r in &rows[600..] {
        split.push(model.step(&mut st, r).unwrap());
    }
    assert_eq!(whole, split);
    // Prefix property: appending data does not change earlier outputs.
    let prefix = model.predict_rows(&rows[..300]).unwrap();
    assert_eq!(&whole[..300], prefix.as_slice());
}

#[test]
fn model_file_round_trip_preserves_predictions() {
    let model = small_lstm();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lstm.json");
    save_model(model.state(), &path).unwrap();
    let back = Model::new(load_model::<f64>(&path).unwrap()).unwrap();
    let rows = random_rows(200, 8);
    assert_eq!(model.predict_rows(&rows).unwrap(), back.predict_rows(&rows).unwrap());

    let mut text = std::fs::read_to_string(&path).unwrap();
    let cut = text.rfind("],\"seed\"").unwrap();
    let comma = text[..cut].rfind(',').unwrap();
    text.replace_range(comma..cut, "");
    std::fs::write(&path, text).unwrap();
    assert!(load_model::<f64>(&path).is_err());
}

#[test]
fn svr_fits_a_sine() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let samples: Vec<_> = (0..200)
        .map(|i| {
            let x = rng.gen_range(-3.0..3.0);
            let mut f = [0.0; 10];
            f[0] = x;
            sample(i as f64, f, Some((0.75 + 0.5 * x.sin(), 0.5 * x.sin())))
        })
        .collect();
    let spec = ModelSpec::new(ModelKind::Svr, FeatureSubset::ExoOnly);
    let model = Model::new(train_svr(&samples, &spec, &SvrParams::default()).unwrap()).unwrap();
    // Dense grid over the training range.
    let grid: Vec<_> = (0..=600)
        .map(|k| {
            let x = -3.0 + k as f64 * 0.01;
            let mut f = [0.0; 10];
            f[0] = x;
            sample(0.0, f, Some((0.75 + 0.5 * x.sin(), 0.5 * x.sin())))
        })
        .collect();
    let pred = model.predict_sequence(&grid);
    let rmse_o = (pred
        .iter()
        .zip(&grid)
        .map(|(p, s)| (p.y_o - s.y.unwrap().y_o).powi(2))
        .sum::<f64>()
        / grid.len() as f64)
        .sqrt();
    assert!(rmse_o < 0.15, "rmse {rmse_o}");
}

#[test]
fn svr_constant_target_is_reproduced() {
    let rows = random_rows(60, 11);
    let samples: Vec<_> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| sample(i as f64, *r, Some((0.4, 0.0))))
        .collect();
    let spec = ModelSpec::new(ModelKind::Svr, FeatureSubset::Full);
    let state = train_svr(&samples, &spec, &SvrParams::default()).unwrap();
    assert_eq!(state.spec.svr.as_ref().unwrap().n_support, [0, 0]);
    let model = Model::new(state).unwrap();
    for p in model.predict_rows(&random_rows(20, 12)).unwrap() {
        assert!((p.y_o - 0.4).abs() < 1e-12 && p.y_c.abs() < 1e-12);
    }
}

#[test]
fn training_is_deterministic_and_norm_uses_training_rows_only() {
    let rows = random_rows(120, 13);
    let seqs: Vec<Vec<AlignedSample<f64>>> = rows
        .chunks(40)
        .map(|c| {
            c.iter()
                .enumerate()
                .map(|(i, r)| sample(i as f64, *r, Some((0.6 + 0.3 * r[0], 0.5 * r[4]))))
                .collect()
        })
        .collect();
    let views: Vec<&[AlignedSample<f64>]> = seqs.iter().map(|s| s.as_slice()).collect();
    for kind in ModelKind::ALL {
        let spec = ModelSpec::new(kind, FeatureSubset::Full);
        let a = train(&views[..2], &spec, &cfg(3, 21)).unwrap();
        let b = train(&views[..2], &spec, &cfg(3, 21)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap(), "{kind}");
        let expected = Normalization::<f64>::fit(
            views[..2].iter().flat_map(|s| s.iter()).map(|s| s.features().to_vec()).collect::<Vec<_>>().iter().map(|r| r.as_slice()),
            10,
        );
        assert_eq!(a.norm, expected, "{kind}");
    }
}

#[test]
fn predictions_always_satisfy_target_ranges() {
    let model = small_lstm();
    let wild: Vec<[f64; 10]> = random_rows(300, 14).iter().map(|r| r.map(|v| v * 1e3)).collect();
    for p in model.predict_rows(&wild).unwrap() {
        assert!((0.0..=FRAC_PI_2).contains(&p.y_o));
        assert!((-1.0..=1.0).contains(&p.y_c));
    }
}
