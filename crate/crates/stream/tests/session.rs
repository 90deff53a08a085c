use handstate_core::dataset::{sequence_records, Source, StreamRecord};
use handstate_core::model_state::{ModelKind, ModelSpec, TrainConfig};
use handstate_core::sync::{align, AlignmentConfig};
use handstate_core::synth::{generate_online_session, simulate_sequence, ProtocolConfig, UserProfile};
use handstate_core::types::{FeatureSubset, Modality, RawSequence};
use handstate_models::{train, Model};
use handstate_stream::{open_session, replay, run_live, PredictionEvent, PredictionLine};
use proptest::prelude::*;

fn short_cfg() -> ProtocolConfig {
    ProtocolConfig {
        sequence_duration: 20.0,
        ..ProtocolConfig::default()
    }
}

fn sequence(seed: u64) -> RawSequence<f64> {
    let cfg = short_cfg();
    let profile = UserProfile::generate((seed % 5) as usize, seed, &cfg.signal);
    simulate_sequence(&profile, Modality::ALL[(seed % 3) as usize], &cfg, seed)
}

/// An untrained LSTM: zero epochs leave the seeded initial weights.
fn lstm(seed: u64) -> Model<f64> {
    let seq = sequence(seed);
    let aligned = align(&seq, &AlignmentConfig::default()).unwrap();
    let spec = ModelSpec::new(ModelKind::Lstm, FeatureSubset::Full).with_hidden(vec![8, 8]);
    let cfg = TrainConfig {
        epochs: 0,
        seed,
        ..TrainConfig::default()
    };
    Model::new(train(&[aligned.as_slice()], &spec, &cfg).unwrap()).unwrap()
}

fn max_abs_diff(online: &[PredictionEvent<f64>], seq: &RawSequence<f64>, model: &Model<f64>) -> f64 {
    let aligned = align(seq, &AlignmentConfig::default()).unwrap();
    let batch = model.predict_sequence(&aligned);
    assert_eq!(online.len(), batch.len(), "{}", seq.id);
    online
        .iter()
        .zip(&aligned)
        .zip(&batch)
        .map(|((o, a), b)| {
            assert_eq!(o.t, a.t);
            (o.y_hat.y_o - b.y_o).abs().max((o.y_hat.y_c - b.y_c).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn replay_matches_batch_prediction() {
    let model = lstm(1);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let seq = sequence(1000 + seed);
        let out = replay(&seq, &model, &AlignmentConfig::default(), None).unwrap();
        worst = worst.max(max_abs_diff(&out.predictions, &seq, &model));
    }
    assert!(worst <= 1e-9, "max abs diff {worst}");
}

#[test]
fn online_session_yields_one_prediction_per_tick() {
    let cfg = ProtocolConfig::default();
    let profile = UserProfile::generate(0, 42, &cfg.signal);
    let seq: RawSequence<f64> = generate_online_session(&profile, &cfg, 7);
    let model = lstm(2);
    let out = replay(&seq, &model, &AlignmentConfig::default(), None).unwrap();
    let n = out.predictions.len();
    assert!((3599..=3601).contains(&n), "{n} predictions");
    assert!(out.predictions.windows(2).all(|w| w[0].t < w[1].t));
    let m = out.metrics.expect("labeled session");
    assert_eq!(m.samples, n);
}

#[test]
fn emg_dropout_sets_staleness_and_holds_output() {
    let seq = sequence(3);
    let model = lstm(3);
    let mut s = open_session(&model, AlignmentConfig::default()).unwrap();
    let mut out = Vec::new();
    for r in sequence_records(&seq) {
        if r.src == Source::Emg && (5.0..5.5).contains(&r.t) {
            continue;
        }
        out.extend(s.push_event(&r).unwrap());
    }
    out.extend(s.finish().unwrap());
    let aligned = align(&seq, &AlignmentConfig::default()).unwrap();
    assert_eq!(out.len(), aligned.len());
    let stale: Vec<f64> = out.iter().filter(|p| p.stale_emg).map(|p| p.t).collect();
    assert!(!stale.is_empty());
    assert!(stale.iter().all(|&t| (5.2..5.55).contains(&t)), "{stale:?}");
    assert!(out.iter().all(|p| !p.stale_exo));
}

#[test]
fn sessions_sharing_a_model_are_isolated() {
    let model = lstm(4);
    let (a, b) = (sequence(10), sequence(11));
    let alone = |seq: &RawSequence<f64>| replay(seq, &model, &AlignmentConfig::default(), None).unwrap().predictions;
    let (ra, rb) = std::thread::scope(|sc| {
        let ha = sc.spawn(|| alone(&a));
        let hb = sc.spawn(|| alone(&b));
        (ha.join().unwrap(), hb.join().unwrap())
    });
    assert_eq!(ra, alone(&a));
    assert_eq!(rb, alone(&b));

    // Interleaving two sessions on one thread changes nothing either.
    let mut sa = open_session(&model, AlignmentConfig::default()).unwrap();
    let mut sb = open_session(&model, AlignmentConfig::default()).unwrap();
    let (mut ia, mut ib) = (Vec::new(), Vec::new());
    for (x, y) in sequence_records(&a).iter().zip(sequence_records(&b).iter()) {
        ia.extend(sa.push_event(x).unwrap());
        ib.extend(sb.push_event(y).unwrap());
    }
    let ra_prefix = &ra[..ia.len()];
    assert_eq!(ia, ra_prefix);
    assert_eq!(ib, rb[..ib.len()]);
}

#[test]
fn pacing_does_not_change_predictions() {
    let cfg = ProtocolConfig {
        sequence_duration: 10.0,
        ..ProtocolConfig::default()
    };
    let profile = UserProfile::generate(0, 5, &cfg.signal);
    let seq: RawSequence<f64> = simulate_sequence(&profile, Modality::Passive, &cfg, 5);
    let model = lstm(5);
    let fast = replay(&seq, &model, &AlignmentConfig::default(), None).unwrap();
    let paced = replay(&seq, &model, &AlignmentConfig::default(), Some(50.0)).unwrap();
    assert_eq!(fast.predictions, paced.predictions);
}

#[test]
fn unlabeled_replay_has_no_metrics() {
    let mut seq = sequence(6);
    seq.gt.clear();
    let out = replay(&seq, &lstm(6), &AlignmentConfig::default(), None).unwrap();
    assert!(out.metrics.is_none());
    assert!(!out.predictions.is_empty());
}

#[test]
fn live_json_lines_match_replay() {
    let seq = sequence(7);
    let model = lstm(7);
    let mut input = Vec::new();
    for r in sequence_records(&seq) {
        serde_json::to_writer(&mut input, &r).unwrap();
        input.push(b'\n');
    }
    // A regressed record is skipped, not fatal.
    let bad = StreamRecord {
        t: 0.0,
        src: Source::Exo,
        v: vec![0.0, 0.0],
    };
    serde_json::to_writer(&mut input, &bad).unwrap();
    input.push(b'\n');

    let mut output = Vec::new();
    let n = run_live(&model, AlignmentConfig::default(), input.as_slice(), &mut output).unwrap();
    let lines: Vec<PredictionLine> = String::from_utf8(output)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), n);
    let expected: Vec<PredictionLine> = replay(&seq, &model, &AlignmentConfig::default(), None)
        .unwrap()
        .predictions
        .into_iter()
        .map(PredictionLine::from)
        .collect();
    assert_eq!(lines, expected);
}

#[test]
fn malformed_live_input_reports_the_line() {
    let model = lstm(8);
    let input = b"{\"t\":0.0,\"src\":\"exo\",\"v\":[0.0,0.0]}\nnot json\n";
    let err = run_live(&model, AlignmentConfig::default(), &input[..], Vec::new()).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn emission_is_monotone_and_matches_batch(seed in any::<u64>()) {
        let seq = sequence(seed);
        let model = lstm(seed % 3);
        let out = replay(&seq, &model, &AlignmentConfig::default(), None).unwrap();
        prop_assert!(out.predictions.windows(2).all(|w| w[0].t < w[1].t));
        prop_assert!(max_abs_diff(&out.predictions, &seq, &model) <= 1e-9);
    }
}
