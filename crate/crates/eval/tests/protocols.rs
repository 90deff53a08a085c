use std::collections::BTreeSet;

use handstate_core::metrics::r_squared;
use handstate_core::model_state::{ModelKind, ModelState, Normalization, TrainConfig};
use handstate_core::sync::AlignmentConfig;
use handstate_core::synth::{generate_dataset, ProtocolConfig};
use handstate_core::types::{FeatureSubset, Modality, TargetPair};
use handstate_eval::report::{read_results_csv, write_results_csv, write_summary_csv};
use handstate_eval::*;
use proptest::prelude::*;

fn data(users: usize, seed: u64) -> AlignedDataset<f64> {
    let cfg = ProtocolConfig {
        users,
        ..ProtocolConfig::default()
    };
    AlignedDataset::from_dataset(&generate_dataset(&cfg, seed).unwrap(), &AlignmentConfig::default()).unwrap()
}

fn quick() -> EvalConfig {
    EvalConfig {
        train: TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
        ..EvalConfig::default()
    }
}

fn protocol_ids() -> Vec<(String, Modality)> {
    Modality::ALL
        .iter()
        .flat_map(|&m| (0..3).map(move |r| (format!("u0-s1-{m}-{r}"), m)))
        .collect()
}

fn check_plan(plan: &FoldPlan, ids: &[(String, Modality)]) {
    let modality = |id: &String| ids.iter().find(|(i, _)| i == id).unwrap().1;
    let mut validated = Vec::new();
    assert_eq!(plan.folds.len(), 3);
    for fold in &plan.folds {
        for (set, per) in [(&fold.validation, 1), (&fold.train, 2)] {
            for m in Modality::ALL {
                assert_eq!(set.iter().filter(|id| modality(id) == m).count(), per);
            }
        }
        let train: BTreeSet<&String> = fold.train.iter().collect();
        assert!(fold.validation.iter().all(|v| !train.contains(v)));
        validated.extend(fold.validation.iter().cloned());
    }
    validated.sort();
    let mut all: Vec<String> = ids.iter().map(|(i, _)| i.clone()).collect();
    all.sort();
    assert_eq!(validated, all);
}

#[test]
fn hundred_seeded_plans_are_balanced_partitions() {
    let ids = protocol_ids();
    let mut distinct = BTreeSet::new();
    for seed in 0..100 {
        let plan = make_fold_plan(ids.iter().map(|(i, m)| (i.as_str(), *m)), seed).unwrap();
        check_plan(&plan, &ids);
        let again = make_fold_plan(ids.iter().map(|(i, m)| (i.as_str(), *m)), seed).unwrap();
        assert_eq!(plan, again);
        distinct.insert(format!("{:?}", plan.folds));
    }
    // The within-modality shuffle actually varies with the seed.
    assert!(distinct.len() > 50);
}

#[test]
fn dummy_cv_has_near_zero_r2() {
    let d = data(2, 11);
    for u in run_per_user_cv(&d, ModelKind::Dummy, FeatureSubset::Full, &quick()).unwrap() {
        assert!(u.report.r2.y_o.abs() <= 0.05, "{:?}", u.report);
        assert!(u.report.r2.y_c.abs() <= 0.05, "{:?}", u.report);
    }
}

#[test]
fn pooled_metric_differs_from_mean_of_folds() {
    // Two folds, each perfectly ranked but offset; per-fold R2 sees only the
    // within-fold spread.
    let pair = |o: f64| TargetPair::clamped(o, 0.0);
    let truth_a: Vec<_> = [0.0, 0.2].map(pair).to_vec();
    let pred_a: Vec<_> = [0.1, 0.1].map(pair).to_vec();
    let truth_b: Vec<_> = [1.0, 1.2].map(pair).to_vec();
    let pred_b: Vec<_> = [1.1, 1.1].map(pair).to_vec();
    let opening = |p: &[TargetPair<f64>], t: &[TargetPair<f64>]| {
        handstate_core::metrics::r_squared_target(p, t, handstate_core::Target::Opening).unwrap()
    };
    let per_fold = (opening(&pred_a, &truth_a) + opening(&pred_b, &truth_b)) / 2.0;
    let mut pred = pred_a.clone();
    pred.extend(&pred_b);
    let mut truth = truth_a.clone();
    truth.extend(&truth_b);
    let pooled = opening(&pred, &truth);
    assert!((per_fold - 0.0).abs() < 1e-12);
    assert!((pooled - (1.0 - 0.04 / 1.04)).abs() < 1e-12);

    // The protocol itself reports the pooled number.
    let d = data(1, 12);
    let cv = cross_validate_user(&d, "u0", ModelKind::Linear, FeatureSubset::Full, &quick()).unwrap();
    let seqs = d.for_user("u0");
    let (mut p, mut t) = (Vec::new(), Vec::new());
    for (fold, state) in cv.plan.folds.iter().zip(&cv.models) {
        let model = handstate_models::Model::new(state.clone()).unwrap();
        for id in &fold.validation {
            let s = seqs.iter().find(|s| &s.id == id).unwrap();
            p.extend(model.predict_sequence(&s.samples));
            t.extend(s.samples.iter().map(|x| x.y.unwrap()));
        }
    }
    let oracle = r_squared(&p, &t).unwrap();
    assert_eq!(cv.report.r2.y_o, oracle.y_o);
    assert_eq!(cv.report.r2.y_c, oracle.y_c);
}

fn assert_norm_from(state: &ModelState<f64>, rows: &[[f64; 10]]) {
    let cols = state.spec.features.columns();
    let norm = Normalization::fit(
        rows.iter().map(|r| &r[cols.clone()]),
        state.spec.input_dim,
    );
    assert_eq!(state.norm, norm);
}

#[test]
fn no_leakage_and_fold_accounting() {
    let d = data(2, 13);
    for subset in [FeatureSubset::Full, FeatureSubset::ExoOnly] {
        let cv = run_per_user_cv(&d, ModelKind::Dummy, subset, &quick()).unwrap();
        for u in &cv {
            let user = &u.report.user;
            let seqs = d.for_user(user);
            assert_eq!(u.models.len(), 3);
            let labeled: usize = seqs.iter().map(|s| s.samples.iter().filter(|x| x.y.is_some()).count()).sum();
            assert_eq!(u.report.samples, labeled, "every sequence predicted once");
            for (fold, state) in u.plan.folds.iter().zip(&u.models) {
                let train: Vec<_> = fold
                    .train
                    .iter()
                    .map(|id| seqs.iter().find(|s| &s.id == id).unwrap())
                    .collect();
                let rows: Vec<[f64; 10]> = train.iter().flat_map(|s| s.samples.iter().map(|x| x.features())).collect();
                assert_norm_from(state, &rows);
                // The dummy stores the training-split target means.
                let ys: Vec<TargetPair<f64>> = train.iter().flat_map(|s| s.samples.iter().filter_map(|x| x.y)).collect();
                let mean_o = ys.iter().map(|y| y.y_o).sum::<f64>() / ys.len() as f64;
                assert!((state.params[0] - mean_o).abs() < 1e-12);
            }
        }
    }
    let louo = run_leave_one_user_out(&d, ModelKind::Dummy, FeatureSubset::Full, &quick()).unwrap();
    assert_eq!(louo.len(), 2);
    for h in &louo {
        assert_eq!(h.train_ids.len(), 9);
        assert!(h.train_ids.iter().all(|id| !id.starts_with(&format!("{}-", h.report.user))));
        let rows: Vec<[f64; 10]> = h
            .train_ids
            .iter()
            .flat_map(|id| d.get(id).unwrap().samples.iter().map(|x| x.features()))
            .collect();
        assert_norm_from(&h.model, &rows);
    }
}

#[test]
fn louo_needs_two_users() {
    let d = data(1, 14);
    assert!(matches!(
        run_leave_one_user_out(&d, ModelKind::Dummy, FeatureSubset::Full, &quick()),
        Err(EvalError::Validation(_))
    ));
}

#[test]
fn ablation_tables_and_csv_round_trip() {
    let d = data(2, 15);
    let kinds = [ModelKind::Dummy, ModelKind::Linear];
    let a = run_ablation(&d, &kinds, &FeatureSubset::ALL, &quick()).unwrap();
    assert_eq!(a.rows.len(), 2 * 2 * 3 * 2 * 2);
    assert_eq!(a.cells.len(), 2 * 3 * 2 * 2);
    assert!(a.cells.iter().all(|c| c.users == 2 && c.ci_low.is_some()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    write_results_csv(&a.rows, &path).unwrap();
    assert_eq!(read_results_csv(&path).unwrap(), a.rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("user,architecture,subset,target,metric,value\n"));
    assert_eq!(text.lines().count(), a.rows.len() + 1);
    write_summary_csv(&a.cells, dir.path().join("summary.csv")).unwrap();

    let single = run_ablation(&data(1, 16), &[ModelKind::Dummy], &[FeatureSubset::Full], &quick()).unwrap();
    assert!(single.cells.iter().all(|c| c.ci_low.is_none() && c.ci_high.is_none()));
}

#[test]
fn cross_session_checks_and_in_sample_bound() {
    let s1 = data(1, 17);
    let mut cfg2 = ProtocolConfig {
        users: 1,
        ..ProtocolConfig::default()
    };
    cfg2.session = 2;
    let s2 = AlignedDataset::from_dataset(&generate_dataset(&cfg2, 17).unwrap(), &AlignmentConfig::default()).unwrap();
    assert!(matches!(
        run_cross_session(&s1, &s1, ModelKind::Linear, FeatureSubset::Full, &quick()),
        Err(EvalError::Validation(_))
    ));
    let two = data(2, 17);
    assert!(run_cross_session(&two, &s2, ModelKind::Linear, FeatureSubset::Full, &quick()).is_err());
    let r = run_cross_session(&s1, &s2, ModelKind::Linear, FeatureSubset::Full, &quick()).unwrap();
    assert_eq!(r.samples, 9 * 1200);

    // Degenerate test set = training set: in-sample beats cross-validated.
    let cv = cross_validate_user(&s1, "u0", ModelKind::Linear, FeatureSubset::Full, &quick()).unwrap();
    let seqs = s1.for_user("u0");
    let in_sample = evaluate_ensemble(&cv.models, &seqs, "u0").unwrap();
    assert!(in_sample.r2.y_o >= cv.report.r2.y_o);
    assert!(in_sample.r2.y_c >= cv.report.r2.y_c);
}

#[test]
fn averaging_identical_models_changes_nothing() {
    let d = data(1, 18);
    let cv = cross_validate_user(&d, "u0", ModelKind::Linear, FeatureSubset::Full, &quick()).unwrap();
    let seqs = d.for_user("u0");
    let one = evaluate_ensemble(&cv.models[..1], &seqs, "u0").unwrap();
    let three = evaluate_ensemble(&vec![cv.models[0].clone(); 3], &seqs, "u0").unwrap();
    assert_eq!(one.samples, three.samples);
    for (a, b) in [(one.r2, three.r2), (one.rmse, three.rmse)] {
        assert!((a.y_o - b.y_o).abs() < 1e-12 && (a.y_c - b.y_c).abs() < 1e-12);
    }
}

#[test]
fn switching_sequences_splice_at_the_cut() {
    let d = data(1, 19);
    let seqs = d.for_user("u0");
    let spliced = switching_sequences(&seqs, 30.0);
    assert_eq!(spliced.len(), 6 * 3);
    for s in &spliced {
        let n = seqs.iter().find(|x| s.id.starts_with(&format!("{}+", x.id))).unwrap();
        assert_eq!(s.samples.len(), n.samples.len());
        let before = s.samples.iter().find(|x| x.t < 30.0).unwrap().y.unwrap().y_c;
        let after = s.samples.last().unwrap().y.unwrap().y_c;
        assert_ne!(before, after);
        assert_eq!(before, s.modality.compliance() as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_are_partitions_for_any_seed(seed in any::<u64>()) {
        let ids = protocol_ids();
        let plan = make_fold_plan(ids.iter().map(|(i, m)| (i.as_str(), *m)), seed).unwrap();
        check_plan(&plan, &ids);
    }

    #[test]
    fn interval_contains_the_mean(values in proptest::collection::vec(-1.0f64..1.0, 2..10)) {
        let (lo, hi) = report::confidence_interval(&values).unwrap();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert!(lo <= mean + 1e-12 && mean <= hi + 1e-12);
    }
}
