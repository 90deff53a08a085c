//! The evaluation protocols: per-user 3-fold cross-validation, feature
//! ablation, cross-session testing and leave-one-user-out.

use std::collections::BTreeSet;

use handstate_core::model_state::{ModelKind, ModelSpec, ModelState, TrainConfig};
use handstate_core::sync::{align, AlignmentConfig};
use handstate_core::synth::sub_seed;
use handstate_core::types::{AlignedSample, Dataset, FeatureSubset, Modality, TargetPair};
use handstate_core::Scalar;
use handstate_models::{train, Model};
use rayon::prelude::*;

use crate::error::{EvalError, Result};
use crate::folds::{make_fold_plan, FoldPlan};
use crate::report::{aggregate, result_rows, Cell, MetricsReport, ResultRow};

/// One sequence after alignment onto the master clock.
#[derive(Clone, Debug)]
pub struct AlignedSequence<T: Scalar> {
    pub id: String,
    pub user: String,
    pub session: String,
    pub modality: Modality,
    pub samples: Vec<AlignedSample<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct AlignedDataset<T: Scalar> {
    pub sequences: Vec<AlignedSequence<T>>,
}

impl<T: Scalar> AlignedDataset<T> {
    pub fn from_dataset(d: &Dataset<T>, cfg: &AlignmentConfig) -> Result<Self> {
        let sequences = d
            .sequences
            .iter()
            .map(|s| {
                Ok(AlignedSequence {
                    id: s.id.clone(),
                    user: s.user.clone(),
                    session: s.session.clone(),
                    modality: s.modality,
                    samples: align(s, cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { sequences })
    }

    pub fn users(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sequences.iter().map(|s| s.user.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn sessions(&self) -> BTreeSet<String> {
        self.sequences.iter().map(|s| s.session.clone()).collect()
    }

    pub fn for_user(&self, user: &str) -> Vec<&AlignedSequence<T>> {
        self.sequences.iter().filter(|s| s.user == user).collect()
    }

    /// Copy holding only `user`'s sequences.
    pub fn only_user(&self, user: &str) -> Self {
        Self {
            sequences: self.sequences.iter().filter(|s| s.user == user).cloned().collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&AlignedSequence<T>> {
        self.sequences.iter().find(|s| s.id == id)
    }
}

/// Shared settings of every protocol run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub train: TrainConfig,
    /// Seed of the within-modality fold shuffle.
    pub fold_seed: u64,
    /// Overrides the default MLP/LSTM widths.
    pub hidden: Option<Vec<usize>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            fold_seed: 0,
            hidden: None,
        }
    }
}

impl EvalConfig {
    pub fn spec(&self, kind: ModelKind, subset: FeatureSubset) -> ModelSpec {
        let spec = ModelSpec::new(kind, subset);
        match (&self.hidden, kind) {
            (Some(h), ModelKind::Mlp | ModelKind::Lstm) => spec.with_hidden(h.clone()),
            _ => spec,
        }
    }

    /// Training config of model `index` within a protocol step.
    fn train_for(&self, index: u64) -> TrainConfig {
        TrainConfig {
            seed: sub_seed(self.train.seed, &[index]),
            ..self.train.clone()
        }
    }
}

fn fit<T: Scalar>(
    seqs: &[&AlignedSequence<T>],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    user: &str,
    fold: usize,
) -> Result<ModelState<T>> {
    let views: Vec<&[AlignedSample<T>]> = seqs.iter().map(|s| s.samples.as_slice()).collect();
    train(&views, spec, cfg).map_err(|source| EvalError::Training {
        user: user.to_string(),
        fold,
        source,
    })
}

/// Labeled predictions and truths of `model` over `seqs`, each sequence
/// predicted from a fresh state.
fn predict_pool<T: Scalar>(
    models: &[Model<T>],
    seqs: &[&AlignedSequence<T>],
    pred: &mut Vec<TargetPair<T>>,
    truth: &mut Vec<TargetPair<T>>,
) {
    let k = T::of_usize(models.len());
    for s in seqs {
        let outs: Vec<Vec<TargetPair<T>>> = models.iter().map(|m| m.predict_sequence(&s.samples)).collect();
        for (i, sample) in s.samples.iter().enumerate() {
            let Some(y) = sample.y else { continue };
            let (mut o, mut c) = (T::zero(), T::zero());
            for out in &outs {
                o += out[i].y_o;
                c += out[i].y_c;
            }
            pred.push(TargetPair::clamped(o / k, c / k));
            truth.push(y);
        }
    }
}

/// Cross-validation result of one user.
#[derive(Clone, Debug)]
pub struct UserCv<T: Scalar> {
    pub plan: FoldPlan,
    /// One model per fold, in plan order.
    pub models: Vec<ModelState<T>>,
    pub report: MetricsReport,
}

fn user_sequences<'a, T: Scalar>(data: &'a AlignedDataset<T>, user: &str) -> Result<Vec<&'a AlignedSequence<T>>> {
    let seqs = data.for_user(user);
    if seqs.is_empty() {
        return Err(EvalError::Validation(format!("no sequences for user {user}")));
    }
    Ok(seqs)
}

fn lookup<'a, T: Scalar>(seqs: &[&'a AlignedSequence<T>], ids: &[String]) -> Vec<&'a AlignedSequence<T>> {
    ids.iter()
        .map(|id| *seqs.iter().find(|s| &s.id == id).expect("plan ids come from these sequences"))
        .collect()
}

/// Trains one model per fold on the user's training sequences.
pub fn train_fold_models<T: Scalar>(
    seqs: &[&AlignedSequence<T>],
    plan: &FoldPlan,
    spec: &ModelSpec,
    cfg: &EvalConfig,
    user: &str,
) -> Result<Vec<ModelState<T>>> {
    plan.folds
        .iter()
        .enumerate()
        .map(|(k, fold)| fit(&lookup(seqs, &fold.train), spec, &cfg.train_for(k as u64), user, k))
        .collect()
}

/// Per-user 3-fold cross-validation for one user: three models, every
/// sequence predicted once by the model that did not see it, metrics
/// computed on the pooled predictions.
pub fn cross_validate_user<T: Scalar>(
    data: &AlignedDataset<T>,
    user: &str,
    kind: ModelKind,
    subset: FeatureSubset,
    cfg: &EvalConfig,
) -> Result<UserCv<T>> {
    let seqs = user_sequences(data, user)?;
    let plan = make_fold_plan(seqs.iter().map(|s| (s.id.as_str(), s.modality)), cfg.fold_seed)?;
    let spec = cfg.spec(kind, subset);
    let models = train_fold_models(&seqs, &plan, &spec, cfg, user)?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (fold, state) in plan.folds.iter().zip(&models) {
        let model = Model::new(state.clone())?;
        predict_pool(&[model], &lookup(&seqs, &fold.validation), &mut pred, &mut truth);
    }
    let report = MetricsReport::pooled(user, kind, subset, &pred, &truth)?;
    Ok(UserCv { plan, models, report })
}

/// [`cross_validate_user`] for every user, users in sorted order.
pub fn run_per_user_cv<T: Scalar + Send + Sync>(
    data: &AlignedDataset<T>,
    kind: ModelKind,
    subset: FeatureSubset,
    cfg: &EvalConfig,
) -> Result<Vec<UserCv<T>>> {
    data.users()
        .par_iter()
        .map(|u| cross_validate_user(data, u, kind, subset, cfg))
        .collect()
}

/// Full ablation grid: per-user reports plus cross-user cells.
#[derive(Clone, Debug)]
pub struct Ablation {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<Cell>,
    pub reports: Vec<MetricsReport>,
}

pub fn run_ablation<T: Scalar + Send + Sync>(
    data: &AlignedDataset<T>,
    kinds: &[ModelKind],
    subsets: &[FeatureSubset],
    cfg: &EvalConfig,
) -> Result<Ablation> {
    let mut reports = Vec::new();
    for &kind in kinds {
        for &subset in subsets {
            log::info!("ablation cell {kind} / {subset}");
            reports.extend(run_per_user_cv(data, kind, subset, cfg)?.into_iter().map(|u| u.report));
        }
    }
    let rows = result_rows(&reports);
    let cells = aggregate(&rows);
    Ok(Ablation { rows, cells, reports })
}

fn single_user<T: Scalar>(data: &AlignedDataset<T>, what: &str) -> Result<String> {
    let users = data.users();
    match users.as_slice() {
        [u] => Ok(u.clone()),
        _ => Err(EvalError::Validation(format!("{what} must hold exactly one user, found {users:?}"))),
    }
}

/// Checks the cross-session preconditions and returns the user.
pub fn check_cross_session<T: Scalar>(train: &AlignedDataset<T>, test: &AlignedDataset<T>) -> Result<String> {
    let user = single_user(train, "training set")?;
    let test_user = single_user(test, "test set")?;
    if user != test_user {
        return Err(EvalError::Validation(format!(
            "cross-session sets belong to different users ({user} vs {test_user})"
        )));
    }
    let shared: Vec<String> = train.sessions().intersection(&test.sessions()).cloned().collect();
    if !shared.is_empty() {
        return Err(EvalError::Validation(format!("train and test share sessions {shared:?}")));
    }
    Ok(user)
}

/// Averages the per-timestep outputs of `models` over every test sequence
/// and computes pooled metrics.
pub fn evaluate_ensemble<T: Scalar>(
    models: &[ModelState<T>],
    test: &[&AlignedSequence<T>],
    user: &str,
) -> Result<MetricsReport> {
    let first = models
        .first()
        .ok_or_else(|| EvalError::Validation("ensemble needs at least one model".into()))?;
    let (kind, subset) = (first.spec.kind, first.spec.features);
    let models: Vec<Model<T>> = models.iter().cloned().map(Model::new).collect::<std::result::Result<_, _>>()?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    predict_pool(&models, test, &mut pred, &mut truth);
    MetricsReport::pooled(user, kind, subset, &pred, &truth)
}

/// Trains the three fold models on one session and evaluates their averaged
/// prediction on another session of the same user.
pub fn run_cross_session<T: Scalar>(
    train_data: &AlignedDataset<T>,
    test_data: &AlignedDataset<T>,
    kind: ModelKind,
    subset: FeatureSubset,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let user = check_cross_session(train_data, test_data)?;
    let seqs = user_sequences(train_data, &user)?;
    let plan = make_fold_plan(seqs.iter().map(|s| (s.id.as_str(), s.modality)), cfg.fold_seed)?;
    let models = train_fold_models(&seqs, &plan, &cfg.spec(kind, subset), cfg, &user)?;
    let test: Vec<&AlignedSequence<T>> = test_data.sequences.iter().collect();
    evaluate_ensemble(&models, &test, &user)
}

/// Leave-one-user-out result for one held-out user.
#[derive(Clone, Debug)]
pub struct HeldOut<T: Scalar> {
    pub model: ModelState<T>,
    pub train_ids: Vec<String>,
    pub report: MetricsReport,
}

/// For every user, trains on all other users and evaluates on the held-out
/// user's sequences.
pub fn run_leave_one_user_out<T: Scalar + Send + Sync>(
    data: &AlignedDataset<T>,
    kind: ModelKind,
    subset: FeatureSubset,
    cfg: &EvalConfig,
) -> Result<Vec<HeldOut<T>>> {
    let users = data.users();
    if users.len() < 2 {
        return Err(EvalError::Validation(format!(
            "leave-one-user-out needs at least two users, found {}",
            users.len()
        )));
    }
    let spec = cfg.spec(kind, subset);
    users
        .par_iter()
        .enumerate()
        .map(|(k, u)| {
            let train_seqs: Vec<&AlignedSequence<T>> = data.sequences.iter().filter(|s| &s.user != u).collect();
            let model = fit(&train_seqs, &spec, &cfg.train_for(k as u64), u, k)?;
            let report = evaluate_ensemble(std::slice::from_ref(&model), &data.for_user(u), u)?;
            Ok(HeldOut {
                model,
                train_ids: train_seqs.iter().map(|s| s.id.clone()).collect(),
                report,
            })
        })
        .collect()
}

/// Reports of a list of per-user results.
pub fn reports<T: Scalar>(cv: &[UserCv<T>]) -> Vec<MetricsReport> {
    cv.iter().map(|u| u.report.clone()).collect()
}

/// Recordings in which the wearer changes behaviour at `split` seconds.
///
/// For every ordered pair of distinct modalities, the i-th sequence of the
/// first modality (in id order) is cut at `split` and continued by the i-th
/// sequence of the second. Cuts at a multiple of the cycle period keep the
/// motor trajectory continuous.
pub fn switching_sequences<T: Scalar>(seqs: &[&AlignedSequence<T>], split: f64) -> Vec<AlignedSequence<T>> {
    let by_modality = |m: Modality| {
        let mut v: Vec<&AlignedSequence<T>> = seqs.iter().copied().filter(|s| s.modality == m).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    let cut = T::of(split);
    let mut out = Vec::new();
    for a in Modality::ALL {
        for b in Modality::ALL {
            if a == b {
                continue;
            }
            for (head, tail) in by_modality(a).into_iter().zip(by_modality(b)) {
                let samples = head
                    .samples
                    .iter()
                    .filter(|s| s.t < cut)
                    .chain(tail.samples.iter().filter(|s| s.t >= cut))
                    .copied()
                    .collect();
                out.push(AlignedSequence {
                    id: format!("{}+{}", head.id, tail.id),
                    user: head.user.clone(),
                    session: head.session.clone(),
                    modality: a,
                    samples,
                });
            }
        }
    }
    out
}

/// Trains the model used for live sessions: all of the user's recordings
/// plus their [`switching_sequences`] at `split`, so the recurrent state
/// learns to follow a change of behaviour.
pub fn train_online_model<T: Scalar>(
    seqs: &[&AlignedSequence<T>],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    split: f64,
) -> Result<ModelState<T>> {
    let user = seqs.first().map(|s| s.user.clone()).unwrap_or_default();
    let spliced = switching_sequences(seqs, split);
    let all: Vec<&AlignedSequence<T>> = seqs.iter().copied().chain(spliced.iter()).collect();
    fit(&all, spec, cfg, &user, 0)
}
