//! Subcommand implementations.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use handstate_core::dataset::{load_dataset, save_dataset};
use handstate_core::model_state::{load_model, save_model, ModelKind, ModelState, Optimizer, TrainConfig};
use handstate_core::sync::{align, AlignmentConfig};
use handstate_core::synth::{generate_dataset, generate_online_session, ProtocolConfig, UserProfile, ONLINE_SEGMENT};
use handstate_core::types::{Dataset, FeatureSubset};
use handstate_core::Real;
use handstate_eval::{
    aggregate, result_rows, run_cross_session, run_leave_one_user_out, run_per_user_cv,
    train_online_model, AlignedDataset, EvalConfig, EvalError, MetricsReport,
};
use handstate_models::{train, Model};
use handstate_stream::{replay, run_live, PredictionLine};

use crate::args::{CrossvalArgs, GenerateArgs, PlotArgs, Protocol, ReplayArgs, TrainArgs, TrainingArgs};
use crate::manifest::RunManifest;
use crate::svg;

pub const MODEL_FILE: &str = "model.json";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const FIGURE_FILE: &str = "figure.svg";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const ONLINE_DIR: &str = "online";

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn resolve_seed(seed: &mut Option<u64>) -> u64 {
    *seed.get_or_insert_with(rand::random)
}

fn train_config(t: &TrainingArgs, seed: u64) -> TrainConfig {
    let defaults = TrainConfig::default();
    TrainConfig {
        optimizer: t.lr.map(Optimizer::adam).unwrap_or(defaults.optimizer),
        epochs: t.epochs.unwrap_or(defaults.epochs),
        batch: None,
        seed,
    }
}

pub fn generate(mut args: GenerateArgs, argv: Vec<String>) -> anyhow::Result<()> {
    let seed = resolve_seed(&mut args.seed);
    let cfg = ProtocolConfig {
        users: args.users,
        session: args.session,
        ..ProtocolConfig::default()
    };
    let data: Dataset<Real> = generate_dataset(&cfg, seed)?;
    save_dataset(&data, &args.out)?;
    let mut manifest = RunManifest::new(argv, &args)?;
    manifest.seeds.insert("dataset".into(), seed);
    manifest.artifacts.push(handstate_core::dataset::MANIFEST_FILE.into());
    manifest
        .artifacts
        .extend(data.sequences.iter().map(|s| format!("{}.jsonl", s.id)));
    if args.online_session {
        let sessions = (0..args.users)
            .map(|u| {
                let profile = UserProfile::generate(u, seed, &cfg.signal);
                generate_online_session::<Real>(&profile, &cfg, seed)
            })
            .collect();
        save_dataset(&Dataset::new(sessions, Some(seed))?, args.out.join(ONLINE_DIR))?;
        manifest.artifacts.push(format!("{ONLINE_DIR}/"));
    }
    manifest.write(&args.out)?;
    log::info!("wrote {} sequences to {}", data.sequences.len(), args.out.display());
    Ok(())
}

fn load_aligned(path: &Path) -> anyhow::Result<AlignedDataset<Real>> {
    let data: Dataset<Real> = load_dataset(path)?;
    Ok(AlignedDataset::from_dataset(&data, &AlignmentConfig::default())?)
}

pub fn train_model(mut args: TrainArgs, argv: Vec<String>) -> anyhow::Result<()> {
    let seed = resolve_seed(&mut args.training.seed);
    let data = load_aligned(&args.data)?;
    let seqs = data.for_user(&args.user);
    if seqs.is_empty() {
        return Err(EvalError::Validation(format!(
            "unknown user '{}'; available users: {}",
            args.user,
            data.users().join(", ")
        ))
        .into());
    }
    let eval = EvalConfig {
        hidden: args.training.hidden.clone().map(|h| h.0),
        ..EvalConfig::default()
    };
    let spec = eval.spec(args.arch, args.features);
    let cfg = train_config(&args.training, seed);
    let state: ModelState<Real> = if args.switching {
        train_online_model(&seqs, &spec, &cfg, ONLINE_SEGMENT)?
    } else {
        let views: Vec<_> = seqs.iter().map(|s| s.samples.as_slice()).collect();
        train(&views, &spec, &cfg)?
    };
    create_dir(&args.out)?;
    save_model(&state, args.out.join(MODEL_FILE))?;
    let mut manifest = RunManifest::new(argv, &args)?;
    manifest.seeds.insert("train".into(), seed);
    manifest.artifacts.push(MODEL_FILE.into());
    manifest.write(&args.out)?;
    Ok(())
}

pub fn crossval(mut args: CrossvalArgs, argv: Vec<String>) -> anyhow::Result<()> {
    let seed = resolve_seed(&mut args.training.seed);
    let cfg = EvalConfig {
        train: train_config(&args.training, seed),
        fold_seed: args.fold_seed,
        hidden: args.training.hidden.clone().map(|h| h.0),
    };
    let data = load_aligned(&args.data)?;
    let test = match (args.protocol, &args.test_data) {
        (Protocol::CrossSession, Some(p)) => Some(load_aligned(p)?),
        (Protocol::CrossSession, None) => bail!(EvalError::Validation(
            "the cross-session protocol needs --test-data".into()
        )),
        _ => None,
    };
    let mut reports: Vec<MetricsReport> = Vec::new();
    for &kind in &args.archs.0 {
        for &subset in &args.features.0 {
            log::info!("{:?}: {kind} / {subset}", args.protocol);
            reports.extend(run_protocol(&args, &data, test.as_ref(), kind, subset, &cfg)?);
        }
    }
    let rows = result_rows(&reports);
    let cells = aggregate(&rows);
    create_dir(&args.out)?;
    handstate_eval::report::write_results_csv(&rows, args.out.join(RESULTS_FILE))?;
    handstate_eval::report::write_summary_csv(&cells, args.out.join(SUMMARY_FILE))?;
    write_file(&args.out.join(FIGURE_FILE), &svg::ablation_figure(&cells))?;
    let mut manifest = RunManifest::new(argv, &args)?;
    manifest.seeds.insert("train".into(), seed);
    manifest.seeds.insert("folds".into(), args.fold_seed);
    manifest.artifacts = vec![RESULTS_FILE.into(), SUMMARY_FILE.into(), FIGURE_FILE.into()];
    manifest.write(&args.out)?;
    Ok(())
}

fn run_protocol(
    args: &CrossvalArgs,
    data: &AlignedDataset<Real>,
    test: Option<&AlignedDataset<Real>>,
    kind: ModelKind,
    subset: FeatureSubset,
    cfg: &EvalConfig,
) -> anyhow::Result<Vec<MetricsReport>> {
    Ok(match args.protocol {
        Protocol::PerUser => run_per_user_cv(data, kind, subset, cfg)?
            .into_iter()
            .map(|u| u.report)
            .collect(),
        Protocol::Louo => run_leave_one_user_out(data, kind, subset, cfg)?
            .into_iter()
            .map(|h| h.report)
            .collect(),
        Protocol::CrossSession => {
            let test = test.expect("checked by caller");
            let mut out = Vec::new();
            for user in data.users() {
                let held = test.only_user(&user);
                if held.sequences.is_empty() {
                    log::warn!("user {user} has no sequences in the test session; skipped");
                    continue;
                }
                out.push(run_cross_session(&data.only_user(&user), &held, kind, subset, cfg)?);
            }
            if out.is_empty() {
                bail!(EvalError::Validation("no user appears in both sessions".into()));
            }
            out
        }
    })
}

pub fn plot(args: PlotArgs) -> anyhow::Result<()> {
    let rows = handstate_eval::report::read_results_csv(&args.results)?;
    write_file(&args.out, &svg::ablation_figure(&aggregate(&rows)))
}

pub fn replay_cmd(args: ReplayArgs, argv: Vec<String>) -> anyhow::Result<()> {
    let state: ModelState<Real> = load_model(&args.model)?;
    let model = Model::new(state)?;
    let cfg = AlignmentConfig::default();
    let Some(data_dir) = &args.data else {
        let stdin = std::io::stdin().lock();
        let stdout = std::io::stdout().lock();
        let n = run_live(&model, cfg, stdin, BufWriter::new(stdout))?;
        log::info!("{n} predictions");
        return Ok(());
    };
    let data: Dataset<Real> = load_dataset(data_dir)?;
    let seq = match &args.sequence {
        Some(id) => data
            .get(id)
            .ok_or_else(|| EvalError::Validation(format!("no sequence '{id}' in {}", data_dir.display())))?,
        None => data
            .sequences
            .first()
            .ok_or_else(|| EvalError::Validation("dataset is empty".into()))?,
    };
    let run = replay(seq, &model, &cfg, args.pace)?;
    let lines: Vec<PredictionLine> = run.predictions.iter().copied().map(PredictionLine::from).collect();
    let mut artifacts = Vec::new();
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            write_predictions(BufWriter::new(std::fs::File::create(dir.join(PREDICTIONS_FILE))?), &lines)?;
            artifacts.push(PREDICTIONS_FILE.to_string());
        }
        None => write_predictions(BufWriter::new(std::io::stdout().lock()), &lines)?,
    }
    if let Some(plot) = &args.plot {
        let aligned = align(seq, &cfg)?;
        let preds: Vec<_> = run.predictions.iter().map(|p| (p.t, p.y_hat)).collect();
        write_file(plot, &svg::trace_figure(&aligned, &preds))?;
        artifacts.push(plot.display().to_string());
    }
    let metrics = run.metrics.as_ref().map(serde_json::to_value).transpose()?;
    if let Some(m) = &metrics {
        let block = serde_json::to_string_pretty(&serde_json::json!({ "sequence": seq.id, "metrics": m }))?;
        if args.out.is_some() {
            println!("{block}");
        } else {
            eprintln!("{block}");
        }
    }
    if let Some(dir) = &args.out {
        let mut manifest = RunManifest::new(argv, &args)?;
        manifest.artifacts = artifacts;
        manifest.metrics = metrics;
        manifest.write(dir)?;
    }
    Ok(())
}

fn write_predictions(mut w: impl Write, lines: &[PredictionLine]) -> anyhow::Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn write_file(path: &PathBuf, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
