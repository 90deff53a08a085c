//! Live inference over the two asynchronous device streams.
//!
//! A [`Session`] feeds exoskeleton and EMG records through the incremental
//! aligner and runs the model on every master-clock tick as soon as the tick
//! can no longer change. [`replay`] drives a session from a recorded
//! sequence, and [`run_live`] from JSON lines.

use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use handstate_core::dataset::{sequence_records, Source, StreamRecord};
use handstate_core::metrics::{r_squared_target, rmse, PerTarget};
use handstate_core::sync::{align, AlignmentConfig, ClosedTick, IncrementalAligner, PushError};
use handstate_core::types::{RawSequence, Target, TargetPair, EXO_FEATURES, FEATURES};
use handstate_core::Scalar;
use handstate_models::{Model, ModelError, PredictState};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Push(#[from] PushError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] handstate_core::Error),
    #[error("input line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// One prediction on the master clock.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionEvent<T: Scalar> {
    pub t: T,
    pub y_hat: TargetPair<T>,
    /// The freshest exo datum was older than the gap tolerance.
    pub stale_exo: bool,
    pub stale_emg: bool,
}

/// Wire format of a [`PredictionEvent`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub t: f64,
    pub y_o: f64,
    pub y_c: f64,
    pub stale_exo: bool,
    pub stale_emg: bool,
}

impl<T: Scalar> From<PredictionEvent<T>> for PredictionLine {
    fn from(e: PredictionEvent<T>) -> Self {
        Self {
            t: e.t.as_f64(),
            y_o: e.y_hat.y_o.as_f64(),
            y_c: e.y_hat.y_c.as_f64(),
            stale_exo: e.stale_exo,
            stale_emg: e.stale_emg,
        }
    }
}

/// A running inference session. Holds its own recurrent state, so any number
/// of sessions may share one model.
pub struct Session<'m, T: Scalar> {
    model: &'m Model<T>,
    state: PredictState<T>,
    aligner: IncrementalAligner<T>,
    last_t: Option<T>,
}

/// Starts a session with zeroed recurrent state.
pub fn open_session<T: Scalar>(model: &Model<T>, cfg: AlignmentConfig) -> Result<Session<'_, T>> {
    Ok(Session {
        model,
        state: model.new_state(),
        aligner: IncrementalAligner::new(cfg)?,
        last_t: None,
    })
}

impl<T: Scalar> Session<'_, T> {
    /// Feeds one record and returns the predictions of every tick it closed.
    /// A rejected record leaves the session unchanged. Tracker records are
    /// accepted and ignored.
    pub fn push_event(&mut self, e: &StreamRecord<T>) -> Result<Vec<PredictionEvent<T>>> {
        let ticks = self.aligner.push(e)?;
        self.predict(ticks)
    }

    /// Closes every remaining tick up to the last timestamp seen.
    pub fn finish(&mut self) -> Result<Vec<PredictionEvent<T>>> {
        let ticks = self.aligner.finish();
        self.predict(ticks)
    }

    pub fn model(&self) -> &Model<T> {
        self.model
    }

    fn predict(&mut self, ticks: Vec<ClosedTick<T>>) -> Result<Vec<PredictionEvent<T>>> {
        let mut out = Vec::with_capacity(ticks.len());
        for tick in ticks {
            debug_assert!(self.last_t.map_or(true, |last| tick.t > last));
            let mut row = [T::zero(); FEATURES];
            row[..EXO_FEATURES].copy_from_slice(&tick.exo);
            row[EXO_FEATURES..].copy_from_slice(&tick.emg);
            let y_hat = self.model.step(&mut self.state, &row)?;
            self.last_t = Some(tick.t);
            out.push(PredictionEvent {
                t: tick.t,
                y_hat,
                stale_exo: tick.stale_exo,
                stale_emg: tick.stale_emg,
            });
        }
        Ok(out)
    }
}

/// Pooled metrics of a replay against the recorded ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub samples: usize,
    /// Absent for a target whose ground truth is constant.
    pub r2: PerTarget<Option<f64>>,
    pub rmse: PerTarget<f64>,
}

#[derive(Clone, Debug)]
pub struct Replay<T: Scalar> {
    pub predictions: Vec<PredictionEvent<T>>,
    /// Present when the sequence carries ground truth.
    pub metrics: Option<ReplayMetrics>,
}

/// Feeds a recorded sequence through a fresh session in timestamp order.
///
/// `speed` paces the feed against the wall clock (1.0 is real time); `None`
/// runs as fast as possible. Pacing never changes the predictions.
pub fn replay<T: Scalar>(
    seq: &RawSequence<T>,
    model: &Model<T>,
    cfg: &AlignmentConfig,
    speed: Option<f64>,
) -> Result<Replay<T>> {
    seq.validate()?;
    let mut session = open_session(model, cfg.clone())?;
    let mut predictions = Vec::new();
    let start = Instant::now();
    for rec in sequence_records(seq).iter().filter(|r| r.src != Source::Gt) {
        if let Some(s) = speed.filter(|s| s.is_finite() && *s > 0.0) {
            let due = Duration::from_secs_f64((rec.t.as_f64() / s).max(0.0));
            if let Some(wait) = due.checked_sub(start.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        predictions.extend(session.push_event(rec)?);
    }
    predictions.extend(session.finish()?);
    let metrics = if seq.is_labeled() {
        score(&predictions, &align(seq, cfg)?)?
    } else {
        None
    };
    Ok(Replay { predictions, metrics })
}

/// Matches predictions to labeled aligned ticks by timestamp.
fn score<T: Scalar>(
    predictions: &[PredictionEvent<T>],
    aligned: &[handstate_core::types::AlignedSample<T>],
) -> Result<Option<ReplayMetrics>> {
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    let mut j = 0;
    for p in predictions {
        while j < aligned.len() && aligned[j].t < p.t {
            j += 1;
        }
        if let Some(y) = aligned.get(j).filter(|s| s.t == p.t).and_then(|s| s.y) {
            pred.push(p.y_hat);
            truth.push(y);
        }
    }
    if pred.len() < 2 {
        return Ok(None);
    }
    Ok(Some(ReplayMetrics {
        samples: pred.len(),
        r2: PerTarget {
            y_o: r2_or_none(&pred, &truth, Target::Opening)?,
            y_c: r2_or_none(&pred, &truth, Target::Compliance)?,
        },
        rmse: rmse(&pred, &truth)?.map(|v| v.as_f64()),
    }))
}

fn r2_or_none<T: Scalar>(pred: &[TargetPair<T>], truth: &[TargetPair<T>], target: Target) -> Result<Option<f64>> {
    match r_squared_target(pred, truth, target) {
        Ok(v) => Ok(Some(v.as_f64())),
        Err(handstate_core::Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Reads stream records as JSON lines from `input` and writes one
/// [`PredictionLine`] per closed tick to `output`. Records the aligner
/// rejects are logged and skipped. Returns the number of predictions.
pub fn run_live<T: Scalar>(
    model: &Model<T>,
    cfg: AlignmentConfig,
    input: impl BufRead,
    mut output: impl Write,
) -> Result<usize> {
    let mut session = open_session(model, cfg)?;
    let mut emitted = 0;
    let mut write = |events: Vec<PredictionEvent<T>>, out: &mut dyn Write| -> Result<()> {
        for e in events {
            serde_json::to_writer(&mut *out, &PredictionLine::from(e)).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
            emitted += 1;
        }
        out.flush()?;
        Ok(())
    };
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StreamRecord<f64> =
            serde_json::from_str(&line).map_err(|source| StreamError::Json { line: i + 1, source })?;
        let rec = StreamRecord {
            t: T::of(rec.t),
            src: rec.src,
            v: rec.v.into_iter().map(T::of).collect(),
        };
        match session.push_event(&rec) {
            Ok(events) => write(events, &mut output)?,
            Err(StreamError::Push(e)) => log::warn!("line {}: record rejected: {e}", i + 1),
            Err(e) => return Err(e),
        }
    }
    let rest = session.finish()?;
    write(rest, &mut output)?;
    Ok(emitted)
}
