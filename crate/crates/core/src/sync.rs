//! Multi-rate alignment onto the 20 Hz master clock.
//!
//! Tick `k` sits at `t_k = k / master_rate`. At each tick:
//! - exo features are the latest exo sample with `t <= t_k` (zero-order hold);
//! - EMG features are the per-channel mean of samples in `(t_k - w, t_k]`,
//!   falling back to the latest EMG sample when the window is empty;
//! - `y_o` is the tracker stream linearly interpolated at `t_k` (held at the
//!   ends), `y_c` the modality label in effect at `t_k`.
//!
//! Ticks are generated for `k = 0..=floor(duration * rate)` where duration is
//! the latest exo or EMG timestamp. Ticks that precede the first exo or the
//! first EMG sample are dropped; actuator or muscle state is never invented.
//!
//! Two implementations live here: [`synchronize_streams`]/[`align`] work on a
//! complete recording, [`IncrementalAligner`] consumes records one at a time
//! and closes ticks by watermark. They must agree bit for bit.

use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dataset::{Source, StreamRecord};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{
    AlignedSample, RawSequence, TargetPair, TrackerSample, EMG_CHANNELS, EMG_RATE, EXO_FEATURES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GtMethod {
    LinearInterpolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExoMethod {
    ZeroOrderHold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    /// Hz.
    pub master_rate: f64,
    /// Trailing EMG averaging window, seconds.
    pub emg_window: f64,
    pub gt_method: GtMethod,
    pub exo_method: ExoMethod,
    /// Largest tolerated gap between consecutive samples of one stream, seconds.
    pub max_gap: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            master_rate: 20.0,
            emg_window: 0.05,
            gt_method: GtMethod::LinearInterpolation,
            exo_method: ExoMethod::ZeroOrderHold,
            max_gap: 0.2,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.master_rate > 0.0 && self.master_rate.is_finite()) {
            return Err(Error::Validation("master_rate must be positive".into()));
        }
        // One EMG period is the shortest window that can hold a sample.
        if !(self.emg_window >= 1.0 / EMG_RATE - 1e-12) {
            return Err(Error::Validation(format!(
                "emg_window {} shorter than one EMG period (1/{EMG_RATE} s)",
                self.emg_window
            )));
        }
        if !(self.max_gap > 0.0) {
            return Err(Error::Validation("max_gap must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn tick_time<T: Scalar>(&self, k: usize) -> T {
        T::of(k as f64 / self.master_rate)
    }

    /// Open lower edge of the EMG window ending at tick `k`.
    #[inline]
    pub fn window_start<T: Scalar>(&self, k: usize) -> T {
        T::of(k as f64 / self.master_rate - self.emg_window)
    }

    /// Largest `k` with `tick_time(k) <= duration`; tick 0 always exists.
    pub fn last_tick<T: Scalar>(&self, duration: T) -> usize {
        let est = (duration.as_f64() * self.master_rate).floor().max(0.0) as usize;
        let mut k = est + 1;
        while k > 0 && self.tick_time::<T>(k) > duration {
            k -= 1;
        }
        k
    }
}

/// Indices consumed from each stream at one master tick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TickSlot<T: Scalar> {
    pub k: usize,
    pub t: T,
    /// Latest exo sample at or before the tick.
    pub exo: usize,
    /// EMG samples inside `(t - w, t]`.
    pub emg_window: Range<usize>,
    /// Latest EMG sample at or before the tick.
    pub emg_latest: usize,
    /// Tracker samples bracketing the tick; equal indices when the tick hits
    /// a sample exactly or lies outside the tracker span.
    pub gt: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TickSchedule<T: Scalar> {
    pub slots: Vec<TickSlot<T>>,
}

/// Plans the master ticks for three sorted timestamp lists. Pure and
/// deterministic.
pub fn synchronize_streams<T: Scalar>(
    exo_t: &[T],
    emg_t: &[T],
    gt_t: &[T],
    cfg: &AlignmentConfig,
) -> TickSchedule<T> {
    let (Some(&exo_last), Some(&emg_last)) = (exo_t.last(), emg_t.last()) else {
        return TickSchedule { slots: Vec::new() };
    };
    let duration = exo_last.max(emg_last);
    let last_k = cfg.last_tick(duration);

    let mut slots = Vec::with_capacity(last_k + 1);
    // Count of samples with t <= tick, and with t <= window start.
    let (mut exo_upto, mut emg_upto, mut emg_from, mut gt_upto) = (0usize, 0usize, 0usize, 0usize);
    for k in 0..=last_k {
        let t: T = cfg.tick_time(k);
        let lo: T = cfg.window_start(k);
        while exo_upto < exo_t.len() && exo_t[exo_upto] <= t {
            exo_upto += 1;
        }
        while emg_upto < emg_t.len() && emg_t[emg_upto] <= t {
            emg_upto += 1;
        }
        while emg_from < emg_t.len() && emg_t[emg_from] <= lo {
            emg_from += 1;
        }
        while gt_upto < gt_t.len() && gt_t[gt_upto] <= t {
            gt_upto += 1;
        }
        if exo_upto == 0 || emg_upto == 0 {
            continue;
        }
        let gt = if gt_t.is_empty() {
            None
        } else if gt_upto == 0 {
            Some((0, 0))
        } else if gt_upto == gt_t.len() || gt_t[gt_upto - 1] == t {
            Some((gt_upto - 1, gt_upto - 1))
        } else {
            Some((gt_upto - 1, gt_upto))
        };
        slots.push(TickSlot {
            k,
            t,
            exo: exo_upto - 1,
            emg_window: emg_from.min(emg_upto)..emg_upto,
            emg_latest: emg_upto - 1,
            gt,
        });
    }
    TickSchedule { slots }
}

/// Linear interpolation of the tracker stream at `t`, held constant outside
/// its span. `None` for an empty stream.
pub fn interpolate_opening<T: Scalar>(gt: &[TrackerSample<T>], t: T) -> Option<T> {
    let first = gt.first()?;
    let last = gt.last()?;
    if t <= first.t {
        return Some(first.opening);
    }
    if t >= last.t {
        return Some(last.opening);
    }
    let hi = gt.partition_point(|s| s.t <= t);
    let (a, b) = (&gt[hi - 1], &gt[hi]);
    if a.t == t {
        return Some(a.opening);
    }
    Some(interp(a, b, t))
}

#[inline]
fn interp<T: Scalar>(a: &TrackerSample<T>, b: &TrackerSample<T>, t: T) -> T {
    a.opening + (b.opening - a.opening) * (t - a.t) / (b.t - a.t)
}

/// Mean of `samples` channel by channel, summed in order.
#[inline]
fn channel_mean<'a, T: Scalar>(samples: impl Iterator<Item = &'a [T; EMG_CHANNELS]>) -> Option<[T; EMG_CHANNELS]> {
    let mut sum = [T::zero(); EMG_CHANNELS];
    let mut n = 0usize;
    for s in samples {
        for (acc, v) in sum.iter_mut().zip(s) {
            *acc += *v;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let nf = T::of_usize(n);
    Some(sum.map(|v| v / nf))
}

fn check_gaps<T: Scalar>(
    stream: &'static str,
    ts: impl Iterator<Item = T>,
    max_gap: f64,
) -> Result<()> {
    let mut prev: Option<T> = None;
    for t in ts {
        if let Some(p) = prev {
            let gap = (t - p).as_f64();
            if gap > max_gap {
                return Err(Error::Gap {
                    stream,
                    from: p.as_f64(),
                    to: t.as_f64(),
                    gap,
                    max_gap,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}

/// Aligns one recording onto the master clock.
pub fn align<T: Scalar>(seq: &RawSequence<T>, cfg: &AlignmentConfig) -> Result<Vec<AlignedSample<T>>> {
    cfg.validate()?;
    if seq.exo.is_empty() || seq.emg.is_empty() {
        return Err(Error::Validation(format!(
            "sequence '{}' has an empty exo or emg stream",
            seq.id
        )));
    }
    check_gaps("exo", seq.exo.iter().map(|s| s.t), cfg.max_gap)?;
    check_gaps("emg", seq.emg.iter().map(|s| s.t), cfg.max_gap)?;

    let exo_t: Vec<T> = seq.exo.iter().map(|s| s.t).collect();
    let emg_t: Vec<T> = seq.emg.iter().map(|s| s.t).collect();
    let gt_t: Vec<T> = seq.gt.iter().map(|s| s.t).collect();
    let schedule = synchronize_streams(&exo_t, &emg_t, &gt_t, cfg);

    Ok(schedule
        .slots
        .iter()
        .map(|slot| {
            let e = &seq.exo[slot.exo];
            let emg = channel_mean(seq.emg[slot.emg_window.clone()].iter().map(|s| &s.channels))
                .unwrap_or(seq.emg[slot.emg_latest].channels);
            let y = slot.gt.map(|(lo, hi)| {
                let y_o = if lo == hi {
                    seq.gt[lo].opening
                } else {
                    interp(&seq.gt[lo], &seq.gt[hi], slot.t)
                };
                let y_c = T::of(seq.modality_at(slot.t.as_f64()).compliance() as f64);
                TargetPair::clamped(y_o, y_c)
            });
            AlignedSample {
                t: slot.t,
                exo: [e.position, e.current],
                emg,
                y,
            }
        })
        .collect())
}

/// Features of one closed tick from the incremental aligner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosedTick<T: Scalar> {
    pub k: usize,
    pub t: T,
    pub exo: [T; EXO_FEATURES],
    pub emg: [T; EMG_CHANNELS],
    /// Freshest exo datum is older than `max_gap` at this tick.
    pub stale_exo: bool,
    pub stale_emg: bool,
}

/// Error from feeding a record to [`IncrementalAligner`].
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PushError {
    #[error("{src:?} timestamp regressed from {last} to {t}")]
    Regression { src: Source, last: f64, t: f64 },
    #[error("{src:?} record has {got} values, expected {expected}")]
    Arity {
        src: Source,
        got: usize,
        expected: usize,
    },
    #[error("non-finite value in {0:?} record")]
    NonFinite(Source),
}

/// Watermark-driven version of [`align`] for live streams.
///
/// A tick closes once each source has either moved past it or fallen more
/// than `max_gap` behind the other source. Tracker records are ignored.
#[derive(Clone, Debug)]
pub struct IncrementalAligner<T: Scalar> {
    cfg: AlignmentConfig,
    next_k: usize,
    exo_wm: Option<T>,
    emg_wm: Option<T>,
    /// Exo samples not yet superseded for the next tick.
    exo_buf: VecDeque<(T, [T; EXO_FEATURES])>,
    /// EMG samples that can still fall in a future window, plus the latest.
    emg_buf: VecDeque<(T, [T; EMG_CHANNELS])>,
}

impl<T: Scalar> IncrementalAligner<T> {
    pub fn new(cfg: AlignmentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            next_k: 0,
            exo_wm: None,
            emg_wm: None,
            exo_buf: VecDeque::new(),
            emg_buf: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &AlignmentConfig {
        &self.cfg
    }

    pub fn watermarks(&self) -> (Option<T>, Option<T>) {
        (self.exo_wm, self.emg_wm)
    }

    /// Feeds one record and returns every tick that became closeable.
    pub fn push(&mut self, rec: &StreamRecord<T>) -> std::result::Result<Vec<ClosedTick<T>>, PushError> {
        if rec.src == Source::Gt {
            return Ok(Vec::new());
        }
        if rec.v.len() != rec.src.arity() {
            return Err(PushError::Arity {
                src: rec.src,
                got: rec.v.len(),
                expected: rec.src.arity(),
            });
        }
        if !rec.t.is_finite() || rec.v.iter().any(|v| !v.is_finite()) {
            return Err(PushError::NonFinite(rec.src));
        }
        let wm = match rec.src {
            Source::Exo => &mut self.exo_wm,
            Source::Emg => &mut self.emg_wm,
            Source::Gt => unreachable!(),
        };
        if let Some(last) = *wm {
            if rec.t < last {
                return Err(PushError::Regression {
                    src: rec.src,
                    last: last.as_f64(),
                    t: rec.t.as_f64(),
                });
            }
        }
        *wm = Some(rec.t);
        match rec.src {
            Source::Exo => self.exo_buf.push_back((rec.t, [rec.v[0], rec.v[1]])),
            Source::Emg => {
                let mut ch = [T::zero(); EMG_CHANNELS];
                ch.copy_from_slice(&rec.v);
                self.emg_buf.push_back((rec.t, ch));
            }
            Source::Gt => unreachable!(),
        }
        Ok(self.drain(false))
    }

    /// Closes every remaining tick up to the latest timestamp seen.
    pub fn finish(&mut self) -> Vec<ClosedTick<T>> {
        self.drain(true)
    }

    fn closeable(&self, t: T) -> bool {
        let gap = T::of(self.cfg.max_gap);
        let ready = |wm: Option<T>| wm.is_some_and(|w| w > t);
        let lagging = |wm: Option<T>, other: Option<T>| match (wm, other) {
            (_, None) => false,
            (None, Some(_)) => false,
            (Some(w), Some(o)) => o - w > gap,
        };
        let exo_ok = ready(self.exo_wm) || lagging(self.exo_wm, self.emg_wm);
        let emg_ok = ready(self.emg_wm) || lagging(self.emg_wm, self.exo_wm);
        // A source that never produced data blocks nothing once the other
        // one is past the tick by more than max_gap.
        let exo_absent = self.exo_wm.is_none() && self.emg_wm.is_some_and(|o| o - t > gap);
        let emg_absent = self.emg_wm.is_none() && self.exo_wm.is_some_and(|o| o - t > gap);
        (exo_ok || exo_absent) && (emg_ok || emg_absent) && (ready(self.exo_wm) || ready(self.emg_wm))
    }

    fn drain(&mut self, flush: bool) -> Vec<ClosedTick<T>> {
        let mut out = Vec::new();
        let horizon = match (self.exo_wm, self.emg_wm) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        let Some(horizon) = horizon else {
            return out;
        };
        loop {
            let k = self.next_k;
            let t: T = self.cfg.tick_time(k);
            let can_close = if flush { t <= horizon } else { self.closeable(t) };
            if !can_close {
                break;
            }
            if let Some(tick) = self.close_tick(k, t) {
                out.push(tick);
            }
            self.next_k += 1;
        }
        out
    }

    fn close_tick(&mut self, k: usize, t: T) -> Option<ClosedTick<T>> {
        // Retire exo samples superseded by a newer one still <= t.
        while self.exo_buf.len() >= 2 && self.exo_buf[1].0 <= t {
            self.exo_buf.pop_front();
        }
        let lo: T = self.cfg.window_start(k);
        // Keep the newest sample <= lo for holding; older ones can go.
        while self.emg_buf.len() >= 2 && self.emg_buf[1].0 <= lo {
            self.emg_buf.pop_front();
        }

        let exo = self.exo_buf.front().filter(|(te, _)| *te <= t).copied();
        let upto = self.emg_buf.iter().take_while(|(te, _)| *te <= t).count();
        let (exo_t, exo_v) = exo?;
        if upto == 0 {
            return None;
        }
        let (emg_latest_t, emg_latest) = self.emg_buf[upto - 1];
        let emg = channel_mean(
            self.emg_buf
                .iter()
                .take(upto)
                .filter(|(te, _)| *te > lo)
                .map(|(_, c)| c),
        )
        .unwrap_or(emg_latest);
        let gap = T::of(self.cfg.max_gap);
        Some(ClosedTick {
            k,
            t,
            exo: exo_v,
            emg,
            stale_exo: t - exo_t > gap,
            stale_emg: t - emg_latest_t > gap,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{EmgSample, ExoSample, Modality};
    use std::f64::consts::FRAC_PI_2;

    fn seq(exo: Vec<f64>, emg: Vec<f64>, gt: Vec<(f64, f64)>) -> RawSequence<f64> {
        RawSequence {
            id: "s".into(),
            user: "u".into(),
            session: "x".into(),
            modality: Modality::Helping,
            segments: vec![],
            exo: exo
                .into_iter()
                .map(|t| ExoSample { t, position: t, current: 2.0 * t })
                .collect(),
            emg: emg
                .into_iter()
                .map(|t| EmgSample { t, channels: [t; 8] })
                .collect(),
            gt: gt
                .into_iter()
                .map(|(t, opening)| TrackerSample { t, opening })
                .collect(),
        }
    }

    #[test]
    fn gt_midpoint_interpolates() {
        let s = seq(
            (0..=20).map(|i| i as f64 * 0.05).collect(),
            (0..=50).map(|i| i as f64 * 0.02).collect(),
            vec![(0.0, 0.0), (1.0, FRAC_PI_2)],
        );
        let out = align(&s, &AlignmentConfig::default()).unwrap();
        let mid = out.iter().find(|a| (a.t - 0.5).abs() < 1e-12).unwrap();
        assert!((mid.y.unwrap().y_o - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(mid.y.unwrap().y_c, 1.0);
    }

    #[test]
    fn sample_on_tick_belongs_to_that_tick() {
        // EMG at 0.04 and 0.05: both in (0.0, 0.05] for tick 1.
        let sched = synchronize_streams(&[0.0f64, 0.05], &[0.0, 0.04, 0.05, 0.1], &[], &AlignmentConfig::default());
        let t1 = sched.slots.iter().find(|s| s.k == 1).unwrap();
        assert_eq!(t1.emg_window, 1..3);
        assert_eq!(t1.exo, 1);
    }

    #[test]
    fn event_before_first_tick_is_consumed_by_tick_zero() {
        let sched = synchronize_streams(&[-0.01f64], &[-0.005], &[-0.02], &AlignmentConfig::default());
        assert_eq!(sched.slots.len(), 1);
        assert_eq!(sched.slots[0].gt, Some((0, 0)));
        let sched = synchronize_streams(&[-0.01f64, 0.03], &[-0.005, 0.02], &[], &AlignmentConfig::default());
        assert_eq!(sched.slots[0].k, 0);
        assert_eq!(sched.slots[0].exo, 0);
        assert_eq!(sched.slots[0].emg_latest, 0);
    }

    #[test]
    fn gap_and_empty_stream_errors() {
        let s = seq(vec![0.0, 0.05, 0.5], (0..30).map(|i| i as f64 * 0.02).collect(), vec![]);
        match align(&s, &AlignmentConfig::default()) {
            Err(Error::Gap { stream, from, to, .. }) => {
                assert_eq!(stream, "exo");
                assert_eq!((from, to), (0.05, 0.5));
            }
            other => panic!("expected gap error, got {other:?}"),
        }
        let s = seq(vec![0.0], vec![], vec![]);
        assert!(matches!(align(&s, &AlignmentConfig::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn unlabeled_sequence_has_no_targets() {
        let s = seq(vec![0.0, 0.05], vec![0.0, 0.02, 0.04], vec![]);
        let out = align(&s, &AlignmentConfig::default()).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|a| a.y.is_none()));
    }

    #[test]
    fn config_validation() {
        let mut c = AlignmentConfig::default();
        c.emg_window = 0.01;
        assert!(c.validate().is_err());
        c.emg_window = 0.02;
        assert!(c.validate().is_ok());
        c.master_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn last_tick_handles_float_products() {
        let c = AlignmentConfig::default();
        assert_eq!(c.last_tick(59.98f64), 1199);
        assert_eq!(c.last_tick(60.0f64), 1200);
        assert_eq!(c.last_tick(0.35f64), 7);
        assert_eq!(c.last_tick(0.0f32), 0);
    }

    #[test]
    fn watermark_boundary_closes_one_tick() {
        let mut a = IncrementalAligner::<f64>::new(AlignmentConfig::default()).unwrap();
        let emg = |t: f64| StreamRecord { t, src: Source::Emg, v: vec![0.0; 8] };
        let exo = |t: f64| StreamRecord { t, src: Source::Exo, v: vec![0.1, 0.2] };
        for i in 0..=5 {
            assert!(a.push(&emg(i as f64 * 0.02)).unwrap().is_empty());
        }
        assert!(a.push(&exo(0.049)).unwrap().is_empty());
        let closed = a.push(&exo(0.051)).unwrap();
        assert_eq!(closed.len(), 1);
        assert!((closed[0].t - 0.05).abs() < 1e-15);
        assert!(!closed[0].stale_emg);
    }

    #[test]
    fn timestamp_regression_is_rejected() {
        let mut a = IncrementalAligner::<f64>::new(AlignmentConfig::default()).unwrap();
        a.push(&StreamRecord { t: 1.0, src: Source::Exo, v: vec![0.0, 0.0] }).unwrap();
        let err = a.push(&StreamRecord { t: 0.5, src: Source::Exo, v: vec![0.0, 0.0] });
        assert!(matches!(err, Err(PushError::Regression { .. })));
        let err = a.push(&StreamRecord { t: 2.0, src: Source::Emg, v: vec![0.0; 3] });
        assert!(matches!(err, Err(PushError::Arity { .. })));
    }
}
