//! Domain types: sensor samples, recorded sequences, aligned feature rows.

use std::collections::{BTreeSet, HashSet};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of EMG channels delivered by the armband.
pub const EMG_CHANNELS: usize = 8;
/// Exoskeleton features: motor position and motor current.
pub const EXO_FEATURES: usize = 2;
/// Width of the fused feature vector.
pub const FEATURES: usize = EXO_FEATURES + EMG_CHANNELS;
/// Fixed column order of the fused feature vector.
pub const FEATURE_NAMES: [&str; FEATURES] = [
    "position", "current", "emg_1", "emg_2", "emg_3", "emg_4", "emg_5", "emg_6", "emg_7", "emg_8",
];

/// Nominal sensor rates in Hz.
pub const EXO_RATE: f64 = 20.0;
pub const EMG_RATE: f64 = 50.0;
pub const TRACKER_RATE: f64 = 90.0;

/// Protocol-conformant sequence duration bounds, seconds.
pub const CONFORMANT_DURATION: (f64, f64) = (55.0, 65.0);

/// Opening degree `y_o` (radians, 0 = open, pi/2 = closed) and compliance
/// level `y_c` (+1 helping, 0 passive, -1 opposing).
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TargetPair<T: Scalar> {
    pub y_o: T,
    pub y_c: T,
}

impl<T: Scalar> TargetPair<T> {
    /// Builds a target, clamping both components into their physical ranges.
    pub fn clamped(y_o: T, y_c: T) -> Self {
        Self {
            y_o: clamp(y_o, T::zero(), T::of(FRAC_PI_2)),
            y_c: clamp(y_c, -T::one(), T::one()),
        }
    }

    /// Builds a target, rejecting out-of-range or non-finite components.
    pub fn new(y_o: T, y_c: T) -> Result<Self> {
        let ok_o = y_o.is_finite() && y_o >= T::zero() && y_o <= T::of(FRAC_PI_2);
        let ok_c = y_c.is_finite() && y_c >= -T::one() && y_c <= T::one();
        if ok_o && ok_c {
            Ok(Self { y_o, y_c })
        } else {
            Err(Error::Validation(format!(
                "target ({y_o}, {y_c}) outside [0, pi/2] x [-1, 1]"
            )))
        }
    }

    pub fn get(&self, target: Target) -> T {
        match target {
            Target::Opening => self.y_o,
            Target::Compliance => self.y_c,
        }
    }
}

fn clamp<T: Scalar>(v: T, lo: T, hi: T) -> T {
    // NaN maps to the lower bound so a clamped value always satisfies the range.
    if v.is_nan() {
        lo
    } else {
        v.max(lo).min(hi)
    }
}

/// Selects one component of a [`TargetPair`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "y_o")]
    Opening,
    #[serde(rename = "y_c")]
    Compliance,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Opening, Target::Compliance];

    pub fn name(self) -> &'static str {
        match self {
            Target::Opening => "y_o",
            Target::Compliance => "y_c",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ExoSample<T: Scalar> {
    pub t: T,
    pub position: T,
    pub current: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EmgSample<T: Scalar> {
    pub t: T,
    pub channels: [T; EMG_CHANNELS],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TrackerSample<T: Scalar> {
    pub t: T,
    /// Mean pitch of the tracked finger joints, thumb excluded.
    pub opening: T,
}

/// Instructed hand behaviour during a recording.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Helping,
    Passive,
    Opposing,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Helping, Modality::Passive, Modality::Opposing];

    /// Compliance label: helping +1, passive 0, opposing -1.
    pub fn compliance(self) -> i8 {
        match self {
            Modality::Helping => 1,
            Modality::Passive => 0,
            Modality::Opposing => -1,
        }
    }

    pub fn from_compliance(y_c: i8) -> Option<Self> {
        match y_c {
            1 => Some(Modality::Helping),
            0 => Some(Modality::Passive),
            -1 => Some(Modality::Opposing),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Helping => "helping",
            Modality::Passive => "passive",
            Modality::Opposing => "opposing",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "helping" => Ok(Modality::Helping),
            "passive" => Ok(Modality::Passive),
            "opposing" => Ok(Modality::Opposing),
            other => Err(Error::Validation(format!("unknown modality '{other}'"))),
        }
    }
}

/// A labelled interval of a multi-modality recording, `[start, end)` seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySegment {
    pub start: f64,
    pub end: f64,
    pub modality: Modality,
}

/// One recording: three asynchronous sensor streams sharing t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSequence<T: Scalar> {
    pub id: String,
    pub user: String,
    pub session: String,
    pub modality: Modality,
    /// Modality switches within the recording; empty when the whole sequence
    /// carries `modality`.
    pub segments: Vec<ModalitySegment>,
    pub exo: Vec<ExoSample<T>>,
    pub emg: Vec<EmgSample<T>>,
    /// Tracker ground truth; empty for unlabelled deployment data.
    pub gt: Vec<TrackerSample<T>>,
}

impl<T: Scalar> RawSequence<T> {
    /// Latest timestamp over all streams.
    pub fn duration(&self) -> T {
        let last = |v: Option<T>| v.unwrap_or_else(T::zero);
        last(self.exo.last().map(|s| s.t))
            .max(last(self.emg.last().map(|s| s.t)))
            .max(last(self.gt.last().map(|s| s.t)))
    }

    pub fn is_labeled(&self) -> bool {
        !self.gt.is_empty()
    }

    pub fn is_conformant(&self) -> bool {
        let d = self.duration().as_f64();
        d >= CONFORMANT_DURATION.0 && d <= CONFORMANT_DURATION.1
    }

    /// Modality in effect at time `t`.
    pub fn modality_at(&self, t: f64) -> Modality {
        self.segments
            .iter()
            .rev()
            .find(|s| t >= s.start)
            .map(|s| s.modality)
            .unwrap_or(self.modality)
    }

    /// Checks the stream invariants: strictly increasing timestamps, finite
    /// values, t >= 0.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, ts: &mut dyn Iterator<Item = T>| -> Result<()> {
            let mut prev: Option<T> = None;
            for (i, t) in ts.enumerate() {
                if !t.is_finite() || t < T::zero() {
                    return Err(Error::Validation(format!(
                        "sequence '{}': {name} sample {i} has invalid timestamp {t}",
                        self.id
                    )));
                }
                if let Some(p) = prev {
                    if t <= p {
                        return Err(Error::Validation(format!(
                            "sequence '{}': {name} timestamps not strictly increasing at sample {i} ({p} -> {t})",
                            self.id
                        )));
                    }
                }
                prev = Some(t);
            }
            Ok(())
        };
        check("exo", &mut self.exo.iter().map(|s| s.t))?;
        check("emg", &mut self.emg.iter().map(|s| s.t))?;
        check("gt", &mut self.gt.iter().map(|s| s.t))?;

        let finite = self
            .exo
            .iter()
            .all(|s| s.position.is_finite() && s.current.is_finite())
            && self.emg.iter().all(|s| s.channels.iter().all(|c| c.is_finite()))
            && self.gt.iter().all(|s| s.opening.is_finite());
        if !finite {
            return Err(Error::Validation(format!(
                "sequence '{}' contains non-finite sensor values",
                self.id
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> RawSequence<U> {
        let c = |v: T| U::of(v.as_f64());
        RawSequence {
            id: self.id.clone(),
            user: self.user.clone(),
            session: self.session.clone(),
            modality: self.modality,
            segments: self.segments.clone(),
            exo: self
                .exo
                .iter()
                .map(|s| ExoSample {
                    t: c(s.t),
                    position: c(s.position),
                    current: c(s.current),
                })
                .collect(),
            emg: self
                .emg
                .iter()
                .map(|s| EmgSample {
                    t: c(s.t),
                    channels: s.channels.map(c),
                })
                .collect(),
            gt: self
                .gt
                .iter()
                .map(|s| TrackerSample {
                    t: c(s.t),
                    opening: c(s.opening),
                })
                .collect(),
        }
    }
}

/// One fused row on the master clock.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignedSample<T: Scalar> {
    pub t: T,
    pub exo: [T; EXO_FEATURES],
    pub emg: [T; EMG_CHANNELS],
    pub y: Option<TargetPair<T>>,
}

impl<T: Scalar> AlignedSample<T> {
    /// Concatenated feature vector `(position, current, emg_1..emg_8)`.
    pub fn features(&self) -> [T; FEATURES] {
        let mut f = [T::zero(); FEATURES];
        f[..EXO_FEATURES].copy_from_slice(&self.exo);
        f[EXO_FEATURES..].copy_from_slice(&self.emg);
        f
    }
}

/// Column selection applied to the fused feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    Full,
    ExoOnly,
    EmgOnly,
}

impl FeatureSubset {
    pub const ALL: [FeatureSubset; 3] = [
        FeatureSubset::Full,
        FeatureSubset::ExoOnly,
        FeatureSubset::EmgOnly,
    ];

    /// Indices into the 10-column feature vector.
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            FeatureSubset::Full => 0..FEATURES,
            FeatureSubset::ExoOnly => 0..EXO_FEATURES,
            FeatureSubset::EmgOnly => EXO_FEATURES..FEATURES,
        }
    }

    pub fn width(self) -> usize {
        self.columns().len()
    }

    pub fn column_names(self) -> Vec<String> {
        FEATURE_NAMES[self.columns()].iter().map(|s| s.to_string()).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureSubset::Full => "full",
            FeatureSubset::ExoOnly => "exo_only",
            FeatureSubset::EmgOnly => "emg_only",
        }
    }
}

impl fmt::Display for FeatureSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FeatureSubset::Full),
            "exo" | "exo_only" => Ok(FeatureSubset::ExoOnly),
            "emg" | "emg_only" => Ok(FeatureSubset::EmgOnly),
            other => Err(Error::Validation(format!(
                "unknown feature subset '{other}' (expected full, exo or emg)"
            ))),
        }
    }
}

/// A collection of recordings plus manifest metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub sequences: Vec<RawSequence<T>>,
    pub generator_seed: Option<u64>,
}

impl<T: Scalar> Default for Dataset<T> {
    fn default() -> Self {
        Self {
            sequences: Vec::new(),
            generator_seed: None,
        }
    }
}

impl<T: Scalar> Dataset<T> {
    pub fn new(sequences: Vec<RawSequence<T>>, generator_seed: Option<u64>) -> Result<Self> {
        let d = Self {
            sequences,
            generator_seed,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.sequences {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sequence id '{}'", s.id)));
            }
            s.validate()?;
        }
        Ok(())
    }

    /// Users in sorted order.
    pub fn users(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sequences.iter().map(|s| s.user.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn sessions(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.sequences.iter().map(|s| s.session.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn for_user(&self, user: &str) -> Vec<&RawSequence<T>> {
        self.sequences.iter().filter(|s| s.user == user).collect()
    }

    pub fn get(&self, id: &str) -> Option<&RawSequence<T>> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Ids of sequences whose duration falls outside the protocol range.
    pub fn nonconformant(&self) -> Vec<String> {
        self.sequences
            .iter()
            .filter(|s| !s.is_conformant())
            .map(|s| s.id.clone())
            .collect()
    }

    /// True when every (user, session) pair holds three sequences of each
    /// modality.
    pub fn is_protocol_complete(&self) -> bool {
        let mut pairs = BTreeSet::new();
        for s in &self.sequences {
            pairs.insert((s.user.as_str(), s.session.as_str()));
        }
        !pairs.is_empty()
            && pairs.iter().all(|(u, sess)| {
                Modality::ALL.iter().all(|m| {
                    self.sequences
                        .iter()
                        .filter(|s| s.user == *u && s.session == *sess && s.modality == *m)
                        .count()
                        == 3
                })
            })
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            sequences: self.sequences.iter().map(|s| s.cast()).collect(),
            generator_seed: self.generator_seed,
        }
    }
}
