//! Synthetic acquisition protocol.
//!
//! Emulates recordings of a hand driven through cyclic open/close motions by
//! the exoskeleton while the wearer helps, stays passive, or opposes. The
//! signal model is built so that:
//! - the motor encoder follows the command regardless of the wearer;
//! - hand motion is scaled and delayed by the wearer's behaviour;
//! - muscle activity depends on behaviour through a wearer-specific mixing
//!   of flexor/extensor activations onto the eight EMG channels;
//! - motor current rises with opposition.
//!
//! All randomness flows from one `u64` seed through [`sub_seed`].

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{
    Dataset, EmgSample, ExoSample, Modality, ModalitySegment, RawSequence, TrackerSample,
    EMG_CHANNELS, EMG_RATE, EXO_RATE, TRACKER_RATE,
};

/// Mixes a seed with a list of tags (splitmix64 finalizer per step).
pub fn sub_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &t in tags {
        z = z.wrapping_add(t.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Noise and amplitude knobs of the signal model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Encoder noise std (normalized position units).
    pub position_noise: f64,
    /// Tracker noise std, radians.
    pub tracker_noise: f64,
    /// Per-channel EMG noise std is drawn uniformly from this range per user.
    pub emg_noise: (f64, f64),
    /// Motor current noise std.
    pub current_noise: f64,
    /// Per-user current coupling to opposition torque is drawn from this range.
    pub current_gain: (f64, f64),
    /// Relative spread of the friction load between recordings.
    pub load_spread: f64,
    /// Per-user backlash (play width, radians) range.
    pub backlash: (f64, f64),
    /// Per-user range-of-motion scale range.
    pub rom_scale: (f64, f64),
    /// Relative spread of burst amplitude between sequences and between cycles.
    pub amplitude_spread: f64,
    /// Per-user antagonist co-activation, as a fraction of the agonist
    /// burst, is drawn from this range.
    pub co_contraction: (f64, f64),
    /// Per-user burst strength range.
    pub burst_gain: (f64, f64),
    /// Per-user range of how early, in seconds, muscle effort starts
    /// relative to the hand motion it accompanies.
    pub activation_lead: (f64, f64),
    /// Resting activation present in every modality.
    pub tonic: f64,
    /// Timestamp jitter as a fraction of each stream's period.
    pub jitter: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            position_noise: 0.01,
            tracker_noise: 0.03,
            emg_noise: (0.01, 0.02),
            current_noise: 0.1,
            current_gain: (0.05, 0.20),
            load_spread: 0.3,
            backlash: (0.05, 0.3),
            rom_scale: (0.5, 1.0),
            amplitude_spread: 0.3,
            co_contraction: (0.3, 0.9),
            burst_gain: (0.5, 1.5),
            activation_lead: (-2.0, 2.0),
            tonic: 0.01,
            jitter: 0.1,
        }
    }
}

impl SignalConfig {
    /// Every noise source and random amplitude variation switched off.
    pub fn noiseless() -> Self {
        Self {
            position_noise: 0.0,
            tracker_noise: 0.0,
            emg_noise: (0.0, 0.0),
            current_noise: 0.0,
            amplitude_spread: 0.0,
            load_spread: 0.0,
            jitter: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Seconds per open/close cycle.
    pub cycle_period: f64,
    /// Seconds per recorded sequence.
    pub sequence_duration: f64,
    pub sequences_per_modality: usize,
    pub users: usize,
    /// Session index; selects the armband placement drift.
    pub session: u32,
    pub signal: SignalConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            cycle_period: 10.0,
            sequence_duration: 60.0,
            sequences_per_modality: 3,
            users: 5,
            session: 1,
            signal: SignalConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_period > 0.0) || !(self.sequence_duration > 0.0) {
            return Err(Error::Validation("cycle and sequence durations must be positive".into()));
        }
        let cycles = self.sequence_duration / self.cycle_period;
        if (cycles - cycles.round()).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "sequence duration {} is not a multiple of the cycle period {}",
                self.sequence_duration, self.cycle_period
            )));
        }
        if self.users == 0 || self.sequences_per_modality == 0 {
            return Err(Error::Validation("users and sequences_per_modality must be >= 1".into()));
        }
        Ok(())
    }

    pub fn session_name(&self) -> String {
        format!("s{}", self.session)
    }
}

/// Hand gain and lag (seconds) relative to the motor command per modality.
pub fn modality_response(m: Modality) -> (f64, f64) {
    match m {
        Modality::Helping => (1.0, -0.2),
        Modality::Passive => (0.8, 0.3),
        Modality::Opposing => (0.35, 0.6),
    }
}

/// Signed opposition torque driving the motor current.
fn opposition_torque(m: Modality) -> f64 {
    match m {
        Modality::Helping => -0.5,
        Modality::Passive => 0.0,
        Modality::Opposing => 1.0,
    }
}

/// Commanded joint angle, radians: a raised cosine from 0 (open) to pi/2.
pub fn command(t: f64, period: f64) -> f64 {
    (1.0 - (2.0 * PI * t / period).cos()) / 2.0 * FRAC_PI_2
}

/// Closing velocity of the command normalized to [-1, 1].
fn closing_velocity(t: f64, period: f64) -> f64 {
    (2.0 * PI * t / period).sin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: String,
    /// Channel weights of the (flexor, extensor) activations.
    pub emg_mixing: [[f64; 2]; EMG_CHANNELS],
    pub emg_noise_std: [f64; EMG_CHANNELS],
    /// Play width between motor and hand, radians.
    pub motor_backlash: f64,
    /// Coupling of opposition torque to motor current.
    pub current_gain: f64,
    /// Relative half-width of per-session multiplicative drift on the mixing.
    pub session_drift: f64,
    /// Fraction of the commanded range the hand actually covers.
    pub rom_scale: f64,
    /// Seed of the per-session armband drift.
    pub drift_seed: u64,
    /// Antagonist co-activation fraction.
    pub co_contraction: f64,
    /// Scale of the wearer's muscle bursts.
    pub burst_gain: f64,
    /// Seconds by which the wearer's bursts precede the hand motion.
    pub activation_lead: f64,
}

impl UserProfile {
    /// Draws the profile of user `index` from the master seed.
    pub fn generate(index: usize, seed: u64, signal: &SignalConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[1, index as u64]));
        let mut uni = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let mut emg_mixing = [[0.0; 2]; EMG_CHANNELS];
        for row in emg_mixing.iter_mut() {
            // Each channel sits closer to either the flexor or the extensor
            // bundle; which one is a property of the wearer.
            let near = uni(0.7, 1.5);
            let far = uni(0.0, 0.35);
            if uni(0.0, 1.0) < 0.5 {
                *row = [near, far];
            } else {
                *row = [far, near];
            }
        }
        let mut emg_noise_std = [0.0; EMG_CHANNELS];
        for s in emg_noise_std.iter_mut() {
            *s = uni(signal.emg_noise.0, signal.emg_noise.1);
        }
        Self {
            user: format!("u{index}"),
            emg_mixing,
            emg_noise_std,
            motor_backlash: uni(signal.backlash.0, signal.backlash.1),
            current_gain: uni(signal.current_gain.0, signal.current_gain.1),
            session_drift: 0.1,
            rom_scale: uni(signal.rom_scale.0, signal.rom_scale.1),
            drift_seed: sub_seed(seed, &[2, index as u64]),
            co_contraction: uni(signal.co_contraction.0, signal.co_contraction.1),
            burst_gain: uni(signal.burst_gain.0, signal.burst_gain.1),
            activation_lead: uni(signal.activation_lead.0, signal.activation_lead.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mix_ok = self
            .emg_mixing
            .iter()
            .flatten()
            .all(|&w| (0.0..=1.5).contains(&w));
        if !mix_ok {
            return Err(Error::Validation("EMG mixing entries must lie in [0, 1.5]".into()));
        }
        if self.emg_noise_std.iter().any(|&s| s < 0.0) {
            return Err(Error::Validation("EMG noise std must be non-negative".into()));
        }
        Ok(())
    }

    /// Mixing matrix after the armband drift of `session`.
    pub fn session_mixing(&self, session: u32) -> [[f64; 2]; EMG_CHANNELS] {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.drift_seed, &[session as u64]));
        let mut m = self.emg_mixing;
        for w in m.iter_mut().flatten() {
            let f: f64 = if self.session_drift > 0.0 {
                rng.gen_range(-self.session_drift..self.session_drift)
            } else {
                0.0
            };
            *w = (*w * (1.0 + f)).clamp(0.0, 1.5);
        }
        m
    }
}

/// Uniformly jittered sample times `k / rate` over `[0, duration)`, with the
/// first sample pinned at t = 0.
fn sample_times(rate: f64, duration: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (duration * rate).round() as usize;
    let period = 1.0 / rate;
    (0..n)
        .map(|k| {
            let base = k as f64 * period;
            if k == 0 || jitter <= 0.0 {
                base
            } else {
                base + rng.gen_range(0.0..jitter * period)
            }
        })
        .collect()
}

fn gauss(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    } else {
        0.0
    }
}

/// Modality schedule of one recording.
struct Schedule<'a> {
    default: Modality,
    segments: &'a [ModalitySegment],
}

impl Schedule<'_> {
    fn at(&self, t: f64) -> Modality {
        self.segments
            .iter()
            .rev()
            .find(|s| t >= s.start)
            .map(|s| s.modality)
            .unwrap_or(self.default)
    }

    /// Index of the constant-modality segment containing `t`.
    fn segment(&self, t: f64) -> usize {
        self.segments.iter().rposition(|s| t >= s.start).unwrap_or(0)
    }
}

fn simulate(
    profile: &UserProfile,
    schedule: &Schedule<'_>,
    duration: f64,
    cfg: &ProtocolConfig,
    seed: u64,
) -> (Vec<ExoSample<f64>>, Vec<EmgSample<f64>>, Vec<TrackerSample<f64>>) {
    let sig = &cfg.signal;
    let period = cfg.cycle_period;
    let mixing = profile.session_mixing(cfg.session);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, &[3]));

    let exo_t = sample_times(EXO_RATE, duration, sig.jitter, &mut rng);
    let emg_t = sample_times(EMG_RATE, duration, sig.jitter, &mut rng);
    let gt_t = sample_times(TRACKER_RATE, duration, sig.jitter, &mut rng);

    // Burst amplitude per constant-modality segment and per cycle.
    let n_segments = schedule.segments.len().max(1);
    let n_cycles = (duration / period).ceil() as usize + 1;
    let spread = sig.amplitude_spread;
    let amp = |rng: &mut ChaCha8Rng| {
        if spread > 0.0 {
            rng.gen_range(1.0 - spread..1.0 + spread)
        } else {
            1.0
        }
    };
    let seg_amp: Vec<f64> = (0..n_segments).map(|_| amp(&mut rng)).collect();
    let cyc_amp: Vec<f64> = (0..n_cycles).map(|_| amp(&mut rng)).collect();
    let load: Vec<f64> = (0..n_segments)
        .map(|_| {
            let s = sig.load_spread;
            0.3 * if s > 0.0 { rng.gen_range(1.0 - s..1.0 + s) } else { 1.0 }
        })
        .collect();

    let exo = exo_t
        .iter()
        .map(|&t| {
            let m = schedule.at(t);
            let c = command(t, period);
            let speed = closing_velocity(t, period).abs();
            let current = 0.2
                + load[schedule.segment(t)] * speed
                + profile.current_gain * opposition_torque(m) * speed
                + gauss(&mut rng, sig.current_noise);
            ExoSample {
                t,
                position: c / FRAC_PI_2 + gauss(&mut rng, sig.position_noise),
                current: current.max(0.0),
            }
        })
        .collect();

    let emg = emg_t
        .iter()
        .map(|&t| {
            let m = schedule.at(t);
            let (_, lag) = modality_response(m);
            // Helping drives the closing phase of the hand; opposing fires
            // against it, during the opening phase.
            let v = closing_velocity(t - lag + profile.activation_lead, period);
            let drive = if m == Modality::Opposing { -v } else { v };
            let cycle = ((t / period).floor() as usize).min(n_cycles - 1);
            let a = profile.burst_gain * seg_amp[schedule.segment(t)] * cyc_amp[cycle] * drive.max(0.0);
            let (flex, ext) = match m {
                Modality::Helping => (a, profile.co_contraction * a),
                Modality::Passive => (0.0, 0.0),
                Modality::Opposing => (profile.co_contraction * a, a),
            };
            let mut channels = [0.0; EMG_CHANNELS];
            for (j, ch) in channels.iter_mut().enumerate() {
                let [wf, we] = mixing[j];
                *ch = wf * (flex + sig.tonic) + we * (ext + sig.tonic)
                    + gauss(&mut rng, profile.emg_noise_std[j]);
            }
            EmgSample { t, channels }
        })
        .collect();

    // Backlash as a play operator on the delayed, scaled command.
    let half_play = profile.motor_backlash / 2.0;
    let mut play: Option<f64> = None;
    let gt = gt_t
        .iter()
        .map(|&t| {
            let (gain, lag) = modality_response(schedule.at(t));
            let target = profile.rom_scale * gain * command(t - lag, period);
            let z = match play {
                None => target,
                Some(z) => z.clamp(target - half_play, target + half_play),
            };
            play = Some(z);
            let opening = (z + gauss(&mut rng, sig.tracker_noise)).clamp(0.0, FRAC_PI_2);
            TrackerSample { t, opening }
        })
        .collect();

    (exo, emg, gt)
}

/// Simulates one constant-modality recording.
pub fn simulate_sequence<T: Scalar>(
    profile: &UserProfile,
    modality: Modality,
    cfg: &ProtocolConfig,
    seed: u64,
) -> RawSequence<T> {
    let schedule = Schedule {
        default: modality,
        segments: &[],
    };
    let (exo, emg, gt) = simulate(profile, &schedule, cfg.sequence_duration, cfg, seed);
    RawSequence {
        id: format!("{}-{}-{}-{seed:016x}", profile.user, cfg.session_name(), modality),
        user: profile.user.clone(),
        session: cfg.session_name(),
        modality,
        segments: vec![],
        exo,
        emg,
        gt,
    }
    .cast()
}

/// Generates `users x 3 modalities x sequences_per_modality` recordings.
pub fn generate_dataset<T: Scalar>(cfg: &ProtocolConfig, seed: u64) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut sequences = Vec::new();
    for u in 0..cfg.users {
        let profile = UserProfile::generate(u, seed, &cfg.signal);
        for m in Modality::ALL {
            for rep in 0..cfg.sequences_per_modality {
                let s = sub_seed(seed, &[4, u as u64, cfg.session as u64, (m.compliance() + 1) as u64, rep as u64]);
                let mut seq: RawSequence<T> = simulate_sequence(&profile, m, cfg, s);
                seq.id = format!("{}-{}-{}-{}", profile.user, cfg.session_name(), m, rep);
                sequences.push(seq);
            }
        }
    }
    Dataset::new(sequences, Some(seed))
}

/// Length of one modality segment of the online session, seconds.
pub const ONLINE_SEGMENT: f64 = 30.0;
/// Number of segments in the online session.
pub const ONLINE_SEGMENTS: usize = 6;

/// One 180 s recording cycling helping, passive, opposing twice in 30 s
/// segments.
pub fn generate_online_session<T: Scalar>(
    profile: &UserProfile,
    cfg: &ProtocolConfig,
    seed: u64,
) -> RawSequence<T> {
    let segments: Vec<ModalitySegment> = (0..ONLINE_SEGMENTS)
        .map(|i| ModalitySegment {
            start: i as f64 * ONLINE_SEGMENT,
            end: (i + 1) as f64 * ONLINE_SEGMENT,
            modality: Modality::ALL[i % 3],
        })
        .collect();
    let schedule = Schedule {
        default: Modality::Helping,
        segments: &segments,
    };
    let duration = ONLINE_SEGMENT * ONLINE_SEGMENTS as f64;
    let (exo, emg, gt) = simulate(profile, &schedule, duration, cfg, sub_seed(seed, &[5]));
    RawSequence {
        id: format!("{}-{}-online", profile.user, cfg.session_name()),
        user: profile.user.clone(),
        session: cfg.session_name(),
        modality: Modality::Helping,
        segments,
        exo,
        emg,
        gt,
    }
    .cast()
}
