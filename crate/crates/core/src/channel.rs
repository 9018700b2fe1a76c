//! Multipath self-interference coupling channel `h(t)` between the PA output
//! and the receiver input.
//!
//! Each tap has a fixed delay and a gain/phase that can be changed over time
//! by a schedule of [`DisturbanceEvent`]s: a step switches to the new value at
//! the event time, a ramp moves linearly (in dB and radians) to it over
//! `ramp_duration_s`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::serde_ext;
use crate::signal::{band_limited_noise_floor, db_to_amplitude, ComplexSignal, DelayBank};

/// Fixed interconnect delay added in front of every preset tap.
pub const BOARD_DELAY_S: f64 = 3e-9;

/// Receiver noise floor used by the presets.
pub const PRESET_NOISE_FLOOR_DBM: f64 = -90.0;

/// Carrier frequency used for the dual-antenna free-space loss.
pub const CARRIER_HZ: f64 = 2.4e9;

/// Separation of the dual-antenna pair.
pub const ANTENNA_SEPARATION_M: f64 = 0.30;

/// Phase of the circulator antenna-reflection tap relative to the direct
/// leakage. Chosen so that the two taps partly cancel and the passive
/// isolation over 100 MHz lands near 23.5 dB.
pub const ANTENNA_REFLECTION_PHASE_RAD: f64 = 0.8 * PI;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelTap {
    pub delay_s: f64,
    /// Gain relative to the PA output, in dB (negative = attenuation).
    pub gain_db: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

impl ChannelTap {
    pub fn new(delay_s: f64, gain_db: f64, phase_rad: f64) -> Self {
        Self {
            delay_s,
            gain_db,
            phase_rad,
        }
    }

    pub fn complex_gain(&self) -> Complex64 {
        complex_gain(self.gain_db, self.phase_rad)
    }
}

fn complex_gain(gain_db: f64, phase_rad: f64) -> Complex64 {
    Complex64::from_polar(db_to_amplitude(gain_db), phase_rad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceKind {
    Step,
    Ramp { ramp_duration_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    pub time_s: f64,
    pub tap_index: usize,
    #[serde(flatten)]
    pub kind: DisturbanceKind,
    pub new_gain_db: f64,
    pub new_phase_rad: f64,
}

impl DisturbanceEvent {
    pub fn step(time_s: f64, tap_index: usize, new_gain_db: f64, new_phase_rad: f64) -> Self {
        Self {
            time_s,
            tap_index,
            kind: DisturbanceKind::Step,
            new_gain_db,
            new_phase_rad,
        }
    }

    pub fn ramp(
        time_s: f64,
        ramp_duration_s: f64,
        tap_index: usize,
        new_gain_db: f64,
        new_phase_rad: f64,
    ) -> Self {
        Self {
            time_s,
            tap_index,
            kind: DisturbanceKind::Ramp { ramp_duration_s },
            new_gain_db,
            new_phase_rad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelPreset {
    /// Shared antenna behind a circulator.
    Circulator,
    /// Separate TX and RX antennas 30 cm apart.
    DualAntenna,
}

impl std::str::FromStr for ChannelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "circulator" => Ok(ChannelPreset::Circulator),
            "dual_antenna" => Ok(ChannelPreset::DualAntenna),
            other => Err(Error::param("preset", format!("unknown channel preset {other:?}"))),
        }
    }
}

/// Tapped-delay-line SI channel with additive receiver noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiChannel {
    pub taps: Vec<ChannelTap>,
    /// Full-band noise power; `-inf` disables noise.
    #[serde(with = "serde_ext::db")]
    pub noise_floor_dbm: f64,
    #[serde(default)]
    pub events: Vec<DisturbanceEvent>,
}

/// Free-space path loss `20·log10(4πd/λ)` in dB.
pub fn free_space_path_loss_db(distance_m: f64, freq_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / freq_hz;
    20.0 * (4.0 * PI * distance_m / lambda).log10()
}

/// Canonical channel for one of the two antenna configurations.
///
/// Circulator: direct leakage (0.5 ns, −23.5 dB), antenna reflection
/// (2 ns, −20 dB) and a weak environment reflection (12 ns, −45 dB, π).
/// Dual antenna: line-of-sight coupling (1 ns, free-space loss over 30 cm)
/// and an environment reflection (12 ns, −50 dB, π). Every tap is pushed
/// back by the 3 ns board delay.
pub fn preset(kind: ChannelPreset) -> SiChannel {
    let d = BOARD_DELAY_S;
    let taps = match kind {
        ChannelPreset::Circulator => vec![
            ChannelTap::new(d + 0.5e-9, -23.5, 0.0),
            ChannelTap::new(d + 2.0e-9, -20.0, ANTENNA_REFLECTION_PHASE_RAD),
            ChannelTap::new(d + 12e-9, -45.0, PI),
        ],
        ChannelPreset::DualAntenna => vec![
            ChannelTap::new(
                d + 1.0e-9,
                -free_space_path_loss_db(ANTENNA_SEPARATION_M, CARRIER_HZ),
                0.0,
            ),
            ChannelTap::new(d + 12e-9, -50.0, PI),
        ],
    };
    SiChannel {
        taps,
        noise_floor_dbm: PRESET_NOISE_FLOOR_DBM,
        events: Vec::new(),
    }
}

impl SiChannel {
    /// Static, noiseless channel from taps.
    pub fn from_taps(taps: Vec<ChannelTap>) -> Self {
        Self {
            taps,
            noise_floor_dbm: f64::NEG_INFINITY,
            events: Vec::new(),
        }
    }

    pub fn with_noise_floor(mut self, floor_dbm: f64) -> Self {
        self.noise_floor_dbm = floor_dbm;
        self
    }

    pub fn with_events(mut self, events: Vec<DisturbanceEvent>) -> Self {
        self.events = events;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::param("taps", "at least one tap is required"));
        }
        for (i, t) in self.taps.iter().enumerate() {
            if !(t.delay_s.is_finite() && t.delay_s >= 0.0) {
                return Err(Error::param(&format!("taps[{i}].delay_s"), "must be finite and >= 0"));
            }
            if !t.gain_db.is_finite() || !t.phase_rad.is_finite() {
                return Err(Error::param(&format!("taps[{i}]"), "gain and phase must be finite"));
            }
        }
        if self.taps.windows(2).any(|w| w[1].delay_s < w[0].delay_s) {
            return Err(Error::param("taps", "must be sorted by delay"));
        }
        if self.noise_floor_dbm.is_nan() || self.noise_floor_dbm == f64::INFINITY {
            return Err(Error::param("noise_floor_dbm", "must be finite or -inf"));
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.tap_index >= self.taps.len() {
                return Err(Error::param(
                    &format!("events[{i}].tap_index"),
                    format!("{} out of range for {} taps", e.tap_index, self.taps.len()),
                ));
            }
            if !e.time_s.is_finite() || !e.new_gain_db.is_finite() || !e.new_phase_rad.is_finite() {
                return Err(Error::param(&format!("events[{i}]"), "values must be finite"));
            }
            if let DisturbanceKind::Ramp { ramp_duration_s } = e.kind {
                if !(ramp_duration_s.is_finite() && ramp_duration_s > 0.0) {
                    return Err(Error::param(&format!("events[{i}].ramp_duration_s"), "must be > 0"));
                }
            }
        }
        Ok(())
    }

    pub fn is_static(&self) -> bool {
        self.events.is_empty()
    }

    /// Per-tap gain schedules in the order events are applied.
    fn schedules(&self) -> Vec<TapSchedule> {
        self.taps
            .iter()
            .enumerate()
            .map(|(i, tap)| {
                let mut events: Vec<DisturbanceEvent> =
                    self.events.iter().filter(|e| e.tap_index == i).copied().collect();
                events.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
                TapSchedule {
                    initial: (tap.gain_db, tap.phase_rad),
                    events,
                }
            })
            .collect()
    }

    /// Complex gain of every tap at time `t`.
    pub fn tap_gains_at(&self, t: f64) -> Vec<Complex64> {
        self.schedules().iter().map(|s| s.gain_at(t)).collect()
    }

    /// `H(f, t) = Σ g_k(t)·e^{jφ_k(t)}·e^{−j2πf·δ_k}`.
    pub fn frequency_response(&self, freqs_hz: &[f64], t: f64) -> Vec<Complex64> {
        let gains = self.tap_gains_at(t);
        freqs_hz
            .iter()
            .map(|&f| {
                self.taps
                    .iter()
                    .zip(&gains)
                    .map(|(tap, g)| g * Complex64::from_polar(1.0, -2.0 * PI * f * tap.delay_s))
                    .sum()
            })
            .collect()
    }

    /// Passes `x` through the channel and adds receiver noise seeded by
    /// `rng_seed`.
    pub fn propagate(&self, x: &ComplexSignal, rng_seed: u64) -> Result<ComplexSignal> {
        self.validate()?;
        let fs = x.sample_rate_hz();
        let delays: Vec<f64> = self.taps.iter().map(|t| t.delay_s).collect();
        let bank = DelayBank::from_seconds(&delays, fs)?;
        bank.check_fits(x.len())?;

        let schedules = self.schedules();
        let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
        let t0 = x.start_time_s();
        bank.apply(x.samples(), |k, n0, chunk| {
            let sched = &schedules[k];
            if sched.events.is_empty() {
                let g = sched.gain_at(t0);
                for (out, v) in y[n0..n0 + chunk.len()].iter_mut().zip(chunk) {
                    *out += g * v;
                }
            } else {
                for (j, (out, v)) in y[n0..n0 + chunk.len()].iter_mut().zip(chunk).enumerate() {
                    let t = t0 + (n0 + j) as f64 / fs;
                    *out += sched.gain_at(t) * v;
                }
            }
        });
        let clean = ComplexSignal::from_parts(y, fs, t0);
        band_limited_noise_floor(&clean, self.noise_floor_dbm, rng_seed)
    }
}

#[derive(Debug, Clone)]
struct TapSchedule {
    initial: (f64, f64),
    events: Vec<DisturbanceEvent>,
}

impl TapSchedule {
    fn state_at(&self, t: f64) -> (f64, f64) {
        let mut state = self.initial;
        for e in &self.events {
            if t < e.time_s {
                break;
            }
            let target = (e.new_gain_db, e.new_phase_rad);
            state = match e.kind {
                DisturbanceKind::Step => target,
                DisturbanceKind::Ramp { ramp_duration_s } => {
                    let a = ((t - e.time_s) / ramp_duration_s).min(1.0);
                    if a >= 1.0 {
                        target
                    } else {
                        (
                            state.0 + a * (target.0 - state.0),
                            state.1 + a * (target.1 - state.1),
                        )
                    }
                }
            };
        }
        state
    }

    fn gain_at(&self, t: f64) -> Complex64 {
        let (g, p) = self.state_at(t);
        complex_gain(g, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::power_dbm;
    use crate::waveform::{generate, WaveformSpec};
    use approx::assert_abs_diff_eq;

    const FS: f64 = 500e6;

    fn tx(len: usize) -> ComplexSignal {
        generate(&WaveformSpec::bandlimited(100e6, 10.0, len as f64 / FS, 3), FS).unwrap()
    }

    #[test]
    fn circulator_dominant_taps_after_board_delay() {
        let ch = preset(ChannelPreset::Circulator);
        assert_abs_diff_eq!(ch.taps[0].delay_s, 3.5e-9, epsilon = 1e-18);
        assert_abs_diff_eq!(ch.taps[1].delay_s, 5.0e-9, epsilon = 1e-18);
        assert_eq!(ch.taps[0].gain_db, -23.5);
        assert_eq!(ch.taps[1].gain_db, -20.0);
        assert_eq!(ch.noise_floor_dbm, -90.0);
        ch.validate().unwrap();
    }

    #[test]
    fn dual_antenna_los_is_friis_loss() {
        let ch = preset(ChannelPreset::DualAntenna);
        assert_abs_diff_eq!(ch.taps[0].gain_db, -29.6, epsilon = 0.05);
        assert_abs_diff_eq!(ch.taps[0].delay_s, 4e-9, epsilon = 1e-18);
    }

    #[test]
    fn identity_channel() {
        let x = tx(2000);
        let ch = SiChannel::from_taps(vec![ChannelTap::new(0.0, 0.0, 0.0)]);
        assert_eq!(ch.propagate(&x, 0).unwrap(), x);
    }

    #[test]
    fn attenuating_tap() {
        let x = tx(20_000);
        let ch = SiChannel::from_taps(vec![ChannelTap::new(0.0, -20.0, 0.4)]);
        let y = ch.propagate(&x, 0).unwrap();
        assert_abs_diff_eq!(
            power_dbm(&y, None).unwrap(),
            power_dbm(&x, None).unwrap() - 20.0,
            epsilon = 0.1
        );
    }

    #[test]
    fn response_of_single_tap() {
        let ch = SiChannel::from_taps(vec![ChannelTap::new(0.0, 0.0, 0.0)]);
        for h in ch.frequency_response(&[-1e8, 0.0, 3e7], 0.0) {
            assert_abs_diff_eq!(h.re, 1.0);
            assert_abs_diff_eq!(h.im, 0.0);
        }
        let delay = 7.3e-9;
        let ch = SiChannel::from_taps(vec![ChannelTap::new(delay, 0.0, 0.0)]);
        let h = ch.frequency_response(&[1e6, 2e6], 0.0);
        let slope = (h[1] / h[0]).arg() / 1e6;
        assert_abs_diff_eq!(slope, -2.0 * PI * delay, epsilon = 1e-15);
    }

    #[test]
    fn two_ray_nulls() {
        let delta = 10e-9;
        let ch = SiChannel::from_taps(vec![
            ChannelTap::new(2e-9, -10.0, 0.0),
            ChannelTap::new(2e-9 + delta, -10.0, 0.0),
        ]);
        // Nulls where 2πfΔ = π (mod 2π): f = (2m+1)/(2Δ), spaced 1/Δ.
        let nulls: Vec<f64> = (-2..2).map(|m| (2 * m + 1) as f64 / (2.0 * delta)).collect();
        for h in ch.frequency_response(&nulls, 0.0) {
            assert!(h.norm() < 1e-12);
        }
    }

    #[test]
    fn step_event_is_causal() {
        let x = tx(4000);
        let ch = preset(ChannelPreset::Circulator);
        let t_event = 2000.0 / FS;
        let disturbed = ch
            .clone()
            .with_events(vec![DisturbanceEvent::step(t_event, 1, -20.0, 0.8 * PI + PI)]);
        let a = ch.propagate(&x, 5).unwrap();
        let b = disturbed.propagate(&x, 5).unwrap();
        assert_eq!(&a.samples()[..2000], &b.samples()[..2000]);
        assert_ne!(&a.samples()[2000..], &b.samples()[2000..]);
    }

    #[test]
    fn ramp_interpolates() {
        let ch = SiChannel::from_taps(vec![ChannelTap::new(0.0, -20.0, 0.0)])
            .with_events(vec![DisturbanceEvent::ramp(1.0, 2.0, 0, -10.0, 1.0)]);
        let g = ch.tap_gains_at(2.0)[0];
        assert_abs_diff_eq!(20.0 * g.norm().log10(), -15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.arg(), 0.5, epsilon = 1e-12);
        let g = ch.tap_gains_at(5.0)[0];
        assert_abs_diff_eq!(20.0 * g.norm().log10(), -10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ch.tap_gains_at(0.5)[0].arg(), 0.0);
    }

    #[test]
    fn validation_errors() {
        let mut ch = preset(ChannelPreset::Circulator);
        ch.taps.swap(0, 1);
        assert!(ch.validate().is_err());
        assert!(SiChannel::from_taps(vec![]).validate().is_err());
        let ch = preset(ChannelPreset::Circulator)
            .with_events(vec![DisturbanceEvent::step(0.0, 3, 0.0, 0.0)]);
        assert!(ch.validate().is_err());
        let ch = preset(ChannelPreset::Circulator)
            .with_events(vec![DisturbanceEvent::ramp(0.0, 0.0, 0, 0.0, 0.0)]);
        assert!(ch.validate().is_err());
    }

    #[test]
    fn delay_beyond_record_is_error() {
        let x = tx(4);
        let ch = SiChannel::from_taps(vec![ChannelTap::new(15e-9, 0.0, 0.0)]);
        assert!(matches!(ch.propagate(&x, 0), Err(Error::DelayTooLong { .. })));
    }

    #[test]
    fn circulator_ripple_grows_with_bandwidth() {
        let ch = preset(ChannelPreset::Circulator);
        let ripple = |bw: f64| {
            let f: Vec<f64> = (0..=400).map(|i| -bw / 2.0 + bw * i as f64 / 400.0).collect();
            let mags: Vec<f64> = ch.frequency_response(&f, 0.0).iter().map(|h| 20.0 * h.norm().log10()).collect();
            mags.iter().cloned().fold(f64::MIN, f64::max) - mags.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(ripple(100e6) > ripple(20e6));
    }
}
