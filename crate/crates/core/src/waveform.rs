//! Transmit test signals: band-limited noise carriers, two-tone PA stimuli
//! and a narrower signal of interest.
//!
//! Band-limited kinds are circularly-symmetric Gaussian noise shaped in the
//! frequency domain: flat to `(0.5 − 0.02)·BW`, a raised-cosine roll-off that
//! reaches zero at exactly `±BW/2`, and nothing beyond. The record is
//! periodic, so there is no filter start-up transient. The result is scaled
//! so its measured power equals `power_dbm` exactly.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{complex_gaussian, dbm_to_mw, ComplexSignal};

/// Width of the raised-cosine band edge as a fraction of the bandwidth.
pub const ROLLOFF_FRACTION: f64 = 0.02;

/// Default signal-of-interest bandwidth relative to the SI waveform.
pub const SOI_BANDWIDTH_RATIO: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveformKind {
    BandlimitedNoise { bandwidth_hz: f64 },
    /// Two equal tones at `±tone_spacing_hz / 2`.
    TwoTone { tone_spacing_hz: f64 },
    Soi { bandwidth_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSpec {
    #[serde(flatten)]
    pub kind: WaveformKind,
    pub power_dbm: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
}

impl WaveformSpec {
    pub fn bandlimited(bandwidth_hz: f64, power_dbm: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            kind: WaveformKind::BandlimitedNoise { bandwidth_hz },
            power_dbm,
            duration_s,
            seed,
        }
    }

    pub fn two_tone(tone_spacing_hz: f64, power_dbm: f64, duration_s: f64) -> Self {
        Self {
            kind: WaveformKind::TwoTone { tone_spacing_hz },
            power_dbm,
            duration_s,
            seed: 0,
        }
    }

    /// Signal of interest at a tenth of `si_bandwidth_hz`.
    pub fn soi_for(si_bandwidth_hz: f64, power_dbm: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            kind: WaveformKind::Soi {
                bandwidth_hz: si_bandwidth_hz * SOI_BANDWIDTH_RATIO,
            },
            power_dbm,
            duration_s,
            seed,
        }
    }

    /// Occupied bandwidth (for two-tone: the tone spacing).
    pub fn bandwidth_hz(&self) -> f64 {
        match self.kind {
            WaveformKind::BandlimitedNoise { bandwidth_hz } | WaveformKind::Soi { bandwidth_hz } => {
                bandwidth_hz
            }
            WaveformKind::TwoTone { tone_spacing_hz } => tone_spacing_hz,
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::param("sample_rate_hz", "must be finite and > 0"));
        }
        if !self.power_dbm.is_finite() {
            return Err(Error::param("power_dbm", "must be finite"));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::param("duration_s", "must be > 0"));
        }
        let (field, bw) = match self.kind {
            WaveformKind::BandlimitedNoise { bandwidth_hz } | WaveformKind::Soi { bandwidth_hz } => {
                ("bandwidth_hz", bandwidth_hz)
            }
            WaveformKind::TwoTone { tone_spacing_hz } => ("tone_spacing_hz", tone_spacing_hz),
        };
        if !(bw.is_finite() && bw > 0.0) {
            return Err(Error::param(field, "must be > 0"));
        }
        if bw >= sample_rate_hz {
            return Err(Error::param(
                field,
                format!("{bw} Hz must be below the sample rate {sample_rate_hz} Hz"),
            ));
        }
        if self.num_samples(sample_rate_hz) == 0 {
            return Err(Error::param("duration_s", "shorter than one sample"));
        }
        Ok(())
    }

    pub fn num_samples(&self, sample_rate_hz: f64) -> usize {
        (self.duration_s * sample_rate_hz).round() as usize
    }
}

/// Spectral mask of the band-limited shaping filter at frequency `f`.
pub fn shaping_mask(f_hz: f64, bandwidth_hz: f64) -> f64 {
    let edge = bandwidth_hz / 2.0;
    let roll = ROLLOFF_FRACTION * bandwidth_hz;
    let pass = edge - roll;
    let a = f_hz.abs();
    if a <= pass {
        1.0
    } else if a < edge {
        0.5 * (1.0 + (PI * (a - pass) / roll).cos())
    } else {
        0.0
    }
}

fn bandlimited_noise(len: usize, fs: f64, bandwidth_hz: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = complex_gaussian(len, 1.0, &mut rng);
    let df = fs / len as f64;
    for (k, v) in spec.iter_mut().enumerate() {
        let f = if k <= len / 2 { k as f64 } else { k as f64 - len as f64 } * df;
        *v *= shaping_mask(f, bandwidth_hz);
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut spec);
    spec
}

/// Generates the waveform described by `spec` at `sample_rate_hz`.
pub fn generate(spec: &WaveformSpec, sample_rate_hz: f64) -> Result<ComplexSignal> {
    spec.validate(sample_rate_hz)?;
    let len = spec.num_samples(sample_rate_hz);
    let mut samples = match spec.kind {
        WaveformKind::BandlimitedNoise { bandwidth_hz } | WaveformKind::Soi { bandwidth_hz } => {
            bandlimited_noise(len, sample_rate_hz, bandwidth_hz, spec.seed)
        }
        WaveformKind::TwoTone { tone_spacing_hz } => {
            let w = PI * tone_spacing_hz / sample_rate_hz;
            (0..len)
                .map(|n| {
                    let ph = w * n as f64;
                    Complex64::from_polar(1.0, ph) + Complex64::from_polar(1.0, -ph)
                })
                .collect()
        }
    };
    let p: f64 = samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / len as f64;
    if p > 0.0 {
        let g = (dbm_to_mw(spec.power_dbm) / p).sqrt();
        samples.iter_mut().for_each(|s| *s *= g);
    }
    ComplexSignal::new(samples, sample_rate_hz)
}
