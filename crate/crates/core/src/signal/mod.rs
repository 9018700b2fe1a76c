//! Complex baseband sample containers and the numeric primitives shared by
//! every stage of the simulator.
//!
//! Samples are expressed in √mW, so `|s|²` is instantaneous power in
//! milliwatts and `10·log10(mean |s|²)` is the signal power in dBm. The
//! real and imaginary parts are the I and Q branches of the signal.

mod delay;
mod psd;

pub use delay::{fractional_delay, DelayBank, FRACTIONAL_DELAY_TAPS, KAISER_BETA};
pub use psd::{psd_welch, PsdEstimate, WelchConfig, Window};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default simulation rate: 5× oversampling of the widest (100 MHz) waveform.
pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 500e6;

/// Converts a power in milliwatts to dBm. Zero maps to `-inf`.
pub fn mw_to_dbm(p_mw: f64) -> f64 {
    10.0 * p_mw.log10()
}

pub fn dbm_to_mw(p_dbm: f64) -> f64 {
    10f64.powf(p_dbm / 10.0)
}

/// Amplitude factor for a gain in dB.
pub fn db_to_amplitude(gain_db: f64) -> f64 {
    10f64.powf(gain_db / 20.0)
}

/// A uniformly sampled complex baseband waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
    start_time_s: f64,
}

impl ComplexSignal {
    /// Wraps `samples` taken at `sample_rate_hz`, starting at t = 0.
    ///
    /// Fails if the rate is not a positive finite number or if any sample
    /// is NaN or infinite.
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::param("sample_rate_hz", "must be finite and > 0"));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::param("samples", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            start_time_s: 0.0,
        })
    }

    /// All-zero signal of `len` samples.
    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate_hz)
    }

    /// Builds a signal by evaluating `f(n, t)` for each sample index and time.
    pub fn from_fn(
        len: usize,
        sample_rate_hz: f64,
        mut f: impl FnMut(usize, f64) -> Complex64,
    ) -> Result<Self> {
        let dt = 1.0 / sample_rate_hz;
        Self::new((0..len).map(|n| f(n, n as f64 * dt)).collect(), sample_rate_hz)
    }

    /// Constructs without re-validating samples; callers guarantee finiteness.
    pub(crate) fn from_parts(samples: Vec<Complex64>, sample_rate_hz: f64, start_time_s: f64) -> Self {
        debug_assert!(sample_rate_hz > 0.0);
        Self {
            samples,
            sample_rate_hz,
            start_time_s,
        }
    }

    pub fn with_start_time(mut self, start_time_s: f64) -> Result<Self> {
        if !(start_time_s.is_finite() && start_time_s >= 0.0) {
            return Err(Error::param("start_time_s", "must be finite and >= 0"));
        }
        self.start_time_s = start_time_s;
        Ok(self)
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    /// Sample period in seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Absolute time of sample `n`.
    pub fn time_of(&self, n: usize) -> f64 {
        self.start_time_s + n as f64 / self.sample_rate_hz
    }

    /// Copy of samples `[from, to)`, with the start time advanced accordingly.
    pub fn slice(&self, from: usize, to: usize) -> ComplexSignal {
        let to = to.min(self.len());
        let from = from.min(to);
        Self::from_parts(
            self.samples[from..to].to_vec(),
            self.sample_rate_hz,
            self.time_of(from),
        )
    }

    /// Trailing part of the signal starting at fraction `frac` of its length.
    pub fn tail_fraction(&self, frac: f64) -> ComplexSignal {
        let from = ((self.len() as f64) * frac.clamp(0.0, 1.0)).floor() as usize;
        self.slice(from, self.len())
    }

    pub fn scaled(&self, g: Complex64) -> ComplexSignal {
        Self::from_parts(
            self.samples.iter().map(|s| s * g).collect(),
            self.sample_rate_hz,
            self.start_time_s,
        )
    }

    /// Sample-wise sum. Rates and lengths must match.
    pub fn add(&self, other: &ComplexSignal) -> Result<ComplexSignal> {
        self.check_compatible(other)?;
        Ok(Self::from_parts(
            self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect(),
            self.sample_rate_hz,
            self.start_time_s,
        ))
    }

    /// Sample-wise difference `self - other`.
    pub fn sub(&self, other: &ComplexSignal) -> Result<ComplexSignal> {
        self.check_compatible(other)?;
        Ok(Self::from_parts(
            self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect(),
            self.sample_rate_hz,
            self.start_time_s,
        ))
    }

    pub(crate) fn check_compatible(&self, other: &ComplexSignal) -> Result<()> {
        if self.sample_rate_hz != other.sample_rate_hz {
            return Err(Error::RateMismatch(self.sample_rate_hz, other.sample_rate_hz));
        }
        if self.len() != other.len() {
            return Err(Error::LengthMismatch(self.len(), other.len()));
        }
        Ok(())
    }

    /// Mean of `|s|²` in mW (zero for an empty signal).
    pub fn mean_power_mw(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.len() as f64
    }
}

/// A frequency interval `[lo_hz, hi_hz]` at baseband.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Band {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl Band {
    pub fn new(lo_hz: f64, hi_hz: f64) -> Self {
        Self { lo_hz, hi_hz }
    }

    /// Band of width `bandwidth_hz` centred on DC.
    pub fn centered(bandwidth_hz: f64) -> Self {
        Self::new(-bandwidth_hz / 2.0, bandwidth_hz / 2.0)
    }

    pub fn width_hz(&self) -> f64 {
        self.hi_hz - self.lo_hz
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        f_hz >= self.lo_hz && f_hz <= self.hi_hz
    }

    /// Checks `-rate/2 <= lo < hi <= rate/2`.
    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let nyq = sample_rate_hz / 2.0;
        let ok = self.lo_hz.is_finite()
            && self.hi_hz.is_finite()
            && self.lo_hz < self.hi_hz
            && self.lo_hz >= -nyq
            && self.hi_hz <= nyq;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidBand {
                lo_hz: self.lo_hz,
                hi_hz: self.hi_hz,
            })
        }
    }
}

impl From<[f64; 2]> for Band {
    fn from(b: [f64; 2]) -> Self {
        Band::new(b[0], b[1])
    }
}

impl From<Band> for [f64; 2] {
    fn from(b: Band) -> Self {
        [b.lo_hz, b.hi_hz]
    }
}

/// Signal power in dBm, either over the full band (`10·log10(mean |s|²)`)
/// or integrated from a Welch PSD over `band`.
///
/// An all-zero signal yields `f64::NEG_INFINITY`.
pub fn power_dbm(signal: &ComplexSignal, band: Option<Band>) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    match band {
        None => Ok(mw_to_dbm(signal.mean_power_mw())),
        Some(band) => {
            band.validate(signal.sample_rate_hz())?;
            let cfg = WelchConfig::default().fitted_to(signal.len());
            let psd = psd_welch(signal, cfg.seg_len, cfg.overlap_frac, cfg.window)?;
            Ok(psd.band_power_dbm(band))
        }
    }
}

/// `len` samples of circularly-symmetric complex white Gaussian noise with
/// mean power `power_mw`.
pub(crate) fn complex_gaussian(len: usize, power_mw: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let sigma = (power_mw / 2.0).sqrt();
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect()
}

/// Adds white complex Gaussian noise of total (full-band) power `floor_dbm`.
///
/// `floor_dbm = -inf` disables the noise and returns the input unchanged.
/// Output is a deterministic function of `rng_seed`.
pub fn band_limited_noise_floor(
    signal: &ComplexSignal,
    floor_dbm: f64,
    rng_seed: u64,
) -> Result<ComplexSignal> {
    if floor_dbm == f64::NEG_INFINITY {
        return Ok(signal.clone());
    }
    if !floor_dbm.is_finite() {
        return Err(Error::param("floor_dbm", "must be finite or -inf"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise = complex_gaussian(signal.len(), dbm_to_mw(floor_dbm), &mut rng);
    Ok(ComplexSignal::from_parts(
        signal.samples().iter().zip(noise).map(|(s, n)| s + n).collect(),
        signal.sample_rate_hz(),
        signal.start_time_s(),
    ))
}
