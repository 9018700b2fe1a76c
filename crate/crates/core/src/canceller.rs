//! Fixed-delay, complex-weighted cancellation filter.
//!
//! The canceller taps the PA output `x`, delays it by each branch delay
//! `τ_n`, scales it by the branch weight `w_n` (an ideal vector modulator)
//! and subtracts the sum from the receiver input:
//!
//! ```text
//! z(t) = y(t) − Σ_n w_n·x(t − τ_n)
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ComplexSignal, DelayBank};

/// Branch delays of the two-branch reference design.
pub const DEFAULT_TAP_DELAYS_S: [f64; 2] = [5e-9, 7.5e-9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancellerConfig {
    pub tap_delays_s: Vec<f64>,
    /// Optional saturation of each vector modulator, as a maximum `|w_n|`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_weight_magnitude: Option<f64>,
}

impl Default for CancellerConfig {
    fn default() -> Self {
        Self::new(DEFAULT_TAP_DELAYS_S.to_vec())
    }
}

impl CancellerConfig {
    pub fn new(tap_delays_s: Vec<f64>) -> Self {
        Self {
            tap_delays_s,
            max_weight_magnitude: None,
        }
    }

    pub fn n_taps(&self) -> usize {
        self.tap_delays_s.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tap_delays_s.is_empty() {
            return Err(Error::param("tap_delays_s", "at least one branch is required"));
        }
        if self.tap_delays_s.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::param("tap_delays_s", "delays must be finite and >= 0"));
        }
        if self.tap_delays_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("tap_delays_s", "delays must be strictly increasing"));
        }
        if let Some(cap) = self.max_weight_magnitude {
            if !(cap > 0.0) {
                return Err(Error::param("max_weight_magnitude", "must be > 0"));
            }
        }
        Ok(())
    }

    pub(crate) fn delay_bank(&self, sample_rate_hz: f64) -> Result<DelayBank> {
        self.validate()?;
        DelayBank::from_seconds(&self.tap_delays_s, sample_rate_hz)
    }

    /// Delayed copies `x(t − τ_n)` of the reference, one per branch.
    pub fn delayed_references(&self, x_ref: &ComplexSignal) -> Result<Vec<Vec<Complex64>>> {
        let bank = self.delay_bank(x_ref.sample_rate_hz())?;
        bank.check_fits(x_ref.len())?;
        Ok(bank.delayed_copies(x_ref.samples()))
    }

    /// Samples to skip at each end of a record before fitting or measuring.
    pub fn margin(&self, sample_rate_hz: f64) -> Result<usize> {
        Ok(self.delay_bank(sample_rate_hz)?.margin())
    }
}

/// Complex branch weights `w_n = w_{n,I} + j·w_{n,Q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CancellerWeights(pub Vec<Complex64>);

impl CancellerWeights {
    pub fn zeros(n: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.re.is_finite() && w.im.is_finite())
    }

    /// Scales any weight larger than `cap` back onto the circle `|w| = cap`.
    pub fn clamp_magnitude(&mut self, cap: f64) {
        for w in &mut self.0 {
            let m = w.norm();
            if m > cap {
                *w *= cap / m;
            }
        }
    }

    pub(crate) fn check_len(&self, cfg: &CancellerConfig) -> Result<()> {
        if self.len() != cfg.n_taps() {
            return Err(Error::WeightCount {
                expected: cfg.n_taps(),
                got: self.len(),
            });
        }
        if !self.is_finite() {
            return Err(Error::param("weights", "must be finite"));
        }
        Ok(())
    }

    fn effective(&self, cfg: &CancellerConfig) -> CancellerWeights {
        let mut w = self.clone();
        if let Some(cap) = cfg.max_weight_magnitude {
            w.clamp_magnitude(cap);
        }
        w
    }
}

impl From<Vec<Complex64>> for CancellerWeights {
    fn from(v: Vec<Complex64>) -> Self {
        Self(v)
    }
}

/// `Σ_n w_n·x_ref(t − τ_n)`.
pub fn synthesize(
    cfg: &CancellerConfig,
    w: &CancellerWeights,
    x_ref: &ComplexSignal,
) -> Result<ComplexSignal> {
    w.check_len(cfg)?;
    let w = w.effective(cfg);
    let bank = cfg.delay_bank(x_ref.sample_rate_hz())?;
    bank.check_fits(x_ref.len())?;
    let mut out = vec![Complex64::new(0.0, 0.0); x_ref.len()];
    bank.apply(x_ref.samples(), |n, n0, chunk| {
        let wn = w.0[n];
        for (o, v) in out[n0..n0 + chunk.len()].iter_mut().zip(chunk) {
            *o += wn * v;
        }
    });
    Ok(ComplexSignal::from_parts(
        out,
        x_ref.sample_rate_hz(),
        x_ref.start_time_s(),
    ))
}

/// Canceller output `z = y − synthesize(cfg, w, x_ref)`.
pub fn cancel(
    cfg: &CancellerConfig,
    w: &CancellerWeights,
    y: &ComplexSignal,
    x_ref: &ComplexSignal,
) -> Result<ComplexSignal> {
    y.check_compatible(x_ref)?;
    y.sub(&synthesize(cfg, w, x_ref)?)
}
