//! Cancellation, convergence and signal-of-interest metrics.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lms::LmsTrace;
use crate::serde_ext;
use crate::signal::{mw_to_dbm, psd_welch, Band, ComplexSignal, WelchConfig, FRACTIONAL_DELAY_TAPS};

/// Fraction of the record, counted from the end, treated as steady state.
pub const DEFAULT_STEADY_FRACTION: f64 = 0.5;

pub const DEFAULT_SETTLE_MARGIN_DB: f64 = 3.0;

/// Fraction of the trace, counted from the end, whose median is the settled level.
pub const SETTLED_FRACTION: f64 = 0.2;

/// Samples dropped from the end of a record, where the delay filters run out
/// of look-ahead.
const TAIL_GUARD: usize = 2 * FRACTIONAL_DELAY_TAPS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    pub steady_fraction: f64,
    pub welch: WelchConfig,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            steady_fraction: DEFAULT_STEADY_FRACTION,
            welch: WelchConfig::default(),
        }
    }
}

impl MeasureOptions {
    /// The steady-state part of `s`.
    pub fn steady_segment(&self, s: &ComplexSignal) -> Result<ComplexSignal> {
        if !(self.steady_fraction > 0.0 && self.steady_fraction <= 1.0) {
            return Err(Error::param("steady_fraction", "must be in (0, 1]"));
        }
        let end = s.len().saturating_sub(TAIL_GUARD.min(s.len() / 4));
        let start = end - ((end as f64) * self.steady_fraction).round() as usize;
        if start >= end {
            return Err(Error::EmptySignal);
        }
        Ok(s.slice(start, end))
    }

    fn band_power_dbm(&self, s: &ComplexSignal, band: Band) -> Result<f64> {
        let w = self.welch.fitted_to(s.len());
        Ok(psd_welch(s, w.seg_len, w.overlap_frac, w.window)?.band_power_dbm(band))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationReport {
    pub band_hz: Band,
    #[serde(with = "serde_ext::db")]
    pub p_tx_dbm: f64,
    #[serde(with = "serde_ext::db")]
    pub p_y_dbm: f64,
    #[serde(with = "serde_ext::db")]
    pub p_z_dbm: f64,
    #[serde(with = "serde_ext::db")]
    pub intrinsic_db: f64,
    #[serde(with = "serde_ext::db")]
    pub active_db: f64,
    #[serde(with = "serde_ext::db")]
    pub total_db: f64,
}

impl CancellationReport {
    /// Builds the report from band powers. The two stage figures are rounded
    /// to a 2^-20 dB grid, on which `total_db = intrinsic_db + active_db` and
    /// `total_db - intrinsic_db - active_db = 0` both hold exactly.
    pub fn from_powers(band_hz: Band, p_tx_dbm: f64, p_y_dbm: f64, p_z_dbm: f64) -> Self {
        let intrinsic_db = quantize_db(p_tx_dbm - p_y_dbm);
        let active_db = quantize_db(p_y_dbm - p_z_dbm);
        Self {
            band_hz,
            p_tx_dbm,
            p_y_dbm,
            p_z_dbm,
            intrinsic_db,
            active_db,
            total_db: intrinsic_db + active_db,
        }
    }
}

const DB_GRID: f64 = 1_048_576.0;

fn quantize_db(v: f64) -> f64 {
    if v.is_finite() {
        (v * DB_GRID).round() / DB_GRID
    } else {
        v
    }
}

/// Band powers of PA output, receiver input and canceller output over the
/// final half of the record.
pub fn cancellation_report(
    tx: &ComplexSignal,
    y: &ComplexSignal,
    z: &ComplexSignal,
    band: Band,
) -> Result<CancellationReport> {
    cancellation_report_with(tx, y, z, band, &MeasureOptions::default())
}

pub fn cancellation_report_with(
    tx: &ComplexSignal,
    y: &ComplexSignal,
    z: &ComplexSignal,
    band: Band,
    opts: &MeasureOptions,
) -> Result<CancellationReport> {
    y.check_compatible(tx)?;
    z.check_compatible(tx)?;
    band.validate(tx.sample_rate_hz())?;
    let p = |s: &ComplexSignal| opts.band_power_dbm(&opts.steady_segment(s)?, band);
    Ok(CancellationReport::from_powers(band, p(tx)?, p(y)?, p(z)?))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Index of the first trace point after which the residual stays within
/// `margin_db` of its settled level, or `None` if it never settles.
fn settle_index(residual_dbm: &[f64], margin_db: f64) -> Option<usize> {
    let n = residual_dbm.len();
    let tail = &residual_dbm[n - ((n as f64 * SETTLED_FRACTION).ceil() as usize).clamp(1, n)..];
    let level = median(tail);
    let outside = |r: f64| !((r - level).abs() <= margin_db);
    if tail.iter().any(|&r| outside(r)) {
        return None;
    }
    Some(residual_dbm.iter().rposition(|&r| outside(r)).map_or(0, |k| k + 1))
}

/// Time from the start of the trace until the residual stays within
/// `margin_db` of its final-20% median. `None` means it never settles.
pub fn convergence_time(trace: &LmsTrace, margin_db: f64) -> Result<Option<f64>> {
    if trace.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(settle_index(&trace.residual_power_dbm, margin_db).map(|k| trace.times_s[k] - trace.times_s[0]))
}

/// Time from `event_s` until the residual settles again, judged on the part
/// of the trace after the event.
pub fn reconvergence_time(trace: &LmsTrace, event_s: f64, margin_db: f64) -> Result<Option<f64>> {
    let after = trace.since(event_s);
    if after.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok(settle_index(&after.residual_power_dbm, margin_db).map(|k| after.times_s[k] - event_s))
}

/// Median residual over the last `fraction` of the trace, in dBm.
pub fn settled_residual_dbm(trace: &LmsTrace, fraction: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptySignal);
    }
    let n = trace.len();
    let k = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    Ok(median(&trace.residual_power_dbm[n - k..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoiFidelity {
    #[serde(with = "serde_ext::db")]
    pub power_delta_db: f64,
    /// Error after the best one-tap complex alignment; `-inf` for a perfect match.
    #[serde(with = "serde_ext::db")]
    pub evm_db: f64,
    /// The fitted alignment gain.
    pub alignment: Complex64,
}

fn brickwall(s: &ComplexSignal, band: Band) -> Vec<Complex64> {
    let n = s.len();
    let mut planner = FftPlanner::new();
    let mut buf = s.samples().to_vec();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = s.sample_rate_hz() / n as f64;
    for (k, v) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 } * df;
        if !band.contains(f) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
    buf
}

/// How well the signal of interest survives cancellation: band-power change
/// and EVM of `z` against `soi_in`, both restricted to `soi_band`.
pub fn soi_fidelity(soi_in: &ComplexSignal, z: &ComplexSignal, soi_band: Band) -> Result<SoiFidelity> {
    z.check_compatible(soi_in)?;
    soi_band.validate(soi_in.sample_rate_hz())?;
    let opts = MeasureOptions::default();
    let power_delta_db = opts.band_power_dbm(z, soi_band)? - opts.band_power_dbm(soi_in, soi_band)?;

    let s = brickwall(soi_in, soi_band);
    let r = brickwall(z, soi_band);
    let ss: f64 = s.iter().map(|v| v.norm_sqr()).sum();
    if ss == 0.0 {
        return Err(Error::EmptySignal);
    }
    let alpha = s.iter().zip(&r).map(|(a, b)| a.conj() * b).sum::<Complex64>() / ss;
    let err: f64 = s.iter().zip(&r).map(|(a, b)| (b - alpha * a).norm_sqr()).sum();
    let evm_db = mw_to_dbm(err / (alpha.norm_sqr() * ss));
    Ok(SoiFidelity {
        power_delta_db,
        evm_db,
        alignment: alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{generate, WaveformSpec};
    use approx::assert_abs_diff_eq;

    const FS: f64 = 500e6;

    fn noise(len: usize, bw: f64, p: f64, seed: u64) -> ComplexSignal {
        generate(&WaveformSpec::bandlimited(bw, p, len as f64 / FS, seed), FS).unwrap()
    }

    fn trace(res: Vec<f64>) -> LmsTrace {
        LmsTrace {
            times_s: (0..res.len()).map(|k| k as f64 * 1e-6).collect(),
            weights: vec![],
            residual_power_dbm: res,
        }
    }

    #[test]
    fn report_identity_and_no_cancellation() {
        let tx = noise(65536, 20e6, 21.0, 1);
        let y = tx.scaled(Complex64::new(0.05, 0.02));
        let r = cancellation_report(&tx, &y, &y, Band::centered(20e6)).unwrap();
        assert_eq!(r.active_db, 0.0);
        assert_eq!(r.total_db - r.intrinsic_db - r.active_db, 0.0);
    }

    #[test]
    fn thirty_db_active() {
        let tx = noise(65536, 20e6, 21.0, 1);
        let y = tx.scaled(Complex64::new(0.1, 0.0));
        let z = y.scaled(Complex64::new(1e-1_f64.powf(1.5), 0.0));
        let r = cancellation_report(&tx, &y, &z, Band::centered(20e6)).unwrap();
        assert_abs_diff_eq!(r.active_db, 30.0, epsilon = 0.1);
        assert_abs_diff_eq!(r.intrinsic_db, 20.0, epsilon = 0.1);
    }

    #[test]
    fn band_outside_nyquist_rejected() {
        let tx = noise(8192, 20e6, 0.0, 1);
        assert!(cancellation_report(&tx, &tx, &tx, Band::new(0.0, 300e6)).is_err());
    }

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence_time(&trace(vec![-40.0; 50]), 3.0).unwrap(), Some(0.0));
        let mut r = vec![-10.0; 20];
        r.extend(vec![-60.0; 80]);
        assert_abs_diff_eq!(convergence_time(&trace(r), 3.0).unwrap().unwrap(), 20e-6, epsilon = 1e-15);
        let ramp: Vec<f64> = (0..100).map(|k| -(k as f64)).collect();
        assert_eq!(convergence_time(&trace(ramp), 3.0).unwrap(), None);
        assert!(convergence_time(&trace(vec![]), 3.0).is_err());
    }

    #[test]
    fn reconvergence_after_event() {
        let mut r = vec![-60.0; 50];
        r.extend(vec![-20.0; 10]);
        r.extend(vec![-60.0; 40]);
        let t = trace(r);
        assert_abs_diff_eq!(reconvergence_time(&t, 50e-6, 3.0).unwrap().unwrap(), 10e-6, epsilon = 1e-15);
    }

    #[test]
    fn soi_identity() {
        let s = noise(1 << 16, 2e6, -50.0, 3);
        let f = soi_fidelity(&s, &s, Band::centered(2e6)).unwrap();
        assert_abs_diff_eq!(f.power_delta_db, 0.0, epsilon = 1e-9);
        assert_eq!(f.evm_db, f64::NEG_INFINITY);
    }

    #[test]
    fn soi_rotation_is_not_distortion() {
        let s = noise(1 << 16, 2e6, -50.0, 3);
        let z = s.scaled(Complex64::from_polar(1.0, 2.0));
        let f = soi_fidelity(&s, &z, Band::centered(2e6)).unwrap();
        assert!(f.evm_db < -200.0);
    }

    #[test]
    fn soi_evm_with_in_band_noise() {
        let s = noise(1 << 18, 2e6, -50.0, 3);
        let z = s.add(&noise(1 << 18, 2e6, -70.0, 4)).unwrap();
        let f = soi_fidelity(&s, &z, Band::centered(2e6)).unwrap();
        assert_abs_diff_eq!(f.evm_db, -20.0, epsilon = 0.5);
        assert_abs_diff_eq!(f.power_delta_db, 0.0, epsilon = 0.1);
    }
}
