use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{mw_to_dbm, Band, ComplexSignal};
use crate::error::{Error, Result};

/// Tapering window applied to each Welch segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
    /// 4-term Blackman-Harris, ~92 dB sidelobes.
    BlackmanHarris,
}

impl Window {
    /// Periodic (DFT-even) window coefficients of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let nf = n as f64;
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / nf;
                match self {
                    Window::Rectangular => 1.0,
                    Window::Hann => 0.5 - 0.5 * x.cos(),
                    Window::BlackmanHarris => {
                        0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos()
                            - 0.01168 * (3.0 * x).cos()
                    }
                }
            })
            .collect()
    }
}

/// Welch estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub seg_len: usize,
    pub overlap_frac: f64,
    pub window: Window,
}

impl Default for WelchConfig {
    /// 4096-point Hann segments with 50 % overlap (≈122 kHz bins at 500 MS/s).
    fn default() -> Self {
        Self {
            seg_len: 4096,
            overlap_frac: 0.5,
            window: Window::Hann,
        }
    }
}

impl WelchConfig {
    /// Shrinks the segment length for signals shorter than one segment.
    pub fn fitted_to(mut self, len: usize) -> Self {
        self.seg_len = self.seg_len.min(len).max(1);
        self
    }
}

/// Averaged-periodogram power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    /// Bin centre frequencies, ascending, spanning `[-fs/2, fs/2)`.
    pub freqs_hz: Vec<f64>,
    psd_mw_per_hz: Vec<f64>,
    /// Bin spacing, `fs / seg_len`.
    pub bin_hz: f64,
    /// Equivalent noise bandwidth of one bin for the chosen window.
    pub rbw_hz: f64,
}

impl PsdEstimate {
    pub fn len(&self) -> usize {
        self.freqs_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs_hz.is_empty()
    }

    pub fn psd_mw_per_hz(&self) -> &[f64] {
        &self.psd_mw_per_hz
    }

    pub fn psd_dbm_per_hz(&self) -> Vec<f64> {
        self.psd_mw_per_hz.iter().map(|&p| mw_to_dbm(p)).collect()
    }

    /// Power integrated over bins whose centre lies inside `band`, in mW.
    pub fn band_power_mw(&self, band: Band) -> f64 {
        self.freqs_hz
            .iter()
            .zip(&self.psd_mw_per_hz)
            .filter(|(f, _)| band.contains(**f))
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.bin_hz
    }

    pub fn band_power_dbm(&self, band: Band) -> f64 {
        mw_to_dbm(self.band_power_mw(band))
    }

    pub fn total_power_dbm(&self) -> f64 {
        mw_to_dbm(self.psd_mw_per_hz.iter().sum::<f64>() * self.bin_hz)
    }

    /// Frequency of the largest bin.
    pub fn peak_freq_hz(&self) -> f64 {
        let (i, _) = self
            .psd_mw_per_hz
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        self.freqs_hz[i]
    }
}

/// Welch PSD estimate.
///
/// Segments of `seg_len` samples advance by `seg_len·(1 − overlap_frac)`
/// (at least one sample); trailing samples that do not fill a segment are
/// ignored. Each periodogram is normalized by `fs·Σw²` so that summing the
/// PSD times the bin spacing returns the mean signal power.
pub fn psd_welch(
    signal: &ComplexSignal,
    seg_len: usize,
    overlap_frac: f64,
    window: Window,
) -> Result<PsdEstimate> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    if seg_len == 0 || seg_len > signal.len() {
        return Err(Error::param(
            "seg_len",
            format!("must be in 1..={} (signal length)", signal.len()),
        ));
    }
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::param("overlap_frac", "must be in [0, 1)"));
    }

    let fs = signal.sample_rate_hz();
    let win = window.coefficients(seg_len);
    let win_energy: f64 = win.iter().map(|w| w * w).sum();
    let hop = ((seg_len as f64) * (1.0 - overlap_frac)).floor().max(1.0) as usize;
    let n_seg = (signal.len() - seg_len) / hop + 1;

    let fft = FftPlanner::new().plan_fft_forward(seg_len);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); seg_len];
    let mut acc = vec![0.0f64; seg_len];
    let x = signal.samples();
    for s in 0..n_seg {
        let seg = &x[s * hop..s * hop + seg_len];
        for ((b, v), w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = v * w;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
    }

    let scale = 1.0 / (fs * win_energy * n_seg as f64);
    let bin_hz = fs / seg_len as f64;
    let shift = seg_len - seg_len / 2;
    let mut freqs_hz = Vec::with_capacity(seg_len);
    let mut psd = Vec::with_capacity(seg_len);
    for i in 0..seg_len {
        let k = (i + shift) % seg_len;
        let kf = if k < seg_len.div_ceil(2) {
            k as f64
        } else {
            k as f64 - seg_len as f64
        };
        freqs_hz.push(kf * bin_hz);
        psd.push(acc[k] * scale);
    }

    let win_sum: f64 = win.iter().sum();
    let enbw_bins = seg_len as f64 * win_energy / (win_sum * win_sum);
    Ok(PsdEstimate {
        freqs_hz,
        psd_mw_per_hz: psd,
        bin_hz,
        rbw_hz: enbw_bins * bin_hz,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{band_limited_noise_floor, power_dbm};
    use approx::assert_abs_diff_eq;

    #[test]
    fn frequencies_are_sorted_and_span_nyquist() {
        let s = ComplexSignal::zeros(64, 8.0).unwrap();
        for n in [8usize, 7] {
            let p = psd_welch(&s, n, 0.5, Window::Hann).unwrap();
            assert!(p.freqs_hz.windows(2).all(|w| w[0] < w[1]));
            assert!(p.freqs_hz[0] >= -4.0 && *p.freqs_hz.last().unwrap() < 4.0);
        }
    }

    #[test]
    fn hann_enbw_is_one_and_a_half_bins() {
        let s = ComplexSignal::zeros(4096, 500e6).unwrap();
        let p = psd_welch(&s, 4096, 0.5, Window::Hann).unwrap();
        assert_abs_diff_eq!(p.rbw_hz / p.bin_hz, 1.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p.bin_hz, 500e6 / 4096.0);
    }

    #[test]
    fn white_noise_integrates_to_sample_power() {
        let z = ComplexSignal::zeros(1 << 18, 500e6).unwrap();
        let n = band_limited_noise_floor(&z, -37.0, 9).unwrap();
        let full = power_dbm(&n, None).unwrap();
        let psd = psd_welch(&n, 4096, 0.5, Window::Hann).unwrap();
        assert_abs_diff_eq!(psd.total_power_dbm(), full, epsilon = 0.3);
    }

    #[test]
    fn tone_peak_bin() {
        let f0 = 37.3e6;
        let s = ComplexSignal::from_fn(1 << 14, 500e6, |_, t| {
            Complex64::from_polar(1.0, 2.0 * PI * f0 * t)
        })
        .unwrap();
        let p = psd_welch(&s, 4096, 0.5, Window::Hann).unwrap();
        assert!((p.peak_freq_hz() - f0).abs() <= p.bin_hz / 2.0);
    }

    #[test]
    fn scaling_shifts_every_bin() {
        let z = ComplexSignal::zeros(1 << 14, 1e6).unwrap();
        let n = band_limited_noise_floor(&z, 0.0, 3).unwrap();
        let g = 3.7;
        let a = psd_welch(&n, 1024, 0.5, Window::Hann).unwrap().psd_dbm_per_hz();
        let b = psd_welch(&n.scaled(Complex64::new(g, 0.0)), 1024, 0.5, Window::Hann)
            .unwrap()
            .psd_dbm_per_hz();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(y - x, 20.0 * g.log10(), epsilon = 1e-9);
        }
    }

    #[test]
    fn argument_errors() {
        let s = ComplexSignal::zeros(100, 1e6).unwrap();
        assert!(psd_welch(&s, 101, 0.5, Window::Hann).is_err());
        assert!(psd_welch(&s, 0, 0.5, Window::Hann).is_err());
        assert!(psd_welch(&s, 50, 1.0, Window::Hann).is_err());
        assert!(psd_welch(&s, 50, -0.1, Window::Hann).is_err());
    }
}
