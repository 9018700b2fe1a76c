//! Windowed-sinc fractional delay.
//!
//! A delay of `D = k + f` samples (integer `k`, fraction `0 < f < 1`) is
//! realised with a 129-tap sinc kernel centred on `f`, tapered by a Kaiser
//! window (β = 8). The worst-case tone error up to 0.4·fs is below 5·10⁻⁵.
//! Integer delays bypass the kernel and are exact shifts.
//!
//! Long records are filtered by FFT overlap-save. [`DelayBank`] shares the
//! forward transform of each block across several delays, which is how the
//! channel and canceller produce all of their delayed copies in one pass.
//!
//! Edge handling: the input is treated as zero outside its support, so the
//! first `k` output samples are (close to) zero and the last samples lose the
//! tail of the kernel. Metrics should only be taken on the interior, at least
//! [`DelayBank::margin`] samples away from either end.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::ComplexSignal;
use crate::error::{Error, Result};

pub const FRACTIONAL_DELAY_TAPS: usize = 129;
pub const KAISER_BETA: f64 = 8.0;

const HALF: usize = FRACTIONAL_DELAY_TAPS / 2;
/// Fractions closer than this to an integer are treated as integer delays.
const INTEGER_TOL: f64 = 1e-9;
const MAX_FFT_LEN: usize = 8192;

fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let x = std::f64::consts::PI * t;
        x.sin() / x
    }
}

/// Kernel taps `h[j]`, `j = 0..129`, for output `y[n] = Σ h[j]·x[n − k + 64 − j]`.
fn kernel(frac: f64) -> Vec<f64> {
    let norm = bessel_i0(KAISER_BETA);
    let half = HALF as f64;
    (0..FRACTIONAL_DELAY_TAPS)
        .map(|j| {
            let t = j as f64 - half - frac;
            let r = t / half;
            if r.abs() > 1.0 {
                0.0
            } else {
                sinc(t) * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
enum Stage {
    Shift(usize),
    Fractional { shift: usize, kernel: Vec<Complex64> },
}

/// A set of fixed delays applied to the same input.
#[derive(Clone)]
pub struct DelayBank {
    stages: Vec<Stage>,
    delays_samples: Vec<f64>,
}

impl std::fmt::Debug for DelayBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DelayBank")
            .field("delays_samples", &self.delays_samples)
            .finish()
    }
}

impl DelayBank {
    /// Builds a bank for delays given in samples (non-negative).
    pub fn new(delays_samples: &[f64]) -> Result<Self> {
        let mut stages = Vec::with_capacity(delays_samples.len());
        for &d in delays_samples {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::NonCausalDelay(d));
            }
            let rounded = d.round();
            if (d - rounded).abs() < INTEGER_TOL {
                stages.push(Stage::Shift(rounded as usize));
            } else {
                let shift = d.floor();
                stages.push(Stage::Fractional {
                    shift: shift as usize,
                    kernel: kernel(d - shift).into_iter().map(|h| Complex64::new(h, 0.0)).collect(),
                });
            }
        }
        Ok(Self {
            stages,
            delays_samples: delays_samples.to_vec(),
        })
    }

    /// Bank for delays in seconds at `sample_rate_hz`.
    pub fn from_seconds(delays_s: &[f64], sample_rate_hz: f64) -> Result<Self> {
        for &d in delays_s {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::NonCausalDelay(d));
            }
        }
        let samples: Vec<f64> = delays_s.iter().map(|d| d * sample_rate_hz).collect();
        Self::new(&samples)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn delays_samples(&self) -> &[f64] {
        &self.delays_samples
    }

    /// Samples to discard at each end of the record before taking metrics.
    pub fn margin(&self) -> usize {
        let max_delay = self
            .delays_samples
            .iter()
            .fold(0.0f64, |m, &d| m.max(d))
            .ceil() as usize;
        max_delay + HALF + 1
    }

    /// Fails if any delay does not fit inside a record of `len` samples.
    pub fn check_fits(&self, len: usize) -> Result<()> {
        for &d in &self.delays_samples {
            if d > len as f64 {
                return Err(Error::DelayTooLong {
                    delay_samples: d,
                    len,
                });
            }
        }
        Ok(())
    }

    /// Runs every delay over `x`, handing output chunks to
    /// `sink(delay_index, first_output_index, chunk)`.
    ///
    /// Chunks for one delay arrive in increasing order and never overlap.
    /// Output samples that are never delivered are zero.
    pub fn apply(&self, x: &[Complex64], mut sink: impl FnMut(usize, usize, &[Complex64])) {
        let len = x.len();
        let mut fractional = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Shift(k) => {
                    if *k < len {
                        sink(i, *k, &x[..len - k]);
                    }
                }
                Stage::Fractional { shift, kernel } => fractional.push((i, *shift, kernel)),
            }
        }
        if fractional.is_empty() || len == 0 {
            return;
        }

        let taps = FRACTIONAL_DELAY_TAPS;
        let nfft = (len + taps - 1).next_power_of_two().clamp(4 * taps.next_power_of_two(), MAX_FFT_LEN);
        let hop = nfft - taps + 1;
        let mut planner = FftPlanner::new();
        let fwd: Arc<dyn Fft<f64>> = planner.plan_fft_forward(nfft);
        let inv: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(nfft);
        let mut scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];

        let inv_n = 1.0 / nfft as f64;
        let spectra: Vec<Vec<Complex64>> = fractional
            .iter()
            .map(|(_, _, h)| {
                let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
                buf[..taps].copy_from_slice(h);
                fwd.process_with_scratch(&mut buf, &mut scratch);
                buf.iter_mut().for_each(|v| *v *= inv_n);
                buf
            })
            .collect();

        let conv_len = len + taps - 1;
        let mut block = vec![Complex64::new(0.0, 0.0); nfft];
        let mut out = vec![Complex64::new(0.0, 0.0); nfft];
        let mut start = 0usize;
        while start < conv_len {
            // block[t] = x[start - (taps-1) + t]
            for (t, b) in block.iter_mut().enumerate() {
                let idx = (start + t) as isize - (taps as isize - 1);
                *b = if idx >= 0 && (idx as usize) < len {
                    x[idx as usize]
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fwd.process_with_scratch(&mut block, &mut scratch);
            for ((i, shift, _), spec) in fractional.iter().zip(&spectra) {
                for ((o, b), h) in out.iter_mut().zip(&block).zip(spec) {
                    *o = b * h;
                }
                inv.process_with_scratch(&mut out, &mut scratch);
                // conv index c = start + (t - (taps-1)); output n = c + shift - HALF
                let valid = &out[taps - 1..];
                let c0 = start as isize;
                let n0 = c0 + *shift as isize - HALF as isize;
                let lo = (-n0).max(0) as usize;
                let hi = ((len as isize - n0).max(0) as usize).min(valid.len());
                if lo < hi {
                    sink(*i, (n0 + lo as isize) as usize, &valid[lo..hi]);
                }
            }
            start += hop;
        }
    }

    /// Materialises every delayed copy of `x`.
    pub fn delayed_copies(&self, x: &[Complex64]) -> Vec<Vec<Complex64>> {
        let mut outs = vec![vec![Complex64::new(0.0, 0.0); x.len()]; self.len()];
        self.apply(x, |i, n0, chunk| {
            outs[i][n0..n0 + chunk.len()].copy_from_slice(chunk);
        });
        outs
    }
}

/// Delays `signal` by `delay_s` seconds using the windowed-sinc interpolator.
///
/// Output length equals input length; leading samples are zero-filled and
/// the tail is truncated.
pub fn fractional_delay(signal: &ComplexSignal, delay_s: f64) -> Result<ComplexSignal> {
    if delay_s < 0.0 || !delay_s.is_finite() {
        return Err(Error::NonCausalDelay(delay_s));
    }
    let bank = DelayBank::from_seconds(&[delay_s], signal.sample_rate_hz())?;
    bank.check_fits(signal.len())?;
    let out = bank.delayed_copies(signal.samples()).pop().unwrap_or_default();
    Ok(ComplexSignal::from_parts(
        out,
        signal.sample_rate_hz(),
        signal.start_time_s(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(len: usize, fs: f64, f0: f64) -> ComplexSignal {
        ComplexSignal::from_fn(len, fs, |_, t| Complex64::from_polar(1.0, 2.0 * PI * f0 * t)).unwrap()
    }

    /// Direct-form evaluation of the same kernel, used to check overlap-save.
    fn direct(x: &[Complex64], delay: f64) -> Vec<Complex64> {
        let k = delay.floor() as isize;
        let h = kernel(delay - delay.floor());
        (0..x.len() as isize)
            .map(|n| {
                h.iter()
                    .enumerate()
                    .map(|(j, &hj)| {
                        let idx = n - k + HALF as isize - j as isize;
                        if idx >= 0 && (idx as usize) < x.len() {
                            x[idx as usize] * hj
                        } else {
                            Complex64::new(0.0, 0.0)
                        }
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn i0_matches_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-9);
    }

    #[test]
    fn zero_delay_is_identity() {
        let s = tone(500, 1.0, 0.123);
        assert_eq!(fractional_delay(&s, 0.0).unwrap(), s);
    }

    #[test]
    fn integer_delay_is_exact_shift() {
        let s = tone(300, 1e6, 1.7e5);
        let d = fractional_delay(&s, 7e-6).unwrap();
        for n in 0..300 {
            let want = if n >= 7 { s.samples()[n - 7] } else { Complex64::new(0.0, 0.0) };
            assert_eq!(d.samples()[n], want);
        }
    }

    #[test]
    fn overlap_save_matches_direct_form() {
        // Long enough to span several FFT blocks.
        let x: Vec<Complex64> = (0..20_000)
            .map(|n| Complex64::new(((n * 7919) % 13) as f64 - 6.0, ((n * 104_729) % 11) as f64 - 5.0))
            .collect();
        for delay in [0.3, 2.5, 3.75, 70.25] {
            let bank = DelayBank::new(&[delay]).unwrap();
            let got = bank.delayed_copies(&x).pop().unwrap();
            let want = direct(&x, delay);
            let err = got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "delay {delay}: {err}");
        }
    }

    #[test]
    fn negative_delay_rejected() {
        let s = tone(10, 1.0, 0.1);
        assert_eq!(fractional_delay(&s, -1e-9), Err(Error::NonCausalDelay(-1e-9)));
    }

    #[test]
    fn delay_longer_than_signal_rejected() {
        let s = tone(10, 1.0, 0.1);
        assert!(matches!(fractional_delay(&s, 10.5), Err(Error::DelayTooLong { .. })));
    }

    #[test]
    fn bank_matches_individual_delays() {
        let s = tone(3000, 500e6, 31e6);
        let delays = [3.5e-9, 5e-9, 15e-9];
        let bank = DelayBank::from_seconds(&delays, 500e6).unwrap();
        let copies = bank.delayed_copies(s.samples());
        for (c, d) in copies.iter().zip(delays) {
            let single = fractional_delay(&s, d).unwrap();
            assert_eq!(c.as_slice(), single.samples());
        }
    }
}
