//! Memoryless odd-order power amplifier model.
//!
//! ```text
//! y[n] = g · (x[n] + a3·x[n]·|x[n]|² + a5·x[n]·|x[n]|⁴) + c_LO
//! ```
//!
//! with `g = 10^(gain_db/20)` and `|x|²` in mW. The coefficients are
//! normalized to unit small-signal gain. The optional LO-leakage term `c_LO`
//! is a constant (DC) offset whose power sits `lo_leakage_dbc` below the
//! amplified signal power.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::signal::{db_to_amplitude, dbm_to_mw, mw_to_dbm, ComplexSignal};

/// Default 1 dB compression point of the composite PA, referred to its input.
pub const DEFAULT_INPUT_P1DB_DBM: f64 = -1.0;

/// LO-leakage level used when a scenario switches leakage on without a value.
pub const DEFAULT_LO_LEAKAGE_DBC: f64 = -25.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaParams {
    pub gain_db: f64,
    pub a3: Complex64,
    #[serde(default)]
    pub a5: Complex64,
    #[serde(default)]
    pub lo_leakage_dbc: Option<f64>,
}

impl Default for PaParams {
    /// 21 dB gain, compressed by 1 dB at −1 dBm input, no fifth-order term,
    /// no LO leakage.
    fn default() -> Self {
        Self {
            gain_db: 21.0,
            a3: Complex64::new(a3_for_input_p1db(DEFAULT_INPUT_P1DB_DBM), 0.0),
            a5: Complex64::new(0.0, 0.0),
            lo_leakage_dbc: None,
        }
    }
}

impl PaParams {
    pub fn linear(gain_db: f64) -> Self {
        Self {
            gain_db,
            a3: Complex64::new(0.0, 0.0),
            a5: Complex64::new(0.0, 0.0),
            lo_leakage_dbc: None,
        }
    }

    /// Complex gain (relative to the small-signal gain) seen by a single tone
    /// of power `p_mw`.
    pub fn tone_gain(&self, p_mw: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) + self.a3 * p_mw + self.a5 * p_mw * p_mw
    }
}

/// Real, negative `a3` that compresses a single tone by 1 dB at `p1db_dbm`.
pub fn a3_for_input_p1db(p1db_dbm: f64) -> f64 {
    -(1.0 - db_to_amplitude(-1.0)) / dbm_to_mw(p1db_dbm)
}

/// Applies the PA to `x`.
pub fn amplify(x: &ComplexSignal, p: &PaParams) -> ComplexSignal {
    let g = db_to_amplitude(p.gain_db);
    let mut out: Vec<Complex64> = x
        .samples()
        .iter()
        .map(|&s| {
            let m = s.norm_sqr();
            g * (s + p.a3 * s * m + p.a5 * s * (m * m))
        })
        .collect();
    if let Some(dbc) = p.lo_leakage_dbc {
        let p_sig = out.iter().map(|s| s.norm_sqr()).sum::<f64>() / out.len().max(1) as f64;
        let c = Complex64::new((p_sig * dbm_to_mw(dbc)).sqrt(), 0.0);
        out.iter_mut().for_each(|s| *s += c);
    }
    ComplexSignal::from_parts(out, x.sample_rate_hz(), x.start_time_s())
}

/// Closed-form third-order intermodulation level, in dBc, for two equal
/// complex tones of `per_tone_input_dbm` each.
///
/// For input `A(e^{jω₁t} + e^{jω₂t})` the polynomial produces
/// `A(1 + 3a3A² + 10a5A⁴)` on each main tone and `A(a3A² + 5a5A⁴)` at
/// `2ω₁ − ω₂` and `2ω₂ − ω₁`; the result is their ratio in dB.
pub fn imd3_dbc(p: &PaParams, per_tone_input_dbm: f64) -> f64 {
    let a2 = dbm_to_mw(per_tone_input_dbm);
    let main = Complex64::new(1.0, 0.0) + 3.0 * p.a3 * a2 + 10.0 * p.a5 * a2 * a2;
    let imd = p.a3 * a2 + 5.0 * p.a5 * a2 * a2;
    mw_to_dbm(imd.norm_sqr() / main.norm_sqr())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::power_dbm;
    use approx::assert_abs_diff_eq;

    fn noise(len: usize, p_dbm: f64) -> ComplexSignal {
        let s = crate::waveform::generate(
            &crate::waveform::WaveformSpec::bandlimited(20e6, p_dbm, len as f64 / 500e6, 1),
            500e6,
        )
        .unwrap();
        s
    }

    #[test]
    fn linear_pa_adds_gain() {
        let x = noise(4096, 0.0);
        let y = amplify(&x, &PaParams::linear(21.0));
        assert_abs_diff_eq!(power_dbm(&y, None).unwrap(), 21.0, epsilon = 1e-9);
    }

    #[test]
    fn zero_in_zero_out() {
        let x = ComplexSignal::zeros(32, 1e6).unwrap();
        let y = amplify(&x, &PaParams::default());
        assert!(y.samples().iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn default_compression_point() {
        let p = PaParams::default();
        let g = p.tone_gain(dbm_to_mw(DEFAULT_INPUT_P1DB_DBM));
        assert_abs_diff_eq!(20.0 * g.norm().log10(), -1.0, epsilon = 1e-12);
        // 20 dB below compression the gain is within 0.05 dB of nominal.
        let g = p.tone_gain(dbm_to_mw(DEFAULT_INPUT_P1DB_DBM - 20.0));
        assert!(20.0 * g.norm().log10() > -0.05);
    }

    #[test]
    fn default_imd3_near_minus_20_dbc() {
        // 0 dBm total drive = −3.01 dBm per tone.
        let v = imd3_dbc(&PaParams::default(), -3.0103);
        assert!((-22.5..=-19.5).contains(&v), "{v}");
    }

    #[test]
    fn imd3_limits() {
        assert_eq!(imd3_dbc(&PaParams::linear(10.0), 0.0), f64::NEG_INFINITY);
        let p = PaParams::default();
        let lo = imd3_dbc(&p, -40.0);
        let hi = imd3_dbc(&p, -40.0 + 20.0 * 2f64.log10());
        assert_abs_diff_eq!(hi - lo, 12.04, epsilon = 0.01);
    }

    #[test]
    fn lo_leakage_level() {
        let x = noise(8192, 0.0);
        let mut p = PaParams::linear(21.0);
        p.lo_leakage_dbc = Some(-25.0);
        let y = amplify(&x, &p);
        let dc = y.samples()[0] - x.samples()[0] * db_to_amplitude(21.0);
        assert_abs_diff_eq!(mw_to_dbm(dc.norm_sqr()), 21.0 - 25.0, epsilon = 1e-9);
    }

    #[test]
    fn memoryless_and_phase_invariant() {
        let x = noise(256, 0.0);
        let mut p = PaParams::default();
        p.a5 = Complex64::new(0.01, -0.003);
        let y = amplify(&x, &p);
        let rot = Complex64::from_polar(1.0, 1.234);
        let y_rot = amplify(&x.scaled(rot), &p);
        for (a, b) in y.samples().iter().zip(y_rot.samples()) {
            assert!((a * rot - b).norm() < 1e-12);
        }
        let mut rev: Vec<Complex64> = x.samples().to_vec();
        rev.reverse();
        let y_rev = amplify(&ComplexSignal::new(rev, 500e6).unwrap(), &p);
        for (a, b) in y.samples().iter().rev().zip(y_rev.samples()) {
            assert_eq!(a, b);
        }
    }
}
