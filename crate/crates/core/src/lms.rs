//! Analog-style LMS control of the canceller weights, and the least-squares
//! (Wiener) solution it converges to.
//!
//! Each adaptive branch integrates the correlation between its delayed
//! reference and the canceller output, split into the I and Q rails that the
//! hardware multipliers compute:
//!
//! ```text
//! w_I += μ·dt·(x_I(t−τ)·z_I(t) + x_Q(t−τ)·z_Q(t) + o_I + ν_I)
//! w_Q += μ·dt·(x_I(t−τ)·z_Q(t) − x_Q(t−τ)·z_I(t) + o_Q + ν_Q)
//! ```
//!
//! which is the complex rule `Δw = μ·dt·conj(x(t−τ))·z(t)` plus the DC
//! offsets `o` of the multiplier/integrator chain and the manual nulling
//! voltages `ν`. The continuous integral is discretised with forward Euler at
//! the simulation rate.
//!
//! # Integrator leak
//!
//! An op-amp integrator with finite DC gain `G` (linear voltage gain,
//! `G = 10^(dc_gain_db/20)`) behaves as `dw/dt = μ·u − (μ·1 mW / G)·w`: its
//! leak time constant is `G` times the unity-gain time constant `1/(μ·1 mW)`.
//! Per sample this is the factor
//!
//! ```text
//! λ = 1 − μ·dt·(1 mW) / G
//! ```
//!
//! applied to every adaptive weight after the update. The DC gain of the
//! closed loop `w/u` is then exactly `G` (in 1/mW), so larger `G` means less
//! steady-state bias toward zero.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::canceller::{CancellerConfig, CancellerWeights};
use crate::channel::SiChannel;
use crate::error::{Error, Result};
use crate::signal::{mw_to_dbm, ComplexSignal, FRACTIONAL_DELAY_TAPS};

/// Step size for the bundled scenarios, in 1/(mW·s): 1/20 of the divergence
/// bound measured on the default circulator/20 MHz setup.
pub const DEFAULT_MU: f64 = 2.0e5;

pub const DEFAULT_INTEGRATOR_DC_GAIN_DB: f64 = 50.0;

/// Weight magnitude beyond which the loop is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub const DEFAULT_TRACE_DECIMATION: usize = 256;

/// Length of the sliding window behind `LmsTrace::residual_power_dbm`.
pub const DEFAULT_RESIDUAL_WINDOW: usize = 65536;

/// Largest condition number accepted by [`wiener_solution`].
pub const MAX_CONDITION_NUMBER: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BranchMode {
    #[default]
    Adaptive,
    /// Weight held at a fixed value (manual potentiometer control).
    Manual { weight: Complex64 },
}

/// Per-branch control settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BranchControl {
    #[serde(flatten)]
    pub mode: BranchMode,
    /// DC offset of the I/Q correlator chain, in correlator units (mW).
    #[serde(default)]
    pub dc_offset_i: f64,
    #[serde(default)]
    pub dc_offset_q: f64,
    /// Manually injected offset that should cancel `dc_offset_*`.
    #[serde(default)]
    pub nulling_offset_i: f64,
    #[serde(default)]
    pub nulling_offset_q: f64,
}

impl BranchControl {
    pub fn manual(weight: Complex64) -> Self {
        Self {
            mode: BranchMode::Manual { weight },
            ..Self::default()
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.mode, BranchMode::Adaptive)
    }

    /// Net offset seen by the I and Q integrators.
    fn net_offset(&self) -> (f64, f64) {
        (
            self.dc_offset_i + self.nulling_offset_i,
            self.dc_offset_q + self.nulling_offset_q,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmsConfig {
    /// Step size μ in 1/(mW·s).
    pub mu: f64,
    /// Integrator DC gain in dB; `None` models an ideal integrator.
    #[serde(default = "default_dc_gain")]
    pub integrator_dc_gain_db: Option<f64>,
    /// Branch settings; branches beyond the list are adaptive without offsets.
    #[serde(default)]
    pub branches: Vec<BranchControl>,
    #[serde(default = "default_decimation")]
    pub trace_decimation: usize,
    #[serde(default = "default_residual_window")]
    pub residual_window: usize,
}

fn default_dc_gain() -> Option<f64> {
    Some(DEFAULT_INTEGRATOR_DC_GAIN_DB)
}

fn default_decimation() -> usize {
    DEFAULT_TRACE_DECIMATION
}

fn default_residual_window() -> usize {
    DEFAULT_RESIDUAL_WINDOW
}

impl Default for LmsConfig {
    fn default() -> Self {
        Self::new(DEFAULT_MU)
    }
}

impl LmsConfig {
    /// Fully adaptive loop with step `mu` and the default leaky integrator.
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            integrator_dc_gain_db: default_dc_gain(),
            branches: Vec::new(),
            trace_decimation: DEFAULT_TRACE_DECIMATION,
            residual_window: DEFAULT_RESIDUAL_WINDOW,
        }
    }

    /// Same loop with ideal (leak-free) integrators.
    pub fn ideal(mu: f64) -> Self {
        Self {
            integrator_dc_gain_db: None,
            ..Self::new(mu)
        }
    }

    pub fn branch(&self, n: usize) -> BranchControl {
        self.branches.get(n).copied().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::param("mu", "must be finite and > 0"));
        }
        if let Some(g) = self.integrator_dc_gain_db {
            if !(g.is_finite() && g >= 0.0) {
                return Err(Error::param("integrator_dc_gain_db", "must be >= 0 dB"));
            }
        }
        if self.trace_decimation == 0 {
            return Err(Error::param("trace_decimation", "must be >= 1"));
        }
        if self.residual_window == 0 {
            return Err(Error::param("residual_window", "must be >= 1"));
        }
        for (i, b) in self.branches.iter().enumerate() {
            let vals = [b.dc_offset_i, b.dc_offset_q, b.nulling_offset_i, b.nulling_offset_q];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(&format!("branches[{i}]"), "offsets must be finite"));
            }
            if let BranchMode::Manual { weight } = b.mode {
                if !(weight.re.is_finite() && weight.im.is_finite()) {
                    return Err(Error::param(&format!("branches[{i}].weight"), "must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Per-sample leak factor `λ = 1 − μ·dt·(1 mW)/G` (1 for ideal integrators).
    pub fn leak_factor(&self, dt: f64) -> f64 {
        match self.integrator_dc_gain_db {
            None => 1.0,
            Some(db) => 1.0 - self.mu * dt / 10f64.powf(db / 20.0),
        }
    }
}

/// Recorded loop state, sampled every `trace_decimation` samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LmsTrace {
    /// Time at the end of each recorded block.
    pub times_s: Vec<f64>,
    /// `weights[n][k]`: weight of branch `n` at record `k`.
    pub weights: Vec<Vec<Complex64>>,
    /// Residual power over the trailing sliding window, in dBm.
    pub residual_power_dbm: Vec<f64>,
}

impl LmsTrace {
    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    /// Records with `t >= from_s`, keeping the same layout.
    pub fn since(&self, from_s: f64) -> LmsTrace {
        let k0 = self.times_s.partition_point(|&t| t < from_s);
        LmsTrace {
            times_s: self.times_s[k0..].to_vec(),
            weights: self.weights.iter().map(|w| w[k0..].to_vec()).collect(),
            residual_power_dbm: self.residual_power_dbm[k0..].to_vec(),
        }
    }

    /// Records with `t < until_s`.
    pub fn until(&self, until_s: f64) -> LmsTrace {
        let k1 = self.times_s.partition_point(|&t| t < until_s);
        LmsTrace {
            times_s: self.times_s[..k1].to_vec(),
            weights: self.weights.iter().map(|w| w[..k1].to_vec()).collect(),
            residual_power_dbm: self.residual_power_dbm[..k1].to_vec(),
        }
    }
}

#[inline(always)]
fn update_branch(w: &mut Complex64, x: Complex64, z: Complex64, step: f64, offset: (f64, f64), leak: f64) {
    let corr_i = x.re * z.re + x.im * z.im;
    let corr_q = x.re * z.im - x.im * z.re;
    w.re += step * (corr_i + offset.0);
    w.im += step * (corr_q + offset.1);
    w.re *= leak;
    w.im *= leak;
}

/// One Euler step of the I/Q integrators for every adaptive branch.
///
/// `x_delayed[n]` is the reference delayed by branch `n`'s delay and `z` the
/// canceller output at the same instant. Manual branches are returned
/// unchanged.
pub fn lms_step(
    w: &CancellerWeights,
    x_delayed: &[Complex64],
    z: Complex64,
    dt: f64,
    cfg: &LmsConfig,
) -> CancellerWeights {
    let step = cfg.mu * dt;
    let leak = cfg.leak_factor(dt);
    let mut out = w.clone();
    for (n, (wn, &x)) in out.0.iter_mut().zip(x_delayed).enumerate() {
        let b = cfg.branch(n);
        if b.is_adaptive() {
            update_branch(wn, x, z, step, b.net_offset(), leak);
        }
    }
    out
}

/// Everything produced by one closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopOutput {
    /// Receiver input before cancellation (SI + noise + SoI).
    pub y: ComplexSignal,
    /// Canceller output.
    pub z: ComplexSignal,
    pub trace: LmsTrace,
    pub final_weights: CancellerWeights,
}

/// Runs channel, canceller and LMS loop sample by sample.
///
/// `tx` is the PA output: it drives the channel and is also the canceller
/// reference. Manual branches hold the weight given by their mode; adaptive
/// branches start from `w0`. Receiver noise is seeded by `noise_seed`.
///
/// The last `FRACTIONAL_DELAY_TAPS` samples lack look-ahead for the delay
/// filters, so adaptation and the trace stop there; `z` still covers the
/// whole record with the weights frozen.
pub fn run_closed_loop(
    tx: &ComplexSignal,
    ch: &SiChannel,
    cfg: &CancellerConfig,
    lms: &LmsConfig,
    w0: &CancellerWeights,
    soi: Option<&ComplexSignal>,
    noise_seed: u64,
) -> Result<ClosedLoopOutput> {
    let mut y = ch.propagate(tx, noise_seed)?;
    if let Some(soi) = soi {
        y = y.add(soi)?;
    }
    run_closed_loop_on(tx, &y, cfg, lms, w0).map(|(z, trace, final_weights)| ClosedLoopOutput {
        y,
        z,
        trace,
        final_weights,
    })
}

/// The adaptation loop for a precomputed receiver input `y`.
pub fn run_closed_loop_on(
    x_ref: &ComplexSignal,
    y: &ComplexSignal,
    cfg: &CancellerConfig,
    lms: &LmsConfig,
    w0: &CancellerWeights,
) -> Result<(ComplexSignal, LmsTrace, CancellerWeights)> {
    lms.validate()?;
    cfg.validate()?;
    w0.check_len(cfg)?;
    y.check_compatible(x_ref)?;

    let n_br = cfg.n_taps();
    let refs = cfg.delayed_references(x_ref)?;
    let dt = x_ref.dt();
    let step = lms.mu * dt;
    let leak = lms.leak_factor(dt);
    let controls: Vec<BranchControl> = (0..n_br).map(|n| lms.branch(n)).collect();
    let offsets: Vec<(f64, f64)> = controls.iter().map(|b| b.net_offset()).collect();
    let adaptive: Vec<bool> = controls.iter().map(|b| b.is_adaptive()).collect();
    let cap = cfg.max_weight_magnitude;

    let mut w: Vec<Complex64> = w0.0.clone();
    for (wn, b) in w.iter_mut().zip(&controls) {
        if let BranchMode::Manual { weight } = b.mode {
            *wn = weight;
        }
    }

    let len = x_ref.len();
    let active = len.saturating_sub(FRACTIONAL_DELAY_TAPS).max(1);
    let decim = lms.trace_decimation;
    let window_blocks = lms.residual_window.div_ceil(decim).max(1);
    let mut trace = LmsTrace {
        times_s: Vec::with_capacity(len / decim + 1),
        weights: vec![Vec::with_capacity(len / decim + 1); n_br],
        residual_power_dbm: Vec::with_capacity(len / decim + 1),
    };
    let mut ring: Vec<(f64, usize)> = vec![(0.0, 0); window_blocks];
    let mut ring_pos = 0usize;
    let mut block_energy = 0.0;
    let mut block_count = 0usize;

    let ys = y.samples();
    let mut z = Vec::with_capacity(len);
    let mut xd = vec![Complex64::new(0.0, 0.0); n_br];
    for i in 0..len {
        let mut s = Complex64::new(0.0, 0.0);
        for n in 0..n_br {
            xd[n] = refs[n][i];
            s += w[n] * xd[n];
        }
        let zi = ys[i] - s;
        z.push(zi);
        if i >= active {
            continue;
        }
        for n in 0..n_br {
            if adaptive[n] {
                update_branch(&mut w[n], xd[n], zi, step, offsets[n], leak);
                if let Some(c) = cap {
                    let m = w[n].norm();
                    if m > c {
                        w[n] *= c / m;
                    }
                }
                let m2 = w[n].norm_sqr();
                if !(m2 <= DIVERGENCE_LIMIT * DIVERGENCE_LIMIT) {
                    return Err(Error::Diverged);
                }
            }
        }

        block_energy += zi.norm_sqr();
        block_count += 1;
        if block_count == decim || i + 1 == active {
            ring[ring_pos] = (block_energy, block_count);
            ring_pos = (ring_pos + 1) % window_blocks;
            let (e, c) = ring.iter().fold((0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1));
            trace.times_s.push(x_ref.time_of(i + 1));
            for n in 0..n_br {
                trace.weights[n].push(w[n]);
            }
            trace.residual_power_dbm.push(mw_to_dbm(e / c as f64));
            block_energy = 0.0;
            block_count = 0;
        }
    }

    let z = ComplexSignal::from_parts(z, y.sample_rate_hz(), y.start_time_s());
    Ok((z, trace, CancellerWeights(w)))
}

/// Samples skipped at each end of a record by [`wiener_solution`].
pub fn interior_margin(cfg: &CancellerConfig, sample_rate_hz: f64) -> Result<usize> {
    Ok(cfg.margin(sample_rate_hz)?.max(2 * FRACTIONAL_DELAY_TAPS))
}

fn gram(refs: &[Vec<Complex64>], range: std::ops::Range<usize>) -> DMatrix<Complex64> {
    let n = refs.len();
    DMatrix::from_fn(n, n, |i, j| {
        refs[i][range.clone()]
            .iter()
            .zip(&refs[j][range.clone()])
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
    })
}

/// Condition number of a Hermitian positive semi-definite matrix.
fn condition_number(r: &DMatrix<Complex64>) -> f64 {
    let eig = r.clone().symmetric_eigenvalues();
    let max = eig.iter().cloned().fold(f64::MIN, f64::max);
    let min = eig.iter().cloned().fold(f64::MAX, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares weights minimising `‖y − Σ w_n·x(t − τ_n)‖²` over the
/// interior of the record, from the normal equations `R·w = p`.
pub fn wiener_solution(
    x_ref: &ComplexSignal,
    y: &ComplexSignal,
    cfg: &CancellerConfig,
) -> Result<CancellerWeights> {
    y.check_compatible(x_ref)?;
    let refs = cfg.delayed_references(x_ref)?;
    let m = interior_margin(cfg, x_ref.sample_rate_hz())?;
    let n = cfg.n_taps();
    let len = x_ref.len();
    if len < 2 * m + 100 * n {
        return Err(Error::param(
            "x_ref",
            format!("record of {len} samples too short for {n} taps (need {})", 2 * m + 100 * n),
        ));
    }
    let range = m..len - m;
    let r = gram(&refs, range.clone());
    let cond = condition_number(&r);
    if !(cond <= MAX_CONDITION_NUMBER) {
        return Err(Error::IllConditioned(cond));
    }
    let ys = &y.samples()[range.clone()];
    let p = DVector::from_fn(n, |i, _| {
        refs[i][range.clone()]
            .iter()
            .zip(ys)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
    });
    let w = r
        .cholesky()
        .ok_or(Error::IllConditioned(cond))?
        .solve(&p);
    Ok(CancellerWeights(w.iter().copied().collect()))
}

/// Classic LMS stability estimate `μ < 2 / (dt·λ_max(R))`, with `R` the
/// per-sample covariance of the delayed references.
pub fn stability_bound_mu(x_ref: &ComplexSignal, cfg: &CancellerConfig) -> Result<f64> {
    let refs = cfg.delayed_references(x_ref)?;
    let m = interior_margin(cfg, x_ref.sample_rate_hz())?;
    let len = x_ref.len();
    if len <= 2 * m {
        return Err(Error::param("x_ref", "record too short"));
    }
    let r = gram(&refs, m..len - m) / Complex64::new((len - 2 * m) as f64, 0.0);
    let lmax = r.symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
    Ok(2.0 / (x_ref.dt() * lmax))
}
