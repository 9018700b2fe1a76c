//! Configuration-driven experiments: waveform → PA → channel → canceller →
//! LMS → metrics, plus the bundled scenarios and their file outputs.
//!
//! A scenario is fully determined by its config (including `seed`). The
//! per-stage random streams are derived from the seed: transmit waveform
//! uses `seed`, the signal of interest `seed + 1`, receiver noise `seed + 2`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::canceller::{CancellerConfig, CancellerWeights};
use crate::channel::{preset, ChannelPreset, ChannelTap, DisturbanceEvent, SiChannel};
use crate::error::{Error, Result};
use crate::lms::{run_closed_loop_on, wiener_solution, BranchMode, LmsConfig, LmsTrace};
use crate::metrics::{
    cancellation_report_with, convergence_time, reconvergence_time, settled_residual_dbm, soi_fidelity,
    CancellationReport, MeasureOptions, SoiFidelity, DEFAULT_SETTLE_MARGIN_DB,
};
use crate::pa::{amplify, imd3_dbc, PaParams};
use crate::serde_ext;
use crate::signal::{psd_welch, Band, ComplexSignal, PsdEstimate, Window, DEFAULT_SAMPLE_RATE_HZ};
use crate::waveform::{generate, WaveformKind, WaveformSpec, SOI_BANDWIDTH_RATIO};

/// Environment variable that overrides the default output directory.
pub const OUT_DIR_ENV: &str = "SICSIM_OUT_DIR";

pub const DEFAULT_DURATION_S: f64 = 20e-3;

/// Transmit waveform settings; length and seed come from the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxSettings {
    #[serde(flatten)]
    pub kind: WaveformKind,
    /// Power at the PA input.
    pub power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoiSettings {
    /// Defaults to a tenth of the transmit bandwidth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth_hz: Option<f64>,
    /// Power injected at the receiver input.
    pub power_dbm: f64,
}

/// Either a named preset or explicit taps, with optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ChannelSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<ChannelPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taps: Option<Vec<ChannelTap>>,
    /// Overrides the preset floor; `None` on explicit taps means no noise.
    #[serde(default, skip_serializing_if = "Option::is_none", with = "serde_ext::opt_db")]
    pub noise_floor_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<DisturbanceEvent>,
}

impl ChannelSettings {
    pub fn build(&self) -> Result<SiChannel> {
        let mut ch = match (&self.preset, &self.taps) {
            (Some(p), None) => preset(*p),
            (None, Some(taps)) => SiChannel::from_taps(taps.clone()),
            _ => return Err(Error::Config("channel: give exactly one of `preset` or `taps`".into())),
        };
        if let Some(n) = self.noise_floor_dbm {
            ch = ch.with_noise_floor(n);
        }
        let ch = ch.with_events(self.events.clone());
        ch.validate()?;
        Ok(ch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSettings {
    /// Band for the cancellation report; defaults to the transmit band.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_hz: Option<Band>,
    #[serde(default = "default_steady")]
    pub steady_fraction: f64,
    #[serde(default = "default_margin")]
    pub settle_margin_db: f64,
}

fn default_steady() -> f64 {
    crate::metrics::DEFAULT_STEADY_FRACTION
}

fn default_margin() -> f64 {
    DEFAULT_SETTLE_MARGIN_DB
}

impl Default for MetricsSettings {
    fn default() -> Self {
        Self {
            band_hz: None,
            steady_fraction: default_steady(),
            settle_margin_db: default_margin(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outputs {
    #[serde(default = "yes")]
    pub psd: bool,
    #[serde(default = "yes")]
    pub weight_trace: bool,
    #[serde(default = "yes")]
    pub report: bool,
}

fn yes() -> bool {
    true
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            psd: true,
            weight_trace: true,
            report: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    pub waveform: TxSettings,
    #[serde(default)]
    pub pa: PaParams,
    pub channel: ChannelSettings,
    #[serde(default)]
    pub canceller: CancellerConfig,
    #[serde(default)]
    pub lms: LmsConfig,
    /// Branches held at the least-squares weight for the whole run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub manual_wiener_branches: Vec<usize>,
    /// Starting weights; zeros if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_weights: Option<Vec<Complex64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soi: Option<SoiSettings>,
    #[serde(default)]
    pub metrics: MetricsSettings,
    #[serde(default)]
    pub outputs: Outputs,
}

impl ScenarioConfig {
    /// Parses TOML, or JSON if the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::param("sample_rate_hz", "must be finite and > 0"));
        }
        self.tx_spec().validate(self.sample_rate_hz)?;
        self.channel.build()?;
        self.canceller.validate()?;
        self.lms.validate()?;
        for &b in &self.manual_wiener_branches {
            if b >= self.canceller.n_taps() {
                return Err(Error::param("manual_wiener_branches", format!("no branch {b}")));
            }
        }
        if let Some(w) = &self.initial_weights {
            CancellerWeights(w.clone()).check_len(&self.canceller)?;
        }
        if let Some(soi) = &self.soi {
            self.soi_spec(soi).validate(self.sample_rate_hz)?;
        }
        self.band().validate(self.sample_rate_hz)?;
        let m = &self.metrics;
        if !(m.steady_fraction > 0.0 && m.steady_fraction <= 1.0) {
            return Err(Error::param("metrics.steady_fraction", "must be in (0, 1]"));
        }
        if !(m.settle_margin_db > 0.0) {
            return Err(Error::param("metrics.settle_margin_db", "must be > 0"));
        }
        let n = self.tx_spec().num_samples(self.sample_rate_hz);
        let need = 4 * self.canceller.margin(self.sample_rate_hz)? + 4 * self.lms.trace_decimation;
        if n < need {
            return Err(Error::param("duration_s", format!("too short: {n} samples, need {need}")));
        }
        Ok(())
    }

    fn tx_spec(&self) -> WaveformSpec {
        WaveformSpec {
            kind: self.waveform.kind,
            power_dbm: self.waveform.power_dbm,
            duration_s: self.duration_s,
            seed: self.seed,
        }
    }

    fn soi_band_width(&self, soi: &SoiSettings) -> f64 {
        soi.bandwidth_hz
            .unwrap_or(self.tx_spec().bandwidth_hz() * SOI_BANDWIDTH_RATIO)
    }

    fn soi_spec(&self, soi: &SoiSettings) -> WaveformSpec {
        WaveformSpec {
            kind: WaveformKind::Soi {
                bandwidth_hz: self.soi_band_width(soi),
            },
            power_dbm: soi.power_dbm,
            duration_s: self.duration_s,
            seed: self.seed.wrapping_add(1),
        }
    }

    /// Band of the cancellation report.
    pub fn band(&self) -> Band {
        self.metrics.band_hz.unwrap_or_else(|| match self.waveform.kind {
            // Main tones plus the third-order products.
            WaveformKind::TwoTone { tone_spacing_hz } => Band::centered(4.0 * tone_spacing_hz),
            _ => Band::centered(self.tx_spec().bandwidth_hz()),
        })
    }

    fn measure_options(&self) -> MeasureOptions {
        MeasureOptions {
            steady_fraction: self.metrics.steady_fraction,
            ..MeasureOptions::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Imd3Report {
    #[serde(with = "serde_ext::db")]
    pub measured_dbc: f64,
    #[serde(with = "serde_ext::db")]
    pub predicted_dbc: f64,
}

/// Settling around the first channel event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub event_time_s: f64,
    #[serde(with = "serde_ext::db")]
    pub pre_event_residual_dbm: f64,
    #[serde(with = "serde_ext::db")]
    pub post_event_residual_dbm: f64,
    #[serde(with = "serde_ext::db")]
    pub peak_residual_dbm: f64,
    pub reconvergence_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub version: String,
    pub seed: u64,
    pub cancellation: CancellationReport,
    /// `None` if the residual never settled.
    pub convergence_time_s: Option<f64>,
    #[serde(with = "serde_ext::db")]
    pub settled_residual_dbm: f64,
    pub final_weights: CancellerWeights,
    /// Least-squares weights for the same record, for comparison.
    pub wiener_weights: Option<CancellerWeights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub soi_fidelity: Option<SoiFidelity>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imd3: Option<Imd3Report>,
    pub config: ScenarioConfig,
}

impl ScenarioReport {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Report plus the signals behind it.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: ScenarioReport,
    pub tx: ComplexSignal,
    pub y: ComplexSignal,
    pub z: ComplexSignal,
    pub soi: Option<ComplexSignal>,
    pub trace: LmsTrace,
}

/// Measured IMD3 of a two-tone signal: mean third-order product power
/// relative to mean main-tone power.
pub fn measure_imd3_dbc(s: &ComplexSignal, tone_spacing_hz: f64) -> Result<f64> {
    let psd = psd_welch(s, 16384.min(s.len()), 0.5, Window::BlackmanHarris)?;
    let half = 0.25 * tone_spacing_hz;
    let line = |f: f64| psd.band_power_mw(Band::new(f - half, f + half));
    let d = tone_spacing_hz;
    let main = line(-0.5 * d) + line(0.5 * d);
    let imd = line(-1.5 * d) + line(1.5 * d);
    Ok(10.0 * (imd / main).log10())
}

/// Runs the full pipeline in memory.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let fs = cfg.sample_rate_hz;
    let pa_in = generate(&cfg.tx_spec(), fs)?;
    let tx = amplify(&pa_in, &cfg.pa);
    let ch = cfg.channel.build()?;
    let mut y = ch.propagate(&tx, cfg.seed.wrapping_add(2))?;
    let soi = match &cfg.soi {
        Some(s) => Some(generate(&cfg.soi_spec(s), fs)?),
        None => None,
    };
    if let Some(s) = &soi {
        y = y.add(s)?;
    }

    let wiener = wiener_solution(&tx, &y, &cfg.canceller).ok();
    let mut lms = cfg.lms.clone();
    for &b in &cfg.manual_wiener_branches {
        let w = wiener
            .as_ref()
            .ok_or_else(|| Error::Config("manual_wiener_branches: least-squares solve failed".into()))?;
        if lms.branches.len() <= b {
            lms.branches.resize(b + 1, Default::default());
        }
        lms.branches[b].mode = BranchMode::Manual { weight: w.0[b] };
    }
    let w0 = CancellerWeights(
        cfg.initial_weights
            .clone()
            .unwrap_or_else(|| vec![Complex64::new(0.0, 0.0); cfg.canceller.n_taps()]),
    );
    let (z, trace, final_weights) = run_closed_loop_on(&tx, &y, &cfg.canceller, &lms, &w0)?;

    let opts = cfg.measure_options();
    let cancellation = cancellation_report_with(&tx, &y, &z, cfg.band(), &opts)?;
    let margin = cfg.metrics.settle_margin_db;

    let tracking = match ch.events.first() {
        Some(ev) => {
            let t0 = ev.time_s;
            let before = trace.until(t0);
            let after = trace.since(t0);
            if before.is_empty() || after.is_empty() {
                None
            } else {
                Some(TrackingReport {
                    event_time_s: t0,
                    pre_event_residual_dbm: settled_residual_dbm(&before, 0.2)?,
                    post_event_residual_dbm: settled_residual_dbm(&after, 0.2)?,
                    peak_residual_dbm: after.residual_power_dbm.iter().cloned().fold(f64::MIN, f64::max),
                    reconvergence_time_s: reconvergence_time(&trace, t0, margin)?,
                })
            }
        }
        None => None,
    };
    let convergence_time_s = match ch.events.first() {
        Some(ev) => convergence_time(&trace.until(ev.time_s), margin)?,
        None => convergence_time(&trace, margin)?,
    };

    let soi_fid = match (&soi, &cfg.soi) {
        (Some(s), Some(settings)) => Some(soi_fidelity(
            &opts.steady_segment(s)?,
            &opts.steady_segment(&z)?,
            Band::centered(cfg.soi_band_width(settings)),
        )?),
        _ => None,
    };
    let imd3 = match cfg.waveform.kind {
        WaveformKind::TwoTone { tone_spacing_hz } => Some(Imd3Report {
            measured_dbc: measure_imd3_dbc(&tx, tone_spacing_hz)?,
            predicted_dbc: imd3_dbc(&cfg.pa, cfg.waveform.power_dbm - 10.0 * 2f64.log10()),
        }),
        _ => None,
    };

    let report = ScenarioReport {
        name: cfg.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        cancellation,
        convergence_time_s,
        settled_residual_dbm: settled_residual_dbm(&trace, 0.2)?,
        final_weights,
        wiener_weights: wiener,
        tracking,
        soi_fidelity: soi_fid,
        imd3,
        config: cfg.clone(),
    };
    Ok(ScenarioRun {
        report,
        tx,
        y,
        z,
        soi,
        trace,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Writes `freq_hz, psd_dbm_per_hz` rows.
pub fn write_psd_csv(path: &Path, psd: &PsdEstimate) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["freq_hz", "psd_dbm_per_hz"]).map_err(csv_err)?;
    for (f, p) in psd.freqs_hz.iter().zip(psd.psd_dbm_per_hz()) {
        w.write_record([f.to_string(), p.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `time_s`, then `w{n}_i, w{n}_q` per branch, then `residual_dbm`.
pub fn write_trace_csv(path: &Path, trace: &LmsTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["time_s".to_string()];
    for n in 0..trace.weights.len() {
        header.push(format!("w{n}_i"));
        header.push(format!("w{n}_q"));
    }
    header.push("residual_dbm".into());
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..trace.len() {
        let mut row = vec![trace.times_s[k].to_string()];
        for br in &trace.weights {
            row.push(br[k].re.to_string());
            row.push(br[k].im.to_string());
        }
        row.push(trace.residual_power_dbm[k].to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the enabled outputs into `dir` and returns the paths written.
pub fn write_outputs(run: &ScenarioRun, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cfg = &run.report.config;
    let mut written = Vec::new();
    if cfg.outputs.report {
        let p = dir.join("report.json");
        fs::write(&p, run.report.to_json())?;
        written.push(p);
    }
    if cfg.outputs.psd {
        let opts = cfg.measure_options();
        for (tag, s) in [("tx", &run.tx), ("y", &run.y), ("z", &run.z)] {
            let seg = opts.steady_segment(s)?;
            let w = opts.welch.fitted_to(seg.len());
            let psd = psd_welch(&seg, w.seg_len, w.overlap_frac, w.window)?;
            let p = dir.join(format!("psd_{tag}.csv"));
            write_psd_csv(&p, &psd)?;
            written.push(p);
        }
    }
    if cfg.outputs.weight_trace {
        let p = dir.join("trace.csv");
        write_trace_csv(&p, &run.trace)?;
        written.push(p);
    }
    Ok(written)
}

const BUNDLED: [(&str, &str); 8] = [
    ("circulator_20mhz", include_str!("../scenarios/circulator_20mhz.toml")),
    ("circulator_100mhz", include_str!("../scenarios/circulator_100mhz.toml")),
    ("dual_antenna_20mhz", include_str!("../scenarios/dual_antenna_20mhz.toml")),
    ("dual_antenna_100mhz", include_str!("../scenarios/dual_antenna_100mhz.toml")),
    ("soi_recovery", include_str!("../scenarios/soi_recovery.toml")),
    ("tracking_step", include_str!("../scenarios/tracking_step.toml")),
    ("tracking_ramp", include_str!("../scenarios/tracking_ramp.toml")),
    ("pa_two_tone", include_str!("../scenarios/pa_two_tone.toml")),
];

/// TOML source of a bundled scenario.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn bundled(name: &str) -> Result<ScenarioConfig> {
    let src = bundled_source(name).ok_or_else(|| Error::Config(format!("unknown scenario `{name}`")))?;
    ScenarioConfig::parse(src)
}

/// Bundled scenario names with their one-line descriptions.
pub fn list_scenarios() -> Vec<(&'static str, String)> {
    BUNDLED
        .iter()
        .map(|(n, src)| {
            let desc = ScenarioConfig::parse(src).map(|c| c.description).unwrap_or_default();
            (*n, desc)
        })
        .collect()
}

/// A config at the default rate and duration, for programmatic use.
pub fn template(name: &str, waveform: TxSettings, channel: ChannelSettings) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        description: String::new(),
        sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
        duration_s: DEFAULT_DURATION_S,
        seed: 0,
        waveform,
        pa: PaParams::default(),
        channel,
        canceller: CancellerConfig::default(),
        lms: LmsConfig::default(),
        manual_wiener_branches: Vec::new(),
        initial_weights: None,
        soi: None,
        metrics: MetricsSettings::default(),
        outputs: Outputs::default(),
    }
}
