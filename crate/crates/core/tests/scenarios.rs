use num_complex::Complex64;

use sicsim::canceller::{CancellerConfig, CancellerWeights};
use sicsim::channel::{preset, ChannelPreset};
use sicsim::lms::{run_closed_loop, LmsConfig};
use sicsim::pa::{amplify, PaParams};
use sicsim::scenario::{bundled, run_scenario, ScenarioConfig, ScenarioReport};
use sicsim::waveform::{generate, WaveformSpec};

const FS: f64 = 500e6;

fn short(name: &str, duration_s: f64) -> ScenarioConfig {
    let mut cfg = bundled(name).unwrap();
    cfg.duration_s = duration_s;
    cfg
}

fn normalized_corr(a: &[Complex64], b: &[Complex64]) -> f64 {
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    dot.norm() / (na * nb)
}

#[test]
fn lms_residual_is_orthogonal_at_convergence() {
    let len = 1_000_000;
    let tx = amplify(
        &generate(&WaveformSpec::bandlimited(20e6, 0.0, len as f64 / FS, 4), FS).unwrap(),
        &PaParams::default(),
    );
    let cfg = CancellerConfig::default();
    let out = run_closed_loop(
        &tx,
        &preset(ChannelPreset::Circulator),
        &cfg,
        &LmsConfig::ideal(2e5),
        &CancellerWeights::zeros(2),
        None,
        5,
    )
    .unwrap();
    let refs = cfg.delayed_references(&tx).unwrap();
    let r = len - len / 5..len - 300;
    for (n, x) in refs.iter().enumerate() {
        let c = normalized_corr(&x[r.clone()], &out.z.samples()[r.clone()]);
        assert!(c < 1e-2, "branch {n}: {c}");
    }
}

#[test]
fn residual_falls_during_initial_convergence() {
    let mut cfg = short("dual_antenna_20mhz", 2e-3);
    cfg.lms.residual_window = 4096;
    let run = run_scenario(&cfg).unwrap();
    let r = &run.trace.residual_power_dbm;
    let settled = run.report.settled_residual_dbm;
    // Until the residual first reaches its settled level, it should never
    // climb more than a noise allowance above the best level seen so far.
    let mut best = f64::INFINITY;
    for &v in r.iter().skip(16) {
        if v <= settled + 3.0 {
            break;
        }
        assert!(v <= best + 1.0, "{v} dBm after reaching {best} dBm");
        best = best.min(v);
    }
    assert!(best.is_finite());
}

#[test]
fn step_disturbance_kicks_residual_then_recovers() {
    let mut cfg = short("tracking_step", 4e-3);
    cfg.channel.events[0].time_s = 2e-3;
    let run = run_scenario(&cfg).unwrap();
    let t = run.report.tracking.unwrap();
    assert!(t.peak_residual_dbm > t.pre_event_residual_dbm + 20.0, "{t:?}");
    assert!(t.post_event_residual_dbm <= t.pre_event_residual_dbm + 3.0, "{t:?}");
    let re = t.reconvergence_time_s.expect("reconverges");
    assert!(re > 0.0 && re < 1.5e-3, "{re}");

    // Nothing before the event may differ from the undisturbed run.
    let mut calm = cfg.clone();
    calm.channel.events.clear();
    let base = run_scenario(&calm).unwrap();
    let k = run.trace.times_s.partition_point(|&s| s < 2e-3);
    assert_eq!(run.trace.residual_power_dbm[..k], base.trace.residual_power_dbm[..k]);
    assert_ne!(run.trace.residual_power_dbm[k + 8], base.trace.residual_power_dbm[k + 8]);

    // Settled weights sit still before the event and swing right after it.
    for w in &run.trace.weights {
        let before = (w[k - 1] - w[k - 5]).norm();
        let after = (w[k + 3] - w[k - 1]).norm();
        assert!(after > 10.0 * before, "slope {before} -> {after}");
    }
}

#[test]
fn echoed_config_reproduces_report() {
    let run = run_scenario(&short("circulator_20mhz", 1e-3)).unwrap();
    let json = run.report.to_json();
    let parsed: ScenarioReport = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed, run.report);
    let again = run_scenario(&parsed.config).unwrap();
    assert_eq!(again.report.to_json(), json);
}

#[test]
fn seed_changes_the_record() {
    let a = run_scenario(&short("dual_antenna_20mhz", 5e-4)).unwrap();
    let mut cfg = short("dual_antenna_20mhz", 5e-4);
    cfg.seed += 1;
    let b = run_scenario(&cfg).unwrap();
    assert_ne!(a.tx, b.tx);
    assert_eq!(a.tx.len(), b.tx.len());
}
