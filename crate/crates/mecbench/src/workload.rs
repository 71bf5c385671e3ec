//! Calibrated synthetic compute load. Stands in for the model-inference
//! cost so the edge/cloud capacity gap is reproducible on one host.

use std::hint::black_box;
use std::time::Instant;

use thiserror::Error;

/// Iterations of the arithmetic kernel timed by one calibration probe.
const CALIBRATION_ITERS: u64 = 2_000_000;

#[derive(Debug, Clone, Copy)]
pub struct WorkloadProfile {
    /// Synthetic compute per request, milliseconds.
    pub target_service_ms: f64,
    /// Kernel iterations per millisecond, measured at startup; 0 until
    /// calibrated.
    pub calibration: f64,
}

impl WorkloadProfile {
    pub fn new(target_service_ms: f64) -> Self {
        WorkloadProfile { target_service_ms, calibration: 0.0 }
    }
}

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("calibration unstable: measurements {0:?} iters/ms differ by more than 50%")]
    CalibrationUnstable([f64; 3]),
}

/// Side-effect-free arithmetic kernel.
fn kernel(iters: u64) -> u64 {
    let mut acc: u64 = 0x9e3779b97f4a7c15;
    for i in 0..iters {
        acc = acc.wrapping_mul(6364136223846793005).wrapping_add(i);
        acc ^= acc >> 29;
    }
    black_box(acc)
}

fn probe_iters_per_ms() -> f64 {
    let start = Instant::now();
    kernel(CALIBRATION_ITERS);
    let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
    CALIBRATION_ITERS as f64 / elapsed_ms.max(1e-6)
}

/// Warms the CPU to steady state, then times the kernel three times and
/// sets the iterations-per-millisecond factor, rejecting noisy hosts.
pub fn calibrate(profile: WorkloadProfile) -> Result<WorkloadProfile, WorkloadError> {
    // frequency-scaling governors ramp over hundreds of ms; spin until
    // the clock says we are past that
    let warm_until = Instant::now() + std::time::Duration::from_millis(300);
    while Instant::now() < warm_until {
        kernel(CALIBRATION_ITERS / 4);
    }
    calibrate_with(profile, probe_iters_per_ms)
}

/// Calibration with an injectable measurement probe (tests use this to
/// force the unstable path). A transiently noisy round is retried; the
/// host is rejected only after five divergent rounds.
pub fn calibrate_with(
    mut profile: WorkloadProfile,
    mut probe: impl FnMut() -> f64,
) -> Result<WorkloadProfile, WorkloadError> {
    // warm-up probe, discarded
    probe();
    let mut last = [0.0; 3];
    for _round in 0..5 {
        let m = [probe(), probe(), probe()];
        last = m;
        let stable = (0..3).all(|i| {
            (i + 1..3).all(|j| {
                let (lo, hi) = (m[i].min(m[j]), m[i].max(m[j]));
                hi <= lo * 1.5
            })
        });
        if stable {
            profile.calibration = (m[0] + m[1] + m[2]) / 3.0;
            return Ok(profile);
        }
    }
    Err(WorkloadError::CalibrationUnstable(last))
}

/// Spins the kernel until `target_service_ms` of wall time has elapsed;
/// returns the measured elapsed milliseconds. The calibration factor
/// sizes the work block between clock checks (~0.05 ms).
pub fn synth_load(profile: &WorkloadProfile) -> f64 {
    let start = Instant::now();
    if profile.target_service_ms <= 0.0 {
        return start.elapsed().as_secs_f64() * 1000.0;
    }
    debug_assert!(profile.calibration > 0.0, "profile must be calibrated");
    let block = ((profile.calibration * 0.05) as u64).max(1_000);
    loop {
        let elapsed_ms = start.elapsed().as_secs_f64() * 1000.0;
        if elapsed_ms >= profile.target_service_ms {
            return elapsed_ms;
        }
        kernel(block);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calibrated(target_ms: f64) -> WorkloadProfile {
        calibrate(WorkloadProfile::new(target_ms)).expect("idle host calibrates")
    }

    #[test]
    fn zero_target_is_nearly_free() {
        let profile = calibrated(0.0);
        let elapsed = synth_load(&profile);
        assert!((0.0..2.0).contains(&elapsed), "elapsed {elapsed}");
    }

    #[test]
    fn hits_target_within_tolerance() {
        let profile = calibrated(54.2);
        let elapsed = synth_load(&profile);
        assert!(elapsed >= 54.2, "elapsed {elapsed}");
        assert!(elapsed <= 54.2 * 1.25, "elapsed {elapsed}");
    }

    #[test]
    fn longer_target() {
        let profile = calibrated(164.7);
        let elapsed = synth_load(&profile);
        assert!(elapsed >= 164.7 && elapsed <= 164.7 * 1.25, "elapsed {elapsed}");
    }

    #[test]
    fn repeated_calibrations_agree() {
        let a = calibrated(0.0).calibration;
        let b = calibrated(0.0).calibration;
        assert!(a > 0.0 && b > 0.0);
        let ratio = a / b;
        assert!((0.8..=1.25).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn injected_jitter_is_unstable() {
        let mut values = [1000.0, 1000.0, 5000.0].iter().cycle();
        let err = calibrate_with(WorkloadProfile::new(1.0), move || *values.next().unwrap());
        assert!(matches!(err, Err(WorkloadError::CalibrationUnstable(_))));
    }
}
