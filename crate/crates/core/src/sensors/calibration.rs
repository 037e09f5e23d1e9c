//! Noise-parameter identification from static logs.
//!
//! The Allan variance of white noise plus a first-order Gauss-Markov process
//! is linear in the two unknown intensities once the correlation time is
//! fixed, so the fit scans the correlation-time grid and solves a small
//! weighted least-squares problem at each candidate.

use rayon::prelude::*;

use super::allan::{allan_deviation, log_cluster_times, AllanPoint};
use super::{validate_stream, AxisNoiseParams, ImuSample, SensorParams};
use crate::error::{invalid, Error, Result};

/// Candidate correlation times (s): 1, 2, 3, 5 per decade.
pub const CORRELATION_TIME_GRID: [f64; 20] = [
    1.0, 2.0, 3.0, 5.0, 10.0, 20.0, 30.0, 50.0, 100.0, 200.0, 300.0, 500.0, 1000.0, 2000.0, 3000.0,
    5000.0, 10_000.0, 20_000.0, 30_000.0, 50_000.0,
];

/// Minimum static log duration (s).
pub const MIN_CALIBRATION_DURATION: f64 = 1800.0;

/// Allan points per decade of cluster time.
pub const CLUSTER_POINTS_PER_DECADE: usize = 30;

/// Result of fitting `N^2 / tau + q * GM(tau; T)` to an Allan curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllanFit {
    pub white_density: f64,
    pub gm_psd: f64,
    pub correlation_time: f64,
    /// Weighted sum of squared relative residuals.
    pub residual: f64,
}

/// Allan variance of a Gauss-Markov process with unit driving density and
/// correlation time `t`, evaluated at cluster time `tau`.
pub(crate) fn gm_unit_avar(tau: f64, t: f64) -> f64 {
    let x = tau / t;
    let bracket = if x < 0.1 {
        // 1 - (3 - 4e^-x + e^-2x) / (2x), expanded to avoid cancellation
        let mut sum = 0.0;
        let mut fact = 1.0;
        let mut pow_x = 1.0;
        for n in 1..=20u32 {
            fact *= n as f64;
            pow_x *= x;
            if n >= 3 {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sum -= sign * (2f64.powi(n as i32) - 4.0) * pow_x / (2.0 * x * fact);
            }
        }
        sum
    } else {
        1.0 - (-4.0 * (-x).exp_m1() + (-2.0 * x).exp_m1()) / (2.0 * x)
    };
    t * t / tau * bracket
}

fn solve_nonneg(rows: &[(f64, f64, f64)]) -> (f64, f64, f64) {
    // rows: (white basis, gm basis, weight) already divided by the measurement
    let ssr = |a: f64, q: f64| -> f64 {
        rows.iter()
            .map(|(w, g, s)| {
                let r = (a * w + q * g - 1.0) * s;
                r * r
            })
            .sum()
    };
    let (mut sww, mut swg, mut sgg, mut sw1, mut sg1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(w, g, s) in rows {
        let s2 = s * s;
        sww += w * w * s2;
        swg += w * g * s2;
        sgg += g * g * s2;
        sw1 += w * s2;
        sg1 += g * s2;
    }
    let mut best = (0.0, 0.0, ssr(0.0, 0.0));
    let det = sww * sgg - swg * swg;
    if det.abs() > 0.0 {
        let a = (sw1 * sgg - sg1 * swg) / det;
        let q = (sg1 * sww - sw1 * swg) / det;
        if a >= 0.0 && q >= 0.0 {
            let r = ssr(a, q);
            if r < best.2 {
                best = (a, q, r);
            }
        }
    }
    if sww > 0.0 {
        let a = (sw1 / sww).max(0.0);
        let r = ssr(a, 0.0);
        if r < best.2 {
            best = (a, 0.0, r);
        }
    }
    if sgg > 0.0 {
        let q = (sg1 / sgg).max(0.0);
        let r = ssr(0.0, q);
        if r < best.2 {
            best = (0.0, q, r);
        }
    }
    best
}

/// Fits white noise plus a Gauss-Markov process to an Allan curve, scanning
/// [`CORRELATION_TIME_GRID`]. `series_len` sets the per-point weights
/// (relative precision of each Allan estimate scales with `sqrt(len / m)`).
pub fn fit_allan_model(points: &[AllanPoint], sample_rate: f64, series_len: usize) -> AllanFit {
    let usable: Vec<&AllanPoint> = points.iter().filter(|p| p.deviation > 0.0).collect();
    if usable.is_empty() {
        return AllanFit {
            white_density: 0.0,
            gm_psd: 0.0,
            correlation_time: CORRELATION_TIME_GRID[0],
            residual: 0.0,
        };
    }
    let mut best: Option<AllanFit> = None;
    for &t in &CORRELATION_TIME_GRID {
        let rows: Vec<(f64, f64, f64)> = usable
            .iter()
            .map(|p| {
                let y = p.variance();
                let m = (p.cluster_time * sample_rate).max(1.0);
                let weight = (series_len as f64 / m).sqrt();
                (
                    1.0 / p.cluster_time / y,
                    gm_unit_avar(p.cluster_time, t) / y,
                    weight,
                )
            })
            .collect();
        let (a, q, r) = solve_nonneg(&rows);
        if best.is_none_or(|b| r < b.residual) {
            best = Some(AllanFit {
                white_density: a.sqrt(),
                gm_psd: q.sqrt(),
                correlation_time: t,
                residual: r,
            });
        }
    }
    best.expect("grid is non-empty")
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Split-halves mean-shift test at 5 sigma, sigma being the pooled
/// within-half sample deviation.
pub(crate) fn check_stationary(series: &[f64], label: &str) -> Result<()> {
    let half = series.len() / 2;
    let (m1, s1) = mean_std(&series[..half]);
    let (m2, s2) = mean_std(&series[half..]);
    let std = (0.5 * (s1 * s1 + s2 * s2)).sqrt();
    let shift = (m1 - m2).abs();
    if shift > 5.0 * std + 1e-12 * m1.abs().max(1.0) {
        return Err(Error::NotStationary(format!(
            "{label}: half means differ by {shift:e} (within-half sigma {std:e})"
        )));
    }
    Ok(())
}

/// Uniform sample rate of a stream, or an error if spacing varies by more than 1%.
pub(crate) fn uniform_rate(log: &[ImuSample]) -> Result<f64> {
    if log.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            actual: log.len(),
        });
    }
    let duration = log[log.len() - 1].t - log[0].t;
    let dt = duration / (log.len() - 1) as f64;
    if log
        .windows(2)
        .any(|w| ((w[1].t - w[0].t) - dt).abs() > 0.01 * dt)
    {
        return invalid("IMU log is not uniformly sampled");
    }
    Ok(1.0 / dt)
}

fn estimate_axis(series: &[f64], rate: f64) -> AxisNoiseParams {
    let taus = log_cluster_times(series.len(), rate, CLUSTER_POINTS_PER_DECADE);
    let points = allan_deviation(series, rate, &taus).expect("grid respects series length");
    let fit = fit_allan_model(&points, rate, series.len());
    let (mean, _) = mean_std(series);
    let tau = fit.correlation_time;
    // sigma is derived so that psd = sigma * sqrt(tau) / 2 holds by construction
    AxisNoiseParams::new(
        fit.white_density,
        mean,
        2.0 * fit.gm_psd / tau.sqrt(),
        fit.gm_psd,
        tau,
    )
}

/// Identifies the noise model from a stationary log of at least 30 minutes.
///
/// Static biases are the raw channel means; an accelerometer axis aligned
/// with gravity therefore reports a value near `gravity_hint` in magnitude.
pub fn estimate_params(static_log: &[ImuSample], gravity_hint: f64) -> Result<SensorParams> {
    validate_stream(static_log)?;
    let rate = uniform_rate(static_log)?;
    let duration = static_log[static_log.len() - 1].t - static_log[0].t;
    if duration < MIN_CALIBRATION_DURATION {
        return invalid(format!(
            "calibration log lasts {duration:.1} s, need at least {MIN_CALIBRATION_DURATION} s"
        ));
    }

    let channels: Vec<Vec<f64>> = (0..6)
        .map(|c| {
            static_log
                .iter()
                .map(|s| {
                    if c < 3 {
                        s.angular_rate[c]
                    } else {
                        s.specific_force[c - 3]
                    }
                })
                .collect()
        })
        .collect();
    const LABELS: [&str; 6] = [
        "gyro.x", "gyro.y", "gyro.z", "accel.x", "accel.y", "accel.z",
    ];
    for (series, label) in channels.iter().zip(LABELS) {
        check_stationary(series, label)?;
    }
    if gravity_hint > 0.0 {
        let f = nalgebra::Vector3::from_fn(|i, _| mean_std(&channels[3 + i]).0);
        let ratio = f.norm() / gravity_hint;
        if !(0.5..=1.5).contains(&ratio) {
            return Err(Error::NotStationary(format!(
                "mean specific force {:.3} m/s^2 is not close to gravity {gravity_hint:.3}",
                f.norm()
            )));
        }
    }

    let axes: Vec<AxisNoiseParams> = channels
        .par_iter()
        .map(|series| estimate_axis(series, rate))
        .collect();
    let params = SensorParams {
        gyro: [axes[0], axes[1], axes[2]],
        accel: [axes[3], axes[4], axes[5]],
    };
    params.validate()?;
    Ok(params)
}
