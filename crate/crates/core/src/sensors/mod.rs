//! Stochastic IMU error model and synthetic measurement corruption.
//!
//! Each axis carries white noise (random-walk density), a constant static
//! bias and a first-order Gauss-Markov dynamic bias. The Gauss-Markov state
//! is driven by white noise whose density is `dynamic_bias_psd`, and the
//! per-axis parameters satisfy `psd = sigma * sqrt(tau) / 2`.

mod allan;
mod calibration;

pub use allan::{allan_deviation, log_cluster_times, AllanPoint};
pub(crate) use calibration::check_stationary;
pub use calibration::{estimate_params, fit_allan_model, AllanFit, CORRELATION_TIME_GRID};

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::io::{ImuRecord, KeyValues};

/// Noise parameters of one sensor axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisNoiseParams {
    /// White-noise density, (rad/s)/sqrt(Hz) or (m/s^2)/sqrt(Hz).
    pub random_walk_density: f64,
    /// Constant bias, rad/s or m/s^2.
    pub static_bias: f64,
    /// Dynamic (bias-instability) level, rad/s or m/s^2.
    pub dynamic_bias_sigma: f64,
    /// Density of the white noise driving the Gauss-Markov bias.
    pub dynamic_bias_psd: f64,
    /// Gauss-Markov correlation time (s).
    pub correlation_time: f64,
}

impl AxisNoiseParams {
    pub const fn new(
        random_walk_density: f64,
        static_bias: f64,
        dynamic_bias_sigma: f64,
        dynamic_bias_psd: f64,
        correlation_time: f64,
    ) -> Self {
        Self {
            random_walk_density,
            static_bias,
            dynamic_bias_sigma,
            dynamic_bias_psd,
            correlation_time,
        }
    }

    /// A noiseless axis. Correlation time stays positive so the model remains valid.
    pub const fn noiseless() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.random_walk_density,
            self.dynamic_bias_sigma,
            self.dynamic_bias_psd,
        ];
        if nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) || !self.static_bias.is_finite() {
            return invalid(format!(
                "noise densities must be finite and non-negative: {self:?}"
            ));
        }
        if !(self.correlation_time > 0.0) {
            return invalid(format!(
                "correlation time must be positive, got {}",
                self.correlation_time
            ));
        }
        Ok(())
    }

    /// Stationary standard deviation of the Gauss-Markov bias, `psd * sqrt(tau / 2)`.
    pub fn gm_stationary_sigma(&self) -> f64 {
        self.dynamic_bias_psd * (0.5 * self.correlation_time).sqrt()
    }

    /// `sigma * sqrt(tau) / 2`, the PSD implied by the dynamic-bias level.
    pub fn psd_from_sigma(&self) -> f64 {
        self.dynamic_bias_sigma * self.correlation_time.sqrt() / 2.0
    }
}

/// Gyroscope and accelerometer noise parameters, three axes each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorParams {
    pub gyro: [AxisNoiseParams; 3],
    pub accel: [AxisNoiseParams; 3],
}

const AXES: [&str; 3] = ["x", "y", "z"];
const FIELDS: [&str; 5] = [
    "random_walk_density",
    "static_bias",
    "dynamic_bias_sigma",
    "dynamic_bias_psd",
    "correlation_time",
];

impl SensorParams {
    /// Characterization of a consumer smartphone IMU from a two-hour static log.
    pub const fn consumer_grade() -> Self {
        Self {
            gyro: [
                AxisNoiseParams::new(7.1242e-6, -5.7265e-6, 2.0040e-7, 3.1686e-6, 1000.0),
                AxisNoiseParams::new(5.9828e-6, -5.2920e-6, 1.9759e-7, 3.1241e-6, 1000.0),
                AxisNoiseParams::new(5.7239e-6, 5.2511e-6, 2.1179e-7, 3.3487e-6, 1000.0),
            ],
            accel: [
                AxisNoiseParams::new(0.0013, 0.1280, 0.0011, 0.0030, 30.0),
                AxisNoiseParams::new(0.0024, 0.0095, 0.0018, 0.0128, 200.0),
                AxisNoiseParams::new(0.0030, 9.7601, 0.0016, 0.0135, 300.0),
            ],
        }
    }

    pub const fn noiseless() -> Self {
        Self {
            gyro: [AxisNoiseParams::noiseless(); 3],
            accel: [AxisNoiseParams::noiseless(); 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gyro
            .iter()
            .chain(self.accel.iter())
            .try_for_each(|a| a.validate())
    }

    /// Copy with the static biases zeroed.
    pub fn without_static_bias(&self) -> Self {
        let mut p = *self;
        p.gyro
            .iter_mut()
            .chain(p.accel.iter_mut())
            .for_each(|a| a.static_bias = 0.0);
        p
    }

    /// Copy with only white noise kept (no static or dynamic bias).
    pub fn white_noise_only(&self) -> Self {
        let mut p = *self;
        for a in p.gyro.iter_mut().chain(p.accel.iter_mut()) {
            a.static_bias = 0.0;
            a.dynamic_bias_sigma = 0.0;
            a.dynamic_bias_psd = 0.0;
        }
        p
    }

    /// Copy in which accelerometer static biases that carry the gravity
    /// reaction (magnitude within [0.5 g, 1.5 g]) have `g` removed, leaving
    /// the residual sensor bias.
    pub fn gravity_compensated(&self, gravity_hint: f64) -> Self {
        let mut p = *self;
        for a in p.accel.iter_mut() {
            a.static_bias = compensate_gravity(a.static_bias, gravity_hint);
        }
        p
    }

    pub fn gyro_static_bias(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.gyro[i].static_bias)
    }

    pub fn accel_static_bias(&self) -> Vector3<f64> {
        Vector3::from_fn(|i, _| self.accel[i].static_bias)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        for (sensor, axes) in [("gyro", &self.gyro), ("accel", &self.accel)] {
            for (axis, p) in AXES.iter().zip(axes.iter()) {
                let values = [
                    p.random_walk_density,
                    p.static_bias,
                    p.dynamic_bias_sigma,
                    p.dynamic_bias_psd,
                    p.correlation_time,
                ];
                for (field, v) in FIELDS.iter().zip(values) {
                    kv.set(format!("{sensor}.{axis}.{field}"), v);
                }
            }
        }
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut p = Self::noiseless();
        for (sensor, axes) in [("gyro", &mut p.gyro), ("accel", &mut p.accel)] {
            for (axis, a) in AXES.iter().zip(axes.iter_mut()) {
                let get = |field: &str| kv.f64(&format!("{sensor}.{axis}.{field}"));
                *a = AxisNoiseParams::new(
                    get(FIELDS[0])?,
                    get(FIELDS[1])?,
                    get(FIELDS[2])?,
                    get(FIELDS[3])?,
                    get(FIELDS[4])?,
                );
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Removes the gravity reaction from a bias reading when it clearly contains one.
pub fn compensate_gravity(static_bias: f64, gravity_hint: f64) -> f64 {
    let m = static_bias.abs();
    if gravity_hint > 0.0 && m >= 0.5 * gravity_hint && m <= 1.5 * gravity_hint {
        static_bias - static_bias.signum() * gravity_hint
    } else {
        static_bias
    }
}

/// Dynamic (Gauss-Markov) part of the sensor biases.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiasState {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl BiasState {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }
}

impl std::ops::Add for BiasState {
    type Output = BiasState;
    fn add(self, rhs: BiasState) -> BiasState {
        BiasState::new(self.gyro + rhs.gyro, self.accel + rhs.accel)
    }
}

/// One IMU epoch. The sample at time `t` integrates over the interval ending at `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// rad/s, body frame.
    pub angular_rate: Vector3<f64>,
    /// m/s^2, body frame.
    pub specific_force: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, angular_rate: Vector3<f64>, specific_force: Vector3<f64>) -> Self {
        Self {
            t,
            angular_rate,
            specific_force,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.angular_rate.iter().all(|v| v.is_finite())
            && self.specific_force.iter().all(|v| v.is_finite())
    }
}

impl From<&ImuRecord> for ImuSample {
    fn from(r: &ImuRecord) -> Self {
        ImuSample::new(
            r.t,
            Vector3::new(r.gx, r.gy, r.gz),
            Vector3::new(r.ax, r.ay, r.az),
        )
    }
}

impl From<&ImuSample> for ImuRecord {
    fn from(s: &ImuSample) -> Self {
        ImuRecord {
            t: s.t,
            gx: s.angular_rate.x,
            gy: s.angular_rate.y,
            gz: s.angular_rate.z,
            ax: s.specific_force.x,
            ay: s.specific_force.y,
            az: s.specific_force.z,
        }
    }
}

/// Checks that a stream is finite with strictly increasing timestamps.
pub fn validate_stream(samples: &[ImuSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if !s.is_finite() {
            return invalid(format!("IMU sample {i} is not finite"));
        }
        if i > 0 && s.t <= samples[i - 1].t {
            return invalid(format!(
                "IMU timestamps not strictly increasing at sample {i}"
            ));
        }
    }
    Ok(())
}

/// Discrete first-order Gauss-Markov coefficients for step `dt`:
/// `phi = exp(-dt / tau)`, driving variance `q = psd^2 * dt`.
pub fn gm_discretize(correlation_time: f64, psd: f64, dt: f64) -> Result<(f64, f64)> {
    if !(correlation_time > 0.0) || !(dt > 0.0) {
        return invalid(format!(
            "Gauss-Markov discretization needs tau > 0 and dt > 0 (tau = {correlation_time}, dt = {dt})"
        ));
    }
    Ok(((-dt / correlation_time).exp(), psd * psd * dt))
}

fn gm_step(b: f64, axis: &AxisNoiseParams, dt: f64, rng: &mut impl Rng) -> Result<f64> {
    let (phi, q) = gm_discretize(axis.correlation_time, axis.dynamic_bias_psd, dt)?;
    let n: f64 = rng.sample(StandardNormal);
    Ok(phi * b + q.sqrt() * n)
}

/// Advances every dynamic bias by one Gauss-Markov step.
pub fn step_bias(
    state: &BiasState,
    params: &SensorParams,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<BiasState> {
    let mut next = *state;
    for i in 0..3 {
        next.gyro[i] = gm_step(state.gyro[i], &params.gyro[i], dt, rng)?;
    }
    for i in 0..3 {
        next.accel[i] = gm_step(state.accel[i], &params.accel[i], dt, rng)?;
    }
    Ok(next)
}

/// Produces a measured sample from true rate and specific force:
/// `true + static bias + dynamic bias + white noise`, the white noise
/// having per-sample sigma `density / sqrt(dt)`. Returns the advanced bias.
///
/// Static biases are applied as given; use
/// [`SensorParams::gravity_compensated`] first when a bias entry still
/// carries the gravity reaction.
pub fn corrupt_imu(
    t: f64,
    true_rate: &Vector3<f64>,
    true_specific_force: &Vector3<f64>,
    params: &SensorParams,
    bias: &BiasState,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<(ImuSample, BiasState)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidInput(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let sdt = dt.sqrt();
    let mut rate = *true_rate;
    let mut sf = *true_specific_force;
    for i in 0..3 {
        let n: f64 = rng.sample(StandardNormal);
        let g = &params.gyro[i];
        rate[i] += g.static_bias + bias.gyro[i] + g.random_walk_density / sdt * n;
    }
    for i in 0..3 {
        let n: f64 = rng.sample(StandardNormal);
        let a = &params.accel[i];
        sf[i] += a.static_bias + bias.accel[i] + a.random_walk_density / sdt * n;
    }
    let next = step_bias(bias, params, dt, rng)?;
    Ok((ImuSample::new(t, rate, sf), next))
}
