//! NED strapdown mechanization and its exact discrete inverse.
//!
//! Attitude is advanced by quaternion exponentials of the body and
//! navigation-frame rotation increments. Velocity uses Heun's (explicit
//! trapezoidal) rule and position the trapezoidal rule on NED velocity.
//! Coning and sculling corrections are not applied.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{invalid, Result};
use crate::geo::{
    attitude_to_euler, earth_radii, earth_rate_ned, euler_to_attitude, gravity, transport_rate,
    Attitude, GeodeticPosition, NedVector,
};
use crate::io::NavRecord;
use crate::sensors::{BiasState, ImuSample};

/// Latitude magnitude above which the transport rate is considered singular.
pub const MAX_LATITUDE: f64 = 89.5 * std::f64::consts::PI / 180.0;

/// Longest accepted mechanization step (s).
pub const MAX_STEP: f64 = 1.0;

/// Navigation solution at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub attitude: Attitude,
    /// NED velocity (m/s).
    pub velocity: NedVector,
    pub position: GeodeticPosition,
}

impl NavState {
    pub fn new(
        t: f64,
        attitude: Attitude,
        velocity: NedVector,
        position: GeodeticPosition,
    ) -> Self {
        Self {
            t,
            attitude,
            velocity,
            position,
        }
    }
}

impl From<&NavState> for NavRecord {
    fn from(s: &NavState) -> Self {
        let e = attitude_to_euler(&s.attitude);
        NavRecord {
            t: s.t,
            roll: e.roll,
            pitch: e.pitch,
            yaw: e.yaw,
            vn: s.velocity.x,
            ve: s.velocity.y,
            vd: s.velocity.z,
            lat: s.position.latitude,
            lon: s.position.longitude,
            h: s.position.height,
        }
    }
}

impl TryFrom<&NavRecord> for NavState {
    type Error = crate::error::Error;

    fn try_from(r: &NavRecord) -> Result<Self> {
        Ok(NavState::new(
            r.t,
            euler_to_attitude(r.roll, r.pitch, r.yaw)?,
            NedVector::new(r.vn, r.ve, r.vd),
            GeodeticPosition::new(r.lat, r.lon, r.h)?,
        ))
    }
}

/// Switches for the Earth model terms; the defaults enable everything.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarthModel {
    pub gravity: bool,
    pub earth_rotation: bool,
}

impl Default for EarthModel {
    fn default() -> Self {
        Self {
            gravity: true,
            earth_rotation: true,
        }
    }
}

impl EarthModel {
    fn gravity_ned(&self, p: &GeodeticPosition) -> NedVector {
        if self.gravity {
            NedVector::new(0.0, 0.0, gravity(p.latitude, p.height))
        } else {
            NedVector::zeros()
        }
    }

    fn earth_rate(&self, p: &GeodeticPosition) -> NedVector {
        if self.earth_rotation {
            earth_rate_ned(p.latitude)
        } else {
            NedVector::zeros()
        }
    }

    /// Navigation-frame acceleration `C f + g - (2 w_ie + w_en) x v`.
    fn acceleration(
        &self,
        c_b2n: &Matrix3<f64>,
        f_b: &Vector3<f64>,
        p: &GeodeticPosition,
        v: &NedVector,
    ) -> NedVector {
        let coriolis = (2.0 * self.earth_rate(p) + transport_rate(p, v)).cross(v);
        c_b2n * f_b + self.gravity_ned(p) - coriolis
    }
}

/// Subtracts the bias estimate from a raw sample.
pub fn correct_sample(raw: &ImuSample, bias_estimate: &BiasState) -> ImuSample {
    ImuSample::new(
        raw.t,
        raw.angular_rate - bias_estimate.gyro,
        raw.specific_force - bias_estimate.accel,
    )
}

/// Trapezoidal position update from the velocities at both ends of the step.
pub fn integrate_position(
    p: &GeodeticPosition,
    v0: &NedVector,
    v1: &NedVector,
    dt: f64,
) -> GeodeticPosition {
    let h1 = p.height - 0.5 * dt * (v0.z + v1.z);
    let (rm0, rn0) = earth_radii(p.latitude);
    let lat_pred = p.latitude + 0.5 * dt * (v0.x + v1.x) / (rm0 + p.height);
    let (rm1, _) = earth_radii(lat_pred);
    let lat1 = p.latitude + 0.5 * dt * (v0.x / (rm0 + p.height) + v1.x / (rm1 + h1));
    let (_, rn1) = earth_radii(lat1);
    let lon1 = p.longitude
        + 0.5
            * dt
            * (v0.y / ((rn0 + p.height) * p.latitude.cos()) + v1.y / ((rn1 + h1) * lat1.cos()));
    GeodeticPosition {
        latitude: lat1,
        longitude: crate::geo::wrap_angle(lon1),
        height: h1,
    }
}

fn check_step(state: &NavState, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return invalid(format!("mechanization step {dt} s outside (0, {MAX_STEP}]"));
    }
    if state.position.latitude.abs() > MAX_LATITUDE {
        return invalid(format!(
            "latitude {:.4} rad too close to the pole for NED mechanization",
            state.position.latitude
        ));
    }
    Ok(())
}

fn nav_rotation_rate(model: &EarthModel, state: &NavState) -> NedVector {
    model.earth_rate(&state.position) + transport_rate(&state.position, &state.velocity)
}

/// Advances the navigation state by one corrected IMU sample over `dt`.
pub fn mechanize_step(state: &NavState, sample: &ImuSample, dt: f64) -> Result<NavState> {
    mechanize_step_with(&EarthModel::default(), state, sample, dt)
}

/// [`mechanize_step`] with explicit Earth-model switches.
pub fn mechanize_step_with(
    model: &EarthModel,
    state: &NavState,
    sample: &ImuSample,
    dt: f64,
) -> Result<NavState> {
    check_step(state, dt)?;
    let w_in = nav_rotation_rate(model, state);
    let nav_rot = UnitQuaternion::from_scaled_axis(-w_in * dt);
    let body_rot = UnitQuaternion::from_scaled_axis(sample.angular_rate * dt);
    let attitude = state.attitude.compose(&nav_rot, &body_rot);

    let c0 = state.attitude.dcm();
    let c1 = attitude.dcm();
    let f = &sample.specific_force;
    let p0 = &state.position;
    let v0 = &state.velocity;
    let a0 = model.acceleration(&c0, f, p0, v0);
    let v_pred = v0 + a0 * dt;
    let p_pred = integrate_position(p0, v0, &v_pred, dt);
    let a1 = model.acceleration(&c1, f, &p_pred, &v_pred);
    let velocity = v0 + 0.5 * dt * (a0 + a1);
    let position = integrate_position(p0, v0, &velocity, dt);

    Ok(NavState {
        t: state.t + dt,
        attitude,
        velocity,
        position,
    })
}

/// Ideal IMU output of a body at rest: Earth rate and the gravity reaction.
pub fn stationary_imu(state: &NavState, t: f64) -> ImuSample {
    let p = &state.position;
    ImuSample::new(
        t,
        state.attitude.nav_to_body(&earth_rate_ned(p.latitude)),
        state
            .attitude
            .nav_to_body(&NedVector::new(0.0, 0.0, -gravity(p.latitude, p.height))),
    )
}

/// Computes, for every interval of a uniformly sampled truth sequence, the
/// sample that makes [`mechanize_step`] land exactly on the next truth state.
/// Output sample `k` is stamped with the end time of interval `k`, so `n`
/// truth states produce `n - 1` samples.
pub fn inverse_mechanize(truth: &[NavState]) -> Result<Vec<ImuSample>> {
    if truth.len() < 2 {
        return Ok(Vec::new());
    }
    let dt = (truth[truth.len() - 1].t - truth[0].t) / (truth.len() - 1) as f64;
    if !(dt > 0.0) {
        return invalid("truth timestamps must increase");
    }
    if truth
        .windows(2)
        .any(|w| ((w[1].t - w[0].t) - dt).abs() > 1e-6 * dt)
    {
        return invalid("truth sequence is not uniformly sampled");
    }
    let model = EarthModel::default();
    truth
        .windows(2)
        .map(|w| {
            let (s0, s1) = (&w[0], &w[1]);
            let step = s1.t - s0.t;
            check_step(s0, step)?;

            let w_in = nav_rotation_rate(&model, s0);
            let nav_rot = UnitQuaternion::from_scaled_axis(w_in * step);
            let body_rot = s0.attitude.quaternion().inverse() * nav_rot * s1.attitude.quaternion();
            let angular_rate = body_rot.scaled_axis() / step;

            let c0 = s0.attitude.dcm();
            let c1 = s1.attitude.dcm();
            let c_sum_inv = (c0 + c1)
                .try_inverse()
                .ok_or_else(|| crate::Error::InvalidInput("attitude step too large".into()))?;
            let (p0, v0, v1) = (&s0.position, &s0.velocity, &s1.velocity);
            let target = 2.0 * (v1 - v0) / step;
            let rest0 = model.acceleration(&c0, &Vector3::zeros(), p0, v0);
            // The predictor term depends weakly on f; a few fixed-point passes converge.
            let mut f = c_sum_inv * (target - 2.0 * rest0);
            for _ in 0..6 {
                let a0 = c0 * f + rest0;
                let v_pred = v0 + a0 * step;
                let p_pred = integrate_position(p0, v0, &v_pred, step);
                let rest1 = model.acceleration(&c1, &Vector3::zeros(), &p_pred, &v_pred);
                f = c_sum_inv * (target - rest0 - rest1);
            }
            Ok(ImuSample::new(s1.t, angular_rate, f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::euler_to_attitude;

    fn rest_state() -> NavState {
        NavState::new(
            0.0,
            euler_to_attitude(-0.0068, 0.0418, 1.2234).unwrap(),
            NedVector::zeros(),
            GeodeticPosition::new(0.65, 2.21, 35.0).unwrap(),
        )
    }

    #[test]
    fn correct_sample_behaviour() {
        let raw = ImuSample::new(
            1.0,
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        assert_eq!(correct_sample(&raw, &BiasState::zero()), raw);
        let b1 = BiasState::new(Vector3::new(0.01, 0.0, -0.02), Vector3::new(0.1, 0.2, 0.3));
        let b2 = BiasState::new(
            Vector3::new(-0.03, 0.04, 0.0),
            Vector3::new(-0.5, 0.0, 0.25),
        );
        let once = correct_sample(&raw, &(b1 + b2));
        let twice = correct_sample(&correct_sample(&raw, &b1), &b2);
        assert!((once.angular_rate - twice.angular_rate).amax() < 1e-15);
        assert!((once.specific_force - twice.specific_force).amax() < 1e-15);
    }

    #[test]
    fn stationary_fixed_point() {
        let mut s = rest_state();
        let s0 = s;
        let dt = 0.01;
        for k in 1..=1000 {
            let imu = stationary_imu(&s0, k as f64 * dt);
            let next = mechanize_step(&s, &imu, dt).unwrap();
            assert!(next.velocity.amax() < 1e-9);
            assert!((next.position.latitude - s.position.latitude).abs() < 1e-9 / 6.4e6);
            assert!((next.position.height - s.position.height).abs() < 1e-9);
            assert!(next.attitude.quaternion().angle_to(s.attitude.quaternion()) < 1e-9);
            s = next;
        }
    }

    #[test]
    fn zero_force_without_gravity_is_constant() {
        let model = EarthModel {
            gravity: false,
            earth_rotation: false,
        };
        let s = rest_state();
        let imu = ImuSample::new(0.01, Vector3::zeros(), Vector3::zeros());
        let mut cur = s;
        for _ in 0..1000 {
            cur = mechanize_step_with(&model, &cur, &imu, 0.01).unwrap();
        }
        assert_eq!(cur.attitude, s.attitude);
        assert_eq!(cur.velocity, s.velocity);
        assert_eq!(cur.position, s.position);
    }

    #[test]
    fn tiny_step_is_near_identity() {
        let s = rest_state();
        let imu = ImuSample::new(
            0.0,
            Vector3::new(0.1, 0.2, 0.3),
            Vector3::new(1.0, 2.0, -9.0),
        );
        let next = mechanize_step(&s, &imu, 1e-12).unwrap();
        assert!(next.velocity.amax() < 1e-10);
        assert!(next.attitude.quaternion().angle_to(s.attitude.quaternion()) < 1e-11);
    }

    #[test]
    fn bad_steps_rejected() {
        let s = rest_state();
        let imu = stationary_imu(&s, 0.0);
        assert!(mechanize_step(&s, &imu, 0.0).is_err());
        assert!(mechanize_step(&s, &imu, 2.0).is_err());
        let mut polar = s;
        polar.position.latitude = 1.5699;
        assert!(mechanize_step(&polar, &imu, 0.01).is_err());
    }

    #[test]
    fn inverse_of_stationary_truth() {
        let s = rest_state();
        let truth: Vec<NavState> = (0..50)
            .map(|k| NavState {
                t: k as f64 * 0.01,
                ..s
            })
            .collect();
        let imu = inverse_mechanize(&truth).unwrap();
        assert_eq!(imu.len(), 49);
        let expected = stationary_imu(&s, 0.0);
        for sample in &imu {
            assert!((sample.angular_rate - expected.angular_rate).amax() < 1e-12);
            assert!((sample.specific_force - expected.specific_force).amax() < 1e-9);
        }
        assert!(inverse_mechanize(&[]).unwrap().is_empty());
    }

    #[test]
    fn non_uniform_truth_rejected() {
        let s = rest_state();
        let truth = vec![
            NavState { t: 0.0, ..s },
            NavState { t: 0.01, ..s },
            NavState { t: 0.03, ..s },
        ];
        assert!(inverse_mechanize(&truth).is_err());
    }

    #[test]
    fn constant_velocity_north_round_trip() {
        let dt = 0.01;
        let v = NedVector::new(5.0, 0.0, 0.0);
        let mut truth = vec![NavState::new(
            0.0,
            euler_to_attitude(0.0, 0.0, 0.0).unwrap(),
            v,
            GeodeticPosition::new(0.65, 2.21, 35.0).unwrap(),
        )];
        for k in 1..=6000 {
            let prev = truth[k - 1];
            truth.push(NavState {
                t: k as f64 * dt,
                position: integrate_position(&prev.position, &v, &v, dt),
                ..prev
            });
        }
        let imu = inverse_mechanize(&truth).unwrap();
        let mut s = truth[0];
        for sample in &imu {
            s = mechanize_step(&s, sample, dt).unwrap();
        }
        let end = truth.last().unwrap();
        let err = crate::geo::geodetic_difference_ned(&s.position, &end.position);
        assert!(err.norm() < 1e-3, "position error {err}");
    }

    #[test]
    fn attitude_norm_long_run() {
        let mut s = rest_state();
        let imu = ImuSample::new(
            0.0,
            Vector3::new(0.3, -0.2, 0.5),
            s.attitude.nav_to_body(&NedVector::new(0.0, 0.0, -9.8)),
        );
        for _ in 0..100_000 {
            s = mechanize_step_with(
                &EarthModel {
                    gravity: false,
                    earth_rotation: true,
                },
                &NavState {
                    velocity: NedVector::zeros(),
                    ..s
                },
                &imu,
                0.01,
            )
            .unwrap();
        }
        assert!((s.attitude.quaternion().norm() - 1.0).abs() < 1e-9);
    }
}
