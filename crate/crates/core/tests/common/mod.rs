//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gnss_ins::ekf::{
    build_h, ErrorState, FilterState, LinearModel, MeasMatrix, MeasVector, NoiseMatrix,
    ObservationMatrix, StateMatrix, StateVector,
};
use gnss_ins::geo::{
    earth_radii, euler_to_attitude, gravity, Attitude, GeodeticPosition, NedVector,
};
use gnss_ins::sensors::{ImuSample, SensorParams};
use gnss_ins::strapdown::{mechanize_step, NavState};
use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Estimate obtained from `truth` by the error `dx` (attitude, velocity,
/// position blocks; biases are handled by the caller).
pub fn perturb(truth: &NavState, dx: &StateVector) -> NavState {
    let psi = dx.fixed_rows::<3>(0).into_owned();
    let q = UnitQuaternion::from_scaled_axis(-psi) * truth.attitude.quaternion();
    let p = &truth.position;
    let (rm, rn) = earth_radii(p.latitude);
    NavState {
        t: truth.t,
        attitude: Attitude::from_quaternion(q.into_inner()).unwrap(),
        velocity: truth.velocity + dx.fixed_rows::<3>(3),
        position: GeodeticPosition {
            latitude: p.latitude + dx[6] / (rm + p.height),
            longitude: p.longitude + dx[7] / ((rn + p.height) * p.latitude.cos()),
            height: p.height - dx[8],
        },
    }
}

/// Attitude, velocity and position error of `est` relative to `truth`,
/// position linearized at `truth`.
pub fn nav_error(est: &NavState, truth: &NavState) -> [Vector3<f64>; 3] {
    let dq = est.attitude.quaternion() * truth.attitude.quaternion().inverse();
    let p = &truth.position;
    let (rm, rn) = earth_radii(p.latitude);
    [
        -dq.scaled_axis(),
        est.velocity - truth.velocity,
        NedVector::new(
            (est.position.latitude - p.latitude) * (rm + p.height),
            (est.position.longitude - p.longitude) * (rn + p.height) * p.latitude.cos(),
            -(est.position.height - p.height),
        ),
    ]
}

/// Perturbation sizes per error block.
const STEPS: [f64; 5] = [1e-2, 1.0, 1e4, 1e-3, 1e-1];

/// One-step transition of the error state, by central differences of two
/// nonlinear mechanization steps.
pub fn finite_difference_transition(
    truth: &NavState,
    sample: &ImuSample,
    params: &SensorParams,
    dt: f64,
) -> StateMatrix {
    let nominal = mechanize_step(truth, sample, dt).unwrap();
    let taus: Vec<f64> = params
        .gyro
        .iter()
        .chain(params.accel.iter())
        .map(|a| a.correlation_time)
        .collect();
    let mut phi = StateMatrix::zeros();
    for j in 0..15 {
        let eps = STEPS[j / 3];
        let mut col = StateVector::zeros();
        for sign in [1.0, -1.0] {
            let mut dx = StateVector::zeros();
            dx[j] = sign * eps;
            let est = perturb(truth, &dx);
            let s = ImuSample::new(
                sample.t,
                sample.angular_rate + dx.fixed_rows::<3>(9),
                sample.specific_force + dx.fixed_rows::<3>(12),
            );
            let next = mechanize_step(&est, &s, dt).unwrap();
            let [a, v, r] = nav_error(&next, &nominal);
            let mut out = StateVector::zeros();
            out.fixed_rows_mut::<3>(0).copy_from(&a);
            out.fixed_rows_mut::<3>(3).copy_from(&v);
            out.fixed_rows_mut::<3>(6).copy_from(&r);
            for i in 0..6 {
                out[9 + i] = dx[9 + i] * (-dt / taus[i]).exp();
            }
            col += sign * out;
        }
        phi.set_column(j, &(col / (2.0 * eps)));
    }
    phi
}

/// Continuous-time error dynamics from finite differences, Richardson
/// extrapolated over `dt`, `dt/2`, `dt/4` to remove the first- and
/// second-order step-size terms.
pub fn finite_difference_f(
    truth: &NavState,
    sample: &ImuSample,
    params: &SensorParams,
    dt: f64,
) -> StateMatrix {
    let rate = |h: f64| {
        (finite_difference_transition(truth, sample, params, h) - StateMatrix::identity()) / h
    };
    (8.0 * rate(0.25 * dt) - 6.0 * rate(0.5 * dt) + rate(dt)) / 3.0
}

fn ulp(x: f64) -> f64 {
    f64::EPSILON * x.abs()
}

/// Resolution of [`finite_difference_f`] per entry, set by the rounding of
/// the propagated state (one unit in the last place of each stored
/// coordinate) divided by the perturbation size, times the Richardson weight
/// sum `15 / dt`.
pub fn finite_difference_floor(truth: &NavState, dt: f64) -> StateMatrix {
    let p = &truth.position;
    let (rm, rn) = earth_radii(p.latitude);
    let vmax = truth.velocity.amax() + 10.0;
    let row_quantum = |r: usize| match r {
        0..=2 => 4.0 * f64::EPSILON,
        3..=5 => 2.0 * ulp(vmax),
        6 => 2.0 * ulp(p.latitude) * (rm + p.height),
        7 => 2.0 * ulp(p.longitude) * (rn + p.height) * p.latitude.cos(),
        8 => 2.0 * ulp(p.height.abs() + 1.0),
        _ => 0.0,
    };
    StateMatrix::from_fn(|r, c| 15.0 * row_quantum(r) / (STEPS[c / 3] * dt))
}

/// First entry whose mismatch exceeds all of: `rel` relative to the analytic
/// entry, `abs_scale` times the Frobenius norm of F, and the oracle floor.
pub fn worst_mismatch(
    analytic: &StateMatrix,
    numeric: &StateMatrix,
    floor: &StateMatrix,
    rel: f64,
    abs_scale: f64,
) -> Option<(usize, usize, f64, f64)> {
    let abs_tol = abs_scale * analytic.norm();
    for r in 0..15 {
        for c in 0..15 {
            let (a, n) = (analytic[(r, c)], numeric[(r, c)]);
            let d = (a - n).abs();
            if d > rel * a.abs() && d > abs_tol && d > floor[(r, c)] {
                return Some((r, c, a, n));
            }
        }
    }
    None
}

/// Posterior of a Gaussian prior combined with a linear measurement by
/// information-form least squares.
pub fn information_form_update(
    x_prior: &StateVector,
    p_prior: &StateMatrix,
    h: &ObservationMatrix,
    r: &MeasMatrix,
    y: &MeasVector,
) -> (StateVector, StateMatrix) {
    let p_inv = p_prior.try_inverse().unwrap();
    let r_inv = r.try_inverse().unwrap();
    let info = p_inv + h.transpose() * r_inv * h;
    let p_post = info.try_inverse().unwrap();
    let x_post = p_post * (p_inv * x_prior + h.transpose() * r_inv * y);
    (x_post, p_post)
}

/// Random attitude, velocity, position and IMU sample away from the poles.
pub fn random_operating_point(rng: &mut ChaCha8Rng) -> (NavState, ImuSample) {
    let lat = rng.random_range(-70f64..70.0).to_radians();
    let nav = NavState::new(
        0.0,
        euler_to_attitude(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.1..3.1),
        )
        .unwrap(),
        NedVector::new(
            rng.random_range(-30.0..30.0),
            rng.random_range(-30.0..30.0),
            rng.random_range(-2.0..2.0),
        ),
        GeodeticPosition::new(
            lat,
            rng.random_range(-3.0..3.0),
            rng.random_range(-100.0..2000.0),
        )
        .unwrap(),
    );
    let reaction = nav.attitude.nav_to_body(&NedVector::new(
        0.0,
        0.0,
        -gravity(lat, nav.position.height),
    ));
    let jitter = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
    let rate = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
    (nav, ImuSample::new(0.02, rate, reaction + jitter))
}

/// Random well-conditioned prior, noise covariance and measurement for the
/// position/velocity observation.
pub fn random_update_instance(rng: &mut ChaCha8Rng) -> (FilterState, LinearModel, MeasVector) {
    let a = StateMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let p = a * a.transpose() + StateMatrix::identity() * 0.5;
    let b = MeasMatrix::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let r = b * b.transpose() + MeasMatrix::identity() * 0.5;
    let x = StateVector::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let y = MeasVector::from_fn(|_, _| rng.random_range(-3.0..3.0));
    let model = LinearModel {
        phi: StateMatrix::identity(),
        g: NoiseMatrix::zeros(),
        qd: StateMatrix::zeros(),
        h: build_h(),
        r,
        dt: 1.0,
    };
    (
        FilterState {
            x_hat: ErrorState(x),
            p,
            t: 0.0,
        },
        model,
        y,
    )
}
