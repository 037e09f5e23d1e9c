//! 15-state error-state Kalman filter for loosely coupled GNSS/INS fusion.
//!
//! Error conventions, all "estimate relative to truth":
//! - attitude `psi`: `C_est = (I - [psi x]) C_true` (navigation frame, rad)
//! - velocity `dv = v_est - v_true` (NED, m/s)
//! - position `dr = r_est - r_true` (NED, m)
//! - biases `db = b_true - b_est` (rad/s, m/s^2)
//!
//! The filter runs closed loop: after every update the estimated errors are
//! fed back into the navigation solution and the bias estimate, and the
//! error-state mean is reset to zero.

mod fusion;

pub use fusion::{
    fuse_run, initial_covariance, CovarianceHealth, FusionConfig, FusionOutput, InitialPv,
    InnovationEntry,
};

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{invalid, Error, Result};
use crate::geo::{
    apply_small_rotation, earth_radii, earth_rate_ned, geodetic_difference_ned, gravity,
    gravity_gradient, ned_to_geodetic_delta, skew, transport_rate, GeodeticPosition, NedVector,
    EARTH_RATE, WGS84_A, WGS84_E2,
};
use crate::io::GnssRecord;
use crate::sensors::{BiasState, SensorParams};
use crate::strapdown::{NavState, MAX_LATITUDE};

pub const STATE_DIM: usize = 15;
pub const NOISE_DIM: usize = 12;
pub const MEAS_DIM: usize = 6;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type NoiseMatrix = SMatrix<f64, STATE_DIM, NOISE_DIM>;
pub type NoiseCovariance = SMatrix<f64, NOISE_DIM, NOISE_DIM>;
pub type NoiseVector = SVector<f64, NOISE_DIM>;
pub type ObservationMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;
pub type MeasVector = SVector<f64, MEAS_DIM>;
pub type MeasMatrix = SMatrix<f64, MEAS_DIM, MEAS_DIM>;

/// Offsets of the error-state blocks.
pub const ATT: usize = 0;
pub const VEL: usize = 3;
pub const POS: usize = 6;
pub const GYRO_BIAS: usize = 9;
pub const ACCEL_BIAS: usize = 12;

/// Largest accepted innovation-covariance condition number.
pub const MAX_CONDITION: f64 = 1e12;

/// Ordered error state: attitude, velocity, position, gyro bias, accel bias.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorState(pub StateVector);

impl ErrorState {
    pub fn zero() -> Self {
        Self(StateVector::zeros())
    }

    fn block(&self, offset: usize) -> Vector3<f64> {
        self.0.fixed_rows::<3>(offset).into_owned()
    }

    pub fn attitude(&self) -> Vector3<f64> {
        self.block(ATT)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        self.block(VEL)
    }

    pub fn position(&self) -> Vector3<f64> {
        self.block(POS)
    }

    pub fn gyro_bias(&self) -> Vector3<f64> {
        self.block(GYRO_BIAS)
    }

    pub fn accel_bias(&self) -> Vector3<f64> {
        self.block(ACCEL_BIAS)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Error-state mean and covariance at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub x_hat: ErrorState,
    pub p: StateMatrix,
    pub t: f64,
}

impl FilterState {
    pub fn new(p: StateMatrix, t: f64) -> Self {
        Self {
            x_hat: ErrorState::zero(),
            p,
            t,
        }
    }
}

/// Discrete model for one predict step and the measurement model for updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearModel {
    pub phi: StateMatrix,
    pub g: NoiseMatrix,
    pub qd: StateMatrix,
    pub h: ObservationMatrix,
    pub r: MeasMatrix,
    /// Step covered by `phi` and `qd` (s).
    pub dt: f64,
}

/// Innovation of one GNSS update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    /// Measurement residual: velocity (m/s) then position (m).
    pub dy: MeasVector,
    pub s: MeasMatrix,
    pub nis: f64,
}

/// GNSS position/velocity solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssFix {
    pub t: f64,
    pub position: GeodeticPosition,
    pub velocity: NedVector,
    /// Reported horizontal position sigma (m); non-positive means unknown.
    pub sigma_pos: f64,
    /// Reported velocity sigma (m/s); non-positive means unknown.
    pub sigma_vel: f64,
}

impl GnssFix {
    pub fn from_record(r: &GnssRecord) -> Result<Self> {
        Ok(Self {
            t: r.t,
            position: GeodeticPosition::new(r.lat, r.lon, r.h)?,
            velocity: NedVector::new(r.vn, r.ve, r.vd),
            sigma_pos: r.sigma_pos,
            sigma_vel: r.sigma_vel,
        })
    }

    pub fn to_record(&self) -> GnssRecord {
        GnssRecord {
            t: self.t,
            lat: self.position.latitude,
            lon: self.position.longitude,
            h: self.position.height,
            vn: self.velocity.x,
            ve: self.velocity.y,
            vd: self.velocity.z,
            sigma_pos: self.sigma_pos,
            sigma_vel: self.sigma_vel,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.position.latitude,
            self.position.longitude,
            self.position.height,
        ]
        .iter()
        .chain(self.velocity.iter())
        .all(|v| v.is_finite())
    }
}

/// Radii of curvature and their latitude derivatives.
struct Curvature {
    rm: f64,
    rn: f64,
    drm: f64,
    drn: f64,
}

fn curvature(latitude: f64) -> Curvature {
    let (rm, rn) = earth_radii(latitude);
    let (s, c) = latitude.sin_cos();
    let w2 = 1.0 - WGS84_E2 * s * s;
    let w = w2.sqrt();
    Curvature {
        rm,
        rn,
        drm: 3.0 * WGS84_A * (1.0 - WGS84_E2) * WGS84_E2 * s * c / (w2 * w2 * w),
        drn: WGS84_A * WGS84_E2 * s * c / (w2 * w),
    }
}

fn set_block(m: &mut StateMatrix, r: usize, c: usize, b: &Matrix3<f64>) {
    m.fixed_view_mut::<3, 3>(r, c).copy_from(b);
}

fn check_latitude(p: &GeodeticPosition) -> Result<()> {
    if p.latitude.abs() > MAX_LATITUDE {
        return invalid(format!(
            "latitude {:.4} rad too close to the pole for the NED error model",
            p.latitude
        ));
    }
    Ok(())
}

/// Continuous-time error dynamics `dx/dt = F dx + G w` about `nav`, with
/// `f_n` the specific force resolved in the navigation frame.
pub fn build_f(nav: &NavState, f_n: &NedVector, params: &SensorParams) -> Result<StateMatrix> {
    let p = &nav.position;
    check_latitude(p)?;
    let v = &nav.velocity;
    let (lat, h) = (p.latitude, p.height);
    let (s, c) = lat.sin_cos();
    let tan = lat.tan();
    let k = curvature(lat);
    let (rmh, rnh) = (k.rm + h, k.rn + h);
    let c_b2n = nav.attitude.dcm();

    let w_ie = earth_rate_ned(lat);
    let w_en = transport_rate(p, v);

    // d(w_en)/d(v)
    let a_v = Matrix3::new(
        0.0,
        1.0 / rnh,
        0.0,
        -1.0 / rmh,
        0.0,
        0.0,
        0.0,
        -tan / rnh,
        0.0,
    );
    // Latitude and height partials of the frame rates.
    let d_ie_lat = Vector3::new(-EARTH_RATE * s, 0.0, -EARTH_RATE * c);
    let d_en_lat = Vector3::new(
        -v.y * k.drn / (rnh * rnh),
        v.x * k.drm / (rmh * rmh),
        -v.y * (1.0 / (c * c * rnh) - tan * k.drn / (rnh * rnh)),
    );
    let d_en_h = Vector3::new(
        -v.y / (rnh * rnh),
        v.x / (rmh * rmh),
        v.y * tan / (rnh * rnh),
    );
    // Position error (N, E, D in m) to (lat, h): dlat = dN / (R_M + h), dh = -dD.
    let to_pos = |d_lat: Vector3<f64>, d_h: Vector3<f64>| {
        let mut m = Matrix3::zeros();
        m.set_column(0, &(d_lat / rmh));
        m.set_column(2, &(-d_h));
        m
    };
    let a_ie_r = to_pos(d_ie_lat, Vector3::zeros());
    let a_en_r = to_pos(d_en_lat, d_en_h);

    let (dg_lat, dg_h) = gravity_gradient(lat, h);
    let mut g_r = Matrix3::zeros();
    g_r[(2, 0)] = dg_lat / rmh;
    g_r[(2, 2)] = -dg_h;

    let mut f = StateMatrix::zeros();
    set_block(&mut f, ATT, ATT, &-skew(&(w_ie + w_en)));
    set_block(&mut f, ATT, VEL, &a_v);
    set_block(&mut f, ATT, POS, &(a_ie_r + a_en_r));
    set_block(&mut f, ATT, GYRO_BIAS, &-c_b2n);

    let sv = skew(v);
    set_block(&mut f, VEL, ATT, &skew(f_n));
    set_block(&mut f, VEL, VEL, &(-skew(&(2.0 * w_ie + w_en)) + sv * a_v));
    set_block(&mut f, VEL, POS, &(sv * (2.0 * a_ie_r + a_en_r) + g_r));
    set_block(&mut f, VEL, ACCEL_BIAS, &c_b2n);

    set_block(&mut f, POS, VEL, &Matrix3::identity());
    let lat_rate = v.x / rmh;
    let f_rr = Matrix3::new(
        -v.z / rmh,
        0.0,
        v.x / rmh,
        v.y * (tan - k.drn / rnh) / rmh,
        (k.drn * lat_rate - v.z) / rnh - tan * lat_rate,
        v.y / rnh,
        0.0,
        0.0,
        0.0,
    );
    set_block(&mut f, POS, POS, &f_rr);

    for i in 0..3 {
        f[(GYRO_BIAS + i, GYRO_BIAS + i)] = -1.0 / params.gyro[i].correlation_time;
        f[(ACCEL_BIAS + i, ACCEL_BIAS + i)] = -1.0 / params.accel[i].correlation_time;
    }
    Ok(f)
}

/// Noise input matrix for `(gyro white, accel white, gyro GM drive, accel GM drive)`.
pub fn build_g(nav: &NavState) -> NoiseMatrix {
    let c = nav.attitude.dcm();
    let mut g = NoiseMatrix::zeros();
    g.fixed_view_mut::<3, 3>(ATT, 0).copy_from(&-c);
    g.fixed_view_mut::<3, 3>(VEL, 3).copy_from(&c);
    g.fixed_view_mut::<3, 3>(GYRO_BIAS, 6)
        .copy_from(&Matrix3::identity());
    g.fixed_view_mut::<3, 3>(ACCEL_BIAS, 9)
        .copy_from(&Matrix3::identity());
    g
}

/// Continuous noise spectral densities matching [`build_g`]'s input ordering.
pub fn process_noise(params: &SensorParams) -> NoiseCovariance {
    let mut q = NoiseCovariance::zeros();
    for i in 0..3 {
        q[(i, i)] = params.gyro[i].random_walk_density.powi(2);
        q[(3 + i, 3 + i)] = params.accel[i].random_walk_density.powi(2);
        q[(6 + i, 6 + i)] = params.gyro[i].dynamic_bias_psd.powi(2);
        q[(9 + i, 9 + i)] = params.accel[i].dynamic_bias_psd.powi(2);
    }
    q
}

/// `Phi = I + F dt + (F dt)^2 / 2` and `Qd = G Q G^T dt`.
pub fn discretize(
    f: &StateMatrix,
    g: &NoiseMatrix,
    q: &NoiseCovariance,
    dt: f64,
) -> Result<(StateMatrix, StateMatrix)> {
    if !(dt > 0.0 && dt <= 10.0) {
        return invalid(format!("discretization step {dt} s outside (0, 10]"));
    }
    let fdt = f * dt;
    let phi = StateMatrix::identity() + fdt + 0.5 * fdt * fdt;
    Ok((phi, g * q * g.transpose() * dt))
}

/// Selects the velocity and position errors.
pub fn build_h() -> ObservationMatrix {
    let mut h = ObservationMatrix::zeros();
    h.fixed_view_mut::<3, 3>(0, VEL)
        .copy_from(&Matrix3::identity());
    h.fixed_view_mut::<3, 3>(3, POS)
        .copy_from(&Matrix3::identity());
    h
}

/// Diagonal measurement covariance from position sigmas (m) and velocity sigma (m/s).
pub fn build_r(sigma_horizontal: f64, sigma_vertical: f64, sigma_vel: f64) -> Result<MeasMatrix> {
    let s = [sigma_horizontal, sigma_vertical, sigma_vel];
    if s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return invalid(format!("measurement sigmas must be positive: {s:?}"));
    }
    let d = [
        sigma_vel,
        sigma_vel,
        sigma_vel,
        sigma_horizontal,
        sigma_horizontal,
        sigma_vertical,
    ];
    Ok(MeasMatrix::from_diagonal(&MeasVector::from_iterator(
        d.iter().map(|v| v * v),
    )))
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    0.5 * (m + m.transpose())
}

/// Accepts `P` when it is symmetric and its smallest eigenvalue is at least
/// `-1e-10 * trace(P)`.
pub fn check_covariance(p: &StateMatrix) -> Result<()> {
    if !p.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveSemidefinite(
            "covariance is not finite".into(),
        ));
    }
    let scale = p.amax().max(f64::MIN_POSITIVE);
    if (p - p.transpose()).amax() > 1e-12 * scale.max(1.0) {
        return Err(Error::NotPositiveSemidefinite(
            "covariance is not symmetric".into(),
        ));
    }
    let shifted = p + StateMatrix::identity() * (1e-10 * p.trace().abs());
    if shifted.cholesky().is_none() && min_eigenvalue(p) < -1e-10 * p.trace().abs() {
        return Err(Error::NotPositiveSemidefinite(format!(
            "covariance has eigenvalue {:.3e}",
            min_eigenvalue(p)
        )));
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(p: &StateMatrix) -> f64 {
    symmetrize(p).symmetric_eigenvalues().min()
}

/// `x = Phi x + G u`, `P = Phi P Phi^T + Qd`. `u` defaults to zero.
pub fn predict(
    fs: &FilterState,
    model: &LinearModel,
    u: Option<&NoiseVector>,
) -> Result<FilterState> {
    check_covariance(&fs.p)?;
    let mut x = model.phi * fs.x_hat.0;
    if let Some(u) = u {
        x += model.g * u;
    }
    let p = model.phi * fs.p * model.phi.transpose() + model.qd;
    Ok(FilterState {
        x_hat: ErrorState(x),
        p: symmetrize(&p),
        t: fs.t + model.dt,
    })
}

/// Covariance update form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceUpdate {
    /// `P = (I - K H) P`, then symmetrized.
    #[default]
    Standard,
    /// `P = (I - K H) P (I - K H)^T + K R K^T`.
    Joseph,
}

/// Kalman update with the standard covariance form.
pub fn update(
    fs: &FilterState,
    model: &LinearModel,
    dy: &MeasVector,
) -> Result<(FilterState, Innovation)> {
    update_with(fs, model, dy, CovarianceUpdate::Standard)
}

/// Kalman update with a selectable covariance form.
pub fn update_with(
    fs: &FilterState,
    model: &LinearModel,
    dy: &MeasVector,
    form: CovarianceUpdate,
) -> Result<(FilterState, Innovation)> {
    let (h, r, p) = (&model.h, &model.r, &fs.p);
    let s = symmetrize(&(h * p * h.transpose() + r));
    let eig = s.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::IllConditioned(if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }));
    }
    let chol = s.cholesky().ok_or(Error::IllConditioned(hi / lo))?;
    let pht = p * h.transpose();
    let k = chol.solve(&pht.transpose()).transpose();
    let residual = dy - h * fs.x_hat.0;
    let x = fs.x_hat.0 + k * residual;
    let i_kh = StateMatrix::identity() - k * h;
    let p_post = match form {
        CovarianceUpdate::Standard => i_kh * p,
        CovarianceUpdate::Joseph => i_kh * p * i_kh.transpose() + k * r * k.transpose(),
    };
    let nis = residual.dot(&chol.solve(&residual)).max(0.0);
    Ok((
        FilterState {
            x_hat: ErrorState(x),
            p: symmetrize(&p_post),
            t: fs.t,
        },
        Innovation {
            dy: residual,
            s,
            nis,
        },
    ))
}

/// INS minus GNSS: velocity difference then NED position difference at the INS latitude.
pub fn make_measurement(nav: &NavState, fix: &GnssFix, max_skew: f64) -> Result<MeasVector> {
    let skew_t = (nav.t - fix.t).abs();
    if !(skew_t <= max_skew + 1e-9) {
        return invalid(format!(
            "GNSS fix at {} s is {skew_t:.4} s from the navigation epoch {} s",
            fix.t, nav.t
        ));
    }
    let dv = nav.velocity - fix.velocity;
    let dr = geodetic_difference_ned(&nav.position, &fix.position);
    let mut y = MeasVector::zeros();
    y.fixed_rows_mut::<3>(0).copy_from(&dv);
    y.fixed_rows_mut::<3>(3).copy_from(&dr);
    Ok(y)
}

/// Applies the estimated errors to the navigation solution and bias
/// estimate, then resets the error mean. The covariance is unchanged.
pub fn feedback(
    nav: &NavState,
    bias: &BiasState,
    fs: &FilterState,
) -> Result<(NavState, BiasState, FilterState)> {
    let x = &fs.x_hat;
    if !x.is_finite() {
        return Err(Error::Divergence(
            "error-state estimate is not finite".into(),
        ));
    }
    let attitude = apply_small_rotation(&nav.attitude, &-x.attitude())?;
    let (dlat, dlon, dh) = ned_to_geodetic_delta(&nav.position, &x.position());
    let position = GeodeticPosition {
        latitude: nav.position.latitude - dlat,
        longitude: crate::geo::wrap_angle(nav.position.longitude - dlon),
        height: nav.position.height - dh,
    };
    let corrected = NavState {
        t: nav.t,
        attitude,
        velocity: nav.velocity - x.velocity(),
        position,
    };
    let bias = BiasState::new(bias.gyro + x.gyro_bias(), bias.accel + x.accel_bias());
    Ok((
        corrected,
        bias,
        FilterState {
            x_hat: ErrorState::zero(),
            p: fs.p,
            t: fs.t,
        },
    ))
}

/// Gravity vector helper used by the fusion loop and tests.
pub(crate) fn gravity_at(p: &GeodeticPosition) -> f64 {
    gravity(p.latitude, p.height)
}
