//! Frames, attitude representations and the WGS-84 Earth model.
//!
//! Navigation frame is local-level NED. Body frame is x-forward, y-right,
//! z-down. Attitude is the body-to-navigation rotation, stored as a unit
//! quaternion; Euler angles follow the ZYX (yaw, pitch, roll) convention.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{invalid, Error, Result};

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 first eccentricity squared, derived from `a` and `f`.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
/// WGS-84 semi-minor axis (m).
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// Earth rotation rate (rad/s).
pub const EARTH_RATE: f64 = 7.292_115e-5;
/// Earth gravitational constant GM (m^3/s^2).
pub const WGS84_GM: f64 = 3.986_004_418e14;
/// Normal gravity at the equator (m/s^2).
pub const GAMMA_EQUATOR: f64 = 9.780_325_335_9;
/// Normal gravity at the poles (m/s^2).
pub const GAMMA_POLE: f64 = 9.832_184_937_9;
/// Conventional standard gravity (m/s^2).
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Pitch magnitude above which Euler extraction treats the attitude as gimbal locked.
pub const GIMBAL_LOCK_PITCH: f64 = 89.99 * PI / 180.0;

/// Largest small-angle correction accepted by [`apply_small_rotation`] (rad).
pub const MAX_SMALL_ROTATION: f64 = 0.5;

/// North/east/down components. Units depend on context (m, m/s, rad).
pub type NedVector = Vector3<f64>;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Geodetic position on the WGS-84 ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticPosition {
    /// Latitude in [-pi/2, pi/2] (rad).
    pub latitude: f64,
    /// Longitude in (-pi, pi] (rad).
    pub longitude: f64,
    /// Ellipsoidal height (m).
    pub height: f64,
}

impl GeodeticPosition {
    /// Builds a position, folding latitude over the poles and wrapping longitude.
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        if !(latitude.is_finite() && longitude.is_finite() && height.is_finite()) {
            return invalid("non-finite geodetic coordinate");
        }
        let mut lat = wrap_angle(latitude);
        let mut lon = longitude;
        if lat > FRAC_PI_2 {
            lat = PI - lat;
            lon += PI;
        } else if lat < -FRAC_PI_2 {
            lat = -PI - lat;
            lon += PI;
        }
        Ok(Self {
            latitude: lat,
            longitude: wrap_angle(lon),
            height,
        })
    }
}

/// Euler angles extracted from an [`Attitude`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Set when |pitch| exceeds [`GIMBAL_LOCK_PITCH`]; roll is then folded into yaw.
    pub gimbal_locked: bool,
}

/// Body-to-navigation (NED) rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude {
    q_b2n: UnitQuaternion<f64>,
}

impl Default for Attitude {
    fn default() -> Self {
        Self::identity()
    }
}

/// Renormalizes only when the norm has drifted measurably, so that exact
/// unit quaternions pass through bit-for-bit.
fn renormalized(q: Quaternion<f64>) -> UnitQuaternion<f64> {
    let n2 = q.norm_squared();
    if (n2 - 1.0).abs() > 4.0 * f64::EPSILON {
        UnitQuaternion::new_normalize(q)
    } else {
        UnitQuaternion::new_unchecked(q)
    }
}

impl Attitude {
    pub fn identity() -> Self {
        Self {
            q_b2n: UnitQuaternion::identity(),
        }
    }

    pub fn from_quaternion(q: Quaternion<f64>) -> Result<Self> {
        let n = q.norm();
        if !n.is_finite() || n < 1e-6 {
            return invalid("quaternion with zero or non-finite norm");
        }
        Ok(Self {
            q_b2n: renormalized(q / n),
        })
    }

    pub(crate) fn from_unit(q: UnitQuaternion<f64>) -> Self {
        Self {
            q_b2n: renormalized(q.into_inner()),
        }
    }

    /// Builds the rotation from ZYX Euler angles.
    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        euler_to_attitude(roll, pitch, yaw)
    }

    pub fn to_euler(&self) -> EulerAngles {
        attitude_to_euler(self)
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.q_b2n
    }

    /// Direction cosine matrix C_b2n.
    pub fn dcm(&self) -> Matrix3<f64> {
        self.q_b2n.to_rotation_matrix().into_inner()
    }

    /// Rotates a body-frame vector into the navigation frame.
    pub fn body_to_nav(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q_b2n * v
    }

    pub fn nav_to_body(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q_b2n.inverse_transform_vector(v)
    }

    /// `nav_rotation * self * body_rotation`, renormalized.
    pub fn compose(
        &self,
        nav_rotation: &UnitQuaternion<f64>,
        body_rotation: &UnitQuaternion<f64>,
    ) -> Self {
        Self::from_unit(nav_rotation * self.q_b2n * body_rotation)
    }
}

/// ZYX Euler angles to attitude: yaw about down, pitch about the new east
/// axis, roll about the new forward axis.
pub fn euler_to_attitude(roll: f64, pitch: f64, yaw: f64) -> Result<Attitude> {
    if !(roll.is_finite() && pitch.is_finite() && yaw.is_finite()) {
        return invalid("non-finite Euler angle");
    }
    if pitch.abs() > FRAC_PI_2 {
        return invalid(format!("pitch {pitch} outside [-pi/2, pi/2]"));
    }
    let (sr, cr) = (0.5 * roll).sin_cos();
    let (sp, cp) = (0.5 * pitch).sin_cos();
    let (sy, cy) = (0.5 * yaw).sin_cos();
    let q = Quaternion::new(
        cy * cp * cr + sy * sp * sr,
        cy * cp * sr - sy * sp * cr,
        cy * sp * cr + sy * cp * sr,
        sy * cp * cr - cy * sp * sr,
    );
    Ok(Attitude {
        q_b2n: UnitQuaternion::new_normalize(q),
    })
}

/// Inverse of [`euler_to_attitude`] away from gimbal lock.
pub fn attitude_to_euler(a: &Attitude) -> EulerAngles {
    let c = a.dcm();
    let pitch = (-c[(2, 0)]).atan2((c[(2, 1)] * c[(2, 1)] + c[(2, 2)] * c[(2, 2)]).sqrt());
    if pitch.abs() > GIMBAL_LOCK_PITCH {
        // Only yaw - roll (or yaw + roll) is observable; report it as yaw.
        return EulerAngles {
            roll: 0.0,
            pitch,
            yaw: (-c[(0, 1)]).atan2(c[(1, 1)]),
            gimbal_locked: true,
        };
    }
    EulerAngles {
        roll: c[(2, 1)].atan2(c[(2, 2)]),
        pitch,
        yaw: c[(1, 0)].atan2(c[(0, 0)]),
        gimbal_locked: false,
    }
}

/// Applies the small-angle correction `C <- (I - [dpsi x]) C`.
///
/// The result is the orthonormal polar factor of `(I - [dpsi x]) C`, which
/// is the rotation by `atan(|dpsi|)` about `-dpsi`. It agrees with the
/// exact exponential map to second order and is exactly inverted by `-dpsi`.
pub fn apply_small_rotation(a: &Attitude, dpsi: &NedVector) -> Result<Attitude> {
    if !dpsi.iter().all(|x| x.is_finite()) {
        return invalid("non-finite attitude correction");
    }
    let theta = dpsi.norm();
    if theta >= MAX_SMALL_ROTATION {
        return Err(Error::Divergence(format!(
            "attitude correction of {theta:.3} rad exceeds the small-angle limit"
        )));
    }
    if theta == 0.0 {
        return Ok(*a);
    }
    let half = 0.5 * theta.atan();
    let axis = -dpsi / theta;
    let s = half.sin();
    let dq = UnitQuaternion::new_unchecked(Quaternion::new(
        half.cos(),
        s * axis.x,
        s * axis.y,
        s * axis.z,
    ));
    Ok(Attitude::from_unit(dq * a.q_b2n))
}

/// Meridian and transverse radii of curvature (m).
pub fn earth_radii(latitude: f64) -> (f64, f64) {
    let s = latitude.sin();
    let w2 = 1.0 - WGS84_E2 * s * s;
    let w = w2.sqrt();
    let transverse = WGS84_A / w;
    let meridian = WGS84_A * (1.0 - WGS84_E2) / (w2 * w);
    (meridian, transverse)
}

fn somigliana_k() -> f64 {
    WGS84_B * GAMMA_POLE / (WGS84_A * GAMMA_EQUATOR) - 1.0
}

fn geodetic_m() -> f64 {
    EARTH_RATE * EARTH_RATE * WGS84_A * WGS84_A * WGS84_B / WGS84_GM
}

/// Normal gravity magnitude (m/s^2, down-positive): Somigliana on the
/// ellipsoid with the second-order free-air height correction.
pub fn gravity(latitude: f64, height: f64) -> f64 {
    let s2 = latitude.sin().powi(2);
    let surface = GAMMA_EQUATOR * (1.0 + somigliana_k() * s2) / (1.0 - WGS84_E2 * s2).sqrt();
    let free_air = 1.0
        - 2.0 / WGS84_A * (1.0 + WGS84_F + geodetic_m() - 2.0 * WGS84_F * s2) * height
        + 3.0 * height * height / (WGS84_A * WGS84_A);
    surface * free_air
}

/// Partial derivatives of [`gravity`] with respect to latitude (per rad) and height (per m).
pub fn gravity_gradient(latitude: f64, height: f64) -> (f64, f64) {
    let (s, c) = latitude.sin_cos();
    let s2 = s * s;
    let k = somigliana_k();
    let m = geodetic_m();
    let w2 = 1.0 - WGS84_E2 * s2;
    let surface = GAMMA_EQUATOR * (1.0 + k * s2) / w2.sqrt();
    let d_surface =
        GAMMA_EQUATOR * s * c * (2.0 * k * w2 + WGS84_E2 * (1.0 + k * s2)) / (w2 * w2.sqrt());
    let free_air = 1.0 - 2.0 / WGS84_A * (1.0 + WGS84_F + m - 2.0 * WGS84_F * s2) * height
        + 3.0 * height * height / (WGS84_A * WGS84_A);
    let d_free_air_lat = 8.0 * WGS84_F * s * c * height / WGS84_A;
    let d_free_air_h = -2.0 / WGS84_A * (1.0 + WGS84_F + m - 2.0 * WGS84_F * s2)
        + 6.0 * height / (WGS84_A * WGS84_A);
    (
        d_surface * free_air + surface * d_free_air_lat,
        surface * d_free_air_h,
    )
}

/// Earth rotation resolved in NED.
pub fn earth_rate_ned(latitude: f64) -> NedVector {
    let (s, c) = latitude.sin_cos();
    NedVector::new(EARTH_RATE * c, 0.0, -EARTH_RATE * s)
}

/// Transport rate: rotation of the NED frame caused by motion over the ellipsoid.
pub fn transport_rate(position: &GeodeticPosition, velocity: &NedVector) -> NedVector {
    let (rm, rn) = earth_radii(position.latitude);
    let h = position.height;
    NedVector::new(
        velocity.y / (rn + h),
        -velocity.x / (rm + h),
        -velocity.y * position.latitude.tan() / (rn + h),
    )
}

/// Converts a small NED displacement (m) into geodetic increments
/// `(dlat, dlon, dh)` at the given position.
pub fn ned_to_geodetic_delta(position: &GeodeticPosition, d: &NedVector) -> (f64, f64, f64) {
    let (rm, rn) = earth_radii(position.latitude);
    let h = position.height;
    (
        d.x / (rm + h),
        d.y / ((rn + h) * position.latitude.cos()),
        -d.z,
    )
}

/// NED displacement (m) of `a` relative to `b`, linearized at `a`.
pub fn geodetic_difference_ned(a: &GeodeticPosition, b: &GeodeticPosition) -> NedVector {
    let (rm, rn) = earth_radii(a.latitude);
    let h = a.height;
    NedVector::new(
        (a.latitude - b.latitude) * (rm + h),
        wrap_angle(a.longitude - b.longitude) * (rn + h) * a.latitude.cos(),
        -(a.height - b.height),
    )
}
