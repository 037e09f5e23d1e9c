//! Static coarse alignment and initial-attitude perturbation.

use nalgebra::{Matrix3, RowVector3, Vector3};

use crate::error::{invalid, Error, Result};
use crate::geo::{euler_to_attitude, EARTH_RATE, STANDARD_GRAVITY};
use crate::io::KeyValues;
use crate::sensors::{validate_stream, ImuSample};

/// Shortest static log accepted by [`align_static`] (s).
pub const MIN_ALIGNMENT_DURATION: f64 = 60.0;

/// Gyrocompass results are flagged when the mean-rate noise floor exceeds
/// this fraction of the horizontal Earth rate.
pub const GYROCOMPASS_SNR_FRACTION: f64 = 0.1;

/// Initial roll, pitch and yaw (rad) with their 3x3 covariance (rad^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialAttitude {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub covariance: Matrix3<f64>,
    /// Set when a gyrocompassed yaw is dominated by sensor noise.
    pub low_confidence: bool,
}

impl InitialAttitude {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            roll,
            pitch,
            yaw,
            covariance: Matrix3::zeros(),
            low_confidence: false,
        }
    }

    /// Attitude estimated at rest for the reference smartphone data set.
    pub fn reference() -> Self {
        Self::new(-0.0068, 0.0418, 1.2234)
    }

    pub fn angles(&self) -> Vector3<f64> {
        Vector3::new(self.roll, self.pitch, self.yaw)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("roll", self.roll);
        kv.set("pitch", self.pitch);
        kv.set("yaw", self.yaw);
        for r in 0..3 {
            for c in 0..3 {
                kv.set(format!("covariance.{r}.{c}"), self.covariance[(r, c)]);
            }
        }
        kv.set("low_confidence", self.low_confidence);
        kv
    }

    /// Reads an alignment file. Missing covariance entries default to zero.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut a = Self::new(kv.f64("roll")?, kv.f64("pitch")?, kv.f64("yaw")?);
        for r in 0..3 {
            for c in 0..3 {
                a.covariance[(r, c)] = kv.f64_or(&format!("covariance.{r}.{c}"), 0.0)?;
            }
        }
        a.low_confidence = match kv.get("low_confidence") {
            None | Some("false") => false,
            Some("true") => true,
            Some(other) => return invalid(format!("low_confidence: `{other}` is not a boolean")),
        };
        if (a.covariance - a.covariance.transpose()).amax() > 1e-15 * a.covariance.amax().max(1.0) {
            return invalid("alignment covariance is not symmetric");
        }
        Ok(a)
    }
}

/// Where the initial yaw comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YawSource {
    /// Externally supplied heading (rad).
    Config(f64),
    /// Gyrocompassing at the given latitude (rad).
    Gyrocompass { latitude: f64 },
}

/// Device-to-body axis map: a signed permutation matrix with `body = M * device`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap(Matrix3<f64>);

impl Default for AxisMap {
    fn default() -> Self {
        Self(Matrix3::identity())
    }
}

impl AxisMap {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        for r in 0..3 {
            let row = m.row(r);
            let nonzero = row.iter().filter(|v| **v != 0.0).count();
            if nonzero != 1 || row.iter().any(|v| !(*v == 0.0 || v.abs() == 1.0)) {
                return invalid("axis map rows must each hold a single +1 or -1");
            }
        }
        for c in 0..3 {
            if m.column(c).iter().filter(|v| **v != 0.0).count() != 1 {
                return invalid("axis map must be a permutation");
            }
        }
        Ok(Self(m))
    }

    /// Parses `row0`, `row1`, `row2` entries, each three comma separated integers.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut m = Matrix3::zeros();
        for r in 0..3 {
            let key = format!("row{r}");
            let row = kv
                .f64_list(&key)?
                .ok_or_else(|| Error::InvalidInput(format!("axis map missing `{key}`")))?;
            if row.len() != 3 {
                return invalid(format!("`{key}` needs three entries"));
            }
            m.set_row(r, &RowVector3::new(row[0], row[1], row[2]));
        }
        Self::new(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, s: &ImuSample) -> ImuSample {
        ImuSample::new(s.t, self.0 * s.angular_rate, self.0 * s.specific_force)
    }
}

/// Roll and pitch from the mean specific force of a static body
/// (x-forward, y-right, z-down, so a level body reads `(0, 0, -g)`).
pub fn level_from_accel(mean_specific_force: &Vector3<f64>) -> Result<(f64, f64)> {
    let f = mean_specific_force;
    let norm = f.norm();
    if !(0.5 * STANDARD_GRAVITY..=1.5 * STANDARD_GRAVITY).contains(&norm) {
        return invalid(format!(
            "mean specific force {norm:.3} m/s^2 outside [0.5 g, 1.5 g]; not static or wrong axes"
        ));
    }
    let pitch = f.x.atan2((f.y * f.y + f.z * f.z).sqrt());
    let roll = (-f.y).atan2(-f.z);
    Ok((roll, pitch))
}

/// Jacobian of (roll, pitch) with respect to the specific force.
fn leveling_jacobian(f: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let r2 = f.y * f.y + f.z * f.z;
    let rho = r2.sqrt();
    let n2 = r2 + f.x * f.x;
    nalgebra::Matrix2x3::new(
        0.0,
        f.z / r2,
        -f.y / r2,
        rho / n2,
        -f.x * f.y / (rho * n2),
        -f.x * f.z / (rho * n2),
    )
}

struct ChannelStats {
    mean: Vector3<f64>,
    mean_cov: Matrix3<f64>,
}

fn channel_stats(values: impl Iterator<Item = Vector3<f64>> + Clone, n: usize) -> ChannelStats {
    let nf = n as f64;
    let mean = values.clone().fold(Vector3::zeros(), |a, v| a + v) / nf;
    let cov = values.fold(Matrix3::zeros(), |a, v| {
        let d = v - mean;
        a + d * d.transpose()
    }) / nf;
    ChannelStats {
        mean,
        mean_cov: cov / nf,
    }
}

/// Coarse alignment from a stationary log.
///
/// Roll and pitch come from leveling the mean specific force. Yaw is either
/// supplied or gyrocompassed from the leveled mean angular rate. The
/// covariance propagates the white-noise uncertainty of the channel means.
pub fn align_static(static_log: &[ImuSample], yaw_source: YawSource) -> Result<InitialAttitude> {
    validate_stream(static_log)?;
    if static_log.len() < 2 {
        return Err(Error::TooShort {
            required: 2,
            actual: static_log.len(),
        });
    }
    let duration = static_log[static_log.len() - 1].t - static_log[0].t;
    if duration < MIN_ALIGNMENT_DURATION {
        return invalid(format!(
            "alignment log lasts {duration:.1} s, need at least {MIN_ALIGNMENT_DURATION} s"
        ));
    }
    const LABELS: [&str; 6] = [
        "gyro.x", "gyro.y", "gyro.z", "accel.x", "accel.y", "accel.z",
    ];
    for (c, label) in LABELS.iter().enumerate() {
        let series: Vec<f64> = static_log
            .iter()
            .map(|s| {
                if c < 3 {
                    s.angular_rate[c]
                } else {
                    s.specific_force[c - 3]
                }
            })
            .collect();
        crate::sensors::check_stationary(&series, label)?;
    }

    let n = static_log.len();
    let accel = channel_stats(static_log.iter().map(|s| s.specific_force), n);
    let (roll, pitch) = level_from_accel(&accel.mean)?;
    let j = leveling_jacobian(&accel.mean);
    let tilt_cov = j * accel.mean_cov * j.transpose();

    let mut covariance = Matrix3::zeros();
    covariance.fixed_view_mut::<2, 2>(0, 0).copy_from(&tilt_cov);
    let mut low_confidence = false;
    let yaw = match yaw_source {
        YawSource::Config(yaw) => yaw,
        YawSource::Gyrocompass { latitude } => {
            let gyro = channel_stats(static_log.iter().map(|s| s.angular_rate), n);
            let level = euler_to_attitude(roll, pitch, 0.0)?.dcm();
            let w = level * gyro.mean;
            let w_cov = level * gyro.mean_cov * level.transpose();
            let r2 = w.x * w.x + w.y * w.y;
            let jy = RowVector3::new(w.y / r2, -w.x / r2, 0.0);
            covariance[(2, 2)] = (jy * w_cov * jy.transpose())[(0, 0)];
            let floor = w_cov[(0, 0)].max(w_cov[(1, 1)]).sqrt();
            let horizontal = EARTH_RATE * latitude.cos();
            low_confidence = floor > GYROCOMPASS_SNR_FRACTION * horizontal;
            (-w.y).atan2(w.x)
        }
    };
    covariance = 0.5 * (covariance + covariance.transpose());
    Ok(InitialAttitude {
        roll,
        pitch,
        yaw,
        covariance,
        low_confidence,
    })
}

/// Adds the same error `epsilon` (rad) to roll, pitch and yaw.
pub fn inject_epsilon(att: &InitialAttitude, epsilon: f64) -> InitialAttitude {
    InitialAttitude {
        roll: att.roll + epsilon,
        pitch: att.pitch + epsilon,
        yaw: att.yaw + epsilon,
        ..*att
    }
}
