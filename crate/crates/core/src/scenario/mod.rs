//! Synthetic trajectories, sensor-stream simulation and the initial-attitude
//! sensitivity sweep.

mod report;
mod sweep;

pub use report::{parse_csv_report, report, ReportFormat};
pub use sweep::{epsilon_sweep, SweepConfig, SweepResult};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ekf::GnssFix;
use crate::error::{invalid, Error, Result};
use crate::geo::{
    euler_to_attitude, gravity, ned_to_geodetic_delta, wrap_angle, GeodeticPosition, NedVector,
};
use crate::io::KeyValues;
use crate::sensors::{corrupt_imu, BiasState, ImuSample, SensorParams};
use crate::strapdown::{integrate_position, inverse_mechanize, NavState};

/// RNG stream used for IMU noise.
const IMU_STREAM: u64 = 1;
/// RNG stream used for GNSS noise.
const GNSS_STREAM: u64 = 2;

/// One piece of a trajectory. Roll and pitch stay constant throughout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    /// At rest; requires zero speed on entry.
    Pause { duration: f64 },
    /// Constant speed and heading.
    Straight { duration: f64 },
    /// Constant yaw rate sweeping `angle` (rad) at constant speed.
    Turn { duration: f64, angle: f64 },
    /// Speed change to `speed` (m/s) along a raised-cosine profile.
    Accelerate { duration: f64, speed: f64 },
}

impl Segment {
    pub fn duration(&self) -> f64 {
        match *self {
            Segment::Pause { duration }
            | Segment::Straight { duration }
            | Segment::Turn { duration, .. }
            | Segment::Accelerate { duration, .. } => duration,
        }
    }
}

/// GNSS noise levels (1 sigma).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssAccuracy {
    /// Horizontal position (m).
    pub sigma_h: f64,
    /// Vertical position (m).
    pub sigma_v: f64,
    /// Velocity, each axis (m/s).
    pub sigma_vel: f64,
}

impl Default for GnssAccuracy {
    fn default() -> Self {
        Self {
            sigma_h: 3.0,
            sigma_v: 5.0,
            sigma_vel: 0.1,
        }
    }
}

impl GnssAccuracy {
    pub fn perfect() -> Self {
        Self {
            sigma_h: 0.0,
            sigma_v: 0.0,
            sigma_vel: 0.0,
        }
    }
}

/// A synthetic run: start state, motion segments, sensor rates and noise seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub start: GeodeticPosition,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Initial ground speed along the heading (m/s).
    pub speed: f64,
    pub segments: Vec<Segment>,
    pub imu_rate: f64,
    pub gnss_rate: f64,
    pub seed: u64,
    pub gnss: GnssAccuracy,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::default_drive()
    }
}

impl Scenario {
    /// 120 s drive: pause, speed up to 5 m/s, straight, 90 degree turn,
    /// straight, slow down, pause. Starts at the reference attitude.
    pub fn default_drive() -> Self {
        Self {
            start: GeodeticPosition {
                latitude: 37.38f64.to_radians(),
                longitude: 126.67f64.to_radians(),
                height: 20.0,
            },
            roll: -0.0068,
            pitch: 0.0418,
            yaw: 1.2234,
            speed: 0.0,
            segments: vec![
                Segment::Pause { duration: 10.0 },
                Segment::Accelerate {
                    duration: 5.0,
                    speed: 5.0,
                },
                Segment::Straight { duration: 35.0 },
                Segment::Turn {
                    duration: 20.0,
                    angle: std::f64::consts::FRAC_PI_2,
                },
                Segment::Straight { duration: 35.0 },
                Segment::Accelerate {
                    duration: 5.0,
                    speed: 0.0,
                },
                Segment::Pause { duration: 10.0 },
            ],
            imu_rate: 100.0,
            gnss_rate: 1.0,
            seed: 0,
            gnss: GnssAccuracy::default(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.segments.iter().map(Segment::duration).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.imu_rate > 0.0 && self.imu_rate.is_finite()) {
            return invalid(format!("imu_rate must be positive, got {}", self.imu_rate));
        }
        if !(self.gnss_rate > 0.0 && self.gnss_rate <= self.imu_rate) {
            return invalid(format!(
                "gnss_rate must be in (0, imu_rate], got {}",
                self.gnss_rate
            ));
        }
        let ratio = self.imu_rate / self.gnss_rate;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return invalid("imu_rate must be an integer multiple of gnss_rate");
        }
        let g = &self.gnss;
        if [g.sigma_h, g.sigma_v, g.sigma_vel]
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return invalid("GNSS sigmas must be finite and non-negative");
        }
        if !(self.speed >= 0.0 && self.speed.is_finite()) {
            return invalid("initial speed must be non-negative");
        }
        if self.segments.is_empty() {
            return invalid("scenario has no segments");
        }
        let mut speed = self.speed;
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration() > 0.0 && s.duration().is_finite()) {
                return invalid(format!("segment {i}: duration must be positive"));
            }
            match *s {
                Segment::Pause { .. } if speed != 0.0 => {
                    return invalid(format!("segment {i}: pause entered at {speed} m/s"));
                }
                Segment::Turn { angle, .. } if !angle.is_finite() => {
                    return invalid(format!("segment {i}: turn angle must be finite"));
                }
                Segment::Accelerate { speed: target, .. } => {
                    if !(target >= 0.0 && target.is_finite()) {
                        return invalid(format!("segment {i}: target speed must be non-negative"));
                    }
                    speed = target;
                }
                _ => {}
            }
        }
        if self.duration() * self.imu_rate < 1.0 {
            return invalid("scenario shorter than one IMU interval");
        }
        Ok(())
    }

    /// Speed and heading at time `t` since the start.
    fn profile(&self, t: f64) -> (f64, f64) {
        let mut start = 0.0;
        let mut speed = self.speed;
        let mut yaw = self.yaw;
        for s in &self.segments {
            let d = s.duration();
            let tau = ((t - start) / d).clamp(0.0, 1.0);
            let inside = t <= start + d;
            match *s {
                Segment::Turn { angle, .. } => {
                    if inside {
                        return (speed, yaw + angle * tau);
                    }
                    yaw += angle;
                }
                Segment::Accelerate { speed: target, .. } => {
                    if inside {
                        let w = 0.5 * (1.0 - (std::f64::consts::PI * tau).cos());
                        return (speed + (target - speed) * w, yaw);
                    }
                    speed = target;
                }
                Segment::Pause { .. } | Segment::Straight { .. } => {
                    if inside {
                        return (speed, yaw);
                    }
                }
            }
            start += d;
        }
        (speed, yaw)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("lat", self.start.latitude);
        kv.set("lon", self.start.longitude);
        kv.set("h", self.start.height);
        kv.set("roll", self.roll);
        kv.set("pitch", self.pitch);
        kv.set("yaw", self.yaw);
        kv.set("speed", self.speed);
        kv.set("imu_rate", self.imu_rate);
        kv.set("gnss_rate", self.gnss_rate);
        kv.set("seed", self.seed);
        kv.set("gnss.sigma_h", self.gnss.sigma_h);
        kv.set("gnss.sigma_v", self.gnss.sigma_v);
        kv.set("gnss.sigma_vel", self.gnss.sigma_vel);
        for (i, s) in self.segments.iter().enumerate() {
            let key = |f: &str| format!("segment.{i}.{f}");
            let kind = match s {
                Segment::Pause { .. } => "pause",
                Segment::Straight { .. } => "straight",
                Segment::Turn { .. } => "turn",
                Segment::Accelerate { .. } => "accelerate",
            };
            kv.set(key("type"), kind);
            kv.set(key("duration"), s.duration());
            match *s {
                Segment::Turn { angle, .. } => kv.set(key("turn"), angle),
                Segment::Accelerate { speed, .. } => kv.set(key("speed"), speed),
                _ => {}
            }
        }
        kv
    }

    /// Reads a scenario; absent keys take the default drive's values, and
    /// the default segments apply when no `segment.N.*` keys are present.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default_drive();
        let mut s = Self {
            start: GeodeticPosition::new(
                kv.f64_or("lat", d.start.latitude)?,
                kv.f64_or("lon", d.start.longitude)?,
                kv.f64_or("h", d.start.height)?,
            )?,
            roll: kv.f64_or("roll", d.roll)?,
            pitch: kv.f64_or("pitch", d.pitch)?,
            yaw: kv.f64_or("yaw", d.yaw)?,
            speed: kv.f64_or("speed", d.speed)?,
            segments: d.segments,
            imu_rate: kv.f64_or("imu_rate", d.imu_rate)?,
            gnss_rate: kv.f64_or("gnss_rate", d.gnss_rate)?,
            seed: kv.u64_or("seed", d.seed)?,
            gnss: GnssAccuracy {
                sigma_h: kv.f64_or("gnss.sigma_h", d.gnss.sigma_h)?,
                sigma_v: kv.f64_or("gnss.sigma_v", d.gnss.sigma_v)?,
                sigma_vel: kv.f64_or("gnss.sigma_vel", d.gnss.sigma_vel)?,
            },
        };
        let mut indices: Vec<usize> = Vec::new();
        for key in kv.keys() {
            if let Some(rest) = key.strip_prefix("segment.") {
                let idx = rest.split('.').next().unwrap_or("");
                let n: usize = idx
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad segment key `{key}`")))?;
                if !indices.contains(&n) {
                    indices.push(n);
                }
            }
        }
        indices.sort_unstable();
        if !indices.is_empty() {
            if indices.iter().enumerate().any(|(i, n)| i != *n) {
                return invalid("segment indices must run 0, 1, 2, ... without gaps");
            }
            s.segments = indices
                .iter()
                .map(|n| {
                    let key = |f: &str| format!("segment.{n}.{f}");
                    let duration = kv.f64(&key("duration"))?;
                    Ok(match kv.require(&key("type"))? {
                        "pause" => Segment::Pause { duration },
                        "straight" => Segment::Straight { duration },
                        "turn" => Segment::Turn {
                            duration,
                            angle: kv.f64(&key("turn"))?,
                        },
                        "accelerate" => Segment::Accelerate {
                            duration,
                            speed: kv.f64(&key("speed"))?,
                        },
                        other => return invalid(format!("segment {n}: unknown type `{other}`")),
                    })
                })
                .collect::<Result<_>>()?;
        }
        s.validate()?;
        Ok(s)
    }
}

/// Truth states at the IMU rate, starting at `t = 0`.
pub fn gen_trajectory(scenario: &Scenario) -> Result<Vec<NavState>> {
    scenario.validate()?;
    let n = (scenario.duration() * scenario.imu_rate + 1e-9).floor() as usize;
    let dt = 1.0 / scenario.imu_rate;
    let state_at = |k: usize, position: GeodeticPosition| -> Result<NavState> {
        let t = k as f64 * dt;
        let (speed, yaw) = scenario.profile(t);
        let attitude = euler_to_attitude(scenario.roll, scenario.pitch, wrap_angle(yaw))?;
        let velocity = NedVector::new(speed * yaw.cos(), speed * yaw.sin(), 0.0);
        Ok(NavState::new(t, attitude, velocity, position))
    };
    let mut truth = Vec::with_capacity(n + 1);
    truth.push(state_at(0, scenario.start)?);
    for k in 1..=n {
        let prev = truth[k - 1];
        let next = state_at(k, prev.position)?;
        let position = integrate_position(&prev.position, &prev.velocity, &next.velocity, dt);
        truth.push(NavState { position, ..next });
    }
    Ok(truth)
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// One noisy fix per GNSS epoch, taken from the truth sample at that epoch.
pub fn gen_gnss(
    truth: &[NavState],
    accuracy: &GnssAccuracy,
    gnss_rate: f64,
    rng: &mut impl Rng,
) -> Result<Vec<GnssFix>> {
    if truth.len() < 2 {
        return invalid("truth sequence too short for GNSS synthesis");
    }
    let dt = truth[1].t - truth[0].t;
    let stride = 1.0 / (gnss_rate * dt);
    if !(stride >= 1.0 - 1e-9) || (stride - stride.round()).abs() > 1e-6 * stride {
        return invalid("GNSS epochs must fall on truth samples");
    }
    let stride = stride.round() as usize;
    Ok(truth
        .iter()
        .step_by(stride)
        .map(|s| {
            let dn = NedVector::new(
                accuracy.sigma_h * gaussian(rng),
                accuracy.sigma_h * gaussian(rng),
                accuracy.sigma_v * gaussian(rng),
            );
            let dv =
                NedVector::new(gaussian(rng), gaussian(rng), gaussian(rng)) * accuracy.sigma_vel;
            let (dlat, dlon, dh) = ned_to_geodetic_delta(&s.position, &dn);
            GnssFix {
                t: s.t,
                position: GeodeticPosition {
                    latitude: s.position.latitude + dlat,
                    longitude: wrap_angle(s.position.longitude + dlon),
                    height: s.position.height + dh,
                },
                velocity: s.velocity + dv,
                sigma_pos: accuracy.sigma_h,
                sigma_vel: accuracy.sigma_vel,
            }
        })
        .collect())
}

/// Truth, corrupted IMU samples and GNSS fixes of one scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub truth: Vec<NavState>,
    /// Sample `k` covers the interval ending at `truth[k + 1].t`.
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssFix>,
}

/// RNG for the given seed and stream.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates the sensor streams of a scenario using `seed` for the noise.
/// Static accelerometer biases are gravity compensated at the start position;
/// dynamic biases start at zero.
pub fn simulate_with_seed(
    scenario: &Scenario,
    params: &SensorParams,
    seed: u64,
) -> Result<Simulation> {
    params.validate()?;
    let truth = gen_trajectory(scenario)?;
    let ideal = inverse_mechanize(&truth)?;
    let start = &scenario.start;
    let params = params.gravity_compensated(gravity(start.latitude, start.height));
    let dt = 1.0 / scenario.imu_rate;
    let mut rng = stream_rng(seed, IMU_STREAM);
    let mut bias = BiasState::zero();
    let mut imu = Vec::with_capacity(ideal.len());
    for s in &ideal {
        let (m, next) = corrupt_imu(
            s.t,
            &s.angular_rate,
            &s.specific_force,
            &params,
            &bias,
            dt,
            &mut rng,
        )?;
        imu.push(m);
        bias = next;
    }
    let mut rng = stream_rng(seed, GNSS_STREAM);
    let gnss = gen_gnss(&truth, &scenario.gnss, scenario.gnss_rate, &mut rng)?;
    Ok(Simulation { truth, imu, gnss })
}

/// [`simulate_with_seed`] with the scenario's own seed.
pub fn simulate(scenario: &Scenario, params: &SensorParams) -> Result<Simulation> {
    simulate_with_seed(scenario, params, scenario.seed)
}

/// Per-angle RMS of wrapped roll, pitch and yaw differences between two runs
/// with identical timestamps.
pub fn rms_deviation(a: &[NavState], b: &[NavState]) -> Result<[f64; 3]> {
    if a.len() != b.len() {
        return invalid(format!("run lengths differ: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return invalid("cannot compare empty runs");
    }
    let mut sum = [0.0; 3];
    for (x, y) in a.iter().zip(b) {
        if (x.t - y.t).abs() > 1e-9 * x.t.abs().max(1.0) {
            return invalid(format!("timestamps differ: {} vs {}", x.t, y.t));
        }
        let (ex, ey) = (x.attitude.to_euler(), y.attitude.to_euler());
        let d = [
            wrap_angle(ex.roll - ey.roll),
            wrap_angle(ex.pitch - ey.pitch),
            wrap_angle(ex.yaw - ey.yaw),
        ];
        for i in 0..3 {
            sum[i] += d[i] * d[i];
        }
    }
    let n = a.len() as f64;
    Ok(sum.map(|s| (s / n).sqrt()))
}
