use super::{
    build_f, build_g, build_h, build_r, check_covariance, discretize, feedback, make_measurement,
    min_eigenvalue, predict, process_noise, update_with, CovarianceUpdate, FilterState, GnssFix,
    Innovation, LinearModel, StateMatrix, ACCEL_BIAS, ATT, GYRO_BIAS, POS, VEL,
};
use crate::alignment::InitialAttitude;
use crate::error::{invalid, Error, Result};
use crate::geo::{euler_to_attitude, GeodeticPosition, NedVector};
use crate::io::InnovationRecord;
use crate::sensors::{validate_stream, BiasState, ImuSample, SensorParams};
use crate::strapdown::{correct_sample, mechanize_step, NavState, MAX_STEP};

/// Tuning of a fusion run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Horizontal GNSS position sigma used when a fix reports none (m).
    pub sigma_pos: f64,
    /// Vertical-to-horizontal position sigma ratio.
    pub vertical_ratio: f64,
    /// GNSS velocity sigma used when a fix reports none (m/s).
    pub sigma_vel: f64,
    /// Use the sigmas reported by each fix when they are positive.
    pub use_fix_sigmas: bool,
    /// Lower bound on the initial attitude sigma (rad).
    pub min_attitude_sigma: f64,
    pub init_velocity_sigma: f64,
    pub init_position_sigma: f64,
    /// Uncertainty of the calibrated static biases, added to the dynamic-bias sigma.
    pub static_gyro_uncertainty: f64,
    pub static_accel_uncertainty: f64,
    pub covariance_update: CovarianceUpdate,
    /// Record symmetry and eigenvalue statistics of `P` after every step.
    pub track_covariance_health: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            sigma_pos: 3.0,
            vertical_ratio: 5.0 / 3.0,
            sigma_vel: 0.1,
            use_fix_sigmas: true,
            min_attitude_sigma: 0.1f64.to_radians(),
            init_velocity_sigma: 0.1,
            init_position_sigma: 5.0,
            static_gyro_uncertainty: 0.0,
            static_accel_uncertainty: 0.0,
            covariance_update: CovarianceUpdate::Standard,
            track_covariance_health: false,
        }
    }
}

/// Initial position and velocity at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialPv {
    pub t: f64,
    pub position: GeodeticPosition,
    pub velocity: NedVector,
}

impl InitialPv {
    pub fn from_fix(fix: &GnssFix) -> Self {
        Self {
            t: fix.t,
            position: fix.position,
            velocity: fix.velocity,
        }
    }
}

/// Innovation with the time of the fix that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnovationEntry {
    pub t: f64,
    pub innovation: Innovation,
}

impl From<&InnovationEntry> for InnovationRecord {
    fn from(e: &InnovationEntry) -> Self {
        let d = &e.innovation.dy;
        InnovationRecord {
            t: e.t,
            dy1: d[0],
            dy2: d[1],
            dy3: d[2],
            dy4: d[3],
            dy5: d[4],
            dy6: d[5],
            nis: e.innovation.nis,
        }
    }
}

/// Worst covariance statistics seen during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHealth {
    /// Largest `max |P - P^T|`.
    pub max_asymmetry: f64,
    /// Smallest `lambda_min(P) / trace(P)`.
    pub min_eigen_ratio: f64,
    /// Number of covariance checks performed.
    pub checks: usize,
}

impl CovarianceHealth {
    fn new() -> Self {
        Self {
            max_asymmetry: 0.0,
            min_eigen_ratio: f64::INFINITY,
            checks: 0,
        }
    }

    fn record(&mut self, p: &StateMatrix) {
        self.max_asymmetry = self.max_asymmetry.max((p - p.transpose()).amax());
        self.min_eigen_ratio = self.min_eigen_ratio.min(min_eigenvalue(p) / p.trace());
        self.checks += 1;
    }

    /// Symmetric within 1e-12 and eigenvalues at least `-1e-10 * trace`.
    pub fn healthy(&self) -> bool {
        self.max_asymmetry < 1e-12 && self.min_eigen_ratio >= -1e-10
    }
}

/// Result of [`fuse_run`]. A diverged run keeps the states computed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// One state per processed IMU sample.
    pub states: Vec<NavState>,
    /// One entry per processed GNSS fix.
    pub innovations: Vec<InnovationEntry>,
    /// Reason the run stopped early, if it did.
    pub divergence: Option<String>,
    pub health: Option<CovarianceHealth>,
    /// Final dynamic bias estimate.
    pub bias: BiasState,
    pub final_filter: FilterState,
}

impl FusionOutput {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Initial error covariance: attitude from the alignment covariance with a
/// floor, fixed velocity and position sigmas, and bias sigmas from the
/// dynamic-bias level plus the static-bias uncertainty.
pub fn initial_covariance(
    init: &InitialAttitude,
    params: &SensorParams,
    config: &FusionConfig,
) -> StateMatrix {
    let mut p = StateMatrix::zeros();
    let floor = config.min_attitude_sigma.powi(2);
    for i in 0..3 {
        p[(ATT + i, ATT + i)] = init.covariance[(i, i)].max(floor);
        p[(VEL + i, VEL + i)] = config.init_velocity_sigma.powi(2);
        p[(POS + i, POS + i)] = config.init_position_sigma.powi(2);
        p[(GYRO_BIAS + i, GYRO_BIAS + i)] =
            (params.gyro[i].dynamic_bias_sigma + config.static_gyro_uncertainty).powi(2);
        p[(ACCEL_BIAS + i, ACCEL_BIAS + i)] =
            (params.accel[i].dynamic_bias_sigma + config.static_accel_uncertainty).powi(2);
    }
    p
}

fn fix_covariance(fix: &GnssFix, config: &FusionConfig) -> Result<super::MeasMatrix> {
    let pick = |reported: f64, default: f64| {
        if config.use_fix_sigmas && reported > 0.0 {
            reported
        } else {
            default
        }
    };
    let horizontal = pick(fix.sigma_pos, config.sigma_pos);
    build_r(
        horizontal,
        horizontal * config.vertical_ratio,
        pick(fix.sigma_vel, config.sigma_vel),
    )
}

fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::Divergence(_) | Error::NotPositiveSemidefinite(_) | Error::IllConditioned(_)
    )
}

fn nav_is_finite(nav: &NavState) -> bool {
    let q = nav.attitude.quaternion();
    q.coords.iter().all(|v| v.is_finite())
        && nav.velocity.iter().all(|v| v.is_finite())
        && [
            nav.position.latitude,
            nav.position.longitude,
            nav.position.height,
        ]
        .iter()
        .all(|v| v.is_finite())
}

struct Loop<'a> {
    params: SensorParams,
    config: &'a FusionConfig,
    q: super::NoiseCovariance,
    static_bias: BiasState,
    decay_gyro: [f64; 3],
    decay_accel: [f64; 3],
    nav: NavState,
    fs: FilterState,
    bias: BiasState,
    out: FusionOutput,
}

impl Loop<'_> {
    fn step(&mut self, sample: &ImuSample, fixes: &[GnssFix], next_fix: &mut usize) -> Result<()> {
        let dt = sample.t - self.nav.t;
        if !(dt > 0.0 && dt <= MAX_STEP) {
            return invalid(format!(
                "IMU step {dt} s at t = {} s outside (0, {MAX_STEP}]",
                sample.t
            ));
        }
        let corrected = correct_sample(sample, &(self.static_bias + self.bias));
        let f_n = self.nav.attitude.body_to_nav(&corrected.specific_force);
        let f = build_f(&self.nav, &f_n, &self.params)?;
        let g = build_g(&self.nav);
        let (phi, qd) = discretize(&f, &g, &self.q, dt)?;
        let h = build_h();
        let mut model = LinearModel {
            phi,
            g,
            qd,
            h,
            r: super::MeasMatrix::identity(),
            dt,
        };
        self.fs = predict(&self.fs, &model, None)?;
        self.fs.t = sample.t;
        self.check_health();

        let mut nav = mechanize_step(&self.nav, &corrected, dt)?;
        nav.t = sample.t;
        if !nav_is_finite(&nav) {
            return Err(Error::Divergence(format!(
                "navigation state not finite at t = {} s",
                sample.t
            )));
        }
        self.nav = nav;
        for i in 0..3 {
            self.bias.gyro[i] *= (-dt * self.decay_gyro[i]).exp();
            self.bias.accel[i] *= (-dt * self.decay_accel[i]).exp();
        }

        let half = 0.5 * dt;
        while let Some(fix) = fixes.get(*next_fix) {
            if fix.t > sample.t + half {
                break;
            }
            *next_fix += 1;
            if fix.t < sample.t - half {
                continue;
            }
            let dy = make_measurement(&self.nav, fix, half)?;
            model.r = fix_covariance(fix, self.config)?;
            let (fs, innovation) =
                update_with(&self.fs, &model, &dy, self.config.covariance_update)?;
            let (nav, bias, fs) = feedback(&self.nav, &self.bias, &fs)?;
            self.nav = nav;
            self.bias = bias;
            self.fs = fs;
            self.check_health();
            self.out.innovations.push(InnovationEntry {
                t: fix.t,
                innovation,
            });
        }
        self.out.states.push(self.nav);
        Ok(())
    }

    fn check_health(&mut self) {
        if let Some(h) = self.out.health.as_mut() {
            h.record(&self.fs.p);
        }
    }
}

/// Runs the closed-loop filter over an IMU stream, updating with every GNSS
/// fix that falls within half an IMU step of a sample. Fixes at or before the
/// initial time are ignored. Static biases in `params` are removed from the
/// raw samples (after gravity compensation); dynamic biases are estimated.
pub fn fuse_run(
    imu: &[ImuSample],
    gnss: &[GnssFix],
    params: &SensorParams,
    init: &InitialAttitude,
    init_pv: &InitialPv,
    config: &FusionConfig,
) -> Result<FusionOutput> {
    params.validate()?;
    validate_stream(imu)?;
    if gnss.iter().any(|f| !f.is_finite()) {
        return invalid("GNSS fix with non-finite fields");
    }
    if gnss.windows(2).any(|w| w[1].t <= w[0].t) {
        return invalid("GNSS timestamps not strictly increasing");
    }
    let Some(first) = imu.first() else {
        return invalid("empty IMU stream");
    };
    if first.t <= init_pv.t {
        return invalid("IMU stream must start after the initial time");
    }
    if let (Some(f), Some(l)) = (gnss.first(), gnss.last()) {
        if l.t < first.t || f.t > imu[imu.len() - 1].t {
            return invalid("IMU and GNSS streams do not overlap");
        }
    }

    let params_c = params.gravity_compensated(super::gravity_at(&init_pv.position));
    let attitude = euler_to_attitude(init.roll, init.pitch, init.yaw)?;
    let nav = NavState::new(init_pv.t, attitude, init_pv.velocity, init_pv.position);
    let p0 = initial_covariance(init, params, config);
    check_covariance(&p0)?;
    let fs = FilterState::new(p0, init_pv.t);
    let mut lp = Loop {
        params: params_c,
        config,
        q: process_noise(params),
        static_bias: BiasState::new(params_c.gyro_static_bias(), params_c.accel_static_bias()),
        decay_gyro: params.gyro.map(|a| 1.0 / a.correlation_time),
        decay_accel: params.accel.map(|a| 1.0 / a.correlation_time),
        nav,
        fs,
        bias: BiasState::zero(),
        out: FusionOutput {
            states: Vec::with_capacity(imu.len()),
            innovations: Vec::new(),
            divergence: None,
            health: config.track_covariance_health.then(CovarianceHealth::new),
            bias: BiasState::zero(),
            final_filter: fs,
        },
    };
    lp.check_health();
    let mut next_fix = gnss.partition_point(|f| f.t <= init_pv.t);
    for sample in imu {
        if let Err(e) = lp.step(sample, gnss, &mut next_fix) {
            if is_divergence(&e) {
                lp.out.divergence = Some(e.to_string());
                break;
            }
            return Err(e);
        }
    }
    lp.out.bias = lp.bias;
    lp.out.final_filter = lp.fs;
    Ok(lp.out)
}
