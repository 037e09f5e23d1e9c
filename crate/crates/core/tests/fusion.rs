use gnss_ins::alignment::InitialAttitude;
use gnss_ins::ekf::{fuse_run, FusionConfig, FusionOutput, InitialPv};
use gnss_ins::geo::{geodetic_difference_ned, Attitude};
use gnss_ins::scenario::{simulate_with_seed, GnssAccuracy, Scenario, Segment, Simulation};
use gnss_ins::sensors::SensorParams;
use gnss_ins::strapdown::NavState;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn run(sim: &Simulation, params: &SensorParams, init: &InitialAttitude) -> FusionOutput {
    fuse_run(
        &sim.imu,
        &sim.gnss,
        params,
        init,
        &InitialPv::from_fix(&sim.gnss[0]),
        &FusionConfig::default(),
    )
    .unwrap()
}

fn attitude_error(a: &Attitude, b: &Attitude) -> f64 {
    (a.quaternion() * b.quaternion().inverse()).angle()
}

#[test]
fn noise_free_run_tracks_truth() {
    let mut scenario = Scenario::default_drive();
    scenario.gnss = GnssAccuracy::perfect();
    let params = SensorParams::noiseless();
    let sim = simulate_with_seed(&scenario, &params, 0).unwrap();
    let init = InitialAttitude::new(scenario.roll, scenario.pitch, scenario.yaw);
    let out = run(&sim, &params, &init);
    assert!(!out.diverged());
    assert_eq!(out.states.len(), sim.imu.len());
    let (mut dr, mut dv, mut da) = (0.0f64, 0.0f64, 0.0f64);
    for (s, t) in out.states.iter().zip(&sim.truth[1..]) {
        assert_eq!(s.t, t.t);
        dr = dr.max(geodetic_difference_ned(&s.position, &t.position).norm());
        dv = dv.max((s.velocity - t.velocity).norm());
        da = da.max(attitude_error(&s.attitude, &t.attitude));
    }
    assert!(
        dr < 1e-3 && dv < 1e-4 && da < 1e-6,
        "position {dr:e} velocity {dv:e} attitude {da:e}"
    );
    assert_eq!(out.innovations.len(), sim.gnss.len() - 1);
    for e in &out.innovations {
        assert!(
            e.innovation.dy.amax() < 1e-3,
            "innovation {:?}",
            e.innovation.dy
        );
    }
}

#[test]
fn fusion_is_deterministic() {
    let scenario = Scenario::default_drive();
    let params = SensorParams::consumer_grade();
    let sim = simulate_with_seed(&scenario, &params, 4).unwrap();
    let init = InitialAttitude::new(scenario.roll + 0.01, scenario.pitch, scenario.yaw - 0.02);
    let a = run(&sim, &params, &init);
    let b = run(&sim, &params, &init);
    assert_eq!(a, b);
}

fn rich_minute(seed: u64) -> Scenario {
    let mut s = Scenario::default_drive();
    s.imu_rate = 50.0;
    s.gnss_rate = 5.0;
    s.seed = seed;
    s.segments = vec![
        Segment::Accelerate {
            duration: 10.0,
            speed: 6.0,
        },
        Segment::Turn {
            duration: 20.0,
            angle: 1.5,
        },
        Segment::Straight { duration: 10.0 },
        Segment::Turn {
            duration: 20.0,
            angle: -1.5,
        },
    ];
    s
}

/// Attitude error after a closed-loop minute is smaller than the injected one.
#[test]
fn closed_loop_reduces_injected_attitude_error() {
    let params = SensorParams::consumer_grade();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut improved = 0;
    for seed in 0..100 {
        let scenario = rich_minute(seed);
        let sim = simulate_with_seed(&scenario, &params, seed).unwrap();
        let axis = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
        let injected = UnitQuaternion::from_scaled_axis(axis * 1f64.to_radians())
            * sim.truth[0].attitude.quaternion();
        let start = Attitude::from_quaternion(injected.into_inner()).unwrap();
        let e = start.to_euler();
        let mut init = InitialAttitude::new(e.roll, e.pitch, e.yaw);
        init.covariance = nalgebra::Matrix3::identity() * 1f64.to_radians().powi(2);
        let out = run(&sim, &params, &init);
        assert!(!out.diverged());
        let before = attitude_error(&start, &sim.truth[0].attitude);
        let last: &NavState = out.states.last().unwrap();
        let after = attitude_error(&last.attitude, &sim.truth.last().unwrap().attitude);
        if after < before {
            improved += 1;
        }
    }
    assert!(improved >= 95, "{improved}/100 trials improved");
}
