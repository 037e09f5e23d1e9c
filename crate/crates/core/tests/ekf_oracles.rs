mod common;

use common::*;
use gnss_ins::ekf::{build_f, update};
use gnss_ins::sensors::SensorParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn error_dynamics_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = SensorParams::consumer_grade();
    for _ in 0..20 {
        let (nav, sample) = random_operating_point(&mut rng);
        let f_n = nav.attitude.body_to_nav(&sample.specific_force);
        let analytic = build_f(&nav, &f_n, &params).unwrap();
        let numeric = finite_difference_f(&nav, &sample, &params, 0.005);
        let floor = finite_difference_floor(&nav, 0.005);
        assert_eq!(
            worst_mismatch(&analytic, &numeric, &floor, 1e-3, 1e-9),
            None
        );
    }
}

#[test]
fn update_matches_information_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let (fs, model, y) = random_update_instance(&mut rng);
        let (x, p, r) = (fs.x_hat.0, fs.p, model.r);
        let (post, _) = update(&fs, &model, &y).unwrap();
        let (x_ref, p_ref) = information_form_update(&x, &p, &model.h, &r, &y);
        assert!((post.x_hat.0 - x_ref).amax() <= 1e-9 * x_ref.amax());
        assert!((post.p - p_ref).amax() <= 1e-9 * p_ref.amax());
    }
}
