use crate::error::{invalid, Error, Result};

/// Allan deviation at one cluster time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllanPoint {
    /// Cluster time actually used, `m / sample_rate` (s).
    pub cluster_time: f64,
    pub deviation: f64,
}

impl AllanPoint {
    pub fn variance(&self) -> f64 {
        self.deviation * self.deviation
    }
}

/// Log-spaced cluster times from one sample up to half the series length,
/// `per_decade` points per decade, deduplicated after rounding to whole samples.
pub fn log_cluster_times(len: usize, sample_rate: f64, per_decade: usize) -> Vec<f64> {
    let max_m = len / 2;
    if max_m == 0 || per_decade == 0 {
        return Vec::new();
    }
    let decades = (max_m as f64).log10();
    let steps = (decades * per_decade as f64).floor() as usize;
    let mut sizes: Vec<usize> = (0..=steps)
        .map(|i| 10f64.powf(i as f64 / per_decade as f64).round() as usize)
        .filter(|&m| m >= 1 && m <= max_m)
        .collect();
    sizes.dedup();
    sizes.into_iter().map(|m| m as f64 / sample_rate).collect()
}

/// Overlapping Allan deviation of a uniformly sampled series.
pub fn allan_deviation(
    series: &[f64],
    sample_rate: f64,
    cluster_times: &[f64],
) -> Result<Vec<AllanPoint>> {
    if !(sample_rate > 0.0) {
        return invalid(format!("sample rate must be positive, got {sample_rate}"));
    }
    let sizes: Vec<usize> = cluster_times
        .iter()
        .map(|&tau| {
            if tau > 0.0 && tau.is_finite() {
                Ok(((tau * sample_rate).round() as usize).max(1))
            } else {
                invalid(format!("cluster time must be positive, got {tau}"))
            }
        })
        .collect::<Result<_>>()?;
    let Some(&max_m) = sizes.iter().max() else {
        return Ok(Vec::new());
    };
    let n = series.len();
    if n < 2 * max_m {
        return Err(Error::TooShort {
            required: 2 * max_m,
            actual: n,
        });
    }

    // Integrated phase; the offset keeps constant series exactly flat.
    let x0 = series[0];
    let dt = 1.0 / sample_rate;
    let mut theta = Vec::with_capacity(n + 1);
    theta.push(0.0);
    let mut acc = 0.0;
    for &x in series {
        acc += (x - x0) * dt;
        theta.push(acc);
    }

    Ok(sizes
        .iter()
        .map(|&m| {
            let tau = m as f64 * dt;
            let terms = n + 1 - 2 * m;
            let sum: f64 = (0..terms)
                .map(|k| {
                    let d = theta[k + 2 * m] - 2.0 * theta[k + m] + theta[k];
                    d * d
                })
                .sum();
            let avar = sum / (2.0 * tau * tau * terms as f64);
            AllanPoint {
                cluster_time: tau,
                deviation: avar.sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_series_is_zero() {
        let s = vec![0.1; 1000];
        let pts = allan_deviation(&s, 100.0, &[0.01, 0.1, 1.0, 5.0]).unwrap();
        assert!(pts.iter().all(|p| p.deviation == 0.0));
    }

    #[test]
    fn too_short_reports_required_length() {
        let s = vec![0.0; 100];
        match allan_deviation(&s, 10.0, &[6.0]) {
            Err(Error::TooShort { required, actual }) => {
                assert_eq!((required, actual), (120, 100));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn white_noise_identity_and_slope() {
        let rate: f64 = 100.0;
        let density = 2.5e-3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sigma = density * rate.sqrt();
        let s: Vec<f64> = (0..720_000)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let pts = allan_deviation(&s, rate, &[1.0]).unwrap();
        assert!((pts[0].deviation / density - 1.0).abs() < 0.05);

        let taus: Vec<f64> = log_cluster_times(s.len(), rate, 30)
            .into_iter()
            .filter(|t| (0.1..=10.0).contains(t))
            .collect();
        let pts = allan_deviation(&s, rate, &taus).unwrap();
        let xs: Vec<f64> = pts.iter().map(|p| p.cluster_time.ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.deviation.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((-0.55..=-0.45).contains(&slope), "slope {slope}");
    }

    #[test]
    fn gauss_markov_peak_location() {
        let rate = 10.0;
        let tau: f64 = 30.0;
        let dt = 1.0 / rate;
        let phi = (-dt / tau).exp();
        let q: f64 = dt; // unit driving density
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = 0.0;
        let s: Vec<f64> = (0..(4 * 3600 * 10))
            .map(|_| {
                b = phi * b + q.sqrt() * rng.sample::<f64, _>(StandardNormal);
                b
            })
            .collect();
        let taus = log_cluster_times(s.len(), rate, 30);
        let pts = allan_deviation(&s, rate, &taus).unwrap();
        let peak = pts
            .iter()
            .filter(|p| p.cluster_time < 600.0)
            .max_by(|a, b| a.deviation.total_cmp(&b.deviation))
            .unwrap();
        let expected = 1.89 * tau;
        assert!(
            (peak.cluster_time / expected - 1.0).abs() < 0.3,
            "peak at {} s",
            peak.cluster_time
        );
    }

    #[test]
    fn log_grid_is_increasing_and_bounded() {
        let taus = log_cluster_times(7200 * 100, 100.0, 30);
        assert!(taus.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(taus[0], 0.01);
        assert!(*taus.last().unwrap() <= 3600.0);
    }
}
