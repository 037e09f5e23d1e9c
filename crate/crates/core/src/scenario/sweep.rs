use rayon::prelude::*;

use super::{rms_deviation, simulate_with_seed, Scenario, Simulation};
use crate::alignment::{inject_epsilon, InitialAttitude};
use crate::ekf::{fuse_run, FusionConfig, FusionOutput, InitialPv};
use crate::error::{invalid, Error, Result};
use crate::io::KeyValues;
use crate::sensors::SensorParams;

/// Shortest scenario accepted for a sweep (s).
pub const MIN_SWEEP_DURATION: f64 = 60.0;

/// Inputs of the initial-attitude sensitivity sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Attitude errors (rad), ascending, starting at zero.
    pub epsilon_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub scenario: Scenario,
    pub params: SensorParams,
    pub init: InitialAttitude,
    pub fusion: FusionConfig,
    /// Worker threads; zero uses all available cores.
    pub jobs: usize,
}

impl SweepConfig {
    /// Zero to 0.1 degree in 0.01 degree steps.
    pub fn default_grid() -> Vec<f64> {
        (0..=10).map(|i| (0.01 * i as f64).to_radians()).collect()
    }

    /// Default grid, seeds `0..10`, the default drive started at its true attitude.
    pub fn new(scenario: Scenario, params: SensorParams) -> Self {
        let init = InitialAttitude::new(scenario.roll, scenario.pitch, scenario.yaw);
        Self {
            epsilon_grid: Self::default_grid(),
            seeds: (0..10).collect(),
            scenario,
            params,
            init,
            fusion: FusionConfig::default(),
            jobs: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let grid = &self.epsilon_grid;
        if grid.is_empty() {
            return invalid("epsilon grid is empty");
        }
        if grid[0] != 0.0 {
            return invalid("epsilon grid must start at 0");
        }
        if grid.iter().any(|e| !e.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("epsilon grid must be finite and strictly ascending");
        }
        if self.seeds.is_empty() {
            return invalid("no seeds");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return invalid("duplicate seeds");
        }
        self.scenario.validate()?;
        if self.scenario.duration() < MIN_SWEEP_DURATION {
            return invalid(format!(
                "sweep scenario lasts {} s, need at least {MIN_SWEEP_DURATION} s",
                self.scenario.duration()
            ));
        }
        self.params.validate()
    }

    /// Reads sweep settings on top of a scenario file:
    /// `sweep.epsilons` (rad list) or `sweep.epsilon_max` and
    /// `sweep.epsilon_step` (rad), `sweep.seeds` (list) or `sweep.seed_count`
    /// and `sweep.first_seed`, and `sweep.jobs`. Sensor parameters are passed in.
    pub fn from_key_values(kv: &KeyValues, params: SensorParams) -> Result<Self> {
        let scenario = Scenario::from_key_values(kv)?;
        let mut cfg = Self::new(scenario, params);
        if let Some(list) = kv.f64_list("sweep.epsilons")? {
            cfg.epsilon_grid = list;
        } else if kv.contains("sweep.epsilon_max") || kv.contains("sweep.epsilon_step") {
            let max = kv.f64("sweep.epsilon_max")?;
            let step = kv.f64("sweep.epsilon_step")?;
            if !(step > 0.0 && max >= 0.0) {
                return invalid(
                    "sweep.epsilon_step must be positive and sweep.epsilon_max non-negative",
                );
            }
            let n = (max / step + 1e-9).floor() as usize;
            cfg.epsilon_grid = (0..=n).map(|i| i as f64 * step).collect();
        }
        if let Some(list) = kv.f64_list("sweep.seeds")? {
            cfg.seeds = list
                .iter()
                .map(|s| {
                    if *s >= 0.0 && s.fract() == 0.0 {
                        Ok(*s as u64)
                    } else {
                        invalid(format!("seed {s} is not a non-negative integer"))
                    }
                })
                .collect::<Result<_>>()?;
        } else {
            let count = kv.u64_or("sweep.seed_count", 10)?;
            let first = kv.u64_or("sweep.first_seed", 0)?;
            cfg.seeds = (first..first + count).collect();
        }
        cfg.jobs = kv.u64_or("sweep.jobs", 0)? as usize;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// RMS attitude deviation of every (epsilon, seed) run against the
/// epsilon = 0 run of the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub epsilons: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `rms[e][s]` = roll, pitch, yaw RMS (rad) for `epsilons[e]`, `seeds[s]`.
    pub rms: Vec<Vec<[f64; 3]>>,
    /// Runs that stopped early; their RMS covers the common prefix only.
    pub diverged: Vec<Vec<bool>>,
    /// Per-epsilon mean over seeds.
    pub mean: Vec<[f64; 3]>,
}

impl SweepResult {
    pub(crate) fn mean_of(rms: &[Vec<[f64; 3]>]) -> Vec<[f64; 3]> {
        rms.iter()
            .map(|row| {
                let mut m = [0.0; 3];
                for r in row {
                    for i in 0..3 {
                        m[i] += r[i];
                    }
                }
                m.map(|v| v / row.len() as f64)
            })
            .collect()
    }

    pub fn any_diverged(&self) -> bool {
        self.diverged.iter().flatten().any(|d| *d)
    }
}

fn run(sim: &Simulation, cfg: &SweepConfig, epsilon: f64) -> Result<FusionOutput> {
    let first = sim
        .gnss
        .first()
        .ok_or_else(|| Error::InvalidInput("scenario produced no GNSS fixes".into()))?;
    fuse_run(
        &sim.imu,
        &sim.gnss,
        &cfg.params,
        &inject_epsilon(&cfg.init, epsilon),
        &InitialPv::from_fix(first),
        &cfg.fusion,
    )
}

fn seed_row(cfg: &SweepConfig, seed: u64) -> Result<Vec<([f64; 3], bool)>> {
    let sim = simulate_with_seed(&cfg.scenario, &cfg.params, seed)?;
    let base = run(&sim, cfg, 0.0)?;
    cfg.epsilon_grid
        .par_iter()
        .map(|&eps| {
            let out = run(&sim, cfg, eps)?;
            let n = out.states.len().min(base.states.len());
            let rms = if n == 0 {
                [f64::INFINITY; 3]
            } else {
                rms_deviation(&out.states[..n], &base.states[..n])?
            };
            Ok((rms, out.diverged() || base.diverged()))
        })
        .collect()
}

/// Runs the sweep. Sensor streams are simulated once per seed and shared by
/// every epsilon, so only the initial attitude differs between runs.
pub fn epsilon_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let rows: Vec<Vec<([f64; 3], bool)>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| seed_row(cfg, seed))
            .collect::<Result<_>>()
    })?;
    let ne = cfg.epsilon_grid.len();
    let rms: Vec<Vec<[f64; 3]>> = (0..ne)
        .map(|e| rows.iter().map(|row| row[e].0).collect())
        .collect();
    let diverged = (0..ne)
        .map(|e| rows.iter().map(|row| row[e].1).collect())
        .collect();
    Ok(SweepResult {
        epsilons: cfg.epsilon_grid.clone(),
        seeds: cfg.seeds.clone(),
        mean: SweepResult::mean_of(&rms),
        rms,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Segment;

    fn short_config() -> SweepConfig {
        let mut s = Scenario::default_drive();
        s.imu_rate = 20.0;
        s.segments = vec![
            Segment::Accelerate {
                duration: 10.0,
                speed: 3.0,
            },
            Segment::Turn {
                duration: 50.0,
                angle: 1.0,
            },
        ];
        let mut cfg = SweepConfig::new(s, SensorParams::consumer_grade());
        cfg.seeds = vec![1, 2];
        cfg.epsilon_grid = vec![0.0, 1e-3];
        cfg.jobs = 2;
        cfg
    }

    #[test]
    fn default_grid() {
        let g = SweepConfig::default_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 0.0);
        assert!((g[10] - 0.1f64.to_radians()).abs() < 1e-18);
    }

    #[test]
    fn grid_validation() {
        let mut cfg = short_config();
        cfg.epsilon_grid = vec![];
        assert!(cfg.validate().is_err());
        cfg.epsilon_grid = vec![1e-4, 2e-4];
        assert!(cfg.validate().is_err());
        cfg.epsilon_grid = vec![0.0, 2e-4, 1e-4];
        assert!(cfg.validate().is_err());
        cfg.epsilon_grid = vec![0.0];
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().is_err());
        cfg.seeds = vec![1];
        cfg.scenario.segments = vec![Segment::Pause { duration: 30.0 }];
        cfg.scenario.speed = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_only_grid_gives_zero() {
        let mut cfg = short_config();
        cfg.epsilon_grid = vec![0.0];
        let r = epsilon_sweep(&cfg).unwrap();
        assert_eq!(r.rms, vec![vec![[0.0; 3]; 2]]);
        assert_eq!(r.mean, vec![[0.0; 3]]);
    }

    #[test]
    fn sweep_is_deterministic_and_job_independent() {
        let mut cfg = short_config();
        let a = epsilon_sweep(&cfg).unwrap();
        cfg.jobs = 1;
        let b = epsilon_sweep(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rms[0], vec![[0.0; 3]; 2]);
        assert!(a.rms[1].iter().all(|r| r.iter().all(|v| *v > 0.0)));
        assert!(!a.any_diverged());
    }

    #[test]
    fn config_file() {
        let text = "sweep.epsilons = 0, 0.001\nsweep.seeds = 4, 5, 6\nsweep.jobs = 3\n";
        let cfg = SweepConfig::from_key_values(
            &KeyValues::parse(text).unwrap(),
            SensorParams::consumer_grade(),
        )
        .unwrap();
        assert_eq!(cfg.epsilon_grid, vec![0.0, 0.001]);
        assert_eq!(cfg.seeds, vec![4, 5, 6]);
        assert_eq!(cfg.jobs, 3);
        let text = "sweep.epsilon_max = 0.003\nsweep.epsilon_step = 0.001\nsweep.seed_count = 2\nsweep.first_seed = 10\n";
        let cfg = SweepConfig::from_key_values(
            &KeyValues::parse(text).unwrap(),
            SensorParams::consumer_grade(),
        )
        .unwrap();
        assert_eq!(cfg.epsilon_grid.len(), 4);
        assert_eq!(cfg.seeds, vec![10, 11]);
        let cfg = SweepConfig::from_key_values(&KeyValues::new(), SensorParams::consumer_grade())
            .unwrap();
        assert_eq!(cfg.epsilon_grid, SweepConfig::default_grid());
        assert_eq!(cfg.seeds.len(), 10);
    }
}
