//! Command-line front end for the GNSS/INS toolkit.
//!
//! Exit codes: 0 success, 2 input error, 3 filter divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use gnss_ins::alignment::{align_static, AxisMap, InitialAttitude, YawSource};
use gnss_ins::ekf::{fuse_run, FusionConfig, GnssFix, InitialPv};
use gnss_ins::geo::STANDARD_GRAVITY;
use gnss_ins::io::{
    read_csv_file, write_csv_file, GnssRecord, ImuRecord, InnovationRecord, KeyValues, NavRecord,
};
use gnss_ins::scenario::{
    epsilon_sweep, report, simulate_with_seed, ReportFormat, Scenario, SweepConfig,
};
use gnss_ins::sensors::{estimate_params, ImuSample, SensorParams};
use gnss_ins::Error;

const EXIT_INPUT: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "gnss-ins", version, about = "Loosely coupled GNSS/INS toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify the sensor noise model from a static IMU log.
    Calibrate {
        #[arg(long)]
        imu_log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Local gravity (m/s^2) used to sanity check the log.
        #[arg(long, default_value_t = STANDARD_GRAVITY)]
        gravity: f64,
    },
    /// Estimate the initial attitude from a static IMU log.
    Align {
        #[arg(long)]
        imu_log: PathBuf,
        /// Heading in radians, or `gyrocompass`.
        #[arg(long)]
        yaw: String,
        /// Latitude (rad); required for `--yaw gyrocompass`.
        #[arg(long, allow_hyphen_values = true)]
        latitude: Option<f64>,
        /// Sensor-to-body axis map; identity when omitted.
        #[arg(long)]
        axis_map: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate truth, IMU and GNSS logs for a scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the error-state filter over IMU and GNSS logs.
    Fuse {
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        gnss: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional innovation log.
        #[arg(long)]
        innovations: Option<PathBuf>,
    },
    /// Sweep the initial attitude error over a grid and report RMS deviations.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Report path; the extension selects csv, jsonl or gnuplot (dat).
        #[arg(long)]
        out: PathBuf,
        /// Sensor parameters; consumer-grade defaults when omitted.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Worker threads; 0 uses all cores. Overrides `sweep.jobs`.
        #[arg(long)]
        jobs: Option<usize>,
        /// Report format, overriding the extension.
        #[arg(long)]
        format: Option<String>,
    },
}

/// Outcome of a subcommand that ran to completion.
enum Outcome {
    Done,
    Diverged(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged(msg)) => {
            eprintln!("error: filter diverged: {msg}");
            ExitCode::from(EXIT_DIVERGENCE)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Divergence(_) | Error::NotPositiveSemidefinite(_) | Error::IllConditioned(_),
        ) => EXIT_DIVERGENCE,
        _ => EXIT_INPUT,
    }
}

fn run(cmd: Command) -> anyhow::Result<Outcome> {
    match cmd {
        Command::Calibrate {
            imu_log,
            out,
            gravity,
        } => {
            let log = read_imu(&imu_log)?;
            let params = estimate_params(&log, gravity)?;
            write_kv(&params.to_key_values(), &out)?;
            Ok(Outcome::Done)
        }
        Command::Align {
            imu_log,
            yaw,
            latitude,
            axis_map,
            out,
        } => {
            let map = match axis_map {
                Some(p) => AxisMap::from_key_values(&read_kv(&p)?)?,
                None => AxisMap::default(),
            };
            let log: Vec<ImuSample> = read_imu(&imu_log)?.iter().map(|s| map.apply(s)).collect();
            let source = if yaw.eq_ignore_ascii_case("gyrocompass") {
                let latitude = latitude.ok_or_else(|| {
                    Error::InvalidInput("--yaw gyrocompass needs --latitude".into())
                })?;
                YawSource::Gyrocompass { latitude }
            } else {
                let y: f64 = yaw.parse().map_err(|_| {
                    Error::InvalidInput(format!(
                        "--yaw `{yaw}` is neither a number nor `gyrocompass`"
                    ))
                })?;
                YawSource::Config(y)
            };
            let att = align_static(&log, source)?;
            if att.low_confidence {
                eprintln!("warning: gyrocompass heading has low confidence");
            }
            write_kv(&att.to_key_values(), &out)?;
            Ok(Outcome::Done)
        }
        Command::Simulate {
            scenario,
            params,
            seed,
            out_dir,
        } => {
            let sc = Scenario::from_key_values(&read_kv(&scenario)?)?;
            let params = SensorParams::from_key_values(&read_kv(&params)?)?;
            let sim = simulate_with_seed(&sc, &params, seed.unwrap_or(sc.seed))?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let truth: Vec<NavRecord> = sim.truth.iter().map(NavRecord::from).collect();
            let imu: Vec<ImuRecord> = sim.imu.iter().map(ImuRecord::from).collect();
            let gnss: Vec<GnssRecord> = sim.gnss.iter().map(GnssFix::to_record).collect();
            write_csv_file(out_dir.join("truth.csv"), &truth)?;
            write_csv_file(out_dir.join("imu.csv"), &imu)?;
            write_csv_file(out_dir.join("gnss.csv"), &gnss)?;
            Ok(Outcome::Done)
        }
        Command::Fuse {
            imu,
            gnss,
            params,
            init,
            out,
            innovations,
        } => {
            let imu = read_imu(&imu)?;
            let gnss_records: Vec<GnssRecord> =
                read_csv_file(&gnss).with_context(|| format!("reading {}", gnss.display()))?;
            let fixes = gnss_records
                .iter()
                .map(GnssFix::from_record)
                .collect::<gnss_ins::Result<Vec<_>>>()?;
            let first = fixes
                .first()
                .ok_or_else(|| Error::InvalidInput("GNSS log is empty".into()))?;
            let params = SensorParams::from_key_values(&read_kv(&params)?)?;
            let init = InitialAttitude::from_key_values(&read_kv(&init)?)?;
            let result = fuse_run(
                &imu,
                &fixes,
                &params,
                &init,
                &InitialPv::from_fix(first),
                &FusionConfig::default(),
            )?;
            let nav: Vec<NavRecord> = result.states.iter().map(NavRecord::from).collect();
            write_csv_file(&out, &nav)?;
            if let Some(path) = innovations {
                let rows: Vec<InnovationRecord> = result
                    .innovations
                    .iter()
                    .map(InnovationRecord::from)
                    .collect();
                write_csv_file(&path, &rows)?;
            }
            Ok(match result.divergence {
                Some(msg) => Outcome::Diverged(msg),
                None => Outcome::Done,
            })
        }
        Command::Sweep {
            config,
            out,
            params,
            jobs,
            format,
        } => {
            let params = match params {
                Some(p) => SensorParams::from_key_values(&read_kv(&p)?)?,
                None => SensorParams::consumer_grade(),
            };
            let mut cfg = SweepConfig::from_key_values(&read_kv(&config)?, params)?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let fmt = match format {
                Some(f) => f.parse::<ReportFormat>()?,
                None => ReportFormat::from_path(&out)?,
            };
            let result = epsilon_sweep(&cfg)?;
            std::fs::write(&out, report(&result, fmt)?)
                .with_context(|| format!("writing {}", out.display()))?;
            if result.any_diverged() {
                return Ok(Outcome::Diverged(
                    "one or more sweep runs stopped early".into(),
                ));
            }
            Ok(Outcome::Done)
        }
    }
}

fn read_kv(path: &Path) -> anyhow::Result<KeyValues> {
    KeyValues::read_file(path).with_context(|| format!("reading {}", path.display()))
}

fn write_kv(kv: &KeyValues, path: &Path) -> anyhow::Result<()> {
    kv.write_file(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn read_imu(path: &Path) -> anyhow::Result<Vec<ImuSample>> {
    let rows: Vec<ImuRecord> =
        read_csv_file(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(rows.iter().map(ImuSample::from).collect())
}
