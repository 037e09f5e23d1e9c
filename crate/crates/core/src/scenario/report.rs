use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;

use super::SweepResult;
use crate::error::{invalid, Error, Result};

const AXES: [&str; 3] = ["roll", "pitch", "yaw"];

/// Output format of [`report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    JsonLines,
    Gnuplot,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json-lines" => Ok(Self::JsonLines),
            "gnuplot" | "gnuplot-data" | "dat" => Ok(Self::Gnuplot),
            other => invalid(format!(
                "unknown report format `{other}` (csv, jsonl, gnuplot)"
            )),
        }
    }
}

impl ReportFormat {
    /// Format implied by a file extension, defaulting to CSV.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            None => Ok(Self::Csv),
            Some(ext) => ext.parse(),
        }
    }
}

fn diverged_seeds(r: &SweepResult, e: usize) -> String {
    r.seeds
        .iter()
        .zip(&r.diverged[e])
        .filter(|(_, d)| **d)
        .map(|(s, _)| s.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Serialize)]
struct SeedEntry {
    seed: u64,
    rms_rad: f64,
    rms_deg: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct JsonRow<'a> {
    epsilon_rad: f64,
    epsilon_deg: f64,
    axis: &'a str,
    mean_rad: f64,
    mean_deg: f64,
    seeds: Vec<SeedEntry>,
}

/// Renders a sweep result: one row per (epsilon, axis) with the mean and
/// every seed's value, in radians and degrees.
pub fn report(r: &SweepResult, format: ReportFormat) -> Result<String> {
    if r.epsilons.is_empty() {
        return invalid("empty sweep result");
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec![
                "epsilon_rad".to_string(),
                "epsilon_deg".into(),
                "axis".into(),
                "mean_rad".into(),
                "mean_deg".into(),
            ];
            for s in &r.seeds {
                header.push(format!("seed_{s}_rad"));
                header.push(format!("seed_{s}_deg"));
            }
            header.push("diverged_seeds".into());
            w.write_record(&header)?;
            for (e, eps) in r.epsilons.iter().enumerate() {
                for (a, axis) in AXES.iter().enumerate() {
                    let mean = r.mean[e][a];
                    let mut row = vec![
                        eps.to_string(),
                        eps.to_degrees().to_string(),
                        axis.to_string(),
                        mean.to_string(),
                        mean.to_degrees().to_string(),
                    ];
                    for v in &r.rms[e] {
                        row.push(v[a].to_string());
                        row.push(v[a].to_degrees().to_string());
                    }
                    row.push(diverged_seeds(r, e));
                    w.write_record(&row)?;
                }
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::InvalidInput(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
        }
        ReportFormat::JsonLines => {
            let mut out = String::new();
            for (e, eps) in r.epsilons.iter().enumerate() {
                for (a, axis) in AXES.iter().enumerate() {
                    let row = JsonRow {
                        epsilon_rad: *eps,
                        epsilon_deg: eps.to_degrees(),
                        axis,
                        mean_rad: r.mean[e][a],
                        mean_deg: r.mean[e][a].to_degrees(),
                        seeds: r
                            .seeds
                            .iter()
                            .zip(&r.rms[e])
                            .zip(&r.diverged[e])
                            .map(|((s, v), d)| SeedEntry {
                                seed: *s,
                                rms_rad: v[a],
                                rms_deg: v[a].to_degrees(),
                                diverged: *d,
                            })
                            .collect(),
                    };
                    out.push_str(
                        &serde_json::to_string(&row)
                            .map_err(|e| Error::InvalidInput(e.to_string()))?,
                    );
                    out.push('\n');
                }
            }
            Ok(out)
        }
        ReportFormat::Gnuplot => {
            // One data block per axis, separated by two blank lines (gnuplot `index`).
            let mut out = String::new();
            for (a, axis) in AXES.iter().enumerate() {
                if a > 0 {
                    out.push_str("\n\n");
                }
                let seeds: Vec<String> = r.seeds.iter().map(|s| format!("seed_{s}_deg")).collect();
                let _ = writeln!(out, "# {axis}: epsilon_deg mean_deg {}", seeds.join(" "));
                for (e, eps) in r.epsilons.iter().enumerate() {
                    let _ = write!(out, "{} {}", eps.to_degrees(), r.mean[e][a].to_degrees());
                    for v in &r.rms[e] {
                        let _ = write!(out, " {}", v[a].to_degrees());
                    }
                    out.push('\n');
                }
            }
            Ok(out)
        }
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{s}` is not a number"),
    })
}

/// Reads back a CSV report produced by [`report`].
pub fn parse_csv_report(text: &str) -> Result<SweepResult> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let n = header.len();
    if n < 6
        || (n - 6) % 2 != 0
        || &header[0] != "epsilon_rad"
        || &header[n - 1] != "diverged_seeds"
    {
        return invalid("not a sweep CSV report");
    }
    let seeds: Vec<u64> = (5..n - 1)
        .step_by(2)
        .map(|i| {
            header[i]
                .strip_prefix("seed_")
                .and_then(|s| s.strip_suffix("_rad"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("bad seed column `{}`", &header[i])))
        })
        .collect::<Result<_>>()?;
    let mut r = SweepResult {
        epsilons: Vec::new(),
        seeds,
        rms: Vec::new(),
        diverged: Vec::new(),
        mean: Vec::new(),
    };
    let mut rows = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows += 1;
        let line = k + 2;
        let axis = k % 3;
        if rec[2] != *AXES[axis] {
            return invalid(format!("line {line}: expected axis {}", AXES[axis]));
        }
        let eps = parse_f64(&rec[0], line)?;
        if axis == 0 {
            r.epsilons.push(eps);
            r.rms.push(vec![[0.0; 3]; r.seeds.len()]);
            r.mean.push([0.0; 3]);
            let div: Vec<&str> = rec[n - 1].split(';').filter(|s| !s.is_empty()).collect();
            r.diverged.push(
                r.seeds
                    .iter()
                    .map(|s| div.contains(&s.to_string().as_str()))
                    .collect(),
            );
        } else if r.epsilons.last() != Some(&eps) {
            return invalid(format!("line {line}: epsilon changes within a block"));
        }
        let e = r.epsilons.len() - 1;
        r.mean[e][axis] = parse_f64(&rec[3], line)?;
        for s in 0..r.seeds.len() {
            r.rms[e][s][axis] = parse_f64(&rec[5 + 2 * s], line)?;
        }
    }
    if rows == 0 || rows % 3 != 0 {
        return invalid("empty or truncated sweep report");
    }
    Ok(r)
}
