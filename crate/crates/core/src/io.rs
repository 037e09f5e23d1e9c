//! Flat `key = value` text files and the CSV record layouts shared by the CLI.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered `key = value` document. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::InvalidInput(format!("missing key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| Error::InvalidInput(format!("key `{key}`: `{v}` is not a number")))
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        if self.contains(key) {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::InvalidInput(format!("key `{key}`: `{v}` is not an integer"))),
        }
    }

    /// Comma separated list of numbers.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("key `{key}`: `{s}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }
}

/// One row of an IMU log: `t,gx,gy,gz,ax,ay,az`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuRecord {
    pub t: f64,
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

/// One row of a GNSS log: `t,lat,lon,h,vn,ve,vd,sigma_pos,sigma_vel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnssRecord {
    pub t: f64,
    pub lat: f64,
    pub lon: f64,
    pub h: f64,
    pub vn: f64,
    pub ve: f64,
    pub vd: f64,
    pub sigma_pos: f64,
    pub sigma_vel: f64,
}

/// One row of a navigation solution: `t,roll,pitch,yaw,vn,ve,vd,lat,lon,h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavRecord {
    pub t: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub vn: f64,
    pub ve: f64,
    pub vd: f64,
    pub lat: f64,
    pub lon: f64,
    pub h: f64,
}

/// One row of the innovation log: `t,dy1..dy6,nis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnovationRecord {
    pub t: f64,
    pub dy1: f64,
    pub dy2: f64,
    pub dy3: f64,
    pub dy4: f64,
    pub dy5: f64,
    pub dy6: f64,
    pub nis: f64,
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv_file<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_csv(std::fs::File::open(path)?)
}

pub fn write_csv_file<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    write_csv(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_rejects_garbage() {
        let kv = KeyValues::parse("# header\na = 1.5\n\nb=x # trailing\n").unwrap();
        assert_eq!(kv.f64("a").unwrap(), 1.5);
        assert_eq!(kv.get("b"), Some("x"));
        assert!(kv.f64("b").is_err());
        assert!(KeyValues::parse("no equals sign").is_err());
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn render_parse_identity() {
        let mut kv = KeyValues::new();
        kv.set("gyro.x.random_walk_density", 7.1242e-6);
        kv.set("list", "1, 2,3");
        let back = KeyValues::parse(&kv.render()).unwrap();
        assert_eq!(back, kv);
        assert_eq!(back.f64_list("list").unwrap().unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn imu_csv_header() {
        let mut buf = Vec::new();
        let row = ImuRecord {
            t: 0.01,
            gx: 1.0,
            gy: 2.0,
            gz: 3.0,
            ax: 4.0,
            ay: 5.0,
            az: 6.0,
        };
        write_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,gx,gy,gz,ax,ay,az\n"));
        let back: Vec<ImuRecord> = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, vec![row]);
    }
}
