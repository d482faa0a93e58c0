//! Columnar episode log: `#`-prefixed metadata lines, one CSV header row, then
//! one row per controller tick. Floats are written in shortest round-trip form
//! so a reloaded log reproduces every metric bit for bit.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::geom::{unvec9, Rotation};
use crate::nominal::TemplateState;
use crate::plant::{PlantState, N_FEET};
use crate::residual::TransitionLog;

pub const LOG_FORMAT_VERSION: u32 = 1;
pub const LOG_MAGIC: &str = "rkmpc-episode-log";

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// `[p; Θ; v; ω]`
    pub x: [f64; 12],
    /// Attitude matrix, column-major.
    pub r: [f64; 9],
    pub u_cmd: [f64; 12],
    /// Applied forces averaged over the plant substeps of the tick.
    pub u_applied: [f64; 12],
    pub stance: [bool; N_FEET],
    pub arms_planned: [f64; 12],
    pub arms_realized: [f64; 12],
    /// Planar command `(v_x, v_y, ω_z)`.
    pub cmd: [f64; 3],
    /// First-stage reference `(x, y, z, yaw, v_x, v_y, ω_z)`.
    pub reference: [f64; 7],
    pub qp_status: u8,
    pub fallback: bool,
    pub qp_iterations: u32,
    pub attitude_orth: f64,
}

fn names(prefix: &str, parts: &[&str]) -> Vec<String> {
    parts.iter().map(|p| format!("{prefix}{p}")).collect()
}

fn leg_xyz(prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    for leg in crate::gait::LEG_NAMES {
        for a in ["x", "y", "z"] {
            out.push(format!("{prefix}{leg}_{a}"));
        }
    }
    out
}

/// Column names in file order.
pub fn columns() -> Vec<String> {
    let mut c = vec!["t".to_string()];
    c.extend(names("", &["px", "py", "pz", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz"]));
    c.extend(names("r", &["00", "10", "20", "01", "11", "21", "02", "12", "22"]));
    c.extend(leg_xyz("fcmd_"));
    c.extend(leg_xyz("fapp_"));
    c.extend(crate::gait::LEG_NAMES.iter().map(|l| format!("stance_{l}")));
    c.extend(leg_xyz("arm_plan_"));
    c.extend(leg_xyz("arm_real_"));
    c.extend(names("cmd_", &["vx", "vy", "wz"]));
    c.extend(names("ref_", &["x", "y", "z", "yaw", "vx", "vy", "wz"]));
    c.extend(names("", &["qp_status", "fallback", "qp_iterations", "attitude_orth"]));
    c
}

impl LogRow {
    fn to_record(&self) -> Vec<String> {
        let f = |v: &f64| format!("{v}");
        let mut r = vec![f(&self.t)];
        r.extend(self.x.iter().map(f));
        r.extend(self.r.iter().map(f));
        r.extend(self.u_cmd.iter().map(f));
        r.extend(self.u_applied.iter().map(f));
        r.extend(self.stance.iter().map(|&s| (s as u8).to_string()));
        r.extend(self.arms_planned.iter().map(f));
        r.extend(self.arms_realized.iter().map(f));
        r.extend(self.cmd.iter().map(f));
        r.extend(self.reference.iter().map(f));
        r.push(self.qp_status.to_string());
        r.push((self.fallback as u8).to_string());
        r.push(self.qp_iterations.to_string());
        r.push(f(&self.attitude_orth));
        r
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        let mut it = rec.iter();
        let mut next = || it.next().ok_or_else(|| Error::Format("short log row".into()));
        let mut float = || -> Result<f64> { next()?.parse::<f64>().map_err(|e| Error::Format(format!("bad number: {e}"))) };
        let t = float()?;
        let mut arr = |n: usize, out: &mut [f64]| -> Result<()> {
            for v in out.iter_mut().take(n) {
                *v = float()?;
            }
            Ok(())
        };
        let mut row = LogRow::empty(t);
        arr(12, &mut row.x)?;
        arr(9, &mut row.r)?;
        arr(12, &mut row.u_cmd)?;
        arr(12, &mut row.u_applied)?;
        let mut st = [0.0; 4];
        arr(4, &mut st)?;
        row.stance = st.map(|v| v != 0.0);
        arr(12, &mut row.arms_planned)?;
        arr(12, &mut row.arms_realized)?;
        arr(3, &mut row.cmd)?;
        arr(7, &mut row.reference)?;
        let mut tail = [0.0; 4];
        arr(4, &mut tail)?;
        row.qp_status = tail[0] as u8;
        row.fallback = tail[1] != 0.0;
        row.qp_iterations = tail[2] as u32;
        row.attitude_orth = tail[3];
        Ok(row)
    }

    pub fn empty(t: f64) -> Self {
        Self {
            t,
            x: [0.0; 12],
            r: [0.0; 9],
            u_cmd: [0.0; 12],
            u_applied: [0.0; 12],
            stance: [false; N_FEET],
            arms_planned: [0.0; 12],
            arms_realized: [0.0; 12],
            cmd: [0.0; 3],
            reference: [0.0; 7],
            qp_status: 0,
            fallback: false,
            qp_iterations: 0,
            attitude_orth: f64::NAN,
        }
    }

    pub fn template(&self) -> TemplateState<f64> {
        let mut x = [1.0; 13];
        x[..12].copy_from_slice(&self.x);
        TemplateState::from_slice(&x).expect("13 entries")
    }

    pub fn plant_state(&self) -> Result<PlantState<f64>> {
        let m = unvec9(&self.r);
        Ok(PlantState {
            p: Vector3::new(self.x[0], self.x[1], self.x[2]),
            r: Rotation::new(m)?,
            v: Vector3::new(self.x[6], self.x[7], self.x[8]),
            omega: Vector3::new(self.x[9], self.x[10], self.x[11]),
        })
    }

    pub fn forces_cmd(&self) -> [Vector3<f64>; N_FEET] {
        std::array::from_fn(|i| Vector3::new(self.u_cmd[3 * i], self.u_cmd[3 * i + 1], self.u_cmd[3 * i + 2]))
    }

    pub fn arms(&self) -> [Vector3<f64>; N_FEET] {
        std::array::from_fn(|i| Vector3::new(self.arms_planned[3 * i], self.arms_planned[3 * i + 1], self.arms_planned[3 * i + 2]))
    }
}

/// Ordered `key=value` metadata written as `# key=value` lines.
pub type LogMeta = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub meta: LogMeta,
    pub rows: Vec<LogRow>,
}

impl EpisodeLog {
    pub fn new(meta: LogMeta) -> Self {
        Self { meta, rows: Vec::new() }
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        writeln!(out, "# {LOG_MAGIC} version={LOG_FORMAT_VERSION}")?;
        for (k, v) in &self.meta {
            if k.contains('=') || k.contains('\n') || v.contains('\n') {
                return Err(Error::Format(format!("metadata entry `{k}` cannot be encoded")));
            }
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(columns())?;
        for r in &self.rows {
            w.write_record(r.to_record())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(File::create(path)?)
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut meta = LogMeta::new();
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let version = first
            .trim()
            .strip_prefix(&format!("# {LOG_MAGIC} version="))
            .ok_or_else(|| Error::Format("not an episode log".into()))?;
        if version != LOG_FORMAT_VERSION.to_string() {
            return Err(Error::Format(format!("unsupported log version {version}")));
        }
        let mut body = String::new();
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                break;
            }
            if let Some(kv) = line.strip_prefix("# ") {
                let (k, v) = kv.trim_end_matches('\n').split_once('=').ok_or_else(|| Error::Format("bad metadata line".into()))?;
                meta.insert(k.to_string(), v.to_string());
            } else {
                body.push_str(&line);
                std::io::Read::read_to_string(&mut reader, &mut body)?;
                break;
            }
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != columns() {
            return Err(Error::Format("log columns do not match this version".into()));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(LogRow::from_record(&rec?)?);
        }
        let log = Self { meta, rows };
        log.check_monotone()?;
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }

    fn check_monotone(&self) -> Result<()> {
        if self.rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Format("timestamps are not increasing".into()));
        }
        Ok(())
    }

    /// Consecutive controller ticks as residual-model transitions.
    pub fn transitions(&self) -> TransitionLog<f64> {
        TransitionLog {
            states: self.rows.iter().map(LogRow::template).collect(),
            inputs: self.rows.iter().map(|r| DVector::from_column_slice(&r.u_cmd)).collect(),
            stance: self.rows.iter().map(|r| r.stance).collect(),
            arms: self.rows.iter().map(LogRow::arms).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EpisodeLog {
        let mut meta = LogMeta::new();
        meta.insert("seed".into(), "7".into());
        meta.insert("status".into(), "completed".into());
        let mut log = EpisodeLog::new(meta);
        for k in 0..5 {
            let mut r = LogRow::empty(k as f64 * 0.01);
            r.x[0] = 0.1 + k as f64 / 3.0;
            r.x[5] = -1e-17;
            r.r = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
            r.stance = [k % 2 == 0, true, false, true];
            r.u_cmd[2] = 31.275;
            r.qp_iterations = k;
            log.rows.push(r);
        }
        log
    }

    #[test]
    fn round_trip_is_exact() {
        let log = sample();
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        let back = EpisodeLog::read(buf.as_slice()).unwrap();
        assert_eq!(back.meta, log.meta);
        assert_eq!(back.rows.len(), log.rows.len());
        for (a, b) in back.rows.iter().zip(&log.rows) {
            assert_eq!(a.x, b.x);
            assert_eq!(a.stance, b.stance);
            assert!(a.attitude_orth.is_nan());
        }
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(EpisodeLog::read("t,x\n1,2\n".as_bytes()).is_err());
        let mut log = sample();
        log.rows[3].t = 0.0;
        let mut buf = Vec::new();
        log.write(&mut buf).unwrap();
        assert!(EpisodeLog::read(buf.as_slice()).is_err());
    }

    #[test]
    fn header_width_matches_rows() {
        assert_eq!(columns().len(), sample().rows[0].to_record().len());
    }
}
