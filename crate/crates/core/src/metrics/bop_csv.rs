use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::geometry::{Mat3, Pose, Vec3};

use super::MetricsError;

pub const BOP_HEADER: [&str; 7] = ["scene_id", "im_id", "obj_id", "score", "R", "t", "time"];

/// One row of a BOP results file. Translation is held in meters and written in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct BopResult {
    pub scene_id: u32,
    pub im_id: u32,
    pub obj_id: u32,
    pub score: f64,
    pub pose: Pose,
    /// Seconds; -1 when unknown.
    pub time: f64,
}

/// Shortest decimal form of `v` rounded to 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".to_string() } else { v.to_string() };
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(format_sig9).collect::<Vec<_>>().join(" ")
}

pub fn write_results_to<W: Write>(writer: W, rows: &[BopResult]) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| MetricsError::Io(std::io::Error::other(e));
    w.write_record(BOP_HEADER).map_err(csv_err)?;
    for r in rows {
        let rot = r.pose.rotation;
        w.write_record([
            r.scene_id.to_string(),
            r.im_id.to_string(),
            r.obj_id.to_string(),
            format_sig9(r.score),
            join((0..3).flat_map(|i| (0..3).map(move |j| rot[(i, j)]))),
            join(r.pose.translation.iter().map(|v| v * 1000.0)),
            format_sig9(r.time),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results(path: &Path, rows: &[BopResult]) -> Result<(), MetricsError> {
    write_results_to(File::create(path)?, rows)
}

fn floats(field: &str, n: usize, what: &str, line: u64) -> Result<Vec<f64>, MetricsError> {
    let values: Vec<f64> = field
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| MetricsError::Format {
            line,
            message: format!("{what}: {e}"),
        })?;
    if values.len() != n {
        return Err(MetricsError::Format {
            line,
            message: format!("{what} needs {n} values, got {}", values.len()),
        });
    }
    Ok(values)
}

pub fn read_results_from<R: Read>(reader: R) -> Result<Vec<BopResult>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| MetricsError::Format {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != BOP_HEADER {
        return Err(MetricsError::Format {
            line: 1,
            message: format!("expected header {}", BOP_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| MetricsError::Format {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let fmt = |message: String| MetricsError::Format { line, message };
        let int = |i: usize| rec[i].trim().parse::<u32>().map_err(|e| fmt(format!("{}: {e}", BOP_HEADER[i])));
        let float = |i: usize| rec[i].trim().parse::<f64>().map_err(|e| fmt(format!("{}: {e}", BOP_HEADER[i])));
        let r = floats(&rec[4], 9, "R", line)?;
        let t = floats(&rec[5], 3, "t", line)?;
        out.push(BopResult {
            scene_id: int(0)?,
            im_id: int(1)?,
            obj_id: int(2)?,
            score: float(3)?,
            pose: Pose {
                rotation: Mat3::from_row_slice(&r),
                translation: Vec3::new(t[0], t[1], t[2]) / 1000.0,
            },
            time: float(6)?,
        });
    }
    Ok(out)
}

pub fn read_results(path: &Path) -> Result<Vec<BopResult>, MetricsError> {
    read_results_from(File::open(path)?)
}
