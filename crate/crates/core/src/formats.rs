//! CSV file formats.
//!
//! Every file starts with a schema line `#schema=sins-align.<kind>.v<N>`
//! followed by a header row. Readers accept files without the schema line
//! (for logs recorded by other tools) but reject a schema line naming a
//! different kind or an unsupported version. Angles are radians and all
//! other quantities SI, except in result and trace tables, which report
//! angles in arcminutes.

use std::fs;
use std::path::{Path, PathBuf};

use crate::backtrack::{misalignment, EpochEstimate};
use crate::errmodel::{GnssFix, STATE_DIM};
use crate::error::{Error, Result};
use crate::geokin::{rad_to_arcmin, Dcm, Euler, GeoPosition, Vec3};
use crate::mech::{first_bad_interval, ImuRecord, ImuSample, NavState};

const SCHEMA_PREFIX: &str = "#schema=";
const TOOL: &str = "sins-align";

/// Name, version and columns of one file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schema {
    pub kind: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

impl Schema {
    pub fn tag(&self) -> String {
        format!("{TOOL}.{}.v{}", self.kind, self.version)
    }
}

pub const IMU_SCHEMA: Schema = Schema {
    kind: "imu",
    version: 1,
    columns: &["t", "gx", "gy", "gz", "ax", "ay", "az"],
};

pub const GNSS_SCHEMA: Schema = Schema {
    kind: "gnss",
    version: 1,
    columns: &["t", "ve", "vn", "vu", "lat", "lon", "alt"],
};

pub const TRUTH_SCHEMA: Schema = Schema {
    kind: "truth",
    version: 1,
    columns: &["t", "ve", "vn", "vu", "lat", "lon", "alt", "pitch", "roll", "yaw"],
};

pub const RESULTS_SCHEMA: Schema = Schema {
    kind: "results",
    version: 1,
    columns: &["algorithm", "phi_x_arcmin", "phi_y_arcmin", "phi_z_arcmin"],
};

pub const TRACE_SCHEMA: Schema = Schema {
    kind: "trace",
    version: 1,
    columns: &[
        "pass", "t", "alpha_x_arcmin", "alpha_y_arcmin", "alpha_z_arcmin", "err_x_arcmin",
        "err_y_arcmin", "err_z_arcmin", "p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8",
        "p9", "p10", "p11", "p12", "p13", "p14",
    ],
};

fn ingest(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Splits off and checks the schema line. Returns the remaining text and
/// the number of lines consumed.
fn strip_schema<'a>(path: &Path, text: &'a str, schema: &Schema) -> Result<(&'a str, u64)> {
    let Some(rest) = text.strip_prefix(SCHEMA_PREFIX) else {
        return Ok((text, 0));
    };
    let (tag, body) = rest.split_once('\n').unwrap_or((rest, ""));
    let tag = tag.trim_end_matches('\r').trim();
    if tag != schema.tag() {
        let hint = match tag.strip_prefix(&format!("{TOOL}.{}.v", schema.kind)) {
            Some(v) => format!(
                "unsupported {} schema version {v}; this build reads version {}",
                schema.kind, schema.version
            ),
            None => format!(
                "expected a {} file ({}) but the schema line says {tag:?}",
                schema.kind,
                schema.tag()
            ),
        };
        return Err(ingest(path, 1, hint));
    }
    Ok((body, 1))
}

/// Reads a table of `schema`'s columns. Returns each row's file line number
/// and its fields.
fn read_table(path: &Path, schema: &Schema) -> Result<Vec<(u64, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (body, offset) = strip_schema(path, &text, schema)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| ingest(path, offset + 1, e.to_string()))?
        .clone();
    if header.is_empty() {
        return Err(ingest(path, offset + 1, "missing header row"));
    }
    let got: Vec<&str> = header.iter().collect();
    if got != schema.columns {
        return Err(ingest(
            path,
            offset + 1,
            format!("header {:?} does not match expected {:?}", got.join(","), schema.columns.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            ingest(path, offset + line, e.to_string())
        })?;
        let line = offset + rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

fn parse_numbers(path: &Path, schema: &Schema, line: u64, fields: &[String]) -> Result<Vec<f64>> {
    fields
        .iter()
        .zip(schema.columns)
        .map(|(f, col)| {
            let v: f64 = f
                .parse()
                .map_err(|_| ingest(path, line, format!("column {col}: {f:?} is not a number")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(ingest(path, line, format!("column {col}: value {f} is not finite")))
            }
        })
        .collect()
}

fn read_numeric(path: &Path, schema: &Schema) -> Result<Vec<(u64, Vec<f64>)>> {
    read_table(path, schema)?
        .into_iter()
        .map(|(line, fields)| Ok((line, parse_numbers(path, schema, line, &fields)?)))
        .collect()
}

fn position(path: &Path, line: u64, lat: f64, lon: f64, alt: f64) -> Result<GeoPosition> {
    GeoPosition::new(lat, lon, alt).map_err(|e| ingest(path, line, e.to_string()))
}

/// Reads an IMU record. The sample interval is taken from the first two
/// rows and every later interval must match it.
pub fn read_imu(path: &Path) -> Result<ImuRecord> {
    let rows = read_numeric(path, &IMU_SCHEMA)?;
    if rows.len() < 2 {
        return Err(ingest(path, rows.first().map_or(1, |r| r.0), "need at least two IMU samples"));
    }
    let samples: Vec<ImuSample> = rows
        .iter()
        .map(|(_, v)| ImuSample::new(v[0], Vec3::new(v[1], v[2], v[3]), Vec3::new(v[4], v[5], v[6])))
        .collect();
    let dt = samples[1].t - samples[0].t;
    if !(dt > 0.0) {
        return Err(ingest(path, rows[1].0, format!("time does not increase (t = {})", samples[1].t)));
    }
    if let Some(k) = first_bad_interval(&samples, dt) {
        return Err(ingest(
            path,
            rows[k + 1].0,
            format!(
                "non-uniform sampling: interval {} differs from {dt}",
                samples[k + 1].t - samples[k].t
            ),
        ));
    }
    ImuRecord::new(samples, dt)
}

pub fn read_gnss(path: &Path) -> Result<Vec<GnssFix>> {
    let rows = read_numeric(path, &GNSS_SCHEMA)?;
    if rows.is_empty() {
        return Err(ingest(path, 1, "no GNSS fixes"));
    }
    let mut out: Vec<GnssFix> = Vec::with_capacity(rows.len());
    for (line, v) in &rows {
        if let Some(prev) = out.last() {
            if v[0] <= prev.t {
                return Err(ingest(path, *line, format!("time {} does not follow {}", v[0], prev.t)));
            }
        }
        out.push(GnssFix {
            t: v[0],
            vel: Vec3::new(v[1], v[2], v[3]),
            pos: position(path, *line, v[4], v[5], v[6])?,
        });
    }
    Ok(out)
}

pub fn read_truth(path: &Path) -> Result<Vec<NavState>> {
    let rows = read_numeric(path, &TRUTH_SCHEMA)?;
    if rows.is_empty() {
        return Err(ingest(path, 1, "no truth rows"));
    }
    rows.iter()
        .map(|(line, v)| {
            Ok(NavState {
                t: v[0],
                att: Dcm::from_euler(Euler::new(v[7], v[8], v[9])),
                vel: Vec3::new(v[1], v[2], v[3]),
                pos: position(path, *line, v[4], v[5], v[6])?,
            })
        })
        .collect()
}

/// One row of a result table: per-axis misalignment in arcmin.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: String,
    pub phi: [f64; 3],
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut out: Vec<ResultRow> = Vec::new();
    for (line, fields) in read_table(path, &RESULTS_SCHEMA)? {
        let algorithm = fields[0].clone();
        if algorithm.is_empty() {
            return Err(ingest(path, line, "empty algorithm name"));
        }
        if out.iter().any(|r| r.algorithm == algorithm) {
            return Err(ingest(path, line, format!("duplicate algorithm {algorithm:?}")));
        }
        let mut phi = [0.0; 3];
        for k in 0..3 {
            let col = RESULTS_SCHEMA.columns[k + 1];
            // NaN marks an algorithm whose runs all diverged
            phi[k] = fields[k + 1]
                .parse()
                .map_err(|_| ingest(path, line, format!("column {col}: {:?} is not a number", fields[k + 1])))?;
        }
        out.push(ResultRow { algorithm, phi });
    }
    Ok(out)
}

fn render(schema: &Schema, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = format!("{SCHEMA_PREFIX}{}\n", schema.tag()).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| Error::Structure(format!("CSV encoding: {e}"));
        w.write_record(columns).map_err(csv_err)?;
        for row in rows {
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Structure(format!("CSV encoding: {e}")))?;
    }
    Ok(buf)
}

fn nums(values: impl IntoIterator<Item = f64>) -> Vec<String> {
    values.into_iter().map(|v| v.to_string()).collect()
}

pub fn render_imu(record: &ImuRecord) -> Result<Vec<u8>> {
    render(
        &IMU_SCHEMA,
        IMU_SCHEMA.columns,
        record.samples().iter().map(|s| {
            nums([s.t, s.gyro[0], s.gyro[1], s.gyro[2], s.accel[0], s.accel[1], s.accel[2]])
        }),
    )
}

pub fn render_gnss(fixes: &[GnssFix]) -> Result<Vec<u8>> {
    render(
        &GNSS_SCHEMA,
        GNSS_SCHEMA.columns,
        fixes.iter().map(|f| {
            nums([f.t, f.vel.x, f.vel.y, f.vel.z, f.pos.lat, f.pos.lon, f.pos.alt])
        }),
    )
}

pub fn render_truth(states: &[NavState]) -> Result<Vec<u8>> {
    render(
        &TRUTH_SCHEMA,
        TRUTH_SCHEMA.columns,
        states.iter().map(|s| {
            let e = s.att.to_euler();
            nums([
                s.t, s.vel.x, s.vel.y, s.vel.z, s.pos.lat, s.pos.lon, s.pos.alt, e.pitch, e.roll,
                e.yaw,
            ])
        }),
    )
}

pub fn render_results(rows: &[ResultRow]) -> Result<Vec<u8>> {
    render(
        &RESULTS_SCHEMA,
        RESULTS_SCHEMA.columns,
        rows.iter().map(|r| {
            let mut v = vec![r.algorithm.clone()];
            v.extend(nums(r.phi));
            v
        }),
    )
}

/// One filter epoch of one pass, angles in arcmin.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub pass: usize,
    /// Forward-time epoch, s.
    pub t: f64,
    pub alpha: [f64; 3],
    /// Misalignment of the corrected attitude against the truth, when known.
    pub error: Option<[f64; 3]>,
    /// Covariance diagonal in state units.
    pub cov_diag: [f64; STATE_DIM],
}

fn arcmin3(v: &Vec3) -> [f64; 3] {
    [rad_to_arcmin(v.x), rad_to_arcmin(v.y), rad_to_arcmin(v.z)]
}

/// Truth state nearest to `t` on a uniform grid, if within half a step.
pub fn truth_at(truth: &[NavState], t: f64) -> Option<&NavState> {
    let first = truth.first()?;
    let dt = match truth.get(1) {
        Some(s) => s.t - first.t,
        None => return ((t - first.t).abs() < 1e-6).then_some(first),
    };
    let k = ((t - first.t) / dt).round();
    if k < 0.0 {
        return None;
    }
    truth.get(k as usize).filter(|s| (s.t - t).abs() <= 0.5 * dt)
}

/// Trace rows for an alignment trace, joined with `truth` when given.
pub fn trace_rows(trace: &[(usize, EpochEstimate)], truth: Option<&[NavState]>) -> Vec<TraceRow> {
    trace
        .iter()
        .map(|(pass, e)| TraceRow {
            pass: *pass,
            t: e.t,
            alpha: arcmin3(&e.alpha),
            error: truth
                .and_then(|tr| truth_at(tr, e.t))
                .map(|s| arcmin3(&misalignment(&e.attitude, &s.att))),
            cov_diag: e.cov_diag.into(),
        })
        .collect()
}

/// Renders trace rows. Error columns are dropped when no row has them.
pub fn render_trace(rows: &[TraceRow]) -> Result<Vec<u8>> {
    let with_truth = rows.iter().any(|r| r.error.is_some());
    let columns: Vec<&str> = TRACE_SCHEMA
        .columns
        .iter()
        .copied()
        .filter(|c| with_truth || !c.starts_with("err_"))
        .collect();
    render(
        &TRACE_SCHEMA,
        &columns,
        rows.iter().map(|r| {
            let mut v = vec![r.pass.to_string(), r.t.to_string()];
            v.extend(nums(r.alpha));
            if with_truth {
                match r.error {
                    Some(e) => v.extend(nums(e)),
                    None => v.extend(["", "", ""].map(String::from)),
                }
            }
            v.extend(nums(r.cov_diag));
            v
        }),
    )
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn imu_without_schema_line_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "imu.csv",
            "t,gx,gy,gz,ax,ay,az\n0.01,0,0,0,0,0,9.8\n0.02,0,0,0,0,0,9.8\n",
        );
        let r = read_imu(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r.dt() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn nonuniform_imu_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "imu.csv",
            "#schema=sins-align.imu.v1\nt,gx,gy,gz,ax,ay,az\n0.01,0,0,0,0,0,9.8\n0.02,0,0,0,0,0,9.8\n0.04,0,0,0,0,0,9.8\n",
        );
        match read_imu(&p) {
            Err(Error::Ingest { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "gnss.csv",
            "t,ve,vn,vu,lat,lon,alt\n0,0,0,0,0.5,1.9,10\n1,0,x,0,0.5,1.9,10\n",
        );
        let err = read_gnss(&p).unwrap_err();
        assert!(matches!(err, Error::Ingest { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("vn"));
    }

    #[test]
    fn unknown_schema_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "gnss.csv", "#schema=sins-align.gnss.v9\nt,ve,vn,vu,lat,lon,alt\n");
        let err = read_gnss(&p).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
        let p = write(dir.path(), "imu.csv", "#schema=sins-align.gnss.v1\nt,gx,gy,gz,ax,ay,az\n");
        assert!(read_imu(&p).unwrap_err().to_string().contains("expected a imu file"));
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "imu.csv", "t,wx,wy,wz,ax,ay,az\n0.01,0,0,0,0,0,9.8\n");
        assert!(matches!(read_imu(&p), Err(Error::Ingest { line: 1, .. })));
    }

    #[test]
    fn gnss_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let fixes = vec![
            GnssFix {
                t: 0.0,
                vel: Vec3::new(0.1, 10.0 / 3.0, -1e-9),
                pos: GeoPosition::new(0.5235987755982988, 1.9896753472735358, 50.0).unwrap(),
            },
            GnssFix {
                t: 1.0,
                vel: Vec3::new(0.2, 10.0, 0.0),
                pos: GeoPosition::new(0.5235989, 1.9896753472735358, 50.5).unwrap(),
            },
        ];
        let p = dir.path().join("gnss.csv");
        write_atomic(&p, &render_gnss(&fixes).unwrap()).unwrap();
        assert_eq!(read_gnss(&p).unwrap(), fixes);
    }

    #[test]
    fn results_round_trip_with_nan() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            ResultRow { algorithm: "NMBT".into(), phi: [0.3, 0.25, 5.5] },
            ResultRow { algorithm: "LM".into(), phi: [f64::NAN, 1.0, 2.0] },
        ];
        let p = dir.path().join("r.csv");
        write_atomic(&p, &render_results(&rows).unwrap()).unwrap();
        let back = read_results(&p).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].phi[0].is_nan());
    }

    #[test]
    fn trace_drops_error_columns_without_truth() {
        let row = TraceRow {
            pass: 0,
            t: 1.0,
            alpha: [1.0, 2.0, 3.0],
            error: None,
            cov_diag: [0.0; STATE_DIM],
        };
        let text = String::from_utf8(render_trace(&[row]).unwrap()).unwrap();
        let header = text.lines().nth(1).unwrap();
        assert!(!header.contains("err_x"));
        assert_eq!(header.split(',').count(), TRACE_SCHEMA.columns.len() - 3);
    }
}
