//! Command-line front end: `simulate`, `align`, `montecarlo`, `compare` and
//! `replay`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtrack::{align, misalignment};
use crate::config::{AlignFile, Axis, MonteCarloFile, ScenarioFile, ToleranceFile};
use crate::errmodel::{cn_to_nprime, GnssFix};
use crate::mech::{ImuRecord, NavState};
use crate::error::{Error, Result};
use crate::formats::{
    read_gnss, read_imu, read_results, read_truth, render_gnss, render_imu, render_results,
    render_trace, render_truth, trace_rows, truth_at, write_atomic, ResultRow,
};
use crate::geokin::{rad_to_arcmin, Dcm, EarthModel, Euler, Vec3, STANDARD_GRAVITY};
use crate::simkit::{
    corrupt_imu, generate_truth, gnss_seed, run_monte_carlo, run_seed, synthesize_gnss,
    synthesize_imu, NamedAlgorithm, RunOutcome,
};

#[derive(Debug, Parser)]
#[command(name = "sins-align", version, about = "GNSS-aided backtracking initial alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate a trajectory and write IMU, GNSS and truth CSVs.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align recorded IMU and GNSS data.
    Align {
        #[arg(long)]
        imu: PathBuf,
        #[arg(long)]
        gnss: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo experiment and write the RMS table.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-run traces under `traces/`.
        #[arg(long)]
        traces: bool,
        /// Restrict to these algorithms (comma separated).
        #[arg(long, value_delimiter = ',')]
        algorithms: Option<Vec<String>>,
    },
    /// Compare a results table against a reference table.
    Compare {
        #[arg(long)]
        got: PathBuf,
        #[arg(long)]
        expected: PathBuf,
        #[arg(long)]
        tolerances: PathBuf,
    },
    /// Rerun the command recorded in a manifest and check its output hashes.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_text: Option<String>,
    pub resolved_config: serde_json::Value,
    pub inputs: Vec<FileHash>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<FileHash>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileHash {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Files produced by a command, written together once every one is ready.
struct Outputs {
    dir: PathBuf,
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    fn commit(self, mut manifest: RunManifest, started: Instant) -> Result<RunManifest> {
        for (name, bytes) in &self.files {
            let path = self.dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_atomic(&path, bytes)?;
            manifest.outputs.push(FileHash {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        manifest.wall_time_s = started.elapsed().as_secs_f64();
        let text = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
        write_atomic(&self.dir.join(MANIFEST_NAME), &text)?;
        Ok(manifest)
    }
}

fn manifest(command: &str, args: Vec<String>) -> RunManifest {
    RunManifest {
        command: command.into(),
        args,
        config_text: None,
        resolved_config: serde_json::Value::Null,
        inputs: Vec::new(),
        seed: None,
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: 0.0,
        outputs: Vec::new(),
    }
}

fn path_arg(p: &Path) -> String {
    p.display().to_string()
}

/// Runs one command, writing human-readable output to `out`. Returns the
/// process exit code for outcomes that are not errors.
pub fn run(command: &Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Simulate { scenario, seed, out: dir } => {
            cmd_simulate(scenario, *seed, dir, out).map(|_| 0)
        }
        Command::Align {
            imu,
            gnss,
            config,
            truth,
            out: dir,
        } => cmd_align(imu, gnss, config, truth.as_deref(), dir, out).map(|_| 0),
        Command::Montecarlo {
            config,
            jobs,
            out: dir,
            traces,
            algorithms,
        } => cmd_montecarlo(config, *jobs, dir, *traces, algorithms.as_deref(), out).map(|_| 0),
        Command::Compare {
            got,
            expected,
            tolerances,
        } => cmd_compare(got, expected, tolerances, out).map(|ok| if ok { 0 } else { 1 }),
        Command::Replay { manifest, out: dir } => cmd_replay(manifest, dir, out).map(|ok| if ok { 0 } else { 1 }),
    }
}

fn io_out(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

/// Simulated IMU record, GNSS fixes and truth at the GNSS epochs. The data
/// equal run 0 of a Monte-Carlo experiment with the same master seed.
pub fn simulate_dataset(file: &ScenarioFile, seed: u64) -> Result<(ImuRecord, Vec<GnssFix>, Vec<NavState>)> {
    let sc = file.scenario();
    let em = sc.earth_model();
    let truth = generate_truth(&sc.segments, sc.dt(), &sc.start_state()?, &em)?;
    let clean = synthesize_imu(&truth, &em)?;
    let s = run_seed(seed, 0);
    let (imu, _) = corrupt_imu(&clean, &file.sensors.budget(), s)?;
    let gnss = synthesize_gnss(&truth, &file.gnss, sc.gnss_rate_hz, gnss_seed(s), &em)?;
    let truth_epochs = gnss
        .iter()
        .filter_map(|f| truth_at(&truth, f.t).copied())
        .collect();
    Ok((imu, gnss, truth_epochs))
}

/// Initial attitude for `align`: the configured Euler angles, or the truth
/// at `t0` rotated by the configured misalignment.
pub fn initial_attitude(file: &AlignFile, alg: &NamedAlgorithm, truth: Option<&[NavState]>, t0: f64) -> Result<Dcm> {
    match (file.initial_attitude_deg, truth) {
        (Some([p, r, y]), _) => Ok(Dcm::from_euler(Euler::new(p.to_radians(), r.to_radians(), y.to_radians()))),
        (None, Some(tr)) => {
            let s = truth_at(tr, t0).ok_or_else(|| {
                Error::TimeAlignment(format!("no truth epoch at the first GNSS time {t0}"))
            })?;
            Ok(cn_to_nprime(&Vec3::from(alg.config.initial_misalignment)) * s.att)
        }
        (None, None) => Err(Error::InvalidInput(
            "initial_attitude_deg is required when no truth is given".into(),
        )),
    }
}

pub fn cmd_simulate(scenario: &Path, seed: u64, dir: &Path, out: &mut dyn Write) -> Result<RunManifest> {
    let started = Instant::now();
    let (file, text) = ScenarioFile::load(scenario)?;
    let (imu, gnss, truth_epochs) = simulate_dataset(&file, seed)?;

    let mut outputs = Outputs::new(dir);
    outputs.add("imu.csv", render_imu(&imu)?);
    outputs.add("gnss.csv", render_gnss(&gnss)?);
    outputs.add("truth.csv", render_truth(&truth_epochs)?);

    let mut m = manifest(
        "simulate",
        vec![
            "--scenario".into(),
            path_arg(scenario),
            "--seed".into(),
            seed.to_string(),
        ],
    );
    m.config_text = Some(text);
    m.resolved_config = json(&file);
    m.inputs.push(hash_file(scenario)?);
    m.seed = Some(seed);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = outputs.commit(m, started)?;
    writeln!(
        out,
        "simulated {} IMU samples, {} GNSS fixes into {}",
        imu.len(),
        gnss.len(),
        dir.display()
    )
    .map_err(io_out)?;
    Ok(m)
}

#[derive(Debug, Serialize)]
struct PassReport {
    index: usize,
    direction: crate::mech::Direction,
    correction_arcmin: [f64; 3],
    alpha_sigma_arcmin: [f64; 3],
}

#[derive(Debug, Serialize)]
struct AlignReport {
    algorithm: String,
    final_time: f64,
    /// `[pitch, roll, yaw]`, deg.
    final_attitude_deg: [f64; 3],
    converged: bool,
    passes: Vec<PassReport>,
    gyro_bias_dph: [f64; 3],
    accel_bias_mg: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    final_error_arcmin: Option<[f64; 3]>,
}

fn arcmin3(v: [f64; 3]) -> [f64; 3] {
    v.map(rad_to_arcmin)
}

pub fn cmd_align(
    imu_path: &Path,
    gnss_path: &Path,
    config: &Path,
    truth_path: Option<&Path>,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<RunManifest> {
    let started = Instant::now();
    let (file, alg, text) = AlignFile::load(config)?;
    let imu = read_imu(imu_path)?;
    let gnss = read_gnss(gnss_path)?;
    let truth = truth_path.map(read_truth).transpose()?;
    let first = gnss
        .first()
        .ok_or_else(|| Error::Ingest {
            path: gnss_path.to_path_buf(),
            line: 1,
            msg: "no GNSS fixes".into(),
        })?;
    let em = EarthModel::at_latitude(first.pos.lat);

    let att0 = initial_attitude(&file, &alg, truth.as_deref(), first.t).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::Config {
            path: config.to_path_buf(),
            msg,
        },
        e => e,
    })?;

    let report = align(&imu, &gnss, &att0, &alg.config, &em)?;
    let final_error = truth.as_deref().and_then(|tr| {
        truth_at(tr, report.final_time).map(|s| {
            let e = misalignment(&report.final_attitude, &s.att);
            arcmin3(e.into())
        })
    });
    let rows = trace_rows(&report.trace, truth.as_deref());
    let e = report.final_attitude.to_euler();
    let doc = AlignReport {
        algorithm: alg.name.clone(),
        final_time: report.final_time,
        final_attitude_deg: e.to_array().map(f64::to_degrees),
        converged: report.converged,
        passes: report
            .passes
            .iter()
            .map(|p| PassReport {
                index: p.index,
                direction: p.direction,
                correction_arcmin: arcmin3(p.correction),
                alpha_sigma_arcmin: arcmin3(p.alpha_sigma),
            })
            .collect(),
        gyro_bias_dph: <[f64; 3]>::from(report.gyro_bias).map(|w| w.to_degrees() * 3600.0),
        accel_bias_mg: <[f64; 3]>::from(report.accel_bias).map(|a| a / STANDARD_GRAVITY * 1e3),
        final_error_arcmin: final_error,
    };

    let mut outputs = Outputs::new(dir);
    let mut report_json = serde_json::to_vec_pretty(&doc)
        .map_err(|e| Error::InvalidInput(format!("report: {e}")))?;
    report_json.push(b'\n');
    outputs.add("report.json", report_json);
    outputs.add("trace.csv", render_trace(&rows)?);

    let mut args = vec![
        "--imu".into(),
        path_arg(imu_path),
        "--gnss".into(),
        path_arg(gnss_path),
        "--config".into(),
        path_arg(config),
    ];
    let mut m = manifest("align", Vec::new());
    m.inputs.push(hash_file(imu_path)?);
    m.inputs.push(hash_file(gnss_path)?);
    m.inputs.push(hash_file(config)?);
    if let Some(t) = truth_path {
        args.extend(["--truth".into(), path_arg(t)]);
        m.inputs.push(hash_file(t)?);
    }
    m.args = args;
    m.config_text = Some(text);
    m.resolved_config = json(&alg);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = outputs.commit(m, started)?;

    write!(out, "{}: {} passes, converged {}", alg.name, doc.passes.len(), doc.converged).map_err(io_out)?;
    if let Some(e) = final_error {
        write!(out, ", error [{:.4}, {:.4}, {:.4}] arcmin", e[0], e[1], e[2]).map_err(io_out)?;
    }
    writeln!(out).map_err(io_out)?;
    Ok(m)
}

fn render_runs(table: &crate::simkit::MonteCarloTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("runs table: {e}"));
    w.write_record(["run", "algorithm", "status", "phi_x_arcmin", "phi_y_arcmin", "phi_z_arcmin"])
        .map_err(csv_err)?;
    let n = table.rows.first().map_or(0, |r| r.runs.len());
    for i in 0..n {
        for row in &table.rows {
            let rec = match &row.runs[i] {
                RunOutcome::Aligned { final_error, .. } => {
                    let [x, y, z] = final_error.map(|v| v.to_string());
                    [i.to_string(), row.name.clone(), "aligned".into(), x, y, z]
                }
                RunOutcome::Diverged(_) => [
                    i.to_string(),
                    row.name.clone(),
                    "diverged".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                ],
            };
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.into_inner()
        .map_err(|e| Error::InvalidInput(format!("runs table: {e}")))
}

fn render_summary(table: &crate::simkit::MonteCarloTable, n_runs: usize) -> String {
    let mut s = format!(
        "RMS misalignment error over {n_runs} runs, arcmin\n{:<12} {:>12} {:>12} {:>12} {:>9}\n",
        "algorithm", "phi_x", "phi_y", "phi_z", "diverged"
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:<12} {:>12.4} {:>12.4} {:>12.4} {:>9}",
            r.name, r.rms[0], r.rms[1], r.rms[2], r.diverged
        );
    }
    s
}

pub fn cmd_montecarlo(
    config: &Path,
    jobs: usize,
    dir: &Path,
    traces: bool,
    algorithms: Option<&[String]>,
    out: &mut dyn Write,
) -> Result<RunManifest> {
    let started = Instant::now();
    let (_, mut spec, text) = MonteCarloFile::load(config, algorithms)?;
    spec.keep_traces = traces;
    let table = run_monte_carlo(&spec, jobs)?;

    let rows: Vec<ResultRow> = table
        .rows
        .iter()
        .map(|r| ResultRow {
            algorithm: r.name.clone(),
            phi: r.rms,
        })
        .collect();
    let summary = render_summary(&table, spec.n_runs);
    let mut outputs = Outputs::new(dir);
    outputs.add("results.csv", render_results(&rows)?);
    outputs.add("runs.csv", render_runs(&table)?);
    outputs.add("summary.txt", summary.clone().into_bytes());
    for row in &table.rows {
        for (i, run) in row.runs.iter().enumerate() {
            if let RunOutcome::Aligned { trace: Some(t), .. } = run {
                outputs.add(
                    Path::new("traces").join(format!("{}_run{i:03}.csv", row.name)),
                    render_trace(t)?,
                );
            }
        }
    }

    let mut args = vec!["--config".into(), path_arg(config), "--jobs".into(), jobs.to_string()];
    if traces {
        args.push("--traces".into());
    }
    if let Some(a) = algorithms {
        args.extend(["--algorithms".into(), a.join(",")]);
    }
    let mut m = manifest("montecarlo", args);
    m.inputs.push(hash_file(config)?);
    m.config_text = Some(text);
    m.resolved_config = json(&spec);
    m.seed = Some(spec.seed);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = outputs.commit(m, started)?;
    out.write_all(summary.as_bytes()).map_err(io_out)?;
    Ok(m)
}

/// Outcome of one compared cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellComparison {
    pub algorithm: String,
    pub axis: Axis,
    pub got: f64,
    pub expected: f64,
    pub ratio: f64,
    /// `None` when the cell is skipped.
    pub pass: Option<bool>,
}

/// Ordering rule label and whether it held.
pub type OrderingCheck = (String, bool);

/// Compares `got` against `expected` cell by cell. Every expected cell
/// must be present in `got`.
pub fn compare_tables(
    got: &[ResultRow],
    expected: &[ResultRow],
    tol: &ToleranceFile,
) -> Result<(Vec<CellComparison>, Vec<OrderingCheck>)> {
    let find = |rows: &[ResultRow], name: &str| rows.iter().find(|r| r.algorithm == name).map(|r| r.phi);
    let mut cells = Vec::new();
    for e in expected {
        let g = find(got, &e.algorithm).ok_or_else(|| {
            Error::Structure(format!("algorithm {:?} is missing from the results", e.algorithm))
        })?;
        for axis in Axis::ALL {
            let (gv, ev) = (g[axis.index()], e.phi[axis.index()]);
            let ratio = gv / ev;
            let pass = match tol.rule(&e.algorithm, axis) {
                Some(r) if r.skip => None,
                Some(r) if r.max_ratio.is_some() || r.max_arcmin.is_some() || r.min_arcmin.is_some() => {
                    Some(
                        gv.is_finite()
                            && r.max_ratio.is_none_or(|m| ratio <= m)
                            && r.max_arcmin.is_none_or(|m| gv <= m)
                            && r.min_arcmin.is_none_or(|m| gv >= m),
                    )
                }
                _ => Some(gv.is_finite() && ratio <= tol.max_ratio),
            };
            cells.push(CellComparison {
                algorithm: e.algorithm.clone(),
                axis,
                got: gv,
                expected: ev,
                ratio,
                pass,
            });
        }
    }
    let mut orderings = Vec::new();
    for o in &tol.orderings {
        let value = |name: &str| {
            find(got, name)
                .map(|p| p[o.axis.index()])
                .ok_or_else(|| Error::Structure(format!("ordering refers to missing algorithm {name:?}")))
        };
        let (lo, hi) = (value(&o.lower)?, value(&o.higher)?);
        orderings.push((format!("{} < {} on {}", o.lower, o.higher, o.axis.name()), lo < hi));
    }
    Ok((cells, orderings))
}

pub fn cmd_compare(got: &Path, expected: &Path, tolerances: &Path, out: &mut dyn Write) -> Result<bool> {
    let tol = ToleranceFile::load(tolerances)?;
    let g = read_results(got)?;
    let e = read_results(expected)?;
    let (cells, orderings) = compare_tables(&g, &e, &tol)?;
    let mut ok = true;
    writeln!(
        out,
        "{:<12} {:<6} {:>12} {:>12} {:>8}  status",
        "algorithm", "axis", "got", "expected", "ratio"
    )
    .map_err(io_out)?;
    for c in &cells {
        let status = match c.pass {
            None => "skip",
            Some(true) => "pass",
            Some(false) => {
                ok = false;
                "FAIL"
            }
        };
        writeln!(
            out,
            "{:<12} {:<6} {:>12.4} {:>12.4} {:>8.3}  {status}",
            c.algorithm,
            c.axis.name(),
            c.got,
            c.expected,
            c.ratio
        )
        .map_err(io_out)?;
    }
    for (label, pass) in &orderings {
        ok &= *pass;
        writeln!(out, "ordering {label}: {}", if *pass { "pass" } else { "FAIL" }).map_err(io_out)?;
    }
    writeln!(out, "{}", if ok { "PASS" } else { "FAIL" }).map_err(io_out)?;
    Ok(ok)
}

/// Reruns a manifest's command into `dir`. Inputs must still match their
/// recorded hashes; returns whether every output hash matches.
pub fn cmd_replay(manifest_path: &Path, dir: &Path, out: &mut dyn Write) -> Result<bool> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::Config {
        path: manifest_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    for input in &m.inputs {
        let now = hash_file(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(Error::Config {
                path: input.path.clone(),
                msg: "input changed since the manifest was written".into(),
            });
        }
    }
    let mut argv = vec!["sins-align".to_string(), m.command.clone()];
    argv.extend(m.args.iter().cloned());
    argv.extend(["--out".into(), path_arg(dir)]);
    let cli = Cli::try_parse_from(&argv).map_err(|e| Error::Config {
        path: manifest_path.to_path_buf(),
        msg: e.to_string(),
    })?;
    if matches!(cli.command, Command::Replay { .. } | Command::Compare { .. }) {
        return Err(Error::Config {
            path: manifest_path.to_path_buf(),
            msg: format!("command {:?} cannot be replayed", m.command),
        });
    }
    run(&cli.command, &mut std::io::sink())?;
    let mut ok = true;
    for o in &m.outputs {
        let now = hash_file(&dir.join(&o.path))?;
        let same = now.sha256 == o.sha256;
        ok &= same;
        writeln!(out, "{} {}", o.path.display(), if same { "identical" } else { "DIFFERS" }).map_err(io_out)?;
    }
    Ok(ok)
}
