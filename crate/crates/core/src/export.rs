//! CSV and JSON output.
//!
//! Trajectory CSV columns: `t, mode, x1..xn, event, jump_index`. `mode` and
//! `jump_index` are 1-based; `event` is `none`, `switch` (first sample of a
//! new activation) or `jump` (the post-jump sample, which shares its time
//! with the pre-jump sample before it). `jump_index` is empty unless the
//! row is a jump. Numbers are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificate::NamedEnvelope;
use crate::expr::EvalError;
use crate::integrator::{settling_time, IntegrationConfig};
use crate::lyapunov::{eval_v, LyapunovSet};
use crate::model::{norm, HybridTrajectory, TruncationReason};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("schema: {0}")]
    Schema(String),
    #[error("evaluating V: {0}")]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    None,
    Switch,
    Jump,
}

impl EventKind {
    fn as_str(self) -> &'static str {
        match self {
            EventKind::None => "none",
            EventKind::Switch => "switch",
            EventKind::Jump => "jump",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(EventKind::None),
            "switch" => Some(EventKind::Switch),
            "jump" => Some(EventKind::Jump),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    /// 1-based.
    pub mode: usize,
    pub x: Vec<f64>,
    pub event: EventKind,
    /// 1-based, jump rows only.
    pub jump_index: Option<usize>,
}

/// Every stored sample of `traj` as a CSV row.
pub fn trajectory_rows(traj: &HybridTrajectory) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    let mut jumps = traj.jump_events.iter().peekable();
    for (s, seg) in traj.segments.iter().enumerate() {
        for k in 0..seg.len() {
            let t = seg.time(k);
            let mut event = EventKind::None;
            let mut jump_index = None;
            if k == 0 && s > 0 {
                event = EventKind::Switch;
            }
            if k > 0 && seg.time(k - 1) == t {
                if let Some(j) = jumps.next_if(|j| j.segment == s && j.t == t) {
                    event = EventKind::Jump;
                    jump_index = Some(j.jump_index + 1);
                }
            }
            rows.push(TrajectoryRow {
                t,
                mode: seg.mode + 1,
                x: seg.state(k).to_vec(),
                event,
                jump_index,
            });
        }
    }
    rows
}

fn create(path: &Path) -> Result<BufWriter<File>, ExportError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| ExportError::Io {
            path: path.display().to_string(),
            source,
        })
}

fn header(first: &[&str], prefix: &str, n: usize, last: &[&str]) -> Vec<String> {
    first
        .iter()
        .map(|s| s.to_string())
        .chain((1..=n).map(|i| format!("{prefix}{i}")))
        .chain(last.iter().map(|s| s.to_string()))
        .collect()
}

pub fn write_trajectory_csv<W: Write>(w: W, traj: &HybridTrajectory) -> Result<(), ExportError> {
    let n = traj.dim();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(&["t", "mode"], "x", n, &["event", "jump_index"]))?;
    for row in trajectory_rows(traj) {
        let mut rec = vec![row.t.to_string(), row.mode.to_string()];
        rec.extend(row.x.iter().map(f64::to_string));
        rec.push(row.event.as_str().to_string());
        rec.push(row.jump_index.map_or(String::new(), |j| j.to_string()));
        out.write_record(&rec)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<T, ExportError> {
    rec.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ExportError::Schema(format!("row {line}, column {}: bad value", k + 1)))
}

/// Reads a trajectory CSV, checking the header and every field.
pub fn read_trajectory_csv<R: Read>(r: R) -> Result<Vec<TrajectoryRow>, ExportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let head = rdr.headers()?.clone();
    let cols = head.len();
    if cols < 5 {
        return Err(ExportError::Schema("too few columns".into()));
    }
    let n = cols - 4;
    let expected = header(&["t", "mode"], "x", n, &["event", "jump_index"]);
    if head.iter().ne(expected.iter().map(String::as_str)) {
        return Err(ExportError::Schema(format!(
            "header {:?}, expected {:?}",
            head.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let x = (0..n)
            .map(|i| field(&rec, 2 + i, line))
            .collect::<Result<Vec<f64>, _>>()?;
        let event = EventKind::parse(&rec[cols - 2])
            .ok_or_else(|| ExportError::Schema(format!("row {line}: unknown event '{}'", &rec[cols - 2])))?;
        let jump_index = match &rec[cols - 1] {
            "" => None,
            _ => Some(field(&rec, cols - 1, line)?),
        };
        if (event == EventKind::Jump) != jump_index.is_some() {
            return Err(ExportError::Schema(format!(
                "row {line}: jump_index must be set exactly on jump rows"
            )));
        }
        rows.push(TrajectoryRow {
            t: field(&rec, 0, line)?,
            mode: field(&rec, 1, line)?,
            x,
            event,
            jump_index,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub system: String,
    pub x0: Vec<f64>,
    pub config: IntegrationConfig,
    pub reason: TruncationReason,
    pub t_final: f64,
    /// First time the norm stays at or below `config.origin_tol`.
    pub settling_time: Option<f64>,
    pub final_state: Vec<f64>,
    pub final_norm: f64,
    pub switches: usize,
    pub jumps: usize,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(system: &str, traj: &HybridTrajectory, config: &IntegrationConfig) -> Self {
        Manifest {
            system: system.to_string(),
            x0: traj.x0.clone(),
            config: *config,
            reason: traj.reason,
            t_final: traj.t_final,
            settling_time: settling_time(traj, config.origin_tol),
            final_state: traj.final_state().to_vec(),
            final_norm: norm(traj.final_state()),
            switches: traj.switch_count(),
            jumps: traj.jump_events.len(),
            files: Vec::new(),
        }
    }
}

fn write_numeric<W: Write>(w: W, head: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(head)?;
    for row in rows {
        out.write_record(row.iter().map(f64::to_string))?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a CSV whose fields are all numbers. Returns the header and rows.
pub fn read_numeric_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>), ExportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let head: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows.push(
            (0..head.len())
                .map(|k| field(&rec, k, line + 2))
                .collect::<Result<Vec<f64>, _>>()?,
        );
    }
    Ok((head, rows))
}

pub const SWITCHING_SIGNAL_CSV: &str = "switching_signal.csv";
pub const STATES_CSV: &str = "states.csv";
pub const NORM_CSV: &str = "norm_log10.csv";
pub const LYAPUNOV_CSV: &str = "lyapunov.csv";

/// Writes the plot-data files into `dir` and returns their paths.
///
/// * `switching_signal.csv`: `t, mode`, two rows per activation (start and
///   end) so that a line plot draws the step signal.
/// * `states.csv`: `t, x1..xn` at every sample.
/// * `norm_log10.csv`: `t, log10_norm`; `-inf` where the state is exactly 0.
/// * `lyapunov.csv`: `t, mode, V1..Vm, V_active` when functions are given.
pub fn write_plot_files(
    dir: &Path,
    traj: &HybridTrajectory,
    lyapunov: Option<&LyapunovSet>,
) -> Result<Vec<PathBuf>, ExportError> {
    let n = traj.dim();
    let mut written = Vec::new();

    let path = dir.join(SWITCHING_SIGNAL_CSV);
    write_numeric(
        create(&path)?,
        &["t".into(), "mode".into()],
        traj.segments.iter().flat_map(|s| {
            let m = (s.mode + 1) as f64;
            [vec![s.t_start, m], vec![s.t_end, m]]
        }),
    )?;
    written.push(path);

    let path = dir.join(STATES_CSV);
    write_numeric(
        create(&path)?,
        &header(&["t"], "x", n, &[]),
        traj.samples().map(|(_, t, x)| {
            let mut row = Vec::with_capacity(n + 1);
            row.push(t);
            row.extend_from_slice(x);
            row
        }),
    )?;
    written.push(path);

    let path = dir.join(NORM_CSV);
    write_numeric(
        create(&path)?,
        &["t".into(), "log10_norm".into()],
        traj.samples().map(|(_, t, x)| vec![t, norm(x).log10()]),
    )?;
    written.push(path);

    if let Some(set) = lyapunov {
        let m = set.len();
        let mut rows = Vec::new();
        for (mode, t, x) in traj.samples() {
            let mut row = Vec::with_capacity(m + 3);
            row.push(t);
            row.push((mode + 1) as f64);
            for i in 0..m {
                row.push(eval_v(set, i, x)?);
            }
            row.push(row[2 + mode]);
            rows.push(row);
        }
        let path = dir.join(LYAPUNOV_CSV);
        write_numeric(create(&path)?, &header(&["t", "mode"], "V", m, &["V_active"]), rows.into_iter())?;
        written.push(path);
    }
    Ok(written)
}

/// `condition, radius, sample_max, envelope`: per radius, the largest
/// clamped sample and the fitted monotone envelope.
pub fn write_envelopes_csv<W: Write>(w: W, envelopes: &[NamedEnvelope]) -> Result<(), ExportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["condition", "radius", "sample_max", "envelope"])?;
    for e in envelopes {
        for (r, v) in e.envelope.radii.iter().zip(&e.envelope.values) {
            let sample_max = e
                .envelope
                .samples
                .iter()
                .filter(|(sr, _)| sr == r)
                .map(|(_, s)| s.max(0.0))
                .fold(0.0, f64::max);
            out.write_record([e.name.clone(), r.to_string(), sample_max.to_string(), v.to_string()])?;
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads back `(condition, radius, sample_max, envelope)` rows.
pub fn read_envelopes_csv<R: Read>(r: R) -> Result<Vec<(String, f64, f64, f64)>, ExportError> {
    let mut rdr = csv::Reader::from_reader(r);
    if rdr.headers()?.iter().ne(["condition", "radius", "sample_max", "envelope"]) {
        return Err(ExportError::Schema("envelope header".into()));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        rows.push((
            rec.get(0).unwrap_or_default().to_string(),
            field(&rec, 1, line)?,
            field(&rec, 2, line)?,
            field(&rec, 3, line)?,
        ));
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|source| ExportError::Io {
            path: path.display().to_string(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::simulate;
    use crate::registry;

    fn paper_run() -> HybridTrajectory {
        let e = registry::paper_example();
        let cfg = IntegrationConfig {
            t_end: 1.0,
            dt: 1e-3,
            ..Default::default()
        };
        simulate(&e.def, &[1.0, 1.0], &cfg).unwrap()
    }

    #[test]
    fn rows_mark_switches_and_jumps() {
        let traj = paper_run();
        let rows = trajectory_rows(&traj);
        let switches = rows.iter().filter(|r| r.event == EventKind::Switch).count();
        let jumps: Vec<_> = rows.iter().filter(|r| r.event == EventKind::Jump).collect();
        assert_eq!(switches, traj.switch_count());
        assert_eq!(jumps.len(), traj.jump_events.len());
        for (row, ev) in jumps.iter().zip(&traj.jump_events) {
            assert_eq!(row.t, ev.t);
            assert_eq!(row.x, ev.x_after);
            assert_eq!(row.jump_index, Some(1));
        }
    }

    #[test]
    fn trajectory_csv_round_trips() {
        let traj = paper_run();
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &traj).unwrap();
        let back = read_trajectory_csv(buf.as_slice()).unwrap();
        assert_eq!(back, trajectory_rows(&traj));
    }

    #[test]
    fn reader_rejects_bad_rows() {
        let bad_event = "t,mode,x1,event,jump_index\n0,1,1,teleport,\n";
        assert!(matches!(read_trajectory_csv(bad_event.as_bytes()), Err(ExportError::Schema(_))));
        let missing_index = "t,mode,x1,event,jump_index\n0,1,1,jump,\n";
        assert!(matches!(read_trajectory_csv(missing_index.as_bytes()), Err(ExportError::Schema(_))));
        let bad_header = "t,mode,y1,event,jump_index\n";
        assert!(matches!(read_trajectory_csv(bad_header.as_bytes()), Err(ExportError::Schema(_))));
    }

    #[test]
    fn plot_files_round_trip() {
        let e = registry::paper_example();
        let traj = paper_run();
        let dir = tempfile::tempdir().unwrap();
        let files = write_plot_files(dir.path(), &traj, Some(&e.lyapunov)).unwrap();
        assert_eq!(files.len(), 4);
        let (head, rows) = read_numeric_csv(File::open(dir.path().join(LYAPUNOV_CSV)).unwrap()).unwrap();
        assert_eq!(head, ["t", "mode", "V1", "V2", "V3", "V4", "V5", "V_active"]);
        assert_eq!(rows.len(), traj.samples().count());
        let (_, sig) = read_numeric_csv(File::open(dir.path().join(SWITCHING_SIGNAL_CSV)).unwrap()).unwrap();
        assert_eq!(sig.len(), 2 * traj.segments.len());
        assert_eq!(sig[0], vec![0.0, 1.0]);
    }
}
