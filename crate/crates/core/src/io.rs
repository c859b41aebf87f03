//! CSV files for kernels, marginals, plans and traces.
//!
//! * Matrices: one row per line, comma separated, no header.
//! * Kernels additionally get a companion file with the log-entries, named by
//!   inserting `.log` before the extension (`K.csv` → `K.log.csv`). When the
//!   companion exists it is authoritative.
//! * Vectors: one value per line.
//! * Traces: header `iter,omega,residual_a,residual_b,plan_error,elapsed_seconds`,
//!   optional columns left empty.
//!
//! Numbers are written in shortest round-trip exponent form (at most 17
//! significant digits), so `load(save(x))` is bitwise exact.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::compositional::{PositiveKernel, ProbabilityVector};
use crate::error::{Error, Result};
use crate::problem::TransportPlan;
use crate::trace::ConvergenceTrace;

pub const TRACE_HEADER: &str = "iter,omega,residual_a,residual_b,plan_error,elapsed_seconds";

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Formats a float in shortest round-trip form.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

/// Plain decimal for moderate magnitudes, exponent form otherwise; both
/// round-trip exactly.
pub fn fmt_human(x: f64) -> String {
    if x == 0.0 || (1e-4..1e7).contains(&x.abs()) {
        format!("{x}")
    } else {
        fmt_f64(x)
    }
}

/// `K.csv` → `K.log.csv`.
pub fn companion_log_path(path: &Path) -> PathBuf {
    match (path.file_stem(), path.extension()) {
        (Some(stem), Some(ext)) => {
            let mut name = stem.to_os_string();
            name.push(".log.");
            name.push(ext);
            path.with_file_name(name)
        }
        _ => {
            let mut s = path.as_os_str().to_os_string();
            s.push(".log");
            PathBuf::from(s)
        }
    }
}

/// Dense row-major matrix as read from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

pub fn read_matrix(path: &Path) -> Result<MatrixData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(parse_err(
                    path,
                    line,
                    format!("ragged row: {} fields, expected {c}", record.len()),
                ))
            }
            _ => {}
        }
        for (j, field) in record.iter().enumerate() {
            let x: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("column {}: cannot parse '{field}'", j + 1)))?;
            values.push(x);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, 1, "empty matrix file"))?;
    Ok(MatrixData { rows, cols, values })
}

pub fn write_matrix(path: &Path, rows: usize, cols: usize, values: &[f64]) -> Result<()> {
    assert_eq!(rows * cols, values.len(), "matrix shape");
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for row in values.chunks_exact(cols) {
        let line: Vec<String> = row.iter().map(|x| fmt_f64(*x)).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a kernel; uses the companion log file when present.
pub fn load_kernel(path: &Path) -> Result<PositiveKernel> {
    let lin = read_matrix(path)?;
    let log_path = companion_log_path(path);
    if log_path.exists() {
        let log = read_matrix(&log_path)?;
        if (log.rows, log.cols) != (lin.rows, lin.cols) {
            return Err(parse_err(
                &log_path,
                1,
                format!(
                    "log companion is {}x{}, kernel is {}x{}",
                    log.rows, log.cols, lin.rows, lin.cols
                ),
            ));
        }
        return PositiveKernel::from_parts(lin.rows, lin.cols, lin.values, log.values);
    }
    for (idx, &x) in lin.values.iter().enumerate() {
        if !(x > 0.0) {
            return Err(parse_err(
                path,
                idx / lin.cols + 1,
                format!("entry in column {} is not strictly positive ({x})", idx % lin.cols + 1),
            ));
        }
    }
    PositiveKernel::from_linear(lin.rows, lin.cols, lin.values)
}

/// Writes linear entries to `path` and log-entries to the companion file.
pub fn save_kernel(path: &Path, kernel: &PositiveKernel) -> Result<()> {
    write_matrix(path, kernel.rows(), kernel.cols(), kernel.linear_entries())?;
    write_matrix(&companion_log_path(path), kernel.rows(), kernel.cols(), kernel.log_entries())
}

pub fn load_plan(path: &Path) -> Result<TransportPlan> {
    let m = read_matrix(path)?;
    TransportPlan::new(m.rows, m.cols, m.values)
}

pub fn save_plan(path: &Path, plan: &TransportPlan) -> Result<()> {
    write_matrix(path, plan.rows(), plan.cols(), plan.entries())
}

pub fn load_vector(path: &Path) -> Result<Vec<f64>> {
    let m = read_matrix(path)?;
    if m.cols != 1 {
        return Err(parse_err(path, 1, format!("expected one value per line, found {} columns", m.cols)));
    }
    Ok(m.values)
}

pub fn load_probability_vector(path: &Path) -> Result<ProbabilityVector> {
    let values = load_vector(path)?;
    for (i, x) in values.iter().enumerate() {
        if !(*x > 0.0 && x.is_finite()) {
            return Err(parse_err(path, i + 1, format!("marginal entry is not strictly positive ({x})")));
        }
    }
    ProbabilityVector::new(values)
}

pub fn save_vector(path: &Path, values: &[f64]) -> Result<()> {
    write_matrix(path, values.len(), 1, values)
}

pub fn write_trace<W: Write>(mut w: W, trace: &ConvergenceTrace) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    for r in trace.records() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.omega),
            fmt_f64(r.residual_a),
            fmt_f64(r.residual_b),
            opt(r.plan_error),
            opt(r.elapsed_seconds)
        )?;
    }
    w.flush()
}

pub fn save_trace(path: &Path, trace: &ConvergenceTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_trace(BufWriter::new(file), trace).map_err(|e| io_err(path, e))
}

/// Reads a trace written by [`save_trace`].
pub fn load_trace(path: &Path) -> Result<ConvergenceTrace> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| io_err(path, e))?;
    let header = reader.headers().map_err(|e| io_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(parse_err(path, 1, format!("unexpected trace header, expected '{TRACE_HEADER}'")));
    }
    let mut trace = ConvergenceTrace::new();
    for record in reader.records() {
        let record = record.map_err(|e| io_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |k: usize| -> Result<f64> {
            record[k]
                .parse()
                .map_err(|_| parse_err(path, line, format!("cannot parse '{}'", &record[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> {
            if record[k].is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let iteration = record[0]
            .parse()
            .map_err(|_| parse_err(path, line, format!("cannot parse iteration '{}'", &record[0])))?;
        trace
            .push(crate::trace::TraceRecord {
                iteration,
                omega: num(1)?,
                residual_a: num(2)?,
                residual_b: num(3)?,
                plan_error: opt(4)?,
                elapsed_seconds: opt(5)?,
            })
            .map_err(|e| parse_err(path, line, e.to_string()))?;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn companion_naming() {
        assert_eq!(companion_log_path(Path::new("/d/K.csv")), PathBuf::from("/d/K.log.csv"));
        assert_eq!(companion_log_path(Path::new("K")), PathBuf::from("K.log"));
    }

    #[test]
    fn kernel_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = PositiveKernel::from_linear(5, 7, (0..35).map(|_| rng.gen_range(1e-3..10.0)).collect()).unwrap();
        let path = dir.path().join("k.csv");
        save_kernel(&path, &k).unwrap();
        assert_eq!(load_kernel(&path).unwrap(), k);
        // without the companion, linear entries still round-trip
        std::fs::remove_file(companion_log_path(&path)).unwrap();
        assert_eq!(load_kernel(&path).unwrap().linear_entries(), k.linear_entries());
    }

    #[test]
    fn underflowed_kernel_survives_through_companion() {
        let dir = tempfile::tempdir().unwrap();
        let k = crate::generate::grid_kernel_1d(4, 4, 1e-4).unwrap();
        assert_eq!(k.entry(0, 3), 0.0);
        let path = dir.path().join("grid.csv");
        save_kernel(&path, &k).unwrap();
        assert_eq!(load_kernel(&path).unwrap(), k);
    }

    #[test]
    fn zero_entry_is_reported_with_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        std::fs::write(&path, "1,2,3\n4,0,6\n").unwrap();
        match load_kernel(&path).unwrap_err() {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("column 2"), "{message}");
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn malformed_and_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.csv");
        std::fs::write(&path, "1,2\n3,4\n5\n").unwrap();
        assert!(matches!(load_kernel(&path), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&path, "1,2\n3,x\n").unwrap();
        assert!(matches!(load_kernel(&path), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_kernel(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn unnormalized_vector_reports_sum() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "0.5\n0.48\n").unwrap();
        let err = load_probability_vector(&path).unwrap_err();
        assert!(err.to_string().contains("0.98"), "{err}");
        std::fs::write(&path, "0.25\n0.75\n").unwrap();
        assert_eq!(load_probability_vector(&path).unwrap().as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn trace_csv_layout_and_round_trip() {
        let mut t = ConvergenceTrace::new();
        t.push(TraceRecord {
            iteration: 1,
            omega: 1.0,
            residual_a: 0.125,
            residual_b: 0.0,
            plan_error: None,
            elapsed_seconds: None,
        })
        .unwrap();
        t.push(TraceRecord {
            iteration: 2,
            omega: 1.5,
            residual_a: 1e-3,
            residual_b: 2e-4,
            plan_error: Some(0.1),
            elapsed_seconds: Some(0.5),
        })
        .unwrap();
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines[1], "1,1e0,1.25e-1,0e0,,");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        save_trace(&path, &t).unwrap();
        assert_eq!(load_trace(&path).unwrap(), t);
    }

    proptest! {
        #[test]
        fn float_format_round_trips(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
            let s = fmt_f64(x);
            prop_assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits());
            let digits = s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count();
            prop_assert!(digits <= 17);
        }
    }
}
