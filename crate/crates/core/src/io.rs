//! File formats written by the experiment driver.
//!
//! Every CSV starts with a `# <schema> v<version>` comment line followed by
//! a header row. Floats use Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::Serialize;

use crate::detector::Histogram;
use crate::error::{IsacError, Result};
use crate::linalg::CMatrix;
use crate::metrics::Beamformer;
use crate::optimizer::OptimizationTrace;

pub const TRACE_SCHEMA: &str = "# isac-trace v1";
pub const HISTOGRAM_SCHEMA: &str = "# isac-histogram v1";
pub const SWEEP_SCHEMA: &str = "# isac-sweep v1";
pub const BEAMPATTERN_SCHEMA: &str = "# isac-beampattern v1";
pub const VALIDATION_SCHEMA: &str = "# isac-pd-validation v1";
pub const BEAMFORMER_SCHEMA: &str = "# isac-beamformer v1";

fn csv_error(e: csv::Error) -> IsacError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => IsacError::Io(io),
        other => IsacError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_csv<W: Write, R: Serialize>(out: &mut W, schema: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
    writeln!(out, "{schema}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TraceRow<'a> {
    iter: usize,
    epd: f64,
    surrogate: f64,
    step: f64,
    residual: f64,
    status: &'a str,
    elapsed_s: f64,
}

/// `iter,epd,surrogate,step,residual,status,elapsed_s`, one row per outer
/// iteration; `status` is the subproblem solver status.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &OptimizationTrace) -> Result<()> {
    let statuses: Vec<String> = trace.records.iter().map(|r| r.solver_status.to_string()).collect();
    let rows = trace.records.iter().zip(&statuses).map(|(r, s)| TraceRow {
        iter: r.iter,
        epd: r.epd,
        surrogate: r.surrogate,
        step: r.step,
        residual: r.residual,
        status: s,
        elapsed_s: r.elapsed_s,
    });
    write_csv(out, TRACE_SCHEMA, rows)
}

#[derive(Serialize)]
struct HistogramRow {
    bin_left: f64,
    bin_right: f64,
    count: u64,
}

/// `bin_left,bin_right,count`.
pub fn write_histogram_csv<W: Write>(out: &mut W, hist: &Histogram) -> Result<()> {
    let rows = (0..hist.bins()).map(|b| {
        let (bin_left, bin_right) = hist.edges(b);
        HistogramRow { bin_left, bin_right, count: hist.counts[b] }
    });
    write_csv(out, HISTOGRAM_SCHEMA, rows)
}

/// One `(axis value, scheme)` point of a sweep; `epd` is empty unless the
/// design succeeded.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub scheme: String,
    pub epd: Option<f64>,
    pub status: String,
}

/// `axis_value,scheme,epd,status`.
pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> Result<()> {
    write_csv(out, SWEEP_SCHEMA, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeampatternRow {
    pub angle_deg: f64,
    pub scheme: String,
    /// `a(θ)^H R_X a(θ)` in watts.
    pub power_w: f64,
}

/// `angle_deg,scheme,power_w`.
pub fn write_beampattern_csv<W: Write>(out: &mut W, rows: &[BeampatternRow]) -> Result<()> {
    write_csv(out, BEAMPATTERN_SCHEMA, rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub alpha_abs: f64,
    pub theta_deg: f64,
    pub analytic: f64,
    pub empirical: f64,
    pub ci95: f64,
    pub abs_error: f64,
}

/// `alpha_abs,theta_deg,analytic,empirical,ci95,abs_error`.
pub fn write_validation_csv<W: Write>(out: &mut W, rows: &[ValidationRow]) -> Result<()> {
    write_csv(out, VALIDATION_SCHEMA, rows)
}

/// Plain-text beamformer.
///
/// ```text
/// # isac-beamformer v1
/// <n_tx> <num_users> <sensing_columns>
/// <n_tx rows of (num_users + sensing_columns) "re im" pairs>
/// ```
///
/// Each row is one antenna of the joint precoder `[W_c, W_s]`.
pub fn write_beamformer<W: Write>(out: &mut W, bf: &Beamformer) -> Result<()> {
    let w = bf.joint();
    writeln!(out, "{BEAMFORMER_SCHEMA}")?;
    writeln!(out, "{} {} {}", bf.n_tx(), bf.num_users(), bf.w_sense.ncols())?;
    for i in 0..w.nrows() {
        let line: Vec<String> = w.row(i).iter().map(|z| format!("{} {}", z.re, z.im)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_beamformer<R: BufRead>(input: R) -> Result<Beamformer> {
    let bad = |msg: &str| IsacError::Config(format!("beamformer file: {msg}"));
    let mut lines = input.lines();
    let mut next = || -> Result<String> { lines.next().ok_or_else(|| bad("unexpected end of file"))?.map_err(IsacError::from) };
    if next()?.trim() != BEAMFORMER_SCHEMA {
        return Err(bad("missing schema line"));
    }
    let dims: Vec<usize> = next()?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad dimension")))
        .collect::<Result<_>>()?;
    let [n, k, s] = dims[..] else { return Err(bad("expected three dimensions")) };
    let mut w = CMatrix::zeros(n, k + s);
    for i in 0..n {
        let vals: Vec<f64> = next()?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("bad number")))
            .collect::<Result<_>>()?;
        if vals.len() != 2 * (k + s) {
            return Err(bad(&format!("row {i} has {} numbers, expected {}", vals.len(), 2 * (k + s))));
        }
        for j in 0..k + s {
            w[(i, j)] = Complex64::new(vals[2 * j], vals[2 * j + 1]);
        }
    }
    Ok(Beamformer::from_joint(&w, k))
}
