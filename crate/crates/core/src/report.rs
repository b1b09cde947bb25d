//! CSV layouts written and read by the command-line tools. Every file starts
//! with a `#schema=` comment line naming its layout and version.

use crate::driver::TraceRecord;
use crate::error::{CodiffError, Result};
use crate::evaluation::{DiagnosticRow, MetricRecord};
use std::io::{BufRead, Read, Write};

pub const TRACE_SCHEMA: &str = "codiff.trace/1";
pub const METRICS_SCHEMA: &str = "codiff.metrics/1";
pub const DESIGNS_SCHEMA: &str = "codiff.designs/1";
pub const DIAGNOSTICS_SCHEMA: &str = "codiff.diagnostics/1";
pub const PAIRED_SCHEMA: &str = "codiff.paired/1";

fn fmt(x: f64) -> String {
    format!("{x:?}")
}

fn schema_line<W: Write>(w: &mut W, schema: &str) -> Result<()> {
    writeln!(w, "#schema={schema}")?;
    Ok(())
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(w)
}

type BodyReader = csv::Reader<std::io::Cursor<Vec<u8>>>;

/// Reads an optional `#schema=` line and the remaining CSV body.
fn split_schema<R: Read>(r: R) -> Result<(Option<String>, BodyReader)> {
    let mut lines = std::io::BufReader::new(r);
    let mut first = String::new();
    lines.read_line(&mut first)?;
    let mut rest = Vec::new();
    let schema = match first.trim().strip_prefix("#schema=") {
        Some(s) => Some(s.to_string()),
        None => {
            rest.extend_from_slice(first.as_bytes());
            None
        }
    };
    lines.read_to_end(&mut rest)?;
    let rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(std::io::Cursor::new(rest));
    Ok((schema, rdr))
}

fn expect_schema(found: Option<String>, want: &str, required: bool) -> Result<()> {
    match found {
        Some(s) if s == want => Ok(()),
        Some(s) => Err(CodiffError::InvalidArgument(format!("schema {s} where {want} was expected"))),
        None if required => Err(CodiffError::InvalidArgument(format!("missing #schema={want} line"))),
        None => Ok(()),
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| CodiffError::InvalidArgument(format!("not a number: {s:?}")))
}

pub fn write_trace<W: Write>(mut w: W, design_dim: usize, rows: &[TraceRecord], with_timing: bool) -> Result<()> {
    schema_line(&mut w, TRACE_SCHEMA)?;
    let mut c = writer(w);
    let mut header = vec!["iter".to_string()];
    header.extend((1..=design_dim).map(|i| format!("xi_{i}")));
    header.extend(["grad_norm", "ess_min", "degenerate_rows", "resampled_joint", "resampled_contrastive", "skipped", "wall_ms"].map(String::from));
    c.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iter.to_string()];
        rec.extend(r.xi.iter().map(|x| fmt(*x)));
        rec.push(fmt(r.grad_norm));
        rec.push(fmt(r.ess_min));
        rec.push(r.degenerate_rows.to_string());
        rec.push((r.resampled_joint as u8).to_string());
        rec.push((r.resampled_contrastive as u8).to_string());
        rec.push((r.skipped as u8).to_string());
        rec.push(fmt(if with_timing { r.wall_ms } else { 0.0 }));
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}

pub fn write_metrics<W: Write>(mut w: W, rows: &[MetricRecord], with_timing: bool) -> Result<()> {
    schema_line(&mut w, METRICS_SCHEMA)?;
    let mut c = writer(w);
    c.write_record(["k", "spce", "snmc", "w2", "wall_ms"])?;
    for r in rows {
        c.write_record([
            r.k.to_string(),
            fmt(r.spce),
            fmt(r.snmc),
            fmt(r.w2),
            fmt(if with_timing { r.wall_ms } else { 0.0 }),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// Optimized and random-baseline metrics side by side, one row per `k`.
pub fn write_paired<W: Write>(mut w: W, optimized: &[MetricRecord], random: &[MetricRecord]) -> Result<()> {
    crate::error::check_dim("paired runs", optimized.len(), random.len())?;
    schema_line(&mut w, PAIRED_SCHEMA)?;
    let mut c = writer(w);
    c.write_record(["k", "spce_optimized", "spce_random", "w2_optimized", "w2_random"])?;
    for (a, b) in optimized.iter().zip(random) {
        c.write_record([a.k.to_string(), fmt(a.spce), fmt(b.spce), fmt(a.w2), fmt(b.w2)])?;
    }
    c.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> Result<Vec<MetricRecord>> {
    let (schema, mut rdr) = split_schema(r)?;
    expect_schema(schema, METRICS_SCHEMA, true)?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 5 {
                return Err(CodiffError::InvalidArgument("metrics rows need 5 fields".into()));
            }
            Ok(MetricRecord {
                k: rec[0].parse().map_err(|_| CodiffError::InvalidArgument("bad k".into()))?,
                spce: parse_f64(&rec[1])?,
                snmc: parse_f64(&rec[2])?,
                w2: parse_f64(&rec[3])?,
                wall_ms: parse_f64(&rec[4])?,
            })
        })
        .collect()
}

/// A design/outcome sequence: one `(ξ_k, y_k)` per row, columns `k, xi_1..xi_d, y_1..y_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSequence {
    pub designs: Vec<Vec<f64>>,
    pub outcomes: Vec<Vec<f64>>,
}

pub fn write_designs<W: Write>(mut w: W, seq: &DesignSequence) -> Result<()> {
    schema_line(&mut w, DESIGNS_SCHEMA)?;
    let d = seq.designs.first().map_or(0, Vec::len);
    let p = seq.outcomes.first().map_or(0, Vec::len);
    let mut c = writer(w);
    let mut header = vec!["k".to_string()];
    header.extend((1..=d).map(|i| format!("xi_{i}")));
    header.extend((1..=p).map(|i| format!("y_{i}")));
    c.write_record(&header)?;
    for (k, (xi, y)) in seq.designs.iter().zip(&seq.outcomes).enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(xi.iter().chain(y).map(|x| fmt(*x)));
        c.write_record(&rec)?;
    }
    c.flush()?;
    Ok(())
}

/// Reads a design sequence with `d` design and `p` outcome columns. The
/// schema line is optional so sequences produced by other tools can be read.
pub fn read_designs<R: Read>(r: R, d: usize, p: usize) -> Result<DesignSequence> {
    let (schema, mut rdr) = split_schema(r)?;
    expect_schema(schema, DESIGNS_SCHEMA, false)?;
    let header = rdr.headers()?.clone();
    let mut want = vec!["k".to_string()];
    want.extend((1..=d).map(|i| format!("xi_{i}")));
    want.extend((1..=p).map(|i| format!("y_{i}")));
    let got: Vec<String> = header.iter().map(str::to_string).collect();
    if got != want {
        return Err(CodiffError::InvalidArgument(format!("design sequence header {got:?}, expected {want:?}")));
    }
    let mut seq = DesignSequence {
        designs: Vec::new(),
        outcomes: Vec::new(),
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let k: usize = rec[0].parse().map_err(|_| CodiffError::InvalidArgument(format!("bad k in row {}", row + 1)))?;
        if k != row + 1 {
            return Err(CodiffError::InvalidArgument(format!("rows must be ordered k = 1, 2, ...; found k = {k} in row {}", row + 1)));
        }
        let vals = rec.iter().skip(1).map(parse_f64).collect::<Result<Vec<f64>>>()?;
        seq.designs.push(vals[..d].to_vec());
        seq.outcomes.push(vals[d..].to_vec());
    }
    Ok(seq)
}

pub fn write_diagnostics<W: Write>(mut w: W, rows: &[DiagnosticRow], with_timing: bool) -> Result<()> {
    schema_line(&mut w, DIAGNOSTICS_SCHEMA)?;
    let mut c = writer(w);
    c.write_record(["estimator", "xi", "n", "m", "reps", "mean", "sd", "se", "oracle", "bias", "wall_ms"])?;
    for r in rows {
        c.write_record([
            r.estimator.as_str().to_string(),
            fmt(r.xi),
            r.n.to_string(),
            r.m.to_string(),
            r.reps.to_string(),
            fmt(r.mean),
            fmt(r.sd),
            fmt(r.se),
            fmt(r.oracle),
            fmt(r.bias),
            fmt(if with_timing { r.wall_ms } else { 0.0 }),
        ])?;
    }
    c.flush()?;
    Ok(())
}

/// Reads the schema name and body rows of any file written by this module.
pub fn read_table<R: Read>(r: R) -> Result<(String, Vec<String>, Vec<Vec<String>>)> {
    let (schema, mut rdr) = split_schema(r)?;
    let schema = schema.ok_or_else(|| CodiffError::InvalidArgument("missing #schema line".into()))?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((schema, header, rows))
}
