//! Tabular and line-oriented output formats, plus the parsers that read them back.
//!
//! Every float is written as `{:.16e}` (17 significant digits), which round-trips
//! exactly through `str::parse::<f64>`.

use crate::diffusion::{SampleBatch, Trajectory};
use crate::driftsearch::{CounterfactualBatch, GridSearchReport};
use crate::error::{Error, Result};
use crate::metrics::DistanceEstimate;

/// Upper bound on rows accepted by [`parse_batch_csv`].
pub const MAX_BATCH_ROWS: usize = 10_000_000;
/// Upper bound on values accepted by [`parse_delta_grid`].
pub const MAX_GRID_POINTS: usize = 10_000;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("in-memory csv writer cannot fail")
}

fn put<I, S>(w: &mut csv::Writer<Vec<u8>>, record: I)
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(record)
        .expect("in-memory csv writer cannot fail");
}

/// `sample_id,dim_0,..,dim_{d-1},cond`
pub fn batch_csv(b: &SampleBatch) -> Vec<u8> {
    let mut w = writer();
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..b.dim).map(|d| format!("dim_{d}")));
    header.push("cond".into());
    put(&mut w, &header);
    for (i, row) in b.rows().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|&v| fmt_f64(v)));
        rec.push(b.condition[i].to_string());
        put(&mut w, &rec);
    }
    finish(w)
}

/// Reads a batch CSV written by [`batch_csv`]. Rows must be numbered 0, 1, 2, ..
/// and every value must be finite.
pub fn parse_batch_csv(text: &str) -> Result<SampleBatch> {
    let err = |m: String| Error::Parse(format!("batch csv: {m}"));
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    let cols = header.len();
    if cols < 3 || &header[0] != "sample_id" || &header[cols - 1] != "cond" {
        return Err(err("header must be sample_id,dim_0..,cond".into()));
    }
    let dim = cols - 2;
    for d in 0..dim {
        if header[d + 1] != *format!("dim_{d}") {
            return Err(err(format!("column {} should be dim_{d}", d + 1)));
        }
    }
    let mut data = Vec::new();
    let mut cond = Vec::new();
    for (i, rec) in r.records().enumerate() {
        if i >= MAX_BATCH_ROWS {
            return Err(err(format!("more than {MAX_BATCH_ROWS} rows")));
        }
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if rec.len() != cols {
            return Err(err(format!(
                "row {i} has {} fields, expected {cols}",
                rec.len()
            )));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| err(format!("row {i}: bad sample_id {:?}", &rec[0])))?;
        if id != i {
            return Err(err(format!("row {i}: sample_id {id} out of sequence")));
        }
        for d in 0..dim {
            let v: f64 = rec[d + 1]
                .trim()
                .parse()
                .map_err(|_| err(format!("row {i}: bad value {:?}", &rec[d + 1])))?;
            if !v.is_finite() {
                return Err(err(format!("row {i}: non-finite value")));
            }
            data.push(v);
        }
        cond.push(
            rec[cols - 1]
                .trim()
                .parse()
                .map_err(|_| err(format!("row {i}: bad cond {:?}", &rec[cols - 1])))?,
        );
    }
    if cond.is_empty() {
        return Err(err("no rows".into()));
    }
    SampleBatch::new(data, dim, cond)
}

/// `t,mean,std`, one row per recorded step from T down to 0.
pub fn trajectory_csv(tr: &Trajectory) -> Vec<u8> {
    let mut w = writer();
    put(&mut w, ["t", "mean", "std"]);
    for i in 0..tr.len() {
        put(
            &mut w,
            [
                tr.t[i].to_string(),
                fmt_f64(tr.per_step_mean[i]),
                fmt_f64(tr.per_step_std[i]),
            ],
        );
    }
    finish(w)
}

pub fn trajectory_jsonl(tr: &Trajectory) -> Vec<u8> {
    let mut out = String::new();
    for i in 0..tr.len() {
        out.push_str(&format!(
            "{{\"t\":{},\"mean\":{},\"std\":{}}}\n",
            tr.t[i],
            fmt_f64(tr.per_step_mean[i]),
            fmt_f64(tr.per_step_std[i])
        ));
    }
    out.into_bytes()
}

/// `delta,l1,l1_se,is_argmin`
pub fn grid_report_csv(r: &GridSearchReport) -> Vec<u8> {
    let mut w = writer();
    put(&mut w, ["delta", "l1", "l1_se", "is_argmin"]);
    for p in &r.per_delta {
        put(
            &mut w,
            [
                fmt_f64(p.delta),
                fmt_f64(p.estimate.value),
                fmt_f64(p.estimate.std_error),
                (p.delta == r.delta_star).to_string(),
            ],
        );
    }
    finish(w)
}

/// `metric,value,std_error,n_a,n_b,bins_or_bandwidth`
pub fn distance_csv(rows: &[DistanceEstimate]) -> Vec<u8> {
    let mut w = writer();
    put(
        &mut w,
        [
            "metric",
            "value",
            "std_error",
            "n_a",
            "n_b",
            "bins_or_bandwidth",
        ],
    );
    for d in rows {
        put(
            &mut w,
            [
                d.metric.as_str().to_string(),
                fmt_f64(d.value),
                fmt_f64(d.std_error),
                d.n_a.to_string(),
                d.n_b.to_string(),
                fmt_f64(d.param),
            ],
        );
    }
    finish(w)
}

/// `sample_id,total,outcome,instance,flipped`
pub fn counterfactual_losses_csv(cf: &CounterfactualBatch, flipped: &[bool]) -> Vec<u8> {
    let mut w = writer();
    put(
        &mut w,
        ["sample_id", "total", "outcome", "instance", "flipped"],
    );
    for (i, l) in cf.losses.iter().enumerate() {
        put(
            &mut w,
            [
                i.to_string(),
                fmt_f64(l.total),
                fmt_f64(l.outcome_term),
                fmt_f64(l.instance_term),
                flipped[i].to_string(),
            ],
        );
    }
    finish(w)
}

/// Parses a comma-separated δ grid such as `-0.2,-0.1,0,0.1,0.2`.
/// Values must be finite and strictly ascending.
pub fn parse_delta_grid(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, part) in text.split(',').enumerate() {
        if i >= MAX_GRID_POINTS {
            return Err(Error::InvalidGrid(format!(
                "more than {MAX_GRID_POINTS} points"
            )));
        }
        let p = part.trim();
        let v: f64 = p
            .parse()
            .map_err(|_| Error::InvalidGrid(format!("not a number: {p:?}")))?;
        if !v.is_finite() {
            return Err(Error::InvalidGrid(format!("non-finite value {p:?}")));
        }
        out.push(v);
    }
    if out.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid("grid must be strictly ascending".into()));
    }
    Ok(out)
}
