//! Metrics history as CSV.
//!
//! Columns: `epoch,train_loss,val_loss,elbo_bpd,kl,seconds`, header always
//! present, empty cells where a metric does not apply. Numbers use Rust's
//! shortest round-trip formatting, so equal histories give equal bytes.

use std::path::Path;

use gon_core::train::{MetricsHistory, MetricsRow};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["epoch", "train_loss", "val_loss", "elbo_bpd", "kl", "seconds"];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn to_csv(history: &MetricsHistory) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER).expect("in-memory write");
    for r in &history.rows {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            cell(r.elbo_bpd),
            cell(r.kl),
            cell(r.seconds),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv(history: &MetricsHistory, path: &Path) -> Result<()> {
    write_atomic(path, &to_csv(history))
}

fn parse_opt(s: &str, line: usize) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Csv(format!("line {line}: `{s}` is not a number")))
}

pub fn from_csv(bytes: &[u8]) -> Result<MetricsHistory> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::Csv(e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::Csv(format!("header {:?}, expected {HEADER:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut h = MetricsHistory::default();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        let line = i + 2;
        let req = |j: usize| parse_opt(&rec[j], line)?.ok_or_else(|| Error::Csv(format!("line {line}: `{}` is empty", HEADER[j])));
        let row = MetricsRow {
            epoch: rec[0].parse().map_err(|_| Error::Csv(format!("line {line}: bad epoch `{}`", &rec[0])))?,
            train_loss: req(1)?,
            val_loss: req(2)?,
            elbo_bpd: parse_opt(&rec[3], line)?,
            kl: parse_opt(&rec[4], line)?,
            seconds: parse_opt(&rec[5], line)?,
        };
        h.push(row)?;
    }
    Ok(h)
}

pub fn read_csv(path: &Path) -> Result<MetricsHistory> {
    from_csv(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
