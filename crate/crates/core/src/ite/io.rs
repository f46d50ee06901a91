//! Effect files and match reports.
//!
//! The effect file is JSON Lines. The first line is a header
//! `{"relevant_labs":[..],"n_windows":T,"patient_ids":[..]}`; every further
//! line is one record `{"patient_id","window","delta","unmatched","control"}`
//! for a window carrying a newly added medication. Absent windows are zero.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::delta::{DeltaRecord, DeltaSet, MatchReportRow};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    relevant_labs: Vec<usize>,
    n_windows: usize,
    patient_ids: Vec<u64>,
}

pub fn write_deltas(set: &DeltaSet, mut out: impl Write) -> Result<()> {
    let header = Header {
        relevant_labs: set.relevant_labs.clone(),
        n_windows: set.n_windows,
        patient_ids: set.patient_ids.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for record in set.records.values() {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_deltas(set: &DeltaSet, path: impl AsRef<Path>) -> Result<()> {
    write_deltas(set, BufWriter::new(File::create(path)?))
}

pub fn read_deltas(input: impl BufRead) -> Result<DeltaSet> {
    let mut lines = input.lines();
    let header: Header = loop {
        match lines.next() {
            Some(line) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break serde_json::from_str(&line)?;
                }
            }
            None => return Err(Error::Data("effect file is empty".into())),
        }
    };
    let mut patient_ids = header.patient_ids;
    patient_ids.sort_unstable();
    let width = header.relevant_labs.len();
    let mut records = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DeltaRecord = serde_json::from_str(&line)?;
        let bad = |what: &str| Error::Data(format!("effect file line {}: {what}", i + 2));
        if r.delta.len() != width {
            return Err(bad("delta width differs from the header"));
        }
        if r.window >= header.n_windows {
            return Err(bad("window beyond the header horizon"));
        }
        if patient_ids.binary_search(&r.patient_id).is_err() {
            return Err(bad("patient not listed in the header"));
        }
        if records.insert((r.patient_id, r.window), r).is_some() {
            return Err(bad("duplicate patient window"));
        }
    }
    Ok(DeltaSet {
        relevant_labs: header.relevant_labs,
        n_windows: header.n_windows,
        patient_ids,
        records,
    })
}

pub fn load_deltas(path: impl AsRef<Path>) -> Result<DeltaSet> {
    read_deltas(BufReader::new(File::open(path)?))
}

pub fn write_match_report(rows: &[MatchReportRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "pair,treated_count,match_rate,mean_gap")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.pair, r.treated_count, r.match_rate, r.mean_gap)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_match_report(rows: &[MatchReportRow], path: impl AsRef<Path>) -> Result<()> {
    write_match_report(rows, BufWriter::new(File::create(path)?))
}
