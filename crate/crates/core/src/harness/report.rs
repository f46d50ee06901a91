//! CSV outputs of a grid run.
//!
//! `results.csv`: `outcome,model,method,time_step,run,metric_name,value,mean_flag`,
//! one line per run (`mean_flag` 0) followed by the cell mean (`run` = `all`,
//! `mean_flag` 1). Invalid runs and failed cells print `NA`.
//!
//! `pvalues.csv`: `time_step,n,min,q1,median,q3,max,frac_below_0.05`, one line
//! per time step and a final `all` line.
//!
//! `series.csv`: `outcome,model,method,time_step,mean,sd,n_valid`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::experiment::GridReport;
use crate::error::Result;
use crate::stats::{five_number_summary, mean, std_dev};

fn value(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_results(report: &GridReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "outcome,model,method,time_step,run,metric_name,value,mean_flag")?;
    for row in &report.rows {
        let prefix = format!(
            "{},{},{},{}",
            row.outcome_label(),
            row.cell.model.name(),
            row.cell.method.name(),
            row.cell.time_step
        );
        for (r, v) in row.runs.iter().enumerate() {
            writeln!(out, "{prefix},{r},{},{},0", row.metric_name, value(*v))?;
        }
        writeln!(out, "{prefix},all,{},{},1", row.metric_name, value(row.mean))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_pvalues(report: &GridReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "time_step,n,min,q1,median,q3,max,frac_below_0.05")?;
    let groups = report.pvalues_by_time_step();
    let all: Vec<f64> = groups.values().flatten().copied().collect();
    let mut line = |label: String, values: &[f64]| -> Result<()> {
        match five_number_summary(values) {
            Some(q) => {
                let below = values.iter().filter(|&&p| p < 0.05).count() as f64 / values.len() as f64;
                writeln!(out, "{label},{},{},{},{},{},{},{below}", values.len(), q[0], q[1], q[2], q[3], q[4])?
            }
            None => writeln!(out, "{label},0,NA,NA,NA,NA,NA,NA")?,
        }
        Ok(())
    };
    for (k, values) in &groups {
        line(k.to_string(), values)?;
    }
    line("all".into(), &all)?;
    out.flush()?;
    Ok(())
}

pub fn write_series(report: &GridReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "outcome,model,method,time_step,mean,sd,n_valid")?;
    let mut rows: Vec<_> = report.rows.iter().collect();
    rows.sort_by_key(|r| (r.cell.outcome, r.cell.model, r.cell.method, r.cell.time_step));
    for row in rows {
        let valid: Vec<f64> = row.runs.iter().flatten().copied().collect();
        let (m, sd) = if valid.is_empty() {
            (None, None)
        } else {
            (Some(mean(&valid)), Some(std_dev(&valid)))
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.outcome_label(),
            row.cell.model.name(),
            row.cell.method.name(),
            row.cell.time_step,
            value(m),
            value(sd),
            valid.len()
        )?;
    }
    out.flush()?;
    Ok(())
}

fn save(path: impl AsRef<Path>, f: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
    f(BufWriter::new(File::create(path)?))
}

pub fn save_results(report: &GridReport, path: impl AsRef<Path>) -> Result<()> {
    save(path, |w| write_results(report, w))
}

pub fn save_pvalues(report: &GridReport, path: impl AsRef<Path>) -> Result<()> {
    save(path, |w| write_pvalues(report, w))
}

pub fn save_series(report: &GridReport, path: impl AsRef<Path>) -> Result<()> {
    save(path, |w| write_series(report, w))
}
