//! CSV outputs. Every file starts with the run config echoed as `# ` comment
//! lines so a table can be traced back to the settings that produced it.
//! Floats use Rust's shortest round-trip formatting, so output is
//! byte-stable for bit-identical inputs.

use std::io::Write;

use crate::config::{AblationLevel, RunConfig};
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::model::EpochLog;
use crate::tensor::Tensor;

/// The config as TOML, each line prefixed with `# `.
pub fn config_header(config: &RunConfig) -> Result<String> {
    let toml = config.to_toml()?;
    let mut out = String::new();
    for line in toml.lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn writer<W: Write>(mut w: W, header: &str) -> Result<csv::Writer<W>> {
    w.write_all(header.as_bytes())?;
    Ok(csv::Writer::from_writer(w))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// `mAP,CP,CR,CF1,OP,OR,OF1` and one row of values.
pub fn write_metrics<W: Write>(w: W, header: &str, report: &MetricsReport) -> Result<()> {
    let mut csv = writer(w, header)?;
    csv.write_record(MetricsReport::COLUMNS)?;
    csv.write_record(report.values().iter().map(|&v| fmt(v)))?;
    csv.flush()?;
    Ok(())
}

/// `label,ap`; `ap` is empty for labels without positives, which mAP skips.
pub fn write_per_label_ap<W: Write>(w: W, header: &str, report: &MetricsReport) -> Result<()> {
    let mut csv = writer(w, header)?;
    csv.write_record(["label", "ap"])?;
    for (i, ap) in report.per_label_ap.iter().enumerate() {
        csv.write_record([i.to_string(), ap.map(fmt).unwrap_or_default()])?;
    }
    csv.flush()?;
    Ok(())
}

/// `method,mAP,CP,CR,CF1,OP,OR,OF1`, one row per ablation level.
pub fn write_ablation<W: Write>(
    w: W,
    header: &str,
    rows: &[(AblationLevel, MetricsReport)],
) -> Result<()> {
    let mut csv = writer(w, header)?;
    let mut head = vec!["method"];
    head.extend(MetricsReport::COLUMNS);
    csv.write_record(&head)?;
    for (level, report) in rows {
        let mut rec = vec![level.label().to_string()];
        rec.extend(report.values().iter().map(|&v| fmt(v)));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// `epoch,lr,loss`.
pub fn write_loss_log<W: Write>(w: W, header: &str, log: &[EpochLog]) -> Result<()> {
    let mut csv = writer(w, header)?;
    csv.write_record(["epoch", "lr", "loss"])?;
    for e in log {
        csv.write_record([e.epoch.to_string(), fmt(e.lr), fmt(e.mean_loss)])?;
    }
    csv.flush()?;
    Ok(())
}

/// A square label matrix: `row,0,1,...,C-1`.
pub fn write_matrix<W: Write>(w: W, header: &str, m: &Tensor) -> Result<()> {
    let mut csv = writer(w, header)?;
    let mut head = vec!["row".to_string()];
    head.extend((0..m.cols()).map(|j| j.to_string()));
    csv.write_record(&head)?;
    for (i, row) in m.row_iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|&v| fmt(v)));
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

/// `sample,region,z` for every region of every listed sample.
pub fn write_region_weights<W: Write>(w: W, header: &str, z: &[(usize, Vec<f64>)]) -> Result<()> {
    let mut csv = writer(w, header)?;
    csv.write_record(["sample", "region", "z"])?;
    for (s, zs) in z {
        for (r, &v) in zs.iter().enumerate() {
            csv.write_record([s.to_string(), r.to_string(), fmt(v)])?;
        }
    }
    csv.flush()?;
    Ok(())
}
