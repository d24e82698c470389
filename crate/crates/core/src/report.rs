//! CSV emitters for learning curves, sweeps and variation studies.

use std::io::{self, Write};

use crate::train::ExperimentRecord;

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,test_acc,wall_seconds";
pub const SWEEP_HEADER: &str = "param,value,test_acc,activity";
pub const PRECISION_HEADER: &str = "dac_bits,adc_bits,test_acc";
pub const VARIATION_HEADER: &str = "sigma_cell,trial,dot_value";

pub fn write_metrics<W: Write>(mut out: W, records: &[ExperimentRecord]) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch, r.train_loss, r.train_acc, r.test_acc, r.wall_seconds
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// One of `block_size`, `support_bits`, `eps`, `drop_frac`, `sigma`.
    pub param: String,
    pub value: f64,
    pub test_acc: f64,
    pub activity: f64,
}

pub fn write_sweep<W: Write>(mut out: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.param, r.value, r.test_acc, r.activity)?;
    }
    Ok(())
}

pub fn write_precision<W: Write>(mut out: W, rows: &[(u32, u32, f64)]) -> io::Result<()> {
    writeln!(out, "{PRECISION_HEADER}")?;
    for (dac, adc, acc) in rows {
        writeln!(out, "{dac},{adc},{acc}")?;
    }
    Ok(())
}

/// `(sigma_cell, trial, dot_value)` rows.
pub fn write_variation<W: Write>(mut out: W, rows: &[(f64, usize, f64)]) -> io::Result<()> {
    writeln!(out, "{VARIATION_HEADER}")?;
    for (sigma, trial, v) in rows {
        writeln!(out, "{sigma},{trial},{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_layout() {
        let rec = ExperimentRecord {
            epoch: 0,
            train_loss: 0.5,
            train_acc: 0.75,
            test_acc: 0.8,
            wall_seconds: 0.0,
        };
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[rec]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,train_acc,test_acc,wall_seconds\n0,0.5,0.75,0.8,0\n"
        );
    }

    #[test]
    fn sweep_layout() {
        let mut buf = Vec::new();
        write_sweep(
            &mut buf,
            &[SweepRow {
                param: "drop_frac".into(),
                value: 0.52,
                test_acc: 0.98,
                activity: 0.48,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "param,value,test_acc,activity\ndrop_frac,0.52,0.98,0.48\n"
        );
    }
}
