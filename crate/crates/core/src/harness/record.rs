use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{DatasetKind, PartitionName};
use crate::fusion::FusionMethod;
use crate::{Error, Result};

/// One (setting, method, trial) measurement. Column order matches the CSV
/// header `dataset,partition,alpha,clients,depth,method,trial,seed,accuracy,wall_ms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: DatasetKind,
    pub partition: PartitionName,
    pub alpha: Option<f64>,
    pub clients: usize,
    pub depth: String,
    pub method: FusionMethod,
    pub trial: usize,
    pub seed: u64,
    /// Test accuracy in `[0, 1]`.
    pub accuracy: f64,
    /// Fusion plus evaluation time for this method.
    pub wall_ms: f64,
}

impl ResultRecord {
    /// Equality ignoring `wall_ms`.
    pub fn same_outcome(&self, other: &Self) -> bool {
        Self { wall_ms: 0.0, ..self.clone() } == Self { wall_ms: 0.0, ..other.clone() }
    }
}

pub fn write_records_csv<W: Write>(w: W, records: &[ResultRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wtr.write_record([
            "dataset", "partition", "alpha", "clients", "depth", "method", "trial", "seed",
            "accuracy", "wall_ms",
        ])?;
    }
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(r: R) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let records = rdr.deserialize().collect::<std::result::Result<Vec<ResultRecord>, _>>()?;
    for r in &records {
        if !(0.0..=1.0).contains(&r.accuracy) {
            return Err(Error::InvalidConfig(format!("accuracy {} outside [0, 1]", r.accuracy)));
        }
    }
    Ok(records)
}

pub fn write_records_jsonl<W: Write>(mut w: W, records: &[ResultRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(r: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn save_records_csv(path: impl AsRef<Path>, records: &[ResultRecord]) -> Result<()> {
    write_records_csv(std::fs::File::create(path)?, records)
}

pub fn load_records_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    read_records_csv(std::fs::File::open(path)?)
}
