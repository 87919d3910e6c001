//! IMU CSV reading/writing and JSON-lines output.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{PsmError, Result};
use crate::signal::ImuSample;

pub const CSV_HEADER: [&str; 10] = ["t", "theta_mx", "theta_my", "theta_mz", "gx", "gy", "gz", "ax", "ay", "az"];

#[derive(Debug, Deserialize)]
struct Row {
    t: f64,
    theta_mx: f64,
    theta_my: f64,
    theta_mz: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    ax: f64,
    ay: f64,
    az: f64,
    #[serde(default, rename = "unsafe")]
    unsafe_label: Option<u8>,
}

impl Row {
    fn into_sample(self) -> Result<(ImuSample, Option<bool>)> {
        let label = match self.unsafe_label {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(v) => return Err(PsmError::InvalidSample(format!("unsafe column must be 0 or 1, got {v}"))),
        };
        let sample = ImuSample {
            t: self.t,
            theta_m: Vector3::new(self.theta_mx, self.theta_my, self.theta_mz),
            theta_dot_m: Vector3::new(self.gx, self.gy, self.gz),
            accel: Vector3::new(self.ax, self.ay, self.az),
        };
        sample.validate()?;
        Ok((sample, label))
    }
}

/// Streams samples (and the optional `unsafe` label column) from CSV.
pub fn read_samples<R: Read>(reader: R) -> impl Iterator<Item = Result<(ImuSample, Option<bool>)>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader)
        .into_deserialize::<Row>()
        .map(|row| row.map_err(PsmError::from).and_then(Row::into_sample))
}

pub fn open_samples(path: &Path) -> Result<impl Iterator<Item = Result<(ImuSample, Option<bool>)>>> {
    let file = std::fs::File::open(path)?;
    Ok(read_samples(std::io::BufReader::new(file)))
}

pub fn load_samples(path: &Path) -> Result<Vec<ImuSample>> {
    open_samples(path)?.map(|r| r.map(|(s, _)| s)).collect()
}

/// Writes samples as CSV; adds the `unsafe` column when labels are given.
pub fn write_samples<W: Write>(writer: W, samples: &[ImuSample], labels: Option<&[bool]>) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != samples.len() {
            return Err(PsmError::InvalidParams("label count differs from sample count".into()));
        }
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CSV_HEADER.to_vec();
    if labels.is_some() {
        header.push("unsafe");
    }
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(11);
    for (i, s) in samples.iter().enumerate() {
        record.clear();
        record.push(s.t.to_string());
        for v in s.theta_m.iter().chain(s.theta_dot_m.iter()).chain(s.accel.iter()) {
            record.push(v.to_string());
        }
        if let Some(l) = labels {
            record.push(if l[i] { "1" } else { "0" }.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(writer: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}
