//! TEN1 tensor containers and metric CSV files.
//!
//! TEN1 layout, all integers little-endian:
//!
//! ```text
//! offset 0   4 bytes   magic "TEN1"
//! offset 4   1 byte    dtype: 0 = f32, 1 = f64
//! offset 5   1 byte    ndim
//! offset 6   8·ndim    dims as u64
//! ...        payload   Π dims values, IEEE-754 little-endian, row-major
//! ```
//!
//! A dataset is a TEN1 file with `ndim ≥ 2` whose leading axis indexes samples.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::factor_model::{Dataset, DatasetMeta};
use crate::tensor::{DenseTensor, TensorShape};

pub const MAGIC: &[u8; 4] = b"TEN1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Dtype {
    F32 = 0,
    #[default]
    F64 = 1,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn encode(dims: &[usize], values: impl Iterator<Item = f64>, dtype: Dtype) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("cannot store {} dims", dims.len())));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|c| c.checked_mul(dtype.size()))
        .ok_or_else(|| Error::InvalidArgument(format!("dims {dims:?} overflow")))?;
    let mut buf = Vec::with_capacity(6 + 8 * dims.len() + count);
    buf.extend_from_slice(MAGIC);
    buf.push(dtype as u8);
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        Dtype::F64 => values.for_each(|v| buf.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => values.for_each(|v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    Ok(buf)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn decode(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(Error::NotTen1(path.to_path_buf()));
    }
    let dtype = match bytes[4] {
        0 => Dtype::F32,
        1 => Dtype::F64,
        _ => return Err(Error::NotTen1(path.to_path_buf())),
    };
    let ndim = bytes[5] as usize;
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: header as u64,
            found: bytes.len() as u64,
        });
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|k| {
            let raw: [u8; 8] = bytes[6 + 8 * k..14 + 8 * k].try_into().unwrap();
            u64::from_le_bytes(raw) as usize
        })
        .collect();
    let payload = dims
        .iter()
        .try_fold(1u64, |a, &d| a.checked_mul(d as u64))
        .and_then(|c| c.checked_mul(dtype.size() as u64))
        .ok_or_else(|| Error::NotTen1(path.to_path_buf()))?;
    let expected = header as u64 + payload;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() as u64,
        });
    }
    let body = &bytes[header..expected as usize];
    let values = match dtype {
        Dtype::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok((dims, values))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(x: &DenseTensor, path: &Path, dtype: Dtype) -> Result<()> {
    write_bytes(path, &encode(x.dims(), x.data().iter().copied(), dtype)?)
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let (dims, values) = decode(path, &read_file(path)?)?;
    DenseTensor::from_dims(&dims, values)
}

pub fn write_dataset(data: &Dataset, path: &Path, dtype: Dtype) -> Result<()> {
    let mut dims = vec![data.len()];
    dims.extend_from_slice(data.shape().dims());
    let values = data.samples().iter().flat_map(|s| s.data().iter().copied());
    write_bytes(path, &encode(&dims, values, dtype)?)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let (dims, values) = decode(path, &read_file(path)?)?;
    if dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} holds a {}-dimensional array; datasets need a sample axis plus at least one mode",
            path.display(),
            dims.len()
        )));
    }
    let shape = TensorShape::new(dims[1..].to_vec())?;
    let per = shape.numel();
    let samples = values
        .chunks_exact(per)
        .map(|c| DenseTensor::new(shape.clone(), c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Dataset::new(samples, DatasetMeta::external())?;
    if data.samples().iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("{} contains NaN or Inf", path.display())));
    }
    data.meta.provenance = "external".into();
    Ok(data)
}

#[derive(Clone, Debug, PartialEq)]
pub enum MetricValue {
    Num(f64),
    Text(String),
}

impl MetricValue {
    fn render(&self) -> String {
        match self {
            MetricValue::Num(v) => format!("{v:.9e}"),
            MetricValue::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            MetricValue::Num(v) => Some(*v),
            MetricValue::Text(s) => s.parse().ok(),
        }
    }
}

/// One named record of a metrics table.
pub type MetricRecord = Vec<(String, MetricValue)>;

/// Writes a header row followed by one line per record. Numbers are printed
/// with ten significant digits in scientific notation.
pub fn write_metrics_csv(columns: &[String], rows: &[MetricRecord], path: &Path) -> Result<()> {
    for row in rows {
        let names: Vec<&String> = row.iter().map(|(k, _)| k).collect();
        if names.len() != columns.len() || names.iter().zip(columns).any(|(a, b)| *a != b) {
            return Err(Error::InvalidArgument(format!(
                "record fields {names:?} do not match columns {columns:?}"
            )));
        }
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row.iter().map(|(_, v)| v.render()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a metrics CSV back; cells that parse as numbers become [`MetricValue::Num`].
pub fn read_metrics_csv(path: &Path) -> Result<(Vec<String>, Vec<MetricRecord>)> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let columns: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(
            columns
                .iter()
                .zip(rec.iter())
                .map(|(k, v)| {
                    let val = v
                        .parse::<f64>()
                        .map(MetricValue::Num)
                        .unwrap_or_else(|_| MetricValue::Text(v.to_owned()));
                    (k.clone(), val)
                })
                .collect(),
        );
    }
    Ok((columns, rows))
}
