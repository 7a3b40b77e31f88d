//! Dataset files: a CSV table `scenario_id, split, x_0..x_11, y_0..y_{D-1}`
//! next to a `<stem>.meta.json` document describing how it was produced.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surrogate_core::sampling::InputSchema;
use surrogate_core::{Dataset, OracleDescriptor, Split, SplitRatios, Tensor};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Latin hypercube over the continuous inputs.
    Lhs,
    /// Finite-difference blocks for sensitivity estimation.
    Dgsm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub seed: u64,
    pub ratios: SplitRatios,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgsmMeta {
    pub n_base: usize,
    pub delta: f64,
    pub block_size: usize,
    pub layout: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub strategy: Strategy,
    pub rows: usize,
    pub sample_seed: u64,
    pub inputs: InputSchema,
    pub split: Option<SplitMeta>,
    pub dgsm: Option<DgsmMeta>,
    pub oracle: Option<OracleDescriptor>,
    pub config: PipelineConfig,
}

impl DatasetMeta {
    pub fn output_dim(&self) -> usize {
        self.oracle.as_ref().map_or(0, |o| o.outputs.dim())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub meta: DatasetMeta,
    pub ids: Vec<u64>,
    pub data: Dataset<f64>,
}

pub fn meta_path(data: &Path) -> PathBuf {
    data.with_extension("meta.json")
}

pub fn header(n_inputs: usize, n_outputs: usize) -> Vec<String> {
    let mut h = vec!["scenario_id".to_string(), "split".to_string()];
    h.extend((0..n_inputs).map(|i| format!("x_{i}")));
    h.extend((0..n_outputs).map(|j| format!("y_{j}")));
    h
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = BufWriter::new(File::create(path).map_err(CliError::io(path))?);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::io(path)(e.into()))?;
    out.write_all(b"\n").map_err(CliError::io(path))?;
    out.flush().map_err(CliError::io(path))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path, missing_hint: &str) -> CliResult<T> {
    if !path.is_file() {
        return Err(CliError::Missing(format!("{} not found; {missing_hint}", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))
}

/// Writes the table row by row; a 22,542-column row is never held as more
/// than one formatted record.
pub fn write_dataset(path: &Path, file: &DatasetFile) -> CliResult<()> {
    let x = &file.data.inputs;
    let y = file.data.outputs.as_ref();
    let n_out = y.map_or(0, Tensor::cols);
    if n_out != file.meta.output_dim() {
        return Err(CliError::Integrity(format!(
            "{n_out} output columns but metadata describes {}",
            file.meta.output_dim()
        )));
    }
    let io = |e: csv::Error| CliError::io(path)(e.into());
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path).map_err(CliError::io(path))?));
    w.write_record(header(x.cols(), n_out)).map_err(io)?;
    let mut buf = String::new();
    for r in 0..x.rows() {
        w.write_field(file.ids[r].to_string()).map_err(io)?;
        w.write_field(file.data.splits[r].as_str()).map_err(io)?;
        let ys = y.map_or(&[][..], |t| t.row(r));
        for v in x.row(r).iter().chain(ys) {
            buf.clear();
            use std::fmt::Write as _;
            let _ = write!(buf, "{v}");
            w.write_field(&buf).map_err(io)?;
        }
        w.write_record(None::<&[u8]>).map_err(io)?;
    }
    w.flush().map_err(CliError::io(path))?;
    write_json(&meta_path(path), &file.meta)
}

pub fn read_dataset(path: &Path) -> CliResult<DatasetFile> {
    if !path.is_file() {
        return Err(CliError::Missing(format!(
            "dataset {} not found; run `surrogate sample` first",
            path.display()
        )));
    }
    let meta: DatasetMeta = read_json(&meta_path(path), "the dataset metadata sidecar is missing")?;
    if meta.format_version != FORMAT_VERSION {
        return Err(CliError::Integrity(format!(
            "{}: unsupported format version {}",
            path.display(),
            meta.format_version
        )));
    }
    let n_in = meta.inputs.len();
    let n_out = meta.output_dim();
    let width = 2 + n_in + n_out;
    let bad = |msg: String| CliError::Integrity(format!("{}: {msg}", path.display()));

    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path)(e.into()))?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header(n_in, n_out) {
        return Err(bad(format!(
            "expected {width} columns (2 + {n_in} inputs + {n_out} outputs), header has {}",
            found.len()
        )));
    }

    let rows = meta.rows;
    let mut ids = Vec::with_capacity(rows);
    let mut seen = HashSet::with_capacity(rows);
    let mut splits = Vec::with_capacity(rows);
    let mut xs = Vec::with_capacity(rows * n_in);
    let mut ys = Vec::with_capacity(rows * n_out);
    let mut record = csv::StringRecord::new();
    let mut line = 1;
    while reader.read_record(&mut record).map_err(|e| bad(e.to_string()))? {
        line += 1;
        if record.len() != width {
            return Err(bad(format!("line {line}: {} fields, expected {width}", record.len())));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| bad(format!("line {line}: invalid scenario_id {:?}", &record[0])))?;
        if !seen.insert(id) {
            return Err(bad(format!("line {line}: duplicate scenario_id {id}")));
        }
        ids.push(id);
        splits.push(
            record[1]
                .parse::<Split>()
                .map_err(|_| bad(format!("line {line}: split must be train, val or test, got {:?}", &record[1])))?,
        );
        for (c, field) in record.iter().enumerate().skip(2) {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("line {line}, column {}: not a number: {field:?}", found[c])))?;
            if c < 2 + n_in {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ids.len() != rows {
        return Err(bad(format!("metadata promises {rows} rows, table has {}", ids.len())));
    }
    let inputs = Tensor::matrix(rows, n_in, xs)?;
    let outputs = if n_out > 0 {
        Some(Tensor::matrix(rows, n_out, ys)?)
    } else {
        None
    };
    Ok(DatasetFile {
        meta,
        ids,
        data: Dataset::new(inputs, outputs, splits)?,
    })
}
