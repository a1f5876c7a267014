//! Dataset files: a CSV of feature rows plus a JSON sidecar.
//!
//! The CSV header is `f0001_amp,...,f0NNN_amp,f0001_phi,...,f0NNN_phi,label`.
//! Features are written with 17 significant digits so every value parses
//! back to the identical `f64`. The sidecar (same path, `.json` extension)
//! carries the grid, the class parameter grids, the normalization maxima
//! and the split seed.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassGridSpec, Dataset, NormStats};
use crate::response::{FrequencyGrid, MicClass};
use crate::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub grid: FrequencyGrid,
    pub specs: Vec<ClassGridSpec>,
    pub norm_max_abs: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub records: usize,
    pub provenance: String,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Header column names for a grid of `n` points.
pub fn header(n: usize) -> Vec<String> {
    let mut cols: Vec<String> = (1..=n).map(|i| format!("f{i:04}_amp")).collect();
    cols.extend((1..=n).map(|i| format!("f{i:04}_phi")));
    cols.push("label".into());
    cols
}

/// Fixed 17-significant-digit scientific notation.
pub fn format_f64(v: f64, buf: &mut String) {
    buf.clear();
    write!(buf, "{v:.16e}").expect("writing to a String");
}

/// Streams the dataset as CSV into any writer.
pub fn write_dataset_csv<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(header(d.grid.count)).map_err(csv_error)?;
    let mut buf = String::with_capacity(32);
    for (row, label) in d.rows() {
        for v in row {
            format_f64(*v, &mut buf);
            w.write_field(&buf).map_err(csv_error)?;
        }
        w.write_field(label.index().to_string()).map_err(csv_error)?;
        w.write_record(None::<&[u8]>).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `path` (CSV) and its sidecar.
pub fn save_dataset(d: &Dataset, path: &Path, specs: &[ClassGridSpec], seed: Option<u64>) -> Result<()> {
    let file = File::create(path)?;
    write_dataset_csv(d, BufWriter::with_capacity(1 << 20, file))?;
    let sidecar = Sidecar {
        schema_version: DATASET_SCHEMA_VERSION,
        grid: d.grid.clone(),
        specs: specs.to_vec(),
        norm_max_abs: d.norm.as_ref().map(|n| n.max_abs.clone()),
        seed,
        records: d.len(),
        provenance: d.provenance.clone(),
    };
    let mut f = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn load_sidecar(csv: &Path) -> Result<Sidecar> {
    let text = std::fs::read_to_string(sidecar_path(csv))?;
    let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("sidecar: {e}")))?;
    if s.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::Schema(format!("unsupported dataset schema version {}", s.schema_version)));
    }
    s.grid.validate()?;
    if let Some(n) = &s.norm_max_abs {
        if n.len() != 2 * s.grid.count {
            return Err(Error::Schema(format!(
                "sidecar normalization has {} entries for a {}-point grid",
                n.len(),
                s.grid.count
            )));
        }
    }
    Ok(s)
}

fn csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        },
        csv::ErrorKind::UnequalLengths { .. } => Error::Schema(e.to_string()),
        _ => Error::Parse(e.to_string()),
    }
}

fn ends_with_newline(file: &mut File) -> Result<bool> {
    let len = file.metadata()?.len();
    if len == 0 {
        return Ok(false);
    }
    file.seek(SeekFrom::Start(len - 1))?;
    let mut last = [0u8; 1];
    file.read_exact(&mut last)?;
    file.seek(SeekFrom::Start(0))?;
    Ok(last[0] == b'\n')
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let sidecar = load_sidecar(path)?;
    let mut file = File::open(path)?;
    if !ends_with_newline(&mut file)? {
        return Err(Error::Parse(format!("{} is truncated", path.display())));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::with_capacity(1 << 20, file));

    let expected = header(sidecar.grid.count);
    let found = rdr.headers().map_err(csv_error)?;
    if found.len() != expected.len() || found.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Schema(format!(
            "header has {} columns, grid of {} points needs {}",
            found.len(),
            sidecar.grid.count,
            expected.len()
        )));
    }

    let n_features = 2 * sidecar.grid.count;
    let mut d = Dataset::with_capacity(sidecar.grid.clone(), sidecar.provenance.clone(), sidecar.records);
    let mut row = vec![0.0; n_features];
    let mut record = csv::StringRecord::new();
    let mut line = 1usize;
    while rdr.read_record(&mut record).map_err(csv_error)? {
        line += 1;
        for (dst, field) in row.iter_mut().zip(record.iter()) {
            *dst = field
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: bad number {field:?}")))?;
        }
        let label: usize = record[n_features]
            .parse()
            .map_err(|_| Error::Parse(format!("line {line}: bad label {:?}", &record[n_features])))?;
        d.push(&row, MicClass::from_index(label)?)?;
    }
    if d.len() != sidecar.records {
        return Err(Error::Parse(format!(
            "expected {} records, found {} (truncated file?)",
            sidecar.records,
            d.len()
        )));
    }
    d.norm = sidecar.norm_max_abs.map(NormStats::new).transpose()?;
    Ok(d)
}

/// One raw sweep for classification: `frequency_hz,amplitude,phase_rad`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl Sweep {
    /// Raw feature row (amplitudes then phases) after checking the
    /// frequencies against `grid` to 1e-6 relative.
    pub fn features_for(&self, grid: &FrequencyGrid) -> Result<Vec<f64>> {
        if self.frequencies.len() != grid.count {
            return Err(Error::Schema(format!(
                "sweep has {} points, model grid has {}",
                self.frequencies.len(),
                grid.count
            )));
        }
        for (i, (f, g)) in self.frequencies.iter().zip(&grid.points).enumerate() {
            if (f - g).abs() > 1e-6 * g.abs().max(f64::MIN_POSITIVE) {
                return Err(Error::Schema(format!("sweep point {i} at {f} Hz, model grid expects {g} Hz")));
            }
        }
        Ok(self.amplitudes.iter().chain(&self.phases).copied().collect())
    }
}

pub fn write_sweep<W: Write>(sweep: &Sweep, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["frequency_hz", "amplitude", "phase_rad"]).map_err(csv_error)?;
    let mut buf = String::new();
    for i in 0..sweep.frequencies.len() {
        for v in [sweep.frequencies[i], sweep.amplitudes[i], sweep.phases[i]] {
            format_f64(v, &mut buf);
            w.write_field(&buf).map_err(csv_error)?;
        }
        w.write_record(None::<&[u8]>).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep<R: Read>(input: R) -> Result<Sweep> {
    let mut rdr = csv::Reader::from_reader(input);
    let h = rdr.headers().map_err(csv_error)?;
    if h.iter().collect::<Vec<_>>() != ["frequency_hz", "amplitude", "phase_rad"] {
        return Err(Error::Schema("sweep header must be frequency_hz,amplitude,phase_rad".into()));
    }
    let mut s = Sweep { frequencies: Vec::new(), amplitudes: Vec::new(), phases: Vec::new() };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let num = |k: usize| -> Result<f64> {
            rec[k].trim().parse().map_err(|_| Error::Parse(format!("sweep row {}: bad number {:?}", i + 1, &rec[k])))
        };
        s.frequencies.push(num(0)?);
        s.amplitudes.push(num(1)?);
        s.phases.push(num(2)?);
    }
    if s.frequencies.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(s)
}
