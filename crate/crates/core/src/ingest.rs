//! Reading and writing the text formats, plus the ratio transform.
//!
//! Matrix files: a header row (`feature_id` then sample ids) followed by one
//! row per feature. Metadata files: `sample_id, role, compound, replicate,
//! control_id`. Weights files: `sample_a, sample_b, weight`. Metadata and
//! weights files may be tab- or comma-separated; the delimiter is taken from
//! the header line.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ExpressionMatrix, PairWeights, RatioMatrix, SampleMeta, SampleRecord, SampleRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Tsv,
    Csv,
}

impl Format {
    /// `.csv` files are comma-separated; everything else is read as TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }

    pub fn delimiter(self) -> u8 {
        match self {
            Format::Tsv => b'\t',
            Format::Csv => b',',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroReplacement {
    pub sample_id: String,
    pub replacement_value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub zero_replacements: Vec<ZeroReplacement>,
    pub dropped_features: Vec<String>,
    pub warnings: Vec<String>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn csv_err(source_name: &str, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(source_name, e),
        other => Error::Parse {
            source_name: source_name.to_string(),
            line,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

fn line_of(record: &StringRecord) -> usize {
    record.position().map(|p| p.line() as usize).unwrap_or(0)
}

pub fn load_matrix(path: &Path, format: Format) -> Result<(ExpressionMatrix, IngestReport)> {
    read_matrix(open(path)?, format, &path.display().to_string())
}

pub fn read_matrix<R: Read>(
    reader: R,
    format: Format,
    source_name: &str,
) -> Result<(ExpressionMatrix, IngestReport)> {
    let mut rdr = ReaderBuilder::new()
        .delimiter(format.delimiter())
        .has_headers(false)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_err(source_name, e))?,
        None => {
            return Err(Error::Parse {
                source_name: source_name.into(),
                line: 1,
                column: 1,
                message: "empty file".into(),
            })
        }
    };
    let sample_ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let width = header.len();

    let mut feature_ids = Vec::new();
    let mut values = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_err(source_name, e))?;
        let line = line_of(&record);
        if record.len() != width {
            return Err(Error::RaggedRow {
                source_name: source_name.into(),
                line,
                expected: width,
                found: record.len(),
            });
        }
        let feature = record[0].to_string();
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                source_name: source_name.into(),
                line,
                column: col + 1,
                message: format!(
                    "feature '{feature}', sample '{}': '{field}' is not a number",
                    sample_ids[col - 1]
                ),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    source_name: source_name.into(),
                    line,
                    column: col + 1,
                    message: format!(
                        "feature '{feature}', sample '{}': value {field} must be finite and nonnegative",
                        sample_ids[col - 1]
                    ),
                });
            }
            values.push(v);
        }
        feature_ids.push(feature);
    }

    for (ids, what) in [(&feature_ids, "feature"), (&sample_ids, "sample")] {
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId {
                source_name: source_name.into(),
                what,
                id: dup.clone(),
            });
        }
    }

    let mut report = IngestReport::default();
    let s = sample_ids.len();
    let mut kept_ids = Vec::with_capacity(feature_ids.len());
    let mut kept = Vec::with_capacity(values.len());
    for (f, id) in feature_ids.into_iter().enumerate() {
        let row = &values[f * s..(f + 1) * s];
        if s > 0 && row.iter().all(|&v| v == 0.0) {
            report.dropped_features.push(id);
        } else {
            kept.extend_from_slice(row);
            kept_ids.push(id);
        }
    }
    let matrix = ExpressionMatrix::new(kept_ids, sample_ids, kept)?;

    for j in 0..matrix.n_samples() {
        let column = matrix.column(j);
        let zeros = column.iter().filter(|&&v| v == 0.0).count();
        if zeros == 0 {
            continue;
        }
        let id = matrix.sample_ids()[j].clone();
        match replacement_value(&column) {
            Ok(value) => report.zero_replacements.push(ZeroReplacement {
                sample_id: id,
                replacement_value: value,
                count: zeros,
            }),
            Err(_) => report
                .warnings
                .push(format!("sample '{id}' is zero for every feature")),
        }
    }
    Ok((matrix, report))
}

/// Values are written with 17 significant digits so they read back exactly.
pub fn write_matrix<W: Write>(matrix: &ExpressionMatrix, writer: W, format: Format) -> Result<()> {
    let sep = format.delimiter() as char;
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<matrix output>", e);
    write!(w, "feature_id").map_err(io)?;
    for id in matrix.sample_ids() {
        write!(w, "{sep}{id}").map_err(io)?;
    }
    writeln!(w).map_err(io)?;
    for f in 0..matrix.n_features() {
        write!(w, "{}", matrix.feature_ids()[f]).map_err(io)?;
        for v in matrix.row(f) {
            write!(w, "{sep}{v:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_matrix(matrix: &ExpressionMatrix, path: &Path, format: Format) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix(matrix, file, format).map_err(|e| relabel_io(e, path))
}

fn relabel_io(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Reads a small delimited table whose delimiter is sniffed from the header.
fn read_table<R: Read>(mut reader: R, source_name: &str) -> Result<(StringRecord, Vec<StringRecord>)> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io(source_name, e))?;
    let first = text.lines().next().unwrap_or("");
    let delimiter = if first.contains('\t') { b'\t' } else { b',' };
    let mut rdr = ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| csv_err(source_name, e))?.clone();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_err(source_name, e))?;
    Ok((header, rows))
}

fn column_map(header: &StringRecord, required: &[&str], source_name: &str) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h.eq_ignore_ascii_case(name))
                .ok_or_else(|| Error::Parse {
                    source_name: source_name.into(),
                    line: 1,
                    column: 0,
                    message: format!("missing required column '{name}'"),
                })
        })
        .collect()
}

const META_COLUMNS: [&str; 5] = ["sample_id", "role", "compound", "replicate", "control_id"];

pub fn load_meta(path: &Path) -> Result<SampleMeta> {
    read_meta(open(path)?, &path.display().to_string())
}

pub fn read_meta<R: Read>(reader: R, source_name: &str) -> Result<SampleMeta> {
    let (header, rows) = read_table(reader, source_name)?;
    let cols = column_map(&header, &META_COLUMNS, source_name)?;
    let mut records = Vec::with_capacity(rows.len());
    for row in &rows {
        let line = line_of(row);
        let field = |i: usize| row.get(cols[i]).unwrap_or("");
        let role = match field(1).to_ascii_lowercase().as_str() {
            "control" => SampleRole::Control,
            "treated" => SampleRole::Treated,
            other => {
                return Err(Error::UnknownRole {
                    source_name: source_name.into(),
                    line,
                    token: other.to_string(),
                })
            }
        };
        let replicate: u32 = field(3).parse().map_err(|_| Error::Parse {
            source_name: source_name.into(),
            line,
            column: cols[3] + 1,
            message: format!("replicate '{}' is not a positive integer", field(3)),
        })?;
        let control = field(4);
        records.push(SampleRecord {
            sample_id: field(0).to_string(),
            role,
            compound: field(2).to_string(),
            replicate,
            control_id: (!control.is_empty()).then(|| control.to_string()),
        });
    }
    SampleMeta::new(records)
}

pub fn write_meta<W: Write>(meta: &SampleMeta, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<metadata output>", e);
    writeln!(w, "{}", META_COLUMNS.join("\t")).map_err(io)?;
    for r in meta.records() {
        let role = match r.role {
            SampleRole::Control => "control",
            SampleRole::Treated => "treated",
        };
        writeln!(
            w,
            "{}\t{role}\t{}\t{}\t{}",
            r.sample_id,
            r.compound,
            r.replicate,
            r.control_id.as_deref().unwrap_or("")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Loads pair weights keyed by treated sample id. Pairs not listed keep `default`.
pub fn load_weights(path: &Path, treated_ids: &[String], default: i8) -> Result<PairWeights> {
    read_weights(open(path)?, &path.display().to_string(), treated_ids, default)
}

pub fn read_weights<R: Read>(
    reader: R,
    source_name: &str,
    treated_ids: &[String],
    default: i8,
) -> Result<PairWeights> {
    let (header, rows) = read_table(reader, source_name)?;
    let cols = column_map(&header, &["sample_a", "sample_b", "weight"], source_name)?;
    let index: HashMap<&str, usize> = treated_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut weights = PairWeights::uniform(treated_ids.len(), default)?;
    let mut listed: HashMap<(usize, usize), i8> = HashMap::new();
    for row in &rows {
        let line = line_of(row);
        let lookup = |c: usize| -> Result<usize> {
            let id = row.get(cols[c]).unwrap_or("");
            index.get(id).copied().ok_or_else(|| Error::Parse {
                source_name: source_name.into(),
                line,
                column: cols[c] + 1,
                message: format!("'{id}' is not a treated sample"),
            })
        };
        let (a, b) = (lookup(0)?, lookup(1)?);
        let raw = row.get(cols[2]).unwrap_or("");
        let w: i8 = raw
            .parse()
            .ok()
            .filter(|w| (-1..=1).contains(w))
            .ok_or_else(|| Error::Parse {
                source_name: source_name.into(),
                line,
                column: cols[2] + 1,
                message: format!("weight '{raw}' is not one of -1, 0, 1"),
            })?;
        if a == b {
            return Err(Error::Parse {
                source_name: source_name.into(),
                line,
                column: cols[1] + 1,
                message: "a sample cannot be paired with itself".into(),
            });
        }
        let key = (a.min(b), a.max(b));
        if let Some(prev) = listed.insert(key, w) {
            if prev != w {
                return Err(Error::Parse {
                    source_name: source_name.into(),
                    line,
                    column: cols[2] + 1,
                    message: "pair listed twice with different weights".into(),
                });
            }
        }
        weights.set(a, b, w)?;
    }
    Ok(weights)
}

pub fn write_weights<W: Write>(treated_ids: &[String], weights: &PairWeights, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e| Error::io("<weights output>", e);
    writeln!(w, "sample_a\tsample_b\tweight").map_err(io)?;
    for (a, b, wt) in weights.pairs() {
        writeln!(w, "{}\t{}\t{wt}", treated_ids[a], treated_ids[b]).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Smallest strictly positive value of a column; stands in for zeros in that column.
pub fn replacement_value(column: &[f64]) -> Result<f64> {
    column
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::AllZeroColumn {
            sample: "<column>".into(),
        })
}

fn check_pairing(matrix: &ExpressionMatrix, meta: &SampleMeta) -> Result<()> {
    let in_matrix: HashSet<&str> = matrix.sample_ids().iter().map(String::as_str).collect();
    let in_meta: HashSet<&str> = meta.records().iter().map(|r| r.sample_id.as_str()).collect();
    let mut missing: Vec<&str> = in_matrix.difference(&in_meta).copied().collect();
    let mut extra: Vec<&str> = in_meta.difference(&in_matrix).copied().collect();
    if missing.is_empty() && extra.is_empty() {
        return Ok(());
    }
    missing.sort_unstable();
    extra.sort_unstable();
    Err(Error::SampleMismatch {
        detail: format!("not in metadata: {missing:?}; not in matrix: {extra:?}"),
    })
}

/// Treated sample ids in matrix column order.
pub fn treated_ids(matrix: &ExpressionMatrix, meta: &SampleMeta) -> Vec<String> {
    matrix
        .sample_ids()
        .iter()
        .filter(|id| meta.get(id).is_some_and(|r| r.role == SampleRole::Treated))
        .cloned()
        .collect()
}

/// log2(treated / control) for every feature and treated sample. A zero on
/// either side is replaced by the smallest positive value of its own column.
pub fn compute_ratios(matrix: &ExpressionMatrix, meta: &SampleMeta) -> Result<RatioMatrix> {
    check_pairing(matrix, meta)?;
    let treated = treated_ids(matrix, meta);

    let mut replacements: HashMap<usize, f64> = HashMap::new();
    let mut replacement_for = |col: usize| -> Result<f64> {
        if let Some(&v) = replacements.get(&col) {
            return Ok(v);
        }
        let v = replacement_value(&matrix.column(col)).map_err(|_| Error::AllZeroColumn {
            sample: matrix.sample_ids()[col].clone(),
        })?;
        replacements.insert(col, v);
        Ok(v)
    };

    let mut pairs = Vec::with_capacity(treated.len());
    for id in &treated {
        let record = meta.get(id).expect("paired above");
        let control = record.control_id.as_deref().expect("validated by SampleMeta");
        let y_col = matrix.sample_index(id).expect("paired above");
        let x_col = matrix.sample_index(control).expect("paired above");
        pairs.push((x_col, replacement_for(x_col)?, y_col, replacement_for(y_col)?));
    }

    let g = treated.len();
    let mut ratios = Vec::with_capacity(matrix.n_features() * g);
    for f in 0..matrix.n_features() {
        for &(x_col, x_rep, y_col, y_rep) in &pairs {
            let x = matrix.value(f, x_col);
            let y = matrix.value(f, y_col);
            let x = if x > 0.0 { x } else { x_rep };
            let y = if y > 0.0 { y } else { y_rep };
            ratios.push((y / x).log2());
        }
    }
    RatioMatrix::new(matrix.feature_ids().to_vec(), treated, ratios)
}
