//! Accuracy-loss and compressed-size lookup tables built from calibration
//! records.
//!
//! Calibration record files are CSV with the header
//! `sample_id,layer,bit_depth,compressed_bytes,correct_before,correct_after`
//! (booleans as `true`/`false`), optionally preceded by `#` comment lines.
//! Tables persist as JSON carrying `schema_version`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{ModelProfile, UploadKind, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub sample_id: u64,
    pub layer: usize,
    pub bit_depth: u8,
    pub compressed_bytes: u64,
    pub correct_before: bool,
    pub correct_after: bool,
}

/// How a cell's compressed sizes collapse into one expected size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "q")]
pub enum SizeStatistic {
    #[default]
    Mean,
    /// Nearest-rank percentile, `q` in (0, 100].
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadSizes {
    pub raw: u64,
    pub encoded: u64,
}

impl UploadSizes {
    pub fn get(&self, kind: UploadKind) -> u64 {
        match kind {
            UploadKind::Raw => self.raw,
            UploadKind::Encoded => self.encoded,
        }
    }
}

/// `accuracy_loss[i-1][k]` and `expected_size[i-1][k]` hold the cell for
/// layer `i` and bit depth `bit_depths[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupTables {
    pub schema_version: u32,
    pub model_name: String,
    pub bit_depths: Vec<u8>,
    pub size_statistic: SizeStatistic,
    pub accuracy_loss: Vec<Vec<f64>>,
    pub expected_size: Vec<Vec<f64>>,
    pub sample_count: Vec<Vec<u64>>,
    pub upload: UploadSizes,
}

impl LookupTables {
    pub fn n_layers(&self) -> usize {
        self.accuracy_loss.len()
    }

    /// The largest configured bit depth, C.
    pub fn max_bits(&self) -> u8 {
        self.bit_depths.iter().copied().max().unwrap_or(0)
    }

    pub fn upload_sizes(&self) -> UploadSizes {
        self.upload
    }

    fn column(&self, bits: u8) -> Option<usize> {
        self.bit_depths.iter().position(|&c| c == bits)
    }

    fn cell(&self, layer: usize, bits: u8) -> Result<(usize, usize)> {
        match (layer, self.column(bits)) {
            (1.., Some(k)) if layer <= self.n_layers() => Ok((layer - 1, k)),
            _ => Err(Error::OutOfGrid { layer, bits }),
        }
    }

    /// Accuracy loss for splitting after `layer` at `bits`. Layer 0 is the
    /// all-cloud upload, which loses nothing.
    pub fn lookup_accuracy(&self, layer: usize, bits: u8) -> Result<f64> {
        if layer == 0 {
            return Ok(0.0);
        }
        let (i, k) = self.cell(layer, bits)?;
        Ok(self.accuracy_loss[i][k])
    }

    /// Expected bytes on the wire. Layer 0 returns the encoded input size;
    /// use [`LookupTables::upload_sizes`] for the raw one.
    pub fn lookup_size(&self, layer: usize, bits: u8) -> Result<f64> {
        if layer == 0 {
            return Ok(self.upload.encoded as f64);
        }
        let (i, k) = self.cell(layer, bits)?;
        Ok(self.expected_size[i][k])
    }

    pub fn first_empty_cell(&self) -> Option<(usize, u8)> {
        for (i, row) in self.sample_count.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                if n == 0 {
                    return Some((i + 1, self.bit_depths[k]));
                }
            }
        }
        None
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(BufReader::new(file), &path.display().to_string())
    }

    pub fn from_reader(reader: impl Read, context: &str) -> Result<Self> {
        let t: LookupTables =
            serde_json::from_reader(reader).map_err(|e| Error::parse(context, e))?;
        if t.schema_version != SCHEMA_VERSION {
            return Err(Error::parse(
                context,
                format!("field `schema_version`: unsupported version {}", t.schema_version),
            ));
        }
        t.check_shape().map_err(|m| Error::parse(context, m))?;
        Ok(t)
    }

    fn check_shape(&self) -> std::result::Result<(), String> {
        let c = self.bit_depths.len();
        if c == 0 {
            return Err("no bit depths".into());
        }
        let n = self.accuracy_loss.len();
        if self.expected_size.len() != n || self.sample_count.len() != n {
            return Err("matrices disagree on the number of layers".into());
        }
        let rows = self
            .accuracy_loss
            .iter()
            .map(Vec::len)
            .chain(self.expected_size.iter().map(Vec::len))
            .chain(self.sample_count.iter().map(Vec::len));
        if rows.into_iter().any(|len| len != c) {
            return Err(format!("every row must have {c} columns"));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::parse(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `layer,bit_depth,accuracy_loss,expected_size,sample_count`
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let ctx = "tables csv";
        w.write_record(["layer", "bit_depth", "accuracy_loss", "expected_size", "sample_count"])
            .map_err(|e| Error::parse(ctx, e))?;
        for i in 0..self.n_layers() {
            for (k, c) in self.bit_depths.iter().enumerate() {
                w.write_record([
                    (i + 1).to_string(),
                    c.to_string(),
                    self.accuracy_loss[i][k].to_string(),
                    self.expected_size[i][k].to_string(),
                    self.sample_count[i][k].to_string(),
                ])
                .map_err(|e| Error::parse(ctx, e))?;
            }
        }
        w.flush().map_err(|e| Error::parse(ctx, e))
    }
}

/// Mergeable per-cell accumulator. Integer sums make the result independent
/// of record order.
#[derive(Debug, Clone, Default)]
struct CellStats {
    n: u64,
    before: u64,
    after: u64,
    bytes: u128,
    sizes: Vec<u64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TableOptions {
    pub size_statistic: SizeStatistic,
}

pub fn build_tables(
    records: impl IntoIterator<Item = CalibrationRecord>,
    model: &ModelProfile,
    bit_depths: &[u8],
    options: TableOptions,
) -> Result<LookupTables> {
    let n = model.n_layers();
    let mut depths = bit_depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    if depths.is_empty() {
        return Err(Error::Invalid("no bit depths requested".into()));
    }
    if let SizeStatistic::Percentile(q) = options.size_statistic {
        if !(q > 0.0 && q <= 100.0) {
            return Err(Error::Invalid(format!("percentile {q} outside (0, 100]")));
        }
    }
    let keep_sizes = matches!(options.size_statistic, SizeStatistic::Percentile(_));
    let mut cells = vec![vec![CellStats::default(); depths.len()]; n];

    for r in records {
        if r.layer == 0 || r.layer > n {
            return Err(Error::Invalid(format!(
                "record for sample {} names layer {} outside 1..={n}",
                r.sample_id, r.layer
            )));
        }
        if r.compressed_bytes == 0 {
            return Err(Error::Invalid(format!(
                "record for sample {} has zero compressed bytes",
                r.sample_id
            )));
        }
        let Ok(k) = depths.binary_search(&r.bit_depth) else {
            continue;
        };
        let cell = &mut cells[r.layer - 1][k];
        cell.n += 1;
        cell.before += u64::from(r.correct_before);
        cell.after += u64::from(r.correct_after);
        cell.bytes += u128::from(r.compressed_bytes);
        if keep_sizes {
            cell.sizes.push(r.compressed_bytes);
        }
    }

    let missing: Vec<(usize, u8)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|(_, c)| c.n == 0)
                .map(move |(k, _)| (i + 1, k))
        })
        .map(|(i, k)| (i, depths[k]))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }

    let mut accuracy_loss = vec![vec![0.0; depths.len()]; n];
    let mut expected_size = vec![vec![0.0; depths.len()]; n];
    let mut sample_count = vec![vec![0u64; depths.len()]; n];
    for (i, row) in cells.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            let count = cell.n as f64;
            accuracy_loss[i][k] = (cell.before as f64 - cell.after as f64) / count;
            expected_size[i][k] = match options.size_statistic {
                SizeStatistic::Mean => cell.bytes as f64 / count,
                SizeStatistic::Percentile(q) => {
                    cell.sizes.sort_unstable();
                    let rank = ((q / 100.0) * count).ceil().max(1.0) as usize;
                    cell.sizes[rank.min(cell.sizes.len()) - 1] as f64
                }
            };
            sample_count[i][k] = cell.n;
        }
    }

    Ok(LookupTables {
        schema_version: SCHEMA_VERSION,
        model_name: model.model_name.clone(),
        bit_depths: depths,
        size_statistic: options.size_statistic,
        accuracy_loss,
        expected_size,
        sample_count,
        upload: UploadSizes {
            raw: model.input_bytes_raw,
            encoded: model.input_bytes_encoded,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellDivergence {
    pub layer: usize,
    pub bit_depth: u8,
    pub accuracy_abs: f64,
    pub size_rel: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub max_accuracy_abs: f64,
    pub mean_accuracy_abs: f64,
    pub max_size_rel: f64,
    pub mean_size_rel: f64,
    pub cells: Vec<CellDivergence>,
}

/// Builds tables from two corpora and compares them cell by cell. Size
/// divergence is relative to the first corpus.
pub fn stability_report(
    corpus_a: impl IntoIterator<Item = CalibrationRecord>,
    corpus_b: impl IntoIterator<Item = CalibrationRecord>,
    model: &ModelProfile,
    bit_depths: &[u8],
    options: TableOptions,
) -> Result<StabilityReport> {
    let a = build_tables(corpus_a, model, bit_depths, options)?;
    let b = build_tables(corpus_b, model, bit_depths, options)?;
    Ok(compare_tables(&a, &b))
}

pub fn compare_tables(a: &LookupTables, b: &LookupTables) -> StabilityReport {
    let mut cells = Vec::new();
    for i in 0..a.n_layers().min(b.n_layers()) {
        for (k, &c) in a.bit_depths.iter().enumerate() {
            let Some(kb) = b.bit_depths.iter().position(|&x| x == c) else {
                continue;
            };
            let sa = a.expected_size[i][k];
            let sb = b.expected_size[i][kb];
            cells.push(CellDivergence {
                layer: i + 1,
                bit_depth: c,
                accuracy_abs: (a.accuracy_loss[i][k] - b.accuracy_loss[i][kb]).abs(),
                size_rel: (sa - sb).abs() / sa,
            });
        }
    }
    let count = cells.len().max(1) as f64;
    StabilityReport {
        max_accuracy_abs: cells.iter().map(|c| c.accuracy_abs).fold(0.0, f64::max),
        mean_accuracy_abs: cells.iter().map(|c| c.accuracy_abs).sum::<f64>() / count,
        max_size_rel: cells.iter().map(|c| c.size_rel).fold(0.0, f64::max),
        mean_size_rel: cells.iter().map(|c| c.size_rel).sum::<f64>() / count,
        cells,
    }
}

pub const RECORD_FILE_BANNER: &str = "# calibration records v1";

pub fn write_records<W: Write>(
    out: W,
    records: impl IntoIterator<Item = CalibrationRecord>,
) -> Result<u64> {
    let ctx = "calibration records";
    let mut out = out;
    writeln!(out, "{RECORD_FILE_BANNER}").map_err(|e| Error::parse(ctx, e))?;
    let mut w = csv::Writer::from_writer(out);
    let mut n = 0;
    for r in records {
        w.serialize(r).map_err(|e| Error::parse(ctx, e))?;
        n += 1;
    }
    w.flush().map_err(|e| Error::parse(ctx, e))?;
    Ok(n)
}

/// Reads a record file eagerly; errors name the offending line.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<CalibrationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records_from(BufReader::new(file), &path.display().to_string())
}

pub fn read_records_from(reader: impl Read, context: &str) -> Result<Vec<CalibrationRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                Error::parse(format!("{context}:{line}"), e)
            })
        })
        .collect()
}

/// Per-layer summary used for size plots: `(layer, bits) -> mean bytes`.
pub fn size_curve(t: &LookupTables) -> BTreeMap<(usize, u8), f64> {
    let mut out = BTreeMap::new();
    for i in 0..t.n_layers() {
        for (k, &c) in t.bit_depths.iter().enumerate() {
            out.insert((i + 1, c), t.expected_size[i][k]);
        }
    }
    out
}
