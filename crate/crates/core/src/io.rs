//! On-disk formats. All integers and floats are little-endian.
//!
//! | file         | layout |
//! |--------------|--------|
//! | dataset      | `"BHDM"`, version u32, rows u32, cols u32, rows*cols f32 column-major |
//! | labels       | one u32 per sample, nothing else |
//! | codes        | `"BHCB"`, bits u32, count u32, `ceil(bits/64)` u64 words per code |
//! | model        | `"BDNN"`, version u32, mode u8, standardized u8, layer count u32, sizes u32..., optional mean/scale f64 rows, then per layer `W` (f64 column-major) and `c` |
//! | ground truth | text, one line per query, space-separated database indices |
//! | trace        | CSV, `# mode=.. seed=.. bits=..` then `iteration,phase,objective` |

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{LayerSchedule, Mode, NetworkParams};
use crate::numerics::{ensure_valid, Matrix, Standardizer, Vector};
use crate::search::{words_per_code, GroundTruth, PackedCodes};
use crate::TraceEntry;

const DATASET_MAGIC: &[u8; 4] = b"BHDM";
const CODES_MAGIC: &[u8; 4] = b"BHCB";
const MODEL_MAGIC: &[u8; 4] = b"BDNN";
const DATASET_VERSION: u32 = 1;
const MODEL_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'a str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("{} is truncated", self.what)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!(
                "{} does not start with {:?}",
                self.what,
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} has {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in 32 bits")))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

pub fn dataset_to_bytes(x: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + x.len() * 4);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(x.nrows(), "row count")?.to_le_bytes());
    out.extend_from_slice(&to_u32(x.ncols(), "column count")?.to_le_bytes());
    for v in x.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Matrix> {
    let mut r = Reader::new(bytes, "dataset");
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format(format!("dataset is empty ({rows}x{cols})")));
    }
    let expected = rows as u64 * cols as u64 * 4;
    if (bytes.len() - 16) as u64 != expected {
        return Err(Error::Format(format!(
            "dataset header says {rows}x{cols} ({expected} payload bytes), file has {}",
            bytes.len() - 16
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f32()? as f64);
    }
    r.finish()?;
    let x = Matrix::from_vec(rows, cols, data);
    ensure_valid(&x, "dataset")?;
    Ok(x)
}

pub fn write_dataset(path: &Path, x: &Matrix) -> Result<()> {
    write_file(path, &dataset_to_bytes(x)?)
}

pub fn read_dataset(path: &Path) -> Result<Matrix> {
    dataset_from_bytes(&fs::read(path)?)
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    write_file(path, &bytes)
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "label file length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn codes_to_bytes(codes: &PackedCodes) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + codes.words().len() * 8);
    out.extend_from_slice(CODES_MAGIC);
    out.extend_from_slice(&to_u32(codes.bits(), "code length")?.to_le_bytes());
    out.extend_from_slice(&to_u32(codes.len(), "code count")?.to_le_bytes());
    for w in codes.words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<PackedCodes> {
    let mut r = Reader::new(bytes, "code file");
    r.magic(CODES_MAGIC)?;
    let bits = r.u32()? as usize;
    let count = r.u32()? as usize;
    if bits == 0 {
        return Err(Error::Format("code file declares zero bits".into()));
    }
    let n = words_per_code(bits) * count;
    if (bytes.len() - 12) as u64 != n as u64 * 8 {
        return Err(Error::Format(format!(
            "code file header says {count} codes of {bits} bits, payload is {} bytes",
            bytes.len() - 12
        )));
    }
    let words = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    PackedCodes::from_words(bits, count, words)
}

pub fn write_codes(path: &Path, codes: &PackedCodes) -> Result<()> {
    write_file(path, &codes_to_bytes(codes)?)
}

pub fn read_codes(path: &Path) -> Result<PackedCodes> {
    codes_from_bytes(&fs::read(path)?)
}

/// A trained network plus the optional input standardization fitted with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: NetworkParams,
    pub standardizer: Option<Standardizer>,
}

impl Model {
    /// Applies the stored standardization, if any.
    pub fn prepare(&self, x: &Matrix) -> Result<Matrix> {
        match &self.standardizer {
            Some(s) => s.apply(x),
            None => Ok(x.clone()),
        }
    }
}

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let schedule = model.params.schedule();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(match schedule.mode() {
        Mode::Unsupervised => 0,
        Mode::Supervised => 1,
    });
    out.push(model.standardizer.is_some() as u8);
    out.extend_from_slice(&to_u32(schedule.layers(), "layer count")?.to_le_bytes());
    for &s in schedule.sizes() {
        out.extend_from_slice(&to_u32(s, "layer size")?.to_le_bytes());
    }
    if let Some(st) = &model.standardizer {
        for v in st.mean.iter().chain(st.scale.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for (w, c) in model.params.weights().iter().zip(model.params.biases()) {
        for v in w.iter().chain(c.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::new(bytes, "model file");
    r.magic(MODEL_MAGIC)?;
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let mode = match r.u8()? {
        0 => Mode::Unsupervised,
        1 => Mode::Supervised,
        other => return Err(Error::Format(format!("unknown model mode byte {other}"))),
    };
    let standardized = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("bad standardization flag {other}"))),
    };
    let n = r.u32()? as usize;
    if n > 64 {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let schedule = LayerSchedule::new(sizes.clone(), mode).map_err(|e| Error::Format(e.to_string()))?;
    let mut f64s = |count: usize| -> Result<Vec<f64>> { (0..count).map(|_| r.f64()).collect() };
    let standardizer = if standardized {
        let mean = Vector::from_vec(f64s(sizes[0])?);
        let scale = Vector::from_vec(f64s(sizes[0])?);
        Some(Standardizer { mean, scale })
    } else {
        None
    };
    let mut weights = Vec::with_capacity(n - 1);
    let mut biases = Vec::with_capacity(n - 1);
    for l in 0..n - 1 {
        weights.push(Matrix::from_vec(sizes[l + 1], sizes[l], f64s(sizes[l + 1] * sizes[l])?));
        biases.push(Vector::from_vec(f64s(sizes[l + 1])?));
    }
    r.finish()?;
    let params = NetworkParams::from_parts(schedule, weights, biases).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Model { params, standardizer })
}

pub fn write_model(path: &Path, model: &Model) -> Result<()> {
    write_file(path, &model_to_bytes(model)?)
}

pub fn read_model(path: &Path) -> Result<Model> {
    model_from_bytes(&fs::read(path)?)
}

pub fn write_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for q in 0..gt.queries() {
        let line: Vec<String> = gt.relevant(q).iter().map(|i| i.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads ground truth; `db_size` bounds the indices.
pub fn read_ground_truth(path: &Path, db_size: usize) -> Result<GroundTruth> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut sets = Vec::new();
    for (n, line) in file.lines().enumerate() {
        let line = line?;
        let set = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Format(format!("ground truth line {}: bad index {t:?}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        sets.push(set);
    }
    GroundTruth::new(sets, db_size).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_trace(path: &Path, header: &str, history: &[TraceEntry]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# {header}")?;
    writeln!(out, "iteration,phase,objective")?;
    for e in history {
        writeln!(out, "{},{},{:e}", e.iteration, e.phase.as_str(), e.objective)?;
    }
    out.flush()?;
    Ok(())
}
