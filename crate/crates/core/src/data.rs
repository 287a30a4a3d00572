//! Datasets: synthetic generators, IDX files, and seeded batch streams.

use std::f64::consts::PI;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const IDX_U8_IMAGES: u32 = 0x0000_0803;
pub const IDX_U8_LABELS: u32 = 0x0000_0801;
/// Two-dimensional array of big-endian `f64`: `N × D` real-valued signals.
pub const IDX_F64_MATRIX: u32 = 0x0000_0E02;

/// Signals stored one per row, with optional integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub signals: Matrix,
    pub labels: Option<Vec<usize>>,
    /// Number of label classes, when labelled.
    pub num_classes: Option<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, signals: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != signals.rows() {
                return Err(Error::Data(format!("{} labels for {} signals", l.len(), signals.rows())));
            }
        }
        if !signals.all_finite() {
            return Err(Error::Data("signals contain non-finite values".into()));
        }
        let num_classes = labels.as_ref().map(|l| l.iter().max().map_or(0, |m| m + 1));
        Ok(Dataset { name: name.into(), signals, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.signals.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.signals.cols()
    }

    /// Signals and labels for the given rows.
    pub fn gather(&self, idx: &[usize]) -> (Matrix, Option<Vec<usize>>) {
        let labels = self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect());
        (self.signals.select_rows(idx), labels)
    }

    /// First `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        let (signals, labels) = self.gather(&idx);
        Dataset { name: self.name.clone(), signals, labels, num_classes: self.num_classes }
    }

    /// Splits off the last `n` rows as a second dataset.
    pub fn split_tail(&self, n: usize) -> (Dataset, Dataset) {
        let cut = self.len().saturating_sub(n);
        let first: Vec<usize> = (0..cut).collect();
        let second: Vec<usize> = (cut..self.len()).collect();
        let make = |idx: &[usize]| {
            let (signals, labels) = self.gather(idx);
            Dataset { name: self.name.clone(), signals, labels, num_classes: self.num_classes }
        };
        (make(&first), make(&second))
    }
}

/// `n` signals of dimension `d`, each with exactly `k` standard-normal
/// entries at uniformly chosen coordinates.
pub fn synth_sparse(n: usize, d: usize, k: usize, seed: u64) -> Result<Dataset> {
    if k > d {
        return Err(Error::Data(format!("sparsity {k} exceeds dimension {d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signals = Matrix::zeros(n, d);
    for r in 0..n {
        let row = signals.row_mut(r);
        for c in index::sample(&mut rng, d, k) {
            let mut v: f64 = StandardNormal.sample(&mut rng);
            while v == 0.0 {
                v = StandardNormal.sample(&mut rng);
            }
            row[c] = v;
        }
    }
    Dataset::new(format!("sparse-d{d}-k{k}"), signals, None)
}

/// Class means: `k` points evenly spaced on the unit circle spanned by the
/// first two coordinates of `R^d`.
pub fn cluster_means(d: usize, k: usize) -> Matrix {
    let mut means = Matrix::zeros(k, d);
    for c in 0..k {
        let angle = 2.0 * PI * c as f64 / k as f64;
        means.set(c, 0, angle.cos());
        if d > 1 {
            means.set(c, 1, angle.sin());
        }
    }
    means
}

/// Labelled isotropic Gaussian clusters around [`cluster_means`]; labels are
/// drawn uniformly.
pub fn synth_labeled_clusters(n: usize, d: usize, k: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Data(format!("need at least 2 classes, got {k}")));
    }
    if d < 2 {
        return Err(Error::Data("clusters live in a 2-D subspace; need d >= 2".into()));
    }
    let means = cluster_means(d, k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signals = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for r in 0..n {
        let c = rng.random_range(0..k);
        labels.push(c);
        let row = signals.row_mut(r);
        for (j, v) in row.iter_mut().enumerate() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v = means.get(c, j) + spread * noise;
        }
    }
    let mut ds = Dataset::new(format!("clusters-d{d}-k{k}"), signals, Some(labels))?;
    ds.num_classes = Some(k);
    Ok(ds)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn read_u32(cur: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    let offset = cur.position();
    cur.read_u32::<BigEndian>()
        .map_err(|_| Error::Idx { offset, detail: format!("truncated header while reading {what}") })
}

fn take<'a>(cur: &mut Cursor<&'a [u8]>, len: usize, what: &str) -> Result<&'a [u8]> {
    let start = cur.position() as usize;
    let buf = *cur.get_ref();
    if buf.len() < start + len {
        return Err(Error::Idx {
            offset: buf.len() as u64,
            detail: format!("truncated {what}: expected {len} bytes from offset {start}, file has {}", buf.len()),
        });
    }
    cur.set_position((start + len) as u64);
    Ok(&buf[start..start + len])
}

/// Parses IDX image data: unsigned-byte images (scaled by 1/255, flattened
/// row-major) or a real-valued `f64` matrix.
pub fn parse_idx_signals(bytes: &[u8]) -> Result<Matrix> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic")?;
    match magic {
        IDX_U8_IMAGES => {
            let n = read_u32(&mut cur, "item count")? as usize;
            let rows = read_u32(&mut cur, "row count")? as usize;
            let cols = read_u32(&mut cur, "column count")? as usize;
            let d = rows * cols;
            let body = take(&mut cur, n * d, "pixel data")?;
            let data = body.iter().map(|&b| b as f64 / 255.0).collect();
            Ok(Matrix::from_vec(n, d, data))
        }
        IDX_F64_MATRIX => {
            let n = read_u32(&mut cur, "item count")? as usize;
            let d = read_u32(&mut cur, "dimension")? as usize;
            let body = take(&mut cur, n * d * 8, "f64 data")?;
            let data = body.chunks_exact(8).map(|c| f64::from_be_bytes(c.try_into().unwrap())).collect();
            Ok(Matrix::from_vec(n, d, data))
        }
        other => Err(Error::Idx {
            offset: 0,
            detail: format!("unsupported magic 0x{other:08X} for signals (expected 0x{IDX_U8_IMAGES:08X} or 0x{IDX_F64_MATRIX:08X})"),
        }),
    }
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut cur = Cursor::new(bytes);
    let magic = read_u32(&mut cur, "magic")?;
    if magic != IDX_U8_LABELS {
        return Err(Error::Idx {
            offset: 0,
            detail: format!("wrong label magic 0x{magic:08X}, expected 0x{IDX_U8_LABELS:08X}"),
        });
    }
    let n = read_u32(&mut cur, "item count")? as usize;
    Ok(take(&mut cur, n, "label data")?.iter().map(|&b| b as usize).collect())
}

/// Loads signals and, optionally, labels from IDX files.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<Dataset> {
    let images = images.as_ref();
    let signals = parse_idx_signals(&read_file(images)?).map_err(|e| with_path(e, images))?;
    let labels = match labels {
        Some(p) => Some(parse_idx_labels(&read_file(p)?).map_err(|e| with_path(e, p))?),
        None => None,
    };
    if let Some(l) = &labels {
        if l.len() != signals.rows() {
            return Err(Error::Data(format!(
                "count mismatch: {} has {} items but labels have {}",
                images.display(),
                signals.rows(),
                l.len()
            )));
        }
    }
    let name = images.file_name().map_or_else(|| "idx".into(), |n| n.to_string_lossy().into_owned());
    Dataset::new(name, signals, labels)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Idx { offset, detail } => Error::Idx { offset, detail: format!("{}: {detail}", path.display()) },
        other => other,
    }
}

/// Encodes signals in `[0,1]` as unsigned-byte images of `rows × cols`.
pub fn encode_idx_u8(signals: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if rows * cols != signals.cols() {
        return Err(Error::Data(format!("{rows}x{cols} images do not match dimension {}", signals.cols())));
    }
    let mut out = Vec::with_capacity(16 + signals.len());
    out.write_u32::<BigEndian>(IDX_U8_IMAGES).unwrap();
    out.write_u32::<BigEndian>(signals.rows() as u32).unwrap();
    out.write_u32::<BigEndian>(rows as u32).unwrap();
    out.write_u32::<BigEndian>(cols as u32).unwrap();
    out.extend(signals.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Encodes arbitrary real signals bit-exactly.
pub fn encode_idx_f64(signals: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * signals.len());
    out.write_u32::<BigEndian>(IDX_F64_MATRIX).unwrap();
    out.write_u32::<BigEndian>(signals.rows() as u32).unwrap();
    out.write_u32::<BigEndian>(signals.cols() as u32).unwrap();
    for v in signals.as_slice() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.write_u32::<BigEndian>(IDX_U8_LABELS).unwrap();
    out.write_u32::<BigEndian>(labels.len() as u32).unwrap();
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit in a byte")))?);
    }
    Ok(out)
}

/// Writes `dataset` as `f64` IDX signals plus an optional label file.
pub fn save_idx(dataset: &Dataset, images: &Path, labels: Option<&Path>) -> Result<()> {
    fs::write(images, encode_idx_f64(&dataset.signals)).map_err(|e| Error::io(images, e))?;
    if let (Some(path), Some(l)) = (labels, &dataset.labels) {
        fs::write(path, encode_idx_labels(l)?).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Position of a [`BatchStream`]; enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamPosition {
    pub epoch: u64,
    pub cursor: usize,
}

/// Endless sequence of shuffled mini-batches of row indices.
///
/// Each epoch uses a fresh permutation derived from `(seed, epoch)`; the
/// trailing partial batch of an epoch is dropped.
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    pos: StreamPosition,
    perm: Vec<usize>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        Self::resume(n, batch_size, seed, StreamPosition { epoch: 0, cursor: 0 })
    }

    pub fn resume(n: usize, batch_size: usize, seed: u64, pos: StreamPosition) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Data("batch size must be at least 1".into()));
        }
        if batch_size > n {
            return Err(Error::Data(format!("batch size {batch_size} exceeds dataset size {n}")));
        }
        let perm = Self::permutation(n, seed, pos.epoch);
        Ok(BatchStream { n, batch_size, seed, pos, perm })
    }

    fn permutation(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        perm
    }

    pub fn position(&self) -> StreamPosition {
        self.pos
    }

    /// Number of rows the stream draws from.
    pub fn num_rows(&self) -> usize {
        self.n
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos.cursor + self.batch_size > self.n {
            self.pos = StreamPosition { epoch: self.pos.epoch + 1, cursor: 0 };
            self.perm = Self::permutation(self.n, self.seed, self.pos.epoch);
        }
        let start = self.pos.cursor;
        self.pos.cursor += self.batch_size;
        self.perm[start..start + self.batch_size].to_vec()
    }
}

impl Iterator for BatchStream {
    type Item = Vec<usize>;
    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}
