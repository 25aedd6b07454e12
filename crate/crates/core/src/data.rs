//! Synthetic benchmark generators, label noise and CSV persistence.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity of the pseudo-random generator behind every dataset.
pub const RNG_NAME: &str = "chacha8";

pub const LONG_SERVEDIO_DIM: usize = 21;
pub const MEASE_WYNER_DIM: usize = 20;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse { row: usize, column: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    LongServedio,
    MeaseWyner,
    Custom,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::LongServedio => "long_servedio",
            Generator::MeaseWyner => "mease_wyner",
            Generator::Custom => "custom",
        }
    }
}

impl FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "long_servedio" => Ok(Generator::LongServedio),
            "mease_wyner" => Ok(Generator::MeaseWyner),
            "custom" => Ok(Generator::Custom),
            other => Err(format!("unknown generator '{other}'")),
        }
    }
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mixture component of a Long/Servedio example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExampleKind {
    LargeMargin,
    Puller,
    Penalizer,
}

impl ExampleKind {
    pub fn code(self) -> char {
        match self {
            ExampleKind::LargeMargin => 'L',
            ExampleKind::Puller => 'U',
            ExampleKind::Penalizer => 'P',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "L" => Some(ExampleKind::LargeMargin),
            "U" => Some(ExampleKind::Puller),
            "P" => Some(ExampleKind::Penalizer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub generator: Generator,
    pub noise_rate: f64,
    pub seed: u64,
}

/// Feature matrix (row-major), noisy and clean labels, provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n: usize,
    d: usize,
    labels: Vec<i8>,
    clean_labels: Vec<i8>,
    kinds: Option<Vec<ExampleKind>>,
    pub meta: DatasetMeta,
}

fn check_label(v: i8) -> Result<(), DataError> {
    if v == 1 || v == -1 {
        Ok(())
    } else {
        Err(DataError::Domain(format!("label {v} is not -1 or 1")))
    }
}

impl Dataset {
    /// A clean, hand-built dataset.
    pub fn new(features: Vec<f64>, d: usize, labels: Vec<i8>) -> Result<Self, DataError> {
        let clean = labels.clone();
        Self::from_parts(
            features,
            d,
            labels,
            clean,
            None,
            DatasetMeta { generator: Generator::Custom, noise_rate: 0.0, seed: 0 },
        )
    }

    pub fn from_parts(
        features: Vec<f64>,
        d: usize,
        labels: Vec<i8>,
        clean_labels: Vec<i8>,
        kinds: Option<Vec<ExampleKind>>,
        meta: DatasetMeta,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if d == 0 && n > 0 {
            return Err(DataError::Domain("dimension must be positive".into()));
        }
        if features.len() != n * d {
            return Err(DataError::Domain(format!("feature matrix has {} entries, expected {n}x{d}", features.len())));
        }
        if clean_labels.len() != n || kinds.as_ref().is_some_and(|k| k.len() != n) {
            return Err(DataError::Domain("column lengths differ".into()));
        }
        for &l in labels.iter().chain(&clean_labels) {
            check_label(l)?;
        }
        Ok(Dataset { features, n, d, labels, clean_labels, kinds, meta })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.features[j * self.d..(j + 1) * self.d]
    }

    #[inline]
    pub fn value(&self, j: usize, i: usize) -> f64 {
        self.features[j * self.d + i]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn clean_labels(&self) -> &[i8] {
        &self.clean_labels
    }

    pub fn kinds(&self) -> Option<&[ExampleKind]> {
        self.kinds.as_deref()
    }

    /// Indices whose label differs from the clean label.
    pub fn flipped(&self) -> Vec<usize> {
        (0..self.n).filter(|&j| self.labels[j] != self.clean_labels[j]).collect()
    }

    /// Rows reordered by `perm` (`out[k] = self[perm[k]]`).
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        assert_eq!(perm.len(), self.n);
        let mut features = Vec::with_capacity(self.features.len());
        for &j in perm {
            features.extend_from_slice(self.row(j));
        }
        Dataset {
            features,
            n: self.n,
            d: self.d,
            labels: perm.iter().map(|&j| self.labels[j]).collect(),
            clean_labels: perm.iter().map(|&j| self.clean_labels[j]).collect(),
            kinds: self.kinds.as_ref().map(|k| perm.iter().map(|&j| k[j]).collect()),
            meta: self.meta.clone(),
        }
    }
}

fn check_noise(q: f64) -> Result<(), DataError> {
    if (0.0..0.5).contains(&q) {
        Ok(())
    } else {
        Err(DataError::Domain(format!("noise rate {q} outside [0, 1/2)")))
    }
}

fn check_size(n: usize) -> Result<(), DataError> {
    if n >= 1 {
        Ok(())
    } else {
        Err(DataError::Domain("n must be at least 1".into()))
    }
}

/// Long/Servedio distribution: 21 binary features, a mixture of large-margin
/// examples, pullers and penalizers. Labels are then flipped with rate `q`.
pub fn gen_long_servedio(n: usize, q: f64, seed: u64) -> Result<Dataset, DataError> {
    check_size(n)?;
    check_noise(q)?;
    let d = LONG_SERVEDIO_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut kinds = Vec::with_capacity(n);
    for _ in 0..n {
        let y: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };
        let yf = f64::from(y);
        let u: f64 = rng.gen();
        let start = features.len();
        let kind = if u < 0.25 {
            features.extend(std::iter::repeat_n(yf, d));
            ExampleKind::LargeMargin
        } else if u < 0.5 {
            features.extend(std::iter::repeat_n(yf, 11));
            features.extend(std::iter::repeat_n(-yf, 10));
            ExampleKind::Puller
        } else {
            features.extend(std::iter::repeat_n(-yf, d));
            let row = &mut features[start..];
            for i in sample(&mut rng, 11, 5) {
                row[i] = yf;
            }
            for i in sample(&mut rng, 10, 6) {
                row[11 + i] = yf;
            }
            ExampleKind::Penalizer
        };
        labels.push(y);
        kinds.push(kind);
    }
    let clean = labels.clone();
    let ds = Dataset::from_parts(
        features,
        d,
        labels,
        clean,
        Some(kinds),
        DatasetMeta { generator: Generator::LongServedio, noise_rate: 0.0, seed },
    )?;
    flip_labels(ds, q, seed)
}

/// Mease/Wyner distribution: 20 uniform features on [0, 1), label +1 iff the
/// first five sum to at least 2.5.
pub fn gen_mease_wyner(n: usize, q: f64, seed: u64) -> Result<Dataset, DataError> {
    check_size(n)?;
    check_noise(q)?;
    let d = MEASE_WYNER_DIM;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        features.extend((0..d).map(|_| rng.gen::<f64>()));
        labels.push(mease_wyner_label(&features[start..]));
    }
    let clean = labels.clone();
    let ds = Dataset::from_parts(
        features,
        d,
        labels,
        clean,
        None,
        DatasetMeta { generator: Generator::MeaseWyner, noise_rate: 0.0, seed },
    )?;
    flip_labels(ds, q, seed)
}

/// Clean Mease/Wyner label; a sum of exactly 2.5 maps to +1.
pub fn mease_wyner_label(x: &[f64]) -> i8 {
    if x[..5].iter().sum::<f64>() >= 2.5 {
        1
    } else {
        -1
    }
}

/// Uniform draw for example `j`, from its own ChaCha stream. Stream 0 of a
/// seed is left to the generators.
fn flip_uniform(seed: u64, j: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64 + 1);
    rng.gen()
}

/// Negates each label independently with probability `q`. The decision for
/// row `j` depends only on `(seed, j)`.
pub fn flip_labels(mut ds: Dataset, q: f64, seed: u64) -> Result<Dataset, DataError> {
    check_noise(q)?;
    if ds.meta.noise_rate > 0.0 || ds.labels != ds.clean_labels {
        return Err(DataError::Domain("labels have already been flipped".into()));
    }
    if q > 0.0 {
        for (j, label) in ds.labels.iter_mut().enumerate() {
            if flip_uniform(seed, j) < q {
                *label = -*label;
            }
        }
    }
    ds.meta.noise_rate = q;
    Ok(ds)
}

/// Writes the dataset as CSV: a `#` metadata line, a column header, then one
/// row per example.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_csv(ds, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_csv(ds: &Dataset, out: &mut impl Write) -> Result<(), DataError> {
    writeln!(
        out,
        "# generator={} q={} seed={} n={} d={}",
        ds.meta.generator, ds.meta.noise_rate, ds.meta.seed, ds.n, ds.d
    )?;
    let mut header: Vec<String> = (0..ds.d).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    header.push("clean_label".into());
    if ds.kinds.is_some() {
        header.push("kind".into());
    }
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for j in 0..ds.n {
        line.clear();
        for v in ds.row(j) {
            // Shortest representation that round-trips exactly.
            line.push_str(&format!("{v:?},"));
        }
        line.push_str(&format!("{},{}", ds.labels[j], ds.clean_labels[j]));
        if let Some(kinds) = &ds.kinds {
            line.push(',');
            line.push(kinds[j].code());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    parse_csv(&fs::read_to_string(path)?)
}

fn parse_err(row: usize, column: usize, message: impl Into<String>) -> DataError {
    DataError::Parse { row, column, message: message.into() }
}

/// Parses the CSV layout written by [`write_csv`]. Rows are numbered from 1
/// counting every line of the file.
pub fn parse_csv(text: &str) -> Result<Dataset, DataError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (_, meta_line) = lines.next().ok_or_else(|| parse_err(1, 1, "empty file"))?;
    let meta_line =
        meta_line.strip_prefix('#').ok_or_else(|| parse_err(1, 1, "missing '# generator=...' metadata line"))?;
    let mut generator = Generator::Custom;
    let mut noise_rate = 0.0;
    let mut seed = 0;
    let mut declared_d = None;
    for (k, field) in meta_line.split_whitespace().enumerate() {
        let (key, value) =
            field.split_once('=').ok_or_else(|| parse_err(1, k + 1, format!("expected key=value, got '{field}'")))?;
        let bad = |e: String| parse_err(1, k + 1, format!("{key}: {e}"));
        match key {
            "generator" => generator = value.parse().map_err(bad)?,
            "q" => noise_rate = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            "seed" => seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "d" => declared_d = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            _ => {}
        }
    }

    let (header_idx, header) = lines.next().ok_or_else(|| parse_err(2, 1, "missing column header"))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_kind = columns.last() == Some(&"kind");
    let d = columns.len() - 2 - usize::from(has_kind);
    if columns.len() < 2 + usize::from(has_kind) || columns[d] != "label" || columns[d + 1] != "clean_label" {
        return Err(parse_err(header_idx + 1, 1, "expected columns f0..,label,clean_label[,kind]"));
    }
    if let Some(dd) = declared_d {
        if dd != d {
            return Err(parse_err(header_idx + 1, 1, format!("header declares d={dd}, found {d} feature columns")));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut clean = Vec::new();
    let mut kinds = Vec::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != columns.len() {
            return Err(parse_err(
                row,
                cells.len().min(columns.len()) + 1,
                format!("expected {} columns, found {}", columns.len(), cells.len()),
            ));
        }
        for (c, cell) in cells[..d].iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| parse_err(row, c + 1, format!("invalid number '{cell}'")))?;
            features.push(v);
        }
        for (offset, target) in [(0, &mut labels), (1, &mut clean)] {
            let cell = cells[d + offset];
            match cell {
                "1" | "+1" => target.push(1i8),
                "-1" => target.push(-1i8),
                _ => return Err(parse_err(row, d + offset + 1, format!("label must be -1 or 1, got '{cell}'"))),
            }
        }
        if has_kind {
            let cell = cells[d + 2];
            kinds.push(
                ExampleKind::from_code(cell).ok_or_else(|| parse_err(row, d + 3, format!("unknown kind '{cell}'")))?,
            );
        }
    }
    Dataset::from_parts(
        features,
        d,
        labels,
        clean,
        has_kind.then_some(kinds),
        DatasetMeta { generator, noise_rate, seed },
    )
}
