//! Aligned feature storage and its two persisted forms: a CSV for humans
//! and a fixed-layout little-endian binary for fast reloads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::Dataset;
use crate::features::{FeatureVector, Granularity, FEATURE_NAMES, NUM_FEATURES};
use crate::{Error, Result};

pub const KTFT_MAGIC: [u8; 4] = *b"KTFT";
pub const KTFT_VERSION: u32 = 1;

/// One row per interaction, in dataset order. Views carry a subset of the
/// 14 canonical columns; `columns` records which.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub answer_ids: Vec<i64>,
    pub user_ids: Vec<i64>,
    pub question_ids: Vec<i64>,
    pub group_ids: Vec<i64>,
    pub quiz_ids: Vec<i64>,
    /// Row-major values, `width()` per row.
    pub values: Vec<f64>,
    pub labels: Vec<u8>,
    /// Indices into the canonical 14-column layout.
    pub columns: Vec<usize>,
}

impl FeatureTable {
    pub(crate) fn full(dataset: &Dataset, features: Vec<FeatureVector>, labels: Vec<u8>) -> FeatureTable {
        let mut values = Vec::with_capacity(features.len() * NUM_FEATURES);
        for f in &features {
            values.extend_from_slice(&f.0);
        }
        FeatureTable {
            answer_ids: dataset.interactions.iter().map(|x| x.answer_id).collect(),
            user_ids: dataset.interactions.iter().map(|x| x.user_id).collect(),
            question_ids: dataset.interactions.iter().map(|x| x.question_id).collect(),
            group_ids: dataset.interactions.iter().map(|x| x.group_id).collect(),
            quiz_ids: dataset.interactions.iter().map(|x| x.quiz_id).collect(),
            values,
            labels,
            columns: (0..NUM_FEATURES).collect(),
        }
    }

    /// Rebinds features read from a KTFT file to a dataset's row keys.
    pub fn from_parts(dataset: &Dataset, features: Vec<[f64; NUM_FEATURES]>, labels: Vec<u8>) -> Result<FeatureTable> {
        if features.len() != dataset.n_interactions() || labels.len() != features.len() {
            return Err(Error::BadArtifact(format!(
                "feature rows {} do not match dataset rows {}",
                features.len(),
                dataset.n_interactions()
            )));
        }
        Ok(Self::full(dataset, features.into_iter().map(FeatureVector).collect(), labels))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_row(&self, row: usize) -> &[f64] {
        let w = self.width();
        &self.values[row * w..(row + 1) * w]
    }

    /// Column subset for one granularity; labels and keys are preserved.
    pub fn view(&self, granularity: Granularity) -> FeatureTable {
        assert_eq!(self.width(), NUM_FEATURES, "views are taken from the full table");
        let cols = granularity.columns();
        let mut values = Vec::with_capacity(self.len() * cols.len());
        for row in 0..self.len() {
            let full = self.feature_row(row);
            for &c in cols {
                values.push(full[c]);
            }
        }
        FeatureTable {
            answer_ids: self.answer_ids.clone(),
            user_ids: self.user_ids.clone(),
            question_ids: self.question_ids.clone(),
            group_ids: self.group_ids.clone(),
            quiz_ids: self.quiz_ids.clone(),
            values,
            labels: self.labels.clone(),
            columns: cols.to_vec(),
        }
    }

    /// Rows whose index is in `rows`, as a new table (used for split slices).
    pub fn select_rows(&self, rows: &[usize]) -> FeatureTable {
        let w = self.width();
        let mut values = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            values.extend_from_slice(self.feature_row(r));
        }
        FeatureTable {
            answer_ids: rows.iter().map(|&r| self.answer_ids[r]).collect(),
            user_ids: rows.iter().map(|&r| self.user_ids[r]).collect(),
            question_ids: rows.iter().map(|&r| self.question_ids[r]).collect(),
            group_ids: rows.iter().map(|&r| self.group_ids[r]).collect(),
            quiz_ids: rows.iter().map(|&r| self.quiz_ids[r]).collect(),
            values,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            columns: self.columns.clone(),
        }
    }

    /// Writes `answer_id,label,<feature names...>`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path.as_ref())?;
        let mut w = BufWriter::new(file);
        let names: Vec<&str> = self.columns.iter().map(|&c| FEATURE_NAMES[c]).collect();
        writeln!(w, "answer_id,label,{}", names.join(","))?;
        for row in 0..self.len() {
            write!(w, "{},{}", self.answer_ids[row], self.labels[row])?;
            for v in self.feature_row(row) {
                write!(w, ",{}", v)?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Writes the fixed binary layout: magic, version u32, row count u64, then
/// per row 14 little-endian f64 followed by one label byte.
pub fn write_ktft(path: impl AsRef<Path>, table: &FeatureTable) -> Result<()> {
    if table.width() != NUM_FEATURES {
        return Err(Error::BadArtifact("only full 14-column tables can be written as KTFT".into()));
    }
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(&KTFT_MAGIC)?;
    w.write_all(&KTFT_VERSION.to_le_bytes())?;
    w.write_all(&(table.len() as u64).to_le_bytes())?;
    for row in 0..table.len() {
        for v in table.feature_row(row) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[table.labels[row]])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the binary layout back; keys are re-attached via
/// [`FeatureTable::from_parts`].
pub fn read_ktft(path: impl AsRef<Path>) -> Result<(Vec<[f64; NUM_FEATURES]>, Vec<u8>)> {
    let file = File::open(path.as_ref())?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != KTFT_MAGIC {
        return Err(Error::BadArtifact(format!("bad KTFT magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != KTFT_VERSION {
        return Err(Error::BadArtifact(format!("unsupported KTFT version {version}")));
    }
    let mut long = [0u8; 8];
    r.read_exact(&mut long)?;
    let rows = u64::from_le_bytes(long) as usize;
    let mut features = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    let mut buf = [0u8; 8];
    for _ in 0..rows {
        let mut row = [0f64; NUM_FEATURES];
        for slot in row.iter_mut() {
            r.read_exact(&mut buf)?;
            *slot = f64::from_le_bytes(buf);
        }
        features.push(row);
        let mut label = [0u8; 1];
        r.read_exact(&mut label)?;
        if label[0] > 1 {
            return Err(Error::BadArtifact(format!("label byte {} outside {{0,1}}", label[0])));
        }
        labels.push(label[0]);
    }
    Ok((features, labels))
}
