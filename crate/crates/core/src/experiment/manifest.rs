use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FOLDS: u8 = 5;
const REQUIRED_COLUMNS: [&str; 4] = ["filename", "fold", "target", "category"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub filename: String,
    /// 1-based fold id.
    pub fold: u8,
    pub target: usize,
    pub category: String,
}

/// Validated clip list: unique filenames, folds 1–5 all non-empty, and every
/// class present in every fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Validation("manifest has no entries".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !(1..=N_FOLDS).contains(&e.fold) {
                return Err(Error::Validation(format!("{}: fold {} outside 1–{N_FOLDS}", e.filename, e.fold)));
            }
            if !seen.insert(e.filename.as_str()) {
                return Err(Error::Validation(format!("duplicate filename {}", e.filename)));
            }
        }
        let mut per_fold: BTreeMap<u8, BTreeSet<usize>> = BTreeMap::new();
        for e in &entries {
            per_fold.entry(e.fold).or_default().insert(e.target);
        }
        for fold in 1..=N_FOLDS {
            if !per_fold.contains_key(&fold) {
                return Err(Error::Validation(format!("fold {fold} is empty")));
            }
        }
        let all: BTreeSet<usize> = entries.iter().map(|e| e.target).collect();
        for (fold, targets) in &per_fold {
            if let Some(missing) = all.difference(targets).next() {
                return Err(Error::Validation(format!("class {missing} is absent from fold {fold}")));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `1 + max target`.
    pub fn n_classes(&self) -> usize {
        self.entries.iter().map(|e| e.target).max().map_or(0, |m| m + 1)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.target).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.entries {
            wr.serialize(e).map_err(|e| Error::Serialization(e.to_string()))?;
        }
        wr.flush().map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Parses a CSV manifest with (at least) the columns `filename, fold, target,
/// category`, in any order. Extra columns are ignored.
pub fn parse_manifest<R: Read>(reader: R) -> Result<DatasetManifest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Schema(format!("unreadable header: {e}")))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Schema("manifest is empty".into()));
    }
    let mut idx = [0usize; 4];
    for (slot, col) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| Error::Schema(format!("missing column `{col}`")))?;
    }
    let mut entries = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("row {}: {e}", line + 2)))?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let fold: i64 = field(1)
            .parse()
            .map_err(|_| Error::Schema(format!("row {}: fold `{}` is not an integer", line + 2, field(1))))?;
        if !(1..=N_FOLDS as i64).contains(&fold) {
            return Err(Error::Validation(format!("row {}: fold {fold} outside 1–{N_FOLDS}", line + 2)));
        }
        let target: usize = field(2)
            .parse()
            .map_err(|_| Error::Schema(format!("row {}: target `{}` is not a class index", line + 2, field(2))))?;
        if field(0).is_empty() {
            return Err(Error::Schema(format!("row {}: empty filename", line + 2)));
        }
        entries.push(ManifestEntry {
            filename: field(0).to_string(),
            fold: fold as u8,
            target,
            category: field(3).to_string(),
        });
    }
    DatasetManifest::new(entries)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(std::io::BufReader::new(file))
}

/// Indices into the manifest for one cross-validation round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub held_out: u8,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Validation = entries of fold `held_out`; training = the rest.
pub fn make_folds(manifest: &DatasetManifest, held_out: u8) -> Result<FoldSplit> {
    if !(1..=N_FOLDS).contains(&held_out) {
        return Err(Error::InvalidParameter(format!("held-out fold {held_out} outside 1–{N_FOLDS}")));
    }
    let (validation, train): (Vec<usize>, Vec<usize>) =
        (0..manifest.len()).partition(|&i| manifest.entries[i].fold == held_out);
    Ok(FoldSplit {
        held_out,
        train,
        validation,
    })
}
