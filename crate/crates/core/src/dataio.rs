//! Interaction logs, k-core filtering, leave-one-out splits and embedding
//! matrices.
//!
//! File formats:
//!
//! * interactions: `user_id<TAB>item_id<TAB>timestamp`, one per line.
//! * split files (`train.tsv`, `valid.tsv`, `test.tsv`): `user_id<TAB>item_id`,
//!   train lines in chronological order per user.
//! * embeddings: a header line `ITEM_EMB v1`, then `n d`, then `n` lines of
//!   `item_id v1 … vd`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const EMBEDDING_HEADER: &str = "ITEM_EMB v1";
pub const DEFAULT_MAX_LEN: usize = 20;
pub const DEFAULT_KCORE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub item: String,
    pub timestamp: i64,
}

/// Users, items and each user's chronologically ordered interactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionDataset {
    pub users: BTreeSet<String>,
    pub items: BTreeSet<String>,
    pub sequences: BTreeMap<String, Vec<Interaction>>,
}

/// Line accounting from [`load_interactions`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub valid: usize,
    pub malformed: usize,
}

impl InteractionDataset {
    /// Builds a dataset from `(user, item, timestamp)` records. Each user's
    /// interactions are stably sorted by timestamp, so ties keep input order.
    pub fn from_records<I, U, T>(records: I) -> Self
    where
        I: IntoIterator<Item = (U, T, i64)>,
        U: Into<String>,
        T: Into<String>,
    {
        let mut sequences: BTreeMap<String, Vec<Interaction>> = BTreeMap::new();
        for (user, item, timestamp) in records {
            sequences.entry(user.into()).or_default().push(Interaction {
                item: item.into(),
                timestamp,
            });
        }
        for seq in sequences.values_mut() {
            seq.sort_by_key(|it| it.timestamp);
        }
        Self::from_sequences(sequences)
    }

    fn from_sequences(sequences: BTreeMap<String, Vec<Interaction>>) -> Self {
        let users = sequences.keys().cloned().collect();
        let items = sequences
            .values()
            .flat_map(|seq| seq.iter().map(|it| it.item.clone()))
            .collect();
        Self {
            users,
            items,
            sequences,
        }
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Item ids of one user's sequence, in order.
    pub fn item_sequence(&self, user: &str) -> Option<Vec<&str>> {
        self.sequences
            .get(user)
            .map(|seq| seq.iter().map(|it| it.item.as_str()).collect())
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (user, seq) in &self.sequences {
            for it in seq {
                writeln!(out, "{user}\t{}\t{}", it.item, it.timestamp)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_tsv(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

fn parse_interaction_line(line: &str) -> Option<(&str, &str, i64)> {
    let mut fields = line.split('\t');
    let user = fields.next()?.trim();
    let item = fields.next()?.trim();
    let ts = fields.next()?.trim().parse::<i64>().ok()?;
    if fields.next().is_some() || user.is_empty() || item.is_empty() {
        return None;
    }
    Some((user, item, ts))
}

/// Parses interaction lines from any reader. Blank lines are ignored;
/// anything else that does not parse is counted as malformed.
pub fn parse_interactions<R: BufRead>(
    reader: R,
    path: &Path,
) -> Result<(InteractionDataset, LoadReport)> {
    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_interaction_line(&line) {
            Some((u, i, ts)) => {
                records.push((u.to_string(), i.to_string(), ts));
                report.valid += 1;
            }
            None => report.malformed += 1,
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok((InteractionDataset::from_records(records), report))
}

pub fn load_interactions(path: &Path) -> Result<(InteractionDataset, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(BufReader::new(file), path)
}

/// Repeatedly drops users and items with fewer than `k` interactions until
/// every remaining user and item has at least `k`, or nothing is left.
pub fn kcore_filter(ds: &InteractionDataset, k: usize) -> InteractionDataset {
    let mut sequences = ds.sequences.clone();
    loop {
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences.values() {
            for it in seq {
                *item_counts.entry(it.item.as_str()).or_default() += 1;
            }
        }
        let weak_items: BTreeSet<String> = item_counts
            .iter()
            .filter(|(_, &c)| c < k)
            .map(|(i, _)| i.to_string())
            .collect();
        let weak_users = sequences.values().any(|seq| seq.len() < k);
        if weak_items.is_empty() && !weak_users {
            break;
        }
        sequences.retain(|_, seq| seq.len() >= k);
        for seq in sequences.values_mut() {
            seq.retain(|it| !weak_items.contains(&it.item));
        }
        sequences.retain(|_, seq| !seq.is_empty());
    }
    InteractionDataset::from_sequences(sequences)
}

/// Leave-one-out split: last item to test, second-to-last to valid, the rest
/// (truncated to the most recent `max_len`) to train.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitDataset {
    pub train: BTreeMap<String, Vec<String>>,
    pub valid: BTreeMap<String, String>,
    pub test: BTreeMap<String, String>,
}

fn tail(items: &[String], max_len: usize) -> Vec<String> {
    items[items.len().saturating_sub(max_len)..].to_vec()
}

impl SplitDataset {
    /// History a model sees when predicting the test item: train followed by
    /// the valid item, truncated to the last `max_len` entries.
    pub fn test_context(&self, user: &str, max_len: usize) -> Option<Vec<String>> {
        let mut history = self.train.get(user)?.clone();
        history.push(self.valid.get(user)?.clone());
        Some(tail(&history, max_len))
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.test.keys().map(String::as_str)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_pairs(
            &dir.join("train.tsv"),
            self.train
                .iter()
                .flat_map(|(u, items)| items.iter().map(move |i| (u.as_str(), i.as_str()))),
        )?;
        write_pairs(
            &dir.join("valid.tsv"),
            self.valid.iter().map(|(u, i)| (u.as_str(), i.as_str())),
        )?;
        write_pairs(
            &dir.join("test.tsv"),
            self.test.iter().map(|(u, i)| (u.as_str(), i.as_str())),
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut train: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (u, i) in read_pairs(&dir.join("train.tsv"))? {
            train.entry(u).or_default().push(i);
        }
        let single = |name: &str| -> Result<BTreeMap<String, String>> {
            let path = dir.join(name);
            let mut map = BTreeMap::new();
            for (n, (u, i)) in read_pairs(&path)?.into_iter().enumerate() {
                if map.insert(u.clone(), i).is_some() {
                    return Err(Error::format(&path, n + 1, format!("user `{u}` repeated")));
                }
            }
            Ok(map)
        };
        Ok(Self {
            train,
            valid: single("valid.tsv")?,
            test: single("test.tsv")?,
        })
    }
}

fn write_pairs<'a>(path: &Path, pairs: impl Iterator<Item = (&'a str, &'a str)>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        for (u, i) in pairs {
            writeln!(out, "{u}\t{i}")?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let (u, i) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, n + 1, "expected `user<TAB>item`"))?;
        pairs.push((u.to_string(), i.to_string()));
    }
    Ok(pairs)
}

/// Splits every user with at least three interactions. Shorter users are
/// returned in the second element and appear in no split.
pub fn leave_one_out_split(
    ds: &InteractionDataset,
    max_len: usize,
) -> (SplitDataset, Vec<String>) {
    let mut split = SplitDataset::default();
    let mut excluded = Vec::new();
    for (user, seq) in &ds.sequences {
        let n = seq.len();
        if n < 3 {
            excluded.push(user.clone());
            continue;
        }
        let items: Vec<String> = seq.iter().map(|it| it.item.clone()).collect();
        split.train.insert(user.clone(), tail(&items[..n - 2], max_len));
        split.valid.insert(user.clone(), items[n - 2].clone());
        split.test.insert(user.clone(), items[n - 1].clone());
    }
    (split, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EmbeddingSource {
    Collaborative,
    Semantic,
}

impl fmt::Display for EmbeddingSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingSource::Collaborative => "collaborative",
            EmbeddingSource::Semantic => "semantic",
        })
    }
}

/// Dense item embeddings; row `r` belongs to `ids[r]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    source: EmbeddingSource,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    values: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(source: EmbeddingSource, ids: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if ids.len() != values.nrows() {
            return Err(Error::DimensionMismatch {
                context: "embedding rows",
                expected: ids.len(),
                actual: values.nrows(),
            });
        }
        if values.ncols() == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedding matrix".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (r, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), r).is_some() {
                return Err(Error::Duplicate(format!("embedding item id `{id}`")));
            }
        }
        Ok(Self {
            source,
            ids,
            index,
            values,
        })
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn row(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(id).map(|&r| self.values.row(r))
    }

    /// Rows for `ids`, in that order.
    pub fn select<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let mut values = Array2::zeros((ids.len(), self.dim()));
        for (r, id) in ids.iter().enumerate() {
            let row = self
                .row(id.as_ref())
                .ok_or_else(|| Error::UnknownItem(id.as_ref().to_string()))?;
            values.row_mut(r).assign(&row);
        }
        Self::new(
            self.source,
            ids.iter().map(|s| s.as_ref().to_string()).collect(),
            values,
        )
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{EMBEDDING_HEADER}")?;
        writeln!(out, "{} {}", self.len(), self.dim())?;
        for (id, row) in self.ids.iter().zip(self.values.rows()) {
            write!(out, "{id}")?;
            for v in row {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn parse_embedding_matrix<R: BufRead>(
    reader: R,
    path: &Path,
    source: EmbeddingSource,
) -> Result<EmbeddingMatrix> {
    let mut lines = reader.lines().enumerate();
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, line)) => Ok((n + 1, line.map_err(|e| Error::io(path, e))?)),
            None => Err(Error::format(path, 0, format!("unexpected end of file, expected {what}"))),
        }
    };

    let (n, header) = next_line("header")?;
    if header.trim() != EMBEDDING_HEADER {
        return Err(Error::format(path, n, format!("expected header `{EMBEDDING_HEADER}`")));
    }
    let (n, shape) = next_line("`n d` line")?;
    let dims: Vec<usize> = shape
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(path, n, "expected `n d`"))?;
    let [rows, dim] = dims[..] else {
        return Err(Error::format(path, n, "expected `n d`"));
    };
    if dim == 0 {
        return Err(Error::format(path, n, "dimension must be positive"));
    }

    let mut ids = Vec::with_capacity(rows);
    let mut seen = HashMap::with_capacity(rows);
    let mut values = Array2::zeros((rows, dim));
    for r in 0..rows {
        let (n, line) = next_line("embedding row")?;
        let mut fields = line.split_whitespace();
        let id = fields
            .next()
            .ok_or_else(|| Error::format(path, n, "missing item id"))?;
        if let Some(prev) = seen.insert(id.to_string(), n) {
            return Err(Error::format(
                path,
                n,
                format!("duplicate item id `{id}` (first on line {prev})"),
            ));
        }
        let row: Vec<f64> = fields
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(path, n, "unparseable value"))?;
        if row.len() != dim {
            return Err(Error::format(
                path,
                n,
                format!("expected {dim} values, found {}", row.len()),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path, n, "non-finite value"));
        }
        values.row_mut(r).assign(&ArrayView1::from(&row[..]));
        ids.push(id.to_string());
    }
    EmbeddingMatrix::new(source, ids, values)
}

pub fn load_embedding_matrix(path: &Path, source: EmbeddingSource) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_matrix(BufReader::new(file), path, source)
}
