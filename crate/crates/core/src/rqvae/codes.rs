//! Collision-free item code tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which embedding source an index was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexType {
    Ceid,
    Seid,
}

impl IndexType {
    pub const ALL: [IndexType; 2] = [IndexType::Ceid, IndexType::Seid];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexType::Ceid => "ceid",
            IndexType::Seid => "seid",
        }
    }

    /// Prefix used in code token names.
    pub fn token_prefix(self) -> &'static str {
        match self {
            IndexType::Ceid => "CeID",
            IndexType::Seid => "SeID",
        }
    }

    pub fn indicator(self) -> &'static str {
        match self {
            IndexType::Ceid => "<C>",
            IndexType::Seid => "<S>",
        }
    }
}

impl fmt::Display for IndexType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IndexType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ceid" => Ok(IndexType::Ceid),
            "seid" => Ok(IndexType::Seid),
            other => Err(Error::InvalidConfig(format!("unknown index type `{other}`"))),
        }
    }
}

/// Per-item code tuples `(c_1, …, c_L, disambiguator)` for one index type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemCodeTable {
    index_type: IndexType,
    code_len: usize,
    codes: BTreeMap<String, Vec<u32>>,
}

impl ItemCodeTable {
    /// Builds a table from full `(L+1)`-tuples, rejecting duplicates and
    /// ragged tuples.
    pub fn new(index_type: IndexType, codes: BTreeMap<String, Vec<u32>>) -> Result<Self> {
        let total = codes.values().next().map_or(1, Vec::len);
        if total < 2 {
            return Err(Error::InvalidConfig("code tuples need at least one level plus a disambiguator".into()));
        }
        let mut seen: HashMap<&[u32], &str> = HashMap::with_capacity(codes.len());
        for (item, tuple) in &codes {
            if tuple.len() != total {
                return Err(Error::DimensionMismatch {
                    context: "code tuple length",
                    expected: total,
                    actual: tuple.len(),
                });
            }
            if let Some(first) = seen.insert(tuple, item) {
                return Err(Error::DuplicateCode {
                    codes: tuple.clone(),
                    first: first.to_string(),
                    second: item.clone(),
                });
            }
        }
        Ok(Self {
            index_type,
            code_len: total - 1,
            codes,
        })
    }

    pub fn index_type(&self) -> IndexType {
        self.index_type
    }

    /// Number of quantization levels `L` (without the disambiguator).
    pub fn code_len(&self) -> usize {
        self.code_len
    }

    pub fn code_len_total(&self) -> usize {
        self.code_len + 1
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn get(&self, item: &str) -> Option<&[u32]> {
        self.codes.get(item).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u32])> {
        self.codes.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (item, tuple) in &self.codes {
            write!(out, "{item}")?;
            for c in tuple {
                write!(out, "\t{c}")?;
            }
            writeln!(out)?;
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

    pub fn load(path: &Path, index_type: IndexType) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut codes = BTreeMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let item = fields.next().unwrap_or_default().to_string();
            let tuple: Vec<u32> = fields
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(path, n + 1, "code must be a non-negative integer"))?;
            if codes.insert(item.clone(), tuple).is_some() {
                return Err(Error::format(path, n + 1, format!("item `{item}` repeated")));
            }
        }
        if codes.is_empty() {
            return Err(Error::EmptyDataset(path.display().to_string()));
        }
        Self::new(index_type, codes)
    }
}

/// Appends a disambiguator to every raw `L`-tuple: 0 for a unique prefix,
/// `1..=m` for the `m` items sharing a prefix, in ascending item-id order.
pub fn resolve_collisions(
    index_type: IndexType,
    raw: &BTreeMap<String, Vec<u32>>,
) -> Result<ItemCodeTable> {
    let mut groups: BTreeMap<&[u32], Vec<&str>> = BTreeMap::new();
    // BTreeMap iteration is already in ascending item-id order.
    for (item, prefix) in raw {
        groups.entry(prefix).or_default().push(item);
    }
    let mut codes = BTreeMap::new();
    for (prefix, items) in groups {
        for (k, item) in items.iter().enumerate() {
            let disamb = if items.len() == 1 { 0 } else { k as u32 + 1 };
            let mut tuple = prefix.to_vec();
            tuple.push(disamb);
            codes.insert(item.to_string(), tuple);
        }
    }
    ItemCodeTable::new(index_type, codes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(entries: &[(&str, &[u32])]) -> BTreeMap<String, Vec<u32>> {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect()
    }

    #[test]
    fn two_way_collision() {
        let t = resolve_collisions(
            IndexType::Ceid,
            &raw(&[("A", &[5, 2, 7]), ("B", &[5, 2, 7]), ("C", &[1, 1, 1])]),
        )
        .unwrap();
        assert_eq!(t.get("A").unwrap(), &[5, 2, 7, 1]);
        assert_eq!(t.get("B").unwrap(), &[5, 2, 7, 2]);
        assert_eq!(t.get("C").unwrap(), &[1, 1, 1, 0]);
        assert_eq!(t.code_len(), 3);
        assert_eq!(t.code_len_total(), 4);
    }

    #[test]
    fn no_collisions_all_zero() {
        let t = resolve_collisions(IndexType::Seid, &raw(&[("x", &[0, 1]), ("y", &[1, 0])])).unwrap();
        assert!(t.iter().all(|(_, c)| c[2] == 0));
    }

    #[test]
    fn three_way_collision() {
        let t = resolve_collisions(
            IndexType::Seid,
            &raw(&[("q", &[3, 3]), ("p", &[3, 3]), ("r", &[3, 3])]),
        )
        .unwrap();
        assert_eq!(t.get("p").unwrap()[2], 1);
        assert_eq!(t.get("q").unwrap()[2], 2);
        assert_eq!(t.get("r").unwrap()[2], 3);
    }

    #[test]
    fn table_rejects_duplicates() {
        assert!(matches!(
            ItemCodeTable::new(IndexType::Ceid, raw(&[("a", &[1, 0]), ("b", &[1, 0])])),
            Err(Error::DuplicateCode { .. })
        ));
    }

    #[test]
    fn tsv_round_trip() {
        let t = resolve_collisions(
            IndexType::Ceid,
            &raw(&[("A", &[5, 2, 7]), ("B", &[5, 2, 7]), ("C", &[1, 1, 1])]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codes_ceid.tsv");
        t.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "A\t5\t2\t7\t1\nB\t5\t2\t7\t2\nC\t1\t1\t1\t0\n");
        assert_eq!(ItemCodeTable::load(&path, IndexType::Ceid).unwrap(), t);
    }

    #[test]
    fn index_type_parsing() {
        assert_eq!("ceid".parse::<IndexType>().unwrap(), IndexType::Ceid);
        assert!("both".parse::<IndexType>().is_err());
    }
}
