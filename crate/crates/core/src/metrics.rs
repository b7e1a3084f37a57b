//! Full-ranking accuracy metrics and template complementarity.
//!
//! With one held-out item per user, NDCG@K reduces to `1/log2(rank + 2)` for a
//! 0-based rank below K. PER and CHR work on hit sets `H_t`: the users whose
//! test item template `t` retrieved.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub evaluated: usize,
    /// Users with a test item but no list; scored as misses.
    pub missing: Vec<String>,
}

fn lists_by_user(lists: &[RankedList]) -> Result<HashMap<&str, &RankedList>> {
    let mut out = HashMap::with_capacity(lists.len());
    for l in lists {
        if out.insert(l.user.as_str(), l).is_some() {
            return Err(Error::Duplicate(format!("ranked list for user {}", l.user)));
        }
    }
    Ok(out)
}

fn evaluate(
    lists: &[RankedList],
    test: &BTreeMap<String, String>,
    k: usize,
    gain: impl Fn(usize) -> f64,
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let by_user = lists_by_user(lists)?;
    let mut total = 0.0;
    let mut missing = Vec::new();
    for (user, target) in test {
        match by_user.get(user.as_str()) {
            Some(l) => {
                if let Some(r) = l.items().take(k).position(|i| i == target) {
                    total += gain(r);
                }
            }
            None => missing.push(user.clone()),
        }
    }
    Ok(Evaluation {
        value: total / test.len() as f64,
        evaluated: test.len(),
        missing,
    })
}

pub fn hit_at_k(lists: &[RankedList], test: &BTreeMap<String, String>, k: usize) -> Result<Evaluation> {
    evaluate(lists, test, k, |_| 1.0)
}

pub fn ndcg_at_k(lists: &[RankedList], test: &BTreeMap<String, String>, k: usize) -> Result<Evaluation> {
    evaluate(lists, test, k, |r| 1.0 / ((r + 2) as f64).log2())
}

/// Users whose test item template `template` placed in its top `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitSet {
    pub template: usize,
    pub users: BTreeSet<String>,
}

pub fn hit_set(lists: &[RankedList], test: &BTreeMap<String, String>, k: usize, template: usize) -> HitSet {
    let users = lists
        .iter()
        .filter(|l| {
            test.get(&l.user)
                .is_some_and(|target| l.items().take(k).any(|i| i == target))
        })
        .map(|l| l.user.clone())
        .collect();
    HitSet { template, users }
}

/// `|H1 − H2| / |H1|`.
pub fn per(h1: &HitSet, h2: &HitSet) -> Result<f64> {
    if h1.users.is_empty() {
        return Err(Error::Empty("hit set"));
    }
    Ok(h1.users.difference(&h2.users).count() as f64 / h1.users.len() as f64)
}

/// Mean over `t ∈ T1` of `|∪T2 − H_t| / |∪T2|`.
pub fn chr_avg(t1: &[HitSet], t2: &[HitSet]) -> Result<f64> {
    if t1.is_empty() {
        return Err(Error::Empty("template set T1"));
    }
    let union: BTreeSet<&String> = t2.iter().flat_map(|h| &h.users).collect();
    if union.is_empty() {
        return Err(Error::Empty("hit union of T2"));
    }
    let sum: f64 = t1
        .iter()
        .map(|h| union.iter().filter(|u| !h.users.contains(**u)).count() as f64 / union.len() as f64)
        .sum();
    Ok(sum / t1.len() as f64)
}

/// Row `t1`, column `t2` holds PER(t1; t2). A template without hits has an
/// empty row.
#[derive(Debug, Clone, PartialEq)]
pub struct PerMatrix {
    pub templates: Vec<usize>,
    pub cells: Vec<Vec<Option<f64>>>,
}

pub fn per_matrix(sets: &[HitSet]) -> Result<PerMatrix> {
    if sets.len() < 2 {
        return Err(Error::InvalidConfig("PER matrix needs at least two templates".into()));
    }
    let cells = sets
        .iter()
        .map(|a| sets.iter().map(|b| per(a, b).ok()).collect())
        .collect();
    Ok(PerMatrix {
        templates: sets.iter().map(|h| h.template).collect(),
        cells,
    })
}

impl PerMatrix {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = self.templates.iter().map(usize::to_string).collect();
        writeln!(out, "template,{}", header.join(","))?;
        for (t, row) in self.templates.iter().zip(&self.cells) {
            let cells: Vec<String> = row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()).collect();
            writeln!(out, "{t},{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub value: f64,
}

/// Hit@K and NDCG@K for each K, checking NDCG ≤ Hit on the way.
pub fn accuracy_rows(lists: &[RankedList], test: &BTreeMap<String, String>, ks: &[usize]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let hit = hit_at_k(lists, test, k)?.value;
        let ndcg = ndcg_at_k(lists, test, k)?.value;
        debug_assert!(ndcg <= hit + 1e-12);
        rows.push(MetricRow { metric: "hit".into(), k, value: hit });
        rows.push(MetricRow { metric: "ndcg".into(), k, value: ndcg });
    }
    Ok(rows)
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "metric,K,value")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.metric, r.k, r.value)?;
    }
    Ok(())
}
