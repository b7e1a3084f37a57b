//! Trie-constrained beam search and ranked-list records.
//!
//! Ranked lists are exchanged as JSON lines:
//!
//! ```text
//! {"user":"u1","index_type":"ceid","template":3,"items":["i4","i9"],"scores":[-2.1,-3.7]}
//! ```
//!
//! Fused lists use `"index_type":"fused"` and `"template":null`.

use std::cmp::Ordering;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rqvae::IndexType;
use crate::scorer::SequenceScorer;
use crate::vocab::{NodeId, PrefixTrie, TokenId};

pub const DEFAULT_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListKind {
    Ceid,
    Seid,
    Fused,
}

impl From<IndexType> for ListKind {
    fn from(t: IndexType) -> Self {
        match t {
            IndexType::Ceid => ListKind::Ceid,
            IndexType::Seid => ListKind::Seid,
        }
    }
}

impl fmt::Display for ListKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ListKind::Ceid => "ceid",
            ListKind::Seid => "seid",
            ListKind::Fused => "fused",
        })
    }
}

/// Top-K items for one `(user, index type, template)`, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ListRecord", into = "ListRecord")]
pub struct RankedList {
    pub user: String,
    pub index_type: ListKind,
    pub template: Option<usize>,
    pub entries: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ListRecord {
    user: String,
    index_type: ListKind,
    template: Option<usize>,
    items: Vec<String>,
    scores: Vec<f64>,
}

impl From<RankedList> for ListRecord {
    fn from(l: RankedList) -> Self {
        let (items, scores) = l.entries.into_iter().unzip();
        ListRecord {
            user: l.user,
            index_type: l.index_type,
            template: l.template,
            items,
            scores,
        }
    }
}

impl TryFrom<ListRecord> for RankedList {
    type Error = String;

    fn try_from(r: ListRecord) -> std::result::Result<Self, String> {
        if r.items.len() != r.scores.len() {
            return Err(format!("{} items but {} scores", r.items.len(), r.scores.len()));
        }
        Ok(RankedList {
            user: r.user,
            index_type: r.index_type,
            template: r.template,
            entries: r.items.into_iter().zip(r.scores).collect(),
        })
    }
}

impl RankedList {
    pub fn items(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(i, _)| i.as_str())
    }

    /// 0-based position of `item`, if listed.
    pub fn rank_of(&self, item: &str) -> Option<usize> {
        self.items().position(|i| i == item)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn write_lists<W: Write>(lists: &[RankedList], mut out: W) -> std::io::Result<()> {
    for l in lists {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_lists(lists: &[RankedList], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_lists(lists, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_lists(path: &Path) -> Result<Vec<RankedList>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(path, n + 1, e.to_string()))?);
    }
    Ok(out)
}

/// Best score first; equal scores by ascending token path.
fn by_score_then_path(a: &(f64, Vec<TokenId>), b: &(f64, Vec<TokenId>)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

fn check_context(scorer: &dyn SequenceScorer, context: &[TokenId]) -> Result<()> {
    match context.iter().find(|&&t| !scorer.contains(t)) {
        Some(&t) => Err(Error::UnknownToken(t)),
        None => Ok(()),
    }
}

/// Beam search over exactly `trie.depth()` steps, expanding each hypothesis
/// only along trie edges. Hypothesis score is the sum of token log-probs.
/// Keeps `width` hypotheses per step and returns at most `k` items.
pub fn beam_search_constrained(
    scorer: &dyn SequenceScorer,
    trie: &PrefixTrie,
    context: &[TokenId],
    k: usize,
    width: usize,
) -> Result<Vec<(String, f64)>> {
    if k == 0 || width == 0 {
        return Err(Error::InvalidConfig("beam size and K must be at least 1".into()));
    }
    check_context(scorer, context)?;
    let mut beam: Vec<(f64, Vec<TokenId>, NodeId)> = vec![(0.0, Vec::new(), PrefixTrie::ROOT)];
    let mut ctx = context.to_vec();
    for _ in 0..trie.depth() {
        let mut next: Vec<(f64, Vec<TokenId>, NodeId)> = Vec::new();
        for (score, path, node) in &beam {
            let edges: Vec<(TokenId, NodeId)> = trie.children(*node).collect();
            if edges.is_empty() {
                continue;
            }
            let candidates: Vec<TokenId> = edges.iter().map(|e| e.0).collect();
            ctx.truncate(context.len());
            ctx.extend_from_slice(path);
            let logprobs = scorer.next_token_logprobs(&ctx, &candidates)?;
            for ((tok, child), lp) in edges.into_iter().zip(logprobs) {
                let mut p = path.clone();
                p.push(tok);
                next.push((score + lp, p, child));
            }
        }
        next.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        next.truncate(width);
        beam = next;
    }
    Ok(beam
        .into_iter()
        .filter_map(|(s, _, node)| trie.item(node).map(|i| (i.to_string(), s)))
        .take(k)
        .collect())
}

/// Scores every item's full code path and keeps the best `k`, with the same
/// tie-break as the beam search.
pub fn exhaustive_topk_oracle(
    scorer: &dyn SequenceScorer,
    trie: &PrefixTrie,
    context: &[TokenId],
    k: usize,
) -> Result<Vec<(String, f64)>> {
    check_context(scorer, context)?;
    let mut scored = Vec::with_capacity(trie.num_terminals());
    let mut items = Vec::with_capacity(trie.num_terminals());
    for (path, item) in trie.paths() {
        let mut score = 0.0;
        let mut ctx = context.to_vec();
        for (step, &tok) in path.iter().enumerate() {
            let candidates = trie.allowed_next(&path[..step])?;
            let at = candidates.binary_search(&tok).expect("path follows trie edges");
            score += scorer.next_token_logprobs(&ctx, &candidates)?[at];
            ctx.push(tok);
        }
        scored.push((score, path));
        items.push(item);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| by_score_then_path(&scored[a], &scored[b]));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (items[i].to_string(), scored[i].0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rqvae::ItemCodeTable;
    use crate::scorer::{MarkovConfig, MarkovScorer};
    use crate::vocab::{build_prefix_trie, build_vocabulary, TokenVocab};
    use std::collections::BTreeMap;

    fn setup(entries: &[(&str, &[u32])]) -> (ItemCodeTable, TokenVocab, PrefixTrie) {
        let codes: BTreeMap<String, Vec<u32>> = entries.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect();
        let table = ItemCodeTable::new(IndexType::Ceid, codes).unwrap();
        let vocab = build_vocabulary(&[&table]).unwrap();
        let trie = build_prefix_trie(&table, &vocab).unwrap();
        (table, vocab, trie)
    }

    #[test]
    fn single_item() {
        let (_, vocab, trie) = setup(&[("x", &[2, 1, 0])]);
        let m = MarkovScorer::untrained(IndexType::Ceid, &vocab, MarkovConfig::default()).unwrap();
        let out = beam_search_constrained(&m, &trie, &[], 5, 5).unwrap();
        assert_eq!(out, vec![("x".to_string(), 0.0)]);
    }

    #[test]
    fn uniform_ties_in_code_order() {
        let (_, vocab, trie) = setup(&[("d", &[1, 1, 0]), ("a", &[1, 0, 0]), ("c", &[0, 1, 0]), ("b", &[0, 0, 0])]);
        let m = MarkovScorer::untrained(IndexType::Ceid, &vocab, MarkovConfig::default()).unwrap();
        let out = beam_search_constrained(&m, &trie, &[], 4, 4).unwrap();
        let items: Vec<&str> = out.iter().map(|e| e.0.as_str()).collect();
        assert_eq!(items, vec!["b", "c", "a", "d"]);
        assert!(out.iter().all(|e| (e.1 - 0.25f64.ln()).abs() < 1e-15));
        assert_eq!(exhaustive_topk_oracle(&m, &trie, &[], 4).unwrap(), out);
    }

    #[test]
    fn unknown_context_token() {
        let (_, vocab, trie) = setup(&[("x", &[0, 0]), ("y", &[1, 0])]);
        let m = MarkovScorer::untrained(IndexType::Ceid, &vocab, MarkovConfig::default()).unwrap();
        assert!(matches!(beam_search_constrained(&m, &trie, &[99], 2, 2), Err(Error::UnknownToken(99))));
    }

    #[test]
    fn oracle_k1_is_argmax() {
        let (table, vocab, trie) = setup(&[("x", &[0, 0]), ("y", &[1, 0]), ("z", &[2, 0])]);
        let stream = vocab.history_tokens(&table, &["y", "y", "x"]).unwrap();
        let m = MarkovScorer::train(IndexType::Ceid, &vocab, &[stream], 1, MarkovConfig::default()).unwrap();
        let top = exhaustive_topk_oracle(&m, &trie, &[], 1).unwrap();
        assert_eq!(top[0].0, "y");
    }

    #[test]
    fn jsonl_round_trip() {
        let lists = vec![
            RankedList {
                user: "u1".into(),
                index_type: ListKind::Ceid,
                template: Some(3),
                entries: vec![("a".into(), -0.5), ("b".into(), -1.25)],
            },
            RankedList {
                user: "u2".into(),
                index_type: ListKind::Fused,
                template: None,
                entries: vec![],
            },
        ];
        let mut buf = Vec::new();
        write_lists(&lists, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"user":"u1","index_type":"ceid","template":3,"items":["a","b"],"scores":[-0.5,-1.25]}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lists.jsonl");
        save_lists(&lists, &path).unwrap();
        assert_eq!(load_lists(&path).unwrap(), lists);
    }
}
