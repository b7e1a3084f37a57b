//! Self-consistency fusion of ranked lists.
//!
//! For item `i` and index type `x`, `π` is the multiset of 0-based ranks of
//! `i` across the template lists of type `x` (only ranks `< K` count). With
//! `f(r) = exp(−r/τ)`:
//!
//! ```text
//! Conf = f(mean π)       Cons = f(sample stdev π), 0 when |π| ≤ 1
//! S^x  = α·Conf + (1 − α)·Cons
//! S    = S^CeID + S^SeID
//! ```
//!
//! A side where the item never appears contributes 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::retrieval::{ListKind, RankedList};
use crate::rqvae::IndexType;

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_TAU: f64 = 10.0;

pub fn rank_transform(r: f64, tau: f64) -> f64 {
    (-r / tau).exp()
}

/// Gathers each item's 0-based rank from every list that places it below `k`.
/// All lists must share one user and one index type, with distinct templates.
pub fn collect_positions(lists: &[RankedList], k: usize) -> Result<BTreeMap<String, Vec<usize>>> {
    let mut templates = BTreeSet::new();
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    if let Some(first) = lists.first() {
        for l in lists {
            if l.user != first.user || l.index_type != first.index_type {
                return Err(Error::InvalidConfig(format!(
                    "lists mix ({}, {}) with ({}, {})",
                    first.user, first.index_type, l.user, l.index_type
                )));
            }
            if !templates.insert(l.template) {
                return Err(Error::Duplicate(format!(
                    "template {:?} for user {} ({})",
                    l.template, l.user, l.index_type
                )));
            }
            for (rank, item) in l.items().enumerate().take(k) {
                out.entry(item.to_string()).or_default().push(rank);
            }
        }
    }
    Ok(out)
}

fn mean(positions: &[usize]) -> f64 {
    positions.iter().sum::<usize>() as f64 / positions.len() as f64
}

/// `f(mean π)`.
pub fn conf_score(positions: &[usize], tau: f64) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::Empty("rank positions"));
    }
    Ok(rank_transform(mean(positions), tau))
}

/// `f(sample stdev π)` with an `n − 1` denominator; 0 for `|π| ≤ 1`.
pub fn cons_score(positions: &[usize], tau: f64) -> f64 {
    if positions.len() <= 1 {
        return 0.0;
    }
    let m = mean(positions);
    let ss: f64 = positions.iter().map(|&p| (p as f64 - m).powi(2)).sum();
    rank_transform((ss / (positions.len() - 1) as f64).sqrt(), tau)
}

/// `S^x = α·Conf + (1 − α)·Cons`.
pub fn index_score(positions: &[usize], alpha: f64, tau: f64) -> Result<f64> {
    Ok(alpha * conf_score(positions, tau)? + (1.0 - alpha) * cons_score(positions, tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    #[default]
    Full,
    CeidOnly,
    SeidOnly,
    ConfOnly,
    ConsOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 5] = [
        FusionMode::Full,
        FusionMode::CeidOnly,
        FusionMode::SeidOnly,
        FusionMode::ConfOnly,
        FusionMode::ConsOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Full => "full",
            FusionMode::CeidOnly => "ceid-only",
            FusionMode::SeidOnly => "seid-only",
            FusionMode::ConfOnly => "conf-only",
            FusionMode::ConsOnly => "cons-only",
        }
    }

    pub fn uses(self, t: IndexType) -> bool {
        !matches!(
            (self, t),
            (FusionMode::CeidOnly, IndexType::Seid) | (FusionMode::SeidOnly, IndexType::Ceid)
        )
    }

    /// The α this mode runs with, given the configured one.
    pub fn alpha(self, configured: f64) -> f64 {
        match self {
            FusionMode::ConfOnly => 1.0,
            FusionMode::ConsOnly => 0.0,
            _ => configured,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown fusion mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub alpha: f64,
    pub tau: f64,
    /// Ranks below this count as appearances.
    pub k_in: usize,
    pub k_out: usize,
    pub mode: FusionMode,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            tau: DEFAULT_TAU,
            k_in: crate::retrieval::DEFAULT_K,
            k_out: crate::retrieval::DEFAULT_K,
            mode: FusionMode::Full,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.k_in == 0 || self.k_out == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-item components on both sides. `n_c`/`n_s` are `|π|` per side.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfConsistencyScore {
    pub item: String,
    pub n_c: usize,
    pub conf_c: f64,
    pub cons_c: f64,
    pub s_c: f64,
    pub n_s: usize,
    pub conf_s: f64,
    pub cons_s: f64,
    pub s_s: f64,
    pub s_total: f64,
}

impl SelfConsistencyScore {
    fn new(item: &str) -> Self {
        Self {
            item: item.to_string(),
            n_c: 0,
            conf_c: 0.0,
            cons_c: 0.0,
            s_c: 0.0,
            n_s: 0,
            conf_s: 0.0,
            cons_s: 0.0,
            s_s: 0.0,
            s_total: 0.0,
        }
    }

    pub fn appearances(&self) -> usize {
        self.n_c + self.n_s
    }

    /// Recomputes `S^x` and `S` from the stored Conf/Cons values.
    pub fn recombine(&mut self, alpha: f64) {
        let side = |n: usize, conf: f64, cons: f64| if n == 0 { 0.0 } else { alpha * conf + (1.0 - alpha) * cons };
        self.s_c = side(self.n_c, self.conf_c, self.cons_c);
        self.s_s = side(self.n_s, self.conf_s, self.cons_s);
        self.s_total = self.s_c + self.s_s;
    }
}

/// Scores every item appearing in either side's lists, sorted by item id.
pub fn self_consistency_scores(
    ceid_lists: &[RankedList],
    seid_lists: &[RankedList],
    alpha: f64,
    tau: f64,
    k_in: usize,
) -> Result<Vec<SelfConsistencyScore>> {
    let pc = collect_positions(ceid_lists, k_in)?;
    let ps = collect_positions(seid_lists, k_in)?;
    let mut scores: BTreeMap<&str, SelfConsistencyScore> = BTreeMap::new();
    for (item, pos) in &pc {
        let s = scores.entry(item).or_insert_with(|| SelfConsistencyScore::new(item));
        s.n_c = pos.len();
        s.conf_c = conf_score(pos, tau)?;
        s.cons_c = cons_score(pos, tau);
    }
    for (item, pos) in &ps {
        let s = scores.entry(item).or_insert_with(|| SelfConsistencyScore::new(item));
        s.n_s = pos.len();
        s.conf_s = conf_score(pos, tau)?;
        s.cons_s = cons_score(pos, tau);
    }
    Ok(scores
        .into_values()
        .map(|mut s| {
            s.recombine(alpha);
            s
        })
        .collect())
}

/// Highest `S` first; ties by more appearances, then item id.
pub fn rank_scores(scores: &mut [SelfConsistencyScore]) {
    scores.sort_by(|a, b| {
        b.s_total
            .total_cmp(&a.s_total)
            .then_with(|| b.appearances().cmp(&a.appearances()))
            .then_with(|| a.item.cmp(&b.item))
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub list: RankedList,
    /// All scored items in final order (longer than the list when more than
    /// `k_out` items appeared).
    pub scores: Vec<SelfConsistencyScore>,
}

/// Fuses one user's CeID and SeID template lists into a single top-`k_out`
/// list. The mode can drop a side or pin α.
pub fn fuse_and_rank(
    user: &str,
    ceid_lists: &[RankedList],
    seid_lists: &[RankedList],
    params: &FusionParams,
) -> Result<Fused> {
    params.validate()?;
    let ceid = if params.mode.uses(IndexType::Ceid) { ceid_lists } else { &[] };
    let seid = if params.mode.uses(IndexType::Seid) { seid_lists } else { &[] };
    if ceid.is_empty() && seid.is_empty() {
        return Err(Error::Empty("ranked lists for fusion"));
    }
    let mut scores = self_consistency_scores(ceid, seid, params.mode.alpha(params.alpha), params.tau, params.k_in)?;
    rank_scores(&mut scores);
    let entries = scores
        .iter()
        .take(params.k_out)
        .map(|s| (s.item.clone(), s.s_total))
        .collect();
    Ok(Fused {
        list: RankedList {
            user: user.to_string(),
            index_type: ListKind::Fused,
            template: None,
            entries,
        },
        scores,
    })
}

pub const BREAKDOWN_HEADER: &str = "user\titem\tconf_c\tcons_c\ts_c\tconf_s\tcons_s\ts_s\ts_total";

pub fn write_breakdown<W: Write>(user: &str, scores: &[SelfConsistencyScore], mut out: W) -> std::io::Result<()> {
    for s in scores {
        writeln!(
            out,
            "{user}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.item, s.conf_c, s.cons_c, s.s_c, s.conf_s, s.cons_s, s.s_s, s.s_total
        )?;
    }
    Ok(())
}
