//! Seeded synthetic data: clustered embeddings, interaction logs with
//! sequential structure, and random code tables.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataio::{EmbeddingMatrix, EmbeddingSource, InteractionDataset};
use crate::error::{Error, Result};
use crate::rqvae::{IndexType, ItemCodeTable};

/// `n` points around `k` centers drawn from `N(0, 1)`; each point is its
/// center plus `N(0, spread²)` noise. Point `p` belongs to cluster `p % k`.
pub fn gaussian_clusters(n: usize, k: usize, dim: usize, spread: f64, rng: &mut impl Rng) -> (Array2<f64>, Vec<usize>) {
    let centers: Array2<f64> = Array2::from_shape_simple_fn((k, dim), || StandardNormal.sample(rng));
    let labels: Vec<usize> = (0..n).map(|p| p % k).collect();
    let mut points = Array2::zeros((n, dim));
    for (p, &c) in labels.iter().enumerate() {
        for d in 0..dim {
            let noise: f64 = StandardNormal.sample(rng);
            points[[p, d]] = centers[[c, d]] + spread * noise;
        }
    }
    (points, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance the next item is the ring successor of the current one.
    pub p_successor: f64,
    /// Chance the next item is drawn from the current item's cluster.
    pub p_same_cluster: f64,
    pub semantic_dim: usize,
    pub semantic_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 2000,
            items: 500,
            clusters: 25,
            min_len: 6,
            max_len: 14,
            p_successor: 0.6,
            p_same_cluster: 0.3,
            semantic_dim: 32,
            semantic_noise: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.clusters == 0 || self.clusters > self.items {
            return Err(Error::InvalidConfig("synthetic data needs users, items and 1..=items clusters".into()));
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return Err(Error::InvalidConfig("synthetic sequence lengths need 3 <= min_len <= max_len".into()));
        }
        if self.p_successor < 0.0 || self.p_same_cluster < 0.0 || self.p_successor + self.p_same_cluster > 1.0 {
            return Err(Error::InvalidConfig("synthetic transition probabilities must sum to at most 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub interactions: InteractionDataset,
    pub semantic: EmbeddingMatrix,
    /// Cluster of each item.
    pub clusters: BTreeMap<String, usize>,
}

pub fn item_id(j: usize) -> String {
    format!("i{j:04}")
}

pub fn user_id(u: usize) -> String {
    format!("u{u:04}")
}

/// Items sit on a ring `0 → 1 → … → items−1 → 0` and in contiguous clusters.
/// Each user starts at a random item and walks: ring successor with
/// `p_successor`, a random item of the same cluster with `p_same_cluster`,
/// otherwise a uniform random item. Semantic embeddings are the cluster
/// center plus noise, so they carry cluster identity but not ring order.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cluster_of = |j: usize| j * cfg.clusters / cfg.items;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.clusters];
    for j in 0..cfg.items {
        members[cluster_of(j)].push(j);
    }

    let mut records = Vec::new();
    for u in 0..cfg.users {
        let len = rng.random_range(cfg.min_len..=cfg.max_len);
        let mut cur = rng.random_range(0..cfg.items);
        for step in 0..len {
            records.push((user_id(u), item_id(cur), step as i64));
            let draw: f64 = rng.random();
            cur = if draw < cfg.p_successor {
                (cur + 1) % cfg.items
            } else if draw < cfg.p_successor + cfg.p_same_cluster {
                let m = &members[cluster_of(cur)];
                m[rng.random_range(0..m.len())]
            } else {
                rng.random_range(0..cfg.items)
            };
        }
    }
    let interactions = InteractionDataset::from_records(records);

    let centers: Array2<f64> = Array2::from_shape_simple_fn((cfg.clusters, cfg.semantic_dim), || StandardNormal.sample(&mut rng));
    let mut values = Array2::zeros((cfg.items, cfg.semantic_dim));
    for j in 0..cfg.items {
        for d in 0..cfg.semantic_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            values[[j, d]] = centers[[cluster_of(j), d]] + cfg.semantic_noise * noise;
        }
    }
    let ids: Vec<String> = (0..cfg.items).map(item_id).collect();
    let clusters = ids.iter().cloned().zip((0..cfg.items).map(cluster_of)).collect();
    let semantic = EmbeddingMatrix::new(EmbeddingSource::Semantic, ids, values)?;
    Ok(SyntheticData {
        interactions,
        semantic,
        clusters,
    })
}

/// `n_items` distinct random tuples of length `depth`, each symbol in
/// `0..words`, with item ids `i0000…`.
pub fn random_code_table(
    index_type: IndexType,
    n_items: usize,
    words: u32,
    depth: usize,
    rng: &mut impl Rng,
) -> Result<ItemCodeTable> {
    let capacity = (words as f64).powi(depth as i32);
    if n_items as f64 > capacity || depth < 2 {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {n_items} distinct tuples of depth {depth} over {words} words"
        )));
    }
    let mut seen = BTreeSet::new();
    let mut codes = BTreeMap::new();
    while codes.len() < n_items {
        let tuple: Vec<u32> = (0..depth).map(|_| rng.random_range(0..words)).collect();
        if seen.insert(tuple.clone()) {
            codes.insert(item_id(codes.len()), tuple);
        }
    }
    ItemCodeTable::new(index_type, codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::kcore_filter;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            users: 200,
            items: 60,
            clusters: 6,
            semantic_dim: 8,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.interactions, b.interactions);
        assert_eq!(a.semantic, b.semantic);
    }

    #[test]
    fn sizes_and_lengths() {
        let cfg = small();
        let d = generate(&cfg).unwrap();
        assert_eq!(d.interactions.users.len(), cfg.users);
        assert_eq!(d.semantic.len(), cfg.items);
        assert!(d
            .interactions
            .sequences
            .values()
            .all(|s| (cfg.min_len..=cfg.max_len).contains(&s.len())));
        assert_eq!(kcore_filter(&d.interactions, 5).users.len(), cfg.users);
    }

    #[test]
    fn successor_transitions_dominate() {
        let d = generate(&small()).unwrap();
        let (mut succ, mut total) = (0, 0);
        for seq in d.interactions.sequences.values() {
            for w in seq.windows(2) {
                let a: usize = w[0].item[1..].parse().unwrap();
                let b: usize = w[1].item[1..].parse().unwrap();
                succ += usize::from(b == (a + 1) % 60);
                total += 1;
            }
        }
        let rate = succ as f64 / total as f64;
        assert!((0.55..0.7).contains(&rate), "{rate}");
    }

    #[test]
    fn clusters_have_separated_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (pts, labels) = gaussian_clusters(80, 4, 6, 0.1, &mut rng);
        assert_eq!(pts.nrows(), 80);
        let dist = |a: usize, b: usize| (&pts.row(a) - &pts.row(b)).mapv(|v| v * v).sum();
        // Same-cluster pairs are closer than cross-cluster pairs on average.
        let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
        for a in 0..80 {
            for b in a + 1..80 {
                if labels[a] == labels[b] {
                    same += dist(a, b);
                    ns += 1;
                } else {
                    diff += dist(a, b);
                    nd += 1;
                }
            }
        }
        assert!(same / (ns as f64) < 0.2 * diff / (nd as f64));
    }

    #[test]
    fn random_tables_are_unique() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_code_table(IndexType::Ceid, 50, 4, 4, &mut rng).unwrap();
        assert_eq!(t.len(), 50);
        assert!(random_code_table(IndexType::Ceid, 17, 2, 4, &mut rng).is_err());
    }
}
