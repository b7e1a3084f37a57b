//! Collaborative item embeddings: free user/item vectors smoothed by
//! symmetric-normalized propagation over the user–item graph and trained
//! with a pairwise ranking loss on the train split.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, ArrayView1, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataio::{EmbeddingMatrix, EmbeddingSource, SplitDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CollabConfig {
    pub dim: usize,
    pub layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub neg_samples_per_positive: usize,
    pub batch_size: usize,
    /// L2 penalty on the free embeddings touched by a batch.
    pub l2: f64,
    pub seed: u64,
}

impl Default for CollabConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            epochs: 40,
            learning_rate: 0.01,
            neg_samples_per_positive: 1,
            batch_size: 1024,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl CollabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("collab.dim must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("collab.learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("collab.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Symmetric-normalized adjacency of a bipartite graph, stored as CSR over
/// `n_users + n_items` nodes (users first). Edge weight is
/// `1 / sqrt(deg(u) * deg(i))`.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    n_users: usize,
    n_items: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    /// `edges` are `(user, item)` index pairs; duplicates are collapsed.
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let n = n_users + n_items;
        let mut neighbors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(u, i) in edges {
            if u >= n_users || i >= n_items {
                return Err(Error::DimensionMismatch {
                    context: "adjacency edge",
                    expected: if u >= n_users { n_users } else { n_items },
                    actual: if u >= n_users { u } else { i },
                });
            }
            neighbors[u].insert(n_users + i);
            neighbors[n_users + i].insert(u);
        }
        let degree: Vec<f64> = neighbors.iter().map(|s| s.len() as f64).collect();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for (r, nbrs) in neighbors.iter().enumerate() {
            for &c in nbrs {
                cols.push(c);
                weights.push(1.0 / (degree[r] * degree[c]).sqrt());
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            n_users,
            n_items,
            row_ptr,
            cols,
            weights,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn num_users(&self) -> usize {
        self.n_users
    }

    pub fn num_items(&self) -> usize {
        self.n_items
    }

    fn multiply(&self, e: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(e.raw_dim());
        for (r, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row.scaled_add(self.weights[k], &e.row(self.cols[k]));
            }
        }
        out
    }

    /// Dense copy, for tests and debugging.
    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut dense = Array2::zeros((n, n));
        for r in 0..n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                dense[[r, self.cols[k]]] = self.weights[k];
            }
        }
        dense
    }
}

/// Mean of `A^0 E, A^1 E, …, A^layers E`.
///
/// The operator is symmetric, so the same call maps output gradients back
/// to input gradients.
pub fn propagate(adj: &NormalizedAdjacency, e: &Array2<f64>, layers: usize) -> Result<Array2<f64>> {
    if e.nrows() != adj.num_nodes() {
        return Err(Error::DimensionMismatch {
            context: "propagate",
            expected: adj.num_nodes(),
            actual: e.nrows(),
        });
    }
    let mut acc = e.clone();
    let mut cur = e.clone();
    for _ in 0..layers {
        cur = adj.multiply(&cur);
        acc += &cur;
    }
    acc /= (layers + 1) as f64;
    Ok(acc)
}

/// Propagated user and item representations after training.
#[derive(Debug, Clone)]
pub struct CollabModel {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    user_index: BTreeMap<String, usize>,
    item_index: BTreeMap<String, usize>,
    /// Users in rows `0..n_users`, items after.
    pub embeddings: Array2<f64>,
}

impl CollabModel {
    pub fn user(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.user_index.get(id).map(|&r| self.embeddings.row(r))
    }

    pub fn item(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.item_index
            .get(id)
            .map(|&r| self.embeddings.row(self.user_ids.len() + r))
    }

    /// Mean pairwise ranking loss `-ln σ(s(u,i) - s(u,j))` over `(user, pos, neg)` triples.
    pub fn ranking_loss(&self, triples: &[(String, String, String)]) -> Result<f64> {
        if triples.is_empty() {
            return Err(Error::Empty("ranking triples"));
        }
        let mut total = 0.0;
        for (u, i, j) in triples {
            let eu = self.user(u).ok_or_else(|| Error::UnknownItem(u.clone()))?;
            let ei = self.item(i).ok_or_else(|| Error::UnknownItem(i.clone()))?;
            let ej = self.item(j).ok_or_else(|| Error::UnknownItem(j.clone()))?;
            total += softplus(-(eu.dot(&ei) - eu.dot(&ej)));
        }
        Ok(total / triples.len() as f64)
    }

    pub fn item_matrix(&self) -> Result<EmbeddingMatrix> {
        let items = self
            .embeddings
            .slice(ndarray::s![self.user_ids.len().., ..])
            .to_owned();
        EmbeddingMatrix::new(EmbeddingSource::Collaborative, self.item_ids.clone(), items)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Adam {
    m: Array2<f64>,
    v: Array2<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: (usize, usize)) -> Self {
        Self {
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            t: 0,
        }
    }

    fn step(&mut self, param: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            });
    }
}

/// Trains on `split.train` only and returns the item embeddings.
pub fn train_collaborative_embeddings(
    split: &SplitDataset,
    cfg: &CollabConfig,
) -> Result<EmbeddingMatrix> {
    train_collab_model(split, cfg, |_, _| {})?.item_matrix()
}

/// Like [`train_collaborative_embeddings`] but returns the full model and
/// calls `monitor(epoch, model)` after every epoch (1-based).
pub fn train_collab_model(
    split: &SplitDataset,
    cfg: &CollabConfig,
    mut monitor: impl FnMut(usize, &CollabModel),
) -> Result<CollabModel> {
    cfg.validate()?;
    if split.train.values().all(Vec::is_empty) {
        return Err(Error::Empty("train split"));
    }

    let user_ids: Vec<String> = split
        .train
        .iter()
        .filter(|(_, items)| !items.is_empty())
        .map(|(u, _)| u.clone())
        .collect();
    let item_ids: Vec<String> = split
        .train
        .values()
        .flatten()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let user_index: BTreeMap<String, usize> =
        user_ids.iter().enumerate().map(|(r, u)| (u.clone(), r)).collect();
    let item_index: BTreeMap<String, usize> =
        item_ids.iter().enumerate().map(|(r, i)| (i.clone(), r)).collect();

    let n_users = user_ids.len();
    let n_items = item_ids.len();
    let positives: Vec<BTreeSet<usize>> = user_ids
        .iter()
        .map(|u| split.train[u].iter().map(|i| item_index[i]).collect())
        .collect();
    let edges: Vec<(usize, usize)> = positives
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    let adj = NormalizedAdjacency::from_edges(n_users, n_items, &edges)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.1 / (cfg.dim as f64).sqrt();
    let mut ego = Array2::from_shape_fn((n_users + n_items, cfg.dim), |_| {
        rng.random_range(-bound..=bound)
    });
    let mut adam = Adam::new(ego.dim());

    let mut model = CollabModel {
        user_ids,
        item_ids,
        user_index,
        item_index,
        embeddings: Array2::zeros((0, 0)),
    };

    for epoch in 1..=cfg.epochs {
        let mut triples = Vec::with_capacity(edges.len() * cfg.neg_samples_per_positive);
        for &(u, i) in &edges {
            if positives[u].len() == n_items {
                continue;
            }
            for _ in 0..cfg.neg_samples_per_positive {
                let j = loop {
                    let j = rng.random_range(0..n_items);
                    if !positives[u].contains(&j) {
                        break j;
                    }
                };
                triples.push((u, n_users + i, n_users + j));
            }
        }
        triples.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            let emb = propagate(&adj, &ego, cfg.layers)?;
            let mut grad = Array2::<f64>::zeros(emb.raw_dim());
            let scale = 1.0 / batch.len() as f64;
            for &(u, i, j) in batch {
                let eu = emb.row(u);
                let diff = &emb.row(i) - &emb.row(j);
                let x = eu.dot(&diff);
                epoch_loss += softplus(-x);
                let g = -sigmoid(-x) * scale;
                grad.row_mut(u).scaled_add(g, &diff);
                grad.row_mut(i).scaled_add(g, &eu);
                grad.row_mut(j).scaled_add(-g, &eu);
            }
            let mut ego_grad = propagate(&adj, &grad, cfg.layers)?;
            for &(u, i, j) in batch {
                for r in [u, i, j] {
                    ego_grad.row_mut(r).scaled_add(cfg.l2 * scale, &ego.row(r));
                }
            }
            adam.step(&mut ego, &ego_grad, cfg.learning_rate);
        }
        if !triples.is_empty() {
            epoch_loss /= triples.len() as f64;
        }
        if !epoch_loss.is_finite() || ego.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        model.embeddings = propagate(&adj, &ego, cfg.layers)?;
        monitor(epoch, &model);
    }
    model.embeddings = propagate(&adj, &ego, cfg.layers)?;
    Ok(model)
}
