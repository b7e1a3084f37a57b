use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::quantize::nearest_row;
use crate::error::{Error, Result};

/// Lloyd's k-means producing `w` centroids.
///
/// Centroids start at `w` distinct rows sampled uniformly. An empty cluster is
/// reseeded to the point farthest from its assigned centroid in that round.
pub fn kmeans_init(
    points: ArrayView2<f64>,
    w: usize,
    iters: usize,
    rng: &mut impl Rng,
) -> Result<Array2<f64>> {
    let n = points.nrows();
    if n < w || w == 0 {
        return Err(Error::NotEnoughRows {
            needed: w,
            available: n,
        });
    }
    let mut centroids = Array2::zeros((w, points.ncols()));
    for (c, r) in rand::seq::index::sample(rng, n, w).into_iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(r));
    }

    let mut assignment = vec![0usize; n];
    let mut dist = vec![0f64; n];
    for _ in 0..iters {
        for (i, p) in points.rows().into_iter().enumerate() {
            let (c, d) = nearest_row(centroids.view(), p);
            assignment[i] = c;
            dist[i] = d;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; w];
        for (i, p) in points.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &p);
            counts[assignment[i]] += 1;
        }
        let mut changed = false;
        for c in 0..w {
            let next = if counts[c] > 0 {
                sums.row(c).mapv(|v| v / counts[c] as f64)
            } else {
                // First index among the maximal distances.
                let far = dist
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &d)| if d > dist[best] { i } else { best });
                dist[far] = 0.0;
                points.row(far).to_owned()
            };
            if next != centroids.row(c) {
                changed = true;
                centroids.row_mut(c).assign(&next);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centroids)
}

/// Sum of squared distances from each point to its nearest centroid.
pub fn within_cluster_sse(points: ArrayView2<f64>, centroids: ArrayView2<f64>) -> f64 {
    points
        .rows()
        .into_iter()
        .map(|p| nearest_row(centroids, p).1)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn symmetric_pairs() {
        let pts = array![[0.0], [0.0], [10.0], [10.0]];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = kmeans_init(pts.view(), 2, 100, &mut rng).unwrap();
            let mut v: Vec<f64> = c.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            assert_eq!(v, vec![0.0, 10.0], "seed {seed}");
        }
    }

    #[test]
    fn zero_iters_returns_seeded_rows() {
        let pts = Array2::from_shape_fn((10, 2), |(r, c)| (r * 2 + c) as f64);
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let c = kmeans_init(pts.view(), 3, 0, &mut a).unwrap();
        let picks: Vec<usize> = rand::seq::index::sample(&mut b, 10, 3).into_iter().collect();
        for (k, r) in picks.into_iter().enumerate() {
            assert_eq!(c.row(k), pts.row(r));
        }
    }

    #[test]
    fn too_few_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            kmeans_init(array![[1.0], [2.0]].view(), 3, 10, &mut rng),
            Err(Error::NotEnoughRows { needed: 3, available: 2 })
        ));
    }

    #[test]
    fn lloyd_does_not_increase_sse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Array2::from_shape_fn((100, 2), |_| rng.random_range(-5.0..5.0));
        let mut seed_a = ChaCha8Rng::seed_from_u64(1);
        let mut seed_b = ChaCha8Rng::seed_from_u64(1);
        let initial = kmeans_init(pts.view(), 4, 0, &mut seed_a).unwrap();
        let fitted = kmeans_init(pts.view(), 4, 100, &mut seed_b).unwrap();
        let before = within_cluster_sse(pts.view(), initial.view());
        let after = within_cluster_sse(pts.view(), fitted.view());
        assert!(after <= before, "{after} > {before}");
    }
}
