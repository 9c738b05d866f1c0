//! Spatial k-means over grid squares.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Independent k-means++ starts; the lowest-inertia run wins.
const RESTARTS: usize = 10;

/// Square-to-node assignment. Node indices follow the centroids sorted by
/// `(row, col)`, so neighbouring clusters get neighbouring indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Distinct square ids, ascending.
    pub squares: Vec<u64>,
    /// Node index of each square.
    pub labels: Vec<usize>,
    /// `(row, col)` centroid of each node.
    pub centroids: Vec<[f64; 2]>,
}

impl Clustering {
    pub fn nodes(&self) -> usize {
        self.centroids.len()
    }

    pub fn node_of(&self, square: u64) -> Option<usize> {
        self.squares.binary_search(&square).ok().map(|i| self.labels[i])
    }
}

/// Row-major grid position of a square.
pub fn grid_coords(square: u64, id_base: u64, width: u64) -> Result<[f64; 2]> {
    let idx = square
        .checked_sub(id_base)
        .ok_or_else(|| Error::Config(format!("square id {square} below grid base {id_base}")))?;
    Ok([(idx / width) as f64, (idx % width) as f64])
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: &[f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(j, c)| (j, dist2(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn seed_centroids(points: &[[f64; 2]], k: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // Every remaining point coincides with a centroid.
            Err(_) => rng.random_range(0..points.len()),
        };
        let c = points[next];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[[f64; 2]], mut centroids: Vec<[f64; 2]>, iters: usize) -> (Vec<usize>, Vec<[f64; 2]>, f64) {
    let k = centroids.len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..iters {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let j = nearest(p, &centroids).0;
            changed |= *l != j;
            *l = j;
        }
        let mut sums = vec![[0.0; 2]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            counts[l] += 1;
        }
        for j in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[j] > 0 {
                centroids[j] = [sums[j][0] / counts[j] as f64, sums[j][1] / counts[j] as f64];
            }
        }
        if !changed {
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centroids).0;
    }
    let inertia = labels.iter().zip(points).map(|(&l, p)| dist2(p, &centroids[l])).sum();
    (labels, centroids, inertia)
}

/// Clusters `squares` into `k` nodes. Deterministic for a given seed.
pub fn cluster_nodes(
    squares: &[u64],
    k: usize,
    grid_width: u64,
    id_base: u64,
    iters: usize,
    seed: u64,
) -> Result<Clustering> {
    let mut squares = squares.to_vec();
    squares.sort_unstable();
    squares.dedup();
    if k == 0 || squares.len() < k {
        return Err(Error::Config(format!(
            "cannot form {k} clusters from {} distinct squares",
            squares.len()
        )));
    }
    if grid_width == 0 {
        return Err(Error::Config("grid width must be positive".into()));
    }
    let points = squares
        .iter()
        .map(|&s| grid_coords(s, id_base, grid_width))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Vec<[f64; 2]>, f64)> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(&points, seed_centroids(&points, k, &mut rng), iters.max(1));
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (labels, centroids, _) = best.expect("at least one restart");

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (centroids[a], centroids[b]);
        ca[0].total_cmp(&cb[0]).then(ca[1].total_cmp(&cb[1])).then(a.cmp(&b))
    });
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    Ok(Clustering {
        labels: labels.iter().map(|&l| rank[l]).collect(),
        centroids: order.iter().map(|&j| centroids[j]).collect(),
        squares,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cluster_per_cell() {
        let squares = [1, 2, 3, 11, 12];
        let c = cluster_nodes(&squares, 5, 10, 1, 100, 0).unwrap();
        let mut labels = c.labels.clone();
        labels.sort_unstable();
        assert_eq!(labels, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rectangle_splits_along_long_axis() {
        // Corners of a 2×5 rectangle at rows 0..1, cols 0..4 on a width-10 grid.
        let squares = [1, 5, 11, 15];
        for seed in 0..20 {
            let c = cluster_nodes(&squares, 2, 10, 1, 100, seed).unwrap();
            assert_eq!(c.node_of(1), c.node_of(11));
            assert_eq!(c.node_of(5), c.node_of(15));
            assert_ne!(c.node_of(1), c.node_of(5));
            assert_eq!(c.node_of(1), Some(0));
        }
    }

    #[test]
    fn too_few_cells() {
        assert_eq!(cluster_nodes(&[1, 2], 3, 10, 1, 10, 0).unwrap_err().code(), "E_CONFIG");
    }

    #[test]
    fn indices_follow_space() {
        let squares: Vec<u64> = (0..100).map(|i| i + 1).collect();
        let c = cluster_nodes(&squares, 4, 10, 1, 100, 3).unwrap();
        for w in c.centroids.windows(2) {
            assert!((w[0][0], w[0][1]) <= (w[1][0], w[1][1]));
        }
    }
}
