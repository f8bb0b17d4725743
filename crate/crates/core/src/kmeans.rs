//! K-means over flattened row-major vectors: full-batch Lloyd iterations and
//! the mini-batch variant with per-center `1/count` learning rates. Both use
//! k-means++ seeding, and both repair empty clusters by handing them the point
//! farthest from its current center.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::squared_euclidean;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub dim: usize,
    /// `k * dim` center coordinates.
    pub centers: Vec<f64>,
    pub assignments: Vec<usize>,
    /// Objective after every assignment pass (one entry for the mini-batch variant).
    pub objective_trace: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn center(&self, c: usize) -> &[f64] {
        &self.centers[c * self.dim..(c + 1) * self.dim]
    }

    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn check_args(data: &[f64], dim: usize, k: usize) -> Result<usize> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!(
            "{} values do not form rows of {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Argument(format!("k = {k} exceeds the {n} points")));
    }
    Ok(n)
}

fn row(data: &[f64], dim: usize, i: usize) -> &[f64] {
    &data[i * dim..(i + 1) * dim]
}

/// Index and squared distance of the nearest center; ties go to the lower index.
fn nearest(x: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    centers
        .chunks_exact(dim)
        .map(|c| squared_euclidean(x, c))
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |best, (j, d)| if d < best.1 { (j, d) } else { best },
        )
}

/// k-means++ seeding: each new center is drawn with probability proportional
/// to the squared distance to the closest center chosen so far.
pub fn kmeans_plus_plus(
    data: &[f64],
    dim: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let n = check_args(data, dim, k)?;
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = row(data, dim, first).to_vec();
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_euclidean(row(data, dim, i), &centers))
        .collect();
    while centers.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            while d2[pick] == 0.0 {
                pick -= 1;
            }
            pick
        } else {
            // Only duplicates remain; take any unused index.
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = row(data, dim, pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_euclidean(row(data, dim, i), &c));
        }
        centers.extend(c);
    }
    Ok(centers)
}

/// Assigns every point to its nearest center, returning per-point squared distances.
fn assign(
    data: &[f64],
    dim: usize,
    centers: &[f64],
    assignments: &mut [usize],
) -> (bool, Vec<f64>) {
    let results: Vec<(usize, f64)> = data
        .par_chunks_exact(dim)
        .map(|x| nearest(x, centers, dim))
        .collect();
    let mut changed = false;
    let dists = results
        .into_iter()
        .zip(assignments.iter_mut())
        .map(|((c, d), a)| {
            changed |= *a != c;
            *a = c;
            d
        })
        .collect();
    (changed, dists)
}

/// Gives every empty cluster the point farthest from its center, taken from a
/// cluster that can spare it.
fn repair_empty(
    data: &[f64],
    dim: usize,
    centers: &mut [f64],
    assignments: &mut [usize],
    dists: &mut [f64],
) {
    let k = centers.len() / dim;
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let donor = (0..assignments.len())
            .filter(|&i| sizes[assignments[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("k <= n guarantees a cluster with a spare point");
        sizes[assignments[donor]] -= 1;
        sizes[empty] = 1;
        assignments[donor] = empty;
        dists[donor] = 0.0;
        centers[empty * dim..(empty + 1) * dim].copy_from_slice(row(data, dim, donor));
    }
}

fn update_means(data: &[f64], dim: usize, centers: &mut [f64], assignments: &[usize]) {
    let k = centers.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &a) in data.chunks_exact(dim).zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(x) {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centers[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..])
            {
                *dst = s * inv;
            }
        }
    }
}

/// Full-batch Lloyd iterations from k-means++ seeds.
pub fn kmeans_full(
    data: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Clustering> {
    check_args(data, dim, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(data, dim, k, &mut rng)?;
    kmeans_full_from(data, dim, init, max_iters)
}

/// Lloyd iterations from the given initial centers. Stops when assignments
/// stop changing or after `max_iters` center updates.
pub fn kmeans_full_from(
    data: &[f64],
    dim: usize,
    init: Vec<f64>,
    max_iters: usize,
) -> Result<Clustering> {
    let k = init.len() / dim;
    let n = check_args(data, dim, k)?;
    let mut centers = init;
    let mut assignments = vec![usize::MAX; n];
    let (_, mut dists) = assign(data, dim, &centers, &mut assignments);
    repair_empty(data, dim, &mut centers, &mut assignments, &mut dists);
    let mut trace = vec![dists.iter().sum()];
    for _ in 0..max_iters {
        update_means(data, dim, &mut centers, &assignments);
        let (changed, mut d) = assign(data, dim, &centers, &mut assignments);
        repair_empty(data, dim, &mut centers, &mut assignments, &mut d);
        trace.push(d.iter().sum());
        if !changed {
            break;
        }
    }
    Ok(Clustering {
        dim,
        centers,
        assignments,
        objective_trace: trace,
    })
}

/// Mini-batch k-means: every batch is assigned against the current centers,
/// then each point pulls its center with step `1 / count(center)`.
pub fn kmeans_minibatch(
    data: &[f64],
    dim: usize,
    k: usize,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<Clustering> {
    let n = check_args(data, dim, k)?;
    if batch_size == 0 {
        return Err(Error::Argument("batch_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus(data, dim, k, &mut rng)?;
    let mut counts = vec![0u64; k];
    for _ in 0..n_batches {
        let batch: Vec<usize> = if batch_size >= n {
            (0..n).collect()
        } else {
            index::sample(&mut rng, n, batch_size).into_vec()
        };
        let nearest_centers: Vec<usize> = batch
            .iter()
            .map(|&i| nearest(row(data, dim, i), &centers, dim).0)
            .collect();
        for (&i, &c) in batch.iter().zip(&nearest_centers) {
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, xv) in centers[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(row(data, dim, i))
            {
                *cv += eta * (xv - *cv);
            }
        }
    }
    let mut assignments = vec![usize::MAX; n];
    let (_, mut dists) = assign(data, dim, &centers, &mut assignments);
    repair_empty(data, dim, &mut centers, &mut assignments, &mut dists);
    Ok(Clustering {
        dim,
        centers,
        assignments,
        objective_trace: vec![dists.iter().sum()],
    })
}

/// Sum of squared distances from each point to its assigned center.
pub fn objective(data: &[f64], dim: usize, centers: &[f64], assignments: &[usize]) -> f64 {
    data.chunks_exact(dim)
        .zip(assignments)
        .map(|(x, &a)| squared_euclidean(x, &centers[a * dim..(a + 1) * dim]))
        .sum()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    /// Canonical form of a partition: each point labelled by the first point of its cluster.
    fn canonical(assignments: &[usize]) -> Vec<usize> {
        assignments
            .iter()
            .map(|a| assignments.iter().position(|b| b == a).unwrap())
            .collect()
    }

    fn four_points() -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 1.0, 10.0, 0.0, 10.0, 1.0]
    }

    fn blobs(seed: u64, n: usize, k: usize, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..k * dim)
            .map(|_| rng.random_range(-20.0..20.0f64))
            .collect();
        let noise = Normal::new(0.0, 1.5).unwrap();
        (0..n)
            .flat_map(|i| {
                let c = i % k;
                (0..dim)
                    .map(|j| centers[c * dim + j] + noise.sample(&mut rng))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn two_obvious_groups() {
        for seed in 0..20 {
            let r = kmeans_full(&four_points(), 2, 2, 100, seed).unwrap();
            let mut centers: Vec<&[f64]> = (0..2).map(|c| r.center(c)).collect();
            centers.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
            assert_eq!(centers, vec![&[0.0, 0.5][..], &[10.0, 0.5][..]]);
            assert_eq!(canonical(&r.assignments), vec![0, 0, 2, 2]);
        }
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let r = kmeans_full(&four_points(), 2, 4, 10, 3).unwrap();
        assert_eq!(r.objective(), 0.0);
        assert_eq!(canonical(&r.assignments), vec![0, 1, 2, 3]);
    }

    #[test]
    fn too_many_clusters_is_an_error() {
        assert!(matches!(
            kmeans_full(&four_points(), 2, 5, 10, 0),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            kmeans_minibatch(&four_points(), 2, 5, 2, 10, 0),
            Err(Error::Argument(_))
        ));
        assert!(kmeans_minibatch(&four_points(), 2, 2, 0, 10, 0).is_err());
        assert!(kmeans_full(&four_points(), 2, 0, 10, 0).is_err());
    }

    #[test]
    fn empty_cluster_repaired_by_farthest_point() {
        // Both initial centers sit on the left group, so the right group is
        // split off by stealing its farthest point.
        let data = vec![0.0, 0.0, 0.1, 0.0, 10.0, 0.0];
        let init = vec![0.0, 0.0, 0.0, 0.0];
        let r = kmeans_full_from(&data, 2, init, 0).unwrap();
        assert_eq!(r.assignments, vec![0, 0, 1]);
        assert_eq!(r.center(1), &[10.0, 0.0]);
    }

    #[test]
    fn minibatch_matches_full_partition_on_toy() {
        for seed in 0..10 {
            let full = kmeans_full(&four_points(), 2, 2, 100, seed).unwrap();
            let mb = kmeans_minibatch(&four_points(), 2, 2, 2, 50, seed).unwrap();
            assert_eq!(canonical(&mb.assignments), canonical(&full.assignments));
        }
    }

    #[test]
    fn full_batch_pass_is_a_lloyd_update() {
        let data = blobs(4, 200, 5, 3);
        let seed = 9;
        let mb = kmeans_minibatch(&data, 3, 5, 200, 1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = kmeans_plus_plus(&data, 3, 5, &mut rng).unwrap();
        let lloyd = kmeans_full_from(&data, 3, init, 1).unwrap();
        for (a, b) in mb.centers.iter().zip(&lloyd.centers) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn minibatch_objective_close_to_full() {
        let mut ratio = 0.0;
        for seed in 0..10 {
            let data = blobs(100 + seed, 2000, 8, 4);
            let full = kmeans_full(&data, 4, 8, 100, seed).unwrap();
            let mb = kmeans_minibatch(&data, 4, 8, 100, 200, seed).unwrap();
            ratio += mb.objective() / full.objective();
        }
        assert!(ratio / 10.0 <= 1.10, "mean ratio {}", ratio / 10.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let data = blobs(1, 300, 4, 2);
        assert_eq!(
            kmeans_minibatch(&data, 2, 4, 32, 40, 5).unwrap(),
            kmeans_minibatch(&data, 2, 4, 32, 40, 5).unwrap()
        );
        assert_eq!(
            kmeans_full(&data, 2, 4, 40, 5).unwrap(),
            kmeans_full(&data, 2, 4, 40, 5).unwrap()
        );
    }

    #[test]
    fn duplicates_do_not_break_seeding() {
        let data = vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let r = kmeans_full(&data, 2, 3, 10, 0).unwrap();
        assert!(r.sizes().iter().all(|&s| s == 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn lloyd_objective_never_increases(seed in 0u64..1000, k in 1usize..8) {
            let data = blobs(seed, 120, 5, 3);
            let r = kmeans_full(&data, 3, k, 50, seed).unwrap();
            for w in r.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", r.objective_trace);
            }
            prop_assert!(r.sizes().iter().all(|&s| s > 0));
            let recomputed = objective(&data, 3, &r.centers, &r.assignments);
            prop_assert!((recomputed - r.objective()).abs() <= 1e-9 * recomputed.max(1.0));
        }

        #[test]
        fn lloyd_partition_ignores_point_order(seed in 0u64..1000) {
            let dim = 2;
            let data = blobs(seed, 60, 3, dim);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = kmeans_plus_plus(&data, dim, 3, &mut rng).unwrap();
            let perm = index::sample(&mut rng, 60, 60).into_vec();
            let shuffled: Vec<f64> = perm.iter().flat_map(|&i| row(&data, dim, i).to_vec()).collect();
            let a = kmeans_full_from(&data, dim, init.clone(), 100).unwrap();
            let b = kmeans_full_from(&shuffled, dim, init, 100).unwrap();
            for (pos, &i) in perm.iter().enumerate() {
                prop_assert_eq!(b.assignments[pos], a.assignments[i]);
            }
        }
    }
}
