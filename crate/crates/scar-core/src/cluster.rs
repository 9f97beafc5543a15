//! Seeded k-means for pseudo-label construction.
//!
//! k-means++ initialization followed by Lloyd iterations until the total
//! centroid shift drops below `1e-6` or 300 iterations elapse. Distances are
//! squared Euclidean on the raw embeddings; assignment ties break to the
//! lowest centroid index. Everything is a pure function of
//! `(data, k, seed)`.

use rand::Rng;

use crate::error::{Result, ScarError};
use crate::seed;
use crate::steps::StepFunctionSet;
use crate::store::EmbeddingTable;

const SHIFT_TOL: f64 = 1e-6;
const MAX_ITERS: usize = 300;
const RESEED_ATTEMPTS: usize = 3;

/// Fitted k-means model.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    centroids: Vec<f64>,
    dim: usize,
    k: usize,
    /// Sum of squared distances of every sample to its centroid.
    pub inertia: f64,
    pub iterations_run: usize,
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }
}

fn sq_dist(a: &[f64], x: &[f32]) -> f64 {
    a.iter()
        .zip(x.iter())
        .map(|(&c, &v)| {
            let d = c - f64::from(v);
            d * d
        })
        .sum()
}

/// Index of the nearest centroid, ties to the lowest index.
fn nearest(centroids: &[f64], dim: usize, x: &[f32]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

fn kmeans_pp_init(table: &EmbeddingTable, k: usize, seed_value: u64) -> Vec<f64> {
    let n = table.len();
    let dim = table.dim();
    let mut rng = seed::rng(seed_value, "kmeans++", 0);
    let mut centroids = Vec::with_capacity(k * dim);

    let first = rng.gen_range(0..n);
    centroids.extend(table.row(first).iter().map(|&v| f64::from(v)));

    let mut dists: Vec<f64> = (0..n)
        .map(|i| sq_dist(&centroids[..dim], table.row(i)))
        .collect();
    while centroids.len() < k * dim {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in dists.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // All remaining points coincide with a centroid.
            rng.gen_range(0..n)
        };
        let start = centroids.len();
        centroids.extend(table.row(pick).iter().map(|&v| f64::from(v)));
        for i in 0..n {
            let d = sq_dist(&centroids[start..start + dim], table.row(i));
            if d < dists[i] {
                dists[i] = d;
            }
        }
    }
    centroids
}

/// Fit k-means on a table.
pub fn fit_kmeans(table: &EmbeddingTable, k: usize, seed_value: u64) -> Result<ClusterModel> {
    let n = table.len();
    let dim = table.dim();
    if k == 0 || k > n {
        return Err(ScarError::KTooLarge { k, n });
    }

    let mut centroids = kmeans_pp_init(table, k, seed_value);
    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0usize;

    loop {
        // Assignment step; inertia is the objective after this step.
        let mut new_inertia = 0.0;
        for i in 0..n {
            let (j, d) = nearest(&centroids, dim, table.row(i));
            assignments[i] = j;
            new_inertia += d;
        }
        // Lloyd never increases the objective; allow only rounding noise.
        debug_assert!(
            new_inertia <= inertia * (1.0 + 1e-9) + 1e-12,
            "inertia increased: {new_inertia} > {inertia}"
        );
        inertia = new_inertia;

        // Update step.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let j = assignments[i];
            counts[j] += 1;
            for (s, &v) in sums[j * dim..(j + 1) * dim].iter_mut().zip(table.row(i)) {
                *s += f64::from(v);
            }
        }

        // Re-seed empty clusters to the point farthest from its centroid.
        let mut attempts = 0;
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            if attempts >= RESEED_ATTEMPTS {
                return Err(ScarError::EmptyClusterUnrecoverable(RESEED_ATTEMPTS));
            }
            attempts += 1;
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = sq_dist(centroids_row(&centroids, dim, assignments[a]), table.row(a));
                    let db = sq_dist(centroids_row(&centroids, dim, assignments[b]), table.row(b));
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            let old = assignments[far];
            if counts[old] <= 1 {
                return Err(ScarError::EmptyClusterUnrecoverable(attempts));
            }
            counts[old] -= 1;
            for (s, &v) in sums[old * dim..(old + 1) * dim]
                .iter_mut()
                .zip(table.row(far))
            {
                *s -= f64::from(v);
            }
            assignments[far] = empty;
            counts[empty] = 1;
            for (s, &v) in sums[empty * dim..(empty + 1) * dim]
                .iter_mut()
                .zip(table.row(far))
            {
                *s = f64::from(v);
            }
        }

        let mut shift = 0.0f64;
        for j in 0..k {
            for u in 0..dim {
                let new = sums[j * dim + u] / counts[j] as f64;
                let old = centroids[j * dim + u];
                shift += (new - old) * (new - old);
                centroids[j * dim + u] = new;
            }
        }
        iterations += 1;
        if shift.sqrt() < SHIFT_TOL || iterations >= MAX_ITERS {
            break;
        }
    }

    // Final assignment against the converged centroids.
    let mut final_inertia = 0.0;
    for i in 0..n {
        let (_, d) = nearest(&centroids, dim, table.row(i));
        final_inertia += d;
    }

    Ok(ClusterModel {
        centroids,
        dim,
        k,
        inertia: final_inertia,
        iterations_run: iterations,
    })
}

fn centroids_row(centroids: &[f64], dim: usize, j: usize) -> &[f64] {
    &centroids[j * dim..(j + 1) * dim]
}

/// Map every sample of `table` to its nearest centroid.
pub fn assign(model: &ClusterModel, table: &EmbeddingTable) -> Result<Vec<u32>> {
    if table.dim() != model.dim {
        return Err(ScarError::DimensionMismatch {
            row: 0,
            expected: model.dim,
            got: table.dim(),
        });
    }
    Ok((0..table.len())
        .map(|i| nearest(&model.centroids, model.dim, table.row(i)).0 as u32)
        .collect())
}

/// Cross-modal pseudo-supervision: fit k-means on `source`, transfer the
/// pseudo-labels by id to `target`, and return one-vs-rest targets for it.
///
/// The two tables must be paired: identical id sequences in identical order.
pub fn cross_modal_targets(
    source: &EmbeddingTable,
    target: &EmbeddingTable,
    k: usize,
    seed_value: u64,
) -> Result<StepFunctionSet> {
    if source.len() != target.len() {
        return Err(ScarError::IdMismatch(source.len().min(target.len())));
    }
    if let Some(pos) = source
        .ids()
        .iter()
        .zip(target.ids())
        .position(|(a, b)| a != b)
    {
        return Err(ScarError::IdMismatch(pos));
    }
    let model = fit_kmeans(source, k, seed_value)?;
    let labels = assign(&model, source)?;
    StepFunctionSet::from_labels(labels, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud_table(centers: &[[f32; 2]], per_cloud: usize, spread: f32) -> EmbeddingTable {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        let mut rng = seed::rng(40, "cloud", 0);
        for center in centers {
            for _ in 0..per_cloud {
                ids.push(ids.len() as u64);
                vectors.push(center[0] + rng.gen_range(-spread..spread));
                vectors.push(center[1] + rng.gen_range(-spread..spread));
            }
        }
        EmbeddingTable::new(ids, vectors, 2, None, None, "cloud").unwrap()
    }

    /// Exhaustive nearest-centroid scan used as the assignment oracle.
    fn brute_force_assign(model: &ClusterModel, table: &EmbeddingTable) -> Vec<u32> {
        (0..table.len())
            .map(|i| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for j in 0..model.k() {
                    let d: f64 = model
                        .centroid(j)
                        .iter()
                        .zip(table.row(i))
                        .map(|(&c, &v)| (c - f64::from(v)).powi(2))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                best as u32
            })
            .collect()
    }

    #[test]
    fn two_far_clouds_separate() {
        let table = cloud_table(&[[0.0, 0.0], [100.0, 100.0]], 10, 0.5);
        let model = fit_kmeans(&table, 2, 7).unwrap();
        let labels = assign(&model, &table).unwrap();
        assert_eq!(labels, brute_force_assign(&model, &table));
        // Each cloud is one cluster.
        assert!(labels[..10].iter().all(|&l| l == labels[0]));
        assert!(labels[10..].iter().all(|&l| l == labels[10]));
        assert_ne!(labels[0], labels[10]);
        // Inertia equals the within-cloud squared distances to the means.
        let mut expected = 0.0;
        for cloud in [&table.take_rows(&(0..10).collect::<Vec<_>>()),
                      &table.take_rows(&(10..20).collect::<Vec<_>>())] {
            let mut mean = [0.0f64; 2];
            for i in 0..cloud.len() {
                mean[0] += f64::from(cloud.row(i)[0]);
                mean[1] += f64::from(cloud.row(i)[1]);
            }
            mean[0] /= cloud.len() as f64;
            mean[1] /= cloud.len() as f64;
            for i in 0..cloud.len() {
                expected += (f64::from(cloud.row(i)[0]) - mean[0]).powi(2)
                    + (f64::from(cloud.row(i)[1]) - mean[1]).powi(2);
            }
        }
        assert!((model.inertia - expected).abs() < 1e-6 * expected.max(1.0));
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let table = cloud_table(&[[0.0, 0.0], [5.0, 5.0]], 3, 1.0);
        let model = fit_kmeans(&table, table.len(), 3).unwrap();
        assert!(model.inertia < 1e-12);
    }

    #[test]
    fn k_too_large_rejected() {
        let table = cloud_table(&[[0.0, 0.0]], 4, 1.0);
        assert!(matches!(
            fit_kmeans(&table, 5, 3),
            Err(ScarError::KTooLarge { k: 5, n: 4 })
        ));
    }

    #[test]
    fn assign_exact_centroid_and_tie_break() {
        let model = ClusterModel {
            centroids: vec![0.0, 0.0, /* c1 */ 2.0, 0.0, /* c2 */ 9.0, 9.0, /* c3 */ 5.0, 5.0],
            dim: 2,
            k: 4,
            inertia: 0.0,
            iterations_run: 0,
        };
        let table = EmbeddingTable::new(
            vec![0, 1],
            vec![5.0, 5.0, /* equidistant between c1 and c... */ 1.0, 0.0],
            2,
            None,
            None,
            "m",
        )
        .unwrap();
        let labels = assign(&model, &table).unwrap();
        assert_eq!(labels[0], 3); // exactly on centroid 3
        assert_eq!(labels[1], 0); // tie between centroids 0 and 1 -> lowest
    }

    #[test]
    fn assign_matches_brute_force_on_random_points() {
        let table = cloud_table(&[[0.0, 0.0], [3.0, 1.0]], 5, 2.0);
        let model = fit_kmeans(&table, 3, 11).unwrap();
        assert_eq!(
            assign(&model, &table).unwrap(),
            brute_force_assign(&model, &table)
        );
    }

    #[test]
    fn fit_is_deterministic() {
        let table = cloud_table(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 20, 1.5);
        let a = fit_kmeans(&table, 3, 99).unwrap();
        let b = fit_kmeans(&table, 3, 99).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia.to_bits(), b.inertia.to_bits());
    }

    #[test]
    fn cross_modal_transfers_partition() {
        let source = cloud_table(&[[0.0, 0.0], [50.0, 50.0]], 8, 0.5);
        let target = cloud_table(&[[1.0, 1.0], [2.0, 2.0]], 8, 0.5);
        let steps = cross_modal_targets(&source, &target, 2, 5).unwrap();
        assert_eq!(steps.k(), 2);
        assert_eq!(steps.len(), 16);
        // The two source clouds induce two blocks of targets.
        assert!(steps.labels()[..8].iter().all(|&l| l == steps.labels()[0]));
        assert!(steps.labels()[8..].iter().all(|&l| l == steps.labels()[8]));
        assert_ne!(steps.labels()[0], steps.labels()[8]);
    }

    #[test]
    fn cross_modal_self_supervision_matches_direct_fit() {
        let table = cloud_table(&[[0.0, 0.0], [20.0, 20.0]], 10, 1.0);
        let steps = cross_modal_targets(&table, &table, 2, 17).unwrap();
        let model = fit_kmeans(&table, 2, 17).unwrap();
        assert_eq!(steps.labels(), assign(&model, &table).unwrap());
    }

    #[test]
    fn duplicate_points_with_excess_clusters_fail_reseeding() {
        // Three rows but only two distinct locations: one cluster can never
        // be populated.
        let table = EmbeddingTable::new(
            vec![0, 1, 2],
            vec![0.0, 0.0, 0.0, 0.0, 9.0, 9.0],
            2,
            None,
            None,
            "m",
        )
        .unwrap();
        assert!(matches!(
            fit_kmeans(&table, 3, 1),
            Err(ScarError::EmptyClusterUnrecoverable(_))
        ));
    }

    #[test]
    fn mismatched_ids_rejected() {
        let source = cloud_table(&[[0.0, 0.0]], 4, 1.0);
        let mut rows: Vec<usize> = (0..4).collect();
        rows.reverse();
        let target = source.take_rows(&rows);
        assert!(matches!(
            cross_modal_targets(&source, &target, 2, 1),
            Err(ScarError::IdMismatch(_))
        ));
    }
}
