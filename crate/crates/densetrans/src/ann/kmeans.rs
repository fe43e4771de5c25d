//! Seeded Lloyd's k-means with k-means++ initialization.
//!
//! Empty clusters re-seed at the point currently farthest from its
//! centroid. The per-iteration objective (sum of squared distances after
//! assignment) is recorded; Lloyd's algorithm guarantees it never
//! increases.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub struct KMeansOutcome {
    /// `k × dim`, row-major.
    pub centroids: Vec<f32>,
    /// Nearest-centroid assignment per input vector.
    pub assignments: Vec<u32>,
    /// Objective after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid (first wins on ties).
pub fn nearest_centroid(centroids: &[f32], dim: usize, v: &[f32]) -> u32 {
    let k = centroids.len() / dim;
    let mut best = 0u32;
    let mut best_d = f32::INFINITY;
    for c in 0..k {
        let d = dist2(v, &centroids[c * dim..(c + 1) * dim]);
        if d < best_d {
            best_d = d;
            best = c as u32;
        }
    }
    best
}

fn kmeans_pp_init(data: &[f32], dim: usize, k: usize, rng: &mut SplitMix64) -> Vec<f32> {
    let n = data.len() / dim;
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.below(n);
    centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
    let mut min_d2: Vec<f64> = (0..n)
        .map(|i| dist2(&data[i * dim..(i + 1) * dim], &centroids[0..dim]) as f64)
        .collect();
    for c in 1..k {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let threshold = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in min_d2.iter().enumerate() {
                acc += w;
                if acc >= threshold {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Degenerate data (all points coincide with a centroid).
            rng.below(n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(&data[pick * dim..(pick + 1) * dim]);
        let new_c = &centroids[start..start + dim];
        for i in 0..n {
            let d = dist2(&data[i * dim..(i + 1) * dim], new_c) as f64;
            if d < min_d2[i] {
                min_d2[i] = d;
            }
        }
        let _ = c;
    }
    centroids
}

pub fn kmeans(
    data: &[f32],
    dim: usize,
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut SplitMix64,
) -> Result<KMeansOutcome> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::contract(format!(
            "data length {} is not a multiple of dim {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if k == 0 || n < k {
        return Err(Error::contract(format!(
            "k-means needs at least k={k} vectors, got {n}"
        )));
    }
    let mut centroids = kmeans_pp_init(data, dim, k, rng);
    let mut assignments = vec![0u32; n];
    let mut objective = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        // Assignment.
        let mut obj = 0.0f64;
        for i in 0..n {
            let v = &data[i * dim..(i + 1) * dim];
            let c = nearest_centroid(&centroids, dim, v);
            assignments[i] = c;
            obj += dist2(v, &centroids[c as usize * dim..(c as usize + 1) * dim]) as f64;
        }
        objective.push(obj);

        // Means.
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i] as usize;
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(&data[i * dim..(i + 1) * dim]) {
                *s += *x as f64;
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed at the point farthest from its centroid.
                let mut far_i = 0;
                let mut far_d = -1.0f32;
                for i in 0..n {
                    let a = assignments[i] as usize;
                    let d = dist2(&data[i * dim..(i + 1) * dim], &centroids[a * dim..(a + 1) * dim]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                centroids[c * dim..(c + 1) * dim]
                    .copy_from_slice(&data[far_i * dim..(far_i + 1) * dim]);
                assignments[far_i] = c as u32;
                max_shift = f64::INFINITY;
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut shift = 0.0f64;
            for d in 0..dim {
                let next = (sums[c * dim + d] * inv) as f32;
                let delta = (next - centroids[c * dim + d]) as f64;
                shift += delta * delta;
                centroids[c * dim + d] = next;
            }
            max_shift = max_shift.max(shift.sqrt());
        }
        if max_shift < tol {
            break;
        }
    }

    // Final assignment against the final centroids.
    for i in 0..n {
        assignments[i] = nearest_centroid(&centroids, dim, &data[i * dim..(i + 1) * dim]);
    }
    Ok(KMeansOutcome { centroids, assignments, objective, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_data(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = SplitMix64::new(seed);
        (0..n * dim).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()
    }

    #[test]
    fn k1_centroid_is_the_mean() {
        let data = random_data(50, 4, 1);
        let out = kmeans(&data, 4, 1, 10, 1e-6, &mut SplitMix64::new(2)).unwrap();
        for d in 0..4 {
            let mean: f64 = (0..50).map(|i| data[i * 4 + d] as f64).sum::<f64>() / 50.0;
            assert!((out.centroids[d] as f64 - mean).abs() < 1e-5);
        }
    }

    #[test]
    fn objective_is_non_increasing() {
        let data = random_data(400, 8, 3);
        let out = kmeans(&data, 8, 16, 25, 0.0, &mut SplitMix64::new(4)).unwrap();
        assert!(out.objective.len() >= 2);
        for w in out.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "objective rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identical_points_give_zero_centroids_everywhere() {
        let data = vec![0.0f32; 10 * 4];
        let out = kmeans(&data, 4, 3, 10, 1e-6, &mut SplitMix64::new(5)).unwrap();
        assert!(out.centroids.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let data = random_data(200, 6, 6);
        let a = kmeans(&data, 6, 8, 25, 1e-4, &mut SplitMix64::new(7)).unwrap();
        let b = kmeans(&data, 6, 8, 25, 1e-4, &mut SplitMix64::new(7)).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn contracts() {
        let data = random_data(3, 2, 8);
        assert!(kmeans(&data, 2, 4, 5, 1e-4, &mut SplitMix64::new(9)).is_err());
        assert!(kmeans(&data, 0, 1, 5, 1e-4, &mut SplitMix64::new(9)).is_err());
    }
}
