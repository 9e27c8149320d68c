//! Lloyd's k-means with k-means++ seeding.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numcore::{Mat, Rng64};

pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Mat,
    pub inertia: f64,
    /// Inertia after every iteration; non-increasing.
    pub trace: Vec<f64>,
}

impl Clustering {
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.centroids.rows()];
        for &a in &self.assignments {
            c[a] += 1;
        }
        c
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for every point; ties go to the lowest cluster id.
pub fn nearest(points: &Mat, centroids: &Mat) -> Vec<usize> {
    (0..points.rows())
        .map(|i| {
            let p = points.row(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..centroids.rows() {
                let d = sq_dist(p, centroids.row(c));
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn inertia(points: &Mat, centroids: &Mat, assignments: &[usize]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(points.row(i), centroids.row(a)))
        .sum()
}

fn plus_plus(points: &Mat, k: usize, rng: &mut Rng64) -> Mat {
    let n = points.rows();
    let mut centroids = Mat::zeros(k, points.cols());
    centroids.row_mut(0).copy_from_slice(points.row(rng.below(n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.unit() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), centroids.row(c)));
        }
    }
    centroids
}

fn update_centroids(points: &Mat, assignments: &[usize], centroids: &mut Mat) -> Vec<usize> {
    let k = centroids.rows();
    let mut sums = Mat::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (i, &a) in assignments.iter().enumerate() {
        counts[a] += 1;
        for (s, x) in sums.row_mut(a).iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    counts
}

/// Fills every empty cluster with the point farthest from the centroid of the
/// currently largest cluster.
fn repair_empty(points: &Mat, assignments: &mut [usize], centroids: &mut Mat, counts: &mut [usize]) {
    for e in 0..counts.len() {
        if counts[e] > 0 {
            continue;
        }
        let largest = (0..counts.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .unwrap();
        if counts[largest] < 2 {
            break;
        }
        let mut far = usize::MAX;
        let mut far_d = -1.0;
        for (i, &a) in assignments.iter().enumerate() {
            if a == largest {
                let d = sq_dist(points.row(i), centroids.row(largest));
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
        }
        assignments[far] = e;
        counts[largest] -= 1;
        counts[e] = 1;
        centroids.row_mut(e).copy_from_slice(points.row(far));
        // recompute the donor's mean without the moved point
        let mut mean = vec![0.0; points.cols()];
        for (i, &a) in assignments.iter().enumerate() {
            if a == largest {
                for (m, x) in mean.iter_mut().zip(points.row(i)) {
                    *m += x;
                }
            }
        }
        let inv = 1.0 / counts[largest] as f64;
        for (dst, m) in centroids.row_mut(largest).iter_mut().zip(&mean) {
            *dst = m * inv;
        }
    }
}

/// k-means++ seeding, then Lloyd iterations until the assignment stops changing
/// or [`MAX_ITERATIONS`] is reached. No cluster is left empty.
pub fn kmeans(points: &Mat, k: usize, seed: u64) -> Result<Clustering> {
    let n = points.rows();
    if n == 0 {
        return Err(Error::Empty("kmeans"));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in [1, {n}] (number of points)"
        )));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("kmeans"));
    }
    let mut rng = Rng64::new(seed);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let next = nearest(points, &centroids);
        let changed = next != assignments;
        assignments = next;
        let mut counts = update_centroids(points, &assignments, &mut centroids);
        repair_empty(points, &mut assignments, &mut centroids, &mut counts);
        let cur = inertia(points, &centroids, &assignments);
        if let Some(&prev) = trace.last() {
            debug_assert!(cur <= prev + 1e-9 * prev.max(1.0), "inertia rose {prev} -> {cur}");
        }
        trace.push(cur);
        if !changed {
            break;
        }
    }
    Ok(Clustering {
        assignments,
        inertia: *trace.last().unwrap(),
        centroids,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Mat {
        Mat::from_fn(v.len(), 1, |i, _| v[i])
    }

    #[test]
    fn separated_1d() {
        let c = kmeans(&col(&[0.0, 0.1, 10.0, 10.1]), 2, 3).unwrap();
        assert_eq!(c.assignments[0], c.assignments[1]);
        assert_eq!(c.assignments[2], c.assignments[3]);
        assert_ne!(c.assignments[0], c.assignments[2]);
        let mut cs = [c.centroids.get(0, 0), c.centroids.get(1, 0)];
        cs.sort_by(f64::total_cmp);
        assert!((cs[0] - 0.05).abs() < 1e-12 && (cs[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_mean() {
        let c = kmeans(&col(&[1.0, 2.0, 6.0]), 1, 0).unwrap();
        assert_eq!(c.assignments, vec![0, 0, 0]);
        assert!((c.centroids.get(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(kmeans(&Mat::zeros(0, 2), 1, 0).is_err());
        assert!(kmeans(&col(&[1.0, 2.0]), 3, 0).is_err());
        assert!(kmeans(&col(&[1.0]), 0, 0).is_err());
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let c = kmeans(&col(&[1.0, 1.0, 1.0, 1.0, 5.0]), 4, 9).unwrap();
        assert!(c.counts().iter().all(|&n| n > 0), "{:?}", c.counts());
    }

    #[test]
    fn k_equals_n() {
        let pts = Mat::from_fn(6, 2, |i, j| (i * 2 + j) as f64);
        let c = kmeans(&pts, 6, 1).unwrap();
        assert!(c.inertia < 1e-12);
    }
}
