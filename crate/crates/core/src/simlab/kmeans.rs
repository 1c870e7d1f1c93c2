//! Lloyd's k-means with k-means++ seeding.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Stream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    /// Within-cluster sum of squares after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid (ties go to the lower index).
pub fn nearest_centroid(centroids: &[Vec<f64>], x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, stream: &mut Stream) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[stream.index(points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let target = stream.uniform() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            stream.index(points.len())
        };
        let c = points[idx].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Clusters `points` into `k` groups; stops at an assignment fixpoint or
/// after `iters` Lloyd iterations.
pub fn kmeans(points: &[Vec<f64>], k: usize, stream: &mut Stream, iters: usize) -> Result<KMeansFit> {
    if k == 0 || k > points.len() {
        return Err(Error::TooFewPoints { k, points: points.len() });
    }
    let dim = points[0].len();
    let mut centroids = seed_plus_plus(points, k, stream);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
    let mut inertia_trace = Vec::new();
    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &n) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if n > 0 {
                for (cj, sj) in c.iter_mut().zip(s) {
                    *cj = sj / n as f64;
                }
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest_centroid(&centroids, p)).collect();
        let inertia = points.iter().zip(&next).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
        inertia_trace.push(inertia);
        let fixpoint = next == assignment;
        assignment = next;
        if fixpoint {
            break;
        }
    }
    let inertia = points.iter().zip(&assignment).map(|(p, &a)| sq_dist(p, &centroids[a])).sum();
    Ok(KMeansFit {
        centroids,
        assignment,
        inertia,
        inertia_trace,
    })
}
