//! Lloyd's k-means with deterministic tie-breaking.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::math::squared_distance;
use crate::rng::RngStream;

#[derive(Clone, Debug)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self
            .inertia_history
            .last()
            .expect("at least one assignment")
    }
}

/// Index of the nearest centroid by squared Euclidean distance; the lowest
/// index wins ties. Panics if `centroids` is empty.
pub fn assign_cluster(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    assert!(!centroids.is_empty(), "no centroids");
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

pub fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, &centroids[a]))
        .sum()
}

/// Independent starts per fit; the lowest final inertia wins.
pub const RESTARTS: usize = 10;

/// Best of [`RESTARTS`] Lloyd runs, each started from `clusters` distinct
/// sampled points. A run stops after `iters` updates or once assignments
/// stop changing. A cluster left empty by an update is re-seeded with the
/// point farthest from its centroid.
pub fn kmeans_fit(
    points: &[Vec<f64>],
    clusters: usize,
    iters: usize,
    rng: &mut RngStream,
) -> Result<KMeans> {
    if points.is_empty() {
        return Err(Error::config("k-means over no points"));
    }
    if clusters == 0 || clusters > points.len() {
        return Err(Error::config(format!(
            "cannot form {clusters} clusters from {} points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::data("k-means points differ in length"));
    }
    let mut best = lloyd(points, clusters, iters, rng);
    for _ in 1..RESTARTS {
        let run = lloyd(points, clusters, iters, rng);
        if run.inertia() < best.inertia() {
            best = run;
        }
    }
    Ok(best)
}

fn lloyd(points: &[Vec<f64>], clusters: usize, iters: usize, rng: &mut RngStream) -> KMeans {
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = index::sample(rng, points.len(), clusters)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let mut assignments: Vec<usize> = points
        .iter()
        .map(|p| assign_cluster(p, &centroids))
        .collect();
    let mut history = vec![inertia(points, &centroids, &assignments)];

    for _ in 0..iters {
        let mut sums = vec![vec![0.0; dim]; clusters];
        let mut counts = vec![0usize; clusters];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..clusters {
            if counts[j] > 0 {
                let n = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / n).collect();
            }
        }
        let empty: Vec<usize> = (0..clusters).filter(|&j| counts[j] == 0).collect();
        for j in empty {
            // farthest point from its current centroid, lowest index on ties
            let mut far = 0;
            let mut far_d = f64::NEG_INFINITY;
            for (i, p) in points.iter().enumerate() {
                if counts[assignments[i]] <= 1 {
                    continue;
                }
                let d = squared_distance(p, &centroids[assignments[i]]);
                if d > far_d {
                    far = i;
                    far_d = d;
                }
            }
            counts[assignments[far]] -= 1;
            counts[j] = 1;
            assignments[far] = j;
            centroids[j] = points[far].clone();
        }

        let next: Vec<usize> = points
            .iter()
            .map(|p| assign_cluster(p, &centroids))
            .collect();
        let stable = next == assignments;
        assignments = next;
        history.push(inertia(points, &centroids, &assignments));
        if stable {
            break;
        }
    }

    KMeans {
        centroids,
        assignments,
        inertia_history: history,
    }
}
