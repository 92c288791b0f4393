//! k-means++ seeding and Lloyd's k-means over row-major point sets.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::rng::rng_for;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centroids: Array2<f64>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance; ties go to the
/// lowest index.
fn nearest(point: &[f64], centroids: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(point, c.as_slice().expect("standard layout"));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding. When every remaining point coincides with a chosen
/// centre the next centre is drawn uniformly.
pub fn kmeans_plus_plus<R: Rng>(data: ArrayView2<'_, f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let (m, d) = data.dim();
    assert!(m > 0 && k > 0, "k-means++ needs data and k >= 1");
    let data = data.as_standard_layout();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..m);
    centroids.row_mut(0).assign(&data.row(first));
    let mut dist: Vec<f64> = (0..m)
        .map(|i| sq_dist(data.row(i).as_slice().unwrap(), centroids.row(0).as_slice().unwrap()))
        .collect();
    for j in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = m - 1;
            for (i, w) in dist.iter().enumerate() {
                acc += w;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(j).assign(&data.row(pick));
        for (i, di) in dist.iter_mut().enumerate() {
            let nd = sq_dist(data.row(i).as_slice().unwrap(), centroids.row(j).as_slice().unwrap());
            if nd < *di {
                *di = nd;
            }
        }
    }
    centroids
}

fn lloyd(data: ArrayView2<'_, f64>, mut centroids: Array2<f64>, max_iter: usize) -> KMeansResult {
    let (m, d) = data.dim();
    let k = centroids.nrows();
    let mut labels = vec![usize::MAX; m];
    for _ in 0..max_iter {
        let mut changed = false;
        for (i, row) in data.rows().into_iter().enumerate() {
            let (j, _) = nearest(row.as_slice().unwrap(), centroids.view());
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = Array1::<f64>::zeros(k);
        for (i, row) in data.rows().into_iter().enumerate() {
            let mut s = sums.row_mut(labels[i]);
            s += &row;
            counts[labels[i]] += 1.0;
        }
        for j in 0..k {
            // empty clusters keep their previous centroid
            if counts[j] > 0.0 {
                let c = &sums.row(j) / counts[j];
                centroids.row_mut(j).assign(&c);
            }
        }
    }
    let mut inertia = 0.0;
    for (i, row) in data.rows().into_iter().enumerate() {
        let (j, dist) = nearest(row.as_slice().unwrap(), centroids.view());
        labels[i] = j;
        inertia += dist;
    }
    KMeansResult { centroids, labels, inertia }
}

/// k-means with k-means++ seeding and `restarts` independent runs; the run
/// with the lowest inertia wins (earliest on ties).
pub fn kmeans(data: ArrayView2<'_, f64>, k: usize, restarts: usize, max_iter: usize, seed: u64) -> KMeansResult {
    let data = data.as_standard_layout();
    let mut best: Option<KMeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng_for(seed, r as u64);
        let init = kmeans_plus_plus(data.view(), k, &mut rng);
        let result = lloyd(data.view(), init, max_iter);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    best.expect("at least one restart")
}
