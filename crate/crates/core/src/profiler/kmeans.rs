//! Lloyd's k-means with k-means++ seeding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub assignment: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = dist2(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            // Every point coincides with a center; duplicate one.
            centers.push(points[rng.random_range(0..points.len())].clone());
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &di) in d.iter().enumerate() {
            if target < di {
                pick = i;
                break;
            }
            target -= di;
        }
        centers.push(points[pick].clone());
    }
    centers
}

/// Clusters `points` into `k` groups. Empty clusters are repaired by moving
/// the point farthest from its current center into them.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> KMeansResult {
    assert!(k >= 1 && !points.is_empty(), "kmeans needs k >= 1 and at least one point");
    let dim = points[0].len();
    let mut centers = plus_plus_init(points, k, rng);
    let mut assignment = vec![usize::MAX; points.len()];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if points.len() >= k {
            for c in 0..k {
                if assignment.contains(&c) {
                    continue;
                }
                let far = (0..points.len())
                    .filter(|&i| assignment.iter().filter(|&&a| a == assignment[i]).count() > 1)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[assignment[a]])
                            .total_cmp(&dist2(&points[b], &centers[assignment[b]]))
                    });
                if let Some(i) = far {
                    assignment[i] = c;
                    centers[c] = points[i].clone();
                    changed = true;
                }
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    KMeansResult {
        assignment,
        centers,
        iterations,
    }
}
