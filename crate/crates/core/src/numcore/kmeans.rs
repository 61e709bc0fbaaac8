use crate::error::{Error, Result};

use super::matrix::squared_distance;
use super::{Matrix, Rng};

/// Output of [`kmeans`].
#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Matrix,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm from a k-means++ seeding.
///
/// Stops after `max_iter` iterations or once assignments stop changing.
/// A cluster that loses all its points takes over the point farthest from
/// its current centroid.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut Rng, max_iter: usize) -> Result<KMeans> {
    let n = points.rows();
    if k == 0 {
        return Err(Error::input("k-means needs k >= 1"));
    }
    if n < k {
        return Err(Error::input(format!("k-means with k = {k} needs at least {k} points, got {n}")));
    }

    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut objective = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter.max(1) {
        iterations += 1;
        let changed = assign(points, &centroids, &mut assignments);
        repair_empty(points, &mut centroids, &mut assignments, k);
        objective.push(total_cost(points, &centroids, &assignments));
        if !changed && iterations > 1 {
            break;
        }
        update_centroids(points, &mut centroids, &assignments);
    }
    objective.push(total_cost(points, &centroids, &assignments));

    Ok(KMeans {
        assignments,
        centroids,
        objective,
        iterations,
    })
}

fn plus_plus_init(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.below(n));
    let mut dist: Vec<f64> = points
        .row_iter()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();

    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < d {
                    break;
                }
                target -= d;
            }
            pick.expect("positive total implies a positive entry")
        } else {
            // every point coincides with a centroid: pick any unused index
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.below(unused.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.row_iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix, assignments: &mut [usize]) -> bool {
    let mut changed = false;
    for (i, p) in points.row_iter().enumerate() {
        let (c, _) = nearest(p, centroids);
        if assignments[i] != c {
            assignments[i] = c;
            changed = true;
        }
    }
    changed
}

fn repair_empty(points: &Matrix, centroids: &mut Matrix, assignments: &mut [usize], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // farthest point among clusters that can spare one
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.row_iter().enumerate() {
            if counts[assignments[i]] < 2 {
                continue;
            }
            let d = squared_distance(p, centroids.row(assignments[i]));
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let far = far.expect("n >= k leaves a cluster with two or more points");
        assignments[far] = empty;
        centroids.row_mut(empty).copy_from_slice(points.row(far));
    }
}

fn update_centroids(points: &Matrix, centroids: &mut Matrix, assignments: &[usize]) {
    let k = centroids.rows();
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (p, &a) in points.row_iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums.row_mut(a).iter_mut().zip(p) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let inv = 1.0 / count as f64;
        for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
            *dst = s * inv;
        }
    }
}

fn total_cost(points: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    points
        .row_iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(p, centroids.row(a)))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(rng: &mut Rng, per: usize, sep: f64) -> (Matrix, Vec<usize>) {
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for blob in 0..2 {
            for _ in 0..per {
                let cx = blob as f64 * sep;
                rows.push(vec![cx + rng.normal(), rng.normal()]);
                truth.push(blob);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), truth)
    }

    #[test]
    fn k_one_gives_mean() {
        let mut rng = Rng::new(0);
        let (pts, _) = blobs(&mut rng, 20, 5.0);
        let km = kmeans(&pts, 1, &mut rng, 50).unwrap();
        assert!(km.assignments.iter().all(|&a| a == 0));
        let mean = pts.col_means();
        for (c, m) in km.centroids.row(0).iter().zip(&mean) {
            assert!((c - m).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_recovered() {
        let mut rng = Rng::new(11);
        let (pts, truth) = blobs(&mut rng, 50, 10.0);
        let km = kmeans(&pts, 2, &mut rng, 100).unwrap();
        let flip = km.assignments[0] != truth[0];
        for (a, t) in km.assignments.iter().zip(&truth) {
            assert_eq!(*a, if flip { 1 - t } else { *t });
        }
    }

    #[test]
    fn k_equals_n_is_zero_cost() {
        let mut rng = Rng::new(2);
        let pts = Matrix::from_rows(&[[0.0, 1.0], [3.0, 1.0], [-2.0, 5.0], [7.0, 7.0]]).unwrap();
        let km = kmeans(&pts, 4, &mut rng, 10).unwrap();
        let mut a = km.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
        assert_eq!(*km.objective.last().unwrap(), 0.0);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let mut rng = Rng::new(5);
        let pts = Matrix::filled(6, 2, 1.0);
        let km = kmeans(&pts, 3, &mut rng, 10).unwrap();
        for c in 0..3 {
            assert!(km.assignments.contains(&c));
        }
    }

    #[test]
    fn too_few_points() {
        let mut rng = Rng::new(0);
        assert!(kmeans(&Matrix::zeros(2, 2), 3, &mut rng, 10).is_err());
    }

    #[test]
    fn objective_non_increasing() {
        let mut rng = Rng::new(9);
        let rows: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.normal(), rng.normal(), rng.normal()]).collect();
        let pts = Matrix::from_rows(&rows).unwrap();
        let km = kmeans(&pts, 7, &mut rng, 100).unwrap();
        for w in km.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{:?}", km.objective);
        }
    }
}
