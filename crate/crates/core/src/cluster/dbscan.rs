//! DBSCAN over fixed-dimension points with Euclidean distance.

use crate::scalar::Real;

/// Euclidean distance between two points.
pub fn distance<T: Real, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Radius-query index: points sorted along the axis of largest spread, so a
/// query only scans the slab `|p[axis] - q[axis]| <= eps`.
pub struct RadiusIndex<'a, T, const D: usize> {
    points: &'a [[T; D]],
    axis: usize,
    order: Vec<usize>,
    keys: Vec<T>,
}

impl<'a, T: Real, const D: usize> RadiusIndex<'a, T, D> {
    pub fn new(points: &'a [[T; D]]) -> Self {
        let spread = |a: usize| {
            let (lo, hi) = points.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| {
                (lo.min(p[a]), hi.max(p[a]))
            });
            hi - lo
        };
        let axis = (0..D)
            .max_by(|&a, &b| spread(a).partial_cmp(&spread(b)).expect("finite points"))
            .unwrap_or(0);
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| {
            points[i][axis]
                .partial_cmp(&points[j][axis])
                .expect("finite points")
                .then(i.cmp(&j))
        });
        let keys = order.iter().map(|&i| points[i][axis]).collect();
        RadiusIndex {
            points,
            axis,
            order,
            keys,
        }
    }

    /// Indices within distance `<= eps` of point `i`, including `i`, ascending.
    pub fn neighbors(&self, i: usize, eps: T) -> Vec<usize> {
        let q = &self.points[i];
        let lo = q[self.axis] - eps;
        let hi = q[self.axis] + eps;
        let start = self.keys.partition_point(|&k| k < lo);
        let mut out: Vec<usize> = self.keys[start..]
            .iter()
            .take_while(|&&k| k <= hi)
            .zip(&self.order[start..])
            .map(|(_, &j)| j)
            .filter(|&j| distance(q, &self.points[j]) <= eps)
            .collect();
        out.sort_unstable();
        out
    }
}

/// Runs DBSCAN. A point is core when its closed `eps`-ball holds at least
/// `min_pts` points, itself included. Returns one cluster id per point, `None`
/// for noise. Clusters are numbered in order of their lowest-index core point,
/// and a border point joins the first cluster that reaches it, so the result
/// depends only on the point order.
pub fn dbscan<T: Real, const D: usize>(points: &[[T; D]], eps: T, min_pts: usize) -> Vec<Option<usize>> {
    let index = RadiusIndex::new(points);
    let neighborhoods: Vec<Vec<usize>> = (0..points.len()).map(|i| index.neighbors(i, eps)).collect();
    let is_core: Vec<bool> = neighborhoods.iter().map(|n| n.len() >= min_pts).collect();

    let mut labels = vec![None; points.len()];
    let mut next = 0;
    for seed in 0..points.len() {
        if !is_core[seed] || labels[seed].is_some() {
            continue;
        }
        let id = next;
        next += 1;
        labels[seed] = Some(id);
        let mut frontier = vec![seed];
        while let Some(p) = frontier.pop() {
            for &q in &neighborhoods[p] {
                if labels[q].is_none() {
                    labels[q] = Some(id);
                    if is_core[q] {
                        frontier.push(q);
                    }
                }
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_blobs_and_noise() {
        let mut pts: Vec<[f64; 2]> = Vec::new();
        for i in 0..5 {
            pts.push([i as f64 * 0.1, 0.0]);
            pts.push([10.0 + i as f64 * 0.1, 0.0]);
        }
        pts.push([5.0, 5.0]);
        let labels = dbscan(&pts, 0.5, 3);
        assert_eq!(labels[0], Some(0));
        assert_eq!(labels[1], Some(1));
        assert!(labels.iter().step_by(2).take(5).all(|&l| l == Some(0)));
        assert!(labels.iter().skip(1).step_by(2).take(5).all(|&l| l == Some(1)));
        assert_eq!(labels[10], None);
    }

    #[test]
    fn border_points_do_not_bridge() {
        // A at 0..0.2, a border point at 0.9, B at 1.7..1.9. The border point
        // is not core, so A and B stay separate.
        let pts: Vec<[f64; 1]> = vec![[0.0], [0.1], [0.2], [0.9], [1.7], [1.8], [1.9]];
        let labels = dbscan(&pts, 0.75, 3);
        assert_eq!(labels[0], Some(0));
        assert_eq!(labels[3], Some(0));
        assert_eq!(labels[4], Some(1));
    }

    #[test]
    fn index_matches_brute_force() {
        let pts: Vec<[f64; 3]> = (0..60)
            .map(|i| {
                let t = i as f64;
                [(t * 1.7).sin() * 5.0, (t * 0.3).cos() * 5.0, t * 0.2]
            })
            .collect();
        let idx = RadiusIndex::new(&pts);
        for i in 0..pts.len() {
            let brute: Vec<usize> = (0..pts.len()).filter(|&j| distance(&pts[i], &pts[j]) <= 2.5).collect();
            assert_eq!(idx.neighbors(i, 2.5), brute);
        }
    }
}
