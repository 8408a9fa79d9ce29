//! Dual-factor density clustering: per-slice 2D boxes to ordered 3D vertebra
//! centers.
//!
//! Three passes over the boxes of one case:
//!
//! 1. boxes whose neighborhood box density falls below `density_floor` are
//!    dropped;
//! 2. DBSCAN over the embedded 3D box centers groups the survivors into
//!    position clusters;
//! 3. inside each position cluster, DBSCAN over the box dimensions `(w, h)`
//!    keeps only the largest dimension cluster, discarding boxes that span
//!    several vertebrae or cover only part of one.
//!
//! Detections are put in a canonical order before any pass, so the result
//! does not depend on the order of the input file.

mod dbscan;

use std::cmp::Ordering;
use std::collections::BTreeMap;

pub use dbscan::{dbscan, distance, RadiusIndex};

use crate::domain::{DetectionSet, Plane, SliceDetection, VertebraCenter};
use crate::error::{Error, Result};
use crate::scalar::{median, Real};

/// A point in volume space, `(x, y, z)` in voxels.
pub type Point3<T> = [T; 3];

/// Clustering parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig<T> {
    /// Position-neighborhood radius, also the radius of the density pass.
    pub eps_pos: T,
    pub min_pts: usize,
    /// Radius in `(w, h)` space for the dimension pass.
    pub eps_dim: T,
    /// Minimum box density to survive the first pass.
    pub density_floor: T,
}

impl<T: Real> ClusterConfig<T> {
    /// Scale-relative defaults: radii are fractions of the median box height,
    /// `min_pts = max(4, k / 50)`.
    pub fn default_for(ds: &DetectionSet<T>) -> Result<Self> {
        let heights: Vec<T> = ds.detections.iter().map(|d| d.h).collect();
        let h = median(&heights).ok_or_else(|| Error::domain("no detections"))?;
        let cfg = ClusterConfig {
            eps_pos: T::of(0.5) * h,
            min_pts: (ds.k / 50).max(4),
            eps_dim: T::of(0.5) * h,
            density_floor: T::of(0.1),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: T| x.is_finite() && x > T::zero();
        if !positive(self.eps_pos) || !positive(self.eps_dim) {
            return Err(Error::invalid("positive-radii", "eps_pos and eps_dim must be finite and > 0"));
        }
        if self.min_pts < 2 {
            return Err(Error::invalid("min-pts", format!("min_pts {} < 2", self.min_pts)));
        }
        if !(self.density_floor > T::zero() && self.density_floor <= T::one()) {
            return Err(Error::invalid(
                "density-floor",
                format!("density_floor {} outside (0, 1]", self.density_floor),
            ));
        }
        Ok(())
    }
}

/// Maps a slice box to its 3D center: sagittal `(slice, cx, cy)`, coronal
/// `(cx, slice, cy)`.
pub fn embed_detection<T: Real>(d: &SliceDetection<T>) -> Point3<T> {
    let s = T::of_usize(d.slice_index);
    match d.plane {
        Plane::Sagittal => [s, d.cx, d.cy],
        Plane::Coronal => [d.cx, s, d.cy],
    }
}

/// Neighborhood box density of point `i`: the number of other points within
/// Euclidean distance `eps`, divided by `l_i`.
pub fn box_density<T: Real>(i: usize, points: &[Point3<T>], eps: T, l_i: usize) -> Result<T> {
    check_density_args(eps, l_i)?;
    if i >= points.len() {
        return Err(Error::domain(format!("point {i} out of range {}", points.len())));
    }
    let n = points
        .iter()
        .enumerate()
        .filter(|&(j, p)| j != i && distance(&points[i], p) <= eps)
        .count();
    Ok(T::of_usize(n) / T::of_usize(l_i))
}

/// Box density of every point, using a radius index.
pub fn box_densities<T: Real>(points: &[Point3<T>], eps: T, l_i: usize) -> Result<Vec<T>> {
    check_density_args(eps, l_i)?;
    let index = RadiusIndex::new(points);
    let l = T::of_usize(l_i);
    Ok((0..points.len())
        .map(|i| T::of_usize(index.neighbors(i, eps).len() - 1) / l)
        .collect())
}

fn check_density_args<T: Real>(eps: T, l_i: usize) -> Result<()> {
    if l_i == 0 {
        return Err(Error::domain("box density needs l_i >= 1"));
    }
    if !(eps.is_finite() && eps > T::zero()) {
        return Err(Error::domain(format!("eps {eps} must be finite and > 0")));
    }
    Ok(())
}

/// Median number of boxes per populated `(plane, slice)`, rounded half up and
/// at least 1. Stands in for the per-vertebra box count, which is unknown
/// before clustering.
pub fn boxes_per_slice<T: Real>(dets: &[SliceDetection<T>]) -> usize {
    let mut counts: BTreeMap<(u8, usize), usize> = BTreeMap::new();
    for d in dets {
        let plane = match d.plane {
            Plane::Sagittal => 0,
            Plane::Coronal => 1,
        };
        *counts.entry((plane, d.slice_index)).or_default() += 1;
    }
    let mut v: Vec<usize> = counts.into_values().collect();
    if v.is_empty() {
        return 1;
    }
    v.sort_unstable();
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]).div_ceil(2)
    };
    m.max(1)
}

/// Boxes removed by each pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropCounts {
    pub density: usize,
    pub position: usize,
    pub dimension: usize,
}

/// Centers plus the per-box assignment, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    pub centers: Vec<VertebraCenter<T>>,
    /// `assignment[b]` is the `z_rank` of the center box `b` contributed to.
    pub assignment: Vec<Option<usize>>,
    pub dropped: DropCounts,
    pub l_i: usize,
}

/// Clusters a case's detections into centers sorted cranial to caudal.
pub fn cluster_centers<T: Real>(ds: &DetectionSet<T>, cfg: &ClusterConfig<T>) -> Result<Vec<VertebraCenter<T>>> {
    cluster_detections(ds, cfg).map(|c| c.centers)
}

pub fn cluster_detections<T: Real>(ds: &DetectionSet<T>, cfg: &ClusterConfig<T>) -> Result<Clustering<T>> {
    cfg.validate()?;
    ds.validate()?;
    if ds.detections.is_empty() {
        return Err(Error::domain(format!("case {} has no detections", ds.case_id)));
    }
    let n = ds.detections.len();

    // canonical order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| canonical_cmp(&ds.detections[a], &ds.detections[b]));
    let dets: Vec<&SliceDetection<T>> = order.iter().map(|&i| &ds.detections[i]).collect();
    let points: Vec<Point3<T>> = dets.iter().map(|d| embed_detection(d)).collect();

    // pass 1: density floor
    let l_i = boxes_per_slice(&ds.detections);
    let density = box_densities(&points, cfg.eps_pos, l_i)?;
    let kept: Vec<usize> = (0..n).filter(|&i| density[i] >= cfg.density_floor).collect();
    let mut dropped = DropCounts {
        density: n - kept.len(),
        ..Default::default()
    };

    // pass 2: position clusters
    let kept_points: Vec<Point3<T>> = kept.iter().map(|&i| points[i]).collect();
    let labels = dbscan(&kept_points, cfg.eps_pos, cfg.min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (k, label) in labels.iter().enumerate() {
        match label {
            Some(c) => members[*c].push(kept[k]),
            None => dropped.position += 1,
        }
    }

    // pass 3: dimension clusters
    let mut found: Vec<(VertebraCenter<T>, Vec<usize>)> = Vec::new();
    for group in members {
        let dims: Vec<[T; 2]> = group.iter().map(|&i| [dets[i].w, dets[i].h]).collect();
        let dim_labels = dbscan(&dims, cfg.eps_dim, 2);
        let best = largest_dimension_cluster(&dims, &dim_labels);
        let keep: Vec<usize> = match best {
            Some(b) => group
                .iter()
                .zip(&dim_labels)
                .filter(|(_, l)| **l == Some(b))
                .map(|(&i, _)| i)
                .collect(),
            None => Vec::new(),
        };
        dropped.dimension += group.len() - keep.len();
        if keep.len() < cfg.min_pts {
            dropped.dimension += keep.len();
            continue;
        }
        let coord = |a: usize| median(&keep.iter().map(|&i| points[i][a]).collect::<Vec<_>>()).expect("non-empty");
        let w = median(&keep.iter().map(|&i| dets[i].w).collect::<Vec<_>>()).expect("non-empty");
        let h = median(&keep.iter().map(|&i| dets[i].h).collect::<Vec<_>>()).expect("non-empty");
        found.push((
            VertebraCenter {
                position: [coord(0), coord(1), coord(2)],
                mean_dims: [w, h],
                member_count: keep.len(),
                z_rank: 0,
            },
            keep,
        ));
    }

    if found.is_empty() {
        return Err(Error::EmptyClusters {
            total: n,
            dropped_density: dropped.density,
            dropped_position: dropped.position,
            dropped_dimension: dropped.dimension,
        });
    }

    // cranial first: descending z, then ascending x, then ascending y
    found.sort_by(|(a, _), (b, _)| {
        let p = &a.position;
        let q = &b.position;
        cmp_t(q[2], p[2]).then(cmp_t(p[0], q[0])).then(cmp_t(p[1], q[1]))
    });
    let mut assignment = vec![None; n];
    let mut centers = Vec::with_capacity(found.len());
    for (rank, (mut center, keep)) in found.into_iter().enumerate() {
        center.z_rank = rank;
        for i in keep {
            assignment[order[i]] = Some(rank);
        }
        centers.push(center);
    }
    Ok(Clustering {
        centers,
        assignment,
        dropped,
        l_i,
    })
}

/// Picks the dimension cluster with the most members. Ties go to the cluster
/// with the smaller median box area, then to the lower id.
fn largest_dimension_cluster<T: Real>(dims: &[[T; 2]], labels: &[Option<usize>]) -> Option<usize> {
    let n = labels.iter().flatten().max().map_or(0, |m| m + 1);
    (0..n)
        .map(|c| {
            let areas: Vec<T> = dims
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == Some(c))
                .map(|(d, _)| d[0] * d[1])
                .collect();
            (c, areas.len(), median(&areas).expect("clusters are non-empty"))
        })
        .min_by(|a, b| b.1.cmp(&a.1).then(cmp_t(a.2, b.2)).then(a.0.cmp(&b.0)))
        .map(|(c, _, _)| c)
}

fn cmp_t<T: Real>(a: T, b: T) -> Ordering {
    a.partial_cmp(&b).expect("finite values")
}

fn canonical_cmp<T: Real>(a: &SliceDetection<T>, b: &SliceDetection<T>) -> Ordering {
    let plane = |d: &SliceDetection<T>| matches!(d.plane, Plane::Coronal) as u8;
    plane(a)
        .cmp(&plane(b))
        .then(a.slice_index.cmp(&b.slice_index))
        .then(cmp_t(a.cx, b.cx))
        .then(cmp_t(a.cy, b.cy))
        .then(cmp_t(a.w, b.w))
        .then(cmp_t(a.h, b.h))
        .then(cmp_t(a.confidence, b.confidence))
}
