//! Point cloud container, exact neighbor queries and feature interpolation.
//!
//! Neighbor queries go through a uniform grid over the bounding box. The grid
//! only prunes the search; every result is exact and ties on distance are
//! broken by the lower source index, so results always agree with a brute
//! force scan.

use std::sync::OnceLock;

use crate::error::{invalid, Result};
use crate::geom::{self, Point3};
use crate::matrix::Matrix;

/// Stabilizer added to distances in inverse-distance weights.
pub const IDW_DELTA: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Point3>,
    features: Option<Matrix>,
    labels: Option<Vec<i32>>,
    index: OnceLock<GridIndex>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return invalid("point cloud must contain at least one point");
        }
        if let Some(i) = points.iter().position(|p| !geom::is_finite(p)) {
            return invalid(format!("point {i} has a non-finite coordinate"));
        }
        Ok(Self { points, features: None, labels: None, index: OnceLock::new() })
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.points.len() {
            return invalid(format!(
                "label count {} does not match point count {}",
                labels.len(),
                self.points.len()
            ));
        }
        if labels.iter().any(|&l| l < -1) {
            return invalid("labels must be >= -1");
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.points.len() {
            return invalid(format!(
                "feature rows {} do not match point count {}",
                features.rows(),
                self.points.len()
            ));
        }
        self.features = Some(features);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point3 {
        &self.points[i]
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    /// New cloud made of the given points (in order), carrying labels and features.
    pub fn subset(&self, indices: &[usize]) -> Result<PointCloud> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return invalid(format!("subset index {bad} out of range"));
        }
        let mut out = PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())?;
        if let Some(labels) = &self.labels {
            out.labels = Some(indices.iter().map(|&i| labels[i]).collect());
        }
        if let Some(f) = &self.features {
            out.features = Some(f.select_rows(indices));
        }
        Ok(out)
    }

    pub(crate) fn grid(&self) -> &GridIndex {
        self.index.get_or_init(|| GridIndex::build(&self.points))
    }

    /// Nearest neighbors of a single query, ascending by (distance, index).
    pub fn nearest(&self, query: &Point3, k: usize) -> Vec<Neighbor> {
        self.grid().knn(&self.points, query, k)
    }

    /// Mean distance from each point to its nearest other point.
    pub fn mean_spacing(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.nearest(p, 2)
                    .iter()
                    .find(|n| n.index != i)
                    .map_or(0.0, |n| n.distance)
            })
            .sum();
        total / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Per-query neighbor lists, each sorted ascending by distance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborList {
    pub lists: Vec<Vec<Neighbor>>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn indices(&self, query: usize) -> Vec<usize> {
        self.lists[query].iter().map(|n| n.index).collect()
    }
}

fn check_queries(queries: &[Point3]) -> Result<()> {
    if let Some(i) = queries.iter().position(|q| !geom::is_finite(q)) {
        return invalid(format!("query {i} has a non-finite coordinate"));
    }
    Ok(())
}

/// The `min(k, N)` nearest cloud points of every query.
pub fn knn_query(cloud: &PointCloud, queries: &[Point3], k: usize) -> Result<NeighborList> {
    if k == 0 {
        return invalid("k must be at least 1");
    }
    check_queries(queries)?;
    let grid = cloud.grid();
    let lists = queries.iter().map(|q| grid.knn(&cloud.points, q, k)).collect();
    Ok(NeighborList { lists })
}

/// All cloud points within distance `r` of each query, truncated to the `cap` nearest.
pub fn radius_query(
    cloud: &PointCloud,
    queries: &[Point3],
    r: f64,
    cap: usize,
) -> Result<NeighborList> {
    if !(r > 0.0) || !r.is_finite() {
        return invalid(format!("radius must be positive and finite, got {r}"));
    }
    if cap == 0 {
        return invalid("cap must be at least 1");
    }
    check_queries(queries)?;
    let grid = cloud.grid();
    let lists = queries.iter().map(|q| grid.radius(&cloud.points, q, r, cap)).collect();
    Ok(NeighborList { lists })
}

/// Inverse-distance weighted feature interpolation from `coarse` onto `fine_points`.
///
/// Weights are `1 / (d + IDW_DELTA)` over the `k` nearest coarse points. A fine
/// point closer than `IDW_DELTA` to a coarse point copies that feature row.
pub fn interpolate_features(
    coarse: &PointCloud,
    fine_points: &[Point3],
    k: usize,
) -> Result<Matrix> {
    let Some(features) = coarse.features() else {
        return invalid("interpolation source has no features");
    };
    let nbrs = knn_query(coarse, fine_points, k)?;
    let mut out = Matrix::zeros(fine_points.len(), features.cols());
    for (i, list) in nbrs.lists.iter().enumerate() {
        let row = out.row_mut(i);
        if list[0].distance < IDW_DELTA {
            row.copy_from_slice(features.row(list[0].index));
            continue;
        }
        let mut wsum = 0.0;
        for n in list {
            let w = 1.0 / (n.distance + IDW_DELTA);
            wsum += w;
            for (o, f) in row.iter_mut().zip(features.row(n.index)) {
                *o += w * f;
            }
        }
        for o in row.iter_mut() {
            *o /= wsum;
        }
    }
    Ok(out)
}

/// Uniform grid over the bounding box with points bucketed by cell.
#[derive(Debug, Clone)]
pub(crate) struct GridIndex {
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    entries: Vec<u32>,
}

impl GridIndex {
    pub(crate) fn build(points: &[Point3]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let diag = geom::norm(&extent);
        let n = points.len().max(1) as f64;
        let cell = if diag > 0.0 { diag / n.cbrt() } else { 1.0 };
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = ((extent[a] / cell).floor() as usize + 1).clamp(1, 1 << 12);
        }
        let mut grid = Self { origin: lo, cell, dims, cell_start: Vec::new(), entries: Vec::new() };

        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; ncells + 1];
        let keys: Vec<usize> = points.iter().map(|p| grid.linear(grid.cell_of(p))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0u32; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            entries[fill[k] as usize] = i as u32;
            fill[k] += 1;
        }
        grid.cell_start = counts;
        grid.entries = entries;
        grid
    }

    #[inline]
    fn axis_cell(&self, v: f64, a: usize) -> usize {
        let c = ((v - self.origin[a]) / self.cell).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(self.dims[a] - 1)
        }
    }

    #[inline]
    fn cell_of(&self, p: &Point3) -> [usize; 3] {
        [self.axis_cell(p[0], 0), self.axis_cell(p[1], 1), self.axis_cell(p[2], 2)]
    }

    #[inline]
    fn linear(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims[1] + c[1]) * self.dims[2] + c[2]
    }

    #[inline]
    fn bucket(&self, c: [usize; 3]) -> &[u32] {
        let l = self.linear(c);
        &self.entries[self.cell_start[l] as usize..self.cell_start[l + 1] as usize]
    }

    pub(crate) fn knn(&self, points: &[Point3], q: &Point3, k: usize) -> Vec<Neighbor> {
        let k = k.min(points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = self.cell_of(q);
        let mut cand: Vec<(f64, u32)> = Vec::new();
        let mut scratch: Vec<f64> = Vec::new();
        let mut ring = 0usize;
        loop {
            self.visit_shell(c, ring, |bucket| {
                for &i in bucket {
                    cand.push((geom::dist2(&points[i as usize], q), i));
                }
            });
            let covers_all =
                (0..3).all(|a| c[a] <= ring && c[a] + ring >= self.dims[a] - 1);
            if covers_all {
                break;
            }
            if cand.len() >= k {
                scratch.clear();
                scratch.extend(cand.iter().map(|c| c.0));
                let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, |a, b| a.total_cmp(b));
                let kth = kth.sqrt();
                let lb = self.shell_lower_bound(q, c, ring);
                if kth < lb {
                    break;
                }
            }
            ring += 1;
        }
        cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        cand.into_iter()
            .map(|(d2, i)| Neighbor { index: i as usize, distance: d2.sqrt() })
            .collect()
    }

    /// Calls `f` on every bucket at Chebyshev cell distance exactly `ring` from `c`.
    fn visit_shell(&self, c: [usize; 3], ring: usize, mut f: impl FnMut(&[u32])) {
        let r = ring as isize;
        let lo = |a: usize| (c[a] as isize - r).max(0) as usize;
        let hi = |a: usize| (c[a] + ring).min(self.dims[a] - 1);
        for x in lo(0)..=hi(0) {
            let ex = (x as isize - c[0] as isize).abs() == r;
            for y in lo(1)..=hi(1) {
                let ey = ex || (y as isize - c[1] as isize).abs() == r;
                if ey {
                    for z in lo(2)..=hi(2) {
                        f(self.bucket([x, y, z]));
                    }
                } else {
                    // only the two z faces of the shell
                    let z0 = c[2] as isize - r;
                    if z0 >= 0 {
                        f(self.bucket([x, y, z0 as usize]));
                    }
                    let z1 = c[2] + ring;
                    if ring > 0 && z1 < self.dims[2] {
                        f(self.bucket([x, y, z1]));
                    }
                }
            }
        }
    }

    /// Lower bound on the distance from `q` to any point outside the searched block.
    fn shell_lower_bound(&self, q: &Point3, c: [usize; 3], ring: usize) -> f64 {
        let mut lb = f64::INFINITY;
        for a in 0..3 {
            if c[a] > ring {
                let edge = self.origin[a] + (c[a] - ring) as f64 * self.cell;
                lb = lb.min(q[a] - edge);
            }
            if c[a] + ring < self.dims[a] - 1 {
                let edge = self.origin[a] + (c[a] + ring + 1) as f64 * self.cell;
                lb = lb.min(edge - q[a]);
            }
        }
        // slack for rounding in the cell assignment
        lb - 1e-9 * self.cell
    }

    pub(crate) fn radius(&self, points: &[Point3], q: &Point3, r: f64, cap: usize) -> Vec<Neighbor> {
        let slack = r + 1e-9 * r.max(self.cell);
        let lo = [
            self.axis_cell(q[0] - slack, 0),
            self.axis_cell(q[1] - slack, 1),
            self.axis_cell(q[2] - slack, 2),
        ];
        let hi = [
            self.axis_cell(q[0] + slack, 0),
            self.axis_cell(q[1] + slack, 1),
            self.axis_cell(q[2] + slack, 2),
        ];
        let mut out: Vec<(f64, u32)> = Vec::new();
        for x in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for z in lo[2]..=hi[2] {
                    for &i in self.bucket([x, y, z]) {
                        let d = geom::dist(&points[i as usize], q);
                        if d <= r {
                            out.push((d, i));
                        }
                    }
                }
            }
        }
        out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.truncate(cap);
        out.into_iter().map(|(d, i)| Neighbor { index: i as usize, distance: d }).collect()
    }
}
