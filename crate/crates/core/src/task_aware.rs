//! Supervision samplers that use ground-truth task information.
//!
//! Each sampler here produces the target point set that the learned sampler
//! is trained to approximate: Edge-FPS for segmentation, Key-FPS for keypoint
//! detection, Part-FPS as an alternative segmentation target, and uniform
//! sampling of the complete shape for completion.

use crate::cloud::{radius_query, PointCloud};
use crate::error::{invalid, Result};
use crate::sampling::{fps, fps_indices, SampleResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskAwareConfig {
    /// Scale ratio, at least 1.
    pub lambda: f64,
    /// Clip ratio in `[0, 1]`.
    pub beta: f64,
    /// Boundary radius. `None` derives it from the cloud's point spacing.
    pub epsilon: Option<f64>,
    /// Neighborhood size for soft keypoints.
    pub knn_soft: usize,
}

impl Default for TaskAwareConfig {
    fn default() -> Self {
        Self::segmentation()
    }
}

impl TaskAwareConfig {
    pub fn segmentation() -> Self {
        Self { lambda: 3.5, beta: 0.75, epsilon: None, knn_soft: 20 }
    }

    pub fn keypoint() -> Self {
        Self { lambda: 7.5, beta: 0.8, epsilon: None, knn_soft: 20 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 1.0) || !self.lambda.is_finite() {
            return invalid(format!("lambda must be >= 1, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return invalid(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) || !e.is_finite() {
                return invalid(format!("epsilon must be positive, got {e}"));
            }
        }
        if self.knn_soft == 0 {
            return invalid("knn_soft must be at least 1");
        }
        Ok(())
    }

    pub fn resolve_epsilon(&self, cloud: &PointCloud) -> Result<f64> {
        match self.epsilon {
            Some(e) => Ok(e),
            None => default_epsilon(cloud),
        }
    }
}

/// Twice the mean nearest-neighbor spacing of the cloud.
pub fn default_epsilon(cloud: &PointCloud) -> Result<f64> {
    let e = 2.0 * cloud.mean_spacing();
    if e > 0.0 {
        Ok(e)
    } else {
        invalid("cannot derive a boundary radius from a cloud with zero spacing")
    }
}

/// Per-point flags splitting a cloud into a flagged and an unflagged subset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMask {
    pub flags: Vec<bool>,
}

impl BoundaryMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// `(flagged, unflagged)` counts.
    pub fn counts(&self) -> (usize, usize) {
        let nb = self.flags.iter().filter(|&&f| f).count();
        (nb, self.flags.len() - nb)
    }

    pub fn complement(&self) -> Self {
        Self { flags: self.flags.iter().map(|f| !f).collect() }
    }

    /// Fraction of `indices` that are flagged.
    pub fn fraction_of(&self, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        indices.iter().filter(|&&i| self.flags[i]).count() as f64 / indices.len() as f64
    }
}

/// A labeled point is a boundary point when some other labeled point within
/// `epsilon` carries a different label. Unlabeled points (-1) never count.
pub fn detect_boundary(cloud: &PointCloud, epsilon: f64) -> Result<BoundaryMask> {
    let Some(labels) = cloud.labels() else {
        return invalid("boundary detection needs labels");
    };
    let nbrs = radius_query(cloud, cloud.points(), epsilon, usize::MAX)?;
    let flags = nbrs
        .lists
        .iter()
        .enumerate()
        .map(|(i, list)| {
            labels[i] >= 0
                && list.iter().any(|n| n.index != i && labels[n.index] >= 0 && labels[n.index] != labels[i])
        })
        .collect();
    Ok(BoundaryMask { flags })
}

#[inline]
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Number of flagged points to sample out of `m`, given `flagged` of `n` points.
///
/// `min(round(lambda * flagged / n * m), flagged, round(beta * m))`, then
/// raised when the unflagged subset cannot fill the remainder so the two
/// quotas always sum to `m`.
pub fn boundary_quota(n: usize, flagged: usize, m: usize, lambda: f64, beta: f64) -> usize {
    let scaled = round_half_up(lambda * (flagged as f64 / n as f64) * m as f64);
    let clip = round_half_up(beta * m as f64);
    let quota = scaled.min(flagged).min(clip).min(m);
    let unflagged = n - flagged;
    if m - quota > unflagged {
        m - unflagged
    } else {
        quota
    }
}

/// FPS run separately over the flagged and unflagged subsets with quotas from
/// [`boundary_quota`]; flagged picks come first in the output.
pub fn masked_fps(
    cloud: &PointCloud,
    mask: &BoundaryMask,
    m: usize,
    cfg: &TaskAwareConfig,
) -> Result<SampleResult> {
    cfg.validate()?;
    let n = cloud.len();
    if mask.len() != n {
        return invalid(format!("mask length {} does not match cloud size {n}", mask.len()));
    }
    if m == 0 || m > n {
        return invalid(format!("cannot sample {m} of {n} points"));
    }
    let flagged: Vec<usize> = (0..n).filter(|&i| mask.flags[i]).collect();
    let unflagged: Vec<usize> = (0..n).filter(|&i| !mask.flags[i]).collect();
    let quota = boundary_quota(n, flagged.len(), m, cfg.lambda, cfg.beta);

    let mut picks = Vec::with_capacity(m);
    for (subset, count) in [(&flagged, quota), (&unflagged, m - quota)] {
        if count == 0 {
            continue;
        }
        let pts: Vec<_> = subset.iter().map(|&i| *cloud.point(i)).collect();
        picks.extend(fps_indices(&pts, count, 0)?.into_iter().map(|j| subset[j]));
    }
    Ok(SampleResult::from_indices(cloud, picks))
}

/// Edge-FPS: oversample points near label boundaries.
pub fn edge_fps(cloud: &PointCloud, m: usize, cfg: &TaskAwareConfig) -> Result<SampleResult> {
    cfg.validate()?;
    let eps = cfg.resolve_epsilon(cloud)?;
    let mask = detect_boundary(cloud, eps)?;
    masked_fps(cloud, &mask, m, cfg)
}

/// Largest-remainder split of `m` proportional to `sizes`; remainder ties go
/// to the earlier entry.
pub fn proportional_quotas(sizes: &[usize], m: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return vec![0; sizes.len()];
    }
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * m / total).collect();
    let mut rems: Vec<(usize, usize)> = sizes.iter().enumerate().map(|(i, &s)| (s * m % total, i)).collect();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let assigned: usize = quotas.iter().sum();
    for &(_, i) in rems.iter().take(m - assigned) {
        quotas[i] += 1;
    }
    quotas
}

/// Part-FPS: FPS inside each label group with proportional quotas, groups in
/// ascending label order. Unlabeled points form their own group.
pub fn part_fps(cloud: &PointCloud, m: usize) -> Result<SampleResult> {
    let Some(labels) = cloud.labels() else {
        return invalid("part sampling needs labels");
    };
    let n = cloud.len();
    if m == 0 || m > n {
        return invalid(format!("cannot sample {m} of {n} points"));
    }
    let mut ids: Vec<i32> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let groups: Vec<Vec<usize>> =
        ids.iter().map(|&l| (0..n).filter(|&i| labels[i] == l).collect()).collect();
    let quotas = proportional_quotas(&groups.iter().map(Vec::len).collect::<Vec<_>>(), m);
    let mut picks = Vec::with_capacity(m);
    for (group, q) in groups.iter().zip(quotas) {
        if q == 0 {
            continue;
        }
        let pts: Vec<_> = group.iter().map(|&i| *cloud.point(i)).collect();
        picks.extend(fps_indices(&pts, q, 0)?.into_iter().map(|j| group[j]));
    }
    Ok(SampleResult::from_indices(cloud, picks))
}

/// Flags every point among the `knn_soft` nearest neighbors of any keypoint,
/// plus the keypoints themselves.
pub fn soft_keypoints(cloud: &PointCloud, keypoints: &[usize], knn_soft: usize) -> Result<BoundaryMask> {
    if knn_soft == 0 {
        return invalid("knn_soft must be at least 1");
    }
    let mut flags = vec![false; cloud.len()];
    for &k in keypoints {
        if k >= cloud.len() {
            return invalid(format!("keypoint index {k} out of range"));
        }
        flags[k] = true;
        for nb in cloud.nearest(cloud.point(k), knn_soft) {
            flags[nb.index] = true;
        }
    }
    Ok(BoundaryMask { flags })
}

/// Key-FPS: Edge-FPS quotas applied to a soft-keypoint mask.
pub fn key_fps(
    cloud: &PointCloud,
    soft_mask: &BoundaryMask,
    m: usize,
    cfg: &TaskAwareConfig,
) -> Result<SampleResult> {
    masked_fps(cloud, soft_mask, m, cfg)
}

/// Uniform (FPS) sampling of the complete shape.
pub fn completion_supervision(complete: &PointCloud, m: usize) -> Result<SampleResult> {
    fps(complete, m, 0)
}
