//! Set distances (Chamfer, EMD, EMD with a fixed matching), the exact
//! assignment solver behind EMD, and task metrics.

use std::collections::HashMap;

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};
use crate::geom::{self, Point3};
use crate::matrix::Matrix;

/// A bijection between two equal-size sets with its total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    /// `(index in A, index in B)`, sorted by the A index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl Matching {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `targets()[a]` is the B index matched to `a`.
    pub fn targets(&self) -> Vec<usize> {
        let mut t = vec![0; self.pairs.len()];
        for &(a, b) in &self.pairs {
            t[a] = b;
        }
        t
    }
}

fn nonempty(name: &str, pts: &[Point3]) -> Result<()> {
    if pts.is_empty() {
        return invalid(format!("{name} is empty"));
    }
    if pts.iter().any(|p| !geom::is_finite(p)) {
        return invalid(format!("{name} has a non-finite coordinate"));
    }
    Ok(())
}

/// Distance from each point of `from` to its nearest point of `to`, with that index.
fn nearest_in(from: &[Point3], to: &[Point3]) -> Result<Vec<(usize, f64)>> {
    let cloud = PointCloud::new(to.to_vec())?;
    Ok(from
        .iter()
        .map(|p| {
            let n = cloud.nearest(p, 1)[0];
            (n.index, n.distance)
        })
        .collect())
}

/// Symmetric Chamfer distance, summed over both sets and halved.
pub fn chamfer(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty("first set", a)?;
    nonempty("second set", b)?;
    let ab: f64 = nearest_in(a, b)?.iter().map(|x| x.1).sum();
    let ba: f64 = nearest_in(b, a)?.iter().map(|x| x.1).sum();
    Ok(0.5 * (ab + ba))
}

/// Per-point variant: each directional sum divided by its set size.
pub fn chamfer_mean(a: &[Point3], b: &[Point3]) -> Result<f64> {
    nonempty("first set", a)?;
    nonempty("second set", b)?;
    let ab: f64 = nearest_in(a, b)?.iter().map(|x| x.1).sum();
    let ba: f64 = nearest_in(b, a)?.iter().map(|x| x.1).sum();
    Ok(0.5 * (ab / a.len() as f64 + ba / b.len() as f64))
}

/// Summed Chamfer distance and its gradient with respect to `pred`.
///
/// Nearest-neighbor choices are held fixed; coincident pairs get a zero subgradient.
pub fn chamfer_with_grad(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    nonempty("prediction", pred)?;
    nonempty("target", target)?;
    let mut grad = vec![[0.0; 3]; pred.len()];
    let mut total = 0.0;
    for (i, (j, d)) in nearest_in(pred, target)?.into_iter().enumerate() {
        total += d;
        let u = geom::unit_diff(&pred[i], &target[j]);
        grad[i] = geom::add(&grad[i], &geom::scale(&u, 0.5));
    }
    for (j, (i, d)) in nearest_in(target, pred)?.into_iter().enumerate() {
        total += d;
        let u = geom::unit_diff(&pred[i], &target[j]);
        grad[i] = geom::add(&grad[i], &geom::scale(&u, 0.5));
    }
    Ok((0.5 * total, grad))
}

/// Per-point Chamfer distance and its gradient with respect to `pred`.
pub fn chamfer_mean_with_grad(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    nonempty("prediction", pred)?;
    nonempty("target", target)?;
    let (np, nt) = (pred.len() as f64, target.len() as f64);
    let mut grad = vec![[0.0; 3]; pred.len()];
    let (mut fwd, mut bwd) = (0.0, 0.0);
    for (i, (j, d)) in nearest_in(pred, target)?.into_iter().enumerate() {
        fwd += d;
        let u = geom::unit_diff(&pred[i], &target[j]);
        grad[i] = geom::add(&grad[i], &geom::scale(&u, 0.5 / np));
    }
    for (j, (i, d)) in nearest_in(target, pred)?.into_iter().enumerate() {
        bwd += d;
        let u = geom::unit_diff(&pred[i], &target[j]);
        grad[i] = geom::add(&grad[i], &geom::scale(&u, 0.5 / nt));
    }
    Ok((0.5 * (fwd / np + bwd / nt), grad))
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Shortest augmenting paths with row and column potentials, O(n^3).
pub fn assignment(cost: &Matrix) -> Result<Matching> {
    let n = cost.rows();
    if cost.cols() != n {
        return invalid(format!("cost matrix must be square, got {}x{}", n, cost.cols()));
    }
    if !cost.is_finite() {
        return invalid("cost matrix has non-finite entries");
    }
    if n == 0 {
        return Ok(Matching { pairs: Vec::new(), total_cost: 0.0 });
    }
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            let crow = cost.row(i0 - 1);
            for j in 1..=n {
                if !used[j] {
                    let cur = crow[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=n {
        col_of_row[row_of[j] - 1] = j - 1;
    }
    let pairs: Vec<(usize, usize)> = col_of_row.iter().enumerate().map(|(i, &j)| (i, j)).collect();
    let total_cost = pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    Ok(Matching { pairs, total_cost })
}

/// Pairwise Euclidean distance matrix.
pub fn distance_matrix(a: &[Point3], b: &[Point3]) -> Matrix {
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            m.set(i, j, geom::dist(p, q));
        }
    }
    m
}

/// Earth mover's distance between equal-size sets with the optimal matching.
pub fn emd(a: &[Point3], b: &[Point3]) -> Result<(f64, Matching)> {
    nonempty("first set", a)?;
    nonempty("second set", b)?;
    if a.len() != b.len() {
        return invalid(format!("EMD needs equal sizes, got {} and {}", a.len(), b.len()));
    }
    let m = assignment(&distance_matrix(a, b))?;
    Ok((m.total_cost, m))
}

/// Sum of distances `pred[i] -> target[targets[i]]` and its gradient in `pred`.
pub fn matched_distance_with_grad(
    pred: &[Point3],
    target: &[Point3],
    targets: &[usize],
) -> Result<(f64, Vec<Point3>)> {
    if pred.len() != targets.len() {
        return invalid("matching size differs from prediction size");
    }
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, &t) in pred.iter().zip(targets) {
        let Some(q) = target.get(t) else {
            return invalid(format!("matched index {t} out of range"));
        };
        total += geom::dist(p, q);
        grad.push(geom::unit_diff(p, q));
    }
    Ok((total, grad))
}

/// EMD with the bijection computed between `init` and `target` and applied
/// to `pred`, where `pred[i]` is the displaced version of `init[i]`.
pub fn emd_star(pred: &[Point3], init: &[Point3], target: &[Point3]) -> Result<f64> {
    if pred.len() != init.len() || init.len() != target.len() {
        return invalid(format!(
            "EMD* needs equal sizes, got {}, {} and {}",
            pred.len(),
            init.len(),
            target.len()
        ));
    }
    nonempty("prediction", pred)?;
    let (_, m) = emd(init, target)?;
    Ok(matched_distance_with_grad(pred, target, &m.targets())?.0)
}

/// Init-to-target matchings keyed by sample id.
///
/// Filled before a training run (single writer) and read during it.
#[derive(Debug, Default, Clone)]
pub struct MatchingCache {
    entries: HashMap<usize, Matching>,
}

impl MatchingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_compute(&mut self, key: usize, init: &[Point3], target: &[Point3]) -> Result<&Matching> {
        if !self.entries.contains_key(&key) {
            let (_, m) = emd(init, target)?;
            self.entries.insert(key, m);
        }
        Ok(&self.entries[&key])
    }

    pub fn get(&self, key: usize) -> Option<&Matching> {
        self.entries.get(&key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegScores {
    pub shape_miou: f64,
    pub part_miou: f64,
    pub overall_acc: f64,
}

/// Segmentation scores over a set of shapes. Ground-truth `-1` points are
/// excluded from every tally.
///
/// Part mIoU averages per-part IoU from dataset-wide counts over parts that
/// occur at all; shape mIoU averages, per shape, the IoU of parts present in
/// its ground truth or prediction, then over shapes.
pub fn seg_scores(pred_labels: &[Vec<i32>], gt_labels: &[Vec<i32>], num_parts: usize) -> Result<SegScores> {
    if pred_labels.len() != gt_labels.len() {
        return invalid("prediction and ground truth shape counts differ");
    }
    if num_parts == 0 {
        return invalid("num_parts must be at least 1");
    }
    let mut inter = vec![0usize; num_parts];
    let mut union = vec![0usize; num_parts];
    let mut correct = 0usize;
    let mut labeled = 0usize;
    let mut shape_ious = Vec::new();
    for (pred, gt) in pred_labels.iter().zip(gt_labels) {
        if pred.len() != gt.len() {
            return invalid(format!("label length mismatch: {} vs {}", pred.len(), gt.len()));
        }
        let mut si = vec![0usize; num_parts];
        let mut su = vec![0usize; num_parts];
        for (&p, &g) in pred.iter().zip(gt) {
            if g < 0 {
                continue;
            }
            if g as usize >= num_parts || p < 0 || p as usize >= num_parts {
                return invalid(format!("label out of range 0..{num_parts}: pred {p}, gt {g}"));
            }
            let (p, g) = (p as usize, g as usize);
            labeled += 1;
            if p == g {
                correct += 1;
                si[g] += 1;
                su[g] += 1;
            } else {
                su[g] += 1;
                su[p] += 1;
            }
        }
        let present: Vec<f64> =
            (0..num_parts).filter(|&c| su[c] > 0).map(|c| si[c] as f64 / su[c] as f64).collect();
        if !present.is_empty() {
            shape_ious.push(present.iter().sum::<f64>() / present.len() as f64);
        }
        for c in 0..num_parts {
            inter[c] += si[c];
            union[c] += su[c];
        }
    }
    if labeled == 0 {
        return invalid("no labeled ground-truth points");
    }
    let part: Vec<f64> =
        (0..num_parts).filter(|&c| union[c] > 0).map(|c| inter[c] as f64 / union[c] as f64).collect();
    Ok(SegScores {
        shape_miou: shape_ious.iter().sum::<f64>() / shape_ious.len() as f64,
        part_miou: part.iter().sum::<f64>() / part.len() as f64,
        overall_acc: correct as f64 / labeled as f64,
    })
}

/// Fraction of ground-truth keypoints with at least one prediction within `threshold`.
pub fn keypoint_ap(pred_points: &[Point3], gt_points: &[Point3], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return invalid(format!("threshold must be positive, got {threshold}"));
    }
    if gt_points.is_empty() {
        return invalid("no ground-truth keypoints");
    }
    if pred_points.is_empty() {
        return Ok(0.0);
    }
    let hits = nearest_in(gt_points, pred_points)?.iter().filter(|(_, d)| *d <= threshold).count();
    Ok(hits as f64 / gt_points.len() as f64)
}
