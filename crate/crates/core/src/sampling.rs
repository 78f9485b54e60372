//! Task-agnostic samplers: farthest point, random and voxel grid.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{invalid, Result};
use crate::geom::{self, Point3};

/// Sampled coordinates, with indices into the parent cloud when the points
/// were selected rather than synthesized.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub coordinates: Vec<Point3>,
    pub source_indices: Option<Vec<usize>>,
}

impl SampleResult {
    pub fn from_indices(cloud: &PointCloud, indices: Vec<usize>) -> Self {
        let coordinates = indices.iter().map(|&i| *cloud.point(i)).collect();
        Self { coordinates, source_indices: Some(indices) }
    }

    pub fn synthesized(coordinates: Vec<Point3>) -> Self {
        Self { coordinates, source_indices: None }
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn indices(&self) -> Option<&[usize]> {
        self.source_indices.as_deref()
    }

    /// Checks that this result is a genuine subset of `parent`.
    pub fn validate_subset(&self, parent: &PointCloud) -> Result<()> {
        let Some(idx) = &self.source_indices else {
            return invalid("sample has no source indices");
        };
        if idx.len() != self.coordinates.len() {
            return invalid("source index count differs from coordinate count");
        }
        let mut seen = vec![false; parent.len()];
        for (c, &i) in self.coordinates.iter().zip(idx) {
            if i >= parent.len() {
                return invalid(format!("source index {i} out of range"));
            }
            if seen[i] {
                return invalid(format!("source index {i} repeated"));
            }
            seen[i] = true;
            if c != parent.point(i) {
                return invalid(format!("coordinate of sample {i} differs from parent point"));
            }
        }
        Ok(())
    }
}

fn check_count(m: usize, n: usize) -> Result<()> {
    if m == 0 {
        return invalid("sample count must be at least 1");
    }
    if m > n {
        return invalid(format!("cannot sample {m} points from {n} without repetition"));
    }
    Ok(())
}

/// Greedy farthest point sampling over raw points.
///
/// Returns pick order. Ties on the max-min distance go to the lower index.
pub fn fps_indices(points: &[Point3], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    check_count(m, points.len())?;
    if seed_index >= points.len() {
        return invalid(format!("seed index {seed_index} out of range"));
    }
    let n = points.len();
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut picked = vec![false; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed_index;
    for _ in 0..m {
        out.push(current);
        picked[current] = true;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if picked[i] {
                continue;
            }
            let d = geom::dist2(p, &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

pub fn fps(cloud: &PointCloud, m: usize, seed_index: usize) -> Result<SampleResult> {
    let idx = fps_indices(cloud.points(), m, seed_index)?;
    Ok(SampleResult::from_indices(cloud, idx))
}

/// `m` distinct indices drawn without replacement from a seeded generator.
pub fn random_indices(n: usize, m: usize, rng_seed: u64) -> Result<Vec<usize>> {
    check_count(m, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok(rand::seq::index::sample(&mut rng, n, m).into_vec())
}

pub fn random_sample(cloud: &PointCloud, m: usize, rng_seed: u64) -> Result<SampleResult> {
    let idx = random_indices(cloud.len(), m, rng_seed)?;
    Ok(SampleResult::from_indices(cloud, idx))
}

/// Voxel key `floor(coord / cell_size)` per axis.
pub fn voxel_key(p: &Point3, cell_size: f64) -> [i64; 3] {
    [
        (p[0] / cell_size).floor() as i64,
        (p[1] / cell_size).floor() as i64,
        (p[2] / cell_size).floor() as i64,
    ]
}

/// One point per occupied voxel: the member nearest the voxel's point centroid.
///
/// Output is ordered by voxel key.
pub fn grid_sample(cloud: &PointCloud, cell_size: f64) -> Result<SampleResult> {
    if !(cell_size > 0.0) || !cell_size.is_finite() {
        return invalid(format!("cell size must be positive, got {cell_size}"));
    }
    let mut voxels: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        voxels.entry(voxel_key(p, cell_size)).or_default().push(i);
    }
    let mut picks = Vec::with_capacity(voxels.len());
    for members in voxels.values() {
        let mut centroid = [0.0; 3];
        for &i in members {
            centroid = geom::add(&centroid, cloud.point(i));
        }
        let n = members.len() as f64;
        let centroid = centroid.map(|v| v / n);
        let mut best = members[0];
        let mut best_d = f64::INFINITY;
        for &i in members {
            let d = geom::dist2(cloud.point(i), &centroid);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        picks.push(best);
    }
    Ok(SampleResult::from_indices(cloud, picks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap()
    }

    /// Reference greedy: every round rescans all candidates against every pick.
    fn fps_reference(points: &[Point3], m: usize, seed: usize) -> Vec<usize> {
        let mut picks = vec![seed];
        while picks.len() < m {
            let mut best = None;
            let mut best_d = f64::NEG_INFINITY;
            for i in 0..points.len() {
                if picks.contains(&i) {
                    continue;
                }
                let d = picks.iter().map(|&j| geom::dist2(&points[i], &points[j])).fold(f64::INFINITY, f64::min);
                if d > best_d {
                    best_d = d;
                    best = Some(i);
                }
            }
            picks.push(best.unwrap());
        }
        picks
    }

    #[test]
    fn fps_exhaustive_starts_at_seed() {
        let cloud = random_cloud(20, 1);
        let s = fps(&cloud, 20, 7).unwrap();
        let idx = s.indices().unwrap();
        assert_eq!(idx[0], 7);
        let mut sorted = idx.to_vec();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn fps_line_extremes() {
        let cloud = PointCloud::new((0..5).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        assert_eq!(fps(&cloud, 2, 0).unwrap().indices().unwrap(), &[0, 4]);
    }

    #[test]
    fn fps_matches_reference_greedy() {
        let cloud = random_cloud(64, 5);
        let got = fps(&cloud, 8, 0).unwrap();
        assert_eq!(got.indices().unwrap(), fps_reference(cloud.points(), 8, 0).as_slice());
    }

    #[test]
    fn fps_handles_duplicates_without_repeats() {
        let cloud = PointCloud::new(vec![[0.0; 3]; 6]).unwrap();
        let s = fps(&cloud, 6, 2).unwrap();
        assert_eq!(s.indices().unwrap(), &[2, 0, 1, 3, 4, 5]);
    }

    #[test]
    fn fps_rejects_bad_counts() {
        let cloud = random_cloud(5, 1);
        assert!(fps(&cloud, 6, 0).is_err());
        assert!(fps(&cloud, 0, 0).is_err());
        assert!(fps(&cloud, 2, 5).is_err());
    }

    #[test]
    fn fps_max_min_radii_are_monotone() {
        let cloud = random_cloud(100, 9);
        let idx = fps_indices(cloud.points(), 30, 0).unwrap();
        let radii: Vec<f64> = (1..idx.len())
            .map(|t| {
                idx[..t].iter().map(|&j| geom::dist2(cloud.point(idx[t]), cloud.point(j))).fold(f64::INFINITY, f64::min)
            })
            .collect();
        assert!(radii.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fps_invariant_under_rigid_motion() {
        let cloud = random_cloud(50, 4);
        let (s, c) = (0.6f64.sin(), 0.6f64.cos());
        let moved: Vec<Point3> = cloud
            .points()
            .iter()
            .map(|p| [c * p[0] - s * p[1] + 3.0, s * p[0] + c * p[1] - 1.0, p[2] + 0.5])
            .collect();
        let moved = PointCloud::new(moved).unwrap();
        assert_eq!(fps(&cloud, 12, 3).unwrap().source_indices, fps(&moved, 12, 3).unwrap().source_indices);
    }

    #[test]
    fn random_sample_is_seeded_permutation() {
        let cloud = random_cloud(15, 2);
        let a = random_sample(&cloud, 15, 42).unwrap();
        let b = random_sample(&cloud, 15, 42).unwrap();
        assert_eq!(a, b);
        let mut idx = a.source_indices.unwrap();
        idx.sort();
        assert_eq!(idx, (0..15).collect::<Vec<_>>());
        assert!(random_sample(&cloud, 16, 1).is_err());
    }

    #[test]
    fn random_sample_is_uniform() {
        let n = 4;
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for seed in 0..draws {
            counts[random_indices(n, 1, seed as u64).unwrap()[0]] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn grid_single_cell_and_one_per_cell() {
        let cloud = random_cloud(30, 3);
        assert_eq!(grid_sample(&cloud, 10.0).unwrap().len(), 1);

        let centers: Vec<Point3> = (0..3)
            .flat_map(|x| (0..3).map(move |y| [x as f64 + 0.5, y as f64 + 0.5, 0.5]))
            .collect();
        let cloud = PointCloud::new(centers).unwrap();
        assert_eq!(grid_sample(&cloud, 1.0).unwrap().len(), 9);
        assert!(grid_sample(&cloud, 0.0).is_err());
    }

    #[test]
    fn grid_matches_hash_grouping() {
        let cloud = random_cloud(300, 17);
        let cell = 0.23;
        let got = grid_sample(&cloud, cell).unwrap();
        let mut groups: Vec<([i64; 3], Vec<usize>)> = Vec::new();
        for (i, p) in cloud.points().iter().enumerate() {
            let key = [(p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64];
            match groups.iter_mut().find(|g| g.0 == key) {
                Some(g) => g.1.push(i),
                None => groups.push((key, vec![i])),
            }
        }
        groups.sort_by_key(|g| g.0);
        let want: Vec<usize> = groups
            .iter()
            .map(|(_, m)| {
                let n = m.len() as f64;
                let c = [0, 1, 2].map(|a| m.iter().map(|&i| cloud.point(i)[a]).sum::<f64>() / n);
                *m.iter()
                    .min_by(|&&a, &&b| {
                        geom::dist2(cloud.point(a), &c).partial_cmp(&geom::dist2(cloud.point(b), &c)).unwrap().then(a.cmp(&b))
                    })
                    .unwrap()
            })
            .collect();
        assert_eq!(got.source_indices.unwrap(), want);
    }

    #[test]
    fn samplers_return_subsets() {
        let cloud = random_cloud(80, 8);
        for s in [fps(&cloud, 10, 0).unwrap(), random_sample(&cloud, 10, 3).unwrap(), grid_sample(&cloud, 0.3).unwrap()] {
            s.validate_subset(&cloud).unwrap();
        }
    }
}
