//! Building blocks with explicit backward passes: dense layers, shared MLPs,
//! grouped max-pool aggregation and inverse-distance interpolation.

use rand::Rng;

use super::params::{ParamSet, TensorId};
use crate::cloud::{knn_query, PointCloud, IDW_DELTA};
use crate::error::{invalid, Result};
use crate::geom::{self, Point3};
use crate::matrix::Matrix;

/// `y = x W^T + b`, with `W` stored as `out x in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: TensorId,
    pub bias: TensorId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Result<Self> {
        let weight = ps.add_xavier(&format!("{name}.weight"), fan_out, fan_in, rng)?;
        let bias = ps.add_zeros(&format!("{name}.bias"), &[fan_out])?;
        Ok(Self { weight, bias, fan_in, fan_out })
    }

    pub fn zeros(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        let weight = ps.add_zeros(&format!("{name}.weight"), &[fan_out, fan_in])?;
        let bias = ps.add_zeros(&format!("{name}.bias"), &[fan_out])?;
        Ok(Self { weight, bias, fan_in, fan_out })
    }

    pub fn forward(&self, ps: &ParamSet, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols(), self.fan_in);
        let w = ps.get(self.weight);
        let b = ps.get(self.bias);
        let mut y = Matrix::zeros(x.rows(), self.fan_out);
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, yo) in y.row_mut(r).iter_mut().enumerate() {
                let wo = &w[o * self.fan_in..(o + 1) * self.fan_in];
                *yo = b[o] + wo.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, ps: &ParamSet, grads: &mut [f64], x: &Matrix, dy: &Matrix) -> Matrix {
        let w = ps.get(self.weight);
        let wr = ps.range(self.weight);
        let br = ps.range(self.bias);
        let mut dx = Matrix::zeros(x.rows(), self.fan_in);
        for r in 0..x.rows() {
            let xr = x.row(r);
            let dyr = dy.row(r);
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads[br.start + o] += g;
                let gw = &mut grads[wr.start + o * self.fan_in..wr.start + (o + 1) * self.fan_in];
                for (gwi, xi) in gw.iter_mut().zip(xr) {
                    *gwi += g * xi;
                }
                let wo = &w[o * self.fan_in..(o + 1) * self.fan_in];
                for (dxi, wi) in dx.row_mut(r).iter_mut().zip(wo) {
                    *dxi += g * wi;
                }
            }
        }
        dx
    }
}

/// Stack of dense layers, each followed by ReLU, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedMlp {
    pub layers: Vec<Linear>,
}

/// Inputs of every layer plus the final activations.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("non-empty cache")
    }
}

impl SharedMlp {
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(ps, &format!("{name}.{i}"), fan_in, w, rng)?);
            fan_in = w;
        }
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }

    pub fn forward(&self, ps: &ParamSet, x: Matrix) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for layer in &self.layers {
            let mut y = layer.forward(ps, acts.last().unwrap());
            for v in y.as_mut_slice() {
                *v = v.max(0.0);
            }
            acts.push(y);
        }
        MlpCache { acts }
    }

    pub fn backward(&self, ps: &ParamSet, grads: &mut [f64], cache: &MlpCache, dy: Matrix) -> Matrix {
        let mut d = dy;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.acts[i + 1];
            for (g, &y) in d.as_mut_slice().iter_mut().zip(out.as_slice()) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
            d = layer.backward(ps, grads, &cache.acts[i], &d);
        }
        d
    }
}

/// `k` neighbor indices (into a source set) for each of `m` centroids, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub k: usize,
    pub idx: Vec<usize>,
}

impl Grouping {
    /// The `k` nearest sources of each centroid (fewer sources: `k` shrinks).
    pub fn knn(sources: &[Point3], centroids: &[Point3], k: usize) -> Result<Self> {
        let cloud = PointCloud::new(sources.to_vec())?;
        let k = k.min(sources.len());
        let lists = knn_query(&cloud, centroids, k)?;
        let idx = lists.lists.iter().flat_map(|l| l.iter().map(|n| n.index)).collect();
        Ok(Self { k, idx })
    }

    pub fn centroids(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.idx.len() / self.k
        }
    }

    pub fn neighbors(&self, c: usize) -> &[usize] {
        &self.idx[c * self.k..(c + 1) * self.k]
    }
}

#[derive(Debug, Clone)]
pub struct GroupCache {
    mlp: MlpCache,
    argmax: Vec<usize>,
}

/// Per-centroid PointNet: `[source - centroid, source features]` through a
/// shared MLP, max-pooled over the group.
pub fn group_forward(
    ps: &ParamSet,
    mlp: &SharedMlp,
    grouping: &Grouping,
    centroids: &[Point3],
    sources: &[Point3],
    feats: Option<&Matrix>,
) -> Result<(Matrix, GroupCache)> {
    let m = centroids.len();
    let k = grouping.k;
    let c = feats.map_or(0, Matrix::cols);
    if grouping.centroids() != m || k == 0 {
        return invalid(format!("grouping has {} groups for {m} centroids", grouping.centroids()));
    }
    if mlp.input_width() != 3 + c {
        return invalid(format!("MLP expects {} inputs, groups carry {}", mlp.input_width(), 3 + c));
    }
    if feats.is_some_and(|f| f.rows() != sources.len()) {
        return invalid("source feature rows differ from source count");
    }
    let mut x = Matrix::zeros(m * k, 3 + c);
    for i in 0..m {
        for (j, &s) in grouping.neighbors(i).iter().enumerate() {
            let row = x.row_mut(i * k + j);
            let rel = geom::sub(&sources[s], &centroids[i]);
            row[..3].copy_from_slice(&rel);
            if let Some(f) = feats {
                row[3..].copy_from_slice(f.row(s));
            }
        }
    }
    let cache = mlp.forward(ps, x);
    let (pooled, argmax) = max_pool(cache.output(), m, k);
    Ok((pooled, GroupCache { mlp: cache, argmax }))
}

/// Max over consecutive blocks of `k` rows; ties keep the first row.
fn max_pool(y: &Matrix, m: usize, k: usize) -> (Matrix, Vec<usize>) {
    let w = y.cols();
    let mut out = Matrix::zeros(m, w);
    let mut argmax = vec![0usize; m * w];
    for i in 0..m {
        for ch in 0..w {
            let mut best = i * k;
            for r in i * k + 1..(i + 1) * k {
                if y.get(r, ch) > y.get(best, ch) {
                    best = r;
                }
            }
            out.set(i, ch, y.get(best, ch));
            argmax[i * w + ch] = best;
        }
    }
    (out, argmax)
}

/// Backward of [`group_forward`]. Position and feature gradients are added to
/// whichever targets are supplied.
#[allow(clippy::too_many_arguments)]
pub fn group_backward(
    ps: &ParamSet,
    grads: &mut [f64],
    mlp: &SharedMlp,
    grouping: &Grouping,
    cache: &GroupCache,
    dout: &Matrix,
    dcentroids: Option<&mut [Point3]>,
    dsources: Option<&mut [Point3]>,
    dfeats: Option<&mut Matrix>,
) {
    let k = grouping.k;
    let m = grouping.centroids();
    let w = dout.cols();
    let mut dy = Matrix::zeros(m * k, w);
    for i in 0..m {
        for ch in 0..w {
            let g = dout.get(i, ch);
            if g != 0.0 {
                let r = cache.argmax[i * w + ch];
                dy.set(r, ch, dy.get(r, ch) + g);
            }
        }
    }
    let dx = mlp.backward(ps, grads, &cache.mlp, dy);
    let mut dcentroids = dcentroids;
    let mut dsources = dsources;
    let mut dfeats = dfeats;
    for i in 0..m {
        for (j, &s) in grouping.neighbors(i).iter().enumerate() {
            let row = dx.row(i * k + j);
            let drel = [row[0], row[1], row[2]];
            if let Some(dc) = dcentroids.as_deref_mut() {
                dc[i] = geom::sub(&dc[i], &drel);
            }
            if let Some(ds) = dsources.as_deref_mut() {
                ds[s] = geom::add(&ds[s], &drel);
            }
            if let Some(df) = dfeats.as_deref_mut() {
                for (a, b) in df.row_mut(s).iter_mut().zip(&row[3..]) {
                    *a += b;
                }
            }
        }
    }
}

/// Single-centroid aggregation over explicit neighbor rows.
pub fn pointnet_aggregate(
    ps: &ParamSet,
    mlp: &SharedMlp,
    relative_coords: &Matrix,
    neighbor_features: Option<&Matrix>,
) -> Result<Vec<f64>> {
    let k = relative_coords.rows();
    if k == 0 || relative_coords.cols() != 3 {
        return invalid("relative coordinates must be a non-empty k x 3 matrix");
    }
    let x = match neighbor_features {
        Some(f) if f.rows() != k => return invalid("feature rows differ from neighbor count"),
        Some(f) => relative_coords.hcat(f)?,
        None => relative_coords.clone(),
    };
    if x.cols() != mlp.input_width() {
        return invalid(format!("MLP expects {} inputs, got {}", mlp.input_width(), x.cols()));
    }
    let cache = mlp.forward(ps, x);
    Ok(max_pool(cache.output(), 1, k).0.into_vec())
}

/// Inverse-distance interpolation neighbors: `k` coarse indices per fine point.
pub type Interp = Grouping;

/// Weighted mean of coarse features with weights `1 / (d + IDW_DELTA)`; a fine
/// point within `IDW_DELTA` of its nearest coarse point copies that row.
pub fn idw_forward(fine: &[Point3], coarse: &[Point3], interp: &Interp, feats: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(fine.len(), feats.cols());
    for (i, p) in fine.iter().enumerate() {
        let nb = interp.neighbors(i);
        let row = out.row_mut(i);
        if geom::dist(p, &coarse[nb[0]]) < IDW_DELTA {
            row.copy_from_slice(feats.row(nb[0]));
            continue;
        }
        let mut wsum = 0.0;
        for &q in nb {
            let w = 1.0 / (geom::dist(p, &coarse[q]) + IDW_DELTA);
            wsum += w;
            for (o, f) in row.iter_mut().zip(feats.row(q)) {
                *o += w * f;
            }
        }
        for o in row.iter_mut() {
            *o /= wsum;
        }
    }
    out
}

/// Backward of [`idw_forward`] with respect to coarse features and, when
/// requested, both point sets.
#[allow(clippy::too_many_arguments)]
pub fn idw_backward(
    fine: &[Point3],
    coarse: &[Point3],
    interp: &Interp,
    feats: &Matrix,
    out: &Matrix,
    dout: &Matrix,
    dfeats: &mut Matrix,
    mut dfine: Option<&mut [Point3]>,
    mut dcoarse: Option<&mut [Point3]>,
) {
    for (i, p) in fine.iter().enumerate() {
        let nb = interp.neighbors(i);
        let g = dout.row(i);
        if geom::dist(p, &coarse[nb[0]]) < IDW_DELTA {
            for (a, b) in dfeats.row_mut(nb[0]).iter_mut().zip(g) {
                *a += b;
            }
            continue;
        }
        let dists: Vec<f64> = nb.iter().map(|&q| geom::dist(p, &coarse[q])).collect();
        let ws: Vec<f64> = dists.iter().map(|d| 1.0 / (d + IDW_DELTA)).collect();
        let wsum: f64 = ws.iter().sum();
        let o = out.row(i);
        for (j, &q) in nb.iter().enumerate() {
            let a = ws[j] / wsum;
            for (df, gv) in dfeats.row_mut(q).iter_mut().zip(g) {
                *df += a * gv;
            }
            if dfine.is_none() && dcoarse.is_none() {
                continue;
            }
            let dw: f64 = g.iter().zip(feats.row(q)).zip(o).map(|((gv, f), ov)| gv * (f - ov)).sum::<f64>() / wsum;
            let s = dw * -(ws[j] * ws[j]);
            // d(dist)/dp = unit(p - q)
            let u = geom::unit_diff(p, &coarse[q]);
            if let Some(dp) = dfine.as_deref_mut() {
                dp[i] = geom::add(&dp[i], &geom::scale(&u, s));
            }
            if let Some(dq) = dcoarse.as_deref_mut() {
                dq[q] = geom::sub(&dq[q], &geom::scale(&u, s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn rand_points(n: usize, rng: &mut impl Rng) -> Vec<Point3> {
        (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()
    }

    fn weighted_sum(m: &Matrix, w: &Matrix) -> f64 {
        m.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    const H: f64 = 1e-5;

    #[test]
    fn linear_forward_matches_formula() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(&mut ps, "l", 3, 2, &mut rng).unwrap();
        ps.get_mut(l.bias).copy_from_slice(&[0.5, -0.5]);
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        let y = l.forward(&ps, &x);
        let w = ps.get(l.weight);
        assert!((y.get(0, 0) - (0.5 + w[0] + 2.0 * w[1] + 3.0 * w[2])).abs() < 1e-15);
        assert!((y.get(0, 1) - (-0.5 + w[3] + 2.0 * w[4] + 3.0 * w[5])).abs() < 1e-15);
    }

    #[test]
    fn aggregate_singleton_and_duplicate_rows() {
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = SharedMlp::new(&mut ps, "m", 5, &[8, 6], &mut rng).unwrap();
        let rel = rand_matrix(1, 3, &mut rng);
        let f = rand_matrix(1, 2, &mut rng);
        let single = pointnet_aggregate(&ps, &mlp, &rel, Some(&f)).unwrap();
        let direct = mlp.forward(&ps, rel.hcat(&f).unwrap());
        assert_eq!(single, direct.output().row(0));

        let rel = rand_matrix(4, 3, &mut rng);
        let f = rand_matrix(4, 2, &mut rng);
        let base = pointnet_aggregate(&ps, &mlp, &rel, Some(&f)).unwrap();
        let dup_rel = Matrix::from_rows(&[rel.row(0), rel.row(1), rel.row(2), rel.row(3), rel.row(1)]).unwrap();
        let dup_f = Matrix::from_rows(&[f.row(0), f.row(1), f.row(2), f.row(3), f.row(1)]).unwrap();
        assert_eq!(pointnet_aggregate(&ps, &mlp, &dup_rel, Some(&dup_f)).unwrap(), base);
        assert!(pointnet_aggregate(&ps, &mlp, &rel, None).is_err());
        assert!(pointnet_aggregate(&ps, &mlp, &Matrix::zeros(0, 3), Some(&Matrix::zeros(0, 2))).is_err());
    }

    #[test]
    fn group_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::new();
        let mlp = SharedMlp::new(&mut ps, "m", 5, &[7, 6], &mut rng).unwrap();
        for v in ps.values_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
        let sources = rand_points(20, &mut rng);
        let centroids = rand_points(5, &mut rng);
        let feats = rand_matrix(20, 2, &mut rng);
        let grouping = Grouping::knn(&sources, &centroids, 4).unwrap();
        let probe = rand_matrix(5, 6, &mut rng);
        let loss = |ps: &ParamSet, c: &[Point3], s: &[Point3], f: &Matrix| {
            let (y, _) = group_forward(ps, &mlp, &grouping, c, s, Some(f)).unwrap();
            weighted_sum(&y, &probe)
        };
        let (_, cache) = group_forward(&ps, &mlp, &grouping, &centroids, &sources, Some(&feats)).unwrap();
        let mut grads = ps.grad_buffer();
        let mut dc = vec![[0.0; 3]; 5];
        let mut ds = vec![[0.0; 3]; 20];
        let mut df = Matrix::zeros(20, 2);
        group_backward(&ps, &mut grads, &mlp, &grouping, &cache, &probe, Some(&mut dc), Some(&mut ds), Some(&mut df));

        let mut worst = 0.0f64;
        for i in 0..ps.len() {
            let mut p = ps.clone();
            p.values_mut()[i] += H;
            let up = loss(&p, &centroids, &sources, &feats);
            p.values_mut()[i] -= 2.0 * H;
            let down = loss(&p, &centroids, &sources, &feats);
            worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * H)));
        }
        for i in 0..5 {
            for a in 0..3 {
                let mut c = centroids.clone();
                c[i][a] += H;
                let up = loss(&ps, &c, &sources, &feats);
                c[i][a] -= 2.0 * H;
                let down = loss(&ps, &c, &sources, &feats);
                worst = worst.max(rel_err(dc[i][a], (up - down) / (2.0 * H)));
            }
        }
        for i in 0..20 {
            for a in 0..3 {
                let mut s = sources.clone();
                s[i][a] += H;
                let up = loss(&ps, &centroids, &s, &feats);
                s[i][a] -= 2.0 * H;
                let down = loss(&ps, &centroids, &s, &feats);
                worst = worst.max(rel_err(ds[i][a], (up - down) / (2.0 * H)));
            }
            for a in 0..2 {
                let mut f = feats.clone();
                f.set(i, a, f.get(i, a) + H);
                let up = loss(&ps, &centroids, &sources, &f);
                f.set(i, a, f.get(i, a) - 2.0 * H);
                let down = loss(&ps, &centroids, &sources, &f);
                worst = worst.max(rel_err(df.get(i, a), (up - down) / (2.0 * H)));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn max_pool_routes_only_to_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamSet::new();
        let mlp = SharedMlp::new(&mut ps, "m", 3, &[4], &mut rng).unwrap();
        let sources = rand_points(6, &mut rng);
        let centroids = vec![[0.5; 3]];
        let grouping = Grouping::knn(&sources, &centroids, 6).unwrap();
        let (y, cache) = group_forward(&ps, &mlp, &grouping, &centroids, &sources, None).unwrap();
        let mut ds = vec![[0.0; 3]; 6];
        let mut grads = ps.grad_buffer();
        let ones = Matrix::from_vec(1, 4, vec![1.0; 4]).unwrap();
        group_backward(&ps, &mut grads, &mlp, &grouping, &cache, &ones, None, Some(&mut ds), None);
        let winners: std::collections::HashSet<usize> =
            cache.argmax.iter().map(|&r| grouping.idx[r]).collect();
        for s in 0..6 {
            if !winners.contains(&s) {
                assert_eq!(ds[s], [0.0; 3]);
                let mut moved = sources.clone();
                moved[s][0] += 1e-9;
                let (y2, _) = group_forward(&ps, &mlp, &grouping, &centroids, &moved, None).unwrap();
                assert_eq!(y2, y);
            }
        }
    }

    #[test]
    fn idw_matches_library_interpolation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coarse = rand_points(10, &mut rng);
        let mut fine = rand_points(30, &mut rng);
        fine.push(coarse[2]);
        let feats = rand_matrix(10, 4, &mut rng);
        let interp = Interp::knn(&coarse, &fine, 3).unwrap();
        let ours = idw_forward(&fine, &coarse, &interp, &feats);
        let cloud = PointCloud::new(coarse.clone()).unwrap().with_features(feats.clone()).unwrap();
        let lib = crate::cloud::interpolate_features(&cloud, &fine, 3).unwrap();
        for (a, b) in ours.as_slice().iter().zip(lib.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(ours.row(30), feats.row(2));
    }

    #[test]
    fn idw_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let coarse = rand_points(8, &mut rng);
        let fine = rand_points(12, &mut rng);
        let feats = rand_matrix(8, 3, &mut rng);
        let interp = Interp::knn(&coarse, &fine, 3).unwrap();
        let probe = rand_matrix(12, 3, &mut rng);
        let loss = |f: &[Point3], c: &[Point3], x: &Matrix| weighted_sum(&idw_forward(f, c, &interp, x), &probe);
        let out = idw_forward(&fine, &coarse, &interp, &feats);
        let mut dfeats = Matrix::zeros(8, 3);
        let mut dfine = vec![[0.0; 3]; 12];
        let mut dcoarse = vec![[0.0; 3]; 8];
        idw_backward(&fine, &coarse, &interp, &feats, &out, &probe, &mut dfeats, Some(&mut dfine), Some(&mut dcoarse));
        let mut worst = 0.0f64;
        for i in 0..12 {
            for a in 0..3 {
                let mut f = fine.clone();
                f[i][a] += H;
                let up = loss(&f, &coarse, &feats);
                f[i][a] -= 2.0 * H;
                let down = loss(&f, &coarse, &feats);
                worst = worst.max(rel_err(dfine[i][a], (up - down) / (2.0 * H)));
            }
        }
        for i in 0..8 {
            for a in 0..3 {
                let mut c = coarse.clone();
                c[i][a] += H;
                let up = loss(&fine, &c, &feats);
                c[i][a] -= 2.0 * H;
                let down = loss(&fine, &c, &feats);
                worst = worst.max(rel_err(dcoarse[i][a], (up - down) / (2.0 * H)));
                let mut x = feats.clone();
                x.set(i, a, x.get(i, a) + H);
                let up = loss(&fine, &coarse, &x);
                x.set(i, a, x.get(i, a) - 2.0 * H);
                let down = loss(&fine, &coarse, &x);
                worst = worst.max(rel_err(dfeats.get(i, a), (up - down) / (2.0 * H)));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
