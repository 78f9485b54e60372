//! Differentiable snap of predicted points onto a cloud: a softmax over the
//! nearest cloud points weighted by `exp(-d^2 / t^2)`.

use crate::cloud::{knn_query, PointCloud};
use crate::error::{invalid, Result};
use crate::geom::{self, Point3};

#[derive(Debug, Clone)]
pub struct SoftProjCache {
    k: usize,
    idx: Vec<usize>,
    weights: Vec<f64>,
}

pub fn soft_project(pred: &[Point3], cloud: &PointCloud, proj_k: usize, temperature: f64) -> Result<Vec<Point3>> {
    Ok(soft_project_forward(pred, cloud, proj_k, temperature)?.0)
}

pub fn soft_project_forward(
    pred: &[Point3],
    cloud: &PointCloud,
    proj_k: usize,
    temperature: f64,
) -> Result<(Vec<Point3>, SoftProjCache)> {
    if proj_k < 1 {
        return invalid("proj_k must be at least 1");
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return invalid(format!("temperature must be positive, got {temperature}"));
    }
    let k = proj_k.min(cloud.len());
    let lists = knn_query(cloud, pred, k)?;
    let t2 = temperature * temperature;
    let mut out = Vec::with_capacity(pred.len());
    let mut idx = Vec::with_capacity(pred.len() * k);
    let mut weights = Vec::with_capacity(pred.len() * k);
    for list in &lists.lists {
        // the nearest neighbor has the largest logit
        let top = -list[0].distance * list[0].distance / t2;
        let e: Vec<f64> = list.iter().map(|n| (-n.distance * n.distance / t2 - top).exp()).collect();
        let z: f64 = e.iter().sum();
        let mut p = [0.0; 3];
        for (n, ei) in list.iter().zip(&e) {
            let s = ei / z;
            p = geom::add(&p, &geom::scale(cloud.point(n.index), s));
            idx.push(n.index);
            weights.push(s);
        }
        out.push(p);
    }
    Ok((out, SoftProjCache { k, idx, weights }))
}

/// Gradients with respect to the predictions and the temperature.
pub fn soft_project_backward(
    pred: &[Point3],
    cloud: &PointCloud,
    cache: &SoftProjCache,
    temperature: f64,
    dout: &[Point3],
) -> (Vec<Point3>, f64) {
    let k = cache.k;
    let t2 = temperature * temperature;
    let t3 = t2 * temperature;
    let mut dpred = vec![[0.0; 3]; pred.len()];
    let mut dt = 0.0;
    for (i, p) in pred.iter().enumerate() {
        let ids = &cache.idx[i * k..(i + 1) * k];
        let s = &cache.weights[i * k..(i + 1) * k];
        let gx: Vec<f64> = ids.iter().map(|&j| geom::dot(&dout[i], cloud.point(j))).collect();
        let mean: f64 = s.iter().zip(&gx).map(|(a, b)| a * b).sum();
        for (j, &c) in ids.iter().enumerate() {
            let da = s[j] * (gx[j] - mean);
            let diff = geom::sub(p, cloud.point(c));
            dpred[i] = geom::add(&dpred[i], &geom::scale(&diff, -2.0 * da / t2));
            dt += da * 2.0 * geom::dot(&diff, &diff) / t3;
        }
    }
    (dpred, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect()).unwrap()
    }

    #[test]
    fn cold_limit_is_nearest_point() {
        let c = cloud(200, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred: Vec<Point3> = (0..20).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let out = soft_project(&pred, &c, 8, 1e-4).unwrap();
        for (p, o) in pred.iter().zip(&out) {
            let nn = c.nearest(p, 1)[0].index;
            assert!(geom::dist(o, c.point(nn)) < 1e-6);
        }
    }

    #[test]
    fn coincident_single_neighbor_is_exact() {
        let c = cloud(50, 3);
        let pred = vec![*c.point(7)];
        assert_eq!(soft_project(&pred, &c, 1, 0.5).unwrap(), pred);
        assert!(soft_project(&pred, &c, 0, 0.5).is_err());
        assert!(soft_project(&pred, &c, 4, 0.0).is_err());
    }

    #[test]
    fn output_is_convex_combination() {
        let c = cloud(100, 4);
        let pred = vec![[0.3, 0.6, 0.2], [2.0, 2.0, 2.0]];
        let (out, cache) = soft_project_forward(&pred, &c, 8, 0.2).unwrap();
        for (i, o) in out.iter().enumerate() {
            let ids = &cache.idx[i * 8..(i + 1) * 8];
            for a in 0..3 {
                let lo = ids.iter().map(|&j| c.point(j)[a]).fold(f64::INFINITY, f64::min);
                let hi = ids.iter().map(|&j| c.point(j)[a]).fold(f64::NEG_INFINITY, f64::max);
                assert!(o[a] >= lo - 1e-12 && o[a] <= hi + 1e-12);
            }
            let wsum: f64 = cache.weights[i * 8..(i + 1) * 8].iter().sum();
            assert!((wsum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let c = cloud(80, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred: Vec<Point3> = (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let probe: Vec<Point3> = (0..10).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let t = 0.3;
        let loss = |p: &[Point3], t: f64| -> f64 {
            soft_project(p, &c, 6, t).unwrap().iter().zip(&probe).map(|(a, b)| geom::dot(a, b)).sum()
        };
        let (_, cache) = soft_project_forward(&pred, &c, 6, t).unwrap();
        let (dpred, dt) = soft_project_backward(&pred, &c, &cache, t, &probe);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
        for i in 0..10 {
            for a in 0..3 {
                let mut p = pred.clone();
                p[i][a] += h;
                let up = loss(&p, t);
                p[i][a] -= 2.0 * h;
                let fd = (up - loss(&p, t)) / (2.0 * h);
                assert!(rel(dpred[i][a], fd) < 1e-4, "{} vs {fd}", dpred[i][a]);
            }
        }
        let fd = (loss(&pred, t + h) - loss(&pred, t - h)) / (2.0 * h);
        assert!(rel(dt, fd) < 1e-4, "{dt} vs {fd}");
    }
}
