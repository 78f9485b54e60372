//! Displacement network: a small two-level point encoder with hand-written
//! backward passes, soft projection, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod net;
pub mod params;
pub mod softproj;

pub use gradcheck::{grad_check, GradCheckReport, GradProbe};
pub use layers::pointnet_aggregate;
pub use net::{displacement_forward, DispGraph, DispMode, DispNet, DispNetConfig, DispNetParams, DispOutput};
pub use params::{ParamSet, TensorId};
pub use softproj::soft_project;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::datagen::{gen_split_plane, ShapeKind, SyntheticSpec};
    use crate::error::Result;
    use crate::geom::Point3;
    use crate::metrics::{chamfer_with_grad, emd, matched_distance_with_grad};
    use crate::sampling::{fps, SampleResult};
    use crate::task_aware::{edge_fps, TaskAwareConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, m: usize) -> (PointCloud, SampleResult) {
        let cloud = gen_split_plane(&SyntheticSpec::new(ShapeKind::SplitPlane, n, 2, 0.01, 3)).unwrap();
        let init = fps(&cloud, m, 0).unwrap();
        (cloud, init)
    }

    fn randomize(ps: &mut ParamSet, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in ps.values_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }

    #[test]
    fn zero_head_offset_is_identity() {
        let (cloud, init) = setup(400, 32);
        let p = DispNetParams::new(DispNetConfig::default(), 1).unwrap();
        let out = displacement_forward(&cloud, &init, &p, DispMode::Offset).unwrap();
        assert_eq!(out, init.coordinates);
        let out = displacement_forward(&cloud, &init, &p, DispMode::Coordinate).unwrap();
        assert!(out.iter().all(|q| *q == [0.0; 3]));
    }

    #[test]
    fn rejects_foreign_init() {
        let (cloud, _) = setup(200, 16);
        let p = DispNetParams::new(DispNetConfig::default(), 1).unwrap();
        let bogus = SampleResult::synthesized(vec![[5.0, 5.0, 5.0]]);
        assert!(displacement_forward(&cloud, &bogus, &p, DispMode::Offset).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let (cloud, init) = setup(300, 24);
        let mut p = DispNetParams::new(DispNetConfig::default(), 9).unwrap();
        randomize(&mut p.params, 2);
        for mode in [DispMode::Offset, DispMode::Coordinate, DispMode::CoordinateSoftProjected] {
            let a = displacement_forward(&cloud, &init, &p, mode).unwrap();
            let b = displacement_forward(&cloud, &init, &p, mode).unwrap();
            assert_eq!(a, b);
        }
    }

    /// Full-network gradient of a displacement loss versus finite differences.
    fn check(mode: DispMode, loss_kind: &str, seed: u64) -> f64 {
        let (cloud, init) = setup(300, 24);
        let target = edge_fps(&cloud, 24, &TaskAwareConfig::segmentation()).unwrap().coordinates;
        // at t = 1 the projection is nearly flat and its gradients drown in
        // finite-difference roundoff; a point-spacing temperature is well conditioned
        let cfg = DispNetConfig { init_temperature: 0.1, ..DispNetConfig::default() };
        let mut p = DispNetParams::new(cfg, seed).unwrap();
        randomize(&mut p.params, seed + 100);
        let graph = DispGraph::build(cloud.points(), &init.coordinates, p.net.cfg.k).unwrap();
        let targets = emd(&init.coordinates, &target).unwrap().1.targets();
        let loss_grad = |pred: &[Point3]| -> Result<(f64, Vec<Point3>)> {
            match loss_kind {
                "cd" => chamfer_with_grad(pred, &target),
                _ => matched_distance_with_grad(pred, &target, &targets),
            }
        };
        let out = p.net.forward(&p.params, &graph, &cloud, &init.coordinates, mode).unwrap();
        let (_, dpred) = loss_grad(&out.points).unwrap();
        let mut grads = p.params.grad_buffer();
        p.net.backward(&p.params, &mut grads, &graph, &cloud, &init.coordinates, &out, &dpred);
        let report = grad_check(
            &p.params,
            &grads,
            |ps| {
                let o = p.net.forward(ps, &graph, &cloud, &init.coordinates, mode)?;
                Ok(loss_grad(&o.points)?.0)
            },
            50,
            seed,
        )
        .unwrap();
        report.max_rel_error
    }

    #[test]
    fn full_network_gradients_match_finite_differences() {
        for (mode, loss) in [
            (DispMode::Offset, "emd-star"),
            (DispMode::Offset, "cd"),
            (DispMode::Coordinate, "emd-star"),
            (DispMode::CoordinateSoftProjected, "emd-star"),
        ] {
            let err = check(mode, loss, 5);
            assert!(err < 1e-4, "{mode:?}/{loss}: {err}");
        }
    }
}
