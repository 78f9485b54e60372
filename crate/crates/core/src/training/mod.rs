//! Joint training of the displacement sampler with small task networks.

pub mod config;
pub mod losses;
pub mod optim;
pub mod report;
pub mod task_net;
mod trainer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

pub use config::{
    alpha_at, joint_loss, DispLoss, InitPoints, OptimizerKind, SamplerKind, Strategy, Supervision, TaskKind,
    TrainConfig,
};
pub use report::{EpochRecord, TrainReport, CSV_HEADER};
pub use trainer::{train, Evaluation, Prediction, TrainSample, Trainer};

use crate::cloud::PointCloud;
use crate::datagen::{gen_keypoint_shape, gen_multipart, gen_partial_complete, gen_split_plane, ShapeKind, SyntheticSpec};
use crate::error::{invalid, Result};
use crate::geom::Point3;
use crate::sampling::SampleResult;
use crate::task_aware::{detect_boundary, masked_fps, BoundaryMask, TaskAwareConfig};

/// Edge-FPS on a boundary mask whose flags were each flipped with
/// probability `flip_rate`.
pub fn noisy_edge_init(
    cloud: &PointCloud,
    m: usize,
    cfg: &TaskAwareConfig,
    flip_rate: f64,
    seed: u64,
) -> Result<SampleResult> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return invalid(format!("flip rate {flip_rate} outside [0, 1]"));
    }
    let mask = detect_boundary(cloud, cfg.resolve_epsilon(cloud)?)?;
    masked_fps(cloud, &flip_mask(&mask, flip_rate, seed), m, cfg)
}

/// Flips each flag independently with probability `flip_rate`.
pub fn flip_mask(mask: &BoundaryMask, flip_rate: f64, seed: u64) -> BoundaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = flip_rate.clamp(0.0, 1.0);
    BoundaryMask::new(mask.flags.iter().map(|&f| if rng.random_bool(p) { !f } else { f }).collect())
}

/// Seeded unit viewing direction for partial scans.
pub fn synthetic_view(seed: u64) -> Point3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_u64);
    UnitSphere.sample(&mut rng)
}

/// `count` generated samples; sample `i` uses seed `spec.seed + i`.
pub fn synthetic_dataset(spec: &SyntheticSpec, count: usize) -> Result<Vec<TrainSample>> {
    (0..count)
        .map(|i| {
            let s = SyntheticSpec { seed: spec.seed.wrapping_add(i as u64), ..*spec };
            Ok(match s.kind {
                ShapeKind::SplitPlane => TrainSample::labeled(gen_split_plane(&s)?),
                ShapeKind::MultiPart => TrainSample::labeled(gen_multipart(&s)?),
                ShapeKind::PartialComplete => {
                    let v = synthetic_view(s.seed);
                    let (partial, complete) = gen_partial_complete(&s, &v)?;
                    TrainSample::completion(partial, complete, v)
                }
                ShapeKind::KeypointShape => {
                    let (cloud, keys) = gen_keypoint_shape(&s)?;
                    TrainSample::keypoint(cloud, keys)
                }
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task_aware::edge_fps;

    fn plane(seed: u64) -> PointCloud {
        gen_split_plane(&SyntheticSpec::new(ShapeKind::SplitPlane, 1024, 2, 0.0, seed)).unwrap()
    }

    #[test]
    fn zero_flip_rate_is_edge_fps() {
        let c = plane(1);
        let cfg = TaskAwareConfig::segmentation();
        assert_eq!(noisy_edge_init(&c, 128, &cfg, 0.0, 9).unwrap(), edge_fps(&c, 128, &cfg).unwrap());
    }

    #[test]
    fn full_flip_rate_uses_complement() {
        let c = plane(2);
        let cfg = TaskAwareConfig::segmentation();
        let mask = detect_boundary(&c, cfg.resolve_epsilon(&c).unwrap()).unwrap();
        let expect = masked_fps(&c, &mask.complement(), 128, &cfg).unwrap();
        assert_eq!(noisy_edge_init(&c, 128, &cfg, 1.0, 3).unwrap(), expect);
    }

    #[test]
    fn flip_count_is_binomial() {
        let c = plane(4);
        let cfg = TaskAwareConfig::segmentation();
        let mask = detect_boundary(&c, cfg.resolve_epsilon(&c).unwrap()).unwrap();
        let p = 0.1;
        let n = mask.len() as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        for seed in 0..5 {
            let flipped = flip_mask(&mask, p, seed);
            let changed = flipped.flags.iter().zip(&mask.flags).filter(|(a, b)| a != b).count() as f64;
            assert!((changed - n * p).abs() < 3.0 * sd, "{changed}");
            let expect_flagged = mask.counts().0 as f64 * (1.0 - p) + mask.counts().1 as f64 * p;
            assert!((flipped.counts().0 as f64 - expect_flagged).abs() < 3.0 * sd);
        }
        let a = noisy_edge_init(&c, 64, &cfg, p, 11).unwrap();
        assert_eq!(a, noisy_edge_init(&c, 64, &cfg, p, 11).unwrap());
        assert!(noisy_edge_init(&c, 8, &cfg, 1.5, 0).is_err());
    }

    #[test]
    fn dataset_seeds_are_consecutive() {
        let spec = SyntheticSpec::new(ShapeKind::PartialComplete, 300, 1, 0.0, 10);
        let d = synthetic_dataset(&spec, 3).unwrap();
        assert_eq!(d.len(), 3);
        let again = synthetic_dataset(&SyntheticSpec { seed: 11, ..spec }, 2).unwrap();
        assert_eq!(d[1].cloud.points(), again[0].cloud.points());
        assert!(d.iter().all(|s| s.complete.is_some() && s.view.is_some()));
    }
}
