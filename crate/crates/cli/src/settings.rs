//! Training settings from `key = value` files and command-line flags.

use std::fs;
use std::path::Path;

use tas_core::datagen::ShapeKind;
use tas_core::dispnet::DispMode;
use tas_core::training::{
    DispLoss, InitPoints, OptimizerKind, SamplerKind, Strategy, Supervision, TaskKind, TrainConfig,
};

use crate::error::{CliError, CliResult};

/// Where training clouds come from when no files are given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataOptions {
    pub shape: ShapeKind,
    pub n: usize,
    pub count: usize,
    pub seed: u64,
    pub parts: usize,
    pub noise: f64,
}

impl DataOptions {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Segmentation => {
                Self { shape: ShapeKind::SplitPlane, n: 2048, count: 4, seed: 0, parts: 2, noise: 0.0 }
            }
            TaskKind::Completion => {
                Self { shape: ShapeKind::PartialComplete, n: 1024, count: 4, seed: 0, parts: 1, noise: 0.0 }
            }
            TaskKind::Keypoint => {
                Self { shape: ShapeKind::KeypointShape, n: 1024, count: 4, seed: 0, parts: 1, noise: 0.0 }
            }
        }
    }
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected `key = value`", i + 1));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

pub fn read_config(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| CliError::usage(format!("{key}: cannot parse {v:?}")))
}

fn pick<T: Copy>(key: &str, v: &str, table: &[(&str, T)]) -> CliResult<T> {
    table.iter().find(|(name, _)| *name == v).map(|(_, t)| *t).ok_or_else(|| {
        let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
        CliError::usage(format!("{key}: expected one of {}, got {v:?}", names.join(", ")))
    })
}

pub fn parse_task(v: &str) -> CliResult<TaskKind> {
    pick(
        "task",
        v,
        &[
            ("segmentation", TaskKind::Segmentation),
            ("completion", TaskKind::Completion),
            ("keypoint", TaskKind::Keypoint),
        ],
    )
}

pub fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

/// Applies pairs in order, later ones winning. The task (last one given)
/// selects the defaults the other keys modify.
pub fn build(pairs: &[(String, String)]) -> CliResult<(TrainConfig, DataOptions)> {
    let task = match pairs.iter().rev().find(|(k, _)| normalize(k) == "task") {
        Some((_, v)) => parse_task(v)?,
        None => TaskKind::Segmentation,
    };
    let mut cfg = TrainConfig::for_task(task);
    let mut data = DataOptions::for_task(task);
    for (k, v) in pairs {
        apply(&mut cfg, &mut data, &normalize(k), v.trim())?;
    }
    cfg.validate()?;
    if task != TaskKind::Segmentation {
        data.shape = DataOptions::for_task(task).shape;
    }
    Ok((cfg, data))
}

fn apply(cfg: &mut TrainConfig, data: &mut DataOptions, key: &str, v: &str) -> CliResult<()> {
    let k = key;
    match key {
        "task" => {}
        "lambda" => cfg.lambda = num(k, v)?,
        "beta" => cfg.beta = num(k, v)?,
        "epsilon" => cfg.epsilon = if v == "auto" { None } else { Some(num(k, v)?) },
        "knn-soft" => cfg.knn_soft = num(k, v)?,
        "alpha0" | "alpha" => cfg.alpha0 = num(k, v)?,
        "alpha-decay" => cfg.alpha_decay = num(k, v)?,
        "alpha-period" | "alpha-period-epochs" => cfg.alpha_period_epochs = num(k, v)?,
        "disp-loss" => {
            cfg.disp_loss = pick(k, v, &[("cd", DispLoss::Cd), ("emd", DispLoss::Emd), ("emd-star", DispLoss::EmdStar)])?
        }
        "disp-mode" => {
            cfg.disp_mode = pick(
                k,
                v,
                &[
                    ("offset", DispMode::Offset),
                    ("coordinate", DispMode::Coordinate),
                    ("soft-projected", DispMode::CoordinateSoftProjected),
                ],
            )?
        }
        "supervision" => {
            cfg.supervision = pick(
                k,
                v,
                &[
                    ("fps", Supervision::Fps),
                    ("edge-fps", Supervision::EdgeFps),
                    ("part-fps", Supervision::PartFps),
                    ("key-fps", Supervision::KeyFps),
                    ("complete", Supervision::Complete),
                ],
            )?
        }
        "init-points" | "init" => {
            cfg.init_points = pick(
                k,
                v,
                &[("fps", InitPoints::Fps), ("random", InitPoints::Random), ("noisy-edge-fps", InitPoints::NoisyEdgeFps)],
            )?
        }
        "flip-rate" => cfg.flip_rate = num(k, v)?,
        "sampler" => {
            cfg.sampler = pick(
                k,
                v,
                &[("fps", SamplerKind::Fps), ("task-aware", SamplerKind::TaskAware), ("learned", SamplerKind::Learned)],
            )?
        }
        "strategy" => {
            cfg.strategy = pick(
                k,
                v,
                &[
                    ("joint", Strategy::Joint),
                    ("task-loss-only", Strategy::TaskLossOnly),
                    ("without-task-loss", Strategy::WithoutTaskLoss),
                ],
            )?
        }
        "finetune-epochs" => cfg.finetune_epochs = num(k, v)?,
        "learned-layer" => cfg.learned_layer = num(k, v)?,
        "epochs" => cfg.epochs = num(k, v)?,
        "batch-size" => cfg.batch_size = num(k, v)?,
        "optimizer" => {
            cfg.optimizer = pick(k, v, &[("momentum", OptimizerKind::Momentum), ("adam", OptimizerKind::Adam)])?
        }
        "lr" => cfg.lr = num(k, v)?,
        "momentum" => cfg.momentum = num(k, v)?,
        "seed" => cfg.seed = num(k, v)?,
        "sample-counts" => cfg.sample_counts = parse_list(k, v)?,
        "positive-weight" => cfg.positive_weight = num(k, v)?,
        "loss-scale" => cfg.loss_scale = num(k, v)?,
        "group-k" => cfg.group_k = num(k, v)?,
        "ap-threshold" => cfg.ap_threshold = num(k, v)?,
        "disp-k" => cfg.disp_net.k = num(k, v)?,
        "proj-k" => cfg.disp_net.proj_k = num(k, v)?,
        "init-temperature" => cfg.disp_net.init_temperature = num(k, v)?,
        "shape" => {
            data.shape = pick(k, v, &[("split-plane", ShapeKind::SplitPlane), ("multi-part", ShapeKind::MultiPart)])?
        }
        "n" | "points" => data.n = num(k, v)?,
        "count" => data.count = num(k, v)?,
        "data-seed" => data.seed = num(k, v)?,
        "parts" => data.parts = num(k, v)?,
        "noise" => data.noise = num(k, v)?,
        other => return Err(CliError::usage(format!("unknown setting {other:?}"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn config_file_syntax() {
        let p = parse_config("# comment\nepochs = 3\n\nlr=0.5\n").unwrap();
        assert_eq!(p, pairs(&[("epochs", "3"), ("lr", "0.5")]));
        assert!(parse_config("epochs 3\n").is_err());
        assert!(parse_config(" = 3\n").is_err());
    }

    #[test]
    fn later_pairs_win_and_task_sets_defaults() {
        let (cfg, data) =
            build(&pairs(&[("epochs", "3"), ("task", "keypoint"), ("epochs", "5"), ("disp_loss", "cd")])).unwrap();
        assert_eq!(cfg.task, TaskKind::Keypoint);
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.disp_loss, DispLoss::Cd);
        assert_eq!(cfg.lambda, 7.5);
        assert_eq!(data.n, 1024);
        let (cfg, _) = build(&pairs(&[("sample-counts", "64, 16"), ("epsilon", "0.1")])).unwrap();
        assert_eq!(cfg.sample_counts, vec![64, 16]);
        assert_eq!(cfg.epsilon, Some(0.1));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(build(&pairs(&[("colour", "red")])).is_err());
        assert!(build(&pairs(&[("epochs", "-1")])).is_err());
        assert!(build(&pairs(&[("sampler", "magic")])).is_err());
        assert!(build(&pairs(&[("sample-counts", "16,64")])).is_err());
        assert!(build(&pairs(&[("task", "dance")])).is_err());
    }
}
