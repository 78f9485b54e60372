use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{
    alpha_at, joint_loss, DispLoss, InitPoints, OptimizerKind, SamplerKind, Strategy, Supervision, TaskKind,
    TrainConfig,
};
use super::losses::{argmax_labels, cross_entropy, sigmoid, weighted_bce};
use super::noisy_edge_init;
use super::optim::Optimizer;
use super::report::{EpochRecord, TrainReport};
use super::task_net::{TaskGraph, TaskNet};
use crate::cloud::PointCloud;
use crate::dispnet::{DispGraph, DispNet, DispOutput, ParamSet};
use crate::error::{invalid, Error, Result};
use crate::geom::{self, Point3};
use crate::matrix::Matrix;
use crate::metrics::{chamfer_mean, chamfer_mean_with_grad, emd, keypoint_ap, matched_distance_with_grad, seg_scores, SegScores};
use crate::sampling::{fps, fps_indices, random_sample};
use crate::task_aware::{
    completion_supervision, detect_boundary, key_fps, masked_fps, part_fps, soft_keypoints, BoundaryMask,
};

/// One training example. Which optional parts are needed depends on the task.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// Input cloud; carries labels for segmentation.
    pub cloud: PointCloud,
    /// Completion target.
    pub complete: Option<PointCloud>,
    /// Keypoint indices into `cloud`.
    pub keypoints: Vec<usize>,
    /// Viewing direction of a partial scan.
    pub view: Option<Point3>,
}

impl TrainSample {
    pub fn labeled(cloud: PointCloud) -> Self {
        Self { cloud, complete: None, keypoints: Vec::new(), view: None }
    }

    pub fn completion(partial: PointCloud, complete: PointCloud, view: Point3) -> Self {
        Self { cloud: partial, complete: Some(complete), keypoints: Vec::new(), view: Some(view) }
    }

    pub fn keypoint(cloud: PointCloud, keypoints: Vec<usize>) -> Self {
        Self { cloud, complete: None, keypoints, view: None }
    }
}

/// Everything about a sample that does not change during training.
struct Prepared {
    pos0: Vec<Point3>,
    labels: Vec<i32>,
    key_targets: Vec<bool>,
    key_points: Vec<Point3>,
    complete: Vec<Point3>,
    /// Viewing direction and shape center, for completion samples.
    view: Option<(Point3, Point3)>,
    /// Input of the sampled level.
    layer: PointCloud,
    /// Fixed first level when the second level is sampled.
    pos1_fixed: Vec<Point3>,
    mask: Option<BoundaryMask>,
    init: Vec<Point3>,
    target: Vec<Point3>,
    emd_targets: Vec<usize>,
    disp_graph: Option<DispGraph>,
    fixed: Option<(Vec<Point3>, TaskGraph)>,
}

struct StepOut {
    task: f64,
    disp: f64,
    grads: Vec<f64>,
}

struct Inference {
    sampled: Vec<Point3>,
    output: Matrix,
}

/// Model outputs for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Points produced by the sampler at the sampled level.
    pub sampled: Vec<Point3>,
    /// Per-point labels (segmentation).
    pub labels: Vec<i32>,
    /// Per-point keypoint probabilities.
    pub keypoint_probs: Vec<f64>,
    /// Predicted shape (completion).
    pub completion: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metric: f64,
    pub seg_scores: Option<SegScores>,
    pub boundary_fraction: f64,
    pub mean_displacement: f64,
    pub predictions: Vec<Prediction>,
}

pub struct Trainer {
    cfg: TrainConfig,
    params: ParamSet,
    disp: DispNet,
    task: TaskNet,
    optimizer: Optimizer,
    prepared: Vec<Prepared>,
    report: TrainReport,
    rng: ChaCha8Rng,
    epoch: usize,
}

fn points_of(m: &Matrix) -> Vec<Point3> {
    (0..m.rows()).map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)]).collect()
}

fn check_dataset(cfg: &TrainConfig, data: &[TrainSample]) -> Result<()> {
    if data.is_empty() {
        return invalid("dataset is empty");
    }
    for (i, s) in data.iter().enumerate() {
        if s.cloud.len() <= cfg.sample_counts[0] {
            return invalid(format!(
                "sample {i} has {} points, needs more than {}",
                s.cloud.len(),
                cfg.sample_counts[0]
            ));
        }
        match cfg.task {
            TaskKind::Segmentation if s.cloud.labels().is_none() => {
                return invalid(format!("sample {i} has no labels"));
            }
            TaskKind::Completion if s.complete.is_none() || s.view.is_none() => {
                return invalid(format!("sample {i} has no complete shape or view"));
            }
            TaskKind::Completion if s.complete.as_ref().is_some_and(|c| c.len() < cfg.sample_counts[0]) => {
                return invalid(format!("sample {i}: complete shape is smaller than the first level"));
            }
            TaskKind::Keypoint if s.keypoints.is_empty() => {
                return invalid(format!("sample {i} has no keypoints"));
            }
            TaskKind::Keypoint if s.keypoints.iter().any(|&k| k >= s.cloud.len()) => {
                return invalid(format!("sample {i} has a keypoint index out of range"));
            }
            _ => {}
        }
    }
    Ok(())
}

fn class_count(cfg: &TrainConfig, data: &[TrainSample]) -> usize {
    if cfg.task != TaskKind::Segmentation {
        return 1;
    }
    let top = data.iter().filter_map(|s| s.cloud.labels()).flatten().copied().max().unwrap_or(0);
    (top.max(0) as usize + 1).max(2)
}

impl Trainer {
    pub fn new(cfg: TrainConfig, data: &[TrainSample]) -> Result<Self> {
        cfg.validate()?;
        check_dataset(&cfg, data)?;
        let mut params = ParamSet::new();
        let disp = DispNet::register(&mut params, "disp", cfg.disp_net, cfg.seed)?;
        let task = TaskNet::register(&mut params, "task", cfg.task, class_count(&cfg, data), cfg.seed.wrapping_add(1))?;
        let optimizer = match cfg.optimizer {
            OptimizerKind::Momentum => Optimizer::momentum(params.len(), cfg.lr, cfg.momentum),
            OptimizerKind::Adam => Optimizer::adam(params.len(), cfg.lr),
        };
        let prepared = data
            .par_iter()
            .enumerate()
            .map(|(i, s)| prepare(&cfg, s, i))
            .collect::<Result<Vec<_>>>()?;
        let mut report = TrainReport::default();
        let n = prepared.len() as f64;
        report.init_boundary_fraction = prepared.iter().map(|p| boundary_fraction(p, &p.init)).sum::<f64>() / n;
        report.target_boundary_fraction = prepared.iter().map(|p| boundary_fraction(p, &p.target)).sum::<f64>() / n;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self { cfg, params, disp, task, optimizer, prepared, report, rng, epoch: 0 })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn into_report(self) -> TrainReport {
        self.report
    }

    /// Runs every remaining epoch. On divergence the records of completed
    /// epochs stay available through [`Trainer::report`].
    pub fn train(&mut self) -> Result<&TrainReport> {
        while self.epoch < self.cfg.total_epochs() {
            self.run_epoch()?;
        }
        Ok(&self.report)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch;
        let alpha = alpha_at(epoch, &self.cfg);
        let (alpha_eff, block_task) = match self.cfg.strategy {
            Strategy::Joint => (alpha, false),
            Strategy::TaskLossOnly => (0.0, false),
            Strategy::WithoutTaskLoss => (alpha, epoch < self.cfg.epochs),
        };
        let mut order: Vec<usize> = (0..self.prepared.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut task_sum, mut disp_sum, mut total_sum) = (0.0, 0.0, 0.0);
        let mut steps = 0usize;
        for batch in order.chunks(self.cfg.batch_size) {
            let scale = self.cfg.loss_scale / batch.len() as f64;
            let outs = batch
                .par_iter()
                .map(|&i| self.sample_step(&self.prepared[i], alpha_eff, block_task, scale))
                .collect::<Vec<_>>();
            let mut grads = self.params.grad_buffer();
            let (mut task, mut disp) = (0.0, 0.0);
            for out in outs {
                let out = out.map_err(|e| diverged(epoch, e))?;
                task += out.task;
                disp += out.disp;
                for (g, v) in grads.iter_mut().zip(&out.grads) {
                    *g += v;
                }
            }
            task /= batch.len() as f64;
            disp /= batch.len() as f64;
            let total = self.cfg.loss_scale * joint_loss(task, disp, alpha_eff).map_err(|e| diverged(epoch, e))?;
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, reason: "non-finite loss".into() });
            }
            self.params.grads_mut().copy_from_slice(&grads);
            let (values, grads) = (self.params.values().to_vec(), self.params.grads().to_vec());
            let mut values = values;
            self.optimizer.step(&mut values, &grads).map_err(|e| diverged(epoch, e))?;
            self.params.values_mut().copy_from_slice(&values);
            task_sum += task;
            disp_sum += disp;
            total_sum += total;
            steps += 1;
        }
        let eval = self.evaluate_prepared(&self.prepared).map_err(|e| diverged(epoch, e))?;
        let steps = steps as f64;
        let record = EpochRecord {
            epoch,
            task_loss: task_sum / steps,
            disp_loss: disp_sum / steps,
            total_loss: total_sum / steps,
            metric: eval.metric,
            alpha,
            boundary_fraction: eval.boundary_fraction,
        };
        self.report.records.push(record);
        self.report.mean_displacement = eval.mean_displacement;
        self.report.seg_scores = eval.seg_scores;
        self.epoch += 1;
        Ok(record)
    }

    fn sampled_points(&self, p: &Prepared) -> Result<(Vec<Point3>, Option<DispOutput>)> {
        match (&p.disp_graph, self.cfg.sampler) {
            (Some(graph), SamplerKind::Learned) => {
                let out = self.disp.forward(&self.params, graph, &p.layer, &p.init, self.cfg.disp_mode)?;
                Ok((out.points.clone(), Some(out)))
            }
            _ => Ok((p.fixed.as_ref().expect("fixed sampler output").0.clone(), None)),
        }
    }

    /// First and second level positions around the sampled level.
    fn levels(&self, p: &Prepared, sampled: &[Point3]) -> Result<(Vec<Point3>, Vec<Point3>, Vec<usize>)> {
        if self.cfg.learned_layer == 1 {
            let idx = fps_indices(sampled, self.cfg.sample_counts[1], 0)?;
            let pos2 = idx.iter().map(|&i| sampled[i]).collect();
            Ok((sampled.to_vec(), pos2, idx))
        } else {
            Ok((p.pos1_fixed.clone(), sampled.to_vec(), Vec::new()))
        }
    }

    fn task_loss(&self, p: &Prepared, output: &Matrix) -> Result<(f64, Matrix)> {
        match self.cfg.task {
            TaskKind::Segmentation => cross_entropy(output, &p.labels),
            TaskKind::Keypoint => weighted_bce(output, &p.key_targets, self.cfg.positive_weight),
            TaskKind::Completion => {
                let (loss, grad) = chamfer_mean_with_grad(&points_of(output), &p.complete)?;
                let data = grad.into_iter().flatten().collect();
                Ok((loss, Matrix::from_vec(output.rows(), 3, data)?))
            }
        }
    }

    /// Per-point displacement loss and its gradient.
    fn disp_loss(&self, p: &Prepared, sampled: &[Point3]) -> Result<(f64, Vec<Point3>)> {
        let m = sampled.len() as f64;
        let (total, grad) = match self.cfg.disp_loss {
            DispLoss::Cd => return chamfer_mean_with_grad(sampled, &p.target),
            DispLoss::Emd => {
                let targets = emd(sampled, &p.target)?.1.targets();
                matched_distance_with_grad(sampled, &p.target, &targets)?
            }
            DispLoss::EmdStar => matched_distance_with_grad(sampled, &p.target, &p.emd_targets)?,
        };
        Ok((total / m, grad.iter().map(|g| geom::scale(g, 1.0 / m)).collect()))
    }

    fn sample_step(&self, p: &Prepared, alpha_eff: f64, block_task: bool, scale: f64) -> Result<StepOut> {
        let (sampled, disp_out) = self.sampled_points(p)?;
        if sampled.iter().any(|q| !geom::is_finite(q)) {
            return invalid("sampler produced non-finite coordinates");
        }
        let (pos1, pos2, idx2) = self.levels(p, &sampled)?;
        let built;
        let graph = match (&p.fixed, &disp_out) {
            (Some((_, g)), None) => g,
            _ => {
                built = TaskGraph::build(&p.pos0, &pos1, &pos2, self.cfg.group_k, self.task.needs_level0())?;
                &built
            }
        };
        let fwd = self.task.forward(&self.params, graph, &p.pos0, &pos1, &pos2)?;
        let (task_loss, mut dout) = self.task_loss(p, &fwd.output)?;
        for v in dout.as_mut_slice() {
            *v *= scale;
        }
        let mut grads = self.params.grad_buffer();
        let (dpos1, dpos2) = self.task.backward(&self.params, &mut grads, graph, &p.pos0, &pos1, &pos2, &fwd, &dout);
        let mut disp_loss = 0.0;
        if let (Some(out), Some(dgraph)) = (&disp_out, &p.disp_graph) {
            let (loss, ddisp) = self.disp_loss(p, &sampled)?;
            disp_loss = loss;
            let mut dsampled = vec![[0.0; 3]; sampled.len()];
            if !block_task {
                if self.cfg.learned_layer == 1 {
                    dsampled.copy_from_slice(&dpos1);
                    for (j, &i) in idx2.iter().enumerate() {
                        dsampled[i] = geom::add(&dsampled[i], &dpos2[j]);
                    }
                } else {
                    dsampled.copy_from_slice(&dpos2);
                }
            }
            if alpha_eff > 0.0 {
                for (d, g) in dsampled.iter_mut().zip(&ddisp) {
                    *d = geom::add(d, &geom::scale(g, scale * alpha_eff));
                }
            }
            self.disp.backward(&self.params, &mut grads, dgraph, &p.layer, &p.init, out, &dsampled);
        }
        if !task_loss.is_finite() || !disp_loss.is_finite() {
            return invalid("non-finite loss");
        }
        Ok(StepOut { task: task_loss, disp: disp_loss, grads })
    }

    fn infer(&self, p: &Prepared) -> Result<Inference> {
        let (sampled, disp_out) = self.sampled_points(p)?;
        if sampled.iter().any(|q| !geom::is_finite(q)) {
            return invalid("sampler produced non-finite coordinates");
        }
        let (pos1, pos2, _) = self.levels(p, &sampled)?;
        let built;
        let graph = match (&p.fixed, &disp_out) {
            (Some((_, g)), None) => g,
            _ => {
                built = TaskGraph::build(&p.pos0, &pos1, &pos2, self.cfg.group_k, self.task.needs_level0())?;
                &built
            }
        };
        let output = self.task.forward(&self.params, graph, &p.pos0, &pos1, &pos2)?.output;
        Ok(Inference { sampled, output })
    }

    fn evaluate_prepared(&self, prepared: &[Prepared]) -> Result<Evaluation> {
        let infs = prepared.par_iter().map(|p| self.infer(p)).collect::<Result<Vec<_>>>()?;
        let n = prepared.len() as f64;
        let mut predictions = Vec::with_capacity(prepared.len());
        let (mut metric_sum, mut boundary, mut displacement) = (0.0, 0.0, 0.0);
        for (p, inf) in prepared.iter().zip(infs) {
            boundary += boundary_fraction(p, &inf.sampled);
            if self.cfg.sampler == SamplerKind::Learned {
                let d: f64 = inf.sampled.iter().zip(&p.init).map(|(a, b)| geom::dist(a, b)).sum();
                displacement += d / inf.sampled.len() as f64;
            }
            let mut pred = Prediction {
                sampled: inf.sampled,
                labels: Vec::new(),
                keypoint_probs: Vec::new(),
                completion: Vec::new(),
            };
            match self.cfg.task {
                TaskKind::Segmentation => pred.labels = argmax_labels(&inf.output),
                TaskKind::Keypoint => {
                    pred.keypoint_probs = inf.output.as_slice().iter().map(|&z| sigmoid(z)).collect();
                    let hits: Vec<Point3> = pred
                        .keypoint_probs
                        .iter()
                        .zip(&p.pos0)
                        .filter(|(pr, _)| **pr > 0.5)
                        .map(|(_, q)| *q)
                        .collect();
                    metric_sum += keypoint_ap(&hits, &p.key_points, self.cfg.ap_threshold)?;
                }
                TaskKind::Completion => {
                    pred.completion = points_of(&inf.output);
                    metric_sum += chamfer_mean(&pred.completion, &p.complete)?;
                }
            }
            predictions.push(pred);
        }
        let (metric, seg) = if self.cfg.task == TaskKind::Segmentation {
            let preds: Vec<Vec<i32>> = predictions.iter().map(|p| p.labels.clone()).collect();
            let gts: Vec<Vec<i32>> = prepared.iter().map(|p| p.labels.clone()).collect();
            let classes = class_count_from(&gts, &preds);
            let s = seg_scores(&preds, &gts, classes)?;
            (s.part_miou, Some(s))
        } else {
            (metric_sum / n, None)
        };
        Ok(Evaluation {
            metric,
            seg_scores: seg,
            boundary_fraction: boundary / n,
            mean_displacement: displacement / n,
            predictions,
        })
    }

    /// Scores the current model on other samples (prepared the same way as
    /// the training data).
    pub fn evaluate(&self, samples: &[TrainSample]) -> Result<Evaluation> {
        check_dataset(&self.cfg, samples)?;
        let offset = self.prepared.len();
        let prepared = samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| prepare(&self.cfg, s, offset + i))
            .collect::<Result<Vec<_>>>()?;
        self.evaluate_prepared(&prepared)
    }
}

fn class_count_from(a: &[Vec<i32>], b: &[Vec<i32>]) -> usize {
    let top = a.iter().chain(b).flatten().copied().max().unwrap_or(0);
    top.max(0) as usize + 1
}

fn diverged(epoch: usize, e: Error) -> Error {
    match e {
        Error::Diverged { .. } => e,
        other => Error::Diverged { epoch, reason: other.to_string() },
    }
}

/// Share of `points` whose nearest input point of the sampled level is
/// flagged; for completion, the share lying in the occluded half.
fn boundary_fraction(p: &Prepared, points: &[Point3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let hits = match (&p.mask, &p.view) {
        (Some(mask), _) => points.iter().filter(|q| mask.flags[p.layer.nearest(q, 1)[0].index]).count(),
        (None, Some((view, center))) => {
            points.iter().filter(|q| geom::dot(&geom::sub(q, center), view) < 0.0).count()
        }
        (None, None) => 0,
    };
    hits as f64 / points.len() as f64
}

fn prepare(cfg: &TrainConfig, s: &TrainSample, index: usize) -> Result<Prepared> {
    let ta = cfg.task_aware();
    let pos0 = s.cloud.points().to_vec();
    let (layer, pos1_fixed, layer_idx, m) = if cfg.learned_layer == 1 {
        (s.cloud.clone(), Vec::new(), None, cfg.sample_counts[0])
    } else {
        let idx = fps_indices(&pos0, cfg.sample_counts[0], 0)?;
        let layer = s.cloud.subset(&idx)?;
        let pts = layer.points().to_vec();
        (layer, pts, Some(idx), cfg.sample_counts[1])
    };
    let mask = match cfg.task {
        TaskKind::Segmentation => Some(detect_boundary(&layer, ta.resolve_epsilon(&layer)?)?),
        TaskKind::Keypoint => {
            let full = soft_keypoints(&s.cloud, &s.keypoints, cfg.knn_soft)?;
            Some(match &layer_idx {
                Some(idx) => BoundaryMask::new(idx.iter().map(|&i| full.flags[i]).collect()),
                None => full,
            })
        }
        TaskKind::Completion => None,
    };
    let seed = cfg.seed.wrapping_add(index as u64);
    let init = match cfg.init_points {
        InitPoints::Fps => fps(&layer, m, 0)?,
        InitPoints::Random => random_sample(&layer, m, seed)?,
        InitPoints::NoisyEdgeFps => noisy_edge_init(&layer, m, &ta, cfg.flip_rate, seed)?,
    }
    .coordinates;
    let target = match cfg.supervision {
        Supervision::Fps => fps(&layer, m, 0)?,
        Supervision::EdgeFps | Supervision::KeyFps if mask.is_some() => {
            let mask = mask.as_ref().expect("mask");
            if cfg.supervision == Supervision::EdgeFps {
                masked_fps(&layer, mask, m, &ta)?
            } else {
                key_fps(&layer, mask, m, &ta)?
            }
        }
        Supervision::PartFps => part_fps(&layer, m)?,
        Supervision::Complete => completion_supervision(s.complete.as_ref().expect("checked"), m)?,
        other => return invalid(format!("{other:?} supervision needs task labels")),
    }
    .coordinates;
    let emd_targets =
        if cfg.disp_loss == DispLoss::EmdStar { emd(&init, &target)?.1.targets() } else { Vec::new() };
    let labels = match cfg.task {
        TaskKind::Segmentation => s.cloud.labels().expect("checked").to_vec(),
        _ => Vec::new(),
    };
    let key_points: Vec<Point3> = s.keypoints.iter().map(|&k| pos0[k]).collect();
    let key_targets = if cfg.task == TaskKind::Keypoint {
        let kc = PointCloud::new(key_points.clone())?;
        pos0.iter().map(|q| kc.nearest(q, 1)[0].distance <= cfg.ap_threshold).collect()
    } else {
        Vec::new()
    };
    let complete = s.complete.as_ref().map(|c| c.points().to_vec()).unwrap_or_default();
    let view = match (&s.view, cfg.task) {
        (Some(v), TaskKind::Completion) => {
            let n = complete.len() as f64;
            let center = complete.iter().fold([0.0; 3], |a, q| geom::add(&a, q));
            Some((*v, geom::scale(&center, 1.0 / n)))
        }
        _ => None,
    };
    let mut prepared = Prepared {
        pos0,
        labels,
        key_targets,
        key_points,
        complete,
        view,
        layer,
        pos1_fixed,
        mask,
        init,
        target,
        emd_targets,
        disp_graph: None,
        fixed: None,
    };
    match cfg.sampler {
        SamplerKind::Learned => {
            prepared.disp_graph = Some(DispGraph::build(prepared.layer.points(), &prepared.init, cfg.disp_net.k)?);
        }
        kind => {
            let sampled = match kind {
                SamplerKind::Fps => fps(&prepared.layer, m, 0)?.coordinates,
                _ => prepared.target.clone(),
            };
            let (pos1, pos2) = if cfg.learned_layer == 1 {
                let idx = fps_indices(&sampled, cfg.sample_counts[1], 0)?;
                let pos2: Vec<Point3> = idx.iter().map(|&i| sampled[i]).collect();
                (sampled.clone(), pos2)
            } else {
                (prepared.pos1_fixed.clone(), sampled.clone())
            };
            let to_level0 = cfg.task != TaskKind::Completion;
            let graph = TaskGraph::build(&prepared.pos0, &pos1, &pos2, cfg.group_k, to_level0)?;
            prepared.fixed = Some((sampled, graph));
        }
    }
    Ok(prepared)
}

/// Trains a fresh model on `data` and returns the per-epoch report.
pub fn train(data: &[TrainSample], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut trainer = Trainer::new(cfg.clone(), data)?;
    trainer.train()?;
    Ok(trainer.into_report())
}
