use crate::dispnet::{DispMode, DispNetConfig};
use crate::error::{invalid, Result};
use crate::task_aware::TaskAwareConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Segmentation,
    Completion,
    Keypoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DispLoss {
    Cd,
    Emd,
    /// EMD with the matching taken from the initial points.
    EmdStar,
}

/// Handcrafted sampler that produces the displacement targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Supervision {
    Fps,
    EdgeFps,
    PartFps,
    KeyFps,
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitPoints {
    Fps,
    Random,
    /// Edge-FPS on a boundary mask with randomly flipped flags.
    NoisyEdgeFps,
}

/// Which points the task network sees at the sampled layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    Fps,
    /// The supervision sampler itself, using ground truth.
    TaskAware,
    /// The displacement network.
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Task and displacement losses both train the sampler.
    Joint,
    /// Displacement loss is dropped from the objective.
    TaskLossOnly,
    /// Task-loss gradients are blocked from the sampler; with
    /// `finetune_epochs > 0` joint training follows.
    WithoutTaskLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Momentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub lambda: f64,
    pub beta: f64,
    pub epsilon: Option<f64>,
    pub knn_soft: usize,
    pub alpha0: f64,
    pub alpha_decay: f64,
    pub alpha_period_epochs: usize,
    pub disp_loss: DispLoss,
    pub disp_mode: DispMode,
    pub supervision: Supervision,
    pub init_points: InitPoints,
    pub flip_rate: f64,
    pub sampler: SamplerKind,
    pub strategy: Strategy,
    pub finetune_epochs: usize,
    /// 1 or 2: which downsampling level uses the chosen sampler.
    pub learned_layer: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Points kept at each downsampling level, strictly decreasing.
    pub sample_counts: Vec<usize>,
    pub positive_weight: f64,
    /// Global multiplier on the joint loss.
    pub loss_scale: f64,
    /// Neighbors per group in the task network.
    pub group_k: usize,
    /// Keypoint hit distance for AP and positive labels.
    pub ap_threshold: f64,
    pub disp_net: DispNetConfig,
}

impl TrainConfig {
    pub fn segmentation() -> Self {
        Self {
            task: TaskKind::Segmentation,
            lambda: 3.5,
            beta: 0.75,
            epsilon: None,
            knn_soft: 20,
            alpha0: 50.0,
            alpha_decay: 0.95,
            alpha_period_epochs: 20,
            disp_loss: DispLoss::EmdStar,
            disp_mode: DispMode::Offset,
            supervision: Supervision::EdgeFps,
            init_points: InitPoints::Fps,
            flip_rate: 0.1,
            sampler: SamplerKind::Learned,
            strategy: Strategy::Joint,
            finetune_epochs: 0,
            learned_layer: 2,
            epochs: 30,
            batch_size: 8,
            // momentum 0.98 overshoots on the short synthetic runs
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            momentum: 0.98,
            seed: 0,
            sample_counts: vec![512, 128],
            positive_weight: 10.0,
            loss_scale: 1.0,
            group_k: 8,
            ap_threshold: 0.05,
            disp_net: DispNetConfig::default(),
        }
    }

    pub fn completion() -> Self {
        Self {
            task: TaskKind::Completion,
            alpha0: 0.5,
            alpha_decay: 1.0,
            supervision: Supervision::Complete,
            disp_mode: DispMode::Coordinate,
            loss_scale: 100.0,
            learned_layer: 1,
            sample_counts: vec![256, 64],
            ..Self::segmentation()
        }
    }

    pub fn keypoint() -> Self {
        Self {
            task: TaskKind::Keypoint,
            lambda: 7.5,
            beta: 0.8,
            alpha0: 0.5,
            alpha_decay: 1.0,
            supervision: Supervision::KeyFps,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            sample_counts: vec![256, 64],
            ..Self::segmentation()
        }
    }

    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Segmentation => Self::segmentation(),
            TaskKind::Completion => Self::completion(),
            TaskKind::Keypoint => Self::keypoint(),
        }
    }

    pub fn task_aware(&self) -> TaskAwareConfig {
        TaskAwareConfig { lambda: self.lambda, beta: self.beta, epsilon: self.epsilon, knn_soft: self.knn_soft }
    }

    pub fn total_epochs(&self) -> usize {
        match self.strategy {
            Strategy::WithoutTaskLoss => self.epochs + self.finetune_epochs,
            _ => self.epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) || !self.alpha0.is_finite() {
            return invalid(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay <= 1.0) {
            return invalid(format!("alpha_decay must be in (0, 1], got {}", self.alpha_decay));
        }
        if self.alpha_period_epochs < 1 {
            return invalid("alpha_period_epochs must be at least 1");
        }
        if self.sample_counts.len() != 2 {
            return invalid(format!("expected 2 sample counts, got {}", self.sample_counts.len()));
        }
        if self.sample_counts.windows(2).any(|w| w[0] <= w[1]) || self.sample_counts[1] < 1 {
            return invalid(format!("sample_counts must be strictly decreasing and positive: {:?}", self.sample_counts));
        }
        if !(self.positive_weight >= 1.0) {
            return invalid(format!("positive_weight must be >= 1, got {}", self.positive_weight));
        }
        if !(1..=2).contains(&self.learned_layer) {
            return invalid(format!("learned_layer must be 1 or 2, got {}", self.learned_layer));
        }
        if self.batch_size < 1 {
            return invalid("batch_size must be at least 1");
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return invalid(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return invalid(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return invalid(format!("flip_rate must be in [0, 1], got {}", self.flip_rate));
        }
        if !(self.loss_scale > 0.0) || !self.loss_scale.is_finite() {
            return invalid(format!("loss_scale must be positive, got {}", self.loss_scale));
        }
        if self.group_k < 1 {
            return invalid("group_k must be at least 1");
        }
        if !(self.ap_threshold > 0.0) {
            return invalid("ap_threshold must be positive");
        }
        let needs = match self.supervision {
            Supervision::EdgeFps | Supervision::PartFps => Some(TaskKind::Segmentation),
            Supervision::KeyFps => Some(TaskKind::Keypoint),
            Supervision::Complete => Some(TaskKind::Completion),
            Supervision::Fps => None,
        };
        if needs.is_some_and(|t| t != self.task) {
            return invalid(format!("{:?} supervision does not fit the {:?} task", self.supervision, self.task));
        }
        if self.init_points == InitPoints::NoisyEdgeFps && self.task != TaskKind::Segmentation {
            return invalid("noisy Edge-FPS initialization needs segmentation labels");
        }
        if self.task == TaskKind::Completion && self.learned_layer != 1 {
            return invalid("completion predicts from the first sampled level; learned_layer must be 1");
        }
        self.task_aware().validate()?;
        self.disp_net.validate()
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::segmentation()
    }
}

/// `task + alpha * disp`.
pub fn joint_loss(task_loss: f64, disp_loss: f64, alpha: f64) -> Result<f64> {
    if !task_loss.is_finite() || !disp_loss.is_finite() || !alpha.is_finite() {
        return invalid("joint loss inputs must be finite");
    }
    if alpha < 0.0 {
        return invalid(format!("alpha must be >= 0, got {alpha}"));
    }
    Ok(task_loss + alpha * disp_loss)
}

/// `alpha0 * alpha_decay ^ floor(epoch / alpha_period_epochs)`.
pub fn alpha_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.alpha0 * cfg.alpha_decay.powi((epoch / cfg.alpha_period_epochs.max(1)) as i32)
}
