use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tas", version, about = "Task-aware point cloud sampling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic clouds with complete labels
    Gen(GenArgs),
    /// Downsample a point file
    Sample(SampleArgs),
    /// Flag points near label boundaries
    Boundary(BoundaryArgs),
    /// Compare point files
    Metric(MetricArgs),
    /// Train the displacement sampler jointly with a toy task
    Train(TrainArgs),
    /// Train with Edge-FPS sampling over a lambda x beta grid
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    SplitPlane,
    MultiPart,
    PartialComplete,
    Keypoint,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub kind: ShapeArg,
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub parts: usize,
    /// Gaussian noise sigma
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of clouds; cloud i uses seed + i
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Viewing direction `x,y,z` for partial scans (seeded when omitted)
    #[arg(long)]
    pub view: Option<String>,
    /// Output base name; extensions are appended
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Fps,
    Random,
    Grid,
    EdgeFps,
    PartFps,
    KeyFps,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "fps")]
    pub sampler: SamplerArg,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Boundary radius (twice the mean spacing when omitted)
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub knn_soft: usize,
    /// Voxel size for the grid sampler
    #[arg(long)]
    pub cell_size: Option<f64>,
    /// Seed of the random sampler
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keypoint index file for key-fps
    #[arg(long)]
    pub keys: Option<PathBuf>,
    /// Output file (defaults to `<input>.<sampler>.xyz`)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundaryArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Write the cloud with 1/0 boundary flags as labels
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cd,
    Emd,
    EmdStar,
    Miou,
    Ap,
}

#[derive(Debug, Args)]
pub struct MetricArgs {
    #[arg(value_enum)]
    pub metric: MetricArg,
    /// cd/emd/ap: A B; emd-star: PRED TARGET (with --init); miou: PRED GT [PRED GT ...]
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Initial points fixing the emd-star matching
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Part count for miou (max label + 1 when omitted)
    #[arg(long)]
    pub parts: Option<usize>,
    /// Distance threshold for ap
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
}

/// Settings shared with the `key = value` config file.
#[derive(Debug, Args, Default)]
pub struct SettingFlags {
    /// `key = value` settings file; flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub knn_soft: Option<String>,
    #[arg(long)]
    pub alpha0: Option<String>,
    #[arg(long)]
    pub alpha_decay: Option<String>,
    #[arg(long)]
    pub alpha_period: Option<String>,
    #[arg(long)]
    pub disp_loss: Option<String>,
    #[arg(long)]
    pub disp_mode: Option<String>,
    #[arg(long)]
    pub supervision: Option<String>,
    #[arg(long)]
    pub init_points: Option<String>,
    #[arg(long)]
    pub flip_rate: Option<String>,
    #[arg(long)]
    pub sampler: Option<String>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub finetune_epochs: Option<String>,
    #[arg(long)]
    pub learned_layer: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub momentum: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Comma-separated, strictly decreasing
    #[arg(long)]
    pub sample_counts: Option<String>,
    #[arg(long)]
    pub positive_weight: Option<String>,
    #[arg(long)]
    pub loss_scale: Option<String>,
    #[arg(long)]
    pub group_k: Option<String>,
    #[arg(long)]
    pub ap_threshold: Option<String>,
    #[arg(long)]
    pub disp_k: Option<String>,
    #[arg(long)]
    pub proj_k: Option<String>,
    #[arg(long)]
    pub init_temperature: Option<String>,
    /// Generated segmentation shape: split-plane or multi-part
    #[arg(long)]
    pub shape: Option<String>,
    /// Points per generated cloud
    #[arg(long)]
    pub n: Option<String>,
    /// Number of generated clouds
    #[arg(long)]
    pub count: Option<String>,
    #[arg(long)]
    pub data_seed: Option<String>,
    #[arg(long)]
    pub parts: Option<String>,
    #[arg(long)]
    pub noise: Option<String>,
    /// Training files instead of generated clouds
    #[arg(long, num_args = 1..)]
    pub data: Vec<PathBuf>,
}

impl SettingFlags {
    pub fn pairs(&self) -> Vec<(String, String)> {
        let fields: [(&str, &Option<String>); 37] = [
            ("task", &self.task),
            ("lambda", &self.lambda),
            ("beta", &self.beta),
            ("epsilon", &self.epsilon),
            ("knn-soft", &self.knn_soft),
            ("alpha0", &self.alpha0),
            ("alpha-decay", &self.alpha_decay),
            ("alpha-period", &self.alpha_period),
            ("disp-loss", &self.disp_loss),
            ("disp-mode", &self.disp_mode),
            ("supervision", &self.supervision),
            ("init-points", &self.init_points),
            ("flip-rate", &self.flip_rate),
            ("sampler", &self.sampler),
            ("strategy", &self.strategy),
            ("finetune-epochs", &self.finetune_epochs),
            ("learned-layer", &self.learned_layer),
            ("epochs", &self.epochs),
            ("batch-size", &self.batch_size),
            ("optimizer", &self.optimizer),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("seed", &self.seed),
            ("sample-counts", &self.sample_counts),
            ("positive-weight", &self.positive_weight),
            ("loss-scale", &self.loss_scale),
            ("group-k", &self.group_k),
            ("ap-threshold", &self.ap_threshold),
            ("disp-k", &self.disp_k),
            ("proj-k", &self.proj_k),
            ("init-temperature", &self.init_temperature),
            ("shape", &self.shape),
            ("n", &self.n),
            ("count", &self.count),
            ("data-seed", &self.data_seed),
            ("parts", &self.parts),
            ("noise", &self.noise),
        ];
        fields.iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub settings: SettingFlags,
    /// Per-epoch CSV report
    #[arg(long, default_value = "train.csv")]
    pub csv: PathBuf,
    /// Parameter checkpoint
    #[arg(long, default_value = "dispnet.ckpt")]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub settings: SettingFlags,
    /// Comma-separated lambda values
    #[arg(long, default_value = "1.5,2,2.5,3,3.5,4")]
    pub lambdas: String,
    /// Comma-separated beta values
    #[arg(long, default_value = "0.5,0.75")]
    pub betas: String,
    /// CSV output (stdout when omitted)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}
