use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tgv::optim::OptimizerKind;
use tgv::synthdata::SynthConfig;
use tgv::trainer::{EncoderShape, PairingMode, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "tgv", version, about = "Tabular-guided contrastive pretraining, zero-shot prediction and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired dataset with train/test splits.
    Synth(SynthArgs),
    /// Pretrain an encoder with tabular-guided (or augmentation) pairs.
    Pretrain(PretrainArgs),
    /// Export encoder embeddings of a dataset.
    Embed(EmbedArgs),
    /// Predict an attribute of query rows by k-NN over a reference set.
    Zeroshot(ZeroshotArgs),
    /// Fit a linear probe on frozen embeddings and score it on a test split.
    Probe(ProbeArgs),
    /// Zero-shot, linear-probe and fine-tuning metrics for one attribute.
    Eval(EvalArgs),
    /// Sweep the pairing threshold, lambda, or reference-set size.
    Ablate(AblateArgs),
    /// Dump the positive pairs of one batch.
    Pairs(PairsArgs),
    /// Rerun a command from its manifest and compare output hashes.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Pretrain(_) => "pretrain",
            Command::Embed(_) => "embed",
            Command::Zeroshot(_) => "zeroshot",
            Command::Probe(_) => "probe",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Pairs(_) => "pairs",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingArg {
    Tabular,
    Augmentation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    H,
    Lambda,
    RefsetSize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Zs,
    Lp,
    Ft,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Schema sidecar JSON.
    #[arg(long)]
    pub schema: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Weight of continuous similarity in the combined similarity.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Pairing threshold h.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = PairingArg::Tabular)]
    pub pairing_mode: PairingArg,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Keep the self term in the loss denominator.
    #[arg(long)]
    pub include_self: bool,
    #[arg(long, default_value_t = 0.3)]
    pub augment_sigma: f64,
    #[arg(long, default_value_t = 0.2)]
    pub augment_mask_rate: f64,
    /// Encoder hidden widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "128")]
    pub hidden_dims: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub projection_dim: usize,
    #[arg(long, value_enum, default_value_t = Precision::F64)]
    pub precision: Precision,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.lr,
            epochs: self.epochs,
            lambda: self.lambda,
            threshold: self.threshold,
            tau: self.tau,
            include_self_in_denominator: self.include_self,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::adam(),
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            },
            seed: self.seed,
            pairing_mode: match self.pairing_mode {
                PairingArg::Tabular => PairingMode::Tabular,
                PairingArg::Augmentation => PairingMode::Augmentation,
            },
            augment_sigma: self.augment_sigma,
            augment_mask_rate: self.augment_mask_rate,
            encoder: EncoderShape {
                hidden_dims: self.hidden_dims.clone(),
                embedding_dim: self.embedding_dim,
                projection_dim: self.projection_dim,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FinetuneArgs {
    #[arg(long, default_value_t = 35)]
    pub ft_epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub ft_lr: f64,
    #[arg(long, default_value_t = 128)]
    pub ft_batch_size: usize,
    /// Fine-tune binary targets on all positives plus as many negatives.
    #[arg(long)]
    pub balanced_ft: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub nuisance_dim: Option<usize>,
    #[arg(long)]
    pub nuisance_scale: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub n_continuous: Option<usize>,
    #[arg(long)]
    pub n_binary: Option<usize>,
    #[arg(long)]
    pub noise_image: Option<f64>,
    #[arg(long)]
    pub noise_tabular: Option<f64>,
    #[arg(long)]
    pub noise_target: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub prevalence: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl SynthArgs {
    pub fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            n_samples: self.n_samples.unwrap_or(d.n_samples),
            latent_dim: self.latent_dim.unwrap_or(d.latent_dim),
            nuisance_dim: self.nuisance_dim.unwrap_or(d.nuisance_dim),
            nuisance_scale: self.nuisance_scale.unwrap_or(d.nuisance_scale),
            feature_dim: self.feature_dim.unwrap_or(d.feature_dim),
            n_continuous: self.n_continuous.unwrap_or(d.n_continuous),
            n_binary: self.n_binary.unwrap_or(d.n_binary),
            noise_sigma_image: self.noise_image.unwrap_or(d.noise_sigma_image),
            noise_sigma_tabular: self.noise_tabular.unwrap_or(d.noise_sigma_tabular),
            noise_sigma_target: self.noise_target.unwrap_or(d.noise_sigma_target),
            nonlinearity_depth: self.depth.unwrap_or(d.nonlinearity_depth),
            disease_prevalence: self.prevalence.unwrap_or(d.disease_prevalence),
            r2_floor: d.r2_floor,
            seed: self.seed.unwrap_or(d.seed),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Also write embeddings.csv with an id column.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ZeroshotArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled reference CSV.
    #[arg(long)]
    pub reference: PathBuf,
    /// Query CSV.
    #[command(flatten)]
    pub data: DataArgs,
    /// Target or continuous attribute to predict.
    #[arg(long)]
    pub attribute: String,
    /// Defaults to 0.2 for binary targets and 0.025 otherwise.
    #[arg(long)]
    pub k_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training CSV.
    #[command(flatten)]
    pub data: DataArgs,
    /// Test CSV.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub attribute: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Training CSV; also the zero-shot reference pool.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub attribute: String,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "zs,lp,ft")]
    pub regimes: Vec<RegimeArg>,
    #[arg(long)]
    pub k_fraction: Option<f64>,
    /// Draw a seeded reference subset of this size instead of the whole pool.
    #[arg(long)]
    pub refset_size: Option<usize>,
    #[command(flatten)]
    pub finetune: FinetuneArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Training CSV.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub sweep: SweepAxis,
    #[arg(long)]
    pub attribute: String,
    /// Multiplier on the reference-set size ladder {2000, 1000, 500, 100}.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Disjoint reference sets per grid point.
    #[arg(long, default_value_t = 3)]
    pub refsets: usize,
    /// Reference-set size for the h and lambda sweeps (per class for binary
    /// targets). Defaults to a third of the pool.
    #[arg(long)]
    pub refset_size: Option<usize>,
    #[arg(long)]
    pub k_fraction: Option<f64>,
    /// Skip fine-tuning; the ft column is left empty.
    #[arg(long)]
    pub no_ft: bool,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub finetune: FinetuneArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PairsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    /// Rows in the batch.
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    /// First row of the batch.
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory for the rerun; defaults to the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
