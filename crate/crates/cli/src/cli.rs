use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "vwt", version, about = "Training-free visual word tokenizer for vision transformers")]
pub struct Cli {
    /// TOML file with per-subcommand defaults; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Cluster corpus patches into a visual-word vocabulary
    BuildVocab(BuildVocabArgs),
    /// Tokenize images and write per-sample group assignments
    Tokenize(TokenizeArgs),
    /// Aggregate assignment files into length and usage reports
    Stats(StatsArgs),
    /// Tabulate the analytic FLOPs proxy over lengths and batch sizes
    Bench(BenchArgs),
    /// Write a randomly initialized toy encoder
    InitEncoder(InitEncoderArgs),
    /// Repeat the run recorded in a manifest
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    /// Directory of corpus images
    #[arg(long, value_name = "DIR")]
    pub input_dir: Option<PathBuf>,

    /// Patch side in pixels [default: 16]
    #[arg(long, value_name = "P")]
    pub patch_size: Option<usize>,

    /// Number of visual words [default: 1000]
    #[arg(long, value_name = "V")]
    pub vocab_size: Option<usize>,

    /// Clustering algorithm: lloyd | minibatch [default: minibatch]
    #[arg(long)]
    pub mode: Option<String>,

    /// Patches per mini-batch [default: max(1024, V)]
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,

    /// Iteration cap [default: 100]
    #[arg(long, value_name = "N")]
    pub max_iters: Option<usize>,

    /// Relative centroid-shift stopping threshold [default: 1e-4]
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,

    /// RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Resize every image to SIZE x SIZE before patchifying
    #[arg(long, value_name = "SIZE")]
    pub image_size: Option<usize>,

    /// nearest | bilinear [default: bilinear]
    #[arg(long)]
    pub resize_mode: Option<String>,

    /// Cluster in this encoder's embedding space instead of pixel space
    #[arg(long, value_name = "PATH")]
    pub encoder: Option<PathBuf>,

    /// Vocabulary file to write
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    /// intra | inter | random-inter | random-intra | inter-embed [default: inter]
    #[arg(long)]
    pub mode: Option<String>,

    /// Single image to tokenize
    #[arg(long, value_name = "PATH")]
    pub image: Option<PathBuf>,

    /// Directory of images to tokenize
    #[arg(long, value_name = "DIR")]
    pub input_dir: Option<PathBuf>,

    /// Vocabulary file (inter and inter-embed modes)
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,

    /// Toy encoder file (inter-embed mode)
    #[arg(long, value_name = "PATH")]
    pub encoder: Option<PathBuf>,

    /// Maximum cosine distance for a match, in [0, 2] [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,

    /// Fraction of patches to drop, in [0, 1] [default: 0.5]
    #[arg(long, allow_negative_numbers = true)]
    pub ratio: Option<f64>,

    /// RNG seed for the random modes [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Patch side when no vocabulary is given [default: 16]
    #[arg(long, value_name = "P")]
    pub patch_size: Option<usize>,

    /// Vocabulary size for random-inter without --vocab
    #[arg(long, value_name = "V")]
    pub vocab_size: Option<usize>,

    /// Resize every image to SIZE x SIZE before patchifying
    #[arg(long, value_name = "SIZE")]
    pub image_size: Option<usize>,

    /// nearest | bilinear [default: bilinear]
    #[arg(long)]
    pub resize_mode: Option<String>,

    /// Directory for per-sample assignment JSON and the manifest
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    /// Length statistics JSON [default: OUT_DIR/stats.json]
    #[arg(long, value_name = "PATH")]
    pub stats_out: Option<PathBuf>,

    /// Directory for per-sample overlay PNGs
    #[arg(long, value_name = "DIR")]
    pub render_out: Option<PathBuf>,

    /// Overlay tint opacity in [0, 1] [default: 0.5]
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f32>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Directory of *.assign.json files written by `tokenize`
    #[arg(long, value_name = "DIR")]
    pub assignments_dir: PathBuf,

    /// CSV of sample_id,group for a per-group breakdown
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,

    /// Vocabulary size, enables the word-usage report
    #[arg(long, value_name = "V")]
    pub vocab_size: Option<usize>,

    /// Report directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sequence lengths including [CLS]; the first is the baseline [default: 197,148,132,99,59]
    #[arg(long, value_delimiter = ',', value_name = "L,..")]
    pub lengths: Option<Vec<u64>>,

    /// Batch sizes [default: 1,2,4,8,16,32]
    #[arg(long, value_delimiter = ',', value_name = "B,..")]
    pub batch_sizes: Option<Vec<u64>>,

    /// Model width [default: 768]
    #[arg(long, value_name = "D")]
    pub embed_dim: Option<u64>,

    /// Number of blocks [default: 12]
    #[arg(long)]
    pub depth: Option<u64>,

    /// Report directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InitEncoderArgs {
    /// Model width [default: 64]
    #[arg(long, value_name = "D")]
    pub embed_dim: Option<usize>,

    /// Number of blocks [default: 2]
    #[arg(long)]
    pub depth: Option<usize>,

    /// Attention heads [default: 4]
    #[arg(long)]
    pub heads: Option<usize>,

    /// Patch side in pixels [default: 16]
    #[arg(long, value_name = "P")]
    pub patch_size: Option<usize>,

    /// Image channels, 1 or 3 [default: 3]
    #[arg(long)]
    pub channels: Option<usize>,

    /// Longest sequence including [CLS] [default: 197]
    #[arg(long, value_name = "L")]
    pub max_tokens: Option<usize>,

    /// RNG seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Encoder file to write
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    /// Manifest written by an earlier run
    pub manifest: PathBuf,
}
