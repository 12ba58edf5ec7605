use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "neurolens",
    version,
    about = "Label vision-network neurons with open-vocabulary concepts"
)]
pub struct Cli {
    /// Worker threads; 0 or unset uses every core
    #[arg(long, global = true, env = "NEUROLENS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label every neuron of a layer with its best concept
    Dissect(DissectArgs),
    /// Compare labels with ground-truth class names
    Eval(EvalArgs),
    /// Relate final-layer weights to the similarity of the concepts they join
    Correlate(CorrelateArgs),
    /// Two-concept compositional labels
    #[command(subcommand)]
    Compose(ComposeCommand),
}

/// Scoring parameters shared by every command that scores concepts. Unset
/// values fall back to the config file, then to the defaults shown.
#[derive(Debug, Clone, Default, Args)]
pub struct ScoringArgs {
    /// Similarity function: cos, rank, wpmi or softwpmi [default: softwpmi]
    #[arg(long)]
    pub similarity: Option<String>,

    /// Softmax temperature [default: 2 for wpmi, 10 for softwpmi]
    #[arg(short = 'a', long)]
    pub temperature: Option<f64>,

    /// Weight of the concept prior [default: 0.6 for wpmi, 1 for softwpmi]
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Fraction of top images compared by rank reorder [default: 0.05]
    #[arg(long)]
    pub top_fraction: Option<f64>,

    /// Norm exponent of rank reorder [default: 3]
    #[arg(long)]
    pub p_norm: Option<f64>,

    /// Number of top images forming B_k for wpmi [default: 28]
    #[arg(long)]
    pub bk_size: Option<usize>,

    /// Soft membership of the top image [default: 0.998]
    #[arg(long)]
    pub schedule_start: Option<f64>,

    /// Soft membership at the cutoff rank [default: 0.97]
    #[arg(long)]
    pub schedule_end: Option<f64>,

    /// Last rank with nonzero soft membership [default: 100]
    #[arg(long)]
    pub schedule_cutoff: Option<usize>,

    /// Soft wpmi score above which a label is interpretable [default: 0.16]
    #[arg(long)]
    pub tau: Option<f64>,

    /// Concepts scored per block [default: 1024]
    #[arg(long)]
    pub concept_chunk: Option<usize>,

    /// Largest in-memory score matrix, in cells [default: 50000000]
    #[arg(long)]
    pub score_cap: Option<usize>,

    /// Concepts reported per neuron [default: 5]
    #[arg(long)]
    pub top_n: Option<usize>,

    /// L2-normalize embeddings before their product [default: on]
    #[arg(long, overrides_with = "no_normalize")]
    pub normalize: bool,

    /// Use raw embedding inner products
    #[arg(long, overrides_with = "normalize")]
    pub no_normalize: bool,

    /// Config file with the same keys, as JSON or key=value lines
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DissectArgs {
    /// Activation tensor (base path, K × N)
    #[arg(long)]
    pub activations: PathBuf,

    /// Probe-image embedding tensor (base path, N × d)
    #[arg(long)]
    pub image_emb: PathBuf,

    /// Concept embedding tensor (base path, M × d)
    #[arg(long)]
    pub text_emb: PathBuf,

    /// Concept list, one per line
    #[arg(long)]
    pub concepts: PathBuf,

    /// Output labels (JSON Lines)
    #[arg(long)]
    pub out: PathBuf,

    /// Also stream the full K × M score matrix to this tensor base path
    #[arg(long)]
    pub scores: Option<PathBuf>,

    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labels written by dissect
    #[arg(long)]
    pub labels: PathBuf,

    /// Ground-truth class name of every neuron, one per line
    #[arg(long)]
    pub gt_classes: PathBuf,

    /// Label embeddings in the first text space (base path)
    #[arg(long, requires = "gt_emb")]
    pub desc_emb: Option<PathBuf>,

    /// Class-name embeddings in the first text space (base path)
    #[arg(long, requires = "desc_emb")]
    pub gt_emb: Option<PathBuf>,

    /// Label embeddings in the sentence-encoder space (base path)
    #[arg(long, requires = "mpnet_gt_emb")]
    pub mpnet_desc_emb: Option<PathBuf>,

    /// Class-name embeddings in the sentence-encoder space (base path)
    #[arg(long, requires = "mpnet_desc_emb")]
    pub mpnet_gt_emb: Option<PathBuf>,

    /// Concept set used for dissection; enables top-1 accuracy
    #[arg(long)]
    pub concepts: Option<PathBuf>,

    /// Report (JSON)
    #[arg(long)]
    pub out: PathBuf,

    /// Per-neuron metrics (JSON Lines) [default: <out>.neurons.jsonl]
    #[arg(long)]
    pub per_neuron: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Final-layer weights (base path, C × K)
    #[arg(long)]
    pub weights: PathBuf,

    /// Embeddings of the neuron labels (base path, K × d)
    #[arg(long)]
    pub neuron_emb: PathBuf,

    /// Embeddings of the class names (base path, C × d)
    #[arg(long)]
    pub class_emb: PathBuf,

    /// Comma-separated k values for the top-k curve [default: powers of ten up to C × K]
    #[arg(long, value_delimiter = ',')]
    pub k_values: Option<Vec<usize>>,

    /// Curve output (CSV with header k,mean_cos)
    #[arg(long)]
    pub out: PathBuf,

    /// Also correlate only the largest weights
    #[arg(long)]
    pub top_n: Option<usize>,

    /// Correlation report (JSON) [default: <out>.correlation.json]
    #[arg(long)]
    pub correlation_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ComposeCommand {
    /// Pair each neuron's best concepts into candidate texts for embedding
    Candidates(CandidatesArgs),
    /// Score embedded candidates and pick the best per neuron
    Score(Box<ComposeScoreArgs>),
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    /// Score matrix written by `dissect --scores` (base path)
    #[arg(long)]
    pub scores: PathBuf,

    /// Concept list the scores refer to
    #[arg(long)]
    pub concepts: PathBuf,

    /// Best single concepts paired per neuron [default: 100]
    #[arg(long, default_value_t = neurolens::analysis::DEFAULT_COMPOSE_TOP_N, hide_default_value = true)]
    pub top_n: usize,

    /// Comma-separated neurons [default: every non-degenerate neuron]
    #[arg(long, value_delimiter = ',')]
    pub neurons: Option<Vec<usize>>,

    /// Pending candidates (JSON Lines of neuron and text)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ComposeScoreArgs {
    /// Activation tensor (base path, K × N)
    #[arg(long)]
    pub activations: PathBuf,

    /// Probe-image embedding tensor (base path, N × d)
    #[arg(long)]
    pub image_emb: PathBuf,

    /// Pending candidates written by `compose candidates`
    #[arg(long)]
    pub pending: PathBuf,

    /// Candidate text embeddings, one row per pending line (base path)
    #[arg(long)]
    pub candidate_emb: PathBuf,

    /// Single-concept list to score alongside the candidates
    #[arg(long, requires = "text_emb")]
    pub concepts: Option<PathBuf>,

    /// Single-concept embeddings (base path)
    #[arg(long, requires = "concepts")]
    pub text_emb: Option<PathBuf>,

    /// Outcomes (JSON Lines, one per neuron)
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub scoring: ScoringArgs,
}
