//! `sae`: synthesize data, train the selector and reasoner, predict and evaluate.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "sae", version, about = "Multi-hop question answering with document selection and joint answer and supporting-fact reasoning")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// JSON run configuration; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Embedding source: `toy` or `interchange`.
    #[arg(long, global = true, value_parser = ["toy", "interchange"])]
    pub embed: Option<String>,
    /// Interchange file, implies `--embed interchange`.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Toy embedding width.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Maximum token sequence length for the toy embedder.
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    /// Entity annotation file; the heuristic annotator fills any gaps.
    #[arg(long, global = true)]
    pub annotations: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Training dataset (JSON).
    #[arg(long)]
    pub data: PathBuf,
    /// Optional dev set scored after training.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic two-hop dataset (train.json and dev.json).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Training examples; the dev split gets a fifth as many.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        distractors: Option<usize>,
        /// Fraction of bridge questions.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// Train the document selector.
    TrainSelector {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, value_parser = ["pairwise", "bce"])]
        loss: Option<String>,
        #[arg(long, value_parser = ["012", "01"])]
        scores: Option<String>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long, value_parser = ["on", "off"])]
        mhsa: Option<String>,
    },
    /// Train the reasoner on gold documents.
    TrainReasoner {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Enabled edge types, for example `1,2,3`.
        #[arg(long)]
        edges: Option<String>,
        #[arg(long, value_parser = ["mixed", "self", "mean"])]
        attention: Option<String>,
        #[arg(long, value_parser = ["on", "off"])]
        gnn: Option<String>,
    },
    /// Select documents, reason over them and write a prediction file.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        selector: Option<PathBuf>,
        #[arg(long)]
        reasoner: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Documents handed to the reasoner.
        #[arg(long)]
        k: Option<usize>,
        /// Feed the annotated gold documents instead of the selector's choice.
        #[arg(long)]
        oracle_docs: bool,
    },
    /// Score a prediction file against a gold dataset.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Add per reasoning-type rows.
        #[arg(long)]
        by_type: bool,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks for every differentiable component.
    Gradcheck {
        /// Random instances per check.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Export per-sentence pooling weights of the reasoner for one example.
    AttnDump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reasoner: PathBuf,
        #[arg(long)]
        example_id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the sentence graph built over an example's gold documents.
    GraphDump {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        example_id: String,
        #[arg(long)]
        edges: Option<String>,
        /// Build over every document instead of the gold pair.
        #[arg(long)]
        all_docs: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = RunConfig::resolve(&cli.global).and_then(|config| commands::run(&cli, config));
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
