//! Run configuration: defaults, JSON file, then command-line flags.

use anyhow::{bail, Context, Result};
use sae_core::embed::ToyConfig;
use sae_core::pipeline::{EmbedConfig, TrainConfig};
use sae_core::reasoner::ReasonerConfig;
use sae_core::selector::SelectorConfig;
use sae_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

use crate::GlobalArgs;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub embed: EmbedConfig,
    pub selector: SelectorConfig,
    pub reasoner: ReasonerConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            embed: EmbedConfig::default(),
            selector: SelectorConfig::default(),
            reasoner: ReasonerConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            k: 2,
        }
    }
}

impl RunConfig {
    pub fn resolve(args: &GlobalArgs) -> Result<Self> {
        let mut config = match &args.config {
            Some(path) => {
                let raw = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_slice(&raw).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            config.seed = seed;
        }
        if let Some(path) = &args.embeddings {
            config.embed = EmbedConfig::Interchange { path: path.clone() };
        }
        match (args.embed.as_deref(), &config.embed) {
            (Some("toy"), EmbedConfig::Interchange { .. }) => config.embed = EmbedConfig::Toy(ToyConfig::default()),
            (Some("interchange"), EmbedConfig::Toy(_)) => bail!("--embed interchange needs --embeddings <file>"),
            _ => {}
        }
        if let EmbedConfig::Toy(toy) = &mut config.embed {
            if let Some(dim) = args.dim {
                toy.dim = dim;
            }
            if let Some(max_len) = args.max_len {
                toy.max_len = max_len;
            }
            toy.seed = config.seed;
        } else if args.dim.is_some() || args.max_len.is_some() {
            bail!("--dim and --max-len only apply to the toy embedder");
        }
        config.train.seed = config.seed;
        config.synth.seed = config.seed;
        if config.k == 0 {
            bail!("k must be at least 1");
        }
        Ok(config)
    }
}

/// Parses a flag value through the serde names of `T`.
pub fn parse_named<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .with_context(|| format!("invalid value `{value}` for --{flag}"))
}

pub fn on_off(value: &str) -> bool {
    value == "on"
}
