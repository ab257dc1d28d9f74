//! Subcommand implementations.

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sae_core::annotate::{Annotator, FileAnnotator, HeuristicAnnotator};
use sae_core::checkpoint::Checkpoint;
use sae_core::data::{parse_dataset, serialize_dataset, Example};
use sae_core::embed::layout_tokens;
use sae_core::gradsuite::full_suite;
use sae_core::graph::{graph_for_layout, EdgeTypes};
use sae_core::metrics::{evaluate, Predictions};
use sae_core::pipeline::{
    evaluate_selector, gold_reasoner_inputs, predict, reasoner_input, train_reasoner, train_selector, DocChoice,
    EmbedConfig, EpochStats, ReasonerModel, SelectorModel, TrainConfig,
};
use sae_core::synth::{generate, SynthConfig};
use serde_json::json;

use crate::config::{on_off, parse_named, RunConfig};
use crate::{Cli, Command, TrainArgs};

pub fn run(cli: &Cli, mut config: RunConfig) -> Result<ExitCode> {
    match &cli.command {
        Command::Synth { out, n, distractors, ratio } => {
            if let Some(n) = n {
                config.synth.n_examples = *n;
            }
            if let Some(d) = distractors {
                config.synth.n_distractors = *d;
            }
            if let Some(r) = ratio {
                config.synth.bridge_ratio = *r;
            }
            synth(&config.synth, out)
        }
        Command::TrainSelector { train, loss, scores, heads, mhsa } => {
            if let Some(v) = loss {
                config.selector.loss = parse_named("loss", v)?;
            }
            if let Some(v) = scores {
                config.selector.scores = parse_named("scores", v)?;
            }
            if let Some(v) = heads {
                config.selector.heads = *v;
            }
            if let Some(v) = mhsa {
                config.selector.mhsa = on_off(v);
            }
            apply_train(&mut config.train, train);
            cmd_train_selector(&config, train)
        }
        Command::TrainReasoner { train, hops, gamma, edges, attention, gnn } => {
            if let Some(v) = hops {
                config.reasoner.hops = *v;
            }
            if let Some(v) = gamma {
                config.reasoner.gamma = *v;
            }
            if let Some(v) = edges {
                config.reasoner.edges = EdgeTypes::parse(v).map_err(anyhow::Error::msg)?;
            }
            if let Some(v) = attention {
                config.reasoner.attention = v.parse().map_err(anyhow::Error::msg)?;
            }
            if let Some(v) = gnn {
                config.reasoner.gnn = on_off(v);
            }
            apply_train(&mut config.train, train);
            cmd_train_reasoner(&config, train, cli)
        }
        Command::Predict { data, selector, reasoner, out, k, oracle_docs } => {
            let k = k.unwrap_or(config.k);
            cmd_predict(&config, cli, data, selector.as_deref(), reasoner, out, k, *oracle_docs)
        }
        Command::Eval { pred, gold, by_type, out } => cmd_eval(pred, gold, *by_type, out.as_deref()),
        Command::Gradcheck { seeds } => cmd_gradcheck(config.seed, *seeds),
        Command::AttnDump { data, reasoner, example_id, out } => {
            cmd_attn_dump(&config, cli, data, reasoner, example_id, out.as_deref())
        }
        Command::GraphDump { data, example_id, edges, all_docs, out } => {
            let edges = match edges {
                Some(v) => EdgeTypes::parse(v).map_err(anyhow::Error::msg)?,
                None => config.reasoner.edges,
            };
            cmd_graph_dump(&config, cli, data, example_id, edges, *all_docs, out.as_deref())
        }
    }
}

fn apply_train(train: &mut TrainConfig, args: &TrainArgs) {
    if let Some(v) = args.epochs {
        train.epochs = v;
    }
    if let Some(v) = args.lr {
        train.lr = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
}

fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    parse_dataset(&raw).with_context(|| format!("parsing {}", path.display()))
}

fn find_example<'a>(examples: &'a [Example], id: &str) -> Result<&'a Example> {
    examples.iter().find(|e| e.id == id).with_context(|| format!("no example with id `{id}`"))
}

fn annotator(cli: &Cli) -> Result<Box<dyn Annotator>> {
    Ok(match &cli.global.annotations {
        Some(path) => Box::new(FileAnnotator::load(path).with_context(|| format!("loading {}", path.display()))?),
        None => Box::new(HeuristicAnnotator),
    })
}

/// The embedding a model was trained with, unless `--embeddings` overrides it.
fn model_embed(stored: &EmbedConfig, cli: &Cli, config: &RunConfig) -> EmbedConfig {
    if cli.global.embeddings.is_some() {
        config.embed.clone()
    } else {
        stored.clone()
    }
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn log_epoch(stage: &str) -> impl FnMut(EpochStats) + '_ {
    move |s| log::info!("{stage} epoch {} mean loss {:.6} over {} examples", s.epoch, s.mean_loss, s.examples)
}

fn synth(config: &SynthConfig, out: &Path) -> Result<ExitCode> {
    let train = generate(config).map_err(anyhow::Error::msg)?;
    let dev_config = SynthConfig {
        n_examples: config.n_examples / 5,
        id_prefix: format!("{}-dev", config.id_prefix),
        ..config.clone()
    };
    let dev = generate(&dev_config).map_err(anyhow::Error::msg)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("train.json"), serialize_dataset(&train, false))?;
    std::fs::write(out.join("dev.json"), serialize_dataset(&dev, false))?;
    println!("wrote {} train and {} dev examples to {}", train.len(), dev.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_selector(config: &RunConfig, args: &TrainArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let examples = load_dataset(&args.data)?;
    let source = config.embed.open()?;
    let selector_config = sae_core::selector::SelectorConfig { dim: source.dim(), ..config.selector };
    let model = train_selector(
        &examples,
        source.as_ref(),
        selector_config,
        config.embed.clone(),
        &config.train,
        &mut log_epoch("selector"),
    )?;
    model.to_checkpoint().save(&args.out)?;
    println!("saved selector to {} in {:.1}s", args.out.display(), start.elapsed().as_secs_f64());
    if let Some(dev) = &args.dev {
        let dev = load_dataset(dev)?;
        let (report, _) = evaluate_selector(&model, &dev, source.as_ref(), config.k)?;
        println!(
            "dev selector: EM_S {:.4} Recall_S {:.4} Acc_span {:.4} over {} examples",
            report.em_s, report.recall_s, report.acc_span, report.n
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train_reasoner(config: &RunConfig, args: &TrainArgs, cli: &Cli) -> Result<ExitCode> {
    let start = Instant::now();
    let examples = load_dataset(&args.data)?;
    let source = config.embed.open()?;
    let annotator = annotator(cli)?;
    let reasoner_config = sae_core::reasoner::ReasonerConfig { dim: source.dim(), ..config.reasoner };
    let inputs = gold_reasoner_inputs(&examples, source.as_ref(), annotator.as_ref(), &reasoner_config);
    if inputs.len() < examples.len() {
        log::warn!("{} of {} examples skipped", examples.len() - inputs.len(), examples.len());
    }
    let model = train_reasoner(&inputs, reasoner_config, config.embed.clone(), &config.train, &mut log_epoch("reasoner"))?;
    model.to_checkpoint().save(&args.out)?;
    println!("saved reasoner to {} in {:.1}s", args.out.display(), start.elapsed().as_secs_f64());
    if let Some(dev) = &args.dev {
        let dev = load_dataset(dev)?;
        let (preds, _) = predict(&dev, &DocChoice::Oracle, &model, source.as_ref(), annotator.as_ref());
        print!("{}", evaluate(&dev, &preds, true).table());
    }
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    config: &RunConfig,
    cli: &Cli,
    data: &Path,
    selector: Option<&Path>,
    reasoner: &Path,
    out: &Path,
    k: usize,
    oracle: bool,
) -> Result<ExitCode> {
    let examples = load_dataset(data)?;
    let reasoner = ReasonerModel::from_checkpoint(&Checkpoint::load(reasoner)?)?;
    let selector = match (selector, oracle) {
        (_, true) => None,
        (Some(path), false) => Some(SelectorModel::from_checkpoint(&Checkpoint::load(path)?)?),
        (None, false) => bail!("predict needs --selector <checkpoint> unless --oracle-docs is given"),
    };
    let embed = model_embed(&reasoner.embed, cli, config);
    if let Some(sel) = &selector {
        if model_embed(&sel.embed, cli, config) != embed {
            bail!("selector and reasoner checkpoints were trained on different embeddings");
        }
    }
    let source = embed.open()?;
    let annotator = annotator(cli)?;
    let choice = match &selector {
        Some(sel) => DocChoice::Selector(sel, k),
        None => DocChoice::Oracle,
    };
    let (preds, failures) = predict(&examples, &choice, &reasoner, source.as_ref(), annotator.as_ref());
    std::fs::write(out, serde_json::to_vec_pretty(&preds)?).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} predictions to {}", preds.answer.len(), out.display());
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            eprintln!("failed {}: {}", f.id, f.error);
        }
        eprintln!("{} of {} examples failed", failures.len(), examples.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_eval(pred: &Path, gold: &Path, by_type: bool, out: Option<&Path>) -> Result<ExitCode> {
    let gold = load_dataset(gold)?;
    let raw = std::fs::read(pred).with_context(|| format!("reading {}", pred.display()))?;
    let preds: Predictions = serde_json::from_slice(&raw).with_context(|| format!("parsing {}", pred.display()))?;
    let report = evaluate(&gold, &preds, by_type);
    print!("{}", report.table());
    emit_json(&serde_json::to_value(&report)?, out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(seed: u64, seeds: usize) -> Result<ExitCode> {
    let start = Instant::now();
    let outcomes = full_suite(seed, seeds)?;
    let mut ok = true;
    for o in &outcomes {
        ok &= o.passed;
        println!(
            "{} {:<28} seeds {:>3} max rel err {:.3e} ({})",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seeds,
            o.max_rel_error,
            o.worst_param
        );
    }
    println!("{} checks in {:.2}s", outcomes.len(), start.elapsed().as_secs_f64());
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_attn_dump(
    config: &RunConfig,
    cli: &Cli,
    data: &Path,
    reasoner: &Path,
    id: &str,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let examples = load_dataset(data)?;
    let ex = find_example(&examples, id)?;
    let model = ReasonerModel::from_checkpoint(&Checkpoint::load(reasoner)?)?;
    let source = model_embed(&model.embed, cli, config).open()?;
    let annotator = annotator(cli)?;
    let input = reasoner_input(0, ex, &ex.gold_indices(), source.as_ref(), annotator.as_ref(), &model.reasoner.config)?;
    let sentences = model.attention(&input)?;
    emit_json(&json!({ "id": ex.id, "question": ex.question, "sentences": sentences }), out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_graph_dump(
    config: &RunConfig,
    cli: &Cli,
    data: &Path,
    id: &str,
    edges: EdgeTypes,
    all_docs: bool,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let examples = load_dataset(data)?;
    let ex = find_example(&examples, id)?;
    let docs: Vec<usize> = if all_docs { (0..ex.documents.len()).collect() } else { ex.gold_indices() };
    let max_len = match &config.embed {
        EmbedConfig::Toy(toy) => toy.max_len,
        EmbedConfig::Interchange { .. } => usize::MAX,
    };
    let layout = layout_tokens(&ex.question, ex, &docs, max_len);
    let graph = graph_for_layout(ex, &layout, annotator(cli)?.as_ref(), edges);
    let nodes: Vec<_> = graph
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| json!({ "index": i, "title": n.title, "sentence": n.sentence, "doc": n.doc }))
        .collect();
    let edge_list: Vec<_> = graph.edges().into_iter().map(|(i, j, r)| json!({ "from": i, "to": j, "type": r })).collect();
    emit_json(&json!({ "id": ex.id, "edge_types": edges.to_string(), "nodes": nodes, "edges": edge_list }), out)?;
    Ok(ExitCode::SUCCESS)
}
