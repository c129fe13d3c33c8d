//! `rcts` command-line interface.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rcts_core::harness::{EvalConfigSnapshot, EvalMethod, EvalOptions};
use rcts_core::mcts::{ActionSpace, SearchConfig, Searcher};
use rcts_core::rewards::{HeuristicEvaluator, RewardConfig};
use rcts_core::{
    build_index, build_multiple_choice_variant, build_reasoning_context, embed, parse_kb_jsonl,
    parse_mcq_sources, read_index, retrieve_top_n, run_eval, save_kb_jsonl, write_index,
    EmbeddingIndex, GeneratorBackend, HashEmbedder, HttpBackend, KbStore, MockBackend, Query,
    ReasoningConfig, SearchResult, TemplateId,
};

#[derive(Parser)]
#[command(name = "rcts", version, about = "Retrieval-augmented re-ranking for in-context examples")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Knowledge-base operations.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Embedding-index operations.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Score the index against a query and print the Top-N entries.
    Retrieve(RetrieveArgs),
    /// Re-rank retrieved examples for one query and print the result.
    Rerank(RerankArgs),
    /// Batch-evaluate methods over a dataset and write a JSON report.
    Eval(EvalArgs),
    /// Build a multiple-choice dataset variant from labeled statements.
    McqBuild(McqBuildArgs),
}

#[derive(Subcommand)]
enum KbCommand {
    /// Validate a JSONL dataset and write it as a knowledge base.
    Build {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate reasoning contexts for entries that lack one.
    Reason(ReasonArgs),
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Embed every entry and write the binary index.
    Build {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// Generation backend.
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Chat-completions endpoint base URL (http backend).
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the http backend.
    #[arg(long, default_value = "default")]
    model: String,
    /// JSONL rule script (mock backend).
    #[arg(long)]
    mock_script: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Http,
    Mock,
}

impl BackendArgs {
    fn build(&self) -> Result<Box<dyn GeneratorBackend>> {
        match self.backend {
            BackendKind::Mock => {
                let path = self
                    .mock_script
                    .as_ref()
                    .context("--mock-script is required with --backend mock")?;
                let file = File::open(path)
                    .with_context(|| format!("cannot open mock script {}", path.display()))?;
                Ok(Box::new(MockBackend::from_reader(BufReader::new(file))?))
            }
            BackendKind::Http => {
                let endpoint = self
                    .endpoint
                    .as_ref()
                    .context("--endpoint is required with --backend http")?;
                Ok(Box::new(HttpBackend::new(endpoint, &self.model)?))
            }
        }
    }

    fn name(&self) -> &'static str {
        match self.backend {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    /// Examples per prompt (tree depth).
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Action-space size retrieved per query.
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Simulation budget per query.
    #[arg(long, default_value_t = 10)]
    rollouts: usize,
    /// Weight of the self-consistency reward.
    #[arg(long, default_value_t = 0.2)]
    alpha: f64,
    /// Exploration constant.
    #[arg(long, default_value_t = rcts_core::mcts::DEFAULT_EXPLORATION)]
    c: f64,
    /// Division guard in the exploration term.
    #[arg(long, default_value_t = rcts_core::mcts::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Children per node.
    #[arg(long, default_value_t = 3)]
    max_width: usize,
    /// Disable the early-stopping comparison.
    #[arg(long, default_value_t = false)]
    no_early_stop: bool,
    /// Base seed for all randomized choices.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prompt template.
    #[arg(long, default_value = "scienceqa")]
    template: String,
    /// Include reasoning contexts in example turns.
    #[arg(long, default_value_t = false)]
    with_reasoning: bool,
}

impl SearchArgs {
    fn to_config(&self) -> Result<SearchConfig> {
        let template: TemplateId = self.template.parse()?;
        Ok(SearchConfig {
            k: self.k,
            n: self.n,
            max_width: self.max_width,
            rollouts: self.rollouts,
            c: self.c,
            epsilon: self.epsilon,
            early_stop: !self.no_early_stop,
            rng_seed: self.seed,
            reward: RewardConfig {
                alpha: self.alpha,
                ..RewardConfig::default()
            },
            template,
            with_reasoning: self.with_reasoning,
            ..SearchConfig::default()
        })
    }
}

#[derive(Args)]
struct ReasonArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long)]
    image: Option<String>,
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// Entry id to exclude (the query's own source, if indexed).
    #[arg(long)]
    exclude: Option<String>,
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long)]
    image: Option<String>,
    /// Write a JSON dump of the search tree to this path.
    #[arg(long)]
    dump_tree: Option<PathBuf>,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    kb: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Comma-separated methods: zero_shot, icl_random, vanilla_rag, rcts.
    #[arg(long, value_delimiter = ',', required = true)]
    method: Vec<String>,
    /// Report output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    search: SearchArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct McqBuildArgs {
    /// JSONL of labeled records {id?, image?, statement, relation}.
    #[arg(long)]
    dataset: PathBuf,
    /// Relation vocabulary, one per line. Defaults to the distinct relations
    /// found in the dataset.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_store(path: &Path) -> Result<KbStore> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_kb_jsonl(BufReader::new(file))
        .with_context(|| format!("while parsing {}", path.display()))
}

fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(read_index(BufReader::new(file))?)
}

fn write_store(store: &KbStore, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    save_kb_jsonl(store, &mut writer)?;
    writer.flush()?;
    Ok(())
}

fn print_search_result(result: &SearchResult) {
    println!("re-ranked context ({} examples):", result.branch.len());
    for (i, action) in result.branch.iter().enumerate() {
        let question = action.entry.question.replace('\n', " ");
        let short: String = question.chars().take(72).collect();
        println!("  {}. {} (sim {:.4}) {}", i + 1, action.entry.id, action.sim, short);
    }
    println!(
        "answer: {}",
        result.response.answer.as_deref().unwrap_or("<unparsed>")
    );
    println!(
        "reward: Q = {:.4} (self {:.4}, mutual {:.4})",
        result.reward.q_combined, result.reward.q_self, result.reward.q_mutual
    );
    println!("termination: {}", result.termination);
    println!("rollouts_used: {}", result.rollouts_used);
    println!("tree_size: {}", result.tree_size);
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Kb { command } => match command {
            KbCommand::Build { dataset, out } => {
                let store = load_store(&dataset)?;
                write_store(&store, &out)?;
                println!("wrote {} entries to {}", store.len(), out.display());
            }
            KbCommand::Reason(args) => {
                let mut store = load_store(&args.kb)?;
                let backend = args.backend.build()?;
                let cfg = ReasoningConfig::default();
                let mut built = 0usize;
                let mut skipped = 0usize;
                for entry in store.iter_mut() {
                    if entry.reasoning.is_some() {
                        skipped += 1;
                        continue;
                    }
                    let outcome = build_reasoning_context(entry, backend.as_ref(), &cfg)?;
                    println!("{}: score {:.2}", outcome.entry_id, outcome.score);
                    built += 1;
                }
                write_store(&store, &args.out)?;
                println!(
                    "reasoning built for {built} entries ({skipped} already had one) -> {}",
                    args.out.display()
                );
            }
        },
        Command::Index { command } => match command {
            IndexCommand::Build { kb, out } => {
                let store = load_store(&kb)?;
                let provider = HashEmbedder::default();
                let index: EmbeddingIndex = build_index(&store, &provider)?;
                let file = File::create(&out)
                    .with_context(|| format!("cannot create {}", out.display()))?;
                let mut writer = BufWriter::new(file);
                write_index(&index, &mut writer)?;
                writer.flush()?;
                println!("indexed {} entries (dim {}) -> {}", index.len(), index.dim(), out.display());
            }
        },
        Command::Retrieve(args) => {
            let index = load_index(&args.index)?;
            let provider = HashEmbedder::default();
            let query = embed(&provider, &args.question, args.image.as_deref())?;
            let hits = retrieve_top_n(&query, &index, args.n, args.exclude.as_deref())?;
            println!("{:<5} {:<24} {:>12} {:>8}", "rank", "id", "raw", "norm");
            for hit in &hits {
                println!(
                    "{:<5} {:<24} {:>12.4} {:>8.4}",
                    hit.rank, hit.entry_id, hit.raw_score, hit.norm_score
                );
            }
        }
        Command::Rerank(args) => {
            let store = load_store(&args.kb)?;
            let index = load_index(&args.index)?;
            let cfg = args.search.to_config()?;
            let backend = args.backend.build()?;
            let provider = HashEmbedder::default();
            let query_emb = embed(&provider, &args.question, args.image.as_deref())?;
            let hits = retrieve_top_n(&query_emb, &index, cfg.n, None)?;
            let space = ActionSpace::from_hits(&hits, &store)?;
            let query = Query::new(args.question.clone(), args.image.clone());
            let evaluator =
                HeuristicEvaluator::new(backend.as_ref(), &space, cfg.reward.clone(), cfg.template)?;
            let mut searcher = Searcher::new(&query, &space, backend.as_ref(), &cfg, evaluator)?;
            let result = searcher.run()?;
            print_search_result(&result);
            if let Some(path) = args.dump_tree {
                let dump = searcher.tree().to_json(&space);
                std::fs::write(&path, serde_json::to_string_pretty(&dump)?)
                    .with_context(|| format!("cannot write {}", path.display()))?;
                println!("tree dump -> {}", path.display());
            }
        }
        Command::Eval(args) => {
            let queries = load_store(&args.dataset)?;
            let kb = load_store(&args.kb)?;
            let index = load_index(&args.index)?;
            let cfg = args.search.to_config()?;
            let backend = args.backend.build()?;
            let provider = HashEmbedder::default();
            let methods = args
                .method
                .iter()
                .map(|m| m.parse::<EvalMethod>())
                .collect::<rcts_core::Result<Vec<_>>>()?;
            if methods.is_empty() {
                bail!("no methods given");
            }
            let snapshot = EvalConfigSnapshot {
                methods: methods.clone(),
                k: cfg.k,
                n: cfg.n,
                rollouts: cfg.rollouts,
                max_width: cfg.max_width,
                alpha: cfg.reward.alpha,
                c: cfg.c,
                epsilon: cfg.epsilon,
                seed: args.search.seed,
                template: cfg.template.to_string(),
                with_reasoning: cfg.with_reasoning,
                backend: args.backend.name().to_string(),
                dataset: args.dataset.display().to_string(),
                kb: args.kb.display().to_string(),
                index: args.index.display().to_string(),
            };
            let opts = EvalOptions {
                methods,
                search: cfg,
                seed: args.search.seed,
            };
            let report = run_eval(
                &queries,
                &kb,
                &index,
                &provider,
                backend.as_ref(),
                &opts,
                snapshot,
            )?;
            std::fs::write(&args.out, report.to_json_pretty()?)
                .with_context(|| format!("cannot write {}", args.out.display()))?;
            let total_ms: f64 = report.records.iter().map(|r| r.wall_time_ms).sum();
            for (method, accuracy) in &report.accuracy {
                println!("{method}: {accuracy:.2}%");
            }
            println!(
                "{} records in {:.1} ms -> {}",
                report.records.len(),
                total_ms,
                args.out.display()
            );
        }
        Command::McqBuild(args) => {
            let file = File::open(&args.dataset)
                .with_context(|| format!("cannot open {}", args.dataset.display()))?;
            let records = parse_mcq_sources(BufReader::new(file))?;
            let vocabulary: Vec<String> = match &args.vocab {
                Some(path) => std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read {}", path.display()))?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                None => {
                    let mut relations: Vec<String> =
                        records.iter().map(|r| r.relation.clone()).collect();
                    relations.sort();
                    relations.dedup();
                    relations
                }
            };
            let entries = build_multiple_choice_variant(&records, &vocabulary, args.seed)?;
            let mut store = KbStore::new();
            for entry in entries {
                store.insert(entry)?;
            }
            write_store(&store, &args.out)?;
            println!(
                "built {} multiple-choice records ({} relations) -> {}",
                store.len(),
                vocabulary.len(),
                args.out.display()
            );
        }
    }
    Ok(())
}
