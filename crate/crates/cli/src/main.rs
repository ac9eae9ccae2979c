//! Command-line entry point: build an index from a corpus, query it, run
//! batch evaluations, and generate the synthetic multihop benchmark.

mod config;

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use layergraph::embed::{EmbedRequest, Embedder, Instruction};
use layergraph::eval::{read_query_records, run_benchmark, EvalReport, Qrels};
use layergraph::graph::{build_graph, LayeredComponentGraph};
use layergraph::index::{index_exists, load_index, save_index};
use layergraph::retrieval::{self, RetrievalMode, TraversalParams};
use layergraph::synth::{self, SynthConfig};
use layergraph::{parse_corpus, resolve_links, write_corpus};

use config::Config;

#[derive(Parser)]
#[command(name = "layergraph", about = "Layered component graph retrieval engine", version)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index directory from a corpus file.
    Build(BuildArgs),
    /// Run one query against an index.
    Query(QueryArgs),
    /// Evaluate a query set against qrels and write a report.
    Eval(EvalArgs),
    /// Generate the synthetic multihop benchmark.
    GenSynthetic(GenArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    /// Overwrite an existing index.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long = "n-i")]
    n_i: Option<usize>,
    #[arg(long = "n-ret")]
    n_ret: Option<usize>,
    /// Show the matching subcomponent for every subquery.
    #[arg(long)]
    explain: bool,
    /// Query text.
    text: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long = "n-i")]
    n_i: Option<usize>,
    #[arg(long = "n-ret")]
    n_ret: Option<usize>,
    /// Also report the hit-rate reading of Recall@K.
    #[arg(long)]
    hit_rate: bool,
    /// Sweep one parameter, e.g. `b=1,2,3,4,5,10,20,30` or `n_i=0,1,2`.
    #[arg(long)]
    sweep: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for corpus.jsonl and queries.jsonl.
    #[arg(long, default_value = "synthetic")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    distractors_max: usize,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker pool")?;
    }
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Build(args) => cmd_build(config, args),
        Command::Query(args) => cmd_query(config, args),
        Command::Eval(args) => cmd_eval(config, args),
        Command::GenSynthetic(args) => cmd_gen_synthetic(args),
    }
}

fn cmd_build(mut config: Config, args: BuildArgs) -> Result<()> {
    if let Some(corpus) = args.corpus {
        config.paths.corpus = corpus;
    }
    if let Some(index) = args.index {
        config.paths.index = index;
    }
    let corpus_path = &config.paths.corpus;
    if !corpus_path.is_file() {
        bail!("corpus file {} does not exist", corpus_path.display());
    }
    let index_path = &config.paths.index;
    if index_exists(index_path) && !args.force {
        bail!(
            "index {} already exists; pass --force to rebuild",
            index_path.display()
        );
    }

    let file = fs::File::open(corpus_path)
        .with_context(|| format!("opening corpus {}", corpus_path.display()))?;
    let corpus = parse_corpus(BufReader::new(file))?;
    let links = resolve_links(&corpus);
    if links.dropped > 0 {
        eprintln!("warning: dropped {} dangling links", links.dropped);
    }
    let embedder = config.build_embedder()?;
    let (graph, report) = build_graph(&corpus, &links, embedder.as_ref())?;
    save_index(&graph, index_path)?;

    let c = report.counts;
    println!(
        "built index {}: {} docs, {} components, {} subcomponents, {} intra edges, {} inter edges, {} containment edges",
        index_path.display(),
        c.docs,
        c.components,
        c.subcomponents,
        c.e0_intra,
        c.e0_inter,
        c.e_down
    );
    let t = report.timings;
    eprintln!(
        "stage timings: nodes {:.1} ms, edges {:.1} ms, embeddings {:.1} ms (total {:.1} ms)",
        t.node_generation_ms,
        t.edge_generation_ms,
        t.embedding_generation_ms,
        t.total_ms()
    );
    Ok(())
}

/// Load the index and reject an embedder config that does not match the one
/// the index was built with.
fn load_checked(config: &Config) -> Result<(LayeredComponentGraph, Box<dyn Embedder>)> {
    let graph = load_index(&config.paths.index)
        .with_context(|| format!("loading index {}", config.paths.index.display()))?;
    let embedder = config.build_embedder()?;
    let configured = embedder.info();
    let built_with = &graph.manifest().embedder;
    if configured != *built_with {
        bail!(
            "index was built with embedder {} (d={}, seeds {:#x}/{:#x}), config requests {} (d={}, seeds {:#x}/{:#x})",
            built_with.id,
            built_with.dimension,
            built_with.index_seed,
            built_with.sign_seed,
            configured.id,
            configured.dimension,
            configured.index_seed,
            configured.sign_seed
        );
    }
    Ok((graph, embedder))
}

fn apply_retrieval_flags(
    config: &mut Config,
    mode: Option<&str>,
    b: Option<usize>,
    n_i: Option<usize>,
    n_ret: Option<usize>,
) {
    if let Some(mode) = mode {
        config.retrieval.mode = mode.to_string();
    }
    if let Some(b) = b {
        config.retrieval.beam_width = b;
    }
    if let Some(n_i) = n_i {
        config.retrieval.iterations = n_i;
    }
    if let Some(n_ret) = n_ret {
        config.retrieval.n_ret = n_ret;
    }
}

fn cmd_query(mut config: Config, args: QueryArgs) -> Result<()> {
    if let Some(index) = args.index {
        config.paths.index = index;
    }
    apply_retrieval_flags(&mut config, args.mode.as_deref(), args.b, args.n_i, args.n_ret);
    let params = config.traversal_params()?;
    let (graph, embedder) = load_checked(&config)?;

    let start = Instant::now();
    let result = match params.mode {
        RetrievalMode::Full => {
            let decomposer = config.build_decomposer()?;
            let dq = decomposer.decompose(&args.text, embedder.as_ref())?;
            if dq.fallback {
                eprintln!("warning: llm decomposition failed, used rule backend");
            }
            if args.explain {
                for (i, sub) in dq.subqueries.iter().enumerate() {
                    eprintln!("subquery {i}: [{}] {}", sub.label, sub.text);
                }
            }
            retrieval::retrieve(&graph, &dq, &params)?
        }
        _ => {
            let coarse = embedder.embed(&EmbedRequest::new(args.text.clone(), Instruction::None))?;
            match params.mode {
                RetrievalMode::NoQd => {
                    retrieval::retrieve_rerank(&graph, &coarse, params.beam_width, params.n_ret)?
                }
                _ => retrieval::retrieve_knn(&graph, &coarse, params.n_ret)?,
            }
        }
    };

    for (rank, entry) in result.entries.iter().enumerate() {
        let title = graph.title_of(&entry.comp_id).unwrap_or("");
        println!("{:>2}. {:<20} {:>9.6}  {}", rank + 1, entry.comp_id, entry.score, title);
        if args.explain {
            for m in &entry.matches {
                let content = graph
                    .node_by_id(&m.sub_id)
                    .map(|n| n.content.as_str())
                    .unwrap_or("");
                println!("      q{} -> {} ({:.6}): {}", m.subquery, m.sub_id, m.similarity, content);
            }
        }
    }
    eprintln!(
        "timings: seed {:.3} ms, traversal {:.3} ms, total {:.3} ms (wall {:.3} ms)",
        result.timings.seed_ms,
        result.timings.traversal_ms,
        result.timings.total_ms,
        start.elapsed().as_secs_f64() * 1e3
    );
    Ok(())
}

/// `b=1,2,3` or `n_i=0,1,2` into (key, values).
fn parse_sweep(spec: &str) -> Result<(String, Vec<usize>)> {
    let (key, values) = spec
        .split_once('=')
        .with_context(|| format!("sweep spec {spec:?} must look like b=1,2,3"))?;
    let key = key.trim();
    if key != "b" && key != "n_i" {
        bail!("sweep parameter must be b or n_i, got {key:?}");
    }
    let values: Vec<usize> = values
        .split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad sweep value {v:?}")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    Ok((key.to_string(), values))
}

fn cmd_eval(mut config: Config, args: EvalArgs) -> Result<()> {
    if let Some(index) = args.index {
        config.paths.index = index;
    }
    if let Some(queries) = args.queries {
        config.paths.queries = queries;
    }
    if let Some(qrels) = args.qrels {
        config.paths.qrels = qrels;
    }
    if let Some(report) = args.report {
        config.paths.report = report;
    }
    if args.hit_rate {
        config.eval.hit_rate = true;
    }
    apply_retrieval_flags(&mut config, args.mode.as_deref(), args.b, args.n_i, args.n_ret);

    let (graph, embedder) = load_checked(&config)?;
    let queries_file = fs::File::open(&config.paths.queries)
        .with_context(|| format!("opening queries {}", config.paths.queries.display()))?;
    let queries = read_query_records(BufReader::new(queries_file))?;
    let qrels_file = fs::File::open(&config.paths.qrels)
        .with_context(|| format!("opening qrels {}", config.paths.qrels.display()))?;
    let qrels = Qrels::from_records(&read_query_records(BufReader::new(qrels_file))?);
    let decomposer = config.build_decomposer()?;
    let eval_params = config.eval_params();
    let base = config.traversal_params()?;

    let run_one = |params: &TraversalParams| -> Result<EvalReport> {
        Ok(run_benchmark(
            &graph,
            &queries,
            &qrels,
            params,
            &eval_params,
            &decomposer,
            embedder.as_ref(),
        )?)
    };

    let report_json = match &args.sweep {
        None => {
            let report = run_one(&base)?;
            print!("{}", report.render_table());
            eprintln!("{}", report.timings_summary());
            report.to_json()
        }
        Some(spec) => {
            let (key, values) = parse_sweep(spec)?;
            let mut rows = Vec::new();
            println!(
                "{:<8} {:>10} {:>10} {:>10}",
                key,
                format!("R@{}", eval_params.recall_k),
                format!("MRR@{}", eval_params.mrr_k),
                "evaluated"
            );
            for value in values {
                let mut params = base;
                if key == "b" {
                    params.beam_width = value;
                } else {
                    params.iterations = value;
                }
                let report = run_one(&params)?;
                println!(
                    "{:<8} {:>10.4} {:>10.4} {:>10}",
                    value, report.mean_recall, report.mean_mrr, report.evaluated
                );
                eprintln!("{key}={value}: {}", report.timings_summary());
                rows.push(serde_json::json!({ "value": value, "report": report }));
            }
            serde_json::to_string_pretty(&serde_json::json!({
                "sweep": key,
                "rows": rows,
            }))?
        }
    };

    if let Some(parent) = config.paths.report.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&config.paths.report, report_json)
        .with_context(|| format!("writing report {}", config.paths.report.display()))?;
    eprintln!("report written to {}", config.paths.report.display());
    Ok(())
}

fn cmd_gen_synthetic(args: GenArgs) -> Result<()> {
    let bench = synth::generate(&SynthConfig {
        queries: args.queries,
        seed: args.seed,
        distractors_max: args.distractors_max,
    });
    fs::create_dir_all(&args.out)?;
    let corpus_path = args.out.join("corpus.jsonl");
    let corpus_file = fs::File::create(&corpus_path)?;
    write_corpus(&bench.corpus, BufWriter::new(corpus_file))?;
    let queries_path = args.out.join("queries.jsonl");
    let mut lines = String::new();
    for record in &bench.queries {
        lines.push_str(&serde_json::to_string(record)?);
        lines.push('\n');
    }
    fs::write(&queries_path, lines)?;
    println!(
        "wrote {} documents to {} and {} queries to {} (queries file doubles as qrels)",
        bench.corpus.len(),
        corpus_path.display(),
        bench.queries.len(),
        queries_path.display()
    );
    Ok(())
}
