use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use mmground_core::assembly::{
    compute_stats, decorate, ground_phrases, read_graph, read_groundings, unique_phrases, write_graph, write_groundings,
    write_triples,
};
use mmground_core::bench::run_pruning_bench;
use mmground_core::concreteness::ConcretenessLexicon;
use mmground_core::config::{ConfigError, PipelineConfig};
use mmground_core::downstream::{retrieve_for_captioning, retrieve_for_vqa, ImageAggregate, PhraseTable};
use mmground_core::embedding::{read_store, Embedding};
use mmground_core::noun_index::{read_captions, save_index, LexiconTagger, NounIndex};
use mmground_core::pipeline::{self, require, LoadedInputs, PipelineError};
use mmground_core::synth::{demo_fixture, PruningCorpusConfig};
use mmground_core::SkipReport;

#[derive(Parser, Debug)]
#[command(name = "mmground", version, about = "Ground commonsense triples in images")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true, env = "MMGROUND_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    triples: Option<PathBuf>,
    #[arg(long, global = true)]
    captions: Option<PathBuf>,
    /// EMB1 file; repeat to merge several stores.
    #[arg(long, global = true)]
    embeddings: Vec<PathBuf>,
    #[arg(long, global = true)]
    lexicon: Option<PathBuf>,
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    /// Fetch manifest (`query \t image_id \t uri`).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    index: Option<PathBuf>,
    #[arg(long, global = true)]
    groundings: Option<PathBuf>,
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    concreteness_threshold: Option<f64>,
    #[arg(long, global = true)]
    sim_threshold: Option<f32>,
    #[arg(long, global = true)]
    retain_k: Option<usize>,
    #[arg(long, global = true)]
    prefilter_m: Option<usize>,
    #[arg(long, global = true)]
    fetch_max: Option<usize>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and filter a triple file; writes accepted triples.
    Ingest,
    /// Build the noun index from captions and embeddings.
    Index,
    /// Ground every unique phrase; writes one JSON grounding per line.
    Ground,
    /// Join triples with groundings into the multimodal graph.
    Assemble,
    /// Ingest, index, ground and assemble in one process.
    Run,
    /// Per-relation concreteness and search-rate table.
    Stats,
    /// Rank graph phrases for a downstream query.
    Retrieve(RetrieveArgs),
    /// Brute-force vs indexed similarity counts on a synthetic corpus.
    Bench(BenchArgs),
    /// Write the small demo fixture into `--out`.
    Synth,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Vqa,
    Caption,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    #[arg(long, value_enum, default_value = "vqa")]
    mode: Mode,
    /// Image embedding: an EMB1 file or whitespace/comma separated floats.
    #[arg(long)]
    image: String,
    /// Question embedding (VQA mode), same forms as `--image`.
    #[arg(long)]
    question: Option<String>,
    /// Record id to take from an EMB1 query file; defaults to its first record.
    #[arg(long)]
    query_id: Option<String>,
    #[arg(short, long, default_value_t = 5)]
    k: usize,
    /// Aggregate over a phrase's images in caption mode.
    #[arg(long, default_value = "max", value_parser = ["max", "mean"])]
    aggregate: String,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 10_000)]
    images: usize,
    #[arg(long, default_value_t = 50)]
    vocab: usize,
    #[arg(long, default_value_t = 25)]
    focus_nouns: usize,
    #[arg(long, default_value_t = 125)]
    focus_images: usize,
    #[arg(long, default_value_t = 200)]
    queries: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Missing(String),
    Invalid(String),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Missing(_) => 2,
            Failure::Invalid(_) => 3,
            Failure::Runtime(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Missing(_) => "missing-input",
            Failure::Invalid(_) => "invalid-config",
            Failure::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Missing(m) | Failure::Invalid(m) => m.clone(),
            Failure::Runtime(e) => format!("{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<PipelineError>() {
            Ok(p) if p.is_missing_input() => Failure::Missing(p.to_string()),
            Ok(p) if p.is_validation() => Failure::Invalid(p.to_string()),
            Ok(p) => Failure::Runtime(p.into()),
            Err(e) => match e.downcast::<ConfigError>() {
                Ok(c) => Failure::Invalid(c.to_string()),
                Err(e) => Failure::Runtime(e),
            },
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        anyhow::Error::from(e).into()
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn effective_config(g: &GlobalArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Missing(format!("config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let set_path = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set_path(&mut cfg.triples, &g.triples);
    set_path(&mut cfg.captions, &g.captions);
    set_path(&mut cfg.lexicon, &g.lexicon);
    set_path(&mut cfg.stopwords, &g.stopwords);
    set_path(&mut cfg.manifest, &g.manifest);
    set_path(&mut cfg.index, &g.index);
    set_path(&mut cfg.groundings, &g.groundings);
    set_path(&mut cfg.graph, &g.graph);
    set_path(&mut cfg.out, &g.out);
    if !g.embeddings.is_empty() {
        cfg.embeddings.clone_from(&g.embeddings);
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.workers {
        cfg.worker_bound = v;
    }
    if let Some(v) = g.concreteness_threshold {
        cfg.concreteness_threshold = v;
    }
    if let Some(v) = g.sim_threshold {
        cfg.sim_threshold = v;
    }
    if let Some(v) = g.retain_k {
        cfg.retain_k = v;
    }
    if let Some(v) = g.prefilter_m {
        cfg.prefilter_m = v;
    }
    if let Some(v) = g.fetch_max {
        cfg.fetch_max = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Opens `path` for writing, or stdout when absent.
fn sink(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn open(what: &'static str, path: Option<&PathBuf>) -> Result<BufReader<File>, Failure> {
    let p = require(what, path)?;
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| Failure::Runtime(anyhow!("{}: {e}", p.display())))
}

fn ingest(cfg: &PipelineConfig) -> Outcome {
    let (triples, report) = pipeline::load_triples(cfg)?;
    eprintln!("accepted {} triples; rejected {} ({report})", triples.len(), report.rejected());
    write_triples(&triples, sink(cfg.out.as_ref())?).context("writing triples")?;
    Ok(())
}

fn index(cfg: &PipelineConfig) -> Outcome {
    let captions = read_captions(open("captions", cfg.captions.as_ref())?).context("reading captions")?;
    let store = pipeline::load_embeddings(cfg)?;
    let (index, report) = NounIndex::build(&captions, &LexiconTagger::english(), &store, cfg.worker_bound).context("building index")?;
    if !report.missing_embeddings.is_empty() {
        warn!("{} nouns have no embedding and are excluded from the prefilter", report.missing_embeddings.len());
    }
    let out = cfg.index.as_ref().or(cfg.out.as_ref()).ok_or_else(|| Failure::Missing("missing output path: --index or --out".into()))?;
    save_index(&index, out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("indexed {} nouns ({} embedded) over {} captions", index.noun_count(), index.embedded_noun_count(), captions.len());
    Ok(())
}

fn ground(cfg: &PipelineConfig) -> Outcome {
    let inputs = LoadedInputs::load(cfg)?;
    let phrases = unique_phrases(&inputs.triples);
    let groundings = ground_phrases(&phrases, &inputs.resources(), &cfg.grounding_params());
    let skips = SkipReport::from_groundings(&groundings);
    for (phrase, reason) in &skips.entries {
        info!("skipped {phrase:?}: {reason}");
    }
    let web = groundings.iter().filter(|g| g.route.is_web()).count();
    eprintln!("grounded {} phrases ({web} via web search, {} without images)", groundings.len(), skips.len());
    write_groundings(&groundings, sink(cfg.groundings.as_ref().or(cfg.out.as_ref()))?).context("writing groundings")?;
    Ok(())
}

fn assemble(cfg: &PipelineConfig) -> Outcome {
    let (triples, _) = pipeline::load_triples(cfg)?;
    let groundings = read_groundings(open("groundings", cfg.groundings.as_ref())?).context("reading groundings")?;
    let graph = decorate(&triples, &groundings);
    write_graph(&graph, sink(cfg.graph.as_ref().or(cfg.out.as_ref()))?).context("writing graph")?;
    eprintln!("assembled {} multimodal triples", graph.len());
    Ok(())
}

fn run(cfg: &PipelineConfig) -> Outcome {
    let out = pipeline::run_end_to_end(cfg)?;
    write_graph(&out.graph, sink(cfg.graph.as_ref().or(cfg.out.as_ref()))?).context("writing graph")?;
    eprintln!("assembled {} multimodal triples; {} phrases without images", out.graph.len(), out.skips.len());
    Ok(())
}

fn stats(cfg: &PipelineConfig) -> Outcome {
    let graph = read_graph(open("graph", cfg.graph.as_ref())?).context("reading graph")?;
    let lexicon = match &cfg.lexicon {
        Some(_) => pipeline::load_lexicon(cfg)?,
        None => ConcretenessLexicon::new(pipeline::load_stopwords(cfg)?),
    };
    let table = compute_stats(&graph, &lexicon).to_table();
    sink(cfg.out.as_ref())?.write_all(table.as_bytes()).context("writing stats")?;
    Ok(())
}

/// Parses a query embedding given inline or as an EMB1 file.
fn query_embedding(arg: &str, id: Option<&str>) -> Result<Embedding, Failure> {
    let path = Path::new(arg);
    if path.is_file() {
        let mut bytes = Vec::new();
        File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).context("reading query embedding")?;
        let store = read_store(bytes.as_slice()).with_context(|| format!("reading {}", path.display()))?;
        let emb = match id {
            Some(id) => store.get(id),
            None => store.ids().first().and_then(|id| store.get(id)),
        };
        return emb.ok_or_else(|| Failure::Missing(format!("{}: no query record {}", path.display(), id.unwrap_or("(empty file)"))));
    }
    let values = arg
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f32>)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Missing(format!("`{arg}` is neither a file nor a list of numbers")))?;
    Embedding::new(values).map_err(|e| Failure::Invalid(e.to_string()))
}

fn retrieve(cfg: &PipelineConfig, args: &RetrieveArgs) -> Outcome {
    let graph = read_graph(open("graph", cfg.graph.as_ref())?).context("reading graph")?;
    let store = pipeline::load_embeddings(cfg)?;
    let table = PhraseTable::from_graph(&graph, &store);
    let image = query_embedding(&args.image, args.query_id.as_deref())?;
    let result = match args.mode {
        Mode::Vqa => {
            let q = args.question.as_deref().ok_or_else(|| Failure::Missing("--question is required in vqa mode".into()))?;
            let question = query_embedding(q, args.query_id.as_deref())?;
            retrieve_for_vqa(&table, &image, &question, args.k)
        }
        Mode::Caption => {
            let agg = if args.aggregate == "mean" { ImageAggregate::Mean } else { ImageAggregate::Max };
            retrieve_for_captioning(&table, &store, &image, args.k, agg)
        }
    }
    .map_err(|e| Failure::Invalid(e.to_string()))?;
    let mut out = sink(cfg.out.as_ref())?;
    for s in &result.ranked_phrases {
        let text = table.get(&s.id).map_or("", |e| e.text.as_str());
        writeln!(out, "{}\t{:.6}\t{}", s.id, s.score, text).context("writing results")?;
    }
    out.flush().context("writing results")?;
    Ok(())
}

fn bench(cfg: &PipelineConfig, args: &BenchArgs) -> Outcome {
    let corpus = PruningCorpusConfig {
        images: args.images,
        vocab: args.vocab,
        focus_nouns: args.focus_nouns,
        focus_images: args.focus_images,
        queries: args.queries,
        dim: args.dim,
        seed: cfg.seed,
    };
    if corpus.focus_nouns == 0 || corpus.focus_nouns >= corpus.vocab || corpus.dim <= 4 || corpus.focus_images > corpus.images {
        return Err(Failure::Invalid("bench corpus needs 0 < focus-nouns < vocab, dim > 4, focus-images <= images".into()));
    }
    let report = run_pruning_bench(&corpus, cfg.grounding_params().indexed, cfg.worker_bound).context("running bench")?;
    writeln!(sink(cfg.out.as_ref())?, "{report}").context("writing report")?;
    Ok(())
}

fn synth(cfg: &PipelineConfig) -> Outcome {
    let dir = cfg.out.as_ref().ok_or_else(|| Failure::Missing("missing output directory: --out".into()))?;
    demo_fixture(cfg.seed).write_to(dir).with_context(|| format!("writing {}", dir.display()))?;
    let demo = PipelineConfig {
        seed: cfg.seed,
        ..pipeline::demo_config(dir)
    };
    std::fs::write(dir.join("demo.conf"), demo.dump()).context("writing demo.conf")?;
    eprintln!("wrote demo fixture to {}", dir.display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Outcome {
    let cfg = effective_config(&cli.global)?;
    if cli.global.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::Invalid("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Ingest => ingest(&cfg),
        Command::Index => index(&cfg),
        Command::Ground => ground(&cfg),
        Command::Assemble => assemble(&cfg),
        Command::Run => run(&cfg),
        Command::Stats => stats(&cfg),
        Command::Retrieve(a) => retrieve(&cfg, a),
        Command::Bench(a) => bench(&cfg, a),
        Command::Synth => synth(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let line = serde_json::json!({ "error": f.kind(), "code": f.code(), "message": f.message() });
            eprintln!("{line}");
            ExitCode::from(f.code())
        }
    }
}
