use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use clue_core::config::{RunConfig, ScorerKind};
use clue_core::corpus::{read_jsonl_corpus, read_jsonl_queries, KnowledgeBase, Query, Stopwords, TokenizerMode};
use clue_core::decoder::{batch_retrieve, decode, DecodeConfig, Strategy};
use clue_core::dualflow::verify_suite;
use clue_core::eval::{
    evaluate_rankings, render_table, run_ablation, EvalConfig, MetricReport, RelevanceJudge, RunMeta,
};
use clue_core::fm_index::ClueIndex;
use clue_core::sampler::sample_training_pairs;
use clue_core::scorer::{Endpoint, ExternalScorer, NGramScorer, OracleScorer, TokenScorer};
use clue_core::seed::{derive_seed, STAGE_SAMPLER};
use clue_core::{store, synth};

/// Environment variable holding the log filter.
const LOG_ENV: &str = "CLUE_LOG";

#[derive(Parser)]
#[command(
    name = "clue",
    version,
    about = "Generative document retrieval through knowledge clues"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for batch work (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest a JSON-lines corpus and write the knowledge base with its index.
    BuildIndex(BuildIndexArgs),
    /// Sample training clues from the gold documents of each query.
    SampleClues(SampleCluesArgs),
    /// Retrieve documents for every query.
    Retrieve(RetrieveArgs),
    /// Score a results file against the queries' judgments.
    Evaluate(EvaluateArgs),
    /// Compare the generation strategies on one query set.
    Ablate(AblateArgs),
    /// Run the gradient checks and toy training of the prefix model.
    VerifyDualflow(VerifyArgs),
    /// Measure index and decoder latency on a synthetic corpus.
    BenchLatency(BenchArgs),
}

#[derive(Args)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    tokenizer: Option<TokenizerMode>,
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Args)]
struct SampleCluesArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    span_len: Option<usize>,
    #[arg(long)]
    clues_per_doc: Option<usize>,
    #[arg(long)]
    clue_len: Option<usize>,
}

#[derive(Args, Clone)]
struct ScorerArgs {
    /// oracle (test only), ngram or external.
    #[arg(long, value_parser = parse_scorer)]
    scorer: Option<ScorerKind>,
    /// External scorer at host:port.
    #[arg(long, conflicts_with = "scorer_command")]
    scorer_tcp: Option<String>,
    /// External scorer program, spoken to over stdin/stdout.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    scorer_command: Option<Vec<String>>,
    #[arg(long)]
    scorer_timeout_ms: Option<u64>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Clone)]
struct DecodeArgs {
    #[arg(long)]
    num_beams: Option<usize>,
    #[arg(long)]
    num_groups: Option<usize>,
    #[arg(long)]
    min_len: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    diversity_penalty: Option<f64>,
    #[arg(long)]
    strategy: Option<Strategy>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Knowledge base the results were produced from.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Comma-separated metrics, e.g. P@1,P@5,R@5,R@10.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Cutoffs; each adds P@k and R@k to the metrics.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Evaluate even when the results were produced under other hashes.
    #[arg(long)]
    force: bool,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Comma-separated strategies; all four by default.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<Strategy>>,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Cutoffs; each adds P@k and R@k to the metrics.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct VerifyArgs {
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Benchmark an existing index instead of a synthetic one.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000_000)]
    tokens: usize,
    #[arg(long, default_value_t = 10_000)]
    docs: usize,
    #[arg(long, default_value_t = 20_000)]
    vocab: usize,
    /// Number of get_next probes.
    #[arg(long, default_value_t = 2_000)]
    probes: usize,
    /// Number of timed decodes.
    #[arg(long, default_value_t = 5)]
    decodes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<TokenizerMode, String> {
    match s {
        "word" => Ok(TokenizerMode::Word),
        "byte" => Ok(TokenizerMode::Byte),
        _ => Err(format!("unknown tokenizer mode {s:?}, expected word or byte")),
    }
}

fn parse_scorer(s: &str) -> Result<ScorerKind, String> {
    match s {
        "oracle" => Ok(ScorerKind::Oracle),
        "ngram" => Ok(ScorerKind::Ngram),
        "external" => Ok(ScorerKind::External),
        _ => Err(format!("unknown scorer {s:?}, expected oracle, ngram or external")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .with_context(|| format!("no {what} path: pass --{what} or set paths.{what} in the config"))
}

impl ScorerArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.scorer.kind, self.scorer);
        if let Some(addr) = self.scorer_tcp {
            cfg.scorer.endpoint = Some(Endpoint::Tcp(addr));
        }
        if let Some(cmd) = self.scorer_command {
            cfg.scorer.endpoint = Some(Endpoint::Command(cmd));
        }
        set(&mut cfg.scorer.timeout_ms, self.scorer_timeout_ms);
        set(&mut cfg.scorer.ngram.order, self.order);
        set(&mut cfg.scorer.ngram.alpha, self.alpha);
        set(&mut cfg.scorer.ngram.beta, self.beta);
    }
}

impl DecodeArgs {
    fn apply(self, cfg: &mut DecodeConfig) {
        set(&mut cfg.num_beams, self.num_beams);
        set(&mut cfg.num_groups, self.num_groups);
        set(&mut cfg.min_len, self.min_len);
        set(&mut cfg.max_len, self.max_len);
        set(&mut cfg.length_penalty, self.length_penalty);
        set(&mut cfg.diversity_penalty, self.diversity_penalty);
        set(&mut cfg.strategy, self.strategy);
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

struct Loaded {
    kb: KnowledgeBase,
    index: ClueIndex,
    index_hash: String,
}

fn load_index(path: &Path) -> Result<Loaded> {
    let bundle = store::load(path).with_context(|| format!("loading {}", path.display()))?;
    let index = bundle
        .index
        .with_context(|| format!("{} holds no index; rebuild it with build-index", path.display()))?;
    Ok(Loaded {
        kb: bundle.kb,
        index,
        index_hash: bundle.content_hash,
    })
}

fn load_queries(path: &Path, kb: &KnowledgeBase) -> Result<Vec<Query>> {
    let records = read_jsonl_queries(open(path)?).with_context(|| format!("reading {}", path.display()))?;
    let stop = Stopwords::english();
    records
        .into_iter()
        .map(|r| Query::new(r, kb, &stop, None).with_context(|| format!("in {}", path.display())))
        .collect()
}

fn build_scorer(cfg: &RunConfig, kb: &KnowledgeBase) -> Result<Box<dyn TokenScorer>> {
    Ok(match cfg.scorer.kind {
        ScorerKind::Oracle => Box::new(OracleScorer::per_query(kb.vocab_size())),
        ScorerKind::Ngram => Box::new(NGramScorer::train(kb, cfg.scorer.ngram.clone())?),
        ScorerKind::External => {
            let endpoint = cfg
                .scorer
                .endpoint
                .as_ref()
                .context("external scorer needs an endpoint")?;
            Box::new(
                ExternalScorer::connect(endpoint, kb.vocab_size(), Duration::from_millis(cfg.scorer.timeout_ms))
                    .context("connecting to the external scorer")?,
            )
        }
    })
}

fn with_terminators(decode: &DecodeConfig, kb: &KnowledgeBase) -> DecodeConfig {
    let mut d = decode.clone();
    if d.terminators.is_empty() {
        d.terminators = kb.tokenizer().terminators();
    }
    d
}

#[derive(Serialize)]
struct BuildStats<'a> {
    docs: usize,
    tokens: usize,
    vocab: usize,
    build_ms: f64,
    config_hash: &'a str,
    index_hash: &'a str,
}

fn build_index(cfg: &mut RunConfig, args: BuildIndexArgs) -> Result<()> {
    set_path(&mut cfg.paths.corpus, args.corpus);
    set_path(&mut cfg.paths.index, args.out);
    set(&mut cfg.tokenizer.mode, args.tokenizer);
    set(&mut cfg.index.sample_rate, args.sample_rate);
    cfg.validate()?;
    let corpus = require(&cfg.paths.corpus, "corpus")?;
    let out = require(&cfg.paths.index, "index")?;
    let started = Instant::now();
    let docs = read_jsonl_corpus(open(corpus)?).with_context(|| format!("reading {}", corpus.display()))?;
    let kb = KnowledgeBase::ingest(docs, cfg.tokenizer.clone())?;
    let index = ClueIndex::build_with_rate(&kb, cfg.index.sample_rate)?;
    let index_hash = store::save(out, &kb, Some(&index))?;
    let build_ms = started.elapsed().as_secs_f64() * 1e3;
    let config_hash = cfg.hash();
    let stats = BuildStats {
        docs: kb.len(),
        tokens: kb.total_tokens(),
        vocab: kb.vocab_size(),
        build_ms,
        config_hash: &config_hash,
        index_hash: &index_hash,
    };
    let meta = sidecar(out);
    std::fs::write(&meta, serde_json::to_string_pretty(&stats)? + "\n")
        .with_context(|| format!("writing {}", meta.display()))?;
    println!(
        "docs {}  tokens {}  vocab {}  build {:.1} ms\nindex {}  ({})",
        stats.docs,
        stats.tokens,
        stats.vocab,
        build_ms,
        out.display(),
        index_hash
    );
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize)]
struct ClueLine<'a> {
    #[serde(flatten)]
    clue: &'a clue_core::sampler::TrainingClue,
    config_hash: &'a str,
    index_hash: &'a str,
}

fn sample_clues(cfg: &mut RunConfig, args: SampleCluesArgs) -> Result<()> {
    set_path(&mut cfg.paths.index, args.index);
    set_path(&mut cfg.paths.queries, args.queries);
    set_path(&mut cfg.paths.output, args.out);
    set(&mut cfg.sampler.rho, args.rho);
    set(&mut cfg.sampler.span_len, args.span_len);
    set(&mut cfg.sampler.clues_per_doc, args.clues_per_doc);
    set(&mut cfg.sampler.clue_len, args.clue_len);
    cfg.validate()?;
    let loaded = load_index(require(&cfg.paths.index, "index")?)?;
    let queries = load_queries(require(&cfg.paths.queries, "queries")?, &loaded.kb)?;
    let mut sampler = cfg.sampler.clone();
    sampler.seed = derive_seed(cfg.seed, &[STAGE_SAMPLER]);
    let clues = sample_training_pairs(&loaded.kb, &queries, &sampler)?;
    let config_hash = cfg.hash();
    let mut out = create(require(&cfg.paths.output, "out")?)?;
    for clue in &clues {
        let line = ClueLine {
            clue,
            config_hash: &config_hash,
            index_hash: &loaded.index_hash,
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    info!("wrote {} clues for {} queries", clues.len(), queries.len());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RankedLine {
    doc_id: u32,
    score: f64,
    clue_text: String,
}

#[derive(Serialize, Deserialize)]
struct ResultLine {
    query_id: String,
    #[serde(default)]
    ranked: Vec<RankedLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    diagnostics: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    config_hash: String,
    index_hash: String,
}

fn retrieve(cfg: &mut RunConfig, args: RetrieveArgs) -> Result<()> {
    set_path(&mut cfg.paths.index, args.index);
    set_path(&mut cfg.paths.queries, args.queries);
    set_path(&mut cfg.paths.results, args.out);
    args.scorer.apply(cfg);
    args.decode.apply(&mut cfg.decode);
    cfg.validate()?;
    let loaded = load_index(require(&cfg.paths.index, "index")?)?;
    let queries = load_queries(require(&cfg.paths.queries, "queries")?, &loaded.kb)?;
    let scorer = build_scorer(cfg, &loaded.kb)?;
    let decode_cfg = with_terminators(&cfg.decode, &loaded.kb);
    let started = Instant::now();
    let results = batch_retrieve(&queries, &loaded.index, scorer.as_ref(), &decode_cfg);
    info!(
        "retrieved {} queries in {:.1} ms",
        queries.len(),
        started.elapsed().as_secs_f64() * 1e3
    );
    let config_hash = cfg.hash();
    let mut out = create(require(&cfg.paths.results, "out")?)?;
    let mut failures = 0;
    let mut call_ms = Vec::new();
    for (q, r) in queries.iter().zip(results) {
        let line = match r {
            Ok(r) => ResultLine {
                query_id: r.query_id,
                ranked: r
                    .ranked
                    .iter()
                    .map(|d| RankedLine {
                        doc_id: d.doc_id,
                        score: d.score,
                        clue_text: loaded.kb.tokenizer().detokenize(&d.clue),
                    })
                    .collect(),
                diagnostics: {
                    call_ms.extend_from_slice(&r.diagnostics.scorer_latency_ms);
                    Some(serde_json::to_value(&r.diagnostics)?)
                },
                error: None,
                config_hash: config_hash.clone(),
                index_hash: loaded.index_hash.clone(),
            },
            Err(e) => {
                failures += 1;
                warn!("query {}: {e}", q.id);
                ResultLine {
                    query_id: q.id.clone(),
                    ranked: Vec::new(),
                    diagnostics: None,
                    error: Some(e.to_string()),
                    config_hash: config_hash.clone(),
                    index_hash: loaded.index_hash.clone(),
                }
            }
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    if !call_ms.is_empty() {
        call_ms.sort_by(f64::total_cmp);
        info!(
            "{} scorer calls: median {:.3} ms, p99 {:.3} ms",
            call_ms.len(),
            percentile(&call_ms, 0.5),
            percentile(&call_ms, 0.99)
        );
    }
    if failures > 0 {
        warn!("{failures} of {} queries failed", queries.len());
    }
    Ok(())
}

fn print_and_save(reports: &[MetricReport], out: Option<&Path>) -> Result<()> {
    print!("{}", render_table(reports));
    if let Some(path) = out {
        let json = if reports.len() == 1 {
            reports[0].to_json()
        } else {
            serde_json::to_string_pretty(reports)?
        };
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Appends P@k and R@k for every cutoff not already requested.
fn add_cutoffs(metrics: &mut Vec<String>, ks: Option<Vec<usize>>) {
    for k in ks.unwrap_or_default() {
        for m in [format!("P@{k}"), format!("R@{k}")] {
            if !metrics.contains(&m) {
                metrics.push(m);
            }
        }
    }
}

fn evaluate(cfg: &mut RunConfig, args: EvaluateArgs) -> Result<()> {
    set_path(&mut cfg.paths.results, args.results);
    set_path(&mut cfg.paths.queries, args.queries);
    set_path(&mut cfg.paths.index, args.index);
    set_path(&mut cfg.paths.output, args.out);
    set(&mut cfg.eval.metrics, args.metrics);
    add_cutoffs(&mut cfg.eval.metrics, args.k);
    cfg.validate()?;
    let loaded = load_index(require(&cfg.paths.index, "index")?)?;
    let queries = load_queries(require(&cfg.paths.queries, "queries")?, &loaded.kb)?;
    let results_path = require(&cfg.paths.results, "results")?;
    let config_hash = cfg.hash();
    let mut rankings = BTreeMap::new();
    let mut mismatched = Vec::new();
    for (n, line) in open(results_path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ResultLine =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", results_path.display(), n + 1))?;
        if r.config_hash != config_hash || r.index_hash != loaded.index_hash {
            mismatched.push(r.query_id.clone());
        }
        rankings.insert(r.query_id, r.ranked.iter().map(|d| d.doc_id).collect());
    }
    if !mismatched.is_empty() {
        let msg = format!(
            "{} result lines were produced under a different config or index (first: {})",
            mismatched.len(),
            mismatched[0]
        );
        if !args.force {
            bail!("{msg}; pass --force to evaluate anyway");
        }
        warn!("{msg}");
    }
    let metrics = cfg.eval.parsed()?;
    let judge = RelevanceJudge::new(&loaded.kb);
    let meta = RunMeta {
        config_hash,
        index_hash: loaded.index_hash.clone(),
    };
    let report = evaluate_rankings("results", &queries, &rankings, &judge, &metrics, meta)?;
    if !report.excluded.is_empty() {
        warn!(
            "{} queries have no judging data and were excluded",
            report.excluded.len()
        );
    }
    print_and_save(&[report], cfg.paths.output.as_deref())
}

fn ablate(cfg: &mut RunConfig, args: AblateArgs) -> Result<()> {
    set_path(&mut cfg.paths.index, args.index);
    set_path(&mut cfg.paths.queries, args.queries);
    set_path(&mut cfg.paths.output, args.out);
    set(&mut cfg.eval.metrics, args.metrics);
    add_cutoffs(&mut cfg.eval.metrics, args.k);
    args.scorer.apply(cfg);
    args.decode.apply(&mut cfg.decode);
    cfg.validate()?;
    let loaded = load_index(require(&cfg.paths.index, "index")?)?;
    let queries = load_queries(require(&cfg.paths.queries, "queries")?, &loaded.kb)?;
    let scorer = build_scorer(cfg, &loaded.kb)?;
    let strategies = args.strategies.unwrap_or_else(|| Strategy::ALL.to_vec());
    let meta = RunMeta {
        config_hash: cfg.hash(),
        index_hash: loaded.index_hash.clone(),
    };
    let reports = run_ablation(
        &strategies,
        &queries,
        &loaded.kb,
        &loaded.index,
        scorer.as_ref(),
        &with_terminators(&cfg.decode, &loaded.kb),
        &EvalConfig {
            metrics: cfg.eval.metrics.clone(),
        },
        meta,
    )?;
    print_and_save(&reports, cfg.paths.output.as_deref())
}

fn verify_dualflow(cfg: &RunConfig, args: VerifyArgs) -> Result<bool> {
    let report = verify_suite(cfg.seed)?;
    print!("{}", report.table());
    println!(
        "toy loss: step 0 {:.4}, step 200 {:.4}",
        report.losses[0],
        report.losses[report.losses.len() - 1]
    );
    if let Some(path) = args.out {
        let json = serde_json::json!({ "report": report, "config_hash": cfg.hash() });
        std::fs::write(&path, serde_json::to_string_pretty(&json)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(report.passed())
}

#[derive(Serialize)]
struct BenchReport {
    tokens: usize,
    docs: usize,
    vocab: usize,
    index_build_ms: Option<f64>,
    get_next_median_ms: f64,
    get_next_p99_ms: f64,
    decode_median_ms: f64,
    scorer_call_median_ms: f64,
    config_hash: String,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    sorted[((sorted.len() - 1) as f64 * p).round() as usize]
}

fn bench_latency(cfg: &mut RunConfig, args: BenchArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    cfg.validate()?;
    let (kb, index, build_ms) = match &args.index {
        Some(path) => {
            let l = load_index(path)?;
            (l.kb, l.index, None)
        }
        None => {
            info!("generating {} tokens over {} docs", args.tokens, args.docs);
            let docs = synth::zipf_corpus(args.tokens, args.docs, args.vocab, cfg.seed);
            let kb = KnowledgeBase::ingest(docs, cfg.tokenizer.clone())?;
            let started = Instant::now();
            let index = ClueIndex::build_with_rate(&kb, cfg.index.sample_rate)?;
            let ms = started.elapsed().as_secs_f64() * 1e3;
            (kb, index, Some(ms))
        }
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    let mut lat = Vec::with_capacity(args.probes);
    for _ in 0..args.probes {
        let doc = &kb.docs()[rng.gen_range(0..kb.len())];
        let len = rng.gen_range(1..=3usize).min(doc.tokens.len());
        let start = rng.gen_range(0..=doc.tokens.len() - len);
        let iv = index.interval_of(&doc.tokens[start..start + len]);
        let t = Instant::now();
        std::hint::black_box(index.get_next(iv)?);
        lat.push(t.elapsed().as_secs_f64() * 1e3);
    }
    lat.sort_by(f64::total_cmp);
    let scorer = NGramScorer::train(&kb, cfg.scorer.ngram.clone())?;
    let decode_cfg = with_terminators(&cfg.decode, &kb);
    let mut decode_ms = Vec::new();
    let mut call_ms = Vec::new();
    for i in 0..args.decodes {
        let doc = &kb.docs()[rng.gen_range(0..kb.len())];
        let text = kb.tokenizer().detokenize(&doc.tokens[..doc.tokens.len().min(8)]);
        let q = Query::from_text(format!("bench{i}"), &text, &kb)?;
        let t = Instant::now();
        let r = decode(&q, &index, &scorer, &decode_cfg)?;
        decode_ms.push(t.elapsed().as_secs_f64() * 1e3);
        call_ms.extend(r.diagnostics.scorer_latency_ms);
    }
    decode_ms.sort_by(f64::total_cmp);
    call_ms.sort_by(f64::total_cmp);
    let report = BenchReport {
        tokens: kb.total_tokens(),
        docs: kb.len(),
        vocab: kb.vocab_size(),
        index_build_ms: build_ms,
        get_next_median_ms: percentile(&lat, 0.5),
        get_next_p99_ms: percentile(&lat, 0.99),
        decode_median_ms: percentile(&decode_ms, 0.5),
        scorer_call_median_ms: percentile(&call_ms, 0.5),
        config_hash: cfg.hash(),
    };
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(path) = args.out {
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, &cfg.log_level))
        .format_timestamp_millis()
        .try_init()
        .ok();
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::BuildIndex(a) => build_index(&mut cfg, a)?,
        Command::SampleClues(a) => sample_clues(&mut cfg, a)?,
        Command::Retrieve(a) => retrieve(&mut cfg, a)?,
        Command::Evaluate(a) => evaluate(&mut cfg, a)?,
        Command::Ablate(a) => ablate(&mut cfg, a)?,
        Command::VerifyDualflow(a) => return verify_dualflow(&cfg, a),
        Command::BenchLatency(a) => bench_latency(&mut cfg, a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
