//! `odqa`: index corpora, mine training data, answer and evaluate.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 reader or protocol
//! error.

use std::collections::HashMap;
use std::fmt::Display;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use odqa::distant_supervision::{build_stage_plan, dataset_stats, AugmentationConfig, NegativePolicy, Strategy, TrainingExample};
use odqa::evaluation::evaluate_run;
use odqa::index::{read_corpus, Index, IndexConfig};
use odqa::jsonl::{read_jsonl, write_jsonl};
use odqa::pipeline::{
    answer_all, augment, ingest, read_retrieval, retrieve_all, run_pipeline, sample_questions, DatasetFormat, MuSetting,
    ReaderOptions, ReaderSpec, RunConfig,
};
use odqa::reader::wire::serve;
use odqa::reader::{tune_mu, AnswerOracle, FusionConfig, Reader};
use odqa::squad::SquadDataset;
use odqa::text::Lang;

#[derive(Parser)]
#[command(name = "odqa", version, about = "Open-domain QA pipeline: BM25 paragraphs, distant supervision, score fusion, EM/F1/recall")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a paragraph index from a JSONL corpus of {"id", "contents"} documents.
    Index(IndexArgs),
    /// Print the top-k paragraphs for a query as JSON lines.
    Search(SearchArgs),
    /// Write SRC, DS(+) and DS(±) training files for a QA dataset.
    Augment(AugmentArgs),
    /// Write a stage manifest for a fine-tuning strategy.
    PlanStages(PlanArgs),
    /// Retrieve, read and rank answers for a QA dataset.
    Answer(AnswerArgs),
    /// Score predictions against a QA dataset.
    Evaluate(EvaluateArgs),
    /// Count positives and negatives in training files.
    Stats(StatsArgs),
    /// Grid-search the interpolation weight on a question sample.
    TuneMu(TuneArgs),
    /// Run every stage from a JSON config; flags override config keys.
    Run(RunArgs),
    /// Serve the reader protocol, answering from a QA dataset's gold answers.
    ServeOracle(ServeArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "en")]
    lang: Lang,
    #[arg(long, default_value_t = 0.9)]
    k1: f64,
    #[arg(long, default_value_t = 0.4)]
    b: f64,
    #[arg(long, default_value_t = 10)]
    min_paragraph_chars: usize,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(required = true)]
    query: Vec<String>,
}

#[derive(Args)]
struct DatasetArgs {
    /// SQuAD v1.1 JSON file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "en")]
    lang: Lang,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(short, long, default_value_t = 10)]
    n: usize,
    /// `all` or `ratio:<d>`.
    #[arg(long, default_value = "all")]
    negatives: NegativePolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    strategy: Strategy,
    #[arg(long)]
    src: Vec<PathBuf>,
    #[arg(long)]
    ds: Vec<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ReaderArgs {
    /// Mock reader table (JSON).
    #[arg(long)]
    reader_mock: Option<PathBuf>,
    /// Reader process speaking the protocol on stdio.
    #[arg(long)]
    reader_cmd: Option<String>,
    /// host:port of a protocol server.
    #[arg(long)]
    reader_tcp: Option<String>,
}

#[derive(Args)]
#[group(required = false, multiple = false)]
struct ReaderOverride {
    #[arg(long)]
    reader_mock: Option<PathBuf>,
    #[arg(long)]
    reader_cmd: Option<String>,
    #[arg(long)]
    reader_tcp: Option<String>,
}

fn reader_spec(mock: Option<PathBuf>, cmd: Option<String>, tcp: Option<String>) -> Option<ReaderSpec> {
    mock.map(ReaderSpec::Mock)
        .or(cmd.map(ReaderSpec::Subprocess))
        .or(tcp.map(ReaderSpec::Tcp))
}

#[derive(Args)]
struct ReaderTuning {
    #[arg(long, default_value_t = 60_000)]
    reader_timeout_ms: u64,
    #[arg(long, default_value_t = 32)]
    max_in_flight: usize,
}

impl ReaderTuning {
    fn options(&self) -> ReaderOptions {
        ReaderOptions {
            timeout_ms: self.reader_timeout_ms,
            max_in_flight: self.max_in_flight,
        }
    }
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    reader: ReaderArgs,
    #[command(flatten)]
    tuning: ReaderTuning,
    #[arg(long)]
    mu: f64,
    #[arg(short, long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    top_m: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// JSON object {question_id: answer}.
    #[arg(long)]
    predictions: PathBuf,
    /// retrieval.jsonl of the same run.
    #[arg(long)]
    retrieval: PathBuf,
    /// Recorded in the report.
    #[arg(long)]
    mu: f64,
    /// Recorded in the report; defaults to the longest retrieved list.
    #[arg(short, long)]
    k: Option<usize>,
    /// Report file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// TrainingExample JSONL files.
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    reader: ReaderArgs,
    #[command(flatten)]
    tuning: ReaderTuning,
    #[arg(short, long, default_value_t = 100)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    grid_step: f64,
    #[arg(long, default_value_t = 1000)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    reader: ReaderOverride,
    #[arg(long)]
    index_path: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    #[arg(long)]
    train_dataset: Option<PathBuf>,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    negatives: Option<NegativePolicy>,
    /// A number in [0, 1] or `tune`.
    #[arg(long)]
    mu: Option<MuSetting>,
    #[arg(long)]
    mu_grid_step: Option<f64>,
    #[arg(long)]
    tune_sample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    top_m: Option<usize>,
    #[arg(long)]
    lang: Option<Lang>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    augment: bool,
    /// Repeatable; replaces the config's list.
    #[arg(long)]
    strategy: Vec<Strategy>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Listen on this address instead of stdio; prints the bound address.
    #[arg(long)]
    tcp: Option<String>,
}

struct CliError {
    code: u8,
    message: String,
}

fn usage(e: impl Display) -> CliError {
    CliError {
        code: 1,
        message: e.to_string(),
    }
}

fn data(e: impl Display) -> CliError {
    CliError {
        code: 2,
        message: e.to_string(),
    }
}

fn reader_err(e: impl Display) -> CliError {
    CliError {
        code: 3,
        message: e.to_string(),
    }
}

type CliResult = Result<(), CliError>;

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn write_out(out: &mut impl Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(data)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult {
    std::fs::write(path, bytes).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn pretty(value: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn open_index(path: &Path, lang: Lang) -> Result<Index, CliError> {
    let index = Index::open(path).map_err(data)?;
    if index.analyzer().lang() != lang {
        return Err(usage(format!(
            "index at {} uses {:?}, which does not serve lang {lang}",
            path.display(),
            index.analyzer()
        )));
    }
    Ok(index)
}

fn load_dataset(args: &DatasetArgs) -> Result<SquadDataset, CliError> {
    let ds = ingest(&args.dataset, DatasetFormat::SquadV11, args.lang).map_err(data)?;
    if !ds.unaligned.is_empty() {
        eprintln!(
            "warning: {} question(s) have no locatable answer span and no SRC row",
            ds.unaligned.len()
        );
    }
    Ok(ds)
}

fn open_reader(args: ReaderArgs, tuning: &ReaderTuning) -> Result<Box<dyn Reader>, CliError> {
    let spec = reader_spec(args.reader_mock, args.reader_cmd, args.reader_tcp).ok_or_else(|| usage("no reader given"))?;
    spec.open(tuning.options()).map_err(reader_err)
}

fn cmd_index(a: IndexArgs) -> CliResult {
    let config = IndexConfig {
        analyzer: a.lang.analyzer(),
        k1: a.k1,
        b: a.b,
        min_paragraph_chars: a.min_paragraph_chars,
    };
    config.validate().map_err(usage)?;
    let docs = read_corpus(&a.corpus).map_err(data)?;
    let index = Index::build(docs.iter().flat_map(|d| d.segment(&config)), config).map_err(data)?;
    index.persist(&a.out).map_err(data)?;
    let summary = serde_json::json!({
        "documents": docs.len(),
        "paragraphs": index.num_paragraphs(),
        "terms": index.num_terms(),
        "avg_length": index.avg_length(),
    });
    write_out(&mut stdout(), &pretty(&summary))
}

fn cmd_search(a: SearchArgs) -> CliResult {
    let index = Index::open(&a.index).map_err(data)?;
    let mut out = stdout();
    let mut text = String::new();
    for hit in index.search(&a.query.join(" "), a.k) {
        text.push_str(&serde_json::to_string(&hit).expect("hit serializes"));
        text.push('\n');
    }
    write_out(&mut out, &text)
}

fn cmd_augment(a: AugmentArgs) -> CliResult {
    let index = open_index(&a.index, a.data.lang)?;
    let source = load_dataset(&a.data)?;
    let config = AugmentationConfig {
        n: a.n,
        negative_policy: a.negatives,
        lang: a.data.lang,
    };
    config.validate().map_err(usage)?;
    let augmented = augment(&source, &index, &config).map_err(data)?;
    std::fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    for (name, bytes) in augmented.files() {
        write_file(&a.out.join(name), &bytes)?;
    }
    write_out(&mut stdout(), &pretty(&augmented.stats))
}

fn cmd_plan(a: PlanArgs) -> CliResult {
    let manifest = build_stage_plan(a.strategy, &a.src, &a.ds).map_err(usage)?;
    match a.out {
        Some(path) => write_file(&path, manifest.to_json().as_bytes()),
        None => write_out(&mut stdout(), &manifest.to_json()),
    }
}

fn cmd_answer(a: AnswerArgs) -> CliResult {
    let fusion = FusionConfig::new(a.mu).map_err(usage)?;
    if a.k == 0 || a.top_m == 0 {
        return Err(usage("k and top-m must be >= 1"));
    }
    let index = open_index(&a.index, a.data.lang)?;
    let dataset = load_dataset(&a.data)?;
    let reader = open_reader(a.reader, &a.tuning)?;
    let retrieval = retrieve_all(&index, &dataset.questions, a.k);
    let answers = answer_all(reader.as_ref(), &dataset.questions, &retrieval, fusion, a.top_m).map_err(reader_err)?;
    std::fs::create_dir_all(&a.out).map_err(|e| data(format!("{}: {e}", a.out.display())))?;
    write_jsonl(a.out.join("retrieval.jsonl"), &retrieval).map_err(data)?;
    write_jsonl(a.out.join("candidates.jsonl"), &answers.candidates).map_err(data)?;
    write_file(&a.out.join("predictions.json"), pretty(&answers.predictions).as_bytes())?;
    let answered = answers.predictions.values().filter(|p| !p.is_empty()).count();
    write_out(
        &mut stdout(),
        &format!("{} questions, {answered} with an answer\n", answers.predictions.len()),
    )
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let dataset = load_dataset(&a.data)?;
    let text = std::fs::read_to_string(&a.predictions).map_err(|e| data(format!("{}: {e}", a.predictions.display())))?;
    let predictions: HashMap<String, String> =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", a.predictions.display())))?;
    let retrieved = read_retrieval(&a.retrieval).map_err(data)?;
    let k = a
        .k
        .unwrap_or_else(|| retrieved.values().map(Vec::len).max().unwrap_or(0));
    let report = evaluate_run(&predictions, &dataset.golds, &retrieved, a.mu, k).map_err(data)?;
    if !report.missing_predictions.is_empty() {
        eprintln!("warning: {} question(s) have no prediction", report.missing_predictions.len());
    }
    match a.out {
        Some(path) => write_file(&path, report.to_json().as_bytes()),
        None => write_out(&mut stdout(), &report.to_json()),
    }
}

fn cmd_stats(a: StatsArgs) -> CliResult {
    let mut rows = Vec::new();
    for path in &a.files {
        let examples: Vec<TrainingExample> = read_jsonl(path).map_err(data)?;
        rows.push((path.display().to_string(), dataset_stats(&examples)));
    }
    let text = if a.json {
        let map: serde_json::Map<String, serde_json::Value> = rows
            .iter()
            .map(|(name, s)| (name.clone(), serde_json::to_value(s).expect("stats serialize")))
            .collect();
        pretty(&map)
    } else {
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
        let mut t = format!("{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}\n", "file", "positives", "negatives", "total", "questions");
        for (name, s) in &rows {
            t.push_str(&format!(
                "{name:<width$}  {:>10}  {:>10}  {:>10}  {:>10}\n",
                s.positives, s.negatives, s.total, s.questions_with_positive
            ));
        }
        t
    };
    write_out(&mut stdout(), &text)
}

fn cmd_tune(a: TuneArgs) -> CliResult {
    if a.k == 0 || a.sample == 0 {
        return Err(usage("k and sample must be >= 1"));
    }
    let index = open_index(&a.index, a.data.lang)?;
    let dataset = load_dataset(&a.data)?;
    let reader = open_reader(a.reader, &a.tuning)?;
    let sample = sample_questions(&dataset.questions, a.sample, a.seed);
    let tuning = tune_mu(&sample, &index, reader.as_ref(), a.k, a.grid_step).map_err(|e| match e {
        odqa::reader::ReaderError::InvalidInput(_) => usage(e),
        other => reader_err(other),
    })?;
    write_out(&mut stdout(), &pretty(&tuning))
}

fn cmd_run(a: RunArgs) -> CliResult {
    let mut c = RunConfig::load(&a.config).map_err(usage)?;
    if let Some(spec) = reader_spec(a.reader.reader_mock, a.reader.reader_cmd, a.reader.reader_tcp) {
        c.reader = spec;
    }
    if let Some(v) = a.index_path {
        c.index_path = v;
    }
    if let Some(v) = a.corpus {
        c.corpus_path = Some(v);
    }
    if let Some(v) = a.eval_dataset {
        c.eval_dataset = v;
    }
    if let Some(v) = a.train_dataset {
        c.train_dataset = Some(v);
    }
    if let Some(v) = a.k {
        c.k = v;
    }
    if let Some(v) = a.n {
        c.n = v;
    }
    if let Some(v) = a.negatives {
        c.negative_policy = v;
    }
    if let Some(v) = a.mu {
        c.mu = v;
    }
    if let Some(v) = a.mu_grid_step {
        c.mu_grid_step = v;
    }
    if let Some(v) = a.tune_sample {
        c.tune_sample = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.top_m {
        c.top_m = v;
    }
    if let Some(v) = a.lang {
        c.lang = v;
    }
    if let Some(v) = a.output_dir {
        c.output_dir = v;
    }
    if a.augment {
        c.augment = true;
    }
    if !a.strategy.is_empty() {
        c.strategies = a.strategy;
    }
    let outcome = run_pipeline(&c).map_err(|e| CliError {
        code: e.exit_code() as u8,
        message: e.to_string(),
    })?;
    let r = &outcome.report;
    write_out(
        &mut stdout(),
        &format!(
            "em {:.6} f1 {:.6} recall {:.6} mu {:.6} k {} questions {}\n",
            r.em, r.f1, r.recall, r.mu, r.k, r.num_questions
        ),
    )
}

fn cmd_serve(a: ServeArgs) -> CliResult {
    let dataset = load_dataset(&a.data)?;
    let oracle = AnswerOracle::new(&dataset.questions);
    match a.tcp {
        None => serve(io::stdin().lock(), io::stdout().lock(), |r| oracle.respond(r)).map_err(reader_err),
        Some(addr) => {
            let listener = TcpListener::bind(&addr).map_err(|e| usage(format!("{addr}: {e}")))?;
            let local = listener.local_addr().map_err(reader_err)?;
            write_out(&mut stdout(), &format!("listening on {local}\n"))?;
            for stream in listener.incoming() {
                let stream = stream.map_err(reader_err)?;
                let input = BufReader::new(stream.try_clone().map_err(reader_err)?);
                if let Err(e) = serve(input, stream, |r| oracle.respond(r)) {
                    eprintln!("connection closed: {e}");
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Search(a) => cmd_search(a),
        Command::Augment(a) => cmd_augment(a),
        Command::PlanStages(a) => cmd_plan(a),
        Command::Answer(a) => cmd_answer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::TuneMu(a) => cmd_tune(a),
        Command::Run(a) => cmd_run(a),
        Command::ServeOracle(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("odqa: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
