//! End-to-end runs driven by a [`RunConfig`].
//!
//! A run owns its output directory for its whole duration (a `.odqa.lock`
//! file) and writes:
//!
//! | file | contents |
//! |------|----------|
//! | `retrieval.jsonl` | one [`RetrievalRecord`] per evaluation question |
//! | `candidates.jsonl` | the top `top_m` [`AnswerCandidate`]s per question |
//! | `predictions.json` | `{question_id: answer}` |
//! | `report.json` | the [`EvalReport`] |
//! | `mu_tuning.json` | the [`MuTuning`] table, when `mu` is `"tune"` |
//! | `src.jsonl`, `ds_plus.jsonl`, `ds_pm.jsonl`, `ds_stats.json` | training data, when `augment` is set |
//! | `stages_<strategy>.json` | one [`StageManifest`] per requested strategy |
//! | `run_manifest.json` | effective config, input and output digests, status |
//!
//! Stage manifests written by a run list file names relative to the output
//! directory. `run_manifest.json` is written last, also when a stage fails,
//! in which case its status is `incomplete` and it names the failing stage.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distant_supervision::{
    build_stage_plan, dataset_stats, generate_dataset, positives_only, AugmentationConfig, DatasetStats, DsError,
    NegativePolicy, QaExample, StageManifest, Strategy, TrainingExample,
};
use crate::evaluation::{evaluate_run, EvalReport};
use crate::index::{Index, IndexConfig, RetrievedPassage};
use crate::jsonl::{read_jsonl, to_jsonl_bytes, JsonlError};
use crate::reader::{
    tune_mu, AnswerCandidate, FusionConfig, MockReader, MuTuning, ReadPassages, Reader, ReaderError, WireReader,
};
use crate::squad::{ingest_squad_v11, SquadDataset};
use crate::text::Lang;

pub const RUN_MANIFEST_FORMAT: &str = "odqa-run";
pub const LOCK_FILE: &str = ".odqa.lock";

/// How answers are produced from paragraphs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReaderSpec {
    /// Path to a [`crate::reader::MockTable`] JSON file.
    Mock(PathBuf),
    /// Command line of a process speaking the wire protocol on stdio.
    Subprocess(String),
    /// `host:port` of a wire protocol server.
    Tcp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReaderOptions {
    pub timeout_ms: u64,
    pub max_in_flight: usize,
}

impl Default for ReaderOptions {
    fn default() -> Self {
        ReaderOptions {
            timeout_ms: 60_000,
            max_in_flight: 32,
        }
    }
}

impl ReaderSpec {
    pub fn open(&self, options: ReaderOptions) -> Result<Box<dyn Reader>, crate::reader::ReaderError> {
        let wire = |r: WireReader| {
            r.with_timeout(Duration::from_millis(options.timeout_ms))
                .with_max_in_flight(options.max_in_flight)
        };
        Ok(match self {
            ReaderSpec::Mock(path) => Box::new(MockReader::load(path)?),
            ReaderSpec::Subprocess(cmd) => Box::new(wire(WireReader::spawn(cmd)?)),
            ReaderSpec::Tcp(addr) => Box::new(wire(WireReader::connect(addr.as_str())?)),
        })
    }
}

/// A fixed interpolation weight or `"tune"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MuRepr", into = "MuRepr")]
pub enum MuSetting {
    Fixed(f64),
    Tune,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MuRepr {
    Number(f64),
    Word(String),
}

impl TryFrom<MuRepr> for MuSetting {
    type Error = String;

    fn try_from(r: MuRepr) -> Result<Self, String> {
        match r {
            MuRepr::Number(mu) => Ok(MuSetting::Fixed(mu)),
            MuRepr::Word(w) => w.parse(),
        }
    }
}

impl From<MuSetting> for MuRepr {
    fn from(m: MuSetting) -> MuRepr {
        match m {
            MuSetting::Fixed(mu) => MuRepr::Number(mu),
            MuSetting::Tune => MuRepr::Word("tune".into()),
        }
    }
}

impl FromStr for MuSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "tune" {
            return Ok(MuSetting::Tune);
        }
        s.parse()
            .map(MuSetting::Fixed)
            .map_err(|_| format!("mu must be a number in [0, 1] or `tune`, got `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    #[default]
    SquadV11,
}

/// Which augmented file stage manifests refer to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DsVariant {
    #[default]
    DsPm,
    DsPlus,
}

impl DsVariant {
    pub fn file_name(self) -> &'static str {
        match self {
            DsVariant::DsPm => "ds_pm.jsonl",
            DsVariant::DsPlus => "ds_plus.jsonl",
        }
    }
}

fn default_k() -> usize {
    100
}
fn default_n() -> usize {
    10
}
fn default_top_m() -> usize {
    1
}
fn default_grid_step() -> f64 {
    0.1
}
fn default_tune_sample() -> usize {
    1000
}

/// A run, as a single JSON document.
///
/// Questions for evaluation come from `eval_dataset`. `train_dataset` is the
/// source of augmented data and of the questions `mu` is tuned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub index_path: PathBuf,
    /// Built into `index_path` when no index exists there yet.
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    /// Used only when building; defaults to the analyzer of `lang`.
    #[serde(default)]
    pub index_config: Option<IndexConfig>,
    pub eval_dataset: PathBuf,
    #[serde(default)]
    pub train_dataset: Option<PathBuf>,
    #[serde(default)]
    pub dataset_format: DatasetFormat,
    pub reader: ReaderSpec,
    #[serde(default)]
    pub reader_options: ReaderOptions,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_negative_policy")]
    pub negative_policy: NegativePolicy,
    pub mu: MuSetting,
    #[serde(default = "default_grid_step")]
    pub mu_grid_step: f64,
    #[serde(default = "default_tune_sample")]
    pub tune_sample: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_top_m")]
    pub top_m: usize,
    pub lang: Lang,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub augment: bool,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub stage_ds: DsVariant,
}

fn default_negative_policy() -> NegativePolicy {
    NegativePolicy::All
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                e.inner().to_string()
            } else {
                format!("at `{path}`: {}", e.inner())
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, String> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [("k", self.k), ("n", self.n), ("top_m", self.top_m), ("tune_sample", self.tune_sample)] {
            if v == 0 {
                return Err(format!("{name} must be >= 1"));
            }
        }
        if let NegativePolicy::Ratio(0) = self.negative_policy {
            return Err("ratio d must be >= 1".into());
        }
        match self.mu {
            MuSetting::Fixed(mu) if !(0.0..=1.0).contains(&mu) => {
                return Err(format!("mu must be in [0, 1], got {mu}"));
            }
            MuSetting::Tune => {
                if self.train_dataset.is_none() {
                    return Err("mu = \"tune\" needs train_dataset".into());
                }
                if !(self.mu_grid_step > 0.0 && self.mu_grid_step <= 0.5) {
                    return Err(format!("mu_grid_step must be in (0, 0.5], got {}", self.mu_grid_step));
                }
            }
            _ => {}
        }
        if self.augment && self.train_dataset.is_none() {
            return Err("augment needs train_dataset".into());
        }
        if !self.strategies.is_empty() && !self.augment {
            return Err("strategies need augment = true".into());
        }
        if let Some(c) = &self.index_config {
            c.validate().map_err(|e| e.to_string())?;
            if c.analyzer.lang() != self.lang {
                return Err(format!("index_config analyzer {:?} does not serve lang {}", c.analyzer, self.lang));
            }
        }
        Ok(())
    }

    fn build_config(&self) -> IndexConfig {
        self.index_config
            .unwrap_or_else(|| IndexConfig::with_analyzer(self.lang.analyzer()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStage {
    Config,
    Lock,
    Index,
    Ingest,
    Reader,
    Tune,
    Retrieve,
    Read,
    Evaluate,
    Augment,
    Plan,
    Write,
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Reader,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Reader => 3,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct PipelineError {
    pub stage: PipelineStage,
    pub kind: ErrorKind,
    pub message: String,
}

impl PipelineError {
    fn new(stage: PipelineStage, kind: ErrorKind, message: impl fmt::Display) -> Self {
        PipelineError {
            stage,
            kind,
            message: message.to_string(),
        }
    }

    fn data(stage: PipelineStage) -> impl Fn(&dyn fmt::Display) -> Self {
        move |e| Self::new(stage, ErrorKind::Data, e)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

/// Retrieval results of one question, as stored in `retrieval.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub question_id: String,
    pub passages: Vec<RetrievedPassage>,
}

pub fn read_retrieval(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<RetrievedPassage>>, JsonlError> {
    let records: Vec<RetrievalRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| (r.question_id, r.passages)).collect())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Opens the index at `path`, or builds it from `corpus` and persists it
/// there when `path` holds no index.
pub fn open_or_build_index(
    path: &Path,
    corpus: Option<&Path>,
    config: &IndexConfig,
) -> Result<Index, crate::index::IndexError> {
    if path.join("meta.json").exists() || corpus.is_none() {
        return Index::open(path);
    }
    let docs = crate::index::read_corpus(corpus.expect("checked above"))?;
    let index = Index::build(docs.iter().flat_map(|d| d.segment(config)), *config)?;
    index.persist(path)?;
    Ok(index)
}

pub fn ingest(path: &Path, format: DatasetFormat, lang: Lang) -> Result<SquadDataset, crate::squad::SquadError> {
    match format {
        DatasetFormat::SquadV11 => ingest_squad_v11(path, lang),
    }
}

/// Up to `size` questions picked with a seeded generator, in input order.
pub fn sample_questions(questions: &[QaExample], size: usize, seed: u64) -> Vec<QaExample> {
    if questions.len() <= size {
        return questions.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, questions.len(), size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| questions[i].clone()).collect()
}

/// Top-`k` passages for every question, sorted by question id.
pub fn retrieve_all(index: &Index, questions: &[QaExample], k: usize) -> Vec<RetrievalRecord> {
    let mut records: Vec<RetrievalRecord> = questions
        .par_iter()
        .map(|q| RetrievalRecord {
            question_id: q.question_id.clone(),
            passages: index.search(&q.question, k),
        })
        .collect();
    records.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    records
}

#[derive(Debug, Clone, Default)]
pub struct Answers {
    /// Up to `top_m` per question, grouped by question id.
    pub candidates: Vec<AnswerCandidate>,
    /// Best span per question, `""` when no passage yielded one.
    pub predictions: BTreeMap<String, String>,
}

/// Reads the retrieved passages of every question. Any reader failure fails
/// the call; the reported failure is the one of the smallest question id.
pub fn answer_all(
    reader: &dyn Reader,
    questions: &[QaExample],
    retrieval: &[RetrievalRecord],
    fusion: FusionConfig,
    top_m: usize,
) -> Result<Answers, ReaderError> {
    if top_m == 0 {
        return Err(ReaderError::InvalidInput("top_m must be >= 1".into()));
    }
    let by_id: HashMap<&str, &QaExample> = questions.iter().map(|q| (q.question_id.as_str(), q)).collect();
    let read: Vec<Result<ReadPassages, ReaderError>> = retrieval
        .par_iter()
        .map(|r| {
            let q = by_id
                .get(r.question_id.as_str())
                .ok_or_else(|| ReaderError::InvalidInput(format!("no question `{}`", r.question_id)))?;
            ReadPassages::read(reader, q, &r.passages)
        })
        .collect();
    let mut out = Answers::default();
    for r in read {
        let r = r?;
        let ranked = r.rank(fusion, top_m);
        let best = ranked.first().map(|a| a.span_text.clone()).unwrap_or_default();
        out.predictions.insert(r.question_id.clone(), best);
        out.candidates.extend(ranked);
    }
    Ok(out)
}

#[derive(Debug)]
struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<OutputLock, PipelineError> {
        let path = dir.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            let msg = if e.kind() == std::io::ErrorKind::AlreadyExists {
                format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    dir.display(),
                    path.display()
                )
            } else {
                format!("{}: {e}", path.display())
            };
            PipelineError::new(PipelineStage::Lock, ErrorKind::Usage, msg)
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        Ok(OutputLock(path))
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub mu: f64,
    pub tuning: Option<MuTuning>,
    /// Artifact file name to sha256, excluding `run_manifest.json`.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    format: &'static str,
    tool_version: &'static str,
    status: &'static str,
    error: Option<ManifestError>,
    config: &'a RunConfig,
    mu: Option<f64>,
    index: Option<IndexSummary>,
    inputs: &'a BTreeMap<String, String>,
    artifacts: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct ManifestError {
    stage: PipelineStage,
    message: String,
}

#[derive(Serialize, Clone, Copy)]
struct IndexSummary {
    config: IndexConfig,
    num_paragraphs: usize,
    num_terms: usize,
}

/// Counts of one augmentation, as stored in `ds_stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationStats {
    pub src: DatasetStats,
    pub ds_plus: DatasetStats,
    pub ds_pm: DatasetStats,
    pub n: usize,
    pub negative_policy: NegativePolicy,
    /// Source questions without an SRC row.
    pub src_unaligned: Vec<String>,
}

/// SRC, DS(+) and DS(±) rows mined from one source dataset.
#[derive(Debug, Clone)]
pub struct AugmentedData {
    pub src: Vec<TrainingExample>,
    pub ds_plus: Vec<TrainingExample>,
    pub ds_pm: Vec<TrainingExample>,
    pub stats: AugmentationStats,
}

impl AugmentedData {
    /// `src.jsonl`, `ds_plus.jsonl`, `ds_pm.jsonl` and `ds_stats.json`.
    pub fn files(&self) -> [(&'static str, Vec<u8>); 4] {
        [
            ("src.jsonl", to_jsonl_bytes(&self.src)),
            ("ds_plus.jsonl", to_jsonl_bytes(&self.ds_plus)),
            ("ds_pm.jsonl", to_jsonl_bytes(&self.ds_pm)),
            ("ds_stats.json", pretty(&self.stats)),
        ]
    }
}

pub fn augment(source: &SquadDataset, index: &Index, config: &AugmentationConfig) -> Result<AugmentedData, DsError> {
    let ds_pm = generate_dataset(&source.questions, index, config)?;
    let ds_plus = positives_only(&ds_pm);
    let mut src = source.src_rows.clone();
    src.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    let stats = AugmentationStats {
        src: dataset_stats(&src),
        ds_plus: dataset_stats(&ds_plus),
        ds_pm: dataset_stats(&ds_pm),
        n: config.n,
        negative_policy: config.negative_policy,
        src_unaligned: source.unaligned.clone(),
    };
    Ok(AugmentedData {
        src,
        ds_plus,
        ds_pm,
        stats,
    })
}

struct Run<'a> {
    config: &'a RunConfig,
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    index: Option<IndexSummary>,
    mu: Option<f64>,
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

impl Run<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.config.output_dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| PipelineError::new(PipelineStage::Write, ErrorKind::Data, format!("{}: {e}", path.display())))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn record_input(&mut self, name: &str, path: &Path, stage: PipelineStage) -> Result<(), PipelineError> {
        let bytes = fs::read(path)
            .map_err(|e| PipelineError::new(stage, ErrorKind::Data, format!("{}: {e}", path.display())))?;
        self.inputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn execute(&mut self) -> Result<RunOutcome, PipelineError> {
        use PipelineStage as S;
        let c = self.config;

        let index = open_or_build_index(&c.index_path, c.corpus_path.as_deref(), &c.build_config())
            .map_err(|e| PipelineError::data(S::Index)(&e))?;
        if index.analyzer().lang() != c.lang {
            return Err(PipelineError::new(
                S::Index,
                ErrorKind::Usage,
                format!("index analyzer {:?} does not serve lang {}", index.analyzer(), c.lang),
            ));
        }
        self.index = Some(IndexSummary {
            config: *index.config(),
            num_paragraphs: index.num_paragraphs(),
            num_terms: index.num_terms(),
        });
        self.record_input("index_meta", &c.index_path.join("meta.json"), S::Index)?;

        let eval = ingest(&c.eval_dataset, c.dataset_format, c.lang).map_err(|e| PipelineError::data(S::Ingest)(&e))?;
        self.record_input("eval_dataset", &c.eval_dataset, S::Ingest)?;
        let train = match &c.train_dataset {
            Some(path) => {
                let ds = ingest(path, c.dataset_format, c.lang).map_err(|e| PipelineError::data(S::Ingest)(&e))?;
                self.record_input("train_dataset", path, S::Ingest)?;
                Some(ds)
            }
            None => None,
        };

        if let ReaderSpec::Mock(path) = &c.reader {
            self.record_input("mock_table", path, S::Reader)?;
        }
        let reader = c
            .reader
            .open(c.reader_options)
            .map_err(|e| PipelineError::new(S::Reader, ErrorKind::Reader, e))?;

        let mut tuning = None;
        let mu = match c.mu {
            MuSetting::Fixed(mu) => mu,
            MuSetting::Tune => {
                let train = train.as_ref().expect("validated");
                let sample = sample_questions(&train.questions, c.tune_sample, c.seed);
                let t = tune_mu(&sample, &index, reader.as_ref(), c.k, c.mu_grid_step)
                    .map_err(|e| PipelineError::new(S::Tune, ErrorKind::Reader, e))?;
                self.write("mu_tuning.json", &pretty(&t))?;
                let mu = t.mu_star;
                tuning = Some(t);
                mu
            }
        };
        self.mu = Some(mu);
        let fusion = FusionConfig::new(mu).map_err(|e| PipelineError::new(S::Config, ErrorKind::Usage, e))?;

        let retrieval = retrieve_all(&index, &eval.questions, c.k);
        self.write("retrieval.jsonl", &to_jsonl_bytes(&retrieval))?;

        let Answers {
            candidates,
            predictions,
        } = answer_all(reader.as_ref(), &eval.questions, &retrieval, fusion, c.top_m)
            .map_err(|e| PipelineError::new(S::Read, ErrorKind::Reader, e))?;
        self.write("candidates.jsonl", &to_jsonl_bytes(&candidates))?;
        self.write("predictions.json", &pretty(&predictions))?;

        let retrieved: HashMap<String, Vec<RetrievedPassage>> =
            retrieval.into_iter().map(|r| (r.question_id, r.passages)).collect();
        let report = evaluate_run(&predictions.into_iter().collect(), &eval.golds, &retrieved, mu, c.k)
            .map_err(|e| PipelineError::data(S::Evaluate)(&e))?;
        self.write("report.json", report.to_json().as_bytes())?;

        if c.augment {
            let train = train.as_ref().expect("validated");
            let aug = AugmentationConfig {
                n: c.n,
                negative_policy: c.negative_policy,
                lang: c.lang,
            };
            let data = augment(train, &index, &aug).map_err(|e| PipelineError::data(S::Augment)(&e))?;
            for (name, bytes) in data.files() {
                self.write(name, &bytes)?;
            }

            for &strategy in &c.strategies {
                let manifest = build_stage_plan(
                    strategy,
                    &[PathBuf::from("src.jsonl")],
                    &[PathBuf::from(c.stage_ds.file_name())],
                )
                .map_err(|e| PipelineError::new(S::Plan, ErrorKind::Usage, e))?;
                self.write(&format!("stages_{}.json", strategy.as_str()), manifest.to_json().as_bytes())?;
            }
        }

        Ok(RunOutcome {
            report,
            mu,
            tuning,
            artifacts: self.artifacts.clone(),
        })
    }

    fn manifest_bytes(&self, error: Option<&PipelineError>) -> Vec<u8> {
        pretty(&RunManifest {
            format: RUN_MANIFEST_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            status: if error.is_some() { "incomplete" } else { "complete" },
            error: error.map(|e| ManifestError {
                stage: e.stage,
                message: e.message.clone(),
            }),
            config: self.config,
            mu: self.mu,
            index: self.index,
            inputs: &self.inputs,
            artifacts: &self.artifacts,
        })
    }
}

/// Runs every configured stage. On failure the run manifest is still
/// written, marked incomplete.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config
        .validate()
        .map_err(|e| PipelineError::new(PipelineStage::Config, ErrorKind::Usage, e))?;
    fs::create_dir_all(&config.output_dir).map_err(|e| {
        PipelineError::new(
            PipelineStage::Write,
            ErrorKind::Data,
            format!("{}: {e}", config.output_dir.display()),
        )
    })?;
    let _lock = OutputLock::acquire(&config.output_dir)?;
    let mut run = Run {
        config,
        inputs: BTreeMap::new(),
        artifacts: BTreeMap::new(),
        index: None,
        mu: None,
    };
    let result = run.execute();
    let manifest = run.manifest_bytes(result.as_ref().err());
    let path = config.output_dir.join("run_manifest.json");
    let written = File::create(&path).and_then(|mut f| f.write_all(&manifest));
    match (result, written) {
        (Ok(_), Err(e)) => Err(PipelineError::new(
            PipelineStage::Write,
            ErrorKind::Data,
            format!("{}: {e}", path.display()),
        )),
        (result, _) => result,
    }
}

/// Convenience for writing one stage manifest outside a run.
pub fn write_stage_manifest(path: &Path, manifest: &StageManifest) -> std::io::Result<()> {
    fs::write(path, manifest.to_json())
}
