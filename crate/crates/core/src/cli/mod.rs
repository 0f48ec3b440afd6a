//! Command-line front end: `synth`, `augment`, `train`, `detect`, `generate`
//! and `score`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3
//! numeric failure.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::augmentation::{retrieve_augmentations, EmbeddingTable, SentencePool};
use crate::corpus::{
    build_vocab, generate_synthetic, load_corpus, sample_sentences, split_records, synthetic_embeddings,
    write_corpus, CorpusRecord, PoolingConfig, Split, SyntheticSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::highlight::{detect_window, detector_map, write_assignments, Assignment, HighlightDetector};
use crate::metrics::ScoreReport;
use crate::model::{CaptionModel, Checkpoint, DecodeMode, ModelKind, VideoFeatures};
use crate::training::{observe, run_variant, TrainConfig, Variant, VariantData, VariantSpec};

/// Environment variable naming the directory relative paths are resolved
/// against.
pub const DATA_ROOT_ENV: &str = "TITLEGEN_DATA_ROOT";

pub const MODEL_FILE: &str = "model.ckpt";
pub const DETECTOR_FILE: &str = "detector.ckpt";
pub const LOG_FILE: &str = "train.log";
pub const CONFIG_FILE: &str = "config.txt";
pub const ASSIGNMENTS_FILE: &str = "assignments.txt";

#[derive(Parser, Debug)]
#[command(name = "titlegen", version, about = "Highlight-sensitive video title generation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress timestamps in log output.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic planted-highlight corpus with a sentence pool and
    /// word embeddings.
    Synth(SynthArgs),
    /// Retrieve sentence-only examples similar to the training titles.
    Augment(AugmentArgs),
    /// Train one variant and write its run directory.
    Train(TrainArgs),
    /// Write detected highlight windows and report mAP on labeled videos.
    Detect(DetectArgs),
    /// Write one title per video of a split.
    Generate(GenerateArgs),
    /// Score generated titles against the corpus titles.
    Score(ScoreArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// `default` or a `key = value` spec file.
    #[arg(long, default_value = "default")]
    spec: String,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sentences sampled into `pool.txt`.
    #[arg(long, default_value_t = 500)]
    pool_size: usize,
    /// Width of the vectors in `embeddings.txt`.
    #[arg(long, default_value_t = 16)]
    embedding_dim: usize,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Manifest file.
    #[arg(long)]
    corpus: PathBuf,
    /// Clips per video at ingestion.
    #[arg(long, default_value_t = 45)]
    max_clips: usize,
    /// Frames per clip; takes precedence over `--max-clips`.
    #[arg(long)]
    frames_per_clip: Option<usize>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    threshold: f64,
    #[arg(long)]
    target: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    #[arg(long, value_parser = parse_kind)]
    model: ModelKind,
    /// `desk`, `full` or a `key = value` config file.
    #[arg(long, default_value = "desk")]
    config: String,
    /// Sentence-only examples, one per line (web-augmented variants).
    #[arg(long)]
    augment: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Beam width; greedy when absent.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long, default_value_t = 20)]
    max_len: usize,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Generated titles, `id<TAB>title` per line.
    #[arg(long)]
    titles: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Split,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Runs one invocation; `argv[0]` is the program name.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    init_logging(cli.verbose, cli.deterministic);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            let _ = writeln!(err, "error: --jobs must be at least 1");
            return 1;
        }
        builder = builder.num_threads(j);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return 2;
        }
    };
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    let ctx = Ctx { root };
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| {
        let out = &mut buf;
        match &cli.command {
            Command::Synth(a) => ctx.synth(a, out),
            Command::Augment(a) => ctx.augment(a, out),
            Command::Train(a) => ctx.train(a, out),
            Command::Detect(a) => ctx.detect(a, out),
            Command::Generate(a) => ctx.generate(a, out),
            Command::Score(a) => ctx.score(a, out),
        }
    });
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// 3 for numeric failures, 2 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) | Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn init_logging(verbose: u8, deterministic: bool) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level));
    if deterministic {
        b.format_timestamp(None);
    }
    let _ = b.try_init();
}

struct Ctx {
    root: Option<PathBuf>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

/// Training-split text that fixes the vocabulary of a run.
fn vocab_text<'a>(spec: &VariantSpec, records: &'a [CorpusRecord], extra: &'a [String]) -> Vec<&'a str> {
    let train = split_records(records, Split::Train);
    let mut text: Vec<&str> = train.iter().map(|r| r.title.as_str()).collect();
    if spec.descriptions != crate::training::DescriptionMode::Off {
        text.extend(train.iter().flat_map(|r| r.descriptions.iter().map(String::as_str)));
    }
    if spec.web_augmentation {
        text.extend(extra.iter().map(String::as_str));
    }
    text
}

/// A trained run directory loaded back.
struct LoadedRun {
    variant: Variant,
    model: CaptionModel,
    vocab: Vocabulary,
    window_length: usize,
    detector: Option<HighlightDetector>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn load(&self, a: &CorpusArgs) -> Result<Vec<CorpusRecord>> {
        let pooling = PoolingConfig {
            max_clips: a.max_clips,
            frames_per_clip: a.frames_per_clip,
        };
        let loaded = load_corpus(&self.path(&a.corpus), &pooling)?;
        for w in &loaded.warnings {
            log::warn!("{w}");
        }
        Ok(loaded.records)
    }

    fn synth(&self, a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
        let mut spec = if a.spec == "default" {
            SyntheticSpec::default()
        } else {
            let p = self.path(Path::new(&a.spec));
            SyntheticSpec::parse(&read_text(&p)?, &p)?
        };
        if let Some(s) = a.seed {
            spec.seed = s;
        }
        spec.validate()?;
        let dir = self.path(&a.out);
        let corpus = generate_synthetic(&spec)?;
        let manifest = write_corpus(&dir, &corpus.records)?;
        write_file(&dir.join("spec.txt"), spec.to_kv())?;
        let mut pool = sample_sentences(&spec, a.pool_size, spec.seed.wrapping_add(1))?.join("\n");
        pool.push('\n');
        write_file(&dir.join("pool.txt"), pool)?;
        if a.embedding_dim == 0 {
            return Err(Error::InvalidArgument("--embedding-dim must be >= 1".into()));
        }
        let table = EmbeddingTable::from_entries(synthetic_embeddings(&spec, a.embedding_dim, spec.seed.wrapping_add(2)))?;
        write_file(&dir.join("embeddings.txt"), table.to_text())?;
        say(out, format!("wrote {} records to {}", corpus.records.len(), manifest.display()))
    }

    fn augment(&self, a: &AugmentArgs, out: &mut dyn Write) -> Result<()> {
        let records = self.load(&a.corpus)?;
        let queries: Vec<&str> = split_records(&records, Split::Train).iter().map(|r| r.title.as_str()).collect();
        let pool = SentencePool::read(&self.path(&a.pool))?;
        let table = EmbeddingTable::read(&self.path(&a.embeddings))?;
        let r = retrieve_augmentations(&queries, &pool, &table, a.threshold, a.target, a.seed)?;
        for w in &r.warnings {
            log::warn!("{w}");
        }
        let mut text = r.sentences.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_file(&self.path(&a.out), text)?;
        say(
            out,
            format!("eligible {} retrieved {} pool {}", r.eligible.len(), r.sentences.len(), pool.len()),
        )
    }

    fn config(&self, name: &str) -> Result<TrainConfig> {
        match TrainConfig::preset(name) {
            Some(c) => Ok(c),
            None => {
                let p = self.path(Path::new(name));
                TrainConfig::parse(&read_text(&p)?, &p)
            }
        }
    }

    fn train(&self, a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
        let records = self.load(&a.corpus)?;
        let mut cfg = self.config(&a.config)?;
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        let web: Vec<String> = match &a.augment {
            Some(p) => read_text(&self.path(p))?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
            None => Vec::new(),
        };
        let spec = a.variant.spec();
        let vocab = build_vocab(&vocab_text(spec, &records, &web), 1);
        let data = VariantData {
            records: &records,
            vocab: &vocab,
            web_sentences: &web,
        };
        let run = run_variant(a.variant, a.model, &data, &cfg)?;

        let dir = self.path(&a.out);
        let mut ck = run.model.to_checkpoint();
        ck.set_meta("vocabulary", &vocab.tokens());
        ck.set_meta("variant", &spec.name);
        ck.set_meta("window_length", &cfg.window_length);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        ck.write(&dir.join(MODEL_FILE))?;
        if let Some(det) = &run.detector {
            det.to_checkpoint().write(&dir.join(DETECTOR_FILE))?;
        }
        if !run.assignments.is_empty() {
            let items: Vec<Assignment> = run
                .assignments
                .iter()
                .map(|(id, w, loss)| Assignment {
                    id: id.clone(),
                    window: *w,
                    loss: *loss,
                })
                .collect();
            write_assignments(&dir.join(ASSIGNMENTS_FILE), &items)?;
        }
        write_file(&dir.join(CONFIG_FILE), cfg.to_kv())?;
        let mut log_text = String::new();
        for l in &run.log {
            writeln!(log_text, "{l}").unwrap();
        }
        write_file(&dir.join(LOG_FILE), log_text)?;
        for l in run.log.iter().filter(|l| !l.contains("epoch ") || l.starts_with("best_epoch")) {
            say(out, l)?;
        }
        say(out, format!("wrote {}", dir.display()))
    }

    fn load_run(&self, dir: &Path) -> Result<LoadedRun> {
        let dir = self.path(dir);
        let ck = Checkpoint::read(&dir.join(MODEL_FILE))?;
        let model = CaptionModel::from_checkpoint(&ck)?;
        let vocab = Vocabulary::from_tokens(ck.meta_as("vocabulary")?)?;
        if vocab.len() != model.dims().vocab_size {
            return Err(Error::Checkpoint("vocabulary size differs from the model".into()));
        }
        let name: String = ck.meta_as("variant")?;
        let det_path = dir.join(DETECTOR_FILE);
        let detector = if det_path.exists() {
            Some(HighlightDetector::from_checkpoint(&Checkpoint::read(&det_path)?)?)
        } else {
            None
        };
        Ok(LoadedRun {
            variant: name.parse()?,
            model,
            vocab,
            window_length: ck.meta_as("window_length")?,
            detector,
        })
    }

    fn detect(&self, a: &DetectArgs, out: &mut dyn Write) -> Result<()> {
        let a = &a.run;
        let records = self.load(&a.corpus)?;
        let run = self.load_run(&a.run)?;
        let det = run.detector.as_ref().ok_or_else(|| {
            Error::InvalidArgument(format!("run {} has no highlight detector", a.run.display()))
        })?;
        let recs = split_records(&records, a.split);
        let items = recs
            .iter()
            .map(|r| {
                let v = r.video.as_ref();
                let w = detect_window(&det.score_clips(v)?.0, run.window_length.min(v.len()))?;
                let loss = run.model.sentence_nll(&w.crop(v)?, &run.vocab.encode(&r.title))?;
                Ok(Assignment {
                    id: r.id.clone(),
                    window: w,
                    loss,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_assignments(&self.path(&a.out), &items)?;
        let labeled: Vec<(&VideoFeatures, _)> = recs
            .iter()
            .filter_map(|r| r.highlight.map(|w| (r.video.as_ref(), w)))
            .collect();
        if labeled.is_empty() {
            say(out, format!("wrote {} windows; no labels in split {}", items.len(), a.split))
        } else {
            let m = detector_map(det, &labeled)?;
            let hits = recs
                .iter()
                .zip(&items)
                .filter(|(r, it)| r.highlight.is_some_and(|w| w.iou(&it.window) >= 0.5))
                .count();
            say(
                out,
                format!(
                    "map {:.6} evaluated {} excluded {} iou50 {}/{}",
                    m.map,
                    m.evaluated,
                    m.excluded,
                    hits,
                    labeled.len()
                ),
            )
        }
    }

    fn generate(&self, a: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
        let mode = match a.beam {
            None => DecodeMode::Greedy,
            Some(0) => return Err(Error::InvalidArgument("--beam must be >= 1".into())),
            Some(b) => DecodeMode::Beam(b),
        };
        let r = &a.run;
        let records = self.load(&r.corpus)?;
        let run = self.load_run(&r.run)?;
        let window = run.variant.spec().test_window;
        let mut text = String::new();
        let recs = split_records(&records, r.split);
        for rec in &recs {
            if rec.id.contains(['\t', '\n']) {
                return Err(Error::InvalidRecord {
                    id: rec.id.clone(),
                    msg: "id contains a tab or newline".into(),
                });
            }
            let obs = observe(window, run.detector.as_ref(), rec, &rec.video, run.window_length)?;
            let d = run.model.decode_title(&obs, mode, a.max_len)?;
            writeln!(text, "{}\t{}", rec.id, run.vocab.decode(&d.sentence)).unwrap();
        }
        write_file(&self.path(&r.out), text)?;
        say(out, format!("wrote {} titles", recs.len()))
    }

    fn score(&self, a: &ScoreArgs, out: &mut dyn Write) -> Result<()> {
        let records = self.load(&a.corpus)?;
        let path = self.path(&a.titles);
        let text = read_text(&path)?;
        let mut generated: HashMap<&str, &str> = HashMap::new();
        let mut order = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (id, title) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: i + 1,
                msg: "expected `id<TAB>title`".into(),
            })?;
            if generated.insert(id, title).is_some() {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: i + 1,
                    msg: format!("duplicate id {id}"),
                });
            }
            order.push(id);
        }
        let recs = split_records(&records, a.split);
        let expected: HashSet<&str> = recs.iter().map(|r| r.id.as_str()).collect();
        if let Some(r) = recs.iter().find(|r| !generated.contains_key(r.id.as_str())) {
            return Err(Error::InvalidRecord {
                id: r.id.clone(),
                msg: format!("no generated title in {}", path.display()),
            });
        }
        if let Some(id) = order.iter().find(|id| !expected.contains(*id)) {
            return Err(Error::InvalidRecord {
                id: id.to_string(),
                msg: format!("not in the {} split", a.split),
            });
        }
        let cands: Vec<&str> = recs.iter().map(|r| generated[r.id.as_str()]).collect();
        let refs: Vec<&str> = recs.iter().map(|r| r.title.as_str()).collect();
        let report = ScoreReport::compute(&cands, &refs)?;
        if let Some(p) = &a.out {
            write_file(&self.path(p), report.to_text())?;
        }
        write!(out, "{}", report.to_text()).map_err(|e| Error::io("<stdout>", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("titlegen").chain(args.iter().copied());
        let code = run(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = call(&["train", "--bogus"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"), "{err}");
        assert_eq!(call(&[]).0, 1);
        let (code, _, err) = call(&["train", "--corpus", "m", "--variant", "hl-7", "--model", "sa", "--out", "o"]);
        assert_eq!(code, 1);
        assert!(err.contains("hl-7"));
        assert_eq!(call(&["--jobs", "0", "score", "--corpus", "m", "--titles", "t"]).0, 1);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        for c in ["synth", "augment", "train", "detect", "generate", "score"] {
            assert!(out.contains(c), "{c}");
        }
    }

    #[test]
    fn missing_files_exit_two() {
        let (code, _, err) = call(&["score", "--corpus", "/nonexistent/m.txt", "--titles", "t"]);
        assert_eq!(code, 2);
        assert!(err.contains("/nonexistent/m.txt"));
    }

    #[test]
    fn numeric_errors_map_to_three() {
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 3);
        assert_eq!(exit_code(&Error::Invariant("x".into())), 3);
        assert_eq!(exit_code(&Error::Empty { op: "x" }), 2);
    }
}
