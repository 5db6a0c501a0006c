//! One function per subcommand. Each reads its inputs from explicit paths,
//! writes into `out` and returns what it wrote.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ehrcnn::baselines::{run_baseline_suite, write_suite_csv, write_suite_json, SuiteRow};
use ehrcnn::cohort::{build_cohort, CohortDataset};
use ehrcnn::data::{load_patients, write_events, write_patients, EventKind, RawPatient, Vocabulary};
use ehrcnn::embedding::{nearest_neighbors, train_cbow, EmbeddingMatrix};
use ehrcnn::metrics;
use ehrcnn::nn::{load_checkpoint, predict, save_checkpoint, train_cnn, CnnModel, TrainingHistory};
use ehrcnn::synth::generate_cohort_corpus;
use ehrcnn::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{EvalReport, ModelResult, SplitTable};

pub const PATIENTS: &str = "patients.jsonl";
pub const EVENTS: &str = "events.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const EMBEDDINGS: &str = "embeddings.txt";
pub const COHORT: &str = "cohort.jsonl";
pub const COHORT_SUMMARY: &str = "cohort_summary.json";
pub const MODEL: &str = "model.bin";
pub const HISTORY: &str = "history.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SUITE_JSON: &str = "suite_report.json";
pub const SUITE_CSV: &str = "suite_report.csv";
pub const RUN_CONFIG: &str = "run_config.json";

fn prepare_out(out: &Path, config: &RunConfig) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::from(e).context(format!("creating {}", out.display())))?;
    write_json(&out.join(RUN_CONFIG), config)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    })
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::from(e).context(path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(path.display()))
}

fn load_corpus(patients: &Path, events: &Path) -> Result<Vec<RawPatient>> {
    for p in [patients, events] {
        if !p.is_file() {
            return Err(Error::Config(format!("input file {} does not exist", p.display())));
        }
    }
    with_path(events, load_patients(patients, events))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    with_path(path, Vocabulary::load(path))
}

fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let emb = with_path(path, EmbeddingMatrix::load(path))?;
    if emb.codes != vocab.codes() {
        return Err(Error::Format(format!("{}: embedding rows do not match the vocabulary order", path.display())));
    }
    Ok(emb)
}

fn load_cohort(path: &Path, vocab: &Vocabulary) -> Result<CohortDataset> {
    let dataset = with_path(path, CohortDataset::load(path))?;
    if let Some(bad) = dataset.iter().flat_map(|(_, s)| &s.indices).find(|&&i| i as usize >= vocab.len()) {
        return Err(Error::Data(format!("{}: index {bad} outside vocabulary of {}", path.display(), vocab.len())));
    }
    Ok(dataset)
}

/// Generates the synthetic case/control corpus.
pub fn synth(config: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    config.synth.validate()?;
    prepare_out(out, config)?;
    let patients = generate_cohort_corpus(&config.synth)?;
    let (p, e) = (out.join(PATIENTS), out.join(EVENTS));
    with_path(&p, write_patients(&p, &patients))?;
    with_path(&e, write_events(&e, &patients))?;
    Ok(vec![p, e])
}

/// Builds the vocabulary and trains CBOW embeddings on every patient.
pub fn embed(config: &RunConfig, patients: &Path, events: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    config.cbow.validate()?;
    let corpus = load_corpus(patients, events)?;
    prepare_out(out, config)?;
    let vocab = Vocabulary::build(&corpus, config.cbow.min_count)?;
    let sequences: Vec<Vec<u32>> = vocab.index_patients(&corpus).iter().map(|r| r.indices()).collect();
    let emb = train_cbow(&sequences, &vocab, &config.cbow)?;
    let (v, e) = (out.join(VOCAB), out.join(EMBEDDINGS));
    vocab.save(&v)?;
    emb.save(&e)?;
    Ok(vec![v, e])
}

/// The `k` nearest codes to `code` by cosine, one `code cosine` line each.
pub fn neighbors(embeddings: &Path, code: &str, kind: Option<&str>, k: usize, w: &mut dyn Write) -> Result<()> {
    let kind: Option<EventKind> = kind.map(str::parse).transpose()?;
    let emb = with_path(embeddings, EmbeddingMatrix::load(embeddings))?;
    let matches: Vec<usize> = (0..emb.len())
        .filter(|&i| emb.codes[i].code == code && kind.is_none_or(|k| emb.codes[i].kind == k))
        .collect();
    let query = match matches[..] {
        [i] => i,
        [] => return Err(Error::Data(format!("code {code:?} is not in the embedding vocabulary"))),
        _ => return Err(Error::Config(format!("code {code:?} exists with several kinds; pass --kind"))),
    };
    if k == 0 {
        return Ok(());
    }
    for (i, cos) in nearest_neighbors(&emb, query, k)? {
        writeln!(w, "{} {cos:.6}", emb.codes[i].code)?;
    }
    Ok(())
}

/// Extracts the labelled cohort. Reuses `vocab` when it exists so indices
/// agree with the embeddings; otherwise builds and writes one.
pub fn cohort(config: &RunConfig, patients: &Path, events: &Path, vocab: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    config.cohort.validate()?;
    let corpus = load_corpus(patients, events)?;
    prepare_out(out, config)?;
    let vocab = if vocab.is_file() {
        load_vocab(vocab)?
    } else {
        let built = Vocabulary::build(&corpus, config.cbow.min_count)?;
        built.save(&out.join(VOCAB))?;
        built
    };
    let records = vocab.index_patients(&corpus);
    let dataset = build_cohort(&records, &vocab, &config.cohort)?;
    let (c, s) = (out.join(COHORT), out.join(COHORT_SUMMARY));
    dataset.save(&c)?;
    write_json(&s, &dataset.summary(&config.cohort))?;
    Ok(vec![c, s])
}

/// Inputs shared by `train`, `evaluate` and `suite`.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    pub cohort: PathBuf,
    pub vocab: PathBuf,
    /// Required by the pretrained input modes and the W2v representations.
    pub embeddings: Option<PathBuf>,
}

impl ModelInputs {
    fn load(&self) -> Result<(CohortDataset, Vocabulary, Option<EmbeddingMatrix>)> {
        let vocab = load_vocab(&self.vocab)?;
        let dataset = load_cohort(&self.cohort, &vocab)?;
        let emb = self.embeddings.as_deref().map(|p| load_embeddings(p, &vocab)).transpose()?;
        Ok((dataset, vocab, emb))
    }
}

/// Trains the CNN and writes the checkpoint and its training history.
pub fn train(config: &RunConfig, inputs: &ModelInputs, out: &Path) -> Result<(CnnModel, TrainingHistory)> {
    config.model.validate()?;
    config.train.validate()?;
    let mode = config.model.input_mode;
    if mode.needs_pretrained() && inputs.embeddings.is_none() {
        return Err(Error::Config(format!("input mode {} needs an embedding file (--embeddings)", mode.name())));
    }
    let (dataset, vocab, emb) = inputs.load()?;
    prepare_out(out, config)?;
    let pretrained = emb.as_ref().filter(|_| mode.needs_pretrained()).map(|e| &e.input);
    let (model, history) = train_cnn(&dataset, &config.model, vocab.len(), pretrained, &config.train)?;
    save_checkpoint(&model, &out.join(MODEL))?;
    write_json(&out.join(HISTORY), &history)?;
    Ok((model, history))
}

fn suite_rows(config: &RunConfig, dataset: &CohortDataset, vocab: &Vocabulary, emb: Option<&EmbeddingMatrix>) -> Result<Vec<SuiteRow>> {
    if emb.is_none() && config.suite.representations.iter().any(|r| r.needs_embeddings()) {
        return Err(Error::Config("W2v representations need an embedding file (--embeddings)".into()));
    }
    run_baseline_suite(dataset, vocab.len(), emb.map(|e| &e.input), &config.suite)
}

/// Runs the baseline suite and writes its JSON and CSV tables.
pub fn suite(config: &RunConfig, inputs: &ModelInputs, out: &Path) -> Result<Vec<SuiteRow>> {
    let (dataset, vocab, emb) = inputs.load()?;
    prepare_out(out, config)?;
    let rows = suite_rows(config, &dataset, &vocab, emb.as_ref())?;
    write_with(&out.join(SUITE_JSON), |w| write_suite_json(&rows, w))?;
    write_with(&out.join(SUITE_CSV), |w| write_suite_csv(&rows, w))?;
    Ok(rows)
}

/// Scores a checkpoint on the test split, optionally followed by the
/// baseline suite, and writes the report pair.
pub fn evaluate(config: &RunConfig, model: &Path, inputs: &ModelInputs, with_suite: bool, out: &Path) -> Result<EvalReport> {
    let (dataset, vocab, emb) = inputs.load()?;
    let cnn = with_path(model, load_checkpoint(model))?;
    if cnn.vocab_size() != vocab.len() {
        return Err(Error::Format(format!(
            "{}: model vocabulary of {} does not match {}",
            model.display(),
            cnn.vocab_size(),
            vocab.len()
        )));
    }
    prepare_out(out, config)?;
    let seqs: Vec<&[u32]> = dataset.test.iter().map(|s| s.indices.as_slice()).collect();
    let labels: Vec<u8> = dataset.test.iter().map(|s| s.label).collect();
    let m = metrics::evaluate(&predict(&cnn, &seqs)?, &labels)?;
    let mut models = vec![ModelResult::new("CNN", cnn.input_mode.name(), m)];
    if with_suite {
        models.extend(suite_rows(config, &dataset, &vocab, emb.as_ref())?.into_iter().map(ModelResult::from));
    }
    let report = EvalReport {
        task: config.task.clone(),
        holdoff_days: config.cohort.holdoff_days,
        counts: SplitTable::of(&dataset),
        models,
        config_fingerprint: config.fingerprint(),
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_with(&out.join(REPORT_JSON), |w| report.write_json(w))?;
    write_with(&out.join(REPORT_CSV), |w| report.write_csv(w))?;
    Ok(report)
}
