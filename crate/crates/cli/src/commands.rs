//! The work behind each subcommand, callable without a process boundary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use grounded_lm::corpus::{
    generate_corpus, generate_generalization_probe, generate_minimal_pairs, ingest_pairs, tokenize, write_pairs,
    Alignment, GroundedPair, Image, LabeledSentence, MinimalPair, Phenomenon, SentenceGenerator, WorldSpec,
};
use grounded_lm::eval::{
    finetune_classify, minimal_pair_eval, pppl, read_labeled, read_minimal_pairs, retrieval_accuracy, write_labeled,
    write_minimal_pairs, EvalReport, FinetuneConfig, RetrievalReport, TemplateSet,
};
use grounded_lm::model::ModelParams;
use grounded_lm::pipeline::{PatchCodebook, Vocab, TAG_PREFIX};
use grounded_lm::rng::{seeded, stream};
use grounded_lm::trainer::{self, CheckpointManifest, RunOptions, StopReason, BEST_PARAMS, FINAL_PARAMS};
use grounded_lm::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{human_count, CorpusConfig, GridConfig, RunConfig, Suite};

pub const CONFIG_FILE: &str = "config.toml";
pub const WORLD_FILE: &str = "world.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const CODEBOOK_FILE: &str = "codebook.txt";
pub const SELECTED_FILE: &str = "selected.toml";
pub const EVAL_FILE: &str = "eval.toml";
pub const DONE_FILE: &str = "done.toml";
pub const GRID_FILE: &str = "grid.toml";
pub const REPORT_FILE: &str = "report.md";

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const PAIRS_FILE: &str = "minimal_pairs.tsv";
pub const PROBE_TRAIN_FILE: &str = "probe_train.tsv";
pub const PROBE_TEST_FILE: &str = "probe_test.tsv";

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io { path: path.to_owned(), source: e }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io(path))
}

fn tagged(hash: &str, body: &str) -> String {
    format!("{TAG_PREFIX}{hash}\n{body}")
}

/// Splits off a leading tag line.
fn untag(text: &str) -> (Option<&str>, &str) {
    match text.split_once('\n') {
        Some((first, rest)) if first.starts_with(TAG_PREFIX) => (Some(&first[TAG_PREFIX.len()..]), rest),
        _ => (None, text),
    }
}

/// A world description, tagged when written by a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub world: WorldSpec,
}

impl WorldFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &serde_json::to_string_pretty(self).expect("world serializes"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io(path))?;
        let w: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.to_owned(), line: e.line(), message: e.to_string() })?;
        w.world.validate()?;
        Ok(w)
    }
}

#[derive(Clone, Debug)]
pub struct GenDataOptions {
    pub classes: usize,
    pub pairs: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub minimal_pairs_per_phenomenon: usize,
    pub probe_train: usize,
    pub probe_test: usize,
    pub captions_only: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenDataSummary {
    pub pairs: usize,
    pub words: u64,
    pub images: u64,
    pub files: Vec<PathBuf>,
}

fn keep_captions(corpus: Vec<GroundedPair>) -> Vec<GroundedPair> {
    corpus
        .into_iter()
        .map(|p| {
            let texts = p.texts.into_iter().filter(|t| t.alignment == Alignment::Caption).collect();
            GroundedPair::new(p.pair_id, p.image, texts)
        })
        .collect()
}

fn all_minimal_pairs(world: &WorldSpec, per_phenomenon: usize) -> Result<Vec<MinimalPair>> {
    let mut out = Vec::new();
    for p in Phenomenon::ALL {
        out.extend(generate_minimal_pairs(world, p.as_str(), per_phenomenon)?);
    }
    Ok(out)
}

/// Writes a world, its corpus, minimal pairs and probe splits.
pub fn gen_data(opts: &GenDataOptions) -> Result<GenDataSummary> {
    if opts.pairs == 0 {
        return Err(Error::Usage("--pairs must be at least 1".into()));
    }
    if opts.classes == 0 {
        return Err(Error::Usage("--classes must be at least 1".into()));
    }
    if opts.minimal_pairs_per_phenomenon == 0 {
        return Err(Error::Usage("--minimal-pairs must be at least 1".into()));
    }
    let world = WorldSpec::new(opts.classes, opts.seed)?;
    let mut corpus = generate_corpus(&world, opts.pairs)?;
    if opts.captions_only {
        corpus = keep_captions(corpus);
    }
    let pairs = all_minimal_pairs(&world, opts.minimal_pairs_per_phenomenon)?;
    let probe = generate_generalization_probe(&world, opts.probe_train, opts.probe_test)?;

    fs::create_dir_all(&opts.out).map_err(io(&opts.out))?;
    let files: Vec<PathBuf> =
        [WORLD_FILE, CORPUS_FILE, PAIRS_FILE, PROBE_TRAIN_FILE, PROBE_TEST_FILE].iter().map(|f| opts.out.join(f)).collect();
    WorldFile { config_hash: None, world }.save(&files[0])?;
    write_pairs(&files[1], &corpus)?;
    write_minimal_pairs(&files[2], &pairs)?;
    write_labeled(&files[3], &probe.train)?;
    write_labeled(&files[4], &probe.test)?;
    Ok(GenDataSummary {
        pairs: corpus.len(),
        words: corpus.iter().map(|p| p.word_count as u64).sum(),
        images: corpus.iter().filter(|p| p.image.is_some()).count() as u64,
        files,
    })
}

/// The world and corpus a run config points at.
pub fn load_corpus(c: &CorpusConfig) -> Result<(WorldSpec, Vec<GroundedPair>)> {
    let world = match &c.world {
        Some(p) => WorldFile::load(p)?.world,
        None => WorldSpec::new(c.classes, c.seed)?,
    };
    let corpus = match &c.path {
        Some(p) => ingest_pairs(p)?,
        None => generate_corpus(&world, c.pairs)?,
    };
    let corpus = if c.captions_only { keep_captions(corpus) } else { corpus };
    Ok((world, corpus))
}

/// The world's vocabulary extended with any further corpus tokens.
pub fn build_vocab(world: &WorldSpec, corpus: &[GroundedPair]) -> Vocab {
    let mut vocab = Vocab::for_world(world);
    for p in corpus {
        for t in &p.texts {
            for tok in tokenize(&t.text) {
                vocab.push(&tok);
            }
        }
    }
    vocab
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PretrainSummary {
    pub config_hash: String,
    pub selected_step: u64,
    pub steps: u64,
    pub stop_reason: StopReason,
}

/// Runs one pretraining job and writes all of its artifacts under `out`.
pub fn pretrain(config: &RunConfig, out: &Path) -> Result<PretrainSummary> {
    config.validate()?;
    let hash = config.hash();
    let (world, corpus) = load_corpus(&config.corpus)?;
    pretrain_on(config, &world, &corpus, out, &hash)
}

fn pretrain_on(config: &RunConfig, world: &WorldSpec, corpus: &[GroundedPair], out: &Path, hash: &str) -> Result<PretrainSummary> {
    fs::create_dir_all(out).map_err(io(out))?;
    let mut resolved = config.clone();
    resolved.out = None;
    write(&out.join(CONFIG_FILE), &tagged(hash, &resolved.to_toml()))?;
    WorldFile { config_hash: Some(hash.to_string()), world: world.clone() }.save(&out.join(WORLD_FILE))?;

    let vocab = build_vocab(world, corpus);
    let opts = RunOptions { config_hash: hash.to_string(), out_dir: Some(out.to_owned()), validation_hook: None };
    let (data, outcome) =
        trainer::run(corpus, config.budget, vocab, &config.model, &config.train, &config.scheduler, opts)?;
    data.vocab.save_tagged(&out.join(VOCAB_FILE), hash)?;
    if let Some(book) = &data.codebook {
        book.save_tagged(&out.join(CODEBOOK_FILE), hash)?;
    }
    Ok(PretrainSummary {
        config_hash: hash.to_string(),
        selected_step: outcome.selected.step,
        steps: outcome.steps,
        stop_reason: outcome.stop_reason,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Which {
    /// The checkpoint picked by validation loss.
    #[default]
    Best,
    Final,
}

/// A trained model with everything needed to evaluate it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub config_hash: String,
    pub world: WorldSpec,
    pub vocab: Vocab,
    pub codebook: Option<PatchCodebook>,
    pub params: ModelParams,
    pub selected: CheckpointManifest,
}

fn check_tag(path: &Path, tag: Option<&str>, hash: &str) -> Result<()> {
    match tag {
        Some(t) if t == hash => Ok(()),
        Some(t) => Err(Error::Validation(format!(
            "{} belongs to config {t}, not {hash}",
            path.display()
        ))),
        None => Err(Error::Validation(format!("{} carries no config hash", path.display()))),
    }
}

/// Loads a pretraining output directory, refusing artifacts from other configs.
pub fn load_checkpoint(dir: &Path, which: Which) -> Result<Checkpoint> {
    let cpath = dir.join(CONFIG_FILE);
    let text = fs::read_to_string(&cpath).map_err(io(&cpath))?;
    let (tag, body) = untag(&text);
    let config = RunConfig::from_toml(body)?;
    let hash = config.hash();
    check_tag(&cpath, tag, &hash)?;

    let wpath = dir.join(WORLD_FILE);
    let world = WorldFile::load(&wpath)?;
    check_tag(&wpath, world.config_hash.as_deref(), &hash)?;
    let vpath = dir.join(VOCAB_FILE);
    let (vocab, vtag) = Vocab::load_tagged(&vpath)?;
    check_tag(&vpath, vtag.as_deref(), &hash)?;
    let bpath = dir.join(CODEBOOK_FILE);
    let codebook = if bpath.exists() {
        let (b, t) = PatchCodebook::load_tagged(&bpath)?;
        check_tag(&bpath, t.as_deref(), &hash)?;
        Some(b)
    } else {
        None
    };
    let spath = dir.join(SELECTED_FILE);
    let selected = CheckpointManifest::load(&spath)?;
    check_tag(&spath, Some(&selected.config_hash), &hash)?;

    let mut model = config.model.clone();
    model.vocab_size = vocab.len();
    if let Some(b) = &codebook {
        model.codebook_size = b.k();
    }
    let ppath = dir.join(match which {
        Which::Best => BEST_PARAMS,
        Which::Final => FINAL_PARAMS,
    });
    let (params, ptag) = ModelParams::load_tagged(&model, &ppath)?;
    check_tag(&ppath, Some(&ptag), &hash)?;
    Ok(Checkpoint {
        dir: dir.to_owned(),
        config,
        config_hash: hash,
        world: world.world,
        vocab,
        codebook,
        params,
        selected,
    })
}

/// Overrides for `eval`; anything left `None` comes from the run config.
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub suites: Option<Vec<Suite>>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub pppl_path: Option<PathBuf>,
    pub minimal_pairs_path: Option<PathBuf>,
    pub probe_train_path: Option<PathBuf>,
    pub probe_test_path: Option<PathBuf>,
}

fn read_sentences(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Runs the requested suites on a checkpoint.
pub fn evaluate(ck: &Checkpoint, opts: &EvalOptions) -> Result<EvalReport> {
    let cfg = &ck.config;
    let e = &cfg.eval;
    let seed = opts.seed.unwrap_or_else(|| cfg.eval_seed());
    let suites = opts.suites.clone().unwrap_or_else(|| e.suites.clone());
    let k = opts.k.unwrap_or(e.retrieval_k);
    if k == 0 {
        return Err(Error::Usage("--k must be positive".into()));
    }
    let mut report = EvalReport::default();
    for suite in suites {
        match suite {
            Suite::Pppl => {
                let sentences = match opts.pppl_path.as_ref().or(e.pppl_path.as_ref()) {
                    Some(p) => read_sentences(p)?,
                    None => {
                        let gen = SentenceGenerator::new(&ck.world);
                        let mut rng = seeded(seed, stream::EVAL_SENTENCES);
                        (0..e.pppl_sentences).map(|_| gen.sentence(&mut rng, None)).collect()
                    }
                };
                report.pppl = Some(pppl(&ck.params, &ck.vocab, &sentences)?);
            }
            Suite::MinimalPairs => {
                let pairs = match opts.minimal_pairs_path.as_ref().or(e.minimal_pairs_path.as_ref()) {
                    Some(p) => read_minimal_pairs(p)?,
                    None => all_minimal_pairs(&ck.world, e.minimal_pairs_per_phenomenon)?,
                };
                report.minimal_pairs = Some(minimal_pair_eval(&ck.params, &ck.vocab, &pairs)?);
            }
            Suite::Finetune => {
                let train_path = opts.probe_train_path.as_ref().or(e.probe_train_path.as_ref());
                let test_path = opts.probe_test_path.as_ref().or(e.probe_test_path.as_ref());
                let (train, test): (Vec<LabeledSentence>, Vec<LabeledSentence>) = match (train_path, test_path) {
                    (Some(a), Some(b)) => (read_labeled(a)?, read_labeled(b)?),
                    (None, None) => {
                        let p = generate_generalization_probe(&ck.world, e.probe_train, e.probe_test)?;
                        (p.train, p.test)
                    }
                    _ => return Err(Error::Usage("fine-tuning needs both a train and a test file".into())),
                };
                let ft = FinetuneConfig {
                    epochs: e.finetune_epochs,
                    batch_size: e.finetune_batch_size,
                    lr: cfg.train.lr_text,
                    weight_decay: cfg.train.weight_decay,
                    seed,
                };
                let m = finetune_classify(&ck.params, &ck.vocab, &train, &test, &ft)?;
                report.finetune.insert("probe".into(), m);
            }
            Suite::Retrieval => {
                let names: Vec<String> = (0..ck.world.num_classes).map(|c| ck.world.class_name(c).to_string()).collect();
                let templates = TemplateSet::new(e.templates.clone().unwrap_or_else(|| ck.world.templates.clone()))?;
                let mut rng = seeded(seed, stream::RETRIEVAL);
                let images: Vec<(Image, usize)> = (0..e.retrieval_queries)
                    .map(|q| {
                        let c = q % names.len();
                        (ck.world.render_jittered(c, &mut rng), c)
                    })
                    .collect();
                let queries: Vec<(&Image, usize)> = images.iter().map(|(i, c)| (i, *c)).collect();
                let mut ks = vec![1, 5];
                if !ks.contains(&k) {
                    ks.push(k);
                }
                let acc = retrieval_accuracy(&ck.params, &ck.vocab, &queries, &names, &templates, &ks)?;
                let extra: BTreeMap<String, f64> =
                    if ks.len() > 2 { [(format!("top{k}"), acc[2])].into_iter().collect() } else { BTreeMap::new() };
                report.retrieval = Some(RetrievalReport { top1: acc[0], top5: acc[1], extra });
            }
        }
    }
    Ok(report)
}

pub fn write_eval_report(path: &Path, report: &EvalReport, hash: &str) -> Result<()> {
    write(path, &tagged(hash, &report.to_toml()))
}

pub fn read_eval_report(path: &Path) -> Result<(EvalReport, Option<String>)> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let (tag, body) = untag(&text);
    Ok((EvalReport::from_toml(body)?, tag.map(str::to_string)))
}

/// Marker written once a grid cell has finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellDone {
    pub config_hash: String,
    pub selected_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellStatus {
    Ran { selected_step: u64 },
    Resumed,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellOutcome {
    pub words: u64,
    pub images: u64,
    pub dir: PathBuf,
    pub config_hash: String,
    pub status: CellStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSummary {
    pub cells: Vec<CellOutcome>,
    pub report: String,
}

impl AblationSummary {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| matches!(c.status, CellStatus::Failed(_))).count()
    }
}

pub fn cell_dir_name(words: u64, images: u64) -> String {
    format!("words-{words}_images-{images}")
}

fn cell_is_done(dir: &Path, hash: &str) -> bool {
    let path = dir.join(DONE_FILE);
    let Ok(text) = fs::read_to_string(&path) else { return false };
    toml::from_str::<CellDone>(&text).is_ok_and(|d| d.config_hash == hash) && dir.join(EVAL_FILE).exists()
}

fn run_cell(config: &RunConfig, world: &WorldSpec, corpus: &[GroundedPair], dir: &Path, hash: &str) -> Result<u64> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io(dir))?;
    }
    let summary = pretrain_on(config, world, corpus, dir, hash)?;
    let ck = load_checkpoint(dir, Which::Best)?;
    let report = evaluate(&ck, &EvalOptions::default())?;
    write_eval_report(&dir.join(EVAL_FILE), &report, hash)?;
    let done = CellDone { config_hash: hash.to_string(), selected_step: summary.selected_step };
    write(&dir.join(DONE_FILE), &toml::to_string(&done).expect("marker serializes"))?;
    Ok(summary.selected_step)
}

/// Runs every grid cell not already completed under the same config hash,
/// then writes the consolidated report.
pub fn ablate(grid: &GridConfig, out: &Path) -> Result<AblationSummary> {
    let budgets = grid.cells()?;
    for b in &budgets {
        grid.cell_config(*b).validate()?;
    }
    fs::create_dir_all(out).map_err(io(out))?;
    write(&out.join(GRID_FILE), &tagged(&grid.hash(), &grid.to_toml()))?;
    let mut corpus_cache: Option<(WorldSpec, Vec<GroundedPair>)> = None;
    let mut cells = Vec::new();
    for b in budgets {
        let config = grid.cell_config(b);
        let hash = config.hash();
        let dir = out.join(cell_dir_name(b.words, b.images));
        let status = if cell_is_done(&dir, &hash) {
            CellStatus::Resumed
        } else {
            let loaded = match corpus_cache.take() {
                Some(c) => Ok(c),
                None => load_corpus(&config.corpus),
            };
            match loaded {
                Ok((world, corpus)) => {
                    let r = run_cell(&config, &world, &corpus, &dir, &hash);
                    corpus_cache = Some((world, corpus));
                    match r {
                        Ok(selected_step) => CellStatus::Ran { selected_step },
                        Err(e) => CellStatus::Failed(e.to_string()),
                    }
                }
                Err(e) => CellStatus::Failed(e.to_string()),
            }
        };
        if let CellStatus::Failed(msg) = &status {
            let _ = fs::create_dir_all(&dir);
            let _ = fs::write(dir.join("failed.txt"), format!("{msg}\n"));
        }
        cells.push(CellOutcome { words: b.words, images: b.images, dir, config_hash: hash, status });
    }
    let report = report(out)?;
    Ok(AblationSummary { cells, report })
}

/// Rebuilds the consolidated table from a grid output directory: one row
/// per metric, one column per (words, images) cell, words-major.
pub fn report(dir: &Path) -> Result<String> {
    let gpath = dir.join(GRID_FILE);
    let text = fs::read_to_string(&gpath).map_err(io(&gpath))?;
    let (_, body) = untag(&text);
    let grid = GridConfig::from_toml(body)?;
    let budgets = grid.cells()?;

    let mut columns: Vec<Option<EvalReport>> = Vec::new();
    for b in &budgets {
        let hash = grid.cell_config(*b).hash();
        let cell = dir.join(cell_dir_name(b.words, b.images));
        let path = cell.join(EVAL_FILE);
        columns.push(match read_eval_report(&path) {
            Ok((r, Some(tag))) if tag == hash && cell_is_done(&cell, &hash) => Some(r),
            _ => None,
        });
    }
    let mut metrics: Vec<String> = Vec::new();
    for r in columns.iter().flatten() {
        for (name, _) in r.rows() {
            if !metrics.contains(&name) {
                metrics.push(name);
            }
        }
    }

    let mut out = format!("{TAG_PREFIX}{}\n", grid.hash());
    let mut group = String::from("| |");
    for &w in &grid.words {
        group.push_str(&format!(" {} words |", human_count(w)));
        group.push_str(&" |".repeat(grid.images.len() - 1));
    }
    out.push_str(&group);
    out.push('\n');
    let mut header = String::from("| metric |");
    for b in &budgets {
        header.push_str(&format!(" {} images |", human_count(b.images)));
    }
    out.push_str(&header);
    out.push('\n');
    out.push_str(&format!("|---|{}\n", "---|".repeat(budgets.len())));
    for m in &metrics {
        let mut line = format!("| {m} |");
        for c in &columns {
            let v = c.as_ref().and_then(|r| r.rows().into_iter().find(|(n, _)| n == m)).map(|(_, v)| v);
            match v {
                Some(v) => line.push_str(&format!(" {v:.4} |")),
                None => line.push_str(" - |"),
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    let mut status = String::from("| status |");
    for c in &columns {
        status.push_str(if c.is_some() { " ok |" } else { " failed |" });
    }
    out.push_str(&status);
    out.push('\n');
    write(&dir.join(REPORT_FILE), &out)?;
    Ok(out)
}
