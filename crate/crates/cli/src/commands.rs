//! Subcommand arguments and implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use wser_core::corpus::{
    self, check_fraction, load_manifest, load_manifest_with_taxonomy, read_weak_labels, split_corpus, write_weak_labels,
    Corpus, SplitAssignment, Taxonomy, WeakLabelRecord,
};
use wser_core::dsp::MelConfig;
use wser_core::evaluation::{
    self, compare_taxonomies, entailment_gt_baseline, evaluate_checkpoint, format_table, fraction_plot_svg,
    label_efficiency, majority_report, sweep_prompts, word2vec_baseline, write_jsonl, zero_shot_eval, EvalReport,
    WordEmbeddingTable,
};
use wser_core::features::FileAudioSource;
use wser_core::labeler::{label_corpus, LabelerConfig, Orientation};
use wser_core::model::{Architecture, ModelCheckpoint, ModelConfig};
use wser_core::prompting::{builtin_catalog, load_prompt_file, resolve_prompt, DEFAULT_PROMPT_ID};
use wser_core::synth::{synth_corpus, SynthSpec};
use wser_core::training::{finetune, pretrain, write_train_log, FinetuneSpec, TrainRunConfig};

use crate::config::{resolve, usage, write_snapshot, UsageError};
use crate::scorer::ScorerSpec;

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| UsageError(format!("--{flag} is required")).into())
}

fn parse_orientation(s: Option<&str>) -> Result<Orientation> {
    match s.unwrap_or("label-premise") {
        "label-premise" => Ok(Orientation::LabelPremise),
        "transcript-premise" => Ok(Orientation::TranscriptPremise),
        other => usage(format!(
            "orientation {other:?} must be label-premise or transcript-premise"
        )),
    }
}

fn parse_architecture(s: Option<&str>) -> Result<Architecture> {
    match s.unwrap_or("small_cnn") {
        "small_cnn" | "small-cnn" => Ok(Architecture::small_cnn()),
        "linear" => Ok(Architecture::Linear),
        other => usage(format!("architecture {other:?} must be small_cnn or linear")),
    }
}

fn parse_fraction(f: f64) -> Result<f64> {
    check_fraction(f).map_err(|_| {
        UsageError(format!(
            "fraction {f} is not one of {}",
            corpus::FRACTIONS.map(|x| x.to_string()).join(", ")
        ))
        .into()
    })
}

fn load_taxonomy(path: Option<&PathBuf>) -> Result<Option<Taxonomy>> {
    path.map(|p| Taxonomy::load(p).with_context(|| format!("loading taxonomy {}", p.display())))
        .transpose()
}

fn load_corpus(manifest: &Path, taxonomy: Option<Taxonomy>) -> Result<Corpus> {
    let c = match taxonomy {
        Some(t) => load_manifest_with_taxonomy(manifest, Some(t)),
        None => load_manifest(manifest),
    };
    c.with_context(|| format!("loading manifest {}", manifest.display()))
}

fn audio_source(audio_dir: Option<&PathBuf>, manifest: &Path) -> FileAudioSource {
    FileAudioSource::new(match audio_dir {
        Some(d) => d.clone(),
        None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

fn corpus_taxonomy(corpus: &Corpus) -> Result<Taxonomy> {
    corpus
        .taxonomy()
        .cloned()
        .ok_or_else(|| anyhow!("the manifest has no ground-truth labels"))
}

/// Taxonomy carried by weak-label records: their name and score-key order.
fn records_taxonomy(records: &[WeakLabelRecord]) -> Result<Taxonomy> {
    let first = records.first().ok_or_else(|| anyhow!("no weak-label records"))?;
    let labels: Vec<&str> = first.scores.keys().map(String::as_str).collect();
    Ok(Taxonomy::new(first.taxonomy_name.clone(), &labels)?)
}

fn default_frames(corpus: &Corpus, dsp: &MelConfig, frames: Option<usize>) -> Result<usize> {
    if let Some(f) = frames {
        return Ok(f);
    }
    let mut durations: Vec<f64> = corpus.utterances().iter().filter_map(|u| u.duration_s).collect();
    if durations.is_empty() {
        return usage("--frames is required when the manifest has no durations");
    }
    durations.sort_by(f64::total_cmp);
    let median = durations[durations.len() / 2];
    let samples = (median * dsp.sample_rate_hz as f64).round() as usize;
    dsp.num_frames(samples)
        .ok_or_else(|| anyhow!("median duration {median} s is shorter than one frame"))
}

fn load_or_make_split(
    corpus: &Corpus,
    split: Option<&PathBuf>,
    seed: Option<u64>,
    speaker_independent: bool,
    fallback: &Path,
) -> Result<SplitAssignment> {
    if let Some(p) = split {
        if p.exists() {
            return SplitAssignment::load(p).with_context(|| format!("loading split {}", p.display()));
        }
    }
    let s = split_corpus(corpus, seed.unwrap_or(0), speaker_independent)?;
    let path = split.cloned().unwrap_or_else(|| fallback.to_path_buf());
    s.write(&path)?;
    log::info!("wrote split to {}", path.display());
    Ok(s)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn write_report(report: &EvalReport, title: &str, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rows = vec![("unweighted accuracy".to_string(), report.unweighted_accuracy), ("mean recall".to_string(), report.mean_recall)];
    rows.extend(report.per_class_recall.iter().map(|(l, r)| (format!("recall {l}"), *r)));
    let table = format_table(title, &rows);
    eprint!("{table}");
    fs::write(out.join("report.txt"), &table)?;
    fs::write(out.join("confusion.csv"), report.confusion_csv())?;
    let path = out.join("report.jsonl");
    write_jsonl(std::slice::from_ref(report), &path)?;
    Ok(path)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Labelling taxonomy (one label per line).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Prompt id from the built-in catalog or `--prompt-file`.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    /// lexicon:<path> | remote:<address> | random:<seed>
    #[arg(long)]
    pub scorer: Option<String>,
    /// label-premise | transcript-premise
    #[arg(long)]
    pub orientation: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn labeler_setup(
    scorer: Option<&str>,
    taxonomy: &Taxonomy,
    orientation: Option<&str>,
    batch_size: Option<usize>,
    retries: Option<usize>,
) -> Result<(Box<dyn wser_core::labeler::EntailmentScorer>, LabelerConfig)> {
    let spec = ScorerSpec::parse(scorer)?;
    let orientation = parse_orientation(orientation)?;
    let retries = retries.unwrap_or(1);
    let scorer = spec.build(taxonomy, orientation, retries)?;
    let config = LabelerConfig {
        batch_size: batch_size.unwrap_or(16),
        orientation,
        // the remote client retries transient failures itself
        retries: if matches!(spec, ScorerSpec::Remote(_)) { 0 } else { retries },
    };
    Ok((scorer, config))
}

pub fn run_label(flags: &LabelArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: LabelArgs = resolve("label", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    // reject bad specs before touching the filesystem
    ScorerSpec::parse(a.scorer.as_deref())?;
    parse_orientation(a.orientation.as_deref())?;
    let corpus = load_corpus(manifest, None)?;
    let taxonomy = match load_taxonomy(a.taxonomy.as_ref())? {
        Some(t) => t,
        None => corpus_taxonomy(&corpus).context("pass --taxonomy")?,
    };
    let prompt = resolve_prompt(a.prompt.as_deref().unwrap_or(DEFAULT_PROMPT_ID), a.prompt_file.as_deref())?;
    let (scorer, cfg) = labeler_setup(a.scorer.as_deref(), &taxonomy, a.orientation.as_deref(), a.batch_size, a.retries)?;
    let outcome = label_corpus(&corpus, &taxonomy, &prompt, scorer.as_ref(), &cfg)?;
    for id in &outcome.skipped {
        log::warn!("skipped {id}: empty transcript");
    }
    for (id, why) in &outcome.failed {
        log::error!("failed {id}: {why}");
    }
    write_weak_labels(&outcome.records, out)?;
    write_snapshot("label", &a, out)?;
    if !outcome.failed.is_empty() {
        bail!(
            "{} utterances failed to label; the {} labelled ones were written to {}",
            outcome.failed.len(),
            outcome.records.len(),
            out.display()
        );
    }
    Ok(out.clone())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Prompts to sweep (defaults to the built-in catalog).
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub orientation: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_sweep(flags: &SweepArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: SweepArgs = resolve("sweep-prompts", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    ScorerSpec::parse(a.scorer.as_deref())?;
    parse_orientation(a.orientation.as_deref())?;
    let corpus = load_corpus(manifest, load_taxonomy(a.taxonomy.as_ref())?)?;
    let taxonomy = corpus_taxonomy(&corpus)?;
    let prompts = match &a.prompt_file {
        Some(p) => load_prompt_file(p)?,
        None => builtin_catalog(),
    };
    let (scorer, cfg) = labeler_setup(a.scorer.as_deref(), &taxonomy, a.orientation.as_deref(), a.batch_size, a.retries)?;
    let rows = sweep_prompts(&corpus, &taxonomy, &prompts, scorer.as_ref(), &cfg)?;
    fs::create_dir_all(out)?;
    let table = format_table(
        "prompt",
        &rows.iter().map(|r| (format!("{} {}", r.prompt_id, r.template), r.accuracy)).collect::<Vec<_>>(),
    );
    eprint!("{table}");
    fs::write(out.join("prompts.txt"), table)?;
    let path = out.join("prompts.jsonl");
    write_jsonl(&rows, &path)?;
    write_snapshot("sweep-prompts", &a, out)?;
    Ok(path)
}

/// Step counts, batch and learning rate on top of a preset.
fn run_config(
    preset: Option<&str>,
    pretraining: bool,
    steps: Option<usize>,
    batch_size: Option<usize>,
    peak_lr: Option<f64>,
    warmup_fraction: Option<f64>,
    eval_every: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainRunConfig> {
    let mut run = match (preset.unwrap_or("desk"), pretraining) {
        ("desk", true) => TrainRunConfig::desk_pretrain(),
        ("desk", false) => TrainRunConfig::desk_finetune(),
        ("full", true) => TrainRunConfig::full_pretrain(),
        ("full", false) => TrainRunConfig::full_finetune(),
        (other, _) => return usage(format!("preset {other:?} must be desk or full")),
    };
    if let Some(s) = steps {
        run = run.with_steps(s);
    }
    if let Some(b) = batch_size {
        run.batch_size = b;
    }
    if let Some(lr) = peak_lr {
        run.schedule.peak_lr = lr;
    }
    if let Some(w) = warmup_fraction {
        run.schedule.warmup_fraction = w;
    }
    if let Some(e) = eval_every {
        run.eval_every = e;
    }
    run.seed = seed.unwrap_or(0);
    run.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(run)
}

fn dsp_config(dsp: Option<&MelConfig>, normalize: bool) -> Result<MelConfig> {
    let mut d = dsp.cloned().unwrap_or_default();
    d.normalize |= normalize;
    d.validate().map_err(|e| UsageError(e.to_string()))?;
    Ok(d)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub weak_labels: Option<PathBuf>,
    /// Defaults to the taxonomy recorded in the weak labels.
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Base directory for relative audio paths (default: manifest directory).
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// small_cnn | linear
    #[arg(long)]
    pub architecture: Option<String>,
    /// Input frames per example (default: from the median duration).
    #[arg(long)]
    pub frames: Option<usize>,
    /// desk | full
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Z-normalise features with training statistics.
    #[arg(long)]
    #[serde(default)]
    pub normalize: bool,
    /// Front-end settings; config file only.
    #[arg(skip)]
    pub dsp: Option<MelConfig>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_pretrain(flags: &PretrainArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: PretrainArgs = resolve("pretrain", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let weak_path = required(&a.weak_labels, "weak-labels")?;
    let out = required(&a.out, "out")?;
    let corpus = load_corpus(manifest, None)?;
    let records = read_weak_labels(weak_path)?;
    let taxonomy = match load_taxonomy(a.taxonomy.as_ref())? {
        Some(t) => t,
        None => records_taxonomy(&records)?,
    };
    let dsp = dsp_config(a.dsp.as_ref(), a.normalize)?;
    let frames = default_frames(&corpus, &dsp, a.frames)?;
    let run = run_config(a.preset.as_deref(), true, a.steps, a.batch_size, a.peak_lr, a.warmup_fraction, a.eval_every, a.seed)?;
    let mut model_cfg = ModelConfig::new(frames, taxonomy.len(), parse_architecture(a.architecture.as_deref())?, run.seed);
    model_cfg.input_bins = dsp.num_bins;
    let audio = audio_source(a.audio_dir.as_ref(), manifest);
    let outcome = pretrain(&corpus, &records, &taxonomy, &model_cfg, &run, &dsp, &audio)?;
    if !outcome.skipped.is_empty() {
        log::warn!("{} utterances skipped for missing audio", outcome.skipped.len());
        let list: String = outcome.skipped.iter().map(|(id, why)| format!("{id}\t{why}\n")).collect();
        fs::write(sibling(out, ".skipped.tsv"), list)?;
    }
    outcome.checkpoint.save(out)?;
    write_train_log(&outcome.log, &sibling(out, ".log.jsonl"))?;
    write_snapshot("pretrain", &a, out)?;
    Ok(out.clone())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneArgs {
    /// Downstream manifest with ground-truth labels.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split file; created with --split-seed when missing.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub speaker_independent: bool,
    /// Pre-trained checkpoint; omit to train from scratch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// One of 0.1, 0.3, 0.5, 0.7, 1.0.
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Run every fraction and write an accuracy-vs-fraction report.
    #[arg(long)]
    #[serde(default)]
    pub sweep: bool,
    #[arg(long)]
    pub subset_seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub freeze_backbone: bool,
    /// Scratch only: small_cnn | linear
    #[arg(long)]
    pub architecture: Option<String>,
    /// Scratch only.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scratch only.
    #[arg(long)]
    #[serde(default)]
    pub normalize: bool,
    #[arg(skip)]
    pub dsp: Option<MelConfig>,
    /// Checkpoint path, or output directory with --sweep.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn finetune_spec(
    corpus: &Corpus,
    checkpoint: Option<&ModelCheckpoint>,
    a: &FinetuneArgs,
    fraction: f64,
) -> Result<FinetuneSpec> {
    let run = run_config(a.preset.as_deref(), false, a.steps, a.batch_size, a.peak_lr, None, a.eval_every, a.seed)?;
    let taxonomy = corpus_taxonomy(corpus)?;
    let (dsp, model) = match checkpoint {
        Some(ck) => (ck.dsp.clone(), ck.model.config().clone()),
        None => {
            let dsp = dsp_config(a.dsp.as_ref(), a.normalize)?;
            let frames = default_frames(corpus, &dsp, a.frames)?;
            let mut m = ModelConfig::new(frames, taxonomy.len(), parse_architecture(a.architecture.as_deref())?, run.seed);
            m.input_bins = dsp.num_bins;
            (dsp, m)
        }
    };
    Ok(FinetuneSpec {
        model,
        dsp,
        run,
        fraction,
        freeze_backbone: a.freeze_backbone,
        subset_seed: a.subset_seed.unwrap_or(0),
    })
}

fn load_checkpoint(path: Option<&PathBuf>) -> Result<Option<ModelCheckpoint>> {
    path.map(|p| ModelCheckpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display())))
        .transpose()
}

pub fn run_finetune(flags: &FinetuneArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: FinetuneArgs = resolve("finetune", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let fraction = match (a.fraction, a.sweep) {
        (Some(f), _) => parse_fraction(f)?,
        (None, true) => 1.0,
        (None, false) => return usage("--fraction is required"),
    };
    let corpus = load_corpus(manifest, None)?;
    let split_fallback = if a.sweep { out.join("split.json") } else { sibling(out, ".split.json") };
    if a.sweep {
        fs::create_dir_all(out)?;
    }
    let split = load_or_make_split(&corpus, a.split.as_ref(), a.split_seed, a.speaker_independent, &split_fallback)?;
    let checkpoint = load_checkpoint(a.checkpoint.as_ref())?;
    let spec = finetune_spec(&corpus, checkpoint.as_ref(), &a, fraction)?;
    let audio = audio_source(a.audio_dir.as_ref(), manifest);

    if a.sweep {
        let rows = label_efficiency(checkpoint.as_ref(), &corpus, &split, &spec, &corpus::FRACTIONS, &audio)?;
        let table = format_table(
            "fraction",
            &rows.iter().map(|r| (format!("{:.0}%", 100.0 * r.fraction), r.test_accuracy)).collect::<Vec<_>>(),
        );
        eprint!("{table}");
        fs::write(out.join("efficiency.txt"), table)?;
        let name = if checkpoint.is_some() { "pretrained" } else { "scratch" };
        fs::write(out.join("efficiency.svg"), fraction_plot_svg(&[(name.to_string(), rows.clone())]))?;
        let path = out.join("efficiency.jsonl");
        write_jsonl(&rows, &path)?;
        write_snapshot("finetune", &a, out)?;
        return Ok(path);
    }

    let outcome = finetune(checkpoint.as_ref(), &corpus, &split, &spec, &audio)?;
    log::info!(
        "best validation accuracy {:.4} at step {}",
        outcome.best_valid_accuracy,
        outcome.best_step
    );
    outcome.checkpoint.save(out)?;
    write_train_log(&outcome.log, &sibling(out, ".log.jsonl"))?;
    write_snapshot("finetune", &a, out)?;
    Ok(out.clone())
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Checkpoint to score on the manifest.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// train | valid | test | all (default test with --split, else all).
    #[arg(long)]
    pub part: Option<String>,
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// Predicted labels, one per line.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Reference labels, one per line (instead of manifest labels).
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(corpus::normalize_label)
        .filter(|l| !l.is_empty())
        .collect())
}

fn split_part(corpus: &Corpus, split: Option<&SplitAssignment>, part: Option<&str>) -> Result<Vec<String>> {
    let all = || corpus.utterances().iter().map(|u| u.id.clone()).collect();
    Ok(match (part, split) {
        (None | Some("all"), None) | (Some("all"), Some(_)) => all(),
        (None | Some("test"), Some(s)) => s.test.clone(),
        (Some("train"), Some(s)) => s.train.clone(),
        (Some("valid"), Some(s)) => s.valid.clone(),
        (Some(p @ ("train" | "valid" | "test")), None) => return usage(format!("--part {p} needs --split")),
        (Some(p), _) => return usage(format!("--part {p:?} must be train, valid, test or all")),
    })
}

pub fn run_evaluate(flags: &EvaluateArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: EvaluateArgs = resolve("evaluate", flags, file)?;
    let out = required(&a.out, "out")?;
    let taxonomy_file = load_taxonomy(a.taxonomy.as_ref())?;
    let report = match (&a.checkpoint, &a.predictions) {
        (Some(_), Some(_)) => return usage("pass either --checkpoint or --predictions, not both"),
        (None, None) => return usage("--checkpoint or --predictions is required"),
        (Some(ck_path), None) => {
            let manifest = required(&a.manifest, "manifest")?;
            let ck = ModelCheckpoint::load(ck_path)?;
            let corpus = load_corpus(manifest, taxonomy_file)?;
            let taxonomy = corpus_taxonomy(&corpus)?;
            let split = a.split.as_ref().map(|p| SplitAssignment::load(p)).transpose()?;
            let ids = split_part(&corpus, split.as_ref(), a.part.as_deref())?;
            let audio = audio_source(a.audio_dir.as_ref(), manifest);
            evaluate_checkpoint(&ck, &corpus, &ids, &taxonomy, &audio)?
        }
        (None, Some(pred_path)) => {
            let pred = read_lines(pred_path)?;
            let (gt, corpus_tax) = match (&a.references, &a.manifest) {
                (Some(r), _) => (read_lines(r)?, None),
                (None, Some(m)) => {
                    let corpus = load_corpus(m, taxonomy_file.clone())?;
                    let split = a.split.as_ref().map(|p| SplitAssignment::load(p)).transpose()?;
                    let ids = split_part(&corpus, split.as_ref(), a.part.as_deref())?;
                    let gt = corpus
                        .select(&ids)?
                        .iter()
                        .map(|u| u.gt_label.clone().ok_or_else(|| anyhow!("utterance {:?} has no label", u.id)))
                        .collect::<Result<Vec<_>>>()?;
                    (gt, corpus.taxonomy().cloned())
                }
                (None, None) => return usage("--references or --manifest is required with --predictions"),
            };
            if pred.len() != gt.len() {
                return Err(wser_core::Error::LengthMismatch {
                    left: pred.len(),
                    right: gt.len(),
                }
                .into());
            }
            let taxonomy = match taxonomy_file.or(corpus_tax) {
                Some(t) => t,
                None => {
                    let mut labels: Vec<&str> = Vec::new();
                    for l in gt.iter().chain(&pred) {
                        if !labels.contains(&l.as_str()) {
                            labels.push(l);
                        }
                    }
                    Taxonomy::new("inferred", &labels)?
                }
            };
            let pred: Vec<Option<&str>> = pred.iter().map(|p| Some(p.as_str())).collect();
            let gt: Vec<&str> = gt.iter().map(String::as_str).collect();
            EvalReport::from_labels(&pred, &gt, &taxonomy)?
        }
    };
    let path = write_report(&report, "evaluate", out)?;
    write_snapshot("evaluate", &a, out)?;
    Ok(path)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeroShotArgs {
    /// Checkpoint pre-trained with the downstream taxonomy.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub speaker_independent: bool,
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_zero_shot(flags: &ZeroShotArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: ZeroShotArgs = resolve("zero-shot", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let ck = ModelCheckpoint::load(required(&a.checkpoint, "checkpoint")?)?;
    let corpus = load_corpus(manifest, None)?;
    fs::create_dir_all(out)?;
    let split = load_or_make_split(&corpus, a.split.as_ref(), a.split_seed, a.speaker_independent, &out.join("split.json"))?;
    let audio = audio_source(a.audio_dir.as_ref(), manifest);
    let report = zero_shot_eval(&ck, &corpus, &split, &audio)?;
    let path = write_report(&report, "zero-shot", out)?;
    write_snapshot("zero-shot", &a, out)?;
    Ok(path)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineArgs {
    /// majority | word2vec | entailment
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub speaker_independent: bool,
    /// word2vec: embedding table (`count dim` header, then `word v...`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// entailment: scorer spec.
    #[arg(long)]
    pub scorer: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long)]
    pub orientation: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub retries: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_baseline(flags: &BaselineArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: BaselineArgs = resolve("baseline", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let kind = required(&a.kind, "kind")?.as_str();
    if !matches!(kind, "majority" | "word2vec" | "entailment") {
        return usage(format!("baseline kind {kind:?} must be majority, word2vec or entailment"));
    }
    let corpus = load_corpus(manifest, None)?;
    let taxonomy = corpus_taxonomy(&corpus)?;
    fs::create_dir_all(out)?;
    let split = load_or_make_split(&corpus, a.split.as_ref(), a.split_seed, a.speaker_independent, &out.join("split.json"))?;
    let report = match kind {
        "majority" => majority_report(&corpus, &split.train, &split.test, &taxonomy)?,
        "word2vec" => {
            let table = WordEmbeddingTable::load(required(&a.embeddings, "embeddings")?)?;
            word2vec_baseline(&corpus, &split.test, &table, &taxonomy)?
        }
        _ => {
            let test: Vec<_> = corpus.select(&split.test)?.into_iter().cloned().collect();
            let test = Corpus::new(test, Some(taxonomy.clone()))?;
            let prompt = resolve_prompt(a.prompt.as_deref().unwrap_or(DEFAULT_PROMPT_ID), a.prompt_file.as_deref())?;
            let (scorer, cfg) = labeler_setup(a.scorer.as_deref(), &taxonomy, a.orientation.as_deref(), a.batch_size, a.retries)?;
            entailment_gt_baseline(&test, &taxonomy, &prompt, scorer.as_ref(), &cfg)?
        }
    };
    let path = write_report(&report, &format!("{kind} baseline"), out)?;
    write_snapshot("baseline", &a, out)?;
    Ok(path)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthArgs {
    /// Full JSON spec; other flags override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Comma-separated class labels.
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub taxonomy_name: Option<String>,
    #[arg(long)]
    pub num_utterances: Option<usize>,
    /// Content-prosody correlation in [0, 1].
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub speakers: Option<usize>,
    #[arg(long)]
    pub id_prefix: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run_synth(flags: &SynthArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: SynthArgs = resolve("synth-corpus", flags, file)?;
    let out = required(&a.out_dir, "out-dir")?;
    let mut spec = match (&a.spec, &a.labels) {
        (Some(p), _) => SynthSpec::load(p)?,
        (None, Some(labels)) => {
            let labels: Vec<&str> = labels.split(',').map(str::trim).filter(|l| !l.is_empty()).collect();
            SynthSpec::standard(&labels, 1000, 0.9, 0)
        }
        (None, None) => return usage("--spec or --labels is required"),
    };
    if a.labels.is_some() && a.spec.is_some() {
        return usage("pass either --spec or --labels, not both");
    }
    if let Some(v) = &a.taxonomy_name {
        spec.taxonomy_name = v.clone();
    }
    if let Some(v) = a.num_utterances {
        spec.num_utterances = v;
    }
    if let Some(v) = a.rho {
        spec.rho = v;
    }
    if let Some(v) = a.duration_s {
        spec.duration_s = v;
    }
    if let Some(v) = a.speakers {
        spec.num_speakers = v;
    }
    if let Some(v) = &a.id_prefix {
        spec.id_prefix = v.clone();
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = synth_corpus(&spec, out)?;
    fs::write(out.join("synth_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    write_snapshot("synth-corpus", &a, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareArgs {
    /// Checkpoint pre-trained with the finer taxonomy.
    #[arg(long)]
    pub fine: Option<PathBuf>,
    /// Checkpoint pre-trained with the coarser taxonomy.
    #[arg(long)]
    pub coarse: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub speaker_independent: bool,
    #[arg(long)]
    pub audio_dir: Option<PathBuf>,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub subset_seed: Option<u64>,
    #[arg(long)]
    #[serde(default)]
    pub freeze_backbone: bool,
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run_compare(flags: &CompareArgs, file: Option<&Path>) -> Result<PathBuf> {
    let a: CompareArgs = resolve("compare-taxonomies", flags, file)?;
    let manifest = required(&a.manifest, "manifest")?;
    let out = required(&a.out, "out")?;
    let fraction = parse_fraction(a.fraction.unwrap_or(1.0))?;
    let fine = ModelCheckpoint::load(required(&a.fine, "fine")?)?;
    let coarse = ModelCheckpoint::load(required(&a.coarse, "coarse")?)?;
    let corpus = load_corpus(manifest, None)?;
    fs::create_dir_all(out)?;
    let split = load_or_make_split(&corpus, a.split.as_ref(), a.split_seed, a.speaker_independent, &out.join("split.json"))?;
    let run = run_config(a.preset.as_deref(), false, a.steps, a.batch_size, a.peak_lr, None, a.eval_every, a.seed)?;
    let spec = FinetuneSpec {
        model: fine.model.config().clone(),
        dsp: fine.dsp.clone(),
        run,
        fraction,
        freeze_backbone: a.freeze_backbone,
        subset_seed: a.subset_seed.unwrap_or(0),
    };
    let audio = audio_source(a.audio_dir.as_ref(), manifest);
    let cmp = compare_taxonomies(&fine, &coarse, &corpus, &split, &spec, &audio)?;
    let table = format_table(
        "pre-training taxonomy",
        &[
            (format!("fine ({})", cmp.fine_taxonomy), cmp.fine_accuracy),
            (format!("coarse ({})", cmp.coarse_taxonomy), cmp.coarse_accuracy),
            ("difference".to_string(), cmp.difference),
        ],
    );
    eprint!("{table}");
    fs::write(out.join("comparison.txt"), table)?;
    let path = out.join("comparison.jsonl");
    evaluation::write_jsonl(&[cmp], &path)?;
    write_snapshot("compare-taxonomies", &a, out)?;
    Ok(path)
}
