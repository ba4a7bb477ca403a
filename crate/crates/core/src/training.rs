//! Adam, learning-rate schedules, weak-label pre-training, fine-tuning with
//! best-on-validation selection, and the random-label control.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{train_fraction_subset, Corpus, SplitAssignment, Taxonomy, WeakLabelRecord};
use crate::dsp::{MelConfig, MelExtractor};
use crate::error::{Error, Result};
use crate::features::{extract_features, AudioSource, FeatureSet};
use crate::model::{argmax, Model, ModelCheckpoint, ModelConfig, ModelParams, TrainingMeta};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    WarmupLinearDecay,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub total_steps: usize,
    #[serde(default = "default_warmup_fraction")]
    pub warmup_fraction: f64,
}

fn default_warmup_fraction() -> f64 {
    0.05
}

impl ScheduleConfig {
    pub fn warmup_linear_decay(peak_lr: f64, total_steps: usize) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::WarmupLinearDecay,
            peak_lr,
            total_steps,
            warmup_fraction: default_warmup_fraction(),
        }
    }

    pub fn constant(lr: f64, total_steps: usize) -> Self {
        ScheduleConfig {
            kind: ScheduleKind::Constant,
            peak_lr: lr,
            total_steps,
            warmup_fraction: default_warmup_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::Training(format!("peak_lr must be positive, got {}", self.peak_lr)));
        }
        if self.kind == ScheduleKind::WarmupLinearDecay && !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Training(format!(
                "warmup_fraction must be in (0, 1), got {}",
                self.warmup_fraction
            )));
        }
        Ok(())
    }

    /// Step at which the warmup schedule peaks.
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }
}

/// Warmup kind: linear 0 → peak over `[0, W]`, then linear peak → 0 over
/// `[W, total_steps]`. Constant kind: always `peak_lr`.
pub fn lr_at(schedule: &ScheduleConfig, step: usize) -> Result<f64> {
    let total = schedule.total_steps;
    if step > total {
        return Err(Error::StepOutOfRange {
            step,
            total_steps: total,
        });
    }
    let peak = schedule.peak_lr;
    Ok(match schedule.kind {
        ScheduleKind::Constant => peak,
        ScheduleKind::WarmupLinearDecay => {
            let w = schedule.warmup_steps();
            if step <= w {
                if w == 0 {
                    peak
                } else {
                    peak * (step as f64 / w as f64)
                }
            } else {
                peak * ((total - step) as f64 / (total - w) as f64)
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    adam_step_where(params, grads, state, lr, |_| true)
}

/// Adam update restricted to tensors for which `trainable(name)` holds;
/// the others and their moments are left untouched.
pub fn adam_step_where(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    trainable: impl Fn(&str) -> bool,
) -> Result<()> {
    if !(lr >= 0.0) {
        return Err(Error::Training(format!("learning rate must be nonnegative, got {lr}")));
    }
    if params.tensors().len() != grads.tensors().len() || params.tensors().len() != state.m.len() {
        return Err(Error::Shape("parameter, gradient and optimizer state counts differ".into()));
    }
    for (p, g) in params.tensors().iter().zip(grads.tensors()) {
        if p.data.len() != g.data.len() {
            return Err(Error::Shape(format!("gradient for {:?} has the wrong size", p.name)));
        }
        if g.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(g.name.clone()));
        }
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, (p, g)) in params.tensors_mut().iter_mut().zip(grads.tensors()).enumerate() {
        if !trainable(&p.name) {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            let gj = g.data[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub total_steps: usize,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainRunConfig {
    /// Batch 256, 100K steps, 5% warmup to 5e-4 then linear decay.
    pub fn full_pretrain() -> Self {
        TrainRunConfig {
            batch_size: 256,
            total_steps: 100_000,
            schedule: ScheduleConfig::warmup_linear_decay(5e-4, 100_000),
            seed: 0,
            eval_every: 1000,
        }
    }

    /// Batch 64, 10K steps, constant 1e-4.
    pub fn full_finetune() -> Self {
        TrainRunConfig {
            batch_size: 64,
            total_steps: 10_000,
            schedule: ScheduleConfig::constant(1e-4, 10_000),
            seed: 0,
            eval_every: 500,
        }
    }

    /// Desk-scale pre-training: same schedule shape over 2000 steps.
    pub fn desk_pretrain() -> Self {
        TrainRunConfig {
            batch_size: 16,
            total_steps: 2000,
            schedule: ScheduleConfig::warmup_linear_decay(5e-4, 2000),
            seed: 0,
            eval_every: 100,
        }
    }

    /// Desk-scale fine-tuning: constant 1e-4 over 500 steps.
    pub fn desk_finetune() -> Self {
        TrainRunConfig {
            batch_size: 16,
            total_steps: 500,
            schedule: ScheduleConfig::constant(1e-4, 500),
            seed: 0,
            eval_every: 25,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sets the step count on both the run and its schedule.
    pub fn with_steps(mut self, steps: usize) -> Self {
        self.total_steps = steps;
        self.schedule.total_steps = steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.total_steps == 0 || self.eval_every == 0 {
            return Err(Error::Training("batch_size, total_steps and eval_every must be positive".into()));
        }
        if self.schedule.total_steps != self.total_steps {
            return Err(Error::Training(format!(
                "schedule spans {} steps but the run has {}",
                self.schedule.total_steps, self.total_steps
            )));
        }
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub lr: f64,
    /// Mean minibatch loss since the previous entry.
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid_accuracy: Option<f64>,
    pub wall_clock_s: f64,
}

pub fn write_train_log(entries: &[TrainLogEntry], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Fraction of predictions equal to the reference.
fn accuracy_of(model: &Model, data: &FeatureSet, labels: &[usize]) -> Result<f64> {
    let preds = model.predict(&data.values, data.len())?;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

struct LoopResult {
    log: Vec<TrainLogEntry>,
    /// `(step, accuracy, params)` of the best validation evaluation.
    best: Option<(usize, f64, ModelParams)>,
}

/// Seeded epoch-shuffled minibatch Adam. The final partial batch of each
/// epoch is dropped. When `valid` is given, validation accuracy is computed
/// at every log point and the best parameters (earliest on ties) are kept.
fn train_loop(
    model: &mut Model,
    data: &FeatureSet,
    labels: &[usize],
    run: &TrainRunConfig,
    batch_size: usize,
    valid: Option<(&FeatureSet, &[usize])>,
    trainable: impl Fn(&str) -> bool + Copy,
) -> Result<LoopResult> {
    let n = data.len();
    if n < batch_size || batch_size == 0 {
        return Err(Error::Training(format!(
            "{n} examples is less than one batch of {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed ^ 0xba7c_5eed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut state = AdamState::new(model.params());
    let started = Instant::now();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let (mut window_loss, mut window_steps) = (0.0, 0usize);

    for step in 0..run.total_steps {
        if cursor + batch_size > n {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch_size];
        cursor += batch_size;
        let inputs = data.gather(idx);
        let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let (loss, grads) = model.loss_and_grad(&inputs, &ys)?;
        let lr = lr_at(&run.schedule, step)?;
        adam_step_where(model.params_mut(), &grads, &mut state, lr, trainable)?;
        window_loss += loss;
        window_steps += 1;

        let done = step + 1;
        if done % run.eval_every == 0 || done == run.total_steps {
            let valid_accuracy = match valid {
                Some((vx, vy)) => {
                    let acc = accuracy_of(model, vx, vy)?;
                    if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                        best = Some((done, acc, model.params().clone()));
                    }
                    Some(acc)
                }
                None => None,
            };
            let entry = TrainLogEntry {
                step: done,
                lr,
                train_loss: window_loss / window_steps as f64,
                valid_accuracy,
                wall_clock_s: started.elapsed().as_secs_f64(),
            };
            log::debug!("step {} loss {:.4} lr {:.2e} valid {:?}", entry.step, entry.train_loss, lr, valid_accuracy);
            log.push(entry);
            window_loss = 0.0;
            window_steps = 0;
        }
    }
    Ok(LoopResult { log, best })
}

/// Maps each record's label to its taxonomy index, keyed by utterance id.
fn weak_label_indices(records: &[WeakLabelRecord], taxonomy: &Taxonomy) -> Result<IndexMap<String, usize>> {
    records
        .iter()
        .map(|r| {
            r.validate_against(taxonomy)?;
            let idx = taxonomy.index_of(&r.label).expect("validated");
            Ok((r.utterance_id.clone(), idx))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<TrainLogEntry>,
    /// Utterances dropped because their audio could not be loaded.
    pub skipped: Vec<(String, String)>,
}

/// Extracts features for every weakly labelled utterance and pre-trains a
/// fresh model on the weak labels.
pub fn pretrain(
    corpus: &Corpus,
    weak_labels: &[WeakLabelRecord],
    taxonomy: &Taxonomy,
    model_cfg: &ModelConfig,
    run: &TrainRunConfig,
    dsp: &MelConfig,
    audio: &dyn AudioSource,
) -> Result<PretrainOutcome> {
    let labels = weak_label_indices(weak_labels, taxonomy)?;
    let index = corpus.index();
    let mut utterances = Vec::with_capacity(labels.len());
    for id in labels.keys() {
        let u = index
            .get(id.as_str())
            .ok_or_else(|| Error::Training(format!("weak label for unknown utterance {id:?}")))?;
        utterances.push(*u);
    }
    let extractor = MelExtractor::new(dsp.clone())?;
    let (features, skipped) = extract_features(&utterances, audio, &extractor, model_cfg.input_frames);
    for (id, why) in &skipped {
        log::warn!("skipping {id}: {why}");
    }
    let ys: Vec<usize> = features.ids.iter().map(|id| labels[id.as_str()]).collect();
    let mut outcome = pretrain_features(&features, &ys, taxonomy, model_cfg, run, dsp)?;
    outcome.skipped = skipped;
    Ok(outcome)
}

/// Pre-training on already extracted features.
pub fn pretrain_features(
    features: &FeatureSet,
    labels: &[usize],
    taxonomy: &Taxonomy,
    model_cfg: &ModelConfig,
    run: &TrainRunConfig,
    dsp: &MelConfig,
) -> Result<PretrainOutcome> {
    run.validate()?;
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: features.len(),
            right: labels.len(),
        });
    }
    let mut cfg = model_cfg.clone();
    cfg.num_classes = taxonomy.len();
    cfg.input_frames = features.frames;
    cfg.input_bins = features.bins;
    let stats = if dsp.normalize { Some(features.stats()?) } else { None };
    let data = match &stats {
        Some(s) => features.normalized(s),
        None => features.clone(),
    };
    let mut model = Model::new(cfg)?;
    let result = train_loop(&mut model, &data, labels, run, run.batch_size, None, |_| true)?;
    let mut checkpoint = ModelCheckpoint::new(model, taxonomy.clone(), dsp.clone())?;
    checkpoint.feature_stats = stats;
    checkpoint.meta = TrainingMeta {
        iterations: run.total_steps,
        schedule: serde_json::to_value(run)?,
        dataset_id: format!("pretrain:{}:{}", taxonomy.name(), features.len()),
        selected_step: None,
        valid_accuracy: None,
    };
    Ok(PretrainOutcome {
        checkpoint,
        log: result.log,
        skipped: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSpec {
    /// Used only when fine-tuning from scratch.
    pub model: ModelConfig,
    /// Used only when fine-tuning from scratch.
    pub dsp: MelConfig,
    pub run: TrainRunConfig,
    pub fraction: f64,
    #[serde(default)]
    pub freeze_backbone: bool,
    /// Seed for the nested train-fraction subset.
    #[serde(default)]
    pub subset_seed: u64,
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<TrainLogEntry>,
    pub best_step: usize,
    pub best_valid_accuracy: f64,
    pub train_ids: Vec<String>,
}

/// Downstream labelled features for a set of utterance ids.
#[derive(Debug, Clone)]
pub struct LabeledFeatures {
    pub features: FeatureSet,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    /// Extracts features for `ids` and maps their ground-truth labels onto `taxonomy`.
    pub fn extract(
        corpus: &Corpus,
        ids: &[String],
        taxonomy: &Taxonomy,
        dsp: &MelConfig,
        frames: usize,
        audio: &dyn AudioSource,
    ) -> Result<Self> {
        let utterances = corpus.select(ids)?;
        let extractor = MelExtractor::new(dsp.clone())?;
        let (features, missing) = extract_features(&utterances, audio, &extractor, frames);
        if let Some((id, why)) = missing.first() {
            return Err(Error::Audio(format!("downstream utterance {id:?}: {why}")));
        }
        let labels = utterances
            .iter()
            .map(|u| {
                let gt = u
                    .gt_label
                    .as_deref()
                    .ok_or_else(|| Error::Training(format!("utterance {:?} has no ground-truth label", u.id)))?;
                taxonomy.index_of(gt).ok_or_else(|| Error::UnknownLabel {
                    label: gt.to_string(),
                    taxonomy: taxonomy.name().to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(LabeledFeatures { features, labels })
    }

    pub fn subset(&self, ids: &[String]) -> Result<Self> {
        let features = self.features.subset(ids)?;
        let labels = ids
            .iter()
            .map(|id| self.labels[self.features.position(id).expect("subset checked ids")])
            .collect();
        Ok(LabeledFeatures { features, labels })
    }
}

/// Adapts a checkpoint's head to `taxonomy`: identical order keeps it,
/// the same labels in another order permute it by name, anything else
/// re-initialises it.
fn adapt_head(model: &mut Model, from: &Taxonomy, to: &Taxonomy, seed: u64) -> Result<()> {
    if from.labels() == to.labels() {
        return Ok(());
    }
    if from.same_label_set(to) {
        let order: Vec<usize> = to
            .labels()
            .iter()
            .map(|l| from.index_of(l).expect("same label set"))
            .collect();
        return model.permute_head(&order);
    }
    model.reinit_head(to.len(), seed)
}

/// Fine-tunes on pre-extracted downstream features. With no checkpoint this
/// is supervised training from scratch with the same architecture.
pub fn finetune_features(
    checkpoint: Option<&ModelCheckpoint>,
    taxonomy: &Taxonomy,
    train: &LabeledFeatures,
    valid: &LabeledFeatures,
    spec: &FinetuneSpec,
) -> Result<FinetuneOutcome> {
    let run = &spec.run;
    run.validate()?;
    if train.features.is_empty() {
        return Err(Error::Training("empty fine-tuning subset".into()));
    }
    if valid.features.is_empty() {
        return Err(Error::Training("empty validation split".into()));
    }
    let (mut model, dsp, stats) = match checkpoint {
        Some(ck) => {
            let mut model = ck.model.clone();
            adapt_head(&mut model, &ck.taxonomy, taxonomy, run.seed)?;
            (model, ck.dsp.clone(), ck.feature_stats.clone())
        }
        None => {
            let mut cfg = spec.model.clone();
            cfg.num_classes = taxonomy.len();
            cfg.input_frames = train.features.frames;
            cfg.input_bins = train.features.bins;
            cfg.seed = run.seed;
            let stats = if spec.dsp.normalize {
                Some(train.features.stats()?)
            } else {
                None
            };
            (Model::new(cfg)?, spec.dsp.clone(), stats)
        }
    };
    let (train_x, valid_x) = match &stats {
        Some(s) => (train.features.normalized(s), valid.features.normalized(s)),
        None => (train.features.clone(), valid.features.clone()),
    };
    let batch = run.batch_size.min(train_x.len());
    let freeze = spec.freeze_backbone;
    let result = train_loop(
        &mut model,
        &train_x,
        &train.labels,
        run,
        batch,
        Some((&valid_x, &valid.labels)),
        |name| !freeze || name.starts_with("head."),
    )?;
    let (best_step, best_acc, best_params) = result.best.expect("validation runs at least once");
    let best_model = Model::from_parts(model.config().clone(), best_params)?;
    let mut ck = ModelCheckpoint::new(best_model, taxonomy.clone(), dsp)?;
    ck.feature_stats = stats;
    ck.meta = TrainingMeta {
        iterations: run.total_steps,
        schedule: serde_json::to_value(run)?,
        dataset_id: format!("finetune:{}:{}", taxonomy.name(), train_x.len()),
        selected_step: Some(best_step),
        valid_accuracy: Some(best_acc),
    };
    Ok(FinetuneOutcome {
        checkpoint: ck,
        log: result.log,
        best_step,
        best_valid_accuracy: best_acc,
        train_ids: train.features.ids.clone(),
    })
}

/// Fine-tunes on `train_fraction_subset(split, fraction)` of a labelled
/// downstream corpus, selecting the best checkpoint on the validation split.
pub fn finetune(
    checkpoint: Option<&ModelCheckpoint>,
    downstream: &Corpus,
    split: &SplitAssignment,
    spec: &FinetuneSpec,
    audio: &dyn AudioSource,
) -> Result<FinetuneOutcome> {
    let taxonomy = downstream
        .taxonomy()
        .ok_or_else(|| Error::Training("downstream corpus has no ground-truth labels".into()))?;
    let subset = train_fraction_subset(split, spec.fraction, spec.subset_seed)?;
    if subset.is_empty() {
        return Err(Error::Training("empty fine-tuning subset".into()));
    }
    let (dsp, frames) = match checkpoint {
        Some(ck) => (ck.dsp.clone(), ck.model.config().input_frames),
        None => (spec.dsp.clone(), spec.model.input_frames),
    };
    let train = LabeledFeatures::extract(downstream, &subset, taxonomy, &dsp, frames, audio)?;
    let valid = LabeledFeatures::extract(downstream, &split.valid, taxonomy, &dsp, frames, audio)?;
    finetune_features(checkpoint, taxonomy, &train, &valid, spec)
}

/// Uniform i.i.d. labels with one-hot scores, for the random-label control.
pub fn random_label_corpus(corpus: &Corpus, taxonomy: &Taxonomy, seed: u64) -> Vec<WeakLabelRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .utterances()
        .iter()
        .map(|u| {
            let k = rng.random_range(0..taxonomy.len());
            let scores = taxonomy
                .labels()
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), if i == k { 1.0 } else { 0.0 }))
                .collect();
            WeakLabelRecord {
                utterance_id: u.id.clone(),
                label: taxonomy.labels()[k].clone(),
                prompt_id: "none".into(),
                scorer_id: "random".into(),
                taxonomy_name: taxonomy.name().to_string(),
                scores,
            }
        })
        .collect()
}

/// Index of the highest logit for each row.
pub fn predict_labels(model: &Model, features: &FeatureSet) -> Result<Vec<usize>> {
    let k = model.num_classes();
    Ok(model
        .forward(&features.values, features.len())?
        .chunks(k)
        .map(argmax)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use crate::model::Architecture;

    #[test]
    fn schedule_anchors() {
        let s = ScheduleConfig::warmup_linear_decay(5e-4, 100_000);
        assert_eq!(lr_at(&s, 5000).unwrap(), 5e-4);
        assert_eq!(lr_at(&s, 100_000).unwrap(), 0.0);
        assert_eq!(lr_at(&s, 52_500).unwrap(), 2.5e-4);
        assert_eq!(lr_at(&s, 2500).unwrap(), 2.5e-4);
        assert_eq!(lr_at(&s, 0).unwrap(), 0.0);
        assert!(matches!(lr_at(&s, 100_001), Err(Error::StepOutOfRange { .. })));
        let c = ScheduleConfig::constant(1e-4, 10);
        assert!((0..=10).all(|t| lr_at(&c, t).unwrap() == 1e-4));
    }

    #[test]
    fn schedule_validation() {
        let mut s = ScheduleConfig::warmup_linear_decay(5e-4, 100);
        s.warmup_fraction = 1.0;
        assert!(s.validate().is_err());
        assert!(ScheduleConfig::constant(0.0, 10).validate().is_err());
        let run = TrainRunConfig::desk_pretrain();
        let mut bad = run.clone();
        bad.total_steps = 10;
        assert!(bad.validate().is_err());
        assert!(run.with_steps(10).validate().is_ok());
    }

    fn one_param(value: f64) -> ModelParams {
        let cfg = ModelConfig {
            input_frames: 1,
            input_bins: 1,
            architecture: Architecture::Linear,
            num_classes: 2,
            seed: 0,
        };
        let mut p = crate::model::init_params(&cfg).unwrap();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = value);
        }
        p
    }

    #[test]
    fn adam_first_step_hand_value() {
        let mut p = one_param(0.0);
        let g = one_param(0.5);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        // m̂ = 0.5, v̂ = 0.25 → θ = -1e-3 * 0.5 / (0.5 + 1e-8)
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        for t in p.tensors() {
            for v in &t.data {
                assert!((v - expected).abs() < 1e-18);
                assert!((v + 9.99999e-4).abs() < 1e-9);
            }
        }
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = one_param(0.3);
        let before = p.clone();
        let g = one_param(0.0);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 1e-2).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut p = one_param(0.0);
        let mut g = one_param(0.0);
        g.tensors_mut()[1].data[0] = f64::NAN;
        let mut s = AdamState::new(&p);
        match adam_step(&mut p, &g, &mut s, 1e-3) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "head.bias"),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn adam_moves_toward_quadratic_minimum() {
        // loss = (θ - 3)^2, gradient 2(θ - 3)
        let mut p = one_param(0.0);
        let mut s = AdamState::new(&p);
        let mut g = p.zeros_like();
        for (gt, pt) in g.tensors_mut().iter_mut().zip(p.tensors()) {
            gt.data = pt.data.iter().map(|v| 2.0 * (v - 3.0)).collect();
        }
        adam_step(&mut p, &g, &mut s, 0.1).unwrap();
        assert!(p.tensors().iter().all(|t| t.data.iter().all(|&v| v > 0.0 && v < 3.0)));
    }

    #[test]
    fn random_labels_are_seeded_one_hot() {
        let us = (0..50).map(|i| Utterance::new(format!("u{i}"), "x")).collect();
        let c = Corpus::new(us, None).unwrap();
        let t = Taxonomy::new("t", &["a", "b", "c", "d"]).unwrap();
        let a = random_label_corpus(&c, &t, 9);
        assert_eq!(a, random_label_corpus(&c, &t, 9));
        for r in &a {
            r.validate_against(&t).unwrap();
            assert_eq!(r.scores.values().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(r.scorer_id, "random");
        }
    }

    fn toy_features(n: usize, seed: u64) -> (FeatureSet, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (frames, bins) = (3, 4);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let y = rng.random_range(0..2usize);
            for f in 0..frames {
                for b in 0..bins {
                    let signal = if (b < 2) == (y == 0) { 1.0 } else { -1.0 };
                    values.push(signal + 0.3 * rng.random_range(-1.0..1.0) + 0.01 * f as f64);
                }
            }
            labels.push(y);
        }
        let ids = (0..n).map(|i| format!("u{i}")).collect();
        (FeatureSet { ids, frames, bins, values }, labels)
    }

    #[test]
    fn pretraining_reduces_loss_and_is_deterministic() {
        let (x, y) = toy_features(128, 1);
        let t = Taxonomy::new("t", &["a", "b"]).unwrap();
        let cfg = ModelConfig {
            input_frames: 3,
            input_bins: 4,
            architecture: Architecture::Linear,
            num_classes: 2,
            seed: 5,
        };
        let mut run = TrainRunConfig::desk_pretrain().with_steps(200);
        run.batch_size = 16;
        run.eval_every = 20;
        run.schedule.peak_lr = 1e-2;
        let mut dsp = MelConfig::default();
        dsp.num_bins = 4;
        let a = pretrain_features(&x, &y, &t, &cfg, &run, &dsp).unwrap();
        assert!(a.log.last().unwrap().train_loss < a.log[0].train_loss);
        let b = pretrain_features(&x, &y, &t, &cfg, &run, &dsp).unwrap();
        assert_eq!(a.checkpoint.to_bytes().unwrap(), b.checkpoint.to_bytes().unwrap());

        run.batch_size = 1000;
        assert!(pretrain_features(&x, &y, &t, &cfg, &run, &dsp).is_err());
    }

    #[test]
    fn finetune_selects_best_validation_step() {
        let (x, y) = toy_features(60, 2);
        let (vx, vy) = toy_features(40, 3);
        let t = Taxonomy::new("t", &["a", "b"]).unwrap();
        let mut dsp = MelConfig::default();
        dsp.num_bins = 4;
        let spec = FinetuneSpec {
            model: ModelConfig {
                input_frames: 3,
                input_bins: 4,
                architecture: Architecture::Linear,
                num_classes: 2,
                seed: 0,
            },
            dsp,
            run: TrainRunConfig {
                batch_size: 8,
                total_steps: 60,
                schedule: ScheduleConfig::constant(1e-2, 60),
                seed: 4,
                eval_every: 10,
            },
            fraction: 1.0,
            freeze_backbone: false,
            subset_seed: 0,
        };
        let train = LabeledFeatures { features: x, labels: y };
        let valid = LabeledFeatures { features: vx, labels: vy };
        let out = finetune_features(None, &t, &train, &valid, &spec).unwrap();
        let logged: Vec<f64> = out.log.iter().filter_map(|e| e.valid_accuracy).collect();
        assert_eq!(logged.len(), 6);
        assert!(logged.iter().all(|&a| a <= out.best_valid_accuracy));
        let first_best = out.log.iter().find(|e| e.valid_accuracy == Some(out.best_valid_accuracy)).unwrap();
        assert_eq!(first_best.step, out.best_step);
        let acc = accuracy_of(&out.checkpoint.model, &valid.features, &valid.labels).unwrap();
        assert_eq!(acc, out.best_valid_accuracy);
    }

    #[test]
    fn head_adaptation_rules() {
        let cfg = ModelConfig {
            input_frames: 2,
            input_bins: 2,
            architecture: Architecture::small_cnn(),
            num_classes: 3,
            seed: 1,
        };
        let base = Model::new(cfg).unwrap();
        let t = Taxonomy::new("t", &["a", "b", "c"]).unwrap();

        let mut same = base.clone();
        adapt_head(&mut same, &t, &t.clone(), 9).unwrap();
        assert_eq!(same, base);

        let permuted = Taxonomy::new("p", &["c", "a", "b"]).unwrap();
        let mut m = base.clone();
        adapt_head(&mut m, &t, &permuted, 9).unwrap();
        let hb = |m: &Model| m.params().get("head.weight").unwrap().data.clone();
        assert_eq!(hb(&m)[..16], hb(&base)[32..48]);

        let other = Taxonomy::new("o", &["x", "y", "z", "w"]).unwrap();
        let mut m = base.clone();
        adapt_head(&mut m, &t, &other, 9).unwrap();
        assert_eq!(m.num_classes(), 4);
        assert_eq!(m.params().get("conv1.weight"), base.params().get("conv1.weight"));
    }
}
