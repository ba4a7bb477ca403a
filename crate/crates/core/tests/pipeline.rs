mod common;

use wser_core::corpus::{load_manifest, split_corpus, Corpus, Taxonomy, Utterance, WeakLabelRecord};
use wser_core::dsp::MelConfig;
use wser_core::evaluation::{compare_taxonomies, evaluate_features, sweep_prompts, zero_shot_eval};
use wser_core::features::{extract_features, FeatureSet, FileAudioSource};
use wser_core::labeler::{label_corpus, EntailmentScorer, LabelerConfig, LexiconScorer, ScorePair};
use wser_core::model::{Architecture, Model, ModelCheckpoint, ModelConfig};
use wser_core::dsp::MelExtractor;
use wser_core::par;
use wser_core::prompting::{builtin_catalog, default_prompt};
use wser_core::synth::{generate, synth_corpus, SynthCorpus, SynthSpec};
use wser_core::training::{
    finetune_features, pretrain_features, random_label_corpus, FinetuneSpec, LabeledFeatures, TrainRunConfig,
};
use wser_core::Result;

const LABELS: [&str; 4] = ["anger", "joy", "sadness", "neutral"];
const FRAMES: usize = 19;

fn synth(n: usize, rho: f64, seed: u64, prefix: &str) -> SynthCorpus {
    let mut spec = SynthSpec::standard(&LABELS, n, rho, seed);
    spec.id_prefix = prefix.into();
    generate(&spec).unwrap()
}

fn features(g: &SynthCorpus) -> FeatureSet {
    let ex = MelExtractor::new(MelConfig::default()).unwrap();
    let refs: Vec<&Utterance> = g.corpus.utterances().iter().collect();
    let (f, missing) = extract_features(&refs, &g.audio, &ex, FRAMES);
    assert!(missing.is_empty());
    f
}

fn indices(recs: &[WeakLabelRecord], tax: &Taxonomy) -> Vec<usize> {
    recs.iter().map(|r| tax.index_of(&r.label).unwrap()).collect()
}

fn weak_labels(g: &SynthCorpus) -> Vec<WeakLabelRecord> {
    let tax = g.corpus.taxonomy().unwrap();
    let scorer = LexiconScorer::new(g.lexicon.clone(), tax);
    label_corpus(&g.corpus, tax, &default_prompt(), &scorer, &LabelerConfig::default())
        .unwrap()
        .records
}

fn short_run(seed: u64, steps: usize) -> TrainRunConfig {
    TrainRunConfig::desk_pretrain().with_seed(seed).with_steps(steps)
}

fn linear_cfg(seed: u64) -> ModelConfig {
    ModelConfig::new(FRAMES, LABELS.len(), Architecture::Linear, seed)
}

#[test]
fn lexicon_weak_label_accuracy_matches_corruption_rate() {
    let (rho, k) = (0.7, LABELS.len() as f64);
    let g = synth(4000, rho, 3, "utt");
    let recs = weak_labels(&g);
    let tax = g.corpus.taxonomy().unwrap();
    // the lexicon recovers the text class exactly
    assert_eq!(indices(&recs, tax), g.text_classes);
    let agree = g.text_classes.iter().zip(&g.audio_classes).filter(|(a, b)| a == b).count() as f64 / 4000.0;
    let expected = rho + (1.0 - rho) / k;
    let sigma = (expected * (1.0 - expected) / 4000.0).sqrt();
    assert!((agree - expected).abs() < 4.0 * sigma, "{agree} vs {expected}");
}

#[test]
fn labels_do_not_depend_on_batch_size_or_parallelism() {
    let g = synth(120, 0.9, 8, "utt");
    let tax = g.corpus.taxonomy().unwrap();
    let scorer = LexiconScorer::new(g.lexicon.clone(), tax);
    let run = |batch_size: usize| {
        let cfg = LabelerConfig {
            batch_size,
            ..LabelerConfig::default()
        };
        label_corpus(&g.corpus, tax, &default_prompt(), &scorer, &cfg).unwrap().records
    };
    let base = run(1);
    for b in [3, 16, 500] {
        assert_eq!(run(b), base);
    }
    par::set_deterministic(true);
    let seq = run(7);
    par::set_deterministic(false);
    assert_eq!(seq, base);
}

#[test]
fn random_labels_are_uniform() {
    let utts = (0..100_000).map(|i| Utterance::new(format!("r{i}"), "w")).collect();
    let corpus = Corpus::new(utts, None).unwrap();
    let tax = Taxonomy::new("t", &LABELS).unwrap();
    let recs = random_label_corpus(&corpus, &tax, 17);
    let idx = indices(&recs, &tax);
    for c in 0..4 {
        let freq = idx.iter().filter(|&&i| i == c).count() as f64 / idx.len() as f64;
        assert!((freq - 0.25).abs() < 0.01, "class {c}: {freq}");
    }
    assert!(recs.iter().all(|r| r.scorer_id == "random" && r.scores.values().sum::<f64>() == 1.0));
}

#[test]
fn weak_labels_train_to_lower_loss_than_random_labels() {
    let g = synth(600, 0.9, 1, "utt");
    let tax = g.corpus.taxonomy().unwrap().clone();
    let feats = features(&g);
    let dsp = MelConfig::default();
    let weak = pretrain_features(&feats, &indices(&weak_labels(&g), &tax), &tax, &linear_cfg(1), &short_run(1, 400), &dsp).unwrap();
    let rnd = random_label_corpus(&g.corpus, &tax, 1);
    let random = pretrain_features(&feats, &indices(&rnd, &tax), &tax, &linear_cfg(1), &short_run(1, 400), &dsp).unwrap();
    let tail = |log: &[wser_core::training::TrainLogEntry]| log.last().unwrap().train_loss;
    assert!(tail(&weak.log) < tail(&random.log), "{} vs {}", tail(&weak.log), tail(&random.log));
    assert!(tail(&random.log) > 0.9 * 4f64.ln());
}

#[test]
fn zero_shot_is_invariant_to_taxonomy_order() {
    let g = synth(300, 0.9, 2, "utt");
    let tax = g.corpus.taxonomy().unwrap().clone();
    let feats = features(&g);
    let ck = pretrain_features(&feats, &indices(&weak_labels(&g), &tax), &tax, &linear_cfg(2), &short_run(2, 200), &MelConfig::default())
        .unwrap()
        .checkpoint;

    let down = synth(100, 1.0, 50, "down");
    let split = split_corpus(&down.corpus, 0, false).unwrap();
    let a = zero_shot_eval(&ck, &down.corpus, &split, &down.audio).unwrap();

    let reversed: Vec<&str> = LABELS.iter().rev().copied().collect();
    let permuted = Corpus::new(down.corpus.utterances().to_vec(), Some(Taxonomy::new("rev", &reversed).unwrap())).unwrap();
    let b = zero_shot_eval(&ck, &permuted, &split, &down.audio).unwrap();
    assert_eq!(a.unweighted_accuracy, b.unweighted_accuracy);
    assert_eq!(a.n, b.n);
    assert!(a.unweighted_accuracy > 0.5);
}

fn downstream_setup(seed: u64) -> (SynthCorpus, LabeledFeatures, LabeledFeatures, LabeledFeatures) {
    let down = synth(160, 1.0, seed, "down");
    let tax = down.corpus.taxonomy().unwrap().clone();
    let split = split_corpus(&down.corpus, seed, false).unwrap();
    let ex = |ids: &[String]| LabeledFeatures::extract(&down.corpus, ids, &tax, &MelConfig::default(), FRAMES, &down.audio).unwrap();
    let (tr, va, te) = (ex(&split.train), ex(&split.valid), ex(&split.test));
    (down, tr, va, te)
}

fn ft_spec(seed: u64, steps: usize) -> FinetuneSpec {
    FinetuneSpec {
        model: linear_cfg(seed),
        dsp: MelConfig::default(),
        run: TrainRunConfig::desk_finetune().with_seed(seed).with_steps(steps),
        fraction: 1.0,
        freeze_backbone: false,
        subset_seed: seed,
    }
}

fn random_checkpoint(tax: &Taxonomy, architecture: Architecture, seed: u64) -> ModelCheckpoint {
    let model = Model::new(ModelConfig::new(FRAMES, tax.len(), architecture, seed)).unwrap();
    ModelCheckpoint::new(model, tax.clone(), MelConfig::default()).unwrap()
}

#[test]
fn identical_checkpoints_compare_to_zero_difference() {
    let (down, ..) = downstream_setup(60);
    let tax = down.corpus.taxonomy().unwrap().clone();
    let split = split_corpus(&down.corpus, 60, false).unwrap();
    let ck = random_checkpoint(&tax, Architecture::Linear, 4);
    let mut coarse = ck.clone();
    coarse.taxonomy = Taxonomy::new("other_name", &LABELS).unwrap();
    let cmp = compare_taxonomies(&ck, &coarse, &down.corpus, &split, &ft_spec(1, 50), &down.audio).unwrap();
    assert_eq!(cmp.difference, 0.0);
    assert_eq!(cmp.fine_accuracy, cmp.coarse_accuracy);

    let cnn = random_checkpoint(&tax, Architecture::small_cnn(), 4);
    assert!(compare_taxonomies(&ck, &cnn, &down.corpus, &split, &ft_spec(1, 50), &down.audio).is_err());
}

#[test]
fn frozen_backbone_only_moves_the_head() {
    let (down, tr, va, _) = downstream_setup(61);
    let tax = down.corpus.taxonomy().unwrap().clone();
    let ck = random_checkpoint(&tax, Architecture::small_cnn(), 9);
    let mut spec = ft_spec(2, 30);
    spec.freeze_backbone = true;
    let out = finetune_features(Some(&ck), &tax, &tr, &va, &spec).unwrap();
    let mut head_moved = false;
    for (a, b) in ck.model.params().tensors().iter().zip(out.checkpoint.model.params().tensors()) {
        if a.name.starts_with("head.") {
            head_moved |= a.data != b.data;
        } else {
            assert_eq!(a.data, b.data, "{}", a.name);
        }
    }
    assert!(head_moved);
}

#[test]
fn head_is_kept_permuted_or_reinitialised_by_taxonomy() {
    let (down, tr, va, te) = downstream_setup(62);
    let tax = down.corpus.taxonomy().unwrap().clone();
    let g = synth(400, 1.0, 5, "utt");
    let ck = pretrain_features(&features(&g), &indices(&weak_labels(&g), &tax), &tax, &linear_cfg(5), &short_run(5, 300), &MelConfig::default())
        .unwrap()
        .checkpoint;
    let zero_shot = evaluate_features(&ck, &te, &tax).unwrap().unweighted_accuracy;
    assert!(zero_shot > 0.8, "{zero_shot}");

    // a near-zero learning rate leaves the adapted head as it was
    let mut spec = ft_spec(3, 1);
    spec.run.schedule.peak_lr = 1e-12;
    let same = finetune_features(Some(&ck), &tax, &tr, &va, &spec).unwrap();
    assert_eq!(evaluate_features(&same.checkpoint, &te, &tax).unwrap().unweighted_accuracy, zero_shot);

    let reversed: Vec<&str> = LABELS.iter().rev().copied().collect();
    let rev = Taxonomy::new("rev", &reversed).unwrap();
    let remap = |f: &LabeledFeatures| LabeledFeatures {
        features: f.features.clone(),
        labels: f.labels.iter().map(|&i| rev.index_of(LABELS[i]).unwrap()).collect(),
    };
    let permuted = finetune_features(Some(&ck), &rev, &remap(&tr), &remap(&va), &spec).unwrap();
    assert_eq!(evaluate_features(&permuted.checkpoint, &remap(&te), &rev).unwrap().unweighted_accuracy, zero_shot);

    let other = Taxonomy::new("other", &["a", "b", "c", "d"]).unwrap();
    let fresh = finetune_features(Some(&ck), &other, &tr, &va, &spec).unwrap();
    assert_ne!(fresh.checkpoint.model.params().get("head.weight").unwrap().data, ck.model.params().get("head.weight").unwrap().data);
}

/// Scores only pairs whose premise uses one chosen phrasing.
struct PromptSensitive {
    inner: LexiconScorer,
    phrase: &'static str,
}

impl EntailmentScorer for PromptSensitive {
    fn scorer_id(&self) -> String {
        "prompt-sensitive".into()
    }

    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let scores = self.inner.score_batch(pairs)?;
        Ok(pairs
            .iter()
            .zip(scores)
            .map(|(p, s)| if p.premise.starts_with(self.phrase) { s } else { 0.5 })
            .collect())
    }
}

#[test]
fn prompt_sweep_ranks_the_informative_prompt_first() {
    let g = synth(200, 1.0, 7, "utt");
    let tax = g.corpus.taxonomy().unwrap();
    let scorer = PromptSensitive {
        inner: LexiconScorer::new(g.lexicon.clone(), tax),
        phrase: "The emotion of the conversation",
    };
    let rows = sweep_prompts(&g.corpus, tax, &builtin_catalog(), &scorer, &LabelerConfig::default()).unwrap();
    assert_eq!(rows.len(), 11);
    assert_eq!(rows[0].prompt_id, "p09");
    assert_eq!(rows[0].accuracy, 1.0);
    assert!(rows[1].accuracy < 0.5);
    assert!(rows.windows(2).all(|w| w[0].accuracy >= w[1].accuracy));
    // uninformative prompts tie on the first label and keep catalog order
    let tied: Vec<&str> = rows[1..].iter().map(|r| r.prompt_id.as_str()).collect();
    let mut sorted = tied.clone();
    sorted.sort();
    assert_eq!(tied, sorted);
}

#[test]
fn written_synth_corpus_reloads_with_identical_features() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::standard(&LABELS, 24, 0.8, 11);
    let manifest = synth_corpus(&spec, dir.path()).unwrap();
    let corpus = load_manifest(&manifest).unwrap();
    let g = generate(&spec).unwrap();
    assert_eq!(corpus.utterances(), g.corpus.utterances());
    let ex = MelExtractor::new(MelConfig::default()).unwrap();
    let refs: Vec<&Utterance> = corpus.utterances().iter().collect();
    let (from_disk, missing) = extract_features(&refs, &FileAudioSource::new(dir.path()), &ex, FRAMES);
    assert!(missing.is_empty());
    let in_memory = features(&g);
    for (a, b) in from_disk.values.iter().zip(&in_memory.values) {
        // 16-bit quantisation of the written audio
        assert!((a - b).abs() < 0.05 * b.abs().max(1.0), "{a} vs {b}");
    }
}
