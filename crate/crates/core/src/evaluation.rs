//! Metrics, baselines, prompt sweeps, zero-shot evaluation, taxonomy
//! comparison and label-efficiency drivers, plus report writers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, SplitAssignment, Taxonomy};
use crate::error::{Error, Result};
use crate::features::AudioSource;
use crate::labeler::{label_corpus, tokenize, EntailmentScorer, LabelerConfig};
use crate::model::ModelCheckpoint;
use crate::prompting::PromptTemplate;
use crate::training::{finetune_features, predict_labels, FinetuneSpec, LabeledFeatures};
use crate::{corpus, par};

/// Accuracy summary over one labelled evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of correct predictions; abstentions count as wrong.
    pub unweighted_accuracy: f64,
    /// Mean of `per_class_recall` over classes present in the references.
    pub mean_recall: f64,
    /// Recall per label present in the references, in taxonomy order.
    pub per_class_recall: IndexMap<String, f64>,
    pub labels: Vec<String>,
    /// `confusion[true][pred]` counts.
    pub confusion: Vec<Vec<usize>>,
    /// Inputs with no prediction; `n = sum(confusion) + abstained`.
    pub abstained: usize,
    pub n: usize,
}

impl EvalReport {
    /// Builds a report from taxonomy indices. `None` predictions are abstentions.
    pub fn from_indices(pred: &[Option<usize>], gt: &[usize], taxonomy: &Taxonomy) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::LengthMismatch {
                left: pred.len(),
                right: gt.len(),
            });
        }
        if gt.is_empty() {
            return Err(Error::Evaluation("nothing to evaluate".into()));
        }
        let k = taxonomy.len();
        let mut confusion = vec![vec![0usize; k]; k];
        let mut row_total = vec![0usize; k];
        let mut abstained = 0;
        for (p, &y) in pred.iter().zip(gt) {
            if y >= k || p.is_some_and(|p| p >= k) {
                return Err(Error::Evaluation(format!("label index outside taxonomy of {k}")));
            }
            row_total[y] += 1;
            match p {
                Some(p) => confusion[y][*p] += 1,
                None => abstained += 1,
            }
        }
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let per_class_recall: IndexMap<String, f64> = (0..k)
            .filter(|&i| row_total[i] > 0)
            .map(|i| (taxonomy.labels()[i].clone(), confusion[i][i] as f64 / row_total[i] as f64))
            .collect();
        let mean_recall = per_class_recall.values().sum::<f64>() / per_class_recall.len() as f64;
        Ok(EvalReport {
            unweighted_accuracy: correct as f64 / gt.len() as f64,
            mean_recall,
            per_class_recall,
            labels: taxonomy.labels().to_vec(),
            confusion,
            abstained,
            n: gt.len(),
        })
    }

    /// Builds a report from label names; unknown names are an error.
    pub fn from_labels<S: AsRef<str>>(pred: &[Option<S>], gt: &[S], taxonomy: &Taxonomy) -> Result<Self> {
        let idx = |l: &str| {
            taxonomy.index_of(l).ok_or_else(|| Error::UnknownLabel {
                label: l.to_string(),
                taxonomy: taxonomy.name().to_string(),
            })
        };
        let p = pred
            .iter()
            .map(|p| p.as_ref().map(|l| idx(l.as_ref())).transpose())
            .collect::<Result<Vec<_>>>()?;
        let g = gt.iter().map(|l| idx(l.as_ref())).collect::<Result<Vec<_>>>()?;
        Self::from_indices(&p, &g, taxonomy)
    }

    /// Confusion matrix as CSV with a header row of predicted labels.
    pub fn confusion_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.confusion) {
            out.push_str(l);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }
}

/// `(# pred = gt) / n`.
pub fn unweighted_accuracy<T: PartialEq>(pred: &[T], gt: &[T]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::Evaluation("nothing to evaluate".into()));
    }
    Ok(pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64 / gt.len() as f64)
}

/// Constant classifier predicting the most frequent training label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MajorityClassifier {
    pub label: String,
}

impl MajorityClassifier {
    pub fn predict(&self, n: usize) -> Vec<String> {
        vec![self.label.clone(); n]
    }
}

/// Most frequent label, ties broken by taxonomy order.
pub fn majority_baseline<S: AsRef<str>>(train_gt: &[S], taxonomy: &Taxonomy) -> Result<MajorityClassifier> {
    if train_gt.is_empty() {
        return Err(Error::Evaluation("majority baseline needs training labels".into()));
    }
    let mut counts = vec![0usize; taxonomy.len()];
    for l in train_gt {
        let i = taxonomy.index_of(l.as_ref()).ok_or_else(|| Error::UnknownLabel {
            label: l.as_ref().to_string(),
            taxonomy: taxonomy.name().to_string(),
        })?;
        counts[i] += 1;
    }
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    Ok(MajorityClassifier {
        label: taxonomy.labels()[best].clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordEmbeddingTable {
    pub dimension: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl WordEmbeddingTable {
    pub fn new(dimension: usize) -> Self {
        WordEmbeddingTable {
            dimension,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dimension {
            return Err(Error::Evaluation(format!(
                "vector of length {} in a {}-d table",
                vector.len(),
                self.dimension
            )));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    /// Text format: a `count dimension` header, then `word v1 v2 ...` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty embedding file"))?;
        let header = header.map_err(|e| Error::io(path, e))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, "header must be `count dimension`"))?;
        let [count, dimension] = nums[..] else {
            return Err(Error::parse(path, 1, "header must be `count dimension`"));
        };
        let mut table = WordEmbeddingTable::new(dimension);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("nonblank line");
            let v: Vec<f64> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
            table
                .insert(word, v)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        }
        if table.vectors.len() != count {
            return Err(Error::parse(
                path,
                1,
                format!("header announces {count} words, found {}", table.vectors.len()),
            ));
        }
        Ok(table)
    }

    /// Writes words in sorted order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut words: Vec<_> = self.vectors.keys().collect();
        words.sort();
        let mut out = format!("{} {}\n", words.len(), self.dimension);
        for w in words {
            out.push_str(w);
            for v in &self.vectors[w] {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Mean vector of the in-vocabulary tokens of `text`.
    fn mean_vector(&self, text: &str) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dimension];
        let mut n = 0;
        for tok in tokenize(text) {
            if let Some(v) = self.vectors.get(&tok) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                n += 1;
            }
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NEG_INFINITY;
    }
    dot / (na * nb)
}

/// Class-label vectors in taxonomy order; multi-word labels average their words.
pub fn label_vectors(table: &WordEmbeddingTable, taxonomy: &Taxonomy) -> Result<Vec<Vec<f64>>> {
    taxonomy
        .labels()
        .iter()
        .map(|l| {
            let v = table
                .mean_vector(l)
                .ok_or_else(|| Error::Evaluation(format!("label {l:?} is not in the embedding table")))?;
            if v.iter().all(|x| *x == 0.0) {
                return Err(Error::Evaluation(format!("label {l:?} has a zero vector")));
            }
            Ok(v)
        })
        .collect()
}

/// Label whose vector has the highest cosine with the mean transcript vector.
pub fn word2vec_classify<'t>(transcript: &str, table: &WordEmbeddingTable, taxonomy: &'t Taxonomy) -> Result<&'t str> {
    let classes = label_vectors(table, taxonomy)?;
    word2vec_with_classes(transcript, table, taxonomy, &classes)
}

fn word2vec_with_classes<'t>(
    transcript: &str,
    table: &WordEmbeddingTable,
    taxonomy: &'t Taxonomy,
    classes: &[Vec<f64>],
) -> Result<&'t str> {
    let t = table.mean_vector(transcript).ok_or(Error::Abstain)?;
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, c) in classes.iter().enumerate() {
        let s = cosine(&t, c);
        if s > best_sim {
            best = i;
            best_sim = s;
        }
    }
    Ok(&taxonomy.labels()[best])
}

fn ground_truth(corpus: &Corpus, ids: &[String], taxonomy: &Taxonomy) -> Result<Vec<usize>> {
    corpus
        .select(ids)?
        .iter()
        .map(|u| {
            let l = u
                .gt_label
                .as_deref()
                .ok_or_else(|| Error::Evaluation(format!("utterance {:?} has no ground-truth label", u.id)))?;
            taxonomy.index_of(l).ok_or_else(|| Error::UnknownLabel {
                label: l.to_string(),
                taxonomy: taxonomy.name().to_string(),
            })
        })
        .collect()
}

fn all_ids(corpus: &Corpus) -> Vec<String> {
    corpus.utterances().iter().map(|u| u.id.clone()).collect()
}

/// Word2Vec baseline over `ids`; abstentions are counted as errors.
pub fn word2vec_baseline(
    corpus: &Corpus,
    ids: &[String],
    table: &WordEmbeddingTable,
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    let classes = label_vectors(table, taxonomy)?;
    let gt = ground_truth(corpus, ids, taxonomy)?;
    let utterances = corpus.select(ids)?;
    let pred = par::map(&utterances, |u| {
        word2vec_with_classes(&u.transcript, table, taxonomy, &classes)
            .ok()
            .and_then(|l| taxonomy.index_of(l))
    });
    EvalReport::from_indices(&pred, &gt, taxonomy)
}

/// Majority baseline fitted on `train` ids and scored on `test` ids.
pub fn majority_report(corpus: &Corpus, train: &[String], test: &[String], taxonomy: &Taxonomy) -> Result<EvalReport> {
    let train_gt = ground_truth(corpus, train, taxonomy)?;
    let labels: Vec<&str> = train_gt.iter().map(|&i| taxonomy.labels()[i].as_str()).collect();
    let m = majority_baseline(&labels, taxonomy)?;
    let k = taxonomy.index_of(&m.label);
    let gt = ground_truth(corpus, test, taxonomy)?;
    EvalReport::from_indices(&vec![k; gt.len()], &gt, taxonomy)
}

/// Labels the ground-truth transcripts with the downstream taxonomy and
/// scores the weak labels against the references. Skipped or failed
/// utterances count as abstentions.
pub fn entailment_gt_baseline(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    prompt: &PromptTemplate,
    scorer: &dyn EntailmentScorer,
    config: &LabelerConfig,
) -> Result<EvalReport> {
    let ids = all_ids(corpus);
    let gt = ground_truth(corpus, &ids, taxonomy)?;
    let outcome = label_corpus(corpus, taxonomy, prompt, scorer, config)?;
    let by_id: HashMap<&str, &str> = outcome
        .records
        .iter()
        .map(|r| (r.utterance_id.as_str(), r.label.as_str()))
        .collect();
    let pred: Vec<Option<usize>> = ids
        .iter()
        .map(|id| by_id.get(id.as_str()).and_then(|l| taxonomy.index_of(l)))
        .collect();
    EvalReport::from_indices(&pred, &gt, taxonomy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptAccuracy {
    pub prompt_id: String,
    pub template: String,
    pub accuracy: f64,
    pub n: usize,
}

/// Weak-label accuracy of each prompt, sorted by descending accuracy with
/// ties kept in input order.
pub fn sweep_prompts(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    prompts: &[PromptTemplate],
    scorer: &dyn EntailmentScorer,
    config: &LabelerConfig,
) -> Result<Vec<PromptAccuracy>> {
    let mut rows = Vec::with_capacity(prompts.len());
    for p in prompts {
        let report = entailment_gt_baseline(corpus, taxonomy, p, scorer, config)?;
        rows.push(PromptAccuracy {
            prompt_id: p.id().to_string(),
            template: p.template().to_string(),
            accuracy: report.unweighted_accuracy,
            n: report.n,
        });
    }
    rows.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(rows)
}

fn check_taxonomy(checkpoint: &ModelCheckpoint, taxonomy: &Taxonomy) -> Result<()> {
    if checkpoint.taxonomy.same_label_set(taxonomy) {
        return Ok(());
    }
    Err(Error::TaxonomyMismatch(format!(
        "checkpoint taxonomy {:?} has different labels from {:?}; pre-train with the downstream taxonomy",
        checkpoint.taxonomy.name(),
        taxonomy.name()
    )))
}

/// Scores a checkpoint on pre-extracted features whose labels index
/// `taxonomy`. Model outputs are mapped to `taxonomy` by label name.
pub fn evaluate_features(checkpoint: &ModelCheckpoint, data: &LabeledFeatures, taxonomy: &Taxonomy) -> Result<EvalReport> {
    check_taxonomy(checkpoint, taxonomy)?;
    let x = match &checkpoint.feature_stats {
        Some(s) => data.features.normalized(s),
        None => data.features.clone(),
    };
    let map: Vec<usize> = checkpoint
        .taxonomy
        .labels()
        .iter()
        .map(|l| taxonomy.index_of(l).expect("same label set"))
        .collect();
    let pred: Vec<Option<usize>> = predict_labels(&checkpoint.model, &x)?
        .into_iter()
        .map(|i| Some(map[i]))
        .collect();
    EvalReport::from_indices(&pred, &data.labels, taxonomy)
}

/// Extracts features for `ids` with the checkpoint's front-end and scores it.
pub fn evaluate_checkpoint(
    checkpoint: &ModelCheckpoint,
    corpus: &Corpus,
    ids: &[String],
    taxonomy: &Taxonomy,
    audio: &dyn AudioSource,
) -> Result<EvalReport> {
    check_taxonomy(checkpoint, taxonomy)?;
    let data = LabeledFeatures::extract(
        corpus,
        ids,
        taxonomy,
        &checkpoint.dsp,
        checkpoint.model.config().input_frames,
        audio,
    )?;
    evaluate_features(checkpoint, &data, taxonomy)
}

/// Zero-shot evaluation on the test split; no parameters are updated.
pub fn zero_shot_eval(
    checkpoint: &ModelCheckpoint,
    downstream: &Corpus,
    split: &SplitAssignment,
    audio: &dyn AudioSource,
) -> Result<EvalReport> {
    let taxonomy = downstream
        .taxonomy()
        .ok_or_else(|| Error::Evaluation("downstream corpus has no ground-truth labels".into()))?;
    evaluate_checkpoint(checkpoint, downstream, &split.test, taxonomy, audio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyComparison {
    pub fine_taxonomy: String,
    pub coarse_taxonomy: String,
    pub fine_accuracy: f64,
    pub coarse_accuracy: f64,
    /// `fine_accuracy - coarse_accuracy`.
    pub difference: f64,
}

/// Fine-tunes two checkpoints that differ only in their pre-training
/// taxonomy with identical settings and reports paired test accuracies.
pub fn compare_taxonomies(
    fine: &ModelCheckpoint,
    coarse: &ModelCheckpoint,
    downstream: &Corpus,
    split: &SplitAssignment,
    spec: &FinetuneSpec,
    audio: &dyn AudioSource,
) -> Result<TaxonomyComparison> {
    let (fc, cc) = (fine.model.config(), coarse.model.config());
    if fc.architecture != cc.architecture
        || fc.input_frames != cc.input_frames
        || fc.input_bins != cc.input_bins
        || fine.dsp != coarse.dsp
        || fine.feature_stats.is_some() != coarse.feature_stats.is_some()
    {
        return Err(Error::Evaluation(
            "checkpoints differ in more than their pre-training taxonomy".into(),
        ));
    }
    let taxonomy = downstream
        .taxonomy()
        .ok_or_else(|| Error::Evaluation("downstream corpus has no ground-truth labels".into()))?;
    let subset = corpus::train_fraction_subset(split, spec.fraction, spec.subset_seed)?;
    let frames = fc.input_frames;
    let train = LabeledFeatures::extract(downstream, &subset, taxonomy, &fine.dsp, frames, audio)?;
    let valid = LabeledFeatures::extract(downstream, &split.valid, taxonomy, &fine.dsp, frames, audio)?;
    let test = LabeledFeatures::extract(downstream, &split.test, taxonomy, &fine.dsp, frames, audio)?;
    let run = |ck: &ModelCheckpoint| -> Result<f64> {
        let out = finetune_features(Some(ck), taxonomy, &train, &valid, spec)?;
        Ok(evaluate_features(&out.checkpoint, &test, taxonomy)?.unweighted_accuracy)
    };
    let fine_accuracy = run(fine)?;
    let coarse_accuracy = run(coarse)?;
    Ok(TaxonomyComparison {
        fine_taxonomy: fine.taxonomy.name().to_string(),
        coarse_taxonomy: coarse.taxonomy.name().to_string(),
        fine_accuracy,
        coarse_accuracy,
        difference: fine_accuracy - coarse_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub fraction: f64,
    pub train_size: usize,
    pub best_step: usize,
    pub valid_accuracy: f64,
    pub test_accuracy: f64,
}

/// Fine-tunes at each fraction of the training split and scores on test.
/// Features are extracted once and shared across fractions.
pub fn label_efficiency(
    checkpoint: Option<&ModelCheckpoint>,
    downstream: &Corpus,
    split: &SplitAssignment,
    spec: &FinetuneSpec,
    fractions: &[f64],
    audio: &dyn AudioSource,
) -> Result<Vec<FractionResult>> {
    let taxonomy = downstream
        .taxonomy()
        .ok_or_else(|| Error::Evaluation("downstream corpus has no ground-truth labels".into()))?;
    let (dsp, frames) = match checkpoint {
        Some(ck) => (ck.dsp.clone(), ck.model.config().input_frames),
        None => (spec.dsp.clone(), spec.model.input_frames),
    };
    let train_all = LabeledFeatures::extract(downstream, &split.train, taxonomy, &dsp, frames, audio)?;
    let valid = LabeledFeatures::extract(downstream, &split.valid, taxonomy, &dsp, frames, audio)?;
    let test = LabeledFeatures::extract(downstream, &split.test, taxonomy, &dsp, frames, audio)?;
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let ids = corpus::train_fraction_subset(split, fraction, spec.subset_seed)?;
        let train = train_all.subset(&ids)?;
        let mut s = spec.clone();
        s.fraction = fraction;
        let ft = finetune_features(checkpoint, taxonomy, &train, &valid, &s)?;
        let report = evaluate_features(&ft.checkpoint, &test, taxonomy)?;
        out.push(FractionResult {
            fraction,
            train_size: ids.len(),
            best_step: ft.best_step,
            valid_accuracy: ft.best_valid_accuracy,
            test_accuracy: report.unweighted_accuracy,
        });
    }
    Ok(out)
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Binomial standard deviation of an accuracy estimate at rate `p` over `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Two-column plain-text table with accuracies in percent.
pub fn format_table(title: &str, rows: &[(String, f64)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(title.len());
    let mut out = format!("{title:<width$}  accuracy\n");
    out.push_str(&"-".repeat(width + 10));
    out.push('\n');
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {:>7.2}%", 100.0 * v);
    }
    out
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Accuracy-vs-fraction line chart as a standalone SVG document.
pub fn fraction_plot_svg(series: &[(String, Vec<FractionResult>)]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 48.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let x = |f: f64| M + f * (W - 2.0 * M);
    let y = |a: f64| H - M - a * (H - 2.0 * M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = writeln!(
        s,
        "<path d=\"M{} {} L{} {} L{} {}\" fill=\"none\" stroke=\"black\"/>",
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    );
    for f in corpus::FRACTIONS {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}%</text>", x(f), y(0.0) + 16.0, f * 100.0);
    }
    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>", x(0.0) - 6.0, y(a) + 4.0, a * 100.0);
    }
    for (i, (name, rows)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.1},{:.1}", x(r.fraction), y(r.test_accuracy)))
            .collect();
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", pts.join(" "));
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            W - M - 100.0,
            M + 14.0 * i as f64,
            xml_escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
