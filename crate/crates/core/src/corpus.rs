//! Manifests, taxonomies, deterministic splits and weak-label persistence.
//!
//! Manifests and weak-label files are JSON Lines: one flat object per line.
//! A manifest `foo.jsonl` may carry a sidecar taxonomy `foo.taxonomy.txt`
//! (one label per line, order significant).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, trim and collapse internal whitespace.
pub fn normalize_label(raw: &str) -> String {
    raw.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Ordered set of emotion labels. Order defines argmax tie-breaking and the
/// model's output-head index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    name: String,
    labels: Vec<String>,
}

impl Taxonomy {
    pub fn new<S: AsRef<str>>(name: impl Into<String>, labels: &[S]) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|l| normalize_label(l.as_ref())).collect();
        if labels.is_empty() {
            return Err(Error::InvalidTaxonomy("no labels".into()));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.is_empty() {
                return Err(Error::InvalidTaxonomy("empty label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidTaxonomy(format!("duplicate label {label:?}")));
            }
        }
        Ok(Taxonomy {
            name: name.into(),
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index_of(label).is_some()
    }

    /// Same labels irrespective of order.
    pub fn same_label_set(&self, other: &Taxonomy) -> bool {
        self.len() == other.len() && self.labels.iter().all(|l| other.contains(l))
    }

    /// Reads a plain-text taxonomy, one label per line; blank lines and
    /// lines starting with `#` are ignored. The file stem becomes the name.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let labels: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .map(|s| s.trim_end_matches(".txt").trim_end_matches(".taxonomy"))
            .unwrap_or("taxonomy")
            .to_string();
        Taxonomy::new(name, &labels)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.labels.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub transcript: String,
    #[serde(rename = "audio", default, skip_serializing_if = "Option::is_none")]
    pub audio_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(rename = "speaker", default, skip_serializing_if = "Option::is_none")]
    pub speaker_id: Option<String>,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub gt_label: Option<String>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, transcript: impl Into<String>) -> Self {
        Utterance {
            id: id.into(),
            transcript: transcript.into(),
            audio_ref: None,
            duration_s: None,
            speaker_id: None,
            gt_label: None,
        }
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.gt_label = Some(normalize_label(label));
        self
    }

    pub fn with_speaker(mut self, speaker: impl Into<String>) -> Self {
        self.speaker_id = Some(speaker.into());
        self
    }

    pub fn with_audio(mut self, audio: impl Into<String>) -> Self {
        self.audio_ref = Some(audio.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    utterances: Vec<Utterance>,
    taxonomy: Option<Taxonomy>,
}

impl Corpus {
    /// Validates id uniqueness and label membership. When labels are present
    /// but no taxonomy is given, one is inferred in first-appearance order.
    pub fn new(utterances: Vec<Utterance>, taxonomy: Option<Taxonomy>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &utterances {
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId(u.id.clone()));
            }
        }
        let taxonomy = match taxonomy {
            Some(t) => {
                for u in &utterances {
                    if let Some(label) = &u.gt_label {
                        if !t.contains(label) {
                            return Err(Error::UnknownLabel {
                                label: label.clone(),
                                taxonomy: t.name().to_string(),
                            });
                        }
                    }
                }
                Some(t)
            }
            None => {
                let mut labels: Vec<&str> = Vec::new();
                for u in &utterances {
                    if let Some(l) = &u.gt_label {
                        if !labels.contains(&l.as_str()) {
                            labels.push(l);
                        }
                    }
                }
                if labels.is_empty() {
                    None
                } else {
                    Some(Taxonomy::new("inferred", &labels)?)
                }
            }
        };
        Ok(Corpus {
            utterances,
            taxonomy,
        })
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn taxonomy(&self) -> Option<&Taxonomy> {
        self.taxonomy.as_ref()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.utterances.iter().map(|u| u.id.as_str()).collect()
    }

    pub fn index(&self) -> HashMap<&str, &Utterance> {
        self.utterances.iter().map(|u| (u.id.as_str(), u)).collect()
    }

    /// Utterances with the given ids, in the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Utterance>> {
        let index = self.index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Split(format!("unknown utterance id {id:?}")))
            })
            .collect()
    }
}

/// Sidecar taxonomy path for a manifest: `dir/foo.jsonl` → `dir/foo.taxonomy.txt`.
pub fn sidecar_taxonomy_path(manifest: &Path) -> PathBuf {
    let stem = manifest
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("manifest");
    manifest.with_file_name(format!("{stem}.taxonomy.txt"))
}

/// Loads a manifest, picking up the sidecar taxonomy when present.
pub fn load_manifest(path: &Path) -> Result<Corpus> {
    let sidecar = sidecar_taxonomy_path(path);
    let taxonomy = if sidecar.exists() {
        Some(Taxonomy::load(&sidecar)?)
    } else {
        None
    };
    load_manifest_with_taxonomy(path, taxonomy)
}

pub fn load_manifest_with_taxonomy(path: &Path, taxonomy: Option<Taxonomy>) -> Result<Corpus> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut u: Utterance =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if u.id.is_empty() {
            return Err(Error::parse(path, lineno, "empty id"));
        }
        if !seen.insert(u.id.clone()) {
            return Err(Error::DuplicateId(u.id));
        }
        u.gt_label = u.gt_label.map(|l| normalize_label(&l));
        utterances.push(u);
    }
    Corpus::new(utterances, taxonomy)
}

/// Writes the manifest and, when the corpus has a taxonomy, its sidecar.
pub fn write_manifest(corpus: &Corpus, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for u in corpus.utterances() {
        serde_json::to_writer(&mut out, u)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    if let Some(t) = corpus.taxonomy() {
        t.write(&sidecar_taxonomy_path(path))?;
    }
    Ok(())
}

/// Seeded 64-bit hash of a string key (FNV-1a followed by a splitmix64 finalizer).
pub fn stable_hash(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in key.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.valid.len(), self.test.len())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

const SPLIT_RATIOS: [f64; 3] = [0.6, 0.2, 0.2];

fn split_targets(n: usize) -> [f64; 3] {
    SPLIT_RATIOS.map(|r| r * n as f64)
}

/// Exact 6:2:2 sizes: train and valid rounded, test takes the remainder.
fn split_sizes(n: usize) -> [usize; 3] {
    let train = (0.6 * n as f64).round() as usize;
    let valid = ((0.2 * n as f64).round() as usize).min(n - train);
    [train, valid, n - train - valid]
}

fn deviation(sizes: &[usize; 3], targets: &[f64; 3]) -> f64 {
    sizes
        .iter()
        .zip(targets)
        .map(|(&s, &t)| (s as f64 - t).abs())
        .sum()
}

/// Deterministic 6:2:2 split. Utterances (or whole speakers when
/// `speaker_independent`) are ordered by a seeded hash of their id.
pub fn split_corpus(corpus: &Corpus, seed: u64, speaker_independent: bool) -> Result<SplitAssignment> {
    if corpus.is_empty() {
        return Err(Error::Split("empty corpus".into()));
    }
    if speaker_independent {
        return split_by_speaker(corpus, seed);
    }
    let mut keyed: Vec<(u64, &str)> = corpus
        .utterances()
        .iter()
        .map(|u| (stable_hash(seed, &u.id), u.id.as_str()))
        .collect();
    keyed.sort();
    let [n_train, n_valid, _] = split_sizes(keyed.len());
    let ids: Vec<String> = keyed.into_iter().map(|(_, id)| id.to_string()).collect();
    Ok(SplitAssignment {
        train: ids[..n_train].to_vec(),
        valid: ids[n_train..n_train + n_valid].to_vec(),
        test: ids[n_train + n_valid..].to_vec(),
        seed,
    })
}

/// Up to this many speakers the whole-speaker packing is solved exactly.
const EXACT_SPEAKER_LIMIT: usize = 10;

fn split_by_speaker(corpus: &Corpus, seed: u64) -> Result<SplitAssignment> {
    let mut by_speaker: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for u in corpus.utterances() {
        let speaker = u.speaker_id.as_deref().ok_or_else(|| {
            Error::Split(format!(
                "speaker-independent split requested but utterance {:?} has no speaker",
                u.id
            ))
        })?;
        by_speaker.entry(speaker).or_default().push(&u.id);
    }
    // Seeded speaker order; ascending speaker id breaks hash ties.
    let mut speakers: Vec<(&str, usize)> = by_speaker.iter().map(|(s, ids)| (*s, ids.len())).collect();
    speakers.sort_by_key(|(s, _)| (stable_hash(seed, s), *s));

    let targets = split_targets(corpus.len());
    let parts = if speakers.len() <= EXACT_SPEAKER_LIMIT {
        pack_exact(&speakers, &targets)
    } else {
        pack_greedy(&speakers, &targets)
    };

    let mut out: [Vec<String>; 3] = Default::default();
    for ((speaker, _), part) in speakers.iter().zip(&parts) {
        out[*part].extend(by_speaker[speaker].iter().map(|s| s.to_string()));
    }
    let [train, valid, test] = out;
    Ok(SplitAssignment {
        train,
        valid,
        test,
        seed,
    })
}

/// Exhaustive search over 3^S whole-speaker assignments; the first minimum
/// in enumeration order wins.
fn pack_exact(speakers: &[(&str, usize)], targets: &[f64; 3]) -> Vec<usize> {
    let s = speakers.len();
    let total = 3usize.pow(s as u32);
    let mut best = (f64::INFINITY, 0usize);
    for code in 0..total {
        let mut sizes = [0usize; 3];
        let mut c = code;
        for (_, count) in speakers {
            sizes[c % 3] += count;
            c /= 3;
        }
        let d = deviation(&sizes, targets);
        if d < best.0 - 1e-12 {
            best = (d, code);
        }
    }
    let mut c = best.1;
    (0..s)
        .map(|_| {
            let p = c % 3;
            c /= 3;
            p
        })
        .collect()
}

/// Largest-first assignment to the partition with the biggest deficit,
/// followed by single-speaker moves while they reduce the deviation.
fn pack_greedy(speakers: &[(&str, usize)], targets: &[f64; 3]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..speakers.len()).collect();
    order.sort_by(|&a, &b| speakers[b].1.cmp(&speakers[a].1));
    let mut parts = vec![0usize; speakers.len()];
    let mut sizes = [0usize; 3];
    for &i in &order {
        let mut best = 0;
        for p in 1..3 {
            if targets[p] - sizes[p] as f64 > targets[best] - sizes[best] as f64 {
                best = p;
            }
        }
        parts[i] = best;
        sizes[best] += speakers[i].1;
    }
    loop {
        let current = deviation(&sizes, targets);
        let mut improved = None;
        'search: for i in 0..speakers.len() {
            for p in 0..3 {
                if p == parts[i] {
                    continue;
                }
                let mut trial = sizes;
                trial[parts[i]] -= speakers[i].1;
                trial[p] += speakers[i].1;
                if deviation(&trial, targets) < current - 1e-12 {
                    improved = Some((i, p, trial));
                    break 'search;
                }
            }
        }
        match improved {
            Some((i, p, trial)) => {
                parts[i] = p;
                sizes = trial;
            }
            None => break,
        }
    }
    parts
}

/// Label-efficiency fractions used for fine-tuning sweeps.
pub const FRACTIONS: [f64; 5] = [0.10, 0.30, 0.50, 0.70, 1.00];

pub fn check_fraction(fraction: f64) -> Result<f64> {
    FRACTIONS
        .iter()
        .copied()
        .find(|f| (f - fraction).abs() < 1e-9)
        .ok_or(Error::InvalidFraction(fraction))
}

/// Nested subset of the training ids: a seeded ranking of the train list is
/// cut at `round(fraction * |train|)`, so smaller fractions are always
/// contained in larger ones. Selected ids are returned in train-list order.
pub fn train_fraction_subset(split: &SplitAssignment, fraction: f64, seed: u64) -> Result<Vec<String>> {
    let fraction = check_fraction(fraction)?;
    let n = (fraction * split.train.len() as f64).round() as usize;
    let mut ranked: Vec<(u64, usize)> = split
        .train
        .iter()
        .enumerate()
        .map(|(i, id)| (stable_hash(seed ^ 0x5eed_f4ac, id), i))
        .collect();
    ranked.sort();
    let mut chosen: Vec<usize> = ranked[..n].iter().map(|&(_, i)| i).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| split.train[i].clone()).collect())
}

/// Per-utterance entailment scores over a taxonomy and the selected label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabelRecord {
    pub utterance_id: String,
    pub label: String,
    pub prompt_id: String,
    pub scorer_id: String,
    #[serde(rename = "taxonomy")]
    pub taxonomy_name: String,
    /// Scores in taxonomy order.
    pub scores: IndexMap<String, f64>,
}

/// First maximum in iteration order.
pub fn argmax_first<'a, I>(scores: I) -> Option<&'a str>
where
    I: IntoIterator<Item = (&'a String, &'a f64)>,
{
    let mut best: Option<(&str, f64)> = None;
    for (label, &score) in scores {
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((label.as_str(), score)),
        }
    }
    best.map(|(l, _)| l)
}

impl WeakLabelRecord {
    /// Checks finite scores and that `label` is the first argmax of the map.
    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::ScoreMismatch(format!(
                "record {:?} has no scores",
                self.utterance_id
            )));
        }
        if let Some((l, s)) = self.scores.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::ScoreMismatch(format!(
                "record {:?} has non-finite score {s} for {l:?}",
                self.utterance_id
            )));
        }
        let argmax = argmax_first(&self.scores).unwrap_or_default();
        if argmax != self.label {
            return Err(Error::ArgmaxViolation {
                utterance_id: self.utterance_id.clone(),
                claimed: self.label.clone(),
                argmax: argmax.to_string(),
            });
        }
        Ok(())
    }

    /// Additionally requires the score keys to equal the taxonomy, in order.
    pub fn validate_against(&self, taxonomy: &Taxonomy) -> Result<()> {
        if !self.scores.keys().eq(taxonomy.labels().iter()) {
            return Err(Error::ScoreMismatch(format!(
                "record {:?} scores do not cover taxonomy {:?} in order",
                self.utterance_id,
                taxonomy.name()
            )));
        }
        self.validate()
    }
}

/// Writes records as JSON Lines, refusing any record that breaks the argmax rule.
pub fn write_weak_labels(records: &[WeakLabelRecord], path: &Path) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_weak_labels(path: &Path) -> Result<Vec<WeakLabelRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: WeakLabelRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        r.validate()?;
        records.push(r);
    }
    Ok(records)
}
