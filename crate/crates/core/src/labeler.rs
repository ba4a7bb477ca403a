//! Entailment-based weak labelling.
//!
//! Every (transcript, prompted label) pair is scored by an
//! [`EntailmentScorer`] and the highest-scoring label in taxonomy order is
//! kept as the weak label. Scorers are pluggable: a deterministic
//! [`LexiconScorer`], a hashed [`RandomScorer`], and the [`RemoteScorer`]
//! client for an NLI model server.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{stable_hash, Corpus, Taxonomy, WeakLabelRecord};
use crate::error::{Error, Result};
use crate::par;
use crate::prompting::PromptTemplate;

/// Which side of the NLI pair carries the prompted label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Prompted label is the premise, transcript the hypothesis.
    #[default]
    LabelPremise,
    /// Transcript is the premise, prompted label the hypothesis (common
    /// zero-shot NLI practice).
    TranscriptPremise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub premise: String,
    pub hypothesis: String,
}

impl ScorePair {
    pub fn new(premise: impl Into<String>, hypothesis: impl Into<String>) -> Result<Self> {
        let pair = ScorePair {
            premise: premise.into(),
            hypothesis: hypothesis.into(),
        };
        if pair.premise.trim().is_empty() || pair.hypothesis.trim().is_empty() {
            return Err(Error::Scorer("premise and hypothesis must be nonempty".into()));
        }
        Ok(pair)
    }

    /// Builds the pair for a transcript and a rendered prompt.
    pub fn oriented(prompted_label: String, transcript: &str, orientation: Orientation) -> Result<Self> {
        match orientation {
            Orientation::LabelPremise => ScorePair::new(prompted_label, transcript),
            Orientation::TranscriptPremise => ScorePair::new(transcript, prompted_label),
        }
    }
}

/// Scores NLI pairs. Output is order-aligned with the input, one value in
/// `[0, 1]` per pair, and deterministic for a given scorer.
pub trait EntailmentScorer: Send + Sync {
    fn scorer_id(&self) -> String;

    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>>;

    /// Whether batches may be dispatched concurrently.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Lowercased alphanumeric tokens (apostrophes kept inside words).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// word → label → weight in `[0, 1]`.
pub type Lexicon = HashMap<String, HashMap<String, f64>>;

/// Reads `word<TAB>label<TAB>weight` lines.
pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lexicon = Lexicon::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected `word<TAB>label<TAB>weight`"));
        }
        let weight: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad weight {:?}", fields[2])))?;
        if !(0.0..=1.0).contains(&weight) {
            return Err(Error::parse(path, i + 1, format!("weight {weight} outside [0, 1]")));
        }
        lexicon
            .entry(fields[0].trim().to_lowercase())
            .or_default()
            .insert(crate::corpus::normalize_label(fields[1]), weight);
    }
    Ok(lexicon)
}

pub fn write_lexicon(lexicon: &Lexicon, path: &Path) -> Result<()> {
    let mut rows: Vec<(&String, &String, f64)> = lexicon
        .iter()
        .flat_map(|(w, m)| m.iter().map(move |(l, &x)| (w, l, x)))
        .collect();
    rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let text: String = rows.iter().map(|(w, l, x)| format!("{w}\t{l}\t{x}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Finds the single taxonomy label whose token sequence occurs in `premise`.
/// When several labels match, one whose match is strictly contained in
/// another's is discarded.
fn label_in_premise<'a>(premise: &str, labels: &'a [String]) -> Result<&'a str> {
    let tokens = tokenize(premise);
    let mut spans: Vec<(usize, usize, &str)> = Vec::new();
    for label in labels {
        let lt = tokenize(label);
        if lt.is_empty() || lt.len() > tokens.len() {
            continue;
        }
        for start in 0..=tokens.len() - lt.len() {
            if tokens[start..start + lt.len()] == lt[..] {
                spans.push((start, start + lt.len(), label));
            }
        }
    }
    let maximal: Vec<&str> = spans
        .iter()
        .filter(|&&(s, e, _)| {
            !spans
                .iter()
                .any(|&(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s))
        })
        .map(|&(_, _, l)| l)
        .collect();
    match maximal.as_slice() {
        [] => Err(Error::Scorer(format!("premise {premise:?} contains no known label"))),
        [first, rest @ ..] if rest.iter().all(|l| l == first) => Ok(first),
        _ => Err(Error::Scorer(format!("premise {premise:?} matches several labels"))),
    }
}

/// Mean over hypothesis tokens of `lexicon[token][label]`, where the label is
/// the taxonomy label found in the premise. Missing entries count as zero.
pub fn lexicon_score(pair: &ScorePair, lexicon: &Lexicon, labels: &[String]) -> Result<f64> {
    let label = label_in_premise(&pair.premise, labels)?;
    let tokens = tokenize(&pair.hypothesis);
    if tokens.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = tokens
        .iter()
        .map(|t| lexicon.get(t).and_then(|m| m.get(label)).copied().unwrap_or(0.0))
        .sum();
    Ok(total / tokens.len() as f64)
}

/// Deterministic word-list scorer standing in for an NLI model.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    lexicon: Lexicon,
    labels: Vec<String>,
    orientation: Orientation,
}

impl LexiconScorer {
    pub fn new(lexicon: Lexicon, taxonomy: &Taxonomy) -> Self {
        LexiconScorer {
            lexicon,
            labels: taxonomy.labels().to_vec(),
            orientation: Orientation::default(),
        }
    }

    /// Reads pairs built with the given orientation.
    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }
}

impl EntailmentScorer for LexiconScorer {
    fn scorer_id(&self) -> String {
        "lexicon".into()
    }

    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        pairs
            .iter()
            .map(|p| match self.orientation {
                Orientation::LabelPremise => lexicon_score(p, &self.lexicon, &self.labels),
                Orientation::TranscriptPremise => {
                    let swapped = ScorePair {
                        premise: p.hypothesis.clone(),
                        hypothesis: p.premise.clone(),
                    };
                    lexicon_score(&swapped, &self.lexicon, &self.labels)
                }
            })
            .collect()
    }
}

/// Uniform pseudo-random scores keyed on (seed, premise, hypothesis).
#[derive(Debug, Clone)]
pub struct RandomScorer {
    seed: u64,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        RandomScorer { seed }
    }
}

impl EntailmentScorer for RandomScorer {
    fn scorer_id(&self) -> String {
        format!("random:{}", self.seed)
    }

    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        Ok(pairs
            .iter()
            .map(|p| {
                let h = stable_hash(self.seed, &format!("{}\u{1f}{}", p.premise, p.hypothesis));
                (h >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

/// Argmax over `scores` with ties going to the earliest taxonomy label.
/// `scores` must cover exactly the taxonomy labels (any order).
pub fn select_weak_label<'t>(scores: &IndexMap<String, f64>, taxonomy: &'t Taxonomy) -> Result<&'t str> {
    if scores.len() != taxonomy.len() {
        return Err(Error::ScoreMismatch(format!(
            "{} scores for {} taxonomy labels",
            scores.len(),
            taxonomy.len()
        )));
    }
    let mut best: Option<(&str, f64)> = None;
    for label in taxonomy.labels() {
        let score = *scores
            .get(label)
            .ok_or_else(|| Error::ScoreMismatch(format!("missing score for {label:?}")))?;
        if score.is_nan() {
            return Err(Error::ScoreMismatch(format!("NaN score for {label:?}")));
        }
        match best {
            Some((_, b)) if score <= b => {}
            _ => best = Some((label, score)),
        }
    }
    Ok(best.map(|(l, _)| l).expect("taxonomy is nonempty"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelerConfig {
    /// Utterances per scorer call (each call carries `batch_size * K` pairs).
    pub batch_size: usize,
    pub orientation: Orientation,
    /// Extra attempts for a failed batch before its utterances are reported.
    pub retries: usize,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            batch_size: 16,
            orientation: Orientation::default(),
            retries: 1,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LabelingOutcome {
    pub records: Vec<WeakLabelRecord>,
    /// Utterances with empty transcripts.
    pub skipped: Vec<String>,
    /// Utterances whose batch failed after retries, with the last error.
    pub failed: Vec<(String, String)>,
}

/// Scores every utterance against every taxonomy label and emits one
/// [`WeakLabelRecord`] per labelled utterance, in corpus order. Results do not
/// depend on batch size or on whether batches run concurrently.
pub fn label_corpus(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    prompt: &PromptTemplate,
    scorer: &dyn EntailmentScorer,
    config: &LabelerConfig,
) -> Result<LabelingOutcome> {
    if config.batch_size == 0 {
        return Err(Error::Scorer("batch_size must be positive".into()));
    }
    let premises: Vec<String> = taxonomy.labels().iter().map(|l| prompt.render(l)).collect();

    let mut outcome = LabelingOutcome::default();
    let mut todo = Vec::new();
    for u in corpus.utterances() {
        if u.transcript.trim().is_empty() {
            outcome.skipped.push(u.id.clone());
        } else {
            todo.push(u);
        }
    }

    let batches: Vec<_> = todo.chunks(config.batch_size).collect();
    let score_one = |batch: &&[&crate::corpus::Utterance]| -> Result<Vec<f64>> {
        let pairs = batch
            .iter()
            .flat_map(|u| {
                premises
                    .iter()
                    .map(move |p| ScorePair::oriented(p.clone(), &u.transcript, config.orientation))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut last = None;
        for attempt in 0..=config.retries {
            match scorer.score_batch(&pairs) {
                Ok(scores) if scores.len() == pairs.len() => return Ok(scores),
                Ok(scores) => {
                    return Err(Error::Protocol(format!(
                        "scorer returned {} scores for {} pairs",
                        scores.len(),
                        pairs.len()
                    )))
                }
                Err(e) => {
                    log::warn!("scorer batch attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    };
    let results: Vec<Result<Vec<f64>>> = if scorer.concurrent() {
        par::map(&batches, score_one)
    } else {
        batches.iter().map(score_one).collect()
    };

    let scorer_id = scorer.scorer_id();
    for (batch, result) in batches.iter().zip(results) {
        let scores = match result {
            Ok(s) => s,
            Err(e) => {
                let msg = e.to_string();
                outcome
                    .failed
                    .extend(batch.iter().map(|u| (u.id.clone(), msg.clone())));
                continue;
            }
        };
        for (u, row) in batch.iter().zip(scores.chunks(taxonomy.len())) {
            if let Some(bad) = row.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(Error::Protocol(format!("score {bad} outside [0, 1]")));
            }
            let map: IndexMap<String, f64> = taxonomy
                .labels()
                .iter()
                .cloned()
                .zip(row.iter().copied())
                .collect();
            let label = select_weak_label(&map, taxonomy)?.to_string();
            outcome.records.push(WeakLabelRecord {
                utterance_id: u.id.clone(),
                label,
                prompt_id: prompt.id().to_string(),
                scorer_id: scorer_id.clone(),
                taxonomy_name: taxonomy.name().to_string(),
                scores: map,
            });
        }
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScorePair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    pub model_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServerInfo {
    pub model_id: String,
    pub max_batch: usize,
    #[serde(default)]
    pub taxonomy_agnostic: bool,
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    pub retries: usize,
    /// First backoff delay; doubles on every retry.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
        }
    }
}

/// Client for the NLI model server (`POST /v1/entailment`, `GET /v1/info`).
pub struct RemoteScorer {
    config: RemoteConfig,
    base: String,
    client: reqwest::blocking::Client,
    info: OnceLock<ServerInfo>,
    model_id: OnceLock<String>,
    attempts: AtomicUsize,
}

enum AttemptError {
    Transient(String),
    Fatal(Error),
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self> {
        let mut base = config.endpoint.trim_end_matches('/').to_string();
        if !base.contains("://") {
            base = format!("http://{base}");
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Scorer(format!("http client: {e}")))?;
        Ok(RemoteScorer {
            config,
            base,
            client,
            info: OnceLock::new(),
            model_id: OnceLock::new(),
            attempts: AtomicUsize::new(0),
        })
    }

    /// Skips the `/v1/info` probe and uses the given request limit.
    pub fn with_max_batch(self, max_batch: usize) -> Self {
        let _ = self.info.set(ServerInfo {
            model_id: String::new(),
            max_batch: max_batch.max(1),
            taxonomy_agnostic: true,
        });
        self
    }

    /// HTTP requests issued so far, including failed ones.
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::SeqCst)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> std::result::Result<T, AttemptError>) -> std::result::Result<T, (Error, bool)> {
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            self.attempts.fetch_add(1, Ordering::SeqCst);
            match call() {
                Ok(v) => return Ok(v),
                Err(AttemptError::Fatal(e)) => return Err((e, true)),
                Err(AttemptError::Transient(msg)) => {
                    log::warn!("remote scorer attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err((
            Error::Scorer(format!(
                "{} attempts failed, last error: {last}",
                self.config.retries + 1
            )),
            false,
        ))
    }

    pub fn server_info(&self) -> Result<ServerInfo> {
        if let Some(info) = self.info.get() {
            return Ok(info.clone());
        }
        let url = format!("{}/v1/info", self.base);
        let info = self
            .with_retries(|| {
                let resp = self
                    .client
                    .get(&url)
                    .send()
                    .map_err(|e| AttemptError::Transient(e.to_string()))?;
                let status = resp.status();
                if status.is_server_error() {
                    return Err(AttemptError::Transient(format!("status {status}")));
                }
                if !status.is_success() {
                    return Err(AttemptError::Fatal(Error::Protocol(format!("info returned {status}"))));
                }
                resp.json::<ServerInfo>()
                    .map_err(|e| AttemptError::Fatal(Error::Protocol(format!("bad info body: {e}"))))
            })
            .map_err(|(e, _)| e)?;
        if info.max_batch == 0 {
            return Err(Error::Protocol("server advertises max_batch 0".into()));
        }
        let _ = self.info.set(info.clone());
        Ok(info)
    }

    fn post_chunk(&self, pairs: &[ScorePair]) -> std::result::Result<Vec<f64>, (Error, bool)> {
        let url = format!("{}/v1/entailment", self.base);
        let body = ScoreRequest {
            pairs: pairs.to_vec(),
        };
        self.with_retries(|| {
            let resp = self
                .client
                .post(&url)
                .json(&body)
                .send()
                .map_err(|e| AttemptError::Transient(e.to_string()))?;
            let status = resp.status();
            if status.is_server_error() {
                return Err(AttemptError::Transient(format!("status {status}")));
            }
            if !status.is_success() {
                return Err(AttemptError::Fatal(Error::Protocol(format!(
                    "entailment request returned {status}"
                ))));
            }
            let parsed: ScoreResponse = resp
                .json()
                .map_err(|e| AttemptError::Fatal(Error::Protocol(format!("bad response body: {e}"))))?;
            if parsed.scores.len() != pairs.len() {
                return Err(AttemptError::Fatal(Error::Protocol(format!(
                    "server returned {} scores for {} pairs",
                    parsed.scores.len(),
                    pairs.len()
                ))));
            }
            if let Some(bad) = parsed.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(AttemptError::Fatal(Error::Protocol(format!(
                    "score {bad} outside [0, 1]"
                ))));
            }
            if !parsed.model_id.is_empty() {
                let _ = self.model_id.set(parsed.model_id);
            }
            Ok(parsed.scores)
        })
    }

    /// Splits `pairs` into server-sized requests and reassembles the scores
    /// in input order. Transport failures are retried with exponential
    /// backoff; protocol violations fail immediately.
    pub fn remote_score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let max_batch = self.server_info()?.max_batch;
        let mut scores = Vec::with_capacity(pairs.len());
        let mut failed = Vec::new();
        let mut last = String::new();
        for (i, chunk) in pairs.chunks(max_batch).enumerate() {
            match self.post_chunk(chunk) {
                Ok(s) => scores.extend(s),
                Err((e, true)) => return Err(e),
                Err((e, false)) => {
                    failed.push(i);
                    last = e.to_string();
                }
            }
        }
        if !failed.is_empty() {
            return Err(Error::Remote {
                failed_batches: failed,
                message: last,
            });
        }
        Ok(scores)
    }
}

impl EntailmentScorer for RemoteScorer {
    fn scorer_id(&self) -> String {
        match self.model_id.get() {
            Some(m) => format!("remote:{m}"),
            None => format!("remote:{}", self.config.endpoint),
        }
    }

    fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        self.remote_score_batch(pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use crate::prompting::default_prompt;
    use proptest::prelude::*;

    fn lottery_lexicon() -> Lexicon {
        let mut lex = Lexicon::new();
        lex.insert("won".into(), HashMap::from([("joy".to_string(), 1.0)]));
        lex.insert("lottery".into(), HashMap::from([("joy".to_string(), 0.8)]));
        lex
    }

    fn jas() -> Taxonomy {
        Taxonomy::new("t", &["joy", "anger", "sadness"]).unwrap()
    }

    fn scores(pairs: &[(&str, f64)]) -> IndexMap<String, f64> {
        pairs.iter().map(|(l, s)| (l.to_string(), *s)).collect()
    }

    #[test]
    fn argmax_and_tie_break() {
        let t = Taxonomy::new("t", &["anger", "joy", "sadness"]).unwrap();
        let s = scores(&[("anger", 0.1), ("joy", 0.7), ("sadness", 0.2)]);
        assert_eq!(select_weak_label(&s, &t).unwrap(), "joy");
        let t2 = Taxonomy::new("t", &["anger", "joy"]).unwrap();
        // map order is irrelevant; taxonomy order decides ties
        let s = scores(&[("joy", 0.5), ("anger", 0.5)]);
        assert_eq!(select_weak_label(&s, &t2).unwrap(), "anger");
    }

    #[test]
    fn select_rejects_missing_or_extra_keys() {
        let t = Taxonomy::new("t", &["anger", "joy"]).unwrap();
        assert!(select_weak_label(&scores(&[("anger", 0.5)]), &t).is_err());
        assert!(select_weak_label(&scores(&[("anger", 0.5), ("fear", 0.1)]), &t).is_err());
        assert!(select_weak_label(&scores(&[("anger", 0.5), ("joy", 0.1), ("fear", 0.9)]), &t).is_err());
    }

    #[test]
    fn lexicon_score_hand_arithmetic() {
        let pair = ScorePair::new("The emotion of the conversation is joy.", "I won the lottery").unwrap();
        let s = lexicon_score(&pair, &lottery_lexicon(), jas().labels()).unwrap();
        assert!((s - 0.45).abs() < 1e-15);
        let empty = Lexicon::new();
        assert_eq!(lexicon_score(&pair, &empty, jas().labels()).unwrap(), 0.0);
        assert_eq!(s, lexicon_score(&pair, &lottery_lexicon(), jas().labels()).unwrap());
        let bad = ScorePair::new("The emotion of the conversation is calm.", "I won").unwrap();
        assert!(lexicon_score(&bad, &empty, jas().labels()).is_err());
    }

    #[test]
    fn label_lookup_prefers_longest_match() {
        let labels = vec!["surprise".to_string(), "pleasant surprise".to_string()];
        assert_eq!(label_in_premise("I feel pleasant surprise.", &labels).unwrap(), "pleasant surprise");
        assert_eq!(label_in_premise("I feel surprise.", &labels).unwrap(), "surprise");
    }

    #[test]
    fn lottery_example_labels_joy() {
        let c = Corpus::new(vec![Utterance::new("u1", "I won the lottery")], None).unwrap();
        let scorer = LexiconScorer::new(lottery_lexicon(), &jas());
        let out = label_corpus(&c, &jas(), &default_prompt(), &scorer, &LabelerConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.label, "joy");
        assert!((r.scores["joy"] - 0.45).abs() < 1e-15);
        assert_eq!(r.scores["anger"], 0.0);
        assert_eq!(r.prompt_id, "p09");
        r.validate_against(&jas()).unwrap();
    }

    struct CountingScorer {
        calls: std::sync::Mutex<Vec<usize>>,
    }

    impl EntailmentScorer for CountingScorer {
        fn scorer_id(&self) -> String {
            "counting".into()
        }
        fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
            self.calls.lock().unwrap().push(pairs.len());
            Ok(vec![0.5; pairs.len()])
        }
    }

    #[test]
    fn one_utterance_sends_k_pairs() {
        let t = Taxonomy::new("t", &["a", "b", "c", "d", "e"]).unwrap();
        let c = Corpus::new(vec![Utterance::new("u1", "hello")], None).unwrap();
        let scorer = CountingScorer {
            calls: Default::default(),
        };
        let out = label_corpus(&c, &t, &default_prompt(), &scorer, &LabelerConfig::default()).unwrap();
        assert_eq!(*scorer.calls.lock().unwrap(), vec![5]);
        assert_eq!(out.records[0].label, "a");
    }

    #[test]
    fn empty_transcripts_are_skipped() {
        let c = Corpus::new(
            vec![Utterance::new("u1", "  "), Utterance::new("u2", "I won")],
            None,
        )
        .unwrap();
        let scorer = LexiconScorer::new(lottery_lexicon(), &jas());
        let out = label_corpus(&c, &jas(), &default_prompt(), &scorer, &LabelerConfig::default()).unwrap();
        assert_eq!(out.skipped, vec!["u1".to_string()]);
        assert_eq!(out.records.len(), 1);
    }

    struct FlakyScorer {
        fail_first: AtomicUsize,
    }

    impl EntailmentScorer for FlakyScorer {
        fn scorer_id(&self) -> String {
            "flaky".into()
        }
        fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
            if self.fail_first.load(Ordering::SeqCst) > 0 {
                self.fail_first.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::Scorer("transient".into()));
            }
            if pairs.iter().any(|p| p.hypothesis.contains("poison")) {
                return Err(Error::Scorer("poisoned".into()));
            }
            Ok(vec![0.1; pairs.len()])
        }
        fn concurrent(&self) -> bool {
            false
        }
    }

    #[test]
    fn failures_are_retried_then_reported_per_utterance() {
        let c = Corpus::new(
            vec![
                Utterance::new("u1", "fine"),
                Utterance::new("u2", "poison"),
                Utterance::new("u3", "also fine"),
            ],
            None,
        )
        .unwrap();
        let scorer = FlakyScorer {
            fail_first: AtomicUsize::new(1),
        };
        let cfg = LabelerConfig {
            batch_size: 1,
            retries: 1,
            ..Default::default()
        };
        let out = label_corpus(&c, &jas(), &default_prompt(), &scorer, &cfg).unwrap();
        assert_eq!(out.records.iter().map(|r| r.utterance_id.as_str()).collect::<Vec<_>>(), ["u1", "u3"]);
        assert_eq!(out.failed.len(), 1);
        assert_eq!(out.failed[0].0, "u2");
    }

    #[test]
    fn orientation_switch_builds_swapped_pairs() {
        let p = ScorePair::oriented("Label.".into(), "words", Orientation::TranscriptPremise).unwrap();
        assert_eq!(p.premise, "words");
        let c = Corpus::new(vec![Utterance::new("u1", "I won the lottery")], None).unwrap();
        let scorer = LexiconScorer::new(lottery_lexicon(), &jas()).with_orientation(Orientation::TranscriptPremise);
        let cfg = LabelerConfig {
            orientation: Orientation::TranscriptPremise,
            ..Default::default()
        };
        let out = label_corpus(&c, &jas(), &default_prompt(), &scorer, &cfg).unwrap();
        assert_eq!(out.records[0].label, "joy");
    }

    #[test]
    fn random_scorer_is_deterministic_and_bounded() {
        let pairs: Vec<_> = (0..50)
            .map(|i| ScorePair::new(format!("p{i}"), "h").unwrap())
            .collect();
        let a = RandomScorer::new(3).score_batch(&pairs).unwrap();
        assert_eq!(a, RandomScorer::new(3).score_batch(&pairs).unwrap());
        assert_ne!(a, RandomScorer::new(4).score_batch(&pairs).unwrap());
        assert!(a.iter().all(|s| (0.0..1.0).contains(s)));
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("I won the LOTTERY!"), ["i", "won", "the", "lottery"]);
        assert_eq!(tokenize("don't  stop"), ["don't", "stop"]);
        assert!(tokenize("...").is_empty());
    }

    proptest! {
        #[test]
        fn select_matches_exhaustive_scan(raw in proptest::collection::vec(0u8..5, 2..43)) {
            let labels: Vec<String> = (0..raw.len()).map(|i| format!("l{i}")).collect();
            let t = Taxonomy::new("t", &labels).unwrap();
            let s: IndexMap<String, f64> = labels.iter().cloned().zip(raw.iter().map(|&x| x as f64 / 4.0)).collect();
            let mut best = 0;
            for i in 1..labels.len() {
                if s[&labels[i]] > s[&labels[best]] {
                    best = i;
                }
            }
            prop_assert_eq!(select_weak_label(&s, &t).unwrap(), labels[best].as_str());
            // strictly increasing transform keeps the argmax
            let s2: IndexMap<String, f64> = s.iter().map(|(k, v)| (k.clone(), (3.0 * v).exp() - 7.0)).collect();
            prop_assert_eq!(select_weak_label(&s2, &t).unwrap(), labels[best].as_str());
        }
    }
}
