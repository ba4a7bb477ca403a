//! Audio loading and fixed-size model inputs.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::corpus::Utterance;
use crate::dsp::{self, fix_length, FeatureStats, MelExtractor, Waveform};
use crate::error::{Error, Result};
use crate::par;

/// Supplies the waveform for an utterance.
pub trait AudioSource: Send + Sync {
    fn load(&self, utterance: &Utterance) -> Result<Waveform>;
}

/// Reads `audio` paths from disk, relative paths resolved against `base_dir`.
#[derive(Debug, Clone)]
pub struct FileAudioSource {
    base_dir: PathBuf,
}

impl FileAudioSource {
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        FileAudioSource {
            base_dir: base_dir.into(),
        }
    }
}

impl AudioSource for FileAudioSource {
    fn load(&self, u: &Utterance) -> Result<Waveform> {
        let rel = u
            .audio_ref
            .as_deref()
            .ok_or_else(|| Error::Audio(format!("utterance {:?} has no audio", u.id)))?;
        dsp::read_audio(&self.base_dir.join(rel))
    }
}

/// Waveforms held in memory, keyed by utterance id.
#[derive(Debug, Clone, Default)]
pub struct InMemoryAudio {
    waves: HashMap<String, Waveform>,
}

impl InMemoryAudio {
    pub fn new(waves: HashMap<String, Waveform>) -> Self {
        InMemoryAudio { waves }
    }

    pub fn insert(&mut self, id: impl Into<String>, wave: Waveform) {
        self.waves.insert(id.into(), wave);
    }
}

impl AudioSource for InMemoryAudio {
    fn load(&self, u: &Utterance) -> Result<Waveform> {
        self.waves
            .get(&u.id)
            .cloned()
            .ok_or_else(|| Error::Audio(format!("no audio for utterance {:?}", u.id)))
    }
}

/// Row-major `[n × frames × bins]` model inputs with their utterance ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f64>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_len(&self) -> usize {
        self.frames * self.bins
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.row_len()..(i + 1) * self.row_len()]
    }

    /// Concatenated rows for the given indices.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.row_len());
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Subset in the order of `ids`; unknown ids are an error.
    pub fn subset(&self, ids: &[String]) -> Result<FeatureSet> {
        let lookup: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let idx = ids
            .iter()
            .map(|id| {
                lookup
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Training(format!("no features for utterance {id:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            ids: ids.to_vec(),
            frames: self.frames,
            bins: self.bins,
            values: self.gather(&idx),
        })
    }

    pub fn normalized(&self, stats: &FeatureStats) -> FeatureSet {
        let mut out = self.clone();
        for row in out.values.chunks_mut(self.bins) {
            for (b, v) in row.iter_mut().enumerate() {
                *v = (*v - stats.mean[b]) / stats.std[b];
            }
        }
        out
    }

    /// Per-bin statistics over every frame of every row.
    pub fn stats(&self) -> Result<FeatureStats> {
        if self.is_empty() {
            return Err(Error::Training("no features to fit statistics on".into()));
        }
        let mut sum = vec![0.0; self.bins];
        let mut sq = vec![0.0; self.bins];
        for frame in self.values.chunks(self.bins) {
            for (b, v) in frame.iter().enumerate() {
                sum[b] += v;
                sq[b] += v * v;
            }
        }
        let n = (self.values.len() / self.bins) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(FeatureStats { mean, std })
    }
}

/// Log-mel features, cropped or padded to `frames`, for every utterance
/// whose audio loads. Utterances that fail are returned with the reason.
pub fn extract_features(
    utterances: &[&Utterance],
    audio: &dyn AudioSource,
    extractor: &MelExtractor,
    frames: usize,
) -> (FeatureSet, Vec<(String, String)>) {
    let results = par::map(utterances, |u| {
        audio
            .load(u)
            .and_then(|w| extractor.log_mel(&w))
            .map(|m| fix_length(&m, frames).values().to_vec())
    });
    let mut set = FeatureSet {
        ids: Vec::new(),
        frames,
        bins: extractor.config().num_bins,
        values: Vec::new(),
    };
    let mut missing = Vec::new();
    for (u, r) in utterances.iter().zip(results) {
        match r {
            Ok(v) => {
                set.ids.push(u.id.clone());
                set.values.extend(v);
            }
            Err(e) => missing.push((u.id.clone(), e.to_string())),
        }
    }
    (set, missing)
}
