//! Synthetic corpora for desk-scale experiments.
//!
//! Each utterance has a text class `c` whose word pool produces the
//! transcript, and an audio class equal to `c` with probability ρ and drawn
//! uniformly from all classes otherwise. The audio is the audio class's tone
//! plus white noise, and the ground-truth label is the audio class.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_manifest, Corpus, Taxonomy, Utterance};
use crate::dsp::{write_wav, Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};
use crate::features::InMemoryAudio;
use crate::labeler::{tokenize, write_lexicon, Lexicon};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClass {
    pub label: String,
    pub words: Vec<String>,
    pub tone_hz: f64,
    /// Standard deviation of the additive white noise.
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub taxonomy_name: String,
    pub classes: Vec<SynthClass>,
    pub num_utterances: usize,
    /// Content-prosody correlation ρ.
    pub rho: f64,
    pub duration_s: f64,
    pub tone_amplitude: f64,
    pub words_per_utterance: usize,
    /// Zero leaves speakers unset.
    #[serde(default)]
    pub num_speakers: usize,
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
    pub seed: u64,
}

fn default_id_prefix() -> String {
    "utt".into()
}

/// Log-spaced tones over 300-2400 Hz, eight pseudo-words per class.
impl SynthSpec {
    pub fn standard<S: AsRef<str>>(labels: &[S], num_utterances: usize, rho: f64, seed: u64) -> Self {
        let k = labels.len();
        let classes = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let stem: String = l.as_ref().chars().filter(|c| c.is_alphanumeric()).collect();
                let t = if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 };
                SynthClass {
                    label: l.as_ref().to_string(),
                    words: (0..8).map(|j| format!("{stem}x{j}")).collect(),
                    tone_hz: 300.0 * 8f64.powf(t),
                    noise_std: 0.2,
                }
            })
            .collect();
        SynthSpec {
            taxonomy_name: "synth".into(),
            classes,
            num_utterances,
            rho,
            duration_s: 0.5,
            tone_amplitude: 0.05,
            words_per_utterance: 6,
            num_speakers: 0,
            id_prefix: default_id_prefix(),
            seed,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SynthSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SynthSpec(m));
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must be in [0, 1], got {}", self.rho));
        }
        if self.classes.len() < 2 {
            return bad("at least two classes are required".into());
        }
        if self.num_utterances == 0 || self.words_per_utterance == 0 {
            return bad("num_utterances and words_per_utterance must be positive".into());
        }
        if !(self.duration_s >= 0.032 && self.duration_s.is_finite()) {
            return bad(format!("duration_s {} is shorter than one frame", self.duration_s));
        }
        if !(self.tone_amplitude > 0.0 && self.tone_amplitude <= 1.0) {
            return bad(format!("tone_amplitude must be in (0, 1], got {}", self.tone_amplitude));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if c.words.is_empty() {
                return bad(format!("class {:?} has an empty word pool", c.label));
            }
            for w in &c.words {
                if tokenize(w) != [w.to_lowercase()] {
                    return bad(format!("pool word {w:?} is not a single token"));
                }
                if !seen.insert(w.to_lowercase()) {
                    return bad(format!("word {w:?} appears in more than one pool"));
                }
            }
            if !(60.0..=3600.0).contains(&c.tone_hz) {
                return bad(format!("tone {} Hz outside [60, 3600]", c.tone_hz));
            }
            if !(c.noise_std >= 0.0 && c.noise_std.is_finite()) {
                return bad(format!("noise_std must be nonnegative, got {}", c.noise_std));
            }
        }
        self.taxonomy().map(|_| ())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy> {
        let labels: Vec<&str> = self.classes.iter().map(|c| c.label.as_str()).collect();
        Taxonomy::new(self.taxonomy_name.clone(), &labels)
    }

    /// Every pool word mapped to its class label with weight 1.
    pub fn lexicon(&self) -> Result<Lexicon> {
        let taxonomy = self.taxonomy()?;
        let mut lex = Lexicon::new();
        for (c, label) in self.classes.iter().zip(taxonomy.labels()) {
            for w in &c.words {
                lex.entry(w.to_lowercase()).or_default().insert(label.clone(), 1.0);
            }
        }
        Ok(lex)
    }
}

/// One generated utterance before serialization.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub utterance: Utterance,
    pub text_class: usize,
    pub audio_class: usize,
    pub wave: Waveform,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub audio: InMemoryAudio,
    pub lexicon: Lexicon,
    pub text_classes: Vec<usize>,
    pub audio_classes: Vec<usize>,
}

fn generate_one(spec: &SynthSpec, taxonomy: &Taxonomy, i: usize) -> Result<SynthUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64);
    let k = spec.classes.len();
    let text_class = rng.random_range(0..k);
    let audio_class = if rng.random::<f64>() < spec.rho {
        text_class
    } else {
        rng.random_range(0..k)
    };
    let pool = &spec.classes[text_class].words;
    let words: Vec<&str> = (0..spec.words_per_utterance)
        .map(|_| pool[rng.random_range(0..pool.len())].as_str())
        .collect();

    let class = &spec.classes[audio_class];
    let n = (spec.duration_s * SAMPLE_RATE_HZ as f64).round() as usize;
    let phase = rng.random_range(0.0..2.0 * PI);
    let w = 2.0 * PI * class.tone_hz / SAMPLE_RATE_HZ as f64;
    // uniform noise with the requested standard deviation
    let half_width = class.noise_std * 3f64.sqrt();
    let samples: Vec<f64> = (0..n)
        .map(|t| {
            let noise = if half_width > 0.0 {
                rng.random_range(-half_width..=half_width)
            } else {
                0.0
            };
            (spec.tone_amplitude * (w * t as f64 + phase).sin() + noise).clamp(-1.0, 1.0)
        })
        .collect();
    let wave = Waveform::new(samples, SAMPLE_RATE_HZ)?;

    let id = format!("{}{:06}", spec.id_prefix, i);
    let mut u = Utterance::new(id.clone(), words.join(" ")).with_label(&taxonomy.labels()[audio_class]);
    u.audio_ref = Some(format!("audio/{id}.wav"));
    u.duration_s = Some(n as f64 / SAMPLE_RATE_HZ as f64);
    if spec.num_speakers > 0 {
        u.speaker_id = Some(format!("spk{:03}", rng.random_range(0..spec.num_speakers)));
    }
    Ok(SynthUtterance {
        utterance: u,
        text_class,
        audio_class,
        wave,
    })
}

/// Generates the corpus in memory. Deterministic given the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let taxonomy = spec.taxonomy()?;
    let items = par::try_map(&(0..spec.num_utterances).collect::<Vec<_>>(), |&i| {
        generate_one(spec, &taxonomy, i)
    })?;
    let mut audio = InMemoryAudio::default();
    let mut utterances = Vec::with_capacity(items.len());
    let mut text_classes = Vec::with_capacity(items.len());
    let mut audio_classes = Vec::with_capacity(items.len());
    for it in items {
        audio.insert(it.utterance.id.clone(), it.wave);
        text_classes.push(it.text_class);
        audio_classes.push(it.audio_class);
        utterances.push(it.utterance);
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(utterances, Some(taxonomy))?,
        audio,
        lexicon: spec.lexicon()?,
        text_classes,
        audio_classes,
    })
}

/// Writes `manifest.jsonl`, its taxonomy sidecar, `lexicon.tsv` and
/// `audio/*.wav` under `out_dir`, and returns the manifest path.
pub fn synth_corpus(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    let generated = generate(spec)?;
    let audio_dir = out_dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| Error::io(&audio_dir, e))?;
    let taxonomy = spec.taxonomy()?;
    par::try_map(generated.corpus.utterances(), |u| {
        let wave = crate::features::AudioSource::load(&generated.audio, u)?;
        write_wav(&out_dir.join(u.audio_ref.as_deref().expect("synth sets audio")), &wave)
    })?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&generated.corpus, &manifest)?;
    taxonomy.write(&crate::corpus::sidecar_taxonomy_path(&manifest))?;
    write_lexicon(&generated.lexicon, &out_dir.join("lexicon.tsv"))?;
    Ok(manifest)
}
