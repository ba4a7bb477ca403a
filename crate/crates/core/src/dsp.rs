//! Waveform → log-mel spectrogram.
//!
//! Defaults: 16 kHz audio, 32 ms frames every 25 ms, periodic Hann window,
//! 512-point FFT, 50 peak-normalised triangular filters spaced on the HTK mel
//! scale between 60 Hz and 3600 Hz, natural log of energy plus a 1e-6 floor.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub const SAMPLE_RATE_HZ: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Audio("empty waveform".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Audio("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::Audio(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Linear-interpolation resampling.
    pub fn resample(&self, target_hz: u32) -> Waveform {
        if target_hz == self.sample_rate_hz {
            return self.clone();
        }
        let ratio = self.sample_rate_hz as f64 / target_hz as f64;
        let n_out = ((self.samples.len() as f64) / ratio).floor().max(1.0) as usize;
        let last = self.samples.len() - 1;
        let samples = (0..n_out)
            .map(|i| {
                let pos = i as f64 * ratio;
                let j = (pos.floor() as usize).min(last);
                let frac = pos - j as f64;
                let next = self.samples[(j + 1).min(last)];
                self.samples[j] * (1.0 - frac) + next * frac
            })
            .collect();
        Waveform {
            samples,
            sample_rate_hz: target_hz,
        }
    }
}

/// Reads a PCM WAV file (integer or 32-bit float), averages channels to
/// mono and resamples to 16 kHz.
pub fn read_audio(path: &Path) -> Result<Waveform> {
    let mut reader =
        hound::WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let mono: Vec<f64> = interleaved
        .chunks(channels)
        .map(|c| (c.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform::new(mono, spec.sample_rate)?.resample(SAMPLE_RATE_HZ))
}

/// Writes 16-bit mono PCM.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in &wave.samples {
        writer
            .write_sample((s * i16::MAX as f64).round() as i16)
            .map_err(err)?;
    }
    writer.finalize().map_err(err)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub frame_length_ms: f64,
    pub frame_step_ms: f64,
    pub num_bins: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub fft_size: usize,
    pub log_floor: f64,
    /// Per-bin z-normalisation with train-split statistics.
    #[serde(default)]
    pub normalize: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate_hz: SAMPLE_RATE_HZ,
            frame_length_ms: 32.0,
            frame_step_ms: 25.0,
            num_bins: 50,
            fmin_hz: 60.0,
            fmax_hz: 3600.0,
            fft_size: 512,
            log_floor: 1e-6,
            normalize: false,
        }
    }
}

impl MelConfig {
    pub fn frame_length(&self) -> usize {
        (self.frame_length_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_length(&self) -> usize {
        (self.frame_step_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn num_fft_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced for `n` samples, or `None` when `n` is below one frame.
    pub fn num_frames(&self, n: usize) -> Option<usize> {
        let l = self.frame_length();
        (n >= l).then(|| (n - l) / self.hop_length() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if self.sample_rate_hz == 0 || self.frame_length() == 0 || self.hop_length() == 0 {
            return Err(Error::DspConfig("frame length, hop and sample rate must be positive".into()));
        }
        if self.num_bins == 0 {
            return Err(Error::DspConfig("num_bins must be positive".into()));
        }
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return Err(Error::DspConfig(format!(
                "need 0 <= fmin < fmax, got {} and {}",
                self.fmin_hz, self.fmax_hz
            )));
        }
        if self.fmax_hz > nyquist {
            return Err(Error::DspConfig(format!(
                "fmax {} Hz exceeds Nyquist {nyquist} Hz",
                self.fmax_hz
            )));
        }
        if self.fft_size < self.frame_length() {
            return Err(Error::DspConfig(format!(
                "fft_size {} shorter than frame length {}",
                self.fft_size,
                self.frame_length()
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::DspConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Frame `i` covers samples `[i*hop, i*hop + len)`; the trailing remainder is dropped.
pub fn frame_signal<'a>(wave: &'a Waveform, cfg: &MelConfig) -> Result<Vec<&'a [f64]>> {
    let l = cfg.frame_length();
    let h = cfg.hop_length();
    let n = wave.samples.len();
    let count = cfg.num_frames(n).ok_or(Error::TooShort {
        samples: n,
        frame_length: l,
    })?;
    Ok((0..count).map(|i| &wave.samples[i * h..i * h + l]).collect())
}

/// `num_bins + 2` edge frequencies equally spaced on the mel scale.
pub fn mel_edges_hz(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax_hz);
    let step = (hi - lo) / (cfg.num_bins + 1) as f64;
    (0..cfg.num_bins + 2)
        .map(|i| {
            if i == cfg.num_bins + 1 {
                cfg.fmax_hz
            } else if i == 0 {
                cfg.fmin_hz
            } else {
                mel_to_hz(lo + step * i as f64)
            }
        })
        .collect()
}

/// Triangular filters `[num_bins][fft_size/2 + 1]`. Filter `b` rises from
/// edge `b` to a height-1 apex at edge `b+1` and falls to zero at edge `b+2`.
pub fn mel_filterbank(cfg: &MelConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let edges = mel_edges_hz(cfg);
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
    Ok((0..cfg.num_bins)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..cfg.num_fft_bins())
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect())
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    /// Row-major `[num_frames][num_bins]`.
    values: Vec<f64>,
    num_frames: usize,
    num_bins: usize,
    config: MelConfig,
}

impl MelSpectrogram {
    pub fn from_rows(rows: Vec<Vec<f64>>, config: MelConfig) -> Result<Self> {
        let num_bins = config.num_bins;
        if rows.iter().any(|r| r.len() != num_bins) {
            return Err(Error::Shape(format!("every row must have {num_bins} bins")));
        }
        Ok(MelSpectrogram {
            num_frames: rows.len(),
            num_bins,
            values: rows.concat(),
            config,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.num_bins..(frame + 1) * self.num_bins]
    }

    pub fn floor_value(&self) -> f64 {
        self.config.log_floor.ln()
    }
}

/// Reusable extractor holding the window, filterbank and FFT plan.
pub struct MelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Result<Self> {
        let filterbank = mel_filterbank(&config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(MelExtractor {
            window: hann_window(config.frame_length()),
            filterbank,
            fft,
            config,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    /// Power spectrum `|X_k|^2`, `k = 0..=fft_size/2`, of one windowed frame.
    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.config.fft_size];
        for (slot, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
            slot.re = x * w;
        }
        self.fft.process(&mut buf);
        buf[..self.config.num_fft_bins()].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Filterbank energies before the log, `[num_frames][num_bins]`.
    pub fn mel_energies(&self, wave: &Waveform) -> Result<Vec<Vec<f64>>> {
        if wave.sample_rate_hz != self.config.sample_rate_hz {
            return Err(Error::Audio(format!(
                "waveform at {} Hz, extractor expects {} Hz",
                wave.sample_rate_hz, self.config.sample_rate_hz
            )));
        }
        Ok(frame_signal(wave, &self.config)?
            .into_iter()
            .map(|frame| {
                let power = self.power_spectrum(frame);
                self.filterbank
                    .iter()
                    .map(|filter| filter.iter().zip(&power).map(|(w, p)| w * p).sum())
                    .collect()
            })
            .collect())
    }

    pub fn log_mel(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let floor = self.config.log_floor;
        let rows = self
            .mel_energies(wave)?
            .into_iter()
            .map(|r| r.into_iter().map(|e| (e + floor).ln()).collect())
            .collect();
        MelSpectrogram::from_rows(rows, self.config.clone())
    }

    /// Extracts many waveforms, in parallel when enabled; output order matches input.
    pub fn log_mel_batch(&self, waves: &[Waveform]) -> Result<Vec<MelSpectrogram>> {
        par::try_map(waves, |w| self.log_mel(w))
    }
}

pub fn log_mel(wave: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(cfg.clone())?.log_mel(wave)
}

/// Center crop or symmetric pad (with the log floor) to exactly `target_frames`.
/// Odd differences put the extra row at the end.
pub fn fix_length(m: &MelSpectrogram, target_frames: usize) -> MelSpectrogram {
    let target_frames = target_frames.max(1);
    let n = m.num_frames;
    let bins = m.num_bins;
    let values = if n >= target_frames {
        let start = (n - target_frames) / 2;
        m.values[start * bins..(start + target_frames) * bins].to_vec()
    } else {
        let before = (target_frames - n) / 2;
        let after = target_frames - n - before;
        let pad = m.floor_value();
        let mut v = Vec::with_capacity(target_frames * bins);
        v.resize(before * bins, pad);
        v.extend_from_slice(&m.values);
        v.resize(v.len() + after * bins, pad);
        v
    };
    MelSpectrogram {
        values,
        num_frames: target_frames,
        num_bins: bins,
        config: m.config.clone(),
    }
}

/// Per-bin mean and standard deviation over a set of spectrograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(specs: &[MelSpectrogram]) -> Result<Self> {
        let bins = specs
            .first()
            .ok_or_else(|| Error::Shape("no spectrograms to fit statistics on".into()))?
            .num_bins;
        let mut sum = vec![0.0; bins];
        let mut sq = vec![0.0; bins];
        let mut count = 0usize;
        for s in specs {
            for f in 0..s.num_frames {
                for (b, v) in s.row(f).iter().enumerate() {
                    sum[b] += v;
                    sq[b] += v * v;
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(FeatureStats { mean, std })
    }

    pub fn apply(&self, m: &MelSpectrogram) -> MelSpectrogram {
        let mut out = m.clone();
        for f in 0..out.num_frames {
            for b in 0..out.num_bins {
                let v = &mut out.values[f * out.num_bins + b];
                *v = (*v - self.mean[b]) / self.std[b];
            }
        }
        out
    }
}
