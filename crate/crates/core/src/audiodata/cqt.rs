//! Constant-Q magnitude features computed octave by octave on a
//! successively half-band-decimated signal.

use std::f64::consts::PI;

use apvg_tensor::{Scalar, Tensor};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::types::AudioClip;

/// Floor added before the logarithm; silence maps to `ln(LOG_FLOOR)` everywhere.
pub const LOG_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CqtParams {
    pub sample_rate: u32,
    pub hop_length: usize,
    pub bins: usize,
    pub bins_per_octave: usize,
    pub fmin: f64,
    /// Hop frames per emitted clip.
    pub clip_hops: usize,
}

impl Default for CqtParams {
    fn default() -> Self {
        Self::from_config(&PipelineConfig::default())
    }
}

impl CqtParams {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            sample_rate: cfg.sample_rate,
            hop_length: cfg.hop_length,
            bins: cfg.cqt_bins,
            bins_per_octave: cfg.bins_per_octave,
            fmin: cfg.cqt_fmin,
            clip_hops: cfg.cqt_hops,
        }
    }

    pub fn clip_samples(&self) -> usize {
        self.clip_hops * self.hop_length
    }

    pub fn octaves(&self) -> usize {
        self.bins.div_ceil(self.bins_per_octave)
    }

    pub fn bin_frequency(&self, bin: usize) -> f64 {
        self.fmin * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    /// Number of whole clips `samples` of audio yields.
    pub fn clip_count(&self, samples: usize) -> usize {
        (samples / self.hop_length) / self.clip_hops
    }
}

struct Kernel {
    re: Vec<f64>,
    im: Vec<f64>,
}

fn kernel(freq: f64, sr: f64, q: f64) -> Kernel {
    let mut len = (q * sr / freq).ceil() as usize;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let half = (len / 2) as f64;
    let window: Vec<f64> = (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * (n as f64 + 0.5) / len as f64).cos())
        .collect();
    let norm: f64 = window.iter().sum();
    let (mut re, mut im) = (Vec::with_capacity(len), Vec::with_capacity(len));
    for (n, w) in window.iter().enumerate() {
        let phase = -2.0 * PI * freq * (n as f64 - half) / sr;
        re.push(w * phase.cos() / norm);
        im.push(w * phase.sin() / norm);
    }
    Kernel { re, im }
}

/// Zero-phase windowed-sinc low-pass followed by keeping every second sample.
fn decimate(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let n = x.len() / 2;
    (0..n)
        .map(|i| {
            let c = 2 * i as isize;
            let mut acc = 0.0;
            for (k, &h) in taps.iter().enumerate() {
                let idx = c + k as isize - half;
                if idx >= 0 && (idx as usize) < x.len() {
                    acc += h * x[idx as usize];
                }
            }
            acc
        })
        .collect()
}

fn lowpass_taps() -> Vec<f64> {
    const N: usize = 63;
    const CUTOFF: f64 = 0.2; // cycles per input sample
    let m = (N - 1) as f64;
    let mut taps: Vec<f64> = (0..N)
        .map(|n| {
            let t = n as f64 - m / 2.0;
            let sinc = if t == 0.0 {
                2.0 * CUTOFF
            } else {
                (2.0 * PI * CUTOFF * t).sin() / (PI * t)
            };
            let w = 0.42 - 0.5 * (2.0 * PI * n as f64 / m).cos() + 0.08 * (4.0 * PI * n as f64 / m).cos();
            sinc * w
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Log-magnitude CQT of `hops` frames centred at `t * hop_length`: `[bins, hops]`, row-major.
pub fn cqt_log_magnitude(waveform: &[f32], p: &CqtParams, hops: usize) -> Vec<f64> {
    let octaves = p.octaves();
    assert!(
        p.hop_length.is_multiple_of(1 << (octaves - 1)),
        "hop length must survive {} halvings",
        octaves - 1
    );
    let q = 1.0 / (2f64.powf(1.0 / p.bins_per_octave as f64) - 1.0);
    let taps = lowpass_taps();
    let mut out = vec![0.0; p.bins * hops];
    let mut signal: Vec<f64> = waveform.iter().map(|&s| s as f64).collect();
    for o in 0..octaves {
        if o > 0 {
            signal = decimate(&signal, &taps);
        }
        let sr = p.sample_rate as f64 / (1u64 << o) as f64;
        let hop = p.hop_length >> o;
        let hi = p.bins.saturating_sub(o * p.bins_per_octave);
        let lo = hi.saturating_sub(p.bins_per_octave);
        for bin in lo..hi {
            let k = kernel(p.bin_frequency(bin), sr, q);
            let half = (k.re.len() / 2) as isize;
            for t in 0..hops {
                let start = (t * hop) as isize - half;
                let (mut re, mut im) = (0.0, 0.0);
                let n0 = (-start).max(0) as usize;
                let n1 = ((signal.len() as isize - start).max(0) as usize).min(k.re.len());
                for n in n0..n1 {
                    let s = signal[(start + n as isize) as usize];
                    re += s * k.re[n];
                    im += s * k.im[n];
                }
                out[bin * hops + t] = ((re * re + im * im).sqrt() + LOG_FLOOR).ln();
            }
        }
    }
    out
}

/// Splits the waveform's CQT into consecutive non-overlapping clips of `clip_hops` frames.
pub fn extract_cqt<T: Scalar>(waveform: &[f32], p: &CqtParams) -> Result<Vec<AudioClip<T>>> {
    let clips = p.clip_count(waveform.len());
    if clips == 0 {
        return Err(Error::InsufficientAudio {
            samples: waveform.len(),
            needed: p.clip_samples(),
        });
    }
    let hops = clips * p.clip_hops;
    let spec = cqt_log_magnitude(waveform, p, hops);
    (0..clips)
        .map(|c| {
            let mut data = Vec::with_capacity(p.bins * p.clip_hops);
            for b in 0..p.bins {
                let row = &spec[b * hops + c * p.clip_hops..b * hops + (c + 1) * p.clip_hops];
                data.extend(row.iter().map(|&v| T::from_f64(v).unwrap()));
            }
            AudioClip::new(Tensor::from_vec(&[p.bins, p.clip_hops], data), p.sample_rate, p.hop_length)
        })
        .collect()
}
