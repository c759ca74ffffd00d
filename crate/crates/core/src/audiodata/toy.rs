//! Synthetic "toy performer": a pitch curve drives both the audio (a sum of
//! harmonics) and a deterministic pose, which is rasterised as a stick
//! figure. Equal pitch means equal keypoints means identical frames.

use std::f64::consts::PI;

use apvg_tensor::{Scalar, Tensor};
use rand::Rng;

use crate::audiodata::cqt::{extract_cqt, CqtParams};
use crate::audiodata::PairedSequence;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::{
    hand_edges, BODY25_EDGES, BODY_POINTS, HAND_POINTS, LEFT_HAND_OFFSET, LEFT_WRIST, OPENPOSE_POINTS,
    RIGHT_HAND_OFFSET, RIGHT_WRIST,
};
use crate::types::{Frame, KeypointSet};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderStyle {
    pub background: [f64; 3],
    pub body: [f64; 3],
    pub hand: [f64; 3],
    pub head: [f64; 3],
    /// Radii as fractions of the image size.
    pub limb_radius: f64,
    pub joint_radius: f64,
    pub finger_radius: f64,
    pub head_radius: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            background: [0.93, 0.91, 0.86],
            body: [0.22, 0.32, 0.58],
            hand: [0.72, 0.36, 0.24],
            head: [0.86, 0.70, 0.56],
            limb_radius: 0.011,
            joint_radius: 0.015,
            finger_radius: 0.005,
            head_radius: 0.055,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDatasetSpec {
    pub sequences: usize,
    pub frames: usize,
    /// Inclusive MIDI note range of the pitch curve.
    pub pitch_low: u8,
    pub pitch_high: u8,
    pub keypoint_count: usize,
    pub image_size: usize,
    pub style: RenderStyle,
    pub instrument: String,
    pub cqt: CqtParams,
    pub seed: u64,
}

impl ToyDatasetSpec {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            sequences: cfg.toy_sequences,
            frames: cfg.toy_frames,
            pitch_low: cfg.toy_pitch_low,
            pitch_high: cfg.toy_pitch_high,
            keypoint_count: cfg.keypoint_count,
            image_size: cfg.image_size,
            style: RenderStyle::default(),
            instrument: cfg.instrument.clone(),
            cqt: CqtParams::from_config(cfg),
            seed: cfg.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::Config {
            field: field.to_string(),
            reason: reason.to_string(),
        });
        if self.sequences == 0 {
            return bad("toy_sequences", "must be positive");
        }
        if self.frames < 2 {
            return bad("toy_frames", "must be at least 2");
        }
        if self.pitch_low > self.pitch_high {
            return bad("toy_pitch_low", "must not exceed toy_pitch_high");
        }
        if self.keypoint_count != OPENPOSE_POINTS {
            return bad("keypoint_count", "the toy performer uses the 67-point body+hands layout");
        }
        if self.image_size < 16 {
            return bad("image_size", "must be at least 16");
        }
        Ok(())
    }

    fn normalized_pitch(&self, note: u8) -> f64 {
        if self.pitch_high == self.pitch_low {
            0.5
        } else {
            (note - self.pitch_low) as f64 / (self.pitch_high - self.pitch_low) as f64
        }
    }
}

fn polar(origin: [f64; 2], len: f64, angle: f64) -> [f64; 2] {
    [origin[0] + len * angle.cos(), origin[1] + len * angle.sin()]
}

/// Wrist followed by five four-joint fingers fanning around `heading`.
fn hand(wrist: [f64; 2], heading: f64, curl: f64) -> Vec<[f64; 2]> {
    const SEGMENTS: [f64; 4] = [0.016, 0.011, 0.009, 0.007];
    let mut pts = Vec::with_capacity(HAND_POINTS);
    pts.push(wrist);
    for finger in 0..5 {
        let scale = if finger == 0 { 0.85 } else { 1.0 };
        let mut angle = heading + (finger as f64 - 2.0) * 0.38;
        let mut at = wrist;
        for (j, seg) in SEGMENTS.iter().enumerate() {
            if j > 0 {
                angle += curl * 0.45;
            }
            at = polar(at, seg * scale, angle);
            pts.push(at);
        }
    }
    pts
}

/// Keypoints of the performer for normalized pitch `p` in `[0, 1]`.
///
/// The bowing (right) arm swings with pitch, the left hand slides along the
/// fingerboard and its finger curl follows the second harmonic of `p`.
pub fn toy_pose(p: f64) -> Vec<[f64; 2]> {
    #[rustfmt::skip]
    let mut body: [[f64; 2]; BODY_POINTS] = [
        [0.50, 0.20], [0.50, 0.30], [0.40, 0.31], [0.0, 0.0], [0.0, 0.0],
        [0.60, 0.31], [0.68, 0.43], [0.0, 0.0], [0.50, 0.56], [0.44, 0.56],
        [0.36, 0.71], [0.38, 0.88], [0.56, 0.56], [0.64, 0.71], [0.62, 0.88],
        [0.48, 0.18], [0.52, 0.18], [0.46, 0.19], [0.54, 0.19], [0.66, 0.92],
        [0.67, 0.91], [0.61, 0.90], [0.34, 0.92], [0.33, 0.91], [0.39, 0.90],
    ];
    let upper = 1.75 + 0.5 * p;
    let fore = 0.3 - 0.9 * p;
    body[3] = polar(body[2], 0.13, upper);
    body[RIGHT_WRIST] = polar(body[3], 0.12, fore);
    body[LEFT_WRIST] = [0.62 - 0.02 * p, 0.45 - 0.15 * p];

    let mut pts = body.to_vec();
    let curl = 0.5 + 0.4 * (2.0 * PI * 2.0 * p).sin();
    pts.extend(hand(body[LEFT_WRIST], -2.3, curl));
    pts.extend(hand(body[RIGHT_WRIST], fore + 0.2, 0.3));
    debug_assert_eq!(pts.len(), OPENPOSE_POINTS);
    pts
}

/// Composites anti-aliased primitives over a background.
struct Canvas {
    size: usize,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(size: usize, bg: [f64; 3]) -> Self {
        Self {
            size,
            rgb: vec![bg; size * size],
        }
    }

    fn px(&self, p: [f64; 2]) -> [f64; 2] {
        let s = (self.size - 1) as f64;
        [p[0] * s, p[1] * s]
    }

    /// Capsule of radius `r` (pixels) around segment `a`-`b` (normalized).
    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], r: f64, color: [f64; 3]) {
        let (a, b) = (self.px(a), self.px(b));
        let pad = r + 1.0;
        let x0 = (a[0].min(b[0]) - pad).floor().max(0.0) as usize;
        let y0 = (a[1].min(b[1]) - pad).floor().max(0.0) as usize;
        let x1 = ((a[0].max(b[0]) + pad).ceil() as usize).min(self.size - 1);
        let y1 = ((a[1].max(b[1]) + pad).ceil() as usize).min(self.size - 1);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (px, py) = (x as f64, y as f64);
                let t = if len2 > 0.0 {
                    (((px - a[0]) * d[0] + (py - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (cx, cy) = (a[0] + t * d[0], a[1] + t * d[1]);
                let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                let cov = (r + 0.5 - dist).clamp(0.0, 1.0);
                if cov > 0.0 {
                    let dst = &mut self.rgb[y * self.size + x];
                    for c in 0..3 {
                        dst[c] = dst[c] * (1.0 - cov) + color[c] * cov;
                    }
                }
            }
        }
    }

    fn disc(&mut self, c: [f64; 2], r: f64, color: [f64; 3]) {
        self.capsule(c, c, r, color);
    }

    fn into_frame<T: Scalar>(self) -> Frame<T> {
        let n = self.size * self.size;
        let mut data = vec![T::zero(); 3 * n];
        for (i, p) in self.rgb.iter().enumerate() {
            for c in 0..3 {
                data[c * n + i] = T::from_f64(p[c].clamp(0.0, 1.0)).unwrap();
            }
        }
        Frame::new(Tensor::from_vec(&[3, self.size, self.size], data)).expect("canvas values in range")
    }
}

/// Rasterises the 67-point skeleton as a stick figure.
pub fn render_figure<T: Scalar>(points: &[[f64; 2]], size: usize, style: &RenderStyle) -> Frame<T> {
    let s = size as f64;
    let mut canvas = Canvas::new(size, style.background);
    canvas.disc(points[0], style.head_radius * s, style.head);
    for &(a, b) in BODY25_EDGES.iter() {
        if a == 0 || b == 0 || a >= 15 || b >= 15 {
            continue; // face links are covered by the head disc
        }
        canvas.capsule(points[a], points[b], style.limb_radius * s, style.body);
    }
    for (i, &p) in points.iter().enumerate().take(15).skip(1) {
        if i != 0 {
            canvas.disc(p, style.joint_radius * s, style.body);
        }
    }
    for offset in [LEFT_HAND_OFFSET, RIGHT_HAND_OFFSET] {
        for (a, b) in hand_edges() {
            canvas.capsule(points[offset + a], points[offset + b], style.finger_radius * s, style.hand);
        }
    }
    canvas.into_frame()
}

/// Random walk over semitones; each frame holds one note.
fn pitch_curve<R: Rng>(spec: &ToyDatasetSpec, rng: &mut R) -> Vec<u8> {
    let (lo, hi) = (spec.pitch_low as i32, spec.pitch_high as i32);
    let mut note = rng.random_range(lo..=hi);
    (0..spec.frames)
        .map(|_| {
            let out = note as u8;
            if rng.random_bool(0.6) {
                let step = rng.random_range(1..=3) * if rng.random_bool(0.5) { 1 } else { -1 };
                note = (note + step).clamp(lo, hi);
            }
            out
        })
        .collect()
}

fn midi_to_hz(note: u8) -> f64 {
    440.0 * 2f64.powf((note as f64 - 69.0) / 12.0)
}

/// Harmonic tone, one note per clip, with continuous phase.
fn synthesize(notes: &[u8], clip_samples: usize, sr: f64) -> Vec<f32> {
    const HARMONICS: [f64; 4] = [1.0, 0.5, 0.33, 0.25];
    let mut out = Vec::with_capacity(notes.len() * clip_samples);
    let mut phase = 0.0f64;
    for &note in notes {
        let step = 2.0 * PI * midi_to_hz(note) / sr;
        for _ in 0..clip_samples {
            let v: f64 = HARMONICS
                .iter()
                .enumerate()
                .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
                .sum();
            out.push((0.2 * v) as f32);
            phase = (phase + step) % (2.0 * PI);
        }
    }
    out
}

pub fn generate_toy_dataset<T: Scalar>(spec: &ToyDatasetSpec) -> Result<Vec<PairedSequence<T>>> {
    spec.validate()?;
    (0..spec.sequences)
        .map(|s| {
            let mut r = rng::stream(spec.seed, &format!("toy/sequence/{s}"));
            let notes = pitch_curve(spec, &mut r);
            let wave = synthesize(&notes, spec.cqt.clip_samples(), spec.cqt.sample_rate as f64);
            let clips = extract_cqt::<T>(&wave, &spec.cqt)?;
            let mut frames = Vec::with_capacity(notes.len());
            let mut keypoints = Vec::with_capacity(notes.len());
            for &note in &notes {
                let pose = toy_pose(spec.normalized_pitch(note));
                frames.push(render_figure(&pose, spec.image_size, &spec.style));
                let coords = pose
                    .iter()
                    .map(|c| [T::from_f64(c[0]).unwrap(), T::from_f64(c[1]).unwrap()])
                    .collect();
                keypoints.push(KeypointSet::new(coords, spec.instrument.clone())?);
            }
            let mut seq = PairedSequence::new(
                format!("seq_{s:03}"),
                spec.instrument.clone(),
                clips,
                frames,
                keypoints,
            )?;
            seq.waveform = Some(wave);
            Ok(seq)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ToyDatasetSpec {
        let mut cfg = PipelineConfig::default();
        cfg.toy_sequences = 2;
        cfg.toy_frames = 4;
        cfg.image_size = 64;
        ToyDatasetSpec::from_config(&cfg)
    }

    #[test]
    fn poses_stay_in_frame() {
        for k in 0..=20 {
            let pose = toy_pose(k as f64 / 20.0);
            assert_eq!(pose.len(), 67);
            assert!(pose.iter().flatten().all(|&v| (0.02..=0.98).contains(&v)));
        }
    }

    #[test]
    fn shapes_and_determinism() {
        let spec = small_spec();
        let a = generate_toy_dataset::<f32>(&spec).unwrap();
        let b = generate_toy_dataset::<f32>(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for s in &a {
            assert_eq!(s.len(), 4);
            assert_eq!(s.frames[0].tensor().shape(), &[3, 64, 64]);
            assert_eq!((s.clips[0].bins(), s.clips[0].hops()), (84, 87));
        }
    }

    #[test]
    fn constant_pitch_gives_constant_pose_and_frames() {
        let mut spec = small_spec();
        spec.pitch_low = 55;
        spec.pitch_high = 55;
        let data = generate_toy_dataset::<f32>(&spec).unwrap();
        for s in &data {
            for t in 1..s.len() {
                assert_eq!(s.keypoints[t], s.keypoints[0]);
                assert_eq!(s.frames[t], s.frames[0]);
            }
        }
    }

    #[test]
    fn zero_sequences_rejected() {
        let mut spec = small_spec();
        spec.sequences = 0;
        assert!(matches!(
            generate_toy_dataset::<f32>(&spec),
            Err(Error::Config { field, .. }) if field == "toy_sequences"
        ));
    }
}
