//! On-disk dataset layout, one folder per sequence:
//!
//! ```text
//! root/seq_000/meta.json          {"instrument": "cello"}   (optional)
//! root/seq_000/audio.wav
//! root/seq_000/frames/000000.png  (any image format the decoder knows)
//! root/seq_000/keypoints/000000.json   [[x, y], ...] normalized
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use apvg_tensor::{Scalar, Tensor};
use image::imageops::FilterType;
use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::audiodata::cqt::{extract_cqt, CqtParams};
use crate::audiodata::PairedSequence;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::types::{Frame, Heatmap, KeypointSet};

const IMAGE_EXTS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Serialize, Deserialize, Default)]
struct Meta {
    #[serde(default)]
    instrument: Option<String>,
}

/// What `load_real_dataset` needs to know about the expected data.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub image_size: usize,
    pub keypoint_count: usize,
    pub cqt: CqtParams,
    pub default_instrument: String,
}

impl LoadOptions {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        Self {
            image_size: cfg.image_size,
            keypoint_count: cfg.keypoint_count,
            cqt: CqtParams::from_config(cfg),
            default_instrument: cfg.instrument.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub struct LoadReport {
    /// Sequences skipped because a frame had no keypoint file.
    pub skipped_missing_keypoints: usize,
    pub rejected: Vec<(String, Error)>,
}

pub fn write_dataset<T: Scalar>(root: &Path, data: &[PairedSequence<T>], sample_rate: u32) -> Result<()> {
    for seq in data {
        let dir = root.join(&seq.name);
        let frames_dir = dir.join("frames");
        let kp_dir = dir.join("keypoints");
        for d in [&frames_dir, &kp_dir] {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let meta = Meta {
            instrument: Some(seq.instrument.clone()),
        };
        write_json(&dir.join("meta.json"), &meta)?;
        if let Some(wave) = &seq.waveform {
            write_wav(&dir.join("audio.wav"), wave, sample_rate)?;
        }
        for (t, (frame, kp)) in seq.frames.iter().zip(&seq.keypoints).enumerate() {
            save_png(&frames_dir.join(format!("{t:06}.png")), frame)?;
            write_keypoints(&kp_dir.join(format!("{t:06}.json")), kp)?;
        }
    }
    Ok(())
}

/// Writes keypoints as a JSON list of normalized `[x, y]` pairs.
pub fn write_keypoints<T: Scalar>(path: &Path, kp: &KeypointSet<T>) -> Result<()> {
    let pts: Vec<[f64; 2]> = kp
        .coords()
        .iter()
        .map(|c| [c[0].to_f64().unwrap(), c[1].to_f64().unwrap()])
        .collect();
    write_json(path, &pts)
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::decode(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::decode(path, e))?;
    for &s in samples {
        w.write_sample(s).map_err(|e| Error::decode(path, e))?;
    }
    w.finalize().map_err(|e| Error::decode(path, e))
}

/// Mono samples (channels averaged) and the file's sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut r = hound::WavReader::open(path).map_err(|e| Error::decode(path, e))?;
    let spec = r.spec();
    let raw: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| Error::decode(path, e))?;
    let ch = spec.channels.max(1) as usize;
    let mono = raw
        .chunks(ch)
        .map(|c| c.iter().sum::<f32>() / ch as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

pub fn frame_to_image<T: Scalar>(frame: &Frame<T>) -> RgbImage {
    let (h, w) = (frame.height(), frame.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (frame.at(y as usize, x as usize, c).to_f64().unwrap() * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn save_png<T: Scalar>(path: &Path, frame: &Frame<T>) -> Result<()> {
    frame_to_image(frame)
        .save(path)
        .map_err(|e| Error::decode(path, e))
}

/// Grayscale rendering of a heatmap, `alpha` mapped to white.
pub fn heatmap_to_image<T: Scalar>(h: &Heatmap<T>) -> GrayImage {
    let alpha = h.alpha.to_f64().unwrap().max(f64::MIN_POSITIVE);
    GrayImage::from_fn(h.width as u32, h.height as u32, |x, y| {
        let v = h.get(x as usize, y as usize).to_f64().unwrap() / alpha;
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn save_heatmap_png<T: Scalar>(path: &Path, h: &Heatmap<T>) -> Result<()> {
    heatmap_to_image(h).save(path).map_err(|e| Error::decode(path, e))
}

/// Center-crops to a square, then resizes to `size`×`size`.
pub fn square_resize(img: &RgbImage, size: usize) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    }
}

pub fn image_to_frame<T: Scalar>(img: &RgbImage) -> Frame<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![T::zero(); 3 * w * h];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * w * h + y as usize * w + x as usize] = T::from_f64(p[c] as f64 / 255.0).unwrap();
        }
    }
    Frame::new(Tensor::from_vec(&[3, h, w], data)).expect("8-bit pixels are in range")
}

pub fn load_frame<T: Scalar>(path: &Path, size: usize) -> Result<Frame<T>> {
    let img = image::open(path).map_err(|e| Error::decode(path, e))?.to_rgb8();
    Ok(image_to_frame(&square_resize(&img, size)))
}

pub fn read_keypoints<T: Scalar>(path: &Path, expected: usize, instrument: &str) -> Result<KeypointSet<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let pts: Vec<[f64; 2]> = serde_json::from_str(&text).map_err(|e| Error::decode(path, e))?;
    if pts.len() != expected {
        return Err(Error::KeypointCount {
            path: path.to_path_buf(),
            found: pts.len(),
            expected,
        });
    }
    let coords = pts
        .iter()
        .map(|c| [T::from_f64(c[0]).unwrap(), T::from_f64(c[1]).unwrap()])
        .collect();
    KeypointSet::new(coords, instrument)
}

fn sorted_entries(dir: &Path, keep: impl Fn(&Path) -> bool) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| keep(p))
        .collect();
    out.sort();
    Ok(out)
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.contains(&e.to_ascii_lowercase().as_str()))
}

enum Outcome<T> {
    Loaded(PairedSequence<T>),
    MissingKeypoints,
}

fn load_sequence<T: Scalar>(dir: &Path, opts: &LoadOptions) -> Result<Outcome<T>> {
    let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let meta: Meta = match fs::read_to_string(dir.join("meta.json")) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| Error::decode(dir.join("meta.json"), e))?,
        Err(_) => Meta::default(),
    };
    let instrument = meta.instrument.unwrap_or_else(|| opts.default_instrument.clone());

    let frame_paths = sorted_entries(&dir.join("frames"), |p| has_ext(p, &IMAGE_EXTS))?;
    let kp_dir = dir.join("keypoints");
    let kp_paths: Vec<PathBuf> = frame_paths
        .iter()
        .map(|f| kp_dir.join(f.with_extension("json").file_name().unwrap()))
        .collect();
    if kp_paths.iter().any(|p| !p.is_file()) {
        return Ok(Outcome::MissingKeypoints);
    }
    let kp_total = sorted_entries(&kp_dir, |p| has_ext(p, &["json"]))?.len();
    if kp_total != frame_paths.len() {
        return Err(Error::Misaligned {
            name,
            reason: format!("{} frames but {kp_total} keypoint files", frame_paths.len()),
        });
    }

    let audio = sorted_entries(dir, |p| p.is_file() && has_ext(p, &["wav"]))?;
    let audio = audio.first().ok_or_else(|| Error::Misaligned {
        name: name.clone(),
        reason: "no audio file".into(),
    })?;
    let (wave, sr) = read_wav(audio)?;
    if sr != opts.cqt.sample_rate {
        return Err(Error::decode(
            audio,
            format!("sample rate {sr} Hz, expected {} Hz", opts.cqt.sample_rate),
        ));
    }
    let mut clips = extract_cqt::<T>(&wave, &opts.cqt)?;
    let n = frame_paths.len();
    if clips.len() < n {
        return Err(Error::Misaligned {
            name,
            reason: format!("{n} frames but audio covers only {} clips", clips.len()),
        });
    }
    clips.truncate(n);

    let frames = frame_paths
        .iter()
        .map(|p| load_frame(p, opts.image_size))
        .collect::<Result<Vec<_>>>()?;
    let keypoints = kp_paths
        .iter()
        .map(|p| read_keypoints(p, opts.keypoint_count, &instrument))
        .collect::<Result<Vec<_>>>()?;
    let mut seq = PairedSequence::new(name, instrument, clips, frames, keypoints)?;
    seq.waveform = Some(wave);
    Ok(Outcome::Loaded(seq))
}

/// Loads every sequence folder under `root`. Bad sequences are reported, not fatal.
pub fn load_real_dataset<T: Scalar>(root: &Path, opts: &LoadOptions) -> Result<(Vec<PairedSequence<T>>, LoadReport)> {
    let dirs = sorted_entries(root, |p| p.is_dir())?;
    let mut report = LoadReport::default();
    let mut out = Vec::new();
    for dir in dirs {
        match load_sequence(&dir, opts) {
            Ok(Outcome::Loaded(seq)) => out.push(seq),
            Ok(Outcome::MissingKeypoints) => {
                log::warn!("{}: missing keypoint files, sequence skipped", dir.display());
                report.skipped_missing_keypoints += 1;
            }
            Err(e) => {
                log::warn!("{}: {e}", dir.display());
                report
                    .rejected
                    .push((dir.file_name().unwrap_or_default().to_string_lossy().into_owned(), e));
            }
        }
    }
    Ok((out, report))
}
