//! Audio features, paired audio/frame/keypoint sequences, the synthetic
//! performer dataset and the on-disk dataset layout.

pub mod cqt;
pub mod io;
pub mod toy;

use apvg_tensor::Scalar;

use crate::error::{Error, Result};
use crate::types::{AudioClip, Frame, KeypointSet};

pub use cqt::{extract_cqt, CqtParams};
pub use io::{
    frame_to_image, heatmap_to_image, image_to_frame, load_frame, load_real_dataset, read_keypoints, read_wav, save_heatmap_png, save_png,
    write_dataset, write_json, write_keypoints, write_wav, LoadOptions, LoadReport,
};
pub use toy::{generate_toy_dataset, RenderStyle, ToyDatasetSpec};

/// Index-aligned audio clips, frames and keypoints of one performance.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSequence<T> {
    pub name: String,
    pub instrument: String,
    pub clips: Vec<AudioClip<T>>,
    pub frames: Vec<Frame<T>>,
    pub keypoints: Vec<KeypointSet<T>>,
    /// Raw mono waveform the clips were computed from, when available.
    pub waveform: Option<Vec<f32>>,
}

impl<T: Scalar> PairedSequence<T> {
    pub fn new(
        name: impl Into<String>,
        instrument: impl Into<String>,
        clips: Vec<AudioClip<T>>,
        frames: Vec<Frame<T>>,
        keypoints: Vec<KeypointSet<T>>,
    ) -> Result<Self> {
        let name = name.into();
        let n = clips.len();
        if frames.len() != n || keypoints.len() != n {
            return Err(Error::Misaligned {
                name,
                reason: format!(
                    "{} clips, {} frames, {} keypoint sets",
                    n,
                    frames.len(),
                    keypoints.len()
                ),
            });
        }
        if n < 2 {
            return Err(Error::Misaligned {
                name,
                reason: format!("needs at least 2 steps, got {n}"),
            });
        }
        Ok(Self {
            name,
            instrument: instrument.into(),
            clips,
            frames,
            keypoints,
            waveform: None,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Dataset-wide standardisation of log-CQT values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CqtStats {
    pub mean: f64,
    pub std: f64,
}

impl CqtStats {
    pub fn fit<T: Scalar>(data: &[PairedSequence<T>]) -> Self {
        let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
        for clip in data.iter().flat_map(|q| &q.clips) {
            for &v in clip.cqt().data() {
                let v = v.to_f64().unwrap();
                s += v;
                s2 += v * v;
                n += 1;
            }
        }
        let mean = s / n.max(1) as f64;
        let var = (s2 / n.max(1) as f64 - mean * mean).max(0.0);
        Self {
            mean,
            std: var.sqrt().max(1e-8),
        }
    }

    pub fn apply<T: Scalar>(&self, clip: &AudioClip<T>) -> AudioClip<T> {
        let m = T::from_f64(self.mean).unwrap();
        let inv = T::from_f64(1.0 / self.std).unwrap();
        clip.map(|v| (v - m) * inv)
    }
}
