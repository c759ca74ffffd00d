//! Composition of the three stages into audio-to-video generation.

use apvg_tensor::{Scalar, Tensor};

use crate::cvg::CoarseGenerator;
use crate::error::Result;
use crate::khp::KeypointPredictor;
use crate::stu::Stu;
use crate::types::{AudioClip, Frame, Heatmap, KeypointSet};

/// Coarse frames for a named sequence, seeded from the mean frame with
/// noise drawn from a stream keyed by `name`.
pub fn coarse_video<T: Scalar>(cvg: &CoarseGenerator<T>, clips: &[AudioClip<T>], name: &str, seed: u64) -> Result<Vec<Frame<T>>> {
    let noise = cvg.rollout_noise(clips.len(), seed, &format!("seq/{name}"));
    cvg.cvg_rollout(clips, &cvg.mean_frame, &noise)
}

/// Every intermediate product of one generated sequence.
#[derive(Clone, Debug)]
pub struct GeneratedSequence<T> {
    pub keypoints: Vec<KeypointSet<T>>,
    pub heatmaps: Vec<Heatmap<T>>,
    pub coarse: Vec<Frame<T>>,
    pub audio: Vec<Tensor<T>>,
    pub frames: Vec<Frame<T>>,
}

pub fn generate_sequence<T: Scalar>(
    khp: &KeypointPredictor<T>,
    cvg: &CoarseGenerator<T>,
    stu: &Stu<T>,
    clips: &[AudioClip<T>],
    name: &str,
    seed: u64,
) -> Result<GeneratedSequence<T>> {
    let keypoints = khp.predict_keypoints(clips)?;
    let heatmaps: Vec<Heatmap<T>> = keypoints.iter().map(|k| stu.render_heatmap(k)).collect();
    let coarse = coarse_video(cvg, clips, name, seed)?;
    let audio = cvg.encode_audio_sequence(clips)?;
    let frames = stu.stu_generate(&coarse, &heatmaps, &keypoints, &audio)?;
    Ok(GeneratedSequence {
        keypoints,
        heatmaps,
        coarse,
        audio,
        frames,
    })
}
