//! Run configuration: a flat `key = value` TOML file.
//!
//! Only `schema_version` is required; every other key falls back to the
//! default listed in [`PipelineConfig::default`]. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::skeleton::{build_skeleton, Normalization, SkeletonGraph, Topology};

pub const SCHEMA_VERSION: u32 = 1;

/// Which keypoints the refiner is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointSource {
    Real,
    Predicted,
}

fn no_version() -> Option<u32> {
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    #[serde(default = "no_version")]
    pub schema_version: Option<u32>,
    pub seed: u64,
    pub instrument: String,

    // skeleton
    pub keypoint_count: usize,
    pub topology: String,
    pub adjacency_norm: Normalization,

    // frames and audio
    pub image_size: usize,
    pub sample_rate: u32,
    pub hop_length: usize,
    pub cqt_bins: usize,
    pub cqt_hops: usize,
    pub bins_per_octave: usize,
    pub cqt_fmin: f64,

    // landmark heatmaps
    pub heatmap_alpha: f64,
    pub vis_heatmap_size: usize,

    // keypoint predictor
    pub motion_dim: usize,
    pub khp_hidden: usize,
    pub audio_conv_channels: usize,

    // coarse generator
    pub audio_dim: usize,
    pub noise_dim: usize,
    pub resample_noise_per_frame: bool,
    pub cvg_width: usize,

    // refiner
    pub stu_levels: usize,
    pub stu_width: usize,
    pub stu_max_channels: usize,
    pub stu_audio_channels: usize,
    pub gcn_level: usize,
    pub block_size: usize,
    pub gcn_layers: usize,
    pub use_gcn: bool,
    pub use_conv_gru: bool,
    pub stu_train_keypoints: KeypointSource,

    // adversarial and perceptual terms
    pub disc_width: usize,
    pub perceptual_layers: usize,
    pub literal_discriminator_objective: bool,

    // loss weights
    pub lambda_vis: f64,
    pub lambda_adv: f64,
    pub lambda_perc: f64,

    // optimisation
    pub khp_steps: usize,
    pub cvg_steps: usize,
    pub fhvg_steps: usize,
    pub cvg_frames_per_step: usize,
    pub lr_khp: f64,
    pub lr_cvg: f64,
    pub lr_stu: f64,
    pub lr_disc: f64,
    pub grad_clip: f64,
    pub log_every: usize,

    // synthetic data
    pub toy_sequences: usize,
    pub toy_frames: usize,
    pub toy_pitch_low: u8,
    pub toy_pitch_high: u8,

    pub checkpoint_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: Some(SCHEMA_VERSION),
            seed: 7,
            instrument: "cello".into(),
            keypoint_count: 67,
            topology: "openpose67".into(),
            adjacency_norm: Normalization::Symmetric,
            image_size: 256,
            sample_rate: 44_100,
            hop_length: 256,
            cqt_bins: 84,
            cqt_hops: 87,
            bins_per_octave: 12,
            cqt_fmin: 32.703_195_662_574_83,
            heatmap_alpha: 1.0,
            vis_heatmap_size: 64,
            motion_dim: 256,
            khp_hidden: 256,
            audio_conv_channels: 64,
            audio_dim: 256,
            noise_dim: 16,
            resample_noise_per_frame: true,
            cvg_width: 16,
            stu_levels: 5,
            stu_width: 8,
            stu_max_channels: 32,
            stu_audio_channels: 16,
            gcn_level: 3,
            block_size: 3,
            gcn_layers: 2,
            use_gcn: true,
            use_conv_gru: true,
            stu_train_keypoints: KeypointSource::Real,
            disc_width: 8,
            perceptual_layers: 3,
            literal_discriminator_objective: false,
            lambda_vis: 1.0,
            lambda_adv: 1.0,
            lambda_perc: 10.0,
            khp_steps: 2000,
            cvg_steps: 600,
            fhvg_steps: 2000,
            cvg_frames_per_step: 4,
            lr_khp: 1e-3,
            lr_cvg: 2e-3,
            lr_stu: 1e-3,
            lr_disc: 5e-5,
            grad_clip: 5.0,
            log_every: 100,
            toy_sequences: 8,
            toy_frames: 32,
            toy_pitch_low: 48,
            toy_pitch_high: 67,
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

/// Training stages, in pipeline order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Khp,
    Cvg,
    Fhvg,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Khp => "khp",
            Stage::Cvg => "cvg",
            Stage::Fhvg => "fhvg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "khp" => Some(Stage::Khp),
            "cvg" => Some(Stage::Cvg),
            "fhvg" => Some(Stage::Fhvg),
            _ => None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            // serde reports unknown and missing keys by name; keep that text intact
            Error::ConfigParse(msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self.schema_version {
            None => return Err(Error::config("schema_version", "missing required key")),
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::config(
                    "schema_version",
                    format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
                ))
            }
        }
        let positive = [
            ("keypoint_count", self.keypoint_count),
            ("image_size", self.image_size),
            ("sample_rate", self.sample_rate as usize),
            ("hop_length", self.hop_length),
            ("cqt_bins", self.cqt_bins),
            ("cqt_hops", self.cqt_hops),
            ("bins_per_octave", self.bins_per_octave),
            ("vis_heatmap_size", self.vis_heatmap_size),
            ("motion_dim", self.motion_dim),
            ("khp_hidden", self.khp_hidden),
            ("audio_conv_channels", self.audio_conv_channels),
            ("audio_dim", self.audio_dim),
            ("noise_dim", self.noise_dim),
            ("cvg_width", self.cvg_width),
            ("stu_levels", self.stu_levels),
            ("stu_width", self.stu_width),
            ("stu_max_channels", self.stu_max_channels),
            ("stu_audio_channels", self.stu_audio_channels),
            ("gcn_level", self.gcn_level),
            ("block_size", self.block_size),
            ("gcn_layers", self.gcn_layers),
            ("disc_width", self.disc_width),
            ("perceptual_layers", self.perceptual_layers),
            ("cvg_frames_per_step", self.cvg_frames_per_step),
            ("log_every", self.log_every),
            ("toy_sequences", self.toy_sequences),
            ("toy_frames", self.toy_frames),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        let non_negative = [
            ("lambda_vis", self.lambda_vis),
            ("lambda_adv", self.lambda_adv),
            ("lambda_perc", self.lambda_perc),
            ("grad_clip", self.grad_clip),
            ("lr_khp", self.lr_khp),
            ("lr_cvg", self.lr_cvg),
            ("lr_stu", self.lr_stu),
            ("lr_disc", self.lr_disc),
        ];
        for (name, v) in non_negative {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be a finite value >= 0, got {v}")));
            }
        }
        if self.heatmap_alpha.is_nan() || self.heatmap_alpha <= 0.0 {
            return Err(Error::config("heatmap_alpha", "must be > 0"));
        }
        if self.cqt_fmin.is_nan() || self.cqt_fmin <= 0.0 {
            return Err(Error::config("cqt_fmin", "must be > 0"));
        }
        if self.block_size.is_multiple_of(2) {
            return Err(Error::config("block_size", "must be odd"));
        }
        if self.gcn_level > self.stu_levels {
            return Err(Error::config("gcn_level", "must not exceed stu_levels"));
        }
        if !self.image_size.is_multiple_of(1 << self.stu_levels) {
            return Err(Error::config(
                "image_size",
                format!("must be divisible by 2^stu_levels = {}", 1 << self.stu_levels),
            ));
        }
        // the coarse generator downsamples by 16
        if !self.image_size.is_multiple_of(16) {
            return Err(Error::config("image_size", "must be divisible by 16"));
        }
        if self.vis_heatmap_size < 2 {
            return Err(Error::config("vis_heatmap_size", "must be at least 2"));
        }
        if !self.cqt_bins.is_multiple_of(self.bins_per_octave) {
            return Err(Error::config("cqt_bins", "must be a whole number of octaves"));
        }
        let octaves = self.cqt_bins / self.bins_per_octave;
        if !self.hop_length.is_multiple_of(1 << (octaves - 1)) {
            return Err(Error::config(
                "hop_length",
                format!("must be divisible by 2^(octaves-1) = {}", 1 << (octaves - 1)),
            ));
        }
        let top = self.cqt_fmin * 2f64.powf((self.cqt_bins - 1) as f64 / self.bins_per_octave as f64);
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::config("cqt_bins", "highest bin exceeds the Nyquist frequency"));
        }
        if self.toy_pitch_low > self.toy_pitch_high {
            return Err(Error::config("toy_pitch_low", "must not exceed toy_pitch_high"));
        }
        if self.instrument.is_empty() {
            return Err(Error::config("instrument", "must not be empty"));
        }
        self.skeleton()?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology> {
        Topology::parse(&self.topology).ok_or_else(|| {
            Error::config(
                "topology",
                format!("unknown topology `{}` (openpose67, body25, chain)", self.topology),
            )
        })
    }

    pub fn skeleton(&self) -> Result<SkeletonGraph> {
        let topo = self.topology()?;
        let expected = match topo {
            Topology::OpenPose67 => Some(crate::skeleton::OPENPOSE_POINTS),
            Topology::Body25 => Some(crate::skeleton::BODY_POINTS),
            _ => None,
        };
        if let Some(n) = expected {
            if n != self.keypoint_count {
                return Err(Error::config(
                    "keypoint_count",
                    format!("topology `{}` has {n} points, got {}", self.topology, self.keypoint_count),
                ));
            }
        }
        build_skeleton(&topo, self.keypoint_count, self.adjacency_norm)
    }

    pub fn clip_samples(&self) -> usize {
        self.cqt_hops * self.hop_length
    }

    /// Hash of the keys that shape the parameters of `stage` (and the stages it consumes).
    pub fn stage_hash(&self, stage: Stage) -> String {
        let mut keys = vec![
            format!("P={}", self.keypoint_count),
            format!("topology={}", self.topology),
            format!("cqt={}x{}@{}/{}", self.cqt_bins, self.cqt_hops, self.sample_rate, self.hop_length),
            format!("fmin={}", self.cqt_fmin),
            format!("audio_conv={}", self.audio_conv_channels),
        ];
        match stage {
            Stage::Khp => keys.extend([
                format!("motion={}", self.motion_dim),
                format!("hidden={}", self.khp_hidden),
            ]),
            Stage::Cvg => keys.extend([
                format!("image={}", self.image_size),
                format!("audio_dim={}", self.audio_dim),
                format!("noise={}", self.noise_dim),
                format!("cvg_width={}", self.cvg_width),
            ]),
            Stage::Fhvg => keys.extend([
                format!("image={}", self.image_size),
                format!("audio_dim={}", self.audio_dim),
                format!("adjacency={:?}", self.adjacency_norm),
                format!("heatmap={}x{}", self.vis_heatmap_size, self.heatmap_alpha),
                format!(
                    "stu={}x{}/{}/{}",
                    self.stu_levels, self.stu_width, self.stu_max_channels, self.stu_audio_channels
                ),
                format!(
                    "gcn={}/{}/{}/{}",
                    self.gcn_level, self.block_size, self.gcn_layers, self.use_gcn
                ),
                format!("conv_gru={}", self.use_conv_gru),
                format!("disc={}", self.disc_width),
                format!("perc={}", self.perceptual_layers),
            ]),
        }
        let digest = Sha256::digest(keys.join("\n").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Digest of the whole configuration, seed included.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn checkpoint_path(&self, stage: Stage) -> PathBuf {
        self.checkpoint_dir.join(format!("{}.ckpt", stage.name()))
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PipelineConfig::from_toml_str(&text)
}
