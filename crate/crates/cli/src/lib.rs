//! Subcommands of the `apvg` binary. Each one writes exactly one
//! [`RunManifest`] next to its outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use apvg::adversarial::{train_fhvg, FhvgModel};
use apvg::audiodata::{
    extract_cqt, frame_to_image, generate_toy_dataset, image_to_frame, load_frame, load_real_dataset, read_keypoints, read_wav,
    save_heatmap_png, save_png, write_dataset, write_json, write_keypoints, CqtParams, LoadOptions, PairedSequence, ToyDatasetSpec,
};
use apvg::checkpoint::artifact_id;
use apvg::cvg::{train_cvg, CoarseGenerator};
use apvg::khp::{train_khp, KeypointPredictor};
use apvg::metrics::{evaluate_sequence, pca_csv, pca_plot, pca_trace, EvalReport};
use apvg::pipeline::{generate_sequence, GeneratedSequence};
use apvg::train::{LossCurve, TrainOptions};
use apvg::types::{Frame, KeypointSet};
use apvg::{Error, PipelineConfig, Result, Stage};
use serde::{Deserialize, Serialize};

/// Scalar type used by the command-line pipeline.
pub type Real = f32;

/// Process exit status for an error: 2 invalid input, 3 missing or
/// unusable prerequisite, 4 numerical divergence, 1 anything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingPrerequisite { .. } | Error::ConfigHashMismatch { .. } | Error::Checkpoint { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

/// Record of one command invocation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Checkpoint name to content digest.
    pub checkpoints: BTreeMap<String, String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn start(command: &str, cfg: &PipelineConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            started_unix: now(),
            ..Self::default()
        }
    }

    fn input(&mut self, key: &str, p: &Path) {
        self.inputs.insert(key.into(), p.display().to_string());
    }

    fn output(&mut self, key: &str, p: &Path) {
        self.outputs.insert(key.into(), p.display().to_string());
    }

    fn checkpoint(&mut self, stage: Stage, path: &Path) -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.checkpoints.insert(stage.name().into(), artifact_id(&bytes));
        Ok(())
    }

    /// Stamps the finish time and writes `dir/<file>`.
    pub fn finish(mut self, dir: &Path, file: &str) -> Result<PathBuf> {
        self.finished_unix = now();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(file);
        write_json(&path, &self)?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::decode(path, e))
    }
}

/// Loads `path` (or the defaults) and applies a seed override.
pub fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => apvg::load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The dataset under `data`, or the synthetic dataset described by the config.
pub fn load_data(cfg: &PipelineConfig, data: Option<&Path>) -> Result<Vec<PairedSequence<Real>>> {
    let seqs = match data {
        Some(dir) => {
            let (seqs, report) = load_real_dataset(dir, &LoadOptions::from_config(cfg))?;
            if report.skipped_missing_keypoints > 0 || !report.rejected.is_empty() {
                log::warn!(
                    "{}: {} sequences skipped for missing keypoints, {} rejected",
                    dir.display(),
                    report.skipped_missing_keypoints,
                    report.rejected.len()
                );
            }
            seqs
        }
        None => generate_toy_dataset(&ToyDatasetSpec::from_config(cfg))?,
    };
    if seqs.is_empty() {
        return Err(Error::Empty("no usable sequences".into()));
    }
    Ok(seqs)
}

pub fn cmd_synth_data(cfg: &PipelineConfig, out: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::start("synth-data", cfg);
    let data: Vec<PairedSequence<Real>> = generate_toy_dataset(&ToyDatasetSpec::from_config(cfg))?;
    write_dataset(out, &data, cfg.sample_rate)?;
    manifest.output("dataset", out);
    log::info!("wrote {} sequences to {}", data.len(), out.display());
    manifest.finish(out, "synth-data.manifest.json")
}

fn curve_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(format!("{}_curve.csv", stage.name()))
}

/// Trains one stage; checkpoints and curves go to `cfg.checkpoint_dir`.
pub fn cmd_train(cfg: &PipelineConfig, stage: Stage, data: Option<&Path>, steps: Option<usize>) -> Result<PathBuf> {
    let dir = cfg.checkpoint_dir.clone();
    let ckpt = cfg.checkpoint_path(stage);
    let mut manifest = RunManifest::start(&format!("train {}", stage.name()), cfg);
    // fail on missing prerequisites before spending time on data
    let prior = match stage {
        Stage::Fhvg => Some((
            KeypointPredictor::<Real>::load(cfg, &cfg.checkpoint_path(Stage::Khp))?,
            CoarseGenerator::<Real>::load(cfg, &cfg.checkpoint_path(Stage::Cvg))?,
        )),
        _ => None,
    };
    let seqs = load_data(cfg, data)?;
    if let Some(d) = data {
        manifest.input("data", d);
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let opts = TrainOptions {
        checkpoint: Some(ckpt.clone()),
        steps,
    };
    let curve: LossCurve = match (stage, &prior) {
        (Stage::Khp, _) => train_khp(&seqs, cfg, &opts)?.1,
        (Stage::Cvg, _) => train_cvg(&seqs, cfg, &opts)?.1,
        (Stage::Fhvg, Some((khp, cvg))) => {
            manifest.input("khp", &cfg.checkpoint_path(Stage::Khp));
            manifest.input("cvg", &cfg.checkpoint_path(Stage::Cvg));
            manifest.checkpoint(Stage::Khp, &cfg.checkpoint_path(Stage::Khp))?;
            manifest.checkpoint(Stage::Cvg, &cfg.checkpoint_path(Stage::Cvg))?;
            train_fhvg(&seqs, khp, cvg, cfg, &opts)?.1
        }
        (Stage::Fhvg, None) => unreachable!("prerequisites are loaded above"),
    };
    let csv = curve_path(&dir, stage);
    curve.write_csv(&csv)?;
    manifest.output("checkpoint", &ckpt);
    manifest.output("curve", &csv);
    manifest.checkpoint(stage, &ckpt)?;
    manifest.finish(&dir, &format!("train_{}.manifest.json", stage.name()))
}

/// All three trained stages.
pub struct Models {
    pub khp: KeypointPredictor<Real>,
    pub cvg: CoarseGenerator<Real>,
    pub fhvg: FhvgModel<Real>,
}

impl Models {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            khp: KeypointPredictor::load(cfg, &cfg.checkpoint_path(Stage::Khp))?,
            cvg: CoarseGenerator::load(cfg, &cfg.checkpoint_path(Stage::Cvg))?,
            fhvg: FhvgModel::load(cfg, &cfg.checkpoint_path(Stage::Fhvg))?,
        })
    }

    pub fn generate(&self, cfg: &PipelineConfig, clips: &[apvg::types::AudioClip<Real>], name: &str) -> Result<GeneratedSequence<Real>> {
        generate_sequence(&self.khp, &self.cvg, &self.fhvg.stu, clips, name, cfg.seed)
    }
}

fn record_checkpoints(manifest: &mut RunManifest, cfg: &PipelineConfig) -> Result<()> {
    for stage in [Stage::Khp, Stage::Cvg, Stage::Fhvg] {
        manifest.checkpoint(stage, &cfg.checkpoint_path(stage))?;
    }
    Ok(())
}

fn ensure_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes every intermediate of a generated sequence under `dir`.
pub fn write_generated(dir: &Path, g: &GeneratedSequence<Real>) -> Result<()> {
    let sub = ["frames", "coarse", "heatmaps", "keypoints"].map(|s| dir.join(s));
    for d in &sub {
        ensure_dir(d)?;
    }
    for t in 0..g.frames.len() {
        let name = format!("{t:06}");
        save_png(&sub[0].join(format!("{name}.png")), &g.frames[t])?;
        save_png(&sub[1].join(format!("{name}.png")), &g.coarse[t])?;
        save_heatmap_png(&sub[2].join(format!("{name}.png")), &g.heatmaps[t])?;
        write_keypoints(&sub[3].join(format!("{name}.json")), &g.keypoints[t])?;
    }
    if g.keypoints.len() >= 2 {
        let traces = pca_trace(&g.keypoints)?;
        let csv = dir.join("pca.csv");
        fs::write(&csv, pca_csv(&traces)).map_err(|e| Error::io(&csv, e))?;
        let png = dir.join("pca.png");
        pca_plot(&traces, 512, 384).save(&png).map_err(|e| Error::decode(&png, e))?;
    }
    Ok(())
}

/// What to generate from: one audio file, or every sequence of a dataset.
pub enum GenerateSource<'a> {
    Audio(&'a Path),
    Dataset(Option<&'a Path>),
}

pub fn cmd_generate(cfg: &PipelineConfig, source: GenerateSource<'_>, out: &Path) -> Result<PathBuf> {
    let mut manifest = RunManifest::start("generate", cfg);
    let models = Models::load(cfg)?;
    record_checkpoints(&mut manifest, cfg)?;
    match source {
        GenerateSource::Audio(path) => {
            manifest.input("audio", path);
            let (wave, sr) = read_wav(path)?;
            if sr != cfg.sample_rate {
                return Err(Error::decode(path, format!("sample rate {sr} Hz, expected {} Hz", cfg.sample_rate)));
            }
            let clips = extract_cqt::<Real>(&wave, &CqtParams::from_config(cfg))?;
            let name = path.file_stem().unwrap_or_default().to_string_lossy();
            let g = models.generate(cfg, &clips, &name)?;
            write_generated(out, &g)?;
            log::info!("generated {} frames into {}", g.frames.len(), out.display());
        }
        GenerateSource::Dataset(data) => {
            if let Some(d) = data {
                manifest.input("data", d);
            }
            for seq in load_data(cfg, data)? {
                let g = models.generate(cfg, &seq.clips, &seq.name)?;
                write_generated(&out.join(&seq.name), &g)?;
                log::info!("{}: generated {} frames", seq.name, g.frames.len());
            }
        }
    }
    manifest.output("generated", out);
    manifest.finish(out, "generate.manifest.json")
}

/// Frames as they come back after an 8-bit round trip through disk.
pub fn quantize(f: &Frame<Real>) -> Frame<Real> {
    image_to_frame(&frame_to_image(f))
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    Ok(v)
}

/// Frames and keypoints read back from a `generate` output directory.
type Generated = (Vec<Frame<Real>>, Vec<KeypointSet<Real>>);

fn read_generated(cfg: &PipelineConfig, dir: &Path, instrument: &str) -> Result<Generated> {
    let frames = sorted_files(&dir.join("frames"), "png")?
        .iter()
        .map(|p| load_frame(p, cfg.image_size))
        .collect::<Result<Vec<_>>>()?;
    let keypoints = sorted_files(&dir.join("keypoints"), "json")?
        .iter()
        .map(|p| read_keypoints(p, cfg.keypoint_count, instrument))
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, keypoints))
}

/// Scores generated sequences against a reference dataset. With
/// `generated` the frames are read from a `generate` output directory;
/// otherwise the pipeline runs in memory from the checkpoints.
pub fn cmd_evaluate(cfg: &PipelineConfig, data: Option<&Path>, generated: Option<&Path>, out: &Path) -> Result<(PathBuf, EvalReport)> {
    let mut manifest = RunManifest::start("evaluate", cfg);
    let reference = load_data(cfg, data)?;
    if let Some(d) = data {
        manifest.input("reference", d);
    }
    let mut rows = Vec::with_capacity(reference.len());
    let checkpoints = match generated {
        Some(dir) => {
            manifest.input("generated", dir);
            for seq in &reference {
                let (frames, kps) = read_generated(cfg, &dir.join(&seq.name), &seq.instrument)?;
                if kps.len() != frames.len() {
                    return Err(Error::Misaligned {
                        name: seq.name.clone(),
                        reason: format!("{} generated frames but {} keypoint files", frames.len(), kps.len()),
                    });
                }
                rows.push(evaluate_sequence(&seq.name, &frames, &seq.frames, Some((&kps, &seq.keypoints)))?);
            }
            let m = dir.join("generate.manifest.json");
            if m.is_file() {
                RunManifest::read(&m)?.checkpoints
            } else {
                BTreeMap::new()
            }
        }
        None => {
            let models = Models::load(cfg)?;
            record_checkpoints(&mut manifest, cfg)?;
            for seq in &reference {
                let g = models.generate(cfg, &seq.clips, &seq.name)?;
                let frames: Vec<Frame<Real>> = g.frames.iter().map(quantize).collect();
                rows.push(evaluate_sequence(&seq.name, &frames, &seq.frames, Some((&g.keypoints, &seq.keypoints)))?);
            }
            manifest.checkpoints.clone()
        }
    };
    manifest.checkpoints.clone_from(&checkpoints);
    let report = EvalReport::from_sequences(cfg.config_hash(), checkpoints, rows);
    ensure_dir(out)?;
    let path = out.join("eval_report.json");
    write_json(&path, &report)?;
    manifest.output("report", &path);
    manifest.finish(out, "evaluate.manifest.json")?;
    Ok((path, report))
}
