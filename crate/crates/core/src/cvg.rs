//! Coarse video generation: audio features, the previous frame seen through
//! a frozen image backbone, and a noise vector are decoded into the next
//! frame.

use std::path::Path;

use apvg_tensor::nn::{Conv2d, ConvSpec, GruCell, Init, Linear};
use apvg_tensor::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::audiodata::{CqtStats, PairedSequence};
use crate::checkpoint::Checkpoint;
use crate::config::{PipelineConfig, Stage};
use crate::error::{Error, Result};
use crate::khp::{epoch_order, stats_from_tensor, stats_tensor};
use crate::nets::{zero_row, AudioEncoder};
use crate::rng;
use crate::train::{cosine_lr, LossCurve, Progress, TrainOptions};
use crate::types::{AudioClip, Frame};

/// `(1/n) Σ_t mean|real_t - coarse_t|`.
pub fn cvg_loss<T: Scalar>(real: &[Frame<T>], coarse: &[Frame<T>]) -> Result<T> {
    if real.len() != coarse.len() {
        return Err(Error::Shape(format!("{} real frames vs {} generated", real.len(), coarse.len())));
    }
    if real.is_empty() {
        return Err(Error::Empty("no frames".into()));
    }
    let mut total = T::zero();
    for (a, b) in real.iter().zip(coarse) {
        if a.tensor().shape() != b.tensor().shape() {
            return Err(Error::Shape(format!(
                "frame shapes {:?} and {:?}",
                a.tensor().shape(),
                b.tensor().shape()
            )));
        }
        let s: T = a.tensor().data().iter().zip(b.tensor().data()).map(|(x, y)| (*x - *y).abs()).sum();
        total += s / T::from_usize(a.tensor().numel()).unwrap();
    }
    Ok(total / T::from_usize(real.len()).unwrap())
}

/// Standard normal noise vectors, one per frame or one repeated for the whole sequence.
pub fn sample_noise<T: Scalar, R: Rng + ?Sized>(n: usize, dim: usize, per_frame: bool, rng: &mut R) -> Vec<Vec<T>> {
    let mut draw = || -> Vec<T> {
        (0..dim)
            .map(|_| T::from_f64(rng.sample::<f64, _>(StandardNormal)).unwrap())
            .collect()
    };
    if per_frame {
        (0..n).map(|_| draw()).collect()
    } else {
        let z = draw();
        vec![z; n]
    }
}

/// Pixel-wise mean of all frames.
pub fn mean_frame<T: Scalar>(frames: &[&Frame<T>]) -> Result<Frame<T>> {
    let first = frames.first().ok_or_else(|| Error::Empty("no frames to average".into()))?;
    let mut acc = vec![0.0f64; first.tensor().numel()];
    for f in frames {
        for (a, v) in acc.iter_mut().zip(f.tensor().data()) {
            *a += v.to_f64().unwrap();
        }
    }
    let n = frames.len() as f64;
    let data = acc.into_iter().map(|a| T::from_f64(a / n).unwrap()).collect();
    Frame::from_tensor_clamped(Tensor::from_vec(first.tensor().shape(), data))
}

/// Inverse sigmoid, with the input kept a little inside `(0, 1)`.
pub(crate) fn logit<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let lo = T::from_f64(0.01).unwrap();
    let hi = T::one() - lo;
    t.map(|p| {
        let p = p.max(lo).min(hi);
        (p / (T::one() - p)).ln()
    })
}

/// The decoder predicts a logit offset from the dataset mean frame, so an
/// untrained model reproduces that frame.
pub struct CoarseGenerator<T: Scalar> {
    pub store: ParamStore<T>,
    audio: AudioEncoder,
    audio_gru: GruCell,
    backbone: Vec<Conv2d>,
    image: Vec<Conv2d>,
    fa_proj: Linear,
    z_proj: Linear,
    decoder: Vec<Conv2d>,
    out: Conv2d,
    pub mean_frame: Frame<T>,
    base_logit: Tensor<T>,
    pub stats: CqtStats,
    pub image_size: usize,
    pub noise_dim: usize,
    pub resample_noise_per_frame: bool,
}

impl<T: Scalar> CoarseGenerator<T> {
    pub fn new(cfg: &PipelineConfig, mean_frame: Frame<T>, stats: CqtStats) -> Result<Self> {
        let s = cfg.image_size;
        if mean_frame.height() != s || mean_frame.width() != s {
            return Err(Error::Shape(format!(
                "seed frame is {}x{}, config image size {s}",
                mean_frame.height(),
                mean_frame.width()
            )));
        }
        let mut rng = rng::stream(cfg.seed, "cvg/init");
        let mut store = ParamStore::new();
        let w = cfg.cvg_width;
        let audio = AudioEncoder::new(
            &mut store,
            "audio",
            cfg.cqt_bins,
            cfg.cqt_hops,
            cfg.audio_conv_channels,
            cfg.audio_dim,
            &mut rng,
        );
        let audio_gru = GruCell::new(&mut store, "audio_gru", cfg.audio_dim, cfg.audio_dim, &mut rng);
        let mut conv = |store: &mut ParamStore<T>, name: &str, spec: ConvSpec| Conv2d::new(store, name, spec, &mut rng);
        // frozen stand-in for a pretrained classification backbone
        let backbone_specs = [(3, w, 2), (w, w, 1), (w, 2 * w, 2), (2 * w, 2 * w, 1), (2 * w, 2 * w, 2)];
        let backbone = backbone_specs
            .iter()
            .enumerate()
            .map(|(i, &(a, b, st))| conv(&mut store, &format!("backbone.{i}"), ConvSpec::square(a, b, 3, st).frozen()))
            .collect();
        let image = vec![
            conv(&mut store, "image.0", ConvSpec::square(2 * w, 2 * w, 3, 2)),
            conv(&mut store, "image.1", ConvSpec::square(2 * w, 2 * w, 3, 1)),
        ];
        let (ca, cz) = (w, (w / 2).max(1));
        let dec_specs = [(2 * w + ca + cz, 2 * w), (2 * w, 2 * w), (2 * w, w), (w, w)];
        let decoder = dec_specs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| conv(&mut store, &format!("decoder.{i}"), ConvSpec::square(a, b, 3, 1)))
            .collect();
        let out = conv(&mut store, "decoder.out", ConvSpec::square(w, 3, 3, 1).init(Init::Zeros));
        let fa_proj = Linear::new(&mut store, "fa_proj", cfg.audio_dim, ca, true, Init::He, &mut rng);
        let z_proj = Linear::new(&mut store, "z_proj", cfg.noise_dim, cz, true, Init::He, &mut rng);
        let base_logit = logit(mean_frame.tensor());
        Ok(Self {
            store,
            audio,
            audio_gru,
            backbone,
            image,
            fa_proj,
            z_proj,
            decoder,
            out,
            mean_frame,
            base_logit,
            stats,
            image_size: s,
            noise_dim: cfg.noise_dim,
            resample_noise_per_frame: cfg.resample_noise_per_frame,
        })
    }

    /// Audio features `[1, D_a]` for every clip, in order, on the tape.
    pub fn encode_audio_on(&self, g: &mut Graph<T>, clips: &[AudioClip<T>]) -> Result<Vec<Var>> {
        if clips.is_empty() {
            return Err(Error::Empty("no audio clips".into()));
        }
        let mut h = zero_row(g, self.audio_gru.hidden);
        let mut out = Vec::with_capacity(clips.len());
        for clip in clips {
            self.audio.check(clip)?;
            let x = self.audio.input(g, &self.stats.apply(clip));
            let a = self.audio.forward(g, &self.store, x);
            h = self.audio_gru.forward(g, &self.store, a, h);
            out.push(h);
        }
        Ok(out)
    }

    pub fn encode_audio_sequence(&self, clips: &[AudioClip<T>]) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let vars = self.encode_audio_on(&mut g, clips)?;
        Ok(vars.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Output of the frozen backbone for one frame.
    pub fn backbone_features(&self, frame: &Frame<T>) -> Tensor<T> {
        let mut g = Graph::new();
        let mut x = g.constant(frame.tensor().clone());
        for c in &self.backbone {
            x = c.forward(&mut g, &self.store, x);
            x = g.relu(x);
        }
        g.value(x).clone()
    }

    /// Decodes one frame `[3, S, S]` from audio feature, cached backbone features and noise.
    pub fn step_on(&self, g: &mut Graph<T>, fa: Var, prev_features: Var, z: Var) -> Var {
        let slope = T::from_f64(0.1).unwrap();
        let mut x = prev_features;
        for c in &self.image {
            x = c.forward(g, &self.store, x);
            x = g.leaky_relu(x, slope);
        }
        let (h, w) = (g.shape(x)[1], g.shape(x)[2]);
        let a = self.fa_proj.forward(g, &self.store, fa);
        let a = g.broadcast_spatial(a, h, w);
        let zz = self.z_proj.forward(g, &self.store, z);
        let zz = g.broadcast_spatial(zz, h, w);
        let mut x = g.concat(&[x, a, zz]);
        for c in &self.decoder {
            x = c.forward(g, &self.store, x);
            x = g.leaky_relu(x, slope);
            x = g.upsample2(x);
        }
        let x = self.out.forward(g, &self.store, x);
        let base = g.constant(self.base_logit.clone());
        let x = g.add(x, base);
        g.sigmoid(x)
    }

    fn check_noise(&self, z: &[T]) -> Result<()> {
        if z.len() != self.noise_dim {
            return Err(Error::Shape(format!("noise has {} dims, expected {}", z.len(), self.noise_dim)));
        }
        Ok(())
    }

    pub fn cvg_step(&self, fa: &Tensor<T>, prev: &Frame<T>, z: &[T]) -> Result<Frame<T>> {
        self.check_noise(z)?;
        let mut g = Graph::new();
        let fa = g.constant(fa.clone().reshape(&[1, fa.numel()]));
        let feats = g.constant(self.backbone_features(prev));
        let z = g.constant(Tensor::from_vec(&[1, z.len()], z.to_vec()));
        let out = self.step_on(&mut g, fa, feats, z);
        Frame::from_tensor_clamped(g.value(out).clone())
    }

    /// Autoregressive rollout from `seed_frame`; `noise[t]` drives frame `t`.
    pub fn cvg_rollout(&self, clips: &[AudioClip<T>], seed_frame: &Frame<T>, noise: &[Vec<T>]) -> Result<Vec<Frame<T>>> {
        if noise.len() != clips.len() {
            return Err(Error::Shape(format!("{} noise vectors for {} clips", noise.len(), clips.len())));
        }
        let fa = self.encode_audio_sequence(clips)?;
        let mut prev = seed_frame.clone();
        let mut out = Vec::with_capacity(clips.len());
        for (f, z) in fa.iter().zip(noise) {
            let frame = self.cvg_step(f, &prev, z)?;
            prev = frame.clone();
            out.push(frame);
        }
        Ok(out)
    }

    /// Noise for an `n`-frame rollout drawn from the `cvg/noise` stream of `seed`.
    pub fn rollout_noise(&self, n: usize, seed: u64, label: &str) -> Vec<Vec<T>> {
        let mut r = rng::stream(seed, &format!("cvg/noise/{label}"));
        sample_noise(n, self.noise_dim, self.resample_noise_per_frame, &mut r)
    }

    pub fn to_checkpoint(&self, cfg: &PipelineConfig) -> Checkpoint<T> {
        let mut ck = Checkpoint::new(Stage::Cvg, cfg);
        ck.push_store("", &self.store);
        ck.push("meta.mean_frame", self.mean_frame.tensor().clone());
        ck.push("meta.cqt_stats", stats_tensor(&self.stats));
        ck
    }

    pub fn from_checkpoint(cfg: &PipelineConfig, ck: &Checkpoint<T>, path: &Path) -> Result<Self> {
        let mean = Frame::new(ck.require("meta.mean_frame", path)?.clone())?;
        let stats = stats_from_tensor(ck.require("meta.cqt_stats", path)?);
        let mut m = Self::new(cfg, mean, stats)?;
        ck.restore_store("", &mut m.store, path)?;
        Ok(m)
    }

    pub fn load(cfg: &PipelineConfig, path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path, Stage::Cvg, cfg)?;
        Self::from_checkpoint(cfg, &ck, path)
    }
}

/// Teacher-forced training: the ground-truth previous frame (the mean frame
/// at `t = 0`) is the image input, and random frames of one sequence form a step.
pub fn train_cvg<T: Scalar>(
    data: &[PairedSequence<T>],
    cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<(CoarseGenerator<T>, LossCurve)> {
    cfg.validate()?;
    let train: Vec<&PairedSequence<T>> = data.iter().filter(|s| s.instrument == cfg.instrument).collect();
    if train.is_empty() {
        return Err(Error::UnknownInstrument(cfg.instrument.clone()));
    }
    let owned: Vec<PairedSequence<T>> = train.iter().map(|s| (*s).clone()).collect();
    let stats = CqtStats::fit(&owned);
    let mean = mean_frame(&train.iter().flat_map(|s| &s.frames).collect::<Vec<_>>())?;
    let mut model = CoarseGenerator::new(cfg, mean, stats)?;
    let seed_features = model.backbone_features(&model.mean_frame);
    let features: Vec<Vec<Tensor<T>>> = train
        .iter()
        .map(|s| s.frames.iter().map(|f| model.backbone_features(f)).collect())
        .collect();

    let steps = opts.steps.unwrap_or(cfg.cvg_steps);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr_cvg,
            ..AdamConfig::default()
        },
    );
    let clip = T::from_f64(cfg.grad_clip).unwrap();
    let mut pick = rng::stream(cfg.seed, "cvg/frames");
    let mut noise_rng = rng::stream(cfg.seed, "cvg/noise/train");
    let mut curve = LossCurve::default();
    let mut progress = Progress::new("cvg", opts);
    for (step, &si) in epoch_order(train.len(), steps, cfg.seed, "cvg/order").iter().enumerate() {
        let seq = train[si];
        let n = seq.len();
        let k = cfg.cvg_frames_per_step.min(n);
        let mut ts = rand::seq::index::sample(&mut pick, n, k).into_vec();
        ts.sort_unstable();
        let last = *ts.last().unwrap();
        let zs = sample_noise::<T, _>(k, cfg.noise_dim, true, &mut noise_rng);

        let mut g = Graph::new();
        let fa = model.encode_audio_on(&mut g, &seq.clips[..=last])?;
        let mut losses = Vec::with_capacity(k);
        for (&t, z) in ts.iter().zip(&zs) {
            let prev = if t == 0 { &seed_features } else { &features[si][t - 1] };
            let prev = g.constant(prev.clone());
            let z = g.constant(Tensor::from_vec(&[1, z.len()], z.clone()));
            let out = model.step_on(&mut g, fa[t], prev, z);
            let real = g.constant(seq.frames[t].tensor().clone());
            losses.push(g.l1(out, real));
        }
        let l = g.concat(&losses);
        let loss = g.mean(l);
        let value = g.value(loss).item().to_f64().unwrap();
        progress.check(step, "l1", value)?;
        curve.push(step, "l1", value);
        g.backward(loss).accumulate(&g, &mut model.store);
        if cfg.grad_clip > 0.0 {
            model.store.clip_grad_norm(clip);
        }
        adam.set_lr(cosine_lr(cfg.lr_cvg, step, steps));
        adam.step(&mut model.store);
        if (step + 1) % cfg.log_every == 0 {
            log::info!("cvg step {}/{steps}: l1 {value:.5}", step + 1);
            progress.save(|p| model.to_checkpoint(cfg).save(p))?;
        }
    }
    progress.save(|p| model.to_checkpoint(cfg).save(p))?;
    Ok((model, curve))
}
