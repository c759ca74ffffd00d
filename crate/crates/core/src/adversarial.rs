//! Audio-video pair discriminator, adversarial and perceptual losses, and
//! the alternating training loop of the final refinement stage.

use std::path::Path;

use apvg_tensor::nn::{Conv2d, ConvSpec, Init, Linear};
use apvg_tensor::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};

use crate::audiodata::{CqtStats, PairedSequence};
use crate::checkpoint::Checkpoint;
use crate::config::{KeypointSource, PipelineConfig, Stage};
use crate::cvg::CoarseGenerator;
use crate::error::{Error, Result};
use crate::khp::{stats_from_tensor, stats_tensor, KeypointPredictor};
use crate::nets::AudioEncoder;
use crate::pipeline::coarse_video;
use crate::rng;
use crate::stu::{Stu, StuProbe};
use crate::train::{cosine_lr, LossCurve, Progress, TrainOptions};
use crate::types::{AudioClip, Frame, Heatmap, KeypointSet};

const D_SLOPE: f64 = 0.2;

fn neg_ln<T: Scalar>(s: T) -> T {
    -s.ln()
}

fn mean<T: Scalar>(v: impl ExactSizeIterator<Item = T>) -> T {
    let n = T::from_usize(v.len()).unwrap();
    v.sum::<T>() / n
}

/// `mean(-ln D(fake))` from discriminator scores.
pub fn generator_adv_loss_from_scores<T: Scalar>(fake: &[T]) -> Result<T> {
    if fake.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    Ok(mean(fake.iter().map(|&s| neg_ln(s))))
}

/// `mean(-ln D(real)) + mean(-ln(1 - D(fake)))`; with `literal` the second
/// term is `mean(-ln D(fake))`.
pub fn discriminator_loss_from_scores<T: Scalar>(real: &[T], fake: &[T], literal: bool) -> Result<T> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Empty("no scores".into()));
    }
    let r = mean(real.iter().map(|&s| neg_ln(s)));
    let f = if literal {
        mean(fake.iter().map(|&s| neg_ln(s)))
    } else {
        mean(fake.iter().map(|&s| neg_ln(T::one() - s)))
    };
    Ok(r + f)
}

/// Tape form of the discriminator loss on logits.
pub fn discriminator_loss_on<T: Scalar>(g: &mut Graph<T>, real_logit: Var, fake_logit: Var, literal: bool) -> Var {
    let nr = g.scale(real_logit, -T::one());
    let lr = g.softplus(nr);
    let lf = if literal {
        let nf = g.scale(fake_logit, -T::one());
        g.softplus(nf)
    } else {
        g.softplus(fake_logit)
    };
    let lr = g.mean(lr);
    let lf = g.mean(lf);
    g.add(lr, lf)
}

/// Tape form of the generator's adversarial loss on logits.
pub fn generator_adv_loss_on<T: Scalar>(g: &mut Graph<T>, fake_logit: Var) -> Var {
    let n = g.scale(fake_logit, -T::one());
    let l = g.softplus(n);
    g.mean(l)
}

/// Scores whether a frame and an audio clip form a real, synchronised pair.
pub struct Discriminator<T: Scalar> {
    pub store: ParamStore<T>,
    frame: Vec<Conv2d>,
    frame_proj: Linear,
    audio: AudioEncoder,
    head: Vec<Linear>,
    pub stats: CqtStats,
    image_size: usize,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: &PipelineConfig, stats: CqtStats) -> Self {
        let mut rng = rng::stream(cfg.seed, "disc/init");
        let mut store = ParamStore::new();
        let w = cfg.disc_width;
        let widths = [w, 2 * w, 4 * w, 4 * w, 4 * w];
        let mut prev = 3;
        let mut side = cfg.image_size;
        let mut frame = Vec::with_capacity(widths.len());
        for (i, &c) in widths.iter().enumerate() {
            frame.push(Conv2d::new(&mut store, &format!("frame.{i}"), ConvSpec::square(prev, c, 3, 2), &mut rng));
            prev = c;
            side = (side - 1) / 2 + 1;
        }
        let frame_proj = Linear::new(&mut store, "frame.proj", prev * side * side, 4 * w, true, Init::Lecun, &mut rng);
        let audio = AudioEncoder::new(&mut store, "audio", cfg.cqt_bins, cfg.cqt_hops, 2 * w, 4 * w, &mut rng);
        let head = vec![
            Linear::new(&mut store, "head.0", 8 * w, 4 * w, true, Init::He, &mut rng),
            Linear::new(&mut store, "head.1", 4 * w, 1, true, Init::Lecun, &mut rng),
        ];
        Self {
            store,
            frame,
            frame_proj,
            audio,
            head,
            stats,
            image_size: cfg.image_size,
        }
    }

    /// Pair logit `[1, 1]` for a `[3, S, S]` frame on the tape.
    pub fn logit_on(&self, g: &mut Graph<T>, frame: Var, clip: &AudioClip<T>) -> Result<Var> {
        self.audio.check(clip)?;
        let shape = g.shape(frame);
        if shape != [3, self.image_size, self.image_size] {
            return Err(Error::Shape(format!("discriminator got frame {shape:?}")));
        }
        let slope = T::from_f64(D_SLOPE).unwrap();
        let mut x = frame;
        for c in &self.frame {
            x = c.forward(g, &self.store, x);
            x = g.leaky_relu(x, slope);
        }
        let n = g.value(x).numel();
        let x = g.reshape(x, &[1, n]);
        let x = self.frame_proj.forward(g, &self.store, x);
        let x = g.leaky_relu(x, slope);
        let a = self.audio.input(g, &self.stats.apply(clip));
        let a = self.audio.forward(g, &self.store, a);
        let h = g.concat(&[x, a]);
        let n = g.value(h).numel();
        let h = g.reshape(h, &[1, n]);
        let h = self.head[0].forward(g, &self.store, h);
        let h = g.leaky_relu(h, slope);
        Ok(self.head[1].forward(g, &self.store, h))
    }

    /// Probability in `(0, 1)` that `(frame, clip)` is a real pair.
    pub fn discriminate(&self, frame: &Frame<T>, clip: &AudioClip<T>) -> Result<T> {
        let mut g = Graph::new();
        let f = g.constant(frame.tensor().clone());
        let l = self.logit_on(&mut g, f, clip)?;
        let s = g.sigmoid(l);
        Ok(g.value(s).item())
    }

    fn scores(&self, frames: &[Frame<T>], clips: &[AudioClip<T>]) -> Result<Vec<T>> {
        if frames.len() != clips.len() {
            return Err(Error::Shape(format!("{} frames for {} clips", frames.len(), clips.len())));
        }
        frames.iter().zip(clips).map(|(f, c)| self.discriminate(f, c)).collect()
    }

    pub fn generator_adv_loss(&self, fake: &[Frame<T>], clips: &[AudioClip<T>]) -> Result<T> {
        generator_adv_loss_from_scores(&self.scores(fake, clips)?)
    }

    pub fn discriminator_loss(&self, real: &[Frame<T>], fake: &[Frame<T>], clips: &[AudioClip<T>], literal: bool) -> Result<T> {
        discriminator_loss_from_scores(&self.scores(real, clips)?, &self.scores(fake, clips)?, literal)
    }
}

/// Per-channel input normalisation of the perceptual extractor.
const INPUT_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const INPUT_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Frozen feature extractor whose tapped activations define the perceptual loss.
pub struct PerceptualExtractor<T: Scalar> {
    store: ParamStore<T>,
    convs: Vec<Conv2d>,
}

impl<T: Scalar> PerceptualExtractor<T> {
    /// Randomly initialised frozen convolutions; every rectified output is a tap.
    pub fn new(cfg: &PipelineConfig) -> Self {
        let mut rng = rng::stream(cfg.seed, "perceptual/init");
        let mut store = ParamStore::new();
        let mut convs = Vec::with_capacity(cfg.perceptual_layers);
        let mut prev = 3;
        for i in 0..cfg.perceptual_layers {
            let (c, stride) = if i == 0 { (16, 1) } else { (32, 2) };
            let spec = ConvSpec::square(prev, c, 3, stride).init(Init::He).frozen();
            convs.push(Conv2d::new(&mut store, &format!("perceptual.{i}"), spec, &mut rng));
            prev = c;
        }
        Self { store, convs }
    }

    /// A single tap on the raw pixels, which turns the loss into plain L1.
    pub fn identity() -> Self {
        Self {
            store: ParamStore::new(),
            convs: Vec::new(),
        }
    }

    pub fn taps_on(&self, g: &mut Graph<T>, x: Var) -> Vec<Var> {
        if self.convs.is_empty() {
            return vec![x];
        }
        let shape = g.shape(x).to_vec();
        let plane = shape[1] * shape[2];
        let scale = g.constant(Tensor::from_fn(&shape, |i| T::from_f64(1.0 / INPUT_STD[i / plane]).unwrap()));
        let shift = g.constant(Tensor::from_fn(&shape, |i| T::from_f64(-INPUT_MEAN[i / plane] / INPUT_STD[i / plane]).unwrap()));
        let x = g.mul(x, scale);
        let mut x = g.add(x, shift);
        let mut taps = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            x = c.forward(g, &self.store, x);
            x = g.relu(x);
            taps.push(x);
        }
        taps
    }

    /// `sum over taps of mean|psi(real) - psi(fake)|` for one frame pair.
    pub fn loss_on(&self, g: &mut Graph<T>, real: Var, fake: Var) -> Var {
        let a = self.taps_on(g, real);
        let b = self.taps_on(g, fake);
        let parts: Vec<Var> = a
            .into_iter()
            .zip(b)
            .map(|(x, y)| {
                let l = g.l1(x, y);
                g.reshape(l, &[1])
            })
            .collect();
        let all = g.concat(&parts);
        g.sum(all)
    }

    pub fn perceptual_loss(&self, real: &[Frame<T>], fake: &[Frame<T>]) -> Result<T> {
        if real.len() != fake.len() {
            return Err(Error::Shape(format!("{} real frames vs {} generated", real.len(), fake.len())));
        }
        if real.is_empty() {
            return Err(Error::Empty("no frames".into()));
        }
        let mut total = T::zero();
        for (r, f) in real.iter().zip(fake) {
            if r.tensor().shape() != f.tensor().shape() {
                return Err(Error::Shape(format!("frame shapes {:?} and {:?}", r.tensor().shape(), f.tensor().shape())));
            }
            let mut g = Graph::new();
            let a = g.constant(r.tensor().clone());
            let b = g.constant(f.tensor().clone());
            let l = self.loss_on(&mut g, a, b);
            total += g.value(l).item();
        }
        Ok(total / T::from_usize(real.len()).unwrap())
    }
}

/// Trained refinement network and discriminator.
pub struct FhvgModel<T: Scalar> {
    pub stu: Stu<T>,
    pub disc: Discriminator<T>,
}

impl<T: Scalar> FhvgModel<T> {
    pub fn to_checkpoint(&self, cfg: &PipelineConfig) -> Checkpoint<T> {
        let mut ck = Checkpoint::new(Stage::Fhvg, cfg);
        self.stu.push_to(&mut ck);
        ck.push_store("disc.", &self.disc.store);
        ck.push("meta.cqt_stats", stats_tensor(&self.disc.stats));
        ck
    }

    pub fn from_checkpoint(cfg: &PipelineConfig, ck: &Checkpoint<T>, path: &Path) -> Result<Self> {
        let stu = Stu::from_checkpoint(cfg, ck, path)?;
        let mut disc = Discriminator::new(cfg, stats_from_tensor(ck.require("meta.cqt_stats", path)?));
        ck.restore_store("disc.", &mut disc.store, path)?;
        Ok(Self { stu, disc })
    }

    pub fn load(cfg: &PipelineConfig, path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path, Stage::Fhvg, cfg)?;
        Self::from_checkpoint(cfg, &ck, path)
    }
}

/// Fixed per-sequence refinement inputs.
struct Prepared<'a, T: Scalar> {
    seq: &'a PairedSequence<T>,
    coarse: Vec<Frame<T>>,
    keypoints: Vec<KeypointSet<T>>,
    heatmaps: Vec<Heatmap<T>>,
    audio: Vec<Tensor<T>>,
}

/// Alternates a discriminator step on `(real, fake)` pairs with a generator
/// step on `lambda_adv * adversarial + lambda_perc * perceptual`. Frames are
/// visited in order within a sequence and the recurrent state is carried
/// forward without backpropagating through it.
pub fn train_fhvg<T: Scalar>(
    data: &[PairedSequence<T>],
    khp: &KeypointPredictor<T>,
    cvg: &CoarseGenerator<T>,
    cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<(FhvgModel<T>, LossCurve)> {
    cfg.validate()?;
    let train: Vec<&PairedSequence<T>> = data.iter().filter(|s| s.instrument == cfg.instrument).collect();
    if train.is_empty() {
        return Err(Error::UnknownInstrument(cfg.instrument.clone()));
    }
    let stu = Stu::new(cfg)?;
    let disc = Discriminator::new(cfg, cvg.stats);
    let perceptual = PerceptualExtractor::new(cfg);
    let prepared = train
        .iter()
        .map(|seq| {
            let keypoints = match cfg.stu_train_keypoints {
                KeypointSource::Real => seq.keypoints.clone(),
                KeypointSource::Predicted => khp.predict_keypoints(&seq.clips)?,
            };
            Ok(Prepared {
                seq,
                coarse: coarse_video(cvg, &seq.clips, &seq.name, cfg.seed)?,
                heatmaps: keypoints.iter().map(|k| stu.render_heatmap(k)).collect(),
                keypoints,
                audio: cvg.encode_audio_sequence(&seq.clips)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let steps = opts.steps.unwrap_or(cfg.fhvg_steps);
    let order = crate::khp::epoch_order(prepared.len(), steps, cfg.seed, "fhvg/order");
    let schedule: Vec<(usize, usize)> = order
        .into_iter()
        .flat_map(|si| (0..prepared[si].coarse.len()).map(move |t| (si, t)))
        .take(steps)
        .collect();

    let mut model = FhvgModel { stu, disc };
    let adam_cfg = |lr| AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let mut adam_g = Adam::new(&model.stu.store, adam_cfg(cfg.lr_stu));
    let mut adam_d = Adam::new(
        &model.disc.store,
        AdamConfig {
            beta1: 0.5,
            ..adam_cfg(cfg.lr_disc)
        },
    );
    let clip_norm = T::from_f64(cfg.grad_clip).unwrap();
    let lambda_adv = T::from_f64(cfg.lambda_adv).unwrap();
    let lambda_perc = T::from_f64(cfg.lambda_perc).unwrap();
    let probe = StuProbe::default();
    let mut state: Option<Tensor<T>> = None;
    let mut curve = LossCurve::default();
    let mut progress = Progress::new("fhvg", opts);

    for (step, &(si, t)) in schedule.iter().enumerate() {
        let p = &prepared[si];
        if t == 0 {
            state = None;
        }
        let real = p.seq.frames[t].tensor();
        let clip = &p.seq.clips[t];

        let mut g = Graph::new();
        let inputs = model.stu.inputs_on(&mut g, &p.coarse[t], &p.heatmaps[t], &p.audio[t])?;
        let prev = state.as_ref().map(|h| g.constant(h.clone()));
        let (fake, fused) = model.stu.step_on(&mut g, inputs, &p.keypoints[t], prev, &probe)?;
        state = Some(g.value(fused).clone());

        let mut gd = Graph::new();
        let r = gd.constant(real.clone());
        let f = gd.constant(g.value(fake).clone());
        let lr = model.disc.logit_on(&mut gd, r, clip)?;
        let lf = model.disc.logit_on(&mut gd, f, clip)?;
        let ld = discriminator_loss_on(&mut gd, lr, lf, cfg.literal_discriminator_objective);
        let d_value = gd.value(ld).item().to_f64().unwrap();
        progress.check(step, "d_loss", d_value)?;
        gd.backward(ld).accumulate(&gd, &mut model.disc.store);
        adam_d.set_lr(cosine_lr(cfg.lr_disc, step, steps));
        adam_d.step(&mut model.disc.store);

        let lf = model.disc.logit_on(&mut g, fake, clip)?;
        let adv = generator_adv_loss_on(&mut g, lf);
        let r = g.constant(real.clone());
        let perc = perceptual.loss_on(&mut g, r, fake);
        let a = g.scale(adv, lambda_adv);
        let b = g.scale(perc, lambda_perc);
        let total = g.add(a, b);
        let values = [adv, perc, total].map(|v| g.value(v).item().to_f64().unwrap());
        progress.check(step, "g_total", values[2])?;
        g.backward(total).accumulate(&g, &mut model.stu.store);
        if cfg.grad_clip > 0.0 {
            model.stu.store.clip_grad_norm(clip_norm);
        }
        adam_g.set_lr(cosine_lr(cfg.lr_stu, step, steps));
        adam_g.step(&mut model.stu.store);
        // discriminator gradients picked up through the generator pass are discarded
        model.disc.store.zero_grad();

        curve.push(step, "d_loss", d_value);
        curve.push(step, "g_adv", values[0]);
        curve.push(step, "perceptual", values[1]);
        curve.push(step, "g_total", values[2]);
        if (step + 1) % cfg.log_every == 0 {
            log::info!(
                "fhvg step {}/{steps}: d {d_value:.4} adv {:.4} perceptual {:.5}",
                step + 1,
                values[0],
                values[1]
            );
            progress.save(|path| model.to_checkpoint(cfg).save(path))?;
        }
    }
    progress.save(|path| model.to_checkpoint(cfg).save(path))?;
    Ok((model, curve))
}
