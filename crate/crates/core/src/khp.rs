//! Keypoint prediction from audio: a motion encoder per clip, a gated
//! recurrence over clips, and an affine head that offsets the instrument's
//! average pose.

use std::path::Path;

use apvg_tensor::nn::{GruCell, Init, Linear};
use apvg_tensor::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};
use rand::seq::SliceRandom;

use crate::audiodata::{CqtStats, PairedSequence};
use crate::checkpoint::Checkpoint;
use crate::config::{PipelineConfig, Stage};
use crate::dlt::{heatmap_on_tape, render_heatmap, to_grid};
use crate::error::{Error, Result};
use crate::nets::{l2_distance, zero_row, AudioEncoder};
use crate::rng;
use crate::train::{cosine_lr, LossCurve, Progress, TrainOptions};
use crate::types::{AudioClip, KeypointSet};

/// Elementwise mean keypoints over every frame of `instrument`.
pub fn average_keypoints<T: Scalar>(data: &[PairedSequence<T>], instrument: &str) -> Result<KeypointSet<T>> {
    let sets: Vec<&KeypointSet<T>> = data
        .iter()
        .filter(|s| s.instrument == instrument)
        .flat_map(|s| &s.keypoints)
        .collect();
    let first = sets
        .first()
        .ok_or_else(|| Error::UnknownInstrument(instrument.to_string()))?;
    let p = first.len();
    let mut acc = vec![[0.0f64; 2]; p];
    for k in &sets {
        if k.len() != p {
            return Err(Error::Shape(format!("keypoint sets of {} and {p} points", k.len())));
        }
        for (a, c) in acc.iter_mut().zip(k.coords()) {
            a[0] += c[0].to_f64().unwrap();
            a[1] += c[1].to_f64().unwrap();
        }
    }
    let n = sets.len() as f64;
    let coords = acc
        .iter()
        .map(|a| [T::from_f64(a[0] / n).unwrap(), T::from_f64(a[1] / n).unwrap()])
        .collect();
    KeypointSet::new(coords, instrument)
}

fn same_len<T: Scalar>(pred: &KeypointSet<T>, real: &KeypointSet<T>) -> Result<()> {
    if pred.len() != real.len() {
        return Err(Error::Shape(format!(
            "predicted {} keypoints, reference has {}",
            pred.len(),
            real.len()
        )));
    }
    Ok(())
}

/// Euclidean norm of the stacked coordinate difference over all points.
pub fn khp_coordinate_loss<T: Scalar>(pred: &KeypointSet<T>, real: &KeypointSet<T>) -> Result<T> {
    same_len(pred, real)?;
    Ok(pred
        .coords()
        .iter()
        .zip(real.coords())
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum::<T>()
        .sqrt())
}

/// Mean absolute difference between the heatmaps of `pred` and `real`.
pub fn khp_visual_loss<T: Scalar>(
    pred: &KeypointSet<T>,
    real: &KeypointSet<T>,
    width: usize,
    height: usize,
    alpha: T,
) -> Result<T> {
    same_len(pred, real)?;
    let a = render_heatmap(&to_grid(pred, width, height), width, height, alpha);
    let b = render_heatmap(&to_grid(real, width, height), width, height, alpha);
    let n = T::from_usize(width * height).unwrap();
    Ok(a.grid.iter().zip(&b.grid).map(|(x, y)| (*x - *y).abs()).sum::<T>() / n)
}

fn keypoints_tensor<T: Scalar>(k: &KeypointSet<T>) -> Tensor<T> {
    Tensor::from_vec(&[1, 2 * k.len()], k.flatten())
}

pub struct KeypointPredictor<T: Scalar> {
    pub store: ParamStore<T>,
    encoder: AudioEncoder,
    gru: GruCell,
    head: Linear,
    pub avg: KeypointSet<T>,
    pub stats: CqtStats,
}

impl<T: Scalar> KeypointPredictor<T> {
    pub fn new(cfg: &PipelineConfig, avg: KeypointSet<T>, stats: CqtStats) -> Result<Self> {
        if avg.len() != cfg.keypoint_count {
            return Err(Error::Shape(format!(
                "average pose has {} points, config says {}",
                avg.len(),
                cfg.keypoint_count
            )));
        }
        let mut rng = rng::stream(cfg.seed, "khp/init");
        let mut store = ParamStore::new();
        let p2 = 2 * cfg.keypoint_count;
        let encoder = AudioEncoder::new(
            &mut store,
            "motion",
            cfg.cqt_bins,
            cfg.cqt_hops,
            cfg.audio_conv_channels,
            cfg.motion_dim,
            &mut rng,
        );
        let gru = GruCell::new(&mut store, "gru", cfg.motion_dim + p2, cfg.khp_hidden, &mut rng);
        let head = Linear::new(&mut store, "head", cfg.khp_hidden, p2, true, Init::Zeros, &mut rng);
        Ok(Self {
            store,
            encoder,
            gru,
            head,
            avg,
            stats,
        })
    }

    pub fn keypoint_count(&self) -> usize {
        self.avg.len()
    }

    /// Motion feature `[1, D_m]` of one raw clip, on the tape.
    pub fn encode_motion_on(&self, g: &mut Graph<T>, clip: &AudioClip<T>) -> Result<Var> {
        self.encoder.check(clip)?;
        let x = self.encoder.input(g, &self.stats.apply(clip));
        Ok(self.encoder.forward(g, &self.store, x))
    }

    pub fn encode_motion(&self, clip: &AudioClip<T>) -> Result<Vec<T>> {
        let mut g = Graph::new();
        let v = self.encode_motion_on(&mut g, clip)?;
        Ok(g.value(v).data().to_vec())
    }

    /// Flat `[1, 2P]` predictions for every clip, in order, on the tape.
    pub fn forward_on(&self, g: &mut Graph<T>, clips: &[AudioClip<T>]) -> Result<Vec<Var>> {
        if clips.is_empty() {
            return Err(Error::Empty("no audio clips".into()));
        }
        let avg = g.constant(keypoints_tensor(&self.avg));
        let mut h = zero_row(g, self.gru.hidden);
        let mut out = Vec::with_capacity(clips.len());
        for clip in clips {
            let m = self.encode_motion_on(g, clip)?;
            let m = g.reshape(m, &[self.encoder.out_dim]);
            let a = g.reshape(avg, &[2 * self.keypoint_count()]);
            let x = g.concat(&[m, a]);
            let x = g.reshape(x, &[1, self.encoder.out_dim + 2 * self.keypoint_count()]);
            h = self.gru.forward(g, &self.store, x, h);
            let off = self.head.forward(g, &self.store, h);
            out.push(g.add(avg, off));
        }
        Ok(out)
    }

    pub fn predict_keypoints(&self, clips: &[AudioClip<T>]) -> Result<Vec<KeypointSet<T>>> {
        let mut g = Graph::new();
        let vars = self.forward_on(&mut g, clips)?;
        vars.iter()
            .map(|&v| KeypointSet::from_flat(g.value(v).data(), self.avg.instrument.clone()))
            .collect()
    }

    pub fn to_checkpoint(&self, cfg: &PipelineConfig) -> Checkpoint<T> {
        let mut ck = Checkpoint::new(Stage::Khp, cfg);
        ck.push_store("", &self.store);
        ck.push("meta.avg_keypoints", keypoints_tensor(&self.avg));
        ck.push("meta.cqt_stats", stats_tensor(&self.stats));
        ck
    }

    pub fn from_checkpoint(cfg: &PipelineConfig, ck: &Checkpoint<T>, path: &Path) -> Result<Self> {
        let avg = KeypointSet::from_flat(ck.require("meta.avg_keypoints", path)?.data(), cfg.instrument.clone())?;
        let stats = stats_from_tensor(ck.require("meta.cqt_stats", path)?);
        let mut m = Self::new(cfg, avg, stats)?;
        ck.restore_store("", &mut m.store, path)?;
        Ok(m)
    }

    pub fn load(cfg: &PipelineConfig, path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path, Stage::Khp, cfg)?;
        Self::from_checkpoint(cfg, &ck, path)
    }
}

pub(crate) fn stats_tensor<T: Scalar>(s: &CqtStats) -> Tensor<T> {
    Tensor::from_vec(&[2], vec![T::from_f64(s.mean).unwrap(), T::from_f64(s.std).unwrap()])
}

pub(crate) fn stats_from_tensor<T: Scalar>(t: &Tensor<T>) -> CqtStats {
    CqtStats {
        mean: t.data()[0].to_f64().unwrap(),
        std: t.data()[1].to_f64().unwrap(),
    }
}

/// Per-frame `coord + lambda_vis * visual`, averaged over the sequence, on the tape.
/// Returns `(total, coord, visual)`.
pub fn khp_sequence_loss<T: Scalar>(
    g: &mut Graph<T>,
    preds: &[Var],
    real: &[KeypointSet<T>],
    cfg: &PipelineConfig,
) -> (Var, Var, Var) {
    let s = cfg.vis_heatmap_size;
    let alpha = T::from_f64(cfg.heatmap_alpha).unwrap();
    let inv_n = T::one() / T::from_usize(preds.len()).unwrap();
    let mut coord = Vec::new();
    let mut vis = Vec::new();
    for (&p, k) in preds.iter().zip(real) {
        let r = g.constant(keypoints_tensor(k));
        coord.push(l2_distance(g, p, r));
        let flat = g.reshape(p, &[k.len(), 2]);
        let hp = heatmap_on_tape(g, flat, s, s, alpha);
        let rf = g.reshape(r, &[k.len(), 2]);
        let hr = heatmap_on_tape(g, rf, s, s, alpha);
        vis.push(g.l1(hp, hr));
    }
    let coord = g.concat(&coord);
    let coord = g.sum(coord);
    let coord = g.scale(coord, inv_n);
    let vis = g.concat(&vis);
    let vis = g.sum(vis);
    let vis = g.scale(vis, inv_n);
    let weighted = g.scale(vis, T::from_f64(cfg.lambda_vis).unwrap());
    let total = g.add(coord, weighted);
    (total, coord, vis)
}

/// One sequence per step, cycling through a reshuffled order each epoch.
pub(crate) fn epoch_order(n: usize, steps: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut r = rng::stream(seed, label);
    let mut order = Vec::with_capacity(steps);
    while order.len() < steps {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut r);
        order.extend(idx);
    }
    order.truncate(steps);
    order
}

pub fn train_khp<T: Scalar>(
    data: &[PairedSequence<T>],
    cfg: &PipelineConfig,
    opts: &TrainOptions,
) -> Result<(KeypointPredictor<T>, LossCurve)> {
    cfg.validate()?;
    let train: Vec<&PairedSequence<T>> = data.iter().filter(|s| s.instrument == cfg.instrument).collect();
    if train.is_empty() {
        return Err(Error::UnknownInstrument(cfg.instrument.clone()));
    }
    let avg = average_keypoints(data, &cfg.instrument)?;
    let owned: Vec<PairedSequence<T>> = train.iter().map(|s| (*s).clone()).collect();
    let stats = CqtStats::fit(&owned);
    let mut model = KeypointPredictor::new(cfg, avg, stats)?;
    let steps = opts.steps.unwrap_or(cfg.khp_steps);
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr_khp,
            ..AdamConfig::default()
        },
    );
    let clip = T::from_f64(cfg.grad_clip).unwrap();
    let mut curve = LossCurve::default();
    let mut progress = Progress::new("khp", opts);
    for (step, &si) in epoch_order(train.len(), steps, cfg.seed, "khp/order").iter().enumerate() {
        let seq = train[si];
        let mut g = Graph::new();
        let preds = model.forward_on(&mut g, &seq.clips)?;
        let (total, coord, vis) = khp_sequence_loss(&mut g, &preds, &seq.keypoints, cfg);
        let values = [
            ("total", g.value(total).item()),
            ("coord", g.value(coord).item()),
            ("visual", g.value(vis).item()),
        ];
        for (name, v) in values {
            let v = v.to_f64().unwrap();
            progress.check(step, name, v)?;
            curve.push(step, name, v);
        }
        g.backward(total).accumulate(&g, &mut model.store);
        if cfg.grad_clip > 0.0 {
            model.store.clip_grad_norm(clip);
        }
        adam.set_lr(cosine_lr(cfg.lr_khp, step, steps));
        adam.step(&mut model.store);
        if (step + 1) % cfg.log_every == 0 {
            log::info!(
                "khp step {}/{steps}: coord {:.4} visual {:.5}",
                step + 1,
                values[1].1,
                values[2].1
            );
            progress.save(|p| model.to_checkpoint(cfg).save(p))?;
        }
    }
    progress.save(|p| model.to_checkpoint(cfg).save(p))?;
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ks(points: &[[f64; 2]]) -> KeypointSet<f64> {
        KeypointSet::new(points.to_vec(), "cello").unwrap()
    }

    #[test]
    fn coordinate_loss_examples() {
        let a = ks(&[[0.0, 0.0]]);
        let b = ks(&[[3.0, 4.0]]);
        assert_eq!(khp_coordinate_loss(&a, &b).unwrap(), 5.0);
        assert_eq!(khp_coordinate_loss(&a, &a).unwrap(), 0.0);
        let c = ks(&[[0.0, 0.0], [1.0, 1.0]]);
        let d = ks(&[[1.0, 0.0], [2.0, 1.0]]);
        assert!((khp_coordinate_loss(&c, &d).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(khp_coordinate_loss(&a, &c).is_err());
    }

    #[test]
    fn visual_loss_disjoint_tents() {
        // (0.5, 0.5) is grid (2,2) on 5x5; (0.75, 0.75) is grid (3,3)
        let a = ks(&[[0.5, 0.5]]);
        let b = ks(&[[0.75, 0.75]]);
        assert!((khp_visual_loss(&a, &b, 5, 5, 1.0).unwrap() - 2.0 / 25.0).abs() < 1e-15);
        assert_eq!(khp_visual_loss(&a, &a, 5, 5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn average_examples() {
        let mk = |pts: &[[f64; 2]]| {
            let k = ks(pts);
            PairedSequence {
                name: "s".into(),
                instrument: "cello".into(),
                clips: vec![],
                frames: vec![],
                keypoints: vec![k],
                waveform: None,
            }
        };
        let data = vec![mk(&[[0.2, 0.4]]), mk(&[[0.4, 0.6]])];
        let avg = average_keypoints(&data, "cello").unwrap();
        assert!((avg.coords()[0][0] - 0.3).abs() < 1e-15 && (avg.coords()[0][1] - 0.5).abs() < 1e-15);
        assert_eq!(average_keypoints(&data[..1], "cello").unwrap().coords(), &[[0.2, 0.4]]);
        assert!(matches!(
            average_keypoints(&data, "tuba"),
            Err(Error::UnknownInstrument(name)) if name == "tuba"
        ));
    }

    fn small_cfg() -> PipelineConfig {
        let mut cfg = PipelineConfig::default();
        cfg.motion_dim = 16;
        cfg.khp_hidden = 16;
        cfg.audio_conv_channels = 8;
        cfg.keypoint_count = 3;
        cfg.topology = "chain".into();
        cfg
    }

    fn random_clips(n: usize, seed: u64) -> Vec<AudioClip<f64>> {
        use rand::Rng;
        let mut r = rng::stream(seed, "test/clips");
        (0..n)
            .map(|_| AudioClip::new(Tensor::from_fn(&[84, 87], |_| r.random_range(-1.0..1.0)), 44100, 256).unwrap())
            .collect()
    }

    fn model() -> KeypointPredictor<f64> {
        let cfg = small_cfg();
        let avg = ks(&[[0.2, 0.3], [0.5, 0.5], [0.7, 0.8]]);
        let mut m = KeypointPredictor::new(&cfg, avg, CqtStats { mean: 0.0, std: 1.0 }).unwrap();
        // give the zero-initialised head some weight so outputs depend on audio
        let mut r = rng::stream(1, "test/head");
        for e in m.store.entries_mut() {
            if e.name.starts_with("head") {
                e.value = apvg_tensor::nn::init_tensor(e.value.shape(), 16, Init::Lecun, &mut r);
            }
        }
        m
    }

    #[test]
    fn shapes_determinism_and_order_sensitivity() {
        let m = model();
        let clips = random_clips(4, 0);
        assert_eq!(m.encode_motion(&clips[0]).unwrap().len(), 16);
        assert_eq!(m.encode_motion(&clips[0]).unwrap(), m.encode_motion(&clips[0]).unwrap());
        assert_ne!(m.encode_motion(&clips[0]).unwrap(), m.encode_motion(&clips[1]).unwrap());
        let a = m.predict_keypoints(&clips).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a[0].len(), 3);
        let mut rev = clips.clone();
        rev.reverse();
        let b = m.predict_keypoints(&rev).unwrap();
        assert_ne!(a[3], b[0]);
        let wrong = AudioClip::new(Tensor::zeros(&[84, 80]), 44100, 256).unwrap();
        assert!(matches!(m.encode_motion(&wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn untrained_head_predicts_the_average() {
        let cfg = small_cfg();
        let avg = ks(&[[0.2, 0.3], [0.5, 0.5], [0.7, 0.8]]);
        let m = KeypointPredictor::new(&cfg, avg.clone(), CqtStats { mean: 0.0, std: 1.0 }).unwrap();
        for k in m.predict_keypoints(&random_clips(3, 2)).unwrap() {
            assert_eq!(k, avg);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = small_cfg();
        let m = model();
        let ck = m.to_checkpoint(&cfg);
        let back = KeypointPredictor::from_checkpoint(&cfg, &ck, Path::new("mem")).unwrap();
        let clips = random_clips(2, 3);
        assert_eq!(m.predict_keypoints(&clips).unwrap(), back.predict_keypoints(&clips).unwrap());
    }

    proptest! {
        #[test]
        fn coordinate_loss_is_a_symmetric_nonnegative_distance(
            a in prop::collection::vec(-2.0f64..2.0, 8),
            b in prop::collection::vec(-2.0f64..2.0, 8),
        ) {
            let ka = KeypointSet::from_flat(&a, "x").unwrap();
            let kb = KeypointSet::from_flat(&b, "x").unwrap();
            let ab = khp_coordinate_loss(&ka, &kb).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, khp_coordinate_loss(&kb, &ka).unwrap());
            prop_assert_eq!(khp_coordinate_loss(&ka, &ka).unwrap(), 0.0);
            if a != b {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn visual_loss_ignores_keypoint_order(
            a in prop::collection::vec(0.0f64..1.0, 10),
            b in prop::collection::vec(0.0f64..1.0, 10),
            rot in 0usize..5,
        ) {
            let ka = KeypointSet::from_flat(&a, "x").unwrap();
            let kb = KeypointSet::from_flat(&b, "x").unwrap();
            let perm = |k: &KeypointSet<f64>| {
                let mut c = k.coords().to_vec();
                c.rotate_left(rot);
                KeypointSet::new(c, "x").unwrap()
            };
            let base = khp_visual_loss(&ka, &kb, 16, 16, 1.0).unwrap();
            let permuted = khp_visual_loss(&perm(&ka), &perm(&kb), 16, 16, 1.0).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
        }
    }
}
