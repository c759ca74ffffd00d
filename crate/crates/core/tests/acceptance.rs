//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p apvg --test acceptance`; pass criterion numbers
//! after `--` to run a subset.

use std::time::{Duration, Instant};

use apvg::adversarial::{
    discriminator_loss_from_scores, discriminator_loss_on, generator_adv_loss_from_scores, generator_adv_loss_on, train_fhvg,
    FhvgModel, PerceptualExtractor,
};
use apvg::audiodata::{generate_toy_dataset, PairedSequence, ToyDatasetSpec};
use apvg::cvg::{cvg_loss, mean_frame, train_cvg, CoarseGenerator};
use apvg::dlt::{render_heatmap, render_heatmap_grad, GridCoords};
use apvg::khp::{average_keypoints, khp_coordinate_loss, khp_sequence_loss, khp_visual_loss, train_khp, KeypointPredictor};
use apvg::metrics::{mean_keypoint_distance, psnr, published, ssim};
use apvg::pipeline::{coarse_video, generate_sequence};
use apvg::rng;
use apvg::stu::{gcn_forward, Gcn, MotionGraphBatch, Stu};
use apvg::tensor::{Graph, ParamStore, Scalar, Tensor};
use apvg::train::{LossCurve, TrainOptions};
use apvg::types::{AudioClip, Frame, Heatmap, KeypointSet};
use apvg::PipelineConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

fn random_keypoints(r: &mut ChaCha8Rng, p: usize, lo: f64, hi: f64) -> KeypointSet<f64> {
    let coords = (0..p).map(|_| [uniform(r, lo, hi), uniform(r, lo, hi)]).collect();
    KeypointSet::new(coords, "cello").unwrap()
}

fn random_frame(r: &mut ChaCha8Rng, h: usize, w: usize) -> Frame<f64> {
    Frame::new(Tensor::from_fn(&[3, h, w], |_| r.random::<f64>())).unwrap()
}

fn tent(d: f64) -> f64 {
    (1.0 - d.abs()).max(0.0)
}

/// Double loop over every cell and every point.
fn brute_heatmap(points: &[[f64; 2]], w: usize, h: usize, alpha: f64) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for i in 0..w {
        for j in 0..h {
            out[i * h + j] = points.iter().map(|p| alpha * tent(i as f64 - p[0]) * tent(j as f64 - p[1])).sum();
        }
    }
    out
}

fn near_integer(x: f64, eps: f64) -> bool {
    (x - x.round()).abs() < eps
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(1, "acceptance/dlt");
    let (w, h) = (16, 16);
    let step = 1e-4;
    let (mut worst_val, mut worst_rel, mut checked) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..1000 {
        let p = r.random_range(1..=10);
        let alpha = uniform(&mut r, 0.5, 2.0);
        let points: Vec<[f64; 2]> = (0..p).map(|_| [uniform(&mut r, -1.5, 16.5), uniform(&mut r, -1.5, 16.5)]).collect();
        let g = GridCoords { points: points.clone() };
        let got = render_heatmap(&g, w, h, alpha);
        let want = brute_heatmap(&points, w, h, alpha);
        for (a, b) in got.grid.iter().zip(&want) {
            worst_val = worst_val.max((a - b).abs());
        }
        let up: Vec<f64> = (0..w * h).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        let objective = |pts: &[[f64; 2]]| -> f64 { brute_heatmap(pts, w, h, alpha).iter().zip(&up).map(|(a, b)| a * b).sum() };
        let grad = render_heatmap_grad(&g, w, h, alpha, &up);
        for k in 0..p {
            for c in 0..2 {
                if near_integer(points[k][c], 2.0 * step) {
                    continue;
                }
                let mut plus = points.clone();
                plus[k][c] += step;
                let mut minus = points.clone();
                minus[k][c] -= step;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let an = grad[k][c];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
                worst_rel = worst_rel.max(rel);
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    check(worst_val <= 1e-6, format!("max heatmap error {worst_val:.3e}"))?;
    check(worst_rel <= 1e-4, format!("max gradient relative error {worst_rel:.3e}"))?;
    check(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "1000 layouts, max value error {worst_val:.1e}, max gradient rel. error {worst_rel:.1e} over {checked} coordinates, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn criterion_2() -> Outcome {
    let mut r = rng::stream(2, "acceptance/mass");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = r.random_range(1..=20);
        let (w, h) = (r.random_range(2..=32), r.random_range(2..=32));
        let alpha = uniform(&mut r, 0.1, 3.0);
        let k = random_keypoints(&mut r, p, 0.0, 1.0);
        let hm: Heatmap<f64> = render_heatmap(&apvg::dlt::to_grid(&k, w, h), w, h, alpha);
        worst = worst.max((hm.total_mass() - alpha * p as f64).abs());
    }
    check(worst <= 1e-6, format!("mass error {worst:.3e}"))?;
    Ok(format!("1000 interior sets, max |mass - alpha P| = {worst:.1e}"))
}

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.image_size = 32;
    cfg.stu_levels = 3;
    cfg.gcn_level = 2;
    cfg.stu_width = 4;
    cfg.stu_max_channels = 8;
    cfg.stu_audio_channels = 4;
    cfg.motion_dim = 16;
    cfg.khp_hidden = 16;
    cfg.audio_conv_channels = 4;
    cfg.audio_dim = 8;
    cfg.noise_dim = 4;
    cfg.cvg_width = 4;
    cfg.vis_heatmap_size = 16;
    cfg.toy_sequences = 1;
    cfg.toy_frames = 6;
    cfg
}

/// Adds noise to every trainable weight so that every input reaches the output.
fn jitter<T: Scalar>(store: &mut ParamStore<T>, seed: u64) {
    let mut r = rng::stream(seed, "acceptance/jitter");
    for e in store.entries_mut() {
        if !e.frozen {
            for v in e.value.data_mut() {
                *v += T::from_f64(uniform(&mut r, -0.2, 0.2)).unwrap();
            }
        }
    }
}

fn random_clip(r: &mut ChaCha8Rng, like: &AudioClip<f64>) -> AudioClip<f64> {
    let cqt = Tensor::from_fn(like.cqt().shape(), |_| uniform(r, -2.0, 2.0));
    AudioClip::new(cqt, like.sample_rate, like.hop_length).unwrap()
}

fn criterion_3() -> Outcome {
    let cfg = small_config();
    let data: Vec<PairedSequence<f64>> = generate_toy_dataset(&ToyDatasetSpec::from_config(&cfg)).map_err(|e| e.to_string())?;
    let seq = &data[0];
    let n = seq.len();
    let avg = average_keypoints(&data, &cfg.instrument).map_err(|e| e.to_string())?;
    let stats = apvg::audiodata::CqtStats { mean: 0.0, std: 1.0 };
    let mut khp = KeypointPredictor::new(&cfg, avg, stats).map_err(|e| e.to_string())?;
    jitter(&mut khp.store, 1);
    let frames: Vec<&Frame<f64>> = seq.frames.iter().collect();
    let mut cvg = CoarseGenerator::new(&cfg, mean_frame(&frames).map_err(|e| e.to_string())?, stats).map_err(|e| e.to_string())?;
    jitter(&mut cvg.store, 2);
    let mut stu = Stu::new(&cfg).map_err(|e| e.to_string())?;
    jitter(&mut stu.store, 3);

    let mut r = rng::stream(3, "acceptance/causality");
    let mut changed = [0usize; 3];

    let base = khp.predict_keypoints(&seq.clips).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let t = r.random_range(0..n - 1);
        let mut clips = seq.clips.clone();
        for c in clips.iter_mut().skip(t + 1) {
            *c = random_clip(&mut r, c);
        }
        let out = khp.predict_keypoints(&clips).map_err(|e| e.to_string())?;
        check(out[..=t] == base[..=t], format!("predict_keypoints: step {t} changed"))?;
        changed[0] += usize::from(out[t + 1..] != base[t + 1..]);
    }

    let noise = cvg.rollout_noise(n, 5, "acceptance");
    let base = cvg.cvg_rollout(&seq.clips, &cvg.mean_frame, &noise).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let t = r.random_range(0..n - 1);
        let mut clips = seq.clips.clone();
        let mut z = noise.clone();
        for s in t + 1..n {
            clips[s] = random_clip(&mut r, &clips[s]);
            z[s] = (0..cfg.noise_dim).map(|_| uniform(&mut r, -3.0, 3.0)).collect();
        }
        let out = cvg.cvg_rollout(&clips, &cvg.mean_frame, &z).map_err(|e| e.to_string())?;
        check(out[..=t] == base[..=t], format!("cvg_rollout: step {t} changed"))?;
        changed[1] += usize::from(out[t + 1..] != base[t + 1..]);
    }

    let kps = base_keypoints(&khp, seq)?;
    let heatmaps: Vec<Heatmap<f64>> = kps.iter().map(|k| stu.render_heatmap(k)).collect();
    let audio = cvg.encode_audio_sequence(&seq.clips).map_err(|e| e.to_string())?;
    let base = stu.stu_generate(&seq.frames, &heatmaps, &kps, &audio).map_err(|e| e.to_string())?;
    for _ in 0..100 {
        let t = r.random_range(0..n - 1);
        let (mut coarse, mut hm, mut kp, mut au) = (seq.frames.clone(), heatmaps.clone(), kps.clone(), audio.clone());
        for s in t + 1..n {
            coarse[s] = random_frame(&mut r, cfg.image_size, cfg.image_size);
            kp[s] = random_keypoints(&mut r, cfg.keypoint_count, 0.0, 1.0);
            hm[s] = stu.render_heatmap(&kp[s]);
            for v in au[s].data_mut() {
                *v += uniform(&mut r, -1.0, 1.0);
            }
        }
        let out = stu.stu_generate(&coarse, &hm, &kp, &au).map_err(|e| e.to_string())?;
        check(out[..=t] == base[..=t], format!("stu_generate: step {t} changed"))?;
        changed[2] += usize::from(out[t + 1..] != base[t + 1..]);
    }
    check(changed.iter().all(|&c| c == 100), format!("later outputs ignored the perturbation: {changed:?}"))?;
    Ok("100 trials each: prefixes bit-identical, suffixes changed in every trial".into())
}

fn base_keypoints(khp: &KeypointPredictor<f64>, seq: &PairedSequence<f64>) -> std::result::Result<Vec<KeypointSet<f64>>, String> {
    khp.predict_keypoints(&seq.clips).map_err(|e| e.to_string())
}

fn equivariance_trial<T: Scalar>(r: &mut ChaCha8Rng, trial: usize) -> f64 {
    let p = r.random_range(2..=20);
    let dim = r.random_range(1..=8);
    let depth = r.random_range(1..=3);
    let mut a = vec![0.0; p * p];
    for i in 0..p {
        a[i * p + i] = 1.0;
        for j in 0..i {
            if r.random_bool(0.3) {
                a[i * p + j] = 1.0;
                a[j * p + i] = 1.0;
            }
        }
    }
    let deg: Vec<f64> = (0..p).map(|i| a[i * p..(i + 1) * p].iter().sum()).collect();
    let norm: Vec<f64> = (0..p * p).map(|k| a[k] / (deg[k / p] * deg[k % p]).sqrt()).collect();
    let x: Vec<f64> = (0..p * dim).map(|_| uniform(r, -1.0, 1.0)).collect();
    let mut perm: Vec<usize> = (0..p).collect();
    for i in (1..p).rev() {
        perm.swap(i, r.random_range(0..=i));
    }
    let mut store = ParamStore::<T>::new();
    let mut init = rng::stream(trial as u64, "acceptance/gcn");
    let gcn = Gcn::new(&mut store, "gcn", dim, depth, &mut init);
    jitter(&mut store, trial as u64);
    let cast = |v: f64| T::from_f64(v).unwrap();
    let batch = MotionGraphBatch::with_adjacency(
        Tensor::from_fn(&[p, dim], |k| cast(x[k])),
        Tensor::from_fn(&[p, p], |k| cast(norm[k])),
    )
    .unwrap();
    // node i of the original graph becomes node perm[i]
    let mut inv = vec![0; p];
    for (i, &q) in perm.iter().enumerate() {
        inv[q] = i;
    }
    let permuted = MotionGraphBatch::with_adjacency(
        Tensor::from_fn(&[p, dim], |k| cast(x[inv[k / dim] * dim + k % dim])),
        Tensor::from_fn(&[p, p], |k| cast(norm[inv[k / p] * p + inv[k % p]])),
    )
    .unwrap();
    let y = gcn_forward(&batch, &gcn, &store);
    let yp = gcn_forward(&permuted, &gcn, &store);
    let mut worst = 0.0f64;
    for (i, &q) in perm.iter().enumerate() {
        for d in 0..dim {
            let a = y.data()[i * dim + d].to_f64().unwrap();
            let b = yp.data()[q * dim + d].to_f64().unwrap();
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

fn criterion_4() -> Outcome {
    let mut r = rng::stream(4, "acceptance/equivariance");
    let (mut w32, mut w64) = (0.0f64, 0.0f64);
    for trial in 0..200 {
        w32 = w32.max(equivariance_trial::<f32>(&mut r, trial));
        w64 = w64.max(equivariance_trial::<f64>(&mut r, trial));
    }
    check(w32 <= 1e-5 && w64 <= 1e-5, format!("max diff f32 {w32:.3e}, f64 {w64:.3e}"))?;
    Ok(format!("200 random graphs, max abs diff f32 {w32:.1e}, f64 {w64:.1e}"))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn criterion_5() -> Outcome {
    let mut r = rng::stream(5, "acceptance/losses");
    let tol = 1e-6;
    let mut worst = 0.0f64;
    let mut note = |got: f64, want: f64, what: &str| -> std::result::Result<(), String> {
        let d = (got - want).abs();
        worst = worst.max(d);
        check(d <= tol, format!("{what}: got {got}, want {want}"))
    };
    let mut cfg = PipelineConfig::default();
    for _ in 0..50 {
        let (n, p) = (r.random_range(1..=5), r.random_range(1..=12));
        cfg.vis_heatmap_size = r.random_range(4..=20);
        cfg.heatmap_alpha = uniform(&mut r, 0.5, 2.0);
        cfg.lambda_vis = uniform(&mut r, 0.1, 3.0);
        let s = cfg.vis_heatmap_size;
        let pred: Vec<KeypointSet<f64>> = (0..n).map(|_| random_keypoints(&mut r, p, -0.05, 1.05)).collect();
        let real: Vec<KeypointSet<f64>> = (0..n).map(|_| random_keypoints(&mut r, p, 0.0, 1.0)).collect();
        let mut coord = 0.0;
        let mut vis = 0.0;
        for (a, b) in pred.iter().zip(&real) {
            let mut sq = 0.0;
            for k in 0..p {
                for c in 0..2 {
                    sq += (a.coords()[k][c] - b.coords()[k][c]).powi(2);
                }
            }
            coord += sq.sqrt();
            note(khp_coordinate_loss(a, b).unwrap(), sq.sqrt(), "coordinate loss")?;
            let scale = (s - 1) as f64;
            let grid = |k: &KeypointSet<f64>| -> Vec<[f64; 2]> { k.coords().iter().map(|c| [c[0] * scale, c[1] * scale]).collect() };
            let ha = brute_heatmap(&grid(a), s, s, cfg.heatmap_alpha);
            let hb = brute_heatmap(&grid(b), s, s, cfg.heatmap_alpha);
            let v = ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>() / (s * s) as f64;
            vis += v;
            note(khp_visual_loss(a, b, s, s, cfg.heatmap_alpha).unwrap(), v, "visual loss")?;
        }
        coord /= n as f64;
        vis /= n as f64;
        let mut g = Graph::new();
        let preds: Vec<_> = pred.iter().map(|k| g.constant(Tensor::from_vec(&[1, 2 * p], k.flatten()))).collect();
        let (total, c, v) = khp_sequence_loss(&mut g, &preds, &real, &cfg);
        note(g.value(c).item(), coord, "sequence coordinate loss")?;
        note(g.value(v).item(), vis, "sequence visual loss")?;
        note(g.value(total).item(), coord + cfg.lambda_vis * vis, "keypoint objective")?;

        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let fa: Vec<Frame<f64>> = (0..n).map(|_| random_frame(&mut r, h, w)).collect();
        let fb: Vec<Frame<f64>> = (0..n).map(|_| random_frame(&mut r, h, w)).collect();
        let mut l1 = 0.0;
        for (a, b) in fa.iter().zip(&fb) {
            let mut s = 0.0;
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        s += (a.at(y, x, c) - b.at(y, x, c)).abs();
                    }
                }
            }
            l1 += s / (3 * h * w) as f64;
        }
        note(cvg_loss(&fa, &fb).unwrap(), l1 / n as f64, "coarse L1 loss")?;
        note(PerceptualExtractor::identity().perceptual_loss(&fa, &fb).unwrap(), l1 / n as f64, "identity perceptual loss")?;

        let logits_r: Vec<f64> = (0..n).map(|_| uniform(&mut r, -4.0, 4.0)).collect();
        let logits_f: Vec<f64> = (0..n).map(|_| uniform(&mut r, -4.0, 4.0)).collect();
        let sr: Vec<f64> = logits_r.iter().map(|&x| sigmoid(x)).collect();
        let sf: Vec<f64> = logits_f.iter().map(|&x| sigmoid(x)).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let g_adv = mean(&sf.iter().map(|s| -s.ln()).collect::<Vec<_>>());
        let d_std = mean(&sr.iter().map(|s| -s.ln()).collect::<Vec<_>>()) + mean(&sf.iter().map(|s| -(1.0 - s).ln()).collect::<Vec<_>>());
        let d_lit = mean(&sr.iter().map(|s| -s.ln()).collect::<Vec<_>>()) + g_adv;
        note(generator_adv_loss_from_scores(&sf).unwrap(), g_adv, "generator loss")?;
        note(discriminator_loss_from_scores(&sr, &sf, false).unwrap(), d_std, "discriminator loss")?;
        note(discriminator_loss_from_scores(&sr, &sf, true).unwrap(), d_lit, "literal discriminator loss")?;
        for (literal, want) in [(false, d_std), (true, d_lit)] {
            let mut g = Graph::new();
            let a = g.constant(Tensor::from_vec(&[n], logits_r.clone()));
            let b = g.constant(Tensor::from_vec(&[n], logits_f.clone()));
            let d = discriminator_loss_on(&mut g, a, b, literal);
            let ga = generator_adv_loss_on(&mut g, b);
            note(g.value(d).item(), want, "discriminator loss on logits")?;
            note(g.value(ga).item(), g_adv, "generator loss on logits")?;
        }
    }
    let ln2 = std::f64::consts::LN_2;
    note(generator_adv_loss_from_scores(&[0.5]).unwrap(), ln2, "generator loss at 0.5")?;
    note(discriminator_loss_from_scores(&[0.5], &[0.5], false).unwrap(), 2.0 * ln2, "discriminator loss at 0.5")?;
    let mut g = Graph::new();
    let z = g.constant(Tensor::from_vec(&[1], vec![0.0f64]));
    let d = discriminator_loss_on(&mut g, z, z, false);
    let ga = generator_adv_loss_on(&mut g, z);
    note(g.value(ga).item(), ln2, "generator loss at logit 0")?;
    note(g.value(d).item(), 2.0 * ln2, "discriminator loss at logit 0")?;

    // perceptual loss with the frozen extractor against taps summed by hand
    let pcfg = small_config();
    let ext = PerceptualExtractor::<f64>::new(&pcfg);
    let fa: Vec<Frame<f64>> = (0..3).map(|_| random_frame(&mut r, 12, 12)).collect();
    let fb: Vec<Frame<f64>> = (0..3).map(|_| random_frame(&mut r, 12, 12)).collect();
    let mut want = 0.0;
    for (a, b) in fa.iter().zip(&fb) {
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a.tensor().clone()), g.constant(b.tensor().clone()));
        let ta = ext.taps_on(&mut g, va);
        let tb = ext.taps_on(&mut g, vb);
        for (x, y) in ta.into_iter().zip(tb) {
            let (x, y) = (g.value(x).data().to_vec(), g.value(y).data().to_vec());
            want += x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64;
        }
    }
    note(ext.perceptual_loss(&fa, &fb).unwrap(), want / 3.0, "perceptual loss")?;
    Ok(format!("all loss forms match hand computations, max abs diff {worst:.1e}; log 2 and 2 log 2 at score 0.5"))
}

fn criterion_6() -> Outcome {
    let mut r = rng::stream(6, "acceptance/metrics");
    let (mut ssim_err, mut psnr_err, mut kd_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let (h, w) = (r.random_range(11..=40), r.random_range(11..=40));
        let x = random_frame(&mut r, h, w);
        ssim_err = ssim_err.max((ssim(&x, &x).unwrap() - 1.0).abs());
        let lo = Frame::new(Tensor::from_fn(&[3, h, w], |_| uniform(&mut r, 0.0, 0.9))).unwrap();
        let hi = Frame::new(Tensor::from_fn(&[3, h, w], |i| lo.tensor().data()[i] + 0.1)).unwrap();
        psnr_err = psnr_err.max((psnr(&hi, &lo).unwrap() - 20.0).abs());
        let n = r.random_range(1..=6);
        let p = r.random_range(1..=67);
        let a: Vec<KeypointSet<f64>> = (0..n).map(|_| random_keypoints(&mut r, p, 0.0, 1.0)).collect();
        let b: Vec<KeypointSet<f64>> = (0..n).map(|_| random_keypoints(&mut r, p, 0.0, 1.0)).collect();
        let hand = a
            .iter()
            .zip(&b)
            .map(|(u, v)| u.flatten().iter().zip(v.flatten()).map(|(s, t)| (s - t).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / n as f64;
        kd_err = kd_err.max((mean_keypoint_distance(&a, &b).unwrap() - hand).abs());
    }
    check(ssim_err <= 1e-6, format!("ssim(x, x) off by {ssim_err:.3e}"))?;
    check(psnr_err <= 0.01, format!("psnr off by {psnr_err:.3e} dB"))?;
    check(kd_err <= 1e-9, format!("keypoint distance off by {kd_err:.3e}"))?;
    Ok(format!("|ssim(x,x)-1| {ssim_err:.1e}, |psnr-20| {psnr_err:.1e} dB, keypoint distance error {kd_err:.1e}"))
}

struct Trained {
    cfg: PipelineConfig,
    data: Vec<PairedSequence<f32>>,
    khp: KeypointPredictor<f32>,
    cvg: CoarseGenerator<f32>,
}

#[derive(Clone, Copy, Debug)]
struct Quality {
    psnr: f64,
    ssim: f64,
}

fn stu_quality(t: &Trained, model: &FhvgModel<f32>) -> apvg::Result<Quality> {
    let (mut p, mut s, mut n) = (0.0, 0.0, 0.0);
    for seq in &t.data {
        let g = generate_sequence(&t.khp, &t.cvg, &model.stu, &seq.clips, &seq.name, t.cfg.seed)?;
        for (a, b) in g.frames.iter().zip(&seq.frames) {
            p += psnr(a, b)?;
            s += ssim(a, b)?;
            n += 1.0;
        }
    }
    Ok(Quality { psnr: p / n, ssim: s / n })
}

fn criterion_7(slot: &mut Option<(Trained, Quality)>) -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let run = || -> apvg::Result<(Trained, FhvgModel<f32>, f64, f64)> {
        let data: Vec<PairedSequence<f32>> = generate_toy_dataset(&ToyDatasetSpec::from_config(&cfg))?;
        let opts = TrainOptions::default();
        let (khp, _) = train_khp(&data, &cfg, &opts)?;
        let (cvg, _) = train_cvg(&data, &cfg, &opts)?;
        let (model, _) = train_fhvg(&data, &khp, &cvg, &cfg, &opts)?;
        let (mut kd, mut l1) = (0.0, 0.0);
        for seq in &data {
            kd += mean_keypoint_distance(&khp.predict_keypoints(&seq.clips)?, &seq.keypoints)?;
            l1 += f64::from(cvg_loss(&seq.frames, &coarse_video(&cvg, &seq.clips, &seq.name, cfg.seed)?)?);
        }
        let k = data.len() as f64;
        Ok((Trained { cfg: cfg.clone(), data, khp, cvg }, model, kd / k, l1 / k))
    };
    let (trained, model, kd, l1) = run().map_err(|e| e.to_string())?;
    let q = stu_quality(&trained, &model).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let summary = format!(
        "{}x{} toy set: keypoint distance {kd:.4}, coarse L1 {l1:.4}, PSNR {:.2} dB, SSIM {:.4}, {:.1} min",
        cfg.toy_sequences,
        cfg.toy_frames,
        q.psnr,
        q.ssim,
        elapsed.as_secs_f64() / 60.0
    );
    *slot = Some((trained, q));
    check(kd < 0.05, format!("keypoint distance too high: {summary}"))?;
    check(l1 < 0.05, format!("coarse L1 too high: {summary}"))?;
    check(q.psnr >= 25.0 && q.ssim >= 0.8, format!("refined frames too poor: {summary}"))?;
    check(elapsed < Duration::from_secs(30 * 60), format!("over 30 minutes: {summary}"))?;
    Ok(summary)
}

fn criterion_8(slot: &Option<(Trained, Quality)>) -> Outcome {
    let Some((trained, full)) = slot else {
        return Err("needs the full training run".into());
    };
    let mut lines = vec![format!("full PSNR {:.2} / SSIM {:.4}", full.psnr, full.ssim)];
    let mut ok = true;
    for (label, gcn, gru) in [("no GCN", false, true), ("no ConvGRU", true, false)] {
        let mut cfg = trained.cfg.clone();
        cfg.use_gcn = gcn;
        cfg.use_conv_gru = gru;
        let (model, _) = train_fhvg(&trained.data, &trained.khp, &trained.cvg, &cfg, &TrainOptions::default()).map_err(|e| e.to_string())?;
        let q = stu_quality(trained, &model).map_err(|e| e.to_string())?;
        ok &= q.psnr <= full.psnr && q.ssim <= full.ssim;
        lines.push(format!("{label} PSNR {:.2} / SSIM {:.4}", q.psnr, q.ssim));
    }
    let summary = lines.join("; ");
    check(ok, format!("an ablation improved on the full model: {summary}"))?;
    Ok(summary)
}

fn criterion_9() -> Outcome {
    check(
        published::CELLO_PSNR == 17.073 && published::CELLO_SSIM == 0.563 && published::CELLO_KEYPOINT_DISTANCE == 0.117,
        "published reference values differ",
    )?;
    Ok(format!(
        "published cello results (PSNR {} / SSIM {}, keypoint distance {}) and the baseline comparisons need full-scale \
         training on real recordings and are not reproducible at desk scale; criteria 1-8 replace them",
        published::CELLO_PSNR,
        published::CELLO_SSIM,
        published::CELLO_KEYPOINT_DISTANCE
    ))
}

struct Run {
    data: Vec<PairedSequence<f32>>,
    curves: Vec<LossCurve>,
    frames: Vec<Frame<f32>>,
    keypoints: Vec<KeypointSet<f32>>,
}

fn short_run() -> apvg::Result<Run> {
    let mut cfg = PipelineConfig::default();
    cfg.toy_sequences = 2;
    cfg.toy_frames = 8;
    cfg.khp_steps = 20;
    cfg.cvg_steps = 10;
    cfg.fhvg_steps = 10;
    cfg.log_every = 5;
    let data: Vec<PairedSequence<f32>> = generate_toy_dataset(&ToyDatasetSpec::from_config(&cfg))?;
    let opts = TrainOptions::default();
    let (khp, c1) = train_khp(&data, &cfg, &opts)?;
    let (cvg, c2) = train_cvg(&data, &cfg, &opts)?;
    let (model, c3) = train_fhvg(&data, &khp, &cvg, &cfg, &opts)?;
    let g = generate_sequence(&khp, &cvg, &model.stu, &data[0].clips, &data[0].name, cfg.seed)?;
    Ok(Run {
        data,
        curves: vec![c1, c2, c3],
        frames: g.frames,
        keypoints: g.keypoints,
    })
}

fn criterion_10() -> Outcome {
    let a = short_run().map_err(|e| e.to_string())?;
    let b = short_run().map_err(|e| e.to_string())?;
    for (x, y) in a.data.iter().zip(&b.data) {
        check(
            x.frames == y.frames && x.keypoints == y.keypoints && x.clips == y.clips && x.waveform == y.waveform,
            format!("synthesized sequence {} differs", x.name),
        )?;
    }
    check(a.curves == b.curves, "loss curves differ")?;
    check(a.frames == b.frames && a.keypoints == b.keypoints, "generated outputs differ")?;
    Ok("two identical runs: synthetic data, all three loss curves and generated outputs bitwise equal".into())
}

/// Criterion numbers given on the command line, or all of them.
fn selected() -> Vec<usize> {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=10).contains(n)).collect();
    if picked.is_empty() {
        (1..=10).collect()
    } else {
        picked
    }
}

fn main() {
    let names = [
        "landmark heatmap correctness",
        "heatmap partition of unity",
        "causality",
        "GCN permutation equivariance",
        "loss oracles",
        "metric oracles",
        "toy overfit",
        "ablation direction",
        "non-reproducibility statement",
        "determinism",
    ];
    let picked = selected();
    let mut trained = None;
    let mut failed = 0;
    for &id in &picked {
        let outcome = match id {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(&mut trained),
            8 => {
                if trained.is_none() {
                    let _ = criterion_7(&mut trained);
                }
                criterion_8(&trained)
            }
            9 => criterion_9(),
            _ => criterion_10(),
        };
        let name = names[id - 1];
        match outcome {
            Ok(detail) => println!("PASS criterion {id} ({name}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", picked.len());
        std::process::exit(1);
    }
}
