//! Frame fidelity and keypoint metrics.

use std::collections::BTreeMap;

use apvg_tensor::Scalar;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{BODY_POINTS, HAND_POINTS, LEFT_HAND_OFFSET, OPENPOSE_POINTS, RIGHT_HAND_OFFSET};
use crate::types::{Frame, KeypointSet};

/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Published full-method numbers on the real dataset, kept for reports.
pub mod published {
    pub const CELLO_PSNR: f64 = 17.073;
    pub const CELLO_SSIM: f64 = 0.563;
    pub const TROMBONE_PSNR: f64 = 15.910;
    pub const TROMBONE_SSIM: f64 = 0.397;
    pub const CELLO_KEYPOINT_DISTANCE: f64 = 0.117;
    pub const TROMBONE_KEYPOINT_DISTANCE: f64 = 0.392;
}

fn same_shape<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<()> {
    if a.tensor().shape() != b.tensor().shape() {
        return Err(Error::Shape(format!(
            "frames {:?} and {:?}",
            a.tensor().shape(),
            b.tensor().shape()
        )));
    }
    Ok(())
}

pub fn mse<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a
        .tensor()
        .data()
        .iter()
        .zip(b.tensor().data())
        .map(|(x, y)| (x.to_f64().unwrap() - y.to_f64().unwrap()).powi(2))
        .sum();
    Ok(s / a.tensor().numel() as f64)
}

/// Peak 1.0; identical frames give [`PSNR_CAP`].
pub fn psnr<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Valid-mode separable filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let n = SSIM_WINDOW;
    let (ho, wo) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows and all channels.
pub fn ssim<T: Scalar>(a: &Frame<T>, b: &Frame<T>) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    let k = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let plane = |f: &Frame<T>, c: usize| -> Vec<f64> {
        f.tensor().data()[c * h * w..(c + 1) * h * w]
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        let x = plane(a, c);
        let y = plane(b, c);
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, h, w, &k);
        let my = filter_valid(&y, h, w, &k);
        let xx = filter_valid(&prod(&x, &x), h, w, &k);
        let yy = filter_valid(&prod(&y, &y), h, w, &k);
        let xy = filter_valid(&prod(&x, &y), h, w, &k);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = xx[i] - ux * ux;
            let vy = yy[i] - uy * uy;
            let cov = xy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}

/// Mean over frames of the stacked L2 keypoint distance.
pub fn mean_keypoint_distance<T: Scalar>(pred: &[KeypointSet<T>], real: &[KeypointSet<T>]) -> Result<f64> {
    if pred.len() != real.len() {
        return Err(Error::Misaligned {
            name: "keypoints".into(),
            reason: format!("{} predicted frames vs {} reference frames", pred.len(), real.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::Empty("no keypoint frames".into()));
    }
    let mut total = 0.0;
    for (p, r) in pred.iter().zip(real) {
        total += crate::khp::khp_coordinate_loss(p, r)?.to_f64().unwrap();
    }
    Ok(total / pred.len() as f64)
}

/// One-dimensional PCA projection of a keypoint group over time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaTrace {
    pub group: String,
    pub values: Vec<f64>,
    /// Top eigenvalue of the (1/n) covariance, the variance of `values`.
    pub variance: f64,
    /// Loading vector, first coefficient non-negative.
    pub loading: Vec<f64>,
    /// Set when the group never moves; `values` are then all zero.
    pub degenerate: bool,
}

/// Index ranges of the traced groups for a `p`-point layout.
pub fn pca_groups(p: usize) -> Vec<(&'static str, std::ops::Range<usize>)> {
    if p == OPENPOSE_POINTS {
        vec![
            ("left_hand", LEFT_HAND_OFFSET..LEFT_HAND_OFFSET + HAND_POINTS),
            ("right_hand", RIGHT_HAND_OFFSET..RIGHT_HAND_OFFSET + HAND_POINTS),
            ("body", 0..BODY_POINTS),
        ]
    } else {
        vec![("all", 0..p)]
    }
}

fn pca_1d(rows: &[Vec<f64>], group: &str) -> PcaTrace {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let (top, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    if v.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let scale = rows.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    if lambda <= 1e-12 * scale * scale {
        return PcaTrace {
            group: group.to_string(),
            values: vec![0.0; n],
            variance: 0.0,
            loading: v,
            degenerate: true,
        };
    }
    let values = (0..n)
        .map(|i| centered.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
        .collect();
    PcaTrace {
        group: group.to_string(),
        values,
        variance: lambda.max(0.0),
        loading: v,
        degenerate: false,
    }
}

/// Per-group 1-D PCA traces of a keypoint sequence.
pub fn pca_trace<T: Scalar>(seq: &[KeypointSet<T>]) -> Result<Vec<PcaTrace>> {
    if seq.len() < 2 {
        return Err(Error::Empty("PCA trace needs at least 2 frames".into()));
    }
    let p = seq[0].len();
    if seq.iter().any(|k| k.len() != p) {
        return Err(Error::Shape("keypoint sets of differing sizes".into()));
    }
    Ok(pca_groups(p)
        .into_iter()
        .map(|(name, range)| {
            let rows: Vec<Vec<f64>> = seq
                .iter()
                .map(|k| {
                    k.coords()[range.clone()]
                        .iter()
                        .flat_map(|c| [c[0].to_f64().unwrap(), c[1].to_f64().unwrap()])
                        .collect()
                })
                .collect();
            pca_1d(&rows, name)
        })
        .collect())
}

pub fn pca_csv(traces: &[PcaTrace]) -> String {
    let mut s = String::from("frame");
    for t in traces {
        s.push(',');
        s.push_str(&t.group);
    }
    s.push('\n');
    let n = traces.first().map_or(0, |t| t.values.len());
    for i in 0..n {
        s.push_str(&i.to_string());
        for t in traces {
            s.push_str(&format!(",{}", t.values[i]));
        }
        s.push('\n');
    }
    s
}


/// Renders traces as a line plot, one color per group, each trace scaled to its own range.
pub fn pca_plot(traces: &[PcaTrace], width: u32, height: u32) -> image::RgbImage {
    const COLORS: [[u8; 3]; 4] = [[200, 40, 40], [40, 90, 200], [30, 150, 60], [120, 60, 160]];
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    let band = height as f64 / traces.len().max(1) as f64;
    for (k, t) in traces.iter().enumerate() {
        let n = t.values.len();
        if n < 2 {
            continue;
        }
        let lo = t.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        let top = k as f64 * band;
        let point = |i: usize| {
            let x = i as f64 / (n - 1) as f64 * (width - 1) as f64;
            let y = top + (1.0 - (t.values[i] - lo) / span) * (band - 1.0) * 0.9 + band * 0.05;
            (x, y)
        };
        let color = image::Rgb(COLORS[k % COLORS.len()]);
        for i in 1..n {
            let (x0, y0) = point(i - 1);
            let (x1, y1) = point(i);
            let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let a = s as f64 / steps as f64;
                let x = (x0 + a * (x1 - x0)).round() as u32;
                let y = (y0 + a * (y1 - y0)).round() as u32;
                if x < width && y < height {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    img
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub name: String,
    pub frames: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub keypoint_distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub keypoint_distance: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub checkpoints: BTreeMap<String, String>,
    pub sequences: Vec<SequenceMetrics>,
    pub mean: MeanMetrics,
}

/// Frame and keypoint metrics of one generated sequence against its reference.
/// Predicted and reference keypoints of one sequence.
pub type KeypointPair<'a, T> = (&'a [KeypointSet<T>], &'a [KeypointSet<T>]);

pub fn evaluate_sequence<T: Scalar>(
    name: &str,
    generated: &[Frame<T>],
    reference: &[Frame<T>],
    keypoints: Option<KeypointPair<'_, T>>,
) -> Result<SequenceMetrics> {
    if generated.len() != reference.len() {
        return Err(Error::Misaligned {
            name: name.to_string(),
            reason: format!("{} generated frames vs {} reference frames", generated.len(), reference.len()),
        });
    }
    if generated.is_empty() {
        return Err(Error::Empty(format!("sequence `{name}` has no frames")));
    }
    let n = generated.len() as f64;
    let mut p = 0.0;
    let mut s = 0.0;
    for (a, b) in generated.iter().zip(reference) {
        p += psnr(a, b)?;
        s += ssim(a, b)?;
    }
    let keypoint_distance = keypoints
        .map(|(pred, real)| mean_keypoint_distance(pred, real))
        .transpose()?;
    Ok(SequenceMetrics {
        name: name.to_string(),
        frames: generated.len(),
        psnr: p / n,
        ssim: s / n,
        keypoint_distance,
    })
}

impl EvalReport {
    /// Frame-weighted means over `sequences`.
    pub fn from_sequences(config_hash: String, checkpoints: BTreeMap<String, String>, sequences: Vec<SequenceMetrics>) -> Self {
        let frames: usize = sequences.iter().map(|s| s.frames).sum();
        let f = frames.max(1) as f64;
        let psnr = sequences.iter().map(|s| s.psnr * s.frames as f64).sum::<f64>() / f;
        let ssim = sequences.iter().map(|s| s.ssim * s.frames as f64).sum::<f64>() / f;
        let keypoint_distance = if sequences.iter().all(|s| s.keypoint_distance.is_some()) && !sequences.is_empty() {
            Some(
                sequences
                    .iter()
                    .map(|s| s.keypoint_distance.unwrap() * s.frames as f64)
                    .sum::<f64>()
                    / f,
            )
        } else {
            None
        };
        Self {
            config_hash,
            checkpoints,
            sequences,
            mean: MeanMetrics {
                psnr,
                ssim,
                keypoint_distance,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use apvg_tensor::Tensor;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_frame(seed: u64, h: usize, w: usize) -> Frame<f64> {
        let mut r = crate::rng::stream(seed, "test/frame");
        Frame::new(Tensor::from_fn(&[3, h, w], |_| r.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = random_frame(0, 16, 16);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let lo = Frame::new(Tensor::from_fn(&[3, 8, 8], |i| (i % 7) as f64 / 10.0)).unwrap();
        let hi = Frame::new(lo.tensor().map(|v| v + 0.1)).unwrap();
        assert!((psnr(&lo, &hi).unwrap() - 20.0).abs() < 1e-9);
        let b = Frame::<f64>::filled(8, 9, [0.0; 3]);
        assert!(psnr(&lo, &b).is_err());
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = random_frame(1, 24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let inv = Frame::new(a.tensor().map(|v| 1.0 - v)).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let c = Frame::<f64>::filled(12, 12, [0.5; 3]);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Frame::<f64>::filled(8, 8, [0.1; 3]), &Frame::filled(8, 8, [0.1; 3])).is_err());
    }

    #[test]
    fn keypoint_distance_offset() {
        let real: Vec<KeypointSet<f64>> = (0..3)
            .map(|t| KeypointSet::new(vec![[0.1 * t as f64, 0.2]; 5], "x").unwrap())
            .collect();
        let pred: Vec<KeypointSet<f64>> = real
            .iter()
            .map(|k| KeypointSet::new(k.coords().iter().map(|c| [c[0] + 0.1, c[1]]).collect(), "x").unwrap())
            .collect();
        let d = mean_keypoint_distance(&pred, &real).unwrap();
        assert!((d - (5.0f64 * 0.01).sqrt()).abs() < 1e-12);
        assert_eq!(mean_keypoint_distance(&real, &real).unwrap(), 0.0);
        assert!(mean_keypoint_distance(&real[..2], &real).is_err());
    }

    #[test]
    fn pca_constant_and_linear() {
        let still: Vec<KeypointSet<f64>> = (0..4).map(|_| KeypointSet::new(vec![[0.3, 0.4]; 67], "x").unwrap()).collect();
        let tr = pca_trace(&still).unwrap();
        assert_eq!(tr.len(), 3);
        assert!(tr.iter().all(|t| t.degenerate && t.values.iter().all(|&v| v == 0.0)));

        let moving: Vec<KeypointSet<f64>> = (0..6)
            .map(|t| KeypointSet::new(vec![[0.1 + 0.05 * t as f64, 0.5]; 4], "x").unwrap())
            .collect();
        let tr = pca_trace(&moving).unwrap();
        assert_eq!(tr[0].group, "all");
        let v = &tr[0].values;
        let step = v[1] - v[0];
        assert!(step > 0.0);
        for i in 1..v.len() {
            assert!((v[i] - v[i - 1] - step).abs() < 1e-12);
        }
    }

    #[test]
    fn report_means_weight_by_frames() {
        let r = EvalReport::from_sequences(
            "h".into(),
            BTreeMap::new(),
            vec![
                SequenceMetrics { name: "a".into(), frames: 1, psnr: 10.0, ssim: 0.5, keypoint_distance: Some(1.0) },
                SequenceMetrics { name: "b".into(), frames: 3, psnr: 20.0, ssim: 0.9, keypoint_distance: Some(0.0) },
            ],
        );
        assert!((r.mean.psnr - 17.5).abs() < 1e-12);
        assert!((r.mean.ssim - 0.8).abs() < 1e-12);
        assert_eq!(r.mean.keypoint_distance, Some(0.25));
    }

    /// Oracle: SSIM evaluated window by window with a 2-D kernel.
    fn ssim_direct(a: &Frame<f64>, b: &Frame<f64>) -> f64 {
        let (h, w) = (a.height(), a.width());
        let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let norm: f64 = g.iter().sum::<f64>().powi(2);
        let (c1, c2) = (1e-4, 9e-4);
        let (mut total, mut count) = (0.0, 0);
        for c in 0..3 {
            let px = |f: &Frame<f64>, y: usize, x: usize| f.tensor().data()[c * h * w + y * w + x];
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = g[i] * g[j] / norm;
                            let (u, v) = (px(a, y0 + i, x0 + j), px(b, y0 + i, x0 + j));
                            mx += k * u;
                            my += k * v;
                            sxx += k * u * u;
                            syy += k * v * v;
                            sxy += k * u * v;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let a = random_frame(5, 20, 17);
        let b = Frame::new(Tensor::from_fn(&[3, 20, 17], |i| {
            let v = a.tensor().data()[i];
            (0.7 * v + 0.2 * ((i % 13) as f64 / 13.0)).clamp(0.0, 1.0)
        }))
        .unwrap();
        assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn psnr_matches_brute_force() {
        let a = random_frame(7, 9, 11);
        let b = random_frame(8, 9, 11);
        let mut sum = 0.0;
        for (x, y) in a.tensor().data().iter().zip(b.tensor().data()) {
            sum += (x - y) * (x - y);
        }
        let expected = 10.0 * (297.0 / sum).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn pca_variance_is_top_eigenvalue() {
        let mut r = crate::rng::stream(3, "test/pca");
        let seq: Vec<KeypointSet<f64>> = (0..12)
            .map(|_| KeypointSet::new((0..3).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect(), "x").unwrap())
            .collect();
        let t = &pca_trace(&seq).unwrap()[0];
        let var = t.values.iter().map(|v| v * v).sum::<f64>() / 12.0;
        assert!((var - t.variance).abs() < 1e-10);
        // power iteration on the covariance
        let rows: Vec<Vec<f64>> = seq.iter().map(|k| k.coords().iter().flat_map(|c| [c[0], c[1]]).collect()).collect();
        let d = 6;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 12.0).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / 12.0).collect())
            .collect();
        let mut v = vec![1.0; d];
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let nv: Vec<f64> = (0..d).map(|i| (0..d).map(|j| cov[i][j] * v[j]).sum()).collect();
            lambda = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = nv.iter().map(|x| x / lambda).collect();
        }
        assert!((lambda - t.variance).abs() < 1e-8);
        assert!(t.loading[0] >= 0.0);
    }

    #[test]
    fn plot_has_ink() {
        let t = PcaTrace { group: "g".into(), values: vec![0.0, 1.0, -1.0, 0.5], variance: 1.0, loading: vec![1.0], degenerate: false };
        let img = pca_plot(&[t.clone(), t], 64, 48);
        assert!(img.pixels().any(|p| p.0 != [255, 255, 255]));
    }

    proptest! {
        #[test]
        fn psnr_and_ssim_are_symmetric(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random_frame(s1, 12, 13);
            let b = random_frame(s2 + 1000, 12, 13);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn pca_ignores_global_rotation(angle in 0.0f64..std::f64::consts::TAU, seed in 0u64..100) {
            let mut r = crate::rng::stream(seed, "test/pca");
            let seq: Vec<KeypointSet<f64>> = (0..8)
                .map(|_| KeypointSet::new((0..5).map(|_| [r.random_range(0.0..1.0), r.random_range(0.0..1.0)]).collect(), "x").unwrap())
                .collect();
            let (s, c) = angle.sin_cos();
            let rotated: Vec<KeypointSet<f64>> = seq
                .iter()
                .map(|k| KeypointSet::new(k.coords().iter().map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect(), "x").unwrap())
                .collect();
            let a = &pca_trace(&seq).unwrap()[0];
            let b = &pca_trace(&rotated).unwrap()[0];
            prop_assert!((a.variance - b.variance).abs() < 1e-9);
            // equal up to the sign fixed by the loading convention
            let same = a.values.iter().zip(&b.values).all(|(x, y)| (x - y).abs() < 1e-7);
            let flipped = a.values.iter().zip(&b.values).all(|(x, y)| (x + y).abs() < 1e-7);
            prop_assert!(same || flipped);
        }
    }
}
