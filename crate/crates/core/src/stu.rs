//! Structured temporal UNet: a strided encoder over the coarse frame and
//! keypoint heatmap, a convolutional GRU on the bottleneck, a graph
//! convolution over keypoint-anchored feature blocks, and a skip-connected
//! decoder that also sees the audio feature.

use std::path::Path;

use apvg_tensor::nn::{Conv2d, ConvGruCell, ConvSpec, Init, Linear};
use apvg_tensor::{CustomOp, Graph, ParamStore, Scalar, Tensor, Var};

use crate::checkpoint::Checkpoint;
use crate::config::{PipelineConfig, Stage};
use crate::cvg::logit;
use crate::dlt::{render_heatmap, to_grid};
use crate::error::{Error, Result};
use crate::rng;
use crate::skeleton::SkeletonGraph;
use crate::types::{Frame, Heatmap, KeypointSet};

const SLOPE: f64 = 0.1;

/// Up to four `(flat index, weight)` pairs of a bilinear read at `(u, v)`;
/// cells outside the map are dropped, which reads them as zero.
fn bilinear_taps<T: Scalar>(u: T, v: T, h: usize, w: usize) -> impl Iterator<Item = (usize, T)> {
    let (x0, y0) = (u.floor(), v.floor());
    let (fx, fy) = (u - x0, v - y0);
    let (x0, y0) = (x0.to_isize().unwrap_or(isize::MIN / 2), y0.to_isize().unwrap_or(isize::MIN / 2));
    let wx = [(x0, T::one() - fx), (x0 + 1, fx)];
    let wy = [(y0, T::one() - fy), (y0 + 1, fy)];
    wy.into_iter().flat_map(move |(y, ay)| {
        wx.into_iter().filter_map(move |(x, ax)| {
            let wgt = ax * ay;
            (wgt != T::zero() && x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h)
                .then(|| (y as usize * w + x as usize, wgt))
        })
    })
}

/// Where the `k x k` blocks of one frame sit on a `[C, H, W]` map.
#[derive(Clone, Debug)]
pub struct BlockGeometry<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub k: usize,
    /// Block centers in map cells, `(column, row)`.
    pub centers: Vec<[T; 2]>,
}

impl<T: Scalar> BlockGeometry<T> {
    pub fn new(shape: &[usize], keypoints: &KeypointSet<T>, k: usize) -> Result<Self> {
        if shape.len() != 3 {
            return Err(Error::Shape(format!("feature map must be [C,H,W], got {shape:?}")));
        }
        if k.is_multiple_of(2) {
            return Err(Error::config("block_size", "must be odd"));
        }
        let g = to_grid(keypoints, shape[2], shape[1]);
        Ok(Self {
            channels: shape[0],
            height: shape[1],
            width: shape[2],
            k,
            centers: g.points,
        })
    }

    pub fn node_dim(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, T)) {
        let r = (self.k / 2) as isize;
        let d = self.node_dim();
        let kk = self.k * self.k;
        for (p, c) in self.centers.iter().enumerate() {
            for dy in 0..self.k {
                for dx in 0..self.k {
                    let u = c[0] + T::from_isize(dx as isize - r).unwrap();
                    let v = c[1] + T::from_isize(dy as isize - r).unwrap();
                    for (idx, wgt) in bilinear_taps(u, v, self.height, self.width) {
                        for ch in 0..self.channels {
                            f(p * d + ch * kk + dy * self.k + dx, ch * self.height * self.width + idx, wgt);
                        }
                    }
                }
            }
        }
    }

    /// Node features `[P, C*k*k]`, laid out channel-major within a block.
    pub fn sample(&self, map: &[T]) -> Tensor<T> {
        let mut out = vec![T::zero(); self.centers.len() * self.node_dim()];
        self.for_each_tap(|o, i, w| out[o] += w * map[i]);
        Tensor::from_vec(&[self.centers.len(), self.node_dim()], out)
    }

    /// Adds the transposed bilinear read of `nodes` into `map`.
    pub fn scatter_add(&self, nodes: &[T], map: &mut [T]) {
        self.for_each_tap(|o, i, w| map[i] += w * nodes[o]);
    }

    /// Per-cell `1 / max(1, coverage)`, where coverage is the total bilinear
    /// weight that all blocks write into the cell.
    pub fn overlap_scale(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut cov = vec![T::zero(); plane];
        let r = (self.k / 2) as isize;
        for c in &self.centers {
            for dy in 0..self.k {
                for dx in 0..self.k {
                    let u = c[0] + T::from_isize(dx as isize - r).unwrap();
                    let v = c[1] + T::from_isize(dy as isize - r).unwrap();
                    for (idx, wgt) in bilinear_taps(u, v, self.height, self.width) {
                        cov[idx] += wgt;
                    }
                }
            }
        }
        cov.into_iter().map(|c| T::one() / c.max(T::one())).collect()
    }

    fn scale_map(&self, scale: &[T], map: &[T]) -> Vec<T> {
        let plane = self.height * self.width;
        map.iter().enumerate().map(|(i, &v)| v * scale[i % plane]).collect()
    }
}

struct SampleOp<T>(BlockGeometry<T>);

impl<T: Scalar> CustomOp<T> for SampleOp<T> {
    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        self.0.sample(inputs[0].data())
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mut g = Tensor::zeros(inputs[0].shape());
        self.0.scatter_add(grad.data(), g.data_mut());
        vec![Some(g)]
    }
}

/// `map + scale * scatter(nodes)`, with `scale` from [`BlockGeometry::overlap_scale`].
struct FuseOp<T> {
    geo: BlockGeometry<T>,
    scale: Vec<T>,
}

impl<T: Scalar> FuseOp<T> {
    fn new(geo: BlockGeometry<T>) -> Self {
        let scale = geo.overlap_scale();
        Self { geo, scale }
    }
}

impl<T: Scalar> CustomOp<T> for FuseOp<T> {
    fn forward(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        let mut add = Tensor::zeros(inputs[0].shape());
        self.geo.scatter_add(inputs[1].data(), add.data_mut());
        let add = self.geo.scale_map(&self.scale, add.data());
        let mut out = inputs[0].clone();
        for (o, a) in out.data_mut().iter_mut().zip(add) {
            *o += a;
        }
        out
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let scaled = self.geo.scale_map(&self.scale, grad.data());
        vec![Some(grad.clone()), Some(self.geo.sample(&scaled))]
    }
}

/// Bilinearly sampled `k x k` blocks around each keypoint of a `[C, H, W]` map.
pub fn extract_feature_blocks<T: Scalar>(map: &Tensor<T>, keypoints: &KeypointSet<T>, k: usize) -> Result<Tensor<T>> {
    Ok(BlockGeometry::new(map.shape(), keypoints, k)?.sample(map.data()))
}

/// `map` plus the refined blocks written back at the same locations.
pub fn scatter_blocks<T: Scalar>(map: &Tensor<T>, nodes: &Tensor<T>, keypoints: &KeypointSet<T>, k: usize) -> Result<Tensor<T>> {
    let geo = BlockGeometry::new(map.shape(), keypoints, k)?;
    if nodes.shape() != [keypoints.len(), geo.node_dim()] {
        return Err(Error::Shape(format!(
            "nodes {:?}, expected [{}, {}]",
            nodes.shape(),
            keypoints.len(),
            geo.node_dim()
        )));
    }
    let mut out = map.clone();
    geo.scatter_add(nodes.data(), out.data_mut());
    Ok(out)
}

/// Like [`scatter_blocks`], but cells written by overlapping blocks receive
/// the weight-averaged contribution instead of the sum.
pub fn fuse_blocks<T: Scalar>(map: &Tensor<T>, nodes: &Tensor<T>, keypoints: &KeypointSet<T>, k: usize) -> Result<Tensor<T>> {
    let geo = BlockGeometry::new(map.shape(), keypoints, k)?;
    if nodes.shape() != [keypoints.len(), geo.node_dim()] {
        return Err(Error::Shape(format!(
            "nodes {:?}, expected [{}, {}]",
            nodes.shape(),
            keypoints.len(),
            geo.node_dim()
        )));
    }
    Ok(FuseOp::new(geo).forward(&[map, nodes]))
}

/// Feature blocks of one frame together with the graph they live on.
#[derive(Clone, Debug)]
pub struct MotionGraphBatch<T> {
    pub nodes: Tensor<T>,
    pub adjacency: Tensor<T>,
}

impl<T: Scalar> MotionGraphBatch<T> {
    pub fn new(nodes: Tensor<T>, skeleton: &SkeletonGraph) -> Result<Self> {
        Self::with_adjacency(nodes, skeleton.adjacency_tensor())
    }

    pub fn with_adjacency(nodes: Tensor<T>, adjacency: Tensor<T>) -> Result<Self> {
        let p = nodes.dim(0);
        if nodes.shape().len() != 2 || adjacency.shape() != [p, p] {
            return Err(Error::Shape(format!(
                "nodes {:?} with adjacency {:?}",
                nodes.shape(),
                adjacency.shape()
            )));
        }
        Ok(Self { nodes, adjacency })
    }
}

/// Stacked graph convolutions `X <- act(A X W + b)`; the last layer is linear.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub layers: Vec<Linear>,
}

impl Gcn {
    /// Hidden layers are rectified; the last is bias-free and starts at zero.
    pub fn new<T: Scalar, R: rand::Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, dim: usize, depth: usize, rng: &mut R) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let last = i + 1 == depth;
                let init = if last { Init::Zeros } else { Init::He };
                Linear::new(store, &format!("{name}.{i}"), dim, dim, !last, init, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward_on<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, adjacency: Var, nodes: Var) -> Var {
        let mut x = nodes;
        for (i, l) in self.layers.iter().enumerate() {
            let ax = g.matmul(adjacency, x);
            x = l.forward(g, store, ax);
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        x
    }
}

pub fn gcn_forward<T: Scalar>(batch: &MotionGraphBatch<T>, gcn: &Gcn, store: &ParamStore<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let a = g.constant(batch.adjacency.clone());
    let x = g.constant(batch.nodes.clone());
    let y = gcn.forward_on(&mut g, store, a, x);
    g.value(y).clone()
}

/// Recurrent state carried between frames: the fused bottleneck feature.
#[derive(Clone, Debug, Default)]
pub struct StuState<T> {
    pub hq: Option<Tensor<T>>,
}

/// Intervention hooks for probing a forward pass.
#[derive(Clone, Debug, Default)]
pub struct StuProbe<T> {
    pub forced_update: Option<T>,
    /// 1-based encoder level whose output is replaced by zeros.
    pub zero_level: Option<usize>,
}

/// Per-frame inputs already on the tape.
#[derive(Clone, Copy, Debug)]
pub struct StuInputs {
    /// `[3, S, S]`
    pub coarse: Var,
    /// `[3, S, S]`, logit of the coarse frame
    pub base: Var,
    /// `[1, S, S]`
    pub heatmap: Var,
    /// `[1, D_a]`
    pub audio: Var,
}

pub struct Stu<T: Scalar> {
    pub store: ParamStore<T>,
    encoder: Vec<Conv2d>,
    gru: ConvGruCell,
    gcn: Gcn,
    audio_proj: Linear,
    decoder: Vec<Conv2d>,
    refine: Conv2d,
    out: Conv2d,
    adjacency: Tensor<T>,
    pub channels: Vec<usize>,
    pub image_size: usize,
    pub heatmap_size: usize,
    pub alpha: T,
    pub gcn_level: usize,
    pub block_size: usize,
    pub audio_dim: usize,
    pub use_gcn: bool,
    pub use_conv_gru: bool,
}

impl<T: Scalar> Stu<T> {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let skeleton = cfg.skeleton()?;
        let mut rng = rng::stream(cfg.seed, "stu/init");
        let mut store = ParamStore::new();
        let levels = cfg.stu_levels;
        let channels: Vec<usize> = (0..levels).map(|i| (cfg.stu_width << i).min(cfg.stu_max_channels)).collect();
        let mut conv = |store: &mut ParamStore<T>, name: &str, spec: ConvSpec| Conv2d::new(store, name, spec, &mut rng);
        let mut encoder = Vec::with_capacity(levels);
        let mut prev = 4;
        for (i, &c) in channels.iter().enumerate() {
            encoder.push(conv(&mut store, &format!("encoder.{i}"), ConvSpec::square(prev, c, 3, 2)));
            prev = c;
        }
        let cb = channels[levels - 1];
        let mut decoder = Vec::with_capacity(levels);
        let mut incoming = cb + cfg.stu_audio_channels;
        for level in (1..=levels).rev() {
            let out = if level == 1 { cfg.stu_width } else { channels[level - 2] };
            let name = format!("decoder.{}", levels - level);
            decoder.push(conv(&mut store, &name, ConvSpec::square(incoming, out, 3, 1)));
            incoming = out + if level > 1 { channels[level - 2] } else { 0 };
        }
        let refine = conv(&mut store, "refine", ConvSpec::square(cfg.stu_width + 4, cfg.stu_width, 3, 1));
        let out = conv(&mut store, "out", ConvSpec::square(cfg.stu_width, 3, 1, 1).init(Init::Zeros));
        let gru = ConvGruCell::new(&mut store, "gru", cb, cb, 3, &mut rng);
        let node_dim = cfg.block_size * cfg.block_size * channels[cfg.gcn_level - 1];
        let gcn = Gcn::new(&mut store, "gcn", node_dim, cfg.gcn_layers, &mut rng);
        let audio_proj = Linear::new(&mut store, "audio_proj", cfg.audio_dim, cfg.stu_audio_channels, true, Init::He, &mut rng);
        Ok(Self {
            store,
            encoder,
            gru,
            gcn,
            audio_proj,
            decoder,
            refine,
            out,
            adjacency: skeleton.adjacency_tensor(),
            channels,
            image_size: cfg.image_size,
            heatmap_size: cfg.vis_heatmap_size,
            alpha: T::from_f64(cfg.heatmap_alpha).unwrap(),
            gcn_level: cfg.gcn_level,
            block_size: cfg.block_size,
            audio_dim: cfg.audio_dim,
            use_gcn: cfg.use_gcn,
            use_conv_gru: cfg.use_conv_gru,
        })
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn gcn(&self) -> &Gcn {
        &self.gcn
    }

    /// Keypoint heatmap at the configured heatmap resolution.
    pub fn render_heatmap(&self, keypoints: &KeypointSet<T>) -> Heatmap<T> {
        let s = self.heatmap_size;
        render_heatmap(&to_grid(keypoints, s, s), s, s, self.alpha)
    }

    /// Nearest-neighbour resize of a heatmap to a `[1, S, S]` input plane.
    pub fn heatmap_plane(&self, h: &Heatmap<T>) -> Tensor<T> {
        let s = self.image_size;
        Tensor::from_fn(&[1, s, s], |i| {
            let (y, x) = (i / s, i % s);
            h.get(x * h.width / s, y * h.height / s)
        })
    }

    fn check_frame(&self, f: &Frame<T>) -> Result<()> {
        if f.height() != self.image_size || f.width() != self.image_size {
            return Err(Error::Shape(format!(
                "frame is {}x{}, expected {s}x{s}",
                f.height(),
                f.width(),
                s = self.image_size
            )));
        }
        Ok(())
    }

    fn check_audio(&self, a: &Tensor<T>) -> Result<()> {
        if a.numel() != self.audio_dim {
            return Err(Error::Shape(format!("audio feature has {} values, expected {}", a.numel(), self.audio_dim)));
        }
        Ok(())
    }

    /// Puts one frame's inputs on the tape.
    pub fn inputs_on(&self, g: &mut Graph<T>, coarse: &Frame<T>, heatmap: &Heatmap<T>, audio: &Tensor<T>) -> Result<StuInputs> {
        self.check_frame(coarse)?;
        self.check_audio(audio)?;
        Ok(StuInputs {
            coarse: g.constant(coarse.tensor().clone()),
            base: g.constant(logit(coarse.tensor())),
            heatmap: g.constant(self.heatmap_plane(heatmap)),
            audio: g.constant(audio.clone().reshape(&[1, self.audio_dim])),
        })
    }

    fn encode_on(&self, g: &mut Graph<T>, x: Var) -> Vec<Var> {
        let slope = T::from_f64(SLOPE).unwrap();
        let mut x = x;
        let mut pyramid = Vec::with_capacity(self.encoder.len());
        for c in &self.encoder {
            x = c.forward(g, &self.store, x);
            x = g.leaky_relu(x, slope);
            pyramid.push(x);
        }
        pyramid
    }

    /// Encoder pyramid, finest level first; the last entry is the bottleneck.
    pub fn stu_encode(&self, coarse: &Frame<T>, heatmap: &Heatmap<T>) -> Result<Vec<Tensor<T>>> {
        self.check_frame(coarse)?;
        let mut g = Graph::new();
        let c = g.constant(coarse.tensor().clone());
        let h = g.constant(self.heatmap_plane(heatmap));
        let x = g.concat(&[c, h]);
        Ok(self.encode_on(&mut g, x).into_iter().map(|v| g.value(v).clone()).collect())
    }

    /// Gated fusion of the bottleneck with the previous fused feature.
    pub fn conv_gru_fuse(&self, f1: &Tensor<T>, prev: &Tensor<T>, forced_update: Option<T>) -> Result<Tensor<T>> {
        if f1.shape() != prev.shape() {
            return Err(Error::Shape(format!("bottleneck {:?} vs state {:?}", f1.shape(), prev.shape())));
        }
        let mut g = Graph::new();
        let x = g.constant(f1.clone());
        let h = g.constant(prev.clone());
        let y = self.gru.forward_probe(&mut g, &self.store, x, h, forced_update);
        Ok(g.value(y).clone())
    }

    /// One frame on the tape; returns the frame `[3, S, S]` and the new state.
    pub fn step_on(
        &self,
        g: &mut Graph<T>,
        inputs: StuInputs,
        keypoints: &KeypointSet<T>,
        prev: Option<Var>,
        probe: &StuProbe<T>,
    ) -> Result<(Var, Var)> {
        let slope = T::from_f64(SLOPE).unwrap();
        let levels = self.levels();
        let x0 = g.concat(&[inputs.coarse, inputs.heatmap]);
        let mut skips = self.encode_on(g, x0);
        if let Some(l) = probe.zero_level {
            let shape = g.shape(skips[l - 1]).to_vec();
            skips[l - 1] = g.constant(Tensor::zeros(&shape));
        }
        let bottleneck = skips[levels - 1];
        let fused = if self.use_conv_gru {
            let h = match prev {
                Some(h) => h,
                None => {
                    let shape = g.shape(bottleneck).to_vec();
                    g.constant(Tensor::zeros(&shape))
                }
            };
            self.gru.forward_probe(g, &self.store, bottleneck, h, probe.forced_update)
        } else {
            bottleneck
        };
        skips[levels - 1] = fused;
        if self.use_gcn {
            let l = self.gcn_level - 1;
            let geo = BlockGeometry::new(g.shape(skips[l]), keypoints, self.block_size)?;
            let nodes = g.custom(Box::new(SampleOp(geo.clone())), &[skips[l]]);
            let adj = g.constant(self.adjacency.clone());
            let refined = self.gcn.forward_on(g, &self.store, adj, nodes);
            skips[l] = g.custom(Box::new(FuseOp::new(geo)), &[skips[l], refined]);
        }
        let (hb, wb) = (g.shape(fused)[1], g.shape(fused)[2]);
        let a = self.audio_proj.forward(g, &self.store, inputs.audio);
        let a = g.leaky_relu(a, slope);
        let a = g.broadcast_spatial(a, hb, wb);
        let mut x = g.concat(&[skips[levels - 1], a]);
        for (i, conv) in self.decoder.iter().enumerate() {
            if i > 0 {
                x = g.concat(&[x, skips[levels - 1 - i]]);
            }
            x = conv.forward(g, &self.store, x);
            x = g.leaky_relu(x, slope);
            x = g.upsample2(x);
        }
        let x = g.concat(&[x, x0]);
        let x = self.refine.forward(g, &self.store, x);
        let x = g.leaky_relu(x, slope);
        let x = self.out.forward(g, &self.store, x);
        let x = g.add(x, inputs.base);
        Ok((g.sigmoid(x), fused))
    }

    /// One frame outside of training; advances `state`.
    pub fn stu_step(
        &self,
        state: &mut StuState<T>,
        coarse: &Frame<T>,
        heatmap: &Heatmap<T>,
        keypoints: &KeypointSet<T>,
        audio: &Tensor<T>,
        probe: &StuProbe<T>,
    ) -> Result<Frame<T>> {
        let mut g = Graph::new();
        let inputs = self.inputs_on(&mut g, coarse, heatmap, audio)?;
        let prev = state.hq.as_ref().map(|h| g.constant(h.clone()));
        let (frame, fused) = self.step_on(&mut g, inputs, keypoints, prev, probe)?;
        state.hq = Some(g.value(fused).clone());
        Frame::from_tensor_clamped(g.value(frame).clone())
    }

    /// Refines a whole sequence frame by frame, starting from an empty state.
    pub fn stu_generate(
        &self,
        coarse: &[Frame<T>],
        heatmaps: &[Heatmap<T>],
        keypoints: &[KeypointSet<T>],
        audio: &[Tensor<T>],
    ) -> Result<Vec<Frame<T>>> {
        let n = coarse.len();
        if heatmaps.len() != n || keypoints.len() != n || audio.len() != n {
            return Err(Error::Shape(format!(
                "sequence lengths differ: {n} coarse, {} heatmaps, {} keypoints, {} audio",
                heatmaps.len(),
                keypoints.len(),
                audio.len()
            )));
        }
        let mut state = StuState::default();
        let probe = StuProbe::default();
        (0..n)
            .map(|t| self.stu_step(&mut state, &coarse[t], &heatmaps[t], &keypoints[t], &audio[t], &probe))
            .collect()
    }

    pub fn push_to(&self, ck: &mut Checkpoint<T>) {
        ck.push_store("stu.", &self.store);
    }

    pub fn from_checkpoint(cfg: &PipelineConfig, ck: &Checkpoint<T>, path: &Path) -> Result<Self> {
        let mut m = Self::new(cfg)?;
        ck.restore_store("stu.", &mut m.store, path)?;
        Ok(m)
    }

    pub fn load(cfg: &PipelineConfig, path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path, Stage::Fhvg, cfg)?;
        Self::from_checkpoint(cfg, &ck, path)
    }
}
