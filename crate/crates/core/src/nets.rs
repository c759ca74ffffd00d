//! Building blocks shared by several stages.

use apvg_tensor::nn::{Conv2d, ConvSpec, Init, Linear};
use apvg_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::AudioClip;

/// 1-D convolutions over the hop axis with CQT bins as channels, global
/// average pooling, then a projection to `out_dim`.
#[derive(Clone, Debug)]
pub struct AudioEncoder {
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Linear,
    pub bins: usize,
    pub hops: usize,
    pub out_dim: usize,
}

fn conv1d(cin: usize, cout: usize, k: usize, stride: usize) -> ConvSpec {
    ConvSpec {
        kernel: (1, k),
        ..ConvSpec::square(cin, cout, k, stride)
    }
}

impl AudioEncoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        bins: usize,
        hops: usize,
        channels: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), conv1d(bins, channels, 5, 2), rng),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), conv1d(channels, channels, 5, 2), rng),
            proj: Linear::new(store, &format!("{name}.proj"), channels, out_dim, true, Init::He, rng),
            bins,
            hops,
            out_dim,
        }
    }

    pub fn check<T: Scalar>(&self, clip: &AudioClip<T>) -> Result<()> {
        if clip.bins() != self.bins || clip.hops() != self.hops {
            return Err(Error::Shape(format!(
                "audio clip is {}x{}, encoder expects {}x{}",
                clip.bins(),
                clip.hops(),
                self.bins,
                self.hops
            )));
        }
        Ok(())
    }

    /// Places a (standardised) clip on the tape as `[bins, 1, hops]`.
    pub fn input<T: Scalar>(&self, g: &mut Graph<T>, clip: &AudioClip<T>) -> Var {
        g.constant(clip.cqt().clone().reshape(&[self.bins, 1, self.hops]))
    }

    /// `[bins, 1, hops]` to a `[1, out_dim]` row.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let slope = T::from_f64(0.1).unwrap();
        let h = self.conv1.forward(g, store, x);
        let h = g.leaky_relu(h, slope);
        let h = self.conv2.forward(g, store, h);
        let h = g.leaky_relu(h, slope);
        let h = g.global_avg_pool(h);
        let c = g.shape(h)[0];
        let h = g.reshape(h, &[1, c]);
        let h = self.proj.forward(g, store, h);
        g.leaky_relu(h, slope)
    }
}

/// `[1, D]` zero row, the initial recurrent state.
pub fn zero_row<T: Scalar>(g: &mut Graph<T>, d: usize) -> Var {
    g.constant(Tensor::zeros(&[1, d]))
}

/// Stacked L2 norm of `a - b`.
pub fn l2_distance<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.square(d);
    let s = g.sum(d);
    g.sqrt(s)
}
