//! Parameterised layers. Each layer only stores [`ParamId`]s; values live in a [`ParamStore`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::{lit, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform with variance `2 / fan_in` (rectifier layers).
    He,
    /// Uniform with variance `1 / fan_in`.
    Lecun,
    Zeros,
}

pub fn init_tensor<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    let var = match init {
        Init::He => 2.0 / fan_in as f64,
        Init::Lecun => 1.0 / fan_in as f64,
        Init::Zeros => return Tensor::zeros(shape),
    };
    let bound = (3.0 * var).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
    Tensor::from_fn(shape, |_| lit(dist.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
}

pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub bias: bool,
    pub init: Init,
    pub frozen: bool,
}

impl ConvSpec {
    /// `k x k` kernel with "same" padding at stride 1.
    pub fn square(in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride,
            bias: true,
            init: Init::He,
            frozen: false,
        }
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }
}

impl Conv2d {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut R) -> Self {
        let (kh, kw) = spec.kernel;
        let fan_in = spec.in_channels * kh * kw;
        let w = init_tensor(&[spec.out_channels, spec.in_channels, kh, kw], fan_in, spec.init, rng);
        let add = |store: &mut ParamStore<T>, n: String, t: Tensor<T>| {
            if spec.frozen {
                store.add_frozen(n, t)
            } else {
                store.add(n, t)
            }
        };
        let weight = add(store, format!("{name}.weight"), w);
        let bias = spec
            .bias
            .then(|| add(store, format!("{name}.bias"), Tensor::zeros(&[spec.out_channels])));
        Self {
            weight,
            bias,
            stride: spec.stride,
            pad: ((kh - 1) / 2, (kw - 1) / 2),
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            init_tensor(&[in_features, out_features], in_features, init, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_features])));
        Self {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    /// `x` is `[N, in]`; output `[N, out]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row_bias(y, b)
            }
            None => y,
        }
    }
}

/// Gated recurrent unit over `[N, D]` rows.
///
/// `h' = (1 - z) * h + z * n`, so an update gate of one replaces the state
/// with the candidate.
#[derive(Clone, Debug)]
pub struct GruCell {
    xz: Linear,
    hz: Linear,
    xr: Linear,
    hr: Linear,
    xn: Linear,
    hn: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut lin = |n: &str, i: usize, bias: bool| {
            Linear::new(store, &format!("{name}.{n}"), i, hidden, bias, Init::Lecun, rng)
        };
        Self {
            xz: lin("xz", input, true),
            hz: lin("hz", hidden, false),
            xr: lin("xr", input, true),
            hr: lin("hr", hidden, false),
            xn: lin("xn", input, true),
            hn: lin("hn", hidden, true),
            hidden,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var) -> Var {
        let a = self.xz.forward(g, store, x);
        let b = self.hz.forward(g, store, h);
        let z = g.add(a, b);
        let z = g.sigmoid(z);
        let a = self.xr.forward(g, store, x);
        let b = self.hr.forward(g, store, h);
        let r = g.add(a, b);
        let r = g.sigmoid(r);
        let a = self.xn.forward(g, store, x);
        let b = self.hn.forward(g, store, h);
        let rb = g.mul(r, b);
        let n = g.add(a, rb);
        let n = g.tanh(n);
        blend(g, z, h, n)
    }
}

/// `(1 - z) * h + z * n`
fn blend<T: Scalar>(g: &mut Graph<T>, z: Var, h: Var, n: Var) -> Var {
    let keep = g.one_minus(z);
    let a = g.mul(keep, h);
    let b = g.mul(z, n);
    g.add(a, b)
}

/// Gated recurrence whose gates and candidate are convolutions over `[C,H,W]` maps.
#[derive(Clone, Debug)]
pub struct ConvGruCell {
    x_gates: Conv2d,
    h_gates: Conv2d,
    pub channels: usize,
}

impl ConvGruCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let x_gates = Conv2d::new(
            store,
            &format!("{name}.x"),
            ConvSpec::square(input, 3 * channels, kernel, 1).init(Init::Lecun),
            rng,
        );
        let h_gates = Conv2d::new(
            store,
            &format!("{name}.h"),
            ConvSpec::square(channels, 3 * channels, kernel, 1).init(Init::Lecun),
            rng,
        );
        Self {
            x_gates,
            h_gates,
            channels,
        }
    }

    /// Returns `(z, r, n)` for input `x` and state `h`.
    pub fn gates<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var) -> (Var, Var, Var) {
        let c = self.channels;
        let xs = self.x_gates.forward(g, store, x);
        let hs = self.h_gates.forward(g, store, h);
        let (xz, xr, xn) = (g.rows(xs, 0, c), g.rows(xs, c, c), g.rows(xs, 2 * c, c));
        let (hz, hr, hn) = (g.rows(hs, 0, c), g.rows(hs, c, c), g.rows(hs, 2 * c, c));
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        (z, r, n)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, h: Var) -> Var {
        self.forward_probe(g, store, x, h, None)
    }

    /// Like [`forward`](Self::forward) but optionally pins the update gate to a constant.
    pub fn forward_probe<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        h: Var,
        forced_update: Option<T>,
    ) -> Var {
        let (z, _, n) = self.gates(g, store, x, h);
        let z = match forced_update {
            Some(v) => {
                let shape = g.shape(z).to_vec();
                g.constant(Tensor::full(&shape, v))
            }
            None => z,
        };
        blend(g, z, h, n)
    }
}
