//! Parameterized layers. Each layer records the [`ParamId`]s it owns; the
//! values live in a [`ParamStore`] and are bound per forward pass through a
//! [`Session`].

use blindqe_tensor::ops::{self, Conv2dOpts};
use blindqe_tensor::{ParamId, ParamStore, Scalar, Session, Tensor, Var};
use rand::Rng;

pub const LRELU_SLOPE: f64 = 0.1;

pub fn lrelu<T: Scalar>(x: &Var<T>) -> Var<T> {
    ops::leaky_relu(x, T::from_f64_lossy(LRELU_SLOPE))
}

/// Uniform initialization with variance `gain^2 / fan_in`.
fn init<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    Tensor::uniform(shape, gain * (3.0 / fan_in as f64).sqrt(), rng)
}

/// Gain for layers followed by a leaky ReLU.
pub fn lrelu_gain() -> f64 {
    (2.0 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub opts: Conv2dOpts,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        opts: Conv2dOpts,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = init(vec![cout, cin, kernel, kernel], cin * kernel * kernel, gain, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![cout])),
            in_channels: cin,
            out_channels: cout,
            kernel,
            opts,
        }
    }

    /// "Same"-padded stride-1 convolution.
    pub fn same<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, kernel, Conv2dOpts::same(kernel, 1), gain, rng)
    }

    pub fn zeros<T: Scalar>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, kernel: usize, opts: Conv2dOpts) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(vec![cout, cin, kernel, kernel])),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![cout])),
            in_channels: cin,
            out_channels: cout,
            kernel,
            opts,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Var<T> {
        ops::conv2d(x, s.var(self.weight), Some(s.var(self.bias)), self.opts)
    }

    /// Multiply-accumulates per output pixel.
    pub fn macs_per_pixel(&self) -> u64 {
        (self.out_channels * self.in_channels * self.kernel * self.kernel) as u64
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, fin: usize, fout: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), init(vec![fout, fin], fin, gain, rng)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![fout])),
            in_features: fin,
            out_features: fout,
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Var<T> {
        ops::linear(x, s.var(self.weight), Some(s.var(self.bias)))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(vec![dim])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(vec![dim])),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &Session<T>, x: &Var<T>) -> Var<T> {
        ops::layer_norm_last(x, s.var(self.gamma), s.var(self.beta), Self::EPS)
    }
}

/// Spatial mean of `[N, C, H, W]`, giving `[N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Var<T>) -> Var<T> {
    let (n, c, h, w) = x.value().dims4();
    ops::mean_last(&ops::reshape(x, &[n, c, h * w]))
}

/// Broadcastable `[N, C, 1, 1]` view of per-channel values `[N, C]`.
pub fn channel_view<T: Scalar>(v: &Var<T>) -> Var<T> {
    let (n, c) = (v.shape()[0], v.shape()[1]);
    ops::reshape(v, &[n, c, 1, 1])
}

/// Zeroes every parameter whose name starts with `prefix`.
pub fn zero_params<T: Scalar>(store: &mut ParamStore<T>, prefix: &str) {
    for e in store.entries_mut().iter_mut().filter(|e| e.name.starts_with(prefix)) {
        e.value = Tensor::zeros(e.value.shape().to_vec());
    }
}
