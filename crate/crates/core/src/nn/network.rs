use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Cache, Conv2d, Layer, Tensor};
use crate::error::Result;

/// Negative slope used by every leaky ReLU in the model zoo; also sets the
/// He-initialization gain.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Allocates parameter offsets while a layer graph is assembled.
#[derive(Debug, Default)]
pub struct NetBuilder {
    next: usize,
}

impl NetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn conv(&mut self, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Layer {
        let conv = Conv2d {
            cin,
            cout,
            k,
            stride,
            pad,
            offset: self.next,
            init_scale: 1.0,
        };
        self.next += conv.param_len();
        Layer::Conv(conv)
    }

    /// 3x3 "same" convolution (stride 1) or halving convolution (stride 2).
    pub fn conv3(&mut self, cin: usize, cout: usize, stride: usize) -> Layer {
        self.conv(cin, cout, 3, stride, 1)
    }

    /// [`NetBuilder::conv3`] whose weights start at zero.
    pub fn zero_conv3(&mut self, cin: usize, cout: usize) -> Layer {
        match self.conv3(cin, cout, 1) {
            Layer::Conv(mut c) => {
                c.init_scale = 0.0;
                Layer::Conv(c)
            }
            _ => unreachable!(),
        }
    }

    pub fn finish(self, root: Layer) -> Network {
        Network {
            root,
            n_params: self.next,
        }
    }
}

/// A layer graph plus the size of its flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub root: Layer,
    pub n_params: usize,
}

impl Network {
    /// He-normal weights (leaky-ReLU gain) times each conv's `init_scale`, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.n_params];
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        self.root.visit_convs(&mut |conv| {
            let std = gain / (conv.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[conv.offset..conv.offset + conv.weight_len()] {
                *p = conv.init_scale * normal.sample(&mut rng);
            }
        });
        params
    }

    /// The convolution visited last, usually the output head.
    pub fn last_conv(&self) -> Option<&Conv2d> {
        let mut last = None;
        self.root.visit_convs(&mut |c| last = Some(c));
        last
    }

    pub fn out_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        self.root.out_shape(input)
    }

    pub fn forward(&self, params: &[f64], x: Tensor) -> (Tensor, Cache) {
        debug_assert_eq!(params.len(), self.n_params);
        self.root.forward(params, x)
    }

    pub fn infer(&self, params: &[f64], x: Tensor) -> Tensor {
        self.root.infer(params, x)
    }

    /// Adds `d(loss)/d(params)` into `grads`; returns `d(loss)/d(input)`.
    pub fn backward_into(&self, params: &[f64], cache: Cache, grad_out: Tensor, grads: &mut [f64]) -> Tensor {
        self.root.backward(params, cache, grad_out, grads)
    }

    pub fn backward(&self, params: &[f64], cache: Cache, grad_out: Tensor) -> (Vec<f64>, Tensor) {
        let mut grads = vec![0.0; self.n_params];
        let gin = self.backward_into(params, cache, grad_out, &mut grads);
        (grads, gin)
    }
}
