//! SegNet-style encoder/decoder with index unpooling and central dropout.

use rand_distr::{Distribution, Normal};

use super::layers::{self, BnCache, BnParams};
use super::tensor::Tensor;
use super::ModelConfig;
use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    weight: usize,
    bias: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct BnSpec {
    channels: usize,
    gamma: usize,
    beta: usize,
    /// Offset of running mean in the buffer vector; running var follows.
    stats: usize,
}

#[derive(Debug, Clone, Copy)]
enum Layer {
    Conv(ConvSpec),
    BatchNorm(BnSpec),
    Relu,
    Pool { level: usize },
    Unpool { level: usize },
    Dropout { slot: u64 },
}

/// Parameter layout derived from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub(crate) struct Architecture {
    layers: Vec<Layer>,
    pub param_count: usize,
    pub buffer_count: usize,
    pub dropout_rate: f64,
}

struct Builder {
    layers: Vec<Layer>,
    params: usize,
    buffers: usize,
}

impl Builder {
    fn conv(&mut self, cin: usize, cout: usize, bias: bool) {
        let weight = self.params;
        self.params += cout * cin * 9;
        let bias = bias.then(|| {
            self.params += cout;
            self.params - cout
        });
        self.layers.push(Layer::Conv(ConvSpec { cin, cout, weight, bias }));
    }

    /// Convolution, batch norm, ReLU.
    fn conv_block(&mut self, cin: usize, cout: usize) {
        self.conv(cin, cout, false);
        self.layers.push(Layer::BatchNorm(BnSpec {
            channels: cout,
            gamma: self.params,
            beta: self.params + cout,
            stats: self.buffers,
        }));
        self.params += 2 * cout;
        self.buffers += 2 * cout;
        self.layers.push(Layer::Relu);
    }
}

impl Architecture {
    pub fn new(cfg: &ModelConfig) -> Self {
        let ch = &cfg.channels_per_block;
        let mut b = Builder {
            layers: Vec::new(),
            params: 0,
            buffers: 0,
        };
        let mut cin = 1;
        for (level, &c) in ch.iter().enumerate() {
            b.conv_block(cin, c);
            b.layers.push(Layer::Pool { level });
            cin = c;
        }
        b.layers.push(Layer::Dropout { slot: 0 });
        for level in (0..ch.len()).rev() {
            b.layers.push(Layer::Unpool { level });
            b.conv_block(ch[level], ch[level.saturating_sub(1)]);
            if level == ch.len() - 1 {
                b.layers.push(Layer::Dropout { slot: 1 });
            }
        }
        b.conv(ch[0], 2, true);
        Self {
            layers: b.layers,
            param_count: b.params,
            buffer_count: b.buffers,
            dropout_rate: cfg.dropout_rate,
        }
    }

    /// He-initialised convolutions, unit-gain batch norm, and running
    /// statistics at (mean 0, var 1).
    pub fn init(&self, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut params = vec![0.0; self.param_count];
        let mut buffers = vec![0.0; self.buffer_count];
        let mut rng = stream_rng(seed, 0);
        for layer in &self.layers {
            match *layer {
                Layer::Conv(c) => {
                    let std = (2.0 / (c.cin * 9) as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    for p in &mut params[c.weight..c.weight + c.cout * c.cin * 9] {
                        *p = normal.sample(&mut rng);
                    }
                }
                Layer::BatchNorm(b) => {
                    params[b.gamma..b.gamma + b.channels].fill(1.0);
                    buffers[b.stats + b.channels..b.stats + 2 * b.channels].fill(1.0);
                }
                _ => {}
            }
        }
        (params, buffers)
    }
}

enum Cache {
    Conv(Tensor),
    BatchNorm(Option<BnCache>),
    Relu(Tensor),
    Pool { in_h: usize, in_w: usize },
    Unpool { in_h: usize, in_w: usize },
    Dropout(Vec<f64>),
}

pub(crate) struct ForwardTrace {
    caches: Vec<Cache>,
    pool_indices: Vec<Vec<u32>>,
    pub logits: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Batch statistics, running estimates updated.
    Train,
    /// Frozen running statistics.
    Inference,
}

impl Architecture {
    /// Runs the network. Dropout is always active; its masks are a pure
    /// function of `dropout_seed` and the tensor shapes.
    pub fn forward(
        &self,
        params: &[f64],
        buffers: &mut [f64],
        input: Tensor,
        mode: Mode,
        dropout_seed: u64,
    ) -> ForwardTrace {
        let levels = self.layers.iter().filter(|l| matches!(l, Layer::Pool { .. })).count();
        let mut pool_indices = vec![Vec::new(); levels];
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input;
        for layer in &self.layers {
            match *layer {
                Layer::Conv(c) => {
                    let bias = c.bias.map(|b| &params[b..b + c.cout]);
                    let out = layers::conv3x3_forward(&x, &params[c.weight..c.weight + c.cout * c.cin * 9], bias, c.cout);
                    caches.push(Cache::Conv(std::mem::replace(&mut x, out)));
                }
                Layer::BatchNorm(b) => {
                    let p = BnParams {
                        gamma: &params[b.gamma..b.gamma + b.channels],
                        beta: &params[b.beta..b.beta + b.channels],
                    };
                    let (mean, var) = buffers[b.stats..b.stats + 2 * b.channels].split_at_mut(b.channels);
                    match mode {
                        Mode::Train => {
                            let (out, cache) = layers::batchnorm_forward_train(&x, p, mean, var);
                            x = out;
                            caches.push(Cache::BatchNorm(Some(cache)));
                        }
                        Mode::Inference => {
                            x = layers::batchnorm_forward_eval(&x, p, mean, var);
                            caches.push(Cache::BatchNorm(None));
                        }
                    }
                }
                Layer::Relu => {
                    layers::relu_inplace(&mut x);
                    caches.push(Cache::Relu(x.clone()));
                }
                Layer::Pool { level } => {
                    let (in_h, in_w) = (x.h, x.w);
                    let (out, idx) = layers::maxpool_forward(&x);
                    pool_indices[level] = idx;
                    x = out;
                    caches.push(Cache::Pool { in_h, in_w });
                }
                Layer::Unpool { level } => {
                    let (in_h, in_w) = (x.h, x.w);
                    x = layers::unpool_forward(&x, &pool_indices[level], in_h * 2, in_w * 2);
                    caches.push(Cache::Unpool { in_h, in_w });
                }
                Layer::Dropout { slot } => {
                    let mut rng = stream_rng(dropout_seed, slot);
                    let mask = layers::dropout_forward(&mut x, self.dropout_rate, &mut rng);
                    caches.push(Cache::Dropout(mask));
                }
            }
        }
        ForwardTrace {
            caches,
            pool_indices,
            logits: x,
        }
    }

    /// Backpropagates `grad_logits` through a training-mode trace, returning
    /// the gradient for every parameter.
    pub fn backward(&self, params: &[f64], trace: &ForwardTrace, grad_logits: Tensor) -> Vec<f64> {
        let mut grads = vec![0.0; self.param_count];
        let mut g = grad_logits;
        for (layer, cache) in self.layers.iter().zip(&trace.caches).rev() {
            match (*layer, cache) {
                (Layer::Conv(c), Cache::Conv(input)) => {
                    let w = &params[c.weight..c.weight + c.cout * c.cin * 9];
                    let (gw, rest) = grads[c.weight..].split_at_mut(c.cout * c.cin * 9);
                    let gb = c.bias.map(|b| {
                        let off = b - c.weight - c.cout * c.cin * 9;
                        &mut rest[off..off + c.cout]
                    });
                    g = layers::conv3x3_backward(input, w, &g, gw, gb);
                }
                (Layer::BatchNorm(b), Cache::BatchNorm(Some(bn))) => {
                    let gamma = &params[b.gamma..b.gamma + b.channels];
                    let (gg, gb) = grads[b.gamma..b.beta + b.channels].split_at_mut(b.channels);
                    g = layers::batchnorm_backward(&g, bn, gamma, gg, gb);
                }
                (Layer::BatchNorm(_), Cache::BatchNorm(None)) => {
                    panic!("backward requires a training-mode forward pass")
                }
                (Layer::Relu, Cache::Relu(out)) => layers::relu_backward(&mut g, out),
                (Layer::Pool { level }, Cache::Pool { in_h, in_w }) => {
                    g = layers::maxpool_backward(&g, &trace.pool_indices[level], *in_h, *in_w);
                }
                (Layer::Unpool { level }, Cache::Unpool { in_h, in_w }) => {
                    g = layers::unpool_backward(&g, &trace.pool_indices[level], *in_h, *in_w);
                }
                (Layer::Dropout { .. }, Cache::Dropout(mask)) => {
                    for (v, m) in g.data.iter_mut().zip(mask) {
                        *v *= m;
                    }
                }
                _ => unreachable!("trace does not match architecture"),
            }
        }
        grads
    }
}
