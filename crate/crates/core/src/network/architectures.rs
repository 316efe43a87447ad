//! Randomly initialised, scaled-down versions of the two reference detector
//! layouts. Used for soundness campaigns, not for detection quality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Conv2d, Dense, Layer, MaxPool2d, Network};

/// `Conv c 3x3/1/1 - ReLU - Pool 2x2/2 - ReLU` twice, then
/// `Flatten - Linear hidden - ReLU - Linear 4`.
#[derive(Debug, Clone)]
pub struct DigitLocConfig {
    pub input: (usize, usize, usize),
    pub channels: usize,
    pub hidden: usize,
}

/// Three `Conv 3x3/2/1 - ReLU` blocks, then
/// `Flatten - Linear hidden - ReLU - Linear hidden - ReLU - Linear 4`.
#[derive(Debug, Clone)]
pub struct LardConfig {
    pub input: (usize, usize, usize),
    pub channels: [usize; 3],
    pub hidden: usize,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f32> {
    let a = (6.0 / fan_in.max(1) as f64).sqrt() as f32;
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

fn conv(rng: &mut ChaCha8Rng, in_channels: usize, out_channels: usize, stride: usize) -> Layer {
    let fan_in = in_channels * 9;
    Layer::Conv2d(Conv2d {
        in_channels,
        out_channels,
        kernel: (3, 3),
        stride,
        padding: 1,
        weights: uniform(rng, out_channels * fan_in, fan_in),
        bias: uniform(rng, out_channels, fan_in * 10),
    })
}

fn dense(rng: &mut ChaCha8Rng, in_features: usize, out_features: usize) -> Layer {
    Layer::Dense(Dense {
        in_features,
        out_features,
        weights: uniform(rng, in_features * out_features, in_features),
        bias: uniform(rng, out_features, in_features * 10),
    })
}

fn conv_out(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

pub fn digit_loc(cfg: &DigitLocConfig, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = cfg.input;
    let pool = || {
        Layer::MaxPool2d(MaxPool2d {
            window: (2, 2),
            stride: 2,
        })
    };
    let (fh, fw) = (h / 2 / 2, w / 2 / 2);
    let layers = vec![
        conv(&mut rng, c, cfg.channels, 1),
        Layer::Relu,
        pool(),
        Layer::Relu,
        conv(&mut rng, cfg.channels, cfg.channels, 1),
        Layer::Relu,
        pool(),
        Layer::Relu,
        Layer::Flatten,
        dense(&mut rng, cfg.channels * fh * fw, cfg.hidden),
        Layer::Relu,
        dense(&mut rng, cfg.hidden, 4),
    ];
    Network::new(cfg.input, layers).expect("digit_loc layout composes")
}

pub fn lard(cfg: &LardConfig, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut h, mut w, c) = cfg.input;
    let mut layers = Vec::new();
    let mut in_ch = c;
    for &out_ch in &cfg.channels {
        layers.push(conv(&mut rng, in_ch, out_ch, 2));
        layers.push(Layer::Relu);
        h = conv_out(h, 2);
        w = conv_out(w, 2);
        in_ch = out_ch;
    }
    layers.push(Layer::Flatten);
    layers.push(dense(&mut rng, in_ch * h * w, cfg.hidden));
    layers.push(Layer::Relu);
    layers.push(dense(&mut rng, cfg.hidden, cfg.hidden));
    layers.push(Layer::Relu);
    layers.push(dense(&mut rng, cfg.hidden, 4));
    Network::new(cfg.input, layers).expect("lard layout composes")
}
