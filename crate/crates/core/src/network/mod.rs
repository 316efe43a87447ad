//! Feed-forward detection networks: exact inference and interval bound
//! propagation (IBP).
//!
//! Tensors are laid out channel-major (`C x H x W`) between layers; the input
//! image is converted from its `H x W x C` storage on entry. Weights are kept
//! as `f32`, accumulation happens in `f64`.

mod architectures;
mod external;
mod model_file;

pub use architectures::{digit_loc, lard, DigitLocConfig, LardConfig};
pub use external::{
    external_bounds_to_json, load_external_bounds, parse_external_bounds, write_external_bounds,
    ExternalBounds,
};
pub use model_file::{load_network, WeightEncoding};

use thiserror::Error;

use crate::geometry::BBox;
use crate::interval::Interval;
use crate::iou_bounds::BoxBounds;
use crate::perturbation::{ImageTensor, InputBounds, PerturbedImage};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported layer `{0}`")]
    UnsupportedLayer(String),
    #[error("invalid bounds for `{id}`: {reason}")]
    InvalidBounds { id: String, reason: String },
    #[error("non-finite value while propagating through layer {0}")]
    NonFinite(usize),
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major `out_features x in_features`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// `out_channels x in_channels x kh x kw`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool2d {
    pub window: (usize, usize),
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Relu,
    MaxPool2d(MaxPool2d),
    Flatten,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::Flatten => "flatten",
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape, String> {
        match (self, input) {
            (Layer::Dense(d), Shape::Flat(n)) => {
                if d.in_features != n {
                    return Err(format!("dense expects {} inputs, got {n}", d.in_features));
                }
                if d.weights.len() != d.in_features * d.out_features
                    || d.bias.len() != d.out_features
                {
                    return Err(format!(
                        "dense {}x{} has {} weights and {} biases",
                        d.out_features,
                        d.in_features,
                        d.weights.len(),
                        d.bias.len()
                    ));
                }
                Ok(Shape::Flat(d.out_features))
            }
            (Layer::Dense(_), s) => Err(format!("dense layer needs a flat input, got {s:?}")),
            (
                Layer::Conv2d(c),
                Shape::Spatial {
                    channels,
                    height,
                    width,
                },
            ) => {
                let (kh, kw) = c.kernel;
                if c.in_channels != channels {
                    return Err(format!(
                        "conv2d expects {} channels, got {channels}",
                        c.in_channels
                    ));
                }
                if c.stride == 0 || kh == 0 || kw == 0 {
                    return Err("conv2d needs nonzero stride and kernel".into());
                }
                if c.weights.len() != c.out_channels * c.in_channels * kh * kw
                    || c.bias.len() != c.out_channels
                {
                    return Err(format!(
                        "conv2d {}x{}x{kh}x{kw} has {} weights and {} biases",
                        c.out_channels,
                        c.in_channels,
                        c.weights.len(),
                        c.bias.len()
                    ));
                }
                let (ph, pw) = (height + 2 * c.padding, width + 2 * c.padding);
                if ph < kh || pw < kw {
                    return Err(format!(
                        "conv2d kernel {kh}x{kw} larger than padded input {ph}x{pw}"
                    ));
                }
                Ok(Shape::Spatial {
                    channels: c.out_channels,
                    height: (ph - kh) / c.stride + 1,
                    width: (pw - kw) / c.stride + 1,
                })
            }
            (
                Layer::MaxPool2d(p),
                Shape::Spatial {
                    channels,
                    height,
                    width,
                },
            ) => {
                let (kh, kw) = p.window;
                if p.stride == 0 || kh == 0 || kw == 0 || height < kh || width < kw {
                    return Err(format!(
                        "maxpool {kh}x{kw}/{} does not fit {height}x{width}",
                        p.stride
                    ));
                }
                Ok(Shape::Spatial {
                    channels,
                    height: (height - kh) / p.stride + 1,
                    width: (width - kw) / p.stride + 1,
                })
            }
            (Layer::Conv2d(_) | Layer::MaxPool2d(_), s) => {
                Err(format!("{} needs a spatial input, got {s:?}", self.kind()))
            }
            (Layer::Relu, s) => Ok(s),
            (Layer::Flatten, s) => Ok(Shape::Flat(s.len())),
        }
    }
}

/// A detector mapping an image to four raw box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: (usize, usize, usize),
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
}

/// Raw network output read as `[z0, z1, z2, z3]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub coords: [f64; 4],
    /// Output violates `z0 <= z2` or `z1 <= z3`.
    pub malformed: bool,
}

impl Prediction {
    pub fn bbox(&self) -> Option<BBox> {
        BBox::new(self.coords).ok()
    }
}

/// Result of IBP through a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbpOutput {
    /// Output intervals before corner-order repair.
    pub raw: [Interval; 4],
    pub bounds: BoxBounds,
    pub repaired: bool,
}

impl Network {
    /// Validates that layer shapes compose from `input_shape` (`h, w, c`) to
    /// a 4-vector.
    pub fn new(
        input_shape: (usize, usize, usize),
        layers: Vec<Layer>,
    ) -> Result<Self, NetworkError> {
        let (h, w, c) = input_shape;
        let mut shape = Shape::Spatial {
            channels: c,
            height: h,
            width: w,
        };
        let mut shapes = vec![shape];
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .output_shape(shape)
                .map_err(|e| NetworkError::ShapeMismatch(format!("layer {i}: {e}")))?;
            shapes.push(shape);
        }
        if shape != Shape::Flat(4) {
            return Err(NetworkError::ShapeMismatch(format!(
                "network must output a flat 4-vector, got {shape:?}"
            )));
        }
        Ok(Self {
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_input(&self, shape: (usize, usize, usize)) -> Result<(), NetworkError> {
        if shape != self.input_shape {
            return Err(NetworkError::ShapeMismatch(format!(
                "network expects input {:?}, got {shape:?}",
                self.input_shape
            )));
        }
        Ok(())
    }

    /// HWC storage to CHW activations.
    fn to_chw(&self, hwc: &[f64]) -> Vec<f64> {
        let (h, w, c) = self.input_shape;
        let mut out = vec![0.0; hwc.len()];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = hwc[(y * w + x) * c + ch];
                }
            }
        }
        out
    }

    pub fn forward(&self, image: &ImageTensor) -> Result<Prediction, NetworkError> {
        self.forward_pixels(image.shape(), image.pixels())
    }

    pub fn forward_perturbed(&self, image: &PerturbedImage) -> Result<Prediction, NetworkError> {
        self.forward_pixels(image.shape, &image.pixels)
    }

    fn forward_pixels(
        &self,
        shape: (usize, usize, usize),
        pixels: &[f64],
    ) -> Result<Prediction, NetworkError> {
        self.check_input(shape)?;
        let mut x = self.to_chw(pixels);
        for (i, layer) in self.layers.iter().enumerate() {
            let input = self.shapes[i];
            let output = self.shapes[i + 1];
            x = match layer {
                Layer::Dense(d) => dense_point(d, &x),
                Layer::Conv2d(c) => conv_point(c, input, output, &x),
                Layer::Relu => x.into_iter().map(|v| v.max(0.0)).collect(),
                Layer::MaxPool2d(p) => pool(p, input, output, &x),
                Layer::Flatten => x,
            };
            if x.iter().any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFinite(i));
            }
        }
        let coords = [x[0], x[1], x[2], x[3]];
        Ok(Prediction {
            coords,
            malformed: coords[0] > coords[2] || coords[1] > coords[3],
        })
    }

    /// Pushes per-pixel input intervals through every layer.
    pub fn propagate_ibp(&self, input: &InputBounds) -> Result<IbpOutput, NetworkError> {
        self.check_input(input.shape)?;
        let mut lo = self.to_chw(&input.lo);
        let mut hi = self.to_chw(&input.hi);
        for (i, layer) in self.layers.iter().enumerate() {
            let in_shape = self.shapes[i];
            let out_shape = self.shapes[i + 1];
            (lo, hi) = match layer {
                Layer::Dense(d) => dense_ibp(d, &lo, &hi),
                Layer::Conv2d(c) => conv_ibp(c, in_shape, out_shape, &lo, &hi),
                Layer::Relu => (
                    lo.into_iter().map(|v| v.max(0.0)).collect(),
                    hi.into_iter().map(|v| v.max(0.0)).collect(),
                ),
                // max is monotone, so the pooled interval is [max lo, max hi].
                Layer::MaxPool2d(p) => (
                    pool(p, in_shape, out_shape, &lo),
                    pool(p, in_shape, out_shape, &hi),
                ),
                Layer::Flatten => (lo, hi),
            };
            if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
                return Err(NetworkError::NonFinite(i));
            }
        }
        let raw: [Interval; 4] = std::array::from_fn(|k| {
            Interval::new(lo[k], hi[k]).expect("finite IBP bounds stay ordered")
        });
        let (bounds, repaired) = BoxBounds::repaired(raw);
        Ok(IbpOutput {
            raw,
            bounds,
            repaired,
        })
    }
}

fn dense_point(d: &Dense, x: &[f64]) -> Vec<f64> {
    (0..d.out_features)
        .map(|o| {
            let row = &d.weights[o * d.in_features..(o + 1) * d.in_features];
            let mut acc = f64::from(d.bias[o]);
            for (w, v) in row.iter().zip(x) {
                acc += f64::from(*w) * v;
            }
            acc
        })
        .collect()
}

fn dense_ibp(d: &Dense, lo: &[f64], hi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out_lo = Vec::with_capacity(d.out_features);
    let mut out_hi = Vec::with_capacity(d.out_features);
    for o in 0..d.out_features {
        let row = &d.weights[o * d.in_features..(o + 1) * d.in_features];
        let b = f64::from(d.bias[o]);
        let (mut l, mut h) = (b, b);
        for (j, w) in row.iter().enumerate() {
            let w = f64::from(*w);
            if w >= 0.0 {
                l += w * lo[j];
                h += w * hi[j];
            } else {
                l += w * hi[j];
                h += w * lo[j];
            }
        }
        out_lo.push(l);
        out_hi.push(h);
    }
    (out_lo, out_hi)
}

fn spatial(s: Shape) -> (usize, usize, usize) {
    match s {
        Shape::Spatial {
            channels,
            height,
            width,
        } => (channels, height, width),
        Shape::Flat(_) => unreachable!("shape checked at construction"),
    }
}

/// Visits every (weight, input index) pair feeding output `(o, oy, ox)`,
/// skipping zero padding.
#[inline]
fn conv_taps(
    c: &Conv2d,
    (ic, ih, iw): (usize, usize, usize),
    o: usize,
    oy: usize,
    ox: usize,
    mut f: impl FnMut(f64, usize),
) {
    let (kh, kw) = c.kernel;
    debug_assert_eq!(ic, c.in_channels);
    for i in 0..ic {
        for ky in 0..kh {
            let y = (oy * c.stride + ky) as isize - c.padding as isize;
            if y < 0 || y >= ih as isize {
                continue;
            }
            for kx in 0..kw {
                let x = (ox * c.stride + kx) as isize - c.padding as isize;
                if x < 0 || x >= iw as isize {
                    continue;
                }
                let w = c.weights[((o * ic + i) * kh + ky) * kw + kx];
                f(f64::from(w), (i * ih + y as usize) * iw + x as usize);
            }
        }
    }
}

fn conv_point(c: &Conv2d, input: Shape, output: Shape, x: &[f64]) -> Vec<f64> {
    let ins = spatial(input);
    let (oc, oh, ow) = spatial(output);
    let mut out = Vec::with_capacity(oc * oh * ow);
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = f64::from(c.bias[o]);
                conv_taps(c, ins, o, oy, ox, |w, j| acc += w * x[j]);
                out.push(acc);
            }
        }
    }
    out
}

fn conv_ibp(
    c: &Conv2d,
    input: Shape,
    output: Shape,
    lo: &[f64],
    hi: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let ins = spatial(input);
    let (oc, oh, ow) = spatial(output);
    let n = oc * oh * ow;
    let (mut out_lo, mut out_hi) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let b = f64::from(c.bias[o]);
                let (mut l, mut h) = (b, b);
                conv_taps(c, ins, o, oy, ox, |w, j| {
                    if w >= 0.0 {
                        l += w * lo[j];
                        h += w * hi[j];
                    } else {
                        l += w * hi[j];
                        h += w * lo[j];
                    }
                });
                out_lo.push(l);
                out_hi.push(h);
            }
        }
    }
    (out_lo, out_hi)
}

fn pool(p: &MaxPool2d, input: Shape, output: Shape, x: &[f64]) -> Vec<f64> {
    let (_, ih, iw) = spatial(input);
    let (oc, oh, ow) = spatial(output);
    let (kh, kw) = p.window;
    let mut out = Vec::with_capacity(oc * oh * ow);
    for ch in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let y = oy * p.stride + ky;
                        let xx = ox * p.stride + kx;
                        m = m.max(x[(ch * ih + y) * iw + xx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}
