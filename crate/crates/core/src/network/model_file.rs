//! JSON model files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "input_shape": [h, w, c],
//!   "layers": [
//!     {"kind": "conv2d", "in_channels": 1, "out_channels": 16, "kernel": [3, 3],
//!      "stride": 1, "padding": 1, "weights": ..., "bias": ...},
//!     {"kind": "relu"},
//!     {"kind": "maxpool2d", "window": [2, 2], "stride": 2},
//!     {"kind": "flatten"},
//!     {"kind": "dense", "in_features": 64, "out_features": 4, "weights": ..., "bias": ...}
//!   ]
//! }
//! ```
//!
//! Tensors are either nested arrays in the layout of the layer
//! (`out x in` for dense, `out x in x kh x kw` for conv) or
//! `{"encoding": "base64-f32le", "data": "..."}`. Values are `f32`; nested
//! arrays are written with the exact `f64` expansion of each value so that
//! reading them back is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Conv2d, Dense, Layer, MaxPool2d, Network, NetworkError};

const FORMAT_VERSION: u32 = 1;
const BASE64_F32LE: &str = "base64-f32le";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum WeightEncoding {
    #[default]
    Base64,
    Nested,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    input_shape: [usize; 3],
    layers: Vec<Value>,
}

#[derive(Deserialize)]
struct DenseRecord {
    in_features: usize,
    out_features: usize,
    weights: Value,
    bias: Value,
}

#[derive(Deserialize)]
struct ConvRecord {
    in_channels: usize,
    out_channels: usize,
    kernel: [usize; 2],
    stride: usize,
    padding: usize,
    weights: Value,
    bias: Value,
}

#[derive(Deserialize)]
struct PoolRecord {
    window: [usize; 2],
    stride: usize,
}

fn parse_err(e: impl std::fmt::Display) -> NetworkError {
    NetworkError::Parse(e.to_string())
}

fn decode_tensor(v: &Value, dims: &[usize], what: &str) -> Result<Vec<f32>, NetworkError> {
    let expected: usize = dims.iter().product();
    let data = match v {
        Value::Object(map) => {
            let enc = map
                .get("encoding")
                .and_then(Value::as_str)
                .unwrap_or_default();
            if enc != BASE64_F32LE {
                return Err(parse_err(format!(
                    "{what}: unknown tensor encoding `{enc}`"
                )));
            }
            let text = map
                .get("data")
                .and_then(Value::as_str)
                .ok_or_else(|| parse_err(format!("{what}: missing base64 data")))?;
            let bytes = STANDARD
                .decode(text)
                .map_err(|e| parse_err(format!("{what}: {e}")))?;
            if bytes.len() % 4 != 0 {
                return Err(parse_err(format!(
                    "{what}: byte length {} not a multiple of 4",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect()
        }
        _ => {
            let mut out = Vec::with_capacity(expected);
            flatten_nested(v, dims, &mut out, what)?;
            out
        }
    };
    if data.len() != expected {
        return Err(NetworkError::ShapeMismatch(format!(
            "{what}: expected {expected} values for shape {dims:?}, got {}",
            data.len()
        )));
    }
    Ok(data)
}

fn flatten_nested(
    v: &Value,
    dims: &[usize],
    out: &mut Vec<f32>,
    what: &str,
) -> Result<(), NetworkError> {
    match (v, dims.split_first()) {
        (Value::Array(items), Some((&n, rest))) => {
            if items.len() != n {
                return Err(NetworkError::ShapeMismatch(format!(
                    "{what}: expected {n} entries at depth with remaining shape {dims:?}, got {}",
                    items.len()
                )));
            }
            items
                .iter()
                .try_for_each(|item| flatten_nested(item, rest, out, what))
        }
        (Value::Number(num), None) => {
            let x = num
                .as_f64()
                .ok_or_else(|| parse_err(format!("{what}: bad number {num}")))?;
            out.push(x as f32);
            Ok(())
        }
        (other, _) => Err(parse_err(format!(
            "{what}: unexpected value {other} for shape {dims:?}"
        ))),
    }
}

fn encode_tensor(data: &[f32], dims: &[usize], encoding: WeightEncoding) -> Value {
    match encoding {
        WeightEncoding::Base64 => {
            let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            json!({ "encoding": BASE64_F32LE, "data": STANDARD.encode(bytes) })
        }
        WeightEncoding::Nested => nest(data, dims),
    }
}

fn nest(data: &[f32], dims: &[usize]) -> Value {
    match dims.split_first() {
        None => json!(f64::from(data[0])),
        Some((&n, rest)) => {
            let stride: usize = rest.iter().product();
            Value::Array(
                (0..n)
                    .map(|i| nest(&data[i * stride..(i + 1) * stride], rest))
                    .collect(),
            )
        }
    }
}

fn parse_layer(v: &Value, index: usize) -> Result<Layer, NetworkError> {
    let kind = v
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| parse_err(format!("layer {index}: missing `kind`")))?;
    let ctx = |e: serde_json::Error| parse_err(format!("layer {index} ({kind}): {e}"));
    match kind {
        "dense" => {
            let r: DenseRecord = serde_json::from_value(v.clone()).map_err(ctx)?;
            let what = format!("layer {index} dense");
            Ok(Layer::Dense(Dense {
                in_features: r.in_features,
                out_features: r.out_features,
                weights: decode_tensor(&r.weights, &[r.out_features, r.in_features], &what)?,
                bias: decode_tensor(&r.bias, &[r.out_features], &what)?,
            }))
        }
        "conv2d" => {
            let r: ConvRecord = serde_json::from_value(v.clone()).map_err(ctx)?;
            let what = format!("layer {index} conv2d");
            let [kh, kw] = r.kernel;
            Ok(Layer::Conv2d(Conv2d {
                in_channels: r.in_channels,
                out_channels: r.out_channels,
                kernel: (kh, kw),
                stride: r.stride,
                padding: r.padding,
                weights: decode_tensor(
                    &r.weights,
                    &[r.out_channels, r.in_channels, kh, kw],
                    &what,
                )?,
                bias: decode_tensor(&r.bias, &[r.out_channels], &what)?,
            }))
        }
        "maxpool2d" => {
            let r: PoolRecord = serde_json::from_value(v.clone()).map_err(ctx)?;
            Ok(Layer::MaxPool2d(MaxPool2d {
                window: (r.window[0], r.window[1]),
                stride: r.stride,
            }))
        }
        "relu" => Ok(Layer::Relu),
        "flatten" => Ok(Layer::Flatten),
        other => Err(NetworkError::UnsupportedLayer(other.to_string())),
    }
}

fn layer_value(layer: &Layer, encoding: WeightEncoding) -> Value {
    match layer {
        Layer::Dense(d) => json!({
            "kind": "dense",
            "in_features": d.in_features,
            "out_features": d.out_features,
            "weights": encode_tensor(&d.weights, &[d.out_features, d.in_features], encoding),
            "bias": encode_tensor(&d.bias, &[d.out_features], encoding),
        }),
        Layer::Conv2d(c) => json!({
            "kind": "conv2d",
            "in_channels": c.in_channels,
            "out_channels": c.out_channels,
            "kernel": [c.kernel.0, c.kernel.1],
            "stride": c.stride,
            "padding": c.padding,
            "weights": encode_tensor(
                &c.weights,
                &[c.out_channels, c.in_channels, c.kernel.0, c.kernel.1],
                encoding,
            ),
            "bias": encode_tensor(&c.bias, &[c.out_channels], encoding),
        }),
        Layer::MaxPool2d(p) => json!({
            "kind": "maxpool2d",
            "window": [p.window.0, p.window.1],
            "stride": p.stride,
        }),
        Layer::Relu => json!({ "kind": "relu" }),
        Layer::Flatten => json!({ "kind": "flatten" }),
    }
}

impl Network {
    pub fn from_json(text: &str) -> Result<Network, NetworkError> {
        let file: ModelFile = serde_json::from_str(text).map_err(parse_err)?;
        if file.version != FORMAT_VERSION {
            return Err(parse_err(format!(
                "unsupported model version {}",
                file.version
            )));
        }
        let layers = file
            .layers
            .iter()
            .enumerate()
            .map(|(i, v)| parse_layer(v, i))
            .collect::<Result<Vec<_>, _>>()?;
        let [h, w, c] = file.input_shape;
        Network::new((h, w, c), layers)
    }

    pub fn to_json(&self, encoding: WeightEncoding) -> String {
        let (h, w, c) = self.input_shape;
        let file = ModelFile {
            version: FORMAT_VERSION,
            input_shape: [h, w, c],
            layers: self
                .layers
                .iter()
                .map(|l| layer_value(l, encoding))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialises")
    }

    pub fn save(
        &self,
        path: impl AsRef<Path>,
        encoding: WeightEncoding,
    ) -> Result<(), NetworkError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(encoding)).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Network::from_json(&text)
}
