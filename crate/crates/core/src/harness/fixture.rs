//! Synthetic localisation fixture: bright rectangles on a dark background and
//! a hand-built detector that recovers the rectangle exactly.
//!
//! The detector thresholds column and row sums to find the lit columns and
//! rows, then counts leading and trailing dark ones:
//!
//! ```text
//! conv 3x3 identity - relu - flatten
//! dense -> a_x (per column), a_y (per row)       a = 1 inside, <= 0 outside
//! relu
//! dense -> u_x = 1 - sum_{x' <= x} a_x', v_x = 1 - sum_{x' >= x} a_x', same for y
//! relu
//! dense -> z0 = sum u_x, z1 = sum u_y, z2 = W - sum v_x, z3 = H - sum v_y
//! ```
//!
//! On unperturbed images the output equals the ground truth, so IoU is 1 and
//! IBP bounds loosen gradually as the perturbation grows.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{write_raster, DatasetEntry, Manifest, ManifestEntry};
use super::HarnessError;
use crate::geometry::GroundTruth;
use crate::network::{Conv2d, Dense, Layer, Network, WeightEncoding};
use crate::perturbation::ImageTensor;

#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    /// Smallest rectangle side, in pixels.
    pub min_side: usize,
    pub background: f64,
    pub foreground: f64,
    /// Uniform per-pixel texture amplitude.
    pub jitter: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            images: 24,
            height: 20,
            width: 20,
            min_side: 5,
            background: 0.1,
            foreground: 0.85,
            jitter: 0.02,
        }
    }
}

/// Files written by [`write_fixture`].
#[derive(Debug, Clone)]
pub struct FixtureFiles {
    pub manifest: PathBuf,
    pub model: PathBuf,
}

// Worst-case pixel deviation from the nominal level, including 8-bit rounding.
fn texture(cfg: &FixtureConfig) -> f64 {
    cfg.jitter + 0.5 / 255.0
}

/// Threshold offset and scale for a line of `len` pixels: outside lines map
/// to at most -1, lit lines to at least 1.
fn line_threshold(cfg: &FixtureConfig, len: usize) -> Result<(f64, f64), HarnessError> {
    let e_out = len as f64 * texture(cfg);
    let e_in = cfg.min_side as f64 * (cfg.foreground - cfg.background) - e_out;
    if e_in <= e_out {
        return Err(HarnessError::Config(format!(
            "fixture contrast too low: a {}-pixel line cannot be separated from texture",
            cfg.min_side
        )));
    }
    Ok(((e_in + e_out) / 2.0, (e_in - e_out) / 2.0))
}

fn validate(cfg: &FixtureConfig) -> Result<(), HarnessError> {
    let t = texture(cfg);
    if cfg.min_side == 0 || cfg.min_side > cfg.height.min(cfg.width) {
        return Err(HarnessError::Config(format!(
            "min_side {} does not fit a {}x{} image",
            cfg.min_side, cfg.height, cfg.width
        )));
    }
    if !(cfg.background - t >= 0.0 && cfg.foreground + t <= 1.0 && cfg.background < cfg.foreground)
    {
        return Err(HarnessError::Config(
            "fixture intensities must satisfy 0 <= bg < fg <= 1 with jitter".into(),
        ));
    }
    Ok(())
}

fn dense(in_features: usize, rows: Vec<(Vec<f64>, f64)>) -> Layer {
    let out_features = rows.len();
    let mut weights = Vec::with_capacity(in_features * out_features);
    let mut bias = Vec::with_capacity(out_features);
    for (w, b) in rows {
        debug_assert_eq!(w.len(), in_features);
        weights.extend(w.iter().map(|&v| v as f32));
        bias.push(b as f32);
    }
    Layer::Dense(Dense {
        in_features,
        out_features,
        weights,
        bias,
    })
}

/// The hand-built detector for `height x width` single-channel fixture images.
pub fn box_detector(cfg: &FixtureConfig) -> Result<Network, HarnessError> {
    validate(cfg)?;
    let (h, w) = (cfg.height, cfg.width);
    let mut identity = vec![0.0f32; 9];
    identity[4] = 1.0;
    let conv = Layer::Conv2d(Conv2d {
        in_channels: 1,
        out_channels: 1,
        kernel: (3, 3),
        stride: 1,
        padding: 1,
        weights: identity,
        bias: vec![0.0],
    });

    // Flattened input index is y * w + x.
    let (col_off, col_scale) = line_threshold(cfg, h)?;
    let (row_off, row_scale) = line_threshold(cfg, w)?;
    let mut detect = Vec::with_capacity(w + h);
    for x in 0..w {
        let wt: Vec<f64> = (0..h * w)
            .map(|i| if i % w == x { 1.0 / col_scale } else { 0.0 })
            .collect();
        detect.push((wt, -(h as f64 * cfg.background + col_off) / col_scale));
    }
    for y in 0..h {
        let wt: Vec<f64> = (0..h * w)
            .map(|i| if i / w == y { 1.0 / row_scale } else { 0.0 })
            .collect();
        detect.push((wt, -(w as f64 * cfg.background + row_off) / row_scale));
    }

    // Prefix and suffix counters over columns then rows.
    let mut count = Vec::with_capacity(2 * (w + h));
    for (start, n) in [(0, w), (w, h)] {
        for k in 0..n {
            let wt: Vec<f64> = (0..w + h)
                .map(|i| {
                    if i >= start && i <= start + k {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            count.push((wt, 1.0));
        }
        for k in 0..n {
            let wt: Vec<f64> = (0..w + h)
                .map(|i| {
                    if i >= start + k && i < start + n {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            count.push((wt, 1.0));
        }
    }

    // Counter layout: u_x, v_x, u_y, v_y.
    let n = 2 * (w + h);
    let sum = |from: usize, len: usize, sign: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if i >= from && i < from + len {
                    sign
                } else {
                    0.0
                }
            })
            .collect()
    };
    let head = vec![
        (sum(0, w, 1.0), 0.0),
        (sum(2 * w, h, 1.0), 0.0),
        (sum(w, w, -1.0), w as f64),
        (sum(2 * w + h, h, -1.0), h as f64),
    ];

    let layers = vec![
        conv,
        Layer::Relu,
        Layer::Flatten,
        dense(h * w, detect),
        Layer::Relu,
        dense(w + h, count),
        Layer::Relu,
        dense(n, head),
    ];
    Ok(Network::new((h, w, 1), layers)?)
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn render(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> ([usize; 4], ImageTensor) {
    let (h, w) = (cfg.height, cfg.width);
    let max_w = (w * 3 / 4).max(cfg.min_side);
    let max_h = (h * 3 / 4).max(cfg.min_side);
    let bw = rng.gen_range(cfg.min_side..=max_w);
    let bh = rng.gen_range(cfg.min_side..=max_h);
    let x0 = rng.gen_range(0..=w - bw);
    let y0 = rng.gen_range(0..=h - bh);
    let mut pixels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let inside = (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y);
            let base = if inside {
                cfg.foreground
            } else {
                cfg.background
            };
            let noise = if cfg.jitter > 0.0 {
                rng.gen_range(-cfg.jitter..=cfg.jitter)
            } else {
                0.0
            };
            pixels.push(quantize(base + noise));
        }
    }
    let img = ImageTensor::new(h, w, 1, pixels).expect("quantized pixels lie in [0, 1]");
    ([x0, y0, x0 + bw, y0 + bh], img)
}

/// Deterministic fixture dataset and matching detector.
pub fn generate_fixture(
    cfg: &FixtureConfig,
    seed: u64,
) -> Result<(Vec<DatasetEntry>, Network), HarnessError> {
    let net = box_detector(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..cfg.images)
        .map(|i| {
            let (gt, image) = render(cfg, &mut rng);
            DatasetEntry {
                image_id: format!("rect{i:03}"),
                image,
                gt: GroundTruth::new(gt.map(|v| v as f64)).expect("rectangles have positive area"),
            }
        })
        .collect();
    Ok((entries, net))
}

/// Writes PGM images, `manifest.json` and `model.json` into `dir`.
pub fn write_fixture(
    dir: &Path,
    cfg: &FixtureConfig,
    seed: u64,
) -> Result<FixtureFiles, HarnessError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let (entries, net) = generate_fixture(cfg, seed)?;
    let mut manifest = Manifest {
        entries: Vec::new(),
    };
    for e in &entries {
        let name = format!("{}.pgm", e.image_id);
        write_raster(&dir.join(&name), &e.image)?;
        manifest.entries.push(ManifestEntry {
            image_id: e.image_id.clone(),
            image: Some(name.into()),
            raw: None,
            gt: e.gt,
        });
    }
    let files = FixtureFiles {
        manifest: dir.join("manifest.json"),
        model: dir.join("model.json"),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    std::fs::write(&files.manifest, text + "\n").map_err(io(&files.manifest))?;
    net.save(&files.model, WeightEncoding::Base64)?;
    Ok(files)
}
