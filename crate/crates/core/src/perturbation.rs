//! Input images and the interval domains reachable under a perturbation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbationError {
    #[error("image of shape {height}x{width}x{channels} needs {expected} pixels, got {got}")]
    PixelCount {
        height: usize,
        width: usize,
        channels: usize,
        expected: usize,
        got: usize,
    },
    #[error("pixel {index} has value {value}, expected a value in [0, 1]")]
    PixelRange { index: usize, value: f64 },
    #[error("perturbation magnitude must be finite and nonnegative, got {0}")]
    Magnitude(f64),
    #[error("clamping to [0, 1] empties the domain of pixel {0}")]
    EmptyDomain(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("sweep needs steps >= 1 and 0 <= min <= max, got min {min} max {max} steps {steps}")]
    Sweep { min: f64, max: f64, steps: usize },
}

/// Image with pixel intensities in `[0, 1]`, stored row-major as
/// `(row, column, channel)`. Row 0 is the bottom row so that pixel `(r, c)`
/// covers the unit square `[c, c+1] x [r, r+1]` in box coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawImage")]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

#[derive(Deserialize)]
struct RawImage {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl TryFrom<RawImage> for ImageTensor {
    type Error = PerturbationError;

    fn try_from(r: RawImage) -> Result<Self, Self::Error> {
        ImageTensor::new(r.height, r.width, r.channels, r.pixels)
    }
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, PerturbationError> {
        let expected = height * width * channels;
        if pixels.len() != expected {
            return Err(PerturbationError::PixelCount {
                height,
                width,
                channels,
                expected,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(PerturbationError::PixelRange { index, value });
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
        .expect("fill value in [0, 1]")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.pixels[self.index(row, col, channel)]
    }
}

/// A perturbed image. Perturbed values may leave `[0, 1]`, so this carries
/// the shape without the range invariant of [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedImage {
    pub shape: (usize, usize, usize),
    pub pixels: Vec<f64>,
}

impl From<&ImageTensor> for PerturbedImage {
    fn from(img: &ImageTensor) -> Self {
        PerturbedImage {
            shape: img.shape(),
            pixels: img.pixels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    WhiteNoise,
    Brightness,
    Contrast,
}

impl PerturbationKind {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationKind::WhiteNoise => "whitenoise",
            PerturbationKind::Brightness => "brightness",
            PerturbationKind::Contrast => "contrast",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitenoise" => Ok(PerturbationKind::WhiteNoise),
            "brightness" => Ok(PerturbationKind::Brightness),
            "contrast" => Ok(PerturbationKind::Contrast),
            other => Err(format!("unknown perturbation kind `{other}`")),
        }
    }
}

/// How the contrast coefficient `α` acts on a pixel.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum ContrastMode {
    /// `s = s0 · α`.
    Literal,
    /// `s = s0 · (1 + α)`.
    #[default]
    Relative,
}

impl ContrastMode {
    pub fn name(&self) -> &'static str {
        match self {
            ContrastMode::Literal => "literal",
            ContrastMode::Relative => "relative",
        }
    }
}

impl FromStr for ContrastMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(ContrastMode::Literal),
            "relative" => Ok(ContrastMode::Relative),
            other => Err(format!("unknown contrast mode `{other}`")),
        }
    }
}

/// A perturbation family and its intensity.
///
/// The perturbation parameter ranges over `[-magnitude, magnitude]`, or over
/// `[0, magnitude]` when `one_sided` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    #[serde(default)]
    pub contrast_mode: ContrastMode,
    #[serde(default)]
    pub one_sided: bool,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, magnitude: f64) -> Result<Self, PerturbationError> {
        if !magnitude.is_finite() || magnitude < 0.0 {
            return Err(PerturbationError::Magnitude(magnitude));
        }
        Ok(Self {
            kind,
            magnitude,
            contrast_mode: ContrastMode::default(),
            one_sided: false,
        })
    }

    pub fn with_contrast_mode(mut self, mode: ContrastMode) -> Self {
        self.contrast_mode = mode;
        self
    }

    pub fn with_one_sided(mut self, one_sided: bool) -> Self {
        self.one_sided = one_sided;
        self
    }

    /// Range of the perturbation parameter.
    pub fn parameter_range(&self) -> (f64, f64) {
        if self.one_sided {
            (0.0, self.magnitude)
        } else {
            (-self.magnitude, self.magnitude)
        }
    }

    /// Image of a single pixel value under parameter `alpha`.
    fn apply(&self, s: f64, alpha: f64) -> f64 {
        match (self.kind, self.contrast_mode) {
            (PerturbationKind::WhiteNoise | PerturbationKind::Brightness, _) => s + alpha,
            (PerturbationKind::Contrast, ContrastMode::Literal) => s * alpha,
            (PerturbationKind::Contrast, ContrastMode::Relative) => s * (1.0 + alpha),
        }
    }

    /// Interval hull of the values reachable from pixel `s`.
    fn pixel_range(&self, s: f64) -> (f64, f64) {
        let (a, b) = self.parameter_range();
        // Each map is affine in alpha, so the extremes sit at the parameter ends.
        let (u, v) = (self.apply(s, a), self.apply(s, b));
        (u.min(v), u.max(v))
    }
}

/// Evenly spaced magnitudes `min, ..., max` (`steps` values).
pub fn sweep_magnitudes(min: f64, max: f64, steps: usize) -> Result<Vec<f64>, PerturbationError> {
    if steps == 0
        || !min.is_finite()
        || !max.is_finite()
        || min < 0.0
        || min > max
        || (steps == 1 && min != max)
    {
        return Err(PerturbationError::Sweep { min, max, steps });
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    let last = (steps - 1) as f64;
    // Rounded to 15 significant digits so 0.05 * 3 / 10 reports as 0.015.
    let tidy = |v: f64| {
        format!("{v:.14e}")
            .parse::<f64>()
            .expect("formatted float parses")
    };
    Ok((0..steps)
        .map(|i| {
            if i == steps - 1 {
                max
            } else {
                tidy(min + (max - min) * i as f64 / last)
            }
        })
        .collect())
}

/// Per-pixel interval enclosure of a perturbation domain.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBounds {
    pub shape: (usize, usize, usize),
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl InputBounds {
    pub fn point(img: &ImageTensor) -> Self {
        InputBounds {
            shape: img.shape(),
            lo: img.pixels.clone(),
            hi: img.pixels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn contains(&self, img: &PerturbedImage) -> bool {
        img.shape == self.shape
            && img
                .pixels
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(x, (l, h))| l <= x && x <= h)
    }

    pub fn is_subset_of(&self, other: &InputBounds) -> bool {
        self.shape == other.shape
            && (0..self.len()).all(|i| other.lo[i] <= self.lo[i] && self.hi[i] <= other.hi[i])
    }
}

/// Interval hull of the images reachable from `s0` under `spec`, optionally
/// intersected with `[0, 1]`.
pub fn build_domain(
    s0: &ImageTensor,
    spec: &PerturbationSpec,
    clamp01: bool,
) -> Result<InputBounds, PerturbationError> {
    let n = s0.pixels.len();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for (i, &s) in s0.pixels.iter().enumerate() {
        let (mut l, mut h) = spec.pixel_range(s);
        if clamp01 {
            l = l.max(0.0);
            h = h.min(1.0);
            if l > h {
                return Err(PerturbationError::EmptyDomain(i));
            }
        }
        lo.push(l);
        hi.push(h);
    }
    Ok(InputBounds {
        shape: s0.shape(),
        lo,
        hi,
    })
}

/// Deterministic samples of the perturbation domain that keep its structure:
/// white noise draws each pixel independently, brightness and contrast draw
/// one coefficient per image.
pub fn sample_domain(
    s0: &ImageTensor,
    spec: &PerturbationSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<PerturbedImage>, PerturbationError> {
    if count == 0 {
        return Err(PerturbationError::NoSamples);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b) = spec.parameter_range();
    let draw = |rng: &mut ChaCha8Rng| if a < b { rng.gen_range(a..=b) } else { a };
    let samples = (0..count)
        .map(|_| {
            let pixels = match spec.kind {
                PerturbationKind::WhiteNoise => s0
                    .pixels
                    .iter()
                    .map(|&s| spec.apply(s, draw(&mut rng)))
                    .collect(),
                PerturbationKind::Brightness | PerturbationKind::Contrast => {
                    let alpha = draw(&mut rng);
                    s0.pixels.iter().map(|&s| spec.apply(s, alpha)).collect()
                }
            };
            PerturbedImage {
                shape: s0.shape(),
                pixels,
            }
        })
        .collect();
    Ok(samples)
}

/// Clamps every pixel of a sample into `[0, 1]`, matching a domain built
/// with `clamp01`.
pub fn clamp_unit(img: &mut PerturbedImage) {
    for p in &mut img.pixels {
        *p = p.clamp(0.0, 1.0);
    }
}
