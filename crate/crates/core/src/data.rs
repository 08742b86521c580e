//! Dataset generation and ingestion.
//!
//! Two sources cover the experiments: a synthetic Gaussian-input task whose
//! label is `argmax(Wx)` for a fixed random matrix, and small grayscale
//! images. Image runs default to a procedural 8x8 digit-glyph set (piecewise
//! constant strokes with jitter, so total-variation priors are meaningful);
//! full MNIST-format IDX files load the same way when available.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::format_float;
use crate::models::LabeledExample;
use crate::num::Real;
use crate::tensor::Tensor;

// ── synthetic Gaussian task ─────────────────────────────────────────

/// Inputs `x ~ N(0, I_dim)`, label `y = argmax(W x)` with `W` fixed per seed.
#[derive(Debug, Clone)]
pub struct SyntheticTask<T: Real> {
    pub dim: usize,
    pub classes: usize,
    pub w: Tensor<T>,
    pub seed: u64,
}

/// Serializable descriptor; the matrix is regenerated from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            dim: 20,
            classes: 10,
            seed: 0,
        }
    }
}

impl<T: Real> SyntheticTask<T> {
    pub fn new(spec: &SyntheticTaskSpec) -> Result<Self> {
        if spec.dim == 0 || spec.classes < 2 {
            return Err(Error::InvalidConfig(
                "synthetic task needs dim >= 1 and classes >= 2".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let data: Vec<T> = (0..spec.classes * spec.dim)
            .map(|_| {
                T::of(<StandardNormal as Distribution<f64>>::sample(
                    &StandardNormal,
                    &mut rng,
                ))
            })
            .collect();
        Ok(SyntheticTask {
            dim: spec.dim,
            classes: spec.classes,
            w: Tensor::new(vec![spec.classes, spec.dim], data)?,
            seed: spec.seed,
        })
    }

    pub fn label_of(&self, x: &Tensor<T>) -> usize {
        let mut best = T::neg_infinity();
        let mut label = 0usize;
        for c in 0..self.classes {
            let mut acc = T::zero();
            for j in 0..self.dim {
                acc += self.w.at(c, j) * x.data()[j];
            }
            if acc > best {
                best = acc;
                label = c;
            }
        }
        label
    }

    /// Draws one example from a caller-provided stream.
    pub fn sample(&self, rng: &mut impl Rng) -> LabeledExample<T> {
        let x: Vec<T> = (0..self.dim)
            .map(|_| {
                T::of(<StandardNormal as Distribution<f64>>::sample(
                    &StandardNormal,
                    rng,
                ))
            })
            .collect();
        let x = Tensor::new(vec![self.dim], x).expect("finite normal draws");
        let y = self.label_of(&x);
        LabeledExample { x, y }
    }

    /// The `index`-th example of the task's deterministic stream: the same
    /// (task seed, draw index) always produces the same example.
    pub fn draw(&self, index: u64) -> LabeledExample<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, index));
        self.sample(&mut rng)
    }
}

/// splitmix64 over the pair; derives independent per-item streams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ── image datasets ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ImageDataset<T: Real> {
    /// Row-major `(h, w)` tensors with values in `[0, 1]`.
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub image_shape: (usize, usize),
    pub class_count: usize,
    /// Pixel ceiling after normalization; 1.0 for `/255` scaling.
    pub max_val: f64,
}

impl<T: Real> ImageDataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn pixel_count(&self) -> usize {
        self.image_shape.0 * self.image_shape.1
    }

    /// Flattened example for a classifier with input width `h*w`.
    pub fn example(&self, i: usize) -> Result<LabeledExample<T>> {
        Ok(LabeledExample {
            x: self.images[i].reshaped(vec![self.pixel_count()])?,
            y: self.labels[i],
        })
    }
}

/// 8x8 digit glyphs, one stroke pattern per class.
const GLYPHS: [[&str; 8]; 10] = [
    [
        "..####..", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.", ".#....#.",
        "..####..",
    ],
    [
        "...##...", "..###...", "...##...", "...##...", "...##...", "...##...", "...##...",
        ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", ".....#..", "....#...", "...#....", "..#.....",
        ".######.",
    ],
    [
        "..####..", ".#....#.", "......#.", "...###..", "......#.", "......#.", ".#....#.",
        "..####..",
    ],
    [
        ".....##.", "....#.#.", "...#..#.", "..#...#.", ".#....#.", ".#######", "......#.",
        "......#.",
    ],
    [
        ".######.", ".#......", ".#......", ".#####..", "......#.", "......#.", ".#....#.",
        "..####..",
    ],
    [
        "..####..", ".#......", ".#......", ".#####..", ".#....#.", ".#....#.", ".#....#.",
        "..####..",
    ],
    [
        ".######.", "......#.", ".....#..", "....#...", "...#....", "...#....", "...#....",
        "...#....",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..####..", ".#....#.", ".#....#.", ".#....#.",
        "..####..",
    ],
    [
        "..####..", ".#....#.", ".#....#.", "..#####.", "......#.", "......#.", "......#.",
        "..####..",
    ],
];

/// Deterministic 8x8 "digit" images: glyph strokes with per-image intensity
/// jitter and light pixel noise, clipped to `[0, 1]`. Classes cycle 0..=9.
pub fn toy_digits<T: Real>(count: usize, seed: u64) -> ImageDataset<T> {
    toy_digits_sized(count, seed, 8)
}

/// Same glyphs rendered on a `size x size` canvas (nearest-neighbor upscale,
/// centered). `size = 28` reproduces MNIST geometry.
pub fn toy_digits_sized<T: Real>(count: usize, seed: u64, size: usize) -> ImageDataset<T> {
    let size = size.max(8);
    let scale = size / 8;
    let pad = (size - 8 * scale) / 2;
    let noise = Normal::new(0.0f64, 0.05).unwrap();
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let label = i % 10;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
        let ink = rng.random_range(0.65..1.0);
        let paper = rng.random_range(0.0..0.08);
        let mut pixels = Vec::with_capacity(size * size);
        for r in 0..size {
            for c in 0..size {
                let (gr, gc) = (
                    (r.saturating_sub(pad)) / scale,
                    (c.saturating_sub(pad)) / scale,
                );
                let on_glyph = r >= pad
                    && c >= pad
                    && gr < 8
                    && gc < 8
                    && GLYPHS[label][gr].as_bytes()[gc] == b'#';
                let base = if on_glyph { ink } else { paper };
                let v = (base + noise.sample(&mut rng)).clamp(0.0, 1.0);
                pixels.push(T::of(v));
            }
        }
        images.push(Tensor::new(vec![size, size], pixels).expect("finite pixels"));
        labels.push(label);
    }
    ImageDataset {
        images,
        labels,
        image_shape: (size, size),
        class_count: 10,
        max_val: 1.0,
    }
}

// ── IDX container (MNIST layout, big-endian) ────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::BadFormat("truncated IDX header".into()))
}

/// Loads the first `limit` examples from an IDX image/label file pair,
/// scaling pixels to `[0, 1]` by `/255`.
pub fn load_idx<T: Real>(
    images_path: &Path,
    labels_path: &Path,
    limit: usize,
) -> Result<ImageDataset<T>> {
    let img_bytes = std::fs::read(images_path)?;
    let lbl_bytes = std::fs::read(labels_path)?;

    let magic = read_u32_be(&img_bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadFormat(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&img_bytes, 4)? as usize;
    let rows = read_u32_be(&img_bytes, 8)? as usize;
    let cols = read_u32_be(&img_bytes, 12)? as usize;
    if img_bytes.len() != 16 + count * rows * cols {
        return Err(Error::BadFormat(format!(
            "image payload has {} bytes, header implies {}",
            img_bytes.len() - 16.min(img_bytes.len()),
            count * rows * cols
        )));
    }

    let lmagic = read_u32_be(&lbl_bytes, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::BadFormat(format!(
            "bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let lcount = read_u32_be(&lbl_bytes, 4)? as usize;
    if lbl_bytes.len() != 8 + lcount {
        return Err(Error::BadFormat("label payload truncated".into()));
    }
    if lcount != count {
        return Err(Error::BadFormat(format!(
            "{count} images but {lcount} labels"
        )));
    }

    let take = limit.min(count);
    let mut images = Vec::with_capacity(take);
    let mut labels = Vec::with_capacity(take);
    let mut class_count = 0usize;
    for i in 0..take {
        let start = 16 + i * rows * cols;
        let pixels: Vec<T> = img_bytes[start..start + rows * cols]
            .iter()
            .map(|&b| T::of(f64::from(b) / 255.0))
            .collect();
        images.push(Tensor::new(vec![rows, cols], pixels)?);
        let label = lbl_bytes[8 + i] as usize;
        class_count = class_count.max(label + 1);
        labels.push(label);
    }
    Ok(ImageDataset {
        images,
        labels,
        image_shape: (rows, cols),
        class_count: class_count.max(10),
        max_val: 1.0,
    })
}

/// Writes a dataset back to the IDX pair; inverse of [`load_idx`] for data
/// that came from `/255` scaling.
pub fn save_idx<T: Real>(
    dataset: &ImageDataset<T>,
    images_path: &Path,
    labels_path: &Path,
) -> Result<()> {
    let (rows, cols) = dataset.image_shape;
    let mut img = Vec::with_capacity(16 + dataset.len() * rows * cols);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for image in &dataset.images {
        for &p in image.data() {
            img.push((p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }
    std::fs::write(images_path, img)?;

    let mut lbl = Vec::with_capacity(8 + dataset.len());
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &l in &dataset.labels {
        lbl.push(l as u8);
    }
    std::fs::write(labels_path, lbl)?;
    Ok(())
}

// ── CSV tensors ─────────────────────────────────────────────────────

/// Reads a tensor from CSV, row-major. Row and column counts must multiply
/// to the shape's element count.
pub fn load_csv_tensor<T: Real>(path: &Path, shape: Vec<usize>) -> Result<Tensor<T>> {
    let text = std::fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut line_count = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        line_count += 1;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("{e} in field {field:?}"),
            })?;
            values.push(T::of(v));
        }
    }
    if line_count == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "empty CSV".into(),
        });
    }
    let expected: usize = shape.iter().product();
    if values.len() != expected {
        return Err(Error::Parse {
            line: line_count,
            message: format!("{} values, shape {shape:?} needs {expected}", values.len()),
        });
    }
    Tensor::new(shape, values)
}

/// Writes a tensor as CSV with 17-significant-digit floats: rank-2 tensors
/// one row per line, anything else a single line.
pub fn save_csv_tensor<T: Real>(path: &Path, tensor: &Tensor<T>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    let cols = match tensor.shape() {
        [_, c] => *c,
        _ => tensor.numel(),
    };
    for (i, v) in tensor.data().iter().enumerate() {
        let sep = if (i + 1) % cols == 0 { "\n" } else { "," };
        write!(file, "{}{}", format_float(v.as_f64()), sep)?;
    }
    Ok(())
}
