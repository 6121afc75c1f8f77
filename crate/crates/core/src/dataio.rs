//! Image ingestion and the grayscale preprocessing chain
//! (resize, scale to `[0, 1]`, replicate into three channels), plus
//! dataset splitting, batching and a synthetic two-class generator.

use std::path::{Path, PathBuf};

use log::warn;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Contract(String),
    #[error("dataset error: {0}")]
    Dataset(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Default class directories; the position in the list is the label.
pub const DEFAULT_CLASS_NAMES: [&str; 2] = ["Normal", "Abnormal"];

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DataError::Contract(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(DataError::Contract(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Result<Self> {
        GrayImage::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.pixels.clone(),
        )
        .expect("pixel buffer matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| DataError::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
    }
}

/// Channel-major `(C, H, W)` float image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || values.len() != channels * height * width
        {
            return Err(DataError::Contract(format!(
                "({channels}, {height}, {width}) tensor cannot hold {} values",
                values.len()
            )));
        }
        Ok(ImageTensor {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.values[(c * self.height + row) * self.width + col]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Decodes a PNG or JPEG. Colour sources are collapsed with BT.601 luma
/// `0.299 R + 0.587 G + 0.114 B`, rounded half-up; alpha is ignored.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let decoded = image::load_from_memory(&bytes).map_err(|e| DataError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let pixels = if decoded.color().has_color() {
        decoded
            .to_rgb8()
            .pixels()
            .map(|p| luminance(p[0], p[1], p[2]))
            .collect()
    } else {
        decoded.to_luma8().into_raw()
    };
    GrayImage::new(h, w, pixels)
}

pub fn luminance(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    round_half_up(y).clamp(0.0, 255.0) as u8
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Bilinear resize with half-pixel centres: output pixel `x` samples the
/// source at `(x + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(DataError::Contract(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if (out_h, out_w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let taps = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * input as f64 / out as f64 - 0.5)
                    .clamp(0.0, (input - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = taps(out_h, img.height);
    let cols = taps(out_w, img.width);
    let mut pixels = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let p = |r: usize, c: usize| img.get(r, c) as f64;
            let top = p(r0, c0) * (1.0 - fx) + p(r0, c1) * fx;
            let bottom = p(r1, c0) * (1.0 - fx) + p(r1, c1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(round_half_up(v.clamp(0.0, 255.0)).min(255.0) as u8);
        }
    }
    GrayImage::new(out_h, out_w, pixels)
}

/// `pixel / 255` into a one-channel tensor.
pub fn normalize(img: &GrayImage) -> ImageTensor {
    let values = img.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    ImageTensor::new(1, img.height, img.width, values).expect("shape from valid image")
}

/// Copies the single plane into three identical channels.
pub fn replicate_channels(t: &ImageTensor) -> Result<ImageTensor> {
    if t.channels != 1 {
        return Err(DataError::Contract(format!(
            "channel replication needs a 1-channel input, got {}",
            t.channels
        )));
    }
    ImageTensor::new(3, t.height, t.width, t.values.repeat(3))
}

/// Channel `c` as a one-channel tensor; the inverse of replication.
pub fn extract_channel(t: &ImageTensor, c: usize) -> Result<ImageTensor> {
    if c >= t.channels {
        return Err(DataError::Contract(format!(
            "channel {c} out of range for {} channels",
            t.channels
        )));
    }
    ImageTensor::new(1, t.height, t.width, t.plane(c).to_vec())
}

/// Resize to `size`×`size`, normalize, replicate.
pub fn preprocess(img: &GrayImage, size: usize) -> Result<ImageTensor> {
    let resized = resize_bilinear(img, size, size)?;
    replicate_channels(&normalize(&resized))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<(ImageTensor, usize)>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(samples: Vec<(ImageTensor, usize)>, class_names: Vec<String>) -> Result<Self> {
        if let Some((first, _)) = samples.first() {
            let shape = first.shape();
            for (i, (t, label)) in samples.iter().enumerate() {
                if t.shape() != shape {
                    return Err(DataError::Dataset(format!(
                        "sample {i} has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                if *label >= class_names.len() {
                    return Err(DataError::Dataset(format!(
                        "sample {i} has label {label} but only {} classes",
                        class_names.len()
                    )));
                }
            }
        }
        Ok(LabeledDataset {
            samples,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(ImageTensor, usize)] {
        &self.samples
    }

    pub fn image(&self, i: usize) -> &ImageTensor {
        &self.samples[i].0
    }

    pub fn label(&self, i: usize) -> usize {
        self.samples[i].1
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.1).collect()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Optional `(v - mean) / std` standardization, for running weights that
    /// were trained with it. Values leave `[0, 1]` afterwards.
    pub fn standardize(&mut self, mean: f64, std: f64) -> Result<()> {
        if std <= 0.0 || !std.is_finite() || !mean.is_finite() {
            return Err(DataError::Contract(format!(
                "standardization needs finite mean and positive std, got {mean}/{std}"
            )));
        }
        for (t, _) in &mut self.samples {
            t.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: f64,
    pub seed: u64,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Contract(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

/// Number of training samples for `n` items; `floor(ratio * n)` with a small
/// guard so 0.8 * 4200 lands on 3360 despite binary rounding.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Shuffles `0..n` with the seeded stream and cuts at `floor(ratio * n)`.
pub fn split_indices(n: usize, ratio: f64, seed: u64) -> Result<SplitIndices> {
    check_ratio(ratio)?;
    if n == 0 {
        return Err(DataError::Contract("cannot split an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut rng::from_seed(seed));
    let cut = train_count(n, ratio);
    let test = order.split_off(cut);
    Ok(SplitIndices {
        train: order,
        test,
        ratio,
        seed,
    })
}

pub fn split_dataset(ds: &LabeledDataset, ratio: f64, seed: u64) -> Result<SplitIndices> {
    split_indices(ds.len(), ratio, seed)
}

/// Per-class variant of [`split_dataset`]: each class is shuffled and cut
/// separately, then the pieces are concatenated in class order.
pub fn split_dataset_stratified(
    ds: &LabeledDataset,
    ratio: f64,
    seed: u64,
) -> Result<SplitIndices> {
    check_ratio(ratio)?;
    if ds.is_empty() {
        return Err(DataError::Contract("cannot split an empty dataset".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..ds.class_names.len() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
        let mut r = rng::from_seed(rng::derive_seed(seed, class as u64));
        rng::shuffle(&mut members, &mut r);
        let cut = train_count(members.len(), ratio);
        test.extend_from_slice(&members[cut..]);
        members.truncate(cut);
        train.extend(members);
    }
    Ok(SplitIndices {
        train,
        test,
        ratio,
        seed,
    })
}

/// Consecutive chunks of `batch_size`; the last may be short. With
/// `shuffle_seed`, the indices are permuted first.
pub fn make_batches(
    indices: &[usize],
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(DataError::Contract("batch size must be at least 1".into()));
    }
    let mut order = indices.to_vec();
    if let Some(seed) = shuffle_seed {
        rng::shuffle(&mut order, &mut rng::from_seed(seed));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

const NOISE_SIGMA: f64 = 10.0;

/// Two-class synthetic images: class 0 is a dark field with a bright
/// centred disk, class 1 a bright field with a dark disk pushed off centre.
/// Gaussian noise (sigma 10 grey levels) is added and clamped. Returned in
/// class order, `n_per_class` of each.
pub fn generate_synthetic_images(
    n_per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<(GrayImage, usize)>> {
    if n_per_class == 0 {
        return Err(DataError::Contract("need at least one image per class".into()));
    }
    if height == 0 || width == 0 {
        return Err(DataError::Contract("image size must be positive".into()));
    }
    let mut r = rng::from_seed(rng::derive_seed(seed, rng::stream::SYNTH));
    let side = height.min(width) as f64;
    let mut out = Vec::with_capacity(2 * n_per_class);
    for label in 0..2 {
        for _ in 0..n_per_class {
            let jitter = rng::below(&mut r, 1000) as f64 / 1000.0;
            let (background, disk, radius, cy, cx) = if label == 0 {
                (
                    50.0,
                    200.0,
                    side * (0.22 + 0.06 * jitter),
                    height as f64 / 2.0,
                    width as f64 / 2.0,
                )
            } else {
                let angle = rng::below(&mut r, 3600) as f64 / 3600.0 * std::f64::consts::TAU;
                let off = side * 0.2;
                (
                    190.0,
                    40.0,
                    side * (0.16 + 0.06 * jitter),
                    height as f64 / 2.0 + off * angle.sin(),
                    width as f64 / 2.0 + off * angle.cos(),
                )
            };
            let mut pixels = Vec::with_capacity(height * width);
            for y in 0..height {
                for x in 0..width {
                    let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
                    let base = if dy * dy + dx * dx <= radius * radius {
                        disk
                    } else {
                        background
                    };
                    let noise: f64 = StandardNormal.sample(&mut r);
                    let v = round_half_up(base + NOISE_SIGMA * noise).clamp(0.0, 255.0);
                    pixels.push(v as u8);
                }
            }
            out.push((GrayImage::new(height, width, pixels)?, label));
        }
    }
    Ok(out)
}

/// Synthetic dataset already run through the preprocessing chain at its
/// native size.
pub fn generate_synthetic(
    n_per_class: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let images = generate_synthetic_images(n_per_class, height, width, seed)?;
    let samples = images
        .iter()
        .map(|(img, label)| Ok((replicate_channels(&normalize(img))?, *label)))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(samples, default_class_names())
}

pub fn default_class_names() -> Vec<String> {
    DEFAULT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Writes `root/<class>/<class lowercase>_NNNN.png`; returns the paths.
pub fn write_class_directories(
    root: &Path,
    images: &[(GrayImage, usize)],
    class_names: &[String],
) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    let mut counters = vec![0usize; class_names.len()];
    let mut written = Vec::with_capacity(images.len());
    for (img, label) in images {
        let name = class_names.get(*label).ok_or_else(|| {
            DataError::Contract(format!("label {label} has no class directory"))
        })?;
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let path = dir.join(format!("{}_{:04}.png", name.to_lowercase(), counters[*label]));
        counters[*label] += 1;
        img.save_png(&path)?;
        written.push(path);
    }
    Ok(written)
}

/// Loads `root/<class>/*` for each class name (label = position), files in
/// lexicographic order. Missing or empty class directories and undecodable
/// files are logged and skipped; zero usable images is an error.
pub fn load_directory_dataset(
    root: &Path,
    image_size: usize,
    class_names: &[String],
) -> Result<LabeledDataset> {
    if image_size == 0 {
        return Err(DataError::Contract("image size must be positive".into()));
    }
    let mut samples = Vec::new();
    for (label, name) in class_names.iter().enumerate() {
        let dir = root.join(name);
        let entries = match std::fs::read_dir(&dir) {
            Ok(entries) => entries,
            Err(e) => {
                warn!("skipping class {name}: cannot list {}: {e}", dir.display());
                continue;
            }
        };
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        if files.is_empty() {
            warn!("class directory {} is empty", dir.display());
        }
        for path in files {
            match load_image(&path).and_then(|img| preprocess(&img, image_size)) {
                Ok(t) => samples.push((t, label)),
                Err(e) => warn!("skipping {}: {e}", path.display()),
            }
        }
    }
    if samples.is_empty() {
        return Err(DataError::Dataset(format!(
            "no usable images under {} for classes {class_names:?}",
            root.display()
        )));
    }
    LabeledDataset::new(samples, class_names.to_vec())
}
