//! Synthetic labeled imagery: class-separable band-limited RGB textures
//! standing in for satellite captures at desk scale, plus the
//! low-resolution capture views and SR training pairs derived from them.

use crate::nn::Tensor4;
use crate::seed::stream;
use crate::sr::{bicubic_upscale, box_downsample, SrError, SrPair};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least 2 images per class ({images} images over {classes} classes)")]
    TooFewImages { images: usize, classes: usize },
    #[error("image size must be positive and divisible by the scale factor")]
    BadImageSize,
    #[error(transparent)]
    Sr(#[from] SrError),
}

/// Band-limited texture generation parameters. Each class owns a fixed
/// dominant frequency, orientation, and per-channel phase; images vary
/// in amplitude and a small phase jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureParams {
    /// Dominant frequency of class 0, cycles per image.
    pub base_frequency: f64,
    /// Frequency increment per class, cycles per image.
    pub frequency_step: f64,
    pub amplitude_range: (f64, f64),
    /// Per-image phase jitter, radians.
    pub phase_jitter: f64,
    /// Additive Gaussian capture noise applied to low-resolution views.
    pub noise_sigma: f64,
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            base_frequency: 5.0,
            frequency_step: 1.5,
            amplitude_range: (0.25, 0.4),
            phase_jitter: 0.3,
            noise_sigma: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetSpec {
    pub num_images: usize,
    /// High-resolution image size, pixels (square).
    pub size: usize,
    pub classes: usize,
    pub texture: TextureParams,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            num_images: 120,
            size: 32,
            classes: 5,
            texture: TextureParams::default(),
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.classes < 2 {
            return Err(DataError::TooFewClasses(self.classes));
        }
        if self.num_images < 2 * self.classes {
            return Err(DataError::TooFewImages {
                images: self.num_images,
                classes: self.classes,
            });
        }
        if self.size == 0 {
            return Err(DataError::BadImageSize);
        }
        Ok(())
    }
}

/// Labeled image set; each image is a (1, 3, size, size) tensor of
/// zero-centered pixels in [-0.5, 0.5].
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Tensor4<f32>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

/// Generates the labeled texture set. Labels cycle through the classes
/// so every class receives at least floor(n / classes) images.
pub fn generate_synthetic(spec: &SyntheticDatasetSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut rng = stream(spec.seed, "synthetic-textures", 0);
    let size = spec.size;
    let mut images = Vec::with_capacity(spec.num_images);
    let mut labels = Vec::with_capacity(spec.num_images);
    for i in 0..spec.num_images {
        let class = i % spec.classes;
        let freq = spec.texture.base_frequency + spec.texture.frequency_step * class as f64;
        let angle = std::f64::consts::PI * class as f64 / spec.classes as f64;
        let (sin_a, cos_a) = angle.sin_cos();
        let (lo, hi) = spec.texture.amplitude_range;
        let amplitude = rng.gen_range(lo..hi);
        let jitter = rng.gen_range(-spec.texture.phase_jitter..=spec.texture.phase_jitter);
        let mut img = Tensor4::zeros(1, 3, size, size);
        for ch in 0..3 {
            let phase = 2.0 * std::f64::consts::PI * (0.17 * class as f64 + 0.31 * ch as f64);
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 * cos_a + y as f64 * sin_a) / size as f64;
                    let v = amplitude
                        * (2.0 * std::f64::consts::PI * freq * u + phase + jitter).sin();
                    img.set(0, ch, y, x, v.clamp(-0.5, 0.5) as f32);
                }
            }
        }
        images.push(img);
        labels.push(class);
    }
    Ok(Dataset {
        images,
        labels,
        classes: spec.classes,
    })
}

/// Low-resolution capture views of a dataset: box-downsampled by
/// `factor`, corrupted by seeded Gaussian capture noise, plus the
/// bicubic re-upscaled version used by SR.
#[derive(Clone, Debug)]
pub struct SrViews {
    pub factor: usize,
    pub low_res: Vec<Tensor4<f32>>,
    pub low_upscaled: Vec<Tensor4<f32>>,
}

pub fn build_sr_views(
    dataset: &Dataset,
    factor: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<SrViews, DataError> {
    let mut rng = stream(seed, "capture-noise", 0);
    let noise = Normal::new(0.0f64, noise_sigma.max(1e-12)).expect("sigma >= 0");
    let mut low_res = Vec::with_capacity(dataset.len());
    let mut low_upscaled = Vec::with_capacity(dataset.len());
    for img in &dataset.images {
        let (_, _, h, w) = img.dims();
        if h % factor != 0 || w % factor != 0 {
            return Err(DataError::BadImageSize);
        }
        let mut low = box_downsample(img, factor);
        if noise_sigma > 0.0 {
            for v in low.data_mut() {
                let noisy = (*v as f64 + noise.sample(&mut rng)).clamp(-0.5, 0.5);
                *v = noisy as f32;
            }
        }
        let up = bicubic_upscale(&low, factor).map_err(SrError::from)?;
        low_res.push(low);
        low_upscaled.push(up);
    }
    Ok(SrViews {
        factor,
        low_res,
        low_upscaled,
    })
}

/// SR training pairs (upscaled capture, clean high-res) for a subset of
/// image indices.
pub fn make_sr_pairs(
    views: &SrViews,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<SrPair>, DataError> {
    indices
        .iter()
        .map(|&i| {
            SrPair::new(views.low_upscaled[i].clone(), dataset.images[i].clone())
                .map_err(DataError::from)
        })
        .collect()
}

/// Stratified train/test split: within each class the indices are
/// shuffled under the seed and split train_fraction / rest.
pub fn split_train_test(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = stream(seed, "train-test-split", 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..dataset.classes {
        let mut indices: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        indices.shuffle(&mut rng);
        let cut = ((indices.len() as f64) * train_fraction).round() as usize;
        let cut = cut.clamp(1.min(indices.len()), indices.len());
        train.extend_from_slice(&indices[..cut]);
        test.extend_from_slice(&indices[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
