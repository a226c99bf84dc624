//! Colored-digit bias probe: each grayscale digit is tinted with a class
//! color with probability `rho`, otherwise with a uniformly drawn other
//! color. At `rho = 1` color alone predicts the label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Rgb = [f32; 3];

/// Ten saturated, pairwise distinct colors.
pub const DEFAULT_PALETTE: [Rgb; 10] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.5, 0.0],
    [0.5, 0.0, 1.0],
    [0.5, 1.0, 0.0],
    [1.0, 1.0, 1.0],
];

#[derive(Clone, Debug, PartialEq)]
pub struct ColoredDataset {
    pub dataset: Dataset,
    /// Palette index each sample was tinted with.
    pub color_index: Vec<usize>,
}

impl ColoredDataset {
    /// Fraction of samples tinted with their own class color.
    pub fn agreement(&self) -> f64 {
        let hits = self.color_index.iter().zip(&self.dataset.labels).filter(|(c, l)| c == l).count();
        hits as f64 / self.color_index.len() as f64
    }
}

pub fn make_colored_mnist(base: &Dataset, rho: f64, palette: &[Rgb], seed: u64) -> Result<ColoredDataset> {
    let (n, c, h, w) = base.images.dims4()?;
    if c != 1 || base.views != 1 {
        return Err(Error::Validation(format!("colored digits need single-channel input, got {c} channels")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Config(format!("correlation must lie in [0, 1], got {rho}")));
    }
    let k = base.num_classes();
    if palette.len() != k {
        return Err(Error::Validation(format!("palette has {} colors for {k} classes", palette.len())));
    }
    if k < 2 && rho < 1.0 {
        return Err(Error::Validation("off-class tints need at least two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    let mut data = Vec::with_capacity(n * 3 * plane);
    let mut color_index = Vec::with_capacity(n);
    for (i, &label) in base.labels.iter().enumerate() {
        let color = if rng.gen_bool(rho) {
            label
        } else {
            // Uniform over the k-1 other colors.
            let other = rng.gen_range(0..k - 1);
            if other >= label {
                other + 1
            } else {
                other
            }
        };
        color_index.push(color);
        let gray = &base.images.data()[i * plane..(i + 1) * plane];
        for &tint in &palette[color] {
            data.extend(gray.iter().map(|&g| g * tint));
        }
    }
    let images = Tensor::new(vec![n, 3, h, w], data)?;
    let dataset = Dataset::new(images, base.labels.clone(), base.class_names.clone(), base.split)?;
    Ok(ColoredDataset { dataset, color_index })
}
