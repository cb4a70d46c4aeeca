//! Feature maps and mask-pooled ROI prototypes.

use crate::error::{Error, Result};
use crate::grid::{resample_area, resample_mask, resample_soft, BinaryMask, Dims, GridImage, SoftMask};
use crate::segment::normalize_intensity;

/// Reduced-resolution grid of feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    dims: Dims,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    /// `data` is cell-major with the channel index fastest.
    pub fn new(dims: Dims, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::dim("feature map needs at least one channel"));
        }
        if data.len() != dims.len() * channels {
            return Err(Error::dim(format!(
                "feature map has {} values, expected {}",
                data.len(),
                dims.len() * channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("feature map has non-finite values".into()));
        }
        Ok(FeatureMap {
            dims,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.channels..(idx + 1) * self.channels]
    }

    /// One channel as a scalar grid.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }
}

/// Feature vector of one ROI.
#[derive(Clone, Debug, PartialEq)]
pub struct Prototype(pub Vec<f64>);

impl Prototype {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Turns a 2D image into a feature map.
pub trait FeatureExtractor: Send + Sync {
    fn extract(&self, image: &GridImage) -> Result<FeatureMap>;
}

/// Channel layout of [`BuiltinFeatures`].
pub mod channel {
    pub const MEAN: usize = 0;
    pub const STD: usize = 1;
    pub const GRAD_ROW: usize = 2;
    pub const GRAD_COL: usize = 3;
    /// Unsmoothed gradient magnitude; the next three are at the Gaussian scales.
    pub const GRAD_MAG: usize = 4;
    pub const COORD_ROW: usize = 8;
    pub const COORD_COL: usize = 9;
}

/// Hand-crafted descriptor: box-averaged intensity statistics, gradients,
/// multi-scale gradient magnitude and normalized cell coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinFeatures {
    pub downsample: usize,
    pub scales: [f64; 3],
    pub include_coordinates: bool,
}

impl Default for BuiltinFeatures {
    fn default() -> Self {
        BuiltinFeatures {
            downsample: 4,
            scales: [1.0, 2.0, 4.0],
            include_coordinates: true,
        }
    }
}

impl BuiltinFeatures {
    pub fn channels(&self) -> usize {
        if self.include_coordinates {
            10
        } else {
            8
        }
    }
}

impl FeatureExtractor for BuiltinFeatures {
    fn extract(&self, image: &GridImage) -> Result<FeatureMap> {
        extract_features(image, self)
    }
}

/// Separable Gaussian blur with edge replication; radius ceil(3σ).
pub fn gaussian_blur_2d(values: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let z: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= z);

    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            tmp[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[r * cols + clamp(c as i64 + k as i64 - radius, cols)])
                .sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(r as i64 + k as i64 - radius, rows) * cols + c])
                .sum();
        }
    }
    out
}

/// Central differences in the interior, one-sided at the borders.
/// Returns (d/drow, d/dcol).
pub fn gradient_2d(values: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let diff = |lo: usize, hi: usize, i: usize, n: usize, at: &dyn Fn(usize) -> f64| -> f64 {
        if n == 1 {
            0.0
        } else if i == 0 || i == n - 1 {
            at(hi) - at(lo)
        } else {
            0.5 * (at(hi) - at(lo))
        }
    };
    let mut gr = vec![0.0; values.len()];
    let mut gc = vec![0.0; values.len()];
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let (rlo, rhi) = (r.saturating_sub(1), (r + 1).min(rows - 1));
            let (clo, chi) = (c.saturating_sub(1), (c + 1).min(cols - 1));
            gr[i] = diff(rlo, rhi, r, rows, &|k| values[k * cols + c]);
            gc[i] = diff(clo, chi, c, cols, &|k| values[r * cols + k]);
        }
    }
    (gr, gc)
}

fn magnitude(gr: &[f64], gc: &[f64]) -> Vec<f64> {
    gr.iter().zip(gc).map(|(a, b)| a.hypot(*b)).collect()
}

/// Builtin feature extraction for a 2D image.
pub fn extract_features(image: &GridImage, cfg: &BuiltinFeatures) -> Result<FeatureMap> {
    let dims = image.dims();
    if dims.ndim() != 2 {
        return Err(Error::dim("extract_features expects a 2D image"));
    }
    let r = cfg.downsample.max(1);
    let (rows, cols) = (dims[0], dims[1]);
    if rows < r || cols < r {
        return Err(Error::Size(format!(
            "image {rows}x{cols} smaller than downsample factor {r}"
        )));
    }
    let out_dims = Dims::new(&[rows / r, cols / r])?;
    let norm = normalize_intensity(image.data());
    let squared: Vec<f64> = norm.iter().map(|v| v * v).collect();
    let (gr, gc) = gradient_2d(&norm, rows, cols);

    let mut full_res: Vec<Vec<f64>> = vec![norm.clone(), squared, gr.clone(), gc.clone(), magnitude(&gr, &gc)];
    for &sigma in &cfg.scales {
        let blurred = gaussian_blur_2d(&norm, rows, cols, sigma);
        let (br, bc) = gradient_2d(&blurred, rows, cols);
        full_res.push(magnitude(&br, &bc));
    }
    let pooled: Vec<Vec<f64>> = full_res
        .iter()
        .map(|ch| resample_area(ch, dims, &out_dims))
        .collect::<Result<_>>()?;

    let channels = cfg.channels();
    let (h, w) = (out_dims[0], out_dims[1]);
    let mut data = Vec::with_capacity(out_dims.len() * channels);
    for i in 0..out_dims.len() {
        let mean = pooled[0][i];
        let var = (pooled[1][i] - mean * mean).max(0.0);
        data.push(mean);
        data.push(var.sqrt());
        data.extend(pooled[2..].iter().map(|ch| ch[i]));
        if cfg.include_coordinates {
            data.push((i / w) as f64 / (h.max(2) - 1) as f64);
            data.push((i % w) as f64 / (w.max(2) - 1) as f64);
        }
    }
    FeatureMap::new(out_dims, channels, data)
}

/// Mask-weighted mean of the feature cells, after area-resampling the mask
/// to the feature grid.
pub fn compute_prototype(mask: &BinaryMask, fmap: &FeatureMap) -> Result<Prototype> {
    let res = resample_mask(mask, fmap.dims())?;
    pool(&res, fmap)
}

pub fn compute_prototype_soft(mask: &SoftMask, fmap: &FeatureMap) -> Result<Prototype> {
    let res = resample_soft(mask, fmap.dims())?;
    pool(&res, fmap)
}

fn pool(weights: &SoftMask, fmap: &FeatureMap) -> Result<Prototype> {
    let mut acc = vec![0.0; fmap.channels];
    let mut mass = 0.0;
    for (i, &w) in weights.data().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        mass += w;
        for (a, f) in acc.iter_mut().zip(fmap.cell(i)) {
            *a += w * f;
        }
    }
    if mass <= 0.0 {
        return Err(Error::EmptyRoi("mask has no mass on the feature grid".into()));
    }
    acc.iter_mut().for_each(|a| *a /= mass);
    Ok(Prototype(acc))
}
