//! Candidate ROI generation: a pluggable "segment everything" interface, a
//! deterministic quantile-threshold segmenter, the area/overlap outlier
//! filter, and class-posterior fusion for segmenters that label the same
//! classes in both images.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, GridImage};
use crate::matching::{MatchConfig, RoiPair, RoiPairSet};

/// Produces candidate ROI masks for a 2D image.
///
/// Every returned mask must have the image's dims. An empty list is valid.
pub trait Segmenter: Send + Sync {
    fn segment(&self, image: &GridImage) -> Result<Vec<BinaryMask>>;
}

/// Builtin segmenter: threshold the normalized image at evenly spaced
/// quantiles and emit every 4-connected bright component.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileSegmenter {
    pub thresholds: usize,
    pub lowest_quantile: f64,
    pub highest_quantile: f64,
}

impl Default for QuantileSegmenter {
    fn default() -> Self {
        QuantileSegmenter {
            thresholds: 8,
            lowest_quantile: 0.1,
            highest_quantile: 0.9,
        }
    }
}

impl QuantileSegmenter {
    pub fn with_thresholds(thresholds: usize) -> Self {
        QuantileSegmenter {
            thresholds,
            ..Default::default()
        }
    }

    /// Quantile levels in ascending order.
    pub fn quantiles(&self) -> Vec<f64> {
        match self.thresholds {
            0 => vec![],
            1 => vec![0.5 * (self.lowest_quantile + self.highest_quantile)],
            q => (0..q)
                .map(|k| {
                    self.lowest_quantile
                        + (self.highest_quantile - self.lowest_quantile) * k as f64
                            / (q - 1) as f64
                })
                .collect(),
        }
    }
}

impl Segmenter for QuantileSegmenter {
    fn segment(&self, image: &GridImage) -> Result<Vec<BinaryMask>> {
        segment_everything(image, self)
    }
}

/// Min-max normalize to [0, 1]; a constant image maps to all zeros.
pub fn normalize_intensity(data: &[f64]) -> Vec<f64> {
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 {
        return vec![0.0; data.len()];
    }
    data.iter().map(|&v| (v - lo) / range).collect()
}

/// Linear-interpolated quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// 4-connected components of `fg`, in row-major discovery order.
pub fn connected_components(dims: &Dims, fg: &[bool]) -> Vec<BinaryMask> {
    let (rows, cols) = (dims[0], dims[1]);
    let mut label = vec![usize::MAX; fg.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..fg.len() {
        if !fg[seed] || label[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![false; fg.len()];
        label[seed] = id;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            members[i] = true;
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if fg[j] && label[j] == usize::MAX {
                    label[j] = id;
                    queue.push_back(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        out.push(BinaryMask::new(dims.clone(), members).expect("dims match"));
    }
    out
}

/// Builtin "everything" segmentation of a 2D image.
///
/// Candidates are ordered by threshold index, then component discovery order.
pub fn segment_everything(image: &GridImage, cfg: &QuantileSegmenter) -> Result<Vec<BinaryMask>> {
    if image.dims().ndim() != 2 {
        return Err(Error::dim("segment_everything expects a 2D image"));
    }
    let norm = normalize_intensity(image.data());
    let mut sorted = norm.clone();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for q in cfg.quantiles() {
        let t = quantile_sorted(&sorted, q);
        let fg: Vec<bool> = norm.iter().map(|&v| v > t).collect();
        out.extend(connected_components(image.dims(), &fg));
    }
    Ok(out)
}

/// Area bounds and overlap suppression for candidate ROIs.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiFilterConfig {
    pub min_area: usize,
    pub max_area: usize,
    pub max_overlap_ratio: f64,
}

impl Default for RoiFilterConfig {
    fn default() -> Self {
        RoiFilterConfig {
            min_area: 200,
            max_area: 7000,
            max_overlap_ratio: 0.8,
        }
    }
}

impl RoiFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_area == 0 || self.min_area > self.max_area {
            return Err(Error::Validation(format!(
                "need 0 < min_area <= max_area, got {} / {}",
                self.min_area, self.max_area
            )));
        }
        if !(0.0..=1.0).contains(&self.max_overlap_ratio) {
            return Err(Error::Validation(format!(
                "max_overlap_ratio {} outside [0, 1]",
                self.max_overlap_ratio
            )));
        }
        Ok(())
    }
}

/// `|A∩B| / min(|A|, |B|)`; zero when either mask is empty.
pub fn overlap_ratio(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let smaller = a.area().min(b.area());
    if smaller == 0 {
        return 0.0;
    }
    a.intersection(b) as f64 / smaller as f64
}

/// Indices of the candidates kept by [`filter_rois`], in input order.
pub fn filter_roi_indices(candidates: &[BinaryMask], cfg: &RoiFilterConfig) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, m) in candidates.iter().enumerate() {
        let area = m.area();
        if area < cfg.min_area || area > cfg.max_area {
            continue;
        }
        if kept
            .iter()
            .all(|&k| overlap_ratio(&candidates[k], m) <= cfg.max_overlap_ratio)
        {
            kept.push(i);
        }
    }
    kept
}

/// Drop candidates outside the area bounds, then greedily suppress any mask
/// overlapping an already kept one by more than `max_overlap_ratio`.
pub fn filter_rois(candidates: &[BinaryMask], cfg: &RoiFilterConfig) -> Vec<BinaryMask> {
    filter_roi_indices(candidates, cfg)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect()
}

/// Segment and filter in one go.
pub fn candidate_rois(
    image: &GridImage,
    segmenter: &dyn Segmenter,
    filter: &RoiFilterConfig,
) -> Result<Vec<BinaryMask>> {
    let raw = segmenter.segment(image)?;
    if let Some(m) = raw.iter().find(|m| m.dims() != image.dims()) {
        return Err(Error::dim(format!(
            "segmenter returned mask dims {:?} for image {:?}",
            m.dims().as_slice(),
            image.dims().as_slice()
        )));
    }
    Ok(filter_rois(&raw, filter))
}

/// Per-voxel class probability vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGrid {
    dims: Dims,
    classes: usize,
    probs: Vec<f64>,
}

impl PosteriorGrid {
    /// `probs` is voxel-major with the class index fastest.
    pub fn new(dims: Dims, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::dim("posterior needs at least one class"));
        }
        if probs.len() != dims.len() * classes {
            return Err(Error::dim(format!(
                "posterior has {} values, expected {}",
                probs.len(),
                dims.len() * classes
            )));
        }
        for (i, v) in probs.chunks(classes).enumerate() {
            let sum: f64 = v.iter().sum();
            if v.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!(
                    "voxel {i} is not a probability vector: {v:?}"
                )));
            }
        }
        Ok(PosteriorGrid {
            dims,
            classes,
            probs,
        })
    }

    pub fn uniform(dims: Dims, classes: usize) -> Self {
        let probs = vec![1.0 / classes as f64; dims.len() * classes];
        PosteriorGrid {
            dims,
            classes,
            probs,
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn voxel(&self, idx: usize) -> &[f64] {
        &self.probs[idx * self.classes..(idx + 1) * self.classes]
    }

    /// Class of highest probability per voxel; ties go to the lower class.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs
            .chunks(self.classes)
            .map(|v| {
                v.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &p)| {
                        if p > best.1 {
                            (k, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

/// Per-voxel product of two posteriors, renormalized. Voxels whose product is
/// all zero become uniform.
pub fn fuse_posteriors(px: &PosteriorGrid, py: &PosteriorGrid) -> Result<PosteriorGrid> {
    if px.dims != py.dims || px.classes != py.classes {
        return Err(Error::dim(format!(
            "posterior mismatch: {:?}x{} vs {:?}x{}",
            px.dims.as_slice(),
            px.classes,
            py.dims.as_slice(),
            py.classes
        )));
    }
    let k = px.classes;
    let mut probs = Vec::with_capacity(px.probs.len());
    for (a, b) in px.probs.chunks(k).zip(py.probs.chunks(k)) {
        let start = probs.len();
        probs.extend(a.iter().zip(b).map(|(p, q)| p * q));
        let z: f64 = probs[start..].iter().sum();
        if z > 0.0 {
            probs[start..].iter_mut().for_each(|p| *p /= z);
        } else {
            probs[start..].iter_mut().for_each(|p| *p = 1.0 / k as f64);
        }
    }
    Ok(PosteriorGrid {
        dims: px.dims.clone(),
        classes: k,
        probs,
    })
}

/// Pair the argmax regions of each class across two posteriors. A class
/// yields a pair only when it is present in both images.
pub fn posteriors_to_pairs(px: &PosteriorGrid, py: &PosteriorGrid) -> Result<RoiPairSet> {
    if px.classes != py.classes {
        return Err(Error::dim(format!(
            "class count mismatch: {} vs {}",
            px.classes, py.classes
        )));
    }
    let ax = px.argmax();
    let ay = py.argmax();
    let mut pairs = Vec::new();
    for k in 0..px.classes {
        let mx = BinaryMask::new(px.dims.clone(), ax.iter().map(|&c| c == k).collect())?;
        let my = BinaryMask::new(py.dims.clone(), ay.iter().map(|&c| c == k).collect())?;
        if mx.area() > 0 && my.area() > 0 {
            pairs.push(RoiPair {
                moving_id: k,
                fixed_id: k,
                similarity: 1.0,
                moving: mx,
                fixed: my,
            });
        }
    }
    Ok(RoiPairSet::from_pairs(pairs, MatchConfig::default()))
}
