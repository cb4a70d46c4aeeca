//! Synthetic cases with known pairings and ground-truth deformations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, Dims, DisplacementField, GridImage, Warp};
use crate::matching::RoiPairSet;
use crate::volume::VolumePairSet;

const PLACEMENT_ATTEMPTS: usize = 1000;
/// Background-to-background gap kept between blob edges, in voxels.
const BLOB_GAP: f64 = 3.0;
const LOWEST_INTENSITY: f64 = 0.2;
const MIN_INTENSITY_STEP: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub dims: Dims,
    pub blobs: usize,
    /// Inclusive blob radius range in voxels.
    pub radius: (f64, f64),
    /// Largest displacement norm of the ground-truth field, in voxels.
    pub amplitude: f64,
    /// Width of the Gaussian that smooths the field noise, in voxels.
    pub sigma_d: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dims: Dims::new(&[128, 128]).expect("static dims"),
            blobs: 6,
            radius: (9.0, 14.0),
            amplitude: 5.0,
            sigma_d: 16.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Largest blob count whose intensities stay `MIN_INTENSITY_STEP` apart.
    pub const MAX_BLOBS: usize = 9;

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.radius;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation(format!("invalid radius range {lo}..{hi}")));
        }
        if self.blobs == 0 || self.blobs > Self::MAX_BLOBS {
            return Err(Error::Validation(format!(
                "blob count must be in 1..={}, got {}",
                Self::MAX_BLOBS,
                self.blobs
            )));
        }
        if self.amplitude < 0.0 || !self.amplitude.is_finite() {
            return Err(Error::Validation(format!("amplitude must be >= 0, got {}", self.amplitude)));
        }
        if self.sigma_d <= 0.0 || !self.sigma_d.is_finite() {
            return Err(Error::Validation(format!("sigma_d must be > 0, got {}", self.sigma_d)));
        }
        // a blob needs its radius of margin on both sides of the in-plane axes
        let n = self.dims.ndim();
        for a in n - 2..n {
            if (self.dims[a] as f64) < 4.0 * hi + 1.0 {
                return Err(Error::Validation(format!(
                    "axis {a} of extent {} cannot hold a blob of radius {hi} with margin",
                    self.dims[a]
                )));
            }
        }
        Ok(())
    }
}

/// A placed blob: disk (2D) or ball (3D) centre, radius and intensity.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub center: Vec<f64>,
    pub radius: f64,
    pub intensity: f64,
}

/// Known bijection between moving and fixed ROI ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Pairing {
    pub moving_count: usize,
    pub fixed_count: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl Pairing {
    pub fn identity(n: usize) -> Self {
        Pairing {
            moving_count: n,
            fixed_count: n,
            pairs: (0..n).map(|k| (k, k)).collect(),
        }
    }

    pub fn contains(&self, moving: usize, fixed: usize) -> bool {
        self.pairs.contains(&(moving, fixed))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCase {
    pub moving: GridImage,
    pub fixed: GridImage,
    pub moving_masks: Vec<BinaryMask>,
    pub fixed_masks: Vec<BinaryMask>,
    pub blobs: Vec<Blob>,
    pub truth: DisplacementField,
    pub pairing: Pairing,
}

/// Separable Gaussian blur with zero padding, truncated at 3σ.
fn gaussian_smooth(values: &[f64], dims: &Dims, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let strides = dims.strides();
    let mut cur = values.to_vec();
    let mut coords = vec![0; dims.ndim()];
    for a in 0..dims.ndim() {
        let n = dims[a] as isize;
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            dims.coords_into(i, &mut coords);
            let c = coords[a] as isize;
            let lo = (c - radius).max(0);
            let hi = (c + radius).min(n - 1);
            let mut acc = 0.0;
            for t in lo..=hi {
                let j = (i as isize + (t - c) * strides[a] as isize) as usize;
                acc += kernel[(t - c + radius) as usize] * cur[j];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

/// White noise per displacement component, rescaled so the largest vector
/// norm equals `amplitude`.
pub fn noise_field(dims: &Dims, amplitude: f64, rng: &mut impl Rng) -> DisplacementField {
    let n = dims.ndim();
    let raw: Vec<f64> = (0..dims.len() * n).map(|_| StandardNormal.sample(rng)).collect();
    scaled_field(dims, raw, amplitude, "noise")
}

/// Gaussian-smoothed white noise rescaled to a largest norm of `amplitude`.
/// Only in-plane components are drawn, so a volume keeps its slice layout.
pub fn smooth_field(dims: &Dims, amplitude: f64, sigma: f64, rng: &mut impl Rng) -> DisplacementField {
    let n = dims.ndim();
    let mut vectors = vec![0.0; dims.len() * n];
    for c in n.saturating_sub(2)..n {
        let noise: Vec<f64> = (0..dims.len()).map(|_| StandardNormal.sample(rng)).collect();
        for (i, v) in gaussian_smooth(&noise, dims, sigma).into_iter().enumerate() {
            vectors[i * n + c] = v;
        }
    }
    scaled_field(dims, vectors, amplitude, "synthetic")
}

fn scaled_field(dims: &Dims, mut vectors: Vec<f64>, amplitude: f64, provenance: &str) -> DisplacementField {
    let n = dims.ndim();
    let max = vectors
        .chunks(n)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { amplitude / max } else { 0.0 };
    for v in &mut vectors {
        *v *= scale;
    }
    DisplacementField::from_raw(dims.clone(), vectors, provenance)
}

/// Evenly spaced intensities in [`LOWEST_INTENSITY`, 1], shuffled.
fn intensities(count: usize, rng: &mut impl Rng) -> Vec<f64> {
    let step = if count > 1 {
        (1.0 - LOWEST_INTENSITY) / (count - 1) as f64
    } else {
        0.0
    };
    debug_assert!(count <= 1 || step >= MIN_INTENSITY_STEP - 1e-12);
    let mut levels: Vec<f64> = (0..count).map(|k| 1.0 - step * k as f64).collect();
    levels.shuffle(rng);
    levels
}

/// Place non-overlapping blobs on the in-plane axes of `dims`; a volume's
/// blobs are centred on the middle slice and extend through all slices.
fn place_blobs(spec: &SynthSpec, rng: &mut impl Rng) -> Result<Vec<Blob>> {
    let dims = &spec.dims;
    let n = dims.ndim();
    let levels = intensities(spec.blobs, rng);
    let mut blobs: Vec<Blob> = Vec::with_capacity(spec.blobs);
    for (b, &intensity) in levels.iter().enumerate() {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let radius = if spec.radius.1 > spec.radius.0 {
                rng.random_range(spec.radius.0..=spec.radius.1)
            } else {
                spec.radius.0
            };
            let mut center = vec![0.0; n];
            if n == 3 {
                center[0] = (dims[0] as f64 - 1.0) / 2.0;
            }
            for a in n - 2..n {
                let lo = 2.0 * radius;
                let hi = dims[a] as f64 - 1.0 - 2.0 * radius;
                center[a] = rng.random_range(lo..=hi);
            }
            let clear = blobs.iter().all(|o| {
                let d2: f64 = (n - 2..n).map(|a| (o.center[a] - center[a]).powi(2)).sum();
                d2.sqrt() > o.radius + radius + BLOB_GAP
            });
            if clear {
                blobs.push(Blob {
                    center,
                    radius,
                    intensity,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                blob: b,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(blobs)
}

fn blob_mask(dims: &Dims, blob: &Blob) -> BinaryMask {
    let n = dims.ndim();
    BinaryMask::from_fn(dims.clone(), |c| {
        let d2: f64 = (n - 2..n)
            .map(|a| (c[a] as f64 - blob.center[a]).powi(2))
            .sum();
        d2 <= blob.radius * blob.radius
    })
}

/// Image with the given masks painted at their intensities on a zero background.
pub fn render(dims: &Dims, masks: &[BinaryMask], intensity: &[f64]) -> GridImage {
    let mut data = vec![0.0; dims.len()];
    for (m, &v) in masks.iter().zip(intensity) {
        for (d, &inside) in data.iter_mut().zip(m.data()) {
            if inside {
                *d = v;
            }
        }
    }
    GridImage::new(dims.clone(), data).expect("length matches dims")
}

fn warp_masks(masks: &[BinaryMask], field: &DisplacementField) -> Result<Vec<BinaryMask>> {
    masks
        .iter()
        .map(|m| Ok(m.to_soft().warp(field)?.binarize(0.5)))
        .collect()
}

/// Generate a case whose fixed image is the moving image pulled back through
/// a random smooth field. Deterministic for a given spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthCase> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs = place_blobs(spec, &mut rng)?;
    let dims = &spec.dims;
    let moving_masks: Vec<BinaryMask> = blobs.iter().map(|b| blob_mask(dims, b)).collect();
    let levels: Vec<f64> = blobs.iter().map(|b| b.intensity).collect();
    let moving = render(dims, &moving_masks, &levels);
    let truth = smooth_field(dims, spec.amplitude, spec.sigma_d, &mut rng);
    let fixed = moving.warp(&truth)?;
    let fixed_masks = warp_masks(&moving_masks, &truth)?;
    Ok(SynthCase {
        moving,
        fixed,
        pairing: Pairing::identity(blobs.len()),
        moving_masks,
        fixed_masks,
        blobs,
        truth,
    })
}

/// Fraction of predicted (moving, fixed) id pairs present in `truth`.
/// An empty prediction scores 0.
pub fn score_pairing(predicted: &[(usize, usize)], truth: &Pairing) -> Result<f64> {
    for &(m, f) in predicted {
        if m >= truth.moving_count {
            return Err(Error::Id(m));
        }
        if f >= truth.fixed_count {
            return Err(Error::Id(f));
        }
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let hits = predicted.iter().filter(|&&(m, f)| truth.contains(m, f)).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Ground-truth ROI that covers most of each candidate: the truth mask with
/// the largest intersection, if it holds at least half the candidate.
pub fn label_candidates(candidates: &[BinaryMask], truth: &[BinaryMask]) -> Vec<Option<usize>> {
    candidates
        .iter()
        .map(|c| {
            let (best, overlap) = truth
                .iter()
                .enumerate()
                .map(|(k, t)| (k, c.intersection(t)))
                .fold((None, 0), |acc, (k, o)| if o > acc.1 { (Some(k), o) } else { acc });
            best.filter(|_| 2 * overlap >= c.area())
        })
        .collect()
}

/// Score a predicted pair set whose ids index candidate lists, by mapping
/// candidates to their ground-truth labels. Unlabeled candidates count as wrong.
pub fn score_candidates(
    predicted: &RoiPairSet,
    moving_labels: &[Option<usize>],
    fixed_labels: &[Option<usize>],
    truth: &Pairing,
) -> Result<f64> {
    let mut hits = 0;
    for (m, f) in predicted.ids() {
        let lm = *moving_labels.get(m).ok_or(Error::Id(m))?;
        let lf = *fixed_labels.get(f).ok_or(Error::Id(f))?;
        if let (Some(a), Some(b)) = (lm, lf) {
            if truth.contains(a, b) {
                hits += 1;
            }
        }
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    Ok(hits as f64 / predicted.len() as f64)
}

/// A volume whose fixed copy is the moving volume shifted by whole slices.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumeCase {
    pub moving: GridImage,
    pub fixed: GridImage,
    /// Truth masks per moving slice.
    pub moving_masks: Vec<Vec<BinaryMask>>,
    /// Truth masks per fixed slice; slice `s + shift` holds the masks of moving slice `s`.
    pub fixed_masks: Vec<Vec<BinaryMask>>,
    pub slice_shift: usize,
}

/// Volume of `depth` slices, each with its own blob layout drawn from
/// `slice_spec` (a 2D spec; its seed is offset per slice). Content of moving
/// slice `s` appears on fixed slice `s + shift`; the last `shift` moving
/// slices and the first `shift` fixed slices are empty.
pub fn generate_shifted_volume(slice_spec: &SynthSpec, depth: usize, shift: usize) -> Result<VolumeCase> {
    if slice_spec.dims.ndim() != 2 {
        return Err(Error::dim("slice spec must be 2D"));
    }
    if depth == 0 || shift >= depth {
        return Err(Error::Validation(format!(
            "slice shift {shift} must be smaller than depth {depth}"
        )));
    }
    let plane = slice_spec.dims.clone();
    let blank = GridImage::filled(plane.clone(), 0.0);
    let mut moving = vec![blank.clone(); depth];
    let mut fixed = vec![blank; depth];
    let mut moving_masks = vec![Vec::new(); depth];
    let mut fixed_masks = vec![Vec::new(); depth];
    for s in 0..depth - shift {
        let spec = SynthSpec {
            amplitude: 0.0,
            seed: slice_spec.seed.wrapping_add(s as u64 * 0x9e37_79b9),
            ..slice_spec.clone()
        };
        let case = generate(&spec)?;
        moving[s] = case.moving.clone();
        fixed[s + shift] = case.moving;
        moving_masks[s] = case.moving_masks.clone();
        fixed_masks[s + shift] = case.moving_masks;
    }
    Ok(VolumeCase {
        moving: GridImage::stack(&moving, 1.0)?,
        fixed: GridImage::stack(&fixed, 1.0)?,
        moving_masks,
        fixed_masks,
        slice_shift: shift,
    })
}

/// Fraction of volume pairs that join the same blob across exactly the true slice shift.
pub fn score_volume_pairs(predicted: &VolumePairSet, case: &VolumeCase) -> Result<f64> {
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0;
    for vp in &predicted.pairs {
        if vp.fixed_slice != vp.moving_slice + case.slice_shift {
            continue;
        }
        let truth_m = case.moving_masks.get(vp.moving_slice).ok_or(Error::Id(vp.moving_slice))?;
        let truth_f = case.fixed_masks.get(vp.fixed_slice).ok_or(Error::Id(vp.fixed_slice))?;
        let lm = label_candidates(std::slice::from_ref(&vp.pair.moving), truth_m)[0];
        let lf = label_candidates(std::slice::from_ref(&vp.pair.fixed), truth_f)[0];
        if lm.is_some() && lm == lf {
            hits += 1;
        }
    }
    Ok(hits as f64 / predicted.len() as f64)
}

/// One fixed blob and two moving sub-blobs that together cover it, plus a
/// distinct companion blob present in both images.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCase {
    pub moving: GridImage,
    pub fixed: GridImage,
    /// Two halves of the split blob, then the companion.
    pub moving_masks: Vec<BinaryMask>,
    /// The whole blob, then the companion.
    pub fixed_masks: Vec<BinaryMask>,
}

/// Split-blob case on a `size`×`size` grid: a bar of intensity 0.8 is cut
/// into two halves by a one-column gap in the moving image.
pub fn generate_split(size: usize) -> Result<SplitCase> {
    if size < 64 {
        return Err(Error::Validation(format!("split case needs size >= 64, got {size}")));
    }
    let dims = Dims::new(&[size, size])?;
    let (r0, r1) = (size / 4, size / 4 + 14);
    let (c0, c1) = (size / 4, size / 4 + 40);
    let mid = (c0 + c1) / 2;
    let whole = BinaryMask::from_fn(dims.clone(), |c| (r0..r1).contains(&c[0]) && (c0..c1).contains(&c[1]));
    let left = BinaryMask::from_fn(dims.clone(), |c| (r0..r1).contains(&c[0]) && (c0..mid).contains(&c[1]));
    let right = BinaryMask::from_fn(dims.clone(), |c| {
        (r0..r1).contains(&c[0]) && (mid + 1..c1).contains(&c[1])
    });
    let centre = (3 * size / 4) as f64;
    let companion = blob_mask(
        &dims,
        &Blob {
            center: vec![centre - 4.0, centre - 4.0],
            radius: 10.0,
            intensity: 0.3,
        },
    );
    Ok(SplitCase {
        moving: render(&dims, &[left.clone(), right.clone(), companion.clone()], &[0.8, 0.8, 0.3]),
        fixed: render(&dims, &[whole.clone(), companion.clone()], &[0.8, 0.3]),
        moving_masks: vec![left, right, companion.clone()],
        fixed_masks: vec![whole, companion],
    })
}

/// Small square ROIs sampled from a known field: moving squares of side
/// `side` at random positions, each paired with a fixed copy translated by
/// the truth displacement at its center rounded to whole voxels, so that
/// `moving(x + r) == fixed(x)` holds exactly for the pair's offset `r`.
pub fn sample_small_rois(
    truth: &DisplacementField,
    count: usize,
    side: usize,
    seed: u64,
) -> Result<Vec<(BinaryMask, BinaryMask)>> {
    let dims = truth.dims();
    let n = dims.ndim();
    let reach = truth.max_norm().ceil() as usize;
    let margin = reach + side + 1;
    for a in 0..n {
        if dims[a] <= 2 * margin {
            return Err(Error::Validation(format!("axis {a} too small for ROIs of side {side}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken: Vec<Vec<usize>> = Vec::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPTS * count {
            return Err(Error::Placement {
                blob: out.len(),
                attempts,
            });
        }
        let corner: Vec<usize> = (0..n).map(|a| rng.random_range(margin..dims[a] - margin - side)).collect();
        // keep ROIs apart so their warped copies never touch
        let spacing = side + 2 * reach + 2;
        if taken
            .iter()
            .any(|t| t.iter().zip(&corner).all(|(x, y)| x.abs_diff(*y) < spacing))
        {
            continue;
        }
        let center: Vec<f64> = corner.iter().map(|&c| c as f64 + (side as f64 - 1.0) / 2.0).collect();
        let offset: Vec<isize> = truth.sample(&center).iter().map(|d| d.round() as isize).collect();
        let square = |lo: &[usize]| {
            let lo = lo.to_vec();
            BinaryMask::from_fn(dims.clone(), move |c| c.iter().zip(&lo).all(|(x, l)| (*l..*l + side).contains(x)))
        };
        let moving = square(&corner);
        // margin exceeds the field reach, so the shifted corner stays on the grid
        let shifted: Vec<usize> = corner.iter().zip(&offset).map(|(&c, &o)| (c as isize - o) as usize).collect();
        let fixed = square(&shifted);
        taken.push(corner);
        out.push((moving, fixed));
    }
    Ok(out)
}
