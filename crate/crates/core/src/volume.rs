//! Slice-wise volume matching: each moving slice is matched against the
//! pooled candidates of fixed slices within a symmetric slice window.

use rayon::prelude::*;

use crate::embed::Prototype;
use crate::error::{Error, Result};
use crate::grid::GridImage;
use crate::matching::{select_pairs, similarity_matrix, RoiPair};
use crate::pipeline::{ImageCandidates, Pipeline};

#[derive(Clone, Debug)]
pub struct VolumeMatchConfig {
    /// Half-width of the fixed slice window searched per moving slice.
    pub slice_range: usize,
    pub pipeline: Pipeline,
}

impl Default for VolumeMatchConfig {
    fn default() -> Self {
        VolumeMatchConfig {
            slice_range: 11,
            pipeline: Pipeline::default(),
        }
    }
}

/// A pair together with the slices its masks come from. `pair.moving_id`
/// indexes the moving slice's candidates, `pair.fixed_id` the fixed slice's.
#[derive(Clone, Debug, PartialEq)]
pub struct VolumePair {
    pub moving_slice: usize,
    pub fixed_slice: usize,
    pub pair: RoiPair,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumePairSet {
    pub depth: usize,
    pub slice_range: usize,
    pub pairs: Vec<VolumePair>,
}

impl VolumePairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Inclusive fixed-slice window for moving slice `s`, clamped to the volume.
pub fn slice_window(s: usize, range: usize, depth: usize) -> std::ops::RangeInclusive<usize> {
    s.saturating_sub(range)..=(s + range).min(depth - 1)
}

fn check_volumes(moving: &GridImage, fixed: &GridImage) -> Result<usize> {
    if moving.dims().ndim() != 3 || fixed.dims().ndim() != 3 {
        return Err(Error::dim("register_volume expects 3D volumes"));
    }
    let depth = moving.dims()[0];
    if fixed.dims()[0] != depth {
        return Err(Error::dim(format!(
            "slice count mismatch: {} vs {}",
            depth,
            fixed.dims()[0]
        )));
    }
    Ok(depth)
}

fn per_slice(volume: &GridImage, pipeline: &Pipeline) -> Result<Vec<ImageCandidates>> {
    let depth = volume.dims()[0];
    (0..depth)
        .into_par_iter()
        .map(|s| pipeline.candidates(&volume.slice(s)?))
        .collect()
}

/// Match one moving slice against the fixed candidates in its window.
fn match_slice(
    s: usize,
    moving: &ImageCandidates,
    fixed: &[&ImageCandidates],
    window_start: usize,
    pipeline: &Pipeline,
) -> Result<Vec<VolumePair>> {
    let mut pooled: Vec<Prototype> = Vec::new();
    let mut origin: Vec<(usize, usize)> = Vec::new();
    for (offset, cands) in fixed.iter().enumerate() {
        for (k, p) in cands.prototypes.iter().enumerate() {
            pooled.push(p.clone());
            origin.push((window_start + offset, k));
        }
    }
    if moving.is_empty() || pooled.is_empty() {
        return Ok(Vec::new());
    }
    let sim = similarity_matrix(&moving.prototypes, &pooled)?;
    Ok(select_pairs(&sim, &pipeline.matching)
        .into_iter()
        .map(|sel| {
            let (fs, fk) = origin[sel.fixed];
            VolumePair {
                moving_slice: s,
                fixed_slice: fs,
                pair: RoiPair {
                    moving_id: sel.moving,
                    fixed_id: fk,
                    similarity: sel.similarity,
                    moving: moving.masks[sel.moving].clone(),
                    fixed: fixed[fs - window_start].masks[fk].clone(),
                },
            }
        })
        .collect())
}

fn canonical_order(pairs: &mut [VolumePair]) {
    pairs.sort_by(|a, b| {
        a.moving_slice
            .cmp(&b.moving_slice)
            .then(b.pair.similarity.total_cmp(&a.pair.similarity))
            .then(a.pair.moving_id.cmp(&b.pair.moving_id))
            .then(a.fixed_slice.cmp(&b.fixed_slice))
            .then(a.pair.fixed_id.cmp(&b.pair.fixed_id))
    });
}

/// Match precomputed per-slice candidates of two volumes.
pub fn match_volume_candidates(
    moving: &[ImageCandidates],
    fixed: &[ImageCandidates],
    slice_range: usize,
    pipeline: &Pipeline,
) -> Result<VolumePairSet> {
    if moving.len() != fixed.len() {
        return Err(Error::dim(format!(
            "slice count mismatch: {} vs {}",
            moving.len(),
            fixed.len()
        )));
    }
    pipeline.matching.validate()?;
    let depth = moving.len();
    if depth == 0 {
        return Err(Error::EmptyInput("volume has no slices".into()));
    }
    let per_slice: Vec<Vec<VolumePair>> = (0..depth)
        .into_par_iter()
        .map(|s| {
            let window = slice_window(s, slice_range, depth);
            let start = *window.start();
            let pool: Vec<&ImageCandidates> = window.map(|t| &fixed[t]).collect();
            match_slice(s, &moving[s], &pool, start, pipeline)
        })
        .collect::<Result<_>>()?;
    let mut pairs: Vec<VolumePair> = per_slice.into_iter().flatten().collect();
    canonical_order(&mut pairs);
    Ok(VolumePairSet {
        depth,
        slice_range,
        pairs,
    })
}

/// Slice-wise registration of two volumes with equal slice counts.
///
/// Fixed-slice candidates are computed once and shared by every moving slice.
pub fn register_volume(moving: &GridImage, fixed: &GridImage, cfg: &VolumeMatchConfig) -> Result<VolumePairSet> {
    check_volumes(moving, fixed)?;
    let fixed_cands = per_slice(fixed, &cfg.pipeline)?;
    let moving_cands = per_slice(moving, &cfg.pipeline)?;
    match_volume_candidates(&moving_cands, &fixed_cands, cfg.slice_range, &cfg.pipeline)
}

/// Reference path that re-derives the fixed candidates of the window for
/// every moving slice. Produces the same result as [`register_volume`].
pub fn register_volume_recompute(
    moving: &GridImage,
    fixed: &GridImage,
    cfg: &VolumeMatchConfig,
) -> Result<VolumePairSet> {
    let depth = check_volumes(moving, fixed)?;
    cfg.pipeline.matching.validate()?;
    let mut pairs = Vec::new();
    for s in 0..depth {
        let mc = cfg.pipeline.candidates(&moving.slice(s)?)?;
        let window = slice_window(s, cfg.slice_range, depth);
        let start = *window.start();
        let stacked: Vec<ImageCandidates> = window
            .map(|t| cfg.pipeline.candidates(&fixed.slice(t)?))
            .collect::<Result<_>>()?;
        let refs: Vec<&ImageCandidates> = stacked.iter().collect();
        pairs.extend(match_slice(s, &mc, &refs, start, &cfg.pipeline)?);
    }
    canonical_order(&mut pairs);
    Ok(VolumePairSet {
        depth,
        slice_range: cfg.slice_range,
        pairs,
    })
}
