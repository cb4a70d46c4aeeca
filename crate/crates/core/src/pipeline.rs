//! Segment, embed and match two 2D images.

use std::sync::Arc;

use crate::embed::{compute_prototype, BuiltinFeatures, FeatureExtractor, Prototype};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridImage};
use crate::matching::{match_rois, MatchConfig, RoiPairSet};
use crate::segment::{filter_rois, QuantileSegmenter, RoiFilterConfig, Segmenter};

/// Candidate ROIs of one image with their prototypes. Index `k` of `masks`
/// and `prototypes` refer to the same ROI.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageCandidates {
    pub masks: Vec<BinaryMask>,
    pub prototypes: Vec<Prototype>,
}

impl ImageCandidates {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

#[derive(Clone)]
pub struct Pipeline {
    pub segmenter: Arc<dyn Segmenter>,
    pub features: Arc<dyn FeatureExtractor>,
    pub filter: RoiFilterConfig,
    pub matching: MatchConfig,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            segmenter: Arc::new(QuantileSegmenter::default()),
            features: Arc::new(BuiltinFeatures::default()),
            filter: RoiFilterConfig::default(),
            matching: MatchConfig::default(),
        }
    }
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("filter", &self.filter)
            .field("matching", &self.matching)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn with_matching(matching: MatchConfig) -> Self {
        Pipeline {
            matching,
            ..Default::default()
        }
    }

    /// Segment, filter and embed one 2D image.
    pub fn candidates(&self, image: &GridImage) -> Result<ImageCandidates> {
        self.filter.validate()?;
        let raw = self.segmenter.segment(image)?;
        let kept = filter_rois(&raw, &self.filter);
        self.embed_masks(image, kept)
    }

    /// Embed externally produced masks. Masks whose prototype is empty or has
    /// zero norm cannot be matched and are dropped.
    pub fn embed_masks(&self, image: &GridImage, masks: Vec<BinaryMask>) -> Result<ImageCandidates> {
        Ok(self.embed_masks_indexed(image, masks)?.0)
    }

    /// As [`Pipeline::embed_masks`], also returning the input index of every kept mask.
    pub fn embed_masks_indexed(
        &self,
        image: &GridImage,
        masks: Vec<BinaryMask>,
    ) -> Result<(ImageCandidates, Vec<usize>)> {
        if let Some(m) = masks.iter().find(|m| m.dims() != image.dims()) {
            return Err(Error::dim(format!(
                "mask dims {:?} do not match image {:?}",
                m.dims().as_slice(),
                image.dims().as_slice()
            )));
        }
        let fmap = self.features.extract(image)?;
        let mut out = ImageCandidates {
            masks: Vec::with_capacity(masks.len()),
            prototypes: Vec::with_capacity(masks.len()),
        };
        let mut kept = Vec::with_capacity(masks.len());
        for (k, m) in masks.into_iter().enumerate() {
            match compute_prototype(&m, &fmap) {
                Ok(p) if p.norm() > 0.0 => {
                    out.masks.push(m);
                    out.prototypes.push(p);
                    kept.push(k);
                }
                Ok(_) | Err(Error::EmptyRoi(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok((out, kept))
    }

    pub fn match_candidates(&self, moving: &ImageCandidates, fixed: &ImageCandidates) -> Result<RoiPairSet> {
        match_rois(
            &moving.prototypes,
            &fixed.prototypes,
            &moving.masks,
            &fixed.masks,
            &self.matching,
        )
    }

    /// Full 2D pipeline: pair ids index the candidate lists of each image.
    pub fn register(&self, moving: &GridImage, fixed: &GridImage) -> Result<(RoiPairSet, ImageCandidates, ImageCandidates)> {
        let mc = self.candidates(moving)?;
        let fc = self.candidates(fixed)?;
        let pairs = self.match_candidates(&mc, &fc)?;
        Ok((pairs, mc, fc))
    }
}
