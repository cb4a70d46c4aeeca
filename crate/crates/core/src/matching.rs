//! Prototype similarity, thresholded pair selection and the resulting set of
//! corresponding ROI masks.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::embed::Prototype;
use crate::error::{Error, Result};
use crate::grid::BinaryMask;

/// Absolute cosine similarities between moving (rows) and fixed (cols) prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::dim(format!(
                "similarity matrix {rows}x{cols} with {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("similarity {v} outside [0, 1]")));
        }
        Ok(SimilarityMatrix { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// How indices may be reused during selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum MatchMode {
    #[default]
    OneToOne,
    OneToMany,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::OneToOne => "one-to-one",
            MatchMode::OneToMany => "one-to-many",
        })
    }
}

impl FromStr for MatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one-to-one" => Ok(MatchMode::OneToOne),
            "one-to-many" => Ok(MatchMode::OneToMany),
            other => Err(Error::Validation(format!("unknown match mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchConfig {
    /// Pairs need similarity strictly above this.
    pub epsilon: f64,
    /// Keep at most this many pairs, highest similarity first.
    pub quantity_limit: Option<usize>,
    pub mode: MatchMode,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            epsilon: 0.8,
            quantity_limit: None,
            mode: MatchMode::OneToOne,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Validation(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.quantity_limit == Some(0) {
            return Err(Error::Validation("quantity_limit must be >= 1".into()));
        }
        Ok(())
    }
}

/// |cos| between every moving and fixed prototype.
pub fn similarity_matrix(moving: &[Prototype], fixed: &[Prototype]) -> Result<SimilarityMatrix> {
    let channels = moving.first().or(fixed.first()).map_or(0, Prototype::len);
    for p in moving.iter().chain(fixed) {
        if p.len() != channels {
            return Err(Error::dim(format!(
                "prototype has {} channels, expected {channels}",
                p.len()
            )));
        }
    }
    let norms = |ps: &[Prototype]| -> Result<Vec<f64>> {
        ps.iter()
            .enumerate()
            .map(|(i, p)| {
                let n = p.norm();
                if n > 0.0 && n.is_finite() {
                    Ok(n)
                } else {
                    Err(Error::DegeneratePrototype(i))
                }
            })
            .collect()
    };
    let nx = norms(moving)?;
    let ny = norms(fixed)?;
    let mut values = Vec::with_capacity(moving.len() * fixed.len());
    for (p, a) in moving.iter().zip(&nx) {
        for (q, b) in fixed.iter().zip(&ny) {
            let dot: f64 = p.values().iter().zip(q.values()).map(|(u, v)| u * v).sum();
            values.push((dot / (a * b)).abs().min(1.0));
        }
    }
    SimilarityMatrix::new(moving.len(), fixed.len(), values)
}

/// One selected (moving index, fixed index) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub moving: usize,
    pub fixed: usize,
    pub similarity: f64,
}

/// Descending similarity, then ascending (moving, fixed).
fn rank(a: &Selection, b: &Selection) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.moving.cmp(&b.moving))
        .then(a.fixed.cmp(&b.fixed))
}

/// Select corresponding index pairs with similarity above `cfg.epsilon`.
///
/// One-to-one mode repeatedly takes the largest remaining entry and removes
/// its row and column. One-to-many mode takes each row's best column.
pub fn select_pairs(sim: &SimilarityMatrix, cfg: &MatchConfig) -> Vec<Selection> {
    let mut out = match cfg.mode {
        MatchMode::OneToOne => {
            let mut cands: Vec<Selection> = (0..sim.rows)
                .flat_map(|i| (0..sim.cols).map(move |j| (i, j)))
                .filter_map(|(i, j)| {
                    let s = sim.get(i, j);
                    (s > cfg.epsilon).then_some(Selection {
                        moving: i,
                        fixed: j,
                        similarity: s,
                    })
                })
                .collect();
            cands.sort_by(rank);
            let mut row_used = vec![false; sim.rows];
            let mut col_used = vec![false; sim.cols];
            let mut taken = Vec::new();
            for c in cands {
                if !row_used[c.moving] && !col_used[c.fixed] {
                    row_used[c.moving] = true;
                    col_used[c.fixed] = true;
                    taken.push(c);
                }
            }
            taken
        }
        MatchMode::OneToMany => (0..sim.rows)
            .filter_map(|i| {
                let mut best: Option<Selection> = None;
                for j in 0..sim.cols {
                    let s = sim.get(i, j);
                    if best.is_none_or(|b| s > b.similarity) {
                        best = Some(Selection {
                            moving: i,
                            fixed: j,
                            similarity: s,
                        });
                    }
                }
                best.filter(|b| b.similarity > cfg.epsilon)
            })
            .collect(),
    };
    out.sort_by(rank);
    if let Some(k) = cfg.quantity_limit {
        out.truncate(k);
    }
    out
}

/// A matched (moving, fixed) ROI pair.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiPair {
    pub moving_id: usize,
    pub fixed_id: usize,
    pub similarity: f64,
    pub moving: BinaryMask,
    pub fixed: BinaryMask,
}

/// Ordered list of corresponding ROI masks plus the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiPairSet {
    pairs: Vec<RoiPair>,
    config: MatchConfig,
}

impl RoiPairSet {
    pub(crate) fn from_pairs(mut pairs: Vec<RoiPair>, config: MatchConfig) -> Self {
        pairs.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.moving_id.cmp(&b.moving_id))
                .then(a.fixed_id.cmp(&b.fixed_id))
        });
        RoiPairSet { pairs, config }
    }

    pub fn empty(config: MatchConfig) -> Self {
        RoiPairSet {
            pairs: Vec::new(),
            config,
        }
    }

    pub fn pairs(&self) -> &[RoiPair] {
        &self.pairs
    }

    pub fn into_pairs(self) -> Vec<RoiPair> {
        self.pairs
    }

    pub fn config(&self) -> &MatchConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// (moving id, fixed id) per pair, in set order.
    pub fn ids(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().map(|p| (p.moving_id, p.fixed_id)).collect()
    }
}

/// Materialize a selection into mask pairs.
pub fn build_pair_set(
    selection: &[Selection],
    moving_masks: &[BinaryMask],
    fixed_masks: &[BinaryMask],
    cfg: &MatchConfig,
) -> Result<RoiPairSet> {
    let mut seen_moving = vec![false; moving_masks.len()];
    let mut seen_fixed = vec![false; fixed_masks.len()];
    let mut pairs = Vec::with_capacity(selection.len());
    for s in selection {
        let moving = moving_masks.get(s.moving).ok_or(Error::Index {
            index: s.moving,
            len: moving_masks.len(),
        })?;
        let fixed = fixed_masks.get(s.fixed).ok_or(Error::Index {
            index: s.fixed,
            len: fixed_masks.len(),
        })?;
        if !(s.similarity > cfg.epsilon && s.similarity <= 1.0) {
            return Err(Error::Validation(format!(
                "similarity {} not in (epsilon={}, 1]",
                s.similarity, cfg.epsilon
            )));
        }
        if cfg.mode == MatchMode::OneToOne {
            if seen_moving[s.moving] || seen_fixed[s.fixed] {
                return Err(Error::Validation(format!(
                    "index reused in one-to-one selection: ({}, {})",
                    s.moving, s.fixed
                )));
            }
            seen_moving[s.moving] = true;
            seen_fixed[s.fixed] = true;
        }
        pairs.push(RoiPair {
            moving_id: s.moving,
            fixed_id: s.fixed,
            similarity: s.similarity,
            moving: moving.clone(),
            fixed: fixed.clone(),
        });
    }
    Ok(RoiPairSet::from_pairs(pairs, cfg.clone()))
}

/// Similarity, selection and materialization in one call.
pub fn match_rois(
    moving_protos: &[Prototype],
    fixed_protos: &[Prototype],
    moving_masks: &[BinaryMask],
    fixed_masks: &[BinaryMask],
    cfg: &MatchConfig,
) -> Result<RoiPairSet> {
    cfg.validate()?;
    let sim = similarity_matrix(moving_protos, fixed_protos)?;
    let sel = select_pairs(&sim, cfg);
    build_pair_set(&sel, moving_masks, fixed_masks, cfg)
}
