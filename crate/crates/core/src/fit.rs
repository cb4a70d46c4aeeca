//! Conversion of ROI-pair correspondence into a dense displacement field.
//!
//! The field lives on the fixed grid and pulls the moving masks back:
//! `warped(x) = moving(x + d(x))`. The objective is
//!
//! ```text
//! L(d) = Σ_k [ ½·MSE(fixed_k, warped_k) + ½·(1 − dice(fixed_k, warped_k)) ] + λ·smooth(d)
//! ```
//!
//! where `smooth` is the mean squared forward difference of every displacement
//! component, and it is minimized by normalized gradient descent with
//! step halving, coarse to fine.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{
    centroid, dice, resample_soft, sample_with_gradient, tre, BinaryMask, Dims, DisplacementField,
    SoftMask, Warp, DICE_TAU,
};
use crate::matching::RoiPairSet;
use crate::volume::VolumePairSet;

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// Weight of the smoothness term.
    pub lambda: f64,
    /// Maximum descent steps per resolution level.
    pub iterations: usize,
    /// Largest per-component displacement change of one step, in voxels.
    pub step_size: f64,
    /// Stop when the loss improves by less than this fraction over `convergence_window` steps.
    pub convergence_tol: f64,
    pub convergence_window: usize,
    pub max_halvings: usize,
    /// Resolution levels, each halving the grid; 1 fits at full resolution only.
    pub levels: usize,
    /// Gaussian width, in voxels of each level, of the blurred masks fitted
    /// before the final exact stage; 0 fits the exact masks only.
    pub blur_sigma: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 0.1,
            iterations: 500,
            step_size: 0.5,
            convergence_tol: 1e-5,
            convergence_window: 10,
            max_halvings: 20,
            levels: 3,
            blur_sigma: 1.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be >= 1".into()));
        }
        if self.step_size <= 0.0 || !self.step_size.is_finite() {
            return Err(Error::Validation(format!(
                "step_size must be > 0, got {}",
                self.step_size
            )));
        }
        if self.blur_sigma < 0.0 || !self.blur_sigma.is_finite() {
            return Err(Error::Validation(format!(
                "blur_sigma must be >= 0, got {}",
                self.blur_sigma
            )));
        }
        if self.levels == 0 {
            return Err(Error::Validation("levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Moving and fixed masks of one correspondence, on the same grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FitPair {
    pub moving: SoftMask,
    pub fixed: SoftMask,
}

impl FitPair {
    pub fn new(moving: SoftMask, fixed: SoftMask) -> Result<Self> {
        if moving.dims() != fixed.dims() {
            return Err(Error::dim(format!(
                "pair dims differ: {:?} vs {:?}",
                moving.dims().as_slice(),
                fixed.dims().as_slice()
            )));
        }
        Ok(FitPair { moving, fixed })
    }

    pub fn from_binary(moving: &BinaryMask, fixed: &BinaryMask) -> Result<Self> {
        FitPair::new(moving.to_soft(), fixed.to_soft())
    }

    pub fn dims(&self) -> &Dims {
        self.fixed.dims()
    }
}

/// Lift a 2D pair set.
pub fn pairs_from_set(set: &RoiPairSet) -> Result<Vec<FitPair>> {
    set.pairs()
        .iter()
        .map(|p| FitPair::from_binary(&p.moving, &p.fixed))
        .collect()
}

/// Lift a volume pair set: each slice mask is placed on its own slice, so a
/// cross-slice pair asks for a through-plane displacement.
pub fn pairs_from_volume(set: &VolumePairSet) -> Result<Vec<FitPair>> {
    set.pairs
        .iter()
        .map(|vp| {
            let m = vp.pair.moving.lift_to_volume(set.depth, vp.moving_slice)?;
            let f = vp.pair.fixed.lift_to_volume(set.depth, vp.fixed_slice)?;
            FitPair::from_binary(&m, &f)
        })
        .collect()
}

fn check_pairs(pairs: &[FitPair], dims: &Dims) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no ROI pairs".into()));
    }
    for p in pairs {
        if p.moving.dims() != dims || p.fixed.dims() != dims {
            return Err(Error::dim(format!(
                "pair dims {:?} do not match field {:?}",
                p.dims().as_slice(),
                dims.as_slice()
            )));
        }
    }
    Ok(())
}

/// Per-pair constants reused across evaluations.
struct Prepared<'a> {
    moving: &'a [f64],
    fixed: &'a [f64],
    fixed_sum: f64,
    fixed_sq: f64,
    /// Dice with `Σa² + Σw²` in the denominator, which is 1 at `w = a` for
    /// soft masks too. Used for the blurred continuation stages only.
    squared_dice: bool,
    /// Half-open bounding box of the moving support, per axis, as floats.
    support: Option<(Vec<f64>, Vec<f64>)>,
}

fn prepare(pair: &FitPair, squared_dice: bool) -> Prepared<'_> {
    let dims = pair.dims();
    let n = dims.ndim();
    let mut lo = vec![usize::MAX; n];
    let mut hi = vec![0usize; n];
    let mut c = vec![0; n];
    let mut any = false;
    for (i, &v) in pair.moving.data().iter().enumerate() {
        if v != 0.0 {
            any = true;
            dims.coords_into(i, &mut c);
            for a in 0..n {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
    }
    let support = any.then(|| {
        (
            lo.iter().map(|&l| l as f64 - 1.0).collect(),
            hi.iter().map(|&h| h as f64 + 1.0).collect(),
        )
    });
    let fixed = pair.fixed.data();
    Prepared {
        moving: pair.moving.data(),
        fixed,
        fixed_sum: fixed.iter().sum(),
        fixed_sq: fixed.iter().map(|v| v * v).sum(),
        squared_dice,
        support,
    }
}

/// Largest absolute displacement along each axis.
fn reach(ddf: &DisplacementField) -> [f64; 3] {
    let n = ddf.ndim();
    let mut r = [0f64; 3];
    for v in ddf.vectors().chunks(n) {
        for a in 0..n {
            r[a] = r[a].max(v[a].abs());
        }
    }
    r
}

/// Warped value and its position gradient at voxels where either may be
/// nonzero, given as (voxel, value, gradient). Only fixed-grid voxels that
/// the field's `reach` can carry into the moving support are visited.
fn warped_support(
    p: &Prepared,
    ddf: &DisplacementField,
    reach: &[f64; 3],
    with_grad: bool,
) -> Vec<(usize, f64, [f64; 3])> {
    let Some((lo, hi)) = &p.support else {
        return Vec::new();
    };
    let dims = ddf.dims();
    let n = dims.ndim();
    let mut box_lo = [0usize; 3];
    let mut box_len = [1usize; 3];
    for a in 0..n {
        let first = (lo[a] - reach[a]).floor().max(0.0) as usize;
        let last = ((hi[a] + reach[a]).ceil() as usize).min(dims[a] - 1);
        if first > last {
            return Vec::new();
        }
        box_lo[a] = first;
        box_len[a] = last - first + 1;
    }
    let strides = dims.strides();
    let count: usize = box_len[..n].iter().product();
    let mut offset = [0usize; 3];
    let mut pos = [0f64; 3];
    let mut out = Vec::new();
    for _ in 0..count {
        let mut i = 0;
        for a in 0..n {
            i += (box_lo[a] + offset[a]) * strides[a];
        }
        let d = ddf.at(i);
        let mut inside = true;
        for a in 0..n {
            pos[a] = (box_lo[a] + offset[a]) as f64 + d[a];
            // every corner is outside the support: value and slope are zero
            if pos[a] < lo[a] || pos[a] >= hi[a] {
                inside = false;
            }
        }
        if inside {
            let mut g = [0f64; 3];
            let w = sample_with_gradient(p.moving, dims, &pos[..n], &mut g[..n]);
            if !with_grad {
                g = [0.0; 3];
            }
            if w != 0.0 || g.iter().any(|&x| x != 0.0) {
                out.push((i, w, g));
            }
        }
        // row-major odometer over the box
        for a in (0..n).rev() {
            offset[a] += 1;
            if offset[a] < box_len[a] {
                break;
            }
            offset[a] = 0;
        }
    }
    out
}

/// Pair loss and its sparse (voxel, gradient vector) entries.
type PairTerm = (f64, Vec<(usize, [f64; 3])>);

/// Loss of one pair plus, optionally, its gradient as sparse (voxel, vector) entries.
fn pair_term(
    p: &Prepared,
    ddf: &DisplacementField,
    reach: &[f64; 3],
    with_grad: bool,
) -> PairTerm {
    let total = ddf.dims().len() as f64;
    let support = warped_support(p, ddf, reach, with_grad);
    let (mut inter, mut warped_sum, mut warped_sq) = (0.0, 0.0, 0.0);
    for &(i, w, _) in &support {
        inter += p.fixed[i] * w;
        warped_sum += w;
        warped_sq += w * w;
    }
    let mse = (p.fixed_sq + warped_sq - 2.0 * inter) / total;
    let denom = if p.squared_dice {
        p.fixed_sq + warped_sq + DICE_TAU
    } else {
        p.fixed_sum + warped_sum + DICE_TAU
    };
    let dice = 2.0 * inter / denom;
    let loss = 0.5 * mse + 0.5 * (1.0 - dice);
    if !with_grad {
        return (loss, Vec::new());
    }
    let n = ddf.ndim();
    let grads = support
        .into_iter()
        .filter_map(|(i, w, g)| {
            let a = p.fixed[i];
            let ddenom_dw = if p.squared_dice { 2.0 * w } else { 1.0 };
            let dl_dw = (w - a) / total - a / denom + inter * ddenom_dw / (denom * denom);
            if dl_dw == 0.0 {
                return None;
            }
            let mut v = [0f64; 3];
            for c in 0..n {
                v[c] = dl_dw * g[c];
            }
            Some((i, v))
        })
        .collect();
    (loss, grads)
}

/// Number of forward differences along each axis, summed over axes.
fn difference_count(dims: &Dims) -> usize {
    (0..dims.ndim())
        .map(|a| dims.len() / dims[a] * (dims[a] - 1))
        .sum()
}

/// Mean over voxels and axes of squared forward differences, summed over
/// displacement components. The last voxel along an axis has no difference.
pub fn smoothness_loss(ddf: &DisplacementField) -> f64 {
    smoothness(ddf, None)
}

fn smoothness(ddf: &DisplacementField, mut grad: Option<&mut [f64]>) -> f64 {
    let dims = ddf.dims();
    let count = difference_count(dims);
    if count == 0 {
        return 0.0;
    }
    let n = dims.ndim();
    let strides = dims.strides();
    let v = ddf.vectors();
    let scale = 1.0 / count as f64;
    let mut sum = 0.0;
    let mut coords = vec![0; n];
    for i in 0..dims.len() {
        dims.coords_into(i, &mut coords);
        for a in 0..n {
            if coords[a] + 1 >= dims[a] {
                continue;
            }
            let j = i + strides[a];
            for c in 0..n {
                let diff = v[j * n + c] - v[i * n + c];
                sum += diff * diff;
                if let Some(g) = grad.as_deref_mut() {
                    g[j * n + c] += 2.0 * scale * diff;
                    g[i * n + c] -= 2.0 * scale * diff;
                }
            }
        }
    }
    sum * scale
}

/// Sum over pairs of the equal-weight MSE and Dice alignment loss between
/// each fixed mask and the warped moving mask.
pub fn roi_loss(pairs: &[FitPair], ddf: &DisplacementField) -> Result<f64> {
    check_pairs(pairs, ddf.dims())?;
    if !ddf.is_finite() {
        return Err(Error::Validation("displacement field has non-finite values".into()));
    }
    let prepared: Vec<Prepared> = pairs.iter().map(|p| prepare(p, false)).collect();
    let r = reach(ddf);
    Ok(prepared.iter().map(|p| pair_term(p, ddf, &r, false).0).sum())
}

/// Loss terms at one field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub roi: f64,
    pub smoothness: f64,
    pub lambda: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.roi + self.lambda * self.smoothness
    }
}

struct Objective<'a> {
    prepared: Vec<Prepared<'a>>,
    lambda: f64,
}

impl<'a> Objective<'a> {
    fn new(pairs: &'a [FitPair], lambda: f64) -> Self {
        Objective {
            prepared: pairs.iter().map(|p| prepare(p, false)).collect(),
            lambda,
        }
    }

    fn continuation(pairs: &'a [FitPair], lambda: f64) -> Self {
        Objective {
            prepared: pairs.iter().map(|p| prepare(p, true)).collect(),
            lambda,
        }
    }

    fn terms(&self, ddf: &DisplacementField) -> LossTerms {
        let r = reach(ddf);
        let roi: f64 = self
            .prepared
            .par_iter()
            .map(|p| pair_term(p, ddf, &r, false).0)
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        LossTerms {
            roi,
            smoothness: smoothness(ddf, None),
            lambda: self.lambda,
        }
    }

    fn terms_and_gradient(&self, ddf: &DisplacementField, grad: &mut [f64]) -> LossTerms {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let r = reach(ddf);
        let per_pair: Vec<PairTerm> = self
            .prepared
            .par_iter()
            .map(|p| pair_term(p, ddf, &r, true))
            .collect();
        let n = ddf.ndim();
        let mut roi = 0.0;
        for (loss, entries) in per_pair {
            roi += loss;
            for (i, v) in entries {
                for c in 0..n {
                    grad[i * n + c] += v[c];
                }
            }
        }
        let mut smooth_grad = vec![0.0; grad.len()];
        let smoothness = smoothness(ddf, Some(&mut smooth_grad));
        for (g, s) in grad.iter_mut().zip(smooth_grad) {
            *g += self.lambda * s;
        }
        LossTerms {
            roi,
            smoothness,
            lambda: self.lambda,
        }
    }
}

/// Total objective and its analytic gradient with respect to every
/// displacement component (same layout as the field vectors).
pub fn objective_gradient(pairs: &[FitPair], ddf: &DisplacementField, lambda: f64) -> Result<(LossTerms, Vec<f64>)> {
    check_pairs(pairs, ddf.dims())?;
    let obj = Objective::new(pairs, lambda);
    let mut grad = vec![0.0; ddf.vectors().len()];
    let terms = obj.terms_and_gradient(ddf, &mut grad);
    Ok((terms, grad))
}

/// Objective terms without the gradient.
pub fn objective_terms(pairs: &[FitPair], ddf: &DisplacementField, lambda: f64) -> Result<LossTerms> {
    check_pairs(pairs, ddf.dims())?;
    Ok(Objective::new(pairs, lambda).terms(ddf))
}

/// Post-fit alignment of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairMetrics {
    pub dice: f64,
    /// NaN when the warped moving mask has no mass left on the grid.
    pub tre: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub roi_loss: f64,
    pub smoothness_loss: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Loss after every accepted step of the last level, starting with its initial value.
    pub history: Vec<f64>,
    pub initial_metrics: Vec<PairMetrics>,
    pub metrics: Vec<PairMetrics>,
}

/// Dice and TRE between each fixed mask and the warped moving mask.
pub fn evaluate_pairs(pairs: &[FitPair], ddf: &DisplacementField, spacing: &[f64]) -> Result<Vec<PairMetrics>> {
    check_pairs(pairs, ddf.dims())?;
    pairs
        .iter()
        .map(|p| {
            let warped = p.moving.warp(ddf)?;
            let d = dice(&p.fixed, &warped)?;
            let t = match tre(&warped, &p.fixed, spacing) {
                Ok(t) => t,
                Err(Error::EmptyRoi(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            Ok(PairMetrics { dice: d, tre: t })
        })
        .collect()
}

struct LevelOutcome {
    field: DisplacementField,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

/// Normalized gradient descent with step halving; every accepted step
/// strictly lowers the loss.
fn descend(obj: &Objective, mut field: DisplacementField, cfg: &FitConfig) -> Result<LevelOutcome> {
    let mut grad = vec![0.0; field.vectors().len()];
    let mut loss = obj.terms_and_gradient(&field, &mut grad).total();
    if !loss.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            last_loss: f64::NAN,
            last_field: Box::new(field),
        });
    }
    let mut history = vec![loss];
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = field.clone();
    while iterations < cfg.iterations {
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut step = cfg.step_size;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let scale = step / gmax;
            for ((t, f), g) in trial.vectors_mut().iter_mut().zip(field.vectors()).zip(&grad) {
                *t = f - scale * g;
            }
            let candidate = obj.terms(&trial).total();
            if !candidate.is_finite() {
                return Err(Error::Divergence {
                    iteration: iterations,
                    last_loss: loss,
                    last_field: Box::new(field),
                });
            }
            if candidate < loss {
                accepted = Some(candidate);
                break;
            }
            step *= 0.5;
        }
        let Some(new_loss) = accepted else {
            converged = true;
            break;
        };
        std::mem::swap(&mut field, &mut trial);
        loss = obj.terms_and_gradient(&field, &mut grad).total();
        debug_assert!((loss - new_loss).abs() <= 1e-9 * new_loss.abs().max(1.0));
        history.push(loss);
        let w = cfg.convergence_window;
        if w > 0 && history.len() > w {
            let past = history[history.len() - 1 - w];
            if (past - loss) <= cfg.convergence_tol * past.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(LevelOutcome {
        field,
        iterations,
        converged,
        history,
    })
}

/// Grid extents of each level, coarsest first, ending with `dims`. An axis is
/// only reduced while it keeps at least 8 voxels.
fn pyramid(dims: &Dims, levels: usize) -> Vec<Dims> {
    let mut out: Vec<Dims> = Vec::new();
    for l in (0..levels).rev() {
        let f = 1usize << l;
        let extent: Vec<usize> = dims
            .as_slice()
            .iter()
            .map(|&n| if n / f >= 8 { n / f } else { n })
            .collect();
        let d = Dims::new(&extent).expect("extent is nonzero");
        if out.last() != Some(&d) {
            out.push(d);
        }
    }
    out
}

/// Resample a field onto a finer grid, rescaling displacements to the new voxel size.
fn upsample_field(field: &DisplacementField, target: &Dims) -> DisplacementField {
    let src = field.dims();
    let n = src.ndim();
    let ratio: Vec<f64> = (0..n).map(|a| src[a] as f64 / target[a] as f64).collect();
    let mut out = Vec::with_capacity(target.len() * n);
    let mut coords = vec![0; n];
    let mut pos = vec![0.0; n];
    for i in 0..target.len() {
        target.coords_into(i, &mut coords);
        for a in 0..n {
            pos[a] = ((coords[a] as f64 + 0.5) * ratio[a] - 0.5).clamp(0.0, (src[a] - 1) as f64);
        }
        let d = field.sample(&pos);
        out.extend(d.iter().zip(&ratio).map(|(v, r)| v / r));
    }
    DisplacementField::from_raw(target.clone(), out, field.provenance())
}

/// Separable Gaussian blur with zero padding, truncated at 3σ.
fn blur(mask: &SoftMask, sigma: f64) -> SoftMask {
    let dims = mask.dims();
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let strides = dims.strides();
    let mut cur = mask.data().to_vec();
    let mut coords = vec![0; dims.ndim()];
    for a in 0..dims.ndim() {
        let n = dims[a] as isize;
        let mut next = vec![0.0; cur.len()];
        for (i, out) in next.iter_mut().enumerate() {
            dims.coords_into(i, &mut coords);
            let c = coords[a] as isize;
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let t = c + k as isize - radius;
                if (0..n).contains(&t) {
                    let j = (i as isize + (t - c) * strides[a] as isize) as usize;
                    acc += w * cur[j];
                }
            }
            *out = acc / norm;
        }
        cur = next;
    }
    for v in &mut cur {
        *v = v.clamp(0.0, 1.0);
    }
    SoftMask::from_raw(dims.clone(), cur)
}

/// Pairs resampled to `dims` and blurred by `sigma` (0 leaves them sharp).
fn stage_pairs(pairs: &[FitPair], dims: &Dims, sigma: f64) -> Result<Vec<FitPair>> {
    pairs
        .par_iter()
        .map(|p| {
            let (mut m, mut f) = (resample_soft(&p.moving, dims)?, resample_soft(&p.fixed, dims)?);
            if sigma > 0.0 {
                m = blur(&m, sigma);
                f = blur(&f, sigma);
            }
            FitPair::new(m, f)
        })
        .collect()
}

/// Fit a displacement field on `dims` that aligns every warped moving mask
/// with its fixed mask.
///
/// The returned field never has a higher loss than the zero field.
pub fn fit_ddf(pairs: &[FitPair], dims: &Dims, cfg: &FitConfig) -> Result<(DisplacementField, FitReport)> {
    cfg.validate()?;
    check_pairs(pairs, dims)?;
    let zero = DisplacementField::zeros(dims.clone(), "fitted");
    let full = Objective::new(pairs, cfg.lambda);
    let initial = full.terms(&zero).total();
    let initial_metrics = evaluate_pairs(pairs, &zero, &vec![1.0; dims.ndim()])?;

    let mut stages: Vec<(Dims, f64)> = Vec::new();
    if cfg.blur_sigma > 0.0 {
        stages.extend(pyramid(dims, cfg.levels).into_iter().map(|d| (d, cfg.blur_sigma)));
    } else {
        stages.extend(pyramid(dims, cfg.levels).into_iter().map(|d| (d, 0.0)));
        stages.pop();
    }
    stages.push((dims.clone(), 0.0));

    let mut field: Option<DisplacementField> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut history = Vec::new();
    for (stage_dims, sigma) in &stages {
        let start = match field.take() {
            Some(f) if f.dims() == stage_dims => f,
            Some(f) => upsample_field(&f, stage_dims),
            None => DisplacementField::zeros(stage_dims.clone(), "fitted"),
        };
        let outcome = if stage_dims == dims && *sigma == 0.0 {
            descend(&full, start, cfg)?
        } else {
            let staged = stage_pairs(pairs, stage_dims, *sigma)?;
            descend(&Objective::continuation(&staged, cfg.lambda), start, cfg)?
        };
        iterations += outcome.iterations;
        converged = outcome.converged;
        history = outcome.history;
        field = Some(outcome.field);
    }
    let mut field = field.expect("at least one level");
    let mut terms = full.terms(&field);
    if terms.total() > initial {
        field = zero;
        terms = full.terms(&field);
        history = vec![initial];
    }
    field.set_provenance("fitted");
    let metrics = evaluate_pairs(pairs, &field, &vec![1.0; dims.ndim()])?;
    let report = FitReport {
        initial_loss: initial,
        final_loss: terms.total(),
        roi_loss: terms.roi,
        smoothness_loss: terms.smoothness,
        lambda: cfg.lambda,
        iterations,
        converged,
        history,
        initial_metrics,
        metrics,
    };
    Ok((field, report))
}

/// Centroid displacement implied by a pair: fixed centroid minus warped-moving centroid.
pub fn residual_offset(pair: &FitPair, ddf: &DisplacementField) -> Result<Vec<f64>> {
    let warped = pair.moving.warp(ddf)?;
    let a = centroid(&pair.fixed)?;
    let b = centroid(&warped)?;
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}
