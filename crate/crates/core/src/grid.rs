//! Grid types shared by every stage of the pipeline, plus resampling,
//! pull-back warping and the overlap/centroid metrics.
//!
//! Axes are ordered (slice, row, col) and storage is row-major, so the last
//! axis is the fastest-varying one. A 2D grid has axes (row, col).

use crate::error::{Error, Result};

/// Smoothing constant in the Dice denominator.
pub const DICE_TAU: f64 = 1e-7;

/// Extent per axis of a 2D or 3D grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dims(Vec<usize>);

impl Dims {
    pub fn new(extent: &[usize]) -> Result<Self> {
        if !(2..=3).contains(&extent.len()) {
            return Err(Error::dim(format!(
                "expected 2 or 3 axes, got {}",
                extent.len()
            )));
        }
        if extent.contains(&0) {
            return Err(Error::dim(format!("zero extent in {extent:?}")));
        }
        Ok(Dims(extent.to_vec()))
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for a in (0..self.0.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.0[a + 1];
        }
        strides
    }

    /// Coordinates of linear index `idx`, written into `out`.
    pub fn coords_into(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.0.len()).rev() {
            out[a] = idx % self.0[a];
            idx /= self.0[a];
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.0.len()];
        self.coords_into(idx, &mut c);
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.0)
            .fold(0, |acc, (&c, &n)| acc * n + c)
    }

    /// The in-plane (row, col) extent of a 3D grid.
    pub fn plane(&self) -> Result<Dims> {
        if self.ndim() != 3 {
            return Err(Error::dim("plane() requires a 3D grid"));
        }
        Dims::new(&self.0[1..])
    }

    fn ensure_same(&self, other: &Dims, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::dim(format!(
                "{what}: dims {:?} vs {:?}",
                self.0, other.0
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Dims {
    type Output = usize;
    fn index(&self, axis: usize) -> &usize {
        &self.0[axis]
    }
}

/// Scalar intensity grid with per-axis physical spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct GridImage {
    dims: Dims,
    spacing: Vec<f64>,
    data: Vec<f64>,
}

impl GridImage {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        let spacing = vec![1.0; dims.ndim()];
        Self::with_spacing(dims, spacing, data)
    }

    pub fn with_spacing(dims: Dims, spacing: Vec<f64>, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                dims.as_slice()
            )));
        }
        check_spacing(&dims, &spacing)?;
        Ok(GridImage {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        let data = vec![value; dims.len()];
        let spacing = vec![1.0; dims.ndim()];
        GridImage {
            dims,
            spacing,
            data,
        }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, coords: &[usize]) -> f64 {
        self.data[self.dims.index(coords)]
    }

    /// Number of slices of a 3D image.
    pub fn depth(&self) -> Result<usize> {
        if self.dims.ndim() != 3 {
            return Err(Error::dim("expected a 3D image"));
        }
        Ok(self.dims[0])
    }

    /// Extract slice `s` of a 3D image as a 2D image.
    pub fn slice(&self, s: usize) -> Result<GridImage> {
        let depth = self.depth()?;
        if s >= depth {
            return Err(Error::Index { index: s, len: depth });
        }
        let plane = self.dims.plane()?;
        let n = plane.len();
        Ok(GridImage {
            spacing: self.spacing[1..].to_vec(),
            data: self.data[s * n..(s + 1) * n].to_vec(),
            dims: plane,
        })
    }

    /// Stack equally sized 2D slices into a volume.
    pub fn stack(slices: &[GridImage], slice_spacing: f64) -> Result<GridImage> {
        let first = slices
            .first()
            .ok_or_else(|| Error::EmptyInput("no slices to stack".into()))?;
        if first.dims.ndim() != 2 {
            return Err(Error::dim("stack expects 2D slices"));
        }
        let mut data = Vec::with_capacity(first.dims.len() * slices.len());
        for s in slices {
            first.dims.ensure_same(&s.dims, "stack")?;
            data.extend_from_slice(&s.data);
        }
        let dims = Dims::new(&[slices.len(), first.dims[0], first.dims[1]])?;
        let mut spacing = vec![slice_spacing];
        spacing.extend_from_slice(&first.spacing);
        GridImage::with_spacing(dims, spacing, data)
    }
}

fn check_spacing(dims: &Dims, spacing: &[f64]) -> Result<()> {
    if spacing.len() != dims.ndim() {
        return Err(Error::dim(format!(
            "spacing has {} entries for {} axes",
            spacing.len(),
            dims.ndim()
        )));
    }
    if spacing.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
        return Err(Error::Validation(format!(
            "spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Anything that assigns a membership weight to each voxel of a grid.
pub trait Mask {
    fn dims(&self) -> &Dims;
    fn weight(&self, idx: usize) -> f64;

    fn mass(&self) -> f64 {
        (0..self.dims().len()).map(|i| self.weight(i)).sum()
    }
}

/// ROI as per-voxel membership flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                dims.as_slice()
            )));
        }
        Ok(BinaryMask { dims, data })
    }

    pub fn empty(dims: Dims) -> Self {
        let data = vec![false; dims.len()];
        BinaryMask { dims, data }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(&[usize]) -> bool) -> Self {
        let mut c = vec![0; dims.ndim()];
        let data = (0..dims.len())
            .map(|i| {
                dims.coords_into(i, &mut c);
                f(&c)
            })
            .collect();
        BinaryMask { dims, data }
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, coords: &[usize]) -> bool {
        self.data[self.dims.index(coords)]
    }

    pub fn set(&mut self, coords: &[usize], value: bool) {
        let i = self.dims.index(coords);
        self.data[i] = value;
    }

    /// Count of set voxels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn intersection(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn to_soft(&self) -> SoftMask {
        SoftMask {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&b| f64::from(u8::from(b))).collect(),
        }
    }

    /// Place a 2D mask at slice `slice` of an otherwise empty volume.
    pub fn lift_to_volume(&self, depth: usize, slice: usize) -> Result<BinaryMask> {
        if self.dims.ndim() != 2 {
            return Err(Error::dim("only 2D masks can be lifted"));
        }
        if slice >= depth {
            return Err(Error::Index {
                index: slice,
                len: depth,
            });
        }
        let dims = Dims::new(&[depth, self.dims[0], self.dims[1]])?;
        let n = self.dims.len();
        let mut data = vec![false; dims.len()];
        data[slice * n..(slice + 1) * n].copy_from_slice(&self.data);
        Ok(BinaryMask { dims, data })
    }
}

impl Mask for BinaryMask {
    fn dims(&self) -> &Dims {
        &self.dims
    }
    fn weight(&self, idx: usize) -> f64 {
        f64::from(u8::from(self.data[idx]))
    }
}

/// ROI as per-voxel membership weight in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SoftMask {
    dims: Dims,
    data: Vec<f64>,
}

impl SoftMask {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dim(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                dims.as_slice()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!(
                "soft mask value {v} outside [0, 1]"
            )));
        }
        Ok(SoftMask { dims, data })
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Threshold at `level` (inclusive).
    pub fn binarize(&self, level: f64) -> BinaryMask {
        BinaryMask {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| v >= level).collect(),
        }
    }

    pub(crate) fn from_raw(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        SoftMask { dims, data }
    }
}

impl Mask for SoftMask {
    fn dims(&self) -> &Dims {
        &self.dims
    }
    fn weight(&self, idx: usize) -> f64 {
        self.data[idx]
    }
    fn mass(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Dense displacement field on a grid, in voxel units, one component per axis.
///
/// Vectors are stored voxel-major with the component index fastest, the same
/// layout as a multi-channel grid file.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    vectors: Vec<f64>,
    provenance: String,
}

impl DisplacementField {
    pub fn new(dims: Dims, vectors: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if vectors.len() != dims.len() * dims.ndim() {
            return Err(Error::dim(format!(
                "field has {} components, expected {}",
                vectors.len(),
                dims.len() * dims.ndim()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("displacement field has non-finite values".into()));
        }
        Ok(DisplacementField {
            dims,
            vectors,
            provenance: provenance.into(),
        })
    }

    pub fn zeros(dims: Dims, provenance: impl Into<String>) -> Self {
        let vectors = vec![0.0; dims.len() * dims.ndim()];
        DisplacementField {
            dims,
            vectors,
            provenance: provenance.into(),
        }
    }

    /// Same displacement at every voxel.
    pub fn constant(dims: Dims, d: &[f64], provenance: impl Into<String>) -> Result<Self> {
        if d.len() != dims.ndim() {
            return Err(Error::dim("displacement length must equal axis count"));
        }
        let vectors = d.iter().copied().cycle().take(dims.len() * d.len()).collect();
        DisplacementField::new(dims, vectors, provenance)
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.ndim()
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn set_provenance(&mut self, provenance: impl Into<String>) {
        self.provenance = provenance.into();
    }

    /// Displacement vector at voxel `idx`.
    pub fn at(&self, idx: usize) -> &[f64] {
        let n = self.dims.ndim();
        &self.vectors[idx * n..(idx + 1) * n]
    }

    /// Multilinear interpolation of the field at a continuous position.
    pub fn sample(&self, pos: &[f64]) -> Vec<f64> {
        let n = self.dims.ndim();
        (0..n)
            .map(|c| {
                sample_strided(&self.vectors, &self.dims, pos, n, c)
            })
            .collect()
    }

    /// Largest vector norm over all voxels.
    pub fn max_norm(&self) -> f64 {
        self.vectors
            .chunks(self.dims.ndim())
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().all(|v| v.is_finite())
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [f64] {
        &mut self.vectors
    }

    pub(crate) fn from_raw(dims: Dims, vectors: Vec<f64>, provenance: &str) -> Self {
        DisplacementField {
            dims,
            vectors,
            provenance: provenance.to_string(),
        }
    }
}

/// Zero-padded multilinear sample of channel `channel` of an interleaved grid.
fn sample_strided(values: &[f64], dims: &Dims, pos: &[f64], channels: usize, channel: usize) -> f64 {
    let n = dims.ndim();
    let mut base = [0i64; 3];
    let mut frac = [0f64; 3];
    for a in 0..n {
        let f = pos[a].floor();
        base[a] = f as i64;
        frac[a] = pos[a] - f;
    }
    let mut acc = 0.0;
    'corners: for corner in 0..(1usize << n) {
        let mut w = 1.0;
        let mut idx = 0usize;
        for a in 0..n {
            let hi = (corner >> (n - 1 - a)) & 1 == 1;
            let wa = if hi { frac[a] } else { 1.0 - frac[a] };
            if wa == 0.0 {
                continue 'corners;
            }
            let c = base[a] + i64::from(hi);
            if c < 0 || c >= dims[a] as i64 {
                continue 'corners;
            }
            w *= wa;
            idx = idx * dims[a] + c as usize;
        }
        acc += w * values[idx * channels + channel];
    }
    acc
}

/// Zero-padded multilinear sample of a scalar grid at a continuous position.
pub fn sample(values: &[f64], dims: &Dims, pos: &[f64]) -> f64 {
    sample_strided(values, dims, pos, 1, 0)
}

/// Sample plus the partial derivative of the sample w.r.t. each position
/// component. Positions exactly on a node use the cell above the node.
pub fn sample_with_gradient(values: &[f64], dims: &Dims, pos: &[f64], grad: &mut [f64]) -> f64 {
    let n = dims.ndim();
    let mut base = [0i64; 3];
    let mut frac = [0f64; 3];
    for a in 0..n {
        let f = pos[a].floor();
        base[a] = f as i64;
        frac[a] = pos[a] - f;
        grad[a] = 0.0;
    }
    let mut acc = 0.0;
    'corners: for corner in 0..(1usize << n) {
        let mut idx = 0usize;
        let mut weights = [0f64; 3];
        let mut hi_bits = [false; 3];
        for a in 0..n {
            let hi = (corner >> (n - 1 - a)) & 1 == 1;
            let c = base[a] + i64::from(hi);
            if c < 0 || c >= dims[a] as i64 {
                continue 'corners;
            }
            hi_bits[a] = hi;
            weights[a] = if hi { frac[a] } else { 1.0 - frac[a] };
            idx = idx * dims[a] + c as usize;
        }
        let v = values[idx];
        if v == 0.0 {
            continue;
        }
        let w: f64 = weights[..n].iter().product();
        acc += w * v;
        for a in 0..n {
            let mut dw = if hi_bits[a] { 1.0 } else { -1.0 };
            for (b, wb) in weights[..n].iter().enumerate() {
                if b != a {
                    dw *= wb;
                }
            }
            grad[a] += dw * v;
        }
    }
    acc
}

/// Per-axis area-overlap weights mapping `src` cells onto `dst` cells.
/// Each output cell's weights sum to 1.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let overlap = (hi.min((j + 1) as f64) - lo.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-weighted averaging of a scalar grid onto `target` dims (same axis count).
pub fn resample_area(values: &[f64], from: &Dims, target: &Dims) -> Result<Vec<f64>> {
    if from.ndim() != target.ndim() {
        return Err(Error::dim(format!(
            "cannot resample {}-axis grid to {} axes",
            from.ndim(),
            target.ndim()
        )));
    }
    let mut cur = values.to_vec();
    let mut cur_dims = from.as_slice().to_vec();
    for axis in 0..from.ndim() {
        if cur_dims[axis] == target[axis] {
            continue;
        }
        let weights = area_weights(cur_dims[axis], target[axis]);
        let outer: usize = cur_dims[..axis].iter().product();
        let inner: usize = cur_dims[axis + 1..].iter().product();
        let mut next = vec![0.0; outer * target[axis] * inner];
        for o in 0..outer {
            for (i, row) in weights.iter().enumerate() {
                let dst = &mut next[(o * target[axis] + i) * inner..][..inner];
                for &(j, w) in row {
                    let src = &cur[(o * cur_dims[axis] + j) * inner..][..inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        cur = next;
        cur_dims[axis] = target[axis];
    }
    Ok(cur)
}

/// Resample a binary mask to `target` dims; each output voxel holds the
/// fraction of its footprint covered by set input voxels.
pub fn resample_mask(mask: &BinaryMask, target: &Dims) -> Result<SoftMask> {
    let soft = mask.to_soft();
    resample_soft(&soft, target)
}

pub fn resample_soft(mask: &SoftMask, target: &Dims) -> Result<SoftMask> {
    let mut data = resample_area(&mask.data, &mask.dims, target)?;
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(SoftMask::from_raw(target.clone(), data))
}

/// Grids that can be pulled back through a displacement field.
pub trait Warp: Sized {
    fn warp(&self, ddf: &DisplacementField) -> Result<Self>;
}

fn check_warp(dims: &Dims, ddf: &DisplacementField) -> Result<()> {
    dims.ensure_same(ddf.dims(), "warp")?;
    if !ddf.is_finite() {
        return Err(Error::Validation("displacement field has non-finite values".into()));
    }
    Ok(())
}

/// Pull-back warp: `out(x) = values(x + d(x))`, zero outside the grid.
fn warp_values(values: &[f64], ddf: &DisplacementField) -> Vec<f64> {
    let dims = ddf.dims();
    let n = dims.ndim();
    let mut coords = vec![0usize; n];
    let mut pos = vec![0f64; n];
    (0..dims.len())
        .map(|i| {
            dims.coords_into(i, &mut coords);
            let d = ddf.at(i);
            for a in 0..n {
                pos[a] = coords[a] as f64 + d[a];
            }
            sample(values, dims, &pos)
        })
        .collect()
}

impl Warp for GridImage {
    fn warp(&self, ddf: &DisplacementField) -> Result<Self> {
        check_warp(&self.dims, ddf)?;
        Ok(GridImage {
            dims: self.dims.clone(),
            spacing: self.spacing.clone(),
            data: warp_values(&self.data, ddf),
        })
    }
}

impl Warp for SoftMask {
    fn warp(&self, ddf: &DisplacementField) -> Result<Self> {
        check_warp(&self.dims, ddf)?;
        let mut data = warp_values(&self.data, ddf);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(SoftMask::from_raw(self.dims.clone(), data))
    }
}

pub fn warp<T: Warp>(source: &T, ddf: &DisplacementField) -> Result<T> {
    source.warp(ddf)
}

/// Mass-weighted mean coordinate, in continuous voxel units.
pub fn centroid<M: Mask + ?Sized>(mask: &M) -> Result<Vec<f64>> {
    let dims = mask.dims();
    let n = dims.ndim();
    let mut sum = vec![0.0; n];
    let mut mass = 0.0;
    let mut c = vec![0; n];
    for i in 0..dims.len() {
        let w = mask.weight(i);
        if w == 0.0 {
            continue;
        }
        dims.coords_into(i, &mut c);
        for a in 0..n {
            sum[a] += w * c[a] as f64;
        }
        mass += w;
    }
    if mass <= 0.0 {
        return Err(Error::EmptyRoi("centroid of a mask with zero mass".into()));
    }
    Ok(sum.into_iter().map(|s| s / mass).collect())
}

/// Soft Dice overlap `2·Σab / (Σa + Σb + τ)`.
pub fn dice<A: Mask + ?Sized, B: Mask + ?Sized>(a: &A, b: &B) -> Result<f64> {
    a.dims().ensure_same(b.dims(), "dice")?;
    let (mut inter, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for i in 0..a.dims().len() {
        let (wa, wb) = (a.weight(i), b.weight(i));
        inter += wa * wb;
        sa += wa;
        sb += wb;
    }
    Ok(2.0 * inter / (sa + sb + DICE_TAU))
}

/// Distance between spacing-scaled centroids of two masks.
pub fn tre<A: Mask + ?Sized, B: Mask + ?Sized>(a: &A, b: &B, spacing: &[f64]) -> Result<f64> {
    a.dims().ensure_same(b.dims(), "tre")?;
    if spacing.len() != a.dims().ndim() {
        return Err(Error::dim("spacing length must equal axis count"));
    }
    let ca = centroid(a)?;
    let cb = centroid(b)?;
    Ok(ca
        .iter()
        .zip(&cb)
        .zip(spacing)
        .map(|((x, y), s)| ((x - y) * s).powi(2))
        .sum::<f64>()
        .sqrt())
}
