//! C ABI over `samreg-core`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every fallible call returns a
//! [`SamregStatus`]; on failure a message is kept per thread and can be read
//! with [`samreg_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use samreg_core::fit::{fit_ddf, pairs_from_set, FitConfig};
use samreg_core::grid::{Dims, DisplacementField, GridImage, Warp};
use samreg_core::io::{read_grid, write_grid, GridFile};
use samreg_core::matching::{MatchConfig, MatchMode, RoiPairSet};
use samreg_core::pipeline::Pipeline;
use samreg_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    EmptyInput = 4,
    Io = 5,
    Format = 6,
    Divergence = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamregMatchMode {
    OneToOne = 0,
    OneToMany = 1,
}

/// Opaque image handle.
pub struct SamregImage(GridImage);

/// Opaque ROI pair set handle.
pub struct SamregPairSet(RoiPairSet);

/// Opaque displacement field handle.
pub struct SamregField(DisplacementField);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SamregStatus {
    match e {
        Error::Dimension(_) | Error::Size(_) => SamregStatus::Dimension,
        Error::EmptyInput(_) | Error::EmptyRoi(_) => SamregStatus::EmptyInput,
        Error::Io { .. } => SamregStatus::Io,
        Error::Format { .. } => SamregStatus::Format,
        Error::Divergence { .. } => SamregStatus::Divergence,
        _ => SamregStatus::InvalidArgument,
    }
}

fn fail(status: SamregStatus, msg: impl Into<String>) -> SamregStatus {
    set_error(msg.into());
    status
}

/// Run `f`, turning errors and panics into a status with a stored message.
fn guard(f: impl FnOnce() -> Result<(), SamregStatus>) -> SamregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SamregStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SamregStatus::Internal, "panic inside samreg"),
    }
}

fn core(e: Error) -> SamregStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, SamregStatus> {
    if p.is_null() {
        return Err(fail(SamregStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(SamregStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, SamregStatus> {
    p.as_ref()
        .ok_or_else(|| fail(SamregStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, SamregStatus> {
    p.as_mut()
        .ok_or_else(|| fail(SamregStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn samreg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn samreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Create an image from `ndim` (2 or 3) extents and `dims` product values in
/// row-major order. Spacing is 1 on every axis.
///
/// # Safety
/// `dims` must point to `ndim` values and `data` to their product; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_image_new(
    ndim: usize,
    dims: *const usize,
    data: *const f64,
    out: *mut *mut SamregImage,
) -> SamregStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if dims.is_null() || data.is_null() {
            return Err(fail(SamregStatus::NullPointer, "dims or data is null"));
        }
        if !(2..=3).contains(&ndim) {
            return Err(fail(SamregStatus::Dimension, format!("ndim must be 2 or 3, got {ndim}")));
        }
        let extent = std::slice::from_raw_parts(dims, ndim);
        let d = Dims::new(extent).map_err(core)?;
        let values = std::slice::from_raw_parts(data, d.len()).to_vec();
        let image = GridImage::new(d, values).map_err(core)?;
        *out = Box::into_raw(Box::new(SamregImage(image)));
        Ok(())
    })
}

/// Read a single-channel grid file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_image_read(path: *const c_char, out: *mut *mut SamregImage) -> SamregStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let image = read_grid(path_arg(path)?).and_then(|g| g.to_image()).map_err(core)?;
        *out = Box::into_raw(Box::new(SamregImage(image)));
        Ok(())
    })
}

/// Write an image as a 32-bit float grid file.
///
/// # Safety
/// `image` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn samreg_image_write(image: *const SamregImage, path: *const c_char) -> SamregStatus {
    guard(|| {
        let image = handle(image, "image")?;
        write_grid(path_arg(path)?, &GridFile::from_image(&image.0)).map_err(core)
    })
}

/// Number of voxels of an image.
///
/// # Safety
/// `image` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn samreg_image_len(image: *const SamregImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.data().len())
}

/// Copy the image values into `buf`, which must hold `samreg_image_len` values.
///
/// # Safety
/// `image` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn samreg_image_copy(image: *const SamregImage, buf: *mut f64, len: usize) -> SamregStatus {
    guard(|| {
        let image = handle(image, "image")?;
        copy_out(image.0.data(), buf, len)
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), SamregStatus> {
    if buf.is_null() {
        return Err(fail(SamregStatus::NullPointer, "buffer is null"));
    }
    if len < src.len() {
        return Err(fail(
            SamregStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// # Safety
/// `image` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn samreg_image_free(image: *mut SamregImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Segment, embed and match two 2D images with the builtin pipeline.
///
/// # Safety
/// Image handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_register(
    moving: *const SamregImage,
    fixed: *const SamregImage,
    epsilon: f64,
    mode: SamregMatchMode,
    out: *mut *mut SamregPairSet,
) -> SamregStatus {
    guard(|| {
        let (moving, fixed) = (handle(moving, "moving")?, handle(fixed, "fixed")?);
        let out = out_ptr(out, "out")?;
        let matching = MatchConfig {
            epsilon,
            mode: match mode {
                SamregMatchMode::OneToOne => MatchMode::OneToOne,
                SamregMatchMode::OneToMany => MatchMode::OneToMany,
            },
            ..Default::default()
        };
        let (pairs, _, _) = Pipeline::with_matching(matching)
            .register(&moving.0, &fixed.0)
            .map_err(core)?;
        *out = Box::into_raw(Box::new(SamregPairSet(pairs)));
        Ok(())
    })
}

/// # Safety
/// `pairs` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn samreg_pairs_len(pairs: *const SamregPairSet) -> usize {
    pairs.as_ref().map_or(0, |p| p.0.len())
}

/// Candidate ids and similarity of pair `index`.
///
/// # Safety
/// `pairs` must be a live handle and the out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_pairs_get(
    pairs: *const SamregPairSet,
    index: usize,
    moving_id: *mut usize,
    fixed_id: *mut usize,
    similarity: *mut f64,
) -> SamregStatus {
    guard(|| {
        let pairs = handle(pairs, "pairs")?;
        let (m, f, s) = (
            out_ptr(moving_id, "moving_id")?,
            out_ptr(fixed_id, "fixed_id")?,
            out_ptr(similarity, "similarity")?,
        );
        let Some(p) = pairs.0.pairs().get(index) else {
            return Err(fail(
                SamregStatus::InvalidArgument,
                format!("pair index {index} out of range ({})", pairs.0.len()),
            ));
        };
        *m = p.moving_id;
        *f = p.fixed_id;
        *s = p.similarity;
        Ok(())
    })
}

/// # Safety
/// `pairs` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn samreg_pairs_free(pairs: *mut SamregPairSet) {
    if !pairs.is_null() {
        drop(Box::from_raw(pairs));
    }
}

/// Fit a displacement field to a pair set with default settings apart
/// from `lambda` and the per-level iteration cap.
///
/// # Safety
/// `pairs` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_fit(
    pairs: *const SamregPairSet,
    lambda: f64,
    iterations: usize,
    out: *mut *mut SamregField,
) -> SamregStatus {
    guard(|| {
        let pairs = handle(pairs, "pairs")?;
        let out = out_ptr(out, "out")?;
        let fit_pairs = pairs_from_set(&pairs.0).map_err(core)?;
        let Some(first) = fit_pairs.first() else {
            return Err(fail(SamregStatus::EmptyInput, "pair set is empty"));
        };
        let dims = first.dims().clone();
        let cfg = FitConfig {
            lambda,
            iterations,
            ..Default::default()
        };
        let (field, _) = fit_ddf(&fit_pairs, &dims, &cfg).map_err(core)?;
        *out = Box::into_raw(Box::new(SamregField(field)));
        Ok(())
    })
}

/// Zero displacement field on the grid of `image`.
///
/// # Safety
/// `image` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_field_zeros(image: *const SamregImage, out: *mut *mut SamregField) -> SamregStatus {
    guard(|| {
        let image = handle(image, "image")?;
        let out = out_ptr(out, "out")?;
        let field = DisplacementField::zeros(image.0.dims().clone(), "zeros");
        *out = Box::into_raw(Box::new(SamregField(field)));
        Ok(())
    })
}

/// Number of displacement components (voxels × axes).
///
/// # Safety
/// `field` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn samreg_field_len(field: *const SamregField) -> usize {
    field.as_ref().map_or(0, |f| f.0.vectors().len())
}

/// Copy the displacement vectors (axis fastest) into `buf`.
///
/// # Safety
/// `field` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn samreg_field_copy(field: *const SamregField, buf: *mut f64, len: usize) -> SamregStatus {
    guard(|| {
        let field = handle(field, "field")?;
        copy_out(field.0.vectors(), buf, len)
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn samreg_field_free(field: *mut SamregField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Pull `image` back through `field` into a new image.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn samreg_warp(
    image: *const SamregImage,
    field: *const SamregField,
    out: *mut *mut SamregImage,
) -> SamregStatus {
    guard(|| {
        let (image, field) = (handle(image, "image")?, handle(field, "field")?);
        let out = out_ptr(out, "out")?;
        let warped = image.0.warp(&field.0).map_err(core)?;
        *out = Box::into_raw(Box::new(SamregImage(warped)));
        Ok(())
    })
}
