//! C ABI over `pdnet-core`.
//!
//! Handles are opaque pointers created by `*_new`/`*_read`/`*_load` and
//! released with the matching `*_free`. Every fallible call returns a
//! [`PdnetStatus`]; on failure [`pdnet_last_error`] describes what went wrong
//! on the calling thread. Coordinates are passed as packed `x, y, z` doubles.
//! No call keeps a pointer it was given after returning.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pdnet_core::data::{read_cloud, with_estimated_normals, write_cloud, write_ply};
use pdnet_core::geometry::{farthest_point_sample, knn, Point3, PointCloud};
use pdnet_core::metrics::argmax_rows;
use pdnet_core::network::{Model, Task};
use pdnet_core::train::{load_model, prepare_input};
use pdnet_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdnetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdnetTask {
    Classification = 0,
    Segmentation = 1,
}

/// A point cloud with optional normals and labels.
pub struct PdnetCloud {
    inner: PointCloud,
}

/// A trained network loaded from a run directory.
pub struct PdnetModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PdnetStatus {
    match e {
        Error::Io(_) => PdnetStatus::Io,
        Error::Config(_) => PdnetStatus::Config,
        Error::MalformedHeader(_) | Error::Truncated(_) | Error::UnsupportedVersion(_) => PdnetStatus::Format,
        Error::NonFinite(_) | Error::DegenerateNeighborhood(_) => PdnetStatus::Numeric,
        _ => PdnetStatus::InvalidArgument,
    }
}

struct Fail(PdnetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PdnetStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording failures and containing panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PdnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PdnetStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PdnetStatus::Panic
        }
    }
}

unsafe fn points<'a>(xyz: *const f64, n: usize, what: &str) -> Result<&'a [Point3], Fail> {
    if n == 0 {
        return Err(Fail(PdnetStatus::InvalidArgument, format!("{what} is empty")));
    }
    if xyz.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(xyz.cast::<Point3>(), n))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(PdnetStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slice<'a, T>(buf: *mut T, cap: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if need > cap {
        return Err(Fail(PdnetStatus::BufferTooSmall, format!("{what} needs {need} slots, got {cap}")));
    }
    if buf.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(buf, need))
}

unsafe fn cloud_ref<'a>(c: *const PdnetCloud) -> Result<&'a PdnetCloud, Fail> {
    c.as_ref().ok_or_else(|| null("cloud"))
}

unsafe fn cloud_mut<'a>(c: *mut PdnetCloud) -> Result<&'a mut PdnetCloud, Fail> {
    c.as_mut().ok_or_else(|| null("cloud"))
}

fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pdnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn pdnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates a cloud from `n` packed positions.
///
/// # Safety
/// `xyz` must point to `3 * n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_new(xyz: *const f64, n: usize, out: *mut *mut PdnetCloud) -> PdnetStatus {
    guard(|| {
        let pts = points(xyz, n, "positions")?;
        store(out, PdnetCloud { inner: PointCloud::new(pts.to_vec())? })
    })
}

/// Reads a PDCLOUD1 file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_read(file: *const c_char, out: *mut *mut PdnetCloud) -> PdnetStatus {
    guard(|| store(out, PdnetCloud { inner: read_cloud(&path(file)?)? }))
}

/// Writes a PDCLOUD1 file.
///
/// # Safety
/// `cloud` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_write(cloud: *const PdnetCloud, file: *const c_char) -> PdnetStatus {
    guard(|| Ok(write_cloud(&cloud_ref(cloud)?.inner, &path(file)?)?))
}

/// Writes an ASCII PLY file with whatever normals and labels the cloud has.
///
/// # Safety
/// `cloud` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_write_ply(cloud: *const PdnetCloud, file: *const c_char) -> PdnetStatus {
    guard(|| Ok(write_ply(&cloud_ref(cloud)?.inner, &path(file)?)?))
}

/// Releases a cloud. Null is ignored.
///
/// # Safety
/// `cloud` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_free(cloud: *mut PdnetCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `cloud` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_len(cloud: *const PdnetCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.len())
}

/// Copies `3 * len` packed positions into `xyz`.
///
/// # Safety
/// `cloud` must be a live handle; `xyz` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_positions(cloud: *const PdnetCloud, xyz: *mut f64, cap: usize) -> PdnetStatus {
    guard(|| {
        let c = &cloud_ref(cloud)?.inner;
        let dst = out_slice(xyz, cap, 3 * c.len(), "positions buffer")?;
        dst.copy_from_slice(c.positions().as_flattened());
        Ok(())
    })
}

/// Replaces the cloud's normals with PCA estimates from `k` nearest neighbors.
///
/// # Safety
/// `cloud` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_estimate_normals(cloud: *mut PdnetCloud, k: usize) -> PdnetStatus {
    guard(|| {
        let c = cloud_mut(cloud)?;
        c.inner = with_estimated_normals(&c.inner, k)?;
        Ok(())
    })
}

/// Copies `3 * len` packed unit normals into `nxyz`. Fails with
/// `InvalidArgument` if the cloud has none.
///
/// # Safety
/// `cloud` must be a live handle; `nxyz` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_normals(cloud: *const PdnetCloud, nxyz: *mut f64, cap: usize) -> PdnetStatus {
    guard(|| {
        let c = &cloud_ref(cloud)?.inner;
        let normals = c.normals().ok_or(Error::MissingNormals)?;
        out_slice(nxyz, cap, 3 * c.len(), "normals buffer")?.copy_from_slice(normals.as_flattened());
        Ok(())
    })
}

/// Sets one label per point.
///
/// # Safety
/// `cloud` must be a live handle; `labels` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn pdnet_cloud_set_labels(cloud: *mut PdnetCloud, labels: *const u32, n: usize) -> PdnetStatus {
    guard(|| {
        let c = cloud_mut(cloud)?;
        if labels.is_null() {
            return Err(null("labels"));
        }
        c.inner.set_labels(Some(std::slice::from_raw_parts(labels, n).to_vec()))?;
        Ok(())
    })
}

/// Farthest point sampling: writes `count` indices, starting from `start`.
///
/// # Safety
/// `xyz` must hold `3 * n` doubles and `out` `count` slots.
#[no_mangle]
pub unsafe extern "C" fn pdnet_farthest_point_sample(
    xyz: *const f64,
    n: usize,
    count: usize,
    start: usize,
    out: *mut usize,
) -> PdnetStatus {
    guard(|| {
        let picked = farthest_point_sample(points(xyz, n, "positions")?, count, start)?;
        out_slice(out, count, picked.len(), "index buffer")?.copy_from_slice(&picked);
        Ok(())
    })
}

/// Exact `k` nearest supports of each query, nearest first, ties to the lower
/// index. Writes `nq * k` indices and, if `distances` is not null, as many
/// Euclidean distances.
///
/// # Safety
/// Inputs must hold `3 * nq` and `3 * ns` doubles; outputs `nq * k` slots.
#[no_mangle]
pub unsafe extern "C" fn pdnet_knn(
    queries: *const f64,
    nq: usize,
    support: *const f64,
    ns: usize,
    k: usize,
    indices: *mut usize,
    distances: *mut f64,
) -> PdnetStatus {
    guard(|| {
        let index = knn(points(queries, nq, "queries")?, points(support, ns, "support")?, k)?;
        let idx = out_slice(indices, nq * k, nq * k, "index buffer")?;
        for (q, (nbrs, _)) in index.iter().enumerate() {
            idx[q * k..(q + 1) * k].copy_from_slice(nbrs);
        }
        if !distances.is_null() {
            let dst = std::slice::from_raw_parts_mut(distances, nq * k);
            for (q, (_, d)) in index.iter().enumerate() {
                dst[q * k..(q + 1) * k].copy_from_slice(d);
            }
        }
        Ok(())
    })
}

/// Loads a trained network from a run directory written by `pdnet train`.
/// `checkpoint` names a file in that directory, e.g. `best.ckpt`.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdnet_model_load(
    run_dir: *const c_char,
    checkpoint: *const c_char,
    out: *mut *mut PdnetModel,
) -> PdnetStatus {
    guard(|| {
        let dir = path(run_dir)?;
        let name = path(checkpoint)?;
        let name = name.to_str().expect("checked UTF-8");
        store(out, PdnetModel { inner: load_model(&dir, name)? })
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pdnet_model_free(model: *mut PdnetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of output classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdnet_model_classes(model: *const PdnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.classes)
}

/// Input points per cloud the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdnet_model_input_points(model: *const PdnetModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.input_points)
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdnet_model_task(model: *const PdnetModel, out: *mut PdnetTask) -> PdnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let task = match m.inner.config.task {
            Task::Classification => PdnetTask::Classification,
            Task::Segmentation => PdnetTask::Segmentation,
        };
        *out.as_mut().ok_or_else(|| null("task output"))? = task;
        Ok(())
    })
}

/// Predicted labels: one for classification, one per point for
/// segmentation. Normals are estimated from `normal_k` neighbors when the
/// model uses them. `written` receives the label count.
///
/// # Safety
/// Handles must be live; `labels` must hold `cap` values; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdnet_model_predict(
    model: *const PdnetModel,
    cloud: *const PdnetCloud,
    normal_k: usize,
    labels: *mut u32,
    cap: usize,
    written: *mut usize,
) -> PdnetStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.inner;
        let c = &cloud_ref(cloud)?.inner;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let logits = m.predict(&prepare_input(&m.config, c, normal_k)?)?;
        let pred = argmax_rows(logits.data(), logits.last_dim());
        out_slice(labels, cap, pred.len(), "label buffer")?.copy_from_slice(&pred);
        *written = pred.len();
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use std::ptr;

    use super::*;

    #[test]
    fn panics_do_not_cross_the_boundary() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, PdnetStatus::Panic);
        let msg = unsafe { CStr::from_ptr(pdnet_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
        assert_eq!(guard(|| Ok(())), PdnetStatus::Ok);
        assert!(unsafe { CStr::from_ptr(pdnet_last_error()) }.is_empty());
    }

    #[test]
    fn errors_map_to_stable_codes() {
        assert_eq!(status_of(&Error::Config("x".into())), PdnetStatus::Config);
        assert_eq!(status_of(&Error::Truncated("x".into())), PdnetStatus::Format);
        assert_eq!(status_of(&Error::NonFinite("x")), PdnetStatus::Numeric);
        assert_eq!(status_of(&Error::MissingNormals), PdnetStatus::InvalidArgument);
        assert_eq!(PdnetStatus::Panic as i32, 8);
    }

    #[test]
    fn null_output_is_rejected() {
        let pts = [0.0f64; 3];
        assert_eq!(unsafe { pdnet_cloud_new(pts.as_ptr(), 1, ptr::null_mut()) }, PdnetStatus::NullPointer);
    }
}
