//! C ABI over the `quantret` kernels.
//!
//! Every function returns a [`QrStatus`]. On failure the message is kept per
//! thread and can be read with [`qr_last_error`]. Buffers are caller-owned;
//! the only heap object handed out is [`QrIndex`], released by [`qr_index_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use quantret::merge::slerp_slice;
use quantret::quantizer::{
    quantize_binary, quantize_int8, similarity_binary, similarity_int8, BinaryEmbedding, QembDtype, QuantizedEmbedding,
    RawEmbedding,
};
use quantret::retrieval::{storage_efficiency, Index, Query, StorageDtype};
use quantret::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NonFinite = 4,
    UndefinedCosine = 5,
    EmptyIndex = 6,
    Format = 7,
    Internal = 8,
}

/// Vector encoding. `Float32` is only meaningful for storage sizing.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrDtype {
    Int8 = 0,
    Binary = 1,
    Float32 = 2,
}

/// Opaque exact-search index.
pub struct QrIndex {
    inner: Index,
    ids: Vec<CString>,
    rows: HashMap<String, usize>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> QrStatus {
    match err {
        Error::DimensionMismatch { .. } | Error::Shape(_) => QrStatus::DimensionMismatch,
        Error::NonFinite { .. } => QrStatus::NonFinite,
        Error::UndefinedCosine => QrStatus::UndefinedCosine,
        Error::EmptyIndex | Error::EmptySequence => QrStatus::EmptyIndex,
        Error::Format(_) | Error::Parse { .. } => QrStatus::Format,
        _ => QrStatus::InvalidArgument,
    }
}

struct Fail(QrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(QrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(QrStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            QrStatus::Internal
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_scalar<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn raw(values: &[f64]) -> Result<RawEmbedding, Fail> {
    Ok(RawEmbedding::new(values.to_vec())?)
}

fn index_dtype(dtype: QrDtype) -> Result<QembDtype, Fail> {
    match dtype {
        QrDtype::Int8 => Ok(QembDtype::Int8),
        QrDtype::Binary => Ok(QembDtype::Binary),
        QrDtype::Float32 => Err(invalid("float32 indexes are not supported")),
    }
}

/// Message of the last failed call on this thread, or NULL.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Bytes needed for one packed binary code of `dim` components.
#[no_mangle]
pub extern "C" fn qr_binary_bytes(dim: usize) -> usize {
    dim.div_ceil(8)
}

/// `out[i] = floor(127 * tanh(x[i]) + 0.5)`.
///
/// # Safety
/// `x` and `out` must point to `dim` readable / writable elements.
#[no_mangle]
pub unsafe extern "C" fn qr_quantize_int8(x: *const f64, dim: usize, out: *mut i8) -> QrStatus {
    guard(|| {
        let q = quantize_int8(&raw(input(x, dim, "x")?)?)?;
        output(out, dim, "out")?.copy_from_slice(q.values());
        Ok(())
    })
}

/// Packs sign bits (`x >= 0` is set) LSB first into `qr_binary_bytes(dim)` bytes.
///
/// # Safety
/// `x` must hold `dim` elements and `out` `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qr_quantize_binary(x: *const f64, dim: usize, out: *mut u8, out_len: usize) -> QrStatus {
    guard(|| {
        let b = quantize_binary(&raw(input(x, dim, "x")?)?)?;
        let bytes = b.to_packed_bytes();
        if out_len < bytes.len() {
            return Err(invalid(format!(
                "output buffer holds {out_len} bytes, need {}",
                bytes.len()
            )));
        }
        output(out, bytes.len(), "out")?.copy_from_slice(&bytes);
        Ok(())
    })
}

/// Cosine of two int8 codes.
///
/// # Safety
/// `a` and `b` must hold `dim` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qr_similarity_int8(a: *const i8, b: *const i8, dim: usize, out: *mut f64) -> QrStatus {
    guard(|| {
        let a = QuantizedEmbedding::new(input(a, dim, "a")?.to_vec())?;
        let b = QuantizedEmbedding::new(input(b, dim, "b")?.to_vec())?;
        *out_scalar(out, "out")? = similarity_int8(&a, &b)?;
        Ok(())
    })
}

/// Cosine of two packed sign codes of `dim` bits.
///
/// # Safety
/// `a` and `b` must hold `qr_binary_bytes(dim)` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qr_similarity_binary(a: *const u8, b: *const u8, dim: usize, out: *mut f64) -> QrStatus {
    guard(|| {
        let n = qr_binary_bytes(dim);
        let a = BinaryEmbedding::from_packed_bytes(input(a, n, "a")?, dim)?;
        let b = BinaryEmbedding::from_packed_bytes(input(b, n, "b")?, dim)?;
        *out_scalar(out, "out")? = similarity_binary(&a, &b)?;
        Ok(())
    })
}

/// Whole vectors of `dim` components that fit in one MB.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qr_docs_per_mb(dim: usize, dtype: QrDtype, out: *mut u64) -> QrStatus {
    guard(|| {
        let dtype = match dtype {
            QrDtype::Int8 => StorageDtype::Int8,
            QrDtype::Binary => StorageDtype::Binary,
            QrDtype::Float32 => StorageDtype::Float32,
        };
        *out_scalar(out, "out")? = storage_efficiency(dim, dtype)?;
        Ok(())
    })
}

/// Spherical interpolation of two flattened parameter vectors, `t` in [0, 1].
///
/// # Safety
/// `a`, `b` and `out` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn qr_slerp(a: *const f64, b: *const f64, len: usize, t: f64, out: *mut f64) -> QrStatus {
    guard(|| {
        let m = slerp_slice(input(a, len, "a")?, input(b, len, "b")?, t)?;
        output(out, len, "out")?.copy_from_slice(&m);
        Ok(())
    })
}

/// Quantizes `n` row-major vectors of `dim` components into a new index.
/// `ids` may be NULL, in which case rows are named "0", "1", ...
///
/// # Safety
/// `data` must hold `n * dim` elements, `ids` (if given) `n` NUL-terminated
/// UTF-8 strings, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qr_index_build(
    data: *const f64,
    n: usize,
    dim: usize,
    ids: *const *const c_char,
    dtype: QrDtype,
    out: *mut *mut QrIndex,
) -> QrStatus {
    guard(|| {
        let out = out_scalar(out, "out")?;
        *out = ptr::null_mut();
        if n == 0 || dim == 0 {
            return Err(invalid("index needs at least one row and one dimension"));
        }
        let len = n.checked_mul(dim).ok_or_else(|| invalid("n * dim overflows"))?;
        let data = input(data, len, "data")?;
        let raws = data.chunks_exact(dim).map(raw).collect::<Result<Vec<_>, _>>()?;
        let names: Vec<String> = if ids.is_null() {
            (0..n).map(|i| i.to_string()).collect()
        } else {
            input(ids, n, "ids")?
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    if p.is_null() {
                        return Err(null(&format!("ids[{i}]")));
                    }
                    CStr::from_ptr(p)
                        .to_str()
                        .map(str::to_owned)
                        .map_err(|_| invalid(format!("ids[{i}] is not UTF-8")))
                })
                .collect::<Result<_, _>>()?
        };
        let inner = Index::build(names, &raws, index_dtype(dtype)?, None)?;
        let ids = inner
            .ids()
            .iter()
            .map(|s| CString::new(s.as_str()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| invalid("ids must not contain NUL"))?;
        let rows = inner.ids().iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        *out = Box::into_raw(Box::new(QrIndex { inner, ids, rows }));
        Ok(())
    })
}

/// Releases an index. NULL is ignored.
///
/// # Safety
/// `index` must come from `qr_index_build` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qr_index_free(index: *mut QrIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qr_index_len(index: *const QrIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.len())
}

/// Id of row `row`, or NULL when out of range. Valid while the index lives.
///
/// # Safety
/// `index` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qr_index_id(index: *const QrIndex, row: usize) -> *const c_char {
    index
        .as_ref()
        .and_then(|i| i.ids.get(row))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Top-`k` rows for a raw query, best first, ties broken by ascending id.
/// Writes up to `k` row numbers and scores and stores the count in `found`.
///
/// # Safety
/// `query` must hold `dim` elements, `rows` and `scores` `k` elements each,
/// and `found` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qr_index_search(
    index: *const QrIndex,
    query: *const f64,
    dim: usize,
    k: usize,
    rows: *mut usize,
    scores: *mut f64,
    found: *mut usize,
) -> QrStatus {
    guard(|| {
        let index = index.as_ref().ok_or_else(|| null("index"))?;
        let found = out_scalar(found, "found")?;
        *found = 0;
        let q = Query::from_raw(&raw(input(query, dim, "query")?)?, index.inner.dtype())?;
        let hits = index.inner.search_topk(&q, k)?;
        let rows = output(rows, k, "rows")?;
        let scores = output(scores, k, "scores")?;
        for (i, hit) in hits.iter().enumerate() {
            rows[i] = index.rows[&hit.id];
            scores[i] = hit.score;
        }
        *found = hits.len();
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_are_recorded_per_thread() {
        let mut out = [0i8; 2];
        let s = unsafe { qr_quantize_int8(ptr::null(), 2, out.as_mut_ptr()) };
        assert_eq!(s, QrStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(qr_last_error()) }.to_str().unwrap().to_owned();
        assert!(msg.contains('x'), "{msg}");
        std::thread::spawn(|| assert!(qr_last_error().is_null()))
            .join()
            .unwrap();
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::UndefinedCosine), QrStatus::UndefinedCosine);
        assert_eq!(
            status_of(&Error::DimensionMismatch { expected: 1, got: 2 }),
            QrStatus::DimensionMismatch
        );
        assert_eq!(
            status_of(&Error::InvalidArgument("x".into())),
            QrStatus::InvalidArgument
        );
    }
}
