//! C ABI for the detector.
//!
//! Objects cross the boundary as opaque handles created and released by
//! paired `*_new` / `*_free` functions. Every fallible call returns an
//! [`XbwStatus`]; the message of the last failure on the calling thread is
//! available through [`xbw_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use xray_bovw::detect::Detector;
use xray_bovw::eval::iou;
use xray_bovw::{BoundingBox, Error, GrayImage, RunConfig, SvmModel, Vocabulary};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum XbwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ArtifactMismatch = 5,
    Data = 6,
    Panic = 7,
}

/// Grayscale image handle.
pub struct XbwImage(GrayImage);

/// Loaded vocabulary, model and configuration.
pub struct XbwDetector(Detector);

/// Inclusive pixel box.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct XbwBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct XbwDetection {
    pub bbox: XbwBox,
    pub score: f64,
    pub contributing_boxes: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> XbwStatus {
    match e {
        Error::Io { .. } => XbwStatus::Io,
        Error::Decode { .. } | Error::UnsupportedFormat { .. } | Error::Format(_) => {
            XbwStatus::Format
        }
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } => XbwStatus::InvalidArgument,
        Error::ArtifactMismatch(_) => XbwStatus::ArtifactMismatch,
        _ => XbwStatus::Data,
    }
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (XbwStatus, String)>) -> XbwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XbwStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            XbwStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (XbwStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (XbwStatus, String) {
    (XbwStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (XbwStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(p) };
    s.to_str()
        .map(PathBuf::from)
        .map_err(|_| (XbwStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xbw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn xbw_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            // SAFETY: caller provides `len` writable bytes.
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Creates an image from 8-bit row-major pixels.
///
/// # Safety
/// `pixels` must point to `width * height` readable bytes; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn xbw_image_from_gray8(
    width: u32,
    height: u32,
    pixels: *const u8,
    out: *mut *mut XbwImage,
) -> XbwStatus {
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if width == 0 || height == 0 {
            return Err((
                XbwStatus::InvalidArgument,
                "image dimensions must be positive".into(),
            ));
        }
        let n = (width as usize)
            .checked_mul(height as usize)
            .ok_or((XbwStatus::InvalidArgument, "image too large".to_string()))?;
        // SAFETY: caller guarantees `n` readable bytes.
        let data = unsafe { std::slice::from_raw_parts(pixels, n) };
        let img = GrayImage::from_gray8(width as usize, height as usize, data).map_err(lib_err)?;
        // SAFETY: `out` checked non-null.
        unsafe { *out = Box::into_raw(Box::new(XbwImage(img))) };
        Ok(())
    })
}

/// Loads a PNG or PNM file as grayscale.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xbw_image_load(path: *const c_char, out: *mut *mut XbwImage) -> XbwStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let p = unsafe { path_arg(path, "path") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let img = xray_bovw::imagecore::load_grayscale(p).map_err(lib_err)?;
        // SAFETY: `out` checked non-null.
        unsafe { *out = Box::into_raw(Box::new(XbwImage(img))) };
        Ok(())
    })
}

/// # Safety
/// `img` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xbw_image_free(img: *mut XbwImage) {
    if !img.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(img) });
    }
}

/// Loads the vocabulary and model files and checks them against the
/// configuration (`config_path` may be null for defaults).
///
/// # Safety
/// Paths must be NUL-terminated strings (config may be null); `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xbw_detector_open(
    vocab_path: *const c_char,
    model_path: *const c_char,
    config_path: *const c_char,
    out: *mut *mut XbwDetector,
) -> XbwStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let (vp, mp) = unsafe {
            (
                path_arg(vocab_path, "vocab_path")?,
                path_arg(model_path, "model_path")?,
            )
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = if config_path.is_null() {
            RunConfig::default()
        } else {
            // SAFETY: non-null, forwarded caller contract.
            RunConfig::load(unsafe { path_arg(config_path, "config_path") }?).map_err(lib_err)?
        };
        let (vocab, _) = Vocabulary::load(vp).map_err(lib_err)?;
        let (model, _) = SvmModel::load(mp).map_err(lib_err)?;
        let det = Detector::new(vocab, model, cfg).map_err(lib_err)?;
        // SAFETY: `out` checked non-null.
        unsafe { *out = Box::into_raw(Box::new(XbwDetector(det))) };
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn xbw_detector_free(det: *mut XbwDetector) {
    if !det.is_null() {
        // SAFETY: handle was created by Box::into_raw.
        drop(unsafe { Box::from_raw(det) });
    }
}

/// Runs the full pipeline on one image. `*found` is 1 and `*out` filled when
/// a detection exists, 0 otherwise.
///
/// # Safety
/// Handles must be live; `out` and `found` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn xbw_detect(
    det: *const XbwDetector,
    img: *const XbwImage,
    out: *mut XbwDetection,
    found: *mut i32,
) -> XbwStatus {
    guard(|| {
        if det.is_null() || img.is_null() || out.is_null() || found.is_null() {
            return Err(null("argument"));
        }
        // SAFETY: live handles per the caller contract.
        let (det, img) = unsafe { (&(*det).0, &(*img).0) };
        let report = det.detect("ffi", img).map_err(lib_err)?;
        // SAFETY: output pointers checked non-null.
        unsafe {
            match report.detection {
                Some(d) => {
                    *out = XbwDetection {
                        bbox: to_c(d.bbox),
                        score: d.score,
                        contributing_boxes: d.contributing_boxes as u32,
                    };
                    *found = 1;
                }
                None => {
                    *out = XbwDetection::default();
                    *found = 0;
                }
            }
        }
        Ok(())
    })
}

fn to_c(b: BoundingBox) -> XbwBox {
    XbwBox {
        x_min: b.x_min,
        y_min: b.y_min,
        x_max: b.x_max,
        y_max: b.y_max,
    }
}

/// Intersection over union of two inclusive boxes; -1 for inverted boxes.
#[no_mangle]
pub extern "C" fn xbw_iou(a: XbwBox, b: XbwBox) -> f64 {
    let conv = |b: XbwBox| BoundingBox::new(b.x_min, b.y_min, b.x_max, b.y_max);
    match (conv(a), conv(b)) {
        (Ok(a), Ok(b)) => iou(&a, &b),
        _ => -1.0,
    }
}
