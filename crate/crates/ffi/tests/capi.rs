use std::ffi::{c_char, CString};
use std::ptr;

use xray_bovw::encode::KernelMapConfig;
use xray_bovw::synth::{generate_scene, SynthParams};
use xray_bovw::{RunConfig, SvmModel, Vocabulary};
use xray_bovw_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { xbw_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    let bytes: Vec<u8> = buf
        .iter()
        .take_while(|c| **c != 0)
        .map(|c| *c as u8)
        .collect();
    String::from_utf8(bytes).unwrap()
}

/// Vocabulary of four words and a model that accepts every proposal.
fn artifacts(dir: &std::path::Path) -> (CString, CString) {
    let centroids: Vec<f32> = (0..4 * 128)
        .map(|i| ((i * 37) % 101) as f32 / 101.0)
        .collect();
    let vocab = Vocabulary::new(centroids, 128, 0.0).unwrap();
    let kernel = KernelMapConfig::default();
    let model = SvmModel {
        w: vec![0.0; 4 * kernel.block_len()],
        b: 1.0,
        lambda: 1.0,
        threshold: 0.0,
        kernel,
        vocab_hash: [0; 32],
    }
    .bind(kernel, vocab.content_hash());
    let (v, m) = (dir.join("v.bin"), dir.join("m.bin"));
    vocab.save(&v, &RunConfig::default().to_toml()).unwrap();
    model.save(&m, "").unwrap();
    (
        CString::new(v.to_str().unwrap()).unwrap(),
        CString::new(m.to_str().unwrap()).unwrap(),
    )
}

#[test]
fn detect_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let (v, m) = artifacts(dir.path());
    let mut det = ptr::null_mut();
    assert_eq!(
        unsafe { xbw_detector_open(v.as_ptr(), m.as_ptr(), ptr::null(), &mut det) },
        XbwStatus::Ok
    );

    let scene = generate_scene("s", &SynthParams::default(), 3);
    let png = dir.path().join("s.png");
    xray_bovw::imagecore::save_png(&scene.image, &png).unwrap();
    let png = CString::new(png.to_str().unwrap()).unwrap();
    let mut img = ptr::null_mut();
    assert_eq!(
        unsafe { xbw_image_load(png.as_ptr(), &mut img) },
        XbwStatus::Ok
    );

    let mut out = XbwDetection::default();
    let mut found = -1;
    assert_eq!(
        unsafe { xbw_detect(det, img, &mut out, &mut found) },
        XbwStatus::Ok
    );
    assert_eq!(found, 1);
    assert!(out.bbox.x_max < 160 && out.bbox.y_max < 160 && out.contributing_boxes >= 1);

    // a bright image has no metal, hence nothing to report
    let bright = vec![240u8; 64 * 64];
    let mut img2 = ptr::null_mut();
    assert_eq!(
        unsafe { xbw_image_from_gray8(64, 64, bright.as_ptr(), &mut img2) },
        XbwStatus::Ok
    );
    assert_eq!(
        unsafe { xbw_detect(det, img2, &mut out, &mut found) },
        XbwStatus::Ok
    );
    assert_eq!(found, 0);

    unsafe {
        xbw_image_free(img);
        xbw_image_free(img2);
        xbw_detector_free(det);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let mut img = ptr::null_mut();
    assert_eq!(
        unsafe { xbw_image_load(ptr::null(), &mut img) },
        XbwStatus::NullPointer
    );
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/x.png").unwrap();
    assert_eq!(
        unsafe { xbw_image_load(missing.as_ptr(), &mut img) },
        XbwStatus::Io
    );
    assert!(img.is_null());

    let px = [0u8; 4];
    assert_eq!(
        unsafe { xbw_image_from_gray8(0, 4, px.as_ptr(), &mut img) },
        XbwStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let (v, _) = artifacts(dir.path());
    let mut det = ptr::null_mut();
    // a vocabulary file is not a model
    assert_eq!(
        unsafe { xbw_detector_open(v.as_ptr(), v.as_ptr(), ptr::null(), &mut det) },
        XbwStatus::Format
    );
    assert!(det.is_null());

    let mut out = XbwDetection::default();
    let mut found = 0;
    assert_eq!(
        unsafe { xbw_detect(ptr::null(), ptr::null(), &mut out, &mut found) },
        XbwStatus::NullPointer
    );
    unsafe {
        xbw_image_free(ptr::null_mut());
        xbw_detector_free(ptr::null_mut());
    }
}

#[test]
fn iou_and_version() {
    let a = XbwBox {
        x_min: 0,
        y_min: 0,
        x_max: 9,
        y_max: 9,
    };
    let b = XbwBox {
        x_min: 5,
        y_min: 0,
        x_max: 14,
        y_max: 9,
    };
    assert!((xbw_iou(a, b) - 50.0 / 150.0).abs() < 1e-12);
    assert_eq!(xbw_iou(a, a), 1.0);
    assert_eq!(
        xbw_iou(
            XbwBox { x_min: 3, ..a },
            XbwBox {
                x_min: 9,
                x_max: 2,
                ..a
            }
        ),
        -1.0
    );
    let v = unsafe { std::ffi::CStr::from_ptr(xbw_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_generated() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/xray_bovw.h"))
        .unwrap();
    for f in [
        "xbw_detector_open",
        "xbw_detect",
        "xbw_iou",
        "xbw_last_error",
        "XBW_STATUS_ARTIFACT_MISMATCH",
    ] {
        assert!(h.contains(f), "{f}");
    }
}
