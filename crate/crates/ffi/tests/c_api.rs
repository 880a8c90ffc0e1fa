use std::ffi::CStr;
use std::path::Path;
use std::process::Command;
use std::ptr;

use robust_palmrt_ffi::*;

fn last_error() -> String {
    let p = palmrt_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// Twelve rows, intercept control, x a trend, y noisy in x.
fn sample() -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
    let noise = [
        0.3, -0.8, 1.1, 0.2, -0.5, 0.9, -1.3, 0.4, 0.0, -0.2, 0.7, -0.6,
    ];
    let y = x.iter().zip(noise).map(|(x, e)| 0.5 * x + e).collect();
    (y, x, vec![1.0; 12])
}

fn handle(y: &[f64], x: &[f64], z: &[f64]) -> *mut PalmrtDataset {
    let mut out = ptr::null_mut();
    let st =
        unsafe { palmrt_dataset_new(y.len(), y.as_ptr(), x.as_ptr(), 1, z.as_ptr(), 1, &mut out) };
    assert_eq!(st, PalmrtStatus::Ok);
    assert!(!out.is_null());
    out
}

#[test]
fn location_test_round_trip() {
    let (y, x, z) = sample();
    let h = handle(&y, &x, &z);
    assert_eq!(unsafe { palmrt_dataset_rows(h) }, 12);
    let mut r = PalmrtResult::default();
    let st = unsafe { palmrt_test(h, PalmrtMethod::HuberHuber as u32, 99, 5, 0, &mut r) };
    assert_eq!(st, PalmrtStatus::Ok);
    assert_eq!(r.permutations, 99);
    assert_eq!(r.seed, 5);
    assert_eq!(r.p_value, (1.0 + r.indicator_sum) / 100.0);
    assert!(
        r.p_value < 0.05,
        "strong trend should reject, p = {}",
        r.p_value
    );

    let mut again = PalmrtResult::default();
    unsafe { palmrt_test(h, PalmrtMethod::HuberHuber as u32, 99, 5, 0, &mut again) };
    assert_eq!(r.p_value.to_bits(), again.p_value.to_bits());
    unsafe { palmrt_dataset_free(h) };
}

#[test]
fn dispersion_test_runs() {
    let n = 40;
    let x: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let e = ((i * 37 % 17) as f64 - 8.0) / 4.0;
            if i % 2 == 1 {
                4.0 * e
            } else {
                e
            }
        })
        .collect();
    let z = vec![1.0; n];
    let h = handle(&y, &x, &z);
    let mut r = PalmrtResult::default();
    let st = unsafe { palmrt_dispersion_test(h, 0.1, 0.9, 49, 3, &mut r) };
    assert_eq!(st, PalmrtStatus::Ok, "{}", last_error());
    assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    assert!(r.omega_orig_mean <= 0.0);
    unsafe { palmrt_dataset_free(h) };
}

#[test]
fn errors_set_codes_and_messages() {
    let (y, x, z) = sample();
    let mut out = ptr::null_mut();
    let st = unsafe { palmrt_dataset_new(12, ptr::null(), x.as_ptr(), 1, z.as_ptr(), 1, &mut out) };
    assert_eq!(st, PalmrtStatus::NullPointer);
    assert!(last_error().contains("null"));

    let mut bad = y.clone();
    bad[3] = f64::NAN;
    let st =
        unsafe { palmrt_dataset_new(12, bad.as_ptr(), x.as_ptr(), 1, z.as_ptr(), 1, &mut out) };
    assert_eq!(st, PalmrtStatus::InvalidData);
    assert!(out.is_null());

    let h = handle(&y, &x, &z);
    let mut r = PalmrtResult::default();
    assert_eq!(
        unsafe { palmrt_test(h, 42, 9, 1, 0, &mut r) },
        PalmrtStatus::InvalidArgument
    );
    assert!(last_error().contains("42"));
    assert_eq!(
        unsafe { palmrt_dispersion_test(h, 0.9, 0.1, 9, 1, &mut r) },
        PalmrtStatus::InvalidArgument
    );
    // x is not a 0/1 column
    assert_eq!(
        unsafe { palmrt_dispersion_test(h, 0.1, 0.9, 9, 1, &mut r) },
        PalmrtStatus::InvalidData
    );
    assert_eq!(
        unsafe { palmrt_test(ptr::null(), 0, 9, 1, 0, &mut r) },
        PalmrtStatus::NullPointer
    );
    unsafe {
        palmrt_dataset_free(h);
        palmrt_dataset_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/robust_palmrt.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in [
        "typedef struct PalmrtDataset PalmrtDataset",
        "palmrt_dataset_new",
        "palmrt_dataset_free",
        "palmrt_test",
        "palmrt_dispersion_test",
        "palmrt_last_error",
        "PALMRT_STATUS_OK = 0",
        "PALMRT_METHOD_HUBER_HUBER = 3",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    // the header must also be valid C when a compiler is around
    if let Ok(out) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    {
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
