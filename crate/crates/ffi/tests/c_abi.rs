use std::ffi::{CStr, CString};
use std::ptr;

use flowception::model::{save_checkpoint, Architecture, ReferenceNet};
use flowception::toyset::{mixture_catalog, write_dataset};
use flowception_ffi::*;

fn cstr(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fc_last_error()) }.to_string_lossy().into_owned()
}

fn small_arch() -> Architecture {
    Architecture::toy()
}

#[test]
fn model_round_trip_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.fckp");
    let net = ReferenceNet::new(small_arch(), 4).unwrap();
    save_checkpoint(&path, &net, 7).unwrap();

    let mut model = ptr::null_mut();
    let p = cstr(&path);
    assert_eq!(unsafe { fc_model_load(p.as_ptr(), &mut model) }, FcStatus::Ok);
    assert!(!model.is_null());

    let (mut h, mut w, mut c) = (0, 0, 0);
    assert_eq!(unsafe { fc_model_frame_shape(model, &mut h, &mut w, &mut c) }, FcStatus::Ok);
    assert_eq!((h, w, c), (3, 3, 3));

    let mut opts = fc_sampler_options_default();
    opts.h = 0.1;
    opts.max_len = 12;
    opts.seed = 3;
    let mut sample = ptr::null_mut();
    assert_eq!(
        unsafe { fc_generate(model, &opts, ptr::null(), 0, &mut sample) },
        FcStatus::Ok
    );
    let len = unsafe { fc_sample_length(sample) };
    let numel = unsafe { fc_sample_frame_numel(sample) };
    assert!((1..=12).contains(&len));
    assert_eq!(numel, 27);
    assert!(unsafe { fc_sample_steps(sample) } >= 10);

    let mut buf = vec![f32::NAN; len * numel];
    assert_eq!(
        unsafe { fc_sample_copy_frames(sample, buf.as_mut_ptr(), buf.len() - 1) },
        FcStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { fc_sample_copy_frames(sample, buf.as_mut_ptr(), buf.len()) },
        FcStatus::Ok
    );
    assert!(buf.iter().all(|v| v.is_finite()));
    unsafe { fc_sample_free(sample) };

    let first = [0.25f32; 27];
    let mut sample = ptr::null_mut();
    assert_eq!(
        unsafe { fc_generate(model, &opts, first.as_ptr(), first.len(), &mut sample) },
        FcStatus::Ok
    );
    let len = unsafe { fc_sample_length(sample) };
    let mut buf = vec![0f32; len * 27];
    assert_eq!(
        unsafe { fc_sample_copy_frames(sample, buf.as_mut_ptr(), buf.len()) },
        FcStatus::Ok
    );
    assert_eq!(&buf[..27], &first[..]);
    unsafe { fc_sample_free(sample) };

    let mut sample = ptr::null_mut();
    assert_eq!(
        unsafe { fc_generate(model, &opts, first.as_ptr(), 5, &mut sample) },
        FcStatus::Format
    );
    assert!(sample.is_null());

    opts.h = 0.0;
    assert_eq!(
        unsafe { fc_generate(model, &opts, ptr::null(), 0, &mut sample) },
        FcStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
    unsafe { fc_model_free(model) };
}

#[test]
fn load_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = ptr::null_mut();
    let missing = cstr(&dir.path().join("nope"));
    assert_eq!(unsafe { fc_model_load(missing.as_ptr(), &mut model) }, FcStatus::Io);
    assert!(model.is_null());

    let junk = dir.path().join("junk");
    std::fs::write(&junk, b"XXXXXXXXXXXX").unwrap();
    let junk = cstr(&junk);
    assert_eq!(unsafe { fc_model_load(junk.as_ptr(), &mut model) }, FcStatus::Format);
    assert!(last_error().contains("magic"), "{}", last_error());

    assert_eq!(unsafe { fc_model_load(ptr::null(), &mut model) }, FcStatus::NullPointer);
    assert_eq!(
        unsafe { fc_model_load(missing.as_ptr(), ptr::null_mut()) },
        FcStatus::NullPointer
    );
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        fc_model_free(ptr::null_mut());
        fc_sample_free(ptr::null_mut());
        fc_dataset_free(ptr::null_mut());
        assert_eq!(fc_sample_length(ptr::null()), 0);
        assert_eq!(fc_dataset_count(ptr::null()), 0);
        assert!(!fc_sample_truncated(ptr::null()));
    }
}

#[test]
fn dataset_access() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.fcds");
    write_dataset(&path, &mixture_catalog()).unwrap();
    let p = cstr(&path);
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { fc_dataset_read(p.as_ptr(), &mut ds) }, FcStatus::Ok);
    assert_eq!(unsafe { fc_dataset_count(ds) }, 4);
    let mut len = 0;
    for i in 0..4 {
        assert_eq!(unsafe { fc_dataset_video_length(ds, i, &mut len) }, FcStatus::Ok);
        assert_eq!(len, i + 2);
    }
    assert_eq!(
        unsafe { fc_dataset_video_length(ds, 4, &mut len) },
        FcStatus::InvalidArgument
    );
    unsafe { fc_dataset_free(ds) };
}

#[test]
fn hazard_and_flops() {
    let mut v = 0.0;
    assert_eq!(unsafe { fc_hazard(FC_SCHEDULE_LINEAR, 0.0, 0.5, &mut v) }, FcStatus::Ok);
    assert!((v - 2.0).abs() < 1e-12);
    assert_eq!(unsafe { fc_hazard(FC_SCHEDULE_POWER, 2.0, 0.5, &mut v) }, FcStatus::Ok);
    assert!((v - 1.0 / 0.75).abs() < 1e-12);
    assert_eq!(
        unsafe { fc_integrated_hazard(FC_SCHEDULE_LINEAR, 0.0, 0.0, 0.5, &mut v) },
        FcStatus::Ok
    );
    assert!((v - 2f64.ln()).abs() < 1e-12);
    assert_eq!(
        unsafe { fc_hazard(9, 0.0, 0.5, &mut v) },
        FcStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { fc_hazard(FC_SCHEDULE_POWER, -1.0, 0.5, &mut v) },
        FcStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { fc_hazard(FC_SCHEDULE_LINEAR, 0.0, 0.5, ptr::null_mut()) },
        FcStatus::NullPointer
    );

    let mut f = FcFlops::default();
    assert_eq!(unsafe { fc_flops_analytic(10, 4, 50, 20, 2.0, &mut f) }, FcStatus::Ok);
    assert!((f.full_seq - 50.0 * 1600.0).abs() < 1e-6);
    assert!((f.flowception / f.full_seq - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(
        unsafe { fc_flops_analytic(0, 4, 50, 20, 2.0, &mut f) },
        FcStatus::InvalidArgument
    );
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/flowception.h")).unwrap();
    for sym in [
        "fc_model_load",
        "fc_generate",
        "fc_sample_copy_frames",
        "fc_dataset_read",
        "fc_hazard",
        "fc_flops_analytic",
        "fc_last_error",
        "typedef struct FcModel FcModel",
        "FC_STATUS_OK = 0",
    ] {
        assert!(header.contains(sym), "missing {sym}");
    }
}
