use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use selfi::dataio::{write_checkpoint, write_dataset, EmbeddingDataset};
use selfi::experiments::evaluate;
use selfi::model::{run, Dims, Mode, ModelConfig};
use selfi::optim::{train, Checkpoint, OptimConfig, TrainConfig};
use selfi::synthdata::{benchmark_spec, BenchmarkConfig, Split, SplitCounts};
use selfi_ffi::*;

fn small_config() -> BenchmarkConfig {
    BenchmarkConfig {
        d_id: 6,
        d_backbone: 5,
        h_rel: 3,
        train: SplitCounts { n_real: 64, n_fake: 64 },
        val: SplitCounts { n_real: 32, n_fake: 32 },
        test: SplitCounts { n_real: 32, n_fake: 32 },
        ..BenchmarkConfig::default()
    }
}

fn dims() -> Dims {
    small_config().dims()
}

fn data(split: Split) -> EmbeddingDataset {
    let spec = benchmark_spec(&small_config(), 3).unwrap();
    spec.method_split(0, split).unwrap()
}

fn trained(mode: Mode) -> Checkpoint {
    let tc = TrainConfig {
        optim: OptimConfig {
            epochs: 2,
            lr: 0.01,
            ..OptimConfig::default()
        },
        seed: 1,
        model: ModelConfig::new(mode, dims()),
    };
    train(&data(Split::Train).samples, &data(Split::Val).samples, &tc).unwrap()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(selfi_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

struct Files {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn files(mode: Mode) -> (Files, Checkpoint, EmbeddingDataset) {
    let dir = tempfile::tempdir().unwrap();
    let ds = data(Split::Test);
    let ck = trained(mode);
    let data_path = dir.path().join("test.semb");
    let model_path = dir.path().join("model.sckpt");
    write_dataset(&ds, &data_path).unwrap();
    write_checkpoint(&ck, &model_path).unwrap();
    (
        Files {
            _dir: dir,
            data: data_path,
            model: model_path,
        },
        ck,
        ds,
    )
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(selfi_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn roc_auc_over_raw_arrays() {
    let scores = [0.1, 0.4, 0.35, 0.8];
    let labels = [0u8, 0, 1, 1];
    let mut out = f64::NAN;
    let st = unsafe { selfi_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out) };
    assert_eq!(st, SelfiStatus::Ok);
    assert_eq!(out, 0.75);

    let st = unsafe { selfi_roc_auc(scores.as_ptr(), [1u8; 4].as_ptr(), 4, &mut out) };
    assert_eq!(st, SelfiStatus::Degenerate);
    assert!(!last_error().is_empty());

    let st = unsafe { selfi_roc_auc(ptr::null(), labels.as_ptr(), 4, &mut out) };
    assert_eq!(st, SelfiStatus::NullPointer);
    assert!(last_error().contains("scores"));

    let st = unsafe { selfi_roc_auc(scores.as_ptr(), [0u8, 2, 1, 1].as_ptr(), 4, &mut out) };
    assert_eq!(st, SelfiStatus::Format);
}

#[test]
fn dataset_handle() {
    let (f, _, ds) = files(Mode::BaselineVisual);
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { selfi_dataset_read(cpath(&f.data).as_ptr(), &mut h) },
        SelfiStatus::Ok
    );
    let (mut n, mut a, mut b) = (0, 0, 0);
    assert_eq!(unsafe { selfi_dataset_len(h, &mut n) }, SelfiStatus::Ok);
    assert_eq!(unsafe { selfi_dataset_dims(h, &mut a, &mut b) }, SelfiStatus::Ok);
    assert_eq!((n, a, b), (ds.len(), 6, 5));
    unsafe { selfi_dataset_free(h) };
    unsafe { selfi_dataset_free(ptr::null_mut()) };
}

#[test]
fn read_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.semb");
    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { selfi_dataset_read(cpath(&missing).as_ptr(), &mut h) },
        SelfiStatus::Io
    );
    assert!(h.is_null());

    let junk = dir.path().join("junk.semb");
    std::fs::write(&junk, b"definitely not an embedding file").unwrap();
    assert_eq!(
        unsafe { selfi_dataset_read(cpath(&junk).as_ptr(), &mut h) },
        SelfiStatus::Format
    );
    assert!(last_error().contains("magic"));

    let mut m = ptr::null_mut();
    assert_eq!(
        unsafe { selfi_model_read(cpath(&junk).as_ptr(), &mut m) },
        SelfiStatus::Format
    );
    assert_eq!(
        unsafe { selfi_model_read(ptr::null(), &mut m) },
        SelfiStatus::NullPointer
    );
}

#[test]
fn model_matches_library() {
    for mode in [Mode::FullSelfi, Mode::BaselineVisual] {
        let (f, ck, ds) = files(mode);
        let mut m = ptr::null_mut();
        assert_eq!(
            unsafe { selfi_model_read(cpath(&f.model).as_ptr(), &mut m) },
            SelfiStatus::Ok
        );

        let mut info_mode = SelfiMode::IdentityProbe;
        let (mut a, mut b, mut c) = (0, 0, 0);
        assert_eq!(
            unsafe { selfi_model_info(m, &mut info_mode, &mut a, &mut b, &mut c) },
            SelfiStatus::Ok
        );
        assert_eq!(info_mode, SelfiMode::from(mode));
        assert_eq!((a, b, c), (6, 5, 3));

        let s = &ds.samples[3];
        let (mut score, mut rho) = (f64::NAN, 0.0);
        let st = unsafe {
            selfi_model_predict(
                m,
                s.f_id.as_slice().as_ptr(),
                6,
                s.f_vis.as_slice().as_ptr(),
                5,
                &mut score,
                &mut rho,
            )
        };
        assert_eq!(st, SelfiStatus::Ok);
        let t = run(&ck.params, s, &ck.config.model).unwrap();
        assert_eq!(score, t.score());
        match t.rho {
            Some(r) => assert_eq!(rho, r),
            None => assert!(rho.is_nan()),
        }

        let st = unsafe {
            selfi_model_predict(
                m,
                s.f_id.as_slice().as_ptr(),
                5,
                s.f_vis.as_slice().as_ptr(),
                5,
                &mut score,
                ptr::null_mut(),
            )
        };
        assert_eq!(st, SelfiStatus::DimMismatch);

        let mut h = ptr::null_mut();
        assert_eq!(
            unsafe { selfi_dataset_read(cpath(&f.data).as_ptr(), &mut h) },
            SelfiStatus::Ok
        );
        let (mut frame, mut video) = (f64::NAN, f64::NAN);
        assert_eq!(
            unsafe { selfi_model_evaluate(m, h, &mut frame, &mut video) },
            SelfiStatus::Ok
        );
        let ev = evaluate(&ck.params, &ck.config.model, &ds.samples).unwrap();
        assert_eq!(frame, ev.frame_auc);
        assert_eq!(video, ev.video_auc.unwrap());

        unsafe {
            selfi_dataset_free(h);
            selfi_model_free(m);
        }
    }
}

/// `libselfi_ffi.a` of the profile running this test: cargo builds it next
/// to the test binary in `deps/` and copies it one level up on `cargo build`.
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    [deps, deps.parent().unwrap()]
        .iter()
        .map(|d| d.join("libselfi_ffi.a"))
        .find(|p| p.exists())
        .unwrap_or_else(|| deps.join("libselfi_ffi.a"))
}

#[test]
fn c_program_links_against_header_and_static_lib() {
    let lib = static_lib();
    if which_cc().is_none() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let (f, ck, ds) = files(Mode::FullSelfi);
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = f.data.with_file_name("smoke");
    let status = Command::new(which_cc().unwrap())
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");

    let out = Command::new(&exe).arg(&f.data).arg(&f.model).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = text.split_whitespace().collect();
    assert_eq!(fields[0].parse::<usize>().unwrap(), ds.len());
    assert_eq!(fields[1..3], ["6", "5"]);
    let ev = evaluate(&ck.params, &ck.config.model, &ds.samples).unwrap();
    assert_eq!(fields[3].parse::<f64>().unwrap(), ev.frame_auc);
}

fn which_cc() -> Option<&'static str> {
    ["cc", "gcc", "clang"].into_iter().find(|c| {
        Command::new(c)
            .arg("--version")
            .output()
            .is_ok_and(|o| o.status.success())
    })
}
