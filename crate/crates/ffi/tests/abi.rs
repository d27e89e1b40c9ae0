use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use georom::ae::model::{FIELD_DIM, LATENT_DIM};
use georom::ae::{decode_plain, AeParams, Checkpoint};
use georom::ndnum::Tensor;
use georom::node::VectorFieldParams;
use georom_ffi::*;

fn save(path: &Path, arrays: Vec<(String, Tensor)>) {
    Checkpoint {
        method: "vanilla".into(),
        seed: 1,
        epoch: 1,
        arrays,
        val_curve: vec![1.0],
    }
    .save(path)
    .unwrap();
}

struct Fixture {
    _dir: tempfile::TempDir,
    ae: CString,
    node: CString,
    params: AeParams,
}

fn fixture(vf: VectorFieldParams) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let params = AeParams::init(3);
    let ae = dir.path().join("ae.ckpt");
    let node = dir.path().join("node.ckpt");
    save(&ae, params.named());
    save(&node, vf.named());
    Fixture {
        ae: CString::new(ae.to_str().unwrap()).unwrap(),
        node: CString::new(node.to_str().unwrap()).unwrap(),
        _dir: dir,
        params,
    }
}

fn load(f: &Fixture) -> *mut GeoromModel {
    let mut m = ptr::null_mut();
    let s = unsafe { georom_model_load(f.ae.as_ptr(), f.node.as_ptr(), &mut m) };
    assert_eq!(s, GeoromStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        georom_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn dims_and_version() {
    assert_eq!(georom_field_dim(), FIELD_DIM);
    assert_eq!(georom_latent_dim(), LATENT_DIM);
    let v = unsafe { CStr::from_ptr(georom_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn decode_matches_library() {
    let f = fixture(VectorFieldParams::zeros());
    let m = load(&f);
    let z: Vec<f64> = (0..LATENT_DIM).map(|i| 0.1 * i as f64 - 0.5).collect();
    let mut out = vec![0.0; FIELD_DIM];
    let s = unsafe { georom_model_decode(m, z.as_ptr(), z.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(s, GeoromStatus::Ok);
    let want = decode_plain(&f.params, &Tensor::new(vec![1, 4, 4], z.clone()).unwrap()).unwrap();
    assert_eq!(out, want.data());

    let mut back = vec![0.0; LATENT_DIM];
    let s = unsafe { georom_model_encode(m, out.as_ptr(), out.len(), back.as_mut_ptr(), back.len()) };
    assert_eq!(s, GeoromStatus::Ok);
    assert!(back.iter().all(|v| v.is_finite()));

    let mut g = 0.0;
    let s = unsafe { georom_model_decoder_gain(m, z.as_ptr(), z.len(), 10, &mut g) };
    assert_eq!(s, GeoromStatus::Ok);
    assert!(g > 0.0 && g.is_finite());
    unsafe { georom_model_free(m) };
}

#[test]
fn zero_field_rollout_stays_put() {
    let f = fixture(VectorFieldParams::zeros());
    let m = load(&f);
    let z0: Vec<f64> = (0..LATENT_DIM).map(|i| i as f64).collect();
    let times = [0.0, 0.1, 0.25, 0.3];
    let mut out = vec![f64::NAN; times.len() * LATENT_DIM];
    let mu = [0.03, 0.5, 0.5];
    let s = unsafe {
        georom_model_rollout(m, mu.as_ptr(), z0.as_ptr(), z0.len(), times.as_ptr(), times.len(), out.as_mut_ptr(), out.len())
    };
    assert_eq!(s, GeoromStatus::Ok);
    for chunk in out.chunks(LATENT_DIM) {
        assert_eq!(chunk, z0.as_slice());
    }
    // decreasing times are rejected by the integrator
    let bad = [0.0, 0.2, 0.1];
    let s = unsafe {
        georom_model_rollout(m, mu.as_ptr(), z0.as_ptr(), z0.len(), bad.as_ptr(), bad.len(), out.as_mut_ptr(), bad.len() * LATENT_DIM)
    };
    assert_eq!(s, GeoromStatus::InvalidArgument);
    unsafe { georom_model_free(m) };
}

#[test]
fn errors_are_reported() {
    let f = fixture(VectorFieldParams::zeros());
    let mut m = ptr::null_mut();
    let missing = CString::new("/nonexistent/ae.ckpt").unwrap();
    let s = unsafe { georom_model_load(missing.as_ptr(), f.node.as_ptr(), &mut m) };
    assert_eq!(s, GeoromStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("/nonexistent/ae.ckpt"));

    // swapped checkpoints fail the shape check
    let s = unsafe { georom_model_load(f.node.as_ptr(), f.ae.as_ptr(), &mut m) };
    assert_eq!(s, GeoromStatus::InvalidArgument);

    let s = unsafe { georom_model_load(ptr::null(), f.node.as_ptr(), &mut m) };
    assert_eq!(s, GeoromStatus::NullPointer);
    assert_eq!(last_error(), "ae_checkpoint is null");

    let m = load(&f);
    let z = vec![0.0; LATENT_DIM - 1];
    let mut out = vec![0.0; FIELD_DIM];
    let s = unsafe { georom_model_decode(m, z.as_ptr(), z.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(s, GeoromStatus::InvalidArgument);
    assert!(last_error().contains("expected 16"));
    let s = unsafe { georom_model_decode(ptr::null(), z.as_ptr(), z.len(), out.as_mut_ptr(), out.len()) };
    assert_eq!(s, GeoromStatus::NullPointer);
    unsafe { georom_model_free(m) };
    unsafe { georom_model_free(ptr::null_mut()) };
}

#[test]
fn truncated_error_copy() {
    let s = unsafe { georom_model_load(ptr::null(), ptr::null(), ptr::null_mut()) };
    assert_eq!(s, GeoromStatus::NullPointer);
    let mut buf = [0x7f as c_char; 4];
    let n = unsafe { georom_last_error(buf.as_mut_ptr(), buf.len()) };
    assert_eq!(n, "out is null".len());
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "out");
}

#[test]
fn signed_rank_through_abi() {
    let d: Vec<f64> = (1..=10).map(f64::from).collect();
    let (mut p, mut def) = (0.0, -1);
    let s = unsafe { georom_signed_rank_test(d.as_ptr(), d.len(), &mut p, &mut def) };
    assert_eq!(s, GeoromStatus::Ok);
    assert_eq!(def, 1);
    assert_eq!(p, 1.0 / 1024.0);

    let z = [0.0; 6];
    let s = unsafe { georom_signed_rank_test(z.as_ptr(), z.len(), &mut p, &mut def) };
    assert_eq!(s, GeoromStatus::Ok);
    assert_eq!(def, 0);

    let few = [1.0, 2.0];
    let s = unsafe { georom_signed_rank_test(few.as_ptr(), few.len(), &mut p, &mut def) };
    assert_eq!(s, GeoromStatus::InvalidArgument);
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/georom.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "georom_model_load",
        "georom_model_free",
        "georom_model_rollout",
        "georom_last_error",
        "GEOROM_STATUS_NULL_POINTER",
    ] {
        assert!(text.contains(f), "{f} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"georom.h\"\nint main(void) { GeoromModel *m = 0; georom_model_free(m); return GEOROM_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
    {
        Ok(st) => assert!(st.success(), "C compiler rejected the header"),
        Err(e) => eprintln!("no C compiler available ({e}); syntax check skipped"),
    }
}
