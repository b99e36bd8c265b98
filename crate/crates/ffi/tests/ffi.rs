use std::ffi::CString;
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use span_rl::bspline::SplineBasis;
use span_rl::checkpoint::Checkpoint;
use span_rl::envs::{Env, EnvKind};
use span_rl::net::{Arch, Net};
use span_rl_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { span_rl_last_error(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

#[test]
fn bspline_matches_library() {
    let basis = SplineBasis::new(3, 4).unwrap();
    let mut out = [0.0; 7];
    for &x in &[0.0, 0.13, 0.5, 0.999, 1.0] {
        let st = unsafe { span_rl_bspline_eval(3, 4, x, out.as_mut_ptr(), out.len()) };
        assert_eq!(st, SpanRlStatus::Ok);
        assert_eq!(out.to_vec(), basis.eval_basis(x).unwrap());
    }
}

#[test]
fn bspline_rejects_bad_input() {
    let mut out = [0.0; 7];
    let st = unsafe { span_rl_bspline_eval(3, 4, 1.5, out.as_mut_ptr(), out.len()) };
    assert_eq!(st, SpanRlStatus::Domain);
    assert!(!last_error().is_empty());

    let st = unsafe { span_rl_bspline_eval(3, 4, 0.5, out.as_mut_ptr(), 6) };
    assert_eq!(st, SpanRlStatus::Dimension);

    let st = unsafe { span_rl_bspline_eval(3, 4, 0.5, ptr::null_mut(), 7) };
    assert_eq!(st, SpanRlStatus::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn last_error_truncates_and_reports_length() {
    unsafe { span_rl_bspline_eval(3, 4, 0.5, ptr::null_mut(), 7) };
    let full = last_error();
    let mut small = [0x7fu8; 4];
    let n = unsafe { span_rl_last_error(small.as_mut_ptr().cast(), small.len()) };
    assert_eq!(n, full.len());
    assert_eq!(&small[..3], &full.as_bytes()[..3]);
    assert_eq!(small[3], 0);
    assert_eq!(unsafe { span_rl_last_error(ptr::null_mut(), 0) }, full.len());
}

#[test]
fn span_net_forward_matches_library() {
    let mut h = ptr::null_mut();
    let st = unsafe { span_rl_span_net_new(4, 2, 3, 2, 1, 9, &mut h) };
    assert_eq!(st, SpanRlStatus::Ok);

    let arch = Arch::Span { nmodes: 3, nelems: 2, degree: 1 };
    let reference = Net::build(&arch, 4, 2, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut cache = reference.new_cache();

    let (mut i, mut o, mut p) = (0, 0, 0);
    assert_eq!(unsafe { span_rl_net_shape(h, &mut i, &mut o, &mut p) }, SpanRlStatus::Ok);
    assert_eq!((i, o, p), (4, 2, reference.num_params()));

    let s = [0.1, -0.4, 2.0, 0.0];
    let mut y = [0.0; 2];
    let st = unsafe { span_rl_net_forward(h, s.as_ptr(), 4, y.as_mut_ptr(), 2) };
    assert_eq!(st, SpanRlStatus::Ok);
    assert_eq!(y.to_vec(), reference.forward(&s, &mut cache).unwrap().to_vec());

    let st = unsafe { span_rl_net_forward(h, s.as_ptr(), 3, y.as_mut_ptr(), 2) };
    assert_eq!(st, SpanRlStatus::Dimension);
    unsafe { span_rl_net_free(h) };
    unsafe { span_rl_net_free(ptr::null_mut()) };
}

#[test]
fn invalid_architecture_is_rejected() {
    let mut h = ptr::null_mut();
    let st = unsafe { span_rl_span_net_new(4, 2, 3, 2, 99, 0, &mut h) };
    assert_ne!(st, SpanRlStatus::Ok);
    assert!(h.is_null());
    let st = unsafe { span_rl_span_net_new(4, 2, 3, 2, 1, 0, ptr::null_mut()) };
    assert_eq!(st, SpanRlStatus::NullPointer);
}

#[test]
fn load_network_from_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let arch = Arch::Span { nmodes: 2, nelems: 3, degree: 2 };
    let net = Net::build(&arch, 3, 1, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut ck = Checkpoint::new();
    ck.insert_net("actor", &net);
    ck.save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let role = CString::new("actor").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { span_rl_net_load(cpath.as_ptr(), role.as_ptr(), &mut h) }, SpanRlStatus::Ok);
    let s = [0.3, -1.0, 0.7];
    let mut y = [0.0];
    assert_eq!(unsafe { span_rl_net_forward(h, s.as_ptr(), 3, y.as_mut_ptr(), 1) }, SpanRlStatus::Ok);
    let mut cache = net.new_cache();
    assert_eq!(y[0], net.forward(&s, &mut cache).unwrap()[0]);
    unsafe { span_rl_net_free(h) };

    let missing = CString::new("critic").unwrap();
    let mut h2 = ptr::null_mut();
    let st = unsafe { span_rl_net_load(cpath.as_ptr(), missing.as_ptr(), &mut h2) };
    assert_ne!(st, SpanRlStatus::Ok);
    assert!(h2.is_null());

    let nowhere = CString::new(dir.path().join("none.bin").to_str().unwrap()).unwrap();
    let st = unsafe { span_rl_net_load(nowhere.as_ptr(), role.as_ptr(), &mut h2) };
    assert_eq!(st, SpanRlStatus::Io);
}

#[test]
fn environment_round_trip_matches_library() {
    let name = CString::new("CartPole-v1").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { span_rl_env_new(name.as_ptr(), &mut h) }, SpanRlStatus::Ok);

    let (mut sd, mut na, mut ad, mut bound) = (0, 0, 0, 0.0);
    assert_eq!(unsafe { span_rl_env_spec(h, &mut sd, &mut na, &mut ad, &mut bound) }, SpanRlStatus::Ok);
    assert_eq!((sd, na), (4, 2));

    let mut reference = Env::new(EnvKind::parse("CartPole-v1").unwrap());
    let mut obs = [0.0; 4];
    assert_eq!(unsafe { span_rl_env_reset(h, 5, obs.as_mut_ptr(), 4) }, SpanRlStatus::Ok);
    assert_eq!(obs.to_vec(), reference.reset(5));

    let (mut r, mut term, mut trunc) = (0.0, false, false);
    for t in 0..10 {
        let a = [(t % 2) as f64];
        let st = unsafe {
            span_rl_env_step(h, a.as_ptr(), 1, obs.as_mut_ptr(), 4, &mut r, &mut term, &mut trunc)
        };
        assert_eq!(st, SpanRlStatus::Ok);
        let want = reference.step(&span_rl::envs::Action::Discrete(t % 2)).unwrap();
        assert_eq!(obs.to_vec(), want.next_state);
        assert_eq!((r, term, trunc), (want.reward, want.terminated, want.truncated));
    }

    let bad = [0.5];
    let st = unsafe {
        span_rl_env_step(h, bad.as_ptr(), 1, obs.as_mut_ptr(), 4, &mut r, &mut term, &mut trunc)
    };
    assert_eq!(st, SpanRlStatus::InvalidArgument);
    unsafe { span_rl_env_free(h) };
}

#[test]
fn environment_errors() {
    let name = CString::new("MountainCar-v0").unwrap();
    let mut h = ptr::null_mut();
    assert_ne!(unsafe { span_rl_env_new(name.as_ptr(), &mut h) }, SpanRlStatus::Ok);
    assert!(h.is_null());
    assert_eq!(unsafe { span_rl_env_new(ptr::null(), &mut h) }, SpanRlStatus::NullPointer);

    let name = CString::new("Pendulum-v1").unwrap();
    assert_eq!(unsafe { span_rl_env_new(name.as_ptr(), &mut h) }, SpanRlStatus::Ok);
    let (mut sd, mut na, mut ad, mut bound) = (0, 0, 0, 0.0);
    unsafe { span_rl_env_spec(h, &mut sd, &mut na, &mut ad, &mut bound) };
    assert_eq!((sd, na, ad, bound), (3, 0, 1, 2.0));
    let mut obs = [0.0; 3];
    let (mut r, mut term, mut trunc) = (0.0, false, false);
    let a = [0.0];
    let st = unsafe { span_rl_env_step(h, a.as_ptr(), 1, obs.as_mut_ptr(), 3, &mut r, &mut term, &mut trunc) };
    assert_eq!(st, SpanRlStatus::Protocol, "step before reset");
    unsafe { span_rl_env_free(h) };
}

#[test]
fn sustained_solve_step_window() {
    let steps: Vec<u64> = (1..=8).map(|k| k * 1000).collect();
    let means = [10.0, 200.0, 480.0, 500.0, 495.0, 499.0, 490.0, 500.0];
    let (mut step, mut found) = (0u64, false);
    let st = unsafe {
        span_rl_sustained_solve_step(steps.as_ptr(), means.as_ptr(), 8, 475.0, &mut step, &mut found)
    };
    assert_eq!(st, SpanRlStatus::Ok);
    assert!(found);
    assert_eq!(step, 3000);

    let st = unsafe {
        span_rl_sustained_solve_step(steps.as_ptr(), means.as_ptr(), 8, 999.0, &mut step, &mut found)
    };
    assert_eq!(st, SpanRlStatus::Ok);
    assert!(!found);

    let st = unsafe {
        span_rl_sustained_solve_step(ptr::null(), means.as_ptr(), 8, 0.0, &mut step, &mut found)
    };
    assert_eq!(st, SpanRlStatus::NullPointer);
}

fn library_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let include = manifest.join("include");
    let lib_dir = library_dir();
    assert!(lib_dir.join("libspan_rl_ffi.so").exists(), "cdylib not found in {}", lib_dir.display());

    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/smoke.c"))
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lspan_rl_ffi")
        .arg("-lm")
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());

    let run = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "ok");
}
