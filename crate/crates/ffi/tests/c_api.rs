use std::ffi::{CStr, CString};
use std::ptr;

use isocg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let need = unsafe { isocg_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(need >= 1);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

#[test]
fn bundled_sampleset_lookup_and_roofline() {
    let set = isocg_sampleset_bundled();
    unsafe {
        assert_eq!(isocg_sampleset_len(set), 5);
        let mut p = IsocgOperatingPoint {
            gflops: 0.0,
            watts: 0.0,
        };
        let st = isocg_sampleset_find(set, cstr("a15").as_ptr(), 4, 1.6, IsocgProblemClass::OnChip, &mut p);
        assert_eq!(st, IsocgStatus::Ok);
        assert_eq!((p.gflops, p.watts), (2.1, 5.49));

        let mut g = 0.0;
        assert_eq!(
            isocg_roofline_gflops(set, cstr("a7").as_ptr(), 0.25, &mut g),
            IsocgStatus::Ok
        );
        assert!((g - 0.5175).abs() < 1e-12);

        let st = isocg_roofline_gflops(set, cstr("z80").as_ptr(), 0.25, &mut g);
        assert_eq!(st, IsocgStatus::UnknownMachine);
        assert!(last_error().contains("z80"));

        let st = isocg_sampleset_find(set, cstr("a15").as_ptr(), 3, 1.6, IsocgProblemClass::OnChip, &mut p);
        assert_eq!(st, IsocgStatus::NotFound);
        assert_eq!(
            isocg_roofline_gflops(set, ptr::null(), 0.25, &mut g),
            IsocgStatus::NullPointer
        );
        isocg_sampleset_free(set);
        isocg_sampleset_free(ptr::null_mut());
    }
    assert_eq!(isocg_max_onchip_n(2 << 20), 512);
}

#[test]
fn sampleset_save_load_round_trip_and_io_error() {
    let dir = std::env::temp_dir().join(format!("isocg-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = cstr(dir.join("set.csv").to_str().unwrap());
    unsafe {
        let set = isocg_sampleset_bundled();
        assert_eq!(isocg_sampleset_save(set, path.as_ptr()), IsocgStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(isocg_sampleset_load(path.as_ptr(), &mut loaded), IsocgStatus::Ok);
        assert_eq!(isocg_sampleset_len(loaded), isocg_sampleset_len(set));
        isocg_sampleset_free(loaded);
        isocg_sampleset_free(set);

        let mut none = ptr::null_mut();
        let st = isocg_sampleset_load(cstr("/nonexistent/isocg.csv").as_ptr(), &mut none);
        assert_eq!(st, IsocgStatus::Io);
        assert!(none.is_null());
        assert!(!last_error().is_empty());
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn flip_bits_matches_xor() {
    for bit in 0..64u8 {
        let mut out = 0.0;
        assert_eq!(unsafe { isocg_flip_bits(1.0, &bit, 1, &mut out) }, IsocgStatus::Ok);
        assert_eq!(out.to_bits(), 1.0f64.to_bits() ^ (1 << bit));
    }
    let mut out = 0.0;
    assert_eq!(
        unsafe { isocg_flip_bits(1.0, &64u8, 1, &mut out) },
        IsocgStatus::InvalidArgument
    );
}

#[test]
fn cg_solves_hand_system() {
    let a = [4.0, 1.0, 1.0, 3.0];
    let b = [1.0, 2.0];
    let mut x = [0.0; 2];
    let mut r = IsocgSolveResult::default();
    let st = unsafe { isocg_cg_solve(2, a.as_ptr(), b.as_ptr(), ptr::null(), x.as_mut_ptr(), &mut r) };
    assert_eq!(st, IsocgStatus::Ok);
    assert!(r.converged);
    assert!((x[0] - 1.0 / 11.0).abs() < 1e-10 && (x[1] - 7.0 / 11.0).abs() < 1e-10);
    assert_eq!(r.flops, r.iterations as u64 * 8);
}

fn diag_dominant(n: usize) -> (Vec<f64>, Vec<f64>) {
    let a = isocg::linalg::gen_spd_diag_dominant(n, 7);
    let b = (0..n).map(|i| a.row(i).iter().sum()).collect();
    (a.as_slice().to_vec(), b)
}

#[test]
fn sscg_under_faults_is_reproducible() {
    let n = 64;
    let (a, b) = diag_dominant(n);
    let mut opts = isocg_solve_options_default();
    opts.fault.rate = 0.1;
    opts.fault.seed = 3;
    let run = || {
        let mut x = vec![0.0; n];
        let mut r = IsocgSolveResult::default();
        let st = unsafe { isocg_sscg_solve(n, a.as_ptr(), b.as_ptr(), &opts, x.as_mut_ptr(), &mut r) };
        (st, x, r)
    };
    let (st, x, r) = run();
    assert_eq!(st, IsocgStatus::Ok);
    assert!(r.converged && r.true_relative_residual <= 1e-8);
    assert!(r.gemv_flops >= r.flops);
    let (_, x2, r2) = run();
    assert_eq!(r, r2);
    assert!(x.iter().zip(&x2).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-6));
}

#[test]
fn solve_rejects_bad_arguments() {
    let a = [1.0];
    let b = [1.0];
    let mut x = [0.0];
    let mut r = IsocgSolveResult::default();
    unsafe {
        assert_eq!(
            isocg_cg_solve(0, a.as_ptr(), b.as_ptr(), ptr::null(), x.as_mut_ptr(), &mut r),
            IsocgStatus::InvalidArgument
        );
        assert_eq!(
            isocg_cg_solve(1, ptr::null(), b.as_ptr(), ptr::null(), x.as_mut_ptr(), &mut r),
            IsocgStatus::NullPointer
        );
        let mut opts = isocg_solve_options_default();
        opts.ss_period = 0;
        assert_eq!(
            isocg_sscg_solve(1, a.as_ptr(), b.as_ptr(), &opts, x.as_mut_ptr(), &mut r),
            IsocgStatus::InvalidArgument
        );
        assert!(last_error().contains("ss_period"));
        let mut opts = isocg_solve_options_default();
        opts.fault.rate = 1.5;
        assert_eq!(
            isocg_cg_solve(1, a.as_ptr(), b.as_ptr(), &opts, x.as_mut_ptr(), &mut r),
            IsocgStatus::InvalidArgument
        );
    }
}

#[test]
fn non_finite_fault_reports_divergence() {
    let a = [1.0];
    let b = [1.0];
    let mut opts = isocg_solve_options_default();
    opts.fault.rate = 1.0;
    opts.fault.bit_domain = IsocgBitDomain::Exponent;
    opts.fault.allow_non_finite = true;
    let mut diverged = 0;
    for seed in 0..60 {
        opts.fault.seed = seed;
        let mut x = [0.0];
        let mut r = IsocgSolveResult::default();
        let st = unsafe { isocg_cg_solve(1, a.as_ptr(), b.as_ptr(), &opts, x.as_mut_ptr(), &mut r) };
        if st == IsocgStatus::Diverged {
            diverged += 1;
            assert!(r.fault_events >= 1);
        }
    }
    assert!(diverged > 0);
}

#[test]
fn hybrid_and_breakeven() {
    let h = IsocgHybrid {
        reliable: IsocgOperatingPoint {
            gflops: 2.1,
            watts: 5.49,
        },
        unreliable: IsocgOperatingPoint {
            gflops: 0.38,
            watts: 0.1413,
        },
        ss_fraction: 0.1,
        composition: IsocgComposition::WorkWeighted,
    };
    let reference = h.reliable;
    let mut out = IsocgIsoResult::default();
    unsafe {
        let st = isocg_solve_hybrid(IsocgIsoMode::Performance, reference, 2 << 20, &h, 512 << 10, &mut out);
        assert_eq!(st, IsocgStatus::Ok);
        assert!((out.cluster_count - 5.5263).abs() < 1e-3);
        assert!((out.gflops - 2.1).abs() < 1e-12);

        let st = isocg_solve_hybrid(IsocgIsoMode::Capacity, reference, 2 << 20, &h, 512 << 10, &mut out);
        assert_eq!(st, IsocgStatus::Ok);
        assert_eq!(out.cluster_count, 4.0);

        let tiny = IsocgOperatingPoint {
            gflops: 0.1,
            watts: 0.1,
        };
        let st = isocg_solve_hybrid(IsocgIsoMode::Performance, tiny, 1, &h, 1, &mut out);
        assert_eq!(st, IsocgStatus::Infeasible);

        let mut d = 0.0;
        let hp = IsocgOperatingPoint {
            gflops: 2.1,
            watts: 5.49 / 4.0,
        };
        assert_eq!(isocg_breakeven_degradation(reference, hp, &mut d), IsocgStatus::Ok);
        assert!((d - 3.0).abs() < 1e-12);
        let worse = IsocgOperatingPoint {
            gflops: 1.0,
            watts: 10.0,
        };
        assert_eq!(
            isocg_breakeven_degradation(reference, worse, &mut d),
            IsocgStatus::NoBreakEven
        );
    }
    assert!((isocg_ets(2.1e9, 2.1, 5.49) - 5.49).abs() < 1e-12);
}

#[test]
fn status_names_are_static() {
    let name = unsafe { CStr::from_ptr(isocg_status_name(IsocgStatus::Diverged)) };
    assert_eq!(name.to_str().unwrap(), "diverged");
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/isocg.h")).unwrap();
    for sym in [
        "typedef struct IsocgSampleSet IsocgSampleSet;",
        "ISOCG_STATUS_OK = 0",
        "isocg_last_error(",
        "isocg_sampleset_load(",
        "isocg_sampleset_free(",
        "isocg_cg_solve(",
        "isocg_sscg_solve(",
        "isocg_solve_hybrid(",
        "isocg_breakeven_degradation(",
        "isocg_flip_bits(",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}
