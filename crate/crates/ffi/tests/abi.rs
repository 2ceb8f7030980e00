use std::ffi::{CStr, CString};
use std::ptr;

use ptfon_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ptfon_last_error_message()) }.to_string_lossy().into_owned()
}

fn daylight() -> Vec<f64> {
    (0..48)
        .map(|t| {
            let h = (t as f64 + 0.5) / 2.0;
            if (6.0..18.0).contains(&h) {
                30_000.0 * (std::f64::consts::PI * (h - 6.0) / 12.0).sin()
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn ptf_schedule_round_trip() {
    unsafe {
        let cfg = ptfon_config_reference();
        assert_eq!(ptfon_config_gateways(cfg), 3);
        assert_eq!(ptfon_config_slots_per_frame(cfg), 48);
        let e = daylight();
        let mut s = ptr::null_mut();
        assert_eq!(ptfon_schedule_ptf(cfg, e.as_ptr(), e.len(), &mut s), PtfonStatus::Ok);
        assert_eq!(ptfon_schedule_slots(s), 48);
        assert_eq!(ptfon_schedule_gateways(s), 3);

        let mut flat = vec![0.0; 48];
        assert_eq!(ptfon_flat_power(cfg, e.as_ptr(), e.len(), flat.as_mut_ptr()), PtfonStatus::Ok);
        let mut bits = [0.0; 3];
        for (t, &want_p) in flat.iter().enumerate() {
            let (mut p, mut g, mut tau) = (0.0, 0i64, 0.0);
            assert_eq!(ptfon_schedule_power(s, t, &mut p), PtfonStatus::Ok);
            assert_eq!(p, want_p);
            assert_eq!(ptfon_schedule_gateway(s, t, &mut g), PtfonStatus::Ok);
            assert!((0..3).contains(&g));
            assert_eq!(ptfon_schedule_time(s, t, g as usize, &mut tau), PtfonStatus::Ok);
            assert_eq!(tau, 1800.0);
            let mut r = 0.0;
            assert_eq!(ptfon_rate(cfg, g as usize, p, &mut r), PtfonStatus::Ok);
            bits[g as usize] += r * tau;
        }
        let mut u = 0.0;
        let mut want = 0.0;
        for (n, b) in bits.iter().enumerate() {
            let mut got = 0.0;
            assert_eq!(ptfon_schedule_gateway_bits(s, n, &mut got), PtfonStatus::Ok);
            assert!((got - b).abs() <= 1e-9 * b);
            want += got.log2();
        }
        assert_eq!(ptfon_schedule_utility(s, &mut u), PtfonStatus::Ok);
        assert!((u - want).abs() < 1e-12);

        let mut p = 0.0;
        assert_eq!(ptfon_schedule_power(s, 48, &mut p), PtfonStatus::InvalidInput);
        assert!(last_error().contains("48"));
        ptfon_schedule_free(s);
        ptfon_config_free(cfg);
    }
}

#[test]
fn sgtdma_marks_shared_slots() {
    unsafe {
        let cfg = ptfon_config_reference();
        let e = daylight();
        let mut s = ptr::null_mut();
        assert_eq!(ptfon_schedule_sgtdma(cfg, e.as_ptr(), e.len(), &mut s), PtfonStatus::Ok);
        let mut g = 0;
        assert_eq!(ptfon_schedule_gateway(s, 24, &mut g), PtfonStatus::Ok);
        assert_eq!(g, -1);
        ptfon_schedule_free(s);
        ptfon_config_free(cfg);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let losses = [78.0, 92.0];
        assert_eq!(
            ptfon_config_new(-1.0, 1e-19, 1800.0, 48, losses.as_ptr(), 2, 1e-9, &mut cfg),
            PtfonStatus::InvalidInput
        );
        assert!(cfg.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(
            ptfon_config_new(1e7, 1e-19, 1800.0, 48, ptr::null(), 2, 1e-9, &mut cfg),
            PtfonStatus::NullPointer
        );
        assert_eq!(ptfon_config_new(1e7, 1e-19, 1800.0, 4, losses.as_ptr(), 2, 1e-9, &mut cfg), PtfonStatus::Ok);

        let e = [0.0; 4];
        let mut s = ptr::null_mut();
        assert_eq!(ptfon_schedule_ptf(cfg, e.as_ptr(), 4, &mut s), PtfonStatus::Ok);
        let mut u = 0.0;
        assert_eq!(ptfon_schedule_utility(s, &mut u), PtfonStatus::UtilityUndefined);
        ptfon_schedule_free(s);
        assert_eq!(ptfon_schedule_ptf(cfg, e.as_ptr(), 3, &mut s), PtfonStatus::InvalidInput);
        assert_eq!(ptfon_schedule_ptf(ptr::null(), e.as_ptr(), 4, &mut s), PtfonStatus::NullPointer);
        ptfon_config_free(cfg);

        let mut j = 0.0;
        assert_eq!(ptfon_jain_index([0.0, 0.0].as_ptr(), 2, &mut j), PtfonStatus::UndefinedFairness);
        assert_eq!(ptfon_jain_index([1.0, 1.0].as_ptr(), 2, &mut j), PtfonStatus::Ok);
        assert_eq!(j, 1.0);

        ptfon_config_free(ptr::null_mut());
        ptfon_schedule_free(ptr::null_mut());
        ptfon_kalman_free(ptr::null_mut());
    }
}

#[test]
fn config_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.cfg");
    std::fs::write(&good, "slots_per_frame = 24\ngateway_path_loss_db = 80, 90\n").unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "warp = 9\n").unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        let p = CString::new(good.to_str().unwrap()).unwrap();
        assert_eq!(ptfon_config_from_file(p.as_ptr(), &mut cfg), PtfonStatus::Ok);
        assert_eq!(ptfon_config_slots_per_frame(cfg), 24);
        assert_eq!(ptfon_config_gateways(cfg), 2);
        ptfon_config_free(cfg);

        let p = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(ptfon_config_from_file(p.as_ptr(), &mut cfg), PtfonStatus::Parse);
        assert!(last_error().contains("warp"));
        let p = CString::new(dir.path().join("missing").to_str().unwrap()).unwrap();
        assert_eq!(ptfon_config_from_file(p.as_ptr(), &mut cfg), PtfonStatus::Io);
    }
}

#[test]
fn kalman_and_ssep() {
    let prev = daylight();
    unsafe {
        let mut k = ptr::null_mut();
        assert_eq!(
            ptfon_kalman_new(prev.as_ptr(), 48, 0.0, 0.0, 1.0, 0.0, 1.0, 1e-4, 0, &mut k),
            PtfonStatus::Ok
        );
        // alpha2 = 1 repeats yesterday.
        for t in 0..48 {
            let mut pred = 0.0;
            assert_eq!(ptfon_kalman_step(k, 0.0, prev[t], &mut pred), PtfonStatus::Ok);
            let want = prev[(t + 1) % 48];
            assert!((pred - want).abs() <= 1e-6 * want.max(1.0), "{t}: {pred} vs {want}");
        }
        ptfon_kalman_free(k);
        assert_eq!(
            ptfon_kalman_new(prev.as_ptr(), 47, 0.0, 0.0, 1.0, 0.0, 1.0, 1e-4, 0, &mut k),
            PtfonStatus::InvalidInput
        );

        let mut v = 0.0;
        assert_eq!(ptfon_ssep_predict(10.0, 20.0, &mut v), PtfonStatus::Ok);
        assert!(v > 0.0);
    }
}
