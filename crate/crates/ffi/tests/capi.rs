use std::ffi::{CStr, CString};
use std::ptr;

use metats_ffi::*;

fn last_error() -> String {
    let p = metats_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn meta_update_matches_one_dimensional_marginal() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(metats_meta_new(1.0, 1, 1.0, 1.0, &mut h), MetatsStatus::Ok);
        let x = [1.0];
        let y = [1.5];
        assert_eq!(metats_meta_update(h, x.as_ptr(), y.as_ptr(), 1), MetatsStatus::Ok);
        let mut mean = [0.0];
        let mut prec = [0.0];
        assert_eq!(metats_meta_mean(h, mean.as_mut_ptr(), 1), MetatsStatus::Ok);
        assert_eq!(metats_meta_precision(h, prec.as_mut_ptr(), 1), MetatsStatus::Ok);
        // Marginal y ~ N(μ, σ² + σ₀² + σ_q²) = N(μ, 3); Λ = 1 + 1/2, b = 1.5/2.
        assert!((prec[0] - 1.5).abs() < 1e-12);
        assert!((mean[0] - 0.5).abs() < 1e-12);
        metats_meta_free(h);
    }
}

#[test]
fn precision_is_row_major_and_symmetric() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(metats_meta_new(0.5, 2, 0.1, 0.2, &mut h), MetatsStatus::Ok);
        let x = [1.0, 0.3, 0.2, 0.9, 0.5, 0.5];
        let y = [0.4, 0.6, 0.5];
        assert_eq!(metats_meta_update(h, x.as_ptr(), y.as_ptr(), 3), MetatsStatus::Ok);
        let mut p = [0.0; 4];
        assert_eq!(metats_meta_precision(h, p.as_mut_ptr(), 4), MetatsStatus::Ok);
        assert!((p[1] - p[2]).abs() < 1e-12);
        assert!(p[0] > 2.0 && p[3] > 2.0);
        metats_meta_free(h);
    }
}

#[test]
fn sampled_prior_mean_is_reproducible() {
    unsafe {
        let mut h = ptr::null_mut();
        metats_meta_new(0.3, 3, 0.02, 0.05, &mut h);
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        metats_meta_sample_prior_mean(h, 9, a.as_mut_ptr(), 3);
        metats_meta_sample_prior_mean(h, 9, b.as_mut_ptr(), 3);
        assert_eq!(a, b);
        let mut c = [0.0; 3];
        metats_meta_sample_prior_mean(h, 10, c.as_mut_ptr(), 3);
        assert_ne!(a, c);
        metats_meta_free(h);
    }
}

#[test]
fn short_output_buffer_is_rejected() {
    unsafe {
        let mut h = ptr::null_mut();
        metats_meta_new(1.0, 3, 1.0, 1.0, &mut h);
        let mut out = [0.0; 2];
        assert_eq!(metats_meta_mean(h, out.as_mut_ptr(), 2), MetatsStatus::DimensionMismatch);
        assert!(last_error().contains("need 3"));
        metats_meta_free(h);
    }
}

#[test]
fn null_handles_report_null_pointer() {
    unsafe {
        let mut out = [0.0; 1];
        assert_eq!(metats_meta_mean(ptr::null(), out.as_mut_ptr(), 1), MetatsStatus::NullPointer);
        assert!(last_error().contains("handle"));
        let mut w = 0usize;
        assert_eq!(metats_agent_select(ptr::null_mut(), 0, &mut w), MetatsStatus::NullPointer);
        assert_eq!(metats_meta_new(1.0, 1, 1.0, 1.0, ptr::null_mut()), MetatsStatus::NullPointer);
        metats_meta_free(ptr::null_mut());
        metats_agent_free(ptr::null_mut());
        metats_config_free(ptr::null_mut());
    }
}

#[test]
fn invalid_variance_is_an_argument_error() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(metats_meta_new(-1.0, 2, 1.0, 1.0, &mut h), MetatsStatus::InvalidArgument);
        assert!(h.is_null());
    }
}

#[test]
fn agent_learns_the_better_waveform() {
    unsafe {
        let prior = [0.0; 3];
        let mut a = ptr::null_mut();
        assert_eq!(metats_agent_new(prior.as_ptr(), 3, 1.0, 2, 1, 0.01, 3, &mut a), MetatsStatus::Ok);
        let mut picks = [0usize; 2];
        for t in 0..300 {
            let mut w = 0usize;
            assert_eq!(metats_agent_select(a, 0, &mut w), MetatsStatus::Ok);
            let loss = if w == 1 { 0.9 } else { 0.2 };
            assert_eq!(metats_agent_record(a, 0, w, loss), MetatsStatus::Ok);
            if t >= 200 {
                picks[w] += 1;
            }
        }
        assert!(picks[1] > 90, "{picks:?}");
        let mut mean = [0.0; 3];
        assert_eq!(metats_agent_posterior_mean(a, mean.as_mut_ptr(), 3), MetatsStatus::Ok);
        assert!(mean.iter().all(|v| v.is_finite()));
        metats_agent_free(a);
    }
}

#[test]
fn agent_rejects_out_of_range_indices() {
    unsafe {
        let prior = [0.0; 3];
        let mut a = ptr::null_mut();
        metats_agent_new(prior.as_ptr(), 3, 1.0, 2, 1, 0.01, 0, &mut a);
        assert_ne!(metats_agent_record(a, 0, 5, 0.5), MetatsStatus::Ok);
        assert_ne!(metats_agent_record(a, 0, 0, 1.5), MetatsStatus::Ok);
        let mut w = 0usize;
        assert_ne!(metats_agent_select(a, 3, &mut w), MetatsStatus::Ok);
        metats_agent_free(a);
    }
}

#[test]
fn loss_and_bound_wrappers() {
    assert_eq!(metats_compute_loss(5.0, 10.0), 0.5);
    assert_eq!(metats_compute_loss(50.0, 10.0), 1.0);
    let mut v = 0.0;
    unsafe {
        assert_eq!(metats_pac_bayes_single(0.0, 100, 0.05, 0.0, &mut v), MetatsStatus::Ok);
        assert!((v - (2000f64.ln() / 198.0).sqrt()).abs() < 1e-12);
        assert_eq!(metats_pac_bayes_single(0.0, 0, 0.05, 0.0, &mut v), MetatsStatus::InvalidArgument);
    }
}

#[test]
fn config_run_writes_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.cfg");
    std::fs::write(&cfg_path, "mode = synthetic\npolicies = meta-ts\n").unwrap();
    let out = dir.path().join("out");
    let c_cfg = CString::new(cfg_path.to_str().unwrap()).unwrap();
    let c_out = CString::new(out.to_str().unwrap()).unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(metats_config_load(c_cfg.as_ptr(), &mut cfg), MetatsStatus::Ok);
        let seeds = [0u64, 1];
        assert_eq!(metats_config_set_scale(cfg, 3, 10, seeds.as_ptr(), 2), MetatsStatus::Ok);
        assert_eq!(metats_run(cfg, c_out.as_ptr()), MetatsStatus::Ok);
        metats_config_free(cfg);
    }
    let tracks = std::fs::read_to_string(out.join("tracks.csv")).unwrap();
    assert_eq!(tracks.lines().count(), 1 + 2 * 3);
    let cpis = std::fs::read_to_string(out.join("cpi.csv")).unwrap();
    assert_eq!(cpis.lines().count(), 1 + 2 * 3 * 10);
}

#[test]
fn bad_config_reports_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    std::fs::write(&p, "m = 3\nbogus_key = 1\n").unwrap();
    let c = CString::new(p.to_str().unwrap()).unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(metats_config_load(c.as_ptr(), &mut cfg), MetatsStatus::Parse);
        assert!(cfg.is_null());
        assert!(last_error().contains("line 2"), "{}", last_error());
    }
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/metats.h")).unwrap();
    for name in [
        "metats_last_error",
        "metats_meta_new",
        "metats_meta_update",
        "metats_meta_mean",
        "metats_meta_precision",
        "metats_meta_sample_prior_mean",
        "metats_meta_free",
        "metats_agent_new",
        "metats_agent_select",
        "metats_agent_record",
        "metats_agent_posterior_mean",
        "metats_agent_free",
        "metats_compute_loss",
        "metats_pac_bayes_single",
        "metats_config_load",
        "metats_config_set_scale",
        "metats_run",
        "metats_config_free",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
