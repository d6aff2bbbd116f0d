use std::ffi::{CStr, CString};
use std::ptr;

use sdmpc_ffi::*;

fn last_error() -> String {
    let p = sdmpc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn double_integrator() -> *mut SdmpcPlant {
    let name = CString::new("double_integrator").unwrap();
    let mut plant = ptr::null_mut();
    let st = unsafe { sdmpc_plant_from_registry(name.as_ptr(), &mut plant) };
    assert_eq!(st, SdmpcStatus::Ok);
    plant
}

#[test]
fn registry_plant_and_lq_constants() {
    let plant = double_integrator();
    unsafe {
        assert_eq!(sdmpc_plant_state_dim(plant), 2);
        assert_eq!(sdmpc_plant_input_dim(plant), 1);
        let mut p = [0.0; 4];
        let mut f = [0.0; 2];
        let mut gamma = 0.0;
        let st = sdmpc_lq_constants(plant, p.as_mut_ptr(), f.as_mut_ptr(), &mut gamma);
        assert_eq!(st, SdmpcStatus::Ok);
        // Closed form for the double integrator with Q = I, R = 1.
        let s3 = 3f64.sqrt();
        for (got, want) in p.iter().zip([s3, 1.0, 1.0, s3]) {
            assert!((got - want).abs() < 1e-8, "{p:?}");
        }
        assert!(
            (f[0] + 1.0).abs() < 1e-8 && (f[1] + s3).abs() < 1e-8,
            "{f:?}"
        );
        assert!((gamma - (1.0 + s3)).abs() < 1e-8);
        sdmpc_plant_free(plant);
    }
}

#[test]
fn unknown_registry_name_reports_config_error() {
    let name = CString::new("pendulum").unwrap();
    let mut plant = ptr::null_mut();
    let st = unsafe { sdmpc_plant_from_registry(name.as_ptr(), &mut plant) };
    assert_ne!(st, SdmpcStatus::Ok);
    assert!(plant.is_null());
    assert!(last_error().contains("pendulum"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut plant = ptr::null_mut();
    assert_eq!(
        unsafe { sdmpc_plant_from_registry(ptr::null(), &mut plant) },
        SdmpcStatus::NullPointer
    );
    assert!(last_error().contains("name"));
    assert_eq!(
        unsafe {
            sdmpc_lq_constants(
                ptr::null(),
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        },
        SdmpcStatus::NullPointer
    );
    unsafe {
        sdmpc_plant_free(ptr::null_mut());
        sdmpc_run_free(ptr::null_mut());
        assert_eq!(sdmpc_plant_state_dim(ptr::null()), 0);
        assert!(sdmpc_run_final_distance(ptr::null()).is_nan());
    }
}

#[test]
fn toml_plant() {
    let text = CString::new(
        "[system]\na = [[1.0]]\nb = [[1.0]]\n[constraints]\ninput_box = [[-1.0, 1.0]]\n",
    )
    .unwrap();
    let mut plant = ptr::null_mut();
    unsafe {
        assert_eq!(
            sdmpc_plant_from_toml(text.as_ptr(), &mut plant),
            SdmpcStatus::Ok
        );
        assert_eq!(sdmpc_plant_state_dim(plant), 1);
        sdmpc_plant_free(plant);
    }
    let bad = CString::new("[experiment]\ndeltas = [-1.0]").unwrap();
    let mut plant = ptr::null_mut();
    assert_eq!(
        unsafe { sdmpc_plant_from_toml(bad.as_ptr(), &mut plant) },
        SdmpcStatus::Config
    );
}

#[test]
fn closed_loop_run() {
    let plant = double_integrator();
    let mut params = sdmpc_mpc_params_default();
    params.delta = 0.5;
    params.horizon_steps = 6;
    let x0 = [0.5, 0.5];
    let mut run = ptr::null_mut();
    unsafe {
        let st = sdmpc_run_mpc(plant, x0.as_ptr(), 2, &params, &mut run);
        assert_eq!(st, SdmpcStatus::Ok, "{}", last_error());
        assert!(sdmpc_run_success(run));
        assert!(sdmpc_run_final_distance(run) <= params.goal_radius);
        let k = sdmpc_run_num_samples(run);
        assert!(k > 1);
        let (mut t, mut v) = (f64::NAN, f64::NAN);
        let mut x = [0.0; 2];
        assert_eq!(
            sdmpc_run_sample(run, 0, &mut t, x.as_mut_ptr(), 2, &mut v),
            SdmpcStatus::Ok
        );
        assert_eq!(t, 0.0);
        assert_eq!(x, x0);
        assert!(v > 0.0);
        assert_eq!(
            sdmpc_run_sample(run, k, &mut t, x.as_mut_ptr(), 2, &mut v),
            SdmpcStatus::InvalidArgument
        );
        assert_eq!(
            sdmpc_run_sample(run, 0, &mut t, x.as_mut_ptr(), 3, &mut v),
            SdmpcStatus::InvalidArgument
        );
        sdmpc_run_free(run);

        let bad = [0.5];
        let mut run = ptr::null_mut();
        assert_ne!(
            sdmpc_run_mpc(plant, bad.as_ptr(), 1, &params, &mut run),
            SdmpcStatus::Ok
        );
        assert!(run.is_null());
        sdmpc_plant_free(plant);
    }
}

#[test]
fn smallest_horizon_matches_direct_runs() {
    let plant = double_integrator();
    let mut params = sdmpc_mpc_params_default();
    params.delta = 0.5;
    let x0 = [0.5, 0.5];
    let mut n = usize::MAX;
    unsafe {
        let st = sdmpc_smallest_horizon(plant, x0.as_ptr(), 2, &params, 20, &mut n);
        assert_eq!(st, SdmpcStatus::Ok, "{}", last_error());
        assert!((1..=20).contains(&n));
        for (steps, expect) in [(n, true), (n - 1, false)] {
            if steps == 0 {
                continue;
            }
            params.horizon_steps = steps;
            let mut run = ptr::null_mut();
            assert_eq!(
                sdmpc_run_mpc(plant, x0.as_ptr(), 2, &params, &mut run),
                SdmpcStatus::Ok
            );
            assert_eq!(sdmpc_run_success(run), expect, "N = {steps}");
            sdmpc_run_free(run);
        }
        sdmpc_plant_free(plant);
    }
}

#[test]
fn condition_and_min_horizon_agree() {
    let gamma = 1.0 + 3f64.sqrt();
    let (m, c, cbar, delta) = (0.01, 0.05, 1.9, 1.0);
    let mut n_bar = 0;
    unsafe {
        assert_eq!(
            sdmpc_min_horizon(gamma, m, c, cbar, delta, &mut n_bar),
            SdmpcStatus::Ok
        );
        let mut cert = SdmpcCertificate::default();
        assert_eq!(
            sdmpc_check_condition(gamma, m, c, cbar, delta, n_bar, &mut cert),
            SdmpcStatus::Ok
        );
        assert!(cert.passes && cert.alpha < 1.0);
        assert_eq!(cert.n, n_bar);
        assert!((cert.horizon - n_bar as f64 * delta).abs() < 1e-12);
        if n_bar > 1 {
            sdmpc_check_condition(gamma, m, c, cbar, delta, n_bar - 1, &mut cert);
            assert!(!cert.passes);
        }
        assert_ne!(
            sdmpc_check_condition(gamma, m, c, cbar, -1.0, 3, &mut cert),
            SdmpcStatus::Ok
        );
        assert_eq!(
            sdmpc_min_horizon(gamma, m, c, cbar, delta, ptr::null_mut()),
            SdmpcStatus::NullPointer
        );
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(sdmpc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
