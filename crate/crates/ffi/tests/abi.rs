use std::ffi::{CStr, CString};
use std::ptr;

use lmnet_ffi::*;

fn last_error() -> String {
    let p = lmnet_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn scheme(name: &str) -> *mut LmnetScheme {
    let name = CString::new(name).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { lmnet_scheme_catalog(name.as_ptr(), &mut s) }, LmnetStatus::Ok);
    s
}

fn system(json: &str) -> *mut LmnetSystem {
    let json = CString::new(json).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { lmnet_system_from_json(json.as_ptr(), &mut s) },
        LmnetStatus::Ok
    );
    s
}

#[test]
fn catalog_scheme_properties() {
    let s = scheme("BDF2");
    unsafe {
        assert_eq!(lmnet_scheme_steps(s), 2);
        assert_eq!(lmnet_scheme_order(s), 2);
        let mut xi = [0.0; 3];
        assert_eq!(lmnet_xi_coefficients(s, 2, xi.as_mut_ptr()), LmnetStatus::Ok);
        assert!((xi[0] - 1.0).abs() < 1e-14);
        assert!(xi[1].abs() < 1e-14);
        assert!(xi[2].abs() > 1e-3);
        lmnet_scheme_free(s);
    }
}

#[test]
fn euler_xi_matches_known_values() {
    let s = scheme("AB1");
    let mut xi = [0.0; 3];
    unsafe {
        assert_eq!(lmnet_xi_coefficients(s, 2, xi.as_mut_ptr()), LmnetStatus::Ok);
        lmnet_scheme_free(s);
    }
    // phi_h(x) - x = h f + h^2/2 Df + h^3/6 D^2 f + ...
    assert!((xi[1] - 0.5).abs() < 1e-14);
    assert!((xi[2] - 1.0 / 6.0).abs() < 1e-14);
}

#[test]
fn custom_scheme_is_normalized() {
    let alphas = [-1.0, 1.0];
    let betas = [0.0, 2.0];
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(
            lmnet_scheme_new(alphas.as_ptr(), betas.as_ptr(), 1, &mut s),
            LmnetStatus::Ok
        );
        assert_eq!(lmnet_scheme_order(s), 0);
        lmnet_scheme_free(s);
    }
}

#[test]
fn errors_are_reported() {
    let name = CString::new("RK9").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { lmnet_scheme_catalog(name.as_ptr(), &mut s) },
        LmnetStatus::UnknownScheme
    );
    assert!(s.is_null());
    assert!(last_error().contains("RK9"));

    assert_eq!(
        unsafe { lmnet_scheme_catalog(ptr::null(), &mut s) },
        LmnetStatus::InvalidArgument
    );

    let zero = [0.0, 0.0];
    let alphas = [-1.0, 1.0];
    assert_eq!(
        unsafe { lmnet_scheme_new(alphas.as_ptr(), zero.as_ptr(), 1, &mut s) },
        LmnetStatus::Contract
    );

    let bad = CString::new("{\"kind\":\"pendulum\"}").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(
        unsafe { lmnet_system_from_json(bad.as_ptr(), &mut sys) },
        LmnetStatus::Parse
    );

    let path = CString::new("/nonexistent/checkpoint.json").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { lmnet_mlp_load(path.as_ptr(), &mut net) }, LmnetStatus::Io);

    let ok = scheme("AB1");
    assert!(lmnet_last_error_message().is_null());
    unsafe { lmnet_scheme_free(ok) };
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        lmnet_scheme_free(ptr::null_mut());
        lmnet_system_free(ptr::null_mut());
        lmnet_mlp_free(ptr::null_mut());
        assert_eq!(lmnet_scheme_steps(ptr::null()), 0);
        assert_eq!(lmnet_system_dim(ptr::null()), 0);
        let mut out = [0.0; 2];
        assert_eq!(
            lmnet_system_eval(ptr::null(), out.as_ptr(), 2, out.as_mut_ptr()),
            LmnetStatus::InvalidArgument
        );
    }
}

#[test]
fn linear_system_eval_and_flow() {
    let sys = system("{\"kind\":\"linear\",\"matrix\":[[0,1],[-1,0]]}");
    unsafe {
        assert_eq!(lmnet_system_dim(sys), 2);
        let x = [1.0, 0.0];
        let mut fx = [0.0; 2];
        assert_eq!(lmnet_system_eval(sys, x.as_ptr(), 2, fx.as_mut_ptr()), LmnetStatus::Ok);
        assert_eq!(fx, [0.0, -1.0]);

        let t = std::f64::consts::FRAC_PI_2;
        let mut y = [0.0; 2];
        assert_eq!(
            lmnet_rk4_flow(sys, x.as_ptr(), 2, t, 200, y.as_mut_ptr()),
            LmnetStatus::Ok
        );
        assert!(y[0].abs() < 1e-9 && (y[1] + 1.0).abs() < 1e-9);

        let mut short = [0.0; 1];
        assert_eq!(
            lmnet_system_eval(sys, x.as_ptr(), 1, short.as_mut_ptr()),
            LmnetStatus::Contract
        );
        lmnet_system_free(sys);
    }
}

#[test]
fn imde_of_euler_on_linear_field() {
    // For f(x) = a x, the K = 1 term for forward Euler is h a^2 x / 2.
    let sys = system("{\"kind\":\"linear\",\"matrix\":[[-2]]}");
    let s = scheme("AB1");
    let x = [1.5];
    let h = 0.1;
    let mut out = [0.0];
    unsafe {
        assert_eq!(
            lmnet_imde_eval(s, sys, 1, x.as_ptr(), 1, h, out.as_mut_ptr()),
            LmnetStatus::Ok
        );
        lmnet_scheme_free(s);
        lmnet_system_free(sys);
    }
    let expected = -2.0 * 1.5 + 0.5 * h * 4.0 * 1.5;
    assert!((out[0] - expected).abs() < 1e-13, "{} vs {expected}", out[0]);
}

#[test]
fn builtin_systems() {
    for (name, dim) in [("damped_oscillator", 2), ("lorenz", 3)] {
        let c = CString::new(name).unwrap();
        let mut sys = ptr::null_mut();
        unsafe {
            assert_eq!(lmnet_system_builtin(c.as_ptr(), &mut sys), LmnetStatus::Ok);
            assert_eq!(lmnet_system_dim(sys), dim);
            lmnet_system_free(sys);
        }
    }
    let c = CString::new("glycolytic").unwrap();
    let mut sys = ptr::null_mut();
    assert_eq!(
        unsafe { lmnet_system_builtin(c.as_ptr(), &mut sys) },
        LmnetStatus::InvalidArgument
    );
}

#[test]
fn mlp_matches_core_forward() {
    let net = lmnet::model::Mlp::new(&[2, 8, 2], 3).unwrap();
    let json = CString::new(serde_json::to_string(&net.to_checkpoint()).unwrap()).unwrap();
    let mut h = ptr::null_mut();
    let x = [0.3, -0.7];
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(lmnet_mlp_from_json(json.as_ptr(), &mut h), LmnetStatus::Ok);
        assert_eq!(lmnet_mlp_input_dim(h), 2);
        assert_eq!(lmnet_mlp_output_dim(h), 2);
        assert_eq!(
            lmnet_mlp_forward(h, x.as_ptr(), 2, out.as_mut_ptr(), 2),
            LmnetStatus::Ok
        );
        assert_eq!(
            lmnet_mlp_forward(h, x.as_ptr(), 3, out.as_mut_ptr(), 2),
            LmnetStatus::Contract
        );
        lmnet_mlp_free(h);
    }
    assert_eq!(out.to_vec(), net.forward(&x).unwrap());
}

#[test]
fn mlp_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.json");
    let net = lmnet::model::Mlp::new(&[3, 4, 3], 9).unwrap();
    net.save(&path).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    let x = [0.1, 0.2, 0.3];
    let mut out = [0.0; 3];
    unsafe {
        assert_eq!(lmnet_mlp_load(c.as_ptr(), &mut h), LmnetStatus::Ok);
        assert_eq!(
            lmnet_mlp_forward(h, x.as_ptr(), 3, out.as_mut_ptr(), 3),
            LmnetStatus::Ok
        );
        lmnet_mlp_free(h);
    }
    assert_eq!(out.to_vec(), net.forward(&x).unwrap());
}
