use std::path::Path;
use std::process::Command;

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lmnet.h");
    std::fs::read_to_string(path).expect("build script writes the header")
}

#[test]
fn header_declares_the_api() {
    let h = header();
    for name in [
        "LMNET_STATUS_OK",
        "LMNET_STATUS_PANIC",
        "typedef struct LmnetScheme LmnetScheme",
        "lmnet_last_error_message",
        "lmnet_scheme_catalog",
        "lmnet_xi_coefficients",
        "lmnet_system_from_json",
        "lmnet_rk4_flow",
        "lmnet_imde_eval",
        "lmnet_mlp_forward",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/lmnet.h");
    let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&path)
        .status()
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    assert!(status.success());
}
