use hpga_core::gradcheck::{gradcheck, REGISTERED, REL_TOL};
use hpga_core::Error;

#[test]
fn every_registered_op_passes() {
    let mut failed = Vec::new();
    for op in REGISTERED {
        let r = gradcheck(op, 5).unwrap();
        println!("{op:24} max_rel_err {:.3e} over {} coords", r.max_rel_err, r.coords_checked);
        if !r.pass {
            failed.push((op, r.max_rel_err));
        }
    }
    assert!(failed.is_empty(), "failing ops: {failed:?}");
}

#[test]
fn identity_is_exact() {
    let r = gradcheck("identity", 10).unwrap();
    assert_eq!(r.max_rel_err, 0.0);
    assert!(r.pass);
}

#[test]
fn unknown_op_is_an_error() {
    assert!(matches!(gradcheck("no_such_op", 1), Err(Error::UnknownOp(_))));
}

#[test]
fn spec_examples() {
    let r = gradcheck("equi_linear", 20).unwrap();
    assert!(r.pass && r.max_rel_err <= REL_TOL);
    let r = gradcheck("gated_gelu", 20).unwrap();
    assert!(r.pass);
}

#[test]
fn layers_use_the_tight_tolerance() {
    use hpga_core::gradcheck::{tolerance, TRAIN_STEP_TOL};
    for op in REGISTERED {
        let want = if op.starts_with("train_step") { TRAIN_STEP_TOL } else { REL_TOL };
        assert_eq!(tolerance(op), want, "{op}");
    }
    assert_eq!(tolerance("unet"), 1e-4);
    assert_eq!(TRAIN_STEP_TOL, 1e-3);
}
