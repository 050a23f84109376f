use hpga_core::nn::equivariance::{act, random_motion, random_stack, relative_error, suite};
use hpga_core::nn::{equi_layernorm, equi_linear, gated_gelu, mv_attention, mv_attention_weights, EquiLinearParams};
use hpga_core::pga::Multivector;
use hpga_core::MvStack;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn all_layers_commute_with_rigid_motions() {
    let results = suite(100, 11).unwrap();
    for r in &results {
        println!("{:20} {:.3e}", r.layer, r.max_rel_err);
    }
    assert!(results.iter().all(|r| r.pass), "{results:?}");
}

#[test]
fn equi_linear_identity_and_e0() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_stack(&mut rng, 2, 1);
    let id = EquiLinearParams::new(1, 1, vec![1.0; 5], vec![0.0; 4]).unwrap();
    assert_eq!(equi_linear(&id, &x).unwrap(), x);

    let mut v = vec![0.0; 4];
    v[0] = 2.5;
    let p = EquiLinearParams::new(1, 1, vec![0.0; 5], v).unwrap();
    let s = MvStack::from_multivectors(1, 1, &[Multivector::scalar(3.0)]).unwrap();
    let out = equi_linear(&p, &s).unwrap();
    assert_eq!(out.get(0, 0), Multivector::blade(1) * 7.5);
}

#[test]
fn attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_stack(&mut rng, 1, 2);
    let k = random_stack(&mut rng, 1, 2);
    let v = random_stack(&mut rng, 1, 2);
    let o = mv_attention(&q, &k, &v, 1).unwrap();
    assert!(o.max_abs_diff(&v) < 1e-15);

    let q = random_stack(&mut rng, 1, 2);
    let k1 = random_stack(&mut rng, 1, 2);
    let mut kd = k1.data().to_vec();
    kd.extend_from_slice(k1.data());
    let k = MvStack::new(2, 2, kd).unwrap();
    let v = random_stack(&mut rng, 2, 2);
    let w = mv_attention_weights(&q, &k, 1).unwrap();
    assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    let o = mv_attention(&q, &k, &v, 1).unwrap();
    for c in 0..2 {
        let mean = (v.get(0, c) + v.get(1, c)) * 0.5;
        assert!((o.get(0, c) - mean).coeff_norm() < 1e-12);
    }
}

#[test]
fn gated_gelu_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut x = random_stack(&mut rng, 1, 1);
    let mut m = x.get(0, 0);
    m[0] = 0.0;
    x.set(0, 0, &m);
    assert!(gated_gelu(&x).unwrap().norm() == 0.0);
    m[0] = 10.0;
    x.set(0, 0, &m);
    // GELU(10) = 10 to within 1e-20, so the output is 10 x.
    let y = gated_gelu(&x).unwrap();
    assert!(y.max_abs_diff(&x.map(|m| *m * 10.0)) <= 1e-3 * x.norm());
}

#[test]
fn layernorm_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_stack(&mut rng, 2, 3);
    let y = equi_layernorm(&x).unwrap();
    for t in 0..2 {
        let m: f64 = (0..3).map(|c| y.get(t, c).inner_product_invariant(&y.get(t, c))).sum::<f64>() / 3.0;
        assert!((m - 1.0).abs() < 1e-6);
    }
    let y3 = equi_layernorm(&x.map(|m| *m * 3.0)).unwrap();
    assert!(y3.max_abs_diff(&y) < 1e-8);

    let e0_only = MvStack::from_multivectors(1, 1, &[Multivector::blade(1) * 2.0 + Multivector::blade(5)]).unwrap();
    let y = equi_layernorm(&e0_only).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
    assert!(y.max_abs_diff(&e0_only.map(|m| *m * 1e4)) < 1e-6);
}

#[test]
fn layer_probe_helpers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = random_motion(&mut rng);
    let x = random_stack(&mut rng, 2, 2);
    assert!(relative_error(|s| Ok(s.clone()), &v, &x).unwrap() == 0.0);
    assert_eq!(act(&v, &x).shape(), x.shape());
}
