//! Algebra checks against an independent bitmask blade oracle.

use hpga_core::pga::basis::{BLADE_INDICES, DIM, GRADES};
use hpga_core::pga::convert::{embed_point, extract_point, extract_quaternion};
use hpga_core::pga::{
    build_cayley_table, embed, extract, sandwich, Entity, EntityKind, Multivector,
    UnitQuaternion, Versor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Blade as a bitmask over generators e0..e3.
fn mask(index: usize) -> u8 {
    BLADE_INDICES[index].iter().fold(0u8, |m, g| m | (1 << g))
}

fn index_of_mask(m: u8) -> usize {
    (0..DIM).find(|&i| mask(i) == m).unwrap()
}

/// Sign of reordering `a b` into canonical order: for every generator of `a`,
/// count the generators of `b` with a lower index that it must hop over.
fn reorder_sign(a: u8, b: u8) -> f64 {
    let mut swaps = 0;
    let mut a = a >> 1;
    while a != 0 {
        swaps += (a & b).count_ones();
        a >>= 1;
    }
    if swaps % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

const METRIC: [f64; 4] = [0.0, 1.0, 1.0, 1.0];

/// Oracle product of two basis blades: (target index, coefficient).
fn oracle_blade_product(i: usize, j: usize) -> (usize, f64) {
    let (a, b) = (mask(i), mask(j));
    let mut coeff = reorder_sign(a, b);
    for g in 0..4 {
        if (a & b) & (1 << g) != 0 {
            coeff *= METRIC[g];
        }
    }
    (index_of_mask(a ^ b), coeff)
}

fn oracle_gp(x: &Multivector, y: &Multivector) -> Multivector {
    let mut out = Multivector::ZERO;
    for i in 0..DIM {
        for j in 0..DIM {
            let (k, c) = oracle_blade_product(i, j);
            out[k] += c * x[i] * y[j];
        }
    }
    out
}

fn oracle_wedge(x: &Multivector, y: &Multivector) -> Multivector {
    let mut out = Multivector::ZERO;
    for i in 0..DIM {
        for j in 0..DIM {
            if mask(i) & mask(j) == 0 {
                let (k, c) = oracle_blade_product(i, j);
                out[k] += c * x[i] * y[j];
            }
        }
    }
    out
}

fn random_mv(rng: &mut impl Rng) -> Multivector {
    let mut m = Multivector::ZERO;
    for c in m.0.iter_mut() {
        *c = rng.gen_range(-1.0..1.0);
    }
    m
}

fn random_versor(rng: &mut impl Rng) -> Versor {
    let axis = [
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    ];
    let q = UnitQuaternion::from_axis_angle(axis, rng.gen_range(-3.0..3.0));
    let t = [
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
        rng.gen_range(-2.0..2.0),
    ];
    Versor::translator(t).compose(&Versor::rotor(q))
}

fn max_abs_diff(a: &Multivector, b: &Multivector) -> f64 {
    a.0.iter().zip(b.0.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn cayley_table_matches_oracle_on_all_entries() {
    let table = build_cayley_table();
    for i in 0..DIM {
        for j in 0..DIM {
            let (k, c) = oracle_blade_product(i, j);
            match table.entry(i, j) {
                None => assert_eq!(c, 0.0, "({i},{j})"),
                Some(b) => {
                    assert_eq!(b.index, k, "({i},{j})");
                    assert_eq!(b.sign as f64, c, "({i},{j})");
                }
            }
        }
    }
}

#[test]
fn cayley_spot_checks() {
    let t = build_cayley_table();
    let e = |i: usize, j: usize| t.entry(i, j).map(|b| (b.index, b.sign));
    assert_eq!(e(2, 2), Some((0, 1))); // e1 e1 = 1
    assert_eq!(e(1, 1), None); // e0 e0 = 0
    assert_eq!(e(2, 3), Some((8, 1))); // e1 e2 = e12
    assert_eq!(e(3, 2), Some((8, -1))); // e2 e1 = -e12
    assert_eq!(e(8, 8), Some((0, -1))); // e12 e12 = -1
    assert_eq!(e(1, 2), Some((5, 1))); // e0 e1 = e01
    assert_eq!(e(8, 4), Some((14, 1))); // e12 e3 = e123
    assert_eq!(e(2, 10), Some((14, 1))); // e1 e23 = e123
    assert_eq!(e(14, 14), Some((0, -1))); // e123 e123 = -1
    assert_eq!(e(8, 9), Some((10, -1))); // e12 e13 = -e23
    assert_eq!(e(5, 2), Some((1, 1))); // e01 e1 = e0
    assert_eq!(e(15, 15), None); // e0123 e0123 = 0
    assert_eq!(e(9, 3), Some((14, -1))); // e13 e2 = -e123
}

#[test]
fn geometric_product_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let (a, b) = (random_mv(&mut rng), random_mv(&mut rng));
        assert!(max_abs_diff(&(a * b), &oracle_gp(&a, &b)) <= 1e-12);
        assert!(max_abs_diff(&(a ^ b), &oracle_wedge(&a, &b)) <= 1e-12);
    }
    let x = random_mv(&mut rng);
    assert_eq!(Multivector::scalar(1.0) * x, x);
    assert_eq!(Multivector::blade(2) * Multivector::blade(2), Multivector::scalar(1.0));
}

#[test]
fn associativity_and_distributivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (a, b, c) = (random_mv(&mut rng), random_mv(&mut rng), random_mv(&mut rng));
        assert!(max_abs_diff(&(a * (b * c)), &((a * b) * c)) <= 1e-10);
        assert!(max_abs_diff(&(a * (b + c)), &(a * b + a * c)) <= 1e-12);
        assert!(max_abs_diff(&(a ^ (b + c)), &((a ^ b) + (a ^ c))) <= 1e-12);
        assert!(max_abs_diff(&((a * b).reverse()), &(b.reverse() * a.reverse())) <= 1e-12);
    }
}

#[test]
fn wedge_is_grade_raising_part_of_gp_for_blades() {
    for i in 0..DIM {
        for j in 0..DIM {
            let (a, b) = (Multivector::blade(i), Multivector::blade(j));
            let target = GRADES[i] + GRADES[j];
            let expect = if target <= 4 {
                (a * b).grade_project(target).unwrap()
            } else {
                Multivector::ZERO
            };
            assert_eq!(a ^ b, expect);
        }
    }
}

#[test]
fn vector_wedge_with_scaled_self_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let v = random_mv(&mut rng).grade_project(1).unwrap();
        let s: f64 = rng.gen_range(-3.0..3.0);
        assert!((v ^ (v * s)).coeff_norm() <= 1e-12);
    }
}

#[test]
fn double_dual_sign_table() {
    // Right complement applied twice on a grade-k blade in 4 generators gives (-1)^(k(4-k)).
    let expected = [1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0];
    for i in 0..DIM {
        let b = Multivector::blade(i);
        assert_eq!(b.dual().dual(), b * expected[i], "blade {i}");
        assert_eq!(b ^ b.dual(), Multivector::pseudoscalar());
    }
}

#[test]
fn join_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_mv(&mut rng);
    // join with the pseudoscalar is the double dual: +x on even grades, -x on odd.
    let j = x.join(&Multivector::pseudoscalar());
    for i in 0..DIM {
        let s = if GRADES[i] % 2 == 0 { 1.0 } else { -1.0 };
        assert_eq!(j[i], s * x[i]);
    }
    let line = embed_point([0.0, 0.0, 0.0]).join(&embed_point([1.0, 0.0, 0.0]));
    assert!(line.coeff_norm() > 0.5);
    for i in 0..DIM {
        if GRADES[i] != 2 {
            assert_eq!(line[i], 0.0);
        }
    }
    let p = embed_point([0.3, -1.0, 2.0]);
    assert_eq!(p.join(&p).coeff_norm(), 0.0);
}

#[test]
fn rotor_matches_quaternion_oracle() {
    use nalgebra::{Quaternion, UnitQuaternion as NaQuat, Vector3};
    let r = Versor::new(Multivector::from_coeffs({
        let mut c = [0.0; 16];
        let h = core::f64::consts::FRAC_PI_4;
        c[0] = h.cos();
        c[8] = -h.sin();
        c
    }))
    .unwrap();
    let p = extract_point(&r.apply(&embed_point([1.0, 0.0, 0.0]))).unwrap();
    assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let q = NaQuat::from_quaternion(Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let v = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let expect = q * v;
        let ours = UnitQuaternion::new(q.w, q.i, q.j, q.k).unwrap();
        let got = extract_point(&Versor::rotor(ours).apply(&embed_point([v.x, v.y, v.z]))).unwrap();
        for a in 0..3 {
            assert!((got[a] - expect[a]).abs() < 1e-12);
        }
        // the geometric product of embedded orientations is quaternion multiplication
        let base = UnitQuaternion::from_axis_angle([0.2, -0.4, 1.0], 0.7);
        let composed = *Versor::rotor(ours).as_multivector()
            * hpga_core::pga::convert::embed_quaternion(base);
        let composed_q = extract_quaternion(&composed).unwrap();
        let expect_q = ours.mul(base);
        for (a, b) in composed_q.to_array().iter().zip(expect_q.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn translator_moves_points_by_plus_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let d = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let got = extract_point(&Versor::translator(d).apply(&embed_point(p))).unwrap();
        for a in 0..3 {
            assert!((got[a] - (p[a] + d[a])).abs() < 1e-12);
        }
        // ideal points (zero weight) are untouched by translation
        let mut ideal = embed_point(p);
        ideal[14] = 0.0;
        assert!(max_abs_diff(&Versor::translator(d).apply(&ideal), &ideal) < 1e-12);
    }
}

#[test]
fn sandwich_identity_validation_and_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_mv(&mut rng);
    assert_eq!(sandwich(&Multivector::scalar(1.0), &x).unwrap(), x);
    assert!(sandwich(&Multivector::scalar(2.0), &x).is_err());
    assert!(sandwich(&Multivector::blade(2), &x).is_err());
    for _ in 0..200 {
        let v = random_versor(&mut rng);
        let x = random_mv(&mut rng);
        let y = v.apply(&x);
        assert!((y.inner_product_invariant(&y) - x.inner_product_invariant(&x)).abs() <= 1e-9);
        assert!(sandwich(v.as_multivector(), &x).is_ok());
    }
}

#[test]
fn embed_extract_roundtrip() {
    let q = UnitQuaternion::new(0.5, 0.5, -0.5, 0.5).unwrap();
    let m = embed(&Entity::Quaternion(q)).unwrap();
    assert_eq!(m[0], 0.5);
    assert_eq!(m[8], -0.5);
    assert_eq!(m[9], -0.5);
    assert_eq!(m[10], -0.5);
    assert_eq!(
        embed(&Entity::Quaternion(UnitQuaternion::IDENTITY)).unwrap(),
        Multivector::scalar(1.0)
    );
    assert_eq!(
        extract(&embed(&Entity::Point([1.0, 2.0, 3.0])).unwrap(), EntityKind::Point).unwrap(),
        Entity::Point([1.0, 2.0, 3.0])
    );

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let s: f64 = rng.gen_range(-5.0..5.0);
        let v = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let q = UnitQuaternion::from_axis_angle(v, rng.gen_range(-3.0..3.0));
        for (entity, kind) in [
            (Entity::Scalar(s), EntityKind::Scalar),
            (Entity::Direction(v), EntityKind::Direction),
            (Entity::Point(v), EntityKind::Point),
            (Entity::Quaternion(q), EntityKind::Quaternion),
        ] {
            let back = extract(&embed(&entity).unwrap(), kind).unwrap();
            let (a, b): (Vec<f64>, Vec<f64>) = match (entity, back) {
                (Entity::Scalar(a), Entity::Scalar(b)) => (vec![a], vec![b]),
                (Entity::Direction(a), Entity::Direction(b)) | (Entity::Point(a), Entity::Point(b)) => {
                    (a.to_vec(), b.to_vec())
                }
                (Entity::Quaternion(a), Entity::Quaternion(b)) => {
                    (a.to_array().to_vec(), b.to_array().to_vec())
                }
                _ => panic!("kind changed"),
            };
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
