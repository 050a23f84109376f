use hpga_core::autodiff::ModelParams;
use hpga_core::denoise::{BackboneConfig, UNetConfig};
use hpga_core::diffusion::{make_schedule, HpgaConfig, LatentMode, ModelConfig, PolicyModel, ScheduleKind};
use hpga_core::envs::{generate_episodes, TaskSpec};
use hpga_core::nn::PgatrConfig;
use hpga_core::pga::{convert, Multivector, UnitQuaternion};
use hpga_core::policy::*;
use hpga_core::{Error, MvStack};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quat(rng: &mut impl Rng) -> UnitQuaternion {
    let v: [f64; 4] = [0, 1, 2, 3].map(|_| rng.gen_range(-1.0..1.0));
    UnitQuaternion::normalize(v[0], v[1], v[2], v[3]).unwrap().canonical()
}

fn point(rng: &mut impl Rng) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.gen_range(-2.0..2.0))
}

fn frame(rng: &mut impl Rng, j: usize) -> ObservationFrame {
    ObservationFrame {
        p_ee: point(rng),
        q_ee: quat(rng),
        gripper: rng.gen_range(0.0..1.0),
        objects: (0..j).map(|_| Pose::new(point(rng), quat(rng))).collect(),
    }
}

fn action(rng: &mut impl Rng) -> ActionFrame {
    ActionFrame::new(point(rng), quat(rng), rng.gen_range(0.0..1.0))
}

fn close_q(a: UnitQuaternion, b: UnitQuaternion, tol: f64) -> bool {
    a.to_array().iter().zip(b.to_array()).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn channel_count_follows_schema() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h: Vec<_> = (0..2).map(|_| frame(&mut rng, 2)).collect();
    let x = pack_observation(&h, 2).unwrap();
    assert_eq!(x.shape(), [2, 7, 16]);
    assert_eq!(k_o(2), 7);
    assert_eq!(k_o(1), 5);
}

#[test]
fn identity_pose_packs_to_basis_elements() {
    let f = ObservationFrame {
        p_ee: [0.0; 3],
        q_ee: UnitQuaternion::IDENTITY,
        gripper: 0.0,
        objects: vec![],
    };
    let x = pack_observation(&[f], 1).unwrap();
    assert_eq!(x.get(0, 0), Multivector::blade(14));
    assert_eq!(x.get(0, 1), Multivector::scalar(1.0));
    assert_eq!(x.get(0, 2), Multivector::ZERO);
}

#[test]
fn observation_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let h: Vec<_> = (0..3).map(|_| frame(&mut rng, 2)).collect();
        let x = pack_observation(&h, 3).unwrap();
        for (t, f) in h.iter().enumerate() {
            let p = convert::extract_point(&x.get(t, 0)).unwrap();
            assert!(p.iter().zip(f.p_ee).all(|(a, b)| (a - b).abs() <= 1e-12));
            assert!(close_q(convert::extract_quaternion(&x.get(t, 1)).unwrap(), f.q_ee, 1e-12));
            assert!((x.get(t, 2)[0] - f.gripper).abs() <= 1e-12);
            for (i, o) in f.objects.iter().enumerate() {
                let p = convert::extract_point(&x.get(t, 3 + 2 * i)).unwrap();
                assert!(p.iter().zip(o.p).all(|(a, b)| (a - b).abs() <= 1e-12));
                assert!(close_q(convert::extract_quaternion(&x.get(t, 4 + 2 * i)).unwrap(), o.q, 1e-12));
            }
        }
    }
}

#[test]
fn pack_rejects_bad_histories() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h: Vec<_> = (0..2).map(|_| frame(&mut rng, 1)).collect();
    assert!(matches!(pack_observation(&h, 3), Err(Error::Shape(_))));
    let mut bad = h.clone();
    bad[1].q_ee = UnitQuaternion { w: 2.0, x: 0.0, y: 0.0, z: 0.0 };
    assert!(matches!(pack_observation(&bad, 2), Err(Error::NonUnitQuaternion { .. })));
    let mut ragged = h;
    ragged[1].objects.clear();
    assert!(matches!(pack_observation(&ragged, 2), Err(Error::Shape(_))));
}

#[test]
fn action_roundtrip_and_extraction_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let acts: Vec<_> = (0..16).map(|_| action(&mut rng)).collect();
    let x = pack_actions(&acts).unwrap();
    let back = unpack_actions(&x).unwrap();
    for (a, b) in acts.iter().zip(&back) {
        assert!(a.p.iter().zip(b.p).all(|(u, v)| (u - v).abs() <= 1e-9));
        assert!(close_q(a.q, b.q, 1e-9));
        assert!((a.g - b.g).abs() <= 1e-9);
    }
    let mut scaled = x.clone();
    scaled.set(0, 1, &(x.get(0, 1) * 2.0));
    scaled.set(1, 2, &Multivector::scalar(1.3));
    scaled.set(2, 2, &Multivector::scalar(-0.4));
    let u = unpack_actions(&scaled).unwrap();
    assert!(close_q(u[0].q, acts[0].q, 1e-12));
    assert_eq!(u[1].g, 1.0);
    assert_eq!(u[2].g, 0.0);
    assert!(matches!(unpack_actions(&MvStack::zeros(2, 2)), Err(Error::Shape(_))));
    assert!(matches!(unpack_actions(&MvStack::zeros(2, 3)), Err(Error::PointAtInfinity { .. })));
}

#[test]
fn adapters_round_trip_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = TaskSpec::point_reach();
    for repr in [Representation::Multivector, Representation::Raw] {
        let ad = Adapter {
            repr,
            norm: Normalizer::from_bounds(spec.lo, spec.hi),
            h_o: 2,
            h_p: 4,
            objects: 1,
        };
        let seqs: Vec<Vec<ActionFrame>> = (0..3).map(|_| (0..4).map(|_| action(&mut rng)).collect()).collect();
        let refs: Vec<&[ActionFrame]> = seqs.iter().map(Vec::as_slice).collect();
        let t = ad.action_tensor(&refs).unwrap();
        let mut want = vec![3];
        want.extend(ad.action_shape());
        assert_eq!(t.shape(), want.as_slice());
        let back = ad.actions_from_tensor(&t).unwrap();
        for (s, b) in seqs.iter().zip(&back) {
            for (a, c) in s.iter().zip(b) {
                assert!(a.p.iter().zip(c.p).all(|(u, v)| (u - v).abs() <= 1e-9));
                assert!(close_q(a.q, c.q, 1e-9));
            }
        }
        let hist: Vec<ObservationFrame> = (0..2).map(|_| frame(&mut rng, 1)).collect();
        let o = ad.obs_tensor(&[&hist, &hist]).unwrap();
        assert_eq!(o.shape()[0], 2);
        assert_eq!(&o.shape()[1..], ad.obs_shape().as_slice());
    }
}

#[test]
fn normalizer_maps_workspace_into_unit_box() {
    let spec = TaskSpec::point_reach();
    let n = Normalizer::from_bounds(spec.lo, spec.hi);
    for p in [spec.lo, spec.hi] {
        assert!(n.fwd(p).iter().all(|v| v.abs() <= 1.0));
        let back = n.inv(n.fwd(p));
        assert!(back.iter().zip(p).all(|(a, b)| (a - b).abs() < 1e-15));
    }
}

#[test]
fn windows_pad_at_the_edges() {
    let spec = TaskSpec::point_reach();
    let ep = &generate_episodes(&spec, 1, 3, 0).unwrap()[0];
    let w = windows(ep, 2, 16);
    assert_eq!(w.len(), ep.len());
    assert_eq!(w[0].0[0], ep.obs[0]);
    assert_eq!(w[0].0[1], ep.obs[0]);
    assert_eq!(w[1].0[0], ep.obs[0]);
    assert_eq!(w[1].0[1], ep.obs[1]);
    let last = w.last().unwrap();
    assert!(last.1.iter().all(|a| *a == *ep.act.last().unwrap()));
    let h = history(&ep.obs[..1], 3);
    assert_eq!(h.len(), 3);
    assert!(h.iter().all(|f| *f == ep.obs[0]));
}

fn tiny_model(seed: u64) -> (PolicyModel, ModelParams) {
    let pg = PgatrConfig {
        n_blocks: 1,
        channels: 4,
        n_heads: 2,
    };
    let cfg = ModelConfig::Hpga(HpgaConfig {
        h_o: 2,
        h_p: 8,
        k_o: 5,
        k_a: 3,
        encoder: pg.clone(),
        decoder: pg,
        backbone: BackboneConfig::UNet(UNetConfig {
            down_dims: vec![8, 16],
            kernel: 3,
            n_groups: 4,
            time_dim: 8,
            zero_head: false,
        }),
        latent: LatentMode::Actions,
    });
    let mut p = ModelParams::new();
    let m = PolicyModel::new(&cfg, &mut p, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (m, p)
}

#[test]
fn random_policy_rarely_succeeds_and_rollouts_are_deterministic() {
    let spec = TaskSpec::point_reach();
    let (m, p) = tiny_model(5);
    let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
    let ad = Adapter {
        repr: Representation::Multivector,
        norm: Normalizer::from_bounds(spec.lo, spec.hi),
        h_o: 2,
        h_p: 8,
        objects: 1,
    };
    let seeds: Vec<u64> = (1000..1050).collect();
    let mut pol = DiffusionPolicy::new(&m, &p, &sched, ad, 1).unwrap();
    let rs = rollout_batch(&mut pol, &spec, &seeds, 40, 4).unwrap();
    let wins = rs.iter().filter(|r| r.success).count();
    assert!(wins <= 2, "{wins}/50");
    assert!(rs.iter().all(|r| r.steps <= 40 && r.trace.act.len() == r.steps));

    let mut a = DiffusionPolicy::new(&m, &p, &sched, ad, 9).unwrap();
    let mut b = DiffusionPolicy::new(&m, &p, &sched, ad, 9).unwrap();
    let ra = rollout(&mut a, &spec, 77, 16, 4).unwrap();
    let rb = rollout(&mut b, &spec, 77, 16, 4).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn mismatched_adapter_is_rejected() {
    let (m, p) = tiny_model(6);
    let sched = make_schedule(10, ScheduleKind::Cosine).unwrap();
    let ad = Adapter {
        repr: Representation::Raw,
        norm: Normalizer::IDENTITY,
        h_o: 2,
        h_p: 8,
        objects: 1,
    };
    assert!(matches!(DiffusionPolicy::new(&m, &p, &sched, ad, 0), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prop_pack_unpack_actions(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts: Vec<_> = (0..n).map(|_| action(&mut rng)).collect();
        let back = unpack_actions(&pack_actions(&acts).unwrap()).unwrap();
        for (a, b) in acts.iter().zip(&back) {
            prop_assert!(a.p.iter().zip(b.p).all(|(u, v)| (u - v).abs() <= 1e-9));
            prop_assert!(close_q(a.q, b.q, 1e-9));
            prop_assert!((a.g - b.g).abs() <= 1e-9);
        }
    }

    #[test]
    fn prop_channel_schema(j in 0usize..5, h_o in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h: Vec<_> = (0..h_o).map(|_| frame(&mut rng, j)).collect();
        prop_assert_eq!(pack_observation(&h, h_o).unwrap().shape(), [h_o, 3 + 2 * j, 16]);
    }
}
