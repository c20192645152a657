use proptest::prelude::*;
use seedgrow::volume::{EntropyField, ProbabilityField, Volume};
use seedgrow::{binary_entropy, dice_loss, entropy_map, grow, grow_oracle, mask_l1_diff, neighbourhood_std, Dims, GrowConfig, Mask, VoxelIndex};

fn dims() -> impl Strategy<Value = Dims> {
    (2usize..7, 2usize..7, 2usize..7).prop_map(|(a, b, c)| Dims(a, b, c))
}

fn mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
    dims().prop_flat_map(|d| {
        (
            prop::collection::vec(any::<bool>(), d.len()),
            prop::collection::vec(any::<bool>(), d.len()),
        )
            .prop_map(move |(x, y)| (Mask::from_fn(d, |v| x[d.linear(v)]), Mask::from_fn(d, |v| y[d.linear(v)])))
    })
}

/// Volume, entropy field and seed on a small grid; intensities are drawn
/// from a few levels so both open and closed gates occur.
fn grow_case() -> impl Strategy<Value = (Volume<f64>, EntropyField<f64>, VoxelIndex, GrowConfig)> {
    (dims(), 1usize..3, 1usize..3).prop_flat_map(|(d, ch, r)| {
        (
            prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.2, 0.9]), ch * d.len()),
            prop::collection::vec(prop::sample::select(vec![0.0, 0.05, 0.5]), d.len()),
            (0..d.0, 0..d.1, 0..d.2),
            0.05f64..0.5,
        )
            .prop_map(move |(x, e, (a, b, c), tau_sigma)| {
                let cfg = GrowConfig {
                    radius: VoxelIndex::splat(r),
                    tau_sigma,
                    tau_e: 0.1,
                    max_iters: 10_000,
                };
                (
                    Volume::new(d, ch, [1.0; 3], x).unwrap(),
                    EntropyField::new(d, e).unwrap(),
                    VoxelIndex::new(a, b, c),
                    cfg,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn grow_matches_oracle((x, e, seed, cfg) in grow_case()) {
        let fast = grow(&x, &e, seed, &cfg).unwrap();
        prop_assert!(fast.converged);
        prop_assert_eq!(fast.mask, grow_oracle(&x, &e, seed, &cfg).unwrap());
    }

    #[test]
    fn looser_gates_grow_supersets((x, e, seed, cfg) in grow_case()) {
        let m = grow(&x, &e, seed, &cfg).unwrap().mask;
        prop_assert!(m.get(seed));
        let loose = GrowConfig { tau_sigma: cfg.tau_sigma * 2.0, tau_e: 0.6, ..cfg };
        prop_assert!(m.is_subset_of(&grow(&x, &e, seed, &loose).unwrap().mask));
    }

    #[test]
    fn dice_loss_is_symmetric_and_bounded((a, b) in mask_pair()) {
        let ab: f64 = dice_loss(&a, &b).unwrap();
        let ba: f64 = dice_loss(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!(dice_loss::<f64, _>(&a, &a).unwrap().abs() < 1e-9);
    }

    #[test]
    fn l1_diff_is_a_metric((a, b) in mask_pair()) {
        prop_assert_eq!(mask_l1_diff(&a, &b).unwrap(), mask_l1_diff(&b, &a).unwrap());
        prop_assert_eq!(mask_l1_diff(&a, &a).unwrap(), 0);
        let union = Mask::from_fn(a.dims(), |v| a.get(v) || b.get(v));
        let inter = Mask::from_fn(a.dims(), |v| a.get(v) && b.get(v));
        prop_assert_eq!(mask_l1_diff(&a, &b).unwrap(), union.count() - inter.count());
    }

    #[test]
    fn entropy_is_symmetric_and_bounded(p in 0.0f64..=1.0) {
        let h = binary_entropy(p);
        prop_assert!((h - binary_entropy(1.0 - p)).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-15).contains(&h));
    }

    #[test]
    fn entropy_map_is_pointwise(probs in prop::collection::vec(0.0f64..=1.0, 8)) {
        let d = Dims(2, 2, 2);
        let e = entropy_map(&ProbabilityField::new(d, probs.clone()).unwrap());
        for (i, p) in probs.iter().enumerate() {
            prop_assert_eq!(e.data()[i], binary_entropy(*p));
        }
    }

    #[test]
    fn std_is_shift_invariant_and_scales(
        vals in prop::collection::vec(0.0f64..1.0, 27),
        shift in -5.0f64..5.0,
        scale in 0.1f64..4.0,
        a in 0usize..3, b in 0usize..3, c in 0usize..3,
    ) {
        let d = Dims::cube(3);
        let v = VoxelIndex::new(a, b, c);
        let r = VoxelIndex::splat(1);
        let x = Volume::new(d, 1, [1.0; 3], vals.clone()).unwrap();
        let shifted = Volume::new(d, 1, [1.0; 3], vals.iter().map(|x| x * scale + shift).collect()).unwrap();
        let s0: f64 = neighbourhood_std(&x, v, r);
        let s1: f64 = neighbourhood_std(&shifted, v, r);
        prop_assert!((s1 - scale * s0).abs() < 1e-9, "{} vs {}", s1, scale * s0);
        prop_assert!(s0 >= 0.0);
    }
}

#[test]
fn entropy_grid_matches_closed_form() {
    for i in 0..=999 {
        let p = i as f64 / 999.0;
        let expected = if p == 0.0 || p == 1.0 { 0.0 } else { -p * p.ln() - (1.0 - p) * (1.0 - p).ln() };
        assert!((binary_entropy(p) - expected).abs() <= 1e-9, "p={p}");
    }
    assert!((binary_entropy(0.5f64) - std::f64::consts::LN_2).abs() < 1e-15);
}
