use proptest::prelude::*;
use synthcolon::losses::*;
use synthcolon::tensor::Tensor;

#[test]
fn every_loss_passes_gradient_check_over_20_seeds() {
    for seed in 0..20 {
        let checks = check_all_losses(seed, 1e-5).unwrap();
        assert_eq!(checks.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(), LOSS_NAMES);
        for c in checks {
            assert!(c.report.checked > 0, "seed {seed} {}: nothing checked", c.name);
            assert!(c.report.max_rel_error < 1e-4, "seed {seed} {}: {:?}", c.name, c.report);
        }
    }
}

#[test]
fn detached_keys_receive_no_gradient() {
    let mut rng = synthcolon::seed::rng(5);
    let src = [Tensor::param((0..48).map(|i| (i as f64 * 0.37).sin()).collect(), &[1, 3, 4, 4]).unwrap()];
    let gen = [Tensor::param((0..48).map(|i| (i as f64 * 0.71).cos()).collect(), &[1, 3, 4, 4]).unwrap()];
    let heads = [ProjectionHead::new(3, 8, &mut rng)];
    let opts = PatchNceOptions { num_patches: 8, ..PatchNceOptions::default() };
    patchnce_loss(&src, &gen, &heads, &opts, &mut rng).unwrap().backward().unwrap();
    assert!(src[0].grad().is_none());
    assert!(gen[0].grad().unwrap().iter().any(|g| *g != 0.0));
}

#[test]
fn too_few_patches_is_an_error() {
    let mut rng = synthcolon::seed::rng(1);
    let f = [Tensor::new(vec![1.0, 2.0], &[1, 2, 1, 1]).unwrap()];
    let heads = [ProjectionHead::new(2, 4, &mut rng)];
    assert!(patchnce_loss(&f, &f, &heads, &PatchNceOptions::default(), &mut rng).is_err());
}

fn vals(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patchnce_ignores_feature_scale(q in vals(5 * 4, -1.0, 1.0), k in vals(5 * 4, -1.0, 1.0), s in 0.1f64..10.0) {
        let t = |v: &[f64]| Tensor::new(v.to_vec(), &[5, 4]).unwrap();
        let scaled = |v: &[f64]| t(&v.iter().map(|x| x * s).collect::<Vec<_>>());
        let a = patchnce_from_embeddings(&t(&q), &t(&k), 0.07).unwrap().item();
        let b = patchnce_from_embeddings(&scaled(&q), &scaled(&k), 0.07).unwrap().item();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn full_patchnce_ignores_pre_projection_scale(f in vals(3 * 16, -1.0, 1.0), g in vals(3 * 16, -1.0, 1.0), s in 0.1f64..10.0) {
        // The head has biases, so only a common rescale of its output is
        // absorbed; scale the final layer instead of the input features.
        let mut rng = synthcolon::seed::rng(3);
        let head = ProjectionHead::new(3, 8, &mut rng);
        let scaled = ProjectionHead {
            w2: head.w2.mul_scalar(s),
            b2: head.b2.mul_scalar(s),
            ..head.clone()
        };
        let t = |v: &[f64]| [Tensor::new(v.to_vec(), &[1, 3, 4, 4]).unwrap()];
        let opts = PatchNceOptions { num_patches: 10, ..PatchNceOptions::default() };
        let a = patchnce_loss(&t(&f), &t(&g), &[head], &opts, &mut synthcolon::seed::rng(9)).unwrap().item();
        let b = patchnce_loss(&t(&f), &t(&g), &[scaled], &opts, &mut synthcolon::seed::rng(9)).unwrap().item();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn dice_loss_is_bounded(p in vals(2 * 9, 0.0, 1.0), g in prop::collection::vec(any::<bool>(), 2 * 9), smooth in 0.0f64..2.0) {
        let pred = Tensor::new(p, &[2, 1, 3, 3]).unwrap();
        let gt = Tensor::new(g.iter().map(|&b| b as u8 as f64).collect(), &[2, 1, 3, 3]).unwrap();
        let v = dice_segmentation_loss(&pred, &gt, smooth.max(1e-9)).unwrap().item();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn adversarial_and_cycle_are_non_negative(a in vals(8, -3.0, 3.0), b in vals(8, -3.0, 3.0)) {
        let t = |v: &[f64]| Tensor::new(v.to_vec(), &[1, 1, 2, 4]).unwrap();
        for role in [AdversarialRole::ForDiscriminator, AdversarialRole::ForGenerator] {
            prop_assert!(adversarial_loss(&t(&a), &t(&b), role).unwrap().item() >= 0.0);
        }
        prop_assert!(cycle_loss(&t(&a), &t(&b), &t(&b), &t(&a)).unwrap().item() >= 0.0);
        prop_assert_eq!(cycle_loss(&t(&a), &t(&a), &t(&b), &t(&b)).unwrap().item(), 0.0);
    }

    #[test]
    fn total_is_linear_in_each_component(c in vals(4, -5.0, 5.0), i in 0usize..4, d in -3.0f64..3.0) {
        let w = LossWeights::default();
        let weight = [1.0, w.lambda_x, w.lambda_y, w.lambda_s][i];
        let make = |c: &[f64]| CutSegComponents {
            gen_adv: Tensor::scalar(c[0]),
            nce_x: Tensor::scalar(c[1]),
            nce_y: Tensor::scalar(c[2]),
            seg: Tensor::scalar(c[3]),
        };
        let base = cutseg_total(&make(&c), &w).unwrap().0.item();
        let mut c2 = c.clone();
        c2[i] += d;
        let moved = cutseg_total(&make(&c2), &w).unwrap().0.item();
        prop_assert!((moved - base - weight * d).abs() < 1e-9);
    }
}
