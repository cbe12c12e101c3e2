use synthcolon::losses::{dice_segmentation_loss, DEFAULT_DICE_SMOOTH};
use synthcolon::tensor::gradient_check;
use synthcolon::toy::domains::{synthetic_sample, MIN_MASK_FRACTION};
use synthcolon::toy::*;

fn tiny(steps: usize) -> ToyConfig {
    ToyConfig {
        image_size: 16,
        synthetic_count: 8,
        validation_count: 4,
        real_count: 4,
        steps,
        generator_width: 2,
        discriminator_width: 2,
        segmenter_width: 2,
        head_width: 8,
        validate_every: 0,
        weights: synthcolon::losses::LossWeights { num_patches: 16, learning_rate: 1e-3, ..Default::default() },
        ..ToyConfig::default()
    }
}

#[test]
fn domains_are_deterministic_and_filtered() {
    let a = make_toy_domains(7, 50, 10, 64);
    let b = make_toy_domains(7, 50, 10, 64);
    for (x, y) in a.synthetic.iter().zip(&b.synthetic) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.mask, y.mask);
        assert!(x.mask_fraction() >= MIN_MASK_FRACTION);
    }
    assert_eq!(a.real, b.real);
    // A smaller pool is a prefix of a larger one.
    let c = make_toy_domains(7, 5, 2, 64);
    assert_eq!(c.synthetic[4].image, a.synthetic[4].image);
    assert_ne!(make_toy_domains(8, 1, 0, 64).synthetic[0].image, a.synthetic[0].image);
}

/// Per-image features for the probe: channel means, channel standard
/// deviations and mean absolute horizontal gradient.
fn features(img: &ToyImage) -> Vec<f64> {
    let n = img.size * img.size;
    let mut f = Vec::new();
    for c in 0..3 {
        let ch = &img.data[c * n..(c + 1) * n];
        let m = ch.iter().sum::<f64>() / n as f64;
        f.push(m);
        f.push((ch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt());
        let g: f64 = ch.chunks(img.size).flat_map(|r| r.windows(2).map(|w| (w[1] - w[0]).abs())).sum();
        f.push(g / n as f64);
    }
    f
}

#[test]
fn linear_probe_separates_the_domains() {
    let train = make_toy_domains(1, 200, 200, 64);
    let test = make_toy_domains(2, 100, 100, 64);
    let data = |d: &ToyDomains| -> Vec<(Vec<f64>, f64)> {
        d.synthetic.iter().map(|s| (features(&s.image), 0.0)).chain(d.real.iter().map(|r| (features(r), 1.0))).collect()
    };
    let (tr, te) = (data(&train), data(&test));
    let dim = tr[0].0.len();
    // Standardize with training statistics, then plain gradient descent on
    // the logistic loss.
    let mean: Vec<f64> = (0..dim).map(|k| tr.iter().map(|s| s.0[k]).sum::<f64>() / tr.len() as f64).collect();
    let sd: Vec<f64> = (0..dim)
        .map(|k| (tr.iter().map(|s| (s.0[k] - mean[k]).powi(2)).sum::<f64>() / tr.len() as f64).sqrt().max(1e-12))
        .collect();
    let z = |x: &[f64]| -> Vec<f64> { (0..dim).map(|k| (x[k] - mean[k]) / sd[k]).collect() };
    let mut w = vec![0.0; dim + 1];
    for _ in 0..500 {
        let mut g = vec![0.0; dim + 1];
        for (x, y) in &tr {
            let x = z(x);
            let p = 1.0 / (1.0 + (-(w[dim] + (0..dim).map(|k| w[k] * x[k]).sum::<f64>())).exp());
            for k in 0..dim {
                g[k] += (p - y) * x[k];
            }
            g[dim] += p - y;
        }
        for k in 0..=dim {
            w[k] -= 0.5 * g[k] / tr.len() as f64;
        }
    }
    let correct = te
        .iter()
        .filter(|(x, y)| {
            let x = z(x);
            let s = w[dim] + (0..dim).map(|k| w[k] * x[k]).sum::<f64>();
            (s > 0.0) == (*y > 0.5)
        })
        .count();
    let acc = correct as f64 / te.len() as f64;
    assert!(acc > 0.9, "probe accuracy {acc}");
}

#[test]
fn zero_steps_leaves_parameters_untouched() {
    let r = train_cutseg_toy(&tiny(0)).unwrap();
    assert_eq!(r.losses.len(), 1);
    assert_eq!(r.losses[0].step, 0);
    assert_eq!(r.init_checksum, r.param_checksum);
    assert_eq!(r.validation.len(), 1);
    let r = train_cutseg_toy(&tiny(3)).unwrap();
    assert_eq!(r.losses.len(), 4);
    assert_ne!(r.init_checksum, r.param_checksum);
    assert!(r.losses.iter().all(|l| l.is_finite()));
}

#[test]
fn training_is_seed_deterministic() {
    let a = train_cutseg_toy(&tiny(20)).unwrap();
    let b = train_cutseg_toy(&tiny(20)).unwrap();
    assert!(a.same_run(&b));
    let c = train_cutseg_toy(&ToyConfig { seed: 1, ..tiny(20) }).unwrap();
    assert_ne!(a.losses, c.losses);
}

#[test]
fn zero_segmentation_weight_starves_the_segmenter() {
    let mut cfg = tiny(0);
    cfg.weights.lambda_s = 0.0;
    let models = ToyModels::new(&cfg);
    let s = synthetic_sample(3, 0, 16);
    let (x, m) = (image_tensor(&s.image), mask_tensor(&s.mask));
    let (total, b) = models.joint_loss(&x, &m, &x, &cfg.weights, &mut synthcolon::seed::rng(1)).unwrap();
    assert!(b.seg > 0.0);
    total.backward().unwrap();
    assert!(models.segmenter.params().iter().all(|p| p.grad().is_none()));
    assert!(models.generator.params().iter().any(|p| p.grad().is_some()));

    let mut run = tiny(10);
    run.weights.lambda_s = 0.0;
    let r = train_cutseg_toy(&run).unwrap();
    assert_eq!(r.segmenter_checksums.0, r.segmenter_checksums.1);
    assert_ne!(r.init_checksum, r.param_checksum);
    assert_eq!(r.final_mdice, r.baseline_mdice);
    let r = train_cutseg_toy(&tiny(10)).unwrap();
    assert_ne!(r.segmenter_checksums.0, r.segmenter_checksums.1);
}

#[test]
fn segmentation_gradient_reaches_the_generator() {
    let cfg = tiny(0);
    let models = ToyModels::new(&cfg);
    let s = synthetic_sample(5, 0, 16);
    let (x, m) = (image_tensor(&s.image), mask_tensor(&s.mask));
    let g = models.generator.params();
    let seg = |_: &[synthcolon::tensor::Tensor]| {
        let fake = models.generator.forward(&x)?.image;
        dice_segmentation_loss(&models.segmenter.forward(&fake)?, &m, DEFAULT_DICE_SMOOTH)
    };
    // The last generator layer starts at zero, so only its weights see a
    // gradient at init; they must, and it must match finite differences.
    let last = &g[g.len() - 2..];
    let report = gradient_check(seg, last, 1e-6).unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(last[0].grad().unwrap().iter().any(|v| v.abs() > 1e-9));
}

#[test]
fn untrained_generator_is_identity() {
    let cfg = tiny(0);
    let models = ToyModels::new(&cfg);
    let s = synthetic_sample(9, 0, 16);
    let x = image_tensor(&s.image);
    let out = models.generator.forward(&x).unwrap().image;
    assert_eq!(out.to_vec(), x.to_vec());
    let m = mask_tensor(&s.mask);
    let joint = dice_segmentation_loss(&models.segmenter.forward(&out).unwrap(), &m, DEFAULT_DICE_SMOOTH).unwrap();
    let plain = dice_segmentation_loss(&models.segmenter.forward(&x).unwrap(), &m, DEFAULT_DICE_SMOOTH).unwrap();
    assert_eq!(joint.item(), plain.item());
}

#[test]
fn synthetic_reference_keeps_translation_near_identity() {
    let base = ToyConfig { steps: 300, real_count: 1, validation_count: 16, validate_every: 0, ..ToyConfig::default() };
    let textured = train_cutseg_toy(&base).unwrap();
    let same = train_cutseg_toy(&ToyConfig { reference_source: ReferenceSource::Synthetic, ..base.clone() }).unwrap();
    assert!(same.single_reference && textured.single_reference);
    assert_eq!(same.reference_images, vec![0]);
    assert!(same.generator_l1 < textured.generator_l1, "{} vs {}", same.generator_l1, textured.generator_l1);
}

#[test]
fn ablation_bookkeeping() {
    let base = tiny(2);
    let r = ablation_dataset_size(&base, &[2, 3, 4], 3).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert_eq!(r.runs(), 9);
    for row in &r.rows {
        assert_eq!(row.mdice.len(), 3);
        assert_eq!(row.seeds, vec![0, 1, 2]);
    }
    let mut csv = Vec::new();
    r.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("size,mean_mdice,std_mdice,runs,mdice_per_seed"));
    assert!(ablation_dataset_size(&base, &[3, 2], 3).is_err());
    assert!(ablation_dataset_size(&base, &[2], 0).is_err());
}

#[test]
fn sample_statistics() {
    let (m, s) = mean_std(&[0.7, 0.72, 0.68]);
    assert!((m - 0.7).abs() < 1e-12);
    assert!((s - 0.02).abs() < 1e-12);
    assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(train_cutseg_toy(&ToyConfig { image_size: 20, ..tiny(0) }).is_err());
    assert!(train_cutseg_toy(&ToyConfig { real_count: 0, ..tiny(0) }).is_err());
    let mut cfg = tiny(0);
    cfg.weights.lambda_x = -1.0;
    assert!(train_cutseg_toy(&cfg).is_err());
}
