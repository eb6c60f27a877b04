mod common;

use common::{force_constant, max_relative_error, random_image, random_images};
use transex_core::models::losses::{
    cycle_consistency_loss, cycle_consistency_loss_grads, cyclegan_generator_loss, cyclegan_generator_loss_grads,
    discriminator_loss_grads, CycleModels, gan_value, gan_value_grads, gan_value_paired,
    gan_value_paired_grads, pix2pix_generator_loss, pix2pix_generator_loss_grads,
};
use transex_core::models::{
    AdversarialForm, DiscriminatorFamily, DiscriminatorSpec, GeneratorFamily, GeneratorSpec, LossConfig, Preset,
};
use transex_core::nn::Tensor;
use transex_core::{ImagePair, ImageTensor};

const TOL: f64 = 1e-3;
const SAMPLES: usize = 120;

fn generator(seed: u64) -> GeneratorSpec {
    GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (8, 8), seed).unwrap()
}

fn discriminator(conditional: bool, seed: u64) -> DiscriminatorSpec {
    DiscriminatorSpec::new(DiscriminatorFamily::Patchgan, Preset::Tiny, 3, conditional, (8, 8), seed).unwrap()
}

fn pairs(n: usize, seed: u64) -> Vec<ImagePair> {
    (0..n)
        .map(|i| ImagePair::new(random_image(8, 8, 3, seed + 2 * i as u64), random_image(8, 8, 3, seed + 2 * i as u64 + 1)))
        .collect()
}

#[test]
fn gan_value_gradients_match_finite_differences() {
    let (g, d) = (generator(1), discriminator(false, 2));
    let real = random_images(2, 8, 8, 3, 3);
    let z = random_images(3, 8, 8, 3, 4);
    let grads = gan_value_grads(&d, &g, &real, &z).unwrap();
    assert!((grads.value - gan_value(&d, &g, &real, &z).unwrap()).abs() < 1e-12);

    let err_d = max_relative_error(&d.params, &grads.d, SAMPLES, |p| {
        let mut d2 = d.clone();
        d2.params.copy_from_slice(p);
        gan_value(&d2, &g, &real, &z).unwrap()
    });
    let err_g = max_relative_error(&g.params, &grads.g, SAMPLES, |p| {
        let mut g2 = g.clone();
        g2.params.copy_from_slice(p);
        gan_value(&d, &g2, &real, &z).unwrap()
    });
    assert!(err_d < TOL, "discriminator gradient error {err_d}");
    assert!(err_g < TOL, "generator gradient error {err_g}");
}

#[test]
fn conditional_gan_value_gradients_match_finite_differences() {
    let (g, d) = (generator(5), discriminator(true, 6));
    let batch = pairs(2, 7);
    let grads = gan_value_paired_grads(&d, &g, &batch).unwrap();
    let err_d = max_relative_error(&d.params, &grads.d, SAMPLES, |p| {
        let mut d2 = d.clone();
        d2.params.copy_from_slice(p);
        gan_value_paired(&d2, &g, &batch).unwrap()
    });
    let err_g = max_relative_error(&g.params, &grads.g, SAMPLES, |p| {
        let mut g2 = g.clone();
        g2.params.copy_from_slice(p);
        gan_value_paired(&d, &g2, &batch).unwrap()
    });
    assert!(err_d < TOL, "discriminator gradient error {err_d}");
    assert!(err_g < TOL, "generator gradient error {err_g}");
}

#[test]
fn pix2pix_gradients_match_finite_differences() {
    for form in [AdversarialForm::Nonsaturating, AdversarialForm::Minimax] {
        let (g, d) = (generator(8), discriminator(true, 9));
        let pair = &pairs(1, 10)[0];
        let cfg = LossConfig {
            adversarial_form: form,
            ..LossConfig::default()
        };
        let (value, grads) = pix2pix_generator_loss_grads(&g, &d, pair, &cfg).unwrap();
        assert!((value - pix2pix_generator_loss(&g, &d, pair, &cfg).unwrap()).abs() < 1e-12);
        let err = max_relative_error(&g.params, &grads, SAMPLES, |p| {
            let mut g2 = g.clone();
            g2.params.copy_from_slice(p);
            pix2pix_generator_loss(&g2, &d, pair, &cfg).unwrap()
        });
        assert!(err < TOL, "{form:?} gradient error {err}");
    }
}

#[test]
fn cycle_gradients_match_finite_differences() {
    let (g_ab, g_ba) = (generator(11), generator(12));
    let a = random_images(2, 8, 8, 3, 13);
    let b = random_images(1, 8, 8, 3, 14);
    let (value, grad_ab, grad_ba) = cycle_consistency_loss_grads(&g_ab, &g_ba, &a, &b).unwrap();
    assert!((value - cycle_consistency_loss(&g_ab, &g_ba, &a, &b).unwrap()).abs() < 1e-12);
    let err_ab = max_relative_error(&g_ab.params, &grad_ab, SAMPLES, |p| {
        let mut g2 = g_ab.clone();
        g2.params.copy_from_slice(p);
        cycle_consistency_loss(&g2, &g_ba, &a, &b).unwrap()
    });
    let err_ba = max_relative_error(&g_ba.params, &grad_ba, SAMPLES, |p| {
        let mut g2 = g_ba.clone();
        g2.params.copy_from_slice(p);
        cycle_consistency_loss(&g_ab, &g2, &a, &b).unwrap()
    });
    assert!(err_ab < TOL, "g_ab gradient error {err_ab}");
    assert!(err_ba < TOL, "g_ba gradient error {err_ba}");
}

#[test]
fn discriminator_loss_gradients_match_finite_differences() {
    for conditional in [false, true] {
        let d = discriminator(conditional, 50);
        let cond = conditional.then(|| Tensor::from(&random_image(8, 8, 3, 51)));
        let real = Tensor::from(&random_image(8, 8, 3, 52));
        let fake = Tensor::from(&random_image(8, 8, 3, 53));
        let (_, grads) = discriminator_loss_grads(&d, cond.as_ref(), &real, &fake).unwrap();
        let err = max_relative_error(&d.params, &grads, SAMPLES, |p| {
            let mut d2 = d.clone();
            d2.params.copy_from_slice(p);
            discriminator_loss_grads(&d2, cond.as_ref(), &real, &fake).unwrap().0
        });
        assert!(err < TOL, "conditional={conditional}: gradient error {err}");
    }
}

#[test]
fn cyclegan_generator_gradients_match_finite_differences() {
    let (g_ab, g_ba) = (generator(60), generator(61));
    let (d_a, d_b) = (discriminator(false, 62), discriminator(false, 63));
    let a = random_image(8, 8, 3, 64);
    let b = random_image(8, 8, 3, 65);
    for form in [AdversarialForm::Nonsaturating, AdversarialForm::Minimax] {
        let cfg = LossConfig {
            adversarial_form: form,
            ..LossConfig::default()
        };
        let m = CycleModels { g_ab: &g_ab, g_ba: &g_ba, d_a: &d_a, d_b: &d_b };
        let (terms, grad_ab, grad_ba) = cyclegan_generator_loss_grads(m, &a, &b, &cfg).unwrap();
        let expected = terms.adversarial + 10.0 * terms.cycle + 5.0 * terms.identity;
        assert!((terms.total - expected).abs() < 1e-12);
        let err_ab = max_relative_error(&g_ab.params, &grad_ab, SAMPLES, |p| {
            let mut g2 = g_ab.clone();
            g2.params.copy_from_slice(p);
            let m = CycleModels { g_ab: &g2, ..m };
            cyclegan_generator_loss(m, &a, &b, &cfg).unwrap().total
        });
        let err_ba = max_relative_error(&g_ba.params, &grad_ba, SAMPLES, |p| {
            let mut g2 = g_ba.clone();
            g2.params.copy_from_slice(p);
            let m = CycleModels { g_ba: &g2, ..m };
            cyclegan_generator_loss(m, &a, &b, &cfg).unwrap().total
        });
        assert!(err_ab < TOL, "{form:?} g_ab gradient error {err_ab}");
        assert!(err_ba < TOL, "{form:?} g_ba gradient error {err_ba}");
    }
}

#[test]
fn half_discriminator_gives_two_log_halves() {
    let g = generator(1);
    let mut d = discriminator(false, 2);
    force_constant(&d.network().clone(), &mut d.params, 0.5);
    let x = random_images(3, 8, 8, 3, 20);
    let v = gan_value(&d, &g, &x, &x[..1]).unwrap();
    assert!((v - 2.0 * 0.5f64.ln()).abs() < 1e-12);
    assert!((v + 1.3863).abs() < 1e-4);
}

#[test]
fn pix2pix_identity_term_is_lambda_times_half() {
    let mut g = generator(30);
    force_constant(&g.network().clone(), &mut g.params, 0.25);
    let d = discriminator(true, 31);
    let pair = ImagePair::new(random_image(8, 8, 3, 32), ImageTensor::filled(8, 8, 3, 0.75));
    let cfg = LossConfig::default();
    let full = pix2pix_generator_loss(&g, &d, &pair, &cfg).unwrap();
    let adversarial_only = pix2pix_generator_loss(&g, &d, &pair, &LossConfig { lambda_identity: 0.0, ..cfg.clone() }).unwrap();
    assert!((full - (adversarial_only + 50.0)).abs() < 1e-9);

    let exact = ImagePair::new(pair.input.clone(), ImageTensor::filled(8, 8, 3, 0.25));
    let at_target = pix2pix_generator_loss(&g, &d, &exact, &cfg).unwrap();
    assert!((at_target - adversarial_only).abs() < 1e-9);
}

#[test]
fn cycle_loss_examples() {
    let id = GeneratorSpec::identity(3, (8, 8));
    let a = random_images(2, 8, 8, 3, 40);
    let b = random_images(3, 8, 8, 3, 41);
    assert_eq!(cycle_consistency_loss(&id, &id, &a, &b).unwrap(), 0.0);

    let mut constant = generator(42);
    force_constant(&constant.network().clone(), &mut constant.params, 0.3);
    let a0 = vec![ImageTensor::filled(8, 8, 3, 0.8)];
    let b0 = vec![ImageTensor::filled(8, 8, 3, 0.1)];
    // a: id(c(a0)) = 0.3 -> |0.3 - 0.8|; b: c(id(b0)) = 0.3 -> |0.3 - 0.1|.
    let v = cycle_consistency_loss(&constant, &id, &a0, &b0).unwrap();
    assert!((v - 0.7).abs() < 1e-12);

    let g1 = generator(43);
    let g2 = generator(44);
    let fwd = cycle_consistency_loss(&g1, &g2, &a, &b).unwrap();
    let swapped = cycle_consistency_loss(&g2, &g1, &b, &a).unwrap();
    assert!((fwd - swapped).abs() < 1e-12);
}

#[test]
fn losses_reject_bad_shapes() {
    let g = generator(1);
    let d = discriminator(true, 2);
    let bad = ImagePair::new(random_image(16, 16, 3, 1), random_image(16, 16, 3, 2));
    assert!(pix2pix_generator_loss(&g, &d, &bad, &LossConfig::default()).is_err());
    let other = GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (16, 16), 0).unwrap();
    let x = random_images(1, 8, 8, 3, 3);
    assert!(cycle_consistency_loss(&g, &other, &x, &x).is_err());
}

#[test]
fn super_resolution_gradients_match_finite_differences() {
    let mut g = GeneratorSpec::new(GeneratorFamily::Srresnet, Preset::Tiny, 3, (4, 4), 21).unwrap();
    // Replace the zero-initialized head so every branch carries gradient.
    let fresh = GeneratorSpec::new(GeneratorFamily::Unet, Preset::Tiny, 3, (4, 4), 22).unwrap();
    for (i, p) in g.params.iter_mut().enumerate() {
        if *p == 0.0 {
            *p = 0.05 * fresh.params[i % fresh.params.len()];
        }
    }
    let d = DiscriminatorSpec::new(DiscriminatorFamily::SrDiscriminator, Preset::Tiny, 3, false, (16, 16), 23).unwrap();
    let pair = ImagePair::new(random_image(4, 4, 3, 24), random_image(16, 16, 3, 25));
    let cfg = LossConfig::default();
    let (_, grads) = pix2pix_generator_loss_grads(&g, &d, &pair, &cfg).unwrap();
    let err = max_relative_error(&g.params, &grads, SAMPLES, |p| {
        let mut g2 = g.clone();
        g2.params.copy_from_slice(p);
        pix2pix_generator_loss(&g2, &d, &pair, &cfg).unwrap()
    });
    assert!(err < TOL, "gradient error {err}");
}
