//! GAN objective, Pix2Pix generator loss and cycle-consistency loss, each
//! with a value-only form and an analytic-gradient form.
//!
//! Probabilities entering a logarithm are clamped to
//! `[PROB_CLAMP, 1 - PROB_CLAMP]`; the clamp has zero gradient where active.

use serde::{Deserialize, Serialize};

use super::{DiscriminatorSpec, GeneratorSpec};
use crate::dataset::ImagePair;
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::nn::Tensor;
use crate::par::{self, Exec};

pub const PROB_CLAMP: f64 = 1e-7;

/// Generator-side adversarial term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// `log(1 - D(G(z)))`, minimized.
    Minimax,
    /// `-log D(G(z))`, minimized.
    #[default]
    Nonsaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the Pix2Pix L1 term against the paired target.
    pub lambda_identity: f64,
    /// Weight of the CycleGAN reconstruction term.
    pub lambda_cycle: f64,
    /// Weight of the CycleGAN identity-mapping term `|G_ab(b) - b|`.
    pub lambda_cycle_identity: f64,
    /// L1 content weight used in place of `lambda_identity` by the
    /// super-resolution trainer, putting the adversarial term at 1e-3.
    pub lambda_content: f64,
    pub adversarial_form: AdversarialForm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_identity: 100.0,
            lambda_cycle: 10.0,
            lambda_cycle_identity: 5.0,
            lambda_content: 1000.0,
            adversarial_form: AdversarialForm::Nonsaturating,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_identity", self.lambda_identity),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_cycle_identity", self.lambda_cycle_identity),
            ("lambda_content", self.lambda_content),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[inline]
fn clamp_prob(p: f64) -> (f64, bool) {
    if p < PROB_CLAMP {
        (PROB_CLAMP, true)
    } else if p > 1.0 - PROB_CLAMP {
        (1.0 - PROB_CLAMP, true)
    } else {
        (p, false)
    }
}

/// `mean(log p)` and its gradient with respect to `p`.
pub fn mean_log(p: &Tensor) -> (f64, Tensor) {
    let n = p.len() as f64;
    let mut grad = Tensor::zeros(p.c, p.h, p.w);
    let mut total = 0.0;
    for (g, &v) in grad.data.iter_mut().zip(&p.data) {
        let (q, clamped) = clamp_prob(v);
        total += q.ln();
        if !clamped {
            *g = 1.0 / (q * n);
        }
    }
    (total / n, grad)
}

/// `mean(log(1 - p))` and its gradient with respect to `p`.
pub fn mean_log1m(p: &Tensor) -> (f64, Tensor) {
    let n = p.len() as f64;
    let mut grad = Tensor::zeros(p.c, p.h, p.w);
    let mut total = 0.0;
    for (g, &v) in grad.data.iter_mut().zip(&p.data) {
        let (q, clamped) = clamp_prob(v);
        total += (1.0 - q).ln();
        if !clamped {
            *g = -1.0 / ((1.0 - q) * n);
        }
    }
    (total / n, grad)
}

/// Mean absolute deviation and its (sub)gradient with respect to `a`.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> (f64, Tensor) {
    assert_eq!(a.shape(), b.shape(), "L1 operands must share a shape");
    let n = a.len() as f64;
    let mut grad = Tensor::zeros(a.c, a.h, a.w);
    let mut total = 0.0;
    for ((g, x), y) in grad.data.iter_mut().zip(&a.data).zip(&b.data) {
        let d = x - y;
        total += d.abs();
        *g = d.signum() / n;
        if d == 0.0 {
            *g = 0.0;
        }
    }
    (total / n, grad)
}

/// Generator adversarial loss for one score map, with its gradient.
pub fn generator_adversarial(form: AdversarialForm, scores: &Tensor) -> (f64, Tensor) {
    match form {
        AdversarialForm::Nonsaturating => {
            let (v, mut g) = mean_log(scores);
            g.data.iter_mut().for_each(|x| *x = -*x);
            (-v, g)
        }
        AdversarialForm::Minimax => mean_log1m(scores),
    }
}

fn ensure_nonempty(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(format!("{name} must not be empty")));
    }
    Ok(())
}

fn check_translators(g_ab: &GeneratorSpec, g_ba: &GeneratorSpec) -> Result<()> {
    if g_ab.input_shape() != g_ab.output_shape()
        || g_ba.input_shape() != g_ba.output_shape()
        || g_ab.input_shape() != g_ba.input_shape()
    {
        return Err(Error::shape(
            format!("matching translators {:?}", g_ab.input_shape()),
            format!("{:?} -> {:?}", g_ba.input_shape(), g_ba.output_shape()),
        ));
    }
    Ok(())
}

/// Value of the GAN objective with its gradients for both players.
#[derive(Clone, Debug)]
pub struct GanGrads {
    pub value: f64,
    /// `dV/d(theta_D)`; the discriminator ascends this.
    pub d: Vec<f64>,
    /// `dV/d(theta_G)`; the generator descends this.
    pub g: Vec<f64>,
}

fn real_term(d: &DiscriminatorSpec, cond: Option<&Tensor>, img: &Tensor, need_grads: bool) -> Result<(f64, Vec<f64>)> {
    let (p, cache) = d.forward(d.input(cond, img.clone())?);
    let (v, grad) = mean_log(&p);
    let mut d_grads = Vec::new();
    if need_grads {
        d_grads = vec![0.0; d.params.len()];
        d.backward_into(cache, grad, &mut d_grads);
    }
    Ok((v, d_grads))
}

fn fake_term(
    d: &DiscriminatorSpec,
    g: &GeneratorSpec,
    z: &Tensor,
    need_grads: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (fake, g_cache) = g.forward(z.clone());
    let cond = if d.conditional { Some(z) } else { None };
    let (p, d_cache) = d.forward(d.input(cond, fake)?);
    let (v, grad) = mean_log1m(&p);
    if !need_grads {
        return Ok((v, Vec::new(), Vec::new()));
    }
    let mut d_grads = vec![0.0; d.params.len()];
    let g_in = d.backward_into(d_cache, grad, &mut d_grads);
    let g_img = if d.conditional {
        g_in.split_channels(d.channels).1
    } else {
        g_in
    };
    let mut g_grads = vec![0.0; g.params.len()];
    g.backward_into(g_cache, g_img, &mut g_grads);
    Ok((v, d_grads, g_grads))
}

fn gan_value_impl(
    d: &DiscriminatorSpec,
    g: &GeneratorSpec,
    real: &[(Option<Tensor>, Tensor)],
    gen_inputs: &[Tensor],
    need_grads: bool,
) -> Result<GanGrads> {
    ensure_nonempty("real batch", real.len())?;
    ensure_nonempty("generator input batch", gen_inputs.len())?;
    let exec = Exec::default();
    let reals = par::map(exec, real, |(c, x)| real_term(d, c.as_ref(), x, need_grads));
    let fakes = par::map(exec, gen_inputs, |z| fake_term(d, g, z, need_grads));
    let (nr, nf) = (real.len() as f64, gen_inputs.len() as f64);
    let mut value = 0.0;
    let mut d_grads = vec![0.0; if need_grads { d.params.len() } else { 0 }];
    let mut g_grads = vec![0.0; if need_grads { g.params.len() } else { 0 }];
    for r in reals {
        let (v, gd) = r?;
        value += v / nr;
        d_grads.iter_mut().zip(&gd).for_each(|(a, b)| *a += b / nr);
    }
    for r in fakes {
        let (v, gd, gg) = r?;
        value += v / nf;
        d_grads.iter_mut().zip(&gd).for_each(|(a, b)| *a += b / nf);
        g_grads.iter_mut().zip(&gg).for_each(|(a, b)| *a += b / nf);
    }
    Ok(GanGrads {
        value,
        d: d_grads,
        g: g_grads,
    })
}

fn unconditional_real(d: &DiscriminatorSpec, batch: &[ImageTensor]) -> Result<Vec<(Option<Tensor>, Tensor)>> {
    if d.conditional {
        return Err(Error::InvalidArgument(
            "conditional discriminator: use gan_value_paired".into(),
        ));
    }
    Ok(batch.iter().map(|x| (None, Tensor::from(x))).collect())
}

/// Empirical `V(G, D) = mean log D(x) + mean log(1 - D(G(z)))` over the real
/// batch and the generator-input batch.
pub fn gan_value(
    d: &DiscriminatorSpec,
    g: &GeneratorSpec,
    real_batch: &[ImageTensor],
    gen_input_batch: &[ImageTensor],
) -> Result<f64> {
    let real = unconditional_real(d, real_batch)?;
    let z: Vec<Tensor> = gen_input_batch.iter().map(Tensor::from).collect();
    Ok(gan_value_impl(d, g, &real, &z, false)?.value)
}

/// [`gan_value`] with analytic gradients for both players.
pub fn gan_value_grads(
    d: &DiscriminatorSpec,
    g: &GeneratorSpec,
    real_batch: &[ImageTensor],
    gen_input_batch: &[ImageTensor],
) -> Result<GanGrads> {
    let real = unconditional_real(d, real_batch)?;
    let z: Vec<Tensor> = gen_input_batch.iter().map(Tensor::from).collect();
    gan_value_impl(d, g, &real, &z, true)
}

fn paired_inputs(d: &DiscriminatorSpec, pairs: &[ImagePair]) -> (Vec<(Option<Tensor>, Tensor)>, Vec<Tensor>) {
    let real = pairs
        .iter()
        .map(|p| {
            let cond = d.conditional.then(|| Tensor::from(&p.input));
            (cond, Tensor::from(&p.target))
        })
        .collect();
    let z = pairs.iter().map(|p| Tensor::from(&p.input)).collect();
    (real, z)
}

/// GAN value over paired data: real samples are `(input, target)` and fakes
/// are `(input, G(input))`. Works for conditional and unconditional `D`.
pub fn gan_value_paired(d: &DiscriminatorSpec, g: &GeneratorSpec, pairs: &[ImagePair]) -> Result<f64> {
    let (real, z) = paired_inputs(d, pairs);
    Ok(gan_value_impl(d, g, &real, &z, false)?.value)
}

pub fn gan_value_paired_grads(d: &DiscriminatorSpec, g: &GeneratorSpec, pairs: &[ImagePair]) -> Result<GanGrads> {
    let (real, z) = paired_inputs(d, pairs);
    gan_value_impl(d, g, &real, &z, true)
}

fn pix2pix_impl(
    g: &GeneratorSpec,
    d: &DiscriminatorSpec,
    pair: &ImagePair,
    cfg: &LossConfig,
    need_grads: bool,
) -> Result<(f64, Vec<f64>)> {
    g.check_input(&pair.input)?;
    if pair.target.shape() != g.output_shape() {
        return Err(Error::shape(
            format!("target {:?}", g.output_shape()),
            format!("{:?}", pair.target.shape()),
        ));
    }
    let x = Tensor::from(&pair.input);
    let (fake, cache) = g.forward(x.clone());
    let cond = if d.conditional { Some(&x) } else { None };
    let (scores, d_cache) = d.forward(d.input(cond, fake.clone())?);
    let (adv, g_scores) = generator_adversarial(cfg.adversarial_form, &scores);
    let (l1, g_l1) = mean_abs_diff(&fake, &Tensor::from(&pair.target));
    let loss = adv + cfg.lambda_identity * l1;
    if !need_grads {
        return Ok((loss, Vec::new()));
    }
    let mut scratch = vec![0.0; d.params.len()];
    let g_in = d.backward_into(d_cache, g_scores, &mut scratch);
    let mut g_img = if d.conditional {
        g_in.split_channels(d.channels).1
    } else {
        g_in
    };
    for (a, b) in g_img.data.iter_mut().zip(&g_l1.data) {
        *a += cfg.lambda_identity * b;
    }
    let mut grads = vec![0.0; g.params.len()];
    g.backward_into(cache, g_img, &mut grads);
    Ok((loss, grads))
}

/// `AdversarialLoss + lambda * IdentityLoss` for one pair, where the identity
/// term is the mean absolute deviation between `g(input)` and `target`.
pub fn pix2pix_generator_loss(
    g: &GeneratorSpec,
    d: &DiscriminatorSpec,
    pair: &ImagePair,
    cfg: &LossConfig,
) -> Result<f64> {
    Ok(pix2pix_impl(g, d, pair, cfg, false)?.0)
}

pub fn pix2pix_generator_loss_grads(
    g: &GeneratorSpec,
    d: &DiscriminatorSpec,
    pair: &ImagePair,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    pix2pix_impl(g, d, pair, cfg, true)
}

/// Discriminator loss `-(mean log D(real) + mean log(1 - D(fake)))` for one
/// real and one fake sample sharing the condition `cond`, with its gradient.
pub fn discriminator_loss_grads(
    d: &DiscriminatorSpec,
    cond: Option<&Tensor>,
    real: &Tensor,
    fake: &Tensor,
) -> Result<(f64, Vec<f64>)> {
    let (p_real, c_real) = d.forward(d.input(cond, real.clone())?);
    let (p_fake, c_fake) = d.forward(d.input(cond, fake.clone())?);
    let (v_real, mut g_real) = mean_log(&p_real);
    let (v_fake, mut g_fake) = mean_log1m(&p_fake);
    g_real.data.iter_mut().for_each(|x| *x = -*x);
    g_fake.data.iter_mut().for_each(|x| *x = -*x);
    let mut grads = vec![0.0; d.params.len()];
    d.backward_into(c_real, g_real, &mut grads);
    d.backward_into(c_fake, g_fake, &mut grads);
    Ok((-(v_real + v_fake), grads))
}

/// Terms of the CycleGAN generator objective for one `(a, b)` sample.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CycleTerms {
    pub adversarial: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total: f64,
}

/// Generators and discriminators of a CycleGAN; `d_a` judges domain A and
/// `d_b` judges domain B.
#[derive(Clone, Copy)]
pub struct CycleModels<'a> {
    pub g_ab: &'a GeneratorSpec,
    pub g_ba: &'a GeneratorSpec,
    pub d_a: &'a DiscriminatorSpec,
    pub d_b: &'a DiscriminatorSpec,
}

fn adversarial_through(
    d: &DiscriminatorSpec,
    form: AdversarialForm,
    fake: &Tensor,
    need_grads: bool,
) -> Result<(f64, Option<Tensor>)> {
    let (scores, cache) = d.forward(d.input(None, fake.clone())?);
    let (v, g) = generator_adversarial(form, &scores);
    if !need_grads {
        return Ok((v, None));
    }
    let mut scratch = vec![0.0; d.params.len()];
    Ok((v, Some(d.backward_into(cache, g, &mut scratch))))
}

fn add_scaled(acc: &mut Tensor, g: &Tensor, k: f64) {
    acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += k * b);
}

fn cyclegan_impl(
    m: CycleModels<'_>,
    a: &ImageTensor,
    b: &ImageTensor,
    cfg: &LossConfig,
    need_grads: bool,
) -> Result<(CycleTerms, Vec<f64>, Vec<f64>)> {
    check_translators(m.g_ab, m.g_ba)?;
    m.g_ab.check_input(a)?;
    m.g_ba.check_input(b)?;
    let (at, bt) = (Tensor::from(a), Tensor::from(b));
    let form = cfg.adversarial_form;

    let (fake_b, c_fake_b) = m.g_ab.forward(at.clone());
    let (fake_a, c_fake_a) = m.g_ba.forward(bt.clone());
    let (adv_b, gadv_b) = adversarial_through(m.d_b, form, &fake_b, need_grads)?;
    let (adv_a, gadv_a) = adversarial_through(m.d_a, form, &fake_a, need_grads)?;
    let (rec_a, c_rec_a) = m.g_ba.forward(fake_b);
    let (rec_b, c_rec_b) = m.g_ab.forward(fake_a);
    let (cyc_a, gcyc_a) = mean_abs_diff(&rec_a, &at);
    let (cyc_b, gcyc_b) = mean_abs_diff(&rec_b, &bt);

    let use_identity = cfg.lambda_cycle_identity != 0.0;
    let mut identity = 0.0;
    let mut id_parts = None;
    if use_identity {
        let (id_b, c_id_b) = m.g_ab.forward(bt.clone());
        let (id_a, c_id_a) = m.g_ba.forward(at.clone());
        let (vb, gb) = mean_abs_diff(&id_b, &bt);
        let (va, ga) = mean_abs_diff(&id_a, &at);
        identity = va + vb;
        id_parts = Some((c_id_b, gb, c_id_a, ga));
    }

    let adversarial = adv_a + adv_b;
    let cycle = cyc_a + cyc_b;
    let terms = CycleTerms {
        adversarial,
        cycle,
        identity,
        total: adversarial + cfg.lambda_cycle * cycle + cfg.lambda_cycle_identity * identity,
    };
    if !need_grads {
        return Ok((terms, Vec::new(), Vec::new()));
    }

    let lc = cfg.lambda_cycle;
    let mut grad_ab = vec![0.0; m.g_ab.params.len()];
    let mut grad_ba = vec![0.0; m.g_ba.params.len()];
    // a -> fake_b -> rec_a: g_ba sees the reconstruction, g_ab the translation.
    let mut g = gcyc_a;
    g.data.iter_mut().for_each(|x| *x *= lc);
    let mut g_fake_b = m.g_ba.backward_into(c_rec_a, g, &mut grad_ba);
    add_scaled(&mut g_fake_b, &gadv_b.expect("gradients requested"), 1.0);
    m.g_ab.backward_into(c_fake_b, g_fake_b, &mut grad_ab);
    // b -> fake_a -> rec_b.
    let mut g = gcyc_b;
    g.data.iter_mut().for_each(|x| *x *= lc);
    let mut g_fake_a = m.g_ab.backward_into(c_rec_b, g, &mut grad_ab);
    add_scaled(&mut g_fake_a, &gadv_a.expect("gradients requested"), 1.0);
    m.g_ba.backward_into(c_fake_a, g_fake_a, &mut grad_ba);
    if let Some((c_id_b, mut gb, c_id_a, mut ga)) = id_parts {
        let li = cfg.lambda_cycle_identity;
        gb.data.iter_mut().for_each(|x| *x *= li);
        ga.data.iter_mut().for_each(|x| *x *= li);
        m.g_ab.backward_into(c_id_b, gb, &mut grad_ab);
        m.g_ba.backward_into(c_id_a, ga, &mut grad_ba);
    }
    Ok((terms, grad_ab, grad_ba))
}

/// CycleGAN generator objective for one sample from each domain:
/// adversarial terms in both directions, plus `lambda_cycle` times the
/// round-trip deviations, plus `lambda_cycle_identity` times
/// `|g_ab(b) - b| + |g_ba(a) - a|`.
pub fn cyclegan_generator_loss(
    m: CycleModels<'_>,
    a: &ImageTensor,
    b: &ImageTensor,
    cfg: &LossConfig,
) -> Result<CycleTerms> {
    Ok(cyclegan_impl(m, a, b, cfg, false)?.0)
}

/// [`cyclegan_generator_loss`] with gradients for `(g_ab, g_ba)`.
pub fn cyclegan_generator_loss_grads(
    m: CycleModels<'_>,
    a: &ImageTensor,
    b: &ImageTensor,
    cfg: &LossConfig,
) -> Result<(CycleTerms, Vec<f64>, Vec<f64>)> {
    cyclegan_impl(m, a, b, cfg, true)
}

/// One direction of the round trip: `L1(back(fwd(x)), x)` with gradients.
fn round_trip(
    fwd: &GeneratorSpec,
    back: &GeneratorSpec,
    x: &ImageTensor,
    need_grads: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    fwd.check_input(x)?;
    let xt = Tensor::from(x);
    let (mid, c1) = fwd.forward(xt.clone());
    let (rec, c2) = back.forward(mid);
    let (v, g) = mean_abs_diff(&rec, &xt);
    if !need_grads {
        return Ok((v, Vec::new(), Vec::new()));
    }
    let mut g_back = vec![0.0; back.params.len()];
    let g_mid = back.backward_into(c2, g, &mut g_back);
    let mut g_fwd = vec![0.0; fwd.params.len()];
    fwd.backward_into(c1, g_mid, &mut g_fwd);
    Ok((v, g_fwd, g_back))
}

fn cycle_impl(
    g_ab: &GeneratorSpec,
    g_ba: &GeneratorSpec,
    batch_a: &[ImageTensor],
    batch_b: &[ImageTensor],
    need_grads: bool,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_translators(g_ab, g_ba)?;
    ensure_nonempty("batch_a", batch_a.len())?;
    ensure_nonempty("batch_b", batch_b.len())?;
    let exec = Exec::default();
    let fa = par::map(exec, batch_a, |a| round_trip(g_ab, g_ba, a, need_grads));
    let fb = par::map(exec, batch_b, |b| round_trip(g_ba, g_ab, b, need_grads));
    let (na, nb) = (batch_a.len() as f64, batch_b.len() as f64);
    let mut total = 0.0;
    let mut grad_ab = vec![0.0; if need_grads { g_ab.params.len() } else { 0 }];
    let mut grad_ba = vec![0.0; if need_grads { g_ba.params.len() } else { 0 }];
    for r in fa {
        let (v, gf, gb) = r?;
        total += v / na;
        grad_ab.iter_mut().zip(&gf).for_each(|(a, b)| *a += b / na);
        grad_ba.iter_mut().zip(&gb).for_each(|(a, b)| *a += b / na);
    }
    for r in fb {
        let (v, gf, gb) = r?;
        total += v / nb;
        grad_ba.iter_mut().zip(&gf).for_each(|(a, b)| *a += b / nb);
        grad_ab.iter_mut().zip(&gb).for_each(|(a, b)| *a += b / nb);
    }
    Ok((total, grad_ab, grad_ba))
}

/// `mean_a L1(g_ba(g_ab(a)), a) + mean_b L1(g_ab(g_ba(b)), b)`.
pub fn cycle_consistency_loss(
    g_ab: &GeneratorSpec,
    g_ba: &GeneratorSpec,
    batch_a: &[ImageTensor],
    batch_b: &[ImageTensor],
) -> Result<f64> {
    Ok(cycle_impl(g_ab, g_ba, batch_a, batch_b, false)?.0)
}

/// [`cycle_consistency_loss`] with gradients for `(g_ab, g_ba)`.
pub fn cycle_consistency_loss_grads(
    g_ab: &GeneratorSpec,
    g_ba: &GeneratorSpec,
    batch_a: &[ImageTensor],
    batch_b: &[ImageTensor],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    cycle_impl(g_ab, g_ba, batch_a, batch_b, true)
}
