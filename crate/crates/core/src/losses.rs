//! Translation and segmentation objectives: least-squares adversarial,
//! cycle consistency, PatchNCE, soft Dice and the weighted joint total.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{gradient_check, GradCheckReport, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversarialRole {
    ForDiscriminator,
    ForGenerator,
}

/// Least-squares GAN loss on discriminator patch maps.
///
/// Discriminator: `(mean((d_real - 1)^2) + mean(d_fake^2)) / 2`.
/// Generator: `mean((d_fake - 1)^2)`; `d_real` is not used.
pub fn adversarial_loss(d_real: &Tensor, d_fake: &Tensor, role: AdversarialRole) -> Result<Tensor> {
    match role {
        AdversarialRole::ForDiscriminator => {
            let real = d_real.add_scalar(-1.0).square().mean();
            let fake = d_fake.square().mean();
            Ok(real.add(&fake)?.mul_scalar(0.5))
        }
        AdversarialRole::ForGenerator => Ok(d_fake.add_scalar(-1.0).square().mean()),
    }
}

/// `mean|x_rec - x| + mean|y_rec - y|`.
pub fn cycle_loss(x: &Tensor, x_rec: &Tensor, y: &Tensor, y_rec: &Tensor) -> Result<Tensor> {
    let fx = x_rec.sub(x)?.abs().mean();
    let fy = y_rec.sub(y)?.abs().mean();
    fx.add(&fy)
}

/// Weight of the cycle term in the two-sided baseline objective. Only used
/// to check the cycle path, not by the joint objective.
pub const CYCLE_WEIGHT: f64 = 10.0;

/// Generator objective of the two-sided baseline:
/// `adv(G) + adv(F) + CYCLE_WEIGHT * cycle`.
pub fn cyclegan_generator_total(adv_g: &Tensor, adv_f: &Tensor, cycle: &Tensor) -> Result<Tensor> {
    adv_g.add(adv_f)?.add(&cycle.mul_scalar(CYCLE_WEIGHT))
}

/// Two-layer perceptron `relu(x W1 + b1) W2 + b2` projecting `[p, c]` patch
/// features to `[p, d]` embeddings.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ProjectionHead {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> ProjectionHead {
        let mut init = |fan_in: usize, n: usize| -> Vec<f64> {
            let s = (6.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-s..s)).collect()
        };
        ProjectionHead {
            w1: Tensor::param(init(in_dim, in_dim * out_dim), &[in_dim, out_dim]).expect("shape"),
            b1: Tensor::param(vec![0.0; out_dim], &[out_dim]).expect("shape"),
            w2: Tensor::param(init(out_dim, out_dim * out_dim), &[out_dim, out_dim]).expect("shape"),
            b2: Tensor::param(vec![0.0; out_dim], &[out_dim]).expect("shape"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.w1)?.add_row_bias(&self.b1)?.relu().matmul(&self.w2)?.add_row_bias(&self.b2)
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![self.w1.clone(), self.b1.clone(), self.w2.clone(), self.b2.clone()]
    }
}

/// InfoNCE over matched rows: row `i` of `queries` should pick row `i` of
/// `keys` against every other row of `keys`. Both are `[p, d]` and are
/// l2-normalized here; logits are cosine similarities over `tau`.
pub fn patchnce_from_embeddings(queries: &Tensor, keys: &Tensor, tau: f64) -> Result<Tensor> {
    let &[p, _] = queries.shape() else {
        return Err(TensorError::Invalid(format!("queries must be 2-D, got {:?}", queries.shape())));
    };
    if queries.shape() != keys.shape() {
        return Err(TensorError::Shape { op: "patchnce", lhs: queries.shape().to_vec(), rhs: keys.shape().to_vec() });
    }
    if p < 2 {
        return Err(TensorError::Invalid(format!("PatchNCE needs at least 2 patches, got {p}")));
    }
    if tau <= 0.0 {
        return Err(TensorError::Invalid(format!("temperature must be positive, got {tau}")));
    }
    let q = queries.l2_normalize(1)?;
    let k = keys.l2_normalize(1)?;
    let logits = q.matmul(&k.transpose2d()?)?.mul_scalar(1.0 / tau);
    let log_probs = logits.log_softmax(1)?;
    let mut eye = vec![0.0; p * p];
    for i in 0..p {
        eye[i * p + i] = 1.0;
    }
    let eye = Tensor::new(eye, &[p, p])?;
    Ok(log_probs.mul(&eye)?.sum().mul_scalar(-1.0 / p as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchNceOptions {
    pub tau: f64,
    pub num_patches: usize,
    /// Stop gradients through the key (input-side) embeddings.
    pub detach_keys: bool,
}

impl Default for PatchNceOptions {
    fn default() -> Self {
        PatchNceOptions { tau: 0.07, num_patches: 64, detach_keys: true }
    }
}

/// `[1, c, h, w]` feature map to `[h*w, c]` rows, one per location.
fn locations(feat: &Tensor) -> Result<Tensor> {
    let &[1, c, h, w] = feat.shape() else {
        return Err(TensorError::Invalid(format!("expected a [1, c, h, w] feature map, got {:?}", feat.shape())));
    };
    feat.reshape(&[c, h * w])?.transpose2d()
}

/// PatchNCE between input features `src` and output features `gen`, one
/// entry per encoder layer, each `[1, c, h, w]`. The same `num_patches`
/// locations (drawn with `rng`) are used for both sides of a layer; the
/// loss is averaged over layers.
pub fn patchnce_loss<R: Rng>(
    src: &[Tensor],
    gen: &[Tensor],
    heads: &[ProjectionHead],
    options: &PatchNceOptions,
    rng: &mut R,
) -> Result<Tensor> {
    if src.len() != gen.len() || src.len() != heads.len() || src.is_empty() {
        return Err(TensorError::Invalid(format!(
            "need matching non-empty layer lists, got {} src / {} gen / {} heads",
            src.len(),
            gen.len(),
            heads.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for ((s, g), head) in src.iter().zip(gen).zip(heads) {
        if s.shape() != g.shape() {
            return Err(TensorError::Shape { op: "patchnce", lhs: s.shape().to_vec(), rhs: g.shape().to_vec() });
        }
        let n_loc = s.shape()[2] * s.shape()[3];
        let p = options.num_patches.min(n_loc);
        if p < 2 {
            return Err(TensorError::Invalid(format!("PatchNCE needs at least 2 patches, got {p}")));
        }
        let mut idx = sample(rng, n_loc, p).into_vec();
        idx.sort_unstable();
        let q = head.forward(&locations(g)?.index_select(&idx)?)?;
        let mut k = head.forward(&locations(s)?.index_select(&idx)?)?;
        if options.detach_keys {
            k = k.detach();
        }
        let l = patchnce_from_embeddings(&q, &k, options.tau)?;
        total = Some(match total {
            Some(t) => t.add(&l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one layer").mul_scalar(1.0 / src.len() as f64))
}

pub const DEFAULT_DICE_SMOOTH: f64 = 1.0;

/// Soft Dice loss `1 - (2 sum(p g) + s) / (sum p + sum g + s)` per batch
/// item (leading axis), averaged over the batch.
pub fn dice_segmentation_loss(pred: &Tensor, gt: &Tensor, smooth: f64) -> Result<Tensor> {
    if pred.shape() != gt.shape() || pred.shape().is_empty() {
        return Err(TensorError::Shape { op: "dice loss", lhs: pred.shape().to_vec(), rhs: gt.shape().to_vec() });
    }
    let n = pred.shape()[0];
    let mut total: Option<Tensor> = None;
    for i in 0..n {
        let p = pred.slice(0, i, i + 1)?;
        let g = gt.slice(0, i, i + 1)?;
        let num = p.mul(&g)?.sum().mul_scalar(2.0).add_scalar(smooth);
        let den = p.sum().add(&g.sum())?.add_scalar(smooth);
        let term = num.div(&den)?.neg().add_scalar(1.0);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty batch").mul_scalar(1.0 / n as f64))
}

/// Term weights of the joint objective and its optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub lambda_s: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub num_patches: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_x: 0.5, lambda_y: 0.5, lambda_s: 1e-3, tau: 0.07, learning_rate: 1e-5, num_patches: 64 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let all = [self.lambda_x, self.lambda_y, self.lambda_s, self.learning_rate];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(format!("loss weights must be finite and non-negative: {self:?}"));
        }
        if !(self.tau > 0.0) {
            return Err(format!("temperature must be positive, got {}", self.tau));
        }
        if self.num_patches < 2 {
            return Err(format!("need at least 2 patches, got {}", self.num_patches));
        }
        Ok(())
    }
}

pub struct CutSegComponents {
    pub gen_adv: Tensor,
    pub nce_x: Tensor,
    pub nce_y: Tensor,
    pub seg: Tensor,
}

/// Values of each term, unweighted, plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gen_adv: f64,
    pub nce_x: f64,
    pub nce_y: f64,
    pub seg: f64,
    pub total: f64,
}

/// `gen_adv + lambda_x nce_x + lambda_y nce_y + lambda_s seg`.
pub fn cutseg_total(c: &CutSegComponents, w: &LossWeights) -> Result<(Tensor, LossBreakdown)> {
    for (name, t) in [("gen_adv", &c.gen_adv), ("nce_x", &c.nce_x), ("nce_y", &c.nce_y), ("seg", &c.seg)] {
        if t.numel() != 1 {
            return Err(TensorError::Invalid(format!("{name} must be scalar, got {:?}", t.shape())));
        }
    }
    let mut total = c.gen_adv.add(&c.nce_x.mul_scalar(w.lambda_x))?.add(&c.nce_y.mul_scalar(w.lambda_y))?;
    // A zero weight drops the term from the graph entirely.
    if w.lambda_s != 0.0 {
        total = total.add(&c.seg.mul_scalar(w.lambda_s))?;
    }
    let breakdown = LossBreakdown {
        gen_adv: c.gen_adv.item(),
        nce_x: c.nce_x.item(),
        nce_y: c.nce_y.item(),
        seg: c.seg.item(),
        total: total.item(),
    };
    Ok((total, breakdown))
}

/// Finite-difference check of one loss on random inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCheck {
    pub name: String,
    pub report: GradCheckReport,
}

pub const LOSS_NAMES: [&str; 5] = ["adversarial", "cycle", "patchnce", "dice", "cutseg_total"];

/// Gradient-checks every loss on small random inputs drawn from `seed`.
/// All inputs (including projection-head weights) are differentiated;
/// keys are not detached so both PatchNCE branches are covered.
pub fn check_all_losses(seed: u64, epsilon: f64) -> Result<Vec<LossCheck>> {
    let mut rng = crate::seed::rng(seed);
    let mut param = |shape: &[usize], lo: f64, hi: f64| {
        let n = shape.iter().product();
        Tensor::param((0..n).map(|_| rng.random_range(lo..hi)).collect(), shape).expect("shape")
    };
    let d_real = param(&[1, 1, 4, 4], -0.5, 1.5);
    let d_fake = param(&[1, 1, 4, 4], -0.5, 1.5);
    let (x, xr) = (param(&[1, 3, 4, 4], -1.0, 1.0), param(&[1, 3, 4, 4], -1.0, 1.0));
    let (y, yr) = (param(&[1, 3, 4, 4], -1.0, 1.0), param(&[1, 3, 4, 4], -1.0, 1.0));
    let src = [param(&[1, 4, 4, 4], -1.0, 1.0), param(&[1, 6, 2, 2], -1.0, 1.0)];
    let gen = [param(&[1, 4, 4, 4], -1.0, 1.0), param(&[1, 6, 2, 2], -1.0, 1.0)];
    let logits = param(&[2, 1, 4, 4], -2.0, 2.0);
    let mut head_rng = crate::seed::rng(crate::seed::derive(seed, 1));
    let heads = [ProjectionHead::new(4, 8, &mut head_rng), ProjectionHead::new(6, 8, &mut head_rng)];
    let mut mask_rng = crate::seed::rng(crate::seed::derive(seed, 2));
    let gt = Tensor::new((0..32).map(|_| if mask_rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect(), &[2, 1, 4, 4])?;

    let opts = PatchNceOptions { tau: 0.07, num_patches: 6, detach_keys: false };
    let sample_seed = crate::seed::derive(seed, 3);
    let nce = |src: &[Tensor], gen: &[Tensor], heads: &[ProjectionHead]| {
        patchnce_loss(src, gen, heads, &opts, &mut crate::seed::rng(sample_seed))
    };
    let head_params: Vec<Tensor> = heads.iter().flat_map(ProjectionHead::params).collect();
    let rebuild_heads = |v: &[Tensor]| -> Vec<ProjectionHead> {
        v.chunks(4).map(|c| ProjectionHead { w1: c[0].clone(), b1: c[1].clone(), w2: c[2].clone(), b2: c[3].clone() }).collect()
    };

    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| out.push(LossCheck { name: name.to_string(), report });

    push(
        "adversarial",
        gradient_check(
            |v| {
                let d = adversarial_loss(&v[0], &v[1], AdversarialRole::ForDiscriminator)?;
                let g = adversarial_loss(&v[0], &v[1], AdversarialRole::ForGenerator)?;
                d.add(&g.mul_scalar(0.7))
            },
            &[d_real.clone(), d_fake.clone()],
            epsilon,
        )?,
    );
    push("cycle", gradient_check(|v| cycle_loss(&v[0], &v[1], &v[2], &v[3]), &[x, xr, y, yr], epsilon)?);

    let mut nce_inputs = vec![src[0].clone(), src[1].clone(), gen[0].clone(), gen[1].clone()];
    nce_inputs.extend(head_params.iter().cloned());
    push(
        "patchnce",
        gradient_check(|v| nce(&v[0..2], &v[2..4], &rebuild_heads(&v[4..])), &nce_inputs, epsilon)?,
    );
    push(
        "dice",
        gradient_check(|v| dice_segmentation_loss(&v[0].sigmoid(), &gt, DEFAULT_DICE_SMOOTH), &[logits.clone()], epsilon)?,
    );

    let mut all = vec![d_fake, logits];
    all.extend(nce_inputs);
    let weights = LossWeights::default();
    push(
        "cutseg_total",
        gradient_check(
            |v| {
                let heads = rebuild_heads(&v[6..]);
                let c = CutSegComponents {
                    gen_adv: adversarial_loss(&v[0], &v[0], AdversarialRole::ForGenerator)?,
                    nce_x: nce(&v[2..4], &v[4..6], &heads)?,
                    nce_y: nce(&v[4..6], &v[2..4], &heads)?,
                    seg: dice_segmentation_loss(&v[1].sigmoid(), &gt, DEFAULT_DICE_SMOOTH)?,
                };
                Ok(cutseg_total(&c, &weights)?.0)
            },
            &all,
            epsilon,
        )?,
    );
    Ok(out)
}
