use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::domains::{real_sample, synthetic_sample, validation_sample, ToyImage, ToySample};
use super::nets::{Discriminator, Generator, Segmenter};
use crate::image::Mask;
use crate::losses::{
    adversarial_loss, cutseg_total, dice_segmentation_loss, patchnce_loss, AdversarialRole, CutSegComponents,
    LossBreakdown, LossWeights, PatchNceOptions, ProjectionHead, DEFAULT_DICE_SMOOTH,
};
use crate::metrics::{confusion_counts, dice, iou};
use crate::seed::{derive, rng, stream_seed, Stream};
use crate::tensor::{Adam, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite loss at step {}: {:?}", .0.step, .0.losses)]
    NonFinite(Box<StateDump>),
}

/// State captured when training aborts on a non-finite loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateDump {
    pub step: usize,
    pub losses: StepLosses,
    /// L2 norm of every parameter tensor, in checksum order.
    pub param_norms: Vec<f64>,
    pub synthetic_index: usize,
    pub real_index: usize,
}

/// Where the real-style training images come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    Real,
    /// Use synthetic images as the "real" set (translation should stay
    /// close to identity).
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub image_size: usize,
    /// Labelled synthetic training images.
    pub synthetic_count: usize,
    /// Held-out synthetic images used for validation.
    pub validation_count: usize,
    /// Real-style images, taken from the pool starting at `reference_index`.
    pub real_count: usize,
    pub reference_index: usize,
    pub reference_source: ReferenceSource,
    pub steps: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub generator_width: usize,
    pub discriminator_width: usize,
    pub segmenter_width: usize,
    pub head_width: usize,
    pub validate_every: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            image_size: 64,
            synthetic_count: 256,
            validation_count: 64,
            real_count: 64,
            reference_index: 0,
            reference_source: ReferenceSource::Real,
            steps: 2000,
            seed: 0,
            weights: LossWeights { learning_rate: 1e-3, ..LossWeights::default() },
            generator_width: 8,
            discriminator_width: 8,
            segmenter_width: 8,
            head_width: 64,
            validate_every: 500,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: String| Err(ToyError::InvalidConfig(m));
        if self.image_size < 16 || self.image_size % 8 != 0 {
            return bad(format!("image_size must be a multiple of 8 and at least 16, got {}", self.image_size));
        }
        for (name, v) in [
            ("synthetic_count", self.synthetic_count),
            ("validation_count", self.validation_count),
            ("real_count", self.real_count),
            ("generator_width", self.generator_width),
            ("discriminator_width", self.discriminator_width),
            ("segmenter_width", self.segmenter_width),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        self.weights.validate().map_err(ToyError::InvalidConfig)?;
        if self.weights.num_patches > self.image_size * self.image_size {
            return bad(format!("num_patches {} exceeds the pixel count", self.weights.num_patches));
        }
        Ok(())
    }

    pub fn single_reference(&self) -> bool {
        self.real_count == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: usize,
    pub d_loss: f64,
    pub gen_adv: f64,
    pub nce_x: f64,
    pub nce_y: f64,
    pub seg: f64,
    pub total: f64,
}

impl StepLosses {
    fn new(step: usize, d_loss: f64, b: LossBreakdown) -> Self {
        StepLosses { step, d_loss, gen_adv: b.gen_adv, nce_x: b.nce_x, nce_y: b.nce_y, seg: b.seg, total: b.total }
    }

    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.gen_adv, self.nce_x, self.nce_y, self.seg, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    /// Segmenter on translated held-out synthetic images.
    pub mdice: f64,
    pub miou: f64,
    /// Segmenter applied directly to real-style images (diagnostic).
    pub real_mdice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: ToyConfig,
    pub single_reference: bool,
    pub reference_source: ReferenceSource,
    /// Pool indices of the real-style images used for training.
    pub reference_images: Vec<usize>,
    pub losses: Vec<StepLosses>,
    pub validation: Vec<ValidationPoint>,
    pub baseline_mdice: f64,
    pub final_mdice: f64,
    pub final_miou: f64,
    /// Mean |G(x) - x| over the validation images after training.
    pub generator_l1: f64,
    /// Not serialized, so that reports of identical runs are identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
    pub init_checksum: String,
    pub param_checksum: String,
    /// Checksums of the segmenter alone, before and after training.
    pub segmenter_checksums: (String, String),
}

impl TrainReport {
    /// Everything except wall-clock time, for determinism checks.
    pub fn same_run(&self, other: &TrainReport) -> bool {
        let strip = |r: &TrainReport| TrainReport { wall_clock_seconds: 0.0, ..r.clone() };
        strip(self) == strip(other)
    }

    pub fn write_losses_csv<W: std::io::Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        for l in &self.losses {
            w.serialize(l)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct ToyModels {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub heads: Vec<ProjectionHead>,
    pub segmenter: Segmenter,
}

impl ToyModels {
    pub fn new(config: &ToyConfig) -> ToyModels {
        let mut r = rng(derive(stream_seed(config.seed, Stream::Training), 1));
        let generator = Generator::new(config.generator_width, &mut r);
        let discriminator = Discriminator::new(config.discriminator_width, &mut r);
        let heads = generator.feature_channels().iter().map(|&c| ProjectionHead::new(c, config.head_width, &mut r)).collect();
        let segmenter = Segmenter::new(config.segmenter_width, 0.06, &mut r);
        ToyModels { generator, discriminator, heads, segmenter }
    }

    /// Generator, projection heads and segmenter: everything the joint
    /// objective updates.
    pub fn joint_params(&self) -> Vec<Tensor> {
        let mut p = self.generator.params();
        p.extend(self.heads.iter().flat_map(ProjectionHead::params));
        p.extend(self.segmenter.params());
        p
    }

    pub fn all_params(&self) -> Vec<Tensor> {
        let mut p = self.joint_params();
        p.extend(self.discriminator.params());
        p
    }

    pub fn checksum(&self) -> String {
        checksum(&self.all_params())
    }
}

/// SHA-256 over the little-endian bytes of every value, in order.
pub fn checksum(params: &[Tensor]) -> String {
    let mut h = Sha256::new();
    for t in params {
        for v in t.data().iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl ToyModels {
    fn param_norms(&self) -> Vec<f64> {
        self.all_params().iter().map(|t| t.data().iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    pub fn discriminator_loss(&self, x: &Tensor, y: &Tensor) -> Result<Tensor, TensorError> {
        let fake = self.generator.forward(x)?.image.detach();
        adversarial_loss(&self.discriminator.forward(y)?, &self.discriminator.forward(&fake)?, AdversarialRole::ForDiscriminator)
    }

    /// Joint objective on one synthetic image `x` with mask `m` and one
    /// real-style image `y`. With a zero segmentation weight the segmenter
    /// only sees a detached copy, for logging.
    pub fn joint_loss<R: Rng>(
        &self,
        x: &Tensor,
        m: &Tensor,
        y: &Tensor,
        w: &LossWeights,
        rng: &mut R,
    ) -> Result<(Tensor, LossBreakdown), TensorError> {
        let opts = PatchNceOptions { tau: w.tau, num_patches: w.num_patches, detach_keys: true };
        let gx = self.generator.forward(x)?;
        let score = self.discriminator.forward(&gx.image)?;
        let gen_adv = adversarial_loss(&score, &score, AdversarialRole::ForGenerator)?;
        let nce_x = patchnce_loss(&gx.features, &self.generator.encode(&gx.image)?, &self.heads, &opts, rng)?;
        let gy = self.generator.forward(y)?;
        let nce_y = patchnce_loss(&gy.features, &self.generator.encode(&gy.image)?, &self.heads, &opts, rng)?;
        let seg_input = if w.lambda_s > 0.0 { gx.image.clone() } else { gx.image.detach() };
        let seg = dice_segmentation_loss(&self.segmenter.forward(&seg_input)?, m, DEFAULT_DICE_SMOOTH)?;
        cutseg_total(&CutSegComponents { gen_adv, nce_x, nce_y, seg }, w)
    }
}

pub fn image_tensor(img: &ToyImage) -> Tensor {
    Tensor::new(img.data.clone(), &[1, 3, img.size, img.size]).expect("CHW image")
}

pub fn mask_tensor(mask: &Mask) -> Tensor {
    Tensor::new(mask.data.iter().map(|&b| b as u8 as f64).collect(), &[1, 1, mask.height, mask.width]).expect("mask")
}

fn threshold(prob: &Tensor, size: usize) -> Mask {
    let p = prob.data();
    Mask::from_fn(size, size, |x, y| p[y * size + x] >= 0.5)
}

/// Mean Dice and IoU of `S(G(x))` over `samples`, and of `S(y)` over
/// `real`.
fn validate(models: &ToyModels, samples: &[ToySample], real: &[ToySample], step: usize) -> Result<ValidationPoint, TensorError> {
    let (mut d, mut i) = (0.0, 0.0);
    for s in samples {
        let fake = models.generator.forward(&image_tensor(&s.image))?.image;
        let c = confusion_counts(&threshold(&models.segmenter.forward(&fake)?, s.image.size), &s.mask).expect("same size");
        d += dice(&c);
        i += iou(&c);
    }
    let mut rd = 0.0;
    for s in real {
        let pred = threshold(&models.segmenter.forward(&image_tensor(&s.image))?, s.image.size);
        rd += dice(&confusion_counts(&pred, &s.mask).expect("same size"));
    }
    let n = samples.len() as f64;
    Ok(ValidationPoint { step, mdice: d / n, miou: i / n, real_mdice: rd / real.len().max(1) as f64 })
}

/// Called with the step and the translation of the first validation image.
pub type Snapshot<'a> = &'a mut dyn FnMut(usize, &ToyImage);

pub fn train_cutseg_toy(config: &ToyConfig) -> Result<TrainReport, ToyError> {
    train_with_snapshots(config, 0, &mut |_, _| {})
}

/// Training with a snapshot of the translated first validation image every
/// `every` steps (0 disables).
pub fn train_with_snapshots(config: &ToyConfig, every: usize, snapshot: Snapshot) -> Result<TrainReport, ToyError> {
    config.validate()?;
    let start = Instant::now();
    let size = config.image_size;
    let data_seed = stream_seed(config.seed, Stream::Toy);
    let synthetic: Vec<ToySample> = (0..config.synthetic_count).map(|i| synthetic_sample(data_seed, i, size)).collect();
    let validation: Vec<ToySample> = (0..config.validation_count).map(|i| validation_sample(data_seed, i, size)).collect();
    let real_check: Vec<ToySample> = (0..config.validation_count).map(|i| real_sample(data_seed, usize::MAX - i, size)).collect();
    let reference_images: Vec<usize> = (config.reference_index..config.reference_index + config.real_count).collect();
    let real: Vec<Tensor> = reference_images
        .iter()
        .map(|&i| match config.reference_source {
            ReferenceSource::Real => image_tensor(&real_sample(data_seed, i, size).image),
            ReferenceSource::Synthetic => image_tensor(&synthetic_sample(data_seed, i, size).image),
        })
        .collect();
    let xs: Vec<Tensor> = synthetic.iter().map(|s| image_tensor(&s.image)).collect();
    let ms: Vec<Tensor> = synthetic.iter().map(|s| mask_tensor(&s.mask)).collect();

    let models = ToyModels::new(config);
    let init_checksum = models.checksum();
    let init_segmenter = checksum(&models.segmenter.params());
    let mut train_rng = rng(derive(stream_seed(config.seed, Stream::Training), 2));
    let w = &config.weights;
    let mut opt_d = Adam::new(models.discriminator.params(), w.learning_rate);
    let mut opt_g = Adam::new(models.joint_params(), w.learning_rate);

    let first = validate(&models, &validation, &real_check, 0)?;
    let mut validation_points = vec![first];
    let mut losses = Vec::with_capacity(config.steps + 1);
    {
        let d = models.discriminator_loss(&xs[0], &real[0])?.item();
        let (_, b) = models.joint_loss(&xs[0], &ms[0], &real[0], w, &mut train_rng)?;
        losses.push(StepLosses::new(0, d, b));
    }
    for step in 1..=config.steps {
        let i = train_rng.random_range(0..xs.len());
        let j = train_rng.random_range(0..real.len());

        opt_d.zero_grad();
        let d_loss = models.discriminator_loss(&xs[i], &real[j])?;
        d_loss.backward()?;
        opt_d.step();

        opt_g.zero_grad();
        let (total, b) = models.joint_loss(&xs[i], &ms[i], &real[j], w, &mut train_rng)?;
        let record = StepLosses::new(step, d_loss.item(), b);
        if !record.is_finite() {
            let dump = StateDump {
                step,
                losses: record,
                param_norms: models.param_norms(),
                synthetic_index: i,
                real_index: reference_images[j],
            };
            return Err(ToyError::NonFinite(Box::new(dump)));
        }
        total.backward()?;
        opt_g.step();
        losses.push(record);

        if every > 0 && step % every == 0 {
            let out = models.generator.forward(&image_tensor(&validation[0].image))?.image;
            snapshot(step, &ToyImage { size, data: out.to_vec() });
        }
        if (config.validate_every > 0 && step % config.validate_every == 0) && step != config.steps {
            validation_points.push(validate(&models, &validation, &real_check, step)?);
        }
    }
    if config.steps > 0 {
        validation_points.push(validate(&models, &validation, &real_check, config.steps)?);
    }
    let last = *validation_points.last().expect("at least the initial point");

    let mut l1 = 0.0;
    for s in &validation {
        let x = image_tensor(&s.image);
        l1 += models.generator.forward(&x)?.image.sub(&x)?.abs().mean().item();
    }

    Ok(TrainReport {
        config: config.clone(),
        single_reference: config.single_reference(),
        reference_source: config.reference_source,
        reference_images,
        losses,
        validation: validation_points,
        baseline_mdice: first.mdice,
        final_mdice: last.mdice,
        final_miou: last.miou,
        generator_l1: l1 / validation.len() as f64,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        init_checksum,
        param_checksum: models.checksum(),
        segmenter_checksums: (init_segmenter, checksum(&models.segmenter.params())),
    })
}

/// Sample mean and sample standard deviation (`n - 1` denominator; 0 for
/// fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReferenceRun {
    pub reference_index: usize,
    pub final_mdice: f64,
    pub final_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReferenceReport {
    pub runs: Vec<SingleReferenceRun>,
    pub mean_mdice: f64,
    pub std_mdice: f64,
}

/// One single-reference training run per reference image
/// `first..first + repeats`, all else equal. Runs execute in parallel.
pub fn single_reference_protocol(base: &ToyConfig, first: usize, repeats: usize) -> Result<SingleReferenceReport, ToyError> {
    let runs: Vec<SingleReferenceRun> = (first..first + repeats)
        .into_par_iter()
        .map(|r| {
            let cfg = ToyConfig { real_count: 1, reference_index: r, reference_source: ReferenceSource::Real, ..base.clone() };
            let rep = train_cutseg_toy(&cfg)?;
            Ok(SingleReferenceRun { reference_index: r, final_mdice: rep.final_mdice, final_miou: rep.final_miou })
        })
        .collect::<Result<_, ToyError>>()?;
    let (mean_mdice, std_mdice) = mean_std(&runs.iter().map(|r| r.final_mdice).collect::<Vec<_>>());
    Ok(SingleReferenceReport { runs, mean_mdice, std_mdice })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub size: usize,
    pub seeds: Vec<u64>,
    pub mdice: Vec<f64>,
    pub mean_mdice: f64,
    pub std_mdice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn runs(&self) -> usize {
        self.rows.iter().map(|r| r.mdice.len()).sum()
    }

    /// `size,mean_mdice,std_mdice,runs,mdice_per_seed` with seeds separated
    /// by `;`.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["size", "mean_mdice", "std_mdice", "runs", "mdice_per_seed"])?;
        for r in &self.rows {
            let per: Vec<String> = r.mdice.iter().map(f64::to_string).collect();
            w.write_record([
                r.size.to_string(),
                r.mean_mdice.to_string(),
                r.std_mdice.to_string(),
                r.mdice.len().to_string(),
                per.join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains one model per (size, seed) cell with seeds `base.seed + k` for
/// `k < seeds`. Validation images do not depend on the training-set size,
/// so every size is scored on the same held-out set for a given seed.
pub fn ablation_dataset_size(base: &ToyConfig, sizes: &[usize], seeds: usize) -> Result<AblationReport, ToyError> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ToyError::InvalidConfig(format!("sizes must be non-empty and strictly ascending, got {sizes:?}")));
    }
    if seeds == 0 {
        return Err(ToyError::InvalidConfig("need at least one seed".into()));
    }
    let cells: Vec<(usize, u64)> =
        sizes.iter().flat_map(|&s| (0..seeds as u64).map(move |k| (s, base.seed.wrapping_add(k)))).collect();
    let results: Vec<f64> = cells
        .par_iter()
        .map(|&(size, seed)| {
            let cfg = ToyConfig { synthetic_count: size, seed, ..base.clone() };
            Ok(train_cutseg_toy(&cfg)?.final_mdice)
        })
        .collect::<Result<_, ToyError>>()?;
    let rows = sizes
        .iter()
        .enumerate()
        .map(|(k, &size)| {
            let mdice = results[k * seeds..(k + 1) * seeds].to_vec();
            let (mean_mdice, std_mdice) = mean_std(&mdice);
            AblationRow { size, seeds: cells[k * seeds..(k + 1) * seeds].iter().map(|c| c.1).collect(), mdice, mean_mdice, std_mdice }
        })
        .collect();
    Ok(AblationReport { rows })
}
