//! Held-out evaluation into a four-column report and the four-variant
//! ablation grid.

use crate::error::{Error, Result};
use crate::imaging::{self, RasterImage};
use crate::matting::MattingNet;
use crate::metrics::{self, MetricsReport, MetricsRow};
use crate::model::{
    self, AdvRole, CharClassifier, Discriminator, GeneratorColor, ModelSet, Net,
};
use crate::tensorgrad::{Elem, Tensor};
use crate::textgen::{char_for_class, TextSample};
use crate::trainer::{self, Adam, Backend, Dataset, Stage, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean image metrics plus OCR accuracy of a set of SR outputs against
/// their ground truth, averaged per image.
pub(crate) fn score_outputs<F>(
    method: &str,
    dataset: &Dataset,
    classifier: &CharClassifier,
    mut sr: F,
) -> Result<MetricsRow>
where
    F: FnMut(&TextSample) -> Result<RasterImage>,
{
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("empty evaluation dataset".into()));
    }
    let mut rmse_sum = 0.0;
    let mut psnr_sum = 0.0;
    let mut mssim_sum = 0.0;
    let mut preds: Vec<char> = Vec::new();
    let mut labels: Vec<char> = Vec::new();
    for i in 0..dataset.len() {
        let sample = dataset.sample(i)?;
        let out = sr(&sample)?;
        rmse_sum += metrics::rmse(&out, &sample.hr)?;
        psnr_sum += metrics::psnr(&out, &sample.hr)?;
        mssim_sum += metrics::mssim(&out, &sample.hr)?;
        let out_t = imaging::to_float(&out);
        for (&b, &l) in sample.boxes.iter().zip(&sample.labels) {
            let crop = trainer::gt_char_crop(&out_t, b)?;
            let p = classifier.predict(&crop)?[0];
            preds.push(char_for_class(p).unwrap_or('?'));
            labels.push(char_for_class(l).expect("valid label"));
        }
    }
    let n = dataset.len() as f64;
    Ok(MetricsRow {
        method: method.to_string(),
        rmse: rmse_sum / n,
        psnr: psnr_sum / n,
        mssim: mssim_sum / n,
        ocr_percent: metrics::ocr_accuracy(&preds, &labels)?,
    })
}

/// Run the full model over a held-out dataset: decompose, super-resolve,
/// quantize, score.
pub fn evaluate(
    models: &ModelSet,
    dataset: &Dataset,
    cfg: &TrainConfig,
    classifier: &CharClassifier,
    matting_net: Option<&MattingNet>,
) -> Result<MetricsRow> {
    let backend = cfg.backend_enum()?;
    score_outputs("ours", dataset, classifier, |sample| {
        let batch = trainer::make_batch(std::slice::from_ref(sample), backend, matting_net)?;
        let (_, composed) = model::sr_forward(models, &batch.lr_layers)?;
        imaging::to_u8(&composed)
    })
}

/// Plain bicubic upsampling of the LR input, same metrics.
pub fn baseline_bicubic(
    dataset: &Dataset,
    scale: usize,
    classifier: &CharClassifier,
) -> Result<MetricsRow> {
    score_outputs("bicubic", dataset, classifier, |sample| {
        let lr = imaging::to_float(&sample.lr);
        let s = lr.shape();
        let up = imaging::bicubic_resize(&lr, s[2] * scale, s[3] * scale)?;
        imaging::to_u8(&up)
    })
}

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Single generator on the raw image, no decomposition, no char loss.
    Baseline,
    /// Dual branches, no char loss.
    Matting,
    /// Single generator with the char loss.
    CharLoss,
    /// Dual branches with the char loss.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Matting,
        Variant::CharLoss,
        Variant::Full,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Matting => "+matting",
            Variant::CharLoss => "+charloss",
            Variant::Full => "full",
        }
    }

    fn uses_matting(self) -> bool {
        matches!(self, Variant::Matting | Variant::Full)
    }

    fn uses_char_loss(self) -> bool {
        matches!(self, Variant::CharLoss | Variant::Full)
    }
}

pub struct AblationReport {
    pub report: MetricsReport,
    pub dataset_hash: u64,
    pub config_hash: u64,
}

/// Train a single image-to-image generator (no layer decomposition) with
/// the configured stage schedule and evaluate it.
fn run_flat_variant(
    variant: Variant,
    cfg: &TrainConfig,
    train_set: &Dataset,
    holdout: &Dataset,
    classifier: &CharClassifier,
) -> Result<MetricsRow> {
    let mode = cfg.adv_mode_enum()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = GeneratorColor::init(&mut rng, cfg.scale);
    let disc = Discriminator::init(&mut rng, "disc_flat", 3);
    let mut opt_gen = Adam::new(cfg.lr_gen, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_disc = Adam::new(cfg.lr_disc, cfg.beta1, cfg.beta2, cfg.eps);
    let total = cfg.total_steps() as u64;
    for step in 0..total {
        let stage = Stage::for_step(cfg, step);
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..train_set.len()))
            .collect();
        let samples: Vec<TextSample> = idx
            .iter()
            .map(|&i| train_set.sample(i))
            .collect::<Result<_>>()?;
        let batch = trainer::make_batch(&samples, Backend::Oracle, None)?;
        let lr_img = batched_lr(&samples)?;
        let out = gen.forward(&lr_img)?;

        if stage != Stage::Pretrain {
            let d_real = disc.forward(&batch.gt_hr)?;
            let d_fake = disc.forward(&out.detach())?;
            let dl = model::loss_adversarial(&d_real, &d_fake, AdvRole::Discriminator, mode)?;
            dl.backward()?;
            opt_disc.step(&disc.params());
            disc.zero_grads();
            gen.zero_grads();
        }

        let mut total_loss = model::loss_pixel(&out, &batch.gt_hr)?.scale(cfg.w_pixel as Elem);
        if stage != Stage::Pretrain {
            let d_real = disc.forward(&batch.gt_hr)?;
            let d_fake = disc.forward(&out)?;
            let gl = model::loss_adversarial(&d_real, &d_fake, AdvRole::Generator, mode)?;
            total_loss = total_loss.add(&gl.scale(cfg.w_adv as Elem))?;
        }
        if stage == Stage::Refine && variant.uses_char_loss() {
            let cl = model::loss_char(&out, &batch.boxes, &batch.labels, classifier)?;
            total_loss = total_loss.add(&cl.scale(cfg.w_char as Elem))?;
        }
        if !total_loss.item().is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                stage: stage.name().to_string(),
                loss_name: format!("{}_total", variant.label()),
                value: total_loss.item() as f64,
            });
        }
        total_loss.backward()?;
        opt_gen.step(&gen.params());
        gen.zero_grads();
        disc.zero_grads();
    }
    score_outputs(variant.label(), holdout, classifier, |sample| {
        let lr = imaging::to_float(&sample.lr);
        imaging::to_u8(&gen.forward(&lr)?)
    })
}

fn batched_lr(samples: &[TextSample]) -> Result<Tensor> {
    let parts: Vec<Tensor> = samples.iter().map(|s| imaging::to_float(&s.lr)).collect();
    Tensor::concat_batch(&parts)
}

/// Train the dual-branch pipeline for a variant and evaluate it.
fn run_dual_variant(
    variant: Variant,
    cfg: &TrainConfig,
    train_set: &Dataset,
    holdout: &Dataset,
    classifier: &CharClassifier,
) -> Result<MetricsRow> {
    let mut vcfg = cfg.clone();
    if !variant.uses_char_loss() {
        vcfg.w_char = 0.0;
        vcfg.w_feature = 0.0;
        vcfg.feature_loss = false;
    }
    let mut t = Trainer::new(&vcfg)?;
    for (name, p) in &t.models.classifier.params() {
        let src = classifier
            .params()
            .into_iter()
            .find(|(n, _)| n == name)
            .expect("same classifier topology");
        p.set_data(&src.1.data());
    }
    t.classifier_ready = true;
    let total = vcfg.total_steps() as u64;
    while t.step < total {
        let stage = Stage::for_step(&vcfg, t.step);
        let idx = t.draw_indices(train_set.len());
        let samples: Vec<TextSample> = idx
            .iter()
            .map(|&i| train_set.sample(i))
            .collect::<Result<_>>()?;
        let batch = trainer::make_batch(&samples, Backend::Oracle, None)?;
        t.train_step(&batch, stage)?;
    }
    score_outputs(variant.label(), holdout, classifier, |sample| {
        let batch = trainer::make_batch(std::slice::from_ref(sample), Backend::Oracle, None)?;
        let (_, composed) = model::sr_forward(&t.models, &batch.lr_layers)?;
        imaging::to_u8(&composed)
    })
}

/// The four-variant grid under one seed and one dataset.
pub fn ablation_run(cfg: &TrainConfig, classifier: &CharClassifier) -> Result<AblationReport> {
    let train_set = Dataset::load(&cfg.train_dir)?;
    let holdout = Dataset::load(&cfg.holdout_dir)?;
    let dataset_hash = train_set.hash()?;
    let mut report = MetricsReport::default();
    for variant in Variant::ALL {
        let row = if variant.uses_matting() {
            run_dual_variant(variant, cfg, &train_set, &holdout, classifier)?
        } else {
            run_flat_variant(variant, cfg, &train_set, &holdout, classifier)?
        };
        report.push(row);
    }
    Ok(AblationReport {
        report,
        dataset_hash,
        config_hash: cfg.hash(),
    })
}

#[cfg(test)]
mod tests;
