//! Deterministic training schedules for the classifier, the matting net and
//! the two-branch GAN, plus binary checkpoint persistence.

use crate::error::{Error, Result};
use crate::imaging;
use crate::matting::{self, LayerDecomposition, MattingNet, Resolution, Trimap};
use crate::model::{
    self, AdvMode, AdvRole, AlphaInput, CharClassifier, ModelSet, Net,
};
use crate::tensorgrad::{Elem, Tensor};
use crate::textgen::{self, ManifestEntry, TextSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub train_dir: String,
    pub holdout_dir: String,
    pub out_dir: String,
    /// Super-resolution factor.
    pub scale: usize,
    pub batch_size: usize,
    pub pretrain_steps: usize,
    pub gan_steps: usize,
    pub refine_steps: usize,
    pub classifier_steps: usize,
    pub matting_steps: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub lr_classifier: f64,
    pub lr_matting: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub w_pixel: f64,
    pub w_adv: f64,
    pub w_char: f64,
    pub w_feature: f64,
    pub feature_loss: bool,
    /// "standard" or "relativistic".
    pub adv_mode: String,
    /// "stacked" or "sharpened".
    pub alpha_input: String,
    pub sharpen_lambda: f64,
    /// Decomposition backend: "oracle" or "learned".
    pub backend: String,
    pub checkpoint_interval: usize,
    /// Classifier checkpoint consumed by the refine stage and evaluation.
    pub classifier_path: String,
    /// Matting net checkpoint for the learned backend.
    pub matting_path: String,
    pub trimap_lo: f64,
    pub trimap_hi: f64,
    pub trimap_radius: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            train_dir: "data/train".into(),
            holdout_dir: "data/holdout".into(),
            out_dir: "runs/default".into(),
            scale: 2,
            batch_size: 8,
            pretrain_steps: 200,
            gan_steps: 150,
            refine_steps: 150,
            classifier_steps: 2000,
            matting_steps: 400,
            lr_gen: 1e-4,
            lr_disc: 1e-4,
            lr_classifier: 1e-3,
            lr_matting: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 17,
            w_pixel: 1.0,
            w_adv: 5e-3,
            w_char: 0.1,
            w_feature: 0.05,
            feature_loss: false,
            adv_mode: "standard".into(),
            alpha_input: "stacked".into(),
            sharpen_lambda: 0.25,
            backend: "oracle".into(),
            checkpoint_interval: 100,
            classifier_path: String::new(),
            matting_path: String::new(),
            trimap_lo: 0.05,
            trimap_hi: 0.95,
            // Radius 0 keeps the unknown band to genuinely fractional pixels;
            // at LR sizes any dilation swallows whole text strokes.
            trimap_radius: 0,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: TrainConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.scale == 0 {
            return Err(Error::Config("scale must be >= 1".into()));
        }
        for (name, lr) in [
            ("lr_gen", self.lr_gen),
            ("lr_disc", self.lr_disc),
            ("lr_classifier", self.lr_classifier),
            ("lr_matting", self.lr_matting),
        ] {
            if !(lr > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        self.adv_mode_enum()?;
        self.alpha_input_enum()?;
        self.backend_enum()?;
        Ok(())
    }

    pub fn adv_mode_enum(&self) -> Result<AdvMode> {
        match self.adv_mode.as_str() {
            "standard" => Ok(AdvMode::Standard),
            "relativistic" => Ok(AdvMode::Relativistic),
            other => Err(Error::Config(format!("unknown adv_mode {other:?}"))),
        }
    }

    pub fn alpha_input_enum(&self) -> Result<AlphaInput> {
        match self.alpha_input.as_str() {
            "stacked" => Ok(AlphaInput::Stacked),
            "sharpened" => Ok(AlphaInput::Sharpened {
                lambda: self.sharpen_lambda as Elem,
            }),
            other => Err(Error::Config(format!("unknown alpha_input {other:?}"))),
        }
    }

    pub fn backend_enum(&self) -> Result<Backend> {
        match self.backend.as_str() {
            "oracle" => Ok(Backend::Oracle),
            "learned" => Ok(Backend::Learned),
            other => Err(Error::Config(format!("unknown backend {other:?}"))),
        }
    }

    /// Stable hash of the serialized config, embedded in checkpoints.
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn total_steps(&self) -> usize {
        self.pretrain_steps + self.gan_steps + self.refine_steps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Oracle,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Gan,
    Refine,
}

impl Stage {
    pub fn for_step(cfg: &TrainConfig, step: u64) -> Stage {
        let s = step as usize;
        if s < cfg.pretrain_steps {
            Stage::Pretrain
        } else if s < cfg.pretrain_steps + cfg.gan_steps {
            Stage::Gan
        } else {
            Stage::Refine
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Gan => "gan",
            Stage::Refine => "refine",
        }
    }
}

// ---------------------------------------------------------------------------
// Dataset access
// ---------------------------------------------------------------------------

pub struct Dataset {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref().to_path_buf();
        let entries = textgen::load_manifest(&dir)?;
        if entries.is_empty() {
            return Err(Error::DegenerateInput(format!("empty dataset at {dir:?}")));
        }
        Ok(Dataset { dir, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sample(&self, idx: usize) -> Result<TextSample> {
        textgen::load_sample(&self.dir, &self.entries[idx])
    }

    /// Hash of the manifest file, used to prove runs shared a dataset.
    pub fn hash(&self) -> Result<u64> {
        let path = self.dir.join("manifest.tsv");
        let bytes =
            std::fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let digest = Sha256::digest(&bytes);
        Ok(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
    }
}

/// A batch of decomposed samples, everything stacked along the batch axis.
pub struct Batch {
    pub lr_layers: LayerDecomposition,
    pub gt_layers: LayerDecomposition,
    /// Stored quantized HR images, as float tensors.
    pub gt_hr: Tensor,
    pub boxes: Vec<Vec<(usize, usize, usize, usize)>>,
    pub labels: Vec<Vec<usize>>,
}

fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let shape = parts[0].shape();
    let per = parts[0].len();
    let mut data = Vec::with_capacity(per * parts.len());
    for p in parts {
        if p.shape() != shape {
            return Err(Error::InvalidArgument(
                "batch samples have mismatched shapes".into(),
            ));
        }
        data.extend(p.data());
    }
    let mut s = shape;
    s[0] = parts.len();
    Tensor::new(&s, data)
}

/// Decompose and stack samples. The learned backend needs a trained matting
/// net; the oracle backend uses ground-truth layers.
pub fn make_batch(
    samples: &[TextSample],
    backend: Backend,
    matting_net: Option<&MattingNet>,
) -> Result<Batch> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("empty batch".into()));
    }
    let mut lr_a = Vec::new();
    let mut lr_f = Vec::new();
    let mut lr_b = Vec::new();
    let mut hr_a = Vec::new();
    let mut hr_f = Vec::new();
    let mut hr_b = Vec::new();
    let mut hr_img = Vec::new();
    let mut boxes = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        let lr = match backend {
            Backend::Oracle => matting::oracle_decompose(s, Resolution::Lr)?,
            Backend::Learned => {
                let net = matting_net.ok_or_else(|| {
                    Error::Config("learned backend needs a matting net".into())
                })?;
                decompose_learned(net, &imaging::to_float(&s.lr))?
            }
        };
        let hr = matting::oracle_decompose(s, Resolution::Hr)?;
        lr_a.push(lr.alpha);
        lr_f.push(lr.fg);
        lr_b.push(lr.bg);
        hr_a.push(hr.alpha);
        hr_f.push(hr.fg);
        hr_b.push(hr.bg);
        hr_img.push(imaging::to_float(&s.hr));
        boxes.push(s.boxes.clone());
        labels.push(s.labels.clone());
    }
    Ok(Batch {
        lr_layers: LayerDecomposition::new(stack(&lr_a)?, stack(&lr_f)?, stack(&lr_b)?)?,
        gt_layers: LayerDecomposition::new(stack(&hr_a)?, stack(&hr_f)?, stack(&hr_b)?)?,
        gt_hr: stack(&hr_img)?,
        boxes,
        labels,
    })
}

/// Full learned decomposition of an image with no ground truth: a luma
/// pseudo-alpha seeds the trimap (text assumed the minority phase), the
/// matting net predicts alpha, diffusion fills the color fields.
pub fn decompose_learned(net: &MattingNet, image: &Tensor) -> Result<LayerDecomposition> {
    let pseudo = pseudo_alpha(image)?;
    // No dilation: LR text strokes are thin enough that dilating would
    // leave the color diffusion without any definite foreground seeds.
    let trimap = matting::make_trimap(&pseudo, 0.3, 0.7, 0)?;
    let alpha = matting::matting_predict(net, image, &trimap)?;
    let (fg, bg) = matting::estimate_fb(image, &alpha)?;
    LayerDecomposition::new(alpha, fg, bg)
}

/// Decomposition without any trained net: the luma pseudo-alpha is taken
/// as the matte directly and diffusion fills the color fields.
pub fn decompose_heuristic(image: &Tensor) -> Result<LayerDecomposition> {
    let alpha = pseudo_alpha(image)?;
    let (fg, bg) = matting::estimate_fb(image, &alpha)?;
    LayerDecomposition::new(alpha, fg, bg)
}

/// Min-max normalized luma, polarity flipped so the minority phase (text)
/// gets high values.
fn pseudo_alpha(image: &Tensor) -> Result<Tensor> {
    let luma = model::to_luma(image)?;
    let mut v = luma.data();
    let lo = v.iter().cloned().fold(Elem::INFINITY, Elem::min);
    let hi = v.iter().cloned().fold(Elem::NEG_INFINITY, Elem::max);
    if hi - lo < 1e-6 {
        return Err(Error::DegenerateInput(
            "constant image has no text/background contrast".into(),
        ));
    }
    for x in v.iter_mut() {
        *x = (*x - lo) / (hi - lo);
    }
    let mean = v.iter().sum::<Elem>() / v.len() as Elem;
    if mean > 0.5 {
        for x in v.iter_mut() {
            *x = 1.0 - *x;
        }
    }
    Tensor::new(&luma.shape(), v)
}

/// Trimap from a known alpha, using the configured thresholds.
pub fn trimap_from_alpha(alpha: &Tensor, cfg: &TrainConfig) -> Result<Trimap> {
    matting::make_trimap(
        alpha,
        cfg.trimap_lo as Elem,
        cfg.trimap_hi as Elem,
        cfg.trimap_radius,
    )
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub struct Adam {
    pub lr: Elem,
    pub beta1: Elem,
    pub beta2: Elem,
    pub eps: Elem,
    pub t: u64,
    m: HashMap<String, Vec<Elem>>,
    v: HashMap<String, Vec<Elem>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam {
            lr: lr as Elem,
            beta1: beta1 as Elem,
            beta2: beta2 as Elem,
            eps: eps as Elem,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    /// One update over every parameter that accumulated a gradient.
    pub fn step(&mut self, params: &[(String, Tensor)]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params {
            let Some(g) = p.grad() else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let mut data = p.data();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / b1t;
                let vhat = v[i] / b2t;
                data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.set_data(&data);
        }
    }

    fn state_records(&self, prefix: &str) -> Vec<(String, Vec<usize>, Vec<Elem>)> {
        let mut out = vec![(format!("{prefix}.t"), vec![1], vec![self.t as Elem])];
        let mut names: Vec<&String> = self.m.keys().collect();
        names.sort();
        for name in names {
            out.push((format!("{prefix}.m.{name}"), vec![self.m[name].len()], self.m[name].clone()));
            out.push((format!("{prefix}.v.{name}"), vec![self.v[name].len()], self.v[name].clone()));
        }
        out
    }

    fn restore(&mut self, prefix: &str, records: &HashMap<String, (Vec<usize>, Vec<Elem>)>) {
        if let Some((_, t)) = records.get(&format!("{prefix}.t")) {
            self.t = t[0] as u64;
        }
        for (name, (_, data)) in records {
            if let Some(pname) = name.strip_prefix(&format!("{prefix}.m.")) {
                self.m.insert(pname.to_string(), data.clone());
            } else if let Some(pname) = name.strip_prefix(&format!("{prefix}.v.")) {
                self.v.insert(pname.to_string(), data.clone());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct StepReport {
    pub step: u64,
    pub stage: Stage,
    pub losses: Vec<(&'static str, Elem)>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub models: ModelSet,
    pub matting_net: Option<MattingNet>,
    pub opt_gen: Adam,
    pub opt_disc: Adam,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub classifier_ready: bool,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let models = ModelSet::init(&mut rng, cfg.scale, cfg.alpha_input_enum()?);
        Ok(Trainer {
            cfg: cfg.clone(),
            models,
            matting_net: None,
            opt_gen: Adam::new(cfg.lr_gen, cfg.beta1, cfg.beta2, cfg.eps),
            opt_disc: Adam::new(cfg.lr_disc, cfg.beta1, cfg.beta2, cfg.eps),
            rng,
            step: 0,
            classifier_ready: false,
        })
    }

    fn gen_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.models.gen_color.params();
        p.extend(self.models.gen_alpha.params());
        p
    }

    fn disc_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.models.disc_color.params();
        p.extend(self.models.disc_alpha.params());
        p
    }

    fn zero_all(&self) {
        self.models.gen_color.zero_grads();
        self.models.gen_alpha.zero_grads();
        self.models.disc_color.zero_grads();
        self.models.disc_alpha.zero_grads();
        self.models.classifier.zero_grads();
    }

    fn guard(&self, name: &'static str, t: &Tensor, stage: Stage) -> Result<Elem> {
        let v = t.item();
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                stage: stage.name().to_string(),
                loss_name: name.to_string(),
                value: v as f64,
            });
        }
        Ok(v)
    }

    /// One optimization step of the given stage on a prepared batch.
    pub fn train_step(&mut self, batch: &Batch, stage: Stage) -> Result<StepReport> {
        if stage == Stage::Refine && !self.classifier_ready {
            return Err(Error::Config(
                "refine stage requires a trained classifier (set classifier_path)".into(),
            ));
        }
        let mode = self.cfg.adv_mode_enum()?;
        let w_pixel = self.cfg.w_pixel as Elem;
        let w_adv = self.cfg.w_adv as Elem;
        let w_char = self.cfg.w_char as Elem;
        let w_feature = self.cfg.w_feature as Elem;
        let mut losses: Vec<(&'static str, Elem)> = Vec::new();

        let (hr_layers, composed) = model::sr_forward(&self.models, &batch.lr_layers)?;
        let fake_color = Tensor::concat_channels(&[hr_layers.fg.clone(), hr_layers.bg.clone()])?;
        let real_color = Tensor::concat_channels(&[batch.gt_layers.fg.clone(), batch.gt_layers.bg.clone()])?;

        if stage != Stage::Pretrain {
            // Discriminator update on detached fakes.
            let d_real_c = self.models.disc_color.forward(&real_color)?;
            let d_fake_c = self.models.disc_color.forward(&fake_color.detach())?;
            let d_real_a = self.models.disc_alpha.forward(&batch.gt_layers.alpha)?;
            let d_fake_a = self.models.disc_alpha.forward(&hr_layers.alpha.detach())?;
            let dl_c = model::loss_adversarial(&d_real_c, &d_fake_c, AdvRole::Discriminator, mode)?;
            let dl_a = model::loss_adversarial(&d_real_a, &d_fake_a, AdvRole::Discriminator, mode)?;
            losses.push(("d_color", self.guard("d_color", &dl_c, stage)?));
            losses.push(("d_alpha", self.guard("d_alpha", &dl_a, stage)?));
            dl_c.add(&dl_a)?.backward()?;
            self.opt_disc.step(&self.disc_params());
            self.zero_all();
        }

        // Generator update.
        let p_fg = model::loss_pixel(&hr_layers.fg, &batch.gt_layers.fg)?;
        let p_bg = model::loss_pixel(&hr_layers.bg, &batch.gt_layers.bg)?;
        let p_alpha = model::loss_pixel(&hr_layers.alpha, &batch.gt_layers.alpha)?;
        let p_comp = model::loss_pixel(&composed, &batch.gt_hr)?;
        losses.push(("pixel_fg", self.guard("pixel_fg", &p_fg, stage)?));
        losses.push(("pixel_bg", self.guard("pixel_bg", &p_bg, stage)?));
        losses.push(("pixel_alpha", self.guard("pixel_alpha", &p_alpha, stage)?));
        losses.push(("pixel_composed", self.guard("pixel_composed", &p_comp, stage)?));
        let mut total = p_fg.add(&p_bg)?.add(&p_alpha)?.add(&p_comp)?.scale(w_pixel);

        if stage != Stage::Pretrain {
            let d_real_c = self.models.disc_color.forward(&real_color)?;
            let d_fake_c = self.models.disc_color.forward(&fake_color)?;
            let d_real_a = self.models.disc_alpha.forward(&batch.gt_layers.alpha)?;
            let d_fake_a = self.models.disc_alpha.forward(&hr_layers.alpha)?;
            let gl_c = model::loss_adversarial(&d_real_c, &d_fake_c, AdvRole::Generator, mode)?;
            let gl_a = model::loss_adversarial(&d_real_a, &d_fake_a, AdvRole::Generator, mode)?;
            losses.push(("g_adv_color", self.guard("g_adv_color", &gl_c, stage)?));
            losses.push(("g_adv_alpha", self.guard("g_adv_alpha", &gl_a, stage)?));
            total = total.add(&gl_c.add(&gl_a)?.scale(w_adv))?;
        }

        if stage == Stage::Refine {
            let cl = model::loss_char(&composed, &batch.boxes, &batch.labels, &self.models.classifier)?;
            losses.push(("char", self.guard("char", &cl, stage)?));
            total = total.add(&cl.scale(w_char))?;
            if self.cfg.feature_loss {
                let fl = model::loss_feature_match(
                    &composed,
                    &batch.gt_hr,
                    &batch.boxes,
                    &batch.labels,
                    &self.models.classifier,
                )?;
                losses.push(("feature", self.guard("feature", &fl, stage)?));
                total = total.add(&fl.scale(w_feature))?;
            }
        }

        losses.push(("total_gen", self.guard("total_gen", &total, stage)?));
        total.backward()?;
        self.opt_gen.step(&self.gen_params());
        self.zero_all();

        let report = StepReport {
            step: self.step,
            stage,
            losses,
        };
        self.step += 1;
        Ok(report)
    }

    /// Draw a batch of sample indices deterministically.
    pub fn draw_indices(&mut self, n: usize) -> Vec<usize> {
        (0..self.cfg.batch_size)
            .map(|_| self.rng.gen_range(0..n))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Full training runs
// ---------------------------------------------------------------------------

pub struct TrainOutcome {
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub final_step: u64,
}

/// Run pretrain, gan and refine on the configured dataset, logging every
/// step and checkpointing at the configured interval.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    if cfg.refine_steps > 0 {
        if cfg.classifier_path.is_empty() {
            return Err(Error::Config(
                "refine_steps > 0 needs classifier_path (run train-classifier first)".into(),
            ));
        }
        load_net_checkpoint(&cfg.classifier_path, &trainer.models.classifier.params())?;
        trainer.classifier_ready = true;
    }
    if cfg.backend_enum()? == Backend::Learned {
        if cfg.matting_path.is_empty() {
            return Err(Error::Config(
                "learned backend needs matting_path (run train first with matting)".into(),
            ));
        }
        let net = load_matting(&cfg.matting_path)?;
        trainer.matting_net = Some(net);
    }
    run_schedule(&mut trainer)
}

/// Continue a checkpointed run to completion.
pub fn resume(cfg: &TrainConfig, checkpoint: impl AsRef<Path>) -> Result<TrainOutcome> {
    let mut trainer = load_checkpoint(checkpoint, cfg)?;
    run_schedule(&mut trainer)
}

fn run_schedule(trainer: &mut Trainer) -> Result<TrainOutcome> {
    let cfg = trainer.cfg.clone();
    let dataset = Dataset::load(&cfg.train_dir)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.clone(), e))?;
    let log_path = Path::new(&cfg.out_dir).join("train_log.tsv");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    if trainer.step == 0 {
        writeln!(log, "# dataset_hash={:016x} config_hash={:016x}", dataset.hash()?, cfg.hash())
            .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    }
    let ckpt_path = Path::new(&cfg.out_dir).join("model.ckpt");
    let total = cfg.total_steps() as u64;
    let backend = cfg.backend_enum()?;
    while trainer.step < total {
        let t0 = Instant::now();
        let stage = Stage::for_step(&cfg, trainer.step);
        let idx = trainer.draw_indices(dataset.len());
        let samples: Vec<TextSample> = idx
            .iter()
            .map(|&i| dataset.sample(i))
            .collect::<Result<_>>()?;
        let batch = make_batch(&samples, backend, trainer.matting_net.as_ref())?;
        let report = trainer.train_step(&batch, stage)?;
        let mut line = format!("{}\t{}", report.step, stage.name());
        for (name, v) in &report.losses {
            line.push_str(&format!("\t{name}={v:.6}"));
        }
        line.push_str(&format!("\tms={}", t0.elapsed().as_millis()));
        writeln!(log, "{line}").map_err(|e| Error::io(log_path.display().to_string(), e))?;
        if cfg.checkpoint_interval > 0 && trainer.step % cfg.checkpoint_interval as u64 == 0 {
            save_checkpoint(trainer, &ckpt_path)?;
        }
    }
    save_checkpoint(trainer, &ckpt_path)?;
    Ok(TrainOutcome {
        checkpoint_path: ckpt_path,
        log_path,
        final_step: trainer.step,
    })
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

/// Extract the luma crop of one ground-truth character, classifier-sized.
pub fn gt_char_crop(hr: &Tensor, b: (usize, usize, usize, usize)) -> Result<Tensor> {
    let (x, y, w, h) = b;
    let crop = hr.crop_image(0, y, x, h, w)?;
    let crop = imaging::bicubic_resize(&crop, model::CLASSIFIER_INPUT, model::CLASSIFIER_INPUT)?;
    Ok(model::to_luma(&crop)?.detach())
}

fn classifier_crops(dataset: &Dataset, range: std::ops::Range<usize>) -> Result<(Vec<Vec<Elem>>, Vec<usize>)> {
    let mut crops = Vec::new();
    let mut labels = Vec::new();
    for i in range {
        let s = dataset.sample(i)?;
        let hr = imaging::to_float(&s.hr);
        for (&b, &l) in s.boxes.iter().zip(&s.labels) {
            crops.push(gt_char_crop(&hr, b)?.data());
            labels.push(l);
        }
    }
    Ok((crops, labels))
}

fn crop_batch(crops: &[Vec<Elem>], idx: &[usize]) -> Result<Tensor> {
    let k = model::CLASSIFIER_INPUT;
    let mut data = Vec::with_capacity(idx.len() * k * k);
    for &i in idx {
        data.extend_from_slice(&crops[i]);
    }
    Tensor::new(&[idx.len(), 1, k, k], data)
}

/// Accuracy of a classifier over precomputed crops.
fn crop_accuracy(c: &CharClassifier, crops: &[Vec<Elem>], labels: &[usize]) -> Result<f64> {
    let mut hits = 0usize;
    for chunk in (0..crops.len()).collect::<Vec<_>>().chunks(64) {
        let batch = crop_batch(crops, chunk)?;
        let preds = c.predict(&batch)?;
        hits += chunk
            .iter()
            .zip(&preds)
            .filter(|(&i, &p)| labels[i] == p)
            .count();
    }
    Ok(hits as f64 / crops.len() as f64)
}

/// Train the character classifier on ground-truth HR crops; returns the net
/// and its held-out accuracy (last 10% of the dataset held out).
pub fn train_classifier(cfg: &TrainConfig) -> Result<(CharClassifier, f64)> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.train_dir)?;
    let n = dataset.len();
    let split = (n * 9) / 10;
    if split == 0 || split == n {
        return Err(Error::DegenerateInput(
            "dataset too small for a train/holdout split".into(),
        ));
    }
    let (train_crops, train_labels) = classifier_crops(&dataset, 0..split)?;
    let (held_crops, held_labels) = classifier_crops(&dataset, split..n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc1a5);
    let classifier = CharClassifier::init(&mut rng);
    let mut opt = Adam::new(cfg.lr_classifier, cfg.beta1, cfg.beta2, cfg.eps);
    let params = classifier.params();
    for _ in 0..cfg.classifier_steps {
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..train_crops.len()))
            .collect();
        let batch = crop_batch(&train_crops, &idx)?;
        let labels: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
        let loss = classifier.forward(&batch)?.softmax_cross_entropy(&labels)?;
        if !loss.item().is_finite() {
            return Err(Error::NonFiniteLoss {
                step: opt.t,
                stage: "classifier".into(),
                loss_name: "cross_entropy".into(),
                value: loss.item() as f64,
            });
        }
        loss.backward()?;
        opt.step(&params);
        classifier.zero_grads();
    }
    let acc = crop_accuracy(&classifier, &held_crops, &held_labels)?;
    Ok((classifier, acc))
}

// ---------------------------------------------------------------------------
// Matting training
// ---------------------------------------------------------------------------

/// Train the matting net on LR images with trimaps derived from GT alpha;
/// returns the net and held-out mean absolute alpha error.
pub fn train_matting(cfg: &TrainConfig) -> Result<(MattingNet, f64)> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.train_dir)?;
    let n = dataset.len();
    let split = (n * 9) / 10;
    if split == 0 || split == n {
        return Err(Error::DegenerateInput(
            "dataset too small for a train/holdout split".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3a77);
    let net = MattingNet::init(&mut rng);
    let mut opt = Adam::new(cfg.lr_matting, cfg.beta1, cfg.beta2, cfg.eps);
    let params = net.params();
    for _ in 0..cfg.matting_steps {
        let mut total: Option<Tensor> = None;
        for _ in 0..cfg.batch_size.min(4) {
            let s = dataset.sample(rng.gen_range(0..split))?;
            let lr_layers = matting::oracle_decompose(&s, Resolution::Lr)?;
            let image = imaging::to_float(&s.lr);
            let trimap = trimap_from_alpha(&lr_layers.alpha, cfg)?;
            let pred = net.forward(&image, &trimap)?;
            let loss = pred.l1_distance(&lr_layers.alpha)?;
            total = Some(match total {
                None => loss,
                Some(t) => t.add(&loss)?,
            });
        }
        let total = total.expect("batch nonempty");
        if !total.item().is_finite() {
            return Err(Error::NonFiniteLoss {
                step: opt.t,
                stage: "matting".into(),
                loss_name: "alpha_l1".into(),
                value: total.item() as f64,
            });
        }
        total.backward()?;
        opt.step(&params);
        for (_, p) in &params {
            p.zero_grad();
        }
    }
    let mut mae = 0.0f64;
    let mut count = 0usize;
    for i in split..n {
        let s = dataset.sample(i)?;
        let lr_layers = matting::oracle_decompose(&s, Resolution::Lr)?;
        let image = imaging::to_float(&s.lr);
        let trimap = trimap_from_alpha(&lr_layers.alpha, cfg)?;
        let pred = matting::matting_predict(&net, &image, &trimap)?;
        let gt = lr_layers.alpha.data();
        mae += pred
            .data()
            .iter()
            .zip(&gt)
            .map(|(&p, &g)| (p - g).abs() as f64)
            .sum::<f64>();
        count += gt.len();
    }
    Ok((net, mae / count as f64))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MDGAN\0";
pub const CHECKPOINT_VERSION: u16 = 1;

#[cfg(not(feature = "wide"))]
const DTYPE_TAG: u8 = 0;
#[cfg(feature = "wide")]
const DTYPE_TAG: u8 = 1;

struct CheckpointFile {
    config_hash: u64,
    step: u64,
    rng_seed: [u8; 32],
    rng_word_pos: u128,
    records: HashMap<String, (Vec<usize>, Vec<Elem>)>,
}

fn write_checkpoint_file(path: &Path, ck: &CheckpointFile) -> Result<()> {
    let io_err = |e| Error::io(path.display().to_string(), e);
    let mut names: Vec<&String> = ck.records.keys().collect();
    names.sort();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&ck.config_hash.to_le_bytes());
    buf.extend_from_slice(&ck.step.to_le_bytes());
    buf.extend_from_slice(&ck.rng_seed);
    buf.extend_from_slice(&ck.rng_word_pos.to_le_bytes());
    buf.extend_from_slice(&(names.len() as u32).to_le_bytes());
    for name in names {
        let (dims, data) = &ck.records[name];
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_TAG);
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf).map_err(io_err)?;
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CheckpointTruncated(format!(
                "needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_checkpoint_file(path: &Path) -> Result<CheckpointFile> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(6)? != CHECKPOINT_MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let config_hash = r.u64()?;
    let step = r.u64()?;
    let rng_seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let rng_word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let n_records = r.u32()? as usize;
    let mut records = HashMap::with_capacity(n_records);
    for _ in 0..n_records {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::CheckpointTruncated("record name is not utf-8".into()))?;
        let tag = r.take(1)?[0];
        if tag != DTYPE_TAG {
            return Err(Error::Config(format!(
                "checkpoint dtype tag {tag} does not match this build"
            )));
        }
        let rank = r.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64()? as usize);
        }
        let count: usize = dims.iter().product();
        let payload = r.take(count * std::mem::size_of::<Elem>())?;
        let data: Vec<Elem> = payload
            .chunks_exact(std::mem::size_of::<Elem>())
            .map(|c| Elem::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.insert(name, (dims, data));
    }
    Ok(CheckpointFile {
        config_hash,
        step,
        rng_seed,
        rng_word_pos,
        records,
    })
}

fn model_records(t: &Trainer) -> HashMap<String, (Vec<usize>, Vec<Elem>)> {
    let mut records = HashMap::new();
    for (name, p) in t.models.all_params() {
        records.insert(name, (p.shape(), p.data()));
    }
    if let Some(net) = &t.matting_net {
        for (name, p) in net.params() {
            records.insert(name, (p.shape(), p.data()));
        }
    }
    for (i, u) in t.models.disc_color.sn_state().into_iter().enumerate() {
        records.insert(format!("sn.disc_color.{i}"), (vec![u.len()], u));
    }
    for (i, u) in t.models.disc_alpha.sn_state().into_iter().enumerate() {
        records.insert(format!("sn.disc_alpha.{i}"), (vec![u.len()], u));
    }
    for rec in t.opt_gen.state_records("opt.gen") {
        records.insert(rec.0, (rec.1, rec.2));
    }
    for rec in t.opt_disc.state_records("opt.disc") {
        records.insert(rec.0, (rec.1, rec.2));
    }
    records.insert(
        "meta.classifier_ready".into(),
        (vec![1], vec![t.classifier_ready as u8 as Elem]),
    );
    records
}

pub fn save_checkpoint(t: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let ck = CheckpointFile {
        config_hash: t.cfg.hash(),
        step: t.step,
        rng_seed: t.rng.get_seed(),
        rng_word_pos: t.rng.get_word_pos(),
        records: model_records(t),
    };
    write_checkpoint_file(path.as_ref(), &ck)
}

fn restore_params(
    params: &[(String, Tensor)],
    records: &HashMap<String, (Vec<usize>, Vec<Elem>)>,
) -> Result<()> {
    for (name, p) in params {
        let (dims, data) = records
            .get(name)
            .ok_or_else(|| Error::CheckpointTruncated(format!("missing record {name}")))?;
        if *dims != p.shape() {
            return Err(Error::Config(format!(
                "record {name} has shape {dims:?}, model expects {:?}",
                p.shape()
            )));
        }
        p.set_data(data);
    }
    Ok(())
}

/// Restore a full trainer; the config must hash-match the checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>, cfg: &TrainConfig) -> Result<Trainer> {
    let ck = read_checkpoint_file(path.as_ref())?;
    if ck.config_hash != cfg.hash() {
        return Err(Error::Config(format!(
            "checkpoint was written with config hash {:016x}, current config hashes to {:016x}",
            ck.config_hash,
            cfg.hash()
        )));
    }
    let mut t = Trainer::new(cfg)?;
    restore_params(&t.models.all_params(), &ck.records)?;
    if cfg.backend_enum()? == Backend::Learned {
        let net = MattingNet::init(&mut ChaCha8Rng::seed_from_u64(0));
        restore_params(&net.params(), &ck.records)?;
        t.matting_net = Some(net);
    }
    let sn_c: Vec<Vec<Elem>> = (0..t.models.disc_color.sn_state().len())
        .map(|i| ck.records[&format!("sn.disc_color.{i}")].1.clone())
        .collect();
    t.models.disc_color.set_sn_state(sn_c);
    let sn_a: Vec<Vec<Elem>> = (0..t.models.disc_alpha.sn_state().len())
        .map(|i| ck.records[&format!("sn.disc_alpha.{i}")].1.clone())
        .collect();
    t.models.disc_alpha.set_sn_state(sn_a);
    t.opt_gen.restore("opt.gen", &ck.records);
    t.opt_disc.restore("opt.disc", &ck.records);
    t.classifier_ready = ck
        .records
        .get("meta.classifier_ready")
        .map(|(_, d)| d[0] != 0.0)
        .unwrap_or(false);
    t.step = ck.step;
    t.rng = ChaCha8Rng::from_seed(ck.rng_seed);
    t.rng.set_word_pos(ck.rng_word_pos);
    Ok(t)
}

/// Save a standalone net (classifier or matting) as a parameter-only
/// checkpoint.
pub fn save_net_checkpoint(path: impl AsRef<Path>, params: &[(String, Tensor)]) -> Result<()> {
    let mut records = HashMap::new();
    for (name, p) in params {
        records.insert(name.clone(), (p.shape(), p.data()));
    }
    let ck = CheckpointFile {
        config_hash: 0,
        step: 0,
        rng_seed: [0; 32],
        rng_word_pos: 0,
        records,
    };
    write_checkpoint_file(path.as_ref(), &ck)
}

/// Fill an existing net's parameters from a parameter-only checkpoint.
pub fn load_net_checkpoint(path: impl AsRef<Path>, params: &[(String, Tensor)]) -> Result<()> {
    let ck = read_checkpoint_file(path.as_ref())?;
    restore_params(params, &ck.records)
}

pub fn load_classifier(path: impl AsRef<Path>) -> Result<CharClassifier> {
    let c = CharClassifier::init(&mut ChaCha8Rng::seed_from_u64(0));
    load_net_checkpoint(path, &c.params())?;
    Ok(c)
}

pub fn load_matting(path: impl AsRef<Path>) -> Result<MattingNet> {
    let net = MattingNet::init(&mut ChaCha8Rng::seed_from_u64(0));
    load_net_checkpoint(path, &net.params())?;
    Ok(net)
}

#[cfg(test)]
mod tests;
