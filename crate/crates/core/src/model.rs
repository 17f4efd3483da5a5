//! Networks and losses of the dual-branch SR model: the shared-weight color
//! generator, the boundary (alpha) generator fed with a Teager energy map,
//! spectrally normalized patch discriminators, and the character classifier
//! used as frozen supervision.

use crate::error::{Error, Result};
use crate::imaging;
use crate::matting::{compose, LayerDecomposition};
use crate::tensorgrad::{Elem, Tensor};
use crate::textgen::NUM_CLASSES;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::cell::RefCell;

/// Anything with named trainable parameters.
pub trait Net {
    fn params(&self) -> Vec<(String, Tensor)>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn zero_grads(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }
}

fn he_normal(rng: &mut ChaCha8Rng, fan_in: usize, n: usize) -> Vec<Elem> {
    let normal = Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).expect("valid std");
    (0..n).map(|_| normal.sample(rng) as Elem).collect()
}

pub struct ConvLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn init(rng: &mut ChaCha8Rng, name: &str, cout: usize, cin: usize, k: usize) -> Self {
        let weight = Tensor::param(&[cout, cin, k, k], he_normal(rng, cin * k * k, cout * cin * k * k))
            .expect("conv init shape");
        let bias = Tensor::param(&[cout], vec![0.0; cout]).expect("bias shape");
        ConvLayer {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    /// Zero-initialized variant for identity-start output layers.
    pub fn init_zero(name: &str, cout: usize, cin: usize, k: usize) -> Self {
        let weight =
            Tensor::param(&[cout, cin, k, k], vec![0.0; cout * cin * k * k]).expect("shape");
        let bias = Tensor::param(&[cout], vec![0.0; cout]).expect("shape");
        ConvLayer {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        x.conv2d(&self.weight, &self.bias, stride, padding)
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            (format!("{}.weight", self.name), self.weight.clone()),
            (format!("{}.bias", self.name), self.bias.clone()),
        ]
    }
}

pub struct LinearLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn init(rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize) -> Self {
        let weight = Tensor::param(&[out, inp], he_normal(rng, inp, out * inp)).expect("shape");
        let bias = Tensor::param(&[out], vec![0.0; out]).expect("shape");
        LinearLayer {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.linear(&self.weight, &self.bias)
    }

    pub fn params(&self) -> Vec<(String, Tensor)> {
        vec![
            (format!("{}.weight", self.name), self.weight.clone()),
            (format!("{}.bias", self.name), self.bias.clone()),
        ]
    }
}

// ---------------------------------------------------------------------------
// Spectral normalization
// ---------------------------------------------------------------------------

const SIGMA_FLOOR: Elem = 1e-12;

/// Power-iteration spectral normalization of a weight tensor viewed as
/// [out_features, rest]. Returns the normalized weight (gradients flow
/// through W / sigma with sigma differentiable, u and v treated constant)
/// and the updated left singular vector estimate.
pub fn spectral_normalize(
    weight: &Tensor,
    u: &[Elem],
    iters: usize,
) -> Result<(Tensor, Vec<Elem>)> {
    if iters < 1 {
        return Err(Error::InvalidArgument("spectral_normalize iters >= 1".into()));
    }
    let shape = weight.shape();
    let rows = shape[0];
    let cols: usize = shape[1..].iter().product();
    if u.len() != rows {
        return Err(Error::InvalidArgument(format!(
            "u length {} != {} output features",
            u.len(),
            rows
        )));
    }
    let w = weight.data();
    let mut u_vec = u.to_vec();
    let mut v = vec![0.0; cols];
    for _ in 0..iters {
        // v = W^T u / ||.||
        for vj in v.iter_mut() {
            *vj = 0.0;
        }
        for (i, ui) in u_vec.iter().enumerate() {
            let row = &w[i * cols..(i + 1) * cols];
            for (vj, &wij) in v.iter_mut().zip(row) {
                *vj += wij * ui;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<Elem>().sqrt().max(SIGMA_FLOOR);
        for vj in v.iter_mut() {
            *vj /= norm;
        }
        // u = W v / ||.||
        for (i, ui) in u_vec.iter_mut().enumerate() {
            let row = &w[i * cols..(i + 1) * cols];
            *ui = row.iter().zip(&v).map(|(&wij, &vj)| wij * vj).sum();
        }
        let norm = u_vec
            .iter()
            .map(|x| x * x)
            .sum::<Elem>()
            .sqrt()
            .max(SIGMA_FLOOR);
        for ui in u_vec.iter_mut() {
            *ui /= norm;
        }
    }
    let sigma_value: Elem = (0..rows)
        .map(|i| {
            let row = &w[i * cols..(i + 1) * cols];
            u_vec[i] * row.iter().zip(&v).map(|(&wij, &vj)| wij * vj).sum::<Elem>()
        })
        .sum();
    if sigma_value.abs() < SIGMA_FLOOR {
        // Degenerate (zero) weight: nothing to normalize.
        return Ok((weight.clone(), u_vec));
    }
    // sigma = sum(W * u v^T) keeps sigma differentiable in W.
    let mut outer = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            outer[i * cols + j] = u_vec[i] * v[j];
        }
    }
    let outer_t = Tensor::new(&shape, outer)?;
    let sigma = weight.mul(&outer_t)?.sum();
    let inv = sigma.recip().broadcast_scalar(&shape)?;
    Ok((weight.mul(&inv)?, u_vec))
}

/// Oracle estimate of the top singular value by long power iteration on the
/// raw buffer (no autodiff involvement).
pub fn top_singular_value(data: &[Elem], rows: usize, iters: usize) -> Elem {
    let cols = data.len() / rows;
    let mut u = vec![1.0 / (rows as Elem).sqrt(); rows];
    let mut v = vec![0.0; cols];
    let mut sigma = 0.0;
    for _ in 0..iters {
        for vj in v.iter_mut() {
            *vj = 0.0;
        }
        for (i, &ui) in u.iter().enumerate() {
            for (vj, &wij) in v.iter_mut().zip(&data[i * cols..(i + 1) * cols]) {
                *vj += wij * ui;
            }
        }
        let vn = v.iter().map(|x| x * x).sum::<Elem>().sqrt().max(SIGMA_FLOOR);
        for vj in v.iter_mut() {
            *vj /= vn;
        }
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = data[i * cols..(i + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(&wij, &vj)| wij * vj)
                .sum();
        }
        sigma = u.iter().map(|x| x * x).sum::<Elem>().sqrt().max(SIGMA_FLOOR);
        for ui in u.iter_mut() {
            *ui /= sigma;
        }
    }
    sigma
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

const GEN_CHANNELS: usize = 32;
const RES_BLOCKS: usize = 4;
const LRELU_SLOPE: Elem = 0.2;

struct GenTrunk {
    stem: ConvLayer,
    blocks: Vec<(ConvLayer, ConvLayer)>,
    post: ConvLayer,
    out: ConvLayer,
    scale: usize,
}

impl GenTrunk {
    fn init(rng: &mut ChaCha8Rng, prefix: &str, in_ch: usize, out_ch: usize, scale: usize) -> Self {
        let c = GEN_CHANNELS;
        let blocks = (0..RES_BLOCKS)
            .map(|i| {
                (
                    ConvLayer::init(rng, &format!("{prefix}.res{i}.conv1"), c, c, 3),
                    ConvLayer::init(rng, &format!("{prefix}.res{i}.conv2"), c, c, 3),
                )
            })
            .collect();
        GenTrunk {
            stem: ConvLayer::init(rng, &format!("{prefix}.stem"), c, in_ch, 3),
            blocks,
            post: ConvLayer::init(rng, &format!("{prefix}.post"), c, c, 3),
            // Zero-initialized so the untrained generator is the identity
            // around its bicubic base.
            out: ConvLayer::init_zero(&format!("{prefix}.out"), out_ch, c, 3),
            scale,
        }
    }

    /// Residual trunk producing the HR delta.
    fn delta(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.stem.forward(x, 1, 1)?.leaky_relu(LRELU_SLOPE);
        for (c1, c2) in &self.blocks {
            let t = c1.forward(&h, 1, 1)?.leaky_relu(LRELU_SLOPE);
            let t = c2.forward(&t, 1, 1)?;
            h = h.add(&t)?;
        }
        let h = h.upsample_nearest(self.scale)?;
        let h = self.post.forward(&h, 1, 1)?.leaky_relu(LRELU_SLOPE);
        self.out.forward(&h, 1, 1)
    }

    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.stem.params();
        for (c1, c2) in &self.blocks {
            p.extend(c1.params());
            p.extend(c2.params());
        }
        p.extend(self.post.params());
        p.extend(self.out.params());
        p
    }
}

/// Branch-1: color layer generator with a global bicubic residual. Applied
/// to foreground and background independently with shared weights.
pub struct GeneratorColor {
    trunk: GenTrunk,
}

impl GeneratorColor {
    pub fn init(rng: &mut ChaCha8Rng, scale: usize) -> Self {
        GeneratorColor {
            trunk: GenTrunk::init(rng, "gen_color", 3, 3, scale),
        }
    }

    pub fn scale(&self) -> usize {
        self.trunk.scale
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = x.shape();
        let base = imaging::bicubic_resize(&x.detach(), s[2] * self.trunk.scale, s[3] * self.trunk.scale)?;
        base.add(&self.trunk.delta(x)?)
    }
}

impl Net for GeneratorColor {
    fn params(&self) -> Vec<(String, Tensor)> {
        self.trunk.params()
    }
}

/// How the boundary branch consumes the Teager-filtered alpha.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaInput {
    /// Two channels: [alpha, teager(alpha)].
    Stacked,
    /// Single channel: alpha + lambda * teager(alpha).
    Sharpened { lambda: Elem },
}

/// Branch-2: boundary (alpha) generator. Output passes through a sigmoid
/// around the logit of the bicubic-upsampled alpha, so the untrained net
/// reproduces the bicubic baseline and output stays in (0, 1).
pub struct GeneratorAlpha {
    trunk: GenTrunk,
    pub input_mode: AlphaInput,
}

const LOGIT_EPS: Elem = 1e-6;

impl GeneratorAlpha {
    pub fn init(rng: &mut ChaCha8Rng, scale: usize, input_mode: AlphaInput) -> Self {
        let in_ch = match input_mode {
            AlphaInput::Stacked => 2,
            AlphaInput::Sharpened { .. } => 1,
        };
        GeneratorAlpha {
            trunk: GenTrunk::init(rng, "gen_alpha", in_ch, 1, scale),
            input_mode,
        }
    }

    pub fn scale(&self) -> usize {
        self.trunk.scale
    }

    pub fn forward(&self, alpha_lr: &Tensor) -> Result<Tensor> {
        let s = alpha_lr.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::InvalidArgument(format!(
                "alpha generator expects [N, 1, H, W], got {:?}",
                s
            )));
        }
        let boundary = imaging::teager_filter(&alpha_lr.detach())?;
        let input = match self.input_mode {
            AlphaInput::Stacked => {
                Tensor::concat_channels(&[alpha_lr.clone(), boundary])?
            }
            AlphaInput::Sharpened { lambda } => alpha_lr.add(&boundary.scale(lambda))?,
        };
        let (oh, ow) = (s[2] * self.trunk.scale, s[3] * self.trunk.scale);
        let base = imaging::bicubic_resize(&alpha_lr.detach(), oh, ow)?;
        let logit: Vec<Elem> = base
            .data()
            .iter()
            .map(|&a| {
                let a = a.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                (a / (1.0 - a)).ln()
            })
            .collect();
        let base_logit = Tensor::new(&[s[0], 1, oh, ow], logit)?;
        Ok(base_logit.add(&self.trunk.delta(&input)?)?.sigmoid())
    }
}

impl Net for GeneratorAlpha {
    fn params(&self) -> Vec<(String, Tensor)> {
        self.trunk.params()
    }
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

const DISC_CHANNELS: [usize; 4] = [16, 32, 64, 64];
pub const SN_ITERS: usize = 5;

/// Patch discriminator: four stride-2 convs, every weight spectrally
/// normalized at each forward pass. Output is a raw logit map.
pub struct Discriminator {
    convs: Vec<ConvLayer>,
    head: ConvLayer,
    /// Persisted power-iteration state, one vector per conv (head last).
    u: RefCell<Vec<Vec<Elem>>>,
}

impl Discriminator {
    pub fn init(rng: &mut ChaCha8Rng, prefix: &str, in_ch: usize) -> Self {
        let mut convs = Vec::new();
        let mut c_in = in_ch;
        for (i, &c_out) in DISC_CHANNELS.iter().enumerate() {
            convs.push(ConvLayer::init(rng, &format!("{prefix}.conv{i}"), c_out, c_in, 3));
            c_in = c_out;
        }
        let head = ConvLayer::init(rng, &format!("{prefix}.head"), 1, c_in, 1);
        let u = convs
            .iter()
            .chain(std::iter::once(&head))
            .map(|c| {
                let rows = c.weight.shape()[0];
                let mut v: Vec<Elem> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<Elem>().sqrt().max(1e-8);
                v.iter_mut().for_each(|x| *x /= n);
                v
            })
            .collect();
        Discriminator {
            convs,
            head,
            u: RefCell::new(u),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut u_state = self.u.borrow_mut();
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let (w, u_new) = spectral_normalize(&conv.weight, &u_state[i], SN_ITERS)?;
            u_state[i] = u_new;
            h = h.conv2d(&w, &conv.bias, 2, 1)?.leaky_relu(LRELU_SLOPE);
        }
        let last = self.convs.len();
        let (w, u_new) = spectral_normalize(&self.head.weight, &u_state[last], SN_ITERS)?;
        u_state[last] = u_new;
        h.conv2d(&w, &self.head.bias, 1, 0)
    }

    pub fn sn_state(&self) -> Vec<Vec<Elem>> {
        self.u.borrow().clone()
    }

    pub fn set_sn_state(&self, state: Vec<Vec<Elem>>) {
        *self.u.borrow_mut() = state;
    }
}

impl Net for Discriminator {
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p: Vec<(String, Tensor)> = self.convs.iter().flat_map(|c| c.params()).collect();
        p.extend(self.head.params());
        p
    }
}

// ---------------------------------------------------------------------------
// Character classifier
// ---------------------------------------------------------------------------

pub const CLASSIFIER_INPUT: usize = 32;

/// Three conv+pool stages then a linear head over 36 classes; input is a
/// 32x32 luma crop.
pub struct CharClassifier {
    c1: ConvLayer,
    c2: ConvLayer,
    c3: ConvLayer,
    fc: LinearLayer,
}

impl CharClassifier {
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        CharClassifier {
            c1: ConvLayer::init(rng, "classifier.conv1", 8, 1, 3),
            c2: ConvLayer::init(rng, "classifier.conv2", 16, 8, 3),
            c3: ConvLayer::init(rng, "classifier.conv3", 32, 16, 3),
            fc: LinearLayer::init(rng, "classifier.fc", NUM_CLASSES, 32 * 4 * 4),
        }
    }

    /// Stage-2 feature map and class logits.
    pub fn features_and_logits(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != CLASSIFIER_INPUT || s[3] != CLASSIFIER_INPUT {
            return Err(Error::InvalidArgument(format!(
                "classifier expects [N, 1, 32, 32], got {:?}",
                s
            )));
        }
        let h = self.c1.forward(x, 1, 1)?.leaky_relu(LRELU_SLOPE).avg_pool2()?;
        let f2 = self.c2.forward(&h, 1, 1)?.leaky_relu(LRELU_SLOPE).avg_pool2()?;
        let h = self.c3.forward(&f2, 1, 1)?.leaky_relu(LRELU_SLOPE).avg_pool2()?;
        let n = h.shape()[0];
        let flat = h.reshape(&[n, 32 * 4 * 4])?;
        let logits = self.fc.forward(&flat)?;
        Ok((f2, logits))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.features_and_logits(x)?.1)
    }

    /// Argmax class per batch item.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(x)?;
        let s = logits.shape();
        let data = logits.data();
        Ok((0..s[0])
            .map(|i| {
                let row = &data[i * s[1]..(i + 1) * s[1]];
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(j, _)| j)
                    .unwrap_or(0)
            })
            .collect())
    }
}

impl Net for CharClassifier {
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.c1.params();
        p.extend(self.c2.params());
        p.extend(self.c3.params());
        p.extend(self.fc.params());
        p
    }
}

// ---------------------------------------------------------------------------
// Model set and forward pipeline
// ---------------------------------------------------------------------------

/// The five networks of the pipeline.
pub struct ModelSet {
    pub gen_color: GeneratorColor,
    pub gen_alpha: GeneratorAlpha,
    pub disc_color: Discriminator,
    pub disc_alpha: Discriminator,
    pub classifier: CharClassifier,
    pub scale: usize,
}

impl ModelSet {
    pub fn init(rng: &mut ChaCha8Rng, scale: usize, alpha_input: AlphaInput) -> Self {
        ModelSet {
            gen_color: GeneratorColor::init(rng, scale),
            gen_alpha: GeneratorAlpha::init(rng, scale, alpha_input),
            // Color discriminator sees [F; B] stacked (6 channels).
            disc_color: Discriminator::init(rng, "disc_color", 6),
            disc_alpha: Discriminator::init(rng, "disc_alpha", 1),
            classifier: CharClassifier::init(rng),
            scale,
        }
    }

    pub fn all_params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.gen_color.params();
        p.extend(self.gen_alpha.params());
        p.extend(self.disc_color.params());
        p.extend(self.disc_alpha.params());
        p.extend(self.classifier.params());
        p
    }
}

/// Run both branches on LR layers and compose the HR output.
pub fn sr_forward(models: &ModelSet, lr_layers: &LayerDecomposition) -> Result<(LayerDecomposition, Tensor)> {
    let fg_hr = models.gen_color.forward(&lr_layers.fg)?;
    let bg_hr = models.gen_color.forward(&lr_layers.bg)?;
    let alpha_hr = models.gen_alpha.forward(&lr_layers.alpha)?;
    let hr_layers = LayerDecomposition::new(alpha_hr, fg_hr, bg_hr)?;
    let composed = compose(&hr_layers)?;
    Ok((hr_layers, composed))
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean L1 content loss.
pub fn loss_pixel(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    pred.l1_distance(target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvRole {
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdvMode {
    /// Non-saturating logistic GAN loss.
    #[default]
    Standard,
    /// Relativistic-average logistic loss.
    Relativistic,
}

/// Adversarial loss over patch logit maps.
pub fn loss_adversarial(
    d_real: &Tensor,
    d_fake: &Tensor,
    role: AdvRole,
    mode: AdvMode,
) -> Result<Tensor> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::InvalidArgument(format!(
            "logit map shapes differ: {:?} vs {:?}",
            d_real.shape(),
            d_fake.shape()
        )));
    }
    match mode {
        AdvMode::Standard => match role {
            AdvRole::Discriminator => {
                // -log sigmoid(real) - log(1 - sigmoid(fake))
                let lr = d_real.scale(-1.0).softplus().mean();
                let lf = d_fake.softplus().mean();
                lr.add(&lf)
            }
            AdvRole::Generator => Ok(d_fake.scale(-1.0).softplus().mean()),
        },
        AdvMode::Relativistic => {
            let shape = d_real.shape();
            let mean_fake = d_fake.mean().broadcast_scalar(&shape)?;
            let mean_real = d_real.mean().broadcast_scalar(&shape)?;
            let rel_real = d_real.sub(&mean_fake)?;
            let rel_fake = d_fake.sub(&mean_real)?;
            match role {
                AdvRole::Discriminator => {
                    let a = rel_real.scale(-1.0).softplus().mean();
                    let b = rel_fake.softplus().mean();
                    a.add(&b)
                }
                AdvRole::Generator => {
                    let a = rel_fake.scale(-1.0).softplus().mean();
                    let b = rel_real.softplus().mean();
                    a.add(&b)
                }
            }
        }
    }
}

/// Differentiable luma conversion of an RGB tensor.
pub fn to_luma(rgb: &Tensor) -> Result<Tensor> {
    let r = rgb.crop_channels(0, 1)?.scale(0.299);
    let g = rgb.crop_channels(1, 1)?.scale(0.587);
    let b = rgb.crop_channels(2, 1)?.scale(0.114);
    r.add(&g)?.add(&b)
}

/// Extract classifier-ready 32x32 luma crops for every character box.
/// `boxes`/`labels` hold one list per batch image, boxes in HR coordinates.
fn character_crops(
    composed: &Tensor,
    boxes: &[Vec<(usize, usize, usize, usize)>],
    labels: &[Vec<usize>],
) -> Result<Option<(Tensor, Vec<usize>)>> {
    let n = composed.shape()[0];
    if boxes.len() != n || labels.len() != n {
        return Err(Error::InvalidArgument(format!(
            "boxes/labels for {} images but batch is {n}",
            boxes.len()
        )));
    }
    let mut crops = Vec::new();
    let mut flat_labels = Vec::new();
    for (img, (bs, ls)) in boxes.iter().zip(labels).enumerate() {
        if bs.len() != ls.len() {
            return Err(Error::InvalidArgument(
                "box/label count mismatch within an image".into(),
            ));
        }
        for (&(x, y, w, h), &label) in bs.iter().zip(ls) {
            let crop = composed.crop_image(img, y, x, h, w)?;
            let crop = imaging::bicubic_resize(&crop, CLASSIFIER_INPUT, CLASSIFIER_INPUT)?;
            crops.push(to_luma(&crop)?);
            flat_labels.push(label);
        }
    }
    if crops.is_empty() {
        return Ok(None);
    }
    Ok(Some((Tensor::concat_batch(&crops)?, flat_labels)))
}

/// Character classification loss on the composed HR output. Gradients reach
/// the generators through the crops; the classifier itself stays frozen by
/// simply not stepping its parameters.
pub fn loss_char(
    composed: &Tensor,
    boxes: &[Vec<(usize, usize, usize, usize)>],
    labels: &[Vec<usize>],
    classifier: &CharClassifier,
) -> Result<Tensor> {
    match character_crops(composed, boxes, labels)? {
        // No characters: defined as zero.
        None => Ok(Tensor::scalar(0.0)),
        Some((batch, flat_labels)) => {
            let logits = classifier.forward(&batch)?;
            logits.softmax_cross_entropy(&flat_labels)
        }
    }
}

/// Optional feature-matching loss: mean L1 between classifier stage-2
/// feature maps of predicted and target crops.
pub fn loss_feature_match(
    composed: &Tensor,
    target: &Tensor,
    boxes: &[Vec<(usize, usize, usize, usize)>],
    labels: &[Vec<usize>],
    classifier: &CharClassifier,
) -> Result<Tensor> {
    let pred = character_crops(composed, boxes, labels)?;
    let tgt = character_crops(&target.detach(), boxes, labels)?;
    match (pred, tgt) {
        (Some((p, _)), Some((t, _))) => {
            let (fp, _) = classifier.features_and_logits(&p)?;
            let (ft, _) = classifier.features_and_logits(&t.detach())?;
            fp.l1_distance(&ft.detach())
        }
        _ => Ok(Tensor::scalar(0.0)),
    }
}

#[cfg(test)]
mod tests;
