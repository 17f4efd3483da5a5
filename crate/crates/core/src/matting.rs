//! Layer decomposition and recomposition: the matting equation
//! `I = alpha * F + (1 - alpha) * B`, trimap generation, foreground and
//! background color estimation, and a small learned matting net.

use crate::error::{Error, Result};
use crate::imaging;
use crate::model::{ConvLayer, Net};
use crate::tensorgrad::{Elem, Tensor};
use crate::textgen::TextSample;
use rand_chacha::ChaCha8Rng;

/// Alpha, foreground and background layers at one resolution.
/// `alpha` is [N, 1, H, W] in [0, 1]; `fg` and `bg` are [N, 3, H, W].
#[derive(Debug, Clone)]
pub struct LayerDecomposition {
    pub alpha: Tensor,
    pub fg: Tensor,
    pub bg: Tensor,
}

impl LayerDecomposition {
    pub fn new(alpha: Tensor, fg: Tensor, bg: Tensor) -> Result<Self> {
        let sa = alpha.shape();
        let sf = fg.shape();
        let sb = bg.shape();
        if sa.len() != 4 || sa[1] != 1 {
            return Err(Error::InvalidArgument(format!(
                "alpha must be [N, 1, H, W], got {:?}",
                sa
            )));
        }
        if sf != sb || sf[1] != 3 || sf[0] != sa[0] || sf[2] != sa[2] || sf[3] != sa[3] {
            return Err(Error::InvalidArgument(format!(
                "layer shapes disagree: alpha {:?}, fg {:?}, bg {:?}",
                sa, sf, sb
            )));
        }
        Ok(LayerDecomposition { alpha, fg, bg })
    }
}

/// Pixelwise `alpha * F + (1 - alpha) * B`, alpha broadcast over the three
/// color channels. Built from differentiable ops, so gradients reach all
/// three layers.
pub fn compose(d: &LayerDecomposition) -> Result<Tensor> {
    let a3 = Tensor::concat_channels(&[d.alpha.clone(), d.alpha.clone(), d.alpha.clone()])?;
    d.fg.sub(&d.bg)?.mul(&a3)?.add(&d.bg)
}

/// Per-pixel trimap label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriLabel {
    Fg,
    Bg,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct Trimap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<TriLabel>,
}

/// Threshold alpha into {FG, BG, UNKNOWN} and widen the uncertain band by a
/// Chebyshev radius: a pixel whose neighborhood holds a different initial
/// label becomes UNKNOWN.
pub fn make_trimap(alpha: &Tensor, lo: Elem, hi: Elem, dilate_radius: usize) -> Result<Trimap> {
    if !(0.0..1.0).contains(&lo) || !(lo < hi && hi <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "trimap thresholds need 0 <= lo < hi <= 1, got {lo}, {hi}"
        )));
    }
    let s = alpha.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 1 {
        return Err(Error::InvalidArgument(format!(
            "make_trimap expects [1, 1, H, W] alpha, got {:?}",
            s
        )));
    }
    let (h, w) = (s[2], s[3]);
    let data = alpha.data();
    let initial: Vec<TriLabel> = data
        .iter()
        .map(|&a| {
            if a >= hi {
                TriLabel::Fg
            } else if a <= lo {
                TriLabel::Bg
            } else {
                TriLabel::Unknown
            }
        })
        .collect();
    let r = dilate_radius as isize;
    let mut labels = initial.clone();
    if r > 0 {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let me = initial[y as usize * w + x as usize];
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        if initial[ny as usize * w + nx as usize] != me {
                            labels[y as usize * w + x as usize] = TriLabel::Unknown;
                            break 'scan;
                        }
                    }
                }
            }
        }
    }
    Ok(Trimap {
        width: w,
        height: h,
        labels,
    })
}

const FB_SEED_HI: Elem = 0.95;
const FB_SEED_LO: Elem = 0.05;
const FB_TOL: Elem = 1e-4;
const FB_MAX_ITERS: usize = 500;

/// Estimate full foreground and background color fields from an image and
/// its alpha: seed each field from near-pure pixels, then fill the rest by
/// iterative 4-neighbor diffusion with the seeds held fixed.
pub fn estimate_fb(image: &Tensor, alpha: &Tensor) -> Result<(Tensor, Tensor)> {
    let si = image.shape();
    let sa = alpha.shape();
    if si.len() != 4 || si[0] != 1 || si[1] != 3 {
        return Err(Error::InvalidArgument(format!(
            "estimate_fb expects [1, 3, H, W] image, got {:?}",
            si
        )));
    }
    if sa != vec![1, 1, si[2], si[3]] {
        return Err(Error::InvalidArgument(format!(
            "estimate_fb alpha {:?} does not match image {:?}",
            sa, si
        )));
    }
    let (h, w) = (si[2], si[3]);
    let a = alpha.data();
    let img = image.data();
    let fg_seed: Vec<bool> = a.iter().map(|&v| v >= FB_SEED_HI).collect();
    let bg_seed: Vec<bool> = a.iter().map(|&v| v <= FB_SEED_LO).collect();
    if !fg_seed.iter().any(|&s| s) {
        return Err(Error::DegenerateInput(
            "no foreground seed pixels (alpha never reaches 0.95)".into(),
        ));
    }
    if !bg_seed.iter().any(|&s| s) {
        return Err(Error::DegenerateInput(
            "no background seed pixels (alpha never drops to 0.05)".into(),
        ));
    }
    let diffuse = |seed: &[bool]| -> Vec<Elem> {
        let plane = h * w;
        let mut field = vec![0.0; 3 * plane];
        // Seed pixels take the image color; the rest start at the seed mean.
        for c in 0..3 {
            let mut sum = 0.0;
            let mut count = 0.0;
            for p in 0..plane {
                if seed[p] {
                    sum += img[c * plane + p];
                    count += 1.0;
                }
            }
            let mean = sum / count;
            for p in 0..plane {
                field[c * plane + p] = if seed[p] { img[c * plane + p] } else { mean };
            }
        }
        let mut next = field.clone();
        for _ in 0..FB_MAX_ITERS {
            let mut max_change: Elem = 0.0;
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        if seed[p] {
                            continue;
                        }
                        let mut sum = 0.0;
                        let mut cnt = 0.0;
                        if y > 0 {
                            sum += field[c * plane + p - w];
                            cnt += 1.0;
                        }
                        if y + 1 < h {
                            sum += field[c * plane + p + w];
                            cnt += 1.0;
                        }
                        if x > 0 {
                            sum += field[c * plane + p - 1];
                            cnt += 1.0;
                        }
                        if x + 1 < w {
                            sum += field[c * plane + p + 1];
                            cnt += 1.0;
                        }
                        let v = sum / cnt;
                        let change = (v - field[c * plane + p]).abs();
                        if change > max_change {
                            max_change = change;
                        }
                        next[c * plane + p] = v;
                    }
                }
            }
            std::mem::swap(&mut field, &mut next);
            next.copy_from_slice(&field);
            if max_change < FB_TOL {
                break;
            }
        }
        field
    };
    let mut fg = diffuse(&fg_seed);
    let mut bg = diffuse(&bg_seed);
    // Least-squares projection onto the matting constraint: split the
    // recomposition residual between F and B so alpha*F + (1-alpha)*B
    // reproduces the image exactly. The denominator is >= 1/2.
    let plane = h * w;
    for p in 0..plane {
        let al = a[p];
        let norm = al * al + (1.0 - al) * (1.0 - al);
        for c in 0..3 {
            let i = c * plane + p;
            let r = img[i] - (al * fg[i] + (1.0 - al) * bg[i]);
            fg[i] += al * r / norm;
            bg[i] += (1.0 - al) * r / norm;
        }
    }
    let fg = Tensor::new(&[1, 3, h, w], fg)?;
    let bg = Tensor::new(&[1, 3, h, w], bg)?;
    Ok((fg, bg))
}

/// Which resolution of the ground-truth layers to hand back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Lr,
    Hr,
}

/// Exact decomposition from a synthetic sample's stored ground truth. At LR
/// the layers are bicubic-downsampled with alpha re-clamped to [0, 1].
pub fn oracle_decompose(sample: &TextSample, resolution: Resolution) -> Result<LayerDecomposition> {
    match resolution {
        Resolution::Hr => Ok(sample.gt_layers.clone()),
        Resolution::Lr => {
            let hs = sample.gt_layers.alpha.shape();
            let (h, w) = (hs[2], hs[3]);
            let scale = sample.hr.width / sample.lr.width;
            let (lh, lw) = (h / scale, w / scale);
            let alpha = imaging::bicubic_resize(&sample.gt_layers.alpha, lh, lw)?;
            let clamped: Vec<Elem> = alpha.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
            let alpha = Tensor::new(&[1, 1, lh, lw], clamped)?;
            let fg = imaging::bicubic_resize(&sample.gt_layers.fg, lh, lw)?.detach();
            let bg = imaging::bicubic_resize(&sample.gt_layers.bg, lh, lw)?.detach();
            LayerDecomposition::new(alpha, fg, bg)
        }
    }
}

/// Small convolutional alpha predictor standing in for a full deep matting
/// network. Input is the image stacked with a one-hot trimap (6 channels).
pub struct MattingNet {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
}

impl MattingNet {
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        MattingNet {
            conv1: ConvLayer::init(rng, "matting.conv1", 16, 6, 3),
            conv2: ConvLayer::init(rng, "matting.conv2", 16, 16, 3),
            conv3: ConvLayer::init(rng, "matting.conv3", 1, 16, 3),
        }
    }

    /// Raw sigmoid alpha over the whole frame, before the trimap overwrite.
    pub fn forward(&self, image: &Tensor, trimap: &Trimap) -> Result<Tensor> {
        let s = image.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != 3 {
            return Err(Error::InvalidArgument(format!(
                "matting forward expects [1, 3, H, W], got {:?}",
                s
            )));
        }
        let (h, w) = (s[2], s[3]);
        if trimap.width != w || trimap.height != h {
            return Err(Error::InvalidArgument(format!(
                "trimap {}x{} does not match image {}x{}",
                trimap.width, trimap.height, w, h
            )));
        }
        let mut onehot = vec![0.0; 3 * h * w];
        for (p, &l) in trimap.labels.iter().enumerate() {
            let c = match l {
                TriLabel::Fg => 0,
                TriLabel::Bg => 1,
                TriLabel::Unknown => 2,
            };
            onehot[c * h * w + p] = 1.0;
        }
        let tri = Tensor::new(&[1, 3, h, w], onehot)?;
        let x = Tensor::concat_channels(&[image.clone(), tri])?;
        let x = self.conv1.forward(&x, 1, 1)?.leaky_relu(0.2);
        let x = self.conv2.forward(&x, 1, 1)?.leaky_relu(0.2);
        Ok(self.conv3.forward(&x, 1, 1)?.sigmoid())
    }
}

impl Net for MattingNet {
    fn params(&self) -> Vec<(String, Tensor)> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p.extend(self.conv3.params());
        p
    }
}

/// Predict an alpha matte; definite trimap pixels are overwritten with their
/// known value, only UNKNOWN pixels keep the network's prediction.
pub fn matting_predict(net: &MattingNet, image: &Tensor, trimap: &Trimap) -> Result<Tensor> {
    let raw = net.forward(image, trimap)?;
    let mut out = raw.data();
    for (v, &l) in out.iter_mut().zip(&trimap.labels) {
        match l {
            TriLabel::Fg => *v = 1.0,
            TriLabel::Bg => *v = 0.0,
            TriLabel::Unknown => {}
        }
    }
    Tensor::new(&[1, 1, trimap.height, trimap.width], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layers(h: usize, w: usize, a: Elem, f: Elem, b: Elem) -> LayerDecomposition {
        LayerDecomposition::new(
            Tensor::full(&[1, 1, h, w], a),
            Tensor::full(&[1, 3, h, w], f),
            Tensor::full(&[1, 3, h, w], b),
        )
        .unwrap()
    }

    #[test]
    fn compose_limits() {
        let d = layers(4, 4, 1.0, 0.8, 0.2);
        assert!(compose(&d).unwrap().data().iter().all(|&v| (v - 0.8).abs() < 1e-7));
        let d = layers(4, 4, 0.0, 0.8, 0.2);
        assert!(compose(&d).unwrap().data().iter().all(|&v| (v - 0.2).abs() < 1e-7));
        let d = layers(4, 4, 0.5, 0.8, 0.2);
        assert!(compose(&d).unwrap().data().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn compose_alpha_gradient_is_fg_minus_bg() {
        let fg = Tensor::full(&[1, 3, 2, 2], 0.9);
        let bg = Tensor::full(&[1, 3, 2, 2], 0.1);
        let err = crate::tensorgrad::grad_check(
            |a| {
                let d = LayerDecomposition::new(a.clone(), fg.clone(), bg.clone())?;
                Ok(compose(&d)?.sum())
            },
            &Tensor::full(&[1, 1, 2, 2], 0.4),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3);
        // Analytic: d(compose)/d(alpha) summed over channels = 3 * (F - B).
        let a = Tensor::param(&[1, 1, 2, 2], vec![0.4; 4]).unwrap();
        let d = LayerDecomposition::new(
            a.clone(),
            Tensor::full(&[1, 3, 2, 2], 0.9),
            Tensor::full(&[1, 3, 2, 2], 0.1),
        )
        .unwrap();
        compose(&d).unwrap().sum().backward().unwrap();
        for g in a.grad().unwrap() {
            assert!((g - 3.0 * 0.8).abs() < 1e-5);
        }
    }

    #[test]
    fn trimap_thresholds_and_dilation() {
        // Binary 5x5 alpha: left two columns FG, rest BG.
        let mut data = vec![0.0; 25];
        for y in 0..5 {
            for x in 0..2 {
                data[y * 5 + x] = 1.0;
            }
        }
        let alpha = Tensor::new(&[1, 1, 5, 5], data).unwrap();
        let t0 = make_trimap(&alpha, 0.05, 0.95, 0).unwrap();
        assert!(t0.labels.iter().all(|&l| l != TriLabel::Unknown));

        let t1 = make_trimap(&alpha, 0.05, 0.95, 1).unwrap();
        // Brute-force oracle: unknown iff any 8-neighbor differs.
        for y in 0..5i32 {
            for x in 0..5i32 {
                let me = x < 2;
                let mut boundary = false;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if (0..5).contains(&ny) && (0..5).contains(&nx) && ((nx < 2) != me) {
                            boundary = true;
                        }
                    }
                }
                let got = t1.labels[(y * 5 + x) as usize];
                if boundary {
                    assert_eq!(got, TriLabel::Unknown, "at ({x},{y})");
                } else if me {
                    assert_eq!(got, TriLabel::Fg);
                } else {
                    assert_eq!(got, TriLabel::Bg);
                }
            }
        }

        let half = Tensor::full(&[1, 1, 3, 3], 0.5);
        let t = make_trimap(&half, 0.05, 0.95, 0).unwrap();
        assert!(t.labels.iter().all(|&l| l == TriLabel::Unknown));
    }

    #[test]
    fn trimap_validates_thresholds() {
        let a = Tensor::full(&[1, 1, 3, 3], 0.5);
        assert!(make_trimap(&a, 0.9, 0.1, 0).is_err());
    }

    #[test]
    fn estimate_fb_constant_colors() {
        // Text block of fg color on bg color.
        let (h, w) = (8, 8);
        let mut alpha = vec![0.0; h * w];
        for y in 2..6 {
            for x in 2..6 {
                alpha[y * w + x] = 1.0;
            }
        }
        let mut img = vec![0.0; 3 * h * w];
        for c in 0..3 {
            let (f, b) = (0.9 - 0.1 * c as Elem, 0.2 + 0.05 * c as Elem);
            for p in 0..h * w {
                img[c * h * w + p] = if alpha[p] >= 0.5 { f } else { b };
            }
        }
        let image = Tensor::new(&[1, 3, h, w], img).unwrap();
        let alpha = Tensor::new(&[1, 1, h, w], alpha).unwrap();
        let (fg, bg) = estimate_fb(&image, &alpha).unwrap();
        for c in 0..3 {
            let (f, b) = (0.9 - 0.1 * c as Elem, 0.2 + 0.05 * c as Elem);
            for p in 0..h * w {
                assert!((fg.data()[c * h * w + p] - f).abs() < 1e-3);
                assert!((bg.data()[c * h * w + p] - b).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn estimate_fb_degenerate_seeds() {
        let image = Tensor::full(&[1, 3, 4, 4], 0.5);
        let all_fg = Tensor::full(&[1, 1, 4, 4], 1.0);
        match estimate_fb(&image, &all_fg) {
            Err(Error::DegenerateInput(msg)) => assert!(msg.contains("background")),
            other => panic!("expected degenerate input, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn matting_predict_overwrites_definite_pixels() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = MattingNet::init(&mut rng);
        let image = Tensor::full(&[1, 3, 6, 6], 0.5);
        let mut data = vec![0.0; 36];
        for p in 18..36 {
            data[p] = 1.0;
        }
        let alpha = Tensor::new(&[1, 1, 6, 6], data.clone()).unwrap();
        let trimap = make_trimap(&alpha, 0.05, 0.95, 0).unwrap();
        let pred = matting_predict(&net, &image, &trimap).unwrap();
        assert_eq!(pred.data(), data, "no UNKNOWN: output equals the trimap alpha");

        let t2 = make_trimap(&alpha, 0.05, 0.95, 1).unwrap();
        let pred = matting_predict(&net, &image, &t2).unwrap();
        assert!(pred.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
