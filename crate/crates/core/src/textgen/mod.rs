//! Synthetic text dataset: HR images with exact ground-truth layer
//! decompositions and per-character labels.
//!
//! Layers are quantized to 8 bits before composition, so the stored HR image
//! equals `quantize(compose(layers))` bit-exactly both in memory and after a
//! disk round trip.

pub mod atlas;

pub use atlas::{char_for_class, class_for_char, CLASS_CHARS, NUM_CLASSES};

use crate::error::{Error, Result};
use crate::imaging::{self, RasterImage};
use crate::matting::{compose, LayerDecomposition};
use crate::tensorgrad::{Elem, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Generator settings.
#[derive(Debug, Clone)]
pub struct GenConfig {
    /// HR image side length; images are square.
    pub hr_size: usize,
    /// Super-resolution factor (LR side = hr_size / scale).
    pub scale: usize,
    pub chars_min: usize,
    pub chars_max: usize,
    /// Minimum |luma(fg) - luma(bg)|.
    pub min_contrast: Elem,
    /// Rendered glyph cell side, placed on a 2x2 grid with jitter.
    pub glyph_cell: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            hr_size: 64,
            scale: 2,
            chars_min: 1,
            chars_max: 4,
            min_contrast: 0.3,
            // Small enough that x2 downsampling genuinely degrades character
            // legibility; larger cells survive bicubic upsampling unharmed.
            glyph_cell: 10,
        }
    }
}

const GRID: usize = 2;

impl GenConfig {
    fn validate(&self) -> Result<()> {
        if self.hr_size == 0 || self.scale == 0 || self.hr_size % self.scale != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be a positive multiple of scale {}",
                self.hr_size, self.scale
            )));
        }
        if self.hr_size % GRID != 0 {
            return Err(Error::Config(format!(
                "hr_size {} must be divisible by the {GRID}x{GRID} layout grid",
                self.hr_size
            )));
        }
        let slot = self.hr_size / GRID;
        if self.glyph_cell < atlas::GLYPH_SIZE || self.glyph_cell > slot {
            return Err(Error::Config(format!(
                "glyph_cell {} must lie in [{}, {slot}]",
                self.glyph_cell,
                atlas::GLYPH_SIZE
            )));
        }
        if self.chars_min == 0 || self.chars_min > self.chars_max {
            return Err(Error::Config(format!(
                "invalid char count range {}..={}",
                self.chars_min, self.chars_max
            )));
        }
        if self.chars_max > GRID * GRID {
            return Err(Error::Config(format!(
                "layout holds at most {} characters, asked for {}",
                GRID * GRID,
                self.chars_max
            )));
        }
        if !(0.0..1.0).contains(&self.min_contrast) {
            return Err(Error::Config(format!(
                "min_contrast {} outside [0, 1)",
                self.min_contrast
            )));
        }
        Ok(())
    }
}

/// One synthetic example.
#[derive(Debug, Clone)]
pub struct TextSample {
    pub hr: RasterImage,
    pub lr: RasterImage,
    /// Ground-truth layers at HR resolution.
    pub gt_layers: LayerDecomposition,
    /// Character boxes (x, y, w, h) in HR coordinates, non-overlapping.
    pub boxes: Vec<(usize, usize, usize, usize)>,
    /// Class ids parallel to `boxes`.
    pub labels: Vec<usize>,
    pub seed: u64,
}

/// Scale a glyph bitmap to `cell x cell` with bilinear interpolation; the
/// anti-aliased edge produces genuine fractional alpha.
pub fn glyph_raster(class_id: usize, cell: usize) -> Result<Tensor> {
    if cell < atlas::GLYPH_SIZE {
        return Err(Error::InvalidArgument(format!(
            "cell {cell} smaller than the glyph bitmap"
        )));
    }
    let bitmap = atlas::glyph_bitmap(class_id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown class id {class_id}")))?;
    let g = atlas::GLYPH_SIZE;
    let mut out = vec![0.0; cell * cell];
    let scale = g as Elem / cell as Elem;
    let sample = |y: isize, x: isize| -> Elem {
        let y = y.clamp(0, g as isize - 1) as usize;
        let x = x.clamp(0, g as isize - 1) as usize;
        bitmap[y * g + x] as Elem
    };
    for dy in 0..cell {
        let sy = (dy as Elem + 0.5) * scale - 0.5;
        let y0 = sy.floor();
        let fy = sy - y0;
        for dx in 0..cell {
            let sx = (dx as Elem + 0.5) * scale - 0.5;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (yi, xi) = (y0 as isize, x0 as isize);
            let v = sample(yi, xi) * (1.0 - fy) * (1.0 - fx)
                + sample(yi, xi + 1) * (1.0 - fy) * fx
                + sample(yi + 1, xi) * fy * (1.0 - fx)
                + sample(yi + 1, xi + 1) * fy * fx;
            out[dy * cell + dx] = v.clamp(0.0, 1.0);
        }
    }
    Tensor::new(&[1, 1, cell, cell], out)
}

fn luma(rgb: [Elem; 3]) -> Elem {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

fn quantize_unit(v: Elem) -> Elem {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Deterministically synthesize one sample from a seed.
pub fn synth_sample(seed: u64, cfg: &GenConfig) -> Result<TextSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hr = cfg.hr_size;
    let slot = hr / GRID;
    let cell = cfg.glyph_cell;

    let count = rng.gen_range(cfg.chars_min..=cfg.chars_max);
    let labels: Vec<usize> = (0..count).map(|_| rng.gen_range(0..NUM_CLASSES)).collect();

    // Rejection-sample colors until the luma contrast is satisfied; colors
    // are quantized to 8 bits up front so the stored layers are exact.
    let (fg_color, bg_color) = loop {
        let f: [Elem; 3] = [
            quantize_unit(rng.gen()),
            quantize_unit(rng.gen()),
            quantize_unit(rng.gen()),
        ];
        let b: [Elem; 3] = [
            quantize_unit(rng.gen()),
            quantize_unit(rng.gen()),
            quantize_unit(rng.gen()),
        ];
        if (luma(f) - luma(b)).abs() >= cfg.min_contrast {
            break (f, b);
        }
    };

    let mut slots: Vec<usize> = (0..GRID * GRID).collect();
    slots.shuffle(&mut rng);
    let mut boxes = Vec::with_capacity(count);
    let mut alpha: Vec<Elem> = vec![0.0; hr * hr];
    for (i, &label) in labels.iter().enumerate() {
        let s = slots[i];
        let (sy, sx) = (s / GRID, s % GRID);
        let jy = rng.gen_range(0..=(slot - cell));
        let jx = rng.gen_range(0..=(slot - cell));
        let (y0, x0) = (sy * slot + jy, sx * slot + jx);
        boxes.push((x0, y0, cell, cell));
        let glyph = glyph_raster(label, cell)?;
        let gdata = glyph.data();
        for gy in 0..cell {
            for gx in 0..cell {
                let p = (y0 + gy) * hr + x0 + gx;
                alpha[p] = alpha[p].max(gdata[gy * cell + gx]);
            }
        }
    }
    for v in alpha.iter_mut() {
        *v = quantize_unit(*v);
    }

    let alpha_t = Tensor::new(&[1, 1, hr, hr], alpha)?;
    let mut fg = vec![0.0; 3 * hr * hr];
    let mut bg = vec![0.0; 3 * hr * hr];
    for c in 0..3 {
        fg[c * hr * hr..(c + 1) * hr * hr].fill(fg_color[c]);
        bg[c * hr * hr..(c + 1) * hr * hr].fill(bg_color[c]);
    }
    let gt_layers = LayerDecomposition::new(
        alpha_t,
        Tensor::new(&[1, 3, hr, hr], fg)?,
        Tensor::new(&[1, 3, hr, hr], bg)?,
    )?;
    let composed = compose(&gt_layers)?;
    let hr_img = imaging::to_u8(&composed)?;
    let lr_size = hr / cfg.scale;
    let lr_img = imaging::to_u8(&imaging::bicubic_resize(&composed, lr_size, lr_size)?)?;
    Ok(TextSample {
        hr: hr_img,
        lr: lr_img,
        gt_layers,
        boxes,
        labels,
        seed,
    })
}

/// Per-sample manifest record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    pub seed: u64,
    pub labels: Vec<usize>,
    pub boxes: Vec<(usize, usize, usize, usize)>,
}

impl ManifestEntry {
    pub fn label_string(&self) -> String {
        self.labels
            .iter()
            .map(|&l| char_for_class(l).unwrap_or('?'))
            .collect()
    }
}

pub fn sample_dir(root: &Path, id: usize) -> PathBuf {
    root.join(format!("{id:05}"))
}

/// Generate `n` samples under `out_dir` (sample `i` uses seed `seed + i`)
/// and write the tab-separated manifest.
pub fn dataset_generate(
    n: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
    cfg: &GenConfig,
) -> Result<Vec<ManifestEntry>> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    cfg.validate()?;
    let root = out_dir.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root.display().to_string(), e))?;
    let mut manifest = Vec::with_capacity(n);
    let mut lines = String::new();
    // Tensors are not Send, so workers hand back plain rasters and the
    // manifest rows; writing stays on this thread in index order.
    let rendered = crate::util::run_indexed(n, |i| -> Result<_> {
        let sample = synth_sample(seed + i as u64, cfg)?;
        let alpha = imaging::to_u8(&sample.gt_layers.alpha)?;
        let fg = imaging::to_u8(&sample.gt_layers.fg)?;
        let bg = imaging::to_u8(&sample.gt_layers.bg)?;
        Ok((sample.hr, sample.lr, alpha, fg, bg, sample.boxes, sample.labels, sample.seed))
    });
    for (i, r) in rendered.into_iter().enumerate() {
        let (hr, lr, alpha, fg, bg, sboxes, labels, sseed) = r?;
        let dir = sample_dir(root, i);
        fs::create_dir_all(&dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        imaging::save_image(&hr, dir.join("hr.ppm"))?;
        imaging::save_image(&lr, dir.join("lr.ppm"))?;
        imaging::save_image(&alpha, dir.join("alpha.pgm"))?;
        imaging::save_image(&fg, dir.join("fg.ppm"))?;
        imaging::save_image(&bg, dir.join("bg.ppm"))?;
        let entry = ManifestEntry {
            id: i,
            seed: sseed,
            labels,
            boxes: sboxes,
        };
        let boxes = entry
            .boxes
            .iter()
            .map(|(x, y, w, h)| format!("{x},{y},{w},{h}"))
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            lines,
            "{}\t{}\t{}\t{}",
            entry.id,
            entry.seed,
            entry.label_string(),
            boxes
        )
        .expect("string write");
        manifest.push(entry);
    }
    let mpath = root.join("manifest.tsv");
    fs::write(&mpath, lines).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    Ok(manifest)
}

/// Parse a dataset manifest.
pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = dir.as_ref().join("manifest.tsv");
    let text =
        fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parse_err = || Error::Config(format!("bad manifest line {}", lineno + 1));
        let id: usize = fields.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
        let seed: u64 = fields.next().ok_or_else(parse_err)?.parse().map_err(|_| parse_err())?;
        let label_str = fields.next().ok_or_else(parse_err)?;
        let labels: Vec<usize> = label_str
            .chars()
            .map(|c| class_for_char(c).ok_or_else(parse_err))
            .collect::<Result<_>>()?;
        let boxes_str = fields.next().ok_or_else(parse_err)?;
        let mut boxes = Vec::new();
        for b in boxes_str.split(';').filter(|s| !s.is_empty()) {
            let nums: Vec<usize> = b
                .split(',')
                .map(|v| v.parse().map_err(|_| parse_err()))
                .collect::<Result<_>>()?;
            if nums.len() != 4 {
                return Err(parse_err());
            }
            boxes.push((nums[0], nums[1], nums[2], nums[3]));
        }
        if boxes.len() != labels.len() {
            return Err(parse_err());
        }
        out.push(ManifestEntry { id, seed, labels, boxes });
    }
    if out.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "empty manifest at {}",
            path.display()
        )));
    }
    Ok(out)
}

/// Load one sample's images and ground-truth layers back from disk.
pub fn load_sample(dir: impl AsRef<Path>, entry: &ManifestEntry) -> Result<TextSample> {
    let sdir = sample_dir(dir.as_ref(), entry.id);
    let hr = imaging::load_image(sdir.join("hr.ppm"))?;
    let lr = imaging::load_image(sdir.join("lr.ppm"))?;
    let alpha = imaging::to_float(&imaging::load_image(sdir.join("alpha.pgm"))?);
    let fg = imaging::to_float(&imaging::load_image(sdir.join("fg.ppm"))?);
    let bg = imaging::to_float(&imaging::load_image(sdir.join("bg.ppm"))?);
    Ok(TextSample {
        hr,
        lr,
        gt_layers: LayerDecomposition::new(alpha, fg, bg)?,
        boxes: entry.boxes.clone(),
        labels: entry.labels.clone(),
        seed: entry.seed,
    })
}
