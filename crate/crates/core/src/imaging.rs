//! Image I/O, quantization, bicubic resampling and the Teager boundary
//! filter.
//!
//! Stored images are 8-bit PPM (P6), PGM (P5) or non-interlaced PNG. In
//! memory images travel as `[1, C, H, W]` tensors in [0, 1].

use crate::error::{Error, Result};
use crate::tensorgrad::{Elem, Tensor};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// 8-bit raster image, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("zero image dimension".into()));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer length {} != {}x{}x{}",
                pixels.len(),
                width,
                height,
                channels
            )));
        }
        Ok(RasterImage {
            width,
            height,
            channels,
            pixels,
        })
    }
}

const MAX_DIM: usize = 1 << 20;

fn read_pnm_token(r: &mut impl BufRead, path: &str) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    // Skip whitespace and comments.
    loop {
        if r.read(&mut byte).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::TruncatedFile(path.to_string()));
        }
        match byte[0] {
            b' ' | b'\t' | b'\r' | b'\n' => continue,
            b'#' => {
                loop {
                    if r.read(&mut byte).map_err(|e| Error::io(path, e))? == 0 {
                        return Err(Error::TruncatedFile(path.to_string()));
                    }
                    if byte[0] == b'\n' {
                        break;
                    }
                }
            }
            c => {
                tok.push(c as char);
                break;
            }
        }
    }
    loop {
        if r.read(&mut byte).map_err(|e| Error::io(path, e))? == 0 {
            break;
        }
        match byte[0] {
            b' ' | b'\t' | b'\r' | b'\n' => break,
            c => tok.push(c as char),
        }
    }
    Ok(tok)
}

fn parse_dim(tok: &str, path: &str) -> Result<usize> {
    let v: usize = tok
        .parse()
        .map_err(|_| Error::UnsupportedFormat(format!("bad PNM header in {path}")))?;
    if v == 0 || v > MAX_DIM {
        return Err(Error::DimensionOverflow(format!("{v} in {path}")));
    }
    Ok(v)
}

/// Load a PPM (P6), PGM (P5) or 8-bit PNG image; the format is sniffed from
/// the file's magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic)
        .map_err(|_| Error::TruncatedFile(pstr.clone()))?;
    match &magic {
        b"P6" | b"P5" => {
            let channels = if &magic == b"P6" { 3 } else { 1 };
            let width = parse_dim(&read_pnm_token(&mut r, &pstr)?, &pstr)?;
            let height = parse_dim(&read_pnm_token(&mut r, &pstr)?, &pstr)?;
            let maxval = read_pnm_token(&mut r, &pstr)?;
            if maxval != "255" {
                return Err(Error::UnsupportedFormat(format!(
                    "PNM maxval {maxval} (only 255 supported) in {pstr}"
                )));
            }
            let mut pixels = vec![0u8; width * height * channels];
            r.read_exact(&mut pixels)
                .map_err(|_| Error::TruncatedFile(pstr.clone()))?;
            RasterImage::new(width, height, channels, pixels)
        }
        [0x89, b'P'] => {
            let file = File::open(path).map_err(|e| Error::io(&pstr, e))?;
            let decoder = png::Decoder::new(BufReader::new(file));
            let mut reader = decoder
                .read_info()
                .map_err(|e| Error::UnsupportedFormat(format!("{pstr}: {e}")))?;
            let mut buf = vec![0u8; reader.output_buffer_size()];
            let info = reader
                .next_frame(&mut buf)
                .map_err(|e| Error::TruncatedFile(format!("{pstr}: {e}")))?;
            if info.bit_depth != png::BitDepth::Eight {
                return Err(Error::UnsupportedFormat(format!(
                    "{pstr}: only 8-bit PNG supported"
                )));
            }
            let channels = match info.color_type {
                png::ColorType::Grayscale => 1,
                png::ColorType::Rgb => 3,
                other => {
                    return Err(Error::UnsupportedFormat(format!(
                        "{pstr}: PNG color type {other:?}"
                    )))
                }
            };
            buf.truncate(info.buffer_size());
            RasterImage::new(info.width as usize, info.height as usize, channels, buf)
        }
        _ => Err(Error::UnsupportedFormat(format!(
            "{pstr}: magic {:?}",
            String::from_utf8_lossy(&magic)
        ))),
    }
}

/// Save an image; format chosen by extension (.ppm, .pgm, .png).
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "ppm" => {
            if img.channels != 3 {
                return Err(Error::InvalidArgument(format!(
                    "PPM requires 3 channels, image has {}",
                    img.channels
                )));
            }
            let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
            let mut w = BufWriter::new(file);
            write!(w, "P6\n{} {}\n255\n", img.width, img.height)
                .and_then(|_| w.write_all(&img.pixels))
                .map_err(|e| Error::io(&pstr, e))
        }
        "pgm" => {
            if img.channels != 1 {
                return Err(Error::InvalidArgument(format!(
                    "PGM requires 1 channel, image has {}",
                    img.channels
                )));
            }
            let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
            let mut w = BufWriter::new(file);
            write!(w, "P5\n{} {}\n255\n", img.width, img.height)
                .and_then(|_| w.write_all(&img.pixels))
                .map_err(|e| Error::io(&pstr, e))
        }
        "png" => {
            let file = File::create(path).map_err(|e| Error::io(&pstr, e))?;
            let mut encoder =
                png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
            encoder.set_color(if img.channels == 3 {
                png::ColorType::Rgb
            } else {
                png::ColorType::Grayscale
            });
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| Error::io(&pstr, std::io::Error::other(e.to_string())))?;
            writer
                .write_image_data(&img.pixels)
                .map_err(|e| Error::io(&pstr, std::io::Error::other(e.to_string())))
        }
        other => Err(Error::UnsupportedFormat(format!(
            "cannot save extension '{other}' ({pstr})"
        ))),
    }
}

/// u8 image -> [1, C, H, W] float tensor in [0, 1].
pub fn to_float(img: &RasterImage) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut data = vec![0.0; w * h * c];
    // Interleaved -> planar.
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[ch * h * w + y * w + x] =
                    img.pixels[(y * w + x) * c + ch] as Elem / 255.0;
            }
        }
    }
    Tensor::new(&[1, c, h, w], data).expect("raster invariants guarantee the shape")
}

/// [1, C, H, W] tensor -> u8 image: clamp to [0, 1], scale by 255, round half
/// away from zero.
pub fn to_u8(t: &Tensor) -> Result<RasterImage> {
    let s = t.shape();
    if s.len() != 4 || s[0] != 1 || (s[1] != 1 && s[1] != 3) {
        return Err(Error::InvalidArgument(format!(
            "to_u8 expects [1, 1|3, H, W], got {:?}",
            s
        )));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let data = t.data();
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("NaN pixel in to_u8 input".into()));
    }
    let mut pixels = vec![0u8; w * h * c];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = data[ch * h * w + y * w + x].clamp(0.0, 1.0);
                pixels[(y * w + x) * c + ch] = (v * 255.0).round() as u8;
            }
        }
    }
    RasterImage::new(w, h, c, pixels)
}

// ---------------------------------------------------------------------------
// Bicubic resampling (Catmull-Rom, a = -0.5)
// ---------------------------------------------------------------------------

fn cubic_weight(x: Elem) -> Elem {
    const A: Elem = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x * x * x - (A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        A * (x * x * x - 5.0 * x * x + 8.0 * x - 4.0)
    } else {
        0.0
    }
}

#[derive(Clone)]
pub(crate) struct Taps {
    pub idx: [usize; 4],
    pub weight: [Elem; 4],
}

/// Per-output-coordinate source taps for one axis, align-centers mapping with
/// clamp-to-edge indices.
pub(crate) fn catmull_rom_taps(src_len: usize, dst_len: usize) -> Vec<Taps> {
    let scale = src_len as Elem / dst_len as Elem;
    (0..dst_len)
        .map(|d| {
            let src = (d as Elem + 0.5) * scale - 0.5;
            let base = src.floor();
            let frac = src - base;
            let base = base as isize;
            let mut idx = [0usize; 4];
            let mut weight = [0.0; 4];
            for (k, (i, w)) in idx.iter_mut().zip(weight.iter_mut()).enumerate() {
                let s = base - 1 + k as isize;
                *i = s.clamp(0, src_len as isize - 1) as usize;
                *w = cubic_weight(frac - (k as Elem - 1.0));
            }
            Taps { idx, weight }
        })
        .collect()
}

/// Evaluate the four Catmull-Rom weights at a sampling phase in [0, 1).
pub fn bicubic_phase_weights(phase: Elem) -> [Elem; 4] {
    [
        cubic_weight(phase + 1.0),
        cubic_weight(phase),
        cubic_weight(1.0 - phase),
        cubic_weight(2.0 - phase),
    ]
}

fn resample_rows(src: &[Elem], h: usize, w: usize, taps: &[Taps]) -> Vec<Elem> {
    let ow = taps.len();
    let mut out = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let orow = &mut out[y * ow..(y + 1) * ow];
        for (ox, t) in taps.iter().enumerate() {
            orow[ox] = t.weight[0] * row[t.idx[0]]
                + t.weight[1] * row[t.idx[1]]
                + t.weight[2] * row[t.idx[2]]
                + t.weight[3] * row[t.idx[3]];
        }
    }
    out
}

fn resample_cols(src: &[Elem], _h: usize, w: usize, taps: &[Taps]) -> Vec<Elem> {
    let oh = taps.len();
    let mut out = vec![0.0; oh * w];
    for (oy, t) in taps.iter().enumerate() {
        let orow = &mut out[oy * w..(oy + 1) * w];
        for x in 0..w {
            orow[x] = t.weight[0] * src[t.idx[0] * w + x]
                + t.weight[1] * src[t.idx[1] * w + x]
                + t.weight[2] * src[t.idx[2] * w + x]
                + t.weight[3] * src[t.idx[3] * w + x];
        }
    }
    out
}

fn scatter_rows(up: &[Elem], h: usize, src_w: usize, taps: &[Taps]) -> Vec<Elem> {
    let ow = taps.len();
    let mut g = vec![0.0; h * src_w];
    for y in 0..h {
        let urow = &up[y * ow..(y + 1) * ow];
        let grow = &mut g[y * src_w..(y + 1) * src_w];
        for (ox, t) in taps.iter().enumerate() {
            for k in 0..4 {
                grow[t.idx[k]] += t.weight[k] * urow[ox];
            }
        }
    }
    g
}

fn scatter_cols(up: &[Elem], src_h: usize, w: usize, taps: &[Taps]) -> Vec<Elem> {
    let mut g = vec![0.0; src_h * w];
    for (oy, t) in taps.iter().enumerate() {
        let urow = &up[oy * w..(oy + 1) * w];
        for x in 0..w {
            for k in 0..4 {
                g[t.idx[k] * w + x] += t.weight[k] * urow[x];
            }
        }
    }
    g
}

/// Separable Catmull-Rom resize of a [N, C, H, W] tensor, horizontal pass
/// then vertical. Output is not clamped; differentiable (the map is linear).
pub fn bicubic_resize(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::InvalidArgument(format!(
            "bicubic_resize expects rank-4 tensor, got {:?}",
            s
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("output dims must be >= 1".into()));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let taps_w = catmull_rom_taps(w, out_w);
    let taps_h = catmull_rom_taps(h, out_h);
    let data = t.data();
    let planes = n * c;
    let mut out = vec![0.0; planes * out_h * out_w];
    for p in 0..planes {
        let horiz = resample_rows(&data[p * h * w..(p + 1) * h * w], h, w, &taps_w);
        let full = resample_cols(&horiz, h, out_w, &taps_h);
        out[p * out_h * out_w..(p + 1) * out_h * out_w].copy_from_slice(&full);
    }
    Ok(Tensor::from_op(
        vec![n, c, out_h, out_w],
        out,
        vec![t.clone()],
        Box::new(move |up| {
            let mut g = vec![0.0; planes * h * w];
            for p in 0..planes {
                let gv = scatter_cols(&up[p * out_h * out_w..(p + 1) * out_h * out_w], h, out_w, &taps_h);
                let gh = scatter_rows(&gv, h, w, &taps_w);
                g[p * h * w..(p + 1) * h * w].copy_from_slice(&gh);
            }
            vec![Some(g)]
        }),
    ))
}

// ---------------------------------------------------------------------------
// Teager energy operator
// ---------------------------------------------------------------------------

/// 2-D Teager energy operator on a single-channel [1, 1, H, W] tensor,
/// clamp-to-edge neighbors:
///
/// ```text
/// psi(i,j) = 3*x(i,j)^2 - 0.5*x(i-1,j-1)*x(i+1,j+1)
///                       - 0.5*x(i-1,j+1)*x(i+1,j-1)
///                       - x(i-1,j)*x(i+1,j) - x(i,j-1)*x(i,j+1)
/// ```
///
/// The coefficients sum to zero, so constant regions map to exactly 0.
pub fn teager_filter(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::InvalidArgument(format!(
            "teager_filter expects [N, 1, H, W], got {:?}",
            s
        )));
    }
    let (n, h, w) = (s[0], s[2], s[3]);
    if h < 3 || w < 3 {
        return Err(Error::InvalidArgument(format!(
            "teager_filter needs at least 3x3, got {h}x{w}"
        )));
    }
    let data = t.data();
    let mut out = vec![0.0; n * h * w];
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    for img in 0..n {
        let src = &data[img * h * w..(img + 1) * h * w];
        let dst = &mut out[img * h * w..(img + 1) * h * w];
        for y in 0..h {
            let ym = clamp(y as isize - 1, h);
            let yp = clamp(y as isize + 1, h);
            for x in 0..w {
                let xm = clamp(x as isize - 1, w);
                let xp = clamp(x as isize + 1, w);
                let c2 = src[y * w + x] * src[y * w + x];
                // Grouped as zero-sum pairs so constant regions cancel
                // exactly in floating point.
                dst[y * w + x] = 0.5 * (c2 - src[ym * w + xm] * src[yp * w + xp])
                    + 0.5 * (c2 - src[ym * w + xp] * src[yp * w + xm])
                    + (c2 - src[ym * w + x] * src[yp * w + x])
                    + (c2 - src[y * w + xm] * src[y * w + xp]);
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, 1, h, w],
        out,
        vec![t.clone()],
        Box::new(move |up| {
            let mut g = vec![0.0; n * h * w];
            for img in 0..n {
                let src = &data[img * h * w..(img + 1) * h * w];
                let gv = &up[img * h * w..(img + 1) * h * w];
                let gd = &mut g[img * h * w..(img + 1) * h * w];
                for y in 0..h {
                    let ym = clamp(y as isize - 1, h);
                    let yp = clamp(y as isize + 1, h);
                    for x in 0..w {
                        let xm = clamp(x as isize - 1, w);
                        let xp = clamp(x as isize + 1, w);
                        let u = gv[y * w + x];
                        gd[y * w + x] += 6.0 * src[y * w + x] * u;
                        gd[ym * w + xm] -= 0.5 * src[yp * w + xp] * u;
                        gd[yp * w + xp] -= 0.5 * src[ym * w + xm] * u;
                        gd[ym * w + xp] -= 0.5 * src[yp * w + xm] * u;
                        gd[yp * w + xm] -= 0.5 * src[ym * w + xp] * u;
                        gd[ym * w + x] -= src[yp * w + x] * u;
                        gd[yp * w + x] -= src[ym * w + x] * u;
                        gd[y * w + xm] -= src[y * w + xp] * u;
                        gd[y * w + xp] -= src[y * w + xm] * u;
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// Additive Teager sharpening: `x + lambda * psi(x)`.
pub fn teager_sharpen(t: &Tensor, lambda: Elem) -> Result<Tensor> {
    let psi = teager_filter(t)?;
    t.detach().add(&psi.scale(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, v: u8) -> RasterImage {
        RasterImage::new(w, h, 1, vec![v; w * h]).unwrap()
    }

    #[test]
    fn pnm_round_trip() {
        let dir = std::env::temp_dir().join("mdgan_imaging_test");
        std::fs::create_dir_all(&dir).unwrap();
        let img = RasterImage::new(3, 2, 3, (0..18).map(|v| (v * 13) as u8).collect()).unwrap();
        let p = dir.join("t.ppm");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);

        let g = gray(4, 3, 77);
        let p = dir.join("t.pgm");
        save_image(&g, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), g);

        let p = dir.join("t.png");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn hand_encoded_pgm() {
        let dir = std::env::temp_dir().join("mdgan_imaging_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("white.pgm");
        std::fs::write(&p, b"P5\n1 1\n255\n\xff").unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!((img.width, img.height, img.channels), (1, 1, 1));
        assert_eq!(img.pixels, vec![255]);
    }

    #[test]
    fn p7_is_unsupported() {
        let dir = std::env::temp_dir().join("mdgan_imaging_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.pam");
        std::fs::write(&p, b"P7\nWIDTH 1\n").unwrap();
        assert!(matches!(
            load_image(&p),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn truncated_pnm() {
        let dir = std::env::temp_dir().join("mdgan_imaging_test");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("trunc.pgm");
        std::fs::write(&p, b"P5\n4 4\n255\nab").unwrap();
        assert!(matches!(load_image(&p), Err(Error::TruncatedFile(_))));
    }

    #[test]
    fn quantization_round_trip_and_rounding() {
        let img = gray(1, 1, 255);
        let t = to_float(&img);
        assert!((t.data()[0] - 1.0).abs() < 1e-7);
        assert_eq!(to_u8(&t).unwrap().pixels, vec![255]);

        let half = Tensor::new(&[1, 1, 1, 1], vec![0.5]).unwrap();
        assert_eq!(to_u8(&half).unwrap().pixels, vec![128]);

        let over = Tensor::new(&[1, 1, 1, 1], vec![1.7]).unwrap();
        assert_eq!(to_u8(&over).unwrap().pixels, vec![255]);

        let nan = Tensor::new(&[1, 1, 1, 1], vec![Elem::NAN]).unwrap();
        assert!(to_u8(&nan).is_err());
    }

    #[test]
    fn bicubic_identity_and_constants() {
        let t = Tensor::new(
            &[1, 1, 4, 4],
            (0..16).map(|v| v as Elem / 15.0).collect(),
        )
        .unwrap();
        let same = bicubic_resize(&t, 4, 4).unwrap();
        for (a, b) in t.data().iter().zip(same.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let c = Tensor::full(&[1, 3, 5, 7], 0.42);
        for &v in bicubic_resize(&c, 11, 3).unwrap().data().iter() {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn bicubic_phase_half_weights() {
        let w = bicubic_phase_weights(0.5);
        let expected = [-0.0625, 0.5625, 0.5625, -0.0625];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{w:?}");
        }
    }

    #[test]
    fn bicubic_channel_independence() {
        let mut data = vec![0.0; 3 * 16];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 37) % 101) as Elem / 101.0;
        }
        let t = Tensor::new(&[1, 3, 4, 4], data.clone()).unwrap();
        let out = bicubic_resize(&t, 8, 8).unwrap().data();
        // Permute channels, resize, un-permute: identical planes.
        let mut perm = vec![0.0; 3 * 16];
        perm[..16].copy_from_slice(&data[32..48]);
        perm[16..32].copy_from_slice(&data[..16]);
        perm[32..48].copy_from_slice(&data[16..32]);
        let pout = bicubic_resize(&Tensor::new(&[1, 3, 4, 4], perm).unwrap(), 8, 8)
            .unwrap()
            .data();
        assert_eq!(&out[..64], &pout[64..128]);
        assert_eq!(&out[64..128], &pout[128..]);
        assert_eq!(&out[128..], &pout[..64]);
    }

    #[test]
    fn bicubic_gradient_is_transpose() {
        let err = crate::tensorgrad::grad_check(
            |x| Ok(bicubic_resize(x, 6, 6)?.mul(&Tensor::full(&[1, 1, 6, 6], 0.5))?.sum()),
            &Tensor::new(&[1, 1, 4, 4], (0..16).map(|v| v as Elem / 16.0).collect()).unwrap(),
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-3, "bicubic transpose error {err}");
    }

    #[test]
    fn teager_zero_on_constants() {
        let t = Tensor::full(&[1, 1, 5, 5], 0.7);
        assert!(teager_filter(&t).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn teager_peak_is_3v_squared() {
        let v: Elem = 0.6;
        let mut data = vec![0.0; 25];
        data[12] = v;
        let t = Tensor::new(&[1, 1, 5, 5], data).unwrap();
        let out = teager_filter(&t).unwrap().data();
        assert!((out[12] - 3.0 * v * v).abs() < 1e-6);
    }

    #[test]
    fn teager_step_edge_response() {
        // Columns 0..2 are 0, columns 3..4 are 1.
        let mut data = vec![0.0; 25];
        for y in 0..5 {
            for x in 3..5 {
                data[y * 5 + x] = 1.0;
            }
        }
        let t = Tensor::new(&[1, 1, 5, 5], data).unwrap();
        let out = teager_filter(&t).unwrap().data();
        for y in 1..4 {
            // x(i,j-1)*x(i,j+1) = 0 at the first bright column while 3x^2 = 3.
            assert!(out[y * 5 + 3] > 0.0, "edge column should respond");
            assert_eq!(out[y * 5 + 1], 0.0, "flat region must stay zero");
        }
    }

    #[test]
    fn teager_transpose_equivariance() {
        let data: Vec<Elem> = (0..25).map(|i| ((i * 31) % 17) as Elem / 17.0).collect();
        let t = Tensor::new(&[1, 1, 5, 5], data.clone()).unwrap();
        let out = teager_filter(&t).unwrap().data();
        let mut tdata = vec![0.0; 25];
        for y in 0..5 {
            for x in 0..5 {
                tdata[x * 5 + y] = data[y * 5 + x];
            }
        }
        let tout = teager_filter(&Tensor::new(&[1, 1, 5, 5], tdata).unwrap())
            .unwrap()
            .data();
        for y in 0..5 {
            for x in 0..5 {
                assert!((out[y * 5 + x] - tout[x * 5 + y]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn teager_rejects_multichannel() {
        let t = Tensor::zeros(&[1, 3, 5, 5]);
        assert!(teager_filter(&t).is_err());
    }
}
