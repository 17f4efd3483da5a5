//! Structured ops: convolution (im2col + gemm), linear, pooling, upsampling.

use super::{gemm, Elem, Tensor};
use crate::error::{Error, Result};

struct ConvDims {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

fn im2col(input: &[Elem], d: &ConvDims, col: &mut [Elem]) {
    let k = d.cin * d.kh * d.kw;
    let p = d.out_h * d.out_w;
    debug_assert_eq!(col.len(), k * p);
    for c in 0..d.cin {
        let plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                let mut idx = 0;
                for oy in 0..d.out_h {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        for _ in 0..d.out_w {
                            dst[idx] = 0.0;
                            idx += 1;
                        }
                        continue;
                    }
                    let base = iy as usize * d.w;
                    for ox in 0..d.out_w {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        dst[idx] = if ix < 0 || ix >= d.w as isize {
                            0.0
                        } else {
                            plane[base + ix as usize]
                        };
                        idx += 1;
                    }
                }
            }
        }
    }
}

fn col2im(col: &[Elem], d: &ConvDims, input_grad: &mut [Elem]) {
    let p = d.out_h * d.out_w;
    for c in 0..d.cin {
        let plane_off = c * d.h * d.w;
        for ky in 0..d.kh {
            for kx in 0..d.kw {
                let row = (c * d.kh + ky) * d.kw + kx;
                let src = &col[row * p..(row + 1) * p];
                let mut idx = 0;
                for oy in 0..d.out_h {
                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                    if iy < 0 || iy >= d.h as isize {
                        idx += d.out_w;
                        continue;
                    }
                    let base = plane_off + iy as usize * d.w;
                    for ox in 0..d.out_w {
                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                        if ix >= 0 && ix < d.w as isize {
                            input_grad[base + ix as usize] += src[idx];
                        }
                        idx += 1;
                    }
                }
            }
        }
    }
}

impl Tensor {
    /// 2-D cross-correlation: input [N, Cin, H, W], weight [Cout, Cin, kh, kw],
    /// bias [Cout]. Differentiable w.r.t. input, weight and bias.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let is = self.shape();
        let ws = weight.shape();
        if is.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "conv2d input must be rank 4, got {:?}",
                is
            )));
        }
        if ws.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "conv2d weight must be rank 4, got {:?}",
                ws
            )));
        }
        let (n, cin, h, w) = (is[0], is[1], is[2], is[3]);
        let (cout, wcin, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                axis: 1,
                expected: cin,
                got: wcin,
                context: "conv2d weight input channels",
            });
        }
        if bias.shape() != vec![cout] {
            return Err(Error::ShapeMismatch {
                axis: 0,
                expected: cout,
                got: bias.len(),
                context: "conv2d bias",
            });
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let span_h = h + 2 * padding;
        let span_w = w + 2 * padding;
        if span_h < kh || span_w < kw {
            return Err(Error::InvalidArgument(format!(
                "conv2d geometry: input {h}x{w} with padding {padding} smaller than kernel {kh}x{kw}"
            )));
        }
        // Floor division: a trailing partial window is dropped.
        let out_h = (span_h - kh) / stride + 1;
        let out_w = (span_w - kw) / stride + 1;
        let dims = ConvDims {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad: padding,
            out_h,
            out_w,
        };

        let input = self.data();
        let wdata = weight.data();
        let bdata = bias.data();
        let k = cin * kh * kw;
        let p = out_h * out_w;
        let mut out = vec![0.0; n * cout * p];
        let mut col = vec![0.0; k * p];
        for img in 0..n {
            im2col(&input[img * cin * h * w..(img + 1) * cin * h * w], &dims, &mut col);
            gemm(
                cout,
                k,
                p,
                1.0,
                &wdata,
                k as isize,
                1,
                &col,
                p as isize,
                1,
                0.0,
                &mut out[img * cout * p..(img + 1) * cout * p],
                p as isize,
                1,
            );
            for c in 0..cout {
                let b = bdata[c];
                let off = img * cout * p + c * p;
                for v in &mut out[off..off + p] {
                    *v += b;
                }
            }
        }

        let input_needs = self.tracks_grad();
        Ok(Tensor::from_op(
            vec![n, cout, out_h, out_w],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |up| {
                let mut dw = vec![0.0; cout * k];
                let mut db = vec![0.0; cout];
                let mut dx = if input_needs {
                    vec![0.0; n * cin * h * w]
                } else {
                    Vec::new()
                };
                let mut col = vec![0.0; k * p];
                let mut dcol = vec![0.0; k * p];
                for img in 0..n {
                    let dout = &up[img * cout * p..(img + 1) * cout * p];
                    im2col(
                        &input[img * cin * h * w..(img + 1) * cin * h * w],
                        &dims,
                        &mut col,
                    );
                    // dW += dOut x col^T
                    gemm(
                        cout,
                        p,
                        k,
                        1.0,
                        dout,
                        p as isize,
                        1,
                        &col,
                        1,
                        p as isize,
                        1.0,
                        &mut dw,
                        k as isize,
                        1,
                    );
                    for c in 0..cout {
                        db[c] += dout[c * p..(c + 1) * p].iter().sum::<Elem>();
                    }
                    if input_needs {
                        // dCol = W^T x dOut
                        gemm(
                            k,
                            cout,
                            p,
                            1.0,
                            &wdata,
                            1,
                            k as isize,
                            dout,
                            p as isize,
                            1,
                            0.0,
                            &mut dcol,
                            p as isize,
                            1,
                        );
                        col2im(
                            &dcol,
                            &dims,
                            &mut dx[img * cin * h * w..(img + 1) * cin * h * w],
                        );
                    }
                }
                vec![
                    if input_needs { Some(dx) } else { None },
                    Some(dw),
                    Some(db),
                ]
            }),
        ))
    }

    /// Fully connected layer: input [N, D], weight [K, D], bias [K] -> [N, K].
    pub fn linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let is = self.shape();
        let ws = weight.shape();
        if is.len() != 2 || ws.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "linear expects [N, D] x [K, D], got {:?} x {:?}",
                is, ws
            )));
        }
        let (n, d) = (is[0], is[1]);
        let (k, wd) = (ws[0], ws[1]);
        if wd != d {
            return Err(Error::ShapeMismatch {
                axis: 1,
                expected: d,
                got: wd,
                context: "linear weight",
            });
        }
        if bias.len() != k {
            return Err(Error::ShapeMismatch {
                axis: 0,
                expected: k,
                got: bias.len(),
                context: "linear bias",
            });
        }
        let x = self.data();
        let wdata = weight.data();
        let bdata = bias.data();
        let mut out = vec![0.0; n * k];
        gemm(
            n, d, k, 1.0, &x, d as isize, 1, &wdata, 1, d as isize, 0.0, &mut out, k as isize, 1,
        );
        for i in 0..n {
            for j in 0..k {
                out[i * k + j] += bdata[j];
            }
        }
        let input_needs = self.tracks_grad();
        Ok(Tensor::from_op(
            vec![n, k],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |up| {
                let mut dw = vec![0.0; k * d];
                gemm(
                    k, n, d, 1.0, up, 1, k as isize, &x, d as isize, 1, 0.0, &mut dw, d as isize,
                    1,
                );
                let mut db = vec![0.0; k];
                for i in 0..n {
                    for j in 0..k {
                        db[j] += up[i * k + j];
                    }
                }
                let dx = if input_needs {
                    let mut dx = vec![0.0; n * d];
                    gemm(
                        n, k, d, 1.0, up, k as isize, 1, &wdata, d as isize, 1, 0.0, &mut dx,
                        d as isize, 1,
                    );
                    Some(dx)
                } else {
                    None
                };
                vec![dx, Some(dw), Some(db)]
            }),
        ))
    }

    /// Nearest-neighbor upsampling by an integer factor; backward sums the
    /// gradient over each replicated block.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        if factor < 1 {
            return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "upsample_nearest requires rank-4 tensor, got {:?}",
                s
            )));
        }
        if factor == 1 {
            let data = self.data();
            return Ok(Tensor::from_op(
                s,
                data,
                vec![self.clone()],
                Box::new(|up| vec![Some(up.to_vec())]),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h * factor, w * factor);
        let data = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let iy = oy / factor;
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[iy * w + ox / factor];
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |up| {
                let mut g = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &up[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut g[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..oh {
                        let iy = oy / factor;
                        for ox in 0..ow {
                            dst[iy * w + ox / factor] += src[oy * ow + ox];
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// 2x2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&self) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "avg_pool2 requires rank-4 tensor, got {:?}",
                s
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "avg_pool2 requires even spatial dims, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let data = self.data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = 2 * oy * w + 2 * ox;
                    dst[oy * ow + ox] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |up| {
                let mut g = vec![0.0; n * c * h * w];
                for plane in 0..n * c {
                    let src = &up[plane * oh * ow..(plane + 1) * oh * ow];
                    let dst = &mut g[plane * h * w..(plane + 1) * h * w];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let u = 0.25 * src[oy * ow + ox];
                            let i = 2 * oy * w + 2 * ox;
                            dst[i] += u;
                            dst[i + 1] += u;
                            dst[i + w] += u;
                            dst[i + w + 1] += u;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}
