//! Minimal reverse-mode autodiff tensor core.
//!
//! Define-by-run: every op that touches a gradient-requiring tensor records a
//! backward rule on its output. `backward` walks the recorded graph once in
//! reverse topological order and accumulates gradients into the leaf
//! parameters. Gradients accumulate across calls until `zero_grad`.
//!
//! No broadcasting beyond what the named ops provide (bias over channels,
//! `broadcast_scalar`); binary ops require exactly equal shapes.

mod check;
mod conv;

pub use check::grad_check;

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

/// Scalar element type. f32 for training; the `wide` feature switches the
/// whole core to f64 for tight gradient-check tolerances.
#[cfg(feature = "wide")]
pub type Elem = f64;
#[cfg(not(feature = "wide"))]
pub type Elem = f32;

pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: Elem,
    a: &[Elem],
    rsa: isize,
    csa: isize,
    b: &[Elem],
    rsb: isize,
    csb: isize,
    beta: Elem,
    c: &mut [Elem],
    rsc: isize,
    csc: isize,
) {
    #[cfg(feature = "wide")]
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc,
            csc,
        )
    }
    #[cfg(not(feature = "wide"))]
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc,
            csc,
        )
    }
}

type BackwardFn = Box<dyn Fn(&[Elem]) -> Vec<Option<Vec<Elem>>>>;

struct Node {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<Elem>,
    /// Accumulated gradient; only leaves with `requires_grad` hold one.
    grad: Option<Vec<Elem>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// A shared, shape-carrying float buffer with an optional autodiff record.
/// Cloning is shallow.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            inner.shape, inner.requires_grad
        )
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<Elem>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} requires {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "zero-sized axis in shape {:?}",
                shape
            )));
        }
        Ok(Tensor::leaf(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![0.0; n], false)
    }

    pub fn full(shape: &[usize], value: Elem) -> Tensor {
        let n = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![value; n], false)
    }

    pub fn scalar(value: Elem) -> Tensor {
        Tensor::leaf(vec![1], vec![value], false)
    }

    /// A trainable leaf: gradients accumulate here.
    pub fn param(shape: &[usize], data: Vec<Elem>) -> Result<Tensor> {
        let t = Tensor::new(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    fn leaf(shape: Vec<usize>, data: Vec<Elem>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                node: None,
            })),
        }
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<Elem>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let tracked = parents.iter().any(|p| p.tracks_grad());
        if !tracked {
            return Tensor::leaf(shape, data, false);
        }
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad: false,
                node: Some(Node { parents, backward }),
            })),
        }
    }

    /// True if gradients must flow to or through this tensor.
    pub(crate) fn tracks_grad(&self) -> bool {
        let inner = self.inner.borrow();
        inner.requires_grad || inner.node.is_some()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Vec<Elem> {
        self.inner.borrow().data.clone()
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[Elem]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Overwrite the raw buffer (optimizer updates, grad_check probes).
    pub fn set_data(&self, data: &[Elem]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    pub fn item(&self) -> Elem {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() on non-scalar tensor");
        inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn grad(&self) -> Option<Vec<Elem>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Same data, cut loose from the recorded graph.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::leaf(inner.shape.clone(), inner.data.clone(), false)
    }

    /// View with a different shape over the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::InvalidArgument(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(),
                shape
            )));
        }
        let data = self.data();
        let out_shape = shape.to_vec();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |up| vec![Some(up.to_vec())]),
        ))
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode sweep from a scalar loss. Leaf parameters accumulate
    /// gradients across calls until `zero_grad`.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        // Iterative post-order DFS for topological order.
        let mut topo: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                topo.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            let inner = t.inner.borrow();
            if let Some(node) = &inner.node {
                for p in &node.parents {
                    if p.tracks_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }

        // Transient gradients for interior nodes; leaves write into .grad.
        let mut flowing: HashMap<usize, Vec<Elem>> = HashMap::new();
        flowing.insert(self.key(), vec![1.0]);

        for t in topo.iter().rev() {
            let upstream = match flowing.remove(&t.key()) {
                Some(g) => g,
                None => continue,
            };
            {
                let mut inner = t.inner.borrow_mut();
                if inner.requires_grad && inner.node.is_none() {
                    let grad = inner
                        .grad
                        .get_or_insert_with(|| vec![0.0; upstream.len()]);
                    for (g, u) in grad.iter_mut().zip(&upstream) {
                        *g += *u;
                    }
                    continue;
                }
            }
            let inner = t.inner.borrow();
            let node = match &inner.node {
                Some(n) => n,
                None => continue,
            };
            let parent_grads = (node.backward)(&upstream);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.tracks_grad() {
                    continue;
                }
                let is_leaf_param = {
                    let pi = p.inner.borrow();
                    pi.requires_grad && pi.node.is_none()
                };
                if is_leaf_param {
                    let mut pi = p.inner.borrow_mut();
                    let grad = pi.grad.get_or_insert_with(|| vec![0.0; pg.len()]);
                    for (g, u) in grad.iter_mut().zip(&pg) {
                        *g += *u;
                    }
                } else {
                    let entry = flowing
                        .entry(p.key())
                        .or_insert_with(|| vec![0.0; pg.len()]);
                    for (g, u) in entry.iter_mut().zip(&pg) {
                        *g += *u;
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor, context: &'static str) -> Result<()> {
    let sa = a.shape();
    let sb = b.shape();
    if sa.len() != sb.len() {
        return Err(Error::InvalidArgument(format!(
            "{context}: rank mismatch {:?} vs {:?}",
            sa, sb
        )));
    }
    for (axis, (&x, &y)) in sa.iter().zip(sb.iter()).enumerate() {
        if x != y {
            return Err(Error::ShapeMismatch {
                axis,
                expected: x,
                got: y,
                context,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pointwise ops
// ---------------------------------------------------------------------------

impl Tensor {
    pub fn leaky_relu(&self, slope: Elem) -> Tensor {
        let x = self.data();
        let y: Vec<Elem> = x.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        let shape = self.shape();
        Tensor::from_op(
            shape,
            y,
            vec![self.clone()],
            Box::new(move |up| {
                let g = up
                    .iter()
                    .zip(&x)
                    .map(|(&u, &v)| if v >= 0.0 { u } else { slope * u })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let y: Vec<Elem> = self
            .data()
            .iter()
            .map(|&v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let saved = y.clone();
        Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone()],
            Box::new(move |up| {
                let g = up
                    .iter()
                    .zip(&saved)
                    .map(|(&u, &s)| u * s * (1.0 - s))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&self) -> Tensor {
        let x = self.data();
        let y: Vec<Elem> = x
            .iter()
            .map(|&v| if v > 0.0 { v + (-v).exp().ln_1p() } else { v.exp().ln_1p() })
            .collect();
        Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone()],
            Box::new(move |up| {
                let g = up
                    .iter()
                    .zip(&x)
                    .map(|(&u, &v)| u / (1.0 + (-v).exp()))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn recip(&self) -> Tensor {
        let x = self.data();
        let y: Vec<Elem> = x.iter().map(|&v| 1.0 / v).collect();
        Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone()],
            Box::new(move |up| {
                let g = up
                    .iter()
                    .zip(&x)
                    .map(|(&u, &v)| -u / (v * v))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn scale(&self, factor: Elem) -> Tensor {
        let y: Vec<Elem> = self.data().iter().map(|&v| factor * v).collect();
        Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone()],
            Box::new(move |up| vec![Some(up.iter().map(|&u| factor * u).collect())]),
        )
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "add")?;
        let y: Vec<Elem> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, b)| a + b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone(), other.clone()],
            Box::new(|up| vec![Some(up.to_vec()), Some(up.to_vec())]),
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "sub")?;
        let y: Vec<Elem> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, b)| a - b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone(), other.clone()],
            Box::new(|up| {
                vec![
                    Some(up.to_vec()),
                    Some(up.iter().map(|&u| -u).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "mul")?;
        let a = self.data();
        let b = other.data();
        let y: Vec<Elem> = a.iter().zip(&b).map(|(&x, &v)| x * v).collect();
        Ok(Tensor::from_op(
            self.shape(),
            y,
            vec![self.clone(), other.clone()],
            Box::new(move |up| {
                let ga = up.iter().zip(&b).map(|(&u, &v)| u * v).collect();
                let gb = up.iter().zip(&a).map(|(&u, &v)| u * v).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Replicate a scalar to an arbitrary shape; backward sums.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Tensor> {
        if self.len() != 1 {
            return Err(Error::InvalidArgument(
                "broadcast_scalar requires a scalar input".into(),
            ));
        }
        let n: usize = shape.iter().product();
        let v = self.item();
        Ok(Tensor::from_op(
            shape.to_vec(),
            vec![v; n],
            vec![self.clone()],
            Box::new(|up| vec![Some(vec![up.iter().sum()])]),
        ))
    }

    /// Concatenate along the channel axis of [N, C, H, W] tensors.
    pub fn concat_channels(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = parts[0].shape();
        if first.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "concat_channels requires rank-4 tensors, got {:?}",
                first
            )));
        }
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::InvalidArgument(format!(
                    "concat_channels shape mismatch: {:?} vs {:?}",
                    first, s
                )));
            }
            channels.push(s[1]);
        }
        let c_total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = vec![0.0; n * c_total * plane];
        let datas: Vec<Vec<Elem>> = parts.iter().map(|p| p.data()).collect();
        for img in 0..n {
            let mut c_off = 0;
            for (d, &c) in datas.iter().zip(&channels) {
                let src = &d[img * c * plane..(img + 1) * c * plane];
                let dst_start = img * c_total * plane + c_off * plane;
                out[dst_start..dst_start + c * plane].copy_from_slice(src);
                c_off += c;
            }
        }
        let ch = channels.clone();
        Ok(Tensor::from_op(
            vec![n, c_total, h, w],
            out,
            parts.to_vec(),
            Box::new(move |up| {
                let mut grads: Vec<Option<Vec<Elem>>> = Vec::with_capacity(ch.len());
                for (i, &c) in ch.iter().enumerate() {
                    let mut g = vec![0.0; n * c * plane];
                    let c_off: usize = ch[..i].iter().sum();
                    for img in 0..n {
                        let src_start = img * c_total * plane + c_off * plane;
                        g[img * c * plane..(img + 1) * c * plane]
                            .copy_from_slice(&up[src_start..src_start + c * plane]);
                    }
                    grads.push(Some(g));
                }
                grads
            }),
        ))
    }

    /// Concatenate along the batch axis; all parts must share [C, H, W].
    pub fn concat_batch(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let first = parts[0].shape();
        if first.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "concat_batch requires rank-4 tensors, got {:?}",
                first
            )));
        }
        let item = first[1] * first[2] * first[3];
        let mut counts = Vec::with_capacity(parts.len());
        let mut out = Vec::new();
        for p in parts {
            let s = p.shape();
            if s[1..] != first[1..] {
                return Err(Error::InvalidArgument(format!(
                    "concat_batch shape mismatch: {:?} vs {:?}",
                    first, s
                )));
            }
            counts.push(s[0]);
            out.extend_from_slice(&p.data());
        }
        let n_total: usize = counts.iter().sum();
        Ok(Tensor::from_op(
            vec![n_total, first[1], first[2], first[3]],
            out,
            parts.to_vec(),
            Box::new(move |up| {
                let mut grads = Vec::with_capacity(counts.len());
                let mut off = 0;
                for &n in &counts {
                    grads.push(Some(up[off * item..(off + n) * item].to_vec()));
                    off += n;
                }
                grads
            }),
        ))
    }

    /// Crop a single batch image: result is [1, C, crop_h, crop_w].
    pub fn crop_image(
        &self,
        image: usize,
        y0: usize,
        x0: usize,
        crop_h: usize,
        crop_w: usize,
    ) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "crop_image requires rank-4 tensor, got {:?}",
                s
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if image >= n {
            return Err(Error::InvalidArgument(format!(
                "image index {image} out of range for batch of {n}"
            )));
        }
        if crop_h == 0 || crop_w == 0 || y0 + crop_h > h || x0 + crop_w > w {
            return Err(Error::InvalidArgument(format!(
                "crop box y0={y0} x0={x0} {crop_h}x{crop_w} out of bounds for {h}x{w}"
            )));
        }
        let data = self.data();
        let mut out = vec![0.0; c * crop_h * crop_w];
        for ch in 0..c {
            let src_plane = (image * c + ch) * h * w;
            let dst_plane = ch * crop_h * crop_w;
            for row in 0..crop_h {
                let src = src_plane + (y0 + row) * w + x0;
                let dst = dst_plane + row * crop_w;
                out[dst..dst + crop_w].copy_from_slice(&data[src..src + crop_w]);
            }
        }
        Ok(Tensor::from_op(
            vec![1, c, crop_h, crop_w],
            out,
            vec![self.clone()],
            Box::new(move |up| {
                let mut g = vec![0.0; n * c * h * w];
                for ch in 0..c {
                    let dst_plane = (image * c + ch) * h * w;
                    let src_plane = ch * crop_h * crop_w;
                    for row in 0..crop_h {
                        let dst = dst_plane + (y0 + row) * w + x0;
                        let src = src_plane + row * crop_w;
                        g[dst..dst + crop_w].copy_from_slice(&up[src..src + crop_w]);
                    }
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Keep a contiguous channel range of a [N, C, H, W] tensor.
    pub fn crop_channels(&self, c0: usize, count: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "crop_channels requires rank-4 tensor, got {:?}",
                s
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if count == 0 || c0 + count > c {
            return Err(Error::InvalidArgument(format!(
                "channel range {c0}..{} out of bounds for {c} channels",
                c0 + count
            )));
        }
        let plane = h * w;
        let data = self.data();
        let mut out = vec![0.0; n * count * plane];
        for img in 0..n {
            let src = (img * c + c0) * plane;
            out[img * count * plane..(img + 1) * count * plane]
                .copy_from_slice(&data[src..src + count * plane]);
        }
        Ok(Tensor::from_op(
            vec![n, count, h, w],
            out,
            vec![self.clone()],
            Box::new(move |up| {
                let mut g = vec![0.0; n * c * plane];
                for img in 0..n {
                    let dst = (img * c + c0) * plane;
                    g[dst..dst + count * plane]
                        .copy_from_slice(&up[img * count * plane..(img + 1) * count * plane]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Differentiable crop of a [N, C, H, W] tensor: rows y0..y0+ch_h,
    /// cols x0..x0+ch_w, all channels. Backward scatters into the source box.
    pub fn crop(&self, y0: usize, x0: usize, crop_h: usize, crop_w: usize) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "crop requires rank-4 tensor, got {:?}",
                s
            )));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if crop_h == 0 || crop_w == 0 || y0 + crop_h > h || x0 + crop_w > w {
            return Err(Error::InvalidArgument(format!(
                "crop box y0={y0} x0={x0} {crop_h}x{crop_w} out of bounds for {h}x{w}"
            )));
        }
        let data = self.data();
        let mut out = vec![0.0; n * c * crop_h * crop_w];
        for img in 0..n {
            for ch in 0..c {
                let src_plane = (img * c + ch) * h * w;
                let dst_plane = (img * c + ch) * crop_h * crop_w;
                for row in 0..crop_h {
                    let src = src_plane + (y0 + row) * w + x0;
                    let dst = dst_plane + row * crop_w;
                    out[dst..dst + crop_w].copy_from_slice(&data[src..src + crop_w]);
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, crop_h, crop_w],
            out,
            vec![self.clone()],
            Box::new(move |up| {
                let mut g = vec![0.0; n * c * h * w];
                for img in 0..n {
                    for ch in 0..c {
                        let dst_plane = (img * c + ch) * h * w;
                        let src_plane = (img * c + ch) * crop_h * crop_w;
                        for row in 0..crop_h {
                            let dst = dst_plane + (y0 + row) * w + x0;
                            let src = src_plane + row * crop_w;
                            g[dst..dst + crop_w].copy_from_slice(&up[src..src + crop_w]);
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

impl Tensor {
    pub fn sum(&self) -> Tensor {
        let s: Elem = self.data().iter().sum();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |up| vec![Some(vec![up[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len();
        let s: Elem = self.data().iter().sum();
        let inv = 1.0 / n as Elem;
        Tensor::from_op(
            vec![1],
            vec![s * inv],
            vec![self.clone()],
            Box::new(move |up| vec![Some(vec![up[0] * inv; n])]),
        )
    }

    /// Mean absolute difference. Subgradient sign(a - b) / n, with 0 at ties.
    pub fn l1_distance(&self, other: &Tensor) -> Result<Tensor> {
        check_same_shape(self, other, "l1_distance")?;
        let a = self.data();
        let b = other.data();
        let n = a.len();
        let inv = 1.0 / n as Elem;
        let s: Elem = a.iter().zip(&b).map(|(&x, &y)| (x - y).abs()).sum();
        Ok(Tensor::from_op(
            vec![1],
            vec![s * inv],
            vec![self.clone(), other.clone()],
            Box::new(move |up| {
                let u = up[0] * inv;
                let ga: Vec<Elem> = a
                    .iter()
                    .zip(&b)
                    .map(|(&x, &y)| {
                        if x > y {
                            u
                        } else if x < y {
                            -u
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let gb = ga.iter().map(|&g| -g).collect();
                vec![Some(ga), Some(gb)]
            }),
        ))
    }

    /// Mean over the batch of -log softmax(logits)[label], max-stabilized.
    /// `logits` is [N, K].
    pub fn softmax_cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::InvalidArgument(format!(
                "softmax_cross_entropy requires [N, K] logits, got {:?}",
                s
            )));
        }
        let (n, k) = (s[0], s[1]);
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for batch of {}",
                labels.len(),
                n
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        let logits = self.data();
        let mut loss = 0.0;
        let mut softmax = vec![0.0; n * k];
        for i in 0..n {
            let row = &logits[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(Elem::NEG_INFINITY, Elem::max);
            let mut denom = 0.0;
            for j in 0..k {
                let e = (row[j] - max).exp();
                softmax[i * k + j] = e;
                denom += e;
            }
            for j in 0..k {
                softmax[i * k + j] /= denom;
            }
            loss -= (softmax[i * k + labels[i]]).ln();
        }
        loss /= n as Elem;
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            vec![1],
            vec![loss],
            vec![self.clone()],
            Box::new(move |up| {
                let u = up[0] / n as Elem;
                let mut g = softmax.clone();
                for (i, &l) in labels.iter().enumerate() {
                    g[i * k + l] -= 1.0;
                }
                for v in g.iter_mut() {
                    *v *= u;
                }
                vec![Some(g)]
            }),
        ))
    }
}
