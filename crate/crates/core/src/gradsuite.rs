//! Finite-difference verification suite over representative graphs.
//!
//! Shared by the CLI `grad-check` subcommand and the acceptance tests. All
//! probe points are kept away from kinks (leaky_relu at 0, |x - y| at 0) so
//! central differences stay on one branch, and scalar losses use `sum` so
//! per-coordinate gradients are large relative to float roundoff.

use crate::error::Result;
use crate::imaging;
use crate::tensorgrad::{grad_check, Elem, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probe step and pass tolerance, precision-dependent.
pub fn tolerance() -> Elem {
    if cfg!(feature = "wide") {
        1e-5
    } else {
        1e-2
    }
}

/// Run every check; returns (name, max relative error) pairs.
pub fn run() -> Result<Vec<(&'static str, Elem)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut rand_t = |shape: &[usize], lo: Elem, hi: Elem| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, data).expect("shape")
    };
    let eps = tolerance();
    let mut out = Vec::new();

    let x = rand_t(&[1, 2, 5, 5], -1.0, 1.0);
    let w = rand_t(&[3, 2, 3, 3], -0.5, 0.5);
    let b = rand_t(&[3], -0.1, 0.1);
    out.push((
        "conv2d",
        grad_check(|t| Ok(t.conv2d(&w, &b, 1, 1)?.sum()), &x, eps)?,
    ));
    // Magnitudes bounded away from the leaky_relu kink at zero.
    let chain_data: Vec<Elem> = rand_t(&[1, 2, 5, 5], 0.2, 1.0)
        .data()
        .iter()
        .enumerate()
        .map(|(i, &m)| if i % 2 == 0 { m } else { -m })
        .collect();
    let xc = Tensor::new(&[1, 2, 5, 5], chain_data)?;
    out.push((
        "pointwise chain",
        grad_check(
            |t| Ok(t.leaky_relu(0.2).sigmoid().softplus().sum()),
            &xc,
            eps,
        )?,
    ));
    out.push((
        "upsample + pool",
        grad_check(|t| Ok(t.upsample_nearest(2)?.avg_pool2()?.sum()), &x, eps)?,
    ));
    // Offset the target so |x - y| never crosses its kink under the probe.
    let y_data: Vec<Elem> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if i % 2 == 0 { v + 0.5 } else { v - 0.5 })
        .collect();
    let y = Tensor::new(&[1, 2, 5, 5], y_data)?;
    out.push(("l1 distance", grad_check(|t| t.l1_distance(&y), &x, eps)?));
    let img = rand_t(&[1, 1, 6, 6], 0.1, 0.9);
    out.push((
        "bicubic resize",
        grad_check(|t| Ok(imaging::bicubic_resize(t, 9, 9)?.sum()), &img, eps)?,
    ));
    out.push((
        "teager filter",
        grad_check(|t| Ok(imaging::teager_filter(t)?.sum()), &img, eps)?,
    ));
    let logits = rand_t(&[3, 8], -1.0, 1.0);
    out.push((
        "softmax cross entropy",
        grad_check(|t| t.softmax_cross_entropy(&[1, 0, 7]), &logits, eps)?,
    ));
    // Composite generator-style graph ending in a loss: conv, smooth
    // nonlinearity, bicubic upsample, conv, summed residual to a target.
    let glr = rand_t(&[1, 1, 6, 6], 0.1, 0.9);
    let gw1 = rand_t(&[4, 1, 3, 3], -0.8, 0.8);
    let gb1 = rand_t(&[4], -0.1, 0.1);
    let gw2 = rand_t(&[1, 4, 3, 3], -0.8, 0.8);
    let gb2 = rand_t(&[1], -0.1, 0.1);
    // Zero-centered target keeps the loss magnitude small; a 4x probe step
    // lifts the FD signal above f32 accumulation noise in the deep graph.
    let target = rand_t(&[1, 1, 12, 12], -0.5, 0.5);
    out.push((
        "generator graph + loss",
        grad_check(
            |t| {
                let h = t.conv2d(&gw1, &gb1, 1, 1)?.sigmoid();
                let up = imaging::bicubic_resize(&h, 12, 12)?;
                let sr = up.conv2d(&gw2, &gb2, 1, 1)?;
                Ok(target.sub(&sr)?.sum())
            },
            &glr,
            eps * 4.0,
        )?,
    ));
    Ok(out)
}
