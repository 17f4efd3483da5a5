//! Shared fixtures for the kernel benchmarks.

use mdgan_core::tensorgrad::{Elem, Tensor};

/// Deterministic pseudo-random tensor in [-1, 1); no RNG dependency needed
/// for benchmark fixtures.
pub fn fixture(shape: &[usize], salt: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<Elem> = (0..n as u64)
        .map(|i| {
            let h = (i.wrapping_add(salt)).wrapping_mul(0x9e3779b97f4a7c15);
            let h = (h >> 33) ^ h;
            (h % 10_000) as Elem / 5_000.0 - 1.0
        })
        .collect();
    Tensor::new(shape, data).expect("fixture shape")
}
