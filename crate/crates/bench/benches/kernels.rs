use criterion::{criterion_group, criterion_main, Criterion};
use mdgan_bench::fixture;
use mdgan_core::imaging::{bicubic_resize, teager_filter};
use mdgan_core::model::spectral_normalize;
use mdgan_core::tensorgrad::Elem;

fn bench_conv2d(c: &mut Criterion) {
    let x = fixture(&[1, 32, 32, 32], 1);
    let w = fixture(&[32, 32, 3, 3], 2);
    let b = fixture(&[32], 3);
    c.bench_function("conv2d 32x32x32 3x3", |bench| {
        bench.iter(|| x.conv2d(&w, &b, 1, 1).unwrap().data())
    });
    c.bench_function("conv2d forward+backward", |bench| {
        bench.iter(|| {
            let xp = mdgan_core::tensorgrad::Tensor::param(&[1, 32, 32, 32], x.data()).unwrap();
            let loss = xp.conv2d(&w, &b, 1, 1).unwrap().sum();
            loss.backward().unwrap();
            xp.grad().unwrap()
        })
    });
}

fn bench_bicubic(c: &mut Criterion) {
    let img = fixture(&[1, 3, 32, 32], 4);
    c.bench_function("bicubic 32 -> 64", |bench| {
        bench.iter(|| bicubic_resize(&img, 64, 64).unwrap().data())
    });
}

fn bench_teager(c: &mut Criterion) {
    let img = fixture(&[1, 1, 64, 64], 5);
    c.bench_function("teager 64x64", |bench| {
        bench.iter(|| teager_filter(&img).unwrap().data())
    });
}

fn bench_spectral_norm(c: &mut Criterion) {
    let w = fixture(&[64, 64, 3, 3], 6);
    let u: Vec<Elem> = vec![0.125; 64];
    c.bench_function("spectral norm 64x576, 5 iters", |bench| {
        bench.iter(|| spectral_normalize(&w, &u, 5).unwrap().1)
    });
}

criterion_group!(
    kernels,
    bench_conv2d,
    bench_bicubic,
    bench_teager,
    bench_spectral_norm
);
criterion_main!(kernels);
