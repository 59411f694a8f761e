use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fiberlin_core::operators::OperatorContext;
use fiberlin_core::{GridFunction, GridSpec, QuadraticFamily, SkewProduct, ToralAutomorphism};

fn system() -> SkewProduct {
    SkewProduct::new(ToralAutomorphism::cat_map(), QuadraticFamily::default())
}

fn context(n_b: usize, depth: usize) -> OperatorContext {
    let spec = GridSpec::new(2, n_b, 33, 0.05).unwrap();
    OperatorContext::new(&system().linearization(), spec, depth).unwrap()
}

fn homological(c: &mut Criterion) {
    let mut g = c.benchmark_group("homological_solve");
    g.sample_size(10);
    for n_b in [16, 32, 64] {
        let ctx = context(n_b, 56);
        let q = GridFunction::from_fn(*ctx.spec(), |b, x| (1.0 - x) * (1.0 + b[1]));
        g.bench_with_input(BenchmarkId::from_parameter(n_b), &q, |bch, q| {
            bch.iter(|| ctx.homological_solve_grid(black_box(q)).unwrap())
        });
    }
    g.finish();
}

fn lphi(c: &mut Criterion) {
    let sys = system();
    let mut g = c.benchmark_group("apply_lphi");
    g.sample_size(10);
    for n_b in [16, 32] {
        let ctx = context(n_b, 56);
        let h = GridFunction::from_fn(*ctx.spec(), |_, x| -0.6 + 0.1 * x);
        g.bench_with_input(BenchmarkId::from_parameter(n_b), &h, |bch, h| {
            bch.iter(|| ctx.apply_lphi(sys.fiber.as_ref(), black_box(h)).unwrap())
        });
    }
    g.finish();
}

fn interpolation(c: &mut Criterion) {
    let spec = GridSpec::new(2, 64, 33, 0.05).unwrap();
    let h = GridFunction::from_fn(spec, |b, x| (b[0] * 6.0).sin() + x);
    let pts: Vec<([f64; 2], f64)> = (0..1024)
        .map(|i| {
            let t = i as f64 / 1024.0;
            ([t, (t * 7.3).fract()], 0.05 * (t * 3.1).fract())
        })
        .collect();
    c.bench_function("eval_clamped_1024", |bch| {
        bch.iter(|| {
            pts.iter()
                .map(|(b, x)| h.eval_clamped(black_box(b), *x))
                .sum::<f64>()
        })
    });
}

criterion_group!(benches, homological, lphi, interpolation);
criterion_main!(benches);
