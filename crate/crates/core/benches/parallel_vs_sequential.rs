use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use csmf::dynamics::{self, IntegrateOptions, ParticleEnsemble};
use csmf::kernels::{InteractionKernel, RateDescriptor};
use csmf::meanfield::{self, InitialDensitySpec, MarginalRequest};
use csmf::transport::{wp_sliced_with, DiscreteMeasure};
use csmf::Exec;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn cloud(n: usize, d: usize) -> ParticleEnsemble {
    let x = (0..n * d).map(|i| (i as f64 * 0.618).fract() * 4.0).collect();
    let v = (0..n * d).map(|i| (i as f64 * 0.377).sin()).collect();
    ParticleEnsemble::new(d, x, v).unwrap()
}

fn integrate(c: &mut Criterion) {
    let kernel = InteractionKernel::cucker_smale(RateDescriptor::InversePower { k: 1.0, beta: 0.25 }, 2).unwrap();
    let mut g = c.benchmark_group("integrate");
    g.sample_size(10);
    for n in [256, 2048] {
        let init = cloud(n, 2);
        for (name, exec) in EXECS {
            g.bench_with_input(BenchmarkId::new(name, n), &init, |b, init| {
                b.iter(|| {
                    dynamics::integrate_with(
                        black_box(init),
                        &kernel,
                        0.05,
                        0.01,
                        IntegrateOptions { frame_stride: 5, exec },
                    )
                    .unwrap()
                })
            });
        }
    }
    g.finish();
}

fn marginals(c: &mut Criterion) {
    let kernel = InteractionKernel::cucker_smale(RateDescriptor::InversePower { k: 1.0, beta: 0.25 }, 1).unwrap();
    let spec = InitialDensitySpec::uniform_cube(1, (0.0, 1.0), (-1.0, 1.0));
    let mut g = c.benchmark_group("marginal_samples");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(name, |b| {
            b.iter(|| {
                let req = MarginalRequest { big_n: 32, n: 1, dt: 0.01, exec };
                meanfield::marginal_samples_at(&spec, &kernel, req, &[0.5], 200, 11).unwrap()
            })
        });
    }
    g.finish();
}

fn sliced(c: &mut Criterion) {
    let a = cloud(5000, 2);
    let b = cloud(5000, 2);
    let mu = DiscreteMeasure::uniform(2, a.positions().to_vec()).unwrap();
    let nu = DiscreteMeasure::uniform(2, b.velocities().to_vec()).unwrap();
    let mut g = c.benchmark_group("wp_sliced");
    for (name, exec) in EXECS {
        g.bench_function(name, |bch| bch.iter(|| wp_sliced_with(&mu, &nu, 2.0, 64, 3, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, integrate, marginals, sliced);
criterion_main!(benches);
