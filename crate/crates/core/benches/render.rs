//! Sequential vs parallel execution of the render and its reverse pass.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshstyle::bvh::Bvh;
use meshstyle::camera::{Camera, Intrinsics};
use meshstyle::exec::Execution;
use meshstyle::fields::{AppearanceFields, FieldsArchitecture};
use meshstyle::math::Vec3;
use meshstyle::mesh::uv_sphere;
use meshstyle::render::{render_view, render_vjp, Background, ShadingConfig};

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)]
}

fn bench_render(c: &mut Criterion) {
    let mesh = uv_sphere(Vec3::ZERO, 0.5, 16, 24);
    let bvh = Bvh::build(&mesh);
    let fields = AppearanceFields::<f32>::initialized(FieldsArchitecture::default(), 0);
    let camera = Camera::orbit(1.5, 20.0, 30.0, Intrinsics::square(32)).unwrap();
    let mut group = c.benchmark_group("render_32px");
    group.sample_size(10);
    for (name, execution) in modes() {
        let cfg = ShadingConfig { execution, background: Background::WHITE, ..ShadingConfig::default() };
        group.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| render_view(&mesh, &bvh, &fields, &camera, &cfg, [1.0; 3]).0)
        });
        let (view, tape) = render_view(&mesh, &bvh, &fields, &camera, &cfg, [1.0; 3]);
        let cot = vec![0.01f32; view.image.len()];
        group.bench_function(BenchmarkId::new("vjp", name), |b| b.iter(|| render_vjp(&tape, &cot).unwrap()));
    }
    group.finish();
}

fn bench_ray_casting(c: &mut Criterion) {
    let mesh = uv_sphere(Vec3::ZERO, 0.5, 32, 48);
    let bvh = Bvh::build(&mesh);
    let mut group = c.benchmark_group("ray_cast_128px");
    for (name, execution) in modes() {
        let camera = Camera::orbit(1.5, 10.0, 0.0, Intrinsics::square(128)).unwrap();
        group.bench_function(name, |b| {
            b.iter(|| {
                execution.map_ranges(128, 8, |rows| {
                    let mut hits = 0usize;
                    for y in rows {
                        for x in 0..128 {
                            hits += bvh.intersect(&mesh, &camera.generate_ray(x, y).unwrap()).is_some() as usize;
                        }
                    }
                    hits
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_render, bench_ray_casting);
criterion_main!(benches);
