//! Sequential vs rayon execution for the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tracefem::assembly::FemSystem;
use tracefem::cutquad::CutTopology;
use tracefem::diagnostics::DualGram;
use tracefem::mesh::{ActiveMesh, BackgroundMesh, BoundingBox};
use tracefem::operators::Operators;
use tracefem::sparse::SolverKind;
use tracefem::{Execution, LevelSetSurface, Vec2};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn band(n: usize) -> (LevelSetSurface, ActiveMesh) {
    let surface = LevelSetSurface::circle(Vec2::new(0.0, 0.0), 1.0).unwrap();
    let bg = BackgroundMesh::build(BoundingBox::square(-1.5, 1.5), n).unwrap();
    let mesh = ActiveMesh::select(bg, &surface).unwrap();
    (surface, mesh)
}

fn bench_cut_topology(c: &mut Criterion) {
    let mut group = c.benchmark_group("cut_topology");
    for n in [96, 384] {
        let (surface, mesh) = band(n);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| black_box(CutTopology::build(&mesh, &surface, 16, exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assembly");
    for n in [96, 384] {
        let (surface, mesh) = band(n);
        let cut = CutTopology::build(&mesh, &surface, 16, Execution::Sequential).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| black_box(FemSystem::assemble(mesh.clone(), cut.clone(), exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_dual_gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("dual_gram");
    group.sample_size(10);
    let (surface, mesh) = band(96);
    let cut = CutTopology::build(&mesh, &surface, 16, Execution::Sequential).unwrap();
    let sys = FemSystem::assemble(mesh, cut, Execution::Sequential).unwrap();
    let ops = Operators::new(&sys, SolverKind::Direct).unwrap();
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| black_box(DualGram::new(&ops, exec).unwrap())));
    }
    group.finish();
}

criterion_group!(benches, bench_cut_topology, bench_assembly, bench_dual_gram);
criterion_main!(benches);
