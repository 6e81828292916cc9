use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cfedit_bench::{multi_edit, planted};
use cfedit_core::sequencing::EditUniverse;
use cfedit_core::similarity::score_pairs;
use cfedit_core::tensors::{bilinear_resize, GridMap};
use cfedit_core::{run_counterfactual, Method, SearchConfig};

fn methods(c: &mut Criterion) {
    for (name, bundles) in [("planted", planted(7, 7, 4, 8)), ("multi-edit", multi_edit(7, 7, 4, 8))] {
        let mut group = c.benchmark_group(format!("search/{name}"));
        group.sample_size(20);
        for method in Method::ALL.iter().copied() {
            let config = SearchConfig::default().with_method(method);
            group.bench_with_input(BenchmarkId::from_parameter(method), &config, |b, config| {
                b.iter(|| {
                    for bundle in &bundles {
                        black_box(run_counterfactual(bundle, config).unwrap());
                    }
                })
            });
        }
        group.finish();
    }
}

fn similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity/score_pairs");
    for side in [4usize, 7, 14] {
        let bundle = planted(side, side, 4, 1).remove(0);
        let universe = EditUniverse::exhaustive(side * side, 4).unwrap();
        let distractors = bundle.distractor_features();
        group.bench_with_input(BenchmarkId::from_parameter(side), &side, |b, _| {
            b.iter(|| score_pairs(&bundle.query.features, &distractors, &universe, 0.1).unwrap())
        });
    }
    group.finish();
}

fn resize(c: &mut Criterion) {
    let mask = GridMap::new(224, 224, (0..224 * 224).map(|i| (i % 3 == 0) as u8 as f32).collect()).unwrap();
    c.bench_function("tensors/bilinear_resize 224->7", |b| {
        b.iter(|| bilinear_resize(black_box(&mask), 7, 7).unwrap())
    });
}

criterion_group!(benches, methods, similarity, resize);
criterion_main!(benches);
