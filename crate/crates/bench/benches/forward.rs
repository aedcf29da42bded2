use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use pvi_bench::{conv_pair, fixture};
use pvi_core::{BackboneKind, Model, ModelConfig};

fn conv_overhead(c: &mut Criterion) {
    let data = fixture(8);
    let (si, si_pvi) = conv_pair(0);
    let mut group = c.benchmark_group("forward_per_sequence");
    for (name, model) in [("SI-Conv", &si), ("SI-PVI-Conv", &si_pvi)] {
        group.bench_with_input(BenchmarkId::from_parameter(name), model, |b, m| {
            let mut k = 0;
            b.iter(|| {
                k = (k + 1) % data.len();
                black_box(m.predict(&data[k]).unwrap())
            })
        });
    }
    group.finish();
}

fn lstm_overhead(c: &mut Criterion) {
    let data = fixture(8);
    let mut group = c.benchmark_group("lstm_forward_per_sequence");
    for pvi in [false, true] {
        let model = Model::new(&ModelConfig::preset(BackboneKind::Lstm, true, pvi), 0).unwrap();
        group.bench_function(model.config().label(), |b| {
            let mut k = 0;
            b.iter(|| {
                k = (k + 1) % data.len();
                black_box(model.predict(&data[k]).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv_overhead, lstm_overhead);
criterion_main!(benches);
