use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tumorlens::adapt::{mmd, mmd_loss, KernelSpec};
use tumorlens::data::{generate_synthetic, SyntheticSpec, DRUG_FIXTURES};
use tumorlens::druggraph::{parse_smiles, GatEncoder, GatSpec, GraphBatch};
use tumorlens::numcore::{Matrix, ParamStore, Tape};
use tumorlens::pipeline::{train_stage1, TrainConfig};

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("matmul");
    for n in [32, 128, 256] {
        let (a, b) = (random(&mut rng, n, n), random(&mut rng, n, n));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| black_box(a.matmul(&b).unwrap()))
        });
    }
    group.finish();
}

fn gat(c: &mut Criterion) {
    let graphs: Vec<_> = DRUG_FIXTURES
        .iter()
        .map(|(id, smi)| parse_smiles(smi, id).unwrap())
        .collect();
    let refs: Vec<_> = graphs.iter().collect();
    let batch = GraphBatch::new(&refs).unwrap();
    let gat = GatEncoder::new(GatSpec {
        num_layers: 2,
        heads: 4,
        hidden_dim: 16,
        out_dim: 32,
    });
    let mut store = ParamStore::new();
    gat.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    c.bench_function("gat/forward_20_drugs", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let z = gat.encode_batch(&mut tape, &store, &batch).unwrap();
            black_box(tape.value(z).clone())
        })
    });
    c.bench_function("gat/forward_backward_20_drugs", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let z = gat.encode_batch(&mut tape, &store, &batch).unwrap();
            let s = tape.sum_sq(z);
            black_box(tape.backward(s, &store).unwrap())
        })
    });
}

fn mmd_kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random(&mut rng, 128, 32), random(&mut rng, 128, 32));
    let kernel = KernelSpec::median_heuristic(&a, &b, &[0.25, 0.5, 1.0, 2.0, 4.0]).unwrap();
    c.bench_function("mmd/value_128x32", |bench| {
        bench.iter(|| black_box(mmd(&a, &b, &kernel).unwrap()))
    });
    c.bench_function("mmd/median_heuristic_128x32", |bench| {
        bench.iter(|| black_box(KernelSpec::median_heuristic(&a, &b, &[1.0]).unwrap()))
    });
    let mut store = ParamStore::new();
    tumorlens::numcore::ParamTensor::new("a", vec![128, 32], a.as_slice().to_vec())
        .and_then(|p| store.insert(p))
        .unwrap();
    c.bench_function("mmd/loss_and_gradient_128x32", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let x = tape.param(&store, "a").unwrap();
            let y = tape.constant(b.clone());
            let l = mmd_loss(&mut tape, x, y, &kernel).unwrap();
            black_box(tape.backward(l, &store).unwrap())
        })
    });
}

fn stage1_epoch(c: &mut Criterion) {
    let data = generate_synthetic(&SyntheticSpec {
        n_source: 200,
        n_target: 100,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .dataset;
    let config = TrainConfig {
        epochs_stage1: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("stage1_one_epoch_200x100", |bench| {
        bench.iter(|| {
            black_box(train_stage1(&data.source, &data.source_responses, &data.target, &data.drugs, &config).unwrap())
        })
    });
    group.finish();
}

criterion_group!(benches, matmul, gat, mmd_kernels, stage1_epoch);
criterion_main!(benches);
