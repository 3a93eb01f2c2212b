use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dinn::model::{ModelConfig, ModelParams};
use dinn::synth::{build_dataset, make_subjects};
use dinn::training::{pretrain_step, AdamConfig, Batch, Optimizers, StepSettings, CLIP_EPS};
use dinn::{Graph, Tensor};

fn pseudo(shape: &[usize], seed: usize) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| (((i * 2654435761 + seed) % 1000) as f32 / 500.0) - 1.0)
}

fn conv(c: &mut Criterion) {
    // (input, kernel, stride): a strided feature layer and two generator layers.
    let cases = [
        ("feature_3x3_s2", [32, 15, 10, 8], [3, 3, 8, 32], 2),
        ("generator_3x3_to_8", [32, 60, 80, 32], [3, 3, 32, 8], 1),
        ("generator_1x1_to_64", [32, 15, 20, 128], [1, 1, 128, 64], 1),
    ];
    let mut group = c.benchmark_group("conv2d");
    group.sample_size(10);
    for (name, xs, ks, stride) in cases {
        let x = pseudo(&xs, 1);
        let k = pseudo(&ks, 2);
        let b = Tensor::<f32>::zeros(&[ks[3]]);
        group.bench_function(format!("{name}/forward"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (xi, ki, bi) = (g.input(x.clone()), g.param(&k), g.param(&b));
                black_box(g.conv2d(xi, ki, bi, (stride, stride)).unwrap());
            })
        });
        group.bench_function(format!("{name}/forward_backward"), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (xi, ki, bi) = (g.input(x.clone()), g.param(&k), g.param(&b));
                let y = g.conv2d(xi, ki, bi, (stride, stride)).unwrap();
                let loss = g.sum(y);
                black_box(g.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn dense(c: &mut Criterion) {
    let x = pseudo(&[32, 1536], 3);
    let w = pseudo(&[1536, 10240], 4);
    let b = Tensor::<f32>::zeros(&[10240]);
    let mut group = c.benchmark_group("dense");
    group.sample_size(10);
    group.bench_function("1536x10240/forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (g.input(x.clone()), g.param(&w), g.param(&b));
            let y = g.dense(xi, wi, bi).unwrap();
            let loss = g.sum(y);
            black_box(g.backward(loss).unwrap());
        })
    });
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let (data, split) = build_dataset(&make_subjects(0, 5).unwrap(), 60, 0).unwrap();
    let batch = Batch::<f32>::from_samples(&data, &split.train[..32]).unwrap();
    let params = ModelParams::<f32>::init(0, &ModelConfig::default()).unwrap();
    let opts = Optimizers::new(&params, AdamConfig::default());
    let settings = StepSettings {
        lr_feature_generator: 1e-3,
        lr_discriminator: 1e-4,
        lambda: 0.0,
        clip_eps: CLIP_EPS,
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("pretrain_step/batch32", |bench| {
        bench.iter_batched(
            || (params.clone(), opts.clone()),
            |(mut p, mut o)| black_box(pretrain_step(&batch, &mut p, &mut o, &settings).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, conv, dense, training_step);
criterion_main!(benches);
