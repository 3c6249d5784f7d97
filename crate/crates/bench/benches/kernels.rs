use criterion::{criterion_group, criterion_main, Criterion};
use rf_uda::dataset::{split_leave_one_out, synth_generate};
use rf_uda::{AugmentPolicy, Arch, Factor, ModelParams, SynthSpec, Tape, Tensor, TrainConfig, Trainer};

fn ramp(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect()).unwrap()
}

fn conv2d(c: &mut Criterion) {
    let (x, w, b) = (ramp(&[1, 20, 20]), ramp(&[16, 1, 5, 5]), ramp(&[16]));
    c.bench_function("conv2d_forward_20x20_16x5x5", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.constant(x.clone()), tape.param(w.clone()), tape.param(b.clone()));
            tape.conv2d(xv, wv, bv).unwrap()
        })
    });
    c.bench_function("conv2d_forward_backward_20x20_16x5x5", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.constant(x.clone()), tape.param(w.clone()), tape.param(b.clone()));
            let y = tape.conv2d(xv, wv, bv).unwrap();
            let s = tape.sum(y);
            tape.backward(s).unwrap();
        })
    });
}

fn training_epoch(c: &mut Criterion) {
    let spec = SynthSpec {
        subjects: 1,
        locations: 1,
        frames: 8,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&spec, 1).unwrap();
    let split = split_leave_one_out(&ds, Factor::Orientation, "o4").unwrap();
    let arch = Arch {
        grid: spec.grid,
        frames: spec.frames,
        classes: spec.class_count,
        conv_kernels: 4,
        dense1: 32,
        dense2: 16,
        gru_hidden: 16,
        head_width: 16,
        ..Arch::default()
    };
    let params = ModelParams::init(arch, 0).unwrap();
    let config = TrainConfig {
        batch_size: 8,
        augment: AugmentPolicy::default_for(spec.grid, spec.frames),
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("adaptation_epoch", |bench| {
        bench.iter(|| {
            let mut trainer = Trainer::new(params.clone(), config.clone()).unwrap();
            trainer.train_epoch(&split.source, &split.target, None, 0).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, conv2d, training_epoch);
criterion_main!(benches);
