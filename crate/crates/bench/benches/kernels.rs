use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ndarray::Array2;
use rand::Rng;

use mtjsim::analysis::evaluate_on_die;
use mtjsim::crossbar::{encode_solution, synthesize_die, vmm};
use mtjsim::data::{Dataset, Split};
use mtjsim::network::{backward, forward, HIDDEN, INPUTS, OUTPUTS};
use mtjsim::training::{ensemble_gradient, initial_params, sample_defect_map};
use mtjsim::{
    CrossbarLayout, DefectStats, DieDefectStats, EmulationConfig, ResistanceDist, ScreeningThresholds, SeedTree,
    SignMode, TernarySolution,
};

fn batch(n: usize, rng: &mut impl Rng) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_simple_fn((n, INPUTS), || rng.gen::<f64>());
    let mut y = Array2::zeros((n, OUTPUTS));
    for r in 0..n {
        y[[r, rng.gen_range(0..OUTPUTS)]] = 1.0;
    }
    (x, y)
}

fn network(c: &mut Criterion) {
    let tree = SeedTree::new(1);
    let mut rng = tree.stream("bench", 0);
    let real = initial_params(&tree).unwrap();
    let params = TernarySolution::from_real(&real, 0.1).to_params();
    let (x, y) = batch(100, &mut rng);

    c.bench_function("forward_backward_batch100", |b| {
        b.iter(|| {
            let cache = forward(&params, x.view());
            black_box(backward(&params, &cache, y.view()))
        })
    });

    let stats = DefectStats::default();
    let maps: Vec<_> = (0..10)
        .map(|_| sample_defect_map(&stats, 20.0, SignMode::Symmetric, &mut rng).unwrap())
        .collect();
    c.bench_function("ensemble_gradient_batch100_maps10", |b| {
        b.iter(|| black_box(ensemble_gradient(&params, x.view(), y.view(), &maps).unwrap()))
    });
}

fn crossbar(c: &mut Criterion) {
    let tree = SeedTree::new(2);
    let mut rng = tree.stream("bench", 0);
    let die = synthesize_die(
        "bench",
        &DieDefectStats::default(),
        &ResistanceDist::default(),
        &ScreeningThresholds::default(),
        &mut rng,
    )
    .unwrap();
    let sol = TernarySolution::from_real(&initial_params(&tree).unwrap(), 0.1);
    assert_eq!(sol.w1.dim(), (INPUTS, HIDDEN));
    let layout = CrossbarLayout;
    let cfg = EmulationConfig::for_die(&die).unwrap();

    c.bench_function("encode_solution", |b| b.iter(|| black_box(encode_solution(&sol, &die, &layout).unwrap())));

    let enc = encode_solution(&sol, &die, &layout).unwrap();
    let (x, _) = batch(1000, &mut rng);
    c.bench_function("vmm_layer1_1000_inputs", |b| b.iter(|| black_box(vmm(x.view(), &enc.layer1, &cfg).unwrap())));

    let (images, _) = batch(2000, &mut rng);
    let labels = (0..2000).map(|k| (k % 10) as u8).collect();
    let data = Dataset::new(images, labels, Split::Test).unwrap();
    c.bench_function("evaluate_on_die_2000_images", |b| b.iter(|| black_box(evaluate_on_die(&sol, &die, &data).unwrap())));
}

criterion_group!(benches, network, crossbar);
criterion_main!(benches);
