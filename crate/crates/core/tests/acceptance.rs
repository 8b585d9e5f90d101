//! End-to-end acceptance run. Prints one PASS/FAIL/SKIP line per criterion.
//!
//! The oracle suite (criterion 9) runs first; the statistical criteria need
//! MNIST under `data/mnist` (or `MTJSIM_MNIST`) and are skipped without it.
//! The process fails on an oracle failure or a runtime error. Statistical
//! failures are reported but only fail the process with
//! `MTJSIM_ACCEPTANCE_STRICT=1`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;

use mtjsim::analysis::{
    self, evaluate_grid, evaluate_on_die, loss_landscape, mean, per_die_solution_std, sample_maps, sem, sensitivity,
    sensitivity_hw, variation_sweep, wsat_sweep, LandscapeConfig, MetricsReport, OutlierRule, SweepConfig,
};
use mtjsim::crossbar::{
    encode_solution, idealize_defects, synthesize_die, vmm, CrossbarLayout, DieDefectStats, DieMeasurement,
    EmulationConfig,
};
use mtjsim::data::{load_mnist_dir, Dataset, Split};
use mtjsim::device::{MtjParams, ResistanceDist, ScreeningThresholds};
use mtjsim::network::{
    backward, classification_error, cross_entropy_loss, forward, softmax_rows, ternarize, Params, TernarySolution,
    HIDDEN, INPUTS, OUTPUTS,
};
use mtjsim::rng::SeedTree;
use mtjsim::training::{
    ensemble_gradient, train_defect_free, train_hardware_aware, train_statistics_aware, DefectEntry, DefectMap,
    DefectStats, SignMode, TrainConfig,
};

const ROOT_SEED: u64 = 20_240_601;
const N_DIES: usize = 33;
const N_SOLUTIONS: usize = 20;
const W_SATS: [f64; 6] = [0.0, 2.0, 5.0, 10.0, 15.0, 20.0];
const FAST_N_MAPS: usize = 10;
const FAST_SUBSET: usize = 6_000;
const VARIATIONS: [f64; 6] = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10];
const VARIATION_DIES: usize = 5;
const SENSITIVITY_SAMPLES: usize = 2_000;
const SENSITIVITY_MAPS: usize = 100;
const LANDSCAPE_SAMPLES: usize = 500;
const LANDSCAPE_MAPS: usize = 100;

#[derive(Default)]
struct Tally {
    passed: usize,
    failed: Vec<String>,
    skipped: usize,
}

impl Tally {
    fn record(&mut self, id: &str, pass: bool, detail: String) {
        println!("[{}] criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(id.to_string());
        }
    }

    fn skip(&mut self, id: &str, why: &str) {
        println!("[SKIP] criterion {id}: {why}");
        self.skipped += 1;
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    num / den
}

fn flat(p: &Params) -> Vec<f64> {
    p.w1.iter().chain(p.b1.iter()).chain(p.w2.iter()).chain(p.b2.iter()).copied().collect()
}

fn random_params<R: Rng>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Params {
    let mut p = Params::zeros_with(inputs, hidden, outputs);
    p.w1.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    p.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    p.w2.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    p.b2.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    p
}

fn random_batch<R: Rng>(n: usize, inputs: usize, outputs: usize, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
    let x = Array2::from_shape_simple_fn((n, inputs), || rng.gen::<f64>());
    let mut y = Array2::zeros((n, outputs));
    for r in 0..n {
        y[[r, rng.gen_range(0..outputs)]] = 1.0;
    }
    (x, y)
}

fn random_solution<R: Rng>(rng: &mut R) -> TernarySolution {
    TernarySolution {
        w1: ternarize(&Array2::from_shape_simple_fn((INPUTS, HIDDEN), || rng.gen_range(-1.0..1.0)), 0.3),
        b1: Array1::from_shape_simple_fn(HIDDEN, || rng.gen_range(-0.5..0.5)),
        w2: ternarize(&Array2::from_shape_simple_fn((HIDDEN, OUTPUTS), || rng.gen_range(-1.0..1.0)), 0.3),
        b2: Array1::from_shape_simple_fn(OUTPUTS, || rng.gen_range(-0.5..0.5)),
    }
}

/// Central differences of the mean loss against backprop on the real-valued
/// network; returns the norm-wise relative error.
fn finite_difference_error(p: &Params, x: &Array2<f64>, y: &Array2<f64>, coords: &[usize]) -> f64 {
    let loss = |q: &Params| cross_entropy_loss(&forward(q, x.view()), y.view());
    let analytic = flat(&backward(p, &forward(p, x.view()), y.view()));
    let h = 1e-5;
    let base = flat(p);
    let (a, b, c) = (p.w1.len(), p.b1.len(), p.w2.len());
    let unflat = |v: &[f64]| {
        let mut q = p.clone();
        q.w1.iter_mut().zip(&v[..a]).for_each(|(d, s)| *d = *s);
        q.b1.iter_mut().zip(&v[a..a + b]).for_each(|(d, s)| *d = *s);
        q.w2.iter_mut().zip(&v[a + b..a + b + c]).for_each(|(d, s)| *d = *s);
        q.b2.iter_mut().zip(&v[a + b + c..]).for_each(|(d, s)| *d = *s);
        q
    };
    let mut numeric = Vec::with_capacity(coords.len());
    let mut picked = Vec::with_capacity(coords.len());
    for &k in coords {
        let mut plus = base.clone();
        plus[k] += h;
        let mut minus = base.clone();
        minus[k] -= h;
        numeric.push((loss(&unflat(&plus)) - loss(&unflat(&minus))) / (2.0 * h));
        picked.push(analytic[k]);
    }
    rel_err(&picked, &numeric)
}

/// Every (sample, map) pair materialized separately; weights under a map
/// have no gradient there.
fn materialized_ensemble(p: &Params, x: &Array2<f64>, y: &Array2<f64>, maps: &[DefectMap]) -> (f64, Vec<f64>) {
    let n = x.nrows();
    let mut loss = 0.0;
    let mut total = Params::zeros_with(p.w1.nrows(), p.w1.ncols(), p.w2.ncols());
    for m in maps {
        let mut q = p.clone();
        for e in &m.entries {
            q.w1[[e.row, e.col]] = e.value;
        }
        for r in 0..n {
            let xr = x.slice(ndarray::s![r..r + 1, ..]);
            let yr = y.slice(ndarray::s![r..r + 1, ..]);
            let cache = forward(&q, xr);
            loss += cross_entropy_loss(&cache, yr);
            let mut g = backward(&q, &cache, yr);
            for e in &m.entries {
                g.w1[[e.row, e.col]] = 0.0;
            }
            total.w1 += &g.w1;
            total.b1 += &g.b1;
            total.w2 += &g.w2;
            total.b2 += &g.b2;
        }
    }
    let k = (n * maps.len()) as f64;
    (loss / k, flat(&total).iter().map(|v| v / k).collect())
}

fn synthetic_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = SeedTree::new(seed).stream("toy-data", 0);
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..10u8)).collect();
    let mut images = Array2::zeros((n, INPUTS));
    for (r, &l) in labels.iter().enumerate() {
        for c in 0..INPUTS {
            let on = c % 10 == usize::from(l);
            images[[r, c]] = if on { 0.6 + 0.4 * rng.gen::<f64>() } else { 0.3 * rng.gen::<f64>() };
        }
    }
    Dataset::new(images, labels, Split::Train).expect("valid toy data")
}

fn oracle_suite(t: &mut Tally) -> bool {
    let mut ok = true;
    let mut rng = SeedTree::new(ROOT_SEED).stream("oracles", 0);

    // Finite differences on the relaxed network: 4-2-2 in full, 100-90-10 on sampled coordinates.
    let p = random_params(4, 2, 2, &mut rng);
    let (x, y) = random_batch(6, 4, 2, &mut rng);
    let all: Vec<usize> = (0..flat(&p).len()).collect();
    let fd_small = finite_difference_error(&p, &x, &y, &all);
    let mut p = random_params(INPUTS, HIDDEN, OUTPUTS, &mut rng);
    p.w1 *= 0.1;
    p.w2 *= 0.3;
    let (x, y) = random_batch(8, INPUTS, OUTPUTS, &mut rng);
    let n_params = flat(&p).len();
    let coords: Vec<usize> = (0..300).map(|_| rng.gen_range(0..n_params)).collect();
    let fd_full = finite_difference_error(&p, &x, &y, &coords);
    let pass = fd_small <= 1e-6 && fd_full <= 1e-6;
    ok &= pass;
    t.record("9a", pass, format!("finite-difference gradient rel err {fd_small:.2e} (4-2-2), {fd_full:.2e} (100-90-10), tol 1e-6"));

    // VMM superposition on a defective, varied die.
    let die = synthesize_die(
        "oracle",
        &DieDefectStats::default(),
        &ResistanceDist::default(),
        &ScreeningThresholds::default(),
        &mut rng,
    )
    .expect("synthetic die");
    let sol = random_solution(&mut rng);
    let enc = encode_solution(&sol, &die, &CrossbarLayout).expect("encode");
    let cfg = EmulationConfig::for_die(&die).expect("g_norm");
    let x1 = Array2::from_shape_simple_fn((16, INPUTS), || rng.gen::<f64>());
    let x2 = Array2::from_shape_simple_fn((16, INPUTS), || rng.gen::<f64>());
    let (a, b) = (0.7, -1.3);
    let lhs = vmm((&x1 * a + &x2 * b).view(), &enc.layer1, &cfg).expect("vmm");
    let rhs = vmm(x1.view(), &enc.layer1, &cfg).expect("vmm") * a + vmm(x2.view(), &enc.layer1, &cfg).expect("vmm") * b;
    let e = rel_err(rhs.as_slice().unwrap(), lhs.as_slice().unwrap());
    ok &= e <= 1e-12;
    t.record("9b", e <= 1e-12, format!("VMM superposition rel err {e:.2e}, tol 1e-12"));

    // Round trip on zero-variance dies at several resistance pairs.
    let thresholds = ScreeningThresholds::default();
    let exact = [(10e3, 20e3), (8e3, 16e3), (12_345.0, 25_000.0)].iter().all(|&(rp, rap)| {
        let die = DieMeasurement::uniform("flat", MtjParams::new(rp, rap).unwrap(), &thresholds);
        let cfg = EmulationConfig::for_die(&die).unwrap();
        let eff = encode_solution(&sol, &die, &CrossbarLayout).unwrap().effective_params(&cfg);
        eff.w1 == sol.w1.mapv(f64::from) && eff.w2 == sol.w2.mapv(f64::from)
    });
    ok &= exact;
    t.record("9c", exact, "encode/decode round trip on zero-variance dies is bit-exact".into());

    // Softmax normalization, including extreme scores.
    let mut scores = Array2::from_shape_simple_fn((50, OUTPUTS), || rng.gen_range(-50.0..50.0));
    scores[[0, 3]] = 800.0;
    scores[[1, 0]] = -800.0;
    scores.row_mut(2).fill(1e308);
    let probs = softmax_rows(&scores);
    let worst = probs.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    let sane = probs.iter().all(|v| v.is_finite() && *v >= 0.0);
    ok &= worst <= 1e-12 && sane;
    t.record("9d", worst <= 1e-12 && sane, format!("softmax rows sum to 1 within {worst:.1e}, all finite and nonnegative"));

    // Determinism across worker counts.
    let toy = synthetic_dataset(300, 5);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 25,
        seed: 11,
        ..TrainConfig::default()
    };
    let run = |workers: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        pool.install(|| {
            let o = train_statistics_aware(&cfg, &toy, &DefectStats::default(), 20.0, 8, SignMode::Symmetric).unwrap();
            let r = evaluate_grid(
                std::slice::from_ref(&o.solution),
                std::slice::from_ref(&die),
                &toy,
                &OutlierRule::default(),
            )
            .unwrap();
            (o.solution, flat(&o.real), o.epoch_losses, r.errors)
        })
    };
    let one = run(1);
    let same = [2, 4].iter().all(|&w| {
        let other = run(w);
        one.0 == other.0
            && one.1.iter().zip(&other.1).all(|(a, b)| a.to_bits() == b.to_bits())
            && one.2.iter().zip(&other.2).all(|(a, b)| a.to_bits() == b.to_bits())
            && one.3 == other.3
    });
    ok &= same;
    t.record("9e", same, "training and evaluation bit-identical with 1, 2 and 4 workers".into());

    // Double-batch gradient against the materialized N_B x N_map oracle.
    let p = random_params(4, 2, 2, &mut rng);
    let (x, y) = random_batch(5, 4, 2, &mut rng);
    let maps = vec![
        DefectMap {
            entries: vec![DefectEntry { row: 0, col: 1, value: 20.0 }],
            w_sat: 20.0,
        },
        DefectMap {
            entries: vec![
                DefectEntry { row: 2, col: 0, value: -20.0 },
                DefectEntry { row: 3, col: 1, value: 20.0 },
            ],
            w_sat: 20.0,
        },
        DefectMap::empty(),
    ];
    let (loss, grads) = ensemble_gradient(&p, x.view(), y.view(), &maps).unwrap();
    let (oracle_loss, oracle) = materialized_ensemble(&p, &x, &y, &maps);
    let ge = rel_err(&oracle, &flat(&grads));
    let le = ((loss - oracle_loss) / oracle_loss).abs();
    let pass = ge <= 1e-10 && le <= 1e-10;
    ok &= pass;
    t.record("9f", pass, format!("double-batch gradient rel err {ge:.2e}, loss rel err {le:.2e}, tol 1e-10 (4-2-2)"));
    ok
}

struct Stage(Instant, &'static str);

impl Drop for Stage {
    fn drop(&mut self) {
        eprintln!("  [{}] {:.0} s", self.1, self.0.elapsed().as_secs_f64());
    }
}

fn stage(name: &'static str) -> Stage {
    eprintln!("  [{name}] ...");
    Stage(Instant::now(), name)
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MTJSIM_MNIST")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn intra_die_spread(report: &MetricsReport) -> f64 {
    mean(&per_die_solution_std(report).unwrap())
}

fn statistical_suite(t: &mut Tally, train: &Dataset, test: &Dataset) -> mtjsim::Result<()> {
    let tree = SeedTree::new(ROOT_SEED);
    let rule = OutlierRule::default();
    let base = TrainConfig::default();

    let dies: Vec<DieMeasurement> = {
        let _s = stage("dies");
        let mut dies = Vec::new();
        let mut k = 0u64;
        while dies.len() < N_DIES {
            let die = synthesize_die(
                format!("die{k:02}"),
                &DieDefectStats::default(),
                &ResistanceDist::default(),
                &ScreeningThresholds::default(),
                &mut tree.stream("die", k),
            )?;
            if !rule.is_outlier(&die) {
                dies.push(die);
            }
            k += 1;
        }
        eprintln!("  {} dies kept of {k} synthesized", dies.len());
        dies
    };

    // 1. Software baseline.
    let df: Vec<TernarySolution> = {
        let _s = stage("defect-free training");
        (0..N_SOLUTIONS)
            .map(|s| {
                let cfg = TrainConfig {
                    seed: tree.child("defect-free", s as u64).root(),
                    ..base
                };
                train_defect_free(&cfg, train).map(|o| o.solution)
            })
            .collect::<mtjsim::Result<_>>()?
    };
    let baseline: Vec<f64> = df
        .iter()
        .map(|s| classification_error(&s.to_params(), test))
        .collect::<mtjsim::Result<_>>()?;
    let b = mean(&baseline);
    t.record(
        "1",
        (0.025..=0.055).contains(&b),
        format!("defect-free test error {:.2}% +/- {:.2}% (SEM) over {N_SOLUTIONS} seeds, target 4% +/- 1.5%", 100.0 * b, 100.0 * sem(&baseline)),
    );

    // 2. Idealized dies.
    let ideal_dies: Vec<DieMeasurement> = dies.iter().map(idealize_defects).collect::<mtjsim::Result<_>>()?;
    let ideal = {
        let _s = stage("idealized evaluation");
        evaluate_grid(&df, &ideal_dies, test, &rule)?
    };
    let gap = ideal.overall_mean - ideal.baseline_mean;
    t.record(
        "2",
        (0.0..=0.01).contains(&gap),
        format!("idealized-die error {:.2}% vs baseline {:.2}%, gap {:.2} pp, target [0, 1] pp", 100.0 * ideal.overall_mean, 100.0 * ideal.baseline_mean, 100.0 * gap),
    );

    // 3. Defective dies.
    let defective = {
        let _s = stage("defective evaluation");
        evaluate_grid(&df, &dies, test, &rule)?
    };
    let inter = analysis::sample_std(&defective.kept_die_means());
    let intra = intra_die_spread(&defective);
    let degr = defective.overall_mean - defective.baseline_mean;
    t.record(
        "3",
        degr >= 0.02 && inter > intra,
        format!(
            "defective-die error {:.2}% (+{:.2} pp, need >= 2), inter-die std {:.2}% vs mean intra-die std {:.2}%",
            100.0 * defective.overall_mean,
            100.0 * degr,
            100.0 * inter,
            100.0 * intra
        ),
    );

    // 4. Hardware-aware recovery, one solution per die.
    let hw_errors: Vec<f64> = {
        let _s = stage("hardware-aware training");
        dies.iter()
            .enumerate()
            .map(|(d, die)| {
                let cfg = TrainConfig {
                    seed: tree.child("hardware-aware", d as u64).root(),
                    ..base
                };
                let sol = train_hardware_aware(&cfg, train, die)?.solution;
                evaluate_on_die(&sol, die, test)
            })
            .collect::<mtjsim::Result<_>>()?
    };
    let hw = mean(&hw_errors);
    let hw_gap = hw - ideal.overall_mean;
    t.record(
        "4",
        hw_gap.abs() <= 0.015,
        format!(
            "hardware-aware error {:.2}% on own die vs idealized {:.2}%, difference {:.2} pp, tol 1.5 pp",
            100.0 * hw,
            100.0 * ideal.overall_mean,
            100.0 * hw_gap
        ),
    );

    // 5. Statistics-aware sweep (fast suite).
    let subset = train.random_subset(FAST_SUBSET, &mut tree.stream("subset", 0));
    let sweep = {
        let _s = stage("statistics-aware sweep");
        wsat_sweep(
            &dies,
            &subset,
            test,
            &SweepConfig {
                w_sats: W_SATS.to_vec(),
                n_solutions: N_SOLUTIONS,
                stats: DefectStats::default(),
                n_maps: FAST_N_MAPS,
                sign: SignMode::Symmetric,
                train: TrainConfig {
                    seed: tree.child("statistics-aware", 0).root(),
                    ..base
                },
            },
            &rule,
        )?
    };
    for p in &sweep {
        eprintln!(
            "  w_sat {:>4}: baseline {:.2}%, emulated {:.2}%, delta {:.4}, 1/alpha {:.2}, per-die std {:.2}%",
            p.w_sat,
            100.0 * p.report.baseline_mean,
            100.0 * p.report.overall_mean,
            p.report.delta,
            p.report.inv_alpha,
            100.0 * intra_die_spread(&p.report)
        );
    }
    let at = |w: f64| &sweep.iter().find(|p| p.w_sat == w).expect("swept").report;
    let (r0, r2, r20) = (at(0.0), at(2.0), at(20.0));
    t.record(
        "5a",
        (0.08..=0.12).contains(&r20.baseline_mean) && r20.baseline_mean > r0.baseline_mean,
        format!(
            "statistics-aware baseline {:.2}% at w_sat 0 -> {:.2}% at w_sat 20, target 10% +/- 2%",
            100.0 * r0.baseline_mean,
            100.0 * r20.baseline_mean
        ),
    );
    t.record("5b", (0.005..=0.03).contains(&r20.delta), format!("delta at w_sat 20 = {:.4}, target [0.005, 0.03]", r20.delta));
    t.record(
        "5c",
        r20.inv_alpha > r2.inv_alpha,
        format!("1/alpha {:.2} at w_sat 20 vs {:.2} at w_sat 2", r20.inv_alpha, r2.inv_alpha),
    );
    let sd20 = intra_die_spread(r20);
    t.record("5d", sd20 < 0.02, format!("mean per-die solution std at w_sat 20 = {:.2}%, target < 2%", 100.0 * sd20));
    t.record(
        "5e",
        r0.baseline_mean < 0.15,
        format!("stuck-at-zero sanity bound: w_sat 0 test error {:.2}%, need < 15%", 100.0 * r0.baseline_mean),
    );

    // 6. Variation sweep with the defect-free solutions.
    let points = {
        let _s = stage("variation sweep");
        variation_sweep(&df, &VARIATIONS, VARIATION_DIES, test, tree.child("variation", 0).root())?
    };
    let zero_exact = {
        let flat_dies: Vec<DieMeasurement> = (0..VARIATION_DIES)
            .map(|d| {
                synthesize_die(
                    format!("flat{d}"),
                    &DieDefectStats { mean_defect_count: 0.0, std_defect_count: 0.0, shorted_fraction: 0.5 },
                    &ResistanceDist::with_variation(10e3, 20e3, 0.0),
                    &ScreeningThresholds::default(),
                    &mut tree.stream("flat-die", d as u64),
                )
            })
            .collect::<mtjsim::Result<_>>()?;
        let r = evaluate_grid(&df, &flat_dies, test, &OutlierRule { min_yield: 0.0 })?;
        r.errors.iter().all(|row| row.iter().zip(&r.baseline).all(|(e, b)| e == b)) && points[0].delta == 0.0
    };
    let monotone = points.windows(2).all(|w| w[1].mean_error >= w[0].mean_error - 0.002);
    let d8 = points.iter().find(|p| p.variation == 0.08).expect("swept").delta;
    let ratio = d8 / hw_gap;
    let within = hw_gap > 0.0 && (0.5..=2.0).contains(&ratio);
    t.record(
        "6",
        zero_exact && monotone && within,
        format!(
            "0% variation exact: {zero_exact}; errors {:?}% non-decreasing within 0.2 pp: {monotone}; delta at 8% = {:.2} pp vs hardware-aware gap {:.2} pp (ratio {ratio:.2}, need [0.5, 2])",
            points.iter().map(|p| format!("{:.2}", 100.0 * p.mean_error)).collect::<Vec<_>>(),
            100.0 * d8,
            100.0 * hw_gap
        ),
    );

    // 7. Sensitivity orderings, w_sat = 20 statistics-aware vs defect-free.
    let sa = &sweep.iter().find(|p| p.w_sat == 20.0).expect("swept").solutions;
    let sens_data = subset.head(SENSITIVITY_SAMPLES);
    let maps = sample_maps(&DefectStats::default(), 20.0, SENSITIVITY_MAPS, SignMode::Symmetric, &tree, "sensitivity-maps")?;
    let (i_df, i_sa, ihw_df, ihw_sa) = {
        let _s = stage("sensitivity");
        let plain = |sols: &[TernarySolution]| -> mtjsim::Result<Vec<f64>> {
            sols.iter().map(|s| Ok(sensitivity(&s.to_params(), &sens_data)?.mean())).collect()
        };
        let hw = |sols: &[TernarySolution]| -> mtjsim::Result<Vec<f64>> {
            sols.iter().map(|s| Ok(sensitivity_hw(&s.to_params(), &sens_data, &maps)?.mean())).collect()
        };
        (plain(&df)?, plain(sa)?, hw(&df)?, hw(sa)?)
    };
    let below = |lo: &[f64], hi: &[f64]| mean(lo) + sem(lo) < mean(hi) - sem(hi);
    let fmt = |v: &[f64]| format!("{:.3e} +/- {:.1e}", mean(v), sem(v));
    t.record(
        "7",
        below(&i_df, &i_sa) && below(&ihw_sa, &ihw_df),
        format!(
            "I: defect-free {} < statistics-aware {}; I_HW: statistics-aware {} < defect-free {}",
            fmt(&i_df),
            fmt(&i_sa),
            fmt(&ihw_sa),
            fmt(&ihw_df)
        ),
    );

    // 8. Loss landscapes on a training subset.
    let land_data = subset.head(LANDSCAPE_SAMPLES);
    let grid = LandscapeConfig::default();
    let (single_df, single_sa, avg_sa) = {
        let _s = stage("landscapes");
        let one = sample_maps(&DefectStats::default(), 20.0, 1, SignMode::Symmetric, &tree, "landscape-map")?;
        let many = sample_maps(&DefectStats::default(), 20.0, LANDSCAPE_MAPS, SignMode::Symmetric, &tree, "landscape-maps")?;
        let seed = tree.child("landscape", 0).root();
        let single_df = loss_landscape(&df[0].to_params(), &land_data, &grid, &one, seed)?;
        let single_sa = loss_landscape(&sa[0].to_params(), &land_data, &grid, &one, seed)?;
        let avg_sa = sa[..2]
            .iter()
            .map(|s| loss_landscape(&s.to_params(), &land_data, &grid, &many, seed))
            .collect::<mtjsim::Result<Vec<_>>>()?;
        (single_df, single_sa, avg_sa)
    };
    let ratio = single_df.min_loss / single_sa.min_loss;
    let dists: Vec<usize> = avg_sa.iter().map(|l| l.argmin_distance()).collect();
    t.record(
        "8",
        ratio >= 3.0 && dists.iter().all(|&d| d <= 3),
        format!(
            "single-map grid minimum: defect-free {:.4} / statistics-aware {:.4} = {ratio:.1}x (need >= 3); {LANDSCAPE_MAPS}-map minima at grid distances {dists:?} from origin (need <= 3)",
            single_df.min_loss, single_sa.min_loss
        ),
    );
    Ok(())
}

fn main() -> ExitCode {
    let mut t = Tally::default();
    println!("acceptance: oracle suite");
    let oracles_ok = oracle_suite(&mut t);
    let statistical = ["1", "2", "3", "4", "5a", "5b", "5c", "5d", "5e", "6", "7", "8"];
    let mut runtime_error = None;
    if !oracles_ok {
        for id in statistical {
            t.skip(id, "oracle suite failed");
        }
    } else {
        let dir = mnist_dir();
        match (load_mnist_dir(&dir, Split::Train), load_mnist_dir(&dir, Split::Test)) {
            (Ok(train), Ok(test)) => {
                println!("acceptance: statistical suite ({} train / {} test images)", train.len(), test.len());
                if let Err(e) = statistical_suite(&mut t, &train, &test) {
                    println!("[FAIL] runtime error: {e}");
                    runtime_error = Some(e);
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                for id in statistical {
                    t.skip(id, &format!("MNIST not available at {}: {e}", dir.display()));
                }
            }
        }
    }
    println!(
        "acceptance: {} passed, {} failed {:?}, {} skipped",
        t.passed,
        t.failed.len(),
        t.failed,
        t.skipped
    );
    let strict = std::env::var("MTJSIM_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let oracle_failed = t.failed.iter().any(|id| id.starts_with('9'));
    if oracle_failed || runtime_error.is_some() || (strict && !t.failed.is_empty()) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
