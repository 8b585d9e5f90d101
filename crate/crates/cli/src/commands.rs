use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use mtjsim::analysis::{
    self, evaluate_grid, log_histogram, loss_landscape, per_die_solution_std, sample_maps,
    sensitivity_hw, variation_sweep, wsat_sweep, LandscapeConfig, MetricsReport, OutlierRule, SweepConfig,
};
use mtjsim::crossbar::{read_die, read_die_file, screen_devices, synthesize_die, write_die, DieDefectStats};
use mtjsim::data::{load_mnist_dir, Dataset, Split};
use mtjsim::device::{ResistanceDist, ScreeningThresholds};
use mtjsim::io::{
    metric_rows, read_metric_rows, read_solution, write_json, write_landscape_csv, write_metric_rows,
    write_solution, DieSource, ExperimentConfig, Mode, RunManifest, SolutionFile, SolutionMetadata,
};
use mtjsim::training::{train_defect_free, train_hardware_aware, train_statistics_aware, DefectStats, TrainConfig};
use mtjsim::{DieMeasurement, SeedTree, TernarySolution};

use crate::args::{
    parse_list, parse_wsat_spec, DataArgs, DieSelection, HyperArgs, InferArgs, LandscapeArgs, MapArgs, ReportArgs,
    ScreenArgs, SensitivityArgs, SweepArgs, SynthDieArgs, TrainArgs, VariationArgs,
};
use crate::usage;

const MANIFEST: &str = "manifest.json";

/// Creates `out` and writes the manifest there; results follow it.
fn start_run(
    command: &str,
    args: &impl Serialize,
    out: &Path,
    datasets: &[(&str, &Dataset)],
    streams: &[(&str, u64)],
) -> anyhow::Result<()> {
    let mut m = RunManifest::new(command, std::env::args().collect(), serde_json::to_value(args)?);
    for (name, d) in datasets {
        m.dataset_hashes.insert((*name).into(), d.content_hash());
    }
    for &(label, index) in streams {
        m.stage_seeds
            .insert(format!("{label}/{index}"), SeedTree::stream_id(label, index));
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    m.write_new(&out.join(MANIFEST))?;
    Ok(())
}

fn print_json(v: &impl Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn load_train(d: &DataArgs, seed: u64) -> anyhow::Result<Dataset> {
    let data = load_mnist_dir(&d.mnist, Split::Train)?;
    Ok(match d.train_subset {
        Some(n) => data.random_subset(n, &mut SeedTree::new(seed).stream("train-subset", 0)),
        None => data,
    })
}

fn load_test(d: &DataArgs) -> anyhow::Result<Dataset> {
    let data = load_mnist_dir(&d.mnist, Split::Test)?;
    Ok(match d.test_subset {
        Some(n) => data.head(n),
        None => data,
    })
}

fn check_subsets(d: &DataArgs) -> anyhow::Result<()> {
    if d.train_subset == Some(0) || d.test_subset == Some(0) {
        return Err(usage("dataset subsets must be at least 1"));
    }
    Ok(())
}

fn train_config(h: &HyperArgs, seed: u64) -> anyhow::Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: h.epochs.unwrap_or(d.epochs),
        batch_size: h.batch.unwrap_or(d.batch_size),
        learning_rate: h.lr.unwrap_or(d.learning_rate),
        ternary_threshold: h.threshold.unwrap_or(d.ternary_threshold),
        seed,
        ..d
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn defect_stats(m: &MapArgs) -> anyhow::Result<DefectStats> {
    let d = DefectStats::default();
    let s = DefectStats {
        mean_count: m.defect_mean.unwrap_or(d.mean_count),
        std_count: m.defect_std.unwrap_or(d.std_count),
    };
    s.validate().map_err(|e| usage(e.to_string()))?;
    Ok(s)
}

fn check_min_yield(sel: &DieSelection) -> anyhow::Result<OutlierRule> {
    if !(0.0..=1.0).contains(&sel.min_yield) {
        return Err(usage(format!("--min-yield must lie in [0, 1], got {}", sel.min_yield)));
    }
    Ok(OutlierRule { min_yield: sel.min_yield })
}

/// Dies named with `--die`, then every `*.json` in `--dies` by file name.
fn load_dies(sel: &DieSelection) -> anyhow::Result<Vec<DieMeasurement>> {
    let mut paths = sel.die.clone();
    if let Some(dir) = &sel.dies {
        let mut found: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading die directory {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != MANIFEST))
            .collect();
        found.sort();
        paths.extend(found);
    }
    if paths.is_empty() {
        return Err(usage("no dies given (use --die FILE or --dies DIR)"));
    }
    paths.iter().map(|p| Ok(read_die(p)?)).collect()
}

fn load_solutions(paths: &[PathBuf]) -> anyhow::Result<Vec<TernarySolution>> {
    paths.iter().map(|p| Ok(read_solution(p)?.solution()?)).collect()
}

pub fn synth_die(a: SynthDieArgs) -> anyhow::Result<()> {
    let stats = DieDefectStats {
        mean_defect_count: a.defect_mean,
        std_defect_count: a.defect_std,
        shorted_fraction: a.shorted_fraction,
    };
    stats.validate().map_err(|e| usage(e.to_string()))?;
    let dist = ResistanceDist::with_variation(10e3, 20e3, a.variation);
    dist.validate().map_err(|e| usage(e.to_string()))?;
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let streams: Vec<(&str, u64)> = (0..a.count as u64).map(|k| ("die", k)).collect();
    start_run("synth-die", &a, &a.out, &[], &streams)?;
    let tree = SeedTree::new(a.seed);
    let thresholds = ScreeningThresholds::default();
    let mut listing = Vec::new();
    for k in 0..a.count {
        let id = format!("die{k:02}");
        let die = synthesize_die(id.clone(), &stats, &dist, &thresholds, &mut tree.stream("die", k as u64))?;
        let path = a.out.join(format!("{id}.json"));
        write_die(&die, &path)?;
        listing.push(serde_json::json!({
            "die_id": id,
            "path": path,
            "yield": die.yield_fraction(),
        }));
    }
    print_json(&listing)
}

pub fn screen(a: ScreenArgs) -> anyhow::Result<()> {
    let file = read_die_file(&a.die)?;
    if let Some(out) = &a.out {
        start_run("screen", &a, out, &[], &[])?;
    }
    let report = screen_devices(&file, &ScreeningThresholds::default())?;
    if let Some(out) = &a.out {
        write_json(&report, &out.join("screen.json"))?;
    }
    print_json(&report)
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    check_subsets(&a.data)?;
    let cfg = train_config(&a.hyper, a.seed)?;
    let sa = a.mode == Mode::StatisticsAware;
    let stats = if sa { Some(defect_stats(&a.maps)?) } else { None };
    let experiment = ExperimentConfig {
        mode: a.mode,
        seed: a.seed,
        train: cfg,
        stats,
        w_sat: a.wsat,
        n_maps: a.nmaps,
        sign: a.maps.sign.into(),
        dies: a.die.clone().map(|p| DieSource::Files(vec![p])),
        outliers: OutlierRule::default(),
        out: a.out.clone(),
    };
    experiment.validate().map_err(|e| usage(e.to_string()))?;
    let die = match a.mode {
        Mode::HardwareAware => Some(read_die(a.die.as_deref().expect("validated"))?),
        _ => None,
    };
    let data = load_train(&a.data, a.seed)?;

    let mut streams = vec![("init", 0), ("shuffle", 0)];
    if sa {
        streams.push(("defect-maps", 0));
    }
    if a.data.train_subset.is_some() {
        streams.push(("train-subset", 0));
    }
    start_run("train", &a, &a.out, &[("train", &data)], &streams)?;

    let outcome = match a.mode {
        Mode::DefectFree => train_defect_free(&cfg, &data)?,
        Mode::HardwareAware => train_hardware_aware(&cfg, &data, die.as_ref().expect("loaded"))?,
        Mode::StatisticsAware => train_statistics_aware(
            &cfg,
            &data,
            stats.as_ref().expect("validated"),
            a.wsat.expect("validated"),
            a.nmaps.expect("validated"),
            experiment.sign,
        )?,
    };
    let metadata = SolutionMetadata {
        mode: a.mode,
        seed: a.seed,
        config: cfg,
        w_sat: if sa { a.wsat } else { None },
        n_maps: if sa { a.nmaps } else { None },
        stats,
        sign: sa.then_some(experiment.sign),
        die_id: die.map(|d| d.die_id),
        dataset_hash: data.content_hash(),
    };
    let path = a.out.join("solution.json");
    write_solution(&SolutionFile::new(&outcome.solution, metadata, outcome.clamp), &path)?;
    print_json(&serde_json::json!({
        "solution": path,
        "final_loss": outcome.epoch_losses.last(),
    }))
}

pub fn infer(a: InferArgs) -> anyhow::Result<()> {
    check_subsets(&a.data)?;
    let rule = check_min_yield(&a.dies)?;
    let solutions = load_solutions(&a.solution)?;
    let dies = load_dies(&a.dies)?;
    let test = load_test(&a.data)?;
    start_run("infer", &a, &a.out, &[("test", &test)], &[])?;
    let report = evaluate_grid(&solutions, &dies, &test, &rule)?;
    write_metric_rows(&metric_rows(&report, None), &a.out.join("metrics.csv"))?;
    write_json(&report, &a.out.join("summary.json"))?;
    print_json(&aggregates(None, &report))
}

#[derive(Serialize)]
struct Aggregates {
    w_sat: Option<f64>,
    baseline_mean: f64,
    overall_mean: f64,
    delta: f64,
    alpha: f64,
    inv_alpha: f64,
    mean_solution_std: Option<f64>,
    outliers: Vec<String>,
}

fn aggregates(w_sat: Option<f64>, r: &MetricsReport) -> Aggregates {
    Aggregates {
        w_sat,
        baseline_mean: r.baseline_mean,
        overall_mean: r.overall_mean,
        delta: r.delta,
        alpha: r.alpha,
        inv_alpha: r.inv_alpha,
        mean_solution_std: per_die_solution_std(r).ok().map(|v| analysis::mean(&v)),
        outliers: r.outliers.clone(),
    }
}

pub fn sweep_wsat(a: SweepArgs) -> anyhow::Result<()> {
    check_subsets(&a.data)?;
    let w_sats = parse_wsat_spec(&a.wsat).map_err(usage)?;
    if a.solutions == 0 || a.nmaps == 0 {
        return Err(usage("--solutions and --nmaps must be at least 1"));
    }
    let cfg = train_config(&a.hyper, a.seed)?;
    let stats = defect_stats(&a.maps)?;
    let rule = check_min_yield(&a.dies)?;
    let dies = load_dies(&a.dies)?;
    let train = load_train(&a.data, a.seed)?;
    let test = load_test(&a.data)?;
    let mut streams = Vec::new();
    if a.data.train_subset.is_some() {
        streams.push(("train-subset", 0));
    }
    start_run("sweep-wsat", &a, &a.out, &[("train", &train), ("test", &test)], &streams)?;

    let config = SweepConfig {
        w_sats,
        n_solutions: a.solutions,
        stats,
        n_maps: a.nmaps,
        sign: a.maps.sign.into(),
        train: cfg,
    };
    let points = wsat_sweep(&dies, &train, &test, &config, &rule)?;

    let sol_dir = a.out.join("solutions");
    fs::create_dir_all(&sol_dir).with_context(|| format!("creating {}", sol_dir.display()))?;
    let mut rows = Vec::new();
    let mut table = String::from("w_sat,baseline_mean,overall_mean,delta,alpha,inv_alpha,mean_solution_std\n");
    let mut summary = Vec::new();
    for p in &points {
        for (s, sol) in p.solutions.iter().enumerate() {
            let seed = analysis::sweep_seed(a.seed, p.w_sat, s);
            let metadata = SolutionMetadata {
                mode: Mode::StatisticsAware,
                seed,
                config: TrainConfig { seed, ..cfg },
                w_sat: Some(p.w_sat),
                n_maps: Some(a.nmaps),
                stats: Some(stats),
                sign: Some(config.sign),
                die_id: None,
                dataset_hash: train.content_hash(),
            };
            write_solution(
                &SolutionFile::new(sol, metadata, None),
                &sol_dir.join(format!("wsat{}_s{s:03}.json", p.w_sat)),
            )?;
        }
        rows.extend(metric_rows(&p.report, Some(p.w_sat)));
        let g = aggregates(Some(p.w_sat), &p.report);
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{}",
            p.w_sat,
            g.baseline_mean,
            g.overall_mean,
            g.delta,
            g.alpha,
            g.inv_alpha,
            g.mean_solution_std.map(|v| v.to_string()).unwrap_or_default()
        );
        summary.push(g);
    }
    write_metric_rows(&rows, &a.out.join("metrics.csv"))?;
    let path = a.out.join("sweep.csv");
    fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
    write_json(&summary, &a.out.join("summary.json"))?;
    print_json(&summary)
}

pub fn sensitivity(a: SensitivityArgs) -> anyhow::Result<()> {
    check_subsets(&a.data)?;
    if a.nmaps == 0 || a.bins == 0 {
        return Err(usage("--nmaps and --bins must be at least 1"));
    }
    if !(a.wsat.is_finite() && a.wsat >= 0.0) {
        return Err(usage(format!("--wsat must be finite and >= 0, got {}", a.wsat)));
    }
    let stats = defect_stats(&a.maps)?;
    let solutions = load_solutions(&a.solution)?;
    let data = load_train(&a.data, a.seed)?;
    let mut streams = vec![("sensitivity-maps", 0)];
    if a.data.train_subset.is_some() {
        streams.push(("train-subset", 0));
    }
    start_run("sensitivity", &a, &a.out, &[("train", &data)], &streams)?;

    let tree = SeedTree::new(a.seed);
    let maps = sample_maps(&stats, a.wsat, a.nmaps, a.maps.sign.into(), &tree, "sensitivity-maps")?;
    let mut summary = String::from("solution,path,mean_i,mean_i_hw\n");
    let mut weights = String::from("solution,row,col,i,i_hw\n");
    let (mut pooled, mut pooled_hw) = (Vec::new(), Vec::new());
    for (s, (sol, path)) in solutions.iter().zip(&a.solution).enumerate() {
        let p = sol.to_params();
        let i = analysis::sensitivity(&p, &data)?;
        let ihw = sensitivity_hw(&p, &data, &maps)?;
        let _ = writeln!(summary, "{s},{},{},{}", path.display(), i.mean(), ihw.mean());
        for ((r, c), v) in i.values.indexed_iter() {
            let _ = writeln!(weights, "{s},{r},{c},{v},{}", ihw.values[[r, c]]);
        }
        pooled.extend(i.values.iter().copied());
        pooled_hw.extend(ihw.values.iter().copied());
    }
    let hist = log_histogram(&[&pooled, &pooled_hw], a.bins)?;
    for (name, text) in [("sensitivity.csv", &summary), ("weights.csv", &weights)] {
        let path = a.out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    write_json(
        &serde_json::json!({ "series": ["i", "i_hw"], "histogram": hist }),
        &a.out.join("histogram.json"),
    )?;
    print!("{summary}");
    Ok(())
}

pub fn landscape(a: LandscapeArgs) -> anyhow::Result<()> {
    check_subsets(&a.data)?;
    let grid = LandscapeConfig {
        resolution: a.resolution,
        extent: a.extent,
    };
    if a.resolution < 3 || a.resolution.is_multiple_of(2) || !(a.extent.is_finite() && a.extent > 0.0) {
        return Err(usage("--resolution must be odd and >= 3, --extent positive"));
    }
    if !(a.wsat.is_finite() && a.wsat >= 0.0) {
        return Err(usage(format!("--wsat must be finite and >= 0, got {}", a.wsat)));
    }
    let stats = defect_stats(&a.maps)?;
    let sol = read_solution(&a.solution)?.solution()?;
    let data = load_train(&a.data, a.seed)?;
    let mut streams = vec![("landscape", 0)];
    if a.nmaps > 0 {
        streams.push(("landscape-maps", 0));
    }
    start_run("landscape", &a, &a.out, &[("train", &data)], &streams)?;

    let tree = SeedTree::new(a.seed);
    let maps = if a.nmaps == 0 {
        Vec::new()
    } else {
        sample_maps(&stats, a.wsat, a.nmaps, a.maps.sign.into(), &tree, "landscape-maps")?
    };
    let l = loss_landscape(&sol.to_params(), &data, &grid, &maps, a.seed)?;
    write_landscape_csv(&l, &a.out.join("landscape.csv"))?;
    let summary = serde_json::json!({
        "min_loss": l.min_loss,
        "argmin": [l.coords[l.argmin.0], l.coords[l.argmin.1]],
        "argmin_grid_distance": l.argmin_distance(),
        "maps": a.nmaps,
    });
    write_json(&summary, &a.out.join("landscape.json"))?;
    print_json(&summary)
}

pub fn variation_sim(a: VariationArgs) -> anyhow::Result<()> {
    check_subsets(&a.data)?;
    let variations = parse_list(&a.variations).map_err(usage)?;
    if variations.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || a.dies_per_level == 0 {
        return Err(usage("variations must be >= 0 and --dies-per-level at least 1"));
    }
    let solutions = load_solutions(&a.solution)?;
    let test = load_test(&a.data)?;
    start_run("variation-sim", &a, &a.out, &[("test", &test)], &[])?;
    let points = variation_sweep(&solutions, &variations, a.dies_per_level, &test, a.seed)?;
    let mut table = String::from("variation,baseline_mean,mean_error,delta\n");
    for p in &points {
        let _ = writeln!(table, "{},{},{},{}", p.variation, p.baseline_mean, p.mean_error, p.delta);
    }
    let path = a.out.join("variation.csv");
    fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    print!("{table}");
    Ok(())
}

pub fn report(a: ReportArgs) -> anyhow::Result<()> {
    let rows = read_metric_rows(&a.metrics)?;
    // Group (die, solution) errors by w_sat, keeping first-seen die order.
    type Group = (Vec<String>, BTreeMap<String, BTreeMap<usize, f64>>, BTreeMap<usize, f64>);
    let mut groups: BTreeMap<Option<u64>, Group> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == "error") {
        let Some(s) = r.solution else { continue };
        let g = groups.entry(r.w_sat.map(f64::to_bits)).or_default();
        if r.die_id == "software" {
            g.2.insert(s, r.value);
        } else {
            if !g.1.contains_key(&r.die_id) {
                g.0.push(r.die_id.clone());
            }
            g.1.entry(r.die_id.clone()).or_default().insert(s, r.value);
        }
    }
    if groups.is_empty() {
        return Err(usage(format!("{} holds no per-solution error rows", a.metrics.display())));
    }
    start_run("report", &a, &a.out, &[], &[])?;
    let mut out = Vec::new();
    for (w, (ids, per_die, baseline)) in groups {
        let errors = ids.iter().map(|id| per_die[id].values().copied().collect()).collect();
        let outliers = ids.iter().filter(|id| a.exclude.contains(id)).cloned().collect();
        let report = MetricsReport::new(ids, errors, baseline.into_values().collect(), outliers)?;
        out.push(aggregates(w.map(f64::from_bits), &report));
    }
    write_json(&out, &a.out.join("report.json"))?;
    print_json(&out)
}
