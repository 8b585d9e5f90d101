//! Emulated inference on dies, error statistics, sensitivity, loss
//! landscapes and sweeps.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossbar::{
    encode_solution, replace_layer2_defects, synthesize_die, CrossbarLayout, DieDefectStats,
    DieMeasurement, EmulationConfig,
};
use crate::data::Dataset;
use crate::device::{ResistanceDist, ScreeningThresholds};
use crate::error::{Error, Result};
use crate::network::{
    classification_error, hidden_delta, row_losses, softmax_rows, Params, TernarySolution,
    EVAL_CHUNK, HIDDEN, INPUTS,
};
use crate::rng::SeedTree;
use crate::training::{
    apply_defect_map, sample_defect_map, train_statistics_aware, DefectMap, DefectStats, SignMode,
    TrainConfig,
};

/// The network a die realizes for `sol`. Layer-2 defects are replaced by
/// mean healthy devices first; `g_norm` comes from the die as measured.
pub fn emulated_params(sol: &TernarySolution, die: &DieMeasurement) -> Result<Params> {
    let layout = CrossbarLayout;
    let config = EmulationConfig::for_die(die)?;
    let die = replace_layer2_defects(die, &layout)?;
    Ok(encode_solution(sol, &die, &layout)?.effective_params(&config))
}

pub fn evaluate_on_die(sol: &TernarySolution, die: &DieMeasurement, data: &Dataset) -> Result<f64> {
    classification_error(&emulated_params(sol, die)?, data)
}

/// Mean, sample standard deviation and the 5/25/50/75/95th percentiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub percentiles: [f64; 5],
}

pub const PERCENTILES: [f64; 5] = [5.0, 25.0, 50.0, 75.0, 95.0];

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Standard error of the mean.
pub fn sem(values: &[f64]) -> f64 {
    sample_std(values) / (values.len() as f64).sqrt()
}

/// Linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Contract("cannot summarize an empty series".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean: mean(values),
        std: sample_std(values),
        percentiles: PERCENTILES.map(|p| percentile(&sorted, p)),
    })
}

/// Outlier rule: yield below `min_yield` or a fully shorted row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierRule {
    pub min_yield: f64,
}

impl Default for OutlierRule {
    fn default() -> Self {
        Self { min_yield: 0.97 }
    }
}

impl OutlierRule {
    pub fn is_outlier(&self, die: &DieMeasurement) -> bool {
        die.yield_fraction() < self.min_yield || die.has_fully_shorted_row()
    }

    pub fn outliers(&self, dies: &[DieMeasurement]) -> Vec<String> {
        dies.iter()
            .filter(|d| self.is_outlier(d))
            .map(|d| d.die_id.clone())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DieSummary {
    pub die_id: String,
    pub summary: Summary,
}

/// Errors of a set of solutions on a set of dies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub die_ids: Vec<String>,
    /// `errors[d][s]`: solution `s` on die `d`.
    pub errors: Vec<Vec<f64>>,
    /// Software error of each solution.
    pub baseline: Vec<f64>,
    pub outliers: Vec<String>,
    pub per_die: Vec<DieSummary>,
    pub overall_mean: f64,
    pub baseline_mean: f64,
    pub delta: f64,
    pub alpha: f64,
    pub inv_alpha: f64,
}

impl MetricsReport {
    /// Aggregates over the dies not listed in `outliers`. `per_die` covers
    /// every die.
    pub fn new(die_ids: Vec<String>, errors: Vec<Vec<f64>>, baseline: Vec<f64>, outliers: Vec<String>) -> Result<Self> {
        if die_ids.len() != errors.len() {
            return Err(Error::Contract("one error row per die".into()));
        }
        if baseline.is_empty() || errors.iter().any(|row| row.len() != baseline.len()) {
            return Err(Error::Contract("one error per (die, solution) and a baseline per solution".into()));
        }
        if errors.iter().flatten().chain(&baseline).any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Contract("errors must lie in [0, 1]".into()));
        }
        let per_die = die_ids
            .iter()
            .zip(&errors)
            .map(|(id, row)| {
                Ok(DieSummary {
                    die_id: id.clone(),
                    summary: summarize(row)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let kept: Vec<f64> = per_die
            .iter()
            .filter(|d| !outliers.contains(&d.die_id))
            .map(|d| d.summary.mean)
            .collect();
        if kept.is_empty() {
            return Err(Error::Contract("every die was excluded as an outlier".into()));
        }
        let overall_mean = mean(&kept);
        let baseline_mean = mean(&baseline);
        let alpha = if overall_mean > 0.0 { sample_std(&kept) / overall_mean } else { 0.0 };
        Ok(Self {
            die_ids,
            errors,
            baseline,
            outliers,
            per_die,
            overall_mean,
            baseline_mean,
            delta: overall_mean - baseline_mean,
            alpha,
            inv_alpha: if alpha > 0.0 { 1.0 / alpha } else { f64::INFINITY },
        })
    }

    /// Per-die means of the non-outlier dies.
    pub fn kept_die_means(&self) -> Vec<f64> {
        self.per_die
            .iter()
            .filter(|d| !self.outliers.contains(&d.die_id))
            .map(|d| d.summary.mean)
            .collect()
    }
}

/// Every solution on every die (dies × solutions jobs, run in parallel).
pub fn evaluate_grid(
    solutions: &[TernarySolution],
    dies: &[DieMeasurement],
    data: &Dataset,
    rule: &OutlierRule,
) -> Result<MetricsReport> {
    let emulated: Vec<Vec<f64>> = dies
        .par_iter()
        .map(|die| {
            solutions
                .iter()
                .map(|s| evaluate_on_die(s, die, data))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = solutions
        .par_iter()
        .map(|s| classification_error(&s.to_params(), data))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::new(
        dies.iter().map(|d| d.die_id.clone()).collect(),
        emulated,
        baseline,
        rule.outliers(dies),
    )
}

/// Sample standard deviation over solutions, per die.
pub fn per_die_solution_std(report: &MetricsReport) -> Result<Vec<f64>> {
    let n = report.baseline.len();
    if n < 2 {
        return Err(Error::TooFewSolutions { needed: 2, got: n });
    }
    Ok(report.errors.iter().map(|row| sample_std(row)).collect())
}

/// Per-weight sensitivities over the layer-1 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityReport {
    pub values: Array2<f64>,
}

impl SensitivityReport {
    pub fn mean(&self) -> f64 {
        self.values.mean().unwrap_or(0.0)
    }
}

/// Sum over the rows of `x` of squared per-sample layer-1 gradients under
/// `params`, with the given layer-1 weights.
fn squared_gradient_sum(params: &Params, w1: &Array2<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Array2<f64> {
    let z = x.dot(w1) + &params.b1;
    let a = z.mapv(f64::tanh);
    let scores = a.dot(&params.w2) + &params.b2;
    let d_scores = softmax_rows(&scores) - y;
    let d_z = hidden_delta(params, &a, &d_scores);
    let x2 = x.mapv(|v| v * v);
    x2.t().dot(&d_z.mapv(|v| v * v))
}

/// [`sensitivity`] over an explicit batch of inputs and one-hot targets,
/// for networks of any shape.
pub fn sensitivity_batch(params: &Params, x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::Contract(format!("batch of {} inputs and {} targets", x.nrows(), y.nrows())));
    }
    Ok(squared_gradient_sum(params, &params.w1, x, y) / x.nrows() as f64)
}

fn sensitivity_with(params: &Params, w1: &Array2<f64>, data: &Dataset) -> Array2<f64> {
    let mut total = Array2::<f64>::zeros(w1.raw_dim());
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = data.images.slice(s![start..end, ..]);
        total += &squared_gradient_sum(params, w1, x, data.one_hot(&idx).view());
    }
    total / data.len() as f64
}

/// Mean over `data` of the squared per-sample loss gradient with respect to
/// each layer-1 weight, at the weights `params`.
pub fn sensitivity(params: &Params, data: &Dataset) -> Result<SensitivityReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(SensitivityReport {
        values: sensitivity_with(params, &params.w1, data),
    })
}

/// Sensitivity averaged over defect maps. A weight overwritten by a map
/// has zero derivative under that map.
pub fn sensitivity_hw(params: &Params, data: &Dataset, maps: &[DefectMap]) -> Result<SensitivityReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if maps.is_empty() {
        return Err(Error::Domain("sensitivity_hw needs at least one defect map".into()));
    }
    let per_map = maps
        .par_iter()
        .map(|map| {
            let w1 = apply_defect_map(&params.w1, map)?;
            let mut v = sensitivity_with(params, &w1, data);
            for e in &map.entries {
                v[[e.row, e.col]] = 0.0;
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    // Running mean: identical per-map values average to themselves exactly.
    let mut values = Array2::<f64>::zeros(params.w1.raw_dim());
    for (k, v) in per_map.iter().enumerate() {
        let k = (k + 1) as f64;
        Zip::from(&mut values).and(v).for_each(|m, &x| *m += (x - *m) / k);
    }
    Ok(SensitivityReport { values })
}

/// `n` independent maps from `tree`'s "sensitivity-maps" stream.
pub fn sample_maps(stats: &DefectStats, w_sat: f64, n: usize, sign: SignMode, tree: &SeedTree, label: &str) -> Result<Vec<DefectMap>> {
    let mut rng = tree.stream(label, 0);
    (0..n).map(|_| sample_defect_map(stats, w_sat, sign, &mut rng)).collect()
}

/// Histogram counts on bin edges shared by all series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<Vec<usize>>,
    /// Values at or below zero, which a log axis cannot show.
    pub nonpositive: Vec<usize>,
}

/// `bins` logarithmically spaced bins spanning the positive values of all
/// series pooled together.
pub fn log_histogram(series: &[&[f64]], bins: usize) -> Result<LogHistogram> {
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    let positive = series.iter().flat_map(|s| s.iter()).copied().filter(|&v| v > 0.0);
    let (lo, hi) = positive.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return Err(Error::Domain("no positive values to bin".into()));
    }
    let (llo, lhi) = (lo.log10(), if hi > lo { hi.log10() } else { lo.log10() + 1.0 });
    let edges: Vec<f64> = (0..=bins)
        .map(|k| 10f64.powf(llo + (lhi - llo) * k as f64 / bins as f64))
        .collect();
    let mut counts = vec![vec![0usize; bins]; series.len()];
    let mut nonpositive = vec![0usize; series.len()];
    for (c, s) in series.iter().enumerate() {
        for &v in s.iter() {
            if v <= 0.0 {
                nonpositive[c] += 1;
                continue;
            }
            let k = (((v.log10() - llo) / (lhi - llo)) * bins as f64).floor() as isize;
            counts[c][k.clamp(0, bins as isize - 1) as usize] += 1;
        }
    }
    Ok(LogHistogram {
        edges,
        counts,
        nonpositive,
    })
}

/// Loss surface around a solution along two random layer-1 directions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossLandscape {
    pub coords: Vec<f64>,
    /// `relative[a][b]`: loss at `(coords[a], coords[b])` minus the grid minimum.
    pub relative: Array2<f64>,
    pub min_loss: f64,
    pub argmin: (usize, usize),
    pub delta: Array2<f64>,
    pub eta: Array2<f64>,
    pub seed: u64,
}

impl LossLandscape {
    /// Grid index of `(0, 0)`.
    pub fn origin(&self) -> (usize, usize) {
        let c = self.coords.len() / 2;
        (c, c)
    }

    /// Chebyshev grid distance from the minimum to the origin.
    pub fn argmin_distance(&self) -> usize {
        let (c, _) = self.origin();
        self.argmin.0.abs_diff(c).max(self.argmin.1.abs_diff(c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub resolution: usize,
    pub extent: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            resolution: 61,
            extent: 30.0,
        }
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R) -> Array2<f64> {
    let d = Array2::from_shape_simple_fn((INPUTS, HIDDEN), || rng.sample::<f64, _>(StandardNormal));
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d / norm
}

/// Loss over the `(α, β)` grid at `W1 + α δ + β η`, averaged over `maps`
/// (an empty slice means the defect-free loss). Maps overwrite the
/// perturbed weights.
pub fn loss_landscape(params: &Params, data: &Dataset, config: &LandscapeConfig, maps: &[DefectMap], seed: u64) -> Result<LossLandscape> {
    if config.resolution < 3 || config.resolution.is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "landscape resolution must be odd and at least 3, got {}",
            config.resolution
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for m in maps {
        m.validate()?;
    }
    let mut rng = SeedTree::new(seed).stream("landscape", 0);
    let delta = unit_direction(&mut rng);
    let eta = unit_direction(&mut rng);
    let r = config.resolution;
    let coords: Vec<f64> = (0..r)
        .map(|k| (2.0 * k as f64 - (r - 1) as f64) * config.extent / (r - 1) as f64)
        .collect();
    let x = &data.images;
    let y = data.one_hot(&(0..data.len()).collect::<Vec<_>>());
    let z0 = x.dot(&params.w1) + &params.b1;
    let xd = x.dot(&delta);
    let xe = x.dot(&eta);
    let empty = [DefectMap::empty()];
    let maps = if maps.is_empty() { &empty[..] } else { maps };

    let points: Vec<(usize, usize)> = (0..r).flat_map(|a| (0..r).map(move |b| (a, b))).collect();
    let losses: Vec<f64> = points
        .par_iter()
        .map(|&(ia, ib)| {
            let (al, be) = (coords[ia], coords[ib]);
            let mut base = z0.clone();
            base.scaled_add(al, &xd);
            base.scaled_add(be, &xe);
            let mut total = 0.0;
            for map in maps {
                let mut z = base.clone();
                for e in &map.entries {
                    let theta = params.w1[[e.row, e.col]] + al * delta[[e.row, e.col]] + be * eta[[e.row, e.col]];
                    z.column_mut(e.col).scaled_add(e.value - theta, &x.column(e.row));
                }
                let scores = z.mapv(f64::tanh).dot(&params.w2) + &params.b2;
                total += row_losses(&scores, y.view()).mean().unwrap_or(0.0);
            }
            total / maps.len() as f64
        })
        .collect();
    let (mut k_min, mut min_loss) = (0, f64::INFINITY);
    for (k, &l) in losses.iter().enumerate() {
        if l < min_loss {
            k_min = k;
            min_loss = l;
        }
    }
    if !min_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: 0,
            step: k_min,
            loss: min_loss,
        });
    }
    let relative = Array2::from_shape_vec((r, r), losses.iter().map(|l| l - min_loss).collect())
        .expect("grid shape");
    Ok(LossLandscape {
        coords,
        relative,
        min_loss,
        argmin: points[k_min],
        delta,
        eta,
        seed,
    })
}

/// Mean software-baseline error and mean emulated error per variation
/// coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationPoint {
    pub variation: f64,
    pub mean_error: f64,
    pub baseline_mean: f64,
    pub delta: f64,
}

/// For each coefficient, synthesizes `n_dies` defect-free dies whose
/// resistances vary by that coefficient and evaluates every solution.
pub fn variation_sweep(
    solutions: &[TernarySolution],
    variations: &[f64],
    n_dies: usize,
    data: &Dataset,
    seed: u64,
) -> Result<Vec<VariationPoint>> {
    if solutions.is_empty() {
        return Err(Error::TooFewSolutions { needed: 1, got: 0 });
    }
    let tree = SeedTree::new(seed);
    let thresholds = ScreeningThresholds::default();
    let clean = DieDefectStats {
        mean_defect_count: 0.0,
        std_defect_count: 0.0,
        shorted_fraction: 0.5,
    };
    variations
        .iter()
        .enumerate()
        .map(|(vi, &c)| {
            let dist = ResistanceDist::with_variation(10e3, 20e3, c);
            dist.validate()?;
            let dies = (0..n_dies)
                .map(|d| {
                    let mut rng = tree.stream("variation-die", (vi * 1_000_000 + d) as u64);
                    synthesize_die(format!("var{c}-{d}"), &clean, &dist, &thresholds, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate_grid(solutions, &dies, data, &OutlierRule { min_yield: 0.0 })?;
            Ok(VariationPoint {
                variation: c,
                mean_error: report.overall_mean,
                baseline_mean: report.baseline_mean,
                delta: report.delta,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub w_sats: Vec<f64>,
    pub n_solutions: usize,
    pub stats: DefectStats,
    pub n_maps: usize,
    pub sign: SignMode,
    pub train: TrainConfig,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub w_sat: f64,
    pub solutions: Vec<TernarySolution>,
    pub report: MetricsReport,
}

/// Seed of solution `index` at sweep point `w_sat`.
pub fn sweep_seed(root: u64, w_sat: f64, index: usize) -> u64 {
    SeedTree::new(root)
        .child(&format!("wsat-{}", w_sat.to_bits()), index as u64)
        .root()
}

/// Trains `n_solutions` statistics-aware solutions per `w_sat` and
/// evaluates them on every die.
pub fn wsat_sweep(
    dies: &[DieMeasurement],
    train_data: &Dataset,
    test_data: &Dataset,
    config: &SweepConfig,
    rule: &OutlierRule,
) -> Result<Vec<SweepPoint>> {
    if dies.is_empty() {
        return Err(Error::Contract("wsat_sweep needs at least one die".into()));
    }
    config.w_sats.iter().map(|&w_sat| {
        let solutions = (0..config.n_solutions)
            .into_par_iter()
            .map(|s| {
                let cfg = TrainConfig {
                    seed: sweep_seed(config.train.seed, w_sat, s),
                    ..config.train
                };
                train_statistics_aware(&cfg, train_data, &config.stats, w_sat, config.n_maps, config.sign)
                    .map(|o| o.solution)
            })
            .collect::<Result<Vec<_>>>()?;
        let report = evaluate_grid(&solutions, dies, test_data, rule)?;
        Ok(SweepPoint { w_sat, solutions, report })
    })
    .collect()
}

/// Mean loss of `params` on `data` with layer-1 weights overwritten by each
/// map in turn.
pub fn ensemble_loss(params: &Params, data: &Dataset, maps: &[DefectMap]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let y = data.one_hot(&(0..data.len()).collect::<Vec<_>>());
    let mut total = 0.0;
    for m in maps {
        let mut p = params.clone();
        p.w1 = apply_defect_map(&params.w1, m)?;
        let scores = (data.images.dot(&p.w1) + &p.b1).mapv(f64::tanh).dot(&p.w2) + &p.b2;
        total += row_losses(&scores, y.view()).mean().unwrap_or(0.0);
    }
    Ok(total / maps.len().max(1) as f64)
}

/// Column-wise mean of a stack of equally shaped matrices, with the
/// standard error of that mean.
pub fn mean_and_sem(stack: &[Array2<f64>]) -> Result<(Array2<f64>, Array2<f64>)> {
    if stack.is_empty() {
        return Err(Error::TooFewSolutions { needed: 1, got: 0 });
    }
    let views: Vec<_> = stack.iter().map(|a| a.view()).collect();
    let s = ndarray::stack(Axis(0), &views).map_err(|e| Error::Contract(e.to_string()))?;
    let m = s.mean_axis(Axis(0)).expect("nonempty");
    let n = stack.len() as f64;
    let sd = if stack.len() > 1 { s.std_axis(Axis(0), 1.0) } else { Array2::zeros(m.raw_dim()) };
    Ok((m, sd / n.sqrt()))
}
