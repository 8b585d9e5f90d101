//! Defect-free, hardware-aware and statistics-aware training.
//!
//! All three regimes share one gradient routine, [`ensemble_gradient`]: the
//! loss is averaged over a batch of images and a batch of layer-1 defect
//! maps, and each map's own defect positions receive no gradient from that
//! map. Defect-free training is the single empty map; hardware-aware
//! training is the single map given by a die's clamp.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossbar::{sample_count, CrossbarLayout, DeviceRecord, DieMeasurement, HealthyMeans};
use crate::data::Dataset;
use crate::device::DeviceState;
use crate::error::{Error, Result};
use crate::network::{
    row_losses, softmax_rows, xavier_init, Estimator, Gradients, Params, RealSolution,
    TernarySolution, HIDDEN, INPUTS, OUTPUTS,
};
use crate::rng::SeedTree;

pub const LAYER1_WEIGHTS: usize = INPUTS * HIDDEN;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ternary_threshold: f64,
    pub seed: u64,
    #[serde(default)]
    pub estimator: Estimator,
    /// Train the real weights directly, without ternarization.
    #[serde(default)]
    pub relaxed: bool,
    #[serde(default)]
    pub schedule: LrSchedule,
}

/// Learning rate as a function of training progress.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear decay from the base rate to `final_fraction` of it over the
    /// whole run.
    Linear { final_fraction: f64 },
}

impl LrSchedule {
    /// Rate for update `step` of `total`.
    pub fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Linear { final_fraction } => {
                let progress = if total > 1 { step as f64 / (total - 1) as f64 } else { 0.0 };
                base * (1.0 - (1.0 - final_fraction) * progress)
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 100,
            learning_rate: 0.2,
            ternary_threshold: DEFAULT_TERNARY_THRESHOLD,
            seed: 0,
            estimator: Estimator::Identity,
            relaxed: false,
            schedule: LrSchedule::Linear { final_fraction: 0.0 },
        }
    }
}

/// Default ternarization threshold. Xavier-initialized weights have a
/// standard deviation near 0.1, so a threshold of 0.5 would start every
/// ternary weight at zero, where all weight gradients vanish.
pub const DEFAULT_TERNARY_THRESHOLD: f64 = 0.1;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain("epochs and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.ternary_threshold > 0.0 && self.ternary_threshold.is_finite()) {
            return Err(Error::Domain(format!(
                "ternary threshold must be positive, got {}",
                self.ternary_threshold
            )));
        }
        if let LrSchedule::Linear { final_fraction } = self.schedule {
            if !(0.0..=1.0).contains(&final_fraction) {
                return Err(Error::Domain(format!(
                    "final learning-rate fraction must lie in [0, 1], got {final_fraction}"
                )));
            }
        }
        if let Estimator::Clipped { limit } = self.estimator {
            if !(limit > 0.0) {
                return Err(Error::Domain(format!("clip limit must be positive, got {limit}")));
            }
        }
        Ok(())
    }
}

/// One overwritten layer-1 weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// A set of layer-1 positions forced to fixed values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectMap {
    pub entries: Vec<DefectEntry>,
    pub w_sat: f64,
}

impl DefectMap {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_for((INPUTS, HIDDEN))
    }

    /// Checks the entries against a layer-1 matrix of shape `dim`.
    pub fn validate_for(&self, dim: (usize, usize)) -> Result<()> {
        let (rows, cols) = dim;
        let mut seen = vec![false; rows * cols];
        for e in &self.entries {
            if e.row >= rows || e.col >= cols {
                return Err(Error::Contract(format!(
                    "defect at ({}, {}) lies outside the {rows}x{cols} layer-1 matrix",
                    e.row, e.col
                )));
            }
            let k = e.row * cols + e.col;
            if seen[k] {
                return Err(Error::Contract(format!("duplicate defect at ({}, {})", e.row, e.col)));
            }
            seen[k] = true;
            if !e.value.is_finite() {
                return Err(Error::Contract(format!("non-finite defect value at ({}, {})", e.row, e.col)));
            }
        }
        Ok(())
    }
}

/// Per-weight defect count statistics for training maps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectStats {
    pub mean_count: f64,
    pub std_count: f64,
}

/// Die-level defect statistics (158 ± 129 of 19 800 devices) restricted
/// to the 18 000 layer-1 devices, one weight per defective device.
impl Default for DefectStats {
    fn default() -> Self {
        Self {
            mean_count: 158.0 * 18_000.0 / 19_800.0,
            std_count: 129.0 * 18_000.0 / 19_800.0,
        }
    }
}

impl DefectStats {
    pub const NONE: DefectStats = DefectStats {
        mean_count: 0.0,
        std_count: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if self.mean_count >= 0.0 && self.std_count >= 0.0 && self.mean_count.is_finite() && self.std_count.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid defect statistics: {self:?}")))
        }
    }
}

/// Sign of sampled saturation values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// `+w_sat` or `-w_sat` with equal probability.
    #[default]
    Symmetric,
    PositiveOnly,
}

pub fn sample_defect_map<R: Rng + ?Sized>(
    stats: &DefectStats,
    w_sat: f64,
    sign: SignMode,
    rng: &mut R,
) -> Result<DefectMap> {
    stats.validate()?;
    if !(w_sat >= 0.0 && w_sat.is_finite()) {
        return Err(Error::Domain(format!("w_sat must be >= 0, got {w_sat}")));
    }
    let n = sample_count(stats.mean_count, stats.std_count, LAYER1_WEIGHTS, rng);
    let mut positions = sample(rng, LAYER1_WEIGHTS, n).into_vec();
    positions.sort_unstable();
    let entries = positions
        .into_iter()
        .map(|k| {
            let negative = sign == SignMode::Symmetric && rng.gen_bool(0.5);
            DefectEntry {
                row: k / HIDDEN,
                col: k % HIDDEN,
                value: if negative { -w_sat } else { w_sat },
            }
        })
        .collect();
    Ok(DefectMap { entries, w_sat })
}

/// Copy of `weights` with the mapped positions overwritten.
pub fn apply_defect_map(weights: &Array2<f64>, map: &DefectMap) -> Result<Array2<f64>> {
    map.validate_for(weights.dim())?;
    let mut out = weights.clone();
    for e in &map.entries {
        out[[e.row, e.col]] = e.value;
    }
    Ok(out)
}

/// Weight realized by a pair whose member `defect` is defective and whose
/// partner sits in the AP state at the die's mean healthy conductance.
/// Subpar devices read at their P-state conductance.
pub fn defect_weight_value(
    defect: &DeviceRecord,
    excitatory: bool,
    means: &HealthyMeans,
    g_norm: f64,
) -> Result<f64> {
    if !defect.class.is_defect() {
        return Err(Error::Contract("defect_weight_value needs a defective device".into()));
    }
    let v = (defect.conductance(DeviceState::P) - means.g_ap) / g_norm;
    Ok(if excitatory { v } else { -v })
}

/// Fixed layer-1 weights imposed by one die's defects.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HardwareAwareClamp {
    pub entries: Vec<DefectEntry>,
}

impl HardwareAwareClamp {
    pub fn as_map(&self) -> DefectMap {
        DefectMap {
            entries: self.entries.clone(),
            w_sat: 0.0,
        }
    }
}

/// Clamp for a die. When both devices of a pair are defective the weight is
/// the difference of their two defect conductances.
pub fn hardware_clamp(die: &DieMeasurement, layout: &CrossbarLayout) -> Result<HardwareAwareClamp> {
    let means = die.healthy_means()?;
    let g_norm = means.g_p - means.g_ap;
    let mut entries = Vec::new();
    for j in 0..INPUTS {
        for i in 0..HIDDEN {
            let (ce, ci) = layout.layer1_pair(j, i);
            let e = die.device(ce.row, ce.col);
            let n = die.device(ci.row, ci.col);
            let value = match (e.class.is_defect(), n.class.is_defect()) {
                (false, false) => continue,
                (true, false) => defect_weight_value(e, true, &means, g_norm)?,
                (false, true) => defect_weight_value(n, false, &means, g_norm)?,
                (true, true) => {
                    (e.conductance(DeviceState::P) - n.conductance(DeviceState::P)) / g_norm
                }
            };
            entries.push(DefectEntry { row: j, col: i, value });
        }
    }
    Ok(HardwareAwareClamp { entries })
}

/// Mean loss and gradient over `x.nrows()` images times `maps.len()` defect
/// maps. `params` holds the weights seen by the forward pass (ternary, or
/// real for the relaxed network); each map overwrites layer-1 entries, and
/// the layer-1 gradient at a map's positions gets no contribution from
/// that map.
pub fn ensemble_gradient(
    params: &Params,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    maps: &[DefectMap],
) -> Result<(f64, Gradients)> {
    if maps.is_empty() {
        return Err(Error::Contract("ensemble_gradient needs at least one defect map".into()));
    }
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::Contract(format!(
            "batch of {} inputs and {} targets",
            x.nrows(),
            y.nrows()
        )));
    }
    for m in maps {
        m.validate_for(params.w1.dim())?;
    }
    let n = x.nrows();
    let (hidden, outputs) = params.w2.dim();
    let scale = 1.0 / (n * maps.len()) as f64;
    let z0 = x.dot(&params.w1) + &params.b1;

    struct Partial {
        loss: f64,
        d_z: Array2<f64>,
        d_s: Array2<f64>,
        w2: Array2<f64>,
        corrections: Vec<f64>,
    }

    let one = |map: &DefectMap| -> Partial {
        let mut z = z0.clone();
        for e in &map.entries {
            let delta = e.value - params.w1[[e.row, e.col]];
            if delta != 0.0 {
                z.column_mut(e.col).scaled_add(delta, &x.column(e.row));
            }
        }
        let a = z.mapv(f64::tanh);
        let scores = a.dot(&params.w2) + &params.b2;
        let loss = row_losses(&scores, y).sum() * scale;
        let d_scores = (softmax_rows(&scores) - y) * scale;
        let mut d_z = d_scores.dot(&params.w2.t());
        ndarray::Zip::from(&mut d_z).and(&a).for_each(|d, &a| *d *= 1.0 - a * a);
        let corrections = map
            .entries
            .iter()
            .map(|e| x.column(e.row).dot(&d_z.column(e.col)))
            .collect();
        Partial {
            loss,
            w2: a.t().dot(&d_scores),
            d_z,
            d_s: d_scores,
            corrections,
        }
    };

    let partials: Vec<Partial> = if maps.len() == 1 {
        vec![one(&maps[0])]
    } else {
        maps.par_iter().map(one).collect()
    };

    // Fixed-order reduction, independent of the worker count.
    let mut loss = 0.0;
    let mut d_z = Array2::<f64>::zeros((n, hidden));
    let mut d_s = Array2::<f64>::zeros((n, outputs));
    let mut w2 = Array2::<f64>::zeros((hidden, outputs));
    for p in &partials {
        loss += p.loss;
        d_z += &p.d_z;
        d_s += &p.d_s;
        w2 += &p.w2;
    }
    let mut w1 = x.t().dot(&d_z);
    if maps.len() == 1 {
        for e in &maps[0].entries {
            w1[[e.row, e.col]] = 0.0;
        }
    } else {
        for (map, p) in maps.iter().zip(&partials) {
            for (e, c) in map.entries.iter().zip(&p.corrections) {
                w1[[e.row, e.col]] -= c;
            }
        }
    }
    Ok((
        loss,
        Gradients {
            w1,
            b1: d_z.sum_axis(Axis(0)),
            w2,
            b2: d_s.sum_axis(Axis(0)),
        },
    ))
}

/// What the layer-1 weights are exposed to during training.
#[derive(Clone, Debug, PartialEq)]
pub enum Regime {
    DefectFree,
    HardwareAware(HardwareAwareClamp),
    StatisticsAware {
        stats: DefectStats,
        w_sat: f64,
        n_maps: usize,
        sign: SignMode,
    },
}

impl Regime {
    pub fn validate(&self) -> Result<()> {
        match self {
            Regime::DefectFree => Ok(()),
            Regime::HardwareAware(clamp) => clamp.as_map().validate(),
            Regime::StatisticsAware {
                stats,
                w_sat,
                n_maps,
                ..
            } => {
                stats.validate()?;
                if *n_maps == 0 {
                    return Err(Error::Domain("n_maps must be at least 1".into()));
                }
                if !(*w_sat >= 0.0 && w_sat.is_finite()) {
                    return Err(Error::Domain(format!("w_sat must be >= 0, got {w_sat}")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub solution: TernarySolution,
    pub real: RealSolution,
    pub clamp: Option<HardwareAwareClamp>,
    pub epoch_losses: Vec<f64>,
}

/// Initial real weights: Xavier layer weights, zero biases.
pub fn initial_params(tree: &SeedTree) -> Result<RealSolution> {
    let mut rng = tree.stream("init", 0);
    Ok(Params {
        w1: xavier_init(INPUTS, HIDDEN, &mut rng)?,
        b1: Array1::zeros(HIDDEN),
        w2: xavier_init(HIDDEN, OUTPUTS, &mut rng)?,
        b2: Array1::zeros(OUTPUTS),
    })
}

fn forward_view(real: &RealSolution, config: &TrainConfig) -> Params {
    if config.relaxed {
        real.clone()
    } else {
        TernarySolution::from_real(real, config.ternary_threshold).to_params()
    }
}

/// Minibatch SGD with a fresh shuffle every epoch.
pub fn train(config: &TrainConfig, data: &Dataset, regime: &Regime) -> Result<TrainOutcome> {
    config.validate()?;
    regime.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let tree = SeedTree::new(config.seed);
    let mut real = initial_params(&tree)?;
    let mut shuffle_rng = tree.stream("shuffle", 0);
    let mut map_rng = tree.stream("defect-maps", 0);
    let fixed_maps = match regime {
        Regime::DefectFree => vec![DefectMap::empty()],
        Regime::HardwareAware(clamp) => vec![clamp.as_map()],
        Regime::StatisticsAware { .. } => Vec::new(),
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut steps = 0usize;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.rows(idx);
            let y = data.one_hot(idx);
            let sampled;
            let maps: &[DefectMap] = match regime {
                Regime::StatisticsAware {
                    stats,
                    w_sat,
                    n_maps,
                    sign,
                } => {
                    sampled = (0..*n_maps)
                        .map(|_| sample_defect_map(stats, *w_sat, *sign, &mut map_rng))
                        .collect::<Result<Vec<_>>>()?;
                    &sampled
                }
                _ => &fixed_maps,
            };
            let view = forward_view(&real, config);
            let (loss, mut grads) = ensemble_gradient(&view, x.view(), y.view(), maps)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step, loss });
            }
            if !config.relaxed {
                config.estimator.apply(&real.w1, &mut grads.w1);
                config.estimator.apply(&real.w2, &mut grads.w2);
            }
            let lr = config
                .schedule
                .rate(config.learning_rate, epoch * steps_per_epoch + step, total_steps);
            crate::network::sgd_step(&mut real, &grads, lr);
            total += loss;
            steps += 1;
        }
        epoch_losses.push(total / steps as f64);
    }
    if !real.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: config.epochs,
            step: 0,
            loss: f64::NAN,
        });
    }
    Ok(TrainOutcome {
        solution: TernarySolution::from_real(&real, config.ternary_threshold),
        real,
        clamp: match regime {
            Regime::HardwareAware(c) => Some(c.clone()),
            _ => None,
        },
        epoch_losses,
    })
}

pub fn train_defect_free(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    train(config, data, &Regime::DefectFree)
}

/// Layer-2 defects are replaced before the clamp is derived.
pub fn train_hardware_aware(config: &TrainConfig, data: &Dataset, die: &DieMeasurement) -> Result<TrainOutcome> {
    let layout = CrossbarLayout;
    let die = crate::crossbar::replace_layer2_defects(die, &layout)?;
    let clamp = hardware_clamp(&die, &layout)?;
    train(config, data, &Regime::HardwareAware(clamp))
}

pub fn train_statistics_aware(
    config: &TrainConfig,
    data: &Dataset,
    stats: &DefectStats,
    w_sat: f64,
    n_maps: usize,
    sign: SignMode,
) -> Result<TrainOutcome> {
    train(
        config,
        data,
        &Regime::StatisticsAware {
            stats: *stats,
            w_sat,
            n_maps,
            sign,
        },
    )
}
