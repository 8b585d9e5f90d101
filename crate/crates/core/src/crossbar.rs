//! Dies as 100 × 200 device grids, the weight-to-device layout, conductance
//! encoding of ternary solutions, and linear VMM emulation.
//!
//! Layout on the grid (rows × columns):
//!
//! * layer 1 (`100 × 90` weights): weight `(j, i)` uses row `j`, excitatory
//!   column `2i`, inhibitory column `2i + 1` (columns 0..180);
//! * layer 2 (`90 × 10` weights): weight `(j, k)` uses row `j`, excitatory
//!   column `180 + 2k`, inhibitory column `181 + 2k`.
//!
//! That addresses 19 800 of the 20 000 devices; rows 90..100 of columns
//! 180..200 are unused. The grid's four 50-column subarrays are not modeled
//! separately.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::device::{
    class_conductance, classify_device, sample_healthy_device, sample_shorted_device,
    sample_subpar_device, DeviceClass, DeviceState, MtjParams, ResistanceDist,
    ScreeningThresholds,
};
use crate::error::{Error, Result};
use crate::network::{Params, TernarySolution, HIDDEN, INPUTS, OUTPUTS};

pub const DIE_ROWS: usize = 100;
pub const DIE_COLS: usize = 200;
pub const DIE_DEVICES: usize = DIE_ROWS * DIE_COLS;
pub const LAYER2_COL_OFFSET: usize = 2 * HIDDEN;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub params: MtjParams,
    pub class: DeviceClass,
}

impl DeviceRecord {
    pub fn classified(params: MtjParams, thresholds: &ScreeningThresholds) -> Self {
        Self {
            params,
            class: classify_device(&params, thresholds),
        }
    }

    pub fn conductance(&self, state: DeviceState) -> f64 {
        class_conductance(&self.params, self.class, state)
    }
}

/// Mean conductances of the healthy devices on a die, in siemens.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HealthyMeans {
    pub g_p: f64,
    pub g_ap: f64,
    pub count: usize,
}

/// A measured or synthetic die. Devices are stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DieMeasurement {
    pub die_id: String,
    devices: Vec<DeviceRecord>,
}

impl DieMeasurement {
    pub fn new(die_id: impl Into<String>, devices: Vec<DeviceRecord>) -> Result<Self> {
        if devices.len() != DIE_DEVICES {
            return Err(Error::Contract(format!(
                "a die holds {DIE_DEVICES} devices, got {}",
                devices.len()
            )));
        }
        Ok(Self {
            die_id: die_id.into(),
            devices,
        })
    }

    /// Every device set to the same parameters.
    pub fn uniform(die_id: impl Into<String>, params: MtjParams, thresholds: &ScreeningThresholds) -> Self {
        let rec = DeviceRecord::classified(params, thresholds);
        Self {
            die_id: die_id.into(),
            devices: vec![rec; DIE_DEVICES],
        }
    }

    pub fn device(&self, row: usize, col: usize) -> &DeviceRecord {
        &self.devices[row * DIE_COLS + col]
    }

    pub fn set_device(&mut self, row: usize, col: usize, rec: DeviceRecord) {
        self.devices[row * DIE_COLS + col] = rec;
    }

    pub fn devices(&self) -> &[DeviceRecord] {
        &self.devices
    }

    /// `(row, col, record)` for every defective device.
    pub fn defects(&self) -> impl Iterator<Item = (usize, usize, &DeviceRecord)> {
        self.devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class.is_defect())
            .map(|(k, d)| (k / DIE_COLS, k % DIE_COLS, d))
    }

    pub fn healthy_count(&self) -> usize {
        self.devices.iter().filter(|d| !d.class.is_defect()).count()
    }

    pub fn yield_fraction(&self) -> f64 {
        self.healthy_count() as f64 / DIE_DEVICES as f64
    }

    /// Running means, so a die of identical devices reproduces their
    /// conductance bit for bit.
    pub fn healthy_means(&self) -> Result<HealthyMeans> {
        let mut g_p = 0.0;
        let mut g_ap = 0.0;
        let mut count = 0usize;
        for d in self.devices.iter().filter(|d| !d.class.is_defect()) {
            count += 1;
            let k = count as f64;
            g_p += (1.0 / d.params.r_p - g_p) / k;
            g_ap += (1.0 / d.params.r_ap - g_ap) / k;
        }
        if count == 0 {
            return Err(Error::DegenerateDie {
                die_id: self.die_id.clone(),
            });
        }
        Ok(HealthyMeans { g_p, g_ap, count })
    }

    /// True when some row has every device shorted.
    pub fn has_fully_shorted_row(&self) -> bool {
        self.devices
            .chunks_exact(DIE_COLS)
            .any(|row| row.iter().all(|d| d.class == DeviceClass::Shorted))
    }
}

/// Which network layer a grid cell serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Layer1,
    Layer2,
}

/// Grid position of one device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

/// Weight-to-device mapping; see the module docs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CrossbarLayout;

impl CrossbarLayout {
    /// (excitatory, inhibitory) cells of layer-1 weight `(j, i)`.
    pub fn layer1_pair(&self, j: usize, i: usize) -> (Cell, Cell) {
        debug_assert!(j < INPUTS && i < HIDDEN);
        (Cell { row: j, col: 2 * i }, Cell { row: j, col: 2 * i + 1 })
    }

    /// (excitatory, inhibitory) cells of layer-2 weight `(j, k)`.
    pub fn layer2_pair(&self, j: usize, k: usize) -> (Cell, Cell) {
        debug_assert!(j < HIDDEN && k < OUTPUTS);
        let col = LAYER2_COL_OFFSET + 2 * k;
        (Cell { row: j, col }, Cell { row: j, col: col + 1 })
    }

    pub fn region(&self, row: usize, col: usize) -> Option<Region> {
        if row < INPUTS && col < LAYER2_COL_OFFSET {
            Some(Region::Layer1)
        } else if row < HIDDEN && (LAYER2_COL_OFFSET..DIE_COLS).contains(&col) {
            Some(Region::Layer2)
        } else {
            None
        }
    }

    /// For a layer-1 cell: the weight it serves and whether it is the
    /// excitatory member.
    pub fn layer1_weight(&self, cell: Cell) -> Option<(usize, usize, bool)> {
        match self.region(cell.row, cell.col) {
            Some(Region::Layer1) => Some((cell.row, cell.col / 2, cell.col.is_multiple_of(2))),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConductancePair {
    pub g_e: f64,
    pub g_i: f64,
}

/// Excitatory and inhibitory conductance grids of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedLayer {
    pub g_e: Array2<f64>,
    pub g_i: Array2<f64>,
}

impl EncodedLayer {
    pub fn pair(&self, j: usize, i: usize) -> ConductancePair {
        ConductancePair {
            g_e: self.g_e[[j, i]],
            g_i: self.g_i[[j, i]],
        }
    }

    /// Dimensionless weights `(g_e - g_i) / g_norm`.
    pub fn effective_weights(&self, g_norm: f64) -> Array2<f64> {
        (&self.g_e - &self.g_i) / g_norm
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSolution {
    pub layer1: EncodedLayer,
    pub layer2: EncodedLayer,
    pub b1: ndarray::Array1<f64>,
    pub b2: ndarray::Array1<f64>,
}

impl EncodedSolution {
    /// The network the crossbar realizes; biases stay digital.
    pub fn effective_params(&self, config: &EmulationConfig) -> Params {
        Params {
            w1: self.layer1.effective_weights(config.g_norm),
            b1: self.b1.clone(),
            w2: self.layer2.effective_weights(config.g_norm),
            b2: self.b2.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmulationConfig {
    /// Read voltage in volts. Cancels out of the dimensionless outputs.
    pub v_read: f64,
    /// Normalizing conductance in siemens.
    pub g_norm: f64,
}

impl EmulationConfig {
    pub const DEFAULT_V_READ: f64 = 0.1;

    /// `g_norm` from the die's healthy means.
    pub fn for_die(die: &DieMeasurement) -> Result<Self> {
        Ok(Self {
            v_read: Self::DEFAULT_V_READ,
            g_norm: compute_gnorm(die)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_read > 0.0 && self.g_norm > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "v_read and g_norm must be positive: {self:?}"
            )))
        }
    }
}

/// Requested device states for a ternary weight: +1 → (P, AP),
/// 0 → (AP, AP), −1 → (AP, P).
pub fn weight_states(w: i8) -> (DeviceState, DeviceState) {
    match w {
        1 => (DeviceState::P, DeviceState::AP),
        -1 => (DeviceState::AP, DeviceState::P),
        _ => (DeviceState::AP, DeviceState::AP),
    }
}

fn encode_layer(
    weights: &Array2<i8>,
    die: &DieMeasurement,
    pair_of: impl Fn(usize, usize) -> (Cell, Cell),
) -> EncodedLayer {
    let (r, c) = weights.dim();
    let mut g_e = Array2::zeros((r, c));
    let mut g_i = Array2::zeros((r, c));
    for ((j, i), &w) in weights.indexed_iter() {
        let (se, si) = weight_states(w);
        let (ce, ci) = pair_of(j, i);
        g_e[[j, i]] = die.device(ce.row, ce.col).conductance(se);
        g_i[[j, i]] = die.device(ci.row, ci.col).conductance(si);
    }
    EncodedLayer { g_e, g_i }
}

/// Programs a ternary solution onto a die. Defective devices contribute
/// their own conductance: shorts ignore the requested state, subpar
/// devices switch between their (out-of-spec) resistances.
pub fn encode_solution(
    sol: &TernarySolution,
    die: &DieMeasurement,
    layout: &CrossbarLayout,
) -> Result<EncodedSolution> {
    sol.validate()?;
    Ok(EncodedSolution {
        layer1: encode_layer(&sol.w1, die, |j, i| layout.layer1_pair(j, i)),
        layer2: encode_layer(&sol.w2, die, |j, k| layout.layer2_pair(j, k)),
        b1: sol.b1.clone(),
        b2: sol.b2.clone(),
    })
}

/// `y_k = Σ_j (g_e[j,k] − g_i[j,k]) · x_j / g_norm` for each row of `inputs`.
/// Column currents are `V_read · Σ_j (g_e − g_i) x_j`; dividing by
/// `V_read · g_norm` leaves the expression above.
pub fn vmm(inputs: ArrayView2<f64>, layer: &EncodedLayer, config: &EmulationConfig) -> Result<Array2<f64>> {
    if inputs.ncols() != layer.g_e.nrows() {
        return Err(Error::Contract(format!(
            "input width {} does not match {} crossbar rows",
            inputs.ncols(),
            layer.g_e.nrows()
        )));
    }
    Ok(inputs.dot(&layer.effective_weights(config.g_norm)))
}

/// Mean healthy `G_P − G_AP`.
pub fn compute_gnorm(die: &DieMeasurement) -> Result<f64> {
    let m = die.healthy_means()?;
    Ok(m.g_p - m.g_ap)
}

fn mean_device(die: &DieMeasurement) -> Result<DeviceRecord> {
    let m = die.healthy_means()?;
    Ok(DeviceRecord {
        params: MtjParams {
            r_p: 1.0 / m.g_p,
            r_ap: 1.0 / m.g_ap,
        },
        class: DeviceClass::Healthy,
    })
}

/// Every defective device replaced by a healthy device at the die's mean
/// healthy conductances.
pub fn idealize_defects(die: &DieMeasurement) -> Result<DieMeasurement> {
    let ideal = mean_device(die)?;
    let mut out = die.clone();
    for d in out.devices.iter_mut().filter(|d| d.class.is_defect()) {
        *d = ideal;
    }
    Ok(out)
}

/// Defects inside the layer-2 region replaced by mean healthy devices;
/// everything else untouched.
pub fn replace_layer2_defects(die: &DieMeasurement, layout: &CrossbarLayout) -> Result<DieMeasurement> {
    let mut out = die.clone();
    let has_l2_defect = die
        .defects()
        .any(|(r, c, _)| layout.region(r, c) == Some(Region::Layer2));
    if !has_l2_defect {
        return Ok(out);
    }
    let ideal = mean_device(die)?;
    for (k, d) in out.devices.iter_mut().enumerate() {
        if d.class.is_defect() && layout.region(k / DIE_COLS, k % DIE_COLS) == Some(Region::Layer2) {
            *d = ideal;
        }
    }
    Ok(out)
}

/// Die-level defect statistics for synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DieDefectStats {
    pub mean_defect_count: f64,
    pub std_defect_count: f64,
    /// Probability that a defect is a short rather than a subpar device.
    pub shorted_fraction: f64,
}

impl Default for DieDefectStats {
    fn default() -> Self {
        Self {
            mean_defect_count: 158.0,
            std_defect_count: 129.0,
            shorted_fraction: 0.5,
        }
    }
}

impl DieDefectStats {
    pub fn validate(&self) -> Result<()> {
        if self.mean_defect_count >= 0.0
            && self.std_defect_count >= 0.0
            && (0.0..=1.0).contains(&self.shorted_fraction)
        {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid die defect statistics: {self:?}")))
        }
    }
}

/// `round(N(mean, std))` clamped to `[0, max]`.
pub fn sample_count<R: Rng + ?Sized>(mean: f64, std: f64, max: usize, rng: &mut R) -> usize {
    let draw = if std > 0.0 {
        Normal::new(mean, std).expect("valid normal").sample(rng)
    } else {
        mean
    };
    draw.round().clamp(0.0, max as f64) as usize
}

/// A synthetic die: a normally distributed number of defects at uniformly
/// random distinct positions, healthy devices everywhere else.
pub fn synthesize_die<R: Rng + ?Sized>(
    die_id: impl Into<String>,
    stats: &DieDefectStats,
    dist: &ResistanceDist,
    thresholds: &ScreeningThresholds,
    rng: &mut R,
) -> Result<DieMeasurement> {
    stats.validate()?;
    dist.validate()?;
    let n = sample_count(stats.mean_defect_count, stats.std_defect_count, DIE_DEVICES, rng);
    let mut defect_class = vec![None; DIE_DEVICES];
    for pos in sample(rng, DIE_DEVICES, n).into_iter() {
        defect_class[pos] = Some(if rng.gen_bool(stats.shorted_fraction) {
            DeviceClass::Shorted
        } else {
            DeviceClass::Subpar
        });
    }
    let mut devices = Vec::with_capacity(DIE_DEVICES);
    for class in defect_class {
        let params = match class {
            None => sample_healthy_device(dist, thresholds, rng)?,
            Some(DeviceClass::Shorted) => sample_shorted_device(rng),
            Some(_) => sample_subpar_device(thresholds, rng),
        };
        devices.push(DeviceRecord::classified(params, thresholds));
    }
    DieMeasurement::new(die_id, devices)
}

/// On-disk die description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DieFile {
    pub die_id: String,
    pub rows: usize,
    pub cols: usize,
    pub devices: Vec<DeviceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceEntry {
    pub row: usize,
    pub col: usize,
    pub r_p_ohms: f64,
    pub r_ap_ohms: f64,
    pub class: DeviceClass,
}

impl DieFile {
    pub fn from_die(die: &DieMeasurement) -> Self {
        Self {
            die_id: die.die_id.clone(),
            rows: DIE_ROWS,
            cols: DIE_COLS,
            devices: die
                .devices
                .iter()
                .enumerate()
                .map(|(k, d)| DeviceEntry {
                    row: k / DIE_COLS,
                    col: k % DIE_COLS,
                    r_p_ohms: d.params.r_p,
                    r_ap_ohms: d.params.r_ap,
                    class: d.class,
                })
                .collect(),
        }
    }

    pub fn into_die(self) -> Result<DieMeasurement> {
        if (self.rows, self.cols) != (DIE_ROWS, DIE_COLS) {
            return Err(Error::Format(format!(
                "die `{}` is {}x{}, expected {DIE_ROWS}x{DIE_COLS}",
                self.die_id, self.rows, self.cols
            )));
        }
        let mut slots: Vec<Option<DeviceRecord>> = vec![None; DIE_DEVICES];
        for e in self.devices {
            if e.row >= DIE_ROWS || e.col >= DIE_COLS {
                return Err(Error::Format(format!(
                    "device at ({}, {}) lies outside the grid",
                    e.row, e.col
                )));
            }
            let params = MtjParams::new(e.r_p_ohms, e.r_ap_ohms)?;
            let slot = &mut slots[e.row * DIE_COLS + e.col];
            if slot.is_some() {
                return Err(Error::Format(format!("duplicate device at ({}, {})", e.row, e.col)));
            }
            *slot = Some(DeviceRecord {
                params,
                class: e.class,
            });
        }
        let devices = slots
            .into_iter()
            .enumerate()
            .map(|(k, d)| {
                d.ok_or_else(|| {
                    Error::Format(format!("missing device at ({}, {})", k / DIE_COLS, k % DIE_COLS))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DieMeasurement::new(self.die_id, devices)
    }
}

/// Screening outcome for the devices listed in a die file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub die_id: String,
    pub devices: usize,
    pub healthy: usize,
    pub shorted: usize,
    pub subpar: usize,
    pub yield_fraction: f64,
    /// Devices whose recorded class disagrees with the thresholds.
    pub reclassified: usize,
    pub defects: Vec<ScreenedDefect>,
    /// Mean healthy conductances and their difference, in siemens.
    pub mean_g_p: Option<f64>,
    pub mean_g_ap: Option<f64>,
    pub g_norm: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenedDefect {
    pub row: usize,
    pub col: usize,
    pub class: DeviceClass,
}

/// Classifies every listed device. Works on partial grids; positions are
/// only checked against the declared size.
pub fn screen_devices(file: &DieFile, thresholds: &ScreeningThresholds) -> Result<ScreeningReport> {
    thresholds.validate()?;
    if file.devices.is_empty() {
        return Err(Error::Format(format!("die `{}` lists no devices", file.die_id)));
    }
    let mut healthy = 0usize;
    let (mut shorted, mut subpar, mut reclassified) = (0usize, 0usize, 0usize);
    let (mut g_p, mut g_ap) = (0.0, 0.0);
    let mut defects = Vec::new();
    for e in &file.devices {
        if e.row >= file.rows || e.col >= file.cols {
            return Err(Error::Format(format!(
                "device at ({}, {}) lies outside the {}x{} grid",
                e.row, e.col, file.rows, file.cols
            )));
        }
        let params = MtjParams::new(e.r_p_ohms, e.r_ap_ohms)?;
        let class = classify_device(&params, thresholds);
        if class != e.class {
            reclassified += 1;
        }
        match class {
            DeviceClass::Healthy => {
                healthy += 1;
                let k = healthy as f64;
                g_p += (1.0 / params.r_p - g_p) / k;
                g_ap += (1.0 / params.r_ap - g_ap) / k;
            }
            DeviceClass::Shorted => shorted += 1,
            DeviceClass::Subpar => subpar += 1,
        }
        if class.is_defect() {
            defects.push(ScreenedDefect { row: e.row, col: e.col, class });
        }
    }
    defects.sort_by_key(|d| (d.row, d.col));
    let means = (healthy > 0).then_some((g_p, g_ap));
    Ok(ScreeningReport {
        die_id: file.die_id.clone(),
        devices: file.devices.len(),
        healthy,
        shorted,
        subpar,
        yield_fraction: healthy as f64 / file.devices.len() as f64,
        reclassified,
        defects,
        mean_g_p: means.map(|m| m.0),
        mean_g_ap: means.map(|m| m.1),
        g_norm: means.map(|m| m.0 - m.1),
    })
}

pub fn read_die_file(path: &Path) -> Result<DieFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_die(die: &DieMeasurement, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&DieFile::from_die(die))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_die(path: &Path) -> Result<DieMeasurement> {
    read_die_file(path)?.into_die()
}
