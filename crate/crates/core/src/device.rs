//! Two-state MTJ devices: resistances, TMR, screening, and sampling.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to every sampled resistance, in ohms.
pub const MIN_RESISTANCE: f64 = 100.0;
/// Upper edge of the shorted-device resistance band, in ohms.
pub const SHORT_MAX_RESISTANCE: f64 = 1_000.0;
/// Upper edge of the subpar-device resistance band, in ohms.
pub const SUBPAR_MAX_RESISTANCE: f64 = 12_000.0;

/// Parallel and anti-parallel resistances of one device, in ohms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtjParams {
    pub r_p: f64,
    pub r_ap: f64,
}

impl MtjParams {
    pub fn new(r_p: f64, r_ap: f64) -> Result<Self> {
        if !(r_p > 0.0 && r_ap > 0.0 && r_p.is_finite() && r_ap.is_finite()) {
            return Err(Error::Domain(format!(
                "resistances must be positive and finite, got r_p={r_p}, r_ap={r_ap}"
            )));
        }
        Ok(Self { r_p, r_ap })
    }

    /// Same resistance in both states, as for a shorted pillar.
    pub fn state_independent(r: f64) -> Result<Self> {
        Self::new(r, r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceState {
    P,
    AP,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceClass {
    Healthy,
    Shorted,
    Subpar,
}

impl DeviceClass {
    pub fn is_defect(self) -> bool {
        self != DeviceClass::Healthy
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningThresholds {
    pub min_r_p: f64,
    pub max_r_ap: f64,
    pub min_tmr: f64,
}

impl Default for ScreeningThresholds {
    fn default() -> Self {
        Self {
            min_r_p: 6_000.0,
            max_r_ap: 30_000.0,
            min_tmr: 0.6,
        }
    }
}

impl ScreeningThresholds {
    pub fn validate(&self) -> Result<()> {
        if self.min_r_p > 0.0 && self.max_r_ap > 0.0 && self.min_tmr > 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "screening thresholds must be strictly positive: {self:?}"
            )))
        }
    }
}

/// `(r_ap - r_p) / r_p`.
pub fn tmr_ratio(params: &MtjParams) -> Result<f64> {
    if !(params.r_p > 0.0) {
        return Err(Error::Domain(format!(
            "TMR ratio needs r_p > 0, got {}",
            params.r_p
        )));
    }
    Ok((params.r_ap - params.r_p) / params.r_p)
}

pub fn classify_device(params: &MtjParams, thresholds: &ScreeningThresholds) -> DeviceClass {
    let tmr = (params.r_ap - params.r_p) / params.r_p;
    if params.r_p >= thresholds.min_r_p
        && params.r_ap <= thresholds.max_r_ap
        && tmr >= thresholds.min_tmr
    {
        DeviceClass::Healthy
    } else if params.r_p < SHORT_MAX_RESISTANCE && params.r_ap < SHORT_MAX_RESISTANCE {
        DeviceClass::Shorted
    } else {
        DeviceClass::Subpar
    }
}

/// Read conductance in siemens for the requested state.
pub fn conductance(params: &MtjParams, state: DeviceState) -> f64 {
    match state {
        DeviceState::P => 1.0 / params.r_p,
        DeviceState::AP => 1.0 / params.r_ap,
    }
}

/// Conductance honoring the device class. A short conducts the same in
/// either state (the mean of its two readings); everything else switches.
pub fn class_conductance(params: &MtjParams, class: DeviceClass, state: DeviceState) -> f64 {
    match class {
        DeviceClass::Shorted => 0.5 * (1.0 / params.r_p + 1.0 / params.r_ap),
        DeviceClass::Healthy | DeviceClass::Subpar => conductance(params, state),
    }
}

/// Gaussian resistance distributions for healthy devices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResistanceDist {
    pub mean_p: f64,
    pub std_p: f64,
    pub mean_ap: f64,
    pub std_ap: f64,
}

impl Default for ResistanceDist {
    fn default() -> Self {
        Self::with_variation(10_000.0, 20_000.0, 0.04)
    }
}

impl ResistanceDist {
    /// Both states share one coefficient of variation: `std = coeff * mean`.
    pub fn with_variation(mean_p: f64, mean_ap: f64, coeff: f64) -> Self {
        Self {
            mean_p,
            std_p: coeff * mean_p,
            mean_ap,
            std_ap: coeff * mean_ap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean_p > 0.0 && self.mean_ap > 0.0 && self.std_p >= 0.0 && self.std_ap >= 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "resistance distribution needs positive means and non-negative deviations: {self:?}"
            )))
        }
    }
}

fn normal_draw<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    if std == 0.0 {
        return mean;
    }
    // std > 0 and finite is checked by callers through `validate`.
    Normal::new(mean, std).expect("valid normal").sample(rng)
}

/// Draws `r_p ~ N(mean_p, std_p)` and `r_ap ~ N(mean_ap, std_ap)`, each
/// clamped below at [`MIN_RESISTANCE`].
pub fn sample_device<R: Rng + ?Sized>(dist: &ResistanceDist, rng: &mut R) -> MtjParams {
    let r_p = normal_draw(dist.mean_p, dist.std_p, rng).max(MIN_RESISTANCE);
    let r_ap = normal_draw(dist.mean_ap, dist.std_ap, rng).max(MIN_RESISTANCE);
    MtjParams { r_p, r_ap }
}

/// Like [`sample_device`], redrawing until the device passes screening.
pub fn sample_healthy_device<R: Rng + ?Sized>(
    dist: &ResistanceDist,
    thresholds: &ScreeningThresholds,
    rng: &mut R,
) -> Result<MtjParams> {
    for _ in 0..10_000 {
        let p = sample_device(dist, rng);
        if classify_device(&p, thresholds) == DeviceClass::Healthy {
            return Ok(p);
        }
    }
    Err(Error::Domain(format!(
        "distribution {dist:?} almost never yields devices passing {thresholds:?}"
    )))
}

/// A shorted pillar: one resistance uniform in [100 Ω, 1 kΩ) for both states.
pub fn sample_shorted_device<R: Rng + ?Sized>(rng: &mut R) -> MtjParams {
    let r = rng.gen_range(MIN_RESISTANCE..SHORT_MAX_RESISTANCE);
    MtjParams { r_p: r, r_ap: r }
}

/// A subpar device: two independent uniforms in [1 kΩ, 12 kΩ), sorted so
/// that `r_ap >= r_p`, redrawn if the pair would pass screening.
pub fn sample_subpar_device<R: Rng + ?Sized>(
    thresholds: &ScreeningThresholds,
    rng: &mut R,
) -> MtjParams {
    loop {
        let a = rng.gen_range(SHORT_MAX_RESISTANCE..SUBPAR_MAX_RESISTANCE);
        let b = rng.gen_range(SHORT_MAX_RESISTANCE..SUBPAR_MAX_RESISTANCE);
        let p = MtjParams {
            r_p: a.min(b),
            r_ap: a.max(b),
        };
        if classify_device(&p, thresholds) == DeviceClass::Subpar {
            return p;
        }
    }
}

/// Cycle-to-cycle read variation: each resistance scaled by `1 + eps`,
/// `eps ~ N(0, coeff)`, then clamped below at [`MIN_RESISTANCE`].
pub fn apply_cycle_variation<R: Rng + ?Sized>(
    params: &MtjParams,
    coeff: f64,
    rng: &mut R,
) -> Result<MtjParams> {
    if !(coeff >= 0.0 && coeff.is_finite()) {
        return Err(Error::Domain(format!(
            "cycle variation coefficient must be >= 0, got {coeff}"
        )));
    }
    if coeff == 0.0 {
        return Ok(*params);
    }
    let r_p = (params.r_p * (1.0 + normal_draw(0.0, coeff, rng))).max(MIN_RESISTANCE);
    let r_ap = (params.r_ap * (1.0 + normal_draw(0.0, coeff, rng))).max(MIN_RESISTANCE);
    Ok(MtjParams { r_p, r_ap })
}
