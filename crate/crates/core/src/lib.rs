//! MTJ crossbar emulation and defect-aware ternary network training.
//!
//! * [`device`]: resistance model, screening and device sampling;
//! * [`crossbar`]: dies, weight layout, conductance encoding and VMM;
//! * [`network`]: the 100-90-10 ternary network and its backward pass;
//! * [`training`]: defect-free, hardware-aware and statistics-aware SGD;
//! * [`analysis`]: per-die evaluation, error statistics, sensitivity and
//!   loss landscapes;
//! * [`data`], [`io`], [`rng`]: MNIST ingestion, file formats, seeding.

pub mod analysis;
pub mod crossbar;
pub mod data;
pub mod device;
pub mod error;
pub mod io;
pub mod network;
pub mod rng;
pub mod training;

pub use analysis::{
    evaluate_on_die, loss_landscape, sensitivity, sensitivity_hw, LossLandscape, MetricsReport,
    OutlierRule, SensitivityReport,
};
pub use crossbar::{
    CrossbarLayout, DeviceRecord, DieDefectStats, DieFile, DieMeasurement, EmulationConfig, ScreeningReport,
};
pub use data::{Dataset, Split};
pub use device::{DeviceClass, DeviceState, MtjParams, ResistanceDist, ScreeningThresholds};
pub use error::{Error, Result};
pub use network::{Params, RealSolution, TernarySolution};
pub use rng::SeedTree;
pub use training::{DefectMap, DefectStats, HardwareAwareClamp, Regime, SignMode, TrainConfig};
