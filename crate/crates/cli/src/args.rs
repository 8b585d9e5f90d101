use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mtjsim::io::Mode;
use mtjsim::training::SignMode;

#[derive(Parser, Debug)]
#[command(name = "mtjsim", version, about = "MTJ crossbar emulation and defect-aware ternary network training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic die files.
    SynthDie(SynthDieArgs),
    /// Screen the devices of a die file.
    Screen(ScreenArgs),
    /// Train one solution.
    Train(TrainArgs),
    /// Evaluate solutions on dies.
    Infer(InferArgs),
    /// Statistics-aware training and evaluation over a range of w_sat.
    SweepWsat(SweepArgs),
    /// Per-weight loss sensitivities with and without defect maps.
    Sensitivity(SensitivityArgs),
    /// Loss surface along two random layer-1 directions.
    Landscape(LandscapeArgs),
    /// Evaluate solutions on defect-free dies of increasing device variation.
    VariationSim(VariationArgs),
    /// Summarize a metrics table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Directory holding the four MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    pub mnist: PathBuf,
    /// Train on a random subset of this many images.
    #[arg(long)]
    pub train_subset: Option<usize>,
    /// Evaluate on the first this many test images.
    #[arg(long)]
    pub test_subset: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Ternarization threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct MapArgs {
    /// Mean number of defective layer-1 weights per map.
    #[arg(long)]
    pub defect_mean: Option<f64>,
    #[arg(long)]
    pub defect_std: Option<f64>,
    #[arg(long, value_enum, default_value = "symmetric")]
    pub sign: SignArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignArg {
    #[default]
    Symmetric,
    PositiveOnly,
}

impl From<SignArg> for SignMode {
    fn from(s: SignArg) -> Self {
        match s {
            SignArg::Symmetric => SignMode::Symmetric,
            SignArg::PositiveOnly => SignMode::PositiveOnly,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthDieArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Mean number of defective devices per die.
    #[arg(long, default_value_t = 158.0)]
    pub defect_mean: f64,
    #[arg(long, default_value_t = 129.0)]
    pub defect_std: f64,
    #[arg(long, default_value_t = 0.5)]
    pub shorted_fraction: f64,
    /// Coefficient of variation of healthy resistances.
    #[arg(long, default_value_t = 0.04)]
    pub variation: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ScreenArgs {
    #[arg(long)]
    pub die: PathBuf,
    /// Also write the report and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_mode)]
    #[serde(serialize_with = "display")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Die to clamp to (hardware-aware mode).
    #[arg(long)]
    pub die: Option<PathBuf>,
    /// Saturation value of defective weights (statistics-aware mode).
    #[arg(long)]
    pub wsat: Option<f64>,
    /// Defect maps per minibatch (statistics-aware mode).
    #[arg(long)]
    pub nmaps: Option<usize>,
    #[command(flatten)]
    pub maps: MapArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DieSelection {
    /// A die file; repeatable.
    #[arg(long)]
    pub die: Vec<PathBuf>,
    /// A directory of die files (`*.json`).
    #[arg(long)]
    pub dies: Option<PathBuf>,
    /// Dies below this yield, or with a fully shorted row, are outliers.
    #[arg(long, default_value_t = 0.97)]
    pub min_yield: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct InferArgs {
    /// A solution file; repeatable.
    #[arg(long, required = true)]
    pub solution: Vec<PathBuf>,
    #[command(flatten)]
    pub dies: DieSelection,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    /// `a..b` (inclusive, step 1), `a..b:step`, or a comma list.
    #[arg(long, default_value = "0,2,5,10,15,20")]
    pub wsat: String,
    /// Solutions per w_sat.
    #[arg(long, default_value_t = 20)]
    pub solutions: usize,
    #[arg(long, default_value_t = 100)]
    pub nmaps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub dies: DieSelection,
    #[command(flatten)]
    pub maps: MapArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SensitivityArgs {
    #[arg(long, required = true)]
    pub solution: Vec<PathBuf>,
    #[arg(long, default_value_t = 20.0)]
    pub wsat: f64,
    #[arg(long, default_value_t = 100)]
    pub nmaps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Histogram bins for the pooled values.
    #[arg(long, default_value_t = 40)]
    pub bins: usize,
    #[command(flatten)]
    pub maps: MapArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LandscapeArgs {
    #[arg(long)]
    pub solution: PathBuf,
    /// Defect maps to average over; 0 gives the defect-free surface.
    #[arg(long, default_value_t = 0)]
    pub nmaps: usize,
    #[arg(long, default_value_t = 20.0)]
    pub wsat: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 61)]
    pub resolution: usize,
    #[arg(long, default_value_t = 30.0)]
    pub extent: f64,
    #[command(flatten)]
    pub maps: MapArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct VariationArgs {
    #[arg(long, required = true)]
    pub solution: Vec<PathBuf>,
    /// Comma list of coefficients of variation.
    #[arg(long, default_value = "0,0.02,0.04,0.06,0.08,0.1")]
    pub variations: String,
    #[arg(long, default_value_t = 5)]
    pub dies_per_level: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// A metrics table written by `infer` or `sweep-wsat`.
    #[arg(long)]
    pub metrics: PathBuf,
    /// Die ids to leave out of the aggregates; repeatable.
    #[arg(long)]
    pub exclude: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: mtjsim::Error| e.to_string())
}

fn display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

/// `a..b`, `a..b:step` or `a,b,c`; ranges include both ends.
pub fn parse_wsat_spec(spec: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number"));
    let values = if let Some((lo, rest)) = spec.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 1.0),
        };
        let lo = num(lo)?;
        if !(step > 0.0) || hi < lo {
            return Err(format!("range `{spec}` needs lo <= hi and a positive step"));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| lo + k as f64 * step).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(format!("w_sat values must be finite and >= 0: `{spec}`"));
    }
    Ok(values)
}

pub fn parse_list(spec: &str) -> Result<Vec<f64>, String> {
    spec.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wsat_specs() {
        assert_eq!(parse_wsat_spec("0..20").unwrap().len(), 21);
        assert_eq!(parse_wsat_spec("0..20:5").unwrap(), vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        assert_eq!(parse_wsat_spec("0,2,5").unwrap(), vec![0.0, 2.0, 5.0]);
        assert_eq!(parse_wsat_spec("3").unwrap(), vec![3.0]);
        assert!(parse_wsat_spec("5..1").is_err());
        assert!(parse_wsat_spec("0..4:0").is_err());
        assert!(parse_wsat_spec("-1").is_err());
        assert!(parse_wsat_spec("a").is_err());
    }
}
