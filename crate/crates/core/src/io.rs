//! Solution files, run manifests, experiment configuration and report
//! tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::analysis::{LossLandscape, MetricsReport, OutlierRule};
use crate::crossbar::DieDefectStats;
use crate::error::{Error, Result};
use crate::network::{TernarySolution, HIDDEN, INPUTS, OUTPUTS};
use crate::training::{DefectStats, HardwareAwareClamp, SignMode, TrainConfig};

pub const SOLUTION_FORMAT: &str = "mtjsim-solution/1";
pub const MANIFEST_FORMAT: &str = "mtjsim-manifest/1";
pub const PREPROCESSING: &str = "crop rows/cols 4..24, 2x2 mean pool, row-major";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    DefectFree,
    HardwareAware,
    StatisticsAware,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "defect-free" => Ok(Mode::DefectFree),
            "hardware-aware" => Ok(Mode::HardwareAware),
            "statistics-aware" => Ok(Mode::StatisticsAware),
            other => Err(Error::Domain(format!(
                "unknown mode `{other}` (expected defect-free, hardware-aware or statistics-aware)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::DefectFree => "defect-free",
            Mode::HardwareAware => "hardware-aware",
            Mode::StatisticsAware => "statistics-aware",
        })
    }
}

/// Everything needed to rerun one training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionMetadata {
    pub mode: Mode,
    pub seed: u64,
    pub config: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_sat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_maps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<DefectStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<SignMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub die_id: Option<String>,
    pub dataset_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format: String,
    pub metadata: SolutionMetadata,
    pub w1: Vec<Vec<i8>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<i8>>,
    pub b2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<HardwareAwareClamp>,
}

fn rows_of(a: &Array2<i8>) -> Vec<Vec<i8>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn matrix(rows: &[Vec<i8>], shape: (usize, usize), name: &str) -> Result<Array2<i8>> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Format(format!("{name} must be {}x{}", shape.0, shape.1)));
    }
    let flat: Vec<i8> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec(shape, flat).expect("checked shape"))
}

impl SolutionFile {
    pub fn new(sol: &TernarySolution, metadata: SolutionMetadata, clamp: Option<HardwareAwareClamp>) -> Self {
        Self {
            format: SOLUTION_FORMAT.into(),
            metadata,
            w1: rows_of(&sol.w1),
            b1: sol.b1.to_vec(),
            w2: rows_of(&sol.w2),
            b2: sol.b2.to_vec(),
            clamp,
        }
    }

    pub fn solution(&self) -> Result<TernarySolution> {
        if self.format != SOLUTION_FORMAT {
            return Err(Error::Format(format!("unsupported solution format `{}`", self.format)));
        }
        let sol = TernarySolution {
            w1: matrix(&self.w1, (INPUTS, HIDDEN), "w1")?,
            b1: Array1::from(self.b1.clone()),
            w2: matrix(&self.w2, (HIDDEN, OUTPUTS), "w2")?,
            b2: Array1::from(self.b2.clone()),
        };
        sol.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(sol)
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_solution(file: &SolutionFile, path: &Path) -> Result<()> {
    write_json(file, path)
}

pub fn read_solution(path: &Path) -> Result<SolutionFile> {
    let file: SolutionFile = read_json(path)?;
    file.solution()?;
    Ok(file)
}

/// Where the dies of an experiment come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DieSource {
    Files(Vec<PathBuf>),
    Synthetic {
        count: usize,
        stats: DieDefectStats,
        variation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub train: TrainConfig,
    #[serde(default)]
    pub stats: Option<DefectStats>,
    #[serde(default)]
    pub w_sat: Option<f64>,
    #[serde(default)]
    pub n_maps: Option<usize>,
    #[serde(default)]
    pub sign: SignMode,
    #[serde(default)]
    pub dies: Option<DieSource>,
    #[serde(default)]
    pub outliers: OutlierRule,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Mode-specific requirements and value ranges.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.seed != self.seed {
            return Err(Error::Domain("train.seed must equal the experiment seed".into()));
        }
        match self.mode {
            Mode::DefectFree => {}
            Mode::HardwareAware => match &self.dies {
                Some(DieSource::Files(f)) if !f.is_empty() => {}
                Some(DieSource::Synthetic { count, .. }) if *count > 0 => {}
                _ => {
                    return Err(Error::Domain("hardware-aware mode needs at least one die".into()));
                }
            },
            Mode::StatisticsAware => {
                let stats = self
                    .stats
                    .ok_or_else(|| Error::Domain("statistics-aware mode needs defect statistics".into()))?;
                stats.validate()?;
                let w = self
                    .w_sat
                    .ok_or_else(|| Error::Domain("statistics-aware mode needs w_sat".into()))?;
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::Domain(format!("w_sat must be >= 0, got {w}")));
                }
                match self.n_maps {
                    Some(n) if n >= 1 => {}
                    _ => return Err(Error::Domain("statistics-aware mode needs n_maps >= 1".into())),
                }
            }
        }
        if let Some(DieSource::Synthetic { stats, variation, .. }) = &self.dies {
            stats.validate()?;
            if !(*variation >= 0.0 && variation.is_finite()) {
                return Err(Error::Domain(format!("variation must be >= 0, got {variation}")));
            }
        }
        if !(0.0..=1.0).contains(&self.outliers.min_yield) {
            return Err(Error::Domain("outlier yield threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Provenance record written before any result of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub dataset_hashes: BTreeMap<String, String>,
    pub preprocessing: String,
    /// Stream id of every (label, index) the run draws from.
    pub stage_seeds: BTreeMap<String, u64>,
    pub workers: usize,
    pub started_unix_secs: u64,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, config: serde_json::Value) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args,
            config,
            dataset_hashes: BTreeMap::new(),
            preprocessing: PREPROCESSING.into(),
            stage_seeds: BTreeMap::new(),
            workers: rayon::current_num_threads(),
            started_unix_secs: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    /// Writes the manifest; refuses to replace an existing one.
    pub fn write_new(&self, path: &Path) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// One row of a long-format metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub die_id: String,
    pub solution: Option<usize>,
    pub w_sat: Option<f64>,
    pub metric: String,
    pub value: f64,
}

/// Per-(die, solution) errors, per-die summaries and the aggregates.
pub fn metric_rows(report: &MetricsReport, w_sat: Option<f64>) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for (d, id) in report.die_ids.iter().enumerate() {
        for (s, &e) in report.errors[d].iter().enumerate() {
            rows.push(MetricRow {
                die_id: id.clone(),
                solution: Some(s),
                w_sat,
                metric: "error".into(),
                value: e,
            });
        }
        let sum = &report.per_die[d].summary;
        let mut push = |metric: String, value: f64| {
            rows.push(MetricRow {
                die_id: id.clone(),
                solution: None,
                w_sat,
                metric,
                value,
            })
        };
        push("mean".into(), sum.mean);
        push("std".into(), sum.std);
        for (p, v) in crate::analysis::PERCENTILES.iter().zip(sum.percentiles) {
            push(format!("p{p}"), v);
        }
    }
    for (s, &e) in report.baseline.iter().enumerate() {
        rows.push(MetricRow {
            die_id: "software".into(),
            solution: Some(s),
            w_sat,
            metric: "error".into(),
            value: e,
        });
    }
    for (metric, value) in [
        ("overall_mean", report.overall_mean),
        ("baseline_mean", report.baseline_mean),
        ("delta", report.delta),
        ("alpha", report.alpha),
        ("inv_alpha", report.inv_alpha),
    ] {
        rows.push(MetricRow {
            die_id: "all".into(),
            solution: None,
            w_sat,
            metric: metric.into(),
            value,
        });
    }
    rows
}

pub fn write_metric_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Dense grid: a comment line with the direction seed, a header of β
/// coordinates, then one row per α.
pub fn write_landscape_csv(l: &LossLandscape, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# direction_seed={} delta_stream=landscape/0#0 eta_stream=landscape/0#1 min_loss={}\n",
        l.seed, l.min_loss
    ));
    out.push_str("alpha\\beta");
    for b in &l.coords {
        out.push_str(&format!(",{b}"));
    }
    out.push('\n');
    for (ia, a) in l.coords.iter().enumerate() {
        out.push_str(&a.to_string());
        for ib in 0..l.coords.len() {
            out.push_str(&format!(",{}", l.relative[[ia, ib]]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ternarize;
    use crate::rng::SeedTree;
    use rand::Rng;

    fn solution() -> TernarySolution {
        let mut rng = SeedTree::new(1).stream("s", 0);
        TernarySolution {
            w1: ternarize(&Array2::from_shape_simple_fn((INPUTS, HIDDEN), || rng.gen_range(-1.0..1.0)), 0.3),
            b1: Array1::from_shape_simple_fn(HIDDEN, || rng.gen::<f64>() * 1e-3 + 1.0 / 3.0),
            w2: ternarize(&Array2::from_shape_simple_fn((HIDDEN, OUTPUTS), || rng.gen_range(-1.0..1.0)), 0.3),
            b2: Array1::from_shape_simple_fn(OUTPUTS, || rng.gen::<f64>()),
        }
    }

    fn metadata() -> SolutionMetadata {
        SolutionMetadata {
            mode: Mode::StatisticsAware,
            seed: 9,
            config: TrainConfig { seed: 9, ..TrainConfig::default() },
            w_sat: Some(20.0),
            n_maps: Some(100),
            stats: Some(DefectStats::default()),
            sign: Some(SignMode::Symmetric),
            die_id: None,
            dataset_hash: "abc".into(),
        }
    }

    #[test]
    fn solution_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let sol = solution();
        write_solution(&SolutionFile::new(&sol, metadata(), None), &path).unwrap();
        let back = read_solution(&path).unwrap();
        assert_eq!(back.solution().unwrap(), sol);
        assert_eq!(back.metadata, metadata());
    }

    #[test]
    fn malformed_solutions_are_rejected() {
        let mut f = SolutionFile::new(&solution(), metadata(), None);
        f.w1[0][0] = 2;
        assert!(matches!(f.solution(), Err(Error::Format(_))));
        let mut f = SolutionFile::new(&solution(), metadata(), None);
        f.w2.pop();
        assert!(matches!(f.solution(), Err(Error::Format(_))));
        let mut f = SolutionFile::new(&solution(), metadata(), None);
        f.format = "other".into();
        assert!(f.solution().is_err());
    }

    fn config(mode: Mode) -> ExperimentConfig {
        ExperimentConfig {
            mode,
            seed: 3,
            train: TrainConfig { seed: 3, ..TrainConfig::default() },
            stats: None,
            w_sat: None,
            n_maps: None,
            sign: SignMode::Symmetric,
            dies: None,
            outliers: OutlierRule::default(),
            out: "runs".into(),
        }
    }

    #[test]
    fn mode_requirements() {
        assert!(config(Mode::DefectFree).validate().is_ok());
        assert!(config(Mode::HardwareAware).validate().is_err());
        let mut hw = config(Mode::HardwareAware);
        hw.dies = Some(DieSource::Files(vec!["d.json".into()]));
        assert!(hw.validate().is_ok());
        let mut sa = config(Mode::StatisticsAware);
        assert!(sa.validate().is_err());
        sa.stats = Some(DefectStats::default());
        sa.w_sat = Some(20.0);
        assert!(sa.validate().is_err());
        sa.n_maps = Some(100);
        assert!(sa.validate().is_ok());
        sa.w_sat = Some(-1.0);
        assert!(sa.validate().is_err());
        assert_eq!("hardware-aware".parse::<Mode>().unwrap(), Mode::HardwareAware);
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn manifest_is_write_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = RunManifest::new("train", vec![], serde_json::json!({"seed": 1}));
        m.write_new(&path).unwrap();
        assert!(m.write_new(&path).is_err());
        let back: RunManifest = read_json(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn metric_rows_roundtrip() {
        let report = MetricsReport::new(
            vec!["a".into(), "b".into()],
            vec![vec![0.1, 0.2], vec![0.3, 0.4]],
            vec![0.05, 0.06],
            vec![],
        )
        .unwrap();
        let rows = metric_rows(&report, Some(5.0));
        assert_eq!(rows.iter().filter(|r| r.metric == "error").count(), 6);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metric_rows(&rows, &path).unwrap();
        assert_eq!(read_metric_rows(&path).unwrap(), rows);
    }
}
