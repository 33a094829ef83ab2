//! Monte Carlo type-I-error and power studies and the subsample-overlap check.
//!
//! Replication `r` of cell `(d, δ)` draws its data from the substream
//! `(seed, d, r)`, shared across the `δ` grid (common random numbers), and its
//! subsamples from `(seed, d, r, δ-index)`. Counts are reduced as integers, so
//! results do not depend on thread count or execution order.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_test, TestConfig, VERSION};
use crate::error::{Error, Result};
use crate::estimators::{DfEstimator, EstimatorConfig, EstimatorMode, DEFAULT_WORK_CAP};
use crate::hypothesis::{standard_hypothesis, HypothesisKind, SubplotStructure};
use crate::model::{ar1_covariance, SplitPlotDesign};
use crate::rng::child_seed;
use crate::estimators::{empirical_overlap_fraction, overlap_fraction_formula};

/// Default `d` grid of a full study.
pub const FULL_D_GRID: [usize; 12] = [5, 10, 20, 40, 70, 100, 150, 200, 300, 450, 600, 800];
/// Reduced grid for quick runs.
pub const DESK_D_GRID: [usize; 4] = [5, 10, 40, 100];
/// Default cap on `n_sim · B` summed over all cells.
pub const DEFAULT_DRAW_CAP: f64 = 1e10;

/// Per-group covariance family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovarianceSpec {
    /// `ρ^{|s−t|}`.
    Ar { rho: f64 },
    Identity,
}

impl CovarianceSpec {
    /// Parses `ar:0.6` or `identity`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "identity" || text == "id" {
            return Ok(Self::Identity);
        }
        if let Some(rho) = text.strip_prefix("ar:") {
            let rho = rho.parse().map_err(|_| Error::Parse(format!("bad AR coefficient in '{text}'")))?;
            return Ok(Self::Ar { rho });
        }
        Err(Error::Parse(format!("unknown covariance '{text}' (expected ar:<rho> or identity)")))
    }

    pub fn matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        match *self {
            Self::Ar { rho } => ar1_covariance(d, rho),
            Self::Identity => Ok(DMatrix::identity(d, d)),
        }
    }
}

/// Mean pattern of group 1; all other groups have mean zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Null,
    /// `μ_{1,t} = t·δ/d`.
    Trend,
    /// `μ₁ = δ·1`.
    Shift,
    /// `μ₁ = δ·e₁`.
    OnePoint,
}

impl Alternative {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "null" => Ok(Self::Null),
            "trend" => Ok(Self::Trend),
            "shift" => Ok(Self::Shift),
            "one_point" | "onepoint" => Ok(Self::OnePoint),
            _ => Err(Error::Parse(format!("unknown alternative '{text}'"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Null => "null",
            Self::Trend => "trend",
            Self::Shift => "shift",
            Self::OnePoint => "one_point",
        }
    }

    /// Group-1 mean vector in dimension `d`.
    pub fn mean(&self, d: usize, delta: f64) -> DVector<f64> {
        match self {
            Self::Null => DVector::zeros(d),
            Self::Trend => DVector::from_fn(d, |t, _| (t + 1) as f64 * delta / d as f64),
            Self::Shift => DVector::from_element(d, delta),
            Self::OnePoint => {
                let mut m = DVector::zeros(d);
                m[0] = delta;
                m
            }
        }
    }
}

/// The three tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PhiStar,
    PsiZ,
    PsiChi,
}

impl TestKind {
    pub const ALL: [TestKind; 3] = [TestKind::PhiStar, TestKind::PsiZ, TestKind::PsiChi];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PhiStar => "phi_star",
            Self::PsiZ => "psi_z",
            Self::PsiChi => "psi_chi",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "phi_star" | "phi" => Ok(Self::PhiStar),
            "psi_z" => Ok(Self::PsiZ),
            "psi_chi" => Ok(Self::PsiChi),
            _ => Err(Error::Parse(format!("unknown test '{text}'"))),
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}
fn default_b_multiplier() -> u64 {
    500
}
fn default_tests() -> Vec<TestKind> {
    TestKind::ALL.to_vec()
}
fn default_deltas() -> Vec<f64> {
    vec![0.0]
}
fn default_true() -> bool {
    true
}
fn default_df() -> DfEstimator {
    DfEstimator::C5Star
}
fn default_w() -> u64 {
    1
}
fn default_draw_cap() -> f64 {
    DEFAULT_DRAW_CAP
}
fn default_alternative() -> Alternative {
    Alternative::Null
}

/// A simulation study; deserializable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Hypothesis label (`group`, `time`, `interaction`).
    pub hypothesis: String,
    pub covariances: Vec<CovarianceSpec>,
    pub n: Vec<usize>,
    pub d_grid: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub n_sim: u64,
    /// `B = b_multiplier · N`.
    #[serde(default = "default_b_multiplier")]
    pub b_multiplier: u64,
    #[serde(default = "default_alternative")]
    pub alternative: Alternative,
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_tests")]
    pub tests: Vec<TestKind>,
    #[serde(default = "default_df")]
    pub df: DfEstimator,
    #[serde(default = "default_w")]
    pub w: u64,
    #[serde(default = "default_true")]
    pub correction: bool,
    /// Cap on `Σ_cells n_sim · B`.
    #[serde(default = "default_draw_cap")]
    pub draw_cap: f64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sim == 0 {
            return Err(Error::InvalidParameter("n_sim must be at least 1".into()));
        }
        if self.n.is_empty() || self.covariances.len() != self.n.len() {
            return Err(Error::DimensionMismatch("one covariance per group is required".into()));
        }
        if self.d_grid.is_empty() || self.d_grid.contains(&0) {
            return Err(Error::InvalidParameter("d_grid must list positive dimensions".into()));
        }
        if self.deltas.is_empty() || self.deltas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter("delta grid must be non-empty and sorted ascending".into()));
        }
        if self.tests.is_empty() {
            return Err(Error::InvalidParameter("at least one test is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} not in (0,1]", self.alpha)));
        }
        HypothesisKind::parse(&self.hypothesis)?;
        let total: usize = self.n.iter().sum();
        let draws = (self.n_sim * self.b_multiplier * total as u64) as f64
            * (self.d_grid.len() * self.deltas.len()) as f64
            * if self.df == DfEstimator::C7Star { self.w as f64 } else { 1.0 };
        if self.tests.contains(&TestKind::PhiStar) && draws > self.draw_cap {
            return Err(Error::WorkCapExceeded { required: draws, cap: self.draw_cap });
        }
        Ok(())
    }

    /// Named configurations mirroring the published study settings.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |hyp: &str, n: Vec<usize>, d_grid: Vec<usize>| SimConfig {
            hypothesis: hyp.into(),
            covariances: vec![CovarianceSpec::Ar { rho: 0.6 }, CovarianceSpec::Ar { rho: 0.65 }],
            n,
            d_grid,
            alpha: 0.05,
            n_sim: 10_000,
            b_multiplier: 500,
            alternative: Alternative::Null,
            deltas: vec![0.0],
            seed: 20_240_501,
            tests: default_tests(),
            df: DfEstimator::C5Star,
            w: 1,
            correction: true,
            draw_cap: DEFAULT_DRAW_CAP,
        };
        let grid = (0..=12).map(|k| k as f64 * 0.25).collect::<Vec<_>>();
        Ok(match name {
            "fig1-d40" => base("group", vec![20, 30], vec![40]),
            "fig1-desk" => base("group", vec![20, 30], DESK_D_GRID.to_vec()),
            "fig1-large-d100" => base("group", vec![50, 75], vec![100]),
            "fig2-d40" => base("time", vec![20, 30], vec![40]),
            "fig2-desk" => base("time", vec![20, 30], vec![10, 40, 100]),
            "fig2-full" => base("time", vec![20, 30], FULL_D_GRID.to_vec()),
            "power-trend-group" | "power-trend-time" | "power-shift" | "power-one-point" => {
                let (hyp, alt) = match name {
                    "power-trend-group" => ("group", Alternative::Trend),
                    "power-trend-time" => ("time", Alternative::Trend),
                    "power-shift" => ("group", Alternative::Shift),
                    _ => ("time", Alternative::OnePoint),
                };
                SimConfig { alternative: alt, deltas: grid, ..base(hyp, vec![20, 30], vec![10, 40, 100]) }
            }
            _ => {
                return Err(Error::Parse(format!(
                    "unknown preset '{name}' (known: {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }
}

pub const PRESETS: [&str; 10] = [
    "fig1-d40",
    "fig1-desk",
    "fig1-large-d100",
    "fig2-d40",
    "fig2-desk",
    "fig2-full",
    "power-trend-group",
    "power-trend-time",
    "power-shift",
    "power-one-point",
];

/// One `(d, δ, test)` cell; also the CSV row layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub hypothesis: String,
    pub d: usize,
    pub n1: usize,
    pub n2: Option<usize>,
    pub delta: f64,
    pub test: String,
    pub rejections: u64,
    pub n_sim: u64,
    pub rate: f64,
    pub se: f64,
    pub seed: u64,
    pub b_multiplier: u64,
    pub version: String,
}

impl SimRow {
    fn key(&self) -> (String, usize, u64, String) {
        (self.hypothesis.clone(), self.d, self.delta.to_bits(), self.test.clone())
    }
}

/// Outcome of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub rows: Vec<SimRow>,
    /// Replications that errored (e.g. degenerate variance) count as non-rejections.
    pub failed_replications: u64,
    pub wall_time_s: f64,
}

impl SimResult {
    pub fn rate(&self, d: usize, delta: f64, test: TestKind) -> Option<&SimRow> {
        self.rows.iter().find(|r| r.d == d && r.delta == delta && r.test == test.as_str())
    }
}

struct Cell {
    counts: Vec<u64>,
    failed: u64,
}

fn run_cell(config: &SimConfig, d: usize, delta_index: usize) -> Result<Cell> {
    let kind = HypothesisKind::parse(&config.hypothesis)?;
    let a = config.n.len();
    let pair = standard_hypothesis(kind, a, SubplotStructure::Flat(d))?;
    let covs = config.covariances.iter().map(|c| c.matrix(d)).collect::<Result<Vec<_>>>()?;
    let mut means = DMatrix::zeros(a, d);
    let mu1 = config.alternative.mean(d, config.deltas[delta_index]);
    means.row_mut(0).copy_from(&mu1.transpose());
    let design = SplitPlotDesign::new(config.n.clone(), means, covs)?;
    let total: usize = config.n.iter().sum();
    let need_df = config.tests.contains(&TestKind::PhiStar);
    let data_seed = child_seed(config.seed, &[d as u64]);
    let outcomes: Vec<Option<[bool; 3]>> = (0..config.n_sim)
        .into_par_iter()
        .map(|rep| {
            let sample = design.sample_replication(data_seed, rep);
            let test_cfg = TestConfig {
                alpha: config.alpha,
                estimator: EstimatorConfig {
                    mode: EstimatorMode::Efficient,
                    df: need_df.then_some(config.df),
                    b: Some(config.b_multiplier * total as u64),
                    w: config.w,
                    seed: child_seed(config.seed, &[d as u64, rep, delta_index as u64]),
                    work_cap: DEFAULT_WORK_CAP,
                    with_c6: false,
                },
                correction: config.correction,
                forced_f: None,
            };
            run_test(&sample, &pair, &test_cfg)
                .ok()
                .map(|r| [r.reject_phi_star.unwrap_or(false), r.reject_psi_z, r.reject_psi_chi])
        })
        .collect();
    let mut counts = vec![0u64; 3];
    let mut failed = 0;
    for o in outcomes {
        match o {
            Some(dec) => dec.iter().zip(counts.iter_mut()).for_each(|(&x, c)| *c += x as u64),
            None => failed += 1,
        }
    }
    Ok(Cell { counts, failed })
}

fn make_rows(config: &SimConfig, d: usize, delta: f64, cell: &Cell) -> Vec<SimRow> {
    config
        .tests
        .iter()
        .map(|t| {
            let idx = TestKind::ALL.iter().position(|x| x == t).expect("known test");
            let rejections = cell.counts[idx];
            let rate = rejections as f64 / config.n_sim as f64;
            SimRow {
                hypothesis: config.hypothesis.clone(),
                d,
                n1: config.n[0],
                n2: config.n.get(1).copied(),
                delta,
                test: t.as_str().into(),
                rejections,
                n_sim: config.n_sim,
                rate,
                se: (rate * (1.0 - rate) / config.n_sim as f64).sqrt(),
                seed: config.seed,
                b_multiplier: config.b_multiplier,
                version: VERSION.into(),
            }
        })
        .collect()
}

/// Runs every `(d, δ)` cell. With `checkpoint`, finished cells found in the
/// file are reused and new cells are appended as they complete.
pub fn run_study(config: &SimConfig, checkpoint: Option<&Path>) -> Result<SimResult> {
    config.validate()?;
    let start = Instant::now();
    let mut rows: Vec<SimRow> = Vec::new();
    let mut done: HashSet<(String, usize, u64, String)> = HashSet::new();
    if let Some(path) = checkpoint {
        if path.exists() && std::fs::metadata(path)?.len() > 0 {
            let mut reader = csv::Reader::from_path(path)?;
            for row in reader.deserialize::<SimRow>() {
                let row = row?;
                if row.seed == config.seed && row.n_sim == config.n_sim && row.b_multiplier == config.b_multiplier {
                    done.insert(row.key());
                    rows.push(row);
                }
            }
        }
    }
    let mut failed = 0;
    for &d in &config.d_grid {
        for (k, &delta) in config.deltas.iter().enumerate() {
            let wanted: Vec<SimRow> = make_rows(config, d, delta, &Cell { counts: vec![0; 3], failed: 0 });
            if wanted.iter().all(|r| done.contains(&r.key())) {
                continue;
            }
            let cell = run_cell(config, d, k)?;
            failed += cell.failed;
            let new_rows = make_rows(config, d, delta, &cell);
            if let Some(path) = checkpoint {
                append_rows(path, &new_rows)?;
            }
            for r in new_rows {
                if done.insert(r.key()) {
                    rows.push(r);
                }
            }
        }
    }
    let order = |r: &SimRow| {
        (
            config.d_grid.iter().position(|&d| d == r.d).unwrap_or(usize::MAX),
            config.deltas.iter().position(|&x| x == r.delta).unwrap_or(usize::MAX),
            config.tests.iter().position(|t| t.as_str() == r.test).unwrap_or(usize::MAX),
        )
    };
    rows.retain(|r| order(r).0 != usize::MAX && order(r).1 != usize::MAX && order(r).2 != usize::MAX);
    rows.sort_by_key(order);
    Ok(SimResult { rows, failed_replications: failed, wall_time_s: start.elapsed().as_secs_f64() })
}

fn append_rows(path: &Path, rows: &[SimRow]) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes rows as CSV with header.
pub fn write_rows<W: std::io::Write>(rows: &[SimRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for r in rows {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}

/// Type-I error study; requires the null alternative.
pub fn type_one_error_study(config: &SimConfig, checkpoint: Option<&Path>) -> Result<SimResult> {
    if config.alternative != Alternative::Null && config.deltas.iter().any(|&x| x != 0.0) {
        return Err(Error::InvalidParameter("type-I error study needs the null alternative".into()));
    }
    run_study(config, checkpoint)
}

/// Power study; the `δ` grid must contain 0.
pub fn power_study(config: &SimConfig, checkpoint: Option<&Path>) -> Result<SimResult> {
    if !config.deltas.contains(&0.0) {
        return Err(Error::InvalidParameter("power study delta grid must include 0".into()));
    }
    if config.alternative == Alternative::Null {
        return Err(Error::InvalidParameter("power study needs an alternative".into()));
    }
    run_study(config, checkpoint)
}

/// Empirical vs. predicted fraction of overlapping subsample pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub sizes: Vec<usize>,
    pub m: usize,
    pub b: u64,
    pub reps: u64,
    pub seed: u64,
    pub formula: f64,
    pub empirical: f64,
    pub se: f64,
    pub within_3se: bool,
    pub version: String,
}

/// Averages `reps` independent empirical overlap fractions.
pub fn subsample_overlap_study(sizes: &[usize], m: usize, b: u64, reps: u64, seed: u64) -> Result<OverlapReport> {
    if reps < 2 {
        return Err(Error::InvalidParameter("need at least two replications".into()));
    }
    let formula = overlap_fraction_formula(sizes, m, b)?;
    let draws = (0..reps)
        .into_par_iter()
        .map(|r| empirical_overlap_fraction(sizes, m, b, child_seed(seed, &[r])))
        .collect::<Result<Vec<_>>>()?;
    let n = reps as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    Ok(OverlapReport {
        sizes: sizes.to_vec(),
        m,
        b,
        reps,
        seed,
        formula,
        empirical: mean,
        se,
        within_3se: (mean - formula).abs() <= 3.0 * se.max(1e-12),
        version: VERSION.into(),
    })
}

/// Appends a free-form note to a text log (used by the CLI for study metadata).
pub fn write_note(path: &Path, note: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{note}")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SimConfig {
        SimConfig {
            n_sim: 40,
            b_multiplier: 5,
            d_grid: vec![4, 6],
            n: vec![6, 8],
            seed,
            ..SimConfig::preset("fig2-d40").unwrap()
        }
    }

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            SimConfig::preset(p).unwrap().validate().unwrap();
        }
        assert!(SimConfig::preset("nope").is_err());
    }

    #[test]
    fn study_is_deterministic_and_counts_are_integral() {
        let cfg = small(3);
        let r1 = type_one_error_study(&cfg, None).unwrap();
        let r2 = type_one_error_study(&cfg, None).unwrap();
        assert_eq!(r1.rows, r2.rows);
        assert_eq!(r1.rows.len(), 6);
        for r in &r1.rows {
            assert_eq!(r.rate * r.n_sim as f64, r.rejections as f64);
            assert!((r.se - (r.rate * (1.0 - r.rate) / 40.0).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_one_rejects_all() {
        let cfg = SimConfig { alpha: 1.0, ..small(1) };
        let r = type_one_error_study(&cfg, None).unwrap();
        assert!(r.rows.iter().all(|row| row.rate == 1.0));
    }

    #[test]
    fn checkpoint_resume_reproduces_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("study.csv");
        let cfg = small(9);
        let partial = SimConfig { d_grid: vec![4], ..cfg.clone() };
        run_study(&partial, Some(&path)).unwrap();
        let resumed = run_study(&cfg, Some(&path)).unwrap();
        let fresh = run_study(&cfg, None).unwrap();
        assert_eq!(resumed.rows, fresh.rows);
        let lines = std::fs::read_to_string(&path).unwrap();
        assert_eq!(lines.lines().count(), 1 + 6);
        assert!(lines.starts_with("hypothesis,d,n1,n2,delta,test,rejections,n_sim,rate,se,seed,b_multiplier"));
    }

    #[test]
    fn validation() {
        assert!(SimConfig { n_sim: 0, ..small(1) }.validate().is_err());
        assert!(SimConfig { deltas: vec![1.0, 0.5], ..small(1) }.validate().is_err());
        let huge = SimConfig { draw_cap: 10.0, ..small(1) };
        assert!(matches!(huge.validate(), Err(Error::WorkCapExceeded { .. })));
        let power = SimConfig { alternative: Alternative::Shift, deltas: vec![0.5, 1.0], ..small(1) };
        assert!(power_study(&power, None).is_err());
    }

    #[test]
    fn overlap_report() {
        let r = subsample_overlap_study(&[4], 2, 10, 400, 2).unwrap();
        assert!((r.formula - 0.85).abs() < 1e-12);
        assert!(r.within_3se, "{r:?}");
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SimConfig::preset("power-shift").unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: SimConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: SimConfig = toml::from_str(
            "hypothesis = \"time\"\nn = [20, 30]\nd_grid = [10]\nn_sim = 100\nseed = 1\n\
             covariances = [{ kind = \"ar\", rho = 0.6 }, { kind = \"ar\", rho = 0.65 }]\n",
        )
        .unwrap();
        assert_eq!(minimal.tests.len(), 3);
        assert_eq!(minimal.b_multiplier, 500);
    }
}
