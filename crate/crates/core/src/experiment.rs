//! Simulation harness: ground-truth and bootstrap runs over a grid of radial
//! laws, covariance settings and dimension ratios.
//!
//! Every cell `(law, setting, p/n)` gets its own seed derived from the master
//! seed and the cell labels; trial `t` of a cell uses `derive_seed(cell, t)`.
//! Output rows are ordered by cell and then trial, so the files are
//! byte-identical for any worker count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bootstrap::{
    bootstrap_distribution, evaluate_on_sample, gamma_xi_params, BootstrapConfig, BootstrapOptions, StatContext,
    StatisticSpec,
};
use crate::error::{Error, Result};
use crate::inference::{
    empirical_quantile, prepare, stable_rank_ci_prepared, stable_rank_test_prepared, InferenceOptions, PreparedData,
};
use crate::mp::{
    centering_moments, centering_parameter, centering_parameter_mc, esd_grid, EsdOptions, SpectralFunction,
};
use crate::parallel;
use crate::quest::QuestOptions;
use crate::reference;
use crate::rng::{derive_path, derive_seed, label_hash};
use crate::sampling::{sample_dataset, EllipticalLaw, RadialLaw};
use crate::spectra::{make_covariance_setting, CovarianceSpec, Setting, SpectrumModel};

pub const TRIAL_HEADER: [&str; 8] = ["law", "setting", "ratio", "trial", "stat", "kind", "value", "seed"];
pub const SUMMARY_HEADER: [&str; 14] = [
    "law",
    "setting",
    "ratio",
    "stat",
    "ground_mean",
    "ground_sd",
    "ground_p95",
    "boot_mean_mean",
    "boot_mean_sd",
    "boot_sd_mean",
    "boot_sd_sd",
    "boot_p95_mean",
    "boot_p95_sd",
    "paper_ref_value",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    RankPower,
    Adhoc,
}

impl Design {
    pub fn table_id(self) -> Option<usize> {
        match self {
            Design::Table1 => Some(1),
            Design::Table2 => Some(2),
            Design::Table3 => Some(3),
            Design::Table4 => Some(4),
            Design::Table5 => Some(5),
            _ => None,
        }
    }

    pub fn from_table_id(id: usize) -> Result<Self> {
        match id {
            1 => Ok(Design::Table1),
            2 => Ok(Design::Table2),
            3 => Ok(Design::Table3),
            4 => Ok(Design::Table4),
            5 => Ok(Design::Table5),
            _ => Err(Error::Config(format!("no table {id}; expected 1 to 5"))),
        }
    }

    /// `p/n` grid used by the published tables.
    pub fn default_ratios(self) -> Vec<f64> {
        match self {
            Design::Table2 => vec![0.3, 0.5, 0.7],
            Design::RankPower => vec![0.5],
            _ => vec![0.5, 1.0, 1.5],
        }
    }
}

/// The three radial laws of the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawTag {
    /// `χ²_p`.
    I,
    /// Beta-prime with variance rate 8.
    Ii,
    /// `(p+4)·Beta(p/2, 2)`.
    Iii,
}

impl LawTag {
    pub const ALL: [LawTag; 3] = [LawTag::I, LawTag::Ii, LawTag::Iii];

    pub fn law(self) -> EllipticalLaw {
        match self {
            LawTag::I => EllipticalLaw::ChiSquared,
            LawTag::Ii => EllipticalLaw::BetaPrime { tau: 8.0 },
            LawTag::Iii => EllipticalLaw::ScaledBeta { beta: 2.0 },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LawTag::I => "i",
            LawTag::Ii => "ii",
            LawTag::Iii => "iii",
        }
    }
}

impl std::str::FromStr for LawTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(LawTag::I),
            "ii" => Ok(LawTag::Ii),
            "iii" => Ok(LawTag::Iii),
            other => Err(Error::Config(format!("unknown law tag {other:?}; expected i, ii or iii"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaMethod {
    Quadrature,
    Mc,
}

/// Parameters of Monte Carlo centering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCentering {
    pub expansion: usize,
    pub reps: usize,
    pub max_dim: usize,
}

impl Default for McCentering {
    fn default() -> Self {
        McCentering { expansion: 40, reps: 30, max_dim: crate::mp::DEFAULT_MC_MAX_DIM }
    }
}

fn d_n() -> usize {
    400
}
fn d_b() -> usize {
    250
}
fn d_alpha() -> f64 {
    0.05
}
fn d_eps0() -> f64 {
    0.1
}
fn d_laws() -> Vec<LawTag> {
    LawTag::ALL.to_vec()
}
fn d_settings() -> Vec<Setting> {
    vec![Setting::S1, Setting::S2, Setting::S3]
}
fn d_theta() -> ThetaMethod {
    ThetaMethod::Quadrature
}
fn d_output() -> PathBuf {
    PathBuf::from("out")
}

/// `r/p` grid of the rank-test design.
pub fn default_rank_grid() -> Vec<f64> {
    (0..15).map(|k| (980.0 + 5.0 * k as f64) / 10_000.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub design: Design,
    #[serde(default = "d_n")]
    pub n: usize,
    /// Defaults to the design's published grid when empty.
    #[serde(default)]
    pub ratios: Vec<f64>,
    #[serde(default = "d_laws")]
    pub laws: Vec<LawTag>,
    #[serde(default = "d_settings")]
    pub settings: Vec<Setting>,
    /// Ground-truth datasets per cell; for the interval and test designs,
    /// the number of datasets the procedure is applied to.
    pub trials: usize,
    /// Bootstrap runs per cell, on the first `boot_runs` datasets. Defaults
    /// to `trials / 10` for the moment tables and 0 for ad hoc runs.
    #[serde(default)]
    pub boot_runs: Option<usize>,
    #[serde(rename = "B", default = "d_b")]
    pub b: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default = "d_theta")]
    pub theta_method: ThetaMethod,
    #[serde(default)]
    pub mc: McCentering,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_eps0")]
    pub epsilon0: f64,
    /// `r/p` targets for the rank-test design.
    #[serde(default)]
    pub rank_grid: Vec<f64>,
    /// Statistics for ad hoc runs.
    #[serde(default)]
    pub statistics: Vec<StatisticSpec>,
    #[serde(default)]
    pub quest: QuestOptions,
    /// Use Haar-rotated (S1, S2) or dense (S3) covariances instead of their
    /// diagonal forms. Spectral statistics have the same law either way.
    #[serde(default)]
    pub rotate: bool,
}

impl ExperimentConfig {
    pub fn new(design: Design, trials: usize) -> Self {
        ExperimentConfig {
            design,
            n: d_n(),
            ratios: Vec::new(),
            laws: d_laws(),
            settings: d_settings(),
            trials,
            boot_runs: None,
            b: d_b(),
            master_seed: 0,
            output_dir: d_output(),
            theta_method: d_theta(),
            mc: McCentering::default(),
            alpha: d_alpha(),
            epsilon0: d_eps0(),
            rank_grid: Vec::new(),
            statistics: Vec::new(),
            quest: QuestOptions::default(),
            rotate: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn ratios(&self) -> Vec<f64> {
        if self.ratios.is_empty() {
            self.design.default_ratios()
        } else {
            self.ratios.clone()
        }
    }

    pub fn rank_grid(&self) -> Vec<f64> {
        if self.rank_grid.is_empty() {
            default_rank_grid()
        } else {
            self.rank_grid.clone()
        }
    }

    pub fn boot_runs(&self) -> usize {
        let d = match self.design {
            Design::Adhoc => 0,
            Design::Table1 | Design::Table2 | Design::Table3 | Design::Table4 => self.trials / 10,
            Design::Table5 | Design::RankPower => 0,
        };
        self.boot_runs.unwrap_or(d).min(self.trials)
    }

    /// Statistics evaluated on each dataset of a moment design.
    pub fn statistics(&self) -> Vec<StatisticSpec> {
        match self.design {
            Design::Table1 => vec![StatisticSpec::Lss(SpectralFunction::Square)],
            Design::Table2 => vec![StatisticSpec::Lss(SpectralFunction::XMinusLog)],
            Design::Table3 => vec![StatisticSpec::LargestEig],
            Design::Table4 => vec![StatisticSpec::EigenGap],
            _ => self.statistics.clone(),
        }
    }

    /// Dimension of a cell.
    pub fn p_for(&self, ratio: f64) -> usize {
        (ratio * self.n as f64).round() as usize
    }

    /// Check the grid before any computation; also verifies that the output
    /// directory is writable.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.n < 2 {
            return bad("n must be >= 2".into());
        }
        if self.b == 0 {
            return bad("B must be >= 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.laws.is_empty() {
            return bad("no laws selected".into());
        }
        let ratios = self.ratios();
        if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad(format!("ratios must be positive, got {ratios:?}"));
        }
        if self.design != Design::RankPower && self.settings.is_empty() {
            return bad("no covariance settings selected".into());
        }
        let stats = self.statistics();
        if matches!(self.design, Design::Adhoc) && stats.is_empty() {
            return bad("ad hoc designs need at least one statistic".into());
        }
        for &r in &ratios {
            let p = self.p_for(r);
            if p == 0 {
                return bad(format!("ratio {r} gives p = 0 at n = {}", self.n));
            }
            if self.design != Design::RankPower {
                for s in &self.settings {
                    if *s == Setting::Custom {
                        return bad("custom settings are not part of the simulation grid".into());
                    }
                    if p < s.min_dimension() {
                        return bad(format!(
                            "setting {} needs p >= {}, ratio {r} gives {p}",
                            s.label(),
                            s.min_dimension()
                        ));
                    }
                }
            }
            for st in &stats {
                if let StatisticSpec::Lss(f) = st {
                    if p >= self.n && !f.defined_at_zero() {
                        return bad(format!("{} needs p < n, ratio {r} gives p = {p}", f.label()));
                    }
                }
                if matches!(st, StatisticSpec::EigenGap) && p < 2 {
                    return bad("eigen gap needs p >= 2".into());
                }
                if matches!(st, StatisticSpec::Custom { .. }) {
                    return bad("custom statistics cannot be used in experiment configs".into());
                }
            }
            if self.design == Design::RankPower {
                if !(self.epsilon0 > 0.0 && self.epsilon0 < 1.0) {
                    return bad(format!("epsilon0 = {} must lie in (0, 1)", self.epsilon0));
                }
                for &g in &self.rank_grid() {
                    rank_design_spectrum(p, g)?;
                }
            }
        }
        if self.theta_method == ThetaMethod::Mc && (self.mc.expansion == 0 || self.mc.reps == 0) {
            return bad("MC centering needs expansion and reps >= 1".into());
        }
        check_writable(&self.output_dir)
    }
}

fn check_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::Config(format!("{} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

/// Rescaled S1 profile: `4s/3` (×5), `s` (×10), 1 for the rest, with `s ≥ 1`
/// chosen so that the stable rank over `p` equals `target`.
pub fn rank_design_spectrum(p: usize, target: f64) -> Result<Vec<f64>> {
    if p < 16 {
        return Err(Error::Dimension(format!("rank design needs p >= 16, got {p}")));
    }
    let profile = |s: f64| -> Vec<f64> {
        (0..p)
            .map(|j| {
                if j < 5 {
                    4.0 * s / 3.0
                } else if j < 15 {
                    s
                } else {
                    1.0
                }
            })
            .collect()
    };
    let ratio = |s: f64| crate::bootstrap::rank_ratio(&profile(s));
    let (mut lo, mut hi) = (1.0, 1e8);
    if !(target < ratio(lo) && target > ratio(hi)) {
        return Err(Error::Config(format!(
            "r/p = {target} is not reachable at p = {p}; the range is ({}, {})",
            ratio(hi),
            ratio(lo)
        )));
    }
    // r/p decreases in s on [1, ∞)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(profile(0.5 * (lo + hi)))
}

/// One line of the per-trial CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub law: String,
    pub setting: String,
    pub ratio: f64,
    pub trial: usize,
    pub stat: String,
    pub kind: String,
    pub value: f64,
    pub seed: u64,
}

/// One line of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub law: String,
    pub setting: String,
    pub ratio: f64,
    pub stat: String,
    pub ground_mean: f64,
    pub ground_sd: f64,
    pub ground_p95: f64,
    pub boot_mean_mean: f64,
    pub boot_mean_sd: f64,
    pub boot_sd_mean: f64,
    pub boot_sd_sd: f64,
    pub boot_p95_mean: f64,
    pub boot_p95_sd: f64,
    pub paper_ref_value: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub trial_csv: PathBuf,
    pub summary_csv: PathBuf,
    pub table: PathBuf,
    pub manifest: PathBuf,
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
}

/// Round to 6 significant digits. Values are rounded when recorded, so the
/// summary computed in memory equals one recomputed from the CSV.
pub fn round6(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{}", round6(v))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sd(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        1 => 0.0,
        k => {
            let m = mean(v);
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k as f64 - 1.0)).sqrt()
        }
    }
}

fn p95(v: &[f64]) -> f64 {
    empirical_quantile(v, 0.95).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone)]
struct Cell {
    law: LawTag,
    setting_label: String,
    ratio: f64,
    p: usize,
    spec: CovarianceSpec,
    seed: u64,
}

fn cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for &law in &cfg.laws {
        let mut push = |label: String, ratio: f64, spec: CovarianceSpec| {
            let seed = derive_path(cfg.master_seed, &[label_hash(law.label()), label_hash(&label), ratio.to_bits()]);
            let p = spec.p();
            out.push(Cell { law, setting_label: label, ratio, p, spec, seed });
        };
        if cfg.design == Design::RankPower {
            for &g in &cfg.rank_grid() {
                for &r in &cfg.ratios() {
                    let p = cfg.p_for(r);
                    let spec = CovarianceSpec::custom(rank_design_spectrum(p, g)?, None)?;
                    push(format!("S1-rank-{g:.4}"), r, spec);
                }
            }
            continue;
        }
        for &s in &cfg.settings {
            for &r in &cfg.ratios() {
                let p = cfg.p_for(r);
                let spec = if cfg.rotate {
                    let rot = derive_path(cfg.master_seed, &[label_hash("rotation"), label_hash(s.label()), p as u64]);
                    make_covariance_setting(s, p, Some(rot))?
                } else {
                    let base = make_covariance_setting(s, p, None)?;
                    CovarianceSpec::custom(base.eigenvalues().to_vec(), None)?
                };
                push(s.label().to_string(), r, spec);
            }
        }
    }
    Ok(out)
}

/// `∫ f dΨ(H, p/n)`, exact for `x` and `x²`.
fn centering_quadrature(h: &SpectrumModel, n: usize, p: usize, f: &SpectralFunction) -> Result<f64> {
    match f {
        SpectralFunction::Identity => Ok(centering_moments(h, n, p).0),
        SpectralFunction::Square => Ok(centering_moments(h, n, p).1),
        SpectralFunction::Constant => Ok(1.0),
        _ => {
            let dist = esd_grid(h, p as f64 / n as f64, &EsdOptions::default())?;
            centering_parameter(&dist, f)
        }
    }
}

fn centering(
    cfg: &ExperimentConfig,
    spectrum: &[f64],
    law: &dyn RadialLaw,
    n: usize,
    f: &SpectralFunction,
    seed: u64,
) -> Result<f64> {
    match cfg.theta_method {
        ThetaMethod::Quadrature => {
            centering_quadrature(&SpectrumModel::from_eigenvalues(spectrum)?, n, spectrum.len(), f)
        }
        ThetaMethod::Mc => {
            Ok(centering_parameter_mc(spectrum, law, n, f, cfg.mc.reps, cfg.mc.expansion, seed, cfg.mc.max_dim)?.mean)
        }
    }
}

/// Centering values for each statistic: `Some(ϑ)` for linear statistics,
/// which are reported as `p(T − ϑ)`; `None` for statistics reported raw.
fn centerings(
    cfg: &ExperimentConfig,
    stats: &[StatisticSpec],
    spectrum: &[f64],
    law: &dyn RadialLaw,
    n: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    stats
        .iter()
        .enumerate()
        .map(|(k, s)| match s {
            StatisticSpec::Lss(f) => centering(cfg, spectrum, law, n, f, derive_seed(seed, k as u64)).map(Some),
            _ => Ok(None),
        })
        .collect()
}

fn transform(v: f64, theta: Option<f64>, p: usize) -> f64 {
    match theta {
        Some(t) => p as f64 * (v - t),
        None => v,
    }
}

const DATA_STREAM: u64 = 0;
const BOOT_STREAM: u64 = 1;
const CENTER_STREAM: u64 = 2;

fn row(cell: &Cell, trial: usize, stat: &str, kind: &str, value: f64, seed: u64) -> TrialRow {
    TrialRow {
        law: cell.law.label().into(),
        setting: cell.setting_label.clone(),
        ratio: cell.ratio,
        trial,
        stat: stat.into(),
        kind: kind.into(),
        value: round6(value),
        seed,
    }
}

fn inference_opts(cfg: &ExperimentConfig, seed: u64) -> InferenceOptions {
    InferenceOptions { quest: cfg.quest, workers: Some(1), seed }
}

fn run_moment_cell(cfg: &ExperimentConfig, cell: &Cell, workers: Option<usize>) -> Result<Vec<TrialRow>> {
    let stats = cfg.statistics();
    let labels: Vec<String> = stats.iter().map(StatisticSpec::label).collect();
    let law = cell.law.law();
    let n = cfg.n;
    let p = cell.p;
    let theta = centerings(cfg, &stats, cell.spec.eigenvalues(), &law, n, derive_seed(cell.seed, u64::MAX))?;
    let ctx = StatContext::new(n, cell.spec.eigenvalues());
    let root = cell.spec.sqrt_factor()?;
    let boot_runs = cfg.boot_runs();

    let per_trial = parallel::map_indexed(workers, cfg.trials, |t| -> Result<Vec<TrialRow>> {
        let seed = derive_seed(cell.seed, t as u64);
        let x = crate::sampling::sample_dataset_with_root(&cell.spec, &root, &law, n, derive_seed(seed, DATA_STREAM))?;
        let vals = evaluate_on_sample(&stats, x.values().as_ref(), &ctx)?;
        let mut rows: Vec<TrialRow> = vals
            .iter()
            .zip(&labels)
            .zip(&theta)
            .map(|((&v, l), &th)| row(cell, t, l, "ground", transform(v, th, p), seed))
            .collect();
        if t < boot_runs {
            let data = prepare(&x, &cfg.quest)?;
            let bcfg = BootstrapConfig {
                b: cfg.b,
                n,
                p,
                varsigma_sq_hat: data.bundle.varsigma_sq_hat,
                spectrum_tilde: data.spectrum_tilde.clone(),
                master_seed: derive_seed(seed, BOOT_STREAM),
                statistics: stats.clone(),
            };
            let boot_law = gamma_xi_params(cfg.mc.expansion * p, cfg.mc.expansion as f64 * data.bundle.varsigma_sq_hat);
            let theta_tilde =
                centerings(cfg, &stats, &data.spectrum_tilde, &boot_law, n, derive_seed(seed, CENTER_STREAM))?;
            let draws = bootstrap_distribution(&bcfg, &BootstrapOptions { workers: Some(1), skip_failed: false })?;
            for (k, l) in labels.iter().enumerate() {
                let col: Vec<f64> = draws.column(k).into_iter().map(|v| transform(v, theta_tilde[k], p)).collect();
                rows.push(row(cell, t, l, "boot_mean", mean(&col), seed));
                rows.push(row(cell, t, l, "boot_sd", sd(&col), seed));
                rows.push(row(cell, t, l, "boot_p95", p95(&col), seed));
            }
        }
        Ok(rows)
    })?;
    let mut out = Vec::new();
    for r in per_trial {
        out.extend(r?);
    }
    Ok(out)
}

fn run_inference_cell(cfg: &ExperimentConfig, cell: &Cell, workers: Option<usize>) -> Result<Vec<TrialRow>> {
    let law = cell.law.law();
    let root = cell.spec.sqrt_factor()?;
    let r_true = cell.spec.stable_rank();
    let per_trial = parallel::map_indexed(workers, cfg.trials, |t| -> Result<Vec<TrialRow>> {
        let seed = derive_seed(cell.seed, t as u64);
        let x =
            crate::sampling::sample_dataset_with_root(&cell.spec, &root, &law, cfg.n, derive_seed(seed, DATA_STREAM))?;
        let data: PreparedData = prepare(&x, &cfg.quest)?;
        let opts = inference_opts(cfg, derive_seed(seed, BOOT_STREAM));
        let mut rows = Vec::new();
        if cfg.design == Design::Table5 {
            let res = stable_rank_ci_prepared(&data, cfg.b, cfg.alpha, &opts)?;
            let (lo, hi) = res.interval.expect("interval present");
            rows.push(row(cell, t, "ci_width_pct", "trial", 100.0 * (hi - lo) / r_true, seed));
            rows.push(row(cell, t, "ci_covered", "trial", f64::from(u8::from(lo <= r_true && r_true <= hi)), seed));
        } else {
            let res = stable_rank_test_prepared(&data, cfg.epsilon0, cfg.alpha, cfg.b, &opts)?;
            rows.push(row(cell, t, "rank_test_reject", "trial", f64::from(u8::from(res.reject == Some(true))), seed));
            rows.push(row(cell, t, "r_hat_over_p", "trial", data.bundle.r_hat / cell.p as f64, seed));
        }
        Ok(rows)
    })?;
    let mut out = Vec::new();
    for r in per_trial {
        out.extend(r?);
    }
    Ok(out)
}

fn reference_value(design: Design, row: &SummaryRow) -> String {
    let fmt_pair = |(m, s): (f64, f64)| format!("{m}({s})");
    match design.table_id() {
        Some(t @ 1..=4) => reference::moment_cell(t, &row.law, &row.setting, row.ratio)
            .map(|c| {
                format!(
                    "mean={};sd={};p95={};boot_mean={};boot_sd={};boot_p95={}",
                    c.ground[0],
                    c.ground[1],
                    c.ground[2],
                    fmt_pair(c.boot[0]),
                    fmt_pair(c.boot[1]),
                    fmt_pair(c.boot[2])
                )
            })
            .unwrap_or_default(),
        Some(5) => reference::coverage_cell(&row.law, &row.setting, row.ratio)
            .map(|c| match row.stat.as_str() {
                "ci_width_pct" => fmt_pair(c.width_pct),
                "ci_covered" => format!("{}", c.coverage_pct / 100.0),
                _ => String::new(),
            })
            .unwrap_or_default(),
        _ => String::new(),
    }
}

/// Aggregate per-trial rows into summary rows, one per (cell, stat), in order
/// of first appearance.
pub fn summarize(design: Design, rows: &[TrialRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, u64, String)> = Vec::new();
    for r in rows {
        let k = (r.law.clone(), r.setting.clone(), r.ratio.to_bits(), r.stat.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(law, setting, ratio_bits, stat)| {
            let ratio = f64::from_bits(ratio_bits);
            let pick = |kinds: &[&str]| -> Vec<f64> {
                rows.iter()
                    .filter(|r| {
                        r.law == law
                            && r.setting == setting
                            && r.ratio.to_bits() == ratio_bits
                            && r.stat == stat
                            && kinds.contains(&r.kind.as_str())
                    })
                    .map(|r| r.value)
                    .collect()
            };
            let ground = pick(&["ground", "trial"]);
            let bm = pick(&["boot_mean"]);
            let bs = pick(&["boot_sd"]);
            let bp = pick(&["boot_p95"]);
            let mut s = SummaryRow {
                law,
                setting,
                ratio,
                stat,
                ground_mean: mean(&ground),
                ground_sd: sd(&ground),
                ground_p95: p95(&ground),
                boot_mean_mean: mean(&bm),
                boot_mean_sd: sd(&bm),
                boot_sd_mean: mean(&bs),
                boot_sd_sd: sd(&bs),
                boot_p95_mean: mean(&bp),
                boot_p95_sd: sd(&bp),
                paper_ref_value: String::new(),
            };
            s.paper_ref_value = reference_value(design, &s);
            s
        })
        .collect()
}

pub fn write_trial_csv(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRIAL_HEADER)?;
    for r in rows {
        w.write_record([
            r.law.clone(),
            r.setting.clone(),
            fmt_num(r.ratio),
            r.trial.to_string(),
            r.stat.clone(),
            r.kind.clone(),
            fmt_num(r.value),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trial_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Data(format!("bad number {:?} in column {i}", &rec[i])))
        };
        out.push(TrialRow {
            law: rec[0].to_string(),
            setting: rec[1].to_string(),
            ratio: num(2)?,
            trial: rec[3].parse().map_err(|_| Error::Data("bad trial index".into()))?,
            stat: rec[4].to_string(),
            kind: rec[5].to_string(),
            value: num(6)?,
            seed: rec[7].parse().map_err(|_| Error::Data("bad seed".into()))?,
        });
    }
    Ok(out)
}

fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        let mut rec = vec![r.law.clone(), r.setting.clone(), fmt_num(r.ratio), r.stat.clone()];
        rec.extend(
            [
                r.ground_mean,
                r.ground_sd,
                r.ground_p95,
                r.boot_mean_mean,
                r.boot_mean_sd,
                r.boot_sd_mean,
                r.boot_sd_sd,
                r.boot_p95_mean,
                r.boot_p95_sd,
            ]
            .map(fmt_num),
        );
        rec.push(r.paper_ref_value.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with two decimals, next to the reference values.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let d2 = |v: f64| if v.is_nan() { "-".to_string() } else { format!("{v:.2}") };
    let mut s = String::from("law  setting          p/n   stat               mean    sd      95th    | boot mean      boot sd        boot 95th      | reference\n");
    for r in rows {
        let pair = |m: f64, sd: f64| if m.is_nan() { "-".to_string() } else { format!("{}({})", d2(m), d2(sd)) };
        s.push_str(&format!(
            "{:<4} {:<16} {:<5} {:<18} {:<7} {:<7} {:<7} | {:<14} {:<14} {:<14} | {}\n",
            r.law,
            r.setting,
            r.ratio,
            r.stat,
            d2(r.ground_mean),
            d2(r.ground_sd),
            d2(r.ground_p95),
            pair(r.boot_mean_mean, r.boot_mean_sd),
            pair(r.boot_sd_mean, r.boot_sd_sd),
            pair(r.boot_p95_mean, r.boot_p95_sd),
            r.paper_ref_value
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub library: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: usize,
    pub rows: usize,
    pub files: Vec<String>,
}

/// Run every cell of the grid and write `trials.csv`, `summary.csv`,
/// `table.txt` and `manifest.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig, workers: Option<usize>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let grid = cells(cfg)?;
    let mut rows = Vec::new();
    for cell in &grid {
        let r = match cfg.design {
            Design::Table5 | Design::RankPower => run_inference_cell(cfg, cell, workers)?,
            _ => run_moment_cell(cfg, cell, workers)?,
        };
        rows.extend(r);
    }
    let summary = summarize(cfg.design, &rows);
    let dir = &cfg.output_dir;
    let trial_csv = dir.join("trials.csv");
    let summary_csv = dir.join("summary.csv");
    let table = dir.join("table.txt");
    let manifest = dir.join("manifest.json");
    write_trial_csv(&trial_csv, &rows)?;
    write_summary_csv(&summary_csv, &summary)?;
    fs::write(&table, render_table(&summary))?;
    let m = Manifest {
        library: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        cells: grid.len(),
        rows: rows.len(),
        files: vec!["trials.csv".into(), "summary.csv".into(), "table.txt".into()],
    };
    fs::write(&manifest, serde_json::to_string_pretty(&m)?)?;
    Ok(ExperimentOutput { trial_csv, summary_csv, table, manifest, rows, summary })
}

/// Config reproducing one published table at a fraction of its trial counts:
/// 5000 ground datasets and 500 bootstrap runs of `B = 250` for the moment
/// tables, 500 intervals for the coverage table.
pub fn table_config(table_id: usize, scale: f64, output_dir: impl Into<PathBuf>) -> Result<ExperimentConfig> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::Config(format!("scale = {scale} must lie in (0, 1]")));
    }
    let design = Design::from_table_id(table_id)?;
    let (trials, boot) = if design == Design::Table5 {
        let t = (scale * 500.0).round() as usize;
        (t, 0)
    } else {
        ((scale * 5000.0).round() as usize, (scale * 500.0).round() as usize)
    };
    if trials.max(boot) < 50 || (design != Design::Table5 && boot < 50) {
        return Err(Error::Config(format!("scale {scale} gives fewer than 50 runs per cell")));
    }
    let mut cfg = ExperimentConfig::new(design, trials);
    cfg.boot_runs = Some(boot);
    cfg.output_dir = output_dir.into();
    Ok(cfg)
}

pub fn reproduce_table(
    table_id: usize,
    scale: f64,
    output_dir: impl Into<PathBuf>,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<ExperimentOutput> {
    let mut cfg = table_config(table_id, scale, output_dir)?;
    cfg.master_seed = master_seed;
    run_experiment(&cfg, workers)
}

/// Draw one dataset of a named setting; used by the CLI `simulate` command.
pub fn simulate(
    setting: Setting,
    law: &EllipticalLaw,
    n: usize,
    p: usize,
    seed: u64,
    rotate: bool,
) -> Result<crate::sampling::Dataset> {
    let rot = rotate.then(|| derive_seed(seed, label_hash("rotation")));
    let spec = make_covariance_setting(setting, p, rot)?;
    sample_dataset(&spec, law, n, seed)
}
