//! Parametric bootstrap for spectral statistics.
//!
//! Each replicate draws `n` rows `ξ*_i Σ̃^{1/2} u*_i` with `Σ̃` diagonal and
//! `ξ*²` from a radial law with mean `p` and variance `ς̂²`, then evaluates
//! one or more statistics on the eigenvalues of the resulting sample
//! covariance. Replicate `b` uses the stream seeded by
//! `derive_seed(master_seed, b)` and nothing else, so draws are identical for
//! any worker count and any execution order.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use faer::MatRef;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{sample_covariance_eigs_of, trace_moments_of};
use crate::mp::SpectralFunction;
use crate::parallel;
use crate::rng::{self, StreamRng};
use crate::sampling::{apply_sqrt, sample_radial_rows, RadialLaw};
use crate::spectra::SqrtFactor;

/// User statistic of the sorted eigenvalues.
pub type EigenFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A statistic of the sorted sample eigenvalues.
#[derive(Clone)]
pub enum StatisticSpec {
    /// `(1/p) Σ f(λ_j)`.
    Lss(SpectralFunction),
    LargestEig,
    /// `λ₁ − λ₂`.
    EigenGap,
    /// `r̂*/p − r̃/p`, the bootstrap analogue of the stable-rank error.
    StableRankStar,
    Custom {
        label: String,
        f: EigenFn,
    },
}

impl StatisticSpec {
    pub fn lss(f: SpectralFunction) -> Self {
        StatisticSpec::Lss(f)
    }

    pub fn custom(label: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        StatisticSpec::Custom { label: label.into(), f: Arc::new(f) }
    }

    pub fn label(&self) -> String {
        match self {
            StatisticSpec::Lss(f) => format!("lss:{}", f.label()),
            StatisticSpec::LargestEig => "largest_eig".into(),
            StatisticSpec::EigenGap => "eigen_gap".into(),
            StatisticSpec::StableRankStar => "stable_rank_star".into(),
            StatisticSpec::Custom { label, .. } => format!("custom:{label}"),
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "largest_eig" => Ok(StatisticSpec::LargestEig),
            "eigen_gap" => Ok(StatisticSpec::EigenGap),
            "stable_rank_star" => Ok(StatisticSpec::StableRankStar),
            other => match other.strip_prefix("lss:") {
                Some(f) => Ok(StatisticSpec::Lss(SpectralFunction::from_label(f)?)),
                None => Err(Error::Config(format!("unknown statistic {other:?}"))),
            },
        }
    }

    /// Whether the value is a function of `(tr Σ̂, tr Σ̂²)` alone.
    fn trace_only(&self) -> bool {
        matches!(
            self,
            StatisticSpec::StableRankStar
                | StatisticSpec::Lss(
                    SpectralFunction::Identity | SpectralFunction::Square | SpectralFunction::Constant
                )
        )
    }
}

impl fmt::Debug for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StatisticSpec({})", self.label())
    }
}

impl PartialEq for StatisticSpec {
    fn eq(&self, other: &Self) -> bool {
        self.label() == other.label()
    }
}

impl Serialize for StatisticSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for StatisticSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        StatisticSpec::from_label(&s).map_err(serde::de::Error::custom)
    }
}

/// Side inputs some statistics need besides the eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatContext {
    pub n: usize,
    /// `tr(Σ̃)²/(p·tr(Σ̃²))`, subtracted by [`StatisticSpec::StableRankStar`].
    pub tilde_rank_ratio: f64,
}

impl StatContext {
    pub fn new(n: usize, spectrum_tilde: &[f64]) -> Self {
        StatContext { n, tilde_rank_ratio: rank_ratio(spectrum_tilde) }
    }
}

/// `tr(S)²/(p·tr(S²))` for a diagonal, 0 when `tr(S²) = 0`.
pub fn rank_ratio(diag: &[f64]) -> f64 {
    let tr: f64 = diag.iter().sum();
    let tr_sq: f64 = diag.iter().map(|v| v * v).sum();
    if tr_sq == 0.0 {
        0.0
    } else {
        tr * tr / (diag.len() as f64 * tr_sq)
    }
}

fn stable_rank_star(tr: f64, tr_sq: f64, p: usize, ctx: &StatContext) -> f64 {
    let denom = tr_sq - tr * tr / ctx.n as f64;
    if denom == 0.0 || ctx.tilde_rank_ratio == 0.0 {
        return 0.0;
    }
    tr * tr / (p as f64 * denom) - ctx.tilde_rank_ratio
}

fn finite(label: impl FnOnce() -> String, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{} evaluated to {v}", label())))
    }
}

/// Evaluate a statistic on eigenvalues sorted in descending order.
pub fn evaluate_statistic(spec: &StatisticSpec, eigs: &[f64], ctx: &StatContext) -> Result<f64> {
    let p = eigs.len();
    if p == 0 {
        return Err(Error::Dimension("no eigenvalues".into()));
    }
    let v = match spec {
        StatisticSpec::Lss(f) => eigs.iter().map(|&l| f.eval(l)).sum::<f64>() / p as f64,
        StatisticSpec::LargestEig => eigs[0],
        StatisticSpec::EigenGap => {
            if p < 2 {
                return Err(Error::Dimension("eigen gap needs p >= 2".into()));
            }
            eigs[0] - eigs[1]
        }
        StatisticSpec::StableRankStar => {
            let tr: f64 = eigs.iter().sum();
            let tr_sq: f64 = eigs.iter().map(|v| v * v).sum();
            stable_rank_star(tr, tr_sq, p, ctx)
        }
        StatisticSpec::Custom { f, .. } => f(eigs),
    };
    finite(|| spec.label(), v)
}

/// Trace-only evaluation; `None` when the statistic needs the full spectrum.
fn evaluate_from_traces(spec: &StatisticSpec, tr: f64, tr_sq: f64, p: usize, ctx: &StatContext) -> Option<f64> {
    let pf = p as f64;
    match spec {
        StatisticSpec::Lss(SpectralFunction::Identity) => Some(tr / pf),
        StatisticSpec::Lss(SpectralFunction::Square) => Some(tr_sq / pf),
        StatisticSpec::Lss(SpectralFunction::Constant) => Some(1.0),
        StatisticSpec::StableRankStar => Some(stable_rank_star(tr, tr_sq, p, ctx)),
        _ => None,
    }
}

/// Radial law used to draw `ξ*²`: Gamma matched to mean `p` and variance
/// `ς̂²`, or the point mass at `p` when `ς̂² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialSpec {
    Gamma { shape: f64, scale: f64 },
    PointMass { value: f64 },
}

/// Gamma parameters with mean `p` and variance `varsigma_sq_hat`.
pub fn gamma_xi_params(p: usize, varsigma_sq_hat: f64) -> RadialSpec {
    let pf = p as f64;
    if varsigma_sq_hat > 0.0 {
        RadialSpec::Gamma { shape: pf * pf / varsigma_sq_hat, scale: varsigma_sq_hat / pf }
    } else {
        RadialSpec::PointMass { value: pf }
    }
}

impl RadialLaw for RadialSpec {
    fn sample_xi_sq(&self, _p: usize, rng: &mut StreamRng) -> Result<f64> {
        match *self {
            RadialSpec::Gamma { shape, scale } => Ok(Gamma::new(shape, scale)
                .map_err(|e| Error::Config(format!("gamma({shape}, {scale}): {e}")))?
                .sample(rng)),
            RadialSpec::PointMass { value } => Ok(value),
        }
    }
}

/// Inputs of one bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    #[serde(rename = "B")]
    pub b: usize,
    pub n: usize,
    pub p: usize,
    pub varsigma_sq_hat: f64,
    /// Diagonal of `Σ̃`, length `p`.
    pub spectrum_tilde: Vec<f64>,
    pub master_seed: u64,
    pub statistics: Vec<StatisticSpec>,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::Config("B must be >= 1".into()));
        }
        if self.n == 0 || self.p == 0 {
            return Err(Error::Config("n and p must be >= 1".into()));
        }
        if self.spectrum_tilde.len() != self.p {
            return Err(Error::Dimension(format!(
                "spectrum_tilde has length {}, expected p = {}",
                self.spectrum_tilde.len(),
                self.p
            )));
        }
        if self.spectrum_tilde.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("spectrum_tilde must be finite and nonnegative".into()));
        }
        if !(self.varsigma_sq_hat.is_finite() && self.varsigma_sq_hat >= 0.0) {
            return Err(Error::Config(format!("varsigma_sq_hat = {} must be >= 0", self.varsigma_sq_hat)));
        }
        if self.statistics.is_empty() {
            return Err(Error::Config("at least one statistic is required".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn context(&self) -> StatContext {
        StatContext::new(self.n, &self.spectrum_tilde)
    }

    pub fn replicate_seed(&self, index: usize) -> u64 {
        rng::derive_seed(self.master_seed, index as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BootstrapOptions {
    /// `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Drop failing replicates instead of aborting.
    pub skip_failed: bool,
}

/// Bootstrap output: one row of statistic values per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    pub labels: Vec<String>,
    pub replicate_index: Vec<usize>,
    pub per_replicate_seeds: Vec<u64>,
    pub values: Vec<Vec<f64>>,
    /// Replicates dropped under `skip_failed`, with their error messages.
    pub failed: Vec<(usize, String)>,
}

impl BootstrapDraws {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// All draws of statistic `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["replicate_index".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("seed".into());
        w.write_record(&header)?;
        for ((i, seed), row) in self.replicate_index.iter().zip(&self.per_replicate_seeds).zip(&self.values) {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:e}")));
            rec.push(seed.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draw one bootstrap sample with a given radial law and evaluate every
/// configured statistic on it.
pub fn bootstrap_replicate_with(config: &BootstrapConfig, radial: &dyn RadialLaw, index: usize) -> Result<Vec<f64>> {
    let wrap = |e: Error| Error::Replicate { index, source: Box::new(e) };
    let (n, p) = (config.n, config.p);
    let z = sample_radial_rows(radial, n, p, config.replicate_seed(index)).map_err(wrap)?;
    let root = SqrtFactor::Diagonal(config.spectrum_tilde.iter().map(|v| v.sqrt()).collect());
    let x = apply_sqrt(z, &root);
    evaluate_on_sample(&config.statistics, x.as_ref(), &config.context()).map_err(wrap)
}

/// Evaluate statistics on the sample covariance of the rows of `x`, skipping
/// the eigensolve when every statistic depends only on the traces.
pub fn evaluate_on_sample(stats: &[StatisticSpec], x: MatRef<'_, f64>, ctx: &StatContext) -> Result<Vec<f64>> {
    let p = x.ncols();
    if stats.iter().all(StatisticSpec::trace_only) {
        let (tr, tr_sq) = trace_moments_of(x);
        return stats
            .iter()
            .map(|s| {
                let v = evaluate_from_traces(s, tr, tr_sq, p, ctx).expect("trace-only statistic");
                finite(|| s.label(), v)
            })
            .collect();
    }
    let eigs = sample_covariance_eigs_of(x)?;
    stats.iter().map(|s| evaluate_statistic(s, &eigs, ctx)).collect()
}

/// One replicate with the default Gamma radial law.
pub fn bootstrap_replicate(config: &BootstrapConfig, index: usize) -> Result<Vec<f64>> {
    config.validate()?;
    let radial = gamma_xi_params(config.p, config.varsigma_sq_hat);
    bootstrap_replicate_with(config, &radial, index)
}

/// All `B` replicates with the default Gamma radial law.
pub fn bootstrap_distribution(config: &BootstrapConfig, opts: &BootstrapOptions) -> Result<BootstrapDraws> {
    let radial = gamma_xi_params(config.p, config.varsigma_sq_hat);
    bootstrap_distribution_with(config, &radial, opts)
}

/// All `B` replicates with a caller-supplied radial law. A replacement law
/// should keep `E ξ*² = p` and `var ξ*² = ς̂²` for the bootstrap to stay
/// consistent.
pub fn bootstrap_distribution_with(
    config: &BootstrapConfig,
    radial: &dyn RadialLaw,
    opts: &BootstrapOptions,
) -> Result<BootstrapDraws> {
    config.validate()?;
    let results = parallel::map_indexed(opts.workers, config.b, |b| bootstrap_replicate_with(config, radial, b))?;
    let mut draws = BootstrapDraws {
        labels: config.statistics.iter().map(StatisticSpec::label).collect(),
        replicate_index: Vec::with_capacity(config.b),
        per_replicate_seeds: Vec::with_capacity(config.b),
        values: Vec::with_capacity(config.b),
        failed: Vec::new(),
    };
    for (b, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => {
                draws.replicate_index.push(b);
                draws.per_replicate_seeds.push(config.replicate_seed(b));
                draws.values.push(row);
            }
            Err(e) if opts.skip_failed => draws.failed.push((b, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    if draws.is_empty() {
        return Err(Error::InsufficientData("every bootstrap replicate failed".into()));
    }
    Ok(draws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{make_covariance_setting, Setting};
    use proptest::prelude::*;

    fn config(p: usize, n: usize, vs: f64, tilde: Vec<f64>, stats: Vec<StatisticSpec>) -> BootstrapConfig {
        BootstrapConfig { b: 20, n, p, varsigma_sq_hat: vs, spectrum_tilde: tilde, master_seed: 11, statistics: stats }
    }

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn gamma_params_match_mean_and_variance() {
        assert_eq!(gamma_xi_params(100, 200.0), RadialSpec::Gamma { shape: 50.0, scale: 2.0 });
        assert_eq!(gamma_xi_params(100, 0.0), RadialSpec::PointMass { value: 100.0 });
    }

    #[test]
    fn gamma_radial_moments() {
        let law = gamma_xi_params(100, 200.0);
        let mut r = rng::stream(5);
        let draws: Vec<f64> = (0..1_000_000).map(|_| law.sample_xi_sq(100, &mut r).unwrap()).collect();
        let (m, sd) = mean_sd(&draws);
        assert!((m - 100.0).abs() < 0.5, "mean {m}");
        assert!((sd * sd / 200.0 - 1.0).abs() < 0.03, "var {}", sd * sd);
    }

    #[test]
    fn point_mass_radius_is_exact() {
        let p = 30;
        let cfg = config(p, 10, 0.0, vec![1.0; p], vec![StatisticSpec::lss(SpectralFunction::Identity)]);
        let z = sample_radial_rows(&gamma_xi_params(p, 0.0), 10, p, 3).unwrap();
        for i in 0..10 {
            let norm: f64 = (0..p).map(|j| z[(i, j)] * z[(i, j)]).sum();
            assert!((norm - p as f64).abs() < 1e-10);
        }
        let draws = bootstrap_distribution(&cfg, &BootstrapOptions::default()).unwrap();
        for v in draws.column(0) {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn scaled_identity_trace_is_exact() {
        let p = 25;
        let s = 3.5;
        let mut cfg = config(p, 40, 0.0, vec![s; p], vec![StatisticSpec::lss(SpectralFunction::Identity)]);
        cfg.statistics.push(StatisticSpec::LargestEig);
        for row in bootstrap_distribution(&cfg, &BootstrapOptions::default()).unwrap().values {
            assert!((row[0] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_examples() {
        let ctx = StatContext { n: 10, tilde_rank_ratio: 0.5 };
        let v = evaluate_statistic(&StatisticSpec::lss(SpectralFunction::Square), &[2.0, 1.0, 1.0], &ctx).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(evaluate_statistic(&StatisticSpec::EigenGap, &[3.0, 3.0], &ctx).unwrap(), 0.0);
        assert!(matches!(evaluate_statistic(&StatisticSpec::EigenGap, &[3.0], &ctx), Err(Error::Dimension(_))));
        let zero_ctx = StatContext { n: 10, tilde_rank_ratio: 0.0 };
        assert_eq!(evaluate_statistic(&StatisticSpec::StableRankStar, &[0.0, 0.0], &zero_ctx).unwrap(), 0.0);
        assert!(matches!(
            evaluate_statistic(&StatisticSpec::lss(SpectralFunction::XMinusLog), &[1.0, 0.0], &ctx),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn zero_spectrum_gives_zero_largest_eig() {
        let cfg = config(5, 8, 10.0, vec![0.0; 5], vec![StatisticSpec::LargestEig]);
        assert_eq!(bootstrap_replicate(&cfg, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn log_statistic_with_p_above_n_reports_the_replicate() {
        let cfg = config(20, 10, 40.0, vec![1.0; 20], vec![StatisticSpec::lss(SpectralFunction::XMinusLog)]);
        match bootstrap_replicate(&cfg, 7) {
            Err(Error::Replicate { index, .. }) => assert_eq!(index, 7),
            other => panic!("{other:?}"),
        }
        let opts = BootstrapOptions { skip_failed: true, ..Default::default() };
        assert!(matches!(bootstrap_distribution(&cfg, &opts), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn trace_path_matches_eigen_path() {
        let p = 40;
        let tilde: Vec<f64> = (0..p).map(|j| 1.0 + j as f64 / 10.0).collect();
        let fast = vec![
            StatisticSpec::lss(SpectralFunction::Identity),
            StatisticSpec::lss(SpectralFunction::Square),
            StatisticSpec::StableRankStar,
        ];
        let mut slow = fast.clone();
        slow.push(StatisticSpec::LargestEig);
        let a = bootstrap_replicate(&config(p, 30, 90.0, tilde.clone(), fast), 2).unwrap();
        let b = bootstrap_replicate(&config(p, 30, 90.0, tilde, slow), 2).unwrap();
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-10 * a[k].abs().max(1.0), "{k}: {} vs {}", a[k], b[k]);
        }
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let p = 30;
        let mut cfg = config(p, 50, 60.0, vec![1.0; p], vec![StatisticSpec::LargestEig, StatisticSpec::EigenGap]);
        cfg.b = 17;
        let one = bootstrap_distribution(&cfg, &BootstrapOptions { workers: Some(1), ..Default::default() }).unwrap();
        let three = bootstrap_distribution(&cfg, &BootstrapOptions { workers: Some(3), ..Default::default() }).unwrap();
        assert_eq!(one, three);
        assert_eq!(one.values[4], bootstrap_replicate(&cfg, 4).unwrap());
        cfg.b = 1;
        let single = bootstrap_distribution(&cfg, &BootstrapOptions::default()).unwrap();
        assert_eq!(single.values[0], bootstrap_replicate(&cfg, 0).unwrap());
    }

    #[test]
    fn largest_eig_near_edge() {
        let (n, p) = (400, 200);
        let mut cfg = config(p, n, 2.0 * p as f64, vec![1.0; p], vec![StatisticSpec::LargestEig]);
        cfg.b = 40;
        let (m, _) = mean_sd(&bootstrap_distribution(&cfg, &BootstrapOptions::default()).unwrap().column(0));
        let edge = (1.0 + 0.5f64.sqrt()).powi(2);
        assert!((m - edge).abs() < 0.05 * edge, "mean λ₁ {m} vs {edge}");
    }

    #[test]
    fn square_lss_spread_for_s1() {
        let (n, p) = (400, 200);
        let tilde = make_covariance_setting(Setting::S1, p, None).unwrap().eigenvalues().to_vec();
        let mut cfg = config(p, n, 2.0 * p as f64, tilde, vec![StatisticSpec::lss(SpectralFunction::Square)]);
        cfg.b = 250;
        let scaled: Vec<f64> = bootstrap_distribution(&cfg, &BootstrapOptions::default())
            .unwrap()
            .column(0)
            .iter()
            .map(|v| v * p as f64)
            .collect();
        let (_, sd) = mean_sd(&scaled);
        assert!((sd / 3.27 - 1.0).abs() < 0.15, "sd {sd}");
    }

    #[test]
    fn json_and_csv_round_trip() {
        let cfg = config(
            4,
            6,
            1.5,
            vec![2.0, 1.0, 1.0, 0.5],
            vec![StatisticSpec::lss(SpectralFunction::XMinusLog), StatisticSpec::StableRankStar],
        );
        let back = BootstrapConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<StatisticSpec>("\"custom:x\"").is_err());

        let draws = bootstrap_distribution(&cfg, &BootstrapOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("draws.csv");
        draws.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("replicate_index,lss:x_minus_log,stable_rank_star,seed\n"));
        assert_eq!(text.lines().count(), cfg.b + 1);
    }

    #[test]
    fn custom_statistic() {
        let s = StatisticSpec::custom("trace_top2", |e| e[0] + e[1]);
        let ctx = StatContext { n: 1, tilde_rank_ratio: 1.0 };
        assert_eq!(evaluate_statistic(&s, &[3.0, 2.0, 1.0], &ctx).unwrap(), 5.0);
        assert_eq!(s.label(), "custom:trace_top2");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn replicates_are_independent_of_neighbours(seed in any::<u64>(), idx in 0usize..50) {
            let mut cfg = config(6, 9, 5.0, vec![1.0, 1.0, 2.0, 0.5, 0.3, 0.0], vec![StatisticSpec::LargestEig]);
            cfg.master_seed = seed;
            cfg.b = 50;
            let all = bootstrap_distribution(&cfg, &BootstrapOptions::default()).unwrap();
            prop_assert_eq!(&all.values[idx], &bootstrap_replicate(&cfg, idx).unwrap());
        }

        #[test]
        fn radial_draws_match_target_moments(p in 5usize..60, ratio in 0.2f64..5.0) {
            let vs = ratio * p as f64;
            let law = gamma_xi_params(p, vs);
            let mut r = rng::stream(p as u64);
            let k = 4000;
            let draws: Vec<f64> = (0..k).map(|_| law.sample_xi_sq(p, &mut r).unwrap()).collect();
            let (m, _) = mean_sd(&draws);
            let se = (vs / k as f64).sqrt();
            prop_assert!((m - p as f64).abs() < 5.0 * se, "mean {} target {} se {}", m, p, se);
        }
    }
}
