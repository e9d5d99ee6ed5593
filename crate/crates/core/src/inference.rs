//! Stable-rank confidence interval, rank-threshold test and sphericity test,
//! all calibrated by the parametric bootstrap of [`crate::bootstrap`].

use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_distribution, BootstrapConfig, BootstrapOptions, StatisticSpec};
use crate::error::{Error, Result};
use crate::estimators::{eigenvalue_cap, estimate_all, EstimatorBundle};
use crate::quest::{estimate_population_spectrum, QuestOptions};
use crate::sampling::Dataset;

/// Order statistic `⌈q·B⌉` (1-based) of the draws.
pub fn empirical_quantile(draws: &[f64], q: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InsufficientData("no draws".into()));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Config(format!("quantile level {q} outside (0, 1)")));
    }
    if draws.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("NaN among draws".into()));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let b = s.len();
    // the epsilon keeps exact products like 0.5·4 from rounding up a rank
    let k = ((q * b as f64 - 1e-9).ceil() as usize).clamp(1, b);
    Ok(s[k - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceOptions {
    pub quest: QuestOptions,
    pub workers: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    StableRankCi,
    StableRankTest,
    SphericityTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankInferenceResult {
    pub procedure: Procedure,
    pub n: usize,
    pub p: usize,
    pub r_hat: f64,
    /// Stable rank of the bootstrap population `Σ̃`.
    pub r_tilde: f64,
    pub varsigma_sq_hat: f64,
    pub interval: Option<(f64, f64)>,
    pub q_lo: f64,
    pub q_hi: f64,
    /// Left-hand side of the rejection rule, when a test was run.
    pub statistic: Option<f64>,
    pub epsilon0: Option<f64>,
    pub reject: Option<bool>,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: usize,
}

impl RankInferenceResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One-line human-readable summary.
    pub fn summary(&self) -> String {
        match self.procedure {
            Procedure::StableRankCi => {
                let (lo, hi) = self.interval.unwrap_or((f64::NAN, f64::NAN));
                format!(
                    "stable rank {:.4}, {:.1}% interval [{lo:.4}, {hi:.4}] (n={}, p={}, B={})",
                    self.r_hat,
                    100.0 * (1.0 - self.alpha),
                    self.n,
                    self.p,
                    self.b
                )
            }
            Procedure::StableRankTest => format!(
                "rank test r/p <= {}: r_hat/p - eps0 = {:.5}, critical {:.5}, {} at level {}",
                self.epsilon0.unwrap_or(f64::NAN),
                self.statistic.unwrap_or(f64::NAN),
                self.q_hi,
                if self.reject == Some(true) { "reject" } else { "accept" },
                self.alpha
            ),
            Procedure::SphericityTest => format!(
                "sphericity: r_hat/p - 1 = {:.5}, critical {:.5}, {} at level {}",
                self.statistic.unwrap_or(f64::NAN),
                self.q_lo,
                if self.reject == Some(true) { "reject" } else { "accept" },
                self.alpha
            ),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("alpha = {alpha} must lie in (0, 1)")))
    }
}

/// Estimators plus the capped spectrum estimate used as `Σ̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub bundle: EstimatorBundle,
    pub spectrum_tilde: Vec<f64>,
}

pub fn prepare(x: &Dataset, quest: &QuestOptions) -> Result<PreparedData> {
    let bundle = estimate_all(x)?;
    let est = estimate_population_spectrum(&bundle.sample_eigs, bundle.n, quest)?;
    let spectrum_tilde = eigenvalue_cap(&est.eigenvalues, bundle.b_hat);
    Ok(PreparedData { bundle, spectrum_tilde })
}

fn rank_draws(
    bundle: &EstimatorBundle,
    spectrum_tilde: Vec<f64>,
    b: usize,
    opts: &InferenceOptions,
) -> Result<Vec<f64>> {
    let cfg = BootstrapConfig {
        b,
        n: bundle.n,
        p: bundle.p,
        varsigma_sq_hat: bundle.varsigma_sq_hat,
        spectrum_tilde,
        master_seed: opts.seed,
        statistics: vec![StatisticSpec::StableRankStar],
    };
    let draws = bootstrap_distribution(&cfg, &BootstrapOptions { workers: opts.workers, skip_failed: false })?;
    Ok(draws.column(0))
}

fn stable_rank_of(diag: &[f64]) -> f64 {
    crate::bootstrap::rank_ratio(diag) * diag.len() as f64
}

/// `[r̂ − p·q̂(1−α/2), r̂ − p·q̂(α/2)]`.
pub fn stable_rank_ci(x: &Dataset, b: usize, alpha: f64, opts: &InferenceOptions) -> Result<RankInferenceResult> {
    check_alpha(alpha)?;
    stable_rank_ci_prepared(&prepare(x, &opts.quest)?, b, alpha, opts)
}

pub fn stable_rank_ci_prepared(
    data: &PreparedData,
    b: usize,
    alpha: f64,
    opts: &InferenceOptions,
) -> Result<RankInferenceResult> {
    check_alpha(alpha)?;
    let bundle = &data.bundle;
    let draws = rank_draws(bundle, data.spectrum_tilde.clone(), b, opts)?;
    let q_lo = empirical_quantile(&draws, alpha / 2.0)?;
    let q_hi = empirical_quantile(&draws, 1.0 - alpha / 2.0)?;
    let pf = bundle.p as f64;
    Ok(RankInferenceResult {
        procedure: Procedure::StableRankCi,
        n: bundle.n,
        p: bundle.p,
        r_hat: bundle.r_hat,
        r_tilde: stable_rank_of(&data.spectrum_tilde),
        varsigma_sq_hat: bundle.varsigma_sq_hat,
        interval: Some((bundle.r_hat - pf * q_hi, bundle.r_hat - pf * q_lo)),
        q_lo,
        q_hi,
        statistic: None,
        epsilon0: None,
        reject: None,
        alpha,
        b,
    })
}

/// Test of `r/p ≤ ε₀`: reject when `r̂/p − ε₀ > q̂(1−α)`.
pub fn stable_rank_test(
    x: &Dataset,
    epsilon0: f64,
    alpha: f64,
    b: usize,
    opts: &InferenceOptions,
) -> Result<RankInferenceResult> {
    check_alpha(alpha)?;
    stable_rank_test_prepared(&prepare(x, &opts.quest)?, epsilon0, alpha, b, opts)
}

pub fn stable_rank_test_prepared(
    data: &PreparedData,
    epsilon0: f64,
    alpha: f64,
    b: usize,
    opts: &InferenceOptions,
) -> Result<RankInferenceResult> {
    check_alpha(alpha)?;
    if !(epsilon0 > 0.0 && epsilon0 < 1.0) {
        return Err(Error::Config(format!("epsilon0 = {epsilon0} must lie in (0, 1)")));
    }
    let bundle = &data.bundle;
    let draws = rank_draws(bundle, data.spectrum_tilde.clone(), b, opts)?;
    let q_lo = empirical_quantile(&draws, alpha)?;
    let q_hi = empirical_quantile(&draws, 1.0 - alpha)?;
    let stat = bundle.r_hat / bundle.p as f64 - epsilon0;
    Ok(RankInferenceResult {
        procedure: Procedure::StableRankTest,
        n: bundle.n,
        p: bundle.p,
        r_hat: bundle.r_hat,
        r_tilde: stable_rank_of(&data.spectrum_tilde),
        varsigma_sq_hat: bundle.varsigma_sq_hat,
        interval: None,
        q_lo,
        q_hi,
        statistic: Some(stat),
        epsilon0: Some(epsilon0),
        reject: Some(stat > q_hi),
        alpha,
        b,
    })
}

/// Test of `Σ ∝ I`: bootstrap with `Σ̃ = I`, reject when `r̂/p − 1 ≤ q̂'(α)`.
pub fn sphericity_test(x: &Dataset, alpha: f64, b: usize, opts: &InferenceOptions) -> Result<RankInferenceResult> {
    check_alpha(alpha)?;
    sphericity_test_bundle(&estimate_all(x)?, alpha, b, opts)
}

pub fn sphericity_test_bundle(
    bundle: &EstimatorBundle,
    alpha: f64,
    b: usize,
    opts: &InferenceOptions,
) -> Result<RankInferenceResult> {
    check_alpha(alpha)?;
    let draws = rank_draws(bundle, vec![1.0; bundle.p], b, opts)?;
    let q_lo = empirical_quantile(&draws, alpha)?;
    let q_hi = empirical_quantile(&draws, 1.0 - alpha)?;
    let stat = bundle.r_hat / bundle.p as f64 - 1.0;
    Ok(RankInferenceResult {
        procedure: Procedure::SphericityTest,
        n: bundle.n,
        p: bundle.p,
        r_hat: bundle.r_hat,
        r_tilde: bundle.p as f64,
        varsigma_sq_hat: bundle.varsigma_sq_hat,
        interval: None,
        q_lo,
        q_hi,
        statistic: Some(stat),
        epsilon0: None,
        reject: Some(stat <= q_lo),
        alpha,
        b,
    })
}

/// Limiting covariance of the first two spectral moments and the implied
/// asymptotic variance of `r̂ − r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitMoments {
    /// `∫tʲ dH`, `j = 1..4`.
    pub phi: [f64; 4],
    pub c: f64,
    pub tau: f64,
    pub k: [[f64; 2]; 2],
    pub grad: [f64; 2],
    pub var_rank: f64,
}

/// Quadratic form `∇gᵀ K ∇g` for the stable-rank map.
pub fn limiting_rank_variance(phi: [f64; 4], c: f64, tau: f64) -> Result<LimitMoments> {
    let [p1, p2, p3, p4] = phi;
    if !(p2 > 0.0) {
        return Err(Error::Domain(format!("second moment {p2} must be positive")));
    }
    if phi.iter().chain([&c, &tau]).any(|v| !v.is_finite()) {
        return Err(Error::Domain("moments, c and tau must be finite".into()));
    }
    let t2 = tau - 2.0;
    let s = c * p1 * p1 + p2;
    let k11 = 2.0 * c * p2 + c * t2 * p1 * p1;
    let k12 = 4.0 * c * p3 + 4.0 * c * c * p1 * p2 + 2.0 * c * t2 * p1 * s;
    let k22 = 8.0 * c * p4
        + 4.0 * c * c * p2 * p2
        + 16.0 * c * c * p1 * p3
        + 8.0 * c.powi(3) * p1 * p1 * p2
        + 4.0 * c * t2 * s * s;
    let g1 = 2.0 * p1 / p2 + 2.0 * c * p1.powi(3) / (p2 * p2);
    let g2 = -p1 * p1 / (p2 * p2);
    let terms = [g1 * g1 * k11, 2.0 * g1 * g2 * k12, g2 * g2 * k22];
    let mut var = terms.iter().sum::<f64>();
    let size = terms.iter().map(|v| v.abs()).sum::<f64>();
    if var < 0.0 {
        if var >= -1e-10 * size.max(1.0) {
            var = 0.0;
        } else {
            return Err(Error::Domain(format!(
                "negative limiting variance {var}; moments are not from a distribution"
            )));
        }
    }
    Ok(LimitMoments { phi, c, tau, k: [[k11, k12], [k12, k22]], grad: [g1, g2], var_rank: var })
}

/// The same variance written out in closed form, free of `τ`.
pub fn limiting_rank_variance_closed_form(phi: [f64; 4], c: f64) -> Result<f64> {
    let [p1, p2, p3, p4] = phi;
    if !(p2 > 0.0) {
        return Err(Error::Domain(format!("second moment {p2} must be positive")));
    }
    Ok(4.0 * c * p1 * p1 / p2.powi(4)
        * (c * p1 * p1 * p2 * p2 + 2.0 * p1 * p1 * p4 + 2.0 * p2.powi(3) - 4.0 * p1 * p2 * p3))
}
