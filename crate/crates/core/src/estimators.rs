//! Plug-in estimators computed from a single dataset.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::sampling::Dataset;

/// Everything Algorithm-1 style inference needs from one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorBundle {
    pub n: usize,
    pub p: usize,
    /// Estimate of `tr(Σ²)`.
    pub alpha_hat: f64,
    /// Sample variance of the squared row norms.
    pub beta_hat: f64,
    /// `tr(Σ̂)²`.
    pub gamma_hat: f64,
    pub varsigma_sq_hat: f64,
    /// Cap for the spectrum estimate: `λ₁(Σ̂) + 1`.
    pub b_hat: f64,
    pub r_hat: f64,
    /// Eigenvalues of `Σ̂`, descending.
    pub sample_eigs: Vec<f64>,
}

impl EstimatorBundle {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn check_finite(x: MatRef<'_, f64>) -> Result<()> {
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            if !x[(i, j)].is_finite() {
                return Err(Error::Data(format!("non-finite entry at row {i}, column {j}")));
            }
        }
    }
    Ok(())
}

/// The smaller of `XᵀX/n` and `XXᵀ/n`; both share their nonzero spectrum.
fn small_gram(x: MatRef<'_, f64>) -> Mat<f64> {
    let n = x.nrows() as f64;
    let mut g = if x.ncols() <= x.nrows() { linalg::gram_cols(x) } else { linalg::gram_rows(x) };
    linalg::scale_in_place(&mut g, 1.0 / n);
    g
}

/// Eigenvalues of `XᵀX/n` for a raw matrix, descending, clamped at zero.
pub fn sample_covariance_eigs_of(x: MatRef<'_, f64>) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    if n == 0 || p == 0 {
        return Err(Error::Dimension("need n, p >= 1".into()));
    }
    check_finite(x)?;
    let g = small_gram(x);
    let mut eigs = linalg::sym_eigenvalues_desc(g.as_ref())?;
    eigs.iter_mut().for_each(|v| *v = v.max(0.0));
    eigs.resize(p, 0.0);
    Ok(eigs)
}

/// Eigenvalues of the sample covariance `Σ̂ = XᵀX/n`, descending. When
/// `p > n` the `n × n` Gram matrix is used and `p - n` exact zeros appended.
pub fn sample_covariance_eigs(x: &Dataset) -> Result<Vec<f64>> {
    sample_covariance_eigs_of(x.values().as_ref())
}

/// `(tr Σ̂, tr Σ̂²)` without an eigensolve.
pub fn trace_moments_of(x: MatRef<'_, f64>) -> (f64, f64) {
    let g = small_gram(x);
    (linalg::trace(g.as_ref()), linalg::frobenius_sq(g.as_ref()))
}

/// `(α̂, β̂, γ̂)`.
pub fn estimate_moments(x: &Dataset) -> Result<(f64, f64, f64)> {
    let n = x.n();
    if n < 2 {
        return Err(Error::InsufficientData(format!("moment estimates need n >= 2, got {n}")));
    }
    let (tr, tr_sq) = trace_moments_of(x.values().as_ref());
    let nf = n as f64;
    let alpha = tr_sq - tr * tr / nf;
    let norms = x.row_norms_sq();
    let mean = norms.iter().sum::<f64>() / nf;
    let beta = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok((alpha, beta, tr * tr))
}

/// `(p(p+2)(β̂ − 2α̂)/(γ̂ + 2α̂) + 2p)₊`.
pub fn estimate_varsigma_sq(alpha_hat: f64, beta_hat: f64, gamma_hat: f64, p: usize) -> Result<f64> {
    let denom = gamma_hat + 2.0 * alpha_hat;
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateInput(format!("gamma_hat + 2 alpha_hat = {denom}")));
    }
    let pf = p as f64;
    Ok((pf * (pf + 2.0) * (beta_hat - 2.0 * alpha_hat) / denom + 2.0 * pf).max(0.0))
}

/// `tr² / (tr(Σ̂²) − tr²/n)`, or `n` when the denominator vanishes.
pub fn stable_rank_from_traces(tr: f64, tr_sq: f64, n: usize) -> f64 {
    let nf = n as f64;
    let denom = tr_sq - tr * tr / nf;
    if denom == 0.0 {
        nf
    } else {
        tr * tr / denom
    }
}

pub fn stable_rank_hat(sample_eigs: &[f64], n: usize) -> f64 {
    let tr: f64 = sample_eigs.iter().sum();
    let tr_sq: f64 = sample_eigs.iter().map(|v| v * v).sum();
    stable_rank_from_traces(tr, tr_sq, n)
}

/// Elementwise `min(λ, b)`.
pub fn eigenvalue_cap(quest_eigs: &[f64], b_hat: f64) -> Vec<f64> {
    quest_eigs.iter().map(|&v| v.min(b_hat)).collect()
}

/// All estimators at once.
pub fn estimate_all(x: &Dataset) -> Result<EstimatorBundle> {
    let (alpha_hat, beta_hat, gamma_hat) = estimate_moments(x)?;
    let sample_eigs = sample_covariance_eigs(x)?;
    let varsigma_sq_hat = estimate_varsigma_sq(alpha_hat, beta_hat, gamma_hat, x.p())?;
    let (tr, tr_sq) = trace_moments_of(x.values().as_ref());
    Ok(EstimatorBundle {
        n: x.n(),
        p: x.p(),
        alpha_hat,
        beta_hat,
        gamma_hat,
        varsigma_sq_hat,
        b_hat: sample_eigs[0] + 1.0,
        r_hat: stable_rank_from_traces(tr, tr_sq, x.n()),
        sample_eigs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::sampling::{sample_dataset, EllipticalLaw};
    use crate::spectra::{make_covariance_setting, CovarianceSpec, Setting};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ds(rows: &[Vec<f64>]) -> Dataset {
        Dataset::from_rows(rows).unwrap()
    }

    #[test]
    fn rank_one_and_identity() {
        let e = sample_covariance_eigs(&ds(&[vec![3.0, 4.0]])).unwrap();
        assert_eq!(e.len(), 2);
        assert!((e[0] - 25.0).abs() < 1e-12 && e[1] == 0.0);
        let e = sample_covariance_eigs(&ds(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-15 && (e[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gram_route_matches_direct_route() {
        let mut r = rng::stream(8);
        for (n, p) in [(5, 3), (3, 5), (7, 7)] {
            let x = Mat::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
            let via_small = sample_covariance_eigs_of(x.as_ref()).unwrap();
            let mut cov = linalg::gram_cols(x.as_ref());
            linalg::scale_in_place(&mut cov, 1.0 / n as f64);
            let direct = linalg::sym_eigenvalues_desc(cov.as_ref()).unwrap();
            let mut rows = linalg::gram_rows(x.as_ref());
            linalg::scale_in_place(&mut rows, 1.0 / n as f64);
            let mut dual = linalg::sym_eigenvalues_desc(rows.as_ref()).unwrap();
            dual.resize(p, 0.0);
            for j in 0..p {
                assert!((via_small[j] - direct[j].max(0.0)).abs() < 1e-10);
                assert!((via_small[j] - dual[j].max(0.0)).abs() < 1e-10);
            }
            if p > n {
                assert!(via_small[n..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn beta_hat_examples() {
        let same = ds(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(estimate_moments(&same).unwrap().1, 0.0);
        let two = ds(&[vec![1.0, 0.0], vec![0.0, 3f64.sqrt()]]);
        assert!((estimate_moments(&two).unwrap().1 - 2.0).abs() < 1e-12);
        assert!(matches!(estimate_moments(&ds(&[vec![1.0]])), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn varsigma_examples() {
        assert!((estimate_varsigma_sq(3.0, 6.0, 10.0, 50).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(estimate_varsigma_sq(1.0, 0.0, 1.0, 2).unwrap(), 0.0);
        assert!(matches!(estimate_varsigma_sq(0.0, 1.0, 0.0, 3), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn stable_rank_examples() {
        assert_eq!(stable_rank_hat(&[0.0, 0.0, 0.0], 7), 7.0);
        assert!((stable_rank_hat(&[1.0, 1.0], 4) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn cap_examples() {
        assert_eq!(eigenvalue_cap(&[5.0, 1.0], 3.0), vec![3.0, 1.0]);
        assert_eq!(eigenvalue_cap(&[2.0, 1.0], 3.0), vec![2.0, 1.0]);
        assert_eq!(eigenvalue_cap(&[3.5, 3.5], 3.0), vec![3.0, 3.0]);
    }

    #[test]
    fn alpha_hat_is_consistent() {
        let spec = make_covariance_setting(Setting::S1, 100, Some(1)).unwrap();
        let root = spec.sqrt_factor().unwrap();
        let trials = 200;
        let mut acc = 0.0;
        for t in 0..trials {
            let x = crate::sampling::sample_dataset_with_root(&spec, &root, &EllipticalLaw::ChiSquared, 200, 1000 + t)
                .unwrap();
            acc += estimate_moments(&x).unwrap().0 / spec.trace_sq();
        }
        let m = acc / trials as f64;
        assert!((0.97..=1.03).contains(&m), "{m}");
    }

    #[test]
    fn stable_rank_is_consistent_for_identity() {
        let spec = CovarianceSpec::scaled_identity(100, 1.0).unwrap();
        let root = spec.sqrt_factor().unwrap();
        let mut ok = 0;
        for t in 0..200 {
            let x = crate::sampling::sample_dataset_with_root(&spec, &root, &EllipticalLaw::ChiSquared, 400, 50 + t)
                .unwrap();
            let (tr, tr_sq) = trace_moments_of(x.values().as_ref());
            if (stable_rank_from_traces(tr, tr_sq, 400) / 100.0 - 1.0).abs() <= 0.05 {
                ok += 1;
            }
        }
        assert!(ok >= 180, "{ok}");
    }

    #[test]
    fn bundle_fields_agree() {
        let spec = make_covariance_setting(Setting::S2, 30, Some(2)).unwrap();
        let x = sample_dataset(&spec, &EllipticalLaw::Gamma { tau: 2.0 }, 20, 3).unwrap();
        let b = estimate_all(&x).unwrap();
        assert_eq!(b.sample_eigs.len(), 30);
        assert!(b.sample_eigs[20..].iter().all(|&v| v == 0.0));
        assert!((b.r_hat - stable_rank_hat(&b.sample_eigs, 20)).abs() < 1e-9 * b.r_hat);
        let back: EstimatorBundle = serde_json::from_str(&b.to_json().unwrap()).unwrap();
        assert_eq!(back, b);
    }

    fn arb_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..8, 1usize..6).prop_flat_map(|(n, p)| prop::collection::vec(prop::collection::vec(-3.0f64..3.0, p), n))
    }

    proptest! {
        #[test]
        fn trace_matches_mean_norm(rows in arb_rows()) {
            let x = ds(&rows);
            let eigs = sample_covariance_eigs(&x).unwrap();
            let tr: f64 = eigs.iter().sum();
            let want = x.row_norms_sq().iter().sum::<f64>() / x.n() as f64;
            prop_assert!((tr - want).abs() <= 1e-8 * want.max(1e-300) + 1e-12);
            prop_assert!(eigs.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn alpha_is_permutation_invariant(rows in arb_rows(), shift in 0usize..8) {
            let mut perm = rows.clone();
            let k = shift % perm.len();
            perm.rotate_left(k);
            let a = estimate_moments(&ds(&rows)).unwrap().0;
            let b = estimate_moments(&ds(&perm)).unwrap().0;
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }

        #[test]
        fn varsigma_nonnegative_and_monotone(a in 0.01f64..10.0, g in 0.0f64..100.0, b1 in 0.0f64..50.0, db in 0.0f64..50.0, p in 1usize..300) {
            let lo = estimate_varsigma_sq(a, b1, g, p).unwrap();
            let hi = estimate_varsigma_sq(a, b1 + db, g, p).unwrap();
            prop_assert!(lo >= 0.0);
            prop_assert!(hi >= lo);
        }

        #[test]
        fn stable_rank_scale_invariant(rows in arb_rows(), s in 0.01f64..100.0) {
            let x = ds(&rows);
            let r1 = stable_rank_hat(&sample_covariance_eigs(&x).unwrap(), x.n());
            let r2 = stable_rank_hat(&sample_covariance_eigs(&x.scaled(s)).unwrap(), x.n());
            prop_assert!((r1 - r2).abs() <= 1e-8 * r1.abs().max(1.0));
        }
    }
}
