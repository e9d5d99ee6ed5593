//! Population covariance settings and their spectral distributions.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;

/// Named covariance designs used by the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Five eigenvalues 4/3, the rest 1, Haar eigenvectors.
    S1,
    /// `exp(-j/10)` for the leading 20 eigenvalues, flat `exp(-2)` after.
    S2,
    /// Toeplitz `0.1^|i-j|` plus the identity.
    S3,
    /// User-supplied eigenvalues.
    #[serde(rename = "custom")]
    Custom,
}

impl Setting {
    pub fn label(self) -> &'static str {
        match self {
            Setting::S1 => "S1",
            Setting::S2 => "S2",
            Setting::S3 => "S3",
            Setting::Custom => "custom",
        }
    }

    /// Index used by the simulation tables: (1), (2), (3).
    pub fn table_index(self) -> Option<usize> {
        match self {
            Setting::S1 => Some(1),
            Setting::S2 => Some(2),
            Setting::S3 => Some(3),
            Setting::Custom => None,
        }
    }

    pub fn min_dimension(self) -> usize {
        match self {
            Setting::S1 => 6,
            Setting::S2 => 21,
            Setting::S3 | Setting::Custom => 1,
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S1" | "s1" | "1" => Ok(Setting::S1),
            "S2" | "s2" | "2" => Ok(Setting::S2),
            "S3" | "s3" | "3" => Ok(Setting::S3),
            "custom" => Ok(Setting::Custom),
            other => Err(Error::Config(format!("unknown covariance setting {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovarianceKind {
    EigenProfile,
    ToeplitzPlusIdentity,
}

/// A population covariance matrix, described by its spectrum and, for
/// eigen-profile designs, an optional Haar-random eigenvector basis.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    kind: CovarianceKind,
    setting: Setting,
    eigenvalues: Vec<f64>,
    rotation_seed: Option<u64>,
}

/// The factor `Σ^{1/2}` used to generate data.
#[derive(Debug, Clone)]
pub enum SqrtFactor {
    Diagonal(Vec<f64>),
    Dense(Mat<f64>),
}

impl SqrtFactor {
    pub fn dim(&self) -> usize {
        match self {
            SqrtFactor::Diagonal(d) => d.len(),
            SqrtFactor::Dense(m) => m.nrows(),
        }
    }
}

fn validate_profile(eigs: &[f64]) -> Result<()> {
    if eigs.is_empty() {
        return Err(Error::Dimension("covariance needs p >= 1".into()));
    }
    if eigs.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config("eigenvalues must be finite and nonnegative".into()));
    }
    if !eigs.iter().any(|&v| v > 0.0) {
        return Err(Error::Config("at least one eigenvalue must be positive".into()));
    }
    Ok(())
}

/// Build one of the named covariance designs at dimension `p`.
pub fn make_covariance_setting(setting: Setting, p: usize, rotation_seed: Option<u64>) -> Result<CovarianceSpec> {
    if p < setting.min_dimension() {
        return Err(Error::Dimension(format!(
            "setting {} requires p >= {}, got {p}",
            setting.label(),
            setting.min_dimension()
        )));
    }
    match setting {
        Setting::S1 => {
            let eigs = (0..p).map(|j| if j < 5 { 4.0 / 3.0 } else { 1.0 }).collect();
            Ok(CovarianceSpec { kind: CovarianceKind::EigenProfile, setting, eigenvalues: eigs, rotation_seed })
        }
        Setting::S2 => {
            let eigs = (1..=p).map(|j| (-(j.min(20) as f64) / 10.0).exp()).collect();
            Ok(CovarianceSpec { kind: CovarianceKind::EigenProfile, setting, eigenvalues: eigs, rotation_seed })
        }
        Setting::S3 => {
            let m = toeplitz_plus_identity(p);
            let eigs = linalg::sym_eigenvalues_desc(m.as_ref())?;
            let eigs = eigs.into_iter().map(|v| v.max(0.0)).collect();
            Ok(CovarianceSpec {
                kind: CovarianceKind::ToeplitzPlusIdentity,
                setting,
                eigenvalues: eigs,
                rotation_seed: None,
            })
        }
        Setting::Custom => Err(Error::Config("custom settings are built with CovarianceSpec::custom".into())),
    }
}

fn toeplitz_plus_identity(p: usize) -> Mat<f64> {
    Mat::from_fn(p, p, |i, j| {
        let d = i.abs_diff(j) as i32;
        0.1f64.powi(d) + if i == j { 1.0 } else { 0.0 }
    })
}

impl CovarianceSpec {
    /// A covariance with the given eigenvalues (any order; stored descending).
    pub fn custom(mut eigenvalues: Vec<f64>, rotation_seed: Option<u64>) -> Result<Self> {
        validate_profile(&eigenvalues)?;
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(CovarianceSpec { kind: CovarianceKind::EigenProfile, setting: Setting::Custom, eigenvalues, rotation_seed })
    }

    /// `s·I_p`.
    pub fn scaled_identity(p: usize, s: f64) -> Result<Self> {
        Self::custom(vec![s; p], None)
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn p(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Eigenvalues, sorted descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn rotation_seed(&self) -> Option<u64> {
        self.rotation_seed
    }

    pub fn with_rotation_seed(mut self, seed: Option<u64>) -> Self {
        if self.kind == CovarianceKind::EigenProfile {
            self.rotation_seed = seed;
        }
        self
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn trace_sq(&self) -> f64 {
        self.eigenvalues.iter().map(|v| v * v).sum()
    }

    /// `tr(Σ)² / tr(Σ²)`.
    pub fn stable_rank(&self) -> f64 {
        let t = self.trace();
        t * t / self.trace_sq()
    }

    /// The dense matrix `Σ`.
    pub fn matrix(&self) -> Result<Mat<f64>> {
        let p = self.p();
        match self.kind {
            CovarianceKind::ToeplitzPlusIdentity => Ok(toeplitz_plus_identity(p)),
            CovarianceKind::EigenProfile => match self.rotation_seed {
                None => Ok(Mat::from_fn(p, p, |i, j| if i == j { self.eigenvalues[i] } else { 0.0 })),
                Some(seed) => {
                    let v = self.basis(seed);
                    Ok(linalg::spectral_function(v.as_ref(), &self.eigenvalues, |x| x))
                }
            },
        }
    }

    fn basis(&self, seed: u64) -> Mat<f64> {
        let mut r = rng::stream(rng::derive_seed(seed, 0x0b5e));
        linalg::haar_orthogonal(self.p(), &mut r)
    }

    /// The symmetric root `V diag(√λ) Vᵀ`, or a diagonal when no basis is drawn.
    pub fn sqrt_factor(&self) -> Result<SqrtFactor> {
        match self.kind {
            CovarianceKind::EigenProfile => match self.rotation_seed {
                None => Ok(SqrtFactor::Diagonal(self.eigenvalues.iter().map(|v| v.sqrt()).collect())),
                Some(seed) => {
                    let v = self.basis(seed);
                    Ok(SqrtFactor::Dense(linalg::spectral_function(v.as_ref(), &self.eigenvalues, f64::sqrt)))
                }
            },
            CovarianceKind::ToeplitzPlusIdentity => {
                let m = toeplitz_plus_identity(self.p());
                let (vals, vecs) = linalg::sym_eigen_desc(m.as_ref())?;
                Ok(SqrtFactor::Dense(linalg::spectral_function(vecs.as_ref(), &vals, |x| x.max(0.0).sqrt())))
            }
        }
    }

    pub fn to_doc(&self) -> CovarianceDoc {
        CovarianceDoc {
            setting: self.setting,
            p: self.p(),
            eigenvalues: (self.setting == Setting::Custom).then(|| self.eigenvalues.clone()),
            rotation_seed: self.rotation_seed,
        }
    }

    pub fn from_doc(doc: &CovarianceDoc) -> Result<Self> {
        match doc.setting {
            Setting::Custom => {
                let eigs = doc
                    .eigenvalues
                    .clone()
                    .ok_or_else(|| Error::Config("custom covariance needs \"eigenvalues\"".into()))?;
                if eigs.len() != doc.p {
                    return Err(Error::Config(format!("p = {} but {} eigenvalues given", doc.p, eigs.len())));
                }
                Self::custom(eigs, doc.rotation_seed)
            }
            s => make_covariance_setting(s, doc.p, doc.rotation_seed),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_doc())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CovarianceDoc = serde_json::from_str(text)?;
        Self::from_doc(&doc)
    }
}

/// JSON form of a covariance spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDoc {
    pub setting: Setting,
    pub p: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_seed: Option<u64>,
}

/// One support point of a discrete spectral distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub value: f64,
    pub weight: f64,
}

/// A discrete spectral distribution: atoms sorted ascending with weights
/// summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumModel {
    atoms: Vec<Atom>,
}

impl SpectrumModel {
    /// Empirical distribution of a list of eigenvalues, one atom per distinct value.
    pub fn from_eigenvalues(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("empty spectrum".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("spectrum values must be finite and nonnegative".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let w = 1.0 / sorted.len() as f64;
        let mut atoms: Vec<Atom> = Vec::new();
        let mut count = 0usize;
        for (i, &v) in sorted.iter().enumerate() {
            count += 1;
            if i + 1 == sorted.len() || sorted[i + 1] != v {
                atoms.push(Atom { value: v, weight: count as f64 * w });
                count = 0;
            }
        }
        Ok(SpectrumModel { atoms })
    }

    /// Atoms with explicit weights; weights are renormalized if they are off
    /// by rounding only.
    pub fn from_atoms(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Dimension("empty spectrum".into()));
        }
        if atoms.iter().any(|a| !a.value.is_finite() || a.value < 0.0 || !(a.weight > 0.0 && a.weight <= 1.0)) {
            return Err(Error::Config("atoms need finite nonnegative values and weights in (0, 1]".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("atom weights sum to {total}, not 1")));
        }
        atoms.iter_mut().for_each(|a| a.weight /= total);
        atoms.sort_by(|a, b| a.value.total_cmp(&b.value));
        Ok(SpectrumModel { atoms })
    }

    pub fn point_mass(value: f64) -> Self {
        SpectrumModel { atoms: vec![Atom { value, weight: 1.0 }] }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    /// `H(t) = mass of atoms <= t`.
    pub fn cdf(&self, t: f64) -> f64 {
        let s: f64 = self.atoms.iter().take_while(|a| a.value <= t).map(|a| a.weight).sum();
        s.min(1.0)
    }

    /// `∫ t^k dH(t)`.
    pub fn moment(&self, k: i32) -> f64 {
        self.atoms.iter().map(|a| a.weight * a.value.powi(k)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn max_value(&self) -> f64 {
        self.atoms.last().map(|a| a.value).unwrap_or(0.0)
    }

    /// Mass at exactly zero.
    pub fn zero_mass(&self) -> f64 {
        self.atoms.iter().filter(|a| a.value == 0.0).map(|a| a.weight).sum()
    }

    /// The distribution of `s·λ`.
    pub fn scaled(&self, s: f64) -> Self {
        SpectrumModel { atoms: self.atoms.iter().map(|a| Atom { value: a.value * s, weight: a.weight }).collect() }
    }

    /// Left-continuous inverse: smallest atom value `v` with `H(v) >= level`.
    pub fn quantile(&self, level: f64) -> f64 {
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.weight;
            if acc >= level - 1e-12 {
                return a.value;
            }
        }
        self.max_value()
    }
}

/// `sup_t |F(t) - G(t)|` for two discrete distributions.
pub fn kolmogorov_distance(f: &SpectrumModel, g: &SpectrumModel) -> f64 {
    f.atoms().iter().chain(g.atoms()).map(|a| (f.cdf(a.value) - g.cdf(a.value)).abs()).fold(0.0, f64::max)
}

/// Lévy distance: the smallest `ε` with `F(t-ε) - ε <= G(t) <= F(t+ε) + ε`
/// for all `t`. Unlike the Kolmogorov distance it tolerates small shifts of
/// atoms, so it stays small when a continuous estimate sits near a point mass.
pub fn levy_distance(f: &SpectrumModel, g: &SpectrumModel) -> f64 {
    let holds = |eps: f64| -> bool {
        let mut pts: Vec<f64> = g.atoms().iter().map(|a| a.value).collect();
        for a in f.atoms() {
            pts.push(a.value - eps);
            pts.push(a.value + eps);
        }
        let scale = f.max_value().max(g.max_value()).max(1.0);
        let tiny = 1e-12 * scale;
        pts.iter().all(|&t| {
            [t, t - tiny].iter().all(|&x| {
                let gx = g.cdf(x);
                f.cdf(x - eps) - eps <= gx + 1e-12 && gx <= f.cdf(x + eps) + eps + 1e-12
            })
        })
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if holds(0.0) {
        return 0.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if holds(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// The empirical spectral distribution `H_n` of a covariance spec.
pub fn spectral_distribution(spec: &CovarianceSpec) -> SpectrumModel {
    SpectrumModel::from_eigenvalues(spec.eigenvalues()).expect("covariance spec invariants hold")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Eigenvalues of a symmetric 3x3 matrix by the trigonometric closed form.
    fn sym3_eigs(a: [[f64; 3]; 3]) -> [f64; 3] {
        let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
        let q = (a[0][0] + a[1][1] + a[2][2]) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i][j] = (a[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        [e1, e2, e3]
    }

    #[test]
    fn s1_profile() {
        let s = make_covariance_setting(Setting::S1, 10, None).unwrap();
        let want = [4.0 / 3.0; 5].iter().chain([1.0; 5].iter()).copied().collect::<Vec<_>>();
        assert_eq!(s.eigenvalues(), &want[..]);
        let s6 = make_covariance_setting(Setting::S1, 6, None).unwrap();
        assert!((s6.trace() - 23.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn s2_tail_is_flat() {
        let s = make_covariance_setting(Setting::S2, 30, None).unwrap();
        assert!((s.eigenvalues()[0] - (-0.1f64).exp()).abs() < 1e-15);
        assert!((s.eigenvalues()[19] - (-2f64).exp()).abs() < 1e-15);
        assert!(s.eigenvalues()[20..].iter().all(|&v| v == (-2f64).exp()));
    }

    #[test]
    fn dimension_guards() {
        assert!(matches!(make_covariance_setting(Setting::S2, 20, None), Err(Error::Dimension(_))));
        assert!(matches!(make_covariance_setting(Setting::S1, 5, None), Err(Error::Dimension(_))));
        assert!(make_covariance_setting(Setting::S3, 1, None).is_ok());
    }

    #[test]
    fn s3_small_matches_closed_form() {
        let s = make_covariance_setting(Setting::S3, 3, None).unwrap();
        let oracle = sym3_eigs([[2.0, 0.1, 0.01], [0.1, 2.0, 0.1], [0.01, 0.1, 2.0]]);
        for (a, b) in s.eigenvalues().iter().zip(oracle.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let h = spectral_distribution(&s);
        assert_eq!(h.atoms().len(), 3);
        for (atom, v) in h.atoms().iter().zip(oracle.iter().rev()) {
            assert!((atom.weight - 1.0 / 3.0).abs() < 1e-15);
            assert!((atom.value - v).abs() < 1e-12);
        }
    }

    #[test]
    fn s3_gershgorin_and_trace() {
        let s = make_covariance_setting(Setting::S3, 60, None).unwrap();
        assert!(s.eigenvalues().iter().all(|&v| (1.77..=2.23).contains(&v)));
        let m = s.matrix().unwrap();
        assert_eq!(linalg::trace(m.as_ref()), 120.0);
        assert!((s.trace() - 120.0).abs() < 1e-9);
    }

    #[test]
    fn s1_atoms() {
        let s = make_covariance_setting(Setting::S1, 10, None).unwrap();
        let h = spectral_distribution(&s);
        assert_eq!(h.atoms(), &[Atom { value: 1.0, weight: 0.5 }, Atom { value: 4.0 / 3.0, weight: 0.5 }]);
        let id = SpectrumModel::from_eigenvalues(&[1.0; 7]).unwrap();
        assert_eq!(id.atoms(), &[Atom { value: 1.0, weight: 1.0 }]);
    }

    #[test]
    fn rotated_matrix_keeps_spectrum() {
        let s = make_covariance_setting(Setting::S1, 8, Some(5)).unwrap();
        let m = s.matrix().unwrap();
        let eigs = linalg::sym_eigenvalues_desc(m.as_ref()).unwrap();
        for (a, b) in eigs.iter().zip(s.eigenvalues()) {
            assert!((a - b).abs() < 1e-12);
        }
        let SqrtFactor::Dense(r) = s.sqrt_factor().unwrap() else { panic!("expected dense root") };
        let rr = linalg::product(r.as_ref(), r.as_ref());
        for i in 0..8 {
            for j in 0..8 {
                assert!((rr[(i, j)] - m[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let s = make_covariance_setting(Setting::S2, 25, Some(9)).unwrap();
        assert_eq!(CovarianceSpec::from_json(&s.to_json().unwrap()).unwrap(), s);
        let c = CovarianceSpec::custom(vec![1.0, 3.0, 2.0], None).unwrap();
        let text = c.to_json().unwrap();
        assert!(text.contains("\"custom\""));
        assert_eq!(CovarianceSpec::from_json(&text).unwrap().eigenvalues(), &[3.0, 2.0, 1.0]);
        let bad = r#"{"setting":"custom","p":3,"eigenvalues":[1.0]}"#;
        assert!(CovarianceSpec::from_json(bad).is_err());
    }

    #[test]
    fn distances_between_spectra() {
        let a = SpectrumModel::point_mass(1.0);
        let b = SpectrumModel::from_eigenvalues(&[0.98, 1.02]).unwrap();
        assert!((kolmogorov_distance(&a, &b) - 0.5).abs() < 1e-12);
        let l = levy_distance(&a, &b);
        assert!((l - 0.02).abs() < 1e-9, "{l}");
        assert_eq!(levy_distance(&a, &a), 0.0);
        let far = SpectrumModel::point_mass(5.0);
        assert!((kolmogorov_distance(&a, &far) - 1.0).abs() < 1e-12);
        assert!(levy_distance(&a, &far) >= 0.999);
    }

    proptest! {
        #[test]
        fn cdf_is_a_distribution_function(vals in prop::collection::vec(0.0f64..10.0, 1..40), t in -1.0f64..12.0) {
            let h = SpectrumModel::from_eigenvalues(&vals).unwrap();
            let total: f64 = h.atoms().iter().map(|a| a.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(h.atoms().windows(2).all(|w| w[0].value < w[1].value));
            let lo = h.atoms()[0].value;
            prop_assert_eq!(h.cdf(lo - 1e-9), 0.0);
            prop_assert!((h.cdf(h.max_value()) - 1.0).abs() < 1e-12);
            prop_assert!(h.cdf(t) <= h.cdf(t + 0.5) + 1e-15);
            // right-continuity at atoms
            for a in h.atoms() {
                prop_assert_eq!(h.cdf(a.value), h.cdf(a.value + 1e-12));
            }
            let count = vals.iter().filter(|&&v| v <= t).count() as f64 / vals.len() as f64;
            prop_assert!((h.cdf(t) - count).abs() < 1e-12);
        }
    }
}
