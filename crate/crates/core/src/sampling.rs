//! Elliptical data generation: `x_i = ξ_i Σ^{1/2} u_i`.

use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, StreamRng};
use crate::spectra::{CovarianceDoc, CovarianceSpec, SqrtFactor};

/// Law of the squared radius `ξ²`. Every family is parameterized so that
/// `E ξ² = p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum EllipticalLaw {
    /// `χ²_p`.
    ChiSquared,
    /// `Poisson(p)`.
    Poisson,
    /// `(1-τ)·NegBin(p, 1-τ)`, counting trials until the p-th success.
    ScaledNegBinomial { tau: f64 },
    /// Shape `p/τ`, rate `1/τ`.
    Gamma { tau: f64 },
    /// `BetaPrime(p(1+p+τ)/τ, (1+p+2τ)/τ)`.
    BetaPrime { tau: f64 },
    /// Log-mean `log p - ½log(1+τ/p)`, log-variance `log(1+τ/p)`.
    LogNormal { tau: f64 },
    /// `(p+2β)·Beta(p/2, β)`.
    ScaledBeta { beta: f64 },
    /// `ξ² ≡ p`.
    PointMass,
}

impl EllipticalLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::Config(format!("{what} = {v} is outside its admissible range")));
        match *self {
            EllipticalLaw::ScaledNegBinomial { tau } if !(tau > 0.0 && tau < 1.0) => bad("negative-binomial tau", tau),
            EllipticalLaw::Gamma { tau } | EllipticalLaw::BetaPrime { tau } | EllipticalLaw::LogNormal { tau }
                if !(tau > 0.0 && tau.is_finite()) =>
            {
                bad("tau", tau)
            }
            EllipticalLaw::ScaledBeta { beta } if !(beta > 0.0 && beta.is_finite()) => bad("beta", beta),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EllipticalLaw::ChiSquared => "ChiSquared",
            EllipticalLaw::Poisson => "Poisson",
            EllipticalLaw::ScaledNegBinomial { .. } => "ScaledNegBinomial",
            EllipticalLaw::Gamma { .. } => "Gamma",
            EllipticalLaw::BetaPrime { .. } => "BetaPrime",
            EllipticalLaw::LogNormal { .. } => "LogNormal",
            EllipticalLaw::ScaledBeta { .. } => "ScaledBeta",
            EllipticalLaw::PointMass => "PointMass",
        }
    }

    /// Limit of `var((ξ² - p)/√p)` as `p → ∞`.
    pub fn tau_limit(&self) -> f64 {
        match *self {
            EllipticalLaw::ChiSquared => 2.0,
            EllipticalLaw::Poisson => 1.0,
            EllipticalLaw::ScaledNegBinomial { tau }
            | EllipticalLaw::Gamma { tau }
            | EllipticalLaw::BetaPrime { tau }
            | EllipticalLaw::LogNormal { tau } => tau,
            EllipticalLaw::ScaledBeta { .. } | EllipticalLaw::PointMass => 0.0,
        }
    }

    /// Exact `var(ξ²)` at dimension `p`.
    pub fn xi_sq_variance(&self, p: usize) -> f64 {
        let pf = p as f64;
        match *self {
            EllipticalLaw::ScaledBeta { beta } => 4.0 * beta * pf / (pf + 2.0 * beta + 2.0),
            other => other.tau_limit() * pf,
        }
    }

    /// Exact `E ξ⁴` at dimension `p`.
    pub fn xi_fourth_moment(&self, p: usize) -> f64 {
        let pf = p as f64;
        self.xi_sq_variance(p) + pf * pf
    }
}

/// Anything that can draw a squared radius for a given dimension.
pub trait RadialLaw: Sync {
    fn sample_xi_sq(&self, p: usize, rng: &mut StreamRng) -> Result<f64>;
}

impl RadialLaw for EllipticalLaw {
    fn sample_xi_sq(&self, p: usize, rng: &mut StreamRng) -> Result<f64> {
        sample_xi_squared(self, p, rng)
    }
}

fn cfg_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Uniform draw from the unit sphere in `R^p`, as a normalized Gaussian vector.
pub fn sample_unit_sphere<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Dimension("unit sphere needs p >= 1".into()));
    }
    loop {
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return Ok(z.into_iter().map(|v| v / norm).collect());
        }
    }
}

/// One draw of `ξ²` for dimension `p`.
pub fn sample_xi_squared<R: Rng + ?Sized>(law: &EllipticalLaw, p: usize, rng: &mut R) -> Result<f64> {
    if p == 0 {
        return Err(Error::Dimension("p must be positive".into()));
    }
    law.validate()?;
    let pf = p as f64;
    let x = match *law {
        EllipticalLaw::ChiSquared => ChiSquared::new(pf).map_err(cfg_err)?.sample(rng),
        EllipticalLaw::Poisson => Poisson::new(pf).map_err(cfg_err)?.sample(rng),
        EllipticalLaw::ScaledNegBinomial { tau } => {
            // trials = p + failures, failures ~ Poisson(Gamma(p, τ/(1-τ)))
            let q = 1.0 - tau;
            let rate = Gamma::new(pf, tau / q).map_err(cfg_err)?.sample(rng);
            let failures = if rate > 0.0 { Poisson::new(rate).map_err(cfg_err)?.sample(rng) } else { 0.0 };
            q * (pf + failures)
        }
        EllipticalLaw::Gamma { tau } => Gamma::new(pf / tau, tau).map_err(cfg_err)?.sample(rng),
        EllipticalLaw::BetaPrime { tau } => {
            let a = pf * (1.0 + pf + tau) / tau;
            let b = (1.0 + pf + 2.0 * tau) / tau;
            let ga = Gamma::new(a, 1.0).map_err(cfg_err)?.sample(rng);
            let gb = Gamma::new(b, 1.0).map_err(cfg_err)?.sample(rng);
            ga / gb
        }
        EllipticalLaw::LogNormal { tau } => {
            let s2 = (1.0 + tau / pf).ln();
            LogNormal::new(pf.ln() - 0.5 * s2, s2.sqrt()).map_err(cfg_err)?.sample(rng)
        }
        EllipticalLaw::ScaledBeta { beta } => {
            (pf + 2.0 * beta) * Beta::new(pf / 2.0, beta).map_err(cfg_err)?.sample(rng)
        }
        EllipticalLaw::PointMass => pf,
    };
    Ok(x)
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub law: EllipticalLaw,
    pub covariance: CovarianceDoc,
    pub seed: u64,
}

/// An `n × p` data matrix, one observation per row.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Mat<f64>,
    seed: u64,
    provenance: Option<Provenance>,
}

impl Dataset {
    pub fn from_matrix(values: Mat<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Dimension("dataset needs n, p >= 1".into()));
        }
        for j in 0..values.ncols() {
            for i in 0..values.nrows() {
                if !values[(i, j)].is_finite() {
                    return Err(Error::Data(format!("non-finite entry at row {i}, column {j}")));
                }
            }
        }
        Ok(Dataset { values, seed: 0, provenance: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::from_matrix(Mat::from_fn(n, p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// `‖x_i‖²` for every row.
    pub fn row_norms_sq(&self) -> Vec<f64> {
        let (n, p) = (self.n(), self.p());
        let mut out = vec![0.0; n];
        for j in 0..p {
            let col = self.values.col(j);
            for (i, o) in out.iter_mut().enumerate() {
                *o += col[i] * col[i];
            }
        }
        out
    }

    /// Multiply every entry by `s`.
    pub fn scaled(&self, s: f64) -> Dataset {
        let values = Mat::from_fn(self.n(), self.p(), |i, j| s * self.values[(i, j)]);
        Dataset { values, seed: self.seed, provenance: self.provenance.clone() }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        let mut rec = Vec::with_capacity(self.p());
        for i in 0..self.n() {
            rec.clear();
            rec.extend((0..self.p()).map(|j| self.values[(i, j)].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Data(format!("row {i}: {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    /// Binary layout: `SBMX`, u32 version, u64 n, u64 p, u64 seed, then
    /// `n·p` little-endian f64 in row-major order.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&BINARY_VERSION.to_le_bytes())?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.p() as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for i in 0..self.n() {
            for j in 0..self.p() {
                w.write_all(&self.values[(i, j)].to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Data("not a dataset file (bad magic)".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BINARY_VERSION {
            return Err(Error::Data(format!("unsupported dataset version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut next_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let n = next_u64(&mut r)? as usize;
        let p = next_u64(&mut r)? as usize;
        let seed = next_u64(&mut r)?;
        let mut buf =
            vec![
                0u8;
                n.checked_mul(p).and_then(|k| k.checked_mul(8)).ok_or_else(|| Error::Data("header overflow".into()))?
            ];
        r.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut ds = Self::from_matrix(Mat::from_fn(n, p, |i, j| vals[i * p + j]))?;
        ds.seed = seed;
        Ok(ds)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"SBMX";
const BINARY_VERSION: u32 = 1;

/// Rows `ξ_i u_i` (spherical part only). Row `i` draws from its own stream
/// derived from `(seed, i)`, so the result does not depend on evaluation order.
pub fn sample_radial_rows(radial: &dyn RadialLaw, n: usize, p: usize, seed: u64) -> Result<Mat<f64>> {
    if n == 0 || p == 0 {
        return Err(Error::Dimension("need n, p >= 1".into()));
    }
    let mut z = Mat::<f64>::zeros(n, p);
    for i in 0..n {
        let mut r = rng::stream(rng::derive_seed(seed, i as u64));
        let u = sample_unit_sphere(p, &mut r)?;
        let xi = radial.sample_xi_sq(p, &mut r)?;
        if !(xi >= 0.0 && xi.is_finite()) {
            return Err(Error::Data(format!("radial law produced {xi}")));
        }
        let s = xi.sqrt();
        for (j, uj) in u.into_iter().enumerate() {
            z[(i, j)] = s * uj;
        }
    }
    Ok(z)
}

/// Apply `Σ^{1/2}` to every row of `z`.
pub fn apply_sqrt(z: Mat<f64>, root: &SqrtFactor) -> Mat<f64> {
    match root {
        SqrtFactor::Diagonal(d) => {
            let mut z = z;
            for (j, &dj) in d.iter().enumerate() {
                for i in 0..z.nrows() {
                    z[(i, j)] *= dj;
                }
            }
            z
        }
        // Σ^{1/2} is symmetric, so row-wise application is Z·R.
        SqrtFactor::Dense(r) => linalg::product(z.as_ref(), r.as_ref()),
    }
}

/// Draw an elliptical dataset; deterministic given `seed`.
pub fn sample_dataset(spec: &CovarianceSpec, law: &EllipticalLaw, n: usize, seed: u64) -> Result<Dataset> {
    law.validate()?;
    let root = spec.sqrt_factor()?;
    sample_dataset_with_root(spec, &root, law, n, seed)
}

/// As [`sample_dataset`] with a precomputed `Σ^{1/2}`, for repeated draws.
pub fn sample_dataset_with_root(
    spec: &CovarianceSpec,
    root: &SqrtFactor,
    law: &EllipticalLaw,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if root.dim() != spec.p() {
        return Err(Error::Dimension(format!("root is {}x{}, spec has p = {}", root.dim(), root.dim(), spec.p())));
    }
    let z = sample_radial_rows(law, n, spec.p(), seed)?;
    let values = apply_sqrt(z, root);
    Ok(Dataset { values, seed, provenance: Some(Provenance { law: *law, covariance: spec.to_doc(), seed }) })
}
