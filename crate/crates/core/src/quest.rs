//! Population spectrum estimation by inverting the MP map.
//!
//! The candidate spectrum is `K` equally weighted atoms. The forward map sends
//! it to the quantiles of `Ψ(H, c)` at levels `(i - ½)/p`; a projected
//! Levenberg–Marquardt loop fits those quantiles to the observed sample
//! eigenvalues in squared ℓ₂, using the analytic Jacobian of the tabulated
//! quantiles with respect to the atom locations.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp::{esd_grid, EsdOptions, MPDistribution};
use crate::spectra::SpectrumModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuestOptions {
    /// Upper bound on the number of atoms; the fit uses `min(p, k)`.
    pub k: usize,
    pub max_iters: usize,
    /// Relative objective improvement below which the fit stops.
    pub tol: f64,
    /// Density nodes per forward evaluation.
    pub grid_points: usize,
}

impl Default for QuestOptions {
    fn default() -> Self {
        QuestOptions { k: 100, max_iters: 500, tol: 1e-6, grid_points: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Estimated population eigenvalues, descending, length `p`.
    pub eigenvalues: Vec<f64>,
    /// Mean squared discrepancy between predicted and observed eigenvalues,
    /// on the original scale.
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step (normalized scale).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl SpectrumEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn spectrum_model(&self) -> Result<SpectrumModel> {
        SpectrumModel::from_eigenvalues(&self.eigenvalues)
    }
}

fn levels(p: usize) -> Vec<f64> {
    (0..p).map(|i| (i as f64 + 0.5) / p as f64).collect()
}

/// Predicted sample eigenvalues for a candidate spectrum, descending: the
/// quantiles of `Ψ(candidate, c)` at levels `(p - j + ½)/p`, `j = 1..p`.
pub fn forward_sample_spectrum(candidate: &SpectrumModel, c: f64, p: usize, opts: &EsdOptions) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Dimension("p must be positive".into()));
    }
    let dist = esd_grid(candidate, c, opts)?;
    let mut q: Vec<f64> = levels(p).into_iter().map(|l| dist.quantile(l)).collect();
    q.reverse();
    Ok(q)
}

/// Quantiles (ascending levels) and, optionally, their Jacobian with respect
/// to the atom locations `t` (equal weights `1/K`).
pub(crate) fn quantiles_and_jacobian(
    t: &[f64],
    c: f64,
    levels: &[f64],
    grid_points: usize,
    want_jacobian: bool,
) -> Result<(Vec<f64>, Option<Mat<f64>>)> {
    let h = SpectrumModel::from_eigenvalues(t)?;
    let dist = esd_grid(&h, c, &EsdOptions { grid_points, eta: 0.0 })?;
    let q: Vec<f64> = levels.iter().map(|&l| dist.quantile(l)).collect();
    if !want_jacobian {
        return Ok((q, None));
    }
    Ok((q, Some(jacobian(&dist, t, levels))))
}

/// Derivative of every tabulated quantity with respect to each atom, then
/// chained through the linear-interpolation quantile formula.
fn jacobian(dist: &MPDistribution, t: &[f64], levels: &[f64]) -> Mat<f64> {
    let k = t.len();
    let c = dist.c();
    let wk = 1.0 / k as f64;
    let pi = std::f64::consts::PI;
    let model = &dist.model;
    let zero_atom = dist.zero_atom();

    // ∂X/∂t_k at a real edge v
    let dx_dt = |v: f64, out: &mut [f64]| {
        for (o, &tk) in out.iter_mut().zip(t) {
            *o = c * wk * v * v / ((v - tk) * (v - tk));
        }
    };

    // per-node mass derivative, per-knot x and partial-sum derivative
    let mut knot_dx: Vec<Vec<f64>> = Vec::new();
    let mut knot_ds: Vec<Vec<f64>> = Vec::new();
    let mut knot_s: Vec<f64> = Vec::new();
    let mut ds_total = vec![0.0; k];
    let mut s_total = 0.0;
    let mut da = vec![0.0; k];
    let mut db = vec![0.0; k];
    for piece in &dist.pieces {
        let e = piece.edge;
        if model.x_real(e.v_lo) > 0.0 {
            dx_dt(e.v_lo, &mut da);
        } else {
            da.iter_mut().for_each(|x| *x = 0.0);
        }
        dx_dt(e.v_hi, &mut db);
        let nc = piece.cells;
        let dtheta = pi / nc as f64;
        let knot_x_deriv = |theta: f64| -> Vec<f64> {
            let (wa, wb) = (0.5 * (1.0 + theta.cos()), 0.5 * (1.0 - theta.cos()));
            (0..k).map(|j| wa * da[j] + wb * db[j]).collect()
        };
        knot_dx.push(knot_x_deriv(0.0));
        knot_ds.push(ds_total.clone());
        knot_s.push(s_total);
        for j in 0..nc {
            let node = &dist.nodes[piece.first + j];
            let v = node.v;
            let (_, slope, _) = model.x_and_slope(v);
            let f = node.density;
            let fx = (1.0 / (v * v * slope)).im / (pi * c);
            let sin = node.theta.sin();
            let cos = node.theta.cos();
            let width = node.width;
            for kk in 0..k {
                let d = v - t[kk];
                let ft = -(wk / pi) * (1.0 / (d * d * slope)).im;
                let dxk = 0.5 * (1.0 + cos) * da[kk] + 0.5 * (1.0 - cos) * db[kk];
                let dwidth = 0.5 * (db[kk] - da[kk]) * sin * dtheta;
                ds_total[kk] += (ft + fx * dxk) * width + f * dwidth;
            }
            s_total += f * width;
            knot_dx.push(knot_x_deriv((j + 1) as f64 * dtheta));
            knot_ds.push(ds_total.clone());
            knot_s.push(s_total);
        }
    }
    let knots = dist.knots();
    debug_assert_eq!(knots.len(), knot_s.len());
    let norm = dist.normalizer();
    // C_j = Z + norm·S_j with norm = (1-Z)/R, R = S_total
    let knot_dc = |j: usize| -> Vec<f64> {
        (0..k).map(|kk| norm * knot_ds[j][kk] - norm * knot_s[j] * ds_total[kk] / s_total).collect()
    };

    let mut jac = Mat::<f64>::zeros(levels.len(), k);
    for (i, &l) in levels.iter().enumerate() {
        if l <= zero_atom || knots.is_empty() {
            continue;
        }
        let idx = knots.partition_point(|kn| kn.1 < l);
        if idx == 0 || idx >= knots.len() {
            let j = idx.min(knots.len() - 1);
            for kk in 0..k {
                jac[(i, kk)] = knot_dx[j][kk];
            }
            continue;
        }
        let (x0, c0) = knots[idx - 1];
        let (x1, c1) = knots[idx];
        if c1 <= c0 {
            for kk in 0..k {
                jac[(i, kk)] = knot_dx[idx][kk];
            }
            continue;
        }
        let u = (l - c0) / (c1 - c0);
        let slope = (x1 - x0) / (c1 - c0);
        let dc0 = knot_dc(idx - 1);
        let dc1 = knot_dc(idx);
        for kk in 0..k {
            let dx0 = knot_dx[idx - 1][kk];
            let dx1 = knot_dx[idx][kk];
            jac[(i, kk)] = dx0 + u * (dx1 - dx0) - slope * (dc0[kk] + u * (dc1[kk] - dc0[kk]));
        }
    }
    jac
}

fn objective(q: &[f64], y: &[f64]) -> f64 {
    q.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64
}

const FLOOR: f64 = 1e-4;

fn project(t: &mut [f64]) {
    t.iter_mut().for_each(|v| *v = if v.is_finite() { v.max(FLOOR) } else { FLOOR });
    t.sort_by(f64::total_cmp);
}

/// Fit a population spectrum to observed sample eigenvalues.
pub fn estimate_population_spectrum(sample_eigs: &[f64], n: usize, opts: &QuestOptions) -> Result<SpectrumEstimate> {
    let p = sample_eigs.len();
    if p == 0 || n == 0 {
        return Err(Error::Dimension("need n, p >= 1".into()));
    }
    if sample_eigs.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Data("sample eigenvalues must be finite and nonnegative".into()));
    }
    let scale = sample_eigs.iter().sum::<f64>() / p as f64;
    if scale == 0.0 {
        return Ok(SpectrumEstimate {
            eigenvalues: vec![0.0; p],
            objective_value: 0.0,
            iterations: 0,
            converged: true,
            objective_trace: Vec::new(),
        });
    }
    let c = p as f64 / n as f64;
    let mut y: Vec<f64> = sample_eigs.iter().map(|v| v / scale).collect();
    y.sort_by(f64::total_cmp);
    let lv = levels(p);
    let k = opts.k.clamp(1, p);

    // initial atoms: observed quantiles shrunk toward the mean
    let shrink = (1.0 / (1.0 + c)).sqrt();
    let mut t: Vec<f64> = (0..k)
        .map(|j| {
            let level = (j as f64 + 0.5) / k as f64;
            let idx = ((level * p as f64).ceil() as usize).clamp(1, p) - 1;
            1.0 + (y[idx] - 1.0) * shrink
        })
        .collect();
    project(&mut t);

    let eval = |t: &[f64], jac: bool| quantiles_and_jacobian(t, c, &lv, opts.grid_points, jac);
    let (mut q, mut jm) = match eval(&t, true) {
        Ok(r) => r,
        Err(_) => return Ok(fallback(&y, scale, k)),
    };
    let mut obj = objective(&q, &y);
    let mut trace = vec![obj];
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let jac = jm.take().expect("jacobian present after an accepted step");
        let (jtj, grad) = normal_equations(&jac, &q, &y);
        let mut accepted = false;
        let mut tries = 0;
        while tries < 30 {
            tries += 1;
            let Some(step) = solve_damped(&jtj, &grad, mu) else {
                mu *= 10.0;
                continue;
            };
            let mut cand: Vec<f64> = t.iter().zip(&step).map(|(a, b)| a + b).collect();
            project(&mut cand);
            let Ok((cq, _)) = eval(&cand, false) else {
                mu *= 4.0;
                continue;
            };
            let cobj = objective(&cq, &y);
            if cobj < obj {
                let rel = (obj - cobj) / obj.max(1e-300);
                t = cand;
                obj = cobj;
                trace.push(obj);
                mu = (mu / 3.0).max(1e-12);
                accepted = true;
                if rel < opts.tol {
                    converged = true;
                }
                break;
            }
            mu *= 4.0;
        }
        if !accepted {
            // no descent direction left at any damping: a stationary point
            converged = true;
            break;
        }
        if converged || obj == 0.0 {
            converged = true;
            break;
        }
        match eval(&t, true) {
            Ok((nq, nj)) => {
                q = nq;
                jm = nj;
            }
            Err(_) => break,
        }
    }

    Ok(SpectrumEstimate {
        eigenvalues: expand(&t, p, scale),
        objective_value: obj * scale * scale,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// `K` atoms to `p` descending eigenvalues: the candidate's quantiles at
/// `(j - ½)/p`.
fn expand(t: &[f64], p: usize, scale: f64) -> Vec<f64> {
    let k = t.len();
    let mut out: Vec<f64> = (0..p)
        .map(|j| {
            let level = (j as f64 + 0.5) / p as f64;
            let idx = ((level * k as f64).ceil() as usize).clamp(1, k) - 1;
            t[idx] * scale
        })
        .collect();
    out.reverse();
    out
}

fn fallback(y: &[f64], scale: f64, k: usize) -> SpectrumEstimate {
    let t: Vec<f64> = (0..k).map(|j| y[(j * y.len()) / k]).collect();
    let mut t = t;
    project(&mut t);
    SpectrumEstimate {
        eigenvalues: expand(&t, y.len(), scale),
        objective_value: f64::NAN,
        iterations: 0,
        converged: false,
        objective_trace: Vec::new(),
    }
}

fn normal_equations(jac: &Mat<f64>, q: &[f64], y: &[f64]) -> (Mat<f64>, Vec<f64>) {
    let (p, k) = (jac.nrows(), jac.ncols());
    let jtj = crate::linalg::gram_cols(jac.as_ref());
    let mut grad = vec![0.0; k];
    for kk in 0..k {
        let mut s = 0.0;
        for i in 0..p {
            s += jac[(i, kk)] * (q[i] - y[i]);
        }
        grad[kk] = s;
    }
    (jtj, grad)
}

/// `(JᵀJ + μ(diag(JᵀJ) + εI)) δ = -Jᵀr`.
fn solve_damped(jtj: &Mat<f64>, grad: &[f64], mu: f64) -> Option<Vec<f64>> {
    let k = jtj.nrows();
    let diag_max = (0..k).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let a =
        Mat::from_fn(k, k, |i, j| if i == j { jtj[(i, i)] * (1.0 + mu) + mu * 1e-6 * diag_max } else { jtj[(i, j)] });
    let llt = a.llt(Side::Lower).ok()?;
    let rhs = Mat::from_fn(k, 1, |i, _| -grad[i]);
    let sol = llt.solve(&rhs);
    let out: Vec<f64> = (0..k).map(|i| sol[(i, 0)]).collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}
