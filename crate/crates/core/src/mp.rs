//! The Marčenko–Pastur map `H ↦ Ψ(H, c)`: Stieltjes transform solves,
//! tabulated densities, and centering parameters.
//!
//! Internally the equation is written in terms of `v = -1/m̲`, where `m̲` is
//! the Stieltjes transform of the companion (n-dimensional) spectrum:
//!
//! ```text
//! X(v) = v + c Σ_k w_k t_k v / (v - t_k) = z,    X'(v) = 1 - φ(v),
//! φ(v) = c Σ_k w_k t_k² / (v - t_k)².
//! ```
//!
//! The root with `Im v > 0` gives `m̲ = -1/v` and `m = (m̲ + (1-c)/z)/c`.
//! On the real axis the continuous density is `Im v / (π c |v|²)`, and the
//! support edges are the images under `X` of the real solutions of `φ = 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::sample_covariance_eigs_of;
use crate::rng;
use crate::sampling::{apply_sqrt, sample_radial_rows, RadialLaw};
use crate::spectra::{SpectrumModel, SqrtFactor};

type C64 = Complex64;

/// Positive atoms of `H` (zero atoms drop out of `X`) plus the ratio `c`.
#[derive(Debug, Clone)]
pub(crate) struct MpModel {
    pub c: f64,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub zero_weight: f64,
}

impl MpModel {
    pub fn new(h: &SpectrumModel, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Config(format!("aspect ratio c must be positive, got {c}")));
        }
        let mut t = Vec::new();
        let mut w = Vec::new();
        let mut zero_weight = 0.0;
        for a in h.atoms() {
            if a.value > 0.0 {
                t.push(a.value);
                w.push(a.weight);
            } else {
                zero_weight += a.weight;
            }
        }
        Ok(MpModel { c, t, w, zero_weight })
    }

    pub fn x_of(&self, v: C64) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (&t, &w) in self.t.iter().zip(&self.w) {
            s += w * t * v / (v - t);
        }
        v + self.c * s
    }

    /// `(X(v), X'(v), s)` where `s` bounds the magnitude of the summed
    /// terms, so `eps·s` is the roundoff floor of `X(v)`.
    pub fn x_and_slope(&self, v: C64) -> (C64, C64, f64) {
        let mut s = C64::new(0.0, 0.0);
        let mut phi = C64::new(0.0, 0.0);
        let mut mag = v.norm();
        for (&t, &w) in self.t.iter().zip(&self.w) {
            let r = 1.0 / (v - t);
            let term = w * t * v * r;
            mag += self.c * term.norm();
            s += term;
            phi += w * t * t * r * r;
        }
        (v + self.c * s, 1.0 - self.c * phi, mag)
    }

    pub fn phi_real(&self, v: f64) -> f64 {
        self.c * self.t.iter().zip(&self.w).map(|(&t, &w)| w * t * t / ((v - t) * (v - t))).sum::<f64>()
    }

    pub fn dphi_real(&self, v: f64) -> f64 {
        2.0 * self.c * self.t.iter().zip(&self.w).map(|(&t, &w)| w * t * t / (t - v).powi(3)).sum::<f64>()
    }

    fn d2phi_real(&self, v: f64) -> f64 {
        6.0 * self.c * self.t.iter().zip(&self.w).map(|(&t, &w)| w * t * t / (t - v).powi(4)).sum::<f64>()
    }

    pub fn x_real(&self, v: f64) -> f64 {
        v + self.c * self.t.iter().zip(&self.w).map(|(&t, &w)| w * t * v / (v - t)).sum::<f64>()
    }

    pub fn scale(&self) -> f64 {
        self.t.last().copied().unwrap_or(1.0) * (1.0 + self.c.sqrt()).powi(2)
    }

    pub fn zero_atom(&self) -> f64 {
        self.zero_weight.max(1.0 - 1.0 / self.c).max(0.0)
    }

    /// Damped Newton on `X(v) = z` that never leaves the upper half-plane
    /// and only accepts steps that reduce the residual. Converges to the
    /// roundoff floor of `X`, which keeps `v` accurate relative to `|v|`
    /// even when `z` is close to 0.
    pub fn newton(&self, z: C64, v0: C64) -> Option<C64> {
        let mut v = v0;
        if v.im <= 0.0 {
            return None;
        }
        let (xv, mut slope, mut mag) = self.x_and_slope(v);
        let mut r = xv - z;
        let floor = |mag: f64| 8.0 * f64::EPSILON * (mag + z.norm()) + 1e-300;
        for _ in 0..100 {
            if r.norm() <= floor(mag) {
                return Some(v);
            }
            let mut step = r / slope;
            if !step.re.is_finite() || !step.im.is_finite() {
                return None;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let cand = v - step;
                if cand.im > 0.0 {
                    let (cx, cs, cm) = self.x_and_slope(cand);
                    let cr = cx - z;
                    if cr.norm() < r.norm() {
                        v = cand;
                        slope = cs;
                        mag = cm;
                        r = cr;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                // no descent possible: either at roundoff level or stuck
                return (r.norm() <= 64.0 * floor(mag)).then_some(v);
            }
        }
        (r.norm() <= 64.0 * floor(mag)).then_some(v)
    }

    /// Solve `X(v) = z` for `v ∈ ℂ⁺`, continuing down the vertical line from
    /// a point far above the real axis where `v ≈ z - c Σ w t`.
    pub fn solve_v(&self, z: C64) -> Result<C64> {
        let fail = |res: f64| Error::Solver { re: z.re, im: z.im, residual: res };
        if self.t.is_empty() {
            return if z.im > 0.0 { Ok(z) } else { Err(fail(f64::NAN)) };
        }
        let shift: f64 = self.c * self.t.iter().zip(&self.w).map(|(t, w)| t * w).sum::<f64>();
        let top = 10.0 * (self.scale() + z.norm()).max(z.im);
        let mut y = top;
        let mut v = C64::new(z.re - shift, y);
        v = self.newton(C64::new(z.re, y), v).ok_or_else(|| fail(f64::NAN))?;
        let target = z.im.max(0.0);
        let mut ratio = 0.5;
        while y > target {
            let mut ny = y * ratio;
            if ny < target || y - target < 1e-300 || ny < 1e-3 * target {
                ny = target;
            }
            // once y is at roundoff scale, jump straight to the target
            if ny < 1e-13 * self.scale() {
                ny = target;
            }
            match self.newton(C64::new(z.re, ny), v) {
                Some(nv) => {
                    v = nv;
                    y = ny;
                    ratio = (ratio * ratio).max(0.05);
                }
                None => {
                    ratio = ratio.sqrt();
                    if ratio > 0.999 {
                        let r = (self.x_of(v) - z).norm();
                        return Err(fail(r));
                    }
                }
            }
        }
        Ok(v)
    }

    /// `m = (v/z) ∫ dH(t)/(t - v)`, which avoids the cancellation in
    /// `(m̲ + (1-c)/z)/c` near `z = 0`.
    pub fn m_from_v(&self, v: C64, z: C64) -> C64 {
        let mut s = C64::new(-self.zero_weight, 0.0) / v;
        for (&t, &w) in self.t.iter().zip(&self.w) {
            s += w / (t - v);
        }
        v / z * s
    }

    /// Residual of the fixed-point form `m = G(m) = ∫ dH(t) / (t(1 - c - czm) - z)`,
    /// as a backward error `|m - G(m)| / (max(|m|, 1)·(1 + |G'(m)|))`. The
    /// normalization matters near an atom at 0, where `|m|` is huge and `G`
    /// is evaluated with heavy cancellation.
    pub fn fixed_point_residual(&self, h: &SpectrumModel, m: C64, z: C64) -> f64 {
        let k = 1.0 - self.c - self.c * z * m;
        let mut g = C64::new(0.0, 0.0);
        let mut dg = C64::new(0.0, 0.0);
        for a in h.atoms() {
            let d = a.value * k - z;
            g += a.weight / d;
            dg += a.weight * a.value * self.c * z / (d * d);
        }
        (m - g).norm() / (m.norm().max(1.0) * (1.0 + dg.norm()))
    }
}

/// Root of a continuous `f` on `[lo, hi]` with a sign change, using Newton
/// steps when they stay inside the bracket and bisection otherwise.
fn bracketed_root(f: impl Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64) -> f64 {
    let (flo, _) = f(lo);
    let rising = if flo.is_finite() { flo < 0.0 } else { f(hi).0 > 0.0 };
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (fx, dfx) = f(x);
        if fx == 0.0 {
            return x;
        }
        if (fx < 0.0) == rising {
            lo = x;
        } else {
            hi = x;
        }
        let width = hi - lo;
        if width <= 4.0 * f64::EPSILON * (lo.abs().max(hi.abs()).max(1e-300)) {
            break;
        }
        let nx = x - fx / dfx;
        x = if nx.is_finite() && nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) };
    }
    x
}

/// Support edges of the continuous part, in `v` and `x` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EdgePair {
    pub v_lo: f64,
    pub v_hi: f64,
    pub lo: f64,
    pub hi: f64,
    /// Approximate share of continuous mass, from the `H` weight of the poles
    /// inside `(v_lo, v_hi)`.
    pub mass_hint: f64,
}

impl MpModel {
    pub fn support(&self) -> Vec<EdgePair> {
        let k = self.t.len();
        if k == 0 {
            return Vec::new();
        }
        let phi_minus_one = |v: f64| (self.phi_real(v) - 1.0, self.dphi_real(v));
        // v-coordinates of edges in increasing order
        let mut roots = Vec::with_capacity(2 * k);
        let t1 = self.t[0];
        let mut d = t1.max(1e-300);
        while self.phi_real(t1 - d) >= 1.0 {
            d *= 2.0;
        }
        roots.push(bracketed_root(phi_minus_one, t1 - d, t1));
        for j in 0..k - 1 {
            let (a, b) = (self.t[j], self.t[j + 1]);
            let vmin = bracketed_root(|v| (self.dphi_real(v), self.d2phi_real(v)), a, b);
            if self.phi_real(vmin) < 1.0 {
                roots.push(bracketed_root(phi_minus_one, a, vmin));
                roots.push(bracketed_root(phi_minus_one, vmin, b));
            }
        }
        let tk = self.t[k - 1];
        let mut d = tk;
        while self.phi_real(tk + d) >= 1.0 {
            d *= 2.0;
        }
        roots.push(bracketed_root(phi_minus_one, tk, tk + d));

        let mut out = Vec::with_capacity(roots.len() / 2);
        for pair in roots.chunks_exact(2) {
            let (v_lo, v_hi) = (pair[0], pair[1]);
            let hint: f64 = self.t.iter().zip(&self.w).filter(|(t, _)| **t > v_lo && **t < v_hi).map(|(_, w)| w).sum();
            out.push(EdgePair { v_lo, v_hi, lo: self.x_real(v_lo).max(0.0), hi: self.x_real(v_hi), mass_hint: hint });
        }
        out
    }

    /// Starting guess near a square-root edge.
    fn edge_guess(&self, v_edge: f64, x_edge: f64, x: f64) -> C64 {
        let curv = self.dphi_real(v_edge).abs().max(1e-300);
        C64::new(v_edge, (2.0 * (x - x_edge).abs() / curv).sqrt())
    }
}

/// Stieltjes transform `m(z)` of `Ψ(H, c)` at `z ∈ ℂ⁺`.
pub fn solve_stieltjes(h: &SpectrumModel, c: f64, z: C64) -> Result<C64> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(format!("Im z must be positive, got {}", z.im)));
    }
    let model = MpModel::new(h, c)?;
    let v = model.solve_v(z)?;
    let m = model.m_from_v(v, z);
    let residual = model.fixed_point_residual(h, m, z);
    let companion = c * m + (c - 1.0) / z;
    if !(residual < 1e-10) || !(m.im > 0.0) || !(companion.im > 0.0) {
        return Err(Error::Solver { re: z.re, im: z.im, residual });
    }
    Ok(m)
}

/// Tabulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsdOptions {
    /// Total number of density nodes across all support intervals.
    pub grid_points: usize,
    /// Imaginary offset for density recovery; `0` evaluates the boundary
    /// value `Im m(x + i0)` exactly.
    pub eta: f64,
}

impl Default for EsdOptions {
    fn default() -> Self {
        EsdOptions { grid_points: 2048, eta: 0.0 }
    }
}

/// One quadrature node: midpoint of a cosine-spaced cell.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Node {
    pub x: f64,
    pub density: f64,
    /// `dx` of the cell (the cell's length in `x`, from `dx/dθ · Δθ`).
    pub width: f64,
    pub theta: f64,
    pub v: C64,
}

/// One connected component of the continuous support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportInterval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Piece {
    pub edge: EdgePair,
    pub first: usize,
    pub cells: usize,
}

/// A tabulated `Ψ(H, c)`.
#[derive(Debug, Clone)]
pub struct MPDistribution {
    c: f64,
    source: SpectrumModel,
    zero_atom: f64,
    raw_mass: f64,
    pub(crate) model: MpModel,
    pub(crate) pieces: Vec<Piece>,
    pub(crate) nodes: Vec<Node>,
    /// `(x, cdf)` at cell boundaries, per piece in order.
    knots: Vec<(f64, f64)>,
    norm: f64,
}

impl MPDistribution {
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn source(&self) -> &SpectrumModel {
        &self.source
    }

    pub fn zero_atom(&self) -> f64 {
        self.zero_atom
    }

    /// `zero_atom + ∫ density`, before normalization.
    pub fn total_mass(&self) -> f64 {
        self.zero_atom + self.raw_mass
    }

    pub fn support_intervals(&self) -> Vec<SupportInterval> {
        self.pieces.iter().map(|p| SupportInterval { lo: p.edge.lo, hi: p.edge.hi }).collect()
    }

    /// `(x, density)` at every node.
    pub fn grid(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| (n.x, n.density)).collect()
    }

    /// Continuous density at a point inside the support (exact, no grid).
    pub fn density_at(&self, x: f64) -> Result<f64> {
        if !self.pieces.iter().any(|p| x > p.edge.lo && x < p.edge.hi) {
            return Ok(0.0);
        }
        let v = self
            .model
            .solve_v(C64::new(x, 0.0))
            .or_else(|_| self.model.solve_v(C64::new(x, 1e-14 * self.model.scale())))?;
        Ok(v.im / (std::f64::consts::PI * self.c * v.norm_sqr()))
    }

    /// Normalized CDF, linear between cell boundaries.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let mut prev = (0.0, self.zero_atom);
        for &(kx, kc) in &self.knots {
            if x < kx {
                if kx > prev.0 {
                    return prev.1 + (kc - prev.1) * (x - prev.0) / (kx - prev.0);
                }
                return prev.1;
            }
            prev = (kx, kc);
        }
        1.0
    }

    /// Smallest `x` with `cdf(x) >= level`.
    pub fn quantile(&self, level: f64) -> f64 {
        if level <= self.zero_atom || self.knots.is_empty() {
            return 0.0;
        }
        let i = self.knots.partition_point(|k| k.1 < level);
        if i == 0 {
            return self.knots[0].0;
        }
        if i >= self.knots.len() {
            return self.knots[self.knots.len() - 1].0;
        }
        let (x0, c0) = self.knots[i - 1];
        let (x1, c1) = self.knots[i];
        if c1 > c0 {
            x0 + (x1 - x0) * (level - c0) / (c1 - c0)
        } else {
            x1
        }
    }

    /// Normalized quadrature weights: `density · width` scaled so the
    /// continuous part has mass `1 - zero_atom`.
    pub(crate) fn normalizer(&self) -> f64 {
        self.norm
    }

    pub(crate) fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// `∫ f dΨ`, with the zero atom contributing `f(0)·zero_atom`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        let cont: f64 = self.nodes.iter().map(|n| f(n.x) * n.density * n.width).sum::<f64>() * self.norm;
        let atom = if self.zero_atom > 0.0 { f(0.0) * self.zero_atom } else { 0.0 };
        cont + atom
    }

    /// Stieltjes transform at an arbitrary `z ∈ ℂ⁺`.
    pub fn stieltjes(&self, z: C64) -> Result<C64> {
        solve_stieltjes(&self.source, self.c, z)
    }

    /// CSV with columns `x,density,cdf` at every node.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "density", "cdf"])?;
        if self.zero_atom > 0.0 {
            w.write_record(["0", "inf", &self.zero_atom.to_string()])?;
        }
        for n in &self.nodes {
            w.write_record([n.x.to_string(), n.density.to_string(), self.cdf(n.x).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn allocate_cells(edges: &[EdgePair], total: usize) -> Vec<usize> {
    const MIN_CELLS: usize = 16;
    let len: f64 = edges.iter().map(|e| e.hi - e.lo).sum();
    let mass: f64 = edges.iter().map(|e| e.mass_hint).sum();
    edges
        .iter()
        .map(|e| {
            let share = 0.5 * (e.hi - e.lo) / len.max(1e-300) + 0.5 * e.mass_hint / mass.max(1e-300);
            ((share * total as f64).round() as usize).max(MIN_CELLS)
        })
        .collect()
}

const MASS_TOL: f64 = 1e-4;

fn tabulate(
    model: &MpModel,
    edges: &[EdgePair],
    cells: &[usize],
    opts: &EsdOptions,
    robust: bool,
) -> Result<(Vec<Node>, Vec<Piece>)> {
    let pi = std::f64::consts::PI;
    let c = model.c;
    let mut nodes = Vec::with_capacity(cells.iter().sum());
    let mut pieces = Vec::with_capacity(edges.len());
    for (edge, &nc) in edges.iter().zip(cells) {
        let first = nodes.len();
        let half = 0.5 * (edge.hi - edge.lo);
        let dtheta = pi / nc as f64;
        let mut prev: Option<C64> = None;
        for j in 0..nc {
            let theta = (j as f64 + 0.5) * dtheta;
            let x = edge.lo + half * (1.0 - theta.cos());
            let v = if robust { solve_node_continued(model, x)? } else { solve_node(model, edge, x, prev)? };
            prev = Some(v);
            let density = if opts.eta > 0.0 {
                let z = C64::new(x, opts.eta);
                let vz =
                    model.newton(z, C64::new(v.re, v.im + opts.eta)).map(Ok).unwrap_or_else(|| model.solve_v(z))?;
                model.m_from_v(vz, z).im / pi
            } else {
                v.im / (pi * c * v.norm_sqr())
            };
            nodes.push(Node { x, density, width: half * theta.sin() * dtheta, theta, v });
        }
        pieces.push(Piece { edge: *edge, first, cells: nc });
    }
    Ok((nodes, pieces))
}

/// Node solve that follows the physical branch down from far above the axis.
fn solve_node_continued(model: &MpModel, x: f64) -> Result<C64> {
    let v = model.solve_v(C64::new(x, 0.0))?;
    if v.im > 0.0 {
        Ok(v)
    } else {
        Err(Error::Solver { re: x, im: 0.0, residual: (model.x_of(v) - C64::new(x, 0.0)).norm() })
    }
}

/// Tabulate `Ψ(H, c)` on cosine-spaced nodes over each support interval.
pub fn esd_grid(h: &SpectrumModel, c: f64, opts: &EsdOptions) -> Result<MPDistribution> {
    let model = MpModel::new(h, c)?;
    let zero_atom = model.zero_atom();
    let edges = model.support();
    let cells = allocate_cells(&edges, opts.grid_points.max(16));
    let pi = std::f64::consts::PI;
    let (mut nodes, mut pieces) = tabulate(&model, &edges, &cells, opts, false)?;
    // Warm-started Newton can settle on a non-physical complex root inside the
    // support; a mass shortfall exposes that, so redo the pass by continuation.
    let mass_of = |nodes: &[Node]| nodes.iter().map(|n| n.density * n.width).sum::<f64>();
    if (mass_of(&nodes) - (1.0 - zero_atom)).abs() > MASS_TOL {
        (nodes, pieces) = tabulate(&model, &edges, &cells, opts, true)?;
    }
    let raw_mass: f64 = nodes.iter().map(|n| n.density * n.width).sum();
    let norm = if raw_mass > 0.0 { (1.0 - zero_atom) / raw_mass } else { 0.0 };
    let mut knots = Vec::with_capacity(nodes.len() + pieces.len());
    let mut acc = zero_atom;
    for piece in &pieces {
        let half = 0.5 * (piece.edge.hi - piece.edge.lo);
        let dtheta = pi / piece.cells as f64;
        knots.push((piece.edge.lo, acc));
        for j in 0..piece.cells {
            let n = &nodes[piece.first + j];
            acc += n.density * n.width * norm;
            let theta = (j + 1) as f64 * dtheta;
            knots.push((piece.edge.lo + half * (1.0 - theta.cos()), acc.min(1.0)));
        }
    }
    if let Some(last) = knots.last_mut() {
        last.1 = 1.0;
    }
    Ok(MPDistribution { c, source: h.clone(), zero_atom, raw_mass, model, pieces, nodes, knots, norm })
}

fn solve_node(model: &MpModel, edge: &EdgePair, x: f64, prev: Option<C64>) -> Result<C64> {
    let z = C64::new(x, 0.0);
    let near_lo = (x - edge.lo) <= (edge.hi - x);
    let edge_start =
        if near_lo { model.edge_guess(edge.v_lo, edge.lo, x) } else { model.edge_guess(edge.v_hi, edge.hi, x) };
    let mut starts = vec![edge_start];
    if let Some(p) = prev {
        let rp = (model.x_of(p) - z).norm();
        let re = (model.x_of(edge_start) - z).norm();
        if rp < re {
            starts.insert(0, p);
        } else {
            starts.push(p);
        }
    }
    for s in starts {
        if let Some(v) = model.newton(z, s) {
            if v.im > 0.0 {
                return Ok(v);
            }
        }
    }
    // fall back to continuation from far above the axis
    let v = model.solve_v(C64::new(x, 0.0))?;
    if v.im > 0.0 {
        Ok(v)
    } else {
        Err(Error::Solver { re: x, im: 0.0, residual: (model.x_of(v) - z).norm() })
    }
}

/// A function applied to eigenvalues in a linear spectral statistic.
#[derive(Clone)]
pub enum SpectralFunction {
    Identity,
    Square,
    /// `x - log(x) - 1`.
    XMinusLog,
    /// `f ≡ 1`.
    Constant,
    Custom {
        label: String,
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for SpectralFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SpectralFunction({})", self.label())
    }
}

impl PartialEq for SpectralFunction {
    fn eq(&self, other: &Self) -> bool {
        self.label() == other.label()
    }
}

impl SpectralFunction {
    pub fn custom(label: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SpectralFunction::Custom { label: label.into(), f: Arc::new(f) }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            SpectralFunction::Identity => x,
            SpectralFunction::Square => x * x,
            SpectralFunction::XMinusLog => x - x.ln() - 1.0,
            SpectralFunction::Constant => 1.0,
            SpectralFunction::Custom { f, .. } => f(x),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            SpectralFunction::Identity => "identity",
            SpectralFunction::Square => "square",
            SpectralFunction::XMinusLog => "x_minus_log",
            SpectralFunction::Constant => "constant",
            SpectralFunction::Custom { label, .. } => label,
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "identity" | "x" => Ok(SpectralFunction::Identity),
            "square" | "x2" => Ok(SpectralFunction::Square),
            "x_minus_log" | "log" => Ok(SpectralFunction::XMinusLog),
            "constant" | "one" => Ok(SpectralFunction::Constant),
            other => Err(Error::Config(format!("unknown spectral function {other:?}"))),
        }
    }

    pub fn defined_at_zero(&self) -> bool {
        self.eval(0.0).is_finite()
    }
}

impl Serialize for SpectralFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for SpectralFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        SpectralFunction::from_label(&s).map_err(serde::de::Error::custom)
    }
}

/// `ϑ(f) = ∫ f dΨ(H, c)` by quadrature on the tabulated distribution.
pub fn centering_parameter(dist: &MPDistribution, f: &SpectralFunction) -> Result<f64> {
    if dist.zero_atom() > 0.0 && !f.defined_at_zero() {
        return Err(Error::Domain(format!(
            "{} is undefined at 0 but the distribution has an atom of mass {} there",
            f.label(),
            dist.zero_atom()
        )));
    }
    let v = dist.integrate(|x| f.eval(x));
    if !v.is_finite() {
        return Err(Error::Domain(format!("{} integrates to {v}", f.label())));
    }
    Ok(v)
}

/// Centering values keyed by function label.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CenteringParams {
    pub values: BTreeMap<String, f64>,
}

impl CenteringParams {
    pub fn compute(dist: &MPDistribution, fs: &[SpectralFunction]) -> Result<Self> {
        let mut values = BTreeMap::new();
        for f in fs {
            values.insert(f.label().to_string(), centering_parameter(dist, f)?);
        }
        Ok(CenteringParams { values })
    }

    pub fn get(&self, label: &str) -> Option<f64> {
        self.values.get(label).copied()
    }
}

/// Closed-form `(ϑ(x), ϑ(x²))` with the finite-sample ratio `p/n`:
/// `(mean Λ, mean Λ² + (ΣΛ)²/(np))`.
pub fn centering_moments(h: &SpectrumModel, n: usize, p: usize) -> (f64, f64) {
    let m1 = h.moment(1);
    let m2 = h.moment(2);
    let pf = p as f64;
    (m1, m2 + (pf * m1).powi(2) / (n as f64 * pf))
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Largest `expansion·p` accepted by [`centering_parameter_mc`] by default.
pub const DEFAULT_MC_MAX_DIM: usize = 4096;

/// Monte Carlo centering: average over `reps` of `(1/(Ep)) Σ f(λ_j)` for a
/// sample covariance of `E·n` draws in dimension `E·p`, with population
/// spectrum `spectrum` repeated `E` times and `ξ²` drawn at dimension `E·p`.
#[allow(clippy::too_many_arguments)]
pub fn centering_parameter_mc(
    spectrum: &[f64],
    law: &dyn RadialLaw,
    n: usize,
    f: &SpectralFunction,
    reps: usize,
    expansion: usize,
    seed: u64,
    max_dim: usize,
) -> Result<McEstimate> {
    let p = spectrum.len();
    if reps == 0 || expansion == 0 || n == 0 || p == 0 {
        return Err(Error::Config("reps, expansion, n and p must all be positive".into()));
    }
    let (big_p, big_n) = (expansion * p, expansion * n);
    if big_p > max_dim {
        return Err(Error::MemoryGuard(format!(
            "expanded dimension {big_p} exceeds the cap {max_dim}; lower the expansion or raise the cap"
        )));
    }
    if big_p > big_n && !f.defined_at_zero() {
        return Err(Error::Domain(format!("{} is undefined at 0 and p > n", f.label())));
    }
    let root = SqrtFactor::Diagonal((0..big_p).map(|j| spectrum[j % p].max(0.0).sqrt()).collect());
    let mut vals = Vec::with_capacity(reps);
    for r in 0..reps {
        let z = sample_radial_rows(law, big_n, big_p, rng::derive_seed(seed, r as u64))?;
        let x = apply_sqrt(z, &root);
        let eigs = sample_covariance_eigs_of(x.as_ref())?;
        let v = eigs.iter().map(|&l| f.eval(l)).sum::<f64>() / big_p as f64;
        if !v.is_finite() {
            return Err(Error::Domain(format!("{} produced a non-finite statistic", f.label())));
        }
        vals.push(v);
    }
    let k = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / k;
    let sd =
        if vals.len() > 1 { (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt() } else { 0.0 };
    Ok(McEstimate { mean, std_error: sd / k.sqrt() })
}
