//! Monte Carlo reconstruction of the extension-based operators.
//!
//! A path is a pair (X_t, η_t): X is a torus-valued Brownian motion with
//! generator Δ (per-coordinate increments of variance 2·dt) and η is an
//! independent vertical diffusion dη = b(η)dt + a(η)dβ with E β_t² = 2t,
//! started at y0 and absorbed at the first crossing of 0, at time τ.
//! Conditioning the halved stochastic integral of the extension's gradient
//! on the terminal position X_τ reproduces the spectral operators:
//!
//!   W f      ≈ E[ ½ e^{∫₀^τ V} ∫₀^τ e^{−∫₀^s V} ∂_y U_f(X_s, η_s) a(η_s) dβ_s | X_τ = x ]
//!   T_i f    ≈ same with integrand ∂_{x_i}U_f dβ_s
//!   S_ij f   ≈ same with integrand ∂_{x_i}U_f dB^j_s  (B = the torus noise)
//!
//! where U_f is the vertical extension of f built on −Δ (or on −(Δ+V) when a
//! potential is supplied).  The conditional expectation is estimated with
//! equal-width bin averages of X_τ, so a run from a finite starting height y0
//! estimates the multiplier with the occupation density G(y0, ·) in place of
//! its y0 → ∞ limit; `multiplier::phi_extension_from_height` and friends give
//! the matching exact oracles, and kernel decay bounds the gap to the limit.
//!
//! All randomness is counter-based: path p reads two dedicated ChaCha streams
//! (2p for the vertical noise, 2p+1 for the torus noise), so ensembles are
//! bit-identical for a given (seed, config) regardless of thread count.  The
//! convention E β_t² = 2t is kept throughout; comparisons against references
//! that use variance-t Brownian motion must rescale time.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::torus::{forward_transform, schrodinger_build, TorusField, TorusGrid};

/// Ensemble parameters shared by all estimators in this module.
#[derive(Debug, Clone, Copy)]
pub struct McConfig {
    /// Euler time step.
    pub dt: f64,
    /// Number of simulated paths.
    pub n_paths: usize,
    /// Starting height of the vertical diffusion.
    pub y0: f64,
    /// Seed of the counter-based generator.
    pub seed: u64,
    /// Bins per x-axis for the conditional-expectation estimate.
    pub n_bins: usize,
    /// Cap on Euler steps per path; paths that exceed it are flagged.
    pub max_steps: usize,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::validation(format!(
                "dt must be finite and > 0, got {}",
                self.dt
            )));
        }
        if !(self.y0 > 0.0) || !self.y0.is_finite() {
            return Err(Error::validation(format!(
                "y0 must be finite and > 0, got {}",
                self.y0
            )));
        }
        if self.dt > 0.01 * self.y0 * (1.0 + 1e-12) {
            return Err(Error::validation(format!(
                "dt = {} exceeds 0.01·y0 = {}; the absorption layer would be \
                 under-resolved",
                self.dt,
                0.01 * self.y0
            )));
        }
        if self.n_paths == 0 {
            return Err(Error::validation("n_paths must be >= 1".to_string()));
        }
        if self.max_steps == 0 {
            return Err(Error::validation("max_steps must be >= 1".to_string()));
        }
        Ok(())
    }
}

/// One vertical path: Euler states (t_k, η_k) followed, when the path is
/// absorbed, by the interpolated crossing point (τ, 0).
#[derive(Debug, Clone)]
pub struct EtaPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Absorption time, `None` when max_steps ran out first (flagged path).
    pub tau: Option<f64>,
}

/// One torus path, wrapped into [0, 2π) per coordinate; the second
/// coordinate stays 0 on T¹.
#[derive(Debug, Clone)]
pub struct TorusPath {
    pub times: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
}

/// Binned ensemble estimate with per-bin sampling statistics.
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    /// Per-bin means on the bin grid (row-major on T²).
    pub estimate: TorusField,
    /// Per-bin standard error of the mean (0 when fewer than two samples).
    pub std_error: Vec<f64>,
    /// Paths that landed in each bin.
    pub n_effective: Vec<u64>,
    /// Paths excluded because max_steps ran out before absorption.
    pub flagged: usize,
    /// Representative coordinate of bin b is (b + bin_offset)·(2π/n_bins):
    /// 0.5 for terminal-position bins, 0.0 for starting-point bins.
    pub bin_offset: f64,
}

impl EnsembleResult {
    /// CSV export, one row per bin:
    /// `bin_center[,bin_center2],estimate_re,estimate_im,std_error,n_effective`.
    /// Floats carry 17 significant digits so the export round-trips exactly.
    pub fn to_csv(&self) -> String {
        let grid = self.estimate.grid();
        let width = TAU / grid.n() as f64;
        let mut out = String::new();
        if grid.dim() == 1 {
            out.push_str("bin_center,estimate_re,estimate_im,std_error,n_effective\n");
        } else {
            out.push_str(
                "bin_center,bin_center2,estimate_re,estimate_im,std_error,n_effective\n",
            );
        }
        for flat in 0..grid.total_points() {
            let v = self.estimate.values()[flat];
            if grid.dim() == 1 {
                out.push_str(&format!(
                    "{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                    (flat as f64 + self.bin_offset) * width,
                    v.re,
                    v.im,
                    self.std_error[flat],
                    self.n_effective[flat]
                ));
            } else {
                let (i, j) = (flat / grid.n(), flat % grid.n());
                out.push_str(&format!(
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                    (i as f64 + self.bin_offset) * width,
                    (j as f64 + self.bin_offset) * width,
                    v.re,
                    v.im,
                    self.std_error[flat],
                    self.n_effective[flat]
                ));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Path primitives
// ---------------------------------------------------------------------------

fn eta_rng(seed: u64, path_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path_index as u64);
    rng
}

fn torus_rng(seed: u64, path_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * path_index as u64 + 1);
    rng
}

/// Euler path of the vertical diffusion from cfg.y0, absorbed at 0.  The
/// crossing step is refined by linear interpolation: τ = t_k + ρ·dt with
/// ρ = η_k/(η_k − η_{k+1}).  Deterministic given (cfg.seed, path_index).
pub fn simulate_eta(spec: &DiffusionSpec, cfg: &McConfig, path_index: usize) -> Result<EtaPath> {
    cfg.validate()?;
    require_admissible(spec)?;
    let mut rng = eta_rng(cfg.seed, path_index);
    let sq = (2.0 * cfg.dt).sqrt();
    let mut times = vec![0.0];
    let mut values = vec![cfg.y0];
    let mut y = cfg.y0;
    let mut t = 0.0;
    for _ in 0..cfg.max_steps {
        let z: f64 = rng.sample(StandardNormal);
        let next = y + spec.coeff_b(y) * cfg.dt + spec.coeff_a(y) * sq * z;
        if next <= 0.0 {
            let rho = y / (y - next);
            let tau = t + rho * cfg.dt;
            times.push(tau);
            values.push(0.0);
            return Ok(EtaPath {
                times,
                values,
                tau: Some(tau),
            });
        }
        t += cfg.dt;
        y = next;
        times.push(t);
        values.push(y);
    }
    Ok(EtaPath {
        times,
        values,
        tau: None,
    })
}

/// Torus Brownian path with generator Δ: per-coordinate increments
/// Normal(0, 2·dt), wrapped mod 2π, X₀ uniform.  Runs for max_steps steps;
/// independent of the vertical noise and deterministic given
/// (cfg.seed, path_index).
pub fn simulate_x(grid: TorusGrid, cfg: &McConfig, path_index: usize) -> Result<TorusPath> {
    cfg.validate()?;
    let dim = grid.dim();
    let mut rng = torus_rng(cfg.seed, path_index);
    let sq = (2.0 * cfg.dt).sqrt();
    let mut x = [0.0f64; 2];
    for slot in x.iter_mut().take(dim) {
        *slot = rng.gen::<f64>() * TAU;
    }
    let mut times = Vec::with_capacity(cfg.max_steps + 1);
    let mut positions = Vec::with_capacity(cfg.max_steps + 1);
    times.push(0.0);
    positions.push(x);
    for k in 1..=cfg.max_steps {
        for slot in x.iter_mut().take(dim) {
            let z: f64 = rng.sample(StandardNormal);
            *slot = (*slot + sq * z).rem_euclid(TAU);
        }
        times.push(k as f64 * cfg.dt);
        positions.push(x);
    }
    Ok(TorusPath { times, positions })
}

fn require_admissible(spec: &DiffusionSpec) -> Result<()> {
    if !spec.is_admissible()? {
        return Err(Error::precondition(
            "diffusion spec fails the admissibility conditions".to_string(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Extension tables: exact Fourier modes in x, cubic interpolation on a
// geometric y-grid.
// ---------------------------------------------------------------------------

const TABLE_NODES: usize = 2048;

struct YTable {
    ln_ymin: f64,
    inv_dlog: f64,
    len: usize,
    y_max: f64,
}

impl YTable {
    /// Interpolation window: base node index and cubic Lagrange weights in
    /// the log variable.  None above y_max (the kernels have decayed to 0 at
    /// machine precision there); below the first node the value is clamped
    /// to the first node.
    #[inline]
    fn window(&self, y: f64) -> Option<(usize, [f64; 4])> {
        if y >= self.y_max {
            return None;
        }
        let j = ((y.ln() - self.ln_ymin) * self.inv_dlog).max(0.0);
        let cell = (j as usize).clamp(1, self.len - 3);
        let xi = j - cell as f64;
        let w0 = -xi * (xi - 1.0) * (xi - 2.0) / 6.0;
        let w1 = (xi * xi - 1.0) * (xi - 2.0) / 2.0;
        let w2 = -xi * (xi + 1.0) * (xi - 2.0) / 2.0;
        let w3 = xi * (xi * xi - 1.0) / 6.0;
        Some((cell - 1, [w0, w1, w2, w3]))
    }
}

struct ModeEntry {
    kx: f64,
    ky: f64,
    /// Entry stands for the conjugate pair {k, −k}; contributions are twice
    /// the real part of the k term.
    pair: bool,
    /// y-table of the coefficient of e^{ik·x} in U_f(·, y).
    u: Vec<Complex64>,
    /// y-table of its ∂_y.
    du: Vec<Complex64>,
}

struct UfTables {
    ytab: YTable,
    entries: Vec<ModeEntry>,
}

#[inline]
fn dot4(tab: &[Complex64], base: usize, w: &[f64; 4]) -> Complex64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for r in 0..4 {
        let v = tab[base + r];
        re += w[r] * v.re;
        im += w[r] * v.im;
    }
    Complex64::new(re, im)
}

impl UfTables {
    /// Σ_k ∂_yC_k(y)·e^{ik·x} = ∂_y U_f(x, y).
    #[inline]
    fn eval_dy(&self, base: usize, w: &[f64; 4], x: &[f64; 2]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for e in &self.entries {
            let t = dot4(&e.du, base, w);
            let (s, c) = (e.kx * x[0] + e.ky * x[1]).sin_cos();
            let z = Complex64::new(t.re * c - t.im * s, t.re * s + t.im * c);
            if e.pair {
                acc.re += 2.0 * z.re;
            } else {
                acc += z;
            }
        }
        acc
    }

    /// Σ_k i·k_axis·C_k(y)·e^{ik·x} = ∂_{x_axis} U_f(x, y).
    #[inline]
    fn eval_dx(&self, axis: usize, base: usize, w: &[f64; 4], x: &[f64; 2]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for e in &self.entries {
            let kax = if axis == 0 { e.kx } else { e.ky };
            if kax == 0.0 {
                continue;
            }
            let t = dot4(&e.u, base, w);
            let (s, c) = (e.kx * x[0] + e.ky * x[1]).sin_cos();
            let z = Complex64::new(t.re * c - t.im * s, t.re * s + t.im * c);
            if e.pair {
                acc.re -= 2.0 * kax * z.im;
            } else {
                acc.re -= kax * z.im;
                acc.im += kax * z.re;
            }
        }
        acc
    }
}

fn field_is_real(f: &TorusField) -> bool {
    let scale = 1.0 + f.max_abs();
    f.values().iter().all(|v| v.im.abs() <= 1e-12 * scale)
}

/// Flat index of the mode −k.
fn negated_flat(grid: TorusGrid, flat: usize) -> usize {
    let n = grid.n();
    match grid.dim() {
        1 => (n - flat % n) % n,
        _ => {
            let (i, j) = (flat / n, flat % n);
            ((n - i) % n) * n + (n - j) % n
        }
    }
}

/// Kernel rows K(y_node, λ) and ∂_yK(y_node, λ) for one spectral point.
fn kernel_rows(spec: &DiffusionSpec, nodes: &[f64], lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if lambda == 0.0 {
        return Ok((vec![1.0; nodes.len()], vec![0.0; nodes.len()]));
    }
    let mut k = Vec::with_capacity(nodes.len());
    let mut dk = Vec::with_capacity(nodes.len());
    for &y in nodes {
        k.push(spec.kernel_k(y, lambda)?);
        dk.push(spec.dk_dy(y, lambda)?);
    }
    Ok((k, dk))
}

fn build_uf_tables(
    f: &TorusField,
    spec: &DiffusionSpec,
    v: Option<&TorusField>,
    cfg: &McConfig,
) -> Result<UfTables> {
    let grid = f.grid();
    let y_min = f64::min(1e-4, 1e-3 * (2.0 * cfg.dt).sqrt());
    let y_max = (6.0 * cfg.y0).max(50.0);
    let dlog = (y_max / y_min).ln() / (TABLE_NODES - 1) as f64;
    let nodes: Vec<f64> = (0..TABLE_NODES)
        .map(|j| y_min * (j as f64 * dlog).exp())
        .collect();
    let ytab = YTable {
        ln_ymin: y_min.ln(),
        inv_dlog: 1.0 / dlog,
        len: TABLE_NODES,
        y_max,
    };

    if spec.kernel_support_end().is_some() {
        let mean = f.mean();
        if mean.norm() > 1e-12 * (1.0 + f.max_abs()) {
            return Err(Error::precondition(
                "this diffusion's kernel family carries no bounded zero mode; \
                 the field must have zero mean"
                    .to_string(),
            ));
        }
    }

    // Per-mode complex coefficient tables C_k(y) with U_f(x,y) = Σ C_k(y)e^{ikx}.
    let total = grid.total_points();
    let mut tables: Vec<Option<(Vec<Complex64>, Vec<Complex64>)>> = vec![None; total];
    let real_symmetric;
    match v {
        None => {
            real_symmetric = field_is_real(f);
            let coeffs = forward_transform(f);
            let cmax = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let thr = 1e-13 * (1.0 + cmax);
            let mut rows: std::collections::BTreeMap<u64, (Vec<f64>, Vec<f64>)> =
                std::collections::BTreeMap::new();
            for (flat, &c) in coeffs.iter().enumerate() {
                if c.norm() <= thr {
                    continue;
                }
                let k = grid.frequency_vector(flat);
                if k == [0, 0] {
                    // The kernel of every admissible family tends to 1 at
                    // λ = 0 with zero derivative: constants ride along
                    // unchanged and never enter the gradient integrands.
                    continue;
                }
                let lambda = (k[0] * k[0] + k[1] * k[1]) as f64;
                if !rows.contains_key(&lambda.to_bits()) {
                    rows.insert(lambda.to_bits(), kernel_rows(spec, &nodes, lambda)?);
                }
                let (krow, dkrow) = &rows[&lambda.to_bits()];
                tables[flat] = Some((
                    krow.iter().map(|&k| c * k).collect(),
                    dkrow.iter().map(|&d| c * d).collect(),
                ));
            }
        }
        Some(pot) => {
            real_symmetric = field_is_real(f) && field_is_real(pot);
            let op = schrodinger_build(grid, pot)?;
            let (cre, cim) = op.coefficients(f)?;
            let n_eig = cre.len();
            let cscale = (0..n_eig)
                .map(|j| cre[j].hypot(cim[j]))
                .fold(0.0, f64::max);
            let lambdas = op.spectral_points();
            let mut rows: std::collections::BTreeMap<u64, (Vec<f64>, Vec<f64>)> =
                std::collections::BTreeMap::new();
            let mut kept: Vec<(usize, Complex64, Vec<Complex64>)> = Vec::new();
            for j in 0..n_eig {
                let c = Complex64::new(cre[j], cim[j]);
                if c.norm() <= 1e-13 * (1.0 + cscale) {
                    continue;
                }
                if !rows.contains_key(&lambdas[j].to_bits()) {
                    rows.insert(lambdas[j].to_bits(), kernel_rows(spec, &nodes, lambdas[j])?);
                }
                let column = TorusField::new(
                    grid,
                    op.eigenvectors()
                        .column(j)
                        .iter()
                        .map(|&x| Complex64::new(x, 0.0))
                        .collect(),
                )?;
                kept.push((j, c, forward_transform(&column)));
            }
            for flat in 0..total {
                let mut u = vec![Complex64::new(0.0, 0.0); TABLE_NODES];
                let mut du = vec![Complex64::new(0.0, 0.0); TABLE_NODES];
                let mut mass = 0.0f64;
                for (j, c, psi_hat) in &kept {
                    let w = c * psi_hat[flat];
                    if w.norm() <= 1e-15 * (1.0 + cscale) {
                        continue;
                    }
                    mass = mass.max(w.norm());
                    let (krow, dkrow) = &rows[&lambdas[*j].to_bits()];
                    for node in 0..TABLE_NODES {
                        u[node] += w * krow[node];
                        du[node] += w * dkrow[node];
                    }
                }
                if mass > 1e-13 * (1.0 + cscale) {
                    tables[flat] = Some((u, du));
                }
            }
            // The zero mode of U_f is constant in x and never enters the
            // gradient integrands; drop it.
            tables[0] = None;
        }
    }

    let mut entries = Vec::new();
    let mut consumed = vec![false; total];
    for flat in 0..total {
        if consumed[flat] || tables[flat].is_none() {
            continue;
        }
        let partner = negated_flat(grid, flat);
        let k = grid.frequency_vector(flat);
        let (kx, ky) = (k[0] as f64, k[1] as f64);
        if real_symmetric && partner != flat && tables[partner].is_some() {
            // Merge the conjugate pair, symmetrizing away FFT roundoff.
            let (u_a, du_a) = tables[flat].take().unwrap();
            let (u_b, du_b) = tables[partner].take().unwrap();
            consumed[partner] = true;
            let merge = |a: &[Complex64], b: &[Complex64]| -> Vec<Complex64> {
                a.iter()
                    .zip(b.iter())
                    .map(|(x, y)| 0.5 * (x + y.conj()))
                    .collect()
            };
            entries.push(ModeEntry {
                kx,
                ky,
                pair: true,
                u: merge(&u_a, &u_b),
                du: merge(&du_a, &du_b),
            });
        } else {
            let (u, du) = tables[flat].take().unwrap();
            entries.push(ModeEntry {
                kx,
                ky,
                pair: false,
                u,
                du,
            });
        }
        consumed[flat] = true;
    }
    Ok(UfTables { ytab, entries })
}

// ---------------------------------------------------------------------------
// Exact trigonometric evaluation of grid fields (for V and for f in the
// Feynman–Kac estimator).
// ---------------------------------------------------------------------------

struct FourierEval {
    entries: Vec<(f64, f64, Complex64, bool)>,
}

impl FourierEval {
    fn from_field(f: &TorusField) -> FourierEval {
        let grid = f.grid();
        let coeffs = forward_transform(f);
        let cmax = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let thr = 1e-13 * (1.0 + cmax);
        let real_symmetric = field_is_real(f);
        let mut entries = Vec::new();
        let mut consumed = vec![false; coeffs.len()];
        for (flat, &c) in coeffs.iter().enumerate() {
            if consumed[flat] || c.norm() <= thr {
                continue;
            }
            let partner = negated_flat(grid, flat);
            let k = grid.frequency_vector(flat);
            if real_symmetric && partner != flat && coeffs[partner].norm() > thr {
                consumed[partner] = true;
                entries.push((
                    k[0] as f64,
                    k[1] as f64,
                    0.5 * (c + coeffs[partner].conj()),
                    true,
                ));
            } else {
                entries.push((k[0] as f64, k[1] as f64, c, false));
            }
            consumed[flat] = true;
        }
        FourierEval { entries }
    }

    #[inline]
    fn eval(&self, x: &[f64; 2]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &(kx, ky, c, pair) in &self.entries {
            let (s, co) = (kx * x[0] + ky * x[1]).sin_cos();
            let z = Complex64::new(c.re * co - c.im * s, c.re * s + c.im * co);
            if pair {
                acc.re += 2.0 * z.re;
            } else {
                acc += z;
            }
        }
        acc
    }

    /// Real part clamped to ≤ 0 (potentials are nonpositive by contract).
    #[inline]
    fn eval_potential(&self, x: &[f64; 2]) -> f64 {
        self.eval(x).re.min(0.0)
    }
}

fn require_potential(grid: TorusGrid, v: &TorusField) -> Result<()> {
    if v.grid() != grid {
        return Err(Error::validation(
            "potential grid does not match the field grid".to_string(),
        ));
    }
    let scale = 1.0 + v.max_abs();
    for val in v.values() {
        if val.im.abs() > 1e-12 * scale || val.re > 1e-12 * scale {
            return Err(Error::validation(
                "potential must be real-valued and <= 0".to_string(),
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Binning
// ---------------------------------------------------------------------------

const FLAGGED: u32 = u32::MAX;

#[inline]
fn bin_of(x: &[f64; 2], dim: usize, n_bins: usize) -> u32 {
    let width = TAU / n_bins as f64;
    let b0 = ((x[0] / width) as usize).min(n_bins - 1);
    if dim == 1 {
        b0 as u32
    } else {
        let b1 = ((x[1] / width) as usize).min(n_bins - 1);
        (b0 * n_bins + b1) as u32
    }
}

#[derive(Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    #[inline]
    fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Sequential compensated reduction of per-path outcomes (already in path
/// order, so the result does not depend on how the paths were scheduled).
fn reduce_bins(
    outcomes: &[(u32, f64, f64)],
    bin_grid: TorusGrid,
    bin_offset: f64,
) -> Result<EnsembleResult> {
    let total = bin_grid.total_points();
    let mut sum_re = vec![Kahan::default(); total];
    let mut sum_im = vec![Kahan::default(); total];
    let mut sq_re = vec![Kahan::default(); total];
    let mut sq_im = vec![Kahan::default(); total];
    let mut count = vec![0u64; total];
    let mut flagged = 0usize;
    for &(bin, re, im) in outcomes {
        if bin == FLAGGED {
            flagged += 1;
            continue;
        }
        let b = bin as usize;
        sum_re[b].add(re);
        sum_im[b].add(im);
        sq_re[b].add(re * re);
        sq_im[b].add(im * im);
        count[b] += 1;
    }
    let mut values = Vec::with_capacity(total);
    let mut std_error = Vec::with_capacity(total);
    for b in 0..total {
        if count[b] == 0 {
            values.push(Complex64::new(0.0, 0.0));
            std_error.push(0.0);
            continue;
        }
        let n = count[b] as f64;
        let mean_re = sum_re[b].sum / n;
        let mean_im = sum_im[b].sum / n;
        values.push(Complex64::new(mean_re, mean_im));
        if count[b] < 2 {
            std_error.push(0.0);
        } else {
            let var_re = ((sq_re[b].sum - n * mean_re * mean_re) / (n - 1.0)).max(0.0);
            let var_im = ((sq_im[b].sum - n * mean_im * mean_im) / (n - 1.0)).max(0.0);
            std_error.push(((var_re + var_im) / n).sqrt());
        }
    }
    Ok(EnsembleResult {
        estimate: TorusField::new(bin_grid, values)?,
        std_error,
        n_effective: count,
        flagged,
        bin_offset,
    })
}

// ---------------------------------------------------------------------------
// The conditional-expectation estimators
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum GvKind {
    DyDbeta,
    DxDbeta(usize),
    DxDb(usize, usize),
}

fn gv_run(
    f: &TorusField,
    spec: &DiffusionSpec,
    v: Option<&TorusField>,
    cfg: &McConfig,
    kind: GvKind,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    require_admissible(spec)?;
    let grid = f.grid();
    let dim = grid.dim();
    let axis_ok = |i: usize| -> Result<()> {
        if i >= dim {
            return Err(Error::domain(format!(
                "axis {i} out of range on a {dim}-dimensional torus"
            )));
        }
        Ok(())
    };
    match kind {
        GvKind::DyDbeta => {}
        GvKind::DxDbeta(i) => axis_ok(i)?,
        GvKind::DxDb(i, j) => {
            axis_ok(i)?;
            axis_ok(j)?;
        }
    }
    if grid.n() % cfg.n_bins != 0 {
        return Err(Error::validation(format!(
            "n_bins = {} must divide the grid size {} so bins align with \
             grid points",
            cfg.n_bins,
            grid.n()
        )));
    }
    let bin_grid = TorusGrid::new(dim, cfg.n_bins)?;
    if let Some(pot) = v {
        require_potential(grid, pot)?;
    }
    let tables = build_uf_tables(f, spec, v, cfg)?;
    let v_eval = v.map(FourierEval::from_field);

    let n_bins = cfg.n_bins;
    let (dt, y0, seed, max_steps) = (cfg.dt, cfg.y0, cfg.seed, cfg.max_steps);
    let sq = (2.0 * dt).sqrt();
    let outcomes: Vec<(u32, f64, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng_eta = eta_rng(seed, p);
            let mut rng_x = torus_rng(seed, p);
            let mut x = [0.0f64; 2];
            for slot in x.iter_mut().take(dim) {
                *slot = rng_x.gen::<f64>() * TAU;
            }
            let mut y = y0;
            let mut s = Complex64::new(0.0, 0.0);
            for _ in 0..max_steps {
                let zb: f64 = rng_eta.sample(StandardNormal);
                let dbeta = sq * zb;
                let mut dx = [0.0f64; 2];
                for slot in dx.iter_mut().take(dim) {
                    let z: f64 = rng_x.sample(StandardNormal);
                    *slot = sq * z;
                }
                let val = match tables.ytab.window(y) {
                    None => Complex64::new(0.0, 0.0),
                    Some((base, w)) => match kind {
                        GvKind::DyDbeta => tables.eval_dy(base, &w, &x) * spec.coeff_a(y),
                        GvKind::DxDbeta(i) | GvKind::DxDb(i, _) => {
                            tables.eval_dx(i, base, &w, &x)
                        }
                    },
                };
                let noise = match kind {
                    GvKind::DyDbeta | GvKind::DxDbeta(_) => dbeta,
                    GvKind::DxDb(_, j) => dx[j],
                };
                let next = y + spec.coeff_b(y) * dt + spec.coeff_a(y) * dbeta;
                if next <= 0.0 {
                    // Crossing step: the increment carries the interpolated
                    // fraction ρ of the step, and the path lands at X_τ.
                    let rho = y / (y - next);
                    s += val * (noise * rho);
                    if let Some(ve) = &v_eval {
                        s *= (ve.eval_potential(&x) * rho * dt).exp();
                    }
                    let mut xt = [0.0f64; 2];
                    for d in 0..dim {
                        xt[d] = (x[d] + rho * dx[d]).rem_euclid(TAU);
                    }
                    let half = 0.5 * s;
                    return (bin_of(&xt, dim, n_bins), half.re, half.im);
                }
                s += val * noise;
                if let Some(ve) = &v_eval {
                    s *= (ve.eval_potential(&x) * dt).exp();
                }
                for d in 0..dim {
                    x[d] = (x[d] + dx[d]).rem_euclid(TAU);
                }
                y = next;
            }
            (FLAGGED, 0.0, 0.0)
        })
        .collect();
    reduce_bins(&outcomes, bin_grid, 0.5)
}

/// Estimate of W f: per path, half the e^{∫V}-weighted Itô sum of
/// ∂_yU_f(X, η)·a(η)·Δβ, binned by X_τ and averaged.
pub fn gv_estimate_w(
    f: &TorusField,
    spec: &DiffusionSpec,
    v: Option<&TorusField>,
    cfg: &McConfig,
) -> Result<EnsembleResult> {
    gv_run(f, spec, v, cfg, GvKind::DyDbeta)
}

/// Estimate of T_i f: integrand ∂_{x_i}U_f·Δβ.
pub fn gv_estimate_ti(
    f: &TorusField,
    i: usize,
    spec: &DiffusionSpec,
    v: Option<&TorusField>,
    cfg: &McConfig,
) -> Result<EnsembleResult> {
    gv_run(f, spec, v, cfg, GvKind::DxDbeta(i))
}

/// Estimate of S_ij f: integrand ∂_{x_i}U_f·ΔB^j with B the torus noise.
pub fn gv_estimate_sij(
    f: &TorusField,
    i: usize,
    j: usize,
    spec: &DiffusionSpec,
    v: Option<&TorusField>,
    cfg: &McConfig,
) -> Result<EnsembleResult> {
    gv_run(f, spec, v, cfg, GvKind::DxDb(i, j))
}

/// Feynman–Kac estimate of e^{t(Δ+V)}f: paths start on the n_bins starting
/// points (round-robin), accumulate left-point weights e^{V(X_s)Δs}, and
/// average e^{∫V}·f(X_t) per starting point.  `bin_offset` is 0: the
/// representative coordinate of a row is the starting point itself.
pub fn fk_estimate(
    v: &TorusField,
    t: f64,
    f: &TorusField,
    cfg: &McConfig,
) -> Result<EnsembleResult> {
    cfg.validate()?;
    let grid = f.grid();
    let dim = grid.dim();
    require_potential(grid, v)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and >= 0, got {t}")));
    }
    if t > cfg.max_steps as f64 * cfg.dt * (1.0 + 1e-12) {
        return Err(Error::precondition(format!(
            "t = {t} needs more than max_steps = {} steps of dt = {}",
            cfg.max_steps, cfg.dt
        )));
    }
    if grid.n() % cfg.n_bins != 0 {
        return Err(Error::validation(format!(
            "n_bins = {} must divide the grid size {}",
            cfg.n_bins,
            grid.n()
        )));
    }
    let bin_grid = TorusGrid::new(dim, cfg.n_bins)?;
    let total_bins = bin_grid.total_points();
    let f_eval = FourierEval::from_field(f);
    let v_eval = FourierEval::from_field(v);

    let full_steps = (t / cfg.dt + 1e-12).floor() as usize;
    let remainder = (t - full_steps as f64 * cfg.dt).max(0.0);
    let width = TAU / cfg.n_bins as f64;
    let (dt, seed) = (cfg.dt, cfg.seed);
    let sq = (2.0 * dt).sqrt();
    let outcomes: Vec<(u32, f64, f64)> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let bin = p % total_bins;
            let mut x = [0.0f64; 2];
            if dim == 1 {
                x[0] = bin as f64 * width;
            } else {
                x[0] = (bin / cfg.n_bins) as f64 * width;
                x[1] = (bin % cfg.n_bins) as f64 * width;
            }
            let mut rng = torus_rng(seed, p);
            let mut log_weight = 0.0f64;
            for _ in 0..full_steps {
                log_weight += v_eval.eval_potential(&x) * dt;
                for slot in x.iter_mut().take(dim) {
                    let z: f64 = rng.sample(StandardNormal);
                    *slot = (*slot + sq * z).rem_euclid(TAU);
                }
            }
            if remainder > 1e-15 * t.max(1.0) {
                log_weight += v_eval.eval_potential(&x) * remainder;
                let sq_rem = (2.0 * remainder).sqrt();
                for slot in x.iter_mut().take(dim) {
                    let z: f64 = rng.sample(StandardNormal);
                    *slot = (*slot + sq_rem * z).rem_euclid(TAU);
                }
            }
            debug_assert!(log_weight <= 1e-9);
            let out = log_weight.exp() * f_eval.eval(&x);
            (bin as u32, out.re, out.im)
        })
        .collect();
    reduce_bins(&outcomes, bin_grid, 0.0)
}

/// Monte Carlo of E^{y0}[∫₀^τ g(η_s)ds] by left-point accumulation, with the
/// crossing step contributing the interpolated fraction of dt.  Returns the
/// sample mean and its standard error over completed paths; flagged paths are
/// excluded.
pub fn occupation_mc(
    spec: &DiffusionSpec,
    g: impl Fn(f64) -> f64 + Sync,
    y0: f64,
    cfg: &McConfig,
) -> Result<(f64, f64)> {
    let local = McConfig { y0, ..*cfg };
    local.validate()?;
    require_admissible(spec)?;
    let (dt, seed, max_steps) = (local.dt, local.seed, local.max_steps);
    let sq = (2.0 * dt).sqrt();
    let samples: Vec<Option<f64>> = (0..local.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = eta_rng(seed, p);
            let mut y = y0;
            let mut acc = Kahan::default();
            for _ in 0..max_steps {
                let z: f64 = rng.sample(StandardNormal);
                let next = y + spec.coeff_b(y) * dt + spec.coeff_a(y) * sq * z;
                if next <= 0.0 {
                    let rho = y / (y - next);
                    acc.add(g(y) * rho * dt);
                    return Some(acc.sum);
                }
                acc.add(g(y) * dt);
                y = next;
            }
            None
        })
        .collect();
    let mut sum = Kahan::default();
    let mut sumsq = Kahan::default();
    let mut n = 0u64;
    for s in samples.into_iter().flatten() {
        if !s.is_finite() {
            return Err(Error::numeric(
                "occupation integrand produced a non-finite value".to_string(),
            ));
        }
        sum.add(s);
        sumsq.add(s * s);
        n += 1;
    }
    if n == 0 {
        return Err(Error::numeric(
            "no path was absorbed within max_steps; raise max_steps or \
             check the drift"
                .to_string(),
        ));
    }
    let mean = sum.sum / n as f64;
    let se = if n < 2 {
        0.0
    } else {
        let var = ((sumsq.sum - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0);
        (var / n as f64).sqrt()
    };
    Ok((mean, se))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiplier::{
        phi_extension_from_height, s_symbol_from_height, t_symbol_from_height,
    };
    use crate::torus::heat_semigroup;

    fn cfg(dt: f64, n_paths: usize, y0: f64, n_bins: usize, max_steps: usize) -> McConfig {
        McConfig {
            dt,
            n_paths,
            y0,
            seed: 41,
            n_bins,
            max_steps,
        }
    }

    fn sin_field(n: usize) -> TorusField {
        let grid = TorusGrid::new(1, n).unwrap();
        TorusField::from_fn(grid, |x| Complex64::new(x[0].sin(), 0.0)).unwrap()
    }

    /// Relative 2-norm distance between an ensemble estimate and an oracle
    /// sampled at the bin representatives.
    fn rel_l2(result: &EnsembleResult, oracle: impl Fn(f64) -> Complex64) -> f64 {
        let grid = result.estimate.grid();
        let width = TAU / grid.n() as f64;
        let mut err = 0.0;
        let mut norm = 0.0;
        for (b, v) in result.estimate.values().iter().enumerate() {
            let target = oracle((b as f64 + result.bin_offset) * width);
            err += (v - target).norm_sqr();
            norm += target.norm_sqr();
        }
        (err / norm).sqrt()
    }

    /// Worst per-bin deviation measured in per-bin standard errors.
    fn worst_sigma(result: &EnsembleResult, oracle: impl Fn(f64) -> Complex64) -> f64 {
        let grid = result.estimate.grid();
        let width = TAU / grid.n() as f64;
        let mut worst = 0.0f64;
        for (b, v) in result.estimate.values().iter().enumerate() {
            let target = oracle((b as f64 + result.bin_offset) * width);
            let se = result.std_error[b].max(1e-300);
            worst = worst.max((v - target).norm() / se);
        }
        worst
    }

    #[test]
    fn config_and_input_validation() {
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let f = sin_field(32);

        let bad_dt = cfg(0.05, 10, 1.0, 8, 100);
        assert!(bad_dt.validate().is_err());
        assert!(cfg(1e-3, 0, 1.0, 8, 100).validate().is_err());
        assert!(cfg(1e-3, 10, 1.0, 8, 0).validate().is_err());
        assert!(cfg(-1.0, 10, 1.0, 8, 100).validate().is_err());

        // Bins must be a valid grid size and divide the field grid.
        let c = cfg(1e-3, 10, 1.0, 12, 100);
        assert!(gv_estimate_w(&f, &spec, None, &c).is_err());
        let c = cfg(1e-3, 10, 1.0, 64, 100);
        assert!(gv_estimate_w(&f, &spec, None, &c).is_err());

        // Axis bounds on T¹.
        let c = cfg(1e-3, 10, 1.0, 8, 100);
        assert!(gv_estimate_ti(&f, 1, &spec, None, &c).is_err());
        assert!(gv_estimate_sij(&f, 0, 1, &spec, None, &c).is_err());

        // Potentials must be real, nonpositive, and on the same grid.
        let pos = TorusField::from_fn(f.grid(), |_| Complex64::new(0.5, 0.0)).unwrap();
        assert!(gv_estimate_w(&f, &spec, Some(&pos), &c).is_err());
        let other = TorusField::zeros(TorusGrid::new(1, 16).unwrap());
        assert!(gv_estimate_w(&f, &spec, Some(&other), &c).is_err());

        assert!(occupation_mc(&spec, |_| 1.0, -1.0, &c).is_err());

        // Zero field stays exactly zero with zero standard errors.
        let zero = TorusField::zeros(f.grid());
        let c = cfg(1e-2, 200, 2.0, 8, 4000);
        let out = gv_estimate_w(&zero, &spec, None, &c).unwrap();
        assert!(out.estimate.values().iter().all(|v| v.norm() == 0.0));
        assert!(out.std_error.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn eta_paths_are_positive_interpolated_and_deterministic() {
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let c = cfg(5e-3, 1, 1.0, 8, 4000);
        let path = simulate_eta(&spec, &c, 7).unwrap();
        let tau = path.tau.expect("strong downward drift must absorb");
        let n = path.values.len();
        assert!(path.values[..n - 1].iter().all(|&v| v > 0.0));
        assert_eq!(path.values[n - 1], 0.0);
        assert_eq!(path.times[n - 1], tau);
        // τ lands strictly inside the last step.
        let t_prev = path.times[n - 2];
        assert!(tau > t_prev && tau <= t_prev + c.dt);
        for (k, t) in path.times[..n - 1].iter().enumerate() {
            assert!((t - k as f64 * c.dt).abs() < 1e-12);
        }
        let again = simulate_eta(&spec, &c, 7).unwrap();
        assert_eq!(path.values, again.values);
        let other = simulate_eta(&spec, &c, 8).unwrap();
        assert!(other.values != path.values);
    }

    #[test]
    fn eta_mean_absorption_time_matches_drift_formula() {
        // E τ = y0/(2m) = 0.5; the Euler absorption bias at this dt is well
        // inside the Monte Carlo noise.
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let c = cfg(2e-4, 5000, 1.0, 8, 60000);
        let mut taus = Vec::new();
        for p in 0..c.n_paths {
            let path = simulate_eta(&spec, &c, p).unwrap();
            taus.push(path.tau.expect("drifted paths must absorb"));
        }
        let n = taus.len() as f64;
        let mean = taus.iter().sum::<f64>() / n;
        let var = taus.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * se,
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn driftless_paths_scale_exactly() {
        // For b ≡ 0 the same driving noise under (y0, dt) → (2y0, 4dt)
        // doubles the path values, so absorption happens at the same step
        // and τ quadruples exactly: hitting times scale diffusively.
        let spec = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        let base = cfg(1e-3, 1, 1.0, 8, 20000);
        let scaled = cfg(4e-3, 1, 2.0, 8, 20000);
        let mut absorbed = 0;
        for p in 0..200 {
            let a = simulate_eta(&spec, &base, p).unwrap();
            let b = simulate_eta(&spec, &scaled, p).unwrap();
            assert_eq!(a.values.len(), b.values.len());
            match (a.tau, b.tau) {
                (Some(ta), Some(tb)) => {
                    assert_eq!(4.0 * ta, tb);
                    absorbed += 1;
                }
                (None, None) => {}
                _ => panic!("scaling must preserve the absorption step"),
            }
        }
        assert!(absorbed > 120, "only {absorbed} of 200 paths absorbed");
    }

    #[test]
    fn eta_laplace_transform_matches_kernel() {
        // E[e^{−τ}] from y0 = 1 for the driftless spec is K(1, 1) = e^{−1}.
        // Flagged paths carry e^{−τ} ≤ e^{−25}, far below one ulp of the
        // estimate, so counting them as 0 keeps the estimator unbiased.
        let spec = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        let c = cfg(1e-4, 4000, 1.0, 8, 250_000);
        let mut vals = Vec::new();
        for p in 0..c.n_paths {
            let path = simulate_eta(&spec, &c, p).unwrap();
            vals.push(path.tau.map_or(0.0, |t| (-t).exp()));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let target = (-1.0f64).exp();
        assert!(
            (mean - target).abs() < 3.0 * se,
            "mean {mean}, target {target}, se {se}"
        );
    }

    #[test]
    fn x_paths_have_flat_increments_and_uniform_law() {
        let grid = TorusGrid::new(1, 32).unwrap();
        let c = cfg(0.01, 20000, 1.0, 8, 100);
        // Unwrap by nearest image: per-step increments have sd √(2dt) ≈ 0.14,
        // far below π, so the wrapped difference is the true increment.
        let mut displacements = Vec::new();
        let mut finals = Vec::new();
        for p in 0..c.n_paths {
            let path = simulate_x(grid, &c, p).unwrap();
            let mut total = 0.0;
            for w in path.positions.windows(2) {
                let mut d = w[1][0] - w[0][0];
                if d > std::f64::consts::PI {
                    d -= TAU;
                } else if d < -std::f64::consts::PI {
                    d += TAU;
                }
                total += d;
            }
            displacements.push(total);
            finals.push(path.positions.last().unwrap()[0]);
        }
        let n = displacements.len() as f64;
        let mean = displacements.iter().sum::<f64>() / n;
        let var = displacements
            .iter()
            .map(|d| (d - mean) * (d - mean))
            .sum::<f64>()
            / (n - 1.0);
        // Var X_t = 2t = 2 at t = 1; the variance of a sample variance of
        // Gaussians is 2σ⁴/(n−1).
        let se_var = var * (2.0 / (n - 1.0)).sqrt();
        assert!(
            (var - 2.0).abs() < 3.0 * se_var,
            "variance {var}, se {se_var}"
        );
        // Chi-squared uniformity of the terminal positions over 16 cells
        // (15 degrees of freedom; 42 is far past the 99.9% quantile).
        let mut counts = [0usize; 16];
        for &x in &finals {
            counts[((x / (TAU / 16.0)) as usize).min(15)] += 1;
        }
        let expect = n / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect) * (c as f64 - expect) / expect)
            .sum();
        assert!(chi2 < 42.0, "chi2 {chi2}, counts {counts:?}");

        // T² increments: both axes carry variance 2t.
        let grid2 = TorusGrid::new(2, 8).unwrap();
        let c2 = cfg(0.01, 4000, 1.0, 8, 50);
        for axis in 0..2 {
            let mut disp = Vec::new();
            for p in 0..c2.n_paths {
                let path = simulate_x(grid2, &c2, p).unwrap();
                let mut total = 0.0;
                for w in path.positions.windows(2) {
                    let mut d = w[1][axis] - w[0][axis];
                    if d > std::f64::consts::PI {
                        d -= TAU;
                    } else if d < -std::f64::consts::PI {
                        d += TAU;
                    }
                    total += d;
                }
                disp.push(total);
            }
            let n = disp.len() as f64;
            let mean = disp.iter().sum::<f64>() / n;
            let var = disp.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
            let target = 2.0 * 0.5;
            let se_var = var * (2.0 / (n - 1.0)).sqrt();
            assert!(
                (var - target).abs() < 4.0 * se_var,
                "axis {axis}: variance {var}"
            );
        }
    }

    #[test]
    fn w_estimate_matches_finite_height_oracle() {
        // The boundary-tapered spec keeps the Euler absorption bias around a
        // percent of Φ at this dt, well under the per-bin noise here; the
        // 2-norm tolerance is set by the noise level at this path count.
        let spec = DiffusionSpec::boundary_tapered();
        let f = sin_field(32);
        let c = cfg(1e-3, 50000, 2.0, 16, 8000);
        let out = gv_estimate_w(&f, &spec, None, &c).unwrap();
        assert!(out.flagged <= 3, "flagged {}", out.flagged);
        assert_eq!(
            out.n_effective.iter().sum::<u64>() as usize + out.flagged,
            c.n_paths
        );
        let phi = phi_extension_from_height(&spec, 1.0, c.y0).unwrap();
        let oracle = |x: f64| Complex64::new(phi * x.sin(), 0.0);
        let sigmas = worst_sigma(&out, oracle);
        let err = rel_l2(&out, oracle);
        assert!(sigmas < 4.5, "worst bin at {sigmas} standard errors");
        assert!(err < 0.12, "relative 2-norm error {err}");
    }

    #[test]
    fn ti_and_sij_estimates_match_finite_height_oracles() {
        let spec = DiffusionSpec::boundary_tapered();
        let f = sin_field(32);
        let c = cfg(1e-3, 50000, 2.0, 16, 8000);

        // T₁ sin x = t(1)·cos x with t < 0.
        let t_h = t_symbol_from_height(&spec, 1.0, c.y0).unwrap();
        assert!(t_h < 0.0);
        let out_t = gv_estimate_ti(&f, 0, &spec, None, &c).unwrap();
        let oracle_t = |x: f64| Complex64::new(t_h * x.cos(), 0.0);
        assert!(worst_sigma(&out_t, oracle_t) < 4.5);
        assert!(rel_l2(&out_t, oracle_t) < 0.15);

        // S₁₁ sin x = s(1)·sin x with s > 0.
        let s_h = s_symbol_from_height(&spec, 1.0, c.y0).unwrap();
        assert!(s_h > 0.0);
        let out_s = gv_estimate_sij(&f, 0, 0, &spec, None, &c).unwrap();
        let oracle_s = |x: f64| Complex64::new(s_h * x.sin(), 0.0);
        assert!(worst_sigma(&out_s, oracle_s) < 4.5);
        assert!(rel_l2(&out_s, oracle_s) < 0.04);
    }

    #[test]
    fn w_estimate_handles_bessel_and_driftless_specs() {
        // Bessel s = 3/4: ∂_yK vanishes at the boundary, so the Euler
        // absorption bias is mild even at this dt; the null-recurrent tail
        // leaves a few percent of paths flagged, which the conditional
        // estimator tolerates (their contribution is uniform over bins).
        let spec = DiffusionSpec::bessel(0.75).unwrap();
        let f = sin_field(32);
        let c = cfg(0.01, 15000, 2.0, 16, 10000);
        let out = gv_estimate_w(&f, &spec, None, &c).unwrap();
        assert!(out.flagged < c.n_paths / 5, "flagged {}", out.flagged);
        let phi = phi_extension_from_height(&spec, 1.0, c.y0).unwrap();
        let err = rel_l2(&out, |x| Complex64::new(phi * x.sin(), 0.0));
        assert!(err < 0.12, "relative 2-norm error {err}");

        // Driftless spec: the limit multiplier is Φ ≡ 1/4 and the finite
        // start at y0 = 2 gives (1 − e^{−2y0√λ})/4.  The absorption layer
        // bias is O(√dt)·∫(∂_yK)² here (the derivative does not vanish at
        // 0), so the projected amplitude is checked with that allowance.
        let spec0 = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        let c0 = cfg(2e-3, 12000, 2.0, 16, 100_000);
        let out0 = gv_estimate_w(&f, &spec0, None, &c0).unwrap();
        let phi0 = phi_extension_from_height(&spec0, 1.0, c0.y0).unwrap();
        assert!((phi0 - 0.25 * (1.0 - (-4.0f64).exp())).abs() < 1e-10);
        let grid = out0.estimate.grid();
        let width = TAU / grid.n() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for (b, v) in out0.estimate.values().iter().enumerate() {
            let s = ((b as f64 + 0.5) * width).sin();
            num += v.re * s;
            den += s * s;
        }
        let amplitude = num / den;
        assert!(
            (amplitude - phi0).abs() < 0.04,
            "amplitude {amplitude} vs {phi0}"
        );
    }

    #[test]
    fn w_estimate_with_potential_matches_eigensolver_oracle() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = TorusField::from_fn(grid, |x| Complex64::new(x[0].sin(), 0.0)).unwrap();
        let v = TorusField::from_fn(grid, |x| Complex64::new(-(1.0 + x[0].cos()), 0.0)).unwrap();
        let spec = DiffusionSpec::boundary_tapered();
        let c = cfg(1e-3, 30000, 2.0, 8, 8000);
        let out = gv_estimate_w(&f, &spec, Some(&v), &c).unwrap();
        assert!(out.flagged <= 3, "flagged {}", out.flagged);

        // Exact oracle: expand f in the discrete Schrödinger eigenbasis and
        // scale coefficient j by the finite-height multiplier at λ_j.
        let op = schrodinger_build(grid, &v).unwrap();
        let (mut re, mut im) = op.coefficients(&f).unwrap();
        for (j, &x) in op.spectral_points().iter().enumerate() {
            let factor = phi_extension_from_height(&spec, x, c.y0).unwrap();
            re[j] *= factor;
            im[j] *= factor;
        }
        let oracle_field = op.resum(&re, &im);
        // Bin centers sit on the odd grid points of the 16-point grid.
        let oracle = |x: f64| {
            let idx = (x / grid.spacing()).round() as usize % grid.total_points();
            oracle_field.values()[idx]
        };
        assert!(worst_sigma(&out, oracle) < 4.5);
        assert!(rel_l2(&out, oracle) < 0.12);
    }

    #[test]
    fn complex_fields_estimate_componentwise() {
        // e^{ix} has no conjugate partner, exercising the single-entry path;
        // the estimate approximates Φ_h(1)·e^{ix}.
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = TorusField::from_fn(grid, |x| Complex64::new(x[0].cos(), x[0].sin())).unwrap();
        let spec = DiffusionSpec::boundary_tapered();
        let c = cfg(1e-3, 30000, 2.0, 8, 8000);
        let out = gv_estimate_w(&f, &spec, None, &c).unwrap();
        let phi = phi_extension_from_height(&spec, 1.0, c.y0).unwrap();
        let err = rel_l2(&out, |x| phi * Complex64::new(x.cos(), x.sin()));
        assert!(err < 0.12, "relative 2-norm error {err}");
    }

    #[test]
    fn estimates_are_bit_identical_across_thread_counts() {
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let f = sin_field(16);
        let c = cfg(0.01, 2000, 2.0, 8, 3000);
        let run = || {
            let w = gv_estimate_w(&f, &spec, None, &c).unwrap().to_csv();
            let t = gv_estimate_ti(&f, 0, &spec, None, &c).unwrap().to_csv();
            let grid = f.grid();
            let v = TorusField::from_fn(grid, |x| Complex64::new(-(1.0 + x[0].cos()), 0.0))
                .unwrap();
            let fk = fk_estimate(&v, 0.25, &f, &c).unwrap().to_csv();
            format!("{w}{t}{fk}")
        };
        let mut outputs = Vec::new();
        for threads in [1usize, 2, 4] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            outputs.push(pool.install(run));
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[0], outputs[2]);

        // Same seed reproduces; a different seed does not.
        let again = gv_estimate_w(&f, &spec, None, &c).unwrap().to_csv();
        assert_eq!(outputs[0][..again.len()], again);
        let mut c2 = c;
        c2.seed = 42;
        assert_ne!(gv_estimate_w(&f, &spec, None, &c2).unwrap().to_csv(), again);
    }

    #[test]
    fn fk_estimate_basics_and_heat_oracle() {
        let grid = TorusGrid::new(1, 16).unwrap();
        let f = TorusField::from_fn(grid, |x| Complex64::new(x[0].sin(), 0.0)).unwrap();
        let ones = TorusField::from_fn(grid, |_| Complex64::new(1.0, 0.0)).unwrap();
        let zero_v = TorusField::zeros(grid);
        let c = cfg(2e-3, 4000, 1.0, 8, 400);

        // V ≡ 0, f ≡ 1: every weight and every terminal value is exactly 1.
        let flat = fk_estimate(&zero_v, 0.5, &ones, &c).unwrap();
        for (b, v) in flat.estimate.values().iter().enumerate() {
            assert_eq!(v.re, 1.0);
            assert_eq!(v.im, 0.0);
            assert_eq!(flat.std_error[b], 0.0);
        }
        assert_eq!(flat.bin_offset, 0.0);

        // A constant potential factorizes pathwise: the weights are the
        // deterministic constant e^{−ct}, so the two runs agree to roundoff.
        let const_v = TorusField::from_fn(grid, |_| Complex64::new(-0.7, 0.0)).unwrap();
        let with_v = fk_estimate(&const_v, 0.5, &f, &c).unwrap();
        let without = fk_estimate(&zero_v, 0.5, &f, &c).unwrap();
        let scale = (-0.7f64 * 0.5).exp();
        for (a, b) in with_v
            .estimate
            .values()
            .iter()
            .zip(without.estimate.values())
        {
            assert!((a - scale * b).norm() <= 1e-12 * (1.0 + b.norm()));
        }

        // Against the eigensolver semigroup at a starting-point grid.
        let v = TorusField::from_fn(grid, |x| Complex64::new(-(1.0 + x[0].cos()), 0.0)).unwrap();
        let c_big = cfg(2e-3, 16000, 1.0, 8, 400);
        let out = fk_estimate(&v, 0.5, &f, &c_big).unwrap();
        let op = schrodinger_build(grid, &v).unwrap();
        let exact = heat_semigroup(&op, 0.5, &f).unwrap();
        let oracle = |x: f64| {
            let idx = (x / grid.spacing()).round() as usize % grid.total_points();
            exact.values()[idx]
        };
        let err = rel_l2(&out, oracle);
        assert!(err < 0.08, "relative 2-norm error {err}");

        // Horizon limited by the step budget.
        assert!(fk_estimate(&zero_v, 2.0, &f, &cfg(2e-3, 10, 1.0, 8, 100)).is_err());
    }

    #[test]
    fn occupation_estimates_match_quadrature_oracles() {
        // Exponential weight under drift (the occupation quadrature is the
        // oracle; dt is small enough that the absorption-layer bias sits
        // inside the noise).
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let c = cfg(2e-4, 15000, 2.0, 8, 60000);
        let (mean, se) = occupation_mc(&spec, |y| (-y).exp(), 2.0, &c).unwrap();
        let oracle = spec.occupation_expectation(|y| (-y).exp(), 2.0).unwrap();
        assert!(
            (mean - oracle).abs() < 3.0 * se,
            "mean {mean}, oracle {oracle}, se {se}"
        );

        // Indicator window away from the boundary.
        let (mean, se) = occupation_mc(
            &spec,
            |y| if (1.0..2.0).contains(&y) { 1.0 } else { 0.0 },
            1.0,
            &cfg(2e-4, 15000, 1.0, 8, 60000),
        )
        .unwrap();
        let oracle = spec
            .occupation_expectation(|y| if (1.0..2.0).contains(&y) { 1.0 } else { 0.0 }, 1.0)
            .unwrap();
        assert!(
            (mean - oracle).abs() < 3.0 * se,
            "mean {mean}, oracle {oracle}, se {se}"
        );

        // g ≡ 0 is exactly zero.
        let (mean, se) = occupation_mc(&spec, |_| 0.0, 1.0, &cfg(2e-3, 50, 1.0, 8, 5000)).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(se, 0.0);

        // Driftless indicator: E ∫₀^τ 1_{[0,1]}(η) ds from y0 = 1 is
        // ∫ min(1, z)·1_{[0,1]} dz = 1/2.  Null recurrence leaves a few
        // percent of paths flagged; their exclusion and the absorption layer
        // shift the mean by less than the noise at this scale.
        let spec0 = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        let c0 = cfg(1e-4, 1500, 1.0, 8, 1_000_000);
        let (mean, se) = occupation_mc(
            &spec0,
            |y| if y <= 1.0 { 1.0 } else { 0.0 },
            1.0,
            &c0,
        )
        .unwrap();
        assert!(
            (mean - 0.5).abs() < 3.0 * se,
            "mean {mean}, se {se}"
        );
    }

    #[test]
    fn estimate_insensitive_to_doubling_the_start_height() {
        // The kernel decay makes the finite-start multipliers at y0 = 4 and
        // y0 = 8 differ by |e^{−8} − e^{−16}|/4 ≈ 8·10⁻⁵, far below one
        // standard error of the projected amplitude at this path count.
        let spec = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        let f = sin_field(32);
        let amp = |y0: f64, dt: f64| {
            let c = cfg(dt, 6000, y0, 16, 60000);
            let out = gv_estimate_w(&f, &spec, None, &c).unwrap();
            let grid = out.estimate.grid();
            let width = TAU / grid.n() as f64;
            let mut num = 0.0;
            let mut den = 0.0;
            let mut se2 = 0.0;
            for (b, v) in out.estimate.values().iter().enumerate() {
                let s = ((b as f64 + 0.5) * width).sin();
                num += v.re * s;
                den += s * s;
                se2 += (s * out.std_error[b]).powi(2);
            }
            (num / den, se2.sqrt() / den)
        };
        // Same dt for both so the absorption-layer bias cancels in the
        // comparison (the layer occupancy 2·min(y0, z) is y0-independent
        // near z = 0).  The 3-sigma margin keeps the flake rate near 0.3%.
        let (a4, se4) = amp(4.0, 0.04);
        let (a8, se8) = amp(8.0, 0.04);
        let se = (se4 * se4 + se8 * se8).sqrt();
        assert!(
            (a4 - a8).abs() < 3.0 * se,
            "amplitudes {a4} vs {a8}, combined se {se}"
        );
    }

    #[test]
    fn standard_errors_shrink_like_inverse_root_paths() {
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let f = sin_field(16);
        let mean_se = |n_paths: usize| {
            let c = cfg(0.01, n_paths, 2.0, 8, 4000);
            let out = gv_estimate_w(&f, &spec, None, &c).unwrap();
            out.std_error.iter().sum::<f64>() / out.std_error.len() as f64
        };
        let coarse = mean_se(2000);
        let fine = mean_se(20000);
        let ratio = coarse / fine;
        let target = 10.0f64.sqrt();
        assert!(
            ratio > 0.8 * target && ratio < 1.25 * target,
            "se ratio {ratio}, expected near {target}"
        );
    }

    #[test]
    fn csv_export_is_lossless_and_complete() {
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let f = sin_field(16);
        let c = cfg(0.01, 500, 2.0, 8, 4000);
        let out = gv_estimate_w(&f, &spec, None, &c).unwrap();
        let csv = out.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(
            lines[0],
            "bin_center,estimate_re,estimate_im,std_error,n_effective"
        );
        let mut n_total = 0u64;
        for (b, line) in lines[1..].iter().enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 5);
            let center: f64 = cols[0].parse().unwrap();
            assert!((center - (b as f64 + 0.5) * TAU / 8.0).abs() < 1e-14);
            let re: f64 = cols[1].parse().unwrap();
            assert_eq!(re, out.estimate.values()[b].re, "17 digits round-trip");
            let se: f64 = cols[3].parse().unwrap();
            assert_eq!(se, out.std_error[b]);
            n_total += cols[4].parse::<u64>().unwrap();
        }
        assert_eq!(n_total as usize + out.flagged, c.n_paths);
    }
}
