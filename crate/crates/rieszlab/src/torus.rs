//! Flat-torus realizations of the spectral operators.
//!
//! Fields live on uniform grids over T¹ or T² with x_j = 2πj/n.  Fourier
//! multipliers act coefficient-wise through the discrete transform; the
//! Schrödinger path Φ(−L), L = Δ + V, goes through a dense symmetric
//! eigendecomposition of the periodic second-difference matrix so that
//! V ≠ 0 stays an honest matrix problem.  The vertical extension
//! U_f(·, y) = K(y, −L)f and its pointwise PDE residual live here too.
//!
//! Norms are measure-normalized: ‖f‖_p = (mean |f|^p)^{1/p}·(2π)^{dim/p}.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::multiplier::{self, MultiplierSymbol};

const SCHRODINGER_SIZE_CAP: usize = 4096;

/// Uniform grid on T¹ or T², n points per axis, spacing 2π/n.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    dim: usize,
    n: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::domain(format!("dim must be 1 or 2, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::domain(format!(
                "points per axis must be a power of two >= 8, got {n}"
            )));
        }
        Ok(TorusGrid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn total_points(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n as f64
    }

    /// Integer frequency for array index i: i for i ≤ n/2, i − n above.
    pub fn frequency(&self, index: usize) -> i64 {
        if index <= self.n / 2 {
            index as i64
        } else {
            index as i64 - self.n as i64
        }
    }

    /// Frequency vector of a flat index; the second entry is 0 on T¹.
    pub fn frequency_vector(&self, flat: usize) -> [i64; 2] {
        match self.dim {
            1 => [self.frequency(flat), 0],
            _ => [self.frequency(flat / self.n), self.frequency(flat % self.n)],
        }
    }

    /// Grid point of a flat index; the second entry is 0 on T¹.
    pub fn point(&self, flat: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [flat as f64 * h, 0.0],
            _ => [(flat / self.n) as f64 * h, (flat % self.n) as f64 * h],
        }
    }
}

/// Complex-valued function sampled on a torus grid (row-major on T²).
#[derive(Debug, Clone, PartialEq)]
pub struct TorusField {
    grid: TorusGrid,
    values: Vec<Complex64>,
}

impl TorusField {
    pub fn new(grid: TorusGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.total_points() {
            return Err(Error::validation(format!(
                "field length {} does not match grid ({} points)",
                values.len(),
                grid.total_points()
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::validation("field values must be finite".to_string()));
        }
        Ok(TorusField { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64; 2]) -> Complex64) -> Result<Self> {
        let values = (0..grid.total_points())
            .map(|i| f(&grid.point(i)))
            .collect();
        TorusField::new(grid, values)
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        TorusField {
            grid,
            values: vec![Complex64::new(0.0, 0.0); grid.total_points()],
        }
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn mean(&self) -> Complex64 {
        self.values.iter().sum::<Complex64>() / self.values.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Measure-normalized p-norm (mean |f|^p)^{1/p}·(2π)^{dim/p}, p ≥ 1.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::domain(format!("lp_norm needs p >= 1, got {p}")));
        }
        let mean = self
            .values
            .iter()
            .map(|v| v.norm().powf(p))
            .sum::<f64>()
            / self.values.len() as f64;
        Ok(mean.powf(1.0 / p) * (2.0 * std::f64::consts::PI).powf(self.grid.dim as f64 / p))
    }

    /// Parse the text form: header `field <dim> <n>` then n^dim `re im` lines.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("empty field file".to_string()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 3 || toks[0] != "field" {
            return Err(Error::parse(format!(
                "field header must read 'field <dim> <n>', got {header:?}"
            )));
        }
        let dim: usize = toks[1]
            .parse()
            .map_err(|e| Error::parse(format!("bad dim {:?}: {e}", toks[1])))?;
        let n: usize = toks[2]
            .parse()
            .map_err(|e| Error::parse(format!("bad n {:?}: {e}", toks[2])))?;
        let grid = TorusGrid::new(dim, n)?;
        let mut values = Vec::with_capacity(grid.total_points());
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(Error::parse(format!(
                    "field lines carry 're im', got {line:?}"
                )));
            }
            let re: f64 = toks[0]
                .parse()
                .map_err(|e| Error::parse(format!("bad value in {line:?}: {e}")))?;
            let im: f64 = toks[1]
                .parse()
                .map_err(|e| Error::parse(format!("bad value in {line:?}: {e}")))?;
            values.push(Complex64::new(re, im));
        }
        TorusField::new(grid, values)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("field {} {}\n", self.grid.dim, self.grid.n);
        for v in &self.values {
            out.push_str(&format!("{:.17e} {:.17e}\n", v.re, v.im));
        }
        out
    }
}

fn dft_pass(values: &mut [Complex64], grid: TorusGrid, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(grid.n)
    } else {
        planner.plan_fft_forward(grid.n)
    };
    match grid.dim {
        1 => fft.process(values),
        _ => {
            let n = grid.n;
            for row in values.chunks_mut(n) {
                fft.process(row);
            }
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            for j in 0..n {
                for i in 0..n {
                    col[i] = values[i * n + j];
                }
                fft.process(&mut col);
                for i in 0..n {
                    values[i * n + j] = col[i];
                }
            }
        }
    }
}

/// Fourier coefficients f̂(k) = (1/N)Σ_x f(x)e^{−ik·x}, indexed like the grid.
pub fn forward_transform(f: &TorusField) -> Vec<Complex64> {
    let mut values = f.values.clone();
    dft_pass(&mut values, f.grid, false);
    let scale = 1.0 / f.grid.total_points() as f64;
    for v in &mut values {
        *v *= scale;
    }
    values
}

/// Inverse of `forward_transform`: f(x) = Σ_k f̂(k)e^{ik·x}.
pub fn inverse_transform(grid: TorusGrid, coeffs: &[Complex64]) -> Result<TorusField> {
    if coeffs.len() != grid.total_points() {
        return Err(Error::validation(format!(
            "coefficient length {} does not match grid ({} points)",
            coeffs.len(),
            grid.total_points()
        )));
    }
    let mut values = coeffs.to_vec();
    dft_pass(&mut values, grid, true);
    TorusField::new(grid, values)
}

/// What a Fourier-multiplier operator does to the k = 0 coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroModePolicy {
    ZeroOut,
    Identity,
    Reject,
}

/// Fourier multiplier: coefficient-wise multiplication by symbol(k),
/// with the zero mode handled by policy.
#[derive(Debug, Clone)]
pub struct SymbolOperator {
    grid: TorusGrid,
    symbol: Vec<Complex64>,
    policy: ZeroModePolicy,
}

impl SymbolOperator {
    /// Build from k ↦ symbol; the closure is never called at k = 0.
    pub fn from_fn(
        grid: TorusGrid,
        policy: ZeroModePolicy,
        mut f: impl FnMut(&[i64; 2]) -> Complex64,
    ) -> Result<Self> {
        let mut symbol = vec![Complex64::new(0.0, 0.0); grid.total_points()];
        for (flat, slot) in symbol.iter_mut().enumerate() {
            let k = grid.frequency_vector(flat);
            if k == [0, 0] {
                continue;
            }
            let v = f(&k);
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::validation(format!(
                    "symbol must be finite at every nonzero frequency, got {v} at k={k:?}"
                )));
            }
            *slot = v;
        }
        Ok(SymbolOperator {
            grid,
            symbol,
            policy,
        })
    }

    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn policy(&self) -> ZeroModePolicy {
        self.policy
    }

    pub fn symbol_values(&self) -> &[Complex64] {
        &self.symbol
    }

    pub fn symbol_at(&self, k: &[i64; 2]) -> Option<Complex64> {
        let n = self.grid.n as i64;
        let wrap = |c: i64| -> Option<usize> {
            if c < -(n / 2) + 1 && c != -(n / 2) || c > n / 2 {
                return None;
            }
            Some(c.rem_euclid(n) as usize)
        };
        let i0 = wrap(k[0])?;
        match self.grid.dim {
            1 => {
                if k[1] != 0 {
                    return None;
                }
                Some(self.symbol[i0])
            }
            _ => {
                let i1 = wrap(k[1])?;
                Some(self.symbol[i0 * self.grid.n + i1])
            }
        }
    }

    /// max |symbol(k)| over the grid's nonzero frequencies.
    pub fn sup_abs(&self) -> f64 {
        self.symbol
            .iter()
            .enumerate()
            .filter(|(flat, _)| self.grid.frequency_vector(*flat) != [0, 0])
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn apply(&self, f: &TorusField) -> Result<TorusField> {
        if f.grid != self.grid {
            return Err(Error::validation(
                "field grid does not match operator grid".to_string(),
            ));
        }
        let mut coeffs = forward_transform(f);
        let max_coeff = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        for (flat, c) in coeffs.iter_mut().enumerate() {
            if self.grid.frequency_vector(flat) == [0, 0] {
                match self.policy {
                    ZeroModePolicy::ZeroOut => *c = Complex64::new(0.0, 0.0),
                    ZeroModePolicy::Identity => {}
                    ZeroModePolicy::Reject => {
                        if c.norm() > 1e-12 * (1.0 + max_coeff) {
                            return Err(Error::domain(
                                "operator rejects fields with nonzero mean".to_string(),
                            ));
                        }
                        *c = Complex64::new(0.0, 0.0);
                    }
                }
            } else {
                *c *= self.symbol[flat];
            }
        }
        inverse_transform(self.grid, &coeffs)
    }
}

fn check_axis(grid: TorusGrid, axis: usize) -> Result<()> {
    if axis >= grid.dim {
        return Err(Error::domain(format!(
            "axis {axis} out of range for dim {}",
            grid.dim
        )));
    }
    Ok(())
}

/// First-order Riesz transform R_i^{(θ)}: symbol i·k_i/√(|k|² + θ²).
pub fn riesz_symbol(grid: TorusGrid, axis: usize, theta: f64) -> Result<SymbolOperator> {
    check_axis(grid, axis)?;
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::domain(format!("theta must be finite and >= 0, got {theta}")));
    }
    SymbolOperator::from_fn(grid, ZeroModePolicy::ZeroOut, |k| {
        let kk = (k[0] * k[0] + k[1] * k[1]) as f64;
        Complex64::new(0.0, k[axis] as f64 / (kk + theta * theta).sqrt())
    })
}

/// Drift parameter of the second-order family: finite θ ≥ 0 or the θ → ∞
/// limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Finite(f64),
    AtInfinity,
}

/// Second-order Riesz transform S-family symbol:
/// −k_ik_j/(β(β − θ)) with β = √(|k|² + θ²) for finite θ, and the θ → ∞
/// limit −2k_ik_j/|k|².
pub fn second_riesz_symbol(
    grid: TorusGrid,
    i: usize,
    j: usize,
    theta: Theta,
) -> Result<SymbolOperator> {
    check_axis(grid, i)?;
    check_axis(grid, j)?;
    if let Theta::Finite(t) = theta {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::domain(format!(
                "theta must be finite and >= 0 (or the at-infinity limit), got {t}"
            )));
        }
    }
    SymbolOperator::from_fn(grid, ZeroModePolicy::ZeroOut, |k| {
        let kk = (k[0] * k[0] + k[1] * k[1]) as f64;
        let kij = (k[i] * k[j]) as f64;
        let value = match theta {
            // β(β−θ) = β|k|²/(β+θ), cancellation-free for large θ.
            Theta::Finite(t) => {
                let beta = (kk + t * t).sqrt();
                -kij * (beta + t) / (beta * kk)
            }
            Theta::AtInfinity => -2.0 * kij / kk,
        };
        Complex64::new(value, 0.0)
    })
}

/// The plane multiplier of the complex second-order combination on T²:
/// equal to R₁∘R₁ − R₂∘R₂ + 2i·R₁∘R₂ with θ = 0, so the symbol is
/// (ik₁/|k| + i·ik₂/|k|)² = −(k₁ + ik₂)²/|k|².
pub fn beurling_ahlfors(grid: TorusGrid) -> Result<SymbolOperator> {
    if grid.dim != 2 {
        return Err(Error::domain(format!(
            "the complex second-order combination needs dim 2, got {}",
            grid.dim
        )));
    }
    SymbolOperator::from_fn(grid, ZeroModePolicy::ZeroOut, |k| {
        let kk = (k[0] * k[0] + k[1] * k[1]) as f64;
        let z = Complex64::new(k[0] as f64, k[1] as f64);
        -z * z / kk
    })
}

/// Fourier realization of a scalar multiplier: symbol(k) = Φ(|k|²).
pub fn multiplier_operator(
    grid: TorusGrid,
    phi: &MultiplierSymbol,
    policy: ZeroModePolicy,
) -> Result<SymbolOperator> {
    let mut cache: BTreeMap<i64, Complex64> = BTreeMap::new();
    let mut failure: Option<Error> = None;
    let op = SymbolOperator::from_fn(grid, policy, |k| {
        let kk = k[0] * k[0] + k[1] * k[1];
        if let Some(v) = cache.get(&kk) {
            return *v;
        }
        match phi.eval(kk as f64) {
            Ok(v) => {
                cache.insert(kk, v);
                v
            }
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e);
                }
                Complex64::new(f64::NAN, 0.0)
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => op,
    }
}

/// First-order operator of the extension calculus: symbol t(|k|²)·i·k_i.
/// Uses the closed form of t when the family has one.
pub fn first_order_operator(
    grid: TorusGrid,
    spec: &DiffusionSpec,
    axis: usize,
) -> Result<SymbolOperator> {
    check_axis(grid, axis)?;
    let t = scalar_symbol_table(grid, spec, multiplier::t_symbol_closed_form, multiplier::t_symbol)?;
    SymbolOperator::from_fn(grid, ZeroModePolicy::ZeroOut, |k| {
        let kk = k[0] * k[0] + k[1] * k[1];
        Complex64::new(0.0, t[&kk] * k[axis] as f64)
    })
}

/// Second-order operator of the extension calculus: symbol s(|k|²)·k_i·k_j.
pub fn second_order_operator(
    grid: TorusGrid,
    spec: &DiffusionSpec,
    i: usize,
    j: usize,
) -> Result<SymbolOperator> {
    check_axis(grid, i)?;
    check_axis(grid, j)?;
    let s = scalar_symbol_table(grid, spec, multiplier::s_symbol_closed_form, multiplier::s_symbol)?;
    SymbolOperator::from_fn(grid, ZeroModePolicy::ZeroOut, |k| {
        let kk = k[0] * k[0] + k[1] * k[1];
        Complex64::new(s[&kk] * (k[i] * k[j]) as f64, 0.0)
    })
}

fn scalar_symbol_table(
    grid: TorusGrid,
    spec: &DiffusionSpec,
    closed: fn(&DiffusionSpec, f64) -> Result<Option<f64>>,
    quadrature: fn(&DiffusionSpec, f64) -> Result<f64>,
) -> Result<BTreeMap<i64, f64>> {
    let mut table = BTreeMap::new();
    for flat in 0..grid.total_points() {
        let k = grid.frequency_vector(flat);
        let kk = k[0] * k[0] + k[1] * k[1];
        if kk == 0 || table.contains_key(&kk) {
            continue;
        }
        let lambda = kk as f64;
        let value = match closed(spec, lambda)? {
            Some(v) => v,
            None => quadrature(spec, lambda)?,
        };
        table.insert(kk, value);
    }
    Ok(table)
}

/// Dense spectral form of L = Δ_h + V on the grid: periodic second
/// differences plus a nonpositive potential, with the full symmetric
/// eigendecomposition cached (eigenvalues ≤ 0, nonincreasing).
#[derive(Debug, Clone)]
pub struct SchrodingerOperator {
    grid: TorusGrid,
    v: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
}

pub fn schrodinger_build(grid: TorusGrid, v: &TorusField) -> Result<SchrodingerOperator> {
    if v.grid() != grid {
        return Err(Error::validation(
            "potential grid does not match operator grid".to_string(),
        ));
    }
    let nn = grid.total_points();
    if nn > SCHRODINGER_SIZE_CAP {
        return Err(Error::resource(format!(
            "dense eigendecomposition capped at {SCHRODINGER_SIZE_CAP} points, grid has {nn}"
        )));
    }
    let mut pot = Vec::with_capacity(nn);
    for val in v.values() {
        if val.im.abs() > 1e-14 * (1.0 + val.re.abs()) {
            return Err(Error::domain("potential must be real".to_string()));
        }
        if val.re > 0.0 {
            return Err(Error::domain(format!(
                "potential must be nonpositive, got {}",
                val.re
            )));
        }
        pot.push(val.re);
    }

    let n = grid.n;
    let inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
    let mut m = DMatrix::<f64>::zeros(nn, nn);
    for flat in 0..nn {
        m[(flat, flat)] = -2.0 * grid.dim as f64 * inv_h2 + pot[flat];
        match grid.dim {
            1 => {
                m[(flat, (flat + 1) % n)] += inv_h2;
                m[(flat, (flat + n - 1) % n)] += inv_h2;
            }
            _ => {
                let (i, j) = (flat / n, flat % n);
                m[(flat, ((i + 1) % n) * n + j)] += inv_h2;
                m[(flat, ((i + n - 1) % n) * n + j)] += inv_h2;
                m[(flat, i * n + (j + 1) % n)] += inv_h2;
                m[(flat, i * n + (j + n - 1) % n)] += inv_h2;
            }
        }
    }

    let eig = nalgebra::SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..nn).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::<f64>::zeros(nn, nn);
    for (col, &src) in order.iter().enumerate() {
        eigenvectors.set_column(col, &eig.eigenvectors.column(src));
    }

    let scale = eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let max_v = pot.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if eigenvalues[0] > max_v + 1e-9 * (1.0 + scale) {
        return Err(Error::numeric(format!(
            "largest eigenvalue {} exceeds max potential {max_v}",
            eigenvalues[0]
        )));
    }
    let ortho = orthonormality_residual(&eigenvectors);
    if ortho > 1e-10 {
        return Err(Error::numeric(format!(
            "eigenvector orthonormality residual {ortho:.3e} exceeds 1e-10"
        )));
    }

    Ok(SchrodingerOperator {
        grid,
        v: pot,
        eigenvalues,
        eigenvectors,
    })
}

fn orthonormality_residual(q: &DMatrix<f64>) -> f64 {
    let n = q.ncols();
    let mut worst = 0.0f64;
    // Full check up to moderate sizes; random column pairs beyond that.
    if n <= 1024 {
        let g = q.transpose() * q;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
    } else {
        for i in 0..n {
            worst = worst.max((q.column(i).dot(&q.column(i)) - 1.0).abs());
            let j = (i * 2654435761) % n;
            if j != i {
                worst = worst.max(q.column(i).dot(&q.column(j)).abs());
            }
        }
    }
    worst
}

impl SchrodingerOperator {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn potential(&self) -> &[f64] {
        &self.v
    }

    /// Eigenvalues of Δ_h + V, nonincreasing (all ≤ 0).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub(crate) fn coefficients(&self, f: &TorusField) -> Result<(DVector<f64>, DVector<f64>)> {
        if f.grid() != self.grid {
            return Err(Error::validation(
                "field grid does not match operator grid".to_string(),
            ));
        }
        let re = DVector::from_iterator(f.values().len(), f.values().iter().map(|v| v.re));
        let im = DVector::from_iterator(f.values().len(), f.values().iter().map(|v| v.im));
        Ok((
            self.eigenvectors.transpose() * re,
            self.eigenvectors.transpose() * im,
        ))
    }

    pub(crate) fn resum(&self, re: &DVector<f64>, im: &DVector<f64>) -> TorusField {
        let out_re = &self.eigenvectors * re;
        let out_im = &self.eigenvectors * im;
        TorusField {
            grid: self.grid,
            values: out_re
                .iter()
                .zip(out_im.iter())
                .map(|(&r, &i)| Complex64::new(r, i))
                .collect(),
        }
    }

    /// The spectral arguments Φ is evaluated at: −eigenvalue, with values
    /// at roundoff distance from 0 snapped to exactly 0 so that genuinely
    /// singular multipliers see the zero mode as such.
    pub(crate) fn spectral_points(&self) -> Vec<f64> {
        let scale = self.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        self.eigenvalues
            .iter()
            .map(|&l| {
                let x = -l;
                if x.abs() <= 1e-9 * (1.0 + scale) {
                    0.0
                } else {
                    x
                }
            })
            .collect()
    }
}

/// Φ(−L)f by eigendecomposition: expand f, multiply coefficient j by
/// Φ(−λ_j), resum.  A Φ that is singular at an occurring eigenvalue is an
/// error unless the corresponding coefficient of f vanishes.
pub fn apply_phi_schrodinger(
    phi: &MultiplierSymbol,
    op: &SchrodingerOperator,
    f: &TorusField,
) -> Result<TorusField> {
    let (mut re, mut im) = op.coefficients(f)?;
    let coeff_scale = (0..re.len())
        .map(|j| re[j].hypot(im[j]))
        .fold(0.0f64, f64::max);
    for (j, &x) in op.spectral_points().iter().enumerate() {
        let c = Complex64::new(re[j], im[j]);
        let value = match phi.eval(x) {
            Ok(v) => v,
            Err(e) => {
                if c.norm() <= 1e-12 * (1.0 + coeff_scale) {
                    // The singular point carries no mass; drop it.
                    re[j] = 0.0;
                    im[j] = 0.0;
                    continue;
                }
                return Err(e);
            }
        };
        let out = c * value;
        re[j] = out.re;
        im[j] = out.im;
    }
    Ok(op.resum(&re, &im))
}

/// e^{tL}f by eigendecomposition; a 2-norm contraction since spec(L) ≤ 0.
pub fn heat_semigroup(op: &SchrodingerOperator, t: f64, f: &TorusField) -> Result<TorusField> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("time must be finite and >= 0, got {t}")));
    }
    let (mut re, mut im) = op.coefficients(f)?;
    for (j, &l) in op.eigenvalues.iter().enumerate() {
        let factor = (t * l.min(0.0)).exp();
        re[j] *= factor;
        im[j] *= factor;
    }
    Ok(op.resum(&re, &im))
}

/// Spectral base of the extension: the pure Fourier Laplacian or a
/// Schrödinger operator.
#[derive(Debug, Clone, Copy)]
pub enum SpectralBase<'a> {
    Laplacian,
    Schrodinger(&'a SchrodingerOperator),
}

struct SpectralExpansion {
    /// λ_i ≥ 0, the arguments the kernel is evaluated at.
    lambdas: Vec<f64>,
    /// Complex coefficients of f in the base's eigenbasis.
    coeffs: Vec<Complex64>,
}

fn expand(base: &SpectralBase<'_>, f: &TorusField) -> Result<SpectralExpansion> {
    match base {
        SpectralBase::Laplacian => {
            let coeffs = forward_transform(f);
            let lambdas = (0..coeffs.len())
                .map(|flat| {
                    let k = f.grid().frequency_vector(flat);
                    (k[0] * k[0] + k[1] * k[1]) as f64
                })
                .collect();
            Ok(SpectralExpansion { lambdas, coeffs })
        }
        SpectralBase::Schrodinger(op) => {
            let (re, im) = op.coefficients(f)?;
            Ok(SpectralExpansion {
                lambdas: op.spectral_points(),
                coeffs: (0..re.len())
                    .map(|j| Complex64::new(re[j], im[j]))
                    .collect(),
            })
        }
    }
}

fn resum(base: &SpectralBase<'_>, grid: TorusGrid, coeffs: &[Complex64]) -> Result<TorusField> {
    match base {
        SpectralBase::Laplacian => inverse_transform(grid, coeffs),
        SpectralBase::Schrodinger(op) => {
            let re = DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| c.re));
            let im = DVector::from_iterator(coeffs.len(), coeffs.iter().map(|c| c.im));
            Ok(op.resum(&re, &im))
        }
    }
}

/// Kernel value K(y, λ) with the zero mode carried unchanged: for the
/// closed-form families K(y, 0) = 1 (absorption at 0 is certain), so a
/// λ = 0 component rides along as a constant in y.  Tabulated kernels only
/// exist for λ > 0, so there a λ = 0 component must carry no mass.
fn kernel_at(spec: &DiffusionSpec, y: f64, lambda: f64, coeff: Complex64, scale: f64) -> Result<f64> {
    if lambda == 0.0 {
        if spec.kernel_support_end().is_some() && coeff.norm() > 1e-12 * (1.0 + scale) {
            return Err(Error::precondition(
                "tabulated kernels need zero-mean data (no closed form at the zero mode)"
                    .to_string(),
            ));
        }
        return Ok(1.0);
    }
    if y == 0.0 {
        return Ok(1.0);
    }
    spec.kernel_k(y, lambda)
}

/// Extension slices U_f(·, y) = K(y, −L)f for each requested height.
pub fn extension_u(
    spec: &DiffusionSpec,
    base: SpectralBase<'_>,
    f: &TorusField,
    y_grid: &[f64],
) -> Result<Vec<TorusField>> {
    if !spec.is_admissible()? {
        return Err(Error::precondition(
            "diffusion spec is not admissible (scale-function conditions fail)".to_string(),
        ));
    }
    if y_grid.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) {
        return Err(Error::domain("heights must be finite and >= 0".to_string()));
    }
    let expansion = expand(&base, f)?;
    let scale = expansion.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut slices = Vec::with_capacity(y_grid.len());
    for &y in y_grid {
        let mut coeffs = Vec::with_capacity(expansion.coeffs.len());
        for (i, &c) in expansion.coeffs.iter().enumerate() {
            let k = kernel_at(spec, y, expansion.lambdas[i], c, scale)?;
            coeffs.push(c * k);
        }
        slices.push(resum(&base, f.grid(), &coeffs)?);
    }
    Ok(slices)
}

/// Pointwise PDE residual of the extension: max over interior nodes of the
/// uniform y-grid of ‖L U_f + B U_f‖_∞, with L exact in the spectral base
/// and B = a²∂²_y + b∂_y by centered second-order differences, normalized
/// by ‖f‖₂.  Decays at O(h_y²) for smooth kernels.
pub fn extension_residual(
    spec: &DiffusionSpec,
    base: SpectralBase<'_>,
    f: &TorusField,
    y_grid: &[f64],
) -> Result<f64> {
    if y_grid.len() < 34 {
        return Err(Error::precondition(format!(
            "residual grid needs at least 32 interior points (34 nodes), got {}",
            y_grid.len()
        )));
    }
    let h = y_grid[1] - y_grid[0];
    if !(h > 0.0) {
        return Err(Error::precondition("y grid must be increasing".to_string()));
    }
    for w in y_grid.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
            return Err(Error::precondition("y grid must be uniform".to_string()));
        }
    }
    if !(y_grid[0] >= 0.0) {
        return Err(Error::precondition("y grid must start at >= 0".to_string()));
    }
    if !spec.is_admissible()? {
        return Err(Error::precondition(
            "diffusion spec is not admissible (scale-function conditions fail)".to_string(),
        ));
    }

    let expansion = expand(&base, f)?;
    let scale = expansion.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let n_modes = expansion.coeffs.len();
    let n_y = y_grid.len();

    // Kernel table K_i(y_j), reusing identical λ rows.
    let mut table = vec![0.0f64; n_modes * n_y];
    let mut row_cache: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for i in 0..n_modes {
        let lambda = expansion.lambdas[i];
        let key = lambda.to_bits();
        if !row_cache.contains_key(&key) {
            let mut row = Vec::with_capacity(n_y);
            for &y in y_grid {
                row.push(kernel_at(spec, y, lambda, expansion.coeffs[i], scale)?);
            }
            row_cache.insert(key, row);
        }
        table[i * n_y..(i + 1) * n_y].copy_from_slice(&row_cache[&key]);
    }

    let norm_f = f.lp_norm(2.0)?;
    if norm_f == 0.0 {
        return Err(Error::domain("residual of the zero field is undefined".to_string()));
    }

    let mut worst = 0.0f64;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n_modes];
    for j in 1..n_y - 1 {
        let y = y_grid[j];
        let a = spec.coeff_a(y);
        let b = spec.coeff_b(y);
        for i in 0..n_modes {
            let km = table[i * n_y + j - 1];
            let k0 = table[i * n_y + j];
            let kp = table[i * n_y + j + 1];
            let d2 = (kp - 2.0 * k0 + km) / (h * h);
            let d1 = (kp - km) / (2.0 * h);
            // L contributes −λ·K per component; B is the FD estimate.
            let rho = a * a * d2 + b * d1 - expansion.lambdas[i] * k0;
            coeffs[i] = expansion.coeffs[i] * rho;
        }
        let field = resum(&base, f.grid(), &coeffs)?;
        worst = worst.max(field.max_abs());
    }
    Ok(worst / norm_f)
}
