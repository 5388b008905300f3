//! The vertical diffusion on (0, ∞) and its potential-theoretic data.
//!
//! The process η solves dη_t = b(η_t) dt + a(η_t) dβ_t with E β_t² = 2t and
//! is killed on hitting 0.  Everything downstream is built from four objects:
//!
//! - the scale derivative s′(z) = exp(-∫_1^z b/a² dy) and the speed density
//!   m(z) = 1 / (s′(z) a(z)²),
//! - h(y) = 1/s′(y), the increasing positive harmonic function with h(1)=1,
//! - the Green function G(y, z) = (h(z)/a(z)²) ∫_0^{y∧z} dw/h(w) of the
//!   killed process and its y → ∞ limit,
//! - the hitting-time Laplace transform K(y, λ) = E^y e^{-λ τ}, the unique
//!   bounded solution of a² K'' + b K' = λ K with K(0, λ) = 1.
//!
//! Two closed-form families (Brownian motion with constant downward drift,
//! and Bessel-type drift γ/y) carry exact expressions; arbitrary tabulated
//! coefficients fall back to cached quadrature and a graded-grid two-point
//! boundary-value solve.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::error::{Error, Result};
use crate::quad::{self, QuadratureConfig};
use crate::special;

/// Minimum number of coefficient nodes for a tabulated spec.
pub const TABULATED_MIN_NODES: usize = 8;

/// Interior grid size of the boundary-value solve for tabulated kernels.
const BVP_NODES: usize = 8000;

/// Doubling sweeps used by the numeric admissibility heuristic.
const ADMISSIBILITY_DOUBLINGS: u32 = 10;

fn default_quad() -> QuadratureConfig {
    QuadratureConfig::default()
}

/// Diffusion coefficient specification.
#[derive(Debug, Clone)]
pub enum DiffusionSpec {
    /// a = σ, b = -2m: Brownian motion with constant drift toward the origin
    /// (m = 0 is allowed and gives the driftless case).
    BmDrift { sigma: f64, m: f64 },
    /// a = 1, b = γ/y with γ = 1 - 2s, s ∈ (0, 1).
    Bessel { s: f64 },
    /// Coefficients sampled on a finite grid, linearly interpolated between
    /// nodes and continued as constants outside them.
    Tabulated(TabulatedSpec),
}

/// Outcome of the admissibility check: the scale function must diverge at
/// +∞ (no escape to infinity) and be integrable at 0 (the origin is reached).
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub admissible: bool,
    /// ∫_1^∞ s′ = ∞ holds (analytically or by the doubling heuristic).
    pub scale_diverges_at_infinity: bool,
    /// ∫_0^1 s′ < ∞ holds.
    pub scale_integrable_at_zero: bool,
    pub diagnostics: String,
}

impl DiffusionSpec {
    pub fn bm_drift(sigma: f64, m: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(m >= 0.0) || !m.is_finite() {
            return Err(Error::domain(format!("m must be nonnegative, got {m}")));
        }
        Ok(DiffusionSpec::BmDrift { sigma, m })
    }

    pub fn bessel(s: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::domain(format!("s must lie in (0, 1), got {s}")));
        }
        Ok(DiffusionSpec::Bessel { s })
    }

    /// Tabulated profile tuned for low-bias Euler path simulation near the
    /// absorbing end: the noise coefficient tapers linearly to a small floor,
    /// a(y) = clamp(y / 0.6, 0.1, 1), while the inward drift
    /// b(y) = -1/max(y, 0.03) - 2 grows as the boundary approaches (capped so
    /// the scale and speed densities stay inside f64 range).  Absorption is
    /// then drift-dominated, so survival barely depends on the noise draw and
    /// the O(√dt) boundary bias of Euler crossing schemes is suppressed.
    /// 260 geometric nodes on [0.004, 30] with constant continuation outside.
    pub fn boundary_tapered() -> Self {
        let y_max = 30.0f64;
        let n = 260usize;
        let y_first = 0.004f64;
        let ratio = (y_max / y_first).powf(1.0 / (n - 1) as f64);
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut yj = y_first;
        for _ in 0..n {
            y.push(yj);
            a.push((yj / 0.6).clamp(0.1, 1.0));
            b.push(-1.0 / yj.max(0.03) - 2.0);
            yj *= ratio;
        }
        *y.last_mut().unwrap() = y_max;
        DiffusionSpec::Tabulated(
            TabulatedSpec::new(y, a, b, y_max).expect("preset tables are valid"),
        )
    }

    /// Diffusion coefficient a(y).
    pub fn coeff_a(&self, y: f64) -> f64 {
        match self {
            DiffusionSpec::BmDrift { sigma, .. } => *sigma,
            DiffusionSpec::Bessel { .. } => 1.0,
            DiffusionSpec::Tabulated(t) => t.coeff_at(y).0,
        }
    }

    /// Drift coefficient b(y).  Singular at y = 0 for the Bessel family.
    pub fn coeff_b(&self, y: f64) -> f64 {
        match self {
            DiffusionSpec::BmDrift { m, .. } => -2.0 * m,
            DiffusionSpec::Bessel { s } => (1.0 - 2.0 * s) / y,
            DiffusionSpec::Tabulated(t) => t.coeff_at(y).1,
        }
    }

    /// Scale derivative s′(z) = exp(-∫_1^z b/a²).
    pub fn scale_derivative(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) || !z.is_finite() {
            return Err(Error::domain(format!("scale_derivative needs z > 0, got {z}")));
        }
        Ok(match self {
            DiffusionSpec::BmDrift { sigma, m } => {
                (2.0 * m * (z - 1.0) / (sigma * sigma)).exp()
            }
            DiffusionSpec::Bessel { s } => z.powf(2.0 * s - 1.0),
            DiffusionSpec::Tabulated(t) => (-t.drift_potential(z)?).exp(),
        })
    }

    /// Speed density m(z) = 1 / (s′(z) a(z)²).
    pub fn speed_density(&self, z: f64) -> Result<f64> {
        let sp = self.scale_derivative(z)?;
        let a = self.coeff_a(z);
        Ok(1.0 / (sp * a * a))
    }

    /// h(y) = exp(∫_1^y b/a²) = 1/s′(y); h(0) is finite for admissible specs.
    pub fn h_function(&self, y: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::domain(format!("h_function needs y >= 0, got {y}")));
        }
        Ok(match self {
            DiffusionSpec::BmDrift { sigma, m } => {
                (-2.0 * m * (y - 1.0) / (sigma * sigma)).exp()
            }
            DiffusionSpec::Bessel { s } => y.powf(1.0 - 2.0 * s),
            DiffusionSpec::Tabulated(t) => t.drift_potential(y)?.exp(),
        })
    }

    /// Check the two scale-function conditions.  Closed-form families are
    /// decided analytically; tabulated coefficients use quadrature with a
    /// doubling sweep of the upper endpoint.
    pub fn check_conditions(&self) -> Result<AdmissibilityReport> {
        match self {
            DiffusionSpec::BmDrift { sigma, m } => Ok(AdmissibilityReport {
                admissible: true,
                scale_diverges_at_infinity: true,
                scale_integrable_at_zero: true,
                diagnostics: format!(
                    "s'(z) = exp(2m(z-1)/sigma^2) with m = {m}, sigma = {sigma}: \
                     bounded below by a positive constant at infinity, bounded above near 0"
                ),
            }),
            DiffusionSpec::Bessel { s } => {
                let gamma = 1.0 - 2.0 * s;
                Ok(AdmissibilityReport {
                    admissible: true,
                    scale_diverges_at_infinity: true,
                    scale_integrable_at_zero: true,
                    diagnostics: format!(
                        "s'(z) = z^({:.6}) with exponent in (-1, 1): \
                         divergent integral at infinity, integrable at 0",
                        -gamma
                    ),
                })
            }
            DiffusionSpec::Tabulated(t) => t.check_conditions_numeric(self),
        }
    }

    /// Green function G(y, z) of the process killed at 0.
    pub fn green(&self, y: f64, z: f64) -> Result<f64> {
        if !(y > 0.0 && z > 0.0) || !y.is_finite() || !z.is_finite() {
            return Err(Error::domain(format!(
                "green requires positive finite arguments, got y={y}, z={z}"
            )));
        }
        let w = y.min(z);
        match self {
            DiffusionSpec::BmDrift { sigma, m } => {
                if *m == 0.0 {
                    Ok(w / (sigma * sigma))
                } else {
                    let c = 2.0 * m / (sigma * sigma);
                    // G = (e^{c(w-z)} - e^{-cz}) / 2m.  For small c·w the
                    // exp_m1 form is accurate; for large c·w the difference
                    // form avoids overflow (both exponents are <= 0).
                    if c * w <= 0.5 {
                        Ok((c * w).exp_m1() * (-c * z).exp() / (2.0 * m))
                    } else {
                        Ok(((c * (w - z)).exp() - (-c * z).exp()) / (2.0 * m))
                    }
                }
            }
            DiffusionSpec::Bessel { s } => {
                let gamma = 1.0 - 2.0 * s;
                Ok(z.powf(gamma) * w.powf(1.0 - gamma) / (1.0 - gamma))
            }
            DiffusionSpec::Tabulated(t) => {
                let h = self.h_function(z)?;
                let a = self.coeff_a(z);
                Ok(h / (a * a) * t.scale_integral_from_zero(w)?)
            }
        }
    }

    /// G(∞, z) = lim_{y→∞} G(y, z) = s(z) m(z); exists for admissible specs
    /// because G(y, z) is constant in y once y ≥ z.
    pub fn green_inf(&self, z: f64) -> Result<f64> {
        self.green(f64::MAX, z)
    }

    /// True when G(∞, z) stays under C·(1 + z^8) on a dyadic sample grid;
    /// multiplier quadratures require at most polynomial growth.
    pub fn green_inf_poly_growth_ok(&self) -> bool {
        let c0 = match self.green_inf(1.0) {
            Ok(v) => v.abs().max(1.0),
            Err(_) => return false,
        };
        for j in 0..=20 {
            let z = (2.0f64).powi(j);
            match self.green_inf(z) {
                Ok(g) => {
                    if !g.is_finite() || g > 16.0 * c0 * (1.0 + z.powi(8)) {
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
        true
    }

    /// Hitting-time Laplace transform K(y, λ) = E^y e^{-λτ}.
    ///
    /// Closed-form families accept λ ≥ 0 (K(·, 0) = 1 since the origin is
    /// reached almost surely); tabulated specs require λ > 0 and return the
    /// truncated boundary-value solution, which vanishes for y ≥ y_max.
    pub fn kernel_k(&self, y: f64, lambda: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::domain(format!("kernel_k needs y >= 0, got {y}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::domain(format!(
                "kernel_k needs lambda >= 0, got {lambda}"
            )));
        }
        match self {
            DiffusionSpec::BmDrift { sigma, m } => {
                let theta = m / sigma;
                let beta = (lambda + theta * theta).sqrt();
                Ok((-(y / sigma) * (beta - theta)).exp())
            }
            DiffusionSpec::Bessel { s } => {
                if lambda == 0.0 || y == 0.0 {
                    return Ok(1.0);
                }
                let x = y * lambda.sqrt();
                let k = special::bessel_k(*s, x, &default_quad())?;
                let scale = (1.0 - s) * 2.0f64.ln() - special::gamma(*s)?.ln();
                // 2^{1-s}/Γ(s) · x^s K_s(x); K_s already carries e^{-x}.
                Ok((scale + s * x.ln()).exp() * k)
            }
            DiffusionSpec::Tabulated(t) => {
                if lambda == 0.0 {
                    return Err(Error::domain(
                        "tabulated kernels require lambda > 0 (the boundary-value solve \
                         is singular at lambda = 0)"
                            .to_string(),
                    ));
                }
                let sol = t.kernel_solution(lambda)?;
                Ok(sol.eval(y))
            }
        }
    }

    /// ∂_y K(y, λ): analytic for the closed-form families, Richardson-
    /// extrapolated central differences of the solve for tabulated specs.
    pub fn dk_dy(&self, y: f64, lambda: f64) -> Result<f64> {
        if !(y >= 0.0) || !y.is_finite() {
            return Err(Error::domain(format!("dk_dy needs y >= 0, got {y}")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::domain(format!("dk_dy needs lambda >= 0, got {lambda}")));
        }
        match self {
            DiffusionSpec::BmDrift { sigma, m } => {
                let theta = m / sigma;
                let beta = (lambda + theta * theta).sqrt();
                let rate = (beta - theta) / sigma;
                Ok(-rate * (-(y / sigma) * (beta - theta)).exp())
            }
            DiffusionSpec::Bessel { s } => {
                if lambda == 0.0 {
                    return Ok(0.0);
                }
                let sq = lambda.sqrt();
                let x = y * sq;
                if x == 0.0 {
                    // Limit of -(2^{1-s}/Γ(s)) √λ x^s K_{1-s}(x) as x → 0+.
                    return Ok(match s.partial_cmp(&0.5).unwrap() {
                        std::cmp::Ordering::Greater => 0.0,
                        std::cmp::Ordering::Equal => -sq,
                        std::cmp::Ordering::Less => f64::NEG_INFINITY,
                    });
                }
                let k = special::bessel_k(1.0 - s, x, &default_quad())?;
                let scale = (1.0 - s) * 2.0f64.ln() - special::gamma(*s)?.ln();
                Ok(-sq * (scale + s * x.ln()).exp() * k)
            }
            DiffusionSpec::Tabulated(t) => {
                if lambda == 0.0 {
                    return Err(Error::domain(
                        "tabulated kernels require lambda > 0".to_string(),
                    ));
                }
                let span = t.inner.y_max;
                if y >= span {
                    return Ok(0.0);
                }
                let sol = t.kernel_solution(lambda)?;
                let h = (1e-4 * span).min(0.25 * (span - y)).max(1e-9 * span);
                if y >= h {
                    // Richardson-extrapolated central differences.
                    let central =
                        |h: f64| (sol.eval(y + h) - sol.eval(y - h)) / (2.0 * h);
                    Ok((4.0 * central(0.5 * h) - central(h)) / 3.0)
                } else {
                    // One-sided second-order stencil near the boundary.
                    Ok((-3.0 * sol.eval(y) + 4.0 * sol.eval(y + h)
                        - sol.eval(y + 2.0 * h))
                        / (2.0 * h))
                }
            }
        }
    }

    /// Cached admissibility decision; closed-form families are admissible by
    /// construction, tabulated specs run the numeric check once.
    pub fn is_admissible(&self) -> Result<bool> {
        match self {
            DiffusionSpec::Tabulated(t) => {
                if let Some(v) = t.inner.admissible.get() {
                    return Ok(*v);
                }
                let rep = self.check_conditions()?;
                let _ = t.inner.admissible.set(rep.admissible);
                Ok(rep.admissible)
            }
            _ => Ok(true),
        }
    }

    /// Upper endpoint beyond which the kernel vanishes identically, when one
    /// exists (tabulated solves are truncated at y_max).
    pub fn kernel_support_end(&self) -> Option<f64> {
        match self {
            DiffusionSpec::Tabulated(t) => Some(t.inner.y_max),
            _ => None,
        }
    }

    /// Expected occupation functional E^y ∫_0^τ g(η_s) ds = ∫_0^∞ G(y,z) g(z) dz.
    pub fn occupation_expectation<F: Fn(f64) -> f64>(&self, g: F, y: f64) -> Result<f64> {
        if !(y > 0.0) || !y.is_finite() {
            return Err(Error::domain(format!(
                "occupation_expectation needs y > 0, got {y}"
            )));
        }
        // Fast divergence probe: on a geometric tail grid the integrand must
        // either vanish or decay strictly.
        let probe_base = y.max(1.0);
        let mut last = f64::INFINITY;
        for k in [16.0, 64.0, 256.0, 1024.0] {
            let z = probe_base * k;
            let v = (self.green(y, z)? * g(z)).abs();
            if !v.is_finite() || (v > 0.0 && v > 0.999 * last) {
                return Err(Error::domain(
                    "occupation integrand G(y,·) g does not decay at infinity".to_string(),
                ));
            }
            last = v;
        }
        let cfg = QuadratureConfig::with_rel_tol(1e-9);
        quad::integrate_zero_to_inf_split(
            |z| {
                if z <= 0.0 {
                    0.0
                } else {
                    self.green(y, z).map(|gr| gr * g(z)).unwrap_or(f64::NAN)
                }
            },
            y.max(1e-3),
            &cfg,
        )
    }
}

/// Tabulated coefficients: shared immutable data plus lazily built caches
/// (drift-potential prefix integrals, scale-integral prefixes, and one
/// boundary-value solution per requested λ).
#[derive(Clone)]
pub struct TabulatedSpec {
    inner: Arc<TabInner>,
}

struct TabInner {
    y: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    y_max: f64,
    prefixes: OnceLock<TabPrefixes>,
    admissible: OnceLock<bool>,
    kernels: RwLock<HashMap<u64, Arc<BvpSolution>>>,
}

/// One-time integrals anchored at the table nodes.
struct TabPrefixes {
    /// ψ(y_i) - ψ(y_0) with ψ(z) = ∫ b/a², plus the value at z = 1.
    psi: Vec<f64>,
    psi_at_one: f64,
    /// ∫_0^{y_i} s′(u) du.
    scale_int: Vec<f64>,
}

impl std::fmt::Debug for TabulatedSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TabulatedSpec")
            .field("nodes", &self.inner.y.len())
            .field("y_max", &self.inner.y_max)
            .finish()
    }
}

impl TabulatedSpec {
    pub fn new(y: Vec<f64>, a: Vec<f64>, b: Vec<f64>, y_max: f64) -> Result<Self> {
        if y.len() < TABULATED_MIN_NODES {
            return Err(Error::precondition(format!(
                "tabulated specs need at least {TABULATED_MIN_NODES} nodes, got {}",
                y.len()
            )));
        }
        if y.len() != a.len() || y.len() != b.len() {
            return Err(Error::precondition(format!(
                "coefficient arrays must share one length, got {}/{}/{}",
                y.len(),
                a.len(),
                b.len()
            )));
        }
        if !y.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::domain("grid nodes must be finite and nonnegative"));
        }
        if !y.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::domain("grid nodes must be strictly increasing"));
        }
        if !a.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::domain("diffusion coefficients must be positive"));
        }
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("drift coefficients must be finite"));
        }
        if !(y_max > 0.0) || !y_max.is_finite() || y_max < *y.last().unwrap() {
            return Err(Error::precondition(format!(
                "y_max must be finite and at least the last grid node, got {y_max}"
            )));
        }
        Ok(TabulatedSpec {
            inner: Arc::new(TabInner {
                y,
                a,
                b,
                y_max,
                prefixes: OnceLock::new(),
                admissible: OnceLock::new(),
                kernels: RwLock::new(HashMap::new()),
            }),
        })
    }

    /// Parse the text form: header `tabulated <n> <y_max>`, then n lines
    /// `y a b` in grid order.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::parse("empty tabulated spec"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("tabulated") {
            return Err(Error::parse(
                "tabulated spec must start with a 'tabulated <n> <y_max>' header",
            ));
        }
        let n: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse("bad node count in tabulated header"))?;
        let y_max: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse("bad y_max in tabulated header"))?;
        if parts.next().is_some() {
            return Err(Error::parse("trailing tokens in tabulated header"));
        }
        let mut y = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for line in lines.by_ref().take(n) {
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(format!("bad coefficient line {line:?}: {e}")))?;
            if vals.len() != 3 {
                return Err(Error::parse(format!(
                    "coefficient lines carry 'y a b', got {line:?}"
                )));
            }
            y.push(vals[0]);
            a.push(vals[1]);
            b.push(vals[2]);
        }
        if y.len() != n {
            return Err(Error::parse(format!(
                "header announced {n} nodes but only {} lines followed",
                y.len()
            )));
        }
        if lines.next().is_some() {
            return Err(Error::parse("trailing lines after the announced node count"));
        }
        TabulatedSpec::new(y, a, b, y_max)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("tabulated {} {:.17e}\n", self.inner.y.len(), self.inner.y_max);
        for i in 0..self.inner.y.len() {
            out.push_str(&format!(
                "{:.17e} {:.17e} {:.17e}\n",
                self.inner.y[i], self.inner.a[i], self.inner.b[i]
            ));
        }
        out
    }

    pub fn y_max(&self) -> f64 {
        self.inner.y_max
    }

    /// Linear interpolation inside the grid, constant continuation outside.
    fn coeff_at(&self, y: f64) -> (f64, f64) {
        let nodes = &self.inner.y;
        if y <= nodes[0] {
            return (self.inner.a[0], self.inner.b[0]);
        }
        if y >= *nodes.last().unwrap() {
            return (*self.inner.a.last().unwrap(), *self.inner.b.last().unwrap());
        }
        let hi = nodes.partition_point(|v| *v < y).max(1);
        let lo = hi - 1;
        let t = (y - nodes[lo]) / (nodes[hi] - nodes[lo]);
        (
            self.inner.a[lo] + t * (self.inner.a[hi] - self.inner.a[lo]),
            self.inner.b[lo] + t * (self.inner.b[hi] - self.inner.b[lo]),
        )
    }

    fn drift_ratio(&self, y: f64) -> f64 {
        let (a, b) = self.coeff_at(y);
        b / (a * a)
    }

    fn prefixes(&self) -> Result<&TabPrefixes> {
        if let Some(p) = self.inner.prefixes.get() {
            return Ok(p);
        }
        let built = self.build_prefixes()?;
        let _ = self.inner.prefixes.set(built);
        Ok(self.inner.prefixes.get().unwrap())
    }

    fn build_prefixes(&self) -> Result<TabPrefixes> {
        let cfg = QuadratureConfig::with_rel_tol(1e-12);
        let nodes = &self.inner.y;
        let mut psi = Vec::with_capacity(nodes.len());
        psi.push(0.0);
        for i in 1..nodes.len() {
            let seg =
                quad::integrate(|u| self.drift_ratio(u), nodes[i - 1], nodes[i], &cfg)?;
            psi.push(psi[i - 1] + seg);
        }
        let psi_at_one = self.raw_psi_with(&psi, 1.0);
        let sp = |u: f64| (-(self.raw_psi_with(&psi, u) - psi_at_one)).exp();
        let mut scale_int = Vec::with_capacity(nodes.len());
        scale_int.push(if nodes[0] > 0.0 {
            quad::integrate(sp, 0.0, nodes[0], &cfg)?
        } else {
            0.0
        });
        for i in 1..nodes.len() {
            let seg = quad::integrate(sp, nodes[i - 1], nodes[i], &cfg)?;
            scale_int.push(scale_int[i - 1] + seg);
        }
        Ok(TabPrefixes {
            psi,
            psi_at_one,
            scale_int,
        })
    }

    /// ψ(z) - ψ(y_0) using the node prefix plus a short local quadrature.
    fn raw_psi_with(&self, psi: &[f64], z: f64) -> f64 {
        let nodes = &self.inner.y;
        let cfg = QuadratureConfig::with_rel_tol(1e-12);
        if z <= nodes[0] {
            return self.drift_ratio(nodes[0]) * (z - nodes[0]);
        }
        if z >= *nodes.last().unwrap() {
            let last = *nodes.last().unwrap();
            return psi[psi.len() - 1] + self.drift_ratio(last) * (z - last);
        }
        let hi = nodes.partition_point(|v| *v < z).max(1);
        let lo = hi - 1;
        psi[lo]
            + quad::integrate(|u| self.drift_ratio(u), nodes[lo], z, &cfg).unwrap_or(f64::NAN)
    }

    /// ψ(z) = ∫_1^z b/a².
    fn drift_potential(&self, z: f64) -> Result<f64> {
        let p = self.prefixes()?;
        Ok(self.raw_psi_with(&p.psi, z) - p.psi_at_one)
    }

    /// ∫_0^w s′(u) du.
    fn scale_integral_from_zero(&self, w: f64) -> Result<f64> {
        let p = self.prefixes()?;
        let nodes = &self.inner.y;
        let cfg = QuadratureConfig::with_rel_tol(1e-12);
        let sp = |u: f64| (-(self.raw_psi_with(&p.psi, u) - p.psi_at_one)).exp();
        if w <= nodes[0] {
            return quad::integrate(sp, 0.0, w, &cfg);
        }
        if w >= *nodes.last().unwrap() {
            let last = *nodes.last().unwrap();
            return Ok(p.scale_int[p.scale_int.len() - 1]
                + quad::integrate(sp, last, w, &cfg)?);
        }
        let hi = nodes.partition_point(|v| *v < w).max(1);
        let lo = hi - 1;
        Ok(p.scale_int[lo] + quad::integrate(sp, nodes[lo], w, &cfg)?)
    }

    fn check_conditions_numeric(&self, spec: &DiffusionSpec) -> Result<AdmissibilityReport> {
        // Near zero: coefficients are bounded and a is bounded away from 0,
        // so s′ is bounded on (0, 1]; confirm by quadrature.
        let cfg = QuadratureConfig::with_rel_tol(1e-8);
        let upper_near_zero = self.inner.y_max.min(1.0);
        let near_zero = quad::integrate(
            |u| {
                if u <= 0.0 {
                    0.0
                } else {
                    spec.scale_derivative(u).unwrap_or(f64::INFINITY)
                }
            },
            0.0,
            upper_near_zero,
            &cfg,
        );
        let zero_ok = matches!(near_zero, Ok(v) if v.is_finite());

        // At infinity: integrate s′ over doubling windows [R, 2R].  Divergence
        // shows up as non-vanishing (or exploding) window contributions.
        let mut diverges = false;
        let mut windows = Vec::new();
        let mut total = 0.0f64;
        let mut r = self.inner.y_max.max(1.0);
        let mut overflowed = false;
        for _ in 0..=ADMISSIBILITY_DOUBLINGS {
            let next = 2.0 * r;
            let probe = spec.scale_derivative(next).unwrap_or(f64::INFINITY);
            if !probe.is_finite() || probe > 1e100 {
                overflowed = true;
                break;
            }
            let seg = quad::integrate(
                |u| spec.scale_derivative(u).unwrap_or(f64::INFINITY),
                r,
                next,
                &cfg,
            )
            .unwrap_or(f64::INFINITY);
            if !seg.is_finite() {
                overflowed = true;
                break;
            }
            windows.push(seg);
            total += seg;
            r = next;
        }
        if overflowed {
            diverges = true;
        } else if let Some(last) = windows.last() {
            // Convergent tails make the final window negligible against the
            // running total; anything else is treated as divergent.
            diverges = *last > 1e-10 * total.max(1e-300);
        }

        let admissible = diverges && zero_ok;
        Ok(AdmissibilityReport {
            admissible,
            scale_diverges_at_infinity: diverges,
            scale_integrable_at_zero: zero_ok,
            diagnostics: format!(
                "doubling sweep to R = {:.3e}: window integrals {:?}{}; \
                 integral of s' near zero {}",
                r,
                windows
                    .iter()
                    .map(|w| format!("{w:.3e}"))
                    .collect::<Vec<_>>(),
                if overflowed { " (overflow => divergent)" } else { "" },
                match near_zero {
                    Ok(v) => format!("= {v:.6e}"),
                    Err(ref e) => format!("failed: {e}"),
                }
            ),
        })
    }

    fn kernel_solution(&self, lambda: f64) -> Result<Arc<BvpSolution>> {
        let key = lambda.to_bits();
        if let Some(sol) = self.inner.kernels.read().unwrap().get(&key) {
            return Ok(sol.clone());
        }
        let sol = Arc::new(self.solve_bvp(lambda)?);
        let mut map = self.inner.kernels.write().unwrap();
        Ok(map.entry(key).or_insert(sol).clone())
    }

    /// Second-order centered finite differences for a² f'' + b f' = λ f on a
    /// grid graded quadratically toward 0, with f(0) = 1, f(y_max) = 0.
    fn solve_bvp(&self, lambda: f64) -> Result<BvpSolution> {
        let n = BVP_NODES;
        let y_max = self.inner.y_max;
        let grid: Vec<f64> = (0..=n)
            .map(|i| {
                let u = i as f64 / n as f64;
                y_max * u * u
            })
            .collect();
        // Tridiagonal rows for interior nodes 1..n-1.
        let mut sub = vec![0.0; n + 1];
        let mut diag = vec![0.0; n + 1];
        let mut sup = vec![0.0; n + 1];
        let mut rhs = vec![0.0; n + 1];
        diag[0] = 1.0;
        rhs[0] = 1.0;
        diag[n] = 1.0;
        rhs[n] = 0.0;
        for i in 1..n {
            let hm = grid[i] - grid[i - 1];
            let hp = grid[i + 1] - grid[i];
            let (a, b) = self.coeff_at(grid[i]);
            let a2 = a * a;
            // Non-uniform 3-point stencils; the grading u -> u² is smooth,
            // so both stay second order.
            let d2_sub = 2.0 / (hm * (hm + hp));
            let d2_diag = -2.0 / (hm * hp);
            let d2_sup = 2.0 / (hp * (hm + hp));
            let d1_sub = -hp / (hm * (hm + hp));
            let d1_diag = (hp - hm) / (hm * hp);
            let d1_sup = hm / (hp * (hm + hp));
            sub[i] = a2 * d2_sub + b * d1_sub;
            diag[i] = a2 * d2_diag + b * d1_diag - lambda;
            sup[i] = a2 * d2_sup + b * d1_sup;
            rhs[i] = 0.0;
        }
        // Thomas elimination.
        let mut c_star = vec![0.0; n + 1];
        let mut d_star = vec![0.0; n + 1];
        c_star[0] = sup[0] / diag[0];
        d_star[0] = rhs[0] / diag[0];
        for i in 1..=n {
            let m = diag[i] - sub[i] * c_star[i - 1];
            if m == 0.0 {
                return Err(Error::numeric(
                    "singular tridiagonal system in tabulated kernel solve".to_string(),
                ));
            }
            c_star[i] = sup[i] / m;
            d_star[i] = (rhs[i] - sub[i] * d_star[i - 1]) / m;
        }
        let mut values = vec![0.0; n + 1];
        values[n] = d_star[n];
        for i in (0..n).rev() {
            values[i] = d_star[i] - c_star[i] * values[i + 1];
        }
        Ok(BvpSolution {
            y_max,
            values,
        })
    }
}

/// Kernel values on the graded grid y_i = y_max (i/N)², with cubic Lagrange
/// interpolation between nodes.
struct BvpSolution {
    y_max: f64,
    values: Vec<f64>,
}

impl BvpSolution {
    fn eval(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 1.0;
        }
        if y >= self.y_max {
            return 0.0;
        }
        let n = self.values.len() - 1;
        let pos = (y / self.y_max).sqrt() * n as f64;
        let i = (pos.floor() as usize).clamp(1, n - 2);
        let window = [i - 1, i, i + 1, i + 2];
        let node = |j: usize| {
            let u = j as f64 / n as f64;
            self.y_max * u * u
        };
        let mut acc = 0.0;
        for (idx, &j) in window.iter().enumerate() {
            let mut w = 1.0;
            for (kdx, &k) in window.iter().enumerate() {
                if idx != kdx {
                    w *= (y - node(k)) / (node(j) - node(k));
                }
            }
            acc += w * self.values[j];
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn quad_scale_derivative(spec: &DiffusionSpec, z: f64) -> f64 {
        // Independent route: direct quadrature of the defining integral.
        let cfg = QuadratureConfig::with_rel_tol(1e-12);
        let i = quad::integrate(
            |u| spec.coeff_b(u) / (spec.coeff_a(u) * spec.coeff_a(u)),
            1.0,
            z,
            &cfg,
        )
        .unwrap();
        (-i).exp()
    }

    #[test]
    fn scale_derivative_matches_quadrature_oracle() {
        let bm = DiffusionSpec::bm_drift(1.3, 0.7).unwrap();
        let bes = DiffusionSpec::bessel(0.3).unwrap();
        for &z in &[0.2, 0.8, 1.0, 2.5, 7.0] {
            for spec in [&bm, &bes] {
                let closed = spec.scale_derivative(z).unwrap();
                let oracle = quad_scale_derivative(spec, z);
                assert!(rel_err(closed, oracle) < 1e-10, "z={z}: {closed} vs {oracle}");
            }
        }
    }

    #[test]
    fn h_times_scale_derivative_is_one() {
        let specs = [
            DiffusionSpec::bm_drift(0.8, 1.5).unwrap(),
            DiffusionSpec::bessel(0.75).unwrap(),
        ];
        for spec in &specs {
            for &y in &[0.1, 1.0, 3.0, 12.0] {
                let p = spec.h_function(y).unwrap() * spec.scale_derivative(y).unwrap();
                assert!((p - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_families_are_admissible() {
        for spec in [
            DiffusionSpec::bm_drift(1.0, 0.0).unwrap(),
            DiffusionSpec::bm_drift(2.0, 3.0).unwrap(),
            DiffusionSpec::bessel(0.9).unwrap(),
        ] {
            let rep = spec.check_conditions().unwrap();
            assert!(rep.admissible, "{:?}", rep.diagnostics);
        }
    }

    fn constant_coeff_table(a: f64, b: f64, y_max: f64) -> TabulatedSpec {
        let n = 16;
        let y: Vec<f64> = (0..n).map(|i| y_max * i as f64 / (n - 1) as f64).collect();
        TabulatedSpec::new(y, vec![a; n], vec![b; n], y_max).unwrap()
    }

    #[test]
    fn tabulated_admissibility_depends_on_drift_sign() {
        // Drift toward the origin (or none): admissible.
        let inward = DiffusionSpec::Tabulated(constant_coeff_table(1.0, -1.0, 10.0));
        assert!(inward.check_conditions().unwrap().admissible);
        let neutral = DiffusionSpec::Tabulated(constant_coeff_table(1.0, 0.0, 10.0));
        assert!(neutral.check_conditions().unwrap().admissible);
        // Outward drift: s' decays exponentially, the scale integral converges.
        let outward = DiffusionSpec::Tabulated(constant_coeff_table(1.0, 1.0, 10.0));
        let rep = outward.check_conditions().unwrap();
        assert!(!rep.admissible);
        assert!(!rep.scale_diverges_at_infinity, "{}", rep.diagnostics);
    }

    #[test]
    fn green_matches_numeric_assembly() {
        // G(y,z) = (h(z)/a(z)²) ∫_0^{y∧z} s′, assembled from quadrature.
        let spec = DiffusionSpec::bm_drift(1.4, 0.9).unwrap();
        let cfg = QuadratureConfig::with_rel_tol(1e-12);
        for &(y, z) in &[(0.5, 2.0), (2.0, 0.5), (1.0, 1.0), (4.0, 3.0)] {
            let closed = spec.green(y, z).unwrap();
            let w = y.min(z);
            let int = quad::integrate(|u| spec.scale_derivative(u).unwrap(), 0.0, w, &cfg)
                .unwrap();
            let oracle = spec.h_function(z).unwrap() / (1.4f64 * 1.4) * int;
            assert!(rel_err(closed, oracle) < 1e-9, "y={y}, z={z}");
        }
    }

    #[test]
    fn green_inf_is_reached_by_large_y() {
        let spec = DiffusionSpec::bm_drift(1.0, 2.0).unwrap();
        for &z in &[0.3, 1.0, 5.0] {
            let lim = spec.green_inf(z).unwrap();
            let far = spec.green(1e6 * z, z).unwrap();
            assert!((far - lim).abs() <= 1e-8 * lim);
        }
    }

    #[test]
    fn bessel_green_inf_closed_form() {
        let s = 0.75;
        let spec = DiffusionSpec::bessel(s).unwrap();
        for &z in &[0.2, 1.0, 4.0] {
            assert!(rel_err(spec.green_inf(z).unwrap(), z / (2.0 * s)) < 1e-12);
        }
    }

    #[test]
    fn kernel_basics() {
        let specs = [
            DiffusionSpec::bm_drift(1.0, 0.0).unwrap(),
            DiffusionSpec::bm_drift(0.7, 1.2).unwrap(),
            DiffusionSpec::bessel(0.4).unwrap(),
        ];
        for spec in &specs {
            assert!((spec.kernel_k(0.0, 3.0).unwrap() - 1.0).abs() < 1e-12);
            assert!((spec.kernel_k(2.0, 0.0).unwrap() - 1.0).abs() < 1e-12);
            let mut prev = 1.0;
            for &y in &[0.5, 1.0, 2.0, 4.0] {
                let k = spec.kernel_k(y, 1.0).unwrap();
                assert!(k > 0.0 && k <= prev, "monotone in y");
                prev = k;
            }
            let mut prev = 1.0;
            for &l in &[0.1, 1.0, 10.0, 100.0] {
                let k = spec.kernel_k(1.5, l).unwrap();
                assert!(k > 0.0 && k <= prev, "monotone in lambda");
                prev = k;
            }
        }
    }

    #[test]
    fn bessel_half_matches_driftless_brownian() {
        let bes = DiffusionSpec::bessel(0.5).unwrap();
        let bm = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        for &y in &[0.1, 1.0, 3.0] {
            for &l in &[0.5, 2.0, 9.0] {
                let kb = bes.kernel_k(y, l).unwrap();
                let km = bm.kernel_k(y, l).unwrap();
                assert!(rel_err(kb, km) < 1e-9, "y={y}, lambda={l}: {kb} vs {km}");
                let db = bes.dk_dy(y, l).unwrap();
                let dm = bm.dk_dy(y, l).unwrap();
                assert!(rel_err(db, dm) < 1e-9);
            }
        }
    }

    #[test]
    fn kernel_satisfies_its_ode_at_second_order() {
        // Residual of a²K'' + bK' - λK, with derivatives from centered
        // differences, must shrink by ~4 when the step halves.
        let spec = DiffusionSpec::bm_drift(1.1, 0.8).unwrap();
        let lambda = 2.0;
        let resid = |h: f64| {
            let mut worst = 0.0f64;
            for &y in &[0.5, 1.0, 2.0, 3.5] {
                let k = |u: f64| spec.kernel_k(u, lambda).unwrap();
                let d2 = (k(y + h) - 2.0 * k(y) + k(y - h)) / (h * h);
                let d1 = (k(y + h) - k(y - h)) / (2.0 * h);
                let a = spec.coeff_a(y);
                let r = a * a * d2 + spec.coeff_b(y) * d1 - lambda * k(y);
                worst = worst.max(r.abs());
            }
            worst
        };
        let r1 = resid(0.02);
        let r2 = resid(0.01);
        let ratio = r1 / r2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn dk_dy_matches_difference_oracle() {
        let specs = [
            DiffusionSpec::bm_drift(1.3, 0.6).unwrap(),
            DiffusionSpec::bessel(0.75).unwrap(),
        ];
        for spec in &specs {
            for &y in &[0.4, 1.0, 2.5] {
                for &l in &[0.7, 4.0] {
                    let h = 1e-5;
                    let fd = (spec.kernel_k(y + h, l).unwrap()
                        - spec.kernel_k(y - h, l).unwrap())
                        / (2.0 * h);
                    let an = spec.dk_dy(y, l).unwrap();
                    assert!(rel_err(an, fd) < 1e-6, "y={y}, l={l}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn tabulated_bvp_reproduces_closed_forms() {
        // Constant coefficients make the linear interpolation exact, so the
        // remaining error is the solver's own.
        for (m, tol) in [(0.5, 1e-4), (0.0, 1e-4)] {
            let table = constant_coeff_table(1.0, -2.0 * m, 25.0);
            let tab = DiffusionSpec::Tabulated(table);
            let exact = DiffusionSpec::bm_drift(1.0, m).unwrap();
            for &l in &[0.1, 1.0, 10.0] {
                for &y in &[0.1, 0.5, 1.0, 2.0, 5.0] {
                    let kt = tab.kernel_k(y, l).unwrap();
                    let ke = exact.kernel_k(y, l).unwrap();
                    assert!(
                        rel_err(kt, ke) < tol,
                        "m={m}, y={y}, l={l}: {kt} vs {ke} ({:.2e})",
                        rel_err(kt, ke)
                    );
                    let dt = tab.dk_dy(y, l).unwrap();
                    let de = exact.dk_dy(y, l).unwrap();
                    assert!(
                        rel_err(dt, de) < 1e-3,
                        "dk m={m}, y={y}, l={l}: {dt} vs {de}"
                    );
                }
            }
        }
    }

    #[test]
    fn tabulated_kernel_edges() {
        let tab = DiffusionSpec::Tabulated(constant_coeff_table(1.0, -1.0, 10.0));
        assert!(tab.kernel_k(1.0, 0.0).is_err());
        assert_eq!(tab.kernel_k(10.0, 1.0).unwrap(), 0.0);
        assert_eq!(tab.kernel_k(50.0, 1.0).unwrap(), 0.0);
        // Cache coherence: repeated evaluation is bit-identical.
        let first = tab.kernel_k(2.345, 3.21).unwrap();
        let second = tab.kernel_k(2.345, 3.21).unwrap();
        assert_eq!(first.to_bits(), second.to_bits());
    }

    #[test]
    fn tabulated_text_round_trip_and_rejects() {
        let table = constant_coeff_table(1.0, -1.0, 10.0);
        let text = table.to_text();
        let back = TabulatedSpec::from_text(&text).unwrap();
        assert_eq!(back.inner.y, table.inner.y);
        assert_eq!(back.inner.a, table.inner.a);
        assert_eq!(back.inner.b, table.inner.b);

        assert!(TabulatedSpec::from_text("").is_err());
        assert!(TabulatedSpec::from_text("tabulated 2 5\n0 1 0\n1 1 0\n").is_err());
        let mut bad = String::from("tabulated 8 5\n");
        for i in 0..8 {
            bad.push_str(&format!("{} 1 0\n", 8 - i)); // decreasing grid
        }
        assert!(TabulatedSpec::from_text(&bad).is_err());
        let mut neg_a = String::from("tabulated 8 5\n");
        for i in 0..8 {
            neg_a.push_str(&format!("{} -1 0\n", i));
        }
        assert!(TabulatedSpec::from_text(&neg_a).is_err());
        assert!(TabulatedSpec::from_text("tabulated 8 5\n0 1 0\n").is_err());
    }

    #[test]
    fn occupation_expectation_closed_forms() {
        // BmDrift{1,1} from y = 1: E τ = y/(2m) = 1/2.
        let spec = DiffusionSpec::bm_drift(1.0, 1.0).unwrap();
        let v = spec.occupation_expectation(|_| 1.0, 1.0).unwrap();
        assert!(rel_err(v, 0.5) < 1e-8, "{v}");

        // Same spec, g = e^{-z}.  With G(1,z) = ½ e^{-2z}(e^{2 min(1,z)} - 1)
        // the integral splits into elementary exponentials:
        //   ∫₀¹ ½(e^{-z} - e^{-3z}) dz + ½(e² - 1) ∫₁^∞ e^{-3z} dz.
        let e1 = (-1.0f64).exp();
        let e3 = (-3.0f64).exp();
        let e2 = (2.0f64).exp();
        let exact = 0.5 * ((1.0 - e1) - (1.0 - e3) / 3.0) + (e2 - 1.0) * e3 / 6.0;
        let v = spec
            .occupation_expectation(|z| (-z).exp(), 1.0)
            .unwrap();
        assert!(rel_err(v, exact) < 1e-7, "{v} vs {exact}");
    }

    #[test]
    fn occupation_rejects_growing_integrand() {
        let spec = DiffusionSpec::bm_drift(1.0, 0.0).unwrap();
        // G(y,z) → y for large z and g ≡ 1: divergent.
        assert!(spec.occupation_expectation(|_| 1.0, 1.0).is_err());
    }

    #[test]
    fn constructor_rejections() {
        assert!(DiffusionSpec::bm_drift(0.0, 1.0).is_err());
        assert!(DiffusionSpec::bm_drift(-1.0, 1.0).is_err());
        assert!(DiffusionSpec::bm_drift(1.0, -0.1).is_err());
        assert!(DiffusionSpec::bessel(0.0).is_err());
        assert!(DiffusionSpec::bessel(1.0).is_err());
        assert!(TabulatedSpec::new(vec![0.0; 4], vec![1.0; 4], vec![0.0; 4], 5.0).is_err());
    }

    #[test]
    fn green_inf_growth_check_passes_for_families() {
        for spec in [
            DiffusionSpec::bm_drift(1.0, 0.0).unwrap(),
            DiffusionSpec::bm_drift(1.0, 2.0).unwrap(),
            DiffusionSpec::bessel(0.25).unwrap(),
        ] {
            assert!(spec.green_inf_poly_growth_ok());
        }
    }
}
