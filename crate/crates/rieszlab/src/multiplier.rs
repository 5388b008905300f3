//! Scalar multiplier symbols.
//!
//! The central object is Φ(λ) = ∫₀^∞ G(∞,y)·(∂_yK(y,λ))²·a(y)² dy, the
//! spectral multiplier produced by the vertical-diffusion extension, together
//! with its alternative form Φ = 1/2 − λ∫₀^∞ G(∞,y)K(y,λ)² dy.  Alongside it
//! live the first- and second-order scalar symbols
//!
//!   t(λ) = ∫₀^∞ a(y)·G(∞,y)·K(y,λ)·∂_yK(y,λ) dy,
//!   s(λ) = ∫₀^∞ G(∞,y)·K(y,λ)² dy,
//!
//! the Stieltjes-representation builders over finite complex measures on
//! [0, ∞] (kernels 1 − m/√(m²+x), 1/√(x+m), 1/(√(x+m²)(√(x+m²)−m))), and the
//! named L^p constants (p*, p*−1, cot(π/2p*), the large-p asymptotic).
//!
//! Sign convention: t and s are the raw quadrature values.  The mapping to
//! operator symbols on the torus (imaginary units, derivative sign flips) is
//! owned by the torus module and pinned there by single-mode oracle tests.

use num_complex::Complex64;

use crate::diffusion::DiffusionSpec;
use crate::error::{Error, Result};
use crate::quad::{self, QuadratureConfig};
use crate::special;

/// Point of the one-point compactification [0, ∞] carrying measure mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralPoint {
    Finite(f64),
    AtInfinity,
}

/// A point mass of a complex measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: SpectralPoint,
    pub weight: Complex64,
}

/// One sample of an absolutely continuous part: the complex density value at
/// `location`, entering integrals with the explicit weight `quad_weight`.
/// No quadrature rule is inferred; the caller owns the discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensitySample {
    pub location: f64,
    pub quad_weight: f64,
    pub value: Complex64,
}

/// Finite complex Borel measure on [0, ∞]: finitely many atoms plus an
/// explicitly sampled density part.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasureAlpha {
    atoms: Vec<Atom>,
    density: Vec<DensitySample>,
}

impl MeasureAlpha {
    pub fn new(atoms: Vec<Atom>, density: Vec<DensitySample>) -> Result<Self> {
        for atom in &atoms {
            match atom.location {
                SpectralPoint::Finite(m) => {
                    if !(m >= 0.0) || !m.is_finite() {
                        return Err(Error::domain(format!(
                            "atom locations must be finite and >= 0 (or at infinity), got {m}"
                        )));
                    }
                }
                SpectralPoint::AtInfinity => {}
            }
            if !atom.weight.re.is_finite() || !atom.weight.im.is_finite() {
                return Err(Error::domain("atom weights must be finite".to_string()));
            }
        }
        for s in &density {
            if !(s.location > 0.0) || !s.location.is_finite() {
                return Err(Error::domain(format!(
                    "density samples live on a positive grid, got {}",
                    s.location
                )));
            }
            if !(s.quad_weight >= 0.0) || !s.quad_weight.is_finite() {
                return Err(Error::domain(format!(
                    "density quadrature weights must be finite and >= 0, got {}",
                    s.quad_weight
                )));
            }
            if !s.value.re.is_finite() || !s.value.im.is_finite() {
                return Err(Error::domain("density values must be finite".to_string()));
            }
        }
        Ok(MeasureAlpha { atoms, density })
    }

    /// Unit point mass at a finite location.
    pub fn dirac(m: f64) -> Result<Self> {
        MeasureAlpha::new(
            vec![Atom {
                location: SpectralPoint::Finite(m),
                weight: Complex64::new(1.0, 0.0),
            }],
            Vec::new(),
        )
    }

    /// Point mass at infinity with the given weight.
    pub fn dirac_at_infinity(weight: Complex64) -> Self {
        MeasureAlpha {
            atoms: vec![Atom {
                location: SpectralPoint::AtInfinity,
                weight,
            }],
            density: Vec::new(),
        }
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, Complex64)>) -> Result<Self> {
        MeasureAlpha::new(
            atoms
                .into_iter()
                .map(|(m, w)| Atom {
                    location: SpectralPoint::Finite(m),
                    weight: w,
                })
                .collect(),
            Vec::new(),
        )
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn density(&self) -> &[DensitySample] {
        &self.density
    }

    pub fn has_infinity_atom(&self) -> bool {
        self.atoms
            .iter()
            .any(|a| a.location == SpectralPoint::AtInfinity)
    }

    /// |α|: atom weights in modulus plus the weighted modulus of the density.
    pub fn total_variation(&self) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.weight.norm()).sum();
        let dens: f64 = self
            .density
            .iter()
            .map(|s| s.quad_weight * s.value.norm())
            .sum();
        atoms + dens
    }

    /// Parse the text form: lines `atom <location|inf> <re> <im>` and
    /// `density <y> <weight> <re> <im>`; blank lines ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut density = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks[0] {
                "atom" => {
                    if toks.len() != 4 {
                        return Err(Error::parse(format!(
                            "atom lines carry 'atom <location|inf> <re> <im>', got {line:?}"
                        )));
                    }
                    let location = if toks[1] == "inf" {
                        SpectralPoint::AtInfinity
                    } else {
                        SpectralPoint::Finite(parse_f64(toks[1], line)?)
                    };
                    atoms.push(Atom {
                        location,
                        weight: Complex64::new(
                            parse_f64(toks[2], line)?,
                            parse_f64(toks[3], line)?,
                        ),
                    });
                }
                "density" => {
                    if toks.len() != 5 {
                        return Err(Error::parse(format!(
                            "density lines carry 'density <y> <weight> <re> <im>', got {line:?}"
                        )));
                    }
                    density.push(DensitySample {
                        location: parse_f64(toks[1], line)?,
                        quad_weight: parse_f64(toks[2], line)?,
                        value: Complex64::new(
                            parse_f64(toks[3], line)?,
                            parse_f64(toks[4], line)?,
                        ),
                    });
                }
                other => {
                    return Err(Error::parse(format!(
                        "unknown measure line kind {other:?} in {line:?}"
                    )));
                }
            }
        }
        MeasureAlpha::new(atoms, density)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in &self.atoms {
            match a.location {
                SpectralPoint::Finite(m) => out.push_str(&format!(
                    "atom {:.17e} {:.17e} {:.17e}\n",
                    m, a.weight.re, a.weight.im
                )),
                SpectralPoint::AtInfinity => out.push_str(&format!(
                    "atom inf {:.17e} {:.17e}\n",
                    a.weight.re, a.weight.im
                )),
            }
        }
        for s in &self.density {
            out.push_str(&format!(
                "density {:.17e} {:.17e} {:.17e} {:.17e}\n",
                s.location, s.quad_weight, s.value.re, s.value.im
            ));
        }
        out
    }
}

fn parse_f64(tok: &str, line: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| Error::parse(format!("bad number {tok:?} in {line:?}: {e}")))
}

/// Free OP form of `MeasureAlpha::total_variation`.
pub fn total_variation(alpha: &MeasureAlpha) -> f64 {
    alpha.total_variation()
}

/// Kernel 1 − m/√(m²+x), written as x/(√(m²+x)(√(m²+x)+m)) so that huge m
/// degrades gracefully to 0; the m = 0 branch fixes the (0,0) convention to 1.
fn w_kernel(m: f64, x: f64) -> f64 {
    if m == 0.0 {
        return 1.0;
    }
    let s = (m * m + x).sqrt();
    x / (s * (s + m))
}

/// Kernel 1/(√(x+m²)(√(x+m²)−m)) in the stable form (1 + m/√(x+m²))/x;
/// the m → ∞ limit 2/x falls out of the same expression.
fn r2_kernel(m: f64, x: f64) -> f64 {
    if m == 0.0 {
        return 1.0 / x;
    }
    // m/√(x+m²) = 1/√(1+x/m²); x/m² underflows to 0 for huge m, giving 2/x.
    let ratio = 1.0 / (1.0 + x / (m * m)).sqrt();
    (1.0 + ratio) / x
}

/// Φ(x) = ∫₀^∞ (1 − m/√(m²+x)) dα(m), defined for x ≥ 0.
///
/// Measures with an atom at infinity are rejected: the integrand's limit
/// there is 0, and silently dropping mass would make |α| bookkeeping lie.
pub fn phi_stieltjes_w(alpha: &MeasureAlpha, x: f64) -> Result<Complex64> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("phi_stieltjes_w needs x >= 0, got {x}")));
    }
    if alpha.has_infinity_atom() {
        return Err(Error::domain(
            "the 1 − m/√(m²+x) representation does not take atoms at infinity".to_string(),
        ));
    }
    Ok(stieltjes_sum(alpha, |m| w_kernel(m, x), 0.0))
}

/// Φ(x) = ∫₀^∞ dα(m)/√(x+m), defined for x > 0; no atoms at infinity.
pub fn phi_stieltjes_r1(alpha: &MeasureAlpha, x: f64) -> Result<Complex64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!(
            "phi_stieltjes_r1 needs x > 0 (the kernel is singular at an atom at 0 otherwise), got {x}"
        )));
    }
    if alpha.has_infinity_atom() {
        return Err(Error::domain(
            "the 1/√(x+m) representation does not take atoms at infinity".to_string(),
        ));
    }
    Ok(stieltjes_sum(alpha, |m| 1.0 / (x + m).sqrt(), 0.0))
}

/// Φ(x) = ∫_{[0,∞]} dα(m)/(√(x+m²)(√(x+m²)−m)) for x > 0; an atom at
/// infinity contributes its weight times the pointwise limit 2/x.
pub fn phi_stieltjes_r2(alpha: &MeasureAlpha, x: f64) -> Result<Complex64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("phi_stieltjes_r2 needs x > 0, got {x}")));
    }
    Ok(stieltjes_sum(alpha, |m| r2_kernel(m, x), 2.0 / x))
}

fn stieltjes_sum<F: Fn(f64) -> f64>(
    alpha: &MeasureAlpha,
    kernel: F,
    at_infinity: f64,
) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for a in alpha.atoms() {
        let k = match a.location {
            SpectralPoint::Finite(m) => kernel(m),
            SpectralPoint::AtInfinity => at_infinity,
        };
        acc += a.weight * k;
    }
    for s in alpha.density() {
        acc += s.value * (s.quad_weight * kernel(s.location));
    }
    acc
}

fn multiplier_quad_config() -> QuadratureConfig {
    // The Bessel kernels are themselves computed by quadrature to ~1e-10, so
    // chasing tighter outer tolerances only fights that noise floor.
    QuadratureConfig::with_rel_tol(1e-9)
}

fn require_lambda_positive(name: &str, lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("{name} needs lambda > 0, got {lambda}")));
    }
    Ok(())
}

fn require_admissible(spec: &DiffusionSpec) -> Result<()> {
    if !spec.is_admissible()? {
        return Err(Error::precondition(
            "diffusion spec is not admissible (scale-function conditions fail)".to_string(),
        ));
    }
    Ok(())
}

/// Characteristic y-extent of the kernel, used to seed the half-line split.
fn kernel_scale(spec: &DiffusionSpec, lambda: f64) -> f64 {
    match spec {
        DiffusionSpec::BmDrift { sigma, m } => {
            let theta = m / sigma;
            let beta = (lambda + theta * theta).sqrt();
            // 1/decay-rate = σ/(β−θ), computed cancellation-free.
            sigma * (beta + theta) / lambda
        }
        DiffusionSpec::Bessel { .. } => 1.0 / lambda.sqrt(),
        DiffusionSpec::Tabulated(t) => 0.25 * t.y_max(),
    }
}

fn half_line_multiplier_quad<F: Fn(f64) -> f64>(
    spec: &DiffusionSpec,
    lambda: f64,
    f: F,
) -> Result<f64> {
    let cfg = multiplier_quad_config();
    match spec.kernel_support_end() {
        // Truncated kernels vanish beyond y_max, so the integral does too.
        Some(end) => quad::integrate(&f, 0.0, end, &cfg),
        None => quad::integrate_zero_to_inf_split(&f, kernel_scale(spec, lambda), &cfg),
    }
}

fn green_at(spec: &DiffusionSpec, start: Option<f64>, z: f64) -> f64 {
    let g = match start {
        None => spec.green_inf(z),
        Some(y0) => spec.green(y0, z),
    };
    g.unwrap_or(f64::NAN)
}

fn require_start_height(name: &str, y0: f64) -> Result<()> {
    if !(y0 > 0.0) || !y0.is_finite() {
        return Err(Error::domain(format!(
            "{name} needs a finite starting height > 0, got {y0}"
        )));
    }
    Ok(())
}

fn phi_extension_impl(spec: &DiffusionSpec, lambda: f64, start: Option<f64>) -> Result<f64> {
    require_admissible(spec)?;
    half_line_multiplier_quad(spec, lambda, |y| {
        if y <= 0.0 {
            return 0.0;
        }
        let g = green_at(spec, start, y);
        let dk = spec.dk_dy(y, lambda).unwrap_or(f64::NAN);
        let a = spec.coeff_a(y);
        g * dk * dk * a * a
    })
}

/// Extension multiplier Φ(λ) = ∫₀^∞ G(∞,y)·(∂_yK(y,λ))²·a(y)² dy.
pub fn phi_extension(spec: &DiffusionSpec, lambda: f64) -> Result<f64> {
    require_lambda_positive("phi_extension", lambda)?;
    phi_extension_impl(spec, lambda, None)
}

/// Φ with the occupation measure of a diffusion started at height y0
/// instead of the y0 → ∞ limit: G(y0, ·) replaces G(∞, ·).  This is the
/// exact multiplier the path-sampling estimators reconstruct at finite y0;
/// it increases to `phi_extension` as y0 grows.
pub fn phi_extension_from_height(spec: &DiffusionSpec, lambda: f64, y0: f64) -> Result<f64> {
    require_lambda_positive("phi_extension_from_height", lambda)?;
    require_start_height("phi_extension_from_height", y0)?;
    phi_extension_impl(spec, lambda, Some(y0))
}

/// Alternative form Φ(λ) = 1/2 − λ∫₀^∞ G(∞,y)·K(y,λ)² dy.
pub fn phi_alt(spec: &DiffusionSpec, lambda: f64) -> Result<f64> {
    require_lambda_positive("phi_alt", lambda)?;
    Ok(0.5 - lambda * s_symbol(spec, lambda)?)
}

/// First-order scalar symbol t(λ) = ∫₀^∞ a(y)·G(∞,y)·∂_yK(y,λ)·K(y,λ) dy.
pub fn t_symbol(spec: &DiffusionSpec, lambda: f64) -> Result<f64> {
    require_lambda_positive("t_symbol", lambda)?;
    t_symbol_impl(spec, lambda, None)
}

/// t with G(y0, ·) in place of G(∞, ·); see `phi_extension_from_height`.
pub fn t_symbol_from_height(spec: &DiffusionSpec, lambda: f64, y0: f64) -> Result<f64> {
    require_lambda_positive("t_symbol_from_height", lambda)?;
    require_start_height("t_symbol_from_height", y0)?;
    t_symbol_impl(spec, lambda, Some(y0))
}

fn t_symbol_impl(spec: &DiffusionSpec, lambda: f64, start: Option<f64>) -> Result<f64> {
    require_admissible(spec)?;
    half_line_multiplier_quad(spec, lambda, |y| {
        if y <= 0.0 {
            return 0.0;
        }
        let g = green_at(spec, start, y);
        let k = spec.kernel_k(y, lambda).unwrap_or(f64::NAN);
        let dk = spec.dk_dy(y, lambda).unwrap_or(f64::NAN);
        spec.coeff_a(y) * g * k * dk
    })
}

/// Second-order scalar symbol s(λ) = ∫₀^∞ G(∞,y)·K(y,λ)² dy.
pub fn s_symbol(spec: &DiffusionSpec, lambda: f64) -> Result<f64> {
    require_lambda_positive("s_symbol", lambda)?;
    s_symbol_impl(spec, lambda, None)
}

/// s with G(y0, ·) in place of G(∞, ·); see `phi_extension_from_height`.
pub fn s_symbol_from_height(spec: &DiffusionSpec, lambda: f64, y0: f64) -> Result<f64> {
    require_lambda_positive("s_symbol_from_height", lambda)?;
    require_start_height("s_symbol_from_height", y0)?;
    s_symbol_impl(spec, lambda, Some(y0))
}

fn s_symbol_impl(spec: &DiffusionSpec, lambda: f64, start: Option<f64>) -> Result<f64> {
    require_admissible(spec)?;
    half_line_multiplier_quad(spec, lambda, |y| {
        if y <= 0.0 {
            return 0.0;
        }
        let g = green_at(spec, start, y);
        let k = spec.kernel_k(y, lambda).unwrap_or(f64::NAN);
        g * k * k
    })
}

/// Closed form of Φ where one exists (None for tabulated coefficients).
pub fn phi_closed_form(spec: &DiffusionSpec, lambda: f64) -> Result<Option<f64>> {
    require_lambda_positive("phi_closed_form", lambda)?;
    Ok(match spec {
        DiffusionSpec::BmDrift { sigma, m } => {
            let theta = m / sigma;
            let beta = (lambda + theta * theta).sqrt();
            Some(0.25 * (1.0 - theta / beta))
        }
        DiffusionSpec::Bessel { s } => Some(1.0 / (2.0 * (1.0 + 2.0 * s))),
        DiffusionSpec::Tabulated(_) => None,
    })
}

/// Closed form of t where one exists.
pub fn t_symbol_closed_form(spec: &DiffusionSpec, lambda: f64) -> Result<Option<f64>> {
    require_lambda_positive("t_symbol_closed_form", lambda)?;
    Ok(match spec {
        DiffusionSpec::BmDrift { sigma, m } => {
            let theta = m / sigma;
            let beta = (lambda + theta * theta).sqrt();
            Some(-0.25 / beta)
        }
        DiffusionSpec::Bessel { s } => {
            Some(-1.0 / (4.0 * bessel_riesz_constant(*s)?) / lambda.sqrt())
        }
        DiffusionSpec::Tabulated(_) => None,
    })
}

/// Closed form of s where one exists.
pub fn s_symbol_closed_form(spec: &DiffusionSpec, lambda: f64) -> Result<Option<f64>> {
    require_lambda_positive("s_symbol_closed_form", lambda)?;
    Ok(match spec {
        DiffusionSpec::BmDrift { sigma, m } => {
            let theta = m / sigma;
            let beta = (lambda + theta * theta).sqrt();
            // 1/(4β(β−θ)) with β−θ = λ/(β+θ) to dodge cancellation.
            Some((beta + theta) / (4.0 * beta * lambda))
        }
        DiffusionSpec::Bessel { s } => Some(s / (2.0 * s + 1.0) / lambda),
        DiffusionSpec::Tabulated(_) => None,
    })
}

/// 2^{8s} s² Γ(s)⁴ / (4π²Γ(4s)): the loss factor of the first-order Riesz
/// bound obtained through the Bessel extension; equals 1 at s = 1/2.
pub fn bessel_riesz_constant(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::domain(format!("s must lie in (0, 1), got {s}")));
    }
    let g = special::gamma(s)?;
    let g4 = special::gamma(4.0 * s)?;
    Ok((8.0 * s * std::f64::consts::LN_2).exp() * s * s * g.powi(4)
        / (4.0 * std::f64::consts::PI.powi(2) * g4))
}

/// The named L^p constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PConstants {
    pub p_star: f64,
    /// p* − 1: the differential-subordination (martingale-transform) constant.
    pub burkholder: f64,
    /// cot(π/(2p*)): the orthogonal-martingale constant.
    pub choi_cot: f64,
    /// Large-p asymptotic p/2 + ½log((1+e⁻²)/2) + α₂/p.
    pub c_p_asymptotic: f64,
    /// max(1, p*/2 − 1): lower envelope for c_p.
    pub choi_lower: f64,
    /// p*/2: upper envelope for c_p.
    pub choi_upper: f64,
}

pub fn constants(p: f64) -> Result<PConstants> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::domain(format!("constants need p > 1, got {p}")));
    }
    let p_star = p.max(p / (p - 1.0));
    let l = ((1.0 + (-2.0f64).exp()) / 2.0).ln();
    let q = (-2.0f64).exp() / (1.0 + (-2.0f64).exp());
    let alpha2 = l * l + 0.5 * l - 2.0 * q * q;
    Ok(PConstants {
        p_star,
        burkholder: p_star - 1.0,
        choi_cot: 1.0 / (std::f64::consts::PI / (2.0 * p_star)).tan(),
        c_p_asymptotic: 0.5 * p_star + 0.5 * l + alpha2 / p_star,
        choi_lower: (0.5 * p_star - 1.0).max(1.0),
        choi_upper: 0.5 * p_star,
    })
}

/// How a multiplier symbol is evaluated.
#[derive(Debug, Clone)]
pub enum MultiplierKind {
    /// Φ by direct quadrature of the extension integral.
    ExtensionQuadrature(DiffusionSpec),
    /// Φ via the family's closed form (rejects tabulated specs).
    ExtensionClosedForm(DiffusionSpec),
    StieltjesW(MeasureAlpha),
    StieltjesRiesz1(MeasureAlpha),
    StieltjesRiesz2(MeasureAlpha),
}

/// A scalar spectral multiplier λ ↦ Φ(λ) with a recorded bound on |Φ|.
///
/// For the extension and Stieltjes-W kinds `sup_bound` holds for every
/// λ ≥ 0; for the Riesz kinds (singular as λ → 0) it is the bound on the
/// range λ ≥ 1, which is what integer-frequency torus spectra exercise once
/// the zero mode is handled by policy.
#[derive(Debug, Clone)]
pub struct MultiplierSymbol {
    pub kind: MultiplierKind,
    pub sup_bound: f64,
}

impl MultiplierSymbol {
    pub fn extension_quadrature(spec: DiffusionSpec) -> Result<Self> {
        require_admissible(&spec)?;
        // 0 < Φ = 1/2 − λ∫G K² ≤ 1/2.
        Ok(MultiplierSymbol {
            kind: MultiplierKind::ExtensionQuadrature(spec),
            sup_bound: 0.5,
        })
    }

    pub fn extension_closed_form(spec: DiffusionSpec) -> Result<Self> {
        if phi_closed_form(&spec, 1.0)?.is_none() {
            return Err(Error::precondition(
                "no closed-form multiplier for tabulated coefficients".to_string(),
            ));
        }
        Ok(MultiplierSymbol {
            kind: MultiplierKind::ExtensionClosedForm(spec),
            sup_bound: 0.5,
        })
    }

    pub fn stieltjes_w(alpha: MeasureAlpha) -> Result<Self> {
        if alpha.has_infinity_atom() {
            return Err(Error::domain(
                "the 1 − m/√(m²+x) representation does not take atoms at infinity".to_string(),
            ));
        }
        let sup_bound = alpha.total_variation();
        Ok(MultiplierSymbol {
            kind: MultiplierKind::StieltjesW(alpha),
            sup_bound,
        })
    }

    pub fn stieltjes_r1(alpha: MeasureAlpha) -> Result<Self> {
        if alpha.has_infinity_atom() {
            return Err(Error::domain(
                "the 1/√(x+m) representation does not take atoms at infinity".to_string(),
            ));
        }
        // Kernel decreasing in x, so for λ ≥ 1 the worst case is x = 1.
        let sup_bound = variation_against(&alpha, |m| 1.0 / (1.0 + m).sqrt(), 0.0);
        Ok(MultiplierSymbol {
            kind: MultiplierKind::StieltjesRiesz1(alpha),
            sup_bound,
        })
    }

    pub fn stieltjes_r2(alpha: MeasureAlpha) -> Result<Self> {
        let sup_bound = variation_against(&alpha, |m| r2_kernel(m, 1.0), 2.0);
        Ok(MultiplierSymbol {
            kind: MultiplierKind::StieltjesRiesz2(alpha),
            sup_bound,
        })
    }

    pub fn eval(&self, lambda: f64) -> Result<Complex64> {
        match &self.kind {
            MultiplierKind::ExtensionQuadrature(spec) => {
                Ok(Complex64::new(phi_extension(spec, lambda)?, 0.0))
            }
            MultiplierKind::ExtensionClosedForm(spec) => Ok(Complex64::new(
                phi_closed_form(spec, lambda)?.expect("validated at construction"),
                0.0,
            )),
            MultiplierKind::StieltjesW(alpha) => phi_stieltjes_w(alpha, lambda),
            MultiplierKind::StieltjesRiesz1(alpha) => phi_stieltjes_r1(alpha, lambda),
            MultiplierKind::StieltjesRiesz2(alpha) => phi_stieltjes_r2(alpha, lambda),
        }
    }
}

fn variation_against<F: Fn(f64) -> f64>(
    alpha: &MeasureAlpha,
    kernel: F,
    at_infinity: f64,
) -> f64 {
    let atoms: f64 = alpha
        .atoms()
        .iter()
        .map(|a| {
            a.weight.norm()
                * match a.location {
                    SpectralPoint::Finite(m) => kernel(m),
                    SpectralPoint::AtInfinity => at_infinity,
                }
        })
        .sum();
    let dens: f64 = alpha
        .density()
        .iter()
        .map(|s| s.quad_weight * s.value.norm() * kernel(s.location))
        .sum();
    atoms + dens
}
