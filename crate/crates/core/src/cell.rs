//! Cell problems on the torus and the two corrector cascades.
//!
//! In the sub-diffusive regime (`α < 2`) the correctors depend on `(z, y)`
//! and solve `(a χ^j_z)_z = -L_y χ^{j-1}`. In the super-diffusive regime
//! (`α > 2`) the coefficient is first averaged in `y`, and the
//! environment enters through the Poisson correctors `κ, γ, ζ`.
//!
//! ```
//! use homoscale::cell::solve_cell;
//! use homoscale::grid::{TorusField, TorusGrid};
//!
//! let g = TorusGrid::new(64).unwrap();
//! let a = TorusField::from_fn(&g, |z| 2.0 + (2.0 * std::f64::consts::PI * z).sin());
//! let chi = solve_cell(&a, &a.derivative().scale(-1.0)).unwrap();
//! let flux = &a * &chi.derivative().shift(1.0);
//! assert!(flux.values().iter().all(|v| (v - 3f64.sqrt()).abs() < 1e-10));
//! ```

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::DiffusionModel;
use crate::error::{Error, Result};
use crate::grid::{TorusField, TorusGrid, YGrid, ZYField};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Maximum cascade depth.
pub const MAX_DEPTH: usize = 4;

/// One term `(c cos 2πkz + s sin 2πkz) · Σ_j t_j tanh(y)^j` of a custom coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
    pub tanh_powers: Vec<f64>,
}

/// Coefficient presets `a(z, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `a = value`.
    Const { value: f64 },
    /// `a = base + amplitude sin 2πz`.
    ZOnly { base: f64, amplitude: f64 },
    /// `a = base + amplitude tanh y`.
    YOnly { base: f64, amplitude: f64 },
    /// `a = base + amplitude sin(2πz) (shift + tanh y)`.
    Product {
        base: f64,
        amplitude: f64,
        #[serde(default)]
        shift: f64,
    },
    /// `a = base + Σ terms`.
    CustomFourier { base: f64, terms: Vec<FourierTerm> },
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        Self::reference()
    }
}

impl CoefficientSpec {
    /// `a = 2 + sin(2πz) tanh(y)`.
    pub fn reference() -> Self {
        Self::Product { base: 2.0, amplitude: 1.0, shift: 0.0 }
    }

    pub fn eval(&self, z: f64, y: f64) -> f64 {
        match self {
            Self::Const { value } => *value,
            Self::ZOnly { base, amplitude } => base + amplitude * (TWO_PI * z).sin(),
            Self::YOnly { base, amplitude } => base + amplitude * y.tanh(),
            Self::Product { base, amplitude, shift } => base + amplitude * (TWO_PI * z).sin() * (shift + y.tanh()),
            Self::CustomFourier { base, terms } => {
                let t = y.tanh();
                base + terms
                    .iter()
                    .map(|term| {
                        let (s, c) = (TWO_PI * term.k as f64 * z).sin_cos();
                        let poly = term.tanh_powers.iter().rev().fold(0.0, |acc, p| acc * t + p);
                        (term.cos * c + term.sin * s) * poly
                    })
                    .sum::<f64>()
            }
        }
    }

    pub fn is_y_independent(&self) -> bool {
        match self {
            Self::Const { .. } | Self::ZOnly { .. } => true,
            Self::YOnly { amplitude, .. } => *amplitude == 0.0,
            Self::Product { amplitude, .. } => *amplitude == 0.0,
            Self::CustomFourier { terms, .. } => terms.iter().all(|t| t.tanh_powers.iter().skip(1).all(|p| *p == 0.0)),
        }
    }
}

/// `a(z, y)` sampled on the product grid with its ellipticity constant.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    pub spec: CoefficientSpec,
    pub values: ZYField,
    pub lambda: f64,
}

impl CoefficientField {
    pub fn new(spec: CoefficientSpec, torus: &TorusGrid, ygrid: &Arc<YGrid>) -> Result<Self> {
        let values = ZYField::from_fn(torus, ygrid, |z, y| spec.eval(z, y));
        let (lo, hi) = values.values().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::NotElliptic(format!("coefficient range [{lo}, {hi}]")));
        }
        // Bounds over all y, not only the window.
        let (mut lo_all, mut hi_all) = (lo, hi);
        for i in 0..torus.len() {
            for y in [-1e3, 1e3] {
                let v = spec.eval(torus.node(i), y);
                lo_all = lo_all.min(v);
                hi_all = hi_all.max(v);
            }
        }
        if !(lo_all > 0.0) {
            return Err(Error::NotElliptic(format!("coefficient reaches {lo_all} outside the window")));
        }
        let lambda = hi_all.max(1.0 / lo_all);
        Ok(Self { spec, values, lambda })
    }

    pub fn torus(&self) -> &TorusGrid {
        self.values.torus()
    }

    pub fn a_bar(&self) -> TorusField {
        if self.spec.is_y_independent() {
            return self.values.slice(0);
        }
        self.values.y_average()
    }
}

/// Zero-mean periodic `v` with `(a v')' = f`.
pub fn solve_cell(a: &TorusField, f: &TorusField) -> Result<TorusField> {
    let mean = f.mean();
    if mean.abs() > 1e-10 * f.max_abs().max(1.0) {
        return Err(Error::Incompatible(mean));
    }
    let flux = f.shift(-mean).antiderivative()?;
    let inv = a.map(|v| 1.0 / v);
    let c = -(&flux * &inv).mean() / inv.mean();
    let slope = &flux.shift(c) * &inv;
    let s_mean = slope.mean();
    slope.shift(-s_mean).antiderivative()
}

/// `(a v_z)_z` on a torus field.
pub fn div_form(a: &TorusField, v: &TorusField) -> TorusField {
    (a * &v.derivative()).derivative()
}

/// `(a v_z)_z` slice by slice.
pub fn div_form_zy(a: &ZYField, v: &ZYField) -> ZYField {
    (&*a * &v.dz()).dz()
}

/// Generator `L` applied along `y` at every `z`-node.
pub fn generator_zy(model: &DiffusionModel, v: &ZYField) -> ZYField {
    v.map_profiles(|_, p| model.generator(&p))
}

/// Solve `L u = rhs` at every `z`-node.
pub fn poisson_zy(model: &DiffusionModel, rhs: &ZYField, context: &str) -> Result<ZYField> {
    let profiles: Vec<Vec<f64>> = (0..rhs.nz())
        .into_par_iter()
        .map(|iz| {
            model
                .solve_poisson(&rhs.profile(iz))
                .map(|s| s.values)
                .map_err(|e| match e {
                    Error::NotCentered { integral, .. } => Error::NotCentered { context: format!("{context}, z-node {iz}"), integral },
                    other => other,
                })
        })
        .collect::<Result<_>>()?;
    ZYField::from_profiles(rhs.torus(), rhs.ygrid(), profiles)
}

/// Solve `(a v_z)_z = f` on every `y`-slice.
pub fn cell_zy(a: &ZYField, f: &ZYField) -> Result<ZYField> {
    let slices: Vec<TorusField> = (0..a.ny())
        .into_par_iter()
        .map(|iy| solve_cell(&a.slice(iy), &f.slice(iy)))
        .collect::<Result<_>>()?;
    ZYField::from_slices(a.torus(), a.ygrid(), slices)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Sub,
    Super,
}

impl Regime {
    pub fn of(alpha: f64) -> Self {
        if alpha < 2.0 {
            Self::Sub
        } else {
            Self::Super
        }
    }
}

/// Sub-diffusive correctors `χ^0 … χ^J` on `T × Y`.
#[derive(Clone, Debug)]
pub struct SubCorrectors {
    pub chi: Vec<ZYField>,
}

/// Super-diffusive cascade. Lists are indexed by the superscript; `eta[0]`,
/// `zeta[0]` and `h[0]` are zero placeholders.
#[derive(Clone, Debug)]
pub struct SuperCorrectors {
    pub a_bar: TorusField,
    pub a_eff: f64,
    pub chi: Vec<TorusField>,
    pub f: Vec<ZYField>,
    pub kappa: Vec<ZYField>,
    pub tau: Vec<TorusField>,
    pub gamma: Vec<ZYField>,
    pub g: Vec<ZYField>,
    pub h: Vec<ZYField>,
    pub eta: Vec<TorusField>,
    pub zeta: Vec<ZYField>,
    pub c_overrides: Vec<f64>,
    pub depth: usize,
}

#[derive(Clone, Debug)]
pub enum CorrectorSet {
    Sub(SubCorrectors),
    Super(SuperCorrectors),
}

impl CorrectorSet {
    pub fn regime(&self) -> Regime {
        match self {
            Self::Sub(_) => Regime::Sub,
            Self::Super(_) => Regime::Super,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Self::Sub(s) => s.chi.len() - 1,
            Self::Super(s) => s.depth,
        }
    }

    pub fn as_sub(&self) -> Option<&SubCorrectors> {
        match self {
            Self::Sub(s) => Some(s),
            Self::Super(_) => None,
        }
    }

    pub fn as_super(&self) -> Option<&SuperCorrectors> {
        match self {
            Self::Super(s) => Some(s),
            Self::Sub(_) => None,
        }
    }
}

/// `χ^0` from `(a χ_z)_z = -a_z`, then `(a χ^j_z)_z = -L_y χ^{j-1}`.
pub fn build_sub_cascade(a: &CoefficientField, model: &DiffusionModel, depth: usize) -> Result<CorrectorSet> {
    if depth > MAX_DEPTH {
        return Err(Error::CascadeDepthExceeded { requested: depth, max: MAX_DEPTH });
    }
    let av = &a.values;
    let mut chi = vec![cell_zy(av, &av.dz().scale(-1.0))?];
    for j in 1..=depth {
        let rhs = generator_zy(model, &chi[j - 1]).scale(-1.0);
        chi.push(cell_zy(av, &rhs)?);
    }
    Ok(CorrectorSet::Sub(SubCorrectors { chi }))
}

fn cell_bar(a_bar: &TorusField, rhs: &TorusField) -> Result<TorusField> {
    solve_cell(a_bar, &rhs.shift(-rhs.mean()))
}

/// `A v - Ā v = ((a - ā) v_z)_z` for a `z`-only `v`.
fn a_minus_abar(a_minus: &ZYField, v: &TorusField) -> ZYField {
    a_minus.mul_torus(&v.derivative()).dz()
}

/// Centered part `F - F̄` along `y`.
fn fluctuation(f: &ZYField) -> ZYField {
    f.sub_torus(&f.y_average())
}

/// The full super-diffusive cascade to depth `K`.
pub fn build_super_cascade(a: &CoefficientField, model: &DiffusionModel, depth: usize, c_overrides: &[f64]) -> Result<CorrectorSet> {
    if depth > MAX_DEPTH {
        return Err(Error::CascadeDepthExceeded { requested: depth, max: MAX_DEPTH });
    }
    if depth < 1 {
        return Err(Error::DepthInsufficient { available: depth, required: 1 });
    }
    let av = &a.values;
    let a_bar = a.a_bar();
    let a_minus = av.sub_torus(&a_bar);
    let chi0 = cell_bar(&a_bar, &-&a_bar.derivative())?;
    let a_eff = (&a_bar * &chi0.derivative().shift(1.0)).mean();
    let c_at = |i: usize| c_overrides.get(i - 1).copied().unwrap_or(0.0);

    let mut chi = vec![chi0];
    let mut f = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let chik = ZYField::from_torus(&chi[k], av.ygrid());
        let div = (&*av * &chik).dz();
        let grad = av.mul_torus(&chi[k].derivative());
        let base = if k == 0 { av.map(|v| v - a_eff) } else { av.map(|v| v - a_eff).mul_torus(&chi[k - 1]) };
        let fk = &(&base + &grad) + &div;
        let fbar = fk.y_average();
        let mut rhs = fbar.shift(-fbar.mean());
        for j in 1..k {
            rhs = &rhs + &chi[j - 1].scale(c_at(k - j));
        }
        chi.push(cell_bar(&a_bar, &rhs)?);
        f.push(fk);
    }

    let a_op = |v: &ZYField| div_form_zy(av, v);
    let mut kappa = Vec::with_capacity(depth + 1);
    let k0_rhs = &a_minus.dz() + &a_minus.mul_torus(&chi[0].derivative()).dz();
    kappa.push(poisson_zy(model, &k0_rhs, "kappa0")?);
    for k in 0..depth {
        let rhs = &a_minus_abar(&a_minus, &chi[k + 1]) + &fluctuation(&f[k]);
        kappa.push(poisson_zy(model, &rhs, &format!("kappa{}", k + 1))?);
    }

    let mut tau = Vec::with_capacity(depth + 1);
    let mut gamma: Vec<ZYField> = Vec::with_capacity(depth + 1);
    for k in 0..=depth {
        let prev = if k == 0 { &kappa[0] } else { &gamma[k - 1] };
        let a_prev = a_op(prev);
        let tk = cell_bar(&a_bar, &-&a_prev.y_average())?;
        let rhs = &a_minus_abar(&a_minus, &tk) + &fluctuation(&a_prev);
        gamma.push(poisson_zy(model, &rhs, &format!("gamma{k}"))?);
        tau.push(tk);
    }

    let ygrid = av.ygrid();
    let torus = av.torus();
    let mut g = Vec::with_capacity(depth + 1);
    let mut h = vec![ZYField::zeros(torus, ygrid)];
    for k in 0..=depth {
        let base = if k == 0 {
            &kappa[0] + &ZYField::from_torus(&tau[0], ygrid)
        } else {
            &gamma[k - 1] + &ZYField::from_torus(&tau[k], ygrid)
        };
        let grad = &*av * &base.dz();
        let div = (&*av * &base).dz();
        if k == 0 {
            g.push(&grad + &div);
        } else {
            g.push(grad);
            h.push(div);
        }
    }

    let mut eta = vec![TorusField::zeros(torus)];
    let mut zeta = vec![ZYField::zeros(torus, ygrid)];
    for k in 1..=depth {
        let prev = if k == 1 { &kappa[1] } else { &zeta[k - 1] };
        let a_prev = a_op(prev);
        let gbar = g[k - 1].y_average();
        let mut rhs = &-&a_prev.y_average() - &gbar.shift(-gbar.mean());
        if k >= 2 {
            rhs = &rhs - &h[k - 1].y_average();
        }
        let ek = cell_bar(&a_bar, &rhs)?;
        let mut zrhs = &(&a_minus_abar(&a_minus, &ek) + &fluctuation(&a_prev)) + &fluctuation(&g[k - 1]);
        if k >= 2 {
            zrhs = &zrhs + &fluctuation(&h[k - 1]);
        }
        zeta.push(poisson_zy(model, &zrhs, &format!("zeta{k}"))?);
        eta.push(ek);
    }

    Ok(CorrectorSet::Super(SuperCorrectors {
        a_bar,
        a_eff,
        chi,
        f,
        kappa,
        tau,
        gamma,
        g,
        h,
        eta,
        zeta,
        c_overrides: c_overrides.to_vec(),
        depth,
    }))
}

/// The two candidate super-diffusive variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSuper {
    /// `overline(⟨χ^0 κ^0_y q⟩²)`.
    pub q_weighted: f64,
    /// `overline(⟨χ^0 κ^0_y⟩² q)`; the operative value.
    pub sigma_weighted: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EffectiveConstants {
    pub regime: Regime,
    pub a_eff: f64,
    /// `a_k_eff[k]` for `k ≥ 1`; entry 0 repeats `a_eff`.
    pub a_k_eff: Vec<f64>,
    /// `ua_k_eff[k]` for `k ≥ 1`; entry 0 is zero.
    pub ua_k_eff: Vec<f64>,
    pub lambda_total: f64,
    pub lambda_k: Vec<f64>,
    pub mean_a_k: Vec<Vec<f64>>,
    pub lambda_super: Option<LambdaSuper>,
    /// Torus integrals of the pure-divergence parts, expected to vanish.
    pub divergence_defects: Vec<f64>,
    /// `⟨f̄^0⟩`, expected to vanish.
    pub f0_bar_mean: f64,
}

/// Doubly averaged harmonic mean `overline(⟨1/a⟩⁻¹)`.
pub fn harmonic_mean(a: &CoefficientField) -> f64 {
    let inv = a.values.map(|v| 1.0 / v);
    let per_y: Vec<f64> = inv.z_mean().iter().map(|m| 1.0 / m).collect();
    a.values.ygrid().average(&per_y)
}

/// Every effective constant generated by the cascade.
pub fn effective_constants(correctors: &CorrectorSet, a: &CoefficientField, model: &DiffusionModel) -> Result<EffectiveConstants> {
    let av = &a.values;
    match correctors {
        CorrectorSet::Sub(s) => {
            let mut a_k_eff = Vec::new();
            let mut mean_a_k = Vec::new();
            let mut lambda_k = Vec::new();
            let mut divergence_defects = Vec::new();
            for (k, chik) in s.chi.iter().enumerate() {
                let grad = &*av * &chik.dz();
                let div = (&*av * chik).dz();
                divergence_defects.push(div.double_mean());
                let hat = if k == 0 { &(&grad + &div) + av } else { &grad + &div };
                let c = hat.double_mean();
                let profile: Vec<f64> = hat.z_mean().iter().map(|v| v - c).collect();
                model.check_centered(&profile, &format!("mean a^{k}"))?;
                lambda_k.push(model.clt_variance(&profile)?);
                a_k_eff.push(c);
                mean_a_k.push(profile);
            }
            Ok(EffectiveConstants {
                regime: Regime::Sub,
                a_eff: a_k_eff[0],
                ua_k_eff: vec![0.0; a_k_eff.len()],
                lambda_total: lambda_k[0],
                a_k_eff,
                lambda_k,
                mean_a_k,
                lambda_super: None,
                divergence_defects,
                f0_bar_mean: 0.0,
            })
        }
        CorrectorSet::Super(s) => {
            let ygrid = av.ygrid();
            let mut a_k_eff = vec![s.a_eff, s.g[0].double_mean()];
            for k in 2..=s.depth + 1 {
                let sum = &ZYField::from_torus(&s.tau[k - 1], ygrid) + &s.gamma[k - 2];
                a_k_eff.push((&*av * &sum.dz()).double_mean());
            }
            let mut ua_k_eff = vec![0.0];
            for k in 1..=s.depth {
                ua_k_eff.push(s.f[k].y_average().mean());
            }
            let mut divergence_defects = Vec::new();
            for k in 0..=s.depth {
                let sum = &ZYField::from_torus(&s.tau[k], ygrid) + if k == 0 { &s.kappa[0] } else { &s.gamma[k - 1] };
                divergence_defects.push((&*av * &sum).dz().double_mean());
            }
            let ls = lambda_super(s, model);
            Ok(EffectiveConstants {
                regime: Regime::Super,
                a_eff: s.a_eff,
                a_k_eff,
                ua_k_eff,
                lambda_total: ls.sigma_weighted,
                lambda_k: Vec::new(),
                mean_a_k: Vec::new(),
                lambda_super: Some(ls),
                divergence_defects,
                f0_bar_mean: s.f[0].y_average().mean(),
            })
        }
    }
}

/// Both super-diffusive variance candidates.
pub fn lambda_super(s: &SuperCorrectors, model: &DiffusionModel) -> LambdaSuper {
    let ky = s.kappa[0].dy();
    let pairing = ky.mul_torus(&s.chi[0]).z_mean();
    let q = model.q_nodes();
    let ygrid = model.ygrid();
    let vq: Vec<f64> = pairing.iter().zip(q).map(|(p, q)| (p * q).powi(2)).collect();
    let vs: Vec<f64> = pairing.iter().zip(q).map(|(p, q)| p * p * q).collect();
    LambdaSuper { q_weighted: ygrid.average(&vq), sigma_weighted: ygrid.average(&vs) }
}

/// One audited equation: `value` is the sup-norm of `lhs - rhs`, `scale`
/// the sup-norm of the right-hand side.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Residual {
    pub equation: String,
    pub value: f64,
    pub scale: f64,
}

impl Residual {
    pub(crate) fn new(equation: impl Into<String>, value: f64, scale: f64) -> Self {
        Self { equation: equation.into(), value, scale }
    }

    /// `value / max(1, scale)`.
    pub fn relative(&self) -> f64 {
        self.value / self.scale.max(1.0)
    }

    pub(crate) fn torus(equation: impl Into<String>, lhs: &TorusField, rhs: &TorusField) -> Self {
        Self::new(equation, (lhs - rhs).max_abs(), rhs.max_abs())
    }

    pub(crate) fn interior(equation: impl Into<String>, lhs: &ZYField, rhs: &ZYField) -> Self {
        Self::new(equation, (lhs - rhs).max_abs_interior(), rhs.max_abs_interior())
    }

    /// A mean that should vanish, measured against the field's magnitude.
    pub(crate) fn zero_mean(name: &str, value: f64, magnitude: f64) -> Self {
        Self::new(format!("zero mean {name}"), value, magnitude)
    }
}

/// Residuals of every sub-diffusive corrector equation.
pub fn audit_sub(a: &CoefficientField, model: &DiffusionModel, s: &SubCorrectors) -> Vec<Residual> {
    let av = &a.values;
    let mut out = Vec::new();
    let flux = av.zip_map(&s.chi[0].dz(), |a, c| a * (1.0 + c));
    out.push(Residual::new("sub chi0: (a(1+chi0_z))_z = 0", flux.dz().max_abs(), av.dz().max_abs()));
    for j in 1..s.chi.len() {
        let rhs = generator_zy(model, &s.chi[j - 1]).scale(-1.0);
        out.push(Residual::interior(format!("sub chi{j}: (a chi{j}_z)_z = -L chi{}", j - 1), &div_form_zy(av, &s.chi[j]), &rhs));
    }
    for (j, c) in s.chi.iter().enumerate() {
        out.push(Residual::zero_mean(&format!("chi{j}"), c.z_mean().iter().fold(0.0, |m, v| m.max(v.abs())), c.max_abs_interior()));
    }
    out
}

/// Residuals of every super-diffusive corrector equation.
pub fn audit_super(a: &CoefficientField, model: &DiffusionModel, s: &SuperCorrectors) -> Vec<Residual> {
    let av = &a.values;
    let ygrid = av.ygrid();
    let abar = &s.a_bar;
    let a_minus = av.sub_torus(abar);
    let l = |v: &ZYField| generator_zy(model, v);
    let bar_op = |v: &TorusField| div_form(abar, v);
    let mut out = Vec::new();
    out.push(Residual::torus("super chi0: (abar chi0_z)_z = -abar_z", &bar_op(&s.chi[0]), &-&abar.derivative()));
    for k in 0..=s.depth {
        let fbar = s.f[k].y_average();
        let mut rhs = fbar.shift(-fbar.mean());
        for j in 1..k {
            rhs = &rhs + &s.chi[j - 1].scale(s.c_overrides.get(k - j - 1).copied().unwrap_or(0.0));
        }
        out.push(Residual::torus(format!("super chi{}: Abar chi{} = fbar{k} - <fbar{k}>", k + 1, k + 1), &bar_op(&s.chi[k + 1]), &rhs));
    }
    let k0 = &a_minus.dz() + &a_minus.mul_torus(&s.chi[0].derivative()).dz();
    out.push(Residual::interior("super kappa0: L kappa0 = (a-abar)_z + ((a-abar)chi0_z)_z", &l(&s.kappa[0]), &k0));
    for k in 0..s.depth {
        let rhs = &a_minus.mul_torus(&s.chi[k + 1].derivative()).dz() + &fluctuation(&s.f[k]);
        out.push(Residual::interior(
            format!("super kappa{}: L kappa{} = (A-Abar)chi{} + f{k} - fbar{k}", k + 1, k + 1, k + 1),
            &l(&s.kappa[k + 1]),
            &rhs,
        ));
    }
    for k in 0..=s.depth {
        let prev = if k == 0 { &s.kappa[0] } else { &s.gamma[k - 1] };
        let name = if k == 0 { "kappa0".to_string() } else { format!("gamma{}", k - 1) };
        let a_prev = div_form_zy(av, prev);
        let ybar = a_prev.y_average();
        out.push(Residual::torus(format!("super tau{k}: Abar tau{k} = -mean_y(A {name})"), &bar_op(&s.tau[k]), &-&ybar.shift(-ybar.mean())));
        let rhs = &a_minus.mul_torus(&s.tau[k].derivative()).dz() + &fluctuation(&a_prev);
        out.push(Residual::interior(format!("super gamma{k}: L gamma{k} = (A-Abar)tau{k} + A {name} - mean_y(A {name})"), &l(&s.gamma[k]), &rhs));
    }
    for k in 1..=s.depth {
        let prev = if k == 1 { &s.kappa[1] } else { &s.zeta[k - 1] };
        let a_prev = div_form_zy(av, prev);
        let gbar = s.g[k - 1].y_average();
        let mut rhs = &-&a_prev.y_average() - &gbar.shift(-gbar.mean());
        if k >= 2 {
            rhs = &rhs - &s.h[k - 1].y_average();
        }
        let rhs = rhs.shift(-rhs.mean());
        out.push(Residual::torus(format!("super eta{k}"), &bar_op(&s.eta[k]), &rhs));
        let mut zrhs = &(&a_minus.mul_torus(&s.eta[k].derivative()).dz() + &fluctuation(&a_prev)) + &fluctuation(&s.g[k - 1]);
        if k >= 2 {
            zrhs = &zrhs + &fluctuation(&s.h[k - 1]);
        }
        out.push(Residual::interior(format!("super zeta{k}"), &l(&s.zeta[k]), &zrhs));
    }
    let torus_means: Vec<(String, &TorusField)> = s
        .chi
        .iter()
        .enumerate()
        .map(|(k, c)| (format!("chi{k}"), c))
        .chain(s.tau.iter().enumerate().map(|(k, c)| (format!("tau{k}"), c)))
        .chain(s.eta.iter().enumerate().skip(1).map(|(k, c)| (format!("eta{k}"), c)))
        .collect();
    for (name, f) in torus_means {
        out.push(Residual::zero_mean(&name, f.mean().abs(), f.max_abs()));
    }
    let zy_means: Vec<(String, &ZYField)> = std::iter::once(("kappa0".to_string(), &s.kappa[0]))
        .chain(s.gamma.iter().enumerate().map(|(k, c)| (format!("gamma{k}"), c)))
        .collect();
    for (name, f) in zy_means {
        let m = f.z_mean();
        let worst = ygrid.interior().into_iter().map(|i| m[i].abs()).fold(0.0, f64::max);
        out.push(Residual::zero_mean(&name, worst, f.max_abs_interior()));
    }
    out
}
