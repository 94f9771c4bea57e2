//! Exponent bookkeeping and the expansion `E^ε` whose remainder, scaled by
//! `ε^{-α/2}`, is `q^ε`.
//!
//! ```
//! use homoscale::expansion::{exponents, ExpansionCase};
//!
//! let plan = exponents(3.0).unwrap();
//! assert_eq!((plan.j0, plan.j1, plan.n0), (2, 1, 6));
//! assert_eq!(plan.case, ExpansionCase::SuperLow);
//! assert!(exponents(2.1).is_err());
//! ```

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cell::{CorrectorSet, Regime};
use crate::environment::PathSample;
use crate::error::{Error, Result};
use crate::grid::{TorusField, TrigInterpolant, ZYField};
use crate::macro_pde::{MacroSolution, SpaceTimeField, SpaceTimeGrid};

/// α excluded because the corrector depth `J_0` explodes near 2.
pub const UNSUPPORTED_BAND: (f64, f64) = (1.8, 2.2);

const TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionCase {
    Sub,
    SuperLow,
    Critical,
    SuperHigh,
}

/// One symbolic summand of `E^ε`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Term {
    U { k: usize },
    V { k: usize },
    /// `χ^chi(x/ε) ∂_x^order v^v`.
    ChiV { chi: usize, order: usize, v: usize },
    /// `χ^chi(x/ε, ξ_{t/ε^α}) ∂_x u^u`.
    ChiU { chi: usize, u: usize },
}

impl Term {
    pub fn label(&self) -> String {
        match *self {
            Term::U { k } => format!("u{k}"),
            Term::V { k } => format!("v{k}"),
            Term::ChiV { chi, order, v } => format!("chi{chi} d{order} v{v}"),
            Term::ChiU { chi, u } => format!("chi{chi} d1 u{u}"),
        }
    }

    /// ε-power read off the term itself.
    pub fn power(&self, delta: f64) -> f64 {
        match *self {
            Term::U { k } => k as f64 * delta,
            Term::V { k } => k as f64,
            Term::ChiV { order, v, .. } => (order + v) as f64,
            Term::ChiU { chi, u } => (chi + u) as f64 * delta + 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanTerm {
    pub power: f64,
    pub term: Term,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub include_u1: bool,
    pub j0_override: Option<usize>,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self { include_u1: true, j0_override: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub alpha: f64,
    pub delta: f64,
    pub j0: usize,
    pub j1: usize,
    pub n0: usize,
    pub case: ExpansionCase,
    pub include_u1: bool,
    pub terms: Vec<PlanTerm>,
    pub warnings: Vec<String>,
}

pub fn exponents(alpha: f64) -> Result<ExpansionPlan> {
    exponents_with(alpha, &PlanOptions::default())
}

pub fn exponents_with(alpha: f64, opts: &PlanOptions) -> Result<ExpansionPlan> {
    let unsupported = |reason: String| Error::UnsupportedAlpha { alpha, reason };
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(unsupported("α must be positive".into()));
    }
    if alpha > UNSUPPORTED_BAND.0 && alpha < UNSUPPORTED_BAND.1 {
        return Err(unsupported(format!("inside the band {UNSUPPORTED_BAND:?} where the corrector depth explodes")));
    }
    let delta = (alpha - 2.0).abs();
    let formula_j0 = (alpha / (2.0 * delta) + TOL).floor() as usize + 1;
    let j1 = (alpha / 2.0 + TOL).floor() as usize;
    let case = if alpha < 2.0 {
        ExpansionCase::Sub
    } else if (alpha - 4.0).abs() <= TOL {
        ExpansionCase::Critical
    } else if alpha < 4.0 {
        ExpansionCase::SuperLow
    } else {
        ExpansionCase::SuperHigh
    };
    let mut warnings = Vec::new();
    if case == ExpansionCase::Critical {
        warnings.push(format!("α = 4: using J0 = {} (formula); the case display lists J0 = 1", opts.j0_override.unwrap_or(formula_j0)));
    }
    let j0 = opts.j0_override.unwrap_or(formula_j0);
    let margin = (delta + 1.0).min((j1 + 1) as f64).min(delta * j0 as f64) - alpha / 2.0;
    if margin <= TOL {
        let msg = format!("min(δ+1, J1+1, δJ0) = {} does not exceed α/2 = {}", margin + alpha / 2.0, alpha / 2.0);
        if opts.j0_override.is_some() {
            warnings.push(msg);
        } else {
            return Err(unsupported(msg));
        }
    }
    let mut terms = vec![PlanTerm { power: 0.0, term: Term::U { k: 0 } }];
    for k in 1..=j0 {
        if k == 1 && !opts.include_u1 {
            continue;
        }
        terms.push(PlanTerm { power: k as f64 * delta, term: Term::U { k } });
    }
    for k in 1..=j1 {
        terms.push(PlanTerm { power: k as f64, term: Term::V { k } });
        for l in 1..=k {
            terms.push(PlanTerm { power: k as f64, term: Term::ChiV { chi: l - 1, order: l, v: k - l } });
        }
    }
    Ok(ExpansionPlan { alpha, delta, j0, j1, n0: 2 * j0 + 2, case, include_u1: opts.include_u1, terms, warnings })
}

impl ExpansionPlan {
    pub fn regime(&self) -> Regime {
        Regime::of(self.alpha)
    }

    /// `min(δ+1, J1+1, δJ0) − α/2`.
    pub fn margin(&self) -> f64 {
        (self.delta + 1.0).min((self.j1 + 1) as f64).min(self.delta * self.j0 as f64) - self.alpha / 2.0
    }

    /// Terms of the sub-diffusive expansion with its χ-gradient layer;
    /// the plain term list otherwise.
    pub fn full_terms(&self) -> Vec<PlanTerm> {
        if self.case != ExpansionCase::Sub {
            return self.terms.clone();
        }
        let mut out = Vec::new();
        for k in 0..=self.j0 {
            if k == 1 && !self.include_u1 {
                continue;
            }
            out.push(PlanTerm { power: k as f64 * self.delta, term: Term::U { k } });
            for j in 0..=self.j0 - k {
                out.push(PlanTerm { power: (k + j) as f64 * self.delta + 1.0, term: Term::ChiU { chi: j, u: k } });
            }
        }
        out
    }

    /// Largest corrector index referenced by the full term list.
    pub fn chi_depth(&self) -> usize {
        self.full_terms()
            .iter()
            .filter_map(|t| match t.term {
                Term::ChiV { chi, .. } | Term::ChiU { chi, .. } => Some(chi),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }
}

/// Solutions and correctors referenced by the term list.
#[derive(Clone, Copy, Debug)]
pub struct Ingredients<'a> {
    /// `u^0, u^1, …`.
    pub u: &'a [MacroSolution],
    /// `v^0 = u^0, v^1, …`.
    pub v: &'a [MacroSolution],
    pub correctors: Option<&'a CorrectorSet>,
    pub path: Option<&'a PathSample>,
}

enum Modulation<'a> {
    None,
    Periodic(Vec<f64>),
    Path(&'a ZYField),
}

struct Piece<'a> {
    coef: f64,
    field: &'a SpaceTimeField,
    modulation: Modulation<'a>,
}

/// `E^ε` evaluated level by level on the oscillatory grid.
pub struct Expansion<'a> {
    grid: Arc<SpaceTimeGrid>,
    epsilon: f64,
    alpha: f64,
    path: Option<&'a PathSample>,
    pieces: Vec<Piece<'a>>,
    assembled: Vec<PlanTerm>,
}

/// `f(x_i/ε mod 1)` on every node of `grid`.
pub fn sample_periodic(f: &TrigInterpolant, grid: &SpaceTimeGrid, epsilon: f64) -> Vec<f64> {
    let per = epsilon / grid.dx;
    let shift = grid.x_min / epsilon;
    if (per - per.round()).abs() < 1e-9 && (shift - shift.round()).abs() < 1e-9 && per.round() >= 1.0 {
        let p = per.round() as usize;
        let table: Vec<f64> = (0..p).map(|j| f.eval(j as f64 / p as f64)).collect();
        let offset = ((grid.x_min / grid.dx).round() as i64).rem_euclid(p as i64) as usize;
        (0..grid.nx).map(|i| table[(i + offset) % p]).collect()
    } else {
        (0..grid.nx).map(|i| f.eval((grid.x(i) / epsilon).rem_euclid(1.0))).collect()
    }
}

fn chi_torus<'c>(set: Option<&'c CorrectorSet>, j: usize) -> Result<&'c TorusField> {
    set.and_then(|s| s.as_super()).and_then(|s| s.chi.get(j)).ok_or_else(|| Error::MissingIngredient(format!("super-diffusive corrector chi^{j}")))
}

fn chi_zy<'c>(set: Option<&'c CorrectorSet>, j: usize) -> Result<&'c ZYField> {
    set.and_then(|s| s.as_sub()).and_then(|s| s.chi.get(j)).ok_or_else(|| Error::MissingIngredient(format!("sub-diffusive corrector chi^{j}")))
}

fn solution<'a>(list: &'a [MacroSolution], k: usize, name: &str) -> Result<&'a MacroSolution> {
    list.get(k).ok_or_else(|| Error::MissingIngredient(format!("{name}^{k}")))
}

/// `E^ε` from an explicit term list.
pub fn build_with_terms<'a>(plan: &ExpansionPlan, terms: &[PlanTerm], ing: &Ingredients<'a>, epsilon: f64) -> Result<Expansion<'a>> {
    let grid = solution(ing.u, 0, "u")?.grid().clone();
    let mut pieces = Vec::new();
    let mut assembled = Vec::new();
    for t in terms {
        let power = t.term.power(plan.delta);
        let coef = epsilon.powf(power);
        let (field, modulation) = match t.term {
            Term::U { k } => (&solution(ing.u, k, "u")?.u, Modulation::None),
            Term::V { k } => (&solution(ing.v, k, "v")?.u, Modulation::None),
            Term::ChiV { chi, order, v } => {
                let profile = sample_periodic(&chi_torus(ing.correctors, chi)?.interpolant(), &grid, epsilon);
                (solution(ing.v, v, "v")?.derivative(order)?, Modulation::Periodic(profile))
            }
            Term::ChiU { chi, u } => {
                if ing.path.is_none() {
                    return Err(Error::MissingIngredient("environment path for the chi(x/ε, ξ) layer".into()));
                }
                (solution(ing.u, u, "u")?.derivative(1)?, Modulation::Path(chi_zy(ing.correctors, chi)?))
            }
        };
        if *field.grid != *grid {
            return Err(Error::GridMismatch(format!("{} is not on the grid of u^0", t.term.label())));
        }
        pieces.push(Piece { coef, field, modulation });
        assembled.push(PlanTerm { power, term: t.term });
    }
    Ok(Expansion { grid, epsilon, alpha: plan.alpha, path: ing.path, pieces, assembled })
}

/// `E^ε` from the term list of the limit theorem.
pub fn build_e<'a>(plan: &ExpansionPlan, ing: &Ingredients<'a>, epsilon: f64) -> Result<Expansion<'a>> {
    build_with_terms(plan, &plan.terms, ing, epsilon)
}

/// `E^ε` including the sub-diffusive χ-gradient layer.
pub fn full_e<'a>(plan: &ExpansionPlan, ing: &Ingredients<'a>, epsilon: f64) -> Result<Expansion<'a>> {
    build_with_terms(plan, &plan.full_terms(), ing, epsilon)
}

impl Expansion<'_> {
    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.grid
    }

    /// Terms as assembled, with the power each one actually carries.
    pub fn assembled(&self) -> &[PlanTerm] {
        &self.assembled
    }

    pub fn level(&self, n: usize) -> Vec<f64> {
        let nx = self.grid.nx;
        let mut out = vec![0.0; nx];
        for p in &self.pieces {
            let f = p.field.level(n);
            match &p.modulation {
                Modulation::None => out.iter_mut().zip(f).for_each(|(o, v)| *o += p.coef * v),
                Modulation::Periodic(m) => out.iter_mut().zip(f).zip(m).for_each(|((o, v), c)| *o += p.coef * c * v),
                Modulation::Path(chi) => {
                    let path = self.path.expect("checked at assembly");
                    let y = path.at(self.grid.t(n) / self.epsilon.powf(self.alpha));
                    let ygrid = chi.ygrid();
                    let slice: Vec<f64> = (0..chi.nz()).map(|iz| ygrid.interpolate(&chi.profile(iz), y)).collect();
                    let slice = TorusField::new(chi.torus(), slice).expect("matching torus");
                    let m = sample_periodic(&slice.interpolant(), &self.grid, self.epsilon);
                    out.iter_mut().zip(f).zip(&m).for_each(|((o, v), c)| *o += p.coef * c * v);
                }
            }
        }
        out
    }

    pub fn to_field(&self) -> SpaceTimeField {
        let mut out = SpaceTimeField::zeros(&self.grid);
        for n in 0..self.grid.levels() {
            out.level_mut(n).copy_from_slice(&self.level(n));
        }
        out
    }
}

/// Every assembled power appears in the plan and vice versa.
pub fn term_audit(plan_terms: &[PlanTerm], assembled: &[PlanTerm]) -> bool {
    let key = |t: &PlanTerm| (t.term.label(), (t.power * 1e9).round() as i64);
    let mut a: Vec<_> = plan_terms.iter().map(key).collect();
    let mut b: Vec<_> = assembled.iter().map(key).collect();
    a.sort();
    b.sort();
    a == b
}

/// `q^ε = ε^{-α/2}(u^ε − E^ε)`.
pub fn q_eps(u_eps: &SpaceTimeField, e: &SpaceTimeField, plan: &ExpansionPlan, epsilon: f64) -> Result<SpaceTimeField> {
    e.check_grid(u_eps)?;
    let mut d = u_eps.clone();
    d.axpy(-1.0, e)?;
    Ok(d.scale(epsilon.powf(-plan.alpha / 2.0)))
}

/// Test functions `φ(x)` for the pairing `⟨q, φ⟩`, constant in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    /// `exp(−(x − center)² / (2 width²))`.
    Gaussian { center: f64, width: f64 },
    /// `s exp(1 − 1/(1 − s²))` with `s = (x − center)/radius`, zero for `|s| ≥ 1`.
    OddBump { center: f64, radius: f64 },
}

impl TestFunction {
    /// Two Gaussians and one odd bump.
    pub fn dictionary() -> Vec<TestFunction> {
        vec![
            TestFunction::Gaussian { center: 0.0, width: 1.0 },
            TestFunction::Gaussian { center: 1.0, width: 0.5 },
            TestFunction::OddBump { center: 0.0, radius: 2.0 },
        ]
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Gaussian { center, width } => (-(x - center).powi(2) / (2.0 * width * width)).exp(),
            TestFunction::OddBump { center, radius } => {
                let s = (x - center) / radius;
                if s.abs() >= 1.0 {
                    0.0
                } else {
                    s * (1.0 - 1.0 / (1.0 - s * s)).exp()
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match *self {
            TestFunction::Gaussian { center, width } => format!("gauss(c={center},w={width})"),
            TestFunction::OddBump { center, radius } => format!("oddbump(c={center},r={radius})"),
        }
    }
}

/// Trapezoid weights in `t` for the stored levels.
pub fn time_weights(grid: &SpaceTimeGrid) -> Vec<f64> {
    let dt = grid.dt();
    (0..grid.levels()).map(|n| if n == 0 || n == grid.nt { dt / 2.0 } else { dt }).collect()
}

/// `∫ f φ dx` by the trapezoid rule on one level.
pub fn pair_level(grid: &SpaceTimeGrid, f: &[f64], phi: &[f64]) -> f64 {
    let n = grid.nx;
    let s: f64 = f.iter().zip(phi).map(|(a, b)| a * b).sum();
    (s - 0.5 * (f[0] * phi[0] + f[n - 1] * phi[n - 1])) * grid.dx
}

/// `∫∫ q φ dx dt` by the trapezoid rule.
pub fn functional(q: &SpaceTimeField, phi: &TestFunction) -> f64 {
    let g = &q.grid;
    let values: Vec<f64> = g.xs().iter().map(|&x| phi.eval(x)).collect();
    time_weights(g).iter().enumerate().map(|(n, w)| w * pair_level(g, q.level(n), &values)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{build_super_cascade, CoefficientField, CoefficientSpec};
    use crate::environment::DiffusionModel;
    use crate::grid::TorusGrid;
    use crate::macro_pde::{solve_u0, Iota, XSpectral};
    use proptest::prelude::*;

    #[test]
    fn exponent_examples() {
        let p = exponents(1.0).unwrap();
        assert_eq!((p.delta, p.j0, p.j1, p.case), (1.0, 1, 0, ExpansionCase::Sub));
        let p = exponents(3.0).unwrap();
        assert_eq!((p.delta, p.j0, p.j1, p.case), (1.0, 2, 1, ExpansionCase::SuperLow));
        let p = exponents(5.0).unwrap();
        assert_eq!((p.delta, p.j0, p.j1, p.case), (3.0, 1, 2, ExpansionCase::SuperHigh));
        assert_eq!(p.n0, 4);
    }

    #[test]
    fn critical_alpha() {
        let p = exponents(4.0).unwrap();
        assert_eq!((p.j0, p.j1, p.case), (2, 2, ExpansionCase::Critical));
        assert!(!p.warnings.is_empty());
        let forced = exponents_with(4.0, &PlanOptions { include_u1: true, j0_override: Some(1) }).unwrap();
        assert_eq!(forced.j0, 1);
        assert_eq!(forced.warnings.len(), 2);
    }

    #[test]
    fn unsupported() {
        for a in [1.9, 2.0, 2.15, 0.0, -1.0] {
            assert!(matches!(exponents(a), Err(Error::UnsupportedAlpha { .. })), "{a}");
        }
    }

    #[test]
    fn alpha3_term_list() {
        let p = exponents(3.0).unwrap();
        let shape: Vec<(f64, String)> = p.terms.iter().map(|t| (t.power, t.term.label())).collect();
        let expect = [(0.0, "u0"), (1.0, "u1"), (2.0, "u2"), (1.0, "v1"), (1.0, "chi0 d1 v0")];
        assert_eq!(shape, expect.iter().map(|(p, l)| (*p, l.to_string())).collect::<Vec<_>>());
    }

    #[test]
    fn alpha5_term_list_uses_shifted_chi() {
        let p = exponents(5.0).unwrap();
        let labels: Vec<String> = p.terms.iter().map(|t| t.term.label()).collect();
        assert_eq!(labels, ["u0", "u1", "v1", "chi0 d1 v0", "v2", "chi0 d1 v1", "chi1 d2 v0"]);
        assert_eq!(p.terms[1].power, 3.0);
    }

    #[test]
    fn sub_full_terms() {
        let p = exponents(1.0).unwrap();
        let labels: Vec<(f64, String)> = p.full_terms().iter().map(|t| (t.power, t.term.label())).collect();
        assert_eq!(labels[0], (0.0, "u0".into()));
        assert_eq!(labels[1], (1.0, "chi0 d1 u0".into()));
        assert_eq!(labels[2], (2.0, "chi1 d1 u0".into()));
        assert_eq!(labels[3], (1.0, "u1".into()));
        assert_eq!(labels[4], (2.0, "chi0 d1 u1".into()));
        assert_eq!(p.chi_depth(), 1);
    }

    #[test]
    fn include_u1_toggle() {
        let p = exponents_with(1.0, &PlanOptions { include_u1: false, j0_override: None }).unwrap();
        assert!(p.terms.iter().all(|t| t.term != Term::U { k: 1 }));
    }

    fn macro_stack(g: &SpaceTimeGrid, n: usize) -> Vec<MacroSolution> {
        let u0 = solve_u0(2.0, &Iota::default(), g).unwrap();
        let spectral = u0.spectral().clone();
        let mut out = vec![u0.clone()];
        for k in 1..n {
            let f = SpaceTimeField::from_fn(&u0.grid().clone(), |x, t| (k as f64) * t * (-x * x).exp());
            out.push(MacroSolution::new(f, 6, spectral.clone()));
        }
        out
    }

    #[test]
    fn constant_coefficient_gives_u0() {
        let model = DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 64).unwrap();
        let torus = TorusGrid::new(32).unwrap();
        let a = CoefficientField::new(CoefficientSpec::Const { value: 2.0 }, &torus, model.ygrid()).unwrap();
        let set = build_super_cascade(&a, &model, 1, &[]).unwrap();
        let g = SpaceTimeGrid::for_epsilon(0.1, 9.0, 0.25, 8).unwrap();
        let u = macro_stack(&g, 3);
        let zeros: Vec<MacroSolution> = (0..2).map(|_| MacroSolution::new(SpaceTimeField::zeros(u[0].grid()), 6, u[0].spectral().clone())).collect();
        let v = vec![u[0].clone(), zeros[0].clone()];
        let u = vec![u[0].clone(), zeros[0].clone(), zeros[1].clone()];
        let plan = exponents(3.0).unwrap();
        let ing = Ingredients { u: &u, v: &v, correctors: Some(&set), path: None };
        let e = build_e(&plan, &ing, 0.1).unwrap();
        assert!(term_audit(&plan.terms, e.assembled()));
        let mut d = e.to_field();
        d.axpy(-1.0, &u[0].u).unwrap();
        assert!(d.max_abs() < 1e-14);
    }

    #[test]
    fn missing_ingredient_is_named() {
        let g = SpaceTimeGrid::for_epsilon(0.1, 9.0, 0.25, 8).unwrap();
        let u = macro_stack(&g, 2);
        let plan = exponents(3.0).unwrap();
        let ing = Ingredients { u: &u, v: &u, correctors: None, path: None };
        match build_e(&plan, &ing, 0.1) {
            Err(Error::MissingIngredient(m)) => assert!(m.contains("u^2") || m.contains("chi"), "{m}"),
            Err(e) => panic!("{e}"),
            Ok(_) => panic!("expected an error"),
        }
    }

    #[test]
    fn sub_expansion_alpha1() {
        let g = SpaceTimeGrid::for_epsilon(0.1, 9.0, 0.25, 8).unwrap();
        let u = macro_stack(&g, 2);
        let plan = exponents(1.0).unwrap();
        let ing = Ingredients { u: &u, v: &u[..1], correctors: None, path: None };
        let e = build_e(&plan, &ing, 0.1).unwrap().to_field();
        let mut oracle = u[0].u.clone();
        oracle.axpy(0.1, &u[1].u).unwrap();
        oracle.axpy(-1.0, &e).unwrap();
        assert!(oracle.max_abs() < 1e-15);
    }

    #[test]
    fn periodic_sampling_matches_direct_evaluation() {
        let torus = TorusGrid::new(64).unwrap();
        let f = TorusField::from_fn(&torus, |z| (2.0 * std::f64::consts::PI * z).sin() + 0.3 * (6.0 * std::f64::consts::PI * z).cos());
        let interp = f.interpolant();
        let g = SpaceTimeGrid::for_epsilon(0.1, 3.0, 0.1, 2).unwrap();
        let s = sample_periodic(&interp, &g, 0.1);
        let mut off = g.clone();
        off.x_min += 0.0123;
        let s2 = sample_periodic(&interp, &off, 0.1);
        for i in (0..g.nx).step_by(7) {
            let z = g.x(i) / 0.1;
            let exact = (2.0 * std::f64::consts::PI * z).sin() + 0.3 * (6.0 * std::f64::consts::PI * z).cos();
            assert!((s[i] - exact).abs() < 1e-12);
            let z = off.x(i) / 0.1;
            let exact = (2.0 * std::f64::consts::PI * z).sin() + 0.3 * (6.0 * std::f64::consts::PI * z).cos();
            assert!((s2[i] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn q_eps_zero_and_grid_mismatch() {
        let g = SpaceTimeGrid::new(-8.0, 8.0, 129, 0.5, 4).unwrap();
        let f = SpaceTimeField::from_fn(&Arc::new(g.clone()), |x, t| x * t);
        let plan = exponents(1.0).unwrap();
        assert_eq!(q_eps(&f, &f, &plan, 0.1).unwrap().max_abs(), 0.0);
        let other = SpaceTimeField::zeros(&Arc::new(SpaceTimeGrid::new(-8.0, 8.0, 65, 0.5, 4).unwrap()));
        assert!(matches!(q_eps(&f, &other, &plan, 0.1), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn gaussian_functional_closed_form() {
        let g = Arc::new(SpaceTimeGrid::new(-12.0, 12.0, 1201, 0.5, 10).unwrap());
        let phi = TestFunction::Gaussian { center: 0.5, width: 1.0 };
        let q = SpaceTimeField::from_fn(&g, |x, _| phi.eval(x));
        let exact = 0.5 * std::f64::consts::PI.sqrt();
        assert!((functional(&q, &phi) - exact).abs() < 1e-6);
        assert_eq!(functional(&SpaceTimeField::zeros(&g), &phi), 0.0);
    }

    #[test]
    fn u1_removal_decays_along_ladder() {
        let plan_with = exponents(1.0).unwrap();
        let plan_without = exponents_with(1.0, &PlanOptions { include_u1: false, j0_override: None }).unwrap();
        let phi = TestFunction::Gaussian { center: 0.0, width: 1.0 };
        let mut gaps = Vec::new();
        let ladder = [0.2, 0.1, 0.05];
        for eps in ladder {
            let g = SpaceTimeGrid::for_epsilon(eps, 9.0, 0.25, 8).unwrap();
            let u = macro_stack(&g, 2);
            let ing = Ingredients { u: &u, v: &u[..1], correctors: None, path: None };
            let a = build_e(&plan_with, &ing, eps).unwrap().to_field();
            let b = build_e(&plan_without, &ing, eps).unwrap().to_field();
            let qa = q_eps(&u[0].u, &a, &plan_with, eps).unwrap();
            let qb = q_eps(&u[0].u, &b, &plan_without, eps).unwrap();
            gaps.push((functional(&qa, &phi) - functional(&qb, &phi)).abs());
        }
        let x: Vec<f64> = ladder.iter().map(|e: &f64| e.ln()).collect();
        let y: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
        let fit = crate::stats::linear_fit(&x, &y);
        assert!((fit.slope - 0.5).abs() < 1e-6, "{}", fit.slope);
    }

    #[test]
    fn spectral_grid_is_shared() {
        let g = SpaceTimeGrid::for_epsilon(0.1, 9.0, 0.25, 8).unwrap();
        let u = macro_stack(&g, 2);
        assert!(Arc::ptr_eq(u[0].spectral(), u[1].spectral()));
        let _ = XSpectral::new(&g);
    }

    proptest! {
        #[test]
        fn accepted_plans_satisfy_margin(alpha in 0.05f64..9.0) {
            if let Ok(p) = exponents(alpha) {
                prop_assert!(p.margin() > 0.0);
                prop_assert!(p.delta > 0.0);
                prop_assert_eq!(p.n0, 2 * p.j0 + 2);
                for t in &p.terms {
                    prop_assert!((t.power - t.term.power(p.delta)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn functional_is_linear(c in -3.0f64..3.0) {
            let g = Arc::new(SpaceTimeGrid::new(-6.0, 6.0, 121, 0.5, 4).unwrap());
            let phi = TestFunction::OddBump { center: 0.2, radius: 2.0 };
            let a = SpaceTimeField::from_fn(&g, |x, t| (x - t).sin());
            let b = SpaceTimeField::from_fn(&g, |x, t| x * x * t);
            let mut s = a.clone();
            s.axpy(c, &b).unwrap();
            let lhs = functional(&s, &phi);
            let rhs = functional(&a, &phi) + c * functional(&b, &phi);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
