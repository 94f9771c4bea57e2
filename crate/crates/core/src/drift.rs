//! Drift corrections: the correctors `P^k, Q^k, U^{k,ℓ}`, the constants
//! `C_{k,m}` and the interleaved `w ↔ u` schedule.
//!
//! ```
//! use homoscale::cell::{build_super_cascade, CoefficientField, CoefficientSpec};
//! use homoscale::drift::build_pq;
//! use homoscale::environment::DiffusionModel;
//! use homoscale::grid::TorusGrid;
//!
//! let model = DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 128).unwrap();
//! let torus = TorusGrid::new(32).unwrap();
//! let a = CoefficientField::new(CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 }, &torus, model.ygrid()).unwrap();
//! let d = build_pq(&a, &model, 1).unwrap();
//! assert!((d.p[0].mean() - 1.0).abs() < 1e-12);
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{CoefficientField, CorrectorSet, Regime, Residual, MAX_DEPTH};
use crate::environment::DiffusionModel;
use crate::error::{Error, Result};
use crate::grid::{TorusField, ZYField};
use crate::macro_pde::{solve_uk, MacroSolution, SpaceTimeField};

/// Which κ drives the leading super-diffusive martingale term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeadingWiring {
    #[default]
    Kappa0,
    Kappa1,
}

/// One term `ε^{pδ} Υ(z, y) u^m_x(x, t)` of the martingale part.
#[derive(Clone, Debug)]
pub struct MartingaleTriple {
    pub label: String,
    pub power: usize,
    pub exponent: f64,
    pub upsilon: ZYField,
    /// Zero-mean `z`-antiderivative of `Υ - ⟨Υ⟩`.
    pub upsilon_tilde: ZYField,
    pub macro_index: usize,
    /// `max_y |⟨Υ(·, y)⟩|`, removed before integrating.
    pub mean_defect: f64,
}

impl MartingaleTriple {
    fn new(label: String, power: usize, delta: f64, upsilon: ZYField, macro_index: usize) -> Self {
        let means = upsilon.z_mean();
        let mean_defect = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let upsilon_tilde = upsilon.map_slices(|iy, s| s.shift(-means[iy]).antiderivative().expect("centered slice"));
        Self { label, power, exponent: power as f64 * delta, upsilon, upsilon_tilde, macro_index, mean_defect }
    }

    pub fn is_trivial(&self) -> bool {
        self.upsilon.max_abs() <= 1e-12
    }

    /// `max |∂_z Υ̃ - (Υ - ⟨Υ⟩)|`.
    pub fn antiderivative_defect(&self) -> f64 {
        let means = self.upsilon.z_mean();
        let centered = self.upsilon.map_slices(|iy, s| s.shift(-means[iy]));
        (&self.upsilon_tilde.dz() - &centered).max_abs()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { upsilon: self.upsilon.scale(c), upsilon_tilde: self.upsilon_tilde.scale(c), mean_defect: c.abs() * self.mean_defect, ..self.clone() }
    }
}

/// Smallest `K_0` with `(K_0 + 1) δ ≥ max(2, α/2)`.
pub fn k0(alpha: f64) -> usize {
    let delta = (alpha - 2.0).abs();
    let target = 2.0f64.max(alpha / 2.0);
    ((target / delta - 1.0 - 1e-12).ceil().max(0.0)) as usize
}

/// Martingale triples grouped by total power up to `depth`.
pub fn assemble_triples(correctors: &CorrectorSet, delta: f64, depth: usize, wiring: LeadingWiring) -> Result<Vec<MartingaleTriple>> {
    let mut out = Vec::new();
    match correctors {
        CorrectorSet::Sub(s) => {
            if s.chi.len() <= depth {
                return Err(Error::DepthInsufficient { available: s.chi.len().saturating_sub(1), required: depth });
            }
            for p in 0..=depth {
                for j in 0..=p {
                    let m = p - j;
                    out.push(MartingaleTriple::new(format!("chi{j}_y u{m}_x"), p, delta, s.chi[j].dy(), m));
                }
            }
        }
        CorrectorSet::Super(s) => {
            if depth >= 1 && s.gamma.len() < depth {
                return Err(Error::DepthInsufficient { available: s.gamma.len(), required: depth });
            }
            let (lead_name, lead) = match wiring {
                LeadingWiring::Kappa0 => ("kappa0", s.kappa[0].dy()),
                LeadingWiring::Kappa1 => ("kappa1", s.kappa[1].dy()),
            };
            for p in 0..=depth {
                for n in 0..p {
                    let g = p - 1 - n;
                    out.push(MartingaleTriple::new(format!("gamma{g}_y u{n}_x"), p, delta, s.gamma[g].dy(), n));
                }
                out.push(MartingaleTriple::new(format!("{lead_name}_y u{p}_x"), p, delta, lead.clone(), p));
            }
        }
    }
    Ok(out)
}

/// `P^0 … P^K` and `Q^0 … Q^K` with `Q^k_y` from the Poisson flux.
#[derive(Clone, Debug)]
pub struct DriftCorrectors {
    pub p: Vec<TorusField>,
    pub q: Vec<ZYField>,
    pub q_y: Vec<ZYField>,
}

fn poisson_with_flux(model: &DiffusionModel, rhs: &ZYField, context: &str) -> Result<(ZYField, ZYField)> {
    let sols: Vec<(Vec<f64>, Vec<f64>)> = (0..rhs.nz())
        .into_par_iter()
        .map(|iz| {
            model.solve_poisson(&rhs.profile(iz)).map(|s| (s.values, s.derivative)).map_err(|e| match e {
                Error::NotCentered { integral, .. } => Error::NotCentered { context: format!("{context}, z-node {iz}"), integral },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let (v, d): (Vec<_>, Vec<_>) = sols.into_iter().unzip();
    Ok((ZYField::from_profiles(rhs.torus(), rhs.ygrid(), v)?, ZYField::from_profiles(rhs.torus(), rhs.ygrid(), d)?))
}

/// Solve `(ā P)_zz = r` with `⟨P⟩ = 1`.
fn solve_p(a_bar: &TorusField, r: &TorusField) -> Result<TorusField> {
    let s = r.shift(-r.mean()).antiderivative()?.antiderivative()?;
    let inv = a_bar.map(|v| 1.0 / v);
    let c0 = (1.0 - (&s * &inv).mean()) / inv.mean();
    Ok(&s.shift(c0) * &inv)
}

pub fn build_pq(a: &CoefficientField, model: &DiffusionModel, depth: usize) -> Result<DriftCorrectors> {
    if depth > MAX_DEPTH {
        return Err(Error::CascadeDepthExceeded { requested: depth, max: MAX_DEPTH });
    }
    let av = &a.values;
    let a_bar = a.a_bar();
    let a_minus = av.sub_torus(&a_bar).scale(-1.0);
    let zero = TorusField::zeros(a.torus());
    let mut p = vec![solve_p(&a_bar, &zero)?];
    let (q0, q0y) = poisson_with_flux(model, &a_minus.mul_torus(&p[0]).dz().dz(), "Q0")?;
    let mut q = vec![q0];
    let mut q_y = vec![q0y];
    for k in 1..=depth {
        let qa = (&q[k - 1] * av).dz().dz();
        let qa_bar = qa.y_average();
        p.push(solve_p(&a_bar, &-&qa_bar)?);
        let rhs = &(&a_minus.mul_torus(&p[k]).dz().dz() + &ZYField::from_torus(&qa_bar, av.ygrid())) - &qa;
        let (qk, qky) = poisson_with_flux(model, &rhs, &format!("Q{k}"))?;
        q.push(qk);
        q_y.push(qky);
    }
    Ok(DriftCorrectors { p, q, q_y })
}

/// Residuals of the `P^k`, `Q^k` equations and their normalizations.
pub fn audit_pq(a: &CoefficientField, model: &DiffusionModel, d: &DriftCorrectors) -> Vec<Residual> {
    let av = &a.values;
    let a_bar = a.a_bar();
    let a_minus = av.sub_torus(&a_bar).scale(-1.0);
    let l = |v: &ZYField| v.map_profiles(|_, p| model.generator(&p));
    let mut out = Vec::new();
    for k in 0..d.p.len() {
        let lhs = (&a_bar * &d.p[k]).derivative().derivative();
        let (rhs_p, rhs_q) = if k == 0 {
            (TorusField::zeros(a.torus()), a_minus.mul_torus(&d.p[0]).dz().dz())
        } else {
            let qa = (&d.q[k - 1] * av).dz().dz();
            let qa_bar = qa.y_average();
            let rq = &(&a_minus.mul_torus(&d.p[k]).dz().dz() + &ZYField::from_torus(&qa_bar, av.ygrid())) - &qa;
            (-&qa_bar, rq)
        };
        out.push(Residual::torus(format!("P{k}: (abar P{k})_zz"), &lhs, &rhs_p));
        out.push(Residual::zero_mean(&format!("P{k} - 1"), d.p[k].mean() - 1.0, 1.0));
        out.push(Residual::interior(format!("Q{k}: L Q{k}"), &l(&d.q[k]), &rhs_q));
        out.push(Residual::zero_mean(&format!("Q{k}"), d.q[k].z_mean().iter().fold(0.0f64, |m, v| m.max(v.abs())), d.q[k].max_abs_interior()));
    }
    out
}

/// `c(k, i) = overline(⟨Q^k_y Υ̃_i⟩ σ)`, the table `C_{ℓ,m}` and the `U` profiles.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DriftConstants {
    /// `pair[k][i]` for `Q^k` against triple `i`.
    pub pair: Vec<Vec<f64>>,
    /// Triangular `c[ℓ][m]`, `m ≤ ℓ`.
    pub c: Vec<Vec<f64>>,
    pub triple_powers: Vec<usize>,
    pub triple_macro: Vec<usize>,
    pub triple_labels: Vec<String>,
}

fn pairing_profile(model: &DiffusionModel, q_y: &ZYField, t: &MartingaleTriple) -> Vec<f64> {
    (q_y * &t.upsilon_tilde).z_mean().iter().zip(model.sigma_nodes()).map(|(v, s)| v * s).collect()
}

pub fn drift_constants(model: &DiffusionModel, d: &DriftCorrectors, triples: &[MartingaleTriple]) -> DriftConstants {
    let ygrid = model.ygrid();
    let pair: Vec<Vec<f64>> = d.q_y.iter().map(|qy| triples.iter().map(|t| ygrid.average(&pairing_profile(model, qy, t))).collect()).collect();
    let depth = d.q_y.len();
    let mut c: Vec<Vec<f64>> = (0..depth).map(|l| vec![0.0; l + 1]).collect();
    for (l, row) in c.iter_mut().enumerate() {
        for (i, t) in triples.iter().enumerate() {
            if t.power <= l && t.macro_index <= l {
                row[t.macro_index] += pair[l - t.power][i];
            }
        }
    }
    DriftConstants {
        pair,
        c,
        triple_powers: triples.iter().map(|t| t.power).collect(),
        triple_macro: triples.iter().map(|t| t.macro_index).collect(),
        triple_labels: triples.iter().map(|t| t.label.clone()).collect(),
    }
}

/// `U^{k,i}(y)` with `L U = 2 c(k,i) - 2⟨Q^k_y Υ̃_i⟩σ`; the factor `u^m_x` stays symbolic.
pub fn build_u(model: &DiffusionModel, d: &DriftCorrectors, triples: &[MartingaleTriple], constants: &DriftConstants) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Residual>)> {
    let ygrid = model.ygrid();
    let interior = ygrid.interior();
    let (q, b) = (model.q_nodes(), model.drift_nodes());
    let mut table = Vec::new();
    let mut residuals = Vec::new();
    for (k, qy) in d.q_y.iter().enumerate() {
        let mut row = Vec::new();
        for (i, t) in triples.iter().enumerate() {
            let g: Vec<f64> = pairing_profile(model, qy, t).iter().map(|v| 2.0 * constants.pair[k][i] - 2.0 * v).collect();
            let u = model.solve_poisson(&g)?.values;
            let lu = model.generator(&u);
            let value = interior.iter().map(|&j| (lu[j] - g[j]).abs()).fold(0.0, f64::max);
            let (d1, d2) = (ygrid.derivative(&u), ygrid.second_derivative(&u));
            let terms = |j: usize| (0.5 * q[j] * d2[j]).abs().max((b[j] * d1[j]).abs()).max(g[j].abs());
            let scale = interior.iter().map(|&j| terms(j)).fold(0.0, f64::max);
            residuals.push(Residual::new(format!("U{k},{i}: L U = 2Xi - 2<Q{k}_y G~{i}>sigma"), value, scale));
            row.push(u);
        }
        table.push(row);
    }
    Ok((table, residuals))
}

/// Index shift between `w^j` and the row `C_{j-s}`: `s = 1` above 2, `s = 2` below.
pub fn w_offset(regime: Regime) -> usize {
    match regime {
        Regime::Super => 1,
        Regime::Sub => 2,
    }
}

/// `w^j` from `u^0 … u^{j-s}` and the earlier `w`'s.
pub fn w_next(regime: Regime, c: &[Vec<f64>], us: &[MacroSolution], ws: &[Option<SpaceTimeField>], j: usize) -> Result<Option<SpaceTimeField>> {
    let s = w_offset(regime);
    if j < s {
        return Ok(None);
    }
    let l = j - s;
    if us.len() < l + 1 || ws.len() != j {
        return Err(Error::ScheduleCycle { requested: format!("w^{j} with {} u's and {} w's", us.len(), ws.len().saturating_sub(1)) });
    }
    let row = c.get(l).ok_or(Error::DepthInsufficient { available: c.len(), required: l + 1 })?;
    let mut w = SpaceTimeField::zeros(us[0].grid());
    for (m, cm) in row.iter().enumerate() {
        if *cm != 0.0 {
            w.axpy(-cm, us[m].derivative(2)?)?;
        }
    }
    for prev in ws.iter().take(j).skip(s).flatten() {
        w.axpy(-1.0, prev)?;
    }
    Ok(Some(w))
}

/// Interleaved `u^0, w^1, u^1, …` and the `Z^ℓ` cancellation residuals.
#[derive(Clone, Debug)]
pub struct DriftSchedule {
    pub u: Vec<MacroSolution>,
    /// `w[j]` for `j ≥ 1`; `None` when identically zero.
    pub w: Vec<Option<SpaceTimeField>>,
    pub z_check: Vec<f64>,
}

pub fn w_recursion(
    regime: Regime,
    constants: &DriftConstants,
    a_eff: f64,
    a_k_eff: &[f64],
    u0: MacroSolution,
    n_u: usize,
    substeps: usize,
) -> Result<DriftSchedule> {
    let mut us = vec![u0];
    let mut ws: Vec<Option<SpaceTimeField>> = vec![None];
    for j in 1..=n_u {
        let w = w_next(regime, &constants.c, &us, &ws, j)?;
        ws.push(w);
        let uj = solve_uk(j, a_eff, a_k_eff, ws[j].as_ref(), &us, substeps)?;
        us.push(uj);
    }
    let s = w_offset(regime);
    let extra = n_u + 1;
    if extra >= s && extra - s < constants.c.len() {
        let w = w_next(regime, &constants.c, &us, &ws, extra)?;
        ws.push(w);
    }
    let z_check = z_cancellation(regime, constants, &us, &ws)?;
    Ok(DriftSchedule { u: us, w: ws, z_check })
}

/// `max |Z^ℓ + Σ_{k≤ℓ} w̃^{k+s}| / max(1, max |Z^ℓ|)` with `Z^ℓ` assembled from
/// the per-triple pairings.
pub fn z_cancellation(regime: Regime, constants: &DriftConstants, us: &[MacroSolution], ws: &[Option<SpaceTimeField>]) -> Result<Vec<f64>> {
    let s = w_offset(regime);
    let grid = us[0].grid().clone();
    let spectral = us[0].spectral().clone();
    let mut out = Vec::new();
    let mut wt_sum = SpaceTimeField::zeros(&grid);
    let mut l = 0;
    while l + s < ws.len() && l < us.len() && l < constants.c.len() {
        let mut z = SpaceTimeField::zeros(&grid);
        for (i, (&p, &m)) in constants.triple_powers.iter().zip(&constants.triple_macro).enumerate() {
            if p <= l {
                let c = constants.pair[l - p][i];
                if c != 0.0 {
                    z.axpy(c, us[m].derivative(1)?)?;
                }
            }
        }
        if let Some(w) = &ws[l + s] {
            let mut wt = w.clone();
            for n in 0..grid.levels() {
                let anti = spectral.antiderivative(w.level(n));
                wt.level_mut(n).copy_from_slice(&anti);
            }
            wt_sum.axpy(1.0, &wt)?;
        }
        let mut sum = z.clone();
        sum.axpy(1.0, &wt_sum)?;
        out.push(sum.max_abs() / z.max_abs().max(1.0));
        l += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{build_sub_cascade, build_super_cascade, CoefficientSpec};
    use crate::grid::TorusGrid;
    use crate::macro_pde::{solve_u0, Iota, SpaceTimeGrid};
    use crate::quad::gauss_legendre;

    fn model() -> DiffusionModel {
        DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 256).unwrap()
    }

    fn field(spec: CoefficientSpec, nz: usize, m: &DiffusionModel) -> CoefficientField {
        CoefficientField::new(spec, &TorusGrid::new(nz).unwrap(), m.ygrid()).unwrap()
    }

    #[test]
    fn k0_values() {
        assert_eq!(k0(3.0), 1);
        assert_eq!(k0(1.0), 1);
        assert_eq!(k0(5.0), 0);
        assert_eq!(k0(2.5), 3);
        assert_eq!(k0(1.5), 3);
    }

    #[test]
    fn p0_is_harmonic_over_abar() {
        let m = model();
        let a = field(CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 }, 64, &m);
        let d = build_pq(&a, &m, 2).unwrap();
        let torus = a.torus();
        let oracle = TorusField::from_fn(torus, |z| 3f64.sqrt() / (2.0 + (2.0 * std::f64::consts::PI * z).sin()));
        assert!((&d.p[0] - &oracle).max_abs() < 1e-12);
        for (k, p) in d.p.iter().enumerate() {
            assert!((p.mean() - 1.0).abs() < 1e-10, "P{k}");
        }
        assert!(d.q.iter().all(|q| q.max_abs() < 1e-12));
        for r in audit_pq(&a, &m, &d) {
            assert!(r.relative() < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn constant_abar_gives_unit_p0() {
        let m = model();
        let a = field(CoefficientSpec::reference(), 32, &m);
        let d = build_pq(&a, &m, 1).unwrap();
        assert!(d.p[0].values().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn reference_pq_audit() {
        let m = model();
        let a = field(CoefficientSpec::reference(), 32, &m);
        let d = build_pq(&a, &m, 3).unwrap();
        for r in audit_pq(&a, &m, &d) {
            assert!(r.relative() < 1e-6, "{r:?}");
        }
    }

    /// `Q_t'(y) = e^{y²/2} ∫_{-∞}^y tanh(s) e^{-s²/2} ds` for `Q_t'' - y Q_t' = tanh`.
    fn qt_prime(y: f64) -> f64 {
        (y * y / 2.0).exp() * gauss_legendre(|s| s.tanh() * (-s * s / 2.0).exp(), -14.0, y, 64)
    }

    #[test]
    fn reference_c00_matches_nested_quadrature() {
        let m = model();
        let a = field(CoefficientSpec::reference(), 32, &m);
        let CorrectorSet::Super(s) = build_super_cascade(&a, &m, 1, &[]).unwrap() else { unreachable!() };
        let triples = assemble_triples(&CorrectorSet::Super(s), 1.0, 1, LeadingWiring::Kappa0).unwrap();
        let d = build_pq(&a, &m, 1).unwrap();
        let c = drift_constants(&m, &d, &triples);
        let pi = std::f64::consts::PI;
        let phi = |y: f64| (-y * y / 2.0).exp() / (2.0 * pi).sqrt();
        let oracle = 2.0 * pi * pi * 2f64.sqrt() * gauss_legendre(|y| qt_prime(y).powi(2) * phi(y), -8.0, 8.0, 128);
        assert!((c.c[0][0] - oracle).abs() < 1e-6 * oracle, "{} vs {oracle}", c.c[0][0]);
        assert!(c.c[0][0] > 0.0);
    }

    #[test]
    fn linear_in_upsilon() {
        let m = model();
        let a = field(CoefficientSpec::reference(), 32, &m);
        let set = build_super_cascade(&a, &m, 1, &[]).unwrap();
        let triples = assemble_triples(&set, 1.0, 1, LeadingWiring::Kappa0).unwrap();
        let d = build_pq(&a, &m, 1).unwrap();
        let c1 = drift_constants(&m, &d, &triples);
        let doubled: Vec<MartingaleTriple> = triples.iter().map(|t| t.scaled(2.0)).collect();
        let c2 = drift_constants(&m, &d, &doubled);
        assert!((c2.c[0][0] - 2.0 * c1.c[0][0]).abs() < 1e-12 * c1.c[0][0].abs());
        let (_, res) = build_u(&m, &d, &triples, &c1).unwrap();
        for r in res {
            assert!(r.relative() < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn y_independent_has_trivial_triples() {
        let m = model();
        let a = field(CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 }, 32, &m);
        let set = build_sub_cascade(&a, &m, 1).unwrap();
        let triples = assemble_triples(&set, 1.0, 1, LeadingWiring::Kappa0).unwrap();
        assert!(triples.iter().all(|t| t.is_trivial()));
        let d = build_pq(&a, &m, 1).unwrap();
        let c = drift_constants(&m, &d, &triples);
        assert!(c.c.iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sub_enumeration() {
        let m = model();
        let a = field(CoefficientSpec::reference(), 32, &m);
        let set = build_sub_cascade(&a, &m, 1).unwrap();
        let t = assemble_triples(&set, 1.0, 2, LeadingWiring::Kappa0);
        assert!(matches!(t, Err(Error::DepthInsufficient { .. })));
        let t = assemble_triples(&set, 1.0, 1, LeadingWiring::Kappa0).unwrap();
        let shape: Vec<(usize, &str)> = t.iter().map(|t| (t.power, t.label.as_str())).collect();
        assert_eq!(shape, vec![(0, "chi0_y u0_x"), (1, "chi0_y u1_x"), (1, "chi1_y u0_x")]);
        for tr in &t {
            assert!(tr.antiderivative_defect() < 1e-9 * tr.upsilon.max_abs().max(1.0));
            assert!(tr.mean_defect < 1e-12);
        }
    }

    #[test]
    fn super_enumeration_and_z_independent_lead() {
        let m = model();
        let a = field(CoefficientSpec::YOnly { base: 2.0, amplitude: 1.0 }, 32, &m);
        let set = build_super_cascade(&a, &m, 2, &[]).unwrap();
        let t = assemble_triples(&set, 1.0, 2, LeadingWiring::Kappa0).unwrap();
        let labels: Vec<&str> = t.iter().map(|t| t.label.as_str()).collect();
        assert_eq!(labels, vec!["kappa0_y u0_x", "gamma0_y u0_x", "kappa0_y u1_x", "gamma1_y u0_x", "gamma0_y u1_x", "kappa0_y u2_x"]);
        assert!(t[0].is_trivial());
    }

    #[test]
    fn zero_table_gives_zero_schedule() {
        let g = SpaceTimeGrid::new(-16.0, 16.0, 256, 0.5, 32).unwrap();
        let u0 = solve_u0(1.0, &Iota::default(), &g).unwrap();
        let c = DriftConstants { pair: vec![vec![0.0], vec![0.0]], c: vec![vec![0.0], vec![0.0, 0.0]], triple_powers: vec![0], triple_macro: vec![0], triple_labels: vec!["t".into()] };
        let s = w_recursion(Regime::Sub, &c, 1.0, &[1.0, 0.0, 0.0], u0, 2, 1).unwrap();
        assert!(s.w[1].is_none());
        assert!(s.w.iter().flatten().all(|w| w.max_abs() == 0.0));
        assert!(s.u[1..].iter().all(|u| u.u.max_abs() == 0.0));
    }

    #[test]
    fn schedule_guard() {
        let g = SpaceTimeGrid::new(-16.0, 16.0, 256, 0.5, 32).unwrap();
        let u0 = solve_u0(1.0, &Iota::default(), &g).unwrap();
        let c = vec![vec![1.0], vec![1.0, 1.0]];
        let err = w_next(Regime::Super, &c, &[u0], &[None], 2).unwrap_err();
        assert!(matches!(err, Error::ScheduleCycle { .. }));
    }

    #[test]
    fn z_identity_reference_super() {
        let m = model();
        let a = field(CoefficientSpec::reference(), 32, &m);
        let set = build_super_cascade(&a, &m, 3, &[]).unwrap();
        let triples = assemble_triples(&set, 1.0, 3, LeadingWiring::Kappa0).unwrap();
        let d = build_pq(&a, &m, 3).unwrap();
        let c = drift_constants(&m, &d, &triples);
        let g = SpaceTimeGrid::new(-20.0, 20.0, 512, 0.25, 64).unwrap();
        let u0 = solve_u0(2.0, &Iota::default(), &g).unwrap();
        let s = w_recursion(Regime::Super, &c, 2.0, &[2.0, 0.0, 0.0, 0.0], u0, 3, 1).unwrap();
        assert_eq!(s.z_check.len(), 4);
        for (l, r) in s.z_check.iter().enumerate() {
            assert!(*r < 1e-8, "Z{l}: {r}");
        }
    }
}
