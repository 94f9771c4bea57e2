//! Experiment drivers behind the command-line subcommands. Each returns an
//! [`EnsembleReport`] whose verdicts decide the exit status.

use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cell::{
    audit_sub, audit_super, build_sub_cascade, build_super_cascade, effective_constants, CoefficientField, CoefficientSpec, CorrectorSet, EffectiveConstants, Regime, Residual,
};
use crate::config::{ExperimentConfig, InvarianceProfile};
use crate::drift::{assemble_triples, audit_pq, build_pq, build_u, drift_constants, w_recursion, DriftConstants};
use crate::environment::DiffusionModel;
use crate::error::{Error, Result};
use crate::expansion::{build_e, build_with_terms, exponents_with, pair_level, time_weights, ExpansionPlan, Ingredients, PlanTerm, Term, TestFunction};
use crate::grid::TorusGrid;
use crate::limit_law::{invariance_variance, q0_variance, LimitSpde};
use crate::macro_pde::layer::{initial_layer_constants, initial_layer_constants_with, InitialLayer, LayerOptions};
use crate::macro_pde::{solve_u0_with, solve_vk, window_half_width, MacroSolution, SpaceTimeField, SpaceTimeGrid};
use crate::oscillatory::{resolution_advice, solve_eps, solve_eps_observed, EpsProblem};
use crate::report::{Criterion, EnsembleReport, Table};
use crate::seeds;
use crate::stats::{linear_fit, mean_var, ks_normal, ks_p_value, variance_ci};

/// Environment variable capping the node-steps of one command.
pub const BUDGET_ENV: &str = "HOMOSCALE_BUDGET";

/// Residual tolerance of the corrector suite.
pub const RESIDUAL_TOL: f64 = 1e-6;
/// Largest `k` of the gated `U^{k,i}` residuals.
pub const U_AUDIT_DEPTH: usize = 1;
/// Tolerance of the `Z` cancellation.
pub const Z_TOL: f64 = 1e-8;
/// Tolerance of the closed-form effective coefficients.
pub const A_EFF_TOL: f64 = 1e-10;
/// Tolerance of the degenerate-limit checks.
pub const DEGENERACY_TOL: f64 = 1e-10;
/// Tolerance of the CLT quadrature against `σ0²/θ²`.
pub const CLT_TOL: f64 = 1e-8;
/// Admissible change of `I_2` under halving the layer step.
pub const LAYER_DT_TOL: f64 = 1e-6;
/// Admissible distance of the fitted rate from 1.
pub const RATE_TOL: f64 = 0.3;
/// Admissible band of consecutive ratios of the normalized error.
pub const RATIO_BAND: (f64, f64) = (0.5, 2.0);
/// Relative variance tolerance of the law test.
pub const LAW_VARIANCE_TOL: f64 = 0.2;
/// Standard errors allowed for the mean of the law test.
pub const LAW_MEAN_SE: f64 = 3.0;

/// Exit status of a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnsupportedAlpha { .. } | Error::CascadeDepthExceeded { .. } => 2,
        Error::Unaffordable { .. } => 3,
        _ => 1,
    }
}

/// `HOMOSCALE_BUDGET`, when set.
pub fn env_budget() -> Result<Option<u64>> {
    match std::env::var(BUDGET_ENV) {
        Ok(s) => s.trim().parse::<u64>().map(Some).map_err(|_| Error::Config(format!("{BUDGET_ENV} = {s:?} is not a node-step count"))),
        Err(_) => Ok(None),
    }
}

fn budget(cfg: &ExperimentConfig) -> Result<Option<u64>> {
    Ok(match (env_budget()?, cfg.eps.budget_node_steps) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

/// Abort with [`Error::Unaffordable`] if `runs` solves at each `ε` exceed the budget.
pub fn check_budget(cfg: &ExperimentConfig, lambda: f64, runs: &[(f64, usize)]) -> Result<u64> {
    let mut cost = 0u64;
    for &(eps, n) in runs {
        let a = resolution_advice(eps, cfg.alpha(), cfg.macro_.t_final, &cfg.macro_.iota, lambda, None)?;
        cost = cost.saturating_add(a.node_steps.saturating_mul(n as u64));
    }
    if let Some(b) = budget(cfg)? {
        if cost > b {
            return Err(Error::Unaffordable { cost, budget: b });
        }
    }
    Ok(cost)
}

fn field_for(cfg: &ExperimentConfig, spec: CoefficientSpec, model: &DiffusionModel) -> Result<CoefficientField> {
    CoefficientField::new(spec, &TorusGrid::new(cfg.coefficient.nz)?, model.ygrid())
}

/// Correctors, constants and initial-layer data for the configured α.
pub struct Setup {
    pub model: DiffusionModel,
    pub field: CoefficientField,
    pub plan: ExpansionPlan,
    pub depth: usize,
    pub correctors: CorrectorSet,
    pub constants: EffectiveConstants,
    pub drift: DriftConstants,
    pub layer: Option<InitialLayer>,
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let plan = exponents_with(cfg.alpha(), &cfg.plan_options())?;
        let model = cfg.environment.model()?;
        let field = field_for(cfg, cfg.coefficient.spec.clone(), &model)?;
        let depth = cfg.expansion.depth.unwrap_or(plan.j0.max(plan.j1).max(plan.chi_depth()).max(1));
        let correctors = match plan.regime() {
            Regime::Sub => build_sub_cascade(&field, &model, depth)?,
            Regime::Super => build_super_cascade(&field, &model, depth, &[])?,
        };
        let constants = effective_constants(&correctors, &field, &model)?;
        let triples = assemble_triples(&correctors, plan.delta, depth, cfg.expansion.leading)?;
        let d = build_pq(&field, &model, depth)?;
        let drift = drift_constants(&model, &d, &triples);
        let layer = match correctors.as_super() {
            Some(s) => Some(initial_layer_constants(s, plan.j1)?),
            None => None,
        };
        Ok(Self { model, field, plan, depth, correctors, constants, drift, layer })
    }

    /// Macro solutions on the oscillatory grid of `ε`.
    pub fn macro_stack(&self, cfg: &ExperimentConfig, epsilon: f64) -> Result<MacroStack> {
        let grid = eps_grid(cfg, &self.field, epsilon)?;
        let m = &cfg.macro_;
        let c = &self.constants;
        let u0 = solve_u0_with(c.a_eff, &m.iota, &grid, m.substeps, 6.max(self.plan.j1 + 2))?;
        let schedule = w_recursion(c.regime, &self.drift, c.a_eff, &c.a_k_eff, u0, self.plan.j0, m.substeps)?;
        let mut v = vec![schedule.u[0].clone()];
        if let Some(layer) = &self.layer {
            for j in 1..=self.plan.j1 {
                let vj = solve_vk(j, c.a_eff, &c.ua_k_eff, &layer.i, &v, m.substeps)?;
                v.push(vj);
            }
        }
        Ok(MacroStack { grid, u: schedule.u, v, z_check: schedule.z_check })
    }
}

pub struct MacroStack {
    pub grid: SpaceTimeGrid,
    pub u: Vec<MacroSolution>,
    pub v: Vec<MacroSolution>,
    pub z_check: Vec<f64>,
}

fn eps_grid(cfg: &ExperimentConfig, field: &CoefficientField, epsilon: f64) -> Result<SpaceTimeGrid> {
    let m = &cfg.macro_;
    SpaceTimeGrid::for_epsilon(epsilon, window_half_width(&m.iota, field.lambda, m.t_final), m.t_final, m.nt)
}

/// The oscillatory problem at `ε`; a path is drawn from `seed` when the
/// coefficient depends on `y`.
pub fn eps_problem(cfg: &ExperimentConfig, model: &DiffusionModel, grid: &SpaceTimeGrid, epsilon: f64, seed: u64) -> EpsProblem {
    let spec = cfg.coefficient.spec.clone();
    let mut p = EpsProblem::deterministic(epsilon, cfg.alpha(), spec, cfg.macro_.iota.clone(), grid.clone());
    p.scheme = cfg.eps.scheme;
    if !p.spec.is_y_independent() {
        p.path = Some(model.sample_path(p.path_dt(), p.path_duration(), seed));
    }
    p
}

fn new_report(experiment: &str, cfg: &ExperimentConfig) -> EnsembleReport {
    EnsembleReport::new(experiment, &cfg.hash(), cfg.seed)
}

fn residual_rows(report: &mut EnsembleReport, rows: &mut Vec<Vec<String>>, family: &str, res: &[Residual]) {
    for r in res {
        report.record(None, None, &format!("{family}: {}", r.equation), "relative_residual", r.relative());
        rows.push(vec![family.into(), r.equation.clone(), r.value.to_string(), r.scale.to_string(), r.relative().to_string()]);
    }
}

/// Corrector residuals (C1), degenerate limits (C4), `Z` cancellation (C5)
/// and initial-layer decay (C6).
pub fn cmd_audit(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    let start = std::time::Instant::now();
    let mut report = new_report("audit", cfg);
    let model = cfg.environment.model()?;
    let field = field_for(cfg, cfg.coefficient.spec.clone(), &model)?;
    let depth = cfg.expansion.depth.unwrap_or(3);
    let sub = build_sub_cascade(&field, &model, depth)?;
    let sup = build_super_cascade(&field, &model, depth, &[])?;
    let sub_c = effective_constants(&sub, &field, &model)?;
    let sup_c = effective_constants(&sup, &field, &model)?;
    let d = build_pq(&field, &model, depth)?;

    let mut all: Vec<(String, Residual)> = Vec::new();
    let mut rows = Vec::new();
    let mut families: Vec<(&str, Vec<Residual>)> = vec![
        ("sub", audit_sub(&field, &model, sub.as_sub().expect("sub cascade"))),
        ("super", audit_super(&field, &model, sup.as_super().expect("super cascade"))),
        ("drift", audit_pq(&field, &model, &d)),
    ];
    let mut diagnostic = Vec::new();
    for (name, set, consts) in [("sub U", &sub, &sub_c), ("super U", &sup, &sup_c)] {
        let triples = assemble_triples(set, 1.0, depth, cfg.expansion.leading)?;
        let dc = drift_constants(&model, &d, &triples);
        let (_, res) = build_u(&model, &d, &triples, &dc)?;
        let (gated, deep): (Vec<_>, Vec<_>) = res.into_iter().enumerate().partition(|(i, _)| i / triples.len() <= U_AUDIT_DEPTH);
        families.push((name, gated.into_iter().map(|p| p.1).collect()));
        diagnostic.push((name, deep.into_iter().map(|p| p.1).collect::<Vec<_>>()));
        let mut extra: Vec<Residual> =
            consts.divergence_defects.iter().enumerate().map(|(k, v)| Residual { equation: format!("divergence defect {k}"), value: v.abs(), scale: 0.0 }).collect();
        if consts.regime == Regime::Super {
            extra.push(Residual { equation: "mean fbar0".into(), value: consts.f0_bar_mean.abs(), scale: 0.0 });
        }
        families.push(if name == "sub U" { ("sub constants", extra) } else { ("super constants", extra) });
    }
    for (family, res) in &families {
        residual_rows(&mut report, &mut rows, family, res);
        all.extend(res.iter().map(|r| (family.to_string(), r.clone())));
    }
    for (name, res) in &diagnostic {
        residual_rows(&mut report, &mut rows, &format!("{name} diagnostic"), res);
    }
    if diagnostic.iter().any(|(_, r)| !r.is_empty()) {
        report.notes.push(format!("U^(k,i) with k > {U_AUDIT_DEPTH} are listed as diagnostics and not gated"));
    }
    report.tables.push(Table {
        name: "residuals".into(),
        headers: ["family", "equation", "value", "scale", "relative"].map(String::from).to_vec(),
        rows,
    });
    let worst = all.iter().map(|(_, r)| r.relative()).fold(0.0, f64::max);
    report.verdict(Criterion::C1, &format!("max relative residual over {} equations", all.len()), worst < RESIDUAL_TOL, worst, "< 1e-6");
    for (family, r) in all.iter().filter(|(_, r)| !(r.relative() < RESIDUAL_TOL)) {
        report.verdict(Criterion::C1, &format!("{family}: {}", r.equation), false, r.relative(), "< 1e-6");
    }
    let detected = negative_control(&field, &model, sup.as_super().expect("super cascade"));
    report.verdict(Criterion::C1, "negative control: perturbed chi0 is flagged by name", detected, f64::from(u8::from(detected)), "flagged");

    // C5.
    let m = &cfg.macro_;
    let hw = window_half_width(&m.iota, field.lambda, m.t_final);
    let zgrid = SpaceTimeGrid::new(-hw, hw, 512, m.t_final, m.nt)?;
    for (set, consts) in [(&sub, &sub_c), (&sup, &sup_c)] {
        let triples = assemble_triples(set, 1.0, depth, cfg.expansion.leading)?;
        let dc = drift_constants(&model, &d, &triples);
        let u0 = solve_u0_with(consts.a_eff, &m.iota, &zgrid, m.substeps, 6)?;
        let s = w_recursion(consts.regime, &dc, consts.a_eff, &consts.a_k_eff, u0, depth, m.substeps)?;
        let regime = format!("{:?}", consts.regime).to_lowercase();
        for (l, z) in s.z_check.iter().enumerate() {
            report.record(None, None, &format!("{regime} Z{l}"), "relative_defect", *z);
        }
        let worst = s.z_check.iter().copied().fold(0.0, f64::max);
        report.verdict(Criterion::C5, &format!("{regime}: max over l <= {} of the Z defect", s.z_check.len().saturating_sub(1)), worst < Z_TOL && !s.z_check.is_empty(), worst, "< 1e-8");
    }

    // C4.
    let y_only = field_for(cfg, CoefficientSpec::YOnly { base: 2.0, amplitude: 1.0 }, &model)?;
    let ys = build_sub_cascade(&y_only, &model, depth)?;
    let chi_max = ys.as_sub().expect("sub cascade").chi.iter().map(|c| c.max_abs()).fold(0.0, f64::max);
    report.verdict(Criterion::C4, "y-only: max |chi^j|", chi_max < DEGENERACY_TOL, chi_max, "< 1e-10");
    let yc = effective_constants(&build_super_cascade(&y_only, &model, 1, &[])?, &y_only, &model)?;
    let ls = yc.lambda_super.expect("super constants");
    let lmax = ls.q_weighted.abs().max(ls.sigma_weighted.abs());
    report.verdict(Criterion::C4, "y-only: super-diffusive Lambda (both variants)", lmax < DEGENERACY_TOL, lmax, "< 1e-10");
    let z_only = field_for(cfg, CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 }, &model)?;
    let zc = effective_constants(&build_sub_cascade(&z_only, &model, 0)?, &z_only, &model)?;
    report.verdict(Criterion::C4, "z-only: sub-diffusive Lambda", zc.lambda_total.abs() < DEGENERACY_TOL, zc.lambda_total.abs(), "< 1e-10");
    let zs = build_super_cascade(&z_only, &model, 1, &[])?;
    let k0 = zs.as_super().expect("super cascade").kappa[0].max_abs();
    report.verdict(Criterion::C4, "z-only: max |kappa^0|", k0 < DEGENERACY_TOL, k0, "< 1e-10");

    // C6.
    let s = sup.as_super().expect("super cascade");
    let varies = s.a_bar.values().iter().any(|v| (v - s.a_bar.mean()).abs() > 1e-12);
    let probe_set;
    let probe = if varies {
        s
    } else {
        report.notes.push("C6 probe: the configured coefficient has constant abar, so the layer flows vanish; probing a = 2 + sin 2πz instead".into());
        probe_set = build_super_cascade(&z_only, &model, depth, &[])?;
        probe_set.as_super().expect("super cascade")
    };
    let k_max = depth.clamp(2, probe.chi.len() + 1);
    let coarse = initial_layer_constants_with(probe, k_max, LayerOptions::default())?;
    let fine = initial_layer_constants_with(probe, k_max, LayerOptions { dt: LayerOptions::default().dt / 2.0, ..LayerOptions::default() })?;
    report.verdict(Criterion::C6, "I0 = 1", coarse.i[0] == 1.0, coarse.i[0], "exact");
    report.verdict(Criterion::C6, "I1 = 0", coarse.i[1] == 0.0, coarse.i[1], "exact");
    let drift_i2 = (coarse.i[2] - fine.i[2]).abs();
    report.verdict(Criterion::C6, "|I2(dt) - I2(dt/2)|", drift_i2 < LAYER_DT_TOL, drift_i2, "< 1e-6");
    for (k, v) in coarse.i.iter().enumerate() {
        report.record(None, None, &format!("I{k}"), "value", *v);
    }
    for f in &coarse.beta_flows {
        let (r2, slope) = f.decay.map(|d| (d.r_squared, d.slope)).unwrap_or((0.0, 0.0));
        report.fits.push(crate::report::RateFit { key: format!("log norm of beta flow {}", f.k), slope, intercept: f.decay.map_or(0.0, |d| d.intercept), r_squared: r2 });
        report.verdict(Criterion::C6, &format!("beta flow {}: log-linear decay R^2", f.k), r2 > 0.99 && slope < 0.0, r2, "R^2 > 0.99, slope < 0");
    }
    report.record(None, None, "audit", "runtime_seconds", start.elapsed().as_secs_f64());
    Ok(report)
}

/// Perturb `χ^0` and check that the audit names it.
fn negative_control(field: &CoefficientField, model: &DiffusionModel, s: &crate::cell::SuperCorrectors) -> bool {
    let mut bad = s.clone();
    let grid = bad.chi[0].grid().clone();
    let bump = crate::grid::TorusField::from_fn(&grid, |z| 1e-3 * (2.0 * std::f64::consts::PI * z).cos());
    bad.chi[0] = &bad.chi[0] + &bump;
    audit_super(field, model, &bad).iter().any(|r| r.equation.starts_with("super chi0") && r.relative() >= RESIDUAL_TOL)
}

/// Effective constants of the configured coefficient and the closed-form
/// oracles (C2).
pub fn cmd_effective(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    let mut report = new_report("effective", cfg);
    let setup = Setup::new(cfg)?;
    let c = &setup.constants;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut push = |report: &mut EnsembleReport, name: String, v: f64| {
        report.record(None, None, &name, "value", v);
        rows.push(vec![name, v.to_string()]);
    };
    push(&mut report, "a_eff".into(), c.a_eff);
    for (k, v) in c.a_k_eff.iter().enumerate().skip(1) {
        push(&mut report, format!("a^{k},eff"), *v);
    }
    for (k, v) in c.ua_k_eff.iter().enumerate().skip(1) {
        push(&mut report, format!("ua^{k},eff"), *v);
    }
    for (k, v) in c.lambda_k.iter().enumerate() {
        push(&mut report, format!("Lambda_{k}"), *v);
    }
    push(&mut report, "Lambda".into(), c.lambda_total);
    if let Some(ls) = c.lambda_super {
        push(&mut report, "Lambda (q-weighted)".into(), ls.q_weighted);
        push(&mut report, "Lambda (sigma-weighted)".into(), ls.sigma_weighted);
    }
    for (l, row) in setup.drift.c.iter().enumerate() {
        for (m, v) in row.iter().enumerate() {
            push(&mut report, format!("C_{l},{m}"), *v);
        }
    }
    if let Some(layer) = &setup.layer {
        for (k, v) in layer.i.iter().enumerate() {
            push(&mut report, format!("I_{k}"), *v);
        }
    }
    report.tables.push(Table { name: "constants".into(), headers: vec!["name".into(), "value".into()], rows });
    report.notes.push(format!("alpha = {}, regime {:?}, corrector depth {}", setup.plan.alpha, c.regime, setup.depth));
    report.notes.extend(setup.plan.warnings.iter().cloned());

    let model = &setup.model;
    let z_only = field_for(cfg, CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 }, model)?;
    let constant = field_for(cfg, CoefficientSpec::Const { value: 2.0 }, model)?;
    for (name, f, exact, tol, tol_label) in [("2 + sin 2πz", &z_only, 3f64.sqrt(), A_EFF_TOL, "< 1e-10"), ("2", &constant, 2.0, 4.0 * f64::EPSILON, "exact (4 ulp)")] {
        let sub = effective_constants(&build_sub_cascade(f, model, 0)?, f, model)?.a_eff;
        let sup = effective_constants(&build_super_cascade(f, model, 1, &[])?, f, model)?.a_eff;
        for (regime, v) in [("sub", sub), ("super", sup)] {
            let err = (v - exact).abs() / exact;
            report.verdict(Criterion::C2, &format!("a = {name}, {regime}: |a_eff - exact| / exact"), err <= tol, err, tol_label);
        }
    }
    Ok(report)
}

/// `u^0 + ε χ^0(x/ε) ∂_x u^0` with the torus corrector of `a(z)`.
fn chi_layer<'a>(plan: &ExpansionPlan, u: &'a [MacroSolution], set: &'a CorrectorSet, eps: f64) -> Result<SpaceTimeField> {
    let terms = [PlanTerm { power: 0.0, term: Term::U { k: 0 } }, PlanTerm { power: 1.0, term: Term::ChiV { chi: 0, order: 1, v: 0 } }];
    let ing = Ingredients { u, v: u, correctors: Some(set), path: None };
    Ok(build_with_terms(plan, &terms, &ing, eps)?.to_field())
}

fn l2_diff(a: &SpaceTimeField, b: &SpaceTimeField) -> Result<f64> {
    let mut d = a.clone();
    d.axpy(-1.0, b)?;
    Ok(d.l2_norm())
}

fn final_level_l2(a: &SpaceTimeField, b: &SpaceTimeField) -> f64 {
    let g = &a.grid;
    let d: Vec<f64> = a.level(g.nt).iter().zip(b.level(g.nt)).map(|(x, y)| (x - y).powi(2)).collect();
    pair_level(g, &d, &vec![1.0; g.nx]).sqrt()
}

fn log_fit(eps: &[f64], vals: &[f64]) -> crate::stats::LinearFit {
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y)
}

/// Homogenization rate along the ε ladder: C7 for `a = a(z)`, C8 otherwise.
pub fn cmd_rate(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    let start = std::time::Instant::now();
    let mut report = new_report("rate", cfg);
    let setup = Setup::new(cfg)?;
    let y_free = cfg.coefficient.spec.is_y_independent();
    let runs = if y_free { 1 } else { cfg.eps.n_seeds };
    let cost = check_budget(cfg, setup.field.lambda, &cfg.eps.ladder.iter().map(|&e| (e, runs)).collect::<Vec<_>>())?;
    report.record(None, None, "budget", "estimated_node_steps", cost as f64);
    let ladder = cfg.eps.ladder.clone();
    let mut rows = Vec::new();
    if y_free {
        let chi_set = build_super_cascade(&setup.field, &setup.model, 1, &[])?;
        let (mut corrected, mut plain, mut last) = (Vec::new(), Vec::new(), Vec::new());
        for &eps in &ladder {
            let stack = setup.macro_stack(cfg, eps)?;
            let u = solve_eps(&eps_problem(cfg, &setup.model, &stack.grid, eps, 0))?;
            let layer = chi_layer(&setup.plan, &stack.u[..1], &chi_set, eps)?;
            let (c, p, f) = (l2_diff(&u, &layer)?, l2_diff(&u, &stack.u[0].u)?, final_level_l2(&u, &layer));
            for (metric, v) in [("corrected_l2", c), ("plain_l2", p), ("final_level_l2", f)] {
                report.record(None, Some(eps), "u_eps - layer", metric, v);
                rows.push(vec![eps.to_string(), String::new(), metric.into(), v.to_string()]);
            }
            corrected.push(c);
            plain.push(p);
            last.push(f);
        }
        for (key, vals) in [("corrected_l2", &corrected), ("plain_l2", &plain), ("final_level_l2", &last)] {
            let fit = log_fit(&ladder, vals);
            report.fits.push(crate::report::RateFit { key: key.into(), slope: fit.slope, intercept: fit.intercept, r_squared: fit.r_squared });
        }
        let order = report.fits[0].slope;
        report.verdict(Criterion::C7, "fitted order of |u_eps - u0 - eps chi0 u0_x| in L2(x, t)", (order - 1.0).abs() <= RATE_TOL, order, "1.0 ± 0.3");
        let secs = start.elapsed().as_secs_f64();
        report.verdict(Criterion::C7, "runtime over the ladder (s)", secs < 600.0, secs, "< 600");
    } else {
        let mut means = Vec::new();
        for (ie, &eps) in ladder.iter().enumerate() {
            let stack = setup.macro_stack(cfg, eps)?;
            let ing = Ingredients { u: &stack.u, v: &stack.v, correctors: Some(&setup.correctors), path: None };
            let e = build_e(&setup.plan, &ing, eps)?.to_field();
            let scale = eps.powf(-cfg.alpha() / 2.0);
            let vals: Vec<(u64, f64)> = (0..cfg.eps.n_seeds)
                .into_par_iter()
                .map(|s| {
                    let seed = seeds::split(cfg.seed, ie as u64, s as u64);
                    let u = solve_eps(&eps_problem(cfg, &setup.model, &stack.grid, eps, seed))?;
                    Ok((seed, scale * l2_diff(&u, &e)?))
                })
                .collect::<Result<_>>()?;
            for (seed, v) in &vals {
                report.record(Some(*seed), Some(eps), "normalized error", "eps^(-alpha/2) l2(u_eps - E)", *v);
                rows.push(vec![eps.to_string(), seed.to_string(), "normalized_l2".into(), v.to_string()]);
            }
            let xs: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let (mean, var) = mean_var(&xs);
            report.aggregates.push(crate::report::Aggregate { key: "normalized error".into(), epsilon: Some(eps), n: xs.len(), mean, variance: var, ci: variance_ci(&xs, cfg.law.ci_level) });
            means.push(mean);
        }
        for (i, w) in means.windows(2).enumerate() {
            let r = w[1] / w[0];
            report.verdict(Criterion::C8, &format!("mean ratio eps {} -> {}", ladder[i], ladder[i + 1]), r >= RATIO_BAND.0 && r <= RATIO_BAND.1, r, "[0.5, 2]");
        }
    }
    report.tables.push(Table { name: "ladder".into(), headers: ["epsilon", "seed", "metric", "value"].map(String::from).to_vec(), rows });
    Ok(report)
}

/// Functionals `∫∫ q^ε φ dx dt` of one path.
fn path_functionals(cfg: &ExperimentConfig, setup: &Setup, grid: &SpaceTimeGrid, e: &SpaceTimeField, phis: &[Vec<f64>], eps: f64, seed: u64) -> Result<Vec<f64>> {
    let p = eps_problem(cfg, &setup.model, grid, eps, seed);
    let w = time_weights(grid);
    let mut acc = vec![0.0; phis.len()];
    let mut diff = vec![0.0; grid.nx];
    solve_eps_observed(&p, |n, v| {
        for ((d, a), b) in diff.iter_mut().zip(v).zip(e.level(n)) {
            *d = a - b;
        }
        for (s, phi) in acc.iter_mut().zip(phis) {
            *s += w[n] * pair_level(grid, &diff, phi);
        }
    })?;
    let scale = eps.powf(-cfg.alpha() / 2.0);
    Ok(acc.into_iter().map(|s| scale * s).collect())
}

struct PhiSummary {
    label: String,
    mean: f64,
    se: f64,
    variance: f64,
    ci: (f64, f64),
    unit_variance: f64,
    degenerate: bool,
}

/// Law of `⟨q^ε, φ⟩` at finite ε against the limit SPDE: C9 below `α = 2`,
/// C10 above.
pub fn cmd_law(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    let mut report = new_report("law", cfg);
    let eps = cfg.law_epsilon();
    let setup = Setup::new(cfg)?;
    let n = cfg.law.n_paths;
    let cost = check_budget(cfg, setup.field.lambda, &[(eps, n)])?;
    report.record(None, Some(eps), "budget", "estimated_node_steps", cost as f64);
    let stack = setup.macro_stack(cfg, eps)?;
    let ing = Ingredients { u: &stack.u, v: &stack.v, correctors: Some(&setup.correctors), path: None };
    let e = build_e(&setup.plan, &ing, eps)?.to_field();
    let dict = &cfg.law.phi_dictionary;
    let xs = stack.grid.xs();
    let phis: Vec<Vec<f64>> = dict.iter().map(|phi| xs.iter().map(|&x| phi.eval(x)).collect()).collect();
    let samples: Vec<(u64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let seed = seeds::split(cfg.seed, 100, i as u64);
            path_functionals(cfg, &setup, &stack.grid, &e, &phis, eps, seed).map(|v| (seed, v))
        })
        .collect::<Result<_>>()?;

    let spde = LimitSpde::new(setup.constants.a_eff, 1.0, cfg.macro_.iota.clone(), stack.u[0].clone())?;
    let units: Vec<f64> = dict.iter().map(|phi| q0_variance(&spde, phi)).collect::<Result<_>>()?;
    let unit_max = units.iter().copied().fold(0.0, f64::max);
    let mut summaries = Vec::new();
    let mut hist = Vec::new();
    for (j, phi) in dict.iter().enumerate() {
        let vals: Vec<f64> = samples.iter().map(|s| s.1[j]).collect();
        for (seed, v) in &samples {
            report.record(Some(*seed), Some(eps), &phi.label(), "functional", v[j]);
        }
        let (mean, variance) = mean_var(&vals);
        let s = PhiSummary {
            label: phi.label(),
            mean,
            se: (variance / n as f64).sqrt(),
            variance,
            ci: variance_ci(&vals, cfg.law.ci_level),
            unit_variance: units[j],
            degenerate: units[j] <= 1e-10 * unit_max,
        };
        report.aggregates.push(crate::report::Aggregate { key: s.label.clone(), epsilon: Some(eps), n, mean, variance, ci: s.ci });
        histogram(&mut hist, phi, &vals, setup.constants.lambda_total * s.unit_variance);
        summaries.push((s, vals));
    }
    report.tables.push(Table { name: "histogram".into(), headers: ["phi", "bin_lo", "bin_hi", "count", "expected"].map(String::from).to_vec(), rows: hist });
    for (s, _) in summaries.iter().filter(|(s, _)| s.degenerate) {
        report.notes.push(format!("{}: the limit variance vanishes (odd test function against an even initial datum); excluded from the verdicts", s.label));
    }
    let live: Vec<&(PhiSummary, Vec<f64>)> = summaries.iter().filter(|(s, _)| !s.degenerate).collect();
    match setup.plan.regime() {
        Regime::Sub => {
            report.notes.push(format!(
                "finite-epsilon corroboration only at eps = {eps}: the eps -> 0 limit is NOT reproducible numerically, so these checks corroborate the limit law at one finite epsilon"
            ));
            let lambda = setup.constants.lambda_total;
            report.record(None, Some(eps), "Lambda", "value", lambda);
            if live.is_empty() {
                report.verdict(Criterion::C9, "non-degenerate test functions", false, 0.0, ">= 1");
            }
            for (s, vals) in live {
                let pred = lambda * s.unit_variance;
                report.record(None, Some(eps), &s.label, "predicted_variance", pred);
                report.verdict(Criterion::C9, &format!("{}: |mean| / SE", s.label), s.mean.abs() <= LAW_MEAN_SE * s.se, s.mean.abs() / s.se, "<= 3");
                let rel = (s.variance / pred - 1.0).abs();
                report.verdict(Criterion::C9, &format!("{}: |var / quadrature - 1|", s.label), rel <= LAW_VARIANCE_TOL, rel, "<= 0.2");
                let p = ks_p_value(ks_normal(vals, 0.0, pred), vals.len());
                report.verdict(Criterion::C9, &format!("{}: KS p-value against N(0, quadrature)", s.label), p > cfg.law.ks_level, p, &format!("> {}", cfg.law.ks_level));
            }
        }
        Regime::Super => {
            let ls = setup.constants.lambda_super.expect("super constants");
            let variants = [("q-weighted", ls.q_weighted), ("sigma-weighted", ls.sigma_weighted)];
            let mut flagged = Vec::new();
            for (name, lambda) in variants {
                report.record(None, Some(eps), &format!("Lambda {name}"), "value", lambda);
                let mut inside = !live.is_empty();
                for (s, _) in &live {
                    let pred = lambda * s.unit_variance;
                    report.record(None, Some(eps), &s.label, &format!("predicted_variance_{name}"), pred);
                    inside &= pred >= s.ci.0 && pred <= s.ci.1;
                }
                if inside {
                    flagged.push(name);
                }
            }
            let scale = ls.q_weighted.abs().max(ls.sigma_weighted.abs());
            let tie = (ls.q_weighted - ls.sigma_weighted).abs() <= 1e-10 * scale.max(1e-300) || scale <= 1e-12;
            if tie {
                report.notes.push(format!(
                    "Lambda variants tie ({} vs {}): the ensemble cannot distinguish them for this coefficient and environment",
                    ls.q_weighted, ls.sigma_weighted
                ));
            }
            for (s, _) in &live {
                report.notes.push(format!("{}: empirical variance {} with CI [{}, {}]", s.label, s.variance, s.ci.0, s.ci.1));
            }
            let separation = eps.powf(cfg.alpha() - 2.0) * 4.0 * std::f64::consts::PI.powi(2) * setup.field.a_bar().mean();
            report.record(None, Some(eps), "regime_separation", "value", separation);
            report.notes.push(format!(
                "regime separation eps^(alpha-2) 4 pi^2 mean(abar) = {separation:.3}; the super-diffusive law needs it well below 1"
            ));
            report.notes.push(format!("flagged variants: {flagged:?}"));
            let pass = flagged.len() == 1 || tie;
            report.verdict(Criterion::C10, "exactly one Lambda variant inside every variance CI, or a documented tie", pass, flagged.len() as f64, "1 flagged or tie");
        }
    }
    Ok(report)
}

fn histogram(rows: &mut Vec<Vec<String>>, phi: &TestFunction, vals: &[f64], variance: f64) {
    const BINS: usize = 20;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / BINS as f64).max(1e-300);
    let normal = (variance > 0.0).then(|| Normal::new(0.0, variance.sqrt()).expect("positive variance"));
    let mut counts = [0usize; BINS];
    for v in vals {
        counts[(((v - lo) / width) as usize).min(BINS - 1)] += 1;
    }
    for (b, c) in counts.iter().enumerate() {
        let (a, z) = (lo + b as f64 * width, lo + (b + 1) as f64 * width);
        let expected = normal.as_ref().map_or(f64::NAN, |nd| vals.len() as f64 * (nd.cdf(z) - nd.cdf(a)));
        rows.push(vec![phi.label(), a.to_string(), z.to_string(), c.to_string(), expected.to_string()]);
    }
}

/// Invariance principle `Var A^ε(t) → Λ t` (C3).
pub fn cmd_invariance(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    let mut report = new_report("invariance", cfg);
    let model = cfg.environment.model()?;
    let alpha = cfg.law.invariance_alpha.unwrap_or(cfg.alpha());
    let (g, lambda) = match cfg.law.invariance_profile {
        InvarianceProfile::Identity => {
            let g = model.ygrid().nodes().to_vec();
            let lambda = model.clt_variance(&g)?;
            let oracle = (cfg.environment.sigma0 / cfg.environment.theta).powi(2);
            let err = (lambda - oracle).abs();
            report.record(None, None, "Lambda_g", "quadrature", lambda);
            report.record(None, None, "Lambda_g", "oracle sigma0^2/theta^2", oracle);
            report.verdict(Criterion::C3, "g = y: |quadrature - sigma0^2/theta^2|", err < CLT_TOL, err, "< 1e-8");
            (g, lambda)
        }
        InvarianceProfile::MeanA => {
            let field = field_for(cfg, cfg.coefficient.spec.clone(), &model)?;
            let c = effective_constants(&build_sub_cascade(&field, &model, 0)?, &field, &model)?;
            report.record(None, None, "Lambda_g", "quadrature", c.lambda_total);
            (c.mean_a_k[0].clone(), c.lambda_total)
        }
    };
    let ts = &cfg.law.invariance_t;
    let eps_min = cfg.law.invariance_eps.iter().copied().fold(f64::INFINITY, f64::min);
    let t_ref = ts.iter().copied().min_by(|a, b| (a - 1.0).abs().total_cmp(&(b - 1.0).abs())).unwrap_or(1.0);
    let mut rows = Vec::new();
    for (ie, &eps) in cfg.law.invariance_eps.iter().enumerate() {
        let mut vars = Vec::new();
        for (it, &t) in ts.iter().enumerate() {
            let seed = seeds::split(cfg.seed, 200 + ie as u64, it as u64);
            let est = invariance_variance(&model, &g, eps, alpha, t, cfg.law.invariance_paths, seed, cfg.law.ci_level)?;
            report.aggregates.push(crate::report::Aggregate { key: format!("A(t = {t})"), epsilon: Some(eps), n: est.n_paths, mean: est.mean, variance: est.variance, ci: est.variance_ci });
            rows.push(vec![eps.to_string(), t.to_string(), est.mean.to_string(), est.variance.to_string(), est.variance_ci.0.to_string(), est.variance_ci.1.to_string(), (lambda * t).to_string()]);
            if eps == eps_min && t == t_ref {
                let covered = est.variance_ci.0 <= lambda * t && lambda * t <= est.variance_ci.1;
                report.verdict(Criterion::C3, &format!("eps = {eps}, t = {t}, N = {}: Lambda t inside the variance CI", est.n_paths), covered, est.variance, &format!("CI [{:.4}, {:.4}]", est.variance_ci.0, est.variance_ci.1));
            }
            vars.push(est.variance);
        }
        if ts.len() >= 2 {
            let fit = linear_fit(ts, &vars);
            report.fits.push(crate::report::RateFit { key: format!("Var A(t) vs t at eps = {eps}"), slope: fit.slope, intercept: fit.intercept, r_squared: fit.r_squared });
        }
    }
    report.record(None, None, "alpha", "value", alpha);
    report.tables.push(Table { name: "variance".into(), headers: ["epsilon", "t", "mean", "variance", "ci_lo", "ci_hi", "lambda_t"].map(String::from).to_vec(), rows });
    Ok(report)
}

/// Merge JSON summaries.
pub fn cmd_report(paths: &[&Path]) -> Result<EnsembleReport> {
    let reports: Vec<EnsembleReport> = paths
        .iter()
        .map(|p| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))).and_then(|s| EnsembleReport::from_json(&s)))
        .collect::<Result<_>>()?;
    if reports.is_empty() {
        return Err(Error::Config("no reports to merge".into()));
    }
    Ok(EnsembleReport::merge(&reports))
}

/// Grid and cost of every ladder entry.
pub fn cmd_advise(cfg: &ExperimentConfig) -> Result<EnsembleReport> {
    let mut report = new_report("advise", cfg);
    let model = cfg.environment.model()?;
    let field = field_for(cfg, cfg.coefficient.spec.clone(), &model)?;
    let runs = if cfg.coefficient.spec.is_y_independent() { 1 } else { cfg.eps.n_seeds };
    let budget = budget(cfg)?;
    let mut rows = Vec::new();
    let mut total = 0u64;
    for &eps in &cfg.eps.ladder {
        let a = resolution_advice(eps, cfg.alpha(), cfg.macro_.t_final, &cfg.macro_.iota, field.lambda, None)?;
        let cost = a.node_steps.saturating_mul(runs as u64);
        total = total.saturating_add(cost);
        for (metric, v) in [("dx", a.dx), ("dt", a.dt), ("half_width", a.half_width), ("nx", a.nx as f64), ("steps", a.steps as f64), ("node_steps", a.node_steps as f64)] {
            report.record(None, Some(eps), "resolution", metric, v);
        }
        rows.push(vec![eps.to_string(), a.dx.to_string(), a.dt.to_string(), a.half_width.to_string(), a.nx.to_string(), a.steps.to_string(), a.node_steps.to_string(), runs.to_string(), cost.to_string()]);
    }
    report.tables.push(Table { name: "advice".into(), headers: ["epsilon", "dx", "dt", "half_width", "nx", "steps", "node_steps", "runs", "cost"].map(String::from).to_vec(), rows });
    report.record(None, None, "rate", "total_node_steps", total as f64);
    if let Some(b) = budget {
        report.notes.push(format!("budget {b} node-steps: the rate ladder {} it", if total <= b { "fits" } else { "exceeds" }));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(doc: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(doc).unwrap()
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::UnsupportedAlpha { alpha: 2.0, reason: "critical".into() }), 2);
        assert_eq!(exit_code(&Error::Unaffordable { cost: 2, budget: 1 }), 3);
        assert_eq!(exit_code(&Error::NoDecay("x".into())), 1);
    }

    #[test]
    fn budget_aborts_before_solving() {
        let c = cfg("[eps]\nbudget_node_steps = 1000\n");
        assert!(matches!(check_budget(&c, 2.0, &[(0.1, 1)]), Err(Error::Unaffordable { budget: 1000, .. })));
        assert!(matches!(cmd_rate(&c), Err(Error::Unaffordable { .. })));
        let free = cfg("");
        assert!(check_budget(&free, 2.0, &[(0.1, 1)]).unwrap() > 1000);
    }

    #[test]
    fn audit_passes_on_defaults() {
        let r = cmd_audit(&cfg("")).unwrap();
        let crit = r.criteria();
        for c in [Criterion::C1, Criterion::C4, Criterion::C5, Criterion::C6] {
            assert!(crit.contains(&(c, true)), "{c:?}: {:?}", r.verdicts.iter().filter(|v| !v.passed).collect::<Vec<_>>());
        }
        assert!(r.verdicts.iter().any(|v| v.check.starts_with("negative control") && v.passed));
        assert!(r.tables.iter().any(|t| t.name == "residuals" && !t.rows.is_empty()));
    }

    #[test]
    fn effective_closed_forms() {
        let r = cmd_effective(&cfg("")).unwrap();
        assert_eq!(r.criteria(), vec![(Criterion::C2, true)]);
    }

    #[test]
    fn advise_lists_the_ladder() {
        let r = cmd_advise(&cfg("[eps]\nladder = [0.2, 0.1]\nbudget_node_steps = 10\n")).unwrap();
        assert_eq!(r.tables[0].rows.len(), 2);
        assert!(r.notes.iter().any(|n| n.contains("exceeds")));
        assert!(r.verdicts.is_empty());
    }

    #[test]
    fn report_merges_written_summaries() {
        let dir = tempfile::tempdir().unwrap();
        let a = cmd_advise(&cfg("")).unwrap();
        let b = cmd_effective(&cfg("seed = 4")).unwrap();
        a.write(dir.path()).unwrap();
        b.write(dir.path()).unwrap();
        let pa = dir.path().join("advise.json");
        let pb = dir.path().join("effective.json");
        let m = cmd_report(&[pa.as_path(), pb.as_path()]).unwrap();
        assert_eq!(m.provenance.len(), 2);
        assert_eq!(m.verdicts.len(), b.verdicts.len());
        assert!(matches!(cmd_report(&[]), Err(Error::Config(_))));
        assert!(matches!(cmd_report(&[dir.path().join("missing.json").as_path()]), Err(Error::Config(_))));
    }
}
