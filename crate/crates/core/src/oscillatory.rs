//! The oscillatory problem `u_t = (a(x/ε, ξ_{t/ε^α}) u_x)_x` along one
//! frozen environment path.
//!
//! ```
//! use homoscale::cell::CoefficientSpec;
//! use homoscale::macro_pde::{Iota, SpaceTimeGrid};
//! use homoscale::oscillatory::{solve_eps, EpsProblem};
//!
//! let grid = SpaceTimeGrid::for_epsilon(0.25, 9.0, 0.1, 4).unwrap();
//! let p = EpsProblem::deterministic(0.25, 1.0, CoefficientSpec::Const { value: 1.0 }, Iota::default(), grid);
//! let u = solve_eps(&p).unwrap();
//! assert!((u.mass(4) - u.mass(0)).abs() < 1e-7);
//! ```

use serde::{Deserialize, Serialize};

use crate::cell::CoefficientSpec;
use crate::environment::PathSample;
use crate::error::{Error, Result};
use crate::macro_pde::{window_half_width, Iota, SpaceTimeField, SpaceTimeGrid};
use crate::quad::{GL8_NODES, GL8_WEIGHTS};

/// Supported ε ladder.
pub const EPS_LADDER: [f64; 5] = [0.2, 0.141, 0.1, 0.071, 0.05];

/// Time integrator for the oscillatory problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeScheme {
    CrankNicolson,
    /// L-stable trapezoid / BDF2 splitting.
    #[default]
    TrBdf2,
}

#[derive(Clone, Debug)]
pub struct EpsProblem {
    pub epsilon: f64,
    pub alpha: f64,
    pub spec: CoefficientSpec,
    /// `None` only for coefficients independent of `y`.
    pub path: Option<PathSample>,
    pub iota: Iota,
    pub grid: SpaceTimeGrid,
    pub scheme: TimeScheme,
}

impl EpsProblem {
    pub fn deterministic(epsilon: f64, alpha: f64, spec: CoefficientSpec, iota: Iota, grid: SpaceTimeGrid) -> Self {
        Self { epsilon, alpha, spec, path: None, iota, grid, scheme: TimeScheme::default() }
    }

    /// Largest admissible step `min(ε^α/4, dx)`.
    pub fn dt_bound(&self) -> f64 {
        (self.epsilon.powf(self.alpha) / 4.0).min(self.grid.dx)
    }

    /// Substeps per stored level.
    pub fn substeps(&self) -> usize {
        (self.grid.dt() / self.dt_bound() * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }

    pub fn step(&self) -> f64 {
        self.grid.dt() / self.substeps() as f64
    }

    /// Path step placing every half-step time on a sample node.
    pub fn path_dt(&self) -> f64 {
        self.step() / self.epsilon.powf(self.alpha) / 2.0
    }

    /// Path duration `T / ε^α`.
    pub fn path_duration(&self) -> f64 {
        self.grid.t_final / self.epsilon.powf(self.alpha)
    }

    /// Number of cells per period of `a(·/ε)`.
    fn cells_per_period(&self) -> Result<usize> {
        let g = &self.grid;
        if g.dx > self.epsilon / 16.0 * (1.0 + 1e-9) {
            return Err(Error::ResolutionViolation(format!("dx = {} exceeds ε/16 = {}", g.dx, self.epsilon / 16.0)));
        }
        let p = self.epsilon / g.dx;
        let shift = g.x_min / self.epsilon;
        if (p - p.round()).abs() > 1e-9 || (shift - shift.round()).abs() > 1e-9 {
            return Err(Error::ResolutionViolation("grid not aligned with the period ε".into()));
        }
        Ok(p.round() as usize)
    }
}

/// Harmonic mean of `a(·, y)` over `[z0, z1]`.
fn cell_harmonic(spec: &CoefficientSpec, z0: f64, z1: f64, y: f64) -> f64 {
    let (mid, half) = (0.5 * (z0 + z1), 0.5 * (z1 - z0));
    let inv: f64 = GL8_NODES.iter().zip(GL8_WEIGHTS.iter()).map(|(x, w)| w / spec.eval(mid + half * x, y)).sum();
    2.0 / inv
}

/// Solve and hand every stored level to `observer(level, values)`.
pub fn solve_eps_observed(p: &EpsProblem, mut observer: impl FnMut(usize, &[f64])) -> Result<()> {
    let period = p.cells_per_period()?;
    let g = &p.grid;
    let nx = g.nx;
    let y_free = p.spec.is_y_independent();
    if p.path.is_none() && !y_free {
        return Err(Error::MissingIngredient("environment path for a y-dependent coefficient".into()));
    }
    if let Some(path) = &p.path {
        if path.duration() < p.path_duration() * (1.0 - 1e-12) {
            return Err(Error::PathTooShort { available: path.duration(), required: p.path_duration() });
        }
        if path.dt > p.step() / p.epsilon.powf(p.alpha) * (1.0 + 1e-9) {
            return Err(Error::ResolutionViolation(format!("path step {} coarser than one solver step", path.dt)));
        }
    }
    let init: Vec<f64> = g.xs().iter().map(|&x| p.iota.eval(x)).collect();
    observer(0, &init);
    let mut u = init;
    u[0] = 0.0;
    u[nx - 1] = 0.0;
    let sub = p.substeps();
    let dt = p.step();
    let r = dt / (2.0 * g.dx * g.dx);
    let offset = ((g.x_min / g.dx).round() as i64).rem_euclid(period as i64) as usize;
    let phase_k = |y: f64| -> Vec<f64> { (0..period).map(|j| cell_harmonic(&p.spec, j as f64 / period as f64, (j + 1) as f64 / period as f64, y)).collect() };
    let frozen = if y_free { Some(phase_k(0.0)) } else { None };
    let scale = p.epsilon.powf(p.alpha);
    let k_at = |t: f64| -> Vec<f64> {
        let table = match (&frozen, &p.path) {
            (Some(t), _) => t.clone(),
            (None, Some(path)) => phase_k(path.at(t / scale)),
            (None, None) => unreachable!(),
        };
        (0..nx - 1).map(|i| table[(i + offset) % period]).collect()
    };
    let g2 = 2.0 - std::f64::consts::SQRT_2;
    let mut k_prev = k_at(0.0);
    let mut rhs = vec![0.0; nx];
    let mut cp = vec![0.0; nx];
    let mut stage = vec![0.0; nx];
    let mut step_index = 0usize;
    for level in 1..=g.nt {
        for _ in 0..sub {
            let t0 = step_index as f64 * dt;
            let k_next = k_at(t0 + dt);
            match p.scheme {
                TimeScheme::CrankNicolson => {
                    apply_step(&k_prev, &u, r, &mut rhs);
                    implicit_solve(&k_next, r, &mut rhs, &mut cp, &mut u);
                }
                TimeScheme::TrBdf2 => {
                    let k_mid = if frozen.is_some() { k_next.clone() } else { k_at(t0 + g2 * dt) };
                    apply_step(&k_prev, &u, r * g2, &mut rhs);
                    implicit_solve(&k_mid, r * g2, &mut rhs, &mut cp, &mut stage);
                    let c1 = 1.0 / (g2 * (2.0 - g2));
                    let c0 = (1.0 - g2).powi(2) * c1;
                    for i in 1..nx - 1 {
                        rhs[i] = c1 * stage[i] - c0 * u[i];
                    }
                    implicit_solve(&k_next, 2.0 * r * (1.0 - g2) / (2.0 - g2), &mut rhs, &mut cp, &mut u);
                }
            }
            k_prev = k_next;
            step_index += 1;
        }
        observer(level, &u);
    }
    Ok(())
}

/// `rhs = u + r D(k D u)` on the interior, `r = c dt / dx²`.
fn apply_step(k: &[f64], u: &[f64], r: f64, rhs: &mut [f64]) {
    for i in 1..u.len() - 1 {
        rhs[i] = u[i] + r * (k[i] * (u[i + 1] - u[i]) - k[i - 1] * (u[i] - u[i - 1]));
    }
}

/// Solve `(I - r D(k D)) out = rhs` with homogeneous Dirichlet edges.
fn implicit_solve(k: &[f64], r: f64, rhs: &mut [f64], cp: &mut [f64], out: &mut [f64]) {
    let nx = rhs.len();
    let mut prev_c = 0.0;
    let mut prev_d = 0.0;
    for i in 1..nx - 1 {
        let lower = -r * k[i - 1];
        let diag = 1.0 + r * (k[i - 1] + k[i]);
        let upper = -r * k[i];
        let den = diag - lower * prev_c;
        cp[i] = upper / den;
        rhs[i] = (rhs[i] - lower * prev_d) / den;
        prev_c = cp[i];
        prev_d = rhs[i];
    }
    out[0] = 0.0;
    out[nx - 1] = 0.0;
    out[nx - 2] = rhs[nx - 2];
    for i in (1..nx - 2).rev() {
        out[i] = rhs[i] - cp[i] * out[i + 1];
    }
}

/// `u^ε` on every stored level.
pub fn solve_eps(p: &EpsProblem) -> Result<SpaceTimeField> {
    let grid = std::sync::Arc::new(p.grid.clone());
    let mut out = SpaceTimeField::zeros(&grid);
    solve_eps_observed(p, |n, v| out.level_mut(n).copy_from_slice(v))?;
    Ok(out)
}

/// Smallest admissible grid and its cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolutionAdvice {
    pub epsilon: f64,
    pub alpha: f64,
    pub dx: f64,
    pub dt: f64,
    pub half_width: f64,
    pub nx: usize,
    pub steps: u64,
    pub node_steps: u64,
}

pub fn resolution_advice(epsilon: f64, alpha: f64, t_final: f64, iota: &Iota, lambda: f64, budget: Option<u64>) -> Result<ResolutionAdvice> {
    if !(0.02..=0.5).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0.02, 0.5]")));
    }
    let dx = epsilon / 16.0;
    let dt = (epsilon.powf(alpha) / 4.0).min(dx);
    let half_width = window_half_width(iota, lambda, t_final);
    let periods = (half_width / epsilon).ceil() as usize;
    let nx = 2 * periods * 16 + 1;
    let steps = (t_final / dt - 1e-9).ceil() as u64;
    let node_steps = steps * nx as u64;
    if let Some(b) = budget {
        if node_steps > b {
            return Err(Error::Unaffordable { cost: node_steps, budget: b });
        }
    }
    Ok(ResolutionAdvice { epsilon, alpha, dx, dt, half_width, nx, steps, node_steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::DiffusionModel;
    use crate::macro_pde::solve_u0;

    fn grid(eps: f64, hw: f64, t: f64, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::for_epsilon(eps, hw, t, nt).unwrap()
    }

    #[test]
    fn constant_coefficient_matches_heat_kernel() {
        let g = grid(0.1, 10.0, 0.5, 8);
        let p = EpsProblem::deterministic(0.1, 1.0, CoefficientSpec::Const { value: 1.5 }, Iota::default(), g.clone());
        let u = solve_eps(&p).unwrap();
        for n in [4, 8] {
            let err = (0..g.nx).map(|i| (u.level(n)[i] - Iota::default().heat_closed_form(1.5, g.x(i), g.t(n)).unwrap()).abs()).fold(0.0, f64::max);
            assert!(err < 1e-4, "level {n}: {err}");
        }
        assert!((u.mass(8) - u.mass(0)).abs() < 1e-7);
    }

    #[test]
    fn maximum_principle_and_determinism() {
        let model = DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 64).unwrap();
        let g = grid(0.2, 9.0, 0.2, 4);
        let mut p = EpsProblem::deterministic(0.2, 1.0, CoefficientSpec::reference(), Iota::default(), g);
        p.path = Some(model.sample_path(p.path_dt(), p.path_duration(), 11));
        let a = solve_eps(&p).unwrap();
        let b = solve_eps(&p).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.max_abs() <= 1.0 + 1e-6);
        assert!((a.mass(4) - a.mass(0)).abs() < 1e-7);
    }

    #[test]
    fn guards() {
        let g = SpaceTimeGrid::new(-8.0, 8.0, 201, 0.1, 2).unwrap();
        let p = EpsProblem::deterministic(0.1, 1.0, CoefficientSpec::Const { value: 1.0 }, Iota::default(), g);
        assert!(matches!(solve_eps(&p), Err(Error::ResolutionViolation(_))));
        let p = EpsProblem::deterministic(0.2, 1.0, CoefficientSpec::reference(), Iota::default(), grid(0.2, 9.0, 0.1, 2));
        assert!(matches!(solve_eps(&p), Err(Error::MissingIngredient(_))));
        let mut p = p;
        p.path = Some(PathSample { dt: p.path_dt(), values: vec![0.0; 3], seed: 0 });
        assert!(matches!(solve_eps(&p), Err(Error::PathTooShort { .. })));
    }

    #[test]
    fn periodic_rate_is_first_order() {
        // L² distance to u^0 in the deterministic z-only case.
        let spec = CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 };
        let a_eff = 3f64.sqrt();
        let errs: Vec<f64> = [0.1, 0.071, 0.05]
            .iter()
            .map(|&eps| {
                let g = grid(eps, 12.0, 0.25, 4);
                let p = EpsProblem::deterministic(eps, 1.0, spec.clone(), Iota::default(), g.clone());
                let u = solve_eps(&p).unwrap();
                let u0 = solve_u0(a_eff, &Iota::default(), &g).unwrap();
                let mut d = u.clone();
                d.axpy(-1.0, u0.closed_form.as_ref().unwrap()).unwrap();
                d.l2_norm()
            })
            .collect();
        let order = crate::stats::linear_fit(&[0.1f64.ln(), 0.071f64.ln(), 0.05f64.ln()], &errs.iter().map(|e| e.ln()).collect::<Vec<_>>()).slope;
        assert!((order - 1.0).abs() < 0.3, "order {order}, errors {errs:?}");
    }

    /// L² distance between a solve and its refinement with dx and dt halved.
    fn refinement_gap(spec: CoefficientSpec, refine: usize, smooth: bool) -> f64 {
        let model = DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 64).unwrap();
        let eps = 0.2;
        let mut coarse = grid(eps, 9.0, 0.25, 8);
        for _ in 0..refine {
            coarse.nx = 2 * (coarse.nx - 1) + 1;
            coarse.dx /= 2.0;
        }
        let mut fine = coarse.clone();
        fine.nx = 2 * (coarse.nx - 1) + 1;
        fine.dx /= 2.0;
        let mut pf = EpsProblem::deterministic(eps, 1.0, spec.clone(), Iota::default(), fine);
        let mut path = model.sample_path(pf.path_dt(), pf.path_duration(), 5);
        if smooth {
            let dt = path.dt;
            for (i, v) in path.values.iter_mut().enumerate() {
                *v = 1.5 * (3.0 * i as f64 * dt).sin();
            }
        }
        pf.path = Some(path);
        let uf = solve_eps(&pf).unwrap();
        let mut pc = EpsProblem::deterministic(eps, 1.0, spec, Iota::default(), coarse.clone());
        pc.path = pf.path.clone();
        let mut d = solve_eps(&pc).unwrap();
        for n in 0..coarse.levels() {
            for (i, v) in d.level_mut(n).iter_mut().enumerate() {
                *v -= uf.level(n)[2 * i];
            }
        }
        d.l2_norm()
    }

    #[test]
    fn self_convergence_reference() {
        let gap = refinement_gap(CoefficientSpec::reference(), 0, false);
        assert!(gap < 1e-4, "{gap}");
    }

    #[test]
    fn smooth_path_second_order() {
        let g0 = refinement_gap(CoefficientSpec::reference(), 0, true);
        let g1 = refinement_gap(CoefficientSpec::reference(), 1, true);
        assert!(g0 / g1 > 2.0, "{g0} {g1}");
    }

    #[test]
    fn schemes_agree() {
        let spec = CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 };
        let g = grid(0.1, 10.0, 0.25, 64);
        let mut p = EpsProblem::deterministic(0.1, 1.0, spec, Iota::default(), g);
        let a = solve_eps(&p).unwrap();
        p.scheme = TimeScheme::CrankNicolson;
        let mut b = solve_eps(&p).unwrap();
        b.axpy(-1.0, &a).unwrap();
        assert!(b.level(64).iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-4);
    }

    #[test]
    fn advice_formulas() {
        let a = resolution_advice(0.1, 1.0, 1.0, &Iota::default(), 3.0, None).unwrap();
        assert_eq!(a.dx, 0.1 / 16.0);
        assert_eq!(a.dt, a.dx);
        let b = resolution_advice(0.05, 1.0, 1.0, &Iota::default(), 3.0, None).unwrap();
        assert_eq!(b.dx, a.dx / 2.0);
        let c = resolution_advice(0.1, 3.0, 1.0, &Iota::default(), 3.0, None).unwrap();
        assert!((c.dt - 0.001 / 4.0).abs() < 1e-15);
        assert!(matches!(resolution_advice(0.05, 3.0, 1.0, &Iota::default(), 3.0, Some(1000)), Err(Error::Unaffordable { .. })));
    }
}
