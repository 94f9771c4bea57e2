//! The deterministic macroscopic hierarchy `u^0, u^k, v^k` on a truncated
//! window with homogeneous Dirichlet edges.
//!
//! ```
//! use homoscale::macro_pde::{solve_u0, Iota, SpaceTimeGrid};
//!
//! let grid = SpaceTimeGrid::new(-16.0, 16.0, 512, 0.5, 256).unwrap();
//! let u0 = solve_u0(1.0, &Iota::Gaussian { s0: 1.0 }, &grid).unwrap();
//! let exact = u0.closed_form.as_ref().unwrap();
//! let err = u0.u.level(256).iter().zip(exact.level(256)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
//! assert!(err < 1e-3);
//! ```

pub mod layer;

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use layer::{initial_layer_constants, InitialLayer};

/// Initial datum `ı`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Iota {
    /// `exp(-x²/(2 s0))`.
    Gaussian { s0: f64 },
    /// Smooth bump `exp(1 - 1/(1 - (x/r)²))` on `|x| < r`.
    Bump { radius: f64 },
}

impl Default for Iota {
    fn default() -> Self {
        Self::Gaussian { s0: 1.0 }
    }
}

impl Iota {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Gaussian { s0 } => (-x * x / (2.0 * s0)).exp(),
            Self::Bump { radius } => {
                let r = x / radius;
                if r.abs() >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                }
            }
        }
    }

    /// Radius beyond which `|ı| < 1e-10 ‖ı‖∞`.
    pub fn support_radius(&self) -> f64 {
        match *self {
            Self::Gaussian { s0 } => (2.0 * s0 * 1e10f64.ln()).sqrt(),
            Self::Bump { radius } => radius,
        }
    }

    /// Heat-equation solution with diffusivity `a`, when closed form.
    pub fn heat_closed_form(&self, a: f64, x: f64, t: f64) -> Option<f64> {
        match *self {
            Self::Gaussian { s0 } => {
                let s = s0 + 2.0 * a * t;
                Some((s0 / s).sqrt() * (-x * x / (2.0 * s)).exp())
            }
            Self::Bump { .. } => None,
        }
    }
}

/// Half-width `R_ı + 6 sqrt(2 λ T)`.
pub fn window_half_width(iota: &Iota, lambda: f64, t_final: f64) -> f64 {
    iota.support_radius() + 6.0 * (2.0 * lambda * t_final).sqrt()
}

/// Uniform nodes `x_i = x_min + i dx`, `i < nx`, and levels `t_n = n T / nt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub x_min: f64,
    pub dx: f64,
    pub nx: usize,
    pub t_final: f64,
    pub nt: usize,
}

impl SpaceTimeGrid {
    pub fn new(x_min: f64, x_max: f64, nx: usize, t_final: f64, nt: usize) -> Result<Self> {
        if nx < 8 || !(x_max > x_min) || !(t_final > 0.0) || nt == 0 {
            return Err(Error::Config(format!("invalid space-time grid [{x_min}, {x_max}] x {nx}, T = {t_final}, nt = {nt}")));
        }
        Ok(Self { x_min, dx: (x_max - x_min) / (nx - 1) as f64, nx, t_final, nt })
    }

    /// Symmetric window resolving `z = x/ε` with 16 nodes per period, `x_min` a multiple of `ε`.
    pub fn for_epsilon(eps: f64, half_width: f64, t_final: f64, nt: usize) -> Result<Self> {
        let periods = (half_width / eps).ceil() as usize;
        let nx = 2 * periods * 16 + 1;
        let mut g = Self::new(-(periods as f64) * eps, periods as f64 * eps, nx, t_final, nt)?;
        g.dx = eps / 16.0;
        Ok(g)
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.nt as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    pub fn levels(&self) -> usize {
        self.nt + 1
    }
}

/// Values on every `(level, node)` pair, level-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Arc<SpaceTimeGrid>,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Arc<SpaceTimeGrid>) -> Self {
        Self { grid: grid.clone(), data: vec![0.0; grid.nx * grid.levels()] }
    }

    pub fn from_fn(grid: &Arc<SpaceTimeGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for n in 0..grid.levels() {
            let t = grid.t(n);
            for (i, v) in out.level_mut(n).iter_mut().enumerate() {
                *v = f(grid.x(i), t);
            }
        }
        out
    }

    pub fn from_levels(grid: &Arc<SpaceTimeGrid>, levels: Vec<Vec<f64>>) -> Result<Self> {
        if levels.len() != grid.levels() || levels.iter().any(|l| l.len() != grid.nx) {
            return Err(Error::GridMismatch("level count or width".into()));
        }
        Ok(Self { grid: grid.clone(), data: levels.concat() })
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.data[n * nx..(n + 1) * nx]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [f64] {
        let nx = self.grid.nx;
        &mut self.data[n * nx..(n + 1) * nx]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn check_grid(&self, other: &SpaceTimeField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    pub fn axpy(&mut self, c: f64, other: &SpaceTimeField) -> Result<()> {
        self.check_grid(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    #[must_use]
    pub fn scale(&self, c: f64) -> Self {
        Self { grid: self.grid.clone(), data: self.data.iter().map(|v| c * v).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ u(x, t) dx` at level `n` by the trapezoid rule.
    pub fn mass(&self, n: usize) -> f64 {
        crate::quad::trapezoid(self.level(n), self.grid.dx)
    }

    /// `‖u‖_{L²(window × (0,T))}` by the trapezoid rule in both variables.
    pub fn l2_norm(&self) -> f64 {
        let per_level: Vec<f64> = (0..self.grid.levels()).map(|n| crate::quad::trapezoid(&self.level(n).iter().map(|v| v * v).collect::<Vec<_>>(), self.grid.dx)).collect();
        crate::quad::trapezoid(&per_level, self.grid.dt()).sqrt()
    }

    /// Spectral `x`-derivative of every level.
    pub fn derivative(&self, spectral: &XSpectral, order: usize) -> Self {
        let mut out = self.clone();
        for n in 0..self.grid.levels() {
            let d = spectral.derivative(self.level(n), order);
            out.level_mut(n).copy_from_slice(&d);
        }
        out
    }
}

/// FFT-based differentiation treating the window as one period.
#[derive(Clone)]
pub struct XSpectral {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for XSpectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("XSpectral").field("n", &self.n).field("length", &self.length).finish()
    }
}

impl XSpectral {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self { n: grid.nx, length: grid.nx as f64 * grid.dx, forward: planner.plan_fft_forward(grid.nx), inverse: planner.plan_fft_inverse(grid.nx) }
    }

    fn apply(&self, f: &[f64], symbol: impl Fn(f64) -> Complex64) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let m = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            if n % 2 == 0 && k == n / 2 {
                *c = Complex64::new(0.0, 0.0);
                continue;
            }
            *c *= symbol(2.0 * std::f64::consts::PI * m / self.length);
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    pub fn derivative(&self, f: &[f64], order: usize) -> Vec<f64> {
        if order == 0 {
            return f.to_vec();
        }
        self.apply(f, |k| Complex64::new(0.0, k).powu(order as u32))
    }

    /// Zero-mean spectral antiderivative.
    pub fn antiderivative(&self, f: &[f64]) -> Vec<f64> {
        self.apply(f, |k| if k == 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, -1.0 / k) })
    }
}

/// A macroscopic solution with lazily cached spectral `x`-derivatives.
#[derive(Clone, Debug)]
pub struct MacroSolution {
    pub u: SpaceTimeField,
    pub closed_form: Option<SpaceTimeField>,
    pub max_order: usize,
    spectral: Arc<XSpectral>,
    derivs: Vec<OnceLock<SpaceTimeField>>,
}

impl MacroSolution {
    pub fn new(u: SpaceTimeField, max_order: usize, spectral: Arc<XSpectral>) -> Self {
        Self { u, closed_form: None, max_order, spectral, derivs: (0..max_order).map(|_| OnceLock::new()).collect() }
    }

    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.u.grid
    }

    pub fn spectral(&self) -> &Arc<XSpectral> {
        &self.spectral
    }

    /// `∂_x^order u`.
    pub fn derivative(&self, order: usize) -> Result<&SpaceTimeField> {
        if order == 0 {
            return Ok(&self.u);
        }
        if order > self.max_order {
            return Err(Error::DerivativeOrderExceeded { requested: order, max: self.max_order });
        }
        Ok(self.derivs[order - 1].get_or_init(|| self.u.derivative(&self.spectral, order)))
    }

    /// Edge decay `|u| (1 + |x|)^4 ≤ C` with `C` fitted on the inner half of the window.
    pub fn edge_decay_ok(&self) -> bool {
        let g = self.grid();
        let half = 0.5 * g.x_max().abs().min(g.x_min.abs());
        let mut inner: f64 = 0.0;
        let mut outer: f64 = 0.0;
        for n in 0..g.levels() {
            for (i, v) in self.u.level(n).iter().enumerate() {
                let x = g.x(i);
                let w = v.abs() * (1.0 + x.abs()).powi(4);
                if x.abs() <= half {
                    inner = inner.max(w);
                } else {
                    outer = outer.max(w);
                }
            }
        }
        outer <= inner.max(1e-300)
    }
}

/// Crank–Nicolson for `u_t = a u_xx + S` with homogeneous Dirichlet edges.
/// The source is given on the output levels and interpolated linearly in time.
pub fn heat_solve(grid: &Arc<SpaceTimeGrid>, a: f64, initial: &[f64], source: Option<&SpaceTimeField>, substeps: usize) -> SpaceTimeField {
    let nx = grid.nx;
    let substeps = substeps.max(1);
    let dt = grid.dt() / substeps as f64;
    let r = a * dt / (grid.dx * grid.dx);
    let mut out = SpaceTimeField::zeros(grid);
    out.level_mut(0).copy_from_slice(initial);
    let mut u = initial.to_vec();
    u[0] = 0.0;
    u[nx - 1] = 0.0;
    let m = nx - 2;
    let mut rhs = vec![0.0; m];
    let mut cp = vec![0.0; m];
    let mut s_lo = vec![0.0; nx];
    let mut s_hi = vec![0.0; nx];
    for n in 0..grid.nt {
        for sub in 0..substeps {
            if let Some(s) = source {
                let (w0, w1) = (sub as f64 / substeps as f64, (sub + 1) as f64 / substeps as f64);
                for i in 0..nx {
                    let (a0, a1) = (s.level(n)[i], s.level(n + 1)[i]);
                    s_lo[i] = a0 + w0 * (a1 - a0);
                    s_hi[i] = a0 + w1 * (a1 - a0);
                }
            }
            for j in 0..m {
                let i = j + 1;
                rhs[j] = u[i] + 0.5 * r * (u[i + 1] - 2.0 * u[i] + u[i - 1]) + 0.5 * dt * (s_lo[i] + s_hi[i]);
            }
            thomas_constant(-0.5 * r, 1.0 + r, &mut rhs, &mut cp);
            u[1..=m].copy_from_slice(&rhs);
        }
        out.level_mut(n + 1).copy_from_slice(&u);
    }
    out
}

/// Solve the symmetric Toeplitz tridiagonal system `(off, diag, off) x = d` in place.
pub(crate) fn thomas_constant(off: f64, diag: f64, d: &mut [f64], cp: &mut [f64]) {
    let m = d.len();
    cp[0] = off / diag;
    d[0] /= diag;
    for i in 1..m {
        let den = diag - off * cp[i - 1];
        cp[i] = off / den;
        d[i] = (d[i] - off * d[i - 1]) / den;
    }
    for i in (0..m - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}

/// `u^0` of the homogenized problem.
pub fn solve_u0(a_eff: f64, iota: &Iota, grid: &SpaceTimeGrid) -> Result<MacroSolution> {
    solve_u0_with(a_eff, iota, grid, 1, 6)
}

pub fn solve_u0_with(a_eff: f64, iota: &Iota, grid: &SpaceTimeGrid, substeps: usize, max_order: usize) -> Result<MacroSolution> {
    if !(a_eff > 0.0) {
        return Err(Error::NotElliptic(format!("a_eff = {a_eff}")));
    }
    let init: Vec<f64> = grid.xs().iter().map(|&x| iota.eval(x)).collect();
    let peak = init.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let edge = init[0].abs().max(init[grid.nx - 1].abs());
    if edge > 1e-10 * peak {
        return Err(Error::WindowTooSmall { edge, bound: 1e-10 * peak });
    }
    let grid = Arc::new(grid.clone());
    let u = heat_solve(&grid, a_eff, &init, None, substeps);
    let spectral = Arc::new(XSpectral::new(&grid));
    let mut sol = MacroSolution::new(u, max_order, spectral);
    if let Some(Some(_)) = iota.heat_closed_form(a_eff, 0.0, 0.0).map(Some) {
        sol.closed_form = Some(SpaceTimeField::from_fn(&grid, |x, t| iota.heat_closed_form(a_eff, x, t).unwrap_or(0.0)));
    }
    Ok(sol)
}

/// `u^j` with `∂_t u^j = a_eff u^j_xx + Σ_k a^{k,eff} ∂²u^{j-k} + w^j`, `u^j(·,0) = 0`.
/// `lower` holds `u^0 … u^{j-1}`; `a_k_eff[k]` is used for `k ≥ 1`.
pub fn solve_uk(j: usize, a_eff: f64, a_k_eff: &[f64], w_j: Option<&SpaceTimeField>, lower: &[MacroSolution], substeps: usize) -> Result<MacroSolution> {
    if j == 0 || lower.len() < j {
        return Err(Error::ScheduleCycle { requested: format!("u^{j}") });
    }
    let first = &lower[0];
    let grid = first.grid().clone();
    let mut source = SpaceTimeField::zeros(&grid);
    for k in 1..=j {
        let c = a_k_eff.get(k).copied().unwrap_or(0.0);
        if c != 0.0 {
            source.axpy(c, lower[j - k].derivative(2)?)?;
        }
    }
    if let Some(w) = w_j {
        source.axpy(1.0, w)?;
    }
    let zero = vec![0.0; grid.nx];
    let u = heat_solve(&grid, a_eff, &zero, Some(&source), substeps);
    Ok(MacroSolution::new(u, first.max_order, first.spectral.clone()))
}

/// `v^j` with `v^j_t = a_eff v^j_xx + Σ_k ua^k ∂^{k+2} v^{j-k}`, `v^j(·,0) = I_j ∂^j u^0(·,0)`.
/// `lower` holds `v^0 = u^0, v^1, …, v^{j-1}`.
pub fn solve_vk(j: usize, a_eff: f64, ua_k_eff: &[f64], i_list: &[f64], lower: &[MacroSolution], substeps: usize) -> Result<MacroSolution> {
    if j == 0 || lower.len() < j {
        return Err(Error::ScheduleCycle { requested: format!("v^{j}") });
    }
    let u0 = &lower[0];
    let grid = u0.grid().clone();
    let mut source = SpaceTimeField::zeros(&grid);
    for k in 1..=j {
        let c = ua_k_eff.get(k).copied().unwrap_or(0.0);
        if c != 0.0 {
            source.axpy(c, lower[j - k].derivative(k + 2)?)?;
        }
    }
    let ij = i_list.get(j).copied().ok_or_else(|| Error::MissingIngredient(format!("I_{j}")))?;
    let init: Vec<f64> = u0.derivative(j)?.level(0).iter().map(|v| ij * v).collect();
    let v = heat_solve(&grid, a_eff, &init, Some(&source), substeps);
    Ok(MacroSolution::new(v, u0.max_order, u0.spectral.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_legendre;

    fn grid(nx: usize, nt: usize, t: f64) -> SpaceTimeGrid {
        SpaceTimeGrid::new(-16.0, 16.0, nx, t, nt).unwrap()
    }

    fn linf(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn u0_matches_closed_form() {
        let g = grid(1024, 2048, 0.5);
        let s = solve_u0(1.0, &Iota::Gaussian { s0: 1.0 }, &g).unwrap();
        let exact = s.closed_form.as_ref().unwrap();
        assert!(linf(s.u.level(2048), exact.level(2048)) < 1e-4);
        assert_eq!(s.u.level(0), exact.level(0));
        let m0 = s.u.mass(0);
        for n in [512, 1024, 2048] {
            assert!((s.u.mass(n) - m0).abs() < 1e-8);
        }
        assert!(s.edge_decay_ok());
    }

    #[test]
    fn u0_second_order_convergence() {
        let errs: Vec<f64> = [128usize, 256, 512]
            .iter()
            .map(|&n| {
                let g = grid(n + 1, n, 0.5);
                let s = solve_u0(1.0, &Iota::Gaussian { s0: 1.0 }, &g).unwrap();
                linf(s.u.level(n), s.closed_form.as_ref().unwrap().level(n))
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order}");
        }
    }

    #[test]
    fn rejects_narrow_window() {
        let g = SpaceTimeGrid::new(-3.0, 3.0, 64, 0.1, 4).unwrap();
        assert!(matches!(solve_u0(1.0, &Iota::default(), &g), Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn spectral_derivatives_of_gaussian() {
        let g = grid(1024, 4, 0.1);
        let s = solve_u0(1.0, &Iota::Gaussian { s0: 1.0 }, &g).unwrap();
        let d2 = s.derivative(2).unwrap();
        for (i, v) in d2.level(0).iter().enumerate() {
            let x = g.x(i);
            assert!((v - (x * x - 1.0) * (-x * x / 2.0).exp()).abs() < 1e-10);
        }
        assert!(matches!(s.derivative(7), Err(Error::DerivativeOrderExceeded { .. })));
        let anti = s.spectral().antiderivative(s.derivative(1).unwrap().level(0));
        let mean = s.u.level(0).iter().sum::<f64>() / g.nx as f64;
        assert!(linf(&anti, &s.u.level(0).iter().map(|v| v - mean).collect::<Vec<_>>()) < 1e-10);
    }

    #[test]
    fn uk_with_no_forcing_is_zero() {
        let g = grid(256, 64, 0.5);
        let u0 = solve_u0(1.0, &Iota::default(), &g).unwrap();
        let u1 = solve_uk(1, 1.0, &[1.0, 0.0], None, &[u0.clone()], 1).unwrap();
        assert_eq!(u1.u.max_abs(), 0.0);
        assert!(matches!(solve_uk(2, 1.0, &[], None, &[u0], 1), Err(Error::ScheduleCycle { .. })));
    }

    #[test]
    fn uk_matches_duhamel_oracle() {
        // Time-constant source e^{-x²/2}: u(x,t) = ∫_0^t G_{t-s} * S ds in closed form per s.
        let g = Arc::new(grid(1024, 1024, 0.5));
        let w = SpaceTimeField::from_fn(&g, |x, _| (-x * x / 2.0).exp());
        let u0 = solve_u0(1.0, &Iota::default(), &g).unwrap();
        let u1 = solve_uk(1, 1.0, &[1.0, 0.0], Some(&w), &[u0], 1).unwrap();
        let t = 0.5;
        for i in (0..g.nx).step_by(37) {
            let x = g.x(i);
            let oracle = gauss_legendre(|s| (1.0 + 2.0 * (t - s)).powf(-0.5) * (-x * x / (2.0 * (1.0 + 2.0 * (t - s)))).exp(), 0.0, t, 8);
            assert!((u1.u.level(1024)[i] - oracle).abs() < 1e-5);
        }
        assert!(u1.u.level(0).iter().all(|v| *v == 0.0));
        // Duhamel balance: mass grows by the integrated source.
        let src_mass = w.mass(0);
        assert!((u1.u.mass(1024) - t * src_mass).abs() < 1e-7);
    }

    #[test]
    fn v1_starts_at_zero() {
        let g = grid(256, 64, 0.5);
        let u0 = solve_u0(1.0, &Iota::default(), &g).unwrap();
        let v1 = solve_vk(1, 1.0, &[0.0, 0.0], &[1.0, 0.0], &[u0], 1).unwrap();
        assert_eq!(v1.u.max_abs(), 0.0);
    }

    #[test]
    fn for_epsilon_resolves_cells() {
        let g = SpaceTimeGrid::for_epsilon(0.1, 5.03, 1.0, 10).unwrap();
        assert_eq!(g.dx, 0.1 / 16.0);
        assert!(((g.x_min / 0.1).round() - g.x_min / 0.1).abs() < 1e-12);
        assert!(g.x_max() >= 5.03 && (g.x_max() + g.x_min).abs() < 1e-12);
    }
}
