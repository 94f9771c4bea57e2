//! The ergodic environment `ξ`: generator data, invariant density, path
//! sampling, the Poisson equation `L Q = g` and the CLT variance.
//!
//! The generator is `L = ½ q ∂²_y + b ∂_y` with `q = σ²`. In one dimension the
//! Poisson equation has the integrating-factor solution
//! `Q'(y) = 2 / (q(y) p(y)) ∫_{-Y}^{y} g p`.
//!
//! ```
//! use homoscale::environment::DiffusionModel;
//!
//! let model = DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 256).unwrap();
//! let g: Vec<f64> = model.ygrid().nodes().to_vec();
//! assert!((model.clt_variance(&g).unwrap() - 2.0).abs() < 1e-8);
//! ```

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{YGrid, DEFAULT_FD_ORDER};
use crate::quad::{gauss_legendre, lagrange_basis, stencil_start, GL8_NODES, GL8_WEIGHTS};
use crate::seeds;

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ModelKind {
    OrnsteinUhlenbeck { theta: f64, sigma0: f64 },
    Custom,
}

const STENCIL: usize = 6;

/// Precomputed cell weights of the integrating-factor quadrature.
#[derive(Clone, Debug)]
struct PoissonKernel {
    split: usize,
    starts: Vec<usize>,
    forward: Vec<[f64; STENCIL]>,
    backward: Vec<[f64; STENCIL]>,
    plain: Vec<[f64; STENCIL]>,
    ratio: Vec<f64>,
}

/// A one-dimensional ergodic diffusion on a truncated window.
#[derive(Clone)]
pub struct DiffusionModel {
    kind: ModelKind,
    drift: ScalarFn,
    sigma: ScalarFn,
    log_density: Vec<f64>,
    ygrid: Arc<YGrid>,
    b: Vec<f64>,
    q: Vec<f64>,
    kernel: PoissonKernel,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("kind", &self.kind)
            .field("y_points", &self.ygrid.len())
            .field("half_width", &self.ygrid.half_width())
            .finish()
    }
}

/// Solution of `L Q = g` together with its derivative.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub values: Vec<f64>,
    pub derivative: Vec<f64>,
}

/// A sampled environment trajectory `ξ_0, ξ_dt, …`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub dt: f64,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl PathSample {
    pub fn duration(&self) -> f64 {
        self.dt * (self.values.len() - 1) as f64
    }

    /// Linear interpolation at time `s`.
    pub fn at(&self, s: f64) -> f64 {
        let x = (s / self.dt).max(0.0);
        let i = (x.floor() as usize).min(self.values.len() - 2);
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

/// Exact Gaussian transition of `dξ = -θ ξ ds + σ₀ dB`; valid for `σ₀ = 0`.
#[derive(Clone, Copy, Debug)]
pub struct OuTransition {
    pub theta: f64,
    pub sigma0: f64,
}

impl OuTransition {
    pub fn stationary_variance(&self) -> f64 {
        self.sigma0 * self.sigma0 / (2.0 * self.theta)
    }

    /// Path of `n` steps of size `dt` started at `x0`.
    pub fn path_from<R: Rng>(&self, x0: f64, dt: f64, n: usize, rng: &mut R) -> Vec<f64> {
        let decay = (-self.theta * dt).exp();
        let spread = (self.stationary_variance() * (1.0 - decay * decay)).sqrt();
        let mut out = Vec::with_capacity(n + 1);
        let mut x = x0;
        out.push(x);
        for _ in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            x = x * decay + spread * z;
            out.push(x);
        }
        out
    }
}

impl DiffusionModel {
    /// `dξ = -θ ξ ds + σ₀ dB`, stationary law `N(0, σ₀²/(2θ))`.
    pub fn ornstein_uhlenbeck(theta: f64, sigma0: f64, half_width: f64, n: usize) -> Result<Self> {
        Self::ornstein_uhlenbeck_with_order(theta, sigma0, half_width, n, DEFAULT_FD_ORDER)
    }

    pub fn ornstein_uhlenbeck_with_order(theta: f64, sigma0: f64, half_width: f64, n: usize, fd_order: usize) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::InvalidModel(format!("OU rate theta = {theta} must be positive")));
        }
        if !(sigma0 > 0.0) {
            return Err(Error::InvalidModel(format!("OU noise sigma0 = {sigma0} must be positive")));
        }
        let var = sigma0 * sigma0 / (2.0 * theta);
        let drift: ScalarFn = Arc::new(move |y| -theta * y);
        let sigma: ScalarFn = Arc::new(move |_| sigma0);
        let log_density: ScalarFn = Arc::new(move |y| -0.5 * y * y / var);
        Self::build(ModelKind::OrnsteinUhlenbeck { theta, sigma0 }, drift, sigma, log_density, half_width, n, fd_order)
    }

    /// Custom drift and diffusion; the density is `p ∝ q⁻¹ exp(∫_0^y 2b/q)`.
    pub fn custom(drift: ScalarFn, sigma: ScalarFn, half_width: f64, n: usize, fd_order: usize) -> Result<Self> {
        let (b, s) = (drift.clone(), sigma.clone());
        let ratio = move |y: f64| 2.0 * b(y) / (s(y) * s(y));
        let s2 = sigma.clone();
        let log_density: ScalarFn = Arc::new(move |y: f64| {
            let segments = ((y.abs() / 0.05).ceil() as usize).max(1);
            -(s2(y) * s2(y)).ln() + gauss_legendre(&ratio, 0.0, y, segments)
        });
        Self::build(ModelKind::Custom, drift, sigma, log_density, half_width, n, fd_order)
    }

    fn build(
        kind: ModelKind,
        drift: ScalarFn,
        sigma: ScalarFn,
        log_density: ScalarFn,
        half_width: f64,
        n: usize,
        fd_order: usize,
    ) -> Result<Self> {
        if !(half_width > 0.0) || n < 16 {
            return Err(Error::InvalidYGrid(format!("half width {half_width}, {n} nodes")));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * h).collect();
        let q: Vec<f64> = nodes.iter().map(|&y| sigma(y) * sigma(y)).collect();
        let b: Vec<f64> = nodes.iter().map(|&y| drift(y)).collect();
        let qmin = q.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(qmin > 0.0) || q.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("diffusion is not uniformly elliptic on the window (min q = {qmin})")));
        }
        let outer = n / 8;
        let recurrent = (0..outer).chain(n - outer..n).all(|i| b[i] * nodes[i] < 0.0);
        if !recurrent {
            return Err(Error::InvalidModel("drift is not inward near the window edge".into()));
        }
        let psi: Vec<f64> = nodes.iter().map(|&y| log_density(y)).collect();
        let psi_max = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !psi_max.is_finite() {
            return Err(Error::NonIntegrable);
        }
        let psi: Vec<f64> = psi.iter().map(|v| v - psi_max).collect();
        let density: Vec<f64> = psi.iter().map(|v| v.exp()).collect();
        if density[0] > 1e-6 || density[n - 1] > 1e-6 {
            return Err(Error::NonIntegrable);
        }
        let ygrid = Arc::new(YGrid::new(half_width, n, &density, fd_order)?);
        let split = density
            .iter()
            .enumerate()
            .fold(0, |best, (i, &p)| if p > density[best] { i } else { best });

        let mut starts = Vec::with_capacity(n - 1);
        let mut forward = Vec::with_capacity(n - 1);
        let mut backward = Vec::with_capacity(n - 1);
        let mut plain = Vec::with_capacity(n - 1);
        let mut ratio = Vec::with_capacity(n - 1);
        for c in 0..n - 1 {
            let start = stencil_start(c, STENCIL, n);
            let xs = &nodes[start..start + STENCIL];
            let (mut fw, mut bw, mut pw) = ([0.0; STENCIL], [0.0; STENCIL], [0.0; STENCIL]);
            for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
                let s = nodes[c] + 0.5 * h * (1.0 + x);
                let ps = log_density(s) - psi_max;
                let basis = lagrange_basis(xs, s);
                let ef = (ps - psi[c + 1]).exp();
                let eb = (ps - psi[c]).exp();
                for j in 0..STENCIL {
                    let base = 0.5 * h * w * basis[j];
                    fw[j] += base * ef;
                    bw[j] += base * eb;
                    pw[j] += base;
                }
            }
            starts.push(start);
            forward.push(fw);
            backward.push(bw);
            plain.push(pw);
            ratio.push((psi[c] - psi[c + 1]).exp());
        }
        let kernel = PoissonKernel { split, starts, forward, backward, plain, ratio };
        Ok(Self { kind, drift, sigma, log_density: psi, ygrid, b, q, kernel })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn ygrid(&self) -> &Arc<YGrid> {
        &self.ygrid
    }

    pub fn drift_at(&self, y: f64) -> f64 {
        (self.drift)(y)
    }

    pub fn sigma_at(&self, y: f64) -> f64 {
        (self.sigma)(y)
    }

    /// `b` on the nodes.
    pub fn drift_nodes(&self) -> &[f64] {
        &self.b
    }

    /// `q = σ²` on the nodes.
    pub fn q_nodes(&self) -> &[f64] {
        &self.q
    }

    pub fn sigma_nodes(&self) -> Vec<f64> {
        self.q.iter().map(|v| v.sqrt()).collect()
    }

    /// Normalized invariant density on the nodes (`∫ p dy = 1` by the trapezoid rule).
    pub fn invariant_density(&self) -> Vec<f64> {
        self.ygrid.density().to_vec()
    }

    /// Log-density relative to its maximum, on the nodes.
    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    /// Discrete generator `½ q Q'' + b Q'`.
    pub fn generator(&self, f: &[f64]) -> Vec<f64> {
        let d1 = self.ygrid.derivative(f);
        let d2 = self.ygrid.second_derivative(f);
        (0..f.len()).map(|i| 0.5 * self.q[i] * d2[i] + self.b[i] * d1[i]).collect()
    }

    /// Weak stationarity residual `∫ (L φ) p dy` for a test function given
    /// with its first two derivatives.
    pub fn weak_stationarity_residual(&self, dphi: impl Fn(f64) -> f64, d2phi: impl Fn(f64) -> f64) -> f64 {
        let lphi: Vec<f64> = self
            .ygrid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &y)| 0.5 * self.q[i] * d2phi(y) + self.b[i] * dphi(y))
            .collect();
        self.ygrid.average(&lphi)
    }

    /// Check `∫ g p = 0` at the scale of `g`.
    pub fn check_centered(&self, g: &[f64], context: &str) -> Result<()> {
        let integral = self.ygrid.average(g);
        let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if integral.abs() > 1e-8 * scale {
            return Err(Error::NotCentered { context: context.into(), integral });
        }
        Ok(())
    }

    /// Solve `L Q = g` with `Q` anchored to zero at the center node.
    pub fn solve_poisson(&self, g: &[f64]) -> Result<PoissonSolution> {
        self.check_centered(g, "poisson source")?;
        Ok(self.solve_poisson_unchecked(g))
    }

    pub(crate) fn solve_poisson_unchecked(&self, g: &[f64]) -> PoissonSolution {
        let n = g.len();
        let k = &self.kernel;
        let cell = |weights: &[f64; STENCIL], c: usize, f: &[f64]| -> f64 {
            let s = k.starts[c];
            weights.iter().zip(&f[s..s + STENCIL]).map(|(w, v)| w * v).sum()
        };
        // Scaled fluxes F(y)/p(y), marched from each edge toward the mode.
        let mut scaled = vec![0.0; n];
        for c in 0..k.split {
            scaled[c + 1] = scaled[c] * k.ratio[c] + cell(&k.forward[c], c, g);
        }
        for c in (k.split..n - 1).rev() {
            scaled[c] = scaled[c + 1] / k.ratio[c] - cell(&k.backward[c], c, g);
        }
        let mut left = 0.0;
        for c in 0..k.split {
            left = left * k.ratio[c] + cell(&k.forward[c], c, g);
        }
        scaled[k.split] = left;
        let derivative: Vec<f64> = scaled.iter().zip(&self.q).map(|(s, q)| 2.0 * s / q).collect();
        let center = self.ygrid.center();
        let mut values = vec![0.0; n];
        for c in center..n - 1 {
            values[c + 1] = values[c] + cell(&k.plain[c], c, &derivative);
        }
        for c in (0..center).rev() {
            values[c] = values[c + 1] - cell(&k.plain[c], c, &derivative);
        }
        PoissonSolution { values, derivative }
    }

    /// `Λ_g = ∫ (Q')² q p dy` with `L Q = g`.
    pub fn clt_variance(&self, g: &[f64]) -> Result<f64> {
        let sol = self.solve_poisson(g)?;
        let integrand: Vec<f64> = sol.derivative.iter().zip(&self.q).map(|(d, q)| d * d * q).collect();
        Ok(self.ygrid.average(&integrand))
    }

    /// Draw from the invariant law.
    pub fn sample_stationary<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.kind {
            ModelKind::OrnsteinUhlenbeck { theta, sigma0 } => {
                let z: f64 = rng.sample(StandardNormal);
                z * (sigma0 * sigma0 / (2.0 * theta)).sqrt()
            }
            ModelKind::Custom => {
                let u: f64 = rng.gen();
                let w = self.ygrid.weights();
                let nodes = self.ygrid.nodes();
                let mut acc = 0.0;
                for i in 0..w.len() {
                    if acc + w[i] >= u {
                        let f = if w[i] > 0.0 { (u - acc) / w[i] } else { 0.0 };
                        let h = self.ygrid.spacing();
                        return nodes[i] + (f - 0.5) * h;
                    }
                    acc += w[i];
                }
                nodes[w.len() - 1]
            }
        }
    }

    /// Stationary path on `[0, T_path]` with step `dt`; exact for OU,
    /// Euler–Maruyama with eight substeps otherwise.
    pub fn sample_path(&self, dt: f64, t_path: f64, seed: u64) -> PathSample {
        let n = (t_path / dt - 1e-9).ceil().max(0.0) as usize;
        let mut rng = seeds::rng(seed);
        let x0 = self.sample_stationary(&mut rng);
        let values = match self.kind {
            ModelKind::OrnsteinUhlenbeck { theta, sigma0 } => OuTransition { theta, sigma0 }.path_from(x0, dt, n, &mut rng),
            ModelKind::Custom => {
                let sub = 8;
                let h = dt / sub as f64;
                let sq = h.sqrt();
                let mut x = x0;
                let mut out = Vec::with_capacity(n + 1);
                out.push(x);
                for _ in 0..n {
                    for _ in 0..sub {
                        let z: f64 = rng.sample(StandardNormal);
                        x += self.drift_at(x) * h + self.sigma_at(x) * sq * z;
                    }
                    out.push(x);
                }
                out
            }
        };
        PathSample { dt, values, seed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> DiffusionModel {
        DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 256).unwrap()
    }

    fn residual_interior(model: &DiffusionModel, q: &[f64], g: &[f64]) -> f64 {
        let lq = model.generator(q);
        model.ygrid().interior().into_iter().map(|i| (lq[i] - g[i]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn ou_density_is_standard_normal() {
        let m = reference();
        let p = m.invariant_density();
        let h = m.ygrid().spacing();
        let integral = crate::quad::trapezoid(&p, h);
        assert!((integral - 1.0).abs() < 1e-10);
        for (y, v) in m.ygrid().nodes().iter().zip(&p) {
            let exact = (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert!((v - exact).abs() < 1e-10);
        }
        let m2 = DiffusionModel::ornstein_uhlenbeck(2.0, 2f64.sqrt(), 8.0, 256).unwrap();
        let var = m2.ygrid().average(&m2.ygrid().nodes().iter().map(|y| y * y).collect::<Vec<_>>());
        assert!((var - 0.5).abs() < 1e-10);
    }

    #[test]
    fn quartic_custom_density_is_stationary() {
        let m = DiffusionModel::custom(Arc::new(|y| -y * y * y), Arc::new(|_| 2f64.sqrt()), 5.0, 256, 6).unwrap();
        // p ∝ exp(-y⁴/4) directly.
        let y0 = m.ygrid().nodes()[0];
        let l0 = m.log_density()[0] + y0.powi(4) / 4.0;
        for (y, l) in m.ygrid().nodes().iter().zip(m.log_density()) {
            assert!((l + y.powi(4) / 4.0 - l0).abs() < 1e-9);
        }
        let tests: [(fn(f64) -> f64, fn(f64) -> f64); 3] = [
            (|y| y.cos(), |y| -y.sin()),
            (|y| (1.0 - 2.0 * y * y) * (-y * y).exp(), |y| (4.0 * y * y * y - 6.0 * y) * (-y * y).exp()),
            (|y| 1.0 / y.cosh().powi(2), |y| -2.0 * y.tanh() / y.cosh().powi(2)),
        ];
        for (d1, d2) in tests {
            assert!(m.weak_stationarity_residual(d1, d2).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_repelling_or_degenerate_models() {
        assert!(DiffusionModel::custom(Arc::new(|y| y), Arc::new(|_| 1.0), 8.0, 64, 4).is_err());
        assert!(DiffusionModel::ornstein_uhlenbeck(1.0, 0.0, 8.0, 64).is_err());
    }

    #[test]
    fn poisson_closed_forms() {
        let m = reference();
        let zero = vec![0.0; 256];
        let s = m.solve_poisson(&zero).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));

        let g: Vec<f64> = m.ygrid().nodes().to_vec();
        let s = m.solve_poisson(&g).unwrap();
        let c = m.ygrid().center();
        // Zero flux at the window edge perturbs Q' by p(Y)/p(y), negligible for |y| <= 5.
        for (i, y) in m.ygrid().nodes().iter().enumerate().filter(|(_, y)| y.abs() <= 5.0) {
            assert!((s.values[i] - (-y + m.ygrid().nodes()[c])).abs() < 1e-8, "Q at {y}");
            assert!((s.derivative[i] + 1.0).abs() < 1e-8);
        }
        assert!(residual_interior(&m, &s.values, &g) < 1e-8);

        let g: Vec<f64> = m.ygrid().nodes().iter().map(|y| y * y - 1.0).collect();
        let g0 = m.ygrid().average(&g);
        let g: Vec<f64> = g.iter().map(|v| v - g0).collect();
        let s = m.solve_poisson(&g).unwrap();
        let yc = m.ygrid().nodes()[c];
        for (i, y) in m.ygrid().nodes().iter().enumerate().filter(|(_, y)| y.abs() <= 5.0) {
            assert!((s.values[i] - (-(y * y) / 2.0 + yc * yc / 2.0)).abs() < 1e-8, "Q at {y}");
        }
        assert!(residual_interior(&m, &s.values, &g) < 1e-8);
    }

    #[test]
    fn poisson_rejects_uncentered() {
        let m = reference();
        assert!(matches!(m.solve_poisson(&vec![1.0; 256]), Err(Error::NotCentered { .. })));
    }

    #[test]
    fn clt_variances() {
        let m = reference();
        assert_eq!(m.clt_variance(&vec![0.0; 256]).unwrap(), 0.0);
        let g: Vec<f64> = m.ygrid().nodes().to_vec();
        assert!((m.clt_variance(&g).unwrap() - 2.0).abs() < 1e-8);
        // y² - 1: Q' = -y, so Λ = ∫ 2 y² p = 2.
        let g: Vec<f64> = m.ygrid().nodes().iter().map(|y| y * y - 1.0).collect();
        let g0 = m.ygrid().average(&g);
        let g: Vec<f64> = g.iter().map(|v| v - g0).collect();
        assert!((m.clt_variance(&g).unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn smooth_sources_have_small_residuals() {
        let m = reference();
        let sources: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|y: f64| y.tanh()),
            Box::new(|y: f64| y.tanh().powi(2)),
            Box::new(|y: f64| (4.0 - y.tanh().powi(2)).sqrt()),
            Box::new(|y: f64| y.sin() * (-0.1 * y * y).exp()),
        ];
        for f in sources {
            let g: Vec<f64> = m.ygrid().nodes().iter().map(|&y| f(y)).collect();
            let g0 = m.ygrid().average(&g);
            let g: Vec<f64> = g.iter().map(|v| v - g0).collect();
            let s = m.solve_poisson(&g).unwrap();
            let r = residual_interior(&m, &s.values, &g);
            assert!(r < 1e-6, "residual {r}");
        }
    }

    #[test]
    fn paths_are_reproducible_and_stationary() {
        let m = reference();
        let a = m.sample_path(0.1, 5.0, 42);
        let b = m.sample_path(0.1, 5.0, 42);
        assert_eq!(a, b);
        assert_eq!(a.values.len(), 51);
        assert_ne!(a, m.sample_path(0.1, 5.0, 43));
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|i| m.sample_path(0.5, 2.0, seeds::split(3, 0, i)).values[4]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Standard error of a normal sample variance: sqrt(2/(n-1)).
        assert!((var - 1.0).abs() < 3.0 * (2.0 / (n - 1) as f64).sqrt());
    }

    #[test]
    fn noiseless_ou_decays_exponentially() {
        let t = OuTransition { theta: 1.0, sigma0: 0.0 };
        let mut rng = seeds::rng(0);
        let p = t.path_from(2.0, 0.01, 300, &mut rng);
        for (k, v) in p.iter().enumerate() {
            assert!((v - 2.0 * (-0.01 * k as f64).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn custom_paths_track_the_invariant_law() {
        let m = DiffusionModel::custom(Arc::new(|y| -y), Arc::new(|_| 2f64.sqrt()), 8.0, 256, 6).unwrap();
        let n = 4000;
        let xs: Vec<f64> = (0..n).map(|i| m.sample_path(0.25, 1.0, seeds::split(5, 1, i)).values[4]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.08);
    }

    proptest! {
        #[test]
        fn clt_variance_is_quadratic(c in -3.0f64..3.0, w in 0.2f64..2.0) {
            let m = reference();
            let g: Vec<f64> = m.ygrid().nodes().iter().map(|&y| (w * y).tanh()).collect();
            let base = m.clt_variance(&g).unwrap();
            let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
            let s = m.clt_variance(&scaled).unwrap();
            prop_assert!(base >= 0.0);
            prop_assert!((s - c * c * base).abs() < 1e-10 * (1.0 + base));
        }
    }
}
