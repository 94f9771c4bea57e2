//! The limit SPDE `dq = a_eff q_xx dt + Λ^{1/2} u^0_xx dW`, `q(·,0) = 0`:
//! exact variances of its linear functionals, a path sampler, and the
//! invariance-principle estimate behind `Λ`.
//!
//! Because the heat semigroup commutes with `∂²_x`, the stochastic
//! convolution gives `⟨q^0, φ⟩ = Λ^{1/2} ∫_0^T h(s) dW_s` with
//! `h(s) = ∫_s^T ⟨u^0_xx(t), φ⟩ dt`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::DiffusionModel;
use crate::error::{Error, Result};
use crate::expansion::{pair_level, time_weights, TestFunction};
use crate::macro_pde::{thomas_constant, Iota, MacroSolution, SpaceTimeField};
use crate::quad::gauss_legendre;
use crate::seeds;
use crate::stats::{mean_ci_half_width, mean_var, variance_ci};

#[derive(Clone, Debug)]
pub struct LimitSpde {
    pub a_eff: f64,
    pub lambda: f64,
    pub iota: Iota,
    pub u0: MacroSolution,
}

impl LimitSpde {
    pub fn new(a_eff: f64, lambda: f64, iota: Iota, u0: MacroSolution) -> Result<Self> {
        if !(a_eff > 0.0) {
            return Err(Error::NotElliptic(format!("a_eff = {a_eff}")));
        }
        if !(lambda >= 0.0) {
            return Err(Error::InvalidModel(format!("Λ = {lambda} is negative")));
        }
        Ok(Self { a_eff, lambda, iota, u0 })
    }
}

/// `⟨u^0_xx(t), φ⟩` for Gaussian `ı` (variance `s0`) and Gaussian `φ`.
fn gaussian_pairing(a: f64, s0: f64, center: f64, width: f64, t: f64) -> f64 {
    let s = s0 + 2.0 * a * t;
    let w2 = width * width;
    let v = s + w2;
    let f = (s0 / s).sqrt() * (2.0 * std::f64::consts::PI * s * w2 / v).sqrt() * (-center * center / (2.0 * v)).exp();
    f * (center * center / (v * v) - 1.0 / v)
}

/// Closed-form `Var⟨q^0, φ⟩` for Gaussian `ı` and `φ`, by Gauss–Legendre in time.
pub fn q0_variance_gaussian(a_eff: f64, lambda: f64, s0: f64, center: f64, width: f64, t_final: f64) -> f64 {
    let m = |t: f64| gaussian_pairing(a_eff, s0, center, width, t);
    let h = |s: f64| gauss_legendre(m, s, t_final, 8);
    lambda * gauss_legendre(|s| h(s).powi(2), 0.0, t_final, 8)
}

/// `Var⟨q^0, φ⟩` from `u^0_xx` on the stored levels (trapezoid in `x` and `t`).
pub fn q0_variance_grid(spde: &LimitSpde, phi: impl Fn(f64) -> f64) -> Result<f64> {
    let grid = spde.u0.grid().clone();
    let uxx = spde.u0.derivative(2)?;
    let values: Vec<f64> = grid.xs().iter().map(|&x| phi(x)).collect();
    let m: Vec<f64> = (0..grid.levels()).map(|n| pair_level(&grid, uxx.level(n), &values)).collect();
    let dt = grid.dt();
    let mut h = vec![0.0; grid.levels()];
    for n in (0..grid.nt).rev() {
        h[n] = h[n + 1] + 0.5 * dt * (m[n] + m[n + 1]);
    }
    let w = time_weights(&grid);
    Ok(spde.lambda * h.iter().zip(&w).map(|(h, w)| w * h * h).sum::<f64>())
}

/// `Var⟨q^0, φ⟩`, closed form when both `ı` and `φ` are Gaussian.
pub fn q0_variance(spde: &LimitSpde, phi: &TestFunction) -> Result<f64> {
    match (&spde.iota, phi) {
        (Iota::Gaussian { s0 }, TestFunction::Gaussian { center, width }) => {
            Ok(q0_variance_gaussian(spde.a_eff, spde.lambda, *s0, *center, *width, spde.u0.grid().t_final))
        }
        _ => q0_variance_grid(spde, |x| phi.eval(x)),
    }
}

/// One path of `q^0`: Crank–Nicolson half steps around each noise increment.
pub fn sample_q0(spde: &LimitSpde, substeps: usize, seed: u64) -> Result<SpaceTimeField> {
    let grid = spde.u0.grid().clone();
    let mut out = SpaceTimeField::zeros(&grid);
    if spde.lambda == 0.0 {
        return Ok(out);
    }
    let uxx = spde.u0.derivative(2)?;
    let nx = grid.nx;
    let m = nx - 2;
    let sub = substeps.max(1);
    let dt = grid.dt() / sub as f64;
    let r = 0.5 * spde.a_eff * dt / (grid.dx * grid.dx);
    let amp = spde.lambda.sqrt() * dt.sqrt();
    let mut rng = seeds::rng(seed);
    let mut q = vec![0.0; nx];
    let mut rhs = vec![0.0; m];
    let mut cp = vec![0.0; m];
    let mut half = |q: &mut Vec<f64>| {
        for j in 0..m {
            let i = j + 1;
            rhs[j] = q[i] + 0.5 * r * (q[i + 1] - 2.0 * q[i] + q[i - 1]);
        }
        thomas_constant(-0.5 * r, 1.0 + r, &mut rhs, &mut cp);
        q[1..=m].copy_from_slice(&rhs);
    };
    for n in 0..grid.nt {
        for s in 0..sub {
            half(&mut q);
            let z: f64 = StandardNormal.sample(&mut rng);
            let w = (s as f64 + 0.5) / sub as f64;
            let (lo, hi) = (uxx.level(n), uxx.level(n + 1));
            for i in 1..nx - 1 {
                q[i] += amp * z * (lo[i] + w * (hi[i] - lo[i]));
            }
            half(&mut q);
        }
        out.level_mut(n + 1).copy_from_slice(&q);
    }
    Ok(out)
}

/// Monte-Carlo estimate of `Var A^ε(t)`, `A^ε(t) = ε^{α/2} ∫_0^{t/ε^α} g(ξ_s) ds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEstimate {
    pub epsilon: f64,
    pub alpha: f64,
    pub t: f64,
    pub n_paths: usize,
    pub mean: f64,
    pub mean_half_width: f64,
    pub variance: f64,
    pub variance_ci: (f64, f64),
}

/// Fast-time step used to integrate `g(ξ_s)`.
pub const INVARIANCE_PATH_DT: f64 = 0.02;

/// Samples of `A^ε(t)` for the profile `g` given on the model's `y`-grid.
pub fn invariance_samples(model: &DiffusionModel, g: &[f64], epsilon: f64, alpha: f64, t: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>> {
    model.check_centered(g, "invariance-principle integrand")?;
    let ygrid = model.ygrid();
    let duration = t / epsilon.powf(alpha);
    let scale = epsilon.powf(alpha / 2.0);
    Ok((0..n_paths)
        .into_par_iter()
        .map(|i| {
            let path = model.sample_path(INVARIANCE_PATH_DT, duration, seeds::split(seed, 3, i as u64));
            let n = path.values.len();
            let h = duration / (n - 1) as f64;
            let vals: Vec<f64> = path.values.iter().map(|&y| ygrid.interpolate(g, y)).collect();
            let integral = h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n - 1]));
            scale * integral
        })
        .collect())
}

pub fn invariance_variance(model: &DiffusionModel, g: &[f64], epsilon: f64, alpha: f64, t: f64, n_paths: usize, seed: u64, level: f64) -> Result<InvarianceEstimate> {
    let xs = invariance_samples(model, g, epsilon, alpha, t, n_paths, seed)?;
    let (mean, variance) = mean_var(&xs);
    Ok(InvarianceEstimate {
        epsilon,
        alpha,
        t,
        n_paths,
        mean,
        mean_half_width: mean_ci_half_width(&xs, level),
        variance,
        variance_ci: variance_ci(&xs, level),
    })
}
