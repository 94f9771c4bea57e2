//! Initial-layer constants `I_k` from torus heat flows `∂_t β = (ā β_z)_z + φ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cell::SuperCorrectors;
use crate::error::{Error, Result};
use crate::grid::TorusField;
use crate::stats::{linear_fit, LinearFit};

/// Record of the flow `B^k` used for `I_k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BetaFlow {
    pub k: usize,
    pub times: Vec<f64>,
    /// `‖B^k(·, s)‖_{L²(T)}`.
    pub norms: Vec<f64>,
    /// `∫_0^s ⟨ā B^k_z⟩` up to the stopping time.
    pub integral: f64,
    /// Exponential tail bound for the truncated part of the integral.
    pub tail_bound: f64,
    pub decay: Option<LinearFit>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InitialLayer {
    /// `I_0 = 1`, `I_1 = 0`, `I_2`, …
    pub i: Vec<f64>,
    pub beta_flows: Vec<BetaFlow>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerOptions {
    pub dt: f64,
    /// Stop once every flow component is below `tol` times its peak.
    pub tol: f64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self { dt: 1e-3, tol: 1e-12 }
    }
}

struct TorusOps {
    d: DMatrix<f64>,
    a_bar: DVector<f64>,
    a_bar_z: DVector<f64>,
    a_minus: DVector<f64>,
    lu_minus: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    plus: DMatrix<f64>,
    dt: f64,
    n: usize,
}

impl TorusOps {
    fn new(s: &SuperCorrectors, dt: f64) -> Self {
        let grid = s.a_bar.grid();
        let n = grid.len();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = TorusField::new(grid, e).expect("grid width").derivative();
            for (i, v) in col.values().iter().enumerate() {
                d[(i, j)] = *v;
            }
        }
        let a_bar = DVector::from_column_slice(s.a_bar.values());
        let a_op = &d * DMatrix::from_diagonal(&a_bar) * &d;
        let id = DMatrix::identity(n, n);
        let lu_minus = (&id - &a_op * (0.5 * dt)).lu();
        let plus = &id + &a_op * (0.5 * dt);
        let a_bar_z = &d * &a_bar;
        let a_minus = a_bar.add_scalar(-s.a_eff);
        Self { d, a_bar, a_bar_z, a_minus, lu_minus, plus, dt, n }
    }

    fn mean(&self, v: &DVector<f64>) -> f64 {
        v.sum() / self.n as f64
    }

    fn flux(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.a_bar.component_mul(&(&self.d * beta))
    }

    fn norm(&self, v: &DVector<f64>) -> f64 {
        (v.norm_squared() / self.n as f64).sqrt()
    }
}

/// One chain `β̂^{j,0}, β̂^{j,1}, …` with its drift integrals `m̂`.
struct Chain {
    beta: Vec<DVector<f64>>,
    m: Vec<f64>,
    mhat: Vec<f64>,
    peak: Vec<f64>,
}

impl Chain {
    fn new(init: DVector<f64>, len: usize, ops: &TorusOps) -> Self {
        let n = ops.n;
        let mut c = Self { beta: vec![DVector::zeros(n); len], m: vec![0.0; len], mhat: vec![0.0; len], peak: vec![0.0; len] };
        c.beta[0] = init;
        for l in 0..len {
            c.m[l] = c.drift(l, ops);
            c.peak[l] = ops.norm(&c.beta[l]);
        }
        c
    }

    /// `(ā - a_eff)(m̂^{l-2} + β^{l-1})`, zero for `l = 0`.
    fn lagged(&self, l: usize, ops: &TorusOps) -> DVector<f64> {
        let mut v = DVector::zeros(ops.n);
        if l >= 1 {
            v += &self.beta[l - 1];
        }
        if l >= 2 {
            v.add_scalar_mut(self.mhat[l - 2]);
        }
        ops.a_minus.component_mul(&v)
    }

    fn drift(&self, l: usize, ops: &TorusOps) -> f64 {
        ops.mean(&ops.flux(&self.beta[l])) + ops.mean(&self.lagged(l, ops))
    }

    /// Source `φ̄^l` for `l ≥ 1` from the current lower levels.
    fn source(&self, l: usize, ops: &TorusOps) -> DVector<f64> {
        let p = l - 1;
        let mut mu = ops.flux(&self.beta[p]) + self.lagged(p, ops);
        mu.add_scalar_mut(-self.m[p]);
        let mut src = mu + &ops.d * ops.a_bar.component_mul(&self.beta[p]);
        if l >= 2 {
            src += &ops.a_bar_z * self.mhat[l - 2];
        }
        src
    }

    fn step(&mut self, ops: &TorusOps) {
        let old_sources: Vec<Option<DVector<f64>>> = (0..self.beta.len()).map(|l| (l >= 1).then(|| self.source(l, ops))).collect();
        let old_m = self.m.clone();
        for l in 0..self.beta.len() {
            let mut rhs = &ops.plus * &self.beta[l];
            if let Some(s0) = &old_sources[l] {
                let s1 = self.source(l, ops);
                rhs += (s0 + s1) * (0.5 * ops.dt);
            }
            self.beta[l] = ops.lu_minus.solve(&rhs).expect("nonsingular Crank-Nicolson matrix");
            self.m[l] = self.drift(l, ops);
            self.mhat[l] += 0.5 * ops.dt * (old_m[l] + self.m[l]);
            self.peak[l] = self.peak[l].max(ops.norm(&self.beta[l]));
        }
    }
}

/// `I_0 … I_K` for the super-diffusive cascade.
pub fn initial_layer_constants(s: &SuperCorrectors, k_max: usize) -> Result<InitialLayer> {
    initial_layer_constants_with(s, k_max, LayerOptions::default())
}

pub fn initial_layer_constants_with(s: &SuperCorrectors, k_max: usize, opts: LayerOptions) -> Result<InitialLayer> {
    let mut i = vec![1.0, 0.0];
    let mut flows = Vec::new();
    if k_max < 2 {
        i.truncate(k_max + 1);
        return Ok(InitialLayer { i, beta_flows: flows });
    }
    if s.chi.len() < k_max - 1 {
        return Err(Error::DepthInsufficient { available: s.chi.len(), required: k_max - 1 });
    }
    let ops = TorusOps::new(s, opts.dt);
    let min_a = s.a_bar.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let rate = 4.0 * std::f64::consts::PI.powi(2) * min_a;
    let halving_window = 10.0 / rate;
    let horizon = 400.0 / rate;
    for k in 2..=k_max {
        let mut chains: Vec<Chain> = (1..k)
            .map(|j| {
                let mut init = DVector::zeros(ops.n);
                for nn in 1..=j {
                    init += DVector::from_column_slice(s.chi[nn - 1].values()) * i[j - nn];
                }
                Chain::new(init, k - j, &ops)
            })
            .collect();
        let assemble = |chains: &[Chain]| -> DVector<f64> {
            let mut b = DVector::zeros(ops.n);
            for (idx, c) in chains.iter().enumerate() {
                let j = idx + 1;
                b += &c.beta[k - 1 - j];
            }
            b
        };
        let integrand = |b: &DVector<f64>| ops.mean(&ops.flux(b));
        let mut b = assemble(&chains);
        let mut times = vec![0.0];
        let mut norms = vec![ops.norm(&b)];
        let mut f_prev = integrand(&b);
        let mut integral = 0.0;
        let mut t = 0.0;
        let mut peak_total = 0.0f64;
        let mut t_peak = 0.0;
        loop {
            let total: f64 = chains.iter().flat_map(|c| c.beta.iter().map(|v| ops.norm(v))).sum();
            if total > peak_total {
                peak_total = total;
                t_peak = t;
            }
            let peaks: f64 = chains.iter().flat_map(|c| c.peak.iter()).sum();
            if total <= opts.tol * peaks.max(f64::MIN_POSITIVE) || peaks == 0.0 {
                break;
            }
            if (t - t_peak > halving_window && total > 0.5 * peak_total) || t > horizon {
                return Err(Error::NoDecay(format!("B^{k}: norm {total:.3e} at s = {t:.3} against peak {peak_total:.3e} at s = {t_peak:.3}")));
            }
            for c in chains.iter_mut() {
                c.step(&ops);
            }
            t += opts.dt;
            b = assemble(&chains);
            let f = integrand(&b);
            integral += 0.5 * opts.dt * (f_prev + f);
            f_prev = f;
            times.push(t);
            norms.push(ops.norm(&b));
        }
        let peak_b = norms.iter().cloned().fold(0.0, f64::max);
        let (xs, ys): (Vec<f64>, Vec<f64>) = times.iter().zip(&norms).filter(|(_, n)| **n > 1e-10 * peak_b && peak_b > 0.0).map(|(t, n)| (*t, n.ln())).unzip();
        let start = norms.iter().position(|n| *n == peak_b).unwrap_or(0);
        let decay = (xs.len() > start + 3).then(|| linear_fit(&xs[start..], &ys[start..]));
        let tail_rate = decay.map(|d| -d.slope).filter(|r| *r > 0.0).unwrap_or(rate);
        flows.push(BetaFlow { k, times, norms, integral, tail_bound: f_prev.abs() / tail_rate, decay });
        i.push(-integral);
    }
    Ok(InitialLayer { i, beta_flows: flows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{build_super_cascade, solve_cell, CoefficientField, CoefficientSpec};
    use crate::environment::DiffusionModel;
    use crate::grid::TorusGrid;

    fn super_set(spec: CoefficientSpec) -> SuperCorrectors {
        let model = DiffusionModel::ornstein_uhlenbeck(1.0, 2f64.sqrt(), 8.0, 64).unwrap();
        let torus = TorusGrid::new(64).unwrap();
        let a = CoefficientField::new(spec, &torus, model.ygrid()).unwrap();
        build_super_cascade(&a, &model, 2, &[]).unwrap().as_super().unwrap().clone()
    }

    fn z_only() -> SuperCorrectors {
        super_set(CoefficientSpec::ZOnly { base: 2.0, amplitude: 1.0 })
    }

    #[test]
    fn first_constants_verbatim() {
        let l = initial_layer_constants(&z_only(), 2).unwrap();
        assert_eq!(l.i[0], 1.0);
        assert_eq!(l.i[1], 0.0);
    }

    #[test]
    fn i2_closed_form() {
        // ∫_0^∞ B ds = -Ā^{-1} χ^0 exactly, so I_2 = ⟨ā ∂_z Ā^{-1} χ^0⟩.
        let s = z_only();
        let l = initial_layer_constants(&s, 2).unwrap();
        let w = solve_cell(&s.a_bar, &s.chi[0]).unwrap();
        let oracle = (&s.a_bar * &w.derivative()).mean();
        assert!((l.i[2] - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{} vs {oracle}", l.i[2]);
        assert!(l.beta_flows[0].tail_bound < 1e-9);
    }

    #[test]
    fn i2_stable_under_step_halving() {
        let s = z_only();
        let a = initial_layer_constants_with(&s, 2, LayerOptions { dt: 1e-3, tol: 1e-12 }).unwrap();
        let b = initial_layer_constants_with(&s, 2, LayerOptions { dt: 5e-4, tol: 1e-12 }).unwrap();
        assert!((a.i[2] - b.i[2]).abs() < 1e-6);
    }

    #[test]
    fn b2_decays_log_linearly() {
        let l = initial_layer_constants(&z_only(), 2).unwrap();
        let fit = l.beta_flows[0].decay.unwrap();
        assert!(fit.slope < 0.0 && fit.r_squared > 0.99, "{fit:?}");
    }

    #[test]
    fn y_only_coefficient_has_no_layer() {
        let l = initial_layer_constants(&super_set(CoefficientSpec::YOnly { base: 2.0, amplitude: 1.0 }), 3).unwrap();
        assert_eq!(&l.i[2..], &[0.0, 0.0]);
    }

    #[test]
    fn i3_converges() {
        let l = initial_layer_constants(&z_only(), 3).unwrap();
        assert!(l.i[3].is_finite());
    }

    #[test]
    fn i4_persistent_source_is_reported() {
        // m̂^0(∞) ā_z keeps forcing β̂^{1,2}, so B^4 tends to a nonzero steady state.
        let err = initial_layer_constants(&z_only(), 4).unwrap_err();
        assert!(matches!(err, Error::NoDecay(_)));
    }
}
