//! Sampled-function calculus on the unit torus `T = [0, 1)` and on the
//! truncated environment window `[-Y, Y]`.
//!
//! Derivatives in `z` are trigonometric-spectral. Derivatives in `y` use
//! finite differences whose order is a property of the [`YGrid`].
//!
//! ```
//! use homoscale::grid::{TorusField, TorusGrid};
//!
//! let grid = TorusGrid::new(64).unwrap();
//! let f = TorusField::from_fn(&grid, |z| 1.0 / (2.0 + (2.0 * std::f64::consts::PI * z).sin()));
//! assert!((f.mean() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
//! ```

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Uniform grid `z_i = i / N` on the unit torus.
#[derive(Clone)]
pub struct TorusGrid {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid").field("n", &self.n).finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
    }
}

impl TorusGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidTorusGrid(n));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// Signed wavenumber of FFT slot `j`; the Nyquist slot maps to `None`.
    fn wavenumber(&self, j: usize) -> Option<f64> {
        let half = self.n / 2;
        if j == half {
            None
        } else if j < half {
            Some(j as f64)
        } else {
            Some(j as f64 - self.n as f64)
        }
    }

    fn spectrum(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    fn synthesize(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.n as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    /// Multiply every non-Nyquist mode by `symbol(k)`; the Nyquist mode is dropped.
    fn apply_symbol(&self, values: &[f64], symbol: impl Fn(f64) -> Complex64) -> Vec<f64> {
        let mut spec = self.spectrum(values);
        for (j, c) in spec.iter_mut().enumerate() {
            *c = match self.wavenumber(j) {
                Some(k) => *c * symbol(k),
                None => Complex64::new(0.0, 0.0),
            };
        }
        self.synthesize(spec)
    }
}

/// Real values on the nodes of a [`TorusGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct TorusField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl TorusField {
    pub fn new(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a torus grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &TorusGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node(i))).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Period average by the uniform trapezoid rule.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Spectral derivative `d/dz`.
    pub fn derivative(&self) -> TorusField {
        let values = self.grid.apply_symbol(&self.values, |k| Complex64::new(0.0, TWO_PI * k));
        Self { grid: self.grid.clone(), values }
    }

    /// The unique zero-mean periodic antiderivative.
    pub fn antiderivative(&self) -> Result<TorusField> {
        let mean = self.mean();
        let scale = self.max_abs().max(1.0);
        if mean.abs() > 1e-10 * scale {
            return Err(Error::NonZeroMean { context: "antiderivative".into(), mean });
        }
        let values = self.grid.apply_symbol(&self.values, |k| {
            if k == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -1.0 / (TWO_PI * k))
            }
        });
        Ok(Self { grid: self.grid.clone(), values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TorusField {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &TorusField, f: impl Fn(f64, f64) -> f64) -> TorusField {
        assert_eq!(self.grid, other.grid, "torus grids differ");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid.clone(), values }
    }

    pub fn scale(&self, c: f64) -> TorusField {
        self.map(|v| c * v)
    }

    pub fn shift(&self, c: f64) -> TorusField {
        self.map(|v| v + c)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral interpolant that can be evaluated off the grid.
    pub fn interpolant(&self) -> TrigInterpolant {
        let n = self.grid.len();
        let spec = self.grid.spectrum(&self.values);
        let half = n / 2;
        let scale = 1.0 / n as f64;
        let mut modes = Vec::with_capacity(half);
        for (k, c) in spec.iter().enumerate().take(half).skip(1) {
            modes.push((k as f64, 2.0 * c.re * scale, -2.0 * c.im * scale));
        }
        TrigInterpolant {
            mean: spec[0].re * scale,
            modes,
            nyquist: (half as f64, spec[half].re * scale),
        }
    }
}

/// Real trigonometric interpolant `c0 + Σ (a_k cos 2πkz + b_k sin 2πkz)`.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    mean: f64,
    modes: Vec<(f64, f64, f64)>,
    nyquist: (f64, f64),
}

impl TrigInterpolant {
    pub fn eval(&self, z: f64) -> f64 {
        let mut acc = self.mean;
        for &(k, a, b) in &self.modes {
            let (s, c) = (TWO_PI * k * z).sin_cos();
            acc += a * c + b * s;
        }
        acc + self.nyquist.1 * (TWO_PI * self.nyquist.0 * z).cos()
    }
}

macro_rules! torus_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr<&TorusField> for &TorusField {
            type Output = TorusField;
            fn $method(self, rhs: &TorusField) -> TorusField {
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
    };
}
torus_binop!(Add, add, +);
torus_binop!(Sub, sub, -);
torus_binop!(Mul, mul, *);

impl Neg for &TorusField {
    type Output = TorusField;
    fn neg(self) -> TorusField {
        self.scale(-1.0)
    }
}

/// Finite-difference weights by Fornberg's recursion: `w[d][j]` approximates
/// the `d`-th derivative at `x0` from samples at `xs[j]`.
pub fn fornberg_weights(x0: f64, xs: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_deriv + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(max_deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

#[derive(Clone, Debug)]
struct Stencil {
    start: usize,
    weights: Vec<f64>,
}

/// Uniform nodes on `[-Y, Y]` with quadrature weights for the invariant density.
#[derive(Clone, Debug)]
pub struct YGrid {
    nodes: Vec<f64>,
    density: Vec<f64>,
    weights: Vec<f64>,
    fd_order: usize,
    first: Vec<Stencil>,
    second: Vec<Stencil>,
}

/// Default finite-difference order for `y`-derivatives.
pub const DEFAULT_FD_ORDER: usize = 6;

impl YGrid {
    /// Build the grid from unnormalized density values at the nodes.
    pub fn new(half_width: f64, n: usize, density: &[f64], fd_order: usize) -> Result<Self> {
        if !(half_width > 0.0) || n < 8 {
            return Err(Error::InvalidYGrid(format!("half width {half_width}, {n} nodes")));
        }
        if density.len() != n {
            return Err(Error::InvalidYGrid("density length differs from node count".into()));
        }
        if fd_order < 2 || fd_order % 2 != 0 || fd_order + 3 > n {
            return Err(Error::InvalidYGrid(format!("finite-difference order {fd_order}")));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let nodes: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * h).collect();
        let mut raw: Vec<f64> = density
            .iter()
            .enumerate()
            .map(|(i, &p)| if i == 0 || i == n - 1 { 0.5 * p * h } else { p * h })
            .collect();
        let total: f64 = raw.iter().sum();
        if !(total.is_finite() && total > 0.0) || density.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::NonIntegrable);
        }
        raw.iter_mut().for_each(|w| *w /= total);
        let density = density.iter().map(|p| p / total).collect();
        let first = Self::stencils(&nodes, 1, fd_order);
        let second = Self::stencils(&nodes, 2, fd_order);
        Ok(Self { nodes, density, weights: raw, fd_order, first, second })
    }

    fn stencils(nodes: &[f64], deriv: usize, order: usize) -> Vec<Stencil> {
        let n = nodes.len();
        let r = order / 2;
        (0..n)
            .map(|i| {
                let (start, width) = if i >= r && i + r < n {
                    (i - r, 2 * r + 1)
                } else {
                    let width = order + deriv;
                    let start = if i < r { 0 } else { n - width };
                    (start, width)
                };
                let w = fornberg_weights(nodes[i], &nodes[start..start + width], deriv);
                Stencil { start, weights: w[deriv].clone() }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Quadrature weights summing to one.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Density values normalized so that the trapezoid rule integrates them to one.
    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn spacing(&self) -> f64 {
        self.nodes[1] - self.nodes[0]
    }

    pub fn half_width(&self) -> f64 {
        -self.nodes[0]
    }

    pub fn fd_order(&self) -> usize {
        self.fd_order
    }

    /// Index of the center node used as the anchor of Poisson solutions.
    pub fn center(&self) -> usize {
        self.nodes.len() / 2
    }

    /// `∫ f p dy` by the weighted sum.
    pub fn average(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    fn apply(stencils: &[Stencil], f: &[f64]) -> Vec<f64> {
        stencils
            .iter()
            .map(|s| s.weights.iter().zip(&f[s.start..]).map(|(w, v)| w * v).sum())
            .collect()
    }

    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        Self::apply(&self.first, f)
    }

    pub fn second_derivative(&self, f: &[f64]) -> Vec<f64> {
        Self::apply(&self.second, f)
    }

    /// Local quintic interpolation of a profile; clamps outside the window.
    pub fn interpolate(&self, f: &[f64], y: f64) -> f64 {
        let n = self.len();
        let h = self.spacing();
        let y = y.clamp(self.nodes[0], self.nodes[n - 1]);
        let i = (((y - self.nodes[0]) / h).floor() as usize).min(n - 2);
        let start = crate::quad::stencil_start(i, 6, n);
        let basis = crate::quad::lagrange_basis(&self.nodes[start..start + 6], y);
        basis.iter().zip(&f[start..start + 6]).map(|(b, v)| b * v).sum()
    }

    /// Nodes far enough from the window edge and carrying non-negligible
    /// density; residual audits of `y`-equations are taken there.
    pub fn interior(&self) -> Vec<usize> {
        let pmax = self.density.iter().cloned().fold(0.0, f64::max);
        let r = self.fd_order / 2;
        (r..self.len() - r).filter(|&i| self.density[i] >= 1e-8 * pmax).collect()
    }
}

/// Values on the product grid `T × Y`, stored as one contiguous `z`-slice per `y`-node.
#[derive(Clone, Debug)]
pub struct ZYField {
    torus: TorusGrid,
    ygrid: Arc<YGrid>,
    values: Vec<f64>,
}

impl ZYField {
    pub fn from_fn(torus: &TorusGrid, ygrid: &Arc<YGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let nz = torus.len();
        let mut values = Vec::with_capacity(nz * ygrid.len());
        for &y in ygrid.nodes() {
            for i in 0..nz {
                values.push(f(torus.node(i), y));
            }
        }
        Self { torus: torus.clone(), ygrid: ygrid.clone(), values }
    }

    pub fn zeros(torus: &TorusGrid, ygrid: &Arc<YGrid>) -> Self {
        Self { torus: torus.clone(), ygrid: ygrid.clone(), values: vec![0.0; torus.len() * ygrid.len()] }
    }

    /// Assemble from one torus slice per `y`-node.
    pub fn from_slices(torus: &TorusGrid, ygrid: &Arc<YGrid>, slices: Vec<TorusField>) -> Result<Self> {
        if slices.len() != ygrid.len() {
            return Err(Error::GridMismatch(format!("{} slices for {} y-nodes", slices.len(), ygrid.len())));
        }
        let mut values = Vec::with_capacity(torus.len() * ygrid.len());
        for s in slices {
            if s.grid() != torus {
                return Err(Error::GridMismatch("slice on a different torus grid".into()));
            }
            values.extend_from_slice(s.values());
        }
        Ok(Self { torus: torus.clone(), ygrid: ygrid.clone(), values })
    }

    /// Assemble from one `y`-profile per `z`-node.
    pub fn from_profiles(torus: &TorusGrid, ygrid: &Arc<YGrid>, profiles: Vec<Vec<f64>>) -> Result<Self> {
        let (nz, ny) = (torus.len(), ygrid.len());
        if profiles.len() != nz || profiles.iter().any(|p| p.len() != ny) {
            return Err(Error::GridMismatch("profile table has the wrong shape".into()));
        }
        let mut values = vec![0.0; nz * ny];
        for (iz, p) in profiles.iter().enumerate() {
            for (iy, v) in p.iter().enumerate() {
                values[iy * nz + iz] = *v;
            }
        }
        Ok(Self { torus: torus.clone(), ygrid: ygrid.clone(), values })
    }

    /// Broadcast a `z`-only field along `y`.
    pub fn from_torus(field: &TorusField, ygrid: &Arc<YGrid>) -> Self {
        let mut values = Vec::with_capacity(field.values().len() * ygrid.len());
        for _ in 0..ygrid.len() {
            values.extend_from_slice(field.values());
        }
        Self { torus: field.grid().clone(), ygrid: ygrid.clone(), values }
    }

    /// Broadcast a `y`-profile along `z`.
    pub fn from_profile(torus: &TorusGrid, ygrid: &Arc<YGrid>, profile: &[f64]) -> Self {
        Self::from_fn_indexed(torus, ygrid, |_, iy| profile[iy])
    }

    pub fn from_fn_indexed(torus: &TorusGrid, ygrid: &Arc<YGrid>, f: impl Fn(usize, usize) -> f64) -> Self {
        let nz = torus.len();
        let mut values = Vec::with_capacity(nz * ygrid.len());
        for iy in 0..ygrid.len() {
            for iz in 0..nz {
                values.push(f(iz, iy));
            }
        }
        Self { torus: torus.clone(), ygrid: ygrid.clone(), values }
    }

    pub fn torus(&self) -> &TorusGrid {
        &self.torus
    }

    pub fn ygrid(&self) -> &Arc<YGrid> {
        &self.ygrid
    }

    pub fn nz(&self) -> usize {
        self.torus.len()
    }

    pub fn ny(&self) -> usize {
        self.ygrid.len()
    }

    pub fn get(&self, iz: usize, iy: usize) -> f64 {
        self.values[iy * self.nz() + iz]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, iy: usize) -> TorusField {
        let nz = self.nz();
        TorusField { grid: self.torus.clone(), values: self.values[iy * nz..(iy + 1) * nz].to_vec() }
    }

    pub fn slice_values(&self, iy: usize) -> &[f64] {
        let nz = self.nz();
        &self.values[iy * nz..(iy + 1) * nz]
    }

    pub fn profile(&self, iz: usize) -> Vec<f64> {
        let nz = self.nz();
        (0..self.ny()).map(|iy| self.values[iy * nz + iz]).collect()
    }

    pub fn slices(&self) -> Vec<TorusField> {
        (0..self.ny()).map(|iy| self.slice(iy)).collect()
    }

    pub fn profiles(&self) -> Vec<Vec<f64>> {
        (0..self.nz()).map(|iz| self.profile(iz)).collect()
    }

    pub fn map_slices(&self, f: impl Fn(usize, TorusField) -> TorusField) -> ZYField {
        let slices = (0..self.ny()).map(|iy| f(iy, self.slice(iy))).collect();
        Self::from_slices(&self.torus, &self.ygrid, slices).expect("slice map keeps the grid")
    }

    pub fn map_profiles(&self, f: impl Fn(usize, Vec<f64>) -> Vec<f64>) -> ZYField {
        let profiles = (0..self.nz()).map(|iz| f(iz, self.profile(iz))).collect();
        Self::from_profiles(&self.torus, &self.ygrid, profiles).expect("profile map keeps the grid")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ZYField {
        Self { torus: self.torus.clone(), ygrid: self.ygrid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ZYField, f: impl Fn(f64, f64) -> f64) -> ZYField {
        assert_eq!(self.values.len(), other.values.len(), "ZY grids differ");
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { torus: self.torus.clone(), ygrid: self.ygrid.clone(), values }
    }

    pub fn scale(&self, c: f64) -> ZYField {
        self.map(|v| c * v)
    }

    /// Multiply every slice by a `z`-only field.
    pub fn mul_torus(&self, f: &TorusField) -> ZYField {
        let nz = self.nz();
        let fv = f.values();
        let values = self.values.iter().enumerate().map(|(k, v)| v * fv[k % nz]).collect();
        Self { torus: self.torus.clone(), ygrid: self.ygrid.clone(), values }
    }

    /// Multiply every profile by a `y`-only profile.
    pub fn mul_profile(&self, p: &[f64]) -> ZYField {
        let nz = self.nz();
        let values = self.values.iter().enumerate().map(|(k, v)| v * p[k / nz]).collect();
        Self { torus: self.torus.clone(), ygrid: self.ygrid.clone(), values }
    }

    pub fn sub_torus(&self, f: &TorusField) -> ZYField {
        let nz = self.nz();
        let fv = f.values();
        let values = self.values.iter().enumerate().map(|(k, v)| v - fv[k % nz]).collect();
        Self { torus: self.torus.clone(), ygrid: self.ygrid.clone(), values }
    }

    pub fn dz(&self) -> ZYField {
        self.map_slices(|_, s| s.derivative())
    }

    pub fn dy(&self) -> ZYField {
        let g = self.ygrid.clone();
        self.map_profiles(|_, p| g.derivative(&p))
    }

    pub fn dyy(&self) -> ZYField {
        let g = self.ygrid.clone();
        self.map_profiles(|_, p| g.second_derivative(&p))
    }

    /// `y`-average against the invariant density, per `z`-node.
    pub fn y_average(&self) -> TorusField {
        let nz = self.nz();
        let mut acc = vec![0.0; nz];
        for (iy, w) in self.ygrid.weights().iter().enumerate() {
            for (a, v) in acc.iter_mut().zip(&self.values[iy * nz..(iy + 1) * nz]) {
                *a += w * v;
            }
        }
        TorusField { grid: self.torus.clone(), values: acc }
    }

    /// Torus mean of every slice, as a `y`-profile.
    pub fn z_mean(&self) -> Vec<f64> {
        (0..self.ny()).map(|iy| {
            let s = self.slice_values(iy);
            s.iter().sum::<f64>() / s.len() as f64
        }).collect()
    }

    /// `z` first, then `y`.
    pub fn double_mean(&self) -> f64 {
        self.ygrid.average(&self.z_mean())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max-norm over `z` and the interior `y`-nodes.
    pub fn max_abs_interior(&self) -> f64 {
        let nz = self.nz();
        self.ygrid
            .interior()
            .into_iter()
            .flat_map(|iy| self.values[iy * nz..(iy + 1) * nz].iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

macro_rules! zy_binop {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr<&ZYField> for &ZYField {
            type Output = ZYField;
            fn $method(self, rhs: &ZYField) -> ZYField {
                self.zip_map(rhs, |a, b| a $op b)
            }
        }
    };
}
zy_binop!(Add, add, +);
zy_binop!(Sub, sub, -);
zy_binop!(Mul, mul, *);

impl Neg for &ZYField {
    type Output = ZYField;
    fn neg(self) -> ZYField {
        self.scale(-1.0)
    }
}
