//! Small quadrature and interpolation helpers.

/// Eight-point Gauss–Legendre nodes on `[-1, 1]`.
pub const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];

pub const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// `∫_a^b f` with `segments` panels of eight-point Gauss–Legendre.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, segments: usize) -> f64 {
    let h = (b - a) / segments as f64;
    let mut acc = 0.0;
    for s in 0..segments {
        let mid = a + (s as f64 + 0.5) * h;
        for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
            acc += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * acc
}

/// Lagrange basis values at `x` for the nodes `xs`.
pub fn lagrange_basis(xs: &[f64], x: f64) -> Vec<f64> {
    (0..xs.len())
        .map(|j| {
            xs.iter()
                .enumerate()
                .filter(|(m, _)| *m != j)
                .map(|(_, &xm)| (x - xm) / (xs[j] - xm))
                .product()
        })
        .collect()
}

/// Start of a `width`-point stencil containing cell `[i, i+1]`, kept inside `0..n`.
pub fn stencil_start(i: usize, width: usize, n: usize) -> usize {
    i.saturating_sub((width - 1) / 2).min(n - width)
}

/// Composite trapezoid rule on uniform samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => h * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1])),
    }
}
