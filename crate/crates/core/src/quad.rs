//! Composite Gauss–Legendre rules.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64;
use rayon::prelude::*;

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

pub fn rule(points: usize) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("rule cache poisoned");
    guard
        .entry(points)
        .or_insert_with(|| {
            let gl = GaussLegendre::new(NonZeroUsize::new(points).expect("points > 0"));
            let (nodes, weights) = gl.as_node_weight_pairs().iter().copied().unzip();
            Arc::new(Rule { nodes, weights })
        })
        .clone()
}

/// Nodes and weights of a composite rule with `panels` equal panels on `[a, b]`.
pub fn composite(a: f64, b: f64, panels: usize, points: usize) -> (Vec<f64>, Vec<f64>) {
    let r = rule(points);
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut xs = Vec::with_capacity(panels * points);
    let mut ws = Vec::with_capacity(panels * points);
    for p in 0..panels {
        let lo = a + h * p as f64;
        let mid = lo + 0.5 * h;
        for (x, w) in r.nodes.iter().zip(&r.weights) {
            xs.push(mid + 0.5 * h * x);
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize, points: usize) -> f64 {
    let (xs, ws) = composite(a, b, panels, points);
    xs.iter().zip(&ws).map(|(x, w)| w * f(*x)).sum()
}

pub fn integrate_complex<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    points: usize,
) -> Complex64 {
    let (xs, ws) = composite(a, b, panels, points);
    xs.iter().zip(&ws).map(|(x, w)| f(*x) * *w).sum()
}

/// Tensor-product rule over the box `[lo, hi]`; parallel over the first axis with an ordered
/// reduction so the result does not depend on the thread count.
pub fn integrate_box<F>(f: F, lo: &[f64], hi: &[f64], panels: &[usize], points: usize) -> Complex64
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    let m = lo.len();
    let axes: Vec<(Vec<f64>, Vec<f64>)> =
        (0..m).map(|i| composite(lo[i], hi[i], panels[i], points)).collect();
    if m == 0 {
        return f(&[]);
    }
    let first = &axes[0];
    let partial: Vec<Complex64> = first
        .0
        .par_iter()
        .zip(first.1.par_iter())
        .map(|(&x0, &w0)| {
            let mut x = vec![0.0; m];
            x[0] = x0;
            w0 * inner(&f, &axes, 1, &mut x)
        })
        .collect();
    partial.into_iter().sum()
}

fn inner<F>(f: &F, axes: &[(Vec<f64>, Vec<f64>)], axis: usize, x: &mut Vec<f64>) -> Complex64
where
    F: Fn(&[f64]) -> Complex64,
{
    if axis == axes.len() {
        return f(x);
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (xi, wi) in axes[axis].0.iter().zip(&axes[axis].1) {
        x[axis] = *xi;
        acc += inner(f, axes, axis + 1, x) * *wi;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn polynomial_exactness() {
        let v = integrate(|x| x.powi(7) + 3.0 * x * x, -1.0, 2.0, 1, 4);
        assert_relative_eq!(v, 255.0 / 8.0 + 9.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_box() {
        let v = integrate_box(
            |x| Complex64::new((-(x[0] * x[0] + x[1] * x[1])).exp(), 0.0),
            &[-8.0, -8.0],
            &[8.0, 8.0],
            &[8, 8],
            12,
        );
        assert_relative_eq!(v.re, std::f64::consts::PI, epsilon = 1e-12);
    }
}
