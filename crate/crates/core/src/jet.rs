//! Truncated multivariate Taylor polynomials.
//!
//! A [`Jet`] holds the Taylor coefficients `c_α = ∂^α f(x0) / α!` of a function of `vars`
//! variables up to total degree `order`. Arithmetic is exact on the truncated polynomials, so
//! derivatives of products and compositions at `x0` come out without finite differencing.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

#[derive(Debug)]
pub struct JetSpace {
    vars: usize,
    order: usize,
    monos: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    mul: Vec<(u32, u32, u32)>,
}

impl JetSpace {
    fn build(vars: usize, order: usize) -> Self {
        let mut monos = Vec::new();
        for deg in 0..=order {
            let mut cur = vec![0u8; vars];
            push_graded(&mut monos, &mut cur, 0, deg);
        }
        let index: HashMap<Vec<u8>, usize> =
            monos.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let mut mul = Vec::new();
        for (i, a) in monos.iter().enumerate() {
            let da: usize = a.iter().map(|&e| e as usize).sum();
            for (j, b) in monos.iter().enumerate() {
                let db: usize = b.iter().map(|&e| e as usize).sum();
                if da + db > order {
                    continue;
                }
                let sum: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                mul.push((i as u32, j as u32, index[&sum] as u32));
            }
        }
        JetSpace { vars, order, monos, index, mul }
    }

    pub fn get(vars: usize, order: usize) -> Arc<JetSpace> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<JetSpace>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().expect("jet space cache poisoned");
        guard
            .entry((vars, order))
            .or_insert_with(|| Arc::new(JetSpace::build(vars, order)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.monos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn monomials(&self) -> &[Vec<u8>] {
        &self.monos
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.index.get(alpha).copied()
    }
}

fn push_graded(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, remaining: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining as u8;
        out.push(cur.clone());
        return;
    }
    if cur.is_empty() {
        return;
    }
    for e in (0..=remaining).rev() {
        cur[pos] = e as u8;
        push_graded(out, cur, pos + 1, remaining - e);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    coef: Vec<f64>,
}

impl Jet {
    pub fn zero(vars: usize, order: usize) -> Self {
        let space = JetSpace::get(vars, order);
        let coef = vec![0.0; space.len()];
        Jet { space, coef }
    }

    pub fn constant(vars: usize, order: usize, value: f64) -> Self {
        let mut j = Jet::zero(vars, order);
        j.coef[0] = value;
        j
    }

    /// The coordinate function `x_i` expanded around a point whose `i`-th coordinate is `at`.
    pub fn variable(vars: usize, order: usize, i: usize, at: f64) -> Self {
        let mut j = Jet::constant(vars, order, at);
        if order >= 1 {
            let mut alpha = vec![0u8; vars];
            alpha[i] = 1;
            let k = j.space.index_of(&alpha).expect("linear monomial");
            j.coef[k] = 1.0;
        }
        j
    }

    pub fn from_coefficients(vars: usize, order: usize, coef: Vec<f64>) -> Self {
        let space = JetSpace::get(vars, order);
        assert_eq!(coef.len(), space.len(), "coefficient count mismatch");
        Jet { space, coef }
    }

    pub fn vars(&self) -> usize {
        self.space.vars
    }

    pub fn order(&self) -> usize {
        self.space.order
    }

    pub fn value(&self) -> f64 {
        self.coef[0]
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn monomials(&self) -> &[Vec<u8>] {
        self.space.monomials()
    }

    pub fn coeff(&self, alpha: &[u8]) -> f64 {
        self.space.index_of(alpha).map_or(0.0, |k| self.coef[k])
    }

    /// `∂^α f(x0)`.
    pub fn partial(&self, alpha: &[u8]) -> f64 {
        let fact: f64 = alpha.iter().map(|&a| factorial(a as usize)).product();
        self.coeff(alpha) * fact
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet { space: self.space.clone(), coef: self.coef.iter().map(|c| c * s).collect() }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coef[0] += s;
        out
    }

    pub fn truncate(&self, order: usize) -> Jet {
        assert!(order <= self.order());
        self.resize(order)
    }

    /// Zero-pads to a higher order.
    pub fn extend(&self, order: usize) -> Jet {
        assert!(order >= self.order());
        self.resize(order)
    }

    fn resize(&self, order: usize) -> Jet {
        let mut out = Jet::zero(self.vars(), order);
        for (k, alpha) in out.space.monos.clone().iter().enumerate() {
            out.coef[k] = self.coeff(alpha);
        }
        out
    }

    /// `Σ_k derivs[k]/k! (self - self(x0))^k`: composition with a univariate function whose
    /// derivatives at `self.value()` are `derivs`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let order = self.order();
        let h = self.add_scalar(-self.value());
        let mut out = Jet::constant(self.vars(), order, derivs.first().copied().unwrap_or(0.0));
        let mut power = Jet::constant(self.vars(), order, 1.0);
        for (k, d) in derivs.iter().enumerate().take(order + 1).skip(1) {
            power = &power * &h;
            if *d != 0.0 {
                out = &out + &power.scale(d / factorial(k));
            }
        }
        out
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&vec![e; self.order() + 1])
    }

    pub fn recip(&self) -> Jet {
        let a = self.value();
        let derivs: Vec<f64> = (0..=self.order())
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * factorial(k) / a.powi(k as i32 + 1)
            })
            .collect();
        self.compose(&derivs)
    }

    pub fn powf(&self, p: f64) -> Jet {
        let a = self.value();
        let mut derivs = Vec::with_capacity(self.order() + 1);
        let mut falling = 1.0;
        for k in 0..=self.order() {
            derivs.push(falling * a.powf(p - k as f64));
            falling *= p - k as f64;
        }
        self.compose(&derivs)
    }

    /// `∂/∂x_i`, valid to one order less.
    pub fn derivative(&self, i: usize) -> Jet {
        assert!(self.order() >= 1, "cannot differentiate a zeroth-order jet");
        let mut out = Jet::zero(self.vars(), self.order() - 1);
        for (k, alpha) in self.space.monos.iter().enumerate() {
            if alpha[i] == 0 {
                continue;
            }
            let mut beta = alpha.clone();
            beta[i] -= 1;
            if let Some(t) = out.space.index_of(&beta) {
                out.coef[t] += self.coef[k] * alpha[i] as f64;
            }
        }
        out
    }

    /// `Σ_{a,b} A_ab ∂_a ∂_b`, valid to two orders less.
    pub fn contract_second(&self, a: &DMatrix<f64>) -> Jet {
        let m = self.vars();
        let mut out = Jet::zero(m, self.order() - 2);
        let firsts: Vec<Jet> = (0..m).map(|i| self.derivative(i)).collect();
        for (i, fi) in firsts.iter().enumerate() {
            for j in 0..m {
                let w = a[(i, j)];
                if w != 0.0 {
                    out = &out + &fi.derivative(j).scale(w);
                }
            }
        }
        out
    }
}

impl<'a> Add<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        assert!(Arc::ptr_eq(&self.space, &rhs.space), "jet spaces differ");
        Jet {
            space: self.space.clone(),
            coef: self.coef.iter().zip(&rhs.coef).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self + &(-rhs)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl<'a> Mul<&'a Jet> for &'a Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        assert!(Arc::ptr_eq(&self.space, &rhs.space), "jet spaces differ");
        let mut coef = vec![0.0; self.coef.len()];
        for &(i, j, k) in &self.space.mul {
            let a = self.coef[i as usize];
            if a == 0.0 {
                continue;
            }
            coef[k as usize] += a * rhs.coef[j as usize];
        }
        Jet { space: self.space.clone(), coef }
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Taylor jet of `f` at `x0` from samples on a tensor grid, for callers without closed forms.
///
/// Along each axis the samples `f(x0 + h·k·e_i)`, `k = -p..=p`, are interpolated exactly and the
/// resulting tensor polynomial is truncated to total degree `order`.
pub fn sampled_jet<F>(f: F, x0: &[f64], order: usize, h: f64) -> Jet
where
    F: Fn(&[f64]) -> f64,
{
    let m = x0.len();
    let p = order.max(2);
    let npts = 2 * p + 1;
    // 1-D map from samples to Taylor coefficients in units of h.
    let vander = DMatrix::from_fn(npts, npts, |r, c| {
        let k = r as f64 - p as f64;
        k.powi(c as i32)
    });
    let inv = vander.try_inverse().expect("vandermonde on distinct nodes is invertible");

    let total = npts.pow(m as u32);
    let mut data: Vec<f64> = (0..total)
        .map(|flat| {
            let mut x = x0.to_vec();
            let mut rem = flat;
            for xi in x.iter_mut() {
                let k = (rem % npts) as f64 - p as f64;
                rem /= npts;
                *xi += h * k;
            }
            f(&x)
        })
        .collect();

    // Apply the coefficient map along each axis in turn.
    let mut stride = 1;
    for _axis in 0..m {
        let mut next = data.clone();
        for base in 0..total {
            if (base / stride) % npts != 0 {
                continue;
            }
            let line: Vec<f64> = (0..npts).map(|k| data[base + k * stride]).collect();
            for c in 0..npts {
                let mut acc = 0.0;
                for (k, v) in line.iter().enumerate() {
                    acc += inv[(c, k)] * v;
                }
                next[base + c * stride] = acc;
            }
        }
        data = next;
        stride *= npts;
    }

    let mut out = Jet::zero(m, order);
    for (k, alpha) in out.space.monos.clone().iter().enumerate() {
        let mut flat = 0;
        let mut s = 1;
        let mut deg = 0i32;
        for &e in alpha.iter() {
            flat += e as usize * s;
            s *= npts;
            deg += e as i32;
        }
        out.coef[k] = data[flat] / h.powi(deg);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn graded_monomial_count() {
        assert_eq!(JetSpace::get(2, 12).len(), 91);
        assert_eq!(JetSpace::get(3, 4).len(), 35);
        assert_eq!(JetSpace::get(1, 5).len(), 6);
    }

    #[test]
    fn exp_of_sum_matches_product() {
        let x = Jet::variable(2, 6, 0, 0.3);
        let y = Jet::variable(2, 6, 1, -0.2);
        let lhs = (&x + &y).exp();
        let rhs = &x.exp() * &y.exp();
        for (a, b) in lhs.coefficients().iter().zip(rhs.coefficients()) {
            assert_relative_eq!(a, b, epsilon = 1e-14, max_relative = 1e-12);
        }
    }

    #[test]
    fn partials_of_polynomial() {
        // f = x^3 y^2 at (1, 2): ∂x∂x∂y f = 6·2y = 24
        let x = Jet::variable(2, 6, 0, 1.0);
        let y = Jet::variable(2, 6, 1, 2.0);
        let f = &(&(&x * &x) * &x) * &(&y * &y);
        assert_relative_eq!(f.value(), 4.0);
        assert_relative_eq!(f.partial(&[2, 1]), 24.0, epsilon = 1e-12);
        assert_relative_eq!(f.partial(&[3, 2]), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn powf_and_recip_agree() {
        let x = Jet::variable(1, 8, 0, 1.7);
        let a = x.powf(-1.0);
        let b = x.recip();
        for (u, v) in a.coefficients().iter().zip(b.coefficients()) {
            assert_relative_eq!(u, v, max_relative = 1e-12);
        }
    }

    #[test]
    fn laplacian_of_quadratic() {
        let x = Jet::variable(2, 4, 0, 0.0);
        let y = Jet::variable(2, 4, 1, 0.0);
        let f = &(&x * &x).scale(3.0) + &(&y * &y);
        let lap = f.contract_second(&DMatrix::identity(2, 2));
        assert_relative_eq!(lap.value(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_jet_recovers_smooth_function() {
        let f = |x: &[f64]| (x[0] + 2.0 * x[1]).sin();
        let j = sampled_jet(f, &[0.1, 0.2], 4, 0.05);
        // ∂x∂y f = -2 sin(0.5)
        assert_relative_eq!(j.partial(&[1, 1]), -2.0 * 0.5f64.sin(), epsilon = 1e-7);
        // ∂y^4 f = 16 sin(0.5)
        assert_relative_eq!(j.partial(&[0, 4]), 16.0 * 0.5f64.sin(), epsilon = 1e-3);
    }
}
