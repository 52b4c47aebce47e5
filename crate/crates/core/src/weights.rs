//! Smooth cut-offs: the dyadic partition of unity, detector bumps, atlas bumps, dual weights,
//! envelopes and the layered `P_κ` weights, plus their Fourier transforms.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::homfun::{norm, Ball, DualSurface, Surface};
use crate::jet::{factorial, sampled_jet, Jet};
use crate::oscint::stationary_terms;
use crate::{e, quad};

/// A smooth function of one real variable with compact support.
pub trait Profile: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    /// `[f(x), f'(x), ..., f^{(order)}(x)]`.
    fn derivatives(&self, x: f64, order: usize) -> Vec<f64>;
    fn support(&self) -> (f64, f64);
}

/// A smooth compactly supported function on `R^m`.
pub trait Weight: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
    /// A ball containing the support.
    fn support(&self) -> Ball;

    fn max_order(&self) -> usize {
        4
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let h = 0.01 * self.support().radius.max(1e-6);
        sampled_jet(|y| self.eval(y), x, order, h)
    }

    fn as_product(&self) -> Option<&ProductBump> {
        None
    }

    /// `∂^α w(x)`.
    fn deriv(&self, alpha: &[u8], x: &[f64]) -> f64 {
        let order = alpha.iter().map(|&a| a as usize).sum();
        self.taylor(x, order).partial(alpha)
    }
}

fn one_var_derivatives(j: &Jet) -> Vec<f64> {
    (0..=j.order()).map(|k| j.coeff(&[k as u8]) * factorial(k)).collect()
}

// ---------------------------------------------------------------------------------------------
// Partition of unity

/// The even smooth function with `Σ_j ω(x/2^j) = 1` for `x ≠ 0`, supported in `1 ≤ |x| ≤ 4`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Skriganov;

fn beta_jet(x: f64, order: usize) -> Jet {
    // β(u) = (1 - exp(-1/(1 - u/2))) · exp((1 - u/2)/(1 - u))
    let u = Jet::variable(1, order, 0, x);
    let a = u.scale(-0.5).add_scalar(1.0);
    let b = u.scale(-1.0).add_scalar(1.0);
    let first = a.recip().scale(-1.0).exp().scale(-1.0).add_scalar(1.0);
    let second = (&a * &b.recip()).exp();
    &first * &second
}

fn beta(x: f64) -> f64 {
    (1.0 - (-1.0 / (1.0 - x / 2.0)).exp()) * ((1.0 - x / 2.0) / (1.0 - x)).exp()
}

pub fn omega_partition_eval(x: f64) -> f64 {
    let a = x.abs();
    if a <= 1.0 || a >= 4.0 {
        0.0
    } else if a < 2.0 {
        beta(a)
    } else if a == 2.0 {
        1.0
    } else {
        1.0 - beta(a / 2.0)
    }
}

impl Profile for Skriganov {
    fn value(&self, x: f64) -> f64 {
        omega_partition_eval(x)
    }

    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let a = x.abs();
        let sign = if x < 0.0 { -1.0 } else { 1.0 };
        let mut d = if a <= 1.0 || a >= 4.0 {
            vec![0.0; order + 1]
        } else if a < 2.0 {
            one_var_derivatives(&beta_jet(a, order))
        } else if a == 2.0 {
            let mut v = vec![0.0; order + 1];
            v[0] = 1.0;
            v
        } else {
            let inner = one_var_derivatives(&beta_jet(a / 2.0, order));
            inner
                .iter()
                .enumerate()
                .map(|(k, v)| if k == 0 { 1.0 - v } else { -v / 2f64.powi(k as i32) })
                .collect()
        };
        for (k, v) in d.iter_mut().enumerate() {
            if k % 2 == 1 {
                *v *= sign;
            }
        }
        d
    }

    fn support(&self) -> (f64, f64) {
        (-4.0, 4.0)
    }
}

/// `x ↦ inner(factor·x)`.
#[derive(Clone, Debug)]
pub struct Dilated<P> {
    pub inner: P,
    pub factor: f64,
}

impl<P: Profile> Profile for Dilated<P> {
    fn value(&self, x: f64) -> f64 {
        self.inner.value(self.factor * x)
    }

    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let mut d = self.inner.derivatives(self.factor * x, order);
        for (k, v) in d.iter_mut().enumerate() {
            *v *= self.factor.powi(k as i32);
        }
        d
    }

    fn support(&self) -> (f64, f64) {
        let (a, b) = self.inner.support();
        let (a, b) = (a / self.factor, b / self.factor);
        (a.min(b), a.max(b))
    }
}

/// `ω(2x)`: the partition of unity shifted so that `Σ_{0≤r≤R} ω(2x/2^r)` is exactly one on
/// `[1, 2^R]` and vanishes outside `[1/2, 2^{R+1}]`.
pub fn dyadic_cutoff() -> Dilated<Skriganov> {
    Dilated { inner: Skriganov, factor: 2.0 }
}

// ---------------------------------------------------------------------------------------------
// Mollified indicators

fn psi(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

fn psi_derivatives(t: f64, order: usize) -> Vec<f64> {
    if t.abs() >= 1.0 {
        return vec![0.0; order + 1];
    }
    let x = Jet::variable(1, order, 0, t);
    let inner = (&x * &x).scale(-1.0).add_scalar(1.0);
    one_var_derivatives(&inner.recip().scale(-1.0).exp())
}

/// Normalized cumulative integral of the bump `exp(-1/(1-t²))` on `[-1, 1]`.
struct BumpCdf {
    h: f64,
    f: Vec<f64>,
    mass: f64,
}

const CDF_CELLS: usize = 1024;

fn bump_cdf() -> &'static BumpCdf {
    static CDF: OnceLock<BumpCdf> = OnceLock::new();
    CDF.get_or_init(|| {
        let h = 2.0 / CDF_CELLS as f64;
        let mut f = Vec::with_capacity(CDF_CELLS + 1);
        let mut acc = 0.0;
        f.push(0.0);
        for k in 0..CDF_CELLS {
            let a = -1.0 + h * k as f64;
            acc += quad::integrate(psi, a, a + h, 1, 10);
            f.push(acc);
        }
        let mass = acc;
        f.iter_mut().for_each(|v| *v /= mass);
        BumpCdf { h, f, mass }
    })
}

/// `∫ exp(-1/(1-t²)) dt` over `[-1, 1]`.
pub fn bump_mass() -> f64 {
    bump_cdf().mass
}

/// Smooth step rising from 0 at `s = -1` to 1 at `s = 1`.
pub fn smooth_step(s: f64) -> f64 {
    if s <= -1.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let c = bump_cdf();
    let k = (((s + 1.0) / c.h).floor() as usize).min(CDF_CELLS - 1);
    let a = -1.0 + c.h * k as f64;
    c.f[k] + quad::integrate(psi, a, s, 1, 10) / c.mass
}

/// `[S(s), S'(s), ...]` for [`smooth_step`].
pub fn smooth_step_derivatives(s: f64, order: usize) -> Vec<f64> {
    let mut out = vec![smooth_step(s)];
    if order > 0 {
        let mass = bump_mass();
        out.extend(psi_derivatives(s, order - 1).into_iter().map(|v| v / mass));
    }
    out
}

/// `𝟙_{[lo, hi]}` convolved with the bump of half-width `width`: equal to one on
/// `[lo + width, hi - width]` and supported in `[lo - width, hi + width]`.
#[derive(Clone, Debug)]
pub struct MollifiedIndicator {
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
}

impl MollifiedIndicator {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        assert!(hi - lo >= 2.0 * width && width > 0.0, "plateau would be empty");
        MollifiedIndicator { lo, hi, width }
    }
}

impl Profile for MollifiedIndicator {
    fn value(&self, x: f64) -> f64 {
        smooth_step((x - self.lo) / self.width) - smooth_step((x - self.hi) / self.width)
    }

    fn derivatives(&self, x: f64, order: usize) -> Vec<f64> {
        let a = smooth_step_derivatives((x - self.lo) / self.width, order);
        let b = smooth_step_derivatives((x - self.hi) / self.width, order);
        (0..=order).map(|k| (a[k] - b[k]) / self.width.powi(k as i32)).collect()
    }

    fn support(&self) -> (f64, f64) {
        (self.lo - self.width, self.hi + self.width)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BumpMode {
    /// `b ≥ 𝟙_{[0,1]}`, supported in `(-1/3, 4/3)`.
    Upper,
    /// `b ≤ 𝟙_{[0,1]}`, equal to one on `[1/6, 5/6]`.
    Lower,
}

pub fn detector(mode: BumpMode) -> MollifiedIndicator {
    match mode {
        BumpMode::Upper => MollifiedIndicator::new(-1.0 / 6.0, 7.0 / 6.0, 0.16),
        BumpMode::Lower => MollifiedIndicator::new(1.0 / 12.0, 11.0 / 12.0, 1.0 / 12.0),
    }
}

pub fn bump_b(mode: BumpMode, y: f64) -> f64 {
    detector(mode).value(y)
}

/// Cut-off in `q/Q` dominating `𝟙_{[1,2)}`.
pub fn omega_upper() -> MollifiedIndicator {
    MollifiedIndicator::new(0.9, 2.1, 0.1)
}

/// Cut-off in `q/Q` dominated by `𝟙_{[1,2)}`.
pub fn omega_lower() -> MollifiedIndicator {
    MollifiedIndicator::new(1.1, 1.9, 0.1)
}

// ---------------------------------------------------------------------------------------------
// Weights on R^m

/// Radial jet of `‖x - c‖` (`x ≠ c`).
fn distance_jet(center: &[f64], x: &[f64], order: usize) -> Jet {
    let m = x.len();
    let mut s = Jet::zero(m, order);
    for i in 0..m {
        let v = Jet::variable(m, order, i, x[i] - center[i]);
        s = &s + &(&v * &v);
    }
    s.powf(0.5)
}

/// Equal to one on `B(c, inner)` and supported in `B(c, outer)`.
#[derive(Clone, Debug)]
pub struct BallBump {
    pub center: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
}

impl BallBump {
    pub fn new(center: Vec<f64>, inner: f64, outer: f64) -> Self {
        assert!(0.0 < inner && inner < outer, "need 0 < inner < outer");
        BallBump { center, inner, outer }
    }

    /// The atlas bump at `x₁`: one on `B(x₁, ε/8)`, supported in `B(x₁, ε/4)`.
    pub fn atlas(center: Vec<f64>, eps: f64) -> Self {
        BallBump::new(center, eps / 8.0, eps / 4.0)
    }

    fn arg(&self, r: f64) -> f64 {
        2.0 * (r - self.inner) / (self.outer - self.inner) - 1.0
    }
}

impl Weight for BallBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let r = Ball::new(self.center.clone(), 0.0).distance_from_center(x);
        1.0 - smooth_step(self.arg(r))
    }

    fn support(&self) -> Ball {
        Ball::new(self.center.clone(), self.outer)
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let m = x.len();
        let r = Ball::new(self.center.clone(), 0.0).distance_from_center(x);
        if r <= self.inner {
            return Jet::constant(m, order, 1.0);
        }
        if r >= self.outer {
            return Jet::zero(m, order);
        }
        let k = 2.0 / (self.outer - self.inner);
        let d = smooth_step_derivatives(self.arg(r), order);
        let derivs: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(j, v)| if j == 0 { 1.0 - v } else { -v * k.powi(j as i32) })
            .collect();
        distance_jet(&self.center, x, order).compose(&derivs)
    }
}

/// Identically zero.
#[derive(Clone, Debug)]
pub struct ZeroWeight {
    pub dim: usize,
}

impl Weight for ZeroWeight {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _x: &[f64]) -> f64 {
        0.0
    }

    fn support(&self) -> Ball {
        Ball::new(vec![0.0; self.dim], 0.0)
    }

    fn taylor(&self, _x: &[f64], order: usize) -> Jet {
        Jet::zero(self.dim, order)
    }
}

/// Separable bump `Π_i ψ((x_i - c_i)/a_i)` scaled by `height`.
#[derive(Clone, Debug)]
pub struct ProductBump {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub height: f64,
}

impl ProductBump {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>) -> Self {
        ProductBump { center, half_widths, height: 1.0 }
    }

    /// Rescaled to unit mass.
    pub fn normalized(mut self) -> Self {
        let mass: f64 = self.half_widths.iter().map(|a| a * bump_mass()).product();
        self.height = 1.0 / mass;
        self
    }

    /// Value at the center.
    pub fn peak(&self) -> f64 {
        self.height * (-1.0f64).exp().powi(self.center.len() as i32)
    }

    pub fn factor(&self, i: usize, t: f64) -> f64 {
        psi((t - self.center[i]) / self.half_widths[i])
    }
}

impl Weight for ProductBump {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.height * (0..x.len()).map(|i| self.factor(i, x[i])).product::<f64>()
    }

    fn support(&self) -> Ball {
        let r = norm(&self.half_widths);
        Ball::new(self.center.clone(), r)
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let m = x.len();
        let mut out = Jet::constant(m, order, self.height);
        for i in 0..m {
            let a = self.half_widths[i];
            let t = (x[i] - self.center[i]) / a;
            let d: Vec<f64> = psi_derivatives(t, order)
                .iter()
                .enumerate()
                .map(|(k, v)| v / a.powi(k as i32))
                .collect();
            out = &out * &Jet::variable(m, order, i, x[i]).compose(&d);
        }
        out
    }

    fn as_product(&self) -> Option<&ProductBump> {
        Some(self)
    }
}

/// Sum of atlas bumps over every ball of an atlas; a grid index keeps evaluation local.
#[derive(Clone, Debug)]
pub struct AtlasSum {
    bumps: Vec<BallBump>,
    cell: f64,
    index: HashMap<Vec<i64>, Vec<usize>>,
    outer: f64,
}

impl AtlasSum {
    pub fn new(balls: &[Ball]) -> Self {
        let bumps: Vec<BallBump> =
            balls.iter().map(|b| BallBump::atlas(b.center.clone(), 8.0 * b.radius)).collect();
        let cell = bumps.first().map_or(1.0, |b| 2.0 * b.outer);
        let mut index: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        let mut outer = 0.0f64;
        for (i, b) in bumps.iter().enumerate() {
            outer = outer.max(norm(&b.center) + b.outer);
            let lo: Vec<i64> = b.center.iter().map(|c| ((c - b.outer) / cell).floor() as i64).collect();
            let hi: Vec<i64> = b.center.iter().map(|c| ((c + b.outer) / cell).floor() as i64).collect();
            let mut key = lo.clone();
            loop {
                index.entry(key.clone()).or_default().push(i);
                let mut axis = 0;
                while axis < key.len() {
                    key[axis] += 1;
                    if key[axis] > hi[axis] {
                        key[axis] = lo[axis];
                        axis += 1;
                    } else {
                        break;
                    }
                }
                if axis == key.len() {
                    break;
                }
            }
        }
        AtlasSum { bumps, cell, index, outer }
    }

    pub fn len(&self) -> usize {
        self.bumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bumps.is_empty()
    }

    fn candidates(&self, x: &[f64]) -> &[usize] {
        let key: Vec<i64> = x.iter().map(|v| (v / self.cell).floor() as i64).collect();
        self.index.get(&key).map_or(&[], |v| v.as_slice())
    }
}

impl Weight for AtlasSum {
    fn dim(&self) -> usize {
        self.bumps.first().map_or(0, |b| b.center.len())
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.candidates(x).iter().map(|&i| self.bumps[i].eval(x)).sum()
    }

    fn support(&self) -> Ball {
        Ball::new(vec![0.0; self.dim()], self.outer)
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let mut out = Jet::zero(x.len(), order);
        for &i in self.candidates(x) {
            out = &out + &self.bumps[i].taylor(x, order);
        }
        out
    }
}

/// `y ↦ w((∇f)^{-1}(y))`, zero where the inverse is unavailable.
#[derive(Clone, Debug)]
pub struct DualWeight {
    base: Arc<dyn Weight>,
    dual: Arc<DualSurface>,
    support: Ball,
}

impl DualWeight {
    pub fn base(&self) -> &Arc<dyn Weight> {
        &self.base
    }
}

impl Weight for DualWeight {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, y: &[f64]) -> f64 {
        if !self.support.contains(y) {
            return 0.0;
        }
        match self.dual.invert_gradient(y) {
            Ok(x) => self.base.eval(&x),
            Err(_) => 0.0,
        }
    }

    fn support(&self) -> Ball {
        self.support.clone()
    }
}

/// Pulls a weight back through the inverse gradient map. The support ball is fitted around
/// the image of the base support boundary.
pub fn dualize_weight(weight: Arc<dyn Weight>, dual: Arc<DualSurface>) -> DualWeight {
    let base = dual.base().clone();
    let sb = weight.support();
    let center = base.gradient(&sb.center);
    let m = sb.center.len();
    let mut radius = 0.0f64;
    for dir in sphere_directions(m, 256) {
        let x: Vec<f64> = sb.center.iter().zip(&dir).map(|(c, u)| c + sb.radius * u).collect();
        let y = base.gradient(&x);
        radius = radius.max(norm(&y.iter().zip(&center).map(|(a, b)| a - b).collect::<Vec<_>>()));
    }
    DualWeight { base: weight, dual, support: Ball::new(center, 1.05 * radius) }
}

/// Deterministic spread of unit vectors.
pub fn sphere_directions(m: usize, count: usize) -> Vec<Vec<f64>> {
    match m {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..count)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(count + 2 * m);
            for i in 0..m {
                for s in [-1.0, 1.0] {
                    let mut v = vec![0.0; m];
                    v[i] = s;
                    out.push(v);
                }
            }
            for k in 0..count {
                let v: Vec<f64> = (0..m).map(|i| halton(k + 1, PRIMES[i % PRIMES.len()]) * 2.0 - 1.0).collect();
                let r = norm(&v);
                if r > 1e-9 {
                    out.push(v.iter().map(|a| a / r).collect());
                }
            }
            out
        }
    }
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

pub(crate) fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Deterministic low-discrepancy points in a ball.
pub fn ball_samples(ball: &Ball, count: usize) -> Vec<Vec<f64>> {
    let m = ball.center.len();
    let mut out = Vec::with_capacity(count);
    let mut i = 1;
    while out.len() < count {
        let v: Vec<f64> = (0..m).map(|k| 2.0 * halton(i, PRIMES[k % PRIMES.len()]) - 1.0).collect();
        i += 1;
        if norm(&v) < 1.0 {
            out.push(ball.center.iter().zip(&v).map(|(c, u)| c + ball.radius * u).collect());
        }
    }
    out
}

/// All multi-indices of total degree at most `order`.
pub fn multi_indices(m: usize, order: usize) -> Vec<Vec<u8>> {
    Jet::zero(m, order).monomials().to_vec()
}

/// Sampled `max_{|α| ≤ order} sup |∂^α g|` over the support, inflated by 5%.
pub fn estimate_cm_norm(g: &dyn Weight, order: usize, samples: usize) -> f64 {
    let alphas = multi_indices(g.dim(), order);
    let pts = ball_samples(&g.support(), samples);
    let mut best = 0.0f64;
    for x in &pts {
        let j = g.taylor(x, order);
        for a in &alphas {
            best = best.max(j.partial(a).abs());
        }
    }
    1.05 * best
}

// ---------------------------------------------------------------------------------------------
// Envelopes

#[derive(Clone, Debug, PartialEq)]
pub struct EnvelopeSpec {
    /// Derivative order bound `M`.
    pub order: usize,
    /// Support slack `η`.
    pub eta: f64,
    /// Bound `Y ≥ ‖g‖_{C^M}`.
    pub height: f64,
    /// Mollifier scale `η / (10(n-1))`.
    pub theta0: f64,
}

impl EnvelopeSpec {
    pub fn new(order: usize, eta: f64, height: f64, n: usize) -> Self {
        EnvelopeSpec { order, eta, height, theta0: eta / (10.0 * (n as f64 - 1.0)) }
    }
}

/// `Y · (𝟙_{B(c, r+η/2)} smoothed at scale ϑ₀)`: equal to `Y` on `B(c, r+η/2-ϑ₀)`, supported in
/// `B(c, r+η/2+ϑ₀)`.
#[derive(Clone, Debug)]
pub struct RadialEnvelope {
    pub center: Vec<f64>,
    pub mid: f64,
    pub theta0: f64,
    pub height: f64,
}

impl RadialEnvelope {
    fn arg(&self, r: f64) -> f64 {
        (self.mid - r) / self.theta0
    }

    pub fn scaled(&self, c: f64) -> RadialEnvelope {
        RadialEnvelope { height: self.height * c, ..self.clone() }
    }
}

impl Weight for RadialEnvelope {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let r = Ball::new(self.center.clone(), 0.0).distance_from_center(x);
        self.height * smooth_step(self.arg(r))
    }

    fn support(&self) -> Ball {
        Ball::new(self.center.clone(), self.mid + self.theta0)
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let m = x.len();
        let r = Ball::new(self.center.clone(), 0.0).distance_from_center(x);
        if r <= self.mid - self.theta0 {
            return Jet::constant(m, order, self.height);
        }
        if r >= self.mid + self.theta0 {
            return Jet::zero(m, order);
        }
        let d = smooth_step_derivatives(self.arg(r), order);
        let derivs: Vec<f64> = d
            .iter()
            .enumerate()
            .map(|(j, v)| self.height * v * (-1.0 / self.theta0).powi(j as i32))
            .collect();
        distance_jet(&self.center, x, order).compose(&derivs)
    }
}

/// Smooth majorant of `g` and its derivatives up to order `M`, supported in `B(c, r+η)` and
/// equal to `Y` on `B(c, r+η/3)`, where `B(c, r)` is the support ball of `g`.
pub fn envelope_build(g: &dyn Weight, spec: &EnvelopeSpec) -> Result<RadialEnvelope> {
    let sb = g.support();
    if !(spec.eta > 0.0 && spec.eta < sb.radius) {
        return Err(Error::BadSlack { eta: spec.eta, radius: sb.radius });
    }
    Ok(RadialEnvelope { center: sb.center, mid: sb.radius + spec.eta / 2.0, theta0: spec.theta0, height: spec.height })
}

/// Signed test function `bump(x) · Σ_k a_k cos(⟨w_k, x⟩ + φ_k)` supported in a ball.
#[derive(Clone, Debug)]
pub struct TrigBump {
    pub bump: BallBump,
    pub modes: Vec<(f64, Vec<f64>, f64)>,
}

impl TrigBump {
    fn trig(&self, x: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(a, w, p)| a * (w.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() + p).cos())
            .sum()
    }
}

impl Weight for TrigBump {
    fn dim(&self) -> usize {
        self.bump.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.bump.eval(x) * self.trig(x)
    }

    fn support(&self) -> Ball {
        self.bump.support()
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let m = x.len();
        let mut t = Jet::zero(m, order);
        for (a, w, p) in &self.modes {
            let mut arg = Jet::constant(m, order, *p);
            for i in 0..m {
                arg = &arg + &Jet::variable(m, order, i, x[i]).scale(w[i]);
            }
            let v = arg.value();
            let derivs: Vec<f64> = (0..=order)
                .map(|k| match k % 4 {
                    0 => v.cos(),
                    1 => -v.sin(),
                    2 => -v.cos(),
                    _ => v.sin(),
                })
                .collect();
            t = &t + &arg.compose(&derivs).scale(*a);
        }
        &self.bump.taylor(x, order) * &t
    }
}

// ---------------------------------------------------------------------------------------------
// P_κ weights

/// `Σ_{μ ≤ min(κ, t-1)} Q^{-με} C(κ, μ) ϱ_μ` with `ϱ_μ` recursive scaled envelopes of `ϱ_0`.
#[derive(Clone, Debug)]
pub struct PKappaWeight {
    pub kappa: usize,
    pub t_cut: usize,
    pub q: f64,
    pub eps: f64,
    /// `(μ, Q^{-με} C(κ, μ), ϱ_μ)`.
    pub layers: Vec<(usize, f64, Arc<dyn Weight>)>,
}

impl Weight for PKappaWeight {
    fn dim(&self) -> usize {
        self.layers[0].2.dim()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.layers.iter().map(|(_, c, w)| c * w.eval(x)).sum()
    }

    fn support(&self) -> Ball {
        self.layers
            .iter()
            .map(|(_, _, w)| w.support())
            .max_by(|a, b| a.radius.total_cmp(&b.radius))
            .expect("at least one layer")
    }

    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let mut out = Jet::zero(x.len(), order);
        for (_, c, w) in &self.layers {
            out = &out + &w.taylor(x, order).scale(*c);
        }
        out
    }
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `Σ_{τ ≤ t} |𝔇_τ w|(x)` with the operators built from the Taylor data of `phase` at `x`.
pub fn stationary_operator_sum(w: &dyn Weight, phase: &dyn Surface, x: &[f64], t: usize, q_weight: f64) -> f64 {
    let pj = phase.taylor(x, 2 * t + 2);
    let aj = w.taylor(x, 2 * t);
    match stationary_terms(&pj, &aj, t) {
        Ok(terms) => terms.iter().enumerate().map(|(tau, v)| q_weight.powi(tau as i32) * v.norm()).sum(),
        Err(_) => f64::INFINITY,
    }
}

/// Builds the recursive chain `ϱ_κ = c_κ 𝓔^{M, 2^{-κ-4}ε}_{ϱ_{κ-1}}` and stacks the first
/// `min(κ, t-1) + 1` layers. `c_κ` is the smallest constant (times 1.1) making
/// `Σ_τ |𝔇_τ ϱ_{κ-1}| ≤ ϱ_κ` on a probe grid.
pub fn p_kappa_build(
    base: Arc<dyn Weight>,
    phase: Arc<dyn Surface>,
    kappa: usize,
    t_cut: usize,
    q: f64,
    eps: f64,
    eps_x1: f64,
) -> Result<PKappaWeight> {
    if t_cut == 0 {
        return Err(invalid("t_cut", "must be at least 1"));
    }
    let n = base.dim() + 1;
    let limit = eps_x1 / 2.0;
    let top = kappa.min(t_cut - 1);
    let order = 2 * t_cut;
    let center = base.support().center;
    let mut chain: Vec<Arc<dyn Weight>> = vec![base.clone()];
    let mut radius = base.support().radius;
    if radius >= limit {
        return Err(Error::SupportOverflow { slack: radius, limit });
    }
    for k in 1..=top {
        let prev = chain[k - 1].clone();
        let eta = 2f64.powi(-(k as i32) - 4) * eps_x1;
        let height = estimate_cm_norm(prev.as_ref(), order, 2000);
        let spec = EnvelopeSpec::new(order, eta, height, n);
        let env = envelope_build(prev.as_ref(), &spec)?;
        radius += eta;
        if radius >= limit {
            return Err(Error::SupportOverflow { slack: radius, limit });
        }
        let mut ratio = 0.0f64;
        for x in ball_samples(&prev.support(), 400) {
            let lhs = stationary_operator_sum(prev.as_ref(), phase.as_ref(), &x, t_cut, 1.0);
            let rhs = env.eval(&x);
            if rhs > 0.0 {
                ratio = ratio.max(lhs / rhs);
            }
        }
        let c = 1.1 * ratio.max(1e-300) ;
        let mut layer = env.scaled(c);
        layer.center = center.clone();
        chain.push(Arc::new(layer));
    }
    let layers = (0..=top)
        .map(|mu| (mu, q.powf(-(mu as f64) * eps) * binomial(kappa, mu), chain[mu].clone()))
        .collect();
    Ok(PKappaWeight { kappa, t_cut, q, eps, layers })
}

// ---------------------------------------------------------------------------------------------
// Fourier transforms

const FOURIER_NODES: usize = 16;

fn panels_for(width: f64, freq: f64, quad_points: usize) -> usize {
    let base = quad_points.div_ceil(FOURIER_NODES);
    let oscill = (2.0 * width * freq.abs()).ceil() as usize;
    base.max(oscill).max(1)
}

/// `∫ w(x) e(-⟨ξ, x⟩) dx` by tensor Gauss–Legendre panels over the support box.
pub fn weight_fourier(w: &dyn Weight, xi: &[f64], quad_points: usize) -> Complex64 {
    let sb = w.support();
    let lo: Vec<f64> = sb.center.iter().map(|c| c - sb.radius).collect();
    let hi: Vec<f64> = sb.center.iter().map(|c| c + sb.radius).collect();
    let panels: Vec<usize> = xi.iter().map(|f| panels_for(2.0 * sb.radius, *f, quad_points)).collect();
    quad::integrate_box(
        |x| {
            let v = w.eval(x);
            if v == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let ph: f64 = x.iter().zip(xi).map(|(a, b)| a * b).sum();
            e(-ph) * v
        },
        &lo,
        &hi,
        &panels,
        FOURIER_NODES,
    )
}

/// `∫ p(x) e(-ξx) dx`.
pub fn profile_fourier(p: &dyn Profile, xi: f64, quad_points: usize) -> Complex64 {
    let (a, b) = p.support();
    let panels = panels_for(b - a, xi, quad_points);
    quad::integrate_complex(|x| e(-xi * x) * p.value(x), a, b, panels, FOURIER_NODES)
}

/// Fourier transform of the even extension `y ↦ p(|y|)`: `2∫_0^∞ p(y) cos(2πξy) dy`.
pub fn even_profile_fourier(p: &dyn Profile, xi: f64, quad_points: usize) -> f64 {
    let (_, b) = p.support();
    let panels = panels_for(b, xi, quad_points);
    2.0 * quad::integrate(|y| p.value(y) * (std::f64::consts::TAU * xi * y).cos(), 0.0, b, panels, FOURIER_NODES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homfun::HomogeneousSurface;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn omega_examples() {
        assert_eq!(omega_partition_eval(0.5), 0.0);
        assert_eq!(omega_partition_eval(2.0), 1.0);
        let expected = (1.0 - (-4.0f64).exp()) * (-0.5f64).exp();
        assert_relative_eq!(omega_partition_eval(1.5), expected, epsilon = 1e-14);
        assert!((omega_partition_eval(1.5) - 0.59545).abs() < 1e-4);
        let s: f64 = (-3..=3).map(|j| omega_partition_eval(3.0 / 2f64.powi(j))).sum();
        assert_relative_eq!(s, 1.0, epsilon = 1e-12);
        assert_eq!(omega_partition_eval(3.0 / 4.0), 0.0);
        assert_eq!(omega_partition_eval(3.0 / 0.5), 0.0);
    }

    #[test]
    fn omega_is_even_and_bounded() {
        for k in 0..2000 {
            let x = -5.0 + 10.0 * k as f64 / 2000.0;
            let v = omega_partition_eval(x);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, omega_partition_eval(-x));
        }
    }

    #[test]
    fn omega_derivatives_match_differences() {
        for &x in &[1.3, 1.8, 2.5, 3.6, -2.7] {
            let d = Skriganov.derivatives(x, 2);
            let h = 1e-5;
            let fd = (omega_partition_eval(x + h) - omega_partition_eval(x - h)) / (2.0 * h);
            assert_relative_eq!(d[1], fd, epsilon = 1e-7);
            let fd2 = (omega_partition_eval(x + h) - 2.0 * omega_partition_eval(x) + omega_partition_eval(x - h)) / (h * h);
            assert_relative_eq!(d[2], fd2, epsilon = 1e-3);
        }
    }

    #[test]
    fn smooth_step_matches_direct_quadrature() {
        let mass = quad::integrate(psi, -1.0, 1.0, 64, 16);
        assert_relative_eq!(bump_mass(), mass, epsilon = 1e-14);
        for &s in &[-0.9, -0.31, 0.0, 0.123, 0.77, 0.999] {
            let direct = quad::integrate(psi, -1.0, s, 64, 16) / mass;
            assert_relative_eq!(smooth_step(s), direct, epsilon = 1e-12);
        }
        assert_relative_eq!(smooth_step(0.0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn detector_examples() {
        assert_eq!(bump_b(BumpMode::Upper, 0.5), 1.0);
        assert_eq!(bump_b(BumpMode::Upper, 1.5), 0.0);
        assert_eq!(bump_b(BumpMode::Lower, -0.01), 0.0);
        let (lo, hi) = detector(BumpMode::Upper).support();
        assert!(lo > -1.0 / 3.0 && hi < 4.0 / 3.0);
        for k in 0..10_000 {
            let y = -0.5 + 2.0 * k as f64 / 10_000.0;
            let ind = if (0.0..=1.0).contains(&y) { 1.0 } else { 0.0 };
            assert!(bump_b(BumpMode::Upper, y) >= ind);
            assert!(bump_b(BumpMode::Lower, y) <= ind);
            if (1.0 / 6.0..=5.0 / 6.0).contains(&y) {
                assert_eq!(bump_b(BumpMode::Lower, y), 1.0);
            }
        }
    }

    #[test]
    fn sandwich_cutoffs_in_q() {
        for k in 0..10_000 {
            let x = 3.0 * k as f64 / 10_000.0;
            let ind = if (1.0..2.0).contains(&x) { 1.0 } else { 0.0 };
            assert!(omega_upper().value(x) >= ind);
            assert!(omega_lower().value(x) <= ind);
        }
    }

    #[test]
    fn dyadic_sandwich() {
        let w = dyadic_cutoff();
        for r_max in [0usize, 1, 5, 20] {
            for k in 0..500 {
                let x = 2f64.powf(-5.0 + (r_max as f64 + 7.0) * k as f64 / 500.0);
                let s: f64 = (0..=r_max).map(|r| w.value(x / 2f64.powi(r as i32))).sum();
                let lower = if (1.0..=2f64.powi(r_max as i32)).contains(&x) { 1.0 } else { 0.0 };
                let upper = if (0.1..=2f64.powi(r_max as i32 + 1)).contains(&x) { 1.0 } else { 0.0 };
                assert!(s >= lower - 1e-12 && s <= upper + 1e-12, "x={x} R={r_max} s={s}");
            }
        }
    }

    #[test]
    fn ball_bump_plateau_and_support() {
        let b = BallBump::atlas(vec![0.75, 0.0], 0.25);
        assert_eq!(b.eval(&[0.75, 0.02]), 1.0);
        assert_eq!(b.eval(&[0.75, 0.07]), 0.0);
        let x = [0.79, 0.02];
        let j = b.taylor(&x, 2);
        let h = 1e-6;
        let fd = (b.eval(&[x[0] + h, x[1]]) - b.eval(&[x[0] - h, x[1]])) / (2.0 * h);
        assert_relative_eq!(j.partial(&[1, 0]), fd, epsilon = 1e-6);
    }

    #[test]
    fn dual_weight_for_quadratic_is_halving() {
        let f: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(3, 2.0).unwrap());
        let dual = Arc::new(DualSurface::new(f));
        let w: Arc<dyn Weight> = Arc::new(BallBump::new(vec![0.7, 0.1], 0.05, 0.1));
        let dw = dualize_weight(w.clone(), dual);
        for y in [[1.4, 0.2], [1.45, 0.25], [1.3, 0.2], [1.5, 0.1]] {
            assert_relative_eq!(dw.eval(&y), w.eval(&[y[0] / 2.0, y[1] / 2.0]), epsilon = 1e-12);
        }
    }

    #[test]
    fn dual_weight_support_center_is_forward_image() {
        let f: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(3, 4.0).unwrap());
        let dual = Arc::new(DualSurface::new(f.clone()));
        let x1 = vec![0.6, 0.3];
        let w: Arc<dyn Weight> = Arc::new(BallBump::atlas(x1.clone(), 0.2));
        let dw = dualize_weight(w.clone(), dual);
        let img = f.gradient(&x1);
        assert_relative_eq!(dw.support().center[0], img[0], epsilon = 1e-12);
        assert_relative_eq!(dw.support().center[1], img[1], epsilon = 1e-12);
        for x in ball_samples(&w.support(), 1000) {
            assert_relative_eq!(dw.eval(&f.gradient(&x)), w.eval(&x), epsilon = 1e-9);
        }
    }

    #[test]
    fn envelope_plateau_and_support() {
        let g = BallBump::new(vec![0.0, 0.0], 0.5, 1.0);
        let spec = EnvelopeSpec::new(1, 0.3, 2.0, 3);
        assert_eq!(spec.theta0, 0.3 / 20.0);
        let env = envelope_build(&g, &spec).unwrap();
        assert_eq!(env.eval(&[1.1, 0.0]), 2.0);
        assert_eq!(env.eval(&[0.0, 1.0999]), 2.0);
        assert_eq!(env.eval(&[1.3, 0.0]), 0.0);
        assert!(matches!(envelope_build(&g, &EnvelopeSpec::new(1, 1.0, 2.0, 3)), Err(Error::BadSlack { .. })));
        assert!(matches!(envelope_build(&g, &EnvelopeSpec::new(1, 0.0, 2.0, 3)), Err(Error::BadSlack { .. })));
    }

    #[test]
    fn p_kappa_layers() {
        let f: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(3, 2.0).unwrap());
        let eps_x = 0.25;
        let base: Arc<dyn Weight> = Arc::new(BallBump::atlas(vec![0.75, 0.0], eps_x));
        let p0 = p_kappa_build(base.clone(), f.clone(), 0, 3, 1024.0, 0.1, eps_x).unwrap();
        assert_eq!(p0.layers.len(), 1);
        assert_eq!(p0.layers[0].1, 1.0);
        assert_eq!(p0.eval(&[0.75, 0.01]), base.eval(&[0.75, 0.01]));

        let p2 = p_kappa_build(base.clone(), f.clone(), 2, 3, 1024.0, 0.1, eps_x).unwrap();
        let coefs: Vec<f64> = p2.layers.iter().map(|l| l.1).collect();
        let qe = 1024f64.powf(-0.1);
        assert_eq!(coefs.len(), 3);
        assert_relative_eq!(coefs[0], 1.0);
        assert_relative_eq!(coefs[1], 2.0 * qe, epsilon = 1e-14);
        assert_relative_eq!(coefs[2], qe * qe, epsilon = 1e-14);

        let capped = p_kappa_build(base.clone(), f.clone(), 2, 2, 1024.0, 0.1, eps_x).unwrap();
        assert_eq!(capped.layers.len(), 2);

        let wide: Arc<dyn Weight> = Arc::new(BallBump::new(vec![0.75, 0.0], 0.1, 0.13));
        assert!(matches!(
            p_kappa_build(wide, f, 1, 2, 1024.0, 0.1, eps_x),
            Err(Error::SupportOverflow { .. })
        ));
    }

    #[test]
    fn fourier_basics() {
        let w = BallBump::new(vec![0.3, -0.2], 0.2, 0.5);
        let mass = weight_fourier(&w, &[0.0, 0.0], 64);
        assert!(mass.re > 0.0 && mass.im.abs() < 1e-14);
        let a = weight_fourier(&w, &[1.3, -0.7], 64);
        let b = weight_fourier(&w, &[-1.3, 0.7], 64);
        assert!((a - b.conj()).norm() < 1e-12);
    }

    #[test]
    fn fourier_decay_fit() {
        // |ŵ(ξ)| ≤ C (1 + |ξ|)^{-6} with C fitted over |ξ| ∈ [1, 1000]
        let p = MollifiedIndicator::new(-0.5, 0.5, 0.3);
        let c = (0..=60)
            .map(|k| {
                let xi = 10f64.powf(3.0 * k as f64 / 60.0);
                profile_fourier(&p, xi, 64).norm() * (1.0 + xi).powi(6)
            })
            .fold(0.0f64, f64::max);
        assert!(c.is_finite() && c < 1e6, "fitted constant {c}");
    }

    proptest! {
        #[test]
        fn partition_identity(logx in -20.0f64..20.0) {
            let x = 2f64.powf(logx);
            let s: f64 = (-24..=24).map(|j| omega_partition_eval(x / 2f64.powi(j))).sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn dual_weight_composition(a in 0.55f64..0.95, b in -0.2f64..0.2) {
            let f: Arc<dyn Surface> = Arc::new(HomogeneousSurface::radial(3, 3.0).unwrap());
            let dual = Arc::new(DualSurface::new(f.clone()));
            let w: Arc<dyn Weight> = Arc::new(BallBump::new(vec![0.75, 0.0], 0.1, 0.25));
            let dw = dualize_weight(w.clone(), dual);
            let x = [a, b];
            prop_assert!((dw.eval(&f.gradient(&x)) - w.eval(&x)).abs() < 1e-9);
        }
    }
}
