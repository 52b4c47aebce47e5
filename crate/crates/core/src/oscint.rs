//! Oscillatory integrals `I(λ, u, φ) = ∫ u(x) e(λφ(x)) dx`: quadrature, stationary-phase
//! expansions, rescaled phases with their critical points, and the frequency classification.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::homfun::{norm, Ball, Surface};
use crate::jet::Jet;
use crate::weights::{ball_samples, sphere_directions, Profile, Weight};
use crate::{e, quad};

/// `φ(x) = (s·f(x) + (a/2)‖x‖² - ⟨v, x⟩ + c) / scale`, where `f` is an optional surface.
#[derive(Clone, Debug)]
pub struct PhaseFunction {
    dim: usize,
    surface: Option<Arc<dyn Surface>>,
    surface_coef: f64,
    quadratic: f64,
    linear: Vec<f64>,
    constant: f64,
    scale: f64,
}

impl PhaseFunction {
    /// `‖x‖²/2`.
    pub fn quadratic(dim: usize) -> Self {
        PhaseFunction { dim, surface: None, surface_coef: 0.0, quadratic: 1.0, linear: vec![0.0; dim], constant: 0.0, scale: 1.0 }
    }

    /// `⟨v, x⟩`.
    pub fn linear(v: Vec<f64>) -> Self {
        let dim = v.len();
        PhaseFunction {
            dim,
            surface: None,
            surface_coef: 0.0,
            quadratic: 0.0,
            linear: v.iter().map(|a| -a).collect(),
            constant: 0.0,
            scale: 1.0,
        }
    }

    /// `coef·f(x) - ⟨v, x⟩`.
    pub fn from_surface(f: Arc<dyn Surface>, coef: f64, v: Vec<f64>) -> Self {
        PhaseFunction { dim: f.dim(), surface: Some(f), surface_coef: coef, quadratic: 0.0, linear: v, constant: 0.0, scale: 1.0 }
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    /// Divides the whole phase by `s`.
    pub fn divided_by(mut self, s: f64) -> Self {
        self.scale *= s;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant + 0.5 * self.quadratic * x.iter().map(|a| a * a).sum::<f64>();
        v -= x.iter().zip(&self.linear).map(|(a, b)| a * b).sum::<f64>();
        if let Some(f) = &self.surface {
            v += self.surface_coef * f.value(x);
        }
        v / self.scale
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = x.iter().zip(&self.linear).map(|(a, b)| self.quadratic * a - b).collect();
        if let Some(f) = &self.surface {
            for (gi, fi) in g.iter_mut().zip(f.gradient(x)) {
                *gi += self.surface_coef * fi;
            }
        }
        g.iter().map(|v| v / self.scale).collect()
    }

    pub fn taylor(&self, x: &[f64], order: usize) -> Jet {
        let m = self.dim;
        let mut j = Jet::constant(m, order, self.constant);
        for i in 0..m {
            let v = Jet::variable(m, order, i, x[i]);
            j = &j + &(&v * &v).scale(0.5 * self.quadratic);
            j = &j - &v.scale(self.linear[i]);
        }
        if let Some(f) = &self.surface {
            j = &j + &f.taylor(x, order).scale(self.surface_coef);
        }
        j.scale(1.0 / self.scale)
    }

    /// Per-axis `(a_i, b_i)` with `φ(x) = c + Σ_i (a_i x_i²/2 + b_i x_i)` when no surface term
    /// is present.
    pub fn separable(&self) -> Option<Vec<(f64, f64)>> {
        if self.surface.is_some() {
            return None;
        }
        Some(self.linear.iter().map(|b| (self.quadratic / self.scale, -b / self.scale)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct OscillatorySpec {
    pub lambda: f64,
    pub phase: PhaseFunction,
    pub amplitude: Arc<dyn Weight>,
    /// Expansion order, at most 2.
    pub t: usize,
    /// Quadrature nodes per wavelength of `e(λφ)`.
    pub points_per_wavelength: f64,
    /// Upper bound on nodes per axis.
    pub max_nodes: usize,
}

impl OscillatorySpec {
    pub fn new(lambda: f64, phase: PhaseFunction, amplitude: Arc<dyn Weight>) -> Self {
        OscillatorySpec { lambda, phase, amplitude, t: 0, points_per_wavelength: 10.0, max_nodes: 4000 }
    }

    pub fn with_order(mut self, t: usize) -> Self {
        self.t = t;
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        OscillatorySpec { lambda, ..self.clone() }
    }
}

const NODES: usize = 12;
const MIN_PANELS: usize = 8;
/// Separable integrals are one-dimensional, so they can afford far more nodes.
const SEPARABLE_NODES: usize = 20_000_000;

fn max_gradient(phase: &PhaseFunction, support: &Ball) -> f64 {
    let mut pts = ball_samples(support, 512);
    pts.push(support.center.clone());
    for u in sphere_directions(support.center.len(), 64) {
        pts.push(support.center.iter().zip(&u).map(|(c, v)| c + support.radius * v).collect());
    }
    pts.iter().map(|x| norm(&phase.gradient(x))).fold(0.0, f64::max)
}

fn panels_needed(spec: &OscillatorySpec, width: f64, slope: f64) -> usize {
    let nodes = spec.points_per_wavelength * spec.lambda * slope * width;
    ((nodes / NODES as f64).ceil() as usize).max(MIN_PANELS)
}

fn separable_value(spec: &OscillatorySpec, panels: &[usize]) -> Option<Complex64> {
    let pb = spec.amplitude.as_product()?;
    let axes = spec.phase.separable()?;
    let c0 = spec.phase.constant / spec.phase.scale;
    let mut out = e(spec.lambda * c0) * pb.height;
    for (i, (a, b)) in axes.iter().enumerate() {
        let lo = pb.center[i] - pb.half_widths[i];
        let hi = pb.center[i] + pb.half_widths[i];
        let (xs, ws) = quad::composite(lo, hi, panels[i], NODES);
        let v: Complex64 = xs
            .par_iter()
            .zip(ws.par_iter())
            .map(|(&x, &w)| e(spec.lambda * (0.5 * a * x * x + b * x)) * (w * pb.factor(i, x)))
            .collect::<Vec<_>>()
            .into_iter()
            .sum();
        out *= v;
    }
    Some(out)
}

fn box_value(spec: &OscillatorySpec, lo: &[f64], hi: &[f64], panels: &[usize]) -> Complex64 {
    let u = spec.amplitude.as_ref();
    quad::integrate_box(
        |x| {
            let a = u.eval(x);
            if a == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                e(spec.lambda * spec.phase.value(x)) * a
            }
        },
        lo,
        hi,
        panels,
        NODES,
    )
}

/// Panel Gauss–Legendre value of `∫ u e(λφ)`, accepted once doubling the panel count moves it by
/// less than `1e-8` relative (with an absolute floor of `1e-14 ∫|u|`).
pub fn oscillatory_quadrature(spec: &OscillatorySpec) -> Result<Complex64> {
    if !(spec.lambda > 0.0) {
        return Err(invalid("lambda", "must be positive"));
    }
    let support = spec.amplitude.support();
    let m = support.center.len();
    let slope = max_gradient(&spec.phase, &support);
    let separable = spec.amplitude.as_product().is_some() && spec.phase.separable().is_some();
    let (lo, hi, widths): (Vec<f64>, Vec<f64>, Vec<f64>) = match spec.amplitude.as_product().filter(|_| separable) {
        Some(pb) => (
            (0..m).map(|i| pb.center[i] - pb.half_widths[i]).collect(),
            (0..m).map(|i| pb.center[i] + pb.half_widths[i]).collect(),
            pb.half_widths.iter().map(|a| 2.0 * a).collect(),
        ),
        None => (
            support.center.iter().map(|c| c - support.radius).collect(),
            support.center.iter().map(|c| c + support.radius).collect(),
            vec![2.0 * support.radius; m],
        ),
    };
    let available = if separable { SEPARABLE_NODES } else { spec.max_nodes };
    let mut panels: Vec<usize> = widths.iter().map(|w| panels_needed(spec, *w, slope)).collect();
    let needed = panels.iter().max().copied().unwrap_or(MIN_PANELS) * NODES * 2;
    if needed > available {
        return Err(Error::ResolutionTooLow { needed, available });
    }
    let eval = |p: &[usize]| match separable {
        true => separable_value(spec, p).expect("separable"),
        false => box_value(spec, &lo, &hi, p),
    };
    let mass = {
        let mut sp = spec.clone();
        sp.phase = PhaseFunction::linear(vec![0.0; m]);
        let u = spec.amplitude.as_ref();
        quad::integrate_box(|x| Complex64::new(u.eval(x).abs(), 0.0), &lo, &hi, &vec![MIN_PANELS; m], NODES).re
    };
    let mut coarse = eval(&panels);
    for round in 0..4 {
        let fine_panels: Vec<usize> = panels.iter().map(|p| 2 * p).collect();
        if fine_panels.iter().max().copied().unwrap_or(0) * NODES > available {
            return Err(Error::ResolutionTooLow { needed: fine_panels[0] * NODES, available });
        }
        let fine = eval(&fine_panels);
        let diff = (fine - coarse).norm();
        if diff <= 1e-8 * fine.norm() + 1e-14 * mass {
            return Ok(fine);
        }
        if round == 3 {
            return Err(Error::NoConvergence { iterations: round + 1, residual: diff });
        }
        panels = fine_panels;
        coarse = fine;
    }
    unreachable!()
}

/// The operator values `L_τ u(x₀)`, `τ = 0..=t`, where
///
/// ```text
/// L_τ u = (2i)^{-τ} Σ_{μ ≤ 2τ} ⟨H⁻¹D, D⟩^{μ+τ}(g^μ u)(x₀) / (2^μ μ! (μ+τ)!)
/// ```
///
/// with `D = -i∂`, `H` the Hessian of the phase at `x₀` and `g` its Taylor remainder of degree
/// at least three. `phase` needs order `2t+2`, `amplitude` order `2t`.
pub fn stationary_terms(phase: &Jet, amplitude: &Jet, t: usize) -> Result<Vec<Complex64>> {
    let m = phase.vars();
    if phase.order() < 2 * t + 2 || amplitude.order() < 2 * t {
        return Err(invalid("jet order", format!("need phase order {} and amplitude order {}", 2 * t + 2, 2 * t)));
    }
    let h = hessian_of(phase);
    let a = h.clone().try_inverse().ok_or(Error::SingularHessian)?;
    let top = 6 * t;
    let mut g = phase.truncate(2 * t + 2).extend(top.max(2 * t + 2));
    {
        let mut coef = g.coefficients().to_vec();
        for (k, alpha) in g.monomials().iter().enumerate() {
            if alpha.iter().map(|&v| v as usize).sum::<usize>() <= 2 {
                coef[k] = 0.0;
            }
        }
        g = Jet::from_coefficients(m, g.order(), coef);
    }
    let u = amplitude.truncate(2 * t).extend(g.order());
    let mut out = Vec::with_capacity(t + 1);
    for tau in 0..=t {
        let mut total = 0.0;
        let mut gmu = u.clone();
        for mu in 0..=2 * tau {
            if mu > 0 {
                gmu = &gmu * &g;
            }
            let k = mu + tau;
            let mut w = gmu.truncate(2 * k);
            for _ in 0..k {
                w = w.contract_second(&a).scale(-1.0);
            }
            let denom = 2f64.powi(mu as i32) * crate::jet::factorial(mu) * crate::jet::factorial(k);
            total += w.value() / denom;
        }
        out.push(Complex64::new(0.0, 2.0).powi(-(tau as i32)) * total);
    }
    Ok(out)
}

fn hessian_of(j: &Jet) -> DMatrix<f64> {
    let m = j.vars();
    DMatrix::from_fn(m, m, |a, b| {
        let mut alpha = vec![0u8; m];
        alpha[a] += 1;
        alpha[b] += 1;
        j.partial(&alpha)
    })
}

/// `e(λφ(x₀)) e^{iπσ/4} |det(λH)|^{-1/2} Σ_{τ ≤ t} L_τ u(x₀) / (2πλ)^τ`.
pub fn stationary_expansion(spec: &OscillatorySpec, x0: &[f64]) -> Result<Complex64> {
    if spec.t > 2 {
        return Err(invalid("t", "expansion order is capped at 2"));
    }
    let gn = norm(&spec.phase.gradient(x0));
    if gn > 1e-8 {
        return Err(Error::WrongCriticalPoint { norm: gn });
    }
    let t = spec.t;
    let pj = spec.phase.taylor(x0, 2 * t + 2);
    let aj = spec.amplitude.taylor(x0, 2 * t);
    let h = hessian_of(&pj);
    let eig = SymmetricEigen::new(h.clone());
    if eig.eigenvalues.iter().any(|v| v.abs() < 1e-14) {
        return Err(Error::SingularHessian);
    }
    let sigma: i32 = eig.eigenvalues.iter().map(|v| if *v > 0.0 { 1 } else { -1 }).sum();
    let det = (h * spec.lambda).determinant().abs();
    let terms = stationary_terms(&pj, &aj, t)?;
    let series: Complex64 =
        terms.iter().enumerate().map(|(tau, v)| v / (TAU * spec.lambda).powi(tau as i32)).sum();
    let prefactor = e(spec.lambda * pj.value()) * Complex64::from_polar(1.0, PI * sigma as f64 / 4.0) / det.sqrt();
    Ok(prefactor * series)
}

/// Least-squares slope and intercept of `ys` against `xs`, with `r²`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Relative level below which quadrature values are treated as roundoff.
const NOISE_FLOOR: f64 = 1e-13;

/// Log–log slope of `|I(λ)|` over `lambdas`, after checking `‖∇φ‖ ≥ 1` on the amplitude
/// support. The fit uses the running upper envelope `max_{λ' ≥ λ} |I(λ')|` so that isolated
/// zeros of an oscillating transform do not dominate; values under `1e-13` times the largest
/// of `|∫u|` and the sampled `|I|` are dropped.
pub fn nonstationary_decay(spec: &OscillatorySpec, lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() < 2 {
        return Err(Error::Empty("lambda grid"));
    }
    let support = spec.amplitude.support();
    let mut pts = ball_samples(&support, 2000);
    for u in sphere_directions(support.center.len(), 256) {
        pts.push(support.center.iter().zip(&u).map(|(c, v)| c + support.radius * v).collect());
    }
    pts.push(support.center.clone());
    let min = pts
        .iter()
        .filter(|x| spec.amplitude.eval(x) > 0.0 || support.contains(x))
        .map(|x| norm(&spec.phase.gradient(x)))
        .fold(f64::INFINITY, f64::min);
    if min < 1.0 - 1e-12 {
        return Err(Error::GradientTooSmall { min });
    }
    let values: Vec<f64> = lambdas
        .iter()
        .map(|&l| oscillatory_quadrature(&spec.with_lambda(l)).map(|v| v.norm()))
        .collect::<Result<_>>()?;
    let zero = vec![0.0; support.center.len()];
    let mass = crate::weights::weight_fourier(spec.amplitude.as_ref(), &zero, 64).norm();
    let floor = NOISE_FLOOR * values.iter().cloned().fold(mass, f64::max);
    let mut env = values.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        lambdas.iter().zip(&env).filter(|(_, v)| **v > floor).map(|(l, v)| (l.ln(), v.ln())).unzip();
    if xs.len() < 2 {
        return Err(Error::Empty("fewer than two lambdas above the quadrature noise floor"));
    }
    Ok(linear_fit(&xs, &ys).0)
}

/// Direct sum `Σ_q g(q/Q) e(μq)` next to its Poisson companion `Q Σ_k ĝ(Q(k - μ))` over the
/// integers `k` nearest to `μ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeometricSum {
    pub direct: Complex64,
    pub fourier: Complex64,
}

pub fn smooth_geometric_sum(g: &dyn Profile, q_scale: f64, mu: f64, quad_points: usize) -> GeometricSum {
    let (a, b) = g.support();
    let lo = (a * q_scale).floor() as i64;
    let hi = (b * q_scale).ceil() as i64;
    let direct: Complex64 = (lo..=hi).map(|q| e(mu * q as f64) * g.value(q as f64 / q_scale)).sum();
    let k0 = mu.round();
    let mut ks = vec![k0];
    if ((mu - mu.floor()) - 0.5).abs() < 1e-15 {
        ks = vec![mu.floor(), mu.floor() + 1.0];
    }
    let fourier = ks
        .iter()
        .map(|k| crate::weights::profile_fourier(g, q_scale * (k - mu), quad_points) * q_scale)
        .sum();
    GeometricSum { direct, fourier }
}

// ---------------------------------------------------------------------------------------------
// Rescaled phases

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum FrequencyClass {
    K1,
    K2,
    K3,
}

/// The phase `f_p(x) - 2^{(d-p)ℓ}⟨k/j, x⟩` with `λ = 2^{-dℓ}qj`.
///
/// `f_p` is the surface of degree `d/p` (the base surface for `p = 1`, its Legendre dual for
/// `p = d - 1`) and `f_dual` the other one, whose gradient inverts `∇f_p`. `domain` is the ball
/// `𝒲_p`; the larger ball `𝒱_p` has twice its radius.
#[derive(Clone, Debug)]
pub struct RescaledPhase {
    pub f_p: Arc<dyn Surface>,
    pub f_dual: Arc<dyn Surface>,
    pub d: f64,
    pub p: f64,
    pub domain: Ball,
    pub j: i64,
    pub q: i64,
    pub k: Vec<i64>,
    pub ell: u32,
}

impl RescaledPhase {
    pub fn lambda(&self) -> f64 {
        2f64.powf(-self.d * self.ell as f64) * (self.q * self.j) as f64
    }

    fn shift(&self) -> f64 {
        2f64.powf((self.d - self.p) * self.ell as f64)
    }

    pub fn frequency(&self) -> Vec<f64> {
        self.k.iter().map(|&v| v as f64 / self.j as f64).collect()
    }

    pub fn phase(&self) -> PhaseFunction {
        let s = self.shift();
        PhaseFunction::from_surface(self.f_p.clone(), 1.0, self.frequency().iter().map(|v| s * v).collect())
    }

    fn image_boundary(&self, radius: f64) -> Vec<Vec<f64>> {
        let s = 1.0 / self.shift();
        sphere_directions(self.domain.center.len(), 512)
            .into_iter()
            .map(|u| {
                let x: Vec<f64> = self.domain.center.iter().zip(&u).map(|(c, v)| c + radius * v).collect();
                self.f_p.gradient(&x).iter().map(|g| s * g).collect()
            })
            .collect()
    }

    /// `γ_{ℓ,p} = 2^{-(d-p)ℓ} dist(∂𝒱_{d-p}, ∂𝒲_{d-p}) / 2^{10}`, distances taken between sampled
    /// boundary images.
    pub fn gamma(&self) -> f64 {
        let inner = self.image_boundary(self.domain.radius);
        let outer = self.image_boundary(2.0 * self.domain.radius);
        let mut best = f64::INFINITY;
        for a in &inner {
            for b in &outer {
                best = best.min(dist(a, b));
            }
        }
        best / 1024.0
    }

    /// Distance from `k/j` to `2^{-(d-p)ℓ}𝒲_{d-p}`: zero inside, else measured to the sampled
    /// boundary image.
    pub fn distance_to_image(&self) -> f64 {
        let y = self.frequency();
        let scaled: Vec<f64> = y.iter().map(|v| v * self.shift()).collect();
        let x = self.f_dual.gradient(&scaled);
        if x.iter().all(|v| v.is_finite()) && self.domain.contains(&x) {
            return 0.0;
        }
        self.image_boundary(self.domain.radius).iter().map(|b| dist(b, &y)).fold(f64::INFINITY, f64::min)
    }

    /// The normalized non-stationary form `(2^{-(d-p)ℓ} j f_p(x) - ⟨x, k⟩) / D` with frequency
    /// `q 2^{-ℓp} D`, where `D` is the distance from `k` to the gradient image of `support`.
    pub fn normalized(&self, support: &Ball) -> (PhaseFunction, f64) {
        let s = self.j as f64 / self.shift();
        let k: Vec<f64> = self.k.iter().map(|&v| v as f64).collect();
        let mut pts = ball_samples(support, 2000);
        for u in sphere_directions(support.center.len(), 512) {
            pts.push(support.center.iter().zip(&u).map(|(c, v)| c + support.radius * v).collect());
        }
        let dmin = pts
            .iter()
            .map(|x| {
                let g: Vec<f64> = self.f_p.gradient(x).iter().map(|v| s * v).collect();
                dist(&g, &k)
            })
            .fold(f64::INFINITY, f64::min);
        let phase = PhaseFunction::from_surface(self.f_p.clone(), s, k).divided_by(dmin);
        let lambda = self.q as f64 * 2f64.powf(-(self.ell as f64) * self.p) * dmin;
        (phase, lambda)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `x_{j,k,ℓ,p} = 2^{ℓp}(∇f_p)^{-1}(k/j)`, or `None` when it falls outside `𝒱_p`.
pub fn critical_point(rp: &RescaledPhase) -> Result<Option<Vec<f64>>> {
    if rp.j < 1 {
        return Err(invalid("j", "must be at least 1"));
    }
    let y = rp.frequency();
    let x: Vec<f64> = rp.f_dual.gradient(&y).iter().map(|v| v * 2f64.powf(rp.ell as f64 * rp.p)).collect();
    if !x.iter().all(|v| v.is_finite()) {
        return Ok(None);
    }
    let thick = Ball::new(rp.domain.center.clone(), 2.0 * rp.domain.radius);
    Ok(if thick.contains(&x) { Some(x) } else { None })
}

pub fn classify_frequency(rp: &RescaledPhase) -> FrequencyClass {
    let dist = rp.distance_to_image();
    if dist <= 1e-12 {
        FrequencyClass::K1
    } else if dist < rp.gamma() {
        FrequencyClass::K2
    } else {
        FrequencyClass::K3
    }
}

// ---------------------------------------------------------------------------------------------
// Duality probe

#[derive(Clone, Debug, serde::Serialize)]
pub struct DualityRecord {
    pub delta: f64,
    pub q_scale: f64,
    pub ell: u32,
    pub p: f64,
    /// `|Σ_{r ∈ 𝒢} N₁(r)|`, the K₁ part evaluated with the `τ ≤ 1` stationary expansion.
    pub lhs: f64,
    /// `Σ_{r ∈ 𝒢} Σ_i 2^{-2i} 𝔑(2^{i+1}/Q, 2^r, ℓ, d-p)` on the dual surface.
    pub rhs: f64,
    /// The `(δ', Q')` pairs at which dual counts were taken.
    pub dual_scales: Vec<(f64, f64)>,
}

/// Inputs of [`duality_probe`]. `weight` lives on the `f_p` side in `domain`; `dual_weight` is its
/// pull-back to the other side.
#[derive(Clone, Debug)]
pub struct DualityInput {
    pub f_p: Arc<dyn Surface>,
    pub f_dual: Arc<dyn Surface>,
    pub d: f64,
    pub p: f64,
    pub domain: Ball,
    pub weight: Arc<dyn Weight>,
    pub dual_weight: Arc<dyn Weight>,
    pub eps: f64,
    pub budget: f64,
}

pub fn duality_probe(input: &DualityInput, delta: f64, q_scale: f64, ell: u32, _kappa: usize) -> Result<DualityRecord> {
    use crate::asymptotics::ledger_build;
    use crate::counting::{localized_count, SmoothSpec};
    use crate::weights::{detector, dyadic_cutoff, even_profile_fourier, omega_upper, BumpMode};

    let n = input.domain.center.len() + 1;
    let ledger = ledger_build(delta, q_scale, input.eps, input.d, n, ell)?;
    let omega = omega_upper();
    let b = detector(BumpMode::Upper);
    let wj = dyadic_cutoff();
    let m = n - 1;
    let (qlo, qhi) = omega.support();
    let qs: Vec<i64> = ((qlo * q_scale).ceil() as i64..=(qhi * q_scale).floor() as i64).collect();

    let mut lhs = Complex64::new(0.0, 0.0);
    for &r in &ledger.good {
        let jmax = 2i64.pow(r as u32 + 1);
        for j in 1..=jmax {
            let wr = wj.value(j as f64 / 2f64.powi(r as i32));
            if wr == 0.0 {
                continue;
            }
            let bh = even_profile_fourier(&b, delta * j as f64, 256);
            let ks = k1_frequencies(input, j, ell);
            for &q in &qs {
                let wq = omega.value(q as f64 / q_scale);
                if wq == 0.0 {
                    continue;
                }
                let jac = (q as f64 * 2f64.powf(-(ell as f64) * input.p)).powi(m as i32);
                for k in &ks {
                    let rp = RescaledPhase {
                        f_p: input.f_p.clone(),
                        f_dual: input.f_dual.clone(),
                        d: input.d,
                        p: input.p,
                        domain: input.domain.clone(),
                        j,
                        q,
                        k: k.clone(),
                        ell,
                    };
                    let Some(x0) = critical_point(&rp)? else { continue };
                    let spec = OscillatorySpec::new(rp.lambda(), rp.phase(), input.weight.clone()).with_order(1);
                    let v = match stationary_expansion(&spec, &x0) {
                        Ok(v) => v,
                        Err(Error::SingularHessian) => continue,
                        Err(err) => return Err(err),
                    };
                    // the j < 0 terms are the complex conjugates
                    lhs += 2.0 * (v * (wq * wr * delta * bh * jac)).re;
                }
            }
        }
    }

    let mut rhs = 0.0;
    let mut dual_scales = Vec::new();
    let spec = SmoothSpec { omega: &omega, rho: input.dual_weight.as_ref(), b: &b, p: input.d - input.p };
    for &r in &ledger.good {
        let qd = 2f64.powi(r as i32);
        let mut i = 0;
        loop {
            let dd = 2f64.powi(i + 1) / q_scale;
            if dd > 0.5 {
                break;
            }
            dual_scales.push((dd, qd));
            rhs += 2f64.powi(-2 * i) * localized_count(input.f_dual.as_ref(), dd, qd, ell, &spec, input.budget)?;
            i += 1;
        }
    }
    Ok(DualityRecord { delta, q_scale, ell, p: input.p, lhs: lhs.norm(), rhs, dual_scales })
}

/// Integer `k` with `k/j ∈ 2^{-(d-p)ℓ}𝒲_{d-p}`.
fn k1_frequencies(input: &DualityInput, j: i64, ell: u32) -> Vec<Vec<i64>> {
    let m = input.domain.center.len();
    let s = 2f64.powf(-(input.d - input.p) * ell as f64) * j as f64;
    let img: Vec<Vec<f64>> = sphere_directions(m, 256)
        .into_iter()
        .map(|u| {
            let x: Vec<f64> = input.domain.center.iter().zip(&u).map(|(c, v)| c + input.domain.radius * v).collect();
            input.f_p.gradient(&x).iter().map(|g| s * g).collect()
        })
        .collect();
    let lo: Vec<i64> = (0..m).map(|i| img.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min).floor() as i64).collect();
    let hi: Vec<i64> = (0..m).map(|i| img.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).collect();
    let mut out = Vec::new();
    let mut k = lo.clone();
    loop {
        let y: Vec<f64> = k.iter().map(|&v| v as f64 / s).collect();
        let x = input.f_dual.gradient(&y);
        if x.iter().all(|v| v.is_finite()) && input.domain.contains(&x) {
            out.push(k.clone());
        }
        let mut axis = 0;
        while axis < m {
            k[axis] += 1;
            if k[axis] > hi[axis] {
                k[axis] = lo[axis];
                axis += 1;
            } else {
                break;
            }
        }
        if axis == m {
            break;
        }
    }
    out
}
