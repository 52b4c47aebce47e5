//! Counting engines: exact and smoothed counts of rational points near `q·f(a/q) ∈ ℤ`, their
//! dyadic and frequency localizations, Knapp-cap predictors and exact on-surface counts.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::homfun::{norm, Surface};
use crate::weights::{dyadic_cutoff, even_profile_fourier, Profile, Weight};

pub const DEFAULT_BUDGET: f64 = 2e10;

/// `‖x‖ = min_{z ∈ ℤ} |x - z|`.
pub fn nearest_int_dist(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// `(δQⁿ, (δ/Q)^{(n-1)/d} Qⁿ)`.
pub fn main_terms(delta: f64, q: f64, d: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    (delta * q.powf(nf), (delta / q).powf((nf - 1.0) / d) * q.powf(nf))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountRequest {
    pub delta: f64,
    pub q: f64,
    pub ell: Option<u32>,
    pub r: Option<u32>,
    /// `1` for the base surface, `d - 1` for its dual.
    pub p: f64,
    pub budget: f64,
}

impl CountRequest {
    pub fn new(delta: f64, q: f64) -> Self {
        CountRequest { delta, q, ell: None, r: None, p: 1.0, budget: DEFAULT_BUDGET }
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    pub fn at_level(mut self, ell: u32) -> Self {
        self.ell = Some(ell);
        self
    }

    pub fn at_frequency(mut self, r: u32) -> Self {
        self.r = Some(r);
        self
    }

    pub fn with_p(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.delta) {
            return Err(invalid("delta", format!("{} is outside [0, 1/2]", self.delta)));
        }
        if !(self.q >= 1.0) || !self.q.is_finite() {
            return Err(invalid("Q", format!("{} must be at least 1", self.q)));
        }
        Ok(())
    }

    /// Integer `q` with `Q ≤ q < 2Q`.
    pub fn q_range(&self) -> std::ops::Range<u64> {
        self.q.ceil() as u64..(2.0 * self.q).ceil() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum CountValue {
    Exact(u64),
    Real(f64),
}

impl CountValue {
    pub fn as_f64(&self) -> f64 {
        match *self {
            CountValue::Exact(v) => v as f64,
            CountValue::Real(v) => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountResult {
    pub n: usize,
    pub d: f64,
    pub request: CountRequest,
    pub mode: &'static str,
    pub value: CountValue,
    pub term_prob: f64,
    pub term_geom: f64,
    pub elapsed_s: f64,
}

pub const CSV_HEADER: &str = "n,d,p,delta,Q,ell,r,mode,count,term_prob,term_geom,elapsed_s";

impl CountResult {
    fn new(surface: &dyn Surface, request: &CountRequest, mode: &'static str, value: CountValue, start: Instant) -> Self {
        let n = surface.dim() + 1;
        let (term_prob, term_geom) = main_terms(request.delta, request.q, surface.degree(), n);
        CountResult {
            n,
            d: surface.degree(),
            request: request.clone(),
            mode,
            value,
            term_prob,
            term_geom,
            elapsed_s: start.elapsed().as_secs_f64(),
        }
    }

    pub fn exact(&self) -> Option<u64> {
        match self.value {
            CountValue::Exact(v) => Some(v),
            CountValue::Real(_) => None,
        }
    }

    /// One CSV line in the [`CSV_HEADER`] layout; `timing = false` writes a zero elapsed time so
    /// that reruns are byte-identical.
    pub fn csv_row(&self, timing: bool) -> String {
        let opt = |v: Option<u32>| v.map_or(String::new(), |x| x.to_string());
        let count = match self.value {
            CountValue::Exact(v) => v.to_string(),
            CountValue::Real(v) => format!("{v:.12e}"),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{:.12e},{:.12e},{:.6}",
            self.n,
            self.d,
            self.request.p,
            self.request.delta,
            self.request.q,
            opt(self.request.ell),
            opt(self.request.r),
            self.mode,
            count,
            self.term_prob,
            self.term_geom,
            if timing { self.elapsed_s } else { 0.0 }
        )
    }
}

fn check_budget(needed: f64, budget: f64) -> Result<()> {
    if needed > budget {
        Err(Error::BudgetExceeded { needed, budget })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------------------------
// Sums of squares

/// Prefix sums `P(s) = #{a ∈ ℤ^m : ‖a‖² ≤ s}` for `s ≤ limit`, cached per dimension.
pub fn square_prefix(m: usize, limit: u64) -> Arc<Vec<u64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<u64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("prefix cache poisoned").get(&m) {
        if t.len() as u64 > limit {
            return t.clone();
        }
    }
    let size = (limit + 1).max(1024).next_power_of_two() as usize;
    let mut r = vec![0u64; size];
    fill_representations(&mut r, m, 0, 1);
    let mut acc = 0u64;
    for v in r.iter_mut() {
        acc += *v;
        *v = acc;
    }
    let table = Arc::new(r);
    cache.lock().expect("prefix cache poisoned").insert(m, table.clone());
    table
}

fn fill_representations(r: &mut [u64], m: usize, partial: u64, mult: u64) {
    let limit = r.len() as u64 - 1;
    if m == 0 {
        r[partial as usize] += mult;
        return;
    }
    let mut a = 0u64;
    while partial + a * a <= limit {
        fill_representations(r, m - 1, partial + a * a, if a == 0 { mult } else { 2 * mult });
        a += 1;
    }
}

/// `#{a ∈ ℤ^m : ‖a‖ < radius}`.
pub fn ball_lattice_count(m: usize, radius: f64) -> u64 {
    if radius <= 0.0 {
        return 0;
    }
    let r2 = radius * radius;
    let mut s_max = r2.ceil() as u64;
    if s_max as f64 >= r2 {
        s_max = s_max.saturating_sub(1);
    }
    square_prefix(m, s_max)[s_max as usize]
}

// ---------------------------------------------------------------------------------------------
// Exact counts

/// Membership test `|v(s) - k| ≤ δ` for `v(s) = q c (s/q²)^{d/2}`, exact in integers when `c = 1`
/// and `d` is an even integer.
struct RadialTest {
    c: f64,
    d: f64,
    delta: f64,
    half_d: Option<u32>,
    /// `δ = mant / 2^shift`.
    mant: u128,
    shift: u32,
}

impl RadialTest {
    fn new(c: f64, d: f64, delta: f64) -> Self {
        let half_d = (c == 1.0 && d.fract() == 0.0 && d >= 2.0 && (d as u32).is_multiple_of(2)).then_some(d as u32 / 2);
        let (mut mant, mut shift) = (0u128, 0u32);
        if delta > 0.0 {
            let bits = delta.to_bits();
            let exp = ((bits >> 52) & 0x7ff) as i32;
            let frac = bits & ((1u64 << 52) - 1);
            let (mut m, mut e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
            while m % 2 == 0 && e < 0 {
                m /= 2;
                e += 1;
            }
            mant = m as u128;
            shift = (-e).max(0) as u32;
        }
        RadialTest { c, d, delta, half_d, mant, shift }
    }

    fn value(&self, q: u64, s: u64) -> f64 {
        let qf = q as f64;
        self.c * (s as f64).powf(self.d / 2.0) / qf.powf(self.d - 1.0)
    }

    fn within(&self, q: u64, s: u64, k: u64) -> bool {
        if let Some(h) = self.half_d {
            if let Some(res) = self.within_exact(q, s, k, h) {
                return res;
            }
        }
        (self.value(q, s) - k as f64).abs() <= self.delta
    }

    fn within_exact(&self, q: u64, s: u64, k: u64, h: u32) -> Option<bool> {
        let v = (s as u128).checked_pow(h)?;
        let big_m = (q as u128).checked_pow(2 * h - 1)?;
        let target = (k as u128).checked_mul(big_m)?;
        let diff = v.abs_diff(target);
        let ratio = diff as f64 / big_m as f64;
        if (ratio - self.delta).abs() > 1e-12 {
            return Some(ratio <= self.delta);
        }
        let lhs = diff.checked_mul(1u128.checked_shl(self.shift)?)?;
        let rhs = self.mant.checked_mul(big_m)?;
        Some(lhs <= rhs)
    }
}

fn radial_count_for_q(test: &RadialTest, prefix: &[u64], q: u64) -> u64 {
    let smax = q * q - 1;
    if test.delta >= 0.5 {
        return prefix[smax as usize];
    }
    let qc = q as f64 * test.c;
    let kmax = (qc + test.delta).floor() as u64;
    let q2 = (q * q) as f64;
    let inv = |v: f64| q2 * (v.max(0.0) / qc).powf(2.0 / test.d);
    let mut total = 0u64;
    for k in 0..=kmax {
        let kf = k as f64;
        let lo_f = inv(kf - test.delta).ceil();
        let hi_f = inv(kf + test.delta).floor();
        if lo_f > smax as f64 + 1.0 {
            break;
        }
        let mut lo = (lo_f as u64).min(smax + 1);
        let mut hi = (hi_f.max(0.0) as u64).min(smax);
        while lo > 0 && test.within(q, lo - 1, k) {
            lo -= 1;
        }
        while lo <= smax && lo <= hi && !test.within(q, lo, k) {
            lo += 1;
        }
        while hi < smax && test.within(q, hi + 1, k) {
            hi += 1;
        }
        while hi >= lo && !test.within(q, hi, k) {
            if hi == 0 {
                break;
            }
            hi -= 1;
        }
        if lo <= hi && lo <= smax && test.within(q, lo, k) {
            let below = if lo == 0 { 0 } else { prefix[lo as usize - 1] };
            total += prefix[hi as usize] - below;
        }
    }
    total
}

/// `N_f(δ, Q) = #{(q, a) : Q ≤ q < 2Q, ‖a‖ < q, ‖q f(a/q)‖ ≤ δ}`.
///
/// Radial surfaces are counted by grouping `a` by `‖a‖²`; other surfaces by enumeration.
/// `δ = 0` is accepted only where the test is exact in integers (`‖x‖^d` with even `d`).
pub fn exact_count(surface: &dyn Surface, req: &CountRequest) -> Result<CountResult> {
    req.validate()?;
    let start = Instant::now();
    let radial = surface.radial_coefficient();
    let d = surface.degree();
    if req.delta < 1e-12 {
        let exact = radial == Some(1.0) && d.fract() == 0.0 && (d as u32).is_multiple_of(2);
        if !exact {
            return Err(invalid("delta", "values below 1e-12 need an even integer degree and unit coefficient"));
        }
    }
    let value = match radial {
        Some(c) => radial_exact(surface.dim(), c, d, req)?,
        None => brute_exact(surface, req)?,
    };
    Ok(CountResult::new(surface, req, "sharp", CountValue::Exact(value), start))
}

fn radial_exact(m: usize, c: f64, d: f64, req: &CountRequest) -> Result<u64> {
    let qs = req.q_range();
    if qs.is_empty() {
        return Ok(0);
    }
    let qmax = qs.end - 1;
    let needed: f64 = qs.clone().map(|q| q as f64 * c + 4.0).sum::<f64>() + (qmax * qmax) as f64;
    check_budget(needed, req.budget)?;
    let prefix = square_prefix(m, qmax * qmax);
    let test = RadialTest::new(c, d, req.delta);
    Ok(qs.into_par_iter().map(|q| radial_count_for_q(&test, &prefix, q)).sum())
}

/// Direct enumeration over the integer box; used for non-radial surfaces.
pub fn brute_exact(surface: &dyn Surface, req: &CountRequest) -> Result<u64> {
    req.validate()?;
    let m = surface.dim();
    let qs = req.q_range();
    let needed: f64 = qs.clone().map(|q| (2.0 * q as f64 - 1.0).powi(m as i32)).sum();
    check_budget(needed, req.budget)?;
    let delta = req.delta;
    Ok(qs
        .into_par_iter()
        .map(|q| {
            let mut count = 0u64;
            let qf = q as f64;
            for_each_point(m, q as i64 - 1, |a| {
                let s: i64 = a.iter().map(|v| v * v).sum();
                if s >= (q * q) as i64 {
                    return;
                }
                let x: Vec<f64> = a.iter().map(|&v| v as f64 / qf).collect();
                if nearest_int_dist(qf * surface.value(&x)) <= delta {
                    count += 1;
                }
            });
            count
        })
        .sum())
}

fn for_each_point<F: FnMut(&[i64])>(m: usize, bound: i64, mut f: F) {
    if bound < 0 {
        return;
    }
    let mut a = vec![-bound; m];
    loop {
        f(&a);
        let mut axis = 0;
        while axis < m {
            a[axis] += 1;
            if a[axis] > bound {
                a[axis] = -bound;
                axis += 1;
            } else {
                break;
            }
        }
        if axis == m {
            return;
        }
    }
}

// ---------------------------------------------------------------------------------------------
// Smoothed counts

/// Weights of a smoothed count: `ω` in `q/Q`, `ρ` in `2^{ℓp}a/q` and `b` in `‖q f_p(a/q)‖/δ`.
#[derive(Clone, Copy, Debug)]
pub struct SmoothSpec<'a> {
    pub omega: &'a dyn Profile,
    pub rho: &'a dyn Weight,
    pub b: &'a dyn Profile,
    pub p: f64,
}

fn rho_radii(rho: &dyn Weight) -> (f64, f64) {
    let s = rho.support();
    let c = norm(&s.center);
    ((c - s.radius).max(0.0), c + s.radius)
}

fn q_support(omega: &dyn Profile, q: f64) -> Vec<u64> {
    let (a, b) = omega.support();
    let lo = (a * q).ceil().max(1.0) as u64;
    let hi = (b * q).floor().max(0.0) as u64;
    (lo..=hi).collect()
}

#[allow(clippy::reversed_empty_ranges)]
const NO_LEVELS: std::ops::RangeInclusive<u32> = 1..=0;

/// Levels `ℓ ≥ 0` with `2^{ℓp}‖a‖/q` inside `[r_in, r_out]` and `2^{ℓp} ≤ 2q`.
fn levels(a_norm: f64, q: f64, p: f64, r_in: f64, r_out: f64) -> std::ops::RangeInclusive<u32> {
    let cap = ((2.0 * q).log2() / p).floor().max(0.0) as u32;
    if a_norm == 0.0 {
        return if r_in == 0.0 { 0..=cap } else { NO_LEVELS };
    }
    let lo = if r_in > 0.0 { ((r_in * q / a_norm).log2() / p).ceil().max(0.0) as u32 } else { 0 };
    let hi_f = ((r_out * q / a_norm).log2() / p).floor();
    if hi_f < 0.0 {
        return NO_LEVELS;
    }
    lo..=(hi_f as u32).min(cap)
}

/// `Σ_q ω(q/Q) Σ_a Σ_ℓ ρ(2^{ℓp}a/q) h(q, a)` over one level or all of them.
fn weighted_sum<H>(surface: &dyn Surface, q_scale: f64, spec: &SmoothSpec, ell: Option<u32>, budget: f64, h: H) -> Result<f64>
where
    H: Fn(u64, &[f64]) -> f64 + Sync,
{
    let m = surface.dim();
    let (r_in, r_out) = rho_radii(spec.rho);
    let qs = q_support(spec.omega, q_scale);
    let reach = |q: u64| {
        let scale = ell.map_or(1.0, |l| 2f64.powf(-(l as f64) * spec.p));
        (q as f64 * r_out * scale).floor() as i64
    };
    let needed: f64 = qs.iter().map(|&q| (2.0 * reach(q) as f64 + 1.0).powi(m as i32)).sum();
    check_budget(needed, budget)?;
    let parts: Vec<f64> = qs
        .par_iter()
        .map(|&q| {
            let wq = spec.omega.value(q as f64 / q_scale);
            if wq == 0.0 {
                return 0.0;
            }
            let qf = q as f64;
            let mut acc = 0.0;
            let mut y = vec![0.0; m];
            let mut x = vec![0.0; m];
            for_each_point(m, reach(q), |a| {
                let an = a.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
                let range = match ell {
                    Some(l) => l..=l,
                    None => levels(an, qf, spec.p, r_in, r_out),
                };
                let mut w = 0.0;
                for l in range {
                    let s = 2f64.powf(l as f64 * spec.p) / qf;
                    if an * s > r_out {
                        continue;
                    }
                    for i in 0..m {
                        y[i] = a[i] as f64 * s;
                    }
                    w += spec.rho.eval(&y);
                }
                if w == 0.0 {
                    return;
                }
                for i in 0..m {
                    x[i] = a[i] as f64 / qf;
                }
                acc += w * h(q, &x);
            });
            wq * acc
        })
        .collect();
    Ok(parts.into_iter().sum())
}

fn detector_factor<'a>(surface: &'a dyn Surface, b: &'a dyn Profile, delta: f64) -> impl Fn(u64, &[f64]) -> f64 + Sync + 'a {
    move |q, x| {
        let v = q as f64 * surface.value(x);
        if !v.is_finite() {
            return 0.0;
        }
        b.value(nearest_int_dist(v) / delta)
    }
}

/// `N^{ω,ρ,b}(δ, Q) = Σ_q ω(q/Q) Σ_a Σ_{ℓ ≥ 0} ρ(2^{ℓp}a/q) b(‖q f_p(a/q)‖/δ)`.
///
/// `surface` is `f_p`: the base surface for `p = 1`, its dual for `p = d - 1`.
pub fn smoothed_count(surface: &dyn Surface, req: &CountRequest, spec: &SmoothSpec) -> Result<CountResult> {
    req.validate()?;
    if req.delta <= 0.0 {
        return Err(invalid("delta", "smoothed counts need delta > 0"));
    }
    let start = Instant::now();
    let v = weighted_sum(surface, req.q, spec, req.ell, req.budget, detector_factor(surface, spec.b, req.delta))?;
    let mode = if req.ell.is_some() { "localized" } else { "smooth" };
    Ok(CountResult::new(surface, req, mode, CountValue::Real(v), start))
}

/// The single-level term `𝔑^ρ(δ, Q, ℓ, p)` of [`smoothed_count`].
pub fn localized_count(surface: &dyn Surface, delta: f64, q_scale: f64, ell: u32, spec: &SmoothSpec, budget: f64) -> Result<f64> {
    let req = CountRequest::new(delta, q_scale).at_level(ell).with_p(spec.p).with_budget(budget);
    Ok(smoothed_count(surface, &req, spec)?.value.as_f64())
}

/// The zero mode `δ b̂(0) Σ_q ω(q/Q) Σ_a ρ(2^{ℓp}a/q)` of the Poisson expansion in the detector.
pub fn zero_mode(surface: &dyn Surface, delta: f64, q_scale: f64, ell: u32, spec: &SmoothSpec, budget: f64) -> Result<f64> {
    let b0 = even_profile_fourier(spec.b, 0.0, 256);
    Ok(delta * b0 * weighted_sum(surface, q_scale, spec, Some(ell), budget, |_, _| 1.0)?)
}

/// `Σ_q ω(q/Q) Σ_a ρ(2^{ℓp}a/q) Σ_{j ≠ 0} ω(j/2^r) δ b̂(jδ) e(j q f_p(a/q))`, with `ω` the
/// dyadic cut-off and `b̂` the transform of the even extension of `b`.
pub fn freq_localized_count(
    surface: &dyn Surface,
    delta: f64,
    q_scale: f64,
    ell: u32,
    r: u32,
    spec: &SmoothSpec,
    budget: f64,
) -> Result<Complex64> {
    let wj = dyadic_cutoff();
    let (lo, hi) = wj.support();
    let scale = 2f64.powi(r as i32);
    let js: Vec<(f64, f64)> = ((lo * scale).ceil() as u64..=(hi * scale).floor() as u64)
        .filter(|&j| j >= 1)
        .map(|j| {
            let w = wj.value(j as f64 / scale) * delta * even_profile_fourier(spec.b, delta * j as f64, 256);
            (j as f64, w)
        })
        .filter(|(_, w)| *w != 0.0)
        .collect();
    let needed_per_point = js.len() as f64;
    let v = weighted_sum(surface, q_scale, spec, Some(ell), budget / needed_per_point.max(1.0), |q, x| {
        let phase = q as f64 * surface.value(x);
        // the terms j and -j pair up into a cosine
        js.iter().map(|(j, w)| 2.0 * w * (TAU * j * phase).cos()).sum()
    })?;
    Ok(Complex64::new(v, 0.0))
}

/// `δ b̂(0) + 2δ Σ_{1 ≤ j ≤ Q^ε/δ} b̂(δj) cos(2πjx)`: the Fourier side of `b(‖x‖/δ)` truncated
/// at `J = Q^ε/δ`.
pub fn poisson_side_eval(x: f64, delta: f64, eps: f64, q_scale: f64, b: &dyn Profile) -> f64 {
    poisson_side_truncated(x, delta, (q_scale.powf(eps) / delta).floor() as u64, b)
}

pub fn poisson_side_truncated(x: f64, delta: f64, jmax: u64, b: &dyn Profile) -> f64 {
    let mut v = delta * even_profile_fourier(b, 0.0, 256);
    for j in 1..=jmax {
        v += 2.0 * delta * even_profile_fourier(b, delta * j as f64, 256) * (TAU * j as f64 * x).cos();
    }
    v
}

// ---------------------------------------------------------------------------------------------
// Lattice predictors

/// `#(𝒞 ∩ q⁻¹ℤ^{n-1}) = (2⌊q(δ/Q)^{1/d}⌋ + 1)^{n-1}` for the cube `𝒞 = [-(δ/Q)^{1/d}, (δ/Q)^{1/d}]^{n-1}`.
pub fn knapp_cap_count(q: u64, delta: f64, q_scale: f64, d: f64, n: usize) -> u64 {
    let side = (q as f64 * (delta / q_scale).powf(1.0 / d) + 1e-12).floor() as u64;
    (2 * side + 1).pow(n as u32 - 1)
}

/// `Σ_{Q ≤ q < 2Q} knapp_cap_count(q, δ, Q, d, n)`.
pub fn knapp_predictor(delta: f64, q_scale: f64, d: f64, n: usize) -> u64 {
    CountRequest::new(delta.min(0.5), q_scale).q_range().map(|q| knapp_cap_count(q, delta, q_scale, d, n)).sum()
}

/// Largest `e` with `p^e | x`.
fn valuation(mut x: u64, p: u64) -> u32 {
    let mut e = 0;
    while x.is_multiple_of(p) {
        x /= p;
        e += 1;
    }
    e
}

/// `#{(q, a) : 1 ≤ q ≤ B, ‖a‖ < q, q^{d-1} | ‖a‖^d}` in exact integer arithmetic, for even `d`.
pub fn on_surface_count(n: usize, d: u32, bound: u64) -> Result<u64> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(invalid("d", "must be a positive even integer"));
    }
    if n < 2 || bound < 1 {
        return Err(invalid("n/B", "need n >= 2 and B >= 1"));
    }
    let m = n - 1;
    let h = d / 2;
    let prefix = square_prefix(m, bound * bound);
    let reps = |s: u64| prefix[s as usize] - if s == 0 { 0 } else { prefix[s as usize - 1] };
    let counts: Vec<Result<u64>> = (1..=bound)
        .into_par_iter()
        .map(|q| {
            // ‖a‖^d = s^h is divisible by q^{d-1} iff every p^e ‖ q has p^{⌈e(d-1)/h⌉} | s
            let mut step = 1u64;
            let mut rest = q;
            let mut p = 2u64;
            while rest > 1 {
                if p * p > rest {
                    p = rest;
                }
                if rest % p == 0 {
                    let e = valuation(rest, p);
                    rest /= p.pow(e);
                    let need = (e * (d - 1)).div_ceil(h);
                    step = step.checked_mul(p.checked_pow(need).ok_or(Error::Overflow("divisor step"))?).ok_or(Error::Overflow("divisor step"))?;
                }
                p += 1;
            }
            let modulus = (q as u128).checked_pow(d - 1).ok_or(Error::Overflow("q^(d-1)"))?;
            let mut total = 0u64;
            let mut s = 0u64;
            while s < q * q {
                let power = (s as u128).checked_pow(h).ok_or(Error::Overflow("|a|^d"))?;
                if power % modulus == 0 {
                    total += reps(s);
                }
                s = match s.checked_add(step) {
                    Some(v) => v,
                    None => break,
                };
            }
            Ok(total)
        })
        .collect();
    counts.into_iter().sum()
}
