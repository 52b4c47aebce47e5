//! Dyadic bookkeeping, main-term predictions, the bootstrapping exponent recursions, sweep fits,
//! lower-bound audits and the series classifiers.

use serde::Serialize;

use crate::counting::{ball_lattice_count, exact_count, main_terms, CountRequest, CountResult};
use crate::error::{invalid, Error, Result};
use crate::homfun::Surface;
use crate::oscint::linear_fit;
use crate::weights::sphere_directions;

/// Cut-offs of the dyadic decomposition at `(δ, Q, ℓ, ε)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DyadicLedger {
    pub delta: f64,
    pub q: f64,
    pub eps: f64,
    pub d: f64,
    pub n: usize,
    pub ell: u32,
    /// `log(Q/δ) / (d log 2)`.
    pub l: f64,
    /// `log Q^{1-ε} / log 2` (the `p = 1` value of `L_p`).
    pub l_1: f64,
    /// `log Q^{1-ε} / ((d-1) log 2)`.
    pub l_dual: f64,
    /// `J = Q^ε/δ`.
    pub j: f64,
    /// `log₂ J`.
    pub r: f64,
    /// `log₂(2^{dℓ} Q^{ε-1})`.
    pub r_minus: f64,
    /// `𝒢 = {r ∈ ℤ≥0 : R₋ < r < R}`.
    pub good: Vec<i64>,
    /// `ℬ = {r ∈ ℤ ∩ [0, R] : Q 2^r ≤ 2^{dℓ} Q^ε}`.
    pub bad: Vec<i64>,
    /// `⌊10(n-1)/ε⌋ + 1`.
    pub t: u64,
    /// `⌊log ε⁻¹⌋` for `n ≥ 4`, `⌊ε⁻¹⌋` for `n = 3`.
    pub k: u64,
}

impl DyadicLedger {
    pub fn l_p(&self, p: f64) -> f64 {
        (1.0 - self.eps) * self.q.log2() / p
    }

    /// `𝔏_p = min(L, L_p)`.
    pub fn frak_l(&self, p: f64) -> f64 {
        self.l.min(self.l_p(p))
    }
}

/// Accepted range of `ε`.
pub const EPS_RANGE: (f64, f64) = (0.0, 0.5);

pub fn check_eps(eps: f64) -> Result<()> {
    if eps > EPS_RANGE.0 && eps < EPS_RANGE.1 {
        Ok(())
    } else {
        Err(Error::BadEpsilon(eps))
    }
}

/// `K(ε)`: `⌊ε⁻¹⌋` for `n = 3`, `⌊log ε⁻¹⌋` otherwise.
pub fn k_of_eps(n: usize, eps: f64) -> u64 {
    let inv = 1.0 / eps;
    let v = if n == 3 { inv } else { inv.ln() };
    (v + 1e-9).floor().max(0.0) as u64
}

pub fn t_of_eps(n: usize, eps: f64) -> u64 {
    (10.0 * (n as f64 - 1.0) / eps + 1e-9).floor() as u64 + 1
}

pub fn ledger_build(delta: f64, q: f64, eps: f64, d: f64, n: usize, ell: u32) -> Result<DyadicLedger> {
    check_eps(eps)?;
    if !(delta > 0.0 && delta <= 0.5) {
        return Err(invalid("delta", format!("{delta} is outside (0, 1/2]")));
    }
    if !(q >= 1.0) {
        return Err(invalid("Q", format!("{q} must be at least 1")));
    }
    let l = (q / delta).log2() / d;
    let l_1 = (1.0 - eps) * q.log2();
    let l_dual = l_1 / (d - 1.0);
    let j = q.powf(eps) / delta;
    let r = eps * q.log2() - delta.log2();
    let r_minus = d * ell as f64 + (eps - 1.0) * q.log2();
    let good: Vec<i64> = (0..=r.ceil() as i64).filter(|&x| (x as f64) > r_minus && (x as f64) < r).collect();
    let bad: Vec<i64> = (0..=r.floor() as i64).filter(|&x| (x as f64) <= r_minus).collect();
    Ok(DyadicLedger {
        delta,
        q,
        eps,
        d,
        n,
        ell,
        l,
        l_1,
        l_dual,
        j,
        r,
        r_minus,
        good,
        bad,
        t: t_of_eps(n, eps),
        k: k_of_eps(n, eps),
    })
}

/// `(δQⁿ, (δ/Q)^{(n-1)/d} Qⁿ)`.
pub fn main_term_predict(delta: f64, q: f64, d: f64, n: usize) -> (f64, f64) {
    main_terms(delta, q, d, n)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Probabilistic,
    Geometric,
}

pub fn regime(delta: f64, q: f64, d: f64, n: usize) -> Regime {
    let (a, b) = main_terms(delta, q, d, n);
    if a >= b {
        Regime::Probabilistic
    } else {
        Regime::Geometric
    }
}

/// Exponent `-(n-1-kεd)/(d-(n-1))` of the crossover `δ = Q^{...}`.
pub fn crossover_exponent(n: usize, d: f64, k_eps: f64) -> Result<f64> {
    let m = n as f64 - 1.0;
    if d <= m {
        return Err(Error::NoCrossover { d, m });
    }
    Ok(-(m - k_eps * d) / (d - m))
}

/// The `δ` at which `δQⁿ = (δ/Q)^{(n-1)/d} Q^{n+kε}`.
pub fn crossover_delta(q: f64, n: usize, d: f64, k_eps: f64) -> Result<f64> {
    Ok(q.powf(crossover_exponent(n, d, k_eps)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRegime {
    SmallD,
    LargeD,
}

/// `(κ, β_κ)` from `κ = K` down to `0`, starting at `β_K = n`.
///
/// The small-degree recursion is `β_κ = n - (n-1)/(2β_{κ+1} - n + 1)`. In the large-degree
/// regime only alternate steps improve, and each improvement is capped below by
/// `n - 2(n-1)/d`.
pub fn beta_sequence(n: usize, d: f64, k: u64, regime: BetaRegime) -> Vec<(u64, f64)> {
    let nf = n as f64;
    let step = |b: f64| nf - (nf - 1.0) / (2.0 * b - nf + 1.0);
    let floor = nf - 2.0 * (nf - 1.0) / d;
    let mut out = vec![(k, nf)];
    let mut b = nf;
    for kappa in (0..k).rev() {
        b = match regime {
            BetaRegime::SmallD => step(b),
            BetaRegime::LargeD if (k - kappa) % 2 == 1 => step(b).max(floor),
            BetaRegime::LargeD => b,
        };
        out.push((kappa, b));
    }
    out
}

/// [`beta_sequence`] with `K = K(ε)`, doubled in the large-degree regime to account for the
/// stalled steps.
pub fn beta_recursion(n: usize, d: f64, eps: f64, regime: BetaRegime) -> Result<Vec<(u64, f64)>> {
    if n < 3 {
        return Err(invalid("n", "the recursion needs n >= 3"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::BadEpsilon(eps));
    }
    let k = match regime {
        BetaRegime::SmallD => k_of_eps(n, eps),
        BetaRegime::LargeD => 2 * k_of_eps(n, eps),
    };
    Ok(beta_sequence(n, d, k, regime))
}

// ---------------------------------------------------------------------------------------------
// Sweeps

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaRule {
    Fixed(f64),
    /// `δ = Q^a`.
    Power(f64),
}

impl DeltaRule {
    pub fn at(&self, q: f64) -> f64 {
        match *self {
            DeltaRule::Fixed(v) => v,
            DeltaRule::Power(a) => q.powf(a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridPoint {
    pub delta: f64,
    pub q: f64,
    pub count: u64,
    pub term_prob: f64,
    pub term_geom: f64,
    pub regime: Regime,
    pub result: CountResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub n: usize,
    pub d: f64,
    pub rule: DeltaRule,
    pub grid: Vec<GridPoint>,
    /// `log count` against `log Q`.
    pub fit: Fit,
    /// Slope predicted by the dominant main term, averaged over the grid ends.
    pub predicted_slope: f64,
    /// `clamp(slope - predicted_slope, 0, 1)`.
    pub keff: f64,
    pub crossover: Option<f64>,
}

impl SweepReport {
    /// `slope=...` lines for the documented keys.
    pub fn fit_report(&self) -> String {
        let crossover = self.crossover.map_or("none".to_string(), |c| format!("{c:.9e}"));
        format!(
            "slope={:.9}\nintercept={:.9}\nr2={:.9}\ncrossover={}\nkeff={:.9}\n",
            self.fit.slope, self.fit.intercept, self.fit.r2, crossover, self.keff
        )
    }
}

/// Exact counts along `q_grid` with `δ = rule(Q)`, fitted in `log Q`.
pub fn sweep_and_fit(surface: &dyn Surface, rule: DeltaRule, q_grid: &[f64], budget: f64) -> Result<SweepReport> {
    if q_grid.len() < 2 {
        return Err(Error::Empty("sweep grid needs at least two Q values"));
    }
    let n = surface.dim() + 1;
    let d = surface.degree();
    let mut grid = Vec::with_capacity(q_grid.len());
    for &q in q_grid {
        let delta = rule.at(q);
        let res = exact_count(surface, &CountRequest::new(delta, q).with_budget(budget))?;
        grid.push(GridPoint {
            delta,
            q,
            count: res.exact().unwrap_or(0),
            term_prob: res.term_prob,
            term_geom: res.term_geom,
            regime: regime(delta, q, d, n),
            result: res,
        });
    }
    let xs: Vec<f64> = grid.iter().map(|g| g.q.ln()).collect();
    let ys: Vec<f64> = grid.iter().map(|g| (g.count.max(1) as f64).ln()).collect();
    let (slope, intercept, r2) = linear_fit(&xs, &ys);
    let dom: Vec<f64> = grid.iter().map(|g| g.term_prob.max(g.term_geom).ln()).collect();
    let predicted_slope = linear_fit(&xs, &dom).0;
    Ok(SweepReport {
        n,
        d,
        rule,
        grid,
        fit: Fit { slope, intercept, r2 },
        predicted_slope,
        keff: (slope - predicted_slope).clamp(0.0, 1.0),
        crossover: None,
    })
}

/// Two-segment continuous least squares in `(x, y)`; the knot is searched over a fine grid
/// between the second and second-to-last abscissae. Returns `(knot, left slope, right slope)`.
pub fn breakpoint_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() < 4 {
        return Err(Error::Empty("breakpoint fit needs at least four points"));
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best = (f64::INFINITY, lo, 0.0, 0.0);
    for i in 1..400 {
        let knot = lo + (hi - lo) * i as f64 / 400.0;
        // basis: 1, x, (x - knot)_+
        let rows: Vec<[f64; 3]> = xs.iter().map(|&x| [1.0, x, (x - knot).max(0.0)]).collect();
        let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |r, c| rows[r][c]);
        let b = nalgebra::DVector::from_column_slice(ys);
        let Ok(sol) = a.clone().svd(true, true).solve(&b, 1e-12) else { continue };
        let res = (&a * &sol - &b).norm_squared();
        if res < best.0 {
            best = (res, knot, sol[1], sol[1] + sol[2]);
        }
    }
    Ok((best.1, best.2, best.3))
}

/// Crossover estimate from counts at fixed `Q` along increasing `δ`: the knot of a two-segment
/// fit of `log count` against `log δ`.
pub fn estimate_crossover(deltas: &[f64], counts: &[u64]) -> Result<f64> {
    let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c.max(1) as f64).ln()).collect();
    Ok(breakpoint_fit(&xs, &ys)?.0.exp())
}

// ---------------------------------------------------------------------------------------------
// Lower bounds

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LowerBoundAudit {
    /// `Σ_q #(q S ∩ ℤ^m)` with `S = (δ/(ZQ))^{1/d} 𝒰_m`.
    pub count_lb: u64,
    /// Exact count for a single surface; `None` for several.
    pub exact: Option<u64>,
    pub holds: Option<bool>,
    /// `count_lb / ((δ/Q)^{m/d} Q^{m+1})`.
    pub ratio: f64,
}

/// `Z = max_{𝒰} |f_i|` over the unit sphere (homogeneity puts the maximum there).
pub fn sup_on_unit_ball(surfaces: &[&dyn Surface]) -> f64 {
    surfaces
        .iter()
        .map(|f| match f.radial_coefficient() {
            Some(c) => c.abs(),
            None => sphere_directions(f.dim(), 4096).iter().map(|u| f.value(u).abs()).fold(0.0, f64::max),
        })
        .fold(0.0, f64::max)
}

pub fn lower_bound_audit(surfaces: &[&dyn Surface], delta: f64, q: f64, budget: f64) -> Result<LowerBoundAudit> {
    let first = surfaces.first().ok_or(Error::Empty("surface list"))?;
    let m = first.dim();
    let d = first.degree();
    let z = sup_on_unit_ball(surfaces);
    let req = CountRequest::new(delta, q).with_budget(budget);
    let radius = (delta / (z * q)).powf(1.0 / d);
    let count_lb: u64 = req.q_range().map(|qi| ball_lattice_count(m, qi as f64 * radius)).sum();
    let (exact, holds) = if surfaces.len() == 1 {
        let e = exact_count(*first, &req)?.exact().unwrap_or(0);
        (Some(e), Some(e >= count_lb))
    } else {
        (None, None)
    };
    let norm_term = (delta / q).powf(m as f64 / d) * q.powf(m as f64 + 1.0);
    Ok(LowerBoundAudit { count_lb, exact, holds, ratio: count_lb as f64 / norm_term })
}

// ---------------------------------------------------------------------------------------------
// Series

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// `ψ(q) = q^{-z}`.
    PowerLaw(f64),
    /// `ψ(1), ψ(2), ...`.
    Table(Vec<f64>),
}

impl Approximation {
    fn at(&self, q: u64) -> f64 {
        match self {
            Approximation::PowerLaw(z) => (q as f64).powf(-z),
            Approximation::Table(t) => t[(q - 1) as usize],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    /// `Σ (ψ(q)/q)^{s+1} qⁿ`.
    First,
    /// `Σ (ψ(q)/q)^{s+(n-1)/d+ε} q^{n-1}`.
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Converges,
    Diverges,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesOutcome {
    pub verdict: Verdict,
    pub partial_sum: f64,
    /// Local decay exponent of the terms near `q_max`.
    pub tail_exponent: f64,
    /// Integral-test bracket `[lower, upper]` on the tail beyond `q_max`.
    pub tail_bracket: (f64, f64),
}

#[allow(clippy::too_many_arguments)]
pub fn khintchine_series_test(
    psi: &Approximation,
    series: Series,
    n: usize,
    d: f64,
    s: f64,
    eps: f64,
    q_max: u64,
) -> Result<SeriesOutcome> {
    let nf = n as f64;
    if s <= (nf - 1.0) / 2.0 {
        return Err(Error::BadHypothesis { s });
    }
    let q_max = match psi {
        Approximation::Table(t) => q_max.min(t.len() as u64),
        Approximation::PowerLaw(_) => q_max,
    };
    if q_max < 4 {
        return Err(invalid("q_max", "need at least four terms"));
    }
    let (power, weight) = match series {
        Series::First => (s + 1.0, nf),
        Series::Second => (s + (nf - 1.0) / d + eps, nf - 1.0),
    };
    let term = |q: u64| (psi.at(q) / q as f64).powf(power) * (q as f64).powf(weight);
    let partial_sum: f64 = (1..=q_max).map(term).sum();
    let half = q_max / 2;
    let (a, b) = (term(half), term(q_max));
    let tail_exponent = if a > 0.0 && b > 0.0 { (b / a).ln() / (q_max as f64 / half as f64).ln() } else { f64::NEG_INFINITY };
    let tol = 1e-6;
    let (verdict, tail_bracket) = if b == 0.0 {
        (Verdict::Converges, (0.0, 0.0))
    } else if tail_exponent < -1.0 - tol {
        let e = -tail_exponent - 1.0;
        let upper = b * q_max as f64 / e + b;
        (Verdict::Converges, (b * q_max as f64 / e - b, upper))
    } else if tail_exponent > -1.0 + tol {
        (Verdict::Diverges, (f64::INFINITY, f64::INFINITY))
    } else {
        (Verdict::Undecided, (0.0, f64::INFINITY))
    };
    Ok(SeriesOutcome { verdict, partial_sum, tail_exponent, tail_bracket })
}

/// Analytic threshold `z*` above which the power-law series converge.
pub fn series_threshold(series: Series, n: usize, d: f64, s: f64, eps: f64) -> f64 {
    let nf = n as f64;
    match series {
        // n - (z+1)(s+1) < -1
        Series::First => (nf + 1.0) / (s + 1.0) - 1.0,
        // (n-1) - (z+1)(s+(n-1)/d+ε) < -1
        Series::Second => nf / (s + (nf - 1.0) / d + eps) - 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homfun::HomogeneousSurface;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ledger_examples() {
        let l = ledger_build(2f64.powi(-6), 1024.0, 0.1, 2.0, 3, 0).unwrap();
        assert_relative_eq!(l.l, 8.0, epsilon = 1e-12);
        assert_relative_eq!(l.j, 128.0, epsilon = 1e-9);
        let l = ledger_build(2f64.powi(-6), 1024.0, 0.1, 2.0, 3, 3).unwrap();
        assert_relative_eq!(l.r_minus, -3.0, epsilon = 1e-12);
        assert_relative_eq!(l.r, 7.0, epsilon = 1e-12);
        assert_eq!(l.good, (0..=6).collect::<Vec<_>>());
        assert!(l.bad.is_empty());
        assert_eq!(l.t, 201);
        assert_eq!(l.k, 10);
        assert!(matches!(ledger_build(0.1, 100.0, 0.0, 2.0, 3, 0), Err(Error::BadEpsilon(_))));
        assert!(matches!(ledger_build(0.1, 100.0, 0.6, 2.0, 3, 0), Err(Error::BadEpsilon(_))));
    }

    #[test]
    fn main_term_examples() {
        assert_eq!(main_term_predict(1.0, 1.0, 2.0, 3), (1.0, 1.0));
        let q: f64 = 2f64.powi(20);
        let (a, b) = main_term_predict(q.powf(-0.9), q, 8.0, 3);
        assert_relative_eq!(a.log(q), 2.1, epsilon = 1e-12);
        assert_relative_eq!(b.log(q), 2.525, epsilon = 1e-12);
        let (a, b) = main_term_predict(q.powf(-0.5), q, 2.0, 3);
        assert_relative_eq!(a.log(q), 2.5, epsilon = 1e-12);
        assert_relative_eq!(b.log(q), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn crossover_examples() {
        assert_relative_eq!(crossover_delta(1e6, 3, 8.0, 0.0).unwrap(), 1e-2, max_relative = 1e-12);
        assert_relative_eq!(crossover_exponent(3, 4.0, 0.0).unwrap(), -1.0);
        assert!(matches!(crossover_delta(100.0, 3, 2.0, 0.0), Err(Error::NoCrossover { .. })));
    }

    #[test]
    fn beta_examples() {
        let seq = beta_sequence(3, 2.0, 5, BetaRegime::SmallD);
        let b3 = seq.iter().find(|(k, _)| *k == 3).unwrap().1;
        assert_relative_eq!(b3, 7.0 / 3.0, epsilon = 1e-12);
        for (k, b) in &seq {
            assert_relative_eq!(*b, 2.0 + 1.0 / (5.0 - *k as f64 + 1.0), epsilon = 1e-12);
        }
        let seq4 = beta_sequence(4, 2.0, 1, BetaRegime::SmallD);
        assert_relative_eq!(seq4[1].1, 3.4, epsilon = 1e-12);
        let large = beta_sequence(3, 8.0, 6, BetaRegime::LargeD);
        assert!(large.iter().all(|(_, b)| *b >= 2.5));
        assert_eq!(large.last().unwrap().1, 2.5);
        assert_eq!(beta_recursion(3, 2.0, 0.2, BetaRegime::SmallD).unwrap()[0].0, 5);
    }

    #[test]
    fn beta_contraction_for_n4() {
        let seq = beta_sequence(4, 3.0, 8, BetaRegime::SmallD);
        for w in seq.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
        for (k, b) in &seq {
            assert!(b - 3.0 <= (2f64 / 3.0).powi((8 - k) as i32) + 1e-15);
        }
    }

    #[test]
    fn large_d_stalls_on_alternate_steps() {
        let seq = beta_sequence(5, 5.0, 6, BetaRegime::LargeD);
        for (i, w) in seq.windows(2).enumerate() {
            if i % 2 == 1 {
                assert_eq!(w[1].1, w[0].1);
            } else {
                assert!(w[1].1 <= w[0].1);
            }
        }
    }

    #[test]
    fn sweep_small_probabilistic() {
        let f = HomogeneousSurface::radial(3, 2.0).unwrap();
        let rep = sweep_and_fit(&f, DeltaRule::Fixed(0.2), &[64.0, 128.0, 256.0, 512.0], 2e10).unwrap();
        assert!((rep.fit.slope - 3.0).abs() <= 0.25, "slope {}", rep.fit.slope);
        assert!(rep.grid.iter().all(|g| g.regime == Regime::Probabilistic));
        assert!(sweep_and_fit(&f, DeltaRule::Fixed(0.2), &[], 1e9).is_err());
        assert!(rep.fit_report().contains("slope="));
    }

    #[test]
    fn breakpoint_recovers_knot() {
        let xs: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x < 1.7 { 0.5 * x } else { 0.85 + 2.0 * (x - 1.7) }).collect();
        let (k, s1, s2) = breakpoint_fit(&xs, &ys).unwrap();
        assert!((k - 1.7).abs() < 0.02);
        assert!((s1 - 0.5).abs() < 1e-6 || (k - 1.7).abs() > 1e-9);
        assert!(s2 > 1.9);
    }

    #[test]
    fn lower_bound_examples() {
        let f = HomogeneousSurface::radial(3, 2.0).unwrap();
        let a = lower_bound_audit(&[&f], 0.25, 2.0, 1e9).unwrap();
        assert!(a.count_lb <= 6);
        assert_eq!(a.holds, Some(true));
        let tiny = lower_bound_audit(&[&f], 1e-9, 10.0, 1e9).unwrap();
        assert_eq!(tiny.count_lb, 10);
    }

    #[test]
    fn series_examples() {
        let t1 = series_threshold(Series::First, 3, 8.0, 1.5, 0.0);
        assert_relative_eq!(t1, 0.6, epsilon = 1e-12);
        let t2 = series_threshold(Series::Second, 3, 8.0, 1.5, 0.0);
        assert_relative_eq!(t2, 5.0 / 7.0, epsilon = 1e-12);
        let c = khintchine_series_test(&Approximation::PowerLaw(0.7), Series::First, 3, 8.0, 1.5, 0.0, 1 << 16).unwrap();
        assert_eq!(c.verdict, Verdict::Converges);
        let dv = khintchine_series_test(&Approximation::PowerLaw(0.5), Series::First, 3, 8.0, 1.5, 0.0, 1 << 16).unwrap();
        assert_eq!(dv.verdict, Verdict::Diverges);
        let half = Approximation::Table(vec![0.5; 1 << 12]);
        let h = khintchine_series_test(&half, Series::First, 3, 8.0, 1.5, 0.0, 1 << 12).unwrap();
        assert_eq!(h.verdict, Verdict::Diverges);
        assert!(matches!(
            khintchine_series_test(&half, Series::First, 3, 8.0, 1.0, 0.0, 100),
            Err(Error::BadHypothesis { .. })
        ));
    }

    proptest! {
        #[test]
        fn ledger_identities(
            logq in 0.0f64..20.0,
            logd in 1.0f64..12.0,
            eps in 0.001f64..0.49,
            d in 2.0f64..10.0,
            ell in 0u32..12,
        ) {
            let q = 2f64.powf(logq);
            let delta = 2f64.powf(-logd);
            let l = ledger_build(delta, q, eps, d, 3, ell).unwrap();
            prop_assert!((2f64.powf(l.l) / (q / delta).powf(1.0 / d) - 1.0).abs() < 1e-9);
            prop_assert!((2f64.powf(l.l_1) / q.powf(1.0 - eps) - 1.0).abs() < 1e-9);
            prop_assert!((2f64.powf((d - 1.0) * l.l_dual) / q.powf(1.0 - eps) - 1.0).abs() < 1e-9);
            prop_assert!(l.frak_l(d - 1.0) <= l.frak_l(1.0) + 1e-12);
            prop_assert!(l.good.iter().all(|r| !l.bad.contains(r)));
            for &r in &l.bad {
                prop_assert!(q * 2f64.powi(r as i32) <= 2f64.powf(d * ell as f64) * q.powf(eps) * (1.0 + 1e-12));
            }
            if 2f64.powf(d * ell as f64) < q.powf(1.0 - eps) {
                prop_assert!(l.bad.is_empty());
            }
        }

        #[test]
        fn main_terms_homogeneity(delta in 0.001f64..0.5, q in 1.0f64..1e4, d in 1.5f64..10.0) {
            let (a, b) = main_term_predict(delta, q, d, 3);
            let (a2, b2) = main_term_predict(delta, 2.0 * q, d, 3);
            prop_assert!((a2 / a / 8.0 - 1.0).abs() < 1e-12);
            prop_assert!((b2 / b / 2f64.powf(3.0 - 2.0 / d) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn regime_label_flips_once(logq in 5.0f64..30.0, d in 4.5f64..12.0) {
            let q = 2f64.powf(logq);
            let labels: Vec<Regime> = (1..200).map(|i| regime(0.5 * 2f64.powf(-(i as f64) * logq / 100.0), q, d, 3)).collect();
            let flips = labels.windows(2).filter(|w| w[0] != w[1]).count();
            prop_assert!(flips <= 1);
        }
    }
}
