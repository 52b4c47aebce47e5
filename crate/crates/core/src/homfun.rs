//! Homogeneous functions `f(λx) = λ^d f(x)` with invertible Hessian away from the origin,
//! their localization atlas, and the Legendre dual.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::jet::{sampled_jet, Jet};

/// A smooth function on (a cone in) `R^m`, `m = n - 1`, homogeneous of some degree.
pub trait Surface: Send + Sync + fmt::Debug {
    /// Number of parameters `m = n - 1`.
    fn dim(&self) -> usize;
    fn degree(&self) -> f64;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    /// `Some(c)` when the function is exactly `c·‖x‖^d`.
    fn radial_coefficient(&self) -> Option<f64> {
        None
    }

    /// Taylor jet at `x` (`x ≠ 0`).
    fn taylor(&self, x: &[f64], order: usize) -> Jet {
        match self.radial_coefficient() {
            Some(c) => radial_jet(c, self.degree(), x, order),
            None => {
                let h = 0.02 * norm(x).max(1e-3);
                sampled_jet(|y| self.value(y), x, order, h)
            }
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jet of `c·‖x‖^d` at `x0 ≠ 0`.
pub fn radial_jet(c: f64, d: f64, x0: &[f64], order: usize) -> Jet {
    let m = x0.len();
    let mut s = Jet::zero(m, order);
    for (i, xi) in x0.iter().enumerate() {
        let v = Jet::variable(m, order, i, *xi);
        s = &s + &(&v * &v);
    }
    s.powf(d / 2.0).scale(c)
}

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// User-supplied evaluators. Missing derivatives fall back to Richardson-extrapolated central
/// differences.
#[derive(Clone)]
pub struct CustomFunction {
    pub label: String,
    value: ValueFn,
    gradient: Option<VectorFn>,
    hessian: Option<MatrixFn>,
}

impl CustomFunction {
    pub fn new(label: impl Into<String>, value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CustomFunction { label: label.into(), value: Arc::new(value), gradient: None, hessian: None }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hessian = Some(Arc::new(h));
        self
    }
}

impl fmt::Debug for CustomFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunction")
            .field("label", &self.label)
            .field("gradient", &self.gradient.is_some())
            .field("hessian", &self.hessian.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum SurfaceKind {
    Radial { coef: f64 },
    Custom(CustomFunction),
}

#[derive(Clone, Debug)]
pub struct HomogeneousSurface {
    n: usize,
    d: f64,
    kind: SurfaceKind,
}

impl HomogeneousSurface {
    /// `‖x‖^d` on `R^{n-1}`.
    pub fn radial(n: usize, d: f64) -> Result<Self> {
        Self::radial_scaled(n, d, 1.0)
    }

    pub fn radial_scaled(n: usize, d: f64, coef: f64) -> Result<Self> {
        check_shape(n, d)?;
        if !(coef.is_finite() && coef > 0.0) {
            return Err(invalid("coef", format!("must be positive, got {coef}")));
        }
        Ok(HomogeneousSurface { n, d, kind: SurfaceKind::Radial { coef } })
    }

    pub fn custom(n: usize, d: f64, f: CustomFunction) -> Result<Self> {
        check_shape(n, d)?;
        Ok(HomogeneousSurface { n, d, kind: SurfaceKind::Custom(f) })
    }

    pub fn ambient_dim(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.kind, SurfaceKind::Radial { .. })
    }
}

fn check_shape(n: usize, d: f64) -> Result<()> {
    if n < 2 {
        return Err(invalid("n", format!("ambient dimension must be >= 2, got {n}")));
    }
    if !(d.is_finite() && d > 1.0) {
        return Err(invalid("d", format!("degree must exceed 1, got {d}")));
    }
    Ok(())
}

impl Surface for HomogeneousSurface {
    fn dim(&self) -> usize {
        self.n - 1
    }

    fn degree(&self) -> f64 {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            SurfaceKind::Radial { coef } => coef * norm(x).powf(self.d),
            SurfaceKind::Custom(c) => (c.value)(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            SurfaceKind::Radial { coef } => {
                let r = norm(x);
                if r == 0.0 {
                    return vec![0.0; x.len()];
                }
                let s = coef * self.d * r.powf(self.d - 2.0);
                x.iter().map(|v| s * v).collect()
            }
            SurfaceKind::Custom(c) => match &c.gradient {
                Some(g) => g(x),
                None => fd_gradient(&*c.value, x),
            },
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = x.len();
        match &self.kind {
            SurfaceKind::Radial { coef } => {
                let r = norm(x);
                if r == 0.0 {
                    return if self.d == 2.0 {
                        DMatrix::identity(m, m) * (2.0 * coef)
                    } else if self.d > 2.0 {
                        DMatrix::zeros(m, m)
                    } else {
                        DMatrix::from_element(m, m, f64::INFINITY)
                    };
                }
                let d = self.d;
                let s = coef * d * r.powf(d - 4.0);
                DMatrix::from_fn(m, m, |i, j| {
                    let diag = if i == j { r * r } else { 0.0 };
                    s * ((d - 2.0) * x[i] * x[j] + diag)
                })
            }
            SurfaceKind::Custom(c) => match (&c.hessian, &c.gradient) {
                (Some(h), _) => h(x),
                (None, Some(g)) => fd_jacobian(&**g, x),
                (None, None) => fd_hessian(&*c.value, x),
            },
        }
    }

    fn radial_coefficient(&self) -> Option<f64> {
        match self.kind {
            SurfaceKind::Radial { coef } => Some(coef),
            SurfaceKind::Custom(_) => None,
        }
    }
}

fn fd_step(x: &[f64]) -> f64 {
    1e-3 * norm(x).max(1e-2)
}

fn fd_gradient(f: &(dyn Fn(&[f64]) -> f64 + Send + Sync), x: &[f64]) -> Vec<f64> {
    let h = fd_step(x);
    (0..x.len())
        .map(|i| {
            let central = |h: f64| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            };
            (4.0 * central(h / 2.0) - central(h)) / 3.0
        })
        .collect()
}

fn fd_jacobian(g: &(dyn Fn(&[f64]) -> Vec<f64> + Send + Sync), x: &[f64]) -> DMatrix<f64> {
    let m = x.len();
    let h = fd_step(x);
    let mut out = DMatrix::zeros(m, m);
    for j in 0..m {
        let central = |h: f64| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            let (ga, gb) = (g(&a), g(&b));
            ga.iter().zip(&gb).map(|(u, v)| (u - v) / (2.0 * h)).collect::<Vec<_>>()
        };
        let (c1, c2) = (central(h), central(h / 2.0));
        for i in 0..m {
            out[(i, j)] = (4.0 * c2[i] - c1[i]) / 3.0;
        }
    }
    0.5 * (&out + out.transpose())
}

fn fd_hessian(f: &(dyn Fn(&[f64]) -> f64 + Send + Sync), x: &[f64]) -> DMatrix<f64> {
    let m = x.len();
    let h = 10.0 * fd_step(x);
    let at = |di: usize, si: f64, dj: usize, sj: f64, h: f64| {
        let mut y = x.to_vec();
        y[di] += si * h;
        y[dj] += sj * h;
        f(&y)
    };
    let second = |i: usize, j: usize, h: f64| {
        if i == j {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - 2.0 * f(x) + f(&b)) / (h * h)
        } else {
            (at(i, 1.0, j, 1.0, h) - at(i, 1.0, j, -1.0, h) - at(i, -1.0, j, 1.0, h)
                + at(i, -1.0, j, -1.0, h))
                / (4.0 * h * h)
        }
    };
    DMatrix::from_fn(m, m, |i, j| (4.0 * second(i, j, h / 2.0) - second(i, j, h)) / 3.0)
}

/// `(f(x), ∇f(x), H_f(x))`.
pub fn eval_with_derivatives(surface: &dyn Surface, x: &[f64]) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    if x.len() != surface.dim() {
        return Err(invalid("x", format!("expected {} coordinates, got {}", surface.dim(), x.len())));
    }
    if norm(x) == 0.0 && surface.degree() < 2.0 {
        return Err(Error::SingularPoint { degree: surface.degree() });
    }
    Ok((surface.value(x), surface.gradient(x), surface.hessian(x)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn distance_from_center(&self, x: &[f64]) -> f64 {
        self.center.iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.distance_from_center(x) < self.radius
    }
}

/// Finite cover of the annulus `υ/2 ≤ ‖x‖ ≤ υ` by small balls on which `|det H_f|` is pinched.
#[derive(Clone, Debug)]
pub struct LocalizationAtlas {
    pub upsilon: f64,
    /// Centers `x_i` with radius `ε_{x_i}/8`.
    pub balls: Vec<Ball>,
    /// `(c_f, C_f)`.
    pub hess_bounds: (f64, f64),
}

impl LocalizationAtlas {
    /// `ε_{x_i}`: eight times the ball radius.
    pub fn eps(&self) -> f64 {
        self.balls.first().map_or(0.0, |b| 8.0 * b.radius)
    }

    /// Whether some dyadic dilation `2^{-ℓ}·ball` contains `x` (`0 < ‖x‖ < υ`).
    pub fn covers_dyadically(&self, x: &[f64]) -> bool {
        let r = norm(x);
        if r == 0.0 || r >= self.upsilon {
            return false;
        }
        let mut y = x.to_vec();
        let mut rr = r;
        while rr < self.upsilon / 2.0 {
            y.iter_mut().for_each(|v| *v *= 2.0);
            rr *= 2.0;
        }
        self.balls.iter().any(|b| b.contains(&y))
    }

    /// The ball whose center is closest to `x`.
    pub fn nearest(&self, x: &[f64]) -> &Ball {
        self.balls
            .iter()
            .min_by(|a, b| a.distance_from_center(x).total_cmp(&b.distance_from_center(x)))
            .expect("atlas is nonempty")
    }
}

pub fn build_localization(surface: &dyn Surface, upsilon: f64, det_floor: f64) -> Result<LocalizationAtlas> {
    build_localization_with(surface, upsilon, det_floor, upsilon / 32.0)
}

/// Lattice cover with balls of the given radius; keeps every lattice cell that meets the
/// annulus, so every ball sits within `2·radius` of it.
pub fn build_localization_with(
    surface: &dyn Surface,
    upsilon: f64,
    det_floor: f64,
    radius: f64,
) -> Result<LocalizationAtlas> {
    if !(upsilon > 0.0 && upsilon.is_finite()) {
        return Err(invalid("upsilon", format!("must be positive, got {upsilon}")));
    }
    if !(radius > 0.0 && radius < upsilon / 12.0) {
        return Err(invalid("radius", format!("must lie in (0, υ/12), got {radius}")));
    }
    let m = surface.dim();
    let spacing = 2.0 * radius / (m as f64).sqrt();
    let half_diag = radius;
    let kmax = ((upsilon + half_diag) / spacing).ceil() as i64;
    let (inner, outer) = (upsilon / 2.0, upsilon);

    let mut balls = Vec::new();
    let mut idx = vec![-kmax; m];
    loop {
        let c: Vec<f64> = idx.iter().map(|&k| k as f64 * spacing).collect();
        let r = norm(&c);
        if r + half_diag >= inner && r - half_diag <= outer {
            balls.push(Ball::new(c, radius));
        }
        let mut axis = 0;
        loop {
            if axis == m {
                break;
            }
            idx[axis] += 1;
            if idx[axis] > kmax {
                idx[axis] = -kmax;
                axis += 1;
            } else {
                break;
            }
        }
        if axis == m {
            break;
        }
    }

    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for b in &balls {
        let mut samples = vec![b.center.clone()];
        for i in 0..m {
            for s in [-0.9, 0.9] {
                let mut z = b.center.clone();
                z[i] += s * radius;
                samples.push(z);
            }
        }
        for z in samples {
            let det = surface.hessian(&z).determinant().abs();
            if !(det >= det_floor) {
                return Err(Error::DegenerateHessian { det, floor: det_floor });
            }
            lo = lo.min(det);
            hi = hi.max(det);
        }
    }
    Ok(LocalizationAtlas { upsilon, balls, hess_bounds: (0.99 * lo, 1.01 * hi) })
}

/// Legendre dual `f̃(y) = ⟨y, x⟩ - f(x)` with `x = (∇f)^{-1}(y)`.
#[derive(Clone, Debug)]
pub struct DualSurface {
    base: Arc<dyn Surface>,
    dual_degree: f64,
    base_domain: Option<Ball>,
    enlargement: f64,
    max_iter: usize,
    tol: f64,
}

impl DualSurface {
    pub fn new(base: Arc<dyn Surface>) -> Self {
        let d = base.degree();
        DualSurface { base, dual_degree: d / (d - 1.0), base_domain: None, enlargement: 2.0, max_iter: 60, tol: 1e-12 }
    }

    /// Restrict the dual to `∇f(ball)`, accepting preimages within `enlargement·radius`.
    pub fn with_domain(mut self, ball: Ball, enlargement: f64) -> Self {
        self.base_domain = Some(ball);
        self.enlargement = enlargement;
        self
    }

    pub fn base(&self) -> &Arc<dyn Surface> {
        &self.base
    }

    pub fn dual_degree(&self) -> f64 {
        self.dual_degree
    }

    pub fn base_domain(&self) -> Option<&Ball> {
        self.base_domain.as_ref()
    }

    /// Center of the dual domain, `∇f(x_1)`.
    pub fn domain_center(&self) -> Option<Vec<f64>> {
        self.base_domain.as_ref().map(|b| self.base.gradient(&b.center))
    }

    /// Damped Newton solve of `∇f(x) = y`.
    pub fn invert_gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        let ny = norm(y);
        if ny == 0.0 || !ny.is_finite() || y.len() != self.base.dim() {
            return Err(Error::OutsideDomain);
        }
        let d = self.base.degree();
        let dir: Vec<f64> = y.iter().map(|v| v / ny).collect();
        let g_dir = norm(&self.base.gradient(&dir));
        if !(g_dir > 0.0 && g_dir.is_finite()) {
            return Err(Error::OutsideDomain);
        }
        let t = (ny / g_dir).powf(1.0 / (d - 1.0));
        let mut x: Vec<f64> = dir.iter().map(|v| v * t).collect();
        let scale = ny.max(1.0);
        let residual = |x: &[f64]| -> Vec<f64> {
            self.base.gradient(x).iter().zip(y).map(|(g, yi)| g - yi).collect()
        };
        let mut r = residual(&x);
        let mut rn = norm(&r);
        let mut iters = 0;
        while rn > self.tol * scale && iters < self.max_iter {
            iters += 1;
            let h = self.base.hessian(&x);
            let step = match h.lu().solve(&DVector::from_column_slice(&r)) {
                Some(s) => s,
                None => return Err(Error::NoConvergence { iterations: iters, residual: rn }),
            };
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - alpha * s).collect();
                let rt = residual(&trial);
                let rtn = norm(&rt);
                if rtn < rn || alpha < 1.0 / 1024.0 {
                    if rtn >= rn {
                        // no further progress at working precision
                        iters = self.max_iter;
                    } else {
                        x = trial;
                        r = rt;
                        rn = rtn;
                    }
                    break;
                }
                alpha *= 0.5;
            }
        }
        if !(rn <= 1e-10 * scale) {
            return Err(Error::NoConvergence { iterations: iters, residual: rn });
        }
        if let Some(b) = &self.base_domain {
            if b.distance_from_center(&x) >= self.enlargement * b.radius {
                return Err(Error::OutsideDomain);
            }
        }
        Ok(x)
    }

    pub fn legendre_value(&self, y: &[f64]) -> Result<f64> {
        let x = self.invert_gradient(y)?;
        Ok(dot(y, &x) - self.base.value(&x))
    }

    /// The dual as a radial surface when the base is `c‖x‖^d`.
    pub fn radial_closed_form(&self) -> Option<f64> {
        self.base.radial_coefficient().map(|c| {
            let d = self.base.degree();
            (d - 1.0) / d * (c * d).powf(-1.0 / (d - 1.0))
        })
    }
}

impl Surface for DualSurface {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn degree(&self) -> f64 {
        self.dual_degree
    }

    fn value(&self, y: &[f64]) -> f64 {
        self.legendre_value(y).unwrap_or(f64::NAN)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.invert_gradient(y).unwrap_or_else(|_| vec![f64::NAN; y.len()])
    }

    fn hessian(&self, y: &[f64]) -> DMatrix<f64> {
        let m = y.len();
        self.invert_gradient(y)
            .ok()
            .and_then(|x| self.base.hessian(&x).try_inverse())
            .unwrap_or_else(|| DMatrix::from_element(m, m, f64::NAN))
    }

    fn radial_coefficient(&self) -> Option<f64> {
        self.radial_closed_form()
    }
}

pub fn invert_gradient(dual: &DualSurface, y: &[f64]) -> Result<Vec<f64>> {
    dual.invert_gradient(y)
}

pub fn legendre_dual_eval(dual: &DualSurface, y: &[f64]) -> Result<f64> {
    dual.legendre_value(y)
}

/// `max_ij |H_f̃(∇f(x)) H_f(x) - I|`, with `H_f̃` from central differences of the inverse
/// gradient map.
pub fn dual_hessian_check(dual: &DualSurface, x: &[f64]) -> Result<f64> {
    if norm(x) == 0.0 {
        return Err(Error::SingularPoint { degree: dual.base.degree() });
    }
    let m = x.len();
    let y = dual.base.gradient(x);
    let h = 1e-4 * norm(&y);
    let mut dual_hess = DMatrix::zeros(m, m);
    for j in 0..m {
        let central = |h: f64| -> Result<Vec<f64>> {
            let mut a = y.clone();
            let mut b = y.clone();
            a[j] += h;
            b[j] -= h;
            let (xa, xb) = (dual.invert_gradient(&a)?, dual.invert_gradient(&b)?);
            Ok(xa.iter().zip(&xb).map(|(u, v)| (u - v) / (2.0 * h)).collect())
        };
        let (c1, c2) = (central(h)?, central(h / 2.0)?);
        for i in 0..m {
            dual_hess[(i, j)] = (4.0 * c2[i] - c1[i]) / 3.0;
        }
    }
    let prod = dual_hess * dual.base.hessian(x);
    let eye = DMatrix::<f64>::identity(m, m);
    Ok((prod - eye).iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}
