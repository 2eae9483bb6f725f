//! Fixed-step integration, quadrature and finite-difference utilities.
//!
//! Everything here is a pure function of its arguments.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::connection::{Form1, Form2};
use crate::error::{Error, Result};

/// Square complex matrix; real groups use zero imaginary parts.
pub type Mat = DMatrix<Complex64>;

#[inline]
pub fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn zeros(n: usize) -> Mat {
    Mat::zeros(n, n)
}

/// Builds a real matrix from rows.
pub fn real(rows: &[&[f64]]) -> Mat {
    let n = rows.len();
    Mat::from_fn(n, rows[0].len(), |i, j| c(rows[i][j]))
}

pub fn scalar(z: Complex64) -> Mat {
    Mat::from_element(1, 1, z)
}

/// Frobenius norm.
pub fn norm(m: &Mat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn distance(a: &Mat, b: &Mat) -> f64 {
    norm(&(a - b))
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

pub fn bracket(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone().try_inverse().ok_or_else(|| Error::Precondition("singular matrix".into()))
}

pub fn expm(m: &Mat) -> Mat {
    m.exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rk4,
    Midpoint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub steps_per_unit: usize,
    pub method: Method,
}

impl StepSpec {
    pub fn new(steps_per_unit: usize, method: Method) -> Result<Self> {
        if steps_per_unit == 0 {
            return Err(Error::Precondition("steps_per_unit must be at least 1".into()));
        }
        Ok(StepSpec { steps_per_unit, method })
    }

    pub fn rk4(steps_per_unit: usize) -> Self {
        StepSpec { steps_per_unit: steps_per_unit.max(1), method: Method::Rk4 }
    }

    pub fn midpoint(steps_per_unit: usize) -> Self {
        StepSpec { steps_per_unit: steps_per_unit.max(1), method: Method::Midpoint }
    }

    /// Number of steps used on an interval of the given length (at least one).
    pub fn steps_for(&self, length: f64) -> usize {
        let n = (self.steps_per_unit as f64 * length.abs() - 1e-9).ceil();
        n.max(1.0) as usize
    }

    pub fn doubled(&self) -> Self {
        StepSpec { steps_per_unit: self.steps_per_unit * 2, method: self.method }
    }
}

impl Default for StepSpec {
    fn default() -> Self {
        StepSpec::rk4(64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// F' = F·M(t)
    Right,
    /// F' = M(t)·F
    Left,
}

/// Optional projection applied after every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Retraction {
    #[default]
    None,
    /// Gram–Schmidt on the columns; for orthogonal or unitary groups.
    Orthonormalize,
}

/// Solves the linear matrix ODE on `[a, b]` and returns the solution on the step grid.
pub fn integrate_linear_matrix_ode(
    rhs: impl Fn(f64) -> Mat,
    side: Side,
    initial: &Mat,
    interval: (f64, f64),
    spec: StepSpec,
) -> Result<Vec<(f64, Mat)>> {
    integrate_with_retraction(rhs, side, initial, interval, spec, Retraction::None)
}

pub fn integrate_with_retraction(
    rhs: impl Fn(f64) -> Mat,
    side: Side,
    initial: &Mat,
    interval: (f64, f64),
    spec: StepSpec,
    retraction: Retraction,
) -> Result<Vec<(f64, Mat)>> {
    let (a, b) = interval;
    if a == b {
        return Ok(vec![(a, initial.clone())]);
    }
    let n = spec.steps_for(b - a);
    let h = (b - a) / n as f64;
    let half: Vec<Mat> = (0..=2 * n).map(|k| rhs(a + k as f64 * 0.5 * h)).collect();
    integrate_sampled(&half, a, h, side, initial, spec.method, retraction)
}

/// Integrates with the generator given on the half-step grid `a + k·h/2`, `k = 0..=2n`.
///
/// Both methods only ever need the generator at step ends and midpoints, so callers
/// that already hold those samples (cached row transports) can skip re-evaluation.
pub fn integrate_sampled(
    half: &[Mat],
    a: f64,
    h: f64,
    side: Side,
    initial: &Mat,
    method: Method,
    retraction: Retraction,
) -> Result<Vec<(f64, Mat)>> {
    if half.len().is_multiple_of(2) {
        return Err(Error::Precondition("half-step samples must have odd length".into()));
    }
    let n = (half.len() - 1) / 2;
    let mul = |f: &Mat, m: &Mat| match side {
        Side::Right => f * m,
        Side::Left => m * f,
    };
    let mut f = initial.clone();
    let mut out = Vec::with_capacity(n + 1);
    out.push((a, f.clone()));
    for k in 0..n {
        let (m0, mh, m1) = (&half[2 * k], &half[2 * k + 1], &half[2 * k + 2]);
        let next = match method {
            Method::Rk4 => {
                let k1 = mul(&f, m0);
                let k2 = mul(&(&f + &k1 * c(0.5 * h)), mh);
                let k3 = mul(&(&f + &k2 * c(0.5 * h)), mh);
                let k4 = mul(&(&f + &k3 * c(h)), m1);
                &f + (k1 + (k2 + k3) * c(2.0) + k4) * c(h / 6.0)
            }
            Method::Midpoint => {
                let k1 = mul(&f, m0);
                let mid = &f + k1 * c(0.5 * h);
                &f + mul(&mid, mh) * c(h)
            }
        };
        let time = a + (k + 1) as f64 * h;
        if !is_finite(&next) {
            return Err(Error::NonFinite { time });
        }
        f = match retraction {
            Retraction::None => next,
            Retraction::Orthonormalize => orthonormalize(next),
        };
        out.push((time, f.clone()));
    }
    Ok(out)
}

fn orthonormalize(m: Mat) -> Mat {
    let qr = m.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..q.ncols() {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let phase = d / d.norm();
            for i in 0..q.nrows() {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// Composite Simpson (odd node count) or trapezoid (even) rule for `∫₀ᵗ values`.
pub fn composite_line_integral(values: impl Fn(f64) -> Mat, t: f64, nodes: usize) -> Result<Mat> {
    if nodes < 2 {
        return Err(Error::Precondition("at least two quadrature nodes are required".into()));
    }
    let h = t / (nodes - 1) as f64;
    let samples: Vec<Mat> = (0..nodes).map(|k| values(k as f64 * h)).collect();
    Ok(composite_rule(&samples, t))
}

/// Same rule applied to samples already taken on a uniform grid over an interval of length `t`.
pub fn composite_rule(samples: &[Mat], t: f64) -> Mat {
    let n = samples.len();
    assert!(n >= 2, "composite rule needs two samples");
    let h = t / (n - 1) as f64;
    let mut acc = Mat::zeros(samples[0].nrows(), samples[0].ncols());
    if n % 2 == 1 {
        for (k, m) in samples.iter().enumerate() {
            let w = if k == 0 || k == n - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += m * c(w);
        }
        acc * c(h / 3.0)
    } else {
        for (k, m) in samples.iter().enumerate() {
            let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
            acc += m * c(w);
        }
        acc * c(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub t0: f64,
    pub t1: f64,
    pub s0: f64,
    pub s1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect { t0: 0.0, t1: 1.0, s0: 0.0, s1: 1.0 };

    pub fn new(t0: f64, t1: f64, s0: f64, s1: f64) -> Self {
        Rect { t0, t1, s0, s1 }
    }

    pub fn width(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn height(&self) -> f64 {
        self.s1 - self.s0
    }

    pub fn contains(&self, t: f64, s: f64) -> bool {
        let eps = 1e-12;
        t >= self.t0 - eps && t <= self.t1 + eps && s >= self.s0 - eps && s <= self.s1 + eps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Dt,
    Ds,
    DtDs,
}

/// A form field handed to [`finite_difference_pullback`].
#[derive(Clone, Copy)]
pub enum FieldRef<'a> {
    One(&'a Form1),
    Two(&'a Form2),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pullback {
    pub value: Mat,
    /// True when the stencil had to be made one-sided at the domain edge.
    pub clamped: bool,
}

/// Tangent of `map` in the t (or s) direction by central differences, one-sided at the edges.
pub fn fd_tangent(map: &dyn Fn(f64, f64) -> Vec<f64>, at: (f64, f64), along_t: bool, h: f64, domain: Rect) -> (Vec<f64>, bool) {
    let (lo, hi, x) = if along_t { (domain.t0, domain.t1, at.0) } else { (domain.s0, domain.s1, at.1) };
    let eval = |x: f64| if along_t { map(x, at.1) } else { map(at.0, x) };
    let combine = |pts: &[(f64, Vec<f64>)], scale: f64| {
        let d = pts[0].1.len();
        (0..d).map(|i| pts.iter().map(|(w, p)| w * p[i]).sum::<f64>() / scale).collect::<Vec<f64>>()
    };
    let slack = 1e-12;
    let h = h.min((hi - lo).abs() / 4.0).max(f64::MIN_POSITIVE);
    if x - h >= lo - slack && x + h <= hi + slack {
        let v = combine(&[(1.0, eval(x + h)), (-1.0, eval(x - h))], 2.0 * h);
        (v, false)
    } else if x + 2.0 * h <= hi + slack {
        let v = combine(&[(-3.0, eval(x)), (4.0, eval(x + h)), (-1.0, eval(x + 2.0 * h))], 2.0 * h);
        (v, true)
    } else {
        let v = combine(&[(3.0, eval(x)), (-4.0, eval(x - h)), (1.0, eval(x - 2.0 * h))], 2.0 * h);
        (v, true)
    }
}

/// Pullback of a form along a surface whose Jacobian is only available through differences.
pub fn finite_difference_pullback(
    surface: &dyn Fn(f64, f64) -> Vec<f64>,
    field: FieldRef<'_>,
    at: (f64, f64),
    direction: Direction,
    h: f64,
    domain: Rect,
) -> Result<Pullback> {
    if h <= 0.0 {
        return Err(Error::Precondition("finite-difference step must be positive".into()));
    }
    let p = surface(at.0, at.1);
    match (field, direction) {
        (FieldRef::One(form), Direction::Dt) | (FieldRef::One(form), Direction::Ds) => {
            let (v, clamped) = fd_tangent(surface, at, direction == Direction::Dt, h, domain);
            Ok(Pullback { value: form.eval(&p, &v), clamped })
        }
        (FieldRef::Two(form), Direction::DtDs) => {
            let (u, c1) = fd_tangent(surface, at, true, h, domain);
            let (v, c2) = fd_tangent(surface, at, false, h, domain);
            Ok(Pullback { value: form.eval(&p, &u, &v), clamped: c1 || c2 })
        }
        _ => Err(Error::Precondition("form degree does not match the pullback direction".into())),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Convergence {
    Order(f64),
    /// Some residual is exactly zero, so no slope can be measured.
    BelowFloor,
}

impl Convergence {
    /// The measured order, treating a zero residual as arbitrarily high order.
    pub fn value(&self) -> f64 {
        match self {
            Convergence::Order(p) => *p,
            Convergence::BelowFloor => f64::INFINITY,
        }
    }
}

/// Least-squares slope of `log residual` against `log step` for samples `(step, residual)`.
pub fn convergence_order(samples: &[(f64, f64)]) -> Result<Convergence> {
    if samples.len() < 3 {
        return Err(Error::Precondition("need at least three samples".into()));
    }
    if samples.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::Precondition("steps must be strictly decreasing".into()));
    }
    if samples.iter().any(|&(_, r)| r <= 0.0) {
        return Ok(Convergence::BelowFloor);
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|&(h, _)| h.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, r)| r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(Convergence::Order(sxy / sxx))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Tensor Gauss–Legendre rule over a rectangle, `n` nodes per direction per panel.
pub fn gauss_legendre_rect(f: impl Fn(f64, f64) -> Mat, rect: Rect, n: usize, panels: usize) -> Mat {
    let rule = gauss_legendre(n);
    let (wt, ws) = (rect.width() / panels as f64, rect.height() / panels as f64);
    let mut acc: Option<Mat> = None;
    for pi in 0..panels {
        for pj in 0..panels {
            let (t0, s0) = (rect.t0 + pi as f64 * wt, rect.s0 + pj as f64 * ws);
            for &(xt, at) in &rule {
                for &(xs, as_) in &rule {
                    let t = t0 + 0.5 * wt * (xt + 1.0);
                    let s = s0 + 0.5 * ws * (xs + 1.0);
                    let term = f(t, s) * c(0.25 * wt * ws * at * as_);
                    acc = Some(match acc {
                        Some(a) => a + term,
                        None => term,
                    });
                }
            }
        }
    }
    acc.expect("empty quadrature")
}

/// Gauss–Legendre rule over an interval, split into equal panels.
pub fn gauss_legendre_interval(f: impl Fn(f64) -> Mat, a: f64, b: f64, n: usize, panels: usize) -> Mat {
    let rule = gauss_legendre(n);
    let w = (b - a) / panels as f64;
    let mut acc: Option<Mat> = None;
    for p in 0..panels {
        let lo = a + p as f64 * w;
        for &(x, wx) in &rule {
            let term = f(lo + 0.5 * w * (x + 1.0)) * c(0.5 * w * wx);
            acc = Some(match acc {
                Some(s) => s + term,
                None => term,
            });
        }
    }
    acc.expect("empty quadrature")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nilpotent() -> Mat {
        real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }

    #[test]
    fn zero_generator_keeps_identity() {
        let out = integrate_linear_matrix_ode(|_| zeros(2), Side::Right, &identity(2), (0.0, 1.0), StepSpec::rk4(8)).unwrap();
        assert_eq!(out.len(), 9);
        assert!(out.iter().all(|(_, m)| *m == identity(2)));
    }

    #[test]
    fn nilpotent_generator_gives_unipotent() {
        let out = integrate_linear_matrix_ode(|_| nilpotent(), Side::Right, &identity(2), (0.0, 1.0), StepSpec::rk4(8)).unwrap();
        let end = &out.last().unwrap().1;
        assert!(distance(end, &real(&[&[1.0, 1.0], &[0.0, 1.0]])) < 1e-14);
    }

    #[test]
    fn scalar_exponential() {
        let out = integrate_linear_matrix_ode(|_| scalar(c(0.3)), Side::Right, &identity(1), (0.0, 1.0), StepSpec::rk4(64)).unwrap();
        assert!((out.last().unwrap().1[(0, 0)].re - 0.3f64.exp()).abs() < 1e-10);
    }

    fn time_dependent(t: f64) -> Mat {
        real(&[&[0.3 * t.sin(), 1.0 + t], &[-0.5 * t * t, 0.2 - t.cos()]])
    }

    #[test]
    fn right_and_reversed_left_are_inverse() {
        let spec = StepSpec::rk4(64);
        let fwd = integrate_linear_matrix_ode(time_dependent, Side::Right, &identity(2), (0.0, 1.0), spec).unwrap();
        let back = integrate_linear_matrix_ode(|t| -time_dependent(1.0 - t), Side::Right, &identity(2), (0.0, 1.0), spec).unwrap();
        let prod = &fwd.last().unwrap().1 * &back.last().unwrap().1;
        assert!(distance(&prod, &identity(2)) < 1e-9);
        let inv = integrate_linear_matrix_ode(|t| -time_dependent(t), Side::Left, &identity(2), (0.0, 1.0), spec).unwrap();
        let prod = &fwd.last().unwrap().1 * &inv.last().unwrap().1;
        assert!(distance(&prod, &identity(2)) < 1e-9);
    }

    fn endpoint_error(spec: StepSpec) -> f64 {
        let out = integrate_linear_matrix_ode(|t| scalar(c(1.0 + t * t)), Side::Right, &identity(1), (0.0, 1.0), spec).unwrap();
        let exact = (1.0 + 1.0 / 3.0f64).exp();
        (out.last().unwrap().1[(0, 0)].re - exact).abs()
    }

    #[test]
    fn rk4_order_on_scalar_exponential() {
        let samples: Vec<(f64, f64)> = [4usize, 8, 16, 32].iter().map(|&n| (1.0 / n as f64, endpoint_error(StepSpec::rk4(n)))).collect();
        let order = convergence_order(&samples).unwrap().value();
        assert!(order >= 3.5, "order {order}");
    }

    #[test]
    fn midpoint_order_is_two() {
        let samples: Vec<(f64, f64)> =
            [8usize, 16, 32, 64].iter().map(|&n| (1.0 / n as f64, endpoint_error(StepSpec::midpoint(n)))).collect();
        let order = convergence_order(&samples).unwrap().value();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn orthonormalize_keeps_rotations_on_group() {
        let gen = real(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let out = integrate_with_retraction(
            |t| &gen * c(1.0 + t),
            Side::Right,
            &identity(2),
            (0.0, 3.0),
            StepSpec::midpoint(4),
            Retraction::Orthonormalize,
        )
        .unwrap();
        let end = &out.last().unwrap().1;
        assert!(distance(&(end.adjoint() * end), &identity(2)) < 1e-12);
    }

    #[test]
    fn non_finite_is_reported_with_time() {
        let err = integrate_linear_matrix_ode(
            |t| if t > 0.5 { scalar(c(f64::NAN)) } else { scalar(c(1.0)) },
            Side::Right,
            &identity(1),
            (0.0, 1.0),
            StepSpec::rk4(4),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { time } if time > 0.4));
    }

    #[test]
    fn line_integral_examples() {
        let z = composite_line_integral(|_| zeros(1), 1.0, 65).unwrap();
        assert_eq!(z, zeros(1));
        let lin = composite_line_integral(|t| scalar(c(t)), 1.0, 65).unwrap();
        assert!((lin[(0, 0)].re - 0.5).abs() < 1e-12);
        let s = composite_line_integral(|t| scalar(c((std::f64::consts::PI * t).sin())), 1.0, 65).unwrap();
        assert!((s[(0, 0)].re - 2.0 / std::f64::consts::PI).abs() < 4e-8);
        assert!(composite_line_integral(|_| zeros(1), 1.0, 1).is_err());
    }

    #[test]
    fn trapezoid_on_even_nodes() {
        let lin = composite_line_integral(|t| scalar(c(3.0 * t + 1.0)), 2.0, 10).unwrap();
        assert!((lin[(0, 0)].re - 8.0).abs() < 1e-12);
    }

    #[test]
    fn convergence_examples() {
        let h = 0.1;
        let second = [(h, 1e-2), (h / 2.0, 2.5e-3), (h / 4.0, 6.25e-4)];
        assert!((convergence_order(&second).unwrap().value() - 2.0).abs() < 0.1);
        let flat = [(h, 1e-3), (h / 2.0, 1e-3), (h / 4.0, 1e-3)];
        assert!(convergence_order(&flat).unwrap().value().abs() < 1e-12);
        let fourth: Vec<(f64, f64)> = (0..4).map(|k| (h / 2f64.powi(k), 3.0 * (h / 2f64.powi(k)).powi(4))).collect();
        assert!((convergence_order(&fourth).unwrap().value() - 4.0).abs() < 0.2);
        let floor = [(h, 1e-3), (h / 2.0, 0.0), (h / 4.0, 0.0)];
        assert_eq!(convergence_order(&floor).unwrap(), Convergence::BelowFloor);
        assert!(convergence_order(&second[..2]).is_err());
        let unordered = [(h, 1e-2), (h, 2.5e-3), (h / 4.0, 6.25e-4)];
        assert!(convergence_order(&unordered).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre(6);
        let w: f64 = rule.iter().map(|r| r.1).sum();
        assert!((w - 2.0).abs() < 1e-14);
        let x10: f64 = rule.iter().map(|&(x, w)| w * x.powi(10)).sum();
        assert!((x10 - 2.0 / 11.0).abs() < 1e-14);
        let v = gauss_legendre_rect(|t, s| scalar(c(t * s * s)), Rect::new(0.0, 2.0, 0.0, 3.0), 4, 1);
        assert!((v[(0, 0)].re - 18.0).abs() < 1e-12);
    }

    fn quadratic_surface(t: f64, s: f64) -> Vec<f64> {
        vec![t * t + s, s * s * t]
    }

    #[test]
    fn pullback_of_identity_surface() {
        let n = nilpotent();
        let nn = n.clone();
        let a = Form1::from_components(move |p: &[f64]| vec![zeros(2), &nn * c(p[0])]);
        let id = |t: f64, s: f64| vec![t, s];
        let pb = finite_difference_pullback(&id, FieldRef::One(&a), (0.3, 0.6), Direction::Ds, 1e-4, Rect::UNIT).unwrap();
        assert!(distance(&pb.value, &(&n * c(0.3))) < 1e-10);
        assert!(!pb.clamped);
        let dt = finite_difference_pullback(&id, FieldRef::One(&a), (0.3, 0.6), Direction::Dt, 1e-4, Rect::UNIT).unwrap();
        assert!(norm(&dt.value) < 1e-12);
    }

    #[test]
    fn pullback_of_constant_surface_is_zero() {
        let a = Form1::from_components(|_: &[f64]| vec![identity(1), identity(1)]);
        let constant = |_: f64, _: f64| vec![0.4, -1.0];
        let pb = finite_difference_pullback(&constant, FieldRef::One(&a), (0.5, 0.5), Direction::Dt, 1e-3, Rect::UNIT).unwrap();
        assert_eq!(norm(&pb.value), 0.0);
    }

    #[test]
    fn pullback_clamps_at_the_edge_and_keeps_order_two() {
        let a = Form1::from_components(|_: &[f64]| vec![scalar(c(1.0)), scalar(c(2.0))]);
        let exact = |t: f64, s: f64| 2.0 * t + 2.0 * s * s;
        let err = |h: f64, at: (f64, f64)| {
            let pb = finite_difference_pullback(&quadratic_surface, FieldRef::One(&a), at, Direction::Dt, h, Rect::UNIT).unwrap();
            ((pb.value[(0, 0)].re - exact(at.0, at.1)).abs(), pb.clamped)
        };
        let (e_edge, clamped) = err(1e-2, (1.0, 0.5));
        assert!(clamped);
        assert!(e_edge < 1e-10, "one-sided stencil is exact on quadratics: {e_edge}");

        let b = Form2::from_components(|p: &[f64]| vec![vec![zeros(1), scalar(c(p[0].sin()))], vec![scalar(c(-p[0].sin())), zeros(1)]]);
        let surf = |t: f64, s: f64| vec![t.sin() + s * s * s, s.exp() * t];
        let analytic = |t: f64, s: f64| {
            let (x, u, v) = (t.sin() + s * s * s, [t.cos(), s.exp()], [3.0 * s * s, s.exp() * t]);
            x.sin() * (u[0] * v[1] - u[1] * v[0])
        };
        let errs: Vec<f64> = [0.02, 0.01]
            .iter()
            .map(|&h| {
                let pb = finite_difference_pullback(&surf, FieldRef::Two(&b), (0.4, 0.3), Direction::DtDs, h, Rect::UNIT).unwrap();
                (pb.value[(0, 0)].re - analytic(0.4, 0.3)).abs()
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn simpson_exact_on_cubics(a0 in -3.0..3.0f64, a1 in -3.0..3.0f64, a2 in -3.0..3.0f64, a3 in -3.0..3.0f64,
                                   t in 0.1..2.0f64, half in 1usize..20) {
            let p = |x: f64| a0 + a1 * x + a2 * x * x + a3 * x * x * x;
            let exact = a0 * t + a1 * t * t / 2.0 + a2 * t.powi(3) / 3.0 + a3 * t.powi(4) / 4.0;
            let v = composite_line_integral(|x| scalar(c(p(x))), t, 2 * half + 1).unwrap();
            prop_assert!((v[(0, 0)].re - exact).abs() < 1e-12 * (1.0 + exact.abs()));
        }

        #[test]
        fn constant_generator_matches_expm(e in proptest::collection::vec(-1.0..1.0f64, 4)) {
            let m = real(&[&e[0..2], &e[2..4]]);
            let out = integrate_linear_matrix_ode(|_| m.clone(), Side::Left, &identity(2), (0.0, 1.0), StepSpec::rk4(256)).unwrap();
            prop_assert!(distance(&out.last().unwrap().1, &expm(&m)) < 1e-9);
        }
    }
}
