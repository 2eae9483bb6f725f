//! Curve-indexed transports: the 1-holonomy, boundary-loop holonomy, the row integrals
//! 𝒜 and ℬ, gauge transport, wreath transport and transition 2-arrows.

use std::fmt;
use std::sync::Arc;

use crate::algebra::{CrossedModule, TwoArrow, WreathElement};
use crate::connection::{curvature1, Form1, Form2, GroupField, LocalConnection};
use crate::error::{Error, Result};
use crate::numerics::{
    c, composite_rule, distance, fd_tangent, integrate_sampled, inverse, is_finite, Mat, Method, Rect, Retraction, Side, StepSpec,
};

type PathFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;
type SurfFn = Arc<dyn Fn(f64, f64) -> Vec<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(f64, f64) -> (Vec<f64>, Vec<f64>) + Send + Sync>;

const FD_STEP: f64 = 1e-5;

/// A Lipschitz path `ρ: [a, b] → ℝ^d`.
#[derive(Clone)]
pub struct ParamPath {
    map: PathFn,
    velocity: Option<PathFn>,
    pub a: f64,
    pub b: f64,
    pub chart: Option<usize>,
}

impl fmt::Debug for ParamPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParamPath").field("a", &self.a).field("b", &self.b).field("chart", &self.chart).finish()
    }
}

impl ParamPath {
    pub fn new(map: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static, a: f64, b: f64) -> Self {
        ParamPath { map: Arc::new(map), velocity: None, a, b, chart: None }
    }

    pub fn with_velocity(mut self, v: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.velocity = Some(Arc::new(v));
        self
    }

    pub fn in_chart(mut self, chart: usize) -> Self {
        self.chart = Some(chart);
        self
    }

    /// The straight segment from `p` to `q` on `[0, 1]`.
    pub fn line(p: Vec<f64>, q: Vec<f64>) -> Self {
        let (p1, d): (Vec<f64>, Vec<f64>) = (p.clone(), q.iter().zip(&p).map(|(x, y)| x - y).collect());
        let d1 = d.clone();
        ParamPath::new(move |t| p1.iter().zip(&d1).map(|(x, v)| x + t * v).collect(), 0.0, 1.0).with_velocity(move |_| d.clone())
    }

    pub fn point(&self, t: f64) -> Vec<f64> {
        (self.map)(t)
    }

    pub fn velocity(&self, t: f64) -> Vec<f64> {
        if let Some(v) = &self.velocity {
            return v(t);
        }
        let (lo, hi) = (self.a.min(self.b), self.a.max(self.b));
        let h = FD_STEP * (hi - lo).max(1e-3);
        let m = &self.map;
        let comb = |pts: [(f64, f64); 3], scale: f64| {
            let vals: Vec<(f64, Vec<f64>)> = pts.iter().filter(|p| p.0 != 0.0).map(|&(w, x)| (w, m(x))).collect();
            (0..vals[0].1.len()).map(|i| vals.iter().map(|(w, p)| w * p[i]).sum::<f64>() / scale).collect()
        };
        if t - h >= lo && t + h <= hi {
            comb([(1.0, t + h), (-1.0, t - h), (0.0, t)], 2.0 * h)
        } else if t + 2.0 * h <= hi {
            comb([(-3.0, t), (4.0, t + h), (-1.0, t + 2.0 * h)], 2.0 * h)
        } else {
            comb([(3.0, t), (-4.0, t - h), (1.0, t - 2.0 * h)], 2.0 * h)
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.a == self.b
    }

    /// The same path restricted to `[a', b']`.
    pub fn segment(&self, a: f64, b: f64) -> Self {
        ParamPath { a, b, ..self.clone() }
    }

    /// `τ ↦ ρ(a + b − τ)` on `[a, b]`.
    pub fn reversed(&self) -> Self {
        let (m, sum) = (self.map.clone(), self.a + self.b);
        let velocity =
            self.velocity.clone().map(|v| Arc::new(move |t: f64| v(sum - t).into_iter().map(|x| -x).collect::<Vec<f64>>()) as PathFn);
        ParamPath { map: Arc::new(move |t| m(sum - t)), velocity, a: self.a, b: self.b, chart: self.chart }
    }
}

/// A map `[t₀, t₁] × [s₀, s₁] → ℝ^d` defined on `domain`, with an optional Jacobian.
#[derive(Clone)]
pub struct SurfaceMap {
    map: SurfFn,
    jacobian: Option<JacFn>,
    pub domain: Rect,
}

impl fmt::Debug for SurfaceMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SurfaceMap").field("domain", &self.domain).field("jacobian", &self.jacobian.is_some()).finish()
    }
}

impl SurfaceMap {
    pub fn new(map: impl Fn(f64, f64) -> Vec<f64> + Send + Sync + 'static, domain: Rect) -> Self {
        SurfaceMap { map: Arc::new(map), jacobian: None, domain }
    }

    /// Supplies `(∂γ/∂t, ∂γ/∂s)`.
    pub fn with_jacobian(mut self, j: impl Fn(f64, f64) -> (Vec<f64>, Vec<f64>) + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn point(&self, t: f64, s: f64) -> Vec<f64> {
        (self.map)(t, s)
    }

    pub fn tangents(&self, t: f64, s: f64) -> (Vec<f64>, Vec<f64>) {
        if let Some(j) = &self.jacobian {
            return j(t, s);
        }
        let m = &self.map;
        let f = |x: f64, y: f64| m(x, y);
        let (dt, _) = fd_tangent(&f, (t, s), true, FD_STEP, self.domain);
        let (ds, _) = fd_tangent(&f, (t, s), false, FD_STEP, self.domain);
        (dt, ds)
    }

    /// Precomposition with a map of the parameter square; the Jacobian is dropped.
    pub fn compose(&self, xi: impl Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static) -> SurfaceMap {
        let m = self.map.clone();
        SurfaceMap::new(
            move |t, s| {
                let (a, b) = xi(t, s);
                m(a, b)
            },
            self.domain,
        )
    }

    /// The horizontal path `t ↦ γ(t, s)` on `[t₀, t₁]`.
    pub fn row(&self, s: f64, t0: f64, t1: f64) -> ParamPath {
        let (m, me) = (self.map.clone(), self.clone());
        ParamPath::new(move |t| m(t, s), t0, t1).with_velocity(move |t| me.tangents(t, s).0)
    }

    /// The vertical path `s ↦ γ(t, s)` on `[s₀, s₁]`.
    pub fn column(&self, t: f64, s0: f64, s1: f64) -> ParamPath {
        let (m, me) = (self.map.clone(), self.clone());
        ParamPath::new(move |s| m(t, s), s0, s1).with_velocity(move |s| me.tangents(t, s).1)
    }
}

/// A surface restricted to a rectangle and tagged with the chart it lies in.
#[derive(Clone, Debug)]
pub struct SurfacePatch {
    pub surface: SurfaceMap,
    pub rect: Rect,
    pub chart: usize,
}

impl SurfacePatch {
    pub fn new(surface: SurfaceMap, rect: Rect, chart: usize) -> Self {
        SurfacePatch { surface, rect, chart }
    }

    pub fn sub(&self, rect: Rect) -> Self {
        SurfacePatch { surface: self.surface.clone(), rect, chart: self.chart }
    }

    pub fn top(&self) -> ParamPath {
        self.surface.row(self.rect.s0, self.rect.t0, self.rect.t1).in_chart(self.chart)
    }

    pub fn bottom(&self) -> ParamPath {
        self.surface.row(self.rect.s1, self.rect.t0, self.rect.t1).in_chart(self.chart)
    }

    pub fn left(&self) -> ParamPath {
        self.surface.column(self.rect.t0, self.rect.s0, self.rect.s1).in_chart(self.chart)
    }

    pub fn right(&self) -> ParamPath {
        self.surface.column(self.rect.t1, self.rect.s0, self.rect.s1).in_chart(self.chart)
    }
}

#[derive(Clone, Debug)]
pub struct TransportResult {
    pub endpoint: Mat,
    pub trace: Vec<(f64, Mat)>,
    pub spec: StepSpec,
    /// Membership residual of the endpoint.
    pub drift: f64,
}

fn check_domain(a: &Form1, p: &[f64], chart: Option<usize>, param: f64) -> Result<()> {
    if a.in_domain(p) {
        Ok(())
    } else {
        Err(Error::ChartViolation { chart: chart.unwrap_or(0), param })
    }
}

/// Half-grid samples `ρ*A(∂τ)` at `a + k·h/2`, `k = 0..=2n`.
fn pullback_samples(a: &Form1, rho: &ParamPath, n: usize) -> Result<Vec<Mat>> {
    let h = (rho.b - rho.a) / n as f64;
    (0..=2 * n)
        .map(|k| {
            let t = rho.a + k as f64 * 0.5 * h;
            let p = rho.point(t);
            check_domain(a, &p, rho.chart, t)?;
            Ok(a.eval(&p, &rho.velocity(t)))
        })
        .collect()
}

fn steps(spec: StepSpec, rho: &ParamPath) -> usize {
    spec.steps_for((rho.b - rho.a).abs())
}

/// `F_A(ρ)`: solves `F' = F·ρ*A(∂t)`, `F(a) = 1`.
pub fn holonomy1(a: &Form1, rho: &ParamPath, spec: StepSpec, cm: &dyn CrossedModule) -> Result<TransportResult> {
    let unit = cm.unit_g();
    if rho.is_degenerate() {
        let p = rho.point(rho.a);
        check_domain(a, &p, rho.chart, rho.a)?;
        return Ok(TransportResult { endpoint: unit.clone(), trace: vec![(rho.a, unit)], spec, drift: 0.0 });
    }
    let n = steps(spec, rho);
    let half = pullback_samples(a, rho, n)?;
    let h = (rho.b - rho.a) / n as f64;
    let trace = integrate_sampled(&half, rho.a, h, Side::Right, &unit, spec.method, Retraction::None)?;
    let endpoint = trace.last().expect("non-empty trace").1.clone();
    let drift = cm.g_residual(&endpoint);
    Ok(TransportResult { endpoint, trace, spec, drift })
}

/// `F_A(ρ)` sampled on the half-step grid (integrated with step `h/2`).
fn holonomy_on_half_grid(a: &Form1, rho: &ParamPath, n: usize, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Vec<Mat>> {
    let half = pullback_samples(a, rho, 2 * n)?;
    let h = (rho.b - rho.a) / (2 * n) as f64;
    let trace = integrate_sampled(&half, rho.a, h, Side::Right, &cm.unit_g(), spec.method, Retraction::None)?;
    Ok(trace.into_iter().map(|(_, m)| m).collect())
}

/// `F_A` along `γ_{t; [s₀, s]}`, allowing `s < s₀` as the inverse of the forward transport.
fn column_holonomy(a: &Form1, patch: &SurfacePatch, t: f64, s0: f64, s: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    if s >= s0 {
        Ok(holonomy1(a, &patch.surface.column(t, s0, s).in_chart(patch.chart), spec, cm)?.endpoint)
    } else {
        inverse(&holonomy1(a, &patch.surface.column(t, s, s0).in_chart(patch.chart), spec, cm)?.endpoint)
    }
}

fn row_holonomy(a: &Form1, patch: &SurfacePatch, s: f64, t0: f64, t: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    if t >= t0 {
        Ok(holonomy1(a, &patch.surface.row(s, t0, t).in_chart(patch.chart), spec, cm)?.endpoint)
    } else {
        inverse(&holonomy1(a, &patch.surface.row(s, t, t0).in_chart(patch.chart), spec, cm)?.endpoint)
    }
}

/// `u_{A,s₀}(t, s) = F(γ_{t₀;[s₀,s]})·F(γ_{[t₀,t];s})·F(γ_{t;[s₀,s]})⁻¹·F(γ_{[t₀,t];s₀})⁻¹`.
pub fn loop_holonomy_from(a: &Form1, patch: &SurfacePatch, s0: f64, t: f64, s: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    let t0 = patch.rect.t0;
    let left = column_holonomy(a, patch, t0, s0, s, spec, cm)?;
    let lower = row_holonomy(a, patch, s, t0, t, spec, cm)?;
    let right = column_holonomy(a, patch, t, s0, s, spec, cm)?;
    let upper = row_holonomy(a, patch, s0, t0, t, spec, cm)?;
    Ok(left * lower * inverse(&right)? * inverse(&upper)?)
}

/// `u_A(t, s) = F_A(γ⁻_{t;s})·F_A(γ⁺_{t;s})⁻¹`, measured from the patch corner.
pub fn loop_holonomy_u(a: &Form1, patch: &SurfacePatch, t: f64, s: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    if t == patch.rect.t0 || s == patch.rect.s0 {
        return Ok(cm.unit_g());
    }
    loop_holonomy_from(a, patch, patch.rect.s0, t, s, spec, cm)
}

/// `F_A(γ⁻_{t;s})` and `F_A(γ⁺_{t;s})` for the sub-rectangle ending at `(t, s)`.
pub fn boundary_holonomies(a: &Form1, patch: &SurfacePatch, t: f64, s: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<(Mat, Mat)> {
    let (t0, s0) = (patch.rect.t0, patch.rect.s0);
    let lower = column_holonomy(a, patch, t0, s0, s, spec, cm)? * row_holonomy(a, patch, s, t0, t, spec, cm)?;
    let upper = row_holonomy(a, patch, s0, t0, t, spec, cm)? * column_holonomy(a, patch, t, s0, s, spec, cm)?;
    Ok((lower, upper))
}

/// Horizontal step count forced even so the row quadrature is Simpson.
pub(crate) fn row_steps(spec: StepSpec, width: f64) -> usize {
    let n = spec.steps_for(width);
    n + n % 2
}

/// Data of one horizontal row at height `s`: `F_A(γ⁻_{τ;s})` at the τ-nodes and the points.
pub(crate) struct Row {
    pub transports: Vec<Mat>,
    pub taus: Vec<f64>,
}

/// Row transport `τ ↦ left·F_A(γ_{[t₀,τ];s})` on `n` RK4 steps.
pub(crate) fn row_transport(a: &Form1, patch: &SurfacePatch, s: f64, t_end: f64, n: usize, left: &Mat, spec: StepSpec) -> Result<Row> {
    let t0 = patch.rect.t0;
    let rho = patch.surface.row(s, t0, t_end).in_chart(patch.chart);
    if t_end == t0 {
        return Ok(Row { transports: vec![left.clone()], taus: vec![t0] });
    }
    let half = pullback_samples(a, &rho, n)?;
    let h = (t_end - t0) / n as f64;
    let trace = integrate_sampled(&half, t0, h, Side::Right, left, spec.method, Retraction::None)?;
    Ok(Row { taus: trace.iter().map(|x| x.0).collect(), transports: trace.into_iter().map(|x| x.1).collect() })
}

fn row_integral(row: &Row, patch: &SurfacePatch, s: f64, value: impl Fn(&Mat, &[f64], &[f64], &[f64]) -> Mat) -> Mat {
    let samples: Vec<Mat> = row
        .transports
        .iter()
        .zip(&row.taus)
        .map(|(f, &tau)| {
            let p = patch.surface.point(tau, s);
            let (dt, ds) = patch.surface.tangents(tau, s);
            value(f, &p, &dt, &ds)
        })
        .collect();
    if samples.len() == 1 {
        return Mat::zeros(samples[0].nrows(), samples[0].ncols());
    }
    composite_rule(&samples, row.taus[row.taus.len() - 1] - row.taus[0])
}

fn left_edge(a: &Form1, patch: &SurfacePatch, s: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    column_holonomy(a, patch, patch.rect.t0, patch.rect.s0, s, spec, cm)
}

/// `𝒜_t(s) = ∫ Ad_{F_A(γ⁻_{τ;s})} γ*Ω^A(∂τ, ∂s) dτ` over `[t₀, t]`.
pub fn script_a(a: &Form1, patch: &SurfacePatch, t: f64, s: f64, spec: StepSpec, cm: &dyn CrossedModule, fd: Option<f64>) -> Result<Mat> {
    let omega = curvature1(a, fd)?;
    let left = left_edge(a, patch, s, spec, cm)?;
    let row = row_transport(a, patch, s, t, row_steps(spec, t - patch.rect.t0), &left, spec)?;
    Ok(row_integral(&row, patch, s, |f, p, dt, ds| f * omega.eval(p, dt, ds) * inverse(f).expect("invertible")))
}

pub(crate) fn script_b_from_row(row: &Row, b: &Form2, patch: &SurfacePatch, s: f64, cm: &dyn CrossedModule) -> Mat {
    row_integral(row, patch, s, |f, p, dt, ds| cm.act_lie_h(f, &b.eval(p, dt, ds)))
}

/// `ℬ_t(s) = ∫ F_A(γ⁻_{τ;s}) ▷ γ*B(∂τ, ∂s) dτ` over `[t₀, t]`.
pub fn script_b(conn: &LocalConnection, patch: &SurfacePatch, t: f64, s: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    let left = left_edge(&conn.a, patch, s, spec, cm)?;
    let row = row_transport(&conn.a, patch, s, t, row_steps(spec, t - patch.rect.t0), &left, spec)?;
    Ok(script_b_from_row(&row, &conn.b, patch, s, cm))
}

/// `h(ρ)`: solves `h' = (F_A ▷ ρ*φ(∂t))·h`, `h(a) = 1`.
pub fn gauge_transport_h(a: &Form1, phi: &Form1, rho: &ParamPath, spec: StepSpec, cm: &dyn CrossedModule) -> Result<TransportResult> {
    let unit = cm.unit_h();
    if rho.is_degenerate() {
        return Ok(TransportResult { endpoint: unit.clone(), trace: vec![(rho.a, unit)], spec, drift: 0.0 });
    }
    let n = steps(spec, rho);
    let f = holonomy_on_half_grid(a, rho, n, spec, cm)?;
    let phis = pullback_samples(phi, rho, n)?;
    let half: Vec<Mat> = f.iter().zip(&phis).map(|(g, y)| cm.act_lie_h(g, y)).collect();
    let h = (rho.b - rho.a) / n as f64;
    let trace = integrate_sampled(&half, rho.a, h, Side::Left, &unit, spec.method, Retraction::None)?;
    let endpoint = trace.last().expect("non-empty trace").1.clone();
    let drift = cm.h_residual(&endpoint);
    Ok(TransportResult { endpoint, trace, spec, drift })
}

/// `F_𝔄(ρ)` for `𝔄 = (A, φ)`, integrated directly on `G ⋉ H`.
pub fn wreath_holonomy(a: &Form1, phi: &Form1, rho: &ParamPath, spec: StepSpec, cm: &dyn CrossedModule) -> Result<WreathElement> {
    let mut g = cm.unit_g();
    let mut hh = cm.unit_h();
    if rho.is_degenerate() {
        return Ok(WreathElement::new(g, hh));
    }
    let n = steps(spec, rho);
    let xs = pullback_samples(a, rho, n)?;
    let ys = pullback_samples(phi, rho, n)?;
    let step = (rho.b - rho.a) / n as f64;
    let rate = |g: &Mat, h: &Mat, k: usize| (g * &xs[k], cm.act_lie_h(g, &ys[k]) * h);
    for k in 0..n {
        let next = match spec.method {
            Method::Rk4 => {
                let k1 = rate(&g, &hh, 2 * k);
                let k2 = rate(&(&g + &k1.0 * c(0.5 * step)), &(&hh + &k1.1 * c(0.5 * step)), 2 * k + 1);
                let k3 = rate(&(&g + &k2.0 * c(0.5 * step)), &(&hh + &k2.1 * c(0.5 * step)), 2 * k + 1);
                let k4 = rate(&(&g + &k3.0 * c(step)), &(&hh + &k3.1 * c(step)), 2 * k + 2);
                let w = c(step / 6.0);
                (&g + (k1.0 + (k2.0 + k3.0) * c(2.0) + k4.0) * w, &hh + (k1.1 + (k2.1 + k3.1) * c(2.0) + k4.1) * w)
            }
            Method::Midpoint => {
                let k1 = rate(&g, &hh, 2 * k);
                let k2 = rate(&(&g + &k1.0 * c(0.5 * step)), &(&hh + &k1.1 * c(0.5 * step)), 2 * k + 1);
                (&g + k2.0 * c(step), &hh + k2.1 * c(step))
            }
        };
        if !is_finite(&next.0) || !is_finite(&next.1) {
            return Err(Error::NonFinite { time: rho.a + (k + 1) as f64 * step });
        }
        (g, hh) = next;
    }
    Ok(WreathElement::new(g, hh))
}

/// `Ψ_ij(ρ) = (F_{A_i}(ρ)·g_ij(ρ(b)), ψ_ij(ρ))`, a 2-arrow with target `g_ij(ρ(a))·F_{A_j}(ρ)`.
pub fn transition_psi(
    a_i: &Form1,
    g_ij: &GroupField,
    a_ij: &Form1,
    rho: &ParamPath,
    spec: StepSpec,
    cm: &dyn CrossedModule,
) -> Result<TwoArrow> {
    if rho.is_degenerate() {
        return Ok(TwoArrow::new(g_ij.eval(&rho.point(rho.a)), cm.unit_h()));
    }
    let f = holonomy1(a_i, rho, spec, cm)?.endpoint;
    let psi = gauge_transport_h(a_i, a_ij, rho, spec, cm)?.endpoint;
    Ok(TwoArrow::new(f * g_ij.eval(&rho.point(rho.b)), psi))
}

/// Mixed derivative `∂²u_{A,s₀}/∂t∂s` at `(t, s₀)` by a central stencil of width `e`.
pub fn mixed_derivative_u(a: &Form1, patch: &SurfacePatch, t: f64, s0: f64, e: f64, spec: StepSpec, cm: &dyn CrossedModule) -> Result<Mat> {
    let u = |dt: f64, ds: f64| loop_holonomy_from(a, patch, s0, t + dt, s0 + ds, spec, cm);
    Ok((u(e, e)? - u(-e, e)? - u(e, -e)? + u(-e, -e)?) * c(0.25 / (e * e)))
}

/// Residual of `∂²u_{A,s₀}/∂t∂s = −Ad_{F_A(γ_{[t₀,t];s₀})} γ*Ω^A(∂t, ∂s)` at `(t, s₀)`.
pub fn second_variation_check(
    a: &Form1,
    patch: &SurfacePatch,
    t: f64,
    s0: f64,
    e: f64,
    spec: StepSpec,
    cm: &dyn CrossedModule,
    fd: Option<f64>,
) -> Result<f64> {
    let lhs = mixed_derivative_u(a, patch, t, s0, e, spec, cm)?;
    Ok(distance(&lhs, &second_variation_rhs(a, patch, t, s0, spec, cm, fd)?))
}

/// `−Ad_{F_A(γ_{[t₀,t];s₀})} γ*Ω^A(∂t, ∂s)`.
pub fn second_variation_rhs(
    a: &Form1,
    patch: &SurfacePatch,
    t: f64,
    s0: f64,
    spec: StepSpec,
    cm: &dyn CrossedModule,
    fd: Option<f64>,
) -> Result<Mat> {
    let omega = curvature1(a, fd)?;
    let f = row_holonomy(a, patch, s0, patch.rect.t0, t, spec, cm)?;
    let p = patch.surface.point(t, s0);
    let (dt, ds) = patch.surface.tangents(t, s0);
    Ok(-(&f * omega.eval(&p, &dt, &ds) * inverse(&f)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{AbelianGerbe, Inner};
    use crate::connection::{Form1, GaugeTransformation, Module};
    use crate::numerics::{convergence_order, expm, identity, norm, real, scalar, zeros, Convergence};

    fn nilpotent() -> Mat {
        real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }

    fn plane() -> SurfaceMap {
        SurfaceMap::new(|t, s| vec![t, s, 0.3 * t * s], Rect::UNIT).with_jacobian(|t, s| (vec![1.0, 0.0, 0.3 * s], vec![0.0, 1.0, 0.3 * t]))
    }

    fn smooth_a() -> Form1 {
        let (x1, x2, x3) = (real(&[&[0.3, 1.0], &[-0.2, 0.1]]), real(&[&[0.0, -0.4], &[0.7, -0.3]]), real(&[&[0.5, 0.2], &[0.1, -0.6]]));
        Form1::from_components(move |p| vec![&x1 * c(p[1].sin()), &x2 * c(p[0] * p[2] + 0.5), &x3 * c(p[0].cos())])
    }

    #[test]
    fn holonomy_examples() {
        let cm = Inner::general(2);
        let rho = ParamPath::line(vec![0.0, 0.0], vec![1.0, 0.0]);
        let zero = holonomy1(&Form1::zero(2), &rho, StepSpec::rk4(8), &cm).unwrap();
        assert_eq!(zero.endpoint, identity(2));
        let n = nilpotent();
        let a = Form1::from_components(move |_| vec![n.clone(), zeros(2)]);
        let f = holonomy1(&a, &rho, StepSpec::rk4(8), &cm).unwrap();
        assert!(distance(&f.endpoint, &real(&[&[1.0, 1.0], &[0.0, 1.0]])) < 1e-14);
        assert_eq!(f.trace.len(), 9);
    }

    #[test]
    fn composition_and_reversal() {
        let cm = Inner::general(2);
        let a = smooth_a();
        let rho = ParamPath::new(|t| vec![t.cos(), t * t, (2.0 * t).sin()], 0.0, 1.0);
        let spec = StepSpec::rk4(128);
        let whole = holonomy1(&a, &rho, spec, &cm).unwrap().endpoint;
        let first = holonomy1(&a, &rho.segment(0.0, 0.37), spec, &cm).unwrap().endpoint;
        let second = holonomy1(&a, &rho.segment(0.37, 1.0), spec, &cm).unwrap().endpoint;
        assert!(distance(&whole, &(first * second)) < 1e-9);
        let back = holonomy1(&a, &rho.reversed(), spec, &cm).unwrap().endpoint;
        assert!(distance(&(&whole * back), &identity(2)) < 1e-9);
    }

    #[test]
    fn chart_violation_names_the_parameter() {
        let cm = Inner::general(2);
        let a = Form1::zero(2).with_domain(|p| p[0] < 0.5);
        let rho = ParamPath::line(vec![0.0], vec![1.0]).in_chart(3);
        match holonomy1(&a, &rho, StepSpec::rk4(4), &cm) {
            Err(Error::ChartViolation { chart: 3, param }) => assert!((0.5..=0.7).contains(&param)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn abelian_loop_obeys_stokes() {
        let cm = AbelianGerbe;
        let a = Form1::from_components(|p: &[f64]| {
            vec![scalar(num_complex::Complex64::new(0.0, p[1] * p[1])), scalar(num_complex::Complex64::new(0.0, p[0].sin()))]
        });
        let patch = SurfacePatch::new(plane(), Rect::UNIT, 0);
        let (t, s) = (0.8, 0.6);
        let u = loop_holonomy_u(&a, &patch, t, s, StepSpec::rk4(64), &cm).unwrap();
        // dA(∂x, ∂y) = i(cos x − 2y); the loop runs clockwise in (t, s).
        let flux = crate::numerics::gauss_legendre_rect(
            |x, y| scalar(num_complex::Complex64::new(0.0, x.cos() - 2.0 * y)),
            Rect::new(0.0, t, 0.0, s),
            8,
            2,
        );
        assert!(distance(&u, &expm(&(-flux))) < 1e-6);
        assert_eq!(loop_holonomy_u(&a, &patch, 0.0, s, StepSpec::rk4(8), &cm).unwrap(), identity(1));
    }

    #[test]
    fn u_decomposes_at_an_intermediate_height() {
        let cm = Inner::general(2);
        let a = smooth_a();
        let patch = SurfacePatch::new(plane(), Rect::UNIT, 0);
        let spec = StepSpec::rk4(128);
        let (t, s, s0) = (0.7, 0.9, 0.4);
        let u = loop_holonomy_u(&a, &patch, t, s, spec, &cm).unwrap();
        let f = holonomy1(&a, &patch.surface.column(0.0, 0.0, s0), spec, &cm).unwrap().endpoint;
        let rhs = &f
            * loop_holonomy_from(&a, &patch, s0, t, s, spec, &cm).unwrap()
            * inverse(&f).unwrap()
            * loop_holonomy_u(&a, &patch, t, s0, spec, &cm).unwrap();
        assert!(distance(&u, &rhs) < 1e-9);
    }

    #[test]
    fn script_b_reduces_to_direct_quadrature_for_abelian() {
        let cm = AbelianGerbe;
        let b = crate::connection::Form2::from_components(|p: &[f64]| {
            let v = scalar(num_complex::Complex64::new(0.0, p[0] * p[0] + p[1]));
            vec![vec![zeros(1), v.clone(), zeros(1)], vec![-v, zeros(1), zeros(1)], vec![zeros(1); 3]]
        });
        let conn = LocalConnection::new(Form1::zero(1), b, 0);
        let patch = SurfacePatch::new(plane(), Rect::UNIT, 0);
        let got = script_b(&conn, &patch, 0.9, 0.3, StepSpec::rk4(64), &cm).unwrap();
        let exact = 0.9f64.powi(3) / 3.0 + 0.9 * 0.3;
        assert!((got[(0, 0)].im - exact).abs() < 1e-8);
        let zero = LocalConnection::new(Form1::zero(1), crate::connection::Form2::zero(1), 0);
        assert_eq!(norm(&script_b(&zero, &patch, 0.9, 0.3, StepSpec::rk4(8), &cm).unwrap()), 0.0);
    }

    #[test]
    fn alpha_of_b_is_a_when_fake_flat() {
        let cm = Inner::general(2);
        let a = crate::connection::tests_support::smooth_a();
        let conn = LocalConnection::fake_flat_from(a, 0).unwrap();
        let patch = SurfacePatch::new(plane(), Rect::UNIT, 0);
        let spec = StepSpec::rk4(64);
        let sa = script_a(&conn.a, &patch, 0.8, 0.5, spec, &cm, None).unwrap();
        let sb = script_b(&conn, &patch, 0.8, 0.5, spec, &cm).unwrap();
        assert!(distance(&cm.alpha_lie(&sb), &sa) < 1e-6);
    }

    #[test]
    fn gauge_transport_matches_target_and_composes() {
        let cm: Module = Arc::new(Inner::general(2));
        let a = crate::connection::tests_support::smooth_a();
        let gt = crate::connection::tests_support::smooth_gauge();
        let conn = LocalConnection::fake_flat_from(a.clone(), 0).unwrap();
        let gauged = crate::connection::apply_gauge(&conn, &gt, &cm, None).unwrap();
        let rho = ParamPath::new(|t| vec![0.5 * t, t * t - 0.2, (3.0 * t).sin()], 0.0, 1.0);
        let spec = StepSpec::rk4(128);
        let h = gauge_transport_h(&a, &gt.phi, &rho, spec, cm.as_ref()).unwrap().endpoint;
        let f = holonomy1(&a, &rho, spec, cm.as_ref()).unwrap().endpoint;
        let f2 = holonomy1(&gauged.a, &rho, spec, cm.as_ref()).unwrap().endpoint;
        let lhs = cm.alpha(&inverse(&h).unwrap()) * &f * gt.g.eval(&rho.point(1.0));
        let rhs = gt.g.eval(&rho.point(0.0)) * f2;
        assert!(distance(&lhs, &rhs) < 1e-6);

        let h1 = gauge_transport_h(&a, &gt.phi, &rho.segment(0.0, 0.45), spec, cm.as_ref()).unwrap().endpoint;
        let h2 = gauge_transport_h(&a, &gt.phi, &rho.segment(0.45, 1.0), spec, cm.as_ref()).unwrap().endpoint;
        let f1 = holonomy1(&a, &rho.segment(0.0, 0.45), spec, cm.as_ref()).unwrap().endpoint;
        assert!(distance(&h, &(cm.act(&f1, &h2) * h1)) < 1e-6);

        let w = wreath_holonomy(&a, &gt.phi, &rho, spec, cm.as_ref()).unwrap();
        assert!(distance(&w.g, &f) < 1e-8 && distance(&w.h, &h) < 1e-8);
    }

    #[test]
    fn abelian_gauge_transport_is_an_exponential() {
        let cm = AbelianGerbe;
        let phi = Form1::from_components(|p: &[f64]| vec![scalar(num_complex::Complex64::new(0.0, p[0] * p[0]))]);
        let rho = ParamPath::line(vec![0.0], vec![2.0]);
        let h = gauge_transport_h(&Form1::zero(1), &phi, &rho, StepSpec::rk4(256), &cm).unwrap().endpoint;
        assert!((h[(0, 0)] - num_complex::Complex64::new(0.0, 8.0 / 3.0).exp()).norm() < 1e-8);
        let none = gauge_transport_h(&Form1::zero(1), &Form1::zero(1), &rho, StepSpec::rk4(8), &cm).unwrap();
        assert_eq!(none.endpoint, identity(1));
    }

    #[test]
    fn transition_psi_degenerate_and_trivial() {
        let cm = Inner::general(2);
        let g = GroupField::constant(real(&[&[2.0, 0.0], &[0.0, 1.0]]));
        let p = ParamPath::line(vec![0.1, 0.2], vec![0.1, 0.2]).segment(0.0, 0.0);
        let psi = transition_psi(&Form1::zero(2), &g, &Form1::zero(2), &p, StepSpec::rk4(8), &cm).unwrap();
        assert_eq!(psi.h, identity(2));
        assert_eq!(psi.source, g.eval(&[0.1, 0.2]));
        let a = smooth_a();
        let rho = ParamPath::line(vec![0.0, 0.0, 0.0], vec![0.4, -0.2, 0.9]);
        let id = GroupField::constant(identity(2));
        let psi = transition_psi(&a, &id, &Form1::zero(2), &rho, StepSpec::rk4(32), &cm).unwrap();
        assert!(distance(&psi.source, &holonomy1(&a, &rho, StepSpec::rk4(32), &cm).unwrap().endpoint) < 1e-15);
        assert_eq!(psi.h, identity(2));
        let _ = GaugeTransformation::identity(&cm);
    }

    #[test]
    fn second_variation_flat_and_abelian() {
        let cm = Inner::general(2);
        let patch = SurfacePatch::new(plane(), Rect::UNIT, 0);
        let spec = StepSpec::rk4(256);
        let n = nilpotent();
        let flat = Form1::from_components(move |_| vec![n.clone(), zeros(2), zeros(2)]).with_derivative(|_, _, _| zeros(2));
        assert!(second_variation_check(&flat, &patch, 0.5, 0.4, 1e-3, spec, &cm, None).unwrap() < 1e-8);

        let ab = AbelianGerbe;
        let a = Form1::from_components(|p: &[f64]| {
            vec![scalar(num_complex::Complex64::new(0.0, p[1] * p[1])), scalar(num_complex::Complex64::new(0.0, p[0].sin())), zeros(1)]
        })
        .with_component_jacobian(|p| {
            let i = |x: f64| scalar(num_complex::Complex64::new(0.0, x));
            vec![vec![zeros(1), i(p[0].cos()), zeros(1)], vec![i(2.0 * p[1]), zeros(1), zeros(1)], vec![zeros(1), zeros(1), zeros(1)]]
        });
        let errs: Vec<(f64, f64)> =
            [0.04, 0.02, 0.01].iter().map(|&e| (e, second_variation_check(&a, &patch, 0.5, 0.4, e, spec, &ab, None).unwrap())).collect();
        match convergence_order(&errs).unwrap() {
            Convergence::Order(o) => assert!(o >= 1.8, "order {o}: {errs:?}"),
            Convergence::BelowFloor => {}
        }
    }
}
