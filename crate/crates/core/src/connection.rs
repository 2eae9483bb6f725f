//! Lie-algebra-valued forms as fields on ambient coordinates, local 2-connections,
//! 2-gauge transformations and the curvature diagnostics.
//!
//! Every chart lives in a common ambient `ℝ^d`; a form is a closure of a point and
//! tangent vectors. Exterior derivatives are analytic when supplied and otherwise
//! taken by central differences when a step is authorized (`fd: Some(h)`).

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::algebra::CrossedModule;
use crate::error::{Error, Result};
use crate::numerics::{bracket, c, inverse, norm, Mat};

pub type Module = Arc<dyn CrossedModule>;

type Pred = Arc<dyn Fn(&[f64]) -> bool + Send + Sync>;
type Val0 = Arc<dyn Fn(&[f64]) -> Mat + Send + Sync>;
type Val1 = Arc<dyn Fn(&[f64], &[f64]) -> Mat + Send + Sync>;
type Val2 = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Mat + Send + Sync>;
type Val3 = Arc<dyn Fn(&[f64], &[f64], &[f64], &[f64]) -> Mat + Send + Sync>;

fn shifted(p: &[f64], v: &[f64], e: f64) -> Vec<f64> {
    p.iter().zip(v).map(|(x, d)| x + e * d).collect()
}

fn directional(f: impl Fn(&[f64]) -> Mat, p: &[f64], v: &[f64], h: f64) -> Mat {
    (f(&shifted(p, v, h)) - f(&shifted(p, v, -h))) * c(0.5 / h)
}

fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[i] = 1.0;
    e
}

/// A 1-form `v ↦ value(p, v)`.
#[derive(Clone)]
pub struct Form1 {
    value: Val1,
    derivative: Option<Val2>,
    domain: Option<Pred>,
}

/// An antisymmetric 2-form `(u, v) ↦ value(p, u, v)`.
#[derive(Clone)]
pub struct Form2 {
    value: Val2,
    derivative: Option<Val3>,
}

/// A 3-form, value only.
#[derive(Clone)]
pub struct Form3 {
    value: Val3,
}

impl fmt::Debug for Form1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Form1").field("analytic_derivative", &self.derivative.is_some()).finish()
    }
}

impl fmt::Debug for Form2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Form2").field("analytic_derivative", &self.derivative.is_some()).finish()
    }
}

impl fmt::Debug for Form3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Form3")
    }
}

impl Form1 {
    pub fn new(value: impl Fn(&[f64], &[f64]) -> Mat + Send + Sync + 'static) -> Self {
        Form1 { value: Arc::new(value), derivative: None, domain: None }
    }

    pub fn zero(size: usize) -> Self {
        Form1::new(move |_, _| Mat::zeros(size, size)).with_derivative(move |_, _, _| Mat::zeros(size, size))
    }

    /// `A = Σ Aᵢ(p) dxⁱ`.
    pub fn from_components(comp: impl Fn(&[f64]) -> Vec<Mat> + Send + Sync + 'static) -> Self {
        Form1::new(move |p, v| {
            let a = comp(p);
            let mut acc = Mat::zeros(a[0].nrows(), a[0].ncols());
            for (ai, vi) in a.iter().zip(v) {
                if *vi != 0.0 {
                    acc += ai * c(*vi);
                }
            }
            acc
        })
    }

    /// Supplies `dA` from the partials `jac(p)[j][i] = ∂ⱼAᵢ(p)`.
    pub fn with_component_jacobian(self, jac: impl Fn(&[f64]) -> Vec<Vec<Mat>> + Send + Sync + 'static) -> Self {
        self.with_derivative(move |p, u, v| {
            let d = jac(p);
            let mut acc = Mat::zeros(d[0][0].nrows(), d[0][0].ncols());
            for (j, row) in d.iter().enumerate() {
                for (i, dji) in row.iter().enumerate() {
                    let w = u[j] * v[i] - v[j] * u[i];
                    if w != 0.0 {
                        acc += dji * c(w);
                    }
                }
            }
            acc
        })
    }

    pub fn with_derivative(mut self, d: impl Fn(&[f64], &[f64], &[f64]) -> Mat + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn without_derivative(mut self) -> Self {
        self.derivative = None;
        self
    }

    pub fn with_domain(mut self, pred: impl Fn(&[f64]) -> bool + Send + Sync + 'static) -> Self {
        self.domain = Some(Arc::new(pred));
        self
    }

    pub(crate) fn with_domain_arc(mut self, pred: Option<Pred>) -> Self {
        self.domain = pred;
        self
    }

    pub fn eval(&self, p: &[f64], v: &[f64]) -> Mat {
        (self.value)(p, v)
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn in_domain(&self, p: &[f64]) -> bool {
        self.domain.as_ref().is_none_or(|d| d(p))
    }

    /// `dA`, analytic when available, otherwise by central differences with step `fd`.
    pub fn exterior_derivative(&self, fd: Option<f64>) -> Result<Form2> {
        if let Some(d) = &self.derivative {
            return Ok(Form2 { value: d.clone(), derivative: None });
        }
        let h = fd.ok_or_else(|| Error::MissingDerivative("1-form".into()))?;
        let a = self.value.clone();
        Ok(Form2::new(move |p, u, v| directional(|q| a(q, v), p, u, h) - directional(|q| a(q, u), p, v, h)))
    }

    /// Pointwise image under a fixed linear map; keeps the analytic derivative.
    pub fn map_linear(&self, f: impl Fn(&Mat) -> Mat + Send + Sync + 'static) -> Form1 {
        let f = Arc::new(f);
        let (a, f1) = (self.value.clone(), f.clone());
        let derivative = self.derivative.clone().map(|d| {
            let f2 = f.clone();
            Arc::new(move |p: &[f64], u: &[f64], v: &[f64]| f2(&d(p, u, v))) as Val2
        });
        Form1 { value: Arc::new(move |p, v| f1(&a(p, v))), derivative, domain: self.domain.clone() }
    }

    pub fn scale(&self, z: Complex64) -> Form1 {
        self.map_linear(move |m| m * z)
    }

    pub fn add(&self, other: &Form1) -> Form1 {
        let (a, b) = (self.value.clone(), other.value.clone());
        let derivative = match (&self.derivative, &other.derivative) {
            (Some(da), Some(db)) => {
                let (da, db) = (da.clone(), db.clone());
                Some(Arc::new(move |p: &[f64], u: &[f64], v: &[f64]| da(p, u, v) + db(p, u, v)) as Val2)
            }
            _ => None,
        };
        Form1 { value: Arc::new(move |p, v| a(p, v) + b(p, v)), derivative, domain: self.domain.clone() }
    }

    pub fn sub(&self, other: &Form1) -> Form1 {
        self.add(&other.scale(c(-1.0)))
    }
}

impl Form2 {
    pub fn new(value: impl Fn(&[f64], &[f64], &[f64]) -> Mat + Send + Sync + 'static) -> Self {
        Form2 { value: Arc::new(value), derivative: None }
    }

    pub fn zero(size: usize) -> Self {
        Form2::new(move |_, _, _| Mat::zeros(size, size)).with_derivative(move |_, _, _, _| Mat::zeros(size, size))
    }

    /// `B(u, v) = Σ Bᵢⱼ(p) uⁱ vʲ` with `Bᵢⱼ = −Bⱼᵢ`.
    pub fn from_components(comp: impl Fn(&[f64]) -> Vec<Vec<Mat>> + Send + Sync + 'static) -> Self {
        Form2::new(move |p, u, v| {
            let b = comp(p);
            let mut acc = Mat::zeros(b[0][0].nrows(), b[0][0].ncols());
            for (i, row) in b.iter().enumerate() {
                for (j, bij) in row.iter().enumerate() {
                    let w = u[i] * v[j];
                    if w != 0.0 {
                        acc += bij * c(w);
                    }
                }
            }
            acc
        })
    }

    pub fn with_derivative(mut self, d: impl Fn(&[f64], &[f64], &[f64], &[f64]) -> Mat + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn eval(&self, p: &[f64], u: &[f64], v: &[f64]) -> Mat {
        (self.value)(p, u, v)
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    pub fn exterior_derivative(&self, fd: Option<f64>) -> Result<Form3> {
        if let Some(d) = &self.derivative {
            return Ok(Form3 { value: d.clone() });
        }
        let h = fd.ok_or_else(|| Error::MissingDerivative("2-form".into()))?;
        let b = self.value.clone();
        Ok(Form3::new(move |p, u, v, w| {
            directional(|q| b(q, v, w), p, u, h) - directional(|q| b(q, u, w), p, v, h) + directional(|q| b(q, u, v), p, w, h)
        }))
    }

    pub fn map_linear(&self, f: impl Fn(&Mat) -> Mat + Send + Sync + 'static) -> Form2 {
        let f = Arc::new(f);
        let (b, f1) = (self.value.clone(), f.clone());
        let derivative = self.derivative.clone().map(|d| {
            let f2 = f.clone();
            Arc::new(move |p: &[f64], u: &[f64], v: &[f64], w: &[f64]| f2(&d(p, u, v, w))) as Val3
        });
        Form2 { value: Arc::new(move |p, u, v| f1(&b(p, u, v))), derivative }
    }

    pub fn scale(&self, z: Complex64) -> Form2 {
        self.map_linear(move |m| m * z)
    }

    pub fn add(&self, other: &Form2) -> Form2 {
        let (a, b) = (self.value.clone(), other.value.clone());
        let derivative = match (&self.derivative, &other.derivative) {
            (Some(da), Some(db)) => {
                let (da, db) = (da.clone(), db.clone());
                Some(Arc::new(move |p: &[f64], u: &[f64], v: &[f64], w: &[f64]| da(p, u, v, w) + db(p, u, v, w)) as Val3)
            }
            _ => None,
        };
        Form2 { value: Arc::new(move |p, u, v| a(p, u, v) + b(p, u, v)), derivative }
    }

    pub fn sub(&self, other: &Form2) -> Form2 {
        self.add(&other.scale(c(-1.0)))
    }
}

impl Form3 {
    pub fn new(value: impl Fn(&[f64], &[f64], &[f64], &[f64]) -> Mat + Send + Sync + 'static) -> Self {
        Form3 { value: Arc::new(value) }
    }

    pub fn eval(&self, p: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> Mat {
        (self.value)(p, u, v, w)
    }
}

/// A group-valued function on the ambient space with an optional directional derivative.
#[derive(Clone)]
pub struct GroupField {
    value: Val0,
    derivative: Option<Val1>,
}

impl fmt::Debug for GroupField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupField").field("analytic_derivative", &self.derivative.is_some()).finish()
    }
}

impl GroupField {
    pub fn new(value: impl Fn(&[f64]) -> Mat + Send + Sync + 'static) -> Self {
        GroupField { value: Arc::new(value), derivative: None }
    }

    pub fn constant(m: Mat) -> Self {
        let size = m.nrows();
        GroupField::new(move |_| m.clone()).with_derivative(move |_, _| Mat::zeros(size, size))
    }

    /// `p ↦ exp(f(p)·X)` with gradient `grad f`.
    pub fn exp_scalar(
        generator: Mat,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        let f = Arc::new(f);
        let (x1, f1) = (generator.clone(), f.clone());
        GroupField::new(move |p| (&x1 * c(f1(p))).exp()).with_derivative(move |p, v| {
            let rate: f64 = grad(p).iter().zip(v).map(|(a, b)| a * b).sum();
            &generator * c(rate) * (&generator * c(f(p))).exp()
        })
    }

    pub fn with_derivative(mut self, d: impl Fn(&[f64], &[f64]) -> Mat + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(d));
        self
    }

    pub fn eval(&self, p: &[f64]) -> Mat {
        (self.value)(p)
    }

    pub fn has_derivative(&self) -> bool {
        self.derivative.is_some()
    }

    /// Directional derivative `dg_p(v)`.
    pub fn derivative(&self, p: &[f64], v: &[f64], fd: Option<f64>) -> Result<Mat> {
        if let Some(d) = &self.derivative {
            return Ok(d(p, v));
        }
        let h = fd.ok_or_else(|| Error::MissingDerivative("group field".into()))?;
        Ok(directional(|q| (self.value)(q), p, v, h))
    }

    fn derivative_fn(&self, fd: Option<f64>) -> Option<Val1> {
        match (&self.derivative, fd) {
            (Some(d), _) => Some(d.clone()),
            (None, Some(h)) => {
                let g = self.value.clone();
                Some(Arc::new(move |p: &[f64], v: &[f64]| directional(|q| g(q), p, v, h)))
            }
            (None, None) => None,
        }
    }

    pub fn product(&self, other: &GroupField) -> GroupField {
        let (a, b) = (self.value.clone(), other.value.clone());
        let derivative = match (&self.derivative, &other.derivative) {
            (Some(da), Some(db)) => {
                let (a, b, da, db) = (a.clone(), b.clone(), da.clone(), db.clone());
                Some(Arc::new(move |p: &[f64], v: &[f64]| da(p, v) * b(p) + a(p) * db(p, v)) as Val1)
            }
            _ => None,
        };
        GroupField { value: Arc::new(move |p| a(p) * b(p)), derivative }
    }

    pub fn inverse(&self) -> GroupField {
        let a = self.value.clone();
        let inv = move |p: &[f64]| inverse(&a(p)).expect("group element is invertible");
        let inv = Arc::new(inv);
        let derivative = self.derivative.clone().map(|d| {
            let inv = inv.clone();
            Arc::new(move |p: &[f64], v: &[f64]| {
                let gi = inv(p);
                -(&gi * d(p, v) * &gi)
            }) as Val1
        });
        GroupField { value: Arc::new(move |p| inv(p)), derivative }
    }

    /// `p ↦ α(h(p))` with derivative `α_*(dh·h⁻¹)·α(h)`.
    pub fn alpha(&self, cm: &Module) -> GroupField {
        let (h, cm1) = (self.value.clone(), cm.clone());
        let derivative = self.derivative.clone().map(|d| {
            let (h, cm) = (h.clone(), cm.clone());
            Arc::new(move |p: &[f64], v: &[f64]| {
                let hp = h(p);
                let y = d(p, v) * inverse(&hp).expect("invertible");
                cm.alpha_lie(&y) * cm.alpha(&hp)
            }) as Val1
        });
        GroupField { value: Arc::new(move |p| cm1.alpha(&h(p))), derivative }
    }

    /// `p ↦ g(p) ▷ h(p)` with the product-rule derivative.
    pub fn act(g: &GroupField, h: &GroupField, cm: &Module) -> GroupField {
        let (gv, hv, cm1) = (g.value.clone(), h.value.clone(), cm.clone());
        let derivative = match (&g.derivative, &h.derivative) {
            (Some(dg), Some(dh)) => {
                let (gv, hv, dg, dh, cm) = (gv.clone(), hv.clone(), dg.clone(), dh.clone(), cm.clone());
                Some(Arc::new(move |p: &[f64], v: &[f64]| {
                    let (gp, hp) = (gv(p), hv(p));
                    let gh = cm.act(&gp, &hp);
                    let x = dg(p, v) * inverse(&gp).expect("invertible");
                    let y = dh(p, v) * inverse(&hp).expect("invertible");
                    cm.act_on_group(&x, &gh) + cm.act_lie_h(&gp, &y) * &gh
                }) as Val1)
            }
            _ => None,
        };
        GroupField { value: Arc::new(move |p| cm1.act(&gv(p), &hv(p))), derivative }
    }

    /// The 𝔥- or 𝔤-valued 1-form `dg·g⁻¹`.
    pub fn right_log_derivative(&self, fd: Option<f64>) -> Result<Form1> {
        let d = self.derivative_fn(fd).ok_or_else(|| Error::MissingDerivative("group field".into()))?;
        let g = self.value.clone();
        Ok(Form1::new(move |p, v| d(p, v) * inverse(&g(p)).expect("invertible")))
    }
}

#[derive(Clone, Debug)]
pub struct LocalConnection {
    pub a: Form1,
    pub b: Form2,
    pub chart: usize,
}

impl LocalConnection {
    pub fn new(a: Form1, b: Form2, chart: usize) -> Self {
        LocalConnection { a, b, chart }
    }

    pub fn zero(cm: &dyn CrossedModule) -> Self {
        LocalConnection { a: Form1::zero(cm.dim_g()), b: Form2::zero(cm.dim_h()), chart: 0 }
    }

    /// The fake-flat connection `(A, α⁻¹(Ω^A))` for modules with `α = id`.
    pub fn fake_flat_from(a: Form1, chart: usize) -> Result<Self> {
        let b = curvature1(&a, None)?;
        Ok(LocalConnection { a, b, chart })
    }
}

/// A 2-gauge transformation `(g, φ)` from `(A, B)` to `(A', B')`.
#[derive(Clone, Debug)]
pub struct GaugeTransformation {
    pub g: GroupField,
    pub phi: Form1,
}

impl GaugeTransformation {
    pub fn new(g: GroupField, phi: Form1) -> Self {
        GaugeTransformation { g, phi }
    }

    pub fn identity(cm: &dyn CrossedModule) -> Self {
        GaugeTransformation { g: GroupField::constant(cm.unit_g()), phi: Form1::zero(cm.dim_h()) }
    }

    /// `(g⁻¹, −g⁻¹ ▷ φ)`
    pub fn inverse(&self, cm: &Module) -> Self {
        let gi = self.g.inverse();
        let phi = act_form1(&gi, &self.phi, cm).scale(c(-1.0));
        GaugeTransformation { g: gi, phi }
    }

    /// First `self`, then `next`: `(g g', φ + g ▷ φ')`.
    pub fn then(&self, next: &GaugeTransformation, cm: &Module) -> Self {
        let phi = self.phi.add(&act_form1(&self.g, &next.phi, cm));
        GaugeTransformation { g: self.g.product(&next.g), phi }
    }
}

/// `p ↦ g(p) ▷ φ_p` on an 𝔥-valued 1-form.
pub fn act_form1(g: &GroupField, phi: &Form1, cm: &Module) -> Form1 {
    let (gv, pv, cm) = (g.value.clone(), phi.value.clone(), cm.clone());
    Form1::new(move |p, v| cm.act_lie_h(&gv(p), &pv(p, v))).with_domain_arc(phi.domain.clone())
}

/// `p ↦ Ad_{g(p)}` on a 𝔤-valued 1-form.
pub fn adjoint_form1(g: &GroupField, a: &Form1) -> Form1 {
    let (gv, av) = (g.value.clone(), a.value.clone());
    Form1::new(move |p, v| {
        let gp = gv(p);
        &gp * av(p, v) * inverse(&gp).expect("invertible")
    })
    .with_domain_arc(a.domain.clone())
}

/// `(K ∧ M)(u, v) = K(u)M(v) − K(v)M(u)`
pub fn wedge(k: &Form1, m: &Form1) -> Form2 {
    let (kv, mv) = (k.value.clone(), m.value.clone());
    let mut out = Form2::new(move |p, u, v| kv(p, u) * mv(p, v) - kv(p, v) * mv(p, u));
    if let (Some(dk), Some(dm)) = (&k.derivative, &m.derivative) {
        let (kv, mv, dk, dm) = (k.value.clone(), m.value.clone(), dk.clone(), dm.clone());
        out = out.with_derivative(move |p, u, v, w| {
            let dk_m = dk(p, u, v) * mv(p, w) - dk(p, u, w) * mv(p, v) + dk(p, v, w) * mv(p, u);
            let k_dm = kv(p, u) * dm(p, v, w) - kv(p, v) * dm(p, u, w) + kv(p, w) * dm(p, u, v);
            dk_m - k_dm
        });
    }
    out
}

/// `(K ▷ Ψ)(u, v) = K(u)▷Ψ(v) − K(v)▷Ψ(u)` for an 𝔥-valued 1-form `Ψ`.
pub fn form_act(k: &Form1, psi: &Form1, cm: &Module) -> Form2 {
    let (kv, pv, cm1) = (k.value.clone(), psi.value.clone(), cm.clone());
    let mut out = Form2::new(move |p, u, v| cm1.act_lie(&kv(p, u), &pv(p, v)) - cm1.act_lie(&kv(p, v), &pv(p, u)));
    if let (Some(dk), Some(dp)) = (&k.derivative, &psi.derivative) {
        let (kv, pv, dk, dp, cm) = (k.value.clone(), psi.value.clone(), dk.clone(), dp.clone(), cm.clone());
        out = out.with_derivative(move |p, u, v, w| {
            let first = cm.act_lie(&dk(p, u, v), &pv(p, w)) - cm.act_lie(&dk(p, u, w), &pv(p, v)) + cm.act_lie(&dk(p, v, w), &pv(p, u));
            let second = cm.act_lie(&kv(p, u), &dp(p, v, w)) - cm.act_lie(&kv(p, v), &dp(p, u, w)) + cm.act_lie(&kv(p, w), &dp(p, u, v));
            first - second
        });
    }
    out
}

/// `(K ▷ B)(u, v, w)` for an 𝔥-valued 2-form `B`.
pub fn form_act_2(k: &Form1, b: &Form2, cm: &Module) -> Form3 {
    let (kv, bv, cm) = (k.value.clone(), b.value.clone(), cm.clone());
    Form3::new(move |p, u, v, w| {
        cm.act_lie(&kv(p, u), &bv(p, v, w)) - cm.act_lie(&kv(p, v), &bv(p, u, w)) + cm.act_lie(&kv(p, w), &bv(p, u, v))
    })
}

/// `(Θ ▷ φ)(u, v, w)` for a 𝔤-valued 2-form `Θ` and an 𝔥-valued 1-form `φ`.
fn form2_act_1(theta: &Form2, phi: &Form1, cm: &Module) -> Form3 {
    let (tv, pv, cm) = (theta.value.clone(), phi.value.clone(), cm.clone());
    Form3::new(move |p, u, v, w| {
        cm.act_lie(&tv(p, u, v), &pv(p, w)) - cm.act_lie(&tv(p, u, w), &pv(p, v)) + cm.act_lie(&tv(p, v, w), &pv(p, u))
    })
}

/// `Ω^A = dA + A ∧ A`
pub fn curvature1(a: &Form1, fd: Option<f64>) -> Result<Form2> {
    let da = a.exterior_derivative(fd)?;
    let aa = wedge(a, a);
    let omega = Form2::new({
        let (da, aa) = (da.value.clone(), aa.value.clone());
        move |p, u, v| da(p, u, v) + aa(p, u, v)
    });
    if a.has_derivative() {
        // d(dA) = 0, so dΩ = d(A∧A) as propagated by `wedge`.
        if let Some(daa) = aa.derivative {
            return Ok(omega.with_derivative(move |p, u, v, w| daa(p, u, v, w)));
        }
    }
    Ok(omega)
}

/// `Ω₂ = dB + A ▷ B`
pub fn curvature2(conn: &LocalConnection, cm: &Module, fd: Option<f64>) -> Result<Form3> {
    let db = conn.b.exterior_derivative(fd)?;
    let ab = form_act_2(&conn.a, &conn.b, cm);
    Ok(Form3::new(move |p, u, v, w| db.eval(p, u, v, w) + ab.eval(p, u, v, w)))
}

/// `Ω^A − α(B)` as a 2-form.
pub fn fake_curvature(conn: &LocalConnection, cm: &Module, fd: Option<f64>) -> Result<Form2> {
    let omega = curvature1(&conn.a, fd)?;
    let cm1 = cm.clone();
    let ab = conn.b.map_linear(move |y| cm1.alpha_lie(y));
    Ok(omega.sub(&ab))
}

/// Max of `‖Ω^A − α(B)‖` over coordinate planes at the given points.
pub fn fake_flatness_residual(conn: &LocalConnection, cm: &Module, points: &[Vec<f64>], fd: Option<f64>) -> Result<f64> {
    let fake = fake_curvature(conn, cm, fd)?;
    let mut worst: f64 = 0.0;
    for p in points {
        let d = p.len();
        for i in 0..d {
            for j in i + 1..d {
                worst = worst.max(norm(&fake.eval(p, &basis(d, i), &basis(d, j))));
            }
        }
    }
    Ok(worst)
}

/// Solves the gauge law for `(A', B')`:
/// `A' = Ad_{g⁻¹}(A − α(φ) + dg·g⁻¹)`, `B' = g⁻¹ ▷ (B − dφ − A▷φ + φ∧φ)`.
pub fn apply_gauge(conn: &LocalConnection, gt: &GaugeTransformation, cm: &Module, fd: Option<f64>) -> Result<LocalConnection> {
    let dg = gt.g.derivative_fn(fd).ok_or_else(|| Error::MissingDerivative("gauge g".into()))?;
    let dphi = gt.phi.exterior_derivative(fd)?;
    let (g, av, phi) = (gt.g.value.clone(), conn.a.value.clone(), gt.phi.value.clone());
    let cm1 = cm.clone();
    let a_new = Form1::new(move |p, v| {
        let gp = g(p);
        let gi = inverse(&gp).expect("invertible");
        &gi * (av(p, v) - cm1.alpha_lie(&phi(p, v)) + dg(p, v) * &gi) * &gp
    })
    .with_domain_arc(conn.a.domain.clone());

    let a_phi = form_act(&conn.a, &gt.phi, cm);
    let (g, bv, phi, cm2) = (gt.g.value.clone(), conn.b.value.clone(), gt.phi.value.clone(), cm.clone());
    let b_new = Form2::new(move |p, u, v| {
        let inner = bv(p, u, v) - dphi.eval(p, u, v) - a_phi.eval(p, u, v) + bracket(&phi(p, u), &phi(p, v));
        let gi = inverse(&g(p)).expect("invertible");
        cm2.act_lie_h(&gi, &inner)
    });
    Ok(LocalConnection { a: a_new, b: b_new, chart: conn.chart })
}

/// Residuals of both curvature transformation laws at the given points, over coordinate
/// planes and coordinate triples.
pub fn curvature_covariance_residual(
    conn: &LocalConnection,
    gt: &GaugeTransformation,
    cm: &Module,
    points: &[Vec<f64>],
    fd: Option<f64>,
) -> Result<crate::report::Residuals> {
    let gauged = apply_gauge(conn, gt, cm, fd)?;
    let fake = fake_curvature(conn, cm, fd)?;
    let fake_new = fake_curvature(&gauged, cm, fd)?;
    let omega2 = curvature2(conn, cm, fd)?;
    let omega2_new = curvature2(&gauged, cm, fd)?;
    let correction = form2_act_1(&fake_new, &gt.phi, cm);
    let finite = fd.is_some() && !(conn.a.has_derivative() && gt.g.has_derivative() && gt.phi.has_derivative());

    let mut out = crate::report::Residuals::default();
    let (mut first, mut second): (f64, f64) = (0.0, 0.0);
    for p in points {
        let d = p.len();
        let gp = gt.g.eval(p);
        let gi = inverse(&gp)?;
        for i in 0..d {
            for j in i + 1..d {
                let (u, v) = (basis(d, i), basis(d, j));
                let lhs = fake_new.eval(p, &u, &v);
                let rhs = &gi * fake.eval(p, &u, &v) * &gp;
                first = first.max(norm(&(lhs - rhs)));
                for k in j + 1..d {
                    let w = basis(d, k);
                    let lhs = omega2_new.eval(p, &u, &v, &w);
                    let rhs = cm.act_lie_h(&gi, &omega2.eval(p, &u, &v, &w)) + correction.eval(p, &u, &v, &w);
                    second = second.max(norm(&(lhs - rhs)));
                }
            }
        }
    }
    out.push("fake curvature covariance", "Omega^A' - alpha(B') = g^-1|>(Omega^A - alpha(B))", first, finite);
    out.push("2-curvature covariance", "Omega_2' = g^-1|>Omega_2 + [Omega^A' - alpha(B')]|>phi", second, true);
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::tests_support::{smooth_a, smooth_gauge};
    use super::*;
    use crate::algebra::{AbelianGerbe, Inner};
    use crate::numerics::{distance, identity, real, scalar, zeros};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn n() -> Mat {
        real(&[&[0.0, 1.0], &[0.0, 0.0]])
    }
    fn n2() -> Mat {
        real(&[&[0.0, 0.0], &[1.0, 0.0]])
    }

    fn sample_points(seed: u64, count: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn wedge_examples() {
        let k = Form1::from_components(|_| vec![scalar(c(2.0)), scalar(c(-1.0))]);
        let kk = wedge(&k, &k);
        assert_eq!(norm(&kk.eval(&[0.0, 0.0], &[1.0, 0.3], &[0.2, 1.0])), 0.0);

        let (a, b) = (n(), n2());
        let k = Form1::from_components(move |_| vec![a.clone(), zeros(2)]);
        let m = Form1::from_components(move |_| vec![zeros(2), b.clone()]);
        let km = wedge(&k, &m).eval(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]);
        assert!(distance(&km, &real(&[&[1.0, 0.0], &[0.0, 0.0]])) < 1e-15);

        let cm: Module = Arc::new(crate::algebra::AbPair);
        let k = Form1::from_components(|p: &[f64]| vec![scalar(c(p[0])), scalar(c(1.0))]);
        let psi = Form1::from_components(|p: &[f64]| vec![scalar(c(1.0)), scalar(c(p[1]))]);
        assert_eq!(norm(&form_act(&k, &psi, &cm).eval(&[0.5, 0.5], &[1.0, 0.0], &[0.0, 1.0])), 0.0);
    }

    #[test]
    fn curvature1_examples() {
        let zero = curvature1(&Form1::zero(2), None).unwrap();
        assert_eq!(norm(&zero.eval(&[0.1, 0.2], &[1.0, 0.0], &[0.0, 1.0])), 0.0);

        let cst = 0.7;
        let a = Form1::from_components(move |p: &[f64]| vec![zeros(1), scalar(c(cst * p[0]))]);
        let omega = curvature1(&a, Some(1e-4)).unwrap();
        let v = omega.eval(&[0.3, -0.2], &[1.0, 0.0], &[0.0, 1.0]);
        assert!((v[(0, 0)].re - cst).abs() < 1e-9);

        let nn = n();
        let a = Form1::from_components(move |_| vec![nn.clone(), zeros(2)]).with_derivative(|_, _, _| zeros(2));
        let omega = curvature1(&a, None).unwrap();
        assert_eq!(norm(&omega.eval(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0])), 0.0);

        let err = curvature1(&a.without_derivative(), None).unwrap_err();
        assert!(matches!(err, Error::MissingDerivative(_)));
    }

    #[test]
    fn analytic_and_fd_curvature_agree() {
        let a = smooth_a();
        let analytic = curvature1(&a, None).unwrap();
        let fd = curvature1(&a.clone().without_derivative(), Some(1e-4)).unwrap();
        for p in sample_points(4, 10) {
            let (u, v) = ([0.3, -1.0, 0.5], [1.0, 0.2, -0.4]);
            assert!(distance(&analytic.eval(&p, &u, &v), &fd.eval(&p, &u, &v)) < 1e-7);
        }
    }

    #[test]
    fn linearity_and_antisymmetry() {
        let a = smooth_a();
        let b = curvature1(&a, None).unwrap();
        for p in sample_points(9, 10) {
            let (u, v) = ([0.3, -1.0, 0.5], [1.0, 0.2, -0.4]);
            let scaled: Vec<f64> = u.iter().map(|x| 2.5 * x).collect();
            assert!(distance(&a.eval(&p, &scaled), &(a.eval(&p, &u) * c(2.5))) < 1e-10);
            assert!(distance(&b.eval(&p, &u, &v), &(-b.eval(&p, &v, &u))) < 1e-10);
        }
    }

    #[test]
    fn fake_flatness_examples() {
        let cm: Module = Arc::new(Inner::general(2));
        let pts = sample_points(1, 8);
        assert_eq!(fake_flatness_residual(&LocalConnection::zero(cm.as_ref()), &cm, &pts, None).unwrap(), 0.0);
        let conn = LocalConnection::fake_flat_from(smooth_a(), 0).unwrap();
        assert!(fake_flatness_residual(&conn, &cm, &pts, None).unwrap() < 1e-14);

        let bump = real(&[&[0.0, 1e-3], &[0.0, 0.0]]);
        let bump2 = bump.clone();
        let perturbed = LocalConnection::new(
            conn.a.clone(),
            conn.b.add(&Form2::from_components(move |_| {
                vec![vec![zeros(2), bump2.clone(), zeros(2)], vec![-&bump2, zeros(2), zeros(2)], vec![zeros(2); 3]]
            })),
            0,
        );
        let r = fake_flatness_residual(&perturbed, &cm, &pts, None).unwrap();
        assert!((r - norm(&bump)).abs() < 1e-12);
    }

    #[test]
    fn curvature2_examples() {
        let cm: Module = Arc::new(AbelianGerbe);
        let z = curvature2(&LocalConnection::zero(cm.as_ref()), &cm, None).unwrap();
        assert_eq!(norm(&z.eval(&[0.0; 3], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0])), 0.0);

        let f = |p: &[f64]| p[0] * p[2] * p[2] + p[1].sin();
        let b = Form2::from_components(move |p| {
            let v = Mat::from_element(1, 1, Complex64::new(0.0, f(p)));
            vec![vec![zeros(1), v.clone(), zeros(1)], vec![-v, zeros(1), zeros(1)], vec![zeros(1); 3]]
        });
        let conn = LocalConnection::new(Form1::zero(1), b, 0);
        let omega2 = curvature2(&conn, &cm, Some(1e-4)).unwrap();
        let p = [0.4, -0.3, 0.8];
        let got = omega2.eval(&p, &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        let expected = 2.0 * p[0] * p[2];
        assert!((got[(0, 0)].im - expected).abs() < 1e-8);

        let flat_b = Form2::from_components(|_| {
            vec![vec![zeros(1), scalar(Complex64::new(0.0, 1.0))], vec![scalar(Complex64::new(0.0, -1.0)), zeros(1)]]
        });
        let conn = LocalConnection::new(Form1::zero(1), flat_b, 0);
        let fake = fake_flatness_residual(&conn, &cm, &[vec![0.2, 0.1]], None).unwrap();
        assert_eq!(fake, 0.0);
    }

    #[test]
    fn identity_gauge_leaves_connection() {
        let cm: Module = Arc::new(Inner::general(2));
        let conn = LocalConnection::fake_flat_from(smooth_a(), 0).unwrap();
        let same = apply_gauge(&conn, &GaugeTransformation::identity(cm.as_ref()), &cm, None).unwrap();
        for p in sample_points(2, 5) {
            let (u, v) = ([1.0, 0.0, 0.5], [0.0, 1.0, -0.2]);
            assert!(distance(&same.a.eval(&p, &u), &conn.a.eval(&p, &u)) < 1e-14);
            assert!(distance(&same.b.eval(&p, &u, &v), &conn.b.eval(&p, &u, &v)) < 1e-13);
        }
    }

    #[test]
    fn abelian_gauge_shifts_b() {
        let cm: Module = Arc::new(AbelianGerbe);
        let b = Form2::from_components(|p: &[f64]| {
            let v = scalar(Complex64::new(0.0, p[0]));
            vec![vec![zeros(1), v.clone()], vec![-v, zeros(1)]]
        });
        let conn = LocalConnection::new(Form1::zero(1), b, 0);
        let phi = Form1::from_components(|p: &[f64]| vec![scalar(Complex64::new(0.0, p[1] * p[1])), zeros(1)])
            .with_component_jacobian(|p| vec![vec![zeros(1), zeros(1)], vec![scalar(Complex64::new(0.0, 2.0 * p[1])), zeros(1)]]);
        let gt = GaugeTransformation::new(GroupField::constant(identity(1)), phi);
        let out = apply_gauge(&conn, &gt, &cm, None).unwrap();
        let p = [0.3, 0.7];
        let bprime = out.b.eval(&p, &[1.0, 0.0], &[0.0, 1.0]);
        // dφ(∂x, ∂y) = −∂_y φ_x = −2iy, so B' = B − dφ = i(x + 2y).
        assert!((bprime[(0, 0)] - Complex64::new(0.0, p[0] + 2.0 * p[1])).norm() < 1e-14);
        assert_eq!(norm(&out.a.eval(&p, &[1.0, 1.0])), 0.0);
    }

    #[test]
    fn gauge_round_trip_restores_connection() {
        let cm: Module = Arc::new(Inner::general(2));
        let conn = LocalConnection::fake_flat_from(smooth_a(), 0).unwrap();
        let gt = smooth_gauge();
        let there = apply_gauge(&conn, &gt, &cm, None).unwrap();
        let back = apply_gauge(&there, &gt.inverse(&cm), &cm, Some(1e-4)).unwrap();
        for p in sample_points(3, 6) {
            let (u, v) = ([1.0, 0.2, 0.5], [0.1, 1.0, -0.2]);
            assert!(distance(&back.a.eval(&p, &u), &conn.a.eval(&p, &u)) < 1e-12);
            assert!(distance(&back.b.eval(&p, &u, &v), &conn.b.eval(&p, &u, &v)) < 1e-6);
        }
    }

    #[test]
    fn gauge_preserves_fake_flatness_and_covariance() {
        let cm: Module = Arc::new(Inner::general(2));
        let conn = LocalConnection::fake_flat_from(smooth_a(), 0).unwrap();
        let gt = smooth_gauge();
        let pts = sample_points(7, 6);
        let gauged = apply_gauge(&conn, &gt, &cm, None).unwrap();
        assert!(fake_flatness_residual(&gauged, &cm, &pts, Some(1e-4)).unwrap() < 1e-6);
        let r = curvature_covariance_residual(&conn, &gt, &cm, &pts, Some(1e-4)).unwrap();
        assert!(r.get("fake curvature covariance").unwrap() < 1e-6, "{r:?}");
        assert!(r.get("2-curvature covariance").unwrap() < 1e-4, "{r:?}");
        let id = curvature_covariance_residual(&conn, &GaugeTransformation::identity(cm.as_ref()), &cm, &pts, Some(1e-4)).unwrap();
        assert!(id.get("fake curvature covariance").unwrap() < 1e-7);
    }

    #[test]
    fn missing_gauge_derivative_is_a_configuration_error() {
        let cm: Module = Arc::new(Inner::general(2));
        let conn = LocalConnection::fake_flat_from(smooth_a(), 0).unwrap();
        let gt = GaugeTransformation::new(GroupField::new(|_| identity(2)), Form1::zero(2));
        assert!(matches!(apply_gauge(&conn, &gt, &cm, None), Err(Error::MissingDerivative(_))));
        assert!(apply_gauge(&conn, &gt, &cm, Some(1e-4)).is_ok());
    }

    #[test]
    fn group_field_derivatives_match_differences() {
        let cm: Module = Arc::new(Inner::general(2));
        let gt = smooth_gauge();
        let h = GroupField::exp_scalar(n() + n2(), |p| p[0] - p[1] * p[2], |p| vec![1.0, -p[2], -p[1]]);
        let fields = [gt.g.clone(), gt.g.inverse(), GroupField::act(&gt.g, &h, &cm), h.alpha(&cm), gt.g.product(&h)];
        for f in &fields {
            let plain = GroupField::new({
                let f = f.clone();
                move |p| f.eval(p)
            });
            for p in sample_points(5, 4) {
                let v = [0.3, -0.7, 0.2];
                let a = f.derivative(&p, &v, None).unwrap();
                let b = plain.derivative(&p, &v, Some(1e-5)).unwrap();
                assert!(distance(&a, &b) < 1e-8);
            }
        }
    }
}
