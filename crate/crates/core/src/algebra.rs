//! Crossed modules of matrix groups, the wreath product `G ⋉ H` and the
//! strict 2-groupoid whose 2-arrows are pairs `(g, h)`.

use std::fmt::Debug;

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bracket, c, distance, expm, identity, inverse, norm, zeros, Mat};
use crate::report::Residuals;

/// A crossed module `(G, H, α, ▷)` of matrix Lie groups together with its differential.
///
/// `act_on_group(x, h)` returns `d/dt exp(tx) ▷ h` at `t = 0`, a tangent vector at `h`
/// written as a matrix.
pub trait CrossedModule: Send + Sync + Debug {
    fn name(&self) -> String;
    fn dim_g(&self) -> usize;
    fn dim_h(&self) -> usize;

    fn tolerance(&self) -> f64 {
        1e-9
    }

    /// Distance of `g` from `G`; zero on the group.
    fn g_residual(&self, g: &Mat) -> f64;
    fn h_residual(&self, h: &Mat) -> f64;

    fn alpha(&self, h: &Mat) -> Mat;
    fn alpha_lie(&self, y: &Mat) -> Mat;
    fn act(&self, g: &Mat, h: &Mat) -> Mat;
    fn act_lie_h(&self, g: &Mat, y: &Mat) -> Mat;
    fn act_on_group(&self, x: &Mat, h: &Mat) -> Mat;
    fn act_lie(&self, x: &Mat, y: &Mat) -> Mat;

    /// Class function for `h ~ g ▷ h`.
    fn invariant(&self, h: &Mat) -> Vec<Complex64>;

    /// Character of `H/[G,H]`: multiplicative componentwise and trivial on every `(g ▷ h)h⁻¹`.
    fn quotient_invariant(&self, h: &Mat) -> Vec<Complex64> {
        self.invariant(h)
    }

    /// Preimage under `α` when `α` is injective with a known inverse.
    fn alpha_inverse(&self, _g: &Mat) -> Option<Mat> {
        None
    }

    fn alpha_is_trivial(&self) -> bool {
        false
    }

    /// True when `G = H` and `α` is the identity map.
    fn alpha_is_identity(&self) -> bool {
        false
    }

    fn sample_g(&self, rng: &mut ChaCha8Rng) -> Mat;
    fn sample_h(&self, rng: &mut ChaCha8Rng) -> Mat;
    fn sample_lie_g(&self, rng: &mut ChaCha8Rng) -> Mat;
    fn sample_lie_h(&self, rng: &mut ChaCha8Rng) -> Mat;

    fn unit_g(&self) -> Mat {
        identity(self.dim_g())
    }

    fn unit_h(&self) -> Mat {
        identity(self.dim_h())
    }
}

pub fn check_g(cm: &dyn CrossedModule, g: &Mat, component: &str) -> Result<()> {
    let r = if g.nrows() == cm.dim_g() && g.ncols() == cm.dim_g() { cm.g_residual(g) } else { f64::INFINITY };
    if r > cm.tolerance().max(1e-6) {
        return Err(Error::Membership { component: component.into(), residual: r });
    }
    Ok(())
}

pub fn check_h(cm: &dyn CrossedModule, h: &Mat, component: &str) -> Result<()> {
    let r = if h.nrows() == cm.dim_h() && h.ncols() == cm.dim_h() { cm.h_residual(h) } else { f64::INFINITY };
    if r > cm.tolerance().max(1e-6) {
        return Err(Error::Membership { component: component.into(), residual: r });
    }
    Ok(())
}

fn random_real(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
    Mat::from_fn(n, n, |_, _| c(scale * rng.gen_range(-1.0..1.0)))
}

/// Coefficients `c₀ … c_{n−1}` of the monic characteristic polynomial.
pub fn char_poly(a: &Mat) -> Vec<Complex64> {
    let n = a.nrows();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n + 1];
    coeffs[n] = c(1.0);
    let mut m = zeros(n);
    for k in 1..=n {
        m = a * &m + identity(n) * coeffs[n - k + 1];
        coeffs[n - k] = -(a * &m).trace() / c(k as f64);
    }
    coeffs.truncate(n);
    coeffs
}

/// `G = H = {1}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Trivial;

impl CrossedModule for Trivial {
    fn name(&self) -> String {
        "trivial".into()
    }
    fn dim_g(&self) -> usize {
        1
    }
    fn dim_h(&self) -> usize {
        1
    }
    fn g_residual(&self, g: &Mat) -> f64 {
        distance(g, &identity(1))
    }
    fn h_residual(&self, h: &Mat) -> f64 {
        distance(h, &identity(1))
    }
    fn alpha(&self, _h: &Mat) -> Mat {
        identity(1)
    }
    fn alpha_lie(&self, _y: &Mat) -> Mat {
        zeros(1)
    }
    fn act(&self, _g: &Mat, h: &Mat) -> Mat {
        h.clone()
    }
    fn act_lie_h(&self, _g: &Mat, y: &Mat) -> Mat {
        y.clone()
    }
    fn act_on_group(&self, _x: &Mat, _h: &Mat) -> Mat {
        zeros(1)
    }
    fn act_lie(&self, _x: &Mat, _y: &Mat) -> Mat {
        zeros(1)
    }
    fn invariant(&self, h: &Mat) -> Vec<Complex64> {
        h.iter().copied().collect()
    }
    fn alpha_is_trivial(&self) -> bool {
        true
    }
    fn sample_g(&self, _rng: &mut ChaCha8Rng) -> Mat {
        identity(1)
    }
    fn sample_h(&self, _rng: &mut ChaCha8Rng) -> Mat {
        identity(1)
    }
    fn sample_lie_g(&self, _rng: &mut ChaCha8Rng) -> Mat {
        zeros(1)
    }
    fn sample_lie_h(&self, _rng: &mut ChaCha8Rng) -> Mat {
        zeros(1)
    }
}

/// `G = {1}`, `H = U(1)`: the crossed module of an abelian gerbe.
#[derive(Clone, Copy, Debug, Default)]
pub struct AbelianGerbe;

impl CrossedModule for AbelianGerbe {
    fn name(&self) -> String {
        "abelian-gerbe".into()
    }
    fn dim_g(&self) -> usize {
        1
    }
    fn dim_h(&self) -> usize {
        1
    }
    fn g_residual(&self, g: &Mat) -> f64 {
        distance(g, &identity(1))
    }
    fn h_residual(&self, h: &Mat) -> f64 {
        (h[(0, 0)].norm() - 1.0).abs()
    }
    fn alpha(&self, _h: &Mat) -> Mat {
        identity(1)
    }
    fn alpha_lie(&self, _y: &Mat) -> Mat {
        zeros(1)
    }
    fn act(&self, _g: &Mat, h: &Mat) -> Mat {
        h.clone()
    }
    fn act_lie_h(&self, _g: &Mat, y: &Mat) -> Mat {
        y.clone()
    }
    fn act_on_group(&self, _x: &Mat, _h: &Mat) -> Mat {
        zeros(1)
    }
    fn act_lie(&self, _x: &Mat, _y: &Mat) -> Mat {
        zeros(1)
    }
    fn invariant(&self, h: &Mat) -> Vec<Complex64> {
        h.iter().copied().collect()
    }
    fn alpha_is_trivial(&self) -> bool {
        true
    }
    fn sample_g(&self, _rng: &mut ChaCha8Rng) -> Mat {
        identity(1)
    }
    fn sample_h(&self, rng: &mut ChaCha8Rng) -> Mat {
        let theta: f64 = rng.gen_range(-3.0..3.0);
        Mat::from_element(1, 1, Complex64::from_polar(1.0, theta))
    }
    fn sample_lie_g(&self, _rng: &mut ChaCha8Rng) -> Mat {
        zeros(1)
    }
    fn sample_lie_h(&self, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_element(1, 1, Complex64::new(0.0, rng.gen_range(-2.0..2.0)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InnerGroup {
    /// Real invertible matrices.
    General,
    /// Special orthogonal matrices.
    Orthogonal,
}

/// `G = H`, `α = id`, `g ▷ h = g h g⁻¹`.
#[derive(Clone, Copy, Debug)]
pub struct Inner {
    pub n: usize,
    pub group: InnerGroup,
}

impl Inner {
    pub fn general(n: usize) -> Self {
        Inner { n, group: InnerGroup::General }
    }

    pub fn orthogonal(n: usize) -> Self {
        Inner { n, group: InnerGroup::Orthogonal }
    }

    fn residual(&self, m: &Mat) -> f64 {
        if m.nrows() != self.n || m.ncols() != self.n {
            return f64::INFINITY;
        }
        let imag: f64 = m.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
        match self.group {
            InnerGroup::General => {
                let det = m.determinant().norm();
                imag + if det < 1e-12 { 1.0 } else { 0.0 }
            }
            InnerGroup::Orthogonal => imag + distance(&(m.transpose() * m), &identity(self.n)) + (m.determinant() - c(1.0)).norm(),
        }
    }

    fn sample_lie(&self, rng: &mut ChaCha8Rng, scale: f64) -> Mat {
        let m = random_real(rng, self.n, scale);
        match self.group {
            InnerGroup::General => m,
            InnerGroup::Orthogonal => (&m - m.transpose()) * c(0.5),
        }
    }
}

impl CrossedModule for Inner {
    fn name(&self) -> String {
        match self.group {
            InnerGroup::General => format!("inner-gl{}", self.n),
            InnerGroup::Orthogonal => format!("inner-so{}", self.n),
        }
    }
    fn dim_g(&self) -> usize {
        self.n
    }
    fn dim_h(&self) -> usize {
        self.n
    }
    fn g_residual(&self, g: &Mat) -> f64 {
        self.residual(g)
    }
    fn h_residual(&self, h: &Mat) -> f64 {
        self.residual(h)
    }
    fn alpha(&self, h: &Mat) -> Mat {
        h.clone()
    }
    fn alpha_lie(&self, y: &Mat) -> Mat {
        y.clone()
    }
    fn act(&self, g: &Mat, h: &Mat) -> Mat {
        g * h * inverse(g).expect("group element is invertible")
    }
    fn act_lie_h(&self, g: &Mat, y: &Mat) -> Mat {
        g * y * inverse(g).expect("group element is invertible")
    }
    fn act_on_group(&self, x: &Mat, h: &Mat) -> Mat {
        x * h - h * x
    }
    fn act_lie(&self, x: &Mat, y: &Mat) -> Mat {
        bracket(x, y)
    }
    fn invariant(&self, h: &Mat) -> Vec<Complex64> {
        char_poly(h)
    }
    fn quotient_invariant(&self, h: &Mat) -> Vec<Complex64> {
        vec![h.determinant()]
    }
    fn alpha_inverse(&self, g: &Mat) -> Option<Mat> {
        Some(g.clone())
    }
    fn alpha_is_identity(&self) -> bool {
        true
    }
    fn sample_g(&self, rng: &mut ChaCha8Rng) -> Mat {
        expm(&self.sample_lie(rng, 0.6))
    }
    fn sample_h(&self, rng: &mut ChaCha8Rng) -> Mat {
        expm(&self.sample_lie(rng, 0.6))
    }
    fn sample_lie_g(&self, rng: &mut ChaCha8Rng) -> Mat {
        self.sample_lie(rng, 1.0)
    }
    fn sample_lie_h(&self, rng: &mut ChaCha8Rng) -> Mat {
        self.sample_lie(rng, 1.0)
    }
}

/// `G = H = ℝ_{>0}`, `α = id`, trivial action.
#[derive(Clone, Copy, Debug, Default)]
pub struct AbPair;

impl AbPair {
    fn residual(m: &Mat) -> f64 {
        if m.nrows() != 1 {
            return f64::INFINITY;
        }
        let z = m[(0, 0)];
        z.im.abs() + if z.re > 0.0 { 0.0 } else { 1.0 - z.re }
    }
}

impl CrossedModule for AbPair {
    fn name(&self) -> String {
        "ab-pair".into()
    }
    fn dim_g(&self) -> usize {
        1
    }
    fn dim_h(&self) -> usize {
        1
    }
    fn g_residual(&self, g: &Mat) -> f64 {
        Self::residual(g)
    }
    fn h_residual(&self, h: &Mat) -> f64 {
        Self::residual(h)
    }
    fn alpha(&self, h: &Mat) -> Mat {
        h.clone()
    }
    fn alpha_lie(&self, y: &Mat) -> Mat {
        y.clone()
    }
    fn act(&self, _g: &Mat, h: &Mat) -> Mat {
        h.clone()
    }
    fn act_lie_h(&self, _g: &Mat, y: &Mat) -> Mat {
        y.clone()
    }
    fn act_on_group(&self, _x: &Mat, _h: &Mat) -> Mat {
        zeros(1)
    }
    fn act_lie(&self, _x: &Mat, _y: &Mat) -> Mat {
        zeros(1)
    }
    fn invariant(&self, h: &Mat) -> Vec<Complex64> {
        h.iter().copied().collect()
    }
    fn alpha_inverse(&self, g: &Mat) -> Option<Mat> {
        Some(g.clone())
    }
    fn alpha_is_identity(&self) -> bool {
        true
    }
    fn sample_g(&self, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_element(1, 1, c(rng.gen_range(-1.0f64..1.0).exp()))
    }
    fn sample_h(&self, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_element(1, 1, c(rng.gen_range(-1.0f64..1.0).exp()))
    }
    fn sample_lie_g(&self, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_element(1, 1, c(rng.gen_range(-1.0..1.0)))
    }
    fn sample_lie_h(&self, rng: &mut ChaCha8Rng) -> Mat {
        Mat::from_element(1, 1, c(rng.gen_range(-1.0..1.0)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WreathElement {
    pub g: Mat,
    pub h: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WreathAlgebraElement {
    pub x: Mat,
    pub y: Mat,
}

/// A 2-arrow `(g, h) : g ⇒ α(h⁻¹)·g`.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoArrow {
    pub source: Mat,
    pub h: Mat,
}

impl WreathElement {
    pub fn new(g: Mat, h: Mat) -> Self {
        WreathElement { g, h }
    }

    pub fn identity(cm: &dyn CrossedModule) -> Self {
        WreathElement { g: cm.unit_g(), h: cm.unit_h() }
    }
}

impl WreathAlgebraElement {
    pub fn new(x: Mat, y: Mat) -> Self {
        WreathAlgebraElement { x, y }
    }
}

impl TwoArrow {
    pub fn new(source: Mat, h: Mat) -> Self {
        TwoArrow { source, h }
    }

    /// Identity 2-arrow `1_g`.
    pub fn unit(g: Mat, cm: &dyn CrossedModule) -> Self {
        TwoArrow { source: g, h: cm.unit_h() }
    }

    pub fn target(&self, cm: &dyn CrossedModule) -> Mat {
        cm.alpha(&inverse(&self.h).expect("H element is invertible")) * &self.source
    }

    /// Vertical inverse `target ⇒ source`.
    pub fn vertical_inverse(&self, cm: &dyn CrossedModule) -> Self {
        TwoArrow { source: self.target(cm), h: inverse(&self.h).expect("H element is invertible") }
    }
}

impl From<TwoArrow> for WreathElement {
    fn from(a: TwoArrow) -> Self {
        WreathElement { g: a.source, h: a.h }
    }
}

impl From<WreathElement> for TwoArrow {
    fn from(w: WreathElement) -> Self {
        TwoArrow { source: w.g, h: w.h }
    }
}

fn check_pair(cm: &dyn CrossedModule, a: &WreathElement, label: &str) -> Result<()> {
    check_g(cm, &a.g, &format!("{label}.g"))?;
    check_h(cm, &a.h, &format!("{label}.h"))
}

/// `(g₁,h₁)·(g₂,h₂) = (g₁g₂, (g₁▷h₂)·h₁)`
pub fn wreath_mul(a: &WreathElement, b: &WreathElement, cm: &dyn CrossedModule) -> Result<WreathElement> {
    check_pair(cm, a, "left")?;
    check_pair(cm, b, "right")?;
    Ok(wreath_mul_unchecked(a, b, cm))
}

pub(crate) fn wreath_mul_unchecked(a: &WreathElement, b: &WreathElement, cm: &dyn CrossedModule) -> WreathElement {
    WreathElement { g: &a.g * &b.g, h: cm.act(&a.g, &b.h) * &a.h }
}

/// `(g,h)⁻¹ = (g⁻¹, g⁻¹ ▷ h⁻¹)`
pub fn wreath_inv(a: &WreathElement, cm: &dyn CrossedModule) -> Result<WreathElement> {
    check_pair(cm, a, "element")?;
    let gi = inverse(&a.g)?;
    let hi = inverse(&a.h)?;
    Ok(WreathElement { h: cm.act(&gi, &hi), g: gi })
}

/// Adjoint action of `G ⋉ H` on its Lie algebra.
pub fn wreath_ad(a: &WreathElement, v: &WreathAlgebraElement, cm: &dyn CrossedModule) -> Result<WreathAlgebraElement> {
    check_pair(cm, a, "element")?;
    let gi = inverse(&a.g)?;
    let hi = inverse(&a.h)?;
    let adx = &a.g * &v.x * &gi;
    let y = cm.act_on_group(&adx, &hi) * &a.h + &hi * cm.act_lie_h(&a.g, &v.y) * &a.h;
    Ok(WreathAlgebraElement { x: adx, y })
}

fn composable_tolerance(cm: &dyn CrossedModule, g: &Mat) -> f64 {
    cm.tolerance().max(1e-9) * (1.0 + norm(g))
}

/// `(g,h) #₁ (g',h') = (g, h h')`, requiring `g' = α(h⁻¹) g`.
pub fn vcompose(a: &TwoArrow, b: &TwoArrow, cm: &dyn CrossedModule) -> Result<TwoArrow> {
    let mismatch = distance(&a.target(cm), &b.source);
    if mismatch > composable_tolerance(cm, &b.source) {
        return Err(Error::Composability { context: "vertical composition".into(), mismatch });
    }
    Ok(TwoArrow { source: a.source.clone(), h: &a.h * &b.h })
}

/// `(g,h) #₀ (g',h') = (g g', (g ▷ h')·h)`
pub fn hcompose(a: &TwoArrow, b: &TwoArrow, cm: &dyn CrossedModule) -> TwoArrow {
    TwoArrow { source: &a.source * &b.source, h: cm.act(&a.source, &b.h) * &a.h }
}

/// `g #₀ (g',h') = (g g', g ▷ h')`
pub fn whisker_left(g: &Mat, b: &TwoArrow, cm: &dyn CrossedModule) -> TwoArrow {
    TwoArrow { source: g * &b.source, h: cm.act(g, &b.h) }
}

/// `(g',h') #₀ g = (g' g, h')`
pub fn whisker_right(a: &TwoArrow, g: &Mat) -> TwoArrow {
    TwoArrow { source: &a.source * g, h: a.h.clone() }
}

/// Fourth-order central difference of a matrix curve at 0.
pub(crate) fn derivative_at_zero(f: impl Fn(f64) -> Mat, eps: f64) -> Mat {
    (f(-2.0 * eps) - f(2.0 * eps) + (f(eps) - f(-eps)) * c(8.0)) * c(1.0 / (12.0 * eps))
}

/// Worst-case residuals of the crossed-module and 2-groupoid laws over random samples.
pub fn axioms_report(cm: &dyn CrossedModule, samples: usize, seed: u64) -> Residuals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = Residuals::default();
    let eps = 1e-3;
    for _ in 0..samples {
        let (g, g2) = (cm.sample_g(&mut rng), cm.sample_g(&mut rng));
        let (h, h2, h3) = (cm.sample_h(&mut rng), cm.sample_h(&mut rng), cm.sample_h(&mut rng));
        let (x, y, y2) = (cm.sample_lie_g(&mut rng), cm.sample_lie_h(&mut rng), cm.sample_lie_h(&mut rng));
        let gi = inverse(&g).expect("invertible");
        let alpha_h = cm.alpha(&h);

        r.record("alpha equivariance", "alpha(g|>h) = g alpha(h) g^-1", distance(&cm.alpha(&cm.act(&g, &h)), &(&g * &alpha_h * &gi)));
        r.record(
            "peiffer identity",
            "alpha(f)|>h = f h f^-1",
            distance(&cm.act(&cm.alpha(&h2), &h), &(&h2 * &h * inverse(&h2).expect("invertible"))),
        );
        r.record("alpha homomorphism", "alpha(hh') = alpha(h)alpha(h')", distance(&cm.alpha(&(&h * &h2)), &(&alpha_h * cm.alpha(&h2))));
        r.record("action composition", "(gg')|>h = g|>(g'|>h)", distance(&cm.act(&(&g * &g2), &h), &cm.act(&g, &cm.act(&g2, &h))));
        r.record(
            "action by automorphisms",
            "g|>(hh') = (g|>h)(g|>h')",
            distance(&cm.act(&g, &(&h * &h2)), &(cm.act(&g, &h) * cm.act(&g, &h2))),
        );
        r.record("unit action", "1|>h = h", distance(&cm.act(&cm.unit_g(), &h), &h));
        r.record(
            "differential equivariance",
            "alpha(x|>u) = [x, alpha(u)]",
            distance(&cm.alpha_lie(&cm.act_lie(&x, &y)), &bracket(&x, &cm.alpha_lie(&y))),
        );
        r.record("differential peiffer", "alpha(v)|>u = [v, u]", distance(&cm.act_lie(&cm.alpha_lie(&y2), &y), &bracket(&y2, &y)));
        r.record("unit infinitesimal action", "x|>1 = 0", norm(&cm.act_on_group(&x, &cm.unit_h())));
        let inv = cm.invariant(&h);
        let inv_conj = cm.invariant(&cm.act(&g, &h));
        let class_gap = inv.iter().zip(&inv_conj).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        r.record("class function", "inv(h) = inv(g|>h)", class_gap);
        let q = |m: &Mat| cm.quotient_invariant(m);
        let gap = |a: Vec<Complex64>, b: Vec<Complex64>| a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let commutator = cm.act(&g, &h) * inverse(&h).expect("group element is invertible");
        r.record("quotient kills [G,H]", "q((g|>h)h^-1) = q(1)", gap(q(&commutator), q(&cm.unit_h())));
        let product: Vec<Complex64> = q(&h).iter().zip(q(&h2)).map(|(a, b)| a * b).collect();
        r.record("quotient is multiplicative", "q(hh') = q(h)q(h')", gap(q(&(&h * &h2)), product));

        let d_alpha = derivative_at_zero(|e| cm.alpha(&expm(&(&y * c(e)))), eps);
        r.record_fd("alpha differential", "d/de alpha(exp(eY)) = alpha_*(Y)", distance(&d_alpha, &cm.alpha_lie(&y)));
        let d_act_h = derivative_at_zero(|e| cm.act(&g, &expm(&(&y * c(e)))), eps);
        r.record_fd("action on algebra", "d/de g|>exp(eY) = g|>Y", distance(&d_act_h, &cm.act_lie_h(&g, &y)));
        let d_act_g = derivative_at_zero(|e| cm.act(&expm(&(&x * c(e))), &h), eps);
        r.record_fd("infinitesimal action", "d/de exp(eX)|>h = X|>h", distance(&d_act_g, &cm.act_on_group(&x, &h)));
        let d_act_lie = derivative_at_zero(|e| cm.act_lie_h(&expm(&(&x * c(e))), &y), eps);
        r.record_fd("infinitesimal action on algebra", "d/de exp(eX)|>Y = X|>Y", distance(&d_act_lie, &cm.act_lie(&x, &y)));

        let (a, b, w) = (
            WreathElement::new(g.clone(), h.clone()),
            WreathElement::new(g2.clone(), h2.clone()),
            WreathElement::new(cm.sample_g(&mut rng), h3.clone()),
        );
        let ab_c = wreath_mul_unchecked(&wreath_mul_unchecked(&a, &b, cm), &w, cm);
        let a_bc = wreath_mul_unchecked(&a, &wreath_mul_unchecked(&b, &w, cm), cm);
        r.record("wreath associativity", "(ab)c = a(bc)", distance(&ab_c.g, &a_bc.g) + distance(&ab_c.h, &a_bc.h));
        let ai = wreath_inv(&a, cm).expect("sampled elements are members");
        let one = wreath_mul_unchecked(&a, &ai, cm);
        let one_left = wreath_mul_unchecked(&ai, &a, cm);
        r.record(
            "wreath inverse",
            "(g,h)(g^-1, g^-1|>h^-1) = 1",
            distance(&one.g, &cm.unit_g())
                + distance(&one.h, &cm.unit_h())
                + distance(&one_left.g, &cm.unit_g())
                + distance(&one_left.h, &cm.unit_h()),
        );

        let v = WreathAlgebraElement::new(x.clone(), y.clone());
        let ad = wreath_ad(&a, &v, cm).expect("sampled elements are members");
        let conj = |e: f64| {
            let curve = WreathElement::new(expm(&(&x * c(e))), expm(&(&y * c(e))));
            wreath_mul_unchecked(&wreath_mul_unchecked(&a, &curve, cm), &ai, cm)
        };
        let dg = derivative_at_zero(|e| conj(e).g, eps);
        let dh = derivative_at_zero(|e| conj(e).h, eps);
        r.record_fd("wreath adjoint", "Ad_(g,h)(X,Y) by differentiation", distance(&dg, &ad.x) + distance(&dh, &ad.y));

        // Two-arrow laws.
        let p1 = TwoArrow::new(g.clone(), h.clone());
        let p2 = TwoArrow::new(p1.target(cm), h2.clone());
        let q1 = TwoArrow::new(g2.clone(), h3.clone());
        let q2 = TwoArrow::new(q1.target(cm), cm.sample_h(&mut rng));
        let vert = |a: &TwoArrow, b: &TwoArrow| TwoArrow::new(a.source.clone(), &a.h * &b.h);
        let lhs = hcompose(&vert(&p1, &p2), &vert(&q1, &q2), cm);
        let rhs = vert(&hcompose(&p1, &q1, cm), &hcompose(&p2, &q2, cm));
        r.record("interchange law", "(p#1p')#0(q#1q') = (p#0q)#1(p'#0q')", distance(&lhs.source, &rhs.source) + distance(&lhs.h, &rhs.h));
        let hc = hcompose(&p1, &q1, cm);
        let alt = &h * cm.act(&p1.target(cm), &h3);
        r.record("horizontal composition forms", "g|>h'.h = h.[alpha(h^-1)g]|>h'", distance(&hc.h, &alt));
        r.record("target of horizontal composite", "t(a#0b) = t(a)t(b)", distance(&hc.target(cm), &(p1.target(cm) * q1.target(cm))));
        let p3 = TwoArrow::new(p2.target(cm), h3.clone());
        let v12_3 = vert(&vert(&p1, &p2), &p3);
        let v1_23 = vert(&p1, &vert(&p2, &p3));
        let h12_3 = hcompose(&hcompose(&p1, &q1, cm), &p3, cm);
        let h1_23 = hcompose(&p1, &hcompose(&q1, &p3, cm), cm);
        r.record(
            "composition associativity",
            "(a#b)#c = a#(b#c)",
            distance(&v12_3.h, &v1_23.h) + distance(&h12_3.source, &h1_23.source) + distance(&h12_3.h, &h1_23.h),
        );
        let wl = whisker_left(&g2, &p1, cm);
        let wl_h = hcompose(&TwoArrow::unit(g2.clone(), cm), &p1, cm);
        let wr = whisker_right(&p1, &g2);
        let wr_h = hcompose(&p1, &TwoArrow::unit(g2.clone(), cm), cm);
        r.record(
            "whiskering",
            "g#0a = 1_g#0a, a#0g = a#01_g",
            distance(&wl.h, &wl_h.h) + distance(&wl.source, &wl_h.source) + distance(&wr.h, &wr_h.h) + distance(&wr.source, &wr_h.source),
        );
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::real;
    use proptest::prelude::*;

    #[test]
    fn wreath_mul_examples() {
        let cm = Inner::general(2);
        let one = WreathElement::identity(&cm);
        let g = real(&[&[1.0, 1.0], &[0.0, 1.0]]);
        let h = real(&[&[2.0, 0.5], &[0.0, 1.0]]);
        let a = WreathElement::new(g.clone(), h.clone());
        assert_eq!(wreath_mul(&one, &a, &cm).unwrap(), a);

        let b = WreathElement::new(identity(2), real(&[&[1.0, 0.0], &[1.0, 1.0]]));
        let prod = wreath_mul(&WreathElement::new(g.clone(), identity(2)), &b, &cm).unwrap();
        assert!(distance(&prod.g, &g) < 1e-15);
        assert!(distance(&prod.h, &real(&[&[2.0, -1.0], &[1.0, 0.0]])) < 1e-14);

        let inv = wreath_inv(&a, &cm).unwrap();
        let e = wreath_mul(&a, &inv, &cm).unwrap();
        assert!(distance(&e.g, &identity(2)) < 1e-14 && distance(&e.h, &identity(2)) < 1e-14);
    }

    #[test]
    fn membership_failures_name_the_component() {
        let cm = Inner::general(2);
        let a = WreathElement::new(zeros(2), identity(2));
        let err = wreath_mul(&a, &a, &cm).unwrap_err();
        assert!(matches!(err, Error::Membership { ref component, .. } if component == "left.g"));
    }

    #[test]
    fn inverse_with_trivial_action() {
        let cm = AbPair;
        let a = WreathElement::new(real(&[&[2.0]]), real(&[&[4.0]]));
        let inv = wreath_inv(&a, &cm).unwrap();
        assert!(distance(&inv.g, &real(&[&[0.5]])) < 1e-15);
        assert!(distance(&inv.h, &real(&[&[0.25]])) < 1e-15);
        let one = WreathElement::identity(&cm);
        assert_eq!(wreath_inv(&one, &cm).unwrap(), one);
    }

    #[test]
    fn adjoint_examples() {
        let cm = Inner::general(2);
        let v = WreathAlgebraElement::new(real(&[&[0.0, 1.0], &[2.0, 0.0]]), real(&[&[1.0, 0.0], &[0.0, -1.0]]));
        let ad = wreath_ad(&WreathElement::identity(&cm), &v, &cm).unwrap();
        assert!(distance(&ad.x, &v.x) < 1e-15 && distance(&ad.y, &v.y) < 1e-15);
        let ab = AbPair;
        let v1 = WreathAlgebraElement::new(real(&[&[0.3]]), real(&[&[-0.7]]));
        let ad = wreath_ad(&WreathElement::new(real(&[&[3.0]]), real(&[&[0.2]])), &v1, &ab).unwrap();
        assert!(distance(&ad.x, &v1.x) < 1e-15 && distance(&ad.y, &v1.y) < 1e-15);
    }

    #[test]
    fn compositions() {
        let cm = Inner::general(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = TwoArrow::new(cm.sample_g(&mut rng), cm.sample_h(&mut rng));
        let unit = TwoArrow::unit(a.target(&cm), &cm);
        assert_eq!(vcompose(&a, &unit, &cm).unwrap(), a);
        let back = vcompose(&a, &a.vertical_inverse(&cm), &cm).unwrap();
        assert!(distance(&back.h, &identity(2)) < 1e-13);
        let b = TwoArrow::new(a.target(&cm), cm.sample_h(&mut rng));
        let ab = vcompose(&a, &b, &cm).unwrap();
        assert!(distance(&ab.target(&cm), &b.target(&cm)) < 1e-12);
        let bad = TwoArrow::new(cm.sample_g(&mut rng), cm.sample_h(&mut rng));
        assert!(matches!(vcompose(&a, &bad, &cm), Err(Error::Composability { .. })));

        assert_eq!(hcompose(&TwoArrow::unit(identity(2), &cm), &a, &cm), a);
        let g = cm.sample_g(&mut rng);
        let wl = whisker_left(&g, &a, &cm);
        assert!(distance(&wl.source, &(&g * &a.source)) < 1e-15);
        assert!(distance(&wl.h, &cm.act(&g, &a.h)) < 1e-15);
        assert_eq!(whisker_right(&a, &g).h, a.h);
        let restored = whisker_left(&inverse(&g).unwrap(), &wl, &cm);
        assert!(distance(&restored.h, &a.h) < 1e-12);
        assert_eq!(whisker_left(&identity(2), &a, &cm).h, a.h);
        let hc = hcompose(&a, &b, &cm);
        let w = wreath_mul(&a.clone().into(), &b.clone().into(), &cm).unwrap();
        assert_eq!(TwoArrow::from(w), hc);
    }

    #[test]
    fn char_poly_of_diagonal() {
        let m = real(&[&[2.0, 0.0], &[0.0, 3.0]]);
        let p = char_poly(&m);
        assert!((p[0] - c(6.0)).norm() < 1e-14 && (p[1] - c(-5.0)).norm() < 1e-14);
    }

    #[derive(Debug)]
    struct CorruptAlpha(Inner);

    impl CrossedModule for CorruptAlpha {
        fn name(&self) -> String {
            "corrupt".into()
        }
        fn dim_g(&self) -> usize {
            self.0.n
        }
        fn dim_h(&self) -> usize {
            self.0.n
        }
        fn g_residual(&self, g: &Mat) -> f64 {
            self.0.g_residual(g)
        }
        fn h_residual(&self, h: &Mat) -> f64 {
            self.0.h_residual(h)
        }
        fn alpha(&self, h: &Mat) -> Mat {
            h.transpose()
        }
        fn alpha_lie(&self, y: &Mat) -> Mat {
            y.transpose()
        }
        fn act(&self, g: &Mat, h: &Mat) -> Mat {
            self.0.act(g, h)
        }
        fn act_lie_h(&self, g: &Mat, y: &Mat) -> Mat {
            self.0.act_lie_h(g, y)
        }
        fn act_on_group(&self, x: &Mat, h: &Mat) -> Mat {
            self.0.act_on_group(x, h)
        }
        fn act_lie(&self, x: &Mat, y: &Mat) -> Mat {
            self.0.act_lie(x, y)
        }
        fn invariant(&self, h: &Mat) -> Vec<Complex64> {
            self.0.invariant(h)
        }
        fn quotient_invariant(&self, h: &Mat) -> Vec<Complex64> {
            self.0.quotient_invariant(h)
        }
        fn sample_g(&self, rng: &mut ChaCha8Rng) -> Mat {
            self.0.sample_g(rng)
        }
        fn sample_h(&self, rng: &mut ChaCha8Rng) -> Mat {
            self.0.sample_h(rng)
        }
        fn sample_lie_g(&self, rng: &mut ChaCha8Rng) -> Mat {
            self.0.sample_lie_g(rng)
        }
        fn sample_lie_h(&self, rng: &mut ChaCha8Rng) -> Mat {
            self.0.sample_lie_h(rng)
        }
    }

    #[test]
    fn axioms_hold_for_builtins() {
        let modules: Vec<Box<dyn CrossedModule>> =
            vec![Box::new(Trivial), Box::new(AbelianGerbe), Box::new(Inner::general(2)), Box::new(Inner::orthogonal(3)), Box::new(AbPair)];
        for cm in &modules {
            let r = axioms_report(cm.as_ref(), 50, 11);
            assert!(r.max() < 1e-9, "{}: {:?}", cm.name(), r.worst());
        }
        let r = axioms_report(&Trivial, 20, 1);
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn corrupted_alpha_is_detected() {
        let r = axioms_report(&CorruptAlpha(Inner::general(2)), 20, 5);
        assert!(r.get("alpha equivariance").unwrap() > 1e-3);
    }

    proptest! {
        #[test]
        fn wreath_product_is_associative(seed in 0u64..10_000) {
            let cm = Inner::general(3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pick = || WreathElement::new(cm.sample_g(&mut rng), cm.sample_h(&mut rng));
            let (a, b, w) = (pick(), pick(), pick());
            let l = wreath_mul(&wreath_mul(&a, &b, &cm).unwrap(), &w, &cm).unwrap();
            let r = wreath_mul(&a, &wreath_mul(&b, &w, &cm).unwrap(), &cm).unwrap();
            prop_assert!(distance(&l.g, &r.g) < 1e-12 * (1.0 + norm(&l.g)));
            prop_assert!(distance(&l.h, &r.h) < 1e-12 * (1.0 + norm(&l.h)));
        }

        #[test]
        fn class_invariant_detects_conjugates(seed in 0u64..10_000) {
            let cm = Inner::general(2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (g, h) = (cm.sample_g(&mut rng), cm.sample_h(&mut rng));
            let a = cm.invariant(&h);
            let b = cm.invariant(&cm.act(&g, &h));
            let gap: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).sum();
            prop_assert!(gap < 1e-12);
        }

        #[test]
        fn unit_infinitesimal_action_vanishes(seed in 0u64..10_000) {
            let cm = Inner::general(3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = cm.sample_lie_g(&mut rng);
            prop_assert!(norm(&cm.act_on_group(&x, &cm.unit_h())) == 0.0);
        }
    }
}
